//! Ground-truth scenes: mesh ingestion, uniform surface sampling, placement in front of
//! the radar, rigid constant-velocity motion and synthetic scene generators.
//!
//! The radar frame is x to the right, y along boresight, z up, radar at the origin.

use std::io::BufRead;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshModel {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

/// Which mesh axis points up. Radar-frame scenes are z-up; many scanned-body meshes are
/// y-up with the subject facing +z.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpAxis {
    Y,
    #[default]
    Z,
}

impl MeshModel {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidParam(format!(
                    "triangle {i} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Re-express a y-up mesh (subject facing +z) in the z-up radar frame with the
    /// subject facing the radar (-y).
    pub fn to_radar_frame(&self, up: UpAxis) -> MeshModel {
        match up {
            UpAxis::Z => self.clone(),
            UpAxis::Y => MeshModel {
                vertices: self.vertices.iter().map(|v| [v[0], -v[2], v[1]]).collect(),
                triangles: self.triangles.clone(),
            },
        }
    }

    /// Keep only triangles whose (counter-clockwise) normal has a positive component along
    /// `toward`. Used to drop back-facing surface before sampling.
    pub fn facing(&self, toward: Vec3) -> Result<MeshModel> {
        let triangles: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .copied()
            .filter(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                let n = cross(sub(b, a), sub(c, a));
                n[0] * toward[0] + n[1] * toward[1] + n[2] * toward[2] > 0.0
            })
            .collect();
        MeshModel::new(self.vertices.clone(), triangles)
    }
}

/// Parsed contents of an ASCII PLY file.
#[derive(Debug, Default)]
pub(crate) struct PlyData {
    pub vertex_properties: Vec<String>,
    pub vertex_rows: Vec<Vec<f64>>,
    pub faces: Vec<Vec<usize>>,
}

struct PlyElement {
    name: String,
    count: usize,
    scalar_props: Vec<String>,
    has_list: bool,
}

pub(crate) fn parse_ply_ascii<R: BufRead>(reader: R) -> Result<PlyData> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let err = |line: usize, msg: String| Error::Parse { line, msg };

    let (n, magic) = next("`ply` magic")?;
    if magic.trim() != "ply" {
        return Err(err(n, "missing `ply` magic".into()));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (n, line) = next("header line")?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::Unsupported(format!("PLY format `{other}` (only ascii)")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(n, format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    scalar_props: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", _, _, _name] => {
                let el = elements.last_mut().ok_or_else(|| err(n, "property before element".into()))?;
                el.has_list = true;
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err(n, "property before element".into()))?;
                el.scalar_props.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(err(n, format!("unrecognised header line `{line}`"))),
        }
    }

    let mut out = PlyData::default();
    for el in &elements {
        if el.name == "vertex" {
            out.vertex_properties = el.scalar_props.clone();
        }
        for _ in 0..el.count {
            let (n, line) = next(&format!("{} entry", el.name))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    if toks.len() < el.scalar_props.len() {
                        return Err(err(n, format!(
                            "vertex has {} values, expected {}",
                            toks.len(),
                            el.scalar_props.len()
                        )));
                    }
                    let row = toks[..el.scalar_props.len()]
                        .iter()
                        .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("bad number `{t}`"))))
                        .collect::<Result<Vec<f64>>>()?;
                    out.vertex_rows.push(row);
                }
                "face" if el.has_list => {
                    let count: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(n, "face without vertex count".into()))?;
                    if toks.len() < count + 1 {
                        return Err(err(n, format!("face lists {count} vertices but has {}", toks.len() - 1)));
                    }
                    let idx = toks[1..=count]
                        .iter()
                        .map(|t| t.parse::<usize>().map_err(|_| err(n, format!("bad index `{t}`"))))
                        .collect::<Result<Vec<usize>>>()?;
                    out.faces.push(idx);
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

fn fan_triangulate(faces: &[Vec<usize>]) -> Vec<[usize; 3]> {
    faces
        .iter()
        .flat_map(|f| (1..f.len().saturating_sub(1)).map(move |k| [f[0], f[k], f[k + 1]]))
        .collect()
}

pub fn parse_ply_mesh<R: BufRead>(reader: R) -> Result<MeshModel> {
    let ply = parse_ply_ascii(reader)?;
    let col = |name: &str| ply.vertex_properties.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Parse { line: 0, msg: "vertex element lacks x/y/z".into() }),
    };
    let vertices = ply.vertex_rows.iter().map(|r| [r[x], r[y], r[z]]).collect();
    MeshModel::new(vertices, fan_triangulate(&ply.faces))
}

pub fn parse_obj_mesh<R: BufRead>(mut reader: R) -> Result<MeshModel> {
    let opts = tobj::LoadOptions { triangulate: true, single_index: true, ..Default::default() };
    let (models, _) = tobj::load_obj_buf(&mut reader, &opts, |_| {
        Err(tobj::LoadError::OpenFileFailed)
    })
    .map_err(|e| Error::Parse { line: 0, msg: format!("OBJ: {e}") })?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in models {
        let base = vertices.len();
        vertices.extend(
            m.mesh.positions.chunks_exact(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]),
        );
        triangles.extend(m.mesh.indices.chunks_exact(3).map(|t| {
            [base + t[0] as usize, base + t[1] as usize, base + t[2] as usize]
        }));
    }
    MeshModel::new(vertices, triangles)
}

/// Load an ASCII PLY or OBJ mesh (chosen by extension).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<MeshModel> {
    let path = path.as_ref();
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => parse_ply_mesh(reader),
        Some("obj") => parse_obj_mesh(reader),
        other => Err(Error::Unsupported(format!("mesh extension {other:?} (expected ply or obj)"))),
    }
}

/// Uniform surface sampling: area-weighted triangle choice, then a uniform barycentric point.
pub fn sample_surface(mesh: &MeshModel, m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t)).collect();
    if !(areas.iter().sum::<f64>() > 0.0) {
        return Err(Error::ZeroArea);
    }
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::ZeroArea)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..m).map(|_| {
        let [a, b, c] = mesh.triangles[pick.sample(&mut rng)].map(|i| mesh.vertices[i]);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        [0, 1, 2].map(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]))
    });
    Ok(PointCloud::from_positions(points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub position: Vec3,
    pub reflectivity: f64,
}

/// A rigid set of point reflectors moving at one constant velocity. `points` hold the
/// positions at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<ScenePoint>,
    pub velocity: Vec3,
}

impl Scene {
    pub fn new(points: Vec<ScenePoint>, velocity: Vec3) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParam("scene needs at least one point".into()));
        }
        if points.iter().any(|p| !(p.reflectivity >= 0.0 && p.reflectivity.is_finite())) {
            return Err(Error::InvalidParam("reflectivity must be finite and non-negative".into()));
        }
        if points.iter().flat_map(|p| p.position).chain(velocity).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("scene geometry"));
        }
        Ok(Self { points, velocity })
    }

    /// Unit-reflectivity scene from a cloud.
    pub fn from_cloud(pc: &PointCloud, velocity: Vec3) -> Result<Self> {
        let pts = pc.points.iter().map(|p| ScenePoint { position: p.position, reflectivity: 1.0 });
        Self::new(pts.collect(), velocity)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions_at(&self, t: f64) -> Vec<Vec3> {
        let v = self.velocity;
        self.points
            .iter()
            .map(|p| [p.position[0] + v[0] * t, p.position[1] + v[1] * t, p.position[2] + v[2] * t])
            .collect()
    }

    /// Ground truth for a frame: positions at the acquisition midpoint.
    pub fn ground_truth(&self, cfg: &crate::radar::ChirpConfig) -> PointCloud {
        PointCloud::from_positions(self.positions_at(cfg.frame_midpoint()))
    }
}

/// Centre a cloud on boresight: mean x and vertical mid-extent at zero, mean depth at `range`.
pub fn place_scene(pc: &PointCloud, range: f64, velocity: Vec3) -> Result<Scene> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidParam(format!("placement range {range} must be positive")));
    }
    let c = pc.centroid().ok_or_else(|| Error::InvalidParam("empty cloud".into()))?;
    let (zmin, zmax) = pc
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.position[2]), hi.max(p.position[2]))
        });
    let shift = [-c[0], range - c[1], -(zmin + zmax) / 2.0];
    let moved = PointCloud::from_positions(
        pc.points.iter().map(|p| [0, 1, 2].map(|k| p.position[k] + shift[k])),
    );
    Scene::from_cloud(&moved, velocity)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAxis {
    #[default]
    Azimuth,
    Elevation,
}

/// Synthetic ground-truth scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneGenerator {
    SingleReflector {
        position: Vec3,
        #[serde(default)]
        velocity: Vec3,
        #[serde(default = "one")]
        reflectivity: f64,
    },
    /// Two reflectors at `range` on boresight, `separation` apart along the chosen axis.
    ReflectorPair {
        range: f64,
        separation: f64,
        #[serde(default)]
        axis: PairAxis,
        #[serde(default)]
        velocity: Vec3,
    },
    /// Points uniform (by area) on an ellipsoid surface with full extents `size`
    /// (x width, y depth, z height), centred on boresight at `range`.
    Ellipsoid {
        size: Vec3,
        points: usize,
        range: f64,
        #[serde(default)]
        velocity: Vec3,
        #[serde(default)]
        seed: u64,
    },
    /// Regular lattice of `counts` points with `spacing`, centred on boresight at `range`.
    Grid {
        counts: [usize; 3],
        spacing: Vec3,
        range: f64,
        #[serde(default)]
        velocity: Vec3,
    },
}

fn one() -> f64 {
    1.0
}

impl SceneGenerator {
    /// Human-sized ellipsoid shell: 0.5 m wide, 0.3 m deep, 1.7 m tall, 512 points at 2 m,
    /// receding at 0.05 m/s.
    pub fn human_blob(seed: u64) -> Self {
        SceneGenerator::Ellipsoid {
            size: [0.5, 0.3, 1.7],
            points: 512,
            range: 2.0,
            velocity: [0.0, 0.05, 0.0],
            seed,
        }
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut g = self.clone();
        if let SceneGenerator::Ellipsoid { seed, .. } = &mut g {
            *seed = new_seed;
        }
        g
    }

    pub fn with_velocity(&self, v: Vec3) -> Self {
        let mut g = self.clone();
        match &mut g {
            SceneGenerator::SingleReflector { velocity, .. }
            | SceneGenerator::ReflectorPair { velocity, .. }
            | SceneGenerator::Ellipsoid { velocity, .. }
            | SceneGenerator::Grid { velocity, .. } => *velocity = v,
        }
        g
    }

    /// Parse a generator from its JSON description; unknown `kind`s are rejected.
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| {
            if e.to_string().contains("unknown variant") {
                Error::UnknownGenerator(e.to_string())
            } else {
                Error::Json(e)
            }
        })
    }
}

pub fn synth_scene(gen: &SceneGenerator) -> Result<Scene> {
    match *gen {
        SceneGenerator::SingleReflector { position, velocity, reflectivity } => {
            Scene::new(vec![ScenePoint { position, reflectivity }], velocity)
        }
        SceneGenerator::ReflectorPair { range, separation, axis, velocity } => {
            let h = separation / 2.0;
            let offset = |s: f64| match axis {
                PairAxis::Azimuth => [s, range, 0.0],
                PairAxis::Elevation => [0.0, range, s],
            };
            Scene::new(
                vec![
                    ScenePoint { position: offset(-h), reflectivity: 1.0 },
                    ScenePoint { position: offset(h), reflectivity: 1.0 },
                ],
                velocity,
            )
        }
        SceneGenerator::Ellipsoid { size, points, range, velocity, seed } => {
            let semi = size.map(|s| s / 2.0);
            if semi.iter().any(|&s| !(s > 0.0)) || points == 0 {
                return Err(Error::InvalidParam("ellipsoid needs positive size and points".into()));
            }
            let pc = sample_ellipsoid(semi, points, seed);
            let shifted = pc.positions().into_iter().map(|p| [p[0], p[1] + range, p[2]]);
            Scene::from_cloud(&PointCloud::from_positions(shifted), velocity)
        }
        SceneGenerator::Grid { counts, spacing, range, velocity } => {
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::InvalidParam("grid counts must be positive".into()));
            }
            let centre = |k: usize, i: usize| (i as f64 - (counts[k] - 1) as f64 / 2.0) * spacing[k];
            let mut pts = Vec::new();
            for i in 0..counts[0] {
                for j in 0..counts[1] {
                    for l in 0..counts[2] {
                        pts.push(ScenePoint {
                            position: [centre(0, i), range + centre(1, j), centre(2, l)],
                            reflectivity: 1.0,
                        });
                    }
                }
            }
            Scene::new(pts, velocity)
        }
    }
}

/// Area-uniform points on an ellipsoid with semi-axes `semi`, centred at the origin.
///
/// Uniform sphere directions are mapped onto the ellipsoid and accepted with
/// probability proportional to the local area stretch of that map.
pub fn sample_ellipsoid(semi: Vec3, m: usize, seed: u64) -> PointCloud {
    let [a, b, c] = semi;
    let g_max = (b * c).max(a * c).max(a * b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let u: Vec3 = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
        let n = norm(u);
        if n == 0.0 {
            continue;
        }
        let u = u.map(|x: f64| x / n);
        let g = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2)).sqrt();
        if rng.gen::<f64>() * g_max <= g {
            out.push([a * u[0], b * u[1], c * u[2]]);
        }
    }
    PointCloud::from_positions(out)
}

/// Closed triangulated ellipsoid (UV sphere), outward-facing counter-clockwise triangles.
pub fn ellipsoid_mesh(semi: Vec3, rings: usize, segments: usize) -> MeshModel {
    let rings = rings.max(2);
    let segments = segments.max(3);
    let mut vertices = vec![[0.0, 0.0, semi[2]]];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push([
                semi[0] * theta.sin() * phi.cos(),
                semi[1] * theta.sin() * phi.sin(),
                semi[2] * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -semi[2]]);
    let bottom = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s), ring(1, s + 1)]);
        triangles.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    MeshModel { vertices, triangles }
}

/// Write a mesh as ASCII PLY.
pub fn write_mesh_ply<W: std::io::Write>(mesh: &MeshModel, mut w: W) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    writeln!(w, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.triangles.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}
