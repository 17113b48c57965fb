//! Point-cloud quality metrics, seeded experiment sweeps and CFAR parameter search.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::dsp::CfarParams;
use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineOptions};
use crate::radar::{AntennaLayout, ChirpConfig};
use crate::scene::{self, MeshModel, Scene, SceneGenerator, UpAxis};
use crate::simulator::{simulate_frame, NoiseSpec, RawDataCube};

pub const DEFAULT_D_CLOSE: f64 = 0.10;
pub const DEFAULT_VOXEL: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub sensitivity: f64,
    pub fmi: f64,
    pub iou: f64,
    /// Detected points.
    pub k: usize,
    /// Ground-truth points.
    pub m: usize,
    pub d_close: f64,
    pub voxel: f64,
    /// Set when either cloud is empty; the affected fractions are reported as 0.
    pub empty: bool,
}

type Key = (i64, i64, i64);

fn key(p: [f64; 3], cell: f64) -> Key {
    ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64)
}

fn close(p: [f64; 3], q: [f64; 3], d2: f64) -> bool {
    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
    dx * dx + dy * dy + dz * dz < d2
}

fn check_finite(pc: &PointCloud) -> Result<()> {
    if pc.points.iter().flat_map(|p| p.position).all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite("point cloud coordinates"))
    }
}

fn check_params(d: f64, voxel: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite() && voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidParam(format!("closeness {d} and voxel {voxel} must be positive")));
    }
    Ok(())
}

/// Number of points of `a` with some point of `b` strictly closer than `d`.
fn covered(a: &[[f64; 3]], b: &[[f64; 3]], d: f64) -> usize {
    // cells slightly larger than d so rounding in the division never separates a close
    // pair by two cells
    let cell = d * (1.0 + 1e-9);
    let mut grid: HashMap<Key, Vec<[f64; 3]>> = HashMap::new();
    for &q in b {
        grid.entry(key(q, cell)).or_default().push(q);
    }
    let d2 = d * d;
    a.iter()
        .filter(|&&p| {
            let (i, j, k) = key(p, cell);
            (-1..=1).any(|di| {
                (-1..=1).any(|dj| {
                    (-1..=1).any(|dk| {
                        grid.get(&(i + di, j + dj, k + dk)).is_some_and(|v| v.iter().any(|&q| close(p, q, d2)))
                    })
                })
            })
        })
        .count()
}

fn voxel_iou(a: &[[f64; 3]], b: &[[f64; 3]], voxel: f64) -> f64 {
    let va: HashSet<Key> = a.iter().map(|&p| key(p, voxel)).collect();
    let vb: HashSet<Key> = b.iter().map(|&p| key(p, voxel)).collect();
    let inter = va.intersection(&vb).count();
    let union = va.len() + vb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn report(k: usize, m: usize, hit_k: usize, hit_m: usize, iou: f64, d: f64, voxel: f64) -> MetricsReport {
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    let (precision, sensitivity) = (frac(hit_k, k), frac(hit_m, m));
    MetricsReport {
        precision,
        sensitivity,
        fmi: (precision * sensitivity).sqrt(),
        iou,
        k,
        m,
        d_close: d,
        voxel,
        empty: k == 0 || m == 0,
    }
}

/// Precision, sensitivity, FMI and voxel IoU of a detected cloud `pc_k` against the
/// ground truth `pc_m`. Closeness is strict (`< d`); voxels are anchored at the origin.
pub fn metrics(pc_k: &PointCloud, pc_m: &PointCloud, d: f64, voxel: f64) -> Result<MetricsReport> {
    check_params(d, voxel)?;
    check_finite(pc_k)?;
    check_finite(pc_m)?;
    let (a, b) = (pc_k.positions(), pc_m.positions());
    let iou = voxel_iou(&a, &b, voxel);
    Ok(report(a.len(), b.len(), covered(&a, &b, d), covered(&b, &a, d), iou, d, voxel))
}

/// O(K·M) reference implementation of [`metrics`].
pub fn metrics_brute_force(pc_k: &PointCloud, pc_m: &PointCloud, d: f64, voxel: f64) -> Result<MetricsReport> {
    check_params(d, voxel)?;
    check_finite(pc_k)?;
    check_finite(pc_m)?;
    let (a, b) = (pc_k.positions(), pc_m.positions());
    let d2 = d * d;
    let hit = |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().filter(|&&p| y.iter().any(|&q| close(p, q, d2))).count();
    let vox = |x: &[[f64; 3]]| -> Vec<Key> {
        let mut v: Vec<Key> = x.iter().map(|&p| key(p, voxel)).collect();
        v.sort();
        v.dedup();
        v
    };
    let (va, vb) = (vox(&a), vox(&b));
    let inter = va.iter().filter(|k| vb.binary_search(k).is_ok()).count();
    let union = va.len() + vb.len() - inter;
    let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
    Ok(report(a.len(), b.len(), hit(&a, &b), hit(&b, &a), iou, d, voxel))
}

/// A mesh file sampled and placed like the synthetic generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshScene {
    pub path: PathBuf,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default)]
    pub up_axis: UpAxis,
}

fn default_points() -> usize {
    512
}

fn default_range() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Generator(SceneGenerator),
    Mesh(MeshScene),
}

impl SceneSource {
    pub fn id(&self, index: usize) -> String {
        match self {
            SceneSource::Generator(_) => format!("scene{index}"),
            SceneSource::Mesh(m) => m
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("scene{index}")),
        }
    }
}

/// Loaded form of a scene source; meshes are read once per experiment.
enum Prepared {
    Generator(SceneGenerator),
    Mesh(MeshModel, MeshScene),
}

impl Prepared {
    fn load(src: &SceneSource) -> Result<Self> {
        Ok(match src {
            SceneSource::Generator(g) => Prepared::Generator(g.clone()),
            SceneSource::Mesh(m) => Prepared::Mesh(scene::load_mesh(&m.path)?.to_radar_frame(m.up_axis), m.clone()),
        })
    }

    fn realize(&self, seed: u64, speed: f64) -> Result<Scene> {
        let v = [0.0, speed, 0.0];
        match self {
            Prepared::Generator(g) => scene::synth_scene(&g.with_seed(seed).with_velocity(v)),
            Prepared::Mesh(mesh, spec) => {
                let pc = scene::sample_surface(mesh, spec.points, seed)?;
                scene::place_scene(&pc, spec.range, v)
            }
        }
    }
}

/// Scene for one `(seed, speed)` draw, exactly as the experiment runner builds it.
/// Speed is radial, away from the radar.
pub fn realize_scene(src: &SceneSource, seed: u64, speed: f64) -> Result<Scene> {
    Prepared::load(src)?.realize(seed, speed)
}

/// Factor axes; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    /// Radial speed away from the radar (m/s).
    pub velocity: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub layout: Vec<String>,
    pub chirps_per_frame: Vec<usize>,
    pub samples_per_chirp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenes: Vec<SceneSource>,
    pub radar: ChirpConfig,
    pub layout: String,
    /// `None` simulates noiseless frames.
    pub snr_db: Option<f64>,
    pub velocity: f64,
    pub pipelines: Vec<PipelineOptions>,
    pub sweep: SweepAxes,
    pub repeats: usize,
    pub seed: u64,
    pub d_close: f64,
    pub voxel: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenes: vec![SceneSource::Generator(SceneGenerator::human_blob(0))],
            radar: ChirpConfig::baseline(),
            layout: "square4".into(),
            snr_db: Some(30.0),
            velocity: 0.05,
            pipelines: vec![PipelineOptions::default()],
            sweep: SweepAxes::default(),
            repeats: 10,
            seed: 0,
            d_close: DEFAULT_D_CLOSE,
            voxel: DEFAULT_VOXEL,
        }
    }
}

/// One point of the physical sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub velocity: f64,
    pub snr_db: Option<f64>,
    pub layout: String,
    pub chirps_per_frame: usize,
    pub samples_per_chirp: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidParam("repeats must be at least 1".into()));
        }
        if self.scenes.is_empty() || self.pipelines.is_empty() {
            return Err(Error::InvalidParam("experiment needs at least one scene and one pipeline".into()));
        }
        check_params(self.d_close, self.voxel)?;
        self.radar.validate()?;
        for p in &self.pipelines {
            p.validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, velocity outermost.
    pub fn conditions(&self) -> Vec<Condition> {
        let or = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let snrs: Vec<Option<f64>> =
            if self.sweep.snr_db.is_empty() { vec![self.snr_db] } else { self.sweep.snr_db.iter().map(|&s| Some(s)).collect() };
        let layouts = if self.sweep.layout.is_empty() { vec![self.layout.clone()] } else { self.sweep.layout.clone() };
        let chirps = if self.sweep.chirps_per_frame.is_empty() {
            vec![self.radar.chirps_per_frame]
        } else {
            self.sweep.chirps_per_frame.clone()
        };
        let samples = if self.sweep.samples_per_chirp.is_empty() {
            vec![self.radar.samples_per_chirp]
        } else {
            self.sweep.samples_per_chirp.clone()
        };
        let mut out = Vec::new();
        for &velocity in &or(&self.sweep.velocity, self.velocity) {
            for &snr_db in &snrs {
                for layout in &layouts {
                    for &c in &chirps {
                        for &s in &samples {
                            out.push(Condition {
                                velocity,
                                snr_db,
                                layout: layout.clone(),
                                chirps_per_frame: c,
                                samples_per_chirp: s,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Radar configuration for a condition; the frame is stretched to hold the chirps.
    pub fn radar_for(&self, c: &Condition) -> ChirpConfig {
        let mut cfg = self.radar;
        cfg.chirps_per_frame = c.chirps_per_frame;
        cfg.samples_per_chirp = c.samples_per_chirp;
        cfg.frame_duration = cfg.frame_duration.max(c.chirps_per_frame as f64 * cfg.chirp_interval);
        cfg
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (scene, repeat) draw. Conditions and pipelines share it, so every factor
/// level sees the same scene samples and noise streams.
pub fn derive_seed(base: u64, scene: usize, repeat: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ scene as u64) ^ repeat as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene: String,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(v: &[f64]) -> Stat {
        let n = v.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Stat { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub pipeline: String,
    pub options: PipelineOptions,
    pub condition: Condition,
    pub fmi: Stat,
    pub iou: Stat,
    pub precision: Stat,
    pub sensitivity: Stat,
    pub points: Stat,
    pub samples: Vec<Sample>,
    pub errors: Vec<String>,
    /// Mean wall-clock seconds per reconstruction; not serialized so reports stay
    /// reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub repeats: usize,
    pub seed: u64,
    pub d_close: f64,
    pub voxel: f64,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn error_count(&self) -> usize {
        self.cells.iter().map(|c| c.errors.len()).sum()
    }

    pub fn cell(&self, label: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.pipeline == label)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One CSV row per cell with mean/sd of every metric.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "pipeline", "velocity", "snr_db", "layout", "chirps", "samples", "n", "fmi_mean", "fmi_sd", "iou_mean",
            "iou_sd", "precision_mean", "sensitivity_mean", "points_mean", "errors",
        ])?;
        for c in &self.cells {
            let f = |x: f64| format!("{x:.6}");
            wr.write_record([
                c.pipeline.clone(),
                f(c.condition.velocity),
                c.condition.snr_db.map(f).unwrap_or_else(|| "inf".into()),
                c.condition.layout.clone(),
                c.condition.chirps_per_frame.to_string(),
                c.condition.samples_per_chirp.to_string(),
                c.fmi.n.to_string(),
                f(c.fmi.mean),
                f(c.fmi.sd),
                f(c.iou.mean),
                f(c.iou.sd),
                f(c.precision.mean),
                f(c.sensitivity.mean),
                f(c.points.mean),
                c.errors.len().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Pivot in the DPC-by-algorithm layout: one row per DPC and condition, one column per
    /// estimator/search pair, cells `mean ± sd` in percent for FMI and IoU.
    pub fn write_table<W: Write>(&self, w: W) -> Result<()> {
        let mut cols: Vec<String> = Vec::new();
        let mut rows: Vec<String> = Vec::new();
        let mut cells: HashMap<(String, String), String> = HashMap::new();
        let varied = |f: &dyn Fn(&Condition) -> String| {
            let first = self.cells.first().map(|c| f(&c.condition));
            self.cells.iter().any(|c| Some(f(&c.condition)) != first)
        };
        let parts: Vec<(&str, Box<dyn Fn(&Condition) -> String>)> = vec![
            ("v", Box::new(|c: &Condition| format!("{}", c.velocity))),
            ("snr", Box::new(|c: &Condition| c.snr_db.map(|s| s.to_string()).unwrap_or_else(|| "inf".into()))),
            ("layout", Box::new(|c: &Condition| c.layout.clone())),
            ("chirps", Box::new(|c: &Condition| c.chirps_per_frame.to_string())),
            ("samples", Box::new(|c: &Condition| c.samples_per_chirp.to_string())),
        ];
        let shown: Vec<usize> = (0..parts.len()).filter(|&i| varied(parts[i].1.as_ref())).collect();
        for c in &self.cells {
            let mut row = format!("DPC{}", c.options.dpc);
            for &i in &shown {
                row.push_str(&format!(" {}={}", parts[i].0, (parts[i].1)(&c.condition)));
            }
            for metric in ["FMI", "IoU"] {
                let col = format!("{}-{} {}", c.options.estimator.label(), c.options.search.label(), metric);
                let s = if metric == "FMI" { c.fmi } else { c.iou };
                if !cols.contains(&col) {
                    cols.push(col.clone());
                }
                cells.insert((row.clone(), col), format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.sd));
            }
            if !rows.contains(&row) {
                rows.push(row);
            }
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(std::iter::once("").chain(cols.iter().map(String::as_str)))?;
        for r in &rows {
            let vals = cols.iter().map(|c| cells.get(&(r.clone(), c.clone())).cloned().unwrap_or_else(|| "n/a".into()));
            wr.write_record(std::iter::once(r.clone()).chain(vals))?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Outcome {
    condition: usize,
    scene: usize,
    repeat: usize,
    seed: u64,
    runs: Vec<std::result::Result<(MetricsReport, f64), String>>,
}

/// Simulate one frame per (condition, scene, repeat), reconstruct it with every pipeline
/// and score it. Stage errors are recorded per cell and do not stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared: Vec<Prepared> = cfg.scenes.iter().map(Prepared::load).collect::<Result<_>>()?;
    let conditions = cfg.conditions();
    let jobs: Vec<(usize, usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..cfg.scenes.len()).flat_map(move |s| (0..cfg.repeats).map(move |r| (c, s, r))))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(ci, si, r)| {
            let seed = derive_seed(cfg.seed, si, r);
            let cond = &conditions[ci];
            let frame = (|| -> Result<(RawDataCube, PointCloud)> {
                let radar = cfg.radar_for(cond);
                let layout = AntennaLayout::preset(&cond.layout)?;
                let scene = prepared[si].realize(seed, cond.velocity)?;
                let noise = NoiseSpec { snr_db: cond.snr_db, ..Default::default() };
                let cube = simulate_frame(&scene, &radar, &layout, &noise, seed)?;
                Ok((cube, scene.ground_truth(&radar)))
            })();
            let runs = match frame {
                Err(e) => vec![Err(e.to_string()); cfg.pipelines.len()],
                Ok((cube, truth)) => cfg
                    .pipelines
                    .iter()
                    .map(|p| {
                        let t = Instant::now();
                        let opts = PipelineOptions { seed: splitmix64(seed ^ p.seed), ..p.clone() };
                        let pc = pipeline::run(&cube, &opts).map_err(|e| e.to_string())?;
                        let secs = t.elapsed().as_secs_f64();
                        let m = metrics(&pc, &truth, cfg.d_close, cfg.voxel).map_err(|e| e.to_string())?;
                        log::debug!("{} cond {ci} scene {si} repeat {r}: fmi {:.3} in {secs:.2}s", p.label(), m.fmi);
                        Ok((m, secs))
                    })
                    .collect(),
            };
            Outcome { condition: ci, scene: si, repeat: r, seed, runs }
        })
        .collect();

    let mut cells = Vec::new();
    for (ci, cond) in conditions.iter().enumerate() {
        for (pi, p) in cfg.pipelines.iter().enumerate() {
            let mut samples = Vec::new();
            let mut errors = Vec::new();
            let mut secs = Vec::new();
            for o in outcomes.iter().filter(|o| o.condition == ci) {
                let scene = cfg.scenes[o.scene].id(o.scene);
                match &o.runs[pi] {
                    Ok((m, s)) => {
                        samples.push(Sample { scene, repeat: o.repeat, seed: o.seed, metrics: *m });
                        secs.push(*s);
                    }
                    Err(e) => errors.push(format!("{scene} repeat {}: {e}", o.repeat)),
                }
            }
            let stat = |f: fn(&MetricsReport) -> f64| Stat::of(&samples.iter().map(|s| f(&s.metrics)).collect::<Vec<_>>());
            cells.push(CellReport {
                pipeline: p.label(),
                options: p.clone(),
                condition: cond.clone(),
                fmi: stat(|m| m.fmi),
                iou: stat(|m| m.iou),
                precision: stat(|m| m.precision),
                sensitivity: stat(|m| m.sensitivity),
                points: stat(|m| m.k as f64),
                samples,
                errors,
                runtime_s: Stat::of(&secs).mean,
            });
        }
    }
    Ok(ExperimentReport { repeats: cfg.repeats, seed: cfg.seed, d_close: cfg.d_close, voxel: cfg.voxel, cells })
}

/// Candidate CFAR parameters as the product of per-field value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfarGrid {
    pub train_range: Vec<usize>,
    pub train_doppler: Vec<usize>,
    pub guard_range: Vec<usize>,
    pub guard_doppler: Vec<usize>,
    pub scale: Vec<f64>,
}

impl CfarGrid {
    pub fn candidates(&self) -> Vec<CfarParams> {
        let mut out = Vec::new();
        for &train_range in &self.train_range {
            for &train_doppler in &self.train_doppler {
                for &guard_range in &self.guard_range {
                    for &guard_doppler in &self.guard_doppler {
                        for &scale in &self.scale {
                            out.push(CfarParams { train_range, train_doppler, guard_range, guard_doppler, scale });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfarScore {
    pub params: CfarParams,
    pub mean_fmi: f64,
    pub mean_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfarSearchResult {
    pub best: CfarParams,
    pub scores: Vec<CfarScore>,
}

/// Mean FMI of one candidate over a training set of (cube, ground truth) frames.
pub fn score_cfar(
    train: &[(RawDataCube, PointCloud)],
    opts: &PipelineOptions,
    params: CfarParams,
    d: f64,
    voxel: f64,
) -> Result<CfarScore> {
    let o = PipelineOptions { cfar: params, ..opts.clone() };
    let (mut fmi, mut pts) = (0.0, 0.0);
    for (cube, truth) in train {
        let pc = pipeline::run(cube, &o)?;
        fmi += metrics(&pc, truth, d, voxel)?.fmi;
        pts += pc.len() as f64;
    }
    let n = train.len() as f64;
    Ok(CfarScore { params, mean_fmi: fmi / n, mean_points: pts / n })
}

/// Exhaustive grid search maximizing mean FMI; ties go to the candidate with fewer
/// detections, then to the earlier one.
pub fn cfar_search(
    train: &[(RawDataCube, PointCloud)],
    opts: &PipelineOptions,
    candidates: &[CfarParams],
    d: f64,
    voxel: f64,
) -> Result<CfarSearchResult> {
    if train.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidParam("CFAR search needs training frames and candidates".into()));
    }
    let scores: Vec<CfarScore> =
        candidates.par_iter().map(|&c| score_cfar(train, opts, c, d, voxel)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        if s.mean_fmi > b.mean_fmi || (s.mean_fmi == b.mean_fmi && s.mean_points < b.mean_points) {
            best = i;
        }
    }
    Ok(CfarSearchResult { best: scores[best].params, scores })
}
