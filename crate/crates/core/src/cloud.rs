//! Point clouds and their ASCII PLY / CSV representations.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub power: Option<f64>,
    /// Radial velocity (m/s), positive when moving away from the radar.
    pub velocity: Option<f64>,
}

impl CloudPoint {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, power: None, velocity: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn from_positions(positions: impl IntoIterator<Item = [f64; 3]>) -> Self {
        Self { points: positions.into_iter().map(CloudPoint::at).collect() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.points.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p.position[k];
            }
        }
        let n = self.points.len() as f64;
        Some(c.map(|v| v / n))
    }

    /// Draw exactly `n` points: without replacement when the cloud is large enough,
    /// otherwise every point once plus uniform draws with replacement to fill up.
    /// An empty cloud stays empty.
    pub fn resample_to<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointCloud {
        let k = self.points.len();
        if k == 0 {
            return PointCloud::default();
        }
        let mut chosen: Vec<usize> = if k >= n {
            let mut idx = index::sample(rng, k, n).into_vec();
            idx.sort_unstable();
            idx
        } else {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.extend((k..n).map(|_| rng.gen_range(0..k)));
            idx
        };
        chosen.truncate(n);
        PointCloud { points: chosen.into_iter().map(|i| self.points[i]).collect() }
    }

    /// ASCII PLY with `x y z power velocity` vertex properties (missing values written as 0).
    pub fn write_ply<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        for name in ["x", "y", "z", "power", "velocity"] {
            writeln!(w, "property double {name}")?;
        }
        writeln!(w, "end_header")?;
        for p in &self.points {
            let [x, y, z] = p.position;
            writeln!(
                w,
                "{x} {y} {z} {} {}",
                p.power.unwrap_or(0.0),
                p.velocity.unwrap_or(0.0)
            )?;
        }
        Ok(())
    }

    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ply(f)
    }

    /// Read the vertex element of an ASCII PLY file. `power` and `velocity` are picked
    /// up when present; faces and other elements are ignored.
    pub fn read_ply<R: Read>(r: R) -> Result<PointCloud> {
        let ply = crate::scene::parse_ply_ascii(BufReader::new(r))?;
        let col = |name: &str| ply.vertex_properties.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::CloudParse("vertex element lacks x/y/z".into())),
        };
        let (pw, vel) = (col("power"), col("velocity"));
        let points = ply
            .vertex_rows
            .iter()
            .map(|row| CloudPoint {
                position: [row[x], row[y], row[z]],
                power: pw.map(|i| row[i]),
                velocity: vel.map(|i| row[i]),
            })
            .collect();
        Ok(PointCloud { points })
    }

    pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
        Self::read_ply(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "z", "power", "velocity"])?;
        for p in &self.points {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            wr.write_record([
                p.position[0].to_string(),
                p.position[1].to_string(),
                p.position[2].to_string(),
                opt(p.power),
                opt(p.velocity),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<PointCloud> {
        let mut rd = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<Option<f64>> {
                match rec.get(i).map(str::trim) {
                    None | Some("") => Ok(None),
                    Some(s) => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| Error::CloudParse(format!("`{s}`: {e}"))),
                }
            };
            let coord = |i: usize| {
                num(i)?.ok_or_else(|| Error::CloudParse(format!("missing coordinate column {i}")))
            };
            points.push(CloudPoint {
                position: [coord(0)?, coord(1)?, coord(2)?],
                power: num(3)?,
                velocity: num(4)?,
            });
        }
        Ok(PointCloud { points })
    }
}

/// Loads a cloud from `.ply` or `.csv` based on the extension.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => PointCloud::read_csv(std::fs::File::open(path)?),
        _ => PointCloud::load_ply(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> PointCloud {
        PointCloud {
            points: vec![
                CloudPoint { position: [0.1, 2.0, -0.3], power: Some(4.5), velocity: Some(0.05) },
                CloudPoint::at([1e-9, 1.0 / 3.0, 7.25]),
            ],
        }
    }

    #[test]
    fn ply_round_trip() {
        let mut buf = Vec::new();
        sample().write_ply(&mut buf).unwrap();
        let back = PointCloud::read_ply(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.points[0], sample().points[0]);
        assert_eq!(back.points[1].position, sample().points[1].position);
        assert_eq!(back.points[1].power, Some(0.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        assert_eq!(PointCloud::read_csv(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn resample_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pc = PointCloud::from_positions((0..10).map(|i| [i as f64, 0.0, 0.0]));
        assert_eq!(pc.resample_to(4, &mut rng).len(), 4);
        let up = pc.resample_to(25, &mut rng);
        assert_eq!(up.len(), 25);
        // every original point survives when upsampling
        for p in &pc.points {
            assert!(up.points.contains(p));
        }
        assert!(PointCloud::default().resample_to(5, &mut rng).is_empty());
    }
}
