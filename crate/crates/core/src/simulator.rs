//! Raw IF-signal synthesis for one frame.
//!
//! Each receiver/chirp lane is the sum over reflectors of a complex tone
//! `rho / d^4 * exp(j(2 pi S tau t + 2 pi f0 tau))`, with positions frozen at the chirp
//! start. Tones are generated by phasor recurrence and accumulated in `f64` before the
//! cube is stored as `Complex32`.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar::{AntennaLayout, ChirpConfig, SPEED_OF_LIGHT};
use crate::scene::{Scene, Vec3};

/// Default cap on cube size in complex samples (1 GiB of `Complex32`).
pub const DEFAULT_SAMPLE_CAP: usize = 1 << 27;

const CUBE_MAGIC: &[u8; 8] = b"MMWCUBE1";
const CUBE_VERSION: u32 = 1;

/// Round-trip time of flight transmitter -> point -> receiver.
pub fn tof(point: Vec3, rx: Vec3, tx: Vec3) -> f64 {
    (dist(point, tx) + dist(point, rx)) / SPEED_OF_LIGHT
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Which signal power the requested SNR is relative to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "power")]
pub enum SnrReference {
    /// Mean |x|^2 of the noise-free cube over every sample and receiver.
    #[default]
    CubeMeanPower,
    /// A fixed signal power, so the noise level does not depend on the scene.
    FixedSignalPower(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Target SNR in dB; `None` means no noise at all.
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub reference: SnrReference,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { snr_db: None, reference: SnrReference::CubeMeanPower }
    }

    pub fn snr(db: f64) -> Self {
        Self { snr_db: Some(db), reference: SnrReference::CubeMeanPower }
    }

    fn validate(&self) -> Result<()> {
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::InvalidParam(format!("snr_db {s} must be finite (omit it for no noise)")));
            }
        }
        if let SnrReference::FixedSignalPower(p) = self.reference {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidParam(format!("reference power {p} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One frame of complex IF samples, receiver-major, then chirp, then sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataCube {
    pub data: Vec<Complex32>,
    pub n_rx: usize,
    pub n_chirps: usize,
    pub n_samples: usize,
    pub cfg: ChirpConfig,
    pub layout: AntennaLayout,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl RawDataCube {
    pub fn new(data: Vec<Complex32>, cfg: ChirpConfig, layout: AntennaLayout) -> Result<Self> {
        let (n_rx, n_chirps, n_samples) = (layout.len(), cfg.chirps_per_frame, cfg.samples_per_chirp);
        if data.len() != n_rx * n_chirps * n_samples {
            return Err(Error::DimensionMismatch { expected: n_rx * n_chirps * n_samples, got: data.len() });
        }
        Ok(Self { data, n_rx, n_chirps, n_samples, cfg, layout, snr_db: None, seed: 0 })
    }

    pub fn index(&self, rx: usize, chirp: usize, sample: usize) -> usize {
        (rx * self.n_chirps + chirp) * self.n_samples + sample
    }

    pub fn get(&self, rx: usize, chirp: usize, sample: usize) -> Complex32 {
        self.data[self.index(rx, chirp, sample)]
    }

    pub fn chirp(&self, rx: usize, chirp: usize) -> &[Complex32] {
        let s = self.index(rx, chirp, 0);
        &self.data[s..s + self.n_samples]
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr() as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Binary cube file. The layout is not stored; pass it back to [`RawDataCube::read`].
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CUBE_MAGIC)?;
        w.write_all(&CUBE_VERSION.to_le_bytes())?;
        for n in [self.n_rx, self.n_chirps, self.n_samples] {
            let n = u32::try_from(n).map_err(|_| Error::InvalidParam("cube dimension exceeds u32".into()))?;
            w.write_all(&n.to_le_bytes())?;
        }
        for v in [self.cfg.f0, self.cfg.slope, self.cfg.chirp_interval, self.cfg.adc_rate] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.re.to_le_bytes());
            buf.extend_from_slice(&x.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Read a cube file. Ramp duration and frame length are not stored, so they are
    /// reconstructed as `N_s / adc_rate` and `N_c * T_c`.
    pub fn read<R: Read>(mut r: R, layout: AntennaLayout) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::CorruptCube("truncated header".into()))?;
        if &magic != CUBE_MAGIC {
            return Err(Error::CorruptCube("bad magic".into()));
        }
        let mut u = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u).map_err(|_| Error::CorruptCube("truncated header".into()))?;
            Ok(u32::from_le_bytes(u))
        };
        let version = read_u32(&mut r)?;
        if version != CUBE_VERSION {
            return Err(Error::CorruptCube(format!("unsupported version {version}")));
        }
        let n_rx = read_u32(&mut r)? as usize;
        let n_c = read_u32(&mut r)? as usize;
        let n_s = read_u32(&mut r)? as usize;
        let mut f = [0.0f64; 4];
        for v in f.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::CorruptCube("truncated header".into()))?;
            *v = f64::from_le_bytes(b);
        }
        if layout.len() != n_rx {
            return Err(Error::DimensionMismatch { expected: n_rx, got: layout.len() });
        }
        let total = n_rx
            .checked_mul(n_c)
            .and_then(|x| x.checked_mul(n_s))
            .ok_or_else(|| Error::CorruptCube("dimensions overflow".into()))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != total * 8 {
            return Err(Error::CorruptCube(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                total * 8
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                )
            })
            .collect();
        let [f0, slope, chirp_interval, adc_rate] = f;
        let cfg = ChirpConfig {
            f0,
            slope,
            chirp_duration: n_s as f64 / adc_rate,
            adc_rate,
            samples_per_chirp: n_s,
            chirps_per_frame: n_c,
            chirp_interval,
            frame_duration: n_c as f64 * chirp_interval,
        };
        RawDataCube::new(data, cfg, layout)
    }

    pub fn load(path: impl AsRef<Path>, layout: AntennaLayout) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?), layout)
    }
}

pub fn simulate_frame(
    scene: &Scene,
    cfg: &ChirpConfig,
    layout: &AntennaLayout,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<RawDataCube> {
    simulate_frame_capped(scene, cfg, layout, noise, seed, DEFAULT_SAMPLE_CAP)
}

pub fn simulate_frame_capped(
    scene: &Scene,
    cfg: &ChirpConfig,
    layout: &AntennaLayout,
    noise: &NoiseSpec,
    seed: u64,
    sample_cap: usize,
) -> Result<RawDataCube> {
    cfg.validate()?;
    layout.validate()?;
    noise.validate()?;
    let (n_rx, n_c, n_s) = (layout.len(), cfg.chirps_per_frame, cfg.samples_per_chirp);
    let samples = n_rx
        .checked_mul(n_c)
        .and_then(|x| x.checked_mul(n_s))
        .filter(|&s| s <= sample_cap)
        .ok_or(Error::CubeTooLarge { samples: n_rx.saturating_mul(n_c).saturating_mul(n_s), cap: sample_cap })?;

    let rx_pos = layout.receiver_positions(cfg.wavelength());
    let tx = [0.0; 3];
    let chirp_positions: Vec<Vec<Vec3>> =
        (0..n_c).map(|k| scene.positions_at(k as f64 * cfg.chirp_interval)).collect();
    for pos in &chirp_positions {
        for p in pos {
            if dist(*p, tx) == 0.0 || rx_pos.iter().any(|r| dist(*p, *r) == 0.0) {
                return Err(Error::InvalidGeometry(format!("reflector at {p:?} coincides with an antenna")));
            }
        }
    }

    let mut data = vec![Complex32::new(0.0, 0.0); samples];
    let lane_power: Vec<f64> = data
        .par_chunks_mut(n_s)
        .enumerate()
        .map(|(lane, out)| {
            let (r, k) = (lane / n_c, lane % n_c);
            synth_lane(scene, &chirp_positions[k], rx_pos[r], tx, cfg, out)
        })
        .collect();

    if let Some(snr_db) = noise.snr_db {
        let p_signal = match noise.reference {
            SnrReference::CubeMeanPower => lane_power.iter().sum::<f64>() / samples as f64,
            SnrReference::FixedSignalPower(p) => p,
        };
        let sigma = (p_signal / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        data.par_chunks_mut(n_s).enumerate().for_each(|(lane, out)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(lane as u64);
            for x in out.iter_mut() {
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                *x += Complex32::new((sigma * nr) as f32, (sigma * ni) as f32);
            }
        });
    }

    let mut cube = RawDataCube::new(data, *cfg, layout.clone())?;
    cube.snr_db = noise.snr_db;
    cube.seed = seed;
    Ok(cube)
}

const BLOCK: usize = 8;

/// Fill one chirp of one receiver; returns the sum of |x|^2 of the noise-free samples.
fn synth_lane(
    scene: &Scene,
    positions: &[Vec3],
    rx: Vec3,
    tx: Vec3,
    cfg: &ChirpConfig,
    out: &mut [Complex32],
) -> f64 {
    let n_s = out.len();
    let mut acc = vec![Complex64::new(0.0, 0.0); n_s];
    let two_pi = 2.0 * std::f64::consts::PI;
    let step = cfg.slope / cfg.adc_rate;
    let mut ar = [0.0f64; BLOCK];
    let mut ai = [0.0f64; BLOCK];
    let mut zr = [0.0f64; BLOCK];
    let mut zi = [0.0f64; BLOCK];
    for (chunk_pos, chunk_pts) in positions.chunks(BLOCK).zip(scene.points.chunks(BLOCK)) {
        ar.fill(0.0);
        ai.fill(0.0);
        zr.fill(1.0);
        zi.fill(0.0);
        for (j, (p, sp)) in chunk_pos.iter().zip(chunk_pts).enumerate() {
            let d = dist(*p, tx);
            let tau = tof(*p, rx, tx);
            let amp = sp.reflectivity / d.powi(4);
            let (s0, c0) = (two_pi * (cfg.f0 * tau).fract()).sin_cos();
            let (s1, c1) = (two_pi * (step * tau).fract()).sin_cos();
            ar[j] = amp * c0;
            ai[j] = amp * s0;
            zr[j] = c1;
            zi[j] = s1;
        }
        for x in acc.iter_mut() {
            let mut sr = 0.0;
            let mut si = 0.0;
            for j in 0..BLOCK {
                sr += ar[j];
                si += ai[j];
                let nr = ar[j] * zr[j] - ai[j] * zi[j];
                ai[j] = ar[j] * zi[j] + ai[j] * zr[j];
                ar[j] = nr;
            }
            x.re += sr;
            x.im += si;
        }
    }
    let mut power = 0.0;
    for (o, a) in out.iter_mut().zip(&acc) {
        power += a.norm_sqr();
        *o = Complex32::new(a.re as f32, a.im as f32);
    }
    power
}
