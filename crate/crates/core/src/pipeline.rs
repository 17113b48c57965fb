//! End-to-end point-cloud construction.
//!
//! DPC1: range FFT, Doppler FFT, receiver-averaged heatmap, 2D CFAR, then one
//! single-snapshot AoA estimate per detection. DPC2: range FFT, then a multi-snapshot
//! AoA estimate per range bin using the chirps as snapshots and MDL for the source count.
//! Either chain can insert SRPC, which redraws each detection's range and angle from the
//! linearly upsampled spectra around it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoa::{self, AoaEstimate, BeamPower, FftMode, SearchStrategy, SpectrumSource};
use crate::cloud::{CloudPoint, PointCloud};
use crate::dsp::{self, CfarParams, Heatmap, RangeCube, RangeDopplerCube, Window};
use crate::error::{Error, Result};
use crate::radar::{phase_to_xyz, AntennaLayout};
use crate::simulator::RawDataCube;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(alias = "angle_fft")]
    Fft,
    #[serde(alias = "conventional")]
    Conv,
    Mvdr,
    Music,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Fft => "FFT",
            Estimator::Conv => "Conv",
            Estimator::Mvdr => "MVDR",
            Estimator::Music => "MUSIC",
        }
    }
}

/// Steering-vector search. `TwoD` is the reference 2D variant: full-grid FFT for the
/// angle-FFT and the sub-grid search for the spectral estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchMode {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "subgrid")]
    SubGrid,
    #[serde(rename = "full")]
    Full,
}

impl SearchMode {
    pub fn label(self) -> &'static str {
        match self {
            SearchMode::OneD => "1D",
            SearchMode::TwoD => "2D",
            SearchMode::SubGrid => "SubGrid",
            SearchMode::Full => "Full",
        }
    }
}

/// How many sources a DPC1 detection contributes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dpc1Order {
    /// One point per detection.
    #[default]
    Single,
    /// MDL on the loaded single-snapshot covariance.
    Mdl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrpcParams {
    /// Aggressiveness: points per detection scale with `alpha * power / threshold`.
    pub alpha: f64,
    pub upsample: usize,
    /// Half-width of the range window in original range bins.
    pub range_neighbourhood: usize,
    /// Half-width of the angle window in grid cells.
    pub angle_neighbourhood: usize,
    /// Cap on points drawn around one detection.
    pub max_per_peak: usize,
}

impl Default for SrpcParams {
    fn default() -> Self {
        Self { alpha: 1.0, upsample: 8, range_neighbourhood: 1, angle_neighbourhood: 1, max_per_peak: 8 }
    }
}

impl SrpcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("SRPC alpha {} must be positive", self.alpha)));
        }
        if self.upsample < 2 || self.range_neighbourhood == 0 || self.angle_neighbourhood == 0 || self.max_per_peak == 0 {
            return Err(Error::InvalidParam("SRPC needs upsample >= 2 and positive neighbourhoods and cap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    /// 1 or 2.
    pub dpc: u8,
    pub estimator: Estimator,
    pub search: SearchMode,
    /// Sub-grid steps; defaults to three levels derived from `angle_bins`.
    pub subgrid_steps: Option<Vec<usize>>,
    pub angle_bins: usize,
    pub cfar: CfarParams,
    /// Range FFT size; defaults to the next power of two of the sample count.
    pub range_nfft: Option<usize>,
    pub doppler_nfft: Option<usize>,
    pub window: Window,
    /// MVDR / MUSIC diagonal loading as a fraction of the mean eigenvalue.
    pub loading: f64,
    pub dpc1_order: Dpc1Order,
    /// DPC2 only: skip range bins whose profile power is more than this many dB below
    /// the strongest bin. `None` processes every bin.
    pub dpc2_gate_db: Option<f64>,
    pub srpc: Option<SrpcParams>,
    /// Resample the final cloud to exactly this many points.
    pub output_points: Option<usize>,
    /// Read receiver phase differences at the mean frequency of the sampled ramp rather
    /// than at the chirp start when converting to coordinates.
    pub carrier_correction: bool,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            dpc: 1,
            estimator: Estimator::Music,
            search: SearchMode::TwoD,
            subgrid_steps: None,
            angle_bins: 512,
            cfar: CfarParams::default(),
            range_nfft: None,
            doppler_nfft: None,
            window: Window::Hann,
            loading: 1e-3,
            dpc1_order: Dpc1Order::Single,
            dpc2_gate_db: None,
            srpc: None,
            output_points: None,
            carrier_correction: true,
            seed: 0,
        }
    }
}

impl PipelineOptions {
    pub fn new(dpc: u8, estimator: Estimator, search: SearchMode) -> Self {
        Self { dpc, estimator, search, ..Self::default() }
    }

    /// Name in the `DPC1-MUSIC-2D` style.
    pub fn label(&self) -> String {
        format!("DPC{}-{}-{}", self.dpc, self.estimator.label(), self.search.label())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dpc != 1 && self.dpc != 2 {
            return Err(Error::InvalidParam(format!("dpc must be 1 or 2, got {}", self.dpc)));
        }
        if self.dpc == 2 && self.estimator == Estimator::Fft {
            return Err(Error::Unsupported("the angle-FFT is single-snapshot and cannot run in DPC2".into()));
        }
        if self.angle_bins < 4 {
            return Err(Error::InvalidParam("angle_bins must be at least 4".into()));
        }
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(Error::InvalidParam("loading must be finite and >= 0".into()));
        }
        if let Some(g) = self.dpc2_gate_db {
            if !(g > 0.0) {
                return Err(Error::InvalidParam("dpc2_gate_db must be positive".into()));
            }
        }
        if let Some(0) = self.output_points {
            return Err(Error::InvalidParam("output_points must be positive".into()));
        }
        self.cfar.validate()?;
        self.strategy().validate(self.angle_bins)?;
        if let Some(s) = &self.srpc {
            s.validate()?;
        }
        Ok(())
    }

    pub fn strategy(&self) -> SearchStrategy {
        let sub = || match &self.subgrid_steps {
            Some(steps) => SearchStrategy::SubGrid { steps: steps.clone() },
            None => SearchStrategy::default_subgrid(self.angle_bins),
        };
        match self.search {
            SearchMode::OneD => SearchStrategy::AzimuthThenElevation,
            SearchMode::TwoD if self.estimator == Estimator::Fft => SearchStrategy::Full2d,
            SearchMode::TwoD | SearchMode::SubGrid => sub(),
            SearchMode::Full => SearchStrategy::Full2d,
        }
    }
}

/// Intermediate products kept for inspection and export.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cloud: PointCloud,
    /// Detections (DPC1) or processed range bins with sources (DPC2).
    pub detections: usize,
    /// Points before SRPC / fixed-size resampling.
    pub raw_points: usize,
    pub heatmap: Option<Heatmap>,
    pub range_profile: Vec<f64>,
}

/// Run the configured chain and return only the cloud.
pub fn run(cube: &RawDataCube, opts: &PipelineOptions) -> Result<PointCloud> {
    Ok(run_detailed(cube, opts)?.cloud)
}

pub fn run_dpc1(cube: &RawDataCube, opts: &PipelineOptions) -> Result<PointCloud> {
    if opts.dpc != 1 {
        return Err(Error::InvalidParam("run_dpc1 called with dpc != 1".into()));
    }
    run(cube, opts)
}

pub fn run_dpc2(cube: &RawDataCube, opts: &PipelineOptions) -> Result<PointCloud> {
    if opts.dpc != 2 {
        return Err(Error::InvalidParam("run_dpc2 called with dpc != 2".into()));
    }
    run(cube, opts)
}

/// Run with SRPC enabled (default parameters when `opts.srpc` is unset).
pub fn run_with_srpc(cube: &RawDataCube, opts: &PipelineOptions) -> Result<PointCloud> {
    let mut o = opts.clone();
    o.srpc.get_or_insert_with(SrpcParams::default);
    run(cube, &o)
}

pub fn run_detailed(cube: &RawDataCube, opts: &PipelineOptions) -> Result<PipelineOutput> {
    opts.validate()?;
    cube.layout.validate_2d()?;
    let range_nfft = opts.range_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_samples));
    let rc = dsp::range_fft(cube, range_nfft, opts.window)?;
    let profile = range_profile(&rc);
    let (groups, heatmap, detections) = if opts.dpc == 1 {
        let doppler_nfft = opts.doppler_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_chirps));
        let rd = dsp::doppler_fft(&rc, doppler_nfft, opts.window, cube.cfg.wavelength(), cube.cfg.chirp_interval)?;
        let h = dsp::rd_heatmap(&rd);
        let det = dsp::cfar_2d(&h, &opts.cfar)?;
        let n = det.len();
        (dpc1_groups(&rd, &h, &det, &cube.layout, opts, phase_scale(cube, opts))?, Some(h), n)
    } else {
        let g = dpc2_groups(&rc, &profile, &cube.layout, opts, phase_scale(cube, opts))?;
        let n = g.len();
        (g, None, n)
    };

    let raw_points: usize = groups.iter().map(|g| g.points.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(u64::MAX);
    let cloud = match &opts.srpc {
        None => {
            let pc = PointCloud { points: groups.into_iter().flat_map(|g| g.points).collect() };
            match opts.output_points {
                Some(k) => pc.resample_to(k, &mut rng),
                None => pc,
            }
        }
        Some(sp) => {
            let pool: Vec<Vec<CloudPoint>> = groups
                .par_iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
                    r.set_stream(i as u64);
                    srpc_group(g, sp, &cube.layout, opts, &mut r)
                })
                .collect::<Result<_>>()?;
            let pool = PointCloud { points: pool.into_iter().flatten().collect() };
            pool.resample_to(opts.output_points.unwrap_or(raw_points), &mut rng)
        }
    };
    Ok(PipelineOutput { cloud, detections, raw_points, heatmap, range_profile: profile })
}

/// Mean over receivers and chirps of the range-spectrum power.
pub fn range_profile(rc: &RangeCube) -> Vec<f64> {
    let mut p = vec![0.0; rc.n_bins];
    for lane in rc.data.chunks(rc.n_bins) {
        for (acc, x) in p.iter_mut().zip(lane) {
            *acc += x.norm_sqr() as f64;
        }
    }
    let n = (rc.n_rx * rc.n_chirps).max(1) as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// One detection (DPC1) or one range bin (DPC2) with everything SRPC needs to redraw it.
struct Group {
    range_bin: usize,
    doppler_bin: usize,
    bin_m: f64,
    /// Power spectrum along range used for the range stage.
    range_spectrum: Vec<f64>,
    power: f64,
    threshold: f64,
    estimates: Vec<AoaEstimate>,
    source: Box<dyn SpectrumSource + Send>,
    velocity: Option<f64>,
    /// Factor from measured to geometric phase differences.
    phase_scale: f64,
    points: Vec<CloudPoint>,
}

/// Measured phase differences follow the instantaneous frequency, which sweeps upward
/// over the ramp; the lattice is laid out at the start wavelength.
fn phase_scale(cube: &RawDataCube, opts: &PipelineOptions) -> f64 {
    if opts.carrier_correction {
        let cfg = &cube.cfg;
        let sampled = cube.n_samples as f64 / cfg.adc_rate;
        cfg.f0 / (cfg.f0 + 0.5 * cfg.slope * sampled)
    } else {
        1.0
    }
}

fn to_points(range: f64, estimates: &[AoaEstimate], power: f64, velocity: Option<f64>, k: f64) -> Vec<CloudPoint> {
    estimates
        .iter()
        .filter_map(|e| phase_to_xyz(range, k * e.dphi_a, k * e.dphi_e).ok())
        .map(|position| CloudPoint { position, power: Some(power), velocity })
        .collect()
}

fn outer_loaded(x: &[Complex64], loading: f64) -> DMatrix<Complex64> {
    let v = DMatrix::from_column_slice(x.len(), 1, x);
    let mut r = &v * v.adjoint();
    let eps = loading * x.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
    for i in 0..x.len() {
        r[(i, i)] += eps;
    }
    r
}

/// Spectrum for the configured estimator from a covariance (or the snapshot for the FFT).
fn spectrum_source(
    est: Estimator,
    r: &DMatrix<Complex64>,
    x: Option<&[Complex64]>,
    m: usize,
    layout: &AntennaLayout,
    loading: f64,
) -> Result<Box<dyn SpectrumSource + Send>> {
    Ok(match est {
        Estimator::Fft => Box::new(BeamPower::new(x.ok_or(Error::Unsupported("FFT needs a snapshot".into()))?, layout)?),
        Estimator::Conv => Box::new(aoa::conventional(r, layout)?),
        Estimator::Mvdr => Box::new(aoa::mvdr(r, layout, loading)?),
        Estimator::Music => Box::new(aoa::music(r, layout, m.clamp(1, layout.len() - 1))?),
    })
}

/// The angle spectrum a DPC1 detection would be searched on, for export.
pub fn snapshot_spectrum(x: &[Complex64], layout: &AntennaLayout, opts: &PipelineOptions) -> Result<Box<dyn SpectrumSource + Send>> {
    spectrum_source(opts.estimator, &outer_loaded(x, opts.loading), Some(x), 1, layout, opts.loading)
}

/// Angle spectrum behind the strongest DPC1 detection or DPC2 range bin, for display.
/// `None` when nothing is detected.
pub fn strongest_angle_spectrum(cube: &RawDataCube, opts: &PipelineOptions) -> Result<Option<aoa::AngleSpectrum>> {
    opts.validate()?;
    let range_nfft = opts.range_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_samples));
    let rc = dsp::range_fft(cube, range_nfft, opts.window)?;
    let src = if opts.dpc == 1 {
        let doppler_nfft = opts.doppler_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_chirps));
        let rd = dsp::doppler_fft(&rc, doppler_nfft, opts.window, cube.cfg.wavelength(), cube.cfg.chirp_interval)?;
        let det = dsp::cfar_2d(&dsp::rd_heatmap(&rd), &opts.cfar)?;
        let Some(d) = det.iter().filter(|d| d.range_bin > 0).max_by(|a, b| a.power.total_cmp(&b.power)) else {
            return Ok(None);
        };
        snapshot_spectrum(&rd.snapshot(d.range_bin, d.doppler_bin), &cube.layout, opts)?
    } else {
        let profile = range_profile(&rc);
        let Some(b) = (1..rc.n_bins).max_by(|&a, &b| profile[a].total_cmp(&profile[b])) else {
            return Ok(None);
        };
        let x = DMatrix::from_fn(rc.n_rx, rc.n_chirps, |r, k| dsp::to64(rc.get(r, k, b)));
        let r = dsp::covariance(&x)?;
        let m = dsp::mdl_order(&dsp::hermitian_eigen(&r)?.0, rc.n_chirps)?;
        spectrum_source(opts.estimator, &r, None, m.max(1), &cube.layout, opts.loading)?
    };
    Ok(Some(aoa::evaluate_grid(src.as_ref(), opts.angle_bins)))
}

fn dpc1_groups(
    rd: &RangeDopplerCube,
    h: &Heatmap,
    det: &[dsp::Detection],
    layout: &AntennaLayout,
    opts: &PipelineOptions,
    k: f64,
) -> Result<Vec<Group>> {
    let n = opts.angle_bins;
    let strategy = opts.strategy();
    let mut groups: Vec<Group> = det
        .par_iter()
        .filter(|d| d.range_bin > 0)
        .map(|d| -> Result<Group> {
            let x = rd.snapshot(d.range_bin, d.doppler_bin);
            let r = outer_loaded(&x, opts.loading);
            let m = match opts.dpc1_order {
                Dpc1Order::Single => 1,
                Dpc1Order::Mdl => dsp::mdl_order(&dsp::hermitian_eigen(&r)?.0, 1)?.max(1),
            };
            let source = spectrum_source(opts.estimator, &r, Some(&x), m, layout, opts.loading)?;
            let estimates = match (opts.estimator, opts.search) {
                (Estimator::Fft, SearchMode::OneD) => aoa::angle_fft(&x, layout, FftMode::OneD, n, m)?,
                (Estimator::Fft, SearchMode::TwoD) if layout.lattice().is_some() => {
                    aoa::angle_fft(&x, layout, FftMode::TwoD, n, m)?
                }
                _ => aoa::search(source.as_ref(), n, &strategy, m)?.estimates,
            };
            let range = rd.range(d.range_bin);
            let velocity = Some(rd.velocity(d.doppler_bin));
            Ok(Group {
                range_bin: d.range_bin,
                doppler_bin: d.doppler_bin,
                bin_m: rd.bin_m,
                range_spectrum: h.row(d.doppler_bin).to_vec(),
                power: d.power,
                threshold: d.threshold,
                points: to_points(range, &estimates, d.power, velocity, k),
                estimates,
                source,
                velocity,
                phase_scale: k,
            })
        })
        .collect::<Result<_>>()?;
    // CFAR output is Doppler-major; order canonically by range bin, then Doppler bin.
    groups.sort_by_key(|g| (g.range_bin, g.doppler_bin));
    Ok(groups)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn dpc2_groups(
    rc: &RangeCube,
    profile: &[f64],
    layout: &AntennaLayout,
    opts: &PipelineOptions,
    k: f64,
) -> Result<Vec<Group>> {
    let n = opts.angle_bins;
    let strategy = opts.strategy();
    let floor = opts
        .dpc2_gate_db
        .map(|db| profile.iter().cloned().fold(0.0, f64::max) * 10f64.powf(-db / 10.0))
        .unwrap_or(0.0);
    let th = median(profile).max(f64::MIN_POSITIVE);
    let groups: Vec<Option<Group>> = (1..rc.n_bins)
        .into_par_iter()
        .map(|b| -> Result<Option<Group>> {
            if profile[b] < floor || profile[b] == 0.0 {
                return Ok(None);
            }
            let x = DMatrix::from_fn(rc.n_rx, rc.n_chirps, |r, k| dsp::to64(rc.get(r, k, b)));
            let r = dsp::covariance(&x)?;
            let (vals, _) = dsp::hermitian_eigen(&r)?;
            let m = dsp::mdl_order(&vals, rc.n_chirps)?;
            if m == 0 {
                return Ok(None);
            }
            let source = spectrum_source(opts.estimator, &r, None, m, layout, opts.loading)?;
            let estimates = aoa::search(source.as_ref(), n, &strategy, m)?.estimates;
            let range = b as f64 * rc.bin_m;
            Ok(Some(Group {
                range_bin: b,
                doppler_bin: 0,
                bin_m: rc.bin_m,
                range_spectrum: profile.to_vec(),
                power: profile[b],
                threshold: th,
                points: to_points(range, &estimates, profile[b], None, k),
                estimates,
                source,
                velocity: None,
                phase_scale: k,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Points drawn around one detection: `n_i = max(1, round(p alpha / th))`.
pub fn srpc_count(power: f64, threshold: f64, alpha: f64, cap: usize) -> usize {
    let n = (power * alpha / threshold).round();
    if n.is_finite() {
        (n as usize).clamp(1, cap.max(1))
    } else {
        cap.max(1)
    }
}

/// Linear interpolation of `spectrum` on the fractional positions `c - h ..= c + h` in
/// steps of `1 / upsample` (clipped to the array). Returns `(position, weight)` pairs.
pub fn upsampled_window(spectrum: &[f64], centre: usize, h: usize, upsample: usize) -> Vec<(f64, f64)> {
    let last = spectrum.len().saturating_sub(1) as f64;
    let u = upsample as f64;
    let lo = -((h * upsample) as i64);
    (lo..=-lo)
        .map(|k| centre as f64 + k as f64 / u)
        .filter(|&x| x >= 0.0 && x <= last)
        .map(|x| {
            let i = x.floor() as usize;
            let t = x - i as f64;
            let v = if t == 0.0 { spectrum[i] } else { (1.0 - t) * spectrum[i] + t * spectrum[i + 1] };
            (x, v.max(0.0))
        })
        .collect()
}

/// Draw `n` positions with probability proportional to the weights. All-zero weights
/// fall back to the first position at the centre (the caller puts it in the middle).
fn draw<R: rand::Rng>(cands: &[(f64, f64)], n: usize, fallback: f64, rng: &mut R) -> Vec<f64> {
    match WeightedIndex::new(cands.iter().map(|c| c.1)) {
        Ok(w) => (0..n).map(|_| cands[w.sample(rng)].0).collect(),
        Err(_) => vec![fallback; n],
    }
}

/// SRPC over a 1D power spectrum: for every peak `(bin, power)` draw `n_i` fractional bin
/// positions around it from the upsampled spectrum, pool them and keep `k_out` (without
/// replacement when the pool is large enough).
pub fn srpc_resample(
    spectrum: &[f64],
    peaks: &[(usize, f64)],
    th: f64,
    params: &SrpcParams,
    k_out: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(th > 0.0) {
        return Err(Error::InvalidParam("SRPC threshold must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    for &(bin, p) in peaks {
        let n = srpc_count(p, th, params.alpha, params.max_per_peak);
        let cands = upsampled_window(spectrum, bin, params.range_neighbourhood, params.upsample);
        pool.extend(draw(&cands, n, bin as f64, &mut rng));
    }
    let pc = PointCloud::from_positions(pool.iter().map(|&x| [x, 0.0, 0.0]));
    Ok(pc.resample_to(k_out, &mut rng).points.iter().map(|p| p.position[0]).collect())
}

fn srpc_group<R: rand::Rng>(
    g: &Group,
    sp: &SrpcParams,
    layout: &AntennaLayout,
    opts: &PipelineOptions,
    rng: &mut R,
) -> Result<Vec<CloudPoint>> {
    let _ = layout;
    let n_i = srpc_count(g.power, g.threshold, sp.alpha, sp.max_per_peak);
    let range_cands = upsampled_window(&g.range_spectrum, g.range_bin, sp.range_neighbourhood, sp.upsample);
    let cell = 2.0 * std::f64::consts::PI / opts.angle_bins as f64;
    let h = sp.angle_neighbourhood as i64;
    let mut out = Vec::new();
    for est in &g.estimates {
        // spectrum on the (2h+1)^2 cells around the estimate, bilinearly upsampled
        let side = (2 * h + 1) as usize;
        let patch: Vec<f64> = (0..side * side)
            .map(|i| {
                let (da, de) = ((i % side) as i64 - h, (i / side) as i64 - h);
                g.source.power(est.dphi_a + da as f64 * cell, est.dphi_e + de as f64 * cell)
            })
            .collect();
        let u = sp.upsample;
        let fine = 2 * h as usize * u + 1;
        let mut cands = Vec::with_capacity(fine * fine);
        for je in 0..fine {
            for ja in 0..fine {
                let (fa, fe) = (ja as f64 / u as f64, je as f64 / u as f64);
                let (ia, ie) = ((fa.floor() as usize).min(side - 2), (fe.floor() as usize).min(side - 2));
                let (ta, te) = (fa - ia as f64, fe - ie as f64);
                let v = |a: usize, e: usize| patch[e * side + a];
                let w = (1.0 - ta) * (1.0 - te) * v(ia, ie)
                    + ta * (1.0 - te) * v(ia + 1, ie)
                    + (1.0 - ta) * te * v(ia, ie + 1)
                    + ta * te * v(ia + 1, ie + 1);
                cands.push(((ja * fine + je) as f64, w.max(0.0)));
            }
        }
        let ranges = draw(&range_cands, n_i, g.range_bin as f64, rng);
        let centre = ((fine / 2) * fine + fine / 2) as f64;
        let angles = draw(&cands, n_i, centre, rng);
        for (rb, code) in ranges.into_iter().zip(angles) {
            let code = code as usize;
            let (ja, je) = (code / fine, code % fine);
            let off = |j: usize| (j as f64 / u as f64 - h as f64) * cell;
            let (pa, pe) = (est.dphi_a + off(ja), est.dphi_e + off(je));
            if let Ok(position) = phase_to_xyz(rb * g.bin_m, g.phase_scale * pa, g.phase_scale * pe) {
                out.push(CloudPoint { position, power: Some(g.power), velocity: g.velocity });
            }
        }
    }
    Ok(out)
}
