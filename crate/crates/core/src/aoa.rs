//! Angle-of-arrival estimation: angle-FFT, conventional beamforming, MVDR and MUSIC
//! spectra over a phase grid, and the three steering-vector search strategies.
//!
//! Grids are uniform in phase: cell `i` of an `n`-cell axis sits at `-pi + 2 pi i / n`
//! and the axis wraps around.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{hermitian_eigen, hermitian_part};
use crate::error::{Error, Result};
use crate::radar::AntennaLayout;

pub fn grid_phase(i: usize, n: usize) -> f64 {
    -PI + 2.0 * PI * i as f64 / n as f64
}

/// Nearest grid cell to a phase (any real value, wrapped).
pub fn grid_cell(phase: f64, n: usize) -> usize {
    let x = (phase + PI).rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
    (x.round() as usize) % n
}

/// Wrap a phase into `[-pi, pi)`.
pub fn wrap_phase(p: f64) -> f64 {
    (p + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaEstimate {
    pub dphi_a: f64,
    pub dphi_e: f64,
    pub power: f64,
}

/// Power grid over `(dphi_e, dphi_a)`, row-major with elevation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSpectrum {
    pub n: usize,
    pub data: Vec<f64>,
}

impl AngleSpectrum {
    pub fn get(&self, ia: usize, ie: usize) -> f64 {
        self.data[ie * self.n + ia]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.data);
        (i % self.n, i / self.n)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    /// Local maxima as `(ia, ie)` cells, strongest first.
    pub fn peaks(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        let mut p = local_maxima_2d(n, n, |ia, ie| self.get(ia, ie));
        p.sort_by(|a, b| self.get(b.0, b.1).total_cmp(&self.get(a.0, a.1)).then(a.cmp(b)));
        p
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `true` when cell `c` beats neighbour `q`: strictly larger, or equal with a lower index.
fn beats(vc: f64, c: usize, vq: f64, q: usize) -> bool {
    vc > vq || (vc == vq && c < q)
}

/// Strict local maxima on a periodic `na x ne` grid (8-neighbourhood). Plateaus resolve
/// to their lowest linear index. Returned in linear order.
fn local_maxima_2d(na: usize, ne: usize, f: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for ie in 0..ne {
        for ia in 0..na {
            let v = f(ia, ie);
            let c = ie * na + ia;
            let mut ok = true;
            'n: for de in [ne - 1, 0, 1] {
                for da in [na - 1, 0, 1] {
                    let (qa, qe) = ((ia + da) % na, (ie + de) % ne);
                    let q = qe * na + qa;
                    if q != c && !beats(v, c, f(qa, qe), q) {
                        ok = false;
                        break 'n;
                    }
                }
            }
            if ok {
                out.push((ia, ie));
            }
        }
    }
    out
}

fn local_maxima_1d(v: &[f64]) -> Vec<usize> {
    let n = v.len();
    (0..n)
        .filter(|&i| {
            [(i + n - 1) % n, (i + 1) % n]
                .iter()
                .all(|&q| q == i || beats(v[i], i, v[q], q))
        })
        .collect()
}

/// Spatial spectrum that can be probed at any phase pair.
pub trait SpectrumSource: Sync {
    fn power(&self, dphi_a: f64, dphi_e: f64) -> f64;
    /// Spectrum of the azimuth reference row alone, used by the azimuth-first search.
    fn azimuth_power(&self, dphi_a: f64) -> f64;
}

/// Hermitian quadratic form `s^H Q s` folded into per-lag coefficients.
#[derive(Debug, Clone)]
struct LagForm {
    c0: f64,
    /// Positive lags `(la, le)` with their summed coefficient.
    lags: Vec<([f64; 2], Complex64)>,
    /// Integer version of the lags when every position is on the lattice.
    int_lags: Option<Vec<([i32; 2], Complex64)>>,
    max_la: usize,
    max_le: usize,
}

impl LagForm {
    fn new(positions: &[[f64; 2]], q: &DMatrix<Complex64>) -> Self {
        let key = |x: f64| (x * 1e6).round() as i64;
        let mut acc: HashMap<(i64, i64), ([f64; 2], Complex64)> = HashMap::new();
        let mut c0 = 0.0;
        for (i, pi) in positions.iter().enumerate() {
            for (j, pj) in positions.iter().enumerate() {
                let l = [pj[0] - pi[0], pj[1] - pi[1]];
                let (ka, ke) = (key(l[0]), key(l[1]));
                if ka == 0 && ke == 0 {
                    c0 += q[(i, j)].re;
                } else if ka > 0 || (ka == 0 && ke > 0) {
                    acc.entry((ka, ke)).or_insert((l, Complex64::new(0.0, 0.0))).1 += q[(i, j)];
                }
            }
        }
        let mut lags: Vec<([f64; 2], Complex64)> = acc.into_values().collect();
        lags.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
        let integral = lags.iter().all(|(l, _)| l.iter().all(|v| v.fract() == 0.0));
        let int_lags = integral.then(|| lags.iter().map(|(l, c)| ([l[0] as i32, l[1] as i32], *c)).collect::<Vec<_>>());
        let max_la = lags.iter().map(|(l, _)| l[0].abs() as usize).max().unwrap_or(0);
        let max_le = lags.iter().map(|(l, _)| l[1].abs() as usize).max().unwrap_or(0);
        Self { c0, lags, int_lags, max_la, max_le }
    }

    fn eval(&self, a: f64, e: f64) -> f64 {
        let mut s = 0.0;
        match &self.int_lags {
            Some(lags) => {
                let pa = powers(Complex64::from_polar(1.0, a), self.max_la);
                let pe = powers(Complex64::from_polar(1.0, e), self.max_le);
                for (l, c) in lags {
                    let ea = pa[l[0] as usize];
                    let ee = if l[1] >= 0 { pe[l[1] as usize] } else { pe[(-l[1]) as usize].conj() };
                    s += (c * ea * ee).re;
                }
            }
            None => {
                for (l, c) in &self.lags {
                    s += (c * Complex64::from_polar(1.0, l[0] * a + l[1] * e)).re;
                }
            }
        }
        self.c0 + 2.0 * s
    }
}

fn powers(z: Complex64, k: usize) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(k + 1);
    let mut p = Complex64::new(1.0, 0.0);
    for _ in 0..=k {
        v.push(p);
        p *= z;
    }
    v
}

/// Spectrum `g(s^H Q s)` for the full array and the azimuth row, where `g` is the
/// identity (beamforming) or the floored reciprocal (MVDR, MUSIC).
#[derive(Debug, Clone)]
pub struct QuadSpectrum {
    full: LagForm,
    azimuth: LagForm,
    reciprocal: bool,
    floor: f64,
}

impl QuadSpectrum {
    fn finish(&self, q: f64) -> f64 {
        if self.reciprocal {
            1.0 / q.max(self.floor)
        } else {
            q.max(0.0)
        }
    }
}

impl SpectrumSource for QuadSpectrum {
    fn power(&self, a: f64, e: f64) -> f64 {
        self.finish(self.full.eval(a, e))
    }

    fn azimuth_power(&self, a: f64) -> f64 {
        self.finish(self.azimuth.eval(a, 0.0))
    }
}

fn check_dims(r: &DMatrix<Complex64>, layout: &AntennaLayout) -> Result<()> {
    if r.nrows() != layout.len() || r.ncols() != layout.len() {
        return Err(Error::DimensionMismatch { expected: layout.len(), got: r.nrows() });
    }
    if r.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    Ok(())
}

fn submatrix(r: &DMatrix<Complex64>, idx: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| r[(idx[i], idx[j])])
}

fn sub_positions(layout: &AntennaLayout, idx: &[usize]) -> Vec<[f64; 2]> {
    idx.iter().map(|&i| layout.positions[i]).collect()
}

/// `P = s^H R s`.
pub fn conventional(r: &DMatrix<Complex64>, layout: &AntennaLayout) -> Result<QuadSpectrum> {
    check_dims(r, layout)?;
    let r = hermitian_part(r);
    let row = layout.azimuth_row();
    Ok(QuadSpectrum {
        full: LagForm::new(&layout.positions, &r),
        azimuth: LagForm::new(&sub_positions(layout, &row), &submatrix(&r, &row)),
        reciprocal: false,
        floor: 0.0,
    })
}

fn loaded_inverse(r: &DMatrix<Complex64>, loading: f64) -> Result<DMatrix<Complex64>> {
    let n = r.nrows();
    let tr: f64 = (0..n).map(|i| r[(i, i)].re).sum();
    let eps = loading * tr / n as f64;
    let loaded = r + DMatrix::<Complex64>::identity(n, n) * Complex64::new(eps, 0.0);
    let chol = nalgebra::Cholesky::new(loaded).ok_or(Error::Singular)?;
    let l = chol.l();
    let min_pivot = (0..n).map(|i| l[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
    let scale = (tr / n as f64).max(eps);
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::Singular);
    }
    Ok(hermitian_part(&chol.inverse()))
}

/// `P = 1 / (s^H (R + eps I)^-1 s)` with `eps = loading * tr(R) / N`.
pub fn mvdr(r: &DMatrix<Complex64>, layout: &AntennaLayout, loading: f64) -> Result<QuadSpectrum> {
    check_dims(r, layout)?;
    if !(loading >= 0.0 && loading.is_finite()) {
        return Err(Error::InvalidParam(format!("loading factor {loading} must be >= 0")));
    }
    let r = hermitian_part(r);
    let row = layout.azimuth_row();
    let n = layout.len() as f64;
    Ok(QuadSpectrum {
        full: LagForm::new(&layout.positions, &loaded_inverse(&r, loading)?),
        azimuth: LagForm::new(&sub_positions(layout, &row), &loaded_inverse(&submatrix(&r, &row), loading)?),
        reciprocal: true,
        floor: f64::MIN_POSITIVE * n,
    })
}

fn noise_projector(r: &DMatrix<Complex64>, m: usize) -> Result<DMatrix<Complex64>> {
    let (_, vecs) = hermitian_eigen(r)?;
    let u = vecs.columns(m, r.nrows() - m);
    Ok(&u * u.adjoint())
}

/// `P = 1 / (s^H U U^H s)` with `U` the eigenvectors of the `N - m` smallest eigenvalues.
/// The azimuth-row spectrum uses `min(m, N_row - 1)` sources.
pub fn music(r: &DMatrix<Complex64>, layout: &AntennaLayout, m: usize) -> Result<QuadSpectrum> {
    check_dims(r, layout)?;
    let n = layout.len();
    if m == 0 || m >= n {
        return Err(Error::SourceCount { m, n });
    }
    let r = hermitian_part(r);
    let row = layout.azimuth_row();
    let m_row = m.min(row.len().saturating_sub(1)).max(1);
    let az = if row.len() > 1 {
        noise_projector(&submatrix(&r, &row), m_row)?
    } else {
        DMatrix::identity(1, 1)
    };
    Ok(QuadSpectrum {
        full: LagForm::new(&layout.positions, &noise_projector(&r, m)?),
        azimuth: LagForm::new(&sub_positions(layout, &row), &az),
        reciprocal: true,
        floor: 1e-12 * n as f64,
    })
}

/// Evaluate a source on the full `n x n` grid.
pub fn evaluate_grid(src: &dyn SpectrumSource, n: usize) -> AngleSpectrum {
    let data = (0..n * n)
        .into_par_iter()
        .map(|i| src.power(grid_phase(i % n, n), grid_phase(i / n, n)))
        .collect();
    AngleSpectrum { n, data }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Azimuth spectrum of the reference row, then an elevation scan per azimuth peak.
    AzimuthThenElevation,
    /// Every cell of the grid.
    Full2d,
    /// Coarse cells every `steps[0]`, then around each peak a window of
    /// `+-steps[l-1]/2` at spacing `steps[l]`. The last step must be 1.
    SubGrid { steps: Vec<usize> },
}

impl SearchStrategy {
    /// Three-level sub-grid for a grid of `n` cells: steps `n/32`, `n/128`, 1 (when these
    /// are at least 1 and distinct).
    pub fn default_subgrid(n: usize) -> Self {
        let mut steps: Vec<usize> = [n / 32, n / 128, 1].into_iter().filter(|&s| s >= 1).collect();
        steps.dedup();
        if steps.last() != Some(&1) {
            steps.push(1);
        }
        SearchStrategy::SubGrid { steps }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::InvalidParam("grid needs at least 2 cells per axis".into()));
        }
        if let SearchStrategy::SubGrid { steps } = self {
            if steps.is_empty() || *steps.last().unwrap() != 1 {
                return Err(Error::InvalidParam("sub-grid steps must end at 1".into()));
            }
            if steps.windows(2).any(|w| w[1] >= w[0]) || steps[0] >= n {
                return Err(Error::InvalidParam("sub-grid steps must decrease and stay below the grid size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub estimates: Vec<AoaEstimate>,
    /// Number of spectrum evaluations performed.
    pub evaluations: usize,
}

/// Up to `m` strongest peaks of `src` on an `n`-cell phase grid.
pub fn search(src: &dyn SpectrumSource, n: usize, strategy: &SearchStrategy, m: usize) -> Result<SearchResult> {
    strategy.validate(n)?;
    if m == 0 {
        return Ok(SearchResult { estimates: Vec::new(), evaluations: 0 });
    }
    let count = AtomicUsize::new(0);
    let eval = |ia: usize, ie: usize| {
        count.fetch_add(1, Ordering::Relaxed);
        src.power(grid_phase(ia, n), grid_phase(ie, n))
    };
    let mut cells: Vec<(usize, usize, f64)> = match strategy {
        SearchStrategy::Full2d => {
            let g: Vec<f64> = (0..n * n).map(|i| eval(i % n, i / n)).collect();
            let mut p: Vec<(usize, usize, f64)> =
                local_maxima_2d(n, n, |a, e| g[e * n + a]).into_iter().map(|(a, e)| (a, e, g[e * n + a])).collect();
            if p.is_empty() {
                let i = argmax(&g);
                p.push((i % n, i / n, g[i]));
            }
            p
        }
        SearchStrategy::AzimuthThenElevation => {
            let az: Vec<f64> = (0..n)
                .map(|i| {
                    count.fetch_add(1, Ordering::Relaxed);
                    src.azimuth_power(grid_phase(i, n))
                })
                .collect();
            let mut peaks = local_maxima_1d(&az);
            if peaks.is_empty() {
                peaks.push(argmax(&az));
            }
            peaks.sort_by(|&a, &b| az[b].total_cmp(&az[a]).then(a.cmp(&b)));
            peaks
                .into_iter()
                .take(m)
                .map(|ia| {
                    let col: Vec<f64> = (0..n).map(|ie| eval(ia, ie)).collect();
                    let ie = argmax(&col);
                    (ia, ie, col[ie])
                })
                .collect()
        }
        SearchStrategy::SubGrid { steps } => {
            let s0 = steps[0];
            let nc = n.div_ceil(s0);
            let coarse: Vec<f64> = (0..nc * nc).map(|i| eval((i % nc) * s0, (i / nc) * s0)).collect();
            let mut peaks = local_maxima_2d(nc, nc, |a, e| coarse[e * nc + a]);
            if peaks.is_empty() {
                let i = argmax(&coarse);
                peaks.push((i % nc, i / nc));
            }
            peaks.sort_by(|a, b| {
                coarse[b.1 * nc + b.0].total_cmp(&coarse[a.1 * nc + a.0]).then((a.1, a.0).cmp(&(b.1, b.0)))
            });
            peaks
                .into_iter()
                .take(m)
                .map(|(ca, ce)| refine(&eval, n, steps, (ca * s0, ce * s0), coarse[ce * nc + ca]))
                .collect()
        }
    };
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    let mut seen = std::collections::HashSet::new();
    cells.retain(|c| seen.insert((c.0, c.1)));
    cells.truncate(m);
    let estimates = cells
        .into_iter()
        .map(|(ia, ie, p)| AoaEstimate { dphi_a: grid_phase(ia, n), dphi_e: grid_phase(ie, n), power: p })
        .collect();
    Ok(SearchResult { estimates, evaluations: count.into_inner() })
}

/// Successive window refinement. A window whose best cell lies on its border is
/// re-centred there and re-scanned, so peaks the coarse grid straddled are still reached.
fn refine(
    eval: &impl Fn(usize, usize) -> f64,
    n: usize,
    steps: &[usize],
    start: (usize, usize),
    start_power: f64,
) -> (usize, usize, f64) {
    let (mut ca, mut ce, mut best) = (start.0, start.1, start_power);
    for w in steps.windows(2) {
        let (prev, step) = (w[0], w[1]);
        let h = ((prev / 2) / step).max(1) as isize;
        let mut moves = 0;
        loop {
            let mut top = (0isize, 0isize, f64::NEG_INFINITY);
            for de in -h..=h {
                for da in -h..=h {
                    let a = (ca as isize + da * step as isize).rem_euclid(n as isize) as usize;
                    let e = (ce as isize + de * step as isize).rem_euclid(n as isize) as usize;
                    let v = eval(a, e);
                    if v > top.2 {
                        top = (da, de, v);
                    }
                }
            }
            ca = (ca as isize + top.0 * step as isize).rem_euclid(n as isize) as usize;
            ce = (ce as isize + top.1 * step as isize).rem_euclid(n as isize) as usize;
            best = top.2;
            moves += 1;
            let on_edge = top.0.abs() == h || top.1.abs() == h;
            if !on_edge || moves > n / step {
                break;
            }
        }
    }
    (ca, ce, best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftMode {
    /// Azimuth FFT over the reference row, elevation phase from adjacent-row phase
    /// differences.
    OneD,
    /// Zero-padded FFT over the full 2D lattice.
    TwoD,
}

/// `|s^H x|^2` as a [`SpectrumSource`]; the angle-FFT evaluates exactly this on its grid.
#[derive(Debug, Clone)]
pub struct BeamPower {
    inner: QuadSpectrum,
}

impl BeamPower {
    pub fn new(x: &[Complex64], layout: &AntennaLayout) -> Result<Self> {
        let v = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(Self { inner: conventional(&(&v * v.adjoint()), layout)? })
    }
}

impl SpectrumSource for BeamPower {
    fn power(&self, a: f64, e: f64) -> f64 {
        self.inner.power(a, e)
    }

    fn azimuth_power(&self, a: f64) -> f64 {
        self.inner.azimuth_power(a)
    }
}

/// Angle-FFT estimates of up to `m` sources from a single snapshot.
pub fn angle_fft(x: &[Complex64], layout: &AntennaLayout, mode: FftMode, n: usize, m: usize) -> Result<Vec<AoaEstimate>> {
    if x.len() != layout.len() {
        return Err(Error::DimensionMismatch { expected: layout.len(), got: x.len() });
    }
    if n < 2 {
        return Err(Error::InvalidParam("angle FFT needs at least 2 bins".into()));
    }
    let lattice = layout
        .lattice()
        .ok_or_else(|| Error::Unsupported(format!("angle FFT on non-lattice layout `{}`", layout.name)))?;
    match mode {
        FftMode::TwoD => {
            let spec = fft_2d_power(x, &lattice, n);
            let mut out: Vec<AoaEstimate> = spec
                .peaks()
                .into_iter()
                .take(m)
                .map(|(ia, ie)| AoaEstimate { dphi_a: grid_phase(ia, n), dphi_e: grid_phase(ie, n), power: spec.get(ia, ie) })
                .collect();
            if out.is_empty() && m > 0 {
                let (ia, ie) = spec.argmax();
                out.push(AoaEstimate { dphi_a: grid_phase(ia, n), dphi_e: grid_phase(ie, n), power: spec.get(ia, ie) });
            }
            Ok(out)
        }
        FftMode::OneD => {
            let rows = unit_gap_rows(&lattice);
            if rows.is_empty() {
                return Err(Error::Unsupported(format!(
                    "1D angle FFT needs two receiver rows one element apart in `{}`",
                    layout.name
                )));
            }
            let row = layout.azimuth_row();
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for &i in &row {
                buf[(lattice[i].0.rem_euclid(n as i32)) as usize] += x[i];
            }
            FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
            let az: Vec<f64> = (0..n).map(|i| buf[fft_bin(i, n)].norm_sqr()).collect();
            let mut peaks = local_maxima_1d(&az);
            if peaks.is_empty() {
                peaks.push(argmax(&az));
            }
            peaks.sort_by(|&a, &b| az[b].total_cmp(&az[a]).then(a.cmp(&b)));
            Ok(peaks
                .into_iter()
                .take(m)
                .map(|ia| {
                    let pa = grid_phase(ia, n);
                    AoaEstimate { dphi_a: pa, dphi_e: elevation_phase(x, &lattice, &rows, pa), power: az[ia] }
                })
                .collect())
        }
    }
}

/// Elevation indices `e` such that rows `e` and `e + 1` both hold receivers.
fn unit_gap_rows(lattice: &[(i32, i32)]) -> Vec<i32> {
    let rows: std::collections::BTreeSet<i32> = lattice.iter().map(|p| p.1).collect();
    rows.iter().copied().filter(|e| rows.contains(&(e + 1))).collect()
}

fn elevation_phase(x: &[Complex64], lattice: &[(i32, i32)], rows: &[i32], pa: f64) -> f64 {
    let beam = |row: i32| -> Complex64 {
        lattice
            .iter()
            .zip(x)
            .filter(|(p, _)| p.1 == row)
            .map(|(p, v)| v * Complex64::from_polar(1.0, -(p.0 as f64) * pa))
            .sum()
    };
    let acc: Complex64 = rows.iter().map(|&e| beam(e + 1) * beam(e).conj()).sum();
    wrap_phase(acc.arg())
}

/// `|s^H x|^2` on the full grid via a zero-padded 2D FFT.
pub fn fft_2d_power(x: &[Complex64], lattice: &[(i32, i32)], n: usize) -> AngleSpectrum {
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for (p, v) in lattice.iter().zip(x) {
        let (a, e) = (p.0.rem_euclid(n as i32) as usize, p.1.rem_euclid(n as i32) as usize);
        buf[e * n + a] += v;
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for a in 0..n {
        for e in 0..n {
            col[e] = buf[e * n + a];
        }
        fft.process(&mut col);
        for e in 0..n {
            buf[e * n + a] = col[e];
        }
    }
    let data = (0..n * n).map(|c| buf[fft_bin(c / n, n) * n + fft_bin(c % n, n)].norm_sqr()).collect();
    AngleSpectrum { n, data }
}

/// Forward-FFT bin `k` evaluates `s^H x` at phase `2 pi k / n`; this maps grid cell `i`
/// (phase `-pi + 2 pi i / n`) to that bin.
fn fft_bin(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::{angle_to_phase, steering_vector};

    fn outer(s: &[Complex64]) -> DMatrix<Complex64> {
        let v = DMatrix::from_column_slice(s.len(), 1, s);
        &v * v.adjoint()
    }

    fn analytic_r(layout: &AntennaLayout, sources: &[(f64, f64)], sigma2: f64) -> DMatrix<Complex64> {
        let n = layout.len();
        let mut r = DMatrix::<Complex64>::identity(n, n) * Complex64::new(sigma2, 0.0);
        for &(a, e) in sources {
            r += outer(&steering_vector(layout, a, e));
        }
        r
    }

    /// Brute-force spectrum value straight from the definition.
    fn brute_quad(layout: &AntennaLayout, q: &DMatrix<Complex64>, a: f64, e: f64) -> f64 {
        let s = DMatrix::from_column_slice(layout.len(), 1, &steering_vector(layout, a, e));
        (s.adjoint() * q * s)[(0, 0)].re
    }

    fn sq4() -> AntennaLayout {
        AntennaLayout::preset("square4").unwrap()
    }

    #[test]
    fn grid_cells() {
        assert_eq!(grid_phase(0, 512), -PI);
        assert_eq!(grid_cell(0.0, 512), 256);
        assert_eq!(grid_cell(PI, 512), 0);
        assert_eq!(grid_cell(grid_phase(77, 512) + 1e-9, 512), 77);
    }

    #[test]
    fn lag_form_matches_brute_force() {
        let mut rng_state = 1u64;
        let mut rnd = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let frac = AntennaLayout::new("frac", vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [2.3, 0.7]]).unwrap();
        for layout in [sq4(), AntennaLayout::preset("iwr6843").unwrap(), AntennaLayout::preset("ods").unwrap(), frac] {
            let n = layout.len();
            let x = DMatrix::from_fn(n, 3, |_, _| Complex64::new(rnd(), rnd()));
            let r = &x * x.adjoint();
            let bf = conventional(&r, &layout).unwrap();
            for _ in 0..20 {
                let (a, e) = (rnd() * 6.0, rnd() * 6.0);
                let want = brute_quad(&layout, &r, a, e);
                assert!((bf.power(a, e) - want).abs() < 1e-9 * want.abs().max(1.0), "{}", layout.name);
            }
        }
    }

    #[test]
    fn conventional_examples() {
        let l = sq4();
        let (a0, e0) = (grid_phase(300, 64 * 8), grid_phase(200, 512));
        let s0 = steering_vector(&l, a0, e0);
        let bf = conventional(&outer(&s0), &l).unwrap();
        assert!((bf.power(a0, e0) - 256.0).abs() < 1e-9);
        let full = search(&bf, 512, &SearchStrategy::Full2d, 1).unwrap();
        assert_eq!((grid_cell(full.estimates[0].dphi_a, 512), grid_cell(full.estimates[0].dphi_e, 512)), (300, 200));

        let flat = conventional(&DMatrix::identity(16, 16), &l).unwrap();
        for (a, e) in [(0.0, 0.0), (1.0, -2.0), (3.0, 0.5)] {
            assert!((flat.power(a, e) - 16.0).abs() < 1e-9);
        }
        let scaled = conventional(&(outer(&s0) * Complex64::new(7.5, 0.0)), &l).unwrap();
        assert!((scaled.power(0.3, 0.1) - 7.5 * bf.power(0.3, 0.1)).abs() < 1e-9);
        assert!(conventional(&DMatrix::identity(4, 4), &l).is_err());
    }

    #[test]
    fn mvdr_examples() {
        let l = sq4();
        let flat = mvdr(&DMatrix::identity(16, 16), &l, 0.0).unwrap();
        assert!((flat.power(0.4, -1.0) - 1.0 / 16.0).abs() < 1e-12);

        let (pa, _) = angle_to_phase(30f64.to_radians(), 0.0).unwrap();
        let r = analytic_r(&l, &[(pa, 0.0), (-pa, 0.0)], 0.01);
        let spec = mvdr(&r, &l, 1e-3).unwrap();
        let found = search(&spec, 128, &SearchStrategy::Full2d, 2).unwrap();
        let mut cells: Vec<usize> = found.estimates.iter().map(|e| grid_cell(e.dphi_a, 128)).collect();
        cells.sort();
        let want = [grid_cell(-pa, 128), grid_cell(pa, 128)];
        for (c, w) in cells.iter().zip(want) {
            assert!((*c as i64 - w as i64).abs() <= 1, "{cells:?} vs {want:?}");
        }
        for e in &found.estimates {
            assert!(grid_cell(e.dphi_e, 128).abs_diff(64) <= 1);
        }

        let s0 = steering_vector(&l, 0.7, -0.4);
        let rank1 = mvdr(&outer(&s0), &l, 1e-3).unwrap();
        let g = evaluate_grid(&rank1, 64);
        assert!(g.data.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(g.argmax(), (grid_cell(0.7, 64), grid_cell(-0.4, 64)));
        assert!(matches!(mvdr(&outer(&s0), &l, 0.0), Err(Error::Singular)));
    }

    #[test]
    fn music_examples() {
        let l = sq4();
        let (a0, e0) = (grid_phase(40, 64), grid_phase(20, 64));
        let spec = music(&analytic_r(&l, &[(a0, e0)], 0.01), &l, 1).unwrap();
        let g = evaluate_grid(&spec, 64);
        assert_eq!(g.argmax(), (40, 20));
        assert!(g.get(40, 20) >= 1e3 * g.median());

        // pure noise with m = N - 1: a single noise eigenvector, spectrum within a modest
        // dynamic range
        let noise = DMatrix::<Complex64>::identity(16, 16);
        let flat = evaluate_grid(&music(&noise, &l, 15).unwrap(), 16);
        assert!(flat.data.iter().all(|v| v.is_finite() && *v > 0.0));

        assert!(matches!(music(&noise, &l, 0), Err(Error::SourceCount { .. })));
        assert!(matches!(music(&noise, &l, 16), Err(Error::SourceCount { .. })));
    }

    #[test]
    fn scaling_keeps_argmax() {
        let l = sq4();
        let r = analytic_r(&l, &[(0.9, -0.3), (-1.5, 1.1)], 0.05);
        let c = Complex64::new(123.0, 0.0);
        type Build = fn(&DMatrix<Complex64>, &AntennaLayout) -> QuadSpectrum;
        let builders: [Build; 3] = [
            |r, l| conventional(r, l).unwrap(),
            |r, l| mvdr(r, l, 1e-3).unwrap(),
            |r, l| music(r, l, 2).unwrap(),
        ];
        for b in builders {
            assert_eq!(evaluate_grid(&b(&r, &l), 48).argmax(), evaluate_grid(&b(&(&r * c), &l), 48).argmax());
        }
    }

    /// Every pair of sources at least 4 cells apart on a 16-cell grid, plus random
    /// triples, is resolved by MUSIC within one cell; the full search agrees with a
    /// brute-force argmax over the grid.
    #[test]
    fn music_resolves_separated_sources() {
        let l = sq4();
        let n = 16;
        let mut checked = 0;
        let cells: Vec<(usize, usize)> = (0..n).step_by(2).flat_map(|a| (0..n).step_by(3).map(move |e| (a, e))).collect();
        let sep = |p: (usize, usize), q: (usize, usize)| {
            let d = |x: usize, y: usize| x.abs_diff(y).min(n - x.abs_diff(y));
            d(p.0, q.0).max(d(p.1, q.1))
        };
        for (i, &p) in cells.iter().enumerate() {
            for &q in &cells[i + 1..] {
                if sep(p, q) < 4 {
                    continue;
                }
                let src = [p, q].map(|c| (grid_phase(c.0, n), grid_phase(c.1, n)));
                let r = analytic_r(&l, &src, 0.01);
                let spec = music(&r, &l, 2).unwrap();
                let found = search(&spec, n, &SearchStrategy::Full2d, 2).unwrap();
                assert_eq!(found.estimates.len(), 2);
                for t in [p, q] {
                    assert!(
                        found.estimates.iter().any(|e| sep((grid_cell(e.dphi_a, n), grid_cell(e.dphi_e, n)), t) <= 1),
                        "{p:?} {q:?}"
                    );
                }
                let g = evaluate_grid(&spec, n);
                assert_eq!(found.estimates[0].power, g.data[g.argmax().1 * n + g.argmax().0]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn search_costs_on_17_grid() {
        let l = sq4();
        let x = steering_vector(&l, grid_phase(9, 17), grid_phase(7, 17));
        let src = BeamPower::new(&x, &l).unwrap();
        let az = search(&src, 17, &SearchStrategy::AzimuthThenElevation, 1).unwrap();
        let full = search(&src, 17, &SearchStrategy::Full2d, 1).unwrap();
        let sub = search(&src, 17, &SearchStrategy::SubGrid { steps: vec![4, 1] }, 1).unwrap();
        assert_eq!((az.evaluations, full.evaluations, sub.evaluations), (34, 289, 50));
        let cell = |r: &SearchResult| (grid_cell(r.estimates[0].dphi_a, 17), grid_cell(r.estimates[0].dphi_e, 17));
        assert_eq!(cell(&full), (9, 7));
        assert_eq!(cell(&az), (9, 7));
        assert_eq!(cell(&sub), (9, 7));
        assert!(search(&src, 17, &SearchStrategy::Full2d, 0).unwrap().estimates.is_empty());

        // a peak on the refinement window border is followed by re-centring
        let x = steering_vector(&l, grid_phase(9, 17), grid_phase(6, 17));
        let src = BeamPower::new(&x, &l).unwrap();
        let sub = search(&src, 17, &SearchStrategy::SubGrid { steps: vec![4, 1] }, 1).unwrap();
        assert_eq!(cell(&sub), (9, 6));
        assert!(sub.evaluations > 50);
    }

    #[test]
    fn full_search_dominates_subgrid() {
        let l = sq4();
        for k in 0..30 {
            let a = -3.0 + 0.2 * k as f64;
            let r = analytic_r(&l, &[(a, 0.7 - 0.05 * k as f64), (a + 2.0, -1.0)], 0.02);
            let spec = mvdr(&r, &l, 1e-3).unwrap();
            let full = search(&spec, 128, &SearchStrategy::Full2d, 2).unwrap();
            let sub = search(&spec, 128, &SearchStrategy::default_subgrid(128), 2).unwrap();
            assert!(sub.evaluations < full.evaluations);
            for (f, s) in full.estimates.iter().zip(&sub.estimates) {
                assert!(f.power >= s.power * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn fft_2d_examples() {
        let l = sq4();
        let est = angle_fft(&steering_vector(&l, PI / 2.0, 0.0), &l, FftMode::TwoD, 512, 1).unwrap();
        assert!((est[0].dphi_a - PI / 2.0).abs() <= 2.0 * PI / 512.0);
        assert!(est[0].dphi_e.abs() <= 2.0 * PI / 512.0);
        let ones = vec![Complex64::new(1.0, 0.0); 16];
        let est = angle_fft(&ones, &l, FftMode::TwoD, 512, 1).unwrap();
        assert_eq!((est[0].dphi_a, est[0].dphi_e), (0.0, 0.0));
    }

    #[test]
    fn fft_grid_equals_beam_power() {
        for name in ["square4", "iwr6843", "ods"] {
            let l = AntennaLayout::preset(name).unwrap();
            let x: Vec<Complex64> = (0..l.len()).map(|i| Complex64::from_polar(1.0 + i as f64 * 0.1, i as f64 * 1.3)).collect();
            let fft = fft_2d_power(&x, &l.lattice().unwrap(), 32);
            let bf = evaluate_grid(&BeamPower::new(&x, &l).unwrap(), 32);
            for (a, b) in fft.data.iter().zip(&bf.data) {
                assert!((a - b).abs() < 1e-9 * b.max(1.0), "{name}");
            }
        }
    }

    #[test]
    fn fft_1d_recovers_both_phases() {
        let n = 512;
        for name in ["iwr6843", "square4", "ods", "automotive"] {
            let l = AntennaLayout::preset(name).unwrap();
            let x = steering_vector(&l, 0.8, 0.3);
            let est = angle_fft(&x, &l, FftMode::OneD, n, 1).unwrap();
            let bin = 2.0 * PI / n as f64;
            assert!((est[0].dphi_a - 0.8).abs() <= bin, "{name}: {:?}", est[0]);
            assert!((est[0].dphi_e - 0.3).abs() <= bin, "{name}: {:?}", est[0]);
        }
        let ula = AntennaLayout::rectangle("ula", 8, 1);
        assert!(matches!(angle_fft(&vec![Complex64::new(1.0, 0.0); 8], &ula, FftMode::OneD, 64, 1), Err(Error::Unsupported(_))));
        let frac = AntennaLayout::new("frac", vec![[0.0, 0.0], [0.5, 1.0]]).unwrap();
        assert!(angle_fft(&[Complex64::new(1.0, 0.0); 2], &frac, FftMode::TwoD, 64, 1).is_err());
    }

    #[test]
    fn estimators_localize_20_10_degrees() {
        let l = sq4();
        let (pa, pe) = angle_to_phase(20f64.to_radians(), 10f64.to_radians()).unwrap();
        let x = steering_vector(&l, pa, pe);
        let n = 512;
        let bin = 2.0 * PI / n as f64;
        let r = outer(&x);
        let sources: Vec<Box<dyn SpectrumSource>> = vec![
            Box::new(conventional(&r, &l).unwrap()),
            Box::new(mvdr(&r, &l, 1e-3).unwrap()),
            Box::new(music(&(&r + DMatrix::identity(16, 16) * Complex64::new(1e-3, 0.0)), &l, 1).unwrap()),
        ];
        for s in &sources {
            let e = &search(s.as_ref(), n, &SearchStrategy::default_subgrid(n), 1).unwrap().estimates[0];
            assert!((e.dphi_a - pa).abs() <= bin && (e.dphi_e - pe).abs() <= bin, "{e:?}");
        }
        let e = &angle_fft(&x, &l, FftMode::TwoD, n, 1).unwrap()[0];
        assert!((e.dphi_a - pa).abs() <= bin && (e.dphi_e - pe).abs() <= bin);
    }
}
