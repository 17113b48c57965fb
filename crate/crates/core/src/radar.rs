//! Radar configuration, virtual-array geometry and the angle / phase / coordinate
//! conversions used by every later stage.
//!
//! Phases are the inter-element phase differences `dphi_a`, `dphi_e` between
//! neighbouring receivers spaced half a wavelength apart. They relate to the
//! azimuth/elevation angles via `dphi_e = pi sin(theta_e)` and
//! `dphi_a = pi sin(theta_a) cos(theta_e)`, which makes the Cartesian
//! conversion linear in the phases.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s), exact.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW waveform and frame timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChirpConfig {
    /// Chirp start frequency (Hz).
    pub f0: f64,
    /// Chirp slope (Hz/s).
    pub slope: f64,
    /// Ramp duration (s).
    pub chirp_duration: f64,
    /// Complex ADC sampling rate (samples/s).
    pub adc_rate: f64,
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    /// Start-to-start interval between chirps (s).
    pub chirp_interval: f64,
    pub frame_duration: f64,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl ChirpConfig {
    /// 77 GHz start, 40 MHz/us, 100 us ramps sampled at 15 MHz (1500 samples),
    /// 50 chirps at 1 ms spacing in a 50 ms frame.
    pub fn baseline() -> Self {
        Self {
            f0: 77e9,
            slope: 40e12,
            chirp_duration: 100e-6,
            adc_rate: 15e6,
            samples_per_chirp: 1500,
            chirps_per_frame: 50,
            chirp_interval: 1e-3,
            frame_duration: 50e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidChirp(msg));
        let reals = [
            ("f0", self.f0),
            ("slope", self.slope),
            ("chirp_duration", self.chirp_duration),
            ("adc_rate", self.adc_rate),
            ("chirp_interval", self.chirp_interval),
            ("frame_duration", self.frame_duration),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if self.samples_per_chirp == 0 || self.chirps_per_frame == 0 {
            return bad("sample and chirp counts must be positive".into());
        }
        // Relative slack absorbs the rounding in products like 100e-6 * 15e6.
        let slack = 1.0 + 1e-9;
        let max_samples = self.chirp_duration * self.adc_rate;
        if self.samples_per_chirp as f64 > max_samples * slack {
            return bad(format!(
                "{} samples do not fit in a {} s ramp at {} samples/s",
                self.samples_per_chirp, self.chirp_duration, self.adc_rate
            ));
        }
        if self.chirp_interval * slack < self.chirp_duration {
            return bad("chirp_interval is shorter than chirp_duration".into());
        }
        if self.frame_duration * slack < self.chirps_per_frame as f64 * self.chirp_interval {
            return bad("frame_duration is shorter than chirps_per_frame * chirp_interval".into());
        }
        let b = self.bandwidth();
        if !(b.is_finite() && b > 0.0) {
            return bad(format!("swept bandwidth {b} is not finite and positive"));
        }
        Ok(())
    }

    /// Bandwidth actually swept while the ADC samples (Hz).
    pub fn bandwidth(&self) -> f64 {
        self.slope * self.samples_per_chirp as f64 / self.adc_rate
    }

    /// Wavelength at the chirp start frequency; all array spacing uses this.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f0
    }

    /// Time of the acquisition midpoint, used as the ground-truth instant for moving scenes.
    pub fn frame_midpoint(&self) -> f64 {
        ((self.chirps_per_frame - 1) as f64 * self.chirp_interval + self.chirp_duration) / 2.0
    }
}

/// Standard FMCW quantities derived from a [`ChirpConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub wavelength: f64,
    pub bandwidth: f64,
    pub range_resolution: f64,
    /// Largest range whose beat frequency stays below the complex sampling rate.
    pub max_range: f64,
    pub velocity_resolution: f64,
    pub max_unambiguous_velocity: f64,
}

pub fn derive_params(cfg: &ChirpConfig) -> DerivedParams {
    let wavelength = cfg.wavelength();
    let bandwidth = cfg.bandwidth();
    DerivedParams {
        wavelength,
        bandwidth,
        range_resolution: SPEED_OF_LIGHT / (2.0 * bandwidth),
        max_range: cfg.adc_rate * SPEED_OF_LIGHT / (2.0 * cfg.slope),
        velocity_resolution: wavelength
            / (2.0 * cfg.chirps_per_frame as f64 * cfg.chirp_interval),
        max_unambiguous_velocity: wavelength / (4.0 * cfg.chirp_interval),
    }
}

/// Virtual receiver array. Positions are `(azimuth, elevation)` indices in units of
/// half a wavelength; presets are integer lattices but fractional positions are allowed.
///
/// Physically, index `(a, e)` sits at `(-a, 0, -e) * lambda/2` in the radar frame
/// (x right, y boresight, z up) with the transmitter at the origin. With the IF phase
/// convention `+2 pi f0 tau` this orientation makes a source at positive `x` produce a
/// positive `dphi_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaLayout {
    pub name: String,
    pub positions: Vec<[f64; 2]>,
}

/// Preset names accepted by [`AntennaLayout::preset`], in sweep-column order `a` to `g`.
pub const PRESET_NAMES: [&str; 7] = [
    "square2",
    "square3",
    "square4",
    "square6",
    "iwr6843",
    "ods",
    "automotive",
];

impl AntennaLayout {
    pub fn new(name: impl Into<String>, positions: Vec<[f64; 2]>) -> Result<Self> {
        let layout = Self { name: name.into(), positions };
        layout.validate()?;
        Ok(layout)
    }

    pub fn from_lattice(name: impl Into<String>, cells: &[(i32, i32)]) -> Result<Self> {
        Self::new(name, cells.iter().map(|&(a, e)| [a as f64, e as f64]).collect())
    }

    /// Full `na x ne` rectangle.
    pub fn rectangle(name: impl Into<String>, na: usize, ne: usize) -> Self {
        let positions = (0..ne)
            .flat_map(|e| (0..na).map(move |a| [a as f64, e as f64]))
            .collect();
        Self { name: name.into(), positions }
    }

    /// Named preset. Letters `a`..`g` are accepted as aliases in [`PRESET_NAMES`] order.
    ///
    /// The TI layouts are transcribed from virtual-array drawings and are approximate.
    pub fn preset(name: &str) -> Result<Self> {
        let canonical = match name {
            "a" => "square2",
            "b" => "square3",
            "c" => "square4",
            "d" => "square6",
            "e" => "iwr6843",
            "f" => "ods",
            "g" => "automotive",
            other => other,
        };
        let layout = match canonical {
            "square2" => Self::rectangle(canonical, 2, 2),
            "square3" => Self::rectangle(canonical, 3, 3),
            "square4" => Self::rectangle(canonical, 4, 4),
            "square6" => Self::rectangle(canonical, 6, 6),
            "iwr6843" => {
                // 8 azimuth receivers in one row, 4 elevation receivers one row up,
                // shifted by two azimuth positions.
                let mut cells: Vec<(i32, i32)> = (0..8).map(|a| (a, 0)).collect();
                cells.extend((2..6).map(|a| (a, 1)));
                Self::from_lattice(canonical, &cells)?
            }
            "ods" => {
                // Near-square 12-element array: two full rows of 4, two half rows of 2.
                let mut cells: Vec<(i32, i32)> = Vec::new();
                cells.extend((2..4).map(|a| (a, 0)));
                cells.extend((2..4).map(|a| (a, 1)));
                cells.extend((0..4).map(|a| (a, 2)));
                cells.extend((0..4).map(|a| (a, 3)));
                Self::from_lattice(canonical, &cells)?
            }
            "automotive" => {
                // Wide azimuth aperture with a short elevation row.
                let mut cells: Vec<(i32, i32)> = (0..12).map(|a| (a, 0)).collect();
                cells.extend((4..8).map(|a| (a, 1)));
                Self::from_lattice(canonical, &cells)?
            }
            other => {
                return Err(Error::InvalidLayout(format!(
                    "unknown preset `{other}` (expected one of {PRESET_NAMES:?} or a..g)"
                )))
            }
        };
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::InvalidLayout("no receivers".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidLayout(format!("receiver {i} has non-finite position")));
            }
            if self.positions[..i].contains(p) {
                return Err(Error::InvalidLayout(format!("duplicate receiver position {p:?}")));
            }
        }
        Ok(())
    }

    /// 2D angle estimation needs two distinct azimuth and two distinct elevation positions.
    pub fn validate_2d(&self) -> Result<()> {
        self.validate()?;
        let distinct = |axis: usize| {
            let mut v: Vec<f64> = self.positions.iter().map(|p| p[axis]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        if distinct(0) < 2 || distinct(1) < 2 {
            return Err(Error::InvalidLayout(format!(
                "`{}` needs at least 2 distinct azimuth and elevation positions for 2D AoA",
                self.name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Integer lattice coordinates, if every position is an integer.
    pub fn lattice(&self) -> Option<Vec<(i32, i32)>> {
        self.positions
            .iter()
            .map(|p| {
                let (a, e) = (p[0].round(), p[1].round());
                (a == p[0] && e == p[1]).then_some((a as i32, e as i32))
            })
            .collect()
    }

    /// Receiver positions in metres in the radar frame.
    pub fn receiver_positions(&self, wavelength: f64) -> Vec<[f64; 3]> {
        let half = wavelength / 2.0;
        self.positions
            .iter()
            .map(|p| [-p[0] * half, 0.0, -p[1] * half])
            .collect()
    }

    /// Indices of the azimuth reference row: the elevation index with the most receivers
    /// (lowest elevation wins ties).
    pub fn azimuth_row(&self) -> Vec<usize> {
        let mut rows: Vec<f64> = self.positions.iter().map(|p| p[1]).collect();
        rows.sort_by(f64::total_cmp);
        rows.dedup();
        let mut best: Option<(usize, f64)> = None;
        for e in rows {
            let count = self.positions.iter().filter(|p| p[1] == e).count();
            if best.map_or(true, |(c, _)| count > c) {
                best = Some((count, e));
            }
        }
        let e = best.map(|(_, e)| e).unwrap_or(0.0);
        (0..self.positions.len()).filter(|&i| self.positions[i][1] == e).collect()
    }
}

/// Steering vector for the layout: entry `(a, e)` is `exp(j (a dphi_a + e dphi_e))`.
pub fn steering_vector(layout: &AntennaLayout, dphi_a: f64, dphi_e: f64) -> Vec<Complex64> {
    layout
        .positions
        .iter()
        .map(|p| Complex64::from_polar(1.0, p[0] * dphi_a + p[1] * dphi_e))
        .collect()
}

/// Convert azimuth/elevation angles (rad) into inter-element phase differences.
pub fn angle_to_phase(theta_a: f64, theta_e: f64) -> Result<(f64, f64)> {
    let half_pi = PI / 2.0;
    if !(theta_a.abs() < half_pi && theta_e.abs() < half_pi) {
        return Err(Error::AngleOutOfView { theta_a, theta_e });
    }
    Ok((PI * theta_a.sin() * theta_e.cos(), PI * theta_e.sin()))
}

/// Convert a range and phase pair into radar-frame Cartesian coordinates.
pub fn phase_to_xyz(d: f64, dphi_a: f64, dphi_e: f64) -> Result<[f64; 3]> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidGeometry(format!("range {d} must be positive")));
    }
    if !(dphi_a.is_finite() && dphi_e.is_finite()) {
        return Err(Error::NonFinite("phase"));
    }
    let x = d * dphi_a / PI;
    let z = d * dphi_e / PI;
    let y2 = d * d - x * x - z * z;
    if y2 < 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "lateral offset exceeds range (x={x}, z={z}, d={d})"
        )));
    }
    Ok([x, y2.sqrt(), z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn steering_boresight_is_all_ones() {
        let layout = AntennaLayout::preset("square4").unwrap();
        let s = steering_vector(&layout, 0.0, 0.0);
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|c| *c == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn steering_pair_at_pi() {
        let layout = AntennaLayout::rectangle("pair", 2, 1);
        let s = steering_vector(&layout, PI, 0.0);
        assert_abs_diff_eq!(s[0].re, 1.0);
        assert_abs_diff_eq!(s[1].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn steering_quarter_turn_cycles() {
        let layout = AntennaLayout::preset("square4").unwrap();
        let s = steering_vector(&layout, PI / 2.0, 0.0);
        let cycle = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        for (i, p) in layout.positions.iter().enumerate() {
            let expect = cycle[p[0] as usize];
            assert!((s[i] - expect).norm() < 1e-12, "{i}: {} vs {expect}", s[i]);
        }
    }

    #[test]
    fn angle_to_phase_examples() {
        assert_eq!(angle_to_phase(0.0, 0.0).unwrap(), (0.0, 0.0));
        let (a, e) = angle_to_phase(PI / 6.0, 0.0).unwrap();
        assert_abs_diff_eq!(a, PI / 2.0, epsilon = 1e-12);
        assert_eq!(e, 0.0);
        let (a, e) = angle_to_phase(PI / 6.0, PI / 6.0).unwrap();
        assert_abs_diff_eq!(a, 1.3603495231756633, epsilon = 1e-12);
        assert_abs_diff_eq!(e, PI / 2.0, epsilon = 1e-12);
        assert!(angle_to_phase(PI / 2.0, 0.0).is_err());
        assert!(angle_to_phase(0.0, -2.0).is_err());
    }

    #[test]
    fn phase_to_xyz_examples() {
        assert_eq!(phase_to_xyz(2.0, 0.0, 0.0).unwrap(), [0.0, 2.0, 0.0]);
        let p = phase_to_xyz(2.0, PI / 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 3f64.sqrt(), epsilon = 1e-12);
        let p = phase_to_xyz(1.0, PI / 4.0, PI / 4.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.875f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.25, epsilon = 1e-15);
        assert!(phase_to_xyz(1.0, 3.0, 3.0).is_err());
        assert!(phase_to_xyz(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn baseline_derived_params() {
        let cfg = ChirpConfig::baseline();
        cfg.validate().unwrap();
        let d = derive_params(&cfg);
        assert_abs_diff_eq!(d.bandwidth, 4e9, epsilon = 1e-3);
        assert_abs_diff_eq!(d.range_resolution, 0.0375, epsilon = 1e-4);
        assert_abs_diff_eq!(d.max_unambiguous_velocity, 0.973, epsilon = 1e-3);
        assert_abs_diff_eq!(d.velocity_resolution, 0.0389, epsilon = 1e-4);
    }

    #[test]
    fn invalid_chirps_rejected() {
        let mut cfg = ChirpConfig::baseline();
        cfg.samples_per_chirp = 1501;
        assert!(cfg.validate().is_err());
        let mut cfg = ChirpConfig::baseline();
        cfg.slope = f64::INFINITY;
        assert!(cfg.validate().is_err());
        let mut cfg = ChirpConfig::baseline();
        cfg.frame_duration = 10e-3;
        assert!(cfg.validate().is_err());
        let mut cfg = ChirpConfig::baseline();
        cfg.chirp_interval = 50e-6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_are_valid_2d() {
        for name in PRESET_NAMES {
            let l = AntennaLayout::preset(name).unwrap();
            l.validate_2d().unwrap();
            assert!(l.lattice().is_some(), "{name}");
        }
        assert_eq!(AntennaLayout::preset("e").unwrap().len(), 12);
        assert_eq!(AntennaLayout::preset("f").unwrap().len(), 12);
        assert!(AntennaLayout::preset("nope").is_err());
        assert!(AntennaLayout::new("dup", vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(AntennaLayout::rectangle("row", 4, 1).validate_2d().is_err());
    }

    #[test]
    fn azimuth_row_picks_widest_row() {
        let l = AntennaLayout::preset("iwr6843").unwrap();
        assert_eq!(l.azimuth_row(), (0..8).collect::<Vec<_>>());
        let l = AntennaLayout::preset("ods").unwrap();
        assert_eq!(l.azimuth_row().len(), 4);
    }

    proptest! {
        #[test]
        fn steering_entries_are_unit(a in -PI..PI, e in -PI..PI) {
            let layout = AntennaLayout::preset("iwr6843").unwrap();
            for c in steering_vector(&layout, a, e) {
                prop_assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn phase_xyz_round_trip(
            d in 0.1f64..50.0,
            ta in -80f64..80.0,
            te in -80f64..80.0,
        ) {
            let (ta, te) = (ta.to_radians(), te.to_radians());
            let (pa, pe) = angle_to_phase(ta, te).unwrap();
            let p = phase_to_xyz(d, pa, pe).unwrap();
            let direct = [d * te.cos() * ta.sin(), d * te.cos() * ta.cos(), d * te.sin()];
            for k in 0..3 {
                prop_assert!((p[k] - direct[k]).abs() <= 1e-9 * d);
            }
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            prop_assert!((r2 - d * d).abs() <= 1e-12 * d * d);
        }
    }
}
