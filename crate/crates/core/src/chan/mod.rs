//! Frequency x antenna channel synthesis on an SRS schedule.
//!
//! Every measurement occasion carries two pilot symbols `pair_gap_s` apart.
//! The SRS periods of interest (tens of ms) are far beyond the coherence time
//! at 400 Hz Doppler, so the close pair is what makes per-path Doppler
//! identifiable (unambiguous up to `1 / (2 * pair_gap_s)` = 1 kHz by default).
//!
//! Matrices are stored row-major as `[subcarrier][antenna]`; antenna index is
//! `m * cols + n` with `m` the array row (vertical) and `n` the column.

pub mod atom;
pub mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use atom::{AtomCoords, AtomSum};

use crate::error::{PemError, Result};
use crate::scene::GeoPath;

/// Uniform planar array at the BS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig { rows: 16, cols: 16, element_spacing: 0.5 }
    }
}

impl ArrayConfig {
    pub fn n_antennas(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || !(self.element_spacing > 0.0) {
            return Err(PemError::InvalidParameter("array needs rows, cols >= 1 and spacing > 0".into()));
        }
        Ok(())
    }
}

/// Subcarrier grid and pilot-pair layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    pub pair_gap_s: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_subcarriers: 128, bandwidth_hz: 100e6, pair_gap_s: 5e-4 }
    }
}

impl GridConfig {
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// Longest delay representable without aliasing.
    pub fn max_delay_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing()
    }

    pub fn max_doppler_hz(&self) -> f64 {
        0.5 / self.pair_gap_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || !(self.bandwidth_hz > 0.0) || !(self.pair_gap_s > 0.0) {
            return Err(PemError::InvalidParameter("grid needs subcarriers >= 1, bandwidth > 0, pair gap > 0".into()));
        }
        Ok(())
    }
}

/// A propagation path in the form the synthesizer consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub gain: Complex64,
    pub delay_s: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub doppler_hz: f64,
}

impl From<&GeoPath> for Ray {
    fn from(p: &GeoPath) -> Self {
        Ray {
            gain: p.gain,
            delay_s: p.delay_s,
            azimuth_rad: p.azimuth_rad,
            elevation_rad: p.elevation_rad,
            doppler_hz: p.doppler_hz,
        }
    }
}

impl Ray {
    pub fn coords(&self, array: &ArrayConfig, grid: &GridConfig) -> AtomCoords {
        AtomCoords::from_angles(self.delay_s, self.azimuth_rad, self.elevation_rad, array, grid)
    }
}

/// How much noise to add to a synthesized measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    None,
    /// Per-entry variance = mean |H|^2 / 10^(snr/10).
    SnrDb(f64),
    /// Fixed per-entry complex variance.
    Variance(f64),
}

/// One SRS occasion: two noisy channel matrices `pair_gap_s` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub pair_gap_s: f64,
    /// Nominal SNR, `None` for noiseless synthesis.
    pub snr_db: Option<f64>,
    pub n_subcarriers: usize,
    pub n_antennas: usize,
    pub h: [Vec<Complex64>; 2],
}

impl Measurement {
    pub fn zeros(t: f64, array: &ArrayConfig, grid: &GridConfig) -> Self {
        let n = grid.n_subcarriers * array.n_antennas();
        Measurement {
            t,
            pair_gap_s: grid.pair_gap_s,
            snr_db: None,
            n_subcarriers: grid.n_subcarriers,
            n_antennas: array.n_antennas(),
            h: [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]],
        }
    }

    pub fn len(&self) -> usize {
        self.n_subcarriers * self.n_antennas
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_shape(&self, array: &ArrayConfig, grid: &GridConfig) -> Result<()> {
        if self.n_subcarriers != grid.n_subcarriers || self.n_antennas != array.n_antennas() {
            return Err(PemError::ShapeMismatch(format!(
                "measurement is {}x{}, configuration expects {}x{}",
                self.n_subcarriers,
                self.n_antennas,
                grid.n_subcarriers,
                array.n_antennas()
            )));
        }
        Ok(())
    }
}

/// Unit-modulus UPA response; element `(m, n)` has phase
/// `2 pi s (m sin(el) + n cos(el) sin(az))`, ordered row-major.
pub fn steering_vector(array: &ArrayConfig, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let s = array.element_spacing;
    atom::spatial_vector(s * elevation.sin(), s * elevation.cos() * azimuth.sin(), array.rows, array.cols)
}

fn check_rays(rays: &[Ray], grid: &GridConfig) -> Result<()> {
    let max = grid.max_delay_s();
    for r in rays {
        if !(r.delay_s >= 0.0 && r.delay_s < max) {
            return Err(PemError::DelayAliasing { delay_s: r.delay_s, max_s: max });
        }
    }
    Ok(())
}

/// Noiseless channel from a ray list, with each gain advanced by its Doppler
/// over `dt` seconds.
pub fn channel_matrix(rays: &[Ray], array: &ArrayConfig, grid: &GridConfig, dt: f64) -> Result<Vec<Complex64>> {
    check_rays(rays, grid)?;
    let mut h = vec![Complex64::new(0.0, 0.0); grid.n_subcarriers * array.n_antennas()];
    for r in rays {
        let g = r.gain * Complex64::from_polar(1.0, 2.0 * PI * r.doppler_hz * dt);
        atom::add_atom(&mut h, g, &r.coords(array, grid), array, grid);
    }
    Ok(h)
}

/// Atom-sum form of [`channel_matrix`].
pub fn channel_atoms(rays: &[Ray], array: &ArrayConfig, grid: &GridConfig, dt: f64) -> AtomSum {
    let mut sum = AtomSum::default();
    for r in rays {
        let g = r.gain * Complex64::from_polar(1.0, 2.0 * PI * r.doppler_hz * dt);
        sum.push(g, r.coords(array, grid));
    }
    sum
}

/// Synthesizes one SRS occasion at time `t` from ground-truth rays.
pub fn synthesize(rays: &[Ray], array: &ArrayConfig, grid: &GridConfig, t: f64, noise: Noise, seed: u64) -> Result<Measurement> {
    array.validate()?;
    grid.validate()?;
    let h1 = channel_matrix(rays, array, grid, 0.0)?;
    let h2 = channel_matrix(rays, array, grid, grid.pair_gap_s)?;
    let n = h1.len();
    let variance = match noise {
        Noise::None => 0.0,
        Noise::SnrDb(snr) => {
            let mean_power = (h1.iter().chain(&h2).map(|c| c.norm_sqr()).sum::<f64>()) / (2 * n) as f64;
            mean_power / 10f64.powf(snr / 10.0)
        }
        Noise::Variance(v) => {
            if !(v >= 0.0) {
                return Err(PemError::InvalidParameter("noise variance must be >= 0".into()));
            }
            v
        }
    };
    let mut h = [h1, h2];
    if variance > 0.0 {
        let sigma = (variance / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sym in h.iter_mut() {
            for c in sym.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *c += Complex64::new(re * sigma, im * sigma);
            }
        }
    }
    Ok(Measurement {
        t,
        pair_gap_s: grid.pair_gap_s,
        snr_db: match noise {
            Noise::SnrDb(s) => Some(s),
            _ => None,
        },
        n_subcarriers: grid.n_subcarriers,
        n_antennas: array.n_antennas(),
        h,
    })
}

/// Occasion times `t0, t0 + period, ...` up to `t0 + duration` inclusive.
pub fn srs_schedule(t0: f64, period: f64, duration: f64) -> Result<Vec<f64>> {
    if !(period > 0.0) {
        return Err(PemError::InvalidParameter(format!("SRS period must be > 0, got {period}")));
    }
    if !(duration >= 0.0) {
        return Err(PemError::InvalidParameter("SRS duration must be >= 0".into()));
    }
    let n = (duration / period + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| t0 + i as f64 * period).collect())
}
