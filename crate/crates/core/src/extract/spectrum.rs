//! Zero-padded delay x angle correlation cube.
//!
//! Bin `(p, q, r)` holds `<atom(x, u, v), h>` with `x = p / nd`,
//! `u = q / nu` and `v = r / nv` (angle frequencies wrapped to [-0.5, 0.5)).
//! The delay axis is an inverse DFT over subcarriers, the two angle axes a
//! forward DFT over array rows (`u`, elevation) and columns (`v`, azimuth).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::chan::atom::AtomCoords;
use crate::chan::{ArrayConfig, Measurement};
use crate::error::{PemError, Result};

/// Normalized power over (delay, u, v) bins; a unit on-grid path peaks at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub n_delay: usize,
    pub n_u: usize,
    pub n_v: usize,
    pub data: Vec<f64>,
}

fn wrap_half(f: f64) -> f64 {
    f - f.round()
}

impl Spectrum {
    pub fn get(&self, p: usize, q: usize, r: usize) -> f64 {
        self.data[(p * self.n_u + q) * self.n_v + r]
    }

    pub fn argmax(&self) -> Option<((usize, usize, usize), f64)> {
        let (i, v) = self.data.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
        Some((self.unravel(i), *v))
    }

    fn unravel(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.n_u * self.n_v), (i / self.n_v) % self.n_u, i % self.n_v)
    }

    pub fn bin_coords(&self, p: usize, q: usize, r: usize) -> AtomCoords {
        AtomCoords { x: p as f64 / self.n_delay as f64, u: wrap_half(q as f64 / self.n_u as f64), v: wrap_half(r as f64 / self.n_v as f64) }
    }

    /// Nearest bin to `c`.
    pub fn bin_of(&self, c: AtomCoords) -> (usize, usize, usize) {
        let idx = |f: f64, n: usize| ((f.rem_euclid(1.0) * n as f64).round() as usize) % n;
        (idx(c.x, self.n_delay), idx(c.u, self.n_u), idx(c.v, self.n_v))
    }

    /// Strict-or-equal maximum over the 26 cyclic neighbours.
    pub fn is_local_max(&self, p: usize, q: usize, r: usize) -> bool {
        let v = self.get(p, q, r);
        let step = |i: usize, d: isize, n: usize| ((i as isize + d).rem_euclid(n as isize)) as usize;
        for dp in -1..=1 {
            for dq in -1..=1 {
                for dr in -1..=1 {
                    if (dp, dq, dr) == (0, 0, 0) {
                        continue;
                    }
                    if self.get(step(p, dp, self.n_delay), step(q, dq, self.n_u), step(r, dr, self.n_v)) > v {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Local maxima at or above `floor`, strongest first.
    pub fn peaks(&self, floor: f64) -> Vec<((usize, usize, usize), f64)> {
        let mut out: Vec<_> = (0..self.data.len())
            .filter(|&i| self.data[i] >= floor)
            .map(|i| (self.unravel(i), self.data[i]))
            .filter(|&((p, q, r), _)| self.is_local_max(p, q, r))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Spectrum of the first pilot symbol of `meas`.
pub fn spectrum(meas: &Measurement, array: &ArrayConfig, zero_pad: usize) -> Result<Spectrum> {
    if zero_pad == 0 {
        return Err(PemError::InvalidParameter("zero_pad must be >= 1".into()));
    }
    if meas.n_antennas != array.n_antennas() {
        return Err(PemError::ShapeMismatch("measurement antenna count differs from the array".into()));
    }
    let mut cube = CubeFft::new(meas.n_subcarriers, array.rows, array.cols, zero_pad);
    cube.correlate(&meas.h[0]);
    let mut data = Vec::new();
    cube.power_into(&mut data);
    Ok(cube.to_spectrum(data))
}

pub(crate) struct CubeFft {
    nsc: usize,
    rows: usize,
    cols: usize,
    nd: usize,
    nu: usize,
    nv: usize,
    fft_d: Arc<dyn Fft<f64>>,
    fft_u: Arc<dyn Fft<f64>>,
    fft_v: Arc<dyn Fft<f64>>,
    lines: Vec<Complex64>,
    plane: Vec<Complex64>,
    cube: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl CubeFft {
    pub(crate) fn new(nsc: usize, rows: usize, cols: usize, pad: usize) -> Self {
        let (nd, nu, nv) = (nsc * pad, rows * pad, cols * pad);
        let mut planner = FftPlanner::new();
        let fft_d = planner.plan_fft_inverse(nd);
        let fft_u = planner.plan_fft_forward(nu);
        let fft_v = planner.plan_fft_forward(nv);
        let scratch_len = [&fft_d, &fft_u, &fft_v].iter().map(|f| f.get_inplace_scratch_len()).max().unwrap_or(0);
        let z = Complex64::new(0.0, 0.0);
        CubeFft {
            nsc,
            rows,
            cols,
            nd,
            nu,
            nv,
            fft_d,
            fft_u,
            fft_v,
            lines: vec![z; rows * cols * nd],
            plane: vec![z; nu * nv],
            cube: vec![z; nd * nu * nv],
            scratch: vec![z; scratch_len],
        }
    }

    /// Fills the cube with `<atom(bin), h>` for every bin.
    pub(crate) fn correlate(&mut self, h: &[Complex64]) {
        let (nd, nu, nv) = (self.nd, self.nu, self.nv);
        let na = self.rows * self.cols;
        let z = Complex64::new(0.0, 0.0);

        self.lines.fill(z);
        for (k, row) in h.chunks_exact(na).enumerate().take(self.nsc) {
            for (a, v) in row.iter().enumerate() {
                self.lines[a * nd + k] = *v;
            }
        }
        self.fft_d.process_with_scratch(&mut self.lines, &mut self.scratch);

        self.cube.fill(z);
        for a in 0..na {
            let (m, n) = (a / self.cols, a % self.cols);
            let line = &self.lines[a * nd..(a + 1) * nd];
            for (p, v) in line.iter().enumerate() {
                self.cube[(p * nu + m) * nv + n] = *v;
            }
        }

        for p in 0..nd {
            let base = p * nu * nv;
            // Rows beyond the array are zero; their v-transform stays zero.
            self.fft_v.process_with_scratch(&mut self.cube[base..base + self.rows * nv], &mut self.scratch);
            for q in 0..nu {
                for r in 0..nv {
                    self.plane[r * nu + q] = self.cube[base + q * nv + r];
                }
            }
            self.fft_u.process_with_scratch(&mut self.plane, &mut self.scratch);
            for r in 0..nv {
                for q in 0..nu {
                    self.cube[base + q * nv + r] = self.plane[r * nu + q];
                }
            }
        }
    }

    fn scale(&self) -> f64 {
        let n = (self.nsc * self.rows * self.cols) as f64;
        1.0 / (n * n)
    }

    pub(crate) fn power_into(&self, out: &mut Vec<f64>) {
        let s = self.scale();
        out.clear();
        out.extend(self.cube.iter().map(|c| c.norm_sqr() * s));
    }

    pub(crate) fn power_argmax(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in self.cube.iter().enumerate() {
            let v = c.norm_sqr();
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0, best.1 * self.scale())
    }

    pub(crate) fn bin_coords(&self, i: usize) -> AtomCoords {
        let (p, q, r) = (i / (self.nu * self.nv), (i / self.nv) % self.nu, i % self.nv);
        AtomCoords { x: p as f64 / self.nd as f64, u: wrap_half(q as f64 / self.nu as f64), v: wrap_half(r as f64 / self.nv as f64) }
    }

    pub(crate) fn to_spectrum(&self, data: Vec<f64>) -> Spectrum {
        Spectrum { n_delay: self.nd, n_u: self.nu, n_v: self.nv, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chan::{synthesize, GridConfig, Noise, Ray};
    use crate::extract::project;

    fn on_grid_ray(c: AtomCoords, gain: f64, array: &ArrayConfig, grid: &GridConfig) -> Ray {
        let (delay_s, azimuth_rad, elevation_rad) = c.to_angles(array, grid);
        Ray { gain: Complex64::new(gain, 0.0), delay_s, azimuth_rad, elevation_rad, doppler_hz: 0.0 }
    }

    #[test]
    fn cube_matches_direct_projection() {
        let array = ArrayConfig { rows: 3, cols: 5, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 8, bandwidth_hz: 8e6, pair_gap_s: 5e-4 };
        let ray = on_grid_ray(AtomCoords { x: 0.13, u: 0.21, v: -0.3 }, 1.0, &array, &grid);
        let m = synthesize(&[ray], &array, &grid, 0.0, Noise::SnrDb(0.0), 3).unwrap();
        let mut cube = CubeFft::new(8, 3, 5, 2);
        cube.correlate(&m.h[0]);
        for i in [0, 7, 100, 555, 8 * 2 * 6 * 10 - 1] {
            let direct = project(&m.h[0], cube.bin_coords(i), &array, &grid);
            assert!((cube.cube[i] - direct).norm() < 1e-9, "bin {i}");
        }
    }

    #[test]
    fn unit_on_grid_path_peaks_at_one_on_its_bin() {
        let array = ArrayConfig { rows: 8, cols: 8, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 32, bandwidth_hz: 3.2e7, pair_gap_s: 5e-4 };
        let c = AtomCoords { x: 21.0 / 128.0, u: -7.0 / 32.0, v: 3.0 / 32.0 };
        let m = synthesize(&[on_grid_ray(c, 1.0, &array, &grid)], &array, &grid, 0.0, Noise::None, 0).unwrap();
        let s = spectrum(&m, &array, 4).unwrap();
        let (bin, peak) = s.argmax().unwrap();
        assert!((peak - 1.0).abs() < 1e-12);
        assert_eq!(bin, s.bin_of(c));
        assert!(s.data.iter().all(|v| *v <= 1.0 + 1e-12));
    }

    #[test]
    fn zero_channel_has_zero_spectrum() {
        let array = ArrayConfig { rows: 4, cols: 4, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 8, bandwidth_hz: 8e6, pair_gap_s: 5e-4 };
        let m = Measurement::zeros(0.0, &array, &grid);
        assert!(spectrum(&m, &array, 2).unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_paths_five_delay_bins_apart_give_two_peaks() {
        let array = ArrayConfig { rows: 8, cols: 8, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 64, bandwidth_hz: 6.4e7, pair_gap_s: 5e-4 };
        let a = AtomCoords { x: 10.0 / 64.0, u: 0.125, v: -0.25 };
        let b = AtomCoords { x: 15.0 / 64.0, ..a };
        let rays = [on_grid_ray(a, 1.0, &array, &grid), on_grid_ray(b, 1.0, &array, &grid)];
        let m = synthesize(&rays, &array, &grid, 0.0, Noise::None, 0).unwrap();
        let s = spectrum(&m, &array, 4).unwrap();
        let peaks = s.peaks(0.8);
        assert_eq!(peaks.len(), 2);
        let bins: Vec<_> = peaks.iter().map(|p| p.0).collect();
        assert!(bins.contains(&s.bin_of(a)) && bins.contains(&s.bin_of(b)));
    }
}
