//! Path extraction from one measurement occasion.
//!
//! Newtonized matching pursuit over the separable delay x UPA dictionary:
//! coarse peak from a zero-padded 3-D transform of the residual, analytic
//! Newton ascent on `|<atom(x, u, v), r>|^2`, then a joint least-squares gain
//! solve against every atom found so far. After the greedy pass each atom is
//! re-refined against the residual of the others (`refine_rounds` cycles).
//! Per-path Doppler comes from the LS gains of the two pilot symbols.

mod spectrum;

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use spectrum::{spectrum, Spectrum};

use crate::chan::atom::{add_atom, atom_inner, AtomCoords};
use crate::chan::{ArrayConfig, GridConfig, Measurement, Ray};
use crate::error::{PemError, Result};
use spectrum::CubeFft;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub max_paths: usize,
    /// Stop once the residual peak is this far below the first peak.
    pub stop_threshold_db: f64,
    pub zero_pad: usize,
    pub newton_steps: usize,
    pub refine_rounds: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { max_paths: 8, stop_threshold_db: 25.0, zero_pad: 4, newton_steps: 12, refine_rounds: 2 }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_paths == 0 || self.zero_pad == 0 {
            return Err(PemError::InvalidParameter("extraction needs max_paths >= 1 and zero_pad >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters of one extracted path at the measurement instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFeature {
    pub delay_s: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub gain: Complex64,
    pub doppler_hz: f64,
    /// Residual energy left by the whole extraction, as a fraction of the input.
    pub residual_power_frac: f64,
}

impl PathFeature {
    pub fn power_db(&self) -> f64 {
        10.0 * self.gain.norm_sqr().max(1e-300).log10()
    }

    pub fn ray(&self) -> Ray {
        Ray {
            gain: self.gain,
            delay_s: self.delay_s,
            azimuth_rad: self.azimuth_rad,
            elevation_rad: self.elevation_rad,
            doppler_hz: self.doppler_hz,
        }
    }
}

/// Result of one extraction, with the greedy residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub features: Vec<PathFeature>,
    /// Residual energy of the first symbol: input, then after each greedy step.
    pub residual_trace: Vec<f64>,
}

/// Value, gradient and Hessian of `z(c) = <atom(c), h>` in `(x, u, v)`.
#[derive(Debug, Clone, Copy)]
struct Derivs {
    z: Complex64,
    d: [Complex64; 3],
    dd: [[Complex64; 3]; 3],
}

/// Reusable extraction engine; holds FFT plans and scratch for one shape.
pub struct Extractor {
    array: ArrayConfig,
    grid: GridConfig,
    config: ExtractConfig,
    cube: CubeFft,
    spec: Vec<f64>,
}

impl Extractor {
    pub fn new(array: ArrayConfig, grid: GridConfig, config: ExtractConfig) -> Result<Self> {
        array.validate()?;
        grid.validate()?;
        config.validate()?;
        let cube = CubeFft::new(grid.n_subcarriers, array.rows, array.cols, config.zero_pad);
        Ok(Extractor { array, grid, config, cube, spec: Vec::new() })
    }

    pub fn config(&self) -> &ExtractConfig {
        &self.config
    }

    pub fn extract(&mut self, meas: &Measurement) -> Result<Vec<PathFeature>> {
        Ok(self.run(meas)?.features)
    }

    pub fn run(&mut self, meas: &Measurement) -> Result<Extraction> {
        meas.check_shape(&self.array, &self.grid)?;
        let (array, grid) = (self.array, self.grid);
        let h1 = &meas.h[0];
        let e0 = energy(h1);
        let mut trace = vec![e0];
        if !(e0 > 0.0) {
            return Ok(Extraction { features: Vec::new(), residual_trace: trace });
        }

        let mut residual = h1.clone();
        let mut atoms: Vec<AtomCoords> = Vec::new();
        let mut b1: Vec<Complex64> = Vec::new();
        let mut gains: Vec<Complex64> = Vec::new();
        let mut first_peak = 0.0;

        for it in 0..self.config.max_paths {
            self.cube.correlate(&residual);
            let (idx, peak) = self.cube.power_argmax();
            if it == 0 {
                first_peak = peak;
            }
            if !(peak > 0.0) || 10.0 * (first_peak / peak).log10() >= self.config.stop_threshold_db {
                break;
            }
            let c = self.refine(&residual, self.cube.bin_coords(idx));
            atoms.push(c);
            b1.push(project(h1, c, &array, &grid));
            match solve_gains(&atoms, &b1, &array, &grid) {
                Some(g) => gains = g,
                None => {
                    atoms.pop();
                    b1.pop();
                    break;
                }
            }
            residual = residual_of(h1, &atoms, &gains, &array, &grid);
            let e = energy(&residual);
            if e >= *trace.last().unwrap() {
                // No progress: the new atom only re-explains existing energy.
                atoms.pop();
                b1.pop();
                gains = solve_gains(&atoms, &b1, &array, &grid).unwrap_or_default();
                residual = residual_of(h1, &atoms, &gains, &array, &grid);
                break;
            }
            trace.push(e);
        }

        for _ in 0..self.config.refine_rounds {
            if atoms.len() < 2 {
                break;
            }
            for i in 0..atoms.len() {
                let mut r = residual.clone();
                add_atom(&mut r, gains[i], &atoms[i], &array, &grid);
                let c = self.refine(&r, atoms[i]);
                atoms[i] = c;
                b1[i] = project(h1, c, &array, &grid);
                let Some(g) = solve_gains(&atoms, &b1, &array, &grid) else { break };
                gains = g;
                residual = residual_of(h1, &atoms, &gains, &array, &grid);
            }
        }

        let b2: Vec<Complex64> = atoms.iter().map(|c| project(&meas.h[1], *c, &array, &grid)).collect();
        let gains2 = solve_gains(&atoms, &b2, &array, &grid).unwrap_or_else(|| gains.clone());
        let frac = energy(&residual) / e0;
        let mut features: Vec<PathFeature> = atoms
            .iter()
            .zip(gains.iter().zip(&gains2))
            .filter(|(_, (g, _))| g.norm() > 0.0)
            .map(|(c, (g1, g2))| {
                let wrapped = AtomCoords { x: c.x.rem_euclid(1.0), ..*c };
                let (delay_s, azimuth_rad, elevation_rad) = wrapped.to_angles(&array, &grid);
                PathFeature {
                    delay_s,
                    azimuth_rad,
                    elevation_rad,
                    gain: *g1,
                    doppler_hz: (g2 * g1.conj()).arg() / (2.0 * PI * meas.pair_gap_s),
                    residual_power_frac: frac,
                }
            })
            .collect();
        features.sort_by(|a, b| b.gain.norm().total_cmp(&a.gain.norm()));
        Ok(Extraction { features, residual_trace: trace })
    }

    /// Spectrum of the first symbol with this engine's padding.
    pub fn spectrum(&mut self, meas: &Measurement) -> Result<Spectrum> {
        meas.check_shape(&self.array, &self.grid)?;
        self.cube.correlate(&meas.h[0]);
        self.cube.power_into(&mut self.spec);
        Ok(self.cube.to_spectrum(std::mem::take(&mut self.spec)))
    }

    /// Newton ascent on `|<atom(c), r>|^2`, at most one native bin per step
    /// and axis, with step halving; stops where a step cannot improve.
    fn refine(&self, r: &[Complex64], mut c: AtomCoords) -> AtomCoords {
        let (array, grid) = (&self.array, &self.grid);
        let bins = [1.0 / grid.n_subcarriers as f64, 1.0 / array.rows as f64, 1.0 / array.cols as f64];
        let mut d = derivs(r, c, array, grid);
        let mut f = d.z.norm_sqr();
        for _ in 0..self.config.newton_steps {
            let mut g = Vector3::zeros();
            let mut hess = Matrix3::zeros();
            for i in 0..3 {
                g[i] = 2.0 * (d.z.conj() * d.d[i]).re;
                for j in 0..3 {
                    hess[(i, j)] = 2.0 * (d.d[i].conj() * d.d[j] + d.z.conj() * d.dd[i][j]).re;
                }
            }
            // Off the peak's concave cap: per-axis Newton where the curvature
            // is negative, a quarter-bin uphill step elsewhere.
            let mut step = match (-hess).cholesky() {
                Some(chol) => chol.solve(&g),
                None => Vector3::from_fn(|i, _| {
                    if hess[(i, i)] < 0.0 {
                        -g[i] / hess[(i, i)]
                    } else {
                        0.25 * bins[i] * g[i].signum()
                    }
                }),
            };
            for i in 0..3 {
                step[i] = step[i].clamp(-bins[i], bins[i]);
            }
            if step.amax() < 1e-15 {
                break;
            }
            let mut accepted = false;
            for _ in 0..4 {
                let c2 = AtomCoords { x: c.x + step[0], u: c.u + step[1], v: c.v + step[2] };
                let d2 = derivs(r, c2, array, grid);
                let f2 = d2.z.norm_sqr();
                if f2 >= f {
                    c = c2;
                    d = d2;
                    f = f2;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        c
    }
}

/// One-shot extraction with default engine settings.
pub fn extract_paths(
    meas: &Measurement,
    array: &ArrayConfig,
    grid: &GridConfig,
    max_paths: usize,
    stop_threshold_db: f64,
) -> Result<Vec<PathFeature>> {
    let config = ExtractConfig { max_paths, stop_threshold_db, ..ExtractConfig::default() };
    Extractor::new(*array, *grid, config)?.extract(meas)
}

fn energy(h: &[Complex64]) -> f64 {
    h.iter().map(|c| c.norm_sqr()).sum()
}

fn residual_of(h: &[Complex64], atoms: &[AtomCoords], gains: &[Complex64], array: &ArrayConfig, grid: &GridConfig) -> Vec<Complex64> {
    let mut r = h.to_vec();
    for (c, g) in atoms.iter().zip(gains) {
        add_atom(&mut r, -g, c, array, grid);
    }
    r
}

/// Least-squares gains `G g = b` with the closed-form Gram matrix.
pub(crate) fn solve_gains(atoms: &[AtomCoords], b: &[Complex64], array: &ArrayConfig, grid: &GridConfig) -> Option<Vec<Complex64>> {
    let k = atoms.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let gram = DMatrix::from_fn(k, k, |i, j| atom_inner(&atoms[i], &atoms[j], array, grid));
    let diag = (grid.n_subcarriers * array.n_antennas()) as f64;
    let chol = gram.cholesky()?;
    if (0..k).any(|i| chol.l_dirty()[(i, i)].re < 1e-6 * diag.sqrt()) {
        return None;
    }
    let sol = chol.solve(&DVector::from_column_slice(b));
    Some(sol.iter().copied().collect())
}

fn phasors(n: usize, f: f64, sign: f64) -> Vec<Complex64> {
    (0..n).map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 * f)).collect()
}

/// `<atom(c), h>` for a row-major (subcarrier x antenna) matrix.
pub fn project(h: &[Complex64], c: AtomCoords, array: &ArrayConfig, grid: &GridConfig) -> Complex64 {
    let (rows, cols) = (array.rows, array.cols);
    let na = rows * cols;
    let ev = phasors(cols, c.v, -1.0);
    let eu = phasors(rows, c.u, -1.0);
    let ex = phasors(grid.n_subcarriers, c.x, 1.0);
    let mut z = C0;
    for (k, chunk) in h.chunks_exact(na).enumerate() {
        let mut acc = C0;
        for (m, row) in chunk.chunks_exact(cols).enumerate() {
            let s: Complex64 = row.iter().zip(&ev).map(|(a, b)| a * b).sum();
            acc += eu[m] * s;
        }
        z += ex[k] * acc;
    }
    z
}

fn derivs(h: &[Complex64], c: AtomCoords, array: &ArrayConfig, grid: &GridConfig) -> Derivs {
    let (rows, cols) = (array.rows, array.cols);
    let na = rows * cols;
    let ev = phasors(cols, c.v, -1.0);
    let eu = phasors(rows, c.u, -1.0);
    let ex = phasors(grid.n_subcarriers, c.x, 1.0);
    // w: sums of k^a m^b n^c * phase * h for the ten needed (a, b, c).
    let mut w = [C0; 10];
    for (k, chunk) in h.chunks_exact(na).enumerate() {
        // u: U00, U10, U20, U01, U02, U11 (powers of m, n)
        let mut u = [C0; 6];
        for (m, row) in chunk.chunks_exact(cols).enumerate() {
            let (mut s0, mut s1, mut s2) = (C0, C0, C0);
            for (n, (a, e)) in row.iter().zip(&ev).enumerate() {
                let t = a * e;
                let nf = n as f64;
                s0 += t;
                s1 += t * nf;
                s2 += t * (nf * nf);
            }
            let e = eu[m];
            let mf = m as f64;
            let e0 = e * s0;
            let e1 = e * s1;
            u[0] += e0;
            u[1] += e0 * mf;
            u[2] += e0 * (mf * mf);
            u[3] += e1;
            u[4] += e * s2;
            u[5] += e1 * mf;
        }
        let e = ex[k];
        let kf = k as f64;
        let eu0 = e * u[0];
        w[0] += eu0;
        w[1] += eu0 * kf;
        w[2] += eu0 * (kf * kf);
        w[3] += e * u[1];
        w[4] += e * u[2];
        w[5] += e * u[3];
        w[6] += e * u[4];
        w[7] += e * u[1] * kf;
        w[8] += e * u[3] * kf;
        w[9] += e * u[5];
    }
    let j2p = Complex64::new(0.0, 2.0 * PI);
    let p2 = 4.0 * PI * PI;
    let d = [j2p * w[1], -j2p * w[3], -j2p * w[5]];
    let (xx, uu, vv) = (-p2 * w[2], -p2 * w[4], -p2 * w[6]);
    let (xu, xv, uv) = (p2 * w[7], p2 * w[8], -p2 * w[9]);
    Derivs { z: w[0], d, dd: [[xx, xu, xv], [xu, uu, uv], [xv, uv, vv]] }
}

/// CSV rows `t,delay_ns,az_deg,el_deg,gain_re,gain_im,doppler_hz`.
pub fn write_features_csv<W: Write>(w: W, rows: &[(f64, Vec<PathFeature>)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "delay_ns", "az_deg", "el_deg", "gain_re", "gain_im", "doppler_hz"])?;
    for (t, feats) in rows {
        for f in feats {
            wr.write_record(&[
                t.to_string(),
                (f.delay_s * 1e9).to_string(),
                f.azimuth_rad.to_degrees().to_string(),
                f.elevation_rad.to_degrees().to_string(),
                f.gain.re.to_string(),
                f.gain.im.to_string(),
                f.doppler_hz.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chan::{synthesize, Noise};

    fn small() -> (ArrayConfig, GridConfig) {
        (ArrayConfig { rows: 4, cols: 6, element_spacing: 0.5 }, GridConfig { n_subcarriers: 16, bandwidth_hz: 1.6e7, pair_gap_s: 5e-4 })
    }

    fn ray_at(c: AtomCoords, gain: Complex64, doppler_hz: f64, array: &ArrayConfig, grid: &GridConfig) -> Ray {
        let (delay_s, azimuth_rad, elevation_rad) = c.to_angles(array, grid);
        Ray { gain, delay_s, azimuth_rad, elevation_rad, doppler_hz }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let (array, grid) = small();
        let rays = [
            ray_at(AtomCoords { x: 0.21, u: 0.1, v: -0.13 }, Complex64::new(1.0, 0.5), 0.0, &array, &grid),
            ray_at(AtomCoords { x: 0.6, u: -0.3, v: 0.2 }, Complex64::new(-0.3, 0.2), 0.0, &array, &grid),
        ];
        let m = synthesize(&rays, &array, &grid, 0.0, Noise::None, 0).unwrap();
        let c = AtomCoords { x: 0.2, u: 0.12, v: -0.1 };
        let d = derivs(&m.h[0], c, &array, &grid);
        assert!((d.z - project(&m.h[0], c, &array, &grid)).norm() < 1e-9);
        let h = 1e-6;
        let shift = |c: AtomCoords, i: usize, s: f64| match i {
            0 => AtomCoords { x: c.x + s, ..c },
            1 => AtomCoords { u: c.u + s, ..c },
            _ => AtomCoords { v: c.v + s, ..c },
        };
        for i in 0..3 {
            let zp = derivs(&m.h[0], shift(c, i, h), &array, &grid);
            let zm = derivs(&m.h[0], shift(c, i, -h), &array, &grid);
            let fd = (zp.z - zm.z) / (2.0 * h);
            assert!((fd - d.d[i]).norm() < 1e-5 * d.d[i].norm().max(1.0), "d{i}");
            for j in 0..3 {
                let fd2 = (zp.d[j] - zm.d[j]) / (2.0 * h);
                assert!((fd2 - d.dd[i][j]).norm() < 1e-5 * d.dd[i][j].norm().max(1.0), "dd{i}{j}");
            }
        }
    }

    #[test]
    fn single_on_grid_path_is_recovered_exactly() {
        let array = ArrayConfig::default();
        let grid = GridConfig::default();
        let c = AtomCoords { x: 37.0 / 512.0, u: 5.0 / 64.0, v: -9.0 / 64.0 };
        let ray = ray_at(c, Complex64::new(0.6, -0.8), 250.0, &array, &grid);
        let m = synthesize(&[ray], &array, &grid, 0.0, Noise::None, 0).unwrap();
        let feats = extract_paths(&m, &array, &grid, 8, 25.0).unwrap();
        assert_eq!(feats.len(), 1);
        let f = feats[0];
        assert!((f.delay_s - ray.delay_s).abs() <= 1e-9 * ray.delay_s);
        assert!((f.azimuth_rad - ray.azimuth_rad).abs() <= 1e-9 * ray.azimuth_rad.abs());
        assert!((f.elevation_rad - ray.elevation_rad).abs() <= 1e-9 * ray.elevation_rad.abs());
        assert!((f.gain - ray.gain).norm() < 1e-6 * ray.gain.norm());
        assert!((f.doppler_hz - 250.0).abs() < 1e-6);
        assert!(f.residual_power_frac < 1e-12);
    }

    #[test]
    fn zero_measurement_gives_no_paths() {
        let (array, grid) = small();
        let m = Measurement::zeros(0.0, &array, &grid);
        assert!(extract_paths(&m, &array, &grid, 4, 25.0).unwrap().is_empty());
    }

    #[test]
    fn residual_decreases_every_step_and_output_is_sorted() {
        let array = ArrayConfig { rows: 8, cols: 8, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 64, bandwidth_hz: 5e7, pair_gap_s: 5e-4 };
        let rays = [
            ray_at(AtomCoords { x: 0.11, u: 0.05, v: 0.2 }, Complex64::new(0.2, 0.1), 100.0, &array, &grid),
            ray_at(AtomCoords { x: 0.3, u: -0.1, v: -0.25 }, Complex64::new(1.0, 0.0), -300.0, &array, &grid),
            ray_at(AtomCoords { x: 0.52, u: 0.2, v: 0.0 }, Complex64::new(0.0, 0.5), 20.0, &array, &grid),
        ];
        let m = synthesize(&rays, &array, &grid, 0.0, Noise::None, 0).unwrap();
        let mut ex = Extractor::new(array, grid, ExtractConfig::default()).unwrap();
        let out = ex.run(&m).unwrap();
        assert!(out.residual_trace.windows(2).all(|w| w[1] < w[0]));
        assert!(out.features.windows(2).all(|w| w[0].gain.norm() >= w[1].gain.norm()));
        assert_eq!(out.features.len(), 3);
        for (f, r) in out.features.iter().zip([&rays[1], &rays[2], &rays[0]]) {
            assert!((f.delay_s - r.delay_s).abs() < 1e-12);
            assert!((f.doppler_hz - r.doppler_hz).abs() < 1e-3);
        }
    }

    #[test]
    fn feature_csv_has_one_row_per_path() {
        let f = PathFeature {
            delay_s: 1e-7,
            azimuth_rad: 0.1,
            elevation_rad: 0.0,
            gain: Complex64::new(1.0, 0.0),
            doppler_hz: 3.0,
            residual_power_frac: 0.0,
        };
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &[(0.0, vec![f, f]), (0.01, vec![f])]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 4);
        assert!(s.starts_with("t,delay_ns,az_deg,el_deg,gain_re,gain_im,doppler_hz"));
    }
}
