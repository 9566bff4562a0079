//! Separable delay x UPA atoms and their closed-form inner products.
//!
//! A single path contributes `gain * d(x) (x) s(u, v)` to the channel, where
//! `d_k = exp(-j 2 pi k x)` runs over subcarriers and
//! `s_{m,n} = exp(j 2 pi (m u + n v))` over the row-major antenna grid. All
//! three coordinates are normalized frequencies in cycles per index:
//! `x = delay * subcarrier_spacing`, `u = spacing * sin(el)`,
//! `v = spacing * cos(el) * sin(az)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{ArrayConfig, GridConfig};

/// Normalized (delay, vertical, horizontal) frequencies of one atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomCoords {
    pub x: f64,
    pub u: f64,
    pub v: f64,
}

impl AtomCoords {
    pub fn from_angles(delay_s: f64, azimuth: f64, elevation: f64, array: &ArrayConfig, grid: &GridConfig) -> Self {
        let s = array.element_spacing;
        AtomCoords {
            x: delay_s * grid.subcarrier_spacing(),
            u: s * elevation.sin(),
            v: s * elevation.cos() * azimuth.sin(),
        }
    }

    /// Inverse of [`AtomCoords::from_angles`] on the front half-space
    /// (|azimuth| <= pi/2), which is all the planar array can resolve.
    pub fn to_angles(self, array: &ArrayConfig, grid: &GridConfig) -> (f64, f64, f64) {
        let s = array.element_spacing;
        let delay = self.x / grid.subcarrier_spacing();
        let el = (self.u / s).clamp(-1.0, 1.0).asin();
        let c = s * el.cos();
        let az = if c > 0.0 { (self.v / c).clamp(-1.0, 1.0).asin() } else { 0.0 };
        (delay, az, el)
    }
}

/// `sum_{k<n} exp(j 2 pi k d)`.
pub fn dirichlet(n: usize, d: f64) -> Complex64 {
    let den = (PI * d).sin();
    if den.abs() < 1e-7 {
        return (0..n).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * d)).sum();
    }
    let mag = (PI * n as f64 * d).sin() / den;
    Complex64::from_polar(1.0, PI * (n as f64 - 1.0) * d) * mag
}

/// `<a_i, a_j> = sum conj(a_i) a_j` for two unit-gain atoms.
pub fn atom_inner(a: &AtomCoords, b: &AtomCoords, array: &ArrayConfig, grid: &GridConfig) -> Complex64 {
    dirichlet(grid.n_subcarriers, a.x - b.x) * dirichlet(array.rows, b.u - a.u) * dirichlet(array.cols, b.v - a.v)
}

pub fn delay_vector(x: f64, n: usize) -> Vec<Complex64> {
    (0..n).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * x)).collect()
}

pub fn spatial_vector(u: f64, v: f64, rows: usize, cols: usize) -> Vec<Complex64> {
    let col: Vec<Complex64> = (0..cols).map(|n| Complex64::from_polar(1.0, 2.0 * PI * n as f64 * v)).collect();
    let mut out = Vec::with_capacity(rows * cols);
    for m in 0..rows {
        let r = Complex64::from_polar(1.0, 2.0 * PI * m as f64 * u);
        out.extend(col.iter().map(|c| r * c));
    }
    out
}

/// Adds `coef * atom` into a row-major (subcarrier x antenna) matrix.
pub fn add_atom(h: &mut [Complex64], coef: Complex64, at: &AtomCoords, array: &ArrayConfig, grid: &GridConfig) {
    let d = delay_vector(at.x, grid.n_subcarriers);
    let s = spatial_vector(at.u, at.v, array.rows, array.cols);
    let na = s.len();
    for (k, dk) in d.iter().enumerate() {
        let c = coef * dk;
        for (hv, sv) in h[k * na..(k + 1) * na].iter_mut().zip(&s) {
            *hv += c * sv;
        }
    }
}

/// A channel written as a weighted sum of atoms.
#[derive(Debug, Clone, Default)]
pub struct AtomSum {
    pub terms: Vec<(Complex64, AtomCoords)>,
}

impl AtomSum {
    pub fn push(&mut self, coef: Complex64, at: AtomCoords) {
        self.terms.push((coef, at));
    }

    /// Appends `scale * other`.
    pub fn extend_scaled(&mut self, other: &AtomSum, scale: Complex64) {
        self.terms.extend(other.terms.iter().map(|(c, a)| (c * scale, *a)));
    }

    /// Frobenius energy of the dense matrix this sum represents.
    pub fn energy(&self, array: &ArrayConfig, grid: &GridConfig) -> f64 {
        let mut e = 0.0;
        for (i, (ci, ai)) in self.terms.iter().enumerate() {
            e += ci.norm_sqr() * (grid.n_subcarriers * array.n_antennas()) as f64;
            for (cj, aj) in &self.terms[i + 1..] {
                e += 2.0 * (ci.conj() * cj * atom_inner(ai, aj, array, grid)).re;
            }
        }
        e.max(0.0)
    }

    pub fn to_matrix(&self, array: &ArrayConfig, grid: &GridConfig) -> Vec<Complex64> {
        let mut h = vec![Complex64::new(0.0, 0.0); grid.n_subcarriers * array.n_antennas()];
        for (c, a) in &self.terms {
            add_atom(&mut h, *c, a, array, grid);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_matches_direct_sum() {
        for &d in &[0.0, 1e-9, 0.013, 0.25, 0.5, 0.9999999999, 1.0, -0.37, 3.0] {
            for &n in &[1usize, 16, 128] {
                let direct: Complex64 = (0..n).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * d)).sum();
                assert!((dirichlet(n, d) - direct).norm() < 1e-9 * n as f64, "n={n} d={d}");
            }
        }
    }

    #[test]
    fn closed_form_energy_matches_dense() {
        let array = ArrayConfig { rows: 4, cols: 8, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 32, bandwidth_hz: 1e8, pair_gap_s: 5e-4 };
        let mut sum = AtomSum::default();
        sum.push(Complex64::new(1.0, 0.3), AtomCoords { x: 0.1, u: 0.2, v: -0.1 });
        sum.push(Complex64::new(-0.4, 0.2), AtomCoords { x: 0.13, u: 0.17, v: -0.02 });
        sum.push(Complex64::new(0.0, 0.7), AtomCoords { x: 0.6, u: -0.3, v: 0.4 });
        let dense: f64 = sum.to_matrix(&array, &grid).iter().map(|c| c.norm_sqr()).sum();
        assert!((sum.energy(&array, &grid) - dense).abs() < 1e-9 * dense);
    }

    #[test]
    fn angle_coordinate_round_trip() {
        let array = ArrayConfig::default();
        let grid = GridConfig::default();
        for &(d, az, el) in &[(1.2e-7, 0.3, -0.1), (4.0e-7, -1.2, 0.05), (0.0, 0.0, 0.0)] {
            let c = AtomCoords::from_angles(d, az, el, &array, &grid);
            let (d2, az2, el2) = c.to_angles(&array, &grid);
            assert!((d - d2).abs() < 1e-18 && (az - az2).abs() < 1e-12 && (el - el2).abs() < 1e-12);
        }
    }
}
