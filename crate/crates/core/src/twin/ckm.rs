//! Location-indexed path map trained on one environment.
//!
//! Position in, top path features (delay, angles, power) out, by nearest
//! stored training position. Complex gains and Doppler are then fitted to the
//! latest measurement on that support and rotated forward to the query time.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chan::atom::{AtomCoords, AtomSum};
use crate::chan::{ArrayConfig, GridConfig, Measurement};
use crate::error::{PemError, Result};
use crate::extract::{project, solve_gains, PathFeature};
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkmEntry {
    pub position: Vec3,
    pub features: Vec<PathFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCkm {
    pub max_paths: usize,
    pub entries: Vec<CkmEntry>,
}

impl ToyCkm {
    /// Keeps the `max_paths` strongest features of every entry.
    pub fn build(entries: Vec<CkmEntry>, max_paths: usize) -> Result<Self> {
        if entries.is_empty() || max_paths == 0 {
            return Err(PemError::InvalidParameter("path map needs at least one entry and max_paths >= 1".into()));
        }
        let entries = entries
            .into_iter()
            .map(|mut e| {
                e.features.sort_by(|a, b| b.gain.norm().total_cmp(&a.gain.norm()));
                e.features.truncate(max_paths);
                e
            })
            .collect();
        Ok(ToyCkm { max_paths, entries })
    }

    pub fn query(&self, position: Vec3) -> &[PathFeature] {
        let best = self
            .entries
            .iter()
            .min_by(|a, b| (a.position - position).norm().total_cmp(&(b.position - position).norm()))
            .expect("build rejects empty maps");
        &best.features
    }

    /// Fits gains and Doppler to `meas` on the map support at `position`.
    /// `None` if no support atom survives the fit.
    pub fn fit_at(&self, position: Vec3, meas: &Measurement, array: &ArrayConfig, grid: &GridConfig) -> Result<Option<CkmFit>> {
        meas.check_shape(array, grid)?;
        let mut atoms: Vec<AtomCoords> = Vec::new();
        let mut b: [Vec<Complex64>; 2] = Default::default();
        for f in self.query(position) {
            let c = AtomCoords::from_angles(f.delay_s, f.azimuth_rad, f.elevation_rad, array, grid);
            atoms.push(c);
            for s in 0..2 {
                b[s].push(project(&meas.h[s], c, array, grid));
            }
            if solve_gains(&atoms, &b[0], array, grid).is_none() {
                atoms.pop();
                b[0].pop();
                b[1].pop();
            }
        }
        if atoms.is_empty() {
            return Ok(None);
        }
        let (Some(g1), Some(g2)) = (solve_gains(&atoms, &b[0], array, grid), solve_gains(&atoms, &b[1], array, grid)) else {
            return Ok(None);
        };
        let terms = atoms
            .iter()
            .zip(g1.iter().zip(&g2))
            .map(|(c, (a, s))| (*c, *a, (s * a.conj()).arg() / (TAU * meas.pair_gap_s)))
            .collect();
        Ok(Some(CkmFit { t: meas.t, terms }))
    }

    /// Channel at `t` from a fit on `meas`.
    pub fn predict(&self, position: Vec3, meas: &Measurement, t: f64, array: &ArrayConfig, grid: &GridConfig) -> Result<Option<AtomSum>> {
        Ok(self.fit_at(position, meas, array, grid)?.map(|f| f.at(t)))
    }
}

/// Map support with gains fitted at one occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct CkmFit {
    pub t: f64,
    /// `(atom, gain at t, doppler_hz)`.
    pub terms: Vec<(AtomCoords, Complex64, f64)>,
}

impl CkmFit {
    pub fn at(&self, t: f64) -> AtomSum {
        let mut sum = AtomSum::default();
        for (c, g, f) in &self.terms {
            sum.push(g * Complex64::from_polar(1.0, TAU * f * (t - self.t)), *c);
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chan::{channel_atoms, synthesize, Noise, Ray};
    use crate::twin::nmse_atoms;

    #[test]
    fn recovers_gains_and_rotates_with_doppler() {
        let array = ArrayConfig { rows: 4, cols: 4, element_spacing: 0.5 };
        let grid = GridConfig { n_subcarriers: 32, bandwidth_hz: 100e6, pair_gap_s: 0.5e-3 };
        let rays = [
            Ray { gain: Complex64::new(1.0, 0.2), delay_s: 50e-9, azimuth_rad: 0.4, elevation_rad: -0.2, doppler_hz: 120.0 },
            Ray { gain: Complex64::new(0.1, -0.3), delay_s: 120e-9, azimuth_rad: -0.5, elevation_rad: -0.1, doppler_hz: -80.0 },
        ];
        let feats: Vec<PathFeature> = rays
            .iter()
            .map(|r| PathFeature {
                delay_s: r.delay_s,
                azimuth_rad: r.azimuth_rad,
                elevation_rad: r.elevation_rad,
                gain: Complex64::new(9.0, 9.0),
                doppler_hz: 0.0,
                residual_power_frac: 0.0,
            })
            .collect();
        let far = CkmEntry { position: Vec3::new(100.0, 0.0, 1.5), features: Vec::new() };
        let map = ToyCkm::build(vec![CkmEntry { position: Vec3::new(0.0, 0.0, 1.5), features: feats }, far], 8).unwrap();
        let meas = synthesize(&rays, &array, &grid, 1.0, Noise::None, 0).unwrap();
        let pred = map.predict(Vec3::new(1.0, 0.0, 1.5), &meas, 1.004, &array, &grid).unwrap().unwrap();
        let truth = channel_atoms(&rays, &array, &grid, 0.004);
        assert!(nmse_atoms(&pred, &truth, 0.0, &array, &grid).unwrap() < 1e-12);
        assert!(map.predict(Vec3::new(99.0, 0.0, 1.5), &meas, 1.0, &array, &grid).unwrap().is_none());
    }
}
