//! Applying the maintained path model: CSI reconstruction at arbitrary
//! instants, NMSE, sensing outputs and the comparison baselines.
//!
//! NMSE can be computed densely from two matrices or in closed form from two
//! atom sums; the latter is what the experiments use on the 1 ms grid.

mod ckm;
mod report;

use num_complex::Complex64;

pub use ckm::{CkmEntry, CkmFit, ToyCkm};
pub use report::{aggregate_db, read_nmse_csv, InstantNmse, PathSample, Report, ReportMeta};

use crate::chan::atom::{AtomCoords, AtomSum};
use crate::chan::{ArrayConfig, GridConfig};
use crate::error::{PemError, Result};
use crate::evolve::Evolver;
use crate::extract::PathFeature;
use crate::geom::{Vec3, SPEED_OF_LIGHT};
use crate::scene::direction;
use crate::tracker::{TrackSet, TrackStatus};

pub const NMSE_FLOOR_DB: f64 = -100.0;

/// LoS candidates must be within this many dB of the strongest path.
pub const LOS_POWER_WINDOW_DB: f64 = 10.0;

/// Nominal UE antenna height and the sanity band around it.
pub const UE_HEIGHT_M: f64 = 1.5;
pub const HEIGHT_TOLERANCE_M: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub h: Vec<Complex64>,
    /// No confirmed tracks; `h` is all zeros.
    pub cold: bool,
}

/// Predicted features of every confirmed track at `t`, by track id. Coasting
/// tracks (missed at the latest occasion) are kept for association but not
/// rendered.
pub fn predicted_paths(ts: &TrackSet, t: f64, evolver: &Evolver) -> Vec<(u64, PathFeature)> {
    ts.confirmed().filter(|tr| tr.status == TrackStatus::Confirmed).map(|tr| (tr.id, evolver.predict(&tr.predictor, t).feature)).collect()
}

pub fn feature_atoms(feats: &[PathFeature], array: &ArrayConfig, grid: &GridConfig) -> AtomSum {
    let mut sum = AtomSum::default();
    for f in feats {
        sum.push(f.gain, AtomCoords::from_angles(f.delay_s, f.azimuth_rad, f.elevation_rad, array, grid));
    }
    sum
}

/// Atom-sum reconstruction at `t`; `None` when cold.
pub fn reconstruct_atoms(ts: &TrackSet, t: f64, evolver: &Evolver, array: &ArrayConfig, grid: &GridConfig) -> Option<AtomSum> {
    let feats: Vec<PathFeature> = predicted_paths(ts, t, evolver).into_iter().map(|(_, f)| f).collect();
    (!feats.is_empty()).then(|| feature_atoms(&feats, array, grid))
}

pub fn reconstruct(ts: &TrackSet, t: f64, evolver: &Evolver, array: &ArrayConfig, grid: &GridConfig) -> Reconstruction {
    match reconstruct_atoms(ts, t, evolver, array, grid) {
        Some(sum) => Reconstruction { h: sum.to_matrix(array, grid), cold: false },
        None => Reconstruction {
            h: vec![Complex64::new(0.0, 0.0); grid.n_subcarriers * array.n_antennas()],
            cold: true,
        },
    }
}

/// Linear NMSE to dB, clamped at [`NMSE_FLOOR_DB`].
pub fn to_db(lin: f64) -> f64 {
    if lin > 0.0 {
        (10.0 * lin.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

pub fn nmse_linear(h_pred: &[Complex64], h_true: &[Complex64]) -> Result<f64> {
    if h_pred.len() != h_true.len() {
        return Err(PemError::ShapeMismatch(format!("prediction has {} entries, truth {}", h_pred.len(), h_true.len())));
    }
    let den: f64 = h_true.iter().map(|c| c.norm_sqr()).sum();
    if !(den > 0.0) {
        return Err(PemError::ZeroReference);
    }
    let num: f64 = h_pred.iter().zip(h_true).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

pub fn nmse(h_pred: &[Complex64], h_true: &[Complex64]) -> Result<f64> {
    nmse_linear(h_pred, h_true).map(to_db)
}

/// Closed-form linear NMSE between two atom sums, plus `extra_energy` of
/// uncorrelated error (e.g. measurement noise carried by a baseline).
pub fn nmse_atoms(pred: &AtomSum, truth: &AtomSum, extra_energy: f64, array: &ArrayConfig, grid: &GridConfig) -> Result<f64> {
    let den = truth.energy(array, grid);
    if !(den > 0.0) {
        return Err(PemError::ZeroReference);
    }
    let mut diff = pred.clone();
    diff.extend_scaled(truth, Complex64::new(-1.0, 0.0));
    Ok((diff.energy(array, grid) + extra_energy) / den)
}

/// Noiseless channel at one SRS occasion plus the energy of the noise the
/// measurement actually carried.
#[derive(Debug, Clone)]
pub struct OccasionTruth {
    pub t: f64,
    pub clean: AtomSum,
    pub noise_energy: f64,
}

/// Measurement-domain baseline estimate: a signal part and the expected
/// energy of the noise it carries.
#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    pub signal: AtomSum,
    pub noise_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaselineKind {
    HoldLast,
    LinearInterp,
    ToyCkm,
}

impl BaselineKind {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::HoldLast => "hold_last",
            BaselineKind::LinearInterp => "linear_interp",
            BaselineKind::ToyCkm => "toy_ckm",
        }
    }
}

/// Latest measured channel (first pilot symbol).
pub fn hold_last(last: &OccasionTruth) -> BaselineEstimate {
    BaselineEstimate { signal: last.clean.clone(), noise_energy: last.noise_energy }
}

/// Linear extrapolation through the last two occasions; cold with fewer.
pub fn linear_interp(history: &[OccasionTruth], t: f64) -> Option<BaselineEstimate> {
    let [.., prev, last] = history else { return None };
    let a = (t - last.t) / (last.t - prev.t);
    let mut signal = AtomSum::default();
    signal.extend_scaled(&last.clean, Complex64::new(1.0 + a, 0.0));
    signal.extend_scaled(&prev.clean, Complex64::new(-a, 0.0));
    Some(BaselineEstimate { signal, noise_energy: (1.0 + a).powi(2) * last.noise_energy + a * a * prev.noise_energy })
}

/// Dense hold-last on raw matrices.
pub fn hold_last_dense(last: &[Complex64]) -> Vec<Complex64> {
    last.to_vec()
}

/// Dense linear extrapolation on raw matrices.
pub fn linear_interp_dense(prev: (f64, &[Complex64]), last: (f64, &[Complex64]), t: f64) -> Result<Vec<Complex64>> {
    if prev.1.len() != last.1.len() {
        return Err(PemError::ShapeMismatch("occasion matrices differ in size".into()));
    }
    if !(last.0 > prev.0) {
        return Err(PemError::NonMonotoneTime { t: last.0, last: prev.0 });
    }
    let a = (t - last.0) / (last.0 - prev.0);
    Ok(prev.1.iter().zip(last.1).map(|(p, l)| l * (1.0 + a) - p * a).collect())
}

/// Index of the LoS candidate: minimum delay among paths within
/// [`LOS_POWER_WINDOW_DB`] of the strongest.
pub fn pick_los(feats: &[PathFeature]) -> Option<usize> {
    let strongest = feats.iter().map(|f| f.power_db()).fold(f64::NEG_INFINITY, f64::max);
    feats
        .iter()
        .enumerate()
        .filter(|(_, f)| f.power_db() >= strongest - LOS_POWER_WINDOW_DB)
        .min_by(|a, b| a.1.delay_s.total_cmp(&b.1.delay_s))
        .map(|(i, _)| i)
}

/// LoS candidate among the confirmed tracks, using each track's latest feature.
pub fn los_track(ts: &TrackSet) -> Option<u64> {
    let tracks: Vec<(u64, PathFeature)> = ts.confirmed().filter_map(|tr| tr.last().map(|(_, f)| (tr.id, *f))).collect();
    let feats: Vec<PathFeature> = tracks.iter().map(|(_, f)| *f).collect();
    pick_los(&feats).map(|i| tracks[i].0)
}

pub fn position_ue(los: &PathFeature, bs_position: Vec3) -> Vec3 {
    bs_position + direction(los.azimuth_rad, los.elevation_rad) * (SPEED_OF_LIGHT * los.delay_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFix {
    pub position: Vec3,
    /// Height within [`HEIGHT_TOLERANCE_M`] of the nominal UE height. A fix
    /// from a reflection lands on the image point and usually fails this.
    pub plausible: bool,
}

/// Picks the LoS candidate and converts it to a position.
pub fn locate(feats: &[PathFeature], bs_position: Vec3) -> Option<PositionFix> {
    let los = &feats[pick_los(feats)?];
    let position = position_ue(los, bs_position);
    Some(PositionFix { position, plausible: (position.z - UE_HEIGHT_M).abs() <= HEIGHT_TOLERANCE_M })
}

/// Radial speed in m/s, positive when receding.
pub fn radial_velocity(feature: &PathFeature, carrier_hz: f64) -> f64 {
    -SPEED_OF_LIGHT * feature.doppler_hz / carrier_hz
}
