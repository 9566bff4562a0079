//! Per-path evolution: continuous-time prediction of each tracked path.
//!
//! Predictions are anchored at the most recent extracted feature; the
//! filters (or the learned model) supply the rates. The complex gain phase is
//! carried analytically by a phase tracker that unwraps the measured gain
//! phase across occasions, so it survives SRS periods far beyond the
//! coherence time.

pub mod gru;
pub mod kalman;
pub mod train;

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use gru::{Normalization, RecurrentPredictor, SEQ_LEN};
pub use kalman::{Cv2, KalmanConfig, PhaseTracker};
pub use train::{augment, augment_with, continual_finetune, train, AugmentConfig, TrainConfig, TrainReport, TrainSample, write_samples_csv};

use crate::error::{PemError, Result};
use crate::extract::PathFeature;
use crate::geom::{angle_diff, wrap_angle, SPEED_OF_LIGHT};

pub const N_FEAT: usize = 4;

/// `[delay_us, azimuth_rad, elevation_rad, log10 |gain|]`.
pub type FeatureVec = [f64; N_FEAT];

pub fn feature_vec(f: &PathFeature) -> FeatureVec {
    [f.delay_s * 1e6, f.azimuth_rad, f.elevation_rad, f.gain.norm().max(1e-300).log10()]
}

/// Which model supplies feature rates.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    Kalman,
    Recurrent(Arc<RecurrentPredictor>),
}

impl PredictorKind {
    pub fn label(&self) -> &'static str {
        match self {
            PredictorKind::Kalman => "kalman",
            PredictorKind::Recurrent(_) => "learned",
        }
    }
}

/// Shared, read-only evolution model; per-track state lives in
/// [`PredictorState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evolver {
    pub kalman: KalmanConfig,
    pub kind: PredictorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    /// Horizon beyond 10 update intervals.
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub feature: PathFeature,
    pub confidence: Confidence,
}

/// Evolution state of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub t: f64,
    pub last: PathFeature,
    pub ingests: usize,
    pub chans: [Cv2; N_FEAT],
    pub phase: PhaseTracker,
    window: VecDeque<(f64, FeatureVec)>,
    learned_rate: Option<FeatureVec>,
    interval_sum: f64,
}

impl PredictorState {
    /// Mean time between ingests, if there were at least two.
    pub fn mean_interval(&self) -> Option<f64> {
        (self.ingests > 1).then(|| self.interval_sum / (self.ingests - 1) as f64)
    }

    /// Kalman rates in feature units per second.
    pub fn kalman_rates(&self) -> FeatureVec {
        std::array::from_fn(|c| self.chans[c].x[1])
    }
}

impl Default for Evolver {
    fn default() -> Self {
        Evolver::kalman(KalmanConfig::default())
    }
}

impl Evolver {
    pub fn kalman(cfg: KalmanConfig) -> Self {
        Evolver { kalman: cfg, kind: PredictorKind::Kalman }
    }

    pub fn recurrent(pred: Arc<RecurrentPredictor>, cfg: KalmanConfig) -> Self {
        Evolver { kalman: cfg, kind: PredictorKind::Recurrent(pred) }
    }

    fn max_delay_rate_us(&self) -> f64 {
        self.kalman.v_max / SPEED_OF_LIGHT * 1e6
    }

    /// State for a newly born track.
    pub fn init(&self, feat: &PathFeature, t: f64) -> PredictorState {
        let fv = feature_vec(feat);
        let k = &self.kalman;
        PredictorState {
            t,
            last: *feat,
            ingests: 1,
            chans: std::array::from_fn(|c| Cv2::new(fv[c], k.meas_sigma[c], k.init_rate_sigma[c])),
            phase: PhaseTracker::new(t, feat.gain.arg(), feat.doppler_hz, k),
            window: VecDeque::from([(0.0, fv)]),
            learned_rate: None,
            interval_sum: 0.0,
        }
    }

    pub fn ingest(&self, st: &mut PredictorState, feat: &PathFeature, t: f64) -> Result<()> {
        if !(t > st.t) {
            return Err(PemError::NonMonotoneTime { t, last: st.t });
        }
        let dt = t - st.t;
        let fv = feature_vec(feat);
        let k = &self.kalman;
        for c in 0..N_FEAT {
            let ch = &mut st.chans[c];
            ch.predict(dt, k.accel_psd[c]);
            let nu = if c == 1 { angle_diff(fv[c], ch.x[0]) } else { fv[c] - ch.x[0] };
            ch.update(nu, k.meas_sigma[c] * k.meas_sigma[c]);
        }
        st.chans[1].x[0] = wrap_angle(st.chans[1].x[0]);
        let vmax = self.max_delay_rate_us();
        st.chans[0].x[1] = st.chans[0].x[1].clamp(-vmax, vmax);
        st.phase.update(t, feat.gain.arg(), feat.doppler_hz, k);

        st.window.push_back((dt, fv));
        while st.window.len() > SEQ_LEN {
            st.window.pop_front();
        }
        st.learned_rate = match &self.kind {
            PredictorKind::Recurrent(p) if st.window.len() == SEQ_LEN => {
                let seq: Vec<(f64, FeatureVec)> = st.window.iter().copied().collect();
                Some(p.rates(&seq))
            }
            _ => None,
        };
        st.interval_sum += dt;
        st.ingests += 1;
        st.t = t;
        st.last = *feat;
        Ok(())
    }

    /// Rates used for prediction: learned once the window is full, Kalman otherwise.
    pub fn rates(&self, st: &PredictorState) -> FeatureVec {
        let mut r = st.learned_rate.unwrap_or_else(|| st.kalman_rates());
        let vmax = self.max_delay_rate_us();
        r[0] = r[0].clamp(-vmax, vmax);
        r
    }

    pub fn predict(&self, st: &PredictorState, t: f64) -> Prediction {
        let dt = t - st.t;
        let confidence = match st.mean_interval() {
            Some(iv) if dt.abs() > 10.0 * iv => Confidence::Low,
            _ => Confidence::High,
        };
        if dt == 0.0 {
            return Prediction { feature: st.last, confidence };
        }
        let r = self.rates(st);
        let last = &st.last;
        let amp = last.gain.norm() * 10f64.powf(r[3] * dt);
        let phase = last.gain.arg() + TAU * st.phase.advance_cycles(t);
        let (f, fdot) = st.phase.doppler();
        let feature = PathFeature {
            delay_s: last.delay_s + r[0] * 1e-6 * dt,
            azimuth_rad: wrap_angle(last.azimuth_rad + r[1] * dt),
            elevation_rad: (last.elevation_rad + r[2] * dt).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            gain: Complex64::from_polar(amp, phase),
            doppler_hz: f + fdot * dt,
            residual_power_frac: last.residual_power_frac,
        };
        Prediction { feature, confidence }
    }
}
