//! Constant-velocity feature filters and the carrier-phase tracker.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Noise settings for the per-channel filters, in feature units
/// (delay us, angles rad, log-amplitude = dB/20) and per-second rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    pub meas_sigma: [f64; 4],
    /// White-acceleration spectral density per channel (units/s^2)^2 * s.
    pub accel_psd: [f64; 4],
    /// Prior rate standard deviation at birth.
    pub init_rate_sigma: [f64; 4],
    /// Fastest radial UE speed the delay rate may imply, m/s.
    pub v_max: f64,
    pub phase_sigma_rad: f64,
    pub doppler_sigma_hz: f64,
    /// Doppler-rate random walk spectral density (Hz/s^2)^2 * s.
    pub jerk_psd: f64,
    pub init_doppler_rate_sigma: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            meas_sigma: [1e-4, 2e-4, 2e-4, 0.02],
            accel_psd: [1e-4, 1e-2, 1e-2, 1e-1],
            init_rate_sigma: [0.2, 2.0, 2.0, 5.0],
            v_max: 60.0,
            phase_sigma_rad: 0.05,
            doppler_sigma_hz: 3.0,
            jerk_psd: 3e3,
            init_doppler_rate_sigma: 300.0,
        }
    }
}

/// Two-state [value, rate] filter with a white-acceleration motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cv2 {
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
}

impl Cv2 {
    pub fn new(value: f64, value_sigma: f64, rate_sigma: f64) -> Self {
        Cv2 { x: Vector2::new(value, 0.0), p: Matrix2::new(value_sigma * value_sigma, 0.0, 0.0, rate_sigma * rate_sigma) }
    }

    pub fn predict(&mut self, dt: f64, q: f64) {
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let qm = Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt) * q;
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + qm;
        self.p = 0.5 * (self.p + self.p.transpose());
    }

    /// Joseph-form update with innovation `nu = z - value` supplied by the caller
    /// (lets azimuth use a wrapped difference).
    pub fn update(&mut self, nu: f64, r: f64) {
        let s = self.p[(0, 0)] + r;
        if !(s > 0.0) {
            return;
        }
        let k = Vector2::new(self.p[(0, 0)] / s, self.p[(1, 0)] / s);
        self.x += k * nu;
        let i_kh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
        self.p = i_kh * self.p * i_kh.transpose() + k * k.transpose() * r;
        self.p = 0.5 * (self.p + self.p.transpose());
    }
}

/// Tracks unwrapped phase (cycles), Doppler (Hz) and Doppler rate (Hz/s)
/// across SRS occasions; the measured phase is unwrapped against the
/// prediction before each update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTracker {
    pub t: f64,
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
}

fn wrap_half(c: f64) -> f64 {
    c - c.round()
}

impl PhaseTracker {
    pub fn new(t: f64, phase_rad: f64, doppler_hz: f64, cfg: &KalmanConfig) -> Self {
        let sc = cfg.phase_sigma_rad / std::f64::consts::TAU;
        PhaseTracker {
            t,
            x: Vector3::new(phase_rad / std::f64::consts::TAU, doppler_hz, 0.0),
            p: Matrix3::from_diagonal(&Vector3::new(sc * sc, cfg.doppler_sigma_hz.powi(2), cfg.init_doppler_rate_sigma.powi(2))),
        }
    }

    fn transition(dt: f64) -> Matrix3<f64> {
        Matrix3::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0)
    }

    fn process(dt: f64, q: f64) -> Matrix3<f64> {
        let (d2, d3, d4, d5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
        Matrix3::new(d5 / 20.0, d4 / 8.0, d3 / 6.0, d4 / 8.0, d3 / 3.0, d2 / 2.0, d3 / 6.0, d2 / 2.0, dt) * q
    }

    /// Doppler and Doppler rate at the last update.
    pub fn doppler(&self) -> (f64, f64) {
        (self.x[1], self.x[2])
    }

    /// Phase advance in cycles from the last update to `t`, using the posterior
    /// Doppler and rate.
    pub fn advance_cycles(&self, t: f64) -> f64 {
        let dt = t - self.t;
        self.x[1] * dt + 0.5 * self.x[2] * dt * dt
    }

    pub fn update(&mut self, t: f64, phase_rad: f64, doppler_hz: f64, cfg: &KalmanConfig) {
        let dt = t - self.t;
        let f = Self::transition(dt);
        let mut x = f * self.x;
        let mut p = f * self.p * f.transpose() + Self::process(dt, cfg.jerk_psd);
        let zc = phase_rad / std::f64::consts::TAU;
        let nu = Vector2::new(wrap_half(zc - x[0]), doppler_hz - x[1]);
        let sc = cfg.phase_sigma_rad / std::f64::consts::TAU;
        let r = Matrix2::new(sc * sc, 0.0, 0.0, cfg.doppler_sigma_hz.powi(2));
        let h = nalgebra::Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let s = h * p * h.transpose() + r;
        if let Some(s_inv) = s.try_inverse() {
            let k = p * h.transpose() * s_inv;
            x += k * nu;
            let i_kh = Matrix3::identity() - k * h;
            p = i_kh * p * i_kh.transpose() + k * r * k.transpose();
        }
        self.t = t;
        self.x = x;
        self.p = 0.5 * (p + p.transpose());
    }
}
