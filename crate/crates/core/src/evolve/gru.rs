//! Small gated recurrent predictor of feature rates, with manual BPTT.
//!
//! Each step consumes 9 inputs: the normalized feature delta since the
//! previous sample (4), the normalized absolute feature (4) and the
//! normalized time step. A linear head maps the final hidden state to four
//! normalized rates (delta units per `dt_scale` seconds).
//!
//! Cell (update gate z, reset gate r):
//! `z = s(Wz x + Uz h + bz)`, `r = s(Wr x + Ur h + br)`,
//! `n = tanh(Wn x + Un (r * h) + bn)`, `h' = (1 - z) * n + z * h`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureVec, N_FEAT};
use crate::error::{PemError, Result};
use crate::geom::angle_diff;

pub const INPUT: usize = 2 * N_FEAT + 1;
pub const HIDDEN: usize = 32;
pub const OUTPUT: usize = N_FEAT;
/// Features per training window (the target comes on top).
pub const SEQ_LEN: usize = 8;
pub const FORMAT_VERSION: &str = "pem-gru-1";

/// Normalized inputs are clipped to this magnitude.
const CLIP: f64 = 8.0;

/// Frozen input/output scaling, fitted on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub abs_offset: [f64; N_FEAT],
    pub abs_scale: [f64; N_FEAT],
    pub delta_scale: [f64; N_FEAT],
    pub dt_scale: f64,
}

/// Feature difference `a - b`, shortest arc for azimuth.
pub fn feature_delta(a: &FeatureVec, b: &FeatureVec) -> FeatureVec {
    let mut d = [0.0; N_FEAT];
    for c in 0..N_FEAT {
        d[c] = if c == 1 { angle_diff(a[c], b[c]) } else { a[c] - b[c] };
    }
    d
}

const ABS_FLOOR: [f64; N_FEAT] = [1e-3, 1e-3, 1e-3, 1e-3];
const DELTA_FLOOR: [f64; N_FEAT] = [1e-7, 1e-7, 1e-7, 1e-7];

impl Normalization {
    /// Fits offsets and scales to windows of `(dt, feature)` sequences.
    pub fn fit<'a>(seqs: impl Iterator<Item = &'a [(f64, FeatureVec)]>) -> Self {
        let (mut n, mut nd) = (0.0, 0.0);
        let mut sum = [0.0; N_FEAT];
        let mut sq = [0.0; N_FEAT];
        let mut dsq = [0.0; N_FEAT];
        let mut dt_sum = 0.0;
        for seq in seqs {
            for (i, (dt, f)) in seq.iter().enumerate() {
                n += 1.0;
                for c in 0..N_FEAT {
                    sum[c] += f[c];
                    sq[c] += f[c] * f[c];
                }
                if i > 0 {
                    nd += 1.0;
                    dt_sum += dt;
                    let d = feature_delta(f, &seq[i - 1].1);
                    for c in 0..N_FEAT {
                        dsq[c] += d[c] * d[c];
                    }
                }
            }
        }
        let mut norm = Normalization { abs_offset: [0.0; N_FEAT], abs_scale: ABS_FLOOR, delta_scale: DELTA_FLOOR, dt_scale: 1e-3 };
        if n > 0.0 {
            for c in 0..N_FEAT {
                let mean = sum[c] / n;
                norm.abs_offset[c] = mean;
                norm.abs_scale[c] = (sq[c] / n - mean * mean).max(0.0).sqrt().max(ABS_FLOOR[c]);
            }
        }
        if nd > 0.0 {
            for c in 0..N_FEAT {
                norm.delta_scale[c] = (dsq[c] / nd).sqrt().max(DELTA_FLOOR[c]);
            }
            norm.dt_scale = (dt_sum / nd).max(1e-6);
        }
        norm
    }

    /// Network inputs for a window; one step per consecutive pair.
    pub fn inputs(&self, seq: &[(f64, FeatureVec)]) -> Vec<[f64; INPUT]> {
        seq.windows(2)
            .map(|w| {
                let (dt, f) = w[1];
                let d = feature_delta(&f, &w[0].1);
                let mut x = [0.0; INPUT];
                for c in 0..N_FEAT {
                    x[c] = (d[c] / self.delta_scale[c]).clamp(-CLIP, CLIP);
                    let a = if c == 1 { angle_diff(f[c], self.abs_offset[c]) } else { f[c] - self.abs_offset[c] };
                    x[N_FEAT + c] = (a / self.abs_scale[c]).clamp(-CLIP, CLIP);
                }
                x[2 * N_FEAT] = (dt / self.dt_scale).clamp(-CLIP, CLIP);
                x
            })
            .collect()
    }

    /// Normalized target delta and normalized horizon.
    pub fn target(&self, last: &FeatureVec, target: &FeatureVec, target_dt: f64) -> ([f64; N_FEAT], f64) {
        let d = feature_delta(target, last);
        let mut out = [0.0; N_FEAT];
        for c in 0..N_FEAT {
            out[c] = d[c] / self.delta_scale[c];
        }
        (out, target_dt / self.dt_scale)
    }

    /// Normalized rates to feature units per second.
    pub fn denormalize_rate(&self, r: &[f64; N_FEAT]) -> FeatureVec {
        let mut out = [0.0; N_FEAT];
        for c in 0..N_FEAT {
            out[c] = r[c] * self.delta_scale[c] / self.dt_scale;
        }
        out
    }
}

/// Offsets of each block in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout;

impl Layout {
    pub(crate) const fn w(g: usize) -> usize {
        g * HIDDEN * INPUT
    }
    pub(crate) const fn u(g: usize) -> usize {
        3 * HIDDEN * INPUT + g * HIDDEN * HIDDEN
    }
    pub(crate) const fn b(g: usize) -> usize {
        3 * HIDDEN * (INPUT + HIDDEN) + g * HIDDEN
    }
    pub(crate) const fn wo() -> usize {
        3 * HIDDEN * (INPUT + HIDDEN + 1)
    }
    pub(crate) const fn bo() -> usize {
        Self::wo() + OUTPUT * HIDDEN
    }
    pub(crate) const fn len() -> usize {
        Self::bo() + OUTPUT
    }
}

pub const N_PARAMS: usize = Layout::len();

/// Trained recurrent rate predictor; immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentPredictor {
    pub version: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub seq_len: usize,
    pub norm: Normalization,
    pub params: Vec<f64>,
}

pub(crate) struct StepCache {
    x: [f64; INPUT],
    h_prev: [f64; HIDDEN],
    z: [f64; HIDDEN],
    r: [f64; HIDDEN],
    n: [f64; HIDDEN],
}

pub(crate) struct Trace {
    steps: Vec<StepCache>,
    h: [f64; HIDDEN],
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn matvec_acc(out: &mut [f64; HIDDEN], m: &[f64], v: &[f64]) {
    let cols = v.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &m[j * cols..(j + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn forward(p: &[f64], xs: &[[f64; INPUT]]) -> ([f64; OUTPUT], Trace) {
    let mut h = [0.0; HIDDEN];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let mut az = [0.0; HIDDEN];
        let mut ar = [0.0; HIDDEN];
        let mut an = [0.0; HIDDEN];
        az.copy_from_slice(&p[Layout::b(0)..Layout::b(0) + HIDDEN]);
        ar.copy_from_slice(&p[Layout::b(1)..Layout::b(1) + HIDDEN]);
        an.copy_from_slice(&p[Layout::b(2)..Layout::b(2) + HIDDEN]);
        matvec_acc(&mut az, &p[Layout::w(0)..], x);
        matvec_acc(&mut ar, &p[Layout::w(1)..], x);
        matvec_acc(&mut an, &p[Layout::w(2)..], x);
        matvec_acc(&mut az, &p[Layout::u(0)..], &h);
        matvec_acc(&mut ar, &p[Layout::u(1)..], &h);
        let z = az.map(sigmoid);
        let r = ar.map(sigmoid);
        let mut rh = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            rh[j] = r[j] * h[j];
        }
        matvec_acc(&mut an, &p[Layout::u(2)..], &rh);
        let n = an.map(f64::tanh);
        let h_prev = h;
        for j in 0..HIDDEN {
            h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
        }
        steps.push(StepCache { x: *x, h_prev, z, r, n });
    }
    let mut out = [0.0; OUTPUT];
    for (o, val) in out.iter_mut().enumerate() {
        let row = &p[Layout::wo() + o * HIDDEN..Layout::wo() + (o + 1) * HIDDEN];
        *val = p[Layout::bo() + o] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
    }
    (out, Trace { steps, h })
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d out`.
pub(crate) fn backward(p: &[f64], trace: &Trace, d_out: &[f64; OUTPUT], grad: &mut [f64]) {
    let mut dh = [0.0; HIDDEN];
    for o in 0..OUTPUT {
        grad[Layout::bo() + o] += d_out[o];
        let base = Layout::wo() + o * HIDDEN;
        for j in 0..HIDDEN {
            grad[base + j] += d_out[o] * trace.h[j];
            dh[j] += d_out[o] * p[base + j];
        }
    }
    for s in trace.steps.iter().rev() {
        let mut dhp = [0.0; HIDDEN];
        let mut dan = [0.0; HIDDEN];
        let mut daz = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let dn = dh[j] * (1.0 - s.z[j]);
            let dz = dh[j] * (s.h_prev[j] - s.n[j]);
            dhp[j] = dh[j] * s.z[j];
            dan[j] = dn * (1.0 - s.n[j] * s.n[j]);
            daz[j] = dz * s.z[j] * (1.0 - s.z[j]);
        }
        let mut rh = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            rh[j] = s.r[j] * s.h_prev[j];
        }
        // d(r*h) = Un^T dan
        let mut drh = [0.0; HIDDEN];
        let un = Layout::u(2);
        for j in 0..HIDDEN {
            let row = &p[un + j * HIDDEN..un + (j + 1) * HIDDEN];
            for k in 0..HIDDEN {
                drh[k] += row[k] * dan[j];
            }
        }
        let mut dar = [0.0; HIDDEN];
        for k in 0..HIDDEN {
            dhp[k] += drh[k] * s.r[k];
            dar[k] = drh[k] * s.h_prev[k] * s.r[k] * (1.0 - s.r[k]);
        }
        for (g, da, hin) in [(0, &daz, &s.h_prev), (1, &dar, &s.h_prev), (2, &dan, &rh)] {
            let (w, u, b) = (Layout::w(g), Layout::u(g), Layout::b(g));
            for j in 0..HIDDEN {
                let a = da[j];
                if a == 0.0 {
                    continue;
                }
                grad[b + j] += a;
                for i in 0..INPUT {
                    grad[w + j * INPUT + i] += a * s.x[i];
                }
                for k in 0..HIDDEN {
                    grad[u + j * HIDDEN + k] += a * hin[k];
                }
            }
        }
        for (g, da) in [(0, &daz), (1, &dar)] {
            let u = Layout::u(g);
            for j in 0..HIDDEN {
                let row = &p[u + j * HIDDEN..u + (j + 1) * HIDDEN];
                for k in 0..HIDDEN {
                    dhp[k] += row[k] * da[j];
                }
            }
        }
        dh = dhp;
    }
}

/// Per-sample loss `mean_c (rate_c * tau - delta_c)^2` and its output gradient.
pub(crate) fn sample_loss(out: &[f64; OUTPUT], delta: &[f64; OUTPUT], tau: f64) -> (f64, [f64; OUTPUT]) {
    let mut loss = 0.0;
    let mut d = [0.0; OUTPUT];
    for c in 0..OUTPUT {
        let e = out[c] * tau - delta[c];
        loss += e * e / OUTPUT as f64;
        d[c] = 2.0 * e * tau / OUTPUT as f64;
    }
    (loss, d)
}

impl RecurrentPredictor {
    pub fn init(norm: Normalization, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (HIDDEN as f64).sqrt();
        let mut params: Vec<f64> = (0..N_PARAMS).map(|_| rng.gen_range(-bound..bound)).collect();
        for v in &mut params[Layout::wo()..] {
            *v *= 0.1;
        }
        RecurrentPredictor { version: FORMAT_VERSION.into(), input: INPUT, hidden: HIDDEN, output: OUTPUT, seq_len: SEQ_LEN, norm, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self) -> Result<()> {
        if self.version != FORMAT_VERSION
            || self.input != INPUT
            || self.hidden != HIDDEN
            || self.output != OUTPUT
            || self.params.len() != N_PARAMS
        {
            return Err(PemError::Format(format!(
                "predictor {} {}x{}x{} with {} params does not match {} {}x{}x{} ({} params)",
                self.version,
                self.input,
                self.hidden,
                self.output,
                self.params.len(),
                FORMAT_VERSION,
                INPUT,
                HIDDEN,
                OUTPUT,
                N_PARAMS
            )));
        }
        Ok(())
    }

    /// Normalized rates for a window of `(dt, feature)` samples.
    pub fn rates_normalized(&self, seq: &[(f64, FeatureVec)]) -> [f64; OUTPUT] {
        forward(&self.params, &self.norm.inputs(seq)).0
    }

    /// Normalized loss of one training window.
    pub fn loss(&self, seq: &[(f64, FeatureVec)], target: &FeatureVec, target_dt: f64) -> f64 {
        let (delta, tau) = self.norm.target(&seq[seq.len() - 1].1, target, target_dt);
        sample_loss(&self.rates_normalized(seq), &delta, tau).0
    }

    /// Loss of one training window and its gradient in `params` (BPTT).
    pub fn loss_and_gradient(&self, seq: &[(f64, FeatureVec)], target: &FeatureVec, target_dt: f64) -> (f64, Vec<f64>) {
        let (out, trace) = forward(&self.params, &self.norm.inputs(seq));
        let (delta, tau) = self.norm.target(&seq[seq.len() - 1].1, target, target_dt);
        let (loss, d_out) = sample_loss(&out, &delta, tau);
        let mut grad = vec![0.0; N_PARAMS];
        backward(&self.params, &trace, &d_out, &mut grad);
        (loss, grad)
    }

    /// Feature rates (units per second) for a window.
    pub fn rates(&self, seq: &[(f64, FeatureVec)]) -> FeatureVec {
        self.norm.denormalize_rate(&self.rates_normalized(seq))
    }

    /// Predicted feature `target_dt` after the window's last sample.
    pub fn predict_next(&self, seq: &[(f64, FeatureVec)], target_dt: f64) -> FeatureVec {
        let rate = self.rates(seq);
        let last = seq.last().map(|s| s.1).unwrap_or([0.0; N_FEAT]);
        let mut out = last;
        for c in 0..N_FEAT {
            out[c] += rate[c] * target_dt;
        }
        out[1] = crate::geom::wrap_angle(out[1]);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: RecurrentPredictor = serde_json::from_str(s)?;
        p.check()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
