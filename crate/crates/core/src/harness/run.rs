use num_complex::Complex64;

use super::config::{derive_seed, stream, ExperimentConfig};
use crate::chan::atom::AtomSum;
use crate::chan::{channel_atoms, channel_matrix, synthesize, srs_schedule, Measurement, Ray};
use crate::error::{PemError, Result};
use crate::evolve::Evolver;
use crate::extract::{Extractor, PathFeature};
use crate::geom::Vec3;
use crate::mobility::{generate_trajectory, Trajectory};
use crate::scene::{GeoPath, Scene};
use crate::tracker::TrackSet;
use crate::twin::{self, CkmFit, InstantNmse, OccasionTruth, PathSample, ToyCkm};

/// Everything kept from one SRS occasion once the measurement is dropped.
#[derive(Debug, Clone)]
pub struct Occasion {
    pub t: f64,
    pub position: Vec3,
    pub truth: Vec<GeoPath>,
    pub clean: AtomSum,
    /// `|H_measured - H_clean|^2` of the first pilot symbol.
    pub noise_energy: f64,
    pub features: Vec<PathFeature>,
    pub map_fit: Option<CkmFit>,
}

impl Occasion {
    pub fn occasion_truth(&self) -> OccasionTruth {
        OccasionTruth { t: self.t, clean: self.clean.clone(), noise_energy: self.noise_energy }
    }
}

/// One simulated pass: trajectory plus every occasion on the base schedule.
#[derive(Debug, Clone)]
pub struct Run {
    pub scene: String,
    pub seed: u64,
    pub period_s: f64,
    pub trajectory: Trajectory,
    pub occasions: Vec<Occasion>,
}

pub fn scene_name(scene: &Scene) -> String {
    scene.name.clone().unwrap_or_else(|| "scene".into())
}

/// Calls `f` with every synthesized measurement of the base schedule, in order.
pub fn for_each_measurement(
    cfg: &ExperimentConfig,
    scene: &Scene,
    seed: u64,
    period_s: f64,
    mut f: impl FnMut(usize, &Trajectory, Vec<GeoPath>, Measurement) -> Result<()>,
) -> Result<Trajectory> {
    let traj = generate_trajectory(&cfg.motion, derive_seed(seed, stream::TRAJECTORY, 0))?;
    let times = srs_schedule(0.0, period_s, cfg.motion.duration_s)?;
    for (k, &t) in times.iter().enumerate() {
        let (pos, vel) = traj.state_at(t);
        let paths = scene.solve_paths(pos, vel)?;
        let rays: Vec<Ray> = paths.iter().map(Ray::from).collect();
        let meas = synthesize(&rays, &cfg.array, &cfg.grid, t, cfg.noise(), derive_seed(seed, stream::NOISE, k as u64))?;
        f(k, &traj, paths, meas)?;
    }
    Ok(traj)
}

/// Simulates and extracts every occasion of one run. With a path map, its
/// per-occasion fit is stored as well.
pub fn simulate_run(cfg: &ExperimentConfig, scene: &Scene, seed: u64, map: Option<&ToyCkm>) -> Result<Run> {
    let period_s = cfg.base_period_ms() * 1e-3;
    let mut extractor = Extractor::new(cfg.array, cfg.grid, cfg.extract)?;
    let mut occasions = Vec::new();
    let trajectory = for_each_measurement(cfg, scene, seed, period_s, |_, traj, paths, meas| {
        let rays: Vec<Ray> = paths.iter().map(Ray::from).collect();
        let dense = channel_matrix(&rays, &cfg.array, &cfg.grid, 0.0)?;
        let noise_energy = meas.h[0].iter().zip(&dense).map(|(a, b)| (a - b).norm_sqr()).sum();
        let position = traj.state_at(meas.t).0;
        let map_fit = match map {
            Some(m) => m.fit_at(position, &meas, &cfg.array, &cfg.grid)?,
            None => None,
        };
        occasions.push(Occasion {
            t: meas.t,
            position,
            clean: channel_atoms(&rays, &cfg.array, &cfg.grid, 0.0),
            truth: paths,
            noise_energy,
            features: extractor.extract(&meas)?,
            map_fit,
        });
        Ok(())
    })?;
    Ok(Run { scene: scene_name(scene), seed, period_s, trajectory, occasions })
}

/// Noiseless channel on the evaluation grid, with its energy.
#[derive(Debug, Clone)]
pub struct TruthSample {
    pub t: f64,
    pub atoms: AtomSum,
    pub energy: f64,
}

pub fn truth_series(cfg: &ExperimentConfig, scene: &Scene, traj: &Trajectory) -> Result<Vec<TruthSample>> {
    let step = cfg.eval_step_ms * 1e-3;
    let n = (cfg.motion.duration_s / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|j| {
            let t = j as f64 * step;
            let (pos, vel) = traj.state_at(t);
            let rays: Vec<Ray> = scene.solve_paths(pos, vel)?.iter().map(Ray::from).collect();
            let atoms = channel_atoms(&rays, &cfg.array, &cfg.grid, 0.0);
            let energy = atoms.energy(&cfg.array, &cfg.grid);
            Ok(TruthSample { t, atoms, energy })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Method {
    Pem { label: String, evolver: Evolver },
    HoldLast,
    LinearInterp,
    ToyCkm,
}

impl Method {
    pub fn label(&self) -> &str {
        match self {
            Method::Pem { label, .. } => label,
            Method::HoldLast => "hold_last",
            Method::LinearInterp => "linear_interp",
            Method::ToyCkm => "toy_ckm",
        }
    }

    pub fn predictor(&self) -> &str {
        match self {
            Method::Pem { evolver, .. } => evolver.kind.label(),
            _ => "none",
        }
    }
}

/// Per-instant NMSE of one method on one run at one SRS stride.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub instants: Vec<InstantNmse>,
    pub cold: usize,
    pub paths: Vec<PathSample>,
}

/// Instants before the third occasion of the strided schedule are skipped
/// for every method (tracks cannot be confirmed earlier).
pub const WARMUP_OCCASIONS: usize = 2;

pub fn evaluate(cfg: &ExperimentConfig, run: &Run, truth: &[TruthSample], stride: usize, method: &Method) -> Result<Series> {
    let (array, grid) = (&cfg.array, &cfg.grid);
    let occ: Vec<&Occasion> = run.occasions.iter().step_by(stride.max(1)).collect();
    if occ.len() <= WARMUP_OCCASIONS {
        return Err(PemError::InvalidParameter(format!(
            "run has {} occasions at stride {stride}; need more than {WARMUP_OCCASIONS}",
            occ.len()
        )));
    }
    let t_start = occ[WARMUP_OCCASIONS].t;
    let mut ts = TrackSet::new(cfg.tracker);
    let mut history: Vec<OccasionTruth> = Vec::new();
    let mut next = 0;
    let mut out = Series::default();

    for sample in truth.iter().filter(|s| s.t >= t_start - 1e-12) {
        while next < occ.len() && occ[next].t <= sample.t + 1e-12 {
            let o = occ[next];
            match method {
                Method::Pem { evolver, .. } => {
                    ts.update(&o.features, o.t, evolver)?;
                    for tr in ts.confirmed() {
                        if let Some((_, f)) = tr.last() {
                            out.paths.push(PathSample { id: tr.id, t: o.t, delay_ns: f.delay_s * 1e9, az_deg: f.azimuth_rad.to_degrees() });
                        }
                    }
                }
                Method::HoldLast | Method::LinearInterp => {
                    history.push(o.occasion_truth());
                    if history.len() > 2 {
                        history.remove(0);
                    }
                }
                Method::ToyCkm => {}
            }
            next += 1;
        }
        let last = &occ[next - 1];
        let estimate: Option<(AtomSum, f64)> = match method {
            Method::Pem { evolver, .. } => twin::reconstruct_atoms(&ts, sample.t, evolver, array, grid).map(|a| (a, 0.0)),
            Method::HoldLast => history.last().map(|h| {
                let e = twin::hold_last(h);
                (e.signal, e.noise_energy)
            }),
            Method::LinearInterp => twin::linear_interp(&history, sample.t).map(|e| (e.signal, e.noise_energy)),
            Method::ToyCkm => last.map_fit.as_ref().map(|f| (f.at(sample.t), 0.0)),
        };
        match estimate {
            None => out.cold += 1,
            Some((mut diff, extra)) => {
                if !(sample.energy > 0.0) {
                    return Err(PemError::ZeroReference);
                }
                diff.extend_scaled(&sample.atoms, Complex64::new(-1.0, 0.0));
                let lin = (diff.energy(array, grid) + extra) / sample.energy;
                out.instants.push(InstantNmse { t: sample.t, nmse_db: twin::to_db(lin) });
            }
        }
    }
    Ok(out)
}
