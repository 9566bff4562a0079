use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, stream, ExperimentConfig};
use super::dataset::{harvest, map_entries};
use super::run::{evaluate, for_each_measurement, scene_name, simulate_run, truth_series, Method, Run, Series};
use crate::chan::io::ArchiveWriter;
use crate::error::Result;
use crate::evolve::{train, write_samples_csv, Evolver, RecurrentPredictor, TrainReport};
use crate::scene::Scene;
use crate::tracker::{TrackLog, TrackSet, TrackStatus};
use crate::twin::{Report, ReportMeta, ToyCkm};

/// One pooled `(scene, period, method)` aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scene: String,
    pub period_ms: f64,
    pub method: String,
    pub predictor: String,
    pub nmse_db: f64,
    pub instants: usize,
    pub cold: usize,
}

impl SummaryRow {
    fn of(r: &Report) -> Self {
        SummaryRow {
            scene: r.meta.scene.clone(),
            period_ms: r.meta.srs_period_s * 1e3,
            method: r.meta.method.clone(),
            predictor: r.meta.predictor.clone(),
            nmse_db: r.aggregate_nmse_db,
            instants: r.instants.len(),
            cold: r.cold_instants,
        }
    }
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn find<'a>(rows: &'a [SummaryRow], scene: &str, period_ms: f64, method: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.scene == scene && (r.period_ms - period_ms).abs() < 1e-9 && r.method == method)
}

fn report_stem(r: &Report) -> String {
    format!("{}_{}_{}ms", r.meta.scene, r.meta.method, (r.meta.srs_period_s * 1e3).round())
}

fn write_reports(dir: &Path, prefix: &str, reports: &[Report], rows: &[SummaryRow]) -> Result<()> {
    let rdir = dir.join("reports");
    for r in reports {
        r.write_all(&rdir, &report_stem(r))?;
    }
    write_summary_csv(std::fs::File::create(dir.join(format!("{prefix}_summary.csv")))?, rows)
}

pub fn eval_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.eval_runs as u64).map(|i| derive_seed(cfg.seed, stream::EVAL, i)).collect()
}

/// Every method at every period on every seed, pooled per `(period, method)`
/// in seed order. Per-path tables come from the first seed only.
pub fn evaluate_runs(
    cfg: &ExperimentConfig,
    scene: &Scene,
    seeds: &[u64],
    methods: &[Method],
    periods_ms: &[f64],
    map: Option<&ToyCkm>,
) -> Result<Vec<Report>> {
    let per_seed: Vec<Vec<Series>> = seeds
        .par_iter()
        .map(|&seed| {
            let run = simulate_run(cfg, scene, seed, map)?;
            let truth = truth_series(cfg, scene, &run.trajectory)?;
            let mut out = Vec::with_capacity(periods_ms.len() * methods.len());
            for &p in periods_ms {
                for m in methods {
                    out.push(evaluate(cfg, &run, &truth, cfg.stride(p), m)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (pi, &p) in periods_ms.iter().enumerate() {
        for (mi, m) in methods.iter().enumerate() {
            let k = pi * methods.len() + mi;
            let mut instants = Vec::new();
            let mut cold = 0;
            for s in &per_seed {
                instants.extend_from_slice(&s[k].instants);
                cold += s[k].cold;
            }
            let meta = ReportMeta {
                scene: scene_name(scene),
                srs_period_s: p * 1e-3,
                method: m.label().to_string(),
                predictor: m.predictor().to_string(),
                seed: cfg.seed,
            };
            reports.push(Report::new(meta, instants, cold, per_seed[0][k].paths.clone())?);
        }
    }
    Ok(reports)
}

/// Env-1 runs reserved for training windows and path-map entries.
pub fn training_runs(cfg: &ExperimentConfig) -> Result<Vec<Run>> {
    let scene = cfg.load_scene()?;
    (0..cfg.train.runs as u64)
        .into_par_iter()
        .map(|i| simulate_run(cfg, &scene, derive_seed(cfg.seed, stream::TRAIN, i), None))
        .collect()
}

pub fn train_predictor(cfg: &ExperimentConfig, runs: &[Run], augment: bool) -> Result<TrainReport> {
    let data = harvest(cfg, runs, cfg.train.dataset_size, derive_seed(cfg.seed, stream::SUBSAMPLE, 0))?;
    train(&data, &cfg.train.train_config(derive_seed(cfg.seed, stream::FIT, 0), augment))
}

fn pem_methods(cfg: &ExperimentConfig, learned: Option<&Arc<RecurrentPredictor>>) -> Vec<Method> {
    let mut m = Vec::new();
    if cfg.predictor.wants_kalman() || learned.is_none() {
        m.push(Method::Pem { label: "pem_kalman".into(), evolver: Evolver::kalman(cfg.kalman) });
    }
    if let Some(p) = learned {
        m.push(Method::Pem { label: "pem_learned".into(), evolver: Evolver::recurrent(p.clone(), cfg.kalman) });
    }
    m
}

/// Loads or trains the learned predictor when the config asks for one.
pub fn learned_predictor(cfg: &ExperimentConfig) -> Result<Option<Arc<RecurrentPredictor>>> {
    if !cfg.predictor.wants_learned() {
        return Ok(None);
    }
    if let Some(p) = &cfg.predictor_file {
        return Ok(Some(Arc::new(RecurrentPredictor::load(p)?)));
    }
    let runs = training_runs(cfg)?;
    Ok(Some(Arc::new(train_predictor(cfg, &runs, cfg.train.augment)?.predictor)))
}

#[derive(Debug, Clone)]
pub struct Fig5Result {
    pub rows: Vec<SummaryRow>,
    pub reports: Vec<Report>,
}

/// PEM and the measurement-hold baselines at every configured SRS period.
pub fn run_fig5(cfg: &ExperimentConfig, learned: Option<Arc<RecurrentPredictor>>) -> Result<Fig5Result> {
    let scene = cfg.load_scene()?;
    let mut methods = pem_methods(cfg, learned.as_ref());
    methods.push(Method::HoldLast);
    methods.push(Method::LinearInterp);
    let reports = evaluate_runs(cfg, &scene, &eval_seeds(cfg), &methods, &cfg.srs_periods_ms, None)?;
    Ok(Fig5Result { rows: reports.iter().map(SummaryRow::of).collect(), reports })
}

pub fn cmd_experiment_fig5(cfg: &ExperimentConfig, out: &Path) -> Result<Fig5Result> {
    std::fs::create_dir_all(out)?;
    let learned = learned_predictor(cfg)?;
    if let (Some(p), None) = (&learned, &cfg.predictor_file) {
        p.save(out.join("predictor.json"))?;
    }
    let res = run_fig5(cfg, learned)?;
    write_reports(out, "fig5", &res.reports, &res.rows)?;
    Ok(res)
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralizationResult {
    pub rows: Vec<SummaryRow>,
    #[serde(skip)]
    pub reports: Vec<Report>,
    pub period_ms: f64,
    /// env-2 minus env-1 aggregate NMSE, dB.
    pub pem_gap_db: f64,
    pub pem_noaug_gap_db: f64,
    pub kalman_gap_db: f64,
    pub ckm_gap_db: f64,
}

/// Learned PEM (with and without augmentation), Kalman PEM and the path map,
/// all trained on env-1 only, evaluated on held-out env-1 runs and on env-2.
pub fn run_generalization(cfg: &ExperimentConfig) -> Result<(GeneralizationResult, RecurrentPredictor)> {
    let env1 = cfg.load_scene()?;
    let env2 = cfg.load_env2_scene()?;
    let runs = training_runs(cfg)?;
    let aug = Arc::new(train_predictor(cfg, &runs, true)?.predictor);
    let noaug = Arc::new(train_predictor(cfg, &runs, false)?.predictor);
    let map = ToyCkm::build(map_entries(&runs), cfg.train.map_paths)?;
    drop(runs);

    let methods = [
        Method::Pem { label: "pem_learned".into(), evolver: Evolver::recurrent(aug.clone(), cfg.kalman) },
        Method::Pem { label: "pem_learned_noaug".into(), evolver: Evolver::recurrent(noaug, cfg.kalman) },
        Method::Pem { label: "pem_kalman".into(), evolver: Evolver::kalman(cfg.kalman) },
        Method::ToyCkm,
    ];
    let period = cfg.srs_periods_ms[0];
    let seeds = eval_seeds(cfg);
    let mut reports = evaluate_runs(cfg, &env1, &seeds, &methods, &[period], Some(&map))?;
    reports.extend(evaluate_runs(cfg, &env2, &seeds, &methods, &[period], Some(&map))?);
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::of).collect();
    let (n1, n2) = (scene_name(&env1), scene_name(&env2));
    let gap = |m: &str| -> f64 {
        let a = find(&rows, &n1, period, m).map_or(f64::NAN, |r| r.nmse_db);
        let b = find(&rows, &n2, period, m).map_or(f64::NAN, |r| r.nmse_db);
        b - a
    };
    let res = GeneralizationResult {
        period_ms: period,
        pem_gap_db: gap("pem_learned"),
        pem_noaug_gap_db: gap("pem_learned_noaug"),
        kalman_gap_db: gap("pem_kalman"),
        ckm_gap_db: gap("toy_ckm"),
        rows,
        reports,
    };
    Ok((res, Arc::try_unwrap(aug).unwrap_or_else(|a| (*a).clone())))
}

pub fn cmd_experiment_generalization(cfg: &ExperimentConfig, out: &Path) -> Result<GeneralizationResult> {
    std::fs::create_dir_all(out)?;
    let (res, pred) = run_generalization(cfg)?;
    pred.save(out.join("predictor.json"))?;
    write_reports(out, "generalization", &res.reports, &res.rows)?;
    std::fs::write(out.join("generalization.json"), serde_json::to_string_pretty(&res)?)?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeoEvent {
    pub t: f64,
    pub kind: String,
    pub appeared: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackEvent {
    pub t: f64,
    pub id: u64,
    pub born: bool,
    /// Majority ground-truth path kind of the track's hits.
    pub kind: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrackDump {
    pub period_s: f64,
    /// `(t, kind, delay_ns, az_deg)` of every true path at every occasion.
    pub truth: Vec<(f64, String, f64, f64)>,
    pub log: TrackLog,
    pub geo_events: Vec<GeoEvent>,
    pub track_events: Vec<TrackEvent>,
    pub track_kinds: BTreeMap<u64, String>,
    /// Largest |tracked - true| delay over confirmed, labelled hits.
    pub max_delay_dev_ns: f64,
}

/// Path appear/disappear instants along the trajectory, on the eval grid.
fn geometric_events(cfg: &ExperimentConfig, scene: &Scene, run: &Run) -> Result<Vec<GeoEvent>> {
    let step = cfg.eval_step_ms * 1e-3;
    let n = (cfg.motion.duration_s / step + 1e-9).floor() as usize;
    let mut prev: Option<Vec<String>> = None;
    let mut out = Vec::new();
    for j in 0..=n {
        let t = j as f64 * step;
        let (pos, vel) = run.trajectory.state_at(t);
        let kinds: Vec<String> = scene.solve_paths(pos, vel)?.iter().map(|p| p.kind.label()).collect();
        if let Some(p) = &prev {
            for k in kinds.iter().filter(|k| !p.contains(k)) {
                out.push(GeoEvent { t, kind: k.clone(), appeared: true });
            }
            for k in p.iter().filter(|k| !kinds.contains(k)) {
                out.push(GeoEvent { t, kind: k.clone(), appeared: false });
            }
        }
        prev = Some(kinds);
    }
    Ok(out)
}

/// Tracks a single pass at the base period and labels every track with the
/// true path it follows.
pub fn run_track_dump(cfg: &ExperimentConfig) -> Result<TrackDump> {
    let scene = cfg.load_scene()?;
    let run = simulate_run(cfg, &scene, derive_seed(cfg.seed, stream::EVAL, 0), None)?;
    let evolver = Evolver::kalman(cfg.kalman);
    let mut ts = TrackSet::new(cfg.tracker);
    let mut log = TrackLog::default();
    let mut raw_events = Vec::new();
    let mut votes: BTreeMap<u64, BTreeMap<String, usize>> = BTreeMap::new();
    let mut max_dev: f64 = 0.0;
    let mut truth = Vec::new();

    for o in &run.occasions {
        for p in &o.truth {
            truth.push((o.t, p.kind.label(), p.delay_s * 1e9, p.azimuth_rad.to_degrees()));
        }
        let rep = ts.update(&o.features, o.t, &evolver)?;
        log.record(&ts, &rep, &o.features, o.t);
        raw_events.extend(rep.born.iter().map(|&id| (o.t, id, true)));
        raw_events.extend(rep.died.iter().map(|&id| (o.t, id, false)));
        for &(id, j) in &rep.matched {
            let f = &o.features[j];
            let nearest = o
                .truth
                .iter()
                .map(|p| {
                    let cost = ((f.delay_s - p.delay_s) / 5e-9).abs() + (f.azimuth_rad - p.azimuth_rad).to_degrees().abs() / 2.0;
                    (cost, p)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((cost, p)) = nearest {
                if cost <= 2.0 {
                    *votes.entry(id).or_default().entry(p.kind.label()).or_default() += 1;
                    if ts.get(id).is_some_and(|tr| tr.status != TrackStatus::Tentative) {
                        max_dev = max_dev.max((f.delay_s - p.delay_s).abs() * 1e9);
                    }
                }
            }
        }
    }
    let track_kinds: BTreeMap<u64, String> = votes
        .into_iter()
        .filter_map(|(id, v)| v.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| (id, k)))
        .collect();
    let track_events = raw_events
        .into_iter()
        .map(|(t, id, born)| TrackEvent { t, id, born, kind: track_kinds.get(&id).cloned() })
        .collect();
    Ok(TrackDump {
        period_s: run.period_s,
        truth,
        log,
        geo_events: geometric_events(cfg, &scene, &run)?,
        track_events,
        track_kinds,
        max_delay_dev_ns: max_dev,
    })
}

pub fn cmd_track_dump(cfg: &ExperimentConfig, out: &Path) -> Result<TrackDump> {
    std::fs::create_dir_all(out)?;
    let dump = run_track_dump(cfg)?;
    dump.log.write_csv(std::fs::File::create(out.join("tracks.csv"))?)?;
    let mut wr = csv::Writer::from_path(out.join("truth_paths.csv"))?;
    wr.write_record(["t", "kind", "delay_ns", "az_deg"])?;
    for (t, k, d, a) in &dump.truth {
        wr.write_record([t.to_string(), k.clone(), d.to_string(), a.to_string()])?;
    }
    wr.flush()?;
    let mut wr = csv::Writer::from_path(out.join("events.csv"))?;
    wr.write_record(["t", "source", "event", "label"])?;
    for e in &dump.geo_events {
        wr.write_record([e.t.to_string(), "geometry".into(), if e.appeared { "birth" } else { "death" }.into(), e.kind.clone()])?;
    }
    for e in &dump.track_events {
        let label = format!("track-{}:{}", e.id, e.kind.as_deref().unwrap_or("unlabelled"));
        wr.write_record([e.t.to_string(), "tracker".into(), if e.born { "birth" } else { "death" }.into(), label])?;
    }
    wr.flush()?;
    Ok(dump)
}

/// Writes `measurements.pemm`, `truth_paths.csv` and `trajectory.csv` for one
/// run at the base period; returns the number of occasions.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    std::fs::create_dir_all(out)?;
    let scene = cfg.load_scene()?;
    let period_s = cfg.base_period_ms() * 1e-3;
    let count = crate::chan::srs_schedule(0.0, period_s, cfg.motion.duration_s)?.len();
    let file = std::io::BufWriter::new(std::fs::File::create(out.join("measurements.pemm"))?);
    let mut archive = ArchiveWriter::new(file, cfg.grid.n_subcarriers, cfg.array.n_antennas(), count as u64)?;
    let mut truth = csv::Writer::from_path(out.join("truth_paths.csv"))?;
    truth.write_record(["t", "kind", "delay_ns", "az_deg", "el_deg", "gain_re", "gain_im", "doppler_hz"])?;
    let traj = for_each_measurement(cfg, &scene, derive_seed(cfg.seed, stream::EVAL, 0), period_s, |_, _, paths, meas| {
        for p in &paths {
            truth.write_record([
                meas.t.to_string(),
                p.kind.label(),
                (p.delay_s * 1e9).to_string(),
                p.azimuth_rad.to_degrees().to_string(),
                p.elevation_rad.to_degrees().to_string(),
                p.gain.re.to_string(),
                p.gain.im.to_string(),
                p.doppler_hz.to_string(),
            ])?;
        }
        archive.push(&meas)
    })?;
    archive.finish()?;
    truth.flush()?;
    traj.write_csv(std::fs::File::create(out.join("trajectory.csv"))?)?;
    Ok(count)
}

/// Trains the learned predictor on env-1 runs; writes the model, the
/// training windows and the loss curves.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    std::fs::create_dir_all(out)?;
    let runs = training_runs(cfg)?;
    let data = harvest(cfg, &runs, cfg.train.dataset_size, derive_seed(cfg.seed, stream::SUBSAMPLE, 0))?;
    write_samples_csv(std::fs::File::create(out.join("dataset.csv"))?, &data)?;
    let rep = train(&data, &cfg.train.train_config(derive_seed(cfg.seed, stream::FIT, 0), cfg.train.augment))?;
    rep.predictor.save(out.join("predictor.json"))?;
    let mut wr = csv::Writer::from_path(out.join("train_curve.csv"))?;
    wr.write_record(["epoch", "train_loss", "val_loss"])?;
    for (i, (a, b)) in rep.train_curve.iter().zip(&rep.val_curve).enumerate() {
        wr.write_record([(i + 1).to_string(), a.to_string(), b.to_string()])?;
    }
    wr.flush()?;
    Ok(rep)
}

/// Runs the extractor over a measurement archive; writes `features.csv`.
pub fn cmd_extract(cfg: &ExperimentConfig, archive: &Path, out: &Path) -> Result<usize> {
    std::fs::create_dir_all(out)?;
    let reader = crate::chan::io::ArchiveReader::new(std::io::BufReader::new(std::fs::File::open(archive)?))?;
    let mut ex = crate::extract::Extractor::new(cfg.array, cfg.grid, cfg.extract)?;
    let mut rows = Vec::new();
    for m in reader {
        let m = m?;
        rows.push((m.t, ex.extract(&m)?));
    }
    crate::extract::write_features_csv(std::fs::File::create(out.join("features.csv"))?, &rows)?;
    Ok(rows.len())
}
