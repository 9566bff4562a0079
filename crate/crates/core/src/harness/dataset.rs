use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::run::Run;
use crate::error::Result;
use crate::evolve::{feature_vec, Evolver, TrainSample, SEQ_LEN};
use crate::extract::PathFeature;
use crate::tracker::TrackSet;
use crate::twin::CkmEntry;

/// Every hit of every track, by track id, on the strided schedule.
pub fn track_hits(cfg: &ExperimentConfig, run: &Run, stride: usize) -> Result<BTreeMap<u64, Vec<(f64, PathFeature)>>> {
    let evolver = Evolver::kalman(cfg.kalman);
    let mut ts = TrackSet::new(cfg.tracker);
    let mut hits: BTreeMap<u64, Vec<(f64, PathFeature)>> = BTreeMap::new();
    for o in run.occasions.iter().step_by(stride.max(1)) {
        let rep = ts.update(&o.features, o.t, &evolver)?;
        for (id, idx) in rep.matched {
            hits.entry(id).or_default().push((o.t, o.features[idx]));
        }
    }
    Ok(hits)
}

/// Sliding windows of `SEQ_LEN + 1` consecutive hits of each track.
pub fn windows(hits: &BTreeMap<u64, Vec<(f64, PathFeature)>>) -> Vec<TrainSample> {
    let mut out = Vec::new();
    for log in hits.values() {
        for w in log.windows(SEQ_LEN + 1) {
            let seq = (0..SEQ_LEN)
                .map(|i| (if i == 0 { 0.0 } else { w[i].0 - w[i - 1].0 }, feature_vec(&w[i].1)))
                .collect();
            out.push(TrainSample { seq, target_dt: w[SEQ_LEN].0 - w[SEQ_LEN - 1].0, target: feature_vec(&w[SEQ_LEN].1) });
        }
    }
    out
}

/// Windows from every run at every configured period, subsampled to `size`.
pub fn harvest(cfg: &ExperimentConfig, runs: &[Run], size: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let mut all = Vec::new();
    for run in runs {
        for &p in &cfg.srs_periods_ms {
            all.extend(windows(&track_hits(cfg, run, cfg.stride(p))?));
        }
    }
    if all.len() > size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        all.truncate(size);
    }
    Ok(all)
}

/// Path-map entries: UE position and extracted features of every occasion.
pub fn map_entries(runs: &[Run]) -> Vec<CkmEntry> {
    runs.iter()
        .flat_map(|r| r.occasions.iter().map(|o| CkmEntry { position: o.position, features: o.features.clone() }))
        .collect()
}
