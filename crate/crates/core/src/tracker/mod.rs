//! Path update: associates extracted features with tracks and manages path
//! birth and death.
//!
//! Lifecycle: a birth is tentative; a second consecutive hit confirms it and
//! a miss while tentative deletes it. A confirmed track that misses coasts and
//! is deleted after `delete_misses` consecutive misses.

pub mod assign;

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};
use crate::evolve::{Evolver, PredictorState};
use crate::extract::PathFeature;
use crate::geom::angle_diff;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub sigma_delay_s: f64,
    pub gate_delay_s: f64,
    pub sigma_angle_rad: f64,
    pub gate_angle_rad: f64,
    pub sigma_power_db: f64,
    pub gate_power_db: f64,
    pub history: usize,
    pub confirm_hits: usize,
    pub delete_misses: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            sigma_delay_s: 5e-9,
            gate_delay_s: 15e-9,
            sigma_angle_rad: 2f64.to_radians(),
            gate_angle_rad: 6f64.to_radians(),
            sigma_power_db: 3.0,
            gate_power_db: 10.0,
            history: 8,
            confirm_hits: 2,
            delete_misses: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Coasting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub status: TrackStatus,
    pub born_t: f64,
    /// Most recent `(t, feature)` hits, oldest first.
    pub history: VecDeque<(f64, PathFeature)>,
    pub hit_count: usize,
    pub miss_count: usize,
    pub predictor: PredictorState,
}

impl Track {
    pub fn is_confirmed(&self) -> bool {
        self.status != TrackStatus::Tentative
    }

    pub fn last(&self) -> Option<&(f64, PathFeature)> {
        self.history.back()
    }
}

/// What one update did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    /// `(track id, feature index)`.
    pub matched: Vec<(u64, usize)>,
    pub born: Vec<u64>,
    pub confirmed: Vec<u64>,
    pub died: Vec<u64>,
}

/// Tracks of one UE stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    pub next_id: u64,
    pub last_update_t: Option<f64>,
}

/// Gated normalized distance between a predicted and an observed feature;
/// `None` if any component falls outside its gate.
pub fn feature_cost(pred: &PathFeature, feat: &PathFeature, cfg: &TrackerConfig) -> Option<f64> {
    let dd = feat.delay_s - pred.delay_s;
    let da = angle_diff(feat.azimuth_rad, pred.azimuth_rad);
    let de = feat.elevation_rad - pred.elevation_rad;
    let dp = feat.power_db() - pred.power_db();
    if dd.abs() > cfg.gate_delay_s || da.abs() > cfg.gate_angle_rad || de.abs() > cfg.gate_angle_rad || dp.abs() > cfg.gate_power_db {
        return None;
    }
    Some((dd / cfg.sigma_delay_s).powi(2) + (da / cfg.sigma_angle_rad).powi(2) + (de / cfg.sigma_angle_rad).powi(2) + (dp / cfg.sigma_power_db).powi(2))
}

/// Association cost of `feat` against `track` predicted to `t`.
pub fn association_cost(track: &Track, feat: &PathFeature, t: f64, evolver: &Evolver, cfg: &TrackerConfig) -> Option<f64> {
    let pred = evolver.predict(&track.predictor, t).feature;
    feature_cost(&pred, feat, cfg)
}

impl TrackSet {
    pub fn new(config: TrackerConfig) -> Self {
        TrackSet { config, tracks: Vec::new(), next_id: 0, last_update_t: None }
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_confirmed())
    }

    pub fn get(&self, id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn update(&mut self, feats: &[PathFeature], t: f64, evolver: &Evolver) -> Result<UpdateReport> {
        if let Some(last) = self.last_update_t {
            if !(t > last) {
                return Err(PemError::NonMonotoneTime { t, last });
            }
        }
        let cfg = self.config;
        let cost: Vec<Vec<Option<f64>>> =
            self.tracks.iter().map(|tr| feats.iter().map(|f| association_cost(tr, f, t, evolver, &cfg)).collect()).collect();
        let pairs = assign::assign(&cost);

        let mut report = UpdateReport::default();
        let mut track_hit = vec![false; self.tracks.len()];
        let mut feat_used = vec![false; feats.len()];
        for &(i, j) in &pairs {
            track_hit[i] = true;
            feat_used[j] = true;
            let tr = &mut self.tracks[i];
            evolver.ingest(&mut tr.predictor, &feats[j], t)?;
            tr.history.push_back((t, feats[j]));
            while tr.history.len() > cfg.history.max(1) {
                tr.history.pop_front();
            }
            tr.hit_count += 1;
            tr.miss_count = 0;
            if tr.status == TrackStatus::Tentative && tr.hit_count >= cfg.confirm_hits {
                report.confirmed.push(tr.id);
            }
            if tr.status != TrackStatus::Tentative || tr.hit_count >= cfg.confirm_hits {
                tr.status = TrackStatus::Confirmed;
            }
            report.matched.push((tr.id, j));
        }

        let mut keep = Vec::with_capacity(self.tracks.len());
        for (i, mut tr) in std::mem::take(&mut self.tracks).into_iter().enumerate() {
            if !track_hit[i] {
                tr.miss_count += 1;
                if tr.status == TrackStatus::Tentative || tr.miss_count >= cfg.delete_misses {
                    report.died.push(tr.id);
                    continue;
                }
                tr.status = TrackStatus::Coasting;
            }
            keep.push(tr);
        }
        self.tracks = keep;

        for (j, f) in feats.iter().enumerate() {
            if feat_used[j] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let status = if cfg.confirm_hits <= 1 { TrackStatus::Confirmed } else { TrackStatus::Tentative };
            self.tracks.push(Track {
                id,
                status,
                born_t: t,
                history: VecDeque::from([(t, *f)]),
                hit_count: 1,
                miss_count: 0,
                predictor: evolver.init(f, t),
            });
            report.born.push(id);
        }
        self.last_update_t = Some(t);
        Ok(report)
    }
}

/// Accumulates every hit of every track for export.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackLog {
    /// `(id, t, status after the update, feature)`.
    pub rows: Vec<(u64, f64, TrackStatus, PathFeature)>,
}

impl TrackLog {
    pub fn record(&mut self, ts: &TrackSet, report: &UpdateReport, feats: &[PathFeature], t: f64) {
        for &(id, j) in &report.matched {
            let status = ts.get(id).map_or(TrackStatus::Confirmed, |tr| tr.status);
            self.rows.push((id, t, status, feats[j]));
        }
        for &id in &report.born {
            if let Some(tr) = ts.get(id) {
                self.rows.push((id, t, tr.status, tr.history[0].1));
            }
        }
    }

    /// CSV `id,t,status,delay_ns,az_deg,el_deg,power_db,doppler_hz`, sorted by id then time.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["id", "t", "status", "delay_ns", "az_deg", "el_deg", "power_db", "doppler_hz"])?;
        for (id, t, st, f) in rows {
            let status = match st {
                TrackStatus::Tentative => "tentative",
                TrackStatus::Confirmed => "confirmed",
                TrackStatus::Coasting => "coasting",
            };
            wr.write_record(&[
                id.to_string(),
                t.to_string(),
                status.to_string(),
                (f.delay_s * 1e9).to_string(),
                f.azimuth_rad.to_degrees().to_string(),
                f.elevation_rad.to_degrees().to_string(),
                f.power_db().to_string(),
                f.doppler_hz.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
