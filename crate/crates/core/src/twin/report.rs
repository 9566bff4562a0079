//! Evaluation report: per-instant NMSE, pooled aggregate and per-path tables.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PemError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scene: String,
    pub srs_period_s: f64,
    pub method: String,
    pub predictor: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantNmse {
    pub t: f64,
    pub nmse_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub id: u64,
    pub t: f64,
    pub delay_ns: f64,
    pub az_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub instants: Vec<InstantNmse>,
    /// Instants skipped because the method had nothing to predict from.
    pub cold_instants: usize,
    pub aggregate_nmse_db: f64,
    pub paths: Vec<PathSample>,
}

/// `10 log10` of the mean linear NMSE.
pub fn aggregate_db(nmse_db: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in nmse_db {
        sum += 10f64.powf(v / 10.0);
        n += 1;
    }
    10.0 * (sum / n as f64).log10()
}

impl Report {
    pub fn new(meta: ReportMeta, instants: Vec<InstantNmse>, cold_instants: usize, paths: Vec<PathSample>) -> Result<Self> {
        if instants.is_empty() {
            return Err(PemError::InvalidParameter(format!("report for {} has no evaluated instants", meta.method)));
        }
        if let Some(bad) = instants.iter().find(|i| !i.nmse_db.is_finite()) {
            return Err(PemError::InvalidParameter(format!("non-finite NMSE at t = {}", bad.t)));
        }
        let aggregate_nmse_db = aggregate_db(instants.iter().map(|i| i.nmse_db));
        Ok(Report { meta, instants, cold_instants, aggregate_nmse_db, paths })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_nmse_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "nmse_db"])?;
        for i in &self.instants {
            wr.write_record([i.t.to_string(), i.nmse_db.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_paths_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["id", "t", "delay_ns", "az_deg"])?;
        for p in &self.paths {
            wr.write_record([p.id.to_string(), p.t.to_string(), p.delay_ns.to_string(), p.az_deg.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `<stem>.json`, `<stem>_nmse.csv` and `<stem>_paths.csv` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        self.write_nmse_csv(std::fs::File::create(dir.join(format!("{stem}_nmse.csv")))?)?;
        self.write_paths_csv(std::fs::File::create(dir.join(format!("{stem}_paths.csv")))?)?;
        Ok(())
    }
}

/// Reads a `t,nmse_db` table back.
pub fn read_nmse_csv<R: Read>(r: R) -> Result<Vec<InstantNmse>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
