use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::FeatureDistances;

/// Mean losses over one logging interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub phase: &'static str,
    /// Last step of the interval, 1-based; 0 is the loss before any update.
    pub iteration: usize,
    pub loss: f64,
    /// Per-model feature loss, empty for the appearance phase.
    pub models: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    /// Held-out feature distances per model after training.
    pub heldout: BTreeMap<String, FeatureDistances>,
    /// Held-out PSNR after the appearance phase, when it ran.
    pub heldout_psnr: Option<f64>,
    pub iterations: usize,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    summary: bool,
    iterations: usize,
    heldout: &'a BTreeMap<String, FeatureDistances>,
    heldout_psnr: Option<f64>,
    wall_clock_secs: f64,
}

impl TrainReport {
    /// One JSON object per record, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        let summary = Summary {
            summary: true,
            iterations: self.iterations,
            heldout: &self.heldout,
            heldout_psnr: self.heldout_psnr,
            wall_clock_secs: self.wall_clock_secs,
        };
        serde_json::to_writer(&mut w, &summary).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Loss values of one phase in iteration order.
    pub fn losses(&self, phase: &str) -> Vec<(usize, f64)> {
        self.records.iter().filter(|r| r.phase == phase).map(|r| (r.iteration, r.loss)).collect()
    }
}

/// Averages step losses into fixed-width records.
#[derive(Debug)]
pub(crate) struct LossLog {
    phase: &'static str,
    interval: usize,
    sum: f64,
    models: BTreeMap<String, f64>,
    count: usize,
}

impl LossLog {
    pub(crate) fn new(phase: &'static str, interval: usize) -> Self {
        Self { phase, interval, sum: 0.0, models: BTreeMap::new(), count: 0 }
    }

    pub(crate) fn record_initial(&self, report: &mut TrainReport, loss: f64, models: BTreeMap<String, f64>) {
        report.records.push(LossRecord { phase: self.phase, iteration: 0, loss, models });
    }

    pub(crate) fn push(&mut self, report: &mut TrainReport, iteration: usize, loss: f64, models: &[(String, f64)]) {
        self.sum += loss;
        for (name, l) in models {
            *self.models.entry(name.clone()).or_insert(0.0) += l;
        }
        self.count += 1;
        if iteration.is_multiple_of(self.interval) {
            self.flush(report, iteration);
        }
    }

    pub(crate) fn flush(&mut self, report: &mut TrainReport, iteration: usize) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        let models = std::mem::take(&mut self.models).into_iter().map(|(k, v)| (k, v / n)).collect();
        report.records.push(LossRecord { phase: self.phase, iteration, loss: self.sum / n, models });
        self.sum = 0.0;
        self.count = 0;
    }
}
