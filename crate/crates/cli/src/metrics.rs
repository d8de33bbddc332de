//! Per-step metrics file.

use std::fs::File;
use std::path::Path;

use mdcoop_core::trainer::StepReport;

use crate::error::{io_err, CliError, CliResult};

pub const COLUMNS: [&str; 14] = [
    "step",
    "stage",
    "omega",
    "K",
    "ebm",
    "energy_reg",
    "teach",
    "diverse",
    "cycle",
    "style",
    "mode",
    "real_energy_mean",
    "synth_energy_mean",
    "wall_time_s",
];

/// Appends rows to `metrics.csv`; `step` counts completed steps.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

impl MetricsWriter {
    /// Start a fresh file.
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(COLUMNS).map_err(csv_err(path))?;
        inner.flush().map_err(io_err(format!("writing {}", path.display())))?;
        Ok(Self { inner })
    }

    /// Keep the rows up to and including `last_step` and append after them.
    /// A missing file starts fresh.
    pub fn resume(path: &Path, last_step: u64) -> CliResult<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = reader.headers().map_err(csv_err(path))?.clone();
        if header.iter().ne(COLUMNS) {
            return Err(CliError::Data(format!("{} has unexpected columns", path.display())));
        }
        let mut kept = Vec::new();
        for row in reader.records() {
            let row = row.map_err(csv_err(path))?;
            let step: u64 = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| CliError::Data(format!("{}: bad step value", path.display())))?;
            if step <= last_step {
                kept.push(row);
            }
        }
        let mut w = Self::create(path)?;
        for row in &kept {
            w.inner.write_record(row).map_err(csv_err(path))?;
        }
        w.inner.flush().map_err(io_err(format!("writing {}", path.display())))?;
        Ok(w)
    }

    pub fn append(&mut self, r: &StepReport, wall_time_s: Option<f64>) -> CliResult<()> {
        let f = |v: f64| v.to_string();
        let row = [
            (r.step + 1).to_string(),
            r.stage.to_string(),
            f(r.omega),
            r.mcmc_steps.to_string(),
            f(r.ebm),
            f(r.energy_reg),
            f(r.teach),
            f(r.diverse),
            f(r.cycle),
            f(r.style),
            f(r.mode),
            f(r.real_energy_mean),
            f(r.synth_energy_mean),
            wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
        ];
        self.inner.write_record(&row).map_err(|e| CliError::Data(format!("metrics: {e}")))?;
        self.inner.flush().map_err(io_err("writing metrics"))
    }
}

/// Rows of a metrics file, for comparisons.
pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err(path)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for step in 0..5 {
            w.append(&StepReport { step, stage: 1, omega: 1.0, ebm: step as f64 * 0.5, ..Default::default() }, None).unwrap();
        }
        drop(w);
        let mut w = MetricsWriter::resume(&path, 3).unwrap();
        w.append(&StepReport { step: 3, stage: 1, ebm: 9.0, ..Default::default() }, Some(1.0)).unwrap();
        drop(w);
        let rows = read_rows(&path).unwrap();
        assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["1", "2", "3", "4"]);
        assert_eq!(rows[3][4], "9");
        assert_eq!(rows[3][13], "1.000");
    }
}
