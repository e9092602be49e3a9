//! Versioned results CSV.
//!
//! The first line is the schema comment [`SCHEMA_LINE`], the second the
//! column header. Empty cells mean "not applicable". Rows are flushed after
//! every completed point so an interrupted sweep keeps what it finished.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const SCHEMA_LINE: &str = "# ldsc-results v1";
pub const COLUMNS: [&str; 11] =
    ["experiment", "system", "seed", "channel", "csi_mode", "snr_db", "gamma", "m_bits", "metric", "value", "wall_time_s"];

/// One measured value at one configuration point.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    /// `deepsc` or `baseline-<scheme>`.
    pub system: String,
    pub seed: u64,
    pub channel: String,
    pub csi_mode: String,
    pub snr_db: Option<f64>,
    pub gamma: Option<f64>,
    pub m_bits: Option<u32>,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn new(experiment: &str, system: &str, seed: u64, metric: &str, value: f64) -> Self {
        Self {
            experiment: experiment.into(),
            system: system.into(),
            seed,
            channel: String::new(),
            csi_mode: String::new(),
            snr_db: None,
            gamma: None,
            m_bits: None,
            metric: metric.into(),
            value,
            wall_time_s: 0.0,
        }
    }

    fn record(&self) -> [String; 11] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.experiment.clone(),
            self.system.clone(),
            self.seed.to_string(),
            self.channel.clone(),
            self.csi_mode.clone(),
            opt(self.snr_db),
            opt(self.gamma),
            self.m_bits.map(|m| m.to_string()).unwrap_or_default(),
            self.metric.clone(),
            self.value.to_string(),
            format!("{:.3}", self.wall_time_s),
        ]
    }

    /// Value of a column by name, as written to the file.
    pub fn column(&self, name: &str) -> Option<String> {
        COLUMNS.iter().position(|c| *c == name).map(|i| self.record()[i].clone())
    }
}

/// Serializes rows to one file; one writer per run.
pub struct ResultWriter {
    inner: csv::Writer<File>,
}

impl ResultWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{SCHEMA_LINE}")?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    /// Writes all rows of one completed point and flushes.
    pub fn write_point(&mut self, rows: &[ResultRow]) -> Result<()> {
        for r in rows {
            self.inner.write_record(r.record())?;
        }
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a results file, checking the schema line and that `required`
/// columns are present.
pub fn read(path: &Path, required: &[&str]) -> Result<Vec<ResultRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        bail!("{}: expected schema line `{SCHEMA_LINE}`", path.display());
    }
    let mut csv = csv::Reader::from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
    if !missing.is_empty() {
        bail!("{}: missing columns: {}", path.display(), missing.join(", "));
    }
    let idx = |name: &str| header.iter().position(|h| h == name);
    let mut rows = Vec::new();
    for (n, rec) in csv.records().enumerate() {
        let rec = rec?;
        let get = |name: &str| idx(name).and_then(|i| rec.get(i)).unwrap_or("").to_string();
        let opt = |name: &str| -> Result<Option<f64>> {
            let s = get(name);
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse().with_context(|| format!("row {}: `{name}`", n + 1))?))
            }
        };
        rows.push(ResultRow {
            experiment: get("experiment"),
            system: get("system"),
            seed: get("seed").parse().unwrap_or(0),
            channel: get("channel"),
            csi_mode: get("csi_mode"),
            snr_db: opt("snr_db")?,
            gamma: opt("gamma")?,
            m_bits: opt("m_bits")?.map(|m| m as u32),
            metric: get("metric"),
            value: opt("value")?.unwrap_or(f64::NAN),
            wall_time_s: opt("wall_time_s")?.unwrap_or(0.0),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut row = ResultRow::new("sweep-bits", "deepsc", 3, "psi", 26.666666666666668);
        row.gamma = Some(0.9);
        row.m_bits = Some(12);
        row.channel = "rician-2,rho".into();
        let mut w = ResultWriter::create(&path).unwrap();
        w.write_point(&[row.clone()]).unwrap();
        drop(w);
        let back = read(&path, &COLUMNS).unwrap();
        assert_eq!(back, vec![row]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# ldsc-results v1\nexperiment,system,seed"));
    }

    #[test]
    fn missing_columns_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "# ldsc-results v1\nexperiment,value\nx,1\n").unwrap();
        let err = read(&path, &["metric", "value", "snr_db"]).unwrap_err().to_string();
        assert!(err.contains("metric, snr_db"), "{err}");
        std::fs::write(&path, "experiment,value\n").unwrap();
        assert!(read(&path, &[]).is_err());
    }
}
