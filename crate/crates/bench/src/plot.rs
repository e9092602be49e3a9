//! Plot tables: per figure, one `(x, y, series)` row per point, with `y`
//! averaged over seeds.
//!
//! | id | source rows | x | y | series |
//! |----|-------------|---|---|--------|
//! | `fig5` | `sweep-snr` | `snr_db` | BLEU | constellation bits (`full` when unquantized) |
//! | `fig6` | `estimator-mse` | `snr_db` | MSE | estimator |
//! | `fig7` | `sweep-snr`, `baseline` on Rayleigh | `snr_db` | BLEU | CSI mode or baseline |
//! | `fig8` | as `fig7` on Rician | `snr_db` | BLEU | CSI mode or baseline |
//! | `fig9` | `sweep-sparsity` | `gamma` | BLEU | SNR |
//! | `fig10` | `sweep-bits` | `m_bits` | BLEU | γ |
//! | `table3` | `sweep-bits` | `m_bits` | ψ | γ |

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::results::{self, ResultRow};

pub const FIGURES: [&str; 7] = ["fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "table3"];

pub struct Figure {
    pub id: &'static str,
    experiments: &'static [&'static str],
    channel_prefix: Option<&'static str>,
    metric: &'static str,
    pub x: &'static str,
    series_columns: &'static [&'static str],
    series: fn(&ResultRow) -> Option<String>,
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn link_series(r: &ResultRow) -> Option<String> {
    if r.m_bits.is_some() {
        return None;
    }
    Some(if r.system == "deepsc" { r.csi_mode.clone() } else { format!("{}:{}", r.system, r.csi_mode) })
}

pub fn figure(id: &str) -> Result<Figure> {
    let f = match id {
        "fig5" => Figure {
            id: "fig5",
            experiments: &["sweep-snr"],
            channel_prefix: None,
            metric: "bleu",
            x: "snr_db",
            series_columns: &["system", "m_bits"],
            series: |r| (r.system == "deepsc").then(|| r.m_bits.map(|m| format!("{m}-bit")).unwrap_or_else(|| "full".into())),
        },
        "fig6" => Figure {
            id: "fig6",
            experiments: &["estimator-mse"],
            channel_prefix: None,
            metric: "mse",
            x: "snr_db",
            series_columns: &["csi_mode"],
            series: |r| Some(r.csi_mode.clone()),
        },
        "fig7" | "fig8" => Figure {
            id: if id == "fig7" { "fig7" } else { "fig8" },
            experiments: &["sweep-snr", "baseline"],
            channel_prefix: Some(if id == "fig7" { "rayleigh" } else { "rician" }),
            metric: "bleu",
            x: "snr_db",
            series_columns: &["system", "csi_mode", "channel", "m_bits"],
            series: link_series,
        },
        "fig9" => Figure {
            id: "fig9",
            experiments: &["sweep-sparsity"],
            channel_prefix: None,
            metric: "bleu",
            x: "gamma",
            series_columns: &["snr_db"],
            series: |r| Some(format!("snr={}", fmt(r.snr_db))),
        },
        "fig10" | "table3" => Figure {
            id: if id == "fig10" { "fig10" } else { "table3" },
            experiments: &["sweep-bits"],
            channel_prefix: None,
            metric: if id == "fig10" { "bleu" } else { "psi" },
            x: "m_bits",
            series_columns: &["gamma"],
            series: |r| Some(format!("gamma={}", fmt(r.gamma))),
        },
        other => bail!("unknown figure `{other}` (known: {})", FIGURES.join(", ")),
    };
    Ok(f)
}

impl Figure {
    pub fn required_columns(&self) -> Vec<&'static str> {
        let mut cols = vec!["experiment", "metric", "value", self.x];
        cols.extend(self.series_columns.iter().filter(|c| !cols.contains(c)).collect::<Vec<_>>());
        cols
    }

    fn x_of(&self, r: &ResultRow) -> Option<f64> {
        match self.x {
            "snr_db" => r.snr_db,
            "gamma" => r.gamma,
            "m_bits" => r.m_bits.map(f64::from),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
    /// Rows (seeds) averaged into `y`.
    pub n: usize,
}

/// Selects and averages the rows belonging to `fig`.
pub fn plot_points(rows: &[ResultRow], fig: &Figure) -> Vec<PlotPoint> {
    let mut acc: Vec<PlotPoint> = Vec::new();
    for r in rows {
        if !fig.experiments.contains(&r.experiment.as_str()) || r.metric != fig.metric {
            continue;
        }
        if fig.channel_prefix.is_some_and(|p| !r.channel.starts_with(p)) {
            continue;
        }
        let (Some(x), Some(series)) = (fig.x_of(r), (fig.series)(r)) else { continue };
        match acc.iter_mut().find(|p| p.x == x && p.series == series) {
            Some(p) => {
                p.y += r.value;
                p.n += 1;
            }
            None => acc.push(PlotPoint { x, y: r.value, series, n: 1 }),
        }
    }
    for p in &mut acc {
        p.y /= p.n as f64;
    }
    acc.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    acc
}

/// Writes the table for `figure_id` from the results file `csv` to `out`.
/// Returns the number of points written.
pub fn emit_plotdata(csv: &Path, figure_id: &str, out: &Path) -> Result<usize> {
    let fig = figure(figure_id)?;
    let rows = results::read(csv, &fig.required_columns())?;
    let points = plot_points(&rows, &fig);
    let mut f = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    writeln!(f, "# {}: x={} y={} (mean over seeds)", fig.id, fig.x, fig.metric)?;
    writeln!(f, "x,y,series,n")?;
    for p in &points {
        writeln!(f, "{},{},{},{}", p.x, p.y, p.series, p.n)?;
    }
    Ok(points.len())
}

/// `<dir>/<csv stem>.<figure>.csv`, where `dir` is `LDSC_OUTPUT_DIR` if set
/// and the results file's directory otherwise.
pub fn default_output(csv: &Path, figure_id: &str) -> PathBuf {
    let dir = std::env::var_os(crate::OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    dir.join(format!("{stem}.{figure_id}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(exp: &str, system: &str, seed: u64, metric: &str, value: f64) -> ResultRow {
        ResultRow::new(exp, system, seed, metric, value)
    }

    #[test]
    fn averages_over_seeds_and_filters_channel() {
        let mut rows = Vec::new();
        for (seed, v) in [(1, 0.5), (2, 0.7)] {
            let mut r = row("sweep-snr", "deepsc", seed, "bleu", v);
            r.channel = "rayleigh".into();
            r.csi_mode = "perfect".into();
            r.snr_db = Some(6.0);
            rows.push(r);
        }
        let mut other = rows[0].clone();
        other.channel = "rician-2".into();
        rows.push(other);
        let mut base = row("baseline", "baseline-huffman", 1, "bleu", 0.01);
        base.channel = "rayleigh".into();
        base.csi_mode = "perfect".into();
        base.snr_db = Some(6.0);
        rows.push(base);
        let pts = plot_points(&rows, &figure("fig7").unwrap());
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].series, "baseline-huffman:perfect");
        assert!((pts[1].y - 0.6).abs() < 1e-12);
        assert_eq!(pts[1].n, 2);
        assert_eq!(plot_points(&rows, &figure("fig8").unwrap()).len(), 1);
    }

    #[test]
    fn unknown_figure_and_required_columns() {
        assert!(figure("fig11").is_err());
        let t3 = figure("table3").unwrap();
        assert_eq!(t3.required_columns(), vec!["experiment", "metric", "value", "m_bits", "gamma"]);
    }
}
