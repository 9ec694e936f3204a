//! CSV output. Every file opens with a `# qsd-csv/<version> <kind>` comment
//! line naming its schema, followed by a header row. Floats are written with
//! 17 significant digits so they read back bit-identically.

use std::io::{self, Write};

use crate::engine::{EnsembleResult, Trajectory};
use crate::entropy::fpe::Pdf1DGrid;
use crate::stats::Histogram;

/// Bumped whenever a column layout changes.
pub const SCHEMA_VERSION: &str = "qsd-csv/1";

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    /// Writes the schema line, any `meta` comment lines and the header row.
    pub fn new(mut out: W, kind: &str, meta: &[String], columns: &[String]) -> io::Result<Self> {
        writeln!(out, "# {SCHEMA_VERSION} {kind}")?;
        for m in meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self { out })
    }

    pub fn row(&mut self, values: &[f64]) -> io::Result<()> {
        let cells: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(self.out, "{}", cells.join(","))
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// `t, <coords>` then `ds_env`, and `ds_sys, ds_tot` when present.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory, meta: &[String]) -> io::Result<W> {
    let mut cols = vec!["t".to_string()];
    cols.extend(traj.labels.iter().cloned());
    let entropy = traj.entropy.as_ref();
    let total = entropy.and_then(|e| e.total());
    if entropy.is_some() {
        cols.push("ds_env".into());
    }
    if total.is_some() {
        cols.push("ds_sys".into());
        cols.push("ds_tot".into());
    }
    let mut w = CsvWriter::new(out, "trajectory", meta, &cols)?;
    let mut row = Vec::with_capacity(cols.len());
    for k in 0..traj.len() {
        row.clear();
        row.push(traj.times[k]);
        row.extend_from_slice(traj.state(k));
        if let Some(e) = entropy {
            row.push(e.env[k]);
            if let (Some(sys), Some(tot)) = (&e.sys, &total) {
                row.push(sys[k]);
                row.push(tot[k]);
            }
        }
        w.row(&row)?;
    }
    w.finish()
}

/// `t, mean_<c>..., var_<c>...`, then `mean_ds_env, var_ds_env` when
/// entropy was tracked, then any `extra` columns.
pub fn write_ensemble<W: Write>(
    out: W,
    res: &EnsembleResult,
    extra: &[(String, Vec<f64>)],
    meta: &[String],
) -> io::Result<W> {
    let mut cols = vec!["t".to_string()];
    cols.extend(res.labels.iter().map(|l| format!("mean_{l}")));
    cols.extend(res.labels.iter().map(|l| format!("var_{l}")));
    if res.mean_ds_env.is_some() {
        cols.push("mean_ds_env".into());
        cols.push("var_ds_env".into());
    }
    cols.extend(extra.iter().map(|(n, _)| n.clone()));
    let mut w = CsvWriter::new(out, "ensemble", meta, &cols)?;
    let mut row = Vec::with_capacity(cols.len());
    for t in 0..res.times.len() {
        row.clear();
        row.push(res.times[t]);
        row.extend(res.mean.iter().map(|m| m[t]));
        row.extend(res.var.iter().map(|v| v[t]));
        if let (Some(m), Some(v)) = (&res.mean_ds_env, &res.var_ds_env) {
            row.push(m[t]);
            row.push(v[t]);
        }
        row.extend(extra.iter().map(|(_, c)| c[t]));
        w.row(&row)?;
    }
    w.finish()
}

/// `t, ds_env_0, ds_env_1, ...` from kept ensemble traces.
pub fn write_entropy_traces<W: Write>(out: W, traces: &[Trajectory], meta: &[String]) -> io::Result<W> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..traces.len()).map(|i| format!("ds_env_{i}")));
    let mut w = CsvWriter::new(out, "entropy-traces", meta, &cols)?;
    let Some(first) = traces.first() else {
        return w.finish();
    };
    for k in 0..first.len() {
        let mut row = vec![first.times[k]];
        row.extend(traces.iter().map(|t| t.entropy.as_ref().map_or(f64::NAN, |e| e.env[k])));
        w.row(&row)?;
    }
    w.finish()
}

/// `bin_lo, bin_hi, count, empirical_density, analytic_density`.
pub fn write_histogram<W: Write, F: Fn(f64, f64) -> f64>(
    out: W,
    hist: &Histogram,
    analytic_density: F,
    meta: &[String],
) -> io::Result<W> {
    let cols: Vec<String> =
        ["bin_lo", "bin_hi", "count", "empirical_density", "analytic_density"].iter().map(|s| s.to_string()).collect();
    let mut w = CsvWriter::new(out, "histogram", meta, &cols)?;
    for k in 0..hist.bins() {
        let (a, b) = hist.edges(k);
        w.row(&[a, b, hist.counts[k] as f64, hist.density(k), analytic_density(a, b)])?;
    }
    w.finish()
}

/// `<label>, density, fpe_density`.
pub fn write_stationary<W: Write>(
    out: W,
    label: &str,
    points: &[f64],
    analytic: &[f64],
    fpe: &[f64],
    meta: &[String],
) -> io::Result<W> {
    let cols = vec![label.to_string(), "density".into(), "fpe_density".into()];
    let mut w = CsvWriter::new(out, "stationary", meta, &cols)?;
    for ((x, a), f) in points.iter().zip(analytic).zip(fpe) {
        w.row(&[*x, *a, *f])?;
    }
    w.finish()
}

/// `t, <label>, p` for each snapshot, cell centres in order.
pub fn write_fpe<W: Write>(out: W, label: &str, snapshots: &[Pdf1DGrid], meta: &[String]) -> io::Result<W> {
    let cols = vec!["t".to_string(), label.to_string(), "p".into()];
    let mut w = CsvWriter::new(out, "fpe", meta, &cols)?;
    for g in snapshots {
        for (x, p) in g.centers().iter().zip(&g.p) {
            w.row(&[g.time, *x, *p])?;
        }
    }
    w.finish()
}

/// Parsed CSV: header columns and numeric rows. Comment lines are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_table(text: &str) -> Result<Table, String> {
    let mut schema = None;
    let mut columns = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.strip_prefix('#') {
            if schema.is_none() && columns.is_none() {
                schema = Some(c.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match &columns {
            None => columns = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
            Some(cols) => {
                let row: Vec<f64> = line
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1)))
                    .collect::<Result<_, _>>()?;
                if row.len() != cols.len() {
                    return Err(format!("line {}: {} fields, header has {}", i + 1, row.len(), cols.len()));
                }
                rows.push(row);
            }
        }
    }
    Ok(Table { schema, columns: columns.ok_or("no header row")?, rows })
}
