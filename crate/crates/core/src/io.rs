//! CSV and JSON persistence for every artifact the library produces.
//!
//! Floats in CSV files are written with 17 significant digits so that a
//! write/read cycle reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestReport, LagSummary, TargetResult};
use crate::error::{Result, RiderError};
use crate::estimator::{CvRow, MomentMatrix};
use crate::shift_sim::{Panel, TimedDataset, WeightField};
use crate::weights::WeightVector;
use crate::werm::WermModel;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

/// Column positions for `names` in the header, or a `MissingColumn` error.
fn locate(path: &Path, headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| RiderError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        })
        .collect()
}

struct Cells<'a> {
    path: &'a Path,
    headers: &'a csv::StringRecord,
    record: csv::StringRecord,
    /// 1-based data row, header excluded.
    row: usize,
}

impl Cells<'_> {
    fn error(&self, col: usize, message: impl Into<String>) -> RiderError {
        RiderError::Parse {
            path: self.path.to_path_buf(),
            row: self.row,
            column: self.headers.get(col).unwrap_or("?").to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, col: usize) -> Result<&str> {
        self.record.get(col).ok_or_else(|| self.error(col, "missing cell"))
    }

    fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T> {
        let s = self.raw(col)?;
        s.parse().map_err(|_| self.error(col, format!("cannot parse `{s}`")))
    }

    fn f64(&self, col: usize) -> Result<f64> {
        let s = self.raw(col)?;
        s.parse::<f64>().map_err(|_| self.error(col, format!("non-numeric value `{s}`")))
    }

    fn opt_f64(&self, col: usize) -> Result<Option<f64>> {
        if self.raw(col)?.is_empty() {
            Ok(None)
        } else {
            self.f64(col).map(Some)
        }
    }
}

fn for_each_row(path: &Path, mut f: impl FnMut(&Cells<'_>) -> Result<()>) -> Result<csv::StringRecord> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    for (i, record) in rdr.records().enumerate() {
        let cells = Cells { path, headers: &headers, record: record?, row: i + 1 };
        f(&cells)?;
    }
    Ok(headers)
}

fn headers_of(path: &Path) -> Result<csv::StringRecord> {
    Ok(reader(path)?.headers()?.clone())
}

// ---- panels ----

pub fn write_panel_csv(path: &Path, panel: &Panel) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=panel.dim()).map(|l| format!("x{l}")));
    w.write_record(&header)?;
    for ds in panel.datasets() {
        for (x, y) in ds.rows() {
            let mut rec = vec![ds.t.to_string(), fmt_f64(y)];
            rec.extend(x.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel written by [`write_panel_csv`].
pub fn read_panel_csv(path: &Path) -> Result<Panel> {
    load_panel_csv(path, &PanelSchema::new("t", "y", feature_columns(path)?))
}

/// Header names starting with `x`, in file order.
pub fn feature_columns(path: &Path) -> Result<Vec<String>> {
    Ok(headers_of(path)?.iter().filter(|h| h.starts_with('x')).map(str::to_string).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// The time column holds integer indices.
    #[default]
    ByTimeIndex,
    /// The time column holds dates; rows are grouped by ISO week and `t`
    /// counts weeks since 1970-01-05, so missing weeks leave gaps in `t`.
    ByCalendarWeek,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSchema {
    pub time_column: String,
    pub outcome_column: String,
    pub feature_columns: Vec<String>,
    #[serde(default)]
    pub grouping: Grouping,
}

impl PanelSchema {
    pub fn new(time: impl Into<String>, outcome: impl Into<String>, features: Vec<String>) -> Self {
        Self {
            time_column: time.into(),
            outcome_column: outcome.into(),
            feature_columns: features,
            grouping: Grouping::ByTimeIndex,
        }
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.date_naive()))
        .or_else(|| chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok().map(|d| d.date()))
}

/// Week number of `date`, counted in whole ISO weeks from Monday 1970-01-05.
pub fn calendar_week_index(date: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 5).expect("valid date");
    (date - epoch).num_days().div_euclid(7)
}

/// Loads rows into one dataset per time group, keeping file order within a group.
///
/// Rows with an empty outcome or feature cell are skipped; groups left with
/// no rows are dropped with a warning.
pub fn load_panel_csv(path: &Path, schema: &PanelSchema) -> Result<Panel> {
    let headers = headers_of(path)?;
    let mut names = vec![schema.time_column.as_str(), schema.outcome_column.as_str()];
    names.extend(schema.feature_columns.iter().map(String::as_str));
    let cols = locate(path, &headers, &names)?;
    let (tc, yc, xc) = (cols[0], cols[1], &cols[2..]);

    let mut groups: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut skipped = 0usize;
    for_each_row(path, |c| {
        let t = match schema.grouping {
            Grouping::ByTimeIndex => c.parse::<i64>(tc)?,
            Grouping::ByCalendarWeek => {
                let s = c.raw(tc)?;
                calendar_week_index(parse_date(s).ok_or_else(|| c.error(tc, format!("cannot parse date `{s}`")))?)
            }
        };
        let group = groups.entry(t).or_default();
        let y = c.opt_f64(yc)?;
        let x: Vec<Option<f64>> = xc.iter().map(|&j| c.opt_f64(j)).collect::<Result<_>>()?;
        match (y, x.iter().copied().collect::<Option<Vec<f64>>>()) {
            (Some(y), Some(x)) => {
                group.0.extend(x);
                group.1.push(y);
            }
            _ => skipped += 1,
        }
        Ok(())
    })?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} rows with empty cells", path.display());
    }

    let dim = xc.len();
    let mut datasets = Vec::with_capacity(groups.len());
    for (t, (x, y)) in groups {
        if y.is_empty() {
            log::warn!("{}: dropping empty group t={t}", path.display());
            continue;
        }
        datasets.push(TimedDataset::new(t, dim, x, y)?);
    }
    if datasets.is_empty() {
        return Err(RiderError::InsufficientData(format!("{}: no usable groups", path.display())));
    }
    Panel::new(datasets)
}

// ---- weight fields ----

pub fn write_weight_field_csv(path: &Path, field: &WeightField) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "j", "w"])?;
    for t in 0..field.t_len() {
        for (j, v) in field.row(t).iter().enumerate() {
            w.write_record([(t + 1).to_string(), (j + 1).to_string(), fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weight_field_csv(path: &Path) -> Result<WeightField> {
    let headers = headers_of(path)?;
    let cols = locate(path, &headers, &["t", "j", "w"])?;
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for_each_row(path, |c| {
        let key = (c.parse::<usize>(cols[0])?, c.parse::<usize>(cols[1])?);
        if key.0 == 0 || key.1 == 0 {
            return Err(c.error(cols[0], "indices are 1-based"));
        }
        cells.insert(key, c.f64(cols[2])?);
        Ok(())
    })?;
    let t_len = cells.keys().map(|k| k.0).max().unwrap_or(0);
    let m = cells.keys().map(|k| k.1).max().unwrap_or(0);
    if cells.len() != t_len * m {
        return Err(RiderError::validation(format!(
            "{}: {} cells do not fill a {t_len} x {m} grid",
            path.display(),
            cells.len()
        )));
    }
    WeightField::new(m, cells.into_values().collect())
}

// ---- weight vectors ----

pub fn write_weights_csv(path: &Path, beta: &WeightVector) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["k", "beta"])?;
    for (k, b) in beta.as_slice().iter().enumerate() {
        w.write_record([(k + 1).to_string(), fmt_f64(*b)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights_csv(path: &Path) -> Result<WeightVector> {
    let headers = headers_of(path)?;
    let cols = locate(path, &headers, &["k", "beta"])?;
    let mut rows = Vec::new();
    for_each_row(path, |c| {
        rows.push((c.parse::<usize>(cols[0])?, c.f64(cols[1])?));
        Ok(())
    })?;
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i + 1) {
        return Err(RiderError::validation(format!("{}: lags must be 1..K", path.display())));
    }
    WeightVector::new(rows.into_iter().map(|r| r.1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDocument {
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: WeightVector,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl WeightsDocument {
    pub fn new(beta: WeightVector, meta: serde_json::Value) -> Self {
        Self { k: beta.k(), beta, meta }
    }
}

pub fn write_weights_json(path: &Path, doc: &WeightsDocument) -> Result<()> {
    write_json(path, doc)
}

pub fn read_weights_json(path: &Path) -> Result<WeightsDocument> {
    let doc: WeightsDocument = read_json(path)?;
    if doc.k != doc.beta.k() {
        return Err(RiderError::validation(format!(
            "{}: K = {} but beta has {} entries",
            path.display(),
            doc.k,
            doc.beta.k()
        )));
    }
    Ok(doc)
}

// ---- moments and CV tables ----

/// Invalid cells are written with an empty value.
pub fn write_moments_csv(path: &Path, mm: &MomentMatrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "label", "value", "count"])?;
    let l_len = mm.l_len();
    for (r, t) in mm.times.iter().enumerate() {
        for (l, label) in mm.labels.iter().enumerate() {
            let i = r * l_len + l;
            let value = if mm.valid[i] { fmt_f64(mm.values[i]) } else { String::new() };
            w.write_record([t.to_string(), label.clone(), value, mm.counts[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_moments_csv(path: &Path) -> Result<MomentMatrix> {
    let headers = headers_of(path)?;
    let cols = locate(path, &headers, &["t", "label", "value", "count"])?;
    let mut times: Vec<i64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut cells: Vec<(i64, String, Option<f64>, usize)> = Vec::new();
    for_each_row(path, |c| {
        let t = c.parse::<i64>(cols[0])?;
        let label = c.raw(cols[1])?.to_string();
        if times.last() != Some(&t) {
            times.push(t);
        }
        if times.len() == 1 {
            labels.push(label.clone());
        }
        cells.push((t, label, c.opt_f64(cols[2])?, c.parse::<usize>(cols[3])?));
        Ok(())
    })?;
    let l_len = labels.len();
    if l_len == 0 || cells.len() != times.len() * l_len {
        return Err(RiderError::validation(format!("{}: moments do not form a full grid", path.display())));
    }
    let mut mm = MomentMatrix {
        values: Vec::with_capacity(cells.len()),
        valid: Vec::with_capacity(cells.len()),
        counts: Vec::with_capacity(cells.len()),
        times,
        labels,
    };
    for (i, (t, label, value, count)) in cells.into_iter().enumerate() {
        if t != mm.times[i / l_len] || label != mm.labels[i % l_len] {
            return Err(RiderError::validation(format!(
                "{}: row {} breaks the t-major, label-minor order",
                path.display(),
                i + 1
            )));
        }
        mm.values.push(value.unwrap_or(0.0));
        mm.valid.push(value.is_some());
        mm.counts.push(count);
    }
    Ok(mm)
}

const CV_HEADER: [&str; 7] = ["K", "alpha1", "alpha2", "alpha3", "theta", "cv_loss", "cv_se"];

pub fn write_cv_table_csv(path: &Path, table: &[CvRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CV_HEADER)?;
    for r in table {
        w.write_record([
            r.k.to_string(),
            fmt_f64(r.alpha1),
            fmt_f64(r.alpha2),
            fmt_f64(r.alpha3),
            fmt_f64(r.theta),
            fmt_f64(r.cv_loss),
            fmt_f64(r.cv_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cv_table_csv(path: &Path) -> Result<Vec<CvRow>> {
    let headers = headers_of(path)?;
    let c = locate(path, &headers, &CV_HEADER)?;
    let mut rows = Vec::new();
    for_each_row(path, |cells| {
        rows.push(CvRow {
            k: cells.parse(c[0])?,
            alpha1: cells.f64(c[1])?,
            alpha2: cells.f64(c[2])?,
            alpha3: cells.f64(c[3])?,
            theta: cells.f64(c[4])?,
            cv_loss: cells.f64(c[5])?,
            cv_se: cells.f64(c[6])?,
        });
        Ok(())
    })?;
    Ok(rows)
}

// ---- models and reports ----

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_model_json(path: &Path, model: &WermModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_model_json(path: &Path) -> Result<WermModel> {
    let model: WermModel = read_json(path)?;
    if model.theta.len() < usize::from(model.problem.intercept) {
        return Err(RiderError::validation(format!("{}: theta is too short", path.display())));
    }
    Ok(model)
}

pub fn write_report_json(path: &Path, report: &BacktestReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report_json(path: &Path) -> Result<BacktestReport> {
    read_json(path)
}

/// Per-target scores: `t, score, fitted_at, error`, empty cells for absent values.
pub fn write_scores_csv(path: &Path, report: &BacktestReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "score", "fitted_at", "error"])?;
    for r in &report.results {
        w.write_record([
            r.t.to_string(),
            r.score.map(fmt_f64).unwrap_or_default(),
            r.fitted_at.map(|t| t.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Weight trajectories: `t, beta1..betaK`, empty cells for failed targets.
pub fn write_trajectories_csv(path: &Path, report: &BacktestReport) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=report.k).map(|k| format!("beta{k}")));
    w.write_record(&header)?;
    for r in &report.results {
        let mut rec = vec![r.t.to_string()];
        match &r.beta {
            Some(b) => rec.extend(b.iter().map(|v| fmt_f64(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), report.k)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds per-target results from the two report CSVs.
pub fn read_report_csvs(scores: &Path, trajectories: &Path) -> Result<Vec<TargetResult>> {
    let headers = headers_of(scores)?;
    let c = locate(scores, &headers, &["t", "score", "fitted_at", "error"])?;
    let mut results = Vec::new();
    for_each_row(scores, |cells| {
        let fitted = cells.raw(c[2])?;
        let error = cells.raw(c[3])?;
        results.push(TargetResult {
            t: cells.parse(c[0])?,
            score: cells.opt_f64(c[1])?,
            error: (!error.is_empty()).then(|| error.to_string()),
            beta: None,
            fitted_at: if fitted.is_empty() { None } else { Some(cells.parse(c[2])?) },
        });
        Ok(())
    })?;

    let headers = headers_of(trajectories)?;
    let k = headers.len().saturating_sub(1);
    let mut names = vec!["t".to_string()];
    names.extend((1..=k).map(|k| format!("beta{k}")));
    let cols = locate(trajectories, &headers, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut i = 0;
    for_each_row(trajectories, |cells| {
        let t: i64 = cells.parse(cols[0])?;
        let target = results.get_mut(i).filter(|r| r.t == t).ok_or_else(|| cells.error(cols[0], "t does not match the scores file"))?;
        let beta: Vec<Option<f64>> = cols[1..].iter().map(|&j| cells.opt_f64(j)).collect::<Result<_>>()?;
        target.beta = beta.into_iter().collect();
        i += 1;
        Ok(())
    })?;
    if i != results.len() {
        return Err(RiderError::validation(format!(
            "{} has {i} rows but {} has {}",
            trajectories.display(),
            scores.display(),
            results.len()
        )));
    }
    Ok(results)
}

/// Boxplot-ready per-lag summary of a weight trajectory.
pub fn write_lag_summary_csv(path: &Path, rows: &[LagSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["lag", "min", "q25", "median", "q75", "max", "mean"])?;
    for r in rows {
        w.write_record([
            r.lag.to_string(),
            fmt_f64(r.min),
            fmt_f64(r.q25),
            fmt_f64(r.median),
            fmt_f64(r.q75),
            fmt_f64(r.max),
            fmt_f64(r.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lag_summary_csv(path: &Path) -> Result<Vec<LagSummary>> {
    let headers = headers_of(path)?;
    let c = locate(path, &headers, &["lag", "min", "q25", "median", "q75", "max", "mean"])?;
    let mut rows = Vec::new();
    for_each_row(path, |cells| {
        rows.push(LagSummary {
            lag: cells.parse(c[0])?,
            min: cells.f64(c[1])?,
            q25: cells.f64(c[2])?,
            median: cells.f64(c[3])?,
            q75: cells.f64(c[4])?,
            max: cells.f64(c[5])?,
            mean: cells.f64(c[6])?,
        });
        Ok(())
    })?;
    Ok(rows)
}

/// Paths of the three files a backtest run emits under `dir`.
pub fn report_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}_scores.csv")),
        dir.join(format!("{stem}_trajectories.csv")),
    )
}

pub fn write_report(dir: &Path, stem: &str, report: &BacktestReport) -> Result<()> {
    let (json, scores, traj) = report_paths(dir, stem);
    write_report_json(&json, report)?;
    write_scores_csv(&scores, report)?;
    write_trajectories_csv(&traj, report)
}
