//! Per-subject metric tables and cohort summaries as CSV or JSON.
//!
//! Column order: `subject`, the metrics in [`METRIC_NAMES`] order, the
//! counts in [`COUNT_NAMES`] order, then `flags` (boundary conditions hit,
//! `;`-separated). Floats carry 6 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use lesion_core::evaluation::{CohortSummary, MetricsReport, ReportCounts, ReportFlags, METRIC_NAMES};
use serde_json::{json, Map, Value};

pub const COUNT_NAMES: [&str; 15] = [
    "n_pred",
    "n_ref",
    "n_ref_clu",
    "n_ref_clu_plus",
    "n_pred_clu",
    "n_pred_clu_plus",
    "tp",
    "fp",
    "fn",
    "tp_clu",
    "fp_clu",
    "fn_clu",
    "tp_clu_plus",
    "fp_clu_plus",
    "fn_clu_plus",
];

pub const FLAG_NAMES: [&str; 5] = ["empty_subject", "no_ref_clu", "no_clu_detections", "no_ref_clu_plus", "no_clu_plus_detections"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` selects JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            ReportFormat::Json
        } else {
            ReportFormat::Csv
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectReport {
    pub subject: String,
    pub report: MetricsReport,
}

/// `%g`-style formatting with 6 significant digits.
pub fn format_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..6).contains(&exp) {
        let fixed = format!("{:.*}", (5 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn rounded(x: f64) -> Value {
    if x.is_finite() {
        json!(format_g6(x).parse::<f64>().unwrap())
    } else {
        Value::Null
    }
}

pub fn counts_array(c: &ReportCounts) -> [usize; 15] {
    [
        c.n_pred,
        c.n_ref,
        c.n_ref_clu,
        c.n_ref_clu_plus,
        c.n_pred_clu,
        c.n_pred_clu_plus,
        c.tp,
        c.fp,
        c.fn_,
        c.tp_clu,
        c.fp_clu,
        c.fn_clu,
        c.tp_clu_plus,
        c.fp_clu_plus,
        c.fn_clu_plus,
    ]
}

fn counts_from(a: [usize; 15]) -> ReportCounts {
    ReportCounts {
        n_pred: a[0],
        n_ref: a[1],
        n_ref_clu: a[2],
        n_ref_clu_plus: a[3],
        n_pred_clu: a[4],
        n_pred_clu_plus: a[5],
        tp: a[6],
        fp: a[7],
        fn_: a[8],
        tp_clu: a[9],
        fp_clu: a[10],
        fn_clu: a[11],
        tp_clu_plus: a[12],
        fp_clu_plus: a[13],
        fn_clu_plus: a[14],
    }
}

fn flags_array(f: &ReportFlags) -> [bool; 5] {
    [f.empty_subject, f.no_ref_clu, f.no_clu_detections, f.no_ref_clu_plus, f.no_clu_plus_detections]
}

pub fn flags_string(f: &ReportFlags) -> String {
    FLAG_NAMES.iter().zip(flags_array(f)).filter(|(_, on)| *on).map(|(n, _)| *n).collect::<Vec<_>>().join(";")
}

fn flags_from(s: &str) -> std::result::Result<ReportFlags, String> {
    let mut f = ReportFlags::default();
    for name in s.split(';').filter(|n| !n.is_empty()) {
        match name {
            "empty_subject" => f.empty_subject = true,
            "no_ref_clu" => f.no_ref_clu = true,
            "no_clu_detections" => f.no_clu_detections = true,
            "no_ref_clu_plus" => f.no_ref_clu_plus = true,
            "no_clu_plus_detections" => f.no_clu_plus_detections = true,
            other => return Err(format!("unknown flag {other:?}")),
        }
    }
    Ok(f)
}

pub fn header_row() -> Vec<String> {
    std::iter::once("subject")
        .chain(METRIC_NAMES)
        .chain(COUNT_NAMES)
        .chain(std::iter::once("flags"))
        .map(String::from)
        .collect()
}

fn csv_row(s: &SubjectReport) -> Vec<String> {
    let mut row = vec![s.subject.clone()];
    row.extend(s.report.metric_values().iter().map(|&v| format_g6(v)));
    row.extend(counts_array(&s.report.counts).iter().map(|c| c.to_string()));
    row.push(flags_string(&s.report.flags));
    row
}

fn summary_json(summary: &CohortSummary) -> Value {
    let mut metrics = Map::new();
    for (name, m) in METRIC_NAMES.iter().zip(&summary.metrics) {
        metrics.insert((*name).into(), json!({ "mean": rounded(m.mean), "sd": rounded(m.sd), "median": rounded(m.median) }));
    }
    let p = &summary.pooled;
    let rates = |precision: f64, recall: f64, f1: f64| json!({ "precision": rounded(precision), "recall": rounded(recall), "f1": rounded(f1) });
    json!({
        "n_subjects": summary.n_subjects,
        "metrics": metrics,
        "pooled": {
            "detection": rates(p.detection.precision, p.detection.recall, p.detection.f1),
            "clu": rates(p.clu.precision, p.clu.recall, p.clu.f1),
            "clu_plus": rates(p.clu_plus.precision, p.clu_plus.recall, p.clu_plus.f1),
        },
    })
}

fn subject_json(s: &SubjectReport) -> Value {
    let mut o = Map::new();
    o.insert("subject".into(), json!(s.subject));
    for (n, v) in METRIC_NAMES.iter().zip(s.report.metric_values()) {
        o.insert((*n).into(), rounded(v));
    }
    for (n, c) in COUNT_NAMES.iter().zip(counts_array(&s.report.counts)) {
        o.insert((*n).into(), json!(c));
    }
    o.insert("flags".into(), json!(flags_string(&s.report.flags)));
    Value::Object(o)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Render the per-subject table.
pub fn render_csv(reports: &[SubjectReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header_row()).unwrap();
    for s in reports {
        w.write_record(csv_row(s)).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Cohort summary as CSV rows `metric,mean,sd,median` followed by pooled
/// rates `pooled_<family>_<rate>,value,,`.
pub fn render_summary_csv(summary: &CohortSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean", "sd", "median"]).unwrap();
    for (name, m) in METRIC_NAMES.iter().zip(&summary.metrics) {
        w.write_record([name.to_string(), format_g6(m.mean), format_g6(m.sd), format_g6(m.median)]).unwrap();
    }
    let p = &summary.pooled;
    for (fam, d) in [("detection", (p.detection.precision, p.detection.recall, p.detection.f1)), ("clu", (p.clu.precision, p.clu.recall, p.clu.f1)), ("clu_plus", (p.clu_plus.precision, p.clu_plus.recall, p.clu_plus.f1))] {
        for (rate, v) in [("precision", d.0), ("recall", d.1), ("f1", d.2)] {
            w.write_record([format!("pooled_{fam}_{rate}"), format_g6(v), String::new(), String::new()]).unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn render_json(reports: &[SubjectReport], summary: Option<&CohortSummary>, config: Option<&Value>) -> String {
    let mut root = Map::new();
    root.insert("subjects".into(), Value::Array(reports.iter().map(subject_json).collect()));
    if let Some(s) = summary {
        root.insert("summary".into(), summary_json(s));
    }
    if let Some(c) = config {
        root.insert("config".into(), c.clone());
    }
    let mut out = serde_json::to_string_pretty(&Value::Object(root)).unwrap();
    out.push('\n');
    out
}

/// Write the per-subject report. For CSV the cohort summary goes to a
/// sibling `<stem>.summary.csv`; JSON holds everything in one document.
pub fn write_report(
    reports: &[SubjectReport],
    summary: Option<&CohortSummary>,
    path: impl AsRef<Path>,
    format: ReportFormat,
    config: Option<&Value>,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => {
            fs::write(path, render_csv(reports)).map_err(io(path))?;
            if let Some(s) = summary {
                let side = summary_path(path);
                fs::write(&side, render_summary_csv(s)).map_err(io(&side))?;
            }
            Ok(())
        }
        ReportFormat::Json => fs::write(path, render_json(reports, summary, config)).map_err(io(path)),
    }
}

pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

fn format_err(path: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Format { path: path.to_path_buf(), message: message.into() }
}

fn parse_metric(s: &str) -> std::result::Result<f64, String> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| format!("bad number {s:?}")),
    }
}

fn report_from(values: [f64; 15], counts: [usize; 15], flags: ReportFlags) -> MetricsReport {
    let v = values;
    MetricsReport {
        dsc: v[0],
        ndsc: v[1],
        pq: v[2],
        sq: v[3],
        rq: v[4],
        f1: v[5],
        recall: v[6],
        precision: v[7],
        dic: v[8],
        f1_clu: v[9],
        recall_clu: v[10],
        precision_clu: v[11],
        f1_clu_plus: v[12],
        recall_clu_plus: v[13],
        precision_clu_plus: v[14],
        counts: counts_from(counts),
        flags,
    }
}

/// Parse a per-subject report written by [`write_report`] (either format).
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<SubjectReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io(path))?;
    match ReportFormat::from_path(path) {
        ReportFormat::Csv => parse_csv(path, &text),
        ReportFormat::Json => parse_json(path, &text),
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<Vec<SubjectReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| format_err(path, e.to_string()))?.iter().map(String::from).collect();
    if header != header_row() {
        return Err(format_err(path, "unexpected column layout"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let mut values = [0.0; 15];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse_metric(&rec[1 + i]).map_err(|m| format_err(path, m))?;
        }
        let mut counts = [0usize; 15];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = rec[16 + i].parse().map_err(|_| format_err(path, format!("bad count {:?}", &rec[16 + i])))?;
        }
        let flags = flags_from(&rec[31]).map_err(|m| format_err(path, m))?;
        out.push(SubjectReport { subject: rec[0].to_string(), report: report_from(values, counts, flags) });
    }
    Ok(out)
}

fn parse_json(path: &Path, text: &str) -> Result<Vec<SubjectReport>> {
    let root: Value = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    let subjects = root.get("subjects").and_then(Value::as_array).ok_or_else(|| format_err(path, "missing subjects array"))?;
    let mut out = Vec::new();
    for s in subjects {
        let subject = s.get("subject").and_then(Value::as_str).ok_or_else(|| format_err(path, "missing subject id"))?;
        let mut values = [0.0; 15];
        for (i, n) in METRIC_NAMES.iter().enumerate() {
            values[i] = match s.get(*n) {
                Some(Value::Null) => f64::NAN,
                Some(v) => v.as_f64().ok_or_else(|| format_err(path, format!("bad {n}")))?,
                None => return Err(format_err(path, format!("missing {n}"))),
            };
        }
        let mut counts = [0usize; 15];
        for (i, n) in COUNT_NAMES.iter().enumerate() {
            counts[i] = s.get(*n).and_then(Value::as_u64).ok_or_else(|| format_err(path, format!("missing {n}")))? as usize;
        }
        let flags = flags_from(s.get("flags").and_then(Value::as_str).unwrap_or("")).map_err(|m| format_err(path, m))?;
        out.push(SubjectReport { subject: subject.to_string(), report: report_from(values, counts, flags) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(format_g6(0.0), "0");
        assert_eq!(format_g6(1.0), "1");
        assert_eq!(format_g6(1.0 / 3.0), "0.333333");
        assert_eq!(format_g6(2.0 / 3.0), "0.666667");
        assert_eq!(format_g6(123456.7), "123457");
        assert_eq!(format_g6(999999.5), "1e+06");
        assert_eq!(format_g6(1234567.0), "1.23457e+06");
        assert_eq!(format_g6(0.0001234567), "0.000123457");
        assert_eq!(format_g6(0.00001234567), "1.23457e-05");
        assert_eq!(format_g6(-2.5), "-2.5");
        assert_eq!(format_g6(f64::NAN), "nan");
    }

    #[test]
    fn header_layout() {
        let h = header_row();
        assert_eq!(h.len(), 32);
        assert_eq!(h[0], "subject");
        assert_eq!(h[31], "flags");
    }

    #[test]
    fn flags_roundtrip() {
        let f = ReportFlags { empty_subject: true, no_ref_clu: true, ..Default::default() };
        assert_eq!(flags_string(&f), "empty_subject;no_ref_clu");
        assert_eq!(flags_from(&flags_string(&f)).unwrap(), f);
        assert_eq!(flags_from("").unwrap(), ReportFlags::default());
    }
}
