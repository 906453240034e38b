//! `lesionkit` command line.
//!
//! Exit codes: 0 success, 1 processing failure, 2 usage or input error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lesion_core::confluence::annotate;
use lesion_core::evaluation::{aggregate_cohort, evaluate_subject_with_semantic, ReportCounts, METRIC_NAMES};
use lesion_core::phantom::{generate, subject_seed, PhantomSpec};
use lesion_core::splitting::{acls_split, cc_split, conflunet_with_fallback};
use lesion_core::volume::label_set;
use lesion_core::{BinaryMask, LabelMap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{CenterChoice, Manifest, RunConfig, SubjectEntry};
use crate::nifti::{self, Datatype, NiftiError, Volume};
use crate::report::{self, ReportFormat, SubjectReport};
use crate::stats::{self, Alternative};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "LESIONKIT_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Processing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Processing(_) => 1,
            CliError::Usage(_) | CliError::Input(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Processing(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Predicted and reference value of one count family.
type CountPair = fn(&ReportCounts) -> (usize, usize);

fn processing(e: impl std::fmt::Display) -> CliError {
    CliError::Processing(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lesionkit", version, about = "Split and evaluate 3D lesion instance segmentations")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: $LESIONKIT_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding individual config keys.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// Foreground threshold on probability maps.
    #[arg(long, global = true)]
    prob_threshold: Option<f64>,
    /// Minimum IoU for a match.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Reference lesion load of nDSC.
    #[arg(long, global = true)]
    ndsc_r: Option<f64>,
    /// Max-pool window (odd).
    #[arg(long, global = true)]
    nms_kernel: Option<usize>,
    /// Minimum heatmap value of a center.
    #[arg(long, global = true)]
    nms_threshold: Option<f64>,
    /// Keep at most this many centers.
    #[arg(long, global = true)]
    nms_top_k: Option<usize>,
    /// Size filter: minimum extent along every axis.
    #[arg(long, global = true)]
    min_axis_mm: Option<f64>,
    /// Size filter: minimum volume.
    #[arg(long, global = true)]
    min_volume_mm3: Option<f64>,
    /// ACLS cluster center.
    #[arg(long, global = true, value_enum)]
    center_rule: Option<CenterChoice>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split probability maps into lesion instances.
    Split(SplitArgs),
    /// Compute per-subject metrics and a cohort summary.
    Evaluate(EvaluateArgs),
    /// Annotate confluent lesion units of reference masks.
    CluAnnotate(CluArgs),
    /// Paired method comparisons and count agreement from report files.
    Stats(StatsArgs),
    /// Generate a synthetic cohort with exact ground truth.
    Phantom(PhantomArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Cc,
    Acls,
    Conflunet,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Probability map.
    #[arg(long, conflicts_with = "manifest")]
    prob: Option<PathBuf>,
    /// Center heatmap (conflunet mode).
    #[arg(long, conflicts_with = "manifest")]
    heatmap: Option<PathBuf>,
    /// Three-frame offset field (conflunet mode).
    #[arg(long, conflicts_with = "manifest")]
    offsets: Option<PathBuf>,
    /// Output label volume (single-subject mode).
    #[arg(long, conflicts_with = "manifest")]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (manifest mode).
    #[arg(long, requires = "manifest")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "manifest")]
    pred: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    refs: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    domain: Option<PathBuf>,
    /// Semantic mask for the reference CLU sets (default: refs > 0).
    #[arg(long, conflicts_with = "manifest")]
    semantic: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Report path; `.json` for JSON, otherwise CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CluArgs {
    #[arg(long, conflicts_with = "manifest")]
    refs: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    semantic: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Per-subject report files, one per method.
    #[arg(long, num_args = 2.., required = true)]
    reports: Vec<PathBuf>,
    /// Method names (default: report file stems).
    #[arg(long, num_args = 1..)]
    names: Vec<String>,
    #[arg(long, value_enum, default_value = "two-sided")]
    alternative: AltArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AltArg {
    TwoSided,
    Greater,
    Less,
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// Cohort spec (TOML); a manifest written by this command also works.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Cohort description read by `phantom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    #[serde(default = "default_subjects")]
    pub subjects: usize,
    #[serde(default)]
    pub cohort_seed: u64,
    #[serde(default)]
    pub phantom: PhantomSpec,
}

fn default_subjects() -> usize {
    1
}

struct Context {
    cfg: RunConfig,
    pool: rayon::ThreadPool,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Input)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    macro_rules! apply {
        ($($f:ident),*) => { $( if let Some(v) = o.$f { cfg.$f = v; } )* };
    }
    apply!(prob_threshold, lambda, ndsc_r, nms_kernel, nms_threshold, min_axis_mm, min_volume_mm3, center_rule);
    if o.nms_top_k.is_some() {
        cfg.nms_top_k = o.nms_top_k;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            let n = v.trim().parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
            cfg.threads = Some(n);
        }
    }
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = effective_config(&cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(processing)?;
    let ctx = Context { cfg, pool };
    match cli.command {
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::CluAnnotate(a) => cmd_clu_annotate(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Phantom(a) => cmd_phantom(&ctx, a),
    }
}

fn read(path: &Path) -> CliResult<Volume> {
    nifti::read_volume(path).map_err(|e| match e {
        NiftiError::Io { .. } => CliError::Input(e.to_string()),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

fn read_labels(path: &Path) -> CliResult<(LabelMap, Volume)> {
    let v = read(path)?;
    let m = v.to_label_map().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((m, v))
}

fn read_mask(path: &Path) -> CliResult<BinaryMask> {
    let v = read(path)?;
    let g = v.to_grid().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(g.map(|&x| x > 0.0))
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str, subject: &str) -> CliResult<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("subject {subject:?}: missing {what}")))
}

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(processing)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| processing(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| processing(format!("{}: {e}", path.display())))
}

/// `a/b.nii.gz` -> `a/b`
fn volume_stem(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".gz").unwrap_or(&name);
    let stem = stem.strip_suffix(".nii").unwrap_or(stem);
    path.with_file_name(stem)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = volume_stem(path);
    let name = format!("{}{suffix}", stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    stem.with_file_name(name)
}

fn config_json(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

/// Single-subject invocations become a one-entry manifest.
fn subjects_of(manifest: &Option<PathBuf>, single: impl FnOnce() -> CliResult<SubjectEntry>) -> CliResult<Vec<SubjectEntry>> {
    match manifest {
        Some(m) => Ok(Manifest::load(m).map_err(CliError::Input)?.subject),
        None => Ok(vec![single()?]),
    }
}

fn par_subjects<T: Send>(ctx: &Context, subjects: &[SubjectEntry], f: impl Fn(&SubjectEntry) -> CliResult<T> + Sync) -> CliResult<Vec<T>> {
    ctx.pool.install(|| subjects.par_iter().map(&f).collect::<Vec<_>>()).into_iter().collect()
}

fn cmd_split(ctx: &Context, a: SplitArgs) -> CliResult<()> {
    let single_out = a.out.clone();
    let subjects = subjects_of(&a.manifest, || {
        let prob = a.prob.clone().ok_or_else(|| CliError::Usage("--prob or --manifest is required".into()))?;
        if single_out.is_none() {
            return Err(CliError::Usage("--out is required without --manifest".into()));
        }
        let id = volume_stem(&prob).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(SubjectEntry { id, prob: Some(prob), heatmap: a.heatmap.clone(), offsets: a.offsets.clone(), ..Default::default() })
    })?;
    let out_dir = a.out_dir.clone();
    if a.manifest.is_some() {
        create_dir(out_dir.as_ref().ok_or_else(|| CliError::Usage("--out-dir is required with --manifest".into()))?)?;
    }
    let target = |s: &SubjectEntry| match (&single_out, &out_dir) {
        (Some(o), _) if a.manifest.is_none() => o.clone(),
        (_, Some(d)) => d.join(format!("{}.nii.gz", s.id)),
        _ => unreachable!(),
    };
    for s in &subjects {
        need(&s.prob, "prob", &s.id)?;
        if a.mode == Mode::Conflunet {
            need(&s.heatmap, "heatmap", &s.id)?;
            need(&s.offsets, "offsets", &s.id)?;
        }
    }

    let split = ctx.cfg.split_config();
    let outputs = par_subjects(ctx, &subjects, |s| {
        let pv = read(s.prob.as_ref().unwrap())?;
        let prob = pv.to_prob_map().map_err(|e| CliError::Input(format!("{}: {e}", s.id)))?;
        let (labels, extra) = match a.mode {
            Mode::Cc => (cc_split(&prob, &split).map_err(processing)?, json!({})),
            Mode::Acls => {
                let o = acls_split(&prob, &split).map_err(processing)?;
                (o.labels, json!({ "n_centers": o.centers.len(), "fallback_regions": o.fallback_regions }))
            }
            Mode::Conflunet => {
                let h = read(s.heatmap.as_ref().unwrap())?.to_prob_map().map_err(|e| CliError::Input(format!("{}: {e}", s.id)))?;
                let off = read(s.offsets.as_ref().unwrap())?.to_offsets().map_err(|e| CliError::Input(format!("{}: {e}", s.id)))?;
                let o = conflunet_with_fallback(&prob, &h, &off, &split).map_err(processing)?;
                (o.labels, json!({ "n_centers": o.n_centers, "fallback": o.fallback }))
            }
        };
        let out = target(s);
        nifti::write_labels(&out, &labels, nifti::label_datatype(&labels), Some(&pv.header)).map_err(processing)?;
        let mut side = json!({
            "subject": s.id,
            "mode": a.mode,
            "n_instances": label_set(&labels).len(),
            "config": config_json(&ctx.cfg),
        });
        side.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        write_json(&with_suffix(&out, ".json"), &side)?;
        Ok(SubjectEntry { pred: Some(out), ..s.clone() })
    })?;

    if let (Some(_), Some(d)) = (&a.manifest, &out_dir) {
        let m = Manifest { subject: outputs };
        let text = toml::to_string(&m).map_err(processing)?;
        fs::write(d.join("manifest.toml"), text).map_err(processing)?;
    }
    Ok(())
}

fn cmd_evaluate(ctx: &Context, a: EvaluateArgs) -> CliResult<()> {
    let subjects = subjects_of(&a.manifest, || {
        let (pred, refs) = match (&a.pred, &a.refs) {
            (Some(p), Some(r)) => (p.clone(), r.clone()),
            _ => return Err(CliError::Usage("--pred and --refs (or --manifest) are required".into())),
        };
        let id = volume_stem(&refs).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(SubjectEntry { id, pred: Some(pred), refs: Some(refs), domain: a.domain.clone(), semantic: a.semantic.clone(), ..Default::default() })
    })?;
    for s in &subjects {
        need(&s.pred, "pred", &s.id)?;
        need(&s.refs, "refs", &s.id)?;
    }
    let eval = ctx.cfg.eval_config();
    let reports = par_subjects(ctx, &subjects, |s| {
        let (pred, _) = read_labels(s.pred.as_ref().unwrap())?;
        let (refs, _) = read_labels(s.refs.as_ref().unwrap())?;
        if !pred.same_geometry(&refs) {
            return Err(CliError::Input(format!("subject {:?}: prediction and reference grids differ", s.id)));
        }
        let domain = s.domain.as_deref().map(read_mask).transpose()?;
        let semantic = match &s.semantic {
            Some(p) => read_mask(p)?,
            None => refs.map(|&k| k > 0),
        };
        let r = evaluate_subject_with_semantic(&pred, &refs, &semantic, domain.as_ref(), &eval)
            .map_err(|e| processing(format!("subject {:?}: {e}", s.id)))?;
        Ok(SubjectReport { subject: s.id.clone(), report: r })
    })?;
    let summary = aggregate_cohort(&reports.iter().map(|r| r.report).collect::<Vec<_>>()).map_err(processing)?;
    let format = ReportFormat::from_path(&a.out);
    let cfg = config_json(&ctx.cfg);
    report::write_report(&reports, Some(&summary), &a.out, format, Some(&cfg)).map_err(processing)?;
    if format == ReportFormat::Csv {
        let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_json(&a.out.with_file_name(format!("{stem}.config.json")), &cfg)?;
    }
    Ok(())
}

/// Per-voxel category: 0 background, 1 isolated lesion, 2 CLU+ only, 3 CLU.
fn clu_category_volume(refs: &LabelMap, clu: &std::collections::BTreeSet<u32>, clu_plus: &std::collections::BTreeSet<u32>) -> LabelMap {
    refs.map(|&k| match k {
        0 => 0,
        k if clu.contains(&k) => 3,
        k if clu_plus.contains(&k) => 2,
        _ => 1,
    })
}

fn cmd_clu_annotate(ctx: &Context, a: CluArgs) -> CliResult<()> {
    let subjects = subjects_of(&a.manifest, || {
        let refs = a.refs.clone().ok_or_else(|| CliError::Usage("--refs or --manifest is required".into()))?;
        let id = volume_stem(&refs).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(SubjectEntry { id, refs: Some(refs), semantic: a.semantic.clone(), ..Default::default() })
    })?;
    for s in &subjects {
        need(&s.refs, "refs", &s.id)?;
    }
    create_dir(&a.out_dir)?;
    let ccfg = ctx.cfg.eval_config().confluence;
    let rows = par_subjects(ctx, &subjects, |s| {
        let (refs, rv) = read_labels(s.refs.as_ref().unwrap())?;
        let semantic = match &s.semantic {
            Some(p) => read_mask(p)?,
            None => refs.map(|&k| k > 0),
        };
        if !refs.same_geometry(&semantic) {
            return Err(CliError::Input(format!("subject {:?}: semantic mask grid differs", s.id)));
        }
        let r = annotate(&refs, &semantic, &ccfg).map_err(processing)?;
        let cat = clu_category_volume(&refs, &r.clu_ids, &r.clu_plus_ids);
        nifti::write_labels(a.out_dir.join(format!("{}.clu.nii.gz", s.id)), &cat, Datatype::U8, Some(&rv.header)).map_err(processing)?;
        let doc = json!({
            "subject": s.id,
            "n_lesions": label_set(&refs).len(),
            "n_confluent_components": r.n_confluent(),
            "n_clu": r.n_clu(),
            "n_clu_plus": r.n_clu_plus(),
            "clu_ids": r.clu_ids,
            "clu_plus_ids": r.clu_plus_ids,
            "confluent_components": r.confluent_components,
            "semantic": if s.semantic.is_some() { "file" } else { "reference" },
            "config": ccfg,
        });
        write_json(&a.out_dir.join(format!("{}.clu.json", s.id)), &doc)?;
        Ok((s.id.clone(), r.n_clu(), r.n_clu_plus()))
    })?;
    for (id, n_clu, n_plus) in rows {
        println!("{id}\tclu={n_clu}\tclu_plus={n_plus}");
    }
    Ok(())
}

fn cmd_stats(ctx: &Context, a: StatsArgs) -> CliResult<()> {
    let names: Vec<String> = if a.names.is_empty() {
        a.reports.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect()
    } else if a.names.len() == a.reports.len() {
        a.names.clone()
    } else {
        return Err(CliError::Usage("--names must match --reports in length".into()));
    };
    let mut tables: Vec<BTreeMap<String, lesion_core::evaluation::MetricsReport>> = Vec::new();
    for p in &a.reports {
        let rows = report::read_report(p).map_err(|e| CliError::Input(e.to_string()))?;
        let mut t = BTreeMap::new();
        for r in rows {
            if t.insert(r.subject.clone(), r.report).is_some() {
                return Err(CliError::Input(format!("{}: duplicate subject {:?}", p.display(), r.subject)));
            }
        }
        tables.push(t);
    }
    let ids: Vec<String> = tables[0].keys().cloned().collect();
    for (t, p) in tables.iter().zip(&a.reports).skip(1) {
        if !t.keys().eq(ids.iter()) {
            return Err(CliError::Input(format!("{}: subject ids do not match {}", p.display(), a.reports[0].display())));
        }
    }
    if ids.is_empty() {
        return Err(CliError::Input("reports contain no subjects".into()));
    }
    let alternative = match a.alternative {
        AltArg::TwoSided => Alternative::TwoSided,
        AltArg::Greater => Alternative::Greater,
        AltArg::Less => Alternative::Less,
    };
    let column = |m: usize, metric: usize| -> Vec<f64> { ids.iter().map(|id| tables[m][id].metric_values()[metric]).collect() };

    let mut warnings = Vec::new();
    let mut wilcoxon = Vec::new();
    for (mi, metric) in METRIC_NAMES.iter().enumerate() {
        let mut family = Vec::new();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                match stats::wilcoxon_signed_rank(&column(i, mi), &column(j, mi), alternative) {
                    Ok(r) => family.push((i, j, Some(r))),
                    Err(e) => {
                        warnings.push(format!("{metric}: {} vs {}: {e}", names[i], names[j]));
                        family.push((i, j, None));
                    }
                }
            }
        }
        let ps: Vec<f64> = family.iter().filter_map(|f| f.2.map(|r| r.p)).collect();
        let adjusted = stats::holm_bonferroni(&ps).map_err(processing)?;
        let mut adj = adjusted.into_iter();
        for (i, j, r) in family {
            let entry = match r {
                Some(r) => json!({
                    "metric": metric, "a": names[i], "b": names[j],
                    "statistic": r.statistic, "n": r.n, "exact": r.exact,
                    "p": r.p, "p_holm": adj.next().unwrap(),
                }),
                None => json!({ "metric": metric, "a": names[i], "b": names[j], "degenerate": true }),
            };
            wilcoxon.push(entry);
        }
    }

    let mut agreement = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let pick = |f: CountPair| -> (Vec<f64>, Vec<f64>) {
            ids.iter().map(|id| f(&tables[m][id].counts)).map(|(a, b)| (a as f64, b as f64)).unzip()
        };
        let families: [(&str, CountPair); 3] = [
            ("lesion", |c| (c.n_pred, c.n_ref)),
            ("clu", |c| (c.n_pred_clu, c.n_ref_clu)),
            ("clu_plus", |c| (c.n_pred_clu_plus, c.n_ref_clu_plus)),
        ];
        for (count, f) in families {
            let (p, r) = pick(f);
            match stats::bland_altman(&p, &r) {
                Ok(b) => agreement.push(json!({ "method": name, "count": count, "result": b })),
                Err(e) => warnings.push(format!("bland-altman {name} {count}: {e}")),
            }
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let doc = json!({
        "methods": names,
        "subjects": ids.len(),
        "alternative": format!("{alternative:?}"),
        "wilcoxon": wilcoxon,
        "bland_altman": agreement,
        "warnings": warnings,
        "config": config_json(&ctx.cfg),
    });
    write_json(&a.out, &doc)
}

fn cmd_phantom(ctx: &Context, a: PhantomArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| CliError::Input(format!("{}: {e}", a.spec.display())))?;
    let spec: CohortSpec = toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.spec.display())))?;
    spec.phantom.validate().map_err(|e| CliError::Input(format!("{}: {e}", a.spec.display())))?;
    create_dir(&a.out_dir)?;
    let indices: Vec<usize> = (0..spec.subjects).collect();
    let entries: Vec<CliResult<SubjectEntry>> = ctx.pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let id = format!("sub-{i:03}");
                let seed = subject_seed(spec.cohort_seed, i as u64);
                let ph = generate(&PhantomSpec { seed, ..spec.phantom.clone() }).map_err(|e| processing(format!("{id}: {e}")))?;
                let dir = a.out_dir.join(&id);
                create_dir(&dir)?;
                let w = |e: NiftiError| processing(format!("{id}: {e}"));
                nifti::write_labels(dir.join("refs.nii.gz"), &ph.refs, nifti::label_datatype(&ph.refs), None).map_err(w)?;
                nifti::write_grid(dir.join("prob.nii.gz"), ph.prob.grid(), Datatype::F32, None).map_err(w)?;
                nifti::write_grid(dir.join("heatmap.nii.gz"), ph.heatmap.grid(), Datatype::F64, None).map_err(w)?;
                nifti::write_offsets(dir.join("offsets.nii.gz"), &ph.offsets, Datatype::F64, None).map_err(w)?;
                write_json(
                    &dir.join("truth.json"),
                    &json!({ "subject": id, "seed": seed, "truth": ph.truth, "lesions": ph.lesions }),
                )?;
                let rel = |f: &str| Some(PathBuf::from(&id).join(f));
                Ok(SubjectEntry {
                    id: id.clone(),
                    prob: rel("prob.nii.gz"),
                    heatmap: rel("heatmap.nii.gz"),
                    offsets: rel("offsets.nii.gz"),
                    refs: rel("refs.nii.gz"),
                    ..Default::default()
                })
            })
            .collect()
    });
    let entries: Vec<SubjectEntry> = entries.into_iter().collect::<CliResult<_>>()?;

    #[derive(Serialize)]
    struct Written<'a> {
        #[serde(flatten)]
        cohort: &'a CohortSpec,
        subject: Vec<SubjectEntry>,
    }
    let text = toml::to_string(&Written { cohort: &spec, subject: entries }).map_err(processing)?;
    fs::write(a.out_dir.join("manifest.toml"), text).map_err(processing)
}
