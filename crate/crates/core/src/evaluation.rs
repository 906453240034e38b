//! Instance segmentation evaluation with confluence-aware detection metrics.
//!
//! Matching follows a mutual best-overlap rule: `phi(i)` is the reference
//! with the largest IoU against prediction `i` (kept only if that IoU is at
//! least `lambda`), `phi(j)` is defined symmetrically, and `(i, j)` is a
//! true-positive pair iff `phi(i) = j` and `phi(j) = i`. Unmatched
//! predictions are false positives, unmatched references false negatives.
//!
//! CLU detection restricts true positives to reference CLUs; a CLU false
//! positive is a prediction whose best reference prefers another prediction
//! (an over-split fragment).
//!
//! Empty-case conventions:
//!
//! - precision is 1 without predictions, recall is 1 without references;
//! - a subject with no references and no predictions scores PQ = SQ = RQ = 1;
//! - `Recall^CLU = 1` when the reference has no CLU, and `Precision^CLU = 1`
//!   when there are neither CLU true positives nor CLU false positives.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::confluence::{annotate, default_semantic_of, ConfluenceConfig};
use crate::error::{Error, Result};
use crate::volume::{label_set, BinaryMask, LabelMap, Voxel};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchConfig {
    /// Minimum IoU for a best match to count; in `(0, 1]`.
    pub lambda: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda <= 1.0 {
            Ok(())
        } else {
            Err(Error::param("lambda", "must lie in (0, 1]"))
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`, 0 when both are empty.
pub fn iou(a: &[Voxel], b: &[Voxel]) -> f64 {
    let sa: BTreeSet<Voxel> = a.iter().copied().collect();
    let sb: BTreeSet<Voxel> = b.iter().copied().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchedPair {
    pub pred: u32,
    pub reference: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchResult {
    /// Mutual pairs, sorted by prediction id.
    pub pairs: Vec<MatchedPair>,
    pub fp_pred_ids: BTreeSet<u32>,
    pub fn_ref_ids: BTreeSet<u32>,
    /// `phi` over predictions (only where defined).
    pub pred_best: BTreeMap<u32, u32>,
    /// `phi` over references (only where defined).
    pub ref_best: BTreeMap<u32, u32>,
}

impl MatchResult {
    pub fn n_tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_fp(&self) -> usize {
        self.fp_pred_ids.len()
    }

    pub fn n_fn(&self) -> usize {
        self.fn_ref_ids.len()
    }

    /// Assemble from the full set of ids and both best-match tables.
    pub fn from_best_matches(
        pred_ids: &BTreeSet<u32>,
        ref_ids: &BTreeSet<u32>,
        pred_best: BTreeMap<u32, (u32, f64)>,
        ref_best: BTreeMap<u32, (u32, f64)>,
    ) -> Self {
        let pairs: Vec<MatchedPair> = pred_best
            .iter()
            .filter(|(&i, &(j, _))| ref_best.get(&j).map(|b| b.0) == Some(i))
            .map(|(&i, &(j, iou))| MatchedPair { pred: i, reference: j, iou })
            .collect();
        let matched_pred: BTreeSet<u32> = pairs.iter().map(|p| p.pred).collect();
        let matched_ref: BTreeSet<u32> = pairs.iter().map(|p| p.reference).collect();
        Self {
            fp_pred_ids: pred_ids.difference(&matched_pred).copied().collect(),
            fn_ref_ids: ref_ids.difference(&matched_ref).copied().collect(),
            pairs,
            pred_best: pred_best.into_iter().map(|(i, (j, _))| (i, j)).collect(),
            ref_best: ref_best.into_iter().map(|(j, (i, _))| (j, i)).collect(),
        }
    }
}

/// Overlap between instance `a` and `b` kept as integer counts so that argmax
/// ties are detected exactly.
#[derive(Clone, Copy)]
struct Overlap {
    inter: u64,
    union: u64,
}

impl Overlap {
    fn iou(self) -> f64 {
        self.inter as f64 / self.union as f64
    }

    fn beats(self, other: Overlap) -> bool {
        (self.inter as u128) * (other.union as u128) > (other.inter as u128) * (self.union as u128)
    }

    fn at_least(self, lambda: f64) -> bool {
        self.iou() >= lambda
    }
}

fn best_table(
    overlaps: &BTreeMap<(u32, u32), Overlap>,
    flip: bool,
    lambda: f64,
) -> BTreeMap<u32, (u32, f64)> {
    let mut best: BTreeMap<u32, (u32, Overlap)> = BTreeMap::new();
    // keys iterate in ascending (a, b) order, so a strict `beats` keeps the
    // lowest id among ties
    let mut entries: Vec<(u32, u32, Overlap)> =
        overlaps.iter().map(|(&(i, j), &o)| if flip { (j, i, o) } else { (i, j, o) }).collect();
    entries.sort_by_key(|e| (e.0, e.1));
    for (a, b, o) in entries {
        match best.get(&a) {
            Some(&(_, cur)) if !o.beats(cur) => {}
            _ => {
                best.insert(a, (b, o));
            }
        }
    }
    best.into_iter().filter(|(_, (_, o))| o.at_least(lambda)).map(|(a, (b, o))| (a, (b, o.iou()))).collect()
}

/// Mutual best-IoU matching between predicted and reference instances.
pub fn match_instances(pred: &LabelMap, refs: &LabelMap, cfg: &MatchConfig) -> Result<MatchResult> {
    cfg.validate()?;
    pred.require_geometry(refs)?;
    let mut pred_size: BTreeMap<u32, u64> = BTreeMap::new();
    let mut ref_size: BTreeMap<u32, u64> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&i, &j) in pred.data().iter().zip(refs.data()) {
        if i > 0 {
            *pred_size.entry(i).or_default() += 1;
        }
        if j > 0 {
            *ref_size.entry(j).or_default() += 1;
        }
        if i > 0 && j > 0 {
            *inter.entry((i, j)).or_default() += 1;
        }
    }
    let overlaps: BTreeMap<(u32, u32), Overlap> = inter
        .into_iter()
        .map(|((i, j), n)| ((i, j), Overlap { inter: n, union: pred_size[&i] + ref_size[&j] - n }))
        .collect();
    let pred_best = best_table(&overlaps, false, cfg.lambda);
    let ref_best = best_table(&overlaps, true, cfg.lambda);
    let pred_ids = pred_size.keys().copied().collect();
    let ref_ids = ref_size.keys().copied().collect();
    Ok(MatchResult::from_best_matches(&pred_ids, &ref_ids, pred_best, ref_best))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision, recall and F1 from raw counts with the empty-set conventions.
pub fn detection_from_counts(tp: usize, fp: usize, fn_: usize) -> Detection {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    Detection { precision, recall, f1: harmonic(precision, recall) }
}

pub fn detection_metrics(m: &MatchResult) -> Detection {
    detection_from_counts(m.n_tp(), m.n_fp(), m.n_fn())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PanopticQuality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// `SQ = mean IoU over TP`, `RQ = TP / (TP + FP/2 + FN/2)`, `PQ = SQ * RQ`.
pub fn panoptic_quality(m: &MatchResult) -> PanopticQuality {
    let (tp, fp, fn_) = (m.n_tp(), m.n_fp(), m.n_fn());
    if tp + fp + fn_ == 0 {
        return PanopticQuality { pq: 1.0, sq: 1.0, rq: 1.0 };
    }
    if tp == 0 {
        return PanopticQuality { pq: 0.0, sq: 0.0, rq: 0.0 };
    }
    let sq = m.pairs.iter().map(|p| p.iou).sum::<f64>() / tp as f64;
    let rq = tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64);
    PanopticQuality { pq: sq * rq, sq, rq }
}

/// `2|A ∩ B| / (|A| + |B|)`, 1 when both are empty.
pub fn dice(pred: &BinaryMask, refs: &BinaryMask) -> Result<f64> {
    pred.require_geometry(refs)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.data().iter().zip(refs.data()) {
        a += p as usize;
        b += r as usize;
        both += (p && r) as usize;
    }
    Ok(if a + b == 0 { 1.0 } else { 2.0 * both as f64 / (a + b) as f64 })
}

/// Lesion-load normalized Dice.
///
/// Counts are taken inside `domain`. False positives are reweighted by
/// `kappa = h (1 - r) / r`, where `h` is the ratio of reference lesion voxels
/// to reference background voxels in the domain:
/// `nDSC = 2 TP / (2 TP + kappa FP + FN)`.
pub fn ndsc(pred: &BinaryMask, refs: &BinaryMask, r: f64, domain: &BinaryMask) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::param("r", "must lie in (0, 1)"));
    }
    pred.require_geometry(refs)?;
    pred.require_geometry(domain)?;
    let (mut tp, mut fp, mut fn_, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for ((&p, &t), &inside) in pred.data().iter().zip(refs.data()).zip(domain.data()) {
        if !inside {
            continue;
        }
        if t {
            pos += 1;
        } else {
            neg += 1;
        }
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if pos + neg == 0 {
        return Err(Error::EmptyDomain);
    }
    if pos == 0 {
        return Ok(if fp == 0 { 1.0 } else { 0.0 });
    }
    let weighted_fp = if fp == 0 {
        0.0
    } else {
        let h = pos as f64 / neg as f64;
        h * (1.0 - r) / r * fp as f64
    };
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + weighted_fp + fn_ as f64))
}

/// CLU detection sets for one subject.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CluSets {
    /// `(pred, ref)` pairs whose reference is a CLU.
    pub tp: Vec<(u32, u32)>,
    pub fn_: BTreeSet<u32>,
    /// Predictions whose best reference prefers another prediction.
    pub fp: BTreeSet<u32>,
}

pub fn clu_detection_sets(m: &MatchResult, clu_ids: &BTreeSet<u32>) -> CluSets {
    let tp: Vec<(u32, u32)> =
        m.pairs.iter().filter(|p| clu_ids.contains(&p.reference)).map(|p| (p.pred, p.reference)).collect();
    let covered: BTreeSet<u32> = tp.iter().map(|&(_, j)| j).collect();
    let fn_ = clu_ids.difference(&covered).copied().collect();
    let fp = m
        .pred_best
        .iter()
        .filter(|(&i, j)| m.ref_best.get(j) != Some(&i))
        .map(|(&i, _)| i)
        .collect();
    CluSets { tp, fn_, fp }
}

/// CLU precision/recall/F1 with the two boundary conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CluMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No CLU in the reference; recall set to 1.
    pub no_reference_clu: bool,
    /// Neither CLU true positives nor CLU false positives; precision set to 1.
    pub no_clu_detections: bool,
}

pub fn clu_metrics_from_counts(tp: usize, fp: usize, fn_: usize) -> CluMetrics {
    let no_reference_clu = tp + fn_ == 0;
    let no_clu_detections = tp + fp == 0;
    let recall = if no_reference_clu { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let precision = if no_clu_detections { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    CluMetrics { precision, recall, f1: harmonic(precision, recall), no_reference_clu, no_clu_detections }
}

pub fn clu_metrics(sets: &CluSets) -> CluMetrics {
    clu_metrics_from_counts(sets.tp.len(), sets.fp.len(), sets.fn_.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    pub matching: MatchConfig,
    pub ndsc_r: f64,
    pub confluence: ConfluenceConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { matching: MatchConfig::default(), ndsc_r: 0.001, confluence: ConfluenceConfig::default() }
    }
}

/// Boundary conditions hit while computing a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportFlags {
    /// No reference and no predicted lesion.
    pub empty_subject: bool,
    pub no_ref_clu: bool,
    pub no_clu_detections: bool,
    pub no_ref_clu_plus: bool,
    pub no_clu_plus_detections: bool,
}

/// Raw counts behind a [`MetricsReport`]; pooled cohort metrics sum these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportCounts {
    pub n_pred: usize,
    pub n_ref: usize,
    pub n_ref_clu: usize,
    pub n_ref_clu_plus: usize,
    /// CLUs of the prediction against its own semantic mask.
    pub n_pred_clu: usize,
    pub n_pred_clu_plus: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp_clu: usize,
    pub fp_clu: usize,
    pub fn_clu: usize,
    pub tp_clu_plus: usize,
    pub fp_clu_plus: usize,
    pub fn_clu_plus: usize,
}

/// Per-subject metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub dsc: f64,
    pub ndsc: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub dic: f64,
    pub f1_clu: f64,
    pub recall_clu: f64,
    pub precision_clu: f64,
    pub f1_clu_plus: f64,
    pub recall_clu_plus: f64,
    pub precision_clu_plus: f64,
    pub counts: ReportCounts,
    pub flags: ReportFlags,
}

/// Metric names in report column order.
pub const METRIC_NAMES: [&str; 15] = [
    "dsc",
    "ndsc",
    "pq",
    "sq",
    "rq",
    "f1",
    "recall",
    "precision",
    "dic",
    "f1_clu",
    "recall_clu",
    "precision_clu",
    "f1_clu_plus",
    "recall_clu_plus",
    "precision_clu_plus",
];

impl MetricsReport {
    /// Values aligned with [`METRIC_NAMES`].
    pub fn metric_values(&self) -> [f64; 15] {
        [
            self.dsc,
            self.ndsc,
            self.pq,
            self.sq,
            self.rq,
            self.f1,
            self.recall,
            self.precision,
            self.dic,
            self.f1_clu,
            self.recall_clu,
            self.precision_clu,
            self.f1_clu_plus,
            self.recall_clu_plus,
            self.precision_clu_plus,
        ]
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|&n| n == name).map(|i| self.metric_values()[i])
    }
}

/// Evaluate one subject; the reference CLU sets use the reference-derived
/// semantic mask.
pub fn evaluate_subject(
    pred: &LabelMap,
    refs: &LabelMap,
    domain: Option<&BinaryMask>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    evaluate_subject_with_semantic(pred, refs, &default_semantic_of(refs), domain, cfg)
}

/// As [`evaluate_subject`] with an explicit semantic mask for the reference
/// CLU sets.
pub fn evaluate_subject_with_semantic(
    pred: &LabelMap,
    refs: &LabelMap,
    ref_semantic: &BinaryMask,
    domain: Option<&BinaryMask>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let m = match_instances(pred, refs, &cfg.matching)?;
    let pred_mask = default_semantic_of(pred);
    let ref_mask = default_semantic_of(refs);
    let dsc = dice(&pred_mask, &ref_mask)?;
    let ndsc_value = match domain {
        Some(d) => ndsc(&pred_mask, &ref_mask, cfg.ndsc_r, d)?,
        None => ndsc(&pred_mask, &ref_mask, cfg.ndsc_r, &BinaryMask::filled(refs.dims(), refs.spacing(), true))?,
    };
    let pq = panoptic_quality(&m);
    let det = detection_metrics(&m);

    let ref_conf = annotate(refs, ref_semantic, &cfg.confluence)?;
    let pred_conf = annotate(pred, &pred_mask, &cfg.confluence)?;
    let clu_sets = clu_detection_sets(&m, &ref_conf.clu_ids);
    let clu_plus_sets = clu_detection_sets(&m, &ref_conf.clu_plus_ids);
    let clu = clu_metrics(&clu_sets);
    let clu_plus = clu_metrics(&clu_plus_sets);

    let n_pred = label_set(pred).len();
    let n_ref = label_set(refs).len();
    let counts = ReportCounts {
        n_pred,
        n_ref,
        n_ref_clu: ref_conf.n_clu(),
        n_ref_clu_plus: ref_conf.n_clu_plus(),
        n_pred_clu: pred_conf.n_clu(),
        n_pred_clu_plus: pred_conf.n_clu_plus(),
        tp: m.n_tp(),
        fp: m.n_fp(),
        fn_: m.n_fn(),
        tp_clu: clu_sets.tp.len(),
        fp_clu: clu_sets.fp.len(),
        fn_clu: clu_sets.fn_.len(),
        tp_clu_plus: clu_plus_sets.tp.len(),
        fp_clu_plus: clu_plus_sets.fp.len(),
        fn_clu_plus: clu_plus_sets.fn_.len(),
    };
    Ok(MetricsReport {
        dsc,
        ndsc: ndsc_value,
        pq: pq.pq,
        sq: pq.sq,
        rq: pq.rq,
        f1: det.f1,
        recall: det.recall,
        precision: det.precision,
        dic: n_pred.abs_diff(n_ref) as f64,
        f1_clu: clu.f1,
        recall_clu: clu.recall,
        precision_clu: clu.precision,
        f1_clu_plus: clu_plus.f1,
        recall_clu_plus: clu_plus.recall,
        precision_clu_plus: clu_plus.precision,
        counts,
        flags: ReportFlags {
            empty_subject: n_pred == 0 && n_ref == 0,
            no_ref_clu: clu.no_reference_clu,
            no_clu_detections: clu.no_clu_detections,
            no_ref_clu_plus: clu_plus.no_reference_clu,
            no_clu_plus_detections: clu_plus.no_clu_detections,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (0 for a single subject).
    pub sd: f64,
    pub median: f64,
}

/// Lesion-wise metrics from counts summed over every subject.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PooledMetrics {
    pub detection: Detection,
    pub clu: CluMetrics,
    pub clu_plus: CluMetrics,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CohortSummary {
    pub n_subjects: usize,
    /// Aligned with [`METRIC_NAMES`].
    pub metrics: Vec<MetricSummary>,
    pub pooled: PooledMetrics,
}

impl CohortSummary {
    pub fn metric(&self, name: &str) -> Option<MetricSummary> {
        METRIC_NAMES.iter().position(|&n| n == name).map(|i| self.metrics[i])
    }
}

pub fn summarize(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 };
    Ok(MetricSummary { mean, sd, median })
}

/// Patient-wise mean/sd/median of every metric plus pooled lesion-wise
/// detection and CLU metrics.
pub fn aggregate_cohort(reports: &[MetricsReport]) -> Result<CohortSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut metrics = Vec::with_capacity(METRIC_NAMES.len());
    for i in 0..METRIC_NAMES.len() {
        let column: Vec<f64> = reports.iter().map(|r| r.metric_values()[i]).collect();
        metrics.push(summarize(&column)?);
    }
    let mut total = ReportCounts::default();
    for r in reports {
        let c = &r.counts;
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        total.tp_clu += c.tp_clu;
        total.fp_clu += c.fp_clu;
        total.fn_clu += c.fn_clu;
        total.tp_clu_plus += c.tp_clu_plus;
        total.fp_clu_plus += c.fp_clu_plus;
        total.fn_clu_plus += c.fn_clu_plus;
    }
    Ok(CohortSummary {
        n_subjects: reports.len(),
        metrics,
        pooled: PooledMetrics {
            detection: detection_from_counts(total.tp, total.fp, total.fn_),
            clu: clu_metrics_from_counts(total.tp_clu, total.fp_clu, total.fn_clu),
            clu_plus: clu_metrics_from_counts(total.tp_clu_plus, total.fp_clu_plus, total.fn_clu_plus),
        },
    })
}
