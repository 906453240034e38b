//! Paired tests, multiplicity correction, rank correlation and agreement.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("degenerate sample: all differences are zero")]
    Degenerate,
    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Alternative hypothesis on the paired differences `x - y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `x` tends to exceed `y`.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences.
    pub statistic: f64,
    pub p: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Largest sample size that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Average (mid) ranks, 1-based.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test; zero differences are dropped.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    check(x, y)?;
    if x.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::Degenerate);
    }
    let n = d.len();
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX {
        // midranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w).round() as usize;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let p = match alternative {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(WilcoxonResult { statistic: w, p, n, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie = 0.0;
    let mut sorted: Vec<f64> = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let sd = var.sqrt();
    let z = Normal::new(0.0, 1.0).unwrap();
    let p = match alternative {
        Alternative::Greater => z.sf((w - mean - 0.5) / sd),
        Alternative::Less => z.cdf((w - mean + 0.5) / sd),
        Alternative::TwoSided => (2.0 * z.sf(((w - mean).abs() - 0.5).max(0.0) / sd)).min(1.0),
    };
    Ok(WilcoxonResult { statistic: w, p, n, exact: false })
}

/// Holm step-down adjusted p-values, in input order.
pub fn holm_bonferroni(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StatsError::InvalidPValue(bad));
    }
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in idx.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p: f64,
    pub exact: bool,
}

/// Largest sample size that uses the exact permutation p-value.
pub const SPEARMAN_EXACT_MAX: usize = 9;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation with a two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    check(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::UndefinedCorrelation);
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry).clamp(-1.0, 1.0);

    if n <= SPEARMAN_EXACT_MAX {
        let target = rho.abs() - 1e-12;
        let mut perm = ry.clone();
        let mut hits = 0u64;
        let mut total = 0u64;
        heap_permutations(&mut perm, &mut |p| {
            total += 1;
            if pearson(&rx, p).abs() >= target {
                hits += 1;
            }
        });
        return Ok(SpearmanResult { rho, p: hits as f64 / total as f64, exact: true });
    }

    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult { rho, p, exact: false })
}

/// Visit every permutation of `v` (Heap's algorithm, iterative).
fn heap_permutations(v: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// Rank correlation between means and differences, when defined.
    pub spearman: Option<SpearmanResult>,
}

/// Agreement of `pred` with `reference` from differences `pred - reference`.
pub fn bland_altman(pred: &[f64], reference: &[f64]) -> Result<BlandAltman> {
    check(pred, reference)?;
    let n = pred.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let diff: Vec<f64> = pred.iter().zip(reference).map(|(a, b)| a - b).collect();
    let mean: Vec<f64> = pred.iter().zip(reference).map(|(a, b)| (a + b) / 2.0).collect();
    let bias = diff.iter().sum::<f64>() / n as f64;
    let sd = (diff.iter().map(|d| (d - bias) * (d - bias)).sum::<f64>() / (n - 1) as f64).sqrt();
    Ok(BlandAltman {
        n,
        bias,
        sd,
        lower: bias - 1.96 * sd,
        upper: bias + 1.96 * sd,
        spearman: spearman(&mean, &diff).ok(),
    })
}
