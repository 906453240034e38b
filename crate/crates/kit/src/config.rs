//! Run configuration and cohort manifests (TOML).
//!
//! A config file is a flat table; every key is optional:
//!
//! ```toml
//! prob_threshold = 0.5
//! lambda = 0.1
//! ndsc_r = 0.001
//! nms_kernel = 3
//! nms_threshold = 0.1
//! min_axis_mm = 3.0
//! min_volume_mm3 = 14.0
//! center_rule = "centroid"    # or "max-probability"
//! threads = 4
//! ```
//!
//! A manifest lists subjects; relative paths resolve against the manifest's
//! directory:
//!
//! ```toml
//! [[subject]]
//! id = "sub-01"
//! prob = "sub-01/prob.nii.gz"
//! refs = "sub-01/refs.nii.gz"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lesion_core::evaluation::{EvalConfig, MatchConfig};
use lesion_core::morphology::{HessianConfig, NmsConfig};
use lesion_core::splitting::{CenterRule, SizeFilter, SplitConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CenterChoice {
    #[default]
    Centroid,
    MaxProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prob_threshold: f64,
    pub lambda: f64,
    pub ndsc_r: f64,
    pub nms_kernel: usize,
    pub nms_threshold: f64,
    pub nms_top_k: Option<usize>,
    pub min_axis_mm: f64,
    pub min_volume_mm3: f64,
    pub center_rule: CenterChoice,
    pub hessian_epsilon: f64,
    pub hessian_smoothing: Option<f64>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SplitConfig::default();
        let e = EvalConfig::default();
        Self {
            prob_threshold: s.prob_threshold,
            lambda: e.matching.lambda,
            ndsc_r: e.ndsc_r,
            nms_kernel: s.nms.kernel,
            nms_threshold: s.nms.threshold,
            nms_top_k: s.nms.top_k,
            min_axis_mm: s.size_filter.min_axis_mm,
            min_volume_mm3: s.size_filter.min_volume_mm3,
            center_rule: CenterChoice::Centroid,
            hessian_epsilon: s.hessian.epsilon,
            hessian_smoothing: s.hessian.smoothing_sigma,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            prob_threshold: self.prob_threshold,
            acls_center_rule: match self.center_rule {
                CenterChoice::Centroid => CenterRule::Centroid,
                CenterChoice::MaxProbability => CenterRule::MaxProbability,
            },
            hessian: HessianConfig { epsilon: self.hessian_epsilon, smoothing_sigma: self.hessian_smoothing },
            nms: NmsConfig { kernel: self.nms_kernel, threshold: self.nms_threshold, top_k: self.nms_top_k },
            size_filter: SizeFilter { min_axis_mm: self.min_axis_mm, min_volume_mm3: self.min_volume_mm3 },
            ..SplitConfig::default()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { matching: MatchConfig { lambda: self.lambda }, ndsc_r: self.ndsc_r, ..EvalConfig::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !open01(self.prob_threshold) {
            return Err("prob_threshold must lie in (0, 1)".into());
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err("lambda must lie in (0, 1]".into());
        }
        if !open01(self.ndsc_r) {
            return Err("ndsc_r must lie in (0, 1)".into());
        }
        if self.nms_kernel < 3 || self.nms_kernel.is_multiple_of(2) {
            return Err("nms_kernel must be odd and at least 3".into());
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err("nms_threshold must lie in [0, 1]".into());
        }
        if !(self.min_axis_mm >= 0.0 && self.min_volume_mm3 >= 0.0) {
            return Err("size limits must be non-negative".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<PathBuf>,
}

impl SubjectEntry {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.prob, &mut self.heatmap, &mut self.offsets, &mut self.pred, &mut self.refs, &mut self.domain, &mut self.semantic]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub subject: Vec<SubjectEntry>,
}

impl Manifest {
    /// Load, check ids are unique and resolve relative paths.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut seen = BTreeSet::new();
        for s in &m.subject {
            if !seen.insert(s.id.clone()) {
                return Err(format!("{}: duplicate subject id {:?}", path.display(), s.id));
            }
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.subject {
            s.resolve(base);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let c = RunConfig::default();
        assert_eq!(c.split_config(), SplitConfig::default());
        assert_eq!(c.eval_config(), EvalConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_toml() {
        let c: RunConfig = toml::from_str("lambda = 0.5\ncenter_rule = \"max-probability\"").unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.split_config().acls_center_rule, CenterRule::MaxProbability);
        assert!(toml::from_str::<RunConfig>("lamda = 0.5").is_err());
    }

    #[test]
    fn invalid_values() {
        let bad = RunConfig { nms_kernel: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { prob_threshold: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
