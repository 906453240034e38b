//! Instance splitting pipelines and reference target generation.
//!
//! Three ways of turning a lesion probability map into instances:
//!
//! - [`cc_split`]: threshold, connected components, size filter;
//! - [`acls_split`]: Hessian peak centers, nearest-center assignment;
//! - [`conflunet_postprocess`]: heatmap peaks plus per-voxel offset vectors.
//!
//! [`reference_center_heatmap`] and [`reference_offsets`] build the targets a
//! center/offset model is trained against; fed back into
//! [`conflunet_postprocess`] they reproduce the reference partition.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::morphology::{
    connected_components, hessian_negative_candidates_with, maxpool_nms, HessianConfig, NmsConfig,
};
use crate::volume::{
    binarize, instance_stats, remap_labels, BinaryMask, Connectivity, Grid, LabelMap, OffsetField, ProbMap, Voxel,
};

/// Slack applied to the size thresholds so that, for example, five voxels
/// of 0.6 mm still count as 3 mm.
const SIZE_TOLERANCE: f64 = 1e-9;

/// Minimum lesion size; instances below either bound are removed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeFilter {
    pub min_axis_mm: f64,
    pub min_volume_mm3: f64,
}

impl Default for SizeFilter {
    fn default() -> Self {
        Self { min_axis_mm: 3.0, min_volume_mm3: 14.0 }
    }
}

/// How an ACLS candidate cluster becomes a single center point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CenterRule {
    #[default]
    Centroid,
    MaxProbability,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitConfig {
    pub prob_threshold: f64,
    pub cc_connectivity: Connectivity,
    pub acls_center_connectivity: Connectivity,
    pub acls_center_rule: CenterRule,
    pub hessian: HessianConfig,
    pub nms: NmsConfig,
    pub size_filter: SizeFilter,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.5,
            cc_connectivity: Connectivity::Face6,
            acls_center_connectivity: Connectivity::Vertex26,
            acls_center_rule: CenterRule::Centroid,
            hessian: HessianConfig::default(),
            nms: NmsConfig::default(),
            size_filter: SizeFilter::default(),
        }
    }
}

/// A detected lesion center in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Center {
    pub id: u32,
    pub position: [f64; 3],
    pub score: f64,
}

/// Centers with ids `1..=N` in list order.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CenterList {
    centers: Vec<Center>,
}

impl CenterList {
    /// Assigns ids `1..=N` in the given order.
    pub fn from_points(points: impl IntoIterator<Item = ([f64; 3], f64)>) -> Self {
        let centers = points
            .into_iter()
            .enumerate()
            .map(|(i, (position, score))| Center { id: i as u32 + 1, position, score })
            .collect();
        Self { centers }
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Remove instances smaller than 3 mm along any axis or under 14 mm³.
pub fn filter_small_instances(m: &LabelMap) -> LabelMap {
    filter_small_instances_with(m, &SizeFilter::default())
}

/// Survivors keep their relative order and are renumbered `1..=K`.
pub fn filter_small_instances_with(m: &LabelMap, f: &SizeFilter) -> LabelMap {
    let spacing = m.spacing();
    let mut table = BTreeMap::new();
    let mut next = 0u32;
    for (k, st) in instance_stats(m) {
        let ext = st.extent_mm(spacing);
        let thin = ext.iter().any(|&e| e < f.min_axis_mm - SIZE_TOLERANCE);
        let small = st.volume_mm3(spacing) < f.min_volume_mm3 * (1.0 - SIZE_TOLERANCE);
        if !(thin || small) {
            next += 1;
            table.insert(k, next);
        }
    }
    remap_labels(m, &table)
}

/// Threshold, Face6 (by default) connected components, size filter.
pub fn cc_split(p: &ProbMap, cfg: &SplitConfig) -> Result<LabelMap> {
    let s = binarize(p, cfg.prob_threshold)?;
    let cs = connected_components(&s, cfg.cc_connectivity);
    Ok(filter_small_instances_with(&cs.labels, &cfg.size_filter))
}

/// Result of [`acls_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct AclsOutput {
    pub labels: LabelMap,
    /// One center per candidate cluster (per connected region it touches).
    pub centers: CenterList,
    /// Regions of the thresholded mask without any candidate, kept whole.
    pub fallback_regions: usize,
}

fn mm_dist2(a: [f64; 3], b: [f64; 3], s: [f64; 3]) -> f64 {
    (0..3).map(|i| ((a[i] - b[i]) * s[i]) * ((a[i] - b[i]) * s[i])).sum()
}

fn as_point(v: Voxel) -> [f64; 3] {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

/// Automated confluent lesion splitting.
///
/// Candidate voxels are local maxima of `p` with a negative-definite Hessian;
/// they are grouped by connected components (Vertex26 by default) and each
/// group is reduced to one center. Every foreground voxel then takes the id
/// of the nearest center, measured in millimeters, among the centers lying
/// in its own connected region of the thresholded mask. A region without
/// any center stays one instance.
pub fn acls_split(p: &ProbMap, cfg: &SplitConfig) -> Result<AclsOutput> {
    let s = binarize(p, cfg.prob_threshold)?;
    let dims = s.dims();
    let spacing = s.spacing().as_array();
    let candidates = hessian_negative_candidates_with(p, &s, &cfg.hessian)?;
    let clusters = connected_components(&candidates, cfg.acls_center_connectivity);
    let regions = connected_components(&s, cfg.cc_connectivity);

    // (region, cluster) -> member candidate voxels
    let mut groups: BTreeMap<(u32, u32), Vec<Voxel>> = BTreeMap::new();
    for (cluster_idx, members) in clusters.components.iter().enumerate() {
        for &v in members {
            let region = *regions.labels.at(v);
            groups.entry((region, cluster_idx as u32 + 1)).or_default().push(v);
        }
    }

    let mut region_centers: BTreeMap<u32, Vec<(u32, [f64; 3])>> = BTreeMap::new();
    let mut points = Vec::with_capacity(groups.len());
    let mut next_id = 0u32;
    let mut fallback_id: BTreeMap<u32, u32> = BTreeMap::new();
    for region in 1..=regions.len() as u32 {
        let in_region: Vec<_> = groups.range((region, 0)..=(region, u32::MAX)).collect();
        if in_region.is_empty() {
            next_id += 1;
            fallback_id.insert(region, next_id);
            continue;
        }
        for (_, members) in in_region {
            let (position, score) = match cfg.acls_center_rule {
                CenterRule::Centroid => {
                    let mut sum = [0.0; 3];
                    let mut best = 0.0f64;
                    for &v in members {
                        for a in 0..3 {
                            sum[a] += v[a] as f64;
                        }
                        best = best.max(*p.at(v));
                    }
                    let n = members.len() as f64;
                    ([sum[0] / n, sum[1] / n, sum[2] / n], best)
                }
                CenterRule::MaxProbability => {
                    let mut top = members[0];
                    for &v in members {
                        if *p.at(v) > *p.at(top) {
                            top = v;
                        }
                    }
                    (as_point(top), *p.at(top))
                }
            };
            next_id += 1;
            region_centers.entry(region).or_default().push((next_id, position));
            points.push((position, score));
        }
    }

    let mut labels = LabelMap::filled(dims, s.spacing(), 0);
    for (i, &region) in regions.labels.data().iter().enumerate() {
        if region == 0 {
            continue;
        }
        let id = match region_centers.get(&region) {
            None => fallback_id[&region],
            Some(cs) => {
                let v = as_point(dims.coords(i));
                let mut best = cs[0];
                let mut best_d = mm_dist2(v, best.1, spacing);
                for &c in &cs[1..] {
                    let d = mm_dist2(v, c.1, spacing);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
                best.0
            }
        };
        labels.data_mut()[i] = id;
    }

    Ok(AclsOutput {
        labels: filter_small_instances_with(&labels, &cfg.size_filter),
        centers: CenterList::from_points(points),
        fallback_regions: fallback_id.len(),
    })
}

/// Assign each foreground voxel `v` to
/// `argmin_k |C_k - (v + O(v))|^2` in voxel coordinates; ties go to the
/// lowest center id. Output ids are center ids.
pub fn cluster_with_offsets(s: &BinaryMask, centers: &CenterList, offsets: &OffsetField) -> Result<LabelMap> {
    offsets.require_geometry(s)?;
    let dims = s.dims();
    let mut out = LabelMap::filled(dims, s.spacing(), 0);
    let has_fg = s.data().iter().any(|&b| b);
    if has_fg && centers.is_empty() {
        return Err(Error::NoCenters);
    }
    for (i, &fg) in s.data().iter().enumerate() {
        if !fg {
            continue;
        }
        let v = dims.coords(i);
        let o = offsets.at_index(i);
        let e = [v[0] as f64 + o[0], v[1] as f64 + o[1], v[2] as f64 + o[2]];
        let mut best = 0u32;
        let mut best_d = f64::INFINITY;
        for c in centers.centers() {
            let d: f64 = (0..3).map(|a| (c.position[a] - e[a]) * (c.position[a] - e[a])).sum();
            if d < best_d {
                best_d = d;
                best = c.id;
            }
        }
        out.data_mut()[i] = best;
    }
    Ok(out)
}

/// Heatmap peaks as a center list (ids follow peak order).
pub fn detect_centers(h: &ProbMap, nms: &NmsConfig) -> Result<CenterList> {
    let peaks = maxpool_nms(h, nms)?;
    Ok(CenterList::from_points(peaks.into_iter().map(|p| (as_point(p.voxel), p.score))))
}

/// Threshold `p`, detect heatmap peaks, group by offsets, size filter.
///
/// Fails with [`Error::NoCenters`] when the mask is non-empty but the
/// heatmap yields no peak; see [`conflunet_with_fallback`].
pub fn conflunet_postprocess(p: &ProbMap, h: &ProbMap, o: &OffsetField, cfg: &SplitConfig) -> Result<LabelMap> {
    p.require_geometry(h.grid())?;
    o.require_geometry(p.grid())?;
    let s = binarize(p, cfg.prob_threshold)?;
    let centers = detect_centers(h, &cfg.nms)?;
    let labels = cluster_with_offsets(&s, &centers, o)?;
    Ok(filter_small_instances_with(&labels, &cfg.size_filter))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflunetOutput {
    pub labels: LabelMap,
    pub n_centers: usize,
    /// True when no center was found and [`cc_split`] was used instead.
    pub fallback: bool,
}

/// [`conflunet_postprocess`], falling back to [`cc_split`] when the heatmap
/// has no peak.
pub fn conflunet_with_fallback(p: &ProbMap, h: &ProbMap, o: &OffsetField, cfg: &SplitConfig) -> Result<ConflunetOutput> {
    match conflunet_postprocess(p, h, o, cfg) {
        Ok(labels) => {
            let n_centers = detect_centers(h, &cfg.nms)?.len();
            Ok(ConflunetOutput { labels, n_centers, fallback: false })
        }
        Err(Error::NoCenters) => Ok(ConflunetOutput { labels: cc_split(p, cfg)?, n_centers: 0, fallback: true }),
        Err(e) => Err(e),
    }
}

/// Rounded (half away from zero) center-of-mass voxel of every instance.
pub fn rounded_centers(refs: &LabelMap) -> Vec<(u32, Voxel)> {
    let dims = refs.dims().as_array();
    instance_stats(refs)
        .into_iter()
        .map(|(k, st)| {
            let c = st.center_of_mass();
            let v = core::array::from_fn(|a| (libm::round(c[a]) as usize).min(dims[a] - 1));
            (k, v)
        })
        .collect()
}

/// Unit impulses at rounded lesion centers convolved with an isotropic
/// Gaussian of `sigma` voxels (kernel truncated at `ceil(4 sigma)`), then
/// scaled so the global maximum is 1.
pub fn reference_center_heatmap(refs: &LabelMap, sigma: f64) -> Result<ProbMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be positive"));
    }
    let dims = refs.dims();
    let radius = libm::ceil(4.0 * sigma) as isize;
    let mut acc = Grid::filled(dims, refs.spacing(), 0.0f64);
    for (_, c) in rounded_centers(refs) {
        for dz in -radius..=radius {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let Some(v) = dims.offset(c, [dx, dy, dz]) else { continue };
                    let r2 = (dx * dx + dy * dy + dz * dz) as f64;
                    let i = dims.voxel_index(v);
                    acc.data_mut()[i] += libm::exp(-r2 / (2.0 * sigma * sigma));
                }
            }
        }
    }
    let peak = acc.data().iter().copied().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in acc.data_mut() {
            *v /= peak;
        }
    }
    Ok(ProbMap::from_grid(acc))
}

/// `O(v) = C_k - v` for `v` in lesion `k` (real-valued center of mass),
/// zero on background.
pub fn reference_offsets(refs: &LabelMap) -> OffsetField {
    let stats = instance_stats(refs);
    let dims = refs.dims();
    let mut out = OffsetField::zeros(dims, refs.spacing());
    for (i, &k) in refs.data().iter().enumerate() {
        if k == 0 {
            continue;
        }
        let c = stats[&k].center_of_mass();
        let v = dims.coords(i);
        out.set_index(i, [c[0] - v[0] as f64, c[1] - v[1] as f64, c[2] - v[2] as f64]);
    }
    out
}
