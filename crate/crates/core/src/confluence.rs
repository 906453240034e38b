//! Confluent lesions and confluent lesion units (CLUs).
//!
//! Given reference instances `refs` and a semantic mask `s`:
//!
//! - a component of `s` is *confluent* when at least two distinct reference
//!   lesions intersect it;
//! - a reference lesion is a *CLU* when it intersects a confluent component;
//! - a reference lesion is a *CLU+* when it shares a component of the dilated
//!   mask `s+` with another lesion.
//!
//! Positive IoU is tested as nonzero intersection.
//!
//! When `s` is not given, [`default_semantic_of`] derives it from `refs`.
//! That is also the mask used to annotate reference cohorts.

use alloc::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::morphology::{binary_dilate, connected_components};
use crate::volume::{BinaryMask, Connectivity, LabelMap};

/// Structuring choices for the confluence sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfluenceConfig {
    /// Connectivity used to extract components of `s` and of `s+`.
    pub connectivity: Connectivity,
    /// Structuring element of the single dilation producing `s+`.
    pub dilation: Connectivity,
    pub dilation_iterations: usize,
}

impl Default for ConfluenceConfig {
    fn default() -> Self {
        Self { connectivity: Connectivity::Face6, dilation: Connectivity::Face6, dilation_iterations: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfluenceReport {
    /// Ids (in the component labeling of `s`) of confluent components.
    pub confluent_components: BTreeSet<u32>,
    pub clu_ids: BTreeSet<u32>,
    pub clu_plus_ids: BTreeSet<u32>,
}

impl ConfluenceReport {
    pub fn n_confluent(&self) -> usize {
        self.confluent_components.len()
    }

    pub fn n_clu(&self) -> usize {
        self.clu_ids.len()
    }

    pub fn n_clu_plus(&self) -> usize {
        self.clu_plus_ids.len()
    }
}

/// `S := [refs > 0]`.
pub fn default_semantic_of(refs: &LabelMap) -> BinaryMask {
    refs.map(|&k| k > 0)
}

/// For each component id, the set of reference ids intersecting it.
fn lesions_per_component(refs: &LabelMap, components: &LabelMap) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut out: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (&k, &b) in refs.data().iter().zip(components.data()) {
        if k > 0 && b > 0 {
            out.entry(b).or_default().insert(k);
        }
    }
    out
}

fn confluent_from(hosted: &BTreeMap<u32, BTreeSet<u32>>) -> BTreeSet<u32> {
    hosted.iter().filter(|(_, ls)| ls.len() >= 2).map(|(&b, _)| b).collect()
}

fn lesions_in(hosted: &BTreeMap<u32, BTreeSet<u32>>, comps: &BTreeSet<u32>) -> BTreeSet<u32> {
    comps.iter().flat_map(|b| hosted[b].iter().copied()).collect()
}

/// Components of `s` (under `c`) that intersect two or more reference lesions.
pub fn confluent_components(refs: &LabelMap, s: &BinaryMask, c: Connectivity) -> Result<BTreeSet<u32>> {
    refs.require_geometry(s)?;
    let cs = connected_components(s, c);
    Ok(confluent_from(&lesions_per_component(refs, &cs.labels)))
}

/// Reference lesions intersecting a confluent component of `s` (Face6).
pub fn clu_set(refs: &LabelMap, s: &BinaryMask) -> Result<BTreeSet<u32>> {
    refs.require_geometry(s)?;
    let cs = connected_components(s, Connectivity::Face6);
    let hosted = lesions_per_component(refs, &cs.labels);
    Ok(lesions_in(&hosted, &confluent_from(&hosted)))
}

/// Reference lesions that overlap some component of `s` (Face6) with
/// `0 < IoU < 1`.
///
/// Equals [`clu_set`] whenever `s` is the reference-derived mask and every
/// lesion is face-connected; with an independent `s` a lesion that merely
/// spills outside the mask also qualifies.
pub fn clu_set_partial_overlap(refs: &LabelMap, s: &BinaryMask) -> Result<BTreeSet<u32>> {
    refs.require_geometry(s)?;
    let cs = connected_components(s, Connectivity::Face6);
    let mut lesion_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&k, &b) in refs.data().iter().zip(cs.labels.data()) {
        if k > 0 {
            *lesion_size.entry(k).or_default() += 1;
            if b > 0 {
                *inter.entry((k, b)).or_default() += 1;
            }
        }
    }
    Ok(inter
        .iter()
        .filter(|(&(k, b), &n)| {
            let same = n == lesion_size[&k] && n == cs.components[b as usize - 1].len();
            n > 0 && !same
        })
        .map(|(&(k, _), _)| k)
        .collect())
}

/// Reference lesions sharing a component of the dilated mask with another
/// lesion, using the default single Face6 dilation.
pub fn clu_plus_set(refs: &LabelMap, s: &BinaryMask) -> Result<BTreeSet<u32>> {
    clu_plus_set_with(refs, s, &ConfluenceConfig::default())
}

pub fn clu_plus_set_with(refs: &LabelMap, s: &BinaryMask, cfg: &ConfluenceConfig) -> Result<BTreeSet<u32>> {
    refs.require_geometry(s)?;
    let dilated = binary_dilate(s, cfg.dilation, cfg.dilation_iterations)?;
    let cs = connected_components(&dilated, cfg.connectivity);
    let hosted = lesions_per_component(refs, &cs.labels);
    Ok(lesions_in(&hosted, &confluent_from(&hosted)))
}

/// All three sets in one pass over `s` and `s+`.
pub fn annotate(refs: &LabelMap, s: &BinaryMask, cfg: &ConfluenceConfig) -> Result<ConfluenceReport> {
    refs.require_geometry(s)?;
    let cs = connected_components(s, cfg.connectivity);
    let hosted = lesions_per_component(refs, &cs.labels);
    let confluent = confluent_from(&hosted);
    let clu_ids = lesions_in(&hosted, &confluent);
    let clu_plus_ids = clu_plus_set_with(refs, s, cfg)?;
    Ok(ConfluenceReport { confluent_components: confluent, clu_ids, clu_plus_ids })
}

/// Annotate `refs` against its own semantic mask.
pub fn annotate_reference(refs: &LabelMap, cfg: &ConfluenceConfig) -> Result<ConfluenceReport> {
    annotate(refs, &default_semantic_of(refs), cfg)
}
