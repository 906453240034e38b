//! Seedable synthetic confluent-lesion phantoms with exact ground truth.
//!
//! Lesions are voxelized ellipsoids. Each new lesion is either isolated,
//! attached to an earlier lesion so that the two overlap (confluent), or
//! parked one voxel away from an earlier lesion (confluent only after
//! dilation). Voxels claimed by several ellipsoids go to the nearest seed in
//! millimeters. Probability maps are built so that thresholding at 0.5
//! reproduces the reference foreground exactly, whatever the noise level.
//!
//! The whole output is a pure function of [`PhantomSpec`]: randomness comes
//! from a ChaCha8 stream seeded with `spec.seed`.
//!
//! [`brute_force_confluence`] recomputes the confluence sets by exhaustive
//! set enumeration, sharing no code with the `confluence` module.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::confluence::ConfluenceReport;
use crate::error::{Error, Result};
use crate::morphology::gaussian_smooth;
use crate::splitting::{filter_small_instances_with, reference_center_heatmap, reference_offsets, SizeFilter};
use crate::volume::{canonical_relabel, BinaryMask, Dims, Grid, LabelMap, OffsetField, ProbMap, Spacing, Voxel};

/// Lesion probability profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ProfileKind {
    /// `exp(-ln 2 * rho^2)` in the normalized ellipsoid radius `rho`: 1 at
    /// the seed, 0.5 on the surface.
    #[default]
    GaussianPeak,
    /// Constant 0.9 inside lesions.
    Plateau,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_lesions: usize,
    /// Semi-axis range in millimeters; each axis is drawn independently.
    pub radius_mm: [f64; 2],
    /// Probability that a lesion is attached to an earlier one.
    pub confluent_fraction: f64,
    /// Probability that a lesion is placed one voxel away from an earlier one.
    pub clu_plus_fraction: f64,
    pub profile: ProfileKind,
    pub noise_sd: f64,
    /// Gaussian smoothing (voxels) of the noise field; marginal sd is kept.
    pub noise_smoothing: Option<f64>,
    /// Minimum seed-to-seed distance in voxels.
    pub min_center_separation: f64,
    pub heatmap_sigma: f64,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [40, 40, 40],
            spacing: [1.0, 1.0, 1.0],
            n_lesions: 6,
            radius_mm: [2.5, 4.0],
            confluent_fraction: 0.4,
            clu_plus_fraction: 0.2,
            profile: ProfileKind::GaussianPeak,
            noise_sd: 0.0,
            noise_smoothing: None,
            min_center_separation: 4.0,
            heatmap_sigma: 2.0,
            seed: 0,
            max_attempts: 200,
        }
    }
}

/// How a lesion was placed relative to earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Placement {
    Isolated,
    /// Overlapping the ellipsoid of the given (final) lesion id.
    Confluent(u32),
    /// One voxel away from the given (final) lesion id.
    Gap(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LesionInfo {
    /// Id in the returned `refs`.
    pub id: u32,
    /// Seed in voxel coordinates.
    pub seed: [f64; 3],
    pub semi_axes_vox: [f64; 3],
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub refs: LabelMap,
    pub prob: ProbMap,
    pub heatmap: ProbMap,
    pub offsets: OffsetField,
    pub truth: ConfluenceReport,
    pub lesions: Vec<LesionInfo>,
}

/// Seed of subject `index` in a cohort seeded with `cohort_seed`
/// (SplitMix64 finalizer).
pub fn subject_seed(cohort_seed: u64, index: u64) -> u64 {
    let mut z = cohort_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ISOLATION_L1: u8 = 5;
const GAP_L1: u8 = 2;
const PLACEMENT_TRIES: usize = 200;

fn sq(x: f64) -> f64 {
    x * x
}

#[derive(Debug, Clone)]
struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn rho2(&self, v: [f64; 3]) -> f64 {
        (0..3).map(|a| sq((v[a] - self.center[a]) / self.axes[a])).sum()
    }

    /// Extent along unit direction `u` (voxel units).
    fn radius_along(&self, u: [f64; 3]) -> f64 {
        let s: f64 = (0..3).map(|a| sq(u[a] / self.axes[a])).sum();
        1.0 / libm::sqrt(s)
    }

    fn voxels(&self, dims: Dims) -> Option<Vec<Voxel>> {
        let ext = dims.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = libm::ceil(self.center[a] - self.axes[a]);
            let h = libm::floor(self.center[a] + self.axes[a]);
            // keep a one-voxel border so the dilated mask stays in the grid
            if l < 1.0 || h > (ext[a] - 2) as f64 {
                return None;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }
        let mut out = Vec::new();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    if self.rho2([x as f64, y as f64, z as f64]) <= 1.0 {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }
}

/// L1-ball offsets with radius `1..=ISOLATION_L1 - 1`, sorted by radius.
fn l1_ball() -> Vec<([isize; 3], u8)> {
    let r = ISOLATION_L1 as isize - 1;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d = dx.abs() + dy.abs() + dz.abs();
                if d >= 1 && d <= r {
                    out.push(([dx, dy, dz], d as u8));
                }
            }
        }
    }
    out.sort_by_key(|e| e.1);
    out
}

/// Raw (unresolved) ellipsoid occupancy as a bitmask per voxel.
struct Occupancy {
    dims: Dims,
    bits: Vec<u64>,
    ball: Vec<([isize; 3], u8)>,
}

impl Occupancy {
    fn new(dims: Dims) -> Self {
        Self { dims, bits: vec![0; dims.len()], ball: l1_ball() }
    }

    fn insert(&mut self, idx: usize, voxels: &[Voxel]) {
        for &v in voxels {
            self.bits[self.dims.voxel_index(v)] |= 1u64 << idx;
        }
    }

    /// Minimum L1 distance from `voxels` to each placed ellipsoid, capped at
    /// `ISOLATION_L1`; 0 means overlap.
    fn distances(&self, voxels: &[Voxel], n: usize) -> Vec<u8> {
        let mut out = vec![ISOLATION_L1; n];
        for &v in voxels {
            let here = self.bits[self.dims.voxel_index(v)];
            for (j, d) in out.iter_mut().enumerate() {
                if here >> j & 1 == 1 {
                    *d = 0;
                }
            }
            for &(o, r) in &self.ball {
                let Some(nb) = self.dims.offset(v, o) else { continue };
                let bits = self.bits[self.dims.voxel_index(nb)];
                if bits == 0 {
                    continue;
                }
                for (j, d) in out.iter_mut().enumerate() {
                    if bits >> j & 1 == 1 && r < *d {
                        *d = r;
                    }
                }
            }
        }
        out
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])?;
        Spacing::new(self.spacing[0], self.spacing[1], self.spacing[2])?;
        if self.n_lesions > 64 {
            return Err(Error::param("n_lesions", "at most 64 lesions per subject"));
        }
        if !(self.radius_mm[0] >= 1.5 && self.radius_mm[1] >= self.radius_mm[0]) {
            return Err(Error::param("radius_mm", "need 1.5 <= min <= max"));
        }
        let fr = |f: f64| (0.0..=1.0).contains(&f);
        if !fr(self.confluent_fraction)
            || !fr(self.clu_plus_fraction)
            || self.confluent_fraction + self.clu_plus_fraction > 1.0
        {
            return Err(Error::param("confluent_fraction", "fractions must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::param("noise_sd", "must be non-negative"));
        }
        if !(self.heatmap_sigma > 0.0) {
            return Err(Error::param("heatmap_sigma", "must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(Error::param("max_attempts", "must be at least 1"));
        }
        Ok(())
    }

    fn grid_dims(&self) -> Dims {
        Dims { w: self.dims[0], h: self.dims[1], d: self.dims[2] }
    }

    fn grid_spacing(&self) -> Spacing {
        Spacing::new(self.spacing[0], self.spacing[1], self.spacing[2]).expect("validated")
    }
}

struct Layout {
    ellipsoids: Vec<Ellipsoid>,
    placements: Vec<(Placement, Vec<Voxel>)>,
}

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let u: [f64; 3] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = u.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = libm::sqrt(n2);
            return [u[0] / n, u[1] / n, u[2] / n];
        }
    }
}

fn seed_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    libm::sqrt((0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum())
}

fn try_layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let dims = spec.grid_dims();
    let ext = dims.as_array();
    let mut occ = Occupancy::new(dims);
    let mut ellipsoids: Vec<Ellipsoid> = Vec::new();
    let mut placements = Vec::new();

    for i in 0..spec.n_lesions {
        let axes: [f64; 3] =
            core::array::from_fn(|a| rng.random_range(spec.radius_mm[0]..=spec.radius_mm[1]) / spec.spacing[a]);
        let roll: f64 = rng.random();
        let kind = if i == 0 {
            0
        } else if roll < spec.confluent_fraction {
            1
        } else if roll < spec.confluent_fraction + spec.clu_plus_fraction {
            2
        } else {
            0
        };
        let target = if i > 0 { rng.random_range(0..i) } else { 0 };

        let mut placed = None;
        'tries: for _ in 0..PLACEMENT_TRIES {
            let candidates: Vec<Ellipsoid> = match kind {
                0 => {
                    let center = core::array::from_fn(|a| {
                        let lo = axes[a] + 1.0;
                        let hi = (ext[a] as f64 - 2.0 - axes[a]).max(lo);
                        rng.random_range(lo..=hi)
                    });
                    vec![Ellipsoid { center, axes }]
                }
                1 => {
                    let u = random_direction(rng);
                    let t = &ellipsoids[target];
                    let probe = Ellipsoid { center: [0.0; 3], axes };
                    let reach = t.radius_along(u) + probe.radius_along(u);
                    let f: f64 = rng.random_range(0.55..0.8);
                    let center = core::array::from_fn(|a| t.center[a] + u[a] * reach * f);
                    vec![Ellipsoid { center, axes }]
                }
                _ => {
                    // march inwards until exactly a one-voxel gap opens
                    let u = random_direction(rng);
                    let t = &ellipsoids[target];
                    let probe = Ellipsoid { center: [0.0; 3], axes };
                    let reach = t.radius_along(u) + probe.radius_along(u);
                    (0..24)
                        .map(|s| {
                            let dist = reach + 3.0 - 0.25 * s as f64;
                            Ellipsoid { center: core::array::from_fn(|a| t.center[a] + u[a] * dist), axes }
                        })
                        .collect()
                }
            };
            for e in candidates {
                let Some(vox) = e.voxels(dims) else { continue };
                if ellipsoids.iter().any(|o| seed_distance(o.center, e.center) < spec.min_center_separation) {
                    continue;
                }
                let d = occ.distances(&vox, ellipsoids.len());
                let ok = d.iter().enumerate().all(|(j, &dj)| match kind {
                    1 if j == target => dj == 0,
                    2 if j == target => dj == GAP_L1,
                    _ => dj >= ISOLATION_L1,
                });
                if ok {
                    placed = Some((e, vox));
                    break 'tries;
                }
                if kind == 2 && d.get(target).is_some_and(|&dj| dj < GAP_L1) {
                    break;
                }
            }
        }
        let (e, vox) = placed?;
        occ.insert(i, &vox);
        let placement = match kind {
            1 => Placement::Confluent(target as u32),
            2 => Placement::Gap(target as u32),
            _ => Placement::Isolated,
        };
        ellipsoids.push(e);
        placements.push((placement, vox));
    }
    Some(Layout { ellipsoids, placements })
}

/// Nearest-seed resolution of overlapping ellipsoids; ids are `index + 1`.
fn resolve(spec: &PhantomSpec, layout: &Layout) -> LabelMap {
    let dims = spec.grid_dims();
    let spacing = spec.grid_spacing();
    let s = spacing.as_array();
    let mut claim: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); dims.len()];
    for (idx, (_, vox)) in layout.placements.iter().enumerate() {
        let c = layout.ellipsoids[idx].center;
        for &v in vox {
            let d: f64 = (0..3).map(|a| sq((v[a] as f64 - c[a]) * s[a])).sum();
            let slot = &mut claim[dims.voxel_index(v)];
            if d < slot.0 {
                *slot = (d, idx as u32 + 1);
            }
        }
    }
    Grid::from_vec(dims, spacing, claim.into_iter().map(|c| c.1).collect()).expect("dims")
}

fn face_connected(voxels: &BTreeSet<Voxel>, dims: Dims) -> bool {
    let Some(&start) = voxels.iter().next() else { return false };
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for o in FACE6 {
            if let Some(n) = dims.offset(v, o) {
                if voxels.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
    }
    seen.len() == voxels.len()
}

const FACE6: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

fn probability_map(spec: &PhantomSpec, refs: &LabelMap, layout: &Layout, rng: &mut ChaCha8Rng) -> Result<ProbMap> {
    let dims = refs.dims();
    let spacing = refs.spacing();
    let mut base = Grid::filled(dims, spacing, 0.0f64);
    for (i, b) in base.data_mut().iter_mut().enumerate() {
        let v = dims.coords(i);
        let p = [v[0] as f64, v[1] as f64, v[2] as f64];
        *b = match spec.profile {
            ProfileKind::GaussianPeak => layout
                .ellipsoids
                .iter()
                .map(|e| libm::exp(-core::f64::consts::LN_2 * e.rho2(p)))
                .fold(0.0, f64::max),
            ProfileKind::Plateau => {
                if refs.data()[i] > 0 {
                    0.9
                } else {
                    0.0
                }
            }
        };
    }
    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd).map_err(|_| Error::param("noise_sd", "invalid"))?;
        let mut noise = Grid::from_fn(dims, spacing, |_| normal.sample(rng));
        if let Some(sigma) = spec.noise_smoothing {
            noise = gaussian_smooth(&noise, sigma)?;
            let radius = libm::ceil(4.0 * sigma) as isize;
            let w: Vec<f64> =
                (-radius..=radius).map(|t| libm::exp(-((t * t) as f64) / (2.0 * sigma * sigma))).collect();
            let sum: f64 = w.iter().sum();
            let sq: f64 = w.iter().map(|x| (x / sum) * (x / sum)).sum();
            let gain = 1.0 / libm::pow(sq, 1.5);
            let gain = libm::sqrt(gain);
            for n in noise.data_mut() {
                *n *= gain;
            }
        }
        for (b, n) in base.data_mut().iter_mut().zip(noise.data()) {
            *b += n;
        }
    }
    // thresholding at 0.5 must reproduce the reference foreground
    for (b, &k) in base.data_mut().iter_mut().zip(refs.data()) {
        *b = if k > 0 { b.clamp(0.5, 1.0) } else { b.clamp(0.0, 0.499) };
    }
    Ok(ProbMap::from_grid(base))
}

/// Generate one phantom subject.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.grid_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let filter = SizeFilter::default();

    for _ in 0..spec.max_attempts {
        let Some(layout) = try_layout(spec, &mut rng) else { continue };
        let raw = resolve(spec, &layout);

        let mut members: BTreeMap<u32, BTreeSet<Voxel>> = BTreeMap::new();
        for (i, &k) in raw.data().iter().enumerate() {
            if k > 0 {
                members.entry(k).or_default().insert(dims.coords(i));
            }
        }
        if members.len() != spec.n_lesions || !members.values().all(|m| face_connected(m, dims)) {
            continue;
        }
        if crate::volume::label_set(&filter_small_instances_with(&raw, &filter)).len() != spec.n_lesions {
            continue;
        }

        let refs = canonical_relabel(&raw);
        // raw id (index + 1) -> final id
        let mut rename = vec![0u32; spec.n_lesions + 1];
        for (r, c) in raw.data().iter().zip(refs.data()) {
            if *r > 0 {
                rename[*r as usize] = *c;
            }
        }
        let truth = brute_force_confluence(&refs, &refs.map(|&k| k > 0));
        let planned_ok = layout.placements.iter().enumerate().all(|(idx, (p, _))| {
            let me = rename[idx + 1];
            match *p {
                Placement::Isolated => true,
                Placement::Confluent(t) => {
                    let t = rename[t as usize + 1];
                    truth.clu_ids.contains(&me) && truth.clu_ids.contains(&t)
                }
                Placement::Gap(t) => {
                    let t = rename[t as usize + 1];
                    truth.clu_plus_ids.contains(&me) && truth.clu_plus_ids.contains(&t) && !truth.clu_ids.contains(&me)
                }
            }
        });
        if !planned_ok {
            continue;
        }

        let mut lesions: Vec<LesionInfo> = layout
            .placements
            .iter()
            .enumerate()
            .map(|(idx, (p, _))| LesionInfo {
                id: rename[idx + 1],
                seed: layout.ellipsoids[idx].center,
                semi_axes_vox: layout.ellipsoids[idx].axes,
                placement: match *p {
                    Placement::Isolated => Placement::Isolated,
                    Placement::Confluent(t) => Placement::Confluent(rename[t as usize + 1]),
                    Placement::Gap(t) => Placement::Gap(rename[t as usize + 1]),
                },
            })
            .collect();
        lesions.sort_by_key(|l| l.id);

        let prob = probability_map(spec, &refs, &layout, &mut rng)?;
        let heatmap = reference_center_heatmap(&refs, spec.heatmap_sigma)?;
        let offsets = reference_offsets(&refs);
        return Ok(Phantom { refs, prob, heatmap, offsets, truth, lesions });
    }
    Err(Error::InfeasiblePhantom { attempts: spec.max_attempts })
}

fn flood_components(mask: &BinaryMask) -> Vec<BTreeSet<Voxel>> {
    let dims = mask.dims();
    let mut seen = vec![false; dims.len()];
    let mut out = Vec::new();
    for start in 0..dims.len() {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(dims.coords(start));
        while let Some(v) = queue.pop_front() {
            comp.insert(v);
            for o in FACE6 {
                if let Some(n) = dims.offset(v, o) {
                    let ni = dims.voxel_index(n);
                    if mask.data()[ni] && !seen[ni] {
                        seen[ni] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

fn face_dilate(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    Grid::from_fn(dims, mask.spacing(), |v| {
        *mask.at(v) || FACE6.iter().any(|&o| dims.offset(v, o).is_some_and(|n| *mask.at(n)))
    })
}

fn set_iou(a: &BTreeSet<Voxel>, b: &BTreeSet<Voxel>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn lesion_sets(refs: &LabelMap) -> BTreeMap<u32, BTreeSet<Voxel>> {
    let dims = refs.dims();
    let mut out: BTreeMap<u32, BTreeSet<Voxel>> = BTreeMap::new();
    for (i, &k) in refs.data().iter().enumerate() {
        if k > 0 {
            out.entry(k).or_default().insert(dims.coords(i));
        }
    }
    out
}

/// Confluence sets by direct evaluation of the set-builder definitions with
/// a single Face6 dilation for the extended sets.
pub fn brute_force_confluence(refs: &LabelMap, s: &BinaryMask) -> ConfluenceReport {
    let lesions = lesion_sets(refs);
    let blobs = flood_components(s);
    let confluent_of = |blobs: &[BTreeSet<Voxel>]| -> Vec<usize> {
        (0..blobs.len())
            .filter(|&j| {
                let hit: Vec<u32> =
                    lesions.iter().filter(|(_, l)| set_iou(l, &blobs[j]) > 0.0).map(|(&k, _)| k).collect();
                hit.iter().any(|&a| hit.iter().any(|&b| a != b))
            })
            .collect()
    };
    let confluent = confluent_of(&blobs);
    let clu_ids = lesions
        .iter()
        .filter(|(_, l)| confluent.iter().any(|&j| set_iou(l, &blobs[j]) > 0.0))
        .map(|(&k, _)| k)
        .collect();

    let dilated = flood_components(&face_dilate(s));
    let clu_plus_ids = lesions
        .iter()
        .filter(|(&i, li)| {
            dilated.iter().any(|b| {
                set_iou(li, b) != 0.0 && lesions.iter().any(|(&k, lk)| k != i && set_iou(lk, b) != 0.0)
            })
        })
        .map(|(&k, _)| k)
        .collect();

    ConfluenceReport {
        confluent_components: confluent.into_iter().map(|j| j as u32 + 1).collect(),
        clu_ids,
        clu_plus_ids,
    }
}

/// Lesions with `0 < IoU(L_k, B_j) < 1` for some face-connected component
/// `B_j` of `s`, by direct enumeration.
pub fn brute_force_partial_overlap(refs: &LabelMap, s: &BinaryMask) -> BTreeSet<u32> {
    let lesions = lesion_sets(refs);
    let blobs = flood_components(s);
    lesions
        .iter()
        .filter(|(_, l)| {
            blobs.iter().any(|b| {
                let v = set_iou(l, b);
                v > 0.0 && v < 1.0
            })
        })
        .map(|(&k, _)| k)
        .collect()
}
