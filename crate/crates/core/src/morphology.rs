//! Connected components, binary dilation, max-pool non-maximum suppression
//! and Hessian-based peak candidates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Connectivity, Dims, Grid, LabelMap, ProbMap, Voxel};

/// Connected components of a binary mask.
///
/// `labels` holds ids `1..=J`; `components[j - 1]` lists the voxels of
/// component `j` in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub labels: LabelMap,
    pub components: Vec<Vec<Voxel>>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let up = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = up;
            a = up;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Label the foreground of `s` into maximal `c`-connected components.
///
/// Two-pass union-find raster labeling. Final ids follow the raster order of
/// each component's first voxel, so the output does not depend on how the
/// provisional equivalences were discovered.
pub fn connected_components(s: &BinaryMask, c: Connectivity) -> ComponentSet {
    const NONE: u32 = u32::MAX;
    let dims = s.dims();
    let back = c.backward_offsets();
    let mut provisional = vec![NONE; dims.len()];
    let mut sets = DisjointSet::new();

    for (i, &fg) in s.data().iter().enumerate() {
        if !fg {
            continue;
        }
        let v = dims.coords(i);
        let mut mine = NONE;
        for &o in &back {
            if let Some(n) = dims.offset(v, o) {
                let pn = provisional[dims.voxel_index(n)];
                if pn == NONE {
                    continue;
                }
                if mine == NONE {
                    mine = pn;
                } else {
                    sets.union(mine, pn);
                }
            }
        }
        provisional[i] = if mine == NONE { sets.make() } else { mine };
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut components: Vec<Vec<Voxel>> = Vec::new();
    let mut labels = vec![0u32; dims.len()];
    for i in 0..dims.len() {
        let pv = provisional[i];
        if pv == NONE {
            continue;
        }
        let root = sets.find(pv) as usize;
        if final_of_root[root] == 0 {
            components.push(Vec::new());
            final_of_root[root] = components.len() as u32;
        }
        let id = final_of_root[root];
        labels[i] = id;
        components[id as usize - 1].push(dims.coords(i));
    }

    ComponentSet {
        labels: Grid::from_vec(dims, s.spacing(), labels).expect("same dims"),
        components,
    }
}

/// Iterated binary dilation with the `c` neighborhood as structuring element.
pub fn binary_dilate(s: &BinaryMask, c: Connectivity, iterations: usize) -> Result<BinaryMask> {
    if iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    let dims = s.dims();
    let offsets = c.offsets();
    let mut cur = s.clone();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for (i, &fg) in cur.data().iter().enumerate() {
            if !fg {
                continue;
            }
            let v = dims.coords(i);
            for &o in &offsets {
                if let Some(n) = dims.offset(v, o) {
                    next.set(n, true);
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// One detected heatmap peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub voxel: Voxel,
    pub score: f64,
}

/// Max-pool NMS parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NmsConfig {
    /// Odd cubic window size, at least 3.
    pub kernel: usize,
    pub threshold: f64,
    pub top_k: Option<usize>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { kernel: 3, threshold: 0.1, top_k: None }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel.is_multiple_of(2) {
            return Err(Error::param("kernel", "must be odd and at least 3"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::param("threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Running max along one axis with a window clipped at the grid boundary.
fn max_filter_axis(src: &[f64], dims: Dims, axis: usize, radius: usize) -> Vec<f64> {
    let ext = dims.as_array();
    let stride = match axis {
        0 => 1,
        1 => dims.w,
        _ => dims.w * dims.h,
    };
    let n = ext[axis];
    let mut out = vec![0.0; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = dims.coords(i)[axis];
        let lo = pos.saturating_sub(radius);
        let hi = (pos + radius).min(n - 1);
        let base = i - pos * stride;
        let mut m = f64::NEG_INFINITY;
        for p in lo..=hi {
            let val = src[base + p * stride];
            if val > m {
                m = val;
            }
        }
        *o = m;
    }
    out
}

/// Voxels equal to their window maximum and at least `threshold`.
///
/// Peaks are returned by decreasing score, equal scores in raster order;
/// `top_k` truncates that list.
pub fn maxpool_nms(h: &ProbMap, cfg: &NmsConfig) -> Result<Vec<Peak>> {
    cfg.validate()?;
    let dims = h.dims();
    let r = cfg.kernel / 2;
    let mut pooled = max_filter_axis(h.data(), dims, 0, r);
    pooled = max_filter_axis(&pooled, dims, 1, r);
    pooled = max_filter_axis(&pooled, dims, 2, r);

    let mut peaks: Vec<(usize, f64)> = h
        .data()
        .iter()
        .zip(&pooled)
        .enumerate()
        .filter(|(_, (&v, &m))| v == m && v >= cfg.threshold && v > 0.0)
        .map(|(i, (&v, _))| (i, v))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = cfg.top_k {
        peaks.truncate(k);
    }
    Ok(peaks.into_iter().map(|(i, score)| Peak { voxel: dims.coords(i), score }).collect())
}

/// Settings for [`hessian_negative_candidates_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HessianConfig {
    /// Every eigenvalue must satisfy `lambda < -epsilon`.
    pub epsilon: f64,
    /// Optional Gaussian pre-smoothing (voxels). Off by default.
    pub smoothing_sigma: Option<f64>,
}

/// Symmetric 3x3 matrix stored as `[xx, yy, zz, xy, xz, yz]`.
pub type SymMat3 = [f64; 6];

/// Central-difference Hessian of `g` at `v`, voxel units, replicate padding.
pub fn hessian_at(g: &Grid<f64>, v: Voxel) -> SymMat3 {
    let dims = g.dims();
    let ext = dims.as_array();
    let sample = |d: [isize; 3]| -> f64 {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let p = v[a] as isize + d[a];
            c[a] = p.clamp(0, ext[a] as isize - 1) as usize;
        }
        *g.at(c)
    };
    let center = sample([0, 0, 0]);
    let second = |a: usize| {
        let mut plus = [0isize; 3];
        let mut minus = [0isize; 3];
        plus[a] = 1;
        minus[a] = -1;
        sample(plus) - 2.0 * center + sample(minus)
    };
    let mixed = |a: usize, b: usize| {
        let at = |sa: isize, sb: isize| {
            let mut d = [0isize; 3];
            d[a] = sa;
            d[b] = sb;
            sample(d)
        };
        (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / 4.0
    };
    [second(0), second(1), second(2), mixed(0, 1), mixed(0, 2), mixed(1, 2)]
}

/// Eigenvalues of a symmetric 3x3 matrix in decreasing order.
///
/// Closed-form trigonometric solution of the characteristic cubic.
pub fn symmetric_eigenvalues(m: &SymMat3) -> [f64; 3] {
    let [a11, a22, a33, a12, a13, a23] = *m;
    let off = a12 * a12 + a13 * a13 + a23 * a23;
    if off == 0.0 {
        let mut e = [a11, a22, a33];
        e.sort_by(|a, b| b.total_cmp(a));
        return e;
    }
    let q = (a11 + a22 + a33) / 3.0;
    let p2 = (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) + (a33 - q) * (a33 - q) + 2.0 * off;
    let p = libm::sqrt(p2 / 6.0);
    let (b11, b22, b33) = ((a11 - q) / p, (a22 - q) / p, (a33 - q) / p);
    let (b12, b13, b23) = (a12 / p, a13 / p, a23 / p);
    let det = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13) + b13 * (b12 * b23 - b22 * b13);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = libm::acos(r) / 3.0;
    let e1 = q + 2.0 * p * libm::cos(phi);
    let e3 = q + 2.0 * p * libm::cos(phi + 2.0 * core::f64::consts::PI / 3.0);
    let e2 = 3.0 * q - e1 - e3;
    [e1, e2, e3]
}

/// Separable Gaussian smoothing with replicate boundaries; kernel truncated
/// at `ceil(4 sigma)` voxels.
pub fn gaussian_smooth(g: &Grid<f64>, sigma: f64) -> Result<Grid<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be positive"));
    }
    let radius = libm::ceil(4.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|t| libm::exp(-((t * t) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = kernel.iter().sum();
    let dims = g.dims();
    let ext = dims.as_array();
    let mut cur = g.data().to_vec();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        for (i, o) in next.iter_mut().enumerate() {
            let v = dims.coords(i);
            let mut acc = 0.0;
            for (kk, w) in kernel.iter().enumerate() {
                let mut c = v;
                let p = v[axis] as isize + kk as isize - radius;
                c[axis] = p.clamp(0, ext[axis] as isize - 1) as usize;
                acc += w * cur[dims.voxel_index(c)];
            }
            *o = acc / norm;
        }
        cur = next;
    }
    Grid::from_vec(dims, g.spacing(), cur)
}

/// Local maxima of `p` inside `within` whose Hessian is negative definite.
pub fn hessian_negative_candidates(p: &ProbMap, within: &BinaryMask) -> Result<BinaryMask> {
    hessian_negative_candidates_with(p, within, &HessianConfig::default())
}

pub fn hessian_negative_candidates_with(
    p: &ProbMap,
    within: &BinaryMask,
    cfg: &HessianConfig,
) -> Result<BinaryMask> {
    p.require_geometry(within)?;
    let smoothed;
    let g: &Grid<f64> = match cfg.smoothing_sigma {
        Some(sigma) => {
            smoothed = gaussian_smooth(p.grid(), sigma)?;
            &smoothed
        }
        None => p.grid(),
    };
    let dims = g.dims();
    let neighbors = Connectivity::Vertex26.offsets();
    let mut out = BinaryMask::filled(dims, g.spacing(), false);
    for (i, &inside) in within.data().iter().enumerate() {
        if !inside {
            continue;
        }
        let v = dims.coords(i);
        let value = g.data()[i];
        let is_max = neighbors
            .iter()
            .filter_map(|&o| dims.offset(v, o))
            .all(|n| value >= *g.at(n));
        if !is_max {
            continue;
        }
        let eig = symmetric_eigenvalues(&hessian_at(g, v));
        if eig[0] < -cfg.epsilon {
            out.data_mut()[i] = true;
        }
    }
    Ok(out)
}
