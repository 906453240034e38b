//! Dense 3D grids with physical voxel spacing.
//!
//! Data is stored in a single `Vec` with `x` varying fastest, then `y`, then
//! `z` (the same order neuroimaging files use on disk). Other modules go
//! through [`Dims::index`] and [`Dims::coords`] rather than assuming the
//! layout themselves.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};

/// Integer voxel coordinate `[x, y, z]`.
pub type Voxel = [usize; 3];

/// Millimeters per voxel along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spacing {
    sx: f64,
    sy: f64,
    sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(sx) && ok(sy) && ok(sz) {
            Ok(Self { sx, sy, sz })
        } else {
            Err(Error::InvalidSpacing(sx, sy, sz))
        }
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::new(s, s, s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.sx * self.sy * self.sz
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self { sx: 1.0, sy: 1.0, sz: 1.0 }
    }
}

/// Grid extent `(w, h, d)`, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Dims {
    pub fn new(w: usize, h: usize, d: usize) -> Result<Self> {
        if w == 0 || h == 0 || d == 0 {
            return Err(Error::EmptyDims(w, h, d));
        }
        Ok(Self { w, h, d })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.w * self.h * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.w, self.h, self.d]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.w && y < self.h && z < self.d);
        x + self.w * (y + self.h * z)
    }

    #[inline]
    pub fn voxel_index(&self, v: Voxel) -> usize {
        self.index(v[0], v[1], v[2])
    }

    #[inline]
    pub fn coords(&self, i: usize) -> Voxel {
        let x = i % self.w;
        let yz = i / self.w;
        [x, yz % self.h, yz / self.h]
    }

    /// Shift `v` by `delta`, returning `None` when the result leaves the grid.
    #[inline]
    pub fn offset(&self, v: Voxel, delta: [isize; 3]) -> Option<Voxel> {
        let ext = self.as_array();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let c = v[a] as isize + delta[a];
            if c < 0 || c >= ext[a] as isize {
                return None;
            }
            out[a] = c as usize;
        }
        Some(out)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let ext = self.as_array();
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= (ext[a] - 1) as f64)
    }
}

/// Dense scalar (or vector) field over a 3D voxel domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Self {
        Self { dims, spacing, data: vec![value; dims.len()] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DataLength { expected: dims.len(), got: data.len() });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(Voxel) -> T) -> Self {
        let data = (0..dims.len()).map(|i| f(dims.coords(i))).collect();
        Self { dims, spacing, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, v: Voxel) -> &T {
        &self.data[self.dims.voxel_index(v)]
    }

    #[inline]
    pub fn set(&mut self, v: Voxel, value: T) {
        let i = self.dims.voxel_index(v);
        self.data[i] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(f).collect() }
    }

    /// True when both grids share dimensions and spacing.
    pub fn same_geometry<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub(crate) fn require_geometry<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch)
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }
}

/// Semantic mask; `true` is foreground.
pub type BinaryMask = Grid<bool>;

/// Instance mask; `0` is background, `k >= 1` an instance id.
pub type LabelMap = Grid<u32>;

/// Real-valued map clamped to `[0, 1]` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(Grid<f64>);

impl ProbMap {
    /// Clamp every value into `[0, 1]`; NaN becomes 0.
    pub fn from_grid(mut grid: Grid<f64>) -> Self {
        for v in grid.data_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(grid)
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, f: impl FnMut(Voxel) -> f64) -> Self {
        Self::from_grid(Grid::from_fn(dims, spacing, f))
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        Self(Grid::filled(dims, spacing, 0.0))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }
}

impl Deref for ProbMap {
    type Target = Grid<f64>;

    fn deref(&self) -> &Grid<f64> {
        &self.0
    }
}

/// Per-voxel displacement `(dx, dy, dz)` in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub dx: Grid<f64>,
    pub dy: Grid<f64>,
    pub dz: Grid<f64>,
}

impl OffsetField {
    pub fn new(dx: Grid<f64>, dy: Grid<f64>, dz: Grid<f64>) -> Result<Self> {
        dx.require_geometry(&dy)?;
        dx.require_geometry(&dz)?;
        Ok(Self { dx, dy, dz })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        let g = Grid::filled(dims, spacing, 0.0);
        Self { dx: g.clone(), dy: g.clone(), dz: g }
    }

    pub fn dims(&self) -> Dims {
        self.dx.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.dx.spacing()
    }

    #[inline]
    pub fn at_index(&self, i: usize) -> [f64; 3] {
        [self.dx.data()[i], self.dy.data()[i], self.dz.data()[i]]
    }

    pub fn set_index(&mut self, i: usize, o: [f64; 3]) {
        self.dx.data_mut()[i] = o[0];
        self.dy.data_mut()[i] = o[1];
        self.dz.data_mut()[i] = o[2];
    }

    pub(crate) fn require_geometry<U>(&self, other: &Grid<U>) -> Result<()> {
        self.dx.require_geometry(other)
    }
}

/// Voxel adjacency structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Connectivity {
    /// Voxels sharing a face.
    #[default]
    Face6,
    /// Voxels sharing a face or an edge.
    Edge18,
    /// Voxels sharing a face, an edge or a corner.
    Vertex26,
}

impl Connectivity {
    /// Maximum number of nonzero components in a neighbor offset.
    fn order(self) -> usize {
        match self {
            Connectivity::Face6 => 1,
            Connectivity::Edge18 => 2,
            Connectivity::Vertex26 => 3,
        }
    }

    /// Neighbor offsets in raster order (z slowest).
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    if nz >= 1 && nz <= self.order() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets ordered strictly before the center in raster order; used by
    /// single-pass raster labeling.
    pub(crate) fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|o| (o[2], o[1], o[0]) < (0, 0, 0))
            .collect()
    }
}

/// `output(v) = p(v) >= threshold`.
pub fn binarize(p: &ProbMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param("threshold", "must lie in (0, 1)"));
    }
    Ok(p.map(|&v| v >= threshold))
}

pub fn foreground_count(mask: &BinaryMask) -> usize {
    mask.data().iter().filter(|&&b| b).count()
}

/// Sorted instance ids present in `m` (background excluded).
pub fn label_set(m: &LabelMap) -> Vec<u32> {
    let mut seen: Vec<u32> = m.data().iter().copied().filter(|&k| k > 0).collect();
    seen.sort_unstable();
    seen.dedup();
    seen
}

/// Voxels with `m(v) == k`, in raster order; empty when `k` is absent.
pub fn instance_voxels(m: &LabelMap, k: u32) -> Vec<Voxel> {
    let dims = m.dims();
    m.data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == k && k > 0)
        .map(|(i, _)| dims.coords(i))
        .collect()
}

/// Geometry accumulated for one instance in a single scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceStats {
    pub count: usize,
    pub min: Voxel,
    pub max: Voxel,
    pub sum: [f64; 3],
}

impl InstanceStats {
    fn new(v: Voxel) -> Self {
        Self { count: 1, min: v, max: v, sum: [v[0] as f64, v[1] as f64, v[2] as f64] }
    }

    fn push(&mut self, v: Voxel) {
        self.count += 1;
        for a in 0..3 {
            self.min[a] = self.min[a].min(v[a]);
            self.max[a] = self.max[a].max(v[a]);
            self.sum[a] += v[a] as f64;
        }
    }

    pub fn extent_mm(&self, spacing: Spacing) -> [f64; 3] {
        let s = spacing.as_array();
        core::array::from_fn(|a| (self.max[a] - self.min[a] + 1) as f64 * s[a])
    }

    pub fn volume_mm3(&self, spacing: Spacing) -> f64 {
        self.count as f64 * spacing.voxel_volume()
    }

    pub fn center_of_mass(&self) -> [f64; 3] {
        let n = self.count as f64;
        [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n]
    }
}

/// Per-instance counts, bounding boxes and coordinate sums for every label.
pub fn instance_stats(m: &LabelMap) -> BTreeMap<u32, InstanceStats> {
    let dims = m.dims();
    let mut out: BTreeMap<u32, InstanceStats> = BTreeMap::new();
    for (i, &k) in m.data().iter().enumerate() {
        if k == 0 {
            continue;
        }
        let v = dims.coords(i);
        out.entry(k).and_modify(|s| s.push(v)).or_insert_with(|| InstanceStats::new(v));
    }
    out
}

fn single_instance(m: &LabelMap, k: u32) -> Result<InstanceStats> {
    let dims = m.dims();
    let mut acc: Option<InstanceStats> = None;
    for (i, &l) in m.data().iter().enumerate() {
        if l == k && k > 0 {
            let v = dims.coords(i);
            match acc.as_mut() {
                Some(s) => s.push(v),
                None => acc = Some(InstanceStats::new(v)),
            }
        }
    }
    acc.ok_or(Error::UnknownInstance(k))
}

/// Bounding-box extent of instance `k` along each axis, in millimeters.
pub fn bbox_extent_mm(m: &LabelMap, k: u32) -> Result<[f64; 3]> {
    Ok(single_instance(m, k)?.extent_mm(m.spacing()))
}

pub fn volume_mm3(m: &LabelMap, k: u32) -> Result<f64> {
    Ok(single_instance(m, k)?.volume_mm3(m.spacing()))
}

/// Unweighted mean of the member voxel coordinates (voxel units).
pub fn center_of_mass(m: &LabelMap, k: u32) -> Result<[f64; 3]> {
    Ok(single_instance(m, k)?.center_of_mass())
}

/// Relabel instances `1..K` in raster order of their first voxel.
///
/// Two label maps describe the same partition exactly when their canonical
/// forms are equal.
pub fn canonical_relabel(m: &LabelMap) -> LabelMap {
    let mut map: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 0u32;
    m.map(|&k| {
        if k == 0 {
            0
        } else {
            *map.entry(k).or_insert_with(|| {
                next += 1;
                next
            })
        }
    })
}

/// Relabel according to `keep`: ids mapped to `Some(new)` are renamed, ids
/// mapped to `None` or missing become background.
pub(crate) fn remap_labels(m: &LabelMap, table: &BTreeMap<u32, u32>) -> LabelMap {
    m.map(|&k| if k == 0 { 0 } else { table.get(&k).copied().unwrap_or(0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(n: usize) -> (Dims, Spacing) {
        (Dims::cube(n).unwrap(), Spacing::default())
    }

    #[test]
    fn spacing_rejects_nonpositive() {
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, f64::NAN, 1.0).is_err());
        assert!(Spacing::new(0.66, 0.66, 0.7).is_ok());
    }

    #[test]
    fn index_roundtrip_x_fastest() {
        let dims = Dims::new(3, 4, 5).unwrap();
        assert_eq!(dims.index(1, 0, 0), 1);
        assert_eq!(dims.index(0, 1, 0), 3);
        assert_eq!(dims.index(0, 0, 1), 12);
        for i in 0..dims.len() {
            assert_eq!(dims.voxel_index(dims.coords(i)), i);
        }
    }

    #[test]
    fn connectivity_sizes() {
        assert_eq!(Connectivity::Face6.offsets().len(), 6);
        assert_eq!(Connectivity::Edge18.offsets().len(), 18);
        assert_eq!(Connectivity::Vertex26.offsets().len(), 26);
        assert_eq!(Connectivity::Vertex26.backward_offsets().len(), 13);
        assert_eq!(Connectivity::Face6.backward_offsets().len(), 3);
    }

    #[test]
    fn binarize_uses_greater_equal() {
        let (d, s) = iso(3);
        let p = ProbMap::from_fn(d, s, |_| 0.6);
        assert!(binarize(&p, 0.5).unwrap().data().iter().all(|&b| b));
        let p = ProbMap::from_fn(d, s, |_| 0.5);
        assert!(binarize(&p, 0.5).unwrap().data().iter().all(|&b| b));
        assert!(binarize(&p, 0.0).is_err());
        assert!(binarize(&p, 1.0).is_err());
    }

    #[test]
    fn probmap_clamps() {
        let (d, s) = iso(2);
        let p = ProbMap::from_fn(d, s, |v| if v[0] == 0 { -0.2 } else { 1.3 });
        assert!(p.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn instance_voxel_queries() {
        let (d, s) = iso(5);
        let mut m = LabelMap::filled(d, s, 0);
        m.set([1, 2, 3], 3);
        assert_eq!(instance_voxels(&m, 3), vec![[1, 2, 3]]);
        assert!(instance_voxels(&m, 7).is_empty());
        assert_eq!(bbox_extent_mm(&m, 3).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(bbox_extent_mm(&m, 7), Err(Error::UnknownInstance(7)));
        assert_eq!(center_of_mass(&m, 3).unwrap(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn extent_and_volume_follow_spacing() {
        let d = Dims::cube(5).unwrap();
        let s = Spacing::new(0.5, 1.0, 1.0).unwrap();
        let mut m = LabelMap::filled(d, s, 0);
        for x in 0..3 {
            m.set([x, 0, 0], 1);
        }
        assert_eq!(bbox_extent_mm(&m, 1).unwrap(), [1.5, 1.0, 1.0]);

        let s = Spacing::new(0.66, 0.66, 0.7).unwrap();
        let mut m = LabelMap::filled(d, s, 0);
        m.set([0, 0, 0], 1);
        assert!((volume_mm3(&m, 1).unwrap() - 0.30492).abs() < 1e-12);
    }

    #[test]
    fn fourteen_voxels_is_fourteen_mm3() {
        let (d, s) = iso(16);
        let mut m = LabelMap::filled(d, s, 0);
        for x in 0..14 {
            m.set([x, 0, 0], 2);
        }
        assert_eq!(volume_mm3(&m, 2).unwrap(), 14.0);
    }

    #[test]
    fn center_of_mass_of_pair() {
        let (d, s) = iso(4);
        let mut m = LabelMap::filled(d, s, 0);
        m.set([0, 0, 0], 1);
        m.set([2, 0, 0], 1);
        assert_eq!(center_of_mass(&m, 1).unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn canonical_relabel_orders_by_first_voxel() {
        let (d, s) = iso(3);
        let mut m = LabelMap::filled(d, s, 0);
        m.set([2, 0, 0], 9);
        m.set([0, 1, 0], 4);
        m.set([0, 2, 2], 9);
        let c = canonical_relabel(&m);
        assert_eq!(c.get(2, 0, 0), 1);
        assert_eq!(c.get(0, 1, 0), 2);
        assert_eq!(c.get(0, 2, 2), 1);
    }
}
