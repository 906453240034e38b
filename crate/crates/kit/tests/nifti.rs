use std::io::Write;

use lesion_core::{Dims, Grid, LabelMap, Spacing};
use lesion_kit::nifti::{self, Datatype, NiftiError, VolumeHeader, DATA_OFFSET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Assemble a single-file NIfTI-1 image byte by byte.
struct Fixture {
    be: bool,
    dim: [i16; 8],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    slope: f32,
    inter: f32,
    magic: [u8; 4],
    payload: Vec<u8>,
}

impl Fixture {
    fn u8_cube(n: i16) -> Self {
        Self {
            be: false,
            dim: [3, n, n, n, 1, 1, 1, 1],
            datatype: 2,
            bitpix: 8,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: 352.0,
            slope: 0.0,
            inter: 0.0,
            magic: *b"n+1\0",
            payload: (0..(n as usize).pow(3)).map(|i| i as u8).collect(),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let i16b = |v: i16| if self.be { v.to_be_bytes() } else { v.to_le_bytes() };
        let i32b = |v: i32| if self.be { v.to_be_bytes() } else { v.to_le_bytes() };
        let f32b = |v: f32| if self.be { v.to_be_bytes() } else { v.to_le_bytes() };
        b[0..4].copy_from_slice(&i32b(348));
        for (i, &d) in self.dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&i16b(d));
        }
        b[70..72].copy_from_slice(&i16b(self.datatype));
        b[72..74].copy_from_slice(&i16b(self.bitpix));
        for (i, &p) in self.pixdim.iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&f32b(p));
        }
        b[108..112].copy_from_slice(&f32b(self.vox_offset));
        b[112..116].copy_from_slice(&f32b(self.slope));
        b[116..120].copy_from_slice(&f32b(self.inter));
        b[148..160].copy_from_slice(b"hand fixture");
        b[344..348].copy_from_slice(&self.magic);
        b.resize(self.vox_offset.max(348.0) as usize, 0);
        b.extend_from_slice(&self.payload);
        b
    }
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

#[test]
fn hand_built_fixture_with_scaling() {
    let mut f = Fixture::u8_cube(4);
    f.slope = 2.0;
    f.inter = 1.0;
    f.pixdim[1..4].copy_from_slice(&[0.5, 0.75, 3.0]);
    let v = nifti::decode(&f.bytes()).unwrap();
    assert_eq!(v.header.dims, [4, 4, 4, 1]);
    assert_eq!(v.header.spacing, [0.5, 0.75, 3.0]);
    assert_eq!(v.header.datatype, Datatype::U8);
    let expect: Vec<f64> = (0..64).map(|i| 2.0 * i as f64 + 1.0).collect();
    assert_eq!(v.values, expect);
    let g = v.to_grid().unwrap();
    // x fastest
    assert_eq!(g.get(1, 0, 0), 3.0);
    assert_eq!(g.get(0, 1, 0), 9.0);
    assert_eq!(g.get(0, 0, 1), 33.0);
}

#[test]
fn big_endian_fixture_matches_little_endian() {
    let values: Vec<i16> = (0..27).map(|i| i * 1000 - 13000).collect();
    let mut f = Fixture::u8_cube(3);
    f.datatype = 4;
    f.bitpix = 16;
    let mut le = Vec::new();
    let mut be = Vec::new();
    for v in &values {
        le.extend_from_slice(&v.to_le_bytes());
        be.extend_from_slice(&v.to_be_bytes());
    }
    f.payload = le;
    let a = nifti::decode(&f.bytes()).unwrap();
    f.be = true;
    f.payload = be;
    let b = nifti::decode(&f.bytes()).unwrap();
    assert!(b.header.is_big_endian());
    assert_eq!(a.values, b.values);
    assert_eq!(a.values, values.iter().map(|&v| v as f64).collect::<Vec<_>>());
    assert_eq!(nifti::decode(&gzip(&f.bytes())).unwrap().values, b.values);
}

#[test]
fn big_endian_template_is_written_big_endian() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = Fixture::u8_cube(3);
    f.be = true;
    let template = nifti::decode(&f.bytes()).unwrap().header;
    let m = LabelMap::from_fn(Dims::cube(3).unwrap(), Spacing::default(), |v| (v[0] + 300 * v[2]) as u32);
    let p = dir.path().join("be.nii");
    nifti::write_labels(&p, &m, Datatype::I16, Some(&template)).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[0..4], &348i32.to_be_bytes());
    // untouched description survives
    assert_eq!(&bytes[148..160], b"hand fixture");
    let back = nifti::read_volume(&p).unwrap();
    assert!(back.header.is_big_endian());
    assert_eq!(back.to_label_map().unwrap(), m);
}

#[test]
fn fresh_header_layout() {
    let h = VolumeHeader::new([5, 6, 7, 1], [1.0, 2.0, 3.0], Datatype::F32);
    let raw = h.raw();
    assert_eq!(i32::from_le_bytes(raw[0..4].try_into().unwrap()), 348);
    assert_eq!(i16::from_le_bytes([raw[40], raw[41]]), 3);
    assert_eq!(i16::from_le_bytes([raw[42], raw[43]]), 5);
    assert_eq!(i16::from_le_bytes([raw[70], raw[71]]), 16);
    assert_eq!(i16::from_le_bytes([raw[72], raw[73]]), 32);
    assert_eq!(f32::from_le_bytes(raw[108..112].try_into().unwrap()), DATA_OFFSET as f32);
    assert_eq!(&raw[344..348], b"n+1\0");
}

fn random_values(r: &mut ChaCha8Rng, dt: Datatype, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match dt {
            Datatype::U8 => r.random_range(0..=255u8) as f64,
            Datatype::I16 => r.random_range(i16::MIN..=i16::MAX) as f64,
            Datatype::I32 => r.random_range(i32::MIN..=i32::MAX) as f64,
            Datatype::F32 => r.random_range(-1e6f32..1e6) as f64,
            Datatype::F64 => r.random_range(-1e12..1e12),
        })
        .collect()
}

#[test]
fn random_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let dts = [Datatype::U8, Datatype::I16, Datatype::I32, Datatype::F32, Datatype::F64];
    for case in 0..40 {
        let dt = dts[case % dts.len()];
        let dims = [r.random_range(1..9), r.random_range(1..9), r.random_range(1..9), 1 + (case % 3 == 0) as usize * 2];
        let spacing = [r.random_range(0.2..3.0f32) as f64, r.random_range(0.2..3.0f32) as f64, r.random_range(0.2..3.0f32) as f64];
        let n: usize = dims.iter().product();
        let values = random_values(&mut r, dt, n);
        let name = if case % 2 == 0 { "v.nii.gz" } else { "v.nii" };
        let p = dir.path().join(name);
        nifti::write_values(&p, dims, spacing, &values, dt, None).unwrap();
        let back = nifti::read_volume(&p).unwrap();
        assert_eq!(back.header.dims, dims);
        assert_eq!(back.header.spacing, spacing);
        assert_eq!(back.header.datatype, dt);
        assert_eq!(back.values, values, "case {case} {dt:?}");
    }
}

#[test]
fn grid_and_offsets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dims::new(4, 3, 2).unwrap();
    let s = Spacing::new(1.0, 0.5, 2.0).unwrap();
    let g = Grid::from_fn(d, s, |v| v[0] as f64 * 0.25 - v[2] as f64);
    nifti::write_grid(dir.path().join("g.nii.gz"), &g, Datatype::F64, None).unwrap();
    let back = nifti::read_volume(dir.path().join("g.nii.gz")).unwrap().to_grid().unwrap();
    assert_eq!(back, g);

    let o = lesion_core::OffsetField::new(g.clone(), g.map(|x| -x), g.map(|x| 2.0 * x)).unwrap();
    nifti::write_offsets(dir.path().join("o.nii"), &o, Datatype::F32, None).unwrap();
    let v = nifti::read_volume(dir.path().join("o.nii")).unwrap();
    assert_eq!(v.header.dims, [4, 3, 2, 3]);
    let ob = v.to_offsets().unwrap();
    assert_eq!(ob.dx, o.dx);
    assert_eq!(ob.dz, o.dz);
    assert!(matches!(v.to_grid(), Err(NiftiError::Frames { expected: 1, found: 3 })));
}

#[test]
fn corrupted_headers_give_typed_errors() {
    let bad = |f: &dyn Fn(&mut Fixture)| {
        let mut x = Fixture::u8_cube(2);
        f(&mut x);
        nifti::decode(&x.bytes()).unwrap_err()
    };
    assert!(matches!(bad(&|f| f.magic = *b"ni1\0"), NiftiError::Magic { .. }));
    assert!(matches!(bad(&|f| f.datatype = 128), NiftiError::UnsupportedDatatype { code: 128 }));
    assert!(matches!(bad(&|f| f.dim[0] = 0), NiftiError::Dims { .. }));
    assert!(matches!(bad(&|f| f.dim[0] = 6), NiftiError::Dims { .. }));
    assert!(matches!(bad(&|f| f.dim[2] = -1), NiftiError::Dims { .. }));
    assert!(matches!(bad(&|f| f.pixdim[2] = 0.0), NiftiError::Spacing { .. }));
    assert!(matches!(bad(&|f| f.pixdim[1] = f32::NAN), NiftiError::Spacing { .. }));
    assert!(matches!(bad(&|f| f.vox_offset = 100.0), NiftiError::VoxOffset { .. }));
    assert!(matches!(bad(&|f| { f.payload.pop(); }), NiftiError::Truncated { .. }));

    let mut x = Fixture::u8_cube(2).bytes();
    x[0..4].copy_from_slice(&540i32.to_le_bytes());
    assert!(matches!(nifti::decode(&x), Err(NiftiError::HeaderSize { found: 540 })));
    assert!(matches!(nifti::decode(&x[..200]), Err(NiftiError::Truncated { .. })));
    assert!(matches!(nifti::read_volume("/nonexistent/x.nii"), Err(NiftiError::Io { .. })));
}

#[test]
fn labels_reject_fractional_and_negative() {
    let mut f = Fixture::u8_cube(2);
    f.slope = 0.5;
    let v = nifti::decode(&f.bytes()).unwrap();
    assert!(matches!(v.to_label_map(), Err(NiftiError::NotALabel { value }) if value == 0.5));
    f.slope = 1.0;
    f.inter = -1.0;
    let v = nifti::decode(&f.bytes()).unwrap();
    assert!(matches!(v.to_label_map(), Err(NiftiError::NotALabel { value }) if value == -1.0));
}

#[test]
fn unused_axis_pixdim_may_be_zero() {
    let mut f = Fixture::u8_cube(2);
    f.dim = [2, 2, 2, 1, 1, 1, 1, 1];
    f.payload.truncate(4);
    f.pixdim[3] = 0.0;
    let v = nifti::decode(&f.bytes()).unwrap();
    assert_eq!(v.header.dims, [2, 2, 1, 1]);
    assert_eq!(v.header.spacing[2], 1.0);
}
