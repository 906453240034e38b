use std::collections::BTreeSet;

use lesion_core::confluence::{clu_plus_set, clu_set, default_semantic_of};
use lesion_core::evaluation::*;
use lesion_core::morphology::{binary_dilate, connected_components};
use lesion_core::splitting::{acls_split, cc_split, filter_small_instances, SplitConfig};
use lesion_core::volume::*;
use lesion_core::{BinaryMask, Connectivity, Dims, Grid, LabelMap, ProbMap, Spacing};
use proptest::prelude::*;

const N: usize = 7;

fn dims() -> Dims {
    Dims::cube(N).unwrap()
}

fn mask() -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), N * N * N)
        .prop_map(|d| Grid::from_vec(dims(), Spacing::default(), d).unwrap())
}

fn labels(max: u32) -> impl Strategy<Value = LabelMap> {
    proptest::collection::vec(prop_oneof![3 => Just(0u32), 1 => 1..=max], N * N * N)
        .prop_map(|d| Grid::from_vec(dims(), Spacing::default(), d).unwrap())
}

fn connectivity() -> impl Strategy<Value = Connectivity> {
    prop_oneof![Just(Connectivity::Face6), Just(Connectivity::Edge18), Just(Connectivity::Vertex26)]
}

fn permuted(m: &LabelMap, shift: u32) -> LabelMap {
    let ids = label_set(m);
    let n = ids.len() as u32;
    m.map(|&k| if k == 0 { 0 } else { 1 + ((ids.iter().position(|&i| i == k).unwrap() as u32 + shift) % n) + 100 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn components_partition_foreground(s in mask(), c in connectivity()) {
        let cs = connected_components(&s, c);
        let mut seen = BTreeSet::new();
        for comp in &cs.components {
            for v in comp {
                prop_assert!(seen.insert(*v));
                prop_assert!(*s.at(*v));
            }
        }
        prop_assert_eq!(seen.len(), foreground_count(&s));
    }

    #[test]
    fn dilation_is_extensive(s in mask(), c in connectivity(), it in 1usize..3) {
        let d = binary_dilate(&s, c, it).unwrap();
        prop_assert!(s.data().iter().zip(d.data()).all(|(a, b)| !*a || *b));
    }

    #[test]
    fn binarize_is_idempotent(vals in proptest::collection::vec(0.0f64..=1.0, N * N * N), t in 0.01f64..0.99) {
        let p = ProbMap::from_grid(Grid::from_vec(dims(), Spacing::default(), vals).unwrap());
        let b = binarize(&p, t).unwrap();
        let again = binarize(&ProbMap::from_grid(b.map(|&x| x as u8 as f64)), t).unwrap();
        prop_assert_eq!(b, again);
    }

    #[test]
    fn instance_sets_partition_labels(m in labels(5)) {
        let total: usize = label_set(&m).into_iter().map(|k| instance_voxels(&m, k).len()).sum();
        prop_assert_eq!(total, m.data().iter().filter(|&&k| k > 0).count());
    }

    #[test]
    fn clu_is_within_clu_plus(refs in labels(6), s in mask()) {
        let a = clu_set(&refs, &s).unwrap();
        let b = clu_plus_set(&refs, &s).unwrap();
        prop_assert!(a.is_subset(&b));
        prop_assert!(a.iter().all(|k| label_set(&refs).contains(k)));
    }

    #[test]
    fn no_clu_when_lesions_are_components(s in mask()) {
        let refs = connected_components(&s, Connectivity::Face6).labels;
        prop_assert!(clu_set(&refs, &default_semantic_of(&refs)).unwrap().is_empty());
    }

    #[test]
    fn matching_transposes_under_role_swap(pred in labels(4), refs in labels(4)) {
        let cfg = MatchConfig::default();
        let a = match_instances(&pred, &refs, &cfg).unwrap();
        let b = match_instances(&refs, &pred, &cfg).unwrap();
        let ta: BTreeSet<(u32, u32)> = a.pairs.iter().map(|p| (p.pred, p.reference)).collect();
        let tb: BTreeSet<(u32, u32)> = b.pairs.iter().map(|p| (p.reference, p.pred)).collect();
        prop_assert_eq!(ta, tb);
        prop_assert_eq!(a.fp_pred_ids, b.fn_ref_ids);
    }

    #[test]
    fn matching_follows_relabeling(pred in labels(4), refs in labels(4), a in 1u32..4, b in 0u32..9) {
        // order-preserving renaming keeps tie-breaking intact
        let rename = |k: u32| if k == 0 { 0 } else { a * k + b };
        let cfg = MatchConfig::default();
        let m = match_instances(&pred, &refs, &cfg).unwrap();
        let r = match_instances(&pred.map(|&k| rename(k)), &refs.map(|&k| rename(k)), &cfg).unwrap();
        let want: Vec<(u32, u32, f64)> = m.pairs.iter().map(|p| (rename(p.pred), rename(p.reference), p.iou)).collect();
        let got: Vec<(u32, u32, f64)> = r.pairs.iter().map(|p| (p.pred, p.reference, p.iou)).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(&r.fp_pred_ids, &m.fp_pred_ids.iter().map(|&k| rename(k)).collect::<BTreeSet<_>>());
        prop_assert_eq!(panoptic_quality(&r), panoptic_quality(&m));
    }

    #[test]
    fn panoptic_bounds(pred in labels(5), refs in labels(5)) {
        let m = match_instances(&pred, &refs, &MatchConfig::default()).unwrap();
        let q = panoptic_quality(&m);
        prop_assert!(0.0 <= q.pq && q.pq <= q.sq && q.sq <= 1.0);
        prop_assert!((0.0..=1.0).contains(&q.rq));
        prop_assert_eq!(q.pq, q.sq * q.rq);
    }

    #[test]
    fn dice_ignores_instance_ids(pred in labels(5), refs in labels(5), shift in 0u32..5) {
        let d = |p: &LabelMap, r: &LabelMap| dice(&p.map(|&k| k > 0), &r.map(|&k| k > 0)).unwrap();
        prop_assert_eq!(d(&pred, &refs), d(&permuted(&pred, shift), &refs));
    }

    #[test]
    fn size_filter_is_idempotent(m in labels(6)) {
        let once = filter_small_instances(&m);
        prop_assert_eq!(filter_small_instances(&once), once.clone());
        prop_assert_eq!(label_set(&once), (1..=label_set(&once).len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn volume_is_additive(m in labels(4)) {
        let ids = label_set(&m);
        let total: f64 = ids.iter().map(|&k| volume_mm3(&m, k).unwrap()).sum();
        let merged = m.map(|&k| (k > 0) as u32);
        let whole = if ids.is_empty() { 0.0 } else { volume_mm3(&merged, 1).unwrap() };
        prop_assert!((total - whole).abs() < 1e-9);
    }

    #[test]
    fn pipelines_stay_inside_foreground(vals in proptest::collection::vec(0.0f64..=1.0, N * N * N)) {
        let p = ProbMap::from_grid(Grid::from_vec(dims(), Spacing::default(), vals).unwrap());
        let s = binarize(&p, 0.5).unwrap();
        let cfg = SplitConfig::default();
        let acls = acls_split(&p, &cfg).unwrap();
        for out in [cc_split(&p, &cfg).unwrap(), acls.labels.clone()] {
            prop_assert!(out.data().iter().zip(s.data()).all(|(k, f)| *k == 0 || *f));
        }
        let regions = connected_components(&s, Connectivity::Face6).len();
        prop_assert!(label_set(&acls.labels).len() <= acls.centers.len() + acls.fallback_regions);
        prop_assert!(acls.fallback_regions <= regions);
    }
}
