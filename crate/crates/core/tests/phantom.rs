use lesion_core::confluence::{annotate_reference, clu_set_partial_overlap, ConfluenceConfig};
use lesion_core::morphology::{connected_components, hessian_negative_candidates};
use lesion_core::phantom::*;
use lesion_core::splitting::{acls_split, conflunet_postprocess, SplitConfig};
use lesion_core::volume::{binarize, canonical_relabel, label_set};
use lesion_core::Connectivity;

#[test]
fn truth_agrees_with_confluence_module() {
    for i in 0..40 {
        let spec = PhantomSpec { seed: subject_seed(7, i), confluent_fraction: 0.5, clu_plus_fraction: 0.3, ..Default::default() };
        let ph = generate(&spec).unwrap();
        let got = annotate_reference(&ph.refs, &ConfluenceConfig::default()).unwrap();
        assert_eq!(got, ph.truth);
        let s = ph.refs.map(|&k| k > 0);
        assert_eq!(clu_set_partial_overlap(&ph.refs, &s).unwrap(), ph.truth.clu_ids);
        assert!(ph.truth.clu_ids.is_subset(&ph.truth.clu_plus_ids));
        assert_eq!(label_set(&ph.refs).len(), spec.n_lesions);
        assert_eq!(canonical_relabel(&ph.refs), ph.refs);
    }
}

#[test]
fn placements_are_reflected_in_truth() {
    for i in 0..20 {
        let ph = generate(&PhantomSpec { seed: subject_seed(8, i), ..Default::default() }).unwrap();
        for l in &ph.lesions {
            match l.placement {
                Placement::Confluent(t) => assert!(ph.truth.clu_ids.contains(&l.id) && ph.truth.clu_ids.contains(&t)),
                Placement::Gap(t) => assert!(ph.truth.clu_plus_ids.contains(&t) && !ph.truth.clu_ids.contains(&l.id)),
                Placement::Isolated => {}
            }
        }
    }
}

#[test]
fn zero_noise_gaussian_peaks_give_one_cluster_per_lesion() {
    for i in 0..20 {
        let spec = PhantomSpec { seed: subject_seed(9, i), min_center_separation: 8.0, ..Default::default() };
        let ph = generate(&spec).unwrap();
        let s = binarize(&ph.prob, 0.5).unwrap();
        let cand = hessian_negative_candidates(&ph.prob, &s).unwrap();
        assert_eq!(connected_components(&cand, Connectivity::Vertex26).len(), spec.n_lesions, "subject {i}");
        let acls = acls_split(&ph.prob, &SplitConfig::default()).unwrap();
        assert_eq!(label_set(&acls.labels).len(), spec.n_lesions);
    }
}

#[test]
fn exact_targets_reconstruct_phantom() {
    for i in 0..20 {
        let spec = PhantomSpec { seed: subject_seed(10, i), min_center_separation: 6.0, ..Default::default() };
        let ph = generate(&spec).unwrap();
        let out = conflunet_postprocess(&ph.prob, &ph.heatmap, &ph.offsets, &SplitConfig::default()).unwrap();
        assert_eq!(canonical_relabel(&out), ph.refs, "subject {i}");
    }
}

#[test]
fn anisotropic_spacing_is_supported() {
    let spec = PhantomSpec { spacing: [0.66, 0.66, 0.7], dims: [48, 48, 44], seed: 3, ..Default::default() };
    let ph = generate(&spec).unwrap();
    assert_eq!(label_set(&ph.refs).len(), spec.n_lesions);
    assert_eq!(ph.refs.spacing().as_array(), [0.66, 0.66, 0.7]);
}

#[test]
fn smoothed_noise_keeps_foreground() {
    let spec = PhantomSpec { noise_sd: 0.15, noise_smoothing: Some(1.0), seed: 4, ..Default::default() };
    let ph = generate(&spec).unwrap();
    assert_eq!(binarize(&ph.prob, 0.5).unwrap(), ph.refs.map(|&k| k > 0));
}
