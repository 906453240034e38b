use lesion_core::evaluation::{aggregate_cohort, MetricsReport, ReportCounts, ReportFlags};
use lesion_kit::report::{self, ReportFormat, SubjectReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_report(r: &mut ChaCha8Rng) -> MetricsReport {
    let mut v = || if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..1.0) };
    let vals: [f64; 15] = std::array::from_fn(|_| v());
    let c: [usize; 15] = std::array::from_fn(|_| r.random_range(0..40));
    MetricsReport {
        dsc: vals[0],
        ndsc: vals[1],
        pq: vals[2],
        sq: vals[3],
        rq: vals[4],
        f1: vals[5],
        recall: vals[6],
        precision: vals[7],
        dic: (vals[8] * 30.0).floor(),
        f1_clu: vals[9],
        recall_clu: vals[10],
        precision_clu: vals[11],
        f1_clu_plus: vals[12],
        recall_clu_plus: vals[13],
        precision_clu_plus: vals[14],
        counts: ReportCounts {
            n_pred: c[0],
            n_ref: c[1],
            n_ref_clu: c[2],
            n_ref_clu_plus: c[3],
            n_pred_clu: c[4],
            n_pred_clu_plus: c[5],
            tp: c[6],
            fp: c[7],
            fn_: c[8],
            tp_clu: c[9],
            fp_clu: c[10],
            fn_clu: c[11],
            tp_clu_plus: c[12],
            fp_clu_plus: c[13],
            fn_clu_plus: c[14],
        },
        flags: ReportFlags { no_ref_clu: r.random_bool(0.3), no_clu_plus_detections: r.random_bool(0.3), ..Default::default() },
    }
}

#[test]
fn reports_parse_back_within_display_precision() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<SubjectReport> =
        (0..25).map(|i| SubjectReport { subject: format!("s{i:02}, quoted \"id\""), report: random_report(&mut r) }).collect();
    let summary = aggregate_cohort(&rows.iter().map(|s| s.report).collect::<Vec<_>>()).unwrap();
    for name in ["out.csv", "out.json"] {
        let path = dir.path().join(name);
        report::write_report(&rows, Some(&summary), &path, ReportFormat::from_path(&path), None).unwrap();
        let back = report::read_report(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.report.counts, b.report.counts);
            assert_eq!(a.report.flags, b.report.flags);
            for (x, y) in a.report.metric_values().iter().zip(b.report.metric_values()) {
                assert!((x - y).abs() <= 1e-6, "{name}: {x} vs {y}");
            }
        }
    }
    let side = std::fs::read_to_string(dir.path().join("out.summary.csv")).unwrap();
    assert!(side.starts_with("metric,mean,sd,median\n"));
    assert!(side.contains("pooled_clu_plus_f1,"));
}

#[test]
fn malformed_reports_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "subject,dsc\na,1\n").unwrap();
    assert!(matches!(report::read_report(&p), Err(report::ReportError::Format { .. })));
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\"subjects\": [{\"subject\": \"a\"}]}").unwrap();
    assert!(matches!(report::read_report(&p), Err(report::ReportError::Format { .. })));
}
