use polysched::engine::simulate;
use polysched::experiment::{compare_flowtime_speed, run_experiment, ExperimentConfig, InstanceSource};
use polysched::instances::{gen_flowtime_concat, Family, GenParams};
use polysched::schedulers::MaxMin;
use polysched::tree::gen_lower_bound_tree;

#[test]
fn pf_on_twenty_multidim_instances_certifies() {
    let source = InstanceSource::Generated { family: Family::Multidim, params: GenParams::new(8, 3), count: 20 };
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { out: Some(dir.path().to_path_buf()), ..ExperimentConfig::new(source, &["pf"], &[1.0], 11) };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 20);
    assert!(report.rows.iter().all(|r| r.completion_cert.as_ref().is_some_and(|c| c.feasible)));
    assert_eq!(report.certificate_failures(), 0);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains(&cfg.hash()));
}

#[test]
fn blass_ratio_at_matching_speed() {
    let source = InstanceSource::Generated { family: Family::Unrelated, params: GenParams::new(10, 3), count: 8 };
    let cfg = ExperimentConfig { epsilon: Some(0.5), ..ExperimentConfig::new(source, &["blass"], &[1.0, 2.5], 5) };
    let report = run_experiment(&cfg).unwrap();
    for r in &report.rows {
        assert_eq!(r.invariants_clean, Some(true));
        match (&r.blass_cert, r.speed) {
            (Some(c), s) if s == 2.5 => assert!(c.feasible && c.certified_ratio <= 20.0 * (1.0 + 1e-9)),
            (None, s) => assert_eq!(s, 1.0),
            other => panic!("unexpected certificate at {other:?}"),
        }
    }
}

#[test]
fn concat_flow_strictly_improves_with_speed() {
    let cfg = ExperimentConfig::new(InstanceSource::Concat { copies: 4, gap: 1.5 }, &["pf"], &[1.0, 2.0], 0);
    let t = compare_flowtime_speed(&cfg).unwrap();
    assert_eq!(t.len(), 2);
    assert!(t[1].weighted_flow < t[0].weighted_flow);
    assert!(t[0].degrades && !t[1].degrades);
}

/// Copy `c` of the concatenation spans ids `4c..4c+4` (stride 4).
#[test]
fn equal_rate_backlog_grows_across_copies() {
    let base = gen_lower_bound_tree(1, 0).unwrap().to_unrelated().unwrap();
    let inst = gen_flowtime_concat(&base, 8, 1.0).unwrap();
    let tr = simulate(&inst, &mut MaxMin, 1.0).unwrap();
    let span = |c: u64| {
        tr.jobs.iter().filter(|j| j.id / 4 == c).map(|j| j.completion.unwrap()).fold(0.0, f64::max) - c as f64
    };
    let spans: Vec<f64> = (0..8).map(span).collect();
    assert!(spans.iter().all(|&s| s > 1.5), "{spans:?}");
    assert!(spans[7] > spans[0], "{spans:?}");
}
