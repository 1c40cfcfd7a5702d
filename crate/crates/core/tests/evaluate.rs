use community_interest::corpus::{Corpus, PopularityMetric};
use community_interest::evaluate::{
    drift_run, emit_report, pairwise_matrix, read_csv, threshold_sweep, EvalConfig, ExperimentCell,
};
use community_interest::features::{FeatureExtractor, FeatureGroup, GroupSet};
use community_interest::model::{quick_grid, Algorithm};
use community_interest::synth::{generate, generate_drift, CommunityProfile, DriftSpec};

fn quick(seed: u64) -> EvalConfig {
    EvalConfig {
        grid: quick_grid(Algorithm::Forest),
        folds: 3,
        ..EvalConfig::new(seed)
    }
}

fn profile(label: &str, n: usize, sources: &[&str]) -> CommunityProfile {
    CommunityProfile::new(label, n, sources, &["Acme Corp", "Maria Lopez", "Northfield", "Carla Diaz"])
}

fn four_communities(n: usize) -> Corpus {
    generate(
        &[
            profile("a", n, &["a.com"]),
            profile("b", n, &["b.com"]),
            profile("c", n, &["c.com"]),
            profile("d", n, &["d.com"]),
        ],
        5,
    )
    .unwrap()
}

#[test]
fn matrix_has_one_cell_per_pair_and_group() {
    let corpus = four_communities(30);
    let cells = pairwise_matrix(&corpus, &FeatureExtractor::builtin(), GroupSet::all(), &quick(1)).unwrap();
    assert_eq!(cells.len(), 42);
    assert_eq!((cells[0].pair_a.as_str(), cells[0].pair_b.as_str(), cells[0].group.as_str()), ("a", "b", "style"));
    assert_eq!(cells[41].group, "source");
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&cells, &[], dir.path(), "matrix").unwrap();
    assert_eq!(files.svgs.len(), 6);
    let svg = std::fs::read_to_string(&files.svgs[0]).unwrap();
    assert_eq!(svg.matches("class=\"roc\"").count(), 7);
    assert!(svg.contains("stroke-dasharray") && svg.contains("source (AUC="));
    let back = read_csv(&files.csv).unwrap();
    assert_eq!(back.len(), 42);
    for (r, c) in back.iter().zip(&cells) {
        assert_eq!(r.auc, Some(c.auc()));
    }
}

#[test]
fn single_cell_report() {
    let corpus = generate(&[profile("a", 20, &["x.com"]), profile("b", 20, &["y.com"])], 2).unwrap();
    let cells = pairwise_matrix(&corpus, &FeatureExtractor::builtin(), GroupSet::single(FeatureGroup::Source), &quick(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&cells, &[], dir.path(), "one").unwrap();
    assert_eq!(files.svgs.len(), 1);
    let svg = std::fs::read_to_string(&files.svgs[0]).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("class=\"chance\"").count(), 1);
    assert_eq!(std::fs::read_to_string(&files.csv).unwrap().lines().count(), 2);
    assert!(emit_report(&[], &[], dir.path(), "none").is_err());
}

#[test]
fn floor_violation_names_the_community() {
    let corpus = generate(&[profile("big", 30, &["x.com"]), profile("tiny", 5, &["y.com"])], 2).unwrap();
    let err = pairwise_matrix(&corpus, &FeatureExtractor::builtin(), GroupSet::all(), &quick(1)).unwrap_err();
    assert!(err.to_string().contains("tiny"), "{err}");
}

#[test]
fn sweep_baseline_matches_matrix_and_skips_empty() {
    let corpus = four_communities(30);
    let ex = FeatureExtractor::builtin();
    let g = GroupSet::single(FeatureGroup::Source);
    let matrix = pairwise_matrix(&corpus, &ex, g, &quick(2)).unwrap();
    let rows = threshold_sweep(&corpus, &ex, &[1.0], PopularityMetric::Score, g, &quick(2)).unwrap();
    let cells: Vec<ExperimentCell> = rows.iter().map(|r| r.cell.clone().unwrap()).collect();
    assert_eq!(cells, matrix);
    let rows = threshold_sweep(&corpus, &ex, &[0.1], PopularityMetric::Comments, g, &quick(2)).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows[6..].iter().all(|r| r.cell.is_none() && r.skipped.is_some()));
}

#[test]
fn sweep_signal_independent_of_score() {
    let mut a = profile("a", 400, &["s.com"]).with_rate("hedges", 0.08);
    let mut b = profile("b", 400, &["s.com"]).with_rate("hedges", 0.01);
    a.score_range = (1, 10_000);
    b.score_range = (1, 10_000);
    let corpus = generate(&[a, b], 6).unwrap();
    let rows = threshold_sweep(
        &corpus,
        &FeatureExtractor::builtin(),
        &[0.5],
        PopularityMetric::Score,
        GroupSet::single(FeatureGroup::Bias),
        &quick(6),
    )
    .unwrap();
    let (full, half) = (rows[0].cell.as_ref().unwrap().auc(), rows[1].cell.as_ref().unwrap().auc());
    assert!((full - half).abs() <= 0.05, "{full} vs {half}");
}

#[test]
fn drift_row_counts() {
    let ps = [profile("a", 25, &["x.com"]), profile("b", 25, &["y.com"])];
    let slices = generate_drift(&ps, &DriftSpec::uniform(&["s0", "s1", "s2"], 1, 100, 0.5), 1).unwrap();
    let rows = drift_run(&slices, &FeatureExtractor::builtin(), GroupSet::single(FeatureGroup::Entity), &quick(1)).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[..3].iter().zip(["s0", "s1", "s2"]).all(|(r, s)| r.train_slice == s && r.test_slice == s));
    assert!(rows[3..].iter().all(|r| r.train_slice == "s0"));
    assert_eq!(rows[0].auc(), rows[3].auc());
    assert!(drift_run(&slices[..1], &FeatureExtractor::builtin(), GroupSet::all(), &quick(1)).is_err());
}
