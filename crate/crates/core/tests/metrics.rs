use std::collections::HashMap;

use proptest::prelude::*;
use ptco_core::metrics::{
    classification_metrics, per_project_rows, two_phase_accuracy, update_metrics, ConfusionCounts, JudgedSample,
    MetricsError, SessionStatus,
};
use ptco_core::validation::QualityLevel;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn published_confusion_counts() {
    let c = ConfusionCounts { tp: 496, fn_: 24, fp: 53, tn: 1658 };
    let m = classification_metrics(c).unwrap();
    assert!(close(m.accuracy.unwrap(), 2154.0 / 2231.0, 1e-12));
    // 2154 / 2231 rounds to 0.96549.
    assert!(close(m.accuracy.unwrap(), 0.96549, 1e-5));
    assert!(close(m.precision_pos.unwrap(), 0.90346, 1e-5));
    assert!(close(m.recall_pos.unwrap(), 496.0 / 520.0, 1e-12));
}

#[test]
fn seven_of_nine_full_successes() {
    let mut levels = vec![QualityLevel::SatisfiesAll; 7];
    levels.extend([QualityLevel::CompilationFailure; 2]);
    let r = update_metrics(&levels).unwrap();
    for rate in [r.csr, r.tps, r.ucr] {
        assert!(close(rate, 0.7778, 1e-4));
    }
}

#[test]
fn zero_cells_are_undefined_not_errors() {
    let m = classification_metrics(ConfusionCounts { tn: 5, ..Default::default() }).unwrap();
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(m.precision_pos, None);
    assert_eq!(m.f1_pos, None);
    assert_eq!(classification_metrics(ConfusionCounts::default()), Err(MetricsError::EmptyCounts));
}

fn mixed_levels() -> Vec<QualityLevel> {
    use QualityLevel::*;
    // 8 compile, 6 pass, 5 cover out of 10.
    vec![
        SatisfiesAll, SatisfiesAll, SatisfiesAll, SatisfiesAll, SatisfiesAll,
        CoverageFailure,
        TestFailure, TestFailure,
        CompilationFailure, CompilationFailure,
    ]
}

#[test]
fn mixed_sessions_rates() {
    let r = update_metrics(&mixed_levels()).unwrap();
    assert_eq!((r.csr, r.tps, r.ucr), (0.8, 0.6, 0.5));
    assert_eq!(update_metrics(&[]), Err(MetricsError::EmptySessionList));
}

#[test]
fn two_phase_over_positives() {
    let mut samples = Vec::new();
    let mut sessions = HashMap::new();
    for i in 0..5 {
        let id = format!("p{i}");
        samples.push(JudgedSample { sample_id: id.clone(), actual_positive: true, predicted_obsolete: i < 4 });
        if i < 4 {
            let level = if i < 3 { QualityLevel::SatisfiesAll } else { QualityLevel::TestFailure };
            sessions.insert(id, SessionStatus::Ran(level));
        }
    }
    samples.push(JudgedSample { sample_id: "n0".into(), actual_positive: false, predicted_obsolete: true });
    sessions.insert("n0".into(), SessionStatus::Ran(QualityLevel::SatisfiesAll));
    assert_eq!(two_phase_accuracy(&samples, &sessions).unwrap(), Some(0.6));

    sessions.remove("p0");
    assert_eq!(two_phase_accuracy(&samples, &sessions), Err(MetricsError::MissingSession("p0".into())));
}

#[test]
fn skipped_sessions_are_counted_apart() {
    let rows = per_project_rows([
        ("a", SessionStatus::Ran(QualityLevel::SatisfiesAll)),
        ("a", SessionStatus::Skipped),
        ("b", SessionStatus::Ran(QualityLevel::CompilationFailure)),
    ]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].project, "macro-average");
    assert_eq!(rows[2].ucr, Some(0.5));
    assert_eq!((rows[0].project.as_str(), rows[0].sessions, rows[0].skipped), ("a", 1, 1));
    assert_eq!(rows[0].ucr, Some(1.0));
    assert_eq!(rows[1].csr, Some(0.0));
}

fn level() -> impl Strategy<Value = QualityLevel> {
    prop::sample::select(vec![
        QualityLevel::CompilationFailure,
        QualityLevel::TestFailure,
        QualityLevel::CoverageFailure,
        QualityLevel::SatisfiesAll,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn counts_reproduce_from_outcomes(outcomes in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let c = ConfusionCounts::tally(outcomes.iter().copied());
        prop_assert_eq!(c.total() as usize, outcomes.len());
        prop_assert_eq!(c.tp as usize, outcomes.iter().filter(|o| o.0 && o.1).count());
        prop_assert_eq!(c.fn_ as usize, outcomes.iter().filter(|o| !o.0 && o.1).count());
        let m = classification_metrics(c).unwrap();
        let correct = outcomes.iter().filter(|o| o.0 == o.1).count() as f64;
        prop_assert!(close(m.accuracy.unwrap(), correct / outcomes.len() as f64, 1e-12));
    }

    #[test]
    fn gate_rates_are_nested(levels in prop::collection::vec(level(), 1..100)) {
        let r = update_metrics(&levels).unwrap();
        prop_assert!(r.ucr <= r.tps && r.tps <= r.csr && r.csr <= 1.0);
        let n = levels.len() as f64;
        let ucr = levels.iter().filter(|l| **l == QualityLevel::SatisfiesAll).count() as f64 / n;
        prop_assert!(close(r.ucr, ucr, 1e-12));
    }

    #[test]
    fn two_phase_bounded_by_recall_and_ucr(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), level()), 1..80)
    ) {
        let mut samples = Vec::new();
        let mut sessions = HashMap::new();
        for (i, (actual, predicted, lvl)) in rows.iter().enumerate() {
            let id = format!("s{i}");
            samples.push(JudgedSample { sample_id: id.clone(), actual_positive: *actual, predicted_obsolete: *predicted });
            if *predicted {
                sessions.insert(id, SessionStatus::Ran(*lvl));
            }
        }
        let positives = rows.iter().filter(|r| r.0).count();
        let got = two_phase_accuracy(&samples, &sessions).unwrap();
        prop_assert_eq!(got.is_none(), positives == 0);
        if let Some(acc) = got {
            let tp = rows.iter().filter(|r| r.0 && r.1).count();
            let tp_done = rows.iter().filter(|r| r.0 && r.1 && r.2 == QualityLevel::SatisfiesAll).count();
            prop_assert!(acc <= tp as f64 / positives as f64 + 1e-12);
            prop_assert!(close(acc, tp_done as f64 / positives as f64, 1e-12));
        }
    }
}
