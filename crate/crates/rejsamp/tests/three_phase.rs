use rejsamp::harness::RunOptions;
use rejsamp::three_phase::{api_style_config, figure_label, run_api_style_three_phase, ThreePhasePlan};

#[test]
fn small_study_runs() {
    let plan = ThreePhasePlan { replicates: 40, ..ThreePhasePlan::default() };
    let cfg = api_style_config(&plan);
    let result = run_api_style_three_phase(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(result.rows.len(), 4);
    for row in &result.rows {
        assert_eq!(row.failures, 0);
        assert!(row.mean_draws_iii.is_some());
        assert!(row.negative_weight_replicates.is_none());
    }
    let rej = result.find("api_proxy", "rej", "mean").unwrap();
    assert!(rej.mean_draws_ii > 1.0 && rej.mean_draws_iii.unwrap() > 1.0);
    let none = result.find("api_proxy", "none", "reg").unwrap();
    assert_eq!(none.mean_draws_iii, Some(1.0));
    let simple = result.find("api_proxy", "none", "mean").unwrap();
    assert!(none.variance < simple.variance);
}

#[test]
fn two_phase_configs_are_refused() {
    let mut cfg = api_style_config(&ThreePhasePlan::default());
    cfg.phases.pop();
    assert!(run_api_style_three_phase(&cfg, &RunOptions::default()).is_err());
}

#[test]
fn figure_labels() {
    assert_eq!(figure_label("none", "mean"), "simple3");
    assert_eq!(figure_label("none", "reg"), "reg3");
    assert_eq!(figure_label("rej", "mean"), "rej3");
    assert_eq!(figure_label("rej", "reg"), "rej-reg3");
}
