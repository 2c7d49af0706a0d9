use discretized_returns::harness::control::{run_servo_curves, train_run};
use discretized_returns::harness::ControlExperimentConfig;
use discretized_returns::reinforce::ReturnVariant;

fn config(minutes: f64, runs: usize) -> ControlExperimentConfig {
    ControlExperimentConfig { run_seconds: minutes * 60.0, runs, seed: 11, ..Default::default() }
}

#[test]
fn curves_rise_at_a_tuned_step_size() {
    let cfg = config(10.0, 4);
    let alpha = 2f64.powi(-7);
    let table = run_servo_curves(&cfg, &[(ReturnVariant::Dtr, alpha), (ReturnVariant::Rp, alpha)], None);
    for s in &table.series {
        let curve = s.summary();
        assert_eq!(curve.len(), 10);
        let first = curve[0].mean;
        let last = curve[9].mean;
        assert!(last > first, "{:?}: minute 1 {first}, minute 10 {last}", s.variant);
    }
}

#[test]
fn zero_step_size_is_variant_blind() {
    let cfg = config(2.0, 1);
    let a = train_run(&cfg, 0.04, ReturnVariant::Dtr, 0.0, 3, None, &mut |_| {});
    let b = train_run(&cfg, 0.04, ReturnVariant::Rp, 0.0, 3, None, &mut |_| {});
    assert_eq!(a, b);
    assert_eq!(a.final_performance(cfg.run_seconds, 0.2), b.final_performance(cfg.run_seconds, 0.2));
}

#[test]
fn curve_rerun_is_identical() {
    let cfg = config(2.0, 2);
    let settings = [(ReturnVariant::Rp, 2f64.powi(-8))];
    let mut trace_a = Vec::new();
    let mut trace_b = Vec::new();
    let a = run_servo_curves(&cfg, &settings, Some(&mut trace_a));
    let b = run_servo_curves(&cfg, &settings, Some(&mut trace_b));
    assert_eq!(a, b);
    assert_eq!(trace_a, trace_b);
    assert!(!trace_a.is_empty());
}
