use onebit_core::bench::{preset, read_csv, run_scenario, write_csv, McScenario, SweepVar};
use onebit_core::relax::{Method, OrderPolicy};

#[test]
fn detection_improves_with_record_length() {
    let sc = McScenario {
        name: "pd-vs-n".into(),
        sweep_var: SweepVar::N,
        sweep: vec![256.0, 2048.0],
        trials: 30,
        seed: 21,
        estimators: vec![Method::MmRelax],
        order: OrderPolicy::Fixed(6),
        ..preset("example1").unwrap()
    };
    let res = run_scenario(&sc).unwrap();
    let short = res.row(256.0, Method::MmRelax).unwrap();
    let long = res.row(2048.0, Method::MmRelax).unwrap();
    assert!(long.pd >= short.pd, "Pd {} at N=256, {} at N=2048", short.pd, long.pd);
    for r in &res.rows {
        assert_eq!(r.detected + r.excluded(), r.trials);
    }
}

#[test]
fn csv_round_trips_a_real_run() {
    let sc = McScenario {
        name: "small".into(),
        sweep_var: SweepVar::Snr,
        n: 128,
        sweep: vec![-10.0, 20.0],
        trials: 3,
        seed: 4,
        estimators: vec![Method::Clean, Method::MmRelax],
        order: OrderPolicy::Fixed(2),
        ..preset("example2").unwrap()
    };
    let res = run_scenario(&sc).unwrap();
    let mut buf = Vec::new();
    write_csv(&res.rows, &mut buf).unwrap();
    let back = read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in res.rows.iter().zip(&back) {
        assert_eq!(a.estimator, b.estimator);
        assert_eq!(a.detected, b.detected);
        assert_eq!(a.freq_mse.is_nan(), b.freq_mse.is_nan());
        if !a.freq_mse.is_nan() {
            assert_eq!(a.freq_mse, b.freq_mse);
        }
        assert_eq!(a.pd, b.pd);
    }
}
