use sitn::eval::{run_experiment, ExperimentConfig, Method};
use sitn::flow::FlowArchitecture;
use sitn::io::{encode_flow, read_calibration, read_flow, read_scores, write_calibration, write_flow, write_scores};
use sitn::synthetic::Scenario;
use sitn::Statistic;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        n_calibration: 80,
        n_test_id: 30,
        n_test_ood: 30,
        bootstrap_iterations: 200,
        ensemble_size: 2,
        seed: 9,
        ..ExperimentConfig::default()
    };
    cfg.flow = FlowArchitecture {
        hidden: vec![16, 16],
        ..FlowArchitecture::new(2)
    };
    cfg.train.steps = 40;
    cfg
}

#[test]
fn identical_distributions_score_at_chance() {
    let mut cfg = ExperimentConfig {
        n_calibration: 2000,
        n_test_id: 3000,
        n_test_ood: 3000,
        bootstrap_iterations: 200,
        ensemble_size: 2,
        seed: 3,
        ..ExperimentConfig::default()
    };
    cfg.calibration.statistics = Statistic::ALL.to_vec();
    let scenario = Scenario::builtin("identical", 4, 3).unwrap();
    let out = run_experiment(&scenario, &Method::ALL, &cfg, None).unwrap();
    for m in Method::ALL {
        let a = out.report.auroc_of(m).unwrap().point;
        assert!((0.47..=0.53).contains(&a), "{m}: {a}");
    }
    // Null data is flagged at roughly the nominal rate.
    assert!((out.report.calibration.test_fpr - 0.05).abs() < 0.02);
}

#[test]
fn runs_are_reproducible() {
    let sc = Scenario::builtin("tone_injection", 8, 1).unwrap();
    let methods = [Method::Sitn, Method::SitnKde, Method::Loglik, Method::Waic];
    let a = run_experiment(&sc, &methods, &tiny(), None).unwrap();
    let b = run_experiment(&sc, &methods, &tiny(), None).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.records, b.records);

    // Data are keyed by the scenario seed.
    let c = run_experiment(&sc.with_seed(2), &methods, &tiny(), None).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn artefacts_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::builtin("moving_average", 8, 2).unwrap();
    let methods = [Method::Sitn, Method::Ad, Method::Cv, Method::Dose];
    let out = run_experiment(&sc, &methods, &tiny(), None).unwrap();

    let scores = dir.path().join("s.csv");
    write_scores(&scores, &out.records).unwrap();
    assert_eq!(read_scores(&scores).unwrap(), out.records);

    let cal = dir.path().join("c.json");
    write_calibration(&cal, &out.calibration).unwrap();
    assert_eq!(read_calibration::<f64>(&cal).unwrap(), out.calibration);

    // Reloading the flow reproduces every score.
    let flow = dir.path().join("f.bin");
    write_flow(&flow, &out.model).unwrap();
    let model = read_flow::<f64>(&flow).unwrap();
    assert_eq!(encode_flow(&model), encode_flow(&out.model));
    let again = run_experiment(&sc, &methods, &tiny(), Some(model)).unwrap();
    assert_eq!(again.records, out.records);
    assert_eq!(again.report.auroc, out.report.auroc);
    assert!(again.report.held_out_loss.is_none() && out.report.held_out_loss.is_some());
}
