use pcdpem::em::run_pcdpem;
use pcdpem::experiment::{monte_carlo, run_data, EmSettings, ExperimentConfig, RunStatus};
use pcdpem::sim::TrajectoryData;
use pcdpem::stability::check_contraction;

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        model: "gene_regulation".into(),
        agents: 6,
        horizon: 20,
        particles: 60,
        repetitions: 2,
        attach: 2,
        deletion: 0.0,
        em: EmSettings { max_iterations: 3, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn studies_are_reproducible() {
    let a = monte_carlo(&tiny()).unwrap();
    let b = monte_carlo(&tiny()).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.theta_hat, y.theta_hat);
        assert_eq!(x.status, y.status);
    }
    let c = monte_carlo(&ExperimentConfig { seed: 9, ..tiny() }).unwrap();
    assert_ne!(a.records[0].theta_hat, c.records[0].theta_hat);
}

#[test]
fn identification_from_saved_data_matches() {
    let cfg = tiny();
    let model = cfg.model_class().unwrap();
    let net = cfg.network().unwrap();
    let (data, _) = run_data(&cfg, &model, &net, 0, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path(), "data", true).unwrap();
    let loaded = TrajectoryData::load(dir.path(), "data").unwrap();
    assert_eq!(loaded.outputs, data.outputs);

    let em = cfg.em_config(3);
    let a = run_pcdpem(&data, &net, &model, &model.theta_true, &em).unwrap();
    let b = run_pcdpem(&loaded, &net, &model, &model.theta_true, &em).unwrap();
    assert_eq!(a.theta, b.theta);
    assert!(a.history.iter().all(|r| r.delta_q >= -1e-12));
}

#[test]
fn constrained_estimates_are_certified() {
    let s = monte_carlo(&tiny()).unwrap();
    let model = tiny().model_class().unwrap();
    for r in s.records.iter().filter(|r| r.status == RunStatus::Ok) {
        assert!(r.certificate_margin.unwrap() >= -1e-9);
        assert!(r.max_mass_drift <= 1e-12 && r.max_count_drift <= 1e-12);
        assert_eq!(r.theta_hat.len(), model.theta_true.len());
    }
    let net = tiny().network().unwrap();
    let (data, _) = run_data(&tiny(), &model, &net, 1, false).unwrap();
    let est = run_pcdpem(&data, &net, &model, &model.theta_true, &tiny().em_config(5)).unwrap();
    let cert = est.certificate.as_ref().unwrap();
    assert!(check_contraction(&model, &est.theta, cert, &est.witnesses).unwrap().feasible);
}
