use arrival_eta::fusion::FeatureSet;
use arrival_eta::pipeline::{
    ablate, contour_stage, dataset_stage, evaluate, generate, Inputs, PipelineConfig, PipelineError, FULL_DISCRETE,
};
use arrival_eta::tcn::TcnModel;

#[test]
fn default_ablation_puts_full_discrete_first() {
    let cfg = PipelineConfig::default();
    let scenario = generate(&cfg).unwrap();
    let inputs = Inputs::from_scenario(&cfg, &scenario).unwrap();
    let contour = contour_stage(&cfg, &inputs).unwrap();
    let table = ablate(&cfg, &inputs, &contour.contour).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.rows[0].variant, FULL_DISCRETE, "{}", table.to_text());
    assert!(table.rows.windows(2).all(|w| w[0].mae <= w[1].mae));
    assert_eq!(table.rows[0].delta_mae, 0.0);
}

#[test]
fn scenario_files_reproduce_the_in_memory_contour() {
    let cfg = PipelineConfig::default();
    let scenario = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    scenario.write_dir(dir.path()).unwrap();
    let from_files = Inputs::read_dir(&cfg, dir.path()).unwrap();
    let in_memory = Inputs::from_scenario(&cfg, &scenario).unwrap();
    let a = contour_stage(&cfg, &from_files).unwrap().contour;
    let b = contour_stage(&cfg, &in_memory).unwrap().contour;
    assert_eq!(a, b);
    assert!(a.polygon.len() >= 3);
}

#[test]
fn window_length_mismatch_names_both_values() {
    let mut cfg = PipelineConfig::default();
    cfg.scenario.n_voyages = 80;
    let scenario = generate(&cfg).unwrap();
    let inputs = Inputs::from_scenario(&cfg, &scenario).unwrap();
    let contour = contour_stage(&cfg, &inputs).unwrap().contour;
    let model_cfg = cfg.clone();
    cfg.dataset.m = 8;
    let ds = dataset_stage(&cfg, &inputs, &contour, FeatureSet::default(), cfg.dataset.embedding).unwrap();
    let model = TcnModel::new(model_cfg.hyper(ds.n_channels()), 1).unwrap();
    match evaluate(&cfg, &model, &ds, &contour) {
        Err(PipelineError::Config(msg)) => assert!(msg.contains("m = 10") && msg.contains("m = 8"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
