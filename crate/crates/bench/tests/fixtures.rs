use modgp::pipeline::build_model;
use modgp::{ModelConfig, ModelKind};
use modgp_bench::{run_steps, sine_data};

#[test]
fn sine_fixture_is_deterministic() {
    let a = sine_data(300, 3, 7);
    assert_eq!(a.len(), 300);
    assert_eq!(a.dim(), 3);
    assert_eq!(a, sine_data(300, 3, 7));
    assert_ne!(a, sine_data(300, 3, 8));
}

#[test]
fn run_steps_trains_a_copy() {
    let data = sine_data(200, 1, 0);
    for kind in [ModelKind::Svgp, ModelKind::Smgp] {
        let cfg = ModelConfig { num_inducing: 10, experts: 2, ..ModelConfig::new(kind) };
        let model = build_model(&cfg, &data.x, 0).unwrap();
        let before = model.clone();
        let trained = run_steps(&model, &data, 64, 5).unwrap();
        assert_eq!(model, before);
        assert_ne!(trained, model);
    }
}
