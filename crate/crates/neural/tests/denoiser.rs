use loadinv_nn::layers::{EncoderSpec, TransformerSpec};
use loadinv_nn::{Condition, DenoiserConfig, DenoiserModel, Graph, NnError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> DenoiserConfig {
    DenoiserConfig {
        n_params: 30,
        transformer: TransformerSpec { width: 16, ffn: 32, layers: 2, heads: 4 },
        encoder: EncoderSpec { in_channels: 2, len: 512, stem: 4, down1: 8, down2: 16 },
        events: vec!["ordinary".into(), "trip".into(), "stall".into()],
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn predict(model: &DenoiserModel, store: &loadinv_nn::ParamStore<f64>, x: &Tensor<f64>, steps: &[usize], conds: &[Condition<f64>]) -> Vec<f64> {
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let out = model.forward(&mut g, store, xi, steps, conds).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn output_has_one_entry_per_parameter_for_any_condition_count() {
    let (model, store) = DenoiserModel::init::<f64>(config(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[2, 30]);
    let all: Vec<Condition<f64>> = (0..3).map(|e| Condition { event: e, trajs: rand_tensor(&mut rng, &[2 * 512, 2]) }).collect();
    for k in 1..=3 {
        let out = predict(&model, &store, &x, &[1, 200], &all[..k]);
        assert_eq!(out.len(), 60);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn permuting_conditions_is_exact_noop() {
    let (model, store) = DenoiserModel::init::<f64>(config(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[1, 30]);
    let conds: Vec<Condition<f64>> = (0..3).map(|e| Condition { event: e, trajs: rand_tensor(&mut rng, &[512, 2]) }).collect();
    let base = predict(&model, &store, &x, &[17], &conds);
    for perm in [[2, 0, 1], [1, 2, 0], [2, 1, 0]] {
        let shuffled: Vec<Condition<f64>> = perm.iter().map(|&i| conds[i].clone()).collect();
        assert_eq!(predict(&model, &store, &x, &[17], &shuffled), base);
    }
}

#[test]
fn event_identity_matters() {
    let (model, store) = DenoiserModel::init::<f64>(config(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[1, 30]);
    let trajs = rand_tensor(&mut rng, &[512, 2]);
    let a = predict(&model, &store, &x, &[5], &[Condition { event: 0, trajs: trajs.clone() }]);
    let b = predict(&model, &store, &x, &[5], &[Condition { event: 2, trajs }]);
    assert_ne!(a, b);
}

#[test]
fn shared_context_matches_per_sample_forward() {
    let (model, store) = DenoiserModel::init::<f64>(config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trajs = rand_tensor(&mut rng, &[512, 2]);
    let conds = vec![Condition { event: 1, trajs: trajs.clone() }, Condition { event: 0, trajs: rand_tensor(&mut rng, &[512, 2]) }];
    let x = rand_tensor(&mut rng, &[3, 30]);
    let steps = [1, 50, 200];
    let ctx = model.context_tokens(&store, &conds).unwrap();
    assert_eq!(ctx.shape(), &[16, 16]);
    let shared = model.predict_shared(&store, &x, &steps, &ctx).unwrap();
    let mut rep = conds.clone();
    for c in &mut rep {
        let mut d = Vec::new();
        for _ in 0..3 {
            d.extend_from_slice(c.trajs.data());
        }
        c.trajs = Tensor::new(&[3 * 512, 2], d).unwrap();
    }
    let direct = predict(&model, &store, &x, &steps, &rep);
    for (a, b) in shared.data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unknown_event_is_contract_violation() {
    let (model, store) = DenoiserModel::init::<f64>(config(), 5).unwrap();
    let conds = vec![Condition { event: 7, trajs: Tensor::zeros(&[512, 2]) }];
    let err = model.context_tokens(&store, &conds).unwrap_err();
    assert!(matches!(err, NnError::Contract(_)));
}

#[test]
fn reference_widths_weight_count_is_fixed() {
    let events = |n: usize| (0..n).map(|i| format!("e{i}")).collect::<Vec<_>>();
    let (_, a) = DenoiserModel::init::<f32>(DenoiserConfig::full(30, 512, events(3)), 1).unwrap();
    let (_, b) = DenoiserModel::init::<f32>(DenoiserConfig::full(30, 512, events(3)), 2).unwrap();
    let (_, c) = DenoiserModel::init::<f32>(DenoiserConfig::full(30, 512, events(2)), 1).unwrap();
    assert_eq!(a.weight_count(), b.weight_count());
    assert_eq!(a.weight_count() - c.weight_count(), 256);
}
