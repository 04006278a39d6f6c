use loadinv_nn::{clip_global_norm, Adam, ParamStore, Tensor};

#[test]
fn quadratic_converges_monotonically_after_warmup() {
    let target = [0.7, -1.3, 0.25, 2.0];
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::zeros(&[4]));
    let mut opt = Adam::new(&store, 0.01);
    let mut dists = Vec::new();
    for _ in 0..200 {
        let w = store.get(id).data().to_vec();
        let g: Vec<f64> = w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        opt.update(&mut store, &[Tensor::new(&[4], g).unwrap()]);
        let d: f64 = store.get(id).data().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        dists.push(d);
    }
    let start = dists[0];
    // the distance shrinks step over step until it reaches the noise floor
    let warm = 10;
    for w in dists[warm..].windows(2) {
        assert!(w[1] <= w[0] + 1e-9 , "{} -> {}", w[0], w[1]);
    }
    assert!(*dists.last().unwrap() < 0.25 * start);
}

#[test]
fn moments_match_weight_shapes() {
    let mut store = ParamStore::<f32>::new();
    store.add("a", Tensor::zeros(&[3, 2]));
    store.add("b", Tensor::zeros(&[5]));
    let opt = Adam::new(&store, 1e-4);
    let (m, v) = opt.moments();
    for ((mm, vv), t) in m.iter().zip(v).zip(store.tensors()) {
        assert_eq!(mm.shape(), t.shape());
        assert_eq!(vv.shape(), t.shape());
    }
}

#[test]
fn clipping_preserves_direction() {
    let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
    let n = clip_global_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[0].data()[1] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::<f64>::from_f64(&[2], &[0.3, 0.4]).unwrap()];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data(), &[0.3, 0.4]);
}
