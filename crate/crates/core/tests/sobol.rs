use loadinv_core::sensitivity::{
    ishigami, rank_by, saltelli_from_bases, saltelli_rows, saltelli_sample, saltelli_space, sobol_indices,
};
use loadinv_core::qmc::SobolSeq;
use loadinv_core::ParamSpace;
use proptest::prelude::*;

/// Closed-form Ishigami variance decomposition, written out independently
/// of the library helper.
fn ishigami_oracle(a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let pi4 = std::f64::consts::PI.powi(4);
    let d1 = b * pi4 / 5.0 + b * b * pi4 * pi4 / 50.0 + 0.5;
    let d2 = a * a / 8.0;
    let d13 = b * b * pi4 * pi4 * 8.0 / 225.0;
    let d = d1 + d2 + d13;
    ([d1 / d, d2 / d, 0.0], [(d1 + d13) / d, d2 / d, d13 / d])
}

#[test]
fn ishigami_oracle_values() {
    let (s1, st) = ishigami_oracle(7.0, 0.1);
    let (l1, lt) = loadinv_core::sensitivity::ishigami_indices(7.0, 0.1);
    for i in 0..3 {
        assert!((s1[i] - l1[i]).abs() < 1e-12 && (st[i] - lt[i]).abs() < 1e-12);
    }
    assert!((s1[0] - 0.3139).abs() < 1e-4 && (s1[1] - 0.4424).abs() < 1e-4);
    assert!((st[0] - 0.5576).abs() < 1e-4 && (st[2] - 0.2437).abs() < 1e-4);
}

#[test]
fn ishigami_at_n1024() {
    let pi = std::f64::consts::PI;
    let d = saltelli_sample(&[-pi; 3], &[pi; 3], 1024, 11);
    let y: Vec<f64> = d.rows.iter().map(|x| ishigami(x, 7.0, 0.1)).collect();
    let ix = sobol_indices(&d, &y, 3).unwrap();
    let (s1, st) = ishigami_oracle(7.0, 0.1);
    for i in 0..3 {
        assert!((ix.s1[i] - s1[i]).abs() <= 0.05, "S1[{i}] {} vs {}", ix.s1[i], s1[i]);
        assert!((ix.st[i] - st[i]).abs() <= 0.05, "ST[{i}] {} vs {}", ix.st[i], st[i]);
    }
}

#[test]
fn additive_linear_model() {
    let coef = [1.0, 2.0, 3.0];
    let d = saltelli_sample(&[0.0; 3], &[1.0; 3], 2048, 5);
    let y: Vec<f64> = d.rows.iter().map(|x| x.iter().zip(&coef).map(|(u, a)| u * a).sum()).collect();
    let ix = sobol_indices(&d, &y, 9).unwrap();
    let total: f64 = coef.iter().map(|a| a * a).sum();
    for i in 0..3 {
        let exact = coef[i] * coef[i] / total;
        assert!((ix.st[i] - exact).abs() <= ix.st_ci[i].max(0.02), "ST[{i}] {} vs {exact}", ix.st[i]);
        assert!((ix.s1[i] - exact).abs() <= ix.s1_ci[i].max(0.02), "S1[{i}] {} vs {exact}", ix.s1[i]);
    }
}

#[test]
fn constant_output_flags_zero_variance() {
    let d = saltelli_sample(&[0.0; 4], &[1.0; 4], 64, 1);
    let ix = sobol_indices(&d, &vec![2.5; d.rows.len()], 1).unwrap();
    assert!(ix.zero_variance);
    assert!(ix.s1.iter().chain(&ix.st).all(|&v| v == 0.0));
}

#[test]
fn output_length_checked() {
    let d = saltelli_sample(&[0.0; 2], &[1.0; 2], 8, 1);
    assert!(sobol_indices(&d, &[0.0; 3], 1).is_err());
}

#[test]
fn design_row_count() {
    assert_eq!(saltelli_rows(256, 30), 15_872);
    let d = saltelli_space(&ParamSpace::standard(), 8, 2);
    assert_eq!(d.rows.len(), 8 * 62);
    let s = ParamSpace::standard();
    assert!(d.rows.iter().all(|r| s.check(r).is_ok()));
}

/// Reference construction for k = 2, n = 4: A from the first two
/// coordinates of each sequence point, B from the last two.
#[test]
fn saltelli_reference_k2_n4() {
    let (lo, hi) = ([0.0, 10.0], [1.0, 30.0]);
    let seq = SobolSeq::scrambled(4, 42);
    let pts: Vec<Vec<f64>> = (0..4).map(|j| seq.point(j)).collect();
    let a: Vec<Vec<f64>> = pts.iter().map(|u| vec![u[0], 10.0 + 20.0 * u[1]]).collect();
    let b: Vec<Vec<f64>> = pts.iter().map(|u| vec![u[2], 10.0 + 20.0 * u[3]]).collect();
    let mut expect = Vec::new();
    expect.extend(a.iter().cloned());
    expect.extend(b.iter().cloned());
    for j in 0..4 {
        expect.push(vec![b[j][0], a[j][1]]);
    }
    for j in 0..4 {
        expect.push(vec![a[j][0], b[j][1]]);
    }
    for j in 0..4 {
        expect.push(vec![a[j][0], b[j][1]]);
    }
    for j in 0..4 {
        expect.push(vec![b[j][0], a[j][1]]);
    }
    let d = saltelli_sample(&lo, &hi, 4, 42);
    assert_eq!(d.rows, expect);
    assert_eq!(saltelli_from_bases(&a, &b).rows, expect);
}

#[test]
fn ishigami_across_seeds() {
    let pi = std::f64::consts::PI;
    let (s1, st) = ishigami_oracle(7.0, 0.1);
    for seed in 0..8 {
        let d = saltelli_sample(&[-pi; 3], &[pi; 3], 1024, seed);
        let y: Vec<f64> = d.rows.iter().map(|x| ishigami(x, 7.0, 0.1)).collect();
        let ix = sobol_indices(&d, &y, seed).unwrap();
        for i in 0..3 {
            assert!((ix.s1[i] - s1[i]).abs() <= 0.05 && (ix.st[i] - st[i]).abs() <= 0.05, "seed {seed} index {i}");
        }
    }
}

#[test]
fn ranking_ties_by_name() {
    let names: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
    assert_eq!(rank_by(&names, &[0.5, 0.5, 0.0]), vec![1, 0, 2]);
}

#[test]
fn doubling_n_shrinks_intervals() {
    let pi = std::f64::consts::PI;
    let width = |n: usize| {
        let d = saltelli_sample(&[-pi; 3], &[pi; 3], n, 21);
        let y: Vec<f64> = d.rows.iter().map(|x| ishigami(x, 7.0, 0.1)).collect();
        let ix = sobol_indices(&d, &y, 4).unwrap();
        ix.st_ci.iter().sum::<f64>()
    };
    assert!(width(2048) < width(512));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn index_consistency(c in prop::collection::vec(-2.0f64..2.0, 4), seed in 0u64..1000) {
        // mild interaction between the first two inputs
        let d = saltelli_sample(&[0.0; 4], &[1.0; 4], 512, seed);
        let y: Vec<f64> = d.rows.iter().map(|x| c[0] * x[0] + c[1] * x[1] + c[2] * x[0] * x[1] + c[3] * x[3].powi(2)).collect();
        let ix = sobol_indices(&d, &y, seed).unwrap();
        prop_assume!(!ix.zero_variance);
        for i in 0..4 {
            prop_assert!(ix.st[i] + ix.st_ci[i] + ix.s1_ci[i] >= ix.s1[i]);
        }
        prop_assert!(ix.s1.iter().sum::<f64>() <= 1.1);
    }
}
