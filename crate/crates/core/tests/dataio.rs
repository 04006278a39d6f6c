use loadinv_core::clm::{simulate, voltage_profile, FaultSpec};
use loadinv_core::dataio::{self, ChannelStats, Dataset, TRAJ_LEN};
use loadinv_core::{CoreError, ParamSpace};
use proptest::prelude::*;

fn small(n: usize, seed: u64) -> Dataset {
    dataio::generate(&ParamSpace::standard(), &FaultSpec::standard_events(), n, seed, 1).unwrap()
}

#[test]
fn uniform_draw_moments() {
    let space = ParamSpace::standard();
    let n = 10_000;
    let draws = dataio::sample_params(&space, n, 13);
    for j in 0..space.len() {
        let (lo, hi) = (space.lower[j], space.upper[j]);
        let mean = draws.iter().map(|t| t[j]).sum::<f64>() / n as f64;
        let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5 * (lo + hi)).abs() <= 3.0 * se, "{}: {mean}", space.names[j]);
        assert!(draws.iter().all(|t| t[j] >= lo && t[j] <= hi));
    }
}

#[test]
fn records_replay_exactly() {
    let d = small(12, 5);
    let events = FaultSpec::standard_events();
    for i in [0, 7, 11] {
        let theta = d.theta(i);
        for (e, spec) in events.iter().enumerate() {
            let t = simulate(&theta, &voltage_profile(spec).unwrap()).unwrap();
            let mut block = Vec::new();
            dataio::traj_to_f32(&t, &mut block);
            assert_eq!(block, d.traj_block(e, i));
        }
    }
}

#[test]
fn generation_is_deterministic_across_workers() {
    let a = small(12, 9);
    let b = dataio::generate(&ParamSpace::standard(), &FaultSpec::standard_events(), 12, 9, 3).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.trajs, b.trajs);
    assert_eq!(a.manifest, b.manifest);
    assert_ne!(small(12, 10).params, a.params);
}

#[test]
fn write_read_roundtrip_and_overwrite_guard() {
    let dir = tempfile::tempdir().unwrap();
    let d = small(12, 3);
    d.write(dir.path(), false).unwrap();
    let back = Dataset::read(dir.path()).unwrap();
    assert_eq!(back.params, d.params);
    assert_eq!(back.trajs, d.trajs);
    assert_eq!(back.manifest, d.manifest);
    assert!(matches!(d.write(dir.path(), false), Err(CoreError::Data(_))));
    d.write(dir.path(), true).unwrap();
    let bytes = std::fs::metadata(dir.path().join("traj_stall.f32")).unwrap().len();
    assert_eq!(bytes as usize, 12 * TRAJ_LEN * 4);
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small(12, 3).write(dir.path(), false).unwrap();
    let path = dir.path().join("params.f32");
    let mut raw = std::fs::read(&path).unwrap();
    raw.truncate(raw.len() - 4);
    std::fs::write(&path, raw).unwrap();
    assert!(matches!(Dataset::read(dir.path()), Err(CoreError::Data(_))));
}

#[test]
fn split_and_stats_use_training_records_only() {
    let mut d = small(12, 4);
    assert_eq!((d.manifest.n_train, d.manifest.n_test), (10, 2));
    assert_eq!(d.train_indices(), 0..10);
    assert_eq!(d.test_indices(), 10..12);
    let before = d.manifest.stats.clone();
    // perturbing test records leaves the statistics unchanged
    for v in &mut d.trajs[0][10 * TRAJ_LEN..] {
        *v += 5.0;
    }
    let again = dataio::event_stats("ordinary", &d.trajs[0], 10);
    assert_eq!(again, before[0]);
    let p: Vec<f64> = (0..10).flat_map(|i| d.trajectory(0, i).p).collect();
    let s = ChannelStats::from_values(p.iter().copied());
    assert!((s.mean - before[0].p.mean).abs() < 1e-12);
}

#[test]
fn standardized_training_channels() {
    let d = small(18, 6);
    let st = &d.manifest.stats[2];
    let mut out = Vec::new();
    for i in d.train_indices() {
        st.standardize_channel_last(d.traj_block(2, i), &mut out);
    }
    let p: Vec<f64> = out.iter().step_by(2).map(|&v| v as f64).collect();
    let m = p.iter().sum::<f64>() / p.len() as f64;
    let var = p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (p.len() - 1) as f64;
    assert!(m.abs() < 1e-4 && (var - 1.0).abs() < 1e-3, "{m} {var}");
}

#[test]
fn floor_marks_constant_channels() {
    let s = ChannelStats::from_values(std::iter::repeat_n(0.7, 50));
    assert!(s.degenerate);
    assert_eq!(s.std, dataio::STD_FLOOR);
}

#[test]
fn too_few_records_and_repeated_labels() {
    let space = ParamSpace::standard();
    assert!(matches!(dataio::generate(&space, &[FaultSpec::ordinary()], 5, 0, 1), Err(CoreError::Config(_))));
    let twice = [FaultSpec::ordinary(), FaultSpec::ordinary()];
    assert!(matches!(dataio::generate(&space, &twice, 12, 0, 1), Err(CoreError::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_roundtrip(u in prop::collection::vec(-1.0f64..=1.0, 30)) {
        let s = ParamSpace::standard();
        let theta = s.denormalize(&u);
        let back = s.normalize(&theta);
        for j in 0..30 {
            prop_assert!((back[j] - u[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn rounded_draws_stay_inside(seed in any::<u64>(), i in 0usize..1000) {
        let s = ParamSpace::standard();
        let theta = dataio::record_params(&s, seed, i, 0);
        prop_assert!(s.check(&theta).is_ok());
        prop_assert!(theta.iter().all(|&v| (v as f32) as f64 == v));
    }
}
