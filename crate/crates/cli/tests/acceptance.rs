//! Acceptance gate: eight criteria, one PASS/FAIL line each.
//!
//! Criterion 6 and 7 read the desk run under `runs/desk` (config
//! `configs/desk.json`); missing stages are computed first, which takes
//! hours on a single core. Stages already present are reused.

use std::path::{Path, PathBuf};
use std::time::Instant;

use loadinv_cli::{Mode, Pipeline, RunConfig};
use loadinv_core::baseline::{ResTfrConfig, ResTfrModel};
use loadinv_core::clm::{
    der_a_power, electronic_update, fvl_rec, motor_d_stall_power, simulate, simulate_detailed, static_zip_power,
    voltage_profile, ElMode, ElState, FaultLabel, FaultSpec, LoadParams, Trajectory, VoltageProfile, N_FINE, N_OUT,
    V_D1, V_D2,
};
use loadinv_core::diffusion::{standard_normal_vec, Schedule};
use loadinv_core::metrics::{marpe, mutual_information, rmse, rpe};
use loadinv_core::sensitivity::{ishigami, ishigami_indices, run_study, saltelli_sample, sobol_indices};
use loadinv_core::{seed, ParamSpace};
use loadinv_nn::gradcheck::check_params;
use loadinv_nn::layers::{
    Conv3, EncoderLayer, EncoderSpec, LayerNorm, Linear, MultiHeadAttention, PatchConv, ResBlock, TrajectoryEncoder,
    TransformerEncoder, TransformerSpec,
};
use loadinv_nn::{Condition, DenoiserConfig, DenoiserModel, Graph, NodeId, ParamBuilder, ParamStore, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    checks: Vec<(String, bool)>,
}

impl Outcome {
    fn new() -> Self {
        Self { checks: Vec::new() }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

// ---------------------------------------------------------------- 1

fn exact_math() -> Outcome {
    const E: f64 = 1e-12;
    let mut o = Outcome::new();
    let space = ParamSpace::standard();
    let d = space.defaults.clone();
    let r = rpe(&space.upper, &space.lower, &space);
    o.check("RPE full range = 100", r.iter().all(|v| (v - 100.0).abs() <= E) && (marpe(&r) - 100.0).abs() <= E);
    o.check("RPE at truth = 0", rpe(&d, &d, &space).iter().all(|&v| v == 0.0));

    let base = Trajectory { p: (0..N_OUT).map(|i| (i as f64 * 0.02).cos()).collect(), q: vec![0.3; N_OUT] };
    let shifted = Trajectory {
        p: base.p.iter().map(|v| v + 0.0625).collect(),
        q: base.q.iter().map(|v| v + 0.0625).collect(),
    };
    o.check("RMSE offset sum", (rmse(&shifted, &base) - 0.125).abs() <= E && rmse(&base, &base) == 0.0);

    let mut theta = d.clone();
    theta[space.index("Fmd").unwrap()] = 0.2;
    theta[space.index("Rstall").unwrap()] = 0.1;
    let lp = LoadParams::from_slice(&theta).unwrap();
    let unit = LoadParams { fmd: 1.0, ..lp.clone() };
    let (p1, _) = motor_d_stall_power(&unit, 1.0);
    let quad = LoadParams { np2: 2.0, nq2: 2.0, rstall: 0.125, xstall: 0.0625, ..unit };
    let (pq, qq) = motor_d_stall_power(&quad, 0.5);
    o.check("stall power substitution", (p1 - 10.0).abs() <= E && (pq - 2.0).abs() <= E && (qq - 4.0).abs() <= E);

    let mid = 0.5 * (V_D1 + V_D2);
    o.check(
        "trip recovery substitution",
        (fvl_rec(V_D1, 0.3) - 1.0).abs() <= E && (fvl_rec(V_D2, 0.3) - 0.3).abs() <= E && (fvl_rec(mid, 0.75) - 0.875).abs() <= E,
    );
    let zip_ok = {
        let mut t = d.clone();
        t[space.index("P1c").unwrap()] = 0.0;
        t[space.index("P2c").unwrap()] = 1.0;
        let z = LoadParams::from_slice(&t).unwrap();
        (static_zip_power(&z, 0.5).0 - 0.25 * z.static_fraction()).abs() <= E
    };
    let der_ok = (der_a_power(&lp, 1.0).0 - lp.fder_a).abs() <= E;
    o.check("ZIP and DER substitutions", zip_ok && der_ok);

    let s = Schedule::standard();
    o.check("schedule endpoints", (s.beta[0] - 1e-4).abs() <= E && (s.beta[199] - 5e-3).abs() <= E && s.steps == 200);
    let mut rng = seed::rng(1, &[0xacc1]);
    let mut affine = true;
    for t in [1, 77, 200] {
        let x0 = standard_normal_vec(&mut rng, 30);
        let e = standard_normal_vec(&mut rng, 30);
        let zero = vec![0.0; 30];
        let full = s.q_sample(&x0, t, &e);
        let a = s.q_sample(&x0, t, &zero);
        let b = s.q_sample(&zero, t, &e);
        let ab = s.alpha_bar[t - 1];
        for i in 0..30 {
            affine &= (full[i] - a[i] - b[i]).abs() <= E;
            affine &= (full[i] - (ab.sqrt() * x0[i] + (1.0 - ab).sqrt() * e[i])).abs() <= E;
        }
    }
    o.check("q_sample affine identities", affine);
    o
}

// ---------------------------------------------------------------- 2

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn jitter(store: &mut ParamStore<f64>, rng: &mut impl Rng, scale: f64) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn project(g: &mut Graph<f64>, out: NodeId, dir: &Tensor<f64>) -> loadinv_nn::Result<NodeId> {
    let d = g.input(dir.clone());
    let m = g.mul(out, d)?;
    Ok(g.sum_all(m))
}

fn grad_err(
    store: &ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> loadinv_nn::Result<NodeId>,
) -> f64 {
    let r = check_params(store, H, 6, build).unwrap();
    assert!(r.checked > 0);
    r.max_rel_err
}

fn gradients() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = seed::rng(2, &[0xacc2]);
    let mut pb = ParamBuilder::new(2);
    let lin = Linear::new(&mut pb, "lin", 5, 8);
    let ln = LayerNorm::new(&mut pb, "ln", 8);
    let mha = MultiHeadAttention::new(&mut pb, "mha", 8, 2);
    let layer = EncoderLayer::new(&mut pb, "layer", 8, 12, 2);
    let stack = TransformerEncoder::new(&mut pb, "stack", &TransformerSpec { width: 8, ffn: 12, layers: 2, heads: 2 });
    let conv = Conv3::new(&mut pb, "conv", 3);
    let res = ResBlock::new(&mut pb, "res", 3);
    let patch = PatchConv::new(&mut pb, "patch", 3, 5, 4);
    let enc_spec = EncoderSpec { in_channels: 2, len: 64, stem: 3, down1: 4, down2: 6 };
    let enc = TrajectoryEncoder::new(&mut pb, "enc", &enc_spec);
    let mut store = pb.finish();
    jitter(&mut store, &mut rng, 0.3);

    let (batch, tokens) = (2, 3);
    let x5 = rand_tensor(&mut rng, &[batch * tokens, 5], 1.0);
    let x8 = rand_tensor(&mut rng, &[batch * tokens, 8], 1.0);
    let d8 = rand_tensor(&mut rng, &[batch * tokens, 8], 1.0);
    let x3 = rand_tensor(&mut rng, &[2 * 8, 3], 1.0);
    let d3 = rand_tensor(&mut rng, &[2 * 8, 3], 1.0);
    let d5 = rand_tensor(&mut rng, &[2 * 2, 5], 1.0);
    let xt = rand_tensor(&mut rng, &[2 * 64, 2], 1.0);
    let dt = rand_tensor(&mut rng, &[2 * enc_spec.tokens(), 6], 1.0);

    let mut worst = Vec::new();
    worst.push(("linear", grad_err(&store, |g, p| {
        let x = g.input(x5.clone());
        let y = lin.forward(g, p, x)?;
        project(g, y, &d8)
    })));
    worst.push(("layer_norm", grad_err(&store, |g, p| {
        let x = g.input(x8.clone());
        let y = ln.forward(g, p, x)?;
        let y = g.gelu(y);
        project(g, y, &d8)
    })));
    worst.push(("attention", grad_err(&store, |g, p| {
        let x = g.input(x8.clone());
        let y = mha.forward(g, p, x, batch, tokens)?;
        project(g, y, &d8)
    })));
    worst.push(("encoder_layer", grad_err(&store, |g, p| {
        let x = g.input(x8.clone());
        let y = layer.forward(g, p, x, batch, tokens)?;
        project(g, y, &d8)
    })));
    worst.push(("transformer", grad_err(&store, |g, p| {
        let x = g.input(x8.clone());
        let y = stack.forward(g, p, x, batch, tokens)?;
        project(g, y, &d8)
    })));
    worst.push(("conv3", grad_err(&store, |g, p| {
        let x = g.input(x3.clone());
        let y = conv.forward(g, p, x, 2, 8)?;
        project(g, y, &d3)
    })));
    worst.push(("resblock", grad_err(&store, |g, p| {
        let x = g.input(x3.clone());
        let y = res.forward(g, p, x, 2, 8)?;
        project(g, y, &d3)
    })));
    worst.push(("patch_conv", grad_err(&store, |g, p| {
        let x = g.input(x3.clone());
        let y = patch.forward(g, p, x, 2, 8)?;
        project(g, y, &d5)
    })));
    worst.push(("trajectory_encoder", grad_err(&store, |g, p| {
        let x = g.input(xt.clone());
        let y = enc.forward(g, p, x, 2)?;
        project(g, y, &dt)
    })));

    let dcfg = DenoiserConfig {
        n_params: 4,
        transformer: TransformerSpec { width: 8, ffn: 12, layers: 2, heads: 2 },
        encoder: EncoderSpec { in_channels: 2, len: 64, stem: 3, down1: 4, down2: 8 },
        events: vec!["ordinary".into(), "trip".into(), "stall".into()],
    };
    let (den, mut dstore) = DenoiserModel::init::<f64>(dcfg, 3).unwrap();
    jitter(&mut dstore, &mut rng, 0.2);
    let xn = rand_tensor(&mut rng, &[2, 4], 1.5);
    let eps = rand_tensor(&mut rng, &[2, 4], 1.5);
    let conds = vec![
        Condition { event: 2, trajs: rand_tensor(&mut rng, &[2 * 64, 2], 1.0) },
        Condition { event: 0, trajs: rand_tensor(&mut rng, &[2 * 64, 2], 1.0) },
    ];
    worst.push(("denoiser", grad_err(&dstore, |g, p| {
        let x = g.input(xn.clone());
        let pred = den.forward(g, p, x, &[3, 150], &conds)?;
        let t = g.input(eps.clone());
        g.mse(pred, t)
    })));

    let rcfg = ResTfrConfig {
        n_params: 30,
        transformer: TransformerSpec { width: 8, ffn: 12, layers: 2, heads: 2 },
        encoder: EncoderSpec { in_channels: 2, len: 64, stem: 3, down1: 4, down2: 8 },
        event: "ordinary".into(),
    };
    let (base, mut bstore) = ResTfrModel::init::<f64>(rcfg, 4).unwrap();
    jitter(&mut bstore, &mut rng, 0.2);
    let obs = rand_tensor(&mut rng, &[2 * 64, 2], 1.0);
    let target = rand_tensor(&mut rng, &[2, 30], 1.0);
    worst.push(("res_tfr", grad_err(&bstore, |g, p| {
        let x = g.input(obs.clone());
        let pred = base.forward(g, p, x, 2).expect("forward");
        let t = g.input(target.clone());
        g.mse(pred, t)
    })));

    for (name, e) in worst {
        o.check(format!("{name} rel err {e:.1e}"), e <= GRAD_TOL);
    }
    o
}

// ---------------------------------------------------------------- 3

fn oracles() -> Outcome {
    let mut o = Outcome::new();
    let pi = std::f64::consts::PI;
    let d = saltelli_sample(&[-pi; 3], &[pi; 3], 1024, 11);
    let y: Vec<f64> = d.rows.iter().map(|x| ishigami(x, 7.0, 0.1)).collect();
    let ix = sobol_indices(&d, &y, 3).unwrap();
    let (s1, st) = ishigami_indices(7.0, 0.1);
    let err = (0..3).map(|i| (ix.s1[i] - s1[i]).abs().max((ix.st[i] - st[i]).abs())).fold(0.0, f64::max);
    o.check(format!("Ishigami max err {err:.3}"), err <= 0.05);

    let mut rng = seed::rng(3, &[1]);
    let (mut x, mut yv) = (Vec::new(), Vec::new());
    for _ in 0..5000 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        x.push(a);
        yv.push(0.9 * a + (1.0f64 - 0.81).sqrt() * b);
    }
    let mi = mutual_information(&x, &yv).nats;
    o.check(format!("KSG MI {mi:.3} vs 0.830"), (mi - 0.830).abs() <= 0.1);

    let s = Schedule::standard();
    let n = 100_000;
    let mut ok = true;
    for t in [1, 100, 200] {
        let ab = s.alpha_bar[t - 1];
        let eps = standard_normal_vec(&mut seed::rng(17, &[t as u64]), n);
        let xt = s.q_sample(&vec![0.6; n], t, &eps);
        let m = xt.iter().sum::<f64>() / n as f64;
        let v = xt.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (n - 1) as f64;
        ok &= (m - ab.sqrt() * 0.6).abs() <= 3.0 * ((1.0 - ab) / n as f64).sqrt();
        ok &= (v - (1.0 - ab)).abs() <= 3.0 * (1.0 - ab) * (2.0 / (n - 1) as f64).sqrt();
    }
    o.check("q_sample moments within 3 SE", ok);
    o
}

// ---------------------------------------------------------------- 4

fn tail(x: &[f64]) -> f64 {
    x[N_OUT - 50..].iter().sum::<f64>() / 50.0
}

fn physics() -> Outcome {
    let mut o = Outcome::new();
    let space = ParamSpace::standard();
    let flat = VoltageProfile { samples: vec![1.0; N_OUT], fine: vec![1.0; N_FINE] };
    let mut rng = seed::rng(4, &[0xacc4]);
    let mut thetas = vec![space.defaults.clone()];
    thetas.extend((0..20).map(|_| space.sample_uniform(&mut rng)));
    let max_dev = |x: &[f64]| x.iter().map(|v| (v - x[0]).abs()).fold(0.0, f64::max);
    let dev = thetas
        .iter()
        .map(|th| {
            let t = simulate(th, &flat).unwrap();
            max_dev(&t.p).max(max_dev(&t.q))
        })
        .fold(0.0, f64::max);
    o.check(format!("equilibrium dev {dev:.1e}"), dev <= 1e-9);

    let stall = voltage_profile(&FaultSpec::stall()).unwrap();
    let ord = voltage_profile(&FaultSpec::ordinary()).unwrap();
    let trip = voltage_profile(&FaultSpec::trip()).unwrap();
    let mut dich = true;
    for th in &thetas {
        dich &= simulate_detailed(th, &stall).unwrap().1.stalled;
        dich &= !simulate_detailed(th, &ord).unwrap().1.stalled;
    }
    o.check("stall on stall event, never on ordinary", dich);

    let d = &space.defaults;
    let (ts, _) = simulate_detailed(d, &stall).unwrap();
    o.check("post-stall |p| rises", tail(&ts.p).abs() > ts.p[0].abs());
    let (tt, diag) = simulate_detailed(d, &trip).unwrap();
    o.check("post-trip p falls", tail(&tt.p) < tt.p[0] && diag.tripped);

    let formula = |vm: f64, f: f64| ((vm - V_D2) + f * (V_D1 - vm)) / (V_D1 - V_D2);
    let mut rec = true;
    for (vm, f) in [(V_D1 - 1e-9, 0.4), (V_D2, 0.4), (0.6, 0.75)] {
        let mut st = ElState::nominal();
        let mut v: f64 = 1.0;
        while v > vm {
            v = (v - 0.01).max(vm);
            electronic_update(&mut st, v, f);
        }
        while v < 1.0 {
            v = (v + 0.01).min(1.0);
            electronic_update(&mut st, v, f);
        }
        rec &= st.mode == ElMode::Recovered && (st.frac - formula(vm, f)).abs() < 1e-12;
    }
    o.check("trip recovery on 3 boundary cases", rec);
    o
}

// ---------------------------------------------------------------- 5

fn sensitivity() -> Outcome {
    let mut o = Outcome::new();
    let space = ParamSpace::standard();
    let events = FaultSpec::standard_events();
    let study = run_study(&space, &events, 512, seed::derive(0, &[0x50b0]), 1).unwrap();
    let st = |ev: &str, name: &str| study.event(ev).unwrap().st_max(space.index(name).unwrap());
    for name in ["Rstall", "Xstall"] {
        let (s, r) = (st("stall", name), st("ordinary", name));
        o.check(format!("ST({name}) stall {s:.3} vs ordinary {r:.4}"), s >= 5.0 * r);
    }
    let (t, r) = (st("trip", "frcel"), st("ordinary", "frcel"));
    o.check(format!("ST(frcel) trip {t:.3} vs ordinary {r:.4}"), t >= 5.0 * r);
    o
}

// ---------------------------------------------------------------- 6, 7

fn desk_pipeline() -> Pipeline {
    let root = workspace_root();
    let mut cfg = RunConfig::load(&root.join("configs/desk.json")).unwrap();
    cfg.out = root.join(&cfg.out);
    let mut p = Pipeline::new(cfg);
    p.verbose = std::env::var_os("LOADINV_VERBOSE").is_some();
    p
}

fn ensure_desk_run(p: &Pipeline) {
    p.gen_data().unwrap();
    for m in [Mode::Cdi, Mode::Jcdi, Mode::Restfr] {
        p.train(m).unwrap();
    }
    p.infer(Mode::Jcdi).unwrap();
    p.infer(Mode::Cdi).unwrap();
    p.eval(true).unwrap();
}

fn end_to_end(p: &Pipeline) -> Outcome {
    let mut o = Outcome::new();
    let report = p.eval_output().unwrap();
    let (cdi, jcdi, res) = (report.model("cdi").unwrap(), report.model("jcdi").unwrap(), report.model("restfr").unwrap());
    o.check(
        format!("{} truths x {} samples", jcdi.n_truths, jcdi.n_samples),
        jcdi.n_truths == 200 && jcdi.n_samples == 200 && cdi.n_truths == 200 && cdi.n_samples == 200,
    );
    o.check(
        format!("(a) MARPE jcdi {:.2} vs cdi {:.2}", jcdi.marpe_mean, cdi.marpe_mean),
        jcdi.marpe_mean <= 0.7 * cdi.marpe_mean,
    );
    for name in ["Rstall", "Xstall"] {
        let (j, c) = (jcdi.posterior_std_of(name).unwrap(), cdi.posterior_std_of(name).unwrap());
        o.check(format!("(b) std {name} jcdi {j:.4} vs cdi {c:.4}"), j <= 0.5 * c);
    }
    let r = |m: &loadinv_core::evaluate::EvalReport, e: &str| m.rmse_for(e).unwrap();
    let (js, cs, jo) = (r(jcdi, "stall"), r(cdi, "stall"), r(jcdi, "ordinary"));
    o.check(format!("(c) stall RMSE jcdi {js:.3e} vs cdi {cs:.3e}"), js <= 0.1 * cs);
    o.check(format!("(c) jcdi stall {js:.3e} vs its ordinary {jo:.3e}"), js <= 10.0 * jo);
    let (co, ro) = (r(cdi, "ordinary"), r(res, "ordinary"));
    o.check(format!("(d) ordinary RMSE cdi {co:.3e} < restfr {ro:.3e}"), co < ro);
    o.check(
        format!("(d) MARPE restfr {:.2} < cdi {:.2}", res.marpe_mean, cdi.marpe_mean),
        res.marpe_mean < cdi.marpe_mean,
    );
    o
}

fn ood(p: &Pipeline) -> Outcome {
    let mut o = Outcome::new();
    let out = p.ood_output().unwrap();
    let jref = out.jcdi.iter().find(|r| r.name == "ordinary").unwrap().mean_rmse;
    let ords: Vec<_> = out.jcdi.iter().filter(|r| r.class == FaultLabel::Ordinary && r.name != "ordinary").collect();
    let worst = ords.iter().map(|r| r.mean_rmse).fold(0.0, f64::max);
    o.check(
        format!("{} ordinary-class events, worst jcdi {worst:.3e} vs reference {jref:.3e}", ords.len()),
        ords.len() == 20 && worst <= 3.0 * jref,
    );
    let best = out
        .cdi
        .iter()
        .filter(|r| r.class == FaultLabel::Stall && r.name != "stall")
        .filter_map(|c| out.jcdi.iter().find(|j| j.name == c.name).map(|j| c.mean_rmse / j.mean_rmse))
        .fold(0.0, f64::max);
    o.check(format!("stall-class max cdi/jcdi RMSE ratio {best:.1}"), best >= 10.0);
    o
}

// ---------------------------------------------------------------- 8

fn repro_config(out: &Path, workers: usize) -> RunConfig {
    let text = format!(
        r#"{{ "profile": "desk", "seed": 21, "workers": {workers}, "out": {out:?},
              "data": {{ "n_records": 60 }},
              "train": {{ "batch_size": 16, "lr": 1e-3, "max_epochs": 2 }},
              "baseline": {{ "batch_size": 16, "lr": 1e-3, "max_epochs": 2 }},
              "infer": {{ "truths": 3, "samples": 4 }} }}"#
    );
    RunConfig::from_json(&text).unwrap()
}

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["data", "models", "infer"] {
        let mut stack = vec![dir.join(sub)];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
                }
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let mut o = Outcome::new();
    let runs: Vec<_> = [1, 2]
        .iter()
        .map(|&w| {
            let dir = tempfile::tempdir().unwrap();
            let mut p = Pipeline::new(repro_config(dir.path(), w));
            p.verbose = false;
            p.gen_data().unwrap();
            for m in [Mode::Cdi, Mode::Jcdi, Mode::Restfr] {
                p.train(m).unwrap();
            }
            p.infer(Mode::Cdi).unwrap();
            p.infer(Mode::Jcdi).unwrap();
            let a = artifacts(dir.path());
            (dir, a)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    o.check(format!("{} artifact files", a.len()), a.len() >= 12);
    let names_match = a.iter().map(|x| &x.0).eq(b.iter().map(|x| &x.0));
    let differing: Vec<String> =
        a.iter().zip(b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.display().to_string()).collect();
    o.check(format!("bit-identical across runs (differing: {differing:?})"), names_match && differing.is_empty());
    o
}

// ----------------------------------------------------------------

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut all = true;
    let mut run = |n: usize, title: &str, f: &dyn Fn() -> Outcome| {
        if !want(n) {
            return;
        }
        let t0 = Instant::now();
        let out = f();
        let failed: Vec<&str> = out.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let status = if out.passed() { "PASS" } else { "FAIL" };
        let detail: Vec<&str> = out.checks.iter().map(|c| c.0.as_str()).collect();
        println!("criterion {n} {status} {title} ({:.0} s): {}", t0.elapsed().as_secs_f64(), detail.join("; "));
        if !failed.is_empty() {
            println!("    failed: {}", failed.join("; "));
        }
        all &= out.passed();
    };
    run(1, "exact math", &exact_math);
    run(2, "gradients", &gradients);
    run(3, "oracles", &oracles);
    run(4, "simulator physics", &physics);
    run(5, "sensitivity contrast", &sensitivity);
    if want(6) || want(7) {
        let p = desk_pipeline();
        ensure_desk_run(&p);
        run(6, "desk JCDI vs CDI", &|| end_to_end(&p));
        run(7, "out-of-distribution faults", &|| ood(&p));
    }
    run(8, "reproducibility", &reproducibility);
    if !all {
        std::process::exit(1);
    }
}
