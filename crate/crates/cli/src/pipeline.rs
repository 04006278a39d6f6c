//! Stage implementations. Output layout under the run directory:
//!
//! ```text
//! data/                      dataset (manifest.json, params.f32, traj_<event>.f32)
//! sobol/                     sobol.csv, study.json
//! models/<mode>.{json,bin}   checkpoints, <mode>.train.json loss curves
//! infer/<mode>/              samples.f32 (truths x samples x 30), manifest.json
//! eval/                      report.json, mi_<mode>.csv, ood.json
//! simulate/                  <event>.{f32,json,csv}
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use loadinv_core::baseline::{self, ResTfrConfig, ResTfrModel};
use loadinv_core::clm::{simulate_detailed, voltage_profile, FaultLabel, FaultSpec, N_OUT};
use loadinv_core::dataio::{self, Dataset, EventStats};
use loadinv_core::diffusion::{self, observation, TrainConfig};
use loadinv_core::evaluate::{self, EvalReport, InferManifest, OodResult, SampleSet};
use loadinv_core::sensitivity;
use loadinv_core::{seed, CoreError, ParamSpace};
use loadinv_nn::{checkpoint, DenoiserConfig, DenoiserModel, ParamStore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Profile, RunConfig};
use crate::runlog::{self, RunManifest};
use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Conditioned on the first configured event only.
    Cdi,
    /// Conditioned on every configured event.
    Jcdi,
    /// Supervised baseline on the first event.
    Restfr,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cdi => "cdi",
            Mode::Jcdi => "jcdi",
            Mode::Restfr => "restfr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cdi" => Some(Mode::Cdi),
            "jcdi" => Some(Mode::Jcdi),
            "restfr" => Some(Mode::Restfr),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: String,
    pub config_hash: String,
    /// A manifest with the same hash was found and nothing was recomputed.
    pub skipped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub truths: Vec<usize>,
    pub models: Vec<EvalReport>,
}

impl EvalOutput {
    pub fn model(&self, label: &str) -> Option<&EvalReport> {
        self.models.iter().find(|m| m.model == label)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OodOutput {
    pub cdi: Vec<OodResult>,
    pub jcdi: Vec<OodResult>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub force: bool,
    pub verbose: bool,
}

fn missing(what: &str, path: &Path) -> CliError {
    CliError::Core(CoreError::Data(format!("{what} not found at {}; run the producing stage first", path.display())))
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Self { cfg, force: false, verbose: true }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("runs/{stage}.json"))
    }

    /// Runs `body` unless a manifest with the same hash exists and every
    /// output is present.
    fn stage(&self, stage: &str, key: Value, outputs: &[PathBuf], body: impl FnOnce() -> Result<()>) -> Result<StageOutcome> {
        let m = runlog::new_manifest(stage, self.cfg.seed, key);
        let mp = self.manifest_path(stage);
        let current = runlog::read(&mp).is_some_and(|old| old.config_hash == m.config_hash);
        if current && !self.force && outputs.iter().all(|p| p.exists()) {
            self.log(format!("{stage}: up to date ({})", &m.config_hash[..12]));
            return Ok(StageOutcome { stage: stage.into(), config_hash: m.config_hash, skipped: true });
        }
        let t0 = Instant::now();
        // A stale manifest must not survive a failed rerun.
        let _ = std::fs::remove_file(&mp);
        body()?;
        runlog::write(&mp, &m)?;
        self.log(format!("{stage}: done in {:.1} s", t0.elapsed().as_secs_f64()));
        Ok(StageOutcome { stage: stage.into(), config_hash: m.config_hash, skipped: false })
    }

    pub fn run_manifest(&self, stage: &str) -> Option<RunManifest> {
        runlog::read(&self.manifest_path(stage))
    }

    fn hash_of(stage: &str, key: &Value) -> String {
        runlog::new_manifest(stage, 0, key.clone()).config_hash
    }

    // ------------------------------------------------------------ data

    fn data_key(&self) -> Value {
        json!({
            "seed": self.cfg.seed,
            "n_records": self.cfg.data.n_records,
            "events": self.cfg.events,
            "space": ParamSpace::standard(),
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.path("data")
    }

    pub fn gen_data(&self) -> Result<StageOutcome> {
        let dir = self.data_dir();
        self.stage("gen-data", self.data_key(), &[dir.join("manifest.json")], || {
            let data = dataio::generate(
                &ParamSpace::standard(),
                &self.cfg.events,
                self.cfg.data.n_records,
                self.cfg.seed,
                self.cfg.workers,
            )?;
            self.log(format!("gen-data: {} records, {} resampled draws", data.n(), data.manifest.resampled));
            data.write(&dir, true)?;
            Ok(())
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let dir = self.data_dir();
        if !dir.join("manifest.json").exists() {
            return Err(missing("dataset", &dir));
        }
        Ok(Dataset::read(&dir)?)
    }

    // ------------------------------------------------------------ sobol

    pub fn sobol(&self) -> Result<StageOutcome> {
        let dir = self.path("sobol");
        let key = json!({ "seed": self.cfg.seed, "n": self.cfg.sobol.n, "events": self.cfg.events });
        let outputs = [dir.join("sobol.csv"), dir.join("study.json")];
        self.stage("sobol", key, &outputs, || {
            let study = sensitivity::run_study(
                &ParamSpace::standard(),
                &self.cfg.events,
                self.cfg.sobol.n,
                seed::derive(self.cfg.seed, &[0x50b0]),
                self.cfg.workers,
            )?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(&outputs[0], study.to_csv())?;
            std::fs::write(&outputs[1], serde_json::to_vec_pretty(&study)?)?;
            for e in &study.events {
                let top: Vec<&str> =
                    study.ranking(&e.event).unwrap_or_default().iter().take(5).map(|&i| study.names[i].as_str()).collect();
                self.log(format!("sobol {}: top total indices {}", e.event, top.join(", ")));
            }
            Ok(())
        })
    }

    pub fn sobol_study(&self) -> Result<sensitivity::SobolStudy> {
        let p = self.path("sobol/study.json");
        let bytes = std::fs::read(&p).map_err(|_| missing("sobol study", &p))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    // ------------------------------------------------------------ training

    pub fn model_events(&self, mode: Mode) -> Vec<String> {
        let labels = self.cfg.event_labels();
        match mode {
            Mode::Jcdi => labels,
            Mode::Cdi | Mode::Restfr => labels[..1].to_vec(),
        }
    }

    pub fn denoiser_config(&self, mode: Mode) -> DenoiserConfig {
        let ev = self.model_events(mode);
        match self.cfg.profile {
            Profile::Full => DenoiserConfig::full(loadinv_core::N_PARAMS, N_OUT, ev),
            Profile::Desk => DenoiserConfig::desk(loadinv_core::N_PARAMS, N_OUT, ev),
        }
    }

    pub fn baseline_config(&self) -> ResTfrConfig {
        let mut c = match self.cfg.profile {
            Profile::Full => ResTfrConfig::full(loadinv_core::N_PARAMS, N_OUT),
            Profile::Desk => ResTfrConfig::desk(loadinv_core::N_PARAMS, N_OUT),
        };
        c.event = self.model_events(Mode::Restfr)[0].clone();
        c
    }

    fn train_config(&self, mode: Mode) -> TrainConfig {
        let mut t = if mode == Mode::Restfr { self.cfg.baseline.clone() } else { self.cfg.train.clone() };
        t.seed = seed::derive(self.cfg.seed, &[0x7a1, mode.tag(), t.seed]);
        t
    }

    fn train_key(&self, mode: Mode) -> Value {
        let arch = match mode {
            Mode::Restfr => serde_json::to_value(self.baseline_config()).expect("config serializes"),
            _ => serde_json::to_value(self.denoiser_config(mode)).expect("config serializes"),
        };
        json!({
            "data": Self::hash_of("gen-data", &self.data_key()),
            "mode": mode.as_str(),
            "arch": arch,
            "schedule": self.cfg.schedule,
            "train": self.train_config(mode),
            "seed": self.cfg.seed,
        })
    }

    pub fn checkpoint_stem(&self, mode: Mode) -> PathBuf {
        self.path(&format!("models/{}", mode.as_str()))
    }

    fn init_seed(&self, mode: Mode) -> u64 {
        seed::derive(self.cfg.seed, &[0x1417, mode.tag()])
    }

    pub fn train(&self, mode: Mode) -> Result<StageOutcome> {
        let stem = self.checkpoint_stem(mode);
        let outputs = [stem.with_extension("json"), stem.with_extension("bin"), stem.with_extension("train.json")];
        let stage = format!("train-{}", mode.as_str());
        self.stage(&stage, self.train_key(mode), &outputs, || {
            let data = self.dataset()?;
            let tc = self.train_config(mode);
            let log_epoch = |l: &diffusion::EpochLog| {
                self.log(format!(
                    "{stage} epoch {:3}: train {:.5} test {:.5} |g| {:.3}",
                    l.epoch, l.train_loss, l.test_loss, l.grad_norm
                ))
            };
            let (store, report, config) = match mode {
                Mode::Restfr => {
                    let (model, init) = ResTfrModel::init::<f32>(self.baseline_config(), self.init_seed(mode))?;
                    let (store, report) = baseline::train(&model, init, &data, &tc, log_epoch)?;
                    (store, report, serde_json::to_value(&model.config)?)
                }
                _ => {
                    let schedule = self.cfg.schedule.build()?;
                    let (model, init) = DenoiserModel::init::<f32>(self.denoiser_config(mode), self.init_seed(mode))?;
                    let (store, report) = diffusion::train(&model, init, &data, &schedule, &tc, log_epoch)?;
                    (store, report, serde_json::to_value(&model.config)?)
                }
            };
            let events = self.model_events(mode);
            let stats: Vec<&EventStats> =
                events.iter().map(|l| data.manifest.stats_for(l).expect("bound during training")).collect();
            let meta = json!({
                "mode": mode.as_str(),
                "config": config,
                "stats": stats,
                "space": data.manifest.space,
                "schedule": self.cfg.schedule,
                "seed": self.cfg.seed,
                "best_epoch": report.best_epoch,
                "best_test_loss": report.best_test_loss,
            });
            if let Some(d) = stem.parent() {
                std::fs::create_dir_all(d)?;
            }
            checkpoint::save(&stem, &store, meta)?;
            std::fs::write(&outputs[2], serde_json::to_vec_pretty(&report)?)?;
            Ok(())
        })
    }

    pub fn train_report(&self, mode: Mode) -> Result<diffusion::TrainReport> {
        let p = self.checkpoint_stem(mode).with_extension("train.json");
        let bytes = std::fs::read(&p).map_err(|_| missing("training report", &p))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Refuses checkpoints whose standardization differs from the dataset's.
    fn check_stats(meta: &Value, data: &Dataset, events: &[String]) -> Result<()> {
        let stored: Vec<EventStats> = serde_json::from_value(meta["stats"].clone())?;
        for (label, s) in events.iter().zip(&stored) {
            match data.manifest.stats_for(label) {
                Some(d) if d == s => {}
                _ => {
                    return Err(CliError::Core(CoreError::Contract(format!(
                        "checkpoint normalization for event {label} does not match the dataset; retrain or point at the matching data"
                    ))))
                }
            }
        }
        Ok(())
    }

    pub fn load_denoiser(&self, mode: Mode, data: &Dataset) -> Result<(DenoiserModel, ParamStore<f32>)> {
        let stem = self.checkpoint_stem(mode);
        if !stem.with_extension("json").exists() {
            return Err(missing("checkpoint", &stem.with_extension("json")));
        }
        let index = checkpoint::read_index(&stem)?;
        let config: DenoiserConfig = serde_json::from_value(index.meta["config"].clone())?;
        Self::check_stats(&index.meta, data, &config.events)?;
        let (model, mut store) = DenoiserModel::init::<f32>(config, 0)?;
        checkpoint::load(&stem, &mut store)?;
        Ok((model, store))
    }

    pub fn load_baseline(&self, data: &Dataset) -> Result<(ResTfrModel, ParamStore<f32>)> {
        let stem = self.checkpoint_stem(Mode::Restfr);
        if !stem.with_extension("json").exists() {
            return Err(missing("checkpoint", &stem.with_extension("json")));
        }
        let index = checkpoint::read_index(&stem)?;
        let config: ResTfrConfig = serde_json::from_value(index.meta["config"].clone())?;
        Self::check_stats(&index.meta, data, std::slice::from_ref(&config.event))?;
        let (model, mut store) = ResTfrModel::init::<f32>(config, 0)?;
        checkpoint::load(&stem, &mut store)?;
        Ok((model, store))
    }

    // ------------------------------------------------------------ inference

    fn infer_key(&self, mode: Mode) -> Value {
        json!({
            "model": Self::hash_of(&format!("train-{}", mode.as_str()), &self.train_key(mode)),
            "infer": self.cfg.infer,
            "seed": self.cfg.seed,
        })
    }

    pub fn infer_dir(&self, mode: Mode) -> PathBuf {
        self.path(&format!("infer/{}", mode.as_str()))
    }

    pub fn infer(&self, mode: Mode) -> Result<StageOutcome> {
        if mode == Mode::Restfr {
            return Err(CliError::Usage("infer draws posterior samples; use --mode cdi or jcdi".into()));
        }
        let dir = self.infer_dir(mode);
        let outputs = [dir.join("samples.f32"), dir.join("manifest.json")];
        self.stage(&format!("infer-{}", mode.as_str()), self.infer_key(mode), &outputs, || {
            let data = self.dataset()?;
            let (model, store) = self.load_denoiser(mode, &data)?;
            let schedule = self.cfg.schedule.build()?;
            let truths = evaluate::truth_indices(&data, self.cfg.infer.truths)?;
            let t0 = Instant::now();
            let n = truths.len();
            let progress = |k: usize| {
                if (k + 1).is_multiple_of(10) || k + 1 == n {
                    self.log(format!("infer-{}: truth {}/{n} ({:.0} s)", mode.as_str(), k + 1, t0.elapsed().as_secs_f64()));
                }
            };
            let (set, manifest) = evaluate::infer_truths(
                &model,
                &store,
                &schedule,
                &data,
                &truths,
                self.cfg.infer.samples,
                seed::derive(self.cfg.seed, &[0x1f3, mode.tag()]),
                self.cfg.infer.start,
                self.cfg.workers,
                progress,
            )?;
            self.log(format!("infer-{}: out-of-bounds fraction {:.4}", mode.as_str(), manifest.out_of_bounds_fraction));
            std::fs::create_dir_all(&dir)?;
            set.write(&outputs[0])?;
            std::fs::write(&outputs[1], serde_json::to_vec_pretty(&manifest)?)?;
            Ok(())
        })
    }

    pub fn samples(&self, mode: Mode) -> Result<(SampleSet, InferManifest)> {
        let dir = self.infer_dir(mode);
        let mp = dir.join("manifest.json");
        let bytes = std::fs::read(&mp).map_err(|_| missing("posterior samples", &mp))?;
        let m: InferManifest = serde_json::from_slice(&bytes)?;
        let set = SampleSet::read(&dir.join("samples.f32"), m.truths.len(), m.n_samples, m.n_params)?;
        Ok((set, m))
    }

    // ------------------------------------------------------------ evaluation

    fn eval_key(&self) -> Value {
        json!({
            "cdi": Self::hash_of("infer-cdi", &self.infer_key(Mode::Cdi)),
            "jcdi": Self::hash_of("infer-jcdi", &self.infer_key(Mode::Jcdi)),
            "restfr": Self::hash_of("train-restfr", &self.train_key(Mode::Restfr)),
            "events": self.cfg.events,
        })
    }

    /// Scores CDI, JCDI and the baseline on the inferred truths; with `ood`
    /// also re-simulates the posteriors under randomized scenarios.
    pub fn eval(&self, ood: bool) -> Result<Vec<StageOutcome>> {
        let dir = self.path("eval");
        let mut out = vec![self.stage("eval", self.eval_key(), &[dir.join("report.json")], || self.run_eval(&dir))?];
        if ood {
            let key = json!({ "eval": Self::hash_of("eval", &self.eval_key()), "ood": self.cfg.ood });
            out.push(self.stage("eval-ood", key, &[dir.join("ood.json")], || self.run_ood(&dir))?);
        }
        Ok(out)
    }

    fn run_eval(&self, dir: &Path) -> Result<()> {
        let data = self.dataset()?;
        let space = &data.manifest.space;
        let w = self.cfg.workers;
        let (cdi, cm) = self.samples(Mode::Cdi)?;
        let (jcdi, jm) = self.samples(Mode::Jcdi)?;
        if cm.truths != jm.truths {
            return Err(CliError::Core(CoreError::Contract("CDI and JCDI were inferred on different truths".into())));
        }
        let truths: Vec<Vec<f64>> = cm.truths.iter().map(|&i| data.theta(i)).collect();
        let mut models = Vec::new();
        for (label, set) in [("cdi", &cdi), ("jcdi", &jcdi)] {
            let per: Vec<Vec<Vec<f64>>> = (0..set.n_truths).map(|t| set.truth_samples(t)).collect();
            models.push(evaluate::evaluate(label, space, &truths, &per, &self.cfg.events, w)?);
            self.log(format!("eval: {label} scored"));
        }
        let (bm, bs) = self.load_baseline(&data)?;
        let be = data.manifest.event_index(&bm.config.event).expect("checked with the checkpoint");
        let stats = &data.manifest.stats[be];
        let mut point = Vec::with_capacity(cm.truths.len());
        for &i in &cm.truths {
            let obs = observation(stats, 0, data.traj_block(be, i))?;
            point.push(vec![baseline::estimate(&bm, &bs, space, &obs.trajs)?]);
        }
        models.push(evaluate::evaluate("restfr", space, &truths, &point, &self.cfg.events, w)?);
        std::fs::create_dir_all(dir)?;
        for m in &models {
            if let Some(mi) = &m.mi {
                std::fs::write(dir.join(format!("mi_{}.csv", m.model)), loadinv_core::metrics::matrix_csv(&m.names, mi))?;
            }
            let rm: Vec<String> = m.rmse.iter().map(|r| format!("{} {:.3e}", r.event, r.mean)).collect();
            self.log(format!("eval {}: MARPE {:.2}%  RMSE {}", m.model, m.marpe_mean, rm.join("  ")));
        }
        let report = EvalOutput { truths: cm.truths, models };
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
        Ok(())
    }

    fn run_ood(&self, dir: &Path) -> Result<()> {
        let data = self.dataset()?;
        let scenarios = evaluate::ood_scenarios(&self.cfg.ood);
        let mut res = Vec::new();
        for mode in [Mode::Cdi, Mode::Jcdi] {
            let (set, m) = self.samples(mode)?;
            let truths: Vec<Vec<f64>> = m.truths.iter().map(|&i| data.theta(i)).collect();
            res.push(evaluate::ood_eval(&set, &truths, &scenarios, &self.cfg.ood, self.cfg.workers)?);
        }
        let jcdi = res.pop().expect("two modes");
        let cdi = res.pop().expect("two modes");
        for (c, j) in cdi.iter().zip(&jcdi) {
            self.log(format!("ood {:<12} cdi {:.3e}  jcdi {:.3e}", c.name, c.mean_rmse, j.mean_rmse));
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ood.json"), serde_json::to_vec_pretty(&OodOutput { cdi, jcdi })?)?;
        Ok(())
    }

    pub fn eval_output(&self) -> Result<EvalOutput> {
        let p = self.path("eval/report.json");
        let bytes = std::fs::read(&p).map_err(|_| missing("evaluation report", &p))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn ood_output(&self) -> Result<OodOutput> {
        let p = self.path("eval/ood.json");
        let bytes = std::fs::read(&p).map_err(|_| missing("OOD report", &p))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    // ------------------------------------------------------------ simulate

    /// Simulates one parameter vector (defaults unless `params_file` is
    /// given) under a standard event and writes binary and CSV outputs.
    pub fn simulate(&self, event: &str, params_file: Option<&Path>) -> Result<PathBuf> {
        let label = FaultLabel::parse(event)
            .filter(|l| *l != FaultLabel::Custom)
            .ok_or_else(|| CliError::Usage(format!("unknown fault label {event:?}; expected ordinary, trip or stall")))?;
        let spec = self
            .cfg
            .events
            .iter()
            .find(|e| e.label == label)
            .cloned()
            .or_else(|| FaultSpec::standard(label))
            .expect("standard label");
        let space = ParamSpace::standard();
        let theta = match params_file {
            Some(p) => read_params(&space, p)?,
            None => space.defaults.clone(),
        };
        space.check(&theta)?;
        let profile = voltage_profile(&spec)?;
        let (traj, diag) = simulate_detailed(&theta, &profile)?;
        let dir = self.path("simulate");
        std::fs::create_dir_all(&dir)?;
        let stem = dir.join(event);
        dataio::export_trajectory(&stem, &traj)?;
        let mut csv = String::from("t,v,p,q\n");
        for j in 0..N_OUT {
            let t = j as f64 * loadinv_core::clm::DT_OUT;
            csv.push_str(&format!("{t:.3},{:.6},{:.6},{:.6}\n", profile.samples[j], traj.p[j], traj.q[j]));
        }
        std::fs::write(stem.with_extension("csv"), csv)?;
        self.log(format!(
            "simulate {event}: stalled {} restarted {} tripped {} p0 {:.4} p_end {:.4}",
            diag.stalled, diag.restarted, diag.tripped, traj.p[0], traj.p[N_OUT - 1]
        ));
        Ok(stem.with_extension("f32"))
    }
}

/// A JSON array of 30 values, or an object overriding defaults by name.
pub fn read_params(space: &ParamSpace, path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid params file: {e}")))?;
    match v {
        Value::Array(a) => {
            let theta: Vec<f64> = a.iter().filter_map(Value::as_f64).collect();
            if theta.len() != space.len() || a.len() != space.len() {
                return Err(CliError::Usage(format!("params file must hold {} numbers", space.len())));
            }
            Ok(theta)
        }
        Value::Object(m) => {
            let mut theta = space.defaults.clone();
            for (k, v) in m {
                let i = space.index(&k).ok_or_else(|| CliError::Usage(format!("unknown parameter {k}")))?;
                theta[i] = v.as_f64().ok_or_else(|| CliError::Usage(format!("parameter {k} is not a number")))?;
            }
            Ok(theta)
        }
        _ => Err(CliError::Usage("params file must be a JSON array or object".into())),
    }
}
