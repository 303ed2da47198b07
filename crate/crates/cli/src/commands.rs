use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use strokediff::apps::{self, MixMode, DEFAULT_OMEGA};
use strokediff::diffusion::{SamplerKind, SamplerSpec};
use strokediff::eval::{self, frechet_distance, train_toy_classifier, ClassifierConfig, MetricReport};
use strokediff::io::{self, PreprocessSpec, SketchFormat};
use strokediff::model::ConditionMode;
use strokediff::render::render_svg;
use strokediff::schedule::ScheduleConfig;
use strokediff::sketch::{preprocess, Sketch};
use strokediff::toy::{generate_toy_dataset, ToyKind};
use strokediff::train::{fit_with, load_checkpoint, save_checkpoint, TrainConfig};
use strokediff::{Model, Real};
use strokediff_service::ServiceConfig;

use crate::CliError;

const SVG_CELL: f64 = 96.0;

/// Where a subcommand writes, plus the snapshot of what it resolved.
pub struct Run {
    pub command: &'static str,
    pub out_dir: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Domain(format!("cannot create {}: {e}", self.out_dir.display())))
    }

    /// Writes `<command>.resolved.json` next to the outputs.
    fn snapshot<C: Serialize>(&self, config: &C, derived: Value) -> Result<(), CliError> {
        self.prepare()?;
        let snap = json!({ "command": self.command, "config": config, "derived": derived });
        let bytes = serde_json::to_vec_pretty(&snap).map_err(|e| CliError::Domain(e.to_string()))?;
        io::write_atomic(&self.path(&format!("{}.resolved.json", self.command)), &bytes)?;
        Ok(())
    }

    /// Writes `<stem>.jsonl` and `<stem>.svg`.
    fn write_sketches(&self, stem: &str, sketches: &[Sketch]) -> Result<(), CliError> {
        io::write_sketch_file(&self.path(&format!("{stem}.jsonl")), sketches)?;
        io::write_atomic(&self.path(&format!("{stem}.svg")), render_svg(sketches, SVG_CELL).as_bytes())?;
        log::info!("wrote {} sketches to {}", sketches.len(), self.path(stem).display());
        Ok(())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing required --{what}")))
}

fn load_model(ckpt: &Option<PathBuf>) -> Result<Model, CliError> {
    let path = required(ckpt, "ckpt")?;
    Ok(load_checkpoint::<Real>(path)?.model)
}

/// Reads a sketch file, optionally normalizing each sketch to the unit box
/// at a fixed point count.
fn read_sketches(path: &Option<PathBuf>, what: &str, resample: Option<usize>) -> Result<Vec<Sketch>, CliError> {
    let sketches = io::parse_sketch_file(required(path, what)?, SketchFormat::Stroke3Jsonl)?;
    if sketches.is_empty() {
        return Err(CliError::Domain(format!("--{what} holds no sketches")));
    }
    match resample {
        None => Ok(sketches),
        Some(n) => Ok(sketches.iter().map(|s| preprocess(s, n, 1.0)).collect::<strokediff::Result<_>>()?),
    }
}

fn sampler_spec(model: &Model, kind: SamplerKind, steps: Option<usize>) -> SamplerSpec {
    let t = model.schedule().steps();
    match kind {
        SamplerKind::Ddpm => SamplerSpec::ddpm(model.schedule()),
        SamplerKind::Ddim => SamplerSpec::ddim(steps.unwrap_or(50).min(t)),
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub spec: ToyKind,
    pub n: usize,
    pub len: usize,
    /// Std of Gaussian jitter added to every point before normalization.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { spec: ToyKind::Circles, n: 500, len: 32, noise: 0.0, seed: 0 }
    }
}

pub fn gen_data(run: &Run, c: &GenDataConfig) -> Result<(), CliError> {
    let data = generate_toy_dataset(c.spec, c.n, c.len, c.noise, c.seed)?;
    run.snapshot(c, json!({ "train": data.train.len(), "val": data.val.len(), "test": data.test.len() }))?;
    let spec = PreprocessSpec { target_len: c.len, scale_box: 1.0 };
    let generator = serde_json::to_value(c.spec).ok().and_then(|v| v.as_str().map(String::from));
    io::save_dataset(&run.out_dir, &data, spec, c.seed, generator)?;
    log::info!("dataset written to {}", run.out_dir.display());
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// Dataset directory written by `gen-data`.
    pub data: Option<PathBuf>,
    /// Diffusion length; rebuilds the linear schedule in `train.model.schedule`.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Resample training sketches to lengths drawn from this inclusive range.
    pub vary_lengths: Option<(usize, usize)>,
    pub train: TrainConfig,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        let mut train = TrainConfig { batch_size: 32, ..TrainConfig::default() };
        train.model.schedule = ScheduleConfig::linear(100);
        Self { data: None, steps: 100, vary_lengths: None, train }
    }
}

impl TrainCmdConfig {
    /// Fills the derived schedule so the snapshot shows what actually trains.
    pub fn finish(mut self) -> Self {
        let sigma = self.train.model.schedule.sigma_scale;
        self.train.model.schedule = ScheduleConfig { sigma_scale: sigma, ..ScheduleConfig::linear(self.steps) };
        self
    }
}

pub fn train(run: &Run, c: &TrainCmdConfig) -> Result<(), CliError> {
    let dir = required(&c.data, "data")?;
    let (mut data, _) = io::load_dataset(dir)?;
    if let Some((lo, hi)) = c.vary_lengths {
        data.train = data.train.with_varied_lengths(lo, hi, c.train.seed)?;
    }
    run.snapshot(c, json!({ "train_items": data.train.len(), "val_items": data.val.len() }))?;
    let last_path = run.path("model.ckpt");
    let out = fit_with::<Real>(&data, &c.train, |rec, ckpt| {
        log::info!("epoch {} train {:.5} val {:.5}", rec.epoch, rec.train_loss, rec.val_loss);
        save_checkpoint(ckpt, &last_path)
    })?;
    save_checkpoint(&out.last, &last_path)?;
    save_checkpoint(&out.best, &run.path("best.ckpt"))?;
    let mut csv = String::from("epoch,lr,train_loss,val_loss\n");
    for r in &out.last.history {
        let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_loss);
    }
    io::write_atomic(&run.path("history.csv"), csv.as_bytes())?;
    Ok(())
}

// ------------------------------------------------------------------ sample

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub ckpt: Option<PathBuf>,
    pub n: usize,
    /// Points per sample; the training length when unset.
    pub length: Option<usize>,
    pub sampler: SamplerKind,
    /// DDIM steps (default 50, at most T). DDPM always runs all T.
    pub steps: Option<usize>,
    /// Sketch file for implicit conditioning; each condition yields `n` samples.
    pub condition: Option<PathBuf>,
    /// Start step for implicit conditioning as a fraction of T.
    pub tc_frac: f64,
    pub resample: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            ckpt: None,
            n: 16,
            length: None,
            sampler: SamplerKind::Ddpm,
            steps: None,
            condition: None,
            tc_frac: 0.2,
            resample: None,
            seed: 0,
        }
    }
}

pub fn sample(run: &Run, c: &SampleConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    if c.condition.is_some() {
        let conds = read_sketches(&c.condition, "condition", c.resample)?;
        let t_c = model.schedule().step_at_fraction(c.tc_frac)?;
        run.snapshot(c, json!({ "T": model.schedule().steps(), "t_c": t_c }))?;
        let repeated: Vec<Sketch> = conds.iter().flat_map(|s| std::iter::repeat_n(s.clone(), c.n)).collect();
        let out = apps::implicit_condition_batch(&model, &repeated, t_c, &mut rng)?;
        return run.write_sketches("samples", &out);
    }
    if model.mode() != ConditionMode::None {
        return Err(CliError::Domain(format!(
            "unconditional sampling needs a mode 'none' model, this one is {}; pass --condition",
            model.mode()
        )));
    }
    let spec = sampler_spec(&model, c.sampler, c.steps);
    spec.validate(model.schedule())?;
    let len = c.length.unwrap_or(model.train_len());
    run.snapshot(c, json!({ "T": model.schedule().steps(), "sampler": spec, "length": len }))?;
    let out = model.sample(c.n, len, spec, None, &mut rng)?;
    run.write_sketches("samples", &out)
}

// ------------------------------------------------------------- reconstruct

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub length_factor: f64,
    pub sampler: SamplerKind,
    pub steps: Option<usize>,
    pub resample: Option<usize>,
    pub seed: u64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            ckpt: None,
            input: None,
            length_factor: 1.0,
            sampler: SamplerKind::Ddim,
            steps: Some(50),
            resample: None,
            seed: 0,
        }
    }
}

pub fn reconstruct(run: &Run, c: &ReconstructConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let input = read_sketches(&c.input, "input", c.resample)?;
    let spec = sampler_spec(&model, c.sampler, c.steps);
    spec.validate(model.schedule())?;
    run.snapshot(c, json!({ "T": model.schedule().steps(), "sampler": spec }))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let out = apps::reconstruct_batch(&model, &input, c.length_factor, spec, &mut rng)?;
    run.write_sketches("reconstructed", &out)
}

// -------------------------------------------------------------------- heal

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealConfig {
    pub ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
    /// Healing start step as a fraction of T.
    pub th_frac: f64,
    pub resample: Option<usize>,
    pub seed: u64,
}

impl Default for HealConfig {
    fn default() -> Self {
        Self { ckpt: None, input: None, th_frac: 0.2, resample: None, seed: 0 }
    }
}

pub fn heal(run: &Run, c: &HealConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let input = read_sketches(&c.input, "input", c.resample)?;
    let t_h = model.schedule().step_at_fraction(c.th_frac)?;
    run.snapshot(c, json!({ "T": model.schedule().steps(), "t_h": t_h }))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let out = apps::implicit_condition_batch(&model, &input, t_h, &mut rng)?;
    run.write_sketches("healed", &out)
}

// --------------------------------------------------------------------- mix

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub ckpt: Option<PathBuf>,
    pub base: Option<PathBuf>,
    /// Paired with `base` line by line, or a single sketch used for every base.
    /// Defaults to the base itself for latent mixing.
    pub reference: Option<PathBuf>,
    pub mode: MixMode,
    /// Latent weight of the reference.
    pub delta: f64,
    pub omega: usize,
    /// DDIM steps for latent mixing.
    pub steps: usize,
    pub resample: Option<usize>,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            ckpt: None,
            base: None,
            reference: None,
            mode: MixMode::LatentDdim,
            delta: 0.5,
            omega: DEFAULT_OMEGA,
            steps: 50,
            resample: None,
            seed: 0,
        }
    }
}

pub fn mix(run: &Run, c: &MixConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let bases = read_sketches(&c.base, "base", c.resample)?;
    let refs = match (&c.reference, c.mode) {
        (Some(_), _) => read_sketches(&c.reference, "reference", c.resample)?,
        (None, MixMode::LatentDdim) => bases.clone(),
        (None, MixMode::Ilvr) => return Err(CliError::Usage("low-pass mixing needs --reference".into())),
    };
    if refs.len() != 1 && refs.len() != bases.len() {
        return Err(CliError::Domain(format!("{} bases but {} references", bases.len(), refs.len())));
    }
    let steps = c.steps.min(model.schedule().steps());
    run.snapshot(c, json!({ "T": model.schedule().steps(), "ddim_steps": steps }))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let out = bases
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = &refs[i.min(refs.len() - 1)];
            match c.mode {
                MixMode::LatentDdim => apps::interpolate_latent(&model, b, r, c.delta, steps),
                MixMode::Ilvr => apps::ilvr_mix(&model, b, r, c.omega, &mut rng),
            }
        })
        .collect::<strokediff::Result<Vec<_>>>()?;
    run.write_sketches("mixed", &out)
}

// --------------------------------------------------------------- vectorize

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorizeConfig {
    pub ckpt: Option<PathBuf>,
    /// Sketch file; each sketch is turned into the point set the encoder sees.
    pub input: Option<PathBuf>,
    pub n: usize,
    pub length: Option<usize>,
    pub seed: u64,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        Self { ckpt: None, input: None, n: 4, length: None, seed: 0 }
    }
}

pub fn vectorize(run: &Run, c: &VectorizeConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let input = read_sketches(&c.input, "input", None)?;
    run.snapshot(c, json!({ "length": c.length.unwrap_or(model.train_len()) }))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut out = Vec::new();
    for s in &input {
        let points = model.perceive(s)?;
        out.extend(apps::vectorize(&model, &points, c.n, c.length, &mut rng)?);
    }
    run.write_sketches("vectorized", &out)
}

// ---------------------------------------------------------------- abstract

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstractConfig {
    pub ckpt: Option<PathBuf>,
    /// Reverse variance is `k * beta_tilde`.
    pub k: f64,
    pub n: usize,
    pub length: Option<usize>,
    pub seed: u64,
}

impl Default for AbstractConfig {
    fn default() -> Self {
        Self { ckpt: None, k: 0.0, n: 16, length: None, seed: 0 }
    }
}

pub fn abstract_(run: &Run, c: &AbstractConfig) -> Result<(), CliError> {
    let model = load_model(&c.ckpt)?;
    let len = c.length.unwrap_or(model.train_len());
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let out = apps::abstract_sample(&model, c.k, c.n, len, &mut rng)?;
    let energy = eval::abstraction_energy(&out)?;
    run.snapshot(c, json!({ "length": len, "energy": energy }))?;
    run.write_sketches("abstract", &out)
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Test items used; all when unset.
    pub max_items: Option<usize>,
    /// Length factors of the reconstruction curve (sequence-encoder models).
    pub factors: Vec<f64>,
    pub sampler: SamplerKind,
    pub steps: Option<usize>,
    /// Implicit-conditioning start points for class consistency (labelled data).
    pub tc_fracs: Vec<f64>,
    pub n_per_item: usize,
    /// Unconditional samples for the feature distance and abstraction energy.
    pub n_samples: usize,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ckpt: None,
            data: None,
            max_items: Some(100),
            factors: vec![1.0, 1.5, 2.0],
            sampler: SamplerKind::Ddpm,
            steps: None,
            tc_fracs: vec![0.0, 0.2, 1.0],
            n_per_item: 4,
            n_samples: 64,
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

pub fn evaluate(run: &Run, c: &EvalConfig) -> Result<(), CliError> {
    let ckpt_path = required(&c.ckpt, "ckpt")?;
    let ckpt = load_checkpoint::<Real>(ckpt_path)?;
    let model = &ckpt.model;
    let (data, _) = io::load_dataset(required(&c.data, "data")?)?;
    let take = c.max_items.unwrap_or(usize::MAX).min(data.test.len());
    let test = &data.test.sketches[..take];
    let mode = model.mode();
    run.snapshot(c, json!({ "mode": mode, "T": model.schedule().steps(), "items": take }))?;

    let mut report = MetricReport::new(c.seed, ckpt.fingerprint()?);
    if mode == ConditionMode::SequenceEncoder && !c.factors.is_empty() {
        let spec = sampler_spec(model, c.sampler, c.steps);
        report.cd_table = eval::cd_vs_rate_curve(model, test, &c.factors, spec, c.seed)?;
        let pts: Vec<(f64, f64)> = report.cd_table.iter().map(|r| (r.factor, r.mean_cd)).collect();
        io::write_atomic(&run.path("cd_curve.svg"), plot_svg(&pts, "length factor", "mean CD").as_bytes())?;
    }
    let len = model.train_len();
    if let Some(labels) = &data.test.labels {
        let clf = train_toy_classifier(&data, ClassifierConfig { seed: c.seed, ..c.classifier })?;
        report.metrics.insert("classifier_accuracy".into(), clf.test_accuracy());
        for &f in &c.tc_fracs {
            let t_c = model.schedule().step_at_fraction(f)?;
            let v = eval::class_consistency(model, &clf, test, &labels[..take], t_c, c.n_per_item, c.seed)?;
            report.metrics.insert(format!("class_consistency@tc_frac={f}"), v);
        }
        if mode == ConditionMode::None && c.n_samples > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let samples = model.sample(c.n_samples, len, SamplerSpec::ddpm(model.schedule()), None, &mut rng)?;
            let walks = eval::random_walk_sketches(c.n_samples, len, c.seed)?;
            let real = clf.features(&data.test.sketches);
            let fd = frechet_distance(&clf.features(&samples), &real)?;
            let fd_walk = frechet_distance(&clf.features(&walks), &real)?;
            report.metrics.insert("frechet_samples".into(), fd.distance);
            report.metrics.insert("frechet_random_walk".into(), fd_walk.distance);
            if fd.jittered || fd_walk.jittered {
                report.notes.push("covariance jitter applied in the feature distance".into());
            }
        }
    } else {
        report.notes.push("dataset has no labels: classifier metrics skipped".into());
    }
    if mode == ConditionMode::None && c.n_samples > 0 {
        for k in [0.0, 1.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let s = apps::abstract_sample(model, k, c.n_samples, len, &mut rng)?;
            report.metrics.insert(format!("abstraction_energy@k={k}"), eval::abstraction_energy(&s)?);
        }
    }
    io::write_atomic(&run.path("report.json"), report.to_json()?.as_bytes())?;
    io::write_atomic(&run.path("report.csv"), report.to_csv().as_bytes())?;
    println!("{}", report.to_json()?);
    Ok(())
}

/// Minimal line plot with the axis ranges printed at the corners.
fn plot_svg(points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> String {
    let (w, h, pad) = (360.0, 240.0, 40.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points.iter().map(pick).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y1, y0) = (fold(f64::max, f64::NEG_INFINITY, |p| p.1), 0.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-size="10">"#);
    let _ = write!(
        s,
        r#"<rect width="{w}" height="{h}" fill="white"/><path d="M{pad} {pad}V{b}H{r}" stroke="gray" fill="none"/>"#,
        b = h - pad,
        r = w - pad
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = write!(s, r#"<polyline points="{}" stroke="black" fill="none"/>"#, path.join(" "));
    for &(x, y) in points {
        let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(x), sy(y));
    }
    let _ = write!(
        s,
        r#"<text x="{pad}" y="{}">{x0}</text><text x="{}" y="{}" text-anchor="end">{x1}</text><text x="{pad}" y="{}">{y1:.4}</text><text x="{}" y="{}" text-anchor="middle">{xlabel}</text><text x="4" y="{}">{ylabel}</text></svg>"#,
        h - pad + 14.0,
        w - pad,
        h - pad + 14.0,
        pad - 6.0,
        w / 2.0,
        h - 6.0,
        h / 2.0
    );
    s
}

// ------------------------------------------------------------------- serve

pub fn serve(run: &Run, c: &ServiceConfig) -> Result<(), CliError> {
    run.snapshot(c, json!({}))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Domain(e.to_string()))?;
    rt.block_on(strokediff_service::serve(c.clone())).map_err(|e| CliError::Domain(format!("server: {e}")))
}
