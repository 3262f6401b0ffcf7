//! Command implementations for the `vitsim` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use vitsim_core::accelsim::{simulate_model, simulate_model_timing, HardwareConfig, SimReport};
use vitsim_core::blockmat::{partition_dense, Matrix};
use vitsim_core::container::{
    dense_model_from_container, dense_model_to_container, get_scores, has_scores, model_from_container,
    model_to_container, put_scores, Container, Tensor,
};
use vitsim_core::perfmodel::{
    complexity_pruned, measure_sparsity, model_complexity_pruned, model_complexity_unpruned, predict_encoder_cycles,
    resource_model, tokens_after_layer, ComplexityInputs, ComplexityReport, MeasuredSparsity, ResourceEstimate,
};
use vitsim_core::staticprune::{encoder_param_count, head_retained_ratio, prune_model, EncoderScores, PrunedEncoders};
use vitsim_core::tokenprune::TdmConfig;
use vitsim_core::vitref::synth::{random_image, synthetic_dense_model, synthetic_scores};
use vitsim_core::vitref::{model_forward, DenseModel, EncoderWeights, Image, Model, ModelConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.vsbm";
pub const PRUNED_FILE: &str = "pruned.vsbm";
pub const MASKS_FILE: &str = "masks.vsbm";
pub const PRUNE_REPORT_FILE: &str = "prune_report.json";

#[derive(Debug, Parser)]
#[command(
    name = "vitsim",
    version,
    about = "Block/token pruning, reference inference and accelerator simulation for ViTs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic model with pruning scores.
    Gen(GenArgs),
    /// Apply top-k block pruning to a generated model.
    Prune(PruneArgs),
    /// Run reference inference and print logits.
    Infer(RunArgs),
    /// Run the model on the simulated accelerator.
    Simulate(SimulateArgs),
    /// Analytic complexity, cycle and resource estimates.
    Model(ModelArgs),
    /// Simulate a grid of top-k and keep rates, CSV out.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    DeitSmall,
    Tiny,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Model config JSON; defaults to the chosen preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deit-small")]
    pub preset: Preset,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Container with dense weights and scores.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub rb: f64,
    #[arg(long)]
    pub block: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dense or pruned weight container.
    #[arg(long)]
    pub weights: PathBuf,
    /// Keep rate at the token dropping layers; overrides the config.
    #[arg(long)]
    pub rt: Option<f64>,
    /// Container holding an `image` tensor; a seeded random image otherwise.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Hardware config JSON; missing fields take defaults.
    #[arg(long)]
    pub hw: Option<PathBuf>,
    /// Skip the functional run and report cycles only.
    #[arg(long)]
    pub timing_only: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pruned weights; ratios are measured from them.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub rt: Option<f64>,
    #[arg(long)]
    pub hw: Option<PathBuf>,
    /// Explicit ratios for a single encoder instead of measured ones.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha_proj: Option<f64>,
    #[arg(long)]
    pub alpha_mlp: Option<f64>,
    #[arg(long)]
    pub heads_kept: Option<usize>,
    #[arg(long)]
    pub tokens_kept: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Model config JSON; DeiT-Small when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dense weights with scores; generated from `--seed` when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.7, 1.0])]
    pub rb: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.7, 0.9, 1.0])]
    pub rt: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub block: Vec<usize>,
    #[arg(long)]
    pub hw: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error: 3 for a violated internal invariant,
/// 2 for everything else (bad input, IO).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let invariant =
        err.chain().any(|e| matches!(e.downcast_ref::<vitsim_core::Error>(), Some(vitsim_core::Error::Invariant(_))));
    if invariant {
        3
    } else {
        2
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Prune(a) => cmd_prune(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Model(a) => cmd_model(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ModelConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate().with_context(|| format!("checking {}", path.display()))?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)? + "\n";
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing to stdout"),
            }
        }
    }
}

fn load_container(path: &Path) -> Result<Container> {
    Container::load(path).with_context(|| format!("loading {}", path.display()))
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        bail!(vitsim_core::Error::InvalidArgument(format!("{name} must be in (0, 1], got {r}")));
    }
    Ok(())
}

/// Hardware config from JSON (missing fields default); the block size
/// follows the model unless given explicitly.
pub fn read_hw(path: Option<&Path>, block: usize) -> Result<HardwareConfig> {
    let hw = match path {
        None => HardwareConfig { b: block, ..HardwareConfig::default() },
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut v: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if let Some(obj) = v.as_object_mut() {
                obj.entry("b").or_insert(block.into());
            }
            serde_json::from_value(v).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    hw.validate()?;
    if hw.b != block {
        bail!(vitsim_core::Error::InvalidArgument(format!("hardware block size {} but the model uses {block}", hw.b)));
    }
    Ok(hw)
}

fn preset(p: Preset) -> ModelConfig {
    match p {
        Preset::DeitSmall => ModelConfig::deit_small(),
        Preset::Tiny => ModelConfig::tiny(),
    }
}

fn with_rt(mut cfg: ModelConfig, rt: Option<f64>) -> Result<ModelConfig> {
    if let Some(r) = rt {
        check_rate("--rt", r)?;
        cfg.tdm.keep_rate = r;
        cfg.tdm.overrides.clear();
    }
    Ok(cfg)
}

pub fn generate(cfg: &ModelConfig, seed: u64) -> Result<(DenseModel, Vec<EncoderScores>)> {
    let dense = synthetic_dense_model(cfg, seed)?;
    let scores = synthetic_scores(cfg, seed.wrapping_add(1))?;
    Ok((dense, scores))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => preset(a.preset),
    };
    if let Some(b) = a.block {
        cfg.block = b;
    }
    cfg.validate()?;
    info!("generating {} encoders, D = {}, seed {}", cfg.layers, cfg.dim, a.seed);
    let (dense, scores) = generate(&cfg, a.seed)?;
    let mut c = dense_model_to_container(&dense)?;
    put_scores(&mut c, &scores)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let path = a.out.join(MODEL_FILE);
    c.save(&path).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneReport {
    pub r_b: f64,
    pub block: usize,
    pub head_retained_ratio: f64,
    /// Means over encoders.
    pub alpha: f64,
    pub alpha_proj: f64,
    pub alpha_mlp: f64,
    pub layers: Vec<MeasuredSparsity>,
    pub removed_heads: Vec<Vec<usize>>,
    pub param_count: usize,
    pub baseline_param_count: usize,
    pub encoder_param_count: usize,
    pub baseline_encoder_param_count: usize,
}

fn embedding_params(m: &DenseModel) -> usize {
    let e = &m.embedding;
    let opt = |v: &Option<Vec<f64>>| v.as_ref().map_or(0, Vec::len);
    e.patch.data().len()
        + opt(&e.patch_bias)
        + e.cls.len()
        + e.pos.data().len()
        + 2 * e.norm.gain.len()
        + e.head.data().len()
        + opt(&e.head_bias)
}

fn layer_norm_params(w: &EncoderWeights) -> usize {
    2 * (w.ln1.gain.len() + w.ln2.gain.len())
}

/// Prunes a dense model and measures the result.
pub fn prune(
    cfg: &ModelConfig,
    dense: &DenseModel,
    scores: &[EncoderScores],
    r_b: f64,
) -> Result<(Model, PrunedEncoders, PruneReport)> {
    check_rate("--rb", r_b)?;
    let p = prune_model(&dense.encoders, scores, r_b, cfg.block)?;
    let model = Model::new(cfg.clone(), dense.embedding.clone(), p.encoders.clone())?;
    let baseline = dense.to_model()?;
    let count = |ws: &[EncoderWeights]| ws.iter().map(|w| encoder_param_count(w) + layer_norm_params(w)).sum::<usize>();
    let layers: Vec<MeasuredSparsity> = model.layouts()?.iter().map(|l| measure_sparsity(l, cfg.mlp_dim)).collect();
    let mean = |f: fn(&MeasuredSparsity) -> f64| layers.iter().map(f).sum::<f64>() / layers.len().max(1) as f64;
    let emb = embedding_params(dense);
    let report = PruneReport {
        r_b,
        block: cfg.block,
        head_retained_ratio: head_retained_ratio(&p.masks, cfg.heads),
        alpha: mean(|s| s.alpha),
        alpha_proj: mean(|s| s.alpha_proj),
        alpha_mlp: mean(|s| s.alpha_mlp),
        removed_heads: p.masks.iter().map(|m| m.removed_heads.clone()).collect(),
        layers,
        param_count: emb + count(&model.encoders),
        baseline_param_count: emb + count(&baseline.encoders),
        encoder_param_count: count(&model.encoders),
        baseline_encoder_param_count: count(&baseline.encoders),
    };
    Ok((model, p, report))
}

fn cmd_prune(a: &PruneArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(b) = a.block {
        cfg.block = b;
        cfg.validate()?;
    }
    let c = load_container(&a.weights)?;
    if !has_scores(&c) {
        bail!(vitsim_core::Error::InvalidArgument(format!(
            "{} holds no pruning scores; generate the model with `vitsim gen`",
            a.weights.display()
        )));
    }
    let dense = dense_model_from_container(&cfg, &c)?;
    let scores = get_scores(&c, cfg.layers)?;
    info!("pruning at r_b = {} with b = {}", a.rb, cfg.block);
    let (model, p, report) = prune(&cfg, &dense, &scores, a.rb)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    model_to_container(&model)?.save(&a.out.join(PRUNED_FILE)).context("writing pruned weights")?;
    let mut masks = Container::new();
    for (l, e) in p.encoders.iter().enumerate() {
        for (n, w) in [("mq", &e.wq), ("mk", &e.wk), ("mv", &e.wv), ("mproj", &e.wproj)] {
            masks.insert(format!("enc{l}.{n}"), Tensor::Layout(w.layout().clone()))?;
        }
    }
    masks.save(&a.out.join(MASKS_FILE)).context("writing masks")?;
    write_json(&a.out.join(PRUNE_REPORT_FILE), &report)?;
    info!("head retained ratio {:.3}, {} parameters", report.head_retained_ratio, report.param_count);
    Ok(())
}

/// Loads either a pruned container or a dense one (treated as unpruned).
pub fn load_model(cfg: &ModelConfig, path: &Path) -> Result<Model> {
    let c = load_container(path)?;
    let sparse = matches!(c.get("enc0.wq"), Some(Tensor::Sparse(_)));
    let m = if sparse { model_from_container(cfg, &c)? } else { dense_model_from_container(cfg, &c)?.to_model()? };
    Ok(m)
}

fn load_image(cfg: &ModelConfig, path: Option<&Path>, seed: u64) -> Result<Image> {
    match path {
        None => Ok(random_image(cfg, seed)),
        Some(p) => {
            let c = load_container(p)?;
            let m = c.matrix("image")?;
            if m.rows() != cfg.channels || m.cols() != cfg.image_height * cfg.image_width {
                bail!(vitsim_core::Error::InvalidArgument(format!(
                    "image tensor is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    cfg.channels,
                    cfg.image_height * cfg.image_width
                )));
            }
            Ok(Image::new(cfg.channels, cfg.image_height, cfg.image_width, m.data().to_vec())?)
        }
    }
}

/// Writes an image as a VSBM container, `C x (H W)`.
pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let mut c = Container::new();
    let m = Matrix::new(image.channels, image.height * image.width, image.data.clone())?;
    c.insert("image", Tensor::Dense(partition_dense(&m, 1)?))?;
    c.save(path).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct InferOutput {
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub token_counts: Vec<usize>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(i, _)| i)
}

fn cmd_infer(a: &RunArgs) -> Result<()> {
    let cfg = with_rt(read_config(&a.config)?, a.rt)?;
    let model = Model { config: cfg.clone(), ..load_model(&cfg, &a.weights)? };
    let image = load_image(&cfg, a.image.as_deref(), a.seed)?;
    let f = model_forward(&image, &model)?;
    emit_json(
        a.out.as_deref(),
        &InferOutput { predicted_class: argmax(&f.logits), logits: f.logits, token_counts: f.token_counts },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    #[serde(flatten)]
    pub report: SimReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<Vec<usize>>,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = with_rt(read_config(&a.run.config)?, a.run.rt)?;
    let hw = read_hw(a.hw.as_deref(), cfg.block)?;
    let model = Model { config: cfg.clone(), ..load_model(&cfg, &a.run.weights)? };
    let out = if a.timing_only {
        SimulateOutput {
            report: simulate_model_timing(&cfg, &model.layouts()?, &hw)?,
            logits: None,
            token_counts: None,
        }
    } else {
        let image = load_image(&cfg, a.run.image.as_deref(), a.run.seed)?;
        let (f, report) = simulate_model(&image, &model, &hw)?;
        SimulateOutput { report, logits: Some(f.logits), token_counts: Some(f.token_counts) }
    };
    info!("{} cycles, {:.3} ms", out.report.total_cycles, out.report.latency_ms);
    emit_json(a.run.out.as_deref(), &out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelOutput {
    pub complexity: ComplexityReport,
    pub resources: ResourceEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_latency_ms: Option<f64>,
}

fn cmd_model(a: &ModelArgs) -> Result<()> {
    let cfg = with_rt(read_config(&a.config)?, a.rt)?;
    let hw = read_hw(a.hw.as_deref(), cfg.block)?;
    let manual = a.alpha.is_some()
        || a.alpha_proj.is_some()
        || a.alpha_mlp.is_some()
        || a.heads_kept.is_some()
        || a.tokens_kept.is_some();
    let resources = resource_model(&hw);
    let out = if manual {
        let base = ComplexityInputs::from_config(&cfg);
        let x = ComplexityInputs {
            alpha: a.alpha.unwrap_or(1.0),
            alpha_proj: a.alpha_proj.unwrap_or(1.0),
            alpha_mlp: a.alpha_mlp.unwrap_or(1.0),
            heads_kept: a.heads_kept.unwrap_or(base.heads),
            tokens_kept: a.tokens_kept.unwrap_or(base.tokens),
            ..base.clone()
        };
        let with_tdm = x.tokens_kept < x.tokens;
        let per = complexity_pruned(&x, with_tdm)?;
        let baseline = model_complexity_unpruned(&cfg).model_macs;
        ModelOutput {
            complexity: ComplexityReport::new(vec![per; cfg.layers], baseline, &cfg),
            resources,
            predicted_cycles: None,
            predicted_latency_ms: None,
        }
    } else if let Some(w) = &a.weights {
        let model = load_model(&cfg, w)?;
        let layouts = model.layouts()?;
        let mut n = cfg.tokens();
        let mut cycles = 0;
        for (l, layout) in layouts.iter().enumerate() {
            let rate = cfg.tdm.rate_at(l + 1);
            cycles += predict_encoder_cycles(layout, n, rate, &hw).total();
            n = tokens_after_layer(layout, n, rate);
        }
        ModelOutput {
            complexity: model_complexity_pruned(&cfg, &layouts)?,
            resources,
            predicted_cycles: Some(cycles),
            predicted_latency_ms: Some(cycles as f64 / hw.clock_hz * 1e3),
        }
    } else {
        ModelOutput {
            complexity: model_complexity_unpruned(&cfg),
            resources,
            predicted_cycles: None,
            predicted_latency_ms: None,
        }
    };
    emit_json(a.out.as_deref(), &out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub block: usize,
    pub r_b: f64,
    pub r_t: f64,
    pub total_cycles: u64,
    pub latency_ms: f64,
    pub utilization: f64,
    pub compute_utilization: f64,
    pub macs: u64,
    pub model_ops: u64,
    pub head_retained_ratio: f64,
    pub final_tokens: usize,
}

/// Prunes and times every `(b, r_b, r_t)` combination.
pub fn sweep(
    cfg: &ModelConfig,
    source: &SweepSource,
    blocks: &[usize],
    rbs: &[f64],
    rts: &[f64],
    hw: &HardwareConfig,
) -> Result<Vec<SweepRow>> {
    rbs.iter().chain(rts).try_for_each(|&r| check_rate("sweep rate", r))?;
    let combos: Vec<(usize, f64, f64)> =
        blocks.iter().flat_map(|&b| rbs.iter().flat_map(move |&rb| rts.iter().map(move |&rt| (b, rb, rt)))).collect();
    combos
        .par_iter()
        .map(|&(b, r_b, r_t)| {
            let cfg = ModelConfig { block: b, tdm: TdmConfig { keep_rate: r_t, ..cfg.tdm.clone() }, ..cfg.clone() };
            cfg.validate()?;
            let (dense, scores) = match source {
                SweepSource::Seed(seed) => generate(&cfg, *seed)?,
                SweepSource::Loaded(m) if b == m.0.config.block => (m.0.clone(), m.1.clone()),
                SweepSource::Loaded(m) => bail!("loaded scores use b = {}, cannot sweep b = {b}", m.0.config.block),
            };
            let (model, _, pr) = prune(&cfg, &dense, &scores, r_b)?;
            let hw = HardwareConfig { b, ..hw.clone() };
            let layouts = model.layouts()?;
            let rep = simulate_model_timing(&cfg, &layouts, &hw)?;
            Ok(SweepRow {
                block: b,
                r_b,
                r_t,
                total_cycles: rep.total_cycles,
                latency_ms: rep.latency_ms,
                utilization: rep.utilization,
                compute_utilization: rep.compute_utilization,
                macs: rep.macs,
                model_ops: rep.ops.total(),
                head_retained_ratio: pr.head_retained_ratio,
                final_tokens: rep.encoders.last().map_or(cfg.tokens(), |e| e.tokens_out),
            })
        })
        .collect()
}

/// Where sweep weights come from: a generator seed or a loaded model.
pub enum SweepSource {
    Seed(u64),
    Loaded(Box<(DenseModel, Vec<EncoderScores>)>),
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => ModelConfig::deit_small(),
    };
    let source = match &a.weights {
        Some(w) => {
            let c = load_container(w)?;
            if !has_scores(&c) {
                return Err(anyhow!(vitsim_core::Error::InvalidArgument(format!(
                    "{} holds no pruning scores",
                    w.display()
                ))));
            }
            SweepSource::Loaded(Box::new((dense_model_from_container(&cfg, &c)?, get_scores(&c, cfg.layers)?)))
        }
        None => SweepSource::Seed(a.seed),
    };
    let blocks = if a.block.is_empty() { vec![cfg.block] } else { a.block.clone() };
    let hw = read_hw(a.hw.as_deref(), cfg.block)?;
    let rows = sweep(&cfg, &source, &blocks, &a.rb, &a.rt, &hw)?;
    let mut w = match &a.out {
        Some(p) => csv::Writer::from_writer(Box::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ) as Box<dyn Write>),
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn Write>),
    };
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
