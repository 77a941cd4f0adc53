//! `avmgt`: synthetic data generation, training, sampling and evaluation.
//!
//! Settings come from an optional `key=value` file (`--config`), then any
//! `--set key=value` pairs, then dedicated flags, each overriding the last.
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avmgt::config::RunConfig;
use avmgt::eval::{conditional_kl_from_pairs, frechet_distance, mapping_accuracy, token_features, EvalReport};
use avmgt::sampler::{generate, Request};
use avmgt::tokenizer::{Modality, PairedDataset, TokenSequence};
use avmgt::trainer::{Checkpoint, Trainer};
use avmgt::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "avmgt", version, about = "Masked generative transformer over paired token modalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key=value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct SamplerFlags {
    /// Guidance factor s (1 disables guidance). `eval` accepts a comma list.
    #[arg(long = "cfg-s", value_delimiter = ',')]
    cfg_s: Vec<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// cosine or linear.
    #[arg(long)]
    schedule: Option<String>,
    /// constant or linear-decay.
    #[arg(long)]
    anneal: Option<String>,
    /// logit or probability.
    #[arg(long = "guidance-space")]
    guidance_space: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SamplerFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        if let [s] = self.cfg_s[..] {
            push("cfg_s", Some(s.to_string()));
        }
        push("temperature", self.temperature.map(|x| x.to_string()));
        push("iterations", self.iterations.map(|x| x.to_string()));
        push("schedule", self.schedule.clone());
        push("anneal", self.anneal.clone());
        push("guidance_space", self.guidance_space.clone());
        push("sample_seed", self.seed.map(|x| x.to_string()));
        v
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    A2b,
    B2a,
    Cogen,
    Inpaint,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::A2b => "a2b",
            Mode::B2a => "b2a",
            Mode::Cogen => "cogen",
            Mode::Inpaint => "inpaint",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Side {
    A,
    B,
}

impl From<Side> for Modality {
    fn from(s: Side) -> Self {
        match s {
            Side::A => Modality::A,
            Side::B => Modality::B,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset.
    Datagen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "pairs")]
        n_pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Tab-separated `step loss accuracy` log.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the existing checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Generate sequences from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "a2b")]
        mode: Mode,
        /// Dataset file supplying conditions (and the tokens kept when inpainting).
        #[arg(long)]
        conditions: Option<PathBuf>,
        /// Number of conditions to use (cogen: number of samples).
        #[arg(long, default_value_t = 200)]
        limit: usize,
        /// Modality regenerated by inpainting.
        #[arg(long, value_enum, default_value = "b")]
        target: Side,
        /// Whitespace-separated token positions to regenerate when inpainting.
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write dequantized features of the generated modality, one row per sequence.
        #[arg(long = "dump-features")]
        dump_features: Option<PathBuf>,
    },
    /// Score generated sequences, or generate and score for each guidance factor.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sampler: SamplerFlags,
        /// Reference dataset: conditions and real sequences.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Previously generated file to score.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Checkpoint to sample from when no generated file is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "a2b")]
        mode: Mode,
        #[arg(long, default_value_t = 200)]
        limit: usize,
        #[arg(long, value_enum, default_value = "b")]
        target: Side,
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over temperature, iterations and guidance; prints a tab-separated table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "a2b")]
        mode: Mode,
        #[arg(long, value_delimiter = ',', default_value = "9")]
        temperatures: Vec<f64>,
        #[arg(long = "iterations", value_delimiter = ',', default_value = "30")]
        iterations: Vec<usize>,
        #[arg(long = "cfg-s", value_delimiter = ',', default_value = "1,3")]
        cfg_s: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        limit: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Command failure, split by exit code.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(common: &Common, flags: &[(&str, String)]) -> std::result::Result<RunConfig, Failure> {
    let cfg = build_config(common, flags).map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn build_config(common: &Common, flags: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn path_flag(key: &'static str, p: &Option<PathBuf>) -> Option<(&'static str, String)> {
    p.as_ref().map(|p| (key, p.display().to_string()))
}

fn required<'p>(p: &'p Option<PathBuf>, key: &str) -> std::result::Result<&'p Path, Failure> {
    p.as_deref().ok_or_else(|| usage(format!("missing required key '{key}'")))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.display().to_string(), e)
}

fn read_region(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad region position '{t}'")))
        })
        .collect()
}

fn requests(
    mode: Mode,
    data: &PairedDataset,
    limit: usize,
    target: Side,
    region: &Option<PathBuf>,
) -> Result<Vec<Request>> {
    if mode == Mode::Inpaint && region.is_none() {
        return Err(Error::InvalidConfig("inpaint needs --region".into()));
    }
    if mode != Mode::Inpaint && region.is_some() {
        return Err(Error::InvalidConfig(format!("--region is only valid with inpaint, not {}", mode.name())));
    }
    let region = match region {
        Some(p) => read_region(p)?,
        None => Vec::new(),
    };
    if mode == Mode::Cogen {
        return Ok(vec![Request::Cogen; limit]);
    }
    Ok(data
        .pairs
        .iter()
        .take(limit)
        .map(|(a, b)| match mode {
            Mode::A2b => Request::AToB(a.clone()),
            Mode::B2a => Request::BToA(b.clone()),
            Mode::Inpaint => Request::Inpaint {
                a: a.clone(),
                b: b.clone(),
                target: target.into(),
                region: region.clone(),
            },
            Mode::Cogen => unreachable!(),
        })
        .collect())
}

fn check_compatible(ckpt: &Checkpoint<f32>, data: &PairedDataset) -> Result<()> {
    let m = &ckpt.model.config;
    let o = &data.oracle;
    if (m.codebook_a, m.codebook_b, m.len_a, m.len_b) != (o.codebook_a, o.codebook_b, o.len_a, o.len_b) {
        return Err(Error::Shape(format!(
            "checkpoint expects C=({}, {}) L=({}, {}), dataset has C=({}, {}) L=({}, {})",
            m.codebook_a, m.codebook_b, m.len_a, m.len_b, o.codebook_a, o.codebook_b, o.len_a, o.len_b
        )));
    }
    Ok(())
}

fn run_generation(ckpt: &Checkpoint<f32>, reqs: &[Request], cfg: &RunConfig) -> Result<Vec<(TokenSequence, TokenSequence)>> {
    reqs.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = cfg.sampler;
            s.seed = s.seed.wrapping_add(i as u64);
            let g = generate(&ckpt.model, r, &s)?;
            Ok((g.a, g.b))
        })
        .collect()
}

fn generated_modality(mode: Mode, target: Side) -> Option<Modality> {
    match mode {
        Mode::A2b => Some(Modality::B),
        Mode::B2a => Some(Modality::A),
        Mode::Inpaint => Some(target.into()),
        Mode::Cogen => None,
    }
}

fn features(data: &PairedDataset, pairs: &[(TokenSequence, TokenSequence)], m: Option<Modality>) -> Result<Vec<Vec<f64>>> {
    let (ca, cb) = (data.codebook_a()?, data.codebook_b()?);
    let take = |m: Modality| -> Vec<TokenSequence> {
        pairs
            .iter()
            .map(|(a, b)| if m == Modality::A { a.clone() } else { b.clone() })
            .collect()
    };
    match m {
        Some(Modality::A) => token_features(&take(Modality::A), &ca),
        Some(Modality::B) => token_features(&take(Modality::B), &cb),
        None => {
            let fa = token_features(&take(Modality::A), &ca)?;
            let fb = token_features(&take(Modality::B), &cb)?;
            Ok(fa.into_iter().zip(fb).map(|(mut x, y)| {
                x.extend(y);
                x
            }).collect())
        }
    }
}

fn score(
    reference: &PairedDataset,
    generated: &[(TokenSequence, TokenSequence)],
    mode: Mode,
    target: Side,
    echo: Vec<(String, String)>,
) -> Result<EvalReport> {
    let oracle = &reference.oracle;
    let mapping_accuracy = if oracle.has_unique_mode() && !generated.is_empty() {
        let mut acc = 0.0;
        for (a, b) in generated {
            acc += mapping_accuracy(b, a, oracle)?;
        }
        Some(acc / generated.len() as f64)
    } else {
        None
    };
    let oracle_kl = if matches!(mode, Mode::A2b | Mode::Cogen) {
        let obs: Vec<(usize, usize)> = generated
            .iter()
            .flat_map(|(a, b)| a.indices().iter().copied().zip(b.indices().iter().copied()))
            .collect();
        if obs.len() >= 1000 {
            Some(conditional_kl_from_pairs(obs, oracle)?)
        } else {
            None
        }
    } else {
        None
    };
    let modality = generated_modality(mode, target);
    let frechet_distance = if generated.len() >= 2 && reference.len() >= 2 {
        let fx = features(reference, generated, modality)?;
        let fy = features(reference, &reference.pairs, modality)?;
        Some(frechet_distance(&fx, &fy)?)
    } else {
        None
    };
    Ok(EvalReport {
        mapping_accuracy,
        oracle_kl,
        frechet_distance,
        echo,
    })
}

fn write_text(path: &Option<PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(io_err(p))?;
    }
    Ok(())
}

fn cmd_datagen(common: &Common, out: &Option<PathBuf>, n_pairs: Option<usize>, seed: Option<u64>) -> Outcome {
    let mut flags: Vec<(&str, String)> = path_flag("output", out).into_iter().collect();
    flags.extend(n_pairs.map(|n| ("n_pairs", n.to_string())));
    flags.extend(seed.map(|s| ("data_seed", s.to_string())));
    let cfg = load_config(common, &flags)?;
    let out = required(&cfg.paths.output, "output")?;
    let oracle = cfg.oracle()?;
    let d = &cfg.data;
    let data = PairedDataset::generate(
        oracle,
        (d.dim_a, d.dim_b),
        (d.codebook_seed_a, d.codebook_seed_b),
        d.n_pairs,
        d.seed,
    )?;
    data.save(out)?;
    println!(
        "wrote {} pairs to {}: C_a={} C_b={} L_a={} L_b={} oracle={}",
        data.len(),
        out.display(),
        oracle.codebook_a,
        oracle.codebook_b,
        oracle.len_a,
        oracle.len_b,
        cfg.data.mapping_kind
    );
    Ok(())
}

fn cmd_train(
    common: &Common,
    dataset: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    metrics: &Option<PathBuf>,
    steps: Option<u64>,
    resume: bool,
) -> Outcome {
    let mut flags: Vec<(&str, String)> = [path_flag("dataset", dataset), path_flag("checkpoint", checkpoint), path_flag("metrics", metrics)]
        .into_iter()
        .flatten()
        .collect();
    flags.extend(steps.map(|s| ("steps", s.to_string())));
    let cfg = load_config(common, &flags)?;
    let data = PairedDataset::load(required(&cfg.paths.dataset, "dataset")?)?;
    let ckpt_path = required(&cfg.paths.checkpoint, "checkpoint")?;
    let mut trainer = if resume {
        Trainer::<f32>::resume(Checkpoint::load(ckpt_path)?, cfg.train.clone())?
    } else {
        let o = &data.oracle;
        let mut model = cfg.model;
        (model.codebook_a, model.codebook_b, model.len_a, model.len_b) = (o.codebook_a, o.codebook_b, o.len_a, o.len_b);
        Trainer::<f32>::new(model, cfg.train.clone())?
    };
    let start = trainer.step_count();
    let mut log = match &cfg.paths.metrics {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(resume)
                .truncate(!resume)
                .open(p)
                .map_err(io_err(p))?,
        ),
        None => None,
    };
    let history = trainer.run(&data, Some(ckpt_path), log.as_mut().map(|f: &mut File| f as &mut dyn Write))?;
    let last = history.last().map(|(_, s)| format!(" final loss {:.4}", s.loss)).unwrap_or_default();
    println!(
        "trained steps {}..{} on {} pairs; checkpoint {}{last}",
        start,
        trainer.step_count(),
        data.len(),
        ckpt_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    common: &Common,
    sampler: &SamplerFlags,
    checkpoint: &Option<PathBuf>,
    mode: Mode,
    conditions: &Option<PathBuf>,
    limit: usize,
    target: Side,
    region: &Option<PathBuf>,
    out: &Option<PathBuf>,
    dump: &Option<PathBuf>,
) -> Outcome {
    if sampler.cfg_s.len() > 1 {
        return Err(usage("generate takes a single --cfg-s value"));
    }
    let mut flags = sampler.pairs();
    flags.extend([path_flag("checkpoint", checkpoint), path_flag("dataset", conditions), path_flag("output", out)].into_iter().flatten());
    let cfg = load_config(common, &flags)?;
    let ckpt = Checkpoint::<f32>::load(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let data = PairedDataset::load(required(&cfg.paths.dataset, "dataset")?)?;
    check_compatible(&ckpt, &data)?;
    let out = required(&cfg.paths.output, "output")?;
    let reqs = requests(mode, &data, limit, target, region).map_err(|e| usage(e.to_string()))?;
    let pairs = run_generation(&ckpt, &reqs, &cfg)?;
    let generated = data.with_pairs(pairs);
    generated.save(out)?;
    if let Some(p) = dump {
        let rows = features(&data, &generated.pairs, generated_modality(mode, target))?;
        let mut text = String::new();
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(text, "{}", line.join("\t"));
        }
        std::fs::write(p, text).map_err(io_err(p))?;
    }
    println!("generated {} {} samples to {}", generated.len(), mode.name(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &Common,
    sampler: &SamplerFlags,
    dataset: &Option<PathBuf>,
    generated: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    mode: Mode,
    limit: usize,
    target: Side,
    region: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Outcome {
    let mut flags = sampler.pairs();
    flags.extend([path_flag("dataset", dataset), path_flag("checkpoint", checkpoint), path_flag("output", out)].into_iter().flatten());
    let cfg = load_config(common, &flags)?;
    let reference = PairedDataset::load(required(&cfg.paths.dataset, "dataset")?)?;
    let base_echo = vec![
        ("mode".to_string(), mode.name().to_string()),
        ("oracle".to_string(), reference.oracle.mapping.kind().to_string()),
    ];
    let mut reports = Vec::new();
    if let Some(g) = generated {
        if sampler.cfg_s.len() > 1 {
            return Err(usage("a --cfg-s list needs --checkpoint, not --generated"));
        }
        let gen = PairedDataset::load(g)?;
        let mut echo = base_echo.clone();
        echo.push(("generated".into(), g.display().to_string()));
        reports.push(score(&reference, &gen.pairs, mode, target, echo)?);
    } else {
        let ckpt = Checkpoint::<f32>::load(required(&cfg.paths.checkpoint, "checkpoint")?)?;
        check_compatible(&ckpt, &reference)?;
        let reqs = requests(mode, &reference, limit, target, region).map_err(|e| usage(e.to_string()))?;
        let factors = if sampler.cfg_s.is_empty() { vec![cfg.sampler.guidance] } else { sampler.cfg_s.clone() };
        for s in factors {
            let mut c = cfg.clone();
            c.sampler.guidance = s;
            c.sampler.validate()?;
            let pairs = run_generation(&ckpt, &reqs, &c)?;
            let mut echo = base_echo.clone();
            echo.extend([
                ("cfg_s".to_string(), s.to_string()),
                ("temperature".to_string(), c.sampler.temperature.to_string()),
                ("iterations".to_string(), c.sampler.iterations.to_string()),
                ("samples".to_string(), pairs.len().to_string()),
            ]);
            reports.push(score(&reference, &pairs, mode, target, echo)?);
        }
    }
    let text = reports.iter().map(EvalReport::to_text).collect::<Vec<_>>().join("\n");
    print!("{text}");
    Ok(write_text(&cfg.paths.output, &text)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    common: &Common,
    dataset: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    mode: Mode,
    temperatures: &[f64],
    iterations: &[usize],
    cfg_s: &[f64],
    limit: usize,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Outcome {
    let mut flags: Vec<(&str, String)> = [path_flag("dataset", dataset), path_flag("checkpoint", checkpoint), path_flag("output", out)]
        .into_iter()
        .flatten()
        .collect();
    flags.extend(seed.map(|s| ("sample_seed", s.to_string())));
    let cfg = load_config(common, &flags)?;
    if mode == Mode::Inpaint {
        return Err(usage("sweep supports a2b, b2a and cogen"));
    }
    let reference = PairedDataset::load(required(&cfg.paths.dataset, "dataset")?)?;
    let ckpt = Checkpoint::<f32>::load(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    check_compatible(&ckpt, &reference)?;
    let reqs = requests(mode, &reference, limit, Side::B, &None)?;
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
    let mut table = String::from("temperature\titerations\tcfg_s\tmapping_accuracy\toracle_kl\tfrechet_distance\n");
    for &t in temperatures {
        for &n in iterations {
            for &s in cfg_s {
                let mut c = cfg.clone();
                c.sampler.temperature = t;
                c.sampler.iterations = n;
                c.sampler.guidance = s;
                c.sampler.validate()?;
                let pairs = run_generation(&ckpt, &reqs, &c)?;
                let r = score(&reference, &pairs, mode, Side::B, Vec::new())?;
                let _ = writeln!(
                    table,
                    "{t}\t{n}\t{s}\t{}\t{}\t{}",
                    fmt(r.mapping_accuracy),
                    fmt(r.oracle_kl),
                    fmt(r.frechet_distance)
                );
            }
        }
    }
    print!("{table}");
    Ok(write_text(&cfg.paths.output, &table)?)
}

fn dispatch(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Datagen { common, out, n_pairs, seed } => cmd_datagen(common, out, *n_pairs, *seed),
        Command::Train {
            common,
            dataset,
            checkpoint,
            metrics,
            steps,
            resume,
        } => cmd_train(common, dataset, checkpoint, metrics, *steps, *resume),
        Command::Generate {
            common,
            sampler,
            checkpoint,
            mode,
            conditions,
            limit,
            target,
            region,
            out,
            dump_features,
        } => cmd_generate(common, sampler, checkpoint, *mode, conditions, *limit, *target, region, out, dump_features),
        Command::Eval {
            common,
            sampler,
            dataset,
            generated,
            checkpoint,
            mode,
            limit,
            target,
            region,
            out,
        } => cmd_eval(common, sampler, dataset, generated, checkpoint, *mode, *limit, *target, region, out),
        Command::Sweep {
            common,
            dataset,
            checkpoint,
            mode,
            temperatures,
            iterations,
            cfg_s,
            limit,
            seed,
            out,
        } => cmd_sweep(common, dataset, checkpoint, *mode, temperatures, iterations, cfg_s, *limit, *seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
