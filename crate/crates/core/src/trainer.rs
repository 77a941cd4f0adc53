//! Mask-denoising training: masked cross-entropy over both modalities,
//! AdamW with linear warmup, and checksummed checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};

use crate::binfmt::{FormatError, Reader, Writer};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, MaskPlan, DEFAULT_SIGMA};
use crate::model::{ForwardInput, ForwardVars, Model, ModelConfig, ModelParams, Params};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::{Modality, PairedDataset, TokenSequence};
use crate::SeedRng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Mean of the truncated-Gaussian mask ratio.
    pub mu: f64,
    pub sigma: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_interval: u64,
    /// Write a metrics line every this many steps; 0 disables the log.
    pub log_interval: u64,
    /// Probability of fully masking one randomly chosen modality of a training
    /// pair. 0 reproduces training without any condition dropping.
    pub cfg_drop_prob: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 0.7,
            sigma: DEFAULT_SIGMA,
            batch_size: 32,
            steps: 3000,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            adam_betas: (0.9, 0.95),
            adam_eps: 1e-8,
            warmup_steps: 100,
            seed: 0,
            checkpoint_interval: 0,
            log_interval: 10,
            cfg_drop_prob: 0.0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return bad("cfg_drop_prob must lie in [0, 1]");
        }
        if !(0.2..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0.2, 1]");
        }
        if matches!(self.max_grad_norm, Some(n) if !(n > 0.0)) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

/// Loss and accuracy over one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Batch mean of the summed modality terms.
    pub loss: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    /// Argmax hits over masked positions.
    pub correct: usize,
    pub supervised: usize,
}

impl StepStats {
    pub fn accuracy(&self) -> f64 {
        if self.supervised == 0 {
            0.0
        } else {
            self.correct as f64 / self.supervised as f64
        }
    }
}

fn indicator<F: Scalar>(mask: &[bool]) -> Vec<F> {
    mask.iter().map(|&m| if m { F::one() } else { F::zero() }).collect()
}

fn count_hits<F: Scalar>(logits: &Tensor<F>, targets: &[usize], mask: &[bool]) -> usize {
    (0..logits.rows())
        .filter(|&i| mask[i] && argmax(logits.row(i)) == targets[i])
        .count()
}

pub(crate) fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-modality masked cross-entropy of one pair, recorded on a tape.
pub struct PairLoss {
    pub loss_a: Var,
    pub loss_b: Var,
    pub out: ForwardVars,
}

/// Corrupts `(a, b)` by `plan`, runs the model on `tape`, and scores the
/// masked positions of each modality against the original tokens.
pub fn pair_loss_on_tape<F: Scalar>(
    model: &Model<F>,
    tape: &mut Tape<F>,
    p: &Params<Var>,
    a: &TokenSequence,
    b: &TokenSequence,
    plan: &MaskPlan,
) -> Result<PairLoss> {
    let cfg = &model.config;
    let ids_a = apply_mask(a.indices(), &plan.mask_a, cfg.mask_id(Modality::A))?;
    let ids_b = apply_mask(b.indices(), &plan.mask_b, cfg.mask_id(Modality::B))?;
    let out = model.forward_on_tape(
        tape,
        p,
        ForwardInput {
            ids_a: &ids_a,
            ids_b: &ids_b,
            keep_a: &plan.keep_a,
            keep_b: &plan.keep_b,
        },
    )?;
    let loss_a = tape.cross_entropy(out.logits_a, a.indices(), &indicator::<F>(&plan.mask_a))?;
    let loss_b = tape.cross_entropy(out.logits_b, b.indices(), &indicator::<F>(&plan.mask_b))?;
    Ok(PairLoss { loss_a, loss_b, out })
}

/// Loss, stats and parameter gradients of the batch-mean loss, for given plans.
pub fn loss_with_plans<F: Scalar>(
    model: &Model<F>,
    batch: &[(&TokenSequence, &TokenSequence)],
    plans: &[MaskPlan],
) -> Result<(StepStats, ModelParams<F>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if batch.len() != plans.len() {
        return Err(Error::Shape("one mask plan per pair required".into()));
    }
    let inv_b = F::one() / F::lit(batch.len() as f64);
    let mut total = model.params.zeros_like();
    let mut stats = StepStats::default();
    for ((a, b), plan) in batch.iter().zip(plans) {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, true);
        let PairLoss { loss_a: la, loss_b: lb, out } = pair_loss_on_tape(model, &mut tape, &p, a, b, plan)?;
        let sum = tape.add(la, lb)?;
        let loss = tape.scale(sum, inv_b);

        stats.loss_a += tape.value(la).item().to_f64_lossless() / batch.len() as f64;
        stats.loss_b += tape.value(lb).item().to_f64_lossless() / batch.len() as f64;
        stats.correct += count_hits(tape.value(out.logits_a), a.indices(), &plan.mask_a);
        stats.correct += count_hits(tape.value(out.logits_b), b.indices(), &plan.mask_b);
        stats.supervised += plan.mask_a.iter().chain(&plan.mask_b).filter(|&&m| m).count();

        let mut grads = tape.backward(loss)?;
        let mut vars = Vec::new();
        p.for_each(|_, v| vars.push(*v));
        let mut i = 0;
        total.for_each_mut(|acc| {
            if let Some(g) = grads.take(vars[i]) {
                for (x, &y) in acc.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
            i += 1;
        });
    }
    stats.loss = stats.loss_a + stats.loss_b;
    Ok((stats, total))
}

/// Builds one mask plan per pair from `rng`, optionally dropping a whole modality.
pub fn sample_plans<R: Rng + ?Sized>(
    config: &ModelConfig,
    n: usize,
    mu: f64,
    sigma: f64,
    cfg_drop_prob: f64,
    rng: &mut R,
) -> Result<Vec<MaskPlan>> {
    (0..n)
        .map(|_| {
            let mut plan = MaskPlan::build(config.len_a, config.len_b, mu, sigma, rng)?;
            if cfg_drop_prob > 0.0 && rng.random::<f64>() < cfg_drop_prob {
                let m = if rng.random::<bool>() { Modality::A } else { Modality::B };
                plan.mask_fully(m);
            }
            Ok(plan)
        })
        .collect()
}

/// Masks, runs and differentiates one batch.
pub fn loss_step<F: Scalar, R: Rng + ?Sized>(
    model: &Model<F>,
    batch: &[(&TokenSequence, &TokenSequence)],
    mu: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(StepStats, ModelParams<F>)> {
    let plans = sample_plans(&model.config, batch.len(), mu, sigma, 0.0, rng)?;
    loss_with_plans(model, batch, &plans)
}

/// First and second moment estimates, one array per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl AdamW {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            lr: c.learning_rate,
            beta1: c.adam_betas.0,
            beta2: c.adam_betas.1,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
            warmup_steps: c.warmup_steps,
        }
    }

    /// Learning rate at 1-based step `t`: linear warmup, then constant.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup_steps as f64
        }
    }

    /// One decoupled-weight-decay Adam update at 1-based step `t`.
    pub fn update<F: Scalar>(&self, t: u64, param: &mut [F], grad: &[F], m: &mut [F], v: &mut [F]) {
        let lr = self.lr_at(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..param.len() {
            let g = grad[i].to_f64_lossless();
            let mi = b1 * m[i].to_f64_lossless() + (1.0 - b1) * g;
            let vi = b2 * v[i].to_f64_lossless() + (1.0 - b2) * g * g;
            m[i] = F::lit(mi);
            v[i] = F::lit(vi);
            let p = param[i].to_f64_lossless();
            let step = (mi / c1) / ((vi / c2).sqrt() + self.eps) + self.weight_decay * p;
            param[i] = F::lit(p - lr * step);
        }
    }
}

/// Applies one optimizer step; refuses non-finite gradients without touching state.
pub fn optimizer_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    opt: &AdamW,
    max_grad_norm: Option<f64>,
) -> Result<()> {
    let mut bad = None;
    let mut sq = 0.0;
    grads.for_each(|name, g| {
        if bad.is_none() && !g.is_finite() {
            bad = Some(name.to_string());
        }
        sq += g.data().iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>();
    });
    if let Some(name) = bad {
        return Err(Error::NonFiniteGradient(name));
    }
    let clip = match max_grad_norm {
        Some(max) if sq.sqrt() > max => F::lit(max / sq.sqrt()),
        _ => F::one(),
    };

    state.step += 1;
    let t = state.step;
    let mut g_list = Vec::new();
    grads.for_each(|_, g| g_list.push(g));
    let mut m_list = Vec::new();
    state.m.for_each_mut(|m| m_list.push(m as *mut Tensor<F>));
    let mut v_list = Vec::new();
    state.v.for_each_mut(|v| v_list.push(v as *mut Tensor<F>));
    let mut i = 0;
    params.for_each_mut(|p| {
        // SAFETY: m and v are distinct structures from params, and each
        // pointer is dereferenced exactly once.
        let (m, v) = unsafe { (&mut *m_list[i], &mut *v_list[i]) };
        let g = g_list[i];
        if clip == F::one() {
            opt.update(t, p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        } else {
            let scaled: Vec<F> = g.data().iter().map(|&x| x * clip).collect();
            opt.update(t, p.data_mut(), &scaled, m.data_mut(), v.data_mut());
        }
        i += 1;
    });
    Ok(())
}

/// Serializable position of a [`SeedRng`] stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &SeedRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> SeedRng {
        let mut rng = SeedRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub model: Model<F>,
    pub optimizer: AdamState<F>,
    pub rng: RngState,
}

const CKPT_MAGIC: &[u8; 4] = b"AVMC";
const CKPT_VERSION: u32 = 1;

fn write_section<F: Scalar>(w: &mut Writer, name: &str, t: &Tensor<F>) {
    w.str(name);
    w.u32(t.shape().len() as u32);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    for &v in t.data() {
        v.write_le(w.raw());
    }
}

fn read_section<F: Scalar>(r: &mut Reader<'_>, expected: &str) -> std::result::Result<Tensor<F>, FormatError> {
    let name = r.str("section name")?;
    if name != expected {
        return Err(FormatError::Malformed(format!("expected section {expected}, found {name}")));
    }
    let rank = r.u32("section rank")? as usize;
    let shape = (0..rank)
        .map(|_| r.u32("section shape").map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let bytes = r.take(n * F::BYTES, "section data")?;
    let data = bytes.chunks_exact(F::BYTES).map(F::read_le).collect();
    Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))
}

impl<F: Scalar> Checkpoint<F> {
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut w = Writer::new(CKPT_MAGIC, CKPT_VERSION);
        w.u8(F::BYTES as u8);
        for v in [
            c.codebook_a,
            c.codebook_b,
            c.len_a,
            c.len_b,
            c.d_model,
            c.n_heads,
            c.enc_layers,
            c.dec_layers,
            c.mlp_ratio,
        ] {
            w.u32(v as u32);
        }
        w.u64(self.optimizer.step);
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        let names = self.model.params.names();
        w.u32(names.len() as u32);
        for (prefix, p) in [
            ("", &self.model.params),
            ("adam.m.", &self.optimizer.m),
            ("adam.v.", &self.optimizer.v),
        ] {
            p.for_each(|n, t| write_section(&mut w, &format!("{prefix}{n}"), t));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, CKPT_MAGIC, CKPT_VERSION)?;
        let width = r.u8("float width")? as usize;
        if width != F::BYTES {
            return Err(Error::Format(FormatError::Malformed(format!(
                "checkpoint stores {}-byte floats, reader expects {}",
                width,
                F::BYTES
            ))));
        }
        let mut f = [0usize; 9];
        for v in f.iter_mut() {
            *v = r.u32("model config")? as usize;
        }
        let config = ModelConfig {
            codebook_a: f[0],
            codebook_b: f[1],
            len_a: f[2],
            len_b: f[3],
            d_model: f[4],
            n_heads: f[5],
            enc_layers: f[6],
            dec_layers: f[7],
            mlp_ratio: f[8],
        };
        config.validate()?;
        let step = r.u64("step")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = r.u128("rng position")?;
        let count = r.u32("section count")? as usize;
        let layout = Model::<F>::init(config, 0)?.params;
        if count != layout.names().len() {
            return Err(Error::Format(FormatError::Malformed("section count".into())));
        }
        let mut sections = Vec::new();
        for prefix in ["", "adam.m.", "adam.v."] {
            let mut failed = None;
            let p = layout.map(|n, _| match read_section::<F>(&mut r, &format!("{prefix}{n}")) {
                Ok(t) => t,
                Err(e) => {
                    failed.get_or_insert(e);
                    Tensor::zeros(vec![0])
                }
            });
            if let Some(e) = failed {
                return Err(e.into());
            }
            sections.push(p);
        }
        r.finish()?;
        let v = sections.pop().expect("three sections");
        let m = sections.pop().expect("three sections");
        let params = sections.pop().expect("three sections");
        let model = Model::from_parts(config, params)?;
        Ok(Self {
            model,
            optimizer: AdamState { m, v, step },
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Stateful training loop over a dataset.
pub struct Trainer<F> {
    pub model: Model<F>,
    pub optimizer: AdamState<F>,
    pub config: TrainConfig,
    rng: SeedRng,
}

impl<F: Scalar> Trainer<F> {
    /// Fresh model initialized from `config.seed`.
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(model_config, config.seed)?;
        let optimizer = AdamState::new(&model.params);
        let mut rng = SeedRng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            optimizer,
            config,
            rng,
        })
    }

    /// Continues from a checkpoint, including its optimizer moments and random stream.
    pub fn resume(checkpoint: Checkpoint<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: checkpoint.model,
            optimizer: checkpoint.optimizer,
            config,
            rng: checkpoint.rng.restore(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    pub fn checkpoint(&self) -> Checkpoint<F> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// One optimizer step on a batch drawn iid with replacement.
    pub fn step(&mut self, dataset: &PairedDataset) -> Result<StepStats> {
        if dataset.is_empty() {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        let c = &self.config;
        let batch: Vec<(&TokenSequence, &TokenSequence)> = (0..c.batch_size)
            .map(|_| {
                let (a, b) = &dataset.pairs[self.rng.random_range(0..dataset.len())];
                (a, b)
            })
            .collect();
        let plans = sample_plans(&self.model.config, batch.len(), c.mu, c.sigma, c.cfg_drop_prob, &mut self.rng)?;
        let (stats, grads) = loss_with_plans(&self.model, &batch, &plans)?;
        optimizer_step(
            &mut self.model.params,
            &grads,
            &mut self.optimizer,
            &AdamW::from_config(c),
            c.max_grad_norm,
        )?;
        Ok(stats)
    }

    /// Runs until `config.steps` total steps, with optional periodic checkpoints
    /// and a `step\tloss\tacc` metrics log.
    pub fn run(
        &mut self,
        dataset: &PairedDataset,
        checkpoint_path: Option<&Path>,
        mut metrics: Option<&mut dyn Write>,
    ) -> Result<Vec<(u64, StepStats)>> {
        let mut history = Vec::new();
        while self.step_count() < self.config.steps {
            let stats = self.step(dataset)?;
            let t = self.step_count();
            history.push((t, stats));
            if self.config.log_interval > 0 && t.is_multiple_of(self.config.log_interval) {
                if let Some(w) = metrics.as_mut() {
                    writeln!(w, "{t}\t{:.6}\t{:.6}", stats.loss, stats.accuracy())
                        .map_err(|e| Error::Io("metrics log".into(), e))?;
                }
            }
            if let Some(path) = checkpoint_path {
                if self.config.checkpoint_interval > 0 && t.is_multiple_of(self.config.checkpoint_interval) {
                    self.checkpoint().save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(history)
    }
}

/// Output locations for [`train`].
#[derive(Debug, Default, Clone)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

/// Trains a fresh model on `dataset` and returns the final checkpoint.
pub fn train<F: Scalar>(
    dataset: &PairedDataset,
    model_config: ModelConfig,
    config: TrainConfig,
    outputs: &TrainOutputs,
) -> Result<Checkpoint<F>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let mut trainer = Trainer::new(model_config, config)?;
    let mut log = match &outputs.metrics {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::Io(p.display().to_string(), e))?),
        None => None,
    };
    trainer.run(
        dataset,
        outputs.checkpoint.as_deref(),
        log.as_mut().map(|f| f as &mut dyn Write),
    )?;
    Ok(trainer.checkpoint())
}

/// Argmax accuracy at masked positions over `pairs` under freshly sampled plans.
pub fn masked_token_accuracy<F: Scalar, R: Rng + ?Sized>(
    model: &Model<F>,
    pairs: &[(TokenSequence, TokenSequence)],
    mu: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<f64> {
    let cfg = &model.config;
    let (mut hit, mut total) = (0, 0);
    for (a, b) in pairs {
        let plan = MaskPlan::build(cfg.len_a, cfg.len_b, mu, sigma, rng)?;
        let ids_a = apply_mask(a.indices(), &plan.mask_a, cfg.mask_id(Modality::A))?;
        let ids_b = apply_mask(b.indices(), &plan.mask_b, cfg.mask_id(Modality::B))?;
        let out = model.forward_full(&ids_a, &ids_b)?;
        hit += count_hits(&out.logits_a, a.indices(), &plan.mask_a);
        hit += count_hits(&out.logits_b, b.indices(), &plan.mask_b);
        total += plan.mask_a.iter().chain(&plan.mask_b).filter(|&&m| m).count();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
