//! Iterative unmasking with optional classifier-free guidance.
//!
//! Every iteration samples a token for each still-masked target position,
//! scores the samples by (Gumbel-perturbed) log-probability, and returns the
//! least confident ones to the mask id. The rest are committed for good.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{Scalar, Tensor};
use crate::tokenizer::{Modality, TokenSequence};
use crate::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Cosine,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anneal {
    Constant,
    LinearDecay,
}

/// Where the guided combination is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuidanceSpace {
    Logit,
    /// Combine probabilities, clamp negatives to zero and renormalize.
    Probability,
}

macro_rules! text_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::InvalidConfig(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

text_enum!(Schedule, "schedule", Schedule::Cosine => "cosine", Schedule::Linear => "linear");
text_enum!(Anneal, "anneal mode", Anneal::Constant => "constant", Anneal::LinearDecay => "linear-decay");
text_enum!(GuidanceSpace, "guidance space", GuidanceSpace::Logit => "logit", GuidanceSpace::Probability => "probability");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Number of unmasking iterations N.
    pub iterations: usize,
    /// Base temperature T of the confidence noise.
    pub temperature: f64,
    pub anneal: Anneal,
    /// Guidance factor s; 1 disables guidance.
    pub guidance: f64,
    pub guidance_space: GuidanceSpace,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            temperature: 9.0,
            anneal: Anneal::LinearDecay,
            guidance: 3.0,
            guidance_space: GuidanceSpace::Logit,
            schedule: Schedule::Cosine,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.guidance >= 1.0 && self.guidance.is_finite()) {
            return Err(Error::InvalidConfig(format!("guidance factor {} must be >= 1", self.guidance)));
        }
        Ok(())
    }

    /// Confidence-noise temperature at iteration `t`.
    pub fn temperature_at(&self, t: usize) -> f64 {
        match self.anneal {
            Anneal::Constant => self.temperature,
            Anneal::LinearDecay => self.temperature * (1.0 - (t + 1) as f64 / self.iterations as f64),
        }
    }
}

/// Positions of `len` still masked after iteration `t` of `n`.
pub fn unmask_count(len: usize, t: usize, n: usize, schedule: Schedule) -> Result<usize> {
    if n == 0 || t >= n {
        return Err(Error::InvalidConfig(format!("iteration {t} outside 0..{n}")));
    }
    if t + 1 == n {
        return Ok(0);
    }
    Ok(match schedule {
        Schedule::Cosine => {
            let r = (len as f64 * (FRAC_PI_2 * (t + 1) as f64 / n as f64).cos()).floor();
            (r.max(0.0) as usize).min(len)
        }
        Schedule::Linear => len * (n - t - 1) / n,
    })
}

/// Marks the `mask_len` least confident positions, where confidence is
/// `ln p + temperature * g` with `g` standard Gumbel. Positions tied with the
/// cutoff are marked too.
pub fn mask_by_random_topk<R: Rng + ?Sized>(
    mask_len: usize,
    probs: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if mask_len > probs.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot mask {mask_len} of {} positions",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let conf: Vec<f64> = probs
        .iter()
        .map(|&p| p.ln() + temperature * gumbel.sample(rng))
        .collect();
    if mask_len == 0 {
        return Ok(vec![false; probs.len()]);
    }
    let mut sorted = conf.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[mask_len - 1];
    Ok(conf.iter().map(|&c| c <= cutoff).collect())
}

/// One categorical draw per row of `probs`.
pub fn sample_tokens<R: Rng + ?Sized>(probs: &[Vec<f64>], rng: &mut R) -> Result<Vec<usize>> {
    probs
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidConfig(format!("probability row sums to {total}")));
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(row.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        })
        .collect()
}

/// `s * cond + (1 - s) * uncond`; `s = 1` returns `cond` unchanged.
pub fn cfg_logits<F: Scalar>(cond: &Tensor<F>, uncond: &Tensor<F>, s: f64) -> Result<Tensor<F>> {
    if cond.shape() != uncond.shape() {
        return Err(Error::Shape(format!(
            "guidance inputs {:?} and {:?} differ",
            cond.shape(),
            uncond.shape()
        )));
    }
    if s == 1.0 {
        return Ok(cond.clone());
    }
    let (sc, su) = (F::lit(s), F::lit(1.0 - s));
    let data = cond.data().iter().zip(uncond.data()).map(|(&c, &u)| sc * c + su * u).collect();
    Ok(Tensor::new(cond.shape().to_vec(), data)?)
}

/// Probability-space guidance: combine, clamp at zero, renormalize each row.
pub fn cfg_probs(cond: &[Vec<f64>], uncond: &[Vec<f64>], s: f64) -> Result<Vec<Vec<f64>>> {
    if cond.len() != uncond.len() || cond.iter().zip(uncond).any(|(c, u)| c.len() != u.len()) {
        return Err(Error::Shape("guidance inputs differ in shape".into()));
    }
    if s == 1.0 {
        return Ok(cond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| {
            let mixed: Vec<f64> = c.iter().zip(u).map(|(&c, &u)| (s * c + (1.0 - s) * u).max(0.0)).collect();
            let z: f64 = mixed.iter().sum();
            if z > 0.0 {
                mixed.iter().map(|v| v / z).collect()
            } else {
                c.clone()
            }
        })
        .collect())
}

fn softmax_rows<F: Scalar>(logits: &Tensor<F>) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row: Vec<f64> = logits.row(i).iter().map(|v| v.to_f64_lossless()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Anything that maps (possibly masked) id sequences to per-position logits.
pub trait TokenPredictor {
    type Elem: Scalar;

    fn config(&self) -> &ModelConfig;

    /// Logits over both modalities with every position visible to the encoder.
    fn predict(&self, ids_a: &[usize], ids_b: &[usize]) -> Result<(Tensor<Self::Elem>, Tensor<Self::Elem>)>;
}

impl<F: Scalar> TokenPredictor for Model<F> {
    type Elem = F;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, ids_a: &[usize], ids_b: &[usize]) -> Result<(Tensor<F>, Tensor<F>)> {
        let out = self.forward_full(ids_a, ids_b)?;
        Ok((out.logits_a, out.logits_b))
    }
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    /// Generate B given A.
    AToB(TokenSequence),
    /// Generate A given B.
    BToA(TokenSequence),
    /// Generate both from scratch.
    Cogen,
    /// Regenerate `region` positions of `target`; everything else is kept.
    Inpaint {
        a: TokenSequence,
        b: TokenSequence,
        target: Modality,
        region: Vec<usize>,
    },
}

impl Request {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Request::AToB(_) => "a2b",
            Request::BToA(_) => "b2a",
            Request::Cogen => "cogen",
            Request::Inpaint { .. } => "inpaint",
        }
    }

    /// The modality whose full masking yields the unconditional pass, if any.
    pub fn condition_modality(&self) -> Option<Modality> {
        match self {
            Request::AToB(_) => Some(Modality::A),
            Request::BToA(_) => Some(Modality::B),
            Request::Cogen => None,
            Request::Inpaint { target, .. } => Some(target.other()),
        }
    }
}

/// Ids and commitment flags during generation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationState {
    pub ids_a: Vec<usize>,
    pub ids_b: Vec<usize>,
    pub committed_a: Vec<bool>,
    pub committed_b: Vec<bool>,
    /// Conditioning positions, never rewritten.
    pub frozen_a: Vec<bool>,
    pub frozen_b: Vec<bool>,
    /// Completed iterations.
    pub iteration: usize,
}

impl GenerationState {
    fn initial(cfg: &ModelConfig, request: &Request) -> Result<Self> {
        let (la, lb) = (cfg.len_a, cfg.len_b);
        let (ma, mb) = (cfg.mask_id(Modality::A), cfg.mask_id(Modality::B));
        let check = |seq: &TokenSequence, m: Modality| -> Result<()> {
            if seq.modality() != m {
                return Err(Error::Shape(format!("expected a modality {m} sequence, got {}", seq.modality())));
            }
            if seq.len() != cfg.len(m) {
                return Err(Error::DimMismatch {
                    expected: cfg.len(m),
                    found: seq.len(),
                });
            }
            if let Some(&bad) = seq.indices().iter().find(|&&i| i >= cfg.codebook(m)) {
                return Err(Error::TokenOutOfRange {
                    index: bad,
                    codebook: cfg.codebook(m),
                });
            }
            Ok(())
        };
        let open = |len: usize, mask: usize| (vec![mask; len], vec![false; len], vec![false; len]);
        let given = |seq: &TokenSequence| (seq.indices().to_vec(), vec![true; seq.len()], vec![true; seq.len()]);
        let ((ids_a, committed_a, frozen_a), (ids_b, committed_b, frozen_b)) = match request {
            Request::AToB(a) => {
                check(a, Modality::A)?;
                (given(a), open(lb, mb))
            }
            Request::BToA(b) => {
                check(b, Modality::B)?;
                (open(la, ma), given(b))
            }
            Request::Cogen => (open(la, ma), open(lb, mb)),
            Request::Inpaint { a, b, target, region } => {
                check(a, Modality::A)?;
                check(b, Modality::B)?;
                let mut sides = [given(a), given(b)];
                let (side, len, mask) = match target {
                    Modality::A => (&mut sides[0], la, ma),
                    Modality::B => (&mut sides[1], lb, mb),
                };
                for &p in region {
                    if p >= len {
                        return Err(Error::Shape(format!("inpaint position {p} outside 0..{len}")));
                    }
                    side.0[p] = mask;
                    side.1[p] = false;
                    side.2[p] = false;
                }
                let [sa, sb] = sides;
                (sa, sb)
            }
        };
        Ok(Self {
            ids_a,
            ids_b,
            committed_a,
            committed_b,
            frozen_a,
            frozen_b,
            iteration: 0,
        })
    }

    pub fn ids(&self, m: Modality) -> &[usize] {
        match m {
            Modality::A => &self.ids_a,
            Modality::B => &self.ids_b,
        }
    }

    pub fn committed(&self, m: Modality) -> &[bool] {
        match m {
            Modality::A => &self.committed_a,
            Modality::B => &self.committed_b,
        }
    }

    pub fn frozen(&self, m: Modality) -> &[bool] {
        match m {
            Modality::A => &self.frozen_a,
            Modality::B => &self.frozen_b,
        }
    }

    /// Count of uncommitted positions in `m`.
    pub fn masked(&self, m: Modality) -> usize {
        self.committed(m).iter().filter(|&&c| !c).count()
    }

    fn side_mut(&mut self, m: Modality) -> (&mut Vec<usize>, &mut Vec<bool>) {
        match m {
            Modality::A => (&mut self.ids_a, &mut self.committed_a),
            Modality::B => (&mut self.ids_b, &mut self.committed_b),
        }
    }
}

/// Result of one generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub a: TokenSequence,
    pub b: TokenSequence,
    /// Predictor evaluations performed.
    pub forward_passes: usize,
}

impl Generation {
    pub fn get(&self, m: Modality) -> &TokenSequence {
        match m {
            Modality::A => &self.a,
            Modality::B => &self.b,
        }
    }
}

/// Runs the sampler to completion.
pub fn generate<P: TokenPredictor>(predictor: &P, request: &Request, config: &SamplerConfig) -> Result<Generation> {
    generate_traced(predictor, request, config, |_| {})
}

/// The sampler with guidance removed entirely: one conditional pass per iteration.
pub fn generate_unguided<P: TokenPredictor>(
    predictor: &P,
    request: &Request,
    config: &SamplerConfig,
) -> Result<Generation> {
    run(predictor, request, config, false, |_| {})
}

/// As [`generate`], calling `observe` with the state after every iteration.
pub fn generate_traced<P: TokenPredictor>(
    predictor: &P,
    request: &Request,
    config: &SamplerConfig,
    observe: impl FnMut(&GenerationState),
) -> Result<Generation> {
    run(predictor, request, config, true, observe)
}

fn run<P: TokenPredictor>(
    predictor: &P,
    request: &Request,
    config: &SamplerConfig,
    guided: bool,
    mut observe: impl FnMut(&GenerationState),
) -> Result<Generation> {
    config.validate()?;
    let mcfg = *predictor.config();
    let mut state = GenerationState::initial(&mcfg, request)?;
    let mut rng = SeedRng::seed_from_u64(config.seed);
    let targets: Vec<(Modality, usize)> = [Modality::A, Modality::B]
        .into_iter()
        .map(|m| (m, state.masked(m)))
        .filter(|&(_, n)| n > 0)
        .collect();
    let uncond_side = request.condition_modality().filter(|_| guided && config.guidance > 1.0);
    let mut passes = 0;

    if !targets.is_empty() {
        for t in 0..config.iterations {
            let (cond_a, cond_b) = predictor.predict(&state.ids_a, &state.ids_b)?;
            passes += 1;
            let uncond = match uncond_side {
                Some(m) => {
                    let blank = vec![mcfg.mask_id(m); mcfg.len(m)];
                    let pair = match m {
                        Modality::A => predictor.predict(&blank, &state.ids_b)?,
                        Modality::B => predictor.predict(&state.ids_a, &blank)?,
                    };
                    passes += 1;
                    Some(pair)
                }
                None => None,
            };
            let temperature = config.temperature_at(t);
            for &(m, total) in &targets {
                let cond = if m == Modality::A { &cond_a } else { &cond_b };
                let probs = match &uncond {
                    None => softmax_rows(cond),
                    Some((ua, ub)) => {
                        let u = if m == Modality::A { ua } else { ub };
                        match config.guidance_space {
                            GuidanceSpace::Logit => softmax_rows(&cfg_logits(cond, u, config.guidance)?),
                            GuidanceSpace::Probability => {
                                cfg_probs(&softmax_rows(cond), &softmax_rows(u), config.guidance)?
                            }
                        }
                    }
                };
                let pool: Vec<usize> = (0..mcfg.len(m)).filter(|&i| !state.committed(m)[i]).collect();
                if pool.is_empty() {
                    continue;
                }
                let rows: Vec<Vec<f64>> = pool.iter().map(|&i| probs[i].clone()).collect();
                let sampled = sample_tokens(&rows, &mut rng)?;
                let chosen: Vec<f64> = sampled.iter().zip(&rows).map(|(&k, row)| row[k]).collect();
                let remaining = unmask_count(total, t, config.iterations, config.schedule)?.min(pool.len());
                let remask = mask_by_random_topk(remaining, &chosen, temperature, &mut rng)?;
                let (ids, committed) = state.side_mut(m);
                for ((&pos, &tok), &back) in pool.iter().zip(&sampled).zip(&remask) {
                    if !back {
                        ids[pos] = tok;
                        committed[pos] = true;
                    }
                }
            }
            state.iteration = t + 1;
            observe(&state);
        }
    }

    if state.masked(Modality::A) + state.masked(Modality::B) != 0 {
        return Err(Error::Shape("generation ended with masked positions".into()));
    }
    Ok(Generation {
        a: TokenSequence::new(Modality::A, state.ids_a, mcfg.codebook_a)?,
        b: TokenSequence::new(Modality::B, state.ids_b, mcfg.codebook_b)?,
        forward_passes: passes,
    })
}
