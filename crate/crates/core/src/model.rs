//! The two-modality masked transformer.
//!
//! Each modality has its own embedding table with one extra row for the mask
//! token. Kept tokens from both modalities go through a full-attention
//! encoder; the result is scattered back to full length, dropped and masked
//! positions are filled with a single learnable mask embedding shared by both
//! modalities, and a full-attention decoder runs over the whole concatenated
//! sequence. Logits are dot products with each modality's embedding rows
//! (mask row excluded).

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::Modality;
use crate::SeedRng;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub codebook_a: usize,
    pub codebook_b: usize,
    pub len_a: usize,
    pub len_b: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            codebook_a: 16,
            codebook_b: 16,
            len_a: 16,
            len_b: 16,
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("codebook_a", self.codebook_a),
            ("codebook_b", self.codebook_b),
            ("len_a", self.len_a),
            ("len_b", self.len_b),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn codebook(&self, m: Modality) -> usize {
        match m {
            Modality::A => self.codebook_a,
            Modality::B => self.codebook_b,
        }
    }

    pub fn len(&self, m: Modality) -> usize {
        match m {
            Modality::A => self.len_a,
            Modality::B => self.len_b,
        }
    }

    /// Id of the mask token for modality `m` (one past the last codeword).
    pub fn mask_id(&self, m: Modality) -> usize {
        self.codebook(m)
    }

    fn hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    /// Learnable scalars in one transformer block.
    pub fn block_param_count(&self) -> usize {
        let d = self.d_model;
        let h = self.hidden();
        4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d)
    }
}

/// Total learnable scalars for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let embeddings = (config.codebook_a + 1 + config.codebook_b + 1) * d;
    let positional = 2 * (config.len_a + config.len_b) * d;
    let modality = 4 * d;
    let mask = d;
    let blocks = (config.enc_layers + config.dec_layers) * config.block_param_count();
    let norms = 2 * 2 * d;
    embeddings + positional + modality + mask + blocks + norms
}

/// Parameters of one pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub qkv_w: T,
    pub qkv_b: T,
    pub proj_w: T,
    pub proj_b: T,
    pub ln2_g: T,
    pub ln2_b: T,
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
}

impl<T> Block<T> {
    fn fields(&self) -> [(&'static str, &T); 12] {
        [
            ("ln1.g", &self.ln1_g),
            ("ln1.b", &self.ln1_b),
            ("attn.qkv.w", &self.qkv_w),
            ("attn.qkv.b", &self.qkv_b),
            ("attn.proj.w", &self.proj_w),
            ("attn.proj.b", &self.proj_b),
            ("ln2.g", &self.ln2_g),
            ("ln2.b", &self.ln2_b),
            ("mlp.fc1.w", &self.fc1_w),
            ("mlp.fc1.b", &self.fc1_b),
            ("mlp.fc2.w", &self.fc2_w),
            ("mlp.fc2.b", &self.fc2_b),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.qkv_w,
            &mut self.qkv_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> Block<U> {
        let mut g = |name: &str, t: &T| f(&format!("{prefix}.{name}"), t);
        Block {
            ln1_g: g("ln1.g", &self.ln1_g),
            ln1_b: g("ln1.b", &self.ln1_b),
            qkv_w: g("attn.qkv.w", &self.qkv_w),
            qkv_b: g("attn.qkv.b", &self.qkv_b),
            proj_w: g("attn.proj.w", &self.proj_w),
            proj_b: g("attn.proj.b", &self.proj_b),
            ln2_g: g("ln2.g", &self.ln2_g),
            ln2_b: g("ln2.b", &self.ln2_b),
            fc1_w: g("mlp.fc1.w", &self.fc1_w),
            fc1_b: g("mlp.fc1.b", &self.fc1_b),
            fc2_w: g("mlp.fc2.w", &self.fc2_w),
            fc2_b: g("mlp.fc2.b", &self.fc2_b),
        }
    }
}

/// Every learnable array of the model. `T` is a [`Tensor`] for stored
/// parameters, a [`Var`] once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    /// `(C_a + 1) × d`; row `C_a` is the mask token.
    pub embed_a: T,
    pub embed_b: T,
    pub pos_enc_a: T,
    pub pos_enc_b: T,
    pub pos_dec_a: T,
    pub pos_dec_b: T,
    pub modality_enc_a: T,
    pub modality_enc_b: T,
    pub modality_dec_a: T,
    pub modality_dec_b: T,
    /// Shared decoder-side mask embedding.
    pub mask_embed: T,
    pub encoder: Vec<Block<T>>,
    pub enc_norm_g: T,
    pub enc_norm_b: T,
    pub decoder: Vec<Block<T>>,
    pub dec_norm_g: T,
    pub dec_norm_b: T,
}

pub type ModelParams<F> = Params<Tensor<F>>;

impl<T> Params<T> {
    /// Visits every array with its stable name, in storage order.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&str, &'a T)) {
        let head: [(&str, &T); 11] = [
            ("embed_a", &self.embed_a),
            ("embed_b", &self.embed_b),
            ("pos_enc_a", &self.pos_enc_a),
            ("pos_enc_b", &self.pos_enc_b),
            ("pos_dec_a", &self.pos_dec_a),
            ("pos_dec_b", &self.pos_dec_b),
            ("modality_enc_a", &self.modality_enc_a),
            ("modality_enc_b", &self.modality_enc_b),
            ("modality_dec_a", &self.modality_dec_a),
            ("modality_dec_b", &self.modality_dec_b),
            ("mask_embed", &self.mask_embed),
        ];
        for (n, t) in head {
            f(n, t);
        }
        for (i, b) in self.encoder.iter().enumerate() {
            for (n, t) in b.fields() {
                f(&format!("enc.{i}.{n}"), t);
            }
        }
        f("enc_norm.g", &self.enc_norm_g);
        f("enc_norm.b", &self.enc_norm_b);
        for (i, b) in self.decoder.iter().enumerate() {
            for (n, t) in b.fields() {
                f(&format!("dec.{i}.{n}"), t);
            }
        }
        f("dec_norm.g", &self.dec_norm_g);
        f("dec_norm.b", &self.dec_norm_b);
    }

    /// Mutable visit in the same order as [`Params::for_each`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for t in [
            &mut self.embed_a,
            &mut self.embed_b,
            &mut self.pos_enc_a,
            &mut self.pos_enc_b,
            &mut self.pos_dec_a,
            &mut self.pos_dec_b,
            &mut self.modality_enc_a,
            &mut self.modality_enc_b,
            &mut self.modality_dec_a,
            &mut self.modality_dec_b,
            &mut self.mask_embed,
        ] {
            f(t);
        }
        for b in &mut self.encoder {
            for t in b.fields_mut() {
                f(t);
            }
        }
        f(&mut self.enc_norm_g);
        f(&mut self.enc_norm_b);
        for b in &mut self.decoder {
            for t in b.fields_mut() {
                f(t);
            }
        }
        f(&mut self.dec_norm_g);
        f(&mut self.dec_norm_b);
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        Params {
            embed_a: f("embed_a", &self.embed_a),
            embed_b: f("embed_b", &self.embed_b),
            pos_enc_a: f("pos_enc_a", &self.pos_enc_a),
            pos_enc_b: f("pos_enc_b", &self.pos_enc_b),
            pos_dec_a: f("pos_dec_a", &self.pos_dec_a),
            pos_dec_b: f("pos_dec_b", &self.pos_dec_b),
            modality_enc_a: f("modality_enc_a", &self.modality_enc_a),
            modality_enc_b: f("modality_enc_b", &self.modality_enc_b),
            modality_dec_a: f("modality_dec_a", &self.modality_dec_a),
            modality_dec_b: f("modality_dec_b", &self.modality_dec_b),
            mask_embed: f("mask_embed", &self.mask_embed),
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("enc.{i}"), &mut f))
                .collect(),
            enc_norm_g: f("enc_norm.g", &self.enc_norm_g),
            enc_norm_b: f("enc_norm.b", &self.enc_norm_b),
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("dec.{i}"), &mut f))
                .collect(),
            dec_norm_g: f("dec_norm.g", &self.dec_norm_g),
            dec_norm_b: f("dec_norm.b", &self.dec_norm_b),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|n, _| out.push(n.to_string()));
        out
    }
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape().to_vec()))
    }

    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::new();
        self.for_each(|_, t| out.push(t));
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, t| ok &= t.is_finite());
        ok
    }
}

fn gaussian<F: Scalar, R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| F::lit(normal.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn xavier<F: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

fn ones<F: Scalar>(n: usize) -> Tensor<F> {
    Tensor::new(vec![n], vec![F::one(); n]).expect("shape matches")
}

fn init_block<F: Scalar, R: Rng>(d: usize, h: usize, rng: &mut R) -> Block<Tensor<F>> {
    Block {
        ln1_g: ones(d),
        ln1_b: Tensor::zeros(vec![d]),
        qkv_w: xavier(d, 3 * d, rng),
        qkv_b: Tensor::zeros(vec![3 * d]),
        proj_w: xavier(d, d, rng),
        proj_b: Tensor::zeros(vec![d]),
        ln2_g: ones(d),
        ln2_b: Tensor::zeros(vec![d]),
        fc1_w: xavier(d, h, rng),
        fc1_b: Tensor::zeros(vec![h]),
        fc2_w: xavier(h, d, rng),
        fc2_b: Tensor::zeros(vec![d]),
    }
}

/// Decoder logits and probabilities for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<F> {
    /// `L_a × C_a`
    pub logits_a: Tensor<F>,
    /// `L_b × C_b`
    pub logits_b: Tensor<F>,
    pub probs_a: Tensor<F>,
    pub probs_b: Tensor<F>,
    /// Final decoder states, `L_a × d` and `L_b × d`.
    pub hidden_a: Tensor<F>,
    pub hidden_b: Tensor<F>,
}

impl<F: Scalar> ForwardOutput<F> {
    pub fn logits(&self, m: Modality) -> &Tensor<F> {
        match m {
            Modality::A => &self.logits_a,
            Modality::B => &self.logits_b,
        }
    }

    pub fn probs(&self, m: Modality) -> &Tensor<F> {
        match m {
            Modality::A => &self.probs_a,
            Modality::B => &self.probs_b,
        }
    }
}

/// Tape handles produced by [`Model::forward_on_tape`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits_a: Var,
    pub logits_b: Var,
    pub hidden_a: Var,
    pub hidden_b: Var,
}

/// Input ids (mask id allowed) and encoder keep sets for one pair.
#[derive(Clone, Copy, Debug)]
pub struct ForwardInput<'a> {
    pub ids_a: &'a [usize],
    pub ids_b: &'a [usize],
    pub keep_a: &'a [usize],
    pub keep_b: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Scalar> Model<F> {
    /// Random initialization: N(0, 0.02) for embeddings, Xavier-uniform for
    /// linear weights, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::seed_from_u64(seed);
        let d = config.d_model;
        let h = config.hidden();
        let g = |shape: Vec<usize>, rng: &mut SeedRng| gaussian::<F, _>(shape, INIT_STD, rng);
        let params = Params {
            embed_a: g(vec![config.codebook_a + 1, d], &mut rng),
            embed_b: g(vec![config.codebook_b + 1, d], &mut rng),
            pos_enc_a: g(vec![config.len_a, d], &mut rng),
            pos_enc_b: g(vec![config.len_b, d], &mut rng),
            pos_dec_a: g(vec![config.len_a, d], &mut rng),
            pos_dec_b: g(vec![config.len_b, d], &mut rng),
            modality_enc_a: g(vec![d], &mut rng),
            modality_enc_b: g(vec![d], &mut rng),
            modality_dec_a: g(vec![d], &mut rng),
            modality_dec_b: g(vec![d], &mut rng),
            mask_embed: g(vec![d], &mut rng),
            encoder: (0..config.enc_layers).map(|_| init_block(d, h, &mut rng)).collect(),
            enc_norm_g: ones(d),
            enc_norm_b: Tensor::zeros(vec![d]),
            decoder: (0..config.dec_layers).map(|_| init_block(d, h, &mut rng)).collect(),
            dec_norm_g: ones(d),
            dec_norm_b: Tensor::zeros(vec![d]),
        };
        Ok(Self { config, params })
    }

    /// Checks that `params` has exactly the arrays `config` implies.
    pub fn from_parts(config: ModelConfig, params: ModelParams<F>) -> Result<Self> {
        config.validate()?;
        let reference = Self::init(config, 0)?;
        let mut expected = Vec::new();
        reference.params.for_each(|n, t| expected.push((n.to_string(), t.shape().to_vec())));
        let mut found = Vec::new();
        params.for_each(|n, t| found.push((n.to_string(), t.shape().to_vec())));
        if expected != found {
            return Err(Error::Shape("parameter layout does not match model config".into()));
        }
        Ok(Self { config, params })
    }

    /// Registers every parameter on `tape`, with gradients if `trainable`.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Params<Var> {
        self.params.map(|_, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    fn validate_input(&self, input: &ForwardInput<'_>) -> Result<(Vec<usize>, Vec<usize>)> {
        let c = &self.config;
        let mut keeps = Vec::with_capacity(2);
        for (m, ids, keep) in [
            (Modality::A, input.ids_a, input.keep_a),
            (Modality::B, input.ids_b, input.keep_b),
        ] {
            let len = c.len(m);
            if ids.len() != len {
                return Err(Error::Shape(format!(
                    "modality {m}: expected {len} ids, got {}",
                    ids.len()
                )));
            }
            if let Some(&bad) = ids.iter().find(|&&i| i > c.mask_id(m)) {
                return Err(Error::TokenOutOfRange {
                    index: bad,
                    codebook: c.codebook(m) + 1,
                });
            }
            let mut sorted = keep.to_vec();
            sorted.sort_unstable();
            if let Some(&bad) = sorted.iter().find(|&&k| k >= len) {
                return Err(Error::Shape(format!("modality {m}: keep position {bad} out of range")));
            }
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Shape(format!("modality {m}: duplicate keep positions")));
            }
            keeps.push(sorted);
        }
        let keep_b = keeps.pop().expect("two modalities");
        let keep_a = keeps.pop().expect("two modalities");
        Ok((keep_a, keep_b))
    }

    /// Records the full forward pass on `tape` using bound parameters `p`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        p: &Params<Var>,
        input: ForwardInput<'_>,
    ) -> Result<ForwardVars> {
        let (keep_a, keep_b) = self.validate_input(&input)?;
        let c = &self.config;
        let (la, lb) = (c.len_a, c.len_b);

        // Encoder input: token + positional + modality embedding, kept positions only.
        let xa = tape.gather(p.embed_a, input.ids_a)?;
        let xa = tape.add(xa, p.pos_enc_a)?;
        let xa = tape.add_bias(xa, p.modality_enc_a)?;
        let xb = tape.gather(p.embed_b, input.ids_b)?;
        let xb = tape.add(xb, p.pos_enc_b)?;
        let xb = tape.add_bias(xb, p.modality_enc_b)?;
        let full = tape.concat_rows(xa, xb)?;
        let kept: Vec<usize> = keep_a.iter().copied().chain(keep_b.iter().map(|&k| la + k)).collect();
        let mut h = tape.gather(full, &kept)?;
        for block in &p.encoder {
            h = self.block(tape, block, h)?;
        }
        let h = tape.layer_norm(h, p.enc_norm_g, p.enc_norm_b, F::lit(LN_EPS))?;

        // Back to full length; dropped or mask-token positions take the shared mask embedding.
        let mut plan = vec![None; la + lb];
        for (rank, &pos) in kept.iter().enumerate() {
            let is_mask = if pos < la {
                input.ids_a[pos] == c.mask_id(Modality::A)
            } else {
                input.ids_b[pos - la] == c.mask_id(Modality::B)
            };
            if !is_mask {
                plan[pos] = Some(rank);
            }
        }
        let y = tape.fill_rows(h, p.mask_embed, &plan)?;
        let ya = tape.slice_rows(y, 0, la)?;
        let ya = tape.add(ya, p.pos_dec_a)?;
        let ya = tape.add_bias(ya, p.modality_dec_a)?;
        let yb = tape.slice_rows(y, la, lb)?;
        let yb = tape.add(yb, p.pos_dec_b)?;
        let yb = tape.add_bias(yb, p.modality_dec_b)?;
        let mut y = tape.concat_rows(ya, yb)?;
        for block in &p.decoder {
            y = self.block(tape, block, y)?;
        }
        let y = tape.layer_norm(y, p.dec_norm_g, p.dec_norm_b, F::lit(LN_EPS))?;

        // Tied heads against the codebook rows of each embedding table.
        let hidden_a = tape.slice_rows(y, 0, la)?;
        let hidden_b = tape.slice_rows(y, la, lb)?;
        let ea = tape.slice_rows(p.embed_a, 0, c.codebook_a)?;
        let ea = tape.transpose(ea)?;
        let logits_a = tape.matmul(hidden_a, ea)?;
        let eb = tape.slice_rows(p.embed_b, 0, c.codebook_b)?;
        let eb = tape.transpose(eb)?;
        let logits_b = tape.matmul(hidden_b, eb)?;
        Ok(ForwardVars {
            logits_a,
            logits_b,
            hidden_a,
            hidden_b,
        })
    }

    fn block(&self, tape: &mut Tape<F>, b: &Block<Var>, x: Var) -> Result<Var> {
        let eps = F::lit(LN_EPS);
        let h = tape.layer_norm(x, b.ln1_g, b.ln1_b, eps)?;
        let qkv = tape.matmul(h, b.qkv_w)?;
        let qkv = tape.add_bias(qkv, b.qkv_b)?;
        let a = tape.attention(qkv, self.config.n_heads)?;
        let o = tape.matmul(a, b.proj_w)?;
        let o = tape.add_bias(o, b.proj_b)?;
        let x = tape.add(x, o)?;
        let h = tape.layer_norm(x, b.ln2_g, b.ln2_b, eps)?;
        let f = tape.matmul(h, b.fc1_w)?;
        let f = tape.add_bias(f, b.fc1_b)?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, b.fc2_w)?;
        let f = tape.add_bias(f, b.fc2_b)?;
        Ok(tape.add(x, f)?)
    }

    /// Inference-only forward pass.
    pub fn forward(&self, input: ForwardInput<'_>) -> Result<ForwardOutput<F>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let vars = self.forward_on_tape(&mut tape, &p, input)?;
        let probs_a = tape.softmax(vars.logits_a)?;
        let probs_b = tape.softmax(vars.logits_b)?;
        Ok(ForwardOutput {
            logits_a: tape.value(vars.logits_a).clone(),
            logits_b: tape.value(vars.logits_b).clone(),
            probs_a: tape.value(probs_a).clone(),
            probs_b: tape.value(probs_b).clone(),
            hidden_a: tape.value(vars.hidden_a).clone(),
            hidden_b: tape.value(vars.hidden_b).clone(),
        })
    }

    /// Forward pass with every position kept in the encoder.
    pub fn forward_full(&self, ids_a: &[usize], ids_b: &[usize]) -> Result<ForwardOutput<F>> {
        let keep_a: Vec<usize> = (0..self.config.len_a).collect();
        let keep_b: Vec<usize> = (0..self.config.len_b).collect();
        self.forward(ForwardInput {
            ids_a,
            ids_b,
            keep_a: &keep_a,
            keep_b: &keep_b,
        })
    }

    /// Input embedding rows for `ids` (mask id allowed).
    pub fn embed_tokens(&self, m: Modality, ids: &[usize]) -> Result<Tensor<F>> {
        let table = match m {
            Modality::A => &self.params.embed_a,
            Modality::B => &self.params.embed_b,
        };
        let mut tape = Tape::new();
        let t = tape.constant(table.clone());
        let out = tape.gather(t, ids).map_err(|_| Error::TokenOutOfRange {
            index: ids.iter().copied().max().unwrap_or(0),
            codebook: self.config.codebook(m) + 1,
        })?;
        Ok(tape.value(out).clone())
    }
}
