//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p avmgt-core --test acceptance`.

use std::time::{Duration, Instant};

use avmgt::eval::{frechet_distance, mapping_accuracy};
use avmgt::masking::{sample_ratio, MaskPlan, MAX_RATIO, MIN_RATIO};
use avmgt::model::{Model, ModelConfig};
use avmgt::numerics::{grad_check_many, Tape, Tensor};
use avmgt::sampler::{
    generate, generate_traced, generate_unguided, mask_by_random_topk, unmask_count, Anneal, GenerationState,
    Request, SamplerConfig, Schedule, TokenPredictor,
};
use avmgt::tokenizer::{Mapping, Modality, OracleSpec, PairedDataset, TokenSequence};
use avmgt::trainer::{pair_loss_on_tape, train, Checkpoint, TrainConfig, TrainOutputs};
use avmgt::{Error, SeedRng};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("{what} took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn shift_dataset(len: usize, mapping: Mapping, n: usize, seed: u64) -> PairedDataset {
    let oracle = OracleSpec {
        mapping,
        codebook_a: 16,
        codebook_b: 16,
        len_a: len,
        len_b: len,
    };
    PairedDataset::generate(oracle, (8, 8), (1, 2), n, seed).expect("valid oracle")
}

/// Held-out conditions: fresh draws that never occur as a training condition.
fn held_out(train: &PairedDataset, n: usize, seed: u64) -> Vec<TokenSequence> {
    let seen: std::collections::HashSet<&[usize]> = train.pairs.iter().map(|(a, _)| a.indices()).collect();
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, _) = train.oracle.gen_pair(&mut rng);
        if !seen.contains(a.indices()) {
            out.push(a);
        }
    }
    out
}

fn a1_gradient() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        codebook_a: 8,
        codebook_b: 8,
        len_a: 6,
        len_b: 6,
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        mlp_ratio: 4,
    };
    let model = Model::<f64>::init(config, 7).map_err(e2s)?;
    let oracle = OracleSpec {
        mapping: Mapping::Shift { shift: 1 },
        codebook_a: 8,
        codebook_b: 8,
        len_a: 6,
        len_b: 6,
    };
    let mut rng = SeedRng::seed_from_u64(11);
    let pairs: Vec<_> = (0..2).map(|_| oracle.gen_pair(&mut rng)).collect();
    let plans: Vec<MaskPlan> = (0..2)
        .map(|_| MaskPlan::build(6, 6, 0.7, 0.25, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(e2s)?;
    let inputs: Vec<Tensor<f64>> = model.params.tensors().into_iter().cloned().collect();
    let report = grad_check_many(
        |tape: &mut Tape<f64>, vars| {
            let mut it = vars.iter().copied();
            let p = model.params.map(|_, _| it.next().expect("one var per tensor"));
            let mut total = None;
            for ((a, b), plan) in pairs.iter().zip(&plans) {
                let l = pair_loss_on_tape(&model, tape, &p, a, b, plan).map_err(|e| match e {
                    Error::Numerics(n) => n,
                    other => panic!("{other}"),
                })?;
                let s = tape.add(l.loss_a, l.loss_b)?;
                total = Some(match total {
                    None => s,
                    Some(t) => tape.add(t, s)?,
                });
            }
            Ok(tape.scale(total.expect("two pairs"), 0.5))
        },
        &inputs,
        3e-5,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.max_rel_error <= 1e-4, || {
        format!("max rel err {:.3e} at {:?}", report.max_rel_error, report.worst)
    })?;
    within(elapsed, Duration::from_secs(60), "gradient check")?;
    Ok(format!(
        "max rel err {:.2e} over {} coordinates in {:.1}s",
        report.max_rel_error,
        report.coordinates,
        elapsed.as_secs_f64()
    ))
}

fn a2_shift_learning() -> Outcome {
    let start = Instant::now();
    let ds = shift_dataset(16, Mapping::Shift { shift: 3 }, 10_000, 21);
    let conditions = held_out(&ds, 200, 22);
    let model_config = ModelConfig::default();
    let train_config = TrainConfig {
        mu: 0.7,
        batch_size: 32,
        steps: 2000,
        learning_rate: 1e-3,
        seed: 23,
        log_interval: 0,
        ..TrainConfig::default()
    };
    let ckpt = train::<f32>(&ds, model_config, train_config, &TrainOutputs::default()).map_err(e2s)?;
    let sampler = SamplerConfig {
        iterations: 4,
        temperature: 0.0,
        guidance: 1.0,
        seed: 24,
        ..SamplerConfig::default()
    };
    let mut acc = 0.0;
    for c in &conditions {
        let out = generate(&ckpt.model, &Request::AToB(c.clone()), &sampler).map_err(e2s)?;
        acc += mapping_accuracy(&out.b, c, &ds.oracle).map_err(e2s)?;
    }
    acc /= conditions.len() as f64;
    let elapsed = start.elapsed();
    ensure(acc >= 0.99, || format!("mapping accuracy {acc:.4} after {} steps", ckpt.step()))?;
    within(elapsed, Duration::from_secs(15 * 60), "training and evaluation")?;
    Ok(format!(
        "a2b mapping accuracy {acc:.4} after {} steps in {:.0}s",
        ckpt.step(),
        elapsed.as_secs_f64()
    ))
}

fn a3_guidance() -> Outcome {
    let noise = 0.3;
    let ds = shift_dataset(8, Mapping::NoisyShift { shift: 5, noise }, 10_000, 31);
    let conditions = held_out(&ds, 200, 32);
    let model_config = ModelConfig {
        len_a: 8,
        len_b: 8,
        d_model: 32,
        n_heads: 2,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        batch_size: 32,
        steps: 1500,
        learning_rate: 1e-3,
        seed: 33,
        cfg_drop_prob: 0.1,
        log_interval: 0,
        ..TrainConfig::default()
    };
    let ckpt = train::<f32>(&ds, model_config, train_config, &TrainOutputs::default()).map_err(e2s)?;
    let model = &ckpt.model;

    let mean_acc = |s: f64| -> Result<f64, String> {
        let mut acc = 0.0;
        for seed in 0..5u64 {
            let cfg = SamplerConfig {
                guidance: s,
                seed,
                ..SamplerConfig::default()
            };
            for c in &conditions {
                let out = generate(model, &Request::AToB(c.clone()), &cfg).map_err(e2s)?;
                acc += mapping_accuracy(&out.b, c, &ds.oracle).map_err(e2s)?;
            }
        }
        Ok(acc / (5 * conditions.len()) as f64)
    };
    let acc1 = mean_acc(1.0)?;
    let acc3 = mean_acc(3.0)?;
    ensure(acc3 >= acc1, || format!("s=3 accuracy {acc3:.4} below s=1 accuracy {acc1:.4}"))?;

    let unit = SamplerConfig {
        guidance: 1.0,
        seed: 99,
        ..SamplerConfig::default()
    };
    for c in &conditions {
        let req = Request::AToB(c.clone());
        let guided = generate(model, &req, &unit).map_err(e2s)?;
        let plain = generate_unguided(model, &req, &unit).map_err(e2s)?;
        ensure(guided == plain, || "s=1 differs from the unguided path".into())?;
        ensure(guided.forward_passes == unit.iterations, || {
            format!("s=1 used {} forward passes for {} iterations", guided.forward_passes, unit.iterations)
        })?;
    }
    Ok(format!(
        "mean accuracy s=1 {acc1:.4}, s=3 {acc3:.4}; s=1 bit-identical to unguided over 200 conditions"
    ))
}

fn a4_topk_oracles() -> Outcome {
    let mut rng = SeedRng::seed_from_u64(41);
    for case in 0..1000 {
        let len = rng.random_range(1..64);
        let probs: Vec<f64> = (0..len).map(|_| rng.random_range(1e-4..1.0)).collect();
        let k = rng.random_range(0..=len);
        let got = mask_by_random_topk(k, &probs, 0.0, &mut rng).map_err(e2s)?;
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&i, &j| probs[i].total_cmp(&probs[j]));
        let mut expected = vec![false; len];
        for &i in &order[..k] {
            expected[i] = true;
        }
        ensure(got == expected, || format!("case {case}: {got:?} vs sort oracle {expected:?}"))?;
    }

    let probs = [0.1, 0.3, 0.6];
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for k in 1..=2 {
        let mut freq = [0usize; 3];
        let mut sampler_rng = SeedRng::seed_from_u64(42 + k as u64);
        for _ in 0..n {
            let m = mask_by_random_topk(k, &probs, 1.0, &mut sampler_rng).map_err(e2s)?;
            for (f, &b) in freq.iter_mut().zip(&m) {
                *f += b as usize;
            }
        }
        // Direct simulation: Gumbel noise by inverse CDF, then the k smallest scores.
        let mut sim = [0usize; 3];
        let mut oracle_rng = SeedRng::seed_from_u64(142 + k as u64);
        for _ in 0..n {
            let mut scored: Vec<(f64, usize)> = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let u: f64 = oracle_rng.random_range(f64::MIN_POSITIVE..1.0);
                    (p.ln() - (-u.ln()).ln(), i)
                })
                .collect();
            scored.sort_by(|x, y| x.0.total_cmp(&y.0));
            for &(_, i) in &scored[..k] {
                sim[i] += 1;
            }
        }
        for i in 0..3 {
            let d = (freq[i] as f64 - sim[i] as f64).abs() / n as f64;
            worst = worst.max(d);
            ensure(d <= 0.01, || format!("k={k} position {i}: {} vs {}", freq[i], sim[i]))?;
        }
    }
    Ok(format!("10^3 sort-oracle cases exact; Gumbel frequencies within {worst:.4}"))
}

/// Stand-in predictor whose logits are a fixed hash of the inputs.
struct HashPredictor {
    config: ModelConfig,
    salt: u64,
}

impl TokenPredictor for HashPredictor {
    type Elem = f64;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, a: &[usize], b: &[usize]) -> avmgt::Result<(Tensor<f64>, Tensor<f64>)> {
        let mut h = self.salt;
        for &v in a.iter().chain(b) {
            h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(v as u64 + 1);
        }
        let mut rng = SeedRng::seed_from_u64(h);
        let mut table = |len: usize, c: usize| {
            let data = (0..len * c).map(|_| rng.random_range(-3.0..3.0)).collect();
            Tensor::new(vec![len, c], data).expect("shape")
        };
        let la = table(self.config.len_a, self.config.codebook_a);
        let lb = table(self.config.len_b, self.config.codebook_b);
        Ok((la, lb))
    }
}

fn a5_schedule_invariants() -> Outcome {
    let mut rng = SeedRng::seed_from_u64(51);
    let lengths = [8usize, 16, 265];
    let iterations = [1usize, 4, 15, 30];
    let mut runs = 0;
    for &len in &lengths {
        for &n in &iterations {
            for schedule in [Schedule::Cosine, Schedule::Linear] {
                let counts: Vec<usize> = (0..n)
                    .map(|t| unmask_count(len, t, n, schedule))
                    .collect::<Result<_, _>>()
                    .map_err(e2s)?;
                ensure(counts.windows(2).all(|w| w[1] <= w[0]), || {
                    format!("schedule L={len} N={n} increases: {counts:?}")
                })?;
                ensure(counts[n - 1] == 0, || format!("schedule L={len} N={n} ends at {}", counts[n - 1]))?;
            }
        }
    }
    while runs < 1000 {
        let len = lengths[runs % 3];
        let n = iterations[(runs / 3) % 4];
        let config = ModelConfig {
            codebook_a: 8,
            codebook_b: 8,
            len_a: len,
            len_b: len,
            ..ModelConfig::default()
        };
        let predictor = HashPredictor { config, salt: runs as u64 };
        let rand_seq = |m: Modality, rng: &mut SeedRng| {
            TokenSequence::new(m, (0..len).map(|_| rng.random_range(0..8)).collect(), 8).expect("in range")
        };
        let a = rand_seq(Modality::A, &mut rng);
        let b = rand_seq(Modality::B, &mut rng);
        let request = match runs % 4 {
            0 => Request::AToB(a.clone()),
            1 => Request::BToA(b.clone()),
            2 => Request::Cogen,
            _ => {
                let target = if rng.random() { Modality::A } else { Modality::B };
                let region = (0..len).filter(|_| rng.random_bool(0.4)).collect();
                Request::Inpaint {
                    a: a.clone(),
                    b: b.clone(),
                    target,
                    region,
                }
            }
        };
        let cfg = SamplerConfig {
            iterations: n,
            temperature: rng.random_range(0.0..10.0),
            anneal: if rng.random() { Anneal::Constant } else { Anneal::LinearDecay },
            guidance: if rng.random() { 1.0 } else { 3.0 },
            schedule: if rng.random() { Schedule::Cosine } else { Schedule::Linear },
            seed: rng.random(),
            ..SamplerConfig::default()
        };
        let mut trace: Vec<GenerationState> = Vec::new();
        let out = generate_traced(&predictor, &request, &cfg, |s| trace.push(s.clone())).map_err(e2s)?;
        let tag = format!("run {runs} ({} L={len} N={n})", request.mode_name());
        let empty_inpaint = matches!(&request, Request::Inpaint { region, .. } if region.is_empty());
        if !empty_inpaint {
            ensure(trace.len() == n, || format!("{tag}: {} iterations", trace.len()))?;
            let last = trace.last().expect("non-empty");
            ensure(last.masked(Modality::A) + last.masked(Modality::B) == 0, || {
                format!("{tag}: masked positions remain after t=N-1")
            })?;
        }
        for w in trace.windows(2) {
            for m in [Modality::A, Modality::B] {
                ensure(w[1].masked(m) <= w[0].masked(m), || format!("{tag}: masked count grew"))?;
                for i in 0..len {
                    if w[0].committed(m)[i] {
                        ensure(w[1].committed(m)[i] && w[1].ids(m)[i] == w[0].ids(m)[i], || {
                            format!("{tag}: committed position {i} changed")
                        })?;
                    }
                }
            }
        }
        match &request {
            Request::AToB(c) => ensure(&out.a == c, || format!("{tag}: condition changed"))?,
            Request::BToA(c) => ensure(&out.b == c, || format!("{tag}: condition changed"))?,
            Request::Inpaint { target, region, .. } => {
                let other = target.other();
                ensure(out.get(other) == if other == Modality::A { &a } else { &b }, || {
                    format!("{tag}: condition modality changed")
                })?;
                let orig = if *target == Modality::A { &a } else { &b };
                for i in (0..len).filter(|i| !region.contains(i)) {
                    ensure(out.get(*target).indices()[i] == orig.indices()[i], || {
                        format!("{tag}: non-region position {i} changed")
                    })?;
                }
            }
            Request::Cogen => {}
        }
        runs += 1;
    }
    Ok(format!("{runs} randomized runs over L in {lengths:?}, N in {iterations:?}"))
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn a6_truncated_gaussian() -> Outcome {
    let sigma = 0.25;
    let mut notes = Vec::new();
    for (mu, seed) in [(0.7, 61u64), (0.55, 62)] {
        let density = |x: f64| (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp();
        let z = simpson(density, MIN_RATIO, MAX_RATIO, 10_000);
        let expected = simpson(|x| x * density(x), MIN_RATIO, MAX_RATIO, 10_000) / z;
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut sum = 0.0;
        for _ in 0..100_000 {
            let r = sample_ratio(mu, sigma, &mut rng).map_err(e2s)?;
            ensure((MIN_RATIO..=MAX_RATIO).contains(&r), || format!("draw {r} outside bounds"))?;
            sum += r;
        }
        let mean = sum / 1e5;
        ensure((mean - expected).abs() <= 0.02, || {
            format!("mu={mu}: empirical mean {mean:.4} vs quadrature {expected:.4}")
        })?;
        notes.push(format!("mu={mu}: {mean:.4} vs {expected:.4}"));
    }
    Ok(notes.join("; "))
}

fn normal_rows(n: usize, d: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| mean + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect()
}

fn a7_frechet() -> Outcome {
    let x = normal_rows(2000, 8, 0.0, 71);
    let same = frechet_distance(&x, &x).map_err(e2s)?;
    ensure(same.abs() <= 1e-6, || format!("FD of identical sets {same:e}"))?;

    let p = normal_rows(100_000, 1, 0.0, 72);
    let q = normal_rows(100_000, 1, 1.0, 73);
    let fd = frechet_distance(&p, &q).map_err(e2s)?;
    ensure((fd - 1.0).abs() <= 0.05, || format!("N(0,1) vs N(1,1) gave {fd:.4}"))?;

    let y = normal_rows(1500, 8, 0.3, 74);
    let xy = frechet_distance(&x, &y).map_err(e2s)?;
    let yx = frechet_distance(&y, &x).map_err(e2s)?;
    ensure((xy - yx).abs() <= 1e-9, || format!("asymmetric: {xy} vs {yx}"))?;
    Ok(format!("identical {same:.1e}; unit shift {fd:.4}; |FD(x,y)-FD(y,x)| {:.1e}", (xy - yx).abs()))
}

fn a8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d1 = shift_dataset(8, Mapping::NoisyShift { shift: 2, noise: 0.2 }, 500, 81);
    let d2 = shift_dataset(8, Mapping::NoisyShift { shift: 2, noise: 0.2 }, 500, 81);
    ensure(d1.to_bytes() == d2.to_bytes(), || "dataset generation not deterministic".into())?;
    let path = dir.path().join("data.bin");
    d1.save(&path).map_err(e2s)?;
    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = PairedDataset::load(&path).map_err(e2s)?;
    ensure(loaded == d1 && loaded.to_bytes() == on_disk, || "dataset round trip not byte-exact".into())?;

    let model_config = ModelConfig {
        len_a: 8,
        len_b: 8,
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 4,
        steps: 20,
        seed: 82,
        log_interval: 0,
        ..TrainConfig::default()
    };
    let c1 = train::<f32>(&d1, model_config, cfg.clone(), &TrainOutputs::default()).map_err(e2s)?;
    let c2 = train::<f32>(&loaded, model_config, cfg, &TrainOutputs::default()).map_err(e2s)?;
    ensure(c1.to_bytes() == c2.to_bytes(), || "checkpoints differ between identical runs".into())?;

    let ck = dir.path().join("model.ckpt");
    c1.save(&ck).map_err(e2s)?;
    let back = Checkpoint::<f32>::load(&ck).map_err(e2s)?;
    for (a, b) in d1.pairs.iter().take(8) {
        let masked_b = vec![16; 8];
        let x = c1.model.forward_full(a.indices(), &masked_b).map_err(e2s)?;
        let y = back.model.forward_full(a.indices(), &masked_b).map_err(e2s)?;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&x.logits_b) == bits(&y.logits_b) && bits(&x.logits_a) == bits(&y.logits_a), || {
            "restored checkpoint gives different logits".into()
        })?;
        let z = back.model.forward_full(a.indices(), b.indices()).map_err(e2s)?;
        let w = c1.model.forward_full(a.indices(), b.indices()).map_err(e2s)?;
        ensure(z == w, || "restored checkpoint gives different logits".into())?;
    }
    Ok("datasets, checkpoints and probe logits bit-identical".into())
}

fn a9_masking_contract() -> Outcome {
    let config = ModelConfig {
        codebook_a: 8,
        codebook_b: 8,
        len_a: 6,
        len_b: 6,
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        mlp_ratio: 2,
    };
    let model = Model::<f64>::init(config, 91).map_err(e2s)?;
    let mut rng = SeedRng::seed_from_u64(92);
    let mut checked = 0;
    for _ in 0..50 {
        let ids = |rng: &mut SeedRng| (0..6).map(|_| rng.random_range(0..8)).collect::<Vec<usize>>();
        let (ia, ib) = (ids(&mut rng), ids(&mut rng));
        let plan = MaskPlan::with_ratios(6, 6, 0.5, 0.34, &mut rng).map_err(e2s)?;
        let perturb = |ids: &[usize], mask: &[bool], rng: &mut SeedRng| -> Vec<usize> {
            ids.iter()
                .zip(mask)
                .map(|(&t, &m)| if m { t } else { (t + rng.random_range(1..8)) % 8 })
                .collect()
        };
        let (ta, tb) = (perturb(&ia, &plan.mask_a, &mut rng), perturb(&ib, &plan.mask_b, &mut rng));
        let input_a = TokenSequence::new(Modality::A, ia, 8).map_err(e2s)?;
        let input_b = TokenSequence::new(Modality::B, ib, 8).map_err(e2s)?;
        let mut results = Vec::new();
        for (targets_a, targets_b) in [(input_a.indices().to_vec(), input_b.indices().to_vec()), (ta, tb)] {
            // Model input is built from the originals; only the scored targets differ.
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let l = pair_loss_on_tape(&model, &mut tape, &p, &input_a, &input_b, &plan).map_err(e2s)?;
            let wa: Vec<f64> = plan.mask_a.iter().map(|&m| m as u8 as f64).collect();
            let wb: Vec<f64> = plan.mask_b.iter().map(|&m| m as u8 as f64).collect();
            let la = tape.cross_entropy(l.out.logits_a, &targets_a, &wa).map_err(|e| e.to_string())?;
            let lb = tape.cross_entropy(l.out.logits_b, &targets_b, &wb).map_err(|e| e.to_string())?;
            let total = tape.add(la, lb).map_err(|e| e.to_string())?;
            let grads = tape.backward(total).map_err(|e| e.to_string())?;
            let mut all = Vec::new();
            p.for_each(|_, v| all.push(grads.get(*v).cloned()));
            results.push((tape.value(total).item().to_bits(), all));
        }
        ensure(results[0] == results[1], || "target perturbation at unmasked positions changed loss or gradients".into())?;

        // Logit perturbation at unmasked rows, on a free logits leaf.
        let logits = Tensor::<f64>::new(vec![6, 8], (0..48).map(|_| rng.random_range(-4.0..4.0)).collect())
            .map_err(|e| e.to_string())?;
        let mut bumped = logits.clone();
        for (i, &m) in plan.mask_a.iter().enumerate() {
            if !m {
                for v in &mut bumped.data_mut()[i * 8..(i + 1) * 8] {
                    *v += rng.random_range(-50.0..50.0);
                }
            }
        }
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..8)).collect();
        let w: Vec<f64> = plan.mask_a.iter().map(|&m| m as u8 as f64).collect();
        let run = |x: &Tensor<f64>| -> Result<(u64, Vec<u64>), String> {
            let mut tape = Tape::new();
            let v = tape.param(x.clone());
            let l = tape.cross_entropy(v, &targets, &w).map_err(|e| e.to_string())?;
            let g = tape.backward(l).map_err(|e| e.to_string())?;
            let grad = g.get(v).map(|t| t.data().iter().map(|x| x.to_bits()).collect()).unwrap_or_default();
            Ok((tape.value(l).item().to_bits(), grad))
        };
        ensure(run(&logits)? == run(&bumped)?, || "logit perturbation at unmasked rows changed loss or gradient".into())?;
        checked += 1;
    }
    Ok(format!("{checked} random plans: loss and gradients bit-identical under unmasked perturbations"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("A1", a1_gradient),
        ("A2", a2_shift_learning),
        ("A3", a3_guidance),
        ("A4", a4_topk_oracles),
        ("A5", a5_schedule_invariants),
        ("A6", a6_truncated_gaussian),
        ("A7", a7_frechet),
        ("A8", a8_determinism),
        ("A9", a9_masking_contract),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failed = 0;
    for (id, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS  {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("{id} FAIL  {reason} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
