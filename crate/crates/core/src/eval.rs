//! Metrics against the synthetic oracle, and the Fréchet distance between
//! Gaussian fits of two feature sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sampler::{generate, Request, SamplerConfig, TokenPredictor};
use crate::tokenizer::{Codebook, Modality, OracleSpec, TokenSequence};

/// Regularizer added to both covariances before taking roots.
pub const FD_EPS: f64 = 1e-6;

fn split_pair<'s>(
    x: &'s TokenSequence,
    y: &'s TokenSequence,
) -> Result<(&'s TokenSequence, &'s TokenSequence)> {
    match (x.modality(), y.modality()) {
        (Modality::A, Modality::B) => Ok((x, y)),
        (Modality::B, Modality::A) => Ok((y, x)),
        _ => Err(Error::Shape("need one sequence of each modality".into())),
    }
}

/// Fraction of B positions equal to the oracle's most likely image of the
/// aligned A token. Argument order does not matter; one sequence must be of
/// each modality.
pub fn mapping_accuracy(generated: &TokenSequence, condition: &TokenSequence, oracle: &OracleSpec) -> Result<f64> {
    if !oracle.has_unique_mode() {
        return Err(Error::Unsupported(format!(
            "{} oracle has no unique target per token",
            oracle.mapping.kind()
        )));
    }
    let (a, b) = split_pair(generated, condition)?;
    if b.len() != oracle.len_b || a.len() != oracle.len_a {
        return Err(Error::DimMismatch {
            expected: oracle.len_b,
            found: b.len(),
        });
    }
    let hits = a
        .indices()
        .iter()
        .zip(b.indices())
        .filter(|(&x, &y)| oracle.map_token(x) == y)
        .count();
    Ok(hits as f64 / b.len() as f64)
}

/// Mean of per-pair accuracies over many (generated, condition) pairs.
pub fn mean_mapping_accuracy<'s>(
    pairs: impl IntoIterator<Item = (&'s TokenSequence, &'s TokenSequence)>,
    oracle: &OracleSpec,
) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (g, c) in pairs {
        sum += mapping_accuracy(g, c, oracle)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidConfig("no pairs to score".into()));
    }
    Ok(sum / n as f64)
}

/// Divergence of add-one-smoothed empirical `P(b | a)` from the oracle
/// posterior, averaged over observed (a, b) positions.
///
/// For each condition token the term is `sum_b p(b|a) ln(p(b|a) / q(b|a))`
/// with `q = (count + 1) / (n_a + C_b)`, which stays finite even when the
/// oracle is one-hot.
pub fn conditional_kl_from_pairs(
    observations: impl IntoIterator<Item = (usize, usize)>,
    oracle: &OracleSpec,
) -> Result<f64> {
    let cb = oracle.codebook_b;
    let mut counts: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (a, b) in observations {
        if a >= oracle.codebook_a || b >= cb {
            return Err(Error::TokenOutOfRange {
                index: a.max(b),
                codebook: oracle.codebook_a.min(cb),
            });
        }
        counts.entry(a).or_insert_with(|| vec![0; cb])[b] += 1;
    }
    let total: u64 = counts.values().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidConfig("no observations".into()));
    }
    let mut kl = 0.0;
    for (&a, row) in &counts {
        let n_a: u64 = row.iter().sum();
        let p = oracle.posterior(a)?;
        let term: f64 = p
            .iter()
            .zip(row)
            .filter(|(&pb, _)| pb > 0.0)
            .map(|(&pb, &c)| pb * (pb * (n_a + cb as u64) as f64 / (c + 1) as f64).ln())
            .sum();
        kl += term * n_a as f64 / total as f64;
    }
    Ok(kl.max(0.0))
}

/// Runs a2b generation over `conditions` (cycling, with a fresh seed per
/// pass) until at least `n_samples` positions are collected, then scores them
/// with [`conditional_kl_from_pairs`].
pub fn empirical_conditional_kl<P: TokenPredictor>(
    predictor: &P,
    sampler: &SamplerConfig,
    oracle: &OracleSpec,
    conditions: &[TokenSequence],
    n_samples: usize,
) -> Result<f64> {
    if n_samples < 1000 {
        return Err(Error::InvalidConfig(format!("n_samples {n_samples} below 1000")));
    }
    if conditions.is_empty() {
        return Err(Error::InvalidConfig("no conditions".into()));
    }
    let mut obs = Vec::with_capacity(n_samples);
    let mut k = 0u64;
    while obs.len() < n_samples {
        for cond in conditions {
            let cfg = SamplerConfig {
                seed: sampler.seed.wrapping_add(k),
                ..*sampler
            };
            k += 1;
            let out = generate(predictor, &Request::AToB(cond.clone()), &cfg)?;
            obs.extend(cond.indices().iter().copied().zip(out.b.indices().iter().copied()));
            if obs.len() >= n_samples {
                break;
            }
        }
    }
    conditional_kl_from_pairs(obs, oracle)
}

/// One feature row per sequence: its codewords concatenated.
pub fn token_features(sequences: &[TokenSequence], codebook: &Codebook) -> Result<Vec<Vec<f64>>> {
    sequences.iter().map(|s| codebook.dequantize(s)).collect()
}

fn fit(rows: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    for i in 0..d {
        cov[(i, i)] += FD_EPS;
    }
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

/// `|mu_x - mu_y|^2 + tr(Sx + Sy - 2 (Sx^1/2 Sy Sx^1/2)^1/2)`.
pub fn frechet_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidConfig("each feature set needs at least 2 rows".into()));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().chain(y).find(|r| r.len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let (mx, sx) = fit(x, d);
    let (my, sy) = fit(y, d);
    let root = sym_sqrt(&sx);
    let cross = trace_sqrt(&(&root * &sy * &root));
    let fd = (&mx - &my).norm_squared() + sx.trace() + sy.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

/// Line-oriented `key=value` evaluation summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub mapping_accuracy: Option<f64>,
    pub oracle_kl: Option<f64>,
    pub frechet_distance: Option<f64>,
    /// Configuration echo, written verbatim in order.
    pub echo: Vec<(String, String)>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.echo {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in [
            ("mapping_accuracy", self.mapping_accuracy),
            ("oracle_kl", self.oracle_kl),
            ("frechet_distance", self.frechet_distance),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k}={v}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("malformed report line {line:?}")))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad value for {k}: {v}")))
            };
            match k {
                "mapping_accuracy" => r.mapping_accuracy = Some(num()?),
                "oracle_kl" => r.oracle_kl = Some(num()?),
                "frechet_distance" => r.frechet_distance = Some(num()?),
                _ => r.echo.push((k.to_string(), v.to_string())),
            }
        }
        Ok(r)
    }
}
