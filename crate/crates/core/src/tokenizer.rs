//! Fixed random-codebook vector quantizer and the synthetic paired-token source.
//!
//! Token ids are 0-based: a codebook of size `C` yields ids in `0..C`, and the
//! id `C` is reserved for the mask token inside the model. (Written 1..=C in
//! the usual one-based notation.)

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::binfmt::{FormatError, Reader, Writer};
use crate::error::{Error, Result};
use crate::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    A,
    B,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::A => Modality::B,
            Modality::B => Modality::A,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::A => "a",
            Modality::B => "b",
        })
    }
}

/// Codebook indices for one modality. Never holds the mask id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    modality: Modality,
    indices: Vec<usize>,
}

impl TokenSequence {
    pub fn new(modality: Modality, indices: Vec<usize>, codebook_size: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook_size) {
            return Err(Error::TokenOutOfRange {
                index: bad,
                codebook: codebook_size,
            });
        }
        Ok(Self { modality, indices })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Frozen codebook: `size` unit-norm codewords of width `dim`, reproducible from `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    entries: Vec<f64>,
    seed: u64,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!("codebook size {size} / dim {dim} must be positive")));
        }
        let mut rng = SeedRng::seed_from_u64(seed);
        let mut entries: Vec<f64> = Vec::with_capacity(size * dim);
        while entries.len() < size * dim {
            let mut row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            row.iter_mut().for_each(|v| *v /= norm);
            let duplicate = entries.chunks(dim).any(|e| e == row.as_slice());
            if !duplicate {
                entries.extend_from_slice(&row);
            }
        }
        Ok(Self {
            size,
            dim,
            entries,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest codeword per row of `x` (flat, `L×dim`), ties to the lowest index.
    pub fn quantize(&self, modality: Modality, x: &[f64]) -> Result<TokenSequence> {
        if !x.len().is_multiple_of(self.dim) {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let indices = x
            .chunks(self.dim)
            .map(|row| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, e) in self.entries.chunks(self.dim).enumerate() {
                    let d: f64 = row.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();
        Ok(TokenSequence { modality, indices })
    }

    /// Row `i` of the result is the codeword of `t.indices()[i]`.
    pub fn dequantize(&self, t: &TokenSequence) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(t.len() * self.dim);
        for &i in t.indices() {
            if i >= self.size {
                return Err(Error::TokenOutOfRange {
                    index: i,
                    codebook: self.size,
                });
            }
            out.extend_from_slice(self.entry(i));
        }
        Ok(out)
    }
}

/// How modality B is derived from modality A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mapping {
    /// `b_i = (a_i + shift) mod C_b`
    Shift { shift: usize },
    /// Shift with probability `1 - noise`, otherwise a uniform token.
    NoisyShift { shift: usize, noise: f64 },
    /// `b` is the first `L_b` tokens of `a`.
    BlockCopy,
}

impl Mapping {
    pub fn kind(&self) -> &'static str {
        match self {
            Mapping::Shift { .. } => "shift",
            Mapping::NoisyShift { .. } => "noisy-shift",
            Mapping::BlockCopy => "block-copy",
        }
    }
}

/// Fully determines the joint distribution of a synthetic pair.
/// Modality A is uniform iid over its codebook.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSpec {
    pub mapping: Mapping,
    pub codebook_a: usize,
    pub codebook_b: usize,
    pub len_a: usize,
    pub len_b: usize,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.codebook_a == 0 || self.codebook_b == 0 || self.len_a == 0 || self.len_b == 0 {
            return bad("codebook sizes and lengths must be positive".into());
        }
        if self.codebook_a > u16::MAX as usize || self.codebook_b > u16::MAX as usize {
            return bad("codebook sizes must fit in u16".into());
        }
        if self.len_b > self.len_a {
            return bad(format!("len_b {} exceeds len_a {}", self.len_b, self.len_a));
        }
        match self.mapping {
            Mapping::NoisyShift { noise, .. } if !(0.0..=1.0).contains(&noise) => {
                bad(format!("noise {noise} outside [0, 1]"))
            }
            Mapping::BlockCopy if self.codebook_a > self.codebook_b => {
                bad("block-copy needs codebook_a <= codebook_b".into())
            }
            _ => Ok(()),
        }
    }

    /// The most likely `b` token for condition token `a`.
    pub fn map_token(&self, a: usize) -> usize {
        match self.mapping {
            Mapping::Shift { shift } | Mapping::NoisyShift { shift, .. } => (a + shift) % self.codebook_b,
            Mapping::BlockCopy => a,
        }
    }

    /// Whether every condition token has a unique most-likely target.
    pub fn has_unique_mode(&self) -> bool {
        match self.mapping {
            Mapping::NoisyShift { noise, .. } => noise < 1.0,
            _ => true,
        }
    }

    /// Exact `P(b | a)` as a length-`C_b` vector.
    pub fn posterior(&self, a: usize) -> Result<Vec<f64>> {
        if a >= self.codebook_a {
            return Err(Error::TokenOutOfRange {
                index: a,
                codebook: self.codebook_a,
            });
        }
        let c = self.codebook_b;
        let mut p = vec![0.0; c];
        match self.mapping {
            Mapping::Shift { .. } | Mapping::BlockCopy => p[self.map_token(a)] = 1.0,
            Mapping::NoisyShift { noise, .. } => {
                p.iter_mut().for_each(|v| *v = noise / c as f64);
                p[self.map_token(a)] += 1.0 - noise;
            }
        }
        Ok(p)
    }

    /// Draws one pair.
    pub fn gen_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (TokenSequence, TokenSequence) {
        let a: Vec<usize> = (0..self.len_a).map(|_| rng.random_range(0..self.codebook_a)).collect();
        let b = a[..self.len_b]
            .iter()
            .map(|&t| match self.mapping {
                Mapping::NoisyShift { noise, .. } if noise > 0.0 && rng.random::<f64>() < noise => {
                    rng.random_range(0..self.codebook_b)
                }
                _ => self.map_token(t),
            })
            .collect();
        (
            TokenSequence { modality: Modality::A, indices: a },
            TokenSequence { modality: Modality::B, indices: b },
        )
    }

    /// `key=value` lines describing the mapping (sizes live in the binary header).
    pub fn mapping_text(&self) -> String {
        match self.mapping {
            Mapping::Shift { shift } => format!("kind=shift\nshift={shift}\n"),
            Mapping::NoisyShift { shift, noise } => format!("kind=noisy-shift\nshift={shift}\nnoise={noise}\n"),
            Mapping::BlockCopy => "kind=block-copy\n".to_string(),
        }
    }

    pub fn parse_mapping(text: &str) -> Result<Mapping> {
        let mut kind = None;
        let mut shift = None;
        let mut noise = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("malformed oracle line {line:?}")))?;
            match k.trim() {
                "kind" => kind = Some(v.trim().to_string()),
                "shift" => shift = Some(parse_num::<usize>("shift", v)?),
                "noise" => noise = Some(parse_num::<f64>("noise", v)?),
                other => return Err(Error::InvalidConfig(format!("unknown oracle key {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::InvalidConfig("oracle kind missing".into()))?;
        mapping_from_parts(&kind, shift, noise)
    }
}

pub(crate) fn mapping_from_parts(kind: &str, shift: Option<usize>, noise: Option<f64>) -> Result<Mapping> {
    match kind {
        "shift" => Ok(Mapping::Shift { shift: shift.unwrap_or(0) }),
        "noisy-shift" => Ok(Mapping::NoisyShift {
            shift: shift.unwrap_or(0),
            noise: noise.unwrap_or(0.0),
        }),
        "block-copy" => Ok(Mapping::BlockCopy),
        other => Err(Error::UnknownMapping(other.to_string())),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v:?}")))
}

const DATASET_MAGIC: &[u8; 4] = b"AVTD";
const DATASET_VERSION: u32 = 1;

/// Paired token sequences plus everything needed to reproduce them.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub oracle: OracleSpec,
    pub dim_a: usize,
    pub dim_b: usize,
    pub codebook_seed_a: u64,
    pub codebook_seed_b: u64,
    pub pairs: Vec<(TokenSequence, TokenSequence)>,
}

impl PairedDataset {
    pub fn generate(
        oracle: OracleSpec,
        dims: (usize, usize),
        codebook_seeds: (u64, u64),
        n_pairs: usize,
        seed: u64,
    ) -> Result<Self> {
        oracle.validate()?;
        let mut rng = SeedRng::seed_from_u64(seed);
        let pairs = (0..n_pairs).map(|_| oracle.gen_pair(&mut rng)).collect();
        Ok(Self {
            oracle,
            dim_a: dims.0,
            dim_b: dims.1,
            codebook_seed_a: codebook_seeds.0,
            codebook_seed_b: codebook_seeds.1,
            pairs,
        })
    }

    /// The given pairs under this dataset's oracle and codebook header.
    pub fn with_pairs(&self, pairs: Vec<(TokenSequence, TokenSequence)>) -> Self {
        Self {
            pairs,
            ..self.clone()
        }
    }

    pub fn codebook_a(&self) -> Result<Codebook> {
        Codebook::new(self.oracle.codebook_a, self.dim_a, self.codebook_seed_a)
    }

    pub fn codebook_b(&self) -> Result<Codebook> {
        Codebook::new(self.oracle.codebook_b, self.dim_b, self.codebook_seed_b)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let o = &self.oracle;
        let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
        for v in [o.codebook_a, o.codebook_b, self.dim_a, self.dim_b, o.len_a, o.len_b] {
            w.u32(v as u32);
        }
        w.u64(self.codebook_seed_a);
        w.u64(self.codebook_seed_b);
        w.u64(self.pairs.len() as u64);
        w.str(&o.mapping_text());
        for (a, b) in &self.pairs {
            for &t in a.indices().iter().chain(b.indices()) {
                w.u16(t as u16);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = r.u32("header")? as usize;
        }
        let [codebook_a, codebook_b, dim_a, dim_b, len_a, len_b] = dims;
        let codebook_seed_a = r.u64("header")?;
        let codebook_seed_b = r.u64("header")?;
        let n_pairs = r.u64("header")? as usize;
        let mapping = OracleSpec::parse_mapping(&r.str("oracle spec")?)?;
        let oracle = OracleSpec {
            mapping,
            codebook_a,
            codebook_b,
            len_a,
            len_b,
        };
        oracle.validate()?;
        let expected = n_pairs
            .checked_mul((len_a + len_b) * 2)
            .ok_or_else(|| FormatError::Malformed("pair count overflow".into()))?;
        let payload = r.take(expected, "payload")?;
        r.finish()?;
        let mut tokens = payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as usize);
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let a = TokenSequence::new(Modality::A, tokens.by_ref().take(len_a).collect(), codebook_a)?;
            let b = TokenSequence::new(Modality::B, tokens.by_ref().take(len_b).collect(), codebook_b)?;
            pairs.push((a, b));
        }
        Ok(Self {
            oracle,
            dim_a,
            dim_b,
            codebook_seed_a,
            codebook_seed_b,
            pairs,
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shift_spec(shift: usize) -> OracleSpec {
        OracleSpec {
            mapping: Mapping::Shift { shift },
            codebook_a: 16,
            codebook_b: 16,
            len_a: 3,
            len_b: 3,
        }
    }

    /// Exhaustive nearest neighbour, written without the early-exit structure of `quantize`.
    fn brute_nearest(cb: &Codebook, row: &[f64]) -> usize {
        let dists: Vec<f64> = (0..cb.size())
            .map(|c| cb.entry(c).iter().zip(row).map(|(e, x)| (e - x).powi(2)).sum())
            .collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        dists.iter().position(|&d| d == min).unwrap()
    }

    #[test]
    fn codebook_is_seeded_and_normalized() {
        let a = Codebook::new(16, 8, 7).unwrap();
        let b = Codebook::new(16, 8, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Codebook::new(16, 8, 8).unwrap());
        for i in 0..16 {
            let n: f64 = a.entry(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert_ne!(a.entry(i), a.entry(j));
            }
        }
    }

    #[test]
    fn quantize_exact_codeword_and_tie() {
        let cb = Codebook::new(16, 8, 1).unwrap();
        let t = cb.quantize(Modality::A, cb.entry(5)).unwrap();
        assert_eq!(t.indices(), &[5]);

        // 0.0 is at distance 1 from both entries[2] and entries[7].
        let tie = Codebook {
            size: 8,
            dim: 1,
            entries: vec![10.0, 11.0, -1.0, 12.0, 13.0, 14.0, 15.0, 1.0],
            seed: 0,
        };
        assert_eq!(tie.quantize(Modality::A, &[0.0]).unwrap().indices(), &[2]);
    }

    #[test]
    fn quantize_rejects_dim_mismatch_and_bad_index() {
        let cb = Codebook::new(4, 3, 0).unwrap();
        assert!(matches!(cb.quantize(Modality::A, &[0.0; 4]), Err(Error::DimMismatch { .. })));
        let bad = TokenSequence {
            modality: Modality::A,
            indices: vec![4],
        };
        assert!(matches!(cb.dequantize(&bad), Err(Error::TokenOutOfRange { .. })));
        assert!(TokenSequence::new(Modality::A, vec![0, 4], 4).is_err());
    }

    #[test]
    fn dequantize_single_token() {
        let cb = Codebook::new(16, 8, 2).unwrap();
        let t = TokenSequence::new(Modality::B, vec![3], 16).unwrap();
        assert_eq!(cb.dequantize(&t).unwrap(), cb.entry(3));
    }

    #[test]
    fn quantize_matches_brute_force_on_random_input() {
        let cb = Codebook::new(16, 8, 3).unwrap();
        let mut rng = SeedRng::seed_from_u64(11);
        let x: Vec<f64> = (0..10 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = cb.quantize(Modality::A, &x).unwrap();
        for (i, row) in x.chunks(8).enumerate() {
            assert_eq!(t.indices()[i], brute_nearest(&cb, row));
        }
    }

    #[test]
    fn shift_examples() {
        let spec = shift_spec(3);
        assert_eq!(spec.map_token(0), 3);
        assert_eq!(spec.map_token(5), 8);
        assert_eq!(spec.map_token(15), 2);
        let p = spec.posterior(15).unwrap();
        assert_eq!(p[2], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn noisy_shift_zero_noise_equals_shift() {
        let mut s = shift_spec(3);
        s.len_a = 16;
        s.len_b = 16;
        let mut n = s;
        n.mapping = Mapping::NoisyShift { shift: 3, noise: 0.0 };
        let mut r1 = SeedRng::seed_from_u64(5);
        let mut r2 = SeedRng::seed_from_u64(5);
        for _ in 0..50 {
            let (a1, b1) = s.gen_pair(&mut r1);
            let (a2, b2) = n.gen_pair(&mut r2);
            assert_eq!(a1.indices(), a2.indices());
            assert_eq!(b1.indices(), b2.indices());
        }
        for a in 0..16 {
            assert_eq!(s.posterior(a).unwrap(), n.posterior(a).unwrap());
        }
    }

    #[test]
    fn noisy_shift_monte_carlo_matches_mixture() {
        let spec = OracleSpec {
            mapping: Mapping::NoisyShift { shift: 3, noise: 0.25 },
            codebook_a: 16,
            codebook_b: 16,
            len_a: 1,
            len_b: 1,
        };
        let mut rng = SeedRng::seed_from_u64(99);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let (a, b) = spec.gen_pair(&mut rng);
                b.indices()[0] == (a.indices()[0] + 3) % 16
            })
            .count();
        let expected = 0.75 + 0.25 / 16.0;
        assert!((hits as f64 / n as f64 - expected).abs() <= 0.01);
        assert!((spec.posterior(4).unwrap()[7] - expected).abs() < 1e-15);
    }

    #[test]
    fn posterior_is_normalized_for_all_kinds() {
        for mapping in [
            Mapping::Shift { shift: 5 },
            Mapping::NoisyShift { shift: 1, noise: 0.3 },
            Mapping::NoisyShift { shift: 0, noise: 1.0 },
            Mapping::BlockCopy,
        ] {
            let spec = OracleSpec {
                mapping,
                codebook_a: 16,
                codebook_b: 16,
                len_a: 4,
                len_b: 4,
            };
            for a in 0..16 {
                let p = spec.posterior(a).unwrap();
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn block_copy_takes_prefix() {
        let spec = OracleSpec {
            mapping: Mapping::BlockCopy,
            codebook_a: 8,
            codebook_b: 8,
            len_a: 6,
            len_b: 4,
        };
        let mut rng = SeedRng::seed_from_u64(1);
        let (a, b) = spec.gen_pair(&mut rng);
        assert_eq!(&a.indices()[..4], b.indices());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(OracleSpec::parse_mapping("kind=rotate\n"), Err(Error::UnknownMapping(_))));
    }

    #[test]
    fn dataset_round_trip_and_corruption() {
        let ds = PairedDataset::generate(shift_spec(3), (8, 8), (1, 2), 50, 7).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(PairedDataset::from_bytes(&bytes).unwrap(), ds);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] ^= 1;
        assert!(matches!(
            PairedDataset::from_bytes(&bad),
            Err(Error::Format(FormatError::Checksum { .. }))
        ));
        assert!(PairedDataset::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn large_dataset_round_trips_quickly() {
        let mut spec = shift_spec(3);
        spec.len_a = 16;
        spec.len_b = 16;
        let ds = PairedDataset::generate(spec, (8, 8), (1, 2), 10_000, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let start = std::time::Instant::now();
        ds.save(&path).unwrap();
        let back = PairedDataset::load(&path).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert_eq!(back, ds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn dequantize_round_trips(indices in proptest::collection::vec(0usize..16, 1..24), seed in 0u64..4) {
            let cb = Codebook::new(16, 8, seed).unwrap();
            let t = TokenSequence::new(Modality::A, indices, 16).unwrap();
            let x = cb.dequantize(&t).unwrap();
            prop_assert_eq!(cb.quantize(Modality::A, &x).unwrap(), t);
        }

        #[test]
        fn quantize_matches_exhaustive_scan(x in proptest::collection::vec(-2.0f64..2.0, 8..=64)) {
            let cb = Codebook::new(16, 4, 9).unwrap();
            let n = x.len() / 4 * 4;
            let t = cb.quantize(Modality::B, &x[..n]).unwrap();
            for (i, row) in x[..n].chunks(4).enumerate() {
                prop_assert_eq!(t.indices()[i], brute_nearest(&cb, row));
            }
        }

        #[test]
        fn gen_pair_is_reproducible(seed in any::<u64>()) {
            let spec = OracleSpec {
                mapping: Mapping::NoisyShift { shift: 2, noise: 0.4 },
                codebook_a: 16,
                codebook_b: 16,
                len_a: 8,
                len_b: 8,
            };
            let mut r1 = SeedRng::seed_from_u64(seed);
            let mut r2 = SeedRng::seed_from_u64(seed);
            prop_assert_eq!(spec.gen_pair(&mut r1), spec.gen_pair(&mut r2));
        }
    }
}
