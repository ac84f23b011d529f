//! Seeded table-based autoregressive toy models and the simulated cost model.
//!
//! Rows are generated lazily from `(seed, context key)` and memoized, so a
//! model of any order costs memory only for the contexts actually visited,
//! and a row never depends on the order in which contexts were queried.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::prob::{self, ProbVector, RngStream, TokenId};
use crate::{Error, Result};

/// Spread of the random row construction: weights are `exp(sharpness * u)`.
pub const DEFAULT_SHARPNESS: f64 = 4.0;

/// Fraction of entries zeroed when `allow_zeros` is set.
const ZERO_FRACTION: f64 = 0.25;

const PERTURBATION_SALT: u64 = 0x0070_6572_7475_7262;
const ZERO_MASK_SALT: u64 = 0x7A65_726F_6D61_736B;

#[derive(Debug)]
enum RowSource {
    Random {
        seed: u64,
        sharpness: f64,
        allow_zeros: bool,
    },
    /// `(1 - eps) * base + eps * perturbation`, optionally with a seeded zero mask.
    Mixture {
        base: Arc<ToyLm>,
        perturbation: Arc<ToyLm>,
        eps: f64,
        zero_seed: Option<u64>,
    },
    Table {
        rows: HashMap<Vec<TokenId>, ProbVector>,
        default: ProbVector,
    },
}

/// Autoregressive model whose next-token law depends on the last `order` tokens.
#[derive(Debug)]
pub struct ToyLm {
    vocab_size: usize,
    order: usize,
    source: RowSource,
    cache: RwLock<HashMap<Vec<TokenId>, Arc<ProbVector>>>,
}

impl ToyLm {
    fn with_source(vocab_size: usize, order: usize, source: RowSource) -> Result<Self> {
        if vocab_size < 1 || vocab_size > u32::MAX as usize {
            return Err(Error::Domain(format!("vocab_size {vocab_size} out of range")));
        }
        Ok(Self {
            vocab_size,
            order,
            source,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Strictly positive rows from seeded exponentiated uniforms.
    pub fn random(vocab_size: usize, order: usize, seed: u64) -> Result<Self> {
        Self::random_with(vocab_size, order, seed, DEFAULT_SHARPNESS, false)
    }

    pub fn random_with(
        vocab_size: usize,
        order: usize,
        seed: u64,
        sharpness: f64,
        allow_zeros: bool,
    ) -> Result<Self> {
        if !(sharpness >= 0.0) || !sharpness.is_finite() {
            return Err(Error::Domain(format!("sharpness must be finite and >= 0, got {sharpness}")));
        }
        Self::with_source(
            vocab_size,
            order,
            RowSource::Random {
                seed,
                sharpness,
                allow_zeros,
            },
        )
    }

    /// Explicit rows keyed by the last `min(order, len)` context tokens;
    /// unlisted keys use `default`.
    pub fn from_table(
        vocab_size: usize,
        order: usize,
        rows: HashMap<Vec<TokenId>, ProbVector>,
        default: ProbVector,
    ) -> Result<Self> {
        for (key, row) in rows.iter().chain(std::iter::once((&Vec::new(), &default))) {
            if row.vocab_size() != vocab_size {
                return Err(Error::DimensionMismatch {
                    left: row.vocab_size(),
                    right: vocab_size,
                });
            }
            if key.len() > order || key.iter().any(|t| t.index() >= vocab_size) {
                return Err(Error::Domain(format!("invalid table key {key:?}")));
            }
        }
        Self::with_source(vocab_size, order, RowSource::Table { rows, default })
    }

    /// Every context maps to the same point mass.
    pub fn constant(vocab_size: usize, token: TokenId) -> Result<Self> {
        Self::from_table(vocab_size, 0, HashMap::new(), ProbVector::point_mass(vocab_size, token)?)
    }

    /// Per-context mixture `(1 - eps) * base + eps * perturbation`. With
    /// `zero_seed`, a seeded quarter of each row is zeroed and the row renormalized.
    pub fn mixture(
        base: Arc<ToyLm>,
        perturbation: Arc<ToyLm>,
        eps: f64,
        zero_seed: Option<u64>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Domain(format!("eps = {eps} outside [0,1]")));
        }
        if base.vocab_size != perturbation.vocab_size {
            return Err(Error::DimensionMismatch {
                left: base.vocab_size,
                right: perturbation.vocab_size,
            });
        }
        let order = base.order.max(perturbation.order);
        let vocab_size = base.vocab_size;
        Self::with_source(
            vocab_size,
            order,
            RowSource::Mixture {
                base,
                perturbation,
                eps,
                zero_seed,
            },
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn key<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        &context[context.len().saturating_sub(self.order)..]
    }

    /// Next-token distribution given the full context.
    pub fn next_dist(&self, context: &[TokenId]) -> Result<Arc<ProbVector>> {
        if let Some(bad) = context.iter().find(|t| t.index() >= self.vocab_size) {
            return Err(Error::Domain(format!(
                "context token {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let key = self.key(context);
        if let Some(row) = self.cache.read().expect("row cache poisoned").get(key) {
            return Ok(Arc::clone(row));
        }
        let row = Arc::new(self.build_row(key)?);
        let mut cache = self.cache.write().expect("row cache poisoned");
        Ok(Arc::clone(cache.entry(key.to_vec()).or_insert(row)))
    }

    fn build_row(&self, key: &[TokenId]) -> Result<ProbVector> {
        match &self.source {
            RowSource::Random {
                seed,
                sharpness,
                allow_zeros,
            } => {
                let mut rng = RngStream::for_tokens(*seed, key);
                let mut weights: Vec<f64> =
                    (0..self.vocab_size).map(|_| (sharpness * rng.next_f64()).exp()).collect();
                if *allow_zeros {
                    apply_zero_mask(&mut weights, RngStream::for_tokens(*seed ^ ZERO_MASK_SALT, key));
                }
                ProbVector::from_weights(weights)
            }
            RowSource::Mixture {
                base,
                perturbation,
                eps,
                zero_seed,
            } => {
                let b = base.next_dist(key)?;
                let e = perturbation.next_dist(key)?;
                let mixed: Vec<f64> = b
                    .probs()
                    .iter()
                    .zip(e.probs())
                    .map(|(x, y)| (1.0 - eps) * x + eps * y)
                    .collect();
                match zero_seed {
                    Some(zs) => {
                        let mut weights = mixed;
                        apply_zero_mask(&mut weights, RngStream::for_tokens(*zs, key));
                        ProbVector::from_weights(weights)
                    }
                    // a convex combination of two distributions needs no renormalization
                    None => ProbVector::new(mixed),
                }
            }
            RowSource::Table { rows, default } => Ok(rows.get(key).unwrap_or(default).clone()),
        }
    }
}

/// Zeroes a seeded subset of entries, always keeping the largest one.
fn apply_zero_mask(weights: &mut [f64], mut rng: RngStream) {
    let keep = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    for (i, w) in weights.iter_mut().enumerate() {
        if rng.next_f64() < ZERO_FRACTION && i != keep {
            *w = 0.0;
        }
    }
}

/// Plain autoregressive sampling of `len` tokens after `context`.
pub fn sample_sequence(
    model: &ToyLm,
    context: &[TokenId],
    len: usize,
    rng: &mut RngStream,
) -> Result<Vec<TokenId>> {
    let mut seq = context.to_vec();
    for _ in 0..len {
        let dist = model.next_dist(&seq)?;
        seq.push(prob::sample(&dist, rng));
    }
    Ok(seq.split_off(context.len()))
}

/// Model-pair settings as they appear in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ToyLmSpec {
    pub vocab_size: usize,
    pub order: usize,
    pub seed: u64,
    pub eps: f64,
    #[serde(default)]
    pub allow_zeros: bool,
}

/// Large model and its cheaper draft counterpart.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub big: Arc<ToyLm>,
    pub small: Arc<ToyLm>,
    pub eps: f64,
}

impl ModelPair {
    pub fn from_spec(spec: &ToyLmSpec) -> Result<Self> {
        if spec.vocab_size < 2 {
            return Err(Error::Domain(format!("vocab_size must be >= 2, got {}", spec.vocab_size)));
        }
        let big = Arc::new(ToyLm::random_with(
            spec.vocab_size,
            spec.order,
            spec.seed,
            DEFAULT_SHARPNESS,
            false,
        )?);
        let perturbation = Arc::new(ToyLm::random_with(
            spec.vocab_size,
            spec.order,
            spec.seed ^ PERTURBATION_SALT,
            DEFAULT_SHARPNESS,
            false,
        )?);
        let zero_seed = spec.allow_zeros.then_some(spec.seed ^ ZERO_MASK_SALT);
        let small = Arc::new(ToyLm::mixture(Arc::clone(&big), perturbation, spec.eps, zero_seed)?);
        Ok(Self {
            big,
            small,
            eps: spec.eps,
        })
    }

    /// Mean total-variation distance between the two models over `probes`.
    pub fn mean_tv(&self, probes: &[Vec<TokenId>]) -> Result<f64> {
        let mut total = 0.0;
        for ctx in probes {
            total += prob::tv_distance(&*self.big.next_dist(ctx)?, &*self.small.next_dist(ctx)?)?;
        }
        Ok(total / probes.len().max(1) as f64)
    }
}

pub fn make_model_pair(vocab_size: usize, order: usize, seed: u64, eps: f64) -> Result<ModelPair> {
    ModelPair::from_spec(&ToyLmSpec {
        vocab_size,
        order,
        seed,
        eps,
        allow_zeros: false,
    })
}

/// Fixed probe set: the empty context, every single token, and 16 seeded
/// random contexts of length `max(order, 1)`.
pub fn probe_contexts(vocab_size: usize, order: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut probes = vec![Vec::new()];
    probes.extend((0..vocab_size).map(|t| vec![TokenId::from(t)]));
    let root = RngStream::new(seed);
    for i in 0..16 {
        let mut rng = root.substream(i);
        probes.push(
            (0..order.max(1))
                .map(|_| TokenId((rng.next_u64() % vocab_size as u64) as u32))
                .collect(),
        );
    }
    probes
}

/// Simulated cost of one decoding run, in abstract time units.
///
/// A batched call to the large model costs `big_call_cost` regardless of
/// batch size or sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub big_call_cost: f64,
    /// Cost of one batched small-model step (all drafts advance together).
    pub small_call_cost: f64,
    pub overhead_per_iter: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            big_call_cost: 1.0,
            small_call_cost: 0.0,
            overhead_per_iter: 0.0,
        }
    }
}

impl CostModel {
    pub fn new(big_call_cost: f64, small_call_cost: f64, overhead_per_iter: f64) -> Result<Self> {
        for (name, v) in [
            ("big_call_cost", big_call_cost),
            ("small_call_cost", small_call_cost),
            ("overhead_per_iter", overhead_per_iter),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(Self {
            big_call_cost,
            small_call_cost,
            overhead_per_iter,
        })
    }
}
