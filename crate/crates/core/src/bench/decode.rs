//! Block-efficiency benchmark over seeded prompts.
//!
//! All configurations share prompts and per-prompt random streams (common
//! random numbers), so differences between rows come from the algorithms.

use rayon::prelude::*;

use super::{join, Cell, Table};
use crate::decode::{
    baseline_decode, block_efficiency, spectr_decode, DecodeTrace, Drafting, SelectionMethod, SpectrConfig,
};
use crate::lm::{CostModel, ModelPair, ToyLmSpec};
use crate::prob::{RngStream, TokenId};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeBenchConfig {
    pub model: ToyLmSpec,
    pub prompts: usize,
    pub prompt_len: usize,
    pub tokens: usize,
    /// Draft counts `K` for i.i.d. drafting.
    pub drafts: Vec<usize>,
    /// Draft lengths `L` for i.i.d. drafting.
    pub lengths: Vec<usize>,
    /// Extra prefix-tree configurations.
    pub trees: Vec<Vec<usize>>,
    /// Method for multi-draft rows; single-draft rows always use the maximal coupling.
    pub method: SelectionMethod,
    pub baseline: bool,
    pub cost: CostModel,
    pub seed: u64,
}

impl DecodeBenchConfig {
    pub fn new(model: ToyLmSpec) -> Self {
        Self {
            model,
            prompts: 200,
            prompt_len: 4,
            tokens: 64,
            drafts: vec![1, 2, 4, 8],
            lengths: vec![4, 8],
            trees: Vec::new(),
            method: SelectionMethod::KSEQ,
            baseline: true,
            cost: CostModel::default(),
            seed: 0,
        }
    }

    /// Decoder configurations in output order: baseline, then i.i.d. rows by
    /// `L` then `K`, then trees.
    pub fn runs(&self) -> Vec<Option<SpectrConfig>> {
        let mut out = Vec::new();
        if self.baseline {
            out.push(None);
        }
        for &length in &self.lengths {
            for &k in &self.drafts {
                let method = if k == 1 { SelectionMethod::Maximal } else { self.method };
                out.push(Some(SpectrConfig::iid(k, length, method)));
            }
        }
        for factors in &self.trees {
            out.push(Some(SpectrConfig {
                drafting: Drafting::Tree {
                    factors: factors.clone(),
                },
                method: self.method,
            }));
        }
        out
    }

    fn table(&self) -> Table {
        let m = &self.model;
        Table::new(
            "decode",
            vec![
                "algorithm",
                "K",
                "L",
                "method",
                "drafting",
                "runs",
                "mean_block_efficiency",
                "std_err",
                "simulated_speedup",
            ],
        )
        .with_config("vocab", m.vocab_size)
        .with_config("order", m.order)
        .with_config("model-seed", m.seed)
        .with_config("eps", m.eps)
        .with_config("allow-zeros", m.allow_zeros)
        .with_config("prompts", self.prompts)
        .with_config("prompt-len", self.prompt_len)
        .with_config("tokens", self.tokens)
        .with_config("drafts", join(&self.drafts, ","))
        .with_config("draft-length", join(&self.lengths, ","))
        .with_config(
            "trees",
            join(
                &self.trees.iter().map(|f| join(f, "x")).collect::<Vec<_>>(),
                ",",
            ),
        )
        .with_config("method", self.method)
        .with_config("baseline", self.baseline)
        .with_config("big-cost", self.cost.big_call_cost)
        .with_config("small-cost", self.cost.small_call_cost)
        .with_config("overhead", self.cost.overhead_per_iter)
        .with_config("seed", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSummary {
    pub algorithm: String,
    /// `None` for the baseline.
    pub drafts: Option<usize>,
    pub length: Option<usize>,
    pub method: String,
    pub drafting: String,
    pub runs: usize,
    pub mean_block_efficiency: f64,
    pub std_err: f64,
    /// Total baseline time over total simulated time, summed across runs.
    pub simulated_speedup: f64,
}

#[derive(Debug, Clone)]
pub struct DecodeBenchResult {
    pub summaries: Vec<DecodeSummary>,
    /// Per-prompt traces, aligned with `summaries`.
    pub traces: Vec<Vec<DecodeTrace>>,
    table: Table,
}

impl DecodeBenchResult {
    pub fn table(&self) -> &Table {
        &self.table
    }

    /// File stem for the traces of summary `i`.
    pub fn trace_name(&self, i: usize) -> String {
        let s = &self.summaries[i];
        match (s.drafts, s.length) {
            (Some(k), Some(l)) => format!("{}_{}_K{k}_L{l}_{}", s.algorithm, s.method, s.drafting.replace(':', "-")),
            _ => s.algorithm.clone(),
        }
    }

    /// One JSON trace per line, in prompt order.
    pub fn traces_jsonl(&self, i: usize, cost: &CostModel) -> String {
        self.traces[i].iter().map(|t| t.to_json(cost) + "\n").collect()
    }
}

/// Seeded prompts shared by every configuration.
pub fn bench_prompts(vocab: usize, count: usize, len: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let root = RngStream::new(seed).substream(0);
    (0..count)
        .map(|i| {
            let mut rng = root.substream(i as u64);
            (0..len)
                .map(|_| TokenId((rng.next_u64() % vocab as u64) as u32))
                .collect()
        })
        .collect()
}

fn summarize(config: &Option<SpectrConfig>, traces: &[DecodeTrace], cost: &CostModel) -> Result<DecodeSummary> {
    let eff: Vec<f64> = traces.iter().map(block_efficiency).collect::<Result<_>>()?;
    let n = eff.len() as f64;
    let mean = eff.iter().sum::<f64>() / n;
    let std_err = if eff.len() > 1 {
        (eff.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    let baseline_time: f64 = traces
        .iter()
        .map(|t| t.emitted_tokens.len() as f64 * cost.big_call_cost)
        .sum();
    let time: f64 = traces.iter().map(|t| t.simulated_time(cost)).sum();
    if !(time > 0.0) || !(baseline_time > 0.0) {
        return Err(Error::Domain("speedup is undefined under a zero-cost model".into()));
    }
    Ok(match config {
        None => DecodeSummary {
            algorithm: "baseline".into(),
            drafts: None,
            length: None,
            method: "-".into(),
            drafting: "-".into(),
            runs: traces.len(),
            mean_block_efficiency: mean,
            std_err,
            simulated_speedup: baseline_time / time,
        },
        Some(c) => DecodeSummary {
            algorithm: c.algorithm_name().into(),
            drafts: Some(c.drafting.draft_count()),
            length: Some(c.drafting.draft_length()),
            method: c.method.label().into(),
            drafting: c.drafting.label(),
            runs: traces.len(),
            mean_block_efficiency: mean,
            std_err,
            simulated_speedup: baseline_time / time,
        },
    })
}

pub fn run_decode_bench(cfg: &DecodeBenchConfig) -> Result<DecodeBenchResult> {
    if cfg.prompts == 0 || cfg.tokens == 0 {
        return Err(Error::Domain("need at least one prompt and one token".into()));
    }
    let pair = ModelPair::from_spec(&cfg.model)?;
    let prompts = bench_prompts(cfg.model.vocab_size, cfg.prompts, cfg.prompt_len, cfg.seed);
    let streams = RngStream::new(cfg.seed).substream(1);
    let runs = cfg.runs();
    let jobs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|r| (0..prompts.len()).map(move |i| (r, i)))
        .collect();
    let traces: Vec<Result<DecodeTrace>> = jobs
        .par_iter()
        .map(|&(r, i)| {
            let rng = streams.substream(i as u64);
            match &runs[r] {
                None => baseline_decode(&pair.big, &prompts[i], cfg.tokens, &rng),
                Some(c) => spectr_decode(&pair.big, &pair.small, &prompts[i], cfg.tokens, c, &rng),
            }
        })
        .collect();
    let mut traces = traces.into_iter();
    let mut grouped = Vec::with_capacity(runs.len());
    for _ in &runs {
        grouped.push((&mut traces).take(prompts.len()).collect::<Result<Vec<_>>>()?);
    }
    let summaries: Vec<DecodeSummary> = runs
        .iter()
        .zip(&grouped)
        .map(|(c, t)| summarize(c, t, &cfg.cost))
        .collect::<Result<_>>()?;
    let mut table = cfg.table();
    for s in &summaries {
        table.push(vec![
            Cell::text(s.algorithm.clone()),
            s.drafts.map_or(Cell::text("-"), Cell::from),
            s.length.map_or(Cell::text("-"), Cell::from),
            Cell::text(s.method.clone()),
            Cell::text(s.drafting.clone()),
            Cell::from(s.runs),
            Cell::from(s.mean_block_efficiency),
            Cell::from(s.std_err),
            Cell::from(s.simulated_speedup),
        ]);
    }
    Ok(DecodeBenchResult {
        summaries,
        traces: grouped,
        table,
    })
}
