use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spectr_core::bench::coupling::{coupling_reports, coupling_table, otm_coupling, CouplingConfig, CouplingMethod};
use spectr_core::bench::decode::{run_decode_bench, DecodeBenchConfig};
use spectr_core::bench::sweep::{run_sweep, sweep_table, SweepConfig, SweepFamily};
use spectr_core::bench::verify::{verify_sequence, verify_token, SequenceVerifyConfig, TokenVerifyConfig, VerifyReport};
use spectr_core::bench::{stack_seeds, OutputFormat, Table};
use spectr_core::coupling::DEFAULT_TUPLE_CAP;
use spectr_core::decode::SelectionMethod;
use spectr_core::lm::{CostModel, ToyLmSpec};
use spectr_core::{Error, ProbVector};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CAP: u8 = 3;

/// Multi-draft speculative decoding experiments
#[derive(Parser, Debug)]
#[command(name = "spectr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Output {
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Write to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Acceptance probability of k drafts from p targeting q
    Coupling(CouplingArgs),
    /// Acceptance probability against k for a distribution family
    Sweep(SweepArgs),
    /// Exactness checks of the draft-selection procedures
    Verify(VerifyArgs),
    /// Block-efficiency benchmark on a toy model pair
    Decode(DecodeArgs),
}

#[derive(Args, Debug)]
struct CouplingArgs {
    /// Draft distribution: comma-separated probabilities or a file holding them
    #[arg(long, value_parser = parse_dist)]
    p: ProbVector,

    /// Target distribution, same syntax as --p
    #[arg(long, value_parser = parse_dist)]
    q: ProbVector,

    /// Number of i.i.d. drafts
    #[arg(long, default_value_t = 1)]
    k: usize,

    /// maximal, kseq, otm, upper or all
    #[arg(long, default_value = "otm")]
    method: CouplingMethod,

    /// Fixed K-SEQ division factor (default: the smallest valid one)
    #[arg(long)]
    gamma: Option<f64>,

    /// Largest number of draft tuples the LP may enumerate
    #[arg(long, default_value_t = DEFAULT_TUPLE_CAP)]
    tuple_cap: usize,

    /// Also write the optimal transport plan as CSV
    #[arg(long)]
    plan: Option<PathBuf>,

    #[command(flatten)]
    output: Output,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Family {
    Bernoulli,
    Uniform,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    family: Family,

    /// Bernoulli draft head probability
    #[arg(long, default_value_t = 0.25)]
    p: f64,

    /// Bernoulli target head probabilities
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.75,1.0")]
    b: Vec<f64>,

    /// Uniform draft vocabulary size
    #[arg(long, default_value_t = 120)]
    d: usize,

    /// Uniform ratios; the target is uniform over the first d/r tokens
    #[arg(long, value_delimiter = ',', default_value = "2")]
    r: Vec<f64>,

    #[arg(long, default_value_t = 10)]
    k_max: usize,

    /// Add rows solved by linear programming
    #[arg(long)]
    with_lp: bool,

    #[arg(long, default_value_t = DEFAULT_TUPLE_CAP)]
    tuple_cap: usize,

    #[command(flatten)]
    output: Output,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    Token,
    Sequence,
    All,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Scope::All)]
    scope: Scope,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Repeat with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    trials: u64,

    /// Token scope: random (p, q, k) instances
    #[arg(long, default_value_t = 100)]
    cases: usize,

    #[arg(long, default_value_t = 6)]
    max_vocab: usize,

    #[arg(long, default_value_t = 8)]
    max_k: usize,

    /// Token scope: fix k
    #[arg(long)]
    k: Option<usize>,

    /// Token scope: fix the division factor
    #[arg(long)]
    gamma: Option<f64>,

    #[arg(long, default_value_t = 1e-9)]
    token_tolerance: f64,

    /// Sequence scope vocabulary size
    #[arg(long, default_value_t = 3)]
    vocab: usize,

    #[arg(long, default_value_t = 2)]
    draft_length: usize,

    #[arg(long, default_value_t = 2)]
    drafts: usize,

    #[arg(long, default_value_t = 1)]
    order: usize,

    #[arg(long, default_value_t = 0.5)]
    eps: f64,

    /// Model pairs per seed
    #[arg(long, default_value_t = 2)]
    pairs: usize,

    #[arg(long, value_delimiter = ',', default_value = "maximal,kseq,otm")]
    methods: Vec<SelectionMethod>,

    /// Skip prefix-tree drafting
    #[arg(long)]
    no_tree: bool,

    #[arg(long, default_value_t = 1e-6)]
    sequence_tolerance: f64,

    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long, default_value_t = 16)]
    vocab: usize,

    #[arg(long, default_value_t = 1)]
    order: usize,

    #[arg(long, default_value_t = 7)]
    model_seed: u64,

    /// Divergence of the draft model from the large model, in [0, 1]
    #[arg(long, default_value_t = 0.3)]
    eps: f64,

    /// Let the draft model put exact zeros on some tokens
    #[arg(long)]
    allow_zeros: bool,

    #[arg(long, default_value_t = 200)]
    prompts: usize,

    #[arg(long, default_value_t = 4)]
    prompt_len: usize,

    /// Tokens to decode per prompt
    #[arg(long, default_value_t = 64)]
    tokens: usize,

    /// Draft counts K
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    drafts: Vec<usize>,

    /// Draft lengths L
    #[arg(long, value_delimiter = ',', default_value = "4,8")]
    draft_length: Vec<usize>,

    /// Prefix-tree expansion factors such as 2x2x1; repeat for several trees
    #[arg(long, value_parser = parse_factors)]
    tree: Vec<Vec<usize>>,

    /// Selection method for multi-draft rows: kseq, kseq-fixed or otm
    #[arg(long, default_value = "kseq")]
    method: SelectionMethod,

    #[arg(long)]
    no_baseline: bool,

    #[arg(long, default_value_t = 1.0)]
    big_cost: f64,

    /// Cost of one small-model step relative to --big-cost
    #[arg(long, default_value_t = 0.0)]
    small_cost: f64,

    #[arg(long, default_value_t = 0.0)]
    overhead: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Repeat with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    trials: u64,

    /// Write one JSONL file of per-prompt traces per summary row
    #[arg(long)]
    trace_dir: Option<PathBuf>,

    #[command(flatten)]
    output: Output,
}

fn parse_dist(s: &str) -> Result<ProbVector, String> {
    let inline = s.chars().all(|c| c.is_ascii_digit() || ".,eE+- ".contains(c));
    let text = if inline || !Path::new(s).exists() {
        s.to_string()
    } else {
        fs::read_to_string(s).map_err(|e| format!("reading {s}: {e}"))?
    };
    let joined = text.split_whitespace().collect::<Vec<_>>().join(",");
    let cleaned = joined.replace(",,", ",");
    cleaned.parse::<ProbVector>().map_err(|e| e.to_string())
}

fn parse_factors(s: &str) -> Result<Vec<usize>, String> {
    s.split('x')
        .map(|f| f.trim().parse::<usize>().map_err(|e| format!("{f:?}: {e}")))
        .collect()
}

fn emit(text: &str, out: &Option<PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn seeds(seed: u64, trials: u64) -> anyhow::Result<Vec<u64>> {
    if trials == 0 {
        bail!(Error::Domain("--trials must be at least 1".into()));
    }
    Ok((0..trials).map(|t| seed.wrapping_add(t)).collect())
}

fn run_coupling(args: CouplingArgs) -> anyhow::Result<u8> {
    let cfg = CouplingConfig {
        gamma: args.gamma,
        tuple_cap: args.tuple_cap,
        ..CouplingConfig::new(args.p, args.q, args.k, args.method)
    };
    let reports = coupling_reports(&cfg)?;
    if let Some(path) = &args.plan {
        let plan = otm_coupling(&cfg)?.plan();
        fs::write(path, plan.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(&coupling_table(&cfg, &reports).render(args.output.format.into()), &args.output.out)?;
    Ok(0)
}

fn run_sweep_cmd(args: SweepArgs) -> anyhow::Result<u8> {
    let family = match args.family {
        Family::Bernoulli => SweepFamily::Bernoulli {
            p_head: args.p,
            b: args.b,
        },
        Family::Uniform => SweepFamily::Uniform { d: args.d, r: args.r },
    };
    let cfg = SweepConfig {
        with_lp: args.with_lp,
        tuple_cap: args.tuple_cap,
        ..SweepConfig::new(family, args.k_max)
    };
    let rows = run_sweep(&cfg)?;
    emit(&sweep_table(&cfg, &rows).render(args.output.format.into()), &args.output.out)?;
    Ok(0)
}

fn verify_config_echo(args: &VerifyArgs) -> Vec<(String, String)> {
    let methods: Vec<String> = args.methods.iter().map(|m| m.to_string()).collect();
    [
        ("scope", format!("{:?}", args.scope).to_lowercase()),
        ("seed", args.seed.to_string()),
        ("cases", args.cases.to_string()),
        ("max-vocab", args.max_vocab.to_string()),
        ("max-k", args.max_k.to_string()),
        ("k", args.k.map_or("-".into(), |k| k.to_string())),
        ("gamma", args.gamma.map_or("-".into(), |g| g.to_string())),
        ("token-tolerance", args.token_tolerance.to_string()),
        ("vocab", args.vocab.to_string()),
        ("draft-length", args.draft_length.to_string()),
        ("drafts", args.drafts.to_string()),
        ("order", args.order.to_string()),
        ("eps", args.eps.to_string()),
        ("pairs", args.pairs.to_string()),
        ("methods", methods.join(",")),
        ("tree", (!args.no_tree).to_string()),
        ("sequence-tolerance", args.sequence_tolerance.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn run_verify(args: VerifyArgs) -> anyhow::Result<u8> {
    let mut tables = Vec::new();
    let mut reports: Vec<VerifyReport> = Vec::new();
    for seed in seeds(args.seed, args.trials)? {
        let mut per_seed = Vec::new();
        if args.scope != Scope::Sequence {
            per_seed.push(verify_token(&TokenVerifyConfig {
                cases: args.cases,
                seed,
                max_vocab: args.max_vocab,
                max_k: args.max_k,
                k: args.k,
                gamma: args.gamma,
                tolerance: args.token_tolerance,
            })?);
        }
        if args.scope != Scope::Token {
            per_seed.push(verify_sequence(&SequenceVerifyConfig {
                vocab: args.vocab,
                length: args.draft_length,
                drafts: args.drafts,
                order: args.order,
                eps: args.eps,
                seed,
                pairs: args.pairs,
                methods: args.methods.clone(),
                include_tree: !args.no_tree,
                tolerance: args.sequence_tolerance,
            })?);
        }
        let mut table = Table::new("verify", Vec::new());
        for report in &per_seed {
            let mut part = report.to_table(verify_config_echo(&args));
            if table.columns.is_empty() {
                table = part;
            } else {
                table.rows.append(&mut part.rows);
            }
        }
        tables.push((seed, table));
        reports.extend(per_seed);
    }
    emit(&stack_seeds(tables)?.render(args.output.format.into()), &args.output.out)?;
    let failures: Vec<_> = reports.iter().filter_map(VerifyReport::worst_failure).collect();
    let total: usize = reports.iter().map(|r| r.cases.len()).sum();
    let failed: usize = reports.iter().map(|r| r.cases.iter().filter(|c| !c.passed).count()).sum();
    if let Some(worst) = failures
        .iter()
        .max_by(|a, b| a.max_error.unwrap_or(f64::INFINITY).total_cmp(&b.max_error.unwrap_or(f64::INFINITY)))
    {
        eprintln!(
            "verification failed: {failed} of {total} cases; worst: {} ({})",
            worst.label,
            worst.diagnosis.as_deref().unwrap_or("no diagnosis")
        );
        return Ok(EXIT_VERIFY_FAILED);
    }
    eprintln!("verification passed: {total} cases");
    Ok(0)
}

fn run_decode(args: DecodeArgs) -> anyhow::Result<u8> {
    let cost = CostModel::new(args.big_cost, args.small_cost, args.overhead)?;
    let mut tables = Vec::new();
    for seed in seeds(args.seed, args.trials)? {
        let cfg = DecodeBenchConfig {
            prompts: args.prompts,
            prompt_len: args.prompt_len,
            tokens: args.tokens,
            drafts: args.drafts.clone(),
            lengths: args.draft_length.clone(),
            trees: args.tree.clone(),
            method: args.method,
            baseline: !args.no_baseline,
            cost,
            seed,
            ..DecodeBenchConfig::new(ToyLmSpec {
                vocab_size: args.vocab,
                order: args.order,
                seed: args.model_seed,
                eps: args.eps,
                allow_zeros: args.allow_zeros,
            })
        };
        let result = run_decode_bench(&cfg)?;
        if let Some(dir) = &args.trace_dir {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            for i in 0..result.summaries.len() {
                let path = dir.join(format!("{}_seed{seed}.jsonl", result.trace_name(i)));
                fs::write(&path, result.traces_jsonl(i, &cost))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        tables.push((seed, result.table().clone()));
    }
    emit(&stack_seeds(tables)?.render(args.output.format.into()), &args.output.out)?;
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::SizeLimit { .. }) => EXIT_CAP,
        Some(Error::Internal(_)) | Some(Error::DegenerateResidual) => EXIT_VERIFY_FAILED,
        Some(_) => EXIT_USAGE,
        None => EXIT_VERIFY_FAILED,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Coupling(a) => run_coupling(a),
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::Verify(a) => run_verify(a),
        Command::Decode(a) => run_decode(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
