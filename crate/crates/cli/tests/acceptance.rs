//! Release checklist. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use spectr_core::bench::decode::{run_decode_bench, DecodeBenchConfig};
use spectr_core::bench::verify::{random_pair, verify_sequence, verify_token, SequenceVerifyConfig, TokenVerifyConfig};
use spectr_core::coupling::{
    alpha_bernoulli_closed_form, alpha_upper_bound, kseq_acceptance, kseq_gamma_star, otm_lp_solve,
    DEFAULT_GAMMA_DELTA,
};
use spectr_core::decode::{block_efficiency, spectr_decode, Drafting, SelectionMethod, SpectrConfig};
use spectr_core::lm::{make_model_pair, ToyLmSpec};
use spectr_core::prob::{ProbVector, RngStream, TokenId};
use spectr_core::Error;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pairs(seed: u64, n: usize, max_vocab: usize) -> Vec<(ProbVector, ProbVector)> {
    let mut rng = RngStream::new(seed);
    (0..n)
        .map(|i| random_pair(&mut rng, 2 + i % (max_vocab - 1)))
        .collect()
}

fn k1_reduction() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (p, q) in pairs(1, 50, 6) {
        let (_, alpha) = otm_lp_solve(&p, &q, 1).map_err(|e| e.to_string())?;
        let direct: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| a.min(*b)).sum();
        worst = worst.max((alpha - direct).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-7, || format!("max deviation {worst:.3e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("50 pairs, max deviation {worst:.1e}, {secs:.3}s"))
}

fn bernoulli_closed_form() -> Check {
    let p = ProbVector::bernoulli(0.25).unwrap();
    let mut worst = 0.0f64;
    for b in [0.1, 0.25, 0.75, 1.0] {
        let q = ProbVector::bernoulli(b).unwrap();
        for k in 1..=6 {
            let (_, lp) = otm_lp_solve(&p, &q, k).map_err(|e| e.to_string())?;
            // written out independently of the library's closed form
            let direct = b.min(1.0 - 0.75f64.powi(k as i32)) + (1.0 - b).min(1.0 - 0.25f64.powi(k as i32));
            let library = alpha_bernoulli_closed_form(0.25, b, k).map_err(|e| e.to_string())?;
            worst = worst.max((lp - direct).abs()).max((lp - library).abs());
        }
    }
    ensure(worst <= 1e-7, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("24 cells, max deviation {worst:.1e}"))
}

fn uniform_closed_form() -> Check {
    let (d, r) = (4usize, 2.0f64);
    let p = ProbVector::uniform(d).unwrap();
    let q = ProbVector::uniform_over(d, 2).unwrap();
    let mut lines = Vec::new();
    for k in 1..=4 {
        let expected = 1.0 - (1.0 - 1.0 / r).powi(k as i32);
        let (_, lp) = otm_lp_solve(&p, &q, k).map_err(|e| e.to_string())?;
        let g = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA).map_err(|e| e.to_string())?;
        let kseq = kseq_acceptance(&p, &q, k, g).map_err(|e| e.to_string())?;
        ensure((lp - expected).abs() <= 1e-7, || format!("k={k}: lp {lp} vs {expected}"))?;
        ensure((kseq - expected).abs() <= 1e-7, || format!("k={k}: kseq {kseq} vs {expected}"))?;
        ensure((g - r * expected).abs() <= 1e-6, || format!("k={k}: gamma* {g} vs {}", r * expected))?;
        lines.push(format!("k={k} alpha={expected}"));
    }
    Ok(lines.join(", "))
}

fn kseq_validity() -> Check {
    let report = verify_token(&TokenVerifyConfig::default()).map_err(|e| e.to_string())?;
    // the default also checks gamma* + 0.1 on top of gamma* and k
    let seeds = report.cases.len() / 3;
    if let Some(bad) = report.worst_failure() {
        return Err(format!("{}: {:?} {}", bad.label, bad.max_error, bad.diagnosis.as_deref().unwrap_or("")));
    }
    ensure(seeds == 100, || format!("{seeds} cases"))?;
    Ok(format!("{seeds} cases x 3 gammas, max error {:.1e}", report.max_error()))
}

fn kseq_optimality() -> Check {
    let e = 1.0 - (-1.0f64).exp();
    let mut solved = 0;
    let mut skipped = 0;
    let mut rng = RngStream::new(5);
    for i in 0..100 {
        let (p, q) = random_pair(&mut rng, 2 + i % 5);
        let k = 1 + i % 8;
        let otm = match otm_lp_solve(&p, &q, k) {
            Ok((_, a)) => a,
            Err(Error::SizeLimit { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        let g = kseq_gamma_star(&p, &q, k, DEFAULT_GAMMA_DELTA).map_err(|e| e.to_string())?;
        let kseq = kseq_acceptance(&p, &q, k, g).map_err(|e| e.to_string())?;
        let c = 1.0 - (1.0 - 1.0 / k as f64).powi(k as i32);
        ensure(kseq >= c * otm - 1e-7, || format!("case {i} k={k}: kseq {kseq} < {c} * {otm}"))?;
        ensure(kseq >= e * otm - 1e-7, || format!("case {i} k={k}: kseq {kseq} < (1-1/e) * {otm}"))?;
        solved += 1;
    }
    Ok(format!("{solved} solvable cases, {skipped} over the tuple cap"))
}

fn sandwich() -> Check {
    let mut count = 0;
    let mut cases = pairs(6, 60, 6);
    cases.push((ProbVector::uniform(4).unwrap(), ProbVector::uniform_over(4, 2).unwrap()));
    cases.push((ProbVector::bernoulli(0.25).unwrap(), ProbVector::bernoulli(0.75).unwrap()));
    for (i, (p, q)) in cases.iter().enumerate() {
        for k in 1..=3 {
            let (_, otm) = otm_lp_solve(p, q, k).map_err(|e| e.to_string())?;
            let (bar, _) = alpha_upper_bound(p, q, k).map_err(|e| e.to_string())?;
            let c = 1.0 - (1.0 - 1.0 / k as f64).powi(k as i32);
            ensure(c * bar <= otm + 1e-7 && otm <= bar + 1e-7, || {
                format!("case {i} k={k}: {c} * {bar} <= {otm} <= {bar} fails")
            })?;
            count += 1;
        }
    }
    Ok(format!("{count} cases"))
}

fn monotone_in_k() -> Check {
    for (i, (p, q)) in pairs(7, 30, 6).iter().enumerate() {
        let alphas: Vec<f64> = (1..=3)
            .map(|k| otm_lp_solve(p, q, k).map(|r| r.1))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(alphas.windows(2).all(|w| w[0] <= w[1] + 1e-7), || format!("pair {i}: {alphas:?}"))?;
    }
    Ok("30 pairs".into())
}

fn sequence_validity() -> Check {
    let start = Instant::now();
    let cfg = SequenceVerifyConfig {
        methods: vec![SelectionMethod::KSEQ, SelectionMethod::OTM],
        include_tree: false,
        ..SequenceVerifyConfig::default()
    };
    let report = verify_sequence(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if let Some(bad) = report.worst_failure() {
        return Err(format!("{}: {:?}", bad.label, bad.max_error));
    }
    ensure(secs < 60.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{} cases, max error {:.1e}, {secs:.3}s", report.cases.len(), report.max_error()))
}

fn decoding_trends() -> Check {
    let cfg = DecodeBenchConfig::new(ToyLmSpec {
        vocab_size: 16,
        order: 1,
        seed: 7,
        eps: 0.3,
        allow_zeros: false,
    });
    let result = run_decode_bench(&cfg).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for l in [4, 8] {
        let row: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&k| {
                result
                    .summaries
                    .iter()
                    .find(|s| s.drafts == Some(k) && s.length == Some(l))
                    .map(|s| s.mean_block_efficiency)
                    .ok_or_else(|| format!("missing K={k} L={l}"))
            })
            .collect::<Result<_, _>>()?;
        if l == 4 {
            ensure(row[0] > 1.0, || format!("speculative L=4 gives {}", row[0]))?;
        }
        ensure(row.windows(2).all(|w| w[0] <= w[1]), || format!("L={l}: {row:?}"))?;
        out.push(format!(
            "L={l}: {}",
            row.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    Ok(out.join("; "))
}

fn degenerate_ceiling() -> Check {
    let pair = make_model_pair(16, 1, 7, 0.0).map_err(|e| e.to_string())?;
    let mut configs = Vec::new();
    for l in [1, 2, 4, 8] {
        for k in [1, 2, 4, 8] {
            configs.push(if k == 1 {
                SpectrConfig::speculative(l)
            } else {
                SpectrConfig::iid(k, l, SelectionMethod::KSEQ)
            });
        }
        configs.push(SpectrConfig::iid(2, l, SelectionMethod::OTM));
    }
    for factors in [vec![2, 2], vec![3, 1, 1], vec![2, 1, 2, 1]] {
        configs.push(SpectrConfig {
            drafting: Drafting::Tree { factors },
            method: SelectionMethod::KSEQ,
        });
    }
    for (i, cfg) in configs.iter().enumerate() {
        let l = cfg.drafting.draft_length();
        let total = 12 * (l + 1);
        let prompt = [TokenId::from(i % 16)];
        let trace = spectr_decode(&pair.big, &pair.small, &prompt, total, cfg, &RngStream::new(i as u64))
            .map_err(|e| e.to_string())?;
        let be = block_efficiency(&trace).map_err(|e| e.to_string())?;
        ensure(be == (l + 1) as f64, || format!("{:?}: block efficiency {be}", cfg.drafting))?;
    }
    Ok(format!("{} configurations", configs.len()))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spectr"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn cli_determinism() -> Check {
    let commands: Vec<Vec<&str>> = vec![
        vec!["coupling", "--p", "0.75,0.25", "--q", "0.25,0.75", "--k", "2", "--method", "all"],
        vec!["sweep", "--family", "bernoulli", "--with-lp", "--k-max", "6"],
        vec!["sweep", "--family", "uniform", "--d", "4", "--r", "2", "--k-max", "4", "--with-lp"],
        vec!["verify", "--seed", "3", "--trials", "2"],
        vec!["decode", "--prompts", "40", "--tree", "2x2", "--seed", "5", "--trials", "2"],
    ];
    let mut runs = 0;
    for cmd in &commands {
        for format in ["csv", "json"] {
            let mut args = cmd.clone();
            args.extend(["--format", format]);
            let a = run_cli(&args)?;
            let b = run_cli(&args)?;
            ensure(!a.is_empty() && a == b, || format!("{args:?} differs between runs"))?;
            runs += 1;
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let dir = dir.to_str().unwrap();
        run_cli(&["decode", "--prompts", "10", "--drafts", "1,2", "--draft-length", "3", "--trace-dir", dir])?;
    }
    let (a, b) = (read_dir_sorted(&dirs[0])?, read_dir_sorted(&dirs[1])?);
    ensure(!a.is_empty() && a == b, || "trace files differ".into())?;
    Ok(format!("{runs} command/format pairs and {} trace files", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("k=1 reduction to the overlap", k1_reduction),
        ("Bernoulli closed form", bernoulli_closed_form),
        ("nested uniform closed form", uniform_closed_form),
        ("k-seq output marginal is q", kseq_validity),
        ("k-seq within its approximation factor of optimal", kseq_optimality),
        ("upper bound sandwich", sandwich),
        ("optimal acceptance monotone in k", monotone_in_k),
        ("draft selection reproduces the large model", sequence_validity),
        ("block efficiency trends", decoding_trends),
        ("identical models reach L+1", degenerate_ceiling),
        ("CLI output is deterministic", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} ({why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
