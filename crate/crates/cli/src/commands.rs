use std::path::Path;

use kappatune::infotheory::{run_theory_suite, Activation, TheorySuiteConfig};
use kappatune::selection::{eligible_tensors, make_plan, rankable, EligibilityFilter, Strategy};
use kappatune::spectral::{summarize_tensors, write_jsonl};
use kappatune::tensor_io::{load_checkpoint, records_from_manifest, write_checkpoint};
use kappatune::toytrain::{budget_from_fraction, build_mlp, forgetting_experiment, ForgettingConfig};
use kappatune::Mlp32;

use crate::{render, CmdResult, Failure, EXIT_CHECKS_FAILED, EXIT_OK};

pub enum Budget {
    Count(usize),
    Fraction(f64),
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn filter_with(excludes: &[String]) -> Result<EligibilityFilter, Failure> {
    let mut filter = EligibilityFilter::default();
    for p in excludes {
        filter = filter.exclude(p)?;
    }
    Ok(filter)
}

pub fn analyze(checkpoint: &Path, out: &Path, zero_tol: f64, excludes: &[String], sigma_cap: usize) -> CmdResult {
    if !(zero_tol.is_finite() && zero_tol >= 0.0) {
        return Err(Failure::Usage(format!("--zero-tol must be finite and >= 0, got {zero_tol}")));
    }
    let filter = filter_with(excludes)?;
    let view = load_checkpoint(checkpoint)?;
    let names = eligible_tensors(&view, &filter);
    log::info!("{} of {} tensors eligible", names.len(), view.len());
    let (summaries, zero) = rankable(summarize_tensors(&view, &names, zero_tol))?;
    if !zero.is_empty() {
        log::warn!("skipped all-zero tensors: {}", zero.join(", "));
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &summaries, sigma_cap)?;
    write_file(out, &buf)?;
    println!("wrote {} spectral summaries to {}", summaries.len(), out.display());
    Ok(EXIT_OK)
}

pub fn plan(
    checkpoint: &Path,
    budget: Budget,
    strategy: Strategy,
    out: &Path,
    seed: u64,
    zero_tol: f64,
    excludes: &[String],
) -> CmdResult {
    if let Budget::Fraction(f) = budget {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Failure::Usage(format!("--budget-fraction must be in (0, 1], got {f}")));
        }
    }
    if !(zero_tol.is_finite() && zero_tol >= 0.0) {
        return Err(Failure::Usage(format!("--zero-tol must be finite and >= 0, got {zero_tol}")));
    }
    let filter = filter_with(excludes)?;
    let view = load_checkpoint(checkpoint)?;
    let k = match budget {
        Budget::Count(k) => k,
        Budget::Fraction(f) => {
            let eligible = eligible_tensors(&view, &filter).len();
            let k = budget_from_fraction(f, eligible);
            log::info!("budget fraction {f} of {eligible} eligible tensors -> K = {k}");
            k
        }
    };
    let plan = make_plan(&view, &filter, k, strategy, zero_tol, seed)?;
    write_file(out, plan.to_json()?.as_bytes())?;

    let mut total = 0usize;
    for s in &plan.selected {
        let numel = view.get(&s.name).map_or(0, |e| e.numel());
        total += numel;
        println!("{}\tkappa={:.6e}\tparams={}", s.name, s.kappa, numel);
    }
    println!(
        "selected {} of K={} tensors ({}), {} trainable parameters",
        plan.selected.len(),
        k,
        strategy,
        total
    );
    Ok(EXIT_OK)
}

pub fn verify_theory(samples: usize, seed: u64, max_dim: usize, out: &Path) -> CmdResult {
    let cfg = TheorySuiteConfig {
        samples,
        seed,
        max_dim,
        ..Default::default()
    };
    log::info!("theory suite config: {}", serde_json::to_string(&cfg).unwrap_or_default());
    let report = run_theory_suite(&cfg)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(kappatune::Error::from)?;
    text.push('\n');
    write_file(out, text.as_bytes())?;
    print!("{}", render::verification_text(&report));
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECKS_FAILED })
}

pub fn demo_forgetting(config: &Path, out_dir: &Path) -> CmdResult {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", config.display())))?;
    let cfg = ForgettingConfig::from_json(&text)
        .map_err(|e| Failure::Usage(format!("config {}: {e}", config.display())))?;
    log::info!("experiment config: {}", serde_json::to_string(&cfg).unwrap_or_default());

    let outcome = forgetting_experiment(&cfg)?;
    let report = &outcome.report;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let plans_dir = out_dir.join("plans");
    std::fs::create_dir_all(&plans_dir)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", plans_dir.display())))?;
    write_file(&out_dir.join("forgetting_report.json"), report.to_json()?.as_bytes())?;
    write_file(&out_dir.join("forgetting_runs.csv"), &csv)?;
    for p in &outcome.plans {
        let path = plans_dir.join(format!("{}_seed{}.json", p.strategy, p.seed));
        write_file(&path, p.plan.to_json()?.as_bytes())?;
    }
    print!("{}", render::forgetting_text(report));

    if !report.frozen_intact {
        eprintln!("frozen tensors changed during fine-tuning");
        return Ok(EXIT_CHECKS_FAILED);
    }
    if report.has_enough_seeds() && report.lowest_beats_highest() == Some(false) {
        eprintln!("median forgetting(lowest_kappa) is not below median forgetting(highest_kappa)");
        return Ok(EXIT_CHECKS_FAILED);
    }
    Ok(EXIT_OK)
}

pub fn report(input: &Path, csv: bool, top: usize, out: Option<&Path>) -> CmdResult {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", input.display())))?;
    let doc = render::Document::detect(&text)
        .ok_or_else(|| Failure::Usage(format!("{}: unrecognized report schema", input.display())))?;
    log::info!("{}: {}", input.display(), doc.kind());
    let rendered = if csv { doc.to_csv()? } else { doc.to_text(top) };
    match out {
        Some(path) => write_file(path, rendered.as_bytes())?,
        None => print!("{rendered}"),
    }
    Ok(EXIT_OK)
}

pub fn ingest(manifest: &Path, out: &Path) -> CmdResult {
    let records = records_from_manifest(manifest)?;
    write_checkpoint(&records, out)?;
    println!("wrote {} tensors to {}", records.len(), out.display());
    Ok(EXIT_OK)
}

fn parse_activation(s: &str) -> Result<Activation, Failure> {
    let bad = || Failure::Usage(format!("unknown activation {s:?}"));
    Ok(match s {
        "identity" => Activation::Identity,
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        "softplus" => Activation::Softplus,
        _ => {
            let alpha = s
                .strip_prefix("leaky_relu(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(bad)?;
            Activation::LeakyRelu(alpha.parse().map_err(|_| bad())?)
        }
    })
}

pub fn init_mlp(sizes: &[usize], seed: u64, activation: &str, out: &Path) -> CmdResult {
    let act = parse_activation(activation)?;
    let model: Mlp32 = build_mlp(sizes, act, seed)?;
    write_file(out, &model.to_checkpoint_bytes()?)?;
    println!("wrote {} parameters in {} tensors to {}", model.num_params(), model.param_names().len(), out.display());
    Ok(EXIT_OK)
}
