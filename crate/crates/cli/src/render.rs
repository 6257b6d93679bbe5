use std::fmt::Write as _;

use kappatune::infotheory::VerificationReport;
use kappatune::selection::SelectionPlan;
use kappatune::spectral::{read_jsonl, SpectralSummary};
use kappatune::toytrain::ForgettingReport;

/// A report file of one of the schemas the tool writes.
pub enum Document {
    Spectral(Vec<SpectralSummary>),
    Forgetting(Box<ForgettingReport>),
    Verification(VerificationReport),
    Plan(SelectionPlan),
}

impl Document {
    /// Whole-file JSON schemas are tried first, then JSON lines.
    pub fn detect(text: &str) -> Option<Self> {
        if let Ok(r) = serde_json::from_str::<ForgettingReport>(text) {
            return Some(Document::Forgetting(Box::new(r)));
        }
        if let Ok(r) = serde_json::from_str::<VerificationReport>(text) {
            return Some(Document::Verification(r));
        }
        if let Ok(p) = SelectionPlan::from_json(text) {
            return Some(Document::Plan(p));
        }
        read_jsonl(text).ok().map(Document::Spectral)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Document::Spectral(_) => "spectral report",
            Document::Forgetting(_) => "forgetting report",
            Document::Verification(_) => "verification report",
            Document::Plan(_) => "selection plan",
        }
    }

    pub fn to_text(&self, top: usize) -> String {
        match self {
            Document::Spectral(s) => spectral_text(s, top),
            Document::Forgetting(r) => forgetting_text(r),
            Document::Verification(r) => verification_text(r),
            Document::Plan(p) => plan_text(p),
        }
    }

    pub fn to_csv(&self) -> Result<String, kappatune::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let res = match self {
            Document::Spectral(s) => spectral_csv(&mut w, s),
            Document::Forgetting(r) => {
                w.write_record(["strategy", "runs", "median_forgetting", "median_loss_a_after", "median_loss_b_final"])
                    .and_then(|_| {
                        r.medians.iter().try_for_each(|m| {
                            w.write_record([
                                m.strategy.to_string(),
                                m.runs.to_string(),
                                m.median_forgetting.to_string(),
                                m.median_loss_a_after.to_string(),
                                m.median_loss_b_final.to_string(),
                            ])
                        })
                    })
            }
            Document::Verification(r) => w.write_record(["check", "passed", "seed"]).and_then(|_| {
                r.checks.iter().try_for_each(|c| {
                    w.write_record([
                        c.check.clone(),
                        c.passed.to_string(),
                        c.seed.map(|s| s.to_string()).unwrap_or_default(),
                    ])
                })
            }),
            Document::Plan(p) => w.write_record(["rank", "name", "kappa"]).and_then(|_| {
                p.selected
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, s)| w.write_record([(i + 1).to_string(), s.name.clone(), s.kappa.to_string()]))
            }),
        };
        let csv_err = |e: String| kappatune::Error::Format(format!("csv: {e}"));
        res.map_err(|e| csv_err(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| csv_err(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| csv_err(e.to_string()))
    }
}

fn by_kappa(summaries: &[SpectralSummary]) -> Vec<&SpectralSummary> {
    let mut v: Vec<_> = summaries.iter().collect();
    v.sort_by(|a, b| a.kappa.total_cmp(&b.kappa).then_with(|| a.name.cmp(&b.name)));
    v
}

fn spectral_csv<W: std::io::Write>(w: &mut csv::Writer<W>, summaries: &[SpectralSummary]) -> csv::Result<()> {
    w.write_record([
        "name",
        "m",
        "n",
        "kappa",
        "sigma_max",
        "sigma_min_nonzero",
        "frobenius",
        "log_volume",
        "numerical_rank",
    ])?;
    for s in by_kappa(summaries) {
        w.write_record([
            s.name.clone(),
            s.m.to_string(),
            s.n.to_string(),
            s.kappa.to_string(),
            s.sigma_max.to_string(),
            s.sigma_min_nonzero.to_string(),
            s.frobenius.to_string(),
            s.log_volume.to_string(),
            s.numerical_rank.to_string(),
        ])?;
    }
    Ok(())
}

/// Table sorted by κ; the `top` lowest and highest rows are marked.
pub fn spectral_text(summaries: &[SpectralSummary], top: usize) -> String {
    let rows = by_kappa(summaries);
    let width = rows.iter().map(|s| s.name.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "   {:<width$}  {:>9}  {:>12}  {:>12}  {:>5}",
        "name", "shape", "kappa", "log_volume", "rank"
    );
    let n = rows.len();
    let top = top.min(n / 2);
    for (i, s) in rows.iter().enumerate() {
        let mark = if i < top {
            "L"
        } else if i + top >= n {
            "H"
        } else {
            " "
        };
        let _ = writeln!(
            out,
            "{mark}  {:<width$}  {:>9}  {:>12.5e}  {:>12.4}  {:>5}",
            s.name,
            format!("{}x{}", s.m, s.n),
            s.kappa,
            s.log_volume,
            s.numerical_rank
        );
    }
    let _ = writeln!(out, "{n} tensors; L = {top} lowest kappa, H = {top} highest kappa");
    out
}

pub fn forgetting_text(r: &ForgettingReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} seeds, K = {} of {} eligible tensors",
        r.config.seeds.len(),
        r.budget_k,
        r.eligible.len()
    );
    let _ = writeln!(
        out,
        "{:<14}  {:>4}  {:>17}  {:>14}  {:>14}",
        "strategy", "runs", "median_forgetting", "median_a_after", "median_b_final"
    );
    for m in &r.medians {
        let _ = writeln!(
            out,
            "{:<14}  {:>4}  {:>17.6}  {:>14.6}  {:>14.6}",
            m.strategy.to_string(),
            m.runs,
            m.median_forgetting,
            m.median_loss_a_after,
            m.median_loss_b_final
        );
    }
    if let Some(ok) = r.lowest_beats_highest() {
        let _ = writeln!(
            out,
            "lowest_kappa forgets {} than highest_kappa",
            if ok { "less" } else { "at least as much" }
        );
    }
    let _ = writeln!(out, "frozen tensors intact: {}", r.frozen_intact);
    for f in &r.flags {
        let _ = writeln!(out, "flag: {f}");
    }
    out
}

pub fn verification_text(r: &VerificationReport) -> String {
    let mut out = String::new();
    for c in &r.checks {
        let _ = write!(out, "{}  {}", if c.passed { "PASS" } else { "FAIL" }, c.check);
        for (k, v) in &c.measured {
            if let Some(tol) = c.tolerance.get(k) {
                let _ = write!(out, "  {k}={v:.3e} (tol {tol:.1e})");
            }
        }
        out.push('\n');
    }
    let failed = r.failed().count();
    let _ = writeln!(out, "{} checks, {} failed", r.checks.len(), failed);
    out
}

fn plan_text(p: &SelectionPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} plan, budget {}, checkpoint {}", p.strategy, p.budget, p.checkpoint_sha256);
    for (i, s) in p.selected.iter().enumerate() {
        let _ = writeln!(out, "{:>3}  {}  kappa={:.6e}", i + 1, s.name, s.kappa);
    }
    out
}
