//! Budgeted selection of weight tensors to unfreeze, ranked by condition
//! number, and the trainability mask derived from a plan.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use glob::Pattern;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::spectral::{summarize_tensors, SpectralSummary};
use crate::tensor_io::CheckpointView;

pub const PLAN_VERSION: u32 = 1;

pub const DEFAULT_EXCLUDES: [&str; 4] = ["*bias*", "*norm*", "*ln*", "*embedding*"];

/// Which tensors may be ranked at all.
#[derive(Debug, Clone)]
pub struct EligibilityFilter {
    min_dims: usize,
    excludes: Vec<Pattern>,
    min_elements: usize,
}

impl Default for EligibilityFilter {
    fn default() -> Self {
        Self::new(2, DEFAULT_EXCLUDES, 0).expect("default patterns are valid")
    }
}

impl EligibilityFilter {
    pub fn new<I, S>(min_dims: usize, name_exclude_patterns: I, min_elements: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_dims < 2 {
            return Err(Error::Config(format!("min_dims must be >= 2, got {min_dims}")));
        }
        let excludes = name_exclude_patterns
            .into_iter()
            .map(|p| {
                Pattern::new(p.as_ref())
                    .map_err(|e| Error::Config(format!("bad exclude pattern {:?}: {e}", p.as_ref())))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            min_dims,
            excludes,
            min_elements,
        })
    }

    /// Adds one more exclusion glob.
    pub fn exclude(mut self, pattern: &str) -> Result<Self> {
        let p = Pattern::new(pattern)
            .map_err(|e| Error::Config(format!("bad exclude pattern {pattern:?}: {e}")))?;
        self.excludes.push(p);
        Ok(self)
    }

    pub fn min_dims(&self) -> usize {
        self.min_dims
    }

    pub fn min_elements(&self) -> usize {
        self.min_elements
    }

    pub fn exclude_patterns(&self) -> impl Iterator<Item = &str> {
        self.excludes.iter().map(Pattern::as_str)
    }

    pub fn is_eligible(&self, name: &str, shape: &[usize]) -> bool {
        shape.len() >= self.min_dims
            && shape.iter().product::<usize>() >= self.min_elements
            && !self.excludes.iter().any(|p| p.matches(name))
    }
}

/// Names passing `filter`, sorted lexicographically.
pub fn eligible_tensors(view: &CheckpointView, filter: &EligibilityFilter) -> Vec<String> {
    // BTreeMap iteration is already name-sorted
    view.entries()
        .iter()
        .filter(|(n, e)| filter.is_eligible(n, &e.shape))
        .map(|(n, _)| n.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LowestKappa,
    HighestKappa,
    /// Seeded random subset; an experimental control, not a ranking.
    Random,
    ByName,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::LowestKappa,
        Strategy::HighestKappa,
        Strategy::Random,
        Strategy::ByName,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::LowestKappa => "lowest_kappa",
            Strategy::HighestKappa => "highest_kappa",
            Strategy::Random => "random",
            Strategy::ByName => "by_name",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTensor {
    pub name: String,
    pub kappa: f64,
}

/// Sorts by κ, ties broken by ascending name in both directions.
pub fn rank_by_kappa(summaries: &[SpectralSummary], order: KappaOrder) -> Vec<SelectedTensor> {
    let mut ranked: Vec<SelectedTensor> = summaries
        .iter()
        .map(|s| SelectedTensor {
            name: s.name.clone(),
            kappa: s.kappa,
        })
        .collect();
    ranked.sort_by(|a, b| {
        let by_kappa = match order {
            KappaOrder::Ascending => a.kappa.total_cmp(&b.kappa),
            KappaOrder::Descending => b.kappa.total_cmp(&a.kappa),
        };
        by_kappa.then_with(|| a.name.cmp(&b.name))
    });
    ranked
}

/// The stored outcome of the selection precompute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub version: u32,
    pub strategy: Strategy,
    pub budget: usize,
    pub zero_tol: f64,
    pub checkpoint_sha256: String,
    pub seed: u64,
    pub created_from: String,
    /// In rank order.
    pub selected: Vec<SelectedTensor>,
}

impl SelectionPlan {
    pub fn selected_names(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|s| s.name.as_str())
    }

    /// Compact JSON with sorted keys and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        // going through Value sorts every object's keys
        let value = serde_json::to_value(self)?;
        let mut s = serde_json::to_string(&value)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: SelectionPlan = serde_json::from_str(text)?;
        if plan.version != PLAN_VERSION {
            return Err(Error::Format(format!("unsupported plan version {}", plan.version)));
        }
        Ok(plan)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io_at(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&text)
    }
}

pub fn tool_version() -> String {
    format!("kappatune {}", env!("CARGO_PKG_VERSION"))
}

/// Builds a plan from already computed summaries.
///
/// `summaries` are the rankable (non-zero-spectrum) eligible tensors; their
/// input order does not matter.
pub fn plan_from_summaries(
    summaries: &[SpectralSummary],
    budget: usize,
    strategy: Strategy,
    zero_tol: f64,
    seed: u64,
    checkpoint_sha256: &str,
) -> Result<SelectionPlan> {
    if budget == 0 {
        return Err(Error::Config("budget K must be >= 1".into()));
    }
    if summaries.is_empty() {
        return Err(Error::EmptyEligibleSet);
    }
    let mut ordered = match strategy {
        Strategy::LowestKappa => rank_by_kappa(summaries, KappaOrder::Ascending),
        Strategy::HighestKappa => rank_by_kappa(summaries, KappaOrder::Descending),
        Strategy::ByName | Strategy::Random => {
            let mut by_name: Vec<SelectedTensor> = summaries
                .iter()
                .map(|s| SelectedTensor {
                    name: s.name.clone(),
                    kappa: s.kappa,
                })
                .collect();
            by_name.sort_by(|a, b| a.name.cmp(&b.name));
            if strategy == Strategy::Random {
                Stream::new(seed).shuffle(&mut by_name);
            }
            by_name
        }
    };
    ordered.truncate(budget);
    Ok(SelectionPlan {
        version: PLAN_VERSION,
        strategy,
        budget,
        zero_tol,
        checkpoint_sha256: checkpoint_sha256.to_string(),
        seed,
        created_from: tool_version(),
        selected: ordered,
    })
}

/// Splits summary results into rankable summaries, logging and dropping
/// all-zero tensors. Any other error is propagated.
pub fn rankable(results: Vec<(String, Result<SpectralSummary>)>) -> Result<(Vec<SpectralSummary>, Vec<String>)> {
    let mut ok = Vec::with_capacity(results.len());
    let mut zero = Vec::new();
    for (name, res) in results {
        match res {
            Ok(s) => ok.push(s),
            Err(Error::ZeroTensor(_)) => {
                log::warn!("tensor {name:?} has an all-zero spectrum; excluded from ranking");
                zero.push(name);
            }
            Err(e) => return Err(e.context(format!("tensor {name:?}"))),
        }
    }
    Ok((ok, zero))
}

/// Full selection precompute over a checkpoint on disk.
pub fn make_plan(
    view: &CheckpointView,
    filter: &EligibilityFilter,
    budget: usize,
    strategy: Strategy,
    zero_tol: f64,
    seed: u64,
) -> Result<SelectionPlan> {
    if budget == 0 {
        return Err(Error::Config("budget K must be >= 1".into()));
    }
    let names = eligible_tensors(view, filter);
    if names.is_empty() {
        return Err(Error::EmptyEligibleSet);
    }
    let (summaries, _) = rankable(summarize_tensors(view, &names, zero_tol))?;
    let sha = view.sha256()?;
    plan_from_summaries(&summaries, budget, strategy, zero_tol, seed, &sha)
}

/// Per-parameter trainability; `true` means unfrozen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainabilityMask(BTreeMap<String, bool>);

impl TrainabilityMask {
    pub fn from_trainable<'a>(param_names: impl IntoIterator<Item = &'a str>, trainable: impl Fn(&str) -> bool) -> Self {
        Self(
            param_names
                .into_iter()
                .map(|n| (n.to_string(), trainable(n)))
                .collect(),
        )
    }

    pub fn all<'a>(param_names: impl IntoIterator<Item = &'a str>, value: bool) -> Self {
        Self::from_trainable(param_names, |_| value)
    }

    /// Unknown names are frozen.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.0.get(name).copied().unwrap_or(false)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().filter(|(_, &v)| v).map(|(k, _)| k.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn as_map(&self) -> &BTreeMap<String, bool> {
        &self.0
    }
}

/// Mask that unfreezes exactly the plan's tensors present in `param_names`.
/// Planned names missing from the model are returned as warnings.
pub fn apply_plan_mask<'a>(
    param_names: impl IntoIterator<Item = &'a str>,
    plan: &SelectionPlan,
) -> (TrainabilityMask, Vec<String>) {
    let mask = TrainabilityMask::from_trainable(param_names, |n| plan.selected_names().any(|s| s == n));
    let missing: Vec<String> = plan
        .selected_names()
        .filter(|s| !mask.0.contains_key(*s))
        .map(str::to_string)
        .collect();
    for m in &missing {
        log::warn!("planned tensor {m:?} is not a model parameter");
    }
    (mask, missing)
}
