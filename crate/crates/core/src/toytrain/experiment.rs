//! Low-κ versus high-κ selective fine-tuning on a toy network.
//!
//! Per seed: pre-train on task A with everything trainable, snapshot, rank
//! the snapshot's eligible tensors by κ, then fine-tune a copy on task B
//! under each strategy's mask. Forgetting is the rise in task-A eval loss.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{make_synthetic_task, SyntheticTask, TaskData, TaskKind};
use super::mlp::{build_mlp, LossKind, MlpModel};
use super::train::{evaluate, train_task, TrainHyper};
use crate::error::{Error, Result};
use crate::infotheory::Activation;
use crate::rng::Stream;
use crate::selection::{
    apply_plan_mask, plan_from_summaries, rankable, tool_version, EligibilityFilter, SelectionPlan, Strategy,
    TrainabilityMask, PLAN_VERSION,
};
use crate::spectral::{summarize_records, DEFAULT_ZERO_TOL};
use crate::tensor_io::sha256_hex;

/// Seeds below this count make a median comparison meaningless.
pub const MIN_SEEDS_FOR_MEDIAN: usize = 3;
pub const INSUFFICIENT_SEEDS_FLAG: &str = "insufficient seeds for median claim";

// salts for the per-seed derived streams
const SALT_INIT: u64 = 1;
const SALT_TASK_A: u64 = 2;
const SALT_TASK_B: u64 = 3;
const SALT_PRETRAIN: u64 = 4;
const SALT_FINETUNE: u64 = 5;

fn default_zero_tol() -> f64 {
    DEFAULT_ZERO_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgettingConfig {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub task_a: SyntheticTask,
    pub task_b: SyntheticTask,
    /// Fraction of eligible tensors to unfreeze.
    pub budget_fraction: f64,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Task-A pre-training; defaults to `hyper`.
    #[serde(default)]
    pub pretrain_hyper: Option<TrainHyper>,
    /// Task-B fine-tuning.
    pub hyper: TrainHyper,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
}

impl ForgettingConfig {
    /// The shipped demo: MLP [16, 32, 32, 32, 8], two teacher regression
    /// tasks, 25% budget, 10 seeds.
    pub fn demo() -> Self {
        let task = |seed| SyntheticTask {
            kind: TaskKind::RegressionTeacher,
            input_dim: 16,
            output_dim: 8,
            n_train: 512,
            n_eval: 512,
            seed,
            noise: 0.05,
        };
        let hyper = TrainHyper {
            lr: 0.05,
            epochs: 60,
            batch: 32,
            loss: LossKind::Mse,
            shuffle_seed: 0,
        };
        Self {
            layer_sizes: vec![16, 32, 32, 32, 8],
            activation: Activation::Tanh,
            task_a: task(101),
            task_b: task(202),
            budget_fraction: 0.25,
            strategies: vec![Strategy::LowestKappa, Strategy::HighestKappa],
            seeds: (0..10).collect(),
            pretrain_hyper: None,
            hyper,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain(&self) -> &TrainHyper {
        self.pretrain_hyper.as_ref().unwrap_or(&self.hyper)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("layer_sizes: need at least input and output sizes".into()));
        }
        let (d_in, d_out) = (self.layer_sizes[0], *self.layer_sizes.last().unwrap());
        for (field, task) in [("task_a", &self.task_a), ("task_b", &self.task_b)] {
            task.validate().map_err(|e| Error::Config(format!("{field}: {e}")))?;
            if task.input_dim != d_in || task.output_dim != d_out {
                return Err(Error::Config(format!(
                    "{field}: dims {}->{} do not match the model's {d_in}->{d_out}",
                    task.input_dim, task.output_dim
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(Error::Config(format!(
                "budget_fraction: must lie in [0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.strategies.len() < 2 {
            return Err(Error::Config("strategies: need at least 2 to compare".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::Config(format!("strategies: {s} listed twice")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: need at least one seed".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("seeds: {s} listed twice")));
            }
        }
        self.pretrain().validate().map_err(|e| Error::Config(format!("pretrain_hyper: {e}")))?;
        self.hyper.validate().map_err(|e| Error::Config(format!("hyper: {e}")))?;
        if !(self.zero_tol > 0.0 && self.zero_tol < 1.0) {
            return Err(Error::Config(format!("zero_tol: must lie in (0, 1), got {}", self.zero_tol)));
        }
        Ok(())
    }
}

/// `K = max(1, round(fraction · eligible))`, except that a zero fraction
/// selects nothing.
pub fn budget_from_fraction(fraction: f64, eligible: usize) -> usize {
    if fraction <= 0.0 || eligible == 0 {
        return 0;
    }
    ((fraction * eligible as f64).round() as usize).clamp(1, eligible)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub unfrozen: Vec<String>,
    pub trainable_params: usize,
    pub loss_a_before: f64,
    pub loss_a_after: f64,
    pub loss_b_before: f64,
    pub loss_b_final: f64,
    /// `loss_a_after - loss_a_before`; negative means backward transfer.
    pub forgetting: f64,
    pub frozen_intact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMedians {
    pub strategy: Strategy,
    pub runs: usize,
    pub median_forgetting: f64,
    pub median_loss_a_after: f64,
    pub median_loss_b_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub config: ForgettingConfig,
    pub created_from: String,
    pub eligible: Vec<String>,
    pub budget_k: usize,
    /// Ordered by strategy, then seed, as listed in the config.
    pub runs: Vec<RunRecord>,
    pub medians: Vec<StrategyMedians>,
    pub frozen_intact: bool,
    pub flags: Vec<String>,
}

/// Plan used by one (strategy, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub strategy: Strategy,
    pub seed: u64,
    pub plan: SelectionPlan,
}

#[derive(Debug, Clone)]
pub struct ForgettingOutcome {
    pub report: ForgettingReport,
    pub plans: Vec<RunPlan>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ForgettingReport {
    pub fn medians_for(&self, strategy: Strategy) -> Option<&StrategyMedians> {
        self.medians.iter().find(|m| m.strategy == strategy)
    }

    pub fn has_enough_seeds(&self) -> bool {
        self.config.seeds.len() >= MIN_SEEDS_FOR_MEDIAN
    }

    /// `median forgetting(lowest_kappa) < median forgetting(highest_kappa)`,
    /// or `None` if either strategy was not run.
    pub fn lowest_beats_highest(&self) -> Option<bool> {
        let lo = self.medians_for(Strategy::LowestKappa)?;
        let hi = self.medians_for(Strategy::HighestKappa)?;
        Some(lo.median_forgetting < hi.median_forgetting)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per run.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record([
            "strategy",
            "seed",
            "loss_a_before",
            "loss_a_after",
            "loss_b_before",
            "loss_b_final",
            "forgetting",
            "frozen_intact",
            "unfrozen",
        ])
        .map_err(csv_err)?;
        for r in &self.runs {
            w.write_record([
                r.strategy.as_str().to_string(),
                r.seed.to_string(),
                r.loss_a_before.to_string(),
                r.loss_a_after.to_string(),
                r.loss_b_before.to_string(),
                r.loss_b_final.to_string(),
                r.forgetting.to_string(),
                r.frozen_intact.to_string(),
                r.unfrozen.join(";"),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn task_seed(task: &SyntheticTask, run_seed: u64, salt: u64) -> u64 {
    Stream::derived(task.seed ^ salt.rotate_left(32), run_seed).next_u64()
}

fn hyper_for(base: &TrainHyper, run_seed: u64, salt: u64) -> TrainHyper {
    TrainHyper {
        shuffle_seed: Stream::derived(run_seed, salt).next_u64(),
        ..base.clone()
    }
}

fn all_names(model: &MlpModel<f64>) -> Vec<String> {
    model.param_names()
}

/// True if every parameter the mask freezes is bit-identical in both models.
fn frozen_unchanged(before: &MlpModel<f64>, after: &MlpModel<f64>, mask: &TrainabilityMask) -> bool {
    all_names(before).iter().filter(|n| !mask.is_trainable(n)).all(|n| {
        let (a, b) = (before.param(n).unwrap(), after.param(n).unwrap());
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

fn empty_plan(strategy: Strategy, zero_tol: f64, seed: u64, sha: &str) -> SelectionPlan {
    SelectionPlan {
        version: PLAN_VERSION,
        strategy,
        budget: 0,
        zero_tol,
        checkpoint_sha256: sha.to_string(),
        seed,
        created_from: tool_version(),
        selected: Vec::new(),
    }
}

struct SeedOutcome {
    eligible: Vec<String>,
    budget_k: usize,
    runs: Vec<(RunRecord, SelectionPlan)>,
}

fn run_seed(cfg: &ForgettingConfig, seed: u64) -> Result<SeedOutcome> {
    let ctx = |e: Error, what: &str| e.context(format!("seed {seed}: {what}"));
    let task_a: TaskData<f64> = make_synthetic_task(&cfg.task_a.with_seed(task_seed(&cfg.task_a, seed, SALT_TASK_A)))
        .map_err(|e| ctx(e, "task_a"))?;
    let task_b: TaskData<f64> = make_synthetic_task(&cfg.task_b.with_seed(task_seed(&cfg.task_b, seed, SALT_TASK_B)))
        .map_err(|e| ctx(e, "task_b"))?;
    let init_seed = Stream::derived(seed, SALT_INIT).next_u64();
    let mut model = build_mlp::<f64>(&cfg.layer_sizes, cfg.activation, init_seed)?;
    let names = all_names(&model);
    let everything = TrainabilityMask::all(names.iter().map(String::as_str), true);
    let pre = hyper_for(cfg.pretrain(), seed, SALT_PRETRAIN);
    train_task(&mut model, &task_a.train, &everything, &pre).map_err(|e| ctx(e, "pre-training on task A"))?;

    // the plan is computed from the snapshot as stored on disk
    let records = model.to_records()?;
    let sha = sha256_hex(&crate::tensor_io::encode_checkpoint(&records)?);
    let filter = EligibilityFilter::default();
    let eligible: Vec<_> = records
        .iter()
        .filter(|r| filter.is_eligible(r.name(), r.shape()))
        .collect();
    let mut eligible_names: Vec<String> = eligible.iter().map(|r| r.name().to_string()).collect();
    eligible_names.sort();
    let (summaries, _) = rankable(summarize_records(&eligible, cfg.zero_tol))?;
    let k = budget_from_fraction(cfg.budget_fraction, summaries.len());

    let loss_a_before = evaluate(&model, &task_a.eval, cfg.pretrain().loss)?;
    let loss_b_before = evaluate(&model, &task_b.eval, cfg.hyper.loss)?;
    let fine = hyper_for(&cfg.hyper, seed, SALT_FINETUNE);

    let mut runs = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let plan = if k == 0 {
            empty_plan(strategy, cfg.zero_tol, seed, &sha)
        } else {
            plan_from_summaries(&summaries, k, strategy, cfg.zero_tol, seed, &sha)?
        };
        let (mask, _) = apply_plan_mask(names.iter().map(String::as_str), &plan);
        let mut tuned = model.clone();
        train_task(&mut tuned, &task_b.train, &mask, &fine)
            .map_err(|e| ctx(e, &format!("fine-tuning on task B with {strategy}")))?;
        let loss_a_after = evaluate(&tuned, &task_a.eval, cfg.pretrain().loss)?;
        let loss_b_final = evaluate(&tuned, &task_b.eval, cfg.hyper.loss)?;
        let unfrozen: Vec<String> = mask.trainable_names().map(str::to_string).collect();
        let trainable_params = unfrozen.iter().map(|n| model.param(n).unwrap().len()).sum();
        runs.push((
            RunRecord {
                strategy,
                seed,
                unfrozen,
                trainable_params,
                loss_a_before,
                loss_a_after,
                loss_b_before,
                loss_b_final,
                forgetting: loss_a_after - loss_a_before,
                frozen_intact: frozen_unchanged(&model, &tuned, &mask),
            },
            plan,
        ));
    }
    Ok(SeedOutcome {
        eligible: eligible_names,
        budget_k: k,
        runs,
    })
}

/// Runs the whole experiment. Seeds run in parallel on the current rayon
/// pool; the result does not depend on the number of threads.
pub fn forgetting_experiment(cfg: &ForgettingConfig) -> Result<ForgettingOutcome> {
    cfg.validate()?;
    let per_seed: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<_>>()?;

    let eligible = per_seed[0].eligible.clone();
    let budget_k = per_seed[0].budget_k;
    let mut runs = Vec::new();
    let mut plans = Vec::new();
    for (si, &strategy) in cfg.strategies.iter().enumerate() {
        for (outcome, &seed) in per_seed.iter().zip(&cfg.seeds) {
            let (record, plan) = &outcome.runs[si];
            runs.push(record.clone());
            plans.push(RunPlan {
                strategy,
                seed,
                plan: plan.clone(),
            });
        }
    }
    let medians = cfg
        .strategies
        .iter()
        .map(|&strategy| {
            let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.strategy == strategy).collect();
            let col = |f: fn(&RunRecord) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            StrategyMedians {
                strategy,
                runs: rs.len(),
                median_forgetting: col(|r| r.forgetting),
                median_loss_a_after: col(|r| r.loss_a_after),
                median_loss_b_final: col(|r| r.loss_b_final),
            }
        })
        .collect();
    let mut flags = Vec::new();
    if cfg.seeds.len() < MIN_SEEDS_FOR_MEDIAN {
        flags.push(INSUFFICIENT_SEEDS_FLAG.to_string());
    }
    if budget_k == 0 {
        flags.push("budget is zero: every tensor stays frozen".to_string());
    }
    let frozen_intact = runs.iter().all(|r| r.frozen_intact);
    for r in runs.iter().filter(|r| !r.frozen_intact) {
        log::error!("{} seed {}: a frozen tensor changed during fine-tuning", r.strategy, r.seed);
    }
    Ok(ForgettingOutcome {
        report: ForgettingReport {
            config: cfg.clone(),
            created_from: tool_version(),
            eligible,
            budget_k,
            runs,
            medians,
            frozen_intact,
            flags,
        },
        plans,
    })
}
