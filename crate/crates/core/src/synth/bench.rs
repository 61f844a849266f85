//! End-to-end runs of the pipeline on synthetic worlds: hub growth, head
//! combination vs single-head ablation, and oracle comparisons.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::*;
use super::SynthError;
use crate::chco::{ChcoConfig, ChcoResult};
use crate::labelling::{aggregate_label, mean_logits, AggregationMode, HubRecord, DEFAULT_DISCOUNT};
use crate::reuse::{predict, predict_with_patch, ConfidenceMode, GeneralistOutput, ModelOutput, PatchPartition, Route};
use crate::sdag::{match_classes, HashedTrigramEmbedder, MatchConfig, MatchResult, TaskSpec};
use crate::selection::{
    default_threshold, score_hub, select_ensembles, Method, ScoreOptions, SelectionConfig, SelectionReport,
};

/// Everything between a trace and a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub discount: f64,
    pub aggregation_mode: AggregationMode,
    pub min_similarity: f64,
    pub samples_per_node: usize,
    pub chco: ChcoConfig,
    pub method: Method,
    pub budget_k: usize,
    /// `None` uses the uniform-predictor loss for the matched class count.
    pub score_threshold: Option<f64>,
    pub confidence_mode: ConfidenceMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            discount: DEFAULT_DISCOUNT,
            aggregation_mode: AggregationMode::Recursive,
            min_similarity: MatchConfig::default().min_similarity,
            samples_per_node: 50,
            chco: ChcoConfig::default(),
            method: Method::Chco,
            budget_k: 2,
            score_threshold: None,
            confidence_mode: ConfidenceMode::Prob,
        }
    }
}

fn pipe<E: std::fmt::Display>(e: E) -> SynthError {
    SynthError::Pipeline(e.to_string())
}

/// Pre-tests an expert on the world's graph and builds its hub record.
pub fn label_expert(world: &SyntheticWorld, expert: &SyntheticExpert, cfg: &PipelineConfig) -> Result<HubRecord, SynthError> {
    let trace = gen_trace(expert, world, cfg.samples_per_node)?;
    let means = mean_logits(&trace).map_err(pipe)?;
    let label = aggregate_label(&world.sdag, &means, cfg.discount, cfg.aggregation_mode).map_err(pipe)?;
    Ok(HubRecord::new(label, "synthetic"))
}

/// Task whose class texts are the names of `class_nodes`, matched against the graph.
pub fn match_task(
    world: &SyntheticWorld,
    task_id: &str,
    class_nodes: &[String],
    min_similarity: f64,
) -> Result<(TaskSpec, MatchResult), SynthError> {
    let texts: Vec<String> = class_nodes
        .iter()
        .map(|n| world.name_of(n).map(str::to_string).ok_or_else(|| SynthError::UnknownClass(n.clone())))
        .collect::<Result<_, _>>()?;
    let task = TaskSpec::new(task_id, texts).map_err(pipe)?;
    let m = match_classes(&task, &world.sdag, &HashedTrigramEmbedder, &MatchConfig { min_similarity }).map_err(pipe)?;
    Ok((task, m))
}

/// Scores the hub; too few matched classes yields no scores at all.
pub fn score_or_empty(
    hub: &[HubRecord],
    m: &MatchResult,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BTreeMap<String, ChcoResult>, SynthError> {
    let opts = ScoreOptions { seed, allow_version_mismatch: false };
    match score_hub(hub, m, &cfg.chco, cfg.method, &opts) {
        Ok(s) => Ok(s),
        Err(crate::selection::SelectionError::TooFewMatchedClasses(_)) => Ok(BTreeMap::new()),
        Err(e) => Err(pipe(e)),
    }
}

pub fn selection_config(cfg: &PipelineConfig, m: &MatchResult) -> Result<SelectionConfig, SynthError> {
    let beta = cfg.score_threshold.unwrap_or_else(|| default_threshold(m.matched.len()));
    SelectionConfig::new(cfg.budget_k, beta).map_err(pipe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy_all: f64,
    /// Accuracy on samples whose true class is covered by an ensemble.
    pub accuracy_covered: Option<f64>,
    pub coverage: f64,
    pub models_used: usize,
    pub expert_routed: usize,
}

/// Outputs of every hub expert on every test sample.
pub fn expert_outputs(experts: &[SyntheticExpert], test: &[LabeledSample]) -> Result<Vec<Vec<ModelOutput>>, SynthError> {
    test.iter()
        .map(|s| {
            experts
                .iter()
                .map(|e| ModelOutput::from_logits(e.model_id.clone(), e.logits(&s.features)).map_err(pipe))
                .collect()
        })
        .collect()
}

/// Predicts every test sample from a selection report. Without a generalist,
/// only covered classes can be predicted.
pub fn evaluate_report(
    report: &SelectionReport,
    outputs: &[Vec<ModelOutput>],
    generalist: Option<&SyntheticGeneralist>,
    test: &[LabeledSample],
    mode: ConfidenceMode,
) -> Result<Evaluation, SynthError> {
    let partition = PatchPartition::from_report(report);
    let covered: BTreeSet<usize> = report.ensembles.keys().copied().collect();
    let (mut hits, mut cov_hits, mut cov_total, mut expert_routed) = (0, 0, 0, 0);
    for (s, outs) in test.iter().zip(outputs) {
        let pred = match generalist {
            Some(g) => {
                let g = GeneralistOutput::new(g.probabilities(&s.features)).map_err(pipe)?;
                predict_with_patch(outs, report, &g, &partition, mode).map_err(pipe)?
            }
            None => predict(outs, report, mode).map_err(pipe)?,
        };
        let correct = pred.class_index == s.class_index;
        hits += usize::from(correct);
        if pred.route == Route::Experts {
            expert_routed += 1;
        }
        if covered.contains(&s.class_index) {
            cov_total += 1;
            cov_hits += usize::from(correct);
        }
    }
    Ok(Evaluation {
        accuracy_all: hits as f64 / test.len().max(1) as f64,
        accuracy_covered: (cov_total > 0).then(|| cov_hits as f64 / cov_total as f64),
        coverage: report.coverage,
        models_used: report.models_used,
        expert_routed,
    })
}

/// Standalone accuracy of the generalist on a test set.
pub fn generalist_accuracy(g: &SyntheticGeneralist, test: &[LabeledSample]) -> f64 {
    let hits = test
        .iter()
        .filter(|s| crate::matrix::argmax(&g.probabilities(&s.features)) == Some(s.class_index))
        .count();
    hits as f64 / test.len().max(1) as f64
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

fn singletons(leaves: &[String]) -> Vec<Vec<String>> {
    leaves.iter().map(|l| vec![l.clone()]).collect()
}

fn random_leaves(world: &SyntheticWorld, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    sample(rng, world.leaves.len(), n).into_iter().map(|i| world.leaves[i].clone()).collect()
}

// ---------------------------------------------------------------------------
// hub growth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConfig {
    pub scenario: String,
    pub world: WorldConfig,
    pub task_classes: usize,
    pub num_experts: usize,
    /// Inclusive range of leaves per expert.
    pub expert_classes: (usize, usize),
    /// Range of expert corruption levels.
    pub corruption: (f64, f64),
    pub generalist_corruption: f64,
    pub hub_sizes: Vec<usize>,
    pub test_samples: usize,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            scenario: "hub-growth".into(),
            world: WorldConfig::default(),
            task_classes: 20,
            num_experts: 48,
            expert_classes: (10, 20),
            corruption: (0.0, 0.5),
            generalist_corruption: DEFAULT_GENERALIST_CORRUPTION,
            hub_sizes: vec![0, 5, 11, 16, 21, 27, 32, 37, 43, 48],
            test_samples: 500,
            seeds: (0..20).collect(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Generalist noise level for the default world, tuned so the generalist
/// lands at roughly three quarters of a clean specialist's accuracy.
pub const DEFAULT_GENERALIST_CORRUPTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub hub_size: usize,
    pub accuracy_covered: Option<f64>,
    pub accuracy_all: f64,
    pub coverage: f64,
    pub models_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub generalist_accuracy: f64,
    pub steps: Vec<StepRecord>,
}

/// Means over seeds for one hub size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub hub_size: usize,
    /// Mean over the seeds where some class was covered.
    pub accuracy_covered: Option<f64>,
    pub accuracy_all: f64,
    pub coverage: f64,
    pub models_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenario: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub steps: Vec<StepSummary>,
    pub runs: Vec<SeedRun>,
}

impl BenchmarkResult {
    /// One row per step, tab separated, with a header line.
    pub fn table(&self) -> String {
        let mut out = String::from("hub_size\taccuracy_covered\taccuracy_all\tcoverage\tmodels_used\n");
        for s in &self.steps {
            let cov = s.accuracy_covered.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.3}\n",
                s.hub_size, cov, s.accuracy_all, s.coverage, s.models_used
            ));
        }
        out
    }
}

fn summarize(hub_sizes: &[usize], runs: &[SeedRun]) -> Vec<StepSummary> {
    let n = runs.len().max(1) as f64;
    hub_sizes
        .iter()
        .enumerate()
        .map(|(i, &hub_size)| {
            let cov: Vec<f64> = runs.iter().filter_map(|r| r.steps[i].accuracy_covered).collect();
            StepSummary {
                hub_size,
                accuracy_covered: (!cov.is_empty()).then(|| cov.iter().sum::<f64>() / cov.len() as f64),
                accuracy_all: runs.iter().map(|r| r.steps[i].accuracy_all).sum::<f64>() / n,
                coverage: runs.iter().map(|r| r.steps[i].coverage).sum::<f64>() / n,
                models_used: runs.iter().map(|r| r.steps[i].models_used as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        self.world.validate()?;
        if self.hub_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("hub sizes must be strictly increasing");
        }
        if self.hub_sizes.last().is_some_and(|&s| s > self.num_experts) {
            return bad("hub size exceeds the number of experts");
        }
        let (lo, hi) = self.expert_classes;
        if lo == 0 || lo > hi || hi > self.world.num_leaf_classes {
            return bad("expert class range is invalid for the world");
        }
        if self.task_classes < 2 || self.task_classes > self.world.num_leaf_classes {
            return bad("task size must be between 2 and the number of leaves");
        }
        if self.seeds.is_empty() || self.test_samples == 0 {
            return bad("need seeds and test samples");
        }
        Ok(())
    }
}

/// One random hub-growth world: experts in hub order, the task, a generalist
/// and a labelled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub world: SyntheticWorld,
    pub task: Vec<String>,
    pub experts: Vec<SyntheticExpert>,
    pub oracles: Vec<ExpertOracle>,
    pub generalist: SyntheticGeneralist,
    pub test: Vec<LabeledSample>,
}

pub fn gen_scenario(cfg: &ScalingConfig, seed: u64) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let world = gen_world(seed, &cfg.world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let task = random_leaves(&world, cfg.task_classes, &mut rng);

    let mut experts = Vec::with_capacity(cfg.num_experts);
    let mut oracles = Vec::with_capacity(cfg.num_experts);
    for i in 0..cfg.num_experts {
        let size = rng.random_range(cfg.expert_classes.0..=cfg.expert_classes.1);
        let subset = random_leaves(&world, size, &mut rng);
        let corruption = if cfg.corruption.1 > cfg.corruption.0 {
            rng.random_range(cfg.corruption.0..cfg.corruption.1)
        } else {
            cfg.corruption.0
        };
        let (e, o) = gen_expert(&world, &subset, corruption, format!("model-{i:02}"), rng.random())?;
        experts.push(e);
        oracles.push(o);
    }
    let generalist = gen_generalist(&world, &task, cfg.generalist_corruption, sub_seed(seed, 3))?;
    let test = sample_task(&world, &singletons(&task), cfg.test_samples, sub_seed(seed, 4))?;
    Ok(Scenario { seed, world, task, experts, oracles, generalist, test })
}

fn scaling_seed(cfg: &ScalingConfig, seed: u64) -> Result<SeedRun, SynthError> {
    let Scenario { world, task, experts, generalist, test, .. } = gen_scenario(cfg, seed)?;
    let hub: Vec<HubRecord> = experts
        .iter()
        .map(|e| label_expert(&world, e, &cfg.pipeline))
        .collect::<Result<_, _>>()?;

    let (_, m) = match_task(&world, "task", &task, cfg.pipeline.min_similarity)?;
    let sel = selection_config(&cfg.pipeline, &m)?;
    // a model's scores do not depend on which other models are in the hub
    let all_scores = score_or_empty(&hub, &m, &cfg.pipeline, sub_seed(seed, 2))?;

    let outputs = expert_outputs(&experts, &test)?;

    let mut steps = Vec::with_capacity(cfg.hub_sizes.len());
    for &size in &cfg.hub_sizes {
        let members: BTreeSet<&str> = experts[..size].iter().map(|e| e.model_id.as_str()).collect();
        let scores: BTreeMap<String, ChcoResult> = all_scores
            .iter()
            .filter(|(id, _)| members.contains(id.as_str()))
            .map(|(id, r)| (id.clone(), r.clone()))
            .collect();
        let report = select_ensembles(&scores, &m, &sel);
        let ev = evaluate_report(&report, &outputs, Some(&generalist), &test, cfg.pipeline.confidence_mode)?;
        steps.push(StepRecord {
            hub_size: size,
            accuracy_covered: ev.accuracy_covered,
            accuracy_all: ev.accuracy_all,
            coverage: ev.coverage,
            models_used: ev.models_used,
        });
    }
    Ok(SeedRun {
        seed,
        generalist_accuracy: generalist_accuracy(&generalist, &test),
        steps,
    })
}

/// Grows a hub of random experts step by step and evaluates the full pipeline
/// with the generalist patch at every size.
pub fn run_scaling_benchmark(cfg: &ScalingConfig) -> Result<BenchmarkResult, SynthError> {
    cfg.validate()?;
    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&s| scaling_seed(cfg, s))
        .collect::<Result<_, _>>()?;
    Ok(BenchmarkResult {
        scenario: cfg.scenario.clone(),
        method: cfg.pipeline.method,
        seeds: cfg.seeds.clone(),
        steps: summarize(&cfg.hub_sizes, &runs),
        runs,
    })
}

// ---------------------------------------------------------------------------
// coarse task over a fine-grained expert

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvcConfig {
    /// Two superclasses of ten leaves each by default.
    pub world: WorldConfig,
    pub expert_corruption: f64,
    pub test_samples: usize,
    pub bayes_samples: usize,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
    /// Weight above which a head counts as used.
    pub active_weight: f64,
}

impl Default for DvcConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig {
                num_leaf_classes: 20,
                fanout: 10,
                top_spread: 3.0,
                ..Default::default()
            },
            expert_corruption: 0.3,
            test_samples: 1000,
            bayes_samples: 5000,
            seeds: (0..20).collect(),
            pipeline: PipelineConfig::default(),
            active_weight: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvcSeedRecord {
    pub seed: u64,
    pub chco_accuracy: f64,
    pub heu_accuracy: f64,
    pub chco_loss: f64,
    pub heu_loss: f64,
    pub chco_heads_per_class: Vec<usize>,
    pub heu_heads_per_class: Vec<usize>,
    pub bayes_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvcResult {
    pub records: Vec<DvcSeedRecord>,
    pub chco_mean_accuracy: f64,
    pub heu_mean_accuracy: f64,
}

fn dvc_seed(cfg: &DvcConfig, seed: u64) -> Result<DvcSeedRecord, SynthError> {
    let world = gen_world(seed, &cfg.world)?;
    let root = world
        .sdag
        .topological_order()
        .first()
        .cloned()
        .ok_or_else(|| SynthError::InvalidConfig("empty world".into()))?;
    let supers: Vec<String> = world.sdag.successors(&root).to_vec();
    if supers.len() < 2 || supers.iter().any(|s| world.descendants[s].len() < 2) {
        return Err(SynthError::InvalidConfig("world needs ≥ 2 superclasses with several leaves".into()));
    }
    let groups: Vec<Vec<String>> = supers.iter().map(|s| world.descendants[s].clone()).collect();

    let (expert, _) = gen_expert(&world, &world.leaves, cfg.expert_corruption, "fine", sub_seed(seed, 1))?;
    let hub = vec![label_expert(&world, &expert, &cfg.pipeline)?];
    let (_, m) = match_task(&world, "coarse", &supers, cfg.pipeline.min_similarity)?;
    if m.matched.len() != supers.len() {
        return Err(SynthError::Pipeline("superclass names did not match their nodes".into()));
    }
    let test = sample_task(&world, &groups, cfg.test_samples, sub_seed(seed, 2))?;
    let outputs = expert_outputs(std::slice::from_ref(&expert), &test)?;
    // every predictor is kept so the two methods are compared head to head
    let sel = SelectionConfig::new(1, f64::INFINITY).map_err(pipe)?;

    let run = |method: Method| -> Result<(f64, f64, Vec<usize>), SynthError> {
        let pc = PipelineConfig { method, ..cfg.pipeline.clone() };
        let scores = score_or_empty(&hub, &m, &pc, seed)?;
        let r = &scores[&expert.model_id];
        let heads = (0..supers.len()).map(|c| r.active_heads(c, cfg.active_weight)).collect();
        let report = select_ensembles(&scores, &m, &sel);
        let ev = evaluate_report(&report, &outputs, None, &test, pc.confidence_mode)?;
        Ok((ev.accuracy_all, r.total_loss, heads))
    };
    let (chco_accuracy, chco_loss, chco_heads_per_class) = run(Method::Chco)?;
    let (heu_accuracy, heu_loss, heu_heads_per_class) = run(Method::Heu)?;
    let (bayes_accuracy, _) = bayes_accuracy_groups(&world, &groups, cfg.bayes_samples, sub_seed(seed, 3))?;
    Ok(DvcSeedRecord {
        seed,
        chco_accuracy,
        heu_accuracy,
        chco_loss,
        heu_loss,
        chco_heads_per_class,
        heu_heads_per_class,
        bayes_accuracy,
    })
}

/// Two-superclass task solved by one fine-grained expert: head combination
/// against the best single head per class.
pub fn run_dvc_ablation(cfg: &DvcConfig) -> Result<DvcResult, SynthError> {
    let records: Vec<DvcSeedRecord> = cfg
        .seeds
        .par_iter()
        .map(|&s| dvc_seed(cfg, s))
        .collect::<Result<_, _>>()?;
    let n = records.len().max(1) as f64;
    Ok(DvcResult {
        chco_mean_accuracy: records.iter().map(|r| r.chco_accuracy).sum::<f64>() / n,
        heu_mean_accuracy: records.iter().map(|r| r.heu_accuracy).sum::<f64>() / n,
        records,
    })
}

// ---------------------------------------------------------------------------
// fully covered tasks against the Bayes rule

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoveredConfig {
    pub world: WorldConfig,
    pub task_classes: usize,
    pub num_experts: usize,
    /// Extra non-task leaves per expert, inclusive range.
    pub extra_classes: (usize, usize),
    pub test_samples: usize,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
}

impl Default for CoveredConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig {
                num_leaf_classes: 40,
                ..Default::default()
            },
            task_classes: 20,
            num_experts: 5,
            extra_classes: (0, 10),
            test_samples: 5000,
            seeds: (0..20).collect(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveredRecord {
    pub seed: u64,
    pub accuracy: f64,
    /// Accuracy of the Bayes rule on the same test samples.
    pub bayes_accuracy: f64,
    /// Standard error of the paired per-sample difference in correctness.
    pub difference_se: f64,
    pub coverage: f64,
}

fn covered_seed(cfg: &CoveredConfig, seed: u64) -> Result<CoveredRecord, SynthError> {
    let world = gen_world(seed, &cfg.world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let task = random_leaves(&world, cfg.task_classes, &mut rng);
    let others: Vec<String> = world.leaves.iter().filter(|l| !task.contains(l)).cloned().collect();
    let mut experts = Vec::new();
    for i in 0..cfg.num_experts {
        let extra = rng.random_range(cfg.extra_classes.0..=cfg.extra_classes.1).min(others.len());
        let mut subset = task.clone();
        subset.extend(sample(&mut rng, others.len(), extra).into_iter().map(|j| others[j].clone()));
        let (e, _) = gen_expert(&world, &subset, 0.0, format!("model-{i:02}"), rng.random())?;
        experts.push(e);
    }
    let hub: Vec<HubRecord> = experts
        .iter()
        .map(|e| label_expert(&world, e, &cfg.pipeline))
        .collect::<Result<_, _>>()?;
    let (_, m) = match_task(&world, "task", &task, cfg.pipeline.min_similarity)?;
    let sel = selection_config(&cfg.pipeline, &m)?;
    let scores = score_or_empty(&hub, &m, &cfg.pipeline, sub_seed(seed, 2))?;
    let report = select_ensembles(&scores, &m, &sel);
    let test = sample_task(&world, &singletons(&task), cfg.test_samples, sub_seed(seed, 3))?;
    let groups = singletons(&task);
    let mut diffs = Vec::with_capacity(test.len());
    let (mut hits, mut bayes_hits) = (0usize, 0usize);
    for s in &test {
        let outs = experts
            .iter()
            .map(|e| ModelOutput::from_logits(e.model_id.clone(), e.logits(&s.features)).map_err(pipe))
            .collect::<Result<Vec<_>, _>>()?;
        let p = predict(&outs, &report, cfg.pipeline.confidence_mode).map_err(pipe)?;
        let a = usize::from(p.class_index == s.class_index);
        let b = usize::from(bayes_predict(&world, &groups, &s.features) == s.class_index);
        hits += a;
        bayes_hits += b;
        diffs.push(a as f64 - b as f64);
    }
    let n = test.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(CoveredRecord {
        seed,
        accuracy: hits as f64 / n,
        bayes_accuracy: bayes_hits as f64 / n,
        difference_se: (var / n).sqrt(),
        coverage: report.coverage,
    })
}

/// Uncorrupted experts that all cover the task: the pipeline should land on
/// the Bayes rule.
pub fn run_covered_suite(cfg: &CoveredConfig) -> Result<Vec<CoveredRecord>, SynthError> {
    cfg.seeds.par_iter().map(|&s| covered_seed(cfg, s)).collect()
}

// ---------------------------------------------------------------------------
// generalist patch with growing expert coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub world: WorldConfig,
    pub task_classes: usize,
    /// Coverage grows one block of this many classes at a time.
    pub block_size: usize,
    pub expert_corruption: f64,
    pub generalist_corruption: f64,
    pub test_samples: usize,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            task_classes: 20,
            block_size: 5,
            expert_corruption: 0.0,
            generalist_corruption: DEFAULT_GENERALIST_CORRUPTION,
            test_samples: 2000,
            seeds: (0..20).collect(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchLevel {
    /// Experts in the hub at this level.
    pub experts: usize,
    pub coverage: f64,
    pub error: f64,
    /// Expert-side and generalist accuracy on test samples of covered classes.
    pub expert_accuracy_on_covered: Option<f64>,
    pub generalist_accuracy_on_covered: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub seed: u64,
    pub generalist_error: f64,
    pub levels: Vec<PatchLevel>,
}

fn patch_seed(cfg: &PatchConfig, seed: u64) -> Result<PatchRecord, SynthError> {
    let world = gen_world(seed, &cfg.world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let task = random_leaves(&world, cfg.task_classes, &mut rng);
    let blocks = cfg.task_classes.div_ceil(cfg.block_size);
    // expert j covers the first j+1 blocks of the task
    let mut experts = Vec::new();
    for j in 0..blocks {
        let end = ((j + 1) * cfg.block_size).min(task.len());
        let (e, _) = gen_expert(&world, &task[..end], cfg.expert_corruption, format!("model-{j:02}"), rng.random())?;
        experts.push(e);
    }
    let hub: Vec<HubRecord> = experts
        .iter()
        .map(|e| label_expert(&world, e, &cfg.pipeline))
        .collect::<Result<_, _>>()?;
    let (_, m) = match_task(&world, "task", &task, cfg.pipeline.min_similarity)?;
    let sel = selection_config(&cfg.pipeline, &m)?;
    let all_scores = score_or_empty(&hub, &m, &cfg.pipeline, sub_seed(seed, 2))?;
    let generalist = gen_generalist(&world, &task, cfg.generalist_corruption, sub_seed(seed, 3))?;
    let test = sample_task(&world, &singletons(&task), cfg.test_samples, sub_seed(seed, 4))?;
    let outputs = expert_outputs(&experts, &test)?;

    let mut levels = Vec::new();
    for n in 0..=experts.len() {
        let members: BTreeSet<&str> = experts[..n].iter().map(|e| e.model_id.as_str()).collect();
        let scores: BTreeMap<String, ChcoResult> = all_scores
            .iter()
            .filter(|(id, _)| members.contains(id.as_str()))
            .map(|(id, r)| (id.clone(), r.clone()))
            .collect();
        // ensembles only for the classes the hub's experts were built for
        let owned: BTreeSet<usize> = (0..(n * cfg.block_size).min(task.len())).collect();
        let report = select_ensembles(&scores, &m, &sel).restricted_to(&owned);
        let ev = evaluate_report(&report, &outputs, Some(&generalist), &test, cfg.pipeline.confidence_mode)?;

        // accuracy of each side restricted to the covered classes
        let (mut e_hits, mut g_hits, mut total) = (0, 0, 0);
        if !report.ensembles.is_empty() {
            for (s, outs) in test.iter().zip(&outputs) {
                if !report.ensembles.contains_key(&s.class_index) {
                    continue;
                }
                total += 1;
                let p = predict(outs, &report, cfg.pipeline.confidence_mode).map_err(pipe)?;
                e_hits += usize::from(p.class_index == s.class_index);
                let gp = generalist.probabilities(&s.features);
                let best = report
                    .ensembles
                    .keys()
                    .copied()
                    .max_by(|&a, &b| gp[a].total_cmp(&gp[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                g_hits += usize::from(best == s.class_index);
            }
        }
        let frac = |h: usize| (total > 0).then(|| h as f64 / total as f64);
        levels.push(PatchLevel {
            experts: n,
            coverage: ev.coverage,
            error: 1.0 - ev.accuracy_all,
            expert_accuracy_on_covered: frac(e_hits),
            generalist_accuracy_on_covered: frac(g_hits),
        });
    }
    Ok(PatchRecord {
        seed,
        generalist_error: 1.0 - generalist_accuracy(&generalist, &test),
        levels,
    })
}

/// Nested expert coverage of one task, patched with the generalist.
pub fn run_patch_suite(cfg: &PatchConfig) -> Result<Vec<PatchRecord>, SynthError> {
    if cfg.block_size == 0 || cfg.task_classes < 2 {
        return Err(SynthError::InvalidConfig("block size and task size must be positive".into()));
    }
    cfg.seeds.par_iter().map(|&s| patch_seed(cfg, s)).collect()
}
