//! `mll`: command-line driver for the model-label hub.
//!
//! Exit codes: 0 success, 1 usage error, 2 unreadable or invalid input data,
//! 3 pipeline failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;

use mll::chco::{self, ChcoConfig};
use mll::labelling::{aggregate_label, mean_logits, AggregationMode, HubRecord, DEFAULT_DISCOUNT};
use mll::reuse::{predict, predict_with_patch, ConfidenceMode, GeneralistOutput, ModelOutput, PatchPartition};
use mll::sdag::{
    match_classes, EmbeddingProvider, HashedTrigramEmbedder, MatchConfig, NodeRecord, SDag, SdagDocument,
    TableEmbedder,
};
use mll::selection::{
    default_threshold, score_hub, select_ensembles, Method, ScoreOptions, SelectionConfig, SelectionError,
    SelectionReport,
};
use mll::store::{self, Loaded, OutputsFile, PredictionFile, PredictionRecord, SampleOutputs, StoreError};
use mll::synth::{gen_scenario, gen_trace, run_scaling_benchmark, ScalingConfig};

#[derive(Parser)]
#[command(name = "mll", version, about = "Label a hub of classifiers on a semantic graph and reuse them for zero-shot tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Validate node definitions and write a graph file.
    SdagBuild(SdagBuildArgs),
    /// Turn logit traces into model labels.
    Label(LabelArgs),
    /// Score a labelled hub against a task and pick ensembles.
    Select(SelectArgs),
    /// Predict test samples from a selection report and model outputs.
    Predict(PredictArgs),
    /// Generate a synthetic world with experts, traces, a task and test outputs.
    SynthGen(SynthGenArgs),
    /// Run the hub-growth benchmark.
    Bench(BenchArgs),
    /// Solve the head combination of one model with per-sweep records.
    ChcoDebug(ChcoDebugArgs),
}

#[derive(Args)]
struct SdagBuildArgs {
    /// JSON node definitions: a graph document or a bare list of nodes.
    #[arg(long)]
    defs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// A trace file, or a directory of `*.jsonl` traces.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    sdag: PathBuf,
    /// Output label file, or a directory when `--traces` is a directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    discount: f64,
    #[arg(long, default_value = "recursive")]
    agg_mode: AggregationMode,
    /// Label traces recorded against a different graph version.
    #[arg(long)]
    allow_version_mismatch: bool,
}

#[derive(Args, Clone)]
struct ChcoArgs {
    /// Initial step size of each projected gradient step.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Relative change of the total loss below which a solve stops.
    #[arg(long)]
    tol: Option<f64>,
}

impl ChcoArgs {
    fn config(&self) -> ChcoConfig {
        let mut c = ChcoConfig::default();
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.max_sweeps {
            c.max_sweeps = v;
        }
        if let Some(v) = self.tol {
            c.rel_tolerance = v;
        }
        c
    }
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long)]
    sdag: PathBuf,
    /// Task file: `{"task_id", "class_texts"}`.
    #[arg(long)]
    task: PathBuf,
    /// Precomputed embedding file; without it an offline lexical embedder is used.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = MatchConfig::default().min_similarity)]
    min_similarity: f64,
}

#[derive(Args)]
struct SelectArgs {
    /// Directory of label files.
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    budget_k: usize,
    /// Largest admissible reuse score; defaults to the uniform-predictor loss.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value = "chco")]
    method: Method,
    /// Required with `--method random`.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    chco: ChcoArgs,
    /// Use labels built against a different graph version.
    #[arg(long)]
    allow_version_mismatch: bool,
    /// Also write per-model, per-sweep solver records to this file.
    #[arg(long)]
    debug_chco: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    report: PathBuf,
    /// Model outputs on the test samples.
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "prob")]
    confidence_mode: ConfidenceMode,
}

#[derive(Args)]
struct SynthGenArgs {
    /// Scenario config (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Result file; a tab-separated table is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// First seed; the config's seed count is kept.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
}

#[derive(Args)]
struct ChcoDebugArgs {
    /// One label file.
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    chco: ChcoArgs,
}

enum Failure {
    Usage(String),
    Data(String),
    Pipeline(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Pipeline(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Pipeline(m) => m,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn data(path: &Path) -> impl Fn(StoreError) -> Failure + '_ {
    move |e| match e {
        StoreError::Unwritable(_) => Failure::Pipeline(format!("{}: {e}", path.display())),
        StoreError::Io { .. } => Failure::Data(e.to_string()),
        _ => Failure::Data(format!("{}: {e}", path.display())),
    }
}

fn pipeline<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Pipeline(e.to_string())
}

fn warned<T>(path: &Path, loaded: Loaded<T>) -> T {
    for w in &loaded.warnings {
        warn!("{}: {w}", path.display());
    }
    loaded.value
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::SdagBuild(a) => sdag_build(a),
        Command::Label(a) => label(a),
        Command::Select(a) => select(a),
        Command::Predict(a) => predict_cmd(a),
        Command::SynthGen(a) => synth_gen(a),
        Command::Bench(a) => bench(a),
        Command::ChcoDebug(a) => chco_debug(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

// ---------------------------------------------------------------------------

fn sdag_build(a: SdagBuildArgs) -> Res<()> {
    let text = fs::read_to_string(&a.defs).map_err(|e| Failure::Data(format!("{}: {e}", a.defs.display())))?;
    let graph = if text.trim_start().starts_with('[') {
        let nodes: Vec<NodeRecord> =
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", a.defs.display())))?;
        SDag::try_from(SdagDocument { version: 1, nodes }).map_err(|e| Failure::Data(format!("{}: {e}", a.defs.display())))?
    } else {
        warned(&a.defs, store::parse_sdag(text.as_bytes()).map_err(data(&a.defs))?)
    };
    store::save_sdag(&a.out, &graph).map_err(data(&a.out))?;
    println!("graph version {} with {} nodes -> {}", graph.version(), graph.len(), a.out.display());
    Ok(())
}

fn files_with_ext(dir: &Path, ext: &str) -> Res<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn label(a: LabelArgs) -> Res<()> {
    if !(a.discount > 0.0 && a.discount <= 1.0) {
        return Err(Failure::Usage(format!("--discount {} outside (0, 1]", a.discount)));
    }
    let graph = warned(&a.sdag, store::load_sdag(&a.sdag).map_err(data(&a.sdag))?);
    let jobs: Vec<(PathBuf, PathBuf)> = if a.traces.is_dir() {
        fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
        let files = files_with_ext(&a.traces, "jsonl")?;
        if files.is_empty() {
            return Err(Failure::Data(format!("no traces found in {}", a.traces.display())));
        }
        files
            .into_iter()
            .map(|f| {
                let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let out = a.out.join(format!("{stem}.json"));
                (f, out)
            })
            .collect()
    } else {
        vec![(a.traces.clone(), a.out.clone())]
    };
    for (src, dst) in jobs {
        let trace = warned(&src, store::load_trace(&src).map_err(data(&src))?);
        if trace.sdag_version != graph.version() && !a.allow_version_mismatch {
            return Err(Failure::Pipeline(format!(
                "{}: trace was recorded against graph version {}, graph is version {}",
                src.display(),
                trace.sdag_version,
                graph.version()
            )));
        }
        trace.check_nodes(&graph).map_err(|e| Failure::Data(format!("{}: {e}", src.display())))?;
        let means = mean_logits(&trace).map_err(pipeline)?;
        let lbl = aggregate_label(&graph, &means, a.discount, a.agg_mode).map_err(pipeline)?;
        store::save_label(&dst, &lbl).map_err(data(&dst))?;
        println!("{} -> {}", lbl.model_id, dst.display());
    }
    Ok(())
}

fn load_hub(dir: &Path) -> Res<Vec<HubRecord>> {
    if !dir.is_dir() {
        return Err(Failure::Data(format!("{}: not a directory", dir.display())));
    }
    let files = files_with_ext(dir, "json")?;
    if files.is_empty() {
        return Err(Failure::Data(format!("no labels found in {}", dir.display())));
    }
    let mut hub = Vec::with_capacity(files.len());
    for f in files {
        let label = warned(&f, store::load_label(&f).map_err(data(&f))?);
        let origin = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        hub.push(HubRecord::new(label, origin));
    }
    let mut ids: Vec<&str> = hub.iter().map(|h| h.model_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::Data(format!("model `{}` is labelled more than once", w[0])));
    }
    Ok(hub)
}

fn match_task(t: &TaskArgs) -> Res<mll::sdag::MatchResult> {
    let graph = warned(&t.sdag, store::load_sdag(&t.sdag).map_err(data(&t.sdag))?);
    let task = warned(&t.task, store::load_task(&t.task).map_err(data(&t.task))?);
    let cfg = MatchConfig { min_similarity: t.min_similarity };
    let provider: Box<dyn EmbeddingProvider> = match &t.embeddings {
        Some(p) => {
            let f = warned(p, store::load_embeddings(p).map_err(data(p))?);
            Box::new(TableEmbedder::new(f.entries()).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?)
        }
        None => Box::new(HashedTrigramEmbedder),
    };
    let m = match_classes(&task, &graph, provider.as_ref(), &cfg).map_err(pipeline)?;
    for &c in &m.unmatched {
        warn!("class `{}` has no matching graph node", m.class_texts[c]);
    }
    Ok(m)
}

fn select(a: SelectArgs) -> Res<()> {
    if a.method == Method::Random && a.seed.is_none() {
        return Err(Failure::Usage("--method random needs --seed".into()));
    }
    if let Some(b) = a.beta {
        if !b.is_finite() || b < 0.0 {
            return Err(Failure::Usage(format!("--beta {b} must be finite and non-negative")));
        }
    }
    let mut cfg = a.chco.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.record_steps = false;
    let hub = load_hub(&a.labels)?;
    let m = match_task(&a.task)?;
    let beta = a.beta.unwrap_or_else(|| default_threshold(m.matched.len().max(2)));
    let sel = SelectionConfig::new(a.budget_k, beta).map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = ScoreOptions {
        seed: a.seed.unwrap_or(0),
        allow_version_mismatch: a.allow_version_mismatch,
    };
    let report = match score_hub(&hub, &m, &cfg, a.method, &opts) {
        Ok(scores) => {
            if let Some(p) = &a.debug_chco {
                let dump: BTreeMap<&str, &[chco::SweepRecord]> =
                    scores.iter().map(|(id, r)| (id.as_str(), r.sweeps.as_slice())).collect();
                store::save_json(p, &dump).map_err(data(p))?;
            }
            select_ensembles(&scores, &m, &sel)
        }
        Err(SelectionError::TooFewMatchedClasses(n)) => {
            warn!("only {n} task class(es) matched the graph; every class goes to the generalist");
            SelectionReport::all_uncovered(&m, &sel)
        }
        Err(e) => return Err(pipeline(e)),
    };
    store::save_report(&a.out, &report).map_err(data(&a.out))?;
    println!(
        "coverage {:.4} ({} of {} classes), {} models used -> {}",
        report.coverage,
        report.ensembles.len(),
        report.num_classes(),
        report.models_used,
        a.out.display()
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Res<()> {
    let report = warned(&a.report, store::load_report(&a.report).map_err(data(&a.report))?);
    let outputs = warned(&a.outputs, store::load_outputs(&a.outputs).map_err(data(&a.outputs))?);
    if outputs.task_id != report.task_id {
        warn!("outputs are for task `{}`, report is for `{}`", outputs.task_id, report.task_id);
    }
    let partition = PatchPartition::from_report(&report);
    let needs_generalist = !report.uncovered_classes.is_empty();
    let mut records = Vec::with_capacity(outputs.samples.len());
    let (mut hits, mut known) = (0usize, 0usize);
    for s in &outputs.samples {
        let outs = model_outputs(s, a.confidence_mode)?;
        let pred = match &s.generalist {
            Some(g) => {
                if g.len() != report.num_classes() {
                    return Err(Failure::Data(format!(
                        "sample `{}`: generalist gives {} probabilities for {} classes",
                        s.sample_id,
                        g.len(),
                        report.num_classes()
                    )));
                }
                let g = GeneralistOutput::new(g.clone()).map_err(|e| Failure::Data(format!("sample `{}`: {e}", s.sample_id)))?;
                predict_with_patch(&outs, &report, &g, &partition, a.confidence_mode)
            }
            None if needs_generalist => {
                return Err(Failure::Data(format!(
                    "sample `{}` has no generalist output but {} classes are uncovered",
                    s.sample_id,
                    report.uncovered_classes.len()
                )))
            }
            None => predict(&outs, &report, a.confidence_mode),
        }
        .map_err(|e| Failure::Pipeline(format!("sample `{}`: {e}", s.sample_id)))?;
        if let Some(t) = s.true_class {
            known += 1;
            hits += usize::from(t == pred.class_index);
        }
        records.push(PredictionRecord::new(s.sample_id.clone(), &pred));
    }
    let file = PredictionFile {
        task_id: report.task_id.clone(),
        sdag_version: report.sdag_version,
        class_texts: report.class_texts.clone(),
        records,
    };
    store::save_predictions(&a.out, &file).map_err(data(&a.out))?;
    if known > 0 {
        println!("accuracy {:.4} on {known} labelled samples -> {}", hits as f64 / known as f64, a.out.display());
    } else {
        println!("{} predictions -> {}", file.records.len(), a.out.display());
    }
    Ok(())
}

fn model_outputs(s: &SampleOutputs, mode: ConfidenceMode) -> Res<Vec<ModelOutput>> {
    s.logits
        .iter()
        .map(|(id, l)| {
            let o = ModelOutput::from_logits(id.clone(), l.clone());
            o.map_err(|e| Failure::Data(format!("sample `{}`: {e} ({mode:?} mode)", s.sample_id)))
        })
        .collect()
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&PathBuf>) -> Res<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Serialize)]
struct ScenarioManifest<'a> {
    seed: u64,
    sdag: &'a str,
    task: &'a str,
    traces: &'a str,
    outputs: &'a str,
    experts: usize,
    test_samples: usize,
    /// Standalone generalist accuracy on the test samples.
    generalist_accuracy: f64,
}

fn synth_gen(a: SynthGenArgs) -> Res<()> {
    let seed = a.seed.ok_or_else(|| Failure::Usage("synth-gen needs --seed".into()))?;
    let cfg: ScalingConfig = read_config(a.config.as_ref())?;
    let sc = gen_scenario(&cfg, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| Failure::Data(format!("{}: {e}", p.display()))
    };
    let trace_dir = a.out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io(&trace_dir))?;

    let sdag_path = a.out.join("sdag.json");
    store::save_sdag(&sdag_path, &sc.world.sdag).map_err(data(&sdag_path))?;
    for e in &sc.experts {
        let t = gen_trace(e, &sc.world, cfg.pipeline.samples_per_node).map_err(pipeline)?;
        let p = trace_dir.join(format!("{}.jsonl", e.model_id));
        store::save_trace(&p, &t).map_err(data(&p))?;
    }
    let texts: Vec<String> = sc.task.iter().map(|l| sc.world.name_of(l).unwrap_or(l).to_string()).collect();
    let task = mll::sdag::TaskSpec::new(format!("synthetic-{seed}"), texts).map_err(pipeline)?;
    let task_path = a.out.join("task.json");
    store::save_task(&task_path, &task).map_err(data(&task_path))?;

    let samples: Vec<SampleOutputs> = sc
        .test
        .iter()
        .enumerate()
        .map(|(i, s)| SampleOutputs {
            sample_id: format!("s{i:05}"),
            logits: sc.experts.iter().map(|e| (e.model_id.clone(), e.logits(&s.features))).collect(),
            generalist: Some(sc.generalist.probabilities(&s.features)),
            true_class: Some(s.class_index),
        })
        .collect();
    let outputs_path = a.out.join("outputs.jsonl");
    store::save_outputs(&outputs_path, &OutputsFile { task_id: task.task_id.clone(), samples }).map_err(data(&outputs_path))?;

    let manifest = ScenarioManifest {
        seed,
        sdag: "sdag.json",
        task: "task.json",
        traces: "traces",
        outputs: "outputs.jsonl",
        experts: sc.experts.len(),
        test_samples: sc.test.len(),
        generalist_accuracy: mll::synth::generalist_accuracy(&sc.generalist, &sc.test),
    };
    let mp = a.out.join("scenario.json");
    store::save_json(&mp, &manifest).map_err(data(&mp))?;
    println!(
        "{} experts, {} task classes, {} test samples -> {}",
        sc.experts.len(),
        task.class_texts.len(),
        sc.test.len(),
        a.out.display()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Res<()> {
    let mut cfg: ScalingConfig = read_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (s..s + n).collect();
    }
    if let Some(m) = a.method {
        cfg.pipeline.method = m;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let result = run_scaling_benchmark(&cfg).map_err(pipeline)?;
    store::save_benchmark(&a.out, &result).map_err(data(&a.out))?;
    let table = a.out.with_extension("tsv");
    store::save_text(&table, &result.table()).map_err(data(&table))?;
    print!("{}", result.table());
    Ok(())
}

#[derive(Serialize)]
struct ChcoDump {
    model_id: String,
    class_texts: Vec<String>,
    target_nodes: Vec<String>,
    class_losses: Vec<f64>,
    total_loss: f64,
    converged: bool,
    sweeps_used: usize,
    combination: Vec<Vec<f64>>,
    sweeps: Vec<chco::SweepRecord>,
}

fn chco_debug(a: ChcoDebugArgs) -> Res<()> {
    let label = warned(&a.labels, store::load_label(&a.labels).map_err(data(&a.labels))?);
    let m = match_task(&a.task)?;
    let mut cfg = a.chco.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.record_steps = true;
    let targets = m.target_nodes();
    let r = chco::solve(&label, &targets, &cfg).map_err(pipeline)?;
    let dump = ChcoDump {
        model_id: label.model_id.clone(),
        class_texts: m.matched_classes().iter().map(|&c| m.class_texts[c].clone()).collect(),
        target_nodes: targets,
        class_losses: r.class_losses.clone(),
        total_loss: r.total_loss,
        converged: r.converged,
        sweeps_used: r.sweeps_used,
        combination: r.x.to_rows(),
        sweeps: r.sweeps.clone(),
    };
    store::save_json(&a.out, &dump).map_err(data(&a.out))?;
    println!(
        "total loss {:.6} after {} sweeps ({}) -> {}",
        r.total_loss,
        r.sweeps_used,
        if r.converged { "converged" } else { "not converged" },
        a.out.display()
    );
    Ok(())
}
