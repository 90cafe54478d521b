use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbdsel::aligner::{load_aligner, save_aligner, DEFAULT_RIDGE};
use cbdsel::concept_space::{load_rcs, save_rcs, ConceptMatcher, DEFAULT_TOP_M};
use cbdsel::diversity::DEFAULT_GD_EPSILON;
use cbdsel::embstore::{
    load_concepts, load_labels, load_matrix, save_concept_names, save_labels, save_matrix,
};
use cbdsel::eval::{
    diversity_timing_csv, run_rq1, selection_timing_csv, time_diversity, time_selection, ControlledSubsetPlan,
    SelectionPool, TimingOptions,
};
use cbdsel::selector::Provenance;
use cbdsel::synth::{pipeline_fixture, PipelineConfig};
use cbdsel::uncertainty::UncertaintyVector;
use cbdsel::{
    build_rcs, datis_uncertainty, fit_aligner, map, margin_uncertainty, select_cbd, select_random,
    select_top_uncertainty, ConceptAssignment, DatisConfig, EmbeddingMatrix, LabelVector, ProbabilityMatrix, Rcs,
    SelectorKind, UncertaintyMetric,
};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cbdsel", version, about = "Concept-based diverse input selection")]
struct Cli {
    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the affine map from classifier representations to the shared space.
    FitAligner(FitAlignerArgs),
    /// Build the representative concept set from training embeddings.
    BuildRcs(BuildRcsArgs),
    /// Select a diverse, uncertain subset of a candidate pool.
    Select(SelectArgs),
    /// Correlation and timing experiments.
    Eval(EvalArgs),
    /// Write a seeded synthetic pipeline world.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct FitAlignerArgs {
    /// Classifier representations (EBIN).
    #[arg(long)]
    source: PathBuf,
    /// Shared-space embeddings of the same inputs (EBIN).
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BuildRcsArgs {
    /// Shared-space embeddings of the training inputs (EBIN).
    #[arg(long)]
    train_shared: PathBuf,
    /// Knowledge-base concept names, one per line.
    #[arg(long)]
    knb_names: PathBuf,
    /// Knowledge-base concept embeddings (EBIN).
    #[arg(long)]
    knb_embeddings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_M)]
    m: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Margin,
    Datis,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SelectorArg {
    Cbd,
    TopUncertainty,
    Random,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Cbd => SelectorKind::Cbd,
            SelectorArg::TopUncertainty => SelectorKind::TopUncertainty,
            SelectorArg::Random => SelectorKind::Random,
        }
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Classifier representations of the candidate pool (EBIN).
    #[arg(long)]
    reps: PathBuf,
    /// Aligner model (ALN1).
    #[arg(long)]
    model: PathBuf,
    /// Directory written by build-rcs.
    #[arg(long)]
    rcs: PathBuf,
    #[arg(long, value_enum, default_value = "margin")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "cbd")]
    selector: SelectorArg,
    /// Softmax outputs for the pool (PRB1). Required for margin; for DATIS
    /// its argmax is the predicted label unless --predicted is given.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Training representations for DATIS neighbors (EBIN).
    #[arg(long)]
    train_reps: Option<PathBuf>,
    /// Training labels for DATIS neighbors (LBL1).
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// Predicted labels of the pool for DATIS (LBL1).
    #[arg(long)]
    predicted: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Concepts per input; defaults to the m the RCS was built with.
    #[arg(long)]
    m: Option<usize>,
    /// Absolute budget.
    #[arg(long, conflicts_with = "percent", required_unless_present = "percent")]
    b: Option<usize>,
    /// Budget as a percentage of the pool, in (0, 100].
    #[arg(long)]
    percent: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["rq1", "bench_diversity", "bench_selection"]))]
struct EvalArgs {
    /// Spearman correlation of CBD and GD over controlled subsets.
    #[arg(long)]
    rq1: bool,
    /// Per-subset CBD and GD scoring time.
    #[arg(long)]
    bench_diversity: bool,
    /// Selection time per selector and budget.
    #[arg(long)]
    bench_selection: bool,
    /// Shared-space embeddings (EBIN).
    #[arg(long)]
    embeddings: PathBuf,
    /// Directory written by build-rcs.
    #[arg(long)]
    rcs: PathBuf,
    /// Features for GD; defaults to --embeddings.
    #[arg(long)]
    gd_features: Option<PathBuf>,
    /// Labels (LBL1), for --rq1.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Softmax outputs (PRB1), for --bench-selection.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 250)]
    subset_size: usize,
    /// Comma-separated class counts; defaults to 2 up to the number of classes.
    #[arg(long, value_delimiter = ',')]
    schedule: Vec<usize>,
    /// Number of controlled-subset plans, each with its own seed.
    #[arg(long, default_value_t = 12)]
    plans: u64,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2500")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    budgets: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cbd,top-uncertainty,random")]
    selectors: Vec<SelectorArg>,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    /// Score subsets concurrently during --bench-diversity.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    shared_dim: usize,
    #[arg(long, default_value_t = 48)]
    rep_dim: usize,
    #[arg(long, default_value_t = 4)]
    concepts_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data { stage: &'static str, source: cbdsel::Error },
}

type Outcome<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Outcome<T>;
}

impl<T> Stage<T> for cbdsel::Result<T> {
    fn stage(self, stage: &'static str) -> Outcome<T> {
        self.map_err(|source| Failure::Data { stage, source })
    }
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    fs::write(path, text)
        .map_err(|e| cbdsel::Error::Io { path: path.to_path_buf(), source: e })
        .stage("write output")
}

fn fit_aligner_cmd(a: &FitAlignerArgs) -> Outcome<()> {
    let source: EmbeddingMatrix = load_matrix(&a.source).stage("load source")?;
    let target: EmbeddingMatrix = load_matrix(&a.target).stage("load target")?;
    let model = fit_aligner(&source, &target, a.lambda).stage("fit aligner")?;
    if model.is_underdetermined() {
        eprintln!(
            "warning: {} samples for {} source dimensions; the fit is underdetermined",
            model.samples(),
            model.source_dim()
        );
    }
    save_aligner(&model, &a.out).stage("write model")?;
    println!("r2={:.6}", model.r_squared());
    Ok(())
}

fn build_rcs_cmd(a: &BuildRcsArgs) -> Outcome<()> {
    let train: EmbeddingMatrix = load_matrix(&a.train_shared).stage("load training embeddings")?;
    let knb = load_concepts(&a.knb_names, &a.knb_embeddings).stage("load knowledge base")?;
    let rcs = build_rcs(&train, &knb, a.m).stage("build RCS")?;
    save_rcs(&rcs, &a.out_dir).stage("write RCS")?;
    println!("{}", rcs.len());
    Ok(())
}

fn resolve_budget(b: Option<usize>, percent: Option<f64>, pool: usize) -> Outcome<usize> {
    match (b, percent) {
        (Some(b), None) => Ok(b),
        (None, Some(p)) if p > 0.0 && p <= 100.0 => Ok(((pool as f64 * p / 100.0).floor() as usize).max(1)),
        (None, Some(p)) => Err(Failure::Usage(format!("--percent must be in (0, 100], got {p}"))),
        _ => Err(Failure::Usage("give exactly one of --b and --percent".into())),
    }
}

fn assign(shared: &EmbeddingMatrix, rcs: &Rcs, m: usize) -> Outcome<Vec<ConceptAssignment>> {
    let matcher = ConceptMatcher::new(rcs.space().embeddings()).stage("extract concepts")?;
    matcher.assign_all(shared, m).stage("extract concepts")
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, why: &str) -> Outcome<&'a PathBuf> {
    path.as_ref().ok_or_else(|| Failure::Usage(format!("{flag} is required {why}")))
}

fn select_cmd(a: &SelectArgs) -> Outcome<()> {
    let reps: EmbeddingMatrix = load_matrix(&a.reps).stage("load representations")?;
    let n = reps.rows();
    let budget = resolve_budget(a.b, a.percent, n)?;
    let selector = SelectorKind::from(a.selector);

    let mut provenance = Provenance {
        selector: Some(selector),
        seed: Some(a.seed),
        ..Provenance::default()
    };

    if selector == SelectorKind::Random {
        let mut result = select_random(n, budget, a.seed).stage("select")?;
        result.provenance = provenance;
        write_text(&a.out, &(result.to_json() + "\n"))?;
        println!("selected={} fill=0 seed={}", result.selected.len(), a.seed);
        return Ok(());
    }

    let uncertainty: UncertaintyVector = match a.metric {
        MetricArg::Margin => {
            let path = required(&a.probs, "--probs", "for the margin metric")?;
            let probs: ProbabilityMatrix = load_matrix(path).stage("load probabilities")?;
            margin_uncertainty(&probs).stage("uncertainty")?
        }
        MetricArg::Datis => {
            let train_path = required(&a.train_reps, "--train-reps", "for the datis metric")?;
            let labels_path = required(&a.train_labels, "--train-labels", "for the datis metric")?;
            let train: EmbeddingMatrix = load_matrix(train_path).stage("load training representations")?;
            let train_labels = load_labels(labels_path).stage("load training labels")?;
            let predicted: LabelVector = match (&a.predicted, &a.probs) {
                (Some(p), _) => load_labels(p).stage("load predicted labels")?,
                (None, Some(p)) => {
                    let probs: ProbabilityMatrix = load_matrix(p).stage("load probabilities")?;
                    probs.argmax_labels()
                }
                (None, None) => {
                    return Err(Failure::Usage("datis needs --predicted or --probs for predicted labels".into()))
                }
            };
            let cfg = DatisConfig::new(a.k, a.tau).stage("uncertainty")?;
            provenance.k = Some(a.k);
            provenance.tau = Some(a.tau);
            datis_uncertainty(&reps, &predicted, &train, &train_labels, &cfg).stage("uncertainty")?
        }
    };
    provenance.uncertainty_metric = Some(match a.metric {
        MetricArg::Margin => UncertaintyMetric::Margin,
        MetricArg::Datis => UncertaintyMetric::Datis,
    });

    let mut result = if selector == SelectorKind::Cbd {
        let model = load_aligner(&a.model).stage("load aligner")?;
        let rcs = load_rcs(&a.rcs).stage("load RCS")?;
        let m = a.m.unwrap_or(rcs.m());
        let shared = map(&model, &reps).stage("map representations")?;
        let assignments = assign(&shared, &rcs, m)?;
        provenance.m = Some(m);
        provenance.lambda = Some(model.lambda());
        select_cbd(&assignments, &uncertainty, budget).stage("select")?
    } else {
        select_top_uncertainty(&uncertainty, budget).stage("select")?
    };
    result.provenance = provenance;
    write_text(&a.out, &(result.to_json() + "\n"))?;
    println!("selected={} fill={} seed={}", result.selected.len(), result.fill_count, a.seed);
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Outcome<()> {
    let embeddings: EmbeddingMatrix = load_matrix(&a.embeddings).stage("load embeddings")?;
    let gd_features: EmbeddingMatrix = match &a.gd_features {
        Some(p) => load_matrix(p).stage("load GD features")?,
        None => embeddings.clone(),
    };
    let rcs = load_rcs(&a.rcs).stage("load RCS")?;
    let m = a.m.unwrap_or(rcs.m());

    if a.rq1 {
        let labels = load_labels(required(&a.labels, "--labels", "for --rq1")?).stage("load labels")?;
        let schedule = if a.schedule.is_empty() {
            (2..=labels.classes()).collect()
        } else {
            a.schedule.clone()
        };
        let plans = (0..a.plans)
            .map(|p| ControlledSubsetPlan::new(a.subset_size, schedule.clone(), a.seed.wrapping_add(p)))
            .collect::<cbdsel::Result<Vec<_>>>()
            .stage("plan subsets")?;
        let report =
            run_rq1(&embeddings, &gd_features, &rcs, &labels, &plans, m, DEFAULT_GD_EPSILON).stage("correlate")?;
        write_text(&a.out, &report.to_csv())?;
        println!("subsets={} rho={:.6}", report.subsets(), report.rho);
        for (p, rho) in report.per_plan_rho.iter().enumerate() {
            match rho {
                Some(r) => println!("plan {p}: rho={r:.6}"),
                None => println!("plan {p}: rho=undefined"),
            }
        }
        return Ok(());
    }

    let assignments = assign(&embeddings, &rcs, m)?;
    if a.bench_diversity {
        let opts = TimingOptions { parallel: a.parallel, ..TimingOptions::default() };
        let rows = time_diversity(&gd_features, &assignments, &a.sizes, a.repeats, a.seed, &opts)
            .stage("time diversity")?;
        write_text(&a.out, &diversity_timing_csv(&rows))?;
        println!("{:>8} {:>12} {:>12} {:>8}", "b", "CBD ms", "GD ms", "GD/CBD");
        for r in &rows {
            println!("{:>8} {:>12.3} {:>12.3} {:>8.1}", r.size, r.cbd.mean_ms, r.gd.mean_ms, r.gd_over_cbd());
        }
    } else {
        let probs: ProbabilityMatrix =
            load_matrix(required(&a.probs, "--probs", "for --bench-selection")?).stage("load probabilities")?;
        let pool = SelectionPool { probs: &probs, assignments: &assignments };
        let selectors: Vec<SelectorKind> = a.selectors.iter().map(|&s| s.into()).collect();
        let rows = time_selection(&pool, &selectors, &a.budgets, a.repeats, a.seed, &TimingOptions::default())
            .stage("time selection")?;
        write_text(&a.out, &selection_timing_csv(&rows))?;
        println!("{:>16} {:>8} {:>12}", "selector", "b", "mean ms");
        for r in &rows {
            println!("{:>16} {:>8} {:>12.3}", r.selector.to_string(), r.budget, r.stats.mean_ms);
        }
    }
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Outcome<()> {
    if a.classes < 2 || a.points < a.classes || a.shared_dim == 0 || a.rep_dim == 0 || a.concepts_per_class == 0 {
        return Err(Failure::Usage(
            "synth needs at least 2 classes, one point per class and positive dimensions".into(),
        ));
    }
    let f = pipeline_fixture(&PipelineConfig {
        points: a.points,
        classes: a.classes,
        shared_dim: a.shared_dim,
        rep_dim: a.rep_dim,
        concepts_per_class: a.concepts_per_class,
        spread: a.spread,
        seed: a.seed,
    });
    let dir = &a.out_dir;
    fs::create_dir_all(dir)
        .map_err(|e| cbdsel::Error::Io { path: dir.clone(), source: e })
        .stage("write fixture")?;
    save_matrix(&f.shared, dir.join("shared.ebin")).stage("write fixture")?;
    save_matrix(&f.reps, dir.join("reps.ebin")).stage("write fixture")?;
    save_matrix(&f.probs, dir.join("probs.prb")).stage("write fixture")?;
    save_labels(&f.labels, dir.join("labels.lbl")).stage("write fixture")?;
    save_concept_names(f.knowledge_base.names(), dir.join("knb.txt")).stage("write fixture")?;
    save_matrix(f.knowledge_base.embeddings(), dir.join("knb.ebin")).stage("write fixture")?;
    println!("points={} classes={} concepts={}", a.points, a.classes, f.knowledge_base.len());
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure threads: {e}")))?;
    }
    match &cli.command {
        Command::FitAligner(a) => fit_aligner_cmd(a),
        Command::BuildRcs(a) => build_rcs_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Data { stage, source })) => {
            eprintln!("error: {stage}: {source}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(3),
    }
}
