use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use persona_audit::llm_gateway::ENV_MODEL;
use persona_audit::pipeline::{
    demo_reference, write_reference_csv, BackendConfig, BackendKind, Inputs, ManifestInit, Params, RunOptions,
    StageState, DEMO_SOURCE,
};
use persona_audit::{CulturalSchema, Pipeline, PipelineError, QuestionBank, Stage};

#[derive(Parser)]
#[command(
    name = "audit",
    version,
    about = "Persona generation and cultural alignment audit pipeline"
)]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one persona per configuration.
    Generate(StageArgs),
    /// Elicit the ten map indicators from each persona.
    ElicitIw(StageArgs),
    /// Factor analysis and map projection.
    Project(StageArgs),
    /// Grid binning and closed-pattern mining.
    Mine(StageArgs),
    /// Ask the probe question bank in one conversation per persona.
    ElicitWvb(StageArgs),
    /// Distance to the human reference distributions.
    Align(StageArgs),
    /// Administer the moral foundations questionnaire.
    ElicitMfq(StageArgs),
    /// Inferred moral vectors from the oracle matrix.
    MoralMap(StageArgs),
    /// Greedy core-set selection per foundation.
    SelectCore(StageArgs),
    /// Write the report bundle.
    Report(StageArgs),
    /// Run every stage in order.
    All(StageArgs),
    /// Print stage status.
    Status {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write synthetic reference distributions for offline trials.
    DemoReference {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        question_bank: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Args)]
struct StageArgs {
    /// Run manifest; created together with the run directory when missing.
    #[arg(long)]
    manifest: PathBuf,
    /// Schema for a new run (default: the bundled ten-variable schema).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Model backend for a new run (default: mock).
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Seed for a new run (default: 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel model calls.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Accept prerequisites that failed after persisting some records.
    #[arg(long)]
    allow_partial: bool,
    /// Reset the stage and everything downstream before running.
    #[arg(long)]
    force: bool,
    /// Random subset of configurations for a new run.
    #[arg(long)]
    sample: Option<usize>,
    /// Mock only: fraction of deliberately malformed replies.
    #[arg(long)]
    malformed_rate: Option<f64>,
    /// Repair turns after an unparseable reply.
    #[arg(long)]
    max_reasks: Option<u32>,
    /// Per-cell minimum support for closed itemsets.
    #[arg(long)]
    min_support: Option<f64>,
    /// Keep itemsets with support at least rho times the cell maximum.
    #[arg(long)]
    rho: Option<f64>,
    /// Side length of the square grid cells on the map.
    #[arg(long)]
    cell_side: Option<f64>,
    /// Cells a pattern must appear in to be aggregated.
    #[arg(long)]
    min_cells: Option<usize>,
    /// Reference distributions CSV, or `demo`.
    #[arg(long)]
    reference: Option<String>,
    /// Oracle matrix CSV, or `demo`.
    #[arg(long)]
    oracle_matrix: Option<String>,
    /// Random splits per foundation in core-set selection.
    #[arg(long)]
    selection_runs: Option<usize>,
    /// Minimum held-out R² gain for adding a variable.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Map indicator definitions (TOML).
    #[arg(long)]
    indicators: Option<PathBuf>,
    /// Probe question bank (TOML).
    #[arg(long)]
    question_bank: Option<PathBuf>,
    /// Questionnaire item to foundation map (CSV).
    #[arg(long)]
    item_map: Option<PathBuf>,
    /// Questionnaire item texts (CSV).
    #[arg(long)]
    mfq_items: Option<PathBuf>,
    /// Country positions `country,z1,z2` drawn on the map.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Do not persist model replies in the run's cache directory.
    #[arg(long)]
    no_cache: bool,
}

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

fn open_or_create(a: &StageArgs) -> Result<Pipeline, PipelineError> {
    if a.manifest.exists() {
        let mut p = Pipeline::open(&a.manifest)?;
        check_fixed(&p, a)?;
        apply_overrides(&mut p, a)?;
        return Ok(p);
    }
    let schema = match &a.schema {
        Some(path) => CulturalSchema::load(path).map_err(|e| validation(format!("{}: {e}", path.display())))?,
        None => CulturalSchema::default_schema(),
    };
    let seed = a.seed.unwrap_or(0);
    let mut backend = match a.backend.unwrap_or(BackendArg::Mock) {
        BackendArg::Mock => BackendConfig::mock(),
        BackendArg::Http => BackendConfig::http(std::env::var(ENV_MODEL).unwrap_or_else(|_| "http".into())),
    };
    if let Some(r) = a.malformed_rate {
        if backend.kind != BackendKind::Mock {
            return Err(validation("--malformed-rate applies to the mock backend only"));
        }
        backend.malformed_rate = r;
    }
    if a.no_cache {
        backend.cache = false;
    }
    let mut params = Params::new(seed);
    params.sample = a.sample;
    let mut inputs = Inputs {
        indicators: a.indicators.as_deref().map(absolute),
        question_bank: a.question_bank.as_deref().map(absolute),
        item_map: a.item_map.as_deref().map(absolute),
        mfq_items: a.mfq_items.as_deref().map(absolute),
        ..Inputs::default()
    };
    set_overrides(&mut params, &mut inputs, a);
    Pipeline::create(
        &a.manifest,
        schema,
        ManifestInit {
            run_id: None,
            backend,
            params,
            inputs,
        },
    )
}

/// Settings that only make sense when a run is created.
fn check_fixed(p: &Pipeline, a: &StageArgs) -> Result<(), PipelineError> {
    let m = &p.manifest;
    if let Some(path) = &a.schema {
        let s = CulturalSchema::load(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
        if s.fingerprint() != m.schema_hash {
            return Err(validation("--schema differs from the run's schema"));
        }
    }
    let kind = a.backend.map(|b| match b {
        BackendArg::Mock => BackendKind::Mock,
        BackendArg::Http => BackendKind::Http,
    });
    let fixed = [
        ("--backend", kind.is_some_and(|k| k != m.backend.kind)),
        ("--seed", a.seed.is_some_and(|s| s != m.params.seed)),
        ("--sample", a.sample.is_some() && a.sample != m.params.sample),
        (
            "--malformed-rate",
            a.malformed_rate.is_some_and(|r| r != m.backend.malformed_rate),
        ),
        (
            "--indicators",
            a.indicators.is_some() && a.indicators.as_deref().map(absolute) != m.inputs.indicators,
        ),
        (
            "--question-bank",
            a.question_bank.is_some() && a.question_bank.as_deref().map(absolute) != m.inputs.question_bank,
        ),
        (
            "--item-map",
            a.item_map.is_some() && a.item_map.as_deref().map(absolute) != m.inputs.item_map,
        ),
        (
            "--mfq-items",
            a.mfq_items.is_some() && a.mfq_items.as_deref().map(absolute) != m.inputs.mfq_items,
        ),
    ];
    for (flag, differs) in fixed {
        if differs {
            return Err(validation(format!(
                "{flag} differs from {}; start a new run instead",
                a.manifest.display()
            )));
        }
    }
    Ok(())
}

fn set_overrides(params: &mut Params, inputs: &mut Inputs, a: &StageArgs) {
    if let Some(x) = a.max_reasks {
        params.max_reasks = x;
    }
    if let Some(x) = a.min_support {
        params.miner.min_support = x;
    }
    if let Some(x) = a.rho {
        params.miner.rho = x;
    }
    if let Some(x) = a.cell_side {
        params.miner.cell_side = x;
    }
    if let Some(x) = a.min_cells {
        params.miner.min_cells = x;
    }
    if let Some(x) = a.selection_runs {
        params.selection.runs = x;
    }
    if let Some(x) = a.epsilon {
        params.selection.epsilon = x;
    }
    if let Some(x) = &a.reference {
        inputs.reference = Some(resolve(x));
    }
    if let Some(x) = &a.oracle_matrix {
        inputs.oracle_matrix = Some(resolve(x));
    }
    if let Some(x) = &a.overlay {
        inputs.overlay = Some(absolute(x));
    }
}

/// Downstream parameters may change until the stage that uses them has
/// completed; after that only with `--force`.
fn apply_overrides(p: &mut Pipeline, a: &StageArgs) -> Result<(), PipelineError> {
    let before = p.manifest.clone();
    let m = &mut p.manifest;
    set_overrides(&mut m.params, &mut m.inputs, a);
    m.params.validate()?;
    let after = m.clone();
    let touched = [
        (Stage::Mine, before.params.miner != after.params.miner),
        (Stage::Align, before.inputs.reference != after.inputs.reference),
        (
            Stage::MoralMap,
            before.inputs.oracle_matrix != after.inputs.oracle_matrix,
        ),
        (Stage::SelectCore, before.params.selection != after.params.selection),
        (Stage::Report, before.inputs.overlay != after.inputs.overlay),
    ];
    for (stage, changed) in touched {
        if changed && p.status(stage).state == StageState::Complete {
            if !a.force {
                p.manifest = before;
                return Err(validation(format!(
                    "{stage} is complete with different settings; pass --force to redo it"
                )));
            }
            p.reset(stage)?;
        }
    }
    p.save()
}

/// Input paths are stored absolute so a run can be resumed from anywhere.
fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn resolve(x: &str) -> String {
    if x == DEMO_SOURCE {
        return x.to_string();
    }
    absolute(Path::new(x)).display().to_string()
}

fn run_stage(stage: Option<Stage>, a: &StageArgs) -> Result<(), PipelineError> {
    if a.workers == 0 {
        return Err(validation("--workers must be at least 1"));
    }
    let mut p = open_or_create(a)?;
    let opts = RunOptions {
        workers: a.workers,
        allow_partial: a.allow_partial,
    };
    match stage {
        Some(s) => {
            if a.force {
                p.reset(s)?;
            }
            let st = p.run_stage(s, &opts)?;
            println!("{s}: total={} ok={} failed={}", st.total, st.ok, st.failed);
        }
        None => {
            if a.force {
                p.reset(Stage::Generate)?;
            }
            p.run_all(&opts)?;
            print_status(&p);
        }
    }
    Ok(())
}

fn print_status(p: &Pipeline) {
    println!("run {} ({})", p.manifest.run_id, p.dir().display());
    for s in Stage::ALL {
        let st = p.status(s);
        let state = format!("{:?}", st.state).to_lowercase();
        print!(
            "{:<12} {:<8} total={} ok={} failed={}",
            s.name(),
            state,
            st.total,
            st.ok,
            st.failed
        );
        match &st.message {
            Some(m) => println!("  {m}"),
            None => println!(),
        }
    }
}

fn demo_reference_cmd(out: &Path, seed: u64, bank: Option<&Path>) -> Result<(), PipelineError> {
    let bank = match bank {
        Some(p) => QuestionBank::load(p).map_err(|e| validation(format!("{}: {e}", p.display())))?,
        None => QuestionBank::bundled(),
    };
    let f = File::create(out).map_err(|e| PipelineError::Failed(format!("{}: {e}", out.display())))?;
    write_reference_csv(BufWriter::new(f), &demo_reference(&bank, seed))
        .map_err(|e| PipelineError::Failed(e.to_string()))?;
    log::warn!("{} holds synthetic distributions, not survey data", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Generate(a) => run_stage(Some(Stage::Generate), a),
        Command::ElicitIw(a) => run_stage(Some(Stage::ElicitIw), a),
        Command::Project(a) => run_stage(Some(Stage::Project), a),
        Command::Mine(a) => run_stage(Some(Stage::Mine), a),
        Command::ElicitWvb(a) => run_stage(Some(Stage::ElicitWvb), a),
        Command::Align(a) => run_stage(Some(Stage::Align), a),
        Command::ElicitMfq(a) => run_stage(Some(Stage::ElicitMfq), a),
        Command::MoralMap(a) => run_stage(Some(Stage::MoralMap), a),
        Command::SelectCore(a) => run_stage(Some(Stage::SelectCore), a),
        Command::Report(a) => run_stage(Some(Stage::Report), a),
        Command::All(a) => run_stage(None, a),
        Command::Status { manifest } => Pipeline::open(manifest).map(|p| print_status(&p)),
        Command::DemoReference {
            out,
            seed,
            question_bank,
        } => demo_reference_cmd(out, *seed, question_bank.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
