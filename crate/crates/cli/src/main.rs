//! `ontask`: command-line front end for the engagement-detection
//! pipeline: dataset generation, feature extraction, training,
//! prediction, evaluation, and report rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use ontask_core::config::{load_config, LoadedConfig, RunConfig};
use ontask_core::csvio;
use ontask_core::domain::Modality;
use ontask_core::eval;
use ontask_core::features::{Instance, PerModality};
use ontask_core::forest::Forest;
use ontask_core::fusion::{fuse_pooled, pool_trees, ModalityFeatures};
use ontask_core::persist::{load_model, save_model, ModelBundle};
use ontask_core::pipeline::dataset_instances;
use ontask_core::report::{render_csv, render_text};
use ontask_core::seed;
use ontask_core::simulate::generate_dataset;

#[derive(Parser)]
#[command(
    name = "ontask",
    version,
    about = "Behavioral-engagement detection on multimodal classroom streams"
)]
struct Cli {
    /// Worker thread count (parallelism hint; never changes results).
    /// 0 means one worker per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (samples, annotations, schedule CSVs).
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to [run.paths].data_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the simulator master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract windowed feature instances from raw data CSVs.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding samples.csv, annotations.csv, schedule.csv;
        /// defaults to [run.paths].data_dir.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output instances file; defaults to [run.paths].instances.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the three modality forests and save a model bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Instances file; defaults to [run.paths].instances.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Output model file; defaults to [run.paths].model.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the run master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict fused per-window labels with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        /// Output predictions CSV.
        #[arg(long)]
        out: PathBuf,
        /// Optional config to cross-check the model's config hash.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the evaluation protocol and write metrics and report files.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Instances file; defaults to [run.paths].instances.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Output directory; defaults to [run.paths].out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the run master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the split protocol: "loso" or "holdout".
        #[arg(long)]
        protocol: Option<String>,
    },
    /// Render a metrics.csv as an aligned table and a pivoted CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Directory for report.txt and report.csv; prints to stdout
        /// when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("initializing worker pool")?;

    match cli.command {
        Command::Generate { config, out, seed } => generate(&config, out, seed),
        Command::Extract { config, data, out } => extract(&config, data, out),
        Command::Train {
            config,
            instances,
            out,
            seed,
        } => train(&config, instances, out, seed),
        Command::Predict {
            model,
            instances,
            out,
            config,
        } => predict(&model, &instances, &out, config),
        Command::Evaluate {
            config,
            instances,
            out,
            seed,
            protocol,
        } => evaluate(&config, instances, out, seed, protocol),
        Command::Report { metrics, out } => report(&metrics, out),
    }
}

fn load(config_path: &Path) -> Result<LoadedConfig> {
    let cfg = load_config(config_path)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run_section(cfg: &LoadedConfig) -> Result<&RunConfig> {
    cfg.run
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [run] section, which this command requires"))
}

fn resolve(arg: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    arg.or_else(|| fallback.clone())
        .ok_or_else(|| anyhow!("no {what} given: pass the flag or set it under [run.paths]"))
}

fn generate(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let cfg = load(config_path)?;
    let mut sim = cfg
        .simulate
        .clone()
        .ok_or_else(|| anyhow!("config has no [simulate] section, which generate requires"))?;
    if let Some(seed) = seed {
        sim.master_seed = seed;
    }
    let fallback = cfg.run.as_ref().and_then(|r| r.paths.data_dir.clone());
    let out = resolve(out, &fallback, "output directory (--out)")?;
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let dataset = generate_dataset(&sim)?;
    csvio::write_dataset(&out, &dataset)?;
    let samples: usize = dataset.sessions.iter().map(|s| s.samples.len()).sum();
    println!(
        "wrote {} sessions ({} samples) to {}",
        dataset.sessions.len(),
        samples,
        out.display()
    );
    Ok(())
}

fn extract(config_path: &Path, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load(config_path)?;
    let run = run_section(&cfg)?;
    let data = resolve(data, &run.paths.data_dir, "data directory (--data)")?;
    let out = resolve(out, &run.paths.instances, "output file (--out)")?;

    let sessions = csvio::load_raw_sessions(&data)?;
    let instances = dataset_instances(&sessions, &run.window, &run.schemas)?;
    csvio::write_instances(&out, &instances)?;
    println!(
        "extracted {} instances from {} sessions to {}",
        instances.len(),
        sessions.len(),
        out.display()
    );
    Ok(())
}

fn train_forests(
    instances: &[Instance],
    run: &RunConfig,
    master_seed: u64,
) -> Result<PerModality<Forest>> {
    if instances.is_empty() {
        bail!("instances file is empty");
    }
    let forests = run.eval.forest_params.try_map(|modality, params| {
        let rows: Vec<(&[f64], _)> = instances
            .iter()
            .map(|i| (i.features.get(modality).values.as_slice(), i.label))
            .collect();
        Forest::train(
            modality,
            run.schemas.get(modality).feature_names(),
            &rows,
            params,
            seed::mix(master_seed, 1 + modality.index() as u64),
        )
    })?;
    Ok(forests)
}

fn train(
    config_path: &Path,
    instances: Option<PathBuf>,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<()> {
    let cfg = load(config_path)?;
    let run = run_section(&cfg)?;
    let instances_path = resolve(instances, &run.paths.instances, "instances file")?;
    let out = resolve(out, &run.paths.model, "model file (--out)")?;
    let master_seed = seed_override.unwrap_or(run.eval.master_seed);

    let instances = csvio::load_instances(&instances_path)?;
    let forests = train_forests(&instances, run, master_seed)?;
    let bundle = ModelBundle::new(master_seed, cfg.hash.clone(), run.schemas.clone(), forests);
    save_model(&bundle, &out)?;
    println!(
        "trained on {} instances, saved model to {}",
        instances.len(),
        out.display()
    );
    Ok(())
}

fn predict(
    model_path: &Path,
    instances_path: &Path,
    out: &Path,
    config_path: Option<PathBuf>,
) -> Result<()> {
    let bundle = load_model(model_path)?;
    if let Some(config_path) = config_path {
        let cfg = load(&config_path)?;
        if cfg.hash != bundle.config_hash {
            eprintln!(
                "warning: config hash {} differs from the model's training hash {}",
                cfg.hash, bundle.config_hash
            );
        }
    }
    let instances = csvio::load_instances(instances_path)?;
    let forest_refs = [
        &bundle.forests.appearance,
        &bundle.forests.context_performance,
        &bundle.forests.mouse,
    ];
    let pool = pool_trees(&forest_refs)?;

    let mut rows = Vec::with_capacity(instances.len());
    for inst in &instances {
        let x: ModalityFeatures = Modality::ALL
            .iter()
            .map(|&m| (m, inst.features.get(m).values.as_slice()))
            .collect();
        let (label, votes) = fuse_pooled(&pool, &x)?;
        rows.push(csvio::PredictionOutput {
            session_id: inst.session_id.clone(),
            student_id: inst.student_id.clone(),
            window_index: inst.window.index,
            section: inst.section,
            label,
            confidence_on: votes.on_task as f64 / votes.total() as f64,
        });
    }
    csvio::write_predictions(out, &rows)?;
    println!("wrote {} predictions to {}", rows.len(), out.display());
    Ok(())
}

fn evaluate(
    config_path: &Path,
    instances: Option<PathBuf>,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
    protocol_override: Option<String>,
) -> Result<()> {
    let cfg = load(config_path)?;
    let run = run_section(&cfg)?;
    let instances_path = resolve(instances, &run.paths.instances, "instances file")?;
    let out = resolve(out, &run.paths.out_dir, "output directory (--out)")?;

    let mut settings = run.eval.clone();
    if let Some(seed) = seed_override {
        settings.master_seed = seed;
    }
    if let Some(protocol) = protocol_override {
        settings.protocol = protocol.parse::<eval::Protocol>()?;
    }

    let instances = csvio::load_instances(&instances_path)?;
    let report = eval::evaluate(&instances, &settings)?;

    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    csvio::write_metrics(&out.join("metrics.csv"), &report)?;
    let text = render_text(&report.cells);
    csvio::write_atomic(&out.join("report.txt"), text.as_bytes())?;
    csvio::write_atomic(&out.join("report.csv"), render_csv(&report.cells).as_bytes())?;
    let meta = serde_json::json!({
        "master_seed": report.meta.master_seed,
        "protocol": report.meta.protocol,
        "fold_count": report.meta.fold_count,
        "repeat_count": report.meta.repeat_count,
        "overall_scheme": report.meta.overall_scheme,
        "config_hash": cfg.hash,
    });
    csvio::write_atomic(
        &out.join("run_meta.json"),
        format!("{:#}\n", meta).as_bytes(),
    )?;
    print!("{text}");
    println!("report files written to {}", out.display());
    Ok(())
}

fn report(metrics_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let cells = csvio::load_metrics(metrics_path)?;
    if cells.is_empty() {
        bail!("{}: metrics file has no rows", metrics_path.display());
    }
    let text = render_text(&cells);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating output directory {}", dir.display()))?;
            csvio::write_atomic(&dir.join("report.txt"), text.as_bytes())?;
            csvio::write_atomic(&dir.join("report.csv"), render_csv(&cells).as_bytes())?;
            print!("{text}");
            println!("report files written to {}", dir.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
