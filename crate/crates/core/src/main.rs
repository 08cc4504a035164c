//! Command-line entry point: generate data, train, fit transforms, evaluate
//! single cells, and run full sweeps with reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use erm_ica::datagen::{make_dataset, Dataset, TaskType};
use erm_ica::harness::{
    dataset_config_for, emit_report, ica_rng_for, load_table_from_markers, run_cell, run_sweep,
    train_config_for, CellSpec, ExperimentConfig, ResultsTable,
};
use erm_ica::metrics::{
    accuracy_avg, downstream_readout, mcc, r2_avg, threshold_probs, EvalResult, Method,
};
use erm_ica::network::{load_checkpoint, save_checkpoint, train};
use erm_ica::numerics::sigmoid;
use erm_ica::transform::{
    apply_transform, fit_ica, fit_pca, load_transform, save_transform, LinearTransform,
    TransformKind,
};

#[derive(Parser)]
#[command(
    name = "erm-ica",
    version,
    about = "Latent recovery benchmark: supervised training plus linear ICA post-processing"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override; defaults to the first seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: one per CPU).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one cell's dataset into <out>/dataset/.
    Datagen {
        /// Task count; defaults to the first entry of the config's k_list.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the predictor for one cell; writes <out>/model.json.
    Train {
        /// Existing dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fit a post-hoc transform on train-split representations; writes
    /// <out>/transform.json.
    Transform {
        #[arg(long, value_enum)]
        kind: CliTransformKind,
        /// Model checkpoint (model.json).
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate a model, optionally through a transform; writes
    /// <out>/eval.json.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// transform.json produced by the `transform` subcommand.
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// Run all three methods for one (d, k, seed) cell.
    Cell {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the whole (k, seed) grid and emit reports.
    Sweep,
    /// Rebuild results.csv/results.json and charts from completed cells.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliTransformKind {
    Pca,
    Ica,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Datagen { k } => datagen_cmd(&cli, *k),
        Command::Train { data, k } => train_cmd(&cli, data.as_deref(), *k),
        Command::Transform {
            kind,
            model,
            data,
            k,
        } => transform_cmd(&cli, *kind, model, data, *k),
        Command::Eval {
            model,
            data,
            transform,
        } => eval_cmd(&cli, model, data, transform.as_deref()),
        Command::Cell { k } => cell_cmd(&cli, *k),
        Command::Sweep => sweep_cmd(&cli),
        Command::Report => report_cmd(&cli),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required for this command")?;
    ExperimentConfig::from_file(path)
        .with_context(|| format!("cannot load config {}", path.display()))
}

fn out_dir<'a>(cli: &'a Cli, config: Option<&'a ExperimentConfig>) -> Result<&'a Path> {
    if let Some(out) = cli.out.as_deref() {
        return Ok(out);
    }
    if let Some(dir) = config.and_then(|c| c.out_dir.as_deref()) {
        return Ok(dir);
    }
    bail!("--out <dir> is required (or set out_dir in the config)")
}

fn cell_spec(cli: &Cli, config: &ExperimentConfig, k: Option<usize>) -> Result<CellSpec> {
    let k = k.unwrap_or(config.k_list[0]);
    if k < 1 || k > config.d {
        bail!("k = {k} must satisfy 1 <= k <= d = {}", config.d);
    }
    let seed = cli.seed.unwrap_or(config.seeds[0]);
    Ok(CellSpec {
        task_type: config.task_type,
        d: config.d,
        k,
        seed,
    })
}

fn datagen_cmd(cli: &Cli, k: Option<usize>) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli, Some(&config))?.to_path_buf();
    let spec = cell_spec(cli, &config, k)?;
    let dataset = make_dataset(&dataset_config_for(&spec, &config.settings()))?;
    let dir = out.join("dataset");
    dataset.save(&dir)?;
    println!(
        "wrote {} ({}, d={}, k={}, seed={})",
        dir.display(),
        spec.task_type,
        spec.d,
        spec.k,
        spec.seed
    );
    Ok(())
}

fn load_or_make_dataset(
    config: &ExperimentConfig,
    data: Option<&Path>,
    spec: &CellSpec,
) -> Result<Dataset> {
    match data {
        Some(dir) => {
            Dataset::load(dir).with_context(|| format!("cannot load dataset {}", dir.display()))
        }
        None => Ok(make_dataset(&dataset_config_for(spec, &config.settings()))?),
    }
}

fn train_cmd(cli: &Cli, data: Option<&Path>, k: Option<usize>) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli, Some(&config))?.to_path_buf();
    let mut spec = cell_spec(cli, &config, k)?;
    let dataset = load_or_make_dataset(&config, data, &spec)?;
    spec.d = dataset.d;
    spec.k = dataset.k;
    let train_config = train_config_for(&spec, &config.settings());

    let started = Instant::now();
    let output = train(&dataset, &train_config)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join("model.json");
    save_checkpoint(&path, &output.model, &train_config)?;
    println!(
        "wrote {} (best epoch {} of {}, val loss {:.6}, {:.1}s)",
        path.display(),
        output.best_epoch,
        train_config.epochs,
        output.best_val_loss,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn transform_cmd(
    cli: &Cli,
    kind: CliTransformKind,
    model_path: &Path,
    data: &Path,
    k: Option<usize>,
) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli, Some(&config))?.to_path_buf();
    let spec = cell_spec(cli, &config, k)?;
    let checkpoint = load_checkpoint(model_path)?;
    let dataset =
        Dataset::load(data).with_context(|| format!("cannot load dataset {}", data.display()))?;
    let rep_train = checkpoint.model.extract_representation(&dataset.train.x);
    let transform = match kind {
        CliTransformKind::Pca => fit_pca(&rep_train)?,
        CliTransformKind::Ica => fit_ica(&mut ica_rng_for(&spec), &rep_train, &config.ica)?,
    };
    std::fs::create_dir_all(&out)?;
    let path = out.join("transform.json");
    save_transform(&path, &transform)?;
    println!(
        "wrote {} (kind={:?}, converged={}, iterations={})",
        path.display(),
        transform.kind,
        transform.converged,
        transform.iterations
    );
    Ok(())
}

fn eval_cmd(
    cli: &Cli,
    model_path: &Path,
    data: &Path,
    transform_path: Option<&Path>,
) -> Result<()> {
    let out = out_dir(cli, None)?.to_path_buf();
    let checkpoint = load_checkpoint(model_path)?;
    let dataset =
        Dataset::load(data).with_context(|| format!("cannot load dataset {}", data.display()))?;
    let model = checkpoint.model;
    let started = Instant::now();
    let transform: Option<LinearTransform> = transform_path.map(load_transform).transpose()?;

    let rep_test = model.extract_representation(&dataset.test.x);
    let (method, label_score, cell_mcc, converged) = match &transform {
        None => {
            let (_, test_out) = model.forward_eval(&dataset.test.x);
            let label = match dataset.task_type {
                TaskType::Regression => r2_avg(&dataset.test.y, &test_out)?,
                TaskType::Classification => {
                    accuracy_avg(&dataset.test.y, &threshold_probs(&test_out.map(sigmoid)))?
                }
            };
            (Method::Erm, label, mcc(&dataset.test.z, &rep_test)?, None)
        }
        Some(t) => {
            let rep_train = model.extract_representation(&dataset.train.x);
            let train_t = apply_transform(t, &rep_train)?;
            let test_t = apply_transform(t, &rep_test)?;
            let (_, label) = downstream_readout(
                &train_t,
                &dataset.train.y,
                &test_t,
                &dataset.test.y,
                dataset.task_type,
            )?;
            let method = match t.kind {
                TransformKind::Ica => Method::ErmIca,
                _ => Method::ErmPca,
            };
            let converged = matches!(t.kind, TransformKind::Ica).then_some(t.converged);
            (method, label, mcc(&dataset.test.z, &test_t)?, converged)
        }
    };

    let result = EvalResult {
        method,
        task_type: dataset.task_type,
        d: dataset.d,
        k: dataset.k,
        seed: dataset.seed,
        label_score,
        mcc: cell_mcc,
        ica_converged: converged,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    std::fs::create_dir_all(&out)?;
    let path = out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
    print_rows(std::slice::from_ref(&result));
    println!("wrote {}", path.display());
    Ok(())
}

fn cell_cmd(cli: &Cli, k: Option<usize>) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli, Some(&config))?.to_path_buf();
    let spec = cell_spec(cli, &config, k)?;
    let rows = run_cell(&spec, &config.settings())?;
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let path = cells_dir.join(format!("{}.json", spec.marker_name()));
    std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
    print_rows(&rows);
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep_cmd(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(cli, Some(&config))?.to_path_buf();
    let table = run_sweep(&config, &out, cli.workers)?;
    let written = emit_report(&table, &out)?;
    print_summary(&table);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report_cmd(cli: &Cli) -> Result<()> {
    let out = out_dir(cli, None)?.to_path_buf();
    let table = load_table_from_markers(&out)?;
    if table.rows.is_empty() {
        bail!("no completed cells under {}", out.join("cells").display());
    }
    let written = emit_report(&table, &out)?;
    print_summary(&table);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_rows(rows: &[EvalResult]) {
    for row in rows {
        println!(
            "{} d={} k={} seed={}: label_score={:.4} mcc={:.4}{}",
            row.method,
            row.d,
            row.k,
            row.seed,
            row.label_score,
            row.mcc,
            match row.ica_converged {
                Some(c) => format!(" ica_converged={c}"),
                None => String::new(),
            }
        );
    }
}

fn print_summary(table: &ResultsTable) {
    for agg in table.aggregates() {
        println!(
            "{} {} d={} k={} ({} seeds): label={:.4}±{:.4} mcc={:.4}±{:.4}",
            agg.task_type,
            agg.method,
            agg.d,
            agg.k,
            agg.n_seeds,
            agg.label_mean,
            agg.label_std,
            agg.mcc_mean,
            agg.mcc_std
        );
    }
}
