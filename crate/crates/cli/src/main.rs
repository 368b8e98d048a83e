use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use modeconn::ParamVector;
use modeconn_cli::checkpoint::{expected_size, load_checkpoint, mlp_for};
use modeconn_cli::config::{documented_defaults, AnalysisRequest, ExperimentConfig};
use modeconn_cli::error::CliError;
use modeconn_cli::output::{metrics_table, read_eval_matrix};
use modeconn_cli::run::{run, write_manifest, Analyzer, Workspace};
use modeconn_cli::parse_config;

/// Continual-learning and loss-landscape experiments on MNIST-family streams.
///
/// Exit codes: 0 success, 2 config or usage error, 3 data or output error,
/// 4 numeric failure. Failures print a one-line JSON record on stderr.
/// MODECONN_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "modeconn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured learners and run every requested analysis.
    Run(Common),
    /// Loss and accuracy along the segment between two checkpoints.
    Interp(PostHoc),
    /// Loss over the plane through three checkpoints.
    Plane(PostHoc),
    /// Layer-by-layer CKA between two checkpoints.
    Cka(PostHoc),
    /// Pairwise Euclidean distances between checkpoints.
    Dist(DistArgs),
    /// Top Hessian eigenvalues at one checkpoint.
    Spectrum(PostHoc),
    /// |cos| between the second-minus-first direction and the Hessian
    /// eigenvectors at the first checkpoint.
    Overlap(PostHoc),
    /// Average accuracy and forgetting from an eval_matrix.csv.
    Metrics(MetricsArgs),
    /// Print a checkpoint's header and provenance.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PostHoc {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file; repeat in order.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Task whose data the analysis uses.
    #[arg(long, default_value_t = 1)]
    task: usize,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// An eval_matrix.csv written by `run`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn load_common(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = parse_config(&c.config)?;
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
}

fn load_all(paths: &[PathBuf], arity: Option<usize>) -> Result<Vec<(String, ParamVector)>, CliError> {
    if let Some(n) = arity {
        if paths.len() != n {
            return Err(CliError::Usage(format!("expected {n} --checkpoint arguments, got {}", paths.len())));
        }
    }
    paths
        .iter()
        .map(|p| {
            let c = load_checkpoint(p)?;
            Ok((c.name, c.params))
        })
        .collect()
}

fn post_hoc(kind: &str, args: &PostHoc) -> Result<(), CliError> {
    let start = Instant::now();
    let threads = modeconn::configure_threads();
    let cfg = load_common(&args.common)?;
    let arity = match kind {
        "plane" => 3,
        "spectrum" => 1,
        _ => 2,
    };
    let ckpts = load_all(&args.checkpoints, Some(arity))?;
    if args.task < 1 || args.task > cfg.num_tasks {
        return Err(CliError::Usage(format!("--task {} outside 1..={}", args.task, cfg.num_tasks)));
    }
    let ws = Workspace::prepare(&cfg)?;
    for (name, p) in &ckpts {
        if mlp_for(p) != Some(ws.mlp) {
            return Err(CliError::Usage(format!("checkpoint {name} does not match the configured network")));
        }
    }
    create_dir(&cfg.output_dir)?;
    let mut an = Analyzer::new(&ws, &cfg.output_dir);
    let req = AnalysisRequest {
        checkpoints: ckpts.iter().map(|(n, _)| n.clone()).collect(),
        task: args.task,
    };
    let p: Vec<&ParamVector> = ckpts.iter().map(|(_, p)| p).collect();
    match kind {
        "interp" => an.interp(&req.checkpoints, &[(p[0], p[1], args.task)])?,
        "plane" => an.plane(&req, p[0], p[1], p[2])?,
        "cka" => an.cka(&req, p[0], p[1])?,
        "spectrum" => an.spectrum(&req.checkpoints[0], p[0], args.task)?,
        "overlap" => an.overlap(&req, p[0], p[1])?,
        _ => unreachable!(),
    }
    let files = an.files;
    write_manifest(&cfg.output_dir, &cfg, threads, &files, start.elapsed().as_secs_f64(), kind)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(c) => {
            let cfg = load_common(&c)?;
            let summary = run(&cfg)?;
            for r in &summary.records {
                let t = r.eval.num_tasks();
                let acc = modeconn::analysis::average_accuracy(&r.eval, t)?;
                println!("{:<8} A_{t} = {:.4}", r.learner, acc);
            }
            println!("wrote {} files to {} in {:.1}s", summary.files.len() + 1, cfg.output_dir.display(), summary.wall_seconds);
            Ok(())
        }
        Command::Interp(a) => post_hoc("interp", &a),
        Command::Plane(a) => post_hoc("plane", &a),
        Command::Cka(a) => post_hoc("cka", &a),
        Command::Spectrum(a) => post_hoc("spectrum", &a),
        Command::Overlap(a) => post_hoc("overlap", &a),
        Command::Dist(a) => {
            let ckpts = load_all(&a.checkpoints, None)?;
            if ckpts.len() < 2 {
                return Err(CliError::Usage("dist needs at least two checkpoints".into()));
            }
            create_dir(&a.out)?;
            let d = modeconn::analysis::pairwise_distance(&ckpts.iter().map(|(_, p)| p.clone()).collect::<Vec<_>>())?;
            let mut header = vec!["checkpoint".to_string()];
            header.extend(ckpts.iter().map(|(n, _)| n.clone()));
            let mut t = modeconn_cli::output::Table::with_header(header);
            for (i, (n, _)) in ckpts.iter().enumerate() {
                let mut row = vec![n.clone()];
                row.extend((0..ckpts.len()).map(|j| modeconn_cli::output::fmt_float(d.get(i, j))));
                t.push(row);
            }
            println!("{}", t.write(&a.out.join("distances.csv"))?.display());
            Ok(())
        }
        Command::Metrics(a) => {
            let m = read_eval_matrix(&a.eval)?;
            create_dir(&a.out)?;
            println!("{}", metrics_table(&m)?.write(&a.out.join("metrics.csv"))?.display());
            Ok(())
        }
        Command::Inspect(a) => {
            let c = load_checkpoint(&a.checkpoint)?;
            let layout = c.params.layout();
            let mut layers = BTreeMap::new();
            for (name, shape) in layout.entries() {
                layers.insert(name.clone(), shape.clone());
            }
            let info = serde_json::json!({
                "name": c.name,
                "learner": c.provenance.learner,
                "task_id": c.provenance.task_id,
                "config_hash": format!("{:016x}", c.provenance.config_hash),
                "seed": c.provenance.seed,
                "layers": layout.entries().iter().map(|(n, s)| serde_json::json!({"name": n, "shape": s})).collect::<Vec<_>>(),
                "parameters": c.params.len(),
                "file_bytes": expected_size(layout),
                "norm": c.params.norm(),
            });
            println!("{}", serde_json::to_string_pretty(&info).expect("json value"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let help = format!("Configuration keys and defaults:\n{}", documented_defaults());
    let cmd = Cli::command().mut_subcommand("run", |c| c.after_long_help(help));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
