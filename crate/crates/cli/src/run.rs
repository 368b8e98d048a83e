//! Executes a configuration: data, learners, analyses and their files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use modeconn::analysis::{
    direction_overlap, hessian_spectrum, interp_curve, layer_cka, cka_probe, pairwise_distance,
    plane_surface, spectrum_sample, taylor_forgetting, SpectrumOptions, SpectrumResult,
};
use modeconn::data::{
    build_stream, load_idx_dir, permutation_specs, rotation_specs, DatasetRegistry, TaskSpec, TaskStream,
    TaskTransform,
};
use modeconn::learners::{
    run_baseline, run_family_split, run_mc_sgd, Algorithm, BaselineConfig, Checkpoint, EvalOptions, RunRecord,
};
use modeconn::{MlpConfig, ParamVector, Rng};
use serde_json::json;

use crate::checkpoint::save_checkpoint;
use crate::config::{AnalysisRequest, Benchmark, ExperimentConfig, Learner};
use crate::error::{CliError, Context};
use crate::output::{eval_table, fmt_float, metrics_table, Table};

/// Datasets, task streams and the network shape for one configuration.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub stream: TaskStream,
    /// Training sets for the multitask chain when they differ from `stream`.
    pub multitask_stream: Option<TaskStream>,
    pub mlp: MlpConfig,
}

impl Workspace {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let needed: Vec<&str> = match cfg.benchmark {
            Benchmark::Rotated | Benchmark::Permuted => vec!["mnist"],
            Benchmark::CrossDataset => cfg.cross_sequence.iter().map(|s| s.as_str()).collect(),
        };
        let mut registry = DatasetRegistry::new();
        let mut seen = Vec::new();
        for name in needed {
            if seen.contains(&name) {
                continue;
            }
            seen.push(name);
            let dir = if name == "mnist" { &cfg.mnist_dir } else { &cfg.fashion_dir };
            let (mut train, mut test) = load_idx_dir(dir).ctx(|| format!("data.{name}"))?;
            if let Some(n) = cfg.train_examples {
                train = train.head(n);
            }
            if let Some(n) = cfg.test_examples {
                test = test.head(n);
            }
            registry.insert(name, train, test);
        }

        let root = Rng::new(cfg.seed);
        let task_rng = root.substream("tasks");
        let mut specs: Vec<TaskSpec> = match cfg.benchmark {
            Benchmark::Rotated => rotation_specs(cfg.num_tasks, cfg.rotation, &task_rng).ctx(|| "rotation".into())?,
            Benchmark::Permuted => permutation_specs(cfg.num_tasks, &task_rng),
            Benchmark::CrossDataset => cfg
                .cross_sequence
                .iter()
                .map(|n| TaskSpec::from(TaskTransform::DatasetSwap { name: n.clone() }))
                .collect(),
        };
        let b = &cfg.breaking;
        if b.task >= 1 && b.task <= cfg.num_tasks {
            let spec = &mut specs[b.task - 1];
            if b.noise_std > 0.0 || b.noise_mean != 0.0 {
                spec.transforms.push(TaskTransform::GaussianNoise {
                    mean: b.noise_mean,
                    std: b.noise_std,
                });
            }
            if b.label_corrupt > 0.0 {
                spec.transforms.push(TaskTransform::LabelCorrupt {
                    fraction: b.label_corrupt,
                    seed: root.substream("label-corrupt").seed(),
                });
            }
        }
        let stream_rng = root.substream("stream");
        let stream = build_stream(&specs, &registry, &stream_rng).ctx(|| "task stream".into())?;
        let multitask_stream = if b.multitask_removed_classes > 0 {
            let mut mt = specs.clone();
            mt[0].transforms.push(TaskTransform::ClassRemoval {
                k: b.multitask_removed_classes,
                seed: root.substream("removed-classes").seed(),
            });
            Some(build_stream(&mt, &registry, &stream_rng).ctx(|| "breaking.multitask_removed_classes".into())?)
        } else {
            None
        };
        let first = &stream.task(1).train;
        let mlp = MlpConfig::new(first.width(), cfg.hidden, first.num_classes(), 0.0)?;
        Ok(Workspace {
            cfg: cfg.clone(),
            stream,
            multitask_stream,
            mlp,
        })
    }

    pub fn train_learner(&self, learner: Learner) -> Result<RunRecord, CliError> {
        let cfg = &self.cfg;
        let rng = Rng::new(cfg.seed).substream(learner.name());
        let opts = EvalOptions::default();
        let ctx = || format!("learner {}", learner.name());
        let record = match learner {
            Learner::Family => {
                let mc = cfg.family_mc.then_some(&cfg.mc);
                let mt = self.multitask_stream.as_ref().unwrap_or(&self.stream);
                run_family_split(&self.stream, mt, &cfg.family, &cfg.family_multitask, &self.mlp, &rng, mc, &opts)
                    .ctx(ctx)?
            }
            Learner::Baseline(Algorithm::Mc) => {
                let mut r = run_mc_sgd(&self.stream, &cfg.mc, &self.mlp, &rng, None, &opts).ctx(ctx)?;
                let old = std::mem::take(&mut r.checkpoints);
                for (name, mut c) in old {
                    let t = c.provenance.task_id;
                    c.name = if name.starts_with("bar_") {
                        format!("mc_w_{t}")
                    } else if t >= 2 {
                        format!("mc_hat_w_{t}")
                    } else {
                        continue;
                    };
                    r.insert(c);
                }
                r
            }
            Learner::Baseline(algo) => {
                let bc = BaselineConfig {
                    algorithm: algo,
                    sgd: cfg.sgd_for(algo),
                    ewc_lambda: cfg.ewc_lambda,
                    ewc_samples: cfg.ewc_samples,
                    per_class: cfg.memory_per_class,
                    agem_ref_size: cfg.agem_ref_size,
                };
                run_baseline(&self.stream, &bc, &self.mlp, &rng, &opts).ctx(ctx)?
            }
        };
        Ok(record.with_config_hash(cfg.hash()))
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// Writes analysis files into one directory, caching spectra.
pub struct Analyzer<'a> {
    pub ws: &'a Workspace,
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    spectra: BTreeMap<(String, usize), SpectrumResult>,
}

impl<'a> Analyzer<'a> {
    pub fn new(ws: &'a Workspace, out: &Path) -> Self {
        Analyzer {
            ws,
            out: out.to_path_buf(),
            files: Vec::new(),
            spectra: BTreeMap::new(),
        }
    }

    fn write(&mut self, table: Table, name: &str) -> Result<(), CliError> {
        let p = table.write(&self.out.join(name))?;
        self.files.push(p);
        Ok(())
    }

    /// Every requested analysis of the config, in a fixed order.
    pub fn run_all(&mut self, ckpts: &BTreeMap<String, ParamVector>) -> Result<(), CliError> {
        let a = self.ws.cfg.analysis.clone();
        let get = |n: &str| ckpts.get(n).expect("validated checkpoint name");
        let mut by_pair: Vec<(String, Vec<&AnalysisRequest>)> = Vec::new();
        for r in &a.interp {
            match by_pair.iter_mut().find(|(s, _)| *s == r.stem()) {
                Some((_, v)) => v.push(r),
                None => by_pair.push((r.stem(), vec![r])),
            }
        }
        for (_, reqs) in by_pair {
            let ws: Vec<(&ParamVector, &ParamVector, usize)> =
                reqs.iter().map(|r| (get(&r.checkpoints[0]), get(&r.checkpoints[1]), r.task)).collect();
            self.interp(&reqs[0].checkpoints, &ws)?;
        }
        for r in &a.plane {
            let p: Vec<&ParamVector> = r.checkpoints.iter().map(|n| get(n)).collect();
            self.plane(r, p[0], p[1], p[2])?;
        }
        for r in &a.cka {
            self.cka(r, get(&r.checkpoints[0]), get(&r.checkpoints[1]))?;
        }
        if !a.distances.is_empty() {
            let named: Vec<(String, ParamVector)> = a.distances.iter().map(|n| (n.clone(), get(n).clone())).collect();
            self.distances(&named)?;
        }
        for r in &a.spectrum {
            self.spectrum(&r.checkpoints[0], get(&r.checkpoints[0]), r.task)?;
        }
        for r in &a.overlap {
            self.overlap(r, get(&r.checkpoints[0]), get(&r.checkpoints[1]))?;
        }
        for r in &a.taylor {
            self.taylor(r, get(&r.checkpoints[0]), get(&r.checkpoints[1]))?;
        }
        Ok(())
    }

    /// `interp_<a>-<b>.csv` with one block of rows per requested task.
    pub fn interp(&mut self, names: &[String], segments: &[(&ParamVector, &ParamVector, usize)]) -> Result<(), CliError> {
        let stem = names.join("-");
        let mut t = Table::new(&["alpha", "loss", "accuracy", "task"]);
        for &(w1, w2, task) in segments {
            let test = &self.ws.stream.task(task).test;
            let c = interp_curve(w1, w2, test, &self.ws.mlp, self.ws.cfg.analysis.interp_points)
                .ctx(|| format!("interp {stem}@{task}"))?;
            for k in 0..c.alphas.len() {
                t.push(vec![
                    fmt_float(c.alphas[k]),
                    fmt_float(c.losses[k]),
                    fmt_float(c.accuracies[k]),
                    task.to_string(),
                ]);
            }
        }
        self.write(t, &format!("interp_{stem}.csv"))
    }

    pub fn plane(&mut self, r: &AnalysisRequest, w1: &ParamVector, w2: &ParamVector, w3: &ParamVector) -> Result<(), CliError> {
        let a = &self.ws.cfg.analysis;
        let test = &self.ws.stream.task(r.task).test;
        let g = plane_surface(w1, w2, w3, test, &self.ws.mlp, a.plane_resolution, a.plane_margin)
            .ctx(|| format!("plane {r}"))?;
        let mut t = Table::new(&["x", "y", "loss"]);
        for (x, y, l) in g.grid {
            t.push(vec![fmt_float(x), fmt_float(y), fmt_float(l)]);
        }
        self.write(t, &format!("plane_{}.csv", r.stem()))
    }

    pub fn cka(&mut self, r: &AnalysisRequest, wa: &ParamVector, wb: &ParamVector) -> Result<(), CliError> {
        let probe = cka_probe(&self.ws.stream.task(r.task).test)?;
        let scores = layer_cka(wa, wb, &probe, &self.ws.mlp).ctx(|| format!("cka {r}"))?;
        let mut t = Table::new(&["layer_i", "layer_j", "score"]);
        for (i, j, s) in scores {
            t.push(vec![i.to_string(), j.to_string(), fmt_float(s)]);
        }
        self.write(t, &format!("cka_{}.csv", r.stem()))
    }

    pub fn distances(&mut self, named: &[(String, ParamVector)]) -> Result<(), CliError> {
        let params: Vec<ParamVector> = named.iter().map(|(_, p)| p.clone()).collect();
        let d = pairwise_distance(&params).ctx(|| "distances".into())?;
        let mut header = vec!["checkpoint".to_string()];
        header.extend(named.iter().map(|(n, _)| n.clone()));
        let mut t = Table::with_header(header);
        for (i, (n, _)) in named.iter().enumerate() {
            let mut row = vec![n.clone()];
            row.extend((0..named.len()).map(|j| fmt_float(d.get(i, j))));
            t.push(row);
        }
        self.write(t, "distances.csv")
    }

    fn spectrum_at(&mut self, name: &str, w: &ParamVector, task: usize) -> Result<SpectrumResult, CliError> {
        let key = (name.to_string(), task);
        if let Some(s) = self.spectra.get(&key) {
            return Ok(s.clone());
        }
        let a = &self.ws.cfg.analysis;
        let rng = Rng::new(self.ws.cfg.seed).substream_indexed("spectrum", task as u64);
        let sample = spectrum_sample(&self.ws.stream.task(task).train, a.spectrum_samples, &rng)?;
        let opts = SpectrumOptions {
            max_iters: a.spectrum_iters,
            tol: a.spectrum_tol,
            epsilon: None,
        };
        let k = a.spectrum_k.min(w.len());
        let s = hessian_spectrum(w, &sample, &self.ws.mlp, k, &opts, &rng).ctx(|| format!("spectrum {name}@{task}"))?;
        self.spectra.insert(key, s.clone());
        Ok(s)
    }

    pub fn spectrum(&mut self, name: &str, w: &ParamVector, task: usize) -> Result<(), CliError> {
        let s = self.spectrum_at(name, w, task)?;
        let mut t = Table::new(&["index", "eigenvalue", "converged"]);
        for (i, (v, c)) in s.eigenvalues.iter().zip(&s.converged).enumerate() {
            t.push(vec![(i + 1).to_string(), fmt_float(*v), c.to_string()]);
        }
        self.write(t, &format!("spectrum_{name}.csv"))
    }

    pub fn overlap(&mut self, r: &AnalysisRequest, from: &ParamVector, to: &ParamVector) -> Result<(), CliError> {
        let s = self.spectrum_at(&r.checkpoints[0], from, r.task)?;
        let cos = direction_overlap(from, to, &s).ctx(|| format!("overlap {r}"))?;
        let mut t = Table::new(&["index", "cosine"]);
        for (i, c) in cos.iter().enumerate() {
            t.push(vec![(i + 1).to_string(), fmt_float(*c)]);
        }
        self.write(t, &format!("overlap_{}.csv", r.stem()))
    }

    pub fn taylor(&mut self, r: &AnalysisRequest, w1: &ParamVector, w2: &ParamVector) -> Result<(), CliError> {
        let s = self.spectrum_at(&r.checkpoints[0], w1, r.task)?;
        let test = &self.ws.stream.task(r.task).test;
        let tf = taylor_forgetting(w1, w2, test, &self.ws.mlp, s.lambda_max()).ctx(|| format!("taylor {r}"))?;
        let mut t = Table::new(&["actual", "bound", "lambda_max", "distance"]);
        t.push(vec![
            fmt_float(tf.actual),
            fmt_float(tf.bound),
            fmt_float(s.lambda_max()),
            fmt_float(w1.distance(w2)?),
        ]);
        self.write(t, &format!("taylor_{}.csv", r.stem()))
    }
}

pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
    pub wall_seconds: f64,
}

/// Trains every selected learner, writes evaluations, checkpoints and the
/// requested analyses, then the `run.json` manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let threads = modeconn::configure_threads();
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    let ws = Workspace::prepare(cfg)?;

    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut summary = Table::new(&["learner", "final_average_accuracy", "final_forgetting"]);
    for &l in &cfg.learners {
        let record = ws.train_learner(l)?;
        let mut evals = vec![(l.name().to_string(), &record.eval)];
        for (k, m) in &record.extra_evals {
            evals.push((format!("{}_{k}", l.name()), m));
        }
        for (dir_name, m) in evals {
            let dir = out.join(&dir_name);
            create_dir(&dir)?;
            files.push(eval_table(m).write(&dir.join("eval_matrix.csv"))?);
            files.push(metrics_table(m)?.write(&dir.join("metrics.csv"))?);
            let t = m.num_tasks();
            let f = if t >= 2 { fmt_float(modeconn::analysis::average_forgetting(m)?) } else { String::new() };
            summary.push(vec![dir_name, fmt_float(modeconn::analysis::average_accuracy(m, t)?), f]);
        }
        records.push(record);
    }
    files.push(summary.write(&out.join("summary.csv"))?);

    let all: BTreeMap<String, &Checkpoint> = records.iter().flat_map(|r| r.checkpoints.iter().map(|(k, c)| (k.clone(), c))).collect();
    if cfg.save_checkpoints {
        let dir = out.join("checkpoints");
        create_dir(&dir)?;
        for (name, c) in &all {
            let p = dir.join(format!("{name}.ckpt"));
            save_checkpoint(c, &p).map_err(|e| CliError::Output(e.to_string()))?;
            files.push(p);
        }
    }

    let params: BTreeMap<String, ParamVector> = all.iter().map(|(k, c)| (k.clone(), c.params.clone())).collect();
    let mut analyzer = Analyzer::new(&ws, &out);
    analyzer.run_all(&params)?;
    files.extend(analyzer.files);

    let wall_seconds = start.elapsed().as_secs_f64();
    write_manifest(&out, cfg, threads, &files, wall_seconds, "run")?;
    Ok(RunSummary {
        records,
        files,
        wall_seconds,
    })
}

pub fn write_manifest(
    out: &Path,
    cfg: &ExperimentConfig,
    threads: usize,
    files: &[PathBuf],
    wall_seconds: f64,
    command: &str,
) -> Result<(), CliError> {
    let rel: Vec<String> = files
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    let manifest = json!({
        "command": command,
        "config_hash": format!("{:016x}", cfg.hash()),
        "seed": cfg.seed,
        "benchmark": cfg.benchmark.name(),
        "num_tasks": cfg.num_tasks,
        "learners": cfg.learners.iter().map(|l| l.name()).collect::<Vec<_>>(),
        "versions": {
            "modeconn": env!("CARGO_PKG_VERSION"),
            "checkpoint_format": "MCCKPT01",
        },
        "threads": threads,
        "spectrum_sample_size": cfg.analysis.spectrum_samples,
        "cka_probe_size": modeconn::analysis::CKA_PROBE_SIZE,
        "wall_time_seconds": wall_seconds,
        "files": rel,
        "config": cfg.emit(),
    });
    let path = out.join("run.json");
    let text = serde_json::to_string_pretty(&manifest).expect("json value") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}
