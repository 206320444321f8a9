//! `qcqp` — command-line workflows over the qcqp library: parse and inspect
//! instances, run color refinement, solve, generate labeled datasets, train
//! and evaluate models, and verify the built-in counterexample pairs.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad files, solver trouble),
//! 2 on usage errors.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manifest::ManifestBuilder;
use qcqp::counterexamples::{verify_pair, PairKind};
use qcqp::datagen::{generate, synth_base, GenSpec};
use qcqp::gnn::{
    evaluate_accuracy, evaluate_loss, load_checkpoint, save_checkpoint, train, CheckpointMeta,
    GnnConfig, Task, TrainConfig,
};
use qcqp::graph::{build_graph, to_dot, to_json};
use qcqp::io::dataset::{read_dataset, Dataset};
use qcqp::io::qplib::{parse_qplib_full, QplibMetadata};
use qcqp::model::QcqpInstance;
use qcqp::solver::{solve, SolveOptions};
use qcqp::wl::{run_wl, separates};

#[derive(Parser)]
#[command(name = "qcqp", version, about = "Convex QCQP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Feasibility,
    Objective,
    Solution,
}

impl From<TaskArg> for Task {
    fn from(arg: TaskArg) -> Task {
        match arg {
            TaskArg::Feasibility => Task::Feasibility,
            TaskArg::Objective => Task::Objective,
            TaskArg::Solution => Task::Solution,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Objective,
    Feasibility,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an instance file and summarize its sizes.
    Parse {
        file: PathBuf,
    },
    /// Export the tripartite graph of an instance.
    Graph {
        file: PathBuf,
        /// Emit GraphViz DOT.
        #[arg(long, conflicts_with = "json")]
        dot: bool,
        /// Emit the `qcqp-graph-v1` JSON document (the default).
        #[arg(long)]
        json: bool,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run color refinement on one instance, or compare two.
    Wl {
        file_a: PathBuf,
        file_b: Option<PathBuf>,
    },
    /// Solve a convex instance and print the result as JSON.
    Solve {
        file: PathBuf,
    },
    /// Generate labeled train/test datasets by perturbing a base instance.
    Gen(GenArgs),
    /// Train a model on a generated dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Build and verify a non-separable instance pair.
    Counterexample {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Base instance: a QPLib file path, or `synth:n,m,density`.
    #[arg(long)]
    base: String,
    /// Training records to generate.
    #[arg(long)]
    train: usize,
    /// Test records to generate.
    #[arg(long)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target tasks (repeatable or comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    task: Vec<TaskArg>,
    /// Output directory for train.json / test.json / provenance.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Keep convexified objectives even when they are not strictly convex.
    #[arg(long)]
    keep_nonstrict: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding train.json (and optionally test.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Message-passing rounds.
    #[arg(long, default_value_t = 2)]
    rounds: usize,
    /// Hidden width.
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    max_lr: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the evaluation table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Prints a document to stdout, treating a closed pipe as success so
/// `qcqp graph ... | head` behaves.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(err) if err.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_instance(path: &Path) -> Result<(QcqpInstance, QplibMetadata, Vec<u8>)> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = String::from_utf8_lossy(&bytes);
    let (inst, meta) =
        parse_qplib_full(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok((inst, meta, bytes))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Parse { file } => cmd_parse(&file),
        Command::Graph { file, dot, json: _, out } => cmd_graph(&file, dot, out.as_deref()),
        Command::Wl { file_a, file_b } => cmd_wl(&file_a, file_b.as_deref()),
        Command::Solve { file } => cmd_solve(&file),
        Command::Gen(args) => cmd_gen(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Counterexample { kind } => cmd_counterexample(kind),
    }
}

fn cmd_parse(file: &Path) -> Result<()> {
    let (inst, meta, _) = load_instance(file)?;
    let lin_nnz: usize = inst
        .constraints()
        .iter()
        .map(|c| c.lin.iter().filter(|&&v| v != 0.0).count())
        .sum();
    let quad_nnz: usize = inst.constraints().iter().map(|c| c.quad.nnz()).sum();
    let obj_lin_nnz = inst.objective_lin().iter().filter(|&&v| v != 0.0).count();
    let report = json!({
        "schema": "qcqp-parse-v1",
        "name": meta.name,
        "type_code": meta.type_code,
        "maximize": meta.maximize,
        "num_vars": inst.num_vars(),
        "source_constraints": meta.source_constraints,
        "canonical_records": inst.num_cons(),
        "objective_constant": meta.objective_constant,
        "nnz": {
            "objective_quad": inst.objective_quad().nnz(),
            "objective_lin": obj_lin_nnz,
            "constraint_quad": quad_nnz,
            "constraint_lin": lin_nnz,
            "quad_total": inst.objective_quad().nnz() + quad_nnz,
            "all_total": inst.objective_quad().nnz() + quad_nnz + obj_lin_nnz + lin_nnz,
        },
    });
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_graph(file: &Path, dot: bool, out: Option<&Path>) -> Result<()> {
    let (inst, _, _) = load_instance(file)?;
    let graph = build_graph(&inst);
    let rendered = if dot {
        to_dot(&graph)
    } else {
        serde_json::to_string_pretty(&to_json(&graph))?
    };
    match out {
        Some(path) => fs::write(path, rendered)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => emit(&rendered)?,
    }
    Ok(())
}

fn cmd_wl(file_a: &Path, file_b: Option<&Path>) -> Result<()> {
    let mut graphs = Vec::new();
    let (inst_a, _, _) = load_instance(file_a)?;
    graphs.push((file_a.display().to_string(), build_graph(&inst_a)));
    if let Some(path) = file_b {
        let (inst_b, _, _) = load_instance(path)?;
        graphs.push((path.display().to_string(), build_graph(&inst_b)));
    }

    let mut graph_reports = Vec::new();
    for (name, graph) in &graphs {
        let result = run_wl(graph);
        let (vars, quads, cons) = result.stable.class_palette_counts();
        graph_reports.push(json!({
            "file": name,
            "rounds": result.rounds,
            "palette_sizes": result.history,
            "final_palette": {"var": vars, "quad": quads, "cons": cons},
        }));
    }
    let separated = if graphs.len() == 2 {
        Some(separates(&graphs[0].1, &graphs[1].1))
    } else {
        None
    };
    let report = json!({
        "schema": "wl-report-v1",
        "graphs": graph_reports,
        "separated": separated,
    });
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_solve(file: &Path) -> Result<()> {
    let (inst, meta, _) = load_instance(file)?;
    let result = solve(&inst, &SolveOptions::default())?;
    // Report in the source convention as well: add the stored constant and
    // undo a recorded sense flip.
    let reported = if meta.maximize {
        -(result.value + meta.objective_constant)
    } else {
        result.value + meta.objective_constant
    };
    let mut doc = serde_json::to_value(&result)?;
    doc["schema"] = json!("qcqp-solve-v1");
    doc["instance"] = json!(meta.name);
    doc["objective_constant"] = json!(meta.objective_constant);
    doc["reported_objective"] = json!(reported);
    emit(&serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn parse_base(spec: &str) -> Result<(QcqpInstance, Vec<u8>)> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 3 {
            bail!("--base synth wants `synth:n,m,density`, got {spec:?}");
        }
        let n: usize = parts[0].parse().context("bad n in synth base")?;
        let m: usize = parts[1].parse().context("bad m in synth base")?;
        let density: f64 = parts[2].parse().context("bad density in synth base")?;
        Ok((synth_base(n, m, density, 0), spec.as_bytes().to_vec()))
    } else {
        let (inst, _, bytes) = load_instance(Path::new(spec))?;
        Ok((inst, bytes))
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let (base, base_bytes) = parse_base(&args.base)?;
    let tasks: Vec<Task> = args.task.iter().map(|&t| t.into()).collect();
    let mut spec = GenSpec::new(base, args.train, args.test, args.seed, tasks);
    if args.keep_nonstrict {
        spec.reject_nonstrict = false;
    }
    let (train_ds, test_ds, log) = generate(&spec)?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let train_path = args.out_dir.join("train.json");
    let test_path = args.out_dir.join("test.json");
    let provenance_path = args.out_dir.join("provenance.json");
    let manifest_path = args.out_dir.join("manifest.json");

    let mut manifest = ManifestBuilder::new(&[&base_bytes]).seed(args.seed);
    manifest.note_output(&train_path);
    manifest.note_output(&test_path);
    manifest.note_output(&provenance_path);
    let digest = manifest.digest();

    let write_with_digest = |ds: &Dataset, path: &Path| -> Result<()> {
        let mut value = qcqp::io::dataset::dataset_to_json(ds)?;
        value["manifest_digest"] = json!(digest);
        fs::write(path, serde_json::to_string_pretty(&value)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    };
    write_with_digest(&train_ds, &train_path)?;
    write_with_digest(&test_ds, &test_path)?;

    let provenance = json!({
        "schema": "qcqp-provenance-v1",
        "base": args.base,
        "seed": args.seed,
        "tasks": args.task.iter().map(|t| format!("{:?}", Task::from(*t))).collect::<Vec<_>>(),
        "reject_nonstrict": spec.reject_nonstrict,
        "balance_feasibility": spec.balance_feasibility,
        "log": serde_json::to_value(&log)?,
        "manifest_digest": digest,
    });
    fs::write(&provenance_path, serde_json::to_string_pretty(&provenance)?)?;
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest.finish())?)?;

    eprintln!(
        "generated {} train / {} test records ({} attempts, {} repairs, {} tightened)",
        train_ds.records.len(),
        test_ds.records.len(),
        log.attempts,
        log.strictness_repairs,
        log.tightened_samples
    );
    Ok(())
}

fn read_dataset_dir(dir: &Path) -> Result<(Dataset, Option<Dataset>, Vec<u8>)> {
    let train_path = dir.join("train.json");
    let train_bytes = fs::read(&train_path)
        .with_context(|| format!("cannot read {}", train_path.display()))?;
    let train_ds = read_dataset(&train_path)?;
    let test_path = dir.join("test.json");
    let test_ds = if test_path.exists() {
        Some(read_dataset(&test_path)?)
    } else {
        None
    };
    Ok((train_ds, test_ds, train_bytes))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let task: Task = args.task.into();
    let (train_ds, test_ds, train_bytes) = read_dataset_dir(&args.data)?;
    let samples = train_ds.training_samples(task)?;
    let val_samples = test_ds
        .as_ref()
        .map(|ds| ds.training_samples(task))
        .transpose()?;

    let cfg = GnnConfig::new(args.rounds, args.width, task.default_mode(), task);
    let tcfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        max_lr: args.max_lr,
        ..TrainConfig::default()
    };
    let run = train(&cfg, &tcfg, &samples, val_samples.as_deref())?;

    save_checkpoint(
        &args.out,
        &run.params,
        &CheckpointMeta {
            seed: args.seed,
            epoch: args.epochs,
        },
    )?;

    let losses_path = args.out.with_extension("losses.json");
    let mut manifest = ManifestBuilder::new(&[&train_bytes]).seed(args.seed);
    manifest.note_output(&args.out);
    manifest.note_output(&losses_path);
    let digest = manifest.digest();
    let losses = json!({
        "schema": "qcqp-losses-v1",
        "task": format!("{task:?}"),
        "train_curve": run.train_curve,
        "val_curve": run.val_curve,
        "manifest_digest": digest,
    });
    fs::write(&losses_path, serde_json::to_string_pretty(&losses)?)?;
    let manifest_path = args.out.with_extension("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest.finish())?)?;

    let first = run.train_curve.first().copied().unwrap_or(f64::NAN);
    let last = run.train_curve.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "trained {} epochs on {} records: loss {first:.4e} -> {last:.4e}",
        args.epochs,
        samples.len()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (params, _meta) = load_checkpoint(&args.ckpt)?;
    let task = params.config.task;
    let (train_ds, test_ds, train_bytes) = read_dataset_dir(&args.data)?;

    let mut rows = Vec::new();
    let mut table = String::new();
    table.push_str(&format!(
        "{:<12} {:<6} {:>12} {:>10}\n",
        "task", "split", "loss", "accuracy"
    ));
    let mut add_split = |name: &str, ds: &Dataset| -> Result<()> {
        let samples = ds.training_samples(task)?;
        let loss = evaluate_loss(&params, &samples)?;
        let accuracy = if task == Task::Feasibility {
            Some(evaluate_accuracy(&params, &samples)?)
        } else {
            None
        };
        table.push_str(&format!(
            "{:<12} {:<6} {:>12.4e} {:>10}\n",
            format!("{task:?}").to_lowercase(),
            name,
            loss,
            accuracy.map_or("-".to_string(), |a| format!("{a:.3}")),
        ));
        rows.push(json!({
            "task": format!("{task:?}"),
            "split": name,
            "loss": loss,
            "accuracy": accuracy,
        }));
        Ok(())
    };
    add_split("train", &train_ds)?;
    if let Some(test_ds) = &test_ds {
        add_split("test", test_ds)?;
    }
    emit(table.trim_end())?;

    if let Some(out) = &args.out {
        let mut manifest = ManifestBuilder::new(&[&train_bytes]);
        manifest.note_output(out);
        let digest = manifest.digest();
        let doc = json!({
            "schema": "qcqp-eval-v1",
            "rows": rows,
            "manifest_digest": digest,
        });
        fs::write(out, serde_json::to_string_pretty(&doc)?)?;
        let manifest_path = out.with_extension("manifest.json");
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest.finish())?)?;
    }
    Ok(())
}

fn cmd_counterexample(kind: KindArg) -> Result<()> {
    let kind = match kind {
        KindArg::Objective => PairKind::Objective,
        KindArg::Feasibility => PairKind::Feasibility,
    };
    let report = verify_pair(kind);
    // Verification failures are domain errors, not silent output.
    if report.wl_separated {
        bail!("refinement separated the pair; the construction is broken");
    }
    if report.gnn_max_gap > 1e-6 {
        return Err(anyhow!(
            "sampled networks disagree by {:.3e} on the pair",
            report.gnn_max_gap
        ));
    }
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
