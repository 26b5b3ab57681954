use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use opfuse::dataset::{parse_corpus, validate_distribution, Corpus, LabelMap, Record, Split};
use opfuse::eval::{
    aggregate, chi_square_sf, mcnemar, mcnemar_counts, pair_predictions, read_predictions, report_predictions,
    stuart_maxwell, stuart_maxwell_table, write_f1_csv, write_predictions, ExclusionPolicy, F1Report,
};
use opfuse::model::{Model, ModelConfig};
use opfuse::param::ParamStore;
use opfuse::parallel::Parallelism;
use opfuse::sweep::{sweep, write_trials, SearchSpace, SweepOptions};
use opfuse::train::{accuracy, predict, train, write_log};
use opfuse::{Error, Result};

/// Opinion-graph fusion for emotion classification.
#[derive(Parser)]
#[command(name = "opfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and report split sizes and label shares.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Train a model and write checkpoint, log and dev predictions to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        exec: Exec,
    },
    /// Score a prediction file, or predict a split from a checkpoint and score it.
    Eval {
        /// Existing prediction file.
        #[arg(long, conflicts_with_all = ["config", "checkpoint", "data"])]
        pred: Option<PathBuf>,
        #[arg(long, requires_all = ["checkpoint", "data"])]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Where to write the predictions made from a checkpoint.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Per-class F1 CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        exec: Exec,
        #[command(flatten)]
        out: Out,
    },
    /// Re-score predictions in coarser taxonomies.
    Aggregate {
        #[arg(long)]
        pred: PathBuf,
        /// `ekman6`, `valence3` or a label-map JSON file; repeatable.
        #[arg(long = "map", default_values_t = vec!["ekman6".to_string()])]
        maps: Vec<String>,
        #[arg(long, value_enum, default_value_t = Policy::Holdout)]
        policy: Policy,
        /// Per-class F1 by taxonomy, the 12-way view included.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Paired significance tests between two prediction files.
    Compare {
        #[arg(long)]
        pred_a: PathBuf,
        #[arg(long)]
        pred_b: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Tests from raw counts: McNemar from b and c, Stuart-Maxwell from a
    /// contingency CSV, or a chi-square tail.
    Stats {
        #[arg(long, requires = "c", conflicts_with_all = ["table", "chi2"])]
        b: Option<u64>,
        #[arg(long, requires = "b")]
        c: Option<u64>,
        /// Square table of counts, one row per line, no header.
        #[arg(long, conflicts_with = "chi2")]
        table: Option<PathBuf>,
        #[arg(long, requires = "df")]
        chi2: Option<f64>,
        #[arg(long)]
        df: Option<u32>,
        #[command(flatten)]
        out: Out,
    },
    /// Random search over the hyper-parameter grid; prints the ranked trial CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON search space; defaults to the full grid.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        out: Out,
    },
    /// One JSON line per record with its opinion graphs.
    ExportGraphs {
        #[arg(long)]
        data: PathBuf,
        /// Supplies topology and tokenizer; defaults apply without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args)]
struct Out {
    /// Also write the machine-readable output here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Exec {
    /// Compute examples one at a time.
    #[arg(long)]
    sequential: bool,
}

impl Exec {
    fn parallelism(&self) -> Parallelism {
        if self.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Holdout,
    Drop,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `text` to stdout and, when asked, byte-for-byte to a file.
fn emit(text: &str, out: &Out) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| io_err(Path::new("<stdout>"), e))?;
    if let Some(path) = &out.out {
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: &Out) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"), out)
}

fn load_data(path: &Path) -> Result<Vec<Record>> {
    Ok(opfuse::dataset::load_corpus(path)?.records)
}

fn load_map(name: &str) -> Result<LabelMap> {
    match LabelMap::builtin(name) {
        Some(m) => Ok(m),
        None => LabelMap::load(Path::new(name)),
    }
}

/// Returns the exit code.
fn ingest(data: &Path, out: &Out) -> Result<u8> {
    let text = std::fs::read_to_string(data).map_err(|e| io_err(data, e))?;
    let (records, diagnostics) = parse_corpus(&text);
    for d in &diagnostics {
        eprintln!("{d}");
    }
    let report = validate_distribution(&records);
    let sizes = Corpus::new(records).split_sizes();
    if report.total == 0 && diagnostics.is_empty() {
        eprintln!("0 records");
    } else {
        eprintln!("train {} / dev {} / test {}", sizes[0], sizes[1], sizes[2]);
    }
    for f in &report.flags {
        eprintln!(
            "{} {}: {:.2}% observed, {:.2}% expected",
            f.split.as_str(),
            f.label,
            f.observed,
            f.expected
        );
    }
    emit_json(
        &json!({
            "records": report.total,
            "splits": {"train": sizes[0], "dev": sizes[1], "test": sizes[2]},
            "distribution": report,
            "diagnostics": diagnostics,
        }),
        out,
    )?;
    Ok(if diagnostics.is_empty() { 0 } else { 2 })
}

fn train_cmd(config: &Path, data: &Path, dir: &Path, seed: Option<u64>, par: Parallelism) -> Result<()> {
    let mut cfg = ModelConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let records = load_data(data)?;
    let model = Model::new(cfg)?;
    let outcome = train(&model, &records, par)?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    outcome.params.save(&dir.join("checkpoint.bin"))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&model.config)? + "\n").map_err(|e| io_err(&cfg_path, e))?;
    write_file(&dir.join("train_log.csv"), |w| write_log(w, &outcome.log))?;
    write_file(&dir.join("dev_predictions.jsonl"), |w| write_predictions(w, &outcome.dev_predictions))?;
    let acc = accuracy(&outcome.dev_predictions);
    eprintln!(
        "best epoch {}: dev macro-F1 {:.2}, accuracy {:.2}",
        outcome.best_epoch,
        outcome.best_dev_macro_f1,
        100.0 * acc
    );
    emit_json(
        &json!({
            "best_epoch": outcome.best_epoch,
            "best_dev_macro_f1": outcome.best_dev_macro_f1,
            "dev_accuracy": 100.0 * acc,
            "epochs_run": outcome.log.len(),
            "out": dir,
        }),
        &Out { out: None },
    )
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn print_report(name: &str, report: &F1Report) {
    eprintln!("[{name}]\n{}", report.table());
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    pred: Option<&Path>,
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    split: Split,
    predictions: Option<&Path>,
    csv: Option<&Path>,
    par: Parallelism,
    out: &Out,
) -> Result<()> {
    let preds = match (pred, config, checkpoint, data) {
        (Some(p), _, _, _) => read_predictions(p)?,
        (None, Some(c), Some(k), Some(d)) => {
            let model = Model::new(ModelConfig::load(c)?)?;
            let params = ParamStore::load(k)?;
            let records = load_data(d)?;
            let chosen: Vec<&Record> = records.iter().filter(|r| r.split == split).collect();
            let preds = predict(&model, &params, &chosen, par)?;
            if let Some(p) = predictions {
                write_file(p, |w| write_predictions(w, &preds))?;
            }
            preds
        }
        _ => {
            return Err(Error::InvalidArgument {
                op: "eval",
                msg: "give --pred, or --config with --checkpoint and --data".into(),
            })
        }
    };
    let report = report_predictions(&preds)?;
    print_report("emotion12", &report);
    if let Some(p) = csv {
        write_file(p, |w| write_f1_csv(w, &[("emotion12", &report)]))?;
    }
    emit_json(&report, out)
}

fn aggregate_cmd(pred: &Path, maps: &[String], policy: Policy, csv: Option<&Path>, out: &Out) -> Result<()> {
    let preds = read_predictions(pred)?;
    let policy = match policy {
        Policy::Holdout => ExclusionPolicy::Holdout,
        Policy::Drop => ExclusionPolicy::Drop,
    };
    let base = report_predictions(&preds)?;
    let mut reports = Vec::new();
    for name in maps {
        let map = load_map(name)?;
        let r = aggregate(&preds, &map, policy)?;
        print_report(&r.map, &r.report);
        reports.push(r);
    }
    if let Some(p) = csv {
        let mut rows: Vec<(&str, &F1Report)> = vec![("emotion12", &base)];
        rows.extend(reports.iter().map(|r| (r.map.as_str(), &r.report)));
        write_file(p, |w| write_f1_csv(w, &rows))?;
    }
    emit_json(&reports, out)
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4e}"))
}

fn compare_cmd(a: &Path, b: &Path, out: &Out) -> Result<()> {
    let paired = pair_predictions(&read_predictions(a)?, &read_predictions(b)?)?;
    let m = mcnemar(&paired)?;
    let sm = stuart_maxwell(&paired)?;
    eprintln!("n = {}", paired.len());
    eprintln!("McNemar       b={} c={}", m.b, m.c);
    eprintln!("  asymptotic  chi2 {:<12} p {}", fmt_stat(m.statistic), fmt_p(m.p_value));
    eprintln!("  corrected   chi2 {:<12} p {}", fmt_stat(m.corrected_statistic), fmt_p(m.corrected_p_value));
    eprintln!("  exact                         p {:.4e}", m.exact_p_value);
    eprintln!(
        "Stuart-Maxwell chi2 {:.4} df {} p {:.4e}{}",
        sm.statistic,
        sm.df,
        sm.p_value,
        if sm.rank_reduced { " (rank reduced)" } else { "" }
    );
    emit_json(&json!({"n": paired.len(), "mcnemar": m, "stuart_maxwell": sm}), out)
}

fn fmt_stat(s: Option<f64>) -> String {
    s.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

fn read_table(path: &Path) -> Result<Vec<Vec<u64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(path, io),
            other => Error::InvalidArgument {
                op: "stats",
                msg: format!("{other:?}"),
            },
        })?;
    let mut table = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::InvalidArgument {
            op: "stats",
            msg: e.to_string(),
        })?;
        let cells = row
            .iter()
            .map(|c| {
                c.parse::<u64>().map_err(|_| Error::Schema {
                    line: i + 1,
                    field: "count".into(),
                    msg: format!("{c:?} is not a non-negative integer"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        table.push(cells);
    }
    Ok(table)
}

fn stats_cmd(
    b: Option<u64>,
    c: Option<u64>,
    table: Option<&Path>,
    chi2: Option<f64>,
    df: Option<u32>,
    out: &Out,
) -> Result<()> {
    let value = match (b, c, table, chi2, df) {
        (Some(b), Some(c), _, _, _) => {
            let m = mcnemar_counts(b, c)?;
            eprintln!("McNemar chi2 {} p {} (exact p {:.4e})", fmt_stat(m.statistic), fmt_p(m.p_value), m.exact_p_value);
            json!({ "mcnemar": m })
        }
        (_, _, Some(t), _, _) => {
            let sm = stuart_maxwell_table(&read_table(t)?)?;
            eprintln!("Stuart-Maxwell chi2 {:.4} df {} p {:.4e}", sm.statistic, sm.df, sm.p_value);
            json!({ "stuart_maxwell": sm })
        }
        (_, _, _, Some(x), Some(df)) => {
            let p = chi_square_sf(x, df)?;
            eprintln!("P(chi2_{df} > {x}) = {p:.6e}");
            json!({ "chi2": x, "df": df, "p_value": p })
        }
        _ => {
            return Err(Error::InvalidArgument {
                op: "stats",
                msg: "give --b and --c, --table, or --chi2 with --df".into(),
            })
        }
    };
    emit_json(&value, out)
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    config: &Path,
    data: &Path,
    space: Option<&Path>,
    budget: usize,
    seed: u64,
    jobs: usize,
    out: &Out,
) -> Result<()> {
    let base = ModelConfig::load(config)?;
    let space: SearchSpace = match space {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text)?
        }
        None => SearchSpace::default(),
    };
    let records = load_data(data)?;
    let trials = sweep(&base, &space, &records, &SweepOptions { budget, seed, jobs })?;
    for t in &trials {
        eprintln!(
            "trial {:>3}  {:<5} batch {:>2} d_out {:>3} heads {} alpha {:.2}  dev macro-F1 {:.2} (epoch {})",
            t.trial,
            t.config.fusion.as_str(),
            t.config.optim.batch_size,
            t.config.gat.out_dim,
            t.config.gat.heads,
            t.config.alpha_res,
            t.dev_macro_f1,
            t.best_epoch
        );
    }
    let mut buf = Vec::new();
    write_trials(&mut buf, &trials)?;
    emit(&String::from_utf8(buf).expect("csv is UTF-8"), out)
}

fn export_graphs_cmd(data: &Path, config: Option<&Path>, out: &Out) -> Result<()> {
    let cfg = match config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    let model = Model::new(cfg)?;
    let mut text = String::new();
    for r in load_data(data)? {
        let graphs = model.skeletons(&r)?;
        text.push_str(&serde_json::to_string(&json!({"id": r.id, "graphs": graphs}))?);
        text.push('\n');
    }
    emit(&text, out)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Ingest { data, out } => return ingest(&data, &out),
        Command::Train {
            config,
            data,
            out,
            seed,
            exec,
        } => train_cmd(&config, &data, &out, seed, exec.parallelism()),
        Command::Eval {
            pred,
            config,
            checkpoint,
            data,
            split,
            predictions,
            csv,
            exec,
            out,
        } => eval_cmd(
            pred.as_deref(),
            config.as_deref(),
            checkpoint.as_deref(),
            data.as_deref(),
            split,
            predictions.as_deref(),
            csv.as_deref(),
            exec.parallelism(),
            &out,
        ),
        Command::Aggregate {
            pred,
            maps,
            policy,
            csv,
            out,
        } => aggregate_cmd(&pred, &maps, policy, csv.as_deref(), &out),
        Command::Compare { pred_a, pred_b, out } => compare_cmd(&pred_a, &pred_b, &out),
        Command::Stats {
            b,
            c,
            table,
            chi2,
            df,
            out,
        } => stats_cmd(b, c, table.as_deref(), chi2, df, &out),
        Command::Sweep {
            config,
            data,
            space,
            budget,
            seed,
            jobs,
            out,
        } => sweep_cmd(&config, &data, space.as_deref(), budget, seed, jobs, &out),
        Command::ExportGraphs { data, config, out } => export_graphs_cmd(&data, config.as_deref(), &out),
    }?;
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OPFUSE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
