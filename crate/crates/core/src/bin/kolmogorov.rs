//! `kolmogorov` command-line tool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use kolmogorov::bench::{bench_dim, BenchRow};
use kolmogorov::data::{evaluate, grid_search, load_ratings_file, predict_or_default, residual_summaries, split};
use kolmogorov::rules::mine_rules;
use kolmogorov::train::{train, TrainOutcome};
use kolmogorov::{KmError, KolmogorovModel, ObservationSet, Q2Mode, Result, RunConfig};

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set fw.max_iters=1000`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads for the per-item/per-user fan-out (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,
    /// Number of elementary events D.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Base seed for initialization, rounding and restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Block-coordinate steps per run.
    #[arg(long, global = true)]
    bcd_iters: Option<usize>,
    /// Independently seeded runs; the lowest final objective is kept.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Weight of the squared-norm penalty on each PMF.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Weight of the support-size penalty on each indicator.
    #[arg(long, global = true)]
    mu: Option<f64>,
    /// Indicator solver: `sdr` or `exhaustive`.
    #[arg(long, global = true)]
    q2_mode: Option<Q2Mode>,
    /// Top of the rating scale; ratings map to rating / r_max.
    #[arg(long, global = true)]
    r_max: Option<u32>,
    /// Influence-score threshold for listing rules.
    #[arg(long, global = true)]
    min_beta: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.set.clone();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        push("train.dim", self.dim.map(|v| v.to_string()));
        push("train.seed", self.seed.map(|v| v.to_string()));
        push("train.bcd_iters", self.bcd_iters.map(|v| v.to_string()));
        push("train.restarts", self.restarts.map(|v| v.to_string()));
        push("train.lambda", self.lambda.map(float));
        push("train.mu", self.mu.map(float));
        push("train.q2_mode", self.q2_mode.map(|v| format!("\"{v}\"")));
        push("eval.r_max", self.r_max.map(|v| v.to_string()));
        push("rules.min_beta", self.min_beta.map(float));
        out
    }

    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

/// TOML float literal.
fn float(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a ratings file.
    Train(TrainArgs),
    /// Score a model on a ratings file.
    Evaluate(EvaluateArgs),
    /// Predict like/dislike probabilities for (user, item) pairs.
    Predict(PredictArgs),
    /// Mine association rules from a model.
    Rules(RulesArgs),
    /// SDR-versus-exhaustive mismatch rates on synthetic data.
    BenchSdr(BenchArgs),
    /// Pick (lambda, mu) on a held-out validation set.
    GridSearch(GridArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Ratings file (`user item rating [timestamp]`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Hold out the seeded test share of the input and write it here.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// JSON report with per-user and per-item residual summaries.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, requires = "item")]
    user: Option<u64>,
    #[arg(long, requires = "user")]
    item: Option<u64>,
    /// File of `user item` lines; `-` reads stdin.
    #[arg(long, conflicts_with = "user")]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct RulesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "rules.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated dimensions; defaults to `bench.dims`.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, default_value = "bench_sdr.csv")]
    out: PathBuf,
    /// Compare the exhaustive solver with itself (sanity check).
    #[arg(long)]
    self_check: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    mus: Vec<f64>,
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
    /// Grid-search on the training share of the seeded split only.
    #[arg(long)]
    split: bool,
}

#[derive(Parser)]
#[command(name = "kolmogorov", version, about = "Kolmogorov models for binary preference data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_model(path: &Path) -> Result<KolmogorovModel> {
    KolmogorovModel::read_json(File::open(path)?)
}

fn write_observations(obs: &ObservationSet, r_max: u32, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for r in obs.records() {
        writeln!(w, "{}\t{}\t{}", r.user, r.item, (r.p * f64::from(r_max)).round() as i64)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let all = load_ratings_file(&args.input, cfg.eval.r_max)?;
    let digest = sha256_file(&args.input)?;
    let (obs, held_out) = match &args.test_out {
        Some(path) => {
            let (tr, te) = split(&all, cfg.eval.split_fraction, cfg.eval.split_seed)?;
            write_observations(&te, cfg.eval.r_max, path)?;
            (tr, Some(te))
        }
        None => (all, None),
    };
    let tc = cfg.train_config();
    let TrainOutcome {
        model,
        trace,
        runs,
        best,
    } = train(&obs, &tc)?;
    model.write_json(create(&args.model)?)?;
    trace.write_csv(create(&args.trace)?)?;
    let test = held_out.as_ref().map(|te| evaluate(&model, te)).transpose()?;
    write_json(
        &args.report,
        &json!({
            "command": "train",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "input": { "path": args.input, "sha256": digest, "records": obs.len() },
            "seeds": { "base": tc.seed, "restarts": runs.iter().map(|r| r.seed).collect::<Vec<_>>(), "best": runs[best].seed },
            "runs": runs,
            "best_restart": best,
            "final_objective": trace.final_objective(),
            "final_rmse": trace.final_rmse,
            "final_max_fw_gap": trace.max_fw_gap_per_iter.last(),
            "psi_rejected_per_iter": trace.psi_rejected_per_iter,
            "test": test,
        }),
    )?;
    println!(
        "trained D={} on {} records: objective {:.6e}, rmse {:.6}",
        tc.dim,
        obs.len(),
        trace.final_objective(),
        trace.final_rmse
    );
    if let Some(e) = test {
        println!("held-out nrmse {:.6} ({} cold-start records)", e.nrmse, e.cold_records);
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let obs = load_ratings_file(&args.input, cfg.eval.r_max)?;
    let e = evaluate(&model, &obs)?;
    println!("records {}  nrmse {:.6}", e.n, e.nrmse);
    println!(
        "cold start: {} records, {} users, {} items",
        e.cold_records, e.cold_users, e.cold_items
    );
    if let Some(path) = &args.report {
        write_json(
            path,
            &json!({
                "command": "evaluate",
                "config": cfg,
                "input": { "path": args.input, "sha256": sha256_file(&args.input)? },
                "model": { "path": args.model, "sha256": sha256_file(&args.model)? },
                "evaluation": e,
                "per_user": residual_summaries(&model, &obs, true),
                "per_item": residual_summaries(&model, &obs, false),
            }),
        )?;
    }
    Ok(())
}

fn parse_pairs(text: &str) -> Result<Vec<(u64, u64)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<u64>().map_err(|_| KmError::Parse {
                line: k + 1,
                message: format!("invalid id {s:?}"),
            })
        };
        if ids.len() < 2 {
            return Err(KmError::Parse {
                line: k + 1,
                message: "expected `user item`".into(),
            });
        }
        out.push((parse(ids[0])?, parse(ids[1])?));
    }
    Ok(out)
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let pairs = match (&args.pairs, args.user, args.item) {
        (Some(p), _, _) if p.as_os_str() == "-" => parse_pairs(&std::io::read_to_string(std::io::stdin())?)?,
        (Some(p), _, _) => parse_pairs(&std::fs::read_to_string(p)?)?,
        (None, Some(u), Some(i)) => vec![(u, i)],
        _ => return Err(KmError::InvalidConfig("give --user and --item, or --pairs".into())),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "user\titem\tlikes\tdislikes\tcold_start")?;
    for (u, i) in pairs {
        let (p, cold) = predict_or_default(&model, u, i);
        writeln!(out, "{u}\t{i}\t{p:.6}\t{:.6}\t{}", 1.0 - p, u8::from(cold))?;
    }
    Ok(())
}

fn cmd_rules(cfg: &RunConfig, args: &RulesArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let report = mine_rules(&model, cfg.rules.min_beta)?;
    report.write_json(create(&args.out)?)?;
    println!("items with beta >= {}:", cfg.rules.min_beta);
    for (item, beta) in report.beta.iter().filter(|(_, &b)| b >= cfg.rules.min_beta) {
        println!("  {item}\t{beta:.4}");
    }
    println!("maximal set: {:?}", report.maximal_set);
    for r in &report.rules {
        let verb = match r.direction {
            kolmogorov::rules::Direction::Likes => "likes",
            kolmogorov::rules::Direction::Dislikes => "dislikes",
        };
        println!("  {verb} {} => {verb} {}", r.antecedent, r.consequent);
    }
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, args: &BenchArgs) -> Result<()> {
    let dims = if args.dims.is_empty() { cfg.bench.dims.clone() } else { args.dims.clone() };
    let mode = if args.self_check { Q2Mode::Exhaustive } else { Q2Mode::Sdr };
    let mut rows: Vec<BenchRow> = Vec::new();
    for dim in dims {
        let base = kolmogorov::TrainConfig {
            dim,
            ..cfg.train_config()
        };
        let row = bench_dim(&base, &cfg.bench_config(), mode)?;
        println!(
            "D={:>2}  instances {:>6}  mismatches {:>4}  rate {:.3e}",
            row.dim, row.instances, row.mismatches, row.rate
        );
        rows.push(row);
    }
    kolmogorov::bench::write_csv(&rows, create(&args.out)?)
}

fn cmd_grid(cfg: &RunConfig, args: &GridArgs) -> Result<()> {
    let all = load_ratings_file(&args.input, cfg.eval.r_max)?;
    let obs = if args.split {
        split(&all, cfg.eval.split_fraction, cfg.eval.split_seed)?.0
    } else {
        all
    };
    let lambdas = if args.lambdas.is_empty() { &cfg.grid.lambdas } else { &args.lambdas };
    let mus = if args.mus.is_empty() { &cfg.grid.mus } else { &args.mus };
    let result = grid_search(&obs, lambdas, mus, &cfg.train_config(), &cfg.eval)?;
    result.write_csv(create(&args.out)?)?;
    for row in &result.table {
        println!(
            "lambda {:<8} mu {:<8} validation nrmse {:.6}",
            row.lambda, row.mu, row.validation_nrmse
        );
    }
    println!(
        "best: lambda {} mu {} (nrmse {:.6})",
        result.best_lambda, result.best_mu, result.best_nrmse
    );
    Ok(())
}

fn run(common: &Common, command: &Command) -> Result<()> {
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| KmError::InvalidConfig(e.to_string()))?;
    }
    let cfg = common.load()?;
    match command {
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Rules(a) => cmd_rules(&cfg, a),
        Command::BenchSdr(a) => cmd_bench(&cfg, a),
        Command::GridSearch(a) => cmd_grid(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
