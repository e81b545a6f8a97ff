use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prefetchlab_core::address::ReferenceStrategy;
use prefetchlab_core::config::{ExperimentConfig, SEED_ENV};
use prefetchlab_core::pipeline::{build_policy, delta_report, load_artifacts, save_artifacts, train_pipeline};
use prefetchlab_core::prefetcher::PolicyKind;
use prefetchlab_core::simulator::{run_paired, write_query_csv, write_runs_csv, RunMetrics};
use prefetchlab_core::trace::{generate, load_trace, save_trace};

mod compare;

#[derive(Parser)]
#[command(name = "prefetchlab", version, about = "Block prefetching experiments on synthetic database traces")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv, global = true)]
    set: Vec<(String, String)>,
    /// Master seed. Falls back to the config file, then PREFETCHLAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the effective configuration here.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        queries: Option<usize>,
        /// Scale factor applied to table sizes.
        #[arg(long)]
        sf: Option<f64>,
        #[arg(long)]
        tables: Option<usize>,
    },
    /// Train encoders, vocabulary and network on a trace.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// Artifact directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace under a policy next to the no-prefetch baseline.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// Artifact directory from `train`; needed for grasp.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        budget_units: Option<String>,
        /// Run metrics CSV (baseline row, then policy row).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
        /// Per-query CSV for the policy run.
        #[arg(long)]
        per_query: Option<PathBuf>,
        /// Hit ratio per batch of queries, for both runs.
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
    /// Align metric CSVs into one table and a long-format plot file.
    Compare {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delta distributions under consecutive and table-based labeling.
    DeltaReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// One row per delta.
        #[arg(long)]
        out: PathBuf,
        /// Occurrence count per (labeling, offset).
        #[arg(long)]
        freq: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<String>,
    },
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_config(common: &Common, flags: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    for (k, v) in flags {
        if let Some(v) = v {
            overrides.push((k.to_string(), v.clone()));
        }
    }
    overrides.extend(common.set.iter().cloned());
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides, env_seed.as_deref())?;
    if let Some(p) = &common.dump_config {
        std::fs::write(p, cfg.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn read_trace(path: &Path) -> Result<prefetchlab_core::trace::Workload> {
    load_trace(path).with_context(|| format!("reading trace {}", path.display()))
}

fn cmd_gen(common: &Common, out: &Path, queries: Option<usize>, sf: Option<f64>, tables: Option<usize>) -> Result<()> {
    let cfg = load_config(
        common,
        &[
            ("gen.queries", queries.map(|v| v.to_string())),
            ("gen.sf", sf.map(|v| v.to_string())),
            ("gen.tables", tables.map(|v| v.to_string())),
        ],
    )?;
    let w = generate(&cfg.gen)?;
    save_trace(&w, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} queries over {} tables to {}", w.queries.len(), w.catalog.table_count(), out.display());
    Ok(())
}

fn cmd_train(common: &Common, trace: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(common, &[])?;
    let w = read_trace(trace)?;
    let (parts, report) = train_pipeline(&w, &cfg)?;
    save_artifacts(out, &parts, &w.final_catalog())
        .with_context(|| format!("writing artifacts to {}", out.display()))?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;

    let mut hist = csv::Writer::from_writer(create(&out.join("history.csv"))?);
    hist.write_record(["epoch", "train_total", "train_deltas", "train_tables", "train_count", "val_total"])?;
    for (i, e) in report.training.epochs.iter().enumerate() {
        hist.write_record([
            (i + 1).to_string(),
            e.train.total().to_string(),
            e.train.deltas.to_string(),
            e.train.tables.to_string(),
            e.train.count.to_string(),
            e.val.total().to_string(),
        ])?;
    }
    hist.flush()?;

    println!(
        "trained on {} samples: {} unique deltas, {} classes, {} weights, best epoch {}, checkpoint crc {}",
        report.samples,
        report.unique_deltas,
        report.classes,
        report.param_count,
        report.training.best_epoch,
        report.checkpoint_crc
    );
    for (name, counts) in [("table-based", &report.labeling.table_based), ("consecutive", &report.labeling.consecutive)]
    {
        let cells: Vec<String> = counts.iter().map(|(s, n)| format!("{s}={n}")).collect();
        println!("unique deltas, {name}: {}", cells.join(" "));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &Common,
    trace: &Path,
    artifacts: Option<&Path>,
    policy: Option<String>,
    k: Option<usize>,
    budget_units: Option<String>,
    out: &Path,
    run_id: Option<String>,
    per_query: Option<&Path>,
    series: Option<&Path>,
    batch: usize,
) -> Result<()> {
    if batch == 0 {
        bail!("--batch must be positive");
    }
    let cfg = load_config(
        common,
        &[
            ("prefetch.policy", policy),
            ("prefetch.k", k.map(|v| v.to_string())),
            ("prefetch.budget_units", budget_units),
        ],
    )?;
    let w = read_trace(trace)?;
    let kind: PolicyKind = cfg.prefetch.policy;
    let parts = match (kind, artifacts) {
        (PolicyKind::Grasp, None) => bail!("policy grasp needs --artifacts"),
        (PolicyKind::Grasp, Some(dir)) => Some(
            load_artifacts(dir, &w.final_catalog())
                .with_context(|| format!("loading artifacts from {}", dir.display()))?,
        ),
        _ => None,
    };
    let mut p = build_policy(kind, &cfg, parts, &w.catalog)?;
    let (np, m) = run_paired(&w.queries, &w.catalog, p.as_mut(), &cfg.sim)?;

    let hash = cfg.hash();
    let run_id = run_id.unwrap_or_else(|| format!("{}-{}", kind.as_str(), &hash[..8]));
    let mut np_row = np.row(&run_id, &hash);
    np_row.misses_np = Some(np.misses);
    np_row.io_time_np_ms = Some(np.io_time_ms);
    np_row.miss_coverage = Some(0.0);
    np_row.relative_io = (np.io_time_ms > 0.0).then_some(1.0);
    let rows = if kind == PolicyKind::Np { vec![np_row] } else { vec![np_row, m.row(&run_id, &hash)] };
    write_runs_csv(&rows, create(out)?)?;
    if let Some(path) = per_query {
        write_query_csv(&m, create(path)?)?;
    }
    if let Some(path) = series {
        write_series(&[&np, &m][..if kind == PolicyKind::Np { 1 } else { 2 }], batch, path)?;
    }

    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let last = rows.last().expect("at least one row");
    println!(
        "{}: hit ratio {}, recall {}, miss coverage {}, relative io {}, p95 latency {} ms",
        last.policy,
        show(last.hit_ratio),
        show(last.recall),
        show(last.miss_coverage),
        show(last.relative_io),
        show(last.p95_latency_ms)
    );
    Ok(())
}

fn write_series(runs: &[&RunMetrics], batch: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["policy", "batch", "first_query", "hit_ratio"])?;
    for m in runs {
        for (b, chunk) in m.per_query.chunks(batch).enumerate() {
            let (h, a) = chunk.iter().fold((0, 0), |(h, a), q| (h + q.hits, a + q.accessed()));
            let ratio = if a == 0 { String::new() } else { (h as f64 / a as f64).to_string() };
            w.write_record([m.policy.clone(), b.to_string(), chunk[0].query_id.to_string(), ratio])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_delta_report(
    common: &Common,
    trace: &Path,
    out: &Path,
    freq: Option<&Path>,
    strategy: Option<String>,
) -> Result<()> {
    let cfg = load_config(common, &[("prefetch.reference", strategy)])?;
    let w = read_trace(trace)?;
    let strategy: ReferenceStrategy = cfg.grasp.reference;
    let report = delta_report(&w, strategy);
    let mut rows = csv::Writer::from_writer(create(out)?);
    for r in &report.rows {
        rows.serialize(r)?;
    }
    rows.flush()?;
    if let Some(path) = freq {
        let mut f = csv::Writer::from_writer(create(path)?);
        f.write_record(["labeling", "offset", "count"])?;
        for ((labeling, offset), n) in &report.frequency {
            f.write_record([labeling.clone(), offset.to_string(), n.to_string()])?;
        }
        f.flush()?;
    }
    println!("{}", serde_json::to_string_pretty(&report.labeling)?);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common, out, queries, sf, tables } => cmd_gen(&common, &out, queries, sf, tables),
        Command::Train { common, trace, out } => cmd_train(&common, &trace, &out),
        Command::Simulate {
            common,
            trace,
            artifacts,
            policy,
            k,
            budget_units,
            out,
            run_id,
            per_query,
            series,
            batch,
        } => cmd_simulate(
            &common,
            &trace,
            artifacts.as_deref(),
            policy,
            k,
            budget_units,
            &out,
            run_id,
            per_query.as_deref(),
            series.as_deref(),
            batch,
        ),
        Command::Compare { inputs, out } => compare::run(&inputs, out.as_deref()),
        Command::DeltaReport { common, trace, out, freq, strategy } => {
            cmd_delta_report(&common, &trace, &out, freq.as_deref(), strategy)
        }
    }
}

/// Bad keys or values in the configuration count as usage errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<prefetchlab_core::Error>() {
        Some(prefetchlab_core::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
