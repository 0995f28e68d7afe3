//! Command-line front end. Exit codes: 0 ok, 2 config or usage error, 3 runtime
//! error, 4 acceptance failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::chaindag::ForkRule;
use crate::config::{SeedSpec, SimConfig};
use crate::entropy::{bounds_row, tie_probability, FieldSpec, ThresholdSpec};
use crate::experiments::{self, SUITE_SEEDS};
use crate::netsim::{self, aggregate, write_csv, MetricsRecord, RunOutput};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(name = "poem-lab", version, about = "Deterministic lab for entropy-minima fork choice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Overtake bounds for a threshold pair.
    Bounds {
        #[arg(long = "m-t", default_value_t = 20)]
        m_t: u32,
        #[arg(long = "m-d", default_value_t = 5)]
        m_d: u32,
        /// Surplus bits carried by the dominant block.
        #[arg(long, default_value_t = 0)]
        extra_bits: u32,
        #[arg(long, default_value_t = 256)]
        field_bits: u32,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Simulate a configuration for one or more seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive range `A..B`.
        #[arg(long)]
        seeds: Option<SeedSpec>,
        /// Put every node on this rule.
        #[arg(long, value_parser = parse_rule)]
        rule: Option<ForkRule>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Reproduce the worked examples and check them.
    #[command(name = "paper-suite")]
    Suite {
        #[arg(long)]
        seeds: Option<SeedSpec>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Monte Carlo rate of identical hashes between two valid blocks.
    TieRate {
        #[arg(long, default_value_t = 12)]
        field_bits: u32,
        #[arg(long = "m-t", default_value_t = 4)]
        m_t: u32,
        #[arg(long, default_value_t = 1_000_000)]
        pairs: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn parse_rule(s: &str) -> Result<ForkRule, String> {
    s.parse().map_err(|e: <ForkRule as std::str::FromStr>::Err| e.to_string())
}

/// A failure carrying its exit code.
struct Failure(u8, String);

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_CONFIG, e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_RUNTIME, e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Bounds { m_t, m_d, extra_bits, field_bits, format } => cmd_bounds(m_t, m_d, extra_bits, field_bits, format, out),
        Command::Run { config, seed, seeds, rule, out: dir, workers, format } => {
            let seeds = seed.map(SeedSpec::Single).or(seeds);
            cmd_run(&config, seeds, rule, dir, workers, format, out)
        }
        Command::Suite { seeds, workers, format } => cmd_suite(seeds, workers, format, out),
        Command::TieRate { field_bits, m_t, pairs, seed, format } => cmd_tie_rate(field_bits, m_t, pairs, seed, format, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn cmd_bounds(m_t: u32, m_d: u32, extra: u32, l: u32, format: Option<Format>, out: &mut dyn Write) -> Result<u8, Failure> {
    let field = FieldSpec::new(l).map_err(config_err)?;
    let t = ThresholdSpec::new(m_t, m_d, field).map_err(config_err)?;
    let row = bounds_row(t, extra, field).map_err(config_err)?;
    match format {
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(out);
            w.serialize(&row).map_err(runtime_err)?;
            w.flush().map_err(runtime_err)?;
        }
        Some(Format::Jsonl) => writeln!(out, "{}", serde_json::to_string(&row).map_err(runtime_err)?).map_err(runtime_err)?,
        None => {
            let tie = tie_probability(field, m_t).map_err(config_err)?;
            let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(runtime_err);
            w(out, format!("l = {l}, m_t = {m_t}, m_d = {m_d}, extra bits = {extra}"))?;
            w(out, format!("{:<22}{:>24}{:>24}", "rule", "bound (k >)", "min blocks"))?;
            w(out, format!("{:<22}{:>24}{:>24}", "difficulty", row.difficulty_bound, row.difficulty_min_blocks))?;
            w(out, format!("{:<22}{:>24}{:>24}", "entropy", row.entropy_bound, row.entropy_min_blocks))?;
            w(out, format!("{:<22}{:>24}{:>24}", "difficulty + extra", row.difficulty_bound_extra, row.difficulty_min_blocks_extra))?;
            w(out, format!("{:<22}{:>24}{:>24}", "entropy + extra", row.entropy_bound_extra, row.entropy_min_blocks_extra))?;
            w(out, format!("same-hash probability of two valid blocks: 2^-{} = {tie:e}", l - m_t))?;
        }
    }
    Ok(EXIT_OK)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(config_err("--workers must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(runtime_err)
}

/// File name of one run's trace.
pub fn trace_file_name(m: &MetricsRecord) -> String {
    format!("trace-{}.jsonl", m.run_id)
}

fn cmd_run(
    path: &Path,
    seeds: Option<SeedSpec>,
    rule: Option<ForkRule>,
    dir: Option<PathBuf>,
    workers: Option<usize>,
    format: Format,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let mut cfg = SimConfig::load(path).map_err(config_err)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(r) = rule {
        cfg.set_rule(r);
        cfg.validate().map_err(config_err)?;
    }
    let dir = dir.or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let seeds = cfg.seeds.seeds();
    let runs: Vec<RunOutput> =
        pool(workers)?.install(|| seeds.par_iter().map(|&s| netsim::run(&cfg, s)).collect::<Result<_, _>>()).map_err(runtime_err)?;

    // Single collector: files are written in seed order after every run finishes.
    fs::create_dir_all(&dir).map_err(runtime_err)?;
    for r in &runs {
        let file = File::create(dir.join(trace_file_name(&r.metrics))).map_err(runtime_err)?;
        let mut w = BufWriter::new(file);
        r.trace.write_jsonl(&mut w).map_err(runtime_err)?;
        w.flush().map_err(runtime_err)?;
    }
    let rows: Vec<MetricsRecord> = runs.into_iter().map(|r| r.metrics).collect();
    let name = match format {
        Format::Csv => "metrics.csv",
        Format::Jsonl => "metrics.jsonl",
    };
    let mut w = BufWriter::new(File::create(dir.join(name)).map_err(runtime_err)?);
    match format {
        Format::Csv => write_csv(&rows, &mut w).map_err(runtime_err)?,
        Format::Jsonl => {
            for r in rows.iter().chain(aggregate(&rows).as_ref()) {
                writeln!(w, "{}", serde_json::to_string(r).map_err(runtime_err)?).map_err(runtime_err)?;
            }
        }
    }
    w.flush().map_err(runtime_err)?;
    writeln!(out, "{} runs, traces and {name} in {}", rows.len(), dir.display()).map_err(runtime_err)?;
    Ok(EXIT_OK)
}

fn cmd_suite(seeds: Option<SeedSpec>, workers: Option<usize>, format: Option<Format>, out: &mut dyn Write) -> Result<u8, Failure> {
    let seeds = seeds.unwrap_or(SeedSpec::Range { start: 1, end: SUITE_SEEDS }).seeds();
    let criteria = pool(workers)?.install(|| experiments::suite(&seeds)).map_err(runtime_err)?;
    for c in &criteria {
        match format {
            Some(Format::Jsonl) => writeln!(out, "{}", serde_json::to_string(c).map_err(runtime_err)?),
            Some(Format::Csv) => writeln!(out, "{},{},\"{}\"", c.name, if c.passed { "pass" } else { "fail" }, c.detail.replace('"', "'")),
            None => writeln!(out, "{:<4}  {:<26}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail),
        }
        .map_err(runtime_err)?;
    }
    let failed: Vec<&str> = criteria.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(Failure(EXIT_ACCEPTANCE, format!("failed criteria: {}", failed.join(", "))))
    }
}

fn cmd_tie_rate(l: u32, m_t: u32, pairs: u64, seed: u64, format: Option<Format>, out: &mut dyn Write) -> Result<u8, Failure> {
    let field = FieldSpec::new(l).map_err(config_err)?;
    if pairs == 0 {
        return Err(config_err("--pairs must be at least 1"));
    }
    let r = experiments::tie_rate(field, m_t, pairs, seed).map_err(config_err)?;
    match format {
        Some(Format::Jsonl) => writeln!(out, "{}", serde_json::to_string(&r).map_err(runtime_err)?),
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.serialize(&r).map_err(runtime_err)?;
            w.flush()
        }
        None => writeln!(
            out,
            "l = {l}, m_t = {m_t}: {} identical hashes in {} pairs = {:.6}\nexpected 2^-{} = {:.6} (sigma {:.6}, z = {:.2})\nwhole-field figure 2^-{l} = {:e}",
            r.ties,
            r.pairs,
            r.empirical,
            l - m_t,
            r.expected,
            r.sigma,
            r.z,
            r.field_figure
        ),
    }
    .map_err(runtime_err)?;
    Ok(EXIT_OK)
}
