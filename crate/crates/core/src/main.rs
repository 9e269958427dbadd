use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ecnsim::controller::ControllerConfig;
use ecnsim::experiment::{
    aggregate, read_results_dir, run_experiment_traced, sweep, validate, write_results_csv,
    RunConfig, RunResult, SummaryReport, SweepConfig, Tracer,
};
use ecnsim::scenario::{
    experiment_topology, load_toml, named_topology, traffic_template, SchemeName, SchemeSpec,
    TopologySpec, TrafficSpec,
};
use ecnsim::sim::SimTime;
use ecnsim::switch::PortQueueConfig;
use ecnsim::tcp::Variant;

#[derive(Parser)]
#[command(
    name = "ecnsim",
    version,
    about = "Packet-level congestion control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run(RunArgs),
    /// Run repeated seeds of one or more schemes and summarize them.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Repetitions per scheme.
        #[arg(long, default_value_t = 30)]
        reps: u64,
    },
    /// Re-aggregate the result CSVs stored in a directory.
    Report {
        dir: PathBuf,
        /// Also write summary.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle and invariant self-checks.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulation repetitions per scheme.
        #[arg(long, default_value_t = 2)]
        reps: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Topology name (t1, t2, t3) or TOML file. Defaults to the traffic's.
    #[arg(long)]
    topology: Option<String>,
    /// Traffic name (t1-bulk, t1-mice, ...) or TOML file.
    #[arg(long)]
    traffic: Option<String>,
    /// Scheme names, comma separated. `run` uses the first.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<SchemeName>,
    /// Seed of the first repetition.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Stop as soon as every mice flow has finished.
    #[arg(long)]
    until_mice_done: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-dispatch event log.
    #[arg(long)]
    trace_events: bool,
    /// Write a rule install/expiry log.
    #[arg(long)]
    trace_rules: bool,
    /// TOML file with topology, traffic, schemes, seed and duration_s.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    topology: Option<TopologySpec>,
    traffic: Option<TrafficSpec>,
    #[serde(default)]
    schemes: Vec<SchemeEntry>,
    seed: Option<u64>,
    duration_s: Option<f64>,
}

/// A catalog scheme with optional overrides.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeEntry {
    name: SchemeName,
    queue: Option<PortQueueConfig>,
    controller: Option<ControllerConfig>,
    host_variant: Option<Variant>,
}

impl SchemeEntry {
    fn into_spec(self) -> SchemeSpec {
        let mut spec = SchemeSpec::named(self.name);
        if let Some(q) = self.queue {
            spec.queue = q;
        }
        if let Some(c) = self.controller {
            spec.controller = Some(c);
        }
        if let Some(v) = self.host_variant {
            spec.host_variant = v;
        }
        spec
    }
}

struct Resolved {
    topology: TopologySpec,
    traffic: TrafficSpec,
    schemes: Vec<SchemeSpec>,
    seed: u64,
    duration: Option<SimTime>,
}

fn is_file_arg(s: &str) -> bool {
    s.ends_with(".toml") || Path::new(s).is_file()
}

impl RunArgs {
    fn resolve(&self) -> Result<Resolved> {
        let file: ConfigFile = match &self.config {
            Some(p) => load_toml(p)?,
            None => ConfigFile::default(),
        };
        let traffic = match &self.traffic {
            Some(t) if is_file_arg(t) => load_toml(Path::new(t))?,
            Some(t) => traffic_template(t)?,
            None => file
                .traffic
                .context("no traffic given: use --traffic or a [traffic] section in --config")?,
        };
        let topology = match &self.topology {
            Some(t) if is_file_arg(t) => load_toml(Path::new(t))?,
            Some(t) => named_topology(t)?,
            None => match file.topology {
                Some(t) => t,
                None => experiment_topology(&traffic.name)
                    .context("custom traffic needs --topology or a [topology] section")?,
            },
        };
        let schemes = if !self.scheme.is_empty() {
            self.scheme.iter().map(|&n| SchemeSpec::named(n)).collect()
        } else if !file.schemes.is_empty() {
            file.schemes
                .into_iter()
                .map(SchemeEntry::into_spec)
                .collect()
        } else {
            SchemeName::ALL.into_iter().map(SchemeSpec::named).collect()
        };
        let duration = self.duration.or(file.duration_s);
        if let Some(d) = duration {
            if !(d > 0.0 && d.is_finite()) {
                bail!("--duration must be a positive number of seconds");
            }
        }
        Ok(Resolved {
            topology,
            traffic,
            schemes,
            seed: self.seed.or(file.seed).unwrap_or(1),
            duration: duration.map(SimTime::from_secs_f64),
        })
    }
}

fn trace_file(dir: &Path, prefix: &str, run_id: &str) -> Result<BufWriter<File>> {
    let name = format!("{prefix}-{}.tsv", run_id.replace('/', "_"));
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn run_one(cfg: &RunConfig, args: &RunArgs) -> Result<RunResult> {
    let dir = args.out.as_deref().unwrap_or(Path::new("."));
    let mut events = if args.trace_events {
        Some(trace_file(dir, "events", &cfg.run_id())?)
    } else {
        None
    };
    let mut rules = if args.trace_rules {
        Some(trace_file(dir, "rules", &cfg.run_id())?)
    } else {
        None
    };
    let tracer = Tracer {
        events: events.as_mut().map(|w| w as &mut dyn Write),
        rules: rules.as_mut().map(|w| w as &mut dyn Write),
    };
    let result = run_experiment_traced(cfg, tracer)?;
    for w in [events.as_mut(), rules.as_mut()].into_iter().flatten() {
        w.flush()?;
    }
    Ok(result)
}

fn write_outputs(dir: &Path, results: &[RunResult], summary: &SummaryReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(File::create(dir.join("results.csv"))?, results)?;
    fs::write(dir.join("summary.json"), summary.to_json())?;
    Ok(())
}

fn print_summary(summary: &SummaryReport) {
    println!(
        "{:<10} {:<15} {:>5} {:>12} {:>12} {:>11} {:>7}",
        "traffic", "scheme", "reps", "fct_mean_s", "fct_var", "bulk_mbps", "jain"
    );
    let opt = |x: Option<f64>, p: usize| x.map_or("-".to_string(), |v| format!("{v:.p$}"));
    for g in &summary.groups {
        println!(
            "{:<10} {:<15} {:>5} {:>12} {:>12} {:>11.2} {:>7}",
            g.traffic,
            g.scheme.as_str(),
            g.reps,
            opt(g.mice_fct_mean_s, 4),
            opt(g.mice_fct_variance, 6),
            g.total_bulk_mbps,
            opt(g.jain, 4)
        );
    }
}

fn invariant_failures(results: &[RunResult]) -> Vec<String> {
    results
        .iter()
        .filter(|r| !r.invariants.holds())
        .map(|r| format!("{}: {:?}", r.run_id, r.invariants))
        .collect()
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let r = args.resolve()?;
            let cfg = RunConfig {
                topology: r.topology,
                traffic: r.traffic,
                scheme: r.schemes[0].clone(),
                seed: r.seed,
                duration: r.duration,
                stop_when_mice_done: args.until_mice_done,
            };
            if let Some(dir) = &args.out {
                fs::create_dir_all(dir)?;
            }
            let result = run_one(&cfg, &args)?;
            let results = [result];
            match &args.out {
                Some(dir) => {
                    write_outputs(dir, &results, &aggregate(&results))?;
                    fs::write(
                        dir.join("result.json"),
                        serde_json::to_string_pretty(&results[0])? + "\n",
                    )?;
                }
                None => write_results_csv(io::stdout().lock(), &results)?,
            }
            let bad = invariant_failures(&results);
            if !bad.is_empty() {
                eprintln!("invariant violation: {}", bad.join("\n"));
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { run: args, reps } => {
            let r = args.resolve()?;
            if reps == 0 {
                bail!("--reps must be at least 1");
            }
            let cfg = SweepConfig {
                topology: r.topology,
                traffic: r.traffic,
                schemes: r.schemes,
                first_seed: r.seed,
                reps,
                duration: r.duration,
                stop_when_mice_done: args.until_mice_done,
            };
            let results = if args.trace_events || args.trace_rules {
                if let Some(dir) = &args.out {
                    fs::create_dir_all(dir)?;
                }
                cfg.run_configs()
                    .iter()
                    .map(|c| run_one(c, &args))
                    .collect::<Result<Vec<_>>>()?
            } else {
                sweep(&cfg)?
            };
            let summary = aggregate(&results);
            if let Some(dir) = &args.out {
                write_outputs(dir, &results, &summary)?;
            }
            print_summary(&summary);
            let bad = invariant_failures(&results);
            if !bad.is_empty() {
                eprintln!("invariant violation: {}", bad.join("\n"));
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { dir, out } => {
            let results = read_results_dir(&dir)?;
            let summary = aggregate(&results);
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("summary.json"), summary.to_json())?;
            }
            print!("{}", summary.to_json());
        }
        Command::Validate { seed, reps } => {
            let checks = validate::run_all(seed, reps);
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
