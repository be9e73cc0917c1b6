use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mtsbwp_core::packet::MarkerState;
use mtsbwp_core::profile::{dimension, packet_bucket_sizes, trtcm_profile, validate, Severity};
use mtsbwp_core::Error as CoreError;
use mtsbwp::experiment::{compare_files, run_experiment, ExperimentConfig};
use mtsbwp::formats::{
    marking_label, read_json, read_packets_csv, write_csv, write_json, PacketRow, ProfileFile,
    RequirementsFile, ScenarioFile,
};
use mtsbwp::scenario::{run_scenario, write_scenario_outputs};

#[derive(Parser)]
#[command(name = "mtsbwp", version, about = "Multi-timescale bandwidth profile toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dimension a profile from requirements and validate it.
    Dimension {
        #[arg(long)]
        requirements: PathBuf,
        /// Also write a trTCM baseline with these CIR and EIR (Gbps).
        #[arg(long, num_args = 2, value_names = ["CIR", "EIR"])]
        trtcm: Option<Vec<f64>>,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Run an experiment grid, or a single scripted scenario.
    Run {
        #[arg(long, required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Comma-separated seeds, overriding the config.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Join two single-policy summaries and write A - B deltas.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Mark a packet trace with a profile.
    Mark {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        packets: PathBuf,
        #[arg(long, default_value_t = 1500.0)]
        mtu: f64,
        /// Round-trip time (s) used for the packet-level bucket minimum.
        #[arg(long, default_value_t = 0.0)]
        rtt: f64,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Dimension { requirements, trtcm, out } => cmd_dimension(&requirements, trtcm, &out),
        Command::Run { config, scenario, seeds, horizon, warmup, out } => {
            cmd_run(config.as_deref(), scenario.as_deref(), seeds, horizon, warmup, &out)
        }
        Command::Compare { a, b, out } => {
            let deltas = compare_files(&a, &b, &out)?;
            println!("{} rows written to {}", deltas.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Mark { profile, packets, mtu, rtt, out } => {
            cmd_mark(&profile, &packets, mtu, rtt, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_dimension(path: &Path, trtcm: Option<Vec<f64>>, out: &Path) -> Result<ExitCode> {
    let file: RequirementsFile = read_json(path)?;
    let req = file.to_requirements();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let profile = match dimension(&req) {
        Ok(p) => p,
        Err(e @ (CoreError::Infeasible(_) | CoreError::InvalidRequirements(_))) => {
            eprintln!("error: {e}");
            fs::write(out.join("report.txt"), format!("error: {e}\n"))?;
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    let mut report = String::new();
    let mut failed = false;
    let mut check = |name: &str, p: &mtsbwp_core::profile::ProfileConfig| -> Result<()> {
        let findings = validate(p, req.capacity, req.nodes);
        for f in &findings.findings {
            report.push_str(&format!("{name}: {f}\n"));
            failed |= f.severity == Severity::Error;
        }
        write_json(&out.join(format!("{name}.json")), &ProfileFile::from_profile(p))
    };
    check("profile", &profile)?;
    if let Some(v) = trtcm {
        check("trtcm_profile", &trtcm_profile(v[0], v[1], 0.0, 0.0)?)?;
    }
    if report.is_empty() {
        report.push_str("no findings\n");
    }
    print!("{report}");
    fs::write(out.join("report.txt"), &report)?;
    Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().with_context(|| format!("bad seed {s:?}")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("the seed list is empty");
    }
    Ok(seeds)
}

fn cmd_run(
    config: Option<&Path>,
    scenario: Option<&Path>,
    seeds: Option<String>,
    horizon: Option<f64>,
    warmup: Option<f64>,
    out: &Path,
) -> Result<ExitCode> {
    let mut cfg: Option<ExperimentConfig> = config.map(read_json).transpose()?;
    if let Some(path) = scenario {
        let mut file: ScenarioFile = read_json(path)?;
        if let Some(h) = horizon {
            file.horizon_s = h;
        }
        let trace = run_scenario(&file, cfg.as_ref().map(|c| &c.profile))?;
        write_scenario_outputs(out, &trace)?;
        println!(
            "{} records, {} completed flows, written to {}",
            trace.records.len(),
            trace.completed.len(),
            out.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = cfg.as_mut().expect("clap requires --config without --scenario");
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(&s)?;
    }
    if let Some(h) = horizon {
        cfg.horizon_s = h;
    }
    if let Some(w) = warmup {
        cfg.warmup_s = w;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = run_experiment(cfg, Some(out))?;
    println!(
        "{} cells, {} summary rows, written to {}",
        report.cells.len(),
        report.summary.len(),
        out.display()
    );
    for f in &report.failures {
        eprintln!("cell {} {} seed {} failed: {}", f.setup, f.param, f.seed, f.error);
    }
    Ok(if report.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_mark(profile: &Path, packets: &Path, mtu: f64, rtt: f64, out: &Path) -> Result<()> {
    let p = read_json::<ProfileFile>(profile)?.to_profile()?;
    let bs = packet_bucket_sizes(p.bucket_sizes(), p.rates(), mtu, rtt)?;
    let rows = read_packets_csv(packets)?;
    let start = rows.first().map_or(0.0, |r| r.arrival_time_s);
    let mut marker = MarkerState::new(p.rates().clone(), bs, start)?;
    let mut marked = Vec::with_capacity(rows.len());
    for r in rows {
        let m = marker.mark(r.size_bytes, r.arrival_time_s)?;
        marked.push(PacketRow { dp: Some(marking_label(m)), ..r });
    }
    write_csv(out, &marked)?;
    Ok(())
}
