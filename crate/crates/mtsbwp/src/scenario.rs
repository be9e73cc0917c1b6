//! Single scripted fluid runs.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, ensure, Context, Result};
use mtsbwp_core::fluid::{run, FluidConfig, Scenario, SimTrace};
use mtsbwp_core::profile::ProfileConfig;

use crate::formats::{
    write_flows_csv, write_json, write_trace_csv, ProfileSource, ScenarioFile, TraceSummary,
};

/// Runs `file`, taking the profile from `fallback` when the scenario does
/// not name one.
pub fn run_scenario(file: &ScenarioFile, fallback: Option<&ProfileSource>) -> Result<SimTrace> {
    let source = file
        .profile
        .as_ref()
        .or(fallback)
        .ok_or_else(|| anyhow!("the scenario names no profile and no config was given"))?;
    let profile: ProfileConfig = source.resolve()?;
    ensure!(file.horizon_s > 0.0, "horizon must be positive");
    let config = FluidConfig {
        capacity: file.capacity,
        nodes: file.nodes,
        max_flows: file.f_max,
        profile: profile.clone(),
    };
    let scenario = Scenario {
        start: 0.0,
        tokens: file.tokens(&profile)?,
        persistent_flows: file.persistent_flows.clone(),
        arrivals: file.arrivals()?,
    };
    Ok(run(config, scenario, file.horizon_s)?)
}

/// Writes `trace.csv`, `flows.csv` and `trace_summary.json` into `dir`.
pub fn write_scenario_outputs(dir: &Path, trace: &SimTrace) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_trace_csv(&dir.join("trace.csv"), trace)?;
    write_flows_csv(&dir.join("flows.csv"), trace)?;
    write_json(&dir.join("trace_summary.json"), &TraceSummary::from_trace(trace))
}
