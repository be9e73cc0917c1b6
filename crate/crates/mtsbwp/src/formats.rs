//! JSON and CSV file formats.
//!
//! Node and drop precedence numbers are 1-based in every file. Rates are in
//! Gbps, volumes in Gbit and times in seconds, except requirement file sizes
//! which are given in GByte.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mtsbwp_core::fluid::{SimTrace, TokenState};
use mtsbwp_core::packet::Marking;
use mtsbwp_core::profile::{dimension, FreeRateFill, ProfileConfig, Requirements};
use mtsbwp_core::traffic::Arrival;
use mtsbwp_core::{Matrix, GBIT_PER_GBYTE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub n_dp: usize,
    pub n_ts: usize,
    pub r: Vec<Vec<f64>>,
    pub bs: Vec<Vec<f64>>,
    pub ts: Vec<f64>,
}

impl ProfileFile {
    pub fn from_profile(p: &ProfileConfig) -> Self {
        Self {
            n_dp: p.n_dp(),
            n_ts: p.n_ts(),
            r: p.rates().to_rows(),
            bs: p.bucket_sizes().to_rows(),
            ts: p.timescales().to_vec(),
        }
    }

    pub fn to_profile(&self) -> Result<ProfileConfig> {
        let r = Matrix::from_rows(&self.r)?;
        ensure!(
            r.shape() == (self.n_dp, self.n_ts),
            "profile declares {}x{} but r is {}x{}",
            self.n_dp,
            self.n_ts,
            r.rows(),
            r.cols()
        );
        Ok(ProfileConfig::new(r, Matrix::from_rows(&self.bs)?, self.ts.clone())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeRateFillFile {
    Capacity,
    #[default]
    CapacityThenReturnRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementsFile {
    pub capacity: f64,
    pub nodes: usize,
    pub guaranteed: Vec<f64>,
    pub download: Vec<f64>,
    pub file_sizes_gbyte: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longest_timescale_s: Option<f64>,
    #[serde(default)]
    pub free_rate_fill: FreeRateFillFile,
}

impl RequirementsFile {
    pub fn to_requirements(&self) -> Requirements {
        Requirements {
            capacity: self.capacity,
            nodes: self.nodes,
            guaranteed: self.guaranteed.clone(),
            download: self.download.clone(),
            file_sizes: self
                .file_sizes_gbyte
                .iter()
                .map(|gb| gb * GBIT_PER_GBYTE)
                .collect(),
            longest_timescale: self.longest_timescale_s,
            free_rate_fill: match self.free_rate_fill {
                FreeRateFillFile::Capacity => FreeRateFill::Capacity,
                FreeRateFillFile::CapacityThenReturnRate => FreeRateFill::CapacityThenReturnRate,
            },
        }
    }
}

/// A profile given either directly or as requirements to dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Requirements(RequirementsFile),
    Profile(ProfileFile),
    Trtcm { cir: f64, eir: f64 },
}

impl ProfileSource {
    pub fn resolve(&self) -> Result<ProfileConfig> {
        match self {
            ProfileSource::Requirements(r) => Ok(dimension(&r.to_requirements())?),
            ProfileSource::Profile(p) => p.to_profile(),
            ProfileSource::Trtcm { cir, eir } => {
                Ok(mtsbwp_core::profile::trtcm_profile(*cir, *eir, 0.0, 0.0)?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRow {
    pub node: usize,
    pub time_s: f64,
    pub size_gbit: f64,
}

impl ArrivalRow {
    pub fn from_arrival(a: &Arrival) -> Self {
        Self {
            node: a.node + 1,
            time_s: a.time,
            size_gbit: a.size,
        }
    }

    pub fn to_arrival(self) -> Result<Arrival> {
        ensure!(self.node >= 1, "node numbers start at 1");
        Ok(Arrival {
            node: self.node - 1,
            time: self.time_s,
            size: self.size_gbit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialTokens {
    /// 1-based nodes whose lower precedences start with empty longest-timescale buckets.
    BadHistory(Vec<usize>),
    /// `levels[node][dp][ts]` in Gbit.
    Levels(Vec<Vec<Vec<f64>>>),
}

/// A single fluid run with scripted initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Falls back to the experiment config's profile when absent.
    #[serde(default)]
    pub profile: Option<ProfileSource>,
    pub capacity: f64,
    pub nodes: usize,
    #[serde(default)]
    pub f_max: Option<u32>,
    pub horizon_s: f64,
    #[serde(default)]
    pub initial_tokens: Option<InitialTokens>,
    #[serde(default)]
    pub persistent_flows: Vec<u32>,
    #[serde(default)]
    pub arrivals: Vec<ArrivalRow>,
}

impl ScenarioFile {
    pub fn tokens(&self, profile: &ProfileConfig) -> Result<Option<TokenState>> {
        let Some(init) = &self.initial_tokens else {
            return Ok(None);
        };
        let mut tokens = TokenState::full(profile, self.nodes);
        match init {
            InitialTokens::BadHistory(nodes) => {
                for &n in nodes {
                    ensure!(
                        (1..=self.nodes).contains(&n),
                        "bad-history node {n} out of range 1..={}",
                        self.nodes
                    );
                    tokens.set_bad_history(n - 1);
                }
            }
            InitialTokens::Levels(levels) => {
                ensure!(
                    levels.len() == self.nodes,
                    "{} token matrices for {} nodes",
                    levels.len(),
                    self.nodes
                );
                for (n, l) in levels.iter().enumerate() {
                    tokens.set_node(n, Matrix::from_rows(l)?)?;
                }
            }
        }
        Ok(Some(tokens))
    }

    pub fn arrivals(&self) -> Result<Vec<Arrival>> {
        self.arrivals.iter().map(|a| a.to_arrival()).collect()
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_string(&mut text)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("reading {}", path.display()))
}

/// `dp` is a 1-based number or `"all"` for the node total.
#[derive(Debug, Serialize)]
struct TraceRow<'a> {
    time_s: f64,
    event: &'a str,
    node: usize,
    dp: String,
    th_gbps: f64,
    flow_count: u32,
}

/// One row per node and drop precedence plus one `all` row per node, for
/// every trace record.
pub fn write_trace_csv(path: &Path, trace: &SimTrace) -> Result<()> {
    let mut w = csv_writer(path)?;
    for rec in &trace.records {
        for node in 0..rec.throughput.len() {
            let row = |dp: String, th: f64| TraceRow {
                time_s: rec.time,
                event: rec.kind.as_str(),
                node: node + 1,
                dp,
                th_gbps: th,
                flow_count: rec.flow_counts[node],
            };
            for dp in 0..rec.per_dp.rows() {
                w.serialize(row((dp + 1).to_string(), rec.per_dp[(dp, node)]))?;
            }
            w.serialize(row("all".into(), rec.throughput[node]))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub start_s: f64,
    pub horizon_s: f64,
    pub events: usize,
    pub completed_flows: usize,
    pub discarded_arrivals: usize,
    /// Gbit delivered to each node over the whole run.
    pub served_gbit: Vec<f64>,
    /// Congestion DP at each record, 1-based; `null` when idle.
    pub congestion_dp_changes: Vec<(f64, Option<usize>)>,
}

impl TraceSummary {
    pub fn from_trace(trace: &SimTrace) -> Self {
        let nodes = trace.records.first().map_or(0, |r| r.throughput.len());
        let mut served = vec![0.0; nodes];
        for (rec, end) in trace.intervals() {
            for (s, th) in served.iter_mut().zip(&rec.throughput) {
                *s += th * (end - rec.time);
            }
        }
        let mut changes = Vec::new();
        for rec in &trace.records {
            let dpc = rec.congestion_dp.map(|d| d + 1);
            if changes.last().map(|c: &(f64, Option<usize>)| c.1) != Some(dpc) {
                changes.push((rec.time, dpc));
            }
        }
        Self {
            start_s: trace.start,
            horizon_s: trace.horizon,
            events: trace.records.len(),
            completed_flows: trace.completed.len(),
            discarded_arrivals: trace.discarded.len(),
            served_gbit: served,
            congestion_dp_changes: changes,
        }
    }
}

#[derive(Debug, Serialize)]
struct FlowRow {
    id: u64,
    node: usize,
    arrival_s: f64,
    size_gbit: f64,
    finish_s: f64,
    bandwidth_gbps: f64,
}

pub fn write_flows_csv(path: &Path, trace: &SimTrace) -> Result<()> {
    write_csv(
        path,
        trace.completed.iter().map(|f| FlowRow {
            id: f.id,
            node: f.node + 1,
            arrival_s: f.arrival,
            size_gbit: f.size,
            finish_s: f.finish,
            bandwidth_gbps: f.bandwidth(),
        }),
    )
}

pub fn write_arrivals_csv(path: &Path, arrivals: &[Arrival]) -> Result<()> {
    write_csv(path, arrivals.iter().map(ArrivalRow::from_arrival))
}

pub fn read_arrivals_csv(path: &Path) -> Result<Vec<Arrival>> {
    read_csv::<ArrivalRow>(path)?
        .into_iter()
        .map(ArrivalRow::to_arrival)
        .collect()
}

/// A packet trace row; `dp` is empty on input, a 1-based number or `red`
/// on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRow {
    pub arrival_time_s: f64,
    pub size_bytes: u32,
    #[serde(default)]
    pub dp: Option<String>,
}

pub fn marking_label(m: Marking) -> String {
    match m {
        Marking::Dp(dp) => (u32::from(dp) + 1).to_string(),
        Marking::Red => "red".into(),
    }
}

pub fn read_packets_csv(path: &Path) -> Result<Vec<PacketRow>> {
    let rows: Vec<PacketRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.size_bytes == 0 {
            bail!("packet {} has size 0", i + 1);
        }
    }
    Ok(rows)
}
