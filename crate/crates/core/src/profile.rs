//! Bandwidth profile definition, dimensioning and validation.
//!
//! A [`ProfileConfig`] is the triple `(R, BS, TS)`: an `N_DP x N_TS` rate
//! matrix, an `N_DP x N_TS` bucket size matrix and the timescale vector.
//! Rows are drop precedences (0 is the best protected), columns are
//! timescales (0 is the shortest).
//!
//! The dimensioning pipeline turns a set of [`Requirements`] into a 4-row
//! profile:
//!
//! ```text
//!        ts 0          ..  ts N_fs-1               ts N_fs (longest)
//! dp 0   G[0]          ..  G[N_fs-1]               G[N_fs]
//! dp 1   BW[0]-G[0]    ..  BW[N_fs-1]-G[N_fs-1]    (C-BW[0])/(N-1) - G[N_fs]
//! dp 2   free          ..  free                    C/N - (C-BW[0])/(N-1)
//! dp 3   C             ..  C                       C
//! ```
//!
//! Rows 0..=2 of the last column sum to the nominal speed `C/N` (the return
//! rule), so a node that keeps sending faster than its share ends up with
//! empty long-timescale buckets, and an under-loaded node can climb back.

use core::fmt;

use std_alloc::format;
use std_alloc::string::String;
use std_alloc::vec;
use std_alloc::vec::Vec;

use crate::{bytes_to_gbit, Error, Matrix, Result};

/// Absolute tolerance for equality checks on rates and volumes.
pub const TOLERANCE: f64 = 1e-9;

/// How the unconstrained entries of the third rate row are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreeRateFill {
    /// Every free entry is the link capacity.
    Capacity,
    /// Free entries are the link capacity, except the column of the largest
    /// predefined file size, which takes the return-rule rate of the longest
    /// timescale. This keeps the third drop precedence from bursting on the
    /// longest predefined download.
    #[default]
    CapacityThenReturnRate,
}

/// Dimensioning inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Requirements {
    /// Bottleneck capacity `C` (Gbps).
    pub capacity: f64,
    /// Number of nodes `N` sharing the bottleneck.
    pub nodes: usize,
    /// Guaranteed speeds `G`, one per timescale, non-increasing (Gbps).
    pub guaranteed: Vec<f64>,
    /// Predefined download speeds `BW`, strictly decreasing (Gbps).
    pub download: Vec<f64>,
    /// File sizes `fs` the download speeds apply to, strictly increasing (Gbit).
    pub file_sizes: Vec<f64>,
    /// Overrides the longest timescale; the largest file size is then
    /// recomputed as `longest_timescale * BW[last]`.
    pub longest_timescale: Option<f64>,
    pub free_rate_fill: FreeRateFill,
}

impl Requirements {
    pub fn nominal_speed(&self) -> f64 {
        self.capacity / self.nodes as f64
    }

    /// Number of predefined file sizes (`N_TS - 1`).
    pub fn file_size_count(&self) -> usize {
        self.download.len()
    }

    /// File sizes after applying the longest-timescale override.
    pub fn effective_file_sizes(&self) -> Vec<f64> {
        let mut fs = self.file_sizes.clone();
        if let (Some(ts), Some(last), Some(bw)) =
            (self.longest_timescale, fs.last_mut(), self.download.last())
        {
            *last = ts * bw;
        }
        fs
    }

    /// Checks the structural requirement invariants.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRequirements(msg));
        if self.nodes < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.nodes));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad(format!("capacity must be positive, got {}", self.capacity));
        }
        let n_fs = self.download.len();
        if n_fs == 0 {
            return bad("at least one download speed is required".into());
        }
        if self.file_sizes.len() != n_fs {
            return bad(format!(
                "{} file sizes for {} download speeds",
                self.file_sizes.len(),
                n_fs
            ));
        }
        if self.guaranteed.len() != n_fs + 1 {
            return bad(format!(
                "{} guaranteed speeds, expected {} (one per timescale)",
                self.guaranteed.len(),
                n_fs + 1
            ));
        }
        if let Some(ts) = self.longest_timescale {
            if !(ts > 0.0 && ts.is_finite()) {
                return bad(format!("longest timescale must be positive, got {ts}"));
            }
        }
        let all = self
            .guaranteed
            .iter()
            .chain(&self.download)
            .chain(&self.file_sizes);
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("speeds and sizes must be finite and non-negative".into());
        }
        if self.guaranteed.windows(2).any(|w| w[1] > w[0]) {
            return bad("guaranteed speeds must be non-increasing".into());
        }
        if self.download.windows(2).any(|w| w[1] >= w[0]) {
            return bad("download speeds must be strictly decreasing".into());
        }
        if self.effective_file_sizes().windows(2).any(|w| w[1] <= w[0]) {
            return bad("file sizes must be strictly increasing".into());
        }
        let sn = self.nominal_speed();
        if self.guaranteed[0] > sn + TOLERANCE {
            return bad(format!(
                "first guaranteed speed {} exceeds the nominal speed {sn}",
                self.guaranteed[0]
            ));
        }
        if self.download[n_fs - 1] <= sn {
            return bad(format!(
                "slowest download speed {} must exceed the nominal speed {sn}",
                self.download[n_fs - 1]
            ));
        }
        if self.download[0] > self.capacity {
            return bad(format!(
                "peak download speed {} exceeds the capacity {}",
                self.download[0], self.capacity
            ));
        }
        Ok(())
    }
}

/// One node's bandwidth profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    rates: Matrix,
    bucket_sizes: Matrix,
    timescales: Vec<f64>,
}

impl ProfileConfig {
    /// Assembles a profile. Only shapes and finiteness are checked here, the
    /// semantic rules are reported by [`validate`].
    pub fn new(rates: Matrix, bucket_sizes: Matrix, timescales: Vec<f64>) -> Result<Self> {
        if rates.rows() == 0 || rates.cols() == 0 {
            return Err(Error::InvalidProfile("empty rate matrix".into()));
        }
        if bucket_sizes.shape() != rates.shape() {
            return Err(Error::Shape {
                expected: rates.shape(),
                got: bucket_sizes.shape(),
            });
        }
        if timescales.len() != rates.cols() {
            return Err(Error::Shape {
                expected: (1, rates.cols()),
                got: (1, timescales.len()),
            });
        }
        let finite = rates.iter().all(f64::is_finite)
            && bucket_sizes.iter().all(f64::is_finite)
            && timescales.iter().all(|t| t.is_finite());
        if !finite {
            return Err(Error::InvalidProfile("non-finite entry".into()));
        }
        Ok(Self {
            rates,
            bucket_sizes,
            timescales,
        })
    }

    pub fn n_dp(&self) -> usize {
        self.rates.rows()
    }

    pub fn n_ts(&self) -> usize {
        self.rates.cols()
    }

    pub fn rates(&self) -> &Matrix {
        &self.rates
    }

    pub fn bucket_sizes(&self) -> &Matrix {
        &self.bucket_sizes
    }

    pub fn timescales(&self) -> &[f64] {
        &self.timescales
    }

    pub fn rate(&self, dp: usize, ts: usize) -> f64 {
        self.rates[(dp, ts)]
    }

    pub fn bucket_size(&self, dp: usize, ts: usize) -> f64 {
        self.bucket_sizes[(dp, ts)]
    }

    /// Sum over drop precedences of the longest-timescale rates: the rate a
    /// node with every bucket empty can still reach on its own.
    pub fn exhausted_rate(&self) -> f64 {
        self.rates.column(self.n_ts() - 1).sum()
    }

    /// Replaces the bucket sizes, e.g. with packet-level minimums.
    pub fn with_bucket_sizes(&self, bucket_sizes: Matrix) -> Result<Self> {
        Self::new(self.rates.clone(), bucket_sizes, self.timescales.clone())
    }
}

/// Builds the 4-row rate matrix from the requirements.
pub fn dimension_rates(req: &Requirements) -> Result<Matrix> {
    req.check()?;
    let n_fs = req.file_size_count();
    let n_ts = n_fs + 1;
    let last = n_fs;
    let c = req.capacity;
    let sn = req.nominal_speed();
    let share = (c - req.download[0]) / (req.nodes as f64 - 1.0);

    let mut r = Matrix::zeros(4, n_ts);
    r.row_mut(0).copy_from_slice(&req.guaranteed);
    for ts in 0..n_fs {
        r[(1, ts)] = req.download[ts] - req.guaranteed[ts];
    }
    r[(1, last)] = share - req.guaranteed[last];
    r[(2, last)] = sn - share;
    let mut ceiling = c;
    for ts in 0..n_fs {
        let fill = match req.free_rate_fill {
            FreeRateFill::CapacityThenReturnRate if ts == n_fs - 1 => r[(2, last)],
            _ => c,
        };
        // clip so the row stays non-increasing
        r[(2, ts)] = fill.min(ceiling);
        ceiling = r[(2, ts)];
    }
    r.row_mut(3).fill(c);

    for dp in 0..4 {
        for ts in 0..n_ts {
            if r[(dp, ts)] < -TOLERANCE {
                return Err(Error::Infeasible(format!(
                    "rate R[{},{}] = {} is negative",
                    dp + 1,
                    ts + 1,
                    r[(dp, ts)]
                )));
            }
        }
        for ts in 1..n_ts {
            if r[(dp, ts)] > r[(dp, ts - 1)] + TOLERANCE {
                return Err(Error::Infeasible(format!(
                    "rate row {} increases at timescale {}: {} > {}",
                    dp + 1,
                    ts + 1,
                    r[(dp, ts)],
                    r[(dp, ts - 1)]
                )));
            }
        }
    }
    Ok(r)
}

/// Timescales `[0, fs_1/BW_1, .., fs_k/BW_k]` in seconds.
pub fn dimension_timescales(req: &Requirements) -> Result<Vec<f64>> {
    if req.download.is_empty() || req.download.len() != req.file_sizes.len() {
        return Err(Error::InvalidRequirements(
            "download speeds and file sizes must pair up".into(),
        ));
    }
    if req.download.iter().any(|bw| !(*bw > 0.0)) {
        return Err(Error::InvalidRequirements(
            "download speeds must be positive".into(),
        ));
    }
    let mut ts = vec![0.0];
    ts.extend(
        req.effective_file_sizes()
            .iter()
            .zip(&req.download)
            .map(|(fs, bw)| fs / bw),
    );
    check_timescales(&ts)?;
    Ok(ts)
}

fn check_timescales(ts: &[f64]) -> Result<()> {
    if ts.first() != Some(&0.0) {
        return Err(Error::InvalidRequirements(format!(
            "timescales must start at 0, got {ts:?}"
        )));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidRequirements(format!(
            "timescales must be strictly increasing, got {ts:?}"
        )));
    }
    Ok(())
}

fn bucket_size_formula(rates: &Matrix, ts: &[f64]) -> Matrix {
    let mut bs = Matrix::zeros(rates.rows(), rates.cols());
    for dp in 0..rates.rows() {
        for col in 1..rates.cols() {
            bs[(dp, col)] = (1..=col)
                .map(|k| (ts[k] - ts[k - 1]) * (rates[(dp, k - 1)] - rates[(dp, col)]))
                .sum();
        }
    }
    bs
}

/// Bucket sizes such that a previously idle node sending at its per-DP rate
/// bound empties bucket `(dp, ts)` exactly after `TS[ts]` seconds.
pub fn dimension_bucket_sizes(rates: &Matrix, timescales: &[f64]) -> Result<Matrix> {
    if timescales.len() != rates.cols() {
        return Err(Error::Shape {
            expected: (1, rates.cols()),
            got: (1, timescales.len()),
        });
    }
    check_timescales(timescales)?;
    let mut bs = bucket_size_formula(rates, timescales);
    for dp in 0..bs.rows() {
        for col in 0..bs.cols() {
            if bs[(dp, col)] < -TOLERANCE {
                return Err(Error::Infeasible(format!(
                    "bucket size BS[{},{}] = {} is negative; rate row {} is not non-increasing",
                    dp + 1,
                    col + 1,
                    bs[(dp, col)],
                    dp + 1
                )));
            }
            bs[(dp, col)] = bs[(dp, col)].max(0.0);
        }
    }
    Ok(bs)
}

/// Runs the whole dimensioning pipeline.
pub fn dimension(req: &Requirements) -> Result<ProfileConfig> {
    let rates = dimension_rates(req)?;
    let ts = dimension_timescales(req)?;
    let bs = dimension_bucket_sizes(&rates, &ts)?;
    ProfileConfig::new(rates, bs, ts)
}

/// Flow throughput a single file of the second predefined size can reach
/// from an idle node: it gets `BW_1` for `TS_2` and `BW_2` until `TS_3`.
pub fn adjusted_flow_speed(bw1: f64, bw2: f64, ts2: f64, ts3: f64) -> f64 {
    debug_assert!(ts3 > ts2 && ts2 > 0.0);
    (ts2 * bw1 + (ts3 - ts2) * bw2) / ts3
}

/// Inverse of [`adjusted_flow_speed`] in `bw2`: the maintainable download
/// speed that yields the given flow throughput target.
pub fn solve_target_flow_speed(target: f64, bw1: f64, ts2: f64, ts3: f64) -> Result<f64> {
    if !(ts3 > ts2 && ts2 > 0.0) {
        return Err(Error::InvalidRequirements(format!(
            "need TS3 > TS2 > 0, got TS2={ts2} TS3={ts3}"
        )));
    }
    let floor = ts2 * bw1 / ts3;
    if !(target > floor) {
        return Err(Error::Infeasible(format!(
            "target {target} Gbps is not above the first-timescale contribution {floor}"
        )));
    }
    Ok((target * ts3 - ts2 * bw1) / (ts3 - ts2))
}

/// Packet-level bucket sizes: every bucket must hold at least one MTU and
/// an RTT worth of tokens at its own rate.
pub fn packet_bucket_sizes(
    bucket_sizes: &Matrix,
    rates: &Matrix,
    mtu_bytes: f64,
    rtt: f64,
) -> Result<Matrix> {
    let mtu = bytes_to_gbit(mtu_bytes);
    bucket_sizes.zip_map(rates, |bs, r| bs.max(mtu).max(r * rtt))
}

/// The two-rate three-color marker as a 2-DP, 1-timescale profile:
/// green is DP 0 and yellow is DP 1. Fluid use wants `cbs = ebs = 0`.
pub fn trtcm_profile(cir: f64, eir: f64, cbs: f64, ebs: f64) -> Result<ProfileConfig> {
    ProfileConfig::new(
        Matrix::from_rows(&[[cir], [eir]])?,
        Matrix::from_rows(&[[cbs], [ebs]])?,
        vec![0.0],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NonNegative,
    RowMonotonicity,
    Timescales,
    ReturnRule,
    WorkConservation,
    GuaranteedRate,
    FluidFirstBucket,
    BucketConsistency,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::NonNegative => "non-negative",
            Rule::RowMonotonicity => "row-monotonicity",
            Rule::Timescales => "timescales",
            Rule::ReturnRule => "return-rule",
            Rule::WorkConservation => "work-conservation",
            Rule::GuaranteedRate => "guaranteed-rate",
            Rule::FluidFirstBucket => "fluid-first-bucket",
            Rule::BucketConsistency => "bucket-consistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub rule: Rule,
    /// `(dp, ts)` of the offending entry, when there is one.
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]", self.rule.id())?;
        if let Some((dp, ts)) = self.position {
            write!(f, " at ({}, {})", dp + 1, ts + 1)?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    /// True when there are no error-level findings.
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }

    fn push(&mut self, severity: Severity, rule: Rule, position: Option<(usize, usize)>, message: String) {
        self.findings.push(Finding {
            severity,
            rule,
            position,
            message,
        });
    }
}

/// Checks a profile against the structural rules for a system of `nodes`
/// nodes sharing `capacity`.
pub fn validate(p: &ProfileConfig, capacity: f64, nodes: usize) -> ValidationReport {
    use Severity::{Error as E, Warning as W};

    let mut report = ValidationReport::default();
    let r = p.rates();
    let bs = p.bucket_sizes();
    let sn = capacity / nodes as f64;
    let last = p.n_ts() - 1;

    for dp in 0..p.n_dp() {
        for ts in 0..p.n_ts() {
            if r[(dp, ts)] < 0.0 {
                report.push(E, Rule::NonNegative, Some((dp, ts)), format!("negative rate {}", r[(dp, ts)]));
            }
            if bs[(dp, ts)] < 0.0 {
                report.push(E, Rule::NonNegative, Some((dp, ts)), format!("negative bucket size {}", bs[(dp, ts)]));
            }
            if ts > 0 && r[(dp, ts)] > r[(dp, ts - 1)] + TOLERANCE {
                report.push(
                    E,
                    Rule::RowMonotonicity,
                    Some((dp, ts)),
                    format!("rate {} exceeds the shorter-timescale rate {}", r[(dp, ts)], r[(dp, ts - 1)]),
                );
            }
        }
    }

    let ts = p.timescales();
    let ts_ok = check_timescales(ts).is_ok();
    if !ts_ok {
        report.push(E, Rule::Timescales, None, format!("timescales must start at 0 and strictly increase: {ts:?}"));
    }

    let mut cum = 0.0;
    let returns = r.column(last).any(|v| {
        cum += v;
        (cum - sn).abs() <= TOLERANCE
    });
    if !returns {
        report.push(
            E,
            Rule::ReturnRule,
            None,
            format!("no prefix of the longest-timescale rates sums to the nominal speed {sn}"),
        );
    }

    let exhausted = p.exhausted_rate();
    if exhausted < capacity - TOLERANCE {
        report.push(
            E,
            Rule::WorkConservation,
            None,
            format!("a node with empty buckets is limited to {exhausted} Gbps, below the capacity {capacity}"),
        );
    }

    if r[(0, 0)] > sn + TOLERANCE {
        report.push(
            E,
            Rule::GuaranteedRate,
            Some((0, 0)),
            format!("guaranteed rate {} exceeds the nominal speed {sn}", r[(0, 0)]),
        );
    }

    for dp in 0..p.n_dp() {
        if bs[(dp, 0)] != 0.0 {
            report.push(
                W,
                Rule::FluidFirstBucket,
                Some((dp, 0)),
                format!("first-timescale bucket is {} instead of 0; the fluid model needs it empty", bs[(dp, 0)]),
            );
        }
    }

    if ts_ok {
        let expected = bucket_size_formula(r, ts);
        for dp in 0..p.n_dp() {
            for col in 1..p.n_ts() {
                let (want, got) = (expected[(dp, col)], bs[(dp, col)]);
                if (want - got).abs() > TOLERANCE * want.abs().max(1.0) {
                    report.push(
                        W,
                        Rule::BucketConsistency,
                        Some((dp, col)),
                        format!("bucket size {got} differs from the dimensioned {want}"),
                    );
                }
            }
        }
    }

    report
}
