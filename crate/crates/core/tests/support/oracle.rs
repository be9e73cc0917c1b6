//! Reference allocation written against plain vectors. Finds the congestion
//! precedence by a direct scan and then solves for the water level by
//! walking the sorted breakpoints of the piecewise linear fill curve.

pub struct OracleAllocation {
    pub congestion_dp: Option<usize>,
    pub throughput: Vec<f64>,
}

/// `bd[dp][node]`; nodes with zero flows take no part.
pub fn oracle_allocate(bd: &[Vec<f64>], flows: &[u32], capacity: f64) -> OracleAllocation {
    let n = flows.len();
    let n_dp = bd.len();
    let active: Vec<usize> = (0..n).filter(|&i| flows[i] > 0).collect();
    if active.is_empty() {
        return OracleAllocation { congestion_dp: None, throughput: vec![0.0; n] };
    }
    let mut dpc = n_dp - 1;
    let mut cum = 0.0;
    for (dp, row) in bd.iter().enumerate() {
        cum += active.iter().map(|&i| row[i]).sum::<f64>();
        if cum >= capacity - 1e-12 {
            dpc = dp;
            break;
        }
    }
    let base: Vec<f64> = (0..n).map(|i| (0..dpc).map(|d| bd[d][i]).sum()).collect();
    let cap: Vec<f64> = (0..n).map(|i| base[i] + bd[dpc][i]).collect();

    let fill = |level: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if flows[i] == 0 {
                    0.0
                } else {
                    (f64::from(flows[i]) * level).max(base[i]).min(cap[i])
                }
            })
            .collect()
    };
    let total_cap: f64 = active.iter().map(|&i| cap[i]).sum();
    if total_cap <= capacity {
        let th = (0..n).map(|i| if flows[i] > 0 { cap[i] } else { 0.0 }).collect();
        return OracleAllocation { congestion_dp: Some(dpc), throughput: th };
    }

    let mut points: Vec<f64> = active
        .iter()
        .flat_map(|&i| {
            let f = f64::from(flows[i]);
            [base[i] / f, cap[i] / f]
        })
        .filter(|x| x.is_finite())
        .collect();
    points.push(0.0);
    points.sort_by(|a, b| a.total_cmp(b));
    points.dedup();

    let sum = |level: f64| fill(level).iter().sum::<f64>();
    let mut lo = 0.0;
    for &p in &points {
        if sum(p) >= capacity {
            // linear between lo and p; slope is the flow weight of the
            // nodes strictly inside their clamp range there
            let mid = 0.5 * (lo + p);
            let slope: f64 = active
                .iter()
                .filter(|&&i| {
                    let v = f64::from(flows[i]) * mid;
                    v > base[i] && v < cap[i]
                })
                .map(|&i| f64::from(flows[i]))
                .sum();
            let level = if slope > 0.0 { lo + (capacity - sum(lo)) / slope } else { p };
            return OracleAllocation { congestion_dp: Some(dpc), throughput: fill(level) };
        }
        lo = p;
    }
    // beyond every finite breakpoint only unbounded nodes still grow
    let slope: f64 = active
        .iter()
        .filter(|&&i| cap[i].is_infinite())
        .map(|&i| f64::from(flows[i]))
        .sum();
    let level = lo + (capacity - sum(lo)) / slope;
    OracleAllocation { congestion_dp: Some(dpc), throughput: fill(level) }
}
