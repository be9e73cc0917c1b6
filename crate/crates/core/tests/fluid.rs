use mtsbwp_core::alloc::AllocationResult;
use mtsbwp_core::fluid::{
    run, Engine, EventKind, FluidConfig, Scenario, SimTrace, TokenState,
};
use mtsbwp_core::profile::{dimension, trtcm_profile, FreeRateFill, ProfileConfig, Requirements};
use mtsbwp_core::traffic::{generate_all, Arrival, NodeTraffic, LoadClass, SizeDistribution, TrafficSpec};
use mtsbwp_core::Matrix;

fn reference() -> ProfileConfig {
    dimension(&Requirements {
        capacity: 10.0,
        nodes: 5,
        guaranteed: vec![2.0, 2.0, 2.0, 0.75],
        download: vec![6.0, 4.0, 3.0],
        file_sizes: vec![0.8, 8.0, 90.0],
        longest_timescale: Some(30.0),
        free_rate_fill: FreeRateFill::default(),
    })
    .unwrap()
}

fn config(profile: ProfileConfig) -> FluidConfig {
    FluidConfig {
        profile,
        capacity: 10.0,
        nodes: 5,
        max_flows: Some(20),
    }
}

fn alloc_for(node: usize, per_dp: &[f64]) -> AllocationResult {
    let mut m = Matrix::zeros(per_dp.len(), 5);
    let mut th = vec![0.0; 5];
    for (dp, &v) in per_dp.iter().enumerate() {
        m[(dp, node)] = v;
        th[node] += v;
    }
    AllocationResult {
        throughput: th,
        per_dp: m,
        congestion_dp: Some(per_dp.len() - 1),
    }
}

fn burst_scenario(p: &ProfileConfig) -> Scenario {
    let mut tokens = TokenState::full(p, 5);
    for n in 1..5 {
        tokens.set_bad_history(n);
    }
    Scenario {
        start: 0.0,
        tokens: Some(tokens),
        persistent_flows: vec![0, 20, 20, 20, 20],
        arrivals: vec![Arrival {
            node: 0,
            time: 0.0,
            size: 90.0,
        }],
    }
}

#[test]
fn equilibrium_rates_leave_buckets_unchanged() {
    let p = reference();
    let mut tokens = TokenState::full(&p, 5);
    let half = p.bucket_sizes().map(|b| b / 2.0);
    tokens.set_node(0, half.clone()).unwrap();
    let scenario = Scenario {
        tokens: Some(tokens),
        persistent_flows: vec![1, 0, 0, 0, 0],
        ..Default::default()
    };
    let mut engine = Engine::new(config(p.clone()), scenario).unwrap();
    let th = [2.0, 2.0, 10.0, 10.0];
    engine.advance(&alloc_for(0, &th), 0.5).unwrap();
    for dp in 0..4 {
        for ts in 0..4 {
            if p.rate(dp, ts) == th[dp] {
                assert_eq!(engine.tokens().level(0, dp, ts), half[(dp, ts)], "({dp},{ts})");
            }
        }
    }
}

#[test]
fn fresh_node_empties_second_timescale_bucket_at_ts2() {
    let p = reference();
    let scenario = Scenario {
        persistent_flows: vec![1, 0, 0, 0, 0],
        ..Default::default()
    };
    let mut engine = Engine::new(config(p.clone()), scenario).unwrap();
    let alloc = alloc_for(0, &[2.0, 4.0]);
    let alloc = AllocationResult {
        per_dp: {
            let mut m = Matrix::zeros(4, 5);
            m[(0, 0)] = 2.0;
            m[(1, 0)] = 4.0;
            m
        },
        ..alloc
    };
    let next = engine.next_event(&alloc).unwrap();
    assert_eq!(next.kind, EventKind::BucketEmpty);
    assert!((next.time - 0.8 / 6.0).abs() < 1e-12);
    assert!((next.time - p.timescales()[1]).abs() < 1e-12);
    engine.advance(&alloc, next.time).unwrap();
    assert!(engine.tokens().level(0, 1, 1) < 1e-12);
}

#[test]
fn idle_node_refills() {
    let p = reference();
    let mut tokens = TokenState::full(&p, 5);
    tokens.set_node(0, Matrix::zeros(4, 4)).unwrap();
    let arrival = Arrival { node: 1, time: 100.0, size: 1.0 };
    let scenario = Scenario {
        tokens: Some(tokens),
        arrivals: vec![arrival],
        ..Default::default()
    };
    let mut engine = Engine::new(config(p.clone()), scenario).unwrap();
    engine.advance(&AllocationResult::idle(4, 5), 1.0).unwrap();
    for dp in 0..4 {
        for ts in 0..4 {
            let want = p.rate(dp, ts).min(p.bucket_size(dp, ts));
            assert!((engine.tokens().level(0, dp, ts) - want).abs() < 1e-12);
        }
    }
    assert!(engine.flows().is_empty());
}

#[test]
fn next_event_finish_and_arrival() {
    let p = trtcm_profile(2.0, 8.0, 0.0, 0.0).unwrap();
    let scenario = Scenario {
        arrivals: vec![
            Arrival { node: 0, time: 0.0, size: 8.0 },
            Arrival { node: 2, time: 5.0, size: 1.0 },
        ],
        ..Default::default()
    };
    let mut engine = Engine::new(config(p), scenario).unwrap();
    engine.run_until(0.0).unwrap();
    assert_eq!(engine.flows().len(), 1);
    let next = engine.next_event(&alloc_for(0, &[2.0, 2.0])).unwrap();
    assert_eq!((next.time, next.kind), (2.0, EventKind::Finish));

    let empty = Engine::new(
        config(trtcm_profile(2.0, 8.0, 0.0, 0.0).unwrap()),
        Scenario {
            arrivals: vec![Arrival { node: 3, time: 5.0, size: 1.0 }],
            ..Default::default()
        },
    )
    .unwrap();
    let next = empty.next_event(&AllocationResult::idle(2, 5)).unwrap();
    assert_eq!((next.time, next.kind), (5.0, EventKind::Arrival));
}

#[test]
fn no_arrivals_gives_idle_trace() {
    let trace = run(config(reference()), Scenario::default(), 100.0).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].congestion_dp, None);
    assert!(trace.completed.is_empty());
}

#[test]
fn burst_against_bad_history_nodes() {
    let p = reference();
    let mut engine = Engine::new(config(p.clone()), burst_scenario(&p)).unwrap();
    engine.run_until(0.0).unwrap();
    let first = engine.trace().records[0].clone();
    assert_eq!(first.congestion_dp, Some(1));
    let next = engine
        .next_event(&AllocationResult {
            throughput: first.throughput.clone(),
            per_dp: first.per_dp.clone(),
            congestion_dp: first.congestion_dp,
        })
        .unwrap();
    assert_eq!(next.kind, EventKind::BucketEmpty);
    assert!(next.time < 90.0 / 6.0);

    engine.run_until(40.0).unwrap();
    let trace = engine.into_trace();
    let ts2 = 0.8 / 6.0;
    let a = trace.at(0.05).unwrap();
    assert!((a.throughput[0] - 6.0).abs() < 1e-9);
    assert_eq!(a.congestion_dp, Some(1));
    for n in 1..5 {
        assert!((a.throughput[n] - 1.0).abs() < 1e-9);
    }
    let b = trace.at(ts2 + 1e-9).unwrap();
    assert!((b.time - ts2).abs() < 1e-9, "phase change at {}", b.time);
    assert!((b.throughput[0] - 4.0).abs() < 1e-9);
    assert_eq!(b.congestion_dp, Some(2));
    assert_eq!(b.per_dp.column(0).collect::<Vec<_>>(), vec![2.0, 2.0, 0.0, 0.0]);

    let done = trace.completed.iter().find(|f| f.node == 0).expect("node 1 finishes");
    let after = trace.at(done.finish + 1e-9).unwrap();
    assert_eq!(after.flow_counts[0], 0);
    let others: f64 = after.throughput[1..].iter().sum();
    assert!((others - 10.0).abs() < 1e-9);
}

fn random_arrivals(seed: u64, horizon: f64, rates: [f64; 5]) -> Vec<Arrival> {
    let sizes = SizeDistribution::uniform(&[0.8, 8.0]).unwrap();
    let nodes: Vec<NodeTraffic> = rates
        .iter()
        .map(|&rate| NodeTraffic {
            class: LoadClass::High,
            load: 0.0,
            spec: TrafficSpec { rate, sizes: sizes.clone(), seed },
        })
        .collect();
    generate_all(&nodes, horizon)
}

/// Per-flow-proportional water level for trTCM with zero bursts, found by
/// bisection.
fn trtcm_oracle(flows: &[u32], cir: f64, eir: f64, capacity: f64) -> Vec<f64> {
    let active: Vec<usize> = (0..flows.len()).filter(|&n| flows[n] > 0).collect();
    if active.is_empty() {
        return vec![0.0; flows.len()];
    }
    let green_only = active.len() as f64 * cir >= capacity;
    let (lo_b, hi_b) = if green_only { (0.0, cir) } else { (cir, cir + eir) };
    let share = |level: f64| -> Vec<f64> {
        (0..flows.len())
            .map(|n| {
                if flows[n] == 0 {
                    0.0
                } else {
                    (f64::from(flows[n]) * level).clamp(lo_b, hi_b)
                }
            })
            .collect()
    };
    let (mut lo, mut hi) = (0.0, capacity * 2.0);
    if share(hi).iter().sum::<f64>() < capacity {
        return share(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share(mid).iter().sum::<f64>() < capacity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    share(hi)
}

#[test]
fn trtcm_matches_direct_oracle() {
    let p = trtcm_profile(2.0, 8.0, 0.0, 0.0).unwrap();
    let arrivals = random_arrivals(11, 300.0, [0.2, 0.3, 0.4, 0.5, 0.6]);
    let trace = run(
        config(p),
        Scenario { arrivals, ..Default::default() },
        300.0,
    )
    .unwrap();
    assert!(trace.records.len() > 100);
    for rec in &trace.records {
        let want = trtcm_oracle(&rec.flow_counts, 2.0, 8.0, 10.0);
        for (g, w) in rec.throughput.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "t={} {:?} vs {:?}", rec.time, rec.throughput, want);
        }
    }
}

fn check_conservation(trace: &SimTrace) {
    for f in &trace.completed {
        let mut served = 0.0;
        for (rec, end) in trace.intervals() {
            let (a, b) = (rec.time.max(f.arrival), end.min(f.finish));
            if b > a && rec.flow_counts[f.node] > 0 {
                served += rec.throughput[f.node] / f64::from(rec.flow_counts[f.node]) * (b - a);
            }
        }
        assert!((served - f.size).abs() < 1e-6, "flow {} served {served} of {}", f.id, f.size);
    }
    for (rec, end) in trace.intervals() {
        if rec.flow_counts.iter().any(|&c| c > 0) && end > rec.time {
            assert!((rec.throughput.iter().sum::<f64>() - 10.0).abs() < 1e-9);
        }
    }
}

#[test]
fn flows_receive_exactly_their_size() {
    let p = reference();
    let arrivals = random_arrivals(5, 400.0, [0.2, 0.5, 0.5, 0.5, 0.5]);
    let trace = run(config(p), Scenario { arrivals, ..Default::default() }, 400.0).unwrap();
    assert!(trace.completed.len() > 100);
    check_conservation(&trace);
}

#[test]
fn split_run_matches_single_run() {
    let p = reference();
    let arrivals = random_arrivals(9, 200.0, [0.2, 0.6, 0.6, 0.6, 0.6]);
    let scenario = Scenario { arrivals, ..Default::default() };
    let whole = run(config(p.clone()), scenario.clone(), 200.0).unwrap();

    let mut first = Engine::new(config(p.clone()), scenario).unwrap();
    first.run_until(100.0).unwrap();
    let state = first.snapshot();
    let head = first.into_trace();
    let mut second = Engine::resume(config(p), state).unwrap();
    second.run_until(200.0).unwrap();
    let tail = second.into_trace();

    let mut probes: Vec<f64> = whole.records.iter().map(|r| r.time).collect();
    probes.extend((0..2000).map(|i| i as f64 * 0.1 + 0.05));
    for t in probes {
        let part = if t < 100.0 { &head } else { &tail };
        let (a, b) = (whole.at(t).unwrap(), part.at(t).unwrap());
        for (x, y) in a.throughput.iter().zip(&b.throughput) {
            assert!((x - y).abs() < 1e-9, "t={t}: {:?} vs {:?}", a.throughput, b.throughput);
        }
        assert_eq!(a.flow_counts, b.flow_counts, "t={t}");
    }
    let finishes = |t: &SimTrace| t.completed.iter().map(|f| (f.id, f.finish)).collect::<Vec<_>>();
    let joined: Vec<_> = finishes(&head).into_iter().chain(finishes(&tail)).collect();
    let single = finishes(&whole);
    assert_eq!(joined.len(), single.len());
    for ((i, a), (j, b)) in joined.iter().zip(&single) {
        assert_eq!(i, j);
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn flow_limit_discards_arrivals() {
    let p = reference();
    let arrivals: Vec<Arrival> = (0..25)
        .map(|i| Arrival { node: 0, time: i as f64 * 1e-3, size: 80.0 })
        .collect();
    let trace = run(config(p), Scenario { arrivals, ..Default::default() }, 1.0).unwrap();
    assert_eq!(trace.discarded.len(), 5);
    assert_eq!(trace.records.last().unwrap().flow_counts[0], 20);
}

#[test]
fn rejects_invalid_setups() {
    let p = reference();
    let unsorted = Scenario {
        arrivals: vec![
            Arrival { node: 0, time: 2.0, size: 1.0 },
            Arrival { node: 0, time: 1.0, size: 1.0 },
        ],
        ..Default::default()
    };
    assert!(Engine::new(config(p.clone()), unsorted).is_err());
    let bursty = trtcm_profile(2.0, 8.0, 1.0, 1.0).unwrap();
    assert!(Engine::new(config(bursty), Scenario::default()).is_err());
    let mut r = p.rates().clone();
    r.row_mut(3).fill(0.0);
    let starved = ProfileConfig::new(r, p.bucket_sizes().clone(), p.timescales().to_vec()).unwrap();
    assert!(Engine::new(config(starved), Scenario::default()).is_err());
}

#[test]
fn node_samples_account_for_served_volume() {
    use mtsbwp_core::stats::node_samples;
    let p = reference();
    let arrivals = random_arrivals(21, 250.0, [0.3, 0.5, 0.5, 0.6, 0.7]);
    let mut engine = Engine::new(config(p), Scenario { arrivals, ..Default::default() }).unwrap();
    engine.run_until(250.0).unwrap();
    let in_flight: Vec<_> = engine.flows().to_vec();
    let trace = engine.into_trace();
    for node in 0..5 {
        let s = node_samples(&trace, node, 0.0);
        let volume = s.mean().unwrap_or(0.0) * s.total_weight();
        let done: f64 = trace.completed.iter().filter(|f| f.node == node).map(|f| f.size).sum();
        let partial: f64 = in_flight
            .iter()
            .filter(|f| f.node == node)
            .map(|f| f.size - f.remaining)
            .sum();
        assert!((volume - done - partial).abs() < 1e-6, "node {node}: {volume} vs {}", done + partial);
    }
}
