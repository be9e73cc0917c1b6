mod support {
    pub mod oracle;
}

use mtsbwp_core::alloc::{allocate, BoundsMatrix};
use mtsbwp_core::Matrix;
use proptest::prelude::*;
use support::oracle::oracle_allocate;

fn bound_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        6 => 0.0..10.0f64,
        1 => Just(0.0),
        1 => Just(f64::INFINITY),
    ]
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u32>, f64)> {
    (1usize..6, 1usize..9).prop_flat_map(|(n_dp, n)| {
        (
            prop::collection::vec(prop::collection::vec(bound_value(), n), n_dp),
            prop::collection::vec(0u32..21, n),
            1.0..40.0f64,
        )
    })
}

fn to_bounds(bd: &[Vec<f64>], flows: &[u32]) -> BoundsMatrix {
    BoundsMatrix::new(
        Matrix::from_rows(bd).unwrap(),
        flows.iter().map(|&f| f > 0).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn matches_breakpoint_oracle((bd, flows, c) in instance()) {
        let got = allocate(&to_bounds(&bd, &flows), &flows, c);
        let want = oracle_allocate(&bd, &flows, c);
        prop_assert_eq!(got.congestion_dp, want.congestion_dp);
        for (g, w) in got.throughput.iter().zip(&want.throughput) {
            let ok = (g - w).abs() <= 1e-9 || (g.is_infinite() && w.is_infinite());
            prop_assert!(ok, "{:?} vs {:?}", got.throughput, want.throughput);
        }
    }

    #[test]
    fn never_exceeds_capacity_or_bounds((bd, flows, c) in instance()) {
        let r = allocate(&to_bounds(&bd, &flows), &flows, c);
        let finite = r.throughput.iter().all(|t| t.is_finite());
        if finite {
            prop_assert!(r.total() <= c + 1e-9);
        }
        if let Some(dpc) = r.congestion_dp {
            for n in 0..flows.len() {
                let cap: f64 = (0..=dpc).map(|d| bd[d][n]).sum();
                prop_assert!(r.throughput[n] <= cap + 1e-9);
                for d in 0..dpc {
                    prop_assert!(r.per_dp[(d, n)] <= bd[d][n] + 1e-9);
                }
                let split: f64 = (0..bd.len()).map(|d| r.per_dp[(d, n)]).sum();
                if r.throughput[n].is_finite() {
                    prop_assert!((split - r.throughput[n]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn more_flows_never_lower_own_share(
        (bd, flows, c) in instance(),
        pick in any::<prop::sample::Index>(),
        extra in 1u32..5,
    ) {
        let n = pick.index(flows.len());
        prop_assume!(flows[n] > 0);
        let before = allocate(&to_bounds(&bd, &flows), &flows, c);
        let mut more = flows.clone();
        more[n] += extra;
        let after = allocate(&to_bounds(&bd, &more), &more, c);
        prop_assume!(before.congestion_dp == after.congestion_dp);
        prop_assert!(after.throughput[n] >= before.throughput[n] - 1e-9);
    }

    #[test]
    fn saturated_link_is_fully_used((bd, flows, c) in instance()) {
        let active: Vec<usize> = (0..flows.len()).filter(|&i| flows[i] > 0).collect();
        let total_bound: f64 = active.iter().map(|&i| bd.iter().map(|r| r[i]).sum::<f64>()).sum();
        prop_assume!(!active.is_empty() && total_bound >= c);
        let r = allocate(&to_bounds(&bd, &flows), &flows, c);
        prop_assert!((r.total() - c).abs() <= 1e-9);
    }
}

#[test]
fn oracle_reproduces_burst_first_phase() {
    let fresh = [2.0, 4.0, 10.0, 10.0];
    let bad = [0.75, 0.25, 1.0, 10.0];
    let bd: Vec<Vec<f64>> = (0..4)
        .map(|d| {
            let mut row = vec![fresh[d]];
            row.extend([bad[d]; 4]);
            row
        })
        .collect();
    let r = oracle_allocate(&bd, &[1, 20, 20, 20, 20], 10.0);
    assert_eq!(r.congestion_dp, Some(1));
    assert_eq!(r.throughput, vec![6.0, 1.0, 1.0, 1.0, 1.0]);
}
