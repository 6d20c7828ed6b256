//! Device-centric controller: per-slot rate control, cellular scheduling,
//! local-area cooperation scheduling, and the virtual-queue updates. All
//! decisions use only state the deciding device holds.

use crate::channels::ChannelSnapshot;
use crate::model::{zero_matrix, BroadcastPick, Matrix, QueueBank, SlotDecision};
use crate::search::{best_broadcast, BroadcastSearch, ScheduleError};

/// Admitted virtual rate: argmax over [0, r_max] of M log(1+y) - lambda y,
/// i.e. clamp(M/lambda - 1, 0, r_max).
pub fn dcc_rate_control(lambda: f64, m_const: f64, r_max: f64) -> f64 {
    if lambda <= 0.0 {
        r_max
    } else {
        (m_const / lambda - 1.0).clamp(0.0, r_max)
    }
}

/// One device's cellular decision for a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CellularDecision {
    /// Virtual rates g[n]: index k is self-traffic, n != k is on behalf of n.
    pub g_row: Vec<f64>,
    /// Real rates x[n]: self-traffic unchanged, helped traffic backed off by beta.
    pub x_row: Vec<f64>,
    /// Packets requested on the downlink: max over n of x[n].
    pub request: f64,
}

/// Bang-bang per coordinate: the downlink carries the max of the per-flow
/// rates (same content), so each coordinate independently takes the full
/// capacity when its weight is positive. Zero-weight coordinates stay off.
pub fn dcc_cellular_schedule(
    k: usize,
    lambda_k: f64,
    eta_row: &[f64],
    q_row: &[f64],
    cap: f64,
    beta: f64,
) -> CellularDecision {
    let n = eta_row.len();
    let mut g_row = vec![0.0; n];
    let mut x_row = vec![0.0; n];
    if lambda_k > 0.0 {
        g_row[k] = cap;
        x_row[k] = cap;
    }
    for dev in 0..n {
        if dev != k && eta_row[dev] - q_row[dev] > 0.0 {
            g_row[dev] = cap;
            x_row[dev] = (cap - beta).max(0.0);
        }
    }
    let request = x_row.iter().cloned().fold(0.0, f64::max);
    CellularDecision {
        g_row,
        x_row,
        request,
    }
}

/// Pair weight for local-area cooperation: content for receiver k relayed by n.
fn pair_weight(queues: &QueueBank, k: usize, n: usize) -> f64 {
    queues.lambda[k] - queues.eta[n][k] + queues.q_real[n][k]
}

/// Activates the single point-to-point link maximizing weight x rate;
/// ties break to the lexicographically smallest (receiver, relay) pair.
/// Returns (g_local, h_local) with h[n][k] = g[k][n].
pub fn dcc_unicast_schedule(queues: &QueueBank, snapshot: &ChannelSnapshot) -> (Matrix, Matrix) {
    let n = queues.n_devices();
    let mut g_local = zero_matrix(n);
    let mut h_local = zero_matrix(n);
    let mut best: Option<(usize, usize, f64)> = None;
    for k in 0..n {
        for tx in 0..n {
            if tx == k {
                continue;
            }
            let w = pair_weight(queues, k, tx);
            let score = w * snapshot.local[tx][k];
            if w > 0.0 && score > 0.0 && best.map_or(true, |(_, _, s)| score > s) {
                best = Some((k, tx, score));
            }
        }
    }
    if let Some((k, tx, _)) = best {
        g_local[k][tx] = snapshot.local[tx][k];
        h_local[tx][k] = snapshot.local[tx][k];
    }
    (g_local, h_local)
}

/// Activates the single broadcast (transmitter, receiver set) maximizing the
/// weighted weakest-receiver rate; derives the per-link virtual and real
/// rates from the chosen allocation.
pub fn dcc_broadcast_schedule(
    queues: &QueueBank,
    snapshot: &ChannelSnapshot,
    search: BroadcastSearch,
) -> Result<(Vec<BroadcastPick>, Matrix, Matrix), ScheduleError> {
    let n = queues.n_devices();
    let mut weights = zero_matrix(n);
    for (tx, row) in weights.iter_mut().enumerate() {
        for (k, w) in row.iter_mut().enumerate() {
            if tx != k {
                *w = pair_weight(queues, k, tx);
            }
        }
    }
    let mut g_local = zero_matrix(n);
    let mut h_local = zero_matrix(n);
    let mut picks = Vec::new();
    if let Some(choice) = best_broadcast(&weights, snapshot, search)? {
        for &k in &choice.receivers {
            g_local[k][choice.tx] = choice.rate;
            h_local[choice.tx][k] = choice.rate;
        }
        picks.push(BroadcastPick {
            tx: choice.tx,
            receivers: choice.receivers,
            rate: choice.rate,
        });
    }
    Ok((picks, g_local, h_local))
}

/// Virtual-queue dynamics, driven by the slot's scheduled virtual rates.
/// Virtual queues are counters, so loss never thins them.
pub fn dcc_update_virtual_queues(queues: &mut QueueBank, decision: &SlotDecision) {
    let n = queues.n_devices();
    for k in 0..n {
        let local_service: f64 = (0..n)
            .filter(|&x| x != k)
            .map(|x| decision.g_local[k][x])
            .sum();
        queues.lambda[k] = (queues.lambda[k] - decision.g_cell[k][k] - local_service).max(0.0)
            + decision.y[k];
    }
    for tx in 0..n {
        for k in 0..n {
            if tx != k {
                queues.eta[tx][k] =
                    (queues.eta[tx][k] - decision.g_cell[tx][k]).max(0.0) + decision.g_local[k][tx];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{cellular_feasible, unicast_feasible, ChannelSnapshot};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_snapshot(n: usize) -> ChannelSnapshot {
        let mut local = zero_matrix(n);
        for tx in 0..n {
            for rx in 0..n {
                if tx != rx {
                    local[tx][rx] = 1.0;
                }
            }
        }
        ChannelSnapshot {
            cellular: vec![1.0; n],
            local,
        }
    }

    fn random_bank(rng: &mut StdRng, n: usize) -> QueueBank {
        let mut q = QueueBank::zeros(n);
        for k in 0..n {
            q.lambda[k] = rng.gen_range(0.0..10.0);
            for x in 0..n {
                if x != k {
                    q.eta[x][k] = rng.gen_range(0.0..10.0);
                    q.q_real[x][k] = rng.gen_range(0.0..5.0);
                }
            }
        }
        q
    }

    fn random_snapshot(rng: &mut StdRng, n: usize) -> ChannelSnapshot {
        let mut local = zero_matrix(n);
        for tx in 0..n {
            for rx in 0..n {
                if tx != rx {
                    local[tx][rx] = rng.gen_range(0.0..2.0);
                }
            }
        }
        ChannelSnapshot {
            cellular: (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
            local,
        }
    }

    #[test]
    fn rate_control_examples() {
        assert_eq!(dcc_rate_control(0.0, 50.0, 2.0), 2.0);
        assert_eq!(dcc_rate_control(50.0, 50.0, 2.0), 0.0);
        assert_eq!(dcc_rate_control(25.0, 50.0, 2.0), 1.0);
    }

    proptest! {
        #[test]
        fn rate_control_scales_with_m(lambda in 0.0f64..100.0, m in 0.1f64..500.0) {
            let a = dcc_rate_control(lambda, m, 2.0);
            let b = dcc_rate_control(lambda / m, 1.0, 2.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn rate_control_monotone_in_lambda(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(dcc_rate_control(hi, 50.0, 2.0) <= dcc_rate_control(lo, 50.0, 2.0));
        }
    }

    #[test]
    fn cellular_schedule_sign_pattern() {
        // lambda = 5, (eta - Q) row = [2, -1] for the two helped devices.
        let d = dcc_cellular_schedule(0, 5.0, &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0], 1.0, 0.001);
        assert_eq!(d.g_row, vec![1.0, 1.0, 0.0]);
        assert_eq!(d.x_row, vec![1.0, 0.999, 0.0]);
        assert_eq!(d.request, 1.0);
    }

    #[test]
    fn cellular_schedule_idle_cases() {
        let idle = dcc_cellular_schedule(0, 0.0, &[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 1.0, 0.001);
        assert_eq!(idle.g_row, vec![0.0; 3]);
        assert_eq!(idle.request, 0.0);

        let no_cap = dcc_cellular_schedule(0, 5.0, &[0.0, 3.0, 3.0], &[0.0, 0.0, 0.0], 0.0, 0.001);
        assert_eq!(no_cap.g_row, vec![0.0; 3]);
        assert_eq!(no_cap.x_row, vec![0.0; 3]);
    }

    #[test]
    fn beta_only_subtracts() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let k = rng.gen_range(0..n);
            let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            let d = dcc_cellular_schedule(k, rng.gen_range(0.0..10.0), &eta, &q, 1.0, 0.001);
            for dev in 0..n {
                assert!(d.x_row[dev] <= d.g_row[dev]);
            }
        }
    }

    #[test]
    fn unicast_schedule_examples() {
        // N=2: w(0,1) = 3, w(1,0) = 1 -> activate receiver 0 from relay 1.
        let mut q = QueueBank::zeros(2);
        q.lambda = vec![3.0, 1.0];
        let snap = unit_snapshot(2);
        let (g, h) = dcc_unicast_schedule(&q, &snap);
        assert_eq!(h[1][0], 1.0);
        assert_eq!(g[0][1], 1.0);
        assert_eq!(h[0][1], 0.0);

        // All weights non-positive: idle.
        let mut idle = QueueBank::zeros(2);
        idle.eta[0][1] = 5.0;
        idle.eta[1][0] = 5.0;
        let (g, h) = dcc_unicast_schedule(&idle, &snap);
        assert_eq!(g, zero_matrix(2));
        assert_eq!(h, zero_matrix(2));

        // Equal weights: lexicographic (receiver, relay) tie-break.
        let mut tie = QueueBank::zeros(3);
        tie.lambda = vec![2.0, 2.0, 2.0];
        let snap3 = unit_snapshot(3);
        let (g, h) = dcc_unicast_schedule(&tie, &snap3);
        assert_eq!(g[0][1], 1.0);
        assert_eq!(h[1][0], 1.0);
        assert_eq!(g.iter().flatten().sum::<f64>(), 1.0);
    }

    #[test]
    fn unicast_matches_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(2..6);
            let q = random_bank(&mut rng, n);
            let snap = random_snapshot(&mut rng, n);
            let (g, _h) = dcc_unicast_schedule(&q, &snap);

            // Brute force over idle plus every single activation at capacity.
            let mut best = 0.0f64;
            for k in 0..n {
                for tx in 0..n {
                    if tx != k {
                        let w = pair_weight(&q, k, tx);
                        best = best.max(w * snap.local[tx][k]);
                    }
                }
            }
            let achieved: f64 = (0..n)
                .flat_map(|k| (0..n).map(move |tx| (k, tx)))
                .filter(|&(k, tx)| k != tx)
                .map(|(k, tx)| pair_weight(&q, k, tx) * g[k][tx])
                .sum();
            assert!((achieved - best).abs() < 1e-9, "achieved {achieved} vs {best}");
        }
    }

    #[test]
    fn broadcast_examples() {
        let snap = unit_snapshot(3);
        // All weights positive: transmitter 0 broadcasts to both peers.
        let mut q = QueueBank::zeros(3);
        q.lambda = vec![4.0, 4.0, 4.0];
        let (picks, g, h) = dcc_broadcast_schedule(&q, &snap, BroadcastSearch::Exact).unwrap();
        assert_eq!(picks.len(), 1);
        assert_eq!(picks[0].tx, 0);
        assert_eq!(picks[0].receivers, vec![1, 2]);
        assert_eq!(h[0][1], 1.0);
        assert_eq!(h[0][2], 1.0);
        assert_eq!(g[1][0], 1.0);
        assert_eq!(g[2][0], 1.0);

        // One receiver weight negative: it is excluded from the set.
        let mut q2 = QueueBank::zeros(3);
        q2.lambda = vec![0.0, 4.0, 4.0];
        q2.eta[1][0] = 9.0;
        q2.eta[2][0] = 9.0;
        let (picks, _g, h) = dcc_broadcast_schedule(&q2, &snap, BroadcastSearch::Exact).unwrap();
        assert!(!picks[0].receivers.contains(&0));
        for tx in 0..3 {
            assert_eq!(h[tx][0], 0.0);
        }
    }

    #[test]
    fn broadcast_matches_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.gen_range(2..6);
            let q = random_bank(&mut rng, n);
            let snap = random_snapshot(&mut rng, n);
            let (_, g, _) = dcc_broadcast_schedule(&q, &snap, BroadcastSearch::Exact).unwrap();

            let mut best = 0.0f64;
            for tx in 0..n {
                let others: Vec<usize> = (0..n).filter(|&k| k != tx).collect();
                for mask in 1u32..(1 << others.len()) {
                    let set: Vec<usize> = others
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, &k)| k)
                        .collect();
                    let rate = set
                        .iter()
                        .map(|&k| snap.local[tx][k])
                        .fold(f64::INFINITY, f64::min);
                    let score: f64 = rate * set.iter().map(|&k| pair_weight(&q, k, tx)).sum::<f64>();
                    best = best.max(score);
                }
            }
            let achieved: f64 = (0..n)
                .flat_map(|k| (0..n).map(move |tx| (k, tx)))
                .filter(|&(k, tx)| k != tx)
                .map(|(k, tx)| pair_weight(&q, k, tx) * g[k][tx])
                .sum();
            assert!((achieved - best).abs() < 1e-9, "achieved {achieved} vs {best}");
        }
    }

    #[test]
    fn two_devices_broadcast_equals_unicast() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..1000 {
            let q = random_bank(&mut rng, 2);
            let snap = random_snapshot(&mut rng, 2);
            let (gu, hu) = dcc_unicast_schedule(&q, &snap);
            let (_, gb, hb) = dcc_broadcast_schedule(&q, &snap, BroadcastSearch::Exact).unwrap();
            assert_eq!(gu, gb);
            assert_eq!(hu, hb);
        }
    }

    #[test]
    fn singleton_broadcast_equals_unicast() {
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..500 {
            let n = rng.gen_range(2..6);
            let q = random_bank(&mut rng, n);
            let snap = random_snapshot(&mut rng, n);
            let (gu, hu) = dcc_unicast_schedule(&q, &snap);
            let (_, gb, hb) =
                dcc_broadcast_schedule(&q, &snap, BroadcastSearch::SingletonOnly).unwrap();
            assert_eq!(gu, gb);
            assert_eq!(hu, hb);
        }
    }

    #[test]
    fn schedules_respect_feasibility() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..300 {
            let n = rng.gen_range(2..6);
            let q = random_bank(&mut rng, n);
            let snap = random_snapshot(&mut rng, n);
            let (_, h) = dcc_unicast_schedule(&q, &snap);
            assert!(unicast_feasible(&h, &snap));

            let k = rng.gen_range(0..n);
            let eta: Vec<f64> = (0..n).map(|i| q.eta[k][i]).collect();
            let qr: Vec<f64> = (0..n).map(|i| q.q_real[k][i]).collect();
            let d = dcc_cellular_schedule(k, q.lambda[k], &eta, &qr, snap.cellular[k], 0.001);
            let mut requests = vec![0.0; n];
            requests[k] = d.request;
            assert!(cellular_feasible(&requests, &snap));
        }
    }

    #[test]
    fn virtual_queue_update_examples() {
        let mut q = QueueBank::zeros(2);
        q.lambda = vec![2.0, 3.0];
        q.eta[1][0] = 2.0;
        let before = q.clone();

        // All-zero decision leaves queues unchanged.
        let zero = SlotDecision::zeros(2);
        dcc_update_virtual_queues(&mut q, &zero);
        assert_eq!(q, before);

        // lambda admits y with no service.
        let mut q2 = QueueBank::zeros(2);
        let mut d = SlotDecision::zeros(2);
        d.y[0] = 1.0;
        dcc_update_virtual_queues(&mut q2, &d);
        assert_eq!(q2.lambda[0], 1.0);

        // eta drains by the relay's cellular virtual rate, grows by the
        // receiver's local virtual request.
        let mut q3 = QueueBank::zeros(2);
        q3.eta[1][0] = 2.0;
        let mut d3 = SlotDecision::zeros(2);
        d3.g_cell[1][0] = 1.0;
        d3.g_local[0][1] = 0.5;
        dcc_update_virtual_queues(&mut q3, &d3);
        assert_eq!(q3.eta[1][0], 1.5);
    }
}
