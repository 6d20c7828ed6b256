//! Independent fluid solver for the utility-maximization benchmark on small
//! instances. Channel regions are replaced by their time-sharing polytopes
//! over mean capacities; the optimum is found by projected-gradient ascent
//! with a feasibility/KKT certificate.

use thiserror::Error;

use crate::model::{zero_matrix, LocalMode, Matrix, SimConfig};

/// Mean-capacity description of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidInstance {
    pub n_devices: usize,
    /// Mean cellular downlink capacities.
    pub cellular: Vec<f64>,
    /// Mean local link capacities, `local[n][k]` from n to k.
    pub local: Matrix,
    pub mode: LocalMode,
}

impl FluidInstance {
    /// Mean capacities implied by a sim config; cellular capacity is thinned
    /// by the downlink loss probability.
    pub fn from_config(cfg: &SimConfig) -> Self {
        let n = cfg.n_devices;
        let cell_mean = cfg.cellular.mean() * (1.0 - cfg.cellular_loss_prob);
        let local_mean = cfg.local.mean() * (1.0 - cfg.local_loss_prob);
        let mut local = zero_matrix(n);
        for (tx, row) in local.iter_mut().enumerate() {
            for (rx, v) in row.iter_mut().enumerate() {
                if tx != rx {
                    *v = local_mean;
                }
            }
        }
        FluidInstance {
            n_devices: n,
            cellular: vec![cell_mean; n],
            local,
            mode: cfg.local_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OracleSolution {
    pub y_star: Vec<f64>,
    /// Direct per-device cellular download for itself.
    pub direct: Vec<f64>,
    /// relay[k][n]: content for device k reaching it through relay n.
    pub relay: Matrix,
    /// Broadcast allocations (transmitter, receivers, rate); empty in unicast.
    pub broadcast: Vec<(usize, Vec<usize>, f64)>,
    pub utility_star: f64,
    /// Max constraint violation at the returned point.
    pub max_violation: f64,
    /// Projected-gradient fixed-point residual at the returned point.
    pub kkt_residual: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("broadcast oracle supports at most {max} devices, got {n}")]
    BroadcastTooLarge { n: usize, max: usize },
    #[error("summary has {got} devices but solution has {want}")]
    DimensionMismatch { got: usize, want: usize },
}

const BROADCAST_ORACLE_MAX_DEVICES: usize = 6;

/// Variable layout for the fluid program, exposed so tests can check the
/// gradient against finite differences and probe feasibility directly.
///
/// After eliminating the flow-conservation equalities the free variables are
/// the direct downloads `a_k` and either the per-pair relay flows `s[k][n]`
/// (unicast) or the broadcast allocations `f[n][J]` (broadcast). The rate of
/// device k is `a_k` plus everything relayed to it; local airtime is shared
/// (one transmitter per slot), giving a single weighted budget constraint.
#[derive(Debug, Clone)]
pub struct FluidProblem {
    inst: FluidInstance,
    /// Upper bound per variable.
    upper: Vec<f64>,
    /// Airtime weight per variable (0 for the direct-download block).
    airtime: Vec<f64>,
    /// For each variable, the receivers credited with its rate.
    credits: Vec<Vec<usize>>,
    /// Broadcast only: (transmitter, receiver set) per local variable.
    bcast_sets: Vec<(usize, Vec<usize>)>,
}

impl FluidProblem {
    pub fn new(inst: &FluidInstance) -> Result<Self, OracleError> {
        let n = inst.n_devices;
        if inst.mode == LocalMode::Broadcast && n > BROADCAST_ORACLE_MAX_DEVICES {
            return Err(OracleError::BroadcastTooLarge {
                n,
                max: BROADCAST_ORACLE_MAX_DEVICES,
            });
        }
        let mut upper: Vec<f64> = inst.cellular.clone();
        let mut airtime = vec![0.0; n];
        let mut credits: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        let mut bcast_sets = Vec::new();

        match inst.mode {
            LocalMode::Unicast => {
                for k in 0..n {
                    for relay in 0..n {
                        if relay == k {
                            continue;
                        }
                        let link = inst.local[relay][k];
                        if link <= 0.0 || inst.cellular[relay] <= 0.0 {
                            continue;
                        }
                        // Relay must download the flow (box at its cellular
                        // mean) and spends 1/link airtime per unit.
                        upper.push(inst.cellular[relay].min(link));
                        airtime.push(1.0 / link);
                        credits.push(vec![k]);
                        bcast_sets.push((relay, vec![k]));
                    }
                }
            }
            LocalMode::Broadcast => {
                for tx in 0..n {
                    if inst.cellular[tx] <= 0.0 {
                        continue;
                    }
                    let others: Vec<usize> = (0..n).filter(|&k| k != tx).collect();
                    for mask in 1u32..(1u32 << others.len()) {
                        let set: Vec<usize> = others
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask & (1 << i) != 0)
                            .map(|(_, &k)| k)
                            .collect();
                        let rate = set
                            .iter()
                            .map(|&k| inst.local[tx][k])
                            .fold(f64::INFINITY, f64::min);
                        if rate <= 0.0 {
                            continue;
                        }
                        upper.push(inst.cellular[tx].min(rate));
                        airtime.push(1.0 / rate);
                        credits.push(set.clone());
                        bcast_sets.push((tx, set));
                    }
                }
            }
        }
        Ok(FluidProblem {
            inst: inst.clone(),
            upper,
            airtime,
            credits,
            bcast_sets,
        })
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn n_devices(&self) -> usize {
        self.inst.n_devices
    }

    /// Per-device rates implied by a variable vector.
    pub fn rates(&self, z: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.inst.n_devices];
        for (i, &v) in z.iter().enumerate() {
            for &k in &self.credits[i] {
                y[k] += v;
            }
        }
        y
    }

    /// Total utility: sum of log(1 + y_k).
    pub fn objective(&self, z: &[f64]) -> f64 {
        self.rates(z).iter().map(|&y| (1.0 + y).ln()).sum()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let y = self.rates(z);
        let marginal: Vec<f64> = y.iter().map(|&v| 1.0 / (1.0 + v)).collect();
        self.credits
            .iter()
            .map(|ks| ks.iter().map(|&k| marginal[k]).sum())
            .collect()
    }

    /// Per-(relay, receiver) cellular coupling rows for the broadcast mode:
    /// everything relay n forwards toward k must fit its downlink mean.
    fn cellular_rows(&self) -> Vec<(Vec<usize>, f64)> {
        if self.inst.mode != LocalMode::Broadcast {
            return Vec::new();
        }
        let n = self.inst.n_devices;
        let base = n;
        let mut rows = Vec::new();
        for tx in 0..n {
            for k in 0..n {
                if tx == k {
                    continue;
                }
                let members: Vec<usize> = self
                    .bcast_sets
                    .iter()
                    .enumerate()
                    .filter(|(_, (t, set))| *t == tx && set.contains(&k))
                    .map(|(i, _)| base + i)
                    .collect();
                if !members.is_empty() {
                    rows.push((members, self.inst.cellular[tx]));
                }
            }
        }
        rows
    }

    /// Euclidean projection onto the feasible set (box, airtime budget, and
    /// in broadcast mode the per-pair cellular rows) via cyclic Dykstra.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut x: Vec<f64> = z.to_vec();
        let rows = self.cellular_rows();
        if rows.is_empty() {
            return self.project_box_airtime(&x);
        }
        // Dykstra over {box + airtime} and each cellular halfspace.
        let sets = 1 + rows.len();
        let mut corrections = vec![vec![0.0; dim]; sets];
        for _ in 0..400 {
            let mut moved = 0.0f64;
            for (si, set) in std::iter::once(None)
                .chain(rows.iter().map(Some))
                .enumerate()
            {
                let mut v: Vec<f64> = x
                    .iter()
                    .zip(&corrections[si])
                    .map(|(a, c)| a + c)
                    .collect();
                let projected = match set {
                    None => self.project_box_airtime(&v),
                    Some((members, cap)) => {
                        let total: f64 = members.iter().map(|&i| v[i]).sum();
                        if total > *cap {
                            let shift = (total - cap) / members.len() as f64;
                            for &i in members {
                                v[i] -= shift;
                            }
                        }
                        v
                    }
                };
                for i in 0..dim {
                    corrections[si][i] = x[i] + corrections[si][i] - projected[i];
                    moved = moved.max((x[i] - projected[i]).abs());
                }
                x = projected;
            }
            if moved < 1e-13 {
                break;
            }
        }
        x
    }

    /// Exact projection onto {0 <= x <= upper, sum airtime_i x_i <= 1} by
    /// bisection on the budget multiplier.
    fn project_box_airtime(&self, z: &[f64]) -> Vec<f64> {
        let clipped: Vec<f64> = z
            .iter()
            .zip(&self.upper)
            .map(|(v, ub)| v.clamp(0.0, *ub))
            .collect();
        let used: f64 = clipped
            .iter()
            .zip(&self.airtime)
            .map(|(v, w)| v * w)
            .sum();
        if used <= 1.0 {
            return clipped;
        }
        let eval = |tau: f64| -> f64 {
            z.iter()
                .zip(&self.upper)
                .zip(&self.airtime)
                .map(|((v, ub), w)| (v - tau * w).clamp(0.0, *ub) * w)
                .sum()
        };
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while eval(hi) > 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eval(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        z.iter()
            .zip(&self.upper)
            .zip(&self.airtime)
            .map(|((v, ub), w)| (v - tau * w).clamp(0.0, *ub))
            .collect()
    }

    /// Largest constraint violation at a point (0 when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, &v) in z.iter().enumerate() {
            worst = worst.max(-v).max(v - self.upper[i]);
        }
        let used: f64 = z.iter().zip(&self.airtime).map(|(v, w)| v * w).sum();
        worst = worst.max(used - 1.0);
        for (members, cap) in self.cellular_rows() {
            let total: f64 = members.iter().map(|&i| z[i]).sum();
            worst = worst.max(total - cap);
        }
        worst
    }

    /// Projected-gradient fixed-point residual with a unit probe step.
    pub fn residual(&self, z: &[f64]) -> f64 {
        let g = self.gradient(z);
        let probe: Vec<f64> = z.iter().zip(&g).map(|(v, gi)| v + gi).collect();
        let back = self.project(&probe);
        z.iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves the fluid program from the zero vector: diminishing-step projected
/// gradient (0.1/sqrt(t)) followed by a fixed-step polish, returning the
/// optimum with its feasibility and KKT certificate.
pub fn solve_fluid(inst: &FluidInstance) -> Result<OracleSolution, OracleError> {
    let prob = FluidProblem::new(inst)?;
    let dim = prob.dim();
    let mut z = vec![0.0; dim];
    let tol = 1e-7;

    'outer: for phase in 0..2 {
        let max_iters = if phase == 0 { 100_000 } else { 40_000 };
        for t in 1..=max_iters {
            let g = prob.gradient(&z);
            let step = if phase == 0 {
                0.1 / (t as f64).sqrt()
            } else {
                0.05
            };
            let cand: Vec<f64> = z.iter().zip(&g).map(|(v, gi)| v + step * gi).collect();
            z = prob.project(&cand);
            if t % 200 == 0 && prob.residual(&z) < tol {
                break 'outer;
            }
        }
    }

    let y_star = prob.rates(&z);
    let n = inst.n_devices;
    let mut relay = zero_matrix(n);
    let mut broadcast = Vec::new();
    for (i, (tx, set)) in prob.bcast_sets.iter().enumerate() {
        let v = z[n + i];
        for &k in set {
            relay[k][*tx] += v;
        }
        if inst.mode == LocalMode::Broadcast && v > 1e-9 {
            broadcast.push((*tx, set.clone(), v));
        }
    }
    Ok(OracleSolution {
        utility_star: prob.objective(&z),
        y_star,
        direct: z[..n].to_vec(),
        relay,
        broadcast,
        max_violation: prob.max_violation(&z),
        kkt_residual: prob.residual(&z),
    })
}

/// Relative shortfall of an achieved utility from the fluid optimum.
pub fn utility_gap(
    summary: &crate::metrics::RunSummary,
    solution: &OracleSolution,
) -> Result<f64, OracleError> {
    if summary.n_devices != solution.y_star.len() {
        return Err(OracleError::DimensionMismatch {
            got: summary.n_devices,
            want: solution.y_star.len(),
        });
    }
    if solution.utility_star.abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok((solution.utility_star - summary.utility) / solution.utility_star.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_instance(n: usize, mode: LocalMode) -> FluidInstance {
        let mut local = zero_matrix(n);
        for tx in 0..n {
            for rx in 0..n {
                if tx != rx {
                    local[tx][rx] = 1.0;
                }
            }
        }
        FluidInstance {
            n_devices: n,
            cellular: vec![1.0; n],
            local,
            mode,
        }
    }

    #[test]
    fn single_device_optimum() {
        let sol = solve_fluid(&unit_instance(1, LocalMode::Unicast)).unwrap();
        assert!((sol.y_star[0] - 1.0).abs() < 1e-4, "y* = {:?}", sol.y_star);
        assert!((sol.utility_star - 2f64.ln()).abs() < 1e-4);
        assert!(sol.max_violation <= 1e-6);
    }

    /// Independent check for the symmetric three-device unicast optimum:
    /// everyone downloads at full mean rate, and a fine grid splits the unit
    /// of shared local airtime across the pair flows.
    fn grid_best_unicast_symmetric() -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut best_y = 0.0;
        let steps = 20_000;
        for i in 0..=steps {
            // Per-device relayed extra; 6 pair flows of s use 6 s airtime <= 1.
            let s = i as f64 / steps as f64 / 6.0;
            let y = 1.0 + 2.0 * s;
            let u = 3.0 * (1.0 + y).ln();
            if u > best {
                best = u;
                best_y = y;
            }
        }
        best_y
    }

    fn grid_best_broadcast_symmetric() -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut best_y = 0.0;
        let steps = 20_000;
        for i in 0..=steps {
            // Each device broadcasts alpha to both peers; 3 alpha <= 1.
            let alpha = i as f64 / steps as f64 / 3.0;
            let y = 1.0 + 2.0 * alpha;
            let u = 3.0 * (1.0 + y).ln();
            if u > best {
                best = u;
                best_y = y;
            }
        }
        best_y
    }

    #[test]
    fn three_device_unicast_optimum_is_four_thirds() {
        let grid = grid_best_unicast_symmetric();
        assert!((grid - 4.0 / 3.0).abs() < 1e-4, "grid y = {grid}");
        let sol = solve_fluid(&unit_instance(3, LocalMode::Unicast)).unwrap();
        for &y in &sol.y_star {
            assert!((y - 4.0 / 3.0).abs() < 2e-3, "y* = {:?}", sol.y_star);
        }
        assert!(sol.max_violation <= 1e-6);
    }

    #[test]
    fn three_device_broadcast_optimum_is_five_thirds() {
        let grid = grid_best_broadcast_symmetric();
        assert!((grid - 5.0 / 3.0).abs() < 1e-4, "grid y = {grid}");
        let sol = solve_fluid(&unit_instance(3, LocalMode::Broadcast)).unwrap();
        for &y in &sol.y_star {
            assert!((y - 5.0 / 3.0).abs() < 2e-3, "y* = {:?}", sol.y_star);
        }
        assert!(sol.max_violation <= 1e-6);
    }

    #[test]
    fn broadcast_rejects_large_populations() {
        assert!(matches!(
            solve_fluid(&unit_instance(7, LocalMode::Broadcast)),
            Err(OracleError::BroadcastTooLarge { .. })
        ));
        // Unicast mode has no subset blow-up.
        assert!(solve_fluid(&unit_instance(7, LocalMode::Unicast)).is_ok());
    }

    #[test]
    fn zero_capacity_instance_returns_zero() {
        let inst = FluidInstance {
            n_devices: 2,
            cellular: vec![0.0, 0.0],
            local: zero_matrix(2),
            mode: LocalMode::Unicast,
        };
        let sol = solve_fluid(&inst).unwrap();
        assert_eq!(sol.y_star, vec![0.0, 0.0]);
        assert_eq!(sol.utility_star, 0.0);
        assert!(sol.max_violation <= 1e-6);
    }

    #[test]
    fn solver_is_deterministic() {
        let a = solve_fluid(&unit_instance(3, LocalMode::Broadcast)).unwrap();
        let b = solve_fluid(&unit_instance(3, LocalMode::Broadcast)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unicast_never_beats_broadcast() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.gen_range(2..5);
            let mut local = zero_matrix(n);
            for tx in 0..n {
                for rx in 0..n {
                    if tx != rx {
                        local[tx][rx] = rng.gen_range(0.1..2.0);
                    }
                }
            }
            let cellular: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
            let uni = solve_fluid(&FluidInstance {
                n_devices: n,
                cellular: cellular.clone(),
                local: local.clone(),
                mode: LocalMode::Unicast,
            })
            .unwrap();
            let bc = solve_fluid(&FluidInstance {
                n_devices: n,
                cellular,
                local,
                mode: LocalMode::Broadcast,
            })
            .unwrap();
            assert!(
                uni.utility_star <= bc.utility_star + 1e-5,
                "unicast {} > broadcast {}",
                uni.utility_star,
                bc.utility_star
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(29);
        for mode in [LocalMode::Unicast, LocalMode::Broadcast] {
            let prob = FluidProblem::new(&unit_instance(3, mode)).unwrap();
            for _ in 0..50 {
                let raw: Vec<f64> = (0..prob.dim()).map(|_| rng.gen_range(0.0..2.0)).collect();
                let z = prob.project(&raw);
                let g = prob.gradient(&z);
                let eps = 1e-6;
                for i in 0..prob.dim() {
                    let mut hi = z.clone();
                    let mut lo = z.clone();
                    hi[i] += eps;
                    lo[i] -= eps;
                    let fd = (prob.objective(&hi) - prob.objective(&lo)) / (2.0 * eps);
                    let denom = g[i].abs().max(1.0);
                    assert!(
                        (g[i] - fd).abs() / denom < 1e-5,
                        "grad {} vs fd {}",
                        g[i],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn utility_gap_examples() {
        let sol = solve_fluid(&unit_instance(3, LocalMode::Unicast)).unwrap();
        let mut summary = crate::metrics::RunSummary {
            scheme: crate::model::Scheme::Dcc,
            n_devices: 3,
            mean_rate_per_device: sol.y_star.clone(),
            mean_goodput_per_device: sol.y_star.clone(),
            mean_queue: crate::metrics::QueueFamilyMeans {
                lambda: 0.0,
                eta: 0.0,
                q_real: 0.0,
                mu: 0.0,
                nu: 0.0,
            },
            delay_estimate: 0.0,
            overhead_percent: 0.0,
            utility: sol.utility_star,
        };
        assert!(utility_gap(&summary, &sol).unwrap().abs() < 1e-12);

        summary.utility = 0.0;
        assert!((utility_gap(&summary, &sol).unwrap() - 1.0).abs() < 1e-12);

        summary.n_devices = 2;
        assert!(matches!(
            utility_gap(&summary, &sol),
            Err(OracleError::DimensionMismatch { .. })
        ));
    }
}
