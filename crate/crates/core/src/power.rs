//! Exact downlink power allocation: max-min SE and max-prod SINR.
//!
//! Both problems act on a [`GainTable`], so they are deterministic
//! finite-dimensional programs. Max-min SE is solved by bisection over a
//! common SINR target whose feasibility test is a Perron-Frobenius
//! spectral-radius condition plus per-cell budgets; the feasibility
//! subproblem has a component-wise minimal solution from one linear solve.
//! Max-prod SINR becomes concave after the change of variables
//! `y = ln(rho)` and is maximized with a logarithmic barrier and Armijo
//! backtracking gradient ascent.

use nalgebra::{DMatrix, DVector};

use crate::se::GainTable;
use crate::{Error, Result};

/// Power-allocation strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    MaxMin,
    MaxProd,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::MaxMin => write!(f, "maxmin"),
            Strategy::MaxProd => write!(f, "maxprod"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxmin" => Ok(Strategy::MaxMin),
            "maxprod" => Ok(Strategy::MaxProd),
            other => Err(Error::Format(format!("unknown strategy `{other}`"))),
        }
    }
}

/// A DL power allocation with solver metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// Per-UE DL powers (mW), flat-indexed `j*K + k`.
    pub rho: Vec<f64>,
    /// Achieved objective: min-SE (bit/s/Hz) for max-min, sum-log-SINR for
    /// max-prod.
    pub objective: f64,
    /// Solver iterations spent.
    pub iterations: usize,
    /// Whether the stopping tolerance was met (vs an iteration cap).
    pub converged: bool,
}

impl PowerAllocation {
    /// Total transmit power of each cell.
    pub fn cell_sums(&self, l: usize, k: usize) -> Vec<f64> {
        (0..l)
            .map(|j| self.rho[j * k..(j + 1) * k].iter().sum())
            .collect()
    }

    /// All powers nonnegative and every cell within budget (1e-9 slack).
    pub fn is_budget_feasible(&self, l: usize, k: usize, p_max: f64) -> bool {
        self.rho.iter().all(|&r| r >= 0.0)
            && self
                .cell_sums(l, k)
                .iter()
                .all(|&s| s <= p_max * (1.0 + 1e-9))
    }
}

/// Tunables for both solvers, exposed as configuration keys.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative bracket width for max-min bisection.
    pub maxmin_tol: f64,
    /// Max bisection steps.
    pub maxmin_max_iter: usize,
    /// Base inner gradient tolerance for max-prod.
    pub maxprod_tol: f64,
    /// Total inner ascent iterations across all barrier stages.
    pub maxprod_max_iter: usize,
    /// Barrier weight schedule: start, multiplicative decay, floor.
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    /// Armijo sufficient-increase constant and step shrink factor.
    pub armijo_c: f64,
    pub armijo_shrink: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            maxmin_tol: 1e-10,
            maxmin_max_iter: 300,
            maxprod_tol: 1e-7,
            maxprod_max_iter: 200_000,
            mu_init: 1.0,
            mu_factor: 0.2,
            mu_min: 1e-9,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
        }
    }
}

impl SolverOptions {
    /// Override fields from `key = value` text; unknown keys are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        use crate::geometry::{parse_kv_lines, parse_num};
        for (key, value) in parse_kv_lines(text)? {
            match key.as_str() {
                "maxmin_tol" => self.maxmin_tol = parse_num(&key, &value)?,
                "maxmin_max_iter" => self.maxmin_max_iter = parse_num(&key, &value)?,
                "maxprod_tol" => self.maxprod_tol = parse_num(&key, &value)?,
                "maxprod_max_iter" => self.maxprod_max_iter = parse_num(&key, &value)?,
                "mu_init" => self.mu_init = parse_num(&key, &value)?,
                "mu_factor" => self.mu_factor = parse_num(&key, &value)?,
                "mu_min" => self.mu_min = parse_num(&key, &value)?,
                "armijo_c" => self.armijo_c = parse_num(&key, &value)?,
                "armijo_shrink" => self.armijo_shrink = parse_num(&key, &value)?,
                _ => {}
            }
        }
        if [self.maxmin_tol, self.maxprod_tol]
            .iter()
            .any(|&t| t.is_nan() || t <= 0.0)
        {
            return Err(Error::Config("solver tolerances must be > 0".into()));
        }
        Ok(())
    }
}

// ── Perron-Frobenius feasibility ──

/// Spectral radius of a nonnegative matrix by power iteration.
///
/// The iteration runs on `A + eps*I` (same Perron vector, eigenvalues
/// shifted by exactly `eps`) so that imprimitive matrices cannot make the
/// iterates oscillate; up to 10^4 iterations, tolerance 1e-10.
fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let scale = a.iter().cloned().fold(0.0f64, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let eps = 1e-3 * scale;
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = f64::INFINITY;
    for _ in 0..10_000 {
        let mut y = a * &x;
        y.axpy(eps, &x, 1.0);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        y.unscale_mut(norm);
        if (norm - lambda).abs() <= 1e-10 * norm.max(1.0) {
            return (norm - eps).max(0.0);
        }
        lambda = norm;
        x = y;
    }
    (lambda - eps).max(0.0)
}

/// The normalized interference matrix `C[(v),(s)] = b_vs / a_v` and noise
/// load `u[v] = sigma2 / a_v` of the SINR balancing system.
fn balance_system(g: &GainTable) -> (DMatrix<f64>, DVector<f64>) {
    let lk = g.lk();
    let c = DMatrix::from_fn(lk, lk, |v, s| g.b[v * lk + s] / g.a[v]);
    let u = DVector::from_fn(lk, |v, _| g.sigma2 / g.a[v]);
    (c, u)
}

/// Component-wise minimal powers meeting SINR target `t` for every UE, or
/// `None` when the target is infeasible at any power level.
///
/// Solves `rho = t(C rho + u)`: the unique minimal solution
/// `t (I - tC)^{-1} u` exists iff the spectral radius of `tC` is below 1
/// (checked with a 1e-9 safety margin).
pub fn minimal_power_for_target(t: f64, g: &GainTable) -> Result<Option<Vec<f64>>> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("SINR target must be >= 0, got {t}")));
    }
    let (c, u) = balance_system(g);
    Ok(minimal_power_inner(t, &c, &u, spectral_radius(&c)))
}

/// Shared core: `sr_c` is the spectral radius of `C`, exploited as
/// `sr(tC) = t * sr(C)` so bisection pays for one power iteration total.
fn minimal_power_inner(
    t: f64,
    c: &DMatrix<f64>,
    u: &DVector<f64>,
    sr_c: f64,
) -> Option<Vec<f64>> {
    let lk = c.nrows();
    if t == 0.0 {
        return Some(vec![0.0; lk]);
    }
    if t * sr_c >= 1.0 - 1e-9 {
        return None;
    }
    let mut system = -c * t;
    for d in 0..lk {
        system[(d, d)] += 1.0;
    }
    let rhs = u * t;
    let rho = nalgebra::LU::new(system).solve(&rhs)?;
    // (I - tC)^{-1} = sum (tC)^k is nonnegative, so the solution is too;
    // anything below zero is roundoff.
    Some(rho.iter().map(|&r| r.max(0.0)).collect())
}

fn max_cell_sum(rho: &[f64], l: usize, k: usize) -> f64 {
    (0..l)
        .map(|j| rho[j * k..(j + 1) * k].iter().sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximize the minimum SE over all UEs subject to per-cell budgets.
///
/// Bisection over the common SINR target `t`: a target is feasible iff the
/// minimal-power solution exists and fits every budget (it is component-wise
/// smallest, so it certifies budget feasibility). The upper bracket is found
/// by doubling from `t = 1`. Because noise is positive, the optimum always
/// saturates at least one budget, so bisection also drives that slack to
/// zero. All SINRs equal the returned target by construction.
pub fn maxmin_solve(g: &GainTable, p_max: f64, opts: &SolverOptions) -> Result<PowerAllocation> {
    if p_max.is_nan() || p_max <= 0.0 {
        return Err(Error::Domain("p_max must be > 0".into()));
    }
    if g.a.iter().chain(g.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("gain table contains non-finite entries".into()));
    }
    let tol = opts.maxmin_tol;
    let (c, u) = balance_system(g);
    let sr_c = spectral_radius(&c);
    let feasible = |t: f64| -> Option<Vec<f64>> {
        minimal_power_inner(t, &c, &u, sr_c)
            .filter(|rho| max_cell_sum(rho, g.l, g.k) <= p_max)
    };

    // Bracket the optimum: double until infeasible.
    let mut t_lo = 0.0;
    let mut best = vec![0.0; g.lk()];
    let mut t_hi = 1.0;
    let mut doublings = 0;
    while let Some(rho) = feasible(t_hi) {
        t_lo = t_hi;
        best = rho;
        t_hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Solver(
                "max-min target grew without bound; check the gain table".into(),
            ));
        }
    }

    let mut iterations = doublings;
    let mut converged = false;
    for _ in 0..opts.maxmin_max_iter {
        iterations += 1;
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            converged = true; // bracket at floating-point resolution
            break;
        }
        match feasible(mid) {
            Some(rho) => {
                t_lo = mid;
                best = rho;
            }
            None => t_hi = mid,
        }
        let tight = t_lo > 0.0
            && (p_max - max_cell_sum(&best, g.l, g.k)) <= 1e-8 * p_max;
        if t_hi - t_lo <= tol * t_lo && tight {
            converged = true;
            break;
        }
    }

    Ok(PowerAllocation {
        rho: best,
        objective: g.prelog * (1.0 + t_lo).log2(),
        iterations,
        converged,
    })
}

// ── Max-prod SINR in the log-power domain ──

/// Sum-log-SINR objective and its exact gradient at log-powers `y`.
///
/// `f(y) = sum_v [ y_v + ln a_v - ln(sum_s e^{y_s} b_vs + sigma2) ]`, concave
/// in `y`; the log-sum is evaluated with a max shift so large `y` cannot
/// overflow.
pub fn maxprod_objective(y: &[f64], g: &GainTable) -> (f64, Vec<f64>) {
    let lk = g.lk();
    debug_assert_eq!(y.len(), lk);
    let shift = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|&v| (v - shift).exp()).collect();
    let noise_scaled = g.sigma2 * (-shift).exp();

    let mut value = 0.0;
    let mut inv_denom = vec![0.0; lk]; // 1 / (denominator * e^{-shift})
    for v in 0..lk {
        let row = &g.b[v * lk..(v + 1) * lk];
        let acc = noise_scaled + row.iter().zip(&e).map(|(b, ev)| b * ev).sum::<f64>();
        let ln_denom = if acc > 0.0 {
            shift + acc.ln()
        } else {
            // Every b in this row is zero and the scaled noise underflowed.
            g.sigma2.ln()
        };
        inv_denom[v] = if acc > 0.0 { 1.0 / acc } else { 0.0 };
        value += y[v] + g.a[v].ln() - ln_denom;
    }

    let mut grad = vec![1.0; lk];
    for (n, grad_n) in grad.iter_mut().enumerate() {
        let acc: f64 = inv_denom
            .iter()
            .enumerate()
            .map(|(v, inv)| g.b[v * lk + n] * inv)
            .sum();
        *grad_n -= e[n] * acc;
    }
    (value, grad)
}

/// Barrier objective `f(y) + mu * sum_j ln(p_max - sum_k e^{y_jk})`; `None`
/// outside the open feasible region. Value-only for line searches.
fn barrier_value(y: &[f64], g: &GainTable, p_max: f64, mu: f64) -> Option<f64> {
    let mut penalty = 0.0;
    for j in 0..g.l {
        let slack = p_max - y[j * g.k..(j + 1) * g.k].iter().map(|v| v.exp()).sum::<f64>();
        if slack <= 0.0 {
            return None;
        }
        penalty += slack.ln();
    }
    let (f, _) = maxprod_objective(y, g);
    Some(f + mu * penalty)
}

/// Barrier value, its gradient, and the raw objective; `None` outside the
/// feasible region.
fn barrier_value_grad(
    y: &[f64],
    g: &GainTable,
    p_max: f64,
    mu: f64,
) -> Option<(f64, Vec<f64>, f64)> {
    let mut slacks = vec![0.0; g.l];
    let mut penalty = 0.0;
    for j in 0..g.l {
        let slack = p_max - y[j * g.k..(j + 1) * g.k].iter().map(|v| v.exp()).sum::<f64>();
        if slack <= 0.0 {
            return None;
        }
        slacks[j] = slack;
        penalty += slack.ln();
    }
    let (f, mut grad) = maxprod_objective(y, g);
    for (j, &slack) in slacks.iter().enumerate() {
        let cell = j * g.k..(j + 1) * g.k;
        for (g_i, y_i) in grad[cell.clone()].iter_mut().zip(&y[cell]) {
            *g_i -= mu * y_i.exp() / slack;
        }
    }
    Some((f + mu * penalty, grad, f))
}

/// Maximize the product of SINRs subject to per-cell budgets.
///
/// Interior-point ascent on the concave log-domain program: for each barrier
/// weight in the schedule, run gradient ascent with Armijo backtracking
/// (initial step 1) until the gradient infinity-norm falls below
/// `maxprod_tol * (1 + |f|)`, then shrink the weight. Starts from the strict
/// interior `rho = 0.5 * p_max / K`.
pub fn maxprod_solve(g: &GainTable, p_max: f64, opts: &SolverOptions) -> Result<PowerAllocation> {
    if p_max.is_nan() || p_max <= 0.0 {
        return Err(Error::Domain("p_max must be > 0".into()));
    }
    let lk = g.lk();
    let mut y = vec![(0.5 * p_max / g.k as f64).ln(); lk];
    let mut iterations = 0usize;
    let mut converged = true;

    let mut mu = opts.mu_init;
    while mu >= opts.mu_min {
        // Near the barrier wall the representable F-increments shrink below
        // one ulp before the gradient test can trigger, and Armijo then
        // accepts neutrally-stable steps that oscillate across the optimum.
        // Track actual progress and stop the stage once F stagnates.
        let mut f_best = f64::NEG_INFINITY;
        let mut stagnant = 0usize;
        loop {
            let (fb, grad, f_raw) = barrier_value_grad(&y, g, p_max, mu)
                .ok_or_else(|| Error::Solver("barrier iterate left the feasible region".into()))?;
            let grad_inf = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if grad_inf < opts.maxprod_tol * (1.0 + f_raw.abs()) {
                break;
            }
            if fb > f_best + 1e-13 * (1.0 + f_best.abs()) {
                f_best = fb;
                stagnant = 0;
            } else {
                stagnant += 1;
                if stagnant >= 50 {
                    break; // at floating-point resolution for this stage
                }
            }
            if iterations >= opts.maxprod_max_iter {
                converged = false;
                break;
            }
            iterations += 1;

            let grad_sq: f64 = grad.iter().map(|v| v * v).sum();
            let mut alpha = 1.0;
            let mut stepped = false;
            for _ in 0..80 {
                let cand: Vec<f64> =
                    y.iter().zip(&grad).map(|(v, d)| v + alpha * d).collect();
                if let Some(fc) = barrier_value(&cand, g, p_max, mu) {
                    if fc >= fb + opts.armijo_c * alpha * grad_sq {
                        y = cand;
                        stepped = true;
                        break;
                    }
                }
                alpha *= opts.armijo_shrink;
            }
            if !stepped {
                break; // no representable improving step remains
            }
        }
        if !converged {
            break;
        }
        mu *= opts.mu_factor;
    }

    let rho: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let (objective, _) = maxprod_objective(&y, g);
    Ok(PowerAllocation {
        rho,
        objective,
        iterations,
        converged,
    })
}

/// Dispatch a strategy on a gain table.
pub fn solve(
    g: &GainTable,
    strategy: Strategy,
    p_max: f64,
    opts: &SolverOptions,
) -> Result<PowerAllocation> {
    match strategy {
        Strategy::MaxMin => maxmin_solve(g, p_max, opts),
        Strategy::MaxProd => maxprod_solve(g, p_max, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se::testutil::random_table;
    use crate::se::{se_per_ue, sinr_all, GainTable};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn single_ue(a: f64, b_self: f64, sigma2: f64) -> GainTable {
        GainTable::new(1, 1, vec![a], vec![b_self], sigma2, 0.975, 1).unwrap()
    }

    /// The hand-checkable 2-UE instance: a = 1, cross b = 0.5, sigma2 = 1.
    fn symmetric_pair() -> GainTable {
        GainTable::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.5, 0.5, 0.0], 1.0, 0.975, 1).unwrap()
    }

    #[test]
    fn zero_target_needs_zero_power() {
        let g = random_table(4, 5, 1);
        let rho = minimal_power_for_target(0.0, &g).unwrap().unwrap();
        assert!(rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn scalar_minimal_power() {
        let g = single_ue(2.0, 0.0, 0.5);
        let rho = minimal_power_for_target(4.0, &g).unwrap().unwrap();
        assert!((rho[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_minimal_power() {
        let g = symmetric_pair();
        let rho = minimal_power_for_target(1.0, &g).unwrap().unwrap();
        assert!((rho[0] - 2.0).abs() < 1e-9);
        assert!((rho[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_target_detected() {
        // sr(C) = 0.5, so t = 2 puts sr(tC) exactly at 1.
        let g = symmetric_pair();
        assert!(minimal_power_for_target(2.0, &g).unwrap().is_none());
        assert!(minimal_power_for_target(1.99, &g).unwrap().is_some());
    }

    #[test]
    fn minimal_power_achieves_target_exactly() {
        // b < 0.2 and a > 0.1 bound the spectral radius of C by 12, so a
        // target of 0.05 is always feasible for this table family.
        let g = random_table(2usize, 3, 7);
        let t = 0.05;
        let rho = minimal_power_for_target(t, &g).unwrap().unwrap();
        for gamma in sinr_all(&g, &rho) {
            assert!((gamma - t).abs() < 1e-9 * t);
        }
    }

    #[test]
    fn minimal_power_is_dominated_by_any_feasible_point() {
        let g = random_table(1, 4, 11);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..20 {
            let rho: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 5.0 + 0.5).collect();
            let t = sinr_all(&g, &rho).into_iter().fold(f64::INFINITY, f64::min);
            let minimal = minimal_power_for_target(t, &g).unwrap().unwrap();
            for (lo, hi) in minimal.iter().zip(&rho) {
                assert!(lo <= &(hi * (1.0 + 1e-9)), "minimal {lo} vs feasible {hi}");
            }
        }
    }

    #[test]
    fn maxmin_single_ue_saturates_budget() {
        let g = single_ue(1.5, 0.2, 0.3);
        let p_max = 10.0;
        let alloc = maxmin_solve(&g, p_max, &SolverOptions::default()).unwrap();
        assert!(alloc.converged);
        assert!((alloc.rho[0] - p_max).abs() < 1e-6 * p_max);
        let t = p_max * 1.5 / (p_max * 0.2 + 0.3);
        let got = sinr_all(&g, &alloc.rho)[0];
        assert!((got - t).abs() < 1e-6 * t);
        assert!((alloc.objective - se_per_ue(got, &g)).abs() < 1e-12);
    }

    #[test]
    fn maxmin_equalizes_sinrs_and_saturates_a_budget() {
        for seed in 0..5 {
            let g = random_table(4, 5, 100 + seed);
            let p_max = 1000.0;
            let alloc = maxmin_solve(&g, p_max, &SolverOptions::default()).unwrap();
            assert!(alloc.converged, "seed {seed}");
            assert!(alloc.is_budget_feasible(4, 5, p_max));
            let gammas = sinr_all(&g, &alloc.rho);
            let min = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = gammas.iter().cloned().fold(0.0f64, f64::max);
            assert!((max - min) / min < 1e-6, "SINR spread too wide");
            let tight = alloc
                .cell_sums(4, 5)
                .into_iter()
                .any(|s| (p_max - s).abs() < 1e-6 * p_max);
            assert!(tight, "no cell budget is tight");
        }
    }

    #[test]
    fn bisection_monotonicity() {
        let g = random_table(1, 3, 55);
        let p_max = 50.0;
        let (c, u) = balance_system(&g);
        let sr_c = spectral_radius(&c);
        let feasible = |t: f64| {
            minimal_power_inner(t, &c, &u, sr_c)
                .filter(|rho| max_cell_sum(rho, 1, 3) <= p_max)
                .is_some()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(56);
        for _ in 0..50 {
            let t = rng.gen::<f64>() * 5.0;
            if feasible(t) {
                let t2 = t * rng.gen::<f64>();
                assert!(feasible(t2), "smaller target {t2} infeasible while {t} is");
            }
        }
    }

    #[test]
    fn objective_decoupled_case() {
        let g = single_ue(2.0, 0.0, 0.5);
        let y = [1.3];
        let (f, grad) = maxprod_objective(&y, &g);
        let expect = 1.3 + 2.0f64.ln() - 0.5f64.ln();
        assert!((f - expect).abs() < 1e-12);
        assert!((grad[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_symmetry() {
        let g = symmetric_pair();
        let (_, grad) = maxprod_objective(&[0.4, 0.4], &g);
        assert!((grad[0] - grad[1]).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for seed in 0..5 {
            let g = random_table(2usize, 2, 200 + seed);
            for _ in 0..4 {
                let y: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
                let (_, grad) = maxprod_objective(&y, &g);
                for d in 0..4 {
                    let h = 1e-6;
                    let mut yp = y.clone();
                    yp[d] += h;
                    let mut ym = y.clone();
                    ym[d] -= h;
                    let fd = (maxprod_objective(&yp, &g).0 - maxprod_objective(&ym, &g).0)
                        / (2.0 * h);
                    let rel = (grad[d] - fd).abs() / grad[d].abs().max(1e-8);
                    assert!(rel < 1e-5, "coordinate {d}: analytic {} vs fd {fd}", grad[d]);
                }
            }
        }
    }

    #[test]
    fn objective_is_overflow_safe() {
        let g = symmetric_pair();
        let (f, grad) = maxprod_objective(&[800.0, 790.0], &g);
        assert!(f.is_finite());
        assert!(grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn maxprod_single_ue_boundary() {
        let g = single_ue(1.0, 0.0, 0.2);
        let p_max = 25.0;
        let alloc = maxprod_solve(&g, p_max, &SolverOptions::default()).unwrap();
        assert!(alloc.converged);
        assert!((alloc.rho[0] - p_max).abs() < 1e-6 * p_max);
    }

    #[test]
    fn maxprod_symmetric_instance_equal_powers() {
        // all signal gains equal, all cross gains equal -> symmetric optimum
        let g = GainTable::new(
            1,
            3,
            vec![1.0; 3],
            vec![0.0, 0.3, 0.3, 0.3, 0.0, 0.3, 0.3, 0.3, 0.0],
            1.0,
            0.975,
            1,
        )
        .unwrap();
        let alloc = maxprod_solve(&g, 30.0, &SolverOptions::default()).unwrap();
        let mean = alloc.rho.iter().sum::<f64>() / 3.0;
        for r in &alloc.rho {
            assert!((r - mean).abs() < 1e-6 * mean, "powers not symmetric: {:?}", alloc.rho);
        }
    }

    #[test]
    fn maxprod_beats_coarse_grid() {
        for seed in 0..3 {
            let g = random_table(1, 2, 300 + seed);
            let p_max = 40.0;
            let alloc = maxprod_solve(&g, p_max, &SolverOptions::default()).unwrap();
            assert!(alloc.is_budget_feasible(1, 2, p_max));
            let mut best = f64::NEG_INFINITY;
            let steps = 200;
            for i in 1..=steps {
                for j in 1..=steps {
                    let rho = [
                        i as f64 / steps as f64 * p_max,
                        j as f64 / steps as f64 * p_max,
                    ];
                    if rho[0] + rho[1] > p_max {
                        continue;
                    }
                    let obj: f64 = sinr_all(&g, &rho).iter().map(|v| v.ln()).sum();
                    best = best.max(obj);
                }
            }
            assert!(
                alloc.objective >= best - 1e-3 * best.abs(),
                "solver {} vs grid {best}",
                alloc.objective
            );
        }
    }

    #[test]
    fn maxprod_objective_at_least_maxmin() {
        for seed in 0..5 {
            let g = random_table(2usize, 2, 400 + seed);
            let p_max = 100.0;
            let opts = SolverOptions::default();
            let mm = maxmin_solve(&g, p_max, &opts).unwrap();
            let mp = maxprod_solve(&g, p_max, &opts).unwrap();
            let mm_obj: f64 = sinr_all(&g, &mm.rho).iter().map(|v| v.ln()).sum();
            assert!(
                mp.objective >= mm_obj - 1e-6 * mm_obj.abs(),
                "max-prod {} below max-min product {mm_obj}",
                mp.objective
            );
        }
    }

    #[test]
    fn options_from_text() {
        let mut opts = SolverOptions::default();
        opts.apply_text("maxprod_tol = 1e-5\nmu_min = 1e-7\nunrelated = 3\n")
            .unwrap();
        assert_eq!(opts.maxprod_tol, 1e-5);
        assert_eq!(opts.mu_min, 1e-7);
        assert_eq!(opts.maxmin_tol, 1e-10);
        assert!(opts.apply_text("maxprod_tol = 0").is_err());
    }
}
