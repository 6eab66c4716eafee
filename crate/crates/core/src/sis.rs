//! Mean-field SIS machinery: the equilibrium fixed point, the constraint
//! residual, explicit ODE integration for validation, and the average cost.

use crate::mmatrix;
use crate::model::NetworkInstance;

/// Converged (or last) iterate of the equilibrium fixed point.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub p: Vec<f64>,
    /// `max_i |g_i(s, p)|` at the returned iterate.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
}

/// `C_avg(s)` split into its two terms; `total = invest + infect` exactly.
#[derive(Debug, Clone, Copy)]
pub struct CostBreakdown {
    pub total: f64,
    pub invest: f64,
    pub infect: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    /// Relative step tolerance `‖p_{k+1} − p_k‖ / ‖p_k‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions { tol: 1e-7, max_iters: 500 }
    }
}

impl EquilibriumOptions {
    /// The no-primary-attack equilibrium converges slowly near the spectral
    /// threshold; allow far more of the cheap O(|E|) sweeps there.
    pub fn lambda_zero_default() -> Self {
        EquilibriumOptions { tol: 1e-7, max_iters: 300_000 }
    }

    pub fn with_tol(tol: f64) -> Self {
        EquilibriumOptions { tol, ..Default::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SisError {
    #[error("equilibrium fixed point did not converge in {} iterations (residual {})", .0.iters, .0.residual)]
    NotConverged(EquilibriumState),
    #[error("integration step too large: p[{component}] = {value} at t = {t}")]
    StepTooLarge { t: f64, component: usize, value: f64 },
    #[error(transparent)]
    Spectral(#[from] mmatrix::IterError),
    #[error("operation requires lambda = 0")]
    LambdaNotZero,
}

/// Constraint residual `g(s, p)` of the steady-state equations:
/// `g_i = (1 − p_i)(λ_i + (Bp)_i) − (α_i s_i + δ_i) p_i`.
pub fn residual(inst: &NetworkInstance, s: &[f64], p: &[f64]) -> Vec<f64> {
    let bp = inst.b().apply(p);
    (0..inst.n())
        .map(|i| {
            (1.0 - p[i]) * (inst.lambda()[i] + bp[i])
                - (inst.alpha()[i] * s[i] + inst.delta()[i]) * p[i]
        })
        .collect()
}

/// Infinity norm of the residual.
pub fn residual_norm(inst: &NetworkInstance, s: &[f64], p: &[f64]) -> f64 {
    residual(inst, s, p).iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Steady-state infection probabilities for investments `s`, starting the
/// fixed point at `p_0 = 1` (which dominates every equilibrium, so the
/// iterates decrease monotonically onto it).
pub fn equilibrium(
    inst: &NetworkInstance,
    s: &[f64],
    opts: EquilibriumOptions,
) -> Result<EquilibriumState, SisError> {
    equilibrium_from(inst, s, vec![1.0; inst.n()], opts)
}

/// Same fixed point started from an arbitrary `p_0 ∈ [0,1]^N` (used for
/// warm starts; the iteration converges from any nonnegative start).
pub fn equilibrium_from(
    inst: &NetworkInstance,
    s: &[f64],
    p0: Vec<f64>,
    opts: EquilibriumOptions,
) -> Result<EquilibriumState, SisError> {
    let n = inst.n();
    let lam = inst.lambda();
    let u: Vec<f64> = (0..n).map(|i| inst.alpha()[i] * s[i] + inst.delta()[i]).collect();
    let delta_max = inst.delta().iter().fold(0.0f64, |m, &d| m.max(d));
    let res_tol = 10.0 * opts.tol * delta_max;

    let mut p = p0;
    let mut bp = inst.b().apply(&p);
    let mut state = EquilibriumState { p: Vec::new(), residual: f64::INFINITY, iters: 0, converged: false };
    for k in 1..=opts.max_iters {
        let mut step2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..n {
            let drive = lam[i] + bp[i];
            let next = drive / (drive + u[i]);
            step2 += (next - p[i]) * (next - p[i]);
            norm2 += p[i] * p[i];
            p[i] = next;
        }
        inst.b().mul_vec(&p, &mut bp);
        let mut res: f64 = 0.0;
        for i in 0..n {
            let g = (1.0 - p[i]) * (lam[i] + bp[i]) - u[i] * p[i];
            res = res.max(g.abs());
        }
        state.iters = k;
        state.residual = res;
        if step2.sqrt() <= opts.tol * norm2.sqrt().max(f64::MIN_POSITIVE) && res <= res_tol {
            state.p = p;
            state.converged = true;
            return Ok(state);
        }
    }
    state.p = p;
    Err(SisError::NotConverged(state))
}

/// Average steady-state cost `w(s) + cᵀ p*(s)`.
pub fn average_cost(
    inst: &NetworkInstance,
    s: &[f64],
    opts: EquilibriumOptions,
) -> Result<CostBreakdown, SisError> {
    let eq = equilibrium(inst, s, opts)?;
    Ok(cost_at(inst, s, &eq.p))
}

/// Cost of a given feasible pair.
pub fn cost_at(inst: &NetworkInstance, s: &[f64], p: &[f64]) -> CostBreakdown {
    let invest = inst.invest_cost(s);
    let infect: f64 = inst.cost().iter().zip(p).map(|(c, p)| c * p).sum();
    CostBreakdown { total: invest + infect, invest, infect }
}

/// Stable equilibrium when there are no primary attacks: zero when the
/// scaled spectral radius is at most one, otherwise the positive endemic
/// state reached by the fixed point from above.
pub fn stable_equilibrium_lambda0(
    inst: &NetworkInstance,
    s: &[f64],
    opts: EquilibriumOptions,
) -> Result<EquilibriumState, SisError> {
    if !inst.lambda_is_zero() {
        return Err(SisError::LambdaNotZero);
    }
    const SPECTRAL_TOL: f64 = 1e-9;
    let n = inst.n();
    let u: Vec<f64> = (0..n).map(|i| inst.alpha()[i] * s[i] + inst.delta()[i]).collect();
    let rho = mmatrix::spectral_radius_scaled(inst.b(), &u)?;
    if rho <= 1.0 + SPECTRAL_TOL {
        return Ok(EquilibriumState { p: vec![0.0; n], residual: 0.0, iters: 0, converged: true });
    }
    equilibrium(inst, s, opts)
}

/// A simulated trajectory of the mean-field ODE.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Largest clamp applied to keep an iterate inside [0, 1].
    pub max_clamp: f64,
    /// Number of steps where the clamp exceeded 1e-9.
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// Fixed-step RK4 integration of the mean-field dynamics
/// `dp_i/dt = (1 − p_i) q_i(s_i) (λ_i + (Bp)_i) − δ_i p_i`.
///
/// `dt = None` picks `min(0.01, 0.1 / max_i(λ_i + δ_i + α_i s_i + (B1)_i))`.
/// Iterates are clamped to `[0,1]` and large excursions are an error.
pub fn simulate_dynamics(
    inst: &NetworkInstance,
    s: &[f64],
    p0: &[f64],
    horizon: f64,
    dt: Option<f64>,
) -> Result<Trajectory, SisError> {
    let n = inst.n();
    let q: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + inst.kappa()[i] * s[i])).collect();
    let dt = dt.unwrap_or_else(|| {
        let b1 = inst.b().row_sums();
        let scale = (0..n)
            .map(|i| inst.lambda()[i] + inst.delta()[i] + inst.alpha()[i] * s[i] + b1[i])
            .fold(0.0f64, f64::max);
        (0.01f64).min(0.1 / scale.max(1e-12))
    });

    let deriv = |p: &[f64], out: &mut [f64]| {
        let bp = inst.b().apply(p);
        for i in 0..n {
            out[i] = (1.0 - p[i]) * q[i] * (inst.lambda()[i] + bp[i]) - inst.delta()[i] * p[i];
        }
    };

    let steps = (horizon / dt).ceil() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        max_clamp: 0.0,
        clamp_events: 0,
    };
    let mut p = p0.to_vec();
    let mut t = 0.0;
    traj.times.push(t);
    traj.states.push(p.clone());

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    while t < horizon - 1e-12 {
        let h = dt.min(horizon - t);
        deriv(&p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4);
        let mut step_clamp: f64 = 0.0;
        for i in 0..n {
            let raw = p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !(-1e-6..=1.0 + 1e-6).contains(&raw) {
                return Err(SisError::StepTooLarge { t: t + h, component: i, value: raw });
            }
            let clamped = raw.clamp(0.0, 1.0);
            step_clamp = step_clamp.max((raw - clamped).abs());
            p[i] = clamped;
        }
        traj.max_clamp = traj.max_clamp.max(step_clamp);
        if step_clamp > 1e-9 {
            traj.clamp_events += 1;
        }
        t += h;
        traj.times.push(t);
        traj.states.push(p.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{single_node, two_cycle};

    #[test]
    fn single_node_closed_forms() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let eq0 = equilibrium(&inst, &[0.0], EquilibriumOptions::default()).unwrap();
        assert!((eq0.p[0] - 0.5).abs() < 1e-10);
        let eq8 = equilibrium(&inst, &[0.8], EquilibriumOptions::default()).unwrap();
        assert!((eq8.p[0] - 0.1).abs() < 1e-10);
    }

    #[test]
    fn residual_examples() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let g = residual(&inst, &[0.0], &[0.5]);
        assert!(g[0].abs() < 1e-15);
        let g = residual(&inst, &[0.0], &[0.0]);
        assert!((g[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn residual_within_tolerance_of_convergence() {
        let inst = two_cycle(0.5, (0.1, 0.1), 10.0);
        let opts = EquilibriumOptions::default();
        let eq = equilibrium(&inst, &[0.0, 0.0], opts).unwrap();
        let delta_max = 0.1;
        assert!(eq.residual <= 10.0 * opts.tol * delta_max);
        assert!(residual_norm(&inst, &[0.0, 0.0], &eq.p) <= 10.0 * opts.tol * delta_max);
    }

    #[test]
    fn symmetric_cycle_equilibrium() {
        // roots of 0.5 p² − 0.3 p − 0.1 = 0: p* = 0.3 + sqrt(0.29)
        let expected = 0.3 + 0.29f64.sqrt();
        let inst = two_cycle(0.5, (0.1, 0.1), 10.0);
        let eq = equilibrium(&inst, &[0.0, 0.0], EquilibriumOptions::with_tol(1e-12)).unwrap();
        assert!((eq.p[0] - expected).abs() < 1e-9, "{} vs {}", eq.p[0], expected);
        assert!((eq.p[1] - expected).abs() < 1e-9);
    }

    #[test]
    fn iterates_monotone_from_one() {
        // re-run the map manually and check componentwise monotonicity
        let inst = two_cycle(0.5, (0.1, 0.3), 10.0);
        let s = [0.2, 0.0];
        let u: Vec<f64> = (0..2).map(|i| inst.alpha()[i] * s[i] + inst.delta()[i]).collect();
        let mut p = vec![1.0, 1.0];
        for _ in 0..200 {
            let bp = inst.b().apply(&p);
            let next: Vec<f64> = (0..2)
                .map(|i| (inst.lambda()[i] + bp[i]) / (inst.lambda()[i] + bp[i] + u[i]))
                .collect();
            for i in 0..2 {
                assert!(next[i] <= p[i] + 1e-15);
            }
            p = next;
        }
    }

    #[test]
    fn uniqueness_from_any_start_above() {
        let inst = two_cycle(0.5, (0.1, 0.1), 10.0);
        let opts = EquilibriumOptions::with_tol(1e-10);
        let a = equilibrium(&inst, &[0.1, 0.2], opts).unwrap();
        let b =
            equilibrium_from(&inst, &[0.1, 0.2], vec![0.9, 0.95], opts).unwrap();
        for i in 0..2 {
            assert!((a.p[i] - b.p[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn average_cost_single_node() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let c = average_cost(&inst, &[0.0], EquilibriumOptions::default()).unwrap();
        assert!((c.total - 5.0).abs() < 1e-9);
        let c = average_cost(&inst, &[0.8], EquilibriumOptions::default()).unwrap();
        assert!((c.total - 1.8).abs() < 1e-9);
        assert_eq!(c.total, c.invest + c.infect);
        // s → ∞: infection cost vanishes
        let c = average_cost(&inst, &[1e6], EquilibriumOptions::default()).unwrap();
        assert!(c.infect < 1e-5);
        assert_eq!(c.total, c.invest + c.infect);
    }

    #[test]
    fn dynamics_reach_equilibrium() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let traj = simulate_dynamics(&inst, &[0.0], &[0.0], 200.0, Some(0.01)).unwrap();
        assert!((traj.terminal()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn dynamics_stationary_at_equilibrium() {
        let inst = two_cycle(0.5, (0.1, 0.1), 10.0);
        let eq = equilibrium(&inst, &[0.3, 0.1], EquilibriumOptions::with_tol(1e-12)).unwrap();
        let traj = simulate_dynamics(&inst, &[0.3, 0.1], &eq.p, 40.0, None).unwrap();
        for i in 0..2 {
            assert!((traj.terminal()[i] - eq.p[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn dynamics_decay_when_suppressed() {
        // λ = 0 and ρ(diag(αs+δ)^{-1}B) < 1 ⇒ p(t) → 0
        let inst = two_cycle(0.5, (0.0, 0.0), 10.0);
        let traj = simulate_dynamics(&inst, &[1.0, 1.0], &[0.9, 0.9], 400.0, None).unwrap();
        assert!(traj.terminal().iter().all(|&p| p < 1e-6));
    }

    #[test]
    fn lambda0_endemic_and_suppressed() {
        let inst = two_cycle(0.5, (0.0, 0.0), 10.0);
        // s = 0: rho = 5 > 1, p_se = 1 − δ/β = 0.8
        let eq = stable_equilibrium_lambda0(&inst, &[0.0, 0.0], EquilibriumOptions::lambda_zero_default())
            .unwrap();
        assert!((eq.p[0] - 0.8).abs() < 1e-7 && (eq.p[1] - 0.8).abs() < 1e-7);
        // s = 0.4: rho = 1 exactly → suppressed side
        let eq = stable_equilibrium_lambda0(&inst, &[0.4, 0.4], EquilibriumOptions::lambda_zero_default())
            .unwrap();
        assert_eq!(eq.p, vec![0.0, 0.0]);
        // s = 1: rho < 1
        let eq = stable_equilibrium_lambda0(&inst, &[1.0, 1.0], EquilibriumOptions::lambda_zero_default())
            .unwrap();
        assert_eq!(eq.p, vec![0.0, 0.0]);
    }

    #[test]
    fn lambda0_requires_zero_lambda() {
        let inst = two_cycle(0.5, (0.1, 0.1), 10.0);
        assert!(matches!(
            stable_equilibrium_lambda0(&inst, &[0.0, 0.0], EquilibriumOptions::default()),
            Err(SisError::LambdaNotZero)
        ));
    }

    #[test]
    fn monotonicity_in_investment() {
        let inst = two_cycle(0.5, (0.2, 0.4), 10.0);
        let opts = EquilibriumOptions::with_tol(1e-11);
        let base = equilibrium(&inst, &[0.1, 0.1], opts).unwrap();
        let more = equilibrium(&inst, &[0.5, 0.1], opts).unwrap();
        for i in 0..2 {
            assert!(more.p[i] <= base.p[i] + 1e-9);
        }
    }
}
