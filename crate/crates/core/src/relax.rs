//! Convex relaxations of the investment problem: certified lower bounds,
//! feasible-point recovery and exactness certificates.
//!
//! `solve_pr2` is the production path: the smooth exponential reformulation
//! solved by one barrier run. `solve_pr1` is the shift-set formulation with
//! the iterative boundary-expansion outer loop; it is equivalent (same
//! optimal value) and kept as an independent cross-check of the M-matrix
//! machinery at moderate sizes.

use std::time::Instant;

use crate::barrier::{self, BarrierError, BarrierOptions, CoupledProgram, DenseLu};
use crate::mmatrix::{self, SplitMatrix, SplitOptions};
use crate::model::NetworkInstance;
use crate::sis::{self, EquilibriumOptions, SisError};

/// Relative gap below which a relaxation run is reported exact.
pub const EXACTNESS_REL_TOL: f64 = 1e-5;
/// Safety factor on the certified barrier gap when reporting lower bounds.
const GAP_SAFETY: f64 = 1.25;

#[derive(Debug, thiserror::Error)]
pub enum RelaxError {
    #[error("relaxation solver failed: {0}")]
    Barrier(#[from] BarrierError),
    #[error("equilibrium evaluation failed: {0}")]
    Sis(#[from] SisError),
    #[error("spectral routine failed: {0}")]
    Spectral(#[from] mmatrix::IterError),
    #[error("budget {budget} is not below the suppression budget {c_star}")]
    DegenerateBudget { budget: f64, c_star: f64 },
}

/// Solution of a convex relaxation together with the recovered feasible
/// point and the bound pair it certifies.
#[derive(Debug, Clone)]
pub struct RelaxSolution {
    pub s_relax: Vec<f64>,
    pub p_relax: Vec<f64>,
    /// Shift vector `z = α∘s + δ + λ + Bp` at the relaxation optimum.
    pub z_relax: Vec<f64>,
    pub lower_bound: f64,
    pub s_feas: Vec<f64>,
    pub p_feas: Vec<f64>,
    pub upper_bound: f64,
    pub exact: bool,
    pub iters_outer: usize,
    pub iters_inner: usize,
    pub runtime_ms: u128,
    /// Whether the budget row was active at the optimum (budgeted runs only).
    pub budget_active: Option<bool>,
}

/// Sufficient condition for the relaxations to be exact with linear
/// investment costs: `Bᵀ (w / α) ≤ c` elementwise.
pub fn check_exactness(inst: &NetworkInstance) -> bool {
    let ratio: Vec<f64> = inst.w_weights().iter().zip(inst.alpha()).map(|(w, a)| w / a).collect();
    let lhs = inst.bt().apply(&ratio);
    lhs.iter().zip(inst.cost()).all(|(l, c)| l <= c)
}

/// Solves the smooth exponential-form relaxation and recovers a feasible
/// point for the original problem.
pub fn solve_pr2(inst: &NetworkInstance, tol: f64) -> Result<RelaxSolution, RelaxError> {
    let start = Instant::now();
    let n = inst.n();
    let p_hint = sis::equilibrium(inst, &vec![0.0; n], EquilibriumOptions::default())?.p;
    let rhs0: Vec<f64> = inst.delta().iter().zip(inst.lambda()).map(|(d, l)| d + l).collect();
    let prog = CoupledProgram {
        b: inst.b(),
        alpha: inst.alpha(),
        rhs0: &rhs0,
        lambda: inst.lambda(),
        w: inst.w_weights(),
        c_obj: inst.cost(),
        p_upper: true,
        budget: None,
        p_hint: &p_hint,
    };
    let sol = prog.solve(BarrierOptions::with_tol(tol))?;
    finish_relaxation(inst, sol, start, None)
}

/// Shared recovery: feasible point from the relaxation optimum, polished
/// through the equilibrium fixed point, plus the certified bound pair.
pub(crate) fn finish_relaxation(
    inst: &NetworkInstance,
    sol: barrier::BarrierSolution,
    start: Instant,
    budget: Option<f64>,
) -> Result<RelaxSolution, RelaxError> {
    let n = inst.n();
    let lower = sol.objective - GAP_SAFETY * sol.gap;
    let p_prime: Vec<f64> = sol.y.iter().map(|&v| (-v).exp()).collect();
    let diff: Vec<f64> = (0..n).map(|i| sol.p[i] - p_prime[i]).collect();
    let bdiff = inst.b().apply(&diff);
    let s_feas: Vec<f64> =
        (0..n).map(|i| (sol.s[i] + bdiff[i] / inst.alpha()[i]).max(0.0)).collect();
    let (p_feas, upper) = polish_feasible(inst, &s_feas, &p_prime)?;
    let z_relax: Vec<f64> = {
        let bp = inst.b().apply(&sol.p);
        (0..n)
            .map(|i| inst.alpha()[i] * sol.s[i] + inst.delta()[i] + inst.lambda()[i] + bp[i])
            .collect()
    };
    let exact = upper - lower <= EXACTNESS_REL_TOL * lower.abs().max(1.0);
    let budget_active = budget.map(|cap| {
        let spent = inst.invest_cost(&sol.s);
        (cap - spent).abs() <= 1e-6 * cap
    });
    Ok(RelaxSolution {
        s_relax: sol.s,
        p_relax: sol.p,
        z_relax,
        lower_bound: lower,
        s_feas,
        p_feas,
        upper_bound: upper,
        exact,
        iters_outer: sol.stages,
        iters_inner: sol.newton_steps,
        runtime_ms: start.elapsed().as_millis(),
        budget_active,
    })
}

/// Replaces the recovered probabilities with the tight equilibrium at the
/// recovered investments (the same point in exact arithmetic) and returns
/// the resulting upper bound.
fn polish_feasible(
    inst: &NetworkInstance,
    s_feas: &[f64],
    p_recovered: &[f64],
) -> Result<(Vec<f64>, f64), RelaxError> {
    let opts = EquilibriumOptions { tol: 1e-9, max_iters: 100_000 };
    let eq = if inst.lambda_is_zero() {
        sis::stable_equilibrium_lambda0(inst, s_feas, opts)?
    } else {
        // start just above the recovered point: the iteration converges from
        // any start and is monotone from above
        let p0: Vec<f64> = p_recovered.iter().map(|&v| (v * 1.05).clamp(0.0, 1.0)).collect();
        sis::equilibrium_from(inst, s_feas, p0, opts)?
    };
    let cost = sis::cost_at(inst, s_feas, &eq.p);
    Ok((eq.p, cost.total))
}

/// Options for the shift-relaxation outer loop.
#[derive(Debug, Clone, Copy)]
pub struct Pr1Options {
    pub tol: f64,
    pub max_outer: usize,
    /// Weight put on active coordinates when re-aiming the boundary anchor.
    pub h_bar: f64,
    /// Active-set threshold on `z − z̲`.
    pub active_tol: f64,
}

impl Default for Pr1Options {
    fn default() -> Self {
        Pr1Options { tol: 1e-6, max_outer: 30, h_bar: 10.0, active_tol: 1e-3 }
    }
}

/// Solves the shift-set relaxation by restricting the shift to translated
/// orthants anchored on the boundary of the M-matrix region, expanding the
/// anchor while the optimizer pins against it.
pub fn solve_pr1(inst: &NetworkInstance, opts: Pr1Options) -> Result<RelaxSolution, RelaxError> {
    let start = Instant::now();
    let n = inst.n();
    // initial anchor: balance with h = ∇w / α, the pure investment heuristic
    let mut z_lower = if inst.edges().is_empty() {
        vec![0.0; n]
    } else {
        let h0: Vec<f64> =
            inst.w_weights().iter().zip(inst.alpha()).map(|(w, a)| w / a).collect();
        mmatrix::balance(inst.b(), inst.bt(), &h0, 1e-10, 100_000)?.zbar
    };

    let mut inner_total = 0;
    let mut best: Option<barrier::BarrierSolution> = None;
    let mut outer = 0;
    for _t in 0..opts.max_outer {
        outer += 1;
        let inner = Pr1Inner { inst, z_lower: &z_lower };
        let sol = inner.solve(BarrierOptions::with_tol(opts.tol))?;
        inner_total += sol.newton_steps;
        let z_tilde = inner.shift_of(&sol.s, &sol.p);
        let active: Vec<usize> =
            (0..n).filter(|&i| z_tilde[i] - z_lower[i] <= opts.active_tol).collect();
        let improved = match &best {
            Some(prev) => sol.objective < prev.objective - 1e-8 * (1.0 + prev.objective.abs()),
            None => true,
        };
        let done = active.is_empty() || !improved;
        best = Some(sol);
        if done {
            break;
        }
        // re-aim: heavier weight on the active coordinates, slide the anchor
        // back onto the boundary along h⁺
        let h_plus: Vec<f64> =
            (0..n).map(|i| if active.contains(&i) { opts.h_bar } else { 1.0 }).collect();
        let inv_h: Vec<f64> = h_plus.iter().map(|&v| 1.0 / v).collect();
        let scaled_diag: Vec<f64> = (0..n).map(|i| -z_tilde[i] / h_plus[i]).collect();
        let op =
            mmatrix::MetzlerOp { b: inst.b(), diag: Some(&scaled_diag), row_scale: Some(&inv_h) };
        // σ̲ of the h-scaled shifted matrix, taken at the conservative end of
        // the certified bracket: overshooting only enlarges the next subset
        let (sbar_lo, _) = mmatrix::dominant_eigenvalue_bounds(&op, 1e-9, 60_000);
        let d = -sbar_lo;
        for i in 0..n {
            z_lower[i] = (z_tilde[i] - d * h_plus[i]).max(0.0);
        }
    }
    let sol = best.expect("at least one outer iteration runs");
    // recovery: p̃ from the shift system, then the feasible-point formula
    let z_tilde = {
        let bp = inst.b().apply(&sol.p);
        (0..n)
            .map(|i| inst.alpha()[i] * sol.s[i] + inst.delta()[i] + inst.lambda()[i] + bp[i])
            .collect::<Vec<f64>>()
    };
    let shifted = SplitMatrix::shifted(inst.b(), inst.bt(), &z_tilde);
    let p_tilde =
        shifted.solve(inst.lambda(), SplitOptions { tol: 1e-10, ..Default::default() })?;
    let diff: Vec<f64> = (0..n).map(|i| sol.p[i] - p_tilde[i]).collect();
    let bdiff = inst.b().apply(&diff);
    let s_feas: Vec<f64> =
        (0..n).map(|i| (sol.s[i] + bdiff[i] / inst.alpha()[i]).max(0.0)).collect();
    let (p_feas, upper) = polish_feasible(inst, &s_feas, &p_tilde)?;
    let lower = sol.objective - GAP_SAFETY * sol.gap;
    let exact = upper - lower <= EXACTNESS_REL_TOL * lower.abs().max(1.0);
    Ok(RelaxSolution {
        lower_bound: lower,
        s_relax: sol.s,
        p_relax: sol.p,
        z_relax: z_tilde,
        s_feas,
        p_feas,
        upper_bound: upper,
        exact,
        iters_outer: outer,
        iters_inner: inner_total,
        runtime_ms: start.elapsed().as_millis(),
        budget_active: None,
    })
}

/// Inner barrier problem of the shift relaxation, restricted to
/// `z(s, p) ≥ z̲`: variables (s, p), with the inverse-shift constraint
/// `p ≥ (diag(z) − B)^{-1} λ` differentiated through a dense inverse.
struct Pr1Inner<'a> {
    inst: &'a NetworkInstance,
    z_lower: &'a [f64],
}

struct Pr1Eval {
    v: Vec<f64>,
    w_inv: Vec<f64>,
    slack_k1: Vec<f64>,
    slack_k2: Vec<f64>,
    merit: f64,
    objective: f64,
}

impl<'a> Pr1Inner<'a> {
    fn n(&self) -> usize {
        self.inst.n()
    }

    fn shift_of(&self, s: &[f64], p: &[f64]) -> Vec<f64> {
        let bp = self.inst.b().apply(p);
        (0..self.n())
            .map(|i| {
                self.inst.alpha()[i] * s[i] + self.inst.delta()[i] + self.inst.lambda()[i] + bp[i]
            })
            .collect()
    }

    fn eval(&self, t: f64, s: &[f64], p: &[f64]) -> Option<Pr1Eval> {
        let n = self.n();
        let z = self.shift_of(s, p);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] += z[i];
            for (j, bij) in self.inst.b().row(i) {
                dense[i * n + j] -= bij;
            }
        }
        let lu = DenseLu::factor(&dense, n)?;
        let v = lu.solve(self.inst.lambda());
        if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return None; // left the M-matrix region
        }
        let w_inv = lu.inverse();
        let mut barrier = 0.0;
        let mut slack_k1 = vec![0.0; n];
        let mut slack_k2 = vec![0.0; n];
        for i in 0..n {
            slack_k1[i] = p[i] - v[i];
            slack_k2[i] = z[i] - self.z_lower[i];
            let pc = 1.0 - p[i];
            if slack_k1[i] <= 0.0 || slack_k2[i] <= 0.0 || s[i] <= 0.0 || pc <= 0.0 {
                return None;
            }
            barrier -= slack_k1[i].ln() + slack_k2[i].ln() + s[i].ln() + pc.ln();
        }
        let objective = (0..n)
            .map(|i| self.inst.w_weights()[i] * s[i] + self.inst.cost()[i] * p[i])
            .sum::<f64>();
        Some(Pr1Eval { v, w_inv, slack_k1, slack_k2, merit: t * objective + barrier, objective })
    }

    fn start(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let b1 = self.inst.b().row_sums();
        let lam_max = self.inst.lambda().iter().fold(0.0f64, |m, &l| m.max(l));
        let p0 = vec![1.0 - 1e-3; n];
        let s0: Vec<f64> = (0..n)
            .map(|i| (self.z_lower[i] + 1.0 + b1[i] + lam_max) / self.inst.alpha()[i])
            .collect();
        (s0, p0)
    }

    fn solve(&self, opts: BarrierOptions) -> Result<barrier::BarrierSolution, BarrierError> {
        let n = self.n();
        let m = (4 * n) as f64;
        let (mut s, mut p) = self.start();
        if self.eval(1.0, &s, &p).is_none() {
            return Err(BarrierError::InfeasibleStart("shift-restricted start infeasible".into()));
        }
        let mut t = opts.t0;
        let mut stages = 0;
        let mut steps = 0;
        for _stage in 0..opts.max_stages {
            stages += 1;
            for _step in 0..opts.max_newton_per_stage {
                let ev = match self.eval(t, &s, &p) {
                    Some(ev) => ev,
                    None => return Err(BarrierError::NotConverged("left the domain".into())),
                };
                let (dec2, ds, dp) = self.newton_direction(t, &s, &p, &ev);
                if !dec2.is_finite() {
                    return Err(BarrierError::NotConverged("indefinite Newton system".into()));
                }
                steps += 1;
                if dec2 * 0.5 < 1e-10 {
                    break;
                }
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let s1: Vec<f64> = (0..n).map(|i| s[i] + alpha * ds[i]).collect();
                    let p1: Vec<f64> = (0..n).map(|i| p[i] + alpha * dp[i]).collect();
                    if let Some(ev1) = self.eval(t, &s1, &p1) {
                        if ev1.merit <= ev.merit - 0.25 * alpha * dec2 {
                            s = s1;
                            p = p1;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.7;
                }
                if !accepted {
                    break;
                }
            }
            let ev = self
                .eval(t, &s, &p)
                .ok_or_else(|| BarrierError::NotConverged("left the domain".into()))?;
            if m / t <= opts.tol * (1.0 + ev.objective.abs()) {
                let y = ev.v.iter().map(|&v| -v.ln()).collect();
                return Ok(barrier::BarrierSolution {
                    objective: ev.objective,
                    gap: m / t,
                    stages,
                    newton_steps: steps,
                    s,
                    p,
                    y,
                });
            }
            t *= opts.mu;
        }
        Err(BarrierError::NotConverged(format!("gap {:e} after {stages} stages", m / t)))
    }

    /// Dense Newton direction over (s, p). The inverse-shift constraint
    /// contributes its exact curvature through the dense inverse `W`.
    fn newton_direction(
        &self,
        t: f64,
        s: &[f64],
        p: &[f64],
        ev: &Pr1Eval,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let dim = 2 * n;
        let inst = self.inst;
        let rk1: Vec<f64> = ev.slack_k1.iter().map(|&v| 1.0 / v).collect();
        let rk2: Vec<f64> = ev.slack_k2.iter().map(|&v| 1.0 / v).collect();
        let w_inv = &ev.w_inv;

        // q̂ = Wᵀ rk1; the k1 barriers contribute ζ = −v ∘ q̂ in z-space
        let mut q_hat = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w_inv[i * n + k] * rk1[i];
            }
            q_hat[k] = acc;
        }
        let zeta: Vec<f64> = (0..n).map(|k| -ev.v[k] * q_hat[k]).collect();

        // gradients; A = ∂z/∂(s,p) = [diag(α) | B]
        let mut gs = vec![0.0; n];
        let mut gp = vec![0.0; n];
        let zgrad: Vec<f64> = (0..n).map(|k| zeta[k] - rk2[k]).collect();
        let bt_zgrad = inst.bt().apply(&zgrad);
        for i in 0..n {
            gs[i] = t * inst.w_weights()[i] + inst.alpha()[i] * zgrad[i] - 1.0 / s[i];
            gp[i] = t * inst.cost()[i] - rk1[i] + bt_zgrad[i] + 1.0 / (1.0 - p[i]);
        }

        // J_i = ∂k1_i/∂x = e_i^p − (Jv · A)_i with Jv = ∂v/∂z = −W diag(v)
        let mut jv = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                jv[r * n + c] = -w_inv[r * n + c] * ev.v[c];
            }
        }
        let mut jx = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..n {
                jx[i * dim + j] = -jv[i * n + j] * inst.alpha()[j];
            }
            jx[i * dim + n + i] += 1.0;
        }
        for k in 0..n {
            for (j, bkj) in inst.b().row(k) {
                for i in 0..n {
                    jx[i * dim + n + j] -= jv[i * n + k] * bkj;
                }
            }
        }

        let mut h = vec![0.0; dim * dim];
        for i in 0..n {
            let w2 = rk1[i] * rk1[i];
            let row = jx[i * dim..(i + 1) * dim].to_vec();
            for r in 0..dim {
                let vr = row[r];
                if vr == 0.0 {
                    continue;
                }
                let hrow = &mut h[r * dim..(r + 1) * dim];
                for c in 0..dim {
                    hrow[c] += w2 * vr * row[c];
                }
            }
        }
        // curvature of v: Σ rk1_i ∇²_z v_i = Q + Qᵀ, Q = diag(q̂) W diag(v)
        let mut mz = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let q = q_hat[r] * w_inv[r * n + c] * ev.v[c];
                mz[r * n + c] += q;
                mz[c * n + r] += q;
            }
        }
        for k in 0..n {
            mz[k * n + k] += rk2[k] * rk2[k];
        }
        // H += Aᵀ Mz A with A = [diag(α) | B]
        let mut mzb = vec![0.0; n * n];
        for k in 0..n {
            for (j, bkj) in inst.b().row(k) {
                for r in 0..n {
                    mzb[r * n + j] += mz[r * n + k] * bkj;
                }
            }
        }
        for r in 0..n {
            for c in 0..n {
                h[r * dim + c] += inst.alpha()[r] * mz[r * n + c] * inst.alpha()[c];
                h[r * dim + n + c] += inst.alpha()[r] * mzb[r * n + c];
                h[(n + c) * dim + r] += inst.alpha()[r] * mzb[r * n + c];
            }
        }
        for k in 0..n {
            for (r, bkr) in inst.b().row(k) {
                for c in 0..n {
                    h[(n + r) * dim + (n + c)] += bkr * mzb[k * n + c];
                }
            }
        }
        for i in 0..n {
            h[i * dim + i] += 1.0 / (s[i] * s[i]);
            let rc = 1.0 / (1.0 - p[i]);
            h[(n + i) * dim + (n + i)] += rc * rc;
        }

        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            rhs[i] = -gs[i];
            rhs[n + i] = -gp[i];
        }
        if !barrier::cholesky_solve(&mut h, dim, &mut rhs) {
            return (f64::NAN, Vec::new(), Vec::new());
        }
        let (ds, dp) = rhs.split_at(n);
        let mut dec2 = 0.0;
        for i in 0..n {
            dec2 -= gs[i] * ds[i] + gp[i] * dp[i];
        }
        (dec2, ds.to_vec(), dp.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{single_node, two_cycle};

    #[test]
    fn exactness_predicate() {
        // 2-cycle β = 0.5, α = 1, w = 1: Bᵀ(w/α) = (0.5, 0.5)
        let ok = two_cycle(0.5, (0.1, 0.1), 0.6);
        assert!(check_exactness(&ok));
        let bad = crate::model::NetworkInstance::new(
            2,
            ok.edges().to_vec(),
            ok.lambda().to_vec(),
            ok.delta().to_vec(),
            ok.kappa().to_vec(),
            vec![0.4, 0.6],
            ok.w_weights().to_vec(),
        )
        .unwrap();
        assert!(!check_exactness(&bad));
    }

    #[test]
    fn pr2_single_node_exact() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let sol = solve_pr2(&inst, 1e-8).unwrap();
        assert!((sol.lower_bound - 1.8).abs() < 1e-5, "lower {}", sol.lower_bound);
        assert!((sol.upper_bound - 1.8).abs() < 1e-6, "upper {}", sol.upper_bound);
        assert!(sol.exact);
        assert!(sol.lower_bound <= sol.upper_bound + 1e-9 * (1.0 + sol.upper_bound.abs()));
        assert!((sol.s_feas[0] - 0.8).abs() < 1e-5);
    }

    #[test]
    fn pr2_recovery_is_feasible() {
        let inst = two_cycle(0.5, (0.3, 0.2), 4.0);
        let sol = solve_pr2(&inst, 1e-7).unwrap();
        let res = sis::residual_norm(&inst, &sol.s_feas, &sol.p_feas);
        assert!(res <= 1e-8, "residual {res}");
        assert!(sol.s_feas.iter().all(|&v| v >= 0.0));
        assert!(sol.lower_bound <= sol.upper_bound + 1e-9 * (1.0 + sol.upper_bound.abs()));
    }

    #[test]
    fn pr1_matches_pr2_on_small_instances() {
        let inst = two_cycle(0.5, (0.3, 0.2), 4.0);
        let r2 = solve_pr2(&inst, 1e-7).unwrap();
        let r1 = solve_pr1(&inst, Pr1Options::default()).unwrap();
        let rel = (r1.lower_bound - r2.lower_bound).abs() / r2.lower_bound.abs().max(1e-9);
        assert!(rel < 1e-4, "pr1 {} vs pr2 {}", r1.lower_bound, r2.lower_bound);
    }

    #[test]
    fn pr1_single_node() {
        let inst = single_node(0.1, 0.1, 10.0, 10.0);
        let sol = solve_pr1(&inst, Pr1Options { tol: 1e-8, ..Default::default() }).unwrap();
        assert!((sol.upper_bound - 1.8).abs() < 1e-6, "upper {}", sol.upper_bound);
    }
}
