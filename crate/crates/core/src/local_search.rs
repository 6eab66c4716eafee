//! Local minimizers of the nonconvex investment problem: projected reduced
//! gradient descent with Armijo backtracking, and sequential convex
//! programming with two interchangeable subproblem backends.

use std::time::Instant;

use crate::barrier::{BarrierError, BarrierOptions, ScpSubproblem};
use crate::mmatrix::{IterError, SplitMatrix, SplitOptions};
use crate::model::NetworkInstance;
use crate::sis::{self, EquilibriumOptions, EquilibriumState, SisError};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct RgmConfig {
    pub gamma0: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    /// Relative investment-step stopping tolerance.
    pub step_tol: f64,
    /// Relative objective-change stopping tolerance.
    pub obj_tol: f64,
    pub max_iters: usize,
    pub eq_opts: EquilibriumOptions,
    /// Record one trace row per accepted step.
    pub trace: bool,
}

impl Default for RgmConfig {
    fn default() -> Self {
        RgmConfig {
            gamma0: 0.5,
            shrink: 0.85,
            armijo_c: 1e-4,
            step_tol: 1e-6,
            obj_tol: 1e-8,
            max_iters: 2000,
            eq_opts: EquilibriumOptions::default(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub inner_fp_iters: usize,
}

/// A feasible local solution (investments plus their equilibrium).
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub objective: f64,
    /// Projected-gradient norm at exit.
    pub grad_norm: f64,
    pub iters_outer: usize,
    /// Largest inner fixed-point iteration count observed.
    pub iters_inner_max: usize,
    pub runtime_ms: u128,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("iteration limit reached (best objective {})", .0.objective)]
    MaxIters(Box<LocalSolution>),
    #[error("subproblem failed at outer iteration {outer}: {source}")]
    SubproblemFailed { outer: usize, source: BarrierError },
    #[error(transparent)]
    Sis(#[from] SisError),
    #[error(transparent)]
    Iter(#[from] IterError),
}

/// Gradient of the reduced objective `F(s) = w(s) + cᵀ p*(s)` at a feasible
/// pair, via one transposed solve with the implicit-function matrix
/// `M = diag(α∘s + δ + λ + Bp) − diag(1−p) B`.
pub fn reduced_gradient(
    inst: &NetworkInstance,
    s: &[f64],
    p: &[f64],
) -> Result<Vec<f64>, IterError> {
    let u = adjoint_state(inst, s, p, SplitOptions::default())?;
    Ok((0..inst.n())
        .map(|i| inst.w_weights()[i] - inst.alpha()[i] * p[i] * u[i])
        .collect())
}

/// `u = M(s)^{-T} c`, the adjoint vector behind the reduced gradient.
pub fn adjoint_state(
    inst: &NetworkInstance,
    s: &[f64],
    p: &[f64],
    opts: SplitOptions,
) -> Result<Vec<f64>, IterError> {
    let n = inst.n();
    let bp = inst.b().apply(p);
    let d: Vec<f64> = (0..n)
        .map(|i| inst.alpha()[i] * s[i] + inst.delta()[i] + inst.lambda()[i] + bp[i])
        .collect();
    let rs: Vec<f64> = p.iter().map(|&v| 1.0 - v).collect();
    let m = SplitMatrix::scaled(inst.b(), inst.bt(), d, rs);
    m.solve_transposed(inst.cost(), opts)
}

/// Equilibrium solve warm-started from the previous iterate, falling back to
/// the cold start from above if the warm start fails to converge.
fn equilibrium_warm(
    inst: &NetworkInstance,
    s: &[f64],
    p_prev: &[f64],
    opts: EquilibriumOptions,
) -> Result<EquilibriumState, SisError> {
    match sis::equilibrium_from(inst, s, p_prev.to_vec(), opts) {
        Ok(eq) => Ok(eq),
        Err(SisError::NotConverged(_)) => sis::equilibrium(inst, s, opts),
        Err(e) => Err(e),
    }
}

/// Equilibrium for local search: uses the endemic branch when λ = 0 so the
/// same code drives the budget-constrained variant.
fn equilibrium_for_search(
    inst: &NetworkInstance,
    s: &[f64],
    p_prev: &[f64],
    opts: EquilibriumOptions,
) -> Result<EquilibriumState, SisError> {
    if inst.lambda_is_zero() {
        sis::stable_equilibrium_lambda0(inst, s, opts)
    } else {
        equilibrium_warm(inst, s, p_prev, opts)
    }
}

/// Projected reduced gradient descent from `s0` (investments clipped to the
/// nonnegative orthant, or an arbitrary projection supplied by the caller).
pub fn rgm(
    inst: &NetworkInstance,
    config: &RgmConfig,
    s0: &[f64],
) -> Result<LocalSolution, SearchError> {
    rgm_projected(inst, config, s0, |v| {
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    })
}

/// The same descent loop with a caller-supplied projection onto the feasible
/// investment set (used by the budget-constrained variant).
pub fn rgm_projected(
    inst: &NetworkInstance,
    config: &RgmConfig,
    s0: &[f64],
    project: impl Fn(&mut Vec<f64>),
) -> Result<LocalSolution, SearchError> {
    let start = Instant::now();
    let n = inst.n();
    let mut s = s0.to_vec();
    project(&mut s);
    let eq_opts = if inst.lambda_is_zero() {
        EquilibriumOptions { max_iters: EquilibriumOptions::lambda_zero_default().max_iters, ..config.eq_opts }
    } else {
        config.eq_opts
    };
    let mut eq = equilibrium_for_search(inst, &s, &vec![1.0; n], eq_opts)?;
    let mut inner_max = eq.iters;
    let mut objective = sis::cost_at(inst, &s, &eq.p).total;
    let mut trace = Vec::new();
    let mut grad_norm = f64::INFINITY;

    for iter in 1..=config.max_iters {
        let grad = reduced_gradient(inst, &s, &eq.p)?;
        // free coordinates: moving strictly inside, or pushed inward
        let free_sq: f64 = (0..n)
            .filter(|&i| s[i] > 0.0 || grad[i] < 0.0)
            .map(|i| grad[i] * grad[i])
            .sum();
        grad_norm = free_sq.sqrt();

        let mut gamma = config.gamma0;
        let mut accepted: Option<(Vec<f64>, EquilibriumState, f64)> = None;
        for _ in 0..250 {
            let mut s_new: Vec<f64> = (0..n).map(|i| s[i] - gamma * grad[i]).collect();
            project(&mut s_new);
            if s_new == s {
                break; // stationary under the projection
            }
            let eq_new = equilibrium_for_search(inst, &s_new, &eq.p, eq_opts)?;
            inner_max = inner_max.max(eq_new.iters);
            let f_new = sis::cost_at(inst, &s_new, &eq_new.p).total;
            if f_new <= objective - config.armijo_c * gamma * free_sq {
                accepted = Some((s_new, eq_new, f_new));
                break;
            }
            gamma *= config.shrink;
        }
        let Some((s_new, eq_new, f_new)) = accepted else {
            break; // no descent step exists at this scale: stationary
        };
        let step_norm: f64 =
            (0..n).map(|i| (s_new[i] - s[i]) * (s_new[i] - s[i])).sum::<f64>().sqrt();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel_step = step_norm / s_norm.max(f64::MIN_POSITIVE);
        let rel_obj = (objective - f_new).abs() / objective.abs().max(f64::MIN_POSITIVE);
        if config.trace {
            trace.push(TraceRow {
                iter,
                objective: f_new,
                grad_norm,
                step: gamma,
                inner_fp_iters: eq_new.iters,
            });
        }
        s = s_new;
        eq = eq_new;
        objective = f_new;
        if rel_step <= config.step_tol || rel_obj <= config.obj_tol {
            return Ok(LocalSolution {
                s,
                p: eq.p,
                objective,
                grad_norm,
                iters_outer: iter,
                iters_inner_max: inner_max,
                runtime_ms: start.elapsed().as_millis(),
                trace,
            });
        }
        if iter == config.max_iters {
            return Err(SearchError::MaxIters(Box::new(LocalSolution {
                s,
                p: eq.p,
                objective,
                grad_norm,
                iters_outer: iter,
                iters_inner_max: inner_max,
                runtime_ms: start.elapsed().as_millis(),
                trace,
            })));
        }
    }
    // loop exited by stationarity before taking a step
    Ok(LocalSolution {
        s,
        p: eq.p,
        objective,
        grad_norm,
        iters_outer: 0,
        iters_inner_max: inner_max,
        runtime_ms: start.elapsed().as_millis(),
        trace,
    })
}

/// Subproblem backend for sequential convex programming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScpBackend {
    /// Projected gradient on the inverse-shift form over a balancing-derived
    /// feasible subset.
    MMatrix,
    /// Barrier Newton on the smooth exponential form (exact relaxation).
    ExpCone,
}

#[derive(Debug, Clone)]
pub struct ScpConfig {
    pub step_tol: f64,
    pub obj_tol: f64,
    pub max_outer: usize,
    /// Gradient-step budget for the inverse-shift backend.
    pub inner_steps: usize,
    pub inner_grad_tol: f64,
    /// Barrier tolerance for the exponential backend.
    pub subproblem_tol: f64,
    pub eq_opts: EquilibriumOptions,
    pub trace: bool,
}

impl Default for ScpConfig {
    fn default() -> Self {
        ScpConfig {
            step_tol: 1e-6,
            obj_tol: 1e-6,
            max_outer: 60,
            inner_steps: 25,
            inner_grad_tol: 1e-5,
            subproblem_tol: 1e-6,
            eq_opts: EquilibriumOptions::default(),
            trace: false,
        }
    }
}

/// Sequential convex programming: linearize the quadratic infection terms at
/// the current equilibrium, solve the convex subproblem, re-equilibrate.
pub fn scp(
    inst: &NetworkInstance,
    backend: ScpBackend,
    config: &ScpConfig,
) -> Result<LocalSolution, SearchError> {
    let start = Instant::now();
    let n = inst.n();
    let mut s = vec![0.0; n];
    let mut eq = sis::equilibrium(inst, &s, config.eq_opts)?;
    let mut inner_max = eq.iters;
    let mut objective = sis::cost_at(inst, &s, &eq.p).total;
    let mut trace = Vec::new();
    let mut inner_steps_total = 0usize;

    for outer in 1..=config.max_outer {
        let p = &eq.p;
        let bp = inst.b().apply(p);
        let lambda_hat: Vec<f64> =
            (0..n).map(|i| inst.lambda()[i] + p[i] * bp[i]).collect();
        let rhs: Vec<f64> =
            (0..n).map(|i| inst.delta()[i] + inst.lambda()[i] + bp[i]).collect();

        let (s_new, steps) = match backend {
            ScpBackend::MMatrix => solve_shift_subproblem(
                inst, p, &bp, &lambda_hat, &rhs, &s, config,
            )?,
            ScpBackend::ExpCone => {
                let scaled: Vec<(usize, usize, f64)> = inst
                    .b()
                    .triplets()
                    .into_iter()
                    .map(|(i, j, v)| (i, j, (1.0 - p[i]) * v))
                    .collect();
                let b_hat = CsrMatrix::from_triplets(n, &scaled);
                let sub = ScpSubproblem {
                    b_hat: &b_hat,
                    alpha: inst.alpha(),
                    rhs: &rhs,
                    lambda_hat: &lambda_hat,
                    w: inst.w_weights(),
                    c_obj: inst.cost(),
                };
                let sol = sub
                    .solve(BarrierOptions::with_tol(config.subproblem_tol))
                    .map_err(|source| SearchError::SubproblemFailed { outer, source })?;
                (sol.s, sol.newton_steps)
            }
        };
        inner_steps_total += steps;

        let eq_new = equilibrium_warm(inst, &s_new, &eq.p, config.eq_opts)?;
        inner_max = inner_max.max(eq_new.iters);
        let f_new = sis::cost_at(inst, &s_new, &eq_new.p).total;
        let step_norm: f64 =
            (0..n).map(|i| (s_new[i] - s[i]) * (s_new[i] - s[i])).sum::<f64>().sqrt();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel_step = step_norm / s_norm.max(f64::MIN_POSITIVE);
        let rel_obj = (f_new - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        if config.trace {
            trace.push(TraceRow {
                iter: outer,
                objective: f_new,
                grad_norm: f64::NAN,
                step: rel_step,
                inner_fp_iters: eq_new.iters,
            });
        }
        s = s_new;
        eq = eq_new;
        objective = f_new;
        if rel_step <= config.step_tol || rel_obj <= config.obj_tol {
            return Ok(LocalSolution {
                s,
                p: eq.p,
                objective,
                grad_norm: f64::NAN,
                iters_outer: outer,
                iters_inner_max: inner_steps_total / outer.max(1),
                runtime_ms: start.elapsed().as_millis(),
                trace,
            });
        }
    }
    Err(SearchError::MaxIters(Box::new(LocalSolution {
        s,
        p: eq.p,
        objective,
        grad_norm: f64::NAN,
        iters_outer: config.max_outer,
        iters_inner_max: inner_steps_total / config.max_outer.max(1),
        runtime_ms: start.elapsed().as_millis(),
        trace,
    })))
}

/// Inverse-shift subproblem: minimize `wᵀs + cᵀ (L + diag(α∘s))^{-1} λ̂`
/// by projected gradient descent over the balancing-derived subset
/// `{ s ≥ max(s̲, δ + λ + Bp) }`, every solve done by the splitting
/// iteration.
#[allow(clippy::too_many_arguments)]
fn solve_shift_subproblem(
    inst: &NetworkInstance,
    p: &[f64],
    bp: &[f64],
    lambda_hat: &[f64],
    rhs: &[f64],
    s_warm: &[f64],
    config: &ScpConfig,
) -> Result<(Vec<f64>, usize), SearchError> {
    let n = inst.n();
    // boundary anchor: balance the row-damped matrix with weights w/α
    let scaled: Vec<(usize, usize, f64)> = inst
        .b()
        .triplets()
        .into_iter()
        .map(|(i, j, v)| (i, j, (1.0 - p[i]) * v))
        .collect();
    let b_hat = CsrMatrix::from_triplets(n, &scaled);
    let b_hat_t = b_hat.transpose();
    let h: Vec<f64> =
        inst.w_weights().iter().zip(inst.alpha()).map(|(w, a)| w / a).collect();
    let zbar = if b_hat.nnz() == 0 {
        vec![0.0; n]
    } else {
        crate::mmatrix::balance(&b_hat, &b_hat_t, &h, 1e-9, 100_000)?.zbar
    };
    // the subproblem matrix diag(α∘s + δ + λ + Bp) − diag(1−p)B stays a
    // nonsingular M-matrix while its diagonal dominates the balance anchor
    let lower: Vec<f64> = (0..n)
        .map(|i| {
            ((zbar[i] - inst.delta()[i] - inst.lambda()[i] - bp[i]) / inst.alpha()[i]).max(0.0)
        })
        .collect();

    let solve_opts = SplitOptions::default();
    let value = |s: &[f64]| -> Result<f64, IterError> {
        let d: Vec<f64> = (0..n).map(|i| rhs[i] + inst.alpha()[i] * s[i]).collect();
        let m = SplitMatrix::scaled(inst.b(), inst.bt(), d, p.iter().map(|&v| 1.0 - v).collect());
        let x = m.solve(lambda_hat, solve_opts)?;
        Ok((0..n)
            .map(|i| inst.w_weights()[i] * s[i] + inst.cost()[i] * x[i])
            .sum())
    };

    let mut s: Vec<f64> = (0..n).map(|i| s_warm[i].max(lower[i])).collect();
    let mut f = value(&s)?;
    let mut steps = 0;
    for _ in 0..config.inner_steps {
        steps += 1;
        let d: Vec<f64> = (0..n).map(|i| rhs[i] + inst.alpha()[i] * s[i]).collect();
        let m = SplitMatrix::scaled(inst.b(), inst.bt(), d, p.iter().map(|&v| 1.0 - v).collect());
        let x = m.solve(lambda_hat, solve_opts)?;
        let u = m.solve_transposed(inst.cost(), solve_opts)?;
        let grad: Vec<f64> = (0..n)
            .map(|i| inst.w_weights()[i] - u[i] * inst.alpha()[i] * x[i])
            .collect();
        let proj_sq: f64 = (0..n)
            .filter(|&i| s[i] > lower[i] || grad[i] < 0.0)
            .map(|i| grad[i] * grad[i])
            .sum();
        if proj_sq.sqrt() <= config.inner_grad_tol {
            break;
        }
        let mut gamma = 0.5;
        let mut moved = false;
        for _ in 0..120 {
            let s_new: Vec<f64> =
                (0..n).map(|i| (s[i] - gamma * grad[i]).max(lower[i])).collect();
            if s_new == s {
                break;
            }
            // a non-convergent splitting solve means the step drifted too
            // close to the singular boundary: reject it and shrink
            if let Ok(f_new) = value(&s_new) {
                if f_new <= f - 1e-4 * gamma * proj_sq {
                    s = s_new;
                    f = f_new;
                    moved = true;
                    break;
                }
            }
            gamma *= 0.85;
        }
        if !moved {
            break;
        }
    }
    Ok((s, steps))
}
