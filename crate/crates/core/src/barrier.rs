//! Log-barrier Newton solver for the smooth convex programs behind the
//! relaxations: the coupled (s, p, y) family (with optional budget row and
//! zero attack rates) and the (s, y) subproblem used inside sequential
//! convex programming.
//!
//! The shared structure is one coupling constraint per node,
//!
//! `λ_i e^{y_i} + e^{y_i} (B e^{-y})_i  ≤  α_i s_i + rhs0_i + (B p)_i`,
//!
//! whose left side is convex in `y`; everything else is a box constraint or
//! a single linear budget row. Newton systems are assembled densely over
//! (p, y) after eliminating the (almost) diagonal s-block and solved by
//! Cholesky, so a solve is O(N³) with a small constant and O(Σ deg²)
//! assembly.

use crate::sparse::CsrMatrix;

#[derive(Debug, thiserror::Error)]
pub enum BarrierError {
    #[error("could not construct a strictly feasible starting point: {0}")]
    InfeasibleStart(String),
    #[error("barrier method stalled: {0}")]
    NotConverged(String),
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Duality-measure stop: finish when `m / t ≤ tol · (1 + |f|)`.
    pub tol: f64,
    pub t0: f64,
    /// Barrier weight multiplier per outer stage.
    pub mu: f64,
    pub max_stages: usize,
    pub max_newton_per_stage: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions { tol: 1e-6, t0: 1.0, mu: 10.0, max_stages: 60, max_newton_per_stage: 80 }
    }
}

impl BarrierOptions {
    pub fn with_tol(tol: f64) -> Self {
        BarrierOptions { tol, ..Default::default() }
    }
}

/// Central point at the final barrier weight, with its duality measure.
#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    /// `m / t` at exit: optimality gap certified by the central point.
    pub gap: f64,
    pub stages: usize,
    pub newton_steps: usize,
}

/// The coupled relaxation family over variables (s, p, y):
/// minimize `wᵀs + cᵀp` subject to
/// `φ_i(y) ≤ α_i s_i + rhs0_i + (Bp)_i`, `p ≥ e^{-y}`, `y ≥ 0`, `s ≥ 0`,
/// optionally `p ≤ 1` and `wᵀs ≤ C`, where
/// `φ_i(y) = λ_i e^{y_i} + e^{y_i} (B e^{-y})_i`.
pub struct CoupledProgram<'a> {
    pub b: &'a CsrMatrix,
    pub alpha: &'a [f64],
    /// Constant part of the coupling right-hand side (`δ + λ`).
    pub rhs0: &'a [f64],
    pub lambda: &'a [f64],
    pub w: &'a [f64],
    pub c_obj: &'a [f64],
    pub p_upper: bool,
    pub budget: Option<f64>,
    /// Hint for the starting `p` (e.g. the no-investment equilibrium).
    pub p_hint: &'a [f64],
}

struct Eval {
    phi: Vec<f64>,
    slack_a: Vec<f64>,
    slack_b: Vec<f64>,
    slack_budget: f64,
    merit: f64,
    objective: f64,
}

impl<'a> CoupledProgram<'a> {
    fn n(&self) -> usize {
        self.b.n()
    }

    fn m(&self) -> usize {
        let n = self.n();
        4 * n + if self.p_upper { n } else { 0 } + usize::from(self.budget.is_some())
    }

    fn objective(&self, s: &[f64], p: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.w[i] * s[i] + self.c_obj[i] * p[i]).sum()
    }

    /// Slacks and barrier merit; `None` if not strictly feasible.
    fn eval(&self, t: f64, s: &[f64], p: &[f64], y: &[f64]) -> Option<Eval> {
        let n = self.n();
        let eny: Vec<f64> = y.iter().map(|v| (-v).exp()).collect();
        let be = self.b.apply(&eny);
        let bp = self.b.apply(p);
        let mut phi = vec![0.0; n];
        let mut slack_a = vec![0.0; n];
        let mut slack_b = vec![0.0; n];
        let mut barrier = 0.0;
        for i in 0..n {
            let ey = y[i].exp();
            phi[i] = self.lambda[i] * ey + ey * be[i];
            slack_a[i] = self.alpha[i] * s[i] + self.rhs0[i] + bp[i] - phi[i];
            slack_b[i] = p[i] - eny[i];
            if slack_a[i] <= 0.0 || slack_b[i] <= 0.0 || y[i] <= 0.0 || s[i] <= 0.0 {
                return None;
            }
            barrier -= slack_a[i].ln() + slack_b[i].ln() + y[i].ln() + s[i].ln();
            if self.p_upper {
                let cb = 1.0 - p[i];
                if cb <= 0.0 {
                    return None;
                }
                barrier -= cb.ln();
            }
        }
        let mut slack_budget = f64::INFINITY;
        if let Some(cap) = self.budget {
            slack_budget = cap - (0..n).map(|i| self.w[i] * s[i]).sum::<f64>();
            if slack_budget <= 0.0 {
                return None;
            }
            barrier -= slack_budget.ln();
        }
        let objective = self.objective(s, p);
        Some(Eval { phi, slack_a, slack_b, slack_budget, merit: t * objective + barrier, objective })
    }

    /// Strictly feasible start. Without a budget, `s` absorbs the coupling;
    /// with one, `p` does (the coupling right side grows with `p`).
    fn start(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), BarrierError> {
        let n = self.n();
        let (s, p, y);
        if let Some(cap) = self.budget {
            let wsum: f64 = self.w.iter().sum();
            s = vec![cap / (2.0 * wsum); n];
            let y0 = vec![0.2f64; n];
            let eny: Vec<f64> = y0.iter().map(|v| (-v).exp()).collect();
            let be = self.b.apply(&eny);
            let b1 = self.b.row_sums();
            let mut tau = 0.9f64;
            for i in 0..n {
                if b1[i] <= 0.0 {
                    return Err(BarrierError::InfeasibleStart(format!(
                        "node {i} has no incoming edges"
                    )));
                }
                let phi = y0[i].exp() * (self.lambda[i] + be[i]);
                let need = (phi - self.alpha[i] * s[i] - self.rhs0[i]) / b1[i];
                tau = tau.max(need + 0.1);
            }
            if self.p_upper && tau >= 1.0 - 1e-6 {
                return Err(BarrierError::InfeasibleStart(
                    "cannot satisfy the coupling with p ≤ 1 under the budget".into(),
                ));
            }
            p = vec![tau; n];
            y = y0;
        } else {
            let p0: Vec<f64> = self.p_hint.iter().map(|&v| v.clamp(1e-3, 1.0 - 1e-3)).collect();
            let y0: Vec<f64> = p0.iter().map(|&v| -v.ln() + 0.2).collect();
            let eny: Vec<f64> = y0.iter().map(|v| (-v).exp()).collect();
            let be = self.b.apply(&eny);
            let bp = self.b.apply(&p0);
            let mut s0 = vec![0.0; n];
            for i in 0..n {
                let phi = y0[i].exp() * (self.lambda[i] + be[i]);
                let need = (phi - self.rhs0[i] - bp[i]) / self.alpha[i];
                s0[i] = need.max(0.0) + 0.5;
            }
            s = s0;
            p = p0;
            y = y0;
        }
        if self.eval(1.0, &s, &p, &y).is_none() {
            return Err(BarrierError::InfeasibleStart(
                "constructed start is not strictly feasible".into(),
            ));
        }
        Ok((s, p, y))
    }

    pub fn solve(&self, opts: BarrierOptions) -> Result<BarrierSolution, BarrierError> {
        let n = self.n();
        let m = self.m() as f64;
        let (mut s, mut p, mut y) = self.start()?;
        let mut t = opts.t0;
        let mut stages = 0;
        let mut newton_total = 0;

        for _stage in 0..opts.max_stages {
            stages += 1;
            for _step in 0..opts.max_newton_per_stage {
                let ev = match self.eval(t, &s, &p, &y) {
                    Some(ev) => ev,
                    None => {
                        return Err(BarrierError::NotConverged("iterate left the domain".into()))
                    }
                };
                let (dec2, ds, dpy) = self.newton_direction(t, &s, &p, &y, &ev);
                if !dec2.is_finite() {
                    return Err(BarrierError::NotConverged("indefinite Newton system".into()));
                }
                newton_total += 1;
                if dec2 * 0.5 < 1e-10 {
                    break;
                }
                let alpha = self.line_search(t, &s, &p, &y, &ds, &dpy, ev.merit, dec2);
                if alpha < 1e-13 {
                    break;
                }
                for i in 0..n {
                    s[i] += alpha * ds[i];
                    p[i] += alpha * dpy[i];
                    y[i] += alpha * dpy[n + i];
                }
            }
            let f = self.objective(&s, &p);
            if m / t <= opts.tol * (1.0 + f.abs()) {
                return Ok(BarrierSolution {
                    objective: f,
                    gap: m / t,
                    stages,
                    newton_steps: newton_total,
                    s,
                    p,
                    y,
                });
            }
            t *= opts.mu;
        }
        Err(BarrierError::NotConverged(format!("gap {:e} after {stages} stages", m / t)))
    }

    /// Assembles the barrier gradient and Hessian at (s, p, y), eliminates
    /// the s-block and returns (decrement², Δs, Δ(p, y)).
    fn newton_direction(
        &self,
        t: f64,
        s: &[f64],
        p: &[f64],
        y: &[f64],
        ev: &Eval,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let dim = 2 * n;
        let mut h = vec![0.0; dim * dim];
        let mut gs = vec![0.0; n];
        let mut gpy = vec![0.0; dim];

        let ra: Vec<f64> = ev.slack_a.iter().map(|&v| 1.0 / v).collect();
        let rb: Vec<f64> = ev.slack_b.iter().map(|&v| 1.0 / v).collect();
        let eny: Vec<f64> = y.iter().map(|v| (-v).exp()).collect();

        let hss: Vec<f64> = (0..n)
            .map(|i| {
                let a = self.alpha[i] * ra[i];
                a * a + 1.0 / (s[i] * s[i])
            })
            .collect();

        for i in 0..n {
            gs[i] = t * self.w[i] - self.alpha[i] * ra[i] - 1.0 / s[i];
            gpy[i] = t * self.c_obj[i] - rb[i];
            if self.p_upper {
                gpy[i] += 1.0 / (1.0 - p[i]);
            }
            gpy[n + i] = ra[i] * ev.phi[i] - eny[i] * rb[i] - 1.0 / y[i];
        }

        // coupling constraints: sparse gradients, Laplacian-shaped curvature
        let mut scol: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let ey = y[i].exp();
            let mut grad_i: Vec<(usize, f64)> = Vec::new();
            let mut yi_entry = -ev.phi[i];
            for (j, bij) in self.b.row(i) {
                let u = bij * ey * eny[j]; // b_ij e^{y_i - y_j}
                gpy[j] -= bij * ra[i]; // -(Bᵀ ra)_j
                gpy[n + j] -= ra[i] * u;
                if j == i {
                    // self-loops are excluded by the model; fold defensively
                    yi_entry += u;
                } else {
                    grad_i.push((j, bij)); // ∂a_i/∂p_j
                    grad_i.push((n + j, u)); // ∂a_i/∂y_j
                }
                // (∇²φ_i)/a_i: per-edge [[u, -u], [-u, u]] on (y_i, y_j)
                h[(n + i) * dim + (n + i)] += ra[i] * u;
                h[(n + i) * dim + (n + j)] -= ra[i] * u;
                h[(n + j) * dim + (n + i)] -= ra[i] * u;
                h[(n + j) * dim + (n + j)] += ra[i] * u;
            }
            h[(n + i) * dim + (n + i)] += ra[i] * self.lambda[i] * ey;
            grad_i.push((n + i, yi_entry));
            let w2 = ra[i] * ra[i];
            for &(r, vr) in &grad_i {
                for &(c, vc) in &grad_i {
                    h[r * dim + c] += w2 * vr * vc;
                }
            }
            let coef = w2 * self.alpha[i];
            scol.push(grad_i.iter().map(|&(k, val)| (k, coef * val)).collect());
        }

        // p ≥ e^{-y}, p ≤ 1 and y ≥ 0 barriers
        for i in 0..n {
            let w2 = rb[i] * rb[i];
            h[i * dim + i] += w2;
            h[i * dim + (n + i)] += w2 * eny[i];
            h[(n + i) * dim + i] += w2 * eny[i];
            h[(n + i) * dim + (n + i)] += w2 * eny[i] * eny[i] + rb[i] * eny[i];
            if self.p_upper {
                let rc = 1.0 / (1.0 - p[i]);
                h[i * dim + i] += rc * rc;
            }
            h[(n + i) * dim + (n + i)] += 1.0 / (y[i] * y[i]);
        }

        // budget row: Hss = diag(hss) + σ w wᵀ, handled by Sherman–Morrison
        let mut q = vec![0.0; n];
        let mut kappa = 0.0;
        if self.budget.is_some() {
            let rbud = 1.0 / ev.slack_budget;
            for i in 0..n {
                gs[i] += self.w[i] * rbud;
                q[i] = self.w[i] / hss[i];
            }
            let sigma = rbud * rbud;
            let wq: f64 = (0..n).map(|i| self.w[i] * q[i]).sum();
            kappa = sigma / (1.0 + sigma * wq);
        }

        // Schur complement: H̃ = Hpy − C Hss^{-1} Cᵀ with C = ∂²/∂(py)∂s
        for i in 0..n {
            let inv = 1.0 / hss[i];
            for &(r, vr) in &scol[i] {
                for &(c, vc) in &scol[i] {
                    h[r * dim + c] -= vr * vc * inv;
                }
            }
        }
        if kappa != 0.0 {
            let mut cq = vec![0.0; dim];
            for i in 0..n {
                for &(k, val) in &scol[i] {
                    cq[k] += q[i] * val;
                }
            }
            for r in 0..dim {
                if cq[r] == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    h[r * dim + c] += kappa * cq[r] * cq[c];
                }
            }
        }

        // reduced system: H̃ Δpy = −(g_py − C Hss^{-1} g_s)
        let hinv_gs = self.solve_sblock(&hss, &q, kappa, &gs);
        let mut rhs = vec![0.0; dim];
        for k in 0..dim {
            rhs[k] = -gpy[k];
        }
        for i in 0..n {
            for &(k, val) in &scol[i] {
                rhs[k] += val * hinv_gs[i];
            }
        }
        if !cholesky_solve(&mut h, dim, &mut rhs) {
            return (f64::NAN, Vec::new(), Vec::new());
        }
        let dpy = rhs;

        // back-substitute: Δs = Hss^{-1} (−g_s − Cᵀ Δpy)
        let mut rhs_s = vec![0.0; n];
        for i in 0..n {
            let mut acc = -gs[i];
            for &(k, val) in &scol[i] {
                acc -= val * dpy[k];
            }
            rhs_s[i] = acc;
        }
        let ds = self.solve_sblock(&hss, &q, kappa, &rhs_s);

        let mut dec2 = 0.0;
        for i in 0..n {
            dec2 -= gs[i] * ds[i] + gpy[i] * dpy[i] + gpy[n + i] * dpy[n + i];
        }
        (dec2, ds, dpy)
    }

    /// Applies `(diag(hss) + σ w wᵀ)^{-1}` via Sherman–Morrison
    /// (`q = diag(hss)^{-1} w`, `kappa = σ / (1 + σ wᵀq)`).
    fn solve_sblock(&self, hss: &[f64], q: &[f64], kappa: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out: Vec<f64> = (0..n).map(|i| rhs[i] / hss[i]).collect();
        if kappa != 0.0 {
            let wr: f64 = (0..n).map(|i| self.w[i] * out[i]).sum();
            for i in 0..n {
                out[i] -= kappa * q[i] * wr;
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn line_search(
        &self,
        t: f64,
        s: &[f64],
        p: &[f64],
        y: &[f64],
        ds: &[f64],
        dpy: &[f64],
        merit0: f64,
        dec2: f64,
    ) -> f64 {
        let n = self.n();
        let mut alpha = 1.0;
        let mut s1 = vec![0.0; n];
        let mut p1 = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        for _ in 0..80 {
            for i in 0..n {
                s1[i] = s[i] + alpha * ds[i];
                p1[i] = p[i] + alpha * dpy[i];
                y1[i] = y[i] + alpha * dpy[n + i];
            }
            if let Some(ev) = self.eval(t, &s1, &p1, &y1) {
                if ev.merit <= merit0 - 0.25 * alpha * dec2 {
                    return alpha;
                }
            }
            alpha *= 0.7;
        }
        0.0
    }
}

/// The partially linearized subproblem in its smooth exponential form, over
/// (s, y) with `y` free:
/// minimize `wᵀs + cᵀe^{-y}` subject to
/// `φ̂_i(y) ≤ α_i s_i + r_i`, `s ≥ 0`,
/// with `φ̂_i(y) = λ̂_i e^{y_i} + e^{y_i} (B̂ e^{-y})_i` for the shifted data
/// `λ̂ = λ + p ∘ (Bp)`, `B̂ = diag(1-p) B`, `r = δ + λ + Bp` at the current
/// linearization point `p`.
pub struct ScpSubproblem<'a> {
    pub b_hat: &'a CsrMatrix,
    pub alpha: &'a [f64],
    pub rhs: &'a [f64],
    pub lambda_hat: &'a [f64],
    pub w: &'a [f64],
    pub c_obj: &'a [f64],
}

struct ScpEval {
    phi: Vec<f64>,
    slack_a: Vec<f64>,
    merit: f64,
    objective: f64,
}

impl<'a> ScpSubproblem<'a> {
    fn n(&self) -> usize {
        self.b_hat.n()
    }

    fn eval(&self, t: f64, s: &[f64], y: &[f64]) -> Option<ScpEval> {
        let n = self.n();
        let eny: Vec<f64> = y.iter().map(|v| (-v).exp()).collect();
        let be = self.b_hat.apply(&eny);
        let mut phi = vec![0.0; n];
        let mut slack_a = vec![0.0; n];
        let mut barrier = 0.0;
        let mut objective = 0.0;
        for i in 0..n {
            let ey = y[i].exp();
            phi[i] = self.lambda_hat[i] * ey + ey * be[i];
            slack_a[i] = self.alpha[i] * s[i] + self.rhs[i] - phi[i];
            if slack_a[i] <= 0.0 || s[i] <= 0.0 {
                return None;
            }
            barrier -= slack_a[i].ln() + s[i].ln();
            objective += self.w[i] * s[i] + self.c_obj[i] * eny[i];
        }
        Some(ScpEval { phi, slack_a, merit: t * objective + barrier, objective })
    }

    pub fn solve(&self, opts: BarrierOptions) -> Result<BarrierSolution, BarrierError> {
        let n = self.n();
        let m = 2.0 * n as f64;
        // start: y = 0, s to cover the coupling with room
        let mut y = vec![0.0f64; n];
        let b1 = self.b_hat.row_sums();
        let mut s: Vec<f64> = (0..n)
            .map(|i| ((self.lambda_hat[i] + b1[i] - self.rhs[i]) / self.alpha[i]).max(0.0) + 0.5)
            .collect();
        if self.eval(1.0, &s, &y).is_none() {
            return Err(BarrierError::InfeasibleStart("scp subproblem start infeasible".into()));
        }
        let mut t = opts.t0;
        let mut stages = 0;
        let mut newton_total = 0;
        for _stage in 0..opts.max_stages {
            stages += 1;
            for _step in 0..opts.max_newton_per_stage {
                let ev = match self.eval(t, &s, &y) {
                    Some(ev) => ev,
                    None => return Err(BarrierError::NotConverged("iterate left the domain".into())),
                };
                let (dec2, ds, dy) = self.newton_direction(t, &s, &y, &ev);
                if !dec2.is_finite() {
                    return Err(BarrierError::NotConverged("indefinite Newton system".into()));
                }
                newton_total += 1;
                if dec2 * 0.5 < 1e-10 {
                    break;
                }
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let s1: Vec<f64> = (0..n).map(|i| s[i] + alpha * ds[i]).collect();
                    let y1: Vec<f64> = (0..n).map(|i| y[i] + alpha * dy[i]).collect();
                    if let Some(ev1) = self.eval(t, &s1, &y1) {
                        if ev1.merit <= ev.merit - 0.25 * alpha * dec2 {
                            s = s1;
                            y = y1;
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
                .eval(t, &s, &y)
                .ok_or_else(|| BarrierError::NotConverged("iterate left the domain".into()))?;
            if m / t <= opts.tol * (1.0 + ev.objective.abs()) {
                let p = y.iter().map(|v| (-v).exp()).collect();
                return Ok(BarrierSolution {
                    objective: ev.objective,
                    gap: m / t,
                    stages,
                    newton_steps: newton_total,
                    s,
                    p,
                    y,
                });
            }
            t *= opts.mu;
        }
        Err(BarrierError::NotConverged(format!("gap {:e} after {stages} stages", m / t)))
    }

    fn newton_direction(&self, t: f64, s: &[f64], y: &[f64], ev: &ScpEval) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut h = vec![0.0; n * n];
        let mut gs = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let ra: Vec<f64> = ev.slack_a.iter().map(|&v| 1.0 / v).collect();
        let eny: Vec<f64> = y.iter().map(|v| (-v).exp()).collect();

        let hss: Vec<f64> = (0..n)
            .map(|i| {
                let a = self.alpha[i] * ra[i];
                a * a + 1.0 / (s[i] * s[i])
            })
            .collect();

        for i in 0..n {
            gs[i] = t * self.w[i] - self.alpha[i] * ra[i] - 1.0 / s[i];
            gy[i] = -t * self.c_obj[i] * eny[i] + ra[i] * ev.phi[i];
            h[i * n + i] += t * self.c_obj[i] * eny[i];
        }
        let mut scol: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let ey = y[i].exp();
            let mut grad_i: Vec<(usize, f64)> = Vec::new();
            let mut yi_entry = -ev.phi[i];
            for (j, bij) in self.b_hat.row(i) {
                let u = bij * ey * eny[j];
                gy[j] -= ra[i] * u;
                if j == i {
                    yi_entry += u;
                } else {
                    grad_i.push((j, u));
                }
                h[i * n + i] += ra[i] * u;
                h[i * n + j] -= ra[i] * u;
                h[j * n + i] -= ra[i] * u;
                h[j * n + j] += ra[i] * u;
            }
            h[i * n + i] += ra[i] * self.lambda_hat[i] * ey;
            grad_i.push((i, yi_entry));
            let w2 = ra[i] * ra[i];
            for &(r, vr) in &grad_i {
                for &(c, vc) in &grad_i {
                    h[r * n + c] += w2 * vr * vc;
                }
            }
            let coef = w2 * self.alpha[i];
            scol.push(grad_i.iter().map(|&(k, val)| (k, coef * val)).collect());
        }
        for i in 0..n {
            let inv = 1.0 / hss[i];
            for &(r, vr) in &scol[i] {
                for &(c, vc) in &scol[i] {
                    h[r * n + c] -= vr * vc * inv;
                }
            }
        }
        let mut rhs: Vec<f64> = (0..n).map(|k| -gy[k]).collect();
        for i in 0..n {
            let hg = gs[i] / hss[i];
            for &(k, val) in &scol[i] {
                rhs[k] += val * hg;
            }
        }
        if !cholesky_solve(&mut h, n, &mut rhs) {
            return (f64::NAN, Vec::new(), Vec::new());
        }
        let dy = rhs;
        let mut ds = vec![0.0; n];
        for i in 0..n {
            let mut acc = -gs[i];
            for &(k, val) in &scol[i] {
                acc -= val * dy[k];
            }
            ds[i] = acc / hss[i];
        }
        let mut dec2 = 0.0;
        for i in 0..n {
            dec2 -= gs[i] * ds[i] + gy[i] * dy[i];
        }
        (dec2, ds, dy)
    }
}

/// Dense LU with partial pivoting for the nonsymmetric systems of the shift
/// relaxation (the matrix `diag(z) − B` is not symmetric in general).
pub(crate) struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<DenseLu> {
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (piv, mag) = (col..n)
                .map(|r| (r, lu[perm[r] * n + col].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            if mag < 1e-300 {
                return None;
            }
            perm.swap(col, piv);
            let prow = perm[col];
            let pval = lu[prow * n + col];
            for r in col + 1..n {
                let row = perm[r];
                let f = lu[row * n + col] / pval;
                lu[row * n + col] = f;
                if f == 0.0 {
                    continue;
                }
                for c in col + 1..n {
                    lu[row * n + c] -= f * lu[prow * n + c];
                }
            }
        }
        Some(DenseLu { n, lu, perm })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|r| rhs[self.perm[r]]).collect();
        for r in 1..n {
            let row = self.perm[r];
            for c in 0..r {
                x[r] -= self.lu[row * n + c] * x[c];
            }
        }
        for r in (0..n).rev() {
            let row = self.perm[r];
            for c in r + 1..n {
                x[r] -= self.lu[row * n + c] * x[c];
            }
            x[r] /= self.lu[row * n + r];
        }
        x
    }

    /// Full inverse, column by column.
    pub(crate) fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let x = self.solve(&e);
            e[col] = 0.0;
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }
}

/// Dense Cholesky solve of `A x = rhs` (A symmetric positive definite,
/// row-major). Retries with growing diagonal regularization on breakdown;
/// returns false only if that also fails.
pub(crate) fn cholesky_solve(a: &mut [f64], n: usize, rhs: &mut [f64]) -> bool {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    let pristine = a.to_vec();
    let mut reg = 0.0;
    for attempt in 0..5 {
        if attempt > 0 {
            a.copy_from_slice(&pristine);
            reg = if reg == 0.0 { 1e-12 * max_diag } else { reg * 1e3 };
            for i in 0..n {
                a[i * n + i] += reg;
            }
        }
        if cholesky_factor(a, n) {
            for i in 0..n {
                let mut acc = rhs[i];
                for k in 0..i {
                    acc -= a[i * n + k] * rhs[k];
                }
                rhs[i] = acc / a[i * n + i];
            }
            for i in (0..n).rev() {
                let mut acc = rhs[i];
                for k in i + 1..n {
                    acc -= a[k * n + i] * rhs[k];
                }
                rhs[i] = acc / a[i * n + i];
            }
            return true;
        }
    }
    false
}

/// In-place lower Cholesky; false if a pivot is not strictly positive.
fn cholesky_factor(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;

    #[test]
    fn cholesky_small_system() {
        // A = [[4,2],[2,3]], rhs = [10, 9] → x = [2, 5/3... ] solve by hand:
        // 4x+2y=10, 2x+3y=9 → x = 1.5, y = 2
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        let mut rhs = vec![10.0, 9.0];
        assert!(cholesky_solve(&mut a, 2, &mut rhs));
        assert!((rhs[0] - 1.5).abs() < 1e-12 && (rhs[1] - 2.0).abs() < 1e-12);
    }

    /// Finite-difference check of the barrier gradient assembly on a small
    /// asymmetric instance, including the budget row.
    #[test]
    fn newton_gradient_matches_finite_differences() {
        let b = CsrMatrix::from_triplets(2, &[(0, 1, 0.8), (1, 0, 0.3)]);
        let alpha = [1.0, 1.0];
        let rhs0 = [0.2, 0.3];
        let lambda = [0.1, 0.2];
        let w = [1.0, 2.0];
        let c_obj = [5.0, 4.0];
        let p_hint = [0.5, 0.5];
        let prog = CoupledProgram {
            b: &b,
            alpha: &alpha,
            rhs0: &rhs0,
            lambda: &lambda,
            w: &w,
            c_obj: &c_obj,
            p_upper: true,
            budget: Some(4.0),
            p_hint: &p_hint,
        };
        let t = 3.0;
        let s = vec![0.7, 0.9];
        let p = vec![0.6, 0.55];
        let y = vec![0.9, 1.1];
        let ev = prog.eval(t, &s, &p, &y).unwrap();

        // analytic gradient re-derived through the Newton assembly by probing
        // with an identity Hessian is awkward; instead compare the merit
        // decrease predicted by (g, Δ) against finite differences of eval
        let (dec2, ds, dpy) = prog.newton_direction(t, &s, &p, &y, &ev);
        assert!(dec2.is_finite() && dec2 > 0.0);
        let h = 1e-6;
        let mut s1 = s.clone();
        let mut p1 = p.clone();
        let mut y1 = y.clone();
        for i in 0..2 {
            s1[i] += h * ds[i];
            p1[i] += h * dpy[i];
            y1[i] += h * dpy[2 + i];
        }
        let ev1 = prog.eval(t, &s1, &p1, &y1).unwrap();
        let directional = (ev1.merit - ev.merit) / h;
        // gᵀΔ = −dec² for a Newton step
        assert!(
            (directional + dec2).abs() <= 1e-4 * (1.0 + dec2),
            "directional {directional}, dec2 {dec2}"
        );
    }

    #[test]
    fn single_node_relaxation_reaches_closed_form() {
        // min s + 10 p s.t. coupling with λ = δ = 0.1, α = 1 (B empty-ish):
        // optimum matches the closed-form (0.8, p = 0.1), objective 1.8
        let b = CsrMatrix::from_triplets(1, &[]);
        let alpha = [1.0];
        let rhs0 = [0.2];
        let lambda = [0.1];
        let w = [1.0];
        let c_obj = [10.0];
        let p_hint = [0.5];
        let prog = CoupledProgram {
            b: &b,
            alpha: &alpha,
            rhs0: &rhs0,
            lambda: &lambda,
            w: &w,
            c_obj: &c_obj,
            p_upper: true,
            budget: None,
            p_hint: &p_hint,
        };
        let sol = prog.solve(BarrierOptions::with_tol(1e-9)).unwrap();
        assert!((sol.objective - 1.8).abs() < 1e-6, "objective {}", sol.objective);
        assert!((sol.s[0] - 0.8).abs() < 1e-5, "s {}", sol.s[0]);
        assert!((sol.p[0] - 0.1).abs() < 1e-6, "p {}", sol.p[0]);
    }
}
