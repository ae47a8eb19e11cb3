//! Primal-dual interior-point method with slack variables.
//!
//! Inequalities (including finite variable bounds) are written as
//! `h(x) + z = 0, z > 0`; the barrier subproblem is solved by damped Newton
//! steps on the perturbed KKT conditions. The Newton system is reduced to
//!
//! ```text
//!   [ M + δw·I    Jgᵀ  ] [dx]   [ -N ]
//!   [ Jg        -δc·I  ] [dλ] = [ -g ]
//!
//!   M = ∇²L + Jhᵀ diag(μ/z) Jh,   N = ∇L + Jhᵀ diag(1/z) (μ∘h + γ)
//! ```
//!
//! and `δw` is raised until the factorization reports `n` positive and `m`
//! negative pivots. By default the full fraction-to-the-boundary step is
//! taken, as in MIPS; optionally steps are backtracked by an Armijo rule on
//! the ℓ1 barrier-penalty merit function. A Levenberg–Marquardt feasibility
//! restoration phase takes over when the line search fails or, without it,
//! when the violation stalls.

use std::time::Instant;

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::ldl::{LdlError, LdlSymbolic, SymmetricMatrix};
use crate::problem::{finite_difference_hessian, NlpProblem};
use crate::sparse::{Csr, Triplets};
use crate::NlpError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on the largest constraint or bound violation.
    pub tol_feas: f64,
    /// Tolerance on scaled stationarity, complementarity and objective change.
    pub tol_opt: f64,
    pub max_iter: usize,
    pub timeout_s: f64,
    /// Centering parameter for the barrier update `γ = σ zᵀμ / m`.
    pub sigma: f64,
    /// Fraction-to-the-boundary factor.
    pub tau: f64,
    /// Backtrack on the merit function instead of taking the full
    /// fraction-to-the-boundary step.
    pub line_search: bool,
    /// Iteration budget of one feasibility restoration phase.
    pub restoration_max_iter: usize,
    /// Violation above which a failed restoration declares infeasibility.
    pub infeasibility_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_opt: 1e-6,
            max_iter: 500,
            timeout_s: 600.0,
            sigma: 0.1,
            tau: 0.99995,
            line_search: false,
            restoration_max_iter: 100,
            infeasibility_threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    Timeout,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::Timeout => "timeout",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Merit values around one accepted line-search step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeritStep {
    pub iteration: usize,
    pub before: f64,
    pub after: f64,
    pub alpha: f64,
    /// True when the step was taken without the Armijo test.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Largest absolute violation of constraints and bounds.
    pub primal_infeasibility: f64,
    /// Scaled stationarity measure at the returned point.
    pub dual_infeasibility: f64,
    pub complementarity: f64,
    pub objective: f64,
    pub wall_time_s: f64,
    pub restoration_phases: usize,
    #[serde(skip)]
    pub merit_trace: Vec<MeritStep>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Multipliers of the problem's equality constraints (unscaled).
    pub lambda_eq: Vec<f64>,
    /// Multipliers of the problem's inequality constraints (unscaled).
    pub mu_ineq: Vec<f64>,
    pub report: SolveReport,
}

/// Returns a starting point inside the variable bounds.
///
/// A finite initial coordinate is kept when it is at least `1e-4` inside its
/// bounds and pushed inward to that margin otherwise; a coordinate outside a
/// doubly-bounded box, or one without a preference, goes to the midpoint.
/// Fixed variables take their fixed value.
pub fn restore_feasible_start<P: NlpProblem + ?Sized>(p: &P) -> Result<Vec<f64>, NlpError> {
    const MARGIN: f64 = 1e-4;
    let (lo, hi) = p.bounds();
    let x0 = p.initial_point();
    let mut x = Vec::with_capacity(lo.len());
    for (i, ((&l, &u), &v)) in lo.iter().zip(&hi).zip(&x0).enumerate() {
        if l > u || l.is_nan() || u.is_nan() {
            return Err(NlpError::InfeasibleBounds {
                index: i,
                lower: l,
                upper: u,
            });
        }
        if l == u {
            x.push(l);
            continue;
        }
        let m = MARGIN.min(0.5 * (u - l));
        let both = l.is_finite() && u.is_finite();
        let val = if !v.is_finite() || (both && (v < l || v > u)) {
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 1.0,
                (false, true) => u - 1.0,
                (false, false) => 0.0,
            }
        } else {
            v.max(l + m).min(u - m)
        };
        x.push(val);
    }
    Ok(x)
}

/// Problem seen by the iteration: scaled user constraints plus bound rows.
struct Reformulated<'a, P: ?Sized> {
    p: &'a P,
    n: usize,
    neq_p: usize,
    niq_p: usize,
    fixed: Vec<(usize, f64)>,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    obj_scale: f64,
    eq_scale: Vec<f64>,
    ineq_scale: Vec<f64>,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    jg: Csr,
    jh: Csr,
    /// Largest unscaled violation.
    viol: f64,
}

impl<'a, P: NlpProblem + ?Sized> Reformulated<'a, P> {
    fn new(p: &'a P, x0: &[f64]) -> Self {
        let n = p.num_vars();
        let (lo, hi) = p.bounds();
        let mut fixed = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..n {
            if lo[i] == hi[i] {
                fixed.push((i, lo[i]));
                continue;
            }
            if lo[i].is_finite() {
                lower.push((i, lo[i]));
            }
            if hi[i].is_finite() {
                upper.push((i, hi[i]));
            }
        }
        let mut grad = vec![0.0; n];
        p.gradient(x0, &mut grad);
        let gmax = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let obj_scale = 1.0 / gmax.max(1.0);
        let row_scale = |jac: &Triplets, m: usize| {
            let mut s = vec![0.0f64; m];
            for (r, _, v) in jac.iter() {
                s[r] = s[r].max(v.abs());
            }
            s.into_iter().map(|v| 1.0 / v.max(1.0)).collect::<Vec<_>>()
        };
        let eq_scale = row_scale(&p.eq_jacobian(x0), p.num_eq());
        let ineq_scale = row_scale(&p.ineq_jacobian(x0), p.num_ineq());
        Self {
            p,
            n,
            neq_p: p.num_eq(),
            niq_p: p.num_ineq(),
            fixed,
            lower,
            upper,
            obj_scale,
            eq_scale,
            ineq_scale,
        }
    }

    fn neq(&self) -> usize {
        self.neq_p + self.fixed.len()
    }

    fn niq(&self) -> usize {
        self.niq_p + self.lower.len() + self.upper.len()
    }

    /// Values only (for line-search trials).
    fn values(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>, f64) {
        let f = self.p.objective(x) * self.obj_scale;
        let mut ge = vec![0.0; self.neq_p];
        self.p.eq_constraints(x, &mut ge);
        let mut hi = vec![0.0; self.niq_p];
        self.p.ineq_constraints(x, &mut hi);
        let mut viol: f64 = 0.0;
        let mut g = Vec::with_capacity(self.neq());
        for (v, s) in ge.iter().zip(&self.eq_scale) {
            viol = viol.max(v.abs());
            g.push(v * s);
        }
        for &(i, val) in &self.fixed {
            viol = viol.max((x[i] - val).abs());
            g.push(x[i] - val);
        }
        let mut h = Vec::with_capacity(self.niq());
        for (v, s) in hi.iter().zip(&self.ineq_scale) {
            viol = viol.max(*v);
            h.push(v * s);
        }
        for &(i, l) in &self.lower {
            viol = viol.max(l - x[i]);
            h.push(l - x[i]);
        }
        for &(i, u) in &self.upper {
            viol = viol.max(x[i] - u);
            h.push(x[i] - u);
        }
        if g.iter().chain(&h).any(|v| !v.is_finite()) {
            viol = f64::NAN;
        }
        (f, g, h, viol)
    }

    fn eval(&self, x: &[f64]) -> Eval {
        let (f, g, h, viol) = self.values(x);
        let mut grad = vec![0.0; self.n];
        self.p.gradient(x, &mut grad);
        grad.iter_mut().for_each(|v| *v *= self.obj_scale);

        let mut jg = Triplets::new(self.neq(), self.n);
        for (r, c, v) in self.p.eq_jacobian(x).iter() {
            jg.push(r, c, v * self.eq_scale[r]);
        }
        for (k, &(i, _)) in self.fixed.iter().enumerate() {
            jg.push(self.neq_p + k, i, 1.0);
        }
        let mut jh = Triplets::new(self.niq(), self.n);
        for (r, c, v) in self.p.ineq_jacobian(x).iter() {
            jh.push(r, c, v * self.ineq_scale[r]);
        }
        let off = self.niq_p;
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            jh.push(off + k, i, -1.0);
        }
        let off = off + self.lower.len();
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            jh.push(off + k, i, 1.0);
        }
        Eval {
            f,
            grad,
            g,
            h,
            jg: jg.to_csr(),
            jh: jh.to_csr(),
            viol,
        }
    }

    fn hessian(&self, x: &[f64], lambda: &[f64], mu: &[f64]) -> Triplets {
        let lp: Vec<f64> = lambda[..self.neq_p]
            .iter()
            .zip(&self.eq_scale)
            .map(|(l, s)| l * s)
            .collect();
        let mp: Vec<f64> = mu[..self.niq_p]
            .iter()
            .zip(&self.ineq_scale)
            .map(|(m, s)| m * s)
            .collect();
        self.p
            .hessian(x, self.obj_scale, &lp, &mp)
            .unwrap_or_else(|| finite_difference_hessian(self.p, x, self.obj_scale, &lp, &mp))
    }

    fn unscale_multipliers(&self, lambda: &[f64], mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let le = lambda[..self.neq_p]
            .iter()
            .zip(&self.eq_scale)
            .map(|(l, s)| l * s / self.obj_scale)
            .collect();
        let mi = mu[..self.niq_p]
            .iter()
            .zip(&self.ineq_scale)
            .map(|(m, s)| m * s / self.obj_scale)
            .collect();
        (le, mi)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reusable KKT factorization state: cached symbolic analysis and the last
/// primal regularization.
struct KktSolver {
    symbolic: Option<LdlSymbolic>,
    last_delta_w: f64,
}

const DELTA_C: f64 = 1e-8;
/// Unguarded steps without a halving of the violation before restoration.
const STALL_LIMIT: usize = 25;
/// Factorization failures handed to the restoration phase before giving up.
const MAX_KKT_FAILURES: usize = 3;
/// Violation at which an unguarded step is treated as divergent.
const DIVERGED: f64 = 1e10;

impl KktSolver {
    fn new() -> Self {
        Self {
            symbolic: None,
            last_delta_w: 0.0,
        }
    }

    fn assemble(
        n: usize,
        m_mat: &[(usize, usize, f64)],
        jg: &Csr,
        delta_w: f64,
        delta_c: f64,
    ) -> SymmetricMatrix {
        let neq = jg.nrows;
        let mut entries = Vec::with_capacity(m_mat.len() + jg.cols.len() + n + neq);
        entries.extend_from_slice(m_mat);
        for i in 0..n {
            entries.push((i, i, delta_w));
        }
        for r in 0..neq {
            for (c, v) in jg.row(r) {
                entries.push((c, n + r, v));
            }
            entries.push((n + r, n + r, -delta_c));
        }
        SymmetricMatrix::from_entries(n + neq, entries)
    }

    fn factor_with(&mut self, a: &SymmetricMatrix) -> Result<crate::ldl::LdlFactor, LdlError> {
        let reuse = self.symbolic.as_ref().is_some_and(|s| s.matches(a));
        if !reuse {
            self.symbolic = Some(LdlSymbolic::analyze(a)?);
        }
        self.symbolic.as_ref().expect("analyzed").factor(a)
    }

    /// Factors the reduced KKT system with inertia correction and solves it
    /// for `rhs`. Returns the factorization for further right-hand sides and
    /// the solution.
    fn solve(
        &mut self,
        n: usize,
        m_mat: &[(usize, usize, f64)],
        jg: &Csr,
        rhs: &[f64],
    ) -> Option<(KktFactor, Vec<f64>)> {
        let neq = jg.nrows;
        let mut delta_w = 0.0;
        let mut attempts = 0usize;
        loop {
            let a = Self::assemble(n, m_mat, jg, delta_w, DELTA_C);
            let ok = match self.factor_with(&a) {
                Ok(f) => {
                    let inertia = f.inertia();
                    if inertia.positive == n && inertia.negative == neq {
                        Some(f)
                    } else {
                        trace!("inertia {:?} with δw={delta_w:e}", inertia);
                        None
                    }
                }
                Err(e) => {
                    trace!("factorization failed with δw={delta_w:e}: {e}");
                    None
                }
            };
            if let Some(f) = ok {
                let factor = KktFactor {
                    f,
                    a0: Self::assemble(n, m_mat, jg, delta_w, 0.0),
                };
                if let Some(sol) = factor.solve(rhs) {
                    if delta_w > 0.0 {
                        self.last_delta_w = delta_w;
                    }
                    return Some((factor, sol));
                }
            }
            attempts += 1;
            if attempts > 60 {
                return None;
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w == 0.0 {
                    1e-4
                } else {
                    (self.last_delta_w / 3.0).max(1e-20)
                }
            } else if self.last_delta_w == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 {
                return None;
            }
        }
    }
}

struct KktFactor {
    f: crate::ldl::LdlFactor,
    /// The system without the dual regularization, for refinement.
    a0: SymmetricMatrix,
}

impl KktFactor {
    fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let mut sol = rhs.to_vec();
        self.f.solve_in_place(&mut sol);
        for _ in 0..3 {
            let r: Vec<f64> = self.a0.mul(&sol).iter().zip(rhs).map(|(ax, b)| b - ax).collect();
            if inf_norm(&r) <= 1e-14 * (1.0 + inf_norm(rhs)) {
                break;
            }
            let mut corr = r;
            self.f.solve_in_place(&mut corr);
            sol.iter_mut().zip(&corr).for_each(|(s, c)| *s += c);
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

/// `Jhᵀ diag(w) Jh` as a list of entries.
fn weighted_gram(jh: &Csr, w: &[f64], out: &mut Vec<(usize, usize, f64)>) {
    for r in 0..jh.nrows {
        let wr = w[r];
        if wr == 0.0 {
            continue;
        }
        let (a, b) = (jh.ptr[r], jh.ptr[r + 1]);
        for p in a..b {
            let (ci, vi) = (jh.cols[p], jh.vals[p]);
            for q in a..=p {
                out.push((ci, jh.cols[q], wr * vi * jh.vals[q]));
            }
        }
    }
}

struct State {
    x: Vec<f64>,
    z: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    gamma: f64,
}

fn merit(f: f64, g: &[f64], h: &[f64], z: &[f64], gamma: f64, nu: f64) -> f64 {
    let barrier: f64 = z.iter().map(|v| v.ln()).sum();
    let cviol: f64 =
        g.iter().map(|v| v.abs()).sum::<f64>() + h.iter().zip(z).map(|(a, b)| (a + b).abs()).sum::<f64>();
    f - gamma * barrier + nu * cviol
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    ev: Eval,
    phi: f64,
    forced: bool,
}

/// Solves `p` from [`restore_feasible_start`].
pub fn solve<P: NlpProblem + ?Sized>(p: &P, opts: &SolverOptions) -> Result<Solution, NlpError> {
    let start = Instant::now();
    let x0 = restore_feasible_start(p)?;
    let prob = Reformulated::new(p, &x0);
    let n = prob.n;
    let neq = prob.neq();
    let niq = prob.niq();

    let mut ev = prob.eval(&x0);
    if !ev.f.is_finite() || ev.viol.is_nan() || ev.grad.iter().any(|v| !v.is_finite()) {
        return Err(NlpError::NonFiniteStart);
    }

    let z0 = 1.0;
    let z: Vec<f64> = ev.h.iter().map(|&h| (-h).max(z0)).collect();
    let mu: Vec<f64> = z.iter().map(|z| 1.0 / z).collect();
    let mut st = State {
        x: x0,
        z,
        lambda: vec![0.0; neq],
        mu,
        gamma: 1.0,
    };

    let mut kkt = KktSolver::new();
    let mut nu = 1.0f64;
    let mut f_prev = ev.f;
    let mut trace_steps = Vec::new();
    let mut restorations = 0usize;
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0usize;
    let mut gradcond = f64::INFINITY;
    let mut compcond = f64::INFINITY;
    let mut best_viol = ev.viol;
    let mut stalled = 0usize;
    let mut kkt_failures = 0usize;

    for it in 0..=opts.max_iter {
        iterations = it;
        // --- convergence test
        let mut lx = ev.grad.clone();
        ev.jg.tmul_add(&st.lambda, &mut lx);
        ev.jh.tmul_add(&st.mu, &mut lx);
        let xnorm = inf_norm(&st.x);
        gradcond = inf_norm(&lx) / (1.0 + inf_norm(&st.lambda).max(inf_norm(&st.mu)));
        compcond = if niq > 0 {
            dot(&st.z, &st.mu) / (1.0 + xnorm)
        } else {
            0.0
        };
        let costcond = (ev.f - f_prev).abs() / (1.0 + f_prev.abs());
        debug!(
            "it {it:3} f={:.8e} viol={:.2e} grad={:.2e} comp={:.2e} γ={:.2e}",
            ev.f / prob.obj_scale,
            ev.viol,
            gradcond,
            compcond,
            st.gamma
        );
        if !ev.viol.is_finite() || !ev.f.is_finite() || !gradcond.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if ev.viol <= opts.tol_feas
            && gradcond <= opts.tol_opt
            && compcond <= opts.tol_opt
            && (it > 0 && costcond <= opts.tol_opt)
        {
            status = SolveStatus::Optimal;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        if start.elapsed().as_secs_f64() > opts.timeout_s {
            status = SolveStatus::Timeout;
            break;
        }

        // --- Newton direction
        let hess = prob.hessian(&st.x, &st.lambda, &st.mu);
        let mut m_entries: Vec<(usize, usize, f64)> = hess.iter().collect();
        let w: Vec<f64> = st.mu.iter().zip(&st.z).map(|(m, z)| m / z).collect();
        weighted_gram(&ev.jh, &w, &mut m_entries);
        let mut nvec = lx.clone();
        let t: Vec<f64> = (0..niq)
            .map(|i| (st.mu[i] * ev.h[i] + st.gamma) / st.z[i])
            .collect();
        ev.jh.tmul_add(&t, &mut nvec);
        let mut rhs: Vec<f64> = nvec.iter().map(|v| -v).collect();
        rhs.extend(ev.g.iter().map(|v| -v));
        let Some((_, sol)) = kkt.solve(n, &m_entries, &ev.jg, &rhs) else {
            // a singular system away from feasibility often means there is
            // no feasible point nearby; let the restoration phase decide
            if ev.viol > opts.tol_feas && kkt_failures < MAX_KKT_FAILURES {
                kkt_failures += 1;
                restorations += 1;
                let (e, outcome) = run_restoration(&prob, &mut st, opts, start);
                ev = e;
                match outcome {
                    Some(s) => {
                        status = s;
                        break;
                    }
                    None => {
                        best_viol = ev.viol;
                        nu = 1.0;
                        continue;
                    }
                }
            }
            status = SolveStatus::NumericalFailure;
            break;
        };
        let dx = &sol[..n];
        let dlambda = &sol[n..];
        let jh_dx = ev.jh.mul(dx);
        let dz: Vec<f64> = (0..niq).map(|i| -ev.h[i] - st.z[i] - jh_dx[i]).collect();
        let dmu: Vec<f64> = (0..niq)
            .map(|i| -st.mu[i] + (st.gamma - st.mu[i] * dz[i]) / st.z[i])
            .collect();

        let mut alpha_p: f64 = 1.0;
        let mut alpha_d: f64 = 1.0;
        for i in 0..niq {
            if dz[i] < 0.0 {
                alpha_p = alpha_p.min(-opts.tau * st.z[i] / dz[i]);
            }
            if dmu[i] < 0.0 {
                alpha_d = alpha_d.min(-opts.tau * st.mu[i] / dmu[i]);
            }
        }

        // --- line search
        let new_lambda_norm = st
            .lambda
            .iter()
            .zip(dlambda)
            .map(|(a, b)| a + b)
            .chain(st.mu.iter().zip(&dmu).map(|(a, b)| a + b))
            .fold(0.0f64, |a, v| a.max(v.abs()));
        nu = nu.max(1.1 * new_lambda_norm + 1e-6);
        let cviol0: f64 = ev.g.iter().map(|v| v.abs()).sum::<f64>()
            + ev.h.iter().zip(&st.z).map(|(a, b)| (a + b).abs()).sum::<f64>();
        let base_deriv = dot(&ev.grad, dx) - st.gamma * dz.iter().zip(&st.z).map(|(d, z)| d / z).sum::<f64>();
        let mut dphi = base_deriv - nu * cviol0;
        if dphi >= 0.0 && cviol0 > 0.0 {
            nu = base_deriv / (0.9 * cviol0);
            dphi = base_deriv - nu * cviol0;
        }
        let phi0 = merit(ev.f, &ev.g, &ev.h, &st.z, st.gamma, nu);

        let step_small = dx
            .iter()
            .zip(&st.x)
            .all(|(d, x)| d.abs() <= 1e-14 * (1.0 + x.abs()));
        let mut accepted: Option<Trial> = None;
        if !opts.line_search || step_small || dphi >= 0.0 {
            let xt: Vec<f64> = st.x.iter().zip(dx).map(|(x, d)| x + alpha_p * d).collect();
            let et = prob.eval(&xt);
            let zt: Vec<f64> = st.z.iter().zip(&dz).map(|(z, d)| z + alpha_p * d).collect();
            let phi = merit(et.f, &et.g, &et.h, &zt, st.gamma, nu);
            if et.viol.is_finite() && et.f.is_finite() && et.viol <= DIVERGED {
                accepted = Some(Trial {
                    alpha: alpha_p,
                    x: xt,
                    z: zt,
                    ev: et,
                    phi,
                    forced: true,
                });
            }
        } else {
            let mut alpha = alpha_p;
            while alpha > 1e-12 {
                let xt: Vec<f64> = st.x.iter().zip(dx).map(|(x, d)| x + alpha * d).collect();
                let et = prob.eval(&xt);
                if et.viol.is_finite() && et.f.is_finite() {
                    let zt: Vec<f64> = st.z.iter().zip(&dz).map(|(z, d)| z + alpha * d).collect();
                    let phi = merit(et.f, &et.g, &et.h, &zt, st.gamma, nu);
                    if phi <= phi0 + 1e-4 * alpha * dphi {
                        accepted = Some(Trial {
                            alpha,
                            x: xt,
                            z: zt,
                            ev: et,
                            phi,
                            forced: false,
                        });
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        // without merit control, a violation that stops improving hands over
        // to the restoration phase, which also decides infeasibility
        if let Some(t) = &accepted {
            if t.ev.viol < 0.5 * best_viol {
                best_viol = t.ev.viol;
                stalled = 0;
            } else if t.ev.viol > opts.tol_feas {
                stalled += 1;
            }
            if t.forced && stalled >= STALL_LIMIT {
                stalled = 0;
                accepted = None;
            }
        }

        f_prev = ev.f;
        match accepted {
            Some(t) => {
                trace_steps.push(MeritStep {
                    iteration: it,
                    before: phi0,
                    after: t.phi,
                    alpha: t.alpha,
                    forced: t.forced,
                });
                st.x = t.x;
                st.z = t.z;
                for i in 0..niq {
                    st.mu[i] += alpha_d * dmu[i];
                }
                for i in 0..neq {
                    st.lambda[i] += alpha_d * dlambda[i];
                }
                ev = t.ev;
            }
            None if ev.viol <= 10.0 * opts.tol_feas && opts.line_search => {
                // feasible but no merit decrease: numerical noise near a
                // solution, take the boundary-limited step
                let xt: Vec<f64> = st.x.iter().zip(dx).map(|(x, d)| x + alpha_p * d).collect();
                let et = prob.eval(&xt);
                if !et.viol.is_finite() || !et.f.is_finite() {
                    status = SolveStatus::NumericalFailure;
                    break;
                }
                let zt: Vec<f64> = st.z.iter().zip(&dz).map(|(z, d)| z + alpha_p * d).collect();
                trace_steps.push(MeritStep {
                    iteration: it,
                    before: phi0,
                    after: merit(et.f, &et.g, &et.h, &zt, st.gamma, nu),
                    alpha: alpha_p,
                    forced: true,
                });
                st.x = xt;
                st.z = zt;
                for i in 0..niq {
                    st.mu[i] += alpha_d * dmu[i];
                }
                for i in 0..neq {
                    st.lambda[i] += alpha_d * dlambda[i];
                }
                ev = et;
            }
            None => {
                restorations += 1;
                let (e, outcome) = run_restoration(&prob, &mut st, opts, start);
                ev = e;
                if let Some(s) = outcome {
                    status = s;
                    break;
                }
                best_viol = ev.viol;
                // the merit penalty restarts from the current duals
                nu = 1.0;
            }
        }
        if niq > 0 {
            st.gamma = opts.sigma * dot(&st.z, &st.mu) / niq as f64;
        }
    }

    let (lambda_eq, mu_ineq) = prob.unscale_multipliers(&st.lambda, &st.mu);
    let objective = p.objective(&st.x);
    let report = SolveReport {
        status,
        iterations,
        primal_infeasibility: ev.viol,
        dual_infeasibility: gradcond,
        complementarity: compcond,
        objective,
        wall_time_s: start.elapsed().as_secs_f64(),
        restoration_phases: restorations,
        merit_trace: trace_steps,
    };
    debug!(
        "finished: {} after {} iterations, f={:.8e}",
        report.status, report.iterations, report.objective
    );
    Ok(Solution {
        x: st.x,
        lambda_eq,
        mu_ineq,
        report,
    })
}

/// Runs the restoration phase from the current state. Returns the new
/// evaluation and, when the solve must stop, its final status.
fn run_restoration<P: NlpProblem + ?Sized>(
    prob: &Reformulated<'_, P>,
    st: &mut State,
    opts: &SolverOptions,
    start: Instant,
) -> (Eval, Option<SolveStatus>) {
    let outcome = restore_feasibility(prob, st, opts, start);
    let ev = prob.eval(&st.x);
    let status = match outcome {
        RestorationOutcome::Recovered => None,
        RestorationOutcome::Infeasible => Some(SolveStatus::Infeasible),
        RestorationOutcome::Timeout => Some(SolveStatus::Timeout),
    };
    (ev, status)
}

enum RestorationOutcome {
    Recovered,
    Infeasible,
    Timeout,
}

/// Levenberg–Marquardt minimization of `½‖g(x)‖² + ½‖max(h(x), 0)‖²` over the
/// user constraints, keeping `x` inside its bounds. On return the slacks and
/// inequality multipliers are reset around the new point.
fn restore_feasibility<P: NlpProblem + ?Sized>(
    prob: &Reformulated<'_, P>,
    st: &mut State,
    opts: &SolverOptions,
    start: Instant,
) -> RestorationOutcome {
    let (lo, hi) = prob.p.bounds();
    let n = prob.n;
    let project = |x: &mut [f64]| {
        for i in 0..n {
            if lo[i] == hi[i] {
                x[i] = lo[i];
                continue;
            }
            let m = 1e-8 * (1.0 + x[i].abs());
            if lo[i].is_finite() {
                x[i] = x[i].max(lo[i] + m.min(0.5 * (hi[i] - lo[i])));
            }
            if hi[i].is_finite() {
                x[i] = x[i].min(hi[i] - m.min(0.5 * (hi[i] - lo[i])));
            }
        }
    };
    // residual vector over user equalities and violated user inequalities
    let residual = |x: &[f64]| -> (Vec<f64>, Vec<usize>, f64) {
        let (_, g, h, viol) = prob.values(x);
        let mut r = g[..prob.neq_p].to_vec();
        let mut active = Vec::new();
        for (i, &v) in h[..prob.niq_p].iter().enumerate() {
            if v > 0.0 {
                r.push(v);
                active.push(i);
            }
        }
        (r, active, viol)
    };

    let entry_viol = prob.values(&st.x).3;
    let mut rho = 1e-4;
    let mut kkt_symbolic: Option<LdlSymbolic> = None;
    let mut outcome = RestorationOutcome::Infeasible;
    for _ in 0..opts.restoration_max_iter {
        if start.elapsed().as_secs_f64() > opts.timeout_s {
            outcome = RestorationOutcome::Timeout;
            break;
        }
        let (r, active, viol) = residual(&st.x);
        if viol
            <= opts
                .infeasibility_threshold
                .min(0.9 * entry_viol)
                .max(opts.tol_feas)
            || viol <= opts.tol_feas
        {
            outcome = RestorationOutcome::Recovered;
            break;
        }
        let ev = prob.eval(&st.x);
        // stacked Jacobian of the residual
        let m = r.len();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..n {
            let fixed = lo[i] == hi[i];
            entries.push((i, i, if fixed { 1e20 } else { rho }));
        }
        for row in 0..prob.neq_p {
            for (c, v) in ev.jg.row(row) {
                entries.push((c, n + row, v));
            }
        }
        for (k, &row) in active.iter().enumerate() {
            for (c, v) in ev.jh.row(row) {
                entries.push((c, n + prob.neq_p + k, v));
            }
        }
        for k in 0..m {
            entries.push((n + k, n + k, -1.0));
        }
        let a = SymmetricMatrix::from_entries(n + m, entries);
        if !kkt_symbolic.as_ref().is_some_and(|s| s.matches(&a)) {
            kkt_symbolic = LdlSymbolic::analyze(&a).ok();
        }
        let Some(sym) = kkt_symbolic.as_ref() else {
            break;
        };
        let Ok(f) = sym.factor(&a) else {
            rho *= 10.0;
            continue;
        };
        let mut rhs = vec![0.0; n];
        rhs.extend(r.iter().map(|v| -v));
        f.solve_in_place(&mut rhs);
        let mut xt: Vec<f64> = st.x.iter().zip(&rhs[..n]).map(|(x, d)| x + d).collect();
        project(&mut xt);
        let (rt, _, _) = residual(&xt);
        let phi = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        if phi(&rt) < phi(&r) {
            st.x = xt;
            rho = (rho / 3.0).max(1e-12);
        } else {
            rho *= 4.0;
            if rho > 1e12 {
                break;
            }
        }
    }
    if matches!(outcome, RestorationOutcome::Infeasible) {
        // budget exhausted: still acceptable if below the infeasibility line
        if prob.values(&st.x).3 <= opts.infeasibility_threshold {
            outcome = RestorationOutcome::Recovered;
        }
    }
    if matches!(outcome, RestorationOutcome::Recovered) {
        let (_, _, h, _) = prob.values(&st.x);
        let floor = st.gamma.sqrt().max(1e-8);
        for i in 0..h.len() {
            st.z[i] = (-h[i]).max(floor);
            st.mu[i] = (st.gamma / st.z[i]).max(1e-12);
        }
    }
    outcome
}
