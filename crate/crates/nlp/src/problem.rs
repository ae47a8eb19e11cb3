use crate::sparse::Triplets;

/// A smooth constrained nonlinear program
///
/// ```text
///   min f(x)   s.t.   c_E(x) = 0,   c_I(x) <= 0,   lower <= x <= upper
/// ```
///
/// Bounds may be infinite. Jacobians are returned in coordinate form with
/// one row per constraint; duplicate entries are summed.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Variable bounds `(lower, upper)`; use `f64::NEG_INFINITY` / `f64::INFINITY`
    /// for free directions.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Starting point. Non-finite entries mean "no preference".
    fn initial_point(&self) -> Vec<f64>;

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]);
    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]);
    fn eq_jacobian(&self, x: &[f64]) -> Triplets;
    fn ineq_jacobian(&self, x: &[f64]) -> Triplets;

    /// Hessian of the Lagrangian
    /// `obj_factor * ∇²f + Σ λ_i ∇²c_E,i + Σ μ_j ∇²c_I,j`,
    /// either triangle (entries mirrored across the diagonal are treated as
    /// the same entry). `None` selects a finite-difference approximation.
    fn hessian(
        &self,
        _x: &[f64],
        _obj_factor: f64,
        _lambda_eq: &[f64],
        _mu_ineq: &[f64],
    ) -> Option<Triplets> {
        None
    }
}

/// Gradient of the Lagrangian with the given multipliers.
pub fn lagrangian_gradient<P: NlpProblem + ?Sized>(
    p: &P,
    x: &[f64],
    obj_factor: f64,
    lambda_eq: &[f64],
    mu_ineq: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; p.num_vars()];
    p.gradient(x, &mut g);
    g.iter_mut().for_each(|v| *v *= obj_factor);
    p.eq_jacobian(x).tmul_add(lambda_eq, &mut g);
    p.ineq_jacobian(x).tmul_add(mu_ineq, &mut g);
    g
}

/// Central-difference Hessian of the Lagrangian (lower triangle), used when a
/// problem does not supply second derivatives.
pub fn finite_difference_hessian<P: NlpProblem + ?Sized>(
    p: &P,
    x: &[f64],
    obj_factor: f64,
    lambda_eq: &[f64],
    mu_ineq: &[f64],
) -> Triplets {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let gp = lagrangian_gradient(p, &xp, obj_factor, lambda_eq, mu_ineq);
        xp[j] = x[j] - h;
        let gm = lagrangian_gradient(p, &xp, obj_factor, lambda_eq, mu_ineq);
        xp[j] = x[j];
        cols.push(
            gp.iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let mut t = Triplets::new(n, n);
    for j in 0..n {
        for i in j..n {
            let v = 0.5 * (cols[j][i] + cols[i][j]);
            if v != 0.0 || i == j {
                t.push(i, j, v);
            }
        }
    }
    t
}

/// Largest relative mismatch between an analytic Jacobian and fourth-order
/// central differences of the constraint functions, over all entries.
///
/// Mismatch for an entry is `|a - fd| / max(1, |a|, |fd|)`. The five-point
/// stencil is exact on polynomials up to degree four in each coordinate, so a
/// fairly wide step keeps rounding error small without adding truncation error.
pub fn jacobian_fd_error(x: &[f64], m: usize, eval: impl Fn(&[f64], &mut [f64]), jac: &Triplets) -> f64 {
    let n = x.len();
    let dense = jac.to_dense();
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    let mut f = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for j in 0..n {
        let h = 1e-3 * (1.0 + x[j].abs());
        for (out, k) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            xp[j] = x[j] + k * h;
            eval(&xp, out);
        }
        xp[j] = x[j];
        for i in 0..m {
            let fd = (-f[0][i] + 8.0 * f[1][i] - 8.0 * f[2][i] + f[3][i]) / (12.0 * h);
            let a = dense[i][j];
            let err = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
            worst = worst.max(err);
        }
    }
    worst
}
