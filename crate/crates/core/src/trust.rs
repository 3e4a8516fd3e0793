//! Trust-region step computation.
//!
//! The production update solves two KL-bounded linear programs with conjugate
//! gradient (a reward ascent step `delta_r` and a cost descent step
//! `delta_c`), then takes the convex combination
//! `delta = (1 - mu) delta_r + mu delta_c` with the smallest `mu` that still
//! secures a decrease `eps = -beta <g_c, delta_c>` of the linearised cost.
//! [`analytic_qp`] solves the joint problem exactly from dense matrices and
//! serves as a reference for small instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustStepConfig {
    /// Target KL divergence per update.
    pub eps_kl: f64,
    pub cg_iters: usize,
    /// Relative residual at which CG stops early.
    pub cg_tol: f64,
    /// Damping added to the Fisher matrix.
    pub tikhonov: f64,
    /// Safety bias in `(0, 1]`; 1 reproduces CPO.
    pub beta: f64,
    /// Guard added to the denominator of `mu`.
    pub eps_div: f64,
    pub max_backtracks: usize,
    pub step_fraction: f64,
}

impl Default for TrustStepConfig {
    fn default() -> Self {
        Self {
            eps_kl: 0.01,
            cg_iters: 50,
            cg_tol: 1e-10,
            tikhonov: 0.02,
            beta: 0.75,
            eps_div: 1e-8,
            max_backtracks: 100,
            step_fraction: 0.8,
        }
    }
}

impl TrustStepConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.eps_kl > 0.0 && self.eps_kl.is_finite()) {
            return fail("target_kl must be positive");
        }
        if self.cg_iters == 0 {
            return fail("cg_iters must be at least 1");
        }
        if !(self.cg_tol >= 0.0) {
            return fail("cg_tol must be non-negative");
        }
        if !(self.tikhonov >= 0.0 && self.tikhonov.is_finite()) {
            return fail("tikhonov must be non-negative");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return fail("beta must lie in (0, 1]");
        }
        if !(self.eps_div >= 0.0) {
            return fail("eps_div must be non-negative");
        }
        if self.max_backtracks == 0 {
            return fail("max_backtracks must be at least 1");
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return fail("step_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = g` for a symmetric positive definite operator given as a
/// matrix-vector product. Stops when `||A x - g|| <= cg_tol * max(1, ||g||)`
/// or after `cg_iters` iterations.
pub fn conjugate_gradient<F>(apply: F, g: &[f64], cfg: &TrustStepConfig) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !all_finite(g) {
        return Err(Error::Numerical("conjugate gradient right-hand side is not finite".into()));
    }
    let threshold = cfg.cg_tol * norm(g).max(1.0);
    let mut x = vec![0.0; g.len()];
    let mut r = g.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    while iterations < cfg.cg_iters && rs.sqrt() > threshold {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Numerical("non-finite curvature in conjugate gradient".into()));
        }
        if pap <= 0.0 {
            return Err(Error::Numerical("operator is not positive definite".into()));
        }
        let step = rs / pap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(Error::Numerical("non-finite residual in conjugate gradient".into()));
        }
        iterations += 1;
        let ratio = rs_next / rs;
        rs = rs_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
    }
    Ok(CgSolution {
        x,
        iterations,
        residual: rs.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Maximise `<g, delta>` (reward step).
    Ascent,
    /// Minimise `<g, delta>` (cost step).
    Descent,
}

/// The step of length `sqrt(2 eps_kl / g^T x) x`, `x = A^{-1} g`, that
/// optimises `<g, delta>` subject to `delta^T A delta / 2 <= eps_kl`.
pub fn trust_region_step<F>(
    apply: F,
    g: &[f64],
    eps_kl: f64,
    cfg: &TrustStepConfig,
    direction: Direction,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !all_finite(g) {
        return Err(Error::Numerical("gradient is not finite".into()));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; g.len()]);
    }
    let x = conjugate_gradient(apply, g, cfg)?.x;
    let gx = dot(g, &x);
    if !(gx > 0.0) {
        return Err(Error::Numerical(format!(
            "natural-gradient curvature g^T x = {gx} is not positive"
        )));
    }
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    let scale = sign * (2.0 * eps_kl / gx).sqrt();
    Ok(x.into_iter().map(|v| scale * v).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub mu: f64,
    pub delta: Vec<f64>,
    /// Required first-order cost decrease, `-beta <g_c, delta_c>`.
    pub eps: f64,
    pub gc_dot_delta_r: f64,
    pub gc_dot_delta_c: f64,
    pub gr_dot_delta: f64,
    pub gc_dot_delta: f64,
}

/// Picks the smallest `mu` in `[0, 1]` with `<g_c, delta_mu> <= -eps`:
///
/// `mu = max(0, (<g_c, d_r> + eps) / (<g_c, d_r> - <g_c, d_c> + eps_div))`,
/// clamped to 1. `delta_c` is expected to be a descent step for `g_c`.
pub fn safety_bias_mix(
    g_r: &[f64],
    g_c: &[f64],
    delta_r: &[f64],
    delta_c: &[f64],
    cfg: &TrustStepConfig,
) -> MixResult {
    let x = dot(g_c, delta_r);
    let y = dot(g_c, delta_c);
    let eps = -cfg.beta * y;
    let num = x + eps;
    let den = x - y + cfg.eps_div;
    let mu = if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else if num > 0.0 {
        1.0
    } else {
        0.0
    };
    let delta: Vec<f64> = delta_r
        .iter()
        .zip(delta_c)
        .map(|(r, c)| (1.0 - mu) * r + mu * c)
        .collect();
    MixResult {
        mu,
        eps,
        gc_dot_delta_r: x,
        gc_dot_delta_c: y,
        gr_dot_delta: dot(g_r, &delta),
        gc_dot_delta: dot(g_c, &delta),
        delta,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub delta: Vec<f64>,
    /// Multiplier of the linear cost constraint.
    pub lambda: f64,
    /// Multiplier of the KL constraint.
    pub nu: f64,
}

/// Exact optimum of
/// `max <g_r, d>  s.t.  <g_c, d> <= -eps,  d^T F d / 2 <= eps_kl`
/// for positive definite `F`, non-zero and non-parallel `g_r`, `g_c`, and
/// `eps > 0`. Intended for small dense instances.
pub fn analytic_qp(
    g_r: &[f64],
    g_c: &[f64],
    fisher: &DMatrix<f64>,
    eps: f64,
    eps_kl: f64,
) -> Result<QpSolution> {
    let n = g_r.len();
    if g_c.len() != n || fisher.nrows() != n || fisher.ncols() != n {
        return Err(Error::Input("analytic_qp dimension mismatch".into()));
    }
    if !(eps > 0.0 && eps_kl > 0.0) {
        return Err(Error::Input("analytic_qp needs eps > 0 and eps_kl > 0".into()));
    }
    let (nr, nc) = (norm(g_r), norm(g_c));
    if nr == 0.0 || nc == 0.0 {
        return Err(Error::Degenerate("zero gradient".into()));
    }
    let cos = dot(g_r, g_c) / (nr * nc);
    if cos.abs() >= 1.0 - 1e-12 {
        return Err(Error::Degenerate("reward and cost gradients are parallel".into()));
    }
    let chol = fisher
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("Fisher matrix is not positive definite".into()))?;
    let fr: Vec<f64> = chol.solve(&DVector::from_column_slice(g_r)).iter().copied().collect();
    let fc: Vec<f64> = chol.solve(&DVector::from_column_slice(g_c)).iter().copied().collect();
    let a = dot(g_r, &fr);
    let b = dot(g_r, &fc);
    let c = dot(g_c, &fc);
    let step = |lambda: f64| -> Option<(Vec<f64>, f64)> {
        let q = a - 2.0 * lambda * b + lambda * lambda * c;
        if !(q > 0.0) {
            return None;
        }
        let s = (2.0 * eps_kl / q).sqrt();
        let d: Vec<f64> = fr.iter().zip(&fc).map(|(r, c)| s * (r - lambda * c)).collect();
        Some((d, 1.0 / s))
    };

    let s0 = (2.0 * eps_kl / a).sqrt();
    if s0 * b <= -eps {
        let (delta, nu) = step(0.0).ok_or_else(|| Error::Degenerate("a <= 0".into()))?;
        return Ok(QpSolution { delta, lambda: 0.0, nu });
    }
    if eps * eps > 2.0 * eps_kl * c {
        return Err(Error::Degenerate(
            "cost decrease is unreachable inside the trust region".into(),
        ));
    }

    let qa = 2.0 * eps_kl * c * c - eps * eps * c;
    let qb = -4.0 * eps_kl * b * c + 2.0 * eps * eps * b;
    let qc = 2.0 * eps_kl * b * b - eps * eps * a;
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    let mut roots = Vec::with_capacity(2);
    if qa.abs() <= 1e-14 * scale {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        // Numerically stable pair of roots.
        let q = -0.5 * (qb + qb.signum() * disc);
        if q != 0.0 {
            roots.push(q / qa);
            roots.push(qc / q);
        } else {
            roots.push(0.0);
        }
    }
    // Squaring admits a spurious root where <g_c, d> = +eps; keep the one
    // with b - lambda c < 0.
    let lambda = roots
        .into_iter()
        .filter(|&l| l > 0.0 && l.is_finite() && b - l * c < 0.0)
        .min_by(|x, y| {
            let gap = |l: f64| {
                step(l)
                    .map(|(d, _)| (dot(g_c, &d) + eps).abs())
                    .unwrap_or(f64::INFINITY)
            };
            gap(*x).total_cmp(&gap(*y))
        })
        .ok_or_else(|| Error::Degenerate("no positive multiplier solves the quadratic".into()))?;
    let (delta, nu) = step(lambda).ok_or_else(|| Error::Degenerate("degenerate step".into()))?;
    Ok(QpSolution { delta, lambda, nu })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub accepted: bool,
    /// Accepted scale, or 0 when no candidate passed.
    pub alpha: f64,
    /// Number of scales evaluated.
    pub attempts: usize,
}

/// Geometric backtracking over `alpha = step_fraction^k`, `k = 0, 1, ...`,
/// `max_backtracks` attempts. Accepts the first `alpha` with
/// `kl(alpha) <= eps_kl` and `cost(alpha) <= cost(0)`. Evaluator errors reject
/// the candidate.
pub fn line_search<K, C>(mut kl: K, mut cost: C, cfg: &TrustStepConfig) -> LineSearchResult
where
    K: FnMut(f64) -> Result<f64>,
    C: FnMut(f64) -> Result<f64>,
{
    let rejected = LineSearchResult {
        accepted: false,
        alpha: 0.0,
        attempts: 0,
    };
    let baseline = match cost(0.0) {
        Ok(v) if v.is_finite() => v,
        _ => return rejected,
    };
    let mut alpha = 1.0;
    for attempt in 1..=cfg.max_backtracks {
        let kl_ok = matches!(kl(alpha), Ok(v) if v <= cfg.eps_kl);
        if kl_ok && matches!(cost(alpha), Ok(v) if v <= baseline) {
            return LineSearchResult {
                accepted: true,
                alpha,
                attempts: attempt,
            };
        }
        alpha *= cfg.step_fraction;
    }
    LineSearchResult {
        attempts: cfg.max_backtracks,
        ..rejected
    }
}

/// Angle in degrees between two vectors, `None` if either has zero norm.
pub fn angle_deg(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !(na.is_finite() && nb.is_finite()) {
        return None;
    }
    // 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0 and 180.
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / na - y / nb).collect();
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / na + y / nb).collect();
    Some((2.0 * norm(&diff).atan2(norm(&sum))).to_degrees())
}

/// Matrix-vector product of a dense matrix, usable wherever an operator
/// closure is expected.
pub fn dense_operator(m: &DMatrix<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |v: &[f64]| {
        if v.len() != m.ncols() {
            return Err(Error::Input("operator dimension mismatch".into()));
        }
        Ok((m * DVector::from_column_slice(v)).iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn cg_diagonal_and_identity() {
        let cfg = TrustStepConfig::default();
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let sol = conjugate_gradient(dense_operator(&m), &[2.0, 4.0], &cfg).unwrap();
        close(sol.x[0], 1.0, 1e-12);
        close(sol.x[1], 1.0, 1e-12);
        let id = DMatrix::<f64>::identity(3, 3);
        let sol = conjugate_gradient(dense_operator(&id), &[1.0, -2.0, 0.5], &cfg).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn cg_rejects_non_finite_and_indefinite() {
        let cfg = TrustStepConfig::default();
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            conjugate_gradient(dense_operator(&id), &[f64::NAN, 0.0], &cfg),
            Err(Error::Numerical(_))
        ));
        let neg = -DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            conjugate_gradient(dense_operator(&neg), &[1.0, 0.0], &cfg),
            Err(Error::Numerical(_))
        ));
        let blowup = |_: &[f64]| Ok(vec![f64::INFINITY, 0.0]);
        assert!(conjugate_gradient(blowup, &[1.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn trust_steps_with_identity() {
        let cfg = TrustStepConfig::default();
        let id = DMatrix::<f64>::identity(2, 2);
        let dr = trust_region_step(dense_operator(&id), &[3.0, 4.0], 0.5, &cfg, Direction::Ascent).unwrap();
        close(dr[0], 0.6, 1e-15);
        close(dr[1], 0.8, 1e-15);
        close(0.5 * dot(&dr, &dr), 0.5, 1e-15);
        let dc = trust_region_step(dense_operator(&id), &[0.0, 1.0], 0.5, &cfg, Direction::Descent).unwrap();
        assert_eq!(dc, vec![0.0, -1.0]);
        let zero = trust_region_step(dense_operator(&id), &[0.0, 0.0], 0.5, &cfg, Direction::Ascent).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn broken_operator_is_reported() {
        let cfg = TrustStepConfig::default();
        let flip = |v: &[f64]| Ok(vec![v[0], -v[1]]);
        let res = trust_region_step(flip, &[0.0, 1.0], 0.5, &cfg, Direction::Ascent);
        assert!(matches!(res, Err(Error::Numerical(_))));
        let failing = |_: &[f64]| Err(Error::Numerical("fvp".into()));
        assert!(trust_region_step(failing, &[1.0, 1.0], 0.5, &cfg, Direction::Descent).is_err());
    }

    #[test]
    fn figure_panels() {
        let cfg = TrustStepConfig { beta: 0.7, ..Default::default() };
        let first = safety_bias_mix(&[1.5, 0.7], &[1.0, -1.0], &[1.5, 0.7], &[-1.0, 1.0], &cfg);
        close(first.eps, 1.4, 1e-15);
        close(first.mu, 2.2 / 2.8, 1e-8);
        close(first.mu, 0.7857, 1e-4);
        let second = safety_bias_mix(&[1.5, 0.4], &[-1.0, -1.0], &[1.5, 0.4], &[1.0, 1.0], &cfg);
        close(second.gc_dot_delta_r, -1.9, 1e-15);
        assert_eq!(second.mu, 0.0);
        assert_eq!(second.delta, vec![1.5, 0.4]);
    }

    #[test]
    fn mix_guard_cases() {
        let cfg = TrustStepConfig::default();
        let m = safety_bias_mix(&[1.0, 0.0], &[0.0, 0.0], &[0.3, 0.4], &[-0.1, 0.2], &cfg);
        assert_eq!((m.mu, m.eps), (0.0, 0.0));
        assert_eq!(m.delta, vec![0.3, 0.4]);
        let cpo = TrustStepConfig { beta: 1.0, ..Default::default() };
        let m = safety_bias_mix(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.5], &[0.0, -1.0], &cpo);
        close(m.mu, 1.0, 1e-7);
        assert!(m.mu <= 1.0);
    }

    #[test]
    fn analytic_qp_worked_instances() {
        let id = DMatrix::<f64>::identity(2, 2);
        let sol = analytic_qp(&[1.0, 0.0], &[0.0, 1.0], &id, 0.3, 0.5).unwrap();
        close(sol.lambda, (0.09f64 / 0.91).sqrt(), 1e-12);
        close(sol.delta[0], 0.95394, 1e-5);
        close(sol.delta[1], -0.3, 1e-12);

        let sol = analytic_qp(&[1.0, 0.0], &[-0.5, -1.0], &id, 0.3, 0.5).unwrap();
        assert_eq!(sol.lambda, 0.0);
        close(sol.delta[0], 1.0, 1e-15);
        close(sol.delta[1], 0.0, 1e-15);

        assert!(matches!(
            analytic_qp(&[1.0, 0.0], &[-1.0, 0.0], &id, 0.3, 0.5),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            analytic_qp(&[0.0, 0.0], &[0.0, 1.0], &id, 0.3, 0.5),
            Err(Error::Degenerate(_))
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            analytic_qp(&[1.0, 0.0], &[0.0, 1.0], &singular, 0.3, 0.5),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn line_search_schedules() {
        let cfg = TrustStepConfig::default();
        let res = line_search(|_| Ok(0.0), |a| Ok(-a), &cfg);
        assert_eq!((res.accepted, res.alpha), (true, 1.0));

        let eps = cfg.eps_kl;
        let res = line_search(|a| Ok(2.0 * a * a * eps), |a| Ok(-a), &cfg);
        assert!(res.accepted);
        close(res.alpha, 0.64, 1e-15);
        assert_eq!(res.attempts, 3);

        let res = line_search(|_| Ok(1.0), |_| Ok(0.0), &cfg);
        assert!(!res.accepted);
        assert_eq!(res.attempts, 100);

        // evaluator failures count as rejections
        let res = line_search(
            |a| if a > 0.9 { Err(Error::Numerical("far".into())) } else { Ok(0.0) },
            |_| Ok(0.0),
            &cfg,
        );
        close(res.alpha, 0.8, 1e-15);
    }

    #[test]
    fn angles() {
        close(angle_deg(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0, 1e-12);
        close(angle_deg(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 180.0, 1e-12);
        close(angle_deg(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 90.0, 1e-12);
        assert_eq!(angle_deg(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrustStepConfig::default().validate().is_ok());
        for bad in [
            TrustStepConfig { beta: 0.0, ..Default::default() },
            TrustStepConfig { beta: 1.2, ..Default::default() },
            TrustStepConfig { eps_kl: 0.0, ..Default::default() },
            TrustStepConfig { step_fraction: 1.0, ..Default::default() },
            TrustStepConfig { cg_iters: 0, ..Default::default() },
            TrustStepConfig { tikhonov: -0.1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
