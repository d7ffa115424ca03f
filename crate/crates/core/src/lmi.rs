//! Affine matrix inequalities `F(z) = F_0 + sum_i z_i F_i ⪰ eps I` over
//! block-diagonal symmetric matrices, a dense interior-point feasibility
//! backend, and bisection over a scalar decay rate.
//!
//! "Infeasible" means that no point with margin `eps` inside the search ball
//! `||z|| <= radius` was found at the required accuracy; the solver does not
//! produce dual certificates. A feasible verdict is only ever returned after
//! a direct eigenvalue check of `F(z)` on the returned point.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, symmetrize, Matrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    constant: Matrix,
    coeffs: Vec<Matrix>,
}

impl LmiBlock {
    pub fn constant(&self) -> &Matrix {
        &self.constant
    }

    pub fn coeffs(&self) -> &[Matrix] {
        &self.coeffs
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, z: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (zi, fi) in z.iter().zip(&self.coeffs) {
            if *zi != 0.0 {
                out += fi * *zi;
            }
        }
        out
    }
}

/// Block-diagonal affine symmetric-matrix-valued function of `num_vars`
/// real decision variables. Each block must be positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMatrixInequality {
    num_vars: usize,
    blocks: Vec<LmiBlock>,
}

fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::domain(format!("{what} is not symmetric")));
    }
    Ok(())
}

impl AffineMatrixInequality {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            blocks: Vec::new(),
        }
    }

    pub fn add_block(&mut self, constant: Matrix, coeffs: Vec<Matrix>) -> Result<()> {
        let d = constant.nrows();
        if !constant.is_square() || d == 0 {
            return Err(Error::dim("block constant must be square and non-empty"));
        }
        if coeffs.len() != self.num_vars {
            return Err(Error::dim(format!(
                "block needs {} coefficient matrices, got {}",
                self.num_vars,
                coeffs.len()
            )));
        }
        check_symmetric(&constant, "block constant")?;
        for (i, c) in coeffs.iter().enumerate() {
            if c.shape() != (d, d) {
                return Err(Error::dim(format!(
                    "coefficient {i} is {}x{}, block is {d}x{d}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            check_symmetric(c, &format!("coefficient {i}"))?;
        }
        self.blocks.push(LmiBlock {
            constant: symmetrize(&constant),
            coeffs: coeffs.iter().map(symmetrize).collect(),
        });
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(LmiBlock::size).collect()
    }

    pub fn evaluate(&self, z: &[f64]) -> Vec<Matrix> {
        self.blocks.iter().map(|b| b.evaluate(z)).collect()
    }

    /// Smallest eigenvalue of `F(z)` over all blocks, by direct evaluation.
    pub fn min_eigenvalue(&self, z: &[f64]) -> f64 {
        self.evaluate(z)
            .iter()
            .map(min_sym_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute entry over all constant and coefficient matrices.
    pub fn scale(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::once(&b.constant).chain(&b.coeffs))
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }

    /// Every block multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            num_vars: self.num_vars,
            blocks: self
                .blocks
                .iter()
                .map(|b| LmiBlock {
                    constant: &b.constant * factor,
                    coeffs: b.coeffs.iter().map(|c| c * factor).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityResult {
    pub status: FeasibilityStatus,
    /// Decision vector; set only when feasible.
    pub z: Option<Vec<f64>>,
    /// Minimum eigenvalue of `F(z)` measured on the returned point.
    pub margin: f64,
    /// Margin the problem was solved for.
    pub eps: f64,
    pub newton_steps: usize,
    pub note: String,
}

impl FeasibilityResult {
    fn without_point(status: FeasibilityStatus, eps: f64, steps: usize, note: String) -> Self {
        Self {
            status,
            z: None,
            margin: f64::NAN,
            eps,
            newton_steps: steps,
            note,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Margin relative to the problem scale (largest absolute entry).
    pub eps_rel: f64,
    /// Absolute margin; overrides `eps_rel` when set.
    pub eps_abs: Option<f64>,
    /// Radius of the ball `||z|| <= radius` searched, after the problem is
    /// normalized to unit scale.
    pub radius: f64,
    pub max_newton_steps: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_rel: 1e-7,
            eps_abs: None,
            radius: 1e7,
            max_newton_steps: 2000,
            verbose: false,
        }
    }
}

impl SolverOptions {
    pub fn margin_for(&self, p: &AffineMatrixInequality) -> f64 {
        self.eps_abs.unwrap_or(self.eps_rel * p.scale())
    }
}

/// A feasibility method for [`AffineMatrixInequality`]. Backends may return
/// any point they like; [`solve_feasibility`] re-certifies it.
pub trait FeasibilityBackend {
    fn solve(&self, p: &AffineMatrixInequality, eps: f64) -> FeasibilityResult;
}

/// Decides eps-feasibility with the built-in [`BarrierSolver`].
pub fn solve_feasibility(p: &AffineMatrixInequality, opts: &SolverOptions) -> FeasibilityResult {
    let solver = BarrierSolver {
        radius: opts.radius,
        max_newton_steps: opts.max_newton_steps,
        verbose: opts.verbose,
    };
    solve_with(&solver, p, opts.margin_for(p))
}

/// Runs `backend` and re-verifies any feasible verdict by computing the
/// eigenvalues of `F(z)` directly.
pub fn solve_with(
    backend: &dyn FeasibilityBackend,
    p: &AffineMatrixInequality,
    eps: f64,
) -> FeasibilityResult {
    let mut res = backend.solve(p, eps);
    if res.status == FeasibilityStatus::Feasible {
        let certified = res
            .z
            .as_deref()
            .filter(|z| z.len() == p.num_vars())
            .map(|z| p.min_eigenvalue(z));
        match certified {
            Some(m) if m.is_finite() && m >= 0.5 * eps && m > 0.0 => res.margin = m,
            other => {
                return FeasibilityResult::without_point(
                    FeasibilityStatus::Unknown,
                    eps,
                    res.newton_steps,
                    format!("backend claimed feasibility but re-verification gave {other:?}"),
                )
            }
        }
    }
    res
}

/// Path-following barrier method for
/// `max t  s.t.  F_j(z) ⪰ t I  (all blocks),  ||z|| <= radius`
/// on the problem normalized to unit scale. It stops as soon as `t >= eps`
/// (feasible) or once the duality-gap bound `nu / s` proves `t* < eps`.
/// Newton steps allowed per centering stage.
const STAGE_STEPS: usize = 60;

#[derive(Clone, Debug)]
pub struct BarrierSolver {
    pub radius: f64,
    pub max_newton_steps: usize,
    pub verbose: bool,
}

struct Barrier<'a> {
    p: &'a AffineMatrixInequality,
    radius2: f64,
}

/// Value, gradient and Hessian of `-s t - sum log det S_j - log(R^2 - |z|^2)`.
struct Local {
    value: f64,
    grad: Vector,
    hess: Matrix,
}

impl Barrier<'_> {
    fn slack(&self, x: &[f64]) -> Option<Vec<Cholesky<f64, nalgebra::Dyn>>> {
        let (z, t) = x.split_at(x.len() - 1);
        let t = t[0];
        let mut out = Vec::with_capacity(self.p.blocks.len());
        for b in &self.p.blocks {
            let mut s = b.evaluate(z);
            for i in 0..s.nrows() {
                s[(i, i)] -= t;
            }
            out.push(Cholesky::new(s)?);
        }
        Some(out)
    }

    fn ball_slack(&self, x: &[f64]) -> f64 {
        let z = &x[..x.len() - 1];
        self.radius2 - z.iter().map(|v| v * v).sum::<f64>()
    }

    fn value(&self, x: &[f64], s: f64) -> Option<f64> {
        let q = self.ball_slack(x);
        if q.is_nan() || q <= 0.0 {
            return None;
        }
        let chols = self.slack(x)?;
        let logdet: f64 = chols
            .iter()
            .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .sum();
        let v = -s * x[x.len() - 1] - logdet - q.ln();
        v.is_finite().then_some(v)
    }

    fn local(&self, x: &[f64], s: f64) -> Option<Local> {
        let nv = self.p.num_vars;
        let dim = nv + 1;
        let q = self.ball_slack(x);
        if q.is_nan() || q <= 0.0 {
            return None;
        }
        let chols = self.slack(x)?;
        let mut grad = Vector::zeros(dim);
        let mut hess = Matrix::zeros(dim, dim);
        let mut value = -s * x[nv] - q.ln();
        grad[nv] = -s;

        for (b, chol) in self.p.blocks.iter().zip(&chols) {
            value -= 2.0
                * chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|d| d.ln())
                    .sum::<f64>();
            let sinv = chol.inverse();
            // M_a = S^{-1} A_a, with A_t = -I.
            let mut ms: Vec<Matrix> = b.coeffs.iter().map(|c| &sinv * c).collect();
            ms.push(-&sinv);
            for a in 0..dim {
                grad[a] -= ms[a].trace();
                for c in a..dim {
                    // tr(M_a M_c) = sum_kl M_a[k,l] M_c[l,k]
                    let h = ms[a].component_mul(&ms[c].transpose()).sum();
                    hess[(a, c)] += h;
                    if c != a {
                        hess[(c, a)] += h;
                    }
                }
            }
        }
        for i in 0..nv {
            grad[i] += 2.0 * x[i] / q;
            hess[(i, i)] += 2.0 / q;
            for j in 0..nv {
                hess[(i, j)] += 4.0 * x[i] * x[j] / (q * q);
            }
        }
        (value.is_finite() && grad.iter().all(|g| g.is_finite())).then_some(Local {
            value,
            grad,
            hess,
        })
    }
}

/// Solves `H d = -g` with Jacobi scaling and, if needed, growing diagonal
/// regularization.
fn newton_direction(hess: &Matrix, grad: &Vector) -> Option<Vector> {
    let n = grad.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let h = hess[(i, i)];
            if h > 0.0 {
                1.0 / h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = Matrix::from_fn(n, n, |i, j| hess[(i, j)] * d[i] * d[j]);
    let rhs = Vector::from_fn(n, |i, _| -grad[i] * d[i]);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = scaled.clone();
        for i in 0..n {
            h[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(h) {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Some(Vector::from_fn(n, |i, _| y[i] * d[i]));
            }
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    None
}

impl FeasibilityBackend for BarrierSolver {
    fn solve(&self, p: &AffineMatrixInequality, eps: f64) -> FeasibilityResult {
        use FeasibilityStatus::*;
        let scale = p.scale();
        if !eps.is_finite() || eps <= 0.0 {
            return FeasibilityResult::without_point(
                Unknown,
                eps,
                0,
                "margin must be positive".into(),
            );
        }
        if scale == 0.0 || p.blocks.is_empty() {
            // F(z) = 0 for every z, or nothing to satisfy.
            return if p.blocks.is_empty() {
                FeasibilityResult {
                    status: Feasible,
                    z: Some(vec![0.0; p.num_vars]),
                    margin: f64::INFINITY,
                    eps,
                    newton_steps: 0,
                    note: "no constraints".into(),
                }
            } else {
                FeasibilityResult::without_point(Infeasible, eps, 0, "all blocks are zero".into())
            };
        }
        let normalized = p.scaled(1.0 / scale);
        let eps_n = eps / scale;
        let barrier = Barrier {
            p: &normalized,
            radius2: self.radius * self.radius,
        };
        let nv = p.num_vars;
        let nu = p.block_sizes().iter().sum::<usize>() as f64 + 1.0;

        let mut x = vec![0.0; nv + 1];
        x[nv] = normalized.min_eigenvalue(&x[..nv]) - 1.0;
        let mut s = 1.0;
        let mut steps = 0usize;

        let finish_feasible = |x: &[f64], steps: usize| FeasibilityResult {
            status: Feasible,
            z: Some(x[..nv].to_vec()),
            margin: x[nv] * scale,
            eps,
            newton_steps: steps,
            note: String::new(),
        };

        loop {
            // Centering at the current s; the iteration cap guards against
            // a decrement stuck at the rounding-noise floor.
            let stage_start = steps;
            loop {
                if x[nv] >= eps_n {
                    return finish_feasible(&x, steps);
                }
                if steps >= self.max_newton_steps {
                    return FeasibilityResult::without_point(
                        Unknown,
                        eps,
                        steps,
                        format!(
                            "Newton step limit reached (t = {:e}, s = {s:e})",
                            x[nv] * scale
                        ),
                    );
                }
                let Some(loc) = barrier.local(&x, s) else {
                    return FeasibilityResult::without_point(
                        Unknown,
                        eps,
                        steps,
                        "lost strict feasibility of the barrier iterate".into(),
                    );
                };
                let Some(dir) = newton_direction(&loc.hess, &loc.grad) else {
                    return FeasibilityResult::without_point(
                        Unknown,
                        eps,
                        steps,
                        "singular Newton system".into(),
                    );
                };
                let slope = loc.grad.dot(&dir);
                let decrement2 = -slope;
                if decrement2 < 1e-6
                    || !decrement2.is_finite()
                    || steps - stage_start >= STAGE_STEPS
                {
                    break;
                }
                steps += 1;
                let mut alpha = if decrement2.sqrt() > 0.25 {
                    1.0 / (1.0 + decrement2.sqrt())
                } else {
                    1.0
                };
                let mut accepted = false;
                while alpha > 1e-16 {
                    let trial: Vec<f64> = x
                        .iter()
                        .zip(dir.iter())
                        .map(|(a, d)| a + alpha * d)
                        .collect();
                    if let Some(v) = barrier.value(&trial, s) {
                        if v <= loc.value + 1e-4 * alpha * slope {
                            x = trial;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted || alpha < 1e-9 {
                    // No measurable progress at this s; treat the iterate as centered.
                    break;
                }
                if self.verbose {
                    eprintln!(
                        "  newton {steps:4}  s = {s:9.2e}  t = {:+.6e}  dec2 = {decrement2:.3e}  step = {alpha:.2e}",
                        x[nv] * scale
                    );
                }
            }

            let gap = nu / s;
            if x[nv] + 1.05 * gap < eps_n {
                return FeasibilityResult::without_point(
                    Infeasible,
                    eps,
                    steps,
                    format!(
                        "max margin bounded by {:e} < eps",
                        (x[nv] + 1.05 * gap) * scale
                    ),
                );
            }
            if gap < 1e-3 * eps_n {
                return FeasibilityResult::without_point(
                    Infeasible,
                    eps,
                    steps,
                    format!(
                        "margin {:e} below eps at resolution {:e}",
                        x[nv] * scale,
                        gap * scale
                    ),
                );
            }
            s *= 8.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BisectionOptions {
    pub tol: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            lambda_lo: 1e-4,
            lambda_hi: 1.0 - 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub lambda: f64,
    pub status: FeasibilityStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bisection {
    /// Smallest probed feasible rate.
    pub lambda: f64,
    /// Feasible solution found at `lambda`.
    pub witness: FeasibilityResult,
    pub probes: Vec<Probe>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BisectionOutcome {
    Converged(Bisection),
    InfeasibleAtUpper { lambda_hi: f64, eps: f64 },
}

/// Bisects for the smallest `lambda` in `(lambda_lo, lambda_hi]` accepted by
/// a monotone feasibility oracle. The returned rate is feasible and lies
/// within `tol` of the largest infeasible probe (or of `lambda_lo`).
pub fn bisect_lambda<F>(mut oracle: F, opts: &BisectionOptions) -> Result<BisectionOutcome>
where
    F: FnMut(f64) -> Result<FeasibilityResult>,
{
    if !(opts.tol > 0.0 && opts.lambda_lo >= 0.0 && opts.lambda_lo < opts.lambda_hi) {
        return Err(Error::domain(format!("invalid bisection options {opts:?}")));
    }
    let mut probes = Vec::new();
    let mut probe = |lambda: f64, probes: &mut Vec<Probe>| -> Result<FeasibilityResult> {
        let r = oracle(lambda)?;
        probes.push(Probe {
            lambda,
            status: r.status,
        });
        if r.status == FeasibilityStatus::Unknown {
            return Err(Error::SolverUnknown {
                lambda,
                reason: r.note.clone(),
            });
        }
        Ok(r)
    };

    let mut hi = opts.lambda_hi;
    let mut witness = probe(hi, &mut probes)?;
    if !witness.is_feasible() {
        return Ok(BisectionOutcome::InfeasibleAtUpper {
            lambda_hi: hi,
            eps: witness.eps,
        });
    }
    let mut lo = opts.lambda_lo;
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        let r = probe(mid, &mut probes)?;
        if r.is_feasible() {
            hi = mid;
            witness = r;
        } else {
            lo = mid;
        }
    }
    Ok(BisectionOutcome::Converged(Bisection {
        lambda: hi,
        witness,
        probes,
    }))
}
