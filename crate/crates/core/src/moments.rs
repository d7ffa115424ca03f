//! Second-moment matrices of the random extended coefficients, their
//! low-rank factorization, and the block reshapes that turn a factor into
//! the stacked matrices used by the analysis and synthesis LMIs.
//!
//! All expectations are sample means over a stored [`DrawSet`], so that
//! synthesis and later analysis can be evaluated on the identical empirical
//! distribution.

use rand::Rng;

use crate::delays::{DelayDraw, DelayModel};
use crate::error::{Error, Result};
use crate::linalg::{row_vec, sym_eigen, symmetrize, Matrix};
use crate::plant::{extended_input, ContinuousPlant, ExtendedPair};

/// Default relative eigenvalue threshold for rank truncation.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Delay draws backing a sample-mean expectation.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawSet {
    draws: Vec<DelayDraw>,
    exact: bool,
}

impl DrawSet {
    /// Draws `n` samples from `model`. A constant model yields a single
    /// draw flagged exact, regardless of `n`.
    pub fn sample<R: Rng + ?Sized>(model: &DelayModel, n: usize, rng: &mut R) -> Result<Self> {
        if model.is_constant() {
            return Ok(Self {
                draws: vec![model.sample(rng)],
                exact: true,
            });
        }
        if n == 0 {
            return Err(Error::domain("sample count must be >= 1"));
        }
        Ok(Self {
            draws: model.sample_n(n, rng),
            exact: false,
        })
    }

    pub fn from_draws(draws: Vec<DelayDraw>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::domain("draw set must not be empty"));
        }
        Ok(Self {
            draws,
            exact: false,
        })
    }

    pub fn draws(&self) -> &[DelayDraw] {
        &self.draws
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Sample count as reported in results; 0 marks an exact evaluation.
    pub fn sample_count(&self) -> usize {
        if self.exact {
            0
        } else {
            self.draws.len()
        }
    }

    pub fn extended_pairs(&self, plant: &ContinuousPlant) -> Result<Vec<ExtendedPair>> {
        self.draws.iter().map(|d| plant.extended(d.h)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentForm {
    /// `E[[row(Ahat), row(Bhat)]^T [row(Ahat), row(Bhat)]]`, size `(n+m)(n+2m)`.
    Synthesis,
    /// `E[row(Ahat + Bhat F)^T row(Ahat + Bhat F)]`, size `(n+m)^2`.
    Analysis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondMomentMatrix {
    matrix: Matrix,
    samples: usize,
    form: MomentForm,
}

impl SecondMomentMatrix {
    pub fn new(matrix: Matrix, samples: usize, form: MomentForm) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dim("second-moment matrix must be square"));
        }
        Ok(Self {
            matrix: symmetrize(&matrix),
            samples,
            form,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn form(&self) -> MomentForm {
        self.form
    }
}

/// `(1/N) sum_s v_s^T v_s` for the rows `v_s`, accumulated in index order.
fn gram_mean(rows: &[Vec<f64>]) -> Matrix {
    let w = rows[0].len();
    let v = Matrix::from_fn(rows.len(), w, |i, j| rows[i][j]);
    v.tr_mul(&v) / rows.len() as f64
}

pub fn estimate_synthesis_moment(
    plant: &ContinuousPlant,
    draws: &DrawSet,
) -> Result<SecondMomentMatrix> {
    let rows: Vec<Vec<f64>> = draws
        .extended_pairs(plant)?
        .iter()
        .map(|e| {
            let mut v = row_vec(&e.ahat);
            v.extend(row_vec(&e.bhat));
            v
        })
        .collect();
    SecondMomentMatrix::new(
        gram_mean(&rows),
        draws.sample_count(),
        MomentForm::Synthesis,
    )
}

pub fn estimate_closedloop_moment(
    plant: &ContinuousPlant,
    draws: &DrawSet,
    fhat: &Matrix,
) -> Result<SecondMomentMatrix> {
    let rows = draws
        .extended_pairs(plant)?
        .iter()
        .map(|e| e.closed_loop(fhat).map(|acl| row_vec(&acl)))
        .collect::<Result<Vec<_>>>()?;
    SecondMomentMatrix::new(gram_mean(&rows), draws.sample_count(), MomentForm::Analysis)
}

/// `G` with `G^T G ≈ M`, rank-truncated.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub g: Matrix,
    pub rank: usize,
    pub tol_used: f64,
}

/// Factors a numerically PSD matrix through its eigendecomposition,
/// keeping eigenvalues above `rel_tol * lambda_max`: `G = Λ_r^{1/2} U_r^T`.
pub fn factorize_matrix(m: &Matrix, rel_tol: f64) -> Result<Factorization> {
    if !m.is_square() {
        return Err(Error::dim("factorization needs a square matrix"));
    }
    if !(rel_tol.is_finite() && rel_tol >= 0.0) {
        return Err(Error::domain(format!(
            "rank tolerance must be >= 0, got {rel_tol}"
        )));
    }
    let w = m.nrows();
    let (values, vectors) = sym_eigen(m);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "eigendecomposition produced non-finite values".into(),
        ));
    }
    let mut order: Vec<usize> = (0..w).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let lmax = order.first().map_or(0.0, |&i| values[i]);
    let lmin = order.last().map_or(0.0, |&i| values[i]);
    if lmin < 0.0 && lmin < -1e-12 * lmax.max(0.0) {
        return Err(Error::domain(format!(
            "matrix is not positive semidefinite: eigenvalues span [{lmin:e}, {lmax:e}]"
        )));
    }

    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| lmax > 0.0 && values[i] > rel_tol * lmax)
        .collect();
    let mut g = Matrix::zeros(kept.len(), w);
    for (r, &i) in kept.iter().enumerate() {
        let s = values[i].sqrt();
        for c in 0..w {
            g[(r, c)] = s * vectors[(c, i)];
        }
    }
    Ok(Factorization {
        rank: kept.len(),
        g,
        tol_used: rel_tol,
    })
}

pub fn factorize(msm: &SecondMomentMatrix, rel_tol: f64) -> Result<Factorization> {
    factorize_matrix(msm.matrix(), rel_tol)
}

/// Stacked factors for the synthesis LMI.
#[derive(Clone, Debug, PartialEq)]
pub struct TildeFactors {
    /// `(n+m) rank × (n+m)`.
    pub ga: Matrix,
    /// `(n+m) rank × m`.
    pub gb: Matrix,
    pub rank: usize,
}

/// Stacked factor for the analysis LMI.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopTildeFactor {
    pub gtilde: Matrix,
    pub rank: usize,
}

/// Stacks column blocks `g[:, off + i*width .. off + (i+1)*width]` for
/// `i in 0..count` vertically.
fn stack_blocks(g: &Matrix, offset: usize, width: usize, count: usize) -> Matrix {
    let r = g.nrows();
    let mut out = Matrix::zeros(r * count, width);
    for i in 0..count {
        out.view_mut((i * r, 0), (r, width))
            .copy_from(&g.view((0, offset + i * width), (r, width)));
    }
    out
}

/// Splits `G = [G_A1 .. G_A(n+m), G_B1 .. G_B(n+m)]` and stacks the A and
/// B blocks vertically.
pub fn reshape_tilde(f: &Factorization, n: usize, m: usize) -> Result<TildeFactors> {
    let e = n + m;
    let w = e * (n + 2 * m);
    if f.g.ncols() != w {
        return Err(Error::dim(format!(
            "synthesis factor must have {w} columns for n = {n}, m = {m}, got {}",
            f.g.ncols()
        )));
    }
    Ok(TildeFactors {
        ga: stack_blocks(&f.g, 0, e, e),
        gb: stack_blocks(&f.g, e * e, m, e),
        rank: f.g.nrows(),
    })
}

pub fn reshape_closedloop(f: &Factorization, n: usize, m: usize) -> Result<ClosedLoopTildeFactor> {
    let e = n + m;
    if f.g.ncols() != e * e {
        return Err(Error::dim(format!(
            "closed-loop factor must have {} columns for n = {n}, m = {m}, got {}",
            e * e,
            f.g.ncols()
        )));
    }
    Ok(ClosedLoopTildeFactor {
        gtilde: stack_blocks(&f.g, 0, e, e),
        rank: f.g.nrows(),
    })
}

/// Factor pair built only from `E[[1, row(Ahat)]^T [1, row(Ahat)]]`,
/// exploiting that `Bhat` is deterministic.
///
/// With `mu = E[row(Ahat)]` and `H^T H = Cov(row(Ahat))`, the factor
/// `Xbar = [[1, mu], [0, H]]` satisfies `Xbar^T Xbar = E[[1, a]^T [1, a]]`
/// and has the constant direction as unit first column `c = e_0`. Then
/// `Xa` stacks the A-blocks of `Xbar` and `Xi` stacks `c e_i^T`, which gives
/// `Xa^T (X⊗I) Xa = E[Ahat^T X Ahat]`, `Xa^T (X⊗I) Xi = E[Ahat^T] X` and
/// `Xi^T (X⊗I) Xi = X`. The returned pair is `(Xa, Xi Bhat)`.
pub fn reduced_factors(
    plant: &ContinuousPlant,
    draws: &DrawSet,
    rel_tol: f64,
) -> Result<TildeFactors> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let e = n + m;
    let rows: Vec<Vec<f64>> = draws
        .extended_pairs(plant)?
        .iter()
        .map(|p| row_vec(&p.ahat))
        .collect();
    let count = rows.len() as f64;
    let w = e * e;
    let mut mean = vec![0.0; w];
    for r in &rows {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let cov = gram_mean(&centered);
    let h = factorize_matrix(&cov, rel_tol)?.g;

    let rank = h.nrows() + 1;
    let mut xbar = Matrix::zeros(rank, 1 + w);
    xbar[(0, 0)] = 1.0;
    for (j, mu) in mean.iter().enumerate() {
        xbar[(0, 1 + j)] = *mu;
    }
    xbar.view_mut((1, 1), (h.nrows(), w)).copy_from(&h);

    let xa = stack_blocks(&xbar, 1, e, e);
    let mut xi = Matrix::zeros(rank * e, e);
    for i in 0..e {
        xi[(i * rank, i)] = 1.0;
    }
    let gb = &xi * extended_input(n, m);
    Ok(TildeFactors { ga: xa, gb, rank })
}
