//! Continuous-time LTI plant, its zero-order-hold discretization over an
//! arbitrary interval, and the extended pair that carries the previously
//! held input as extra state.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix};

/// Degree-13 Padé coefficients for `exp`.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// 1-norm bound below which the degree-13 approximant needs no scaling.
const THETA13: f64 = 5.371920351148152;

/// `exp(m * t)` by scaling and squaring with a degree-13 Padé approximant.
///
/// The number of squarings is chosen from the 1-norm of `m * t` so that the
/// scaled argument has 1-norm at most [`THETA13`].
pub fn matrix_exponential(m: &Matrix, t: f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() || !all_finite(m) {
        return Err(Error::domain("matrix exponential of non-finite input"));
    }
    let n = m.nrows();
    let a = m * t;
    let norm1 = one_norm(&a);
    if norm1 == 0.0 {
        return Ok(Matrix::identity(n, n));
    }

    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let ident = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Numeric("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !all_finite(&r) {
        return Err(Error::Numeric("matrix exponential overflowed".into()));
    }
    Ok(r)
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// The plant `dx/dt = A_c x + B_c u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousPlant {
    a: Matrix,
    b: Matrix,
}

impl ContinuousPlant {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::dim(format!(
                "state matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dim(format!(
                "input matrix must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !all_finite(&a) || !all_finite(&b) {
            return Err(Error::domain("plant matrices contain non-finite entries"));
        }
        Ok(Self { a, b })
    }

    /// Builds a plant from row-major entry lists.
    pub fn from_row_major(n: usize, m: usize, a: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(
            crate::linalg::from_row_major(n, n, a)?,
            crate::linalg::from_row_major(n, m, b)?,
        )
    }

    /// The linearized inverted pendulum with `g/r = 49` and `1/(M r^2) = 25`.
    pub fn inverted_pendulum() -> Self {
        Self::from_row_major(2, 1, &[0.0, 1.0, 49.0, 0.0], &[0.0, 25.0])
            .expect("pendulum matrices are well formed")
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Shorthand for `extend(discretize(self, h))`.
    pub fn extended(&self, h: f64) -> Result<ExtendedPair> {
        extend(&discretize(self, h)?, self.input_dim())
    }
}

/// Exact discretization of a [`ContinuousPlant`] over an interval of length `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedPair {
    pub ad: Matrix,
    pub bd: Matrix,
    pub h: f64,
}

/// Discretizes the plant over `[0, h]` with the input held constant.
///
/// Both blocks come out of a single exponential of the augmented matrix
/// `[[A_c, B_c], [0, 0]]`: the top-left block of `exp(h * aug)` is
/// `exp(A_c h)` and the top-right block is `∫_0^h exp(A_c t) dt B_c`. This
/// holds for singular `A_c` as well.
pub fn discretize(plant: &ContinuousPlant, h: f64) -> Result<DiscretizedPair> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::domain(format!(
            "interval length must be finite and >= 0, got {h}"
        )));
    }
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    aug.view_mut((0, n), (n, m)).copy_from(&plant.b);
    let e = matrix_exponential(&aug, h)?;
    Ok(DiscretizedPair {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        h,
    })
}

/// `Ahat = [[Ad, Bd], [0, 0]]`, `Bhat = [0; I_m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedPair {
    pub ahat: Matrix,
    pub bhat: Matrix,
}

impl ExtendedPair {
    /// `Ahat + Bhat * fhat`.
    pub fn closed_loop(&self, fhat: &Matrix) -> Result<Matrix> {
        if fhat.nrows() != self.bhat.ncols() || fhat.ncols() != self.ahat.ncols() {
            return Err(Error::dim(format!(
                "gain must be {}x{}, got {}x{}",
                self.bhat.ncols(),
                self.ahat.ncols(),
                fhat.nrows(),
                fhat.ncols()
            )));
        }
        Ok(&self.ahat + &self.bhat * fhat)
    }
}

/// Input matrix of the extended system, `[0; I_m]`.
pub fn extended_input(n: usize, m: usize) -> Matrix {
    let mut bhat = Matrix::zeros(n + m, m);
    bhat.view_mut((n, 0), (m, m)).fill_with_identity();
    bhat
}

pub fn extend(dp: &DiscretizedPair, m: usize) -> Result<ExtendedPair> {
    let n = dp.ad.nrows();
    if !dp.ad.is_square() || dp.bd.nrows() != n || dp.bd.ncols() != m {
        return Err(Error::dim(format!(
            "cannot extend Ad {}x{} / Bd {}x{} with m = {m}",
            dp.ad.nrows(),
            dp.ad.ncols(),
            dp.bd.nrows(),
            dp.bd.ncols()
        )));
    }
    let mut ahat = Matrix::zeros(n + m, n + m);
    ahat.view_mut((0, 0), (n, n)).copy_from(&dp.ad);
    ahat.view_mut((0, n), (n, m)).copy_from(&dp.bd);
    Ok(ExtendedPair {
        ahat,
        bhat: extended_input(n, m),
    })
}
