//! Oracles used by the integration tests. Nothing here calls into the
//! code paths it is used to check.
#![allow(dead_code)]

use ncs_core::linalg::Matrix;
use ncs_core::plant::{matrix_exponential, ContinuousPlant, ExtendedPair};
use rand::Rng;

/// Double-double number `hi + lo`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Self { hi, lo }
    }

    pub fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Self { hi, lo }
    }

    pub fn div_f64(self, d: f64) -> Self {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = (self.hi - p - e + self.lo) / d;
        let (hi, lo) = two_sum(q1, r);
        Self { hi, lo }
    }
}

type DdMat = Vec<Vec<Dd>>;

fn dd_matmul(a: &DdMat, b: &DdMat) -> DdMat {
    let n = a.len();
    let mut out = vec![vec![Dd::default(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Dd::default();
            for k in 0..n {
                acc = acc.add(a[i][k].mul(b[k][j]));
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Truncated Taylor series for `exp(m t)` in double-double arithmetic,
/// after scaling the argument below 1/2 in max-abs row sum, then squaring.
pub fn expm_taylor_dd(m: &Matrix, t: f64, terms: usize) -> Matrix {
    let n = m.nrows();
    let norm = (0..n)
        .map(|i| (0..n).map(|j| (m[(i, j)] * t).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a: DdMat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Dd::from(m[(i, j)]).mul(Dd::from(t * scale)))
                .collect()
        })
        .collect();
    let mut result: DdMat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Dd::from(if i == j { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    let mut term = result.clone();
    for k in 1..=terms {
        term = dd_matmul(&term, &a)
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.div_f64(k as f64)).collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                result[i][j] = result[i][j].add(term[i][j]);
            }
        }
    }
    for _ in 0..squarings {
        result = dd_matmul(&result, &result);
    }
    Matrix::from_fn(n, n, |i, j| result[i][j].to_f64())
}

/// Adaptive Simpson quadrature of a matrix-valued integrand on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> Matrix, a: f64, b: f64, tol: f64) -> Matrix {
    fn simpson(fa: &Matrix, fm: &Matrix, fb: &Matrix, a: f64, b: f64) -> Matrix {
        (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> Matrix,
        a: f64,
        b: f64,
        fa: &Matrix,
        fm: &Matrix,
        fb: &Matrix,
        whole: &Matrix,
        tol: f64,
        depth: usize,
    ) -> Matrix {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, &flm, fm, a, m);
        let right = simpson(fm, &frm, fb, m, b);
        let delta = &left + &right - whole;
        if depth == 0 || delta.amax() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, &flm, fm, &left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, &frm, fb, &right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(&fa, &fm, &fb, a, b);
    recurse(f, a, b, &fa, &fm, &fb, &whole, tol, 40)
}

/// Composite Simpson rule with `intervals` (even) panels.
pub fn composite_simpson(f: &dyn Fn(f64) -> Matrix, a: f64, b: f64, intervals: usize) -> Matrix {
    let h = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + h * i as f64) * w;
    }
    acc * (h / 3.0)
}

/// `∫_0^h exp(A t) B dt` by adaptive quadrature on the plain exponential.
pub fn bd_by_quadrature(plant: &ContinuousPlant, h: f64, tol: f64) -> Matrix {
    let f = |t: f64| matrix_exponential(plant.a(), t).unwrap() * plant.b();
    adaptive_simpson(&f, 0.0, h, tol)
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n, 1.0);
    &a * a.transpose() + Matrix::identity(n, n) * 0.1
}

pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n, 1.0);
    (&a + a.transpose()) * 0.5
}

/// Sample means `(E[A^T X A], E[A^T X B], B^T X B)` computed directly
/// from the extended pairs.
pub fn direct_expectations(pairs: &[ExtendedPair], x: &Matrix) -> (Matrix, Matrix, Matrix) {
    let n = pairs.len() as f64;
    let bhat = &pairs[0].bhat;
    let mut aa = Matrix::zeros(x.nrows(), x.ncols());
    let mut ab = Matrix::zeros(x.nrows(), bhat.ncols());
    for p in pairs {
        aa += p.ahat.transpose() * x * &p.ahat;
        ab += p.ahat.transpose() * x * bhat;
    }
    (aa / n, ab / n, bhat.transpose() * x * bhat)
}

/// `(1/N) sum Acl^T P Acl` for closed-loop matrices `Acl = Ahat + Bhat F`.
pub fn direct_closed_loop(pairs: &[ExtendedPair], fhat: &Matrix, p: &Matrix) -> Matrix {
    let mut acc = Matrix::zeros(p.nrows(), p.ncols());
    for e in pairs {
        let acl = &e.ahat + &e.bhat * fhat;
        acc += acl.transpose() * p * &acl;
    }
    acc / pairs.len() as f64
}

pub fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
