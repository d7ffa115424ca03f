//! Decay-rate analysis of a given gain and synthesis of a stabilizing gain
//! for the extended system `xhat_{k+1} = (Ahat(xi_k) + Bhat F) xhat_k`,
//! where `xhat_k = [x_k; u_{k-1}]` and `u_k = F1 x_k + F2 u_{k-1}`.
//!
//! Both problems are LMIs in the factor stacks of [`crate::moments`] for a
//! fixed rate `lambda`; the smallest feasible rate is found by bisection.
//! Normalizations `P ⪰ I` and `X ⪰ I` are added to the homogeneous
//! conditions to remove the free scaling of the matrix variables.

use nalgebra::Cholesky;

use crate::delays::{check_second_moment_condition, DelayModel, MomentConditionReport};
use crate::error::{Error, Result};
use crate::linalg::{kron_identity, min_sym_eigenvalue, spectral_radius, Matrix};
use crate::lmi::{
    bisect_lambda, solve_feasibility, AffineMatrixInequality, Bisection, BisectionOptions,
    BisectionOutcome, SolverOptions,
};
use crate::moments::{
    estimate_closedloop_moment, estimate_synthesis_moment, factorize, reduced_factors,
    reshape_closedloop, reshape_tilde, ClosedLoopTildeFactor, DrawSet, TildeFactors,
    DEFAULT_RANK_TOL,
};
use crate::plant::ContinuousPlant;
use crate::rng::{stream_rng, STREAM_ANALYSIS, STREAM_SYNTHESIS};

/// `u_k = F1 x_k + F2 u_{k-1}`, stored as `Fhat = [F1, F2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gain {
    fhat: Matrix,
    n: usize,
}

impl Gain {
    pub fn new(f1: &Matrix, f2: &Matrix) -> Result<Self> {
        let m = f1.nrows();
        if f2.shape() != (m, m) {
            return Err(Error::dim(format!(
                "F2 must be {m}x{m}, got {}x{}",
                f2.nrows(),
                f2.ncols()
            )));
        }
        let n = f1.ncols();
        let mut fhat = Matrix::zeros(m, n + m);
        fhat.view_mut((0, 0), (m, n)).copy_from(f1);
        fhat.view_mut((0, n), (m, m)).copy_from(f2);
        Ok(Self { fhat, n })
    }

    /// Splits an `m x (n+m)` matrix into `[F1, F2]`.
    pub fn from_fhat(fhat: Matrix, n: usize) -> Result<Self> {
        let m = fhat.nrows();
        if fhat.ncols() != n + m || m == 0 {
            return Err(Error::dim(format!(
                "extended gain must be m x (n+m) with n = {n}, got {}x{}",
                fhat.nrows(),
                fhat.ncols()
            )));
        }
        Ok(Self { fhat, n })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            fhat: Matrix::zeros(m, n + m),
            n,
        }
    }

    pub fn fhat(&self) -> &Matrix {
        &self.fhat
    }

    pub fn f1(&self) -> Matrix {
        self.fhat.columns(0, self.n).into_owned()
    }

    pub fn f2(&self) -> Matrix {
        self.fhat.columns(self.n, self.fhat.nrows()).into_owned()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.fhat.nrows()
    }

    fn check_plant(&self, plant: &ContinuousPlant) -> Result<()> {
        if self.n != plant.state_dim() || self.input_dim() != plant.input_dim() {
            return Err(Error::dim(format!(
                "gain is for n = {}, m = {}, plant has n = {}, m = {}",
                self.n,
                self.input_dim(),
                plant.state_dim(),
                plant.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignOptions {
    /// Delay draws behind the sample-mean moment (ignored for constant delays).
    pub samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
    pub bisection: BisectionOptions,
    pub solver: SolverOptions,
    /// Build the synthesis factors from `E[[1, row(Ahat)]^T [1, row(Ahat)]]`
    /// instead of the full coefficient moment.
    pub reduced_factors: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
            bisection: BisectionOptions::default(),
            solver: SolverOptions::default(),
            reduced_factors: false,
        }
    }
}

/// Index pairs `(i, j)`, `i <= j`, for the upper triangle of a symmetric
/// `e x e` matrix variable.
fn sym_basis(e: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(e * (e + 1) / 2);
    for i in 0..e {
        for j in i..e {
            out.push((i, j));
        }
    }
    out
}

fn sym_unit(e: usize, (i, j): (usize, usize)) -> Matrix {
    let mut m = Matrix::zeros(e, e);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

fn sym_from_vars(e: usize, z: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(e, e);
    for (k, (i, j)) in sym_basis(e).into_iter().enumerate() {
        m[(i, j)] = z[k];
        m[(j, i)] = z[k];
    }
    m
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "lambda must lie in (0, 1], got {lambda}"
        )))
    }
}

/// `lambda^2 P - Gt^T (P ⊗ I) Gt ⪰ 0` and `P ⪰ I`, with the upper
/// triangle of `P` as decision variables.
pub fn assemble_analysis(
    gt: &ClosedLoopTildeFactor,
    lambda: f64,
) -> Result<AffineMatrixInequality> {
    check_lambda(lambda)?;
    let e = gt.gtilde.ncols();
    if gt.gtilde.nrows() != e * gt.rank {
        return Err(Error::dim(format!(
            "stacked factor must have {} rows, got {}",
            e * gt.rank,
            gt.gtilde.nrows()
        )));
    }
    let basis = sym_basis(e);
    let mut main = Vec::with_capacity(basis.len());
    let mut norm = Vec::with_capacity(basis.len());
    for &ij in &basis {
        let unit = sym_unit(e, ij);
        let quad = gt.gtilde.transpose() * kron_identity(&unit, gt.rank) * &gt.gtilde;
        main.push(&unit * (lambda * lambda) - quad);
        norm.push(unit);
    }
    let mut p = AffineMatrixInequality::new(basis.len());
    p.add_block(Matrix::zeros(e, e), main)?;
    p.add_block(-Matrix::identity(e, e), norm)?;
    Ok(p)
}

/// The block LMI
/// `[[lambda^2 X, (Ga X + Gb Y)^T], [Ga X + Gb Y, X ⊗ I]] ≻ 0` plus `X ⪰ I`.
/// Variables: upper triangle of `X`, then `Y` row-major.
pub fn assemble_synthesis(tf: &TildeFactors, lambda: f64) -> Result<AffineMatrixInequality> {
    check_lambda(lambda)?;
    let e = tf.ga.ncols();
    let m = tf.gb.ncols();
    let r = tf.rank;
    if tf.ga.nrows() != e * r || tf.gb.nrows() != e * r {
        return Err(Error::dim(format!(
            "factor stacks must have {} rows, got {} and {}",
            e * r,
            tf.ga.nrows(),
            tf.gb.nrows()
        )));
    }
    let d = e + e * r;
    let basis = sym_basis(e);
    let nvars = basis.len() + m * e;

    let block = |top: &Matrix, off: &Matrix, bottom: &Matrix| {
        let mut b = Matrix::zeros(d, d);
        b.view_mut((0, 0), (e, e)).copy_from(top);
        b.view_mut((e, 0), (e * r, e)).copy_from(off);
        b.view_mut((0, e), (e, e * r)).copy_from(&off.transpose());
        b.view_mut((e, e), (e * r, e * r)).copy_from(bottom);
        b
    };

    let mut main = Vec::with_capacity(nvars);
    let mut norm = Vec::with_capacity(nvars);
    for &ij in &basis {
        let unit = sym_unit(e, ij);
        main.push(block(
            &(&unit * (lambda * lambda)),
            &(&tf.ga * &unit),
            &kron_identity(&unit, r),
        ));
        norm.push(unit);
    }
    for a in 0..m {
        for b in 0..e {
            let mut unit = Matrix::zeros(m, e);
            unit[(a, b)] = 1.0;
            main.push(block(
                &Matrix::zeros(e, e),
                &(&tf.gb * &unit),
                &Matrix::zeros(e * r, e * r),
            ));
            norm.push(Matrix::zeros(e, e));
        }
    }
    let mut p = AffineMatrixInequality::new(nvars);
    p.add_block(Matrix::zeros(d, d), main)?;
    p.add_block(-Matrix::identity(e, e), norm)?;
    Ok(p)
}

/// Minimum eigenvalue of `lambda^2 P - Gt^T (P ⊗ I) Gt`, evaluated directly.
pub fn analysis_certificate_margin(gt: &ClosedLoopTildeFactor, lambda: f64, p: &Matrix) -> f64 {
    let lhs =
        p * (lambda * lambda) - gt.gtilde.transpose() * kron_identity(p, gt.rank) * &gt.gtilde;
    min_sym_eigenvalue(&lhs)
}

/// Minimum eigenvalue of the synthesis block matrix, evaluated directly.
pub fn synthesis_certificate_margin(tf: &TildeFactors, lambda: f64, x: &Matrix, y: &Matrix) -> f64 {
    let e = x.nrows();
    let r = tf.rank;
    let off = &tf.ga * x + &tf.gb * y;
    let mut b = Matrix::zeros(e + e * r, e + e * r);
    b.view_mut((0, 0), (e, e))
        .copy_from(&(x * (lambda * lambda)));
    b.view_mut((e, 0), (e * r, e)).copy_from(&off);
    b.view_mut((0, e), (e, e * r)).copy_from(&off.transpose());
    b.view_mut((e, e), (e * r, e * r))
        .copy_from(&kron_identity(x, r));
    min_sym_eigenvalue(&b)
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub gain: Gain,
    pub lambda_star: f64,
    pub x: Matrix,
    pub y: Matrix,
    /// Rank of the moment factor.
    pub rank: usize,
    /// Number of delay draws; 0 for an exact (constant-delay) evaluation.
    pub samples: usize,
    pub seed: u64,
    /// Minimum eigenvalue of the synthesis LMI at the returned point.
    pub margin: f64,
    pub factors: TildeFactors,
    pub draws: DrawSet,
    pub condition: MomentConditionReport,
    pub bisection_probes: usize,
}

#[derive(Clone, Debug)]
pub struct AnalysisResult {
    pub lambda_star: f64,
    pub p: Matrix,
    pub rank: usize,
    pub samples: usize,
    pub seed: u64,
    pub margin: f64,
    pub factor: ClosedLoopTildeFactor,
    pub bisection_probes: usize,
}

fn run_bisection(
    assemble: impl Fn(f64) -> Result<AffineMatrixInequality>,
    opts: &DesignOptions,
) -> Result<std::result::Result<Bisection, (f64, f64)>> {
    let oracle = |lambda: f64| Ok(solve_feasibility(&assemble(lambda)?, &opts.solver));
    Ok(match bisect_lambda(oracle, &opts.bisection)? {
        BisectionOutcome::Converged(b) => Ok(b),
        BisectionOutcome::InfeasibleAtUpper { lambda_hi, eps } => Err((lambda_hi, eps)),
    })
}

/// Synthesis factors from `draws` (full or reduced path, per options).
pub fn synthesis_factors(
    plant: &ContinuousPlant,
    draws: &DrawSet,
    opts: &DesignOptions,
) -> Result<TildeFactors> {
    if opts.reduced_factors {
        reduced_factors(plant, draws, opts.rank_tol)
    } else {
        let msm = estimate_synthesis_moment(plant, draws)?;
        reshape_tilde(
            &factorize(&msm, opts.rank_tol)?,
            plant.state_dim(),
            plant.input_dim(),
        )
    }
}

/// Designs a gain minimizing the certified decay rate for `model`.
///
/// The moment condition is checked and attached to the result but does not
/// block the design.
pub fn synthesize(
    plant: &ContinuousPlant,
    model: &DelayModel,
    opts: &DesignOptions,
) -> Result<SynthesisResult> {
    let mut rng = stream_rng(opts.seed, STREAM_SYNTHESIS);
    let draws = DrawSet::sample(model, opts.samples, &mut rng)?;
    let condition = check_second_moment_condition(plant, model)?;
    synthesize_on_draws(plant, draws, condition, opts)
}

pub fn synthesize_on_draws(
    plant: &ContinuousPlant,
    draws: DrawSet,
    condition: MomentConditionReport,
    opts: &DesignOptions,
) -> Result<SynthesisResult> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let e = n + m;
    let factors = synthesis_factors(plant, &draws, opts)?;
    let b = run_bisection(|l| assemble_synthesis(&factors, l), opts)?
        .map_err(|(lambda_hi, eps)| Error::NotStabilizable { lambda_hi, eps })?;

    let z = b
        .witness
        .z
        .as_ref()
        .expect("feasible witness carries a point");
    let nsym = e * (e + 1) / 2;
    let x = sym_from_vars(e, &z[..nsym]);
    let y = Matrix::from_row_slice(m, e, &z[nsym..]);
    let chol = Cholesky::new(x.clone())
        .ok_or_else(|| Error::Numeric("certified X is not positive definite".into()))?;
    // F X = Y  <=>  X F^T = Y^T for symmetric X.
    let fhat = chol.solve(&y.transpose()).transpose();
    let margin = synthesis_certificate_margin(&factors, b.lambda, &x, &y);

    Ok(SynthesisResult {
        gain: Gain::from_fhat(fhat, n)?,
        lambda_star: b.lambda,
        x,
        y,
        rank: factors.rank,
        samples: draws.sample_count(),
        seed: opts.seed,
        margin,
        factors,
        draws,
        condition,
        bisection_probes: b.probes.len(),
    })
}

/// Certifies the decay rate of `gain` on fresh draws from `model`.
pub fn analyze(
    plant: &ContinuousPlant,
    model: &DelayModel,
    gain: &Gain,
    opts: &DesignOptions,
) -> Result<AnalysisResult> {
    let mut rng = stream_rng(opts.seed, STREAM_ANALYSIS);
    let draws = DrawSet::sample(model, opts.samples, &mut rng)?;
    analyze_on_draws(plant, &draws, gain, opts)
}

pub fn analyze_on_draws(
    plant: &ContinuousPlant,
    draws: &DrawSet,
    gain: &Gain,
    opts: &DesignOptions,
) -> Result<AnalysisResult> {
    gain.check_plant(plant)?;
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let msm = estimate_closedloop_moment(plant, draws, gain.fhat())?;
    let factor = reshape_closedloop(&factorize(&msm, opts.rank_tol)?, n, m)?;
    let b = run_bisection(|l| assemble_analysis(&factor, l), opts)?
        .map_err(|(lambda_hi, eps)| Error::NotStable { lambda_hi, eps })?;
    let z = b
        .witness
        .z
        .as_ref()
        .expect("feasible witness carries a point");
    let p = sym_from_vars(n + m, z);
    let margin = analysis_certificate_margin(&factor, b.lambda, &p);
    Ok(AnalysisResult {
        lambda_star: b.lambda,
        p,
        rank: factor.rank,
        samples: draws.sample_count(),
        seed: opts.seed,
        margin,
        factor,
        bisection_probes: b.probes.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub passed: bool,
    pub lambda_synthesis: f64,
    /// `None` when the analysis found the loop not stable.
    pub lambda_analysis: Option<f64>,
    pub note: String,
}

/// Re-analyzes a synthesized gain on the draws it was designed on. Passes
/// iff the certified analysis rate does not exceed the synthesis rate by
/// more than two bisection tolerances.
pub fn verify_gain(
    plant: &ContinuousPlant,
    synth: &SynthesisResult,
    opts: &DesignOptions,
) -> VerificationReport {
    verify_gain_with(plant, synth, &synth.gain, opts)
}

/// As [`verify_gain`] but analyzing `gain` instead of the synthesized one.
pub fn verify_gain_with(
    plant: &ContinuousPlant,
    synth: &SynthesisResult,
    gain: &Gain,
    opts: &DesignOptions,
) -> VerificationReport {
    let bound = synth.lambda_star + 2.0 * opts.bisection.tol;
    match analyze_on_draws(plant, &synth.draws, gain, opts) {
        Ok(a) => VerificationReport {
            passed: a.lambda_star <= bound,
            lambda_synthesis: synth.lambda_star,
            lambda_analysis: Some(a.lambda_star),
            note: format!("analysis rate {} vs bound {bound}", a.lambda_star),
        },
        Err(e) => VerificationReport {
            passed: false,
            lambda_synthesis: synth.lambda_star,
            lambda_analysis: None,
            note: e.to_string(),
        },
    }
}

/// Spectral radius of the deterministic extended closed loop for interval `h`.
pub fn closed_loop_spectral_radius(plant: &ContinuousPlant, gain: &Gain, h: f64) -> Result<f64> {
    gain.check_plant(plant)?;
    spectral_radius(&plant.extended(h)?.closed_loop(gain.fhat())?)
}
