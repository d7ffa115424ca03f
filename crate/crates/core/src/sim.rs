//! Closed-loop sample paths with the synchronized sampler/hold timing:
//! the hold applies `u_{k-1}` on `[t_k, t_{k+1})` and `t_{k+1} - t_k` is the
//! round-trip delay of step `k`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use rand::Rng;

use crate::control::Gain;
use crate::delays::{DelayDraw, DelayModel};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::plant::{discretize, ContinuousPlant};
use crate::rng::{stream_rng, STREAM_PATH_BASE};

/// Norm beyond which a path is cut off as diverged.
pub const OVERFLOW_NORM: f64 = 1e150;

#[derive(Clone, Debug, PartialEq)]
pub struct DensePoint {
    /// Index of the sampling interval the point lies in.
    pub k: usize,
    pub t: f64,
    pub x: Vector,
    pub u: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    /// `t_0 .. t_K`.
    pub times: Vec<f64>,
    /// `x_0 .. x_K`.
    pub states: Vec<Vector>,
    /// `u_{-1} .. u_{K-1}`; `inputs[k]` is held on `[t_k, t_{k+1})`.
    pub inputs: Vec<Vector>,
    pub draws: Vec<DelayDraw>,
    /// Running sums `T^up_k`, `T^dw_k` over `0..=k`.
    pub cum_up: Vec<f64>,
    pub cum_dw: Vec<f64>,
    /// Inter-sample points; the last point of each interval is the left
    /// limit at `t_{k+1}`.
    pub dense: Vec<DensePoint>,
    pub overflow: bool,
}

impl SamplePath {
    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Squared norm of `[x_k; u_{k-1}]`.
    pub fn extended_norm2(&self, k: usize) -> f64 {
        self.states[k].norm_squared() + self.inputs[k].norm_squared()
    }
}

fn check_vec(v: &Vector, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(format!(
            "{what} must have length {len}, got {}",
            v.len()
        )));
    }
    Ok(())
}

fn diverged(v: &Vector) -> bool {
    v.iter().any(|x| !x.is_finite()) || v.norm() > OVERFLOW_NORM
}

/// Simulates `steps` sampling intervals. With `dense_substeps > 0`, the
/// continuous state is also evaluated (exactly) at that many equispaced
/// points inside each interval, ending at the left limit at `t_{k+1}`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path<R: Rng + ?Sized>(
    plant: &ContinuousPlant,
    model: &DelayModel,
    gain: &Gain,
    x0: &Vector,
    u_init: &Vector,
    steps: usize,
    rng: &mut R,
    dense_substeps: usize,
) -> Result<SamplePath> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    if gain.state_dim() != n || gain.input_dim() != m {
        return Err(Error::dim("gain does not match plant dimensions"));
    }
    check_vec(x0, n, "x0")?;
    check_vec(u_init, m, "u_init")?;
    if steps == 0 {
        return Err(Error::domain("a path needs at least one step"));
    }
    let f1 = gain.f1();
    let f2 = gain.f2();

    let mut path = SamplePath {
        times: vec![0.0],
        states: vec![x0.clone()],
        inputs: vec![u_init.clone()],
        draws: Vec::with_capacity(steps),
        cum_up: Vec::with_capacity(steps),
        cum_dw: Vec::with_capacity(steps),
        dense: Vec::new(),
        overflow: false,
    };
    let (mut sum_up, mut sum_dw) = (0.0, 0.0);
    for k in 0..steps {
        let x = &path.states[k];
        let held = &path.inputs[k];
        let u_next = &f1 * x + &f2 * held;
        let draw = model.sample(rng);
        let dp = discretize(plant, draw.h)?;
        let x_next = &dp.ad * x + &dp.bd * held;

        for j in 1..=dense_substeps {
            let s = draw.h * j as f64 / dense_substeps as f64;
            let ds = discretize(plant, s)?;
            path.dense.push(DensePoint {
                k,
                t: path.times[k] + s,
                x: &ds.ad * x + &ds.bd * held,
                u: held.clone(),
            });
        }

        sum_up += draw.tau_up;
        sum_dw += draw.tau_dw;
        path.cum_up.push(sum_up);
        path.cum_dw.push(sum_dw);
        path.draws.push(draw);
        if diverged(&x_next) || diverged(&u_next) {
            path.overflow = true;
            break;
        }
        path.times.push(sum_up + sum_dw);
        path.states.push(x_next);
        path.inputs.push(u_next);
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayEstimate {
    /// `m_k`: mean of `|[x_k; u_{k-1}]|^2` over paths still alive at `k`.
    pub second_moments: Vec<f64>,
    /// `(m_K / m_0)^(1 / 2K)`; 0 when the moment vanishes.
    pub rate: f64,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub overflowed: usize,
    /// More than half of the paths diverged.
    pub unreliable: bool,
}

impl DecayEstimate {
    pub fn key_values(&self) -> Vec<(String, String)> {
        vec![
            ("rate".into(), format!("{}", self.rate)),
            ("paths".into(), self.paths.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("overflowed".into(), self.overflowed.to_string()),
            ("unreliable".into(), self.unreliable.to_string()),
        ]
    }
}

/// Runs `paths` independent paths (path `i` on stream
/// `STREAM_PATH_BASE + i` of `seed`) and aggregates the extended-state
/// second moment per step. Paths are simulated in parallel and reduced in
/// index order, so the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn estimate_decay(
    plant: &ContinuousPlant,
    model: &DelayModel,
    gain: &Gain,
    x0: &Vector,
    u_init: &Vector,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<DecayEstimate> {
    if paths == 0 {
        return Err(Error::domain("need at least one path"));
    }
    let all = simulate_batch(plant, model, gain, x0, u_init, steps, paths, seed, 0)?;

    let mut sums = vec![0.0; steps + 1];
    let mut counts = vec![0usize; steps + 1];
    let mut overflowed = 0;
    for p in &all {
        overflowed += usize::from(p.overflow);
        for k in 0..p.states.len() {
            sums[k] += p.extended_norm2(k);
            counts[k] += 1;
        }
    }
    let second_moments: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::INFINITY } else { s / c as f64 })
        .collect();
    let (m0, mk) = (second_moments[0], second_moments[steps]);
    let rate = if mk == 0.0 || m0 == 0.0 {
        0.0
    } else {
        (mk / m0).powf(0.5 / steps as f64)
    };
    Ok(DecayEstimate {
        second_moments,
        rate,
        paths,
        steps,
        seed,
        overflowed,
        unreliable: 2 * overflowed > paths,
    })
}

/// Simulates `paths` paths on per-path streams of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_batch(
    plant: &ContinuousPlant,
    model: &DelayModel,
    gain: &Gain,
    x0: &Vector,
    u_init: &Vector,
    steps: usize,
    paths: usize,
    seed: u64,
    dense_substeps: usize,
) -> Result<Vec<SamplePath>> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(paths.max(1));
    let chunk = paths.div_ceil(workers.max(1));
    let run = |range: std::ops::Range<usize>| -> Result<Vec<SamplePath>> {
        range
            .map(|i| {
                let mut rng = stream_rng(seed, STREAM_PATH_BASE + i as u64);
                simulate_path(
                    plant,
                    model,
                    gain,
                    x0,
                    u_init,
                    steps,
                    &mut rng,
                    dense_substeps,
                )
            })
            .collect()
    };
    let parts: Vec<Result<Vec<SamplePath>>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..paths)
            .step_by(chunk.max(1))
            .map(|start| {
                let end = (start + chunk).min(paths);
                scope.spawn(move || run(start..end))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(paths);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Writes paths as CSV: `path_id,k,t,dense,x1..xn,u1..um`. Sample rows
/// (`dense = 0`) carry `x_k` and the input held from `t_k`; the dense rows
/// of interval `k` follow sample row `k`.
pub fn export_paths_csv(paths: &[SamplePath], target: impl AsRef<Path>) -> Result<()> {
    let target = target.as_ref();
    let text = paths_to_csv(paths)?;
    fs::write(target, text).map_err(|e| Error::io(target, e))
}

pub fn paths_to_csv(paths: &[SamplePath]) -> Result<String> {
    let first = paths
        .first()
        .ok_or_else(|| Error::domain("no paths to export"))?;
    let (n, m) = (first.states[0].len(), first.inputs[0].len());
    let mut out = String::from("path_id,k,t,dense");
    (1..=n).for_each(|i| write!(out, ",x{i}").unwrap());
    (1..=m).for_each(|i| write!(out, ",u{i}").unwrap());
    out.push('\n');

    let row =
        |out: &mut String, id: usize, k: usize, t: f64, dense: bool, x: &Vector, u: &Vector| {
            write!(out, "{id},{k},{t},{}", u8::from(dense)).unwrap();
            x.iter()
                .chain(u.iter())
                .for_each(|v| write!(out, ",{v}").unwrap());
            out.push('\n');
        };
    let mut dense_idx;
    for (id, p) in paths.iter().enumerate() {
        dense_idx = 0;
        for k in 0..p.states.len() {
            row(
                &mut out,
                id,
                k,
                p.times[k],
                false,
                &p.states[k],
                &p.inputs[k],
            );
            while dense_idx < p.dense.len() && p.dense[dense_idx].k == k {
                let d = &p.dense[dense_idx];
                row(&mut out, id, k, d.t, true, &d.x, &d.u);
                dense_idx += 1;
            }
        }
    }
    Ok(out)
}

/// `k,m_k` rows.
pub fn export_decay_csv(est: &DecayEstimate, target: impl AsRef<Path>) -> Result<()> {
    let target = target.as_ref();
    let mut out = String::from("k,m_k\n");
    for (k, v) in est.second_moments.iter().enumerate() {
        writeln!(out, "{k},{v}").unwrap();
    }
    fs::write(target, out).map_err(|e| Error::io(target, e))
}
