//! Round-trip delay process. Each sampling interval equals the sum of an
//! uplink and a downlink delay; consecutive pairs are i.i.d.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::linalg::spectral_abscissa;
use crate::plant::ContinuousPlant;

#[derive(Clone, Debug, PartialEq)]
pub enum DelayKind {
    Constant {
        tau_up: f64,
        tau_dw: f64,
    },
    /// `tau = offset + d` with `d` exponential of the given mean; the two
    /// channels are independent.
    ShiftedExponential {
        offset_up: f64,
        offset_dw: f64,
        mean_up: f64,
        mean_dw: f64,
    },
    /// Measured pairs, resampled uniformly with replacement. Whole pairs are
    /// drawn so any correlation between the channels is kept.
    Empirical {
        pairs: Vec<(f64, f64)>,
    },
}

/// A validated delay distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayModel {
    kind: DelayKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayDraw {
    pub tau_up: f64,
    pub tau_dw: f64,
    /// Sampling interval, `tau_up + tau_dw`.
    pub h: f64,
}

impl DelayDraw {
    pub fn new(tau_up: f64, tau_dw: f64) -> Self {
        Self {
            tau_up,
            tau_dw,
            h: tau_up + tau_dw,
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

impl DelayModel {
    pub fn constant(tau_up: f64, tau_dw: f64) -> Result<Self> {
        nonneg("tau_up", tau_up)?;
        nonneg("tau_dw", tau_dw)?;
        if tau_up + tau_dw <= 0.0 {
            return Err(Error::domain("constant delays must have a positive sum"));
        }
        Ok(Self {
            kind: DelayKind::Constant { tau_up, tau_dw },
        })
    }

    pub fn shifted_exponential(
        offset_up: f64,
        offset_dw: f64,
        mean_up: f64,
        mean_dw: f64,
    ) -> Result<Self> {
        nonneg("offset_up", offset_up)?;
        nonneg("offset_dw", offset_dw)?;
        for (name, v) in [("mean_up", mean_up), ("mean_dw", mean_dw)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(Self {
            kind: DelayKind::ShiftedExponential {
                offset_up,
                offset_dw,
                mean_up,
                mean_dw,
            },
        })
    }

    pub fn empirical(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::domain(
                "empirical delay model needs at least one pair",
            ));
        }
        for (i, &(u, d)) in pairs.iter().enumerate() {
            nonneg(&format!("pair {i} tau_up"), u)?;
            nonneg(&format!("pair {i} tau_dw"), d)?;
        }
        if !pairs.iter().any(|&(u, d)| u + d > 0.0) {
            return Err(Error::domain(
                "empirical delay model needs a pair with positive sum",
            ));
        }
        Ok(Self {
            kind: DelayKind::Empirical { pairs },
        })
    }

    /// Delays of the worked pendulum example: offsets 0.01 s, means 0.01 s
    /// (uplink) and 0.02 s (downlink).
    pub fn pendulum_example() -> Self {
        Self::shifted_exponential(0.01, 0.01, 0.01, 0.02).expect("valid parameters")
    }

    pub fn kind(&self) -> &DelayKind {
        &self.kind
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, DelayKind::Constant { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DelayDraw {
        match &self.kind {
            DelayKind::Constant { tau_up, tau_dw } => DelayDraw::new(*tau_up, *tau_dw),
            DelayKind::ShiftedExponential {
                offset_up,
                offset_dw,
                mean_up,
                mean_dw,
            } => {
                // Rates are positive and finite, checked at construction.
                let up = Exp::new(1.0 / mean_up).expect("positive rate").sample(rng);
                let dw = Exp::new(1.0 / mean_dw).expect("positive rate").sample(rng);
                DelayDraw::new(offset_up + up, offset_dw + dw)
            }
            DelayKind::Empirical { pairs } => {
                let (u, d) = pairs[rng.random_range(0..pairs.len())];
                DelayDraw::new(u, d)
            }
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<DelayDraw> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Outcome of the finiteness check on `E[A(xi)^T A(xi)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentConditionReport {
    pub satisfied: bool,
    /// Twice the largest real part over the eigenvalues of `A_c` (1/s).
    pub growth_rate: f64,
    /// `2 alpha - 1/mean` for the uplink and downlink channels; only set
    /// for shifted-exponential models.
    pub margins: Option<(f64, f64)>,
    pub explanation: String,
}

impl MomentConditionReport {
    /// Machine-readable `key = value` lines.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("satisfied".to_string(), self.satisfied.to_string()),
            ("growth_rate".to_string(), format!("{}", self.growth_rate)),
        ];
        if let Some((up, dw)) = self.margins {
            kv.push(("margin_up".to_string(), format!("{up}")));
            kv.push(("margin_dw".to_string(), format!("{dw}")));
        }
        kv
    }
}

impl fmt::Display for MomentConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "second-moment condition: {}",
            if self.satisfied {
                "satisfied"
            } else {
                "VIOLATED"
            }
        )?;
        writeln!(f, "  2 * max Re(eig(A_c)) = {}", self.growth_rate)?;
        if let Some((up, dw)) = self.margins {
            writeln!(f, "  margin (uplink)   2a - 1/mu_up = {up}")?;
            writeln!(f, "  margin (downlink) 2a - 1/mu_dw = {dw}")?;
        }
        write!(f, "  {}", self.explanation)
    }
}

/// Checks that `E[A(xi)^T A(xi)]` is finite for the given delay model.
///
/// For bounded-support models this always holds. For shifted-exponential
/// delays, `||exp(A_c tau)||^2` grows like `exp(2 alpha tau)` (alpha the
/// spectral abscissa of `A_c`) and the exponential density decays like
/// `exp(-tau/mu)`, so the moment is finite iff `2 alpha < 1/mu` on both
/// channels. The offsets only contribute a bounded factor. Jordan blocks add
/// polynomial factors, which never change finiteness against an exponential
/// tail, so the criterion is applied to non-diagonalizable `A_c` as well.
pub fn check_second_moment_condition(
    plant: &ContinuousPlant,
    model: &DelayModel,
) -> Result<MomentConditionReport> {
    let alpha = spectral_abscissa(plant.a())?;
    let growth_rate = 2.0 * alpha;
    Ok(match model.kind() {
        DelayKind::Constant { .. } => MomentConditionReport {
            satisfied: true,
            growth_rate,
            margins: None,
            explanation: "constant delays have bounded support".into(),
        },
        DelayKind::Empirical { pairs } => MomentConditionReport {
            satisfied: true,
            growth_rate,
            margins: None,
            explanation: format!(
                "empirical model over {} pairs has bounded support",
                pairs.len()
            ),
        },
        DelayKind::ShiftedExponential {
            mean_up, mean_dw, ..
        } => {
            let up = growth_rate - 1.0 / mean_up;
            let dw = growth_rate - 1.0 / mean_dw;
            let satisfied = up < 0.0 && dw < 0.0;
            MomentConditionReport {
                satisfied,
                growth_rate,
                margins: Some((up, dw)),
                explanation: if satisfied {
                    "both exponential tails decay faster than the squared plant growth".into()
                } else {
                    "an exponential tail is too heavy: E[A^T A] diverges (criterion uses \
                     Re(eig(A_c)); also applied to non-diagonalizable A_c)"
                        .into()
                },
            }
        }
    })
}

/// Reads `tau_up,tau_dw` rows (seconds) into an empirical model. A first
/// line that does not parse as numbers is taken as a header.
pub fn load_delay_csv(path: impl AsRef<Path>) -> Result<DelayModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ingest = |line: usize, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(ingest(
                line_no,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let parsed = (fields[0].parse::<f64>(), fields[1].parse::<f64>());
        let (up, dw) = match parsed {
            (Ok(u), Ok(d)) => (u, d),
            _ if idx == 0
                && pairs.is_empty()
                && fields.iter().any(|f| f.parse::<f64>().is_err()) =>
            {
                continue;
            }
            _ => return Err(ingest(line_no, format!("malformed row '{line}'"))),
        };
        if !(up.is_finite() && dw.is_finite()) || up < 0.0 || dw < 0.0 {
            return Err(ingest(
                line_no,
                format!("delays must be finite and >= 0, got '{line}'"),
            ));
        }
        pairs.push((up, dw));
    }
    if pairs.is_empty() {
        return Err(ingest(0, "no delay rows".into()));
    }
    DelayModel::empirical(pairs).map_err(|e| ingest(0, e.to_string()))
}

/// Writes the support of an empirical model as `tau_up,tau_dw` rows.
pub fn write_delay_csv(model: &DelayModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let DelayKind::Empirical { pairs } = model.kind() else {
        return Err(Error::domain("only empirical delay models can be exported"));
    };
    let mut out = String::from("tau_up,tau_dw\n");
    for (u, d) in pairs {
        out.push_str(&format!("{u},{d}\n"));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
