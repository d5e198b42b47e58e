use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::nn::{Discriminator, Mode, Real};

use super::{MiError, PairBatch};

pub const LN_4: f64 = 1.386_294_361_119_890_6;

/// Which variational expression is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// `mean_P ln s(V) + mean_Q ln(1 - s(V)) + ln 4`, bounded above by `ln 4`;
    /// at the optimal critic it equals twice the Jensen-Shannon divergence.
    #[default]
    Standard,
    /// `mean_P s(V) - ln mean_Q (1 - s(V))`, unbounded above.
    PaperLiteral,
}

impl ObjectiveForm {
    pub fn tag(self) -> &'static str {
        match self {
            ObjectiveForm::Standard => "standard",
            ObjectiveForm::PaperLiteral => "paper_literal",
        }
    }
}

impl std::str::FromStr for ObjectiveForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper_literal" | "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(format!("unknown objective form `{other}` (standard|paper_literal)")),
        }
    }
}

/// Lower-bound value for one adjacent layer pair, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub value: f64,
    pub layer_pair_id: usize,
    pub sample_count: usize,
}

/// `ln(2 / (1 + e^d))`, exactly zero at `d = 0` and never above `ln 2`.
#[inline]
pub(crate) fn log_two_over_one_plus_exp(d: f64) -> f64 {
    if d <= 0.0 {
        -(0.5 + 0.5 * d.exp()).ln()
    } else {
        -d - (0.5 + 0.5 * (-d).exp()).ln()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Objective value from pre-squash scores on joint and marginal samples.
pub fn objective_from_scores<T: Real>(
    joint: ArrayView1<T>,
    marginal: ArrayView1<T>,
    form: ObjectiveForm,
) -> Result<f64, MiError> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(MiError::EmptyBatch);
    }
    let mj = joint.len() as f64;
    let mm = marginal.len() as f64;
    let f = |x: &T| x.to_f64().unwrap();
    Ok(match form {
        ObjectiveForm::Standard => {
            // ln s(v) + ln 2 = g(-v) and ln(1 - s(v)) + ln 2 = g(v).
            let a: f64 = joint.iter().map(|v| log_two_over_one_plus_exp(-f(v))).sum::<f64>() / mj;
            let b: f64 = marginal.iter().map(|v| log_two_over_one_plus_exp(f(v))).sum::<f64>() / mm;
            a + b
        }
        ObjectiveForm::PaperLiteral => {
            let a: f64 = joint.iter().map(|v| sigmoid(f(v))).sum::<f64>() / mj;
            let s: f64 = marginal.iter().map(|v| sigmoid(-f(v))).sum::<f64>() / mm;
            a - s.ln()
        }
    })
}

/// Gradient of [`objective_from_scores`] with respect to every score.
pub fn objective_grad<T: Real>(
    joint: ArrayView1<T>,
    marginal: ArrayView1<T>,
    form: ObjectiveForm,
) -> Result<(Array1<T>, Array1<T>), MiError> {
    if joint.is_empty() || marginal.is_empty() {
        return Err(MiError::EmptyBatch);
    }
    let mj = joint.len() as f64;
    let mm = marginal.len() as f64;
    let f = |x: &T| x.to_f64().unwrap();
    Ok(match form {
        ObjectiveForm::Standard => (
            joint.map(|v| T::lit(sigmoid(-f(v)) / mj)),
            marginal.map(|v| T::lit(-sigmoid(f(v)) / mm)),
        ),
        ObjectiveForm::PaperLiteral => {
            let s: f64 = marginal.iter().map(|v| sigmoid(-f(v))).sum::<f64>() / mm;
            (
                joint.map(|v| {
                    let p = sigmoid(f(v));
                    T::lit(p * (1.0 - p) / mj)
                }),
                marginal.map(|v| {
                    let p = sigmoid(f(v));
                    T::lit(p * (1.0 - p) / (mm * s))
                }),
            )
        }
    })
}

/// Evaluates the objective of `disc` on `pairs`. Joint and marginal batches
/// go through the discriminator separately.
pub fn jsd_objective<T: Real>(
    disc: &Discriminator<T>,
    pairs: &PairBatch<T>,
    form: ObjectiveForm,
    mode: Mode,
) -> Result<MIEstimate, MiError> {
    if pairs.is_empty() || pairs.marginal.nrows() == 0 {
        return Err(MiError::EmptyBatch);
    }
    if pairs.width() != disc.config.input_width {
        return Err(MiError::WidthMismatch {
            expected: disc.config.input_width,
            got: pairs.width(),
        });
    }
    let (vj, _) = disc.scores(pairs.joint.view(), mode)?;
    let (vm, _) = disc.scores(pairs.marginal.view(), mode)?;
    Ok(MIEstimate {
        value: objective_from_scores(vj.view(), vm.view(), form)?,
        layer_pair_id: pairs.layer_pair_id,
        sample_count: pairs.len(),
    })
}
