//! Central finite-difference validation of analytic gradients.
//!
//! The network is evaluated in `f64` so the difference quotient is limited by
//! truncation error rather than single-precision round-off. Parameters whose
//! `±step` probes land on different pieces of a piecewise-linear layer (ReLU
//! kink, pooling argmax switch) are not differentiable over the probe interval;
//! they are counted separately instead of being compared.

use serde::Serialize;

use super::loss::{cross_entropy, mse};
use super::network::{Mode, Network};
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    CrossEntropy(&'a [usize]),
    Mse(&'a Tensor<f32>),
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub mode: Mode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-4,
            mode: Mode::Eval,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub buffer: usize,
    pub len: usize,
    pub max_rel_error: f64,
    pub worst_element: usize,
    pub skipped_nonsmooth: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_nonsmooth: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|)`, defined as 0 when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn objective_value(
    net: &Network<f64>,
    batch: &Tensor<f64>,
    objective: &Objective<'_>,
    target: Option<&Tensor<f64>>,
    mode: Mode,
) -> Result<(f64, u64, Tensor<f64>, super::network::Activations<f64>), NnError> {
    let acts = net.forward(batch, mode)?;
    let (value, grad) = match objective {
        Objective::CrossEntropy(labels) => cross_entropy(acts.output(), labels)?,
        Objective::Mse(_) => mse(acts.output(), target.expect("mse target"))?,
    };
    Ok((value, acts.decision_hash(), grad, acts))
}

pub fn grad_check(
    net: &Network<f32>,
    batch: &Tensor<f32>,
    objective: Objective<'_>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let mut work: Network<f64> = net.cast();
    let x = batch.cast::<f64>();
    let target = match objective {
        Objective::Mse(t) => Some(t.cast::<f64>()),
        Objective::CrossEntropy(_) => None,
    };
    let (_, base_hash, loss_grad, acts) =
        objective_value(&work, &x, &objective, target.as_ref(), opts.mode)?;
    let analytic = work.backward(&acts, &loss_grad)?;

    let h = opts.step;
    let mut params = Vec::new();
    let mut checked = 0;
    let mut skipped = 0;
    let buffers = analytic.params.len();
    for b in 0..buffers {
        let len = analytic.params[b].len();
        let mut report = ParamCheck {
            buffer: b,
            len,
            max_rel_error: 0.0,
            worst_element: 0,
            skipped_nonsmooth: 0,
        };
        for i in 0..len {
            let orig = work.params()[b][i];
            work.params_mut()[b][i] = orig + h;
            let (plus, hp, _, _) =
                objective_value(&work, &x, &objective, target.as_ref(), opts.mode)?;
            work.params_mut()[b][i] = orig - h;
            let (minus, hm, _, _) =
                objective_value(&work, &x, &objective, target.as_ref(), opts.mode)?;
            work.params_mut()[b][i] = orig;
            if hp != base_hash || hm != base_hash {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.params[b][i], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_element = i;
            }
            checked += 1;
        }
        skipped += report.skipped_nonsmooth;
        params.push(report);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_error,
        checked,
        skipped_nonsmooth: skipped,
        tolerance: opts.tolerance,
    })
}
