//! Finite-difference verification of analytic gradients.
//!
//! Runs in f64 only: central differences with the default 1e-3 step are not
//! trustworthy in f32.

use crate::error::Result;
use crate::nn::tensor::{Parameter, Tensor};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_ok(&self) -> bool {
        self.per_param.iter().all(|p| p.ok)
    }

    pub fn worst(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|p| !p.ok)
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// Compare `analytic` gradients (aligned with `params`) against central
/// finite differences of `loss_fn` and report the max relative error per
/// parameter.
///
/// The error denominator is max(|analytic|, |fd|, scale) where scale floors
/// at 1e-3 and tracks one percent of the largest analytic entry, so near-zero
/// entries are judged on an absolute footing instead of amplifying
/// finite-difference noise.
pub fn finite_diff_gradcheck<F>(
    params: &mut Vec<Parameter<f64>>,
    analytic: &[Tensor<f64>],
    mut loss_fn: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Vec<Parameter<f64>>) -> Result<f64>,
{
    let grad_scale = analytic
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = (0.01 * grad_scale).max(1e-3);

    let mut per_param = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let n = params[p].tensor.numel();
        let mut max_rel = 0.0f64;
        for i in 0..n {
            let orig = params[p].tensor.data()[i];
            params[p].tensor.data_mut()[i] = orig + step;
            let fp = loss_fn(params)?;
            params[p].tensor.data_mut()[i] = orig - step;
            let fm = loss_fn(params)?;
            params[p].tensor.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * step);
            let an = analytic[p].data()[i];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(floor);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        per_param.push(ParamCheck {
            name: params[p].name.clone(),
            max_rel_err: max_rel,
            ok: max_rel < tolerance,
        });
    }
    Ok(GradCheckReport {
        per_param,
        tolerance,
    })
}
