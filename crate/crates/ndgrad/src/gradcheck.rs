//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that two near-zero gradients compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval<F>(builder: &F, params: &ParamSet<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut tape = Tape::for_params(params);
    let loss = builder(&mut tape, params)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| Error::NonScalarSeed(tape.value(loss).shape().to_vec()))
}

/// Analytic gradients of the loss built by `builder`, at `params`.
pub fn analytic_gradients<F>(params: &ParamSet<f64>, builder: &F) -> Result<(f64, Gradients<f64>)>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let mut tape = Tape::for_params(params);
    let loss = builder(&mut tape, params)?;
    let value = tape.value(loss).item().unwrap_or(f64::NAN);
    Ok((value, tape.backward(loss)?))
}

/// Compare `analytic` against central differences of `builder` on every coordinate.
pub fn compare_with_finite_differences<F>(
    params: &ParamSet<f64>,
    builder: &F,
    analytic: &Gradients<f64>,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var> + Sync,
{
    let first = eval(builder, params)?;
    let second = eval(builder, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(first, second));
    }

    let mut blocks = Vec::with_capacity(params.len());
    for id in 0..params.len() {
        let len = params.get(id).len();
        let numeric = crate::parallel::map_indices(len, |i| -> Result<f64> {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.get_mut(id).data_mut()[i] += FD_STEP;
            minus.get_mut(id).data_mut()[i] -= FD_STEP;
            Ok((eval(builder, &plus)? - eval(builder, &minus)?) / (2.0 * FD_STEP))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

        let analytic_block: &Tensor<f64> = analytic.get(id);
        let mut report = BlockReport {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, (&a, &n)) in analytic_block.data().iter().zip(&numeric).enumerate() {
            let e = rel_error(a, n);
            if i == 0 || e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport { blocks, tolerance })
}

/// Per-block maximum relative error between tape gradients and central differences.
pub fn grad_check<F>(params: &ParamSet<f64>, builder: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var> + Sync,
{
    let (_, analytic) = analytic_gradients(params, &builder)?;
    compare_with_finite_differences(params, &builder, &analytic, tolerance)
}
