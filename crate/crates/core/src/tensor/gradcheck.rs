use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference settings. The relative error of one scalar is
/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps gradients that sit
/// below finite-difference roundoff from dominating the maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, floor: 1e-8 }
    }
}

/// Outcome of comparing backward-pass gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every checked scalar.
    pub max_rel_error: f64,
    /// (input index, element index) of the worst scalar.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) at the worst scalar.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn eval_loss<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    match g.value(v).data() {
        [x] => Ok(*x),
        d => Err(Error::Shape(format!("grad_check needs a scalar loss, got {} values", d.len()))),
    }
}

/// Checks every scalar of every input of `f` with central differences
/// under default options. `f` must build a scalar from the given input vars.
pub fn grad_check<F>(inputs: &[Tensor], f: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(inputs, f, tolerance, GradCheckOptions::default())
}

pub fn grad_check_with<F>(inputs: &[Tensor], f: F, tolerance: f64, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut work = inputs.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut worst_values = (0.0, 0.0);
    let mut checked = 0;
    for (ti, grads) in analytic.iter().enumerate() {
        for e in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[e];
            work[ti].data_mut()[e] = orig + opts.step;
            let up = eval_loss(&work, &f)?;
            work[ti].data_mut()[e] = orig - opts.step;
            let down = eval_loss(&work, &f)?;
            work[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grads[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(rel);
                worst = Some((ti, e));
                worst_values = (a, numeric);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        worst_values,
        checked,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
