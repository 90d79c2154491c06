//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use crate::error::{NnError, Result};
use crate::init::seeded_rng;
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input (chosen with `seed`);
    /// `None` checks every coordinate.
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn exhaustive(eps: f64) -> Self {
        GradCheckOptions {
            eps,
            coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

fn eval_scalar<F>(f: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(NnError::Contract(format!(
            "gradient check needs a scalar function, got {}x{}",
            shape.0, shape.1
        )));
    }
    tape.scalar(out)
}

/// Max over all input coordinates of `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, GradCheckOptions::exhaustive(eps)).map(|r| r.max_rel_error)
}

pub fn grad_check_with<F>(f: F, inputs: &[Matrix], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(NnError::Contract(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.eps
        )));
    }

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&tape, &vars)?;
    let shape = tape.shape(out);
    if shape != (1, 1) {
        return Err(NnError::Contract(format!(
            "gradient check needs a scalar function, got {}x{}",
            shape.0, shape.1
        )));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let mut rng = seeded_rng(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe: Vec<Matrix> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.coords_per_input {
            Some(k) if k < n => {
                let mut picked = sample(&mut rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + opts.eps;
            let plus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[c] = orig - opts.eps;
            let minus = eval_scalar(&f, &probe)?;
            probe[i].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = (analytic[i].data()[c] - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((i, c));
                }
            }
        }
    }
    Ok(report)
}
