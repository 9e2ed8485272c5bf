//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error. Components whose magnitude
    /// is below the floor are effectively compared in absolute terms.
    pub floor: f64,
    /// Inputs larger than this are checked on a random subset of entries.
    pub max_entries_per_input: usize,
    /// Seed for the entry subset.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-4,
            max_entries_per_input: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose finite-difference stencil kept crossing a kink even
    /// after shrinking the step; they are excluded from `max_rel_error`.
    pub skipped_kinks: usize,
    pub worst: Option<Worst>,
    pub passed: bool,
}

fn evaluate(f: &impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>, inputs: &[Tensor]) -> Result<(f64, Option<u64>)> {
    let tape = Tape::with_kink_tracking();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.len() != 1 {
        return Err(shape_err("gradient check", "scalar output", format!("{:?}", v.shape())));
    }
    Ok((v.data()[0], tape.kink_fingerprint()))
}

/// Compares the reverse-mode gradient of the scalar function `f` with
/// respect to each of `inputs` against central differences.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::with_kink_tracking();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let base_print = tape.kink_fingerprint();
    let grads = tape.backward_scalar(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
        passed: true,
    };
    let mut point: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let mut entries: Vec<usize> = if n <= opts.max_entries_per_input {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_entries_per_input).into_vec()
        };
        entries.sort_unstable();
        for idx in entries {
            let x0 = input.data()[idx];
            let mut h = opts.step;
            let mut numeric = None;
            for _ in 0..4 {
                point[i].data_mut()[idx] = x0 + h;
                let (fp, kp) = evaluate(&f, &point)?;
                point[i].data_mut()[idx] = x0 - h;
                let (fm, km) = evaluate(&f, &point)?;
                point[i].data_mut()[idx] = x0;
                if kp == base_print && km == base_print {
                    numeric = Some((fp - fm) / (2.0 * h));
                    break;
                }
                h *= 0.1;
            }
            let Some(numeric) = numeric else {
                report.skipped_kinks += 1;
                continue;
            };
            let a = analytic[i].data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Worst {
                    input: i,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance && report.checked > 0;
    Ok(report)
}

/// Single-input form of [`check_gradients`].
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..GradCheckOptions::default()
    };
    check_gradients(|tape, v| f(tape, v[0]), std::slice::from_ref(point), &opts)
}
