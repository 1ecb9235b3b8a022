//! Central finite-difference gradient checking.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Coordinates checked per parameter tensor; smaller tensors are swept fully.
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is near zero are judged on absolute error below this scale.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_coords: 64,
            seed: 0x6772_6164,
            scale_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub coords: usize,
    /// Coordinates passed over because the ±h stencil straddled a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate with its analytic and numeric values.
    pub worst: (usize, f64, f64),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_error < tol)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<40} {:>5} coords {:>3} skipped  max rel err {:.3e}",
                p.name, p.coords, p.skipped, p.max_rel_error
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(forward: &mut F, params: &ParamSet<f64>) -> Result<(f64, Vec<bool>)>
where
    F: FnMut(&ParamSet<f64>) -> Result<(Tape<f64>, Var)>,
{
    let (tape, loss) = forward(params)?;
    let value = tape.value(loss);
    if value.numel() != 1 {
        return Err(Error::Rank(format!("loss has shape {:?}", value.shape())));
    }
    Ok((value.data()[0], tape.branch_pattern()))
}

/// Compares [`Tape::backward`] against central differences
/// `(f(p + h) − f(p − h)) / 2h`.
///
/// `forward` builds a fresh tape from the given parameter values and
/// returns it with its scalar loss node; it must be deterministic.
///
/// A coordinate whose evaluations at `p − h`, `p` and `p + h` do not share
/// one [`Tape::branch_pattern`] straddles a kink, where the central
/// difference does not estimate the derivative. Such coordinates are
/// counted as skipped and replaced by the next sampled coordinate.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    mut forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet<f64>) -> Result<(Tape<f64>, Var)>,
{
    if !(opts.step > 0.0) {
        return Err(Error::Config(
            "finite-difference step must be positive".into(),
        ));
    }
    let (tape, loss) = forward(params)?;
    let analytic = tape.backward(loss)?;
    let base = tape.value(loss).data()[0];
    let pattern = tape.branch_pattern();
    drop(tape);
    let (again, _) = eval(&mut forward, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Determinism(format!(
            "two evaluations at the same point gave {base:e} and {again:e}"
        )));
    }

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for (slot, (name, value)) in params.iter().enumerate() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Shape(format!("loss does not register parameter {name}")))?
            .data()
            .into_owned();
        let numel = value.numel();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(slot as u64));
        let order = sample(&mut rng, numel, numel).into_vec();
        let mut entry = ParamReport {
            name: name.clone(),
            coords: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for &i in &order {
            if entry.coords == opts.max_coords {
                break;
            }
            let original = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = original + opts.step;
            let (up, up_pattern) = eval(&mut forward, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original - opts.step;
            let (down, down_pattern) = eval(&mut forward, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = original;
            if up_pattern != pattern || down_pattern != pattern {
                entry.skipped += 1;
                if entry.skipped >= 4 * opts.max_coords.max(1) {
                    break;
                }
                continue;
            }
            entry.coords += 1;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(grad[i], numeric, opts.scale_floor);
            if err >= entry.max_rel_error {
                entry.max_rel_error = err;
                entry.worst = (i, grad[i], numeric);
            }
        }
        if entry.coords == 0 && numel > 0 {
            // nothing smooth enough to compare counts as a failure
            entry.max_rel_error = f64::INFINITY;
        }
        report.params.push(entry);
    }
    Ok(report)
}
