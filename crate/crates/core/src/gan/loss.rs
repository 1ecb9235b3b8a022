//! The minimax value function and the losses derived from it.
//!
//! `V(D, G) = E[log D(x)] + E[log(1 − D(G(z)))]`, estimated by batch
//! means. The discriminator minimizes `−V`; the generator minimizes
//! `E[log(1 − D(G(z)))]` (minimax) or `−E[log D(G(z))]` (non-saturating).
//! Every logarithm takes `max(p, 1e-12)`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    #[default]
    Minimax,
    NonSaturating,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    pub v_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub real: f64,
    pub fake: f64,
    pub combined: f64,
}

fn probabilities<T: Real>(t: &Tensor<T>, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "{what} contains {bad}, outside [0, 1]"
        )));
    }
    Ok(values)
}

fn mean_log(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v.max(LOG_FLOOR).ln();
        n += 1;
    }
    acc / n as f64
}

/// Empirical `V(D, G)` from discriminator outputs on real and generated batches.
pub fn gan_value<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    let real = probabilities(d_real, "d_real")?;
    let fake = probabilities(d_fake, "d_fake")?;
    Ok(mean_log(real.into_iter()) + mean_log(fake.into_iter().map(|p| 1.0 - p)))
}

/// `−V(D, G)`; minimizing it performs the discriminator's maximization.
pub fn discriminator_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    Ok(-gan_value(d_real, d_fake)?)
}

pub fn generator_loss<T: Real>(d_fake: &Tensor<T>, variant: GeneratorLoss) -> Result<f64> {
    let fake = probabilities(d_fake, "d_fake")?;
    Ok(match variant {
        GeneratorLoss::Minimax => mean_log(fake.into_iter().map(|p| 1.0 - p)),
        GeneratorLoss::NonSaturating => -mean_log(fake.into_iter()),
    })
}

pub fn gan_losses<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    variant: GeneratorLoss,
) -> Result<GanLosses> {
    let v = gan_value(d_real, d_fake)?;
    Ok(GanLosses {
        d_loss: -v,
        g_loss: generator_loss(d_fake, variant)?,
        v_estimate: v,
    })
}

/// Real samples count as correct above `threshold`, fake samples at or
/// below it, so a tie is classified as fake.
pub fn d_accuracy<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>, threshold: f64) -> Accuracy {
    let real = d_real.data();
    let fake = d_fake.data();
    let hits_real = real.iter().filter(|p| p.as_f64() > threshold).count();
    let hits_fake = fake.iter().filter(|p| p.as_f64() <= threshold).count();
    Accuracy {
        real: hits_real as f64 / real.len() as f64,
        fake: hits_fake as f64 / fake.len() as f64,
        combined: (hits_real + hits_fake) as f64 / (real.len() + fake.len()) as f64,
    }
}

/// `−(mean log D(x) + mean log(1 − D(G(z))))` recorded on `tape`.
pub fn discriminator_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    d_real: Var,
    d_fake: Var,
) -> Result<Var> {
    let log_real = tape.log(d_real);
    let real_term = tape.mean(log_real);
    let one_minus = tape.affine(d_fake, -T::one(), T::one());
    let log_fake = tape.log(one_minus);
    let fake_term = tape.mean(log_fake);
    let value = tape.add(real_term, fake_term)?;
    Ok(tape.affine(value, -T::one(), T::zero()))
}

pub fn generator_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    d_fake: Var,
    variant: GeneratorLoss,
) -> Var {
    match variant {
        GeneratorLoss::Minimax => {
            let one_minus = tape.affine(d_fake, -T::one(), T::one());
            let logs = tape.log(one_minus);
            tape.mean(logs)
        }
        GeneratorLoss::NonSaturating => {
            let logs = tape.log(d_fake);
            let m = tape.mean(logs);
            tape.affine(m, -T::one(), T::zero())
        }
    }
}
