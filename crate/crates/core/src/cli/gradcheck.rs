use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{
    grad_check, GradCheckOptions, GradCheckReport, ParamSet, Tape, Var, BACKWARD_RULES,
};
use crate::error::{Error, Result};
use crate::gan::{discriminator_loss_on_tape, generator_loss_on_tape, GeneratorLoss};
use crate::layers::{
    build_discriminator_with, build_generator_with, init_weights, InitSpec, ModelConfig, Sequential,
};
use crate::tensor::{Activation, BatchNormMode, ConvSpec, Tensor};

/// One gradient check together with the backward rules it exercises.
#[derive(Debug, Clone)]
pub struct CheckCase {
    pub name: String,
    pub rules: Vec<&'static str>,
    pub report: GradCheckReport,
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Tensor::randn(shape, 0.0, 1.0, rng)
}

// Standard normal draws pushed at least 0.1 away from the activation kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    Ok(randn(shape, rng)?.map(|v| v.signum() * (0.1 + v.abs())))
}

fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn leaf(tape: &mut Tape<f64>, p: &ParamSet<f64>, name: &str) -> Var {
    tape.param(name, p[name].clone())
}

fn head(tape: &mut Tape<f64>, x: Var) -> Var {
    let t = tape.activation(x, Activation::Tanh);
    tape.mean(t)
}

fn activation_case(
    kind: Activation,
    rng: &mut ChaCha8Rng,
    opts: &GradCheckOptions,
) -> Result<CheckCase> {
    let p = params(vec![("x", away_from_zero(&[2, 3, 4, 4], rng)?)]);
    let report = grad_check(
        &p,
        |p| {
            let mut tape = Tape::new();
            let x = leaf(&mut tape, p, "x");
            let y = tape.activation(x, kind);
            let out = match kind {
                Activation::Tanh => {
                    let s = tape.activation(y, Activation::Sigmoid);
                    tape.mean(s)
                }
                _ => head(&mut tape, y),
            };
            Ok((tape, out))
        },
        opts,
    )?;
    let mut rules = vec![kind.name()];
    rules.push(if kind == Activation::Tanh {
        "sigmoid"
    } else {
        "tanh"
    });
    rules.push("mean");
    Ok(CheckCase {
        name: kind.name().to_string(),
        rules,
        report,
    })
}

fn layer_cases(opts: &GradCheckOptions) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cases = Vec::new();

    let spec = ConvSpec::conv(3, 4, 3, 2, 1);
    let p = params(vec![
        ("x", randn(&[2, 3, 6, 6], &mut rng)?),
        ("w", randn(&[4, 3, 3, 3], &mut rng)?),
    ]);
    let report = grad_check(
        &p,
        |p| {
            let mut tape = Tape::new();
            let (x, w) = (leaf(&mut tape, p, "x"), leaf(&mut tape, p, "w"));
            let y = tape.conv2d(x, w, &spec)?;
            let out = head(&mut tape, y);
            Ok((tape, out))
        },
        opts,
    )?;
    cases.push(CheckCase {
        name: "conv2d".into(),
        rules: vec!["conv2d", "tanh", "mean"],
        report,
    });

    let spec = ConvSpec::transposed(4, 3, 4, 2, 1);
    let p = params(vec![
        ("x", randn(&[2, 4, 3, 3], &mut rng)?),
        ("w", randn(&[4, 3, 4, 4], &mut rng)?),
    ]);
    let report = grad_check(
        &p,
        |p| {
            let mut tape = Tape::new();
            let (x, w) = (leaf(&mut tape, p, "x"), leaf(&mut tape, p, "w"));
            let y = tape.conv_transpose2d(x, w, &spec)?;
            let out = head(&mut tape, y);
            Ok((tape, out))
        },
        opts,
    )?;
    cases.push(CheckCase {
        name: "conv_transpose2d".into(),
        rules: vec!["conv_transpose2d", "tanh", "mean"],
        report,
    });

    for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
        let p = params(vec![
            ("x", randn(&[3, 2, 3, 3], &mut rng)?),
            ("gamma", Tensor::randn(&[2], 1.0, 0.2, &mut rng)?),
            ("beta", Tensor::randn(&[2], 0.0, 0.2, &mut rng)?),
        ]);
        let running_mean = Tensor::randn(&[2], 0.0, 0.5, &mut rng)?;
        let running_var = Tensor::from_vec(&[2], vec![0.7, 1.6])?;
        let report = grad_check(
            &p,
            |p| {
                let (mut rm, mut rv) = (running_mean.clone(), running_var.clone());
                let mut tape = Tape::new();
                let (x, g, b) = (
                    leaf(&mut tape, p, "x"),
                    leaf(&mut tape, p, "gamma"),
                    leaf(&mut tape, p, "beta"),
                );
                let y = tape.batchnorm2d(x, g, b, &mut rm, &mut rv, mode, 1e-5, 0.1)?;
                let out = head(&mut tape, y);
                Ok((tape, out))
            },
            opts,
        )?;
        cases.push(CheckCase {
            name: format!(
                "batchnorm2d ({})",
                if mode == BatchNormMode::Train {
                    "train"
                } else {
                    "eval"
                }
            ),
            rules: vec!["batchnorm2d", "tanh", "mean"],
            report,
        });
    }

    for kind in [
        Activation::Relu,
        Activation::LeakyRelu { slope: 0.2 },
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        cases.push(activation_case(kind, &mut rng, opts)?);
    }

    let positive = |rng: &mut ChaCha8Rng| -> Result<Tensor<f64>> {
        let data = (0..12).map(|_| rng.gen_range(0.1..2.0)).collect();
        Tensor::from_vec(&[3, 4], data)
    };
    let p = params(vec![("a", positive(&mut rng)?), ("b", positive(&mut rng)?)]);
    let report = grad_check(
        &p,
        |p| {
            let mut tape = Tape::new();
            let (a, b) = (leaf(&mut tape, p, "a"), leaf(&mut tape, p, "b"));
            let s = tape.add(a, b)?;
            let t = tape.affine(s, 0.5, 1.0);
            let l = tape.log(t);
            let out = tape.mean(l);
            Ok((tape, out))
        },
        opts,
    )?;
    cases.push(CheckCase {
        name: "add/affine/log".into(),
        rules: vec!["add", "affine", "log", "mean"],
        report,
    });
    Ok(cases)
}

fn model_cases(scale: usize, opts: &GradCheckOptions) -> Result<Vec<CheckCase>> {
    let config = ModelConfig::shrunk(scale);
    let init = InitSpec {
        seed: opts.seed,
        ..InitSpec::default()
    };
    let mut rng = init.rng();
    let mut generator: Sequential<f64> = build_generator_with(&config)?;
    let mut discriminator: Sequential<f64> = build_discriminator_with(&config)?;
    init_weights(&mut generator, &init, &mut rng)?;
    init_weights(&mut discriminator, &init, &mut rng)?;

    let batch = 4;
    let z = Tensor::randn(&[batch, config.latent_dim, 1, 1], 0.0, 1.0, &mut rng)?;
    let s = config.image_size;
    let real =
        Tensor::<f64>::randn(&[batch, 3, s, s], 0.0, 0.5, &mut rng)?.map(|v| v.clamp(-1.0, 1.0));
    let fake = generator.clone().forward(&z, BatchNormMode::Train)?;

    let g_report = grad_check(
        &generator.param_set(),
        |p| {
            let (mut g, mut d) = (generator.clone(), discriminator.clone());
            g.load_params(p)?;
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let x = g.forward_on_tape(&mut tape, zv, BatchNormMode::Train, true)?;
            let y = d.forward_on_tape(&mut tape, x, BatchNormMode::Train, false)?;
            let loss = generator_loss_on_tape(&mut tape, y, GeneratorLoss::Minimax);
            Ok((tape, loss))
        },
        opts,
    )?;
    let d_report = grad_check(
        &discriminator.param_set(),
        |p| {
            let mut d = discriminator.clone();
            d.load_params(p)?;
            let mut tape = Tape::new();
            let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
            let dr = d.forward_on_tape(&mut tape, r, BatchNormMode::Train, true)?;
            let df = d.forward_on_tape(&mut tape, f, BatchNormMode::Train, true)?;
            let loss = discriminator_loss_on_tape(&mut tape, dr, df)?;
            Ok((tape, loss))
        },
        opts,
    )?;
    let shared = ["batchnorm2d", "mean", "log", "affine"];
    Ok(vec![
        CheckCase {
            name: format!("generator 1/{scale}"),
            rules: [
                &[
                    "conv_transpose2d",
                    "relu",
                    "tanh",
                    "conv2d",
                    "leaky_relu",
                    "sigmoid",
                ][..],
                &shared,
            ]
            .concat(),
            report: g_report,
        },
        CheckCase {
            name: format!("discriminator 1/{scale}"),
            rules: [&["conv2d", "leaky_relu", "sigmoid", "add"][..], &shared].concat(),
            report: d_report,
        },
    ])
}

/// Checks every backward rule in isolation, then both networks at width
/// 1/`scale` end to end. Fails if some rule is not exercised.
pub fn gradcheck_suite(scale: usize, opts: &GradCheckOptions) -> Result<Vec<CheckCase>> {
    let mut cases = layer_cases(opts)?;
    cases.extend(model_cases(scale, opts)?);
    let covered: BTreeSet<&str> = cases.iter().flat_map(|c| c.rules.iter().copied()).collect();
    if let Some(missing) = BACKWARD_RULES.iter().find(|r| !covered.contains(*r)) {
        return Err(Error::Config(format!(
            "no check covers backward rule {missing}"
        )));
    }
    Ok(cases)
}
