//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness. Numeric arguments select criteria
//! (`cargo test --test acceptance -- 4 8`); anything else is ignored.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{bits, naive_conv, naive_conv_transpose, random_case, random_tensor, ScalarAdam};
use microgan::autograd::{GradientSet, BACKWARD_RULES};
use microgan::data::{
    apply_params, augment, expand_dataset, from_model_range, save_image, synthetic_textures,
    to_model_range, AugmentParams, AugmentSpec, Dataset, ImageU8,
};
use microgan::gan::{
    gan_value, generator_loss, load_checkpoint, sample_latent, save_checkpoint, train, AdamConfig,
    AdamState, GeneratorLoss, LossTrace, TrainConfig, Trainer,
};
use microgan::layers::{
    build_discriminator, build_discriminator_with, build_generator, build_generator_with,
    init_weights, InitSpec, LayerSpec, ModelConfig, Sequential, LATENT_DIM,
};
use microgan::tensor::{conv2d, conv_transpose2d, conv_transpose2d_sized, Activation, ConvSpec};
use microgan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_microgan");

const SHAPE_BATCHES: [usize; 3] = [1, 2, 7];
const CONV_CONFIGS: usize = 200;
const ADJOINT_CONFIGS: usize = 100;
const ADJOINT_TOL: f64 = 1e-10;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_MAX_COORDS: usize = 64;
const GRADCHECK_SCALE: usize = 4;
const LOSS_TOL: f64 = 1e-12;
const GRID_STEPS: usize = 100;
const ADAM_STEPS: usize = 100;
const ADAM_TOL: f64 = 1e-12;
const SOURCE_COUNT: usize = 67;
const CORPUS_SIZE: usize = 13000;
const CORPUS_EXTENT: usize = 64;
const DYNAMICS_SHRINK: usize = 4;
const DYNAMICS_IMAGES: usize = 200;
const DYNAMICS_BATCH: usize = 16;
const DYNAMICS_ITERATIONS: u64 = 500;
const DYNAMICS_RESUME_AT: u64 = 250;
const DYNAMICS_LR: f64 = 0.0005;
const ACCURACY_CEILING: f64 = 0.95;
const PIPELINE_ITERATIONS: u64 = 30;

const GENERATOR_LISTING: &str = "\
(0): ConvTranspose2d(1000, 512, kernel_size=(4, 4), stride=(1, 1), bias=False)
(1): BatchNorm2d(512, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(2): ReLU(inplace=True)
(3): ConvTranspose2d(512, 256, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(4): BatchNorm2d(256, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(5): ReLU(inplace=True)
(6): ConvTranspose2d(256, 128, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(7): BatchNorm2d(128, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(8): ReLU(inplace=True)
(9): ConvTranspose2d(128, 64, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(10): BatchNorm2d(64, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(11): ReLU(inplace=True)
(12): ConvTranspose2d(64, 3, kernel_size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(13): Tanh()";

const DISCRIMINATOR_LISTING: &str = "\
(0): Conv2d(3, 64, kernel size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(1): LeakyReLU(negative_slope=0.2, inplace=True)
(2): Conv2d(64, 128, kernel size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(3): BatchNorm2d(128, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(4): LeakyReLU(negative_slope=0.2, inplace=True)
(5): Conv2d(128, 256, kernel size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(6): BatchNorm2d(256, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(7): LeakyReLU(negative_slope=0.2, inplace=True)
(8): Conv2d(256, 512, kernel size=(4, 4), stride=(2, 2), padding=(1, 1), bias=False)
(9): BatchNorm2d(512, eps=1e-05, momentum=0.1, affine=True, track_running_stats=True)
(10): LeakyReLU(negative_slope=0.2, inplace=True)
(11): Conv2d(512, 1, kernel_size=(4, 4), stride=(1, 1), bias=False)
(12): Sigmoid()";

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(context: &'static str) -> impl Fn(E) -> String {
    move |e| format!("{context}: {e}")
}

// ---------------------------------------------------------------- listing

fn pair_after(args: &str, keys: &[&str]) -> Option<(usize, usize)> {
    let start = keys
        .iter()
        .find_map(|k| args.find(&format!("{k}=(")).map(|i| i + k.len() + 2))?;
    let end = start + args[start..].find(')')?;
    let mut it = args[start..end]
        .split(',')
        .map(|s| s.trim().parse::<usize>());
    Some((it.next()?.ok()?, it.next()?.ok()?))
}

fn number_after(args: &str, key: &str) -> Option<f64> {
    let start = args.find(&format!("{key}="))? + key.len() + 1;
    let rest = &args[start..];
    let end = rest.find([',', ')']).unwrap_or(rest.len());
    rest[..end].trim().parse().ok()
}

fn leading_ints(args: &str) -> Vec<usize> {
    args.split(',')
        .map_while(|s| s.trim().parse().ok())
        .collect()
}

/// Reads one printed module line such as `(3): BatchNorm2d(256, eps=1e-05, ...)`.
fn parse_listing_line(line: &str) -> Result<LayerSpec, String> {
    let body = line
        .split_once("): ")
        .map(|(_, b)| b)
        .ok_or(format!("no index in {line:?}"))?;
    let (name, args) = body
        .split_once('(')
        .ok_or(format!("no arguments in {line:?}"))?;
    let args = args
        .strip_suffix(')')
        .ok_or(format!("unbalanced {line:?}"))?;
    let spec = match name {
        "Conv2d" | "ConvTranspose2d" => {
            let ch = leading_ints(args);
            ensure(ch.len() == 2, || format!("channels in {line:?}"))?;
            ensure(args.contains("bias=False"), || format!("bias in {line:?}"))?;
            LayerSpec::Conv(ConvSpec {
                in_channels: ch[0],
                out_channels: ch[1],
                kernel: pair_after(args, &["kernel_size", "kernel size"])
                    .ok_or(format!("kernel in {line:?}"))?,
                stride: pair_after(args, &["stride"]).ok_or(format!("stride in {line:?}"))?,
                padding: pair_after(args, &["padding"]).unwrap_or((0, 0)),
                transposed: name == "ConvTranspose2d",
                bias: false,
            })
        }
        "BatchNorm2d" => LayerSpec::BatchNorm {
            channels: leading_ints(args)
                .first()
                .copied()
                .ok_or(format!("channels in {line:?}"))?,
            eps: number_after(args, "eps").ok_or(format!("eps in {line:?}"))?,
            momentum: number_after(args, "momentum").ok_or(format!("momentum in {line:?}"))?,
        },
        "ReLU" => LayerSpec::Activation(Activation::Relu),
        "LeakyReLU" => LayerSpec::Activation(Activation::LeakyRelu {
            slope: number_after(args, "negative_slope").ok_or(format!("slope in {line:?}"))?,
        }),
        "Tanh" => LayerSpec::Activation(Activation::Tanh),
        "Sigmoid" => LayerSpec::Activation(Activation::Sigmoid),
        other => return Err(format!("unknown module {other}")),
    };
    Ok(spec)
}

fn compare_listing(what: &str, model: &Sequential<f32>, listing: &str) -> Result<(), String> {
    let expected: Vec<LayerSpec> = listing
        .lines()
        .map(parse_listing_line)
        .collect::<Result<_, _>>()?;
    let got = model.specs();
    ensure(got.len() == expected.len(), || {
        format!(
            "{what}: {} entries, listing has {}",
            got.len(),
            expected.len()
        )
    })?;
    for (i, (g, e)) in got.iter().zip(&expected).enumerate() {
        ensure(g == e, || {
            format!("{what} entry {i}: built {g:?}, listing {e:?}")
        })?;
    }
    Ok(())
}

fn initialized(mut model: Sequential<f32>, seed: u64) -> Result<Sequential<f32>, String> {
    let init = InitSpec {
        seed,
        ..InitSpec::default()
    };
    init_weights(&mut model, &init, &mut init.rng()).map_err(fail("init"))?;
    Ok(model)
}

fn architecture_fidelity() -> Outcome {
    let g = initialized(build_generator(), 1)?;
    let d = initialized(build_discriminator(), 2)?;
    compare_listing("generator", &g, GENERATOR_LISTING)?;
    compare_listing("discriminator", &d, DISCRIMINATOR_LISTING)?;
    let g_specs = g.specs();
    ensure(
        matches!(g_specs[g_specs.len() - 2], LayerSpec::Conv(_)),
        || "generator output convolution is followed by batch norm".into(),
    )?;
    ensure(!matches!(d.specs()[1], LayerSpec::BatchNorm { .. }), || {
        "batch norm after the first discriminator convolution".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in SHAPE_BATCHES {
        let z: Tensor<f32> = sample_latent(n, LATENT_DIM, &mut rng).map_err(fail("latent"))?;
        let x = g.forward_eval(&z).map_err(fail("generator"))?;
        ensure(x.shape() == [n, 3, 64, 64], || {
            format!("G({n},1000,1,1) gave {:?}", x.shape())
        })?;
        let y = d.forward_eval(&x).map_err(fail("discriminator"))?;
        ensure(y.shape() == [n, 1, 1, 1], || {
            format!("D({n},3,64,64) gave {:?}", y.shape())
        })?;
    }
    Ok(format!(
        "14 + 13 entries match the printed listings; shape chains hold for N in {SHAPE_BATCHES:?}"
    ))
}

// ---------------------------------------------------------------- conv

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for transposed in [false, true] {
        for i in 0..CONV_CONFIGS {
            let c = random_case(&mut rng, transposed);
            let x = random_tensor(&[c.n, c.spec.in_channels, c.h, c.w], &mut rng);
            let w = random_tensor(&c.spec.weight_shape(), &mut rng);
            let (got, want) = if transposed {
                (
                    conv_transpose2d(&x, &w, &c.spec),
                    naive_conv_transpose(&x, &w, &c.spec),
                )
            } else {
                (conv2d(&x, &w, &c.spec), naive_conv(&x, &w, &c.spec))
            };
            let got = got.map_err(fail("kernel"))?;
            ensure(bits(&got.data()) == bits(&want), || {
                format!(
                    "configuration {i} ({:?}) differs from direct summation",
                    c.spec
                )
            })?;
        }
    }
    Ok(format!(
        "{CONV_CONFIGS} conv2d + {CONV_CONFIGS} conv_transpose2d configurations bit-exact"
    ))
}

fn adjoint_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..ADJOINT_CONFIGS {
        let c = random_case(&mut rng, false);
        let x = random_tensor(&[c.n, c.spec.in_channels, c.h, c.w], &mut rng);
        let w = random_tensor(&c.spec.weight_shape(), &mut rng);
        let fx = conv2d(&x, &w, &c.spec).map_err(fail("conv2d"))?;
        let y = random_tensor(fx.shape(), &mut rng);
        let aty =
            conv_transpose2d_sized(&y, &w, &c.spec.adjoint(), (c.h, c.w)).map_err(fail("convT"))?;
        let lhs = fx.dot(&y).map_err(fail("dot"))?;
        let rhs = x.dot(&aty).map_err(fail("dot"))?;
        let rel = (lhs - rhs).abs() / lhs.abs();
        worst = worst.max(rel);
        ensure(rel < ADJOINT_TOL, || {
            format!("configuration {i}: relative gap {rel:e}")
        })?;
    }
    Ok(format!(
        "{ADJOINT_CONFIGS} configurations, worst relative gap {worst:.2e} < {ADJOINT_TOL:e}"
    ))
}

// ---------------------------------------------------------------- gradients

fn gradient_correctness() -> Outcome {
    let out = Command::new(BIN)
        .args(["gradcheck", "--scale", &GRADCHECK_SCALE.to_string()])
        .args([
            "--tol",
            &GRADCHECK_TOL.to_string(),
            "--step",
            &GRADCHECK_STEP.to_string(),
        ])
        .args(["--max-coords", &GRADCHECK_MAX_COORDS.to_string()])
        .output()
        .map_err(fail("spawn"))?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.code() == Some(0), || {
        format!(
            "exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })?;
    let covered = stdout
        .lines()
        .find_map(|l| l.strip_prefix("backward rules covered: "))
        .ok_or("no coverage line")?;
    let covered: Vec<&str> = covered.split(", ").collect();
    for rule in BACKWARD_RULES {
        ensure(covered.contains(rule), || {
            format!("rule {rule} not exercised")
        })?;
    }
    for model in ["generator", "discriminator"] {
        let prefix = format!("{model} 1/{GRADCHECK_SCALE}");
        ensure(stdout.lines().any(|l| l.starts_with(&prefix)), || {
            format!("{prefix} not checked")
        })?;
    }
    Ok(format!(
        "exit 0 at tol {GRADCHECK_TOL:e}, h {GRADCHECK_STEP:e}; all {} backward rules and both 1/{GRADCHECK_SCALE} models checked",
        BACKWARD_RULES.len()
    ))
}

// ---------------------------------------------------------------- loss

fn probs(p: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[p.len(), 1, 1, 1], p.to_vec()).unwrap()
}

fn loss_algebra() -> Outcome {
    let half = probs(&[0.5; 8]);
    let v = gan_value(&half, &half).map_err(fail("value"))?;
    let want = -2.0 * std::f64::consts::LN_2;
    ensure((v - want).abs() <= LOSS_TOL, || {
        format!("V(0.5, 0.5) = {v}, want {want}")
    })?;
    let g = generator_loss(&half, GeneratorLoss::Minimax).map_err(fail("generator loss"))?;
    ensure((g - 0.5f64.ln()).abs() <= LOSS_TOL, || {
        format!("minimax loss at 0.5 = {g}")
    })?;

    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i in 0..=GRID_STEPS {
        for j in 0..=GRID_STEPS {
            let (a, b) = (i as f64 / GRID_STEPS as f64, j as f64 / GRID_STEPS as f64);
            let v = gan_value(&probs(&[a]), &probs(&[b])).map_err(fail("value"))?;
            ensure(v <= 0.0, || format!("V({a}, {b}) = {v} > 0"))?;
            if v > best.0 {
                best = (v, i, j);
            }
        }
    }
    ensure(best == (0.0, GRID_STEPS, 0), || {
        format!("grid supremum {} at ({}, {})", best.0, best.1, best.2)
    })?;
    Ok(format!(
        "V(0.5,0.5) = -2 ln 2, minimax G loss = ln 0.5 (both within {LOSS_TOL:e}); sup V = 0 at (1, 0) on a {}² grid",
        GRID_STEPS + 1
    ))
}

// ---------------------------------------------------------------- adam

fn adam_oracle() -> Outcome {
    let config = AdamConfig::default();
    ensure(config.beta1 == 0.5, || {
        format!("default beta1 is {}", config.beta1)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 32;
    let mut p = Tensor::<f64>::randn(&[n], 0.0, 1.0, &mut rng).map_err(fail("init"))?;
    let mut reference = p.data().to_vec();
    let mut scalars: Vec<ScalarAdam> = (0..n)
        .map(|_| ScalarAdam::new(config.lr, config.beta1, config.beta2, config.eps))
        .collect();
    let mut state = AdamState::new(config);
    let mut worst = 0.0f64;
    for step in 0..ADAM_STEPS {
        let g: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-2.0..2.0) * 10f64.powi(rng.gen_range(-4..2)))
            .collect();
        let mut grads = GradientSet::default();
        grads.insert(
            "p",
            Tensor::from_vec(&[n], g.clone()).map_err(fail("grad"))?,
        );
        state
            .step([("p".to_string(), &mut p)], &grads)
            .map_err(fail("step"))?;
        for i in 0..n {
            reference[i] = scalars[i].step(reference[i], g[i]);
            let gap = (p.data()[i] - reference[i]).abs();
            worst = worst.max(gap);
            ensure(gap <= ADAM_TOL, || {
                format!("step {step}, coordinate {i}: gap {gap:e}")
            })?;
        }
    }
    Ok(format!(
        "{ADAM_STEPS} steps with beta1 0.5, worst coordinate gap {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- augmentation

fn write_pngs(images: &[ImageU8], dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(fail("mkdir"))?;
    for (i, im) in images.iter().enumerate() {
        save_image(im, dir.join(format!("src_{i:03}.png"))).map_err(fail("save"))?;
    }
    Ok(())
}

fn run_bin(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(BIN).args(args).output().map_err(fail("spawn"))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(fail("read_dir"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(fail("read_dir"))?;
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(fail("read"))?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

fn augmentation_contract() -> Outcome {
    let sources = synthetic_textures(SOURCE_COUNT, CORPUS_EXTENT, 7);
    let spec = AugmentSpec {
        seed: 7,
        ..AugmentSpec::default()
    };
    let corpus = expand_dataset(&sources, CORPUS_SIZE, &spec).map_err(fail("expand"))?;
    ensure(corpus.len() == CORPUS_SIZE, || {
        format!("{} items", corpus.len())
    })?;
    let mut per_source = vec![0usize; SOURCE_COUNT];
    for p in corpus.provenance() {
        per_source[p.source_index] += 1;
    }
    let (lo, hi) = (
        CORPUS_SIZE / SOURCE_COUNT,
        CORPUS_SIZE.div_ceil(SOURCE_COUNT),
    );
    ensure(per_source.iter().all(|&c| (lo..=hi).contains(&c)), || {
        format!("uneven source usage {per_source:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let identity = AugmentSpec::identity();
    for (i, src) in sources.iter().enumerate() {
        let (out, _) = augment(src, &identity, &mut rng);
        ensure(out == *src, || {
            format!("identity augmentation changed source {i}")
        })?;
        let flip = AugmentParams {
            flip_h: true,
            ..AugmentParams::IDENTITY
        };
        let once = apply_params(src, &flip, spec.fill_mode, spec.interpolation);
        let twice = apply_params(&once, &flip, spec.fill_mode, spec.interpolation);
        ensure(twice == *src, || {
            format!("double horizontal flip changed source {i}")
        })?;
    }

    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    write_pngs(&sources, &dir.path().join("in"))?;
    let input = dir.path().join("in").display().to_string();
    let mut corpora = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run).display().to_string();
        let o = run_bin(&[
            "augment",
            "--in",
            &input,
            "--out",
            &out,
            "--count",
            &CORPUS_SIZE.to_string(),
            "--seed",
            "7",
        ])?;
        ensure(o.status.success(), || {
            format!(
                "augment exit {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stderr)
            )
        })?;
        corpora.push(dir_bytes(Path::new(&out))?);
    }
    let pngs = corpora[0]
        .iter()
        .filter(|(n, _)| n.ends_with(".png"))
        .count();
    ensure(pngs == CORPUS_SIZE, || format!("augment wrote {pngs} PNGs"))?;
    ensure(corpora[0] == corpora[1], || {
        "same seed gave different corpora".into()
    })?;
    Ok(format!(
        "{SOURCE_COUNT} sources -> {CORPUS_SIZE} items ({lo}-{hi} per source); identity and double flip exact; two CLI runs byte-identical"
    ))
}

// ---------------------------------------------------------------- dynamics

fn dynamics_setup() -> (TrainConfig, ModelConfig, Dataset) {
    let model = ModelConfig::shrunk(DYNAMICS_SHRINK);
    let config = TrainConfig {
        lr: DYNAMICS_LR,
        batch_size: DYNAMICS_BATCH,
        latent_dim: model.latent_dim,
        total_iterations: DYNAMICS_ITERATIONS,
        seed: 8,
        ..TrainConfig::default()
    };
    let data =
        Dataset::from_images(synthetic_textures(DYNAMICS_IMAGES, model.image_size, 8)).unwrap();
    (config, model, data)
}

fn trace_bits(trace: &LossTrace) -> Vec<(u64, [u64; 4])> {
    trace
        .records()
        .iter()
        .map(|r| {
            (
                r.iteration,
                [
                    r.d_loss.to_bits(),
                    r.g_loss.to_bits(),
                    r.d_acc_real.to_bits(),
                    r.d_acc_fake.to_bits(),
                ],
            )
        })
        .collect()
}

fn params_bits(model: &Sequential<f32>) -> Vec<u32> {
    model
        .parameters()
        .iter()
        .chain(model.buffers().iter())
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

fn all_finite(model: &Sequential<f32>) -> bool {
    model
        .parameters()
        .iter()
        .chain(model.buffers().iter())
        .all(|(_, t)| t.all_finite())
}

fn training_dynamics() -> Outcome {
    let (config, model, data) = dynamics_setup();
    let init = InitSpec {
        seed: 8,
        ..InitSpec::default()
    };
    let first = train(config.clone(), model, &init, data.clone()).map_err(fail("training"))?;
    ensure(first.trace.len() as u64 == DYNAMICS_ITERATIONS, || {
        format!("{} records", first.trace.len())
    })?;
    let finite = first
        .trace
        .records()
        .iter()
        .all(|r| r.d_loss.is_finite() && r.g_loss.is_finite());
    ensure(
        finite && all_finite(&first.generator) && all_finite(&first.discriminator),
        || "non-finite loss or parameter".into(),
    )?;
    let acc: Vec<(u64, f64)> = first
        .trace
        .records()
        .iter()
        .map(|r| (r.iteration, r.d_acc_combined()))
        .collect();
    // the drop has to follow a discriminator that has already separated the classes
    let learned = acc
        .iter()
        .position(|&(_, a)| a >= ACCURACY_CEILING)
        .ok_or(format!(
            "discriminator accuracy never reached {ACCURACY_CEILING}"
        ))?;
    let (learned_at, _) = acc[learned];
    let (drop_at, drop_acc) = acc[learned..]
        .iter()
        .copied()
        .find(|&(_, a)| a < ACCURACY_CEILING)
        .ok_or(format!(
            "discriminator accuracy never fell below {ACCURACY_CEILING} after iteration {learned_at}"
        ))?;
    let below = acc[learned..]
        .iter()
        .filter(|&&(_, a)| a < ACCURACY_CEILING)
        .count();

    let second = train(config.clone(), model, &init, data.clone()).map_err(fail("rerun"))?;
    ensure(
        trace_bits(&first.trace) == trace_bits(&second.trace),
        || "rerun trace differs".into(),
    )?;
    ensure(
        params_bits(&first.generator) == params_bits(&second.generator),
        || "rerun generator differs".into(),
    )?;

    let mut head = Trainer::new(config, model, &init, data.clone()).map_err(fail("trainer"))?;
    for _ in 0..DYNAMICS_RESUME_AT {
        head.step().map_err(fail("step"))?;
    }
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&head.checkpoint(), &path).map_err(fail("save"))?;
    drop(head);
    let mut tail = Trainer::resume(load_checkpoint(&path).map_err(fail("load"))?, data)
        .map_err(fail("resume"))?;
    tail.run(|_| Ok(())).map_err(fail("resumed run"))?;
    ensure(trace_bits(tail.trace()) == trace_bits(&first.trace), || {
        "resumed trace differs from the uninterrupted run".into()
    })?;
    ensure(
        params_bits(tail.generator()) == params_bits(&first.generator),
        || "resumed generator differs".into(),
    )?;
    Ok(format!(
        "finite throughout; accuracy reached {ACCURACY_CEILING} at iteration {learned_at}, fell to {drop_acc:.3} at {drop_at} ({below} later iterations below); rerun and resume at {DYNAMICS_RESUME_AT} bit-identical"
    ))
}

// ---------------------------------------------------------------- ranges

fn range_discipline() -> Outcome {
    let mut checked = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases: Vec<(Sequential<f32>, Sequential<f32>, usize)> = vec![(
        initialized(build_generator(), 3)?,
        initialized(build_discriminator(), 4)?,
        LATENT_DIM,
    )];
    for shrink in [4, 16] {
        let model = ModelConfig::shrunk(shrink);
        let g = initialized(build_generator_with(&model).map_err(fail("build"))?, 5)?;
        let d = initialized(build_discriminator_with(&model).map_err(fail("build"))?, 6)?;
        cases.push((g, d, model.latent_dim));
    }
    for (g, d, latent) in &cases {
        for scale in [1.0f32, 1e3] {
            let z: Tensor<f32> = sample_latent(4, *latent, &mut rng).map_err(fail("latent"))?;
            let z = z.map(|v| v * scale);
            let x = g.forward_eval(&z).map_err(fail("generator"))?;
            ensure(x.data().iter().all(|v| (-1.0..=1.0).contains(v)), || {
                format!("generator output outside [-1, 1] at latent scale {scale}")
            })?;
            for input in [x.clone(), x.map(|v| v * 1e4), x.map(|v| -v * 1e4)] {
                let y = d.forward_eval(&input).map_err(fail("discriminator"))?;
                ensure(y.data().iter().all(|v| *v > 0.0 && *v < 1.0), || {
                    format!("discriminator output outside (0, 1): {:?}", y.data())
                })?;
            }
            checked += 1;
        }
    }

    let levels = ImageU8::from_fn(256, 1, |x, _| {
        [x as u8, 255 - x as u8, (x as u8).wrapping_mul(7)]
    })
    .unwrap();
    let t64: Tensor<f64> = to_model_range(&levels);
    let t32: Tensor<f32> = to_model_range(&levels);
    ensure(t64.data().iter().all(|v| (-1.0..=1.0).contains(v)), || {
        "pixel tensor outside [-1, 1]".into()
    })?;
    ensure(
        from_model_range(&t64).map_err(fail("f64"))? == levels,
        || "f64 round trip lost a level".into(),
    )?;
    ensure(
        from_model_range(&t32).map_err(fail("f32"))? == levels,
        || "f32 round trip lost a level".into(),
    )?;
    Ok(format!(
        "{checked} generator/discriminator pairings in range, including saturated inputs; 256 levels round-trip in f32 and f64"
    ))
}

// ---------------------------------------------------------------- pipeline

fn trace_pipeline() -> Outcome {
    let model = ModelConfig::shrunk(16);
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let data_dir = dir.path().join("data");
    write_pngs(&synthetic_textures(24, model.image_size, 10), &data_dir)?;
    let out_dir = dir.path().join("run");
    let config = serde_json::json!({
        "model": model,
        "train": { "batch_size": 8, "total_iterations": PIPELINE_ITERATIONS, "seed": 10 },
        "paths": { "data_dir": data_dir, "out_dir": out_dir },
        "checkpoint_every": 0,
        "snapshot_every": 10,
    });
    let config_path = dir.path().join("run.json");
    fs::write(&config_path, config.to_string()).map_err(fail("write config"))?;
    let o = run_bin(&["train", "--config", &config_path.display().to_string()])?;
    ensure(o.status.success(), || {
        format!(
            "train exit {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        )
    })?;
    let trace_path = out_dir.join("trace.csv");
    let csv = fs::read_to_string(&trace_path).map_err(fail("read trace"))?;
    let rows = csv.lines().count() - 1;
    ensure(rows as u64 == PIPELINE_ITERATIONS, || {
        format!("{rows} rows for {PIPELINE_ITERATIONS} iterations")
    })?;

    let svg_path = dir.path().join("loss.svg");
    let o = run_bin(&[
        "plot",
        "--trace",
        &trace_path.display().to_string(),
        "--out",
        &svg_path.display().to_string(),
    ])?;
    ensure(o.status.success(), || {
        format!("plot exit {:?}", o.status.code())
    })?;
    let svg = fs::read_to_string(&svg_path).map_err(fail("read svg"))?;
    let doc = roxmltree::Document::parse(&svg).map_err(fail("svg is not well-formed XML"))?;
    let root = doc.root_element();
    ensure(root.tag_name().name() == "svg", || {
        format!("root element {}", root.tag_name().name())
    })?;
    let lines = doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .count();
    ensure(lines == 2, || format!("{lines} loss curves"))?;
    Ok(format!(
        "{rows} CSV rows for {PIPELINE_ITERATIONS} iterations; SVG parses with two loss curves"
    ))
}

// ---------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "architecture fidelity", architecture_fidelity),
        (2, "convolution oracle equivalence", conv_oracle),
        (3, "adjoint identity", adjoint_identity),
        (4, "gradient correctness", gradient_correctness),
        (5, "loss algebra", loss_algebra),
        (6, "Adam oracle", adam_oracle),
        (7, "augmentation contract", augmentation_contract),
        (8, "desk-scale training dynamics", training_dynamics),
        (9, "range discipline", range_discipline),
        (10, "trace/plot pipeline", trace_pipeline),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{secs:.1} s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
