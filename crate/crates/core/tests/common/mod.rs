//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use microgan::tensor::ConvSpec;
use microgan::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub spec: ConvSpec,
}

// Shapes up to (2, 3, 6, 6) whose output extent is positive.
pub fn random_case(rng: &mut ChaCha8Rng, transposed: bool) -> Case {
    loop {
        let (n, cin, cout) = (
            rng.gen_range(1..=2),
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
        );
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let kernel = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let padding = (rng.gen_range(0..kernel.0), rng.gen_range(0..kernel.1));
        let spec = ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            transposed,
            bias: false,
        };
        let ok = if transposed {
            (h - 1) * stride.0 + kernel.0 > 2 * padding.0
                && (w - 1) * stride.1 + kernel.1 > 2 * padding.1
        } else {
            h + 2 * padding.0 >= kernel.0 && w + 2 * padding.1 >= kernel.1
        };
        if ok {
            return Case { n, h, w, spec };
        }
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 0.0, 1.0, rng).unwrap()
}

/// `out[n, co, oy, ox] = Σ_ci Σ_dy Σ_dx x[n, ci, oy·s − p + dy, ox·s − p + dx] · w[co, ci, dy, dx]`
pub fn naive_conv(x: &Tensor<f64>, wt: &Tensor<f64>, spec: &ConvSpec) -> Vec<f64> {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, (kh, kw), (sh, sw), (ph, pw)) =
        (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * sh + dy) as isize - ph as isize;
                                let ix = (ox * sw + dx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.get(&[b, ci, iy as usize, ix as usize]).unwrap()
                                    * wt.get(&[co, ci, dy, dx]).unwrap();
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// `out[n, co, oy, ox] = Σ_ci Σ_dy Σ_dx x[n, ci, (oy + p − dy)/s, (ox + p − dx)/s] · w[ci, co, dy, dx]`
/// over terms where both divisions are exact and in range.
pub fn naive_conv_transpose(x: &Tensor<f64>, wt: &Tensor<f64>, spec: &ConvSpec) -> Vec<f64> {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, (kh, kw), (sh, sw), (ph, pw)) =
        (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let oh = (h - 1) * sh + kh - 2 * ph;
    let ow = (w - 1) * sw + kw - 2 * pw;
    let mut out = Vec::new();
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let ty = (oy + ph) as isize - dy as isize;
                                let tx = (ox + pw) as isize - dx as isize;
                                if ty < 0
                                    || tx < 0
                                    || ty % sh as isize != 0
                                    || tx % sw as isize != 0
                                {
                                    continue;
                                }
                                let (iy, ix) = (ty as usize / sh, tx as usize / sw);
                                if iy >= h || ix >= w {
                                    continue;
                                }
                                acc += x.get(&[b, ci, iy, ix]).unwrap()
                                    * wt.get(&[ci, co, dy, dx]).unwrap();
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub struct ScalarAdam {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new(lr: f64, b1: f64, b2: f64, eps: f64) -> Self {
        ScalarAdam {
            lr,
            b1,
            b2,
            eps,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, p: f64, g: f64) -> f64 {
        self.t += 1;
        self.m = self.b1 * self.m + (1.0 - self.b1) * g;
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g;
        let m_hat = self.m / (1.0 - self.b1.powf(self.t as f64));
        let v_hat = self.v / (1.0 - self.b2.powf(self.t as f64));
        p - self.lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}
