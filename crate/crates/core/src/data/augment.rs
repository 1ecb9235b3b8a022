use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageU8;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FillMode {
    /// Replicates the nearest edge pixel.
    Nearest,
    Constant {
        value: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Fraction of the width.
    pub width_shift_range: f64,
    /// Fraction of the height.
    pub height_shift_range: f64,
    /// Radians.
    pub shear_range: f64,
    /// Scale factors are drawn from `[1 − zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub fill_mode: FillMode,
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            width_shift_range: 0.1,
            height_shift_range: 0.1,
            shear_range: 0.2,
            zoom_range: 0.2,
            horizontal_flip: true,
            vertical_flip: true,
            fill_mode: FillMode::Nearest,
            interpolation: Interpolation::Bilinear,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// All ranges zero and flips off.
    pub fn identity() -> Self {
        AugmentSpec {
            width_shift_range: 0.0,
            height_shift_range: 0.0,
            shear_range: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width_shift_range", self.width_shift_range),
            ("height_shift_range", self.height_shift_range),
            ("shear_range", self.shear_range),
            ("zoom_range", self.zoom_range),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        if self.zoom_range >= 1.0 {
            return Err(Error::Config(format!(
                "zoom_range must be < 1, got {}",
                self.zoom_range
            )));
        }
        if self.shear_range >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config(format!(
                "shear_range must be < π/2, got {}",
                self.shear_range
            )));
        }
        Ok(())
    }
}

/// The random draws behind one augmented image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    /// Fraction of the width; positive moves content right.
    pub shift_x: f64,
    /// Fraction of the height; positive moves content down.
    pub shift_y: f64,
    pub shear: f64,
    /// Content scale; below 1 zooms out.
    pub zoom: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        shift_x: 0.0,
        shift_y: 0.0,
        shear: 0.0,
        zoom: 1.0,
        flip_h: false,
        flip_v: false,
    };

    /// Consumes exactly six draws in the order shift-x, shift-y, shear,
    /// zoom, flip-h, flip-v, whatever the spec.
    pub fn draw<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        let mut symmetric = |range: f64| (2.0 * rng.gen::<f64>() - 1.0) * range;
        let shift_x = symmetric(spec.width_shift_range);
        let shift_y = symmetric(spec.height_shift_range);
        let shear = symmetric(spec.shear_range);
        let zoom = 1.0 + symmetric(spec.zoom_range);
        let flip_h = rng.gen::<bool>() && spec.horizontal_flip;
        let flip_v = rng.gen::<bool>() && spec.vertical_flip;
        AugmentParams {
            shift_x,
            shift_y,
            shear,
            zoom,
            flip_h,
            flip_v,
        }
    }
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(
    image: &ImageU8,
    spec: &AugmentSpec,
    rng: &mut R,
) -> (ImageU8, AugmentParams) {
    let params = AugmentParams::draw(spec, rng);
    (
        apply_params(image, &params, spec.fill_mode, spec.interpolation),
        params,
    )
}

/// Resamples `image` through the inverse of
/// `translate ∘ shear ∘ zoom ∘ flips`, all taken about the image center.
pub fn apply_params(
    image: &ImageU8,
    p: &AugmentParams,
    fill: FillMode,
    interp: Interpolation,
) -> ImageU8 {
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = (p.shift_x * w as f64, p.shift_y * h as f64);
    let (sin, cos) = p.shear.sin_cos();
    ImageU8::from_fn(w, h, |x, y| {
        let u = x as f64 - cx - tx;
        let v = y as f64 - cy - ty;
        // forward shear is (u, v) ↦ (u − sin·v, cos·v)
        let v = v / cos;
        let u = u + sin * v;
        let (mut u, mut v) = (u / p.zoom, v / p.zoom);
        if p.flip_h {
            u = -u;
        }
        if p.flip_v {
            v = -v;
        }
        sample(image, u + cx, v + cy, fill, interp)
    })
    .expect("same extent as the source")
}

fn fetch(image: &ImageU8, x: i64, y: i64, fill: FillMode) -> [f64; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let inside = (0..w).contains(&x) && (0..h).contains(&y);
    let px = match fill {
        _ if inside => image.pixel(x as usize, y as usize),
        FillMode::Nearest => image.pixel(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize),
        FillMode::Constant { value } => [value; 3],
    };
    px.map(f64::from)
}

fn sample(image: &ImageU8, x: f64, y: f64, fill: FillMode, interp: Interpolation) -> [u8; 3] {
    let value = match interp {
        Interpolation::Nearest => fetch(image, x.round() as i64, y.round() as i64, fill),
        Interpolation::Bilinear => {
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut acc = [0.0; 3];
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let p = fetch(image, x0 + dx, y0 + dy, fill);
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            acc
        }
    };
    value.map(|v| v.round_ties_even().clamp(0.0, 255.0) as u8)
}
