//! Classical luminance decompositions used as baselines: YCbCr, HSV, CIELAB,
//! single-scale Retinex and the Fourier amplitude/phase split.

use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DifferenceImage, ImageBuffer};
use crate::report::VarianceReport;

/// Default Gaussian surround for [`retinex_decompose`], in pixels.
pub const RETINEX_SIGMA: f64 = 25.0;
/// Intensity floor applied before taking logarithms.
pub const RETINEX_FLOOR: f64 = 1.0 / 255.0;

/// `Y = 0.26 R + 0.50 G + 0.10 B + 16` with BT.601 chroma, on `0..=255`
/// inputs (clamped).
pub fn rgb_to_ycbcr(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| v.clamp(0.0, 255.0));
    let y = 0.26 * r + 0.50 * g + 0.10 * b + 16.0;
    let cb = 128.0 - 0.148_223 * r - 0.290_993 * g + 0.439_216 * b;
    let cr = 128.0 + 0.439_216 * r - 0.367_788 * g - 0.071_427 * b;
    [y, cb, cr]
}

/// Hexcone HSV with `h ∈ [0, 360)`, `s, v ∈ [0, 1]`; gray pixels get `h = 0`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let v = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = v - min;
    if v <= 0.0 || delta <= 0.0 {
        return [0.0, 0.0, v];
    }
    let s = delta / v;
    let h = if v == r {
        60.0 * ((g - b) / delta)
    } else if v == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    [if h >= 360.0 { h - 360.0 } else { h }, s, v]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELAB under D65 (white point taken as the image of
/// sRGB white so that white maps to `a = b = 0`).
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let xyz: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| SRGB_TO_XYZ[i][j] * lin[j]).sum());
    let white: [f64; 3] = std::array::from_fn(|i| SRGB_TO_XYZ[i].iter().sum());
    let [fx, fy, fz] = std::array::from_fn(|i| lab_f(xyz[i] / white[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// A single-channel row-major plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!("{} values for a {width}x{height} plane", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Population variance about the plane mean.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

/// Channel mean of an image as a plane.
pub fn intensity(img: &ImageBuffer) -> Plane {
    let ch = img.channels();
    let data = img.data().chunks_exact(ch).map(|p| p.iter().sum::<f64>() / ch as f64).collect();
    Plane { width: img.width(), height: img.height(), data }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with mirrored borders; `sigma = 0` is the identity.
pub fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let k = gaussian_taps(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (p.width, p.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                k.iter().enumerate().map(|(i, kv)| kv * p.data[y * w + mirror(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                k.iter().enumerate().map(|(i, kv)| kv * tmp[mirror(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    Plane { width: w, height: h, data: out }
}

/// Single-scale Retinex on a plane: illumination is the floored intensity
/// blurred with a Gaussian of width `sigma`, reflectance is
/// `log(I + ε) − log(L + ε)` with `ε` = [`RETINEX_FLOOR`].
pub fn retinex_decompose(p: &Plane, sigma: f64) -> (Plane, Plane) {
    let floored = Plane { data: p.data.iter().map(|v| v.max(RETINEX_FLOOR)).collect(), ..p.clone() };
    let illumination = gaussian_blur(&floored, sigma);
    let reflectance = floored
        .data
        .iter()
        .zip(&illumination.data)
        .map(|(i, l)| (i + RETINEX_FLOOR).ln() - (l + RETINEX_FLOOR).ln())
        .collect();
    (illumination, Plane { data: reflectance, ..p.clone() })
}

fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for line in data.chunks_exact_mut(w) {
        row.process(line);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Unnormalized 2-D DFT split into amplitude `|F|` and phase `arg F`.
pub fn fourier_decompose(p: &Plane) -> (Plane, Plane) {
    let mut buf: Vec<Complex64> = p.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, p.width, p.height, false);
    let amp = buf.iter().map(|z| z.norm()).collect();
    let phase = buf.iter().map(|z| if z.norm() == 0.0 { 0.0 } else { z.arg() }).collect();
    (Plane { data: amp, ..p.clone() }, Plane { data: phase, ..p.clone() })
}

/// Inverse of [`fourier_decompose`] (real part).
pub fn fourier_reconstruct(amplitude: &Plane, phase: &Plane) -> Result<Plane> {
    if (amplitude.width, amplitude.height) != (phase.width, phase.height) {
        return Err(Error::ShapeMismatch("amplitude and phase planes differ in size".into()));
    }
    let (w, h) = (amplitude.width, amplitude.height);
    let mut buf: Vec<Complex64> =
        amplitude.data.iter().zip(&phase.data).map(|(&a, &t)| Complex64::from_polar(a, t)).collect();
    fft2(&mut buf, w, h, true);
    let n = (w * h) as f64;
    Ok(Plane { width: w, height: h, data: buf.iter().map(|z| z.re / n).collect() })
}

/// Baseline decomposition methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    YCbCr,
    Hsv,
    Lab,
    Retinex,
    Fourier,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::YCbCr, Method::Hsv, Method::Lab, Method::Retinex, Method::Fourier];

    pub fn name(self) -> &'static str {
        match self {
            Method::YCbCr => "ycbcr",
            Method::Hsv => "hsv",
            Method::Lab => "lab",
            Method::Retinex => "retinex",
            Method::Fourier => "fourier",
        }
    }

    fn component_names(self) -> &'static [&'static str] {
        match self {
            Method::YCbCr => &["Y", "Cb", "Cr"],
            Method::Hsv => &["H", "S", "V"],
            Method::Lab => &["L", "a", "b"],
            Method::Retinex => &["illumination", "reflectance"],
            Method::Fourier => &["amplitude", "phase"],
        }
    }

    fn luminance_index(self) -> usize {
        match self {
            Method::Hsv => 2,
            _ => 0,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL.into_iter().find(|m| m.name() == lower).ok_or_else(|| Error::UnsupportedMethod(s.to_string()))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Named component planes of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub method: Method,
    pub component_names: Vec<String>,
    pub components: Vec<Plane>,
    pub luminance_index: usize,
}

fn pixel(img: &ImageBuffer, i: usize) -> [f64; 3] {
    let d = img.data();
    if img.channels() == 3 {
        [d[3 * i], d[3 * i + 1], d[3 * i + 2]]
    } else {
        [d[i]; 3]
    }
}

fn per_pixel(img: &ImageBuffer, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<Plane> {
    let n = img.pixel_count();
    let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        for (plane, v) in planes.iter_mut().zip(f(pixel(img, i))) {
            plane.push(v);
        }
    }
    planes.into_iter().map(|data| Plane { width: img.width(), height: img.height(), data }).collect()
}

/// Components of `img` in the units used for variance pooling: YCbCr on the
/// 0–255 scale, HSV as `(H/360, S, V)`, raw CIELAB, Retinex illumination
/// (linear) and reflectance (log), Fourier amplitude scaled by `1/√N` and
/// phase in turns.
pub fn decompose_image(method: Method, img: &ImageBuffer) -> Decomposition {
    let components = match method {
        Method::YCbCr => per_pixel(img, |p| rgb_to_ycbcr(p.map(|v| 255.0 * v))),
        Method::Hsv => per_pixel(img, |p| {
            let [h, s, v] = rgb_to_hsv(p);
            [h / 360.0, s, v]
        }),
        Method::Lab => per_pixel(img, rgb_to_lab),
        Method::Retinex => {
            let (l, r) = retinex_decompose(&intensity(img), RETINEX_SIGMA);
            vec![l, r]
        }
        Method::Fourier => {
            let (mut a, mut t) = fourier_decompose(&intensity(img));
            let scale = 1.0 / (a.data.len() as f64).sqrt();
            a.data.iter_mut().for_each(|v| *v *= scale);
            t.data.iter_mut().for_each(|v| *v /= std::f64::consts::TAU);
            vec![a, t]
        }
    };
    Decomposition {
        method,
        component_names: method.component_names().iter().map(|s| s.to_string()).collect(),
        components,
        luminance_index: method.luminance_index(),
    }
}

/// Variance shares of `method`'s components of the display-mapped difference
/// `(D + 1)/2`. Each plane is centered before its variance is taken; the
/// designated luminance component is the principal part.
pub fn baseline_variance_report(method: Method, diff: &DifferenceImage) -> Result<VarianceReport> {
    if diff.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("difference image has non-finite values".into()));
    }
    let dec = decompose_image(method, &diff.to_display());
    let variances: Vec<f64> = dec.components.iter().map(Plane::variance).collect();
    VarianceReport::from_variances(method.name(), dec.component_names, &variances, vec![dec.luminance_index])
}
