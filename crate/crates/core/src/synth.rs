//! Synthetic exposure pairs with known structure.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;

const TINT: [f64; 3] = [1.0, 0.75, 0.5];
const TONE_LO: f64 = 0.05;
const TONE_HI: f64 = 0.7;
const HUE_AMPLITUDE: f64 = 0.02;

/// Warm-tinted smooth texture with a small spatial hue drift, quantized to
/// 8 bits. Used as the ground truth of synthetic pairs.
pub fn synth_base(width: usize, height: usize) -> Result<ImageBuffer> {
    synth_texture(width, height, TINT)
}

/// The texture of [`synth_base`] under an arbitrary channel tint.
pub fn synth_texture(width: usize, height: usize, tint: [f64; 3]) -> Result<ImageBuffer> {
    ImageBuffer::from_fn(width, height, 3, |x, y, ch| {
        let u = x as f64 / width as f64;
        let v = y as f64 / height as f64;
        let s = 0.5 + 0.4 * (6.0 * PI * u).sin() * (4.0 * PI * v).cos() + 0.1 * (22.0 * PI * (u + v)).sin();
        let tone = TONE_LO + (TONE_HI - TONE_LO) * s.clamp(0.0, 1.0);
        let hue = match ch {
            0 => (3.0 * PI * v).sin(),
            1 => (5.0 * PI * u).cos(),
            _ => (2.0 * PI * (u - v)).sin(),
        };
        (tone * (tint[ch] + HUE_AMPLITUDE * hue)).clamp(0.0, 1.0)
    })
    .map(|img| img.quantized())
}

/// Exposure-adjusted copy `clamp(gain · gt^gamma)`, quantized to 8 bits.
pub fn apply_exposure(gt: &ImageBuffer, gain: f64, gamma: f64) -> Result<ImageBuffer> {
    if !(gain.is_finite() && gain > 0.0 && gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gain and gamma must be positive, got {gain}, {gamma}")));
    }
    let data = gt.data().iter().map(|&v| (gain * v.powf(gamma)).clamp(0.0, 1.0)).collect();
    Ok(ImageBuffer::new(gt.width(), gt.height(), gt.channels(), data)?.quantized())
}

/// `(input, gt)` pair: the ground truth from [`synth_base`] and the input
/// from [`apply_exposure`].
pub fn synth_pair(width: usize, height: usize, gain: f64, gamma: f64) -> Result<(ImageBuffer, ImageBuffer)> {
    let gt = synth_base(width, height)?;
    let input = apply_exposure(&gt, gain, gamma)?;
    Ok((input, gt))
}
