//! Image buffers, PNG/PNM I/O, exposure differencing and quality metrics.

use std::io::Write as _;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::old::DifferenceDataset;

/// Luma weights applied to RGB before single-channel metrics.
pub const LUMA_WEIGHTS: [f64; 3] = [0.26, 0.50, 0.10];
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Values are clamped to `[0, 1]`; non-finite values are rejected.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image values must be finite".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, channels, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..channels {
                    data.push(f(x, y, ch));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    fn check_same_shape(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Rounds every value to the nearest multiple of 1/255 (half up).
    pub fn quantized(&self) -> ImageBuffer {
        let data = self.data.iter().map(|&v| f64::from(to_u8(v)) / 255.0).collect();
        ImageBuffer { data, ..self.clone() }
    }

    /// One plane per channel, row-major.
    pub fn channel_plane(&self, ch: usize) -> Vec<f64> {
        self.data.iter().skip(ch).step_by(self.channels).copied().collect()
    }

    /// Luma plane `0.26 R + 0.50 G + 0.10 B`; gray images are returned as is.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect()
    }

    pub fn mean_luma(&self) -> f64 {
        self.luma().iter().sum::<f64>() / self.pixel_count() as f64
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Reads an 8-bit PNG or binary PPM/PGM.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let reader = ImageReader::open(path)?.with_guessed_format().map_err(Error::Io)?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{}: {other:?}", path.display()))),
        None => return Err(Error::UnsupportedFormat(format!("{}: unrecognized image format", path.display()))),
    }
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(io),
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(format!("{}: {u}", path.display())),
        other => Error::CorruptFile(format!("{}: {other}", path.display())),
    })?;
    from_dynamic(img, path)
}

fn from_dynamic(img: DynamicImage, path: &Path) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img.color() {
        ColorType::L8 => (1, img.into_luma8().into_raw()),
        ColorType::La8 => (1, img.to_luma8().into_raw()),
        ColorType::Rgb8 => (3, img.into_rgb8().into_raw()),
        ColorType::Rgba8 => (3, img.to_rgb8().into_raw()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: only 8-bit images are supported, got {other:?}",
                path.display()
            )))
        }
    };
    ImageBuffer::new(w, h, channels, bytes.into_iter().map(|b| f64::from(b) / 255.0).collect())
}

/// Writes PNG (`.png`), PPM (`.ppm`, RGB) or PGM (`.pgm`, gray) atomically.
pub fn save_image(buf: &ImageBuffer, path: &Path) -> Result<()> {
    write_atomic(path, &encode_image(buf, path)?)
}

/// Encodes `buf` in the format implied by the extension of `path`.
pub fn encode_image(buf: &ImageBuffer, path: &Path) -> Result<Vec<u8>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let format = match ext.as_deref() {
        Some("png") => ImageFormat::Png,
        Some("ppm") if buf.channels == 3 => ImageFormat::Pnm,
        Some("pgm") if buf.channels == 1 => ImageFormat::Pnm,
        Some("pnm") => ImageFormat::Pnm,
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot write a {}-channel image to {}",
                buf.channels,
                path.display()
            )))
        }
    };
    let bytes: Vec<u8> = buf.data.iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (buf.width as u32, buf.height as u32);
    let img = if buf.channels == 3 {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("length checked"))
    } else {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("length checked"))
    };
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, format).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(out.into_inner())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Per-pixel `gt − input`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DifferenceImage {
    pub fn new(gt: &ImageBuffer, input: &ImageBuffer) -> Result<Self> {
        gt.check_same_shape(input, "difference")?;
        let data = gt.data.iter().zip(&input.data).map(|(g, i)| g - i).collect();
        Ok(Self { width: gt.width, height: gt.height, channels: gt.channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `(D + 1) / 2`, the difference mapped into displayable range.
    pub fn to_display(&self) -> ImageBuffer {
        let data = self.data.iter().map(|d| (d + 1.0) / 2.0).collect();
        ImageBuffer { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Difference vectors: per pixel (`patch = 1`) or stacked from
    /// non-overlapping `patch×patch` tiles.
    pub fn to_dataset(&self, patch: usize) -> Result<DifferenceDataset> {
        let view = ImageBuffer { width: self.width, height: self.height, channels: self.channels, data: Vec::new() };
        DifferenceDataset::new(features_from(&view, &self.data, patch)?)
    }
}

/// Difference dataset of a pair.
pub fn difference(gt: &ImageBuffer, input: &ImageBuffer, patch: usize) -> Result<DifferenceDataset> {
    DifferenceImage::new(gt, input)?.to_dataset(patch)
}

/// Feature dimension for a patch size.
pub fn feature_dim(channels: usize, patch: usize) -> usize {
    channels * patch * patch
}

/// Image values as feature columns, one per pixel or per `patch×patch` tile.
pub fn image_features(img: &ImageBuffer, patch: usize) -> Result<Matrix> {
    features_from(img, &img.data, patch)
}

fn tiles(img: &ImageBuffer, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 {
        return Err(Error::InvalidParameter("patch size must be positive".into()));
    }
    let (tx, ty) = (img.width / patch, img.height / patch);
    if tx == 0 || ty == 0 {
        return Err(Error::TooSmall(format!("{}x{} image has no {patch}x{patch} tile", img.width, img.height)));
    }
    Ok((tx, ty))
}

fn features_from(shape: &ImageBuffer, data: &[f64], patch: usize) -> Result<Matrix> {
    let (tx, ty) = tiles(shape, patch)?;
    let (w, ch) = (shape.width, shape.channels);
    let c = feature_dim(ch, patch);
    let n = tx * ty;
    let mut out = vec![0.0; c * n];
    for t in 0..n {
        let (x0, y0) = ((t % tx) * patch, (t / tx) * patch);
        let mut f = 0;
        for dy in 0..patch {
            for dx in 0..patch {
                let base = ((y0 + dy) * w + x0 + dx) * ch;
                for k in 0..ch {
                    out[f * n + t] = data[base + k];
                    f += 1;
                }
            }
        }
    }
    Matrix::new(c, n, out)
}

/// Writes feature columns back into the tiles of `template`; pixels outside
/// the tiled area keep their values.
pub fn features_to_image(features: &Matrix, template: &ImageBuffer, patch: usize) -> Result<ImageBuffer> {
    let (tx, ty) = tiles(template, patch)?;
    let (w, ch) = (template.width, template.channels);
    if features.shape() != (feature_dim(ch, patch), tx * ty) {
        return Err(Error::ShapeMismatch(format!(
            "features are {}x{}, image needs {}x{}",
            features.rows(),
            features.cols(),
            feature_dim(ch, patch),
            tx * ty
        )));
    }
    let mut data = template.data.clone();
    for t in 0..tx * ty {
        let (x0, y0) = ((t % tx) * patch, (t / tx) * patch);
        let mut f = 0;
        for dy in 0..patch {
            for dx in 0..patch {
                let base = ((y0 + dy) * w + x0 + dx) * ch;
                for k in 0..ch {
                    data[base + k] = features[(f, t)];
                    f += 1;
                }
            }
        }
    }
    ImageBuffer::new(template.width, template.height, ch, data)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// How [`ssim_with`] reduces color images to planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SsimMode {
    /// One luma plane (`0.26 R + 0.50 G + 0.10 B`).
    #[default]
    Luma,
    /// Mean SSIM over the color channels.
    PerChannel,
}

/// Mean SSIM on luma; see [`ssim_with`].
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_with(a, b, SsimMode::Luma)
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03` and dynamic range 1, over window positions fully inside the
/// image.
pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, mode: SsimMode) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let planes: Vec<(Vec<f64>, Vec<f64>)> = match mode {
        SsimMode::Luma => vec![(a.luma(), b.luma())],
        SsimMode::PerChannel => (0..a.channels).map(|c| (a.channel_plane(c), b.channel_plane(c))).collect(),
    };
    let total: f64 = planes.iter().map(|(x, y)| ssim_plane(x, y, a.width, a.height)).sum();
    Ok(total / planes.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable weighted mean over every fully contained window.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let mxx = filter_valid(&prod(x, x), w, h, &k);
    let myy = filter_valid(&prod(y, y), w, h, &k);
    let mxy = filter_valid(&prod(x, y), w, h, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let vxy = mxy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / mx.len() as f64
}

fn histogram(plane: &[f64]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in plane {
        h[to_u8(v) as usize] += 1;
    }
    h
}

/// Mean over channels of the 256-bin normalized histogram intersection
/// `Σ min(h_a, h_b)`.
pub fn histogram_match_score(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.channels != b.channels {
        return Err(Error::ShapeMismatch(format!("histogram: {} vs {} channels", a.channels, b.channels)));
    }
    let (na, nb) = (a.pixel_count() as u128, b.pixel_count() as u128);
    let mut total = 0.0;
    for ch in 0..a.channels {
        let (ha, hb) = (histogram(&a.channel_plane(ch)), histogram(&b.channel_plane(ch)));
        let shared: u128 = ha.iter().zip(&hb).map(|(&x, &y)| (u128::from(x) * nb).min(u128::from(y) * na)).sum();
        total += shared as f64 / (na * nb) as f64;
    }
    Ok(total / a.channels as f64)
}

/// Definition string attached to reported histogram scores.
pub const HIST_MATCH_DEFINITION: &str =
    "mean over channels of sum_i min(h_a[i], h_b[i]) for 256-bin histograms normalized to unit mass";

/// The `{psnr, ssim, hist_match}` document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub hist_match: f64,
}

impl Metrics {
    pub fn compute(a: &ImageBuffer, b: &ImageBuffer) -> Result<Self> {
        Ok(Self { psnr: psnr(a, b)?, ssim: ssim(a, b)?, hist_match: histogram_match_score(a, b)? })
    }

    /// JSON including the definitions behind each number.
    pub fn to_json(&self) -> String {
        let doc = serde_json::json!({
            "psnr": self.psnr,
            "ssim": self.ssim,
            "hist_match": self.hist_match,
            "definitions": {
                "psnr": "10*log10(1/MSE) on [0,1] data, 99 for identical images",
                "ssim": "mean local SSIM on luma 0.26R+0.50G+0.10B, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03, L=1",
                "hist_match": HIST_MATCH_DEFINITION,
            }
        });
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn constant(w: usize, h: usize, ch: usize, v: f64) -> ImageBuffer {
        ImageBuffer::new(w, h, ch, vec![v; w * h * ch]).unwrap()
    }

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 13 + c * 29) % 256) as f64 / 255.0).unwrap()
    }

    #[test]
    fn buffer_validation() {
        assert!(ImageBuffer::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(ImageBuffer::new(1, 1, 2, vec![0.0; 2]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert_eq!(ImageBuffer::new(1, 1, 1, vec![1.5]).unwrap().data(), &[1.0]);
    }

    #[test]
    fn io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp(17, 9);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back, img);
            save_image(&back, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), back);
        }
        let gray = ImageBuffer::from_fn(5, 4, 1, |x, y, _| (x + y) as f64 / 10.0).unwrap().quantized();
        let p = dir.path().join("g.pgm");
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);
        assert!(save_image(&gray, &dir.path().join("g.ppm")).is_err());
        assert!(save_image(&img, &dir.path().join("g.jpg")).is_err());
    }

    #[test]
    fn white_ppm_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ppm");
        std::fs::write(&p, b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn truncated_png_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_image(&ramp(32, 32), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::CorruptFile(_))));
        let q = dir.path().join("x.txt");
        std::fs::write(&q, b"hello").unwrap();
        assert!(matches!(load_image(&q), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(Error::Io(_))));
    }

    #[test]
    fn save_rounds_half_up() {
        assert_eq!(to_u8(0.5 / 255.0), 1);
        assert_eq!(to_u8(127.5 / 255.0), 128);
        assert_eq!(to_u8(0.4 / 255.0), 0);
    }

    #[test]
    fn difference_examples() {
        let a = ramp(4, 3);
        let d = difference(&a, &a, 1).unwrap();
        assert!(d.samples().is_zero());

        let base = constant(4, 3, 3, 0.2);
        let shifted = constant(4, 3, 3, 0.3);
        let d = difference(&shifted, &base, 1).unwrap();
        for v in d.samples().data() {
            assert_abs_diff_eq!(*v, 0.1, epsilon = 1e-15);
        }
        assert!(difference(&a, &constant(3, 3, 3, 0.0), 1).is_err());
    }

    #[test]
    fn patch_features_round_trip() {
        let img = ramp(7, 5);
        let f = image_features(&img, 2).unwrap();
        assert_eq!(f.shape(), (12, 6));
        assert_eq!(f[(0, 1)], img.get(2, 0, 0));
        assert_eq!(f[(3, 0)], img.get(1, 0, 0));
        assert_eq!(features_to_image(&f, &img, 2).unwrap(), img);
        assert!(image_features(&img, 8).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = ramp(8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert_abs_diff_eq!(psnr(&constant(4, 4, 3, 0.0), &constant(4, 4, 3, 1.0)).unwrap(), 0.0);
        let b = constant(4, 4, 3, 0.5);
        let c = constant(4, 4, 3, 0.6);
        assert_abs_diff_eq!(psnr(&b, &c).unwrap(), 20.0, epsilon = 1e-9);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = ramp(16, 12);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim_with(&a, &a, SsimMode::PerChannel).unwrap(), 1.0);
        let c1 = SSIM_K1 * SSIM_K1;
        let expect = (2.0 * 0.3 * 0.7 + c1) / (0.09 + 0.49 + c1);
        let got = ssim(&constant(12, 12, 1, 0.3), &constant(12, 12, 1, 0.7)).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.7242, epsilon = 1e-4);
        assert!(matches!(ssim(&ramp(10, 20), &ramp(10, 20)), Err(Error::TooSmall(_))));
        let b = ramp(16, 12);
        assert!(ssim(&a, &constant(16, 12, 1, 0.0)).is_err());
        assert_abs_diff_eq!(ssim(&a, &b.quantized()).unwrap(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn histogram_examples() {
        let a = ramp(8, 8);
        assert_eq!(histogram_match_score(&a, &a).unwrap(), 1.0);
        assert_eq!(histogram_match_score(&constant(4, 4, 3, 0.0), &constant(4, 4, 3, 1.0)).unwrap(), 0.0);
        let base = constant(4, 4, 1, 0.2);
        let half = ImageBuffer::from_fn(4, 4, 1, |x, _, _| if x < 2 { 0.2 } else { 0.9 }).unwrap();
        assert_abs_diff_eq!(histogram_match_score(&base, &half).unwrap(), 0.5, epsilon = 1e-15);
        assert!(histogram_match_score(&base, &a).is_err());
    }

    #[test]
    fn metrics_document() {
        let a = ramp(12, 12);
        let doc: serde_json::Value = serde_json::from_str(&Metrics::compute(&a, &a).unwrap().to_json()).unwrap();
        assert_eq!(doc["psnr"], 99.0);
        assert_eq!(doc["ssim"], 1.0);
        assert_eq!(doc["hist_match"], 1.0);
    }
}
