//! Sketch image decoding and preprocessing: grayscale conversion, Otsu
//! binarization, resizing, and rescaling to a unit-range tensor.
//!
//! The pipeline order is fixed as decode -> Otsu -> resize(nearest) ->
//! rescale. Resizing a binary image with nearest-neighbor sampling keeps it
//! binary; bilinear is available for callers that resize before binarizing.

use std::fmt;

use crate::tensor::{Scalar, Tensor};

/// Errors from image decoding and preprocessing.
#[derive(Debug)]
pub enum ImageError {
    /// The byte stream is not a decodable image of a supported format.
    MalformedFile(String),
    /// The format is recognizable but not PNG or JPEG.
    UnsupportedFormat,
    /// An operation requires at least one pixel.
    EmptyImage,
    /// Resize target has a zero extent.
    ZeroDimension,
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::MalformedFile(msg) => write!(f, "malformed image file: {msg}"),
            ImageError::UnsupportedFormat => write!(f, "unsupported image format"),
            ImageError::EmptyImage => write!(f, "image has no pixels"),
            ImageError::ZeroDimension => write!(f, "resize target must be at least 1x1"),
        }
    }
}

impl std::error::Error for ImageError {}

/// Interpolation method for [`resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMethod {
    Nearest,
    Bilinear,
}

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

/// Decode PNG (or JPEG) bytes into a grayscale image. Color images are
/// converted with the BT.601 luma weights 0.299/0.587/0.114, rounded half-up.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let format = image::guess_format(bytes)
        .map_err(|e| ImageError::MalformedFile(e.to_string()))?;
    match format {
        image::ImageFormat::Png | image::ImageFormat::Jpeg => {}
        _ => return Err(ImageError::UnsupportedFormat),
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImageError::MalformedFile(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for p in rgb.pixels() {
        let [r, g, b] = p.0;
        let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        pixels.push((luma + 0.5).floor().min(255.0) as u8);
    }
    Ok(GrayImage::new(w, h, pixels))
}

/// Encode a grayscale image as PNG bytes.
pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        img.pixels(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

/// Otsu's method: the threshold maximizing the between-class variance
/// `w0(t) * w1(t) * (mu0(t) - mu1(t))^2` over the 256-bin histogram, with the
/// low class `<= t`. Ties take the smallest threshold. Returns the threshold
/// and the binarized image (`<= t -> 0`, `> t -> 255`).
pub fn otsu_threshold(img: &GrayImage) -> Result<(u8, GrayImage), ImageError> {
    if img.pixels.is_empty() {
        return Err(ImageError::EmptyImage);
    }
    let mut hist = [0u64; 256];
    for &p in &img.pixels {
        hist[p as usize] += 1;
    }
    let total = img.pixels.len() as f64;
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();

    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    let mut count_low = 0f64;
    let mut sum_low = 0f64;
    for (t, &bin) in hist.iter().enumerate() {
        count_low += bin as f64;
        sum_low += t as f64 * bin as f64;
        let count_high = total - count_low;
        let variance = if count_low == 0.0 || count_high == 0.0 {
            0.0
        } else {
            let w0 = count_low / total;
            let w1 = count_high / total;
            let mu0 = sum_low / count_low;
            let mu1 = (total_sum - sum_low) / count_high;
            w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
        };
        if variance > best_var {
            best_var = variance;
            best_t = t as u8;
        }
    }

    let binary_pixels: Vec<u8> = img
        .pixels
        .iter()
        .map(|&p| if p <= best_t { 0 } else { 255 })
        .collect();
    Ok((
        best_t,
        GrayImage::new(img.width, img.height, binary_pixels),
    ))
}

/// Resize to `out_w x out_h`. Nearest-neighbor uses source index
/// `floor((i + 0.5) * src / dst)`; bilinear uses the align-corners=false
/// convention with results rounded half-up and clamped to `[0, 255]`.
pub fn resize(
    img: &GrayImage,
    out_w: usize,
    out_h: usize,
    method: ResizeMethod,
) -> Result<GrayImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if img.pixels.is_empty() {
        return Err(ImageError::EmptyImage);
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let mut pixels = Vec::with_capacity(out_w * out_h);
    match method {
        ResizeMethod::Nearest => {
            for oy in 0..out_h {
                let sy = ((oy as f64 + 0.5) * img.height as f64 / out_h as f64).floor() as usize;
                let sy = sy.min(img.height - 1);
                for ox in 0..out_w {
                    let sx =
                        ((ox as f64 + 0.5) * img.width as f64 / out_w as f64).floor() as usize;
                    let sx = sx.min(img.width - 1);
                    pixels.push(img.get(sx, sy));
                }
            }
        }
        ResizeMethod::Bilinear => {
            for oy in 0..out_h {
                let sy = (oy as f64 + 0.5) * img.height as f64 / out_h as f64 - 0.5;
                let y0 = sy.floor().max(0.0) as usize;
                let y1 = (y0 + 1).min(img.height - 1);
                let fy = (sy - sy.floor()).clamp(0.0, 1.0);
                let fy = if sy < 0.0 { 0.0 } else { fy };
                for ox in 0..out_w {
                    let sx = (ox as f64 + 0.5) * img.width as f64 / out_w as f64 - 0.5;
                    let x0 = sx.floor().max(0.0) as usize;
                    let x1 = (x0 + 1).min(img.width - 1);
                    let fx = (sx - sx.floor()).clamp(0.0, 1.0);
                    let fx = if sx < 0.0 { 0.0 } else { fx };
                    let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
                    let bottom =
                        img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    pixels.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Ok(GrayImage::new(out_w, out_h, pixels))
}

/// Map intensities into `[0, 1]` by dividing by 255, as a `(1, H, W)` tensor.
pub fn rescale<T: Scalar>(img: &GrayImage) -> Tensor<T> {
    let data: Vec<T> = img
        .pixels
        .iter()
        .map(|&p| T::from(p as f64 / 255.0).expect("in range"))
        .collect();
    Tensor::new(vec![1, img.height, img.width], data).expect("shape matches buffer")
}
