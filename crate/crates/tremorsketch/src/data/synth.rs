//! Synthetic spiral/wave sketches for desk-scale runs.
//!
//! Healthy drawings are clean strokes; the parkinson class overlays seeded
//! high-frequency jitter (radial for spirals, vertical for waves) of a given
//! pixel amplitude plus stroke-width irregularity. At amplitude zero both
//! classes follow the same distribution, which serves as a negative control.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imageproc::GrayImage;

use super::{DataError, DrawingType};

const STROKE_WIDTH: f64 = 2.0;
const SPIRAL_TURNS: f64 = 3.0;
const WAVE_CYCLES: f64 = 4.0;

fn per_image_rng(seed: u64, drawing_type: DrawingType, label: usize, index: usize) -> ChaCha8Rng {
    let tag = match drawing_type {
        DrawingType::Spiral => 0x5350u64,
        DrawingType::Wave => 0x5741u64,
    };
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add((label as u64 + 1).wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add((index as u64 + 1).wrapping_mul(0x94d049bb133111eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

fn stamp_disk(img: &mut GrayImage, x: f64, y: f64, radius: f64) {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let r2 = radius * radius;
    let y_lo = (y - radius).floor() as isize;
    let y_hi = (y + radius).ceil() as isize;
    let x_lo = (x - radius).floor() as isize;
    let x_hi = (x + radius).ceil() as isize;
    for py in y_lo.max(0)..=y_hi.min(h - 1) {
        for px in x_lo.max(0)..=x_hi.min(w - 1) {
            let dx = px as f64 - x;
            let dy = py as f64 - y;
            if dx * dx + dy * dy <= r2 {
                img.set(px as usize, py as usize, 0);
            }
        }
    }
}

fn render_spiral(size: usize, tremor: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    let mut img = GrayImage::filled(size, size, 255);
    let s = size as f64;
    let cx = s / 2.0 + rng.gen_range(-2.0..=2.0);
    let cy = s / 2.0 + rng.gen_range(-2.0..=2.0);
    let r_max = 0.40 * s * (1.0 + rng.gen_range(-0.06..=0.06));
    let phase = rng.gen_range(0.0..TAU);
    let theta_max = SPIRAL_TURNS * TAU;
    let growth = r_max / theta_max;
    // Tremor parameters are drawn for both classes; with amplitude zero they
    // leave the stroke untouched, keeping the class distributions identical.
    let tremor_freq = rng.gen_range(16.0..28.0);
    let tremor_phase = rng.gen_range(0.0..TAU);
    let width_freq = rng.gen_range(8.0..16.0);
    let width_phase = rng.gen_range(0.0..TAU);

    let mut theta = 0.0f64;
    while theta <= theta_max {
        let r = growth * theta + tremor * (tremor_freq * theta + tremor_phase).sin();
        let x = cx + r * (theta + phase).cos();
        let y = cy + r * (theta + phase).sin();
        let width = STROKE_WIDTH
            + tremor * 0.3 * (0.5 + 0.5 * (width_freq * theta + width_phase).sin());
        stamp_disk(&mut img, x, y, width / 2.0);
        theta += 0.4 / (growth * theta).max(2.0);
    }
    img
}

fn render_wave(size: usize, tremor: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    let mut img = GrayImage::filled(size, size, 255);
    let s = size as f64;
    let margin = (0.08 * s).max(2.0);
    let span = s - 2.0 * margin;
    let amplitude = 0.20 * s * (1.0 + rng.gen_range(-0.08..=0.08));
    let cy = s / 2.0 + rng.gen_range(-2.0..=2.0);
    let phase = rng.gen_range(0.0..TAU);
    let tremor_freq = rng.gen_range(10.0..18.0);
    let tremor_phase = rng.gen_range(0.0..TAU);
    let width_freq = rng.gen_range(8.0..16.0);
    let width_phase = rng.gen_range(0.0..TAU);

    let mut x = margin;
    while x <= s - margin {
        let u = (x - margin) / span;
        let y = cy
            + amplitude * (TAU * WAVE_CYCLES * u + phase).sin()
            + tremor * (TAU * tremor_freq * u + tremor_phase).sin();
        let width = STROKE_WIDTH
            + tremor * 0.3 * (0.5 + 0.5 * (TAU * width_freq * u + width_phase).sin());
        stamp_disk(&mut img, x, y, width / 2.0);
        x += 0.3;
    }
    img
}

/// Generate `n_per_class` healthy (label 0) plus `n_per_class` parkinson
/// (label 1) sketches of `size` x `size` pixels. Class 1 strokes carry the
/// given jitter amplitude in pixels.
pub fn generate_synthetic_dataset(
    n_per_class: usize,
    drawing_type: DrawingType,
    tremor_amplitude: f64,
    seed: u64,
    size: usize,
) -> Result<Vec<(GrayImage, usize)>, DataError> {
    if n_per_class == 0 {
        return Err(DataError::InvalidParams(
            "n_per_class must be at least 1".into(),
        ));
    }
    if !tremor_amplitude.is_finite() || tremor_amplitude < 0.0 {
        return Err(DataError::InvalidParams(format!(
            "tremor amplitude must be finite and >= 0, got {tremor_amplitude}"
        )));
    }
    if size < 16 {
        return Err(DataError::InvalidParams(format!(
            "image size must be at least 16, got {size}"
        )));
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in 0..2usize {
        let tremor = if label == 1 { tremor_amplitude } else { 0.0 };
        for index in 0..n_per_class {
            let mut rng = per_image_rng(seed, drawing_type, label, index);
            let img = match drawing_type {
                DrawingType::Spiral => render_spiral(size, tremor, &mut rng),
                DrawingType::Wave => render_wave(size, tremor, &mut rng),
            };
            out.push((img, label));
        }
    }
    Ok(out)
}

/// Simple separability statistic: the roughness of the stroke's radial
/// profile in the drawing's natural coordinate. Spirals use the radial
/// envelope about the centroid; waves use the per-column distance of the
/// stroke centerline from its mean height. Clean strokes give smooth
/// profiles; high-frequency jitter raises the value.
pub fn stroke_roughness(img: &GrayImage, drawing_type: DrawingType) -> f64 {
    match drawing_type {
        DrawingType::Spiral => radial_envelope_roughness(img),
        DrawingType::Wave => centerline_roughness(img),
    }
}

/// Mean squared circular second difference of per-angle-bin maximum radius
/// about the dark-pixel centroid.
fn radial_envelope_roughness(img: &GrayImage) -> f64 {
    const BINS: usize = 72;
    let mut xs = 0.0f64;
    let mut ys = 0.0f64;
    let mut n = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < 128 {
                xs += x as f64;
                ys += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    let (cx, cy) = (xs / n as f64, ys / n as f64);
    let mut envelope = vec![f64::NEG_INFINITY; BINS];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) >= 128 {
                continue;
            }
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r = (dx * dx + dy * dy).sqrt();
            let angle = dy.atan2(dx);
            let bin = (((angle + PI) / TAU * BINS as f64) as usize).min(BINS - 1);
            if r > envelope[bin] {
                envelope[bin] = r;
            }
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for b in 0..BINS {
        let prev = envelope[(b + BINS - 1) % BINS];
        let here = envelope[b];
        let next = envelope[(b + 1) % BINS];
        if prev.is_finite() && here.is_finite() && next.is_finite() {
            let d = prev - 2.0 * here + next;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean squared second difference of the per-column stroke centerline height
/// over consecutive populated columns.
fn centerline_roughness(img: &GrayImage) -> f64 {
    let mut columns: Vec<(usize, f64)> = Vec::new();
    for x in 0..img.width() {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for y in 0..img.height() {
            if img.get(x, y) < 128 {
                sum += y as f64;
                n += 1;
            }
        }
        if n > 0 {
            columns.push((x, sum / n as f64));
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for w in columns.windows(3) {
        let [(x0, y0), (x1, y1), (x2, y2)] = [w[0], w[1], w[2]];
        if x1 == x0 + 1 && x2 == x1 + 1 {
            let d = y0 - 2.0 * y1 + y2;
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Best achievable accuracy of a single threshold on a scalar statistic over
/// two labeled groups (both threshold directions are tried).
pub fn best_split_accuracy(class0: &[f64], class1: &[f64]) -> f64 {
    let mut values: Vec<f64> = class0.iter().chain(class1).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let total = (class0.len() + class1.len()) as f64;
    let mut best = 0.0f64;
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(f64::INFINITY);
    for t in candidates {
        let low0 = class0.iter().filter(|&&v| v <= t).count();
        let low1 = class1.iter().filter(|&&v| v <= t).count();
        // class 1 above the threshold, or the inverted rule.
        let acc_up = (low0 + (class1.len() - low1)) as f64 / total;
        let acc_down = ((class0.len() - low0) + low1) as f64 / total;
        best = best.max(acc_up).max(acc_down);
    }
    best
}
