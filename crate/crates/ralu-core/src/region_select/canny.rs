//! Canny edge detection: Gaussian blur, Sobel gradients, non-maximum
//! suppression, double-threshold hysteresis. Borders use clamp-to-edge
//! padding throughout, so adding a constant to the image never changes the
//! output.

use crate::error::{Error, Result};
use crate::region_select::GrayImage;

/// Binary edge map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.edges[r * self.width + c]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

/// Detector thresholds on raw Sobel magnitude (image values in [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CannyParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub blur_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low_threshold: 0.1,
            high_threshold: 0.2,
            blur_sigma: 1.4,
        }
    }
}

/// Runs the full detector and returns a binary edge map of the same shape.
pub fn canny(image: &GrayImage, params: &CannyParams) -> Result<EdgeMap> {
    if !(params.low_threshold > 0.0 && params.low_threshold < params.high_threshold) {
        return Err(Error::Domain(format!(
            "thresholds must satisfy 0 < low < high, got ({}, {})",
            params.low_threshold, params.high_threshold
        )));
    }
    if !(params.blur_sigma > 0.0) {
        return Err(Error::Domain("blur sigma must be positive".into()));
    }
    let blurred = gaussian_blur(image, params.blur_sigma);
    let (gx, gy) = sobel(&blurred);
    let magnitude: Vec<f64> = gx
        .iter()
        .zip(gy.iter())
        .map(|(&x, &y)| x.hypot(y))
        .collect();
    let thinned = non_maximum_suppression(&magnitude, &gx, &gy, image.height, image.width);
    Ok(hysteresis(
        &thinned,
        image.height,
        image.width,
        params.low_threshold,
        params.high_threshold,
    ))
}

#[inline]
fn clamp_get(pixels: &[f64], h: usize, w: usize, r: isize, c: isize) -> f64 {
    let r = r.clamp(0, h as isize - 1) as usize;
    let c = c.clamp(0, w as isize - 1) as usize;
    pixels[r * w + c]
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`.
fn gaussian_blur(image: &GrayImage, sigma: f64) -> GrayImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let (h, w) = (image.height, image.width);
    let mut horizontal = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * clamp_get(
                    &image.pixels,
                    h,
                    w,
                    r as isize,
                    c as isize + i as isize - radius,
                );
            }
            horizontal[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * clamp_get(
                    &horizontal,
                    h,
                    w,
                    r as isize + i as isize - radius,
                    c as isize,
                );
            }
            out[r * w + c] = acc;
        }
    }
    GrayImage {
        height: h,
        width: w,
        pixels: out,
    }
}

/// 3x3 Sobel gradients.
fn sobel(image: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (image.height, image.width);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let px = |r: isize, c: isize| clamp_get(&image.pixels, h, w, r, c);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let idx = r as usize * w + c as usize;
            gx[idx] = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            gy[idx] = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
        }
    }
    (gx, gy)
}

/// Keeps a pixel only if its magnitude is a local maximum along the
/// quantized gradient direction.
fn non_maximum_suppression(
    magnitude: &[f64],
    gx: &[f64],
    gy: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mag = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            magnitude[r as usize * w + c as usize]
        }
    };
    for r in 0..h as isize {
        for c in 0..w as isize {
            let idx = r as usize * w + c as usize;
            let m = magnitude[idx];
            if m == 0.0 {
                continue;
            }
            // quantize the gradient direction to 0, 45, 90 or 135 degrees
            let angle = gy[idx].atan2(gx[idx]).to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            let (da, db) = if !(22.5..157.5).contains(&angle) {
                ((0, 1), (0, -1)) // horizontal gradient, vertical edge
            } else if angle < 67.5 {
                ((1, 1), (-1, -1))
            } else if angle < 112.5 {
                ((1, 0), (-1, 0))
            } else {
                ((1, -1), (-1, 1))
            };
            if m >= mag(r + da.0, c + da.1) && m >= mag(r + db.0, c + db.1) {
                out[idx] = m;
            }
        }
    }
    out
}

/// Double-threshold hysteresis: strong pixels seed a flood fill through
/// 8-connected weak pixels.
fn hysteresis(thinned: &[f64], h: usize, w: usize, low: f64, high: f64) -> EdgeMap {
    let mut edges = vec![false; h * w];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if thinned[r * w + c] >= high && !edges[r * w + c] {
                edges[r * w + c] = true;
                stack.push((r, c));
                while let Some((cr, cc)) = stack.pop() {
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let (nr, nc) = (cr as isize + dr, cc as isize + dc);
                            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                                continue;
                            }
                            let nidx = nr as usize * w + nc as usize;
                            if !edges[nidx] && thinned[nidx] >= low {
                                edges[nidx] = true;
                                stack.push((nr as usize, nc as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    EdgeMap {
        height: h,
        width: w,
        edges,
    }
}
