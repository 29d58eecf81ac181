//! Edge-region scoring and top-k patch selection.
//!
//! At the end of stage 1 the data endpoint is estimated with the one-step
//! extrapolation `x + (1-t) v`, decoded to a grayscale image, and run
//! through Canny edge detection. Patches are scored by the edge pixels in
//! their image footprint and the top fraction is promoted to high
//! resolution early.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_grid::LatentGrid;

pub mod canny;

pub use canny::{canny, CannyParams, EdgeMap};

/// One-step rectified-flow extrapolation to the data endpoint:
/// `x + (1-t) v`. At `t = 1` the state is returned unchanged.
pub fn tweedie_terminal(x: &[f64], t: f64, v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::Shape(format!(
            "value/velocity length mismatch: {} vs {}",
            x.len(),
            v.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    if t == 1.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .zip(v.iter())
        .map(|(&xi, &vi)| xi + (1.0 - t) * vi)
        .collect())
}

/// A grayscale image with values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {}x{} = {} pixels, got {}",
                height,
                width,
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }
}

/// Deterministic latent-to-grayscale decoder standing in for a VAE decoder.
/// Each latent cell maps to an `F x F` pixel footprint.
pub trait Decoder {
    fn footprint(&self) -> usize;
    /// Decodes to an image of shape `(height * F, width * F)` in [0, 1].
    fn decode(&self, grid: &LatentGrid) -> Result<GrayImage>;
}

fn replicate_cells(grid: &LatentGrid, cell_gray: &[f64], footprint: usize) -> GrayImage {
    let (h, w) = (grid.height * footprint, grid.width * footprint);
    let mut pixels = vec![0.0; h * w];
    for r in 0..grid.height {
        for c in 0..grid.width {
            let v = cell_gray[r * grid.width + c];
            for dr in 0..footprint {
                let row = (r * footprint + dr) * w;
                for dc in 0..footprint {
                    pixels[row + c * footprint + dc] = v;
                }
            }
        }
    }
    GrayImage {
        height: h,
        width: w,
        pixels,
    }
}

/// Per-cell channel L2 norm, min-max normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct NormDecoder {
    pub footprint: usize,
}

impl NormDecoder {
    pub fn new(footprint: usize) -> Result<Self> {
        if footprint == 0 {
            return Err(Error::Domain("footprint must be positive".into()));
        }
        Ok(Self { footprint })
    }
}

impl Decoder for NormDecoder {
    fn footprint(&self) -> usize {
        self.footprint
    }

    fn decode(&self, grid: &LatentGrid) -> Result<GrayImage> {
        let cells = grid.height * grid.width;
        let mut gray = vec![0.0; cells];
        for r in 0..grid.height {
            for c in 0..grid.width {
                let mut sq = 0.0;
                for ch in 0..grid.channels {
                    let v = grid.get(ch, r, c);
                    sq += v * v;
                }
                gray[r * grid.width + c] = sq.sqrt();
            }
        }
        let lo = gray.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gray.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for g in &mut gray {
                *g = (*g - lo) / (hi - lo);
            }
        } else {
            gray.fill(0.0);
        }
        Ok(replicate_cells(grid, &gray, self.footprint))
    }
}

/// Affine channel mix `sum_ch w_ch * x_ch + bias`, clamped to [0, 1].
/// The map loads from a one-line CSV: `w_0, ..., w_{C-1}, bias`.
#[derive(Debug, Clone)]
pub struct AffineDecoder {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub footprint: usize,
}

impl AffineDecoder {
    pub fn new(weights: Vec<f64>, bias: f64, footprint: usize) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain(
                "affine decoder needs at least one weight".into(),
            ));
        }
        if footprint == 0 {
            return Err(Error::Domain("footprint must be positive".into()));
        }
        Ok(Self {
            weights,
            bias,
            footprint,
        })
    }

    pub fn from_csv(text: &str, footprint: usize) -> Result<Self> {
        let fields: Vec<f64> = text
            .trim()
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad affine decoder field {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if fields.len() < 2 {
            return Err(Error::Format(
                "affine decoder CSV needs weights and a bias".into(),
            ));
        }
        let bias = fields[fields.len() - 1];
        Self::new(fields[..fields.len() - 1].to_vec(), bias, footprint)
    }
}

impl Decoder for AffineDecoder {
    fn footprint(&self) -> usize {
        self.footprint
    }

    fn decode(&self, grid: &LatentGrid) -> Result<GrayImage> {
        if self.weights.len() != grid.channels {
            return Err(Error::Shape(format!(
                "affine decoder has {} weights for {} channels",
                self.weights.len(),
                grid.channels
            )));
        }
        let mut gray = vec![0.0; grid.height * grid.width];
        for r in 0..grid.height {
            for c in 0..grid.width {
                let mut acc = self.bias;
                for (ch, w) in self.weights.iter().enumerate() {
                    acc += w * grid.get(ch, r, c);
                }
                gray[r * grid.width + c] = acc.clamp(0.0, 1.0);
            }
        }
        Ok(replicate_cells(grid, &gray, self.footprint))
    }
}

/// Per-patch edge-density scores over a low-resolution base grid, plus the
/// selected top-k patches once [`select_topk`] has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScoreMap {
    pub base_height: usize,
    pub base_width: usize,
    /// Edge-pixel count per patch, row-major.
    pub scores: Vec<f64>,
    pub selected: Vec<(usize, usize)>,
    pub ratio: f64,
}

/// Counts edge pixels per `F x F` patch footprint. The edge map must have
/// shape `(base_h * F, base_w * F)`.
pub fn patch_scores(
    edges: &EdgeMap,
    base_height: usize,
    base_width: usize,
    footprint: usize,
) -> Result<EdgeScoreMap> {
    if edges.height != base_height * footprint || edges.width != base_width * footprint {
        return Err(Error::Shape(format!(
            "edge map {}x{} does not cover {}x{} patches at footprint {}",
            edges.height, edges.width, base_height, base_width, footprint
        )));
    }
    let mut scores = vec![0.0; base_height * base_width];
    for r in 0..edges.height {
        for c in 0..edges.width {
            if edges.get(r, c) {
                scores[(r / footprint) * base_width + c / footprint] += 1.0;
            }
        }
    }
    Ok(EdgeScoreMap {
        base_height,
        base_width,
        scores,
        selected: Vec::new(),
        ratio: 0.0,
    })
}

/// Picks the `ceil(ratio * P)` highest-scoring patches, breaking ties by
/// ascending row-major index. The returned map carries the selection.
pub fn select_topk(scores: &EdgeScoreMap, ratio: f64) -> Result<EdgeScoreMap> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!(
            "ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let patches = scores.base_height * scores.base_width;
    let k = (ratio * patches as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..patches).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let selected = order[..k]
        .iter()
        .map(|&p| (p / scores.base_width, p % scores.base_width))
        .collect();
    Ok(EdgeScoreMap {
        selected,
        ratio,
        ..scores.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_grid::Level;
    use approx::assert_relative_eq;

    #[test]
    fn tweedie_basics() {
        let x = [1.0, 2.0];
        let v = [0.5, -0.5];
        let out = tweedie_terminal(&x, 0.6, &v).unwrap();
        assert_relative_eq!(out[0], 1.2);
        assert_relative_eq!(out[1], 1.8);
        assert_eq!(tweedie_terminal(&x, 1.0, &v).unwrap(), x.to_vec());
        let frozen = tweedie_terminal(&x, 0.3, &[0.0, 0.0]).unwrap();
        assert_eq!(frozen, x.to_vec());
        assert!(tweedie_terminal(&x, 0.5, &[1.0]).is_err());
    }

    #[test]
    fn norm_decoder_normalizes_and_replicates() {
        let grid = LatentGrid::new(1, 2, 1, Level::Low, vec![3.0, -1.0]).unwrap();
        let img = NormDecoder::new(2).unwrap().decode(&grid).unwrap();
        assert_eq!((img.height, img.width), (2, 4));
        assert_relative_eq!(img.get(0, 0), 1.0);
        assert_relative_eq!(img.get(1, 1), 1.0);
        assert_relative_eq!(img.get(0, 2), 0.0);
        // constant grid maps to all zeros, not NaN
        let flat = LatentGrid::new(1, 2, 1, Level::Low, vec![2.0, 2.0]).unwrap();
        let img = NormDecoder::new(1).unwrap().decode(&flat).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn affine_decoder_from_csv() {
        let dec = AffineDecoder::from_csv("0.5, -0.25, 0.1\n", 1).unwrap();
        assert_eq!(dec.weights, vec![0.5, -0.25]);
        assert_relative_eq!(dec.bias, 0.1);
        let grid = LatentGrid::new(1, 1, 2, Level::Low, vec![1.0, 2.0]).unwrap();
        let img = dec.decode(&grid).unwrap();
        assert_relative_eq!(img.get(0, 0), 0.1); // 0.5 - 0.5 + 0.1
        assert!(AffineDecoder::from_csv("1.0", 1).is_err());
        // channel mismatch
        let wide = LatentGrid::new(1, 1, 3, Level::Low, vec![0.0; 3]).unwrap();
        assert!(dec.decode(&wide).is_err());
    }

    fn edge_map_from(height: usize, width: usize, on: &[(usize, usize)]) -> EdgeMap {
        let mut edges = vec![false; height * width];
        for &(r, c) in on {
            edges[r * width + c] = true;
        }
        EdgeMap {
            height,
            width,
            edges,
        }
    }

    #[test]
    fn patch_scores_counts_and_conserves() {
        let edges = edge_map_from(4, 4, &[(0, 0), (0, 1), (3, 3)]);
        let map = patch_scores(&edges, 2, 2, 2).unwrap();
        assert_eq!(map.scores, vec![2.0, 0.0, 0.0, 1.0]);
        let total: f64 = map.scores.iter().sum();
        assert_eq!(total, 3.0);
        assert!(patch_scores(&edges, 3, 3, 2).is_err());
    }

    #[test]
    fn topk_sizes_and_ties() {
        let map = EdgeScoreMap {
            base_height: 2,
            base_width: 2,
            scores: vec![1.0, 5.0, 5.0, 0.0],
            selected: Vec::new(),
            ratio: 0.0,
        };
        assert!(select_topk(&map, 0.0).unwrap().selected.is_empty());
        assert_eq!(select_topk(&map, 1.0).unwrap().selected.len(), 4);
        let two = select_topk(&map, 0.5).unwrap();
        // ties between patches 1 and 2 resolve to ascending index order
        assert_eq!(two.selected, vec![(0, 1), (1, 0)]);
        let three = select_topk(&map, 0.6).unwrap();
        assert_eq!(three.selected.len(), 3); // ceil(0.6 * 4)
                                             // selections nest as the ratio grows
        assert!(two.selected.iter().all(|p| three.selected.contains(p)));
    }

    #[test]
    fn paper_topk_count() {
        let map = EdgeScoreMap {
            base_height: 32,
            base_width: 32,
            scores: (0..1024).map(|i| i as f64).collect(),
            selected: Vec::new(),
            ratio: 0.0,
        };
        let sel = select_topk(&map, 0.3).unwrap();
        assert_eq!(sel.selected.len(), 308);
        assert_eq!(1024 + 3 * sel.selected.len(), 1948);
    }
}
