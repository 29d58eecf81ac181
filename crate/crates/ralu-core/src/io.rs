//! File formats: LAT1 latents, binary PGM previews, CSV tables.

use std::path::Path;

use crate::error::{Error, Result};
use crate::latent_grid::{LatentGrid, Level};
use crate::region_select::{EdgeMap, EdgeScoreMap, GrayImage};
use crate::schedule::Density;

const LAT1_MAGIC: &[u8; 4] = b"LAT1";

/// Serializes a grid: magic "LAT1", u32-le height/width/channels/level
/// (0 = LOW, 1 = HIGH), then f32-le values channel-major row-major.
pub fn write_lat1(grid: &LatentGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * grid.values.len());
    out.extend_from_slice(LAT1_MAGIC);
    for v in [grid.height as u32, grid.width as u32, grid.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let level: u32 = match grid.level {
        Level::Low => 0,
        Level::High => 1,
    };
    out.extend_from_slice(&level.to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn read_lat1(bytes: &[u8]) -> Result<LatentGrid> {
    if bytes.len() < 20 {
        return Err(Error::Format("LAT1 payload shorter than its header".into()));
    }
    if &bytes[0..4] != LAT1_MAGIC {
        return Err(Error::Format("bad magic, expected LAT1".into()));
    }
    let word = |i: usize| -> u32 {
        u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]])
    };
    let (height, width, channels) = (word(4) as usize, word(8) as usize, word(12) as usize);
    let level = match word(16) {
        0 => Level::Low,
        1 => Level::High,
        other => return Err(Error::Format(format!("unknown level tag {other}"))),
    };
    let count = height * width * channels;
    if bytes.len() != 20 + 4 * count {
        return Err(Error::Format(format!(
            "expected {} value bytes, got {}",
            4 * count,
            bytes.len() - 20
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let off = 20 + 4 * i;
        let v = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        values.push(f64::from(v));
    }
    LatentGrid::new(height, width, channels, level, values)
}

pub fn write_lat1_file(path: &Path, grid: &LatentGrid) -> Result<()> {
    std::fs::write(path, write_lat1(grid))?;
    Ok(())
}

pub fn read_lat1_file(path: &Path) -> Result<LatentGrid> {
    read_lat1(&std::fs::read(path)?)
}

/// Binary PGM (P5, maxval 255). Pixel values are clamped to [0, 1].
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_pgm_file(path: &Path, image: &GrayImage) -> Result<()> {
    std::fs::write(path, write_pgm(image))?;
    Ok(())
}

/// Renders a binary edge map as a PGM-ready image.
pub fn edge_map_image(edges: &EdgeMap) -> GrayImage {
    GrayImage {
        height: edges.height,
        width: edges.width,
        pixels: edges
            .edges
            .iter()
            .map(|&e| if e { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// CSV of selected patches: `patch_row,patch_col,score`.
pub fn selection_csv(map: &EdgeScoreMap) -> String {
    let mut out = String::from("patch_row,patch_col,score\n");
    for &(r, c) in &map.selected {
        let score = map.scores[r * map.base_width + c];
        out.push_str(&format!("{r},{c},{score}\n"));
    }
    out
}

/// Two-column CSV of a tabulated density: `t,density`.
pub fn density_csv(density: &Density) -> String {
    let mut out = String::from("t,density\n");
    for (t, m) in density.grid.iter().zip(density.masses.iter()) {
        out.push_str(&format!("{t},{m}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lat1_roundtrip_is_exact_for_f32_values() {
        let grid = LatentGrid::from_fn(3, 2, 4, Level::High, |ch, r, c| {
            f64::from((ch as f32) * 0.25 - (r as f32) * 1.5 + (c as f32) * 0.125)
        });
        let bytes = write_lat1(&grid);
        let back = read_lat1(&bytes).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn lat1_rejects_corruption() {
        let grid = LatentGrid::zeros(2, 2, 1, Level::Low);
        let mut bytes = write_lat1(&grid);
        bytes[0] = b'X';
        assert!(matches!(read_lat1(&bytes), Err(Error::Format(_))));
        let bytes = write_lat1(&grid);
        assert!(read_lat1(&bytes[..bytes.len() - 1]).is_err());
        let mut bytes = write_lat1(&grid);
        bytes[16] = 7;
        assert!(read_lat1(&bytes).is_err());
    }

    #[test]
    fn pgm_header_and_payload() {
        let img = GrayImage {
            height: 2,
            width: 3,
            pixels: vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25],
        };
        let bytes = write_pgm(&img);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert_eq!(&bytes[11..], &[0, 128, 255, 255, 0, 64]);
    }

    #[test]
    fn csv_shapes() {
        let map = EdgeScoreMap {
            base_height: 2,
            base_width: 2,
            scores: vec![3.0, 0.0, 1.0, 2.0],
            selected: vec![(0, 0), (1, 1)],
            ratio: 0.5,
        };
        let csv = selection_csv(&map);
        assert_eq!(csv, "patch_row,patch_col,score\n0,0,3\n1,1,2\n");
    }
}
