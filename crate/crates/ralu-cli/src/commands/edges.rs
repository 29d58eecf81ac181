//! `ralu edges`: decode a latent, detect edges and select top-k patches.

use std::path::Path;

use ralu_core::io::{edge_map_image, read_lat1_file, selection_csv, write_pgm_file};
use ralu_core::latent_grid::Level;
use ralu_core::region_select::{canny, patch_scores, select_topk};

use crate::config::{resolve, Overrides};
use crate::CliError;

pub fn run(over: &Overrides, input: Option<&Path>) -> Result<(), CliError> {
    let resolved = resolve(over)?;
    let decoder = super::build_decoder(&resolved)?;

    // Default subject: the low-resolution view of the built-in target mean
    // field, i.e. what a perfectly denoised stage-1 estimate would decode.
    let grid = match input {
        Some(path) => {
            let grid = read_lat1_file(path)?;
            match grid.level {
                Level::Low => grid,
                Level::High => grid.downsample_avg()?,
            }
        }
        None => super::build_model(&resolved)?.target.mu.downsample_avg()?,
    };

    let image = decoder.decode(&grid)?;
    let edges = canny(&image, &resolved.run.canny)?;
    let scores = patch_scores(&edges, grid.height, grid.width, decoder.footprint())?;
    let selection = select_topk(&scores, resolved.run.ratio)?;

    let out = super::ensure_out_dir(&resolved)?;
    write_pgm_file(&out.join("decoded.pgm"), &image)?;
    write_pgm_file(&out.join("edges.pgm"), &edge_map_image(&edges))?;
    super::write_text(&out.join("selection.csv"), &selection_csv(&selection))?;

    println!(
        "edges: {} edge pixels, {} / {} patches selected (ratio {}) -> {}",
        edges.count(),
        selection.selected.len(),
        grid.height * grid.width,
        resolved.run.ratio,
        out.display()
    );
    Ok(())
}
