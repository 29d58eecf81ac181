pub mod cost;
pub mod edges;
pub mod run;
pub mod schedule;
pub mod verify;

use std::path::{Path, PathBuf};

use ralu_core::flow::{GaussianModel, GaussianTarget};
use ralu_core::io::read_lat1_file;
use ralu_core::latent_grid::Level;
use ralu_core::region_select::{AffineDecoder, Decoder, NormDecoder};

use crate::config::{DecoderChoice, Resolved};
use crate::CliError;

pub fn ensure_out_dir(resolved: &Resolved) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&resolved.out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", resolved.out_dir.display())))?;
    Ok(resolved.out_dir.clone())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// Builds the Gaussian velocity backend: the mean field comes from
/// `mu_file` when set, otherwise the built-in square field at the
/// configured high resolution.
pub fn build_model(resolved: &Resolved) -> Result<GaussianModel, CliError> {
    let (h, w, ch) = (
        2 * resolved.run.base_height,
        2 * resolved.run.base_width,
        resolved.run.channels,
    );
    let mu = match &resolved.mu_file {
        Some(path) => {
            let grid = read_lat1_file(path)?;
            if grid.level != Level::High
                || grid.height != h
                || grid.width != w
                || grid.channels != ch
            {
                return Err(CliError::config(format!(
                    "mean field {} must be a HIGH {}x{}x{} latent",
                    path.display(),
                    h,
                    w,
                    ch
                )));
            }
            grid
        }
        None => GaussianTarget::square_field(h, w, ch),
    };
    let target = GaussianTarget::new(mu, resolved.sigma)?;
    Ok(GaussianModel::new(target))
}

pub fn build_decoder(resolved: &Resolved) -> Result<Box<dyn Decoder>, CliError> {
    match &resolved.decoder {
        DecoderChoice::Norm => Ok(Box::new(NormDecoder::new(resolved.run.footprint)?)),
        DecoderChoice::Affine(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
            Ok(Box::new(AffineDecoder::from_csv(
                &text,
                resolved.run.footprint,
            )?))
        }
    }
}
