//! `ralu run`: execute the sampler and write latents, previews and the run
//! report.

use ralu_core::io::{selection_csv, write_lat1_file, write_pgm_file};
use ralu_core::pipeline::{run_fullres_baseline, run_ralu_with_plan, solve_plan};

use crate::config::{resolve, Overrides};
use crate::CliError;

pub fn run(over: &Overrides, baseline: bool) -> Result<(), CliError> {
    let resolved = resolve(over)?;
    let model = super::build_model(&resolved)?;
    let decoder = super::build_decoder(&resolved)?;
    let out = super::ensure_out_dir(&resolved)?;

    let (grid, report) = if baseline {
        run_fullres_baseline(&resolved.run, &model)?
    } else {
        let plan = solve_plan(&resolved.run).map_err(|e| CliError::config(e.to_string()))?;
        run_ralu_with_plan(&resolved.run, &plan, &model, decoder.as_ref())?
    };

    write_lat1_file(&out.join("final.lat1"), &grid)?;
    let preview = decoder.decode(&grid)?;
    write_pgm_file(&out.join("final.pgm"), &preview)?;
    if let Some(selection) = &report.selection {
        super::write_text(&out.join("selection.csv"), &selection_csv(selection))?;
    }
    let text = toml::to_string(&report)
        .map_err(|e| CliError::io(format!("cannot serialize report: {e}")))?;
    super::write_text(&out.join("report.toml"), &text)?;

    println!(
        "{}: seed {}  tokens/stage [{}]  token-steps {} ({:.2}x vs baseline)  -> {}",
        report.mode,
        report.seed,
        report
            .stages
            .iter()
            .map(|s| s.tokens.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        report.integration_token_steps,
        report.token_step_reduction,
        out.display()
    );
    if resolved.verbose > 0 {
        for stage in &report.stages {
            println!(
                "  stage {}: {} tokens, {} steps, computed/step {:?}{}",
                stage.stage,
                stage.tokens,
                stage.steps,
                stage.computed_tokens_per_step,
                stage
                    .caching_note
                    .as_deref()
                    .map(|n| format!(" ({n})"))
                    .unwrap_or_default()
            );
        }
    }
    Ok(())
}
