//! `ralu cost`: token accounting and the parameterized cost breakdown.

use ralu_core::cost::{estimate_cost, token_counts, token_steps};

use crate::config::{resolve, Overrides};
use crate::CliError;

pub fn run(over: &Overrides) -> Result<(), CliError> {
    let resolved = resolve(over)?;
    let run = &resolved.run;
    if run.stages.len() != 3 {
        return Err(CliError::config(format!(
            "token accounting covers the three-stage pipeline, got {} stages",
            run.stages.len()
        )));
    }
    let caching_ratio = over.caching.or(run.caching.map(|p| p.ratio));
    let counts = token_counts(run.base_height, run.base_width, run.ratio, caching_ratio)?;
    let steps: Vec<u32> = run.stages.iter().map(|s| s.steps).collect();
    let summary = token_steps(
        &steps,
        &counts,
        run.baseline_steps,
        run.base_height,
        run.base_width,
    )?;
    let breakdown = estimate_cost(&steps, &counts, &resolved.cost_model)?;

    let out = super::ensure_out_dir(&resolved)?;
    let mut csv = String::from("stage,steps,tokens,cost,share\n");
    for (count, stage_cost) in counts.iter().zip(breakdown.stages.iter()) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            count.stage, stage_cost.steps, count.tokens, stage_cost.cost, stage_cost.share
        ));
    }
    csv.push_str(&format!(
        "decoder,,,{},{}\n",
        breakdown.decoder_cost, breakdown.decoder_share
    ));
    super::write_text(&out.join("cost.csv"), &csv)?;

    println!(
        "cost: tokens/stage [{}]  token-steps {} ({:.2}x vs {} baseline steps)  total cost {:.4}  decoder share {:.4}%",
        counts.iter().map(|c| c.tokens.to_string()).collect::<Vec<_>>().join(", "),
        summary.total,
        summary.reduction,
        run.baseline_steps,
        breakdown.total,
        breakdown.decoder_share * 100.0
    );
    if let Some(ratio) = caching_ratio {
        let cached: Vec<String> = counts
            .iter()
            .map(|c| {
                c.cached_step_tokens
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into())
            })
            .collect();
        println!(
            "cost: cached-step tokens at ratio {ratio}: [{}]",
            cached.join(", ")
        );
    }
    Ok(())
}
