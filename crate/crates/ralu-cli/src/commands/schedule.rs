//! `ralu schedule`: solve the noise-timestep schedule and export it.

use serde::{Deserialize, Serialize};

use ralu_core::io::density_csv;
use ralu_core::schedule::{
    realized_distribution, solve_ntdm_with, target_distribution, SchedulePlan, SolveOptions,
    StageConfig,
};

use crate::config::{resolve, Overrides};
use crate::CliError;

/// The exported schedule: the plan plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub stages_n: Vec<u32>,
    pub stages_e: Vec<f64>,
    pub h_ori: f64,
    pub fixed_c: Option<f64>,
    pub plan: SchedulePlan,
}

pub fn solve_for(
    stages: &[StageConfig],
    h_ori: f64,
    fixed_c: Option<f64>,
) -> Result<SchedulePlan, CliError> {
    if stages.len() < 2 {
        return Err(CliError::config(
            "single-stage configuration: nothing to reschedule".into(),
        ));
    }
    let opts = SolveOptions {
        fixed_c,
        ..SolveOptions::default()
    };
    solve_ntdm_with(stages, h_ori, &opts).map_err(|e| CliError::config(e.to_string()))
}

pub fn run(over: &Overrides) -> Result<(), CliError> {
    let resolved = resolve(over)?;
    let run = &resolved.run;
    let plan = solve_for(&run.stages, run.h_ori, run.c_override)?;

    let out = super::ensure_out_dir(&resolved)?;
    let doc = ScheduleDocument {
        stages_n: run.stages.iter().map(|s| s.steps).collect(),
        stages_e: run.stages.iter().map(|s| s.end).collect(),
        h_ori: run.h_ori,
        fixed_c: run.c_override,
        plan: plan.clone(),
    };
    let text = toml::to_string(&doc)
        .map_err(|e| CliError::io(format!("cannot serialize schedule: {e}")))?;
    super::write_text(&out.join("schedule.toml"), &text)?;

    let target = target_distribution(&run.stages, plan.c, run.h_ori)?;
    let realized = realized_distribution(&plan)?;
    super::write_text(&out.join("target_density.csv"), &density_csv(&target))?;
    super::write_text(&out.join("realized_density.csv"), &density_csv(&realized))?;

    let shifts: Vec<String> = plan
        .stages
        .iter()
        .map(|s| format!("{:.4}", s.shift))
        .collect();
    println!(
        "schedule: h = [{}]  c = {:.4}  jsd = {:.6e}  -> {}",
        shifts.join(", "),
        plan.c,
        plan.jsd,
        out.join("schedule.toml").display()
    );
    if resolved.verbose > 0 {
        for stage in &plan.stages {
            println!(
                "  stage: n = {}  [{:.4}, {:.4}]  h = {:.4}",
                stage.steps, stage.start, stage.end, stage.shift
            );
        }
    }
    Ok(())
}
