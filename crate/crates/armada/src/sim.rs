//! Multi-seed simulation runs and their summary.

use std::path::Path;

use armada_core::simulator::{regret, simulate_campaign, CampaignTrace, EnvironmentSpec, SimulationConfig};
use armada_core::ArmId;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{allocation_svg, trace_csv, write_file, FormatError};

/// Contents of a `--spec` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub campaign: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Arm with the highest true CTR in the final epoch.
    pub best_arm: ArmId,
    pub best_arm_final_weight: f64,
    pub leader: Option<ArmId>,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: u64,
    pub seeds: Vec<SeedSummary>,
    pub mean_regret: f64,
    pub mean_best_arm_final_weight: f64,
    /// Share of seeds whose best arm ends with at least 0.9 of traffic.
    pub share_best_arm_above_0_9: f64,
}

pub fn summarize_seed(seed: u64, trace: &CampaignTrace) -> SeedSummary {
    let last = trace.records.last().expect("at least one epoch");
    let best_arm = last
        .effective_ctr
        .iter()
        .fold(None::<(&ArmId, f64)>, |best, (a, c)| match best {
            Some((_, bc)) if bc >= *c => best,
            _ => Some((a, *c)),
        })
        .map(|(a, _)| a.clone())
        .expect("at least one arm");
    SeedSummary {
        seed,
        best_arm_final_weight: trace.final_allocation.weight(best_arm.as_str()),
        best_arm,
        leader: trace.final_allocation.leader().cloned(),
        regret: regret(trace),
    }
}

/// Runs the spec once per seed, `base_seed..base_seed + seeds`, in parallel.
pub fn run_seeds(spec: &SimulationSpec, epochs: u64, seeds: u64) -> armada_core::Result<Vec<(u64, CampaignTrace)>> {
    let base = spec.environment.seed;
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let mut env = spec.environment.clone();
            env.seed = base.wrapping_add(i);
            simulate_campaign(&env, &spec.campaign, epochs).map(|t| (env.seed, t))
        })
        .collect()
}

pub fn summarize(epochs: u64, traces: &[(u64, CampaignTrace)]) -> RunSummary {
    let seeds: Vec<SeedSummary> = traces.iter().map(|(s, t)| summarize_seed(*s, t)).collect();
    let n = seeds.len().max(1) as f64;
    RunSummary {
        epochs,
        mean_regret: seeds.iter().map(|s| s.regret).sum::<f64>() / n,
        mean_best_arm_final_weight: seeds.iter().map(|s| s.best_arm_final_weight).sum::<f64>() / n,
        share_best_arm_above_0_9: seeds.iter().filter(|s| s.best_arm_final_weight >= 0.9).count() as f64 / n,
        seeds,
    }
}

/// Writes `trace-seed-<n>.{csv,json,svg}` per seed and `summary.json`.
pub fn write_outputs(out: &Path, epochs: u64, traces: &[(u64, CampaignTrace)]) -> Result<RunSummary, FormatError> {
    for (seed, trace) in traces {
        let stem = out.join(format!("trace-seed-{seed}"));
        write_file(&stem.with_extension("csv"), trace_csv(trace).as_bytes())?;
        let json = serde_json::to_vec_pretty(trace).expect("trace serializes");
        write_file(&stem.with_extension("json"), &json)?;
        let svg = allocation_svg(trace, &format!("allocation, seed {seed}"));
        write_file(&stem.with_extension("svg"), svg.as_bytes())?;
    }
    let summary = summarize(epochs, traces);
    let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write_file(&out.join("summary.json"), &json)?;
    Ok(summary)
}
