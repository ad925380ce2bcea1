//! Trajectory and plot-data exports.
//!
//! Trajectories export as JSONL, one transition per line with a schema
//! version and enough episode metadata to rebuild each trajectory exactly.
//! Plot data exports as one CSV per task family with a `(step, score)`
//! series per episode, ready for external plotting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::EpisodeResult;
use crate::world::{Trajectory, Transition};

use super::EvalError;

pub const EXPORT_SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TransitionLine {
    schema: u32,
    episode: usize,
    family: String,
    variation_id: String,
    description: String,
    seed: u64,
    step: usize,
    #[serde(flatten)]
    transition: Transition,
}

/// Write one JSONL line per transition.
pub fn export_trajectories<W: Write>(results: &[EpisodeResult], mut out: W) -> Result<(), EvalError> {
    for (episode, result) in results.iter().enumerate() {
        for (step, transition) in result.trajectory.transitions.iter().enumerate() {
            let line = TransitionLine {
                schema: EXPORT_SCHEMA,
                episode,
                family: result.trajectory.family.clone(),
                variation_id: result.trajectory.variation_id.clone(),
                description: result.trajectory.description.clone(),
                seed: result.seed,
                step,
                transition: transition.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Rebuild trajectories from an export. Lines must be grouped by episode in
/// step order, exactly as written.
pub fn import_trajectories<R: BufRead>(reader: R) -> Result<Vec<Trajectory>, EvalError> {
    let mut trajectories: Vec<(usize, Trajectory)> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TransitionLine = serde_json::from_str(&line)?;
        match trajectories.last_mut() {
            Some((episode, trajectory)) if *episode == parsed.episode => {
                trajectory.transitions.push(parsed.transition);
            }
            _ => trajectories.push((
                parsed.episode,
                Trajectory {
                    family: parsed.family,
                    variation_id: parsed.variation_id,
                    description: parsed.description,
                    transitions: vec![parsed.transition],
                },
            )),
        }
    }
    Ok(trajectories.into_iter().map(|(_, t)| t).collect())
}

/// One CSV per family under `dir`, each holding the merged
/// `(variation, seed, step, score)` series of that family's episodes.
pub fn emit_plot_data(results: &[EpisodeResult], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut per_family: BTreeMap<&str, String> = BTreeMap::new();
    for result in results {
        let buffer = per_family
            .entry(result.trajectory.family.as_str())
            .or_insert_with(|| "variation,seed,step,score\n".to_string());
        for (step, transition) in result.trajectory.transitions.iter().enumerate() {
            buffer.push_str(&format!(
                "{},{},{},{}\n",
                result.trajectory.variation_id, result.seed, step, transition.score
            ));
        }
    }
    for (family, contents) in per_family {
        std::fs::write(dir.join(format!("{family}.csv")), contents)?;
    }
    Ok(())
}
