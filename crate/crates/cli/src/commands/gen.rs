//! `gen`: generate the MDP, target policy, features and topology files.

use std::path::Path;

use anyhow::Result;

use crate::artifacts::{ensure_dir, write_json, write_with};
use crate::commands::common;
use crate::config::{ExperimentConfig, ExperimentKind};

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (base, target) = common::build_mdp(cfg)?;
    let seed = Some(cfg.seed);
    let (mdp, locals) = match cfg.experiment {
        ExperimentKind::RandomMarl => {
            let (global, locals) = common::build_marl_rewards(cfg, &base)?;
            (global, Some(locals))
        }
        _ => (base, None),
    };
    write_with(out, "mdp.json", |w| fdpe::io::save_mdp(&mdp, seed, w))?;
    write_with(out, "target_policy.json", |w| fdpe::io::save_policy(&target, w))?;
    let features = common::build_features(cfg, mdp.num_states())?;
    write_with(out, "features.json", |w| fdpe::io::save_features(&features, w))?;
    let topology = common::build_topology(cfg)?;
    write_with(out, "topology.json", |w| fdpe::io::save_topology(&topology, w))?;
    if let Some(locals) = locals {
        for (k, local) in locals.iter().enumerate() {
            write_with(out, &format!("local_rewards_{k}.json"), |w| {
                fdpe::io::save_mdp(local, seed, w)
            })?;
        }
    }
    write_json(out, "config.json", cfg)?;
    println!("generated MDP (S={}, A={}), features and topology into {}",
        mdp.num_states(), mdp.num_actions(), out.display());
    Ok(())
}
