//! `collect`: generate per-agent behavior policies and trajectory datasets
//! from previously generated artifact files.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};

use fdpe::mdp::{Mdp, Policy};
use fdpe::sampler::{
    collect_with, grid_partition, marl_reward_streams, restricted_policy, CollectOptions,
    StartState,
};

use crate::artifacts::{ensure_dir, write_with};
use crate::config::{ExperimentConfig, ExperimentKind, DATA_SEED_OFFSET};

pub fn load_json<T>(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufReader<File>) -> fdpe::Result<T>,
) -> Result<T> {
    let path = dir.join(name);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    f(&mut reader).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let mdp: Mdp<f64> = load_json(dir, "mdp.json", |r| fdpe::io::load_mdp(r))?;
    let target: Policy<f64> = load_json(dir, "target_policy.json", |r| fdpe::io::load_policy(r))?;
    let k = cfg.num_agents();
    let n = cfg.data.samples_per_agent;

    match cfg.experiment {
        ExperimentKind::GridPartition => {
            if cfg.mdp.width * cfg.mdp.height != mdp.num_states() {
                bail!("config grid dimensions do not match the stored MDP");
            }
            let regions =
                grid_partition(cfg.mdp.width, cfg.mdp.height, cfg.partition.nx, cfg.partition.ny);
            for (i, region) in regions.iter().enumerate() {
                let behavior = restricted_policy(&target, region, cfg.mdp.width, cfg.mdp.height)?;
                let opts = CollectOptions {
                    burn_in: cfg.data.burn_in,
                    start: StartState::UniformIn(region.iter().copied().collect()),
                    strict_support: false,
                };
                let dataset = collect_with(
                    &mdp,
                    &behavior,
                    &target,
                    n,
                    cfg.seed + DATA_SEED_OFFSET + i as u64,
                    &opts,
                )?;
                write_with(dir, &format!("behavior_policy_{i}.json"), |w| {
                    fdpe::io::save_policy(&behavior, w)
                })?;
                write_with(dir, &format!("dataset_{i}.csv"), |w| {
                    fdpe::io::save_dataset(&dataset, w)
                })?;
            }
        }
        ExperimentKind::RandomMarl => {
            let locals: Vec<Mdp<f64>> = (0..k)
                .map(|i| load_json(dir, &format!("local_rewards_{i}.json"), |r| fdpe::io::load_mdp(r)))
                .collect::<Result<_>>()?;
            let opts = CollectOptions {
                burn_in: cfg.data.burn_in,
                start: StartState::UniformAll,
                strict_support: true,
            };
            let shared = collect_with(&mdp, &target, &target, n, cfg.seed + DATA_SEED_OFFSET, &opts)?;
            let streams = marl_reward_streams(&shared, &locals)?;
            let datasets = fdpe::estimators::marl_preprocess(&shared, &streams)?;
            for (i, dataset) in datasets.iter().enumerate() {
                write_with(dir, &format!("behavior_policy_{i}.json"), |w| {
                    fdpe::io::save_policy(&target, w)
                })?;
                write_with(dir, &format!("dataset_{i}.csv"), |w| {
                    fdpe::io::save_dataset(dataset, w)
                })?;
            }
        }
        ExperimentKind::Custom => {
            let opts = CollectOptions {
                burn_in: cfg.data.burn_in,
                start: StartState::UniformAll,
                strict_support: true,
            };
            for i in 0..k {
                let dataset = collect_with(
                    &mdp,
                    &target,
                    &target,
                    n,
                    cfg.seed + DATA_SEED_OFFSET + i as u64,
                    &opts,
                )?;
                write_with(dir, &format!("behavior_policy_{i}.json"), |w| {
                    fdpe::io::save_policy(&target, w)
                })?;
                write_with(dir, &format!("dataset_{i}.csv"), |w| {
                    fdpe::io::save_dataset(&dataset, w)
                })?;
            }
        }
    }
    println!("collected {k} datasets of {n} transitions into {}", dir.display());
    Ok(())
}
