//! Versioned text serialization for every artifact type plus the CSV
//! emitters used by the experiment harness.
//!
//! Matrix-shaped artifacts (MDPs, policies, features, topologies, estimate
//! sets) are stored as JSON documents with a `schema` tag and flattened
//! row-major `f64` payloads. Datasets use a columnar text format: `#`-prefixed
//! metadata header lines followed by one `t,s,a,r` row per timestep; the
//! policies that generated a dataset are referenced by hash and must be
//! supplied again when loading.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateSet;
use crate::features::FeatureMap;
use crate::mdp::{Mdp, Policy};
use crate::network::{Graph, Topology};
use crate::oracle::{BiasCurve, VarianceCurve};
use crate::sampler::Dataset;
use crate::scalar::{cvt, Scalar};
use crate::solver::Trace;

pub const MDP_SCHEMA: &str = "mdp/v1";
pub const POLICY_SCHEMA: &str = "policy/v1";
pub const FEATURES_SCHEMA: &str = "features/v1";
pub const TOPOLOGY_SCHEMA: &str = "topology/v1";
pub const ESTIMATES_SCHEMA: &str = "estimates/v1";
pub const DATASET_SCHEMA: &str = "dataset/v1";

fn parse_err(what: impl Into<String>) -> Error {
    Error::Parse(what.into())
}

fn json_to_writer<S: Serialize>(value: &S, w: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| parse_err(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

fn json_from_reader<D: for<'de> Deserialize<'de>>(r: &mut dyn BufRead) -> Result<D> {
    serde_json::from_reader(r).map_err(|e| parse_err(e.to_string()))
}

fn require_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(parse_err(format!(
            "schema mismatch: found {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

fn matrix_to_vec<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)].to_f64().unwrap_or(f64::NAN));
        }
    }
    out
}

fn matrix_from_vec<T: Scalar>(data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(parse_err(format!(
            "matrix payload has {} entries, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| cvt(data[r * cols + c])))
}

/// FNV-1a over the little-endian bit patterns of a matrix, used to tie
/// datasets to the policies that generated them.
fn matrix_hash<T: Scalar>(m: &DMatrix<T>) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            for byte in m[(r, c)].to_f64().unwrap_or(f64::NAN).to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
    }
    hash
}

pub fn policy_hash<T: Scalar>(policy: &Policy<T>) -> u64 {
    matrix_hash(policy.probs())
}

#[derive(Serialize, Deserialize)]
struct MdpFile {
    schema: String,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    /// Flattened `[action][state][next_state]`.
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    generator: Option<String>,
    seed: Option<u64>,
}

pub fn save_mdp<T: Scalar>(mdp: &Mdp<T>, seed: Option<u64>, w: &mut dyn Write) -> Result<()> {
    let s = mdp.num_states();
    let mut transitions = Vec::with_capacity(mdp.num_actions() * s * s);
    let mut rewards = Vec::with_capacity(mdp.num_actions() * s * s);
    for a in 0..mdp.num_actions() {
        transitions.extend(matrix_to_vec(mdp.transition(a)));
        rewards.extend(matrix_to_vec(mdp.reward(a)));
    }
    json_to_writer(
        &MdpFile {
            schema: MDP_SCHEMA.into(),
            num_states: s,
            num_actions: mdp.num_actions(),
            gamma: mdp.gamma().to_f64().unwrap_or(f64::NAN),
            transitions,
            rewards,
            generator: seed.map(|_| crate::mdp::GENERATOR_NAME.to_string()),
            seed,
        },
        w,
    )
}

pub fn load_mdp<T: Scalar>(r: &mut dyn BufRead) -> Result<Mdp<T>> {
    let file: MdpFile = json_from_reader(r)?;
    require_schema(&file.schema, MDP_SCHEMA)?;
    let s = file.num_states;
    let per_action = s * s;
    if file.transitions.len() != file.num_actions * per_action
        || file.rewards.len() != file.num_actions * per_action
    {
        return Err(parse_err("tensor payload sizes do not match dimensions"));
    }
    let mut transitions = Vec::with_capacity(file.num_actions);
    let mut rewards = Vec::with_capacity(file.num_actions);
    for a in 0..file.num_actions {
        transitions.push(matrix_from_vec(
            &file.transitions[a * per_action..(a + 1) * per_action],
            s,
            s,
        )?);
        rewards.push(matrix_from_vec(
            &file.rewards[a * per_action..(a + 1) * per_action],
            s,
            s,
        )?);
    }
    Mdp::new(transitions, rewards, cvt(file.gamma))
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    schema: String,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

pub fn save_policy<T: Scalar>(policy: &Policy<T>, w: &mut dyn Write) -> Result<()> {
    json_to_writer(
        &PolicyFile {
            schema: POLICY_SCHEMA.into(),
            num_states: policy.num_states(),
            num_actions: policy.num_actions(),
            probs: matrix_to_vec(policy.probs()),
        },
        w,
    )
}

pub fn load_policy<T: Scalar>(r: &mut dyn BufRead) -> Result<Policy<T>> {
    let file: PolicyFile = json_from_reader(r)?;
    require_schema(&file.schema, POLICY_SCHEMA)?;
    Policy::new(matrix_from_vec(&file.probs, file.num_states, file.num_actions)?)
}

#[derive(Serialize, Deserialize)]
struct FeaturesFile {
    schema: String,
    num_states: usize,
    dim: usize,
    matrix: Vec<f64>,
}

pub fn save_features<T: Scalar>(features: &FeatureMap<T>, w: &mut dyn Write) -> Result<()> {
    json_to_writer(
        &FeaturesFile {
            schema: FEATURES_SCHEMA.into(),
            num_states: features.num_states(),
            dim: features.dim(),
            matrix: matrix_to_vec(features.matrix()),
        },
        w,
    )
}

pub fn load_features<T: Scalar>(r: &mut dyn BufRead) -> Result<FeatureMap<T>> {
    let file: FeaturesFile = json_from_reader(r)?;
    require_schema(&file.schema, FEATURES_SCHEMA)?;
    FeatureMap::new(matrix_from_vec(&file.matrix, file.num_states, file.dim)?)
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    schema: String,
    num_agents: usize,
    /// Flattened row-major adjacency (0/1), diagonal zero.
    adjacency: Vec<u8>,
    combination: Vec<f64>,
    coords: Option<Vec<(f64, f64)>>,
}

pub fn save_topology<T: Scalar>(topology: &Topology<T>, w: &mut dyn Write) -> Result<()> {
    let k = topology.num_agents();
    let mut adjacency = vec![0u8; k * k];
    for a in 0..k {
        for b in 0..k {
            if topology.graph().has_edge(a, b) {
                adjacency[a * k + b] = 1;
            }
        }
    }
    json_to_writer(
        &TopologyFile {
            schema: TOPOLOGY_SCHEMA.into(),
            num_agents: k,
            adjacency,
            combination: matrix_to_vec(topology.combination()),
            coords: topology.coords().map(|c| c.to_vec()),
        },
        w,
    )
}

pub fn load_topology<T: Scalar>(r: &mut dyn BufRead) -> Result<Topology<T>> {
    let file: TopologyFile = json_from_reader(r)?;
    require_schema(&file.schema, TOPOLOGY_SCHEMA)?;
    let k = file.num_agents;
    if file.adjacency.len() != k * k {
        return Err(parse_err("adjacency payload size mismatch"));
    }
    let mut graph = Graph::new(k);
    for a in 0..k {
        for b in a + 1..k {
            if file.adjacency[a * k + b] != 0 {
                graph.add_edge(a, b);
            }
        }
    }
    let combination = matrix_from_vec(&file.combination, k, k)?;
    Topology::from_parts(graph, combination, file.coords)
}

#[derive(Serialize, Deserialize)]
struct EstimatesFile {
    schema: String,
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    u: Vec<f64>,
    n_samples: usize,
    tau: f64,
}

pub fn save_estimates<T: Scalar>(set: &EstimateSet<T>, w: &mut dyn Write) -> Result<()> {
    json_to_writer(
        &EstimatesFile {
            schema: ESTIMATES_SCHEMA.into(),
            dim: set.dim(),
            a: matrix_to_vec(&set.a_hat),
            b: set.b_hat.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            c: matrix_to_vec(&set.c_hat),
            u: matrix_to_vec(&set.u_hat),
            n_samples: set.n_samples,
            tau: set.tau.to_f64().unwrap_or(f64::NAN),
        },
        w,
    )
}

pub fn load_estimates<T: Scalar>(r: &mut dyn BufRead) -> Result<EstimateSet<T>> {
    let file: EstimatesFile = json_from_reader(r)?;
    require_schema(&file.schema, ESTIMATES_SCHEMA)?;
    let m = file.dim;
    if file.b.len() != m {
        return Err(parse_err("b payload size mismatch"));
    }
    Ok(EstimateSet {
        a_hat: matrix_from_vec(&file.a, m, m)?,
        b_hat: DVector::from_fn(m, |i, _| cvt(file.b[i])),
        c_hat: matrix_from_vec(&file.c, m, m)?,
        u_hat: matrix_from_vec(&file.u, m, m)?,
        n_samples: file.n_samples,
        tau: cvt(file.tau),
    })
}

/// Writes a dataset as metadata header lines plus `t,s,a,r` rows.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "# schema {DATASET_SCHEMA}")?;
    writeln!(w, "# generator {}", crate::mdp::GENERATOR_NAME)?;
    if let Some(seed) = dataset.seed() {
        writeln!(w, "# seed {seed}")?;
    }
    writeln!(w, "# n {}", dataset.len())?;
    writeln!(w, "# behavior_hash {:016x}", policy_hash(dataset.behavior()))?;
    writeln!(w, "# target_hash {:016x}", policy_hash(dataset.target()))?;
    writeln!(w, "t,s,a,r")?;
    for t in 0..dataset.len() {
        writeln!(
            w,
            "{t},{},{},{}",
            dataset.states()[t],
            dataset.actions()[t],
            dataset.rewards()[t].to_f64().unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]. The behavior and target
/// policies are external inputs and must match the recorded hashes.
pub fn load_dataset<T: Scalar>(
    r: &mut dyn BufRead,
    behavior: Policy<T>,
    target: Policy<T>,
) -> Result<Dataset<T>> {
    let mut n: Option<usize> = None;
    let mut behavior_hash: Option<u64> = None;
    let mut target_hash: Option<u64> = None;
    let mut schema_seen = false;
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut header_seen = false;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut parts = meta.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("schema"), Some(v)) => {
                    require_schema(v, DATASET_SCHEMA)?;
                    schema_seen = true;
                }
                (Some("n"), Some(v)) => {
                    n = Some(v.parse().map_err(|_| parse_err("bad n header"))?)
                }
                (Some("behavior_hash"), Some(v)) => {
                    behavior_hash =
                        Some(u64::from_str_radix(v, 16).map_err(|_| parse_err("bad hash"))?)
                }
                (Some("target_hash"), Some(v)) => {
                    target_hash =
                        Some(u64::from_str_radix(v, 16).map_err(|_| parse_err("bad hash"))?)
                }
                _ => {}
            }
            continue;
        }
        if !header_seen {
            if line != "t,s,a,r" {
                return Err(parse_err(format!("unexpected column header {line:?}")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("bad row {line:?}")));
        }
        states.push(fields[1].parse().map_err(|_| parse_err("bad state"))?);
        actions.push(fields[2].parse().map_err(|_| parse_err("bad action"))?);
        let r_val: f64 = fields[3].parse().map_err(|_| parse_err("bad reward"))?;
        rewards.push(cvt::<T>(r_val));
    }
    if !schema_seen {
        return Err(parse_err("missing schema header"));
    }
    if let Some(expect) = n {
        if states.len() != expect {
            return Err(parse_err(format!(
                "header declares n = {expect} but {} rows were read",
                states.len()
            )));
        }
    }
    if let Some(h) = behavior_hash {
        if h != policy_hash(&behavior) {
            return Err(parse_err("behavior policy hash mismatch"));
        }
    }
    if let Some(h) = target_hash {
        if h != policy_hash(&target) {
            return Err(parse_err("target policy hash mismatch"));
        }
    }
    Dataset::from_parts(states, actions, rewards, behavior, target)
}

/// Trace CSV: `epoch,agent,emp_error,consensus_gap,msd,grad_evals,comm_rounds`.
/// The `msd` field is empty when no projection target was configured.
pub fn trace_to_csv<T: Scalar>(trace: &Trace<T>, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "epoch,agent,emp_error,consensus_gap,msd,grad_evals,comm_rounds")?;
    for row in &trace.rows {
        let msd = row
            .msd
            .map(|m| m.to_f64().unwrap_or(f64::NAN).to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{msd},{},{}",
            row.epoch,
            row.agent,
            row.emp_error.to_f64().unwrap_or(f64::NAN),
            row.consensus_gap.to_f64().unwrap_or(f64::NAN),
            row.grad_evals,
            row.comm_rounds
        )?;
    }
    Ok(())
}

/// Bias/variance curve CSV:
/// `lambda,exact_bias,approx_bias,empirical_variance,approx_variance`.
/// Variance columns are empty when no variance curve is supplied.
pub fn curves_to_csv<T: Scalar>(
    bias: &BiasCurve<T>,
    variance: Option<&VarianceCurve<T>>,
    w: &mut dyn Write,
) -> Result<()> {
    if let Some(v) = variance {
        if v.lambdas.len() != bias.lambdas.len() {
            return Err(Error::DimensionMismatch(
                "bias and variance curves use different lambda grids".into(),
            ));
        }
    }
    writeln!(w, "lambda,exact_bias,approx_bias,empirical_variance,approx_variance")?;
    for i in 0..bias.lambdas.len() {
        let (ev, av) = match variance {
            Some(v) => (
                v.empirical[i].to_f64().unwrap_or(f64::NAN).to_string(),
                v.approx[i].to_f64().unwrap_or(f64::NAN).to_string(),
            ),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{ev},{av}",
            bias.lambdas[i].to_f64().unwrap_or(f64::NAN),
            bias.exact[i].to_f64().unwrap_or(f64::NAN),
            bias.approx[i].to_f64().unwrap_or(f64::NAN),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{grid_mdp, random_mdp};
    use crate::network::{metropolis, random_geometric, Graph};
    use crate::sampler::collect;

    #[test]
    fn mdp_roundtrip_is_exact() {
        let (mdp, policy) = random_mdp::<f64>(7, 3, 0.4, 0.6, 2.0, 0.93, 5).unwrap();
        let mut buf = Vec::new();
        save_mdp(&mdp, Some(5), &mut buf).unwrap();
        let back: Mdp<f64> = load_mdp(&mut buf.as_slice()).unwrap();
        assert_eq!(mdp, back);

        let mut buf = Vec::new();
        save_policy(&policy, &mut buf).unwrap();
        let back: Policy<f64> = load_policy(&mut buf.as_slice()).unwrap();
        assert_eq!(policy, back);
    }

    #[test]
    fn features_roundtrip() {
        let features = crate::features::random_features::<f64>(12, 4, 9).unwrap();
        let mut buf = Vec::new();
        save_features(&features, &mut buf).unwrap();
        let back: FeatureMap<f64> = load_features(&mut buf.as_slice()).unwrap();
        assert_eq!(features, back);
    }

    #[test]
    fn topology_roundtrip_keeps_weights_and_coords() {
        let topo = random_geometric::<f64>(8, 0.5, 11).unwrap();
        let mut buf = Vec::new();
        save_topology(&topo, &mut buf).unwrap();
        let back: Topology<f64> = load_topology(&mut buf.as_slice()).unwrap();
        assert_eq!(topo.combination(), back.combination());
        assert_eq!(topo.coords(), back.coords());

        let ring = metropolis::<f64>(&Graph::ring(5)).unwrap();
        let mut buf = Vec::new();
        save_topology(&ring, &mut buf).unwrap();
        let back: Topology<f64> = load_topology(&mut buf.as_slice()).unwrap();
        assert_eq!(ring.combination(), back.combination());
    }

    #[test]
    fn dataset_roundtrip_and_hash_guard() {
        let (mdp, policy) = grid_mdp::<f64>(3, 3, 0.9, 13).unwrap();
        let data = collect(&mdp, &policy, &policy, 50, 17).unwrap();
        let mut buf = Vec::new();
        save_dataset(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("# schema dataset/v1"));
        assert!(text.contains("t,s,a,r"));

        let back = load_dataset(&mut buf.as_slice(), policy.clone(), policy.clone()).unwrap();
        assert_eq!(back.states(), data.states());
        assert_eq!(back.actions(), data.actions());
        assert_eq!(back.rewards(), data.rewards());

        // A different policy must be rejected by the hash check.
        let other = Policy::<f64>::uniform(9, 4);
        assert!(load_dataset(&mut buf.as_slice(), other, policy.clone()).is_err());
    }

    #[test]
    fn estimates_roundtrip() {
        let (mdp, policy) = random_mdp::<f64>(6, 2, 0.3, 0.5, 1.0, 0.9, 19).unwrap();
        let data = collect(&mdp, &policy, &policy, 80, 21).unwrap();
        let features = crate::features::random_features::<f64>(6, 3, 23).unwrap();
        let set = crate::estimators::batch_estimates(
            &data,
            &features,
            0.5,
            4,
            0.9,
            0.25,
            crate::estimators::UMode::CHat,
        )
        .unwrap();
        let mut buf = Vec::new();
        save_estimates(&set, &mut buf).unwrap();
        let back: EstimateSet<f64> = load_estimates(&mut buf.as_slice()).unwrap();
        assert_eq!(set, back);
    }
}
