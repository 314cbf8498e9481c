//! Spec files: parse, validate, expand search spaces, serialize, and
//! derive deterministic seeds for the Session/Trial/Experiment hierarchy.
//!
//! A spec file is a JSON document with five top-level entries (agent, env,
//! body, meta, search) that fully determines a run. Parsing materializes
//! every default and serialization writes them all back, so a stored spec
//! alone reproduces the run. Serialization is key-sorted with shortest
//! round-trip float formatting, making serialized forms byte-comparable.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{AgentSpec, AlgorithmName, ExploreSpec};
use crate::envs::{env_info, EnvSpec};
use crate::error::{Error, Result};
use crate::memory::MemoryKind;

/// How agents connect to environments. Only the single 1-to-1 mapping is
/// accepted; the key exists so spec files keep the full schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    #[serde(default)]
    pub agent: usize,
    #[serde(default)]
    pub env: usize,
}

impl Default for BodySpec {
    fn default() -> Self {
        BodySpec { agent: 0, env: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributedMode {
    None,
    Hogwild,
    ServerWorker,
}

/// High-level run configuration: trial/session counts, seeding, and the
/// evaluation/logging/checkpoint cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSpec {
    pub num_trials: usize,
    pub num_sessions: usize,
    pub base_seed: u64,
    /// Frames between checkpoint evaluations.
    pub eval_frequency: u64,
    #[serde(default = "default_log_frequency")]
    pub log_frequency: u64,
    #[serde(default = "default_distributed")]
    pub distributed: DistributedMode,
    #[serde(default = "default_checkpoint_frequency")]
    pub checkpoint_frequency: u64,
    /// Episodes per checkpoint evaluation.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Training steps between gradient pushes in server-worker mode.
    #[serde(default = "default_push_frequency")]
    pub push_frequency: u64,
}

fn default_log_frequency() -> u64 {
    10_000
}
fn default_distributed() -> DistributedMode {
    DistributedMode::None
}
fn default_checkpoint_frequency() -> u64 {
    100_000
}
fn default_eval_episodes() -> usize {
    4
}
fn default_push_frequency() -> u64 {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// Enumerate every listed value (Cartesian across grid entries).
    Grid,
    /// Uniform random pick from the listed values.
    Choice,
    Uniform,
    Loguniform,
    Randint,
}

impl SearchMethod {
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, SearchMethod::Grid)
    }
}

/// One searched variable: a dotted path into the spec plus a sampling
/// method and its arguments (a value list for grid/choice, [lo, hi]
/// bounds otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchEntry {
    pub path: String,
    pub method: SearchMethod,
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub entries: Vec<SearchEntry>,
}

/// The complete declarative description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spec {
    pub agent: Vec<AgentSpec>,
    pub env: Vec<EnvSpec>,
    #[serde(default)]
    pub body: BodySpec,
    pub meta: MetaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpace>,
    /// Parent search values this spec was expanded from, keyed by path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<BTreeMap<String, Value>>,
}

impl Spec {
    pub fn agent_spec(&self) -> &AgentSpec {
        &self.agent[0]
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env[0]
    }
}

/// Parse a spec document. All defaults are materialized; unknown keys are
/// rejected with the offending name; syntax errors report line/column.
pub fn parse_spec(text: &str) -> Result<Spec> {
    serde_json::from_str(text).map_err(|e| Error::SpecParse(e.to_string()))
}

pub fn load_spec_file(path: &Path) -> Result<Spec> {
    let text = std::fs::read_to_string(path)?;
    parse_spec(&text)
}

/// Key-sorted serialization with every materialized default written back.
pub fn serialize_spec(spec: &Spec) -> Result<String> {
    // Value maps are BTreeMaps, so object keys come out sorted.
    let value = serde_json::to_value(spec)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

/// Check all type invariants plus cross-field rules. Violations are the
/// return value; an empty list means the spec is valid.
pub fn validate_spec(spec: &Spec) -> Vec<String> {
    let mut v = Vec::new();
    let mut push = |cond: bool, msg: String| {
        if !cond {
            v.push(msg);
        }
    };

    push(
        spec.agent.len() == 1,
        format!("exactly one agent entry accepted, got {}", spec.agent.len()),
    );
    push(
        spec.env.len() == 1,
        format!("exactly one env entry accepted, got {}", spec.env.len()),
    );
    push(
        spec.body.agent == 0 && spec.body.env == 0,
        "body must map agent 0 to env 0".into(),
    );

    let meta = &spec.meta;
    push(meta.num_trials >= 1, "meta.num_trials must be >= 1".into());
    push(meta.num_sessions >= 1, "meta.num_sessions must be >= 1".into());
    push(meta.eval_frequency >= 1, "meta.eval_frequency must be >= 1".into());
    push(meta.log_frequency >= 1, "meta.log_frequency must be >= 1".into());
    push(
        meta.checkpoint_frequency >= 1,
        "meta.checkpoint_frequency must be >= 1".into(),
    );
    push(meta.eval_episodes >= 1, "meta.eval_episodes must be >= 1".into());
    push(meta.push_frequency >= 1, "meta.push_frequency must be >= 1".into());

    let (agent, env) = match (spec.agent.first(), spec.env.first()) {
        (Some(a), Some(e)) => (a, e),
        _ => return v,
    };

    let alg = &agent.algorithm;
    push(
        (0.0..=1.0).contains(&alg.gamma),
        format!("algorithm.gamma out of [0,1]: {}", alg.gamma),
    );
    push(
        (0.0..=1.0).contains(&alg.lam),
        format!("algorithm.lam out of [0,1]: {}", alg.lam),
    );
    push(alg.num_step_returns >= 1, "algorithm.num_step_returns must be >= 1".into());
    push(alg.clip_eps > 0.0, "algorithm.clip_eps must be > 0".into());
    push(alg.sac_alpha >= 0.0, "algorithm.sac_alpha must be >= 0".into());
    push(alg.gumbel_tau > 0.0, "algorithm.gumbel_tau must be > 0".into());
    push(alg.ppo_epochs >= 1, "algorithm.ppo_epochs must be >= 1".into());
    push(alg.ppo_minibatches >= 1, "algorithm.ppo_minibatches must be >= 1".into());
    push(
        alg.training_frequency >= 1,
        "algorithm.training_frequency must be >= 1".into(),
    );
    match &alg.explore_spec {
        ExploreSpec::EpsilonGreedy {
            epsilon_start,
            epsilon_end,
            ..
        } => {
            push(
                (0.0..=1.0).contains(epsilon_start) && (0.0..=1.0).contains(epsilon_end),
                "explore_spec epsilon bounds out of [0,1]".into(),
            );
        }
        ExploreSpec::Boltzmann {
            temperature_start,
            temperature_end,
            ..
        } => {
            push(
                *temperature_start > 0.0 && *temperature_end > 0.0,
                "explore_spec temperatures must be > 0".into(),
            );
        }
    }

    let mem = &agent.memory;
    push(mem.batch_size >= 1, "memory.batch_size must be >= 1".into());
    push(
        mem.max_size >= mem.batch_size,
        format!(
            "memory.max_size {} must be >= batch_size {}",
            mem.max_size, mem.batch_size
        ),
    );
    push(mem.per_alpha >= 0.0, "memory.per_alpha must be >= 0".into());
    push(
        (0.0..=1.0).contains(&mem.per_beta_start) && (0.0..=1.0).contains(&mem.per_beta_end),
        "memory per_beta bounds out of [0,1]".into(),
    );
    push(mem.per_epsilon > 0.0, "memory.per_epsilon must be > 0".into());

    // memory/algorithm compatibility
    match alg.name {
        n if n.is_on_policy() => push(
            mem.name == MemoryKind::Onpolicy,
            format!(
                "on-policy algorithm {} requires onpolicy memory, got {:?}",
                n.as_str(),
                mem.name
            ),
        ),
        AlgorithmName::Sac => push(
            mem.name == MemoryKind::Replay,
            "sac requires replay memory".into(),
        ),
        _ => push(
            matches!(mem.name, MemoryKind::Replay | MemoryKind::PrioritizedReplay),
            format!(
                "{} requires replay or prioritized_replay memory",
                alg.name.as_str()
            ),
        ),
    }
    if mem.name == MemoryKind::PrioritizedReplay {
        push(
            matches!(alg.name, AlgorithmName::Dqn | AlgorithmName::DdqnPer),
            "prioritized_replay memory requires the dqn or ddqn_per algorithm".into(),
        );
    }

    let net = &agent.net;
    push(
        net.hid_layers.iter().all(|&w| w >= 1),
        "net.hid_layers widths must be >= 1".into(),
    );
    push(net.lr > 0.0, "net.lr must be > 0".into());
    push(
        (0.0..=1.0).contains(&net.polyak_tau),
        format!("net.polyak_tau out of [0,1]: {}", net.polyak_tau),
    );
    push(net.huber_delta > 0.0, "net.huber_delta must be > 0".into());
    push(net.update_frequency >= 1, "net.update_frequency must be >= 1".into());
    push(
        net.adam_beta1 > 0.0 && net.adam_beta1 < 1.0 && net.adam_beta2 > 0.0 && net.adam_beta2 < 1.0,
        "net adam betas must lie in (0,1)".into(),
    );
    push(net.adam_eps > 0.0, "net.adam_eps must be > 0".into());
    if let Some(c) = net.grad_clip_norm {
        push(c > 0.0, "net.grad_clip_norm must be > 0".into());
    }
    if let Some(heads) = &net.out_heads {
        push(
            heads.iter().all(|h| h.width >= 1),
            "net.out_heads widths must be >= 1".into(),
        );
    }

    push(env.num_envs >= 1, "env.num_envs must be >= 1".into());
    push(
        env.max_episode_steps >= 1,
        "env.max_episode_steps must be >= 1".into(),
    );
    if let Some(c) = &env.reward_clip {
        push(c.lo <= c.hi, "env.reward_clip lo must be <= hi".into());
    }
    match env_info(&env.name) {
        None => push(false, format!("unknown environment '{}'", env.name)),
        Some((_, action_space)) => {
            if matches!(alg.name, AlgorithmName::Dqn | AlgorithmName::DdqnPer) {
                push(
                    action_space.is_discrete(),
                    format!("{} requires a discrete-action env", alg.name.as_str()),
                );
            }
        }
    }
    if alg.name == AlgorithmName::Reinforce {
        push(
            env.num_envs == 1,
            "reinforce trains on whole episodes and requires num_envs = 1".into(),
        );
    }

    if let Some(search) = &spec.search {
        let root = serde_json::to_value(spec).expect("spec serializes");
        for entry in &search.entries {
            if path_get(&root, &entry.path).is_none() {
                push(false, format!("search path '{}' does not resolve", entry.path));
            }
            match entry.method {
                SearchMethod::Grid | SearchMethod::Choice => {
                    let ok = entry.args.as_array().map(|a| !a.is_empty()).unwrap_or(false);
                    push(
                        ok,
                        format!("search entry '{}' needs a non-empty value list", entry.path),
                    );
                }
                SearchMethod::Uniform | SearchMethod::Loguniform => {
                    match bounds_f64(&entry.args) {
                        Some((lo, hi)) => {
                            push(
                                lo < hi,
                                format!("search entry '{}' needs lo < hi", entry.path),
                            );
                            if entry.method == SearchMethod::Loguniform {
                                push(
                                    lo > 0.0,
                                    format!("search entry '{}' loguniform bounds must be > 0", entry.path),
                                );
                            }
                        }
                        None => push(
                            false,
                            format!("search entry '{}' needs [lo, hi] args", entry.path),
                        ),
                    }
                }
                SearchMethod::Randint => match bounds_i64(&entry.args) {
                    Some((lo, hi)) => push(
                        lo < hi,
                        format!("search entry '{}' needs lo < hi", entry.path),
                    ),
                    None => push(
                        false,
                        format!("search entry '{}' needs integer [lo, hi] args", entry.path),
                    ),
                },
            }
        }
    }

    v
}

fn bounds_f64(args: &Value) -> Option<(f64, f64)> {
    let a = args.as_array()?;
    if a.len() != 2 {
        return None;
    }
    Some((a[0].as_f64()?, a[1].as_f64()?))
}

fn bounds_i64(args: &Value) -> Option<(i64, i64)> {
    let a = args.as_array()?;
    if a.len() != 2 {
        return None;
    }
    Some((a[0].as_i64()?, a[1].as_i64()?))
}

/// Resolve a dotted path ("agent.0.algorithm.gamma"); numeric segments
/// index into arrays.
pub fn path_get<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = root;
    for seg in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get(seg)?,
            Value::Array(arr) => arr.get(seg.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn path_set(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cur = root;
    let segs: Vec<&str> = path.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        match cur {
            Value::Object(map) => {
                let slot = map
                    .get_mut(*seg)
                    .ok_or_else(|| Error::Search(format!("path '{path}' does not resolve at '{seg}'")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                cur = slot;
            }
            Value::Array(arr) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Search(format!("path '{path}': '{seg}' is not an index")))?;
                let slot = arr
                    .get_mut(idx)
                    .ok_or_else(|| Error::Search(format!("path '{path}': index {idx} out of range")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                cur = slot;
            }
            _ => return Err(Error::Search(format!("path '{path}' hits a scalar at '{seg}'"))),
        }
    }
    Err(Error::Search(format!("empty path '{path}'")))
}

/// Expand the search space into self-contained specs.
///
/// Grid entries enumerate their Cartesian product; an error is reported if
/// the product alone exceeds the budget. When stochastic entries are
/// present, each grid point receives `max(1, budget / grid_product)`
/// sampled variants, keeping the total within the budget. Every returned
/// spec has the search section removed, values substituted at their paths,
/// and the sampled values recorded in its provenance field.
pub fn expand_search<R: Rng>(spec: &Spec, budget: usize, rng: &mut R) -> Result<Vec<Spec>> {
    let search = spec
        .search
        .as_ref()
        .ok_or_else(|| Error::Search("spec has no search section".into()))?;
    assert!(budget >= 1);
    let grid_entries: Vec<&SearchEntry> = search
        .entries
        .iter()
        .filter(|e| !e.method.is_stochastic())
        .collect();
    let stochastic: Vec<&SearchEntry> = search
        .entries
        .iter()
        .filter(|e| e.method.is_stochastic())
        .collect();

    let mut grid_product = 1usize;
    for e in &grid_entries {
        let len = e
            .args
            .as_array()
            .map(|a| a.len())
            .ok_or_else(|| Error::Search(format!("grid entry '{}' needs a value list", e.path)))?;
        if len == 0 {
            return Err(Error::Search(format!("grid entry '{}' has no values", e.path)));
        }
        grid_product = grid_product.saturating_mul(len);
    }
    if grid_product > budget {
        return Err(Error::Search(format!(
            "grid product {grid_product} exceeds budget {budget}"
        )));
    }
    let samples_per_point = if stochastic.is_empty() {
        1
    } else {
        (budget / grid_product).max(1)
    };

    let base = {
        let mut s = spec.clone();
        s.search = None;
        s.provenance = None;
        serde_json::to_value(&s)?
    };

    let mut out = Vec::with_capacity(grid_product * samples_per_point);
    let mut grid_idx = vec![0usize; grid_entries.len()];
    loop {
        for _ in 0..samples_per_point {
            let mut value = base.clone();
            let mut provenance = BTreeMap::new();
            for (e, &vi) in grid_entries.iter().zip(&grid_idx) {
                let v = e.args.as_array().unwrap()[vi].clone();
                path_set(&mut value, &e.path, v.clone())?;
                provenance.insert(e.path.clone(), v);
            }
            for e in &stochastic {
                let v = sample_entry(e, rng)?;
                path_set(&mut value, &e.path, v.clone())?;
                provenance.insert(e.path.clone(), v);
            }
            let mut child: Spec = serde_json::from_value(value)
                .map_err(|err| Error::Search(format!("substituted spec no longer parses: {err}")))?;
            child.provenance = Some(provenance);
            out.push(child);
        }
        // advance the mixed-radix grid counter
        let mut pos = 0;
        loop {
            if pos == grid_entries.len() {
                return Ok(out);
            }
            grid_idx[pos] += 1;
            if grid_idx[pos] < grid_entries[pos].args.as_array().unwrap().len() {
                break;
            }
            grid_idx[pos] = 0;
            pos += 1;
        }
    }
}

fn sample_entry<R: Rng>(e: &SearchEntry, rng: &mut R) -> Result<Value> {
    match e.method {
        SearchMethod::Grid => unreachable!(),
        SearchMethod::Choice => {
            let list = e
                .args
                .as_array()
                .filter(|a| !a.is_empty())
                .ok_or_else(|| Error::Search(format!("choice entry '{}' needs values", e.path)))?;
            Ok(list[rng.random_range(0..list.len())].clone())
        }
        SearchMethod::Uniform => {
            let (lo, hi) = bounds_f64(&e.args)
                .ok_or_else(|| Error::Search(format!("uniform entry '{}' needs [lo, hi]", e.path)))?;
            Ok(json_f64(rng.random_range(lo..hi)))
        }
        SearchMethod::Loguniform => {
            let (lo, hi) = bounds_f64(&e.args)
                .ok_or_else(|| Error::Search(format!("loguniform entry '{}' needs [lo, hi]", e.path)))?;
            if lo <= 0.0 {
                return Err(Error::Search(format!(
                    "loguniform entry '{}' bounds must be > 0",
                    e.path
                )));
            }
            Ok(json_f64((rng.random_range(lo.ln()..hi.ln())).exp()))
        }
        SearchMethod::Randint => {
            let (lo, hi) = bounds_i64(&e.args)
                .ok_or_else(|| Error::Search(format!("randint entry '{}' needs [lo, hi]", e.path)))?;
            Ok(Value::from(rng.random_range(lo..hi)))
        }
    }
}

fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

const MIX_1: u64 = 0xBF58476D1CE4E5B9;
const MIX_2: u64 = 0x94D049BB133111EB;
const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// 64-bit avalanche finalizer (splitmix-style).
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(MIX_1);
    z ^= z >> 27;
    z = z.wrapping_mul(MIX_2);
    z ^= z >> 31;
    z
}

/// Deterministic, collision-free (over desk-scale grids) session seed from
/// the (base_seed, trial, session) triple.
pub fn derive_seed(base_seed: u64, trial_idx: u64, session_idx: u64) -> u64 {
    let mut h = mix(base_seed.wrapping_add(GOLDEN));
    h = mix(h ^ mix(trial_idx.wrapping_add(0xA0761D6478BD642F)));
    h = mix(h ^ mix(session_idx.wrapping_add(0xE7037ED1A0B428DB)));
    h
}

/// Independent named rng stream from a session seed.
pub fn derive_stream(seed: u64, stream_id: u64) -> u64 {
    mix(seed ^ mix(stream_id.wrapping_add(GOLDEN)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn minimal_spec_json() -> String {
        r#"{
            "agent": [{
                "algorithm": {"name": "a2c_gae", "gamma": 0.99, "training_frequency": 32},
                "memory": {"name": "onpolicy", "max_size": 512, "batch_size": 32},
                "net": {"hid_layers": [16], "activation": "relu", "optimizer": "adam", "lr": 0.001}
            }],
            "env": [{"name": "cartpole", "max_frame": 1000}],
            "body": {"agent": 0, "env": 0},
            "meta": {"num_trials": 1, "num_sessions": 2, "base_seed": 42, "eval_frequency": 500}
        }"#
        .to_string()
    }

    #[test]
    fn parse_minimal_spec_materializes_defaults() {
        let spec = parse_spec(&minimal_spec_json()).unwrap();
        assert_eq!(spec.agent.len(), 1);
        assert_eq!(spec.env[0].name, "cartpole");
        assert!(spec.search.is_none());
        // defaults materialized
        assert_eq!(spec.agent[0].algorithm.lam, 0.95);
        assert_eq!(spec.meta.eval_episodes, 4);
        assert_eq!(spec.env[0].max_episode_steps, 500);
        // and written back on serialization
        let text = serialize_spec(&spec).unwrap();
        assert!(text.contains("\"lam\""));
        assert!(text.contains("\"eval_episodes\""));
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = minimal_spec_json().replace("\"agent\"", "\"agnet\"");
        let err = parse_spec(&text).unwrap_err();
        assert!(err.to_string().contains("agnet"), "{err}");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_spec("{ \"agent\": [ }").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line") || msg.contains("column"), "{msg}");
    }

    #[test]
    fn round_trip_is_structurally_identical_and_byte_stable() {
        let spec = parse_spec(&minimal_spec_json()).unwrap();
        let text = serialize_spec(&spec).unwrap();
        let spec2 = parse_spec(&text).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(text, serialize_spec(&spec2).unwrap());
    }

    #[test]
    fn validate_flags_gamma_out_of_range() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.agent[0].algorithm.gamma = 1.5;
        let violations = validate_spec(&spec);
        assert!(violations.iter().any(|v| v.contains("gamma")), "{violations:?}");
    }

    #[test]
    fn validate_flags_on_policy_with_prioritized_replay() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.agent[0].memory.name = MemoryKind::PrioritizedReplay;
        let violations = validate_spec(&spec);
        assert!(
            violations.iter().any(|v| v.contains("onpolicy memory")),
            "{violations:?}"
        );
    }

    #[test]
    fn validate_accepts_minimal_spec() {
        let spec = parse_spec(&minimal_spec_json()).unwrap();
        assert!(validate_spec(&spec).is_empty());
    }

    #[test]
    fn expand_grid_enumerates() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.search = Some(SearchSpace {
            entries: vec![SearchEntry {
                path: "agent.0.net.lr".into(),
                method: SearchMethod::Grid,
                args: serde_json::json!([1e-3, 1e-4]),
            }],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = expand_search(&spec, 8, &mut rng).unwrap();
        assert_eq!(out.len(), 2);
        let lrs: Vec<f64> = out.iter().map(|s| s.agent[0].net.lr).collect();
        assert_eq!(lrs, vec![1e-3, 1e-4]);
        assert!(out.iter().all(|s| s.search.is_none()));
        assert!(out.iter().all(|s| s.provenance.is_some()));
        assert!(out.iter().all(|s| validate_spec(s).is_empty()));
    }

    #[test]
    fn expand_loguniform_stays_in_bounds() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.search = Some(SearchSpace {
            entries: vec![SearchEntry {
                path: "agent.0.net.lr".into(),
                method: SearchMethod::Loguniform,
                args: serde_json::json!([1e-5, 1e-2]),
            }],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = expand_search(&spec, 8, &mut rng).unwrap();
        assert_eq!(out.len(), 8);
        for s in &out {
            let lr = s.agent[0].net.lr;
            assert!((1e-5..=1e-2).contains(&lr), "lr {lr}");
        }
    }

    #[test]
    fn expand_is_deterministic_per_seed() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.search = Some(SearchSpace {
            entries: vec![
                SearchEntry {
                    path: "agent.0.net.lr".into(),
                    method: SearchMethod::Loguniform,
                    args: serde_json::json!([1e-5, 1e-2]),
                },
                SearchEntry {
                    path: "agent.0.algorithm.gamma".into(),
                    method: SearchMethod::Choice,
                    args: serde_json::json!([0.9, 0.99, 0.999]),
                },
            ],
        });
        let a = expand_search(&spec, 6, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = expand_search(&spec, 6, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let ser =
            |v: &[Spec]| v.iter().map(|s| serialize_spec(s).unwrap()).collect::<Vec<_>>();
        assert_eq!(ser(&a), ser(&b));
    }

    #[test]
    fn expand_rejects_grid_over_budget() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.search = Some(SearchSpace {
            entries: vec![SearchEntry {
                path: "agent.0.net.lr".into(),
                method: SearchMethod::Grid,
                args: serde_json::json!([1e-2, 1e-3, 1e-4]),
            }],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            expand_search(&spec, 2, &mut rng),
            Err(Error::Search(_))
        ));
    }

    #[test]
    fn expand_rejects_bad_path() {
        let mut spec = parse_spec(&minimal_spec_json()).unwrap();
        spec.search = Some(SearchSpace {
            entries: vec![SearchEntry {
                path: "agent.0.net.learning_rate".into(),
                method: SearchMethod::Grid,
                args: serde_json::json!([1e-3]),
            }],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(expand_search(&spec, 4, &mut rng).is_err());
        assert!(!validate_spec(&spec).is_empty());
    }

    #[test]
    fn derived_seeds_are_deterministic_and_distinct() {
        assert_eq!(derive_seed(5, 1, 2), derive_seed(5, 1, 2));
        for s in 0..50u64 {
            assert_ne!(derive_seed(s, 0, 0), derive_seed(s, 0, 1));
            assert_ne!(derive_seed(s, 0, 0), derive_seed(s, 1, 0));
        }
    }

    #[test]
    fn ten_thousand_derived_seeds_have_no_duplicates() {
        let mut seen = std::collections::HashSet::new();
        for trial in 0..100u64 {
            for session in 0..100u64 {
                assert!(seen.insert(derive_seed(1234, trial, session)));
            }
        }
        assert_eq!(seen.len(), 10_000);
    }
}
