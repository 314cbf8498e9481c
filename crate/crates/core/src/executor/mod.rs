//! Session, Trial, and Experiment execution with hybrid synchronous
//! (vector env) and asynchronous (hogwild / server-worker) parallelism.
//!
//! Synchronous runs (`distributed = none`) are bit-reproducible from
//! (spec, seed). Hogwild runs are explicitly not reproducible and the run
//! manifest says so.

mod store;

pub use store::SharedParamStore;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::algorithms::{Agent, Mode, TrainMetrics, UpdateMode};
use crate::analysis::{
    aggregate_trial, checkpoint_eval, emit_trial_plots, session_csv, CheckpointRecord, TrialCurve,
    FINAL_SCORE_WINDOW,
};
use crate::envs::{make_env, preprocess, EnvSpec, RunningStats, VectorEnv};
use crate::error::{Error, Result};
use crate::memory::{Action, Transition};
use crate::netcore::Tensor;
use crate::specfile::{
    derive_seed, derive_stream, expand_search, serialize_spec, DistributedMode, Spec,
};

/// Everything a finished Session reports.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub trial_idx: usize,
    pub session_idx: usize,
    pub seed: u64,
    pub records: Vec<CheckpointRecord>,
    pub wall_s: f64,
    pub fps: f64,
    /// Final trainable parameters, flattened in net order.
    pub final_params: Vec<f64>,
    pub provenance: Option<BTreeMap<String, Value>>,
}

pub struct TrialResult {
    pub trial_idx: usize,
    pub sessions: Vec<SessionResult>,
    pub curve: TrialCurve,
}

pub struct ExperimentRow {
    pub trial_idx: usize,
    pub provenance: Option<BTreeMap<String, Value>>,
    pub final_score_mean: f64,
    pub final_score_std: f64,
    pub error: Option<String>,
}

pub struct ExperimentResult {
    /// Rows ranked by mean final score, best first; failed trials last.
    pub ranking: Vec<ExperimentRow>,
}

/// Environment interaction loop state for one Session.
struct SessionRunner {
    agent: Agent,
    venv: VectorEnv,
    stats: Option<RunningStats>,
    states: Tensor,
    env_spec: EnvSpec,
    frames: u64,
}

impl SessionRunner {
    fn new(spec: &Spec, seed: u64) -> Result<Self> {
        let env_spec = spec.env_spec().clone();
        let lanes = (0..env_spec.num_envs)
            .map(|i| {
                make_env(
                    &env_spec.name,
                    env_spec.max_episode_steps,
                    derive_stream(seed, 0x100 + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut venv = VectorEnv::new(lanes);
        let agent = Agent::build(
            spec.agent_spec(),
            venv.obs_dim(),
            venv.action_space(),
            env_spec.num_envs,
            env_spec.max_frame,
            seed,
        )?;
        let mut stats = env_spec.normalize_state.then(|| RunningStats::new(venv.obs_dim()));
        let raw = venv.reset();
        let rows: Vec<Vec<f64>> = (0..raw.rows())
            .map(|r| preprocess_state(raw.row(r), &env_spec, &mut stats))
            .collect();
        let states = Tensor::from_rows(&rows);
        Ok(SessionRunner {
            agent,
            venv,
            stats,
            states,
            env_spec,
            frames: 0,
        })
    }

    /// One synchronous vector step: act, step all lanes, store transitions.
    /// Training is left to the caller so distributed wrappers can hook it.
    fn advance(&mut self) -> Result<()> {
        let outs = self.agent.act_batch(&self.states, Mode::Train)?;
        let actions: Vec<Action> = outs.iter().map(|o| o.action.clone()).collect();
        let lane_steps = self.venv.step(&actions)?;
        let mut next_rows = Vec::with_capacity(lane_steps.len());
        for (lane, (out, step)) in outs.into_iter().zip(lane_steps).enumerate() {
            let reward = match &self.env_spec.reward_clip {
                Some(c) => step.reward.clamp(c.lo, c.hi),
                None => step.reward,
            };
            let (stored_next, acting_next) = if step.done {
                let terminal = step.terminal_state.expect("done lane has terminal state");
                (
                    preprocess_owned(terminal, &self.env_spec, &mut self.stats),
                    preprocess_owned(step.state, &self.env_spec, &mut self.stats),
                )
            } else {
                let processed = preprocess_owned(step.state, &self.env_spec, &mut self.stats);
                (processed.clone(), processed)
            };
            let transition = Transition {
                state: self.states.row(lane).to_vec(),
                action: out.action,
                reward,
                next_state: stored_next,
                done: step.done,
                extras: Some(out.extras),
            };
            self.agent.observe(lane, transition);
            next_rows.push(acting_next);
        }
        self.states = Tensor::from_rows(&next_rows);
        self.frames += self.venv.num_envs() as u64;
        Ok(())
    }
}

fn preprocess_state(
    raw: &[f64],
    env_spec: &EnvSpec,
    stats: &mut Option<RunningStats>,
) -> Vec<f64> {
    match stats {
        Some(s) => preprocess(raw, 0.0, env_spec, s).0,
        None => raw.to_vec(),
    }
}

fn preprocess_owned(
    raw: Vec<f64>,
    env_spec: &EnvSpec,
    stats: &mut Option<RunningStats>,
) -> Vec<f64> {
    match stats {
        Some(s) => preprocess(&raw, 0.0, env_spec, s).0,
        None => raw,
    }
}

/// Run one Session synchronously. Fully deterministic given (spec, seed).
pub fn run_session(spec: &Spec, trial_idx: usize, session_idx: usize) -> Result<SessionResult> {
    run_session_worker(spec, trial_idx, session_idx, None, None)
}

/// Session body shared by synchronous and distributed modes. With a store,
/// hogwild workers write parameter deltas and re-pull snapshots around
/// every training step; server-worker accumulates gradients and pushes
/// every `push_frequency` steps.
pub fn run_session_worker(
    spec: &Spec,
    trial_idx: usize,
    session_idx: usize,
    store: Option<&SharedParamStore>,
    ckpt_dir: Option<&Path>,
) -> Result<SessionResult> {
    let meta = spec.meta.clone();
    let seed = derive_seed(meta.base_seed, trial_idx as u64, session_idx as u64);
    let mut runner = SessionRunner::new(spec, seed)?;
    if let Some(store) = store {
        runner.agent.import_params(&store.snapshot());
        if store.mode() == DistributedMode::ServerWorker {
            runner.agent.update_mode = UpdateMode::Accumulate;
        }
    }
    let max_frame = spec.env_spec().max_frame;
    let eval_freq = meta.eval_frequency;
    let mut next_eval = eval_freq;
    let mut next_ckpt = meta.checkpoint_frequency;
    let mut records: Vec<CheckpointRecord> = Vec::new();
    let mut pushes = 0u64;
    let started = Instant::now();

    while runner.frames < max_frame {
        runner.advance()?;
        let trained: Option<TrainMetrics> = match store.map(|s| s.mode()) {
            Some(DistributedMode::Hogwild) => {
                if runner.agent.train_due() {
                    let prev = runner.agent.export_params();
                    let m = runner.agent.train_if_due()?;
                    let cur = runner.agent.export_params();
                    let delta: Vec<f64> =
                        cur.iter().zip(&prev).map(|(c, p)| c - p).collect();
                    let s = store.unwrap();
                    s.add_delta(&delta);
                    runner.agent.import_params(&s.snapshot());
                    m
                } else {
                    None
                }
            }
            Some(DistributedMode::ServerWorker) => {
                let m = runner.agent.train_if_due()?;
                if m.is_some() {
                    pushes += 1;
                    if pushes % meta.push_frequency == 0 {
                        let grads = runner.agent.take_accumulated_grads();
                        let (params, _) = store.unwrap().push_grads(&grads);
                        runner.agent.import_params(&params);
                        runner.agent.apply_target_updates()?;
                    }
                }
                m
            }
            _ => runner.agent.train_if_due()?,
        };
        let _ = trained;

        while runner.frames >= next_eval && next_eval <= max_frame {
            let k = next_eval / eval_freq;
            let score = checkpoint_eval(
                &mut runner.agent,
                &runner.env_spec,
                meta.eval_episodes,
                runner.stats.as_ref(),
                derive_stream(seed, 0x4000 + k),
            )?;
            let wall = started.elapsed().as_secs_f64();
            records.push(CheckpointRecord {
                frame: next_eval,
                eval_score: score,
                eval_episodes: meta.eval_episodes,
                wall_s: wall,
                fps: next_eval as f64 / wall.max(1e-9),
                metrics: runner.agent.last_metrics().unwrap_or_default(),
            });
            next_eval += eval_freq;
        }
        if let Some(dir) = ckpt_dir {
            while runner.frames >= next_ckpt && next_ckpt <= max_frame {
                let prefix =
                    format!("trial{trial_idx}_session{session_idx}_f{next_ckpt}");
                runner.agent.save_checkpoint(dir, &prefix)?;
                next_ckpt += meta.checkpoint_frequency;
            }
        }
    }

    let wall_s = started.elapsed().as_secs_f64();
    Ok(SessionResult {
        trial_idx,
        session_idx,
        seed,
        records,
        wall_s,
        fps: runner.frames as f64 / wall_s.max(1e-9),
        final_params: runner.agent.export_params(),
        provenance: spec.provenance.clone(),
    })
}

/// Run a Trial: `num_sessions` Sessions differing only in seed.
///
/// `distributed = none` runs sessions on independent threads with results
/// identical to serial execution; hogwild and server-worker share a
/// [`SharedParamStore`]. A worker failure aborts the trial, preserving the
/// completed sessions on disk when a run directory is attached.
pub fn run_trial(spec: &Spec, trial_idx: usize, rundir: Option<&RunDir>) -> Result<TrialResult> {
    let n = spec.meta.num_sessions;
    let store = match spec.meta.distributed {
        DistributedMode::None => None,
        mode => {
            let template = Agent::build(
                spec.agent_spec(),
                crate::envs::env_info(&spec.env_spec().name)
                    .ok_or_else(|| Error::Env(format!("unknown env '{}'", spec.env_spec().name)))?
                    .0,
                crate::envs::env_info(&spec.env_spec().name).unwrap().1,
                spec.env_spec().num_envs,
                spec.env_spec().max_frame,
                derive_seed(spec.meta.base_seed, trial_idx as u64, 0),
            )?;
            Some(Arc::new(SharedParamStore::new(
                mode,
                template.export_params(),
                spec.agent_spec().net.with_heads(vec![]),
            )))
        }
    };

    let ckpt_dir = rundir.map(|r| r.checkpoints_dir());
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d)?;
    }
    let mut results: Vec<Result<SessionResult>> = Vec::with_capacity(n);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(n);
        for session_idx in 0..n {
            let store = store.clone();
            let ckpt_dir = ckpt_dir.clone();
            handles.push(scope.spawn(move || {
                run_session_worker(
                    spec,
                    trial_idx,
                    session_idx,
                    store.as_deref(),
                    ckpt_dir.as_deref(),
                )
            }));
        }
        for h in handles {
            results.push(match h.join() {
                Ok(r) => r,
                Err(_) => Err(Error::Run("session worker panicked".into())),
            });
        }
    });

    // preserve whatever finished before reporting a failure
    if let Some(dir) = rundir {
        for r in results.iter().flatten() {
            dir.write_session_csv(r)?;
        }
    }
    let mut sessions = Vec::with_capacity(n);
    for r in results {
        sessions.push(r?);
    }
    let curves: Vec<Vec<CheckpointRecord>> =
        sessions.iter().map(|s| s.records.clone()).collect();
    let curve = aggregate_trial(&curves, FINAL_SCORE_WINDOW)?;
    if let Some(dir) = rundir {
        emit_trial_plots(&dir.plots_dir(), trial_idx, &curves, FINAL_SCORE_WINDOW)?;
    }
    Ok(TrialResult {
        trial_idx,
        sessions,
        curve,
    })
}

/// Expand the search space (budget = meta.num_trials) and run one Trial
/// per expanded spec. Individual trial failures are recorded and the
/// experiment continues.
pub fn run_experiment(spec: &Spec, rundir: Option<&RunDir>) -> Result<ExperimentResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream(spec.meta.base_seed, 0x5EA0));
    let children = expand_search(spec, spec.meta.num_trials.max(1), &mut rng)?;
    let mut ranking = Vec::with_capacity(children.len());
    for (trial_idx, child) in children.iter().enumerate() {
        match run_trial(child, trial_idx, rundir) {
            Ok(trial) => ranking.push(ExperimentRow {
                trial_idx,
                provenance: child.provenance.clone(),
                final_score_mean: trial.curve.final_score_mean,
                final_score_std: trial.curve.final_score_std,
                error: None,
            }),
            Err(e) => ranking.push(ExperimentRow {
                trial_idx,
                provenance: child.provenance.clone(),
                final_score_mean: f64::NEG_INFINITY,
                final_score_std: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    ranking.sort_by(|a, b| b.final_score_mean.total_cmp(&a.final_score_mean));
    if let Some(dir) = rundir {
        dir.write_final_scores(&ranking)?;
    }
    Ok(ExperimentResult { ranking })
}

/// Throughput measurement for one (workers, vector envs) configuration.
#[derive(Debug, Clone, Copy)]
pub struct FpsReport {
    pub workers: usize,
    pub num_envs: usize,
    pub total_frames: u64,
    pub seconds: f64,
    pub fps: f64,
}

/// Run the training loop for a wall-clock duration and report summed
/// environment frames per second across workers (workers =
/// meta.num_sessions, envs = env.num_envs; no evaluation runs inside).
pub fn measure_fps(spec: &Spec, duration_seconds: f64) -> Result<FpsReport> {
    assert!(duration_seconds > 0.0);
    let workers = spec.meta.num_sessions;
    let mut worker_frames: Vec<u64> = vec![0; workers];
    if workers == 1 {
        let seed = derive_seed(spec.meta.base_seed, 0, 0);
        let mut runner = SessionRunner::new(spec, seed)?;
        let started = Instant::now();
        while started.elapsed().as_secs_f64() < duration_seconds {
            runner.advance()?;
            runner.agent.train_if_due()?;
        }
        worker_frames[0] = runner.frames;
    } else {
        let template = SessionRunner::new(spec, derive_seed(spec.meta.base_seed, 0, 0))?;
        let store = Arc::new(SharedParamStore::new(
            DistributedMode::Hogwild,
            template.agent.export_params(),
            spec.agent_spec().net.with_heads(vec![]),
        ));
        drop(template);
        let frames: Vec<u64> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for w in 0..workers {
                let store = Arc::clone(&store);
                handles.push(scope.spawn(move || -> Result<u64> {
                    let seed = derive_seed(spec.meta.base_seed, 0, w as u64);
                    let mut runner = SessionRunner::new(spec, seed)?;
                    runner.agent.import_params(&store.snapshot());
                    let started = Instant::now();
                    while started.elapsed().as_secs_f64() < duration_seconds {
                        runner.advance()?;
                        if runner.agent.train_due() {
                            let prev = runner.agent.export_params();
                            runner.agent.train_if_due()?;
                            let cur = runner.agent.export_params();
                            let delta: Vec<f64> =
                                cur.iter().zip(&prev).map(|(c, p)| c - p).collect();
                            store.add_delta(&delta);
                            runner.agent.import_params(&store.snapshot());
                        }
                    }
                    Ok(runner.frames)
                }));
            }
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(Err(Error::Run("fps worker panicked".into()))))
                .collect::<Result<Vec<u64>>>()
        })?;
        worker_frames = frames;
    }
    let total: u64 = worker_frames.iter().sum();
    Ok(FpsReport {
        workers,
        num_envs: spec.env_spec().num_envs,
        total_frames: total,
        seconds: duration_seconds,
        fps: total as f64 / duration_seconds,
    })
}

/// Run directory: `data/<spec_name>_<timestamp>/` holding the materialized
/// spec, a manifest, per-session metrics CSVs, checkpoints, and plots.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(base: &Path, spec_name: &str) -> Result<RunDir> {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let root = base.join(format!("{spec_name}_{stamp}"));
        fs::create_dir_all(&root)?;
        Ok(RunDir { root })
    }

    pub fn open(root: PathBuf) -> RunDir {
        RunDir { root }
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn write_spec(&self, spec: &Spec) -> Result<()> {
        fs::write(self.root.join("spec.json"), serialize_spec(spec)?)?;
        Ok(())
    }

    pub fn write_manifest(
        &self,
        spec_name: &str,
        mode: DistributedMode,
        overrides: &[String],
    ) -> Result<()> {
        let manifest = serde_json::json!({
            "version": crate::VERSION,
            "spec_name": spec_name,
            "mode": match mode {
                DistributedMode::None => "none",
                DistributedMode::Hogwild => "hogwild",
                DistributedMode::ServerWorker => "server_worker",
            },
            // hogwild races make runs non-reproducible by design
            "reproducible": mode != DistributedMode::Hogwild,
            "host": {
                "os": std::env::consts::OS,
                "arch": std::env::consts::ARCH,
                "cores": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            },
            "overrides": overrides,
            "created_unix_ms": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        });
        fs::write(
            self.root.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn session_csv_path(&self, trial_idx: usize, session_idx: usize) -> PathBuf {
        self.root
            .join(format!("trial{trial_idx}_session{session_idx}_metrics.csv"))
    }

    pub fn write_session_csv(&self, result: &SessionResult) -> Result<()> {
        fs::write(
            self.session_csv_path(result.trial_idx, result.session_idx),
            session_csv(&result.records),
        )?;
        Ok(())
    }

    pub fn write_final_scores(&self, ranking: &[ExperimentRow]) -> Result<()> {
        let mut out = String::from("trial_idx,params,final_score_mean,final_score_std,error\n");
        for row in ranking {
            let params = row
                .provenance
                .as_ref()
                .map(|p| serde_json::to_string(p).unwrap_or_default().replace(',', ";"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.trial_idx,
                params,
                crate::analysis::fmt_f64(row.final_score_mean),
                crate::analysis::fmt_f64(row.final_score_std),
                row.error.clone().unwrap_or_default(),
            ));
        }
        fs::write(self.root.join("final_scores.csv"), out)?;
        Ok(())
    }
}
