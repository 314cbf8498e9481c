//! Command implementations behind the `rl` binary: run, search, analyze,
//! benchmark, and selftest.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 runtime failure, 3 selftest
//! failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rl_core::analysis::{fmt_f64, run_eval_episodes};
use rl_core::envs::{env_info, make_env, ActionSpace};
use rl_core::error::Error;
use rl_core::executor::{run_experiment, run_trial, RunDir};
use rl_core::memory::Action;
use rl_core::selftest;
use rl_core::specfile::{parse_spec, validate_spec, DistributedMode, Spec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

/// Parsed command-line surface shared by run/search/benchmark.
#[derive(Debug, Clone, Default)]
pub struct RunOpts {
    /// Dotted key=value overrides, applied before validation.
    pub overrides: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub mode: Option<DistributedMode>,
    pub workers: Option<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("data")
}

/// Apply `--set key=value` overrides onto the raw JSON document, then
/// parse. Values parse as JSON when possible, else as strings.
pub fn load_spec_with_overrides(path: &Path, opts: &RunOpts) -> Result<Spec, Error> {
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::SpecParse(e.to_string()))?;
    for ov in &opts.overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::SpecParse(format!("override '{ov}' must be key=value")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    let mut spec = parse_spec(&value.to_string())?;
    if let Some(mode) = opts.mode {
        spec.meta.distributed = mode;
    }
    if let Some(w) = opts.workers {
        spec.meta.num_sessions = w;
    }
    Ok(spec)
}

fn set_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<(), Error> {
    let mut cur = root;
    let segs: Vec<&str> = path.split('.').collect();
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        match cur {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), new);
                    return Ok(());
                }
                cur = map
                    .get_mut(*seg)
                    .ok_or_else(|| Error::SpecParse(format!("override path '{path}' missing '{seg}'")))?;
            }
            serde_json::Value::Array(arr) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::SpecParse(format!("override path '{path}': bad index '{seg}'")))?;
                let slot = arr.get_mut(idx).ok_or_else(|| {
                    Error::SpecParse(format!("override path '{path}': index {idx} out of range"))
                })?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                cur = slot;
            }
            _ => return Err(Error::SpecParse(format!("override path '{path}' hits a scalar"))),
        }
    }
    Err(Error::SpecParse(format!("empty override path '{path}'")))
}

fn spec_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "spec".into())
}

/// `run`: parse, validate, run one Trial (plots and CSVs written to the
/// run directory). `search`: same but expands the search space into an
/// Experiment.
pub fn cmd_run(spec_path: &Path, opts: &RunOpts, search: bool) -> i32 {
    let spec = match load_spec_with_overrides(spec_path, opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("spec error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let violations = validate_spec(&spec);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return EXIT_VALIDATION;
    }
    if search && spec.search.is_none() {
        eprintln!("spec error: 'search' verb requires a search section");
        return EXIT_VALIDATION;
    }
    let out = opts.out_dir.clone().unwrap_or_else(default_out);
    let name = spec_name(spec_path);
    let rundir = match RunDir::create(&out, &name) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("run error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = rundir
        .write_spec(&spec)
        .and_then(|_| rundir.write_manifest(&name, spec.meta.distributed, &opts.overrides))
    {
        eprintln!("run error: {e}");
        return EXIT_RUNTIME;
    }
    let outcome = if search {
        run_experiment(&spec, Some(&rundir)).map(|exp| {
            println!("experiment ranking (best first):");
            for row in &exp.ranking {
                match &row.error {
                    None => println!(
                        "  trial {}: final_score {:.3} +/- {:.3} {}",
                        row.trial_idx,
                        row.final_score_mean,
                        row.final_score_std,
                        row.provenance
                            .as_ref()
                            .map(|p| serde_json::to_string(p).unwrap_or_default())
                            .unwrap_or_default()
                    ),
                    Some(e) => println!("  trial {}: FAILED ({e})", row.trial_idx),
                }
            }
        })
    } else {
        run_trial(&spec, 0, Some(&rundir)).map(|trial| {
            println!(
                "trial final_score {:.3} +/- {:.3} over {} sessions",
                trial.curve.final_score_mean,
                trial.curve.final_score_std,
                trial.sessions.len()
            );
        })
    };
    match outcome {
        Ok(()) => {
            println!("run directory: {}", rundir.root.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("run error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Recompute trial aggregates and plots from the session CSVs in an
/// existing run directory.
pub fn cmd_analyze(dir: &Path) -> i32 {
    match analyze_dir(dir) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("analyze error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn analyze_dir(dir: &Path) -> Result<Vec<String>, Error> {
    use rl_core::analysis::{aggregate_trial, emit_trial_plots, CheckpointRecord, FINAL_SCORE_WINDOW};
    let mut by_trial: BTreeMap<usize, BTreeMap<usize, Vec<CheckpointRecord>>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let fname = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(rest) = fname.strip_prefix("trial") else { continue };
        let Some(core) = rest.strip_suffix("_metrics.csv") else { continue };
        let Some((t, s)) = core.split_once("_session") else { continue };
        let (Ok(t), Ok(s)) = (t.parse::<usize>(), s.parse::<usize>()) else { continue };
        let text = fs::read_to_string(&path)?;
        let mut records = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 9 {
                continue;
            }
            records.push(CheckpointRecord {
                frame: cols[0].parse().unwrap_or(0),
                eval_score: cols[2].parse().unwrap_or(f64::NAN),
                eval_episodes: 0,
                wall_s: cols[1].parse().unwrap_or(0.0),
                fps: cols[8].parse().unwrap_or(0.0),
                metrics: Default::default(),
            });
        }
        by_trial.entry(t).or_default().insert(s, records);
    }
    if by_trial.is_empty() {
        return Err(Error::Run(format!(
            "no trial*_session*_metrics.csv files under {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for (t, sessions) in &by_trial {
        let curves: Vec<Vec<CheckpointRecord>> = sessions.values().cloned().collect();
        let curve = aggregate_trial(&curves, FINAL_SCORE_WINDOW)?;
        emit_trial_plots(&dir.join("plots"), *t, &curves, FINAL_SCORE_WINDOW)?;
        out.push(format!(
            "trial {t}: {} sessions, final_score {:.3} +/- {:.3}",
            curves.len(),
            curve.final_score_mean,
            curve.final_score_std
        ));
    }
    Ok(out)
}

/// Mean episode return of a uniform-random policy over `episodes` episodes.
pub fn random_baseline(env_name: &str, episodes: usize, seed: u64) -> Result<f64, Error> {
    let (_, action_space) =
        env_info(env_name).ok_or_else(|| Error::Env(format!("unknown env '{env_name}'")))?;
    let mut env = make_env(env_name, 500, seed)?;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15);
    run_eval_episodes(env.as_mut(), episodes, None, |_| {
        Ok(match action_space {
            ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..n)),
            ActionSpace::Continuous(d) => {
                Action::Continuous((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            }
        })
    })
}

/// One benchmark cell: env row, algorithm column, trial final score.
pub struct BenchmarkCell {
    pub env: String,
    pub algorithm: String,
    pub score: Result<f64, String>,
}

/// Run every spec in the benchmark directory and assemble the results
/// matrix (rows: envs, columns: algorithms plus a Random baseline over 100
/// episodes). Per-cell failures are recorded and the benchmark continues.
pub fn run_benchmark(
    spec_dir: &Path,
    opts: &RunOpts,
    out: &Path,
) -> Result<(Vec<BenchmarkCell>, String), Error> {
    let mut paths: Vec<PathBuf> = fs::read_dir(spec_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Run(format!("no benchmark specs under {}", spec_dir.display())));
    }
    let mut cells = Vec::new();
    let mut envs: Vec<String> = Vec::new();
    for path in &paths {
        let name = spec_name(path);
        // spec files are named <env>_<algorithm>.json
        let Some((env, algorithm)) = name.split_once('_') else {
            continue;
        };
        if env == "synth" {
            continue; // throughput spec, not a benchmark cell
        }
        let spec = match load_spec_with_overrides(path, opts) {
            Ok(s) => s,
            Err(e) => {
                cells.push(BenchmarkCell {
                    env: env.into(),
                    algorithm: algorithm.into(),
                    score: Err(e.to_string()),
                });
                continue;
            }
        };
        let violations = validate_spec(&spec);
        if !violations.is_empty() {
            cells.push(BenchmarkCell {
                env: env.into(),
                algorithm: algorithm.into(),
                score: Err(violations.join("; ")),
            });
            continue;
        }
        if !envs.iter().any(|e| e == env) {
            envs.push(env.to_string());
        }
        eprintln!("benchmark: running {name} ...");
        let score = run_trial(&spec, 0, None)
            .map(|t| t.curve.final_score_mean)
            .map_err(|e| e.to_string());
        cells.push(BenchmarkCell {
            env: env.into(),
            algorithm: algorithm.into(),
            score,
        });
    }

    // assemble the table: one row per env, Random column first
    let mut algorithms: Vec<String> = cells.iter().map(|c| c.algorithm.clone()).collect();
    algorithms.sort();
    algorithms.dedup();
    let mut table = String::from("env,random");
    for a in &algorithms {
        table.push(',');
        table.push_str(a);
    }
    table.push('\n');
    for env in &envs {
        let random = random_baseline(env, 100, 0x5EED)?;
        table.push_str(env);
        table.push(',');
        table.push_str(&fmt_f64(random));
        for a in &algorithms {
            table.push(',');
            match cells.iter().find(|c| &c.env == env && &c.algorithm == a) {
                Some(c) => match &c.score {
                    Ok(s) => table.push_str(&fmt_f64(*s)),
                    Err(_) => table.push_str("FAILED"),
                },
                // applicability: no spec ships for invalid env/algorithm pairs
                None => table.push_str("n/a"),
            }
        }
        table.push('\n');
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("benchmark.csv"), &table)?;
    Ok((cells, table))
}

pub fn cmd_benchmark(spec_dir: &Path, opts: &RunOpts) -> i32 {
    let out = opts.out_dir.clone().unwrap_or_else(default_out).join("benchmark");
    match run_benchmark(spec_dir, opts, &out) {
        Ok((_, table)) => {
            println!("{table}");
            println!("written to {}", out.join("benchmark.csv").display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("benchmark error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Run the fast oracle suites and print one line per suite.
pub fn cmd_selftest() -> i32 {
    let reports = selftest::run_all(None);
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<18} {}  max_error {:.3e}  ({})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_error,
            r.detail
        );
        ok &= r.passed;
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
