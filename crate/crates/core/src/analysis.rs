//! Checkpoint evaluation, the final-score metric, trial/experiment
//! aggregation, and plot emission.
//!
//! Evaluation always runs the deterministic eval-mode policy on raw
//! (unclipped) rewards. The final score of a session is the mean
//! evaluation score over the last 100 checkpoints (or all of them when
//! fewer exist); a trial's final score averages its sessions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::algorithms::{Agent, Mode, TrainMetrics};
use crate::envs::{make_env, Env, EnvSpec, RunningStats};
use crate::error::{Error, Result};
use crate::memory::Action;

/// Periodic evaluation snapshot forming one point of a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub frame: u64,
    /// Mean raw episode return over the eval episodes.
    pub eval_score: f64,
    pub eval_episodes: usize,
    /// Cumulative wall-clock seconds at this checkpoint (not reproducible
    /// across runs; excluded from determinism comparisons).
    pub wall_s: f64,
    pub fps: f64,
    pub metrics: TrainMetrics,
}

/// Number of checkpoints averaged by [`final_score`].
pub const FINAL_SCORE_WINDOW: usize = 100;

/// Mean eval score of the last `min(window, len)` records.
pub fn final_score(records: &[CheckpointRecord], window: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    let k = window.min(records.len());
    let tail = &records[records.len() - k..];
    Ok(tail.iter().map(|r| r.eval_score).sum::<f64>() / k as f64)
}

/// Run full episodes under an arbitrary policy and return the mean raw
/// episode return. State normalization stats are applied read-only.
pub fn run_eval_episodes(
    env: &mut dyn Env,
    episodes: usize,
    stats: Option<&RunningStats>,
    mut policy: impl FnMut(&[f64]) -> Result<Action>,
) -> Result<f64> {
    assert!(episodes >= 1);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset();
        loop {
            let obs = match stats {
                Some(s) => s.normalize(&state),
                None => state.clone(),
            };
            let action = policy(&obs)?;
            let step = env.step(&action)?;
            if step.done {
                total += step.info.expect("done step carries episode info").episode_return;
                break;
            }
            state = step.state;
        }
    }
    Ok(total / episodes as f64)
}

/// Evaluate the agent's deterministic policy on a dedicated env for the
/// given number of episodes; raw rewards only, no clipping.
pub fn checkpoint_eval(
    agent: &mut Agent,
    env_spec: &EnvSpec,
    episodes: usize,
    stats: Option<&RunningStats>,
    seed: u64,
) -> Result<f64> {
    let mut env = make_env(&env_spec.name, env_spec.max_episode_steps, seed)?;
    run_eval_episodes(env.as_mut(), episodes, stats, |obs| {
        Ok(agent.act_one(obs, Mode::Eval)?.action)
    })
}

/// Pointwise mean and population std across sessions, plus the trial
/// final score (mean of session final scores).
pub struct TrialCurve {
    pub frames: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_score_mean: f64,
    pub final_score_std: f64,
}

pub fn aggregate_trial(sessions: &[Vec<CheckpointRecord>], window: usize) -> Result<TrialCurve> {
    let first = sessions
        .first()
        .ok_or(Error::InsufficientData { have: 0, need: 1 })?;
    let frames: Vec<u64> = first.iter().map(|r| r.frame).collect();
    for s in sessions {
        let got: Vec<u64> = s.iter().map(|r| r.frame).collect();
        if got != frames {
            return Err(Error::Run("sessions have mismatched checkpoint grids".into()));
        }
    }
    let n = sessions.len() as f64;
    // summation in canonical (sorted) order makes the aggregate exactly
    // invariant to session ordering despite float non-associativity
    let sorted_stats = |mut xs: Vec<f64>| -> (f64, f64) {
        xs.sort_by(f64::total_cmp);
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, var.sqrt())
    };
    let mut mean = Vec::with_capacity(frames.len());
    let mut std = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let (m, s) = sorted_stats(sessions.iter().map(|s| s[i].eval_score).collect());
        mean.push(m);
        std.push(s);
    }
    let finals: Vec<f64> = sessions
        .iter()
        .map(|s| final_score(s, window))
        .collect::<Result<_>>()?;
    let (fmean, fstd) = sorted_stats(finals);
    Ok(TrialCurve {
        frames,
        mean,
        std,
        final_score_mean: fmean,
        final_score_std: fstd,
    })
}

/// Columns of the per-session metrics CSV, in order.
pub const SESSION_CSV_HEADER: &str =
    "frame,wall_s,eval_score_mean,eval_score_std,loss,loss_policy,loss_value,entropy,fps";

/// Full-precision float formatting: every value parses back to the
/// identical f64 (Rust's shortest round-trip formatting).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn session_csv(records: &[CheckpointRecord]) -> String {
    let mut out = String::from(SESSION_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.frame,
            fmt_f64(r.wall_s),
            fmt_f64(r.eval_score),
            fmt_f64(0.0),
            fmt_f64(r.metrics.loss),
            fmt_f64(r.metrics.loss_policy),
            fmt_f64(r.metrics.loss_value),
            fmt_f64(r.metrics.entropy),
            fmt_f64(r.fps),
        );
    }
    out
}

pub fn trial_csv(curve: &TrialCurve) -> String {
    let mut out = String::from("frame,eval_score_mean,eval_score_std,band_lo,band_hi");
    out.push('\n');
    for i in 0..curve.frames.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            curve.frames[i],
            fmt_f64(curve.mean[i]),
            fmt_f64(curve.std[i]),
            fmt_f64(curve.mean[i] - curve.std[i]),
            fmt_f64(curve.mean[i] + curve.std[i]),
        );
    }
    out
}

// ---- self-contained SVG plotting ----

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 55.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn from(xs: &[f64], ys_lo: &[f64], ys_hi: &[f64]) -> Axes {
        let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        let x_max = xs.iter().cloned().fold(1.0, f64::max);
        let mut y_min = ys_lo.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut y_max = ys_hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !y_min.is_finite() || !y_max.is_finite() {
            y_min = 0.0;
            y_max = 1.0;
        }
        if (y_max - y_min).abs() < 1e-9 {
            y_min -= 1.0;
            y_max += 1.0;
        }
        let pad = 0.05 * (y_max - y_min);
        Axes {
            x_min,
            x_max,
            y_min: y_min - pad,
            y_max: y_max + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    )
}

fn svg_axes(ax: &Axes, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    for k in 0..=4 {
        let fx = ax.x_min + (ax.x_max - ax.x_min) * k as f64 / 4.0;
        let fy = ax.y_min + (ax.y_max - ax.y_min) * k as f64 / 4.0;
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{:.0}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.1}</text>\n",
            ax.px(fx),
            H - MARGIN + 15.0,
            fx,
            MARGIN - 5.0,
            ax.py(fy) + 3.0,
            fy
        );
    }
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 {y})\">{y_label}</text>\n",
        W / 2.0,
        H - 10.0,
        H / 2.0,
        y = H / 2.0
    );
    s
}

fn polyline(ax: &Axes, xs: &[f64], ys: &[f64], color: &str) -> String {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| format!("{:.2},{:.2}", ax.px(*x), ax.py(*y)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Learning curve for one session.
pub fn session_svg(title: &str, records: &[CheckpointRecord]) -> String {
    let xs: Vec<f64> = records.iter().map(|r| r.frame as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.eval_score).collect();
    let ax = Axes::from(&xs, &ys, &ys);
    let mut s = svg_header(title);
    s.push_str(&svg_axes(&ax, "frame", "eval score"));
    s.push_str(&polyline(&ax, &xs, &ys, "#1f77b4"));
    s.push_str("</svg>\n");
    s
}

/// Mean curve with a +/- one-std shaded band for a trial.
pub fn trial_svg(title: &str, curve: &TrialCurve) -> String {
    let xs: Vec<f64> = curve.frames.iter().map(|f| *f as f64).collect();
    let lo: Vec<f64> = curve.mean.iter().zip(&curve.std).map(|(m, s)| m - s).collect();
    let hi: Vec<f64> = curve.mean.iter().zip(&curve.std).map(|(m, s)| m + s).collect();
    let ax = Axes::from(&xs, &lo, &hi);
    let mut s = svg_header(title);
    s.push_str(&svg_axes(&ax, "frame", "eval score"));
    if !xs.is_empty() {
        let mut pts = Vec::with_capacity(xs.len() * 2);
        for i in 0..xs.len() {
            pts.push(format!("{:.2},{:.2}", ax.px(xs[i]), ax.py(hi[i])));
        }
        for i in (0..xs.len()).rev() {
            pts.push(format!("{:.2},{:.2}", ax.px(xs[i]), ax.py(lo[i])));
        }
        let _ = write!(
            s,
            "<polygon fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"{}\"/>\n",
            pts.join(" ")
        );
    }
    s.push_str(&polyline(&ax, &xs, &curve.mean, "#1f77b4"));
    s.push_str("</svg>\n");
    s
}

/// Write per-session curves (SVG + CSV), the trial band plot, and the
/// trial CSV into `out_dir`. Returns the number of files written.
pub fn emit_trial_plots(
    out_dir: &Path,
    trial_idx: usize,
    sessions: &[Vec<CheckpointRecord>],
    window: usize,
) -> Result<usize> {
    fs::create_dir_all(out_dir)?;
    let mut files = 0;
    for (j, records) in sessions.iter().enumerate() {
        let title = format!("trial{trial_idx} session{j}");
        fs::write(
            out_dir.join(format!("trial{trial_idx}_session{j}_curve.svg")),
            session_svg(&title, records),
        )?;
        files += 1;
    }
    let curve = aggregate_trial(sessions, window)?;
    fs::write(
        out_dir.join(format!("trial{trial_idx}_curve.svg")),
        trial_svg(&format!("trial{trial_idx} mean +/- std"), &curve),
    )?;
    files += 1;
    fs::write(
        out_dir.join(format!("trial{trial_idx}_curve.csv")),
        trial_csv(&curve),
    )?;
    files += 1;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(frame: u64, score: f64) -> CheckpointRecord {
        CheckpointRecord {
            frame,
            eval_score: score,
            eval_episodes: 4,
            wall_s: 0.0,
            fps: 0.0,
            metrics: TrainMetrics::default(),
        }
    }

    #[test]
    fn final_score_constant_stream() {
        let records: Vec<_> = (0..150).map(|i| rec(i, 7.0)).collect();
        assert_eq!(final_score(&records, 100).unwrap(), 7.0);
    }

    #[test]
    fn final_score_short_stream_uses_all() {
        let records: Vec<_> = (0..50).map(|i| rec(i, i as f64)).collect();
        let expect = (0..50).map(|i| i as f64).sum::<f64>() / 50.0;
        assert_eq!(final_score(&records, 100).unwrap(), expect);
        assert!(final_score(&[], 100).is_err());
    }

    #[test]
    fn final_score_matches_tail_mean_recomputation() {
        let mut state = 88172645463325252u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 100.0
        };
        let records: Vec<_> = (0..257).map(|i| rec(i, next())).collect();
        let got = final_score(&records, 100).unwrap();
        let tail: Vec<f64> = records[157..].iter().map(|r| r.eval_score).collect();
        let expect = tail.iter().sum::<f64>() / 100.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn final_score_is_translation_equivariant() {
        let records: Vec<_> = (0..30).map(|i| rec(i, (i * i) as f64 * 0.1)).collect();
        let shifted: Vec<_> = records
            .iter()
            .map(|r| rec(r.frame, r.eval_score + 5.0))
            .collect();
        let a = final_score(&records, 10).unwrap();
        let b = final_score(&shifted, 10).unwrap();
        assert!((b - a - 5.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_identical_sessions_has_zero_std() {
        let s: Vec<_> = (0..5).map(|i| rec(i * 100, 3.0)).collect();
        let curve = aggregate_trial(&[s.clone(), s], 100).unwrap();
        assert!(curve.std.iter().all(|&v| v == 0.0));
        assert_eq!(curve.final_score_mean, 3.0);
    }

    #[test]
    fn aggregate_two_sessions_arithmetic() {
        let a: Vec<_> = vec![rec(0, 1.0)];
        let b: Vec<_> = vec![rec(0, 3.0)];
        let curve = aggregate_trial(&[a, b], 100).unwrap();
        assert_eq!(curve.mean, vec![2.0]);
        assert_eq!(curve.std, vec![1.0]); // population std
    }

    #[test]
    fn aggregate_matches_direct_recomputation_and_permutation() {
        let mk = |seed: u64| -> Vec<CheckpointRecord> {
            let mut s = seed;
            (0..20)
                .map(|i| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                    rec(i * 10, (s >> 33) as f64 / 1e8)
                })
                .collect()
        };
        let sessions = vec![mk(1), mk(2), mk(3), mk(4)];
        let curve = aggregate_trial(&sessions, 100).unwrap();
        for i in 0..20 {
            let xs: Vec<f64> = sessions.iter().map(|s| s[i].eval_score).collect();
            let m = xs.iter().sum::<f64>() / 4.0;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            assert!((curve.mean[i] - m).abs() < 1e-12);
            assert!((curve.std[i] - var.sqrt()).abs() < 1e-12);
        }
        let mut permuted = sessions.clone();
        permuted.swap(0, 3);
        permuted.swap(1, 2);
        let curve2 = aggregate_trial(&permuted, 100).unwrap();
        assert_eq!(curve.mean, curve2.mean);
        assert_eq!(curve.std, curve2.std);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = vec![rec(0, 1.0), rec(10, 1.0)];
        let b = vec![rec(0, 1.0), rec(20, 1.0)];
        assert!(aggregate_trial(&[a, b], 100).is_err());
    }

    #[test]
    fn csv_floats_round_trip_exactly() {
        let vals = [
            1.0 / 3.0,
            std::f64::consts::PI,
            -1.2345678901234567e-13,
            42.0,
        ];
        for v in vals {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn trial_csv_band_equals_mean_plus_minus_std() {
        let a: Vec<_> = vec![rec(0, 1.0), rec(10, 5.0)];
        let b: Vec<_> = vec![rec(0, 3.0), rec(10, 9.0)];
        let curve = aggregate_trial(&[a, b], 100).unwrap();
        let csv = trial_csv(&curve);
        let line: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let mean: f64 = line[1].parse().unwrap();
        let std: f64 = line[2].parse().unwrap();
        let lo: f64 = line[3].parse().unwrap();
        let hi: f64 = line[4].parse().unwrap();
        assert_eq!(lo, mean - std);
        assert_eq!(hi, mean + std);
    }
}
