//! Scripted noisy demonstration collection and dataset handling.
//!
//! The scripted policy drives the end effector toward each sequence
//! target with a proportional error action, toggles the gripper once the
//! pose is within a per-episode threshold, and injects Gaussian action
//! noise at every step. Noise scale is calibrated per skill so the
//! scripted success rate lands in a fixed band.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::SkillSpec;
use crate::error::{Error, Result};
use crate::quat;
use crate::sim::{
    Action, EnvFeatures, GoalRegion, GripperGoal, SimConfig, Simulator, WorldState,
};

/// Scripted-policy noise parameters: threshold distribution (mu1, sigma1)
/// and per-component action noise (mu2, sigma2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    /// Step budget per sequence target.
    pub num_timesteps: u32,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            mu1: 0.02,
            sigma1: 0.005,
            mu2: 0.0,
            sigma2: 0.02,
            num_timesteps: 40,
        }
    }
}

/// One offline transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: WorldState,
    pub a: Action,
    pub r: u8,
    pub s_next: WorldState,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub skill_id: u32,
    pub episodes: usize,
    pub noise: NoiseParams,
    pub seed: u64,
    /// Measured scripted success rate over the collected episodes.
    pub success_rate: f64,
    /// Transition index where each episode begins.
    pub episode_starts: Vec<usize>,
}

/// A per-skill offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

/// Pre-noise scripted action: proportional pose error beyond the
/// threshold, then a gripper toggle, then zero.
pub fn scripted_action(
    ee: &WorldState,
    target: &WorldState,
    gripper_target: GripperGoal,
    threshold: f64,
    cfg: &SimConfig,
) -> Action {
    let pos_err = [
        target.ee_pos[0] - ee.ee_pos[0],
        target.ee_pos[1] - ee.ee_pos[1],
        target.ee_pos[2] - ee.ee_pos[2],
    ];
    let pos_dist = (pos_err[0] * pos_err[0] + pos_err[1] * pos_err[1] + pos_err[2] * pos_err[2])
        .sqrt();
    let ang_err = quat::euler_error(&ee.ee_quat, &target.ee_quat);
    let ang_dist = ang_err.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if pos_dist.max(ang_dist) > threshold {
        return Action {
            d_pos: pos_err,
            d_ori: ang_err,
            g_cmd: 0.0,
        };
    }
    let matched = match gripper_target {
        GripperGoal::Open => cfg.gripper_is_open(ee.g_gap),
        GripperGoal::Closed => cfg.gripper_is_closed(ee.g_gap, ee.g_force),
    };
    if !matched {
        return Action {
            d_pos: [0.0; 3],
            d_ori: [0.0; 3],
            g_cmd: match gripper_target {
                GripperGoal::Open => 1.0,
                GripperGoal::Closed => -1.0,
            },
        };
    }
    Action::ZERO
}

/// Sample an episode start inside the skill's initiation region: a ball
/// of `radius` around the start anchor with a small orientation spread.
pub fn sample_start(
    skill: &SkillSpec,
    radius: f64,
    ang_spread: f64,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> (WorldState, EnvFeatures) {
    let mut s = skill.start;
    // Uniform in the ball by rejection.
    loop {
        let off = [
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
        ];
        if off[0] * off[0] + off[1] * off[1] + off[2] * off[2] <= radius * radius {
            for k in 0..3 {
                s.ee_pos[k] = (skill.start.ee_pos[k] + off[k])
                    .clamp(cfg.workspace_min[k], cfg.workspace_max[k]);
            }
            break;
        }
    }
    if ang_spread > 0.0 {
        let dq = quat::from_euler(
            rng.gen_range(-ang_spread..=ang_spread),
            rng.gen_range(-ang_spread..=ang_spread),
            rng.gen_range(-ang_spread..=ang_spread),
        );
        s.ee_quat = quat::multiply(&skill.start.ee_quat, &dq);
        quat::normalize(&mut s.ee_quat);
    }
    let mut env = skill.start_env;
    if env.cube_grasped {
        env.cube_pos = s.ee_pos;
    }
    (s, env)
}

/// Check intermediate reward-state attainment (pose + gripper only; the
/// final target's reward comes from the simulator's task).
fn target_attained(s: &WorldState, t: &WorldState, g: GripperGoal, cfg: &SimConfig) -> bool {
    GoalRegion {
        pos: t.ee_pos,
        quat: t.ee_quat,
        pos_tol: crate::catalog::BETA_POS_TOL,
        ang_tol: crate::catalog::BETA_ANG_TOL,
        gripper: Some(g),
    }
    .contains(s, cfg)
}

/// Run one scripted episode on an already-reset simulator. The caller
/// must have set the skill's task with an appropriate step budget.
/// Returns the recorded transitions and whether every reward state was
/// attained.
pub fn run_sequence_episode(
    sim: &mut Simulator,
    skill: &SkillSpec,
    noise: &NoiseParams,
) -> Result<(Vec<Transition>, bool)> {
    let cfg = sim.config().clone();
    let threshold = sim.sample_normal(noise.mu1, noise.sigma1).max(0.001);
    let last_idx = skill.targets.len() - 1;
    let mut attained = vec![false; skill.targets.len()];
    let mut transitions = Vec::new();
    let mut finished = false;

    'targets: for (ti, target) in skill.targets.iter().enumerate() {
        for _ in 0..noise.num_timesteps {
            let s = *sim.state();
            let base = scripted_action(&s, &target.state, target.gripper, threshold, &cfg);
            if base == Action::ZERO && ti < last_idx {
                // Target reached and gripper matched: move on.
                break;
            }
            let mut v = base.to_vec();
            for c in v.iter_mut() {
                *c += sim.sample_normal(noise.mu2, noise.sigma2);
            }
            let a = Action::from_vec(&v)?;
            let r = sim.step(&a)?;

            let mut reward = r.reward;
            for &ri in &skill.reward_states {
                if ri == last_idx {
                    continue; // covered by the simulator's task reward
                }
                let t = &skill.targets[ri];
                if target_attained(&r.state, &t.state, t.gripper, &cfg) {
                    reward = 1;
                    attained[ri] = true;
                }
            }
            if r.reward == 1 {
                attained[last_idx] = true;
            }
            transitions.push(Transition {
                s,
                a,
                r: reward,
                s_next: r.state,
                done: r.done,
            });
            if r.done {
                finished = true;
                break 'targets;
            }
        }
    }
    let _ = finished;
    let success = skill.reward_states.iter().all(|&ri| attained[ri]);
    Ok((transitions, success))
}

/// Measure the scripted success rate over `episodes` episodes.
pub fn measure_success(
    sim: &mut Simulator,
    skill: &SkillSpec,
    noise: &NoiseParams,
    episodes: u32,
    seed: u64,
) -> Result<f64> {
    let mut wins = 0u32;
    let mut start_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_1234);
    for ep in 0..episodes {
        let (start, env) = sample_start(skill, skill.collect_radius, 0.1, sim.config(), &mut start_rng);
        sim.reset(&start, &env, seed.wrapping_add(ep as u64).wrapping_mul(0x9e37_79b9))?;
        sim.set_task(skill.task, noise.num_timesteps * skill.targets.len() as u32);
        let (_, success) = run_sequence_episode(sim, skill, noise)?;
        if success {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes as f64)
}

/// Bisection over the action-noise scale until the measured scripted
/// success rate over `episodes` episodes lands inside `band`.
pub fn calibrate_noise(
    sim: &mut Simulator,
    skill: &SkillSpec,
    band: (f64, f64),
    episodes: u32,
    seed: u64,
) -> Result<NoiseParams> {
    if !(0.0 < band.0 && band.0 < band.1 && band.1 < 1.0) {
        return Err(Error::rejected("band must be within (0, 1)"));
    }
    let mut noise = NoiseParams { sigma2: 0.0, ..NoiseParams::default() };
    let clean = measure_success(sim, skill, &noise, episodes, seed)?;
    if clean < band.0 {
        return Err(Error::Calibration(format!(
            "skill {} noiseless success {clean:.3} below band",
            skill.id
        )));
    }
    if clean <= band.1 {
        return Ok(noise);
    }

    // Find an upper bracket where success drops below the band.
    let mut lo = 0.0f64;
    let mut hi = 0.02f64;
    for _ in 0..12 {
        noise.sigma2 = hi;
        let rate = measure_success(sim, skill, &noise, episodes, seed)?;
        if rate < band.0 {
            break;
        }
        if rate <= band.1 {
            return Ok(noise);
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        noise.sigma2 = mid;
        let rate = measure_success(sim, skill, &noise, episodes, seed)?;
        if rate < band.0 {
            hi = mid;
        } else if rate > band.1 {
            lo = mid;
        } else {
            return Ok(noise);
        }
    }
    Err(Error::Calibration(format!(
        "skill {} did not settle into [{:.2}, {:.2}]",
        skill.id, band.0, band.1
    )))
}

/// Collect a dataset of exactly `episodes` scripted episodes.
pub fn collect_skill_dataset(
    sim: &mut Simulator,
    skill: &SkillSpec,
    noise: &NoiseParams,
    episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::rejected("need at least one episode"));
    }
    let mut transitions = Vec::new();
    let mut episode_starts = Vec::with_capacity(episodes);
    let mut wins = 0usize;
    let mut start_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_1234);
    for ep in 0..episodes {
        let (start, env) = sample_start(skill, skill.collect_radius, 0.1, sim.config(), &mut start_rng);
        sim.reset(&start, &env, seed.wrapping_add(ep as u64).wrapping_mul(0x9e37_79b9))?;
        sim.set_task(skill.task, noise.num_timesteps * skill.targets.len() as u32);
        episode_starts.push(transitions.len());
        let (mut eps, success) = run_sequence_episode(sim, skill, noise)?;
        transitions.append(&mut eps);
        if success {
            wins += 1;
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            skill_id: skill.id,
            episodes,
            noise: *noise,
            seed,
            success_rate: wins as f64 / episodes as f64,
            episode_starts,
        },
        transitions,
    })
}

/// Relabel movement-skill datasets into the classifier's training set:
/// every transition contributes its `s` state once, labeled with a class
/// index `0..6` (movement skill ids in ascending order), merged and
/// shuffled under `seed`.
pub fn build_classifier_dataset(
    datasets: &[&Dataset],
    movement_skill_ids: &[u32],
    seed: u64,
) -> Result<(Vec<([f64; 10], usize)>, Vec<u32>)> {
    let mut ids: Vec<u32> = movement_skill_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != 6 {
        return Err(Error::rejected("exactly 6 movement skill ids required"));
    }
    let present: Vec<u32> = datasets.iter().map(|d| d.meta.skill_id).collect();
    for id in &ids {
        if !present.contains(id) {
            return Err(Error::rejected(format!("no dataset for movement skill {id}")));
        }
    }
    let mut out = Vec::new();
    for ds in datasets {
        if let Some(class) = ids.iter().position(|&id| id == ds.meta.skill_id) {
            for t in &ds.transitions {
                out.push((t.s.to_vec(), class));
            }
        }
    }
    // Fisher-Yates under the given seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..out.len()).rev() {
        let j = rng.gen_range(0..=i);
        out.swap(i, j);
    }
    Ok((out, ids))
}

// ---- line-delimited persistence -------------------------------------

fn push_f64(buf: &mut String, v: f64) {
    // 17 significant digits round-trips f64 exactly.
    let _ = write!(buf, " {:.16e}", v);
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.meta)?);
        out.push('\n');
        for t in &self.transitions {
            let mut line = String::new();
            for v in t.s.to_vec() {
                push_f64(&mut line, v);
            }
            for v in t.a.to_vec() {
                push_f64(&mut line, v);
            }
            let _ = write!(line, " {}", t.r);
            for v in t.s_next.to_vec() {
                push_f64(&mut line, v);
            }
            let _ = write!(line, " {}", u8::from(t.done));
            out.push_str(line.trim_start());
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::rejected("empty dataset file"))?;
        let meta: DatasetMeta = serde_json::from_str(header)?;
        let mut transitions = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::rejected(format!("line {}: {e}", n + 2)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 29 {
                return Err(Error::rejected(format!(
                    "line {}: expected 29 fields, got {}",
                    n + 2,
                    vals.len()
                )));
            }
            transitions.push(Transition {
                s: WorldState::from_vec(&vals[0..10])?,
                a: Action::from_vec(&vals[10..17])?,
                r: vals[17] as u8,
                s_next: WorldState::from_vec(&vals[18..28])?,
                done: vals[28] != 0.0,
            });
        }
        Ok(Dataset { meta, transitions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;

    fn world() -> (Catalog, Simulator) {
        let cat = Catalog::builtin();
        let sim = Simulator::new(cat.sim.clone()).unwrap();
        (cat, sim)
    }

    #[test]
    fn scripted_action_is_state_error_beyond_threshold() {
        let (cat, _) = world();
        let s1 = cat.skill(1).unwrap();
        let ee = s1.start;
        let target = &s1.targets[0].state;
        let a = scripted_action(&ee, target, GripperGoal::Open, 0.05, &cat.sim);
        for k in 0..3 {
            assert_eq!(a.d_pos[k], target.ee_pos[k] - ee.ee_pos[k]);
        }
        assert_eq!(a.g_cmd, 0.0);
    }

    #[test]
    fn scripted_action_toggles_gripper_at_target() {
        let (cat, _) = world();
        let mut ee = cat.skill(1).unwrap().targets[0].state;
        ee.g_gap = cat.sim.gap_max; // open
        let a = scripted_action(&ee, &ee.clone(), GripperGoal::Closed, 0.05, &cat.sim);
        assert_eq!(a.d_pos, [0.0; 3]);
        assert_eq!(a.g_cmd, -1.0);
    }

    #[test]
    fn scripted_action_zero_when_done() {
        let (cat, _) = world();
        let ee = cat.skill(1).unwrap().targets[0].state; // open gripper anchor
        let a = scripted_action(&ee, &ee.clone(), GripperGoal::Open, 0.05, &cat.sim);
        assert_eq!(a, Action::ZERO);
    }

    #[test]
    fn noiseless_scripted_episode_succeeds() {
        let (cat, mut sim) = world();
        let skill = cat.skill(1).unwrap();
        let noise = NoiseParams { sigma1: 0.0, sigma2: 0.0, ..NoiseParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (start, env) = sample_start(skill, 0.0, 0.0, &cat.sim, &mut rng);
        sim.reset(&start, &env, 5).unwrap();
        sim.set_task(skill.task, noise.num_timesteps);
        let (eps, success) = run_sequence_episode(&mut sim, skill, &noise).unwrap();
        assert!(success, "scripted movement episode failed");
        // Reward only on the attaining transition.
        let total: u32 = eps.iter().map(|t| t.r as u32).sum();
        assert_eq!(total, 1);
        assert!(eps.last().unwrap().r == 1);
    }

    #[test]
    fn all_twelve_skills_succeed_noiselessly() {
        let (cat, mut sim) = world();
        let noise = NoiseParams { sigma1: 0.0, sigma2: 0.0, ..NoiseParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for skill in &cat.skills {
            let (start, env) = sample_start(skill, 0.0, 0.0, &cat.sim, &mut rng);
            sim.reset(&start, &env, 11).unwrap();
            sim.set_task(skill.task, noise.num_timesteps * skill.targets.len() as u32);
            let (_, success) = run_sequence_episode(&mut sim, skill, &noise).unwrap();
            assert!(success, "skill {} ({}) failed noiselessly", skill.id, skill.name);
        }
    }

    #[test]
    fn episodes_replay_identically_under_a_seed() {
        let (cat, mut sim) = world();
        let skill = cat.skill(3).unwrap();
        let noise = NoiseParams::default();
        let run = |sim: &mut Simulator| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (start, env) = sample_start(skill, skill.collect_radius, 0.1, &cat.sim, &mut rng);
            sim.reset(&start, &env, 123).unwrap();
            sim.set_task(skill.task, noise.num_timesteps);
            run_sequence_episode(sim, skill, &noise).unwrap()
        };
        let (a, sa) = run(&mut sim);
        let (b, sb) = run(&mut sim);
        assert_eq!(sa, sb);
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_measurement_is_near_one() {
        let (cat, mut sim) = world();
        let skill = cat.skill(2).unwrap();
        let noise = NoiseParams { sigma2: 0.0, ..NoiseParams::default() };
        let rate = measure_success(&mut sim, skill, &noise, 50, 3).unwrap();
        assert!(rate > 0.97, "rate {rate}");
    }

    #[test]
    fn calibration_rejects_unreachable_target() {
        let (cat, mut sim) = world();
        let mut skill = cat.skill(1).unwrap().clone();
        // Push the target outside the workspace; the clamp makes it
        // unattainable for the scripted controller.
        skill.targets[0].state.ee_pos = [0.999, 0.999, 0.999];
        skill.task.goal_region.as_mut().unwrap().pos = [1.2, 1.2, 1.2];
        match calibrate_noise(&mut sim, &skill, (0.40, 0.50), 30, 4) {
            Err(Error::Calibration(_)) => {}
            other => panic!("expected calibration error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip_is_value_exact() {
        let (cat, mut sim) = world();
        let skill = cat.skill(1).unwrap();
        let ds = collect_skill_dataset(&mut sim, skill, &NoiseParams::default(), 20, 7).unwrap();
        assert_eq!(ds.meta.episodes, 20);
        assert_eq!(ds.meta.episode_starts.len(), 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skill1.ds");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn classifier_dataset_counts_and_labels() {
        let (cat, mut sim) = world();
        let noise = NoiseParams::default();
        let mut sets = Vec::new();
        for id in 1..=6u32 {
            sets.push(collect_skill_dataset(&mut sim, cat.skill(id).unwrap(), &noise, 5, id as u64).unwrap());
        }
        // A non-movement dataset must be excluded.
        sets.push(collect_skill_dataset(&mut sim, cat.skill(7).unwrap(), &noise, 5, 70).unwrap());
        let refs: Vec<&Dataset> = sets.iter().collect();
        let (labeled, ids) = build_classifier_dataset(&refs, &[1, 2, 3, 4, 5, 6], 99).unwrap();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6]);
        let expected: usize = sets[..6].iter().map(|d| d.transitions.len()).sum();
        assert_eq!(labeled.len(), expected);
        // Each class label maps back to the source skill.
        for class in 0..6 {
            assert!(labeled.iter().any(|(_, c)| *c == class));
        }
        // Label-state consistency for one class: every skill-3 state
        // appears with label 2 (0-based class of id 3).
        let from_three: Vec<[f64; 10]> =
            sets[2].transitions.iter().map(|t| t.s.to_vec()).collect();
        for s in from_three.iter().take(10) {
            assert!(labeled.iter().any(|(x, c)| x == s && *c == 2));
        }
    }

    #[test]
    fn classifier_dataset_requires_six_ids() {
        let (cat, mut sim) = world();
        let ds = collect_skill_dataset(&mut sim, cat.skill(1).unwrap(), &NoiseParams::default(), 2, 1).unwrap();
        let refs = vec![&ds];
        assert!(build_classifier_dataset(&refs, &[1, 2, 3], 0).is_err());
        assert!(build_classifier_dataset(&refs, &[1, 2, 3, 4, 5, 6], 0).is_err());
    }
}
