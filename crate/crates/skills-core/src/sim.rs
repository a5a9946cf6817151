//! Deterministic kinematic kitchen world.
//!
//! A free-flying end effector with a two-finger gripper, one sliding
//! cabinet door, one movable cube and a cabinet interior. There is no
//! contact physics: grasping is proximity-based, a held cube tracks the
//! end effector rigidly, and the single collision rule is that the cube
//! cannot enter the cabinet region while the door is closed.
//!
//! The inverse-kinematics joint drift of a real arm is modeled by a bias
//! vector that grows with distance traveled and is added to every
//! realized motion until a controller reset clears it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::{self, Quat};

/// 10-dim robot observation: position, orientation quaternion, gripper
/// triple (last command, contact force, finger gap).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pos: [f64; 3],
    pub ee_quat: Quat,
    pub g_cmd: f64,
    pub g_force: f64,
    pub g_gap: f64,
}

impl WorldState {
    pub fn to_vec(&self) -> [f64; 10] {
        [
            self.ee_pos[0],
            self.ee_pos[1],
            self.ee_pos[2],
            self.ee_quat[0],
            self.ee_quat[1],
            self.ee_quat[2],
            self.ee_quat[3],
            self.g_cmd,
            self.g_force,
            self.g_gap,
        ]
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 10 {
            return Err(Error::contract("world state needs 10 components"));
        }
        Ok(WorldState {
            ee_pos: [v[0], v[1], v[2]],
            ee_quat: [v[3], v[4], v[5], v[6]],
            g_cmd: v[7],
            g_force: v[8],
            g_gap: v[9],
        })
    }
}

/// 7-dim relative command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub d_pos: [f64; 3],
    pub d_ori: [f64; 3],
    pub g_cmd: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        d_pos: [0.0; 3],
        d_ori: [0.0; 3],
        g_cmd: 0.0,
    };

    pub fn to_vec(&self) -> [f64; 7] {
        [
            self.d_pos[0],
            self.d_pos[1],
            self.d_pos[2],
            self.d_ori[0],
            self.d_ori[1],
            self.d_ori[2],
            self.g_cmd,
        ]
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 7 {
            return Err(Error::contract("action needs 7 components"));
        }
        Ok(Action {
            d_pos: [v[0], v[1], v[2]],
            d_ori: [v[3], v[4], v[5]],
            g_cmd: v[6],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }
}

/// Symbolic-relevant environment features outside the robot state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvFeatures {
    /// 0 closed, 1 fully open.
    pub door_frac: f64,
    pub cube_pos: [f64; 3],
    pub cube_grasped: bool,
    pub cube_in_cabinet: bool,
}

/// Boolean environment facts used by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EffectState {
    pub door_open: bool,
    pub cube_held: bool,
    pub cube_in_cabinet: bool,
    pub cube_on_counter: bool,
}

impl EffectState {
    /// At most one of held / on-counter / in-cabinet may be true.
    pub fn is_consistent(&self) -> bool {
        [self.cube_held, self.cube_on_counter, self.cube_in_cabinet]
            .iter()
            .filter(|&&b| b)
            .count()
            <= 1
    }
}

/// Partial assignment over [`EffectState`]; `None` means "don't care".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FactGoal {
    pub door_open: Option<bool>,
    pub cube_held: Option<bool>,
    pub cube_in_cabinet: Option<bool>,
    pub cube_on_counter: Option<bool>,
}

impl FactGoal {
    pub fn satisfied_by(&self, s: &EffectState) -> bool {
        self.door_open.map_or(true, |v| s.door_open == v)
            && self.cube_held.map_or(true, |v| s.cube_held == v)
            && self.cube_in_cabinet.map_or(true, |v| s.cube_in_cabinet == v)
            && self.cube_on_counter.map_or(true, |v| s.cube_on_counter == v)
    }

    pub fn is_empty(&self) -> bool {
        *self == FactGoal::default()
    }

    /// Apply this partial assignment to `s` (used for option effects).
    pub fn apply_to(&self, s: &mut EffectState) {
        if let Some(v) = self.door_open {
            s.door_open = v;
        }
        if let Some(v) = self.cube_held {
            s.cube_held = v;
        }
        if let Some(v) = self.cube_in_cabinet {
            s.cube_in_cabinet = v;
        }
        if let Some(v) = self.cube_on_counter {
            s.cube_on_counter = v;
        }
    }
}

/// Desired gripper configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperGoal {
    Open,
    Closed,
}

/// Pose region plus gripper requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub pos: [f64; 3],
    pub quat: Quat,
    pub pos_tol: f64,
    /// Max absolute relative-Euler component.
    pub ang_tol: f64,
    pub gripper: Option<GripperGoal>,
}

impl GoalRegion {
    pub fn contains(&self, s: &WorldState, cfg: &SimConfig) -> bool {
        let d = dist3(&self.pos, &s.ee_pos);
        if d > self.pos_tol {
            return false;
        }
        if quat::angle_error(&s.ee_quat, &self.quat) > self.ang_tol {
            return false;
        }
        match self.gripper {
            None => true,
            Some(GripperGoal::Open) => cfg.gripper_is_open(s.g_gap),
            Some(GripperGoal::Closed) => cfg.gripper_is_closed(s.g_gap, s.g_force),
        }
    }
}

/// Binary-reward task: reward 1 iff the goal region (when present) and
/// all required facts hold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal_region: Option<GoalRegion>,
    pub required_effects: FactGoal,
}

impl TaskSpec {
    pub fn reward(&self, s: &WorldState, facts: &EffectState, cfg: &SimConfig) -> u8 {
        let region_ok = self.goal_region.map_or(true, |g| g.contains(s, cfg));
        let facts_ok = self.required_effects.satisfied_by(facts);
        u8::from(region_ok && facts_ok)
    }
}

/// World geometry and dynamics constants. All lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    /// Per-axis position step clip.
    pub pos_step_limit: f64,
    /// Per-axis orientation step clip (radians).
    pub ang_step_limit: f64,
    pub grasp_radius: f64,
    pub gap_max: f64,
    /// Steps for a full close or open sweep of the gripper.
    pub close_steps: u32,
    pub nominal_force: f64,
    /// Handle position with the door closed.
    pub handle_closed_pos: [f64; 3],
    /// Unit vector the door slides along.
    pub door_axis: [f64; 3],
    pub door_travel: f64,
    /// Finger gap when closed on the handle.
    pub handle_gap: f64,
    pub cabinet_min: [f64; 3],
    pub cabinet_max: [f64; 3],
    /// The cube may only pass into the cabinet above this door fraction.
    pub door_pass_threshold: f64,
    /// Cube edge length.
    pub cube_size: f64,
    /// Pose bias accumulated per meter traveled.
    pub drift_rate: f64,
    /// Unit direction of the drift bias.
    pub drift_dir: [f64; 3],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            workspace_min: [0.0; 3],
            workspace_max: [1.0; 3],
            pos_step_limit: 0.05,
            ang_step_limit: 0.1,
            grasp_radius: 0.03,
            gap_max: 0.08,
            close_steps: 5,
            nominal_force: 10.0,
            handle_closed_pos: [0.40, 0.68, 0.25],
            door_axis: [0.0, 1.0, 0.0],
            door_travel: 0.25,
            handle_gap: 0.02,
            cabinet_min: [0.05, 0.65, 0.05],
            cabinet_max: [0.35, 0.95, 0.45],
            door_pass_threshold: 0.8,
            cube_size: 0.04,
            drift_rate: 0.002,
            drift_dir: [0.6, 0.64, 0.48],
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn handle_pos(&self, door_frac: f64) -> [f64; 3] {
        let mut p = self.handle_closed_pos;
        for k in 0..3 {
            p[k] += self.door_axis[k] * self.door_travel * door_frac;
        }
        p
    }

    pub fn in_cabinet(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.cabinet_min[k] && p[k] <= self.cabinet_max[k])
    }

    pub fn in_workspace(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.workspace_min[k] && p[k] <= self.workspace_max[k])
    }

    /// Closed means the fingers have stopped on an object (grip force
    /// present) or are fully shut on air. A mid-sweep gap is neither
    /// open nor closed.
    pub fn gripper_is_closed(&self, gap: f64, force: f64) -> bool {
        force > 0.0 || gap <= 1e-6
    }

    pub fn gripper_is_open(&self, gap: f64) -> bool {
        gap >= 0.8 * self.gap_max
    }

    pub fn validate(&self) -> Result<()> {
        let regions = [
            self.handle_closed_pos,
            self.handle_pos(1.0),
            self.cabinet_min,
            self.cabinet_max,
        ];
        for p in &regions {
            if !self.in_workspace(p) {
                return Err(Error::rejected("geometry outside workspace"));
            }
        }
        if self.drift_rate < 0.0 {
            return Err(Error::rejected("drift_rate must be non-negative"));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Result of one simulator step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub state: WorldState,
    pub env: EnvFeatures,
    pub reward: u8,
    pub done: bool,
}

/// One stateful, single-threaded world instance.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    state: WorldState,
    door_frac: f64,
    cube_pos: [f64; 3],
    cube_grasped: bool,
    handle_grasped: bool,
    drift: [f64; 3],
    rng: ChaCha8Rng,
    task: TaskSpec,
    step_budget: u32,
    steps_taken: u32,
    live: bool,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        Ok(Simulator {
            config,
            state: WorldState {
                ee_pos: [0.5; 3],
                ee_quat: quat::IDENTITY,
                g_cmd: 0.0,
                g_force: 0.0,
                g_gap: 0.08,
            },
            door_frac: 0.0,
            cube_pos: [0.0; 3],
            cube_grasped: false,
            handle_grasped: false,
            drift: [0.0; 3],
            rng: rand::SeedableRng::seed_from_u64(seed),
            task: TaskSpec::default(),
            step_budget: u32::MAX,
            steps_taken: 0,
            live: false,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Put the world in exactly the given state. Clears accumulated drift
    /// and reseeds the deterministic stream from `seed`.
    pub fn reset(&mut self, start: &WorldState, env: &EnvFeatures, seed: u64) -> Result<WorldState> {
        if !self.config.in_workspace(&start.ee_pos) {
            return Err(Error::rejected("start position outside workspace"));
        }
        if (quat::norm(&start.ee_quat) - 1.0).abs() > 1e-9 {
            return Err(Error::rejected("start quaternion is not unit"));
        }
        if !(-1.0..=1.0).contains(&start.g_cmd) {
            return Err(Error::rejected("gripper command outside [-1, 1]"));
        }
        if start.g_gap < 0.0 || start.g_gap > self.config.gap_max {
            return Err(Error::rejected("finger gap outside [0, gap_max]"));
        }
        if !(0.0..=1.0).contains(&env.door_frac) {
            return Err(Error::rejected("door fraction outside [0, 1]"));
        }
        if env.cube_grasped && dist3(&env.cube_pos, &start.ee_pos) > 1e-12 {
            return Err(Error::rejected("grasped cube must sit at the end effector"));
        }

        // Handle grasp is implied by fingers shut to the handle width at
        // the handle.
        let handle = self.config.handle_pos(env.door_frac);
        let handle_grasped = !env.cube_grasped
            && start.g_gap <= self.config.handle_gap + 1e-9
            && dist3(&start.ee_pos, &handle) <= self.config.grasp_radius;
        if start.g_force > 0.0 && !(env.cube_grasped || handle_grasped) {
            return Err(Error::rejected("grip force requires a held object"));
        }

        self.state = *start;
        self.door_frac = env.door_frac;
        self.cube_pos = env.cube_pos;
        self.cube_grasped = env.cube_grasped;
        self.handle_grasped = handle_grasped;
        self.drift = [0.0; 3];
        self.rng = rand::SeedableRng::seed_from_u64(seed);
        self.steps_taken = 0;
        self.live = true;
        Ok(self.state)
    }

    pub fn set_task(&mut self, task: TaskSpec, step_budget: u32) {
        self.task = task;
        self.step_budget = step_budget;
        self.steps_taken = 0;
    }

    /// Clear accumulated drift (the controller's joint-configuration
    /// reset between skills).
    pub fn clear_drift(&mut self) {
        self.drift = [0.0; 3];
    }

    pub fn drift_magnitude(&self) -> f64 {
        dist3(&self.drift, &[0.0; 3])
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Current symbolic-relevant features; pure read.
    pub fn read_effects(&self) -> EnvFeatures {
        EnvFeatures {
            door_frac: self.door_frac,
            cube_pos: self.cube_pos,
            cube_grasped: self.cube_grasped,
            cube_in_cabinet: !self.cube_grasped && self.config.in_cabinet(&self.cube_pos),
        }
    }

    /// Boolean facts derived from the current features.
    pub fn effect_state(&self) -> EffectState {
        let env = self.read_effects();
        EffectState {
            door_open: env.door_frac >= self.config.door_pass_threshold,
            cube_held: env.cube_grasped,
            cube_in_cabinet: env.cube_in_cabinet,
            cube_on_counter: !env.cube_grasped && !env.cube_in_cabinet,
        }
    }

    /// True state with i.i.d. zero-mean Gaussian noise of scale
    /// `noise_sigma` on the position components only.
    pub fn observe(&mut self, noise_sigma: f64) -> Result<WorldState> {
        if !self.live {
            return Err(Error::contract("observe before reset"));
        }
        if noise_sigma < 0.0 {
            return Err(Error::rejected("noise sigma must be non-negative"));
        }
        let mut s = self.state;
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).unwrap();
            for k in 0..3 {
                s.ee_pos[k] += normal.sample(&mut self.rng);
            }
        }
        Ok(s)
    }

    /// Gaussian sample from the simulator's deterministic stream (used by
    /// the scripted data collector so a single seed fixes the episode).
    pub fn sample_normal(&mut self, mu: f64, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return mu;
        }
        Normal::new(mu, sigma).unwrap().sample(&mut self.rng)
    }

    pub fn sample_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.gen_range(lo..hi)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.live {
            return Err(Error::contract("step before reset"));
        }
        if !action.is_finite() {
            return Err(Error::contract("non-finite action"));
        }
        let cfg = self.config.clone();

        // Gripper update.
        let g_cmd = action.g_cmd.clamp(-1.0, 1.0);
        self.state.g_cmd = g_cmd;
        let sweep = cfg.gap_max / cfg.close_steps as f64;
        if g_cmd < -0.5 {
            let floor = if self.cube_grasped {
                cfg.cube_size
            } else if self.handle_grasped {
                cfg.handle_gap
            } else {
                // Closing onto a reachable object stops at its width and
                // engages the grasp.
                let cube_near = dist3(&self.state.ee_pos, &self.cube_pos) <= cfg.grasp_radius
                    && !cfg.in_cabinet(&self.cube_pos);
                let handle_near =
                    dist3(&self.state.ee_pos, &cfg.handle_pos(self.door_frac)) <= cfg.grasp_radius;
                if cube_near {
                    cfg.cube_size
                } else if handle_near {
                    cfg.handle_gap
                } else {
                    0.0
                }
            };
            let new_gap = (self.state.g_gap - sweep).max(floor);
            if new_gap <= floor + 1e-12 && !self.cube_grasped && !self.handle_grasped {
                if floor == cfg.cube_size
                    && dist3(&self.state.ee_pos, &self.cube_pos) <= cfg.grasp_radius
                {
                    self.cube_grasped = true;
                    self.cube_pos = self.state.ee_pos;
                } else if floor == cfg.handle_gap
                    && dist3(&self.state.ee_pos, &cfg.handle_pos(self.door_frac))
                        <= cfg.grasp_radius
                {
                    self.handle_grasped = true;
                }
            }
            self.state.g_gap = new_gap;
        } else if g_cmd > 0.5 {
            self.state.g_gap = (self.state.g_gap + sweep).min(cfg.gap_max);
            if self.cube_grasped || self.handle_grasped {
                self.cube_grasped = false;
                self.handle_grasped = false;
            }
        }
        self.state.g_force = if self.cube_grasped || self.handle_grasped {
            cfg.nominal_force
        } else {
            0.0
        };

        // Position update.
        let mut desired = [0.0; 3];
        for k in 0..3 {
            desired[k] = action.d_pos[k].clamp(-cfg.pos_step_limit, cfg.pos_step_limit);
        }
        if self.handle_grasped {
            // Constrained to the handle track: motion along the door axis
            // drags the door, everything else is absorbed.
            let along = desired[0] * cfg.door_axis[0]
                + desired[1] * cfg.door_axis[1]
                + desired[2] * cfg.door_axis[2];
            self.door_frac = (self.door_frac + along / cfg.door_travel).clamp(0.0, 1.0);
            self.state.ee_pos = cfg.handle_pos(self.door_frac);
        } else {
            let moved = dist3(&desired, &[0.0; 3]);
            for k in 0..3 {
                self.drift[k] += cfg.drift_rate * moved * cfg.drift_dir[k];
            }
            let mut candidate = self.state.ee_pos;
            for k in 0..3 {
                candidate[k] += desired[k] + self.drift[k];
                candidate[k] = candidate[k].clamp(cfg.workspace_min[k], cfg.workspace_max[k]);
            }
            // Collision gate: the held cube cannot pass into the cabinet
            // while the door is closed.
            let blocked = self.cube_grasped
                && self.door_frac < cfg.door_pass_threshold
                && cfg.in_cabinet(&candidate)
                && !cfg.in_cabinet(&self.state.ee_pos);
            if !blocked {
                self.state.ee_pos = candidate;
            }
            if self.cube_grasped {
                self.cube_pos = self.state.ee_pos;
            }
        }

        // Orientation update.
        let mut d_ori = [0.0; 3];
        for k in 0..3 {
            d_ori[k] = action.d_ori[k].clamp(-cfg.ang_step_limit, cfg.ang_step_limit);
        }
        let dq = quat::from_euler(d_ori[0], d_ori[1], d_ori[2]);
        self.state.ee_quat = quat::multiply(&self.state.ee_quat, &dq);
        quat::normalize(&mut self.state.ee_quat);

        self.steps_taken += 1;
        let env = self.read_effects();
        let facts = self.effect_state();
        let reward = self.task.reward(&self.state, &facts, &cfg);
        let done = reward == 1 || self.steps_taken >= self.step_budget;
        Ok(StepResult {
            state: self.state,
            env,
            reward,
            done,
        })
    }

    /// Finish any gripper actuation still in flight under the latched
    /// command. The open predicate fires at 80% of full gap, so a skill
    /// can terminate while the release sweep is mid-flight; holding the
    /// last command until the gap stops moving leaves the gripper
    /// quiescent for the next controller. After an open command with
    /// nothing held, the command line returns to neutral, matching the
    /// rest configuration skills start from. Returns the steps taken.
    pub fn settle_gripper(&mut self) -> Result<u32> {
        let mut steps = 0u32;
        if self.state.g_cmd.abs() > 0.5 {
            let hold = Action {
                g_cmd: self.state.g_cmd,
                ..Action::ZERO
            };
            let mut gap = self.state.g_gap;
            for _ in 0..=self.config.close_steps {
                self.step(&hold)?;
                steps += 1;
                if self.state.g_gap == gap {
                    break;
                }
                gap = self.state.g_gap;
            }
        }
        if self.state.g_cmd > 0.5 && self.state.g_force == 0.0 {
            self.state.g_cmd = 0.0;
        }
        Ok(steps)
    }
}
