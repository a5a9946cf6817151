//! Offline skill learning: a TD3+BC-style actor-critic trained per
//! skill on its fixed demonstration dataset, plus the noise-robustness
//! evaluator.
//!
//! The actor maps a normalized 10-dim world state to a tanh-squashed
//! action in [-1, 1]^7, scaled to the simulator's step limits. Twin
//! critics score normalized (state, action) pairs; the actor loss mixes
//! a normalized Q term with a behavior-cloning regression toward the
//! dataset action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::SkillSpec;
use crate::collect::Dataset;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ForwardCache, Gradients, Mlp, OutputActivation};
use crate::sim::{Action, GoalRegion, Simulator, WorldState};

pub const STATE_DIM: usize = 10;
pub const ACTION_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Td3BcHyper {
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u32,
    pub gradient_steps: u32,
    pub hidden: usize,
    /// Train the actor by behavior cloning only (critics ignored).
    #[serde(default)]
    pub bc_only: bool,
    /// Evaluate the actor (noise-free) every this many gradient steps and
    /// keep the best checkpoint seen. 0 disables checkpoint selection and
    /// returns the final actor.
    #[serde(default)]
    pub checkpoint_every: u32,
    /// Number of training attempts from different parameter
    /// initializations. Attempts after the first run only while the best
    /// checkpoint is below `stop_rate`. Requires `checkpoint_every > 0`
    /// to have any effect.
    #[serde(default = "default_restarts")]
    pub restarts: u32,
    /// Checkpoint success rate at which training stops early.
    #[serde(default = "default_stop_rate")]
    pub stop_rate: f64,
}

fn default_restarts() -> u32 {
    1
}

fn default_stop_rate() -> f64 {
    1.0
}

impl Default for Td3BcHyper {
    fn default() -> Self {
        Td3BcHyper {
            gamma: 0.99,
            tau: 0.005,
            alpha: 2.5,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            gradient_steps: 5000,
            hidden: 128,
            bc_only: false,
            checkpoint_every: 0,
            restarts: 1,
            stop_rate: 1.0,
        }
    }
}

impl Td3BcHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::rejected("gamma must be in (0, 1]"));
        }
        if self.policy_delay < 1 {
            return Err(Error::rejected("policy_delay must be >= 1"));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::rejected("batch_size and hidden must be positive"));
        }
        if self.restarts < 1 {
            return Err(Error::rejected("restarts must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.stop_rate) {
            return Err(Error::rejected("stop_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-dimension input normalization stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn from_rows<'a, I: Iterator<Item = &'a [f64]>>(dim: usize, rows: I) -> Result<Self> {
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        let mut n = 0usize;
        for row in rows {
            n += 1;
            for k in 0..dim {
                let d = row[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        if n == 0 {
            return Err(Error::rejected("empty dataset"));
        }
        let std = m2
            .iter()
            .map(|&v| (v / n as f64).sqrt().max(1e-3))
            .collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for k in 0..raw.len() {
            out[k] = (raw[k] - self.mean[k]) / self.std[k];
        }
    }
}

/// Normalize every state in the dataset; returns the normalized state
/// rows (s then s') and the stats, computed over the union of s and s'.
pub fn normalize_states(dataset: &Dataset) -> Result<(Vec<[f64; STATE_DIM]>, Vec<[f64; STATE_DIM]>, Normalization)> {
    if dataset.transitions.is_empty() {
        return Err(Error::rejected("empty dataset"));
    }
    let rows: Vec<[f64; STATE_DIM]> = dataset.transitions.iter().map(|t| t.s.to_vec()).collect();
    let rows_next: Vec<[f64; STATE_DIM]> =
        dataset.transitions.iter().map(|t| t.s_next.to_vec()).collect();
    let norm = Normalization::from_rows(
        STATE_DIM,
        rows.iter().map(|r| r.as_slice()).chain(rows_next.iter().map(|r| r.as_slice())),
    )?;
    let mut ns = rows;
    let mut nn = rows_next;
    for r in ns.iter_mut().chain(nn.iter_mut()) {
        let raw = *r;
        norm.apply(&raw, r);
    }
    Ok((ns, nn, norm))
}

/// A trained skill policy: the actor, its input normalization, the
/// per-component action scale, and the skill's termination region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPolicy {
    pub skill_id: u32,
    pub actor: Mlp,
    pub norm: Normalization,
    pub action_scale: [f64; ACTION_DIM],
    pub beta: GoalRegion,
}

impl SkillPolicy {
    pub fn act(&self, state: &WorldState, cache: &mut ForwardCache) -> Result<Action> {
        let raw = state.to_vec();
        let mut ns = [0.0; STATE_DIM];
        self.norm.apply(&raw, &mut ns);
        let y = self.actor.forward(&ns, cache)?;
        let mut a = [0.0; ACTION_DIM];
        for k in 0..ACTION_DIM {
            a[k] = y[k] * self.action_scale[k];
        }
        Action::from_vec(&a)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SkillPolicy> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn action_scale(sim: &crate::sim::SimConfig) -> [f64; ACTION_DIM] {
    [
        sim.pos_step_limit,
        sim.pos_step_limit,
        sim.pos_step_limit,
        sim.ang_step_limit,
        sim.ang_step_limit,
        sim.ang_step_limit,
        1.0,
    ]
}

/// Twin critics and the target copies used for bootstrapping.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

/// Everything mutable during a training run. Exposed so property tests
/// can drive single updates with doctored critics.
pub struct Trainer {
    pub hyper: Td3BcHyper,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: CriticPair,
    pub actor_adam: AdamState,
    pub q1_adam: AdamState,
    pub q2_adam: AdamState,
    pub rng: ChaCha8Rng,
    // Normalized dataset views.
    ns: Vec<[f64; STATE_DIM]>,
    ns_next: Vec<[f64; STATE_DIM]>,
    /// Dataset actions normalized to [-1, 1] and clipped.
    na: Vec<[f64; ACTION_DIM]>,
    rewards: Vec<f64>,
    dones: Vec<f64>,
    pub norm: Normalization,
    pub action_scale: [f64; ACTION_DIM],
    critic_step: u64,
    // Scratch.
    cache: ForwardCache,
    cache2: ForwardCache,
    actor_grads: Gradients,
    q1_grads: Gradients,
    q2_grads: Gradients,
    batch: Vec<usize>,
    pi_actions: Vec<[f64; ACTION_DIM]>,
    q_values: Vec<f64>,
    targets: Vec<f64>,
}

/// Loss diagnostics from one update step.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateDiag {
    pub critic_loss: f64,
    pub actor_q: f64,
    pub bc_mse: f64,
    pub lambda: f64,
    pub actor_stepped: bool,
}

impl Trainer {
    pub fn new(dataset: &Dataset, sim: &crate::sim::SimConfig, hyper: Td3BcHyper, seed: u64) -> Result<Trainer> {
        hyper.validate()?;
        let (ns, ns_next, norm) = normalize_states(dataset)?;
        let scale = action_scale(sim);
        let na: Vec<[f64; ACTION_DIM]> = dataset
            .transitions
            .iter()
            .map(|t| {
                let raw = t.a.to_vec();
                let mut a = [0.0; ACTION_DIM];
                for k in 0..ACTION_DIM {
                    a[k] = (raw[k] / scale[k]).clamp(-1.0, 1.0);
                }
                a
            })
            .collect();
        let rewards: Vec<f64> = dataset.transitions.iter().map(|t| t.r as f64).collect();
        let dones: Vec<f64> = dataset
            .transitions
            .iter()
            .map(|t| if t.done { 1.0 } else { 0.0 })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hyper.hidden;
        let actor = Mlp::new(&[STATE_DIM, h, h, ACTION_DIM], OutputActivation::Tanh, &mut rng)?;
        let q_shape = [STATE_DIM + ACTION_DIM, h, h, 1];
        let q1 = Mlp::new(&q_shape, OutputActivation::Linear, &mut rng)?;
        let q2 = Mlp::new(&q_shape, OutputActivation::Linear, &mut rng)?;
        let actor_adam = AdamState::new(&actor, hyper.actor_lr);
        let q1_adam = AdamState::new(&q1, hyper.critic_lr);
        let q2_adam = AdamState::new(&q2, hyper.critic_lr);
        let actor_grads = actor.gradients();
        let q1_grads = q1.gradients();
        let q2_grads = q2.gradients();
        Ok(Trainer {
            hyper,
            actor_target: actor.clone(),
            actor,
            critics: CriticPair {
                q1_target: q1.clone(),
                q2_target: q2.clone(),
                q1,
                q2,
            },
            actor_adam,
            q1_adam,
            q2_adam,
            rng,
            ns,
            ns_next,
            na,
            rewards,
            dones,
            norm,
            action_scale: scale,
            critic_step: 0,
            cache: ForwardCache::new(),
            cache2: ForwardCache::new(),
            actor_grads,
            q1_grads,
            q2_grads,
            batch: Vec::new(),
            pi_actions: Vec::new(),
            q_values: Vec::new(),
            targets: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ns.is_empty()
    }

    fn sample_batch(&mut self) {
        let n = self.ns.len();
        let b = self.hyper.batch_size;
        self.batch.clear();
        for _ in 0..b {
            self.batch.push(self.rng.gen_range(0..n));
        }
    }

    /// Compute the TD targets for the current batch.
    fn compute_targets(&mut self) -> Result<()> {
        let b = self.batch.len();
        self.targets.clear();
        let normal = Normal::new(0.0, self.hyper.policy_noise).map_err(|e| Error::contract(e.to_string()))?;
        let mut input = [0.0; STATE_DIM + ACTION_DIM];
        for bi in 0..b {
            let i = self.batch[bi];
            let sp = &self.ns_next[i];
            let a = self.actor_target.forward(sp, &mut self.cache)?;
            input[..STATE_DIM].copy_from_slice(sp);
            for k in 0..ACTION_DIM {
                let eps = normal
                    .sample(&mut self.rng)
                    .clamp(-self.hyper.noise_clip, self.hyper.noise_clip);
                input[STATE_DIM + k] = (a[k] + eps).clamp(-1.0, 1.0);
            }
            let q1 = self.critics.q1_target.forward(&input, &mut self.cache2)?[0];
            let q2 = self.critics.q2_target.forward(&input, &mut self.cache2)?[0];
            let y = self.rewards[i] + self.hyper.gamma * (1.0 - self.dones[i]) * q1.min(q2);
            self.targets.push(y);
        }
        Ok(())
    }

    /// One TD3+BC update: a critic step, and every `policy_delay`-th
    /// call an actor step followed by target mixing.
    pub fn update(&mut self) -> Result<UpdateDiag> {
        let mut diag = UpdateDiag::default();
        self.sample_batch();
        let b = self.batch.len();
        let inv_b = 1.0 / b as f64;
        let mut input = [0.0; STATE_DIM + ACTION_DIM];

        if !self.hyper.bc_only {
            self.compute_targets()?;
            self.q1_grads.zero();
            self.q2_grads.zero();
            let mut loss = 0.0;
            for bi in 0..b {
                let i = self.batch[bi];
                input[..STATE_DIM].copy_from_slice(&self.ns[i]);
                input[STATE_DIM..].copy_from_slice(&self.na[i]);
                let y = self.targets[bi];
                let q1 = self.critics.q1.forward(&input, &mut self.cache)?[0];
                loss += (q1 - y) * (q1 - y) * inv_b;
                self.critics
                    .q1
                    .backward(&self.cache, &[2.0 * (q1 - y) * inv_b], &mut self.q1_grads, None)?;
                let q2 = self.critics.q2.forward(&input, &mut self.cache)?[0];
                loss += (q2 - y) * (q2 - y) * inv_b;
                self.critics
                    .q2
                    .backward(&self.cache, &[2.0 * (q2 - y) * inv_b], &mut self.q2_grads, None)?;
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "critic loss {loss} at step {}",
                    self.critic_step
                )));
            }
            diag.critic_loss = loss;
            self.q1_adam.step(&mut self.critics.q1, &self.q1_grads)?;
            self.q2_adam.step(&mut self.critics.q2, &self.q2_grads)?;
        }

        self.critic_step += 1;
        if self.critic_step % self.hyper.policy_delay as u64 != 0 {
            return Ok(diag);
        }
        diag.actor_stepped = true;

        // Pass 1: actor actions and Q values for the lambda normalizer.
        self.pi_actions.clear();
        self.q_values.clear();
        for bi in 0..b {
            let i = self.batch[bi];
            let a = self.actor.forward(&self.ns[i], &mut self.cache)?;
            let mut pa = [0.0; ACTION_DIM];
            pa.copy_from_slice(a);
            self.pi_actions.push(pa);
            if !self.hyper.bc_only {
                input[..STATE_DIM].copy_from_slice(&self.ns[i]);
                input[STATE_DIM..].copy_from_slice(&pa);
                let q = self.critics.q1.forward(&input, &mut self.cache2)?[0];
                self.q_values.push(q);
            }
        }
        let lambda = if self.hyper.bc_only {
            0.0
        } else {
            let mean_abs =
                self.q_values.iter().map(|q| q.abs()).sum::<f64>() * inv_b;
            self.hyper.alpha / mean_abs.max(1e-8)
        };
        diag.lambda = lambda;
        if !self.hyper.bc_only {
            diag.actor_q = self.q_values.iter().sum::<f64>() * inv_b;
        }

        // Pass 2: actor gradient = -lambda * dQ1/da + BC regression.
        self.actor_grads.zero();
        let mut bc_mse = 0.0;
        let mut dq_da = [0.0; STATE_DIM + ACTION_DIM];
        let mut unused = Gradients {
            d_weights: self.q1_grads.d_weights.clone(),
            d_biases: self.q1_grads.d_biases.clone(),
        };
        let inv_dim = 1.0 / ACTION_DIM as f64;
        for bi in 0..b {
            let i = self.batch[bi];
            let pa = self.pi_actions[bi];
            let mut out_grad = [0.0; ACTION_DIM];
            if !self.hyper.bc_only {
                input[..STATE_DIM].copy_from_slice(&self.ns[i]);
                input[STATE_DIM..].copy_from_slice(&pa);
                self.critics.q1.forward(&input, &mut self.cache2)?;
                self.critics
                    .q1
                    .backward(&self.cache2, &[1.0], &mut unused, Some(&mut dq_da))?;
                for k in 0..ACTION_DIM {
                    out_grad[k] = -lambda * dq_da[STATE_DIM + k] * inv_b;
                }
            }
            for k in 0..ACTION_DIM {
                let d = pa[k] - self.na[i][k];
                bc_mse += d * d * inv_dim * inv_b;
                out_grad[k] += 2.0 * d * inv_dim * inv_b;
            }
            self.actor.forward(&self.ns[i], &mut self.cache)?;
            self.actor
                .backward(&self.cache, &out_grad, &mut self.actor_grads, None)?;
        }
        if !bc_mse.is_finite() {
            return Err(Error::Divergence(format!(
                "actor loss {bc_mse} at step {}",
                self.critic_step
            )));
        }
        diag.bc_mse = bc_mse;
        self.actor_adam.step(&mut self.actor, &self.actor_grads)?;

        // Target mixing after each actor step.
        self.actor_target.mix_from(&self.actor, self.hyper.tau);
        self.critics.q1_target.mix_from(&self.critics.q1, self.hyper.tau);
        self.critics.q2_target.mix_from(&self.critics.q2, self.hyper.tau);
        Ok(diag)
    }

    pub fn into_policy(self, skill: &SkillSpec) -> SkillPolicy {
        SkillPolicy {
            skill_id: skill.id,
            actor: self.actor,
            norm: self.norm,
            action_scale: self.action_scale,
            beta: skill.beta_region(),
        }
    }
}

/// Episodes used to score each checkpoint during training.
pub const CHECKPOINT_EVAL_EPISODES: u32 = 200;

/// Train a policy for one skill on its dataset.
///
/// With `checkpoint_every > 0` the actor is evaluated periodically in a
/// noise-free simulator and the best checkpoint is returned; if the best
/// rate stays below `stop_rate` after `gradient_steps`, training restarts
/// from a fresh initialization, up to `restarts` attempts. All checkpoints
/// are scored on the same evaluation seed so rates are comparable.
pub fn train_skill(
    dataset: &Dataset,
    skill: &SkillSpec,
    sim: &crate::sim::SimConfig,
    hyper: Td3BcHyper,
    seed: u64,
) -> Result<SkillPolicy> {
    if dataset.meta.skill_id != skill.id {
        return Err(Error::rejected(format!(
            "dataset is for skill {}, not {}",
            dataset.meta.skill_id, skill.id
        )));
    }
    if hyper.checkpoint_every == 0 {
        let mut tr = Trainer::new(dataset, sim, hyper, seed)?;
        for _ in 0..hyper.gradient_steps {
            tr.update()?;
        }
        if !tr.actor.is_finite() {
            return Err(Error::Divergence("non-finite actor parameters".into()));
        }
        return Ok(tr.into_policy(skill));
    }

    let mut eval_sim = Simulator::new(sim.clone())?;
    let eval_seed = seed ^ 0x00c4_3b0e;
    let mut best: Option<(f64, SkillPolicy)> = None;
    let mut last_err: Option<Error> = None;
    'attempts: for attempt in 0..hyper.restarts {
        let attempt_seed =
            seed.wrapping_add((attempt as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut tr = Trainer::new(dataset, sim, hyper, attempt_seed)?;
        for step in 1..=hyper.gradient_steps {
            match tr.update() {
                Ok(_) => {}
                // A diverging attempt is abandoned, not fatal: another
                // initialization may still produce a usable policy.
                Err(e @ Error::Divergence(_)) => {
                    last_err = Some(e);
                    continue 'attempts;
                }
                Err(e) => return Err(e),
            }
            if step % hyper.checkpoint_every == 0 || step == hyper.gradient_steps {
                if !tr.actor.is_finite() {
                    last_err = Some(Error::Divergence("non-finite actor parameters".into()));
                    continue 'attempts;
                }
                let candidate = SkillPolicy {
                    skill_id: skill.id,
                    actor: tr.actor.clone(),
                    norm: tr.norm.clone(),
                    action_scale: tr.action_scale,
                    beta: skill.beta_region(),
                };
                let rate = evaluate_skill(
                    &mut eval_sim,
                    skill,
                    &candidate,
                    0.0,
                    CHECKPOINT_EVAL_EPISODES,
                    eval_seed,
                )?;
                if best.as_ref().map_or(true, |(b, _)| rate > *b) {
                    best = Some((rate, candidate));
                }
                if best.as_ref().is_some_and(|(b, _)| *b >= hyper.stop_rate) {
                    break 'attempts;
                }
            }
        }
    }
    match best {
        Some((_, policy)) => Ok(policy),
        None => Err(last_err
            .unwrap_or_else(|| Error::Divergence("no usable checkpoint produced".into()))),
    }
}

/// Per-skill evaluation step budget.
pub const EVAL_BUDGET: u32 = 150;

/// Success rate of a policy from randomized starts in the skill's
/// evaluation initiation ball, with Gaussian position observation noise.
pub fn evaluate_skill(
    sim: &mut Simulator,
    skill: &SkillSpec,
    policy: &SkillPolicy,
    noise_sigma: f64,
    episodes: u32,
    seed: u64,
) -> Result<f64> {
    if episodes < 1 {
        return Err(Error::rejected("episodes must be >= 1"));
    }
    let mut cache = ForwardCache::new();
    let mut start_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00e1_7a1e);
    let mut wins = 0u32;
    for ep in 0..episodes {
        let (start, env) = crate::collect::sample_start(
            skill,
            skill.eval_radius,
            0.1,
            sim.config(),
            &mut start_rng,
        );
        sim.reset(&start, &env, seed.wrapping_add(ep as u64).wrapping_mul(0x51ed_2701))?;
        sim.set_task(skill.task, EVAL_BUDGET);
        loop {
            let obs = sim.observe(noise_sigma)?;
            let a = policy.act(&obs, &mut cache)?;
            let r = sim.step(&a)?;
            if r.done {
                if r.reward == 1 {
                    wins += 1;
                }
                break;
            }
        }
    }
    Ok(wins as f64 / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::collect::{collect_skill_dataset, NoiseParams};

    fn small_hyper() -> Td3BcHyper {
        Td3BcHyper {
            batch_size: 32,
            hidden: 16,
            gradient_steps: 10,
            ..Td3BcHyper::default()
        }
    }

    fn tiny_dataset(cat: &Catalog, skill_id: u32, episodes: usize) -> Dataset {
        let mut sim = Simulator::new(cat.sim.clone()).unwrap();
        collect_skill_dataset(
            &mut sim,
            cat.skill(skill_id).unwrap(),
            &NoiseParams::default(),
            episodes,
            42,
        )
        .unwrap()
    }

    #[test]
    fn normalization_stats() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 10);
        let (ns, nn, norm) = normalize_states(&ds).unwrap();
        assert_eq!(ns.len(), ds.transitions.len());
        // Per-dimension mean of the union is ~0.
        for k in 0..STATE_DIM {
            let total: f64 = ns.iter().chain(nn.iter()).map(|r| r[k]).sum();
            let mean = total / (ns.len() + nn.len()) as f64;
            assert!(mean.abs() < 1e-10, "dim {k} mean {mean}");
        }
        // Constant dims (e.g. g_force stays 0 for movement) get the floor.
        assert!(norm.std.iter().all(|&s| s >= 1e-3));
        // Re-applying the stored stats reproduces the rows.
        let raw = ds.transitions[3].s.to_vec();
        let mut again = [0.0; STATE_DIM];
        norm.apply(&raw, &mut again);
        assert_eq!(again, ns[3]);
    }

    #[test]
    fn constant_dimension_normalizes_to_zero() {
        let rows = [[2.5, 1.0], [2.5, 3.0], [2.5, 5.0]];
        let norm = Normalization::from_rows(2, rows.iter().map(|r| r.as_slice())).unwrap();
        let mut out = [0.0; 2];
        norm.apply(&rows[0], &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(norm.std[0], 1e-3);
    }

    #[test]
    fn lambda_arithmetic_and_scale_invariance() {
        // alpha 2.5, mean |q| 5 -> lambda 0.5.
        let qs = [5.0, -5.0, 5.0, 5.0];
        let mean_abs = qs.iter().map(|q: &f64| q.abs()).sum::<f64>() / qs.len() as f64;
        let lambda: f64 = 2.5 / mean_abs;
        assert!((lambda - 0.5).abs() < 1e-12);
        // lambda * mean(q) is invariant to scaling the critic by c > 0.
        let mean_q = qs.iter().sum::<f64>() / qs.len() as f64;
        for c in [0.1, 3.0, 250.0] {
            let l_c = 2.5 / (c * mean_abs);
            assert!((l_c * c * mean_q - lambda * mean_q).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_zero_critics_give_pure_bc_gradient() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 5);
        let mk = |bc_only: bool| {
            let mut tr = Trainer::new(&ds, &cat.sim, Td3BcHyper {
                policy_delay: 1,
                bc_only,
                ..small_hyper()
            }, 7)
            .unwrap();
            if !bc_only {
                // Zero critics: constant output 0, zero action gradient.
                let h = tr.hyper.hidden;
                let shape = [STATE_DIM + ACTION_DIM, h, h, 1];
                tr.critics.q1 = Mlp::zeros(&shape, OutputActivation::Linear).unwrap();
                tr.critics.q2 = tr.critics.q1.clone();
                tr.critics.q1_target = tr.critics.q1.clone();
                tr.critics.q2_target = tr.critics.q1.clone();
                // Freeze: no critic adam motion matters for the actor
                // gradient inspected below, but keep lr 0 for cleanliness.
                tr.q1_adam = AdamState::new(&tr.critics.q1, 0.0);
                tr.q2_adam = AdamState::new(&tr.critics.q2, 0.0);
            }
            tr
        };
        let mut a = mk(false);
        let mut b = mk(true);
        let da = a.update().unwrap();
        let db = b.update().unwrap();
        assert!(da.actor_stepped && db.actor_stepped);
        assert_eq!(da.bc_mse, db.bc_mse);
        // Identical actor parameters after the step: the Q term
        // contributed exactly nothing.
        assert_eq!(a.actor, b.actor);
    }

    #[test]
    fn all_done_rows_target_reward_exactly() {
        let cat = Catalog::builtin();
        let mut ds = tiny_dataset(&cat, 1, 5);
        for t in ds.transitions.iter_mut() {
            t.done = true;
        }
        let mut tr = Trainer::new(&ds, &cat.sim, small_hyper(), 3).unwrap();
        tr.sample_batch();
        tr.compute_targets().unwrap();
        for (bi, &i) in tr.batch.iter().enumerate() {
            assert_eq!(tr.targets[bi], tr.rewards[i]);
        }
    }

    #[test]
    fn target_uses_min_of_twin_critics() {
        let cat = Catalog::builtin();
        let mut ds = tiny_dataset(&cat, 1, 5);
        for t in ds.transitions.iter_mut() {
            t.done = false;
            t.r = 0;
        }
        let mut tr = Trainer::new(&ds, &cat.sim, small_hyper(), 3).unwrap();
        let h = tr.hyper.hidden;
        let shape = [STATE_DIM + ACTION_DIM, h, h, 1];
        // Constant critics 1 and 2 via zero nets with output bias set.
        let mut c1 = Mlp::zeros(&shape, OutputActivation::Linear).unwrap();
        c1.params_mut().1.last_mut().unwrap()[0] = 1.0;
        let mut c2 = c1.clone();
        c2.params_mut().1.last_mut().unwrap()[0] = 2.0;
        tr.critics.q1_target = c1;
        tr.critics.q2_target = c2;
        tr.sample_batch();
        tr.compute_targets().unwrap();
        for &y in &tr.targets {
            assert!((y - tr.hyper.gamma * 1.0).abs() < 1e-12, "target {y}");
        }
    }

    #[test]
    fn actor_outputs_respect_bounds() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 5);
        let tr = Trainer::new(&ds, &cat.sim, small_hyper(), 11).unwrap();
        let skill = cat.skill(1).unwrap();
        let policy = tr.into_policy(skill);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = ForwardCache::new();
        for _ in 0..10_000 {
            let s = WorldState {
                ee_pos: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                ee_quat: {
                    let mut q = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    crate::quat::normalize(&mut q);
                    q
                },
                g_cmd: rng.gen_range(-1.0..1.0),
                g_force: rng.gen_range(0.0..10.0),
                g_gap: rng.gen_range(0.0..cat.sim.gap_max),
            };
            let a = policy.act(&s, &mut cache).unwrap();
            for k in 0..3 {
                assert!(a.d_pos[k].abs() <= cat.sim.pos_step_limit + 1e-12);
                assert!(a.d_ori[k].abs() <= cat.sim.ang_step_limit + 1e-12);
            }
            assert!(a.g_cmd.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn bc_limit_fits_noiseless_demonstrations() {
        let cat = Catalog::builtin();
        let skill = cat.skill(1).unwrap();
        let mut sim = Simulator::new(cat.sim.clone()).unwrap();
        let clean = NoiseParams { sigma1: 0.0, sigma2: 0.0, ..NoiseParams::default() };
        let ds = collect_skill_dataset(&mut sim, skill, &clean, 50, 13).unwrap();
        let hyper = Td3BcHyper {
            bc_only: true,
            policy_delay: 1,
            gradient_steps: 3000,
            batch_size: 256,
            hidden: 64,
            actor_lr: 1e-3,
            ..Td3BcHyper::default()
        };
        let mut tr = Trainer::new(&ds, &cat.sim, hyper, 5).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..hyper.gradient_steps {
            last = tr.update().unwrap().bc_mse;
        }
        assert!(last < 1e-3, "train-set action MSE {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 10);
        let skill = cat.skill(1).unwrap();
        let hyper = Td3BcHyper { gradient_steps: 25, ..small_hyper() };
        let p1 = train_skill(&ds, skill, &cat.sim, hyper, 99).unwrap();
        let p2 = train_skill(&ds, skill, &cat.sim, hyper, 99).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn train_skill_rejects_mismatched_dataset() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 3);
        let skill = cat.skill(2).unwrap();
        assert!(train_skill(&ds, skill, &cat.sim, small_hyper(), 0).is_err());
    }

    #[test]
    fn single_episode_rate_is_binary() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 5);
        let skill = cat.skill(1).unwrap();
        let tr = Trainer::new(&ds, &cat.sim, small_hyper(), 1).unwrap();
        let policy = tr.into_policy(skill);
        let mut sim = Simulator::new(cat.sim.clone()).unwrap();
        let rate = evaluate_skill(&mut sim, skill, &policy, 0.0, 1, 6).unwrap();
        assert!(rate == 0.0 || rate == 1.0);
    }

    #[test]
    fn policy_serialization_round_trip() {
        let cat = Catalog::builtin();
        let ds = tiny_dataset(&cat, 1, 5);
        let skill = cat.skill(1).unwrap();
        let tr = Trainer::new(&ds, &cat.sim, small_hyper(), 2).unwrap();
        let policy = tr.into_policy(skill);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        policy.save(&path).unwrap();
        assert_eq!(SkillPolicy::load(&path).unwrap(), policy);
    }
}
