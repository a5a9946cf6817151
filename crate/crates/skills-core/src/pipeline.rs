//! The full pipeline: classify off-graph starts onto the graph, plan a
//! skill sequence, execute it skill by skill with termination detection
//! and drift resets, and run the multi-task experiment suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, SkillSpec, TaskKind};
use crate::classifier::{sample_reach_start, ClassifierNet};
use crate::collect::scripted_action;
use crate::error::{Error, Result};
use crate::graph::{simulate_plan_effects, SkillGraph};
use crate::nn::ForwardCache;
use crate::orl::SkillPolicy;
use crate::sim::{Action, EffectState, EnvFeatures, GoalRegion, Simulator, TaskSpec, WorldState};

/// Per-skill step budget during plan execution.
pub const SKILL_BUDGET: u32 = 300;

/// A per-step controller for one skill. Learned policies are stateless;
/// the scripted oracle tracks its target index.
pub trait SkillController {
    fn skill_id(&self) -> u32;
    fn beta(&self) -> &GoalRegion;
    /// Called at the start of each execution of this skill.
    fn begin(&mut self);
    fn action(&mut self, observed: &WorldState, cfg: &crate::sim::SimConfig) -> Result<Action>;
}

/// Learned-policy controller.
pub struct PolicyController {
    pub policy: SkillPolicy,
    cache: ForwardCache,
}

impl PolicyController {
    pub fn new(policy: SkillPolicy) -> Self {
        PolicyController { policy, cache: ForwardCache::new() }
    }
}

impl SkillController for PolicyController {
    fn skill_id(&self) -> u32 {
        self.policy.skill_id
    }

    fn beta(&self) -> &GoalRegion {
        &self.policy.beta
    }

    fn begin(&mut self) {}

    fn action(&mut self, observed: &WorldState, _cfg: &crate::sim::SimConfig) -> Result<Action> {
        self.policy.act(observed, &mut self.cache)
    }
}

/// Noise-free scripted controller (the demonstration policy without
/// injected noise), usable as an execution oracle.
pub struct ScriptedController {
    pub skill: SkillSpec,
    beta: GoalRegion,
    threshold: f64,
    target_idx: usize,
}

impl ScriptedController {
    pub fn new(skill: SkillSpec) -> Self {
        let beta = skill.beta_region();
        ScriptedController { skill, beta, threshold: 0.02, target_idx: 0 }
    }
}

impl SkillController for ScriptedController {
    fn skill_id(&self) -> u32 {
        self.skill.id
    }

    fn beta(&self) -> &GoalRegion {
        &self.beta
    }

    fn begin(&mut self) {
        self.target_idx = 0;
    }

    fn action(&mut self, observed: &WorldState, cfg: &crate::sim::SimConfig) -> Result<Action> {
        loop {
            let target = &self.skill.targets[self.target_idx];
            let a = scripted_action(observed, &target.state, target.gripper, self.threshold, cfg);
            if a == Action::ZERO && self.target_idx + 1 < self.skill.targets.len() {
                self.target_idx += 1;
                continue;
            }
            return Ok(a);
        }
    }
}

/// Outcome of executing one skill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub skill_id: u32,
    pub steps: u32,
    pub attained_beta: bool,
    /// Symbolic environment snapshot after the skill.
    pub effects: EffectState,
}

/// Outcome of one full task episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Skill chosen by the classifier for an off-graph start, if any.
    pub classified_first: Option<u32>,
    /// Options produced by the planner, in execution order.
    pub planned: Vec<crate::graph::SkillOption>,
    pub records: Vec<SkillRecord>,
    pub success: bool,
    pub total_steps: u32,
}

/// Run one skill until its termination region is attained or the budget
/// runs out; afterward clear accumulated drift (the per-skill
/// configuration reset).
pub fn execute_skill(
    ctrl: &mut dyn SkillController,
    sim: &mut Simulator,
    step_budget: u32,
    obs_sigma: f64,
) -> Result<SkillRecord> {
    ctrl.begin();
    let mut steps = 0u32;
    let mut attained = ctrl.beta().contains(sim.state(), sim.config());
    while !attained && steps < step_budget {
        let obs = sim.observe(obs_sigma)?;
        let a = ctrl.action(&obs, sim.config())?;
        sim.step(&a)?;
        steps += 1;
        attained = ctrl.beta().contains(sim.state(), sim.config());
    }
    // Hand over from a quiescent configuration: finish any in-flight
    // gripper sweep and clear accumulated drift.
    steps += sim.settle_gripper()?;
    sim.clear_drift();
    Ok(SkillRecord {
        skill_id: ctrl.skill_id(),
        steps,
        attained_beta: attained,
        effects: sim.effect_state(),
    })
}

/// Everything run_task needs.
pub struct Artifacts {
    pub catalog: Catalog,
    pub graph: SkillGraph,
    pub classifier: ClassifierNet,
    pub controllers: Vec<Box<dyn SkillController>>,
}

impl Artifacts {
    pub fn controller(&mut self, skill_id: u32) -> Result<&mut Box<dyn SkillController>> {
        self.controllers
            .iter_mut()
            .find(|c| c.skill_id() == skill_id)
            .ok_or_else(|| Error::rejected(format!("no controller for skill {skill_id}")))
    }

    /// Learned-policy artifacts.
    pub fn learned(
        catalog: Catalog,
        classifier: ClassifierNet,
        policies: Vec<SkillPolicy>,
    ) -> Result<Artifacts> {
        let graph = catalog.build_graph()?;
        let controllers = policies
            .into_iter()
            .map(|p| Box::new(PolicyController::new(p)) as Box<dyn SkillController>)
            .collect();
        Ok(Artifacts { catalog, graph, classifier, controllers })
    }

    /// Scripted-oracle artifacts (noise-free demonstration policies).
    pub fn scripted(catalog: Catalog, classifier: ClassifierNet) -> Result<Artifacts> {
        let graph = catalog.build_graph()?;
        let controllers = catalog
            .skills
            .iter()
            .map(|s| Box::new(ScriptedController::new(s.clone())) as Box<dyn SkillController>)
            .collect();
        Ok(Artifacts { catalog, graph, classifier, controllers })
    }
}

fn task_satisfied(sim: &Simulator, task: &TaskSpec) -> bool {
    let effects_ok = task.required_effects.satisfied_by(&sim.effect_state());
    let pose_ok = match &task.goal_region {
        None => true,
        Some(r) => r.contains(sim.state(), sim.config()),
    };
    effects_ok && pose_ok
}

/// Classify (if off-graph), plan, execute, and judge one task episode.
pub fn run_task(
    artifacts: &mut Artifacts,
    start: &WorldState,
    start_env: &EnvFeatures,
    task: &TaskSpec,
    obs_sigma: f64,
    seed: u64,
) -> Result<ExecutionTrace> {
    let mut sim = Simulator::new(artifacts.catalog.sim.clone())?;
    sim.reset(start, start_env, seed)?;
    let start_effects = sim.effect_state();

    let mut classified_first = None;
    let plan_start_node = match artifacts.graph.nearest_node(start) {
        Some(node) => node,
        None => {
            let mut cache = ForwardCache::new();
            let skill_id = artifacts.classifier.classify(start, &mut cache)?;
            classified_first = Some(skill_id);
            artifacts
                .catalog
                .skill(skill_id)?
                .beta_node
        }
    };
    let plan = artifacts.graph.plan(plan_start_node, start_effects, task)?;

    let mut trace = ExecutionTrace {
        classified_first,
        planned: plan.options.clone(),
        records: Vec::new(),
        success: false,
        total_steps: 0,
    };

    if let Some(first) = classified_first {
        let ctrl = artifacts.controller(first)?;
        let rec = execute_skill(ctrl.as_mut(), &mut sim, SKILL_BUDGET, obs_sigma)?;
        trace.total_steps += rec.steps;
        let ok = rec.attained_beta;
        trace.records.push(rec);
        if !ok {
            return Ok(trace);
        }
    }

    for opt in &plan.options {
        // Live precondition gate: never run a skill whose symbolic
        // preconditions are violated in the actual environment.
        if !opt.preconditions.satisfied_by(&sim.effect_state()) {
            return Ok(trace);
        }
        let ctrl = artifacts.controller(opt.skill_id)?;
        let rec = execute_skill(ctrl.as_mut(), &mut sim, SKILL_BUDGET, obs_sigma)?;
        trace.total_steps += rec.steps;
        let ok = rec.attained_beta;
        trace.records.push(rec);
        if !ok {
            return Ok(trace);
        }
    }

    trace.success = task_satisfied(&sim, task);
    Ok(trace)
}

/// One Table-IV/V-shaped report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    /// Success rate per start-state center.
    pub rows: Vec<f64>,
    pub average: f64,
}

/// Run every task from every center.
pub fn run_experiment(
    artifacts: &mut Artifacts,
    tasks: &[TaskKind],
    radius: f64,
    ori_spread: f64,
    episodes: u32,
    obs_sigma: f64,
    seed: u64,
) -> Result<Vec<ExperimentReport>> {
    let centers: Vec<WorldState> = artifacts
        .catalog
        .centers
        .iter()
        .map(|c| WorldState {
            ee_pos: c.pos,
            ee_quat: c.quat,
            g_cmd: 0.0,
            g_force: 0.0,
            g_gap: artifacts.catalog.sim.gap_max,
        })
        .collect();
    let mut reports = Vec::new();
    for (ti, &kind) in tasks.iter().enumerate() {
        let (env, task) = artifacts.catalog.task_spec(kind);
        let mut rows = Vec::with_capacity(centers.len());
        for (ci, center) in centers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ ((ti as u64) << 48 | (ci as u64) << 40 | 0x00c0_ffee),
            );
            let mut wins = 0u32;
            for ep in 0..episodes {
                let cfg = artifacts.catalog.sim.clone();
                let start = sample_reach_start(center, radius, ori_spread, &cfg, &mut rng);
                let ep_seed = seed
                    .wrapping_add((ti as u64) << 32)
                    .wrapping_add((ci as u64) << 24)
                    .wrapping_add(ep as u64)
                    .wrapping_mul(0x2545_f491);
                let trace = run_task(artifacts, &start, &env, &task, obs_sigma, ep_seed)?;
                if trace.success {
                    wins += 1;
                }
            }
            rows.push(wins as f64 / episodes as f64);
        }
        let average = rows.iter().sum::<f64>() / rows.len() as f64;
        reports.push(ExperimentReport {
            task: kind.name().to_string(),
            rows,
            average,
        });
    }
    Ok(reports)
}

/// Check a trace's concrete symbolic outcome against the pure symbolic
/// replay of the planned prefix that actually ran.
pub fn verify_trace_effects(
    trace: &ExecutionTrace,
    start_node: u32,
    start_effects: EffectState,
) -> Result<()> {
    let ran = trace
        .records
        .len()
        .saturating_sub(usize::from(trace.classified_first.is_some()));
    let symbolic = simulate_plan_effects(&trace.planned[..ran], start_node, start_effects)?;
    let concrete = trace
        .records
        .last()
        .map(|r| r.effects)
        .unwrap_or(start_effects);
    if symbolic != concrete {
        return Err(Error::InvalidPlan(format!(
            "symbolic effects {symbolic:?} disagree with executed effects {concrete:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::train_classifier;
    use crate::collect::{build_classifier_dataset, collect_skill_dataset, NoiseParams};

    fn quick_classifier(cat: &Catalog) -> ClassifierNet {
        let mut sim = Simulator::new(cat.sim.clone()).unwrap();
        let mut sets = Vec::new();
        for id in 1..=6u32 {
            sets.push(
                collect_skill_dataset(
                    &mut sim,
                    cat.skill(id).unwrap(),
                    &NoiseParams::default(),
                    8,
                    id as u64,
                )
                .unwrap(),
            );
        }
        let refs: Vec<_> = sets.iter().collect();
        let (labeled, ids) = build_classifier_dataset(&refs, &[1, 2, 3, 4, 5, 6], 7).unwrap();
        train_classifier(&labeled, &ids, 3, 512, 0.8, 1e-3, 11).unwrap().0
    }

    fn scripted_artifacts() -> Artifacts {
        let cat = Catalog::builtin();
        let clf = quick_classifier(&cat);
        Artifacts::scripted(cat, clf).unwrap()
    }

    #[test]
    fn skill_at_own_beta_succeeds_immediately() {
        let mut art = scripted_artifacts();
        let skill = art.catalog.skill(1).unwrap().clone();
        let mut sim = Simulator::new(art.catalog.sim.clone()).unwrap();
        let target = skill.targets[0].state;
        sim.reset(&target, &skill.start_env, 1).unwrap();
        let ctrl = art.controller(1).unwrap();
        let rec = execute_skill(ctrl.as_mut(), &mut sim, SKILL_BUDGET, 0.0).unwrap();
        assert!(rec.attained_beta);
        assert_eq!(rec.steps, 0);
    }

    #[test]
    fn zero_budget_away_from_beta_fails() {
        let mut art = scripted_artifacts();
        let skill = art.catalog.skill(1).unwrap().clone();
        let mut sim = Simulator::new(art.catalog.sim.clone()).unwrap();
        sim.reset(&skill.start, &skill.start_env, 1).unwrap();
        let ctrl = art.controller(1).unwrap();
        let rec = execute_skill(ctrl.as_mut(), &mut sim, 0, 0.0).unwrap();
        assert!(!rec.attained_beta);
    }

    #[test]
    fn drift_cleared_after_execution() {
        let mut art = scripted_artifacts();
        let skill = art.catalog.skill(2).unwrap().clone();
        let mut sim = Simulator::new(art.catalog.sim.clone()).unwrap();
        sim.reset(&skill.start, &skill.start_env, 3).unwrap();
        let ctrl = art.controller(2).unwrap();
        let rec = execute_skill(ctrl.as_mut(), &mut sim, SKILL_BUDGET, 0.0).unwrap();
        assert!(rec.attained_beta);
        assert!(rec.steps > 0);
        assert_eq!(sim.drift_magnitude(), 0.0);
    }

    #[test]
    fn on_graph_start_skips_classifier() {
        let mut art = scripted_artifacts();
        let (env, task) = art.catalog.task_spec(TaskKind::OpenDoor);
        let start = art.catalog.node(1).unwrap().anchor;
        let trace = run_task(&mut art, &start, &env, &task, 0.0, 5).unwrap();
        assert!(trace.classified_first.is_none());
        assert!(trace.success, "trace: {trace:?}");
    }

    #[test]
    fn scripted_oracle_completes_every_task() {
        let mut art = scripted_artifacts();
        for kind in [
            TaskKind::PickUp,
            TaskKind::OpenDoor,
            TaskKind::OpenPickup,
            TaskKind::PickupPlace,
            TaskKind::OpenPickupPlace,
        ] {
            let (env, task) = art.catalog.task_spec(kind);
            let start = art.catalog.node(1).unwrap().anchor;
            let trace = run_task(&mut art, &start, &env, &task, 0.0, 9).unwrap();
            assert!(trace.success, "{kind:?} failed: {trace:?}");
            // Symbolic/concrete agreement on the executed prefix.
            let start_effects = {
                let mut sim = Simulator::new(art.catalog.sim.clone()).unwrap();
                sim.reset(&start, &env, 9).unwrap();
                sim.effect_state()
            };
            verify_trace_effects(&trace, 1, start_effects).unwrap();
        }
    }

    #[test]
    fn off_graph_start_uses_classifier_first() {
        let mut art = scripted_artifacts();
        let (env, task) = art.catalog.task_spec(TaskKind::OpenDoor);
        // Far from every anchor.
        let mut start = art.catalog.node(1).unwrap().anchor;
        start.ee_pos = [0.9, 0.1, 0.9];
        assert!(art.graph.nearest_node(&start).is_none());
        let trace = run_task(&mut art, &start, &env, &task, 0.0, 2).unwrap();
        let first = trace.classified_first.expect("classifier must be used");
        assert_eq!(trace.records.first().map(|r| r.skill_id), Some(first));
    }

    #[test]
    fn planner_unreachable_propagates() {
        let mut art = scripted_artifacts();
        let (env, mut task) = art.catalog.task_spec(TaskKind::OpenDoor);
        // Demand an effect no skill produces from this state.
        task.required_effects.door_open = Some(true);
        task.required_effects.cube_in_cabinet = Some(true);
        task.required_effects.cube_on_counter = Some(true);
        let start = art.catalog.node(1).unwrap().anchor;
        assert!(matches!(
            run_task(&mut art, &start, &env, &task, 0.0, 1),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn experiment_report_shape_and_average() {
        let mut art = scripted_artifacts();
        let reports = run_experiment(
            &mut art,
            &[TaskKind::OpenDoor],
            0.05,
            0.05,
            4,
            0.0,
            77,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.rows.len(), 8);
        let mean = r.rows.iter().sum::<f64>() / 8.0;
        assert_eq!(r.average, mean);
        assert!(r.rows.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut art = scripted_artifacts();
        let run = |art: &mut Artifacts| {
            run_experiment(art, &[TaskKind::PickUp], 0.05, 0.05, 3, 0.0, 123).unwrap()
        };
        let a = run(&mut art);
        let b = run(&mut art);
        assert_eq!(a, b);
    }
}
