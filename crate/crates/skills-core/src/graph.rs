//! The skill graph: anchor nodes connected by options, each annotated
//! with symbolic preconditions and effects, plus a breadth-first planner
//! over the (node, effect-state) product space.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat;
use crate::sim::{EffectState, FactGoal, TaskSpec, WorldState};

pub const DEPTH_BOUND: usize = 32;

/// A graph anchor state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub anchor: WorldState,
}

/// One graph edge: an option <I, pi, beta> with symbolic annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillOption {
    pub init_node: u32,
    pub beta_node: u32,
    pub skill_id: u32,
    pub preconditions: FactGoal,
    pub effects: FactGoal,
}

/// The graph: nodes plus a dictionary from init node id to the options
/// available there (sorted by skill id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillGraph {
    pub nodes: Vec<Node>,
    pub options: BTreeMap<u32, Vec<SkillOption>>,
    pub pos_tol: f64,
    pub ang_tol: f64,
}

/// A planner result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub options: Vec<SkillOption>,
    pub terminal_node: u32,
    pub terminal_effects: EffectState,
}

impl Plan {
    pub fn skill_ids(&self) -> Vec<u32> {
        self.options.iter().map(|o| o.skill_id).collect()
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn within_tol(a: &WorldState, b: &WorldState, pos_tol: f64, ang_tol: f64) -> bool {
    dist3(&a.ee_pos, &b.ee_pos) <= pos_tol
        && quat::euler_error(&a.ee_quat, &b.ee_quat)
            .iter()
            .all(|e| e.abs() <= ang_tol)
}

/// Build and validate the graph.
pub fn build_graph(
    nodes: &[Node],
    options: &[SkillOption],
    pos_tol: f64,
    ang_tol: f64,
) -> Result<SkillGraph> {
    let mut ids: Vec<u32> = nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Graph("duplicate node id".into()));
    }
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if within_tol(&a.anchor, &b.anchor, pos_tol, ang_tol) {
                return Err(Error::Graph(format!(
                    "anchors of nodes {} and {} are not distinct beyond the matching tolerance",
                    a.id, b.id
                )));
            }
        }
    }
    let mut dict: BTreeMap<u32, Vec<SkillOption>> = BTreeMap::new();
    for opt in options {
        for node in [opt.init_node, opt.beta_node] {
            if !ids.contains(&node) {
                return Err(Error::Graph(format!(
                    "option (skill {}) references unknown node {node}",
                    opt.skill_id
                )));
            }
        }
        if opt.init_node == opt.beta_node && opt.effects.is_empty() {
            return Err(Error::Graph(format!(
                "skill {} is a self-loop with no effects",
                opt.skill_id
            )));
        }
        let list = dict.entry(opt.init_node).or_default();
        if !list.contains(opt) {
            list.push(*opt);
        }
    }
    for list in dict.values_mut() {
        list.sort_by_key(|o| (o.skill_id, o.beta_node));
    }
    Ok(SkillGraph {
        nodes: nodes.to_vec(),
        options: dict,
        pos_tol,
        ang_tol,
    })
}

impl SkillGraph {
    pub fn node(&self, id: u32) -> Result<&Node> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::Graph(format!("unknown node id {id}")))
    }

    /// Nearest on-graph node: within the matching tolerance (position
    /// and per-angle orientation), minimal position distance, ties to
    /// the lowest id. `None` means off-graph.
    pub fn nearest_node(&self, state: &WorldState) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for n in &self.nodes {
            if !within_tol(state, &n.anchor, self.pos_tol, self.ang_tol) {
                continue;
            }
            let d = dist3(&state.ee_pos, &n.anchor.ee_pos);
            let better = match best {
                None => true,
                Some((bd, bid)) => d < bd - 1e-15 || ((d - bd).abs() <= 1e-15 && n.id < bid),
            };
            if better {
                best = Some((d, n.id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn goal_met(&self, node: &Node, effects: &EffectState, goal: &TaskSpec) -> bool {
        if !goal.required_effects.satisfied_by(effects) {
            return false;
        }
        match &goal.goal_region {
            None => true,
            Some(region) => {
                dist3(&node.anchor.ee_pos, &region.pos) <= region.pos_tol
                    && quat::angle_error(&node.anchor.ee_quat, &region.quat) <= region.ang_tol
            }
        }
    }

    /// Breadth-first search over (node, effect-state), unit edge cost,
    /// depth bound, lexicographically smallest skill-id sequence among
    /// the shortest plans.
    pub fn plan(
        &self,
        start_node: u32,
        start_effects: EffectState,
        goal: &TaskSpec,
    ) -> Result<Plan> {
        let start = self.node(start_node)?;
        if self.goal_met(start, &start_effects, goal) {
            return Ok(Plan {
                options: Vec::new(),
                terminal_node: start_node,
                terminal_effects: start_effects,
            });
        }
        type Key = (u32, EffectState);
        let mut parent: HashMap<Key, (Key, SkillOption)> = HashMap::new();
        let mut queue: VecDeque<(Key, usize)> = VecDeque::new();
        let start_key = (start_node, start_effects);
        parent.insert(start_key, (start_key, SkillOption {
            init_node: 0,
            beta_node: 0,
            skill_id: 0,
            preconditions: FactGoal::default(),
            effects: FactGoal::default(),
        }));
        queue.push_back((start_key, 0));
        while let Some((key, depth)) = queue.pop_front() {
            if depth >= DEPTH_BOUND {
                continue;
            }
            let Some(list) = self.options.get(&key.0) else {
                continue;
            };
            // Expansion in skill-id order + FIFO dequeue makes the first
            // path reaching any state the lexicographically smallest of
            // the shortest ones.
            for opt in list {
                if !opt.preconditions.satisfied_by(&key.1) {
                    continue;
                }
                let mut effects = key.1;
                opt.effects.apply_to(&mut effects);
                let next = (opt.beta_node, effects);
                if parent.contains_key(&next) {
                    continue;
                }
                parent.insert(next, (key, *opt));
                let node = self.node(opt.beta_node)?;
                if self.goal_met(node, &effects, goal) {
                    // Reconstruct.
                    let mut options = Vec::new();
                    let mut cur = next;
                    while cur != start_key {
                        let (prev, opt) = parent[&cur];
                        options.push(opt);
                        cur = prev;
                    }
                    options.reverse();
                    return Ok(Plan {
                        options,
                        terminal_node: next.0,
                        terminal_effects: effects,
                    });
                }
                queue.push_back((next, depth + 1));
            }
        }
        Err(Error::Unreachable(format!(
            "no plan from node {start_node} within depth {DEPTH_BOUND}"
        )))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SkillGraph> {
        let g: SkillGraph = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        // Re-validate through the constructor.
        let opts: Vec<SkillOption> = g.options.values().flatten().copied().collect();
        build_graph(&g.nodes, &opts, g.pos_tol, g.ang_tol)
    }
}

/// Symbolic replay of a plan: fold effects, checking chaining and
/// preconditions.
pub fn simulate_plan_effects(
    options: &[SkillOption],
    start_node: u32,
    start_effects: EffectState,
) -> Result<EffectState> {
    let mut effects = start_effects;
    let mut at = start_node;
    for opt in options {
        if opt.init_node != at {
            return Err(Error::InvalidPlan(format!(
                "skill {} starts at node {} but the plan is at node {at}",
                opt.skill_id, opt.init_node
            )));
        }
        if !opt.preconditions.satisfied_by(&effects) {
            return Err(Error::InvalidPlan(format!(
                "preconditions of skill {} violated",
                opt.skill_id
            )));
        }
        opt.effects.apply_to(&mut effects);
        at = opt.beta_node;
    }
    Ok(effects)
}


/// Test oracles: an independent shortest-distance computation and a
/// random-graph generator, used by the planner equivalence suites.
pub mod oracle {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn ws(x: f64, y: f64, z: f64) -> WorldState {
        WorldState {
            ee_pos: [x, y, z],
            ee_quat: crate::quat::IDENTITY,
            g_cmd: 0.0,
            g_force: 0.0,
            g_gap: 0.08,
        }
    }


/// Independent shortest-distance oracle: relaxation over the fully
/// enumerated (node, effects) product space, no queue, no
/// tie-breaking. Distances above DEPTH_BOUND count as unreachable.
pub fn oracle_distance(g: &SkillGraph, start: (u32, EffectState), goal: &TaskSpec) -> Option<usize> {
    let mut states: Vec<(u32, EffectState)> = Vec::new();
    for n in &g.nodes {
        for bits in 0..16u32 {
            states.push((
                n.id,
                EffectState {
                    door_open: bits & 1 != 0,
                    cube_held: bits & 2 != 0,
                    cube_in_cabinet: bits & 4 != 0,
                    cube_on_counter: bits & 8 != 0,
                },
            ));
        }
    }
    let idx = |s: &(u32, EffectState)| states.iter().position(|x| x == s).unwrap();
    let inf = usize::MAX;
    let mut dist = vec![inf; states.len()];
    dist[idx(&start)] = 0;
    for _ in 0..states.len() {
        let mut changed = false;
        for (si, s) in states.iter().enumerate() {
            if dist[si] == inf {
                continue;
            }
            let Some(list) = g.options.get(&s.0) else { continue };
            for o in list {
                if !o.preconditions.satisfied_by(&s.1) {
                    continue;
                }
                let mut e = s.1;
                o.effects.apply_to(&mut e);
                let ti = idx(&(o.beta_node, e));
                if dist[si] + 1 < dist[ti] {
                    dist[ti] = dist[si] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    states
        .iter()
        .enumerate()
        .filter(|(_, (nid, e))| {
            g.goal_met(g.node(*nid).unwrap(), e, goal)
        })
        .map(|(i, _)| dist[i])
        .min()
        .filter(|&d| d != inf && d <= DEPTH_BOUND)
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> (SkillGraph, TaskSpec, u32, EffectState) {
    let n_nodes = rng.gen_range(2..=8usize);
    let nodes: Vec<Node> = (0..n_nodes)
        .map(|i| Node {
            id: i as u32 + 1,
            anchor: ws(0.05 + 0.12 * i as f64, 0.5, 0.5),
        })
        .collect();
    let n_bits = rng.gen_range(0..=3usize);
    let n_opts = rng.gen_range(1..=16usize);
    let bit_goal = |rng: &mut ChaCha8Rng, dense: f64| -> FactGoal {
        let mut f = FactGoal::default();
        for b in 0..n_bits {
            if rng.gen_bool(dense) {
                let v = Some(rng.gen_bool(0.5));
                match b {
                    0 => f.door_open = v,
                    1 => f.cube_held = v,
                    _ => f.cube_in_cabinet = v,
                }
            }
        }
        f
    };
    let mut opts = Vec::new();
    for k in 0..n_opts {
        let init = rng.gen_range(1..=n_nodes as u32);
        let beta = rng.gen_range(1..=n_nodes as u32);
        let effects = bit_goal(rng, 0.35);
        if init == beta && effects.is_empty() {
            continue;
        }
        opts.push(SkillOption {
            init_node: init,
            beta_node: beta,
            skill_id: 100 + k as u32,
            preconditions: bit_goal(rng, 0.2),
            effects,
        });
    }
    let g = build_graph(&nodes, &opts, 0.05, 0.1).unwrap();
    let start_node = rng.gen_range(1..=n_nodes as u32);
    let start_effects = EffectState {
        door_open: rng.gen_bool(0.5) && n_bits > 0,
        cube_held: rng.gen_bool(0.5) && n_bits > 1,
        cube_in_cabinet: rng.gen_bool(0.5) && n_bits > 2,
        cube_on_counter: false,
    };
    let goal_node = rng.gen_range(0..n_nodes);
    let goal = TaskSpec {
        goal_region: if rng.gen_bool(0.7) {
            Some(crate::sim::GoalRegion {
                pos: nodes[goal_node].anchor.ee_pos,
                quat: nodes[goal_node].anchor.ee_quat,
                pos_tol: 0.03,
                ang_tol: 0.1,
                gripper: None,
            })
        } else {
            None
        },
        required_effects: bit_goal(rng, 0.4),
    };
    (g, goal, start_node, start_effects)
}

}
