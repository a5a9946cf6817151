//! The checked-in skill catalog: graph node anchors, the 12 scripted
//! skill sequences (6 movement, 2 door, 4 cube), the task definitions
//! and the 8 evaluation centers.
//!
//! The six movement skills form a directed cycle over six anchors so
//! that consecutive skills share an endpoint; the effect skills hang off
//! that cycle (door grab/slide near the cabinet handle, cube
//! grab/lift/move/place over the counter and cabinet).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat;
use crate::sim::{
    EnvFeatures, FactGoal, GoalRegion, GripperGoal, SimConfig, TaskSpec, WorldState,
};

/// Default β tolerances: position (m) and per-angle (rad).
pub const BETA_POS_TOL: f64 = 0.03;
pub const BETA_ANG_TOL: f64 = 0.1;

/// Graph matching tolerances used by `nearest_node`.
pub const MATCH_POS_TOL: f64 = 0.05;
pub const MATCH_ANG_TOL: f64 = 0.1;

/// One target of a scripted sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqTarget {
    pub state: WorldState,
    pub gripper: GripperGoal,
}

/// A full catalog entry: scripted sequence plus option metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub id: u32,
    pub name: String,
    pub init_node: u32,
    pub beta_node: u32,
    /// Start anchor, including gripper configuration.
    pub start: WorldState,
    /// Environment template episodes begin from.
    pub start_env: EnvFeatures,
    /// Sampling radius around the start anchor for data collection.
    pub collect_radius: f64,
    /// Sampling radius for evaluation episodes.
    pub eval_radius: f64,
    pub targets: Vec<SeqTarget>,
    /// Indices into `targets` whose attainment emits reward 1.
    pub reward_states: Vec<usize>,
    pub preconditions: FactGoal,
    pub effects: FactGoal,
    /// Binary reward for this skill (final target region + effects).
    pub task: TaskSpec,
}

impl SkillSpec {
    /// Termination region β: final target pose at the β tolerances.
    pub fn beta_region(&self) -> GoalRegion {
        let last = self.targets.last().expect("non-empty sequence");
        GoalRegion {
            pos: last.state.ee_pos,
            quat: last.state.ee_quat,
            pos_tol: BETA_POS_TOL,
            ang_tol: BETA_ANG_TOL,
            gripper: Some(last.gripper),
        }
    }

    pub fn is_movement(&self) -> bool {
        self.effects.is_empty()
            && self.targets.len() == 1
            && self.targets[0].gripper == GripperGoal::Open
            && !self.start_env.cube_grasped
    }
}

/// A named graph anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub anchor: WorldState,
}

/// Start-state center for the reach and pipeline experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCenter {
    pub name: String,
    pub pos: [f64; 3],
    pub quat: quat::Quat,
}

/// The tasks exercised by the full-pipeline experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickUp,
    OpenDoor,
    OpenPickup,
    PickupPlace,
    OpenPickupPlace,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::PickUp,
        TaskKind::OpenDoor,
        TaskKind::OpenPickup,
        TaskKind::PickupPlace,
        TaskKind::OpenPickupPlace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::PickUp => "pick_up",
            TaskKind::OpenDoor => "open_door",
            TaskKind::OpenPickup => "open+pickup",
            TaskKind::PickupPlace => "pickup+place",
            TaskKind::OpenPickupPlace => "open+pickup+place",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::rejected(format!("unknown task '{s}'")))
    }

    /// Number of chained subtasks, for the length-vs-success trend.
    pub fn arity(&self) -> usize {
        match self {
            TaskKind::PickUp | TaskKind::OpenDoor => 1,
            TaskKind::OpenPickup | TaskKind::PickupPlace => 2,
            TaskKind::OpenPickupPlace => 3,
        }
    }
}

/// The whole catalog document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub sim: SimConfig,
    pub nodes: Vec<NodeSpec>,
    pub skills: Vec<SkillSpec>,
    pub centers: Vec<TestCenter>,
}

// Node ids.
pub const NODE_HOME: u32 = 1;
pub const NODE_PRE_HANDLE: u32 = 2;
pub const NODE_DOOR_OPEN: u32 = 3;
pub const NODE_PRE_CABINET: u32 = 4;
pub const NODE_LIFTED: u32 = 5;
pub const NODE_PRE_CUBE: u32 = 6;
pub const NODE_HANDLE: u32 = 7;
pub const NODE_CUBE: u32 = 8;
pub const NODE_PLACE: u32 = 9;

fn pose(pos: [f64; 3], euler: [f64; 3], gap: f64) -> WorldState {
    WorldState {
        ee_pos: pos,
        ee_quat: quat::from_euler(euler[0], euler[1], euler[2]),
        g_cmd: 0.0,
        g_force: 0.0,
        g_gap: gap,
    }
}

impl Catalog {
    /// Build the skill graph from the catalog's nodes and skills.
    pub fn build_graph(&self) -> Result<crate::graph::SkillGraph> {
        let nodes: Vec<crate::graph::Node> = self
            .nodes
            .iter()
            .map(|n| crate::graph::Node { id: n.id, anchor: n.anchor })
            .collect();
        let options: Vec<crate::graph::SkillOption> = self
            .skills
            .iter()
            .map(|s| crate::graph::SkillOption {
                init_node: s.init_node,
                beta_node: s.beta_node,
                skill_id: s.id,
                preconditions: s.preconditions,
                effects: s.effects,
            })
            .collect();
        crate::graph::build_graph(&nodes, &options, MATCH_POS_TOL, MATCH_ANG_TOL)
    }

    pub fn builtin() -> Catalog {
        let sim = SimConfig::default();
        let open = sim.gap_max;

        // Door-side anchors carry a 0.5 rad yaw, counter-side anchors a
        // -0.3 rad pitch, so every skill exercises orientation control.
        let door_e = [0.0, 0.0, 0.5];
        let cube_e = [0.0, -0.3, 0.0];

        let home = pose([0.50, 0.45, 0.55], [0.0; 3], open);
        let pre_handle = pose([0.46, 0.60, 0.32], door_e, open);
        let handle = pose(sim.handle_closed_pos, door_e, open);
        let door_open_p = pose(sim.handle_pos(1.0), door_e, open);
        let pre_cabinet = pose([0.20, 0.80, 0.55], cube_e, open);
        let lifted = pose([0.70, 0.30, 0.50], cube_e, open);
        let pre_cube = pose([0.70, 0.30, 0.32], cube_e, open);
        let cube_anchor = pose([0.70, 0.30, 0.12], cube_e, open);
        let place = pose([0.20, 0.80, 0.25], cube_e, open);

        let nodes = vec![
            NodeSpec { id: NODE_HOME, anchor: home },
            NodeSpec { id: NODE_PRE_HANDLE, anchor: pre_handle },
            NodeSpec { id: NODE_DOOR_OPEN, anchor: door_open_p },
            NodeSpec { id: NODE_PRE_CABINET, anchor: pre_cabinet },
            NodeSpec { id: NODE_LIFTED, anchor: lifted },
            NodeSpec { id: NODE_PRE_CUBE, anchor: pre_cube },
            NodeSpec { id: NODE_HANDLE, anchor: handle },
            NodeSpec { id: NODE_CUBE, anchor: cube_anchor },
            NodeSpec { id: NODE_PLACE, anchor: place },
        ];

        let counter_env = EnvFeatures {
            door_frac: 0.0,
            cube_pos: cube_anchor.ee_pos,
            cube_grasped: false,
            cube_in_cabinet: false,
        };

        let free_hand = FactGoal {
            cube_held: Some(false),
            ..FactGoal::default()
        };

        let movement = |id: u32, name: &str, from: u32, from_s: &WorldState, to: u32, to_s: &WorldState| {
            let spec = SkillSpec {
                id,
                name: name.to_string(),
                init_node: from,
                beta_node: to,
                start: *from_s,
                start_env: counter_env,
                collect_radius: 0.10,
                eval_radius: 0.05,
                targets: vec![SeqTarget {
                    state: *to_s,
                    gripper: GripperGoal::Open,
                }],
                reward_states: vec![0],
                preconditions: free_hand,
                effects: FactGoal::default(),
                task: TaskSpec::default(),
            };
            SkillSpec {
                task: TaskSpec {
                    goal_region: Some(spec.beta_region()),
                    required_effects: FactGoal::default(),
                },
                ..spec
            }
        };

        let mut skills = vec![
            movement(1, "move-home-predoor", NODE_HOME, &home, NODE_PRE_HANDLE, &pre_handle),
            movement(2, "move-predoor-dooropen", NODE_PRE_HANDLE, &pre_handle, NODE_DOOR_OPEN, &door_open_p),
            movement(3, "move-dooropen-precab", NODE_DOOR_OPEN, &door_open_p, NODE_PRE_CABINET, &pre_cabinet),
            movement(4, "move-precab-lifted", NODE_PRE_CABINET, &pre_cabinet, NODE_LIFTED, &lifted),
            movement(5, "move-lifted-precube", NODE_LIFTED, &lifted, NODE_PRE_CUBE, &pre_cube),
            movement(6, "move-precube-home", NODE_PRE_CUBE, &pre_cube, NODE_HOME, &home),
        ];

        // Skill 7: grab the door handle from the approach anchor.
        {
            let spec = SkillSpec {
                id: 7,
                name: "grab-door".to_string(),
                init_node: NODE_PRE_HANDLE,
                beta_node: NODE_HANDLE,
                start: pre_handle,
                start_env: counter_env,
                collect_radius: 0.08,
                eval_radius: 0.05,
                targets: vec![SeqTarget {
                    state: handle,
                    gripper: GripperGoal::Closed,
                }],
                reward_states: vec![0],
                preconditions: free_hand,
                effects: FactGoal::default(),
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: FactGoal::default(),
            };
            skills.push(SkillSpec { task, ..spec });
        }

        // Skill 8: slide the door open along the handle track, then let go.
        {
            let start = WorldState {
                g_cmd: -1.0,
                g_force: sim.nominal_force,
                g_gap: sim.handle_gap,
                ..handle
            };
            let handle_closed = WorldState { g_gap: sim.handle_gap, ..handle };
            let door_open_grip = WorldState { g_gap: sim.handle_gap, ..door_open_p };
            let spec = SkillSpec {
                id: 8,
                name: "slide-door".to_string(),
                init_node: NODE_HANDLE,
                beta_node: NODE_DOOR_OPEN,
                start,
                start_env: counter_env,
                collect_radius: 0.02,
                eval_radius: 0.02,
                targets: vec![
                    SeqTarget { state: handle_closed, gripper: GripperGoal::Closed },
                    SeqTarget { state: door_open_grip, gripper: GripperGoal::Closed },
                    SeqTarget { state: door_open_p, gripper: GripperGoal::Open },
                ],
                reward_states: vec![2],
                preconditions: free_hand,
                effects: FactGoal { door_open: Some(true), ..FactGoal::default() },
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: FactGoal { door_open: Some(true), ..FactGoal::default() },
            };
            skills.push(SkillSpec { task, ..spec });
        }

        // Skill 9: grab the cube off the counter.
        {
            let cube_grip = WorldState { g_gap: sim.cube_size, ..cube_anchor };
            let spec = SkillSpec {
                id: 9,
                name: "grab-cube".to_string(),
                init_node: NODE_PRE_CUBE,
                beta_node: NODE_CUBE,
                start: pre_cube,
                start_env: counter_env,
                collect_radius: 0.08,
                eval_radius: 0.05,
                targets: vec![SeqTarget {
                    state: cube_grip,
                    gripper: GripperGoal::Closed,
                }],
                reward_states: vec![0],
                preconditions: FactGoal {
                    cube_held: Some(false),
                    cube_on_counter: Some(true),
                    ..FactGoal::default()
                },
                effects: FactGoal {
                    cube_held: Some(true),
                    cube_on_counter: Some(false),
                    ..FactGoal::default()
                },
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: FactGoal { cube_held: Some(true), ..FactGoal::default() },
            };
            skills.push(SkillSpec { task, ..spec });
        }

        let holding = |at: &WorldState| WorldState {
            g_cmd: -1.0,
            g_force: sim.nominal_force,
            g_gap: sim.cube_size,
            ..*at
        };
        let held_env = |at: &WorldState| EnvFeatures {
            door_frac: 0.0,
            cube_pos: at.ee_pos,
            cube_grasped: true,
            cube_in_cabinet: false,
        };
        let held = FactGoal { cube_held: Some(true), ..FactGoal::default() };

        // Skill 10: lift the held cube.
        {
            let spec = SkillSpec {
                id: 10,
                name: "lift-cube".to_string(),
                init_node: NODE_CUBE,
                beta_node: NODE_LIFTED,
                start: holding(&cube_anchor),
                start_env: held_env(&cube_anchor),
                collect_radius: 0.08,
                eval_radius: 0.05,
                targets: vec![SeqTarget {
                    state: holding(&lifted),
                    gripper: GripperGoal::Closed,
                }],
                reward_states: vec![0],
                preconditions: held,
                effects: FactGoal::default(),
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: held,
            };
            skills.push(SkillSpec { task, ..spec });
        }

        // Skill 11: carry the cube over to the cabinet.
        {
            let spec = SkillSpec {
                id: 11,
                name: "move-cube".to_string(),
                init_node: NODE_LIFTED,
                beta_node: NODE_PRE_CABINET,
                start: holding(&lifted),
                start_env: held_env(&lifted),
                collect_radius: 0.08,
                eval_radius: 0.05,
                targets: vec![SeqTarget {
                    state: holding(&pre_cabinet),
                    gripper: GripperGoal::Closed,
                }],
                reward_states: vec![0],
                preconditions: held,
                effects: FactGoal::default(),
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: held,
            };
            skills.push(SkillSpec { task, ..spec });
        }

        // Skill 12: place the cube inside the open cabinet and release.
        {
            let start_env = EnvFeatures {
                door_frac: 1.0,
                ..held_env(&pre_cabinet)
            };
            let spec = SkillSpec {
                id: 12,
                name: "place-cube".to_string(),
                init_node: NODE_PRE_CABINET,
                beta_node: NODE_PLACE,
                start: holding(&pre_cabinet),
                start_env,
                collect_radius: 0.05,
                eval_radius: 0.05,
                targets: vec![
                    SeqTarget { state: holding(&place), gripper: GripperGoal::Closed },
                    SeqTarget { state: place, gripper: GripperGoal::Open },
                ],
                reward_states: vec![1],
                preconditions: FactGoal {
                    cube_held: Some(true),
                    door_open: Some(true),
                    ..FactGoal::default()
                },
                effects: FactGoal {
                    cube_held: Some(false),
                    cube_in_cabinet: Some(true),
                    cube_on_counter: Some(false),
                    ..FactGoal::default()
                },
                task: TaskSpec::default(),
            };
            let task = TaskSpec {
                goal_region: Some(spec.beta_region()),
                required_effects: FactGoal {
                    cube_in_cabinet: Some(true),
                    ..FactGoal::default()
                },
            };
            skills.push(SkillSpec { task, ..spec });
        }

        // 8 test centers: 5 at movement endpoints, 3 along the long edges.
        let mid = |a: &WorldState, b: &WorldState, ori_of: &WorldState| TestCenter {
            name: String::new(),
            pos: [
                0.5 * (a.ee_pos[0] + b.ee_pos[0]),
                0.5 * (a.ee_pos[1] + b.ee_pos[1]),
                0.5 * (a.ee_pos[2] + b.ee_pos[2]),
            ],
            quat: ori_of.ee_quat,
        };
        let named = |name: &str, c: TestCenter| TestCenter { name: name.to_string(), ..c };
        let at = |name: &str, s: &WorldState| TestCenter {
            name: name.to_string(),
            pos: s.ee_pos,
            quat: s.ee_quat,
        };
        let centers = vec![
            at("home", &home),
            at("pre-handle", &pre_handle),
            at("door-open", &door_open_p),
            at("pre-cabinet", &pre_cabinet),
            at("pre-cube", &pre_cube),
            named("edge-precab-lifted", mid(&pre_cabinet, &lifted, &lifted)),
            named("edge-dooropen-precab", mid(&door_open_p, &pre_cabinet, &pre_cabinet)),
            named("edge-precube-home", mid(&pre_cube, &home, &home)),
        ];

        Catalog { sim, nodes, skills, centers }
    }

    pub fn skill(&self, id: u32) -> Result<&SkillSpec> {
        self.skills
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::rejected(format!("unknown skill id {id}")))
    }

    pub fn node(&self, id: u32) -> Result<&NodeSpec> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::rejected(format!("unknown node id {id}")))
    }

    pub fn movement_skill_ids(&self) -> Vec<u32> {
        self.skills.iter().filter(|s| s.is_movement()).map(|s| s.id).collect()
    }

    /// Initial environment and binary-reward goal for a pipeline task.
    pub fn task_spec(&self, kind: TaskKind) -> (EnvFeatures, TaskSpec) {
        let counter_env = EnvFeatures {
            door_frac: 0.0,
            cube_pos: self.skill(9).unwrap().start_env.cube_pos,
            cube_grasped: false,
            cube_in_cabinet: false,
        };
        let open_env = EnvFeatures { door_frac: 1.0, ..counter_env };
        let lifted_beta = self.skill(10).unwrap().beta_region();
        match kind {
            TaskKind::PickUp => (
                counter_env,
                TaskSpec {
                    goal_region: Some(lifted_beta),
                    required_effects: FactGoal { cube_held: Some(true), ..FactGoal::default() },
                },
            ),
            TaskKind::OpenDoor => (
                counter_env,
                TaskSpec {
                    goal_region: None,
                    required_effects: FactGoal { door_open: Some(true), ..FactGoal::default() },
                },
            ),
            TaskKind::OpenPickup => (
                counter_env,
                TaskSpec {
                    goal_region: Some(lifted_beta),
                    required_effects: FactGoal {
                        door_open: Some(true),
                        cube_held: Some(true),
                        ..FactGoal::default()
                    },
                },
            ),
            TaskKind::PickupPlace => (
                open_env,
                TaskSpec {
                    goal_region: None,
                    required_effects: FactGoal {
                        cube_in_cabinet: Some(true),
                        ..FactGoal::default()
                    },
                },
            ),
            TaskKind::OpenPickupPlace => (
                counter_env,
                TaskSpec {
                    goal_region: None,
                    required_effects: FactGoal {
                        door_open: Some(true),
                        cube_in_cabinet: Some(true),
                        ..FactGoal::default()
                    },
                },
            ),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Catalog> {
        let cat: Catalog = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cat.sim.validate()?;
        Ok(cat)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_skills_six_movement() {
        let cat = Catalog::builtin();
        assert_eq!(cat.skills.len(), 12);
        assert_eq!(cat.movement_skill_ids(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn anchors_are_distinct_beyond_matching_tolerance() {
        let cat = Catalog::builtin();
        for (i, a) in cat.nodes.iter().enumerate() {
            for b in cat.nodes.iter().skip(i + 1) {
                let d: f64 = a
                    .anchor
                    .ee_pos
                    .iter()
                    .zip(&b.anchor.ee_pos)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > MATCH_POS_TOL, "nodes {} and {} too close: {d}", a.id, b.id);
            }
        }
    }

    #[test]
    fn skill_endpoints_reference_known_nodes() {
        let cat = Catalog::builtin();
        for s in &cat.skills {
            cat.node(s.init_node).unwrap();
            cat.node(s.beta_node).unwrap();
            // Start anchor equals the init node anchor pose.
            let init = cat.node(s.init_node).unwrap();
            for k in 0..3 {
                assert!((s.start.ee_pos[k] - init.anchor.ee_pos[k]).abs() < 1e-12);
            }
            // β region sits at the beta node anchor pose.
            let beta = cat.node(s.beta_node).unwrap();
            let region = s.beta_region();
            for k in 0..3 {
                assert!((region.pos[k] - beta.anchor.ee_pos[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn movement_cycle_chains() {
        let cat = Catalog::builtin();
        for w in [[1u32, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 1]] {
            let a = cat.skill(w[0]).unwrap();
            let b = cat.skill(w[1]).unwrap();
            assert_eq!(a.beta_node, b.init_node);
        }
    }

    #[test]
    fn catalog_round_trips() {
        let cat = Catalog::builtin();
        let text = serde_json::to_string(&cat).unwrap();
        let back: Catalog = serde_json::from_str(&text).unwrap();
        assert_eq!(cat, back);
    }

    #[test]
    fn checked_in_catalog_matches_builtin() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../assets/catalog.json");
        let on_disk = Catalog::load(&path).unwrap();
        assert_eq!(on_disk, Catalog::builtin());
    }

    #[test]
    fn eight_centers() {
        let cat = Catalog::builtin();
        assert_eq!(cat.centers.len(), 8);
        let sim = &cat.sim;
        for c in &cat.centers {
            assert!(sim.in_workspace(&c.pos), "{} outside workspace", c.name);
        }
    }
}
