//! C ABI over the skill graph planner and the state-to-skill
//! classifier. Handles are opaque; every function returns a status code
//! and the last error message is kept per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use skills_core::classifier::ClassifierNet;
use skills_core::graph::SkillGraph;
use skills_core::nn::ForwardCache;
use skills_core::sim::{EffectState, FactGoal, GoalRegion, TaskSpec, WorldState};
use skills_core::Error;

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkillsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    ParseError = 4,
    Unreachable = 5,
    NoMatch = 6,
    BufferTooSmall = 7,
    InternalError = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SkillsStatus {
    match err {
        Error::Io(_) => SkillsStatus::IoError,
        Error::Serde(_) => SkillsStatus::ParseError,
        Error::Unreachable(_) => SkillsStatus::Unreachable,
        Error::Rejected(_) | Error::Contract(_) | Error::InvalidPlan(_) | Error::Graph(_) => {
            SkillsStatus::InvalidArgument
        }
        _ => SkillsStatus::InternalError,
    }
}

fn fail(err: Error) -> SkillsStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Opaque planner handle.
pub struct SkillsGraphHandle {
    graph: SkillGraph,
}

/// Opaque classifier handle (owns its forward-pass scratch space).
pub struct SkillsClassifierHandle {
    net: ClassifierNet,
    cache: ForwardCache,
}

/// A partial assignment over the four symbolic facts. For each fact,
/// `known` selects whether the `value` constrains it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SkillsFactGoal {
    pub door_open_known: u8,
    pub door_open: u8,
    pub cube_held_known: u8,
    pub cube_held: u8,
    pub cube_in_cabinet_known: u8,
    pub cube_in_cabinet: u8,
    pub cube_on_counter_known: u8,
    pub cube_on_counter: u8,
}

/// Concrete values of the four symbolic facts.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SkillsEffectState {
    pub door_open: u8,
    pub cube_held: u8,
    pub cube_in_cabinet: u8,
    pub cube_on_counter: u8,
}

fn fact_goal(g: &SkillsFactGoal) -> FactGoal {
    let pick = |known: u8, value: u8| if known != 0 { Some(value != 0) } else { None };
    FactGoal {
        door_open: pick(g.door_open_known, g.door_open),
        cube_held: pick(g.cube_held_known, g.cube_held),
        cube_in_cabinet: pick(g.cube_in_cabinet_known, g.cube_in_cabinet),
        cube_on_counter: pick(g.cube_on_counter_known, g.cube_on_counter),
    }
}

fn effect_state(e: &SkillsEffectState) -> EffectState {
    EffectState {
        door_open: e.door_open != 0,
        cube_held: e.cube_held != 0,
        cube_in_cabinet: e.cube_in_cabinet != 0,
        cube_on_counter: e.cube_on_counter != 0,
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, SkillsStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(SkillsStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(SkillsStatus::InvalidArgument)
        }
    }
}

unsafe fn world_state(ptr: *const f64) -> Result<WorldState, SkillsStatus> {
    if ptr.is_null() {
        set_error("null state");
        return Err(SkillsStatus::NullArgument);
    }
    let v = unsafe { std::slice::from_raw_parts(ptr, 10) };
    WorldState::from_vec(v).map_err(|e| {
        set_error(&e.to_string());
        SkillsStatus::InvalidArgument
    })
}

/// Copy the last error message for this thread into `buf` (NUL
/// terminated, truncated to `cap` bytes).
#[no_mangle]
pub unsafe extern "C" fn skills_last_error(buf: *mut c_char, cap: usize) -> SkillsStatus {
    if buf.is_null() || cap == 0 {
        return SkillsStatus::NullArgument;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        let n = bytes.len().min(cap);
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        if bytes.len() > cap {
            SkillsStatus::BufferTooSmall
        } else {
            SkillsStatus::Ok
        }
    })
}

/// Load a serialized skill graph. On success `*out` owns the handle;
/// release it with `skills_graph_free`.
#[no_mangle]
pub unsafe extern "C" fn skills_graph_load(
    path: *const c_char,
    out: *mut *mut SkillsGraphHandle,
) -> SkillsStatus {
    if out.is_null() {
        set_error("null output handle");
        return SkillsStatus::NullArgument;
    }
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(Error::Io(e)),
    };
    let graph: SkillGraph = match serde_json::from_str(&text) {
        Ok(g) => g,
        Err(e) => return fail(Error::Serde(e)),
    };
    unsafe { *out = Box::into_raw(Box::new(SkillsGraphHandle { graph })) };
    SkillsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn skills_graph_free(handle: *mut SkillsGraphHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Nearest graph node to a 10-component world state, if any is within
/// the matching tolerances.
#[no_mangle]
pub unsafe extern "C" fn skills_graph_nearest_node(
    handle: *const SkillsGraphHandle,
    state: *const f64,
    out_node: *mut u32,
) -> SkillsStatus {
    if handle.is_null() || out_node.is_null() {
        set_error("null argument");
        return SkillsStatus::NullArgument;
    }
    let s = match unsafe { world_state(state) } {
        Ok(s) => s,
        Err(code) => return code,
    };
    match unsafe { &(*handle).graph }.nearest_node(&s) {
        Some(id) => {
            unsafe { *out_node = id };
            SkillsStatus::Ok
        }
        None => {
            set_error("state matches no graph node");
            SkillsStatus::NoMatch
        }
    }
}

/// Plan from `start_node` under `effects` toward a goal given as
/// required facts plus an optional goal node (`goal_node < 0` for
/// none). Skill ids are written to `out_ids` (capacity `cap`); the plan
/// length goes to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn skills_graph_plan(
    handle: *const SkillsGraphHandle,
    start_node: u32,
    effects: *const SkillsEffectState,
    goal: *const SkillsFactGoal,
    goal_node: i64,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> SkillsStatus {
    if handle.is_null() || effects.is_null() || goal.is_null() || out_len.is_null() {
        set_error("null argument");
        return SkillsStatus::NullArgument;
    }
    let graph = unsafe { &(*handle).graph };
    let goal_region: Option<GoalRegion> = if goal_node >= 0 {
        let Some(node) = graph.nodes.iter().find(|n| n.id == goal_node as u32) else {
            set_error("goal node is not in the graph");
            return SkillsStatus::InvalidArgument;
        };
        Some(GoalRegion {
            pos: node.anchor.ee_pos,
            quat: node.anchor.ee_quat,
            pos_tol: graph.pos_tol,
            ang_tol: graph.ang_tol,
            gripper: None,
        })
    } else {
        None
    };
    let task = TaskSpec {
        goal_region,
        required_effects: fact_goal(unsafe { &*goal }),
    };
    let plan = match graph.plan(start_node, effect_state(unsafe { &*effects }), &task) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let ids = plan.skill_ids();
    unsafe { *out_len = ids.len() };
    if ids.is_empty() {
        return SkillsStatus::Ok;
    }
    if out_ids.is_null() {
        set_error("null plan buffer");
        return SkillsStatus::NullArgument;
    }
    if cap < ids.len() {
        set_error("plan buffer too small");
        return SkillsStatus::BufferTooSmall;
    }
    unsafe { std::ptr::copy_nonoverlapping(ids.as_ptr(), out_ids, ids.len()) };
    SkillsStatus::Ok
}

/// Load a serialized classifier. Release with `skills_classifier_free`.
#[no_mangle]
pub unsafe extern "C" fn skills_classifier_load(
    path: *const c_char,
    out: *mut *mut SkillsClassifierHandle,
) -> SkillsStatus {
    if out.is_null() {
        set_error("null output handle");
        return SkillsStatus::NullArgument;
    }
    let path = match unsafe { path_from(path) } {
        Ok(p) => p,
        Err(code) => return code,
    };
    let net = match ClassifierNet::load(path) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    let handle = SkillsClassifierHandle {
        net,
        cache: ForwardCache::new(),
    };
    unsafe { *out = Box::into_raw(Box::new(handle)) };
    SkillsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn skills_classifier_free(handle: *mut SkillsClassifierHandle) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Movement skill id predicted for a 10-component world state.
#[no_mangle]
pub unsafe extern "C" fn skills_classifier_classify(
    handle: *mut SkillsClassifierHandle,
    state: *const f64,
    out_skill: *mut u32,
) -> SkillsStatus {
    if handle.is_null() || out_skill.is_null() {
        set_error("null argument");
        return SkillsStatus::NullArgument;
    }
    let s = match unsafe { world_state(state) } {
        Ok(s) => s,
        Err(code) => return code,
    };
    let h = unsafe { &mut *handle };
    match h.net.classify(&s, &mut h.cache) {
        Ok(id) => {
            unsafe { *out_skill = id };
            SkillsStatus::Ok
        }
        Err(e) => fail(e),
    }
}
