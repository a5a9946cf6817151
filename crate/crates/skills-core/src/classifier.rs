//! The state-to-skill classifier: maps any world state to the movement
//! skill most likely to bring the agent onto the graph, plus the
//! confusion-matrix evaluation with tri-diagonal corrected accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkillGraph;
use crate::nn::{softmax_ce_loss, AdamState, ForwardCache, Mlp, OutputActivation};
use crate::orl::{Normalization, SkillPolicy, STATE_DIM};
use crate::quat;
use crate::sim::{Simulator, WorldState};

pub const NUM_CLASSES: usize = 6;
pub const HIDDEN: usize = 256;
pub const EPOCHS: u32 = 9;
/// Batch size as printed in the evaluation protocol (1028, not 1024).
pub const BATCH: usize = 1028;
pub const SPLIT: f64 = 0.8;

/// The trained classifier: network, input normalization, and the skill
/// id represented by each class index (ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierNet {
    pub net: Mlp,
    pub norm: Normalization,
    pub skill_ids: Vec<u32>,
}

impl ClassifierNet {
    /// Class probabilities for a state.
    pub fn probs(&self, state: &WorldState, cache: &mut ForwardCache) -> Result<Vec<f64>> {
        let raw = state.to_vec();
        let mut ns = [0.0; STATE_DIM];
        self.norm.apply(&raw, &mut ns);
        Ok(self.net.forward(&ns, cache)?.to_vec())
    }

    /// Most likely movement skill; ties break to the lowest skill id
    /// (= lowest class index, since skill_ids are ascending).
    pub fn classify(&self, state: &WorldState, cache: &mut ForwardCache) -> Result<u32> {
        let p = self.probs(state, cache)?;
        let mut best = 0usize;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        Ok(self.skill_ids[best])
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ClassifierNet> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Integer prediction counts; row = true class, column = predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Entries normalized by the total count (sum 1 within 1e-9).
    pub fn normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let total = self.total() as f64;
        let mut m = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for r in 0..NUM_CLASSES {
            for c in 0..NUM_CLASSES {
                m[r][c] = self.counts[r][c] as f64 / total;
            }
        }
        m
    }
}

/// Main-diagonal mass of a normalized confusion matrix.
pub fn plain_accuracy(m: &[[f64; NUM_CLASSES]; NUM_CLASSES]) -> f64 {
    (0..NUM_CLASSES).map(|k| m[k][k]).sum()
}

/// An ordering of the movement skill ids in which adjacent skills share
/// a graph endpoint node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassOrdering {
    pub skill_ids: Vec<u32>,
}

/// Main + super + sub diagonal mass after permuting the matrix into the
/// given ordering. `class_ids[k]` is the skill id of matrix row/col `k`.
pub fn corrected_accuracy(
    m: &[[f64; NUM_CLASSES]; NUM_CLASSES],
    ordering: &ClassOrdering,
    class_ids: &[u32],
) -> Result<f64> {
    if class_ids.len() != NUM_CLASSES || ordering.skill_ids.len() != NUM_CLASSES {
        return Err(Error::rejected("ordering must cover all 6 classes"));
    }
    let mut perm = Vec::with_capacity(NUM_CLASSES);
    for id in &ordering.skill_ids {
        let Some(k) = class_ids.iter().position(|c| c == id) else {
            return Err(Error::rejected(format!("skill {id} is not a classifier class")));
        };
        if perm.contains(&k) {
            return Err(Error::rejected(format!("skill {id} repeated in ordering")));
        }
        perm.push(k);
    }
    let mut acc = 0.0;
    for i in 0..NUM_CLASSES {
        acc += m[perm[i]][perm[i]];
        if i + 1 < NUM_CLASSES {
            acc += m[perm[i]][perm[i + 1]];
            acc += m[perm[i + 1]][perm[i]];
        }
    }
    Ok(acc)
}

/// Greedy endpoint-sharing ordering: start at the lowest skill id, then
/// repeatedly append the lowest-id unused skill sharing a graph endpoint
/// node with the last one.
pub fn derive_ordering(graph: &SkillGraph, movement_skill_ids: &[u32]) -> Result<ClassOrdering> {
    let mut ids: Vec<u32> = movement_skill_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::rejected("no movement skills given"));
    }
    let endpoints = |id: u32| -> Result<(u32, u32)> {
        graph
            .options
            .values()
            .flatten()
            .find(|o| o.skill_id == id)
            .map(|o| (o.init_node, o.beta_node))
            .ok_or_else(|| Error::rejected(format!("skill {id} not in graph")))
    };
    let shares = |a: (u32, u32), b: (u32, u32)| -> bool {
        a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1
    };
    let mut order = vec![ids[0]];
    let mut rest: Vec<u32> = ids[1..].to_vec();
    while !rest.is_empty() {
        let last = endpoints(*order.last().unwrap())?;
        let mut found = None;
        for (k, &id) in rest.iter().enumerate() {
            if shares(last, endpoints(id)?) {
                found = Some(k);
                break;
            }
        }
        match found {
            Some(k) => order.push(rest.remove(k)),
            None => {
                return Err(Error::rejected(format!(
                    "no unused skill shares an endpoint with skill {} (remaining: {:?})",
                    order.last().unwrap(),
                    rest
                )))
            }
        }
    }
    Ok(ClassOrdering { skill_ids: order })
}

/// Train on a stratified split and evaluate the held-out confusion
/// matrix. `labeled` pairs each state with a class index `0..6`.
pub fn train_classifier(
    labeled: &[([f64; STATE_DIM], usize)],
    skill_ids: &[u32],
    epochs: u32,
    batch: usize,
    split: f64,
    learning_rate: f64,
    seed: u64,
) -> Result<(ClassifierNet, ConfusionMatrix)> {
    if !(0.0 < split && split < 1.0) {
        return Err(Error::rejected("split must be in (0, 1)"));
    }
    if skill_ids.len() != NUM_CLASSES {
        return Err(Error::rejected("expected 6 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Stratified split: shuffle within each class, take the head.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, (_, label)) in labeled.iter().enumerate() {
        if *label >= NUM_CLASSES {
            return Err(Error::rejected(format!("label {label} out of range")));
        }
        by_class[*label].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in by_class.iter_mut() {
        for i in (1..class.len()).rev() {
            let j = rng.gen_range(0..=i);
            class.swap(i, j);
        }
        let cut = (class.len() as f64 * split).round() as usize;
        if cut == 0 || cut == class.len() {
            return Err(Error::rejected(
                "a class is absent from the training or test split",
            ));
        }
        train_idx.extend_from_slice(&class[..cut]);
        test_idx.extend_from_slice(&class[cut..]);
    }

    let norm = Normalization::from_rows(
        STATE_DIM,
        train_idx.iter().map(|&i| labeled[i].0.as_slice()),
    )?;
    let mut net = Mlp::new(
        &[STATE_DIM, HIDDEN, HIDDEN, NUM_CLASSES],
        OutputActivation::SoftmaxCrossEntropy,
        &mut rng,
    )?;
    let mut adam = AdamState::new(&net, learning_rate);
    let mut grads = net.gradients();
    let mut cache = ForwardCache::new();
    let mut delta = vec![0.0; NUM_CLASSES];
    let mut ns = [0.0; STATE_DIM];

    for _ in 0..epochs {
        for i in (1..train_idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            train_idx.swap(i, j);
        }
        for chunk in train_idx.chunks(batch) {
            grads.zero();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (x, label) = &labeled[i];
                norm.apply(x, &mut ns);
                let probs = net.forward(&ns, &mut cache)?;
                softmax_ce_loss(probs, *label, &mut delta);
                for d in delta.iter_mut() {
                    *d *= inv;
                }
                net.backward(&cache, &delta, &mut grads, None)?;
            }
            adam.step(&mut net, &grads)?;
        }
    }
    if !net.is_finite() {
        return Err(Error::Divergence("non-finite classifier parameters".into()));
    }

    let clf = ClassifierNet {
        net,
        norm,
        skill_ids: skill_ids.to_vec(),
    };
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for &i in &test_idx {
        let (x, label) = &labeled[i];
        clf.norm.apply(x, &mut ns);
        let p = clf.net.forward(&ns, &mut cache)?;
        let mut best = 0usize;
        for (k, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = k;
            }
        }
        counts[*label][best] += 1;
    }
    Ok((clf, ConfusionMatrix { counts }))
}

/// One row of the reach test report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachRow {
    pub center_index: usize,
    pub episodes: u32,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachReport {
    pub rows: Vec<ReachRow>,
    pub average: f64,
}

/// Sample a start pose in a ball around `center` with a per-angle
/// orientation spread, gripper open, default counter environment.
pub fn sample_reach_start(
    center: &WorldState,
    radius: f64,
    ori_spread: f64,
    cfg: &crate::sim::SimConfig,
    rng: &mut ChaCha8Rng,
) -> WorldState {
    let mut s = *center;
    loop {
        let off = [
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
        ];
        if off[0] * off[0] + off[1] * off[1] + off[2] * off[2] <= radius * radius {
            for k in 0..3 {
                s.ee_pos[k] =
                    (center.ee_pos[k] + off[k]).clamp(cfg.workspace_min[k], cfg.workspace_max[k]);
            }
            break;
        }
    }
    if ori_spread > 0.0 {
        let dq = quat::from_euler(
            rng.gen_range(-ori_spread..=ori_spread),
            rng.gen_range(-ori_spread..=ori_spread),
            rng.gen_range(-ori_spread..=ori_spread),
        );
        s.ee_quat = quat::multiply(&center.ee_quat, &dq);
        quat::normalize(&mut s.ee_quat);
    }
    s
}

/// For each center: sample starts, classify, execute the chosen skill's
/// policy, count success as reaching that skill's termination region.
#[allow(clippy::too_many_arguments)]
pub fn reach_graph_test(
    clf: &ClassifierNet,
    policies: &[SkillPolicy],
    sim: &mut Simulator,
    centers: &[WorldState],
    radius: f64,
    ori_spread: f64,
    episodes: u32,
    budget: u32,
    seed: u64,
) -> Result<ReachReport> {
    let env = crate::sim::EnvFeatures {
        door_frac: 0.0,
        cube_pos: [0.70, 0.30, 0.12],
        cube_grasped: false,
        cube_in_cabinet: false,
    };
    let mut cache = ForwardCache::new();
    let mut rows = Vec::with_capacity(centers.len());
    for (ci, center) in centers.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xc3a5 + ci as u64 * 0x9e37_79b9));
        let mut wins = 0u32;
        for ep in 0..episodes {
            let start = sample_reach_start(center, radius, ori_spread, sim.config(), &mut rng);
            let skill_id = clf.classify(&start, &mut cache)?;
            let policy = policies
                .iter()
                .find(|p| p.skill_id == skill_id)
                .ok_or_else(|| Error::rejected(format!("no policy for skill {skill_id}")))?;
            sim.reset(&start, &env, seed.wrapping_add((ci as u64) << 32 | ep as u64))?;
            for _ in 0..budget {
                let s = *sim.state();
                if policy.beta.contains(&s, sim.config()) {
                    break;
                }
                let a = policy.act(&s, &mut cache)?;
                sim.step(&a)?;
            }
            if policy.beta.contains(sim.state(), sim.config()) {
                wins += 1;
            }
        }
        rows.push(ReachRow {
            center_index: ci,
            episodes,
            success_rate: wins as f64 / episodes as f64,
        });
    }
    let average = rows.iter().map(|r| r.success_rate).sum::<f64>() / rows.len() as f64;
    Ok(ReachReport { rows, average })
}

/// The published confusion matrix used by the arithmetic checks.
pub const PUBLISHED_CONFUSION: [[f64; NUM_CLASSES]; NUM_CLASSES] = [
    [0.129, 0.0, 0.002, 0.007, 0.0, 0.0],
    [0.0, 0.136, 0.0, 0.0, 0.0, 0.003],
    [0.002, 0.005, 0.12, 0.001, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.285, 0.028, 0.012],
    [0.0, 0.0, 0.0, 0.034, 0.103, 0.002],
    [0.0, 0.0, 0.0, 0.043, 0.017, 0.067],
];
