use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IpAction, IpEpisodeLog, IpError, ModelParams};
use crate::scene::{JointType, LinkId, TreeStructure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SelectionPolicy {
    RoundRobin,
    /// ε-greedy over links on the mean observed reward; links never tried
    /// count as best.
    Bandit { epsilon: f64 },
    Random,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Bandit { epsilon: 0.2 }
    }
}

/// Where a joint may be pushed and how far at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionBounds {
    pub limits: BTreeMap<LinkId, [f64; 2]>,
    pub max_step_revolute: f64,
    pub max_step_prismatic: f64,
    pub default_revolute: [f64; 2],
    pub default_prismatic: [f64; 2],
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds {
            limits: BTreeMap::new(),
            max_step_revolute: 0.8,
            max_step_prismatic: 0.2,
            default_revolute: [-PI, PI],
            default_prismatic: [-0.5, 0.5],
        }
    }
}

impl ActionBounds {
    fn range(&self, link: LinkId, kind: JointType) -> [f64; 2] {
        self.limits.get(&link).copied().unwrap_or(match kind {
            JointType::Prismatic => self.default_prismatic,
            _ => self.default_revolute,
        })
    }

    fn max_step(&self, kind: JointType) -> f64 {
        match kind {
            JointType::Prismatic => self.max_step_prismatic,
            _ => self.max_step_revolute,
        }
    }
}

/// Children of tree edges whose most likely type moves.
pub fn movable_links(z: &ModelParams, e: &TreeStructure) -> Vec<(LinkId, JointType)> {
    let mut v: Vec<(LinkId, JointType)> = e
        .edges
        .iter()
        .map(|&(u, c)| (c, z.j.joint_type(u, c)))
        .filter(|(_, t)| t.is_movable())
        .collect();
    v.sort_by_key(|x| x.0);
    v
}

fn mean_rewards(log: &IpEpisodeLog) -> BTreeMap<LinkId, f64> {
    let mut acc: BTreeMap<LinkId, (f64, usize)> = BTreeMap::new();
    for r in &log.records {
        let e = acc.entry(r.action.link).or_insert((0.0, 0));
        e.0 += r.reward;
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}

/// Pick the link, then a displacement of 30–70% of the room left on the
/// side with more room, capped at the per-type step size.
pub fn select_action(
    z: &ModelParams,
    e: &TreeStructure,
    log: &IpEpisodeLog,
    q_links: &[f64],
    policy: SelectionPolicy,
    bounds: &ActionBounds,
    seed: u64,
) -> Result<IpAction, IpError> {
    let movable = movable_links(z, e);
    if movable.is_empty() {
        return Err(IpError::NoMovableJoints);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = match policy {
        SelectionPolicy::RoundRobin => log.records.len() % movable.len(),
        SelectionPolicy::Random => rng.gen_range(0..movable.len()),
        SelectionPolicy::Bandit { epsilon } => {
            let explore = rng.gen::<f64>() < epsilon;
            if explore {
                rng.gen_range(0..movable.len())
            } else {
                let means = mean_rewards(log);
                let score = |l: LinkId| means.get(&l).copied().unwrap_or(f64::INFINITY);
                let mut best = 0;
                for i in 1..movable.len() {
                    if score(movable[i].0) > score(movable[best].0) {
                        best = i;
                    }
                }
                best
            }
        }
    };
    let (link, kind) = movable[pick];
    let [lo, hi] = bounds.range(link, kind);
    let q = q_links.get(link - 1).copied().unwrap_or(0.0);
    let up = (hi - q).max(0.0);
    let down = (q - lo).max(0.0);
    let (room, sign) = if up >= down { (up, 1.0) } else { (down, -1.0) };
    let frac = rng.gen_range(0.3..=0.7);
    let delta = sign * (frac * room).min(bounds.max_step(kind));
    Ok(IpAction { link, delta })
}
