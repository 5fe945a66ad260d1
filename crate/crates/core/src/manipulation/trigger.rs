use serde::{Deserialize, Serialize};

use super::ManipError;
use crate::diffsim::{SimScene, SimState};
use crate::geom;
use crate::scene::{ArticulatedModel, LinkId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    /// rad
    pub joint_margin: f64,
    /// m
    pub proximity: f64,
    pub check_proximity: bool,
    /// Spacing of the sample points along the arm links.
    pub link_spacing: f64,
    /// Arm points this close to the gripper are ignored; it is supposed to
    /// touch the object.
    pub skip_ee: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            joint_margin: 2f64.to_radians(),
            proximity: 0.03,
            check_proximity: true,
            link_spacing: 0.01,
            skip_ee: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    /// Arm joints within the margin of a limit.
    pub near_limit: Vec<usize>,
    /// Closest approach between the arm and an object link it is not
    /// meant to touch, if that was checked.
    pub min_distance: Option<f64>,
    pub proximity: bool,
}

impl TriggerReport {
    pub fn fired(&self) -> bool {
        !self.near_limit.is_empty() || self.proximity
    }

    pub fn reason(&self) -> String {
        let mut parts = Vec::new();
        if !self.near_limit.is_empty() {
            parts.push(format!("arm joints {:?} near a limit", self.near_limit));
        }
        if self.proximity {
            parts.push(format!("arm within {:.3} m of the object", self.min_distance.unwrap_or(0.0)));
        }
        parts.join("; ")
    }
}

/// Check whether the arm is about to run into its joint limits or the
/// object. `target` is the link the gripper works on, whose points are
/// never counted as obstacles.
pub fn check_replan_trigger(
    s: &SimState<f64>,
    scene: &SimScene,
    model: &ArticulatedModel,
    target: LinkId,
    cfg: &TriggerConfig,
) -> Result<TriggerReport, ManipError> {
    let near_limit = s
        .robot
        .q
        .iter()
        .zip(&scene.robot.joints)
        .enumerate()
        .filter(|(_, (q, j))| **q - j.limits[0] <= cfg.joint_margin || j.limits[1] - **q <= cfg.joint_margin)
        .map(|(i, _)| i)
        .collect();
    let mut min_distance = None;
    if cfg.check_proximity {
        let arm = scene.robot.link_points(&s.robot.q, cfg.link_spacing, cfg.skip_ee);
        let held = s.attachment.map(|a| a.link);
        let pts = model
            .world_points(&s.object.q)
            .map_err(|e| ManipError::Invalid(e.to_string()))?;
        let r2 = cfg.proximity * cfg.proximity;
        let mut best = f64::INFINITY;
        'outer: for (p, l) in &pts {
            if *l == target || Some(*l) == held {
                continue;
            }
            for a in &arm {
                let d = geom::sub(p, a);
                let d2 = geom::dot(&d, &d);
                if d2 < best {
                    best = d2;
                    if best < r2 {
                        break 'outer;
                    }
                }
            }
        }
        if best.is_finite() {
            min_distance = Some(best.sqrt());
        }
    }
    Ok(TriggerReport {
        near_limit,
        proximity: min_distance.is_some_and(|d| d < cfg.proximity),
        min_distance,
    })
}
