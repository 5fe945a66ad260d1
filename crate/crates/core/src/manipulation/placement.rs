use super::ManipError;
use crate::diffsim::{handle_point, ObjectState, RobotArm, SimScene, SimState};
use crate::geom;
use crate::scene::{ArticulatedModel, JointType, LinkId};

/// Preferred distance from the arm base to the handle (m).
const COMFORT: f64 = 0.5;

/// Put a three-link arm where it can move the handle of `link` from the
/// reference configuration to `q_goal`. For a hinge the arm works in the
/// plane of the handle's circle, based on the far side of the arc's
/// bisector; for a slide it stands in front of the drawer, a little to
/// the side, in a plane containing the slide direction.
pub fn place_arm(model: &ArticulatedModel, link: LinkId, q_goal: f64) -> Result<RobotArm, ManipError> {
    let joint = model
        .joint_into(link)
        .ok_or(ManipError::Invalid(format!("link {link} has no joint")))?;
    let q0 = vec![0.0; model.joints.len()];
    let (o, d) = model
        .joint_axis_world(link, &q0)
        .ok_or(ManipError::Invalid(format!("link {link} has no joint")))?;
    let h = handle_point(model, link).ok_or(ManipError::Invalid(format!("link {link} has no points")))?;
    match joint.kind {
        JointType::Revolute => {
            let along = geom::dot(&geom::sub(&h, &o), &d);
            let c = geom::add(&o, &geom::scale_f(&d, along));
            let r0 = geom::sub(&h, &c);
            let rho = geom::norm(&r0);
            if rho < 0.05 {
                return Err(ManipError::Invalid(format!("handle of link {link} sits on the hinge")));
            }
            let e1 = geom::scale_f(&r0, 1.0 / rho);
            let e2 = geom::cross(&d, &e1);
            let mid = 0.5 * q_goal;
            let half = 0.5 * q_goal.abs();
            // distance to the arc ends is the worst case; its midpoint is the closest
            let worst = |dist: f64| {
                let near = (dist - rho).abs();
                let far = (dist * dist + rho * rho - 2.0 * dist * rho * half.cos()).sqrt();
                (near - COMFORT).abs().max((far - COMFORT).abs())
            };
            let mut best = (f64::INFINITY, rho);
            for i in 0..=400 {
                let dist = rho + 0.2 + 0.8 * i as f64 / 400.0;
                let w = worst(dist);
                if w < best.0 {
                    best = (w, dist);
                }
            }
            let u = geom::add(&geom::scale_f(&e1, mid.cos()), &geom::scale_f(&e2, mid.sin()));
            let base = geom::add(&c, &geom::scale_f(&u, best.1));
            Ok(RobotArm::planar3(base, e1, e2))
        }
        JointType::Prismatic => {
            let up = [0.0, 0.0, 1.0];
            let side = geom::cross(&d, &up);
            let n = if geom::norm(&side) < 1e-6 { [1.0, 0.0, 0.0] } else { geom::normalize(&side) };
            let n = geom::normalize(&geom::sub(&n, &geom::scale_f(&d, geom::dot(&n, &d))));
            let out = geom::scale_f(&d, q_goal.max(0.0) + 0.2);
            let base = geom::add(&geom::add(&h, &out), &geom::scale_f(&n, 0.3));
            Ok(RobotArm::planar3(base, d, n))
        }
        JointType::Fixed => Err(ManipError::Invalid(format!("link {link} is fixed"))),
    }
}

/// Resting arm with the gripper 40% of the way back from the handle of
/// joint `joint` toward the base, shifted by `offset` in the arm plane.
pub fn home_state(scene: &SimScene, joint: usize, object_q: &[f64], offset: [f64; 2]) -> Result<SimState<f64>, ManipError> {
    let arm = &scene.robot;
    let j = scene
        .joints
        .get(joint)
        .ok_or(ManipError::Invalid(format!("no object joint {joint}")))?;
    if object_q.len() != scene.joints.len() {
        return Err(ManipError::Invalid("object configuration has the wrong length".into()));
    }
    let h = j.handle_at(object_q[joint]);
    let p = arm.to_plane(&h);
    let target_p = [0.6 * p[0] + offset[0], 0.6 * p[1] + offset[1]];
    let target = [0, 1, 2].map(|i| arm.base[i] + target_p[0] * arm.e1[i] + target_p[1] * arm.e2[i]);
    // prefer the elbow bent toward positive angles
    let heading = target_p[1].atan2(target_p[0]);
    let guesses = [
        [heading - 0.8, 1.2, 0.4],
        [heading - 0.4, 0.6, 0.3],
        [heading + 0.8, -1.2, -0.4],
        [heading + 0.4, -0.6, -0.3],
    ];
    let Some(q) = guesses.iter().map(|g| arm.ik(&target, g)).find(|(_, e)| *e < 1e-6).map(|(q, _)| q) else {
        return Err(ManipError::Unreachable {
            dist: target_p[0].hypot(target_p[1]),
            reach: arm.reach(),
        });
    };
    Ok(SimState {
        object: ObjectState::rest(object_q.to_vec()),
        robot: ObjectState::rest(q),
        attachment: None,
    })
}
