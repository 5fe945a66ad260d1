use serde::{Deserialize, Serialize};

use super::{object_dynamics_step, JointDynamics, ObjectState, SimError};
use crate::autodiff::{Scalar, Tape, Var};
use crate::geom::{self, V3};
use crate::scene::{ArticulatedModel, JointType, LinkId};

/// Robot joint positions and velocities share the object state layout.
pub type RobotState<S> = ObjectState<S>;

/// Planar serial arm of revolute joints embedded in 3-D. All joint axes are
/// parallel to `e1 × e2`; link `i` points along the cumulative angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotArm {
    pub base: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub lengths: Vec<f64>,
    pub joints: Vec<JointDynamics>,
}

impl RobotArm {
    /// Three-link desk arm (0.35, 0.30, 0.15 m) in the plane spanned by the
    /// orthonormal `e1`, `e2`.
    pub fn planar3(base: [f64; 3], e1: [f64; 3], e2: [f64; 3]) -> Self {
        let lim = [-2.6, 2.6];
        RobotArm {
            base,
            e1,
            e2,
            lengths: vec![0.35, 0.30, 0.15],
            joints: vec![
                JointDynamics { inertia: 0.30, damping: 0.5, drag: 0.0, limits: lim },
                JointDynamics { inertia: 0.15, damping: 0.3, drag: 0.0, limits: lim },
                JointDynamics { inertia: 0.05, damping: 0.1, drag: 0.0, limits: lim },
            ],
        }
    }

    pub fn dof(&self) -> usize {
        self.lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn normal(&self) -> [f64; 3] {
        geom::cross(&self.e1, &self.e2)
    }

    /// In-plane coordinates of a world point relative to the base.
    pub fn to_plane(&self, p: &[f64; 3]) -> [f64; 2] {
        let d = geom::sub(p, &self.base);
        [geom::dot(&d, &self.e1), geom::dot(&d, &self.e2)]
    }

    fn embed<S: Scalar>(&self, x: S, y: S) -> V3<S> {
        [0, 1, 2].map(|i| x * self.e1[i] + y * self.e2[i] + self.base[i])
    }

    /// Planar joint positions: base, each intermediate joint, end effector.
    pub fn planar_chain<S: Scalar>(&self, q: &[S]) -> Vec<[S; 2]> {
        let z = q[0].cst(0.0);
        let mut out = vec![[z, z]];
        let (mut x, mut y, mut th) = (z, z, z);
        for (qi, &l) in q.iter().zip(&self.lengths) {
            th = th + *qi;
            x = x + th.cos() * l;
            y = y + th.sin() * l;
            out.push([x, y]);
        }
        out
    }

    pub fn ee<S: Scalar>(&self, q: &[S]) -> V3<S> {
        let c = self.planar_chain(q);
        let [x, y] = c[c.len() - 1];
        self.embed(x, y)
    }

    /// World end-effector Jacobian, one column per joint.
    pub fn ee_jacobian<S: Scalar>(&self, q: &[S]) -> Vec<V3<S>> {
        let r = self.dof();
        let mut th = Vec::with_capacity(r);
        let mut acc = q[0].cst(0.0);
        for qi in q {
            acc = acc + *qi;
            th.push(acc);
        }
        (0..r)
            .map(|j| {
                let z = q[0].cst(0.0);
                let (mut dx, mut dy) = (z, z);
                for i in j..r {
                    dx = dx - th[i].sin() * self.lengths[i];
                    dy = dy + th[i].cos() * self.lengths[i];
                }
                [0, 1, 2].map(|k| dx * self.e1[k] + dy * self.e2[k])
            })
            .collect()
    }

    /// Points along every link, at most `spacing` apart, excluding the end
    /// effector region within `skip_ee` of the tip.
    pub fn link_points(&self, q: &[f64], spacing: f64, skip_ee: f64) -> Vec<[f64; 3]> {
        let c = self.planar_chain(q);
        let tip = self.ee(q);
        let mut out = Vec::new();
        for w in c.windows(2) {
            let a = self.embed(w[0][0], w[0][1]);
            let b = self.embed(w[1][0], w[1][1]);
            let len = geom::norm(&geom::sub(&b, &a));
            let n = (len / spacing).ceil().max(1.0) as usize;
            for s in 0..=n {
                let t = s as f64 / n as f64;
                let p = [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]));
                if geom::norm(&geom::sub(&p, &tip)) > skip_ee {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Damped least-squares inverse kinematics for the end-effector position
    /// projected into the arm plane. Returns the solution and the remaining
    /// planar error.
    pub fn ik(&self, target: &[f64; 3], q0: &[f64]) -> (Vec<f64>, f64) {
        let goal = self.to_plane(target);
        let mut q = q0.to_vec();
        let lambda = 1e-3;
        let mut err = f64::INFINITY;
        for _ in 0..200 {
            let c = self.planar_chain(&q);
            let tip = c[c.len() - 1];
            let e = [goal[0] - tip[0], goal[1] - tip[1]];
            err = (e[0] * e[0] + e[1] * e[1]).sqrt();
            if err < 1e-9 {
                break;
            }
            let jac = self.ee_jacobian(&q);
            let jp: Vec<[f64; 2]> = jac
                .iter()
                .map(|col| [geom::dot(col, &self.e1), geom::dot(col, &self.e2)])
                .collect();
            // dq = Jᵀ (J Jᵀ + λ I)⁻¹ e over the joints not pinned at a limit
            let mut active = vec![true; jp.len()];
            let mut dq = vec![0.0; jp.len()];
            for _ in 0..=jp.len() {
                let mut a = [[lambda, 0.0], [0.0, lambda]];
                for (col, _) in jp.iter().zip(&active).filter(|(_, on)| **on) {
                    for r in 0..2 {
                        for s in 0..2 {
                            a[r][s] += col[r] * col[s];
                        }
                    }
                }
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                let y = [
                    (a[1][1] * e[0] - a[0][1] * e[1]) / det,
                    (-a[1][0] * e[0] + a[0][0] * e[1]) / det,
                ];
                let mut changed = false;
                for (i, col) in jp.iter().enumerate() {
                    dq[i] = if active[i] { col[0] * y[0] + col[1] * y[1] } else { 0.0 };
                    let lim = self.joints[i].limits;
                    let pinned = (q[i] <= lim[0] && dq[i] < 0.0) || (q[i] >= lim[1] && dq[i] > 0.0);
                    if active[i] && pinned {
                        active[i] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            for (i, d) in dq.iter().enumerate() {
                let lim = self.joints[i].limits;
                q[i] = (q[i] + d).clamp(lim[0], lim[1]);
            }
        }
        (q, err)
    }
}

/// Object joint as seen by the stepper: world axis line at the reference
/// configuration, dynamics, and the handle point at q = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectJoint {
    pub child: LinkId,
    pub kind: JointType,
    pub axis: [f64; 3],
    pub origin: [f64; 3],
    pub dynamics: JointDynamics,
    pub handle: [f64; 3],
}

impl ObjectJoint {
    /// World position of the handle at joint value `q`.
    pub fn handle_at<S: Scalar>(&self, q: S) -> V3<S> {
        let h = geom::lift3(&q, self.handle);
        match self.kind {
            JointType::Revolute => {
                let axis = geom::lift3(&q, self.axis);
                let o = geom::lift3(&q, self.origin);
                let d = geom::rotation_minus_identity(&axis, q);
                geom::add(&h, &geom::mat_vec(&d, &geom::sub(&h, &o)))
            }
            JointType::Prismatic => [0, 1, 2].map(|i| h[i] + q * self.axis[i]),
            JointType::Fixed => h,
        }
    }
}

/// Where a gripper would grab link `child`: centroid of the 10% of its
/// points farthest from the hinge (revolute) or farthest along the slide
/// (prismatic), at the reference configuration.
pub fn handle_point(model: &ArticulatedModel, child: LinkId) -> Option<[f64; 3]> {
    let q0 = vec![0.0; model.joints.len()];
    let (o, d) = model.joint_axis_world(child, &q0)?;
    let kind = model.joint_into(child)?.kind;
    let pts: Vec<[f64; 3]> = model
        .world_points(&q0)
        .ok()?
        .into_iter()
        .filter(|(_, l)| *l == child)
        .map(|(p, _)| p)
        .collect();
    if pts.is_empty() {
        return None;
    }
    let score = |p: &[f64; 3]| match kind {
        JointType::Prismatic => geom::dot(&geom::sub(p, &o), &d),
        _ => geom::point_line_distance(p, &o, &d),
    };
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| score(&pts[b]).total_cmp(&score(&pts[a])).then(a.cmp(&b)));
    let n = (pts.len() / 10).max(1);
    let mut c = [0.0; 3];
    for &i in &idx[..n] {
        c = geom::add(&c, &pts[i]);
    }
    Some(geom::scale_f(&c, 1.0 / n as f64))
}

/// Object scale changes applied to build the stand-in "real world".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mass_scale: f64,
    pub damping_add: f64,
    pub drag: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            mass_scale: 1.2,
            damping_add: 0.1,
            drag: 0.05,
        }
    }
}

/// Everything the stepper needs besides the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScene {
    pub joints: Vec<ObjectJoint>,
    pub robot: RobotArm,
    pub dt: f64,
    pub grip_radius: f64,
}

/// Default capture radius of the gripper (m).
pub const GRIP_RADIUS: f64 = 0.02;

impl SimScene {
    /// Stepper view of `model` (joints in model order) with `robot`.
    pub fn from_model(model: &ArticulatedModel, robot: RobotArm, dt: f64) -> Result<Self, SimError> {
        let q0 = vec![0.0; model.joints.len()];
        let mut joints = Vec::with_capacity(model.joints.len());
        for j in &model.joints {
            let (origin, axis) = model
                .joint_axis_world(j.child, &q0)
                .ok_or(SimError::UnknownLink(j.child))?;
            let link = model.link(j.child).ok_or(SimError::UnknownLink(j.child))?;
            let handle = handle_point(model, j.child).ok_or(SimError::UnknownLink(j.child))?;
            joints.push(ObjectJoint {
                child: j.child,
                kind: j.kind,
                axis,
                origin,
                dynamics: JointDynamics {
                    inertia: link.attrs.inertia,
                    damping: link.attrs.damping,
                    drag: 0.0,
                    limits: if j.kind == JointType::Fixed { [0.0, 0.0] } else { j.limits },
                },
                handle,
            });
        }
        Ok(SimScene {
            joints,
            robot,
            dt,
            grip_radius: GRIP_RADIUS,
        })
    }

    pub fn object_dynamics(&self) -> Vec<JointDynamics> {
        self.joints.iter().map(|j| j.dynamics).collect()
    }

    pub fn joint_of(&self, link: LinkId) -> Option<usize> {
        self.joints.iter().position(|j| j.child == link)
    }

    /// Flat state length: object (q, q̇) then robot (q, q̇).
    pub fn state_dim(&self) -> usize {
        2 * self.joints.len() + 2 * self.robot.dof()
    }

    pub fn action_dim(&self) -> usize {
        self.robot.dof()
    }

    pub fn perturbed(&self, p: &Perturbation) -> SimScene {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.dynamics.inertia *= p.mass_scale;
            j.dynamics.damping += p.damping_add;
            j.dynamics.drag += p.drag;
        }
        s
    }
}

/// Rigid grasp of `link` (joint index `joint`), recorded at engagement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub link: LinkId,
    pub joint: usize,
    pub q_grasp: f64,
    pub ee_grasp: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState<S> {
    pub object: ObjectState<S>,
    pub robot: RobotState<S>,
    pub attachment: Option<Attachment>,
}

impl SimState<f64> {
    pub fn lift<'t>(&self, tape: &'t Tape) -> SimState<Var<'t>> {
        SimState {
            object: self.object.lift(tape),
            robot: self.robot.lift(tape),
            attachment: self.attachment,
        }
    }
}

impl<S: Scalar> SimState<S> {
    pub fn values(&self) -> SimState<f64> {
        SimState {
            object: self.object.values(),
            robot: self.robot.values(),
            attachment: self.attachment,
        }
    }

    /// `[q_o, q̇_o, q_r, q̇_r]`
    pub fn to_vec(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(2 * (self.object.q.len() + self.robot.q.len()));
        v.extend_from_slice(&self.object.q);
        v.extend_from_slice(&self.object.qd);
        v.extend_from_slice(&self.robot.q);
        v.extend_from_slice(&self.robot.qd);
        v
    }

    pub fn from_vec(v: &[S], n_obj: usize, attachment: Option<Attachment>) -> Result<Self, SimError> {
        if v.len() < 2 * n_obj || (v.len() - 2 * n_obj) % 2 != 0 {
            return Err(SimError::SizeMismatch(format!(
                "state vector of length {} with {n_obj} object joints",
                v.len()
            )));
        }
        let r = (v.len() - 2 * n_obj) / 2;
        Ok(SimState {
            object: ObjectState {
                q: v[..n_obj].to_vec(),
                qd: v[n_obj..2 * n_obj].to_vec(),
            },
            robot: ObjectState {
                q: v[2 * n_obj..2 * n_obj + r].to_vec(),
                qd: v[2 * n_obj + r..].to_vec(),
            },
            attachment,
        })
    }
}

/// Object joint value implied by the robot configuration while attached.
pub fn constraint_map<S: Scalar>(scene: &SimScene, att: &Attachment, q_r: &[S]) -> S {
    let j = &scene.joints[att.joint];
    let e = scene.robot.ee(q_r);
    match j.kind {
        JointType::Revolute => {
            let a = geom::lift3(&q_r[0], j.axis);
            let r0 = geom::sub(&att.ee_grasp, &j.origin);
            let r0v = geom::lift3(&q_r[0], r0);
            let r = geom::sub(&e, &geom::lift3(&q_r[0], j.origin));
            let s = geom::dot(&a, &geom::cross(&r0v, &r));
            let ar0 = geom::dot(&j.axis, &r0);
            let c = geom::dot(&r0v, &r) - geom::dot(&a, &r) * ar0;
            s.atan2(c) + att.q_grasp
        }
        JointType::Prismatic => {
            let d = geom::sub(&e, &geom::lift3(&q_r[0], att.ee_grasp));
            geom::dot(&d, &geom::lift3(&q_r[0], j.axis)) + att.q_grasp
        }
        JointType::Fixed => q_r[0].cst(att.q_grasp),
    }
}

/// Analytic gradient of [`constraint_map`] with respect to the robot joints.
pub fn constraint_jacobian<S: Scalar>(scene: &SimScene, att: &Attachment, q_r: &[S]) -> Vec<S> {
    let j = &scene.joints[att.joint];
    let cols = scene.robot.ee_jacobian(q_r);
    let grad_e: V3<S> = match j.kind {
        JointType::Revolute => {
            let a = geom::lift3(&q_r[0], j.axis);
            let r = geom::sub(&scene.robot.ee(q_r), &geom::lift3(&q_r[0], j.origin));
            let along = geom::dot(&a, &r);
            let rp = geom::sub(&r, &geom::scale(&a, along));
            let n2 = geom::dot(&rp, &rp);
            let t = geom::cross(&a, &rp);
            [t[0] / n2, t[1] / n2, t[2] / n2]
        }
        JointType::Prismatic => geom::lift3(&q_r[0], j.axis),
        JointType::Fixed => [q_r[0].cst(0.0); 3],
    };
    cols.iter().map(|c| geom::dot(&grad_e, c)).collect()
}

/// Resting state with the gripper already holding the handle of object
/// joint `joint` at object configuration `object_q`. The arm pose comes from
/// inverse kinematics started at `q_guess`.
pub fn grasped_state(
    scene: &SimScene,
    joint: usize,
    object_q: &[f64],
    q_guess: &[f64],
) -> Result<SimState<f64>, SimError> {
    let j = scene.joints.get(joint).ok_or(SimError::Invalid(format!("no object joint {joint}")))?;
    if object_q.len() != scene.joints.len() || q_guess.len() != scene.robot.dof() {
        return Err(SimError::SizeMismatch(format!(
            "{} object values and {} arm values",
            object_q.len(),
            q_guess.len()
        )));
    }
    let target = j.handle_at(object_q[joint]);
    let (q, _) = scene.robot.ik(&target, q_guess);
    let ee = scene.robot.ee(&q);
    let miss = geom::norm(&geom::sub(&ee, &target));
    if miss > scene.grip_radius {
        return Err(SimError::Invalid(format!(
            "handle of link {} out of reach by {miss:.3} m",
            j.child
        )));
    }
    Ok(SimState {
        object: ObjectState::rest(object_q.to_vec()),
        robot: ObjectState::rest(q),
        attachment: Some(Attachment {
            link: j.child,
            joint,
            q_grasp: object_q[joint],
            ee_grasp: ee,
        }),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub robot_saturated: Vec<bool>,
    pub object_saturated: Vec<bool>,
    pub engaged: bool,
    pub released: bool,
    /// Generalized force delivered to the grasped joint.
    pub transmitted_force: Option<f64>,
}

/// One robot step under joint torques `tau`. Unattached, every joint moves
/// independently. Attached, the grasped joint is slaved to the end effector
/// through [`constraint_map`] and its inertia and resistance load the arm
/// through [`constraint_jacobian`]. A grasp engages at the end of the step
/// when `grasp` is set and the end effector is within the capture radius of
/// a handle; clearing `grasp` releases it.
pub fn robot_step<S: Scalar>(
    scene: &SimScene,
    s: &SimState<S>,
    tau: &[S],
    grasp: bool,
) -> Result<(SimState<S>, StepInfo), SimError> {
    let arm = &scene.robot;
    let r = arm.dof();
    let n = scene.joints.len();
    if tau.len() != r || s.robot.q.len() != r || s.robot.qd.len() != r {
        return Err(SimError::SizeMismatch(format!(
            "torques {}, robot state ({}, {}) for {r} robot joints",
            tau.len(),
            s.robot.q.len(),
            s.robot.qd.len()
        )));
    }
    if s.object.q.len() != n || s.object.qd.len() != n {
        return Err(SimError::SizeMismatch(format!(
            "object state ({}, {}) for {n} joints",
            s.object.q.len(),
            s.object.qd.len()
        )));
    }
    if let Some(i) = tau.iter().position(|v| !v.value().is_finite()) {
        return Err(SimError::NonFinite(format!("torque component {i}")));
    }
    if let Some(att) = &s.attachment {
        if att.joint >= n {
            return Err(SimError::UnknownLink(att.link));
        }
    }
    let dt = scene.dt;
    let mut info = StepInfo::default();
    let att = s.attachment.filter(|_| grasp);
    info.released = s.attachment.is_some() && !grasp;

    let mut b: Vec<S> = (0..r)
        .map(|i| tau[i] - arm.joints[i].resistance(s.robot.qd[i]))
        .collect();
    let acc: Vec<S> = match &att {
        None => (0..r).map(|i| b[i] / arm.joints[i].inertia).collect(),
        Some(a) => {
            let od = &scene.joints[a.joint].dynamics;
            let jac = constraint_jacobian(scene, a, &s.robot.q);
            let v_o = S::dot(&jac, &s.robot.qd);
            let res = od.resistance(v_o);
            for i in 0..r {
                b[i] = b[i] - jac[i] * res;
            }
            // (D + I_o j jᵀ)⁻¹ b by Sherman–Morrison
            let y: Vec<S> = (0..r).map(|i| b[i] / arm.joints[i].inertia).collect();
            let w: Vec<S> = (0..r).map(|i| jac[i] / arm.joints[i].inertia).collect();
            let jy = S::dot(&jac, &y);
            let jw = S::dot(&jac, &w);
            let scale = jy * od.inertia / (jw * od.inertia + 1.0);
            let acc: Vec<S> = (0..r).map(|i| y[i] - w[i] * scale).collect();
            let a_o = S::dot(&jac, &acc);
            info.transmitted_force = Some((a_o * od.inertia + res).value());
            acc
        }
    };
    let mut rq = Vec::with_capacity(r);
    let mut rqd = Vec::with_capacity(r);
    for i in 0..r {
        let v = s.robot.qd[i] + acc[i] * dt;
        let lim = arm.joints[i].limits;
        let raw = s.robot.q[i] + v * dt;
        info.robot_saturated.push(raw.value() < lim[0] || raw.value() > lim[1]);
        rq.push(raw.clamp(lim[0], lim[1]));
        rqd.push(v);
    }

    let zero = tau[0].cst(0.0);
    let mut object = object_dynamics_step(&s.object, &vec![zero; n], &scene.object_dynamics(), dt)?;
    if let Some(a) = &att {
        let lim = scene.joints[a.joint].dynamics.limits;
        let raw = constraint_map(scene, a, &rq);
        let q_new = raw.clamp(lim[0], lim[1]);
        object.qd[a.joint] = (q_new - s.object.q[a.joint]) / dt;
        object.q[a.joint] = q_new;
    }
    info.object_saturated = object
        .q
        .iter()
        .zip(&scene.joints)
        .map(|(q, j)| {
            let lim = j.dynamics.limits;
            j.kind != JointType::Fixed && (q.value() <= lim[0] || q.value() >= lim[1])
        })
        .collect();

    let mut next = SimState {
        object,
        robot: ObjectState { q: rq, qd: rqd },
        attachment: att,
    };
    if grasp && next.attachment.is_none() {
        let ee = arm.ee(&next.robot.values().q);
        let mut best: Option<(usize, f64)> = None;
        for (e, j) in scene.joints.iter().enumerate() {
            if j.kind == JointType::Fixed {
                continue;
            }
            let h = j.handle_at(next.object.q[e].value());
            let d = geom::norm(&geom::sub(&ee, &h));
            if d <= scene.grip_radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((e, d));
            }
        }
        if let Some((e, _)) = best {
            next.attachment = Some(Attachment {
                link: scene.joints[e].child,
                joint: e,
                q_grasp: next.object.q[e].value(),
                ee_grasp: ee,
            });
            info.engaged = true;
        }
    }
    Ok((next, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures;

    fn door_scene() -> SimScene {
        let model = fixtures::door_model();
        // arm in the horizontal plane through the handle
        let h = handle_point(&model, 2).unwrap();
        let arm = RobotArm::planar3([0.1, -0.7, h[2]], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        SimScene::from_model(&model, arm, 0.01).unwrap()
    }

    fn rest(scene: &SimScene, q_r: Vec<f64>) -> SimState<f64> {
        SimState {
            object: ObjectState::rest(vec![0.0; scene.joints.len()]),
            robot: ObjectState::rest(q_r),
            attachment: None,
        }
    }

    #[test]
    fn idle_robot_stays_put() {
        let scene = door_scene();
        let s = rest(&scene, vec![0.3, 0.5, -0.2]);
        let (t, info) = robot_step(&scene, &s, &[0.0; 3], false).unwrap();
        assert_eq!(t, s);
        assert!(!info.engaged);
        assert!(robot_step(&scene, &s, &[0.0; 2], false).is_err());
    }

    #[test]
    fn handle_sits_on_the_free_edge() {
        let scene = door_scene();
        let h = scene.joints[0].handle;
        let j = &scene.joints[0];
        let d = geom::point_line_distance(&h, &j.origin, &j.axis);
        assert!(d > 0.35, "{h:?}");
        let h90 = j.handle_at(std::f64::consts::FRAC_PI_2);
        // a quarter turn about +z swings the edge toward +y
        assert!(h90[1] > h[1] + 0.3);
    }

    #[test]
    fn grasp_engages_only_in_range_and_with_flag() {
        let scene = door_scene();
        let h = scene.joints[0].handle;
        let (q, err) = scene.robot.ik(&h, &[0.5, 0.5, 0.5]);
        assert!(err < 1e-6);
        let s = rest(&scene, q);
        let (t, info) = robot_step(&scene, &s, &[0.0; 3], true).unwrap();
        assert!(info.engaged);
        let att = t.attachment.unwrap();
        assert_eq!(att.link, 2);
        assert_eq!(att.joint, 0);
        let (_, info) = robot_step(&scene, &s, &[0.0; 3], false).unwrap();
        assert!(!info.engaged);
        let (u, info) = robot_step(&scene, &t, &[0.0; 3], false).unwrap();
        assert!(info.released && u.attachment.is_none());
        let far = rest(&scene, vec![0.0, 0.0, 0.0]);
        assert!(robot_step(&scene, &far, &[0.0; 3], true).unwrap().0.attachment.is_none());
    }

    #[test]
    fn aligned_drawer_follows_end_effector() {
        let mut scene = door_scene();
        scene.joints[0].kind = JointType::Prismatic;
        scene.joints[0].axis = [1.0, 0.0, 0.0];
        scene.joints[0].dynamics.limits = [-1.0, 1.0];
        let z = scene.robot.base[2];
        let (q0, _) = scene.robot.ik(&[0.3, -0.3, z], &[0.5, 0.5, 0.5]);
        let (q1, _) = scene.robot.ik(&[0.37, -0.3, z], &q0);
        let att = Attachment {
            link: 2,
            joint: 0,
            q_grasp: 0.1,
            ee_grasp: scene.robot.ee(&q0),
        };
        let q = constraint_map(&scene, &att, &q1);
        assert!((q - 0.17).abs() < 1e-9, "{q}");
    }

    fn fd_jacobian(scene: &SimScene, att: &Attachment, q: &[f64]) -> Vec<f64> {
        (0..q.len())
            .map(|i| {
                let mut p = q.to_vec();
                let mut m = q.to_vec();
                p[i] += 1e-6;
                m[i] -= 1e-6;
                (constraint_map(scene, att, &p) - constraint_map(scene, att, &m)) / 2e-6
            })
            .collect()
    }

    #[test]
    fn revolute_transmission_uses_the_constraint_jacobian() {
        let scene = door_scene();
        let h = scene.joints[0].handle;
        let (q, _) = scene.robot.ik(&h, &[0.5, 0.5, 0.5]);
        let att = Attachment {
            link: 2,
            joint: 0,
            q_grasp: 0.0,
            ee_grasp: scene.robot.ee(&q),
        };
        let q_off = [q[0] + 0.05, q[1] - 0.1, q[2] + 0.02];
        let jac = constraint_jacobian(&scene, &att, &q_off);
        let fd = fd_jacobian(&scene, &att, &q_off);
        for (a, b) in jac.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{jac:?} vs {fd:?}");
        }

        // at rest, the force reaching the door is I_o jᵀD⁻¹τ / (1 + I_o jᵀD⁻¹j)
        let tau = [0.4, -0.2, 0.1];
        let s = SimState {
            object: ObjectState::rest(vec![0.0]),
            robot: ObjectState::rest(q.clone()),
            attachment: Some(att),
        };
        let (_, info) = robot_step(&scene, &s, &tau, true).unwrap();
        let j = fd_jacobian(&scene, &att, &q);
        let d: Vec<f64> = scene.robot.joints.iter().map(|j| j.inertia).collect();
        let i_o = scene.joints[0].dynamics.inertia;
        let jdt: f64 = (0..3).map(|i| j[i] * tau[i] / d[i]).sum();
        let jdj: f64 = (0..3).map(|i| j[i] * j[i] / d[i]).sum();
        let expect = i_o * jdt / (1.0 + i_o * jdj);
        let got = info.transmitted_force.unwrap();
        assert!((got - expect).abs() < 1e-6 * expect.abs().max(1.0), "{got} vs {expect}");
    }

    #[test]
    fn attached_door_moves_with_the_arm() {
        let scene = door_scene();
        let h = scene.joints[0].handle;
        let (q, _) = scene.robot.ik(&h, &[0.5, 0.5, 0.5]);
        let mut s = rest(&scene, q);
        s = robot_step(&scene, &s, &[0.0; 3], true).unwrap().0;
        assert!(s.attachment.is_some());
        for _ in 0..50 {
            // torques along the constraint gradient open the door
            let j = constraint_jacobian(&scene, &s.attachment.unwrap(), &s.robot.q);
            let tau: Vec<f64> = j.iter().map(|x| 0.5 * x).collect();
            s = robot_step(&scene, &s, &tau, true).unwrap().0;
        }
        let att = s.attachment.unwrap();
        let implied = constraint_map(&scene, &att, &s.robot.q);
        assert!((implied.clamp(0.0, 1.8) - s.object.q[0]).abs() < 1e-12);
        assert!(s.object.q[0] > 0.01, "{}", s.object.q[0]);
    }

    #[test]
    fn flat_state_round_trip() {
        let s = SimState {
            object: ObjectState { q: vec![0.1, 0.2], qd: vec![0.3, 0.4] },
            robot: ObjectState { q: vec![1.0, 2.0, 3.0], qd: vec![4.0, 5.0, 6.0] },
            attachment: None,
        };
        let v = s.to_vec();
        assert_eq!(v, vec![0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(SimState::from_vec(&v, 2, None).unwrap(), s);
    }
}
