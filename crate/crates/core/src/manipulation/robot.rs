use serde::{Deserialize, Serialize};

use super::{momentum_step, ManipError, ObjectTrajectory, Policy, RobotTrajectory, Task};
use crate::autodiff::{Scalar, Tape};
use crate::diffsim::{ObjectState, RobotArm, SimScene, SimState};
use crate::geom;
use crate::residual::Stepper;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub w_track: f64,
    pub w_reach: f64,
    pub w_a: f64,
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    /// Steps spent moving the gripper to the handle, then holding it there
    /// with the gripper closed.
    pub reach_steps: usize,
    pub settle_steps: usize,
    /// Also descend on the feedback gains; otherwise they stay at zero.
    pub optimize_gains: bool,
    /// Stop once the best cost has not improved by this relative amount
    /// over `patience` iterations.
    pub rel_tol: f64,
    pub patience: usize,
}

impl Default for RobotConfig {
    fn default() -> Self {
        RobotConfig {
            w_track: 10.0,
            w_reach: 50.0,
            w_a: 0.01,
            iterations: 500,
            lr: 1e-2,
            momentum: 0.9,
            clip: 10.0,
            reach_steps: 40,
            settle_steps: 10,
            optimize_gains: false,
            rel_tol: 1e-6,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotReport {
    pub initial_cost: f64,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    /// Steps before the object plan starts.
    pub lead_in: usize,
}

/// What the arm should do at each step: joint targets for the end of the
/// step, the gripper command and the object state to track.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub q_r: Vec<Vec<f64>>,
    pub grasp: Vec<bool>,
    pub x_ref: Vec<ObjectState<f64>>,
    pub lead_in: usize,
}

fn quintic(t: f64) -> f64 {
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn narrowed(arm: &RobotArm, margin: f64) -> RobotArm {
    let mut a = arm.clone();
    for j in &mut a.joints {
        let mid = 0.5 * (j.limits[0] + j.limits[1]);
        j.limits = [(j.limits[0] + margin).min(mid), (j.limits[1] - margin).max(mid)];
    }
    a
}

/// Kinematic seed: a straight end-effector line to the handle (skipped if
/// the arm already holds the task link), then the handle path implied by
/// the object plan, both through inverse kinematics. `ik_margin` keeps the
/// solutions that far inside the joint limits.
pub fn reference_path(
    scene: &SimScene,
    task: &Task,
    plan: &ObjectTrajectory,
    s_init: &SimState<f64>,
    cfg: &RobotConfig,
    ik_margin: f64,
) -> Result<ReferencePath, ManipError> {
    let j = task.joint_in(scene)?;
    if plan.joint != j || plan.x[0].q.len() != scene.joints.len() {
        return Err(ManipError::Invalid("object plan is for another joint or scene".into()));
    }
    let arm = narrowed(&scene.robot, ik_margin);
    let joint = &scene.joints[j];
    let tol = 0.5 * scene.grip_radius;
    let holding = s_init.attachment.is_some_and(|a| a.joint == j);
    let mut q = s_init.robot.q.clone();
    let mut out = ReferencePath {
        q_r: Vec::new(),
        grasp: Vec::new(),
        x_ref: vec![s_init.object.clone()],
        lead_in: 0,
    };
    let solve = |target: &[f64; 3], q: &mut Vec<f64>| -> Result<(), ManipError> {
        let (sol, _) = arm.ik(target, q);
        let miss = geom::norm(&geom::sub(&arm.ee(&sol), target));
        if miss > tol {
            return Err(ManipError::Unreachable {
                dist: geom::norm(&geom::sub(target, &arm.base)),
                reach: arm.reach(),
            });
        }
        *q = sol;
        Ok(())
    };
    if !holding {
        let h = joint.handle_at(s_init.object.q[j]);
        let dist = geom::norm(&geom::sub(&h, &arm.base));
        if dist > arm.reach() {
            return Err(ManipError::Unreachable { dist, reach: arm.reach() });
        }
        let start = arm.ee(&q);
        let n = cfg.reach_steps.max(1);
        for k in 1..=n {
            let s = quintic(k as f64 / n as f64);
            let p = [0, 1, 2].map(|i| start[i] + s * (h[i] - start[i]));
            solve(&p, &mut q)?;
            out.q_r.push(q.clone());
            out.grasp.push(k == n);
        }
        for _ in 0..cfg.settle_steps {
            out.q_r.push(q.clone());
            out.grasp.push(true);
        }
        out.lead_in = out.q_r.len();
        for _ in 0..out.lead_in {
            out.x_ref.push(s_init.object.clone());
        }
    }
    for x in &plan.x[1..] {
        solve(&joint.handle_at(x.q[j]), &mut q)?;
        out.q_r.push(q.clone());
        out.grasp.push(true);
        out.x_ref.push(x.clone());
    }
    Ok(out)
}

/// Torques that bring the arm to `target` at the end of one step, by
/// Newton's method on the stepper itself (the step is affine in the
/// torques for the nominal model).
fn inverse_dynamics(
    scene: &SimScene,
    stepper: &Stepper,
    s: &SimState<f64>,
    target: &[f64],
    grasp: bool,
    guess: &[f64],
) -> Result<Vec<f64>, ManipError> {
    let r = target.len();
    let mut tau = guess.to_vec();
    for _ in 0..6 {
        let tape = Tape::new();
        let tv = tape.vars(&tau);
        let sv = s.lift(&tape);
        let (next, _) = stepper.step(scene, &sv, &tv, grasp)?;
        let res: Vec<f64> = (0..r).map(|i| next.robot.q[i].value() - target[i]).collect();
        if res.iter().all(|v| v.abs() < 1e-13) {
            break;
        }
        let mut jac = vec![vec![0.0; r]; r];
        for i in 0..r {
            jac[i] = tape.backward(next.robot.q[i])?.wrt_all(&tv);
        }
        // (JᵀJ + λI) Δ = Jᵀ res
        let mut a = vec![vec![0.0; r]; r];
        let mut b = vec![0.0; r];
        for c in 0..r {
            for d in 0..r {
                a[c][d] = (0..r).map(|i| jac[i][c] * jac[i][d]).sum();
            }
            b[c] = (0..r).map(|i| jac[i][c] * res[i]).sum();
        }
        let scale = (0..r).map(|c| a[c][c]).fold(0.0, f64::max);
        if scale == 0.0 {
            break;
        }
        for (c, row) in a.iter_mut().enumerate() {
            row[c] += 1e-9 * scale;
        }
        let delta = solve_spd(a, b);
        for c in 0..r {
            tau[c] -= delta[c];
        }
    }
    Ok(tau)
}

/// Gaussian elimination for a small symmetric positive definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / p;
            for c in k..n {
                a[i][c] -= f * a[k][c];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

fn lift_state<S: Scalar>(like: S, s: &SimState<f64>) -> SimState<S> {
    let l = |v: &[f64]| v.iter().map(|&x| like.cst(x)).collect::<Vec<S>>();
    SimState {
        object: ObjectState {
            q: l(&s.object.q),
            qd: l(&s.object.qd),
        },
        robot: ObjectState {
            q: l(&s.robot.q),
            qd: l(&s.robot.qd),
        },
        attachment: s.attachment,
    }
}

fn tracking<S: Scalar>(s: &SimState<S>, x: &ObjectState<f64>, j: usize, scene: &SimScene, cfg: &RobotConfig) -> S {
    let mut c = s.object.q[0].cst(0.0);
    for i in 0..x.q.len() {
        c = c + (s.object.q[i] - x.q[i]).sq() * cfg.w_track + (s.object.qd[i] - x.qd[i]).sq() * cfg.w_track;
    }
    if s.attachment.is_none() {
        let d = geom::sub(&scene.robot.ee(&s.robot.q), &scene.joints[j].handle_at(s.object.q[j]));
        c = c + geom::dot(&d, &d) * cfg.w_reach;
    }
    c
}

/// Robot-level cost of running the policy `(gains, offsets, grasp)` from
/// `s0` against the object reference, with the states and actions.
/// `gains` may be empty, meaning all zero.
#[allow(clippy::too_many_arguments)]
pub fn robot_cost<S: Scalar>(
    scene: &SimScene,
    stepper: &Stepper,
    j: usize,
    s0: &SimState<f64>,
    gains: &[S],
    offsets: &[S],
    grasp: &[bool],
    x_ref: &[ObjectState<f64>],
    cfg: &RobotConfig,
) -> Result<(S, Vec<SimState<S>>, Vec<Vec<S>>), ManipError> {
    let r = scene.robot.dof();
    let sd = scene.state_dim();
    let h = grasp.len();
    if offsets.len() != h * r || (!gains.is_empty() && gains.len() != h * r * sd) || x_ref.len() != h + 1 {
        return Err(ManipError::Invalid(format!(
            "policy of {} offsets and {} gains for {h} steps",
            offsets.len(),
            gains.len()
        )));
    }
    let Some(&like) = offsets.first() else {
        return Err(ManipError::Invalid("empty horizon".into()));
    };
    let mut s = lift_state(like, s0);
    let mut cost = like.cst(0.0);
    let mut states = Vec::with_capacity(h + 1);
    let mut actions = Vec::with_capacity(h);
    for t in 0..h {
        let flat = if gains.is_empty() { Vec::new() } else { s.to_vec() };
        let a: Vec<S> = (0..r)
            .map(|i| {
                let k = offsets[t * r + i];
                if gains.is_empty() {
                    k
                } else {
                    let row = &gains[(t * r + i) * sd..(t * r + i + 1) * sd];
                    k + S::dot(row, &flat)
                }
            })
            .collect();
        cost = cost + tracking(&s, &x_ref[t], j, scene, cfg) + S::dot(&a, &a) * cfg.w_a;
        let (next, _) = stepper.step(scene, &s, &a, grasp[t])?;
        states.push(std::mem::replace(&mut s, next));
        actions.push(a);
    }
    cost = cost + tracking(&s, &x_ref[h], j, scene, cfg);
    states.push(s);
    Ok((cost, states, actions))
}

/// Cost of a policy and its gradient with respect to the gains (empty
/// unless `with_gains`) and the offsets, by reverse mode.
#[allow(clippy::too_many_arguments)]
pub fn robot_cost_grad(
    tape: &mut Tape,
    scene: &SimScene,
    stepper: &Stepper,
    j: usize,
    s0: &SimState<f64>,
    policy: &Policy,
    x_ref: &[ObjectState<f64>],
    cfg: &RobotConfig,
    with_gains: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>), ManipError> {
    let (c, gg, gk, _) = cost_grad_clearance(tape, scene, stepper, j, s0, policy, x_ref, cfg, with_gains)?;
    Ok((c, gg, gk))
}

/// As [`robot_cost_grad`], plus the smallest distance of any arm joint to
/// its limits along the rollout.
#[allow(clippy::too_many_arguments)]
fn cost_grad_clearance(
    tape: &mut Tape,
    scene: &SimScene,
    stepper: &Stepper,
    j: usize,
    s0: &SimState<f64>,
    policy: &Policy,
    x_ref: &[ObjectState<f64>],
    cfg: &RobotConfig,
    with_gains: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>, f64), ManipError> {
    tape.clear();
    let k = tape.vars(&policy.offsets.concat());
    let g = if with_gains { tape.vars(&policy.gains.concat()) } else { Vec::new() };
    let (c, states, _) = robot_cost(scene, stepper, j, s0, &g, &k, &policy.grasp, x_ref, cfg)?;
    let mut clearance = f64::INFINITY;
    for s in &states[1..] {
        for (q, jd) in s.robot.q.iter().zip(&scene.robot.joints) {
            let q = q.value();
            clearance = clearance.min(q - jd.limits[0]).min(jd.limits[1] - q);
        }
    }
    let grads = tape.backward(c)?;
    Ok((c.value(), grads.wrt_all(&g), grads.wrt_all(&k), clearance))
}

fn rollout_f64(
    scene: &SimScene,
    stepper: &Stepper,
    j: usize,
    s0: &SimState<f64>,
    policy: &Policy,
    x_ref: &[ObjectState<f64>],
    cfg: &RobotConfig,
) -> Result<RobotTrajectory, ManipError> {
    let gains: Vec<f64> = if policy.gains.iter().flatten().any(|&g| g != 0.0) {
        policy.gains.concat()
    } else {
        Vec::new()
    };
    let (cost, s, a) = robot_cost(scene, stepper, j, s0, &gains, &policy.offsets.concat(), &policy.grasp, x_ref, cfg)?;
    Ok(RobotTrajectory {
        s,
        a,
        grasp: policy.grasp.clone(),
        stepper: stepper.kind(),
        cost,
    })
}

/// Arm policy that makes the simulated object follow `plan`. The seed
/// tracks the kinematic reference exactly under `stepper`; gradient descent
/// through the rollout then trades tracking against effort.
pub fn robot_centric_optimize(
    scene: &SimScene,
    task: &Task,
    plan: &ObjectTrajectory,
    s_init: &SimState<f64>,
    stepper: &Stepper,
    cfg: &RobotConfig,
    ik_margin: f64,
) -> Result<(Policy, RobotTrajectory, RobotReport), ManipError> {
    let j = task.joint_in(scene)?;
    let path = reference_path(scene, task, plan, s_init, cfg, ik_margin)?;
    let h = path.grasp.len();
    let r = scene.robot.dof();
    let sd = scene.state_dim();

    let mut offsets = Vec::with_capacity(h);
    let mut s = s_init.clone();
    let mut tau = vec![0.0; r];
    for t in 0..h {
        tau = inverse_dynamics(scene, stepper, &s, &path.q_r[t], path.grasp[t], &tau)?;
        s = stepper.step(scene, &s, &tau, path.grasp[t])?.0;
        offsets.push(tau.clone());
    }
    if path.lead_in > 0 && s.attachment.is_none_or(|a| a.joint != j) {
        return Err(ManipError::GraspFailed(task.link));
    }
    let mut policy = Policy::feedforward(sd, offsets, path.grasp.clone());

    let mut tape = Tape::with_capacity(600 * h);
    let mut theta: Vec<f64> = policy.offsets.concat();
    if cfg.optimize_gains {
        theta.extend(policy.gains.concat());
    }
    let mut vel = vec![0.0; theta.len()];
    let n_off = h * r;
    let unpack = |theta: &[f64], p: &mut Policy| {
        for t in 0..h {
            p.offsets[t].copy_from_slice(&theta[t * r..(t + 1) * r]);
            if cfg.optimize_gains {
                let w = r * sd;
                p.gains[t].copy_from_slice(&theta[n_off + t * w..n_off + (t + 1) * w]);
            }
        }
    };
    let mut best = (f64::INFINITY, theta.clone(), 0);
    let mut initial = f64::NAN;
    let mut done = 0;
    let mut last_gain = (f64::INFINITY, 0);
    for it in 0..=cfg.iterations {
        unpack(&theta, &mut policy);
        let res = cost_grad_clearance(&mut tape, scene, stepper, j, s_init, &policy, &path.x_ref, cfg, cfg.optimize_gains);
        let (c, gg, gk, clearance) = match res {
            Ok(v) => v,
            // a step that leaves the simulator's domain ends the search
            Err(_) if it > 0 => break,
            Err(e) => return Err(e),
        };
        if it == 0 {
            initial = c;
        }
        done = it;
        // when asked to keep clear of the limits, iterates that drift into
        // half the margin are not eligible
        let feasible = ik_margin <= 0.0 || clearance >= 0.5 * ik_margin || it == 0;
        if c.is_finite() && c < best.0 && feasible {
            best = (c, theta.clone(), it);
        }
        if best.0 < last_gain.0 * (1.0 - cfg.rel_tol) {
            last_gain = (best.0, it);
        } else if it - last_gain.1 >= cfg.patience {
            break;
        }
        if it == cfg.iterations || !c.is_finite() {
            break;
        }
        let mut g = gk;
        g.extend(gg);
        momentum_step(&mut theta, &mut vel, &g, cfg.lr, cfg.momentum, cfg.clip);
    }
    unpack(&best.1, &mut policy);
    policy.validate()?;
    let traj = rollout_f64(scene, stepper, j, s_init, &policy, &path.x_ref, cfg)?;
    Ok((
        policy,
        traj,
        RobotReport {
            initial_cost: initial,
            best_cost: best.0,
            best_iteration: best.2,
            iterations: done,
            lead_in: path.lead_in,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::diffsim::grasped_state;
    use crate::manipulation::test_support::{door_rest, door_sim};
    use crate::manipulation::{object_centric_plan, ObjectPlanConfig};

    fn task(q_goal: f64, horizon: usize) -> Task {
        Task {
            link: 2,
            q_goal,
            horizon,
            tolerance: 2f64.to_radians(),
        }
    }

    fn holding(scene: &SimScene, q: f64) -> SimState<f64> {
        let home = door_rest(scene);
        grasped_state(scene, 0, &[q], &home.robot.q).unwrap()
    }

    #[test]
    fn holding_still_costs_nothing() {
        let scene = door_sim();
        let s0 = holding(&scene, 0.3);
        let t = task(0.3, 20);
        let (plan, _) = object_centric_plan(&scene, &t, &s0.object, &ObjectPlanConfig::default()).unwrap();
        let (p, traj, rep) = robot_centric_optimize(&scene, &t, &plan, &s0, &Stepper::Nominal, &RobotConfig::default(), 0.0).unwrap();
        assert_eq!(rep.lead_in, 0);
        assert_eq!(p.horizon(), 20);
        assert!(traj.a.iter().flatten().all(|a| a.abs() < 1e-6));
        assert!(traj.cost < 1e-9, "{}", traj.cost);
    }

    #[test]
    fn opens_the_door_without_raising_the_cost() {
        let scene = door_sim();
        let s0 = door_rest(&scene);
        let t = task(1.0, 100);
        let (plan, _) = object_centric_plan(&scene, &t, &s0.object, &ObjectPlanConfig::default()).unwrap();
        let (p, traj, rep) = robot_centric_optimize(&scene, &t, &plan, &s0, &Stepper::Nominal, &RobotConfig::default(), 0.0).unwrap();
        assert_eq!(rep.lead_in, 50);
        assert_eq!(p.horizon(), 150);
        assert!(rep.best_cost <= rep.initial_cost);
        assert!((traj.cost - rep.best_cost).abs() < 1e-9 * rep.best_cost);
        assert!((traj.terminal().object.q[0] - 1.0).abs() < 2f64.to_radians());
        assert!(traj.terminal().attachment.is_some());
        assert_eq!(RobotTrajectory::from_json(&traj.to_json()).unwrap(), traj);
    }

    #[test]
    fn far_handle_is_rejected() {
        let mut scene = door_sim();
        scene.robot.base = [3.0, 0.0, scene.robot.base[2]];
        let s0 = SimState {
            object: ObjectState::rest(vec![0.0]),
            robot: ObjectState::rest(vec![0.0; 3]),
            attachment: None,
        };
        let t = task(1.0, 10);
        let (plan, _) = object_centric_plan(&scene, &t, &s0.object, &ObjectPlanConfig::default()).unwrap();
        let r = robot_centric_optimize(&scene, &t, &plan, &s0, &Stepper::Nominal, &RobotConfig::default(), 0.0);
        assert!(matches!(r, Err(ManipError::Unreachable { .. })), "{r:?}");
    }

    #[test]
    fn policy_gradient_matches_differences() {
        let scene = door_sim();
        let s0 = holding(&scene, 0.4);
        let h = 5;
        let sd = scene.state_dim();
        let x_ref: Vec<ObjectState<f64>> = (0..=h).map(|k| ObjectState::rest(vec![0.4 + 0.02 * k as f64])).collect();
        let grasp = vec![true; h];
        let cfg = RobotConfig::default();
        let n_k = h * 3;
        let mut theta: Vec<f64> = (0..n_k).map(|i| 0.3 * ((i as f64) * 0.7).sin()).collect();
        theta.extend((0..n_k * sd).map(|i| 0.05 * ((i as f64) * 1.3).cos()));
        let rep = grad_check(
            |_, th| {
                robot_cost(&scene, &Stepper::Nominal, 0, &s0, &th[n_k..], &th[..n_k], &grasp, &x_ref, &cfg)
                    .unwrap()
                    .0
            },
            &theta,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "{}", rep.max_rel_err);

        // the tape-reusing entry point agrees
        let mut policy = Policy::feedforward(sd, theta[..n_k].chunks(3).map(|c| c.to_vec()).collect(), grasp.clone());
        for t in 0..h {
            policy.gains[t] = theta[n_k + t * 3 * sd..n_k + (t + 1) * 3 * sd].to_vec();
        }
        let mut tape = Tape::new();
        let (c, gg, gk) = robot_cost_grad(&mut tape, &scene, &Stepper::Nominal, 0, &s0, &policy, &x_ref, &cfg, true).unwrap();
        assert!((c - rep.value).abs() < 1e-12);
        for (i, g) in gk.iter().chain(&gg).enumerate() {
            assert!((g - rep.coords[i].analytic).abs() < 1e-9);
        }
    }
}
