use serde::{Deserialize, Serialize};

use super::{momentum_step, ManipError, ObjectTrajectory, Task};
use crate::autodiff::{Scalar, Tape};
use crate::diffsim::{object_dynamics_step, JointDynamics, ObjectState, SimScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectPlanConfig {
    pub w_goal: f64,
    pub w_vel: f64,
    pub w_u: f64,
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
}

impl Default for ObjectPlanConfig {
    fn default() -> Self {
        ObjectPlanConfig {
            w_goal: 100.0,
            w_vel: 1.0,
            w_u: 0.01,
            iterations: 500,
            lr: 1e-2,
            momentum: 0.9,
            clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlanReport {
    pub initial_cost: f64,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub iterations: usize,
}

/// Cost of driving joint `j` with forces `u` from `x0`, and the states.
fn rollout<S: Scalar>(
    joints: &[JointDynamics],
    dt: f64,
    j: usize,
    x0: ObjectState<S>,
    u: &[S],
    q_goal: f64,
    cfg: &ObjectPlanConfig,
) -> Result<(S, Vec<ObjectState<S>>), ManipError> {
    let zero = x0.q[j].cst(0.0);
    let mut xs = Vec::with_capacity(u.len() + 1);
    xs.push(x0);
    let mut cost = zero;
    let mut f = vec![zero; joints.len()];
    for &ut in u {
        cost = cost + ut * ut * cfg.w_u;
        f[j] = ut;
        let next = object_dynamics_step(xs.last().expect("non-empty"), &f, joints, dt)?;
        xs.push(next);
    }
    let xt = xs.last().expect("non-empty");
    cost = cost + (xt.q[j] - q_goal).sq() * cfg.w_goal;
    for v in &xt.qd {
        cost = cost + v.sq() * cfg.w_vel;
    }
    Ok((cost, xs))
}

/// Object-level cost and its gradient with respect to the forces on joint
/// `j`, by reverse mode through the whole rollout.
pub fn object_cost_grad(
    tape: &mut Tape,
    scene: &SimScene,
    j: usize,
    x0: &ObjectState<f64>,
    u: &[f64],
    q_goal: f64,
    cfg: &ObjectPlanConfig,
) -> Result<(f64, Vec<f64>), ManipError> {
    tape.clear();
    let uv = tape.vars(u);
    let x = ObjectState {
        q: x0.q.iter().map(|&v| tape.constant(v)).collect(),
        qd: x0.qd.iter().map(|&v| tape.constant(v)).collect(),
    };
    let (c, _) = rollout(&scene.object_dynamics(), scene.dt, j, x, &uv, q_goal, cfg)?;
    let g = tape.backward(c)?;
    Ok((c.value(), g.wrt_all(&uv)))
}

fn trajectory(
    scene: &SimScene,
    j: usize,
    x0: &ObjectState<f64>,
    u: &[f64],
    q_goal: f64,
    cfg: &ObjectPlanConfig,
) -> Result<ObjectTrajectory, ManipError> {
    let n = scene.joints.len();
    let (cost, x) = rollout(&scene.object_dynamics(), scene.dt, j, x0.clone(), u, q_goal, cfg)?;
    let u = u
        .iter()
        .map(|&v| {
            let mut f = vec![0.0; n];
            f[j] = v;
            f
        })
        .collect();
    Ok(ObjectTrajectory { joint: j, x, u, cost })
}

/// Open-loop joint forces that bring the task joint to its goal and stop
/// it there, found by momentum gradient descent from zero force. Only the
/// object is simulated.
pub fn object_centric_plan(
    scene: &SimScene,
    task: &Task,
    x_init: &ObjectState<f64>,
    cfg: &ObjectPlanConfig,
) -> Result<(ObjectTrajectory, ObjectPlanReport), ManipError> {
    let j = task.joint_in(scene)?;
    let n = scene.joints.len();
    if x_init.q.len() != n || x_init.qd.len() != n {
        return Err(ManipError::Invalid(format!("initial object state for {} joints", x_init.q.len())));
    }
    let mut u = vec![0.0; task.horizon];
    let mut vel = vec![0.0; task.horizon];
    let mut tape = Tape::with_capacity(64 * task.horizon);
    let mut best = (f64::INFINITY, u.clone(), 0);
    let mut initial = f64::NAN;
    let mut done = 0;
    for it in 0..=cfg.iterations {
        let (c, g) = object_cost_grad(&mut tape, scene, j, x_init, &u, task.q_goal, cfg)?;
        if it == 0 {
            initial = c;
        }
        if c < best.0 {
            best = (c, u.clone(), it);
        }
        done = it;
        if it == cfg.iterations || g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        momentum_step(&mut u, &mut vel, &g, cfg.lr, cfg.momentum, cfg.clip);
    }
    let traj = trajectory(scene, j, x_init, &best.1, task.q_goal, cfg)?;
    let report = ObjectPlanReport {
        initial_cost: initial,
        best_cost: best.0,
        best_iteration: best.2,
        iterations: done,
    };
    let miss = (traj.terminal().q[j] - task.q_goal).abs();
    if best.2 == 0 && miss > task.tolerance {
        return Err(ManipError::NoImprovement {
            initial,
            best: Box::new(traj),
        });
    }
    Ok((traj, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::manipulation::test_support::door_sim;
    use std::f64::consts::FRAC_PI_2;

    fn task(q_goal: f64, horizon: usize) -> Task {
        Task {
            link: 2,
            q_goal,
            horizon,
            tolerance: 2f64.to_radians(),
        }
    }

    #[test]
    fn at_goal_needs_no_force() {
        let scene = door_sim();
        let x = ObjectState::rest(vec![0.7]);
        let (t, r) = object_centric_plan(&scene, &task(0.7, 20), &x, &ObjectPlanConfig::default()).unwrap();
        assert!(r.best_cost < 1e-20);
        assert!(t.u.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn door_opens_a_quarter_turn() {
        let scene = door_sim();
        let x = ObjectState::rest(vec![0.0]);
        let (t, r) = object_centric_plan(&scene, &task(FRAC_PI_2, 100), &x, &ObjectPlanConfig::default()).unwrap();
        let err = (t.terminal().q[0] - FRAC_PI_2).abs();
        assert!(err < 2f64.to_radians(), "{err} {r:?}");
        assert!(r.best_cost <= r.initial_cost);
        assert!(t.consistency_error(&scene.object_dynamics(), scene.dt).unwrap() < 1e-9);
        assert_eq!(t.x.len(), 101);
        assert_eq!(ObjectTrajectory::from_json(&t.to_json()).unwrap(), t);
    }

    /// Finite-horizon discrete LQR on the goal error, by Riccati recursion.
    fn lqr_controls(inertia: f64, dt: f64, horizon: usize, q0: f64, goal: f64, cfg: &ObjectPlanConfig) -> Vec<f64> {
        let a = [[1.0, dt], [0.0, 1.0]];
        let b = [dt * dt / inertia, dt / inertia];
        let mut p = [[cfg.w_goal, 0.0], [0.0, cfg.w_vel]];
        let mut gains = vec![[0.0; 2]; horizon];
        for t in (0..horizon).rev() {
            let pb = [p[0][0] * b[0] + p[0][1] * b[1], p[1][0] * b[0] + p[1][1] * b[1]];
            let bpb = b[0] * pb[0] + b[1] * pb[1];
            // Bᵀ P A
            let bpa = [pb[0] * a[0][0] + pb[1] * a[1][0], pb[0] * a[0][1] + pb[1] * a[1][1]];
            let k = [bpa[0] / (cfg.w_u + bpb), bpa[1] / (cfg.w_u + bpb)];
            gains[t] = k;
            // P ← (A - B K)ᵀ P A
            let mut ab = a;
            for r in 0..2 {
                for c in 0..2 {
                    ab[r][c] -= b[r] * k[c];
                }
            }
            let mut pa = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    pa[r][c] = p[r][0] * a[0][c] + p[r][1] * a[1][c];
                }
            }
            let mut np = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    np[r][c] = ab[0][r] * pa[0][c] + ab[1][r] * pa[1][c];
                }
            }
            p = np;
        }
        let mut x = [q0 - goal, 0.0];
        let mut u = Vec::new();
        for k in gains {
            let ut = -(k[0] * x[0] + k[1] * x[1]);
            let v = x[1] + dt * ut / inertia;
            x = [x[0] + dt * v, v];
            u.push(ut);
        }
        u
    }

    #[test]
    fn matches_the_riccati_solution() {
        let mut scene = door_sim();
        scene.joints[0].dynamics.damping = 0.0;
        scene.joints[0].dynamics.limits = [-10.0, 10.0];
        let cfg = ObjectPlanConfig {
            iterations: 3000,
            ..Default::default()
        };
        let x = ObjectState::rest(vec![0.0]);
        let (t, _) = object_centric_plan(&scene, &task(0.8, 20), &x, &cfg).unwrap();
        let want = lqr_controls(scene.joints[0].dynamics.inertia, scene.dt, 20, 0.0, 0.8, &cfg);
        for (got, want) in t.u.iter().zip(&want) {
            assert!((got[0] - want).abs() < 1e-3, "{} vs {want}", got[0]);
        }
    }

    #[test]
    fn cost_gradient_matches_differences() {
        let scene = door_sim();
        let x0 = ObjectState {
            q: vec![0.2],
            qd: vec![0.3],
        };
        let cfg = ObjectPlanConfig::default();
        let u = [0.1, -0.05, 0.2, 0.0, 0.3, 0.1, -0.2, 0.05];
        let rep = grad_check(
            |tape, u| {
                let x = ObjectState {
                    q: vec![tape.constant(0.2)],
                    qd: vec![tape.constant(0.3)],
                };
                rollout(&scene.object_dynamics(), scene.dt, 0, x, u, 1.0, &cfg).unwrap().0
            },
            &u,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "{rep:?}");
        let mut tape = Tape::new();
        let (_, g) = object_cost_grad(&mut tape, &scene, 0, &x0, &u, 1.0, &cfg).unwrap();
        assert_eq!(g.len(), u.len());
    }

    #[test]
    fn rejects_goal_outside_limits() {
        let scene = door_sim();
        let x = ObjectState::rest(vec![0.0]);
        assert!(object_centric_plan(&scene, &task(3.0, 10), &x, &ObjectPlanConfig::default()).is_err());
    }
}
