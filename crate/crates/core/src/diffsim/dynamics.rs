use serde::{Deserialize, Serialize};

use super::SimError;
use crate::autodiff::{Scalar, Tape, Var};

/// Default integration step (s).
pub const DEFAULT_DT: f64 = 0.01;

/// Scalar joint-space dynamics of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDynamics {
    pub inertia: f64,
    pub damping: f64,
    /// Coefficient of the velocity-quadratic drag `c q̇ |q̇|`; zero in the
    /// nominal model.
    #[serde(default)]
    pub drag: f64,
    pub limits: [f64; 2],
}

impl JointDynamics {
    /// Resistive generalized force at velocity `qd`.
    pub fn resistance<S: Scalar>(&self, qd: S) -> S {
        let lin = qd * self.damping;
        if self.drag == 0.0 {
            lin
        } else {
            lin + qd * qd.abs() * self.drag
        }
    }
}

/// Joint positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState<S> {
    pub q: Vec<S>,
    pub qd: Vec<S>,
}

impl ObjectState<f64> {
    pub fn rest(q: Vec<f64>) -> Self {
        let n = q.len();
        ObjectState { q, qd: vec![0.0; n] }
    }

    pub fn lift<'t>(&self, tape: &'t Tape) -> ObjectState<Var<'t>> {
        ObjectState {
            q: tape.vars(&self.q),
            qd: tape.vars(&self.qd),
        }
    }
}

impl<S: Scalar> ObjectState<S> {
    pub fn values(&self) -> ObjectState<f64> {
        ObjectState {
            q: self.q.iter().map(|x| x.value()).collect(),
            qd: self.qd.iter().map(|x| x.value()).collect(),
        }
    }
}

/// Semi-implicit Euler per joint:
/// `q̈ = (u - resistance(q̇)) / inertia`, `q̇' = q̇ + dt q̈`,
/// `q' = clamp(q + dt q̇', limits)`.
pub fn object_dynamics_step<S: Scalar>(
    x: &ObjectState<S>,
    u: &[S],
    joints: &[JointDynamics],
    dt: f64,
) -> Result<ObjectState<S>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::Invalid(format!("dt must be > 0, got {dt}")));
    }
    let n = joints.len();
    if x.q.len() != n || x.qd.len() != n || u.len() != n {
        return Err(SimError::SizeMismatch(format!(
            "state ({}, {}) and action {} for {n} joints",
            x.q.len(),
            x.qd.len(),
            u.len()
        )));
    }
    if let Some(i) = u.iter().position(|v| !v.value().is_finite()) {
        return Err(SimError::NonFinite(format!("action component {i}")));
    }
    let mut q = Vec::with_capacity(n);
    let mut qd = Vec::with_capacity(n);
    for (i, jd) in joints.iter().enumerate() {
        let acc = (u[i] - jd.resistance(x.qd[i])) / jd.inertia;
        let v = x.qd[i] + acc * dt;
        q.push((x.q[i] + v * dt).clamp(jd.limits[0], jd.limits[1]));
        qd.push(v);
    }
    Ok(ObjectState { q, qd })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jd(inertia: f64, damping: f64) -> JointDynamics {
        JointDynamics {
            inertia,
            damping,
            drag: 0.0,
            limits: [-10.0, 10.0],
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let x = ObjectState::rest(vec![0.3]);
        let y = object_dynamics_step(&x, &[0.0], &[jd(1.0, 0.5)], 0.01).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn one_euler_step() {
        let x = ObjectState::rest(vec![0.0]);
        let y = object_dynamics_step(&x, &[1.0], &[jd(1.0, 0.0)], 0.01).unwrap();
        assert!((y.qd[0] - 0.01).abs() < 1e-15);
        assert!((y.q[0] - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn matches_fine_reference_integrator() {
        let j = [jd(2.0, 0.5)];
        let mut x = ObjectState::rest(vec![0.0]);
        for _ in 0..100 {
            x = object_dynamics_step(&x, &[0.2], &j, 0.01).unwrap();
        }
        // explicit Euler at dt/10 on 2 q̈ = 0.2 - 0.5 q̇
        let (mut q, mut v) = (0.0f64, 0.0f64);
        for _ in 0..1000 {
            let a = (0.2 - 0.5 * v) / 2.0;
            q += 0.001 * v;
            v += 0.001 * a;
        }
        assert!((x.q[0] - q).abs() < 1e-3, "{} vs {q}", x.q[0]);
        assert!((x.qd[0] - v).abs() < 1e-3);
    }

    #[test]
    fn damping_never_adds_energy() {
        let j = [jd(0.2, 0.3), jd(0.05, 0.1)];
        let mut x = ObjectState {
            q: vec![0.0, 0.0],
            qd: vec![2.0, -1.0],
        };
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            x = object_dynamics_step(&x, &[0.0, 0.0], &j, 0.01).unwrap();
            let e = x.qd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = ObjectState::rest(vec![0.0]);
        assert!(object_dynamics_step(&x, &[f64::NAN], &[jd(1.0, 0.0)], 0.01).is_err());
        assert!(object_dynamics_step(&x, &[0.0], &[jd(1.0, 0.0)], 0.0).is_err());
        assert!(object_dynamics_step(&x, &[0.0, 1.0], &[jd(1.0, 0.0)], 0.01).is_err());
    }

    #[test]
    fn limit_clamps_position() {
        let mut j = jd(1.0, 0.0);
        j.limits = [0.0, 0.001];
        let x = ObjectState {
            q: vec![0.0],
            qd: vec![1.0],
        };
        let y = object_dynamics_step(&x, &[0.0], &[j], 0.01).unwrap();
        assert_eq!(y.q[0], 0.001);
    }
}
