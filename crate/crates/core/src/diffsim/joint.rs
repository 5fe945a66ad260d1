use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};
use crate::geom::{self, Affine, V3};
use crate::scene::{JointSpatialMatrix, JointTypeMatrix, LinkId};

/// Differentiable slice of (J, C) for one edge: type logits over
/// {None, Revolute, Prismatic, Fixed}, then axis, origin and orientation of
/// the joint frame in the world at the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftJointParams<S> {
    pub logits: [S; 4],
    pub axis: V3<S>,
    pub origin: V3<S>,
    pub orientation: V3<S>,
}

impl SoftJointParams<f64> {
    pub fn from_matrices(j: &JointTypeMatrix, c: &JointSpatialMatrix, u: LinkId, v: LinkId) -> Self {
        SoftJointParams {
            logits: *j.get(u, v),
            axis: c.axis(u, v),
            origin: c.origin(u, v),
            orientation: c.orientation(u, v),
        }
    }

    /// The 13 parameters in the order logits, axis, origin, orientation.
    pub fn to_array(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[..4].copy_from_slice(&self.logits);
        out[4..7].copy_from_slice(&self.axis);
        out[7..10].copy_from_slice(&self.origin);
        out[10..].copy_from_slice(&self.orientation);
        out
    }

    pub fn from_array(a: &[f64]) -> Self {
        SoftJointParams {
            logits: [a[0], a[1], a[2], a[3]],
            axis: [a[4], a[5], a[6]],
            origin: [a[7], a[8], a[9]],
            orientation: [a[10], a[11], a[12]],
        }
    }

    pub fn lift<'t>(&self, tape: &'t Tape) -> SoftJointParams<Var<'t>> {
        let a = tape.vars(&self.to_array());
        SoftJointParams::from_vars(&a)
    }
}

impl<'t> SoftJointParams<Var<'t>> {
    pub fn from_vars(a: &[Var<'t>]) -> Self {
        SoftJointParams {
            logits: [a[0], a[1], a[2], a[3]],
            axis: [a[4], a[5], a[6]],
            origin: [a[7], a[8], a[9]],
            orientation: [a[10], a[11], a[12]],
        }
    }
}

impl<S: Scalar> SoftJointParams<S> {
    /// Revolute, prismatic and fixed weights: the softmax restricted to the
    /// three joint slots.
    pub fn type_weights(&self) -> [S; 3] {
        let m = self.logits[1..]
            .iter()
            .map(|l| l.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let e = [
            (self.logits[1] - m).exp(),
            (self.logits[2] - m).exp(),
            (self.logits[3] - m).exp(),
        ];
        let s = e[0] + e[1] + e[2];
        [e[0] / s, e[1] / s, e[2] / s]
    }

    pub fn unit_axis(&self) -> V3<S> {
        geom::normalize(&self.axis)
    }

    /// Joint frame at the reference configuration.
    pub fn frame(&self) -> Affine<S> {
        Affine {
            m: geom::rotvec_matrix(&self.orientation),
            t: self.origin,
        }
    }

    pub fn world_axis(&self) -> V3<S> {
        geom::normalize(&geom::mat_vec(&self.frame().m, &self.unit_axis()))
    }

    /// Blended joint motion in the joint's own frame (axis through the local
    /// origin).
    pub fn local_transform(&self, q: S) -> Affine<S> {
        let w = self.type_weights();
        blended(&self.unit_axis(), &[q.cst(0.0); 3], q, &w)
    }
}

/// Affine map of the weighted displacement fields
/// `p + w_R (R(a, q) - I)(p - o) + w_P a q`; identity at `q = 0` exactly.
pub fn blended<S: Scalar>(axis: &V3<S>, origin: &V3<S>, q: S, w: &[S; 3]) -> Affine<S> {
    let d = geom::rotation_minus_identity(axis, q);
    let g = d.map(|row| row.map(|x| x * w[0]));
    let go = geom::mat_vec(&g, origin);
    let slide = geom::scale(axis, w[1] * q);
    let mut m = g;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = row[i] + 1.0;
    }
    Affine {
        m,
        t: geom::sub(&slide, &go),
    }
}

/// Blended joint transform with the parameters read as world quantities:
/// the axis (rotated by the orientation) passes through `origin`.
pub fn joint_transform<S: Scalar>(jp: &SoftJointParams<S>, q: S) -> Affine<S> {
    let w = jp.type_weights();
    blended(&jp.world_axis(), &jp.origin, q, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(logits: [f64; 4], axis: [f64; 3], origin: [f64; 3]) -> SoftJointParams<f64> {
        SoftJointParams {
            logits,
            axis,
            origin,
            orientation: [0.0; 3],
        }
    }

    const HARD_R: [f64; 4] = [-1e3, 0.0, -1e3, -1e3];
    const HARD_P: [f64; 4] = [-1e3, -1e3, 0.0, -1e3];

    fn close(a: &[f64; 3], b: &[f64; 3], tol: f64) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn pure_revolute_quarter_turn() {
        let t = joint_transform(&params(HARD_R, [0.0, 0.0, 1.0], [0.0; 3]), FRAC_PI_2);
        close(&t.apply(&[1.0, 0.0, 0.0]), &[0.0, 1.0, 0.0], 1e-15);
    }

    #[test]
    fn pure_prismatic_shift() {
        let t = joint_transform(&params(HARD_P, [1.0, 0.0, 0.0], [0.3, 0.1, 0.0]), 0.3);
        close(&t.apply(&[0.2, -0.4, 1.0]), &[0.5, -0.4, 1.0], 1e-15);
    }

    #[test]
    fn half_half_blend_averages_displacements() {
        let jp = params([-1e3, 0.0, 0.0, -1e3], [0.0, 0.0, 1.0], [0.0; 3]);
        let p = joint_transform(&jp, PI).apply(&[1.0, 0.0, 0.0]);
        // rotation sends the point to (-1, 0, 0), the slide to (1, 0, pi)
        let rot = [-2.0, 0.0, 0.0];
        let slide = [0.0, 0.0, PI];
        let expect = [1.0 + 0.5 * (rot[0] + slide[0]), 0.5 * (rot[1] + slide[1]), 0.5 * (rot[2] + slide[2])];
        close(&p, &expect, 1e-12);
        close(&p, &[0.0, 0.0, PI / 2.0], 1e-12);
    }

    #[test]
    fn zero_displacement_is_identity() {
        let jp = params([0.3, 0.2, -0.5, 0.1], [0.3, 0.4, 1.2], [0.5, -0.2, 0.1]);
        let t = joint_transform(&jp, 0.0);
        let p = [0.123, -4.5, 6.0];
        assert_eq!(t.apply(&p), p);
    }

    #[test]
    fn weights_ignore_none_slot() {
        let a = params([5.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0], [0.0; 3]).type_weights();
        let b = params([-5.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0], [0.0; 3]).type_weights();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
