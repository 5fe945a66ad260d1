use serde::{Deserialize, Serialize};

use super::{JointType, LinkId};
use crate::geom;

pub const SLOT_NONE: usize = 0;
pub const SLOT_REVOLUTE: usize = 1;
pub const SLOT_PRISMATIC: usize = 2;
pub const SLOT_FIXED: usize = 3;

/// Pairwise joint-type logits over {None, Revolute, Prismatic, Fixed}.
/// Pairs are 1-based `(u, v)`; diagonal entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTypeMatrix {
    pub k: usize,
    pub logits: Vec<[f64; 4]>,
}

pub(crate) fn softmax4(l: &[f64; 4]) -> [f64; 4] {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = l.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

impl JointTypeMatrix {
    pub fn zeros(k: usize) -> Self {
        JointTypeMatrix {
            k,
            logits: vec![[0.0; 4]; k * k],
        }
    }

    #[inline]
    pub fn index(&self, u: LinkId, v: LinkId) -> usize {
        debug_assert!(u >= 1 && v >= 1 && u <= self.k && v <= self.k);
        (u - 1) * self.k + (v - 1)
    }

    pub fn get(&self, u: LinkId, v: LinkId) -> &[f64; 4] {
        &self.logits[self.index(u, v)]
    }

    pub fn get_mut(&mut self, u: LinkId, v: LinkId) -> &mut [f64; 4] {
        let i = self.index(u, v);
        &mut self.logits[i]
    }

    /// Probability simplex for pair `(u, v)`; the diagonal is masked to
    /// certain "None".
    pub fn probs(&self, u: LinkId, v: LinkId) -> [f64; 4] {
        if u == v {
            return [1.0, 0.0, 0.0, 0.0];
        }
        softmax4(self.get(u, v))
    }

    pub fn p_none(&self, u: LinkId, v: LinkId) -> f64 {
        self.probs(u, v)[SLOT_NONE]
    }

    /// Most probable non-None type, priority Revolute > Prismatic > Fixed on ties.
    pub fn joint_type(&self, u: LinkId, v: LinkId) -> JointType {
        let p = self.probs(u, v);
        let mut best = SLOT_REVOLUTE;
        for s in [SLOT_PRISMATIC, SLOT_FIXED] {
            if p[s] > p[best] {
                best = s;
            }
        }
        JointType::from_slot(best).expect("non-None slot")
    }
}

/// Pairwise joint placement: axis (3), origin (3), orientation (3), in the
/// world frame of the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpatialMatrix {
    pub k: usize,
    pub params: Vec<[f64; 9]>,
}

impl JointSpatialMatrix {
    pub fn new(k: usize) -> Self {
        JointSpatialMatrix {
            k,
            params: vec![[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]; k * k],
        }
    }

    #[inline]
    pub fn index(&self, u: LinkId, v: LinkId) -> usize {
        (u - 1) * self.k + (v - 1)
    }

    pub fn axis(&self, u: LinkId, v: LinkId) -> [f64; 3] {
        let p = &self.params[self.index(u, v)];
        [p[0], p[1], p[2]]
    }

    pub fn origin(&self, u: LinkId, v: LinkId) -> [f64; 3] {
        let p = &self.params[self.index(u, v)];
        [p[3], p[4], p[5]]
    }

    pub fn orientation(&self, u: LinkId, v: LinkId) -> [f64; 3] {
        let p = &self.params[self.index(u, v)];
        [p[6], p[7], p[8]]
    }

    pub fn set(&mut self, u: LinkId, v: LinkId, axis: [f64; 3], origin: [f64; 3], orientation: [f64; 3]) {
        let i = self.index(u, v);
        let a = geom::normalize(&axis);
        self.params[i] = [
            a[0],
            a[1],
            a[2],
            origin[0],
            origin[1],
            origin[2],
            orientation[0],
            orientation[1],
            orientation[2],
        ];
    }

    /// World-frame axis direction: orientation applied to the stored axis.
    pub fn world_axis(&self, u: LinkId, v: LinkId) -> [f64; 3] {
        let r = geom::rotvec_matrix(&self.orientation(u, v));
        geom::normalize(&geom::mat_vec(&r, &self.axis(u, v)))
    }

    pub fn renormalize_axes(&mut self) {
        for p in &mut self.params {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if n > 0.0 {
                p[0] /= n;
                p[1] /= n;
                p[2] /= n;
            } else {
                p[0] = 0.0;
                p[1] = 0.0;
                p[2] = 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_form_a_simplex() {
        let mut j = JointTypeMatrix::zeros(3);
        *j.get_mut(1, 2) = [0.3, -2.0, 5.0, 1.0];
        let p = j.probs(1, 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(j.probs(2, 2), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(j.joint_type(1, 2), JointType::Prismatic);
    }

    #[test]
    fn type_tie_break_priority() {
        let j = JointTypeMatrix::zeros(2);
        assert_eq!(j.joint_type(1, 2), JointType::Revolute);
        let mut j = JointTypeMatrix::zeros(2);
        *j.get_mut(1, 2) = [0.0, -1.0, 0.5, 0.5];
        assert_eq!(j.joint_type(1, 2), JointType::Prismatic);
    }

    #[test]
    fn axes_renormalize() {
        let mut c = JointSpatialMatrix::new(2);
        let i = c.index(1, 2);
        c.params[i][0] = 3.0;
        c.params[i][2] = 4.0;
        c.renormalize_axes();
        assert_eq!(c.axis(1, 2), [0.6, 0.0, 0.8]);
    }
}
