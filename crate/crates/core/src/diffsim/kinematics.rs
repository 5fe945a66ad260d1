use super::{SimError, SoftJointParams};
use crate::autodiff::Scalar;
use crate::geom::{self, Affine, V3};
use crate::scene::{LinkId, TreeStructure};

/// The parts of Z that drive kinematics: one soft joint per tree edge.
#[derive(Debug, Clone)]
pub struct SoftModel<S> {
    pub tree: TreeStructure,
    /// Parallel to `tree.edges`.
    pub joints: Vec<SoftJointParams<S>>,
}

impl<S: Scalar> SoftModel<S> {
    pub fn new(tree: TreeStructure, joints: Vec<SoftJointParams<S>>) -> Result<Self, SimError> {
        if joints.len() != tree.edges.len() {
            return Err(SimError::SizeMismatch(format!(
                "{} soft joints for {} edges",
                joints.len(),
                tree.edges.len()
            )));
        }
        Ok(SoftModel { tree, joints })
    }

    pub fn k(&self) -> usize {
        self.tree.k
    }

    /// Index of the edge whose child is `link`.
    pub fn edge_into(&self, link: LinkId) -> Option<usize> {
        self.tree.edges.iter().position(|e| e.1 == link)
    }

    /// World pose at the current configuration of the frame in which the
    /// joint on edge `e` acts (before its own motion).
    pub fn joint_frame(&self, frames: &[Affine<S>], e: usize) -> Affine<S> {
        let (u, _) = self.tree.edges[e];
        let w = self.joints[e].frame();
        match self.edge_into(u) {
            // parent frame moved from its own reference pose
            Some(pe) => {
                let rel = self.joints[pe].frame().rigid_inverse().compose(&w);
                frames[u - 1].compose(&rel)
            }
            None => frames[u - 1].compose(&w),
        }
    }

    /// Link frames for joint values `q` (parallel to the edges). The root is
    /// the identity; child = parent ∘ mount ∘ joint motion.
    pub fn forward_kinematics(&self, q: &[S]) -> Result<Vec<Affine<S>>, SimError> {
        if q.len() != self.joints.len() {
            return Err(SimError::SizeMismatch(format!(
                "{} joint values for {} joints",
                q.len(),
                self.joints.len()
            )));
        }
        let like = match q.first() {
            Some(x) => x.cst(0.0),
            None => match self.joints.first() {
                Some(j) => j.axis[0].cst(0.0),
                None => return Err(SimError::SizeMismatch("no joints and no values".into())),
            },
        };
        let mut frames = vec![Affine::identity(&like); self.k()];
        for v in self.tree.topological_order() {
            if let Some(e) = self.edge_into(v) {
                let f = self.joint_frame(&frames, e);
                frames[v - 1] = f.compose(&self.joints[e].local_transform(q[e]));
            }
        }
        Ok(frames)
    }

    /// World axis line (point, unit direction) of edge `e` at joint values
    /// `q`.
    pub fn world_axis_line(&self, q: &[S], e: usize) -> Result<(V3<S>, V3<S>), SimError> {
        let frames = self.forward_kinematics(q)?;
        let f = self.joint_frame(&frames, e);
        let d = geom::normalize(&f.apply_vec(&self.joints[e].unit_axis()));
        Ok((f.t, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::TreeStructure;
    use std::f64::consts::FRAC_PI_2;

    fn rev(axis: [f64; 3], origin: [f64; 3]) -> SoftJointParams<f64> {
        SoftJointParams {
            logits: [-1e3, 0.0, -1e3, -1e3],
            axis,
            origin,
            orientation: [0.0; 3],
        }
    }

    #[test]
    fn fixed_joints_at_rest_give_mount_frames() {
        let mut j = rev([1.0, 0.0, 0.0], [0.5, 0.0, 0.0]);
        j.logits = [-1e3, -1e3, -1e3, 0.0];
        j.orientation = [0.0, 0.0, 0.4];
        let tree = TreeStructure::from_edges(2, vec![(1, 2)]).unwrap();
        let m = SoftModel::new(tree, vec![j]).unwrap();
        let f = m.forward_kinematics(&[0.7]).unwrap();
        let w = j.frame();
        assert_eq!(f[1].t, w.t);
        assert_eq!(f[1].m, w.m);
    }

    #[test]
    fn single_revolute_rotates_child_frame() {
        let tree = TreeStructure::from_edges(2, vec![(1, 2)]).unwrap();
        let m = SoftModel::new(tree, vec![rev([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])]).unwrap();
        let f = m.forward_kinematics(&[FRAC_PI_2]).unwrap();
        // a child-frame point one unit along local x swings to +y of the hinge
        let p = f[1].apply(&[1.0, 0.0, 0.0]);
        for (a, b) in p.iter().zip([1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_coaxial_quarter_turns_make_a_half_turn() {
        let tree = TreeStructure::from_edges(3, vec![(1, 2), (2, 3)]).unwrap();
        let m = SoftModel::new(
            tree,
            vec![rev([0.0, 0.0, 1.0], [0.0; 3]), rev([0.0, 0.0, 1.0], [0.0; 3])],
        )
        .unwrap();
        let f = m.forward_kinematics(&[FRAC_PI_2, FRAC_PI_2]).unwrap();
        let r = f[2].m;
        let expect = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for k in 0..3 {
                assert!((r[i][k] - expect[i][k]).abs() < 1e-15);
            }
        }
        let (o, d) = m.world_axis_line(&[FRAC_PI_2, 0.0], 1).unwrap();
        assert!(o.iter().all(|x| x.abs() < 1e-15));
        assert!((d[2] - 1.0).abs() < 1e-15);
    }
}
