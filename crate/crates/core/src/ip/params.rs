use serde::{Deserialize, Serialize};

use super::IpError;
use crate::autodiff::{Tape, Var};
use crate::diffsim::{project_simplex, SoftJointParams, SoftModel, SoftSegmentation};
use crate::scene::{greedy_tree, JointSpatialMatrix, JointTypeMatrix, LinkId, PhysicalAttrs, TreeStructure};

/// Smallest mass/inertia the optimizer may leave behind.
const ATTR_FLOOR: f64 = 1e-6;

/// Z = {J, C, M, α}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub j: JointTypeMatrix,
    pub c: JointSpatialMatrix,
    pub m: SoftSegmentation<f64>,
    pub alpha: Vec<PhysicalAttrs>,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.j.k
    }

    pub fn validate(&self) -> Result<(), IpError> {
        let k = self.j.k;
        if self.c.k != k || self.m.k != k || self.alpha.len() != k {
            return Err(IpError::Invalid(format!(
                "J over {k} links but C {}, M {}, α {}",
                self.c.k,
                self.m.k,
                self.alpha.len()
            )));
        }
        for (i, a) in self.alpha.iter().enumerate() {
            a.validate().map_err(|e| IpError::Invalid(format!("link {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn tree(&self) -> Result<TreeStructure, IpError> {
        Ok(greedy_tree(&self.j)?)
    }

    pub fn joint(&self, u: LinkId, v: LinkId) -> SoftJointParams<f64> {
        SoftJointParams::from_matrices(&self.j, &self.c, u, v)
    }

    pub fn soft_model(&self, e: &TreeStructure) -> SoftModel<f64> {
        let joints = e.edges.iter().map(|&(u, v)| self.joint(u, v)).collect();
        SoftModel::new(e.clone(), joints).expect("one joint per edge")
    }
}

/// Flat view of the optimized coordinates of Z under a fixed tree: the 13
/// joint parameters of each edge, then M row-major, then α as
/// (mass, damping, inertia) per link.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub edges: Vec<(LinkId, LinkId)>,
    pub n: usize,
    pub k: usize,
}

pub const JOINT_WIDTH: usize = 13;

/// Coordinates within a joint block.
pub const LOGITS: std::ops::Range<usize> = 0..4;
pub const AXIS: std::ops::Range<usize> = 4..7;
pub const ORIGIN: std::ops::Range<usize> = 7..10;
pub const ORIENTATION: std::ops::Range<usize> = 10..13;

/// Per-group multipliers on the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupScales {
    pub axis: f64,
    pub origin: f64,
    pub orientation: f64,
    pub logits: f64,
    pub alpha: f64,
    /// Multiplied by N, since each row of M only enters the mean loss with
    /// weight 1/N.
    pub segmentation: f64,
}

impl Default for GroupScales {
    fn default() -> Self {
        GroupScales {
            // the loss is in m², so unit-vector gradients are tiny
            axis: 20.0,
            origin: 1.0,
            orientation: 1.0,
            logits: 5.0,
            alpha: 0.1,
            segmentation: 1.0,
        }
    }
}

impl ParamLayout {
    pub fn new(z: &ModelParams, e: &TreeStructure) -> Self {
        ParamLayout {
            edges: e.edges.clone(),
            n: z.m.n,
            k: z.k(),
        }
    }

    pub fn joints_len(&self) -> usize {
        self.edges.len() * JOINT_WIDTH
    }

    pub fn seg_offset(&self) -> usize {
        self.joints_len()
    }

    pub fn alpha_offset(&self) -> usize {
        self.seg_offset() + self.n * self.k
    }

    pub fn len(&self) -> usize {
        self.alpha_offset() + 3 * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, z: &ModelParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        for &(u, v) in &self.edges {
            x.extend_from_slice(&z.joint(u, v).to_array());
        }
        x.extend_from_slice(&z.m.resp);
        for a in &z.alpha {
            x.extend_from_slice(&[a.mass, a.damping, a.inertia]);
        }
        x
    }

    /// Write `x` back into a copy of `z` (entries off the tree untouched).
    pub fn unflatten(&self, x: &[f64], z: &ModelParams) -> ModelParams {
        let mut out = z.clone();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            let b = &x[e * JOINT_WIDTH..(e + 1) * JOINT_WIDTH];
            let ji = out.j.index(u, v);
            out.j.logits[ji].copy_from_slice(&b[LOGITS]);
            let ci = out.c.index(u, v);
            out.c.params[ci].copy_from_slice(&b[4..13]);
        }
        let s = self.seg_offset();
        out.m.resp.copy_from_slice(&x[s..s + self.n * self.k]);
        let a = self.alpha_offset();
        for (i, attr) in out.alpha.iter_mut().enumerate() {
            attr.mass = x[a + 3 * i];
            attr.damping = x[a + 3 * i + 1];
            attr.inertia = x[a + 3 * i + 2];
        }
        out
    }

    pub fn scales(&self, g: &GroupScales) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        for _ in &self.edges {
            s.extend([g.logits; 4]);
            s.extend([g.axis; 3]);
            s.extend([g.origin; 3]);
            s.extend([g.orientation; 3]);
        }
        s.extend(std::iter::repeat_n(g.segmentation * self.n as f64, self.n * self.k));
        s.extend(std::iter::repeat_n(g.alpha, 3 * self.k));
        s
    }

    /// Restore the invariants after a raw gradient step: unit axes, simplex
    /// rows of M, positive masses and inertias, non-negative damping.
    pub fn project(&self, x: &mut [f64]) {
        for e in 0..self.edges.len() {
            let a = &mut x[e * JOINT_WIDTH + AXIS.start..e * JOINT_WIDTH + AXIS.end];
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if n > 0.0 && n.is_finite() {
                a.iter_mut().for_each(|v| *v /= n);
            } else {
                a.copy_from_slice(&[0.0, 0.0, 1.0]);
            }
        }
        let s = self.seg_offset();
        for row in x[s..s + self.n * self.k].chunks_mut(self.k) {
            project_simplex(row);
        }
        let a = self.alpha_offset();
        for i in 0..self.k {
            x[a + 3 * i] = x[a + 3 * i].max(ATTR_FLOOR);
            x[a + 3 * i + 1] = x[a + 3 * i + 1].max(0.0);
            x[a + 3 * i + 2] = x[a + 3 * i + 2].max(ATTR_FLOOR);
        }
    }

    /// Leaves for `x` on `tape`, split into the soft model and segmentation.
    pub fn lift<'t>(
        &self,
        tape: &'t Tape,
        x: &[f64],
        tree: &TreeStructure,
    ) -> (Vec<Var<'t>>, SoftModel<Var<'t>>, SoftSegmentation<Var<'t>>) {
        let leaves = tape.vars(x);
        let joints = (0..self.edges.len())
            .map(|e| SoftJointParams::from_vars(&leaves[e * JOINT_WIDTH..(e + 1) * JOINT_WIDTH]))
            .collect();
        let model = SoftModel::new(tree.clone(), joints).expect("one joint per edge");
        let s = self.seg_offset();
        let seg = SoftSegmentation {
            n: self.n,
            k: self.k,
            resp: leaves[s..s + self.n * self.k].to_vec(),
        };
        (leaves, model, seg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_params() -> (ModelParams, TreeStructure) {
        let mut j = JointTypeMatrix::zeros(3);
        *j.get_mut(1, 2) = [-4.0, 2.0, 0.0, 0.0];
        *j.get_mut(1, 3) = [-4.0, 0.0, 2.0, 0.0];
        let mut c = JointSpatialMatrix::new(3);
        c.set(1, 2, [0.0, 0.0, 1.0], [0.1, 0.2, 0.3], [0.0; 3]);
        c.set(1, 3, [1.0, 0.0, 0.0], [0.0; 3], [0.0, 0.1, 0.0]);
        let m = SoftSegmentation::from_labels(&[1, 2, 3, 2], 3);
        let z = ModelParams {
            j,
            c,
            m,
            alpha: vec![PhysicalAttrs::default(); 3],
        };
        let e = z.tree().unwrap();
        (z, e)
    }

    #[test]
    fn flatten_round_trips() {
        let (z, e) = sample_params();
        let lay = ParamLayout::new(&z, &e);
        let x = lay.flatten(&z);
        assert_eq!(x.len(), lay.len());
        assert_eq!(lay.unflatten(&x, &z), z);
        assert_eq!(lay.scales(&GroupScales::default()).len(), x.len());
    }

    #[test]
    fn projection_restores_invariants() {
        let (z, e) = sample_params();
        let lay = ParamLayout::new(&z, &e);
        let mut x = lay.flatten(&z);
        x[AXIS.start] = 3.0;
        let s = lay.seg_offset();
        x[s] = 1.7;
        x[s + 1] = -0.4;
        let a = lay.alpha_offset();
        x[a] = -1.0;
        lay.project(&mut x);
        let z2 = lay.unflatten(&x, &z);
        for &(u, v) in &e.edges {
            let ax = z2.c.axis(u, v);
            assert!(((ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]).sqrt() - 1.0).abs() < 1e-12);
        }
        for i in 0..z2.m.n {
            let r = z2.m.row(i);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12 && r.iter().all(|&v| v >= 0.0));
        }
        assert!(z2.validate().is_ok());
    }
}
