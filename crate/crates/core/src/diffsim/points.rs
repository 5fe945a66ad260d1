use serde::{Deserialize, Serialize};

use super::{SimError, SoftModel};
use crate::autodiff::Scalar;
use crate::geom::{self, V3};
use crate::scene::LinkId;

/// Row-major N×K soft part assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSegmentation<S> {
    pub n: usize,
    pub k: usize,
    pub resp: Vec<S>,
}

impl<S: Scalar> SoftSegmentation<S> {
    pub fn new(n: usize, k: usize, resp: Vec<S>) -> Result<Self, SimError> {
        if resp.len() != n * k {
            return Err(SimError::SizeMismatch(format!("{} responsibilities for {n}×{k}", resp.len())));
        }
        Ok(SoftSegmentation { n, k, resp })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.resp[i * self.k..(i + 1) * self.k]
    }
}

impl SoftSegmentation<f64> {
    /// One-hot rows from 1-based labels.
    pub fn from_labels(labels: &[usize], k: usize) -> Self {
        let mut resp = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            resp[i * k + (l - 1)] = 1.0;
        }
        SoftSegmentation {
            n: labels.len(),
            k,
            resp,
        }
    }

    /// Most responsible link of each point (ties to the smaller id).
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (l, &r) in row.iter().enumerate() {
                    if r > row[best] {
                        best = l;
                    }
                }
                best + 1
            })
            .collect()
    }

    /// Project every row onto the probability simplex (Euclidean projection).
    pub fn project_rows(&mut self) {
        let k = self.k;
        for row in self.resp.chunks_mut(k) {
            project_simplex(row);
        }
    }
}

/// In-place Euclidean projection onto {x ≥ 0, Σx = 1}.
pub fn project_simplex(x: &mut [f64]) {
    let mut u: Vec<f64> = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        for v in x.iter_mut() {
            *v /= s;
        }
    }
}

/// Simulated prediction: the joint into `link` advances by `delta` from the
/// current joint values `q`; every point moves by its responsibility for the
/// links carried by that joint times the joint's blended displacement.
pub fn point_forward<S: Scalar>(
    points: &[[f64; 3]],
    seg: &SoftSegmentation<S>,
    model: &SoftModel<S>,
    q: &[S],
    link: LinkId,
    delta: S,
) -> Result<Vec<V3<S>>, SimError> {
    if seg.n != points.len() {
        return Err(SimError::SizeMismatch(format!(
            "{} points but segmentation has {} rows",
            points.len(),
            seg.n
        )));
    }
    if seg.k != model.k() {
        return Err(SimError::SizeMismatch(format!(
            "segmentation over {} links, model has {}",
            seg.k,
            model.k()
        )));
    }
    let e = model.edge_into(link).ok_or(SimError::UnknownLink(link))?;
    let frames = model.forward_kinematics(q)?;
    let f = model.joint_frame(&frames, e);
    let jp = &model.joints[e];
    let axis = geom::normalize(&f.apply_vec(&jp.unit_axis()));
    let g = super::blended(&axis, &f.t, delta, &jp.type_weights());
    // displacement field d(p) = (M - I) p + t
    let mut rows = g.m;
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = row[i] - 1.0;
    }
    let coef: Vec<[S; 4]> = (0..3)
        .map(|r| [rows[r][0], rows[r][1], rows[r][2], g.t[r]])
        .collect();
    let carried: Vec<usize> = model.tree.subtree(link).iter().map(|l| l - 1).collect();
    let out = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let row = seg.row(i);
            let s = if carried.len() == 1 {
                row[carried[0]]
            } else {
                let sel: Vec<S> = carried.iter().map(|&c| row[c]).collect();
                S::sum(&sel)
            };
            let h = [p[0], p[1], p[2], 1.0];
            [0, 1, 2].map(|r| s * S::dot_const(&coef[r], &h) + p[r])
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffsim::SoftJointParams;
    use crate::geom::rotation;
    use crate::scene::TreeStructure;

    fn door() -> SoftModel<f64> {
        SoftModel::new(
            TreeStructure::from_edges(2, vec![(1, 2)]).unwrap(),
            vec![SoftJointParams {
                logits: [-1e3, 0.0, -1e3, -1e3],
                axis: [0.0, 0.0, 1.0],
                origin: [-0.2, -0.16, 0.0],
                orientation: [0.0; 3],
            }],
        )
        .unwrap()
    }

    fn cloud() -> (Vec<[f64; 3]>, Vec<usize>) {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let x = -0.2 + 0.04 * i as f64;
            pts.push([x, 0.0, 0.1]);
            labels.push(1);
            pts.push([x, -0.17, -0.1]);
            labels.push(2);
        }
        (pts, labels)
    }

    #[test]
    fn zero_delta_is_exact_identity() {
        let (pts, labels) = cloud();
        let mut seg = SoftSegmentation::from_labels(&labels, 2);
        seg.resp.iter_mut().for_each(|r| *r = 0.3 + 0.4 * *r);
        let mut m = door();
        m.joints[0].logits = [0.1, 0.4, -0.2, 0.3];
        let out = point_forward(&pts, &seg, &m, &[0.2], 2, 0.0).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn hard_door_matches_rodrigues() {
        let (pts, labels) = cloud();
        let seg = SoftSegmentation::from_labels(&labels, 2);
        let delta = 30f64.to_radians();
        let out = point_forward(&pts, &seg, &door(), &[0.0], 2, delta).unwrap();
        let r = rotation(&[0.0, 0.0, 1.0], delta);
        let o = [-0.2, -0.16, 0.0];
        for ((p, q), &l) in pts.iter().zip(&out).zip(&labels) {
            let expect = if l == 1 {
                *p
            } else {
                geom::add(&geom::mat_vec(&r, &geom::sub(p, &o)), &o)
            };
            for i in 0..3 {
                assert!((q[i] - expect[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_joint_leaves_points() {
        let (pts, labels) = cloud();
        let seg = SoftSegmentation::from_labels(&labels, 2);
        let mut m = door();
        m.joints[0].logits = [0.0, -1e3, -1e3, 0.0];
        assert_eq!(point_forward(&pts, &seg, &m, &[0.0], 2, 0.7).unwrap(), pts);
    }

    #[test]
    fn unknown_link_and_size_errors() {
        let (pts, labels) = cloud();
        let seg = SoftSegmentation::from_labels(&labels, 2);
        assert!(matches!(
            point_forward(&pts, &seg, &door(), &[0.0], 1, 0.1),
            Err(SimError::UnknownLink(1))
        ));
        assert!(point_forward(&pts[1..], &seg, &door(), &[0.0], 2, 0.1).is_err());
    }

    #[test]
    fn simplex_projection() {
        let mut x = [0.7, 0.6, -0.2];
        project_simplex(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| v >= 0.0));
        assert!((x[0] - 0.55).abs() < 1e-12 && (x[1] - 0.45).abs() < 1e-12 && x[2] == 0.0);
        let mut y = [0.2, 0.8];
        project_simplex(&mut y);
        assert_eq!(y, [0.2, 0.8]);
    }
}
