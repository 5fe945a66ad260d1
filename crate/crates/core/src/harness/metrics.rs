use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diffsim::SoftSegmentation;
use crate::geom;
use crate::ip::ModelParams;
use crate::scene::{ArticulatedModel, JointType, LinkId, TreeStructure};

/// Mean IoU over the parts present in the ground truth.
pub fn metric_miou(pred: &[LinkId], gt: &[LinkId]) -> Result<f64, HarnessError> {
    if pred.len() != gt.len() {
        return Err(HarnessError::SizeMismatch(format!("{} predictions for {} labels", pred.len(), gt.len())));
    }
    let mut parts: Vec<LinkId> = gt.to_vec();
    parts.sort_unstable();
    parts.dedup();
    if parts.is_empty() {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for &l in &parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.iter().zip(gt) {
            inter += (p == l && g == l) as usize;
            union += (p == l || g == l) as usize;
        }
        sum += inter as f64 / union as f64;
    }
    Ok(sum / parts.len() as f64)
}

/// A predicted part instance: member point indices and a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub points: Vec<usize>,
    pub score: f64,
}

fn iou(a: &[usize], b: &[usize], n: usize) -> f64 {
    let mut mark = vec![0u8; n];
    for &i in a {
        mark[i] |= 1;
    }
    for &i in b {
        mark[i] |= 2;
    }
    let inter = mark.iter().filter(|&&m| m == 3).count();
    let union = mark.iter().filter(|&&m| m != 0).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Average precision at IoU 0.75: predictions matched greedily in order of
/// decreasing confidence, precision interpolated (monotone envelope) and
/// integrated over recall.
pub fn metric_ap75(pred: &[Instance], gt: &[Vec<usize>]) -> f64 {
    if gt.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    let n = pred
        .iter()
        .flat_map(|p| p.points.iter())
        .chain(gt.iter().flatten())
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(pred.len());
    for (rank, &i) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gp) in gt.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&pred[i].points, gp, n);
            if v >= 0.75 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / gt.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    // precision envelope from the right
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for k in 0..curve.len() {
        let (r, _) = curve[k];
        if r > prev_r {
            let p = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (r - prev_r) * p;
            prev_r = r;
        }
    }
    ap
}

/// Hard instances from a soft segmentation: one per link with at least one
/// point, scored by the mean responsibility of its points.
pub fn instances_from_soft(m: &SoftSegmentation<f64>) -> Vec<Instance> {
    let labels = m.hard_labels();
    (1..=m.k)
        .filter_map(|l| {
            let pts: Vec<usize> = (0..m.n).filter(|&i| labels[i] == l).collect();
            if pts.is_empty() {
                return None;
            }
            let score = pts.iter().map(|&i| m.row(i)[l - 1]).sum::<f64>() / pts.len() as f64;
            Some(Instance { points: pts, score })
        })
        .collect()
}

pub fn gt_instances(labels: &[LinkId], k: usize) -> Vec<Vec<usize>> {
    (1..=k)
        .map(|l| (0..labels.len()).filter(|&i| labels[i] == l).collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect()
}

/// A joint reduced to what the joint metrics compare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLine {
    pub kind: JointType,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
}

/// Distance between two infinite lines.
pub fn line_distance(o1: &[f64; 3], d1: &[f64; 3], o2: &[f64; 3], d2: &[f64; 3]) -> f64 {
    let a = geom::normalize(d1);
    let b = geom::normalize(d2);
    let w = geom::sub(o2, o1);
    let c = geom::cross(&a, &b);
    let s = geom::norm(&c);
    if s < 1e-9 {
        geom::norm(&geom::cross(&w, &a))
    } else {
        geom::dot(&w, &c).abs() / s
    }
}

/// (rotation error in degrees, line distance in cm, type match).
pub fn metric_joint_errors(pred: &JointLine, gt: &JointLine) -> Result<(f64, f64, bool), HarnessError> {
    for (name, a) in [("predicted", &pred.axis), ("ground-truth", &gt.axis)] {
        let n = geom::norm(a);
        if !(n > 1e-12 && n.is_finite()) {
            return Err(HarnessError::Degenerate(format!("{name} axis has norm {n}")));
        }
    }
    let a = geom::normalize(&pred.axis);
    let b = geom::normalize(&gt.axis);
    let rot = geom::dot(&a, &b).abs().min(1.0).acos().to_degrees();
    let tran = 100.0 * line_distance(&pred.origin, &pred.axis, &gt.origin, &gt.axis);
    Ok((rot, tran, pred.kind == gt.kind))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    pub child: LinkId,
    pub kind: JointType,
    pub rot_deg: f64,
    pub tran_cm: f64,
    pub type_match: bool,
}

/// Joint errors of `(z, e)` against every movable ground-truth joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelErrors {
    pub joints: Vec<JointError>,
    /// Over all movable joints.
    pub rot_deg: f64,
    /// Over revolute joints only; the line of a slide is not observable.
    pub tran_cm: f64,
    pub acc: f64,
}

pub fn gt_joint_lines(gt: &ArticulatedModel) -> Vec<(LinkId, LinkId, JointLine)> {
    let q0 = vec![0.0; gt.joints.len()];
    gt.joints
        .iter()
        .map(|j| {
            let (origin, axis) = gt.joint_axis_world(j.child, &q0).expect("joint of this model");
            (j.parent, j.child, JointLine { kind: j.kind, origin, axis })
        })
        .collect()
}

pub fn predicted_line(z: &ModelParams, u: LinkId, v: LinkId) -> JointLine {
    JointLine {
        kind: z.j.joint_type(u, v),
        origin: z.c.origin(u, v),
        axis: z.c.world_axis(u, v),
    }
}

pub fn model_errors(gt: &ArticulatedModel, z: &ModelParams, e: &TreeStructure) -> Result<ModelErrors, HarnessError> {
    let mut joints = Vec::new();
    for (pu, v, line) in gt_joint_lines(gt) {
        if line.kind == JointType::Fixed {
            continue;
        }
        let u = e.parent(v).unwrap_or(pu);
        let (rot, tran, ok) = metric_joint_errors(&predicted_line(z, u, v), &line)?;
        joints.push(JointError {
            child: v,
            kind: line.kind,
            rot_deg: rot,
            tran_cm: tran,
            type_match: ok && e.parent(v) == Some(pu),
        });
    }
    let mean = |xs: Vec<f64>| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let rot_deg = mean(joints.iter().map(|j| j.rot_deg).collect());
    let tran_cm = mean(
        joints
            .iter()
            .filter(|j| j.kind == JointType::Revolute)
            .map(|j| j.tran_cm)
            .collect(),
    );
    let acc = mean(joints.iter().map(|j| j.type_match as u8 as f64).collect());
    Ok(ModelErrors {
        joints,
        rot_deg,
        tran_cm,
        acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miou_examples() {
        let gt = [1, 1, 2, 2];
        assert_eq!(metric_miou(&gt, &gt).unwrap(), 1.0);
        assert_eq!(metric_miou(&[1, 1, 1, 1], &gt).unwrap(), 0.25);
        assert_eq!(metric_miou(&[2, 2, 1, 1], &gt).unwrap(), 0.0);
        assert!(metric_miou(&[1], &gt).is_err());
    }

    #[test]
    fn ap75_examples() {
        let gt = vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]];
        let perfect: Vec<Instance> = gt
            .iter()
            .map(|g| Instance {
                points: g.clone(),
                score: 0.9,
            })
            .collect();
        assert_eq!(metric_ap75(&perfect, &gt), 1.0);
        let poor = vec![Instance {
            points: vec![0, 1, 2, 5, 6],
            score: 1.0,
        }];
        assert_eq!(metric_ap75(&poor, &gt), 0.0);
        // IoU 4/5 = 0.8 on the first part, nothing for the second
        let half = vec![Instance {
            points: vec![0, 1, 2, 3],
            score: 0.7,
        }];
        assert_eq!(metric_ap75(&half, &gt), 0.5);
    }

    #[test]
    fn joint_error_examples() {
        let z = JointLine {
            kind: JointType::Revolute,
            origin: [0.0; 3],
            axis: [0.0, 0.0, 1.0],
        };
        assert_eq!(metric_joint_errors(&z, &z).unwrap(), (0.0, 0.0, true));
        let flipped = JointLine {
            axis: [0.0, 0.0, -1.0],
            ..z
        };
        assert_eq!(metric_joint_errors(&flipped, &z).unwrap(), (0.0, 0.0, true));
        let shifted = JointLine {
            origin: [0.1, 0.0, 0.0],
            ..z
        };
        let (r, t, _) = metric_joint_errors(&shifted, &z).unwrap();
        assert_eq!(r, 0.0);
        assert!((t - 10.0).abs() < 1e-12);
        let bad = JointLine { axis: [0.0; 3], ..z };
        assert!(metric_joint_errors(&bad, &z).is_err());
    }

    #[test]
    fn skew_lines_distance_is_symmetric() {
        let d1 = line_distance(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.3], &[0.0, 1.0, 0.0]);
        let d2 = line_distance(&[0.0, 0.0, 0.3], &[0.0, 1.0, 0.0], &[0.0; 3], &[1.0, 0.0, 0.0]);
        assert!((d1 - 0.3).abs() < 1e-15 && d1 == d2);
    }
}
