use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::geom::{self, Affine};
use crate::scene::{rotation_to_rotvec, JointSpatialMatrix, JointType, JointTypeMatrix, LinkId};

/// Classification constants for two-pose joint fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitThresholds {
    /// Rotation above this counts as rotation-dominant (deg).
    pub rot_deg: f64,
    /// Translation above this (with small rotation) counts as sliding (m).
    pub trans: f64,
    /// RMS fit residual above this means the pair is not one rigid joint (m).
    pub residual: f64,
    /// Residual scale of the logit mapping (m).
    pub tau: f64,
    /// Weight of the hinge-to-part distance added to the residual of a
    /// rotation fit; a real hinge touches the part it carries.
    pub hinge_weight: f64,
}

impl Default for FitThresholds {
    fn default() -> Self {
        FitThresholds {
            rot_deg: 3.0,
            trans: 0.01,
            residual: 0.02,
            tau: 0.01,
            hinge_weight: 0.1,
        }
    }
}

fn to_na(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn centroid(ps: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in ps {
        c = geom::add(&c, p);
    }
    geom::scale_f(&c, 1.0 / ps.len() as f64)
}

/// Least-squares rigid motion `b ≈ R a + t` and its RMS residual.
pub fn kabsch(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<(Affine<f64>, f64), PerceptionError> {
    if a.len() != b.len() {
        return Err(PerceptionError::SizeMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(PerceptionError::Degenerate(format!("{} points", a.len())));
    }
    let ca = to_na(&centroid(a));
    let cb = to_na(&centroid(b));
    let mut h = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        let da = to_na(p) - ca;
        h += da * (to_na(q) - cb).transpose();
        cov += da * da.transpose();
    }
    let sv = cov.symmetric_eigenvalues();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|x, y| y.total_cmp(x));
    if s[1] <= 1e-12 * s[0].max(1e-300) {
        return Err(PerceptionError::Degenerate("points are collinear".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cb - r * ca;
    let m = [0, 1, 2].map(|i| [0, 1, 2].map(|k| r[(i, k)]));
    let g = Affine { m, t: [t[0], t[1], t[2]] };
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let e = geom::sub(&g.apply(p), q);
            geom::dot(&e, &e)
        })
        .sum();
    Ok((g, (sq / a.len() as f64).sqrt()))
}

/// Fitted relation of group `v` to group `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFit {
    /// `None` when the pair is not explained by one rigid joint.
    pub kind: Option<JointType>,
    pub axis: [f64; 3],
    pub origin: [f64; 3],
    pub angle: f64,
    pub translation: f64,
    pub residual: f64,
}

/// Screw parameters of a rigid motion: unit axis, a point on it closest to
/// `near`, and the rotation angle.
fn screw(g: &Affine<f64>, near: &[f64; 3]) -> ([f64; 3], [f64; 3], f64) {
    let rv = rotation_to_rotvec(&g.m);
    let angle = geom::norm(&rv);
    let w = geom::scale_f(&rv, 1.0 / angle);
    let t_perp = geom::sub(&g.t, &geom::scale_f(&w, geom::dot(&g.t, &w)));
    let a = Matrix3::from_fn(|i, k| if i == k { 1.0 } else { 0.0 } - g.m[i][k]);
    // (I - R) p = t_perp has a line of solutions along w
    let p0 = a
        .pseudo_inverse(1e-12)
        .map(|pi| pi * to_na(&t_perp))
        .unwrap_or_else(|_| Vector3::zeros());
    let p0 = [p0[0], p0[1], p0[2]];
    let s = geom::dot(&geom::sub(near, &p0), &w);
    (w, geom::add(&p0, &geom::scale_f(&w, s)), angle)
}

pub fn fit_pair(
    u0: &[[f64; 3]],
    u1: &[[f64; 3]],
    v0: &[[f64; 3]],
    v1: &[[f64; 3]],
    th: &FitThresholds,
) -> Result<PairFit, PerceptionError> {
    let (tu, ru) = kabsch(u0, u1)?;
    let inv = tu.rigid_inverse();
    let v1_in_u: Vec<[f64; 3]> = v1.iter().map(|p| inv.apply(p)).collect();
    let (g, rv) = kabsch(v0, &v1_in_u)?;
    let residual = ru.max(rv);
    let cv = centroid(v0);
    let rot = rotation_to_rotvec(&g.m);
    let angle = geom::norm(&rot);
    let translation = geom::norm(&g.t);
    let mut fit = PairFit {
        kind: None,
        axis: [0.0, 0.0, 1.0],
        origin: cv,
        angle,
        translation,
        residual,
    };
    if angle > th.rot_deg.to_radians() {
        let (w, o, _) = screw(&g, &cv);
        fit.kind = Some(JointType::Revolute);
        fit.axis = w;
        fit.origin = o;
        let reach = v0
            .iter()
            .map(|p| geom::point_line_distance(p, &o, &w))
            .fold(f64::INFINITY, f64::min);
        fit.residual += th.hinge_weight * reach;
    } else if translation > th.trans {
        fit.kind = Some(JointType::Prismatic);
        fit.axis = geom::scale_f(&g.t, 1.0 / translation);
    } else {
        fit.kind = Some(JointType::Fixed);
    }
    if residual > th.residual {
        fit.kind = None;
    }
    Ok(fit)
}

/// Logits over {None, Revolute, Prismatic, Fixed} for one fitted pair: the
/// fitted type gets `-residual / tau`, the other joint types 2 less, and
/// None sits at the residual threshold.
pub fn fit_logits(fit: &PairFit, th: &FitThresholds) -> [f64; 4] {
    let none = -th.residual / th.tau;
    let chosen = -fit.residual / th.tau;
    match fit.kind {
        None => [none, none - 2.0, none - 2.0, none - 2.0],
        Some(kind) => {
            let mut l = [none, chosen - 2.0, chosen - 2.0, chosen - 2.0];
            l[kind.slot()] = chosen;
            l
        }
    }
}

/// Pairwise joint estimates from part groups observed at two poses (points
/// in index correspondence within each group).
pub fn init_joint_estimates(
    before: &[Vec<[f64; 3]>],
    after: &[Vec<[f64; 3]>],
    th: &FitThresholds,
) -> Result<(JointTypeMatrix, JointSpatialMatrix), PerceptionError> {
    let k = before.len();
    if after.len() != k {
        return Err(PerceptionError::SizeMismatch(format!("{k} groups before, {} after", after.len())));
    }
    let mut j = JointTypeMatrix::zeros(k);
    let mut c = JointSpatialMatrix::new(k);
    for u in 1..=k {
        for v in 1..=k {
            if u == v {
                continue;
            }
            let fit = fit_pair(&before[u - 1], &after[u - 1], &before[v - 1], &after[v - 1], th).map_err(|e| {
                PerceptionError::Degenerate(format!("pair ({u}, {v}): {e}"))
            })?;
            *j.get_mut(u, v) = fit_logits(&fit, th);
            c.set(u, v, fit.axis, fit.origin, [0.0; 3]);
        }
    }
    Ok((j, c))
}

/// Split a labelled cloud into per-link groups (labels are 1-based).
pub fn group_points(points: &[[f64; 3]], labels: &[LinkId], k: usize) -> Vec<Vec<[f64; 3]>> {
    let mut g = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        if (1..=k).contains(&l) {
            g[l - 1].push(*p);
        }
    }
    g
}
