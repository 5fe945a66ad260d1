use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{
    ArticulatedModel, BoxPrimitive, Joint, JointSpatialMatrix, JointType, JointTypeMatrix, Link, LinkId,
    PhysicalAttrs, SceneError, TreeStructure,
};
use crate::geom::{self, Affine};

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeOptions {
    pub name: String,
    /// Per-child joint limits; joints not listed get the type default.
    pub limits: BTreeMap<LinkId, [f64; 2]>,
    pub default_revolute: [f64; 2],
    pub default_prismatic: [f64; 2],
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            name: "scene".into(),
            limits: BTreeMap::new(),
            default_revolute: [-PI, PI],
            default_prismatic: [-0.5, 0.5],
        }
    }
}

/// World pose at the reference configuration of the joint frame on edge
/// `(u, v)` of `C`.
pub(crate) fn joint_world_frame(c: &JointSpatialMatrix, u: LinkId, v: LinkId) -> Affine<f64> {
    Affine {
        m: geom::rotvec_matrix(&c.orientation(u, v)),
        t: c.origin(u, v),
    }
}

fn bounding_box(points: &[[f64; 3]]) -> BoxPrimitive {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    BoxPrimitive {
        center: [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i])),
        size: [0, 1, 2].map(|i| hi[i] - lo[i]),
    }
}

/// Build a hard articulated model from world-frame point groups (reference
/// configuration), the joint matrices and a tree over them.
///
/// The root link frame is the world frame; every other link frame is its
/// joint frame taken from `C`, so each joint axis passes through the child
/// frame origin.
pub fn compose_model(
    groups: &[Vec<[f64; 3]>],
    j: &JointTypeMatrix,
    c: &JointSpatialMatrix,
    tree: &TreeStructure,
    attrs: &[PhysicalAttrs],
    opts: &ComposeOptions,
) -> Result<ArticulatedModel, SceneError> {
    let k = groups.len();
    if tree.k != k || j.k != k || c.k != k || attrs.len() != k {
        return Err(SceneError::SizeMismatch(format!(
            "groups {k}, tree {}, J {}, C {}, attrs {}",
            tree.k,
            j.k,
            c.k,
            attrs.len()
        )));
    }
    let mut world = vec![Affine::identity(&0.0); k];
    for &(u, v) in &tree.edges {
        world[v - 1] = joint_world_frame(c, u, v);
    }
    let mut joints = Vec::with_capacity(k.saturating_sub(1));
    for &(u, v) in &tree.edges {
        let kind = j.joint_type(u, v);
        let mount = world[u - 1].rigid_inverse().compose(&world[v - 1]);
        let limits = match kind {
            JointType::Fixed => [0.0, 0.0],
            JointType::Revolute => *opts.limits.get(&v).unwrap_or(&opts.default_revolute),
            JointType::Prismatic => *opts.limits.get(&v).unwrap_or(&opts.default_prismatic),
        };
        joints.push(Joint {
            parent: u,
            child: v,
            kind,
            axis: geom::normalize(&c.axis(u, v)),
            origin: mount.t,
            orientation: rotation_to_rotvec(&mount.m),
            limits,
        });
    }
    let mut links = Vec::with_capacity(k);
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(SceneError::InvalidLink(i + 1, "empty point group".into()));
        }
        let inv = world[i].rigid_inverse();
        let points: Vec<[f64; 3]> = g.iter().map(|p| inv.apply(p)).collect();
        let bbox = bounding_box(&points);
        links.push(Link {
            id: i + 1,
            points,
            attrs: attrs[i],
            boxes: vec![bbox],
        });
    }
    ArticulatedModel::new(opts.name.clone(), links, joints)
}

/// Axis-angle vector of a rotation matrix.
pub fn rotation_to_rotvec(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let w = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if angle < 1e-7 {
        return geom::scale_f(&w, 0.5);
    }
    if PI - angle < 1e-5 {
        // near a half turn the skew part vanishes; read the axis off R + I
        let b = [0, 1, 2].map(|i| ((m[i][i] + 1.0) * 0.5).max(0.0).sqrt());
        let big = (0..3).max_by(|&a, &c| b[a].total_cmp(&b[c])).unwrap_or(0);
        let mut axis = [0.0; 3];
        axis[big] = b[big];
        for i in 0..3 {
            if i != big {
                axis[i] = (m[big][i] + m[i][big]) / (4.0 * b[big]);
            }
        }
        let axis = geom::normalize(&axis);
        // keep the sign consistent with the small skew component
        let s = geom::dot(&axis, &w);
        let axis = if s < 0.0 { geom::scale_f(&axis, -1.0) } else { axis };
        return geom::scale_f(&axis, angle);
    }
    geom::scale_f(&w, angle / (2.0 * angle.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::greedy_tree;

    fn rect(x0: f64, x1: f64, y: f64) -> Vec<[f64; 3]> {
        let mut v = Vec::new();
        for i in 0..5 {
            for k in 0..5 {
                let x = x0 + (x1 - x0) * i as f64 / 4.0;
                v.push([x, y, -0.2 + 0.1 * k as f64]);
            }
        }
        v
    }

    #[test]
    fn door_composes_to_one_revolute() {
        let groups = vec![rect(-0.2, 0.2, 0.0), rect(-0.2, 0.2, -0.16)];
        let mut j = JointTypeMatrix::zeros(2);
        *j.get_mut(1, 2) = [-3.0, 3.0, 0.0, 0.0];
        *j.get_mut(2, 1) = [3.0, 0.0, 0.0, 0.0];
        let mut c = JointSpatialMatrix::new(2);
        c.set(1, 2, [0.0, 0.0, 1.0], [-0.2, -0.16, 0.0], [0.0; 3]);
        let tree = greedy_tree(&j).unwrap();
        let m = compose_model(&groups, &j, &c, &tree, &[PhysicalAttrs::default(); 2], &ComposeOptions::default())
            .unwrap();
        assert_eq!(m.joints.len(), 1);
        assert_eq!(m.joints[0].kind, JointType::Revolute);
        // points are recovered at the reference configuration
        let wp = m.world_points(&[0.0]).unwrap();
        let door: Vec<_> = wp.iter().filter(|(_, l)| *l == 2).collect();
        for (p, g) in door.iter().zip(&groups[1]) {
            for i in 0..3 {
                assert!((p.0[i] - g[i]).abs() < 1e-12);
            }
        }
        let (o, d) = m.joint_axis_world(2, &[0.0]).unwrap();
        assert!(geom::point_line_distance(&o, &[-0.2, -0.16, 0.0], &[0.0, 0.0, 1.0]) < 1e-12);
        assert!((geom::dot(&d, &[0.0, 0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_non_none_picks_revolute() {
        let groups = vec![rect(0.0, 1.0, 0.0), rect(0.0, 1.0, 1.0)];
        let mut j = JointTypeMatrix::zeros(2);
        *j.get_mut(1, 2) = [-5.0, 1.0, 1.0, 1.0];
        let c = JointSpatialMatrix::new(2);
        let tree = TreeStructure::from_edges(2, vec![(1, 2)]).unwrap();
        let m = compose_model(&groups, &j, &c, &tree, &[PhysicalAttrs::default(); 2], &ComposeOptions::default())
            .unwrap();
        assert_eq!(m.joints[0].kind, JointType::Revolute);
    }

    #[test]
    fn drawer_axis_follows_c() {
        let groups = vec![rect(0.0, 0.4, 0.0), rect(0.05, 0.35, -0.1)];
        let mut j = JointTypeMatrix::zeros(2);
        *j.get_mut(1, 2) = [-4.0, -1.0, 4.0, 0.0];
        let mut c = JointSpatialMatrix::new(2);
        let axis = geom::normalize(&[0.0, -1.0, 0.1]);
        c.set(1, 2, axis, [0.2, -0.1, 0.0], [0.1, 0.2, -0.3]);
        let tree = TreeStructure::from_edges(2, vec![(1, 2)]).unwrap();
        let m = compose_model(&groups, &j, &c, &tree, &[PhysicalAttrs::default(); 2], &ComposeOptions::default())
            .unwrap();
        assert_eq!(m.joints[0].kind, JointType::Prismatic);
        let (_, d) = m.joint_axis_world(2, &[0.0]).unwrap();
        let want = c.world_axis(1, 2);
        for i in 0..3 {
            assert!((d[i] - want[i]).abs() < 1e-12);
        }
        assert!(compose_model(&groups[..1], &j, &c, &tree, &[PhysicalAttrs::default()], &ComposeOptions::default())
            .is_err());
    }

    #[test]
    fn rotvec_inverse_of_matrix() {
        for r in [[0.0, 0.0, 0.0], [0.1, -0.2, 0.3], [0.0, 0.0, 3.1], [PI, 0.0, 0.0], [1e-9, 0.0, 2e-9]] {
            let m = geom::rotvec_matrix(&r);
            let back = geom::rotvec_matrix(&rotation_to_rotvec(&m));
            for i in 0..3 {
                for k in 0..3 {
                    assert!((m[i][k] - back[i][k]).abs() < 1e-9, "{r:?}");
                }
            }
        }
    }
}
