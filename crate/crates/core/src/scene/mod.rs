//! Articulated-scene description: links, joints, the joint graph, and the
//! URDF-subset document format.

mod compose;
mod matrices;
mod tree;
mod urdf;

pub use compose::{compose_model, rotation_to_rotvec, ComposeOptions};
pub use matrices::{JointSpatialMatrix, JointTypeMatrix, SLOT_FIXED, SLOT_NONE, SLOT_PRISMATIC, SLOT_REVOLUTE};
pub use tree::{greedy_tree, TreeStructure};
pub use urdf::{canonicalize, emit_urdf, parse_urdf, round9};

use serde::{Deserialize, Serialize};

use crate::geom::{self, Affine};

/// Links are numbered 1..=K.
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("need at least {need} links, got {got}")]
    TooFewLinks { need: usize, got: usize },
    #[error("link {0}: {1}")]
    InvalidLink(LinkId, String),
    #[error("joint {parent}->{child}: {reason}")]
    InvalidJoint {
        parent: LinkId,
        child: LinkId,
        reason: String,
    },
    #[error("edges do not form a spanning arborescence: {0}")]
    NotATree(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("line {line}: {message}")]
    Urdf { line: u32, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
    Fixed,
}

impl JointType {
    pub fn name(self) -> &'static str {
        match self {
            JointType::Revolute => "revolute",
            JointType::Prismatic => "prismatic",
            JointType::Fixed => "fixed",
        }
    }

    /// Slot in the 4-way type distribution (slot 0 is "None").
    pub fn slot(self) -> usize {
        match self {
            JointType::Revolute => SLOT_REVOLUTE,
            JointType::Prismatic => SLOT_PRISMATIC,
            JointType::Fixed => SLOT_FIXED,
        }
    }

    pub fn from_slot(slot: usize) -> Option<JointType> {
        match slot {
            SLOT_REVOLUTE => Some(JointType::Revolute),
            SLOT_PRISMATIC => Some(JointType::Prismatic),
            SLOT_FIXED => Some(JointType::Fixed),
            _ => None,
        }
    }

    pub fn is_movable(self) -> bool {
        self != JointType::Fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalAttrs {
    /// kg
    pub mass: f64,
    /// N·m·s/rad (revolute) or N·s/m (prismatic)
    pub damping: f64,
    /// Generalized inertia of the joint driving this link.
    pub inertia: f64,
}

impl Default for PhysicalAttrs {
    fn default() -> Self {
        PhysicalAttrs {
            mass: 1.0,
            damping: 0.1,
            inertia: 0.05,
        }
    }
}

impl PhysicalAttrs {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(format!("mass must be > 0, got {}", self.mass));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(format!("damping must be >= 0, got {}", self.damping));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(format!("inertia must be > 0, got {}", self.inertia));
        }
        Ok(())
    }
}

/// Axis-aligned box in the link frame, by center and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrimitive {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl BoxPrimitive {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.size;
        2.0 * (a * b + b * c + a * c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    /// Representative points in the link frame (m).
    pub points: Vec<[f64; 3]>,
    pub attrs: PhysicalAttrs,
    #[serde(default)]
    pub boxes: Vec<BoxPrimitive>,
}

impl Link {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.attrs
            .validate()
            .map_err(|m| SceneError::InvalidLink(self.id, m))?;
        if self.points.is_empty() {
            return Err(SceneError::InvalidLink(self.id, "point set is empty".into()));
        }
        if self.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(SceneError::InvalidLink(self.id, "non-finite point".into()));
        }
        Ok(())
    }
}

/// One URDF joint. `origin`/`orientation` place the child link frame in the
/// parent link frame; `axis` is expressed in the child (joint) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub parent: LinkId,
    pub child: LinkId,
    pub kind: JointType,
    pub axis: [f64; 3],
    pub origin: [f64; 3],
    /// Axis-angle (rad).
    pub orientation: [f64; 3],
    pub limits: [f64; 2],
}

/// Axis norm tolerance accepted by validation and the document parser.
pub const AXIS_TOL: f64 = 1e-6;

impl Joint {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| SceneError::InvalidJoint {
            parent: self.parent,
            child: self.child,
            reason,
        };
        if self.parent == self.child {
            return Err(bad("parent equals child".into()));
        }
        let n = geom::norm(&self.axis);
        if (n - 1.0).abs() > AXIS_TOL {
            return Err(bad(format!("non-unit axis (norm {n})")));
        }
        if !(self.limits[0] <= self.limits[1]) {
            return Err(bad(format!(
                "lower limit {} exceeds upper {}",
                self.limits[0], self.limits[1]
            )));
        }
        let all = self.origin.iter().chain(&self.orientation).chain(&self.limits);
        if all.copied().any(|x| !x.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Child frame pose in the parent frame at q = 0.
    pub fn mount(&self) -> Affine<f64> {
        Affine {
            m: geom::rotvec_matrix(&self.orientation),
            t: self.origin,
        }
    }

    /// Rigid motion of the joint in its own frame at displacement `q`.
    pub fn motion(&self, q: f64) -> Affine<f64> {
        match self.kind {
            JointType::Revolute => Affine {
                m: geom::rotation(&self.axis, q),
                t: [0.0; 3],
            },
            JointType::Prismatic => Affine {
                m: geom::identity(&0.0),
                t: geom::scale_f(&self.axis, q),
            },
            JointType::Fixed => Affine::identity(&0.0),
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        if self.kind == JointType::Fixed {
            0.0
        } else {
            q.clamp(self.limits[0], self.limits[1])
        }
    }
}

/// Links, joints and a name: the URDF-equivalent scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
}

impl ArticulatedModel {
    pub fn new(name: impl Into<String>, links: Vec<Link>, joints: Vec<Joint>) -> Result<Self, SceneError> {
        let m = ArticulatedModel {
            name: name.into(),
            links,
            joints,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let k = self.links.len();
        if k == 0 {
            return Err(SceneError::TooFewLinks { need: 1, got: 0 });
        }
        let mut ids: Vec<LinkId> = self.links.iter().map(|l| l.id).collect();
        ids.sort_unstable();
        if ids != (1..=k).collect::<Vec<_>>() {
            return Err(SceneError::SizeMismatch(format!(
                "link ids must be exactly 1..={k}, got {ids:?}"
            )));
        }
        for l in &self.links {
            l.validate()?;
        }
        for j in &self.joints {
            j.validate()?;
        }
        self.tree().map(|_| ())
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.iter().find(|l| l.id == id)
    }

    /// The joint whose child is `child`.
    pub fn joint_into(&self, child: LinkId) -> Option<&Joint> {
        self.joints.iter().find(|j| j.child == child)
    }

    pub fn joint_index(&self, child: LinkId) -> Option<usize> {
        self.joints.iter().position(|j| j.child == child)
    }

    pub fn tree(&self) -> Result<TreeStructure, SceneError> {
        TreeStructure::from_edges(
            self.links.len(),
            self.joints.iter().map(|j| (j.parent, j.child)).collect(),
        )
    }

    /// World pose of every link (indexed by id - 1) for joint values `q`
    /// given in `self.joints` order.
    pub fn link_frames(&self, q: &[f64]) -> Result<Vec<Affine<f64>>, SceneError> {
        if q.len() != self.joints.len() {
            return Err(SceneError::SizeMismatch(format!(
                "{} joint values for {} joints",
                q.len(),
                self.joints.len()
            )));
        }
        let tree = self.tree()?;
        let mut frames = vec![Affine::identity(&0.0); self.links.len()];
        for v in tree.topological_order() {
            if let Some(ji) = self.joint_index(v) {
                let j = &self.joints[ji];
                frames[v - 1] = frames[j.parent - 1].compose(&j.mount()).compose(&j.motion(q[ji]));
            }
        }
        Ok(frames)
    }

    /// All link points in world coordinates, with their link ids.
    pub fn world_points(&self, q: &[f64]) -> Result<Vec<([f64; 3], LinkId)>, SceneError> {
        let frames = self.link_frames(q)?;
        let mut out = Vec::new();
        for l in &self.links {
            for p in &l.points {
                out.push((frames[l.id - 1].apply(p), l.id));
            }
        }
        Ok(out)
    }

    /// World-frame joint axis line (point, unit direction) for the joint into
    /// `child` at joint values `q`.
    pub fn joint_axis_world(&self, child: LinkId, q: &[f64]) -> Option<([f64; 3], [f64; 3])> {
        let frames = self.link_frames(q).ok()?;
        let j = self.joint_into(child)?;
        let f = frames[j.parent - 1].compose(&j.mount());
        Some((f.t, geom::normalize(&f.apply_vec(&j.axis))))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn box_link(id: LinkId, center: [f64; 3], size: [f64; 3]) -> Link {
        let mut points = Vec::new();
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    points.push([
                        center[0] + sx * size[0],
                        center[1] + sy * size[1],
                        center[2] + sz * size[2],
                    ]);
                }
            }
        }
        Link {
            id,
            points,
            attrs: PhysicalAttrs::default(),
            boxes: vec![BoxPrimitive { center, size }],
        }
    }

    /// Cabinet body plus a door hinged about +z at x = -0.2.
    pub fn door_model() -> ArticulatedModel {
        ArticulatedModel::new(
            "door",
            vec![
                box_link(1, [0.0, 0.0, 0.0], [0.4, 0.3, 0.4]),
                box_link(2, [0.2, -0.01, 0.0], [0.4, 0.02, 0.4]),
            ],
            vec![Joint {
                parent: 1,
                child: 2,
                kind: JointType::Revolute,
                axis: [0.0, 0.0, 1.0],
                origin: [-0.2, -0.16, 0.0],
                orientation: [0.0; 3],
                limits: [0.0, 1.8],
            }],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn validation_catches_bad_links_and_joints() {
        let mut m = fixtures::door_model();
        m.links[0].attrs.mass = 0.0;
        assert!(matches!(m.validate(), Err(SceneError::InvalidLink(1, _))));
        let mut m = fixtures::door_model();
        m.joints[0].axis = [0.0, 0.0, 2.0];
        assert!(matches!(m.validate(), Err(SceneError::InvalidJoint { .. })));
        let mut m = fixtures::door_model();
        m.joints[0].limits = [1.0, 0.0];
        assert!(m.validate().is_err());
        let mut m = fixtures::door_model();
        m.links[1].points.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn revolute_frame_rotates_about_hinge() {
        let m = fixtures::door_model();
        let frames = m.link_frames(&[FRAC_PI_2]).unwrap();
        // link-frame point (0.4, 0, 0) sits on the free edge; after a quarter
        // turn it lies 0.4 m along +y from the hinge
        let p = frames[1].apply(&[0.4, 0.0, 0.0]);
        let expect = [-0.2, -0.16 + 0.4, 0.0];
        for i in 0..3 {
            assert!((p[i] - expect[i]).abs() < 1e-12, "{p:?}");
        }
        let (o, d) = m.joint_axis_world(2, &[0.3]).unwrap();
        assert_eq!(o, [-0.2, -0.16, 0.0]);
        assert_eq!(d, [0.0, 0.0, 1.0]);
    }
}
