use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, HarnessError};
use crate::scene::{ArticulatedModel, BoxPrimitive, Joint, JointType, Link, LinkId, PhysicalAttrs};

/// Gap between the body and a part mounted on its face (m).
const GAP: f64 = 0.003;
/// Spacing of the representative points laid on every box face (m).
const POINT_SPACING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Box,
    Door,
    Microwave,
    Oven,
    Fridge,
    Storage,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Box,
        Category::Door,
        Category::Microwave,
        Category::Oven,
        Category::Fridge,
        Category::Storage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::Door => "door",
            Category::Microwave => "microwave",
            Category::Oven => "oven",
            Category::Fridge => "fridge",
            Category::Storage => "storage",
        }
    }

    fn index(self) -> u64 {
        Category::ALL.iter().position(|&c| c == self).expect("listed") as u64
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| HarnessError::Config(format!("unknown category {s:?}")))
    }
}

/// Sampling ranges for one object category. Sizes are the body's full
/// extents (width along x, depth along y, height along z); the front face
/// looks toward -y and parts open outward from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub category: Category,
    /// Inclusive range of movable parts.
    pub parts: [usize; 2],
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub height: [f64; 2],
    /// Mass of each movable part (kg).
    pub mass: [f64; 2],
    /// Joint damping of each movable part.
    pub damping: [f64; 2],
}

impl CategorySpec {
    pub fn default_for(category: Category) -> Self {
        let (parts, width, depth, height, mass, damping) = match category {
            Category::Box => ([1, 1], [0.3, 0.5], [0.25, 0.4], [0.15, 0.3], [0.3, 0.8], [0.05, 0.15]),
            Category::Door => ([1, 2], [0.35, 0.6], [0.3, 0.45], [0.35, 0.6], [0.5, 1.2], [0.05, 0.15]),
            Category::Microwave => ([1, 1], [0.4, 0.6], [0.3, 0.4], [0.25, 0.35], [0.4, 1.0], [0.05, 0.15]),
            Category::Oven => ([1, 1], [0.45, 0.6], [0.4, 0.55], [0.3, 0.45], [0.8, 1.5], [0.05, 0.15]),
            Category::Fridge => ([1, 2], [0.45, 0.6], [0.45, 0.6], [0.7, 1.0], [0.8, 1.5], [0.05, 0.2]),
            Category::Storage => ([1, 3], [0.4, 0.6], [0.35, 0.5], [0.35, 0.6], [0.4, 1.0], [0.05, 0.15]),
        };
        CategorySpec {
            category,
            parts,
            width,
            depth,
            height,
            mass,
            damping,
        }
    }

    pub fn defaults() -> Vec<CategorySpec> {
        Category::ALL.into_iter().map(CategorySpec::default_for).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("{} spec: {m}", self.category)));
        let max_parts = match self.category {
            Category::Box | Category::Microwave | Category::Oven => 1,
            Category::Door | Category::Fridge => 2,
            Category::Storage => 4,
        };
        if self.parts[0] < 1 || self.parts[0] > self.parts[1] || self.parts[1] > max_parts {
            return bad(format!("parts {:?} not within 1..={max_parts}", self.parts));
        }
        for (name, r, lo) in [
            ("width", self.width, 0.1),
            ("depth", self.depth, 0.1),
            ("height", self.height, 0.1),
            ("mass", self.mass, 1e-3),
            ("damping", self.damping, 0.0),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] >= lo && r[0] <= r[1]) {
                return bad(format!("{name} range {r:?} must be ordered and at least {lo}"));
            }
        }
        if self.width[1] > 1.5 || self.depth[1] > 1.5 || self.height[1] > 2.5 {
            return bad("sizes beyond household scale".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    /// `<category>-<index>`, unique and sortable within a dataset.
    pub id: String,
    pub category: Category,
    pub split: Split,
    /// Seed for everything sampled from this scene later (clouds, noise).
    pub seed: u64,
    pub model: ArticulatedModel,
}

impl SceneEntry {
    /// Children of the movable joints, in joint order.
    pub fn movable_links(&self) -> Vec<LinkId> {
        self.model
            .joints
            .iter()
            .filter(|j| j.kind.is_movable())
            .map(|j| j.child)
            .collect()
    }

    pub fn first_of(&self, kind: JointType) -> Option<LinkId> {
        self.model.joints.iter().find(|j| j.kind == kind).map(|j| j.child)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    /// Sorted by id.
    pub scenes: Vec<SceneEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |e| e.split == s)
    }

    pub fn get(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.scenes[i])
    }
}

/// Default share of training scenes: 143 of 176.
pub const TRAIN_FRACTION: f64 = 143.0 / 176.0;

/// `n_per_category` seeded models of every listed category and a seeded
/// train/test split with `round(total · train_fraction)` training scenes.
pub fn generate_dataset(
    specs: &[CategorySpec],
    n_per_category: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Dataset, HarnessError> {
    if n_per_category < 2 {
        return Err(HarnessError::Config(format!("need at least 2 scenes per category, got {n_per_category}")));
    }
    if specs.is_empty() {
        return Err(HarnessError::Config("no categories".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(HarnessError::Config(format!("train fraction {train_fraction} not in [0, 1]")));
    }
    let mut seen = Vec::new();
    for s in specs {
        s.validate()?;
        if seen.contains(&s.category) {
            return Err(HarnessError::Config(format!("category {} listed twice", s.category)));
        }
        seen.push(s.category);
    }
    let mut scenes = Vec::with_capacity(specs.len() * n_per_category);
    for spec in specs {
        for i in 0..n_per_category {
            let id = format!("{}-{i:03}", spec.category);
            let scene_seed = mix_seed(seed, spec.category.index(), i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
            let model = generate_model(spec, &id, &mut rng)?;
            scenes.push(SceneEntry {
                id,
                category: spec.category,
                split: Split::Train,
                seed: scene_seed,
                model,
            });
        }
    }
    scenes.sort_by(|a, b| a.id.cmp(&b.id));
    let n_train = (scenes.len() as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 99, 0)));
    for &i in &order[n_train..] {
        scenes[i].split = Split::Test;
    }
    Ok(Dataset { seed, scenes })
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// Grid of points over the faces of `boxes`, at most `POINT_SPACING` apart
/// along each edge.
fn face_points(boxes: &[BoxPrimitive]) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for b in boxes {
        let n = b.size.map(|s| ((s / POINT_SPACING).ceil() as usize).max(1));
        for i in 0..=n[0] {
            for j in 0..=n[1] {
                for k in 0..=n[2] {
                    let on_face = i == 0 || i == n[0] || j == 0 || j == n[1] || k == 0 || k == n[2];
                    if !on_face {
                        continue;
                    }
                    let f = [i as f64 / n[0] as f64, j as f64 / n[1] as f64, k as f64 / n[2] as f64];
                    pts.push([0, 1, 2].map(|a| b.center[a] + (f[a] - 0.5) * b.size[a]));
                }
            }
        }
    }
    pts
}

fn link(id: LinkId, boxes: Vec<BoxPrimitive>, attrs: PhysicalAttrs) -> Link {
    Link {
        id,
        points: face_points(&boxes),
        attrs,
        boxes,
    }
}

/// A movable part before it is attached: boxes in the joint frame.
struct Part {
    kind: JointType,
    axis: [f64; 3],
    /// Hinge or slide origin in the body frame.
    origin: [f64; 3],
    limits: [f64; 2],
    boxes: Vec<BoxPrimitive>,
    /// Extent perpendicular to a hinge, for the inertia.
    lever: f64,
}

/// Slab of size `size` whose near face touches the joint origin and which
/// extends from it along `dir` (per axis sign: +1, -1 or 0 for centered).
fn slab(size: [f64; 3], dir: [f64; 3]) -> BoxPrimitive {
    BoxPrimitive {
        center: [0, 1, 2].map(|a| 0.5 * size[a] * dir[a]),
        size,
    }
}

/// Vertical hinge on the left (`left`) or right front edge of the opening
/// `[x0, x1] × [z0, z1]`, swinging outward.
fn side_door(x0: f64, x1: f64, z0: f64, z1: f64, front: f64, t: f64, left: bool) -> Part {
    let w = x1 - x0;
    let (hx, dir_x, axis) = if left { (x0, 1.0, [0.0, 0.0, -1.0]) } else { (x1, -1.0, [0.0, 0.0, 1.0]) };
    let b = slab([w, t, z1 - z0], [dir_x, -1.0, 0.0]);
    Part {
        kind: JointType::Revolute,
        axis,
        origin: [hx, front - GAP, 0.5 * (z0 + z1)],
        limits: [0.0, 1.6],
        boxes: vec![b],
        lever: w,
    }
}

fn generate_model(spec: &CategorySpec, name: &str, rng: &mut ChaCha8Rng) -> Result<ArticulatedModel, HarnessError> {
    let w = sample(rng, spec.width);
    let d = sample(rng, spec.depth);
    let h = sample(rng, spec.height);
    let n_parts = rng.gen_range(spec.parts[0]..=spec.parts[1]);
    let t = 0.02;
    let front = -0.5 * d;
    let mut parts = Vec::new();
    match spec.category {
        Category::Box => {
            // lid hinged along the top back edge, lifting up
            let mut b = slab([w, d, t], [0.0, -1.0, 1.0]);
            b.center[0] = 0.0;
            parts.push(Part {
                kind: JointType::Revolute,
                axis: [-1.0, 0.0, 0.0],
                origin: [0.0, 0.5 * d, h + GAP],
                limits: [0.0, 1.6],
                boxes: vec![b],
                lever: d,
            });
        }
        Category::Door | Category::Microwave => {
            let (x0, x1) = if spec.category == Category::Microwave {
                // control panel on the right
                (-0.5 * w, 0.5 * w - 0.25 * w.min(0.5))
            } else {
                (-0.5 * w, 0.5 * w)
            };
            if n_parts == 1 {
                parts.push(side_door(x0, x1, 0.0, h, front, t, rng.gen_bool(0.5)));
            } else {
                let mid = 0.5 * (x0 + x1);
                parts.push(side_door(x0, mid - GAP, 0.0, h, front, t, true));
                parts.push(side_door(mid + GAP, x1, 0.0, h, front, t, false));
            }
        }
        Category::Oven => {
            // hinged along the bottom front edge, falling forward
            let hd = 0.75 * h;
            let mut b = slab([w, t, hd], [0.0, -1.0, 1.0]);
            b.center[0] = 0.0;
            parts.push(Part {
                kind: JointType::Revolute,
                axis: [1.0, 0.0, 0.0],
                origin: [0.0, front - GAP, 0.1 * h],
                limits: [0.0, 1.5],
                boxes: vec![b],
                lever: hd,
            });
        }
        Category::Fridge => {
            let left = rng.gen_bool(0.5);
            if n_parts == 1 {
                parts.push(side_door(-0.5 * w, 0.5 * w, 0.0, h, front, t, left));
            } else {
                // freezer on top
                let split = 0.65 * h;
                parts.push(side_door(-0.5 * w, 0.5 * w, 0.0, split - GAP, front, t, left));
                parts.push(side_door(-0.5 * w, 0.5 * w, split + GAP, h, front, t, left));
            }
        }
        Category::Storage => {
            // drawers stacked from the top; a door may take the lowest slot
            let with_door = n_parts >= 2 && rng.gen_bool(0.5);
            let n_drawers = n_parts - with_door as usize;
            let slots = n_parts;
            let slot_h = h / slots as f64;
            for s in 0..n_drawers {
                let z1 = h - s as f64 * slot_h - GAP;
                let z0 = z1 - slot_h + 2.0 * GAP;
                let zc = 0.5 * (z0 + z1);
                let front_panel = BoxPrimitive {
                    center: [0.0, -0.5 * t, 0.0],
                    size: [w - 2.0 * GAP, t, z1 - z0],
                };
                let tray_d = 0.6 * d;
                let tray = BoxPrimitive {
                    center: [0.0, 0.5 * tray_d + GAP, -0.1 * (z1 - z0)],
                    size: [w - 0.06, tray_d, 0.6 * (z1 - z0)],
                };
                parts.push(Part {
                    kind: JointType::Prismatic,
                    axis: [0.0, -1.0, 0.0],
                    origin: [0.0, front - GAP, zc],
                    limits: [0.0, 0.7 * d],
                    boxes: vec![front_panel, tray],
                    lever: 0.0,
                });
            }
            if with_door {
                parts.push(side_door(-0.5 * w, 0.5 * w, 0.0, slot_h - GAP, front, t, rng.gen_bool(0.5)));
            }
        }
    }
    let body = BoxPrimitive {
        center: [0.0, 0.0, 0.5 * h],
        size: [w, d, h],
    };
    let mut links = vec![link(
        1,
        vec![body],
        PhysicalAttrs {
            mass: 10.0,
            damping: 0.0,
            inertia: 1.0,
        },
    )];
    let mut joints = Vec::new();
    for (i, p) in parts.into_iter().enumerate() {
        let id = i + 2;
        let mass = sample(rng, spec.mass);
        let damping = sample(rng, spec.damping);
        let inertia = match p.kind {
            JointType::Revolute => mass * p.lever * p.lever / 3.0,
            _ => mass,
        };
        links.push(link(id, p.boxes, PhysicalAttrs { mass, damping, inertia }));
        joints.push(Joint {
            parent: 1,
            child: id,
            kind: p.kind,
            axis: p.axis,
            origin: p.origin,
            orientation: [0.0; 3],
            limits: p.limits,
        });
    }
    Ok(ArticulatedModel::new(name, links, joints)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffsim::handle_point;
    use crate::geom;

    fn one(c: Category) -> Vec<CategorySpec> {
        vec![CategorySpec::default_for(c)]
    }

    #[test]
    fn box_lids_are_single_revolute_joints() {
        let ds = generate_dataset(&one(Category::Box), 5, 3, TRAIN_FRACTION).unwrap();
        assert_eq!(ds.len(), 5);
        for e in &ds.scenes {
            assert_eq!(e.model.joints.len(), 1);
            assert_eq!(e.model.joints[0].kind, JointType::Revolute);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let specs = CategorySpec::defaults();
        let a = generate_dataset(&specs, 3, 11, TRAIN_FRACTION).unwrap();
        let b = generate_dataset(&specs, 3, 11, TRAIN_FRACTION).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&specs, 3, 12, TRAIN_FRACTION).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_split_of_176() {
        let specs: Vec<_> = CategorySpec::defaults().into_iter().take(4).collect();
        let ds = generate_dataset(&specs, 44, 0, TRAIN_FRACTION).unwrap();
        assert_eq!(ds.len(), 176);
        assert_eq!(ds.split(Split::Train).count(), 143);
        assert_eq!(ds.split(Split::Test).count(), 33);
        assert!(ds.scenes.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(ds.get("door-007").unwrap().id, "door-007");
    }

    #[test]
    fn every_part_opens_outward_and_has_a_handle_in_front() {
        let ds = generate_dataset(&CategorySpec::defaults(), 6, 5, TRAIN_FRACTION).unwrap();
        for e in &ds.scenes {
            e.model.validate().unwrap();
            let d = e.model.links[0].boxes[0].size[1];
            for (i, j) in e.model.joints.iter().enumerate() {
                let mut q = vec![0.0; e.model.joints.len()];
                let h0 = handle_point(&e.model, j.child).unwrap();
                assert!(h0[1] < -0.5 * d + 0.05 || e.category == Category::Box, "{} {h0:?}", e.id);
                q[i] = 0.5 * j.limits[1];
                // the handle moves toward -y or up (lids)
                let pts0 = e.model.world_points(&vec![0.0; q.len()]).unwrap();
                let pts1 = e.model.world_points(&q).unwrap();
                let mean = |pts: &[([f64; 3], LinkId)]| {
                    let sel: Vec<_> = pts.iter().filter(|(_, l)| *l == j.child).map(|(p, _)| *p).collect();
                    geom::scale_f(&sel.iter().fold([0.0; 3], |a, p| geom::add(&a, p)), 1.0 / sel.len() as f64)
                };
                let m0 = mean(&pts0);
                let m1 = mean(&pts1);
                let moved = geom::sub(&m1, &m0);
                assert!(moved[1] < -0.01 || moved[2] > 0.01, "{} part {} moved {moved:?}", e.id, j.child);
            }
        }
    }

    #[test]
    fn storage_has_drawers() {
        let ds = generate_dataset(&one(Category::Storage), 8, 2, TRAIN_FRACTION).unwrap();
        for e in &ds.scenes {
            assert!(e.first_of(JointType::Prismatic).is_some(), "{}", e.id);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = CategorySpec::default_for(Category::Box);
        s.parts = [1, 2];
        assert!(generate_dataset(&[s], 3, 0, TRAIN_FRACTION).is_err());
        let mut s = CategorySpec::default_for(Category::Door);
        s.width = [0.6, 0.3];
        assert!(generate_dataset(&[s], 3, 0, TRAIN_FRACTION).is_err());
        assert!(generate_dataset(&CategorySpec::defaults(), 1, 0, TRAIN_FRACTION).is_err());
        let twice = vec![CategorySpec::default_for(Category::Oven); 2];
        assert!(generate_dataset(&twice, 3, 0, TRAIN_FRACTION).is_err());
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!("sofa".parse::<Category>().is_err());
    }
}
