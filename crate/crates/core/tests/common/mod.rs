//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use articulate::diffsim::{grasped_state, SimScene, SimState, SoftSegmentation};
use articulate::harness::{generate_dataset, manip_scene, Category, CategorySpec, Dataset, ExperimentConfig, ManipScene};
use articulate::ip::ModelParams;
use articulate::residual::{NetConfig, ResidualNet};
use articulate::scene::{
    greedy_tree, ArticulatedModel, BoxPrimitive, Joint, JointSpatialMatrix, JointType, JointTypeMatrix, Link,
    PhysicalAttrs, TreeStructure,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Relative error with a small absolute floor so entries that are zero in
/// both estimates do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

pub fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if (0.2..1.0).contains(&n) {
            return v.map(|x| x / n);
        }
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (ModelParams, TreeStructure) {
    let mut j = JointTypeMatrix::zeros(k);
    let mut c = JointSpatialMatrix::new(k);
    for u in 1..=k {
        for v in (1..=k).filter(|&v| v != u) {
            *j.get_mut(u, v) = [0; 4].map(|_| rng.gen_range(-2.0..2.0));
            let origin = [0; 3].map(|_| rng.gen_range(-0.5..0.5));
            let orientation = [0; 3].map(|_| rng.gen_range(-0.6..0.6));
            c.set(u, v, unit(rng), origin, orientation);
        }
    }
    let mut resp = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        resp.extend(row.iter().map(|x| x / s));
    }
    let z = ModelParams {
        j,
        c,
        m: SoftSegmentation::new(n, k, resp).unwrap(),
        alpha: vec![PhysicalAttrs::default(); k],
    };
    let e = greedy_tree(&z.j).unwrap();
    (z, e)
}

pub fn random_net(scene: &SimScene, rng: &mut ChaCha8Rng) -> ResidualNet {
    let cfg = NetConfig {
        hidden: vec![16, 16],
        ..Default::default()
    };
    let mut n = ResidualNet::new(scene.state_dim(), scene.action_dim(), scene.joints.len(), &cfg, rng.gen()).unwrap();
    for p in &mut n.params {
        *p = rng.gen_range(-0.3..0.3);
    }
    for (m, s) in n.in_mean.iter_mut().zip(&mut n.in_std) {
        *m = rng.gen_range(-0.2..0.2);
        *s = rng.gen_range(0.5..2.0);
    }
    for o in &mut n.out_scale {
        *o = rng.gen_range(0.01..0.1);
    }
    n
}

pub fn hinge_dataset(per_category: usize, seed: u64) -> Dataset {
    let specs: Vec<CategorySpec> = [Category::Door, Category::Microwave, Category::Fridge, Category::Oven, Category::Box]
        .iter()
        .map(|&c| CategorySpec::default_for(c))
        .collect();
    generate_dataset(&specs, per_category, seed, 0.5).unwrap()
}

pub fn hinge_scenes<'a>(ds: &'a Dataset, cfg: &ExperimentConfig) -> Vec<ManipScene<'a>> {
    ds.scenes.iter().filter_map(|e| manip_scene(e, cfg).ok()).collect()
}

/// A grasped state with the target part partly open and everything moving.
pub fn moving_state(ms: &ManipScene, rng: &mut ChaCha8Rng) -> SimState<f64> {
    let lim = ms.entry.model.joints[ms.joint].limits;
    let mut q = vec![0.0; ms.sim.joints.len()];
    q[ms.joint] = lim[0] + rng.gen_range(0.1..0.5) * (lim[1] - lim[0]);
    let mut s = grasped_state(&ms.sim, ms.joint, &q, &ms.home.robot.q).unwrap();
    for v in &mut s.robot.qd {
        *v = rng.gen_range(-0.3..0.3);
    }
    for v in &mut s.object.qd {
        *v = rng.gen_range(-0.3..0.3);
    }
    s
}

pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += eps;
        xm[i] -= eps;
        let (p, m) = (f(&xp), f(&xm));
        cols.push(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * eps)).collect::<Vec<f64>>());
    }
    let rows = cols.first().map_or(0, |c| c.len());
    (0..rows).map(|r| cols.iter().map(|c| c[r]).collect()).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, idx: usize) -> ArticulatedModel {
    let k = rng.gen_range(1..=8);
    let mut links = Vec::with_capacity(k);
    for id in 1..=k {
        let points = (0..rng.gen_range(1..6))
            .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-3..1))))
            .collect();
        let boxes = (0..rng.gen_range(0..3))
            .map(|_| BoxPrimitive {
                center: [0; 3].map(|_| rng.gen_range(-0.5..0.5)),
                size: [0; 3].map(|_| rng.gen_range(0.001..1.0)),
            })
            .collect();
        links.push(Link {
            id,
            points,
            attrs: PhysicalAttrs {
                mass: rng.gen_range(0.01..50.0),
                damping: if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) },
                inertia: rng.gen_range(1e-4..5.0),
            },
            boxes,
        });
    }
    // a random tree, listed in shuffled order under a random root
    let mut order: Vec<usize> = (1..=k).collect();
    for i in (1..k).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut joints = Vec::new();
    for i in 1..k {
        let parent = order[rng.gen_range(0..i)];
        let kind = [JointType::Revolute, JointType::Prismatic, JointType::Fixed][rng.gen_range(0..3)];
        let lo = rng.gen_range(-2.0..0.5);
        let axis = if rng.gen_bool(0.3) {
            let mut a = [0.0; 3];
            a[rng.gen_range(0..3)] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            a
        } else {
            unit(rng)
        };
        joints.push(Joint {
            parent,
            child: order[i],
            kind,
            axis,
            origin: [0; 3].map(|_| rng.gen_range(-1.0..1.0)),
            orientation: [0; 3].map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-1.0..1.0) }),
            limits: [lo, lo + rng.gen_range(0.0..2.5)],
        });
    }
    for i in (1..joints.len()).rev() {
        joints.swap(i, rng.gen_range(0..=i));
    }
    let names = ["cabinet", "a&b", "<door>", "\"quoted\"", "obj's"];
    ArticulatedModel::new(format!("{}-{idx}", names[idx % names.len()]), links, joints).unwrap()
}

