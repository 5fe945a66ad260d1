use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::flow_mode;
use super::dataset::{generate_dataset, Category, CategorySpec, Dataset, SceneEntry};
use super::metrics::{gt_instances, instances_from_soft, metric_ap75, metric_miou, model_errors};
use super::report::{aggregate, write_csv, MetricRow, SummaryRow};
use super::{initial_params, mix_seed, ExperimentConfig, HarnessError};
use crate::diffsim::{Perturbation, SimScene, SimState};
use crate::ip::{optimize_params, run_ip_episode, ActionBounds, IpAction, IpConfig, ModelParams, Observation};
use crate::manipulation::{guided_execute, home_state, place_arm, two_level_solve, ManipError, SolveOutcome, Task};
use crate::par::Exec;
use crate::perception::{sample_material, GroundTruthScene, MaterialPoints};
use crate::residual::{train_residual, ResidualNet, Stepper, TransitionBuffer};
use crate::scene::{ArticulatedModel, JointType, LinkId, TreeStructure};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Robustness,
    IpPerformance,
    Manipulation,
    ClosedLoop,
    Sweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Robustness,
        ExperimentKind::IpPerformance,
        ExperimentKind::Manipulation,
        ExperimentKind::ClosedLoop,
        ExperimentKind::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::IpPerformance => "ip-performance",
            ExperimentKind::Manipulation => "manipulation",
            ExperimentKind::ClosedLoop => "closed-loop",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "disturbance-sweep" {
            return Ok(ExperimentKind::Sweep);
        }
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown experiment {s:?}")))
    }
}

/// One manipulation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    #[serde(rename = "scene-id")]
    pub scene_id: String,
    pub category: String,
    pub condition: String,
    /// Starting gripper displacement (cm); 0 outside the sweep.
    #[serde(rename = "disturbance-cm")]
    pub disturbance_cm: f64,
    /// Whether the start can be reached at all.
    pub feasible: bool,
    /// The object plan ends within tolerance of the goal.
    pub planned: bool,
    pub success: bool,
    /// Empty when nothing was executed.
    #[serde(rename = "final-err-deg")]
    pub final_err_deg: Option<f64>,
    pub replans: usize,
    pub detail: String,
}

/// Success count of a group of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub group: String,
    pub condition: String,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Scene ids with their seeds, in row order.
    pub scenes: Vec<(String, u64)>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub manifest: Manifest,
    /// Perception experiments: one row per scene and condition.
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    /// Manipulation experiments: one row per attempt.
    pub trials: Vec<TrialRow>,
    pub rates: Vec<RateRow>,
}

impl ExperimentOutput {
    fn prefix(&self) -> String {
        let p = &self.manifest.config.output.prefix;
        if p.is_empty() {
            self.manifest.kind.name().to_string()
        } else {
            p.clone()
        }
    }

    /// Per-row CSV.
    pub fn rows_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut b = Vec::new();
        if self.trials.is_empty() {
            write_csv(&self.metrics, &mut b)?;
        } else {
            write_csv(&self.trials, &mut b)?;
        }
        Ok(b)
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut b = Vec::new();
        if self.rates.is_empty() {
            write_csv(&self.summary, &mut b)?;
        } else {
            write_csv(&self.rates, &mut b)?;
        }
        Ok(b)
    }

    /// Write `<prefix>.csv`, `<prefix>-summary.csv` and `<prefix>.json` (the
    /// manifest with the summary) under the configured output directory.
    pub fn write(&self) -> Result<Vec<PathBuf>, HarnessError> {
        let dir = &self.manifest.config.output.dir;
        let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let prefix = self.prefix();
        let paths = [
            dir.join(format!("{prefix}.csv")),
            dir.join(format!("{prefix}-summary.csv")),
            dir.join(format!("{prefix}.json")),
        ];
        std::fs::write(&paths[0], self.rows_csv()?).map_err(io)?;
        std::fs::write(&paths[1], self.summary_csv()?).map_err(io)?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(&paths[2], json).map_err(io)?;
        Ok(paths.to_vec())
    }
}

/// Run one experiment protocol with the default execution mode.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    run_experiment_with(kind, cfg, Exec::default())
}

/// Scenes are processed independently under `exec`; rows come out sorted
/// by scene id whatever the schedule.
pub fn run_experiment_with(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let mut out = ExperimentOutput {
        manifest: Manifest {
            version: MANIFEST_VERSION,
            kind,
            seed: cfg.seed,
            config: cfg.clone(),
            scenes: Vec::new(),
            files: Vec::new(),
            notes: Vec::new(),
        },
        metrics: Vec::new(),
        summary: Vec::new(),
        trials: Vec::new(),
        rates: Vec::new(),
    };
    match kind {
        ExperimentKind::Robustness => robustness(cfg, exec, &mut out)?,
        ExperimentKind::IpPerformance => ip_performance(cfg, exec, &mut out)?,
        ExperimentKind::Manipulation => manipulation(cfg, exec, &mut out)?,
        ExperimentKind::ClosedLoop => closed_loop(cfg, exec, &mut out)?,
        ExperimentKind::Sweep => sweep(cfg, exec, &mut out)?,
    }
    let prefix = out.prefix();
    out.manifest.files = vec![format!("{prefix}.csv"), format!("{prefix}-summary.csv"), format!("{prefix}.json")];
    Ok(out)
}

fn inner(exec: Exec) -> Exec {
    // scene-level parallelism only
    match exec {
        Exec::Parallel => Exec::Sequential,
        Exec::Sequential => Exec::Sequential,
    }
}

fn metric_row(
    entry: &SceneEntry,
    condition: &str,
    mat: &MaterialPoints,
    z: &ModelParams,
    e: &TreeStructure,
) -> Result<MetricRow, HarnessError> {
    let errs = model_errors(&entry.model, z, e)?;
    let miou = metric_miou(&z.m.hard_labels(), &mat.links)?;
    let ap75 = metric_ap75(&instances_from_soft(&z.m), &gt_instances(&mat.links, z.k()));
    Ok(MetricRow {
        scene_id: entry.id.clone(),
        category: entry.category.to_string(),
        condition: condition.into(),
        miou,
        ap75,
        acc: errs.acc,
        rot_deg: errs.rot_deg,
        tran_cm: errs.tran_cm,
    })
}

fn starting_model(
    entry: &SceneEntry,
    cfg: &ExperimentConfig,
) -> Result<(MaterialPoints, ModelParams, TreeStructure), HarnessError> {
    let mat = sample_material(&entry.model, cfg.perception.points, entry.seed)
        .map_err(|e| HarnessError::Degenerate(format!("{}: {e}", entry.id)))?;
    let (z, e) = initial_params(&entry.model, &mat, &cfg.init, mix_seed(entry.seed, 1, 0))?;
    Ok((mat, z, e))
}

fn collect<T>(results: Vec<Result<Vec<T>, HarnessError>>) -> Result<Vec<T>, HarnessError> {
    let mut v = Vec::new();
    for r in results {
        v.extend(r?);
    }
    Ok(v)
}

fn record_scenes(out: &mut ExperimentOutput, scenes: &[&SceneEntry]) {
    out.manifest.scenes = scenes.iter().map(|e| (e.id.clone(), e.seed)).collect();
}

fn evaluation_scenes<'a>(ds: &'a Dataset, cfg: &ExperimentConfig) -> Vec<&'a SceneEntry> {
    ds.scenes
        .iter()
        .filter(|e| cfg.dataset.split.is_none_or(|s| e.split == s))
        .collect()
}

const REVOLUTE_CATEGORIES: [Category; 5] =
    [Category::Box, Category::Door, Category::Microwave, Category::Oven, Category::Fridge];

/// One probe action per single-hinge scene, then one refinement of the
/// perturbed starting model under each flow mode.
fn robustness(cfg: &ExperimentConfig, exec: Exec, out: &mut ExperimentOutput) -> Result<(), HarnessError> {
    let specs: Vec<CategorySpec> = REVOLUTE_CATEGORIES
        .iter()
        .map(|&c| {
            let mut s = cfg
                .dataset
                .specs
                .iter()
                .find(|s| s.category == c)
                .cloned()
                .unwrap_or_else(|| CategorySpec::default_for(c));
            s.parts = [1, 1];
            s
        })
        .collect();
    let ds = generate_dataset(&specs, cfg.robustness.per_category.max(2), cfg.seed, cfg.dataset.train_fraction)?;
    let scenes: Vec<&SceneEntry> = ds
        .scenes
        .iter()
        .filter(|e| index_of(&e.id) < cfg.robustness.per_category)
        .collect();
    let modes = cfg
        .robustness
        .modes
        .iter()
        .map(|m| flow_mode(m, cfg.perception.noise_sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let ie = inner(exec);
    let results = exec.map(&scenes, |entry| -> Result<Vec<MetricRow>, HarnessError> {
        let (mat, z0, e0) = starting_model(entry, cfg)?;
        let link = entry.first_of(JointType::Revolute).expect("revolute category");
        let ji = entry.model.joint_index(link).expect("joint of this model");
        let lim = entry.model.joints[ji].limits;
        let delta = cfg.robustness.action_fraction * (lim[1] - lim[0]);
        let mut q = vec![0.0; entry.model.joints.len()];
        let p0 = mat.pose(&entry.model, &q).map_err(|e| HarnessError::Degenerate(e.to_string()))?;
        q[ji] = entry.model.joints[ji].clamp(delta);
        let p1 = mat.pose(&entry.model, &q).map_err(|e| HarnessError::Degenerate(e.to_string()))?;
        let mut rows = vec![metric_row(entry, "init", &mat, &z0, &e0)?];
        for (i, mode) in modes.iter().enumerate() {
            let obs = Observation::capture(
                p0.clone(),
                &p1,
                IpAction { link, delta: q[ji] },
                vec![0.0; z0.k()],
                *mode,
                mix_seed(entry.seed, 2, i as u64),
                ie,
            )
            .map_err(|e| HarnessError::Experiment(format!("{}: {e}", entry.id)))?;
            let (z, e) = match optimize_params(&z0, &e0, &[obs], &cfg.ip.opt) {
                Ok(r) => (r.z, r.e),
                // a diverged update leaves the model as it was
                Err(_) => (z0.clone(), e0.clone()),
            };
            rows.push(metric_row(entry, mode.name(), &mat, &z, &e)?);
        }
        Ok(rows)
    });
    out.metrics = collect(results)?;
    out.summary = aggregate(&out.metrics);
    record_scenes(out, &scenes);
    Ok(())
}

fn index_of(id: &str) -> usize {
    id.rsplit('-').next().and_then(|s| s.parse().ok()).unwrap_or(usize::MAX)
}

fn known_limits(model: &ArticulatedModel) -> ActionBounds {
    let mut b = ActionBounds::default();
    for j in &model.joints {
        b.limits.insert(j.child, j.limits);
    }
    b
}

/// Full interactive-perception episodes from the perturbed starting model.
fn ip_performance(cfg: &ExperimentConfig, exec: Exec, out: &mut ExperimentOutput) -> Result<(), HarnessError> {
    let ds = generate_dataset(
        &cfg.dataset.category_specs(),
        cfg.dataset.per_category,
        cfg.seed,
        cfg.dataset.train_fraction,
    )?;
    let scenes = evaluation_scenes(&ds, cfg);
    let flow = cfg.perception.flow_mode()?;
    let ie = inner(exec);
    let aborted = std::sync::Mutex::new(Vec::new());
    let results = exec.map(&scenes, |entry| -> Result<Vec<MetricRow>, HarnessError> {
        let (mat, z0, e0) = starting_model(entry, cfg)?;
        let mut gt = GroundTruthScene::at_rest(entry.model.clone(), entry.seed);
        let ip = IpConfig {
            n_actions: cfg.ip.actions,
            policy: cfg.ip.policy,
            flow,
            opt: cfg.ip.opt,
            bounds: known_limits(&entry.model),
            seed: mix_seed(entry.seed, 3, 0),
            track_metrics: false,
            exec: ie,
        };
        let ep = run_ip_episode(&mut gt, &z0, &e0, &ip)
            .map_err(|e| HarnessError::Experiment(format!("{}: {e}", entry.id)))?;
        if let Some(why) = &ep.aborted {
            aborted.lock().expect("not poisoned").push(format!("{}: {why}", entry.id));
        }
        Ok(vec![
            metric_row(entry, "init", &mat, &z0, &e0)?,
            metric_row(entry, "opt", &mat, &ep.z, &ep.e)?,
        ])
    });
    out.metrics = collect(results)?;
    out.summary = aggregate(&out.metrics);
    let mut notes = aborted.into_inner().expect("not poisoned");
    notes.sort();
    out.manifest.notes = notes;
    record_scenes(out, &scenes);
    Ok(())
}

/// A scene set up for opening its first hinge.
pub struct ManipScene<'a> {
    pub entry: &'a SceneEntry,
    pub sim: SimScene,
    pub task: Task,
    pub joint: usize,
    pub home: SimState<f64>,
}

pub fn manip_scene<'a>(entry: &'a SceneEntry, cfg: &ExperimentConfig) -> Result<ManipScene<'a>, ManipError> {
    let m = &cfg.manipulation;
    let link: LinkId = entry
        .first_of(JointType::Revolute)
        .ok_or(ManipError::Invalid(format!("{} has no hinge", entry.id)))?;
    let joint = entry.model.joint_index(link).expect("joint of this model");
    let lim = entry.model.joints[joint].limits;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(entry.seed, 4, 0));
    let goal = if m.goal[0] == m.goal[1] { m.goal[0] } else { rng.gen_range(m.goal[0]..m.goal[1]) };
    let goal = goal.min(lim[0] + 0.9 * (lim[1] - lim[0]));
    let arm = place_arm(&entry.model, link, goal)?;
    let sim = SimScene::from_model(&entry.model, arm, m.dt)?;
    let home = home_state(&sim, joint, &vec![0.0; sim.joints.len()], [0.0, 0.0])?;
    Ok(ManipScene {
        entry,
        sim,
        task: Task {
            link,
            q_goal: goal,
            horizon: m.horizon,
            tolerance: m.tolerance_deg.to_radians(),
        },
        joint,
        home,
    })
}

/// Revolute-target scenes, taken round-robin over the categories.
fn manipulation_scenes<'a>(ds: &'a Dataset, cfg: &ExperimentConfig, n: usize) -> Vec<&'a SceneEntry> {
    let mut v: Vec<&SceneEntry> = evaluation_scenes(ds, cfg)
        .into_iter()
        .filter(|e| e.first_of(JointType::Revolute).is_some())
        .collect();
    v.sort_by_key(|e| (index_of(&e.id), e.category));
    v.truncate(n);
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn manipulation_dataset(cfg: &ExperimentConfig, n: usize) -> Result<Dataset, HarnessError> {
    let specs = cfg.dataset.category_specs();
    let per = n.div_ceil(specs.len().max(1)).max(cfg.dataset.per_category) + 1;
    generate_dataset(&specs, per, cfg.seed, cfg.dataset.train_fraction)
}

fn trial(ms: &ManipScene, condition: &str) -> TrialRow {
    TrialRow {
        scene_id: ms.entry.id.clone(),
        category: ms.entry.category.to_string(),
        condition: condition.into(),
        disturbance_cm: 0.0,
        feasible: true,
        planned: false,
        success: false,
        final_err_deg: None,
        replans: 0,
        detail: String::new(),
    }
}

fn solve(ms: &ManipScene, start: &SimState<f64>, stepper: &Stepper, cfg: &ExperimentConfig) -> Result<SolveOutcome, ManipError> {
    let s = two_level_solve(&ms.sim, &ms.entry.model, &ms.task, start, stepper, &cfg.manipulation.solve);
    match s {
        Err(ManipError::MaxReplans { best, .. }) => Ok(*best),
        s => s,
    }
}

/// Plan from `start` and execute in `real`; failed runs feed `buffer`.
fn attempt(
    ms: &ManipScene,
    start: &SimState<f64>,
    real: &SimScene,
    stepper: &Stepper,
    cfg: &ExperimentConfig,
    buffer: &mut TransitionBuffer,
    row: &mut TrialRow,
) {
    let sol = match solve(ms, start, stepper, cfg) {
        Ok(s) => s,
        Err(e) => {
            row.detail = format!("plan: {e}");
            return;
        }
    };
    row.replans = sol.replans.len();
    row.planned = (sol.object.terminal().q[ms.joint] - ms.task.q_goal).abs() <= ms.task.tolerance;
    match guided_execute(&sol.policy, real, start, &ms.task, buffer) {
        Ok(o) => {
            row.success = o.success;
            row.final_err_deg = Some(o.final_error.to_degrees());
            if let Some(a) = o.aborted {
                row.detail = a;
            }
        }
        Err(e) => row.detail = format!("execute: {e}"),
    }
}

fn rate(group: &str, condition: &str, rows: &[&TrialRow]) -> RateRow {
    let successes = rows.iter().filter(|r| r.success).count();
    RateRow {
        group: group.into(),
        condition: condition.into(),
        trials: rows.len(),
        successes,
        rate: if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 },
    }
}

/// Plan with the true model and execute in the same world.
fn manipulation(cfg: &ExperimentConfig, exec: Exec, out: &mut ExperimentOutput) -> Result<(), HarnessError> {
    let ds = manipulation_dataset(cfg, cfg.manipulation.scenes)?;
    let scenes = manipulation_scenes(&ds, cfg, cfg.manipulation.scenes);
    let results = exec.map(&scenes, |entry| -> Result<Vec<TrialRow>, HarnessError> {
        let ms = match manip_scene(entry, cfg) {
            Ok(ms) => ms,
            Err(e) => return Ok(vec![unplaced(entry, "matched", e)]),
        };
        let mut row = trial(&ms, "matched");
        let mut buf = TransitionBuffer::new(cfg.manipulation.buffer);
        attempt(&ms, &ms.home, &ms.sim, &Stepper::Nominal, cfg, &mut buf, &mut row);
        Ok(vec![row])
    });
    out.trials = collect(results)?;
    let all: Vec<&TrialRow> = out.trials.iter().collect();
    let mut rates = Vec::new();
    let mut cats: Vec<&str> = out.trials.iter().map(|r| r.category.as_str()).collect();
    cats.dedup();
    for c in cats {
        let rows: Vec<&TrialRow> = all.iter().copied().filter(|r| r.category == c).collect();
        rates.push(rate(c, "matched", &rows));
    }
    rates.push(rate("overall", "matched", &all));
    let planned: Vec<&TrialRow> = all.iter().copied().filter(|r| r.planned).collect();
    rates.push(RateRow {
        group: "overall".into(),
        condition: "planned".into(),
        trials: all.len(),
        successes: planned.len(),
        rate: if all.is_empty() { 0.0 } else { planned.len() as f64 / all.len() as f64 },
    });
    out.rates = rates;
    record_scenes(out, &scenes);
    Ok(())
}

fn unplaced(entry: &SceneEntry, condition: &str, e: ManipError) -> TrialRow {
    TrialRow {
        scene_id: entry.id.clone(),
        category: entry.category.to_string(),
        condition: condition.into(),
        disturbance_cm: 0.0,
        feasible: false,
        planned: false,
        success: false,
        final_err_deg: None,
        replans: 0,
        detail: format!("setup: {e}"),
    }
}

/// The perturbation of world `seed`: the configured one at seed 0, each
/// effect rescaled by a factor in [0.75, 1.25] otherwise.
pub fn perturbation_for(base: &Perturbation, seed: u64, run_seed: u64) -> Perturbation {
    if seed == 0 {
        return *base;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(run_seed, 5, seed));
    let mut f = || rng.gen_range(0.75..1.25);
    Perturbation {
        mass_scale: 1.0 + (base.mass_scale - 1.0) * f(),
        damping_add: base.damping_add * f(),
        drag: base.drag * f(),
    }
}

/// Nominal plan in a perturbed world; on failure, learn a residual from the
/// failed run, replan through it and try again.
fn closed_loop(cfg: &ExperimentConfig, exec: Exec, out: &mut ExperimentOutput) -> Result<(), HarnessError> {
    let m = &cfg.manipulation;
    let ds = manipulation_dataset(cfg, m.scenes)?;
    let scenes = manipulation_scenes(&ds, cfg, m.scenes);
    let ie = inner(exec);
    let results = exec.map(&scenes, |entry| -> Result<Vec<TrialRow>, HarnessError> {
        let ms = match manip_scene(entry, cfg) {
            Ok(ms) => ms,
            Err(e) => {
                let e = e.to_string();
                let mut rows = Vec::new();
                for p in 0..m.perturbation_seeds {
                    for c in ["before", "after"] {
                        rows.push(unplaced(entry, &format!("seed-{p}-{c}"), ManipError::Invalid(e.clone())));
                    }
                }
                return Ok(rows);
            }
        };
        let nominal = solve(&ms, &ms.home, &Stepper::Nominal, cfg);
        let mut rows = Vec::new();
        for p in 0..m.perturbation_seeds as u64 {
            let real = ms.sim.perturbed(&perturbation_for(&m.perturbation, p, cfg.seed));
            let mut before = trial(&ms, &format!("seed-{p}-before"));
            let mut buf = TransitionBuffer::new(m.buffer);
            match &nominal {
                Ok(sol) => {
                    before.replans = sol.replans.len();
                    before.planned = (sol.object.terminal().q[ms.joint] - ms.task.q_goal).abs() <= ms.task.tolerance;
                    match guided_execute(&sol.policy, &real, &ms.home, &ms.task, &mut buf) {
                        Ok(o) => {
                            before.success = o.success;
                            before.final_err_deg = Some(o.final_error.to_degrees());
                        }
                        Err(e) => before.detail = format!("execute: {e}"),
                    }
                }
                Err(e) => before.detail = format!("plan: {e}"),
            }
            let mut after = before.clone();
            after.condition = format!("seed-{p}-after");
            if !before.success && !buf.is_empty() {
                after.detail.clear();
                let net = ResidualNet::new(ms.sim.state_dim(), ms.sim.action_dim(), ms.sim.joints.len(), &m.net, mix_seed(entry.seed, 6, p))
                    .map_err(|e| HarnessError::Experiment(format!("{}: {e}", entry.id)))?;
                let mut tc = m.train.clone();
                tc.seed = mix_seed(entry.seed, 7, p);
                tc.exec = ie;
                match train_residual(&net, &ms.sim, &buf.to_vec(), &tc) {
                    Ok((net, _)) => {
                        after.success = false;
                        after.planned = false;
                        attempt(&ms, &ms.home, &real, &Stepper::Augmented(&net), cfg, &mut buf, &mut after);
                    }
                    Err(e) => after.detail = format!("train: {e}"),
                }
            }
            rows.push(before);
            rows.push(after);
        }
        Ok(rows)
    });
    out.trials = collect(results)?;
    let mut rates = Vec::new();
    for p in 0..m.perturbation_seeds {
        for c in ["before", "after"] {
            let cond = format!("seed-{p}-{c}");
            let rows: Vec<&TrialRow> = out.trials.iter().filter(|r| r.condition == cond).collect();
            rates.push(rate(&format!("seed-{p}"), c, &rows));
        }
    }
    out.rates = rates;
    out.manifest.notes = (0..m.perturbation_seeds as u64)
        .map(|p| format!("seed-{p}: {:?}", perturbation_for(&m.perturbation, p, cfg.seed)))
        .collect();
    record_scenes(out, &scenes);
    Ok(())
}

/// Displace the starting gripper position by each configured magnitude in
/// seeded directions, plan from there and execute in the matched world.
/// Starts the arm cannot reach are recorded as infeasible and left out of
/// the rates.
fn sweep(cfg: &ExperimentConfig, exec: Exec, out: &mut ExperimentOutput) -> Result<(), HarnessError> {
    let s = &cfg.sweep;
    let ds = manipulation_dataset(cfg, s.scenes)?;
    let scenes = manipulation_scenes(&ds, cfg, s.scenes);
    let results = exec.map(&scenes, |entry| -> Result<Vec<TrialRow>, HarnessError> {
        let ms = match manip_scene(entry, cfg) {
            Ok(ms) => ms,
            Err(e) => {
                let mut rows = Vec::new();
                for &mag in &s.magnitudes_cm {
                    for _ in 0..s.trials {
                        let mut r = unplaced(entry, "sweep", ManipError::Invalid(e.to_string()));
                        r.disturbance_cm = mag;
                        rows.push(r);
                    }
                }
                return Ok(rows);
            }
        };
        let mut rows = Vec::new();
        for (mi, &mag) in s.magnitudes_cm.iter().enumerate() {
            for t in 0..s.trials {
                let mut row = trial(&ms, "sweep");
                row.disturbance_cm = mag;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(entry.seed, 8 + mi as u64, t as u64));
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let off = [0.01 * mag * phi.cos(), 0.01 * mag * phi.sin()];
                match home_state(&ms.sim, ms.joint, &vec![0.0; ms.sim.joints.len()], off) {
                    Ok(start) => {
                        let mut buf = TransitionBuffer::new(cfg.manipulation.buffer);
                        attempt(&ms, &start, &ms.sim, &Stepper::Nominal, cfg, &mut buf, &mut row);
                    }
                    Err(e) => {
                        row.feasible = false;
                        row.detail = format!("start: {e}");
                    }
                }
                rows.push(row);
            }
        }
        Ok(rows)
    });
    out.trials = collect(results)?;
    out.rates = s
        .magnitudes_cm
        .iter()
        .map(|&mag| {
            let rows: Vec<&TrialRow> = out
                .trials
                .iter()
                .filter(|r| r.disturbance_cm == mag && r.feasible)
                .collect();
            rate(&format!("{mag}"), "feasible", &rows)
        })
        .collect();
    record_scenes(out, &scenes);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.dataset.per_category = 2;
        c.robustness.per_category = 2;
        c.ip.actions = 2;
        c.ip.opt.steps = 20;
        c.manipulation.scenes = 2;
        c.manipulation.perturbation_seeds = 1;
        c.sweep.scenes = 1;
        c.sweep.magnitudes_cm = vec![0.0, 5.0];
        c
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!(matches!("table-3".parse::<ExperimentKind>(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn exact_start_with_gt_flow_stays_exact() {
        let mut c = small();
        c.init = super::super::InitError::none();
        c.robustness.modes = vec!["gt".into()];
        let out = run_experiment(ExperimentKind::Robustness, &c).unwrap();
        assert_eq!(out.metrics.len(), 2 * 5 * 2);
        for r in &out.metrics {
            assert!(r.rot_deg < 0.5 && r.tran_cm < 0.5, "{r:?}");
            assert_eq!(r.miou, 1.0);
        }
    }

    #[test]
    fn robustness_is_deterministic_across_schedules() {
        let c = small();
        let a = run_experiment_with(ExperimentKind::Robustness, &c, Exec::Sequential).unwrap();
        let b = run_experiment_with(ExperimentKind::Robustness, &c, Exec::Parallel).unwrap();
        assert_eq!(a.rows_csv().unwrap(), b.rows_csv().unwrap());
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
        assert_eq!(a.manifest.config, c);
        let ids: Vec<&str> = a.metrics.iter().map(|r| r.scene_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn manipulation_rows_and_rates() {
        let c = small();
        let out = run_experiment(ExperimentKind::Manipulation, &c).unwrap();
        assert_eq!(out.trials.len(), 2);
        let overall = out.rates.iter().find(|r| r.group == "overall" && r.condition == "matched").unwrap();
        assert_eq!(overall.trials, 2);
        let csv = String::from_utf8(out.rows_csv().unwrap()).unwrap();
        assert!(csv.starts_with("scene-id,category,condition,disturbance-cm,"), "{csv}");
    }

    #[test]
    fn artifacts_land_in_the_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.output.dir = dir.path().to_path_buf();
        c.robustness.modes = vec!["gt".into()];
        let out = run_experiment(ExperimentKind::Robustness, &c).unwrap();
        let paths = out.write().unwrap();
        assert_eq!(paths.len(), 3);
        let json: ExperimentOutput = serde_json::from_slice(&std::fs::read(&paths[2]).unwrap()).unwrap();
        assert_eq!(json.manifest.config, c);
        assert_eq!(std::fs::read(&paths[0]).unwrap(), out.rows_csv().unwrap());
    }
}
