//! Command-line front end: datasets, models, interactive perception,
//! residual fitting, planning, execution and the experiment protocols.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use articulate::diffsim::grasped_state;
use articulate::harness::metrics::model_errors;
use articulate::harness::report::{read_csv, write_csv};
use articulate::harness::{
    aggregate, generate_dataset, initial_params, manip_scene, mix_seed, perceive_params, perturbation_for,
    run_experiment, Dataset, ExperimentConfig, ExperimentKind, ExperimentOutput, HarnessError, ManipScene, MetricRow,
    SceneEntry,
};
use articulate::ip::{episode_metrics, run_ip_episode, ActionBounds, IpConfig};
use articulate::manipulation::{guided_execute, two_level_solve, ManipError, Policy, SolveOutcome};
use articulate::perception::{group_points, sample_material, GroundTruthScene};
use articulate::residual::{explore_transitions, train_residual, ExploreConfig, ResidualNet, Stepper, TransitionBuffer};
use articulate::scene::{compose_model, emit_urdf, ComposeOptions};

#[derive(Parser)]
#[command(name = "articulate", version, about = "Articulated-scene modeling and manipulation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// gt, gt+noise, gt+noise:<sigma> or nn.
    #[arg(long, global = true)]
    flow_mode: Option<String>,
    /// Flow noise bound for gt+noise (m).
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct SceneArg {
    /// Scene id such as door-000; the first suitable scene when omitted.
    #[arg(long)]
    scene: Option<String>,
    /// Dataset written by `gen`; regenerated from the config otherwise.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset: dataset.json and one URDF per scene.
    Gen,
    /// Build a starting model for a scene and write it as URDF and JSON.
    InitModel {
        #[command(flatten)]
        scene: SceneArg,
        /// Fit joints from two poses instead of perturbing the truth.
        #[arg(long)]
        perceive: bool,
    },
    /// Run one interactive-perception episode on a scene.
    RunIp {
        #[command(flatten)]
        scene: SceneArg,
    },
    /// Collect transitions in the perturbed world and train a residual.
    FitResidual {
        #[command(flatten)]
        scene: SceneArg,
        #[arg(long, default_value_t = 1000)]
        transitions: usize,
        /// Perturbation seed; 0 is the configured perturbation itself.
        #[arg(long, default_value_t = 0)]
        world: u64,
    },
    /// Plan opening the first hinge of a scene.
    Plan {
        #[command(flatten)]
        scene: SceneArg,
        /// Plan with a residual written by `fit-residual`.
        #[arg(long)]
        residual: Option<PathBuf>,
    },
    /// Execute a policy written by `plan`.
    Exec {
        #[command(flatten)]
        scene: SceneArg,
        #[arg(long)]
        policy: PathBuf,
        /// Run in the perturbed world of this seed instead of the matched one.
        #[arg(long)]
        world: Option<u64>,
    },
    /// Run an experiment protocol and write its CSV and JSON.
    Eval {
        /// robustness, ip-performance, manipulation, closed-loop or sweep.
        experiment: String,
    },
    /// Summarize a per-scene metrics CSV or an experiment JSON.
    Report { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(f) = &c.flow_mode {
        cfg.perception.flow = f.clone();
    }
    if let Some(s) = c.noise_sigma {
        cfg.perception.noise_sigma = s;
    }
    cfg.validate()?;
    cfg.perception.flow_mode()?;
    Ok(cfg)
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, bytes).map_err(io(path))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(v).map_err(|e| HarnessError::Io(e.to_string()))
}

fn fail(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Experiment(e.to_string())
}

fn dataset(cfg: &ExperimentConfig, from: &Option<PathBuf>) -> Result<Dataset, HarnessError> {
    match from {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
        }
        None => generate_dataset(
            &cfg.dataset.category_specs(),
            cfg.dataset.per_category,
            cfg.seed,
            cfg.dataset.train_fraction,
        ),
    }
}

fn pick<'a>(ds: &'a Dataset, id: &Option<String>, ok: impl Fn(&SceneEntry) -> bool) -> Result<&'a SceneEntry, HarnessError> {
    match id {
        Some(id) => ds.get(id).ok_or_else(|| HarnessError::Config(format!("no scene {id:?}"))),
        None => ds
            .scenes
            .iter()
            .find(|e| ok(e))
            .ok_or_else(|| HarnessError::Config("no suitable scene in the dataset".into())),
    }
}

fn hinge_scene<'a>(ds: &'a Dataset, arg: &SceneArg, cfg: &ExperimentConfig) -> Result<ManipScene<'a>, HarnessError> {
    let entry = pick(ds, &arg.scene, |e| manip_scene(e, cfg).is_ok())?;
    manip_scene(entry, cfg).map_err(fail)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.output.dir.clone();
    match cli.cmd {
        Cmd::Gen => {
            let ds = dataset(&cfg, &None)?;
            write(&out.join("dataset.json"), json(&ds)?)?;
            for e in &ds.scenes {
                let path = out.join("urdf").join(format!("{}.urdf", e.id));
                fs::create_dir_all(out.join("urdf")).map_err(io(&out))?;
                fs::write(&path, emit_urdf(&e.model)).map_err(io(&path))?;
            }
            println!("{} scenes, URDF files under {}", ds.len(), out.join("urdf").display());
        }
        Cmd::InitModel { scene, perceive } => {
            let ds = dataset(&cfg, &scene.dataset)?;
            let entry = pick(&ds, &scene.scene, |e| !e.model.joints.is_empty())?;
            let mat = sample_material(&entry.model, cfg.perception.points, entry.seed).map_err(fail)?;
            let seed = mix_seed(entry.seed, 1, 0);
            let (z, e) = if perceive {
                perceive_params(&entry.model, cfg.perception.points, cfg.init.flip_rate, 0.3, seed)?
            } else {
                initial_params(&entry.model, &mat, &cfg.init, seed)?
            };
            let rest = mat.pose(&entry.model, &vec![0.0; entry.model.joints.len()]).map_err(fail)?;
            let groups = group_points(&rest, &z.m.hard_labels(), z.k());
            let opts = ComposeOptions {
                name: format!("{}-init", entry.id),
                ..Default::default()
            };
            let model = compose_model(&groups, &z.j, &z.c, &e, &z.alpha, &opts)?;
            let errs = model_errors(&entry.model, &z, &e)?;
            println!("{}: rot {:.2} deg, tran {:.2} cm, acc {:.3}", entry.id, errs.rot_deg, errs.tran_cm, errs.acc);
            write(&out.join(format!("{}-init.urdf", entry.id)), emit_urdf(&model))?;
            write(&out.join(format!("{}-init.json", entry.id)), json(&(&z, &e))?)?;
        }
        Cmd::RunIp { scene } => {
            let ds = dataset(&cfg, &scene.dataset)?;
            let entry = pick(&ds, &scene.scene, |e| !e.model.joints.is_empty())?;
            let mat = sample_material(&entry.model, cfg.perception.points, entry.seed).map_err(fail)?;
            let (z0, e0) = initial_params(&entry.model, &mat, &cfg.init, mix_seed(entry.seed, 1, 0))?;
            let mut gt = GroundTruthScene::at_rest(entry.model.clone(), entry.seed);
            let before = episode_metrics(&gt, &z0, &e0);
            let mut bounds = ActionBounds::default();
            bounds.limits = entry.model.joints.iter().map(|j| (j.child, j.limits)).collect::<BTreeMap<_, _>>();
            let ip = IpConfig {
                n_actions: cfg.ip.actions,
                policy: cfg.ip.policy,
                flow: cfg.perception.flow_mode()?,
                opt: cfg.ip.opt,
                bounds,
                seed: mix_seed(entry.seed, 3, 0),
                ..Default::default()
            };
            let ep = run_ip_episode(&mut gt, &z0, &e0, &ip).map_err(fail)?;
            let after = episode_metrics(&gt, &ep.z, &ep.e);
            if let (Some(b), Some(a)) = (before, after) {
                println!("{}: rot {:.2} -> {:.2} deg, tran {:.2} -> {:.2} cm, mIoU {:.3} -> {:.3}",
                    entry.id, b.rot_deg, a.rot_deg, b.tran_cm, a.tran_cm, b.miou, a.miou);
            }
            if let Some(why) = &ep.aborted {
                println!("episode stopped early: {why}");
            }
            let mut log = Vec::new();
            ep.log.write_jsonl(&mut log).map_err(io(&out))?;
            write(&out.join(format!("{}-ip.jsonl", entry.id)), log)?;
            write(&out.join(format!("{}-ip.json", entry.id)), json(&(&ep.z, &ep.e))?)?;
        }
        Cmd::FitResidual { scene, transitions, world } => {
            let ds = dataset(&cfg, &scene.dataset)?;
            let ms = hinge_scene(&ds, &scene, &cfg)?;
            let m = &cfg.manipulation;
            let real = ms.sim.perturbed(&perturbation_for(&m.perturbation, world, cfg.seed));
            // explore with the handle in hand and the hinge partly open
            let lim = ms.entry.model.joints[ms.joint].limits;
            let mut q = vec![0.0; ms.sim.joints.len()];
            q[ms.joint] = lim[0] + 0.3 * (lim[1] - lim[0]);
            let start = grasped_state(&ms.sim, ms.joint, &q, &ms.home.robot.q).map_err(fail)?;
            let data = explore_transitions(&real, &start, transitions, &ExploreConfig::default(), mix_seed(ms.entry.seed, 5, world))
                .map_err(fail)?;
            let net = ResidualNet::new(ms.sim.state_dim(), ms.sim.action_dim(), ms.sim.joints.len(), &m.net, mix_seed(cfg.seed, 6, 0))
                .map_err(fail)?;
            let (net, rep) = train_residual(&net, &ms.sim, &data, &m.train).map_err(fail)?;
            println!("{}: held-out loss {:.3e} -> {:.3e} (epoch {})", ms.entry.id, rep.val_curve[0], rep.best_val, rep.best_epoch);
            let mut bin = Vec::new();
            net.write_binary(&mut bin).map_err(io(&out))?;
            write(&out.join(format!("{}-residual.bin", ms.entry.id)), bin)?;
            write(&out.join(format!("{}-residual.json", ms.entry.id)), json(&rep)?)?;
        }
        Cmd::Plan { scene, residual } => {
            let ds = dataset(&cfg, &scene.dataset)?;
            let ms = hinge_scene(&ds, &scene, &cfg)?;
            let net = match &residual {
                Some(p) => {
                    let f = fs::File::open(p).map_err(io(p))?;
                    Some(ResidualNet::read_binary(BufReader::new(f)).map_err(|e| HarnessError::Config(e.to_string()))?)
                }
                None => None,
            };
            let stepper = net.as_ref().map_or(Stepper::Nominal, Stepper::Augmented);
            let sol = solve(&ms, &stepper, &cfg)?;
            let end = sol.robot.s.last().expect("rollout has a state").object.q[ms.joint];
            println!(
                "{}: goal {:.1} deg, rollout ends at {:.1} deg after {} replans",
                ms.entry.id,
                ms.task.q_goal.to_degrees(),
                end.to_degrees(),
                sol.replans.len()
            );
            write(&out.join(format!("{}-policy.json", ms.entry.id)), sol.policy.to_json())?;
        }
        Cmd::Exec { scene, policy, world } => {
            let ds = dataset(&cfg, &scene.dataset)?;
            let ms = hinge_scene(&ds, &scene, &cfg)?;
            let text = fs::read_to_string(&policy).map_err(io(&policy))?;
            let pol = Policy::from_json(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
            let real = match world {
                Some(w) => ms.sim.perturbed(&perturbation_for(&cfg.manipulation.perturbation, w, cfg.seed)),
                None => ms.sim.clone(),
            };
            let mut buf = TransitionBuffer::new(cfg.manipulation.buffer);
            let o = guided_execute(&pol, &real, &ms.home, &ms.task, &mut buf).map_err(fail)?;
            println!(
                "{}: {} with final error {:.2} deg, {} transitions recorded",
                ms.entry.id,
                if o.success { "success" } else { "failure" },
                o.final_error.to_degrees(),
                o.recorded
            );
            if !buf.is_empty() {
                let mut b = Vec::new();
                buf.write_jsonl(&mut b).map_err(io(&out))?;
                write(&out.join(format!("{}-transitions.jsonl", ms.entry.id)), b)?;
            }
            if !o.success {
                return Err(HarnessError::Experiment(format!("{} not opened", ms.entry.id)));
            }
        }
        Cmd::Eval { experiment } => {
            let kind: ExperimentKind = experiment.parse()?;
            let res = run_experiment(kind, &cfg)?;
            for p in res.write()? {
                println!("wrote {}", p.display());
            }
            print!("{}", String::from_utf8_lossy(&res.summary_csv()?));
        }
        Cmd::Report { input } => {
            let bytes = fs::read(&input).map_err(io(&input))?;
            let summary = if input.extension().is_some_and(|e| e == "json") {
                let res: ExperimentOutput =
                    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("{}: {e}", input.display())))?;
                res.summary_csv()?
            } else {
                let rows: Vec<MetricRow> = read_csv(&bytes)?;
                let mut b = Vec::new();
                write_csv(&aggregate(&rows), &mut b)?;
                b
            };
            std::io::stdout().write_all(&summary).map_err(io(&input))?;
        }
    }
    Ok(())
}

fn solve(ms: &ManipScene, stepper: &Stepper, cfg: &ExperimentConfig) -> Result<SolveOutcome, HarnessError> {
    match two_level_solve(&ms.sim, &ms.entry.model, &ms.task, &ms.home, stepper, &cfg.manipulation.solve) {
        Ok(s) => Ok(s),
        Err(ManipError::MaxReplans { best, .. }) => Ok(*best),
        Err(e) => Err(fail(format!("{}: {e}", ms.entry.id))),
    }
}

