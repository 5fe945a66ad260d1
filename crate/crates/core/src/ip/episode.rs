use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    ip_reward, modeling_loss, optimize_params, select_action, ActionBounds, IpAction, IpError, ModelParams,
    Observation, OptConfig, SelectionPolicy,
};
use crate::harness::metrics::{metric_miou, model_errors};
use crate::par::Exec;
use crate::perception::{sample_material, FlowMode, GroundTruthScene, MaterialPoints};
use crate::scene::TreeStructure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub rot_deg: f64,
    pub tran_cm: f64,
    pub acc: f64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpRecord {
    pub step: usize,
    pub action: IpAction,
    /// Loss of the triggering observation before and after the update.
    pub loss_before: f64,
    pub loss_after: f64,
    pub reward: f64,
    /// Best buffer loss reached by the update.
    pub buffer_loss: f64,
    pub metrics: Option<MetricSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IpEpisodeLog {
    pub records: Vec<IpRecord>,
}

impl IpEpisodeLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, r: IpRecord) {
        debug_assert!(self.records.last().is_none_or(|p| p.step < r.step));
        self.records.push(r);
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, IpError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| IpError::Invalid(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| IpError::Invalid(format!("line {}: {e}", i + 1)))?);
        }
        Ok(IpEpisodeLog { records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpConfig {
    pub n_actions: usize,
    pub policy: SelectionPolicy,
    pub flow: FlowMode,
    pub opt: OptConfig,
    pub bounds: ActionBounds,
    pub seed: u64,
    /// Record metrics against the ground truth after every update.
    pub track_metrics: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for IpConfig {
    fn default() -> Self {
        IpConfig {
            n_actions: 5,
            policy: SelectionPolicy::default(),
            flow: FlowMode::Gt,
            opt: OptConfig::default(),
            bounds: ActionBounds::default(),
            seed: 0,
            track_metrics: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub z: ModelParams,
    pub e: TreeStructure,
    pub log: IpEpisodeLog,
    /// Set when a step failed; `z`, `e` and `log` hold the state before it.
    pub aborted: Option<String>,
}

fn snapshot(scene: &GroundTruthScene, mat: &MaterialPoints, z: &ModelParams, e: &TreeStructure) -> Option<MetricSnapshot> {
    let errs = model_errors(&scene.model, z, e).ok()?;
    let miou = metric_miou(&z.m.hard_labels(), &mat.links).ok()?;
    Some(MetricSnapshot {
        rot_deg: errs.rot_deg,
        tran_cm: errs.tran_cm,
        acc: errs.acc,
        miou,
    })
}

fn step_seed(seed: u64, step: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((step as u64) << 8)
        .wrapping_add(salt)
}

/// Interactive perception on a ground-truth scene: act, observe, refine.
/// The scene's cloud is the material sample of `scene.seed` with as many
/// points as `z0` has segmentation rows, so `z0.m` indexes it directly.
pub fn run_ip_episode(
    scene: &mut GroundTruthScene,
    z0: &ModelParams,
    e0: &TreeStructure,
    cfg: &IpConfig,
) -> Result<EpisodeOutcome, IpError> {
    z0.validate()?;
    let mat = sample_material(&scene.model, z0.m.n, scene.seed)?;
    let mut out = EpisodeOutcome {
        z: z0.clone(),
        e: e0.clone(),
        log: IpEpisodeLog::default(),
        aborted: None,
    };
    let k = z0.k();
    let mut q_links = vec![0.0; k];
    let mut buffer: Vec<Observation> = Vec::new();
    let mut p_t = mat.pose(&scene.model, &scene.q)?;
    for step in 0..cfg.n_actions {
        let res = (|| -> Result<(IpRecord, ModelParams, TreeStructure, Vec<[f64; 3]>), IpError> {
            let a = select_action(
                &out.z,
                &out.e,
                &out.log,
                &q_links,
                cfg.policy,
                &cfg.bounds,
                step_seed(cfg.seed, step, 1),
            )?;
            let applied = scene.actuate(a.link, a.delta).ok_or(IpError::Invalid(format!(
                "link {} has no joint in the scene",
                a.link
            )))?;
            let action = IpAction {
                link: a.link,
                delta: applied,
            };
            let p_next = mat.pose(&scene.model, &scene.q)?;
            let obs = Observation::capture(
                p_t.clone(),
                &p_next,
                action,
                q_links.clone(),
                cfg.flow,
                step_seed(cfg.seed, step, 2),
                cfg.exec,
            )?;
            buffer.push(obs);
            let obs = buffer.last().expect("just pushed");
            let r = optimize_params(&out.z, &out.e, &buffer, &cfg.opt)?;
            let reward = ip_reward(obs, &out.z, &out.e, &r.z, &r.e)?;
            let rec = IpRecord {
                step,
                action,
                loss_before: modeling_loss(obs, &out.z, &out.e)?,
                loss_after: modeling_loss(obs, &r.z, &r.e)?,
                reward,
                buffer_loss: r.best_loss,
                metrics: if cfg.track_metrics {
                    snapshot(scene, &mat, &r.z, &r.e)
                } else {
                    None
                },
            };
            Ok((rec, r.z, r.e, p_next))
        })();
        match res {
            Ok((rec, z, e, p_next)) => {
                q_links[rec.action.link - 1] += rec.action.delta;
                out.log.push(rec);
                out.z = z;
                out.e = e;
                p_t = p_next;
            }
            Err(err) => {
                out.aborted = Some(format!("step {step}: {err}"));
                break;
            }
        }
    }
    Ok(out)
}

/// Metrics of a model against the scene it was built for.
pub fn episode_metrics(scene: &GroundTruthScene, z: &ModelParams, e: &TreeStructure) -> Option<MetricSnapshot> {
    let mat = sample_material(&scene.model, z.m.n, scene.seed).ok()?;
    snapshot(scene, &mat, z, e)
}
