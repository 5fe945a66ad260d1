use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augmented_step, nominal_step, residual_input, ResidualError, ResidualNet, Transition};
use crate::autodiff::Tape;
use crate::diffsim::SimScene;
use crate::par::Exec;

/// Mean Euclidean one-step error of the augmented model over `batch`.
pub fn augmented_loss(scene: &SimScene, net: &ResidualNet, batch: &[Transition]) -> Result<f64, ResidualError> {
    if batch.is_empty() {
        return Err(ResidualError::Invalid("empty batch".into()));
    }
    let mut sum = 0.0;
    for t in batch {
        let (pred, _) = augmented_step(scene, net, &t.s, &t.a, t.grasp)?;
        sum += one_step_error(&pred.to_vec(), &t.next.to_vec());
    }
    Ok(sum / batch.len() as f64)
}

/// The same error for the nominal simulator alone.
pub fn nominal_loss(scene: &SimScene, batch: &[Transition]) -> Result<f64, ResidualError> {
    if batch.is_empty() {
        return Err(ResidualError::Invalid("empty batch".into()));
    }
    let mut sum = 0.0;
    for t in batch {
        let (pred, _) = nominal_step(scene, &t.s, &t.a, t.grasp)?;
        sum += one_step_error(&pred.to_vec(), &t.next.to_vec());
    }
    Ok(sum / batch.len() as f64)
}

fn one_step_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub val_fraction: f64,
    pub min_samples: usize,
    /// Abort when the epoch training loss exceeds this multiple of the
    /// initial one.
    pub divergence: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 32,
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            val_fraction: 0.1,
            min_samples: 10,
            divergence: 1e3,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_curve: Vec<f64>,
    /// Entry 0 is the input net.
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub n_train: usize,
    pub n_val: usize,
}

struct Sample {
    x: Vec<f64>,
    target: Vec<f64>,
}

fn samples(scene: &SimScene, data: &[Transition]) -> Result<Vec<Sample>, ResidualError> {
    data.iter()
        .map(|t| {
            t.validate()?;
            let (nom, _) = nominal_step(scene, &t.s, &t.a, t.grasp)?;
            let target = t.next.to_vec().iter().zip(nom.to_vec()).map(|(r, n)| r - n).collect();
            Ok(Sample {
                x: residual_input(&t.s, t.grasp, &t.a, &nom),
                target,
            })
        })
        .collect()
}

fn mean_std(rows: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            mean[i] += r[i] / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            var[i] += (r[i] - mean[i]).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

fn eval_loss(net: &ResidualNet, set: &[&Sample]) -> f64 {
    let sum: f64 = set
        .iter()
        .map(|s| one_step_error(&net.forward(&s.x), &s.target))
        .sum();
    sum / set.len().max(1) as f64
}

const CHUNK: usize = 8;

/// Summed loss and gradient over `batch`, split into fixed chunks that each
/// get their own tape and are reduced in order.
fn batch_grad(net: &ResidualNet, batch: &[&Sample], exec: Exec) -> Result<(f64, Vec<f64>), ResidualError> {
    let chunks: Vec<&[&Sample]> = batch.chunks(CHUNK).collect();
    let parts = exec.map(&chunks, |chunk| {
        let tape = Tape::with_capacity(chunk.len() * 4 * net.num_params() / 64 + net.num_params());
        let p = tape.vars(&net.params);
        let losses: Vec<_> = chunk
            .iter()
            .map(|s| {
                let out = net.forward_params(&tape, &p, &s.x);
                let err: Vec<_> = out.iter().zip(&s.target).map(|(&o, &t)| o - t).collect();
                tape.norm(&err)
            })
            .collect();
        let total = tape.sum(&losses);
        tape.status()?;
        let g = tape.backward(total)?;
        Ok::<_, ResidualError>((total.value(), g.wrt_all(&p)))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Fit the residual to the buffer with Adam on the one-step error. Returns
/// the weights with the best validation loss seen, the input net included.
/// A net whose output layer is still zero first has its normalization fitted
/// to the data; that does not change what it predicts.
pub fn train_residual(
    net: &ResidualNet,
    scene: &SimScene,
    data: &[Transition],
    cfg: &TrainConfig,
) -> Result<(ResidualNet, TrainReport), ResidualError> {
    if data.len() < cfg.min_samples.max(2) {
        return Err(ResidualError::Invalid(format!(
            "{} transitions, need at least {}",
            data.len(),
            cfg.min_samples.max(2)
        )));
    }
    if cfg.batch == 0 || !(cfg.lr >= 0.0) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(ResidualError::Invalid("batch, lr or val_fraction out of range".into()));
    }
    if !net.is_finite() {
        return Err(ResidualError::NonFinite("input net".into()));
    }
    // dimensions are checked by the first nominal step below
    super::step::augmented_step(scene, net, &data[0].s, &data[0].a, data[0].grasp)?;
    let all = samples(scene, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((all.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, all.len() - 1);
    let val: Vec<&Sample> = idx[..n_val].iter().map(|&i| &all[i]).collect();
    let mut train: Vec<&Sample> = idx[n_val..].iter().map(|&i| &all[i]).collect();

    let mut net = net.clone();
    if net.is_zero_output() {
        let xs: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
        let (m, sd) = mean_std(&xs, net.input_dim());
        net.in_mean = m;
        net.in_std = sd.into_iter().map(|v| if v > 1e-9 { v } else { 1.0 }).collect();
        // root mean square, so a constant residual still gets a scale
        let ts: Vec<&[f64]> = train.iter().map(|s| s.target.as_slice()).collect();
        let (m, sd) = mean_std(&ts, net.state_dim);
        let rms: Vec<f64> = m.iter().zip(&sd).map(|(a, b)| (a * a + b * b).sqrt()).collect();
        let top = rms.iter().cloned().fold(0.0, f64::max);
        net.out_scale = rms.into_iter().map(|v| v.max(1e-3 * top).max(1e-12)).collect();
    }

    let mut best = (eval_loss(&net, &val), 0usize, net.clone());
    let mut val_curve = vec![best.0];
    let initial_train = eval_loss(&net, &train);
    let mut train_curve = vec![initial_train];
    let mut m = vec![0.0; net.params.len()];
    let mut v = vec![0.0; net.params.len()];
    let mut t = 0i32;
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in train.chunks(cfg.batch) {
            let (l, g) = batch_grad(&net, batch, cfg.exec)?;
            sum += l;
            t += 1;
            let (b1, b2) = (cfg.beta1, cfg.beta2);
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let scale = 1.0 / batch.len() as f64;
            for i in 0..net.params.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                net.params[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
        }
        let epoch_loss = sum / train.len() as f64;
        train_curve.push(epoch_loss);
        if !epoch_loss.is_finite() || (initial_train > 1e-12 && epoch_loss > cfg.divergence * initial_train) {
            return Err(ResidualError::Diverged {
                epoch,
                loss: epoch_loss,
                initial: initial_train,
            });
        }
        let vl = eval_loss(&net, &val);
        val_curve.push(vl);
        if vl < best.0 {
            best = (vl, epoch, net.clone());
        }
    }
    let (best_val, best_epoch, net) = best;
    Ok((
        net,
        TrainReport {
            train_curve,
            val_curve,
            best_epoch,
            best_val,
            n_train: train.len(),
            n_val: val.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffsim::{Perturbation, SimState};
    use crate::residual::test_support::{door_grasped, door_sim};
    use crate::residual::{explore_transitions, ExploreConfig, NetConfig};

    fn offset(scene: &SimScene, t: &Transition, c: &[f64]) -> Transition {
        let (nom, _) = nominal_step(scene, &t.s, &t.a, t.grasp).unwrap();
        let v: Vec<f64> = nom.to_vec().iter().zip(c).map(|(x, d)| x + d).collect();
        Transition {
            next: SimState::from_vec(&v, scene.joints.len(), nom.attachment).unwrap(),
            ..t.clone()
        }
    }

    fn fresh(scene: &SimScene) -> ResidualNet {
        ResidualNet::new(scene.state_dim(), scene.action_dim(), scene.joints.len(), &NetConfig::default(), 1).unwrap()
    }

    fn data(scene: &SimScene, n: usize, seed: u64) -> Vec<Transition> {
        let start = door_grasped(scene, 0.2);
        explore_transitions(scene, &start, n, &ExploreConfig::default(), seed).unwrap()
    }

    #[test]
    fn loss_is_mean_euclidean_error() {
        let scene = door_sim();
        let d = data(&scene, 2, 0);
        let net = fresh(&scene);
        assert_eq!(augmented_loss(&scene, &net, &d).unwrap(), 0.0);
        let mut c = vec![0.0; 8];
        c[0] = 3.0;
        c[1] = 4.0;
        let a = offset(&scene, &d[0], &c);
        assert!((augmented_loss(&scene, &net, std::slice::from_ref(&a)).unwrap() - 5.0).abs() < 1e-12);
        let both = [a, d[1].clone()];
        assert!((augmented_loss(&scene, &net, &both).unwrap() - 2.5).abs() < 1e-12);
        assert!(augmented_loss(&scene, &net, &[]).is_err());
        assert!(nominal_loss(&scene, &[]).is_err());
    }

    #[test]
    fn matched_world_learns_nothing() {
        let scene = door_sim();
        let d = data(&scene, 200, 1);
        let cfg = TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let (net, rep) = train_residual(&fresh(&scene), &scene, &d, &cfg).unwrap();
        assert!(rep.best_val < 1e-6);
        let scale = d.iter().flat_map(|t| t.s.to_vec()).map(f64::abs).fold(0.0, f64::max);
        for t in &d {
            let (nom, _) = nominal_step(&scene, &t.s, &t.a, t.grasp).unwrap();
            let r = net.forward(&residual_input(&t.s, t.grasp, &t.a, &nom));
            assert!(r.iter().all(|v| v.abs() < 1e-3 * scale));
        }
    }

    #[test]
    fn constant_offset_is_learned() {
        let scene = door_sim();
        let c = [0.01, -0.02, 0.005, 0.0, 0.01, 0.03, -0.01, 0.02];
        let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let train: Vec<Transition> = data(&scene, 300, 2).iter().map(|t| offset(&scene, t, &c)).collect();
        let held: Vec<Transition> = data(&scene, 100, 3).iter().map(|t| offset(&scene, t, &c)).collect();
        let cfg = TrainConfig {
            epochs: 100,
            ..Default::default()
        };
        let (net, rep) = train_residual(&fresh(&scene), &scene, &train, &cfg).unwrap();
        let l = augmented_loss(&scene, &net, &held).unwrap();
        assert!(l < 0.1 * cn, "{l} vs {cn}");
        // best-iterate return: never worse than the input net
        assert!(rep.best_val <= rep.val_curve[0]);
        assert_eq!(rep.val_curve.len(), 101);
    }

    #[test]
    fn training_is_deterministic_across_executors() {
        let scene = door_sim();
        let real = scene.perturbed(&Perturbation::default());
        let d = data(&real, 120, 4);
        let mut cfg = TrainConfig {
            epochs: 3,
            exec: Exec::Sequential,
            ..Default::default()
        };
        let a = train_residual(&fresh(&scene), &scene, &d, &cfg).unwrap();
        cfg.exec = Exec::Parallel;
        let b = train_residual(&fresh(&scene), &scene, &d, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let scene = door_sim();
        let d = data(&scene, 5, 5);
        assert!(train_residual(&fresh(&scene), &scene, &d, &TrainConfig::default()).is_err());
        let d = data(&scene, 20, 5);
        let mut net = fresh(&scene);
        net.params[0] = f64::NAN;
        assert!(train_residual(&net, &scene, &d, &TrainConfig::default()).is_err());
    }
}
