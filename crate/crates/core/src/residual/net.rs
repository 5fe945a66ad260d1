use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ResidualError;
use crate::autodiff::{Scalar, Tape, Var};

const MAGIC: &[u8; 4] = b"RNET";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    /// Linear hidden layers; used to check Jacobian assembly analytically.
    Identity,
}

/// Which state components the residual may correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMask {
    #[default]
    Full,
    VelocityOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub mask: ResidualMask,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            mask: ResidualMask::Full,
        }
    }
}

/// Fully connected residual predictor. The input is the current state, the
/// grasp flag, the action and the nominal next state; the output is added to
/// the nominal next state. Inputs are standardized and outputs rescaled with
/// per-dimension statistics stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Object joints at the front of the state vector.
    pub n_obj: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub mask: ResidualMask,
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_scale: Vec<f64>,
    /// Per layer: weights (out × in, row-major) then biases.
    pub params: Vec<f64>,
}

impl ResidualNet {
    /// Hidden layers get uniform Glorot weights from `seed`; the output layer
    /// starts at zero so a fresh net is exactly the nominal simulator.
    pub fn new(state_dim: usize, action_dim: usize, n_obj: usize, cfg: &NetConfig, seed: u64) -> Result<Self, ResidualError> {
        if state_dim == 0 || action_dim == 0 || 2 * n_obj > state_dim {
            return Err(ResidualError::Invalid(format!(
                "state dim {state_dim}, action dim {action_dim}, {n_obj} object joints"
            )));
        }
        if cfg.hidden.iter().any(|&h| h == 0) {
            return Err(ResidualError::Invalid("hidden layer of width 0".into()));
        }
        let mut net = ResidualNet {
            state_dim,
            action_dim,
            n_obj,
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
            mask: cfg.mask,
            in_mean: Vec::new(),
            in_std: Vec::new(),
            out_scale: vec![1.0; state_dim],
            params: Vec::new(),
        };
        let d = net.input_dim();
        net.in_mean = vec![0.0; d];
        net.in_std = vec![1.0; d];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = net.sizes();
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                net.params.push(if l == last { 0.0 } else { rng.gen_range(-bound..bound) });
            }
            net.params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        2 * self.state_dim + self.action_dim + 1
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(&self.hidden);
        s.push(self.state_dim);
        s
    }

    pub fn num_params(&self) -> usize {
        self.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn output_gain(&self) -> Vec<f64> {
        (0..self.state_dim)
            .map(|i| {
                let vel = (self.n_obj..2 * self.n_obj).contains(&i) || i >= 2 * self.n_obj + self.robot_dof();
                match self.mask {
                    ResidualMask::VelocityOnly if !vel => 0.0,
                    _ => self.out_scale[i],
                }
            })
            .collect()
    }

    fn robot_dof(&self) -> usize {
        (self.state_dim - 2 * self.n_obj) / 2
    }

    /// True when the output layer is all zeros, so the net predicts no
    /// residual whatever its input statistics.
    pub fn is_zero_output(&self) -> bool {
        let sizes = self.sizes();
        let w = sizes[sizes.len() - 2];
        let tail = w * self.state_dim + self.state_dim;
        self.params[self.params.len() - tail..].iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.in_mean)
            .chain(&self.in_std)
            .chain(&self.out_scale)
            .all(|x| x.is_finite())
    }

    fn standardize<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    /// Residual for input `x` with the weights as constants.
    pub fn forward<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.input_dim());
        let sizes = self.sizes();
        let mut h = self.standardize(x);
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (wts, bias) = self.params[off..off + n_in * n_out + n_out].split_at(n_in * n_out);
            off += n_in * n_out + n_out;
            let hidden = l + 2 < sizes.len();
            h = (0..n_out)
                .map(|j| {
                    let z = S::dot_const(&h, &wts[j * n_in..(j + 1) * n_in]) + bias[j];
                    if hidden && self.activation == Activation::Tanh {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h.iter().zip(self.output_gain()).map(|(&v, g)| v * g).collect()
    }

    /// Residual for a constant input with the weights as tape variables
    /// (laid out like `params`).
    pub fn forward_params<'t>(&self, tape: &'t Tape, params: &[Var<'t>], x: &[f64]) -> Vec<Var<'t>> {
        debug_assert_eq!(params.len(), self.params.len());
        let sizes = self.sizes();
        let z0 = self.standardize(x);
        let mut h: Vec<Var<'t>> = Vec::new();
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let wts = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let hidden = l + 2 < sizes.len();
            h = (0..n_out)
                .map(|j| {
                    let row = &wts[j * n_in..(j + 1) * n_in];
                    let z = if l == 0 { tape.dot_const(row, &z0) } else { tape.dot(row, &h) } + bias[j];
                    if hidden && self.activation == Activation::Tanh {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        h.iter().zip(self.output_gain()).map(|(&v, g)| v * g).collect()
    }

    /// Versioned little-endian binary: header with dimensions and layer
    /// sizes, then the normalization vectors and the parameters as f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let u = |x: u32, w: &mut W| w.write_all(&x.to_le_bytes());
        u(VERSION, &mut w)?;
        u(self.state_dim as u32, &mut w)?;
        u(self.action_dim as u32, &mut w)?;
        u(self.n_obj as u32, &mut w)?;
        u(self.hidden.len() as u32, &mut w)?;
        for &h in &self.hidden {
            u(h as u32, &mut w)?;
        }
        let act = match self.activation {
            Activation::Tanh => 0u8,
            Activation::Identity => 1,
        };
        let mask = match self.mask {
            ResidualMask::Full => 0u8,
            ResidualMask::VelocityOnly => 1,
        };
        w.write_all(&[act, mask])?;
        for v in self.in_mean.iter().chain(&self.in_std).chain(&self.out_scale).chain(&self.params) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, ResidualError> {
        let fmt = |m: &str| ResidualError::Format(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("not a residual net file"));
        }
        let u = |r: &mut R| -> Result<usize, ResidualError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u(&mut r)?;
        if version != VERSION as usize {
            return Err(ResidualError::Format(format!("unsupported version {version}")));
        }
        let state_dim = u(&mut r)?;
        let action_dim = u(&mut r)?;
        let n_obj = u(&mut r)?;
        let n_hidden = u(&mut r)?;
        if n_hidden > 64 {
            return Err(fmt("implausible layer count"));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(u(&mut r)?);
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags).map_err(|_| fmt("truncated header"))?;
        let activation = match flags[0] {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            a => return Err(ResidualError::Format(format!("unknown activation {a}"))),
        };
        let mask = match flags[1] {
            0 => ResidualMask::Full,
            1 => ResidualMask::VelocityOnly,
            m => return Err(ResidualError::Format(format!("unknown mask {m}"))),
        };
        let cfg = NetConfig {
            hidden,
            activation,
            mask,
        };
        let mut net = ResidualNet::new(state_dim, action_dim, n_obj, &cfg, 0)?;
        let d = net.input_dim();
        let mut f = |n: usize| -> Result<Vec<f64>, ResidualError> {
            let mut out = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| fmt("truncated body"))?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        net.in_mean = f(d)?;
        net.in_std = f(d)?;
        net.out_scale = f(state_dim)?;
        net.params = f(net.num_params())?;
        if !net.is_finite() {
            return Err(fmt("non-finite weights"));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(seed: u64) -> ResidualNet {
        let mut n = ResidualNet::new(8, 3, 1, &NetConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in &mut n.params {
            *p = rng.gen_range(-0.5..0.5);
        }
        n
    }

    #[test]
    fn fresh_net_predicts_zero() {
        let n = ResidualNet::new(8, 3, 1, &NetConfig::default(), 3).unwrap();
        assert_eq!(n.num_params(), n.params.len());
        assert_eq!(n.num_params(), 20 * 64 + 64 + 64 * 64 + 64 + 64 * 8 + 8);
        assert!(n.is_zero_output());
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        assert!(n.forward(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_and_float_forward_agree() {
        let n = net(5);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        let plain = n.forward(&x);
        let tape = Tape::new();
        let p = tape.vars(&n.params);
        let on_tape = n.forward_params(&tape, &p, &x);
        for (a, b) in plain.iter().zip(&on_tape) {
            assert!((a - b.value()).abs() < 1e-12);
        }
        let xv = tape.vars(&x);
        let with_input = n.forward(&xv);
        for (a, b) in plain.iter().zip(&with_input) {
            assert!((a - b.value()).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_mask_zeroes_positions() {
        let mut n = net(6);
        n.mask = ResidualMask::VelocityOnly;
        let out = n.forward(&vec![0.4; 20]);
        // layout: q_o, q̇_o, q_r(3), q̇_r(3)
        for i in [0, 2, 3, 4] {
            assert_eq!(out[i], 0.0);
        }
        assert!(out[1] != 0.0 && out[7] != 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let mut n = net(7);
        n.in_mean[3] = 0.25;
        n.out_scale[2] = 0.01;
        let mut bytes = Vec::new();
        n.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"RNET");
        let back = ResidualNet::read_binary(&bytes[..]).unwrap();
        assert_eq!(back, n);
        assert!(ResidualNet::read_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(ResidualNet::read_binary(&bad[..]).is_err());
    }
}
