//! Finite-difference verification of tape gradients.

use super::{AdError, Tape, Var};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub analytic: f64,
    pub numeric: f64,
    /// |analytic - numeric| / max(1, |analytic|)
    pub rel_err: f64,
    /// One-sided differences disagree: the function has a kink here.
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub value: f64,
    pub max_rel_err: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn nondifferentiable(&self) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kink)
            .map(|(i, _)| i)
            .collect()
    }
}

fn eval<F>(f: &F, x: &[f64]) -> Result<f64, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs: Vec<Var<'_>> = x.iter().map(|&v| tape.lift(v)).collect::<Result<_, _>>()?;
    let y = f(&tape, &xs);
    tape.status()?;
    Ok(y.value())
}

/// Analytic gradient of `f` at `x` together with its value.
pub fn gradient<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs: Vec<Var<'_>> = x.iter().map(|&v| tape.lift(v)).collect::<Result<_, _>>()?;
    let y = f(&tape, &xs);
    let g = tape.backward(y)?;
    Ok((y.value(), g.wrt_all(&xs)))
}

/// Compare reverse-mode gradients against central differences at `x`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<GradCheckReport, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let (value, analytic) = gradient(&f, x)?;
    let mut coords = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let x0 = probe[i];
        probe[i] = x0 + eps;
        let fp = eval(&f, &probe).map_err(|e| AdError::Probe {
            coord: i,
            source: Box::new(e),
        })?;
        probe[i] = x0 - eps;
        let fm = eval(&f, &probe).map_err(|e| AdError::Probe {
            coord: i,
            source: Box::new(e),
        })?;
        probe[i] = x0;
        let numeric = (fp - fm) / (2.0 * eps);
        let fwd = (fp - value) / eps;
        let bwd = (value - fm) / eps;
        let scale = 1.0f64.max(fwd.abs()).max(bwd.abs());
        let kink = (fwd - bwd).abs() > 1e-3 * scale;
        let a = analytic[i];
        coords.push(CoordCheck {
            analytic: a,
            numeric,
            rel_err: (a - numeric).abs() / 1.0f64.max(a.abs()),
            kink,
        });
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        value,
        max_rel_err,
        coords,
    })
}
