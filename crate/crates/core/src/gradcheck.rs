//! Central finite-difference gradient checks.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose analytic and
/// numeric gradients are both ~0 are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Worst entry found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Input (or parameter name) and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: (String::new(), 0),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, name: &str, i: usize, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = e;
            self.worst = (name.into(), i);
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn eval_leaves<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.var(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out)?.item())
}

/// Checks `∂f/∂inputs` for a scalar function recorded on a tape.
pub fn check_leaves<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.var(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| Ok(tape.grad(v)?.map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec)))
        .collect::<Result<_>>()?;
    let mut report = GradReport::new();
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].values()[i];
            probe[k].values_mut()[i] = x0 + eps;
            let fp = eval_leaves(&f, &probe)?;
            probe[k].values_mut()[i] = x0 - eps;
            let fm = eval_leaves(&f, &probe)?;
            probe[k].values_mut()[i] = x0;
            let name = alloc::format!("input{k}");
            report.record(&name, i, analytic[k][i], (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks `∂f/∂θ` for every entry of every parameter accepted by `select`.
pub fn check_params<F>(store: &ParamStore<f64>, eps: f64, select: impl Fn(&str) -> bool, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    tape.backward(out)?;
    tape.accumulate_param_grads(&mut work)?;
    let names: Vec<String> = store.names().filter(|n| select(n)).map(String::from).collect();
    let mut report = GradReport::new();
    let mut probe = store.clone();
    for name in &names {
        let analytic = work.get(name)?.grad.clone().unwrap_or_default();
        for i in 0..store.get(name)?.len() {
            let x0 = store.get(name)?.values()[i];
            probe.get_mut(name)?.values_mut()[i] = x0 + eps;
            let mut t = Tape::new();
            let v = f(&mut t, &probe)?;
            let fp = t.value(v)?.item();
            probe.get_mut(name)?.values_mut()[i] = x0 - eps;
            let mut t = Tape::new();
            let v = f(&mut t, &probe)?;
            let fm = t.value(v)?.item();
            probe.get_mut(name)?.values_mut()[i] = x0;
            report.record(name, i, analytic.get(i).copied().unwrap_or(0.0), (fp - fm) / (2.0 * eps));
        }
    }
    Ok(report)
}
