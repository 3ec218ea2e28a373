//! Built-in kernels, environment maps and rewards, registered by name so
//! that models can be described in configuration files.

use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Action, EnvMap, Kernel, KernelMap, RewardMap};

/// A named map plus its parameters, as it appears in a config file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Named {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

impl Named {
    pub fn new(name: &str, params: Value) -> Self {
        Self {
            name: name.to_string(),
            params,
        }
    }
}

fn params<T: for<'de> Deserialize<'de>>(n: &Named) -> Result<T> {
    let v = if n.params.is_null() {
        Value::Object(Default::default())
    } else {
        n.params.clone()
    };
    serde_json::from_value(v).map_err(|e| Error::Config(format!("parameters of {:?}: {e}", n.name)))
}

fn check_kernel(rows: &[Vec<f64>], states: usize, what: &str) -> Result<Kernel> {
    if rows.len() != states || rows.iter().any(|r| r.len() != states) {
        return Err(Error::Config(format!("{what} must be {states}x{states}")));
    }
    Ok(Kernel::from_rows(rows.to_vec()))
}

/// Builds a kernel map from its catalog name.
///
/// | name | params | kernel |
/// |---|---|---|
/// | `identity` | – | `I` |
/// | `constant` | `matrix` | fixed matrix |
/// | `per-action` | `matrices` | `matrices[round(a[0])]` |
/// | `mixture` | `matrices` | `sum_k a_k matrices[k]` |
/// | `per-time` | `matrices` | `matrices[min(t, len-1)]` |
/// | `context-logistic` | `alpha, beta, gamma, eta, kappa` | two states, see [`LogisticKernel`] |
pub fn kernel(n: &Named, states: usize) -> Result<Arc<dyn KernelMap>> {
    #[derive(Deserialize)]
    struct One {
        matrix: Vec<Vec<f64>>,
    }
    #[derive(Deserialize)]
    struct Many {
        matrices: Vec<Vec<Vec<f64>>>,
    }
    let many = |n: &Named| -> Result<Vec<Kernel>> {
        let p: Many = params(n)?;
        if p.matrices.is_empty() {
            return Err(Error::Config(format!("{} needs at least one matrix", n.name)));
        }
        p.matrices
            .iter()
            .map(|m| check_kernel(m, states, "matrix"))
            .collect()
    };
    Ok(match n.name.as_str() {
        "identity" => Arc::new(ConstantKernel(Kernel::identity(states))),
        "constant" => {
            let p: One = params(n)?;
            Arc::new(ConstantKernel(check_kernel(&p.matrix, states, "matrix")?))
        }
        "per-action" => Arc::new(PerActionKernel(many(n)?)),
        "mixture" => Arc::new(MixtureKernel(many(n)?)),
        "per-time" => Arc::new(PerTimeKernel(many(n)?)),
        "context-logistic" => {
            if states != 2 {
                return Err(Error::Config("context-logistic kernel needs exactly 2 states".into()));
            }
            Arc::new(params::<LogisticKernel>(n)?)
        }
        other => return Err(Error::Config(format!("unknown kernel {other:?}"))),
    })
}

/// Builds an environment map from its catalog name.
///
/// `none` (empty context), `constant` (`c' = c`), and `linear-measure`
/// (`c'_k = (1-lambda) c_k + lambda sum_j weights[k][j] m'_j`).
pub fn env(n: &Named, states: usize, context_dim: usize) -> Result<Arc<dyn EnvMap>> {
    Ok(match n.name.as_str() {
        "none" => {
            if context_dim != 0 {
                return Err(Error::Config("env `none` requires context_dim = 0".into()));
            }
            Arc::new(ConstantEnv)
        }
        "constant" => Arc::new(ConstantEnv),
        "linear-measure" => {
            let p: LinearMeasureEnv = params(n)?;
            if p.weights.len() != context_dim || p.weights.iter().any(|w| w.len() != states) {
                return Err(Error::Config(format!(
                    "linear-measure weights must be {context_dim}x{states}"
                )));
            }
            Arc::new(p)
        }
        other => return Err(Error::Config(format!("unknown environment map {other:?}"))),
    })
}

/// Builds a scalar reward from its catalog name.
pub fn scalar_reward(n: &Named, states: usize, context_dim: usize) -> Result<ScalarReward> {
    #[derive(Deserialize)]
    struct Value_ {
        value: f64,
    }
    #[derive(Deserialize)]
    struct State {
        state: usize,
    }
    #[derive(Deserialize)]
    struct Linear {
        #[serde(default)]
        measure: Vec<f64>,
        #[serde(default)]
        context: Vec<f64>,
    }
    #[derive(Deserialize)]
    struct Quadratic {
        state: usize,
        target: f64,
        coef: f64,
    }
    let check_state = |s: usize| {
        if s < states {
            Ok(s)
        } else {
            Err(Error::Config(format!("reward refers to state {s} of {states}")))
        }
    };
    Ok(match n.name.as_str() {
        "zero" => ScalarReward::Constant { value: 0.0 },
        "constant" => ScalarReward::Constant {
            value: params::<Value_>(n)?.value,
        },
        "weight" => ScalarReward::Weight {
            state: check_state(params::<State>(n)?.state)?,
        },
        "linear" => {
            let p: Linear = params(n)?;
            if (!p.measure.is_empty() && p.measure.len() != states)
                || (!p.context.is_empty() && p.context.len() != context_dim)
            {
                return Err(Error::Config("linear reward coefficients have the wrong length".into()));
            }
            ScalarReward::Linear {
                measure: p.measure,
                context: p.context,
            }
        }
        "quadratic" => {
            let p: Quadratic = params(n)?;
            ScalarReward::Quadratic {
                state: check_state(p.state)?,
                target: p.target,
                coef: p.coef,
            }
        }
        "sum-context" => ScalarReward::SumContext,
        other => return Err(Error::Config(format!("unknown reward {other:?}"))),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantKernel(pub Kernel);

impl KernelMap for ConstantKernel {
    fn eval(&self, _t: usize, _a: &Action, _c: &[f64]) -> Kernel {
        self.0.clone()
    }
}

/// Selects a matrix by the (rounded) first action coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct PerActionKernel(pub Vec<Kernel>);

impl KernelMap for PerActionKernel {
    fn eval(&self, _t: usize, a: &Action, _c: &[f64]) -> Kernel {
        let i = a.0.first().map(|x| x.round().max(0.0) as usize).unwrap_or(0);
        self.0[i.min(self.0.len() - 1)].clone()
    }
}

/// Convex combination of matrices weighted by a simplex action.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureKernel(pub Vec<Kernel>);

impl KernelMap for MixtureKernel {
    fn eval(&self, _t: usize, a: &Action, _c: &[f64]) -> Kernel {
        let s = self.0[0].size();
        let mut k = Kernel::from_rows(vec![vec![0.0; s]; s]);
        for (w, m) in a.0.iter().zip(&self.0) {
            for i in 0..s {
                for j in 0..s {
                    k.set(i, j, k.get(i, j) + w * m.get(i, j));
                }
            }
        }
        k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerTimeKernel(pub Vec<Kernel>);

impl KernelMap for PerTimeKernel {
    fn eval(&self, t: usize, _a: &Action, _c: &[f64]) -> Kernel {
        self.0[t.min(self.0.len() - 1)].clone()
    }

    fn time_dependent(&self) -> bool {
        self.0.len() > 1
    }
}

/// Two-state kernel `[[1-p, p], [q, 1-q]]` with
/// `p = sigmoid(alpha + beta c_0 + kappa a_0)` and `q = sigmoid(gamma + eta c_0)`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct LogisticKernel {
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub kappa: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl KernelMap for LogisticKernel {
    fn eval(&self, _t: usize, a: &Action, c: &[f64]) -> Kernel {
        let c0 = c.first().copied().unwrap_or(0.0);
        let a0 = a.0.first().copied().unwrap_or(0.0);
        let p = sigmoid(self.alpha + self.beta * c0 + self.kappa * a0);
        let q = sigmoid(self.gamma + self.eta * c0);
        Kernel::from_rows(vec![vec![1.0 - p, p], vec![q, 1.0 - q]])
    }
}

/// `c' = c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantEnv;

impl EnvMap for ConstantEnv {
    fn eval(&self, c: &[f64], _prev: &[f64], _next: &[f64], _a: &Action, _t: usize) -> Vec<f64> {
        c.to_vec()
    }
}

/// Exponential relaxation of the context towards a linear read-out of the
/// new measure.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct LinearMeasureEnv {
    pub lambda: f64,
    pub weights: Vec<Vec<f64>>,
}

impl EnvMap for LinearMeasureEnv {
    fn eval(&self, c: &[f64], _prev: &[f64], next: &[f64], _a: &Action, _t: usize) -> Vec<f64> {
        self.weights
            .iter()
            .zip(c)
            .map(|(w, ck)| {
                let target: f64 = w.iter().zip(next).map(|(a, b)| a * b).sum();
                (1.0 - self.lambda) * ck + self.lambda * target
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScalarReward {
    Constant { value: f64 },
    Weight { state: usize },
    Linear { measure: Vec<f64>, context: Vec<f64> },
    /// `coef * (m_state - target)^2`
    Quadratic { state: usize, target: f64, coef: f64 },
    SumContext,
}

impl ScalarReward {
    pub fn eval(&self, m: &[f64], c: &[f64]) -> f64 {
        match self {
            ScalarReward::Constant { value } => *value,
            ScalarReward::Weight { state } => m[*state],
            ScalarReward::Linear { measure, context } => {
                measure.iter().zip(m).map(|(a, b)| a * b).sum::<f64>()
                    + context.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
            }
            ScalarReward::Quadratic { state, target, coef } => coef * (m[*state] - target).powi(2),
            ScalarReward::SumContext => c.iter().sum(),
        }
    }
}

/// Running and final reward given separately.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitReward {
    pub running: ScalarReward,
    pub terminal: ScalarReward,
}

impl SplitReward {
    pub fn same(r: ScalarReward) -> Self {
        Self {
            running: r.clone(),
            terminal: r,
        }
    }
}

impl RewardMap for SplitReward {
    fn running(&self, _t: usize, m: &[f64], c: &[f64]) -> f64 {
        self.running.eval(m, c)
    }

    fn terminal(&self, m: &[f64], c: &[f64]) -> f64 {
        self.terminal.eval(m, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn builds_catalog_entries() {
        let k = kernel(&Named::new("constant", json!({"matrix": [[0.5, 0.5], [0.2, 0.8]]})), 2).unwrap();
        assert_eq!(k.eval(0, &Action::scalar(0.0), &[]).get(1, 1), 0.8);
        let k = kernel(
            &Named::new("per-action", json!({"matrices": [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]})),
            2,
        )
        .unwrap();
        assert_eq!(k.eval(0, &Action::scalar(1.0), &[]).get(0, 1), 1.0);
        let k = kernel(
            &Named::new("mixture", json!({"matrices": [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]})),
            2,
        )
        .unwrap();
        assert_eq!(k.eval(0, &Action(vec![0.25, 0.75]), &[]).get(0, 0), 0.25);
        assert!(kernel(&Named::new("bogus", Value::Null), 2).is_err());
        assert!(kernel(&Named::new("constant", json!({"matrix": [[1.0]]})), 2).is_err());
    }

    #[test]
    fn logistic_kernel_is_stochastic() {
        let k = LogisticKernel {
            alpha: 0.3,
            beta: -1.0,
            gamma: -0.5,
            eta: 2.0,
            kappa: 0.0,
        };
        let m = k.eval(0, &Action::scalar(0.0), &[0.7]);
        assert!(m.first_bad_row().is_none());
    }

    #[test]
    fn rewards() {
        let r = scalar_reward(&Named::new("quadratic", json!({"state": 0, "target": 0.5, "coef": -2.0})), 2, 0).unwrap();
        assert_eq!(r.eval(&[1.0, 0.0], &[]), -0.5);
        let r = scalar_reward(&Named::new("sum-context", Value::Null), 2, 2).unwrap();
        assert_eq!(r.eval(&[1.0, 0.0], &[1.0, 2.0]), 3.0);
        assert!(scalar_reward(&Named::new("weight", json!({"state": 5})), 2, 0).is_err());
    }
}
