//! Gradient steps and plateau detection. All steps descend; callers pass the
//! gradient of the negated lower bound.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_HAT: f64 = 1e-8;

/// Adam moments for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS_HAT,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(VadError::dim(format!(
                "adam state holds {} entries, params {} and grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
            return Err(VadError::Numeric(format!("non-finite gradient {g}")));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(VadError::dim(format!(
            "sgd on {} params with {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub rel_tol: f64,
    pub patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            rel_tol: 1e-4,
            patience: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauDecision {
    Continue,
    Stop,
}

/// Tracks a maximized objective and signals when it stops improving.
#[derive(Clone, Debug)]
pub struct PlateauState {
    config: PlateauConfig,
    history: Vec<f64>,
    best: Option<f64>,
    since_improvement: usize,
}

impl PlateauState {
    pub fn new(config: PlateauConfig) -> Result<Self> {
        if !(config.rel_tol > 0.0) || config.patience == 0 {
            return Err(VadError::config(format!(
                "plateau needs rel_tol > 0 and patience ≥ 1, got {config:?}"
            )));
        }
        Ok(PlateauState {
            config,
            history: Vec::new(),
            best: None,
            since_improvement: 0,
        })
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Stops once `patience` consecutive values fail to beat the best by more
    /// than `rel_tol · (1 + |best|)`.
    pub fn check(&mut self, value: f64) -> Result<PlateauDecision> {
        if value.is_nan() {
            return Err(VadError::Numeric("NaN objective in plateau check".into()));
        }
        self.history.push(value);
        match self.best {
            Some(best) if value <= best + self.config.rel_tol * (1.0 + best.abs()) => {
                self.since_improvement += 1;
            }
            _ => {
                self.best = Some(value);
                self.since_improvement = 0;
            }
        }
        Ok(if self.since_improvement >= self.config.patience {
            PlateauDecision::Stop
        } else {
            PlateauDecision::Continue
        })
    }
}
