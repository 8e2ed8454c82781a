//! Integrate-and-fire neuron dynamics over discrete time steps, and the
//! average pooling that collapses a current train to one real vector.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{MsgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// After a spike the membrane is set to `v_rest` regardless of overshoot.
    FixedReset,
    /// After a spike the threshold is subtracted from the membrane.
    SubtractionReset,
}

#[derive(Debug, Clone, Copy)]
pub struct NeuronConfig {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub v_rest: f64,
    /// Multiplicative membrane decay per step; 1.0 is the pure
    /// integrate-and-fire neuron, values below 1 add leak.
    pub leak: f64,
    pub reset_mode: ResetMode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            v_threshold: 1.0,
            v_reset: 0.0,
            v_rest: 0.0,
            leak: 1.0,
            reset_mode: ResetMode::FixedReset,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_reset < self.v_threshold) {
            return Err(MsgError::Config(format!(
                "v_reset ({}) must be below v_threshold ({})",
                self.v_reset, self.v_threshold
            )));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(MsgError::Config(format!("leak ({}) must lie in (0, 1]", self.leak)));
        }
        Ok(())
    }
}

/// Binary spike matrix, shape (time steps, feature width); entries are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    pub bits: Array2<f64>,
}

impl SpikeTrain {
    pub fn time_steps(&self) -> usize {
        self.bits.nrows()
    }

    pub fn spike_count(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }
}

/// Real-valued incoming current, shape (time steps, feature width).
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrain {
    pub values: Array2<f64>,
}

/// One integrate/fire/reset step on a vector of neurons; returns the post-reset
/// membrane and the binary spike vector.
pub fn neuron_step(
    v: ArrayView1<'_, f64>,
    i: ArrayView1<'_, f64>,
    cfg: &NeuronConfig,
) -> (Array1<f64>, Array1<f64>) {
    debug_assert_eq!(v.len(), i.len());
    let mut v_next = Array1::zeros(v.len());
    let mut spikes = Array1::zeros(v.len());
    for j in 0..v.len() {
        let integrated = cfg.leak * v[j] + i[j];
        let s = if integrated - cfg.v_threshold >= 0.0 { 1.0 } else { 0.0 };
        spikes[j] = s;
        v_next[j] = match cfg.reset_mode {
            ResetMode::FixedReset => (1.0 - s) * integrated + s * cfg.v_rest,
            ResetMode::SubtractionReset => integrated - cfg.v_threshold * s,
        };
    }
    (v_next, spikes)
}

/// Run the neuron over a whole current train; the membrane starts at zero.
pub fn run_neuron(current: &CurrentTrain, cfg: &NeuronConfig) -> SpikeTrain {
    let (t, w) = current.values.dim();
    let mut membrane = Array1::zeros(w);
    let mut bits = Array2::zeros((t, w));
    for step in 0..t {
        let (v_next, spikes) = neuron_step(membrane.view(), current.values.row(step), cfg);
        membrane = v_next;
        bits.row_mut(step).assign(&spikes);
    }
    SpikeTrain { bits }
}

/// Column means over the time axis.
pub fn avg_pool(current: &CurrentTrain) -> Array1<f64> {
    avg_pool_matrix(current.values.view())
}

pub fn avg_pool_matrix(values: ArrayView2<'_, f64>) -> Array1<f64> {
    let t = values.nrows() as f64;
    values.sum_axis(ndarray::Axis(0)) / t
}
