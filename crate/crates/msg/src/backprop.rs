//! Recurrence-free backward pass. Gradients flow through the manifold points
//! via closed-form exp-map Jacobians; spike trains are treated as constants,
//! so the cost does not grow with the number of simulation timesteps.

use ndarray::{Array2, ArrayView2};

use crate::error::{MsgError, Result};
use crate::geometry::coords::{jac_exp_v, jac_exp_z, jac_proj, jac_proj_wrt_z};
use crate::graph::{gcn_weight_grad, GraphDataset, WeightMatrix};
use crate::model::{origin_rows, LayerCache, ModelConfig};

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Gradient of the loss at each layer's manifold points, nodes x ambient.
    pub d_z: Vec<Array2<f64>>,
    /// Gradient with respect to each weight matrix (encoder first).
    pub d_w: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    /// Include the dependence of the tangent projection on its base point in
    /// the layer-to-layer recursion. Without it the propagated gradient drops
    /// a term of order step_size * |pooled current| and fails gradient checks.
    pub include_projection_term: bool,
    /// Clip the global weight-gradient norm when set.
    pub clip_norm: Option<f64>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions { include_projection_term: true, clip_norm: None }
    }
}

/// Propagate `d_zl` (gradient at the final points) back through all layers.
pub fn backward(
    dataset: &GraphDataset,
    cache: &LayerCache,
    weights: &[WeightMatrix],
    cfg: &ModelConfig,
    d_zl: ArrayView2<'_, f64>,
    options: &BackwardOptions,
) -> Result<GradientBundle> {
    let num_layers = cfg.num_layers;
    let num_nodes = dataset.num_nodes;
    let width = cfg.ambient_dim();
    if d_zl.dim() != (num_nodes, width) {
        return Err(MsgError::Dimension(format!(
            "backward: upstream gradient is {:?}, expected ({num_nodes}, {width})",
            d_zl.dim()
        )));
    }
    let eps = cfg.step_size;

    let mut d_z: Vec<Array2<f64>> = vec![Array2::zeros((num_nodes, width)); num_layers + 1];
    let mut d_w: Vec<Array2<f64>> = Vec::with_capacity(num_layers + 1);
    d_z[num_layers].assign(&d_zl);

    for layer in (0..=num_layers).rev() {
        let base = cache.base_points(layer, &cfg.spec, num_nodes);
        let mut g_pooled = Array2::zeros((num_nodes, width));
        let mut d_prev = Array2::zeros((num_nodes, width));
        for node in 0..num_nodes {
            let z_prev = base.row(node);
            let step = cache.tangents[layer].row(node).to_owned() * eps;
            let upstream = d_z[layer].row(node).to_owned();

            let j_v = jac_exp_v(&cfg.spec, z_prev, step.view());
            let p = jac_proj(&cfg.spec, z_prev);
            // pullback of z = Exp_{z_prev}(eps * P x_bar) onto x_bar
            let pulled = j_v.t().dot(&upstream);
            g_pooled.row_mut(node).assign(&(p.t().dot(&pulled) * eps));

            if layer > 0 {
                let j_z = jac_exp_z(&cfg.spec, z_prev, step.view());
                let mut down = j_z.t().dot(&upstream);
                if options.include_projection_term {
                    let j_pz = jac_proj_wrt_z(&cfg.spec, z_prev, cache.pooled[layer].row(node));
                    down += &(j_pz.t().dot(&pulled) * eps);
                }
                d_prev.row_mut(node).assign(&down);
            }
        }
        if g_pooled.iter().any(|x| !x.is_finite()) {
            return Err(MsgError::Numeric("non-finite gradient".into()).at_layer(layer));
        }

        let grad_w = if layer == 0 {
            // the encoder current is replicated over time, so its pooled value
            // equals A_hat F W0 and the gradient skips the 1/T average
            let af = dataset.norm_adj.mul_dense(dataset.features.view())?;
            af.t().dot(&g_pooled)
        } else {
            gcn_weight_grad(&dataset.norm_adj, &cache.spikes[layer - 1], g_pooled.view())?
        };
        if grad_w.dim() != weights[layer].values.dim() {
            return Err(MsgError::Dimension(format!(
                "backward: weight gradient {:?} vs weight {:?}",
                grad_w.dim(),
                weights[layer].values.dim()
            ))
            .at_layer(layer));
        }
        d_w.push(grad_w);
        if layer > 0 {
            d_z[layer - 1] = d_prev;
        }
    }
    d_w.reverse();

    if let Some(cap) = options.clip_norm {
        let total: f64 = d_w.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if total > cap {
            let scale = cap / total;
            for g in &mut d_w {
                *g *= scale;
            }
        }
    }
    Ok(GradientBundle { d_z, d_w })
}

/// Recompute the manifold-point chain with every spike train pinned to a
/// cached forward pass. This is the function the backward pass differentiates
/// exactly; gradient checks perturb weights through it.
pub fn forward_frozen_spikes(
    dataset: &GraphDataset,
    cache: &LayerCache,
    weights: &[WeightMatrix],
    cfg: &ModelConfig,
) -> Result<Array2<f64>> {
    use crate::geometry::coords;
    use crate::graph::gcn_forward;

    let num_nodes = dataset.num_nodes;
    let width = cfg.ambient_dim();
    let mut z = origin_rows(&cfg.spec, num_nodes);
    for layer in 0..=cfg.num_layers {
        let pooled = if layer == 0 {
            gcn_forward(&dataset.norm_adj, dataset.features.view(), &weights[0])?
        } else {
            let mut acc = Array2::zeros((num_nodes, width));
            let mut s_t = Array2::zeros((num_nodes, width));
            let t_steps = cfg.time_steps;
            for t in 0..t_steps {
                for (node, train) in cache.spikes[layer - 1].iter().enumerate() {
                    s_t.row_mut(node).assign(&train.bits.row(t));
                }
                acc += &gcn_forward(&dataset.norm_adj, s_t.view(), &weights[layer])?;
            }
            acc / t_steps as f64
        };
        let mut z_next = Array2::zeros((num_nodes, width));
        for node in 0..num_nodes {
            let v = coords::proj_tangent_coords(&cfg.spec, z.row(node), pooled.row(node));
            let step = v * cfg.step_size;
            z_next
                .row_mut(node)
                .assign(&coords::exp_coords(&cfg.spec, z.row(node), step.view())?);
        }
        z = z_next;
    }
    Ok(z)
}

/// First/second-moment adaptive optimizer state, one slot per weight matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(weights: &[WeightMatrix]) -> Self {
        AdamState {
            m: weights.iter().map(|w| Array2::zeros(w.values.dim())).collect(),
            v: weights.iter().map(|w| Array2::zeros(w.values.dim())).collect(),
            step: 0,
        }
    }
}

pub fn adam_update(
    weights: &mut [WeightMatrix],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != weights.len() || state.m.len() != weights.len() {
        return Err(MsgError::Dimension("adam_update: slot count mismatch".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for ((w, g), (m, v)) in weights
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = &*m * ADAM_BETA1 + &(g * (1.0 - ADAM_BETA1));
        *v = &*v * ADAM_BETA2 + &(g.mapv(|x| x * x) * (1.0 - ADAM_BETA2));
        let m_hat = &*m / bc1;
        let v_hat = &*v / bc2;
        let update = m_hat / (v_hat.mapv(f64::sqrt) + ADAM_EPS);
        w.values -= &(update * lr);
    }
    Ok(())
}
