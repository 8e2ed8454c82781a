//! The manifold spiking layer and the full multi-layer forward pass, caching
//! every intermediate the backward pass needs.
//!
//! Layer `l` turns the previous layer's spike trains into graph-convolved
//! current, pools it over time, projects the pooled vector into the tangent
//! space at the previous manifold point, and takes a geodesic step of size
//! `step_size` along it. Layer 0 consumes raw node features instead of spikes.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{MsgError, Result};
use crate::geometry::{coords, ManifoldSpec};
use crate::graph::{gcn_forward, GraphDataset, WeightMatrix};
use crate::spiking::{avg_pool_matrix, run_neuron, CurrentTrain, NeuronConfig, SpikeTrain};

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub spec: ManifoldSpec,
    /// Number of spiking layers after the encoding layer.
    pub num_layers: usize,
    pub time_steps: usize,
    /// Geodesic step size per layer.
    pub step_size: f64,
    pub neuron: NeuronConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(MsgError::Config("num_layers must be at least 1".into()));
        }
        if self.time_steps < 1 {
            return Err(MsgError::Config("time_steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(MsgError::Config("step_size must be positive".into()));
        }
        self.neuron.validate()
    }

    pub fn ambient_dim(&self) -> usize {
        self.spec.ambient_dim()
    }
}

/// Forward artifacts per layer, indexed 0 (encoding) through `num_layers`.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Spike trains per layer, per node.
    pub spikes: Vec<Vec<SpikeTrain>>,
    /// Time-pooled ambient current per layer, nodes x ambient.
    pub pooled: Vec<Array2<f64>>,
    /// Tangent projections of the pooled current at the previous points.
    pub tangents: Vec<Array2<f64>>,
    /// Manifold points after each layer's geodesic step.
    pub points: Vec<Array2<f64>>,
    /// Total spikes per (timestep, layer) over all nodes and features.
    pub spike_counts: Array2<u64>,
}

impl LayerCache {
    /// Base points that layer `l` stepped from: the origin rows for `l = 0`,
    /// the previous layer's points otherwise.
    pub fn base_points(&self, layer: usize, spec: &ManifoldSpec, num_nodes: usize) -> Array2<f64> {
        if layer == 0 {
            origin_rows(spec, num_nodes)
        } else {
            self.points[layer - 1].clone()
        }
    }

    pub fn final_points(&self) -> &Array2<f64> {
        self.points.last().expect("cache holds at least the encoding layer")
    }
}

pub fn origin_rows(spec: &ManifoldSpec, num_nodes: usize) -> Array2<f64> {
    let o = coords::origin_coords(spec);
    let mut out = Array2::zeros((num_nodes, o.len()));
    for mut row in out.rows_mut() {
        row.assign(&o);
    }
    out
}

/// One manifold spiking layer over all nodes. `currents` holds one
/// nodes x ambient matrix per timestep; `z_prev` rows are on-manifold points.
pub fn ms_neuron(
    currents: &[Array2<f64>],
    z_prev: ArrayView2<'_, f64>,
    cfg: &ModelConfig,
) -> Result<(Vec<SpikeTrain>, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let t_steps = currents.len();
    if t_steps == 0 {
        return Err(MsgError::Dimension("ms_neuron: empty current train".into()));
    }
    let (num_nodes, width) = currents[0].dim();
    if width != cfg.ambient_dim() {
        return Err(MsgError::Dimension(format!(
            "ms_neuron: current width {} vs ambient dimension {}",
            width,
            cfg.ambient_dim()
        )));
    }

    let mut spikes = Vec::with_capacity(num_nodes);
    let mut pooled = Array2::zeros((num_nodes, width));
    let mut tangents = Array2::zeros((num_nodes, width));
    let mut z_next = Array2::zeros((num_nodes, width));
    let mut per_node = Array2::zeros((t_steps, width));
    for node in 0..num_nodes {
        for t in 0..t_steps {
            per_node.row_mut(t).assign(&currents[t].row(node));
        }
        let train = CurrentTrain { values: per_node.clone() };
        spikes.push(run_neuron(&train, &cfg.neuron));
        let x_bar = avg_pool_matrix(per_node.view());
        let v = coords::proj_tangent_coords(&cfg.spec, z_prev.row(node), x_bar.view());
        let step = &v * cfg.step_size;
        let z = coords::exp_coords(&cfg.spec, z_prev.row(node), step.view())?;
        pooled.row_mut(node).assign(&x_bar);
        tangents.row_mut(node).assign(&v);
        z_next.row_mut(node).assign(&z);
    }
    Ok((spikes, pooled, tangents, z_next))
}

/// Encoding layer: graph-convolve the raw features, replicate the result over
/// all timesteps, and step from the origin.
pub fn init_model(
    dataset: &GraphDataset,
    w0: &WeightMatrix,
    cfg: &ModelConfig,
) -> Result<(Vec<SpikeTrain>, Array2<f64>, Array2<f64>, Array2<f64>)> {
    let h = gcn_forward(&dataset.norm_adj, dataset.features.view(), w0)?;
    let currents: Vec<Array2<f64>> = (0..cfg.time_steps).map(|_| h.clone()).collect();
    let origins = origin_rows(&cfg.spec, dataset.num_nodes);
    ms_neuron(&currents, origins.view(), cfg)
}

/// Full forward pass; `weights[0]` encodes features, `weights[1..]` consume
/// the previous layer's spikes.
pub fn forward(dataset: &GraphDataset, weights: &[WeightMatrix], cfg: &ModelConfig) -> Result<LayerCache> {
    cfg.validate()?;
    if weights.len() != cfg.num_layers + 1 {
        return Err(MsgError::Config(format!(
            "expected {} weight matrices ({} layers plus encoder), got {}",
            cfg.num_layers + 1,
            cfg.num_layers,
            weights.len()
        )));
    }
    let num_nodes = dataset.num_nodes;
    let width = cfg.ambient_dim();
    let mut cache = LayerCache {
        spikes: Vec::with_capacity(cfg.num_layers + 1),
        pooled: Vec::with_capacity(cfg.num_layers + 1),
        tangents: Vec::with_capacity(cfg.num_layers + 1),
        points: Vec::with_capacity(cfg.num_layers + 1),
        spike_counts: Array2::zeros((cfg.time_steps, cfg.num_layers + 1)),
    };

    let (spikes, pooled, tangents, z) =
        init_model(dataset, &weights[0], cfg).map_err(|e| e.at_layer(0))?;
    record_layer(&mut cache, 0, spikes, pooled, tangents, z);

    for layer in 1..=cfg.num_layers {
        let prev_spikes = &cache.spikes[layer - 1];
        let mut currents = Vec::with_capacity(cfg.time_steps);
        let mut s_t = Array2::zeros((num_nodes, width));
        for t in 0..cfg.time_steps {
            for (node, train) in prev_spikes.iter().enumerate() {
                s_t.row_mut(node).assign(&train.bits.row(t));
            }
            currents.push(
                gcn_forward(&dataset.norm_adj, s_t.view(), &weights[layer])
                    .map_err(|e| e.at_layer(layer))?,
            );
        }
        let z_prev = cache.points[layer - 1].clone();
        let (spikes, pooled, tangents, z) =
            ms_neuron(&currents, z_prev.view(), cfg).map_err(|e| e.at_layer(layer))?;
        record_layer(&mut cache, layer, spikes, pooled, tangents, z);
    }
    Ok(cache)
}

fn record_layer(
    cache: &mut LayerCache,
    layer: usize,
    spikes: Vec<SpikeTrain>,
    pooled: Array2<f64>,
    tangents: Array2<f64>,
    z: Array2<f64>,
) {
    for train in &spikes {
        for (t, row) in train.bits.rows().into_iter().enumerate() {
            cache.spike_counts[[t, layer]] += row.iter().map(|&b| b as u64).sum::<u64>();
        }
    }
    cache.spikes.push(spikes);
    cache.pooled.push(pooled);
    cache.tangents.push(tangents);
    cache.points.push(z);
}

/// Scale-balanced uniform weight init over the encoder plus each layer.
pub fn init_weights<R: Rng + ?Sized>(
    feat_dim: usize,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Vec<WeightMatrix> {
    let ambient = cfg.ambient_dim();
    let mut out = Vec::with_capacity(cfg.num_layers + 1);
    for layer in 0..=cfg.num_layers {
        let fan_in = if layer == 0 { feat_dim } else { ambient };
        let a = (6.0 / (fan_in + ambient) as f64).sqrt();
        let values = Array2::from_shape_fn((fan_in, ambient), |_| rng.gen_range(-a..a));
        out.push(WeightMatrix { values, layer_index: layer });
    }
    out
}
