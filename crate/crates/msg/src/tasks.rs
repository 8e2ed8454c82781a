//! Decoders, losses and their gradients at the final manifold points,
//! evaluation metrics, data splits, and the training loops for node
//! classification and link prediction.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{adam_update, backward, AdamState, BackwardOptions, GradientBundle};
use crate::error::{MsgError, Result};
use crate::geometry::{coords, ManifoldSpec};
use crate::graph::{sample_non_edges, GraphDataset, WeightMatrix};
use crate::model::{forward, init_weights, ModelConfig};

/// Softmax classifier on top of the log map at the origin.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub w_cls: Array2<f64>,
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(ambient: usize, num_classes: usize, rng: &mut R) -> Self {
        let a = (6.0 / (ambient + num_classes) as f64).sqrt();
        ClassifierHead {
            w_cls: Array2::from_shape_fn((ambient, num_classes), |_| rng.gen_range(-a..a)),
        }
    }
}

/// Edge-probability decoder `p = 1 / (exp((d^2 - r)/t) + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct FermiDiracParams {
    pub r: f64,
    pub t: f64,
}

impl Default for FermiDiracParams {
    fn default() -> Self {
        FermiDiracParams { r: 2.0, t: 1.0 }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn log_at_origin(spec: &ManifoldSpec, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let origin = coords::origin_coords(spec);
    let mut out = Array2::zeros(z.raw_dim());
    for (node, row) in z.rows().into_iter().enumerate() {
        out.row_mut(node).assign(&coords::log_coords(spec, origin.view(), row)?);
    }
    Ok(out)
}

/// Cross-entropy over masked nodes with logits `Log_o(z) W`; returns the loss,
/// its gradient at the points, and the head gradient.
pub fn nc_loss_and_grad(
    spec: &ManifoldSpec,
    z: ArrayView2<'_, f64>,
    labels: &Array1<usize>,
    mask: &[bool],
    head: &ClassifierHead,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(MsgError::Config("nc loss: empty node mask".into()));
    }
    let num_classes = head.w_cls.ncols();
    let tangent = log_at_origin(spec, z)?;
    let logits = tangent.dot(&head.w_cls);

    let mut loss = 0.0;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    for node in 0..z.nrows() {
        if !mask[node] {
            continue;
        }
        let label = labels[node];
        if label >= num_classes {
            return Err(MsgError::Config(format!(
                "label {label} outside the {num_classes}-class head"
            )));
        }
        let row = logits.row(node);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        loss += denom.ln() + max - row[label];
        for c in 0..num_classes {
            let p = (row[c] - max).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            d_logits[[node, c]] = (p - target) / count as f64;
        }
    }
    loss /= count as f64;

    let d_head = tangent.t().dot(&d_logits);
    let origin = coords::origin_coords(spec);
    let mut d_z = Array2::zeros(z.raw_dim());
    for node in 0..z.nrows() {
        if !mask[node] {
            continue;
        }
        let upstream = head.w_cls.dot(&d_logits.row(node));
        let j = coords::jac_log(spec, origin.view(), z.row(node))?;
        d_z.row_mut(node).assign(&j.t().dot(&upstream));
    }
    Ok((loss, d_z, d_head))
}

pub fn fermi_dirac_prob(dist_sq: f64, fd: &FermiDiracParams) -> f64 {
    1.0 / (((dist_sq - fd.r) / fd.t).exp() + 1.0)
}

/// Binary cross-entropy over positive and negative edges; the gradient chains
/// through the closed-form gradient of squared geodesic distance.
pub fn lp_loss_and_grad(
    spec: &ManifoldSpec,
    z: ArrayView2<'_, f64>,
    pos_edges: &[(usize, usize)],
    neg_edges: &[(usize, usize)],
    fd: &FermiDiracParams,
) -> Result<(f64, Array2<f64>)> {
    let total = pos_edges.len() + neg_edges.len();
    if total == 0 {
        return Err(MsgError::Config("lp loss: no edges supplied".into()));
    }
    let mut loss = 0.0;
    let mut d_z = Array2::zeros(z.raw_dim());
    for (edges, is_pos) in [(pos_edges, true), (neg_edges, false)] {
        for &(i, j) in edges {
            if i >= z.nrows() || j >= z.nrows() {
                return Err(MsgError::Ingest(format!("edge ({i}, {j}) outside the node range")));
            }
            let d = coords::distance_coords(spec, z.row(i), z.row(j))?;
            let s = d * d;
            // u = -(s - r)/t so that p = sigmoid(u)
            let u = -(s - fd.r) / fd.t;
            loss += if is_pos { softplus(-u) } else { softplus(u) };
            let p = 1.0 / (1.0 + (-u).exp());
            let y = if is_pos { 1.0 } else { 0.0 };
            let dl_ds = (y - p) / fd.t / total as f64;
            let gi = coords::grad_dist_sq_wrt_x(spec, z.row(i), z.row(j))?;
            let gj = coords::grad_dist_sq_wrt_x(spec, z.row(j), z.row(i))?;
            d_z.row_mut(i).scaled_add(dl_ds, &gi);
            d_z.row_mut(j).scaled_add(dl_ds, &gj);
        }
    }
    Ok((loss / total as f64, d_z))
}

pub fn metric_accuracy(pred: &Array1<usize>, labels: &Array1<usize>, mask: &[bool]) -> Result<f64> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            total += 1;
            if pred[i] == labels[i] {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(MsgError::Config("accuracy: empty mask".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Predicted class per node: argmax of the decoder logits, lowest index wins ties.
pub fn predict_labels(
    spec: &ManifoldSpec,
    z: ArrayView2<'_, f64>,
    head: &ClassifierHead,
) -> Result<Array1<usize>> {
    let logits = log_at_origin(spec, z)?.dot(&head.w_cls);
    Ok(Array1::from_iter(logits.rows().into_iter().map(|row| {
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        best
    })))
}

/// Ranking AUC (ties get half credit) and average precision with step
/// interpolation over the precision-recall curve.
pub fn metric_auc_ap(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MsgError::Config("auc/ap: need at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    // average ranks over tied score groups (rank 1 = lowest score)
    let mut asc = order.clone();
    asc.reverse();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < asc.len() {
        let mut j = i;
        while j + 1 < asc.len() && scores[asc[j + 1]] == scores[asc[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j + 1) as f64) / 2.0;
        for &idx in &asc[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;

    let mut tp = 0usize;
    let mut ap = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if labels[idx] {
            tp += 1;
            ap += tp as f64 / (k + 1) as f64;
        }
    }
    Ok((auc, ap / n_pos as f64))
}

/// Random disjoint node masks with the given train/val fractions; the rest is test.
pub fn split_nodes<R: Rng + ?Sized>(
    num_nodes: usize,
    train_frac: f64,
    val_frac: f64,
    rng: &mut R,
) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(rng);
    let n_train = ((num_nodes as f64) * train_frac).round() as usize;
    let n_val = ((num_nodes as f64) * val_frac).round() as usize;
    let mut train = vec![false; num_nodes];
    let mut val = vec![false; num_nodes];
    let mut test = vec![false; num_nodes];
    for (pos, &node) in order.iter().enumerate() {
        if pos < n_train {
            train[node] = true;
        } else if pos < n_train + n_val {
            val[node] = true;
        } else {
            test[node] = true;
        }
    }
    (train, val, test)
}

/// Edge holdout for link prediction: hidden test/val positives with matching
/// sampled negatives; the message-passing graph keeps only training edges.
#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub train_edges: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

pub fn split_edges<R: Rng + ?Sized>(
    num_nodes: usize,
    edges: &[(usize, usize)],
    test_frac: f64,
    val_frac: f64,
    rng: &mut R,
) -> LinkSplit {
    use rand::seq::SliceRandom;
    let mut order: Vec<(usize, usize)> = edges.to_vec();
    order.shuffle(rng);
    let n_test = ((edges.len() as f64) * test_frac).round() as usize;
    let n_val = ((edges.len() as f64) * val_frac).round() as usize;
    let test_pos: Vec<_> = order[..n_test].to_vec();
    let val_pos: Vec<_> = order[n_test..n_test + n_val].to_vec();
    let train_edges: Vec<_> = order[n_test + n_val..].to_vec();
    let test_neg = sample_non_edges(num_nodes, edges, test_pos.len(), rng);
    let val_neg = sample_non_edges(num_nodes, edges, val_pos.len(), rng);
    LinkSplit { train_edges, val_pos, val_neg, test_pos, test_neg }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Euclidean norms of each layer's point gradient, encoder first.
    pub d_z_norms: Vec<f64>,
    /// Euclidean norms of each weight gradient, encoder first, then the head
    /// for node classification.
    pub d_w_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Vec<WeightMatrix>,
    pub head: Option<ClassifierHead>,
    pub history: Vec<EpochRecord>,
    /// Spike counts of the last forward pass, for energy reporting.
    pub last_spike_counts: Array2<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub task: Task,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub fermi_dirac: FermiDiracParams,
    pub backward: BackwardOptions,
    pub patience: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub lp_test_frac: f64,
    pub lp_val_frac: f64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, task: Task) -> Self {
        TrainConfig {
            model,
            task,
            epochs: 200,
            lr: 0.01,
            seed: 0,
            fermi_dirac: FermiDiracParams::default(),
            backward: BackwardOptions::default(),
            patience: 50,
            train_frac: 0.6,
            val_frac: 0.2,
            lp_test_frac: 0.10,
            lp_val_frac: 0.05,
        }
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn grad_norm_record(grads: &GradientBundle) -> (Vec<f64>, Vec<f64>) {
    (
        grads.d_z.iter().map(frobenius).collect(),
        grads.d_w.iter().map(frobenius).collect(),
    )
}

/// Node-classification training loop. Masks from the dataset are used when
/// present, otherwise a seeded split is drawn.
pub fn train_nc(dataset: &GraphDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let labels = dataset
        .labels
        .clone()
        .ok_or_else(|| MsgError::Config("node classification needs labels".into()))?;
    let num_classes = dataset.num_classes();
    if num_classes < 2 {
        return Err(MsgError::Config("node classification needs at least two classes".into()));
    }
    let mut data = dataset.clone();
    if !data.train_mask.iter().any(|&m| m) {
        let mut split_rng = rng_stream(cfg.seed, 1);
        let (train, val, test) = split_nodes(data.num_nodes, cfg.train_frac, cfg.val_frac, &mut split_rng);
        data.train_mask = train;
        data.val_mask = val;
        data.test_mask = test;
    }

    let mut weight_rng = rng_stream(cfg.seed, 0);
    let mut weights = init_weights(data.features.ncols(), &cfg.model, &mut weight_rng);
    let mut head = ClassifierHead::init(cfg.model.ambient_dim(), num_classes, &mut weight_rng);

    // one extra optimizer slot for the head
    let mut opt_slots = weights.clone();
    opt_slots.push(WeightMatrix { values: head.w_cls.clone(), layer_index: weights.len() });
    let mut adam = AdamState::new(&opt_slots);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut last_counts = Array2::zeros((cfg.model.time_steps, cfg.model.num_layers + 1));
    for epoch in 0..cfg.epochs {
        let cache = forward(&data, &weights, &cfg.model)?;
        let z = cache.final_points();
        let (loss, d_zl, d_head) =
            nc_loss_and_grad(&cfg.model.spec, z.view(), &labels, &data.train_mask, &head)?;
        let grads = backward(&data, &cache, &weights, &cfg.model, d_zl.view(), &cfg.backward)?;

        let pred = predict_labels(&cfg.model.spec, z.view(), &head)?;
        let val_metric = metric_accuracy(&pred, &labels, &data.val_mask)?;
        let test_metric = metric_accuracy(&pred, &labels, &data.test_mask)?;
        let (d_z_norms, mut d_w_norms) = grad_norm_record(&grads);
        d_w_norms.push(frobenius(&d_head));
        history.push(EpochRecord { epoch, loss, val_metric, test_metric, d_z_norms, d_w_norms });
        last_counts = cache.spike_counts.clone();

        let mut slots: Vec<WeightMatrix> = weights.clone();
        slots.push(WeightMatrix { values: head.w_cls.clone(), layer_index: weights.len() });
        let mut all_grads = grads.d_w.clone();
        all_grads.push(d_head);
        adam_update(&mut slots, &all_grads, &mut adam, cfg.lr)?;
        head.w_cls = slots.pop().unwrap().values;
        weights = slots;

        if val_metric > best_val {
            best_val = val_metric;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { weights, head: Some(head), history, last_spike_counts: last_counts })
}

/// Link-prediction training loop; negatives are resampled each epoch.
pub fn train_lp(dataset: &GraphDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut split_rng = rng_stream(cfg.seed, 1);
    let split = split_edges(
        dataset.num_nodes,
        &dataset.edges,
        cfg.lp_test_frac,
        cfg.lp_val_frac,
        &mut split_rng,
    );
    if split.train_edges.is_empty() {
        return Err(MsgError::Config("link prediction: no training edges left after holdout".into()));
    }
    // message passing sees only training edges
    let data = GraphDataset::new(
        dataset.num_nodes,
        split.train_edges.clone(),
        dataset.features.clone(),
        dataset.labels.clone(),
    )?;

    let mut weight_rng = rng_stream(cfg.seed, 0);
    let mut weights = init_weights(data.features.ncols(), &cfg.model, &mut weight_rng);
    let mut adam = AdamState::new(&weights);
    let mut neg_rng = rng_stream(cfg.seed, 2);

    let eval_metric = |z: ArrayView2<'_, f64>,
                       pos: &[(usize, usize)],
                       neg: &[(usize, usize)]|
     -> Result<f64> {
        if pos.is_empty() || neg.is_empty() {
            return Ok(f64::NAN);
        }
        let mut scores = Vec::with_capacity(pos.len() + neg.len());
        let mut labels = Vec::with_capacity(pos.len() + neg.len());
        for (edges, lab) in [(pos, true), (neg, false)] {
            for &(i, j) in edges {
                let d = coords::distance_coords(&cfg.model.spec, z.row(i), z.row(j))?;
                scores.push(fermi_dirac_prob(d * d, &cfg.fermi_dirac));
                labels.push(lab);
            }
        }
        Ok(metric_auc_ap(&scores, &labels)?.0)
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut last_counts = Array2::zeros((cfg.model.time_steps, cfg.model.num_layers + 1));
    for epoch in 0..cfg.epochs {
        let cache = forward(&data, &weights, &cfg.model)?;
        let z = cache.final_points();
        let negatives = sample_non_edges(
            data.num_nodes,
            &dataset.edges,
            split.train_edges.len(),
            &mut neg_rng,
        );
        let (loss, d_zl) = lp_loss_and_grad(
            &cfg.model.spec,
            z.view(),
            &split.train_edges,
            &negatives,
            &cfg.fermi_dirac,
        )?;
        let grads = backward(&data, &cache, &weights, &cfg.model, d_zl.view(), &cfg.backward)?;

        let val_metric = eval_metric(z.view(), &split.val_pos, &split.val_neg)?;
        let test_metric = eval_metric(z.view(), &split.test_pos, &split.test_neg)?;
        let (d_z_norms, d_w_norms) = grad_norm_record(&grads);
        history.push(EpochRecord { epoch, loss, val_metric, test_metric, d_z_norms, d_w_norms });
        last_counts = cache.spike_counts.clone();

        adam_update(&mut weights, &grads.d_w, &mut adam, cfg.lr)?;

        let gate = if val_metric.is_nan() { -loss } else { val_metric };
        if gate > best_val {
            best_val = gate;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { weights, head: None, history, last_spike_counts: last_counts })
}

pub fn train(dataset: &GraphDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.task {
        Task::NodeClassification => train_nc(dataset, cfg),
        Task::LinkPrediction => train_lp(dataset, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, random_point, random_tangent, ManifoldPoint, TangentVector};
    use crate::graph::sbm_two_block;
    use crate::spiking::NeuronConfig;
    use ndarray::array;

    fn points_on(spec: &ManifoldSpec, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, spec.ambient_dim()));
        for i in 0..n {
            out.row_mut(i).assign(&random_point(spec, &mut rng).into_coords());
        }
        out
    }

    #[test]
    fn nc_uniform_logits_loss_is_log_c() {
        let spec = ManifoldSpec::lorentz(3).unwrap();
        let z = crate::model::origin_rows(&spec, 4);
        let head = ClassifierHead { w_cls: Array2::zeros((4, 3)) };
        let labels = array![0usize, 1, 2, 0];
        let mask = vec![true; 4];
        let (loss, d_z, _) = nc_loss_and_grad(&spec, z.view(), &labels, &mask, &head).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
        // at the origin the log map is zero, so the head sees no signal and
        // the point gradient is the pullback of a uniform softmax
        assert!(d_z.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn nc_saturated_logits_have_vanishing_loss() {
        let spec = ManifoldSpec::euclidean(2).unwrap();
        let z = array![[10.0, 0.0], [0.0, 10.0]];
        let head = ClassifierHead { w_cls: Array2::eye(2) * 10.0 };
        let labels = array![0usize, 1];
        let mask = vec![true, true];
        let (loss, d_z, d_head) = nc_loss_and_grad(&spec, z.view(), &labels, &mask, &head).unwrap();
        assert!(loss < 1e-6);
        assert!(d_z.iter().all(|x| x.abs() < 1e-6));
        assert!(d_head.iter().all(|x| x.abs() < 1e-4));
    }

    #[test]
    fn nc_empty_mask_is_error() {
        let spec = ManifoldSpec::euclidean(2).unwrap();
        let z = Array2::zeros((2, 2));
        let head = ClassifierHead { w_cls: Array2::eye(2) };
        let labels = array![0usize, 1];
        assert!(nc_loss_and_grad(&spec, z.view(), &labels, &[false, false], &head).is_err());
    }

    fn manifold_fd_check_nc(spec: ManifoldSpec, seed: u64) -> f64 {
        let n = 6;
        let z = points_on(&spec, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let head = ClassifierHead::init(spec.ambient_dim(), 3, &mut rng);
        let labels = Array1::from_shape_fn(n, |i| i % 3);
        let mask = vec![true; n];
        let (_, d_z, _) = nc_loss_and_grad(&spec, z.view(), &labels, &mask, &head).unwrap();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for node in 0..n {
            let base = ManifoldPoint::new(spec.clone(), z.row(node).to_owned()).unwrap();
            for _ in 0..4 {
                let dir = random_tangent(&base, 1.0, &mut rng);
                let probe = |s: f64| -> f64 {
                    let stepped = exp_map(
                        &base,
                        &TangentVector::new_unchecked(base.clone(), dir.coords().to_owned() * s),
                    )
                    .unwrap();
                    let mut zs = z.clone();
                    zs.row_mut(node).assign(&stepped.coords());
                    nc_loss_and_grad(&spec, zs.view(), &labels, &mask, &head).unwrap().0
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let an: f64 = d_z.row(node).iter().zip(dir.coords().iter()).map(|(a, b)| a * b).sum();
                worst = worst.max((fd - an).abs() / 1.0f64.max(an.abs()));
            }
        }
        worst
    }

    #[test]
    fn nc_gradient_matches_manifold_finite_differences() {
        for (spec, seed) in [
            (ManifoldSpec::lorentz(3).unwrap(), 80),
            (ManifoldSpec::sphere(3).unwrap(), 81),
            (ManifoldSpec::euclidean(3).unwrap(), 82),
        ] {
            let worst = manifold_fd_check_nc(spec.clone(), seed);
            assert!(worst < 1e-3, "{spec}: rel err {worst}");
        }
    }

    #[test]
    fn fermi_dirac_decoder_values() {
        let fd = FermiDiracParams::default();
        let coincident = fermi_dirac_prob(0.0, &fd);
        assert!((coincident - 1.0 / ((-2.0f64).exp() + 1.0)).abs() < 1e-12);
        assert!((coincident - 0.881).abs() < 1e-3);
        assert_eq!(fermi_dirac_prob(fd.r, &fd), 0.5);
    }

    #[test]
    fn lp_score_is_symmetric() {
        let spec = ManifoldSpec::lorentz(4).unwrap();
        let z = points_on(&spec, 5, 83);
        let fd = FermiDiracParams::default();
        for i in 0..5 {
            for j in 0..5 {
                let dij = coords::distance_coords(&spec, z.row(i), z.row(j)).unwrap();
                let dji = coords::distance_coords(&spec, z.row(j), z.row(i)).unwrap();
                assert_eq!(fermi_dirac_prob(dij * dij, &fd), fermi_dirac_prob(dji * dji, &fd));
            }
        }
    }

    #[test]
    fn lp_gradient_matches_manifold_finite_differences() {
        for (spec, seed) in [
            (ManifoldSpec::lorentz(3).unwrap(), 84),
            (ManifoldSpec::sphere(3).unwrap(), 85),
            (
                ManifoldSpec::product(vec![
                    ManifoldSpec::lorentz(2).unwrap(),
                    ManifoldSpec::euclidean(2).unwrap(),
                ])
                .unwrap(),
                86,
            ),
        ] {
            let n = 6;
            let z = points_on(&spec, n, seed);
            let pos = vec![(0, 1), (2, 3)];
            let neg = vec![(0, 4), (1, 5)];
            let fd_params = FermiDiracParams::default();
            let (_, d_z) = lp_loss_and_grad(&spec, z.view(), &pos, &neg, &fd_params).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let h = 1e-5;
            let mut worst = 0.0f64;
            for node in 0..n {
                let base = ManifoldPoint::new(spec.clone(), z.row(node).to_owned()).unwrap();
                for _ in 0..4 {
                    let dir = random_tangent(&base, 1.0, &mut rng);
                    let probe = |s: f64| -> f64 {
                        let stepped = exp_map(
                            &base,
                            &TangentVector::new_unchecked(base.clone(), dir.coords().to_owned() * s),
                        )
                        .unwrap();
                        let mut zs = z.clone();
                        zs.row_mut(node).assign(&stepped.coords());
                        lp_loss_and_grad(&spec, zs.view(), &pos, &neg, &fd_params).unwrap().0
                    };
                    let fd = (probe(h) - probe(-h)) / (2.0 * h);
                    let an: f64 =
                        d_z.row(node).iter().zip(dir.coords().iter()).map(|(a, b)| a * b).sum();
                    worst = worst.max((fd - an).abs() / 1.0f64.max(an.abs()));
                }
            }
            assert!(worst < 1e-3, "{spec}: rel err {worst}");
        }
    }

    #[test]
    fn accuracy_examples() {
        let labels = array![0usize, 1, 0, 1];
        let mask = vec![true; 4];
        assert_eq!(metric_accuracy(&labels.clone(), &labels, &mask).unwrap(), 1.0);
        let wrong = array![1usize, 0, 1, 0];
        assert_eq!(metric_accuracy(&wrong, &labels, &mask).unwrap(), 0.0);
        assert!(metric_accuracy(&labels.clone(), &labels, &[false; 4]).is_err());
    }

    fn brute_force_auc_ap(scores: &[f64], labels: &[bool]) -> (f64, f64) {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let n_pos = labels.iter().filter(|&&l| l).count();
        let mut tp = 0usize;
        let mut ap = 0.0;
        for (k, &idx) in order.iter().enumerate() {
            if labels[idx] {
                tp += 1;
                ap += tp as f64 / (k + 1) as f64;
            }
        }
        (wins / pairs, ap / n_pos as f64)
    }

    #[test]
    fn auc_ap_edge_cases() {
        let (auc, ap) = metric_auc_ap(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(ap, 1.0);
        let (auc, _) = metric_auc_ap(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
        assert!(metric_auc_ap(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_ap_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        for _ in 0..50 {
            let n = rng.gen_range(5..=100);
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let (auc, ap) = metric_auc_ap(&scores, &labels).unwrap();
            let (b_auc, b_ap) = brute_force_auc_ap(&scores, &labels);
            assert_eq!(auc, b_auc);
            assert_eq!(ap, b_ap);
        }
    }

    #[test]
    fn node_split_is_disjoint_and_covering() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let (train, val, test) = split_nodes(50, 0.6, 0.2, &mut rng);
        for i in 0..50 {
            let c = train[i] as u8 + val[i] as u8 + test[i] as u8;
            assert_eq!(c, 1);
        }
        assert_eq!(train.iter().filter(|&&m| m).count(), 30);
        assert_eq!(val.iter().filter(|&&m| m).count(), 10);
    }

    fn sbm_dataset(seed: u64) -> GraphDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (edges, features, labels) = sbm_two_block(100, 0.3, 0.02, 8, 0.75, &mut rng);
        GraphDataset::new(100, edges, features, Some(labels)).unwrap()
    }

    fn sbm_train_cfg(seed: u64) -> TrainConfig {
        let model = ModelConfig {
            spec: ManifoldSpec::lorentz(8).unwrap(),
            num_layers: 2,
            time_steps: 5,
            step_size: 0.1,
            neuron: NeuronConfig::default(),
        };
        let mut cfg = TrainConfig::new(model, Task::NodeClassification);
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn zero_lr_freezes_training() {
        let dataset = sbm_dataset(89);
        let mut cfg = sbm_train_cfg(89);
        cfg.lr = 0.0;
        cfg.epochs = 5;
        cfg.patience = 100;
        let out = train(&dataset, &cfg).unwrap();
        let first = &out.history[0];
        for rec in &out.history {
            assert_eq!(rec.loss, first.loss);
            assert_eq!(rec.test_metric, first.test_metric);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = sbm_dataset(90);
        let mut cfg = sbm_train_cfg(90);
        cfg.epochs = 6;
        let a = train(&dataset, &cfg).unwrap();
        let b = train(&dataset, &cfg).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
            assert_eq!(ra.val_metric.to_bits(), rb.val_metric.to_bits());
        }
    }

    #[test]
    fn sbm_nc_reaches_high_accuracy() {
        let dataset = sbm_dataset(91);
        let mut cfg = sbm_train_cfg(91);
        cfg.epochs = 120;
        let out = train(&dataset, &cfg).unwrap();
        let best = out.history.iter().map(|r| r.test_metric).fold(0.0, f64::max);
        assert!(best >= 0.9, "best test accuracy {best}");
    }

    #[test]
    fn lp_training_runs_and_scores_above_chance() {
        let dataset = sbm_dataset(92);
        let model = ModelConfig {
            spec: ManifoldSpec::lorentz(8).unwrap(),
            num_layers: 2,
            time_steps: 5,
            step_size: 0.1,
            neuron: NeuronConfig::default(),
        };
        let mut cfg = TrainConfig::new(model, Task::LinkPrediction);
        cfg.seed = 92;
        cfg.epochs = 60;
        let out = train(&dataset, &cfg).unwrap();
        let best = out.history.iter().map(|r| r.test_metric).fold(0.0, f64::max);
        assert!(best > 0.6, "best test AUC {best}");
    }

    #[test]
    fn decoder_gradients_are_tangent_after_projection() {
        let spec = ManifoldSpec::lorentz(4).unwrap();
        let z = points_on(&spec, 5, 93);
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let head = ClassifierHead::init(5, 2, &mut rng);
        let labels = Array1::from_shape_fn(5, |i| i % 2);
        let (_, d_z, _) = nc_loss_and_grad(&spec, z.view(), &labels, &[true; 5], &head).unwrap();
        for node in 0..5 {
            let projected = coords::proj_tangent_coords(&spec, z.row(node), d_z.row(node));
            let q = crate::geometry::minkowski_inner(z.row(node), projected.view()).unwrap();
            assert!(q.abs() < 1e-9, "residual {q}");
        }
    }
}
