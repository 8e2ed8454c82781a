//! Dataset ingestion and on-disk artifacts: edge lists, feature/label CSVs,
//! training history and gradient CSVs, and the versioned weight container.
//!
//! All floating-point output uses Rust's shortest round-trip decimal
//! formatting, so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MsgError, Result};
use crate::graph::{GraphDataset, WeightMatrix};
use crate::model::LayerCache;
use crate::tasks::EpochRecord;

/// Magic prefix of the weight container format.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"MSG1";

/// A full run description, serializable alongside outputs for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifold: String,
    pub task: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub time_steps: usize,
    pub step_size: f64,
    pub num_layers: usize,
    pub v_th: f64,
    pub v_rest: f64,
    pub leak: f64,
    pub reset: String,
    pub edge_path: Option<String>,
    pub feature_path: Option<String>,
    pub label_path: Option<String>,
    pub output_dir: String,
}

/// Parse an edge list: one `u v` pair of 0-based node ids per line,
/// whitespace-separated; blank lines and `#` comments ignored.
pub fn load_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path)
        .map_err(|e| MsgError::Ingest(format!("cannot open {}: {e}", path.display())))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let parse_id = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| {
                MsgError::Parse(format!("{}:{}: expected two node ids", path.display(), lineno + 1))
            })?
            .parse::<usize>()
            .map_err(|e| MsgError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
        };
        let u = parse_id(fields.next())?;
        let v = parse_id(fields.next())?;
        if fields.next().is_some() {
            return Err(MsgError::Parse(format!(
                "{}:{}: expected exactly two node ids",
                path.display(),
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Parse a headerless CSV of floats, one row per node.
pub fn load_feature_csv(path: &Path) -> Result<Array2<f64>> {
    let file = File::open(path)
        .map_err(|e| MsgError::Ingest(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    MsgError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MsgError::Parse(format!(
                    "{}:{}: row has {} fields, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MsgError::Ingest(format!("{}: no feature rows", path.display())));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / ncols, ncols), flat)
        .map_err(|e| MsgError::Ingest(e.to_string()))
}

/// Parse a headerless CSV of one integer class label per line.
pub fn load_label_csv(path: &Path) -> Result<Array1<usize>> {
    let file = File::open(path)
        .map_err(|e| MsgError::Ingest(format!("cannot open {}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        labels.push(body.parse::<usize>().map_err(|e| {
            MsgError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    if labels.is_empty() {
        return Err(MsgError::Config(format!("{}: no labels", path.display())));
    }
    Ok(Array1::from(labels))
}

/// Zero-mean unit-variance per column in place; constant columns become 0.
pub fn standardize_columns(features: &mut Array2<f64>) {
    let n = features.nrows() as f64;
    for mut col in features.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if var > 0.0 {
            let inv_sd = 1.0 / var.sqrt();
            col.mapv_inplace(|x| (x - mean) * inv_sd);
        } else {
            col.fill(0.0);
        }
    }
}

/// Assemble a dataset from an edge-list file, a feature CSV, and an optional
/// label CSV. Node count comes from the feature rows; features are column
/// standardized. Masks are left empty for the training loop to seed.
pub fn load_dataset(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<GraphDataset> {
    let edges = load_edge_list(edge_path)?;
    let mut features = load_feature_csv(feature_path)?;
    standardize_columns(&mut features);
    let num_nodes = features.nrows();
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= num_nodes || v >= num_nodes) {
        return Err(MsgError::Ingest(format!(
            "edge ({u}, {v}) references a node outside the {num_nodes} feature rows"
        )));
    }
    let labels = label_path.map(load_label_csv).transpose()?;
    GraphDataset::new(num_nodes, edges, features, labels)
}

fn csv_line<W: Write>(out: &mut W, fields: &[String]) -> Result<()> {
    writeln!(out, "{}", fields.join(","))?;
    Ok(())
}

/// Write the per-epoch training history: loss, metrics, and per-layer
/// gradient norms.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let (nz, nw) = history
        .first()
        .map_or((0, 0), |r| (r.d_z_norms.len(), r.d_w_norms.len()));
    let mut header = vec!["epoch".into(), "loss".into(), "val_metric".into(), "test_metric".into()];
    header.extend((0..nz).map(|l| format!("d_z_norm_{l}")));
    header.extend((0..nw).map(|l| format!("d_w_norm_{l}")));
    csv_line(&mut out, &header)?;
    for r in history {
        let mut fields = vec![
            r.epoch.to_string(),
            r.loss.to_string(),
            r.val_metric.to_string(),
            r.test_metric.to_string(),
        ];
        fields.extend(r.d_z_norms.iter().map(f64::to_string));
        fields.extend(r.d_w_norms.iter().map(f64::to_string));
        csv_line(&mut out, &fields)?;
    }
    Ok(())
}

/// Gradient-audit table in long form: one row per (epoch, layer).
pub fn write_grads_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    csv_line(&mut out, &["epoch".into(), "layer".into(), "d_z_norm".into(), "d_w_norm".into()])?;
    for r in history {
        for (l, dz) in r.d_z_norms.iter().enumerate() {
            let dw = r.d_w_norms.get(l).copied().unwrap_or(f64::NAN);
            csv_line(
                &mut out,
                &[r.epoch.to_string(), l.to_string(), dz.to_string(), dw.to_string()],
            )?;
        }
    }
    Ok(())
}

/// Per-layer manifold coordinates of every node from a forward pass.
pub fn write_trajectory_csv(path: &Path, cache: &LayerCache) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let width = cache.points.first().map_or(0, |p| p.ncols());
    let mut header = vec!["layer".into(), "node".into()];
    header.extend((0..width).map(|i| format!("x{i}")));
    csv_line(&mut out, &header)?;
    for (layer, points) in cache.points.iter().enumerate() {
        for (node, row) in points.rows().into_iter().enumerate() {
            let mut fields = vec![layer.to_string(), node.to_string()];
            fields.extend(row.iter().map(|x| x.to_string()));
            csv_line(&mut out, &fields)?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct WeightManifest {
    shapes: Vec<(usize, usize)>,
    layer_indices: Vec<usize>,
}

/// Serialize weights: `MSG1` magic, little-endian u32 manifest length, JSON
/// shape manifest, then the raw f64 values in row-major order.
pub fn save_weights(path: &Path, weights: &[WeightMatrix]) -> Result<()> {
    let manifest = serde_json::to_vec(&WeightManifest {
        shapes: weights.iter().map(|w| w.values.dim()).collect(),
        layer_indices: weights.iter().map(|w| w.layer_index).collect(),
    })
    .map_err(|e| MsgError::Parse(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&(manifest.len() as u32).to_le_bytes())?;
    out.write_all(&manifest)?;
    for w in weights {
        for &x in w.values.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Vec<WeightMatrix>> {
    let mut data = Vec::new();
    File::open(path)
        .map_err(|e| MsgError::Ingest(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut data)?;
    if data.len() < 8 || &data[..4] != WEIGHTS_MAGIC {
        return Err(MsgError::Parse("not a MSG1 weight container".into()));
    }
    let mlen = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    if data.len() < 8 + mlen {
        return Err(MsgError::Parse("truncated weight manifest".into()));
    }
    let manifest: WeightManifest = serde_json::from_slice(&data[8..8 + mlen])
        .map_err(|e| MsgError::Parse(format!("weight manifest: {e}")))?;
    if manifest.shapes.len() != manifest.layer_indices.len() {
        return Err(MsgError::Parse("weight manifest shape/index length mismatch".into()));
    }
    let expected: usize = manifest.shapes.iter().map(|&(r, c)| r * c).sum();
    let payload = &data[8 + mlen..];
    if payload.len() != expected * 8 {
        return Err(MsgError::Parse(format!(
            "weight payload holds {} bytes, manifest expects {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut offset = 0;
    let mut weights = Vec::with_capacity(manifest.shapes.len());
    for (&(r, c), &layer_index) in manifest.shapes.iter().zip(&manifest.layer_indices) {
        let vals: Vec<f64> = payload[offset..offset + r * c * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        offset += r * c * 8;
        weights.push(WeightMatrix {
            values: Array2::from_shape_vec((r, c), vals)
                .map_err(|e| MsgError::Parse(e.to_string()))?,
            layer_index,
        });
    }
    Ok(weights)
}

/// Write any dense matrix as headerless CSV with round-trip formatting.
pub fn write_matrix_csv(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        csv_line(&mut out, &fields)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write as _;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn path_graph_loads() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "# path graph\n0 1\n1 2\n");
        let feats = write_tmp(&dir, "feats.csv", "1.0,2.0\n3.0,4.0\n5.0,6.0\n");
        let ds = load_dataset(&edges, &feats, None).unwrap();
        assert_eq!(ds.num_nodes, 3);
        assert_eq!(ds.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 1\n2 x\n");
        let err = load_edge_list(&edges).unwrap_err();
        assert!(matches!(err, MsgError::Parse(_)));
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn edge_outside_feature_rows_is_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 5\n");
        let feats = write_tmp(&dir, "feats.csv", "1.0\n2.0\n");
        assert!(matches!(
            load_dataset(&edges, &feats, None),
            Err(MsgError::Ingest(_))
        ));
    }

    #[test]
    fn empty_label_file_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_tmp(&dir, "labels.csv", "\n");
        assert!(matches!(load_label_csv(&labels), Err(MsgError::Config(_))));
    }

    #[test]
    fn standardization_zero_mean_unit_variance() {
        let mut m = array![[1.0, 7.0], [3.0, 7.0], [5.0, 7.0]];
        standardize_columns(&mut m);
        let mean0 = m.column(0).sum() / 3.0;
        let var0 = m.column(0).iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-12);
        assert!(m.column(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.msg1");
        let weights = vec![
            WeightMatrix { values: array![[1.5, -2.25], [0.1, 1e-300]], layer_index: 0 },
            WeightMatrix { values: array![[3.0], [4.0], [5.0]], layer_index: 1 },
        ];
        save_weights(&path, &weights).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded, weights);
    }

    #[test]
    fn weights_magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_tmp(&dir, "bad.msg1", "NOPE....");
        assert!(matches!(load_weights(&path), Err(MsgError::Parse(_))));
    }

    #[test]
    fn csv_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![[0.1, 1.0 / 3.0], [std::f64::consts::PI, -1e-17]];
        write_matrix_csv(&path, m.view()).unwrap();
        let back = load_feature_csv(&path).unwrap();
        assert_eq!(back, m);
    }
}
