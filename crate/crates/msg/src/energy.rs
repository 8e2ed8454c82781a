//! Theoretical energy accounting driven by spike counts from a real forward
//! pass. A multiply-accumulate costs 4.6 pJ, a spike-driven accumulate 3.7 pJ;
//! the encoding layer pays MAC cost per spike-gated feature block, hidden
//! layers pay SOP cost per spike.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{MsgError, Result};

/// Energy of one multiply-accumulate, picojoules.
pub const E_MAC_PJ: f64 = 4.6;
/// Energy of one synaptic (accumulate-only) operation, picojoules.
pub const E_SOP_PJ: f64 = 3.7;

/// How the encoding-layer spike term is read: the raw spike count, or the
/// spiking fraction of the layer (count / (nodes * width)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingCountMode {
    Count,
    Fraction,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub e_mac_pj: f64,
    pub e_sop_pj: f64,
    pub encoding_mode: EncodingCountMode,
    pub e_encoding_pj: f64,
    pub e_spiking_pj: f64,
    pub total_pj: f64,
    pub total_mj: f64,
    /// Row per timestep, column per layer (encoding first).
    pub spike_counts: Vec<Vec<u64>>,
}

/// SNN energy from per-(timestep, layer) spike counts; column 0 is the
/// encoding layer, later columns are the spiking layers.
pub fn snn_energy(
    spike_counts: ArrayView2<'_, u64>,
    n_nodes: usize,
    feat_dim: usize,
    mode: EncodingCountMode,
) -> Result<EnergyReport> {
    if spike_counts.ncols() == 0 || spike_counts.nrows() == 0 {
        return Err(MsgError::Dimension("snn_energy: empty spike-count matrix".into()));
    }
    let mut e_encoding = 0.0;
    let mut e_spiking = 0.0;
    for row in spike_counts.rows() {
        let s0 = row[0] as f64;
        let encoding_term = match mode {
            EncodingCountMode::Count => s0,
            EncodingCountMode::Fraction => s0 / (n_nodes * feat_dim) as f64,
        };
        e_encoding += E_MAC_PJ * (n_nodes * feat_dim) as f64 * encoding_term;
        for l in 1..row.len() {
            e_spiking += E_SOP_PJ * row[l] as f64;
        }
    }
    let total = e_encoding + e_spiking;
    Ok(EnergyReport {
        e_mac_pj: E_MAC_PJ,
        e_sop_pj: E_SOP_PJ,
        encoding_mode: mode,
        e_encoding_pj: e_encoding,
        e_spiking_pj: e_spiking,
        total_pj: total,
        total_mj: total / 1e9,
        spike_counts: spike_counts.rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}

/// Dense-network reference cost: one MAC per weight application plus one per
/// edge-wise aggregation.
pub fn ann_energy(n_nodes: usize, d_in: usize, d_out: usize, n_edges: usize) -> f64 {
    E_MAC_PJ * ((n_nodes * d_in * d_out) as f64 + (n_edges * d_out) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn zero_spikes_zero_energy() {
        let counts = Array2::<u64>::zeros((3, 2));
        let rep = snn_energy(counts.view(), 4, 5, EncodingCountMode::Count).unwrap();
        assert_eq!(rep.total_pj, 0.0);
        assert_eq!(rep.e_encoding_pj + rep.e_spiking_pj, rep.total_pj);
    }

    #[test]
    fn hand_evaluated_snn_case() {
        // T=1, N=2, d=3, one encoding spike, four hidden spikes
        let counts = array![[1u64, 4u64]];
        let rep = snn_energy(counts.view(), 2, 3, EncodingCountMode::Count).unwrap();
        assert!((rep.e_encoding_pj - 27.6).abs() < 1e-12);
        assert!((rep.e_spiking_pj - 14.8).abs() < 1e-12);
        assert!((rep.total_pj - 42.4).abs() < 1e-12);
    }

    #[test]
    fn constants_are_fixed() {
        assert_eq!(E_MAC_PJ, 4.6);
        assert_eq!(E_SOP_PJ, 3.7);
    }

    #[test]
    fn fraction_mode_divides_by_layer_size() {
        let counts = array![[6u64, 0u64]];
        let count_mode = snn_energy(counts.view(), 2, 3, EncodingCountMode::Count).unwrap();
        let frac_mode = snn_energy(counts.view(), 2, 3, EncodingCountMode::Fraction).unwrap();
        assert!((count_mode.e_encoding_pj / frac_mode.e_encoding_pj - 6.0).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_ann_case() {
        assert!((ann_energy(1, 1, 1, 0) - 4.6).abs() < 1e-12);
        assert!((ann_energy(10, 4, 2, 20) - 552.0).abs() < 1e-12);
    }

    #[test]
    fn ann_energy_is_linear_in_edges() {
        let base = ann_energy(10, 4, 2, 20);
        let doubled = ann_energy(10, 4, 2, 40);
        assert!((doubled - base - 4.6 * 20.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn more_spikes_cost_more() {
        let a = snn_energy(array![[1u64, 2u64]].view(), 2, 3, EncodingCountMode::Count).unwrap();
        let b = snn_energy(array![[1u64, 3u64]].view(), 2, 3, EncodingCountMode::Count).unwrap();
        assert!(b.total_pj > a.total_pj);
    }

    #[test]
    fn report_serializes_constants_verbatim() {
        let rep = snn_energy(array![[1u64, 4u64]].view(), 2, 3, EncodingCountMode::Count).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"e_mac_pj\":4.6"));
        assert!(json.contains("\"e_sop_pj\":3.7"));
    }
}
