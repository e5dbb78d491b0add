//! Destructive treatments applied to one layer of a network copy.
//!
//! * Synapse knockout zeroes `round(p·Nw)` weight entries and, drawn
//!   separately, `round(p·Nb)` bias entries, sampled without replacement.
//! * Node knockout zeroes `round(p·nodes)` whole nodes: a conv filter's
//!   kernel slice or a dense unit's weight row, together with its bias.
//! * Gaussian mutation adds `N(0, (m·σ)²)` to every entry, with σ the
//!   population standard deviation of the unperturbed weights (for weights)
//!   or biases (for biases).
//!
//! Rounding is half away from zero. Randomness is consumed in a fixed order:
//! weights first, then biases.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Network;
use crate::rng::{fnv1a64, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    SynapseKnockout,
    NodeKnockout,
    Gaussian,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::SynapseKnockout, Treatment::NodeKnockout, Treatment::Gaussian];

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::SynapseKnockout => "synapse_knockout",
            Treatment::NodeKnockout => "node_knockout",
            Treatment::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn is_knockout(self) -> bool {
        !matches!(self, Treatment::Gaussian)
    }

    /// Checks a magnitude for this treatment: a proportion in `[0, 1]` for
    /// knockouts, a non-negative finite scale for Gaussian mutation.
    pub fn validate_magnitude(self, magnitude: f64) -> Result<()> {
        let ok = if self.is_knockout() {
            (0.0..=1.0).contains(&magnitude)
        } else {
            magnitude.is_finite() && magnitude >= 0.0
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("magnitude {} is invalid for {}", magnitude, self.as_str()))
        }
    }
}

impl core::fmt::Display for Treatment {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub treatment: Treatment,
    pub layer: String,
    pub magnitude: f64,
    pub seed: u64,
}

/// Mean and standard deviation of the deltas actually applied to one
/// parameter class by a Gaussian mutation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub count: usize,
    /// Reference σ of the unperturbed parameters.
    pub reference_sigma: f64,
    pub mean: f64,
    pub std: f64,
    /// σ was zero (or undefined) while the magnitude was positive, so no
    /// deltas were applied.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReceiptDetail {
    Knockout {
        weights_zeroed: usize,
        biases_zeroed: usize,
        /// Nodes removed; zero for synapse knockouts.
        nodes_removed: usize,
    },
    Gaussian {
        weights: DeltaSummary,
        biases: DeltaSummary,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReceipt {
    pub treatment: Treatment,
    pub layer: String,
    pub magnitude: f64,
    pub detail: ReceiptDetail,
    /// FNV-1a over the selected weight indices then bias indices (ascending,
    /// u64 little-endian); zero for Gaussian mutation.
    pub indices_hash: u64,
}

/// Applies `spec` to a copy of `network`; the input is never modified.
pub fn apply(network: &Network, spec: &PerturbationSpec) -> Result<(Network, PerturbationReceipt)> {
    let mut rng = Rng::from_seed(spec.seed);
    match spec.treatment {
        Treatment::SynapseKnockout => synapse_knockout(network, &spec.layer, spec.magnitude, &mut rng),
        Treatment::NodeKnockout => node_knockout(network, &spec.layer, spec.magnitude, &mut rng),
        Treatment::Gaussian => gaussian_perturb(network, &spec.layer, spec.magnitude, &mut rng),
    }
}

/// Knockout count for proportion `p` of `n` entries.
pub fn knockout_count(p: f64, n: usize) -> usize {
    libm::round(p * n as f64) as usize
}

fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.partial_shuffle(&mut idx, k);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn hash_indices(groups: &[&[usize]]) -> u64 {
    let mut bytes = Vec::new();
    for g in groups {
        for &i in g.iter() {
            bytes.extend_from_slice(&(i as u64).to_le_bytes());
        }
    }
    fnv1a64(&bytes)
}

pub fn synapse_knockout(
    network: &Network,
    layer: &str,
    p: f64,
    rng: &mut Rng,
) -> Result<(Network, PerturbationReceipt)> {
    Treatment::SynapseKnockout.validate_magnitude(p)?;
    let mut copy = network.clone();
    let params = copy.params_mut(layer)?;
    let kw = knockout_count(p, params.weights.len());
    let w_idx = sample_indices(params.weights.len(), kw, rng);
    let kb = knockout_count(p, params.biases.len());
    let b_idx = sample_indices(params.biases.len(), kb, rng);
    for &i in &w_idx {
        params.weights.data_mut()[i] = 0.0;
    }
    for &i in &b_idx {
        params.biases.data_mut()[i] = 0.0;
    }
    let receipt = PerturbationReceipt {
        treatment: Treatment::SynapseKnockout,
        layer: layer.into(),
        magnitude: p,
        detail: ReceiptDetail::Knockout { weights_zeroed: kw, biases_zeroed: kb, nodes_removed: 0 },
        indices_hash: hash_indices(&[&w_idx, &b_idx]),
    };
    Ok((copy, receipt))
}

/// Removes whole output nodes. The node count is the leading extent of the
/// weight tensor (filters for conv2d, units for dense).
pub fn node_knockout(
    network: &Network,
    layer: &str,
    p: f64,
    rng: &mut Rng,
) -> Result<(Network, PerturbationReceipt)> {
    Treatment::NodeKnockout.validate_magnitude(p)?;
    let mut copy = network.clone();
    let params = copy.params_mut(layer)?;
    let nodes = params.weights.shape()[0];
    let fan_in = params.weights.len() / nodes;
    let k = knockout_count(p, nodes);
    let selected = sample_indices(nodes, k, rng);
    for &node in &selected {
        params.weights.data_mut()[node * fan_in..(node + 1) * fan_in].fill(0.0);
        params.biases.data_mut()[node] = 0.0;
    }
    let w_idx: Vec<usize> = selected.iter().flat_map(|&n| n * fan_in..(n + 1) * fan_in).collect();
    let receipt = PerturbationReceipt {
        treatment: Treatment::NodeKnockout,
        layer: layer.into(),
        magnitude: p,
        detail: ReceiptDetail::Knockout { weights_zeroed: k * fan_in, biases_zeroed: k, nodes_removed: k },
        indices_hash: hash_indices(&[&w_idx, &selected]),
    };
    Ok((copy, receipt))
}

/// Population standard deviation, zero when fewer than two values.
fn population_sigma(values: &[f32]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let m2 = values.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    libm::sqrt(m2)
}

fn mutate(values: &mut [f32], scale: f64, rng: &mut Rng) -> DeltaSummary {
    let reference_sigma = population_sigma(values);
    let std_dev = scale * reference_sigma;
    let degenerate = scale > 0.0 && reference_sigma == 0.0;
    if std_dev == 0.0 {
        return DeltaSummary { count: values.len(), reference_sigma, mean: 0.0, std: 0.0, degenerate };
    }
    let (mut sum, mut sum_sq) = (0f64, 0f64);
    for v in values.iter_mut() {
        let old = *v;
        *v = (old as f64 + std_dev * rng.normal()) as f32;
        let applied = *v as f64 - old as f64;
        sum += applied;
        sum_sq += applied * applied;
    }
    let n = values.len() as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    DeltaSummary { count: values.len(), reference_sigma, mean, std: libm::sqrt(var), degenerate }
}

pub fn gaussian_perturb(
    network: &Network,
    layer: &str,
    m: f64,
    rng: &mut Rng,
) -> Result<(Network, PerturbationReceipt)> {
    Treatment::Gaussian.validate_magnitude(m)?;
    let mut copy = network.clone();
    let params = copy.params_mut(layer)?;
    let weights = mutate(params.weights.data_mut(), m, rng);
    let biases = mutate(params.biases.data_mut(), m, rng);
    if !params.weights.is_finite() || !params.biases.is_finite() {
        return Err(Error::NonFinite(alloc::format!("gaussian mutation of `{}` at magnitude {}", layer, m)));
    }
    let receipt = PerturbationReceipt {
        treatment: Treatment::Gaussian,
        layer: layer.into(),
        magnitude: m,
        detail: ReceiptDetail::Gaussian { weights, biases },
        indices_hash: 0,
    };
    Ok((copy, receipt))
}
