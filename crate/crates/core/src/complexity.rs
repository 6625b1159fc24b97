//! Exact MAC and parameter accounting for network specs.
//!
//! Costs are multiply-accumulate counts held as exact integers; ratios
//! (factorization speedup, binary/full-precision MAC shares) are exact
//! rationals evaluated lazily to `f64` for display. Pooling, batchnorm
//! and binarization contribute zero MACs; convolution MACs are the
//! nominal products, counting padded positions.
//!
//! Parameter accounting per layer:
//!
//! * standard conv: `k^2 * c_i * c_o` float weights (+ `c_o` bias when
//!   present), no binary params
//! * HB-DS: `k^2 * c_i * d` float depthwise weights + `d * c_i` biases +
//!   `2 * d * c_i` batchnorm scale/shift, and `d * c_i * c_o` binary
//!   pointwise weights
//! * binary conv: `2 * c_i` float batchnorm params over its input,
//!   `k^2 * c_i * c_o` binary weights

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::error::Result;
use crate::hbds::{LayerSpec, NetworkSpec};

/// MACs of a standard convolution: `(k^2 c_i) h_o w_o c_o`.
pub fn c_conv(k: u64, c_i: u64, h_o: u64, w_o: u64, c_o: u64) -> u64 {
    k * k * c_i * h_o * w_o * c_o
}

/// MACs of a depthwise convolution with depth multiplier `d`:
/// `d k^2 c_i h_o w_o`.
pub fn c_depth(k: u64, c_i: u64, h_o: u64, w_o: u64, d: u64) -> u64 {
    d * k * k * c_i * h_o * w_o
}

/// MACs of a pointwise (`1 x 1`) convolution over `c_i_eff` channels:
/// `c_i_eff h_o w_o c_o`.
pub fn c_point(c_i_eff: u64, h_o: u64, w_o: u64, c_o: u64) -> u64 {
    c_i_eff * h_o * w_o * c_o
}

/// Total MACs of the separable factorization (depthwise + pointwise).
pub fn c_sep(k: u64, c_i: u64, h_o: u64, w_o: u64, c_o: u64, d: u64) -> u64 {
    c_depth(k, c_i, h_o, w_o, d) + c_point(d * c_i, h_o, w_o, c_o)
}

/// Exact complexity ratio of a standard conv over its separable
/// factorization: `k^2 c_o / (d (c_o + k^2))`.
pub fn speedup_ratio(k: u64, c_o: u64, d: u64) -> Ratio<u64> {
    Ratio::new(k * k * c_o, d * (c_o + k * k))
}

/// Share of separable MACs that are binary (the pointwise stage):
/// `c_o / (k^2 + c_o)`.
pub fn binary_share(k: u64, c_o: u64) -> Ratio<u64> {
    Ratio::new(c_o, k * k + c_o)
}

/// Share of separable MACs that stay full precision (the depthwise
/// stage): `k^2 / (k^2 + c_o)`.
pub fn fp_share(k: u64, c_o: u64) -> Ratio<u64> {
    Ratio::new(k * k, k * k + c_o)
}

/// Per-layer parameter and MAC counts, split by precision.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params_fp32: u64,
    pub params_1bit: u64,
    pub macs_fp32: u64,
    pub macs_1bit: u64,
}

impl LayerCost {
    fn add(&mut self, other: &LayerCost) {
        self.params_fp32 += other.params_fp32;
        self.params_1bit += other.params_1bit;
        self.macs_fp32 += other.macs_fp32;
        self.macs_1bit += other.macs_1bit;
    }
}

/// Whole-network accounting plus first-stage ratios.
#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub layers: Vec<LayerCost>,
    pub total: LayerCost,
    /// MACs a standard conv of the same geometry would need, divided by
    /// the first stage's actual MACs (1.0 for a standard first stage).
    pub first_stage_speedup: f64,
    pub first_stage_binary_mac_share: f64,
    pub first_stage_fp_mac_share: f64,
}

/// Format a raw MAC count in millions with one decimal.
pub fn macs_millions(macs: u64) -> f64 {
    (macs as f64 / 1e5).round() / 10.0
}

impl ComplexityReport {
    /// Plain text table, one row per layer plus totals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>12} {:>12} {:>12} {:>12}\n",
            "layer", "params32", "params1b", "MAC32[M]", "MAC1b[M]"
        ));
        for row in self.layers.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!(
                "{:<22} {:>12} {:>12} {:>12.1} {:>12.1}\n",
                row.name,
                row.params_fp32,
                row.params_1bit,
                macs_millions(row.macs_fp32),
                macs_millions(row.macs_1bit),
            ));
        }
        out.push_str(&format!(
            "first stage: speedup {:.2}, binary MAC share {:.4}, fp MAC share {:.4}\n",
            self.first_stage_speedup,
            self.first_stage_binary_mac_share,
            self.first_stage_fp_mac_share
        ));
        out
    }
}

impl std::fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Account every layer of `spec`.
pub fn network_report(spec: &NetworkSpec) -> Result<ComplexityReport> {
    spec.validate()?;
    let shapes = spec.layer_shapes()?;

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut input = spec.input;
    for (i, (ls, out)) in spec.layers.iter().zip(&shapes).enumerate() {
        let (h_o, w_o) = (out.height as u64, out.width as u64);
        let c_i = input.channels as u64;
        let cost = match *ls {
            LayerSpec::StandardConv { kernel, out_channels, bias, .. } => {
                let (k, c_o) = (kernel as u64, out_channels as u64);
                LayerCost {
                    name: ls.name(i),
                    params_fp32: k * k * c_i * c_o + if bias { c_o } else { 0 },
                    params_1bit: 0,
                    macs_fp32: c_conv(k, c_i, h_o, w_o, c_o),
                    macs_1bit: 0,
                }
            }
            LayerSpec::Hbds(h) => {
                let (k, c_o, d) =
                    (h.kernel as u64, h.out_channels as u64, h.depth_multiplier as u64);
                let hidden = d * c_i;
                LayerCost {
                    name: ls.name(i),
                    // depthwise weights + bias + batchnorm scale/shift
                    params_fp32: k * k * c_i * d + hidden + 2 * hidden,
                    params_1bit: hidden * c_o,
                    macs_fp32: c_depth(k, c_i, h_o, w_o, d),
                    macs_1bit: c_point(hidden, h_o, w_o, c_o),
                }
            }
            LayerSpec::BinaryConv { kernel, out_channels, .. } => {
                let (k, c_o) = (kernel as u64, out_channels as u64);
                LayerCost {
                    name: ls.name(i),
                    params_fp32: 2 * c_i, // input batchnorm
                    params_1bit: k * k * c_i * c_o,
                    macs_fp32: 0,
                    macs_1bit: c_conv(k, c_i, h_o, w_o, c_o),
                }
            }
            LayerSpec::MaxPool { .. } => LayerCost { name: ls.name(i), ..Default::default() },
        };
        layers.push(cost);
        input = *out;
    }

    let mut total = LayerCost { name: "total".into(), ..Default::default() };
    for l in &layers {
        total.add(l);
    }

    let first = &layers[0];
    let first_shape = &shapes[0];
    let (speedup, bin_share, fp) = match spec.layers[0] {
        LayerSpec::Hbds(h) => {
            let equivalent = c_conv(
                h.kernel as u64,
                spec.input.channels as u64,
                first_shape.height as u64,
                first_shape.width as u64,
                h.out_channels as u64,
            );
            let actual = first.macs_fp32 + first.macs_1bit;
            (
                ratio_f64(Ratio::new(equivalent, actual)),
                ratio_f64(Ratio::new(first.macs_1bit, actual)),
                ratio_f64(Ratio::new(first.macs_fp32, actual)),
            )
        }
        _ => (1.0, 0.0, 1.0),
    };

    Ok(ComplexityReport {
        layers,
        total,
        first_stage_speedup: speedup,
        first_stage_binary_mac_share: bin_share,
        first_stage_fp_mac_share: fp,
    })
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    r.to_f64().expect("ratio fits f64")
}
