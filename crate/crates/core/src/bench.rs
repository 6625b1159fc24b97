//! Forward-pass latency and energy measurement.
//!
//! The protocol times only the forward call on a monotonic clock:
//! inputs are prepared by the caller, warmup runs populate caches, then
//! a fixed number of measured runs feed the statistics. The headline
//! statistic is the median (robust to scheduler noise); mean and
//! standard deviation ride along. Energy is derived, not measured:
//! `E = P_w * T` with the platform power supplied by configuration.

use std::time::Instant;

use serde::Serialize;

use crate::complexity::{network_report, LayerCost};
use crate::error::{Error, Result};
use crate::hbds::{ForwardOptions, Network, NetworkSpec};
use crate::scalar::Real;
use crate::tensor::FloatTensor;

/// Measurement protocol configuration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
    /// Engine threads; 1 is the fair-comparison "1T" mode.
    pub threads: usize,
    /// Platform power draw in watts, for the energy column.
    pub power_watts: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 10, runs: 100, threads: 1, power_watts: None }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("need at least one measured run".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("thread count must be >= 1".into()));
        }
        if let Some(p) = self.power_watts {
            if !(p > 0.0) {
                return Err(Error::InvalidParameter("power must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Median / mean / standard deviation over the measured runs, seconds.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct TimingStats {
    pub median_s: f64,
    pub mean_s: f64,
    pub stddev_s: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        assert!(!samples.is_empty());
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_s = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let mean_s = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|s| (s - mean_s).powi(2)).sum::<f64>() / n as f64;
        Self { median_s, mean_s, stddev_s: var.sqrt() }
    }
}

/// Per-layer timing with the matching complexity counts.
#[derive(Clone, Debug, Serialize)]
pub struct LayerTiming {
    pub name: String,
    pub macs_fp32: u64,
    pub macs_1bit: u64,
    pub stats: TimingStats,
}

/// Output of [`time_inference`].
#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub layers: Vec<LayerTiming>,
    pub total: TimingStats,
    /// Median first-layer time over median total time.
    pub first_stage_share: f64,
    pub energy_joules: Option<f64>,
    pub runs: usize,
    pub threads: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,macs_fp32,macs_1bit,median_ms,mean_ms,stddev_ms\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                l.name,
                l.macs_fp32,
                l.macs_1bit,
                l.stats.median_s * 1e3,
                l.stats.mean_s * 1e3,
                l.stats.stddev_s * 1e3
            ));
        }
        out.push_str(&format!(
            "total,,,{:.6},{:.6},{:.6}\n",
            self.total.median_s * 1e3,
            self.total.mean_s * 1e3,
            self.total.stddev_s * 1e3
        ));
        out
    }
}

/// Time forward passes of `net` over pre-built inputs.
pub fn time_inference<R: Real>(
    net: &Network<R>,
    inputs: &[FloatTensor<R>],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("need at least one input".into()));
    }
    let opts = ForwardOptions { timing: true, threads: cfg.threads };
    let n_layers = net.spec().layers.len();

    for i in 0..cfg.warmup {
        net.forward(&inputs[i % inputs.len()], &opts)?;
    }

    let mut per_layer: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.runs); n_layers];
    let mut totals = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let input = &inputs[run % inputs.len()];
        let t0 = Instant::now();
        let fwd = net.forward(input, &opts)?;
        totals.push(t0.elapsed().as_secs_f64());
        for (layer, t) in per_layer.iter_mut().zip(&fwd.layer_times) {
            layer.push(t.as_secs_f64());
        }
    }

    let costs = network_report(net.spec())?;
    let names = net.spec().layer_names();
    let layers: Vec<LayerTiming> = per_layer
        .iter()
        .zip(names)
        .zip(&costs.layers)
        .map(|((samples, name), cost): ((&Vec<f64>, String), &LayerCost)| LayerTiming {
            name,
            macs_fp32: cost.macs_fp32,
            macs_1bit: cost.macs_1bit,
            stats: TimingStats::from_samples(samples),
        })
        .collect();
    let total = TimingStats::from_samples(&totals);
    let first_stage_share = layers[0].stats.median_s / total.median_s;
    let energy_joules = cfg.power_watts.map(|p| p * total.median_s);

    Ok(BenchReport {
        layers,
        total,
        first_stage_share,
        energy_joules,
        runs: cfg.runs,
        threads: cfg.threads,
    })
}

/// Energy per processed image: `E = P_w * T`.
pub fn energy(t_seconds: f64, p_watts: f64) -> Result<f64> {
    if !(t_seconds > 0.0) || !(p_watts > 0.0) {
        return Err(Error::InvalidParameter("time and power must be > 0".into()));
    }
    Ok(t_seconds * p_watts)
}

/// One row of a depth-multiplier sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub depth_multiplier: usize,
    pub total: TimingStats,
    pub first_stage: TimingStats,
    pub first_stage_share: f64,
    pub energy_joules: Option<f64>,
    pub first_macs_fp32: u64,
    pub first_macs_1bit: u64,
    pub first_params_fp32: u64,
    pub first_params_1bit: u64,
}

/// Benchmark `template(d)` for every requested depth multiplier.
/// Networks get seeded random weights; the input is one seeded random
/// tensor of the network's input shape.
pub fn sweep_depth_multiplier<R: Real>(
    template: impl Fn(usize) -> NetworkSpec,
    d_list: &[usize],
    cfg: &BenchConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let spec = template(d);
        let net = Network::<R>::random(&spec, seed)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
            seed.wrapping_add(1),
        );
        let input = FloatTensor::<R>::random(spec.input, &mut rng, 0.0, 1.0);
        let report = time_inference(&net, &[input], cfg)?;
        let costs = network_report(&spec)?;
        rows.push(SweepRow {
            depth_multiplier: d,
            total: report.total,
            first_stage: report.layers[0].stats,
            first_stage_share: report.first_stage_share,
            energy_joules: report.energy_joules,
            first_macs_fp32: costs.layers[0].macs_fp32,
            first_macs_1bit: costs.layers[0].macs_1bit,
            first_params_fp32: costs.layers[0].params_fp32,
            first_params_1bit: costs.layers[0].params_1bit,
        });
    }
    Ok(rows)
}

/// CSV for sweep rows (times in milliseconds).
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "d,first_ms,total_ms,first_share,energy_mj,first_macs_fp32,first_macs_1bit,first_params_fp32,first_params_1bit\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.4},{},{},{},{},{}\n",
            r.depth_multiplier,
            r.first_stage.median_s * 1e3,
            r.total.median_s * 1e3,
            r.first_stage_share,
            r.energy_joules.map_or(String::new(), |e| format!("{:.6}", e * 1e3)),
            r.first_macs_fp32,
            r.first_macs_1bit,
            r.first_params_fp32,
            r.first_params_1bit
        ));
    }
    out
}

/// Plot-ready `(d, total median ms)` series for latency-versus-d plots.
pub fn latency_series(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.depth_multiplier as f64, r.total.median_s * 1e3)).collect()
}
