//! Parameter counts, analytic FLOPs and measured throughput.
//!
//! FLOP convention: 2 per multiply-accumulate, 1 per bias add, 1 per
//! activation element, 3 comparisons per 2×2 max-pool output.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::model::{Layer, Network};
use crate::nn::ConvConfig;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub params: u64,
    pub flops: u64,
    /// Median forward passes per second; `None` when not measured.
    pub fps: Option<f64>,
    pub input_shape: Vec<usize>,
    pub threads: usize,
}

impl ComplexityReport {
    pub const CSV_HEADER: &'static str = "params,flops,fps,input_shape,batch,threads";

    pub fn csv_row(&self) -> String {
        let shape: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        format!(
            "{},{},{},{},{},{}",
            self.params,
            self.flops,
            self.fps.map_or(String::new(), |f| format!("{f:.3}")),
            shape.join("x"),
            self.input_shape.first().copied().unwrap_or(0),
            self.threads
        )
    }
}

pub fn count_params(net: &Network) -> u64 {
    net.params().iter().map(|p| p.tensor.numel() as u64).sum()
}

/// FLOPs of one full convolution over an `h×w` input, per image.
pub fn conv_flops(cfg: &ConvConfig, h: usize, w: usize, bias: bool) -> Result<u64> {
    let (oh, ow) = cfg.output_hw(h, w)?;
    let macs = cfg.macs_per_image(h, w)? as u64;
    let bias_ops = if bias {
        (cfg.out_channels * oh * ow) as u64
    } else {
        0
    };
    Ok(2 * macs + bias_ops)
}

/// FLOPs of a rank-`r` factorized layer emulating `cfg`, per image.
pub fn sfconv_flops(cfg: &ConvConfig, rank: usize, h: usize, w: usize, bias: bool) -> Result<u64> {
    let (stage1, stage2) = stage_configs(cfg, rank);
    let (h1, w1) = stage1.output_hw(h, w)?;
    let (oh, ow) = stage2.output_hw(h1, w1)?;
    let macs = stage1.macs_per_image(h, w)? + stage2.macs_per_image(h1, w1)?;
    let bias_ops = if bias {
        (cfg.out_channels * oh * ow) as u64
    } else {
        0
    };
    Ok(2 * macs as u64 + bias_ops)
}

fn stage_configs(cfg: &ConvConfig, rank: usize) -> (ConvConfig, ConvConfig) {
    let k = cfg.kernel_h;
    (
        ConvConfig {
            kernel_h: 1,
            kernel_w: k,
            stride_h: 1,
            stride_w: cfg.stride_w,
            pad_h: 0,
            pad_w: cfg.pad_w,
            in_channels: cfg.in_channels,
            out_channels: rank,
        },
        ConvConfig {
            kernel_h: k,
            kernel_w: 1,
            stride_h: cfg.stride_h,
            stride_w: 1,
            pad_h: cfg.pad_h,
            pad_w: 0,
            in_channels: rank,
            out_channels: cfg.out_channels,
        },
    )
}

/// The rank below which the factorized layer is cheaper than the full
/// convolution at this input size:
/// `k·c_in·c_out·h' / (c_in·h + c_out·h')`, with `h` the input height and
/// `h'` the output height (both stages share the output width).
pub fn sfconv_rank_threshold(cfg: &ConvConfig, h: usize, w: usize) -> Result<f64> {
    let (oh, _) = cfg.output_hw(h, w)?;
    let k = cfg.kernel_h as f64;
    let (ci, co) = (cfg.in_channels as f64, cfg.out_channels as f64);
    Ok(k * ci * co * oh as f64 / (ci * h as f64 + co * oh as f64))
}

/// FLOPs of each node for an input of `input_shape`.
pub fn layer_flops(net: &Network, input_shape: &[usize]) -> Result<Vec<u64>> {
    let shapes = net.infer_shapes(input_shape)?;
    net.nodes()
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let input = &shapes[node.inputs[0]];
            let output = &shapes[i + 1];
            let batch = input[0] as u64;
            let out_elems: u64 = output.iter().product::<usize>() as u64;
            Ok(match &node.layer {
                Layer::Conv { cfg, bias, .. } => {
                    batch * conv_flops(cfg, input[2], input[3], bias.is_some())?
                }
                Layer::SfConv(f) => {
                    batch
                        * sfconv_flops(f.config(), f.rank(), input[2], input[3], f.bias.is_some())?
                }
                Layer::Relu => out_elems,
                Layer::MaxPool => 3 * out_elems,
                Layer::Upsample | Layer::Concat => 0,
                Layer::Dense { weight, .. } => {
                    batch * (2 * weight.numel() as u64 + weight.rows() as u64)
                }
            })
        })
        .collect()
}

pub fn count_flops(net: &Network, input_shape: &[usize]) -> Result<u64> {
    Ok(layer_flops(net, input_shape)?.iter().sum())
}

/// Median of `batch / wall-time` over `trials` forward passes after
/// `warmup` untimed passes, single-threaded.
pub fn measure_fps(
    net: &Network,
    input_shape: &[usize],
    trials: usize,
    warmup: usize,
) -> Result<f64> {
    if trials < 3 {
        return Err(Error::Config(format!(
            "measure_fps needs at least 3 trials, got {trials}"
        )));
    }
    let numel: usize = input_shape.iter().product();
    let input = Tensor::new(
        input_shape.to_vec(),
        (0..numel)
            .map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5)
            .collect(),
    )?;
    for _ in 0..warmup {
        std::hint::black_box(net.predict(&input)?);
    }
    let batch = input_shape[0] as f64;
    let mut rates = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        std::hint::black_box(net.predict(&input)?);
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(batch / secs);
    }
    rates.sort_by(f64::total_cmp);
    Ok(rates[trials / 2])
}

pub fn report(
    net: &Network,
    input_shape: &[usize],
    timing: Option<(usize, usize)>,
) -> Result<ComplexityReport> {
    let fps = match timing {
        Some((trials, warmup)) => Some(measure_fps(net, input_shape, trials, warmup)?),
        None => None,
    };
    Ok(ComplexityReport {
        params: count_params(net),
        flops: count_flops(net, input_shape)?,
        fps,
        input_shape: input_shape.to_vec(),
        threads: 1,
    })
}
