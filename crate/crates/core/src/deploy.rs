//! Deployment planner for a GAP8-class target: dual-level memory (64 KB L1
//! scratchpad, 512 KB L2), an 8-core cluster that sustains about 2.2 MACs
//! per cycle on int8 convolutions, and two calibrated operating points.
//!
//! Everything here is static arithmetic over layer shapes; no hardware is
//! involved. Byte accounting assumes the deployed int8 artifact: 1-byte
//! weights and activations, 4-byte biases, double-buffered DMA transfers.

use crate::error::{Error, Result};
use crate::layer::{LayerDesc, LayerKind};
use serde::{Deserialize, Serialize};

/// Sustained MACs per cluster cycle for int8 convolutions.
pub const MAC_EFFICIENCY: f64 = 2.2;

/// Measured share of total platform power drawn by the vision SoC.
pub const PLATFORM_POWER_SHARE: f64 = 0.0143;

/// One voltage/frequency configuration with its measured power draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub name: String,
    pub cl_freq_hz: f64,
    /// SoC draw while running the network.
    pub soc_power_mw: f64,
    /// Camera and board overhead on top of the SoC.
    pub board_overhead_mw: f64,
}

impl OperatingPoint {
    pub fn min_power() -> Self {
        OperatingPoint {
            name: "min-power".into(),
            cl_freq_hz: 25.0e6,
            soc_power_mw: 10.7,
            board_overhead_mw: 8.8,
        }
    }

    pub fn max_performance() -> Self {
        OperatingPoint {
            name: "max-performance".into(),
            cl_freq_hz: 175.0e6,
            soc_power_mw: 100.8,
            board_overhead_mw: 8.8,
        }
    }

    pub fn system_power_mw(&self) -> f64 {
        self.soc_power_mw + self.board_overhead_mw
    }
}

/// Full-platform power implied by the SoC share measurement.
pub fn implied_platform_power_mw(system_power_mw: f64) -> f64 {
    system_power_mw / PLATFORM_POWER_SHARE
}

/// Memory limits of the target, plus a fixed allowance for runtime code
/// resident in L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub code_bytes: usize,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget { l1_bytes: 64 * 1024, l2_bytes: 512 * 1024, code_bytes: 40 * 1024 }
    }
}

/// Shapes of every activation tensor in the chain, input included.
pub fn activation_shapes(
    layers: &[LayerDesc],
    input_shape: (usize, usize, usize),
) -> Result<Vec<(usize, usize, usize)>> {
    let mut shapes = vec![input_shape];
    let mut shape = input_shape;
    for desc in layers {
        shape = desc.output_shape(shape)?;
        shapes.push(shape);
    }
    Ok(shapes)
}

/// MACs of one conv layer given its input spatial size:
/// H_out * W_out * C_out * kh * kw * C_in. Activation layers cost zero.
pub fn per_layer_macs(layers: &[LayerDesc], input_shape: (usize, usize, usize)) -> Vec<u64> {
    let mut shape = input_shape;
    let mut macs = Vec::new();
    for desc in layers {
        let out = desc.output_shape(shape).unwrap_or((0, 0, 0));
        let m = match desc.kind {
            LayerKind::Conv2d | LayerKind::PointwiseConv => {
                let (kh, kw) = desc.kernel;
                (out.1 * out.2 * desc.out_channels * kh * kw * desc.in_channels) as u64
            }
            LayerKind::Activation(_) => 0,
        };
        macs.push(m);
        shape = out;
    }
    macs
}

pub fn count_macs(layers: &[LayerDesc], input_shape: (usize, usize, usize)) -> u64 {
    per_layer_macs(layers, input_shape).iter().sum()
}

/// Cycle estimate at a given MAC/cycle efficiency, rounded up. Quotients
/// within 1e-6 of an integer snap to it first so that exact ratios (for
/// example 9.68e6 / 2.2) do not pick up a spurious extra cycle from
/// floating-point division.
pub fn estimate_cycles(macs: u64, efficiency: f64) -> u64 {
    assert!(efficiency > 0.0, "efficiency must be positive");
    let q = macs as f64 / efficiency;
    let nearest = q.round();
    if (q - nearest).abs() < 1e-6 {
        nearest as u64
    } else {
        q.ceil() as u64
    }
}

/// Frame rate, power, and energy at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePower {
    pub point: OperatingPoint,
    pub fps: f64,
    pub soc_power_mw: f64,
    pub system_power_mw: f64,
    pub energy_per_frame_mj: f64,
}

pub fn estimate_rate_power(cycles: u64, point: &OperatingPoint) -> RatePower {
    let fps = point.cl_freq_hz / cycles as f64;
    RatePower {
        point: point.clone(),
        fps,
        soc_power_mw: point.soc_power_mw,
        system_power_mw: point.system_power_mw(),
        energy_per_frame_mj: point.soc_power_mw / fps,
    }
}

/// Persistent L2 residency of the deployed artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct L2Residency {
    /// int8 weights plus 4-byte biases for every conv layer.
    pub param_bytes: usize,
    /// Two camera frames (double buffered capture).
    pub image_bytes: usize,
    /// Two ping-pong activation buffers, each sized to the largest
    /// activation tensor in the chain.
    pub activation_bytes: usize,
    /// Fixed allowance for runtime code.
    pub code_bytes: usize,
}

impl L2Residency {
    pub fn total(&self) -> usize {
        self.param_bytes + self.image_bytes + self.activation_bytes + self.code_bytes
    }
}

/// int8 parameter bytes: one byte per weight, four per bias value.
pub fn int8_param_bytes(layers: &[LayerDesc]) -> usize {
    layers
        .iter()
        .filter(|d| d.is_conv())
        .map(|d| d.out_channels * d.in_channels * d.kernel.0 * d.kernel.1 + 4 * d.out_channels)
        .sum()
}

pub fn l2_residency(
    layers: &[LayerDesc],
    input_shape: (usize, usize, usize),
    budget: &MemoryBudget,
) -> Result<L2Residency> {
    let shapes = activation_shapes(layers, input_shape)?;
    let largest = shapes.iter().map(|&(c, h, w)| c * h * w).max().unwrap_or(0);
    Ok(L2Residency {
        param_bytes: int8_param_bytes(layers),
        image_bytes: 2 * input_shape.1 * input_shape.2 * input_shape.0,
        activation_bytes: 2 * largest,
        code_bytes: budget.code_bytes,
    })
}

/// L1 tile chosen for one conv layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPlan {
    pub layer_index: usize,
    pub label: String,
    pub macs: u64,
    pub cycles: u64,
    /// Output rows per tile (full output width).
    pub tile_rows: usize,
    /// L1 footprint of the double-buffered tile set.
    pub l1_bytes: usize,
}

/// Complete deployment plan: L2 residency plus a per-layer L1 tiling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeployPlan {
    pub l2: L2Residency,
    pub layers: Vec<LayerPlan>,
    pub total_macs: u64,
    pub total_cycles: u64,
}

fn layer_label(desc: &LayerDesc) -> String {
    match desc.kind {
        LayerKind::Conv2d => format!(
            "conv{}x{} {}->{} s{}",
            desc.kernel.0, desc.kernel.1, desc.in_channels, desc.out_channels, desc.stride
        ),
        LayerKind::PointwiseConv => format!("pointwise {}->{}", desc.in_channels, desc.out_channels),
        LayerKind::Activation(_) => "activation".into(),
    }
}

/// L1 bytes for a tile of `rows` output rows of one conv layer, counting
/// the padded input slab, the full weight set (int8 weights, int32 biases),
/// and the output slab, all doubled for ping-pong DMA.
fn tile_bytes(desc: &LayerDesc, in_shape: (usize, usize, usize), out_shape: (usize, usize, usize), rows: usize) -> usize {
    let (_, ih, iw) = in_shape;
    let (oc, _, ow) = out_shape;
    let (kh, kw) = desc.kernel;
    let in_rows = ((rows - 1) * desc.stride + kh).min(ih + 2 * desc.padding);
    let in_bytes = desc.in_channels * in_rows * (iw + 2 * desc.padding);
    let w_bytes = oc * desc.in_channels * kh * kw + 4 * oc;
    let out_bytes = oc * rows * ow;
    2 * (in_bytes + w_bytes + out_bytes)
}

/// Feasibility check and tiling sweep. Returns an error naming the first
/// constraint that cannot be met; otherwise each conv layer gets the
/// largest row tile that fits in L1.
pub fn plan_memory(
    layers: &[LayerDesc],
    input_shape: (usize, usize, usize),
    budget: &MemoryBudget,
) -> Result<DeployPlan> {
    let l2 = l2_residency(layers, input_shape, budget)?;
    if l2.total() > budget.l2_bytes {
        return Err(Error::Infeasible(format!(
            "L2: {} B needed ({} params + {} images + {} activations + {} code), budget {} B",
            l2.total(),
            l2.param_bytes,
            l2.image_bytes,
            l2.activation_bytes,
            l2.code_bytes,
            budget.l2_bytes
        )));
    }

    let shapes = activation_shapes(layers, input_shape)?;
    let per_macs = per_layer_macs(layers, input_shape);
    let mut plans = Vec::new();
    for (idx, desc) in layers.iter().enumerate() {
        if !desc.is_conv() {
            continue;
        }
        let in_shape = shapes[idx];
        let out_shape = shapes[idx + 1];
        let mut chosen = None;
        for rows in (1..=out_shape.1).rev() {
            let bytes = tile_bytes(desc, in_shape, out_shape, rows);
            if bytes <= budget.l1_bytes {
                chosen = Some((rows, bytes));
                break;
            }
        }
        let (rows, bytes) = chosen.ok_or_else(|| {
            Error::Infeasible(format!(
                "L1: layer {idx} ({}) needs {} B even at a single-row tile, budget {} B",
                layer_label(desc),
                tile_bytes(desc, in_shape, out_shape, 1),
                budget.l1_bytes
            ))
        })?;
        plans.push(LayerPlan {
            layer_index: idx,
            label: layer_label(desc),
            macs: per_macs[idx],
            cycles: estimate_cycles(per_macs[idx], MAC_EFFICIENCY),
            tile_rows: rows,
            l1_bytes: bytes,
        });
    }

    let total_macs = count_macs(layers, input_shape);
    Ok(DeployPlan {
        l2,
        layers: plans,
        total_macs,
        total_cycles: estimate_cycles(total_macs, MAC_EFFICIENCY),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelGraph, DEFAULT_MAC_BUDGET};

    fn reference() -> ModelGraph {
        ModelGraph::build_reference_fcnn(1)
    }

    #[test]
    fn reference_per_layer_macs() {
        let m = reference();
        let macs: Vec<u64> = per_layer_macs(&m.layers, m.input_shape)
            .into_iter()
            .filter(|&x| x > 0)
            .collect();
        assert_eq!(macs, vec![460_800, 1_843_200, 1_843_200, 3_686_400, 38_400]);
        assert_eq!(count_macs(&m.layers, m.input_shape), 7_872_000);
    }

    #[test]
    fn lone_pointwise_layer_macs() {
        let layers = vec![LayerDesc::pointwise(32, 3)];
        assert_eq!(count_macs(&layers, (32, 20, 20)), 38_400);
    }

    #[test]
    fn cycle_estimates() {
        assert_eq!(estimate_cycles(7_872_000, MAC_EFFICIENCY), 3_578_182);
        assert_eq!(estimate_cycles(9_680_000, MAC_EFFICIENCY), 4_400_000);
        assert_eq!(estimate_cycles(123_456, 1.0), 123_456);
    }

    #[test]
    fn budget_cross_checks_against_cycle_measurement() {
        // 4.4 Mcycle/frame at 2.2 MAC/cycle implies 9.68 MMAC, which should
        // agree with the 78.7e6 / 8.3 budget to within a few percent.
        let implied = 4.4e6 * MAC_EFFICIENCY;
        let rel = (implied - DEFAULT_MAC_BUDGET as f64).abs() / DEFAULT_MAC_BUDGET as f64;
        assert!(rel <= 0.025, "relative gap {rel}");
    }

    #[test]
    fn rate_estimates_at_both_operating_points() {
        let max = OperatingPoint::max_performance();
        let rp = estimate_rate_power(4_400_000, &max);
        assert!((rp.fps - 175.0e6 / 4.4e6).abs() < 1e-9);
        assert!((rp.fps / 39.0 - 1.0).abs() <= 0.05, "fps {}", rp.fps);

        let min = OperatingPoint::min_power();
        let rp = estimate_rate_power(4_400_000, &min);
        assert!((rp.fps / 5.7 - 1.0).abs() <= 0.02, "fps {}", rp.fps);
    }

    #[test]
    fn power_table_is_verbatim() {
        let min = OperatingPoint::min_power();
        let max = OperatingPoint::max_performance();
        assert_eq!(min.soc_power_mw, 10.7);
        assert_eq!(max.soc_power_mw, 100.8);
        assert_eq!(max.system_power_mw(), 109.6);
    }

    #[test]
    fn implied_platform_power_is_a_few_watts() {
        let implied = implied_platform_power_mw(109.6);
        assert!((implied / 7660.0 - 1.0).abs() <= 0.01, "implied {implied} mW");
    }

    #[test]
    fn energy_per_frame_is_power_over_rate() {
        let rp = estimate_rate_power(4_400_000, &OperatingPoint::max_performance());
        assert!((rp.energy_per_frame_mj - rp.soc_power_mw / rp.fps).abs() < 1e-12);
        // Context figure: 100.8 mW at 39 fps is about 2.58 mJ/frame.
        assert!(((100.8f64 / 39.0) / 2.58 - 1.0).abs() <= 0.01);
    }

    #[test]
    fn reference_l2_residency_is_exact() {
        let m = reference();
        let budget = MemoryBudget::default();
        let l2 = l2_residency(&m.layers, m.input_shape, &budget).unwrap();
        assert_eq!(l2.param_bytes, 15_508);
        assert_eq!(l2.image_bytes, 51_200);
        assert_eq!(l2.activation_bytes, 102_400);
        assert_eq!(l2.code_bytes, 40_960);
        assert_eq!(l2.total(), 210_068);
        assert!(l2.total() <= budget.l2_bytes);
    }

    #[test]
    fn reference_plan_is_feasible_with_maximal_tiles() {
        let m = reference();
        let budget = MemoryBudget::default();
        let plan = plan_memory(&m.layers, m.input_shape, &budget).unwrap();
        assert_eq!(plan.layers.len(), 5);
        assert_eq!(plan.total_cycles, 3_578_182);
        let shapes = activation_shapes(&m.layers, m.input_shape).unwrap();
        for lp in &plan.layers {
            assert!(lp.l1_bytes <= budget.l1_bytes, "layer {}: {} B", lp.layer_index, lp.l1_bytes);
            assert!(lp.tile_rows >= 1);
            // Maximal: one more row must not fit (unless already full height).
            let desc = &m.layers[lp.layer_index];
            let out_h = shapes[lp.layer_index + 1].1;
            if lp.tile_rows < out_h {
                let bigger = tile_bytes(desc, shapes[lp.layer_index], shapes[lp.layer_index + 1], lp.tile_rows + 1);
                assert!(bigger > budget.l1_bytes);
            }
        }
    }

    #[test]
    fn tiny_l1_is_reported_infeasible_with_layer_name() {
        let m = reference();
        let budget = MemoryBudget { l1_bytes: 1024, ..MemoryBudget::default() };
        let err = plan_memory(&m.layers, m.input_shape, &budget).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("L1"), "{msg}");
        assert!(msg.contains("layer 0"), "{msg}");
    }

    #[test]
    fn doubled_image_size_quadruples_activation_term() {
        let m = reference();
        let budget = MemoryBudget::default();
        let base = l2_residency(&m.layers, m.input_shape, &budget).unwrap();
        let big = l2_residency(&m.layers, (1, 320, 320), &budget).unwrap();
        assert_eq!(big.activation_bytes, 4 * base.activation_bytes);
        assert_eq!(big.image_bytes, 4 * base.image_bytes);
        assert_eq!(big.activation_bytes, 409_600);
    }

    #[test]
    fn feasibility_is_monotone_in_budget() {
        let m = reference();
        let l1s = [8, 16, 32, 64, 128].map(|k| k * 1024);
        let l2s = [64, 128, 256, 512, 1024].map(|k| k * 1024);
        let feasible: Vec<Vec<bool>> = l1s
            .iter()
            .map(|&l1| {
                l2s.iter()
                    .map(|&l2| {
                        let b = MemoryBudget { l1_bytes: l1, l2_bytes: l2, code_bytes: 40 * 1024 };
                        plan_memory(&m.layers, m.input_shape, &b).is_ok()
                    })
                    .collect()
            })
            .collect();
        for i in 0..l1s.len() {
            for j in 0..l2s.len() {
                if feasible[i][j] {
                    for i2 in i..l1s.len() {
                        for j2 in j..l2s.len() {
                            assert!(feasible[i2][j2], "feasibility lost at larger budget");
                        }
                    }
                }
            }
        }
    }
}
