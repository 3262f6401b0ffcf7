use serde::{Deserialize, Serialize};

use crate::accelsim::{HardwareConfig, KernelStats};
use crate::perfmodel::OpCounts;
use crate::tokenprune::TokenRouting;

/// Cycles per encoder stage, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCycles {
    pub ln1: u64,
    pub qkv: u64,
    pub qk_t: u64,
    /// Exponentiation, row sums and normalization.
    pub softmax: u64,
    pub av: u64,
    pub proj: u64,
    pub residual1: u64,
    pub tdhm: u64,
    pub ln2: u64,
    pub mlp_int: u64,
    pub gelu: u64,
    pub mlp_out: u64,
    pub residual2: u64,
    /// All bias additions.
    pub bias: u64,
}

impl StageCycles {
    pub fn named(&self) -> [(&'static str, u64); 14] {
        [
            ("ln1", self.ln1),
            ("qkv", self.qkv),
            ("qk_t", self.qk_t),
            ("softmax", self.softmax),
            ("av", self.av),
            ("proj", self.proj),
            ("residual1", self.residual1),
            ("tdhm", self.tdhm),
            ("ln2", self.ln2),
            ("mlp_int", self.mlp_int),
            ("gelu", self.gelu),
            ("mlp_out", self.mlp_out),
            ("residual2", self.residual2),
            ("bias", self.bias),
        ]
    }

    pub fn total(&self) -> u64 {
        self.named().iter().map(|(_, c)| c).sum()
    }

    pub fn add(&mut self, o: &StageCycles) {
        self.ln1 += o.ln1;
        self.qkv += o.qkv;
        self.qk_t += o.qk_t;
        self.softmax += o.softmax;
        self.av += o.av;
        self.proj += o.proj;
        self.residual1 += o.residual1;
        self.tdhm += o.tdhm;
        self.ln2 += o.ln2;
        self.mlp_int += o.mlp_int;
        self.gelu += o.gelu;
        self.mlp_out += o.mlp_out;
        self.residual2 += o.residual2;
        self.bias += o.bias;
    }
}

/// Column-balance quality over the CHM groups of a run: max over mean
/// PE-column load per group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Imbalance {
    pub groups: usize,
    pub worst: f64,
    pub mean: f64,
}

impl Imbalance {
    pub fn from_stats(s: &KernelStats) -> Self {
        Imbalance {
            groups: s.groups,
            worst: if s.groups == 0 { 1.0 } else { s.worst_imbalance },
            mean: if s.groups == 0 { 1.0 } else { s.imbalance_sum / s.groups as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub stage_cycles: StageCycles,
    pub total_cycles: u64,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub heads_active: usize,
    /// Main matmul kernels: QKV, QK^T, AV, projection and both MLP layers.
    pub compute: KernelStats,
    /// Softmax row sums on the array.
    pub auxiliary: KernelStats,
    pub ops: OpCounts,
    pub imbalance: Imbalance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub routing: Option<TokenRouting>,
}

impl EncoderReport {
    pub fn busy(&self) -> u64 {
        self.compute.busy + self.auxiliary.busy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub stage_cycles: StageCycles,
    pub total_cycles: u64,
    pub latency_ms: f64,
    /// Busy PE-cycles over total cycles times PEs.
    pub utilization: f64,
    /// Same, restricted to the cycles of the main matmul stages.
    pub compute_utilization: f64,
    /// Multiply-accumulates of the main matmul kernels.
    pub macs: u64,
    pub ops: OpCounts,
    pub imbalance: Imbalance,
    pub clock_hz: f64,
    pub pes: u64,
    pub encoders: Vec<EncoderReport>,
}

impl SimReport {
    pub fn new(encoders: Vec<EncoderReport>, hw: &HardwareConfig) -> Self {
        let mut stage_cycles = StageCycles::default();
        let mut ops = OpCounts::default();
        let mut compute = KernelStats::default();
        let mut busy = 0;
        for e in &encoders {
            stage_cycles.add(&e.stage_cycles);
            ops.add(&e.ops);
            compute.merge(&e.compute);
            busy += e.busy();
        }
        let total_cycles = stage_cycles.total();
        SimReport {
            stage_cycles,
            total_cycles,
            latency_ms: total_cycles as f64 / hw.clock_hz * 1e3,
            utilization: ratio(busy, total_cycles * hw.pes()),
            compute_utilization: ratio(compute.busy, compute.cycles * hw.pes()),
            macs: compute.macs,
            ops,
            imbalance: Imbalance::from_stats(&compute),
            clock_hz: hw.clock_hz,
            pes: hw.pes(),
            encoders,
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Busy over available PE-cycles across the whole run.
pub fn utilization(report: &SimReport, hw: &HardwareConfig) -> f64 {
    let busy: u64 = report.encoders.iter().map(|e| e.busy()).sum();
    ratio(busy, report.total_cycles * hw.pes())
}

/// Utilization during the main matmul stages only.
pub fn compute_utilization(report: &SimReport, hw: &HardwareConfig) -> f64 {
    let (busy, cycles) = report.encoders.iter().fold((0, 0), |(b, c), e| (b + e.compute.busy, c + e.compute.cycles));
    ratio(busy, cycles * hw.pes())
}

/// The token-slack bound on utilization: `x / ceil(x)` with
/// `x = N_min / (p_t b)`.
pub fn row_utilization_bound(n_min: usize, hw: &HardwareConfig) -> f64 {
    let x = n_min as f64 / (hw.p_t * hw.b) as f64;
    x / x.ceil()
}
