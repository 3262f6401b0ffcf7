//! Cycle-level simulator of the multi-level parallel accelerator.
//!
//! `p_h` computing head modules (CHMs), each a `p_t x p_c` grid of PEs that
//! compute one `b x b` output block at a time, plus an element-wise module
//! (EM) for softmax, GELU, layer norm and residuals and a token dropping
//! module (TDHM). Stages run back to back. Every kernel produces the same
//! bits as the reference implementation.

mod balance;
mod encoder;
mod hw;
pub mod mpca;
mod report;
mod tdhm;

pub use balance::{assign_columns, balance_columns, round_robin, ColumnAssignment};
pub use encoder::{
    plan_encoder, simulate_encoder, simulate_encoder_timing, simulate_model, simulate_model_timing, EncoderPlan,
};
pub use hw::{BalancePolicy, HardwareConfig};
pub use mpca::{simulate_dbmm, simulate_dhbmm, simulate_sbmm, KernelStats};
pub use report::{
    compute_utilization, row_utilization_bound, utilization, EncoderReport, Imbalance, SimReport, StageCycles,
};
pub use tdhm::{bitonic_rank, bitonic_stages, simulate_tdhm, tdhm_cycles, TdhmCycles};
