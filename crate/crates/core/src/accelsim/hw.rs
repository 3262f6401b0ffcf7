use serde::{Deserialize, Serialize};

use crate::{div_ceil, Error, Result};

/// How weight block-columns are spread over the PE columns of a CHM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BalancePolicy {
    /// Longest-processing-time greedy.
    #[default]
    Lpt,
    /// Column `c` goes to PE column `c mod p_c`.
    RoundRobin,
}

/// Accelerator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareConfig {
    /// Computing head modules.
    pub p_h: usize,
    /// PE rows per CHM.
    pub p_t: usize,
    /// PE columns per CHM.
    pub p_c: usize,
    /// Multiply units per block dimension inside a PE.
    pub p_pe: usize,
    pub b: usize,
    /// Row blocks needed for one output block, used for buffer sizing.
    pub gamma: usize,
    /// DSPs per compute unit.
    pub c1: f64,
    /// LUTs per compute unit.
    pub c2: f64,
    /// Elements per cycle through the element-wise module.
    pub em_throughput: usize,
    /// Compare-exchange lanes in the token sorter.
    pub sorter_width: usize,
    pub clock_hz: f64,
    pub balance: BalancePolicy,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            p_h: 4,
            p_t: 12,
            p_c: 2,
            p_pe: 8,
            b: 16,
            gamma: 96,
            // 7088 DSPs and 798K LUTs over 6144 compute units
            c1: 7088.0 / 6144.0,
            c2: 798_000.0 / 6144.0,
            em_throughput: 64,
            sorter_width: 64,
            clock_hz: 300e6,
            balance: BalancePolicy::Lpt,
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("p_h", self.p_h),
            ("p_t", self.p_t),
            ("p_c", self.p_c),
            ("p_pe", self.p_pe),
            ("b", self.b),
            ("em_throughput", self.em_throughput),
            ("sorter_width", self.sorter_width),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("hardware parameter {name} must be positive")));
        }
        if self.clock_hz.is_nan() || self.clock_hz <= 0.0 || self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::invalid("clock must be positive and unit costs non-negative"));
        }
        Ok(())
    }

    /// Cycles for one `b x b x b` block product on one PE.
    pub fn block_cycles(&self) -> u64 {
        let s = div_ceil(self.b, self.p_pe) as u64;
        s * s * self.b as u64
    }

    /// PEs in the whole array.
    pub fn pes(&self) -> u64 {
        (self.p_h * self.p_t * self.p_c) as u64
    }

    /// Cycles for one element-wise pass over `elements` values.
    pub fn em_cycles(&self, elements: usize) -> u64 {
        div_ceil(elements, self.em_throughput) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_cost() {
        let hw = HardwareConfig::default();
        assert_eq!(hw.block_cycles(), 2 * 2 * 16);
        let hw32 = HardwareConfig { b: 32, ..hw.clone() };
        assert_eq!(hw32.block_cycles(), 512);
        let odd = HardwareConfig { b: 16, p_pe: 5, ..hw };
        assert_eq!(odd.block_cycles(), 16 * 16);
    }

    #[test]
    fn rejects_zero() {
        let hw = HardwareConfig { p_c: 0, ..HardwareConfig::default() };
        assert!(hw.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let hw: HardwareConfig = serde_json::from_str(r#"{"p_h": 2, "balance": "round-robin"}"#).unwrap();
        assert_eq!(hw.p_h, 2);
        assert_eq!(hw.p_t, 12);
        assert_eq!(hw.balance, BalancePolicy::RoundRobin);
    }
}
