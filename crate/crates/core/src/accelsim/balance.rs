use serde::{Deserialize, Serialize};

use crate::accelsim::BalancePolicy;
use crate::blockmat::ColumnProfile;

/// Block-columns of one group spread over PE columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnAssignment {
    /// Column indices per bin, in processing order.
    pub bins: Vec<Vec<usize>>,
    /// Present blocks per bin.
    pub loads: Vec<usize>,
}

impl ColumnAssignment {
    pub fn max_load(&self) -> usize {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_load(&self) -> f64 {
        if self.loads.is_empty() {
            0.0
        } else {
            self.loads.iter().sum::<usize>() as f64 / self.loads.len() as f64
        }
    }

    /// Max over mean load; 1 when perfectly balanced or empty.
    pub fn imbalance(&self) -> f64 {
        let mean = self.mean_load();
        if mean == 0.0 {
            1.0
        } else {
            self.max_load() as f64 / mean
        }
    }
}

/// Longest-processing-time greedy: columns by descending count (smaller
/// index first on ties), each to the currently lightest bin (smaller bin
/// first on ties).
pub fn balance_columns(profile: &ColumnProfile, p_c: usize) -> ColumnAssignment {
    let counts = profile.counts();
    let p_c = p_c.max(1);
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut bins = vec![Vec::new(); p_c];
    let mut loads = vec![0; p_c];
    for c in order {
        let target = (0..p_c).min_by_key(|&i| (loads[i], i)).expect("p_c >= 1");
        bins[target].push(c);
        loads[target] += counts[c];
    }
    ColumnAssignment { bins, loads }
}

/// Column `c` to bin `c mod p_c`, in index order.
pub fn round_robin(profile: &ColumnProfile, p_c: usize) -> ColumnAssignment {
    let p_c = p_c.max(1);
    let mut bins = vec![Vec::new(); p_c];
    let mut loads = vec![0; p_c];
    for (c, &n) in profile.counts().iter().enumerate() {
        bins[c % p_c].push(c);
        loads[c % p_c] += n;
    }
    ColumnAssignment { bins, loads }
}

pub fn assign_columns(profile: &ColumnProfile, p_c: usize, policy: BalancePolicy) -> ColumnAssignment {
    match policy {
        BalancePolicy::Lpt => balance_columns(profile, p_c),
        BalancePolicy::RoundRobin => round_robin(profile, p_c),
    }
}
