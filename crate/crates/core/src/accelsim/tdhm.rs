//! Token dropping hardware module: bitonic sort of the importance scores,
//! index shuffle of the kept rows, weighted fusion of the dropped rows.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::accelsim::HardwareConfig;
use crate::tokenprune::{gather_tokens, kept_body_tokens, TokenMatrix, TokenRouting};
use crate::{div_ceil, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TdhmCycles {
    pub sort: u64,
    pub shuffle: u64,
    pub fusion: u64,
}

impl TdhmCycles {
    pub fn total(&self) -> u64 {
        self.sort + self.shuffle + self.fusion
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Key {
    Pad(usize),
    Body(f64, usize),
    Class,
}

/// Sorting order: class first, then score descending with smaller ids on
/// ties, padding last.
fn key_cmp(a: &Key, b: &Key) -> Ordering {
    use Key::*;
    match (a, b) {
        (Class, Class) => Ordering::Equal,
        (Class, _) => Ordering::Less,
        (_, Class) => Ordering::Greater,
        (Pad(x), Pad(y)) => x.cmp(y),
        (Pad(_), _) => Ordering::Greater,
        (_, Pad(_)) => Ordering::Less,
        (Body(sa, ia), Body(sb, ib)) => sb.total_cmp(sa).then(ia.cmp(ib)),
    }
}

/// Compare-exchange stages of a bitonic network over `n` inputs padded to a
/// power of two.
pub fn bitonic_stages(n: usize) -> usize {
    let lg = n.max(1).next_power_of_two().trailing_zeros() as usize;
    lg * (lg + 1) / 2
}

/// Runs the network and returns the non-class ids in ranking order.
pub fn bitonic_rank(scores: &[f64]) -> Vec<usize> {
    let n = scores.len();
    let m = n.max(1).next_power_of_two();
    let mut keys: Vec<Key> = (0..m)
        .map(|i| match i {
            0 => Key::Class,
            i if i < n => Key::Body(scores[i], i),
            i => Key::Pad(i),
        })
        .collect();
    let mut k = 2;
    while k <= m {
        let mut j = k / 2;
        while j > 0 {
            for i in 0..m {
                let l = i ^ j;
                if l > i {
                    let up = i & k == 0;
                    let ord = key_cmp(&keys[i], &keys[l]);
                    if (up && ord == Ordering::Greater) || (!up && ord == Ordering::Less) {
                        keys.swap(i, l);
                    }
                }
            }
            j /= 2;
        }
        k *= 2;
    }
    keys.into_iter()
        .filter_map(|k| match k {
            Key::Body(_, id) => Some(id),
            _ => None,
        })
        .collect()
}

/// Cycle cost of dropping tokens from `n` rows of width `d`.
pub fn tdhm_cycles(n: usize, d: usize, r_t: f64, hw: &HardwareConfig) -> TdhmCycles {
    if n < 2 {
        return TdhmCycles::default();
    }
    let keep = kept_body_tokens(n, r_t);
    if keep == n - 1 {
        return TdhmCycles::default();
    }
    let m = n.next_power_of_two();
    let dropped = n - 1 - keep;
    TdhmCycles {
        sort: (bitonic_stages(n) * div_ceil(m / 2, hw.sorter_width)) as u64,
        shuffle: hw.em_cycles(n * d),
        fusion: hw.em_cycles(dropped * d),
    }
}

/// Drops tokens on the TDHM. Output equals
/// [`crate::tokenprune::select_and_fuse`]; when nothing is dropped the module
/// is bypassed at no cost.
pub fn simulate_tdhm(
    z: &TokenMatrix,
    scores: &[f64],
    r_t: f64,
    hw: &HardwareConfig,
) -> Result<(TokenMatrix, TokenRouting, TdhmCycles)> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::invalid(format!("token dropping needs at least 2 tokens, got {n}")));
    }
    if !(r_t > 0.0 && r_t <= 1.0) {
        return Err(Error::invalid(format!("keep rate must be in (0, 1], got {r_t}")));
    }
    if scores.len() != n || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("need {n} finite importance scores")));
    }
    let cycles = tdhm_cycles(n, z.cols(), r_t, hw);
    let keep = kept_body_tokens(n, r_t);
    if keep == n - 1 {
        return Ok((z.clone(), TokenRouting::identity(n), cycles));
    }
    let ranked = bitonic_rank(scores);
    let out = gather_tokens(z, scores, &ranked, keep)?;
    Ok((out, TokenRouting::from_ranking(n, &ranked, keep), cycles))
}
