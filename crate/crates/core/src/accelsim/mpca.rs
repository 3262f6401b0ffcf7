//! The multi-level parallel compute array.
//!
//! A kernel is split into groups of weight block-columns. Each group runs on
//! one CHM; up to `p_h` groups run side by side in one head iteration and the
//! iteration lasts as long as its slowest group. Inside a CHM the group's
//! columns are spread over `p_c` PE columns (see [`crate::accelsim::balance`]).
//! Each PE column walks its `(column, row-block)` items column-major, `p_t` at
//! a time; one such wave lasts as long as its longest item, and an item with
//! `n` header entries costs `n` block products.

use serde::{Deserialize, Serialize};

use crate::accelsim::balance::assign_columns;
use crate::accelsim::HardwareConfig;
use crate::blockmat::{block_mac, extent, BlockDenseMatrix, BlockSparseMatrix, ColumnProfile, SparseLayout};
use crate::{div_ceil, Error, Result};

/// Block structure of a right-hand operand: which inner blocks each
/// block-column touches.
pub trait Structure {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn block_size(&self) -> usize;
    fn header_len(&self, c: usize) -> usize;
    /// Inner block index of the `t`-th entry of column `c`.
    fn header_at(&self, c: usize, t: usize) -> usize;

    fn grid_rows(&self) -> usize {
        div_ceil(self.rows(), self.block_size())
    }

    fn grid_cols(&self) -> usize {
        div_ceil(self.cols(), self.block_size())
    }
}

/// A right-hand operand with values.
pub trait RightOperand: Structure {
    /// The `t`-th stored block of column `c`.
    fn weight_block(&self, c: usize, t: usize) -> &[f64];
}

impl Structure for SparseLayout {
    fn rows(&self) -> usize {
        SparseLayout::rows(self)
    }
    fn cols(&self) -> usize {
        SparseLayout::cols(self)
    }
    fn block_size(&self) -> usize {
        SparseLayout::block_size(self)
    }
    fn header_len(&self, c: usize) -> usize {
        self.header(c).len()
    }
    fn header_at(&self, c: usize, t: usize) -> usize {
        self.header(c)[t] as usize
    }
}

impl Structure for BlockSparseMatrix {
    fn rows(&self) -> usize {
        BlockSparseMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        BlockSparseMatrix::cols(self)
    }
    fn block_size(&self) -> usize {
        BlockSparseMatrix::block_size(self)
    }
    fn header_len(&self, c: usize) -> usize {
        self.header(c).len()
    }
    fn header_at(&self, c: usize, t: usize) -> usize {
        self.header(c)[t] as usize
    }
}

impl RightOperand for BlockSparseMatrix {
    fn weight_block(&self, c: usize, t: usize) -> &[f64] {
        self.block(c, t)
    }
}

impl Structure for BlockDenseMatrix {
    fn rows(&self) -> usize {
        BlockDenseMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        BlockDenseMatrix::cols(self)
    }
    fn block_size(&self) -> usize {
        BlockDenseMatrix::block_size(self)
    }
    fn header_len(&self, _c: usize) -> usize {
        BlockDenseMatrix::grid_rows(self)
    }
    fn header_at(&self, _c: usize, t: usize) -> usize {
        t
    }
}

impl RightOperand for BlockDenseMatrix {
    fn weight_block(&self, c: usize, t: usize) -> &[f64] {
        self.block(t, c)
    }
}

/// Shape of a dense operand, for timing without values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseShape {
    pub rows: usize,
    pub cols: usize,
    pub b: usize,
}

impl Structure for DenseShape {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn block_size(&self) -> usize {
        self.b
    }
    fn header_len(&self, _c: usize) -> usize {
        div_ceil(self.rows, self.b)
    }
    fn header_at(&self, _c: usize, t: usize) -> usize {
        t
    }
}

/// Operands of equal height placed side by side; `[W_q | W_k | W_v]`.
pub struct Concat<'a, T: ?Sized> {
    parts: Vec<&'a T>,
    grid_cols: usize,
}

impl<'a, T: Structure + ?Sized> Concat<'a, T> {
    /// Every part but the last must span whole blocks.
    pub fn new(parts: Vec<&'a T>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("empty concatenation"))?;
        let (rows, b) = (first.rows(), first.block_size());
        for (i, p) in parts.iter().enumerate() {
            if p.rows() != rows || p.block_size() != b {
                return Err(Error::shape("concatenated operands differ in height or block size"));
            }
            if i + 1 < parts.len() && p.cols() % b != 0 {
                return Err(Error::shape("inner concatenated operand is not block aligned"));
            }
        }
        let grid_cols = parts.iter().map(|p| p.grid_cols()).sum();
        Ok(Concat { parts, grid_cols })
    }

    fn locate(&self, mut c: usize) -> (&'a T, usize) {
        for p in &self.parts {
            let g = p.grid_cols();
            if c < g {
                return (p, c);
            }
            c -= g;
        }
        panic!("column {c} past the end of the concatenation")
    }
}

impl<T: Structure + ?Sized> Structure for Concat<'_, T> {
    fn rows(&self) -> usize {
        self.parts[0].rows()
    }
    fn cols(&self) -> usize {
        let b = self.block_size();
        let last = self.parts.last().expect("non-empty");
        (self.grid_cols - last.grid_cols()) * b + last.cols()
    }
    fn block_size(&self) -> usize {
        self.parts[0].block_size()
    }
    fn grid_cols(&self) -> usize {
        self.grid_cols
    }
    fn header_len(&self, c: usize) -> usize {
        let (p, c) = self.locate(c);
        p.header_len(c)
    }
    fn header_at(&self, c: usize, t: usize) -> usize {
        let (p, c) = self.locate(c);
        p.header_at(c, t)
    }
}

impl<T: RightOperand + ?Sized> RightOperand for Concat<'_, T> {
    fn weight_block(&self, c: usize, t: usize) -> &[f64] {
        let (p, c) = self.locate(c);
        p.weight_block(c, t)
    }
}

/// One CHM's share of a kernel before scheduling.
pub struct GroupSpec<'a> {
    /// Logical rows of the left operand.
    pub rows: usize,
    pub w: &'a dyn Structure,
    /// Block-columns of `w` computed by this group.
    pub cols: Vec<usize>,
}

impl<'a> GroupSpec<'a> {
    pub fn new(rows: usize, w: &'a dyn Structure, cols: Vec<usize>) -> Self {
        GroupSpec { rows, w, cols }
    }

    fn row_blocks(&self) -> usize {
        div_ceil(self.rows, self.w.block_size())
    }

    fn is_idle(&self) -> bool {
        self.rows == 0 || self.cols.iter().all(|&c| self.w.header_len(c) == 0)
    }

    /// Logical multiply-accumulates.
    fn macs(&self) -> u64 {
        let (rows, cols, b) = (self.w.rows(), self.w.cols(), self.w.block_size());
        let per_row: usize = self
            .cols
            .iter()
            .map(|&c| {
                let inner: usize = (0..self.w.header_len(c)).map(|t| extent(rows, b, self.w.header_at(c, t))).sum();
                extent(cols, b, c) * inner
            })
            .sum();
        (self.rows * per_row) as u64
    }
}

/// `(column, row-block)` items of one PE column, split into waves of `p_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BinPlan {
    pub waves: Vec<Vec<(usize, usize)>>,
    pub load: usize,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPlan {
    /// Index into the group list the plan was built from.
    pub group: usize,
    pub bins: Vec<BinPlan>,
    pub cycles: u64,
    /// PE-cycles spent on block products.
    pub busy: u64,
    pub macs: u64,
    /// Max over mean bin load.
    pub imbalance: f64,
}

/// A scheduled kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    /// Groups running together in each head iteration.
    pub iterations: Vec<Vec<GroupPlan>>,
    pub cycles: u64,
    pub busy: u64,
    pub macs: u64,
}

impl Plan {
    pub fn groups(&self) -> impl Iterator<Item = &GroupPlan> {
        self.iterations.iter().flatten()
    }

    pub fn stats(&self) -> KernelStats {
        let imb: Vec<f64> = self.groups().map(|g| g.imbalance).collect();
        KernelStats {
            cycles: self.cycles,
            busy: self.busy,
            macs: self.macs,
            iterations: self.iterations.len(),
            groups: imb.len(),
            worst_imbalance: imb.iter().copied().fold(1.0, f64::max),
            imbalance_sum: imb.iter().sum(),
        }
    }
}

/// Cycle and work totals of one or more kernels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelStats {
    pub cycles: u64,
    pub busy: u64,
    pub macs: u64,
    pub iterations: usize,
    pub groups: usize,
    pub worst_imbalance: f64,
    pub imbalance_sum: f64,
}

impl KernelStats {
    pub fn merge(&mut self, o: &KernelStats) {
        self.cycles += o.cycles;
        self.busy += o.busy;
        self.macs += o.macs;
        self.iterations += o.iterations;
        self.groups += o.groups;
        self.worst_imbalance = self.worst_imbalance.max(o.worst_imbalance);
        self.imbalance_sum += o.imbalance_sum;
    }
}

fn plan_group(index: usize, g: &GroupSpec, hw: &HardwareConfig) -> GroupPlan {
    let blk = hw.block_cycles();
    let r = g.row_blocks();
    let counts: Vec<usize> = g.cols.iter().map(|&c| g.w.header_len(c)).collect();
    let assignment = assign_columns(&ColumnProfile::new(counts.clone(), g.w.grid_rows()), hw.p_c, hw.balance);
    let mut busy = 0;
    let bins: Vec<BinPlan> = assignment
        .bins
        .iter()
        .zip(&assignment.loads)
        .map(|(local, &load)| {
            let items: Vec<(usize, usize)> =
                local.iter().filter(|&&i| counts[i] > 0).flat_map(|&i| (0..r).map(move |row| (i, row))).collect();
            let waves: Vec<Vec<(usize, usize)>> = items.chunks(hw.p_t).map(|w| w.to_vec()).collect();
            let cycles = waves.iter().map(|w| w.iter().map(|&(i, _)| counts[i] as u64).max().unwrap_or(0) * blk).sum();
            busy += items.iter().map(|&(i, _)| counts[i] as u64 * blk).sum::<u64>();
            let waves = waves.into_iter().map(|w| w.into_iter().map(|(i, row)| (g.cols[i], row)).collect()).collect();
            BinPlan { waves, load: load * r, cycles }
        })
        .collect();
    GroupPlan {
        group: index,
        cycles: bins.iter().map(|b| b.cycles).max().unwrap_or(0),
        busy,
        macs: g.macs(),
        imbalance: assignment.imbalance(),
        bins,
    }
}

/// Schedules groups onto the array. Groups with no work are skipped.
pub fn plan(groups: &[GroupSpec], hw: &HardwareConfig) -> Plan {
    let live: Vec<GroupPlan> =
        groups.iter().enumerate().filter(|(_, g)| !g.is_idle()).map(|(i, g)| plan_group(i, g, hw)).collect();
    let iterations: Vec<Vec<GroupPlan>> = live.chunks(hw.p_h).map(|c| c.to_vec()).collect();
    Plan {
        cycles: iterations.iter().map(|it| it.iter().map(|g| g.cycles).max().unwrap_or(0)).sum(),
        busy: live.iter().map(|g| g.busy).sum(),
        macs: live.iter().map(|g| g.macs).sum(),
        iterations,
    }
}

/// Computes every output block a group plan covers, in plan order, with the
/// canonical header-order accumulation.
pub fn execute_group(gp: &GroupPlan, x: &BlockDenseMatrix, w: &dyn RightOperand, y: &mut BlockDenseMatrix) {
    let b = x.block_size();
    for &(c, r) in gp.bins.iter().flat_map(|bin| bin.waves.iter().flatten()) {
        let acc = y.block_mut(r, c);
        for t in 0..w.header_len(c) {
            block_mac(acc, x.block(r, w.header_at(c, t)), w.weight_block(c, t), b);
        }
    }
}

pub(crate) fn check_operands(x: &BlockDenseMatrix, w: &dyn Structure, hw: &HardwareConfig) -> Result<()> {
    if x.block_size() != w.block_size() {
        return Err(Error::invalid(format!("block sizes differ: {} vs {}", x.block_size(), w.block_size())));
    }
    if hw.b != x.block_size() {
        return Err(Error::invalid(format!("hardware block size {} but operands use {}", hw.b, x.block_size())));
    }
    if x.cols() != w.rows() {
        return Err(Error::shape(format!("left has {} cols, right has {} rows", x.cols(), w.rows())));
    }
    Ok(())
}

/// Splits block-columns `0..n` into consecutive chunks of `width`.
pub fn column_chunks(n: usize, width: usize) -> Vec<Vec<usize>> {
    let width = width.max(1);
    (0..n).step_by(width).map(|s| (s..(s + width).min(n)).collect()).collect()
}

fn run_single(
    x: &BlockDenseMatrix,
    w: &dyn RightOperand,
    group_width: usize,
    hw: &HardwareConfig,
) -> Result<(BlockDenseMatrix, KernelStats)> {
    hw.validate()?;
    check_operands(x, w, hw)?;
    if group_width == 0 {
        return Err(Error::invalid("group width must be positive"));
    }
    let specs: Vec<GroupSpec> =
        column_chunks(w.grid_cols(), group_width).into_iter().map(|c| GroupSpec::new(x.rows(), w, c)).collect();
    let p = plan(&specs, hw);
    let mut y = BlockDenseMatrix::zeros(x.rows(), w.cols(), x.block_size())?;
    for gp in p.groups() {
        execute_group(gp, x, w, &mut y);
    }
    Ok((y, p.stats()))
}

/// Sparse block matmul on the array; each CHM takes `group_width`
/// consecutive block-columns (`D'/b` for an attention weight).
pub fn simulate_sbmm(
    x: &BlockDenseMatrix,
    w: &BlockSparseMatrix,
    group_width: usize,
    hw: &HardwareConfig,
) -> Result<(BlockDenseMatrix, KernelStats)> {
    run_single(x, w, group_width, hw)
}

/// Dense block matmul on the array; scheduled exactly like [`simulate_sbmm`].
pub fn simulate_dbmm(
    x: &BlockDenseMatrix,
    w: &BlockDenseMatrix,
    group_width: usize,
    hw: &HardwareConfig,
) -> Result<(BlockDenseMatrix, KernelStats)> {
    run_single(x, w, group_width, hw)
}

/// Head-wise dense matmul: one product per head, one CHM per head.
pub fn simulate_dhbmm(
    pairs: &[(&BlockDenseMatrix, &BlockDenseMatrix)],
    hw: &HardwareConfig,
) -> Result<(Vec<BlockDenseMatrix>, KernelStats)> {
    hw.validate()?;
    let Some((x0, w0)) = pairs.first() else {
        return Err(Error::invalid("head-wise matmul needs at least one head"));
    };
    for (x, w) in pairs {
        check_operands(x, *w, hw)?;
        if (x.rows(), x.cols(), w.cols()) != (x0.rows(), x0.cols(), w0.cols()) {
            return Err(Error::invalid("heads of a head-wise matmul differ in shape"));
        }
    }
    let specs: Vec<GroupSpec> = pairs
        .iter()
        .map(|(x, w)| GroupSpec::new(x.rows(), *w as &dyn Structure, (0..w.grid_cols()).collect()))
        .collect();
    let p = plan(&specs, hw);
    let mut outs: Vec<BlockDenseMatrix> = pairs
        .iter()
        .map(|(x, w)| BlockDenseMatrix::zeros(x.rows(), w.cols(), x.block_size()))
        .collect::<Result<_>>()?;
    for gp in p.groups() {
        let (x, w) = pairs[gp.group];
        execute_group(gp, x, w, &mut outs[gp.group]);
    }
    Ok((outs, p.stats()))
}
