//! Built-in and pluggable partitioning and reduction strategies.
//!
//! The default partitioner distributes index ranges: for a dimension of
//! length `n` split `s` ways, the first `n mod s` ranges take
//! `ceil(n / s)` indices and the rest take `floor(n / s)`, which keeps the
//! size spread within one. Views extend each owned range by a per-dimension
//! `(before, after)` pair, clamped to the dimension bounds. Matrices are
//! partitioned into two-dimensional blocks by default, using a near-square
//! factorization of the slave count.
//!
//! User-defined strategies and reducers register by name; the registry is
//! written at startup and read-only afterwards.

use crate::ast::{PrimOp, ReduceSpec};
use crate::value::{ArrayData, Cells, Scalar, Value};
use std::collections::HashMap;
use std::sync::Arc;

/// Owned index range plus the visible window around it.
///
/// Invariant: `view_lo <= lo <= hi <= view_hi`, all within the partitioned
/// dimension.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct IndexRange {
    pub lo: usize,
    pub hi: usize,
    pub view_lo: usize,
    pub view_hi: usize,
}

impl IndexRange {
    pub fn owned_len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn view_len(&self) -> usize {
        self.view_hi - self.view_lo
    }

    pub fn contains(&self, i: usize) -> bool {
        i >= self.lo && i < self.hi
    }
}

/// Block partition of `[0, length)` into `n_slaves` ranges with view
/// extensions clamped to the same interval. `length == 0` yields all-empty
/// ranges at index zero.
pub fn index_partition(length: usize, n_slaves: usize, view: (u32, u32)) -> Vec<IndexRange> {
    assert!(n_slaves >= 1, "n_slaves must be at least 1");
    let q = length / n_slaves;
    let rem = length % n_slaves;
    let (before, after) = (view.0 as usize, view.1 as usize);
    let mut out = Vec::with_capacity(n_slaves);
    let mut lo = 0usize;
    for r in 0..n_slaves {
        let size = if r < rem { q + 1 } else { q };
        let hi = lo + size;
        out.push(IndexRange {
            lo,
            hi,
            view_lo: lo.saturating_sub(before),
            view_hi: (hi + after).min(length),
        });
        lo = hi;
    }
    out
}

/// Widen an owned range by a view pair, clamped to `[0, dim_len)`. Used
/// when a range partitions a sub-interval of a dimension (the planner's
/// interior-point convention) but the window may still reach the edge rows.
pub fn widen(owned: IndexRange, view: (u32, u32), dim_len: usize) -> IndexRange {
    IndexRange {
        lo: owned.lo,
        hi: owned.hi,
        view_lo: owned.lo.saturating_sub(view.0 as usize),
        view_hi: (owned.hi + view.1 as usize).min(dim_len),
    }
}

/// Near-square factorization: the largest divisor of `n` not exceeding
/// `floor(sqrt(n))`, paired with its cofactor. Rows get the smaller count.
pub fn near_square_factors(n: usize) -> (usize, usize) {
    assert!(n >= 1);
    let root = (n as f64).sqrt().floor() as usize;
    let mut r = 1;
    for d in (1..=root).rev() {
        if n.is_multiple_of(d) {
            r = d;
            break;
        }
    }
    (r, n / r)
}

/// Two-dimensional block partition: `n_slaves = r * c` near-square, block
/// `(i, j)` owning row range `i` and column range `j`. Slave `k` maps to
/// block `(k / c, k % c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan2D {
    pub row_ranges: Vec<IndexRange>,
    pub col_ranges: Vec<IndexRange>,
    pub grid: (usize, usize),
}

pub fn block_block_partition(
    rows: usize,
    cols: usize,
    n_slaves: usize,
    views: ((u32, u32), (u32, u32)),
) -> Plan2D {
    let (r, c) = near_square_factors(n_slaves);
    Plan2D {
        row_ranges: index_partition(rows, r, views.0),
        col_ranges: index_partition(cols, c, views.1),
        grid: (r, c),
    }
}

/// Splits a compressed-row element array into `n_slaves` contiguous ranges
/// whose boundaries never fall inside a row, targeting balanced element
/// counts. `row_index` must be sorted non-decreasing.
pub fn row_disjoint_partition(row_index: &[i64], n_slaves: usize) -> Vec<IndexRange> {
    assert!(n_slaves >= 1);
    let len = row_index.len();
    // admissible cut positions: 0, lenand every row change
    let mut boundaries = vec![0usize];
    for k in 1..len {
        if row_index[k] != row_index[k - 1] {
            boundaries.push(k);
        }
    }
    boundaries.push(len);
    boundaries.dedup();

    let mut cuts = Vec::with_capacity(n_slaves + 1);
    cuts.push(0usize);
    let mut prev = 0usize;
    for s in 1..n_slaves {
        let target = (s * len + n_slaves / 2) / n_slaves;
        // nearest admissible boundary not before the previous cut
        let mut best = *boundaries.last().unwrap();
        let mut best_d = usize::MAX;
        for &b in &boundaries {
            if b < prev {
                continue;
            }
            let d = b.abs_diff(target);
            if d < best_d {
                best_d = d;
                best = b;
            }
        }
        cuts.push(best);
        prev = best;
    }
    cuts.push(len);

    cuts.windows(2)
        .map(|w| IndexRange { lo: w[0], hi: w[1], view_lo: w[0], view_hi: w[1] })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ReduceError {
    #[error("reduction over an empty partial list")]
    Empty,
    #[error("array assembly size mismatch: assembled {got}, expected {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("array assembly over non-array partial")]
    NotAnArray,
    #[error("array assembly over mixed element types")]
    MixedTypes,
    #[error("unregistered reducer `{0}`")]
    UnknownReducer(String),
    #[error("self-reduction needs the enclosing method")]
    MissingSelf,
    #[error("{0}")]
    Other(String),
}

/// Geometry for assembling partial arrays back into the full result.
#[derive(Clone, Debug)]
pub enum Assembly {
    /// Rank-ordered concatenation of one-dimensional partials.
    Concat1D { expected_len: usize },
    /// Partial `k` is the owned block `row_ranges[k / col_ranges.len()] x
    /// col_ranges[k % col_ranges.len()]`, written into a copy of the
    /// original value. Cells outside every owned range (the interior-point
    /// fringe of stencil partitions) keep their input contents.
    Blocks {
        base: ArrayData,
        row_ranges: Vec<IndexRange>,
        col_ranges: Vec<IndexRange>,
    },
}

pub struct ReduceCtx<'a> {
    pub registry: &'a StrategyRegistry,
    /// Re-applies the enclosing method over the vector of partials
    /// (self-reduction). Provided by the executing backend.
    pub self_apply: Option<&'a dyn Fn(Value) -> Result<Value, String>>,
    /// Geometry for the default array assembly, when the caller knows it.
    pub assembly: Option<Assembly>,
}

/// Sequentially and deterministically combines the rank-ordered partial
/// results into the method's final value.
pub fn apply_reduction(
    spec: &ReduceSpec,
    partials: Vec<Value>,
    ctx: &ReduceCtx,
) -> Result<Value, ReduceError> {
    if partials.is_empty() {
        return Err(ReduceError::Empty);
    }
    match spec {
        ReduceSpec::Prim(op) => {
            let mut iter = partials.into_iter();
            let first = iter.next().unwrap().as_scalar().ok_or(ReduceError::NotAnArray)?;
            let mut acc = first;
            for v in iter {
                let s = v.as_scalar().ok_or(ReduceError::NotAnArray)?;
                acc = prim_combine(*op, acc, s);
            }
            Ok(Value::Scalar(acc))
        }
        ReduceSpec::SelfReduce => {
            let apply = ctx.self_apply.ok_or(ReduceError::MissingSelf)?;
            let elem = partials[0].as_scalar().ok_or(ReduceError::NotAnArray)?.ty();
            let mut cells = Cells::zeros(elem, partials.len());
            for (i, p) in partials.iter().enumerate() {
                cells.set(i, p.as_scalar().ok_or(ReduceError::NotAnArray)?);
            }
            let arr = ArrayData { dims: [partials.len(), 1], ndim: 1, cells };
            apply(Value::array(arr)).map_err(ReduceError::Other)
        }
        ReduceSpec::ArrayAssembly => assemble(partials, ctx.assembly.as_ref()),
        ReduceSpec::User { name, .. } => {
            let reducer = ctx
                .registry
                .reducer(name)
                .ok_or_else(|| ReduceError::UnknownReducer(name.clone()))?;
            reducer.reduce(&partials).map_err(ReduceError::Other)
        }
    }
}

pub fn prim_combine(op: PrimOp, a: Scalar, b: Scalar) -> Scalar {
    use Scalar::*;
    match (a, b) {
        (Int(x), Int(y)) => Int(match op {
            PrimOp::Add => x.wrapping_add(y),
            PrimOp::Sub => x.wrapping_sub(y),
            PrimOp::Mul => x.wrapping_mul(y),
        }),
        (Double(_), _) | (_, Double(_)) => {
            let (x, y) = (a.as_f64(), b.as_f64());
            Double(match op {
                PrimOp::Add => x + y,
                PrimOp::Sub => x - y,
                PrimOp::Mul => x * y,
            })
        }
        _ => {
            let x = a.as_index().expect("numeric reduction operand");
            let y = b.as_index().expect("numeric reduction operand");
            Long(match op {
                PrimOp::Add => x.wrapping_add(y),
                PrimOp::Sub => x.wrapping_sub(y),
                PrimOp::Mul => x.wrapping_mul(y),
            })
        }
    }
}

fn assemble(partials: Vec<Value>, geometry: Option<&Assembly>) -> Result<Value, ReduceError> {
    let arrays: Vec<&Arc<ArrayData>> = partials
        .iter()
        .map(|p| p.as_array().ok_or(ReduceError::NotAnArray))
        .collect::<Result<_, _>>()?;
    let elem = arrays[0].elem_type();
    if arrays.iter().any(|a| a.elem_type() != elem) {
        return Err(ReduceError::MixedTypes);
    }
    match geometry {
        None | Some(Assembly::Concat1D { .. }) => {
            let total: usize = arrays.iter().map(|a| a.flat_len()).sum();
            if let Some(Assembly::Concat1D { expected_len }) = geometry {
                if total != *expected_len {
                    return Err(ReduceError::SizeMismatch { got: total, expected: *expected_len });
                }
            }
            let mut cells = Cells::zeros(elem, total);
            let mut at = 0usize;
            for a in &arrays {
                cells.copy_range(at, &a.cells, 0..a.flat_len());
                at += a.flat_len();
            }
            Ok(Value::array(ArrayData { dims: [total, 1], ndim: 1, cells }))
        }
        Some(Assembly::Blocks { base, row_ranges, col_ranges }) => {
            let (r, c) = (row_ranges.len(), col_ranges.len());
            if arrays.len() != r * c {
                return Err(ReduceError::SizeMismatch { got: arrays.len(), expected: r * c });
            }
            let mut out = base.clone();
            let cols = out.dims[1].max(1);
            for (k, a) in arrays.iter().enumerate() {
                let rr = row_ranges[k / c];
                let cr = if out.ndim == 1 {
                    IndexRange { lo: 0, hi: 1, view_lo: 0, view_hi: 1 }
                } else {
                    col_ranges[k % c]
                };
                let block_cols = cr.owned_len();
                if a.flat_len() != rr.owned_len() * block_cols {
                    return Err(ReduceError::SizeMismatch {
                        got: a.flat_len(),
                        expected: rr.owned_len() * block_cols,
                    });
                }
                for (bi, i) in (rr.lo..rr.hi).enumerate() {
                    let src_start = bi * block_cols;
                    out.cells.copy_range(
                        i * cols + cr.lo,
                        &a.cells,
                        src_start..src_start + block_cols,
                    );
                }
            }
            Ok(Value::array(out))
        }
    }
}

/// Contract for user-defined partitioners: given the length of the value
/// being split, the slave count and the evaluated strategy arguments,
/// produce exactly `n_slaves` ranges covering `[0, length)`.
pub trait UserStrategy: Send + Sync {
    fn partition(
        &self,
        length: usize,
        n_slaves: usize,
        args: &[Value],
    ) -> Result<Vec<IndexRange>, String>;
}

/// Contract for user-defined reducers: `List<R> -> R`.
pub trait UserReducer: Send + Sync {
    fn reduce(&self, partials: &[Value]) -> Result<Value, String>;
}

/// Name-keyed registry, written once at startup.
#[derive(Default)]
pub struct StrategyRegistry {
    strategies: HashMap<String, Arc<dyn UserStrategy>>,
    reducers: HashMap<String, Arc<dyn UserReducer>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the stock strategies used by the benchmark corpus.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_strategy("rowdisjoint", Arc::new(RowDisjointStrategy));
        r
    }

    pub fn register_strategy(&mut self, name: &str, s: Arc<dyn UserStrategy>) {
        self.strategies.insert(name.to_string(), s);
    }

    pub fn register_reducer(&mut self, name: &str, r: Arc<dyn UserReducer>) {
        self.reducers.insert(name.to_string(), r);
    }

    pub fn strategy(&self, name: &str) -> Option<&Arc<dyn UserStrategy>> {
        self.strategies.get(name)
    }

    pub fn reducer(&self, name: &str) -> Option<&Arc<dyn UserReducer>> {
        self.reducers.get(name)
    }

    pub fn has_strategy(&self, name: &str) -> bool {
        self.strategies.contains_key(name)
    }

    pub fn has_reducer(&self, name: &str) -> bool {
        self.reducers.contains_key(name)
    }
}

/// Compressed-row partitioner: takes the row-index vector as its argument
/// and never splits a row across slaves. Applied to the element vectors it
/// returns element ranges; applied to a row-indexed vector (the output
/// accumulator) it returns the matching row ranges.
pub struct RowDisjointStrategy;

impl UserStrategy for RowDisjointStrategy {
    fn partition(
        &self,
        length: usize,
        n_slaves: usize,
        args: &[Value],
    ) -> Result<Vec<IndexRange>, String> {
        let row = args
            .first()
            .and_then(|v| v.as_array())
            .ok_or_else(|| "rowdisjoint expects the row-index array argument".to_string())?;
        let rows: Vec<i64> = (0..row.flat_len())
            .map(|i| row.cells.get(i).as_index().ok_or_else(|| "row index must be integral".to_string()))
            .collect::<Result<_, _>>()?;
        if rows.windows(2).any(|w| w[0] > w[1]) {
            return Err("row index must be sorted non-decreasing".to_string());
        }
        let element_ranges = row_disjoint_partition(&rows, n_slaves);
        if length == rows.len() {
            return Ok(element_ranges);
        }
        // Row-space value (e.g. the per-row accumulator): translate element
        // cuts to row cuts so writes through row_index stay inside the
        // owned range.
        let mut out = Vec::with_capacity(n_slaves);
        let mut prev_row = 0usize;
        for (k, er) in element_ranges.iter().enumerate() {
            let hi_row = if k + 1 == n_slaves || er.hi >= rows.len() {
                length
            } else {
                (rows[er.hi] as usize).min(length)
            };
            let hi_row = hi_row.max(prev_row);
            out.push(IndexRange { lo: prev_row, hi: hi_row, view_lo: prev_row, view_hi: hi_row });
            prev_row = hi_row;
        }
        Ok(out)
    }
}

/// Check the partitioner post-conditions: exactly `n` ascending, disjoint
/// ranges covering `[0, length)`.
pub fn check_partition_contract(ranges: &[IndexRange], length: usize, n: usize) -> Result<(), String> {
    if ranges.len() != n {
        return Err(format!("strategy returned {} ranges, expected {}", ranges.len(), n));
    }
    let mut at = 0usize;
    for r in ranges {
        if r.lo != at || r.hi < r.lo {
            return Err(format!("ranges not contiguous at index {at}: [{}, {})", r.lo, r.hi));
        }
        if r.view_lo > r.lo || r.view_hi < r.hi {
            return Err("view window smaller than owned range".to_string());
        }
        at = r.hi;
    }
    if at != length {
        return Err(format!("ranges cover [0, {at}), expected [0, {length})"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // brute-force oracle: mark every index owned by exactly one range
    fn coverage_exact(ranges: &[IndexRange], length: usize) -> bool {
        let mut seen = vec![0u32; length];
        for r in ranges {
            for cell in &mut seen[r.lo..r.hi] {
                *cell += 1;
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    #[test]
    fn single_slave_owns_all() {
        let r = index_partition(10, 1, (0, 0));
        assert_eq!(r, vec![IndexRange { lo: 0, hi: 10, view_lo: 0, view_hi: 10 }]);
    }

    #[test]
    fn block_partition_ten_three() {
        // expected values recomputed by enumeration: sizes 4,3,3
        let r = index_partition(10, 3, (0, 0));
        assert!(coverage_exact(&r, 10));
        assert_eq!(
            r.iter().map(|x| (x.lo, x.hi)).collect::<Vec<_>>(),
            vec![(0, 4), (4, 7), (7, 10)]
        );
    }

    #[test]
    fn views_clamp_at_edges() {
        let r = index_partition(10, 3, (1, 1));
        assert_eq!(
            r.iter().map(|x| (x.view_lo, x.view_hi)).collect::<Vec<_>>(),
            vec![(0, 5), (3, 8), (6, 10)]
        );
        for x in &r {
            assert!(x.view_lo <= x.lo && x.hi <= x.view_hi);
        }
    }

    #[test]
    fn zero_length_yields_empty_ranges() {
        let r = index_partition(0, 3, (1, 1));
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|x| x.lo == 0 && x.hi == 0 && x.view_len() == 0));
    }

    #[test]
    fn near_square_grid_four_by_four() {
        let p = block_block_partition(4, 4, 4, ((0, 0), (0, 0)));
        assert_eq!(p.grid, (2, 2));
        // enumeration: every cell covered exactly once across the 4 blocks
        let mut seen = [0u32; 16];
        for k in 0..4 {
            let rr = p.row_ranges[k / 2];
            let cr = p.col_ranges[k % 2];
            for i in rr.lo..rr.hi {
                for j in cr.lo..cr.hi {
                    seen[i * 4 + j] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn single_block_views_clamped() {
        let p = block_block_partition(6, 6, 1, ((1, 1), (1, 1)));
        assert_eq!(p.grid, (1, 1));
        assert_eq!(p.row_ranges[0], IndexRange { lo: 0, hi: 6, view_lo: 0, view_hi: 6 });
        assert_eq!(p.col_ranges[0], IndexRange { lo: 0, hi: 6, view_lo: 0, view_hi: 6 });
    }

    #[test]
    fn prime_count_factors_one_by_n() {
        let p = block_block_partition(5, 7, 3, ((0, 0), (0, 0)));
        assert_eq!(p.grid, (1, 3));
        assert_eq!(
            p.col_ranges.iter().map(|r| r.owned_len()).collect::<Vec<_>>(),
            vec![3, 2, 2]
        );
    }

    #[test]
    fn row_disjoint_never_splits_a_row() {
        let rows = vec![0, 0, 1, 1, 1, 2];
        let r = row_disjoint_partition(&rows, 2);
        assert!(coverage_exact(&r, 6));
        let cut = r[0].hi;
        assert!(cut == 2 || cut == 5, "cut at {cut} splits row 1");
    }

    #[test]
    fn row_disjoint_one_row_one_slave() {
        let r = row_disjoint_partition(&[0], 1);
        assert_eq!(r, vec![IndexRange { lo: 0, hi: 1, view_lo: 0, view_hi: 1 }]);
    }

    #[test]
    fn row_disjoint_one_row_each() {
        let r = row_disjoint_partition(&[0, 1, 2, 3], 4);
        assert_eq!(
            r.iter().map(|x| (x.lo, x.hi)).collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (2, 3), (3, 4)]
        );
    }

    #[test]
    fn prim_reduction_examples() {
        let ctx = ReduceCtx {
            registry: &StrategyRegistry::new(),
            self_apply: None,
            assembly: None,
        };
        let sum = apply_reduction(
            &ReduceSpec::Prim(PrimOp::Add),
            vec![Value::int(1), Value::int(2), Value::int(3)],
            &ctx,
        )
        .unwrap();
        assert_eq!(sum, Value::int(6));
    }

    #[test]
    fn assembly_concatenates_in_rank_order() {
        let ctx = ReduceCtx {
            registry: &StrategyRegistry::new(),
            self_apply: None,
            assembly: Some(Assembly::Concat1D { expected_len: 5 }),
        };
        let out = apply_reduction(
            &ReduceSpec::ArrayAssembly,
            vec![
                Value::array(ArrayData::from_i32(vec![1, 2])),
                Value::array(ArrayData::from_i32(vec![3])),
                Value::array(ArrayData::from_i32(vec![4, 5])),
            ],
            &ctx,
        )
        .unwrap();
        assert_eq!(out, Value::array(ArrayData::from_i32(vec![1, 2, 3, 4, 5])));
    }

    #[test]
    fn assembly_size_mismatch_rejected() {
        let ctx = ReduceCtx {
            registry: &StrategyRegistry::new(),
            self_apply: None,
            assembly: Some(Assembly::Concat1D { expected_len: 4 }),
        };
        let err = apply_reduction(
            &ReduceSpec::ArrayAssembly,
            vec![Value::array(ArrayData::from_i32(vec![1, 2, 3]))],
            &ctx,
        )
        .unwrap_err();
        assert!(matches!(err, ReduceError::SizeMismatch { .. }));
    }

    #[test]
    fn self_reduction_reapplies_method() {
        // partials [10, 20, 12] with a summing self-application -> 42
        let summed = |v: Value| -> Result<Value, String> {
            let a = v.as_array().unwrap();
            let mut acc = 0i32;
            for i in 0..a.flat_len() {
                if let Scalar::Int(x) = a.cells.get(i) {
                    acc = acc.wrapping_add(x);
                }
            }
            Ok(Value::int(acc))
        };
        let ctx = ReduceCtx {
            registry: &StrategyRegistry::new(),
            self_apply: Some(&summed),
            assembly: None,
        };
        let out = apply_reduction(
            &ReduceSpec::SelfReduce,
            vec![Value::int(10), Value::int(20), Value::int(12)],
            &ctx,
        )
        .unwrap();
        assert_eq!(out, Value::int(42));
    }

    #[test]
    fn reduction_is_deterministic() {
        let ctx = ReduceCtx { registry: &StrategyRegistry::new(), self_apply: None, assembly: None };
        let inputs = vec![Value::double(0.1), Value::double(0.2), Value::double(0.3)];
        let a = apply_reduction(&ReduceSpec::Prim(PrimOp::Add), inputs.clone(), &ctx).unwrap();
        let b = apply_reduction(&ReduceSpec::Prim(PrimOp::Add), inputs, &ctx).unwrap();
        match (a, b) {
            (Value::Scalar(Scalar::Double(x)), Value::Scalar(Scalar::Double(y))) => {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            _ => panic!("expected doubles"),
        }
    }

    #[test]
    fn user_reducer_dispatch() {
        struct MaxReducer;
        impl UserReducer for MaxReducer {
            fn reduce(&self, partials: &[Value]) -> Result<Value, String> {
                let mut best = i32::MIN;
                for p in partials {
                    if let Some(Scalar::Int(v)) = p.as_scalar() {
                        best = best.max(v);
                    }
                }
                Ok(Value::int(best))
            }
        }
        let mut reg = StrategyRegistry::new();
        reg.register_reducer("maxi", Arc::new(MaxReducer));
        let ctx = ReduceCtx { registry: &reg, self_apply: None, assembly: None };
        let out = apply_reduction(
            &ReduceSpec::User { name: "maxi".into(), args: vec![] },
            vec![Value::int(3), Value::int(9), Value::int(4)],
            &ctx,
        )
        .unwrap();
        assert_eq!(out, Value::int(9));
    }

    proptest! {
        #[test]
        fn coverage_disjointness_balance(length in 0usize..10_000, n in 1usize..64, before in 0u32..3, after in 0u32..3) {
            let ranges = index_partition(length, n, (before, after));
            prop_assert!(coverage_exact(&ranges, length));
            let max = ranges.iter().map(IndexRange::owned_len).max().unwrap();
            let min = ranges.iter().map(IndexRange::owned_len).min().unwrap();
            prop_assert!(max - min <= 1);
            for r in &ranges {
                prop_assert!(r.view_lo <= r.lo && r.hi <= r.view_hi);
                prop_assert!(r.view_hi <= length);
            }
        }

        #[test]
        fn row_disjoint_property(raw in proptest::collection::vec(0i64..40, 0..200), n in 1usize..9) {
            let mut rows = raw;
            rows.sort_unstable();
            let ranges = row_disjoint_partition(&rows, n);
            prop_assert!(coverage_exact(&ranges, rows.len()));
            for r in &ranges {
                if r.hi > r.lo && r.hi < rows.len() {
                    prop_assert_ne!(rows[r.hi - 1], rows[r.hi], "range straddles a row boundary");
                }
            }
        }
    }
}
