//! Runtime values: wrapping integers, IEEE doubles, booleans and flat
//! row-major arrays.
//!
//! Arrays sit behind `Arc` with copy-on-write mutation, which gives the
//! language value semantics at call boundaries while keeping read-only
//! sharing free — a method instance that only reads its partition aliases
//! the original storage.

use crate::ast::ScalarType;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    Int(i32),
    Long(i64),
    Double(f64),
    Bool(bool),
}

impl Scalar {
    pub fn ty(self) -> ScalarType {
        match self {
            Scalar::Int(_) => ScalarType::Int,
            Scalar::Long(_) => ScalarType::Long,
            Scalar::Double(_) => ScalarType::Double,
            Scalar::Bool(_) => ScalarType::Bool,
        }
    }

    pub fn zero(ty: ScalarType) -> Scalar {
        match ty {
            ScalarType::Int => Scalar::Int(0),
            ScalarType::Long => Scalar::Long(0),
            ScalarType::Double => Scalar::Double(0.0),
            ScalarType::Bool => Scalar::Bool(false),
        }
    }

    /// Implicit widening (int -> long -> double); identity otherwise.
    pub fn widen_to(self, ty: ScalarType) -> Option<Scalar> {
        Some(match (self, ty) {
            (s, t) if s.ty() == t => s,
            (Scalar::Int(v), ScalarType::Long) => Scalar::Long(v as i64),
            (Scalar::Int(v), ScalarType::Double) => Scalar::Double(v as f64),
            (Scalar::Long(v), ScalarType::Double) => Scalar::Double(v as f64),
            _ => return None,
        })
    }

    pub fn as_index(self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(v as i64),
            Scalar::Long(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v as f64,
            Scalar::Long(v) => v as f64,
            Scalar::Double(v) => v,
            Scalar::Bool(v) => v as u8 as f64,
        }
    }

    pub fn truthy(self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(b),
            _ => None,
        }
    }
}

/// Typed flat storage; two-dimensional arrays are row-major.
#[derive(Clone, Debug, PartialEq)]
pub enum Cells {
    I32(Vec<i32>),
    I64(Vec<i64>),
    F64(Vec<f64>),
    Bool(Vec<bool>),
}

impl Cells {
    pub fn zeros(ty: ScalarType, n: usize) -> Cells {
        match ty {
            ScalarType::Int => Cells::I32(vec![0; n]),
            ScalarType::Long => Cells::I64(vec![0; n]),
            ScalarType::Double => Cells::F64(vec![0.0; n]),
            ScalarType::Bool => Cells::Bool(vec![false; n]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Cells::I32(v) => v.len(),
            Cells::I64(v) => v.len(),
            Cells::F64(v) => v.len(),
            Cells::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_type(&self) -> ScalarType {
        match self {
            Cells::I32(_) => ScalarType::Int,
            Cells::I64(_) => ScalarType::Long,
            Cells::F64(_) => ScalarType::Double,
            Cells::Bool(_) => ScalarType::Bool,
        }
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            Cells::I32(v) => Scalar::Int(v[i]),
            Cells::I64(v) => Scalar::Long(v[i]),
            Cells::F64(v) => Scalar::Double(v[i]),
            Cells::Bool(v) => Scalar::Bool(v[i]),
        }
    }

    /// Stores `s`, widening it to the element type. Panics if the scalar
    /// cannot widen; the validator rules that out for checked programs.
    pub fn set(&mut self, i: usize, s: Scalar) {
        match (self, s.widen_to_storage()) {
            (Cells::I32(v), Scalar::Int(x)) => v[i] = x,
            (Cells::I64(v), Scalar::Int(x)) => v[i] = x as i64,
            (Cells::I64(v), Scalar::Long(x)) => v[i] = x,
            (Cells::F64(v), Scalar::Int(x)) => v[i] = x as f64,
            (Cells::F64(v), Scalar::Long(x)) => v[i] = x as f64,
            (Cells::F64(v), Scalar::Double(x)) => v[i] = x,
            (Cells::Bool(v), Scalar::Bool(x)) => v[i] = x,
            (cells, s) => panic!("cannot store {:?} into {:?} cells", s.ty(), cells.elem_type()),
        }
    }

    pub fn copy_range(&mut self, dst_start: usize, src: &Cells, src_range: std::ops::Range<usize>) {
        match (self, src) {
            (Cells::I32(d), Cells::I32(s)) => d[dst_start..dst_start + src_range.len()].copy_from_slice(&s[src_range]),
            (Cells::I64(d), Cells::I64(s)) => d[dst_start..dst_start + src_range.len()].copy_from_slice(&s[src_range]),
            (Cells::F64(d), Cells::F64(s)) => d[dst_start..dst_start + src_range.len()].copy_from_slice(&s[src_range]),
            (Cells::Bool(d), Cells::Bool(s)) => d[dst_start..dst_start + src_range.len()].copy_from_slice(&s[src_range]),
            _ => panic!("copy_range across element types"),
        }
    }
}

impl Scalar {
    fn widen_to_storage(self) -> Scalar {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayData {
    /// `[len, 1]` for one-dimensional arrays, `[rows, cols]` otherwise.
    pub dims: [usize; 2],
    pub ndim: u8,
    pub cells: Cells,
}

impl ArrayData {
    pub fn new_1d(ty: ScalarType, len: usize) -> ArrayData {
        ArrayData { dims: [len, 1], ndim: 1, cells: Cells::zeros(ty, len) }
    }

    pub fn new_2d(ty: ScalarType, rows: usize, cols: usize) -> ArrayData {
        ArrayData { dims: [rows, cols], ndim: 2, cells: Cells::zeros(ty, rows * cols) }
    }

    pub fn from_i32(v: Vec<i32>) -> ArrayData {
        ArrayData { dims: [v.len(), 1], ndim: 1, cells: Cells::I32(v) }
    }

    pub fn from_f64(v: Vec<f64>) -> ArrayData {
        ArrayData { dims: [v.len(), 1], ndim: 1, cells: Cells::F64(v) }
    }

    pub fn from_f64_2d(rows: Vec<Vec<f64>>) -> ArrayData {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut flat = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged matrix");
            flat.extend_from_slice(row);
        }
        ArrayData { dims: [r, c], ndim: 2, cells: Cells::F64(flat) }
    }

    pub fn from_i32_2d(rows: Vec<Vec<i32>>) -> ArrayData {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut flat = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged matrix");
            flat.extend_from_slice(row);
        }
        ArrayData { dims: [r, c], ndim: 2, cells: Cells::I32(flat) }
    }

    pub fn elem_type(&self) -> ScalarType {
        self.cells.elem_type()
    }

    pub fn len(&self) -> usize {
        self.dims[0]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0
    }

    pub fn flat_len(&self) -> usize {
        self.cells.len()
    }
}

/// A method instance's view of one distributed value: either a copy-free
/// alias of the whole array (read-only partitions) or a materialized
/// window copy covering the owned range plus its halo.
///
/// Indexing is always in global coordinates; the view maps them onto its
/// storage. Reads must fall inside the visible window, writes inside the
/// owned range.
#[derive(Clone, Debug, PartialEq)]
pub struct DistArray {
    pub ndim: u8,
    pub full_dims: [usize; 2],
    /// Owned half-open range per dimension.
    pub owned_lo: [usize; 2],
    pub owned_hi: [usize; 2],
    /// Visible window per dimension (owned extended by the view and
    /// clamped to the dimension).
    pub view_lo: [usize; 2],
    pub view_hi: [usize; 2],
    /// Whether this instance holds the first/last range of each dimension;
    /// lets the slave elide the boundary `max`/`min` when asked to.
    pub first: [bool; 2],
    pub last: [bool; 2],
    pub storage: DistStorage,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DistStorage {
    /// Full backing array, indexed globally. Never written.
    Alias(Arc<ArrayData>),
    /// Private window; cell `(i, j)` lives at
    /// `(i - view_lo[0]) * width + (j - view_lo[1])`.
    Window(Cells),
}

impl DistArray {
    fn window_width(&self) -> usize {
        if self.ndim == 1 {
            1
        } else {
            self.view_hi[1] - self.view_lo[1]
        }
    }

    pub fn in_view(&self, i: usize, j: usize) -> bool {
        i >= self.view_lo[0]
            && i < self.view_hi[0]
            && (self.ndim == 1 || (j >= self.view_lo[1] && j < self.view_hi[1]))
    }

    pub fn in_owned(&self, i: usize, j: usize) -> bool {
        i >= self.owned_lo[0]
            && i < self.owned_hi[0]
            && (self.ndim == 1 || (j >= self.owned_lo[1] && j < self.owned_hi[1]))
    }

    pub fn read(&self, i: usize, j: usize) -> Option<Scalar> {
        match &self.storage {
            DistStorage::Alias(a) => {
                if i < a.dims[0] && (self.ndim == 1 || j < a.dims[1]) {
                    Some(a.cells.get(i * a.dims[1].max(1) + j))
                } else {
                    None
                }
            }
            DistStorage::Window(cells) => {
                if !self.in_view(i, j) {
                    return None;
                }
                let w = self.window_width();
                Some(cells.get((i - self.view_lo[0]) * w + (j - self.view_lo[1].min(j))))
            }
        }
    }

    pub fn write(&mut self, i: usize, j: usize, v: Scalar) -> Result<(), &'static str> {
        if !self.in_owned(i, j) {
            return Err("write outside the instance's owned range");
        }
        match &mut self.storage {
            DistStorage::Alias(_) => Err("write to a copy-free aliased partition"),
            DistStorage::Window(cells) => {
                let w = if self.ndim == 1 { 1 } else { self.view_hi[1] - self.view_lo[1] };
                cells.set((i - self.view_lo[0]) * w + (j - self.view_lo[1].min(j)), v);
                Ok(())
            }
        }
    }

    pub fn elem_type(&self) -> ScalarType {
        match &self.storage {
            DistStorage::Alias(a) => a.elem_type(),
            DistStorage::Window(c) => c.elem_type(),
        }
    }

    /// Extract the owned region as a plain array (the instance's partial
    /// result for assembly).
    pub fn owned_data(&self) -> ArrayData {
        let rows = self.owned_hi[0] - self.owned_lo[0];
        let cols = if self.ndim == 1 { 1 } else { self.owned_hi[1] - self.owned_lo[1] };
        let mut out = if self.ndim == 1 {
            ArrayData::new_1d(self.elem_type(), rows)
        } else {
            ArrayData::new_2d(self.elem_type(), rows, cols)
        };
        for bi in 0..rows {
            for bj in 0..cols {
                let (i, j) = (self.owned_lo[0] + bi, self.owned_lo[1] + bj);
                let v = self.read(i, if self.ndim == 1 { 0 } else { j }).expect("owned in view");
                out.cells.set(bi * cols + bj, v);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(Scalar),
    Array(Arc<ArrayData>),
    Dist(Arc<DistArray>),
}

impl Value {
    pub fn int(v: i32) -> Value {
        Value::Scalar(Scalar::Int(v))
    }

    pub fn long(v: i64) -> Value {
        Value::Scalar(Scalar::Long(v))
    }

    pub fn double(v: f64) -> Value {
        Value::Scalar(Scalar::Double(v))
    }

    pub fn array(a: ArrayData) -> Value {
        Value::Array(Arc::new(a))
    }

    pub fn as_scalar(&self) -> Option<Scalar> {
        match self {
            Value::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&Arc<ArrayData>> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    /// Plain-array form: unwraps aliases and copies out window contents.
    pub fn to_plain_array(&self) -> Option<Arc<ArrayData>> {
        match self {
            Value::Array(a) => Some(a.clone()),
            Value::Dist(d) => match &d.storage {
                DistStorage::Alias(a) => Some(a.clone()),
                DistStorage::Window(_) => Some(Arc::new(d.owned_data())),
            },
            Value::Scalar(_) => None,
        }
    }

    pub fn type_name(&self) -> String {
        match self {
            Value::Scalar(s) => s.ty().keyword().to_string(),
            Value::Array(a) => format!(
                "{}{}",
                a.elem_type().keyword(),
                if a.ndim == 1 { "[]" } else { "[][]" }
            ),
            Value::Dist(d) => format!(
                "{}{}",
                d.elem_type().keyword(),
                if d.ndim == 1 { "[]" } else { "[][]" }
            ),
        }
    }
}

/// Order-sensitive 64-bit FNV-1a checksum over the value's type shape and
/// bit patterns. Used by the benchmark harness to pin oracle outputs.
pub fn checksum(v: &Value) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    let mut mix = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    fn scalar_bytes(s: Scalar, mix: &mut impl FnMut(&[u8])) {
        match s {
            Scalar::Int(v) => {
                mix(&[1]);
                mix(&v.to_le_bytes());
            }
            Scalar::Long(v) => {
                mix(&[2]);
                mix(&v.to_le_bytes());
            }
            Scalar::Double(v) => {
                mix(&[3]);
                mix(&v.to_bits().to_le_bytes());
            }
            Scalar::Bool(v) => {
                mix(&[4, v as u8]);
            }
        }
    }
    match v {
        Value::Scalar(s) => scalar_bytes(*s, &mut mix),
        Value::Array(a) => {
            mix(&[5, a.ndim]);
            mix(&(a.dims[0] as u64).to_le_bytes());
            mix(&(a.dims[1] as u64).to_le_bytes());
            for i in 0..a.flat_len() {
                scalar_bytes(a.cells.get(i), &mut mix);
            }
        }
        Value::Dist(d) => return checksum(&Value::Array(Arc::new(d.owned_data()))),
    }
    h
}

/// Compare two values elementwise. Integers and booleans must match
/// bitwise; doubles may differ by `tol` relative magnitude (`tol = 0.0`
/// demands bitwise equality there too).
pub fn approx_eq(a: &Value, b: &Value, tol: f64) -> bool {
    fn scalar_eq(a: Scalar, b: Scalar, tol: f64) -> bool {
        match (a, b) {
            (Scalar::Double(x), Scalar::Double(y)) => {
                if tol == 0.0 || x.is_nan() || y.is_nan() {
                    x.to_bits() == y.to_bits()
                } else {
                    let scale = x.abs().max(y.abs()).max(1.0);
                    (x - y).abs() <= tol * scale
                }
            }
            _ => a == b,
        }
    }
    match (a, b) {
        (Value::Scalar(x), Value::Scalar(y)) => scalar_eq(*x, *y, tol),
        (Value::Array(x), Value::Array(y)) => {
            x.ndim == y.ndim
                && x.dims == y.dims
                && x.elem_type() == y.elem_type()
                && (0..x.flat_len()).all(|i| scalar_eq(x.cells.get(i), y.cells.get(i), tol))
        }
        (Value::Dist(x), _) => approx_eq(&Value::Array(Arc::new(x.owned_data())), b, tol),
        (_, Value::Dist(y)) => approx_eq(a, &Value::Array(Arc::new(y.owned_data())), tol),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_is_order_sensitive() {
        let a = Value::array(ArrayData::from_i32(vec![1, 2, 3]));
        let b = Value::array(ArrayData::from_i32(vec![3, 2, 1]));
        assert_ne!(checksum(&a), checksum(&b));
        assert_eq!(checksum(&a), checksum(&a.clone()));
    }

    #[test]
    fn approx_eq_relative_tolerance() {
        let a = Value::double(1.0);
        let b = Value::double(1.0 + 1e-13);
        assert!(approx_eq(&a, &b, 1e-12));
        assert!(!approx_eq(&a, &b, 0.0));
        assert!(!approx_eq(&a, &Value::double(1.0 + 1e-9), 1e-12));
    }
}
