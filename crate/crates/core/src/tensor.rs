//! Dense row-major tensors and generalized pairwise contraction.
//!
//! Linearization is row-major everywhere (last index fastest). Mode indices in
//! this API are 0-based.

use crate::error::{Error, Result};

/// A dense real tensor with an explicit shape.
///
/// Order 0 is a scalar (empty shape, one entry). All mode lengths are >= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if let Some(k) = shape.iter().position(|&n| n == 0) {
        return Err(Error::Shape(format!("mode {k} has length 0 in {shape:?}")));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Order-1 tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vectors must have at least one entry");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Order-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index order mismatch");
        let mut off = 0;
        for (k, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of range for mode {k} of length {n}");
            off = off * n + i;
        }
        off
    }

    /// Entry at a 0-based multi-index. Panics when out of range.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Reshapes an order-1 tensor to `shape` (row-major).
pub fn tensorize(v: &DenseTensor, shape: &[usize]) -> Result<DenseTensor> {
    if v.order() != 1 {
        return Err(Error::Shape(format!(
            "tensorize expects an order-1 tensor, got order {}",
            v.order()
        )));
    }
    DenseTensor::new(shape.to_vec(), v.data.clone())
}

/// Order-1 view of all entries in row-major order.
pub fn flatten(t: &DenseTensor) -> DenseTensor {
    DenseTensor {
        shape: vec![t.data.len()],
        data: t.data.clone(),
    }
}

/// Output mode `k` takes the length and entries of input mode `perm[k]`.
pub fn permute(t: &DenseTensor, perm: &[usize]) -> Result<DenseTensor> {
    let d = t.order();
    if perm.len() != d {
        return Err(Error::Argument(format!(
            "permutation {perm:?} has length {} for an order-{d} tensor",
            perm.len()
        )));
    }
    let mut seen = vec![false; d];
    for &p in perm {
        if p >= d || seen[p] {
            return Err(Error::Argument(format!(
                "{perm:?} is not a permutation of 0..{d}"
            )));
        }
        seen[p] = true;
    }
    if perm.iter().enumerate().all(|(k, &p)| k == p) {
        return Ok(t.clone());
    }

    let in_strides = strides(&t.shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let len = t.data.len();
    if len == 0 {
        return Ok(DenseTensor {
            shape: out_shape,
            data: Vec::new(),
        });
    }
    // drop unit modes and fuse output neighbours that stay adjacent in the source
    let mut dims: Vec<(usize, usize)> = Vec::with_capacity(d);
    for &p in perm {
        let (n, st) = (t.shape[p], in_strides[p]);
        if n == 1 {
            continue;
        }
        match dims.last_mut() {
            Some(last) if last.1 == st * n => *last = (last.0 * n, st),
            _ => dims.push((n, st)),
        }
    }
    let (run, run_stride) = dims.pop().unwrap_or((1, 1));
    let outer_len = len / run;
    let mut data = Vec::with_capacity(len);
    let mut idx = vec![0usize; dims.len()];
    let mut src = 0usize;
    for _ in 0..outer_len {
        if run_stride == 1 {
            data.extend_from_slice(&t.data[src..src + run]);
        } else {
            data.extend((0..run).map(|j| t.data[src + j * run_stride]));
        }
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            src += dims[k].1;
            if idx[k] < dims[k].0 {
                break;
            }
            src -= dims[k].1 * dims[k].0;
            idx[k] = 0;
        }
    }
    Ok(DenseTensor {
        shape: out_shape,
        data,
    })
}

fn check_modes(modes: &[usize], order: usize, which: &str) -> Result<()> {
    let mut seen = vec![false; order];
    for &m in modes {
        if m >= order {
            return Err(Error::Argument(format!(
                "mode {m} out of range for order-{order} tensor {which}"
            )));
        }
        if seen[m] {
            return Err(Error::Argument(format!(
                "duplicate mode {m} in contraction list for {which}"
            )));
        }
        seen[m] = true;
    }
    Ok(())
}

/// Contracts `modes_a` of `a` against `modes_b` of `b` pairwise.
///
/// The result carries the free modes of `a` in their original order followed
/// by the free modes of `b`.
pub fn contract(
    a: &DenseTensor,
    b: &DenseTensor,
    modes_a: &[usize],
    modes_b: &[usize],
) -> Result<DenseTensor> {
    if modes_a.len() != modes_b.len() {
        return Err(Error::Argument(format!(
            "contraction lists differ in length: {modes_a:?} vs {modes_b:?}"
        )));
    }
    if modes_a.is_empty() {
        return Err(Error::Argument(
            "contraction needs at least one mode pair".into(),
        ));
    }
    check_modes(modes_a, a.order(), "A")?;
    check_modes(modes_b, b.order(), "B")?;
    for (&ma, &mb) in modes_a.iter().zip(modes_b) {
        if a.shape[ma] != b.shape[mb] {
            return Err(Error::Contraction {
                mode_a: ma,
                mode_b: mb,
                len_a: a.shape[ma],
                len_b: b.shape[mb],
            });
        }
    }

    let free_a: Vec<usize> = (0..a.order()).filter(|m| !modes_a.contains(m)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|m| !modes_b.contains(m)).collect();

    let perm_a: Vec<usize> = free_a.iter().chain(modes_a).copied().collect();
    let perm_b: Vec<usize> = modes_b.iter().chain(&free_b).copied().collect();
    let a_mat = permute(a, &perm_a)?;
    let b_mat = permute(b, &perm_b)?;

    let rows: usize = free_a.iter().map(|&m| a.shape[m]).product();
    let inner: usize = modes_a.iter().map(|&m| a.shape[m]).product();
    let cols: usize = free_b.iter().map(|&m| b.shape[m]).product();

    let data = matmul(&a_mat.data, &b_mat.data, rows, inner, cols);
    let shape = free_a
        .iter()
        .map(|&m| a.shape[m])
        .chain(free_b.iter().map(|&m| b.shape[m]))
        .collect();
    Ok(DenseTensor { shape, data })
}

/// Outer product: modes of `a` followed by modes of `b`.
pub fn outer(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let data = matmul(&a.data, &b.data, a.len(), 1, b.len());
    let shape = a.shape.iter().chain(&b.shape).copied().collect();
    DenseTensor { shape, data }
}

/// Row-major `rows x inner` times `inner x cols`. Each output entry is summed
/// sequentially over the inner index.
pub(crate) fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    for i in 0..rows {
        let a_row = &a[i * inner..(i + 1) * inner];
        let c_row = &mut c[i * cols..(i + 1) * cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * cols..(k + 1) * cols];
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
    c
}
