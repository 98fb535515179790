//! Dense row-major tensors and the raw (non-differentiable) kernels the
//! autodiff tape is built from.
//!
//! Buffers are shared behind an `Arc`, so `reshape` and `clone` never copy.
//! Every kernel that changes layout (`permute`, `slice`, `concat`, ...)
//! produces a fresh contiguous buffer.

mod io;
mod scalar;

use std::sync::Arc;

pub use io::{read_shape, read_tensor, write_tensor, TENSOR_MAGIC};
pub use scalar::{DType, Scalar};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::dim(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides for reading a tensor of `shape` as if it had shape `target`
/// (zero stride on broadcast axes).
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visit every multi-index of `shape` in row-major order, yielding the
/// linear offsets into each of the strided operands.
fn for_each_offset<const K: usize>(
    shape: &[usize],
    strides: [&[usize]; K],
    mut f: impl FnMut([usize; K]),
) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; K];
    for _ in 0..total {
        f(offs);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            for k in 0..K {
                offs[k] += strides[k][axis];
            }
            if idx[axis] < shape[axis] {
                break;
            }
            for k in 0..K {
                offs[k] -= strides[k][axis] * shape[axis];
            }
            idx[axis] = 0;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} holds {} elements but buffer has {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![value]),
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .map(|v| U::of_f64(v.to_f64().unwrap_or(f64::NAN)))
                    .collect(),
            ),
        }
    }

    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        if index.len() != self.rank() {
            return Err(Error::dim("get", &self.shape, index));
        }
        let mut off = 0;
        for ((&i, &extent), stride) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= extent {
                return Err(Error::Index {
                    op: "get",
                    index: i,
                    extent,
                });
            }
            off += i * stride;
        }
        Ok(self.data[off])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major reinterpretation; shares the buffer.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Elementwise binary op under numpy broadcasting.
    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: Arc::new(data),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape, op)?;
        // Fast path: `other` is a suffix of `self`, repeated over leading axes.
        if out_shape == self.shape && self.shape.ends_with(&other.shape) {
            let period = other.numel().max(1);
            let data = self
                .data
                .iter()
                .enumerate()
                .map(|(i, &a)| f(a, other.data[i % period]))
                .collect();
            return Ok(Tensor {
                shape: out_shape,
                data: Arc::new(data),
            });
        }
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for_each_offset(&out_shape, [&sa, &sb], |[ia, ib]| {
            data.push(f(self.data[ia], other.data[ib]))
        });
        Ok(Tensor {
            shape: out_shape,
            data: Arc::new(data),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Sum-reduce a broadcast result back down to `shape` (the adjoint of
    /// broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shape(shape, &self.shape, "sum_to_shape")?;
        if check != self.shape {
            return Err(Error::dim("sum_to_shape", &self.shape, shape));
        }
        let mut out = vec![T::zero(); numel(shape)];
        if self.shape.ends_with(shape) {
            let period = out.len().max(1);
            for (i, &v) in self.data.iter().enumerate() {
                out[i % period] = out[i % period] + v;
            }
        } else {
            let so = broadcast_strides(shape, &self.shape);
            let si = strides_of(&self.shape);
            for_each_offset(&self.shape, [&si, &so], |[i, o]| {
                out[o] = out[o] + self.data[i]
            });
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Batched matrix product over the last two axes with broadcast leading
    /// axes. `trans_a` / `trans_b` read the operand's last two axes swapped.
    pub fn matmul_ex(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        let (a, b) = (self, other);
        if a.rank() < 2 || b.rank() < 2 {
            return Err(Error::dim("matmul", &a.shape, &b.shape));
        }
        let (ar, ac) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
        let (br, bc) = (b.shape[b.rank() - 2], b.shape[b.rank() - 1]);
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::dim("matmul", &a.shape, &b.shape));
        }
        let batch_a = &a.shape[..a.rank() - 2];
        let batch_b = &b.shape[..b.rank() - 2];
        let batch = broadcast_shape(batch_a, batch_b, "matmul")
            .map_err(|_| Error::dim("matmul", &a.shape, &b.shape))?;
        let nbatch = numel(&batch);
        let sa: Vec<usize> = broadcast_strides(batch_a, &batch)
            .into_iter()
            .map(|s| s * ar * ac)
            .collect();
        let sb: Vec<usize> = broadcast_strides(batch_b, &batch)
            .into_iter()
            .map(|s| s * br * bc)
            .collect();
        let mut out = vec![T::zero(); nbatch * m * n];
        let (rsa, csa) = if trans_a { (1, ac) } else { (ac, 1) };
        let (rsb, csb) = if trans_b { (1, bc) } else { (bc, 1) };
        let mut pos = 0usize;
        let mut run = |[oa, ob]: [usize; 2]| {
            let c = &mut out[pos * m * n..(pos + 1) * m * n];
            T::gemm(
                m,
                k,
                n,
                &a.data[oa..oa + ar * ac],
                (rsa, csa),
                &b.data[ob..ob + br * bc],
                (rsb, csb),
                c,
            );
            pos += 1;
        };
        if batch.is_empty() {
            run([0, 0]);
        } else {
            for_each_offset(&batch, [&sa, &sb], &mut run);
        }
        let mut shape = batch;
        shape.extend([m, n]);
        Tensor::new(shape, out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_ex(other, false, false)
    }

    fn axis_check(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Index {
                op,
                index: axis,
                extent: self.rank(),
            });
        }
        Ok(())
    }

    /// Split the shape around `axis` into (outer, extent, inner) counts.
    fn around(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.rank()];
        if perm.len() != self.rank()
            || perm.iter().any(|&p| p >= self.rank() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim("permute", &self.shape, perm));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let own = self.strides();
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src: Vec<usize> = perm.iter().map(|&p| own[p]).collect();
        let mut data = Vec::with_capacity(self.numel());
        for_each_offset(&shape, [&src], |[i]| data.push(self.data[i]));
        Tensor::new(shape, data)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        self.axis_check(axis, "slice")?;
        let extent = self.shape[axis];
        if start > end || end > extent {
            return Err(Error::Index {
                op: "slice",
                index: end.max(start),
                extent,
            });
        }
        let (outer, _, inner) = self.around(axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, data)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        first.axis_check(axis, "concat")?;
        let mut total = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first.shape, &p.shape));
            }
            total += p.shape[axis];
        }
        let (outer, _, inner) = first.around(axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(shape, data)
    }

    /// Place `self` at `offset` inside a zero tensor whose extent along
    /// `axis` is `len`.
    pub fn zero_pad_assign(&self, axis: usize, offset: usize, len: usize) -> Result<Self> {
        self.axis_check(axis, "zero_pad_assign")?;
        let extent = self.shape[axis];
        if offset + extent > len {
            return Err(Error::Index {
                op: "zero_pad_assign",
                index: offset + extent,
                extent: len,
            });
        }
        let (outer, _, inner) = self.around(axis);
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let dst = o * len * inner + offset * inner;
            data[dst..dst + extent * inner]
                .copy_from_slice(&self.data[o * extent * inner..(o + 1) * extent * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, data)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        self.axis_check(axis, "sum_axis")?;
        let (outer, extent, inner) = self.around(axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &self.data[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Tensor::new(shape, data)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        self.axis_check(axis, "mean_axis")?;
        let n = T::from_usize(self.shape[axis]).expect("extent fits in float");
        Ok(self.sum_axis(axis)?.map(|v| v / n))
    }

    /// Inverse of `sum_axis`: repeat along a re-inserted `axis` of `extent`.
    pub fn expand_axis(&self, axis: usize, extent: usize) -> Result<Self> {
        if axis > self.rank() {
            return Err(Error::Index {
                op: "expand_axis",
                index: axis,
                extent: self.rank(),
            });
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis..]);
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for _ in 0..extent {
                data.extend_from_slice(&self.data[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape.insert(axis, extent);
        Tensor::new(shape, data)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.axis_check(axis, "softmax")?;
        let (outer, extent, inner) = self.around(axis);
        let mut data = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * extent + e) * inner + i;
                let mut max = T::neg_infinity();
                for e in 0..extent {
                    max = max.max(self.data[at(e)]);
                }
                let mut total = T::zero();
                for e in 0..extent {
                    let v = (self.data[at(e)] - max).exp();
                    data[at(e)] = v;
                    total = total + v;
                }
                for e in 0..extent {
                    data[at(e)] = data[at(e)] / total;
                }
            }
        }
        Tensor::new(self.shape.clone(), data)
    }
}
