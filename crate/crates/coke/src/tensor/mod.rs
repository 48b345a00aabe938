//! Dense n-dimensional tensors and a reverse-mode gradient tape.
//!
//! Values are stored row-major at the element type `E` (f32 in production,
//! f64 available for gradient validation); inner products and reductions
//! always accumulate in f64 so the storage precision does not poison the
//! finite-difference contract. Tensors are immutable once produced; the
//! tape owns every intermediate value of a single forward pass and replays
//! the recorded ops in exact reverse order on `backward`.

mod tape;

pub use tape::{Tape, Var};

use crate::error::{CokeError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Elem:
    Copy + PartialOrd + PartialEq + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Elem for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Elem for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense row-major tensor. The shape is fixed for the life of the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CokeError::Shape {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Zero-mean normal with the given std, resampled outside ±2σ.
    pub fn truncated_normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    data.push(E::from_f64(z * std));
                    break;
                }
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Single element of a rank-0 or single-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Flat offset of a multi-index (row-major).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in idx.iter().enumerate() {
            debug_assert!(d < self.shape[i]);
            off = off * self.shape[i] + d;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> E {
        self.data[self.offset(idx)]
    }

    /// Elementwise sum of `other` into self; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(CokeError::Shape {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = E::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert storage precision elementwise.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// C = A·B for row-major A[m,k], B[k,n]; f64 accumulation, rows in parallel.
pub(crate) fn matmul_nn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    let run_row = |i: usize, out_row: &mut [E]| {
        let mut acc = vec![0f64; n];
        for l in 0..k {
            let a_il = a[i * k + l].to_f64();
            let b_row = &b[l * n..(l + 1) * n];
            for (j, bv) in b_row.iter().enumerate() {
                acc[j] += a_il * bv.to_f64();
            }
        }
        for (o, v) in out_row.iter_mut().zip(acc.iter()) {
            *o = E::from_f64(*v);
        }
    };
    par_rows(&mut out, m, n, k, run_row);
    out
}

/// C = A·Bᵀ for A[m,k], B[n,k] → C[m,n].
pub(crate) fn matmul_nt<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    let run_row = |i: usize, out_row: &mut [E]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0f64;
            for (av, bv) in a_row.iter().zip(b_row.iter()) {
                acc += av.to_f64() * bv.to_f64();
            }
            *o = E::from_f64(acc);
        }
    };
    par_rows(&mut out, m, n, k, run_row);
    out
}

/// C = Aᵀ·B for A[m,k], B[m,n] → C[k,n]; accumulation over m in ascending order.
pub(crate) fn matmul_tn<E: Elem>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; k * n];
    let run_row = |l: usize, out_row: &mut [E]| {
        let mut acc = vec![0f64; n];
        for i in 0..m {
            let a_il = a[i * k + l].to_f64();
            let b_row = &b[i * n..(i + 1) * n];
            for (j, bv) in b_row.iter().enumerate() {
                acc[j] += a_il * bv.to_f64();
            }
        }
        for (o, v) in out_row.iter_mut().zip(acc.iter()) {
            *o = E::from_f64(*v);
        }
    };
    par_rows(&mut out, k, n, m, run_row);
    out
}

/// Run `f(row_index, row_slice)` over the rows of `out`, in parallel when the
/// work is worth it. Each output element is owned by exactly one row closure,
/// so the result is bit-identical at any thread count.
fn par_rows<E, F>(out: &mut [E], rows: usize, cols: usize, inner: usize, f: F)
where
    E: Elem,
    F: Fn(usize, &mut [E]) + Send + Sync,
{
    use rayon::prelude::*;
    const PAR_FLOPS: usize = 1 << 17;
    if rows > 1 && rows * cols * inner >= PAR_FLOPS {
        out.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in out.chunks_mut(cols).enumerate() {
            f(i, row);
        }
    }
}
