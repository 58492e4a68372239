//! Dense 4-D tensors, the differentiable kernels built on them, the
//! reverse-mode tape and the ADAM optimizer.

mod element;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tape;

use std::fmt;

use crate::error::{Error, Result};

pub use element::Element;
pub use optim::{adam_step, OptimizerConfig, Parameter, Parameterized};
pub use tape::{OpKind, Tape, Var};

/// (batch, channel, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major (N, C, H, W) array with an optional gradient buffer of the
/// same shape.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Shape,
    data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data[..8]", &preview)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "data length {} does not match shape {shape} ({})",
                    data.len(),
                    shape.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(!shape.is_empty(), "zero-sized dimension in {shape}");
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous slice of one (n, c) plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {} elements as {shape}", self.data.len()),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|x| x.max(lo).min(hi))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient length {} vs tensor length {}", g.len(), self.data.len()),
            ));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Extracts batch element `n` as a 1×C×H×W tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.shape.n {
            return Err(Error::shape(
                "batch_item",
                format!("index {n} out of range for batch size {}", self.shape.n),
            ));
        }
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor::from_vec(shape, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Stacks tensors of identical C×H×W along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("stack of zero tensors".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", format!("{s} does not match {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, first.c, first.h, first.w), data)
    }

    /// Spatial sub-window `[top, top+h) x [left, left+w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({top},{left}) exceeds {}x{}", s.h, s.w),
            ));
        }
        let out = Shape::new(s.n, s.c, h, w);
        let mut data = Vec::with_capacity(out.len());
        for n in 0..s.n {
            for c in 0..s.c {
                for y in top..top + h {
                    let row = s.index(n, c, y, left);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Tensor::from_vec(out, data)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }
}

impl<T: Element> Tensor<T> {
    pub(crate) fn ensure_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, describe_mismatch(self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Names the first differing dimension of two shapes.
pub(crate) fn describe_mismatch(a: Shape, b: Shape) -> String {
    let names = ["N", "C", "H", "W"];
    let (da, db) = (a.dims(), b.dims());
    for i in 0..4 {
        if da[i] != db[i] {
            return format!("dimension {} differs: {} vs {} ({a} vs {b})", names[i], da[i], db[i]);
        }
    }
    format!("{a} vs {b}")
}
