use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major `(n, c, h, w)` array.
#[derive(Clone, PartialEq)]
pub struct Array4<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Array4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Array4")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Element> Array4<T> {
    pub fn zeros(shape: Shape) -> Self {
        Array4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Array4 {
            shape,
            data: vec![v; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                reason: format!("{} values for shape {shape}", data.len()),
            });
        }
        Ok(Array4 { shape, data })
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
        Array4 { shape, data }
    }

    /// Standard-normal entries scaled by `std`, drawn in f64 so that f32 and
    /// f64 arrays made from the same stream agree up to rounding.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Array4 { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Array4::full(Shape::scalar(), v)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Value of a `(1, 1, 1, 1)` array.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Array4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Array4<U> {
        Array4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Array4::from_vec(shape, self.data)
    }

    /// Contiguous slice of one batch item.
    pub fn item_slice(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_slice_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.c * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copy out batch item `n` as a batch of one.
    pub fn batch_item(&self, n: usize) -> Self {
        let s = self.shape;
        Array4 {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.item_slice(n).to_vec(),
        }
    }

    /// Stack batch-of-one (or larger) arrays along the batch axis.
    pub fn stack(parts: &[&Array4<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("stack"))?.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first,
                    right: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Array4 {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }

    /// Inverse of channel concatenation: cut the channel axis into runs of
    /// the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let s = self.shape;
        if sizes.iter().sum::<usize>() != s.c {
            return Err(Error::InvalidShape {
                op: "split_channels",
                reason: format!("sizes {sizes:?} do not sum to {} channels", s.c),
            });
        }
        let plane = s.plane();
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &c in sizes {
            let mut data = Vec::with_capacity(s.n * c * plane);
            for n in 0..s.n {
                let start = (n * s.c + offset) * plane;
                data.extend_from_slice(&self.data[start..start + c * plane]);
            }
            out.push(Array4 {
                shape: Shape::new(s.n, c, s.h, s.w),
                data,
            });
            offset += c;
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }
}
