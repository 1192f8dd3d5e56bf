//! Elementwise arithmetic, reductions and channel concatenation.

use crate::diffarray::{Array4, Operation, Shape, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};

fn same_shape<T: Element>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<Shape> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op,
            left: sa,
            right: sb,
        });
    }
    Ok(sa)
}

struct AddOp;

impl<T: Element> Operation<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec()), Some(grad.to_vec())]
    }
}

pub fn add<T: Element>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = same_shape(tape, "add", a, b)?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x + y)
        .collect();
    tape.record(Array4::from_vec(shape, data)?, vec![a, b], Box::new(AddOp))
}

struct MulOp;

impl<T: Element> Operation<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let ga = grad.iter().zip(b).map(|(&g, &y)| g * y).collect();
        let gb = grad.iter().zip(a).map(|(&g, &x)| g * x).collect();
        vec![Some(ga), Some(gb)]
    }
}

pub fn mul<T: Element>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = same_shape(tape, "mul", a, b)?;
    let data = tape
        .value(a)
        .data()
        .iter()
        .zip(tape.value(b).data())
        .map(|(&x, &y)| x * y)
        .collect();
    tape.record(Array4::from_vec(shape, data)?, vec![a, b], Box::new(MulOp))
}

struct ScaleOp<T>(T);

impl<T: Element> Operation<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.iter().map(|&g| g * self.0).collect())]
    }
}

/// Multiply by a constant.
pub fn scale<T: Element>(tape: &mut Tape<T>, a: Var, k: T) -> Result<Var> {
    let out = tape.value(a).map(|v| v * k);
    tape.record(out, vec![a], Box::new(ScaleOp(k)))
}

struct ReluOp;

impl<T: Element> Operation<T> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        // Derivative at exactly zero is taken as zero.
        let g = grad
            .iter()
            .zip(inputs[0].data())
            .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(g)]
    }
}

pub fn relu<T: Element>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let out = tape.value(a).map(|v| v.max(T::zero()));
    tape.record(out, vec![a], Box::new(ReluOp))
}

/// Logistic function evaluated without overflow for large |x|.
pub fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct SigmoidOp;

impl<T: Element> Operation<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Array4<T>], out: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad
            .iter()
            .zip(out.data())
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        vec![Some(g)]
    }
}

pub fn sigmoid<T: Element>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let out = tape.value(a).map(stable_sigmoid);
    tape.record(out, vec![a], Box::new(SigmoidOp))
}

struct SumOp;

impl<T: Element> Operation<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![grad[0]; inputs[0].shape().len()])]
    }
}

/// Sum of all elements, as a `(1, 1, 1, 1)` array.
pub fn sum<T: Element>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let s = tape.value(a).sum();
    tape.record(Array4::scalar(s), vec![a], Box::new(SumOp))
}

/// Elementwise operation selector for [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise<T> {
    Add(Var),
    Mul(Var),
    Relu,
    Sigmoid,
    Scale(T),
}

pub fn elementwise<T: Element>(tape: &mut Tape<T>, a: Var, op: Elementwise<T>) -> Result<Var> {
    match op {
        Elementwise::Add(b) => add(tape, a, b),
        Elementwise::Mul(b) => mul(tape, a, b),
        Elementwise::Relu => relu(tape, a),
        Elementwise::Sigmoid => sigmoid(tape, a),
        Elementwise::Scale(k) => scale(tape, a, k),
    }
}

struct ConcatOp {
    channels: Vec<usize>,
}

impl<T: Element> Operation<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, _: &[&Array4<T>], out: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = Array4::from_vec(out.shape(), grad.to_vec()).expect("grad matches output");
        g.split_channels(&self.channels)
            .expect("recorded offsets")
            .into_iter()
            .map(|p| Some(p.into_vec()))
            .collect()
    }
}

/// Concatenate along the channel axis in argument order.
pub fn concat_channels<T: Element>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let first = tape.shape(*parts.first().ok_or(Error::Empty("concat_channels"))?);
    let mut channels = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = tape.shape(p);
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first,
                right: s,
            });
        }
        channels.push(s.c);
    }
    let total: usize = channels.iter().sum();
    let shape = Shape::new(first.n, total, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for &p in parts {
            data.extend_from_slice(tape.value(p).item_slice(n));
        }
    }
    debug_assert_eq!(data.len(), shape.len());
    tape.record(
        Array4::from_vec(shape, data)?,
        parts.to_vec(),
        Box::new(ConcatOp { channels }),
    )
}
