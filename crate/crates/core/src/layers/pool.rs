use crate::diffarray::{Array4, Operation, Shape, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};

struct MaxPoolOp {
    /// Flat input index of each output's winning element.
    argmax: Vec<usize>,
}

impl<T: Element> Operation<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].shape().len()];
        for (&src, &g) in self.argmax.iter().zip(grad) {
            dx[src] = dx[src] + g;
        }
        vec![Some(dx)]
    }
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
pub fn maxpool2<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x);
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op: "maxpool2",
            reason: format!("spatial dims must be even, got {s}"),
        });
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let xv = tape.value(x).data();
    let mut out = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for y in 0..os.h {
            for xx in 0..os.w {
                let mut best = base + 2 * y * s.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * s.w + 2 * xx + dx;
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
    }
    tape.record(Array4::from_vec(os, out)?, vec![x], Box::new(MaxPoolOp { argmax }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffarray::ops::{mul, sum};
    use crate::engine::gradcheck::{check_inputs, GradTolerance};
    use crate::seed;

    #[test]
    fn picks_window_max() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Array4::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2(&mut t, x).unwrap();
        assert_eq!(t.value(y).data(), &[4.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Array4::full(Shape::new(1, 1, 4, 4), 3.0));
        let y = maxpool2(&mut t, x).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 3.0));
        let s = sum(&mut t, y).unwrap();
        let g = t.backward(s).unwrap();
        let g = g.wrt(x).unwrap();
        for yy in 0..4 {
            for xx in 0..4 {
                let expect = if yy % 2 == 0 && xx % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g[yy * 4 + xx], expect);
            }
        }
    }

    #[test]
    fn matches_window_loop() {
        let x = Array4::<f64>::randn(Shape::new(1, 1, 4, 4), 1.0, &mut seed::rng(5));
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = maxpool2(&mut t, v).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.get(0, 0, 2 * oy + dy, 2 * ox + dx));
                    }
                }
                assert_eq!(t.value(y).get(0, 0, oy, ox), m);
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Array4::zeros(Shape::new(1, 1, 3, 4)));
        assert!(maxpool2(&mut t, x).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in 0..20u64 {
            let mut r = seed::rng(400 + s);
            let x = Array4::randn(Shape::new(2, 2, 4, 4), 1.0, &mut r);
            let probe = Array4::randn(Shape::new(2, 2, 2, 2), 1.0, &mut r);
            let report = check_inputs(&[x, probe], 1e-5, |t, v| {
                let y = maxpool2(t, v[0])?;
                let p = mul(t, y, v[1])?;
                sum(t, p)
            })
            .unwrap();
            assert!(report.passes(GradTolerance::BLOCK), "seed {s}\n{report}");
        }
    }
}
