use rand::Rng;

use crate::diffarray::{Array4, Operation, Shape, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// 2x2 kernel, stride 2: output is exactly twice the input's spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl TransConvSpec {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("transposed conv channels must be positive".into()));
        }
        Ok(TransConvSpec {
            in_channels,
            out_channels,
        })
    }

    /// Weights are laid out `(in, out, 2, 2)`.
    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.out_channels, 2, 2)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().len() + self.out_channels
    }
}

struct TransConvOp;

impl<T: Element> Operation<T> for TransConvOp {
    fn name(&self) -> &'static str {
        "transconv2d"
    }

    fn backward(&self, inputs: &[&Array4<T>], output: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let xs = x.shape();
        let os = output.shape();
        let (cin, cout, h, w, hw) = (xs.c, os.c, xs.h, xs.w, xs.plane());
        let c4 = cout * 4;
        let (ow, ohw) = (os.w, os.plane());

        let mut dx = vec![T::zero(); xs.len()];
        let mut dw = vec![T::zero(); wt.shape().len()];
        let mut db = vec![T::zero(); cout];
        let mut gcols = vec![T::zero(); c4 * hw];
        for n in 0..xs.n {
            let g = &grad[n * cout * ohw..(n + 1) * cout * ohw];
            for o in 0..cout {
                let go = &g[o * ohw..(o + 1) * ohw];
                db[o] = db[o] + go.iter().copied().sum::<T>();
                for dy in 0..2 {
                    for dxo in 0..2 {
                        let row = &mut gcols[(o * 4 + dy * 2 + dxo) * hw..][..hw];
                        for y in 0..h {
                            for xx in 0..w {
                                row[y * w + xx] = go[(2 * y + dy) * ow + 2 * xx + dxo];
                            }
                        }
                    }
                }
            }
            // dX = W (cin x c4) * gcols (c4 x hw)
            let dxi = &mut dx[n * cin * hw..(n + 1) * cin * hw];
            T::gemm(
                cin,
                c4,
                hw,
                T::one(),
                wt.data(),
                c4 as isize,
                1,
                &gcols,
                hw as isize,
                1,
                T::zero(),
                dxi,
                hw as isize,
                1,
            );
            // dW += X (cin x hw) * gcols^T (hw x c4)
            T::gemm(
                cin,
                hw,
                c4,
                T::one(),
                x.item_slice(n),
                hw as isize,
                1,
                &gcols,
                1,
                hw as isize,
                T::one(),
                &mut dw,
                c4 as isize,
                1,
            );
        }
        vec![Some(dx), Some(dw), Some(db)]
    }
}

/// Raw 2x2 stride-2 transposed convolution; `weight` is `(in, out, 2, 2)`,
/// `bias` is `(1, out, 1, 1)`.
pub fn transconv2d<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xs = tape.shape(x);
    let ws = tape.shape(weight);
    if ws.h != 2 || ws.w != 2 {
        return Err(Error::InvalidShape {
            op: "transconv2d",
            reason: format!("kernel must be 2x2, got {ws}"),
        });
    }
    if ws.n != xs.c {
        return Err(Error::ChannelMismatch {
            op: "transconv2d",
            expected: ws.n,
            got: xs.c,
        });
    }
    if tape.shape(bias) != Shape::new(1, ws.c, 1, 1) {
        return Err(Error::ShapeMismatch {
            op: "transconv2d bias",
            left: Shape::new(1, ws.c, 1, 1),
            right: tape.shape(bias),
        });
    }
    let (cin, cout, h, w, hw) = (xs.c, ws.c, xs.h, xs.w, xs.plane());
    let c4 = cout * 4;
    let os = Shape::new(xs.n, cout, 2 * h, 2 * w);
    let (ow, ohw) = (os.w, os.plane());
    let mut out = vec![T::zero(); os.len()];
    let mut cols = vec![T::zero(); c4 * hw];
    {
        let xv = tape.value(x);
        let wv = tape.value(weight).data();
        let bv = tape.value(bias).data();
        for n in 0..xs.n {
            // cols = W^T (c4 x cin) * X (cin x hw)
            T::gemm(
                c4,
                cin,
                hw,
                T::one(),
                wv,
                1,
                c4 as isize,
                xv.item_slice(n),
                hw as isize,
                1,
                T::zero(),
                &mut cols,
                hw as isize,
                1,
            );
            let oi = &mut out[n * cout * ohw..(n + 1) * cout * ohw];
            for o in 0..cout {
                let oo = &mut oi[o * ohw..(o + 1) * ohw];
                for dy in 0..2 {
                    for dxo in 0..2 {
                        let row = &cols[(o * 4 + dy * 2 + dxo) * hw..][..hw];
                        for y in 0..h {
                            for xx in 0..w {
                                oo[(2 * y + dy) * ow + 2 * xx + dxo] = row[y * w + xx] + bv[o];
                            }
                        }
                    }
                }
            }
        }
    }
    tape.record(Array4::from_vec(os, out)?, vec![x, weight, bias], Box::new(TransConvOp))
}

#[derive(Clone, Debug)]
pub struct TransConv2d {
    pub spec: TransConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TransConv2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, spec: TransConvSpec, rng: &mut impl Rng) -> Self {
        let weight = store.he_normal(
            format!("{prefix}.weight"),
            spec.weight_shape(),
            spec.in_channels * 4,
            rng,
        );
        let bias = store.trainable(
            format!("{prefix}.bias"),
            Array4::zeros(Shape::new(1, spec.out_channels, 1, 1)),
        );
        TransConv2d { spec, weight, bias }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let got = tape.shape(x).c;
        if got != self.spec.in_channels {
            return Err(Error::ChannelMismatch {
                op: "transconv2d",
                expected: self.spec.in_channels,
                got,
            });
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        transconv2d(tape, x, w, b)
    }
}
