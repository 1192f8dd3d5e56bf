use rand::Rng;

use crate::diffarray::{Array4, Operation, Shape, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Stride-1 convolution with "same" padding of `kernel / 2` on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        if !matches!(kernel, 1 | 3 | 5) {
            return Err(Error::Config(format!("unsupported kernel size {kernel}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("convolution channels must be positive".into()));
        }
        Ok(ConvSpec {
            kernel,
            in_channels,
            out_channels,
        })
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().len() + self.out_channels
    }
}

/// Unfold one `(c, h, w)` item into a `(c*k*k, h*w)` column matrix.
fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + sy as usize) * w..(ci * h + sy as usize + 1) * w];
                    for (xo, v) in line.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - pad as isize;
                        *v = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an item.
fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * h + sy as usize) * w..(ci * h + sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

struct ConvOp {
    kernel: usize,
}

impl<T: Element> Operation<T> for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Array4<T>], output: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let xs = x.shape();
        let os = output.shape();
        let k = self.kernel;
        let (cin, h, w, hw) = (xs.c, xs.h, xs.w, xs.plane());
        let cout = os.c;
        let ckk = cin * k * k;

        let mut dx = vec![T::zero(); xs.len()];
        let mut dw = vec![T::zero(); wt.shape().len()];
        let mut db = vec![T::zero(); cout];
        let mut cols = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
        let mut dcols = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];

        for n in 0..xs.n {
            let g = &grad[n * cout * hw..(n + 1) * cout * hw];
            let xi = x.item_slice(n);
            let cols_ref: &[T] = if k == 1 {
                xi
            } else {
                im2col(xi, cin, h, w, k, &mut cols);
                &cols
            };
            // dW += G (cout x hw) * cols^T (hw x ckk)
            T::gemm(
                cout,
                hw,
                ckk,
                T::one(),
                g,
                hw as isize,
                1,
                cols_ref,
                1,
                hw as isize,
                T::one(),
                &mut dw,
                ckk as isize,
                1,
            );
            for o in 0..cout {
                db[o] = db[o] + g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
            // dcols = W^T (ckk x cout) * G (cout x hw)
            let dxi = &mut dx[n * cin * hw..(n + 1) * cin * hw];
            if k == 1 {
                T::gemm(
                    ckk,
                    cout,
                    hw,
                    T::one(),
                    wt.data(),
                    1,
                    ckk as isize,
                    g,
                    hw as isize,
                    1,
                    T::zero(),
                    dxi,
                    hw as isize,
                    1,
                );
            } else {
                T::gemm(
                    ckk,
                    cout,
                    hw,
                    T::one(),
                    wt.data(),
                    1,
                    ckk as isize,
                    g,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    hw as isize,
                    1,
                );
                col2im(&dcols, cin, h, w, k, dxi);
            }
        }
        vec![Some(dx), Some(dw), Some(db)]
    }
}

/// Raw same-padded convolution. `weight` is `(out, in, k, k)` with odd `k`,
/// `bias` is `(1, out, 1, 1)`.
pub fn conv2d<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xs = tape.shape(x);
    let ws = tape.shape(weight);
    if ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(Error::InvalidShape {
            op: "conv2d",
            reason: format!("kernel must be square and odd, got {ws}"),
        });
    }
    if ws.c != xs.c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: ws.c,
            got: xs.c,
        });
    }
    if tape.shape(bias) != Shape::new(1, ws.n, 1, 1) {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: Shape::new(1, ws.n, 1, 1),
            right: tape.shape(bias),
        });
    }
    let k = ws.h;
    let (cin, cout, h, w, hw) = (xs.c, ws.n, xs.h, xs.w, xs.plane());
    let ckk = cin * k * k;
    let out_shape = Shape::new(xs.n, cout, h, w);
    let mut out = vec![T::zero(); out_shape.len()];
    let mut cols = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
    {
        let xv = tape.value(x);
        let wv = tape.value(weight).data();
        let bv = tape.value(bias).data();
        for n in 0..xs.n {
            let xi = xv.item_slice(n);
            let cols_ref: &[T] = if k == 1 {
                xi
            } else {
                im2col(xi, cin, h, w, k, &mut cols);
                &cols
            };
            let oi = &mut out[n * cout * hw..(n + 1) * cout * hw];
            for o in 0..cout {
                oi[o * hw..(o + 1) * hw].fill(bv[o]);
            }
            T::gemm(
                cout,
                ckk,
                hw,
                T::one(),
                wv,
                ckk as isize,
                1,
                cols_ref,
                hw as isize,
                1,
                T::one(),
                oi,
                hw as isize,
                1,
            );
        }
    }
    tape.record(
        Array4::from_vec(out_shape, out)?,
        vec![x, weight, bias],
        Box::new(ConvOp { kernel: k }),
    )
}

/// Convolution layer bound to parameters in a store.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    /// Absent when a normalisation layer follows and would cancel it.
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let weight = store.he_normal(format!("{prefix}.weight"), spec.weight_shape(), fan_in, rng);
        let bias = Some(store.trainable(
            format!("{prefix}.bias"),
            Array4::zeros(Shape::new(1, spec.out_channels, 1, 1)),
        ));
        Conv2d { spec, weight, bias }
    }

    pub fn without_bias<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let weight = store.he_normal(format!("{prefix}.weight"), spec.weight_shape(), fan_in, rng);
        Conv2d {
            spec,
            weight,
            bias: None,
        }
    }

    pub fn param_count(&self) -> usize {
        let w = self.spec.weight_shape().len();
        if self.bias.is_some() {
            w + self.spec.out_channels
        } else {
            w
        }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let got = tape.shape(x).c;
        if got != self.spec.in_channels {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: self.spec.in_channels,
                got,
            });
        }
        let w = tape.param(store, self.weight);
        let b = match self.bias {
            Some(id) => tape.param(store, id),
            None => tape.leaf(Array4::zeros(Shape::new(1, self.spec.out_channels, 1, 1))),
        };
        conv2d(tape, x, w, b)
    }
}
