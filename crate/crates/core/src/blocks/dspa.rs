use rand::Rng;

use crate::diffarray::{Array4, Operation, Shape, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const DEFAULT_DESCRIPTORS: usize = 64;
pub const DESCRIPTOR_INIT_STD: f64 = 0.02;

/// Softmax over descriptors of `D_i . m_j` at every site `j`.
///
/// `m` is `(n, c, h, w)`, `descriptors` is `(count, c, 1, 1)`; the result
/// is `(n, count, h, w)` and sums to one over the channel axis.
pub fn attention_weights<T: Element>(m: &Array4<T>, descriptors: &Array4<T>) -> Result<Array4<T>> {
    let (ms, ds) = (m.shape(), descriptors.shape());
    if ds.c != ms.c || ds.h != 1 || ds.w != 1 {
        return Err(Error::ChannelMismatch {
            op: "dspa",
            expected: ds.c,
            got: ms.c,
        });
    }
    let (c, count, hw) = (ms.c, ds.n, ms.plane());
    let mut out = Array4::zeros(Shape::new(ms.n, count, ms.h, ms.w));
    for n in 0..ms.n {
        let a = &mut out.data_mut()[n * count * hw..(n + 1) * count * hw];
        // logits (count x hw) = D (count x c) * M (c x hw)
        T::gemm(
            count,
            c,
            hw,
            T::one(),
            descriptors.data(),
            c as isize,
            1,
            m.item_slice(n),
            hw as isize,
            1,
            T::zero(),
            a,
            hw as isize,
            1,
        );
        for j in 0..hw {
            let mut mx = T::neg_infinity();
            for i in 0..count {
                mx = mx.max(a[i * hw + j]);
            }
            let mut z = T::zero();
            for i in 0..count {
                let e = (a[i * hw + j] - mx).exp();
                a[i * hw + j] = e;
                z = z + e;
            }
            for i in 0..count {
                a[i * hw + j] = a[i * hw + j] / z;
            }
        }
    }
    Ok(out)
}

struct DspaOp<T> {
    weights: Array4<T>,
}

impl<T: Element> Operation<T> for DspaOp<T> {
    fn name(&self) -> &'static str {
        "dspa"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (m, d) = (inputs[0], inputs[1]);
        let ms = m.shape();
        let (c, count, hw) = (ms.c, d.shape().n, ms.plane());
        let mut dm = grad.to_vec();
        let mut dd = vec![T::zero(); d.shape().len()];
        let mut dl = vec![T::zero(); count * hw];
        for n in 0..ms.n {
            let g = &grad[n * c * hw..(n + 1) * c * hw];
            let a = self.weights.item_slice(n);
            // dA (count x hw) = D (count x c) * G (c x hw)
            T::gemm(
                count,
                c,
                hw,
                T::one(),
                d.data(),
                c as isize,
                1,
                g,
                hw as isize,
                1,
                T::zero(),
                &mut dl,
                hw as isize,
                1,
            );
            for j in 0..hw {
                let mut dot = T::zero();
                for i in 0..count {
                    dot = dot + a[i * hw + j] * dl[i * hw + j];
                }
                for i in 0..count {
                    dl[i * hw + j] = a[i * hw + j] * (dl[i * hw + j] - dot);
                }
            }
            // dM += D^T (c x count) * dL (count x hw)
            let dmi = &mut dm[n * c * hw..(n + 1) * c * hw];
            T::gemm(
                c,
                count,
                hw,
                T::one(),
                d.data(),
                1,
                c as isize,
                &dl,
                hw as isize,
                1,
                T::one(),
                dmi,
                hw as isize,
                1,
            );
            // dD += A (count x hw) * G^T (hw x c) + dL (count x hw) * M^T (hw x c)
            T::gemm(
                count,
                hw,
                c,
                T::one(),
                a,
                hw as isize,
                1,
                g,
                1,
                hw as isize,
                T::one(),
                &mut dd,
                c as isize,
                1,
            );
            T::gemm(
                count,
                hw,
                c,
                T::one(),
                &dl,
                hw as isize,
                1,
                m.item_slice(n),
                1,
                hw as isize,
                T::one(),
                &mut dd,
                c as isize,
                1,
            );
        }
        vec![Some(dm), Some(dd)]
    }
}

/// `O_j = sum_i a_{j,i} D_i + M_j` at every site, residual included.
pub fn dspa_attend<T: Element>(tape: &mut Tape<T>, m: Var, descriptors: Var) -> Result<Var> {
    let weights = attention_weights(tape.value(m), tape.value(descriptors))?;
    let ms = tape.shape(m);
    let (c, count, hw) = (ms.c, tape.shape(descriptors).n, ms.plane());
    let mut out = tape.value(m).clone();
    let dv = tape.value(descriptors).data();
    for n in 0..ms.n {
        let oi = &mut out.data_mut()[n * c * hw..(n + 1) * c * hw];
        // O += D^T (c x count) * A (count x hw)
        T::gemm(
            c,
            count,
            hw,
            T::one(),
            dv,
            1,
            c as isize,
            weights.item_slice(n),
            hw as isize,
            1,
            T::one(),
            oi,
            hw as isize,
            1,
        );
    }
    tape.record(out, vec![m, descriptors], Box::new(DspaOp { weights }))
}

/// Descriptor bank owned by one attention site in the decoder.
#[derive(Clone, Debug)]
pub struct Dspa {
    pub channels: usize,
    pub count: usize,
    pub descriptors: ParamId,
}

impl Dspa {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if count == 0 || channels == 0 {
            return Err(Error::Config(
                "attention needs at least one descriptor and channel".into(),
            ));
        }
        let descriptors = store.trainable(
            format!("{prefix}.descriptors"),
            Array4::randn(Shape::new(count, channels, 1, 1), DESCRIPTOR_INIT_STD, rng),
        );
        Ok(Dspa {
            channels,
            count,
            descriptors,
        })
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.count
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, m: Var) -> Result<Var> {
        let got = tape.shape(m).c;
        if got != self.channels {
            return Err(Error::ChannelMismatch {
                op: "dspa",
                expected: self.channels,
                got,
            });
        }
        let d = tape.param(store, self.descriptors);
        dspa_attend(tape, m, d)
    }
}
