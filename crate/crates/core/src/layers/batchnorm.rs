use crate::diffarray::{Array4, Mode, Operation, Shape, StatUpdate, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

fn check_affine<T: Element>(tape: &Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<()> {
    let c = tape.shape(x).c;
    for p in [gamma, beta] {
        if tape.shape(p) != Shape::new(1, c, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                left: Shape::new(1, c, 1, 1),
                right: tape.shape(p),
            });
        }
    }
    Ok(())
}

struct BatchNormTrainOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> Operation<T> for BatchNormTrainOp<T> {
    fn name(&self) -> &'static str {
        "batchnorm(train)"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let s = inputs[0].shape();
        let gamma = inputs[1].data();
        let plane = s.plane();
        let m = T::from_usize(s.n * plane).unwrap();
        let mut dx = vec![T::zero(); s.len()];
        let mut dgamma = vec![T::zero(); s.c];
        let mut dbeta = vec![T::zero(); s.c];
        for c in 0..s.c {
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                for (&g, &xh) in grad[off..off + plane].iter().zip(&self.xhat[off..off + plane]) {
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * xh;
                }
            }
            dgamma[c] = sum_gx;
            dbeta[c] = sum_g;
            let k = gamma[c] * self.inv_std[c] / m;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    dx[i] = k * (m * grad[i] - sum_g - self.xhat[i] * sum_gx);
                }
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

/// Normalise with batch statistics. Returns the output and the
/// per-channel batch mean and unbiased variance for running updates.
pub fn batchnorm_train<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, Vec<T>, Vec<T>)> {
    check_affine(tape, x, gamma, beta)?;
    let s = tape.shape(x);
    let plane = s.plane();
    let count = s.n * plane;
    let m = T::from_usize(count).unwrap();
    let eps = T::from_f64_lossy(eps);
    let xv = tape.value(x).data();
    let (g, b) = (tape.value(gamma).data(), tape.value(beta).data());

    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    let mut inv_std = vec![T::zero(); s.c];
    let mut xhat = vec![T::zero(); s.len()];
    let mut out = vec![T::zero(); s.len()];
    for c in 0..s.c {
        let idx = |n: usize| (n * s.c + c) * plane;
        let mut acc = T::zero();
        for n in 0..s.n {
            acc = acc + xv[idx(n)..idx(n) + plane].iter().copied().sum::<T>();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for n in 0..s.n {
            for &v in &xv[idx(n)..idx(n) + plane] {
                sq = sq + (v - mu) * (v - mu);
            }
        }
        let v = sq / m;
        let is = T::one() / (v + eps).sqrt();
        for n in 0..s.n {
            for i in idx(n)..idx(n) + plane {
                xhat[i] = (xv[i] - mu) * is;
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        mean[c] = mu;
        var[c] = if count > 1 {
            sq / T::from_usize(count - 1).unwrap()
        } else {
            v
        };
        inv_std[c] = is;
    }
    let y = tape.record(
        Array4::from_vec(s, out)?,
        vec![x, gamma, beta],
        Box::new(BatchNormTrainOp { xhat, inv_std }),
    )?;
    Ok((y, mean, var))
}

struct BatchNormEvalOp<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> Operation<T> for BatchNormEvalOp<T> {
    fn name(&self) -> &'static str {
        "batchnorm(eval)"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let s = x.shape();
        let gamma = inputs[1].data();
        let plane = s.plane();
        let mut dx = vec![T::zero(); s.len()];
        let mut dgamma = vec![T::zero(); s.c];
        let mut dbeta = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    dx[i] = grad[i] * gamma[c] * self.inv_std[c];
                    dgamma[c] = dgamma[c] + grad[i] * (x.data()[i] - self.mean[c]) * self.inv_std[c];
                    dbeta[c] = dbeta[c] + grad[i];
                }
            }
        }
        vec![Some(dx), Some(dgamma), Some(dbeta)]
    }
}

/// Normalise with fixed (running) statistics.
pub fn batchnorm_eval<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<Var> {
    check_affine(tape, x, gamma, beta)?;
    let s = tape.shape(x);
    let plane = s.plane();
    let eps = T::from_f64_lossy(eps);
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (g, b) = (tape.value(gamma).data(), tape.value(beta).data());
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); s.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                out[i] = g[c] * (xv[i] - running_mean[c]) * inv_std[c] + b[c];
            }
        }
    }
    tape.record(
        Array4::from_vec(s, out)?,
        vec![x, gamma, beta],
        Box::new(BatchNormEvalOp {
            mean: running_mean.to_vec(),
            inv_std,
        }),
    )
}

/// Per-channel batch normalisation with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNorm2d {
            channels,
            gamma: store.trainable(format!("{prefix}.gamma"), Array4::full(shape, T::one())),
            beta: store.trainable(format!("{prefix}.beta"), Array4::zeros(shape)),
            running_mean: store.buffer(format!("{prefix}.running_mean"), Array4::zeros(shape)),
            running_var: store.buffer(format!("{prefix}.running_var"), Array4::full(shape, T::one())),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let got = tape.shape(x).c;
        if got != self.channels {
            return Err(Error::ChannelMismatch {
                op: "batchnorm",
                expected: self.channels,
                got,
            });
        }
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) = batchnorm_train(tape, x, gamma, beta, self.eps)?;
                tape.push_stat_update(StatUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    batch_mean,
                    batch_var,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Eval => {
                if !store.stats_ready() {
                    return Err(Error::BatchNormUninitialized(
                        store.name(self.gamma).trim_end_matches(".gamma").to_string(),
                    ));
                }
                batchnorm_eval(
                    tape,
                    x,
                    gamma,
                    beta,
                    store.value(self.running_mean).data(),
                    store.value(self.running_var).data(),
                    self.eps,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffarray::ops::{mul, sum};
    use crate::engine::gradcheck::{check_inputs, GradTolerance};
    use crate::seed;

    fn channel_stats(a: &Array4<f64>, c: usize) -> (f64, f64) {
        let s = a.shape();
        let vals: Vec<f64> = (0..s.n)
            .flat_map(|n| a.item_slice(n)[c * s.plane()..(c + 1) * s.plane()].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v.sqrt())
    }

    #[test]
    fn normalises_shifted_batch() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = Array4::randn(Shape::new(16, 2, 8, 8), 2.0, &mut seed::rng(1)).map(|v| v + 5.0);
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let y = bn.forward(&mut t, &store, xv, Mode::Train).unwrap();
        for c in 0..2 {
            let (m, sd) = channel_stats(t.value(y), c);
            assert!(m.abs() < 0.05 && (sd - 1.0).abs() < 0.05, "{m} {sd}");
            // tight form of the invariant
            assert!(m.abs() < 1e-4 && (sd - 1.0).abs() < 1e-4);
        }
        let updates = t.take_stat_updates();
        assert_eq!(updates.len(), 1);
        store.apply_stat_updates(&updates);
        let rm = store.value(bn.running_mean).data()[0];
        assert!((rm - 0.1 * updates[0].batch_mean[0]).abs() < 1e-12);
    }

    #[test]
    fn affine_parameters_set_mean_and_scale() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        store.value_mut(bn.gamma).data_mut()[0] = 3.0;
        store.value_mut(bn.beta).data_mut()[0] = 7.0;
        let x = Array4::randn(Shape::new(8, 1, 8, 8), 1.0, &mut seed::rng(2));
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let y = bn.forward(&mut t, &store, xv, Mode::Train).unwrap();
        let (m, sd) = channel_stats(t.value(y), 0);
        assert!((m - 7.0).abs() < 1e-6 && (sd - 3.0).abs() < 1e-3, "{m} {sd}");
    }

    #[test]
    fn eval_without_statistics_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let bn = BatchNorm2d::new(&mut store, "enc.bn1", 1);
        let mut t = Tape::new();
        let x = t.leaf(Array4::zeros(Shape::new(1, 1, 2, 2)));
        let err = bn.forward(&mut t, &store, x, Mode::Eval).unwrap_err();
        assert!(
            matches!(&err, Error::BatchNormUninitialized(n) if n == "enc.bn1"),
            "{err}"
        );
        store.mark_stats_ready();
        assert!(bn.forward(&mut t, &store, x, Mode::Eval).is_ok());
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        for s in 0..5u64 {
            let mut r = seed::rng(500 + s);
            let x = Array4::randn(Shape::new(4, 3, 6, 6), 1.0, &mut r);
            let g = Array4::randn(Shape::new(1, 3, 1, 1), 1.0, &mut r);
            let b = Array4::randn(Shape::new(1, 3, 1, 1), 1.0, &mut r);
            let probe = Array4::randn(Shape::new(4, 3, 6, 6), 1.0, &mut r);
            let report = check_inputs(&[x, g, b, probe], 1e-5, |t, v| {
                let (y, _, _) = batchnorm_train(t, v[0], v[1], v[2], BN_EPS)?;
                let p = mul(t, y, v[3])?;
                sum(t, p)
            })
            .unwrap();
            assert!(report.passes(GradTolerance::BLOCK), "seed {s}\n{report}");
        }
    }

    #[test]
    fn eval_gradients_match_finite_differences() {
        let mut r = seed::rng(600);
        let x = Array4::randn(Shape::new(2, 3, 4, 4), 1.0, &mut r);
        let g = Array4::randn(Shape::new(1, 3, 1, 1), 1.0, &mut r);
        let b = Array4::randn(Shape::new(1, 3, 1, 1), 1.0, &mut r);
        let probe = Array4::randn(Shape::new(2, 3, 4, 4), 1.0, &mut r);
        let report = check_inputs(&[x, g, b, probe], 1e-5, |t, v| {
            let y = batchnorm_eval(t, v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], BN_EPS)?;
            let p = mul(t, y, v[3])?;
            sum(t, p)
        })
        .unwrap();
        assert!(report.passes(GradTolerance::BLOCK), "{report}");
    }
}
