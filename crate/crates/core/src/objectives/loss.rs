use serde::{Deserialize, Serialize};

use crate::diffarray::ops::{add, scale};
use crate::diffarray::{Array4, Operation, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::network::ModelOutput;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualLossSpec {
    /// Weight of the auxiliary loss.
    pub lambda: f64,
    /// Dice smoothing term.
    pub dice_eps: f64,
    pub dice_weight: f64,
    pub bce_weight: f64,
}

impl Default for DualLossSpec {
    fn default() -> Self {
        DualLossSpec {
            lambda: 0.4,
            dice_eps: 1e-6,
            dice_weight: 1.0,
            bce_weight: 1.0,
        }
    }
}

impl DualLossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.dice_eps > 0.0) {
            return Err(Error::Config(format!("dice_eps must be > 0, got {}", self.dice_eps)));
        }
        if !(self.dice_weight >= 0.0 && self.bce_weight >= 0.0) {
            return Err(Error::Config("loss term weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss nodes on the tape. `aux` is absent for single-head models, in which
/// case `total == main`.
#[derive(Clone, Copy, Debug)]
pub struct DualLoss {
    pub total: Var,
    pub aux: Option<Var>,
    pub main: Var,
}

pub fn check_binary<T: Element>(target: &Array4<T>) -> Result<()> {
    if target.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::NonBinaryTarget)
    }
}

fn check_pair<T: Element>(tape: &Tape<T>, op: &'static str, pred: Var, target: &Array4<T>) -> Result<()> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: tape.shape(pred),
            right: target.shape(),
        });
    }
    check_binary(target)
}

struct DiceOp<T> {
    target: Array4<T>,
    eps: T,
    /// Per item: (intersection, sum of pred + sum of target).
    sums: Vec<(T, T)>,
}

impl<T: Element> Operation<T> for DiceOp<T> {
    fn name(&self) -> &'static str {
        "dice_loss"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let n = inputs[0].shape().n;
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let two = T::from_f64_lossy(2.0);
        let mut out = Vec::with_capacity(inputs[0].shape().len());
        for (i, &(inter, total)) in self.sums.iter().enumerate() {
            let den = total + self.eps;
            let num = two * inter + self.eps;
            let k = grad[0] * inv_n / (den * den);
            out.extend(self.target.item_slice(i).iter().map(|&t| -k * (two * t * den - num)));
        }
        vec![Some(out)]
    }
}

/// `1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`, averaged over the batch.
pub fn dice_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: &Array4<T>, eps: f64) -> Result<Var> {
    check_pair(tape, "dice_loss", pred, target)?;
    let p = tape.value(pred);
    let n = p.shape().n;
    let eps_t = T::from_f64_lossy(eps);
    let two = T::from_f64_lossy(2.0);
    let sums: Vec<(T, T)> = (0..n)
        .map(|i| {
            let (pi, ti) = (p.item_slice(i), target.item_slice(i));
            let inter = pi.iter().zip(ti).map(|(&a, &b)| a * b).sum::<T>();
            let total = pi.iter().copied().sum::<T>() + ti.iter().copied().sum::<T>();
            (inter, total)
        })
        .collect();
    let loss = sums
        .iter()
        .map(|&(inter, total)| T::one() - (two * inter + eps_t) / (total + eps_t))
        .sum::<T>()
        / T::from_usize(n).unwrap();
    let op = DiceOp {
        target: target.clone(),
        eps: eps_t,
        sums,
    };
    tape.record(Array4::scalar(loss), vec![pred], Box::new(op))
}

struct BceOp<T> {
    target: Array4<T>,
}

impl<T: Element> Operation<T> for BceOp<T> {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, inputs: &[&Array4<T>], _: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let p = inputs[0];
        let lo = T::from_f64_lossy(BCE_CLAMP);
        let hi = T::one() - lo;
        let k = grad[0] / T::from_usize(p.shape().len()).unwrap();
        let g = p
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&p, &t)| {
                if p < lo || p > hi {
                    T::zero()
                } else {
                    k * ((T::one() - t) / (T::one() - p) - t / p)
                }
            })
            .collect();
        vec![Some(g)]
    }
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: &Array4<T>) -> Result<Var> {
    check_pair(tape, "bce_loss", pred, target)?;
    let p = tape.value(pred);
    let lo = T::from_f64_lossy(BCE_CLAMP);
    let hi = T::one() - lo;
    let total = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.max(lo).min(hi);
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        })
        .sum::<T>();
    let loss = total / T::from_usize(p.shape().len()).unwrap();
    let op = BceOp { target: target.clone() };
    tape.record(Array4::scalar(loss), vec![pred], Box::new(op))
}

/// Weighted Dice + BCE on one probability map.
pub fn segment_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: &Array4<T>, spec: &DualLossSpec) -> Result<Var> {
    let d = dice_loss(tape, pred, target, spec.dice_eps)?;
    let b = bce_loss(tape, pred, target)?;
    let d = weighted(tape, d, spec.dice_weight)?;
    let b = weighted(tape, b, spec.bce_weight)?;
    add(tape, d, b)
}

fn weighted<T: Element>(tape: &mut Tape<T>, v: Var, w: f64) -> Result<Var> {
    if w == 1.0 {
        Ok(v)
    } else {
        scale(tape, v, T::from_f64_lossy(w))
    }
}

/// `lambda * L_aux + L_main`.
pub fn dual_loss<T: Element>(
    tape: &mut Tape<T>,
    out: &ModelOutput,
    target: &Array4<T>,
    spec: &DualLossSpec,
) -> Result<DualLoss> {
    let main = segment_loss(tape, out.main, target, spec)?;
    match out.aux {
        Some(a) => {
            let aux = segment_loss(tape, a, target, spec)?;
            let weighted_aux = scale(tape, aux, T::from_f64_lossy(spec.lambda))?;
            let total = add(tape, weighted_aux, main)?;
            Ok(DualLoss {
                total,
                aux: Some(aux),
                main,
            })
        }
        None => Ok(DualLoss {
            total: main,
            aux: None,
            main,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffarray::Shape;
    use crate::engine::gradcheck::{check_inputs, GradTolerance};
    use crate::seed;
    use rand::Rng;

    fn mask(side: usize, on: &[(usize, usize)]) -> Array4<f64> {
        let mut m = Array4::zeros(Shape::new(1, 1, side, side));
        for &(y, x) in on {
            m.set(0, 0, y, x, 1.0);
        }
        m
    }

    fn eval(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, p: &Array4<f64>) -> f64 {
        let mut t = Tape::new();
        let v = t.leaf(p.clone());
        let l = f(&mut t, v).unwrap();
        t.value(l).item()
    }

    #[test]
    fn dice_examples() {
        let eps = 1e-6;
        let m = mask(4, &[(0, 0), (1, 1), (2, 2)]);
        assert!(eval(|t, v| dice_loss(t, v, &m, eps), &m).abs() < 1e-12);

        let a = Array4::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, _| if y < 2 { 1.0 } else { 0.0 });
        let b = a.map(|v| 1.0 - v);
        let got = eval(|t, v| dice_loss(t, v, &b, eps), &a);
        assert!((got - (1.0 - eps / (16.0 + eps))).abs() < 1e-15);

        let target = mask(3, &[(0, 0), (2, 2)]);
        let pred = mask(3, &[(0, 0)]);
        assert!((eval(|t, v| dice_loss(t, v, &target, eps), &pred) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn bce_examples() {
        let t = mask(2, &[(0, 1)]);
        let half = Array4::full(Shape::new(1, 1, 2, 2), 0.5);
        assert!((eval(|tp, v| bce_loss(tp, v, &t), &half) - 2f64.ln()).abs() < 1e-12);
        let hard = eval(|tp, v| bce_loss(tp, v, &t), &t);
        assert!((hard + (1.0 - BCE_CLAMP).ln()).abs() < 1e-15);

        let one = Array4::full(Shape::new(1, 1, 1, 1), 1.0);
        let p = Array4::full(Shape::new(1, 1, 1, 1), 0.9);
        assert!((eval(|tp, v| bce_loss(tp, v, &one), &p) - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn non_binary_and_shape_rejected() {
        let mut t = Tape::<f64>::new();
        let p = t.leaf(Array4::full(Shape::new(1, 1, 2, 2), 0.5));
        let bad = Array4::full(Shape::new(1, 1, 2, 2), 0.5);
        assert!(matches!(dice_loss(&mut t, p, &bad, 1e-6), Err(Error::NonBinaryTarget)));
        assert!(matches!(bce_loss(&mut t, p, &bad), Err(Error::NonBinaryTarget)));
        let wrong = Array4::zeros(Shape::new(1, 1, 4, 4));
        assert!(matches!(bce_loss(&mut t, p, &wrong), Err(Error::ShapeMismatch { .. })));
    }

    fn random_case(s: u64) -> (Array4<f64>, Array4<f64>, Array4<f64>) {
        let mut rng = seed::rng(s);
        let shape = Shape::new(2, 1, 5, 5);
        let aux = Array4::from_fn(shape, |_, _, _, _| rng.random_range(0.02..0.98));
        let main = Array4::from_fn(shape, |_, _, _, _| rng.random_range(0.02..0.98));
        let target = Array4::from_fn(shape, |_, _, _, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        (aux, main, target)
    }

    #[test]
    fn loss_gradients_match_differences() {
        for s in 0..10 {
            let (_, p, t) = random_case(s);
            let r = check_inputs(std::slice::from_ref(&p), 1e-6, |tp, v| dice_loss(tp, v[0], &t, 1e-6)).unwrap();
            assert!(r.passes(GradTolerance::BLOCK), "{r}");
            let r = check_inputs(&[p], 1e-6, |tp, v| bce_loss(tp, v[0], &t)).unwrap();
            assert!(r.passes(GradTolerance::BLOCK), "{r}");
        }
    }

    /// Loop-based recomputation of the composite for random maps.
    fn scripted(aux: &Array4<f64>, main: &Array4<f64>, t: &Array4<f64>, lambda: f64) -> f64 {
        let seg = |p: &Array4<f64>| {
            let s = p.shape();
            let per = s.c * s.h * s.w;
            let mut dice = 0.0;
            for n in 0..s.n {
                let (mut i, mut sp, mut st) = (0.0, 0.0, 0.0);
                for k in 0..per {
                    let (a, b) = (p.data()[n * per + k], t.data()[n * per + k]);
                    i += a * b;
                    sp += a;
                    st += b;
                }
                dice += 1.0 - (2.0 * i + 1e-6) / (sp + st + 1e-6);
            }
            let mut bce = 0.0;
            for (a, b) in p.data().iter().zip(t.data()) {
                bce -= b * a.ln() + (1.0 - b) * (1.0 - a).ln();
            }
            dice / s.n as f64 + bce / s.len() as f64
        };
        lambda * seg(aux) + seg(main)
    }

    fn composite(aux: &Array4<f64>, main: &Array4<f64>, t: &Array4<f64>, lambda: f64) -> (f64, f64, f64) {
        let mut tape = Tape::new();
        let out = ModelOutput {
            aux: Some(tape.leaf(aux.clone())),
            main: tape.leaf(main.clone()),
        };
        let spec = DualLossSpec {
            lambda,
            ..DualLossSpec::default()
        };
        let l = dual_loss(&mut tape, &out, t, &spec).unwrap();
        (
            tape.value(l.total).item(),
            tape.value(l.aux.unwrap()).item(),
            tape.value(l.main).item(),
        )
    }

    #[test]
    fn dual_composition() {
        for s in 0..20 {
            let (a, m, t) = random_case(s);
            let (total, la, ls) = composite(&a, &m, &t, 0.4);
            assert_eq!(total, 0.4 * la + ls);
            assert!((total - scripted(&a, &m, &t, 0.4)).abs() < 1e-7);
            let (total0, _, ls0) = composite(&a, &m, &t, 0.0);
            assert_eq!(total0, ls0);
            let (bigger, _, _) = composite(&a, &m, &t, 0.5);
            assert!(bigger > total);
        }
    }

    #[test]
    fn default_lambda() {
        assert_eq!(DualLossSpec::default().lambda, 0.4);
        let spec: DualLossSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec.lambda, 0.4);
        assert!(DualLossSpec { lambda: -1.0, ..spec }.validate().is_err());
    }
}
