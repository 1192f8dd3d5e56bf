use rand::Rng;

use crate::diffarray::ops::{add, concat_channels};
use crate::diffarray::{Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvSpec};
use crate::params::ParamStore;

/// Cascade multi-scale convolution:
///
/// ```text
/// x1 = conv5(x)
/// x2 = conv3(x + x1)
/// x3 = conv1(x + x2)
/// y  = fuse(concat(x, x1, x2, x3))
/// ```
///
/// The branch convs keep `channels` so the sums are well formed; `fuse`
/// maps `4 * channels` to `out_channels`.
#[derive(Clone, Debug)]
pub struct CascadeMsc {
    pub channels: usize,
    pub out_channels: usize,
    pub conv5: Conv2d,
    pub conv3: Conv2d,
    pub conv1: Conv2d,
    pub fuse: Conv2d,
}

/// Intermediate maps of one [`CascadeMsc`] evaluation.
#[derive(Clone, Copy, Debug)]
pub struct MscTrace {
    pub x1: Var,
    pub x2: Var,
    pub x3: Var,
    pub concat: Var,
    pub y: Var,
}

impl CascadeMsc {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(store, prefix, channels, out_channels, true, rng)
    }

    /// As [`CascadeMsc::new`] with no bias on `fuse`, for use ahead of a
    /// normalisation layer.
    pub fn without_fuse_bias<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(store, prefix, channels, out_channels, false, rng)
    }

    fn build<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        out_channels: usize,
        fuse_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv5 = Conv2d::new(
            store,
            &format!("{prefix}.conv5"),
            ConvSpec::new(5, channels, channels)?,
            rng,
        );
        let conv3 = Conv2d::new(
            store,
            &format!("{prefix}.conv3"),
            ConvSpec::new(3, channels, channels)?,
            rng,
        );
        let conv1 = Conv2d::new(
            store,
            &format!("{prefix}.conv1"),
            ConvSpec::new(1, channels, channels)?,
            rng,
        );
        let fuse_spec = ConvSpec::new(1, 4 * channels, out_channels)?;
        let fuse = if fuse_bias {
            Conv2d::new(store, &format!("{prefix}.fuse"), fuse_spec, rng)
        } else {
            Conv2d::without_bias(store, &format!("{prefix}.fuse"), fuse_spec, rng)
        };
        Ok(CascadeMsc {
            channels,
            out_channels,
            conv5,
            conv3,
            conv1,
            fuse,
        })
    }

    pub fn param_count(&self) -> usize {
        [&self.conv5, &self.conv3, &self.conv1, &self.fuse]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }

    pub fn trace<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<MscTrace> {
        let got = tape.shape(x).c;
        if got != self.channels {
            return Err(Error::ChannelMismatch {
                op: "cascade_msc",
                expected: self.channels,
                got,
            });
        }
        let x1 = self.conv5.forward(tape, store, x)?;
        let s1 = add(tape, x, x1)?;
        let x2 = self.conv3.forward(tape, store, s1)?;
        let s2 = add(tape, x, x2)?;
        let x3 = self.conv1.forward(tape, store, s2)?;
        let concat = concat_channels(tape, &[x, x1, x2, x3])?;
        let y = self.fuse.forward(tape, store, concat)?;
        Ok(MscTrace { x1, x2, x3, concat, y })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.trace(tape, store, x)?.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffarray::ops::{mul, sum};
    use crate::diffarray::{Array4, Shape};
    use crate::engine::gradcheck::{check_params, GradTolerance};
    use crate::seed;

    #[test]
    fn fuse_bias_is_optional() {
        let mut store = ParamStore::<f32>::new();
        let with = CascadeMsc::new(&mut store, "a", 4, 4, &mut seed::rng(0)).unwrap();
        let without = CascadeMsc::without_fuse_bias(&mut store, "b", 4, 4, &mut seed::rng(0)).unwrap();
        assert_eq!(with.param_count(), without.param_count() + 4);
        assert!(store.id("b.fuse.bias").is_err());
        let total: usize = store.trainable_ids().map(|id| store.value(id).shape().len()).sum();
        assert_eq!(total, with.param_count() + without.param_count());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let msc = CascadeMsc::new(&mut store, "msc", 2, 3, &mut seed::rng(0)).unwrap();
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let x = t.leaf(Array4::randn(Shape::new(1, 2, 4, 4), 1.0, &mut seed::rng(1)));
        let tr = msc.trace(&mut t, &store, x).unwrap();
        for v in [tr.x1, tr.x2, tr.x3, tr.y] {
            assert!(t.value(v).data().iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn shapes_follow_channel_arithmetic() {
        let mut store = ParamStore::<f32>::new();
        let msc = CascadeMsc::new(&mut store, "msc", 8, 8, &mut seed::rng(0)).unwrap();
        let mut t = Tape::new();
        let x = t.leaf(Array4::zeros(Shape::new(1, 8, 16, 16)));
        let tr = msc.trace(&mut t, &store, x).unwrap();
        assert_eq!(t.shape(tr.concat), Shape::new(1, 32, 16, 16));
        assert_eq!(t.shape(tr.y), Shape::new(1, 8, 16, 16));
        let bad = t.leaf(Array4::zeros(Shape::new(1, 4, 16, 16)));
        assert!(msc.forward(&mut t, &store, bad).is_err());
    }

    #[test]
    fn every_concatenated_part_reaches_the_output() {
        let mut store = ParamStore::<f64>::new();
        let msc = CascadeMsc::new(&mut store, "msc", 2, 2, &mut seed::rng(4)).unwrap();
        let x = Array4::randn(Shape::new(1, 2, 5, 5), 1.0, &mut seed::rng(5));
        let run = |s: &ParamStore<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let y = msc.forward(&mut t, s, xv).unwrap();
            t.value(y).clone()
        };
        let base = run(&store);
        for part in 0..4 {
            let mut s = store.clone();
            let w = s.value_mut(msc.fuse.weight);
            for o in 0..2 {
                for c in 2 * part..2 * part + 2 {
                    w.set(o, c, 0, 0, 0.0);
                }
            }
            assert_ne!(run(&s), base, "part {part} has no effect");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let msc = CascadeMsc::new(&mut store, "msc", 2, 3, &mut seed::rng(8)).unwrap();
        let mut r = seed::rng(9);
        let x = Array4::randn(Shape::new(2, 2, 5, 5), 1.0, &mut r);
        let probe = Array4::randn(Shape::new(2, 3, 5, 5), 1.0, &mut r);
        let report = check_params(&mut store, 1e-5, None, 0, |t, s| {
            let xv = t.leaf(x.clone());
            let pv = t.leaf(probe.clone());
            let y = msc.forward(t, s, xv)?;
            let p = mul(t, y, pv)?;
            sum(t, p)
        })
        .unwrap();
        assert!(report.passes(GradTolerance::BLOCK), "{report}");
    }
}
