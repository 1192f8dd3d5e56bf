//! Finite-difference gradient checks.
//!
//! Each probed entry is evaluated at `x - h` and `x + h` around the
//! unperturbed loss. When the forward and backward one-sided differences
//! disagree by more than [`KINK_RATIO`], the interval straddles a
//! non-differentiable point (a ReLU or max-pool switch) and the entry is
//! judged by whichever of the central, forward or backward estimates is
//! closest to the analytic value. Such entries are counted in
//! [`GroupCheck::kinks`].

use std::fmt;

use rand::seq::index::sample;

use rand::Rng;

use crate::blocks::{dspa_attend, CascadeMsc};
use crate::diffarray::ops::{mul, sum};
use crate::diffarray::{Array4, Mode, Shape, Tape, Var};
use crate::error::Result;
use crate::layers::{batchnorm_train, conv2d, maxpool2, transconv2d, BN_EPS};
use crate::network::{ModelRegistry, MrnConfig};
use crate::objectives::{bce_loss, dice_loss, dual_loss, DualLossSpec};
use crate::params::ParamStore;
use crate::seed;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error at this scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative disagreement of the one-sided differences that marks a kink.
pub const KINK_RATIO: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradTolerance(pub f64);

impl GradTolerance {
    /// Single layer or block.
    pub const BLOCK: GradTolerance = GradTolerance(1e-4);
    /// Whole network through the dual loss.
    pub const END_TO_END: GradTolerance = GradTolerance(1e-3);
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub total: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `|a - n| / max(|a|, |n|)` over the probed entries as vectors.
    pub norm_rel_err: f64,
    pub kinks: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub groups: Vec<GroupCheck>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_norm_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.norm_rel_err).fold(0.0, f64::max)
    }

    /// Every probed entry within `tol`.
    pub fn passes(&self, tol: GradTolerance) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < tol.0)
    }

    /// Every tensor within `tol` under the norm-wise error.
    pub fn passes_normwise(&self, tol: GradTolerance) -> bool {
        self.groups.iter().all(|g| g.norm_rel_err < tol.0)
    }

    pub fn failing(&self, tol: GradTolerance) -> impl Iterator<Item = &GroupCheck> {
        self.groups.iter().filter(move |g| !(g.max_rel_err < tol.0))
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(
                f,
                "{:<40} {:>6}/{:<6} norm_rel_err={:.3e} max_rel_err={:.3e} max_abs_err={:.3e} kinks={}",
                g.name, g.checked, g.total, g.norm_rel_err, g.max_rel_err, g.max_abs_err, g.kinks
            )?;
        }
        Ok(())
    }
}

/// Loss at `x - step` and `x + step` for one entry.
#[derive(Clone, Copy, Debug)]
struct Probe {
    down: f64,
    up: f64,
}

/// Numeric derivative for `analytic` and whether a kink was detected.
fn estimate(analytic: f64, base: f64, p: Probe, step: f64) -> (f64, bool) {
    let central = (p.up - p.down) / (2.0 * step);
    let forward = (p.up - base) / step;
    let backward = (base - p.down) / step;
    let scale = forward.abs().max(backward.abs()).max(REL_FLOOR);
    if !((forward - backward).abs() > KINK_RATIO * scale) {
        return (central, false);
    }
    let best = [central, forward, backward]
        .into_iter()
        .min_by(|a, b| relative_error(analytic, *a).total_cmp(&relative_error(analytic, *b)))
        .unwrap_or(central);
    (best, true)
}

fn compare(
    name: String,
    analytic: &[f64],
    indices: &[usize],
    total: usize,
    base: f64,
    step: f64,
    mut probe: impl FnMut(usize) -> Result<Probe>,
) -> Result<GroupCheck> {
    let mut g = GroupCheck {
        name,
        checked: indices.len(),
        total,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        norm_rel_err: 0.0,
        kinks: 0,
    };
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    for &i in indices {
        let a = analytic[i];
        let (n, kink) = estimate(a, base, probe(i)?, step);
        g.kinks += kink as usize;
        diff += (a - n) * (a - n);
        an += a * a;
        nn += n * n;
        let rel = relative_error(a, n);
        // NaN must fail the check, so compare with negation.
        if !(rel <= g.max_rel_err) {
            g.max_rel_err = rel;
        }
        g.max_abs_err = g.max_abs_err.max((a - n).abs());
    }
    let scale = an.sqrt().max(nn.sqrt()).max(REL_FLOOR);
    g.norm_rel_err = diff.sqrt() / scale;
    Ok(g)
}

fn pick(total: usize, limit: Option<usize>, seed_value: u64) -> Vec<usize> {
    match limit {
        Some(k) if k < total => {
            let mut idx = sample(&mut seed::rng(seed_value), total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    }
}

/// Check the gradient of `f` with respect to each of `inputs` (all entries).
pub fn check_inputs<F>(inputs: &[Array4<f64>], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array4<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| t.leaf(v.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).item())
    };

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.leaf(v.clone())).collect();
    let loss = f(&mut t, &vars)?;
    let base = t.value(loss).item();
    let grads = t.backward(loss)?;

    let mut report = GradReport::default();
    for (k, input) in inputs.iter().enumerate() {
        let total = input.shape().len();
        let analytic = grads
            .wrt(vars[k])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; total]);
        let indices: Vec<usize> = (0..total).collect();
        let mut work = inputs.to_vec();
        let g = compare(format!("input{k}"), &analytic, &indices, total, base, step, |i| {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            Ok(Probe { down, up })
        })?;
        report.groups.push(g);
    }
    Ok(report)
}

/// Check the gradient of `f` with respect to every trainable tensor in
/// `store`. With `limit`, at most that many entries per tensor are probed
/// (chosen by `seed_value`); otherwise all entries are.
pub fn check_params<F>(
    store: &mut ParamStore<f64>,
    step: f64,
    limit: Option<usize>,
    seed_value: u64,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    check_params_in(store, |s| s, |s| s, step, limit, seed_value, |t, s| f(t, s))
}

/// Like [`check_params`] for a store owned by `state`.
pub fn check_params_in<S: ?Sized, F>(
    state: &mut S,
    get: fn(&S) -> &ParamStore<f64>,
    get_mut: fn(&mut S) -> &mut ParamStore<f64>,
    step: f64,
    limit: Option<usize>,
    seed_value: u64,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &S) -> Result<Var>,
{
    let mut t = Tape::new();
    let loss = f(&mut t, state)?;
    let base = t.value(loss).item();
    let grads = t.backward(loss)?.for_store(get(state));

    let ids: Vec<_> = get(state).trainable_ids().collect();
    let mut report = GradReport::default();
    for id in ids {
        let total = get(state).value(id).shape().len();
        let indices = pick(
            total,
            limit,
            seed::derive(seed_value, "gradcheck", &[id.index() as u64]),
        );
        let name = get(state).name(id).to_string();
        let analytic = grads[id.index()].data().to_vec();
        let g = compare(name, &analytic, &indices, total, base, step, |i| {
            let orig = get(state).value(id).data()[i];
            let mut eval_at = |v: f64| -> Result<f64> {
                get_mut(state).value_mut(id).data_mut()[i] = v;
                let mut t = Tape::new();
                let out = f(&mut t, state)?;
                Ok(t.value(out).item())
            };
            let up = eval_at(orig + step);
            let down = eval_at(orig - step);
            get_mut(state).value_mut(id).data_mut()[i] = orig;
            Ok(Probe { down: down?, up: up? })
        })?;
        report.groups.push(g);
    }
    Ok(report)
}

/// Finite-difference step for single blocks.
pub const STEP: f64 = 1e-6;
/// Step for the whole model, where forward roundoff is larger.
pub const MODEL_STEP: f64 = 1e-5;

/// Small 64-bit configuration used for the whole-model check.
pub fn gradcheck_config() -> MrnConfig {
    MrnConfig {
        depth: 2,
        base_channels: 4,
        in_channels: 3,
        descriptors: 4,
        msc: true,
        side: 16,
    }
}

/// Block-level reports at [`GradTolerance::BLOCK`] and the whole-model
/// dual-loss report at [`GradTolerance::END_TO_END`].
#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub blocks: Vec<(String, GradReport)>,
    pub end_to_end: GradReport,
}

impl GradcheckOutcome {
    pub fn block_failures(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|(_, r)| !r.passes(GradTolerance::BLOCK))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn passes(&self) -> bool {
        self.block_failures().is_empty() && self.end_to_end.passes_normwise(GradTolerance::END_TO_END)
    }
}

impl fmt::Display for GradcheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, r) in &self.blocks {
            let verdict = if r.passes(GradTolerance::BLOCK) { "ok" } else { "FAIL" };
            writeln!(f, "block {name:<40} max_rel_err={:.3e} {verdict}", r.max_rel_err())?;
        }
        writeln!(
            f,
            "end-to-end dual loss (tolerance {:.0e}):",
            GradTolerance::END_TO_END.0
        )?;
        write!(f, "{}", self.end_to_end)?;
        let verdict = if self.passes() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "{verdict} max_norm_rel_err={:.3e}",
            self.end_to_end.max_norm_rel_err()
        )
    }
}

fn block_checks(seed_value: u64) -> Result<Vec<(String, GradReport)>> {
    let mut rng = seed::rng(seed::derive(seed_value, "gradcheck-blocks", &[]));
    let mut rand = |s: Shape| Array4::<f64>::randn(s, 1.0, &mut rng);
    let x = rand(Shape::new(2, 3, 6, 6));
    let probe = rand(Shape::new(2, 4, 6, 6));
    let mut out = Vec::new();
    let weigh = |t: &mut Tape<f64>, v: Var, w: &Array4<f64>| -> Result<Var> {
        let wv = t.leaf(w.clone());
        let p = mul(t, v, wv)?;
        sum(t, p)
    };
    for k in [1usize, 3, 5] {
        let w = rand(Shape::new(4, 3, k, k));
        let b = rand(Shape::new(1, 4, 1, 1));
        let r = check_inputs(&[x.clone(), w, b], STEP, |t, v| {
            let y = conv2d(t, v[0], v[1], v[2])?;
            weigh(t, y, &probe)
        })?;
        out.push((format!("conv{k}x{k}"), r));
    }
    let tw = rand(Shape::new(3, 4, 2, 2));
    let tb = rand(Shape::new(1, 4, 1, 1));
    let up_probe = rand(Shape::new(2, 4, 12, 12));
    let r = check_inputs(&[x.clone(), tw, tb], STEP, |t, v| {
        let y = transconv2d(t, v[0], v[1], v[2])?;
        weigh(t, y, &up_probe)
    })?;
    out.push(("transconv2x2".into(), r));
    let pool_probe = rand(Shape::new(2, 3, 3, 3));
    let r = check_inputs(std::slice::from_ref(&x), STEP, |t, v| {
        let y = maxpool2(t, v[0])?;
        weigh(t, y, &pool_probe)
    })?;
    out.push(("maxpool2".into(), r));
    let g = rand(Shape::new(1, 3, 1, 1));
    let b = rand(Shape::new(1, 3, 1, 1));
    let bn_probe = rand(Shape::new(2, 3, 6, 6));
    let r = check_inputs(&[x.clone(), g, b], STEP, |t, v| {
        let (y, _, _) = batchnorm_train(t, v[0], v[1], v[2], BN_EPS)?;
        weigh(t, y, &bn_probe)
    })?;
    out.push(("batchnorm".into(), r));
    let d = rand(Shape::new(5, 3, 1, 1));
    let r = check_inputs(&[x.clone(), d], STEP, |t, v| {
        let y = dspa_attend(t, v[0], v[1])?;
        weigh(t, y, &bn_probe)
    })?;
    out.push(("dspa".into(), r));

    let mut store = ParamStore::<f64>::new();
    let msc = CascadeMsc::new(&mut store, "msc", 3, 4, &mut rng)?;
    let msc_x = x.clone();
    let r = check_params(&mut store, STEP, None, seed_value, |t, s| {
        let xv = t.leaf(msc_x.clone());
        let y = msc.forward(t, s, xv)?;
        weigh(t, y, &probe)
    })?;
    out.push(("cascade_msc".into(), r));

    let p = Array4::from_fn(Shape::new(2, 1, 4, 4), |_, _, _, _| rng.random_range(0.05..0.95));
    let target = Array4::from_fn(
        Shape::new(2, 1, 4, 4),
        |_, _, _, _| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        },
    );
    let r = check_inputs(std::slice::from_ref(&p), STEP, |t, v| dice_loss(t, v[0], &target, 1e-6))?;
    out.push(("dice_loss".into(), r));
    let r = check_inputs(&[p], STEP, |t, v| bce_loss(t, v[0], &target))?;
    out.push(("bce_loss".into(), r));
    Ok(out)
}

/// Gradient check of the dual loss of model `name` built from `cfg` in
/// 64-bit, on one `side x side` input, plus the block checks. With `limit`,
/// at most that many entries per parameter tensor are probed.
pub fn model_gradcheck(name: &str, cfg: &MrnConfig, seed_value: u64, limit: Option<usize>) -> Result<GradcheckOutcome> {
    let blocks = block_checks(seed_value)?;
    let mut model = ModelRegistry::<f64>::standard().build(name, cfg, seed::derive(seed_value, "model", &[]))?;
    let mut rng = seed::rng(seed::derive(seed_value, "gradcheck-input", &[]));
    let x = Array4::<f64>::randn(Shape::new(1, cfg.in_channels, cfg.side, cfg.side), 1.0, &mut rng);
    let c = (cfg.side as f64 - 1.0) / 2.0;
    let r = cfg.side as f64 * rng.random_range(0.2..0.35);
    let target = Array4::from_fn(Shape::new(1, 1, cfg.side, cfg.side), |_, _, y, xx| {
        let (dy, dx) = (y as f64 - c, xx as f64 - c);
        if dx * dx + dy * dy <= r * r {
            1.0
        } else {
            0.0
        }
    });
    let spec = DualLossSpec::default();
    let end_to_end = check_params_in(
        model.as_mut(),
        |m| m.params(),
        |m| m.params_mut(),
        MODEL_STEP,
        limit,
        seed_value,
        |t, m| {
            let xv = t.leaf(x.clone());
            let out = m.forward(t, xv, Mode::Train)?;
            Ok(dual_loss(t, &out, &target, &spec)?.total)
        },
    )?;
    Ok(GradcheckOutcome { blocks, end_to_end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffarray::Operation;

    /// ReLU whose backward doubles the gradient.
    struct BrokenRelu;

    impl Operation<f64> for BrokenRelu {
        fn name(&self) -> &'static str {
            "broken_relu"
        }

        fn backward(&self, inputs: &[&Array4<f64>], _: &Array4<f64>, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
            let g = grad
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| if x > 0.0 { 2.0 * g } else { 0.0 })
                .collect();
            vec![Some(g)]
        }
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let x = Array4::randn(Shape::new(1, 2, 3, 3), 1.0, &mut seed::rng(1));
        let r = check_inputs(&[x], STEP, |t, v| {
            let y = t.value(v[0]).map(|a| a.max(0.0));
            let y = t.record(y, vec![v[0]], Box::new(BrokenRelu))?;
            sum(t, y)
        })
        .unwrap();
        assert!(!r.passes(GradTolerance::BLOCK));
        assert!(r.max_rel_err() > 0.4);
    }

    fn relu_at_switch(broken: bool) -> GradReport {
        // 3e-6 sits inside the +-1e-5 probe interval around the relu switch.
        let x = Array4::scalar(3e-6);
        check_inputs(&[x], 1e-5, |t, v| {
            let y = t.value(v[0]).map(|a| a.max(0.0));
            let y = if broken {
                t.record(y, vec![v[0]], Box::new(BrokenRelu))?
            } else {
                crate::diffarray::ops::relu(t, v[0])?
            };
            sum(t, y)
        })
        .unwrap()
    }

    #[test]
    fn kink_is_judged_by_the_side_without_it() {
        let r = relu_at_switch(false);
        assert_eq!(r.groups[0].kinks, 1);
        assert!(r.passes(GradTolerance::BLOCK), "{r}");
    }

    #[test]
    fn kink_does_not_hide_a_wrong_backward() {
        let r = relu_at_switch(true);
        assert_eq!(r.groups[0].kinks, 1);
        assert!(!r.passes(GradTolerance::BLOCK));
        assert!(!r.passes_normwise(GradTolerance::END_TO_END));
    }

    #[test]
    fn norm_error_weighs_entries_by_magnitude() {
        let analytic = [1.0, 1e-6, -2.0];
        let numeric = [1.0, 2e-6, -2.0];
        let g = compare("t".into(), &analytic, &[0, 1, 2], 3, 0.0, 1.0, |i| {
            // Linear in the entry, so the central difference is `numeric[i]`.
            Ok(Probe {
                down: -numeric[i],
                up: numeric[i],
            })
        })
        .unwrap();
        assert_eq!(g.kinks, 0);
        assert!((g.max_rel_err - 0.5).abs() < 1e-12);
        assert!((g.norm_rel_err - 1e-6 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2e-7, 0.0) - 0.2).abs() < 1e-12);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-12);
    }

    #[test]
    fn sampled_model_check_passes_and_lists_groups() {
        let cfg = gradcheck_config();
        let out = model_gradcheck("ddsl", &cfg, 3, Some(3)).unwrap();
        assert!(out.passes(), "{out}");
        let m = crate::network::Mrn::<f64>::new(&cfg, 0).unwrap();
        use crate::network::SegmentationModel;
        let names: Vec<&str> = m.params().trainable_ids().map(|id| m.params().name(id)).collect();
        let got: Vec<&str> = out.end_to_end.groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(got, names);
        assert!(out.to_string().lines().count() > names.len());
    }
}
