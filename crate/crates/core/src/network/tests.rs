use super::*;
use crate::blocks::dspa_attend;
use crate::diffarray::ops::{add, concat_channels, relu, sigmoid, sum};
use crate::diffarray::Shape;
use crate::layers::{batchnorm_train, conv2d, maxpool2, transconv2d, BN_EPS};
use crate::seed;

fn small(msc: bool) -> MrnConfig {
    MrnConfig {
        depth: 2,
        base_channels: 4,
        in_channels: 3,
        descriptors: 4,
        msc,
        side: 16,
    }
}

fn input(n: usize, side: usize, s: u64) -> Array4<f64> {
    Array4::randn(Shape::new(n, 3, side, side), 1.0, &mut seed::rng(s))
}

/// Parameter lookups by name so the oracles below never touch the model structs.
struct Named<'a> {
    tape: &'a mut Tape<f64>,
    store: &'a ParamStore<f64>,
}

impl Named<'_> {
    fn p(&mut self, name: &str) -> Var {
        let id = self.store.id(name).unwrap();
        self.tape.param(self.store, id)
    }

    fn conv(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let b = self.p(&format!("{prefix}.bias"));
        conv2d(self.tape, x, w, b).unwrap()
    }

    fn conv_nobias(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let c = self.tape.shape(w).n;
        let b = self.tape.leaf(Array4::zeros(Shape::new(1, c, 1, 1)));
        conv2d(self.tape, x, w, b).unwrap()
    }

    fn up(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let b = self.p(&format!("{prefix}.bias"));
        transconv2d(self.tape, x, w, b).unwrap()
    }

    fn bn(&mut self, prefix: &str, x: Var) -> Var {
        let g = self.p(&format!("{prefix}.gamma"));
        let b = self.p(&format!("{prefix}.beta"));
        batchnorm_train(self.tape, x, g, b, BN_EPS).unwrap().0
    }

    fn relu(&mut self, x: Var) -> Var {
        relu(self.tape, x).unwrap()
    }

    fn cat(&mut self, parts: &[Var]) -> Var {
        concat_channels(self.tape, parts).unwrap()
    }

    /// Concatenation of the cascade branches with their input.
    fn msc_branches(&mut self, prefix: &str, x: Var) -> Var {
        let x1 = self.conv(&format!("{prefix}.conv5"), x);
        let s1 = add(self.tape, x, x1).unwrap();
        let x2 = self.conv(&format!("{prefix}.conv3"), s1);
        let s2 = add(self.tape, x, x2).unwrap();
        let x3 = self.conv(&format!("{prefix}.conv1"), s2);
        self.cat(&[x, x1, x2, x3])
    }

    /// Cascade block, then batch norm and relu; the fusion conv has no bias.
    fn msc_unit(&mut self, prefix: &str, x: Var) -> Var {
        let c = self.msc_branches(&format!("{prefix}.msc"), x);
        let y = self.conv_nobias(&format!("{prefix}.msc.fuse"), c);
        let y = self.bn(&format!("{prefix}.msc_bn"), y);
        self.relu(y)
    }

    fn block(&mut self, prefix: &str, x: Var, msc: bool) -> Var {
        let h = self.conv_nobias(&format!("{prefix}.conv1"), x);
        let h = self.bn(&format!("{prefix}.bn1"), h);
        let h = self.relu(h);
        let h = self.conv_nobias(&format!("{prefix}.conv2"), h);
        let h = self.bn(&format!("{prefix}.bn2"), h);
        let h = self.relu(h);
        if msc {
            self.msc_unit(prefix, h)
        } else {
            h
        }
    }

    fn head(&mut self, prefix: &str, x: Var) -> Var {
        let l = self.conv(prefix, x);
        sigmoid(self.tape, l).unwrap()
    }
}

/// Depth-2 dual-path network written out layer by layer.
fn mrn_oracle(store: &ParamStore<f64>, x: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let mut o = Named { tape: &mut tape, store };
    let s1 = o.block("encoder.stage1", xv, true);
    let f1 = maxpool2(o.tape, s1).unwrap();
    let s2 = o.block("encoder.stage2", f1, true);
    let f2 = maxpool2(o.tape, s2).unwrap();
    let b = o.block("bottleneck", f2, true);

    let c = o.cat(&[b, f2]);
    let h = o.conv("aep.stage1.fuse", c);
    let h = o.relu(h);
    let u = o.up("aep.stage1.up", h);
    let m = o.cat(&[u, s2]);
    let d = o.p("aep.stage1.dspa.descriptors");
    let a = dspa_attend(o.tape, m, d).unwrap();
    let a = o.conv("aep.stage1.restore", a);
    let a1 = o.relu(a);

    let c = o.cat(&[a1, f1]);
    let h = o.conv("aep.stage2.fuse", c);
    let h = o.relu(h);
    let u = o.up("aep.stage2.up", h);
    let m = o.cat(&[u, s1]);
    let d = o.p("aep.stage2.dspa.descriptors");
    let a = dspa_attend(o.tape, m, d).unwrap();
    let a = o.conv("aep.stage2.restore", a);
    let a2 = o.relu(a);
    let aux = o.head("aep.head", a2);

    let c = o.cat(&[b, b, f2]);
    let h = o.conv("oep.stage1.fuse", c);
    let h = o.relu(h);
    let u = o.up("oep.stage1.up", h);
    let q1 = o.msc_unit("oep.stage1", u);

    let c = o.cat(&[q1, a1, f1]);
    let h = o.conv("oep.stage2.fuse", c);
    let h = o.relu(h);
    let u = o.up("oep.stage2.up", h);
    let q2 = o.msc_unit("oep.stage2", u);
    let main = o.head("oep.head", q2);
    (tape.value(aux).clone(), tape.value(main).clone())
}

fn baseline_oracle(store: &ParamStore<f64>, x: &Array4<f64>) -> Array4<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let mut o = Named { tape: &mut tape, store };
    let s1 = o.block("encoder.stage1", xv, false);
    let f1 = maxpool2(o.tape, s1).unwrap();
    let s2 = o.block("encoder.stage2", f1, false);
    let f2 = maxpool2(o.tape, s2).unwrap();
    let b = o.block("bottleneck", f2, false);
    let c = o.cat(&[b, f2]);
    let h = o.conv("decoder.stage1.fuse", c);
    let h = o.relu(h);
    let p1 = o.up("decoder.stage1.up", h);
    let c = o.cat(&[p1, f1]);
    let h = o.conv("decoder.stage2.fuse", c);
    let h = o.relu(h);
    let p2 = o.up("decoder.stage2.up", h);
    let main = o.head("decoder.head", p2);
    tape.value(main).clone()
}

fn max_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn train_forward<M: SegmentationModel<f64>>(m: &M, x: &Array4<f64>) -> (Array4<f64>, Option<Array4<f64>>) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = m.forward(&mut tape, xv, Mode::Train).unwrap();
    (tape.value(out.main).clone(), out.aux.map(|a| tape.value(a).clone()))
}

#[test]
fn mrn_matches_transcription() {
    let m = Mrn::<f64>::new(&small(true), 11).unwrap();
    let x = input(1, 16, 5);
    let (main, aux) = train_forward(&m, &x);
    let (o_aux, o_main) = mrn_oracle(m.params(), &x);
    assert!(max_diff(&main, &o_main) < 1e-6);
    assert!(max_diff(&aux.unwrap(), &o_aux) < 1e-6);
}

#[test]
fn baseline_matches_transcription() {
    let m = Baseline::<f64>::new(&small(true), 11).unwrap();
    let x = input(1, 16, 6);
    let (main, aux) = train_forward(&m, &x);
    assert!(aux.is_none());
    assert!(max_diff(&main, &baseline_oracle(m.params(), &x)) < 1e-6);
}

fn conv_params(k: usize, i: usize, o: usize) -> usize {
    k * k * i * o + o
}

/// Cascade branches with bias, bias-free fusion, then batch norm.
fn msc_params(c: usize) -> usize {
    conv_params(5, c, c) + conv_params(3, c, c) + conv_params(1, c, c) + 4 * c * c + 2 * c
}

/// Walks the layer shapes without consulting any layer type.
fn census(d: usize, b: usize, n: usize, dual: bool) -> usize {
    // Convolutions feeding batch norm have no bias.
    let block = |i: usize, o: usize| 9 * i * o + 9 * o * o + 4 * o + if dual { msc_params(o) } else { 0 };
    let mut total = 0;
    let mut cin = 3;
    for i in 1..=d {
        let c = b << (i - 1);
        total += block(cin, c);
        cin = c;
    }
    total += block(cin, b << d);
    for l in (1..=d).rev() {
        let (nom, skip) = (b << l, b << (l - 1));
        let up = 4 * nom * (nom / 2) + nom / 2;
        total += conv_params(1, nom + skip, nom) + up;
        if dual {
            total += nom * n + conv_params(1, nom, nom / 2);
            total += conv_params(1, 2 * nom + skip, nom) + up + msc_params(nom / 2);
        }
    }
    total + conv_params(1, b, 1) * if dual { 2 } else { 1 }
}

fn trainable<T: Element, M: SegmentationModel<T>>(m: &M) -> usize {
    m.params()
        .trainable_ids()
        .map(|id| m.params().value(id).shape().len())
        .sum()
}

#[test]
fn parameter_census() {
    let cfg = MrnConfig::default();
    assert_eq!(census(4, 16, 64, true), 6_208_898);
    assert_eq!(census(4, 16, 64, false), 1_485_137);
    let mrn = Mrn::<f32>::new(&cfg, 0).unwrap();
    let base = Baseline::<f32>::new(&cfg, 0).unwrap();
    assert_eq!(trainable(&mrn), census(4, 16, 64, true));
    assert_eq!(trainable(&base), census(4, 16, 64, false));
    assert!(trainable(&base) < trainable(&mrn));
    assert_eq!(trainable(&Mrn::<f32>::new(&small(true), 0).unwrap()), 24_018);
}

#[test]
fn shapes_and_range() {
    let cfg = MrnConfig {
        depth: 4,
        base_channels: 2,
        descriptors: 3,
        side: 64,
        ..MrnConfig::default()
    };
    let m = Mrn::<f64>::new(&cfg, 1).unwrap();
    let x = input(1, 64, 2);
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let enc = m.encode(&mut tape, xv, Mode::Train).unwrap();
    let sides: Vec<usize> = enc.skips.iter().map(|&v| tape.shape(v).h).collect();
    assert_eq!(sides, [64, 32, 16, 8]);
    assert_eq!(tape.shape(enc.bottom), Shape::new(1, 32, 4, 4));
    let chans: Vec<usize> = enc.pooled.iter().map(|&v| tape.shape(v).c).collect();
    assert_eq!(chans, [2, 4, 8, 16]);
    let aep = m.decode_aep(&mut tape, &enc).unwrap();
    let sides: Vec<usize> = aep.features.iter().map(|&v| tape.shape(v).h).collect();
    assert_eq!(sides, [8, 16, 32, 64]);
    let main = m.decode_oep(&mut tape, &enc, &aep, Mode::Train).unwrap();
    for v in [aep.map, main] {
        assert_eq!(tape.shape(v), Shape::new(1, 1, 64, 64));
        assert!(tape.value(v).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn other_sides_accepted_bad_sides_rejected() {
    let m = Mrn::<f64>::new(&small(false), 1).unwrap();
    let (main, aux) = train_forward(&m, &input(2, 8, 3));
    assert_eq!(main.shape(), Shape::new(2, 1, 8, 8));
    assert_eq!(aux.unwrap().shape(), Shape::new(2, 1, 8, 8));
    let mut tape = Tape::new();
    let xv = tape.leaf(input(1, 10, 3));
    assert!(m.forward(&mut tape, xv, Mode::Train).is_err());
}

#[test]
fn stage_count_mismatch_rejected() {
    let m = Mrn::<f64>::new(&small(true), 1).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(input(1, 16, 3));
    let enc = m.encode(&mut tape, xv, Mode::Train).unwrap();
    let mut aep = m.decode_aep(&mut tape, &enc).unwrap();
    aep.features.pop();
    assert!(m.decode_oep(&mut tape, &enc, &aep, Mode::Train).is_err());
}

#[test]
fn batch_items_independent_in_eval() {
    let mut m = Mrn::<f64>::new(&small(true), 4).unwrap();
    m.params_mut().mark_stats_ready();
    let x = input(2, 16, 9);
    let mut y = x.clone();
    for v in y.item_slice_mut(0) {
        *v += 0.5;
    }
    let a = m.predict(&x).unwrap();
    let b = m.predict(&y).unwrap();
    assert_eq!(a.item_slice(1), b.item_slice(1));
    assert_ne!(a.item_slice(0), b.item_slice(0));
}

#[test]
fn both_paths_reach_first_encoder_conv() {
    let m = Mrn::<f64>::new(&small(true), 2).unwrap();
    let first = m.params().id("encoder.stage1.conv1.weight").unwrap();
    for use_aux in [true, false] {
        let mut tape = Tape::new();
        let xv = tape.leaf(input(1, 16, 8));
        let out = m.forward(&mut tape, xv, Mode::Train).unwrap();
        let target = if use_aux { out.aux.unwrap() } else { out.main };
        let s = sum(&mut tape, target).unwrap();
        let g = tape.backward(s).unwrap().for_store(m.params());
        assert!(g[first.index()].data().iter().any(|&v| v != 0.0), "aux={use_aux}");
    }
}

#[test]
fn auxiliary_fusion_is_live() {
    let mut m = Mrn::<f64>::new(&small(true), 3).unwrap();
    m.params_mut().mark_stats_ready();
    let x = input(1, 16, 1);
    let before = m.predict(&x).unwrap();
    // Input columns of the second main-path fuse that read the auxiliary feature.
    let id = m.params().id("oep.stage2.fuse.weight").unwrap();
    let nom = small(true).level_channels(1);
    let w = m.params_mut().value_mut(id);
    let s = w.shape();
    for o in 0..s.n {
        for c in nom..2 * nom {
            w.set(o, c, 0, 0, 0.0);
        }
    }
    let after = m.predict(&x).unwrap();
    assert!(max_diff(&before, &after) > 1e-9);
}

#[test]
fn construction_is_seeded() {
    let a = Mrn::<f32>::new(&small(true), 7).unwrap();
    let b = Mrn::<f32>::new(&small(true), 7).unwrap();
    let c = Mrn::<f32>::new(&small(true), 8).unwrap();
    let id = a.params().id("aep.stage1.dspa.descriptors").unwrap();
    assert_eq!(a.params().value(id).data(), b.params().value(id).data());
    assert_ne!(a.params().value(id).data(), c.params().value(id).data());
}

#[test]
fn zero_lambda_silences_only_auxiliary_tail() {
    use crate::objectives::{dual_loss, DualLossSpec};
    let m = Mrn::<f64>::new(&small(true), 5).unwrap();
    let target = Array4::from_fn(
        Shape::new(1, 1, 16, 16),
        |_, _, y, x| {
            if (y + x) % 3 == 0 {
                1.0
            } else {
                0.0
            }
        },
    );
    let mut tape = Tape::new();
    let xv = tape.leaf(input(1, 16, 4));
    let out = m.forward(&mut tape, xv, Mode::Train).unwrap();
    let spec = DualLossSpec {
        lambda: 0.0,
        ..DualLossSpec::default()
    };
    let loss = dual_loss(&mut tape, &out, &target, &spec).unwrap();
    let g = tape.backward(loss.total).unwrap().for_store(m.params());
    let store = m.params();
    for id in store.trainable_ids() {
        let name = store.name(id);
        let zero = g[id.index()].data().iter().all(|&v| v == 0.0);
        // The finest auxiliary stage feeds only the auxiliary head.
        let silent = name.starts_with("aep.head") || name.starts_with("aep.stage2.");
        assert_eq!(zero, silent, "{name}");
    }
}
