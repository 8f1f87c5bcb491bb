use super::{GradError, Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares backprop gradients of the scalar built by `build` against
/// central differences with step `h`.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-3)`. At most `per_param`
/// evenly spaced entries of each parameter are probed.
pub fn finite_difference_check(
    store: &ParamStore,
    h: f64,
    per_param: usize,
    build: impl Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>,
) -> Result<FdReport, GradError> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let analytic = store.collect_grads(&g, &grads);

    let mut probe = store.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let eval = |s: &ParamStore| -> Result<f64, GradError> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        Ok(g.value(l).item())
    };
    for id in store.ids() {
        let len = store.value(id).len();
        let stride = len.div_ceil(per_param.max(1)).max(1);
        for j in (0..len).step_by(stride) {
            let x = store.value(id).data()[j];
            probe.value_mut(id).data_mut()[j] = x + h;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[j] = x - h;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()].as_ref().map_or(0.0, |m| m.data()[j]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grad::{GruCell, Linear, Matrix};

    const H: f64 = 1e-4;
    const TOL: f64 = 1e-4;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn check(store: &ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>) {
        let r = finite_difference_check(store, H, 64, build).unwrap();
        assert!(r.checked > 0);
        assert!(r.max_rel_error < TOL, "{r:?}");
    }

    /// Reduces a matrix to a scalar through fixed random weights so every
    /// output entry carries a distinct upstream gradient.
    fn weigh(g: &mut Graph, x: Var, seed: u64) -> Var {
        let (r, c) = g.value(x).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.constant(random(r, c, &mut rng));
        let y = g.mul(x, w).unwrap();
        g.sum(y)
    }

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let mut s = ParamStore::new();
        let x = s.add("x", Matrix::scalar(0.0));
        let mut g = Graph::new();
        let v = g.param(&s, x);
        let t = g.tanh(v);
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.get(v).unwrap().item(), 1.0);
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut s = ParamStore::new();
        let x = s.add("x", Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mut g = Graph::new();
        let v = g.param(&s, x);
        let m = g.mean(v);
        let grads = g.backward(m).unwrap();
        assert!(grads.get(v).unwrap().data().iter().all(|&d| (d - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut s = ParamStore::new();
        let x = s.add("x", Matrix::scalar(3.0));
        let mut g = Graph::new();
        let v = g.param(&s, x);
        let y = g.mul(v, v).unwrap();
        let z = g.add(y, v).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(v).unwrap().item(), 7.0);
        assert_eq!(g.value(v).item(), 3.0);
    }

    #[test]
    fn shape_errors_surface_at_construction() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 3));
        let b = g.input(Matrix::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(GradError::Shape { op: "matmul", .. })));
        let c = g.input(Matrix::zeros(3, 2));
        assert!(matches!(g.add(a, c), Err(GradError::Shape { .. })));
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let mut g = Graph::new();
        let a = g.input(Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(g.sample_categorical(a, &mut rng), Err(GradError::NonFinite(_))));
    }

    #[test]
    fn dominant_logit_is_always_sampled() {
        let mut g = Graph::new();
        let a = g.input(Matrix::from_vec(1, 4, vec![0.0, 1e3, 0.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(g.sample_categorical(a, &mut rng).unwrap().0, vec![1]);
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let k = 5;
        let n = 100_000;
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(n, k));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (idx, _) = g.sample_categorical(a, &mut rng).unwrap();
        let mut counts = vec![0usize; k];
        for i in idx {
            counts[i] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn log_prob_gradient_is_softmax_identity() {
        let logits = vec![0.3, -1.2, 2.0, 0.1];
        let mut s = ParamStore::new();
        let x = s.add("x", Matrix::from_vec(1, 4, logits.clone()));
        let mut g = Graph::new();
        let v = g.param(&s, x);
        let (_, lp) = g.greedy_categorical(v).unwrap();
        let grads = g.backward(lp).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (j, d) in grads.get(v).unwrap().data().iter().enumerate() {
            let delta = if j == 2 { 1.0 } else { 0.0 };
            assert!((d - (delta - logits[j].exp() / z)).abs() < 1e-12);
        }
        check(&s, |g, s| {
            let v = g.param(s, x);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (_, lp) = g.sample_categorical(v, &mut rng)?;
            Ok(g.sum(lp))
        });
    }

    #[test]
    fn entropy_values_and_errors() {
        let mut g = Graph::new();
        let u = g.constant(Matrix::filled(1, 15, 1.0 / 15.0));
        let h = g.entropy(u).unwrap();
        assert!((g.value(h).item() - 15f64.ln()).abs() < 1e-12);
        let one = g.constant(Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]));
        let h = g.entropy(one).unwrap();
        assert_eq!(g.value(h).item(), 0.0);
        let neg = g.constant(Matrix::from_vec(1, 2, vec![-0.5, 1.5]));
        assert!(matches!(g.entropy(neg), Err(GradError::Numeric(_))));
        let bad = g.constant(Matrix::from_vec(1, 2, vec![0.5, 0.6]));
        assert!(g.entropy(bad).is_err());
    }

    #[test]
    fn three_layer_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let l1 = Linear::new(&mut s, "l1", 5, 7, &mut rng);
        let l2 = Linear::new(&mut s, "l2", 7, 6, &mut rng);
        let l3 = Linear::new(&mut s, "l3", 6, 3, &mut rng);
        let x = random(4, 5, &mut rng);
        check(&s, |g, s| {
            let x = g.constant(x.clone());
            let a = l1.forward(g, s, x)?;
            let a = g.tanh(a);
            let b = l2.forward(g, s, a)?;
            let b = g.sigmoid(b);
            let c = l3.forward(g, s, b)?;
            let lp = g.log_softmax(c)?;
            let picked = g.pick_cols(lp, Arc::from(vec![0, 2, 1, 1]))?;
            Ok(g.mean(picked))
        });
    }

    #[test]
    fn gru_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = ParamStore::new();
        let cell = GruCell::new(&mut s, "gru", 3, 4, &mut rng);
        let h0 = s.add_uniform("h0", 2, 4, 1, &mut rng);
        let xs: Vec<Matrix> = (0..3).map(|_| random(2, 3, &mut rng)).collect();
        check(&s, |g, s| {
            let mut h = g.param(s, h0);
            for x in &xs {
                let x = g.constant(x.clone());
                h = cell.forward(g, s, x, h)?;
            }
            Ok(weigh(g, h, 5))
        });
    }

    #[derive(Clone, Copy, Debug)]
    enum Prim {
        MatMul,
        Add,
        Sub,
        Mul,
        AddRow,
        MulCol,
        Scale,
        Relu,
        Tanh,
        Sigmoid,
        Exp,
        Ln,
        Reshape,
        Gather,
        Rows,
        SliceCols,
        ConcatCols,
        LogSoftmax,
        Softmax,
        SumCols,
        Sum,
        Mean,
        PickCols,
        Entropy,
    }

    const PRIMS: [Prim; 24] = [
        Prim::MatMul,
        Prim::Add,
        Prim::Sub,
        Prim::Mul,
        Prim::AddRow,
        Prim::MulCol,
        Prim::Scale,
        Prim::Relu,
        Prim::Tanh,
        Prim::Sigmoid,
        Prim::Exp,
        Prim::Ln,
        Prim::Reshape,
        Prim::Gather,
        Prim::Rows,
        Prim::SliceCols,
        Prim::ConcatCols,
        Prim::LogSoftmax,
        Prim::Softmax,
        Prim::SumCols,
        Prim::Sum,
        Prim::Mean,
        Prim::PickCols,
        Prim::Entropy,
    ];

    fn primitive_graph(p: Prim, r: usize, c: usize, seed: u64) -> (ParamStore, impl Fn(&mut Graph, &ParamStore) -> Result<Var, GradError>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mut a_val = random(r, c, &mut rng);
        if matches!(p, Prim::Relu) {
            // keep entries away from the kink
            a_val = a_val.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
        }
        if matches!(p, Prim::Ln) {
            a_val = a_val.map(|x| x.abs() + 0.5);
        }
        let a = s.add("a", a_val);
        let b = s.add("b", random(r, c, &mut rng));
        let bt = s.add("bt", random(c, r + 1, &mut rng));
        let row = s.add("row", random(1, c, &mut rng));
        let col = s.add("col", random(r, 1, &mut rng));
        let gather: Vec<usize> = (0..r * c + 3).map(|_| rng.gen_range(0..r * c)).collect();
        let rows: Vec<usize> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
        let picks: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
        let build = move |g: &mut Graph, s: &ParamStore| -> Result<Var, GradError> {
            let va = g.param(s, a);
            let vb = g.param(s, b);
            let out = match p {
                Prim::MatMul => {
                    let w = g.param(s, bt);
                    g.matmul(va, w)?
                }
                Prim::Add => g.add(va, vb)?,
                Prim::Sub => g.sub(va, vb)?,
                Prim::Mul => g.mul(va, vb)?,
                Prim::AddRow => {
                    let w = g.param(s, row);
                    g.add_row(va, w)?
                }
                Prim::MulCol => {
                    let w = g.param(s, col);
                    g.mul_col(va, w)?
                }
                Prim::Scale => g.scale(va, -1.7),
                Prim::Relu => g.relu(va),
                Prim::Tanh => g.tanh(va),
                Prim::Sigmoid => g.sigmoid(va),
                Prim::Exp => g.exp(va),
                Prim::Ln => g.ln(va)?,
                Prim::Reshape => g.reshape(va, c, r)?,
                Prim::Gather => g.gather(va, Arc::from(gather.clone()), 1, gather.len())?,
                Prim::Rows => g.rows(va, Arc::from(rows.clone()))?,
                Prim::SliceCols => g.slice_cols(va, c / 2, c)?,
                Prim::ConcatCols => g.concat_cols(&[vb, va, vb])?,
                Prim::LogSoftmax => g.log_softmax(va)?,
                Prim::Softmax => g.softmax(va)?,
                Prim::SumCols => g.sum_cols(va),
                Prim::Sum => g.sum(va),
                Prim::Mean => g.mean(va),
                Prim::PickCols => g.pick_cols(va, Arc::from(picks.clone()))?,
                Prim::Entropy => {
                    let sm = g.softmax(va)?;
                    g.entropy(sm)?
                }
            };
            Ok(weigh(g, out, seed ^ 0xABCD))
        };
        (s, build)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn every_primitive_matches_finite_differences(
            which in 0usize..PRIMS.len(),
            r in 1usize..5,
            c in 2usize..6,
            seed in any::<u64>(),
        ) {
            let (s, build) = primitive_graph(PRIMS[which], r, c, seed);
            let rep = finite_difference_check(&s, H, 64, build).unwrap();
            prop_assert!(rep.max_rel_error < TOL, "{:?} {:?}", PRIMS[which], rep);
        }
    }

    #[test]
    fn each_primitive_once() {
        for (i, p) in PRIMS.iter().enumerate() {
            let (s, build) = primitive_graph(*p, 3, 4, i as u64);
            let rep = finite_difference_check(&s, H, 64, build).unwrap();
            assert!(rep.max_rel_error < TOL, "{p:?} {rep:?}");
        }
    }
}
