//! Minimal dense-tensor numeric core with reverse-mode automatic
//! differentiation.
//!
//! The matrix product is backed by `matrixmultiply`; everything recorded on
//! the tape (normalizations, activations, attention plumbing, the Huber
//! objective) is implemented here together with its backward rule.

mod adam;
mod array;
mod ops;
mod real;
mod tape;

pub use adam::{AdamState, LrSchedule};
pub use array::{gemm, Array};
pub use ops::{concat_cols, concat_rows, huber};
pub use real::Real;
pub use tape::{backward, Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;

    fn t64() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn matmul_gradient_of_sum_is_ones_times_bt() {
        let tape = t64();
        let a = tape.leaf(Array::matrix(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Array::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = a.matmul(&b).unwrap();
        let loss = c.sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        // d sum(A B) / dA = ones * B^T: row r, col k -> sum_j B[k][j]
        let da = grads.get(&a).unwrap();
        for r in 0..2 {
            for k in 0..3 {
                let expect: f64 = (0..2).map(|j| b.value().data()[k * 2 + j]).sum();
                assert!((da.data()[r * 3 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_sum_of_squares() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let loss = x.mul(&x).unwrap().sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(backward(&x).is_err());
    }

    #[test]
    fn non_participating_leaf_has_no_gradient() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(Array::matrix(1, 2, vec![5.0, 5.0]).unwrap());
        let loss = x.sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&x).is_some());
        assert!(grads.get(&unused).is_none());
    }

    #[test]
    fn layernorm_examples() {
        let tape = t64();
        let gain = tape.leaf(Array::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
        let shift = tape.leaf(Array::zeros(vec![1, 3]));
        let x = tape.leaf(Array::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
        let y = x.layernorm(&gain, &shift, 1e-5).unwrap();
        for &v in y.value().data() {
            assert!(v.abs() < 1e-6);
        }

        let gain2 = tape.leaf(Array::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let shift2 = tape.leaf(Array::zeros(vec![1, 2]));
        let x2 = tape.leaf(Array::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        let y2 = x2.layernorm(&gain2, &shift2, 1e-12).unwrap();
        assert!((y2.value().data()[0] + 1.0).abs() < 1e-5);
        assert!((y2.value().data()[1] - 1.0).abs() < 1e-5);

        // gain 0, shift 5 pins the output at 5 regardless of input
        let gain3 = tape.leaf(Array::zeros(vec![1, 2]));
        let shift3 = tape.leaf(Array::matrix(1, 2, vec![5.0, 5.0]).unwrap());
        let x3 = tape.leaf(Array::matrix(1, 2, vec![-7.0, 11.0]).unwrap());
        let y3 = x3.layernorm(&gain3, &shift3, 1e-5).unwrap();
        assert_eq!(y3.value().data(), &[5.0, 5.0]);
    }

    #[test]
    fn rmsnorm_examples() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let y = x.rmsnorm(1e-12).unwrap();
        assert!((y.value().data()[0] - 0.84852813742).abs() < 1e-9);
        assert!((y.value().data()[1] - 1.13137084990).abs() < 1e-9);

        // zero row stays zero thanks to the eps guard
        let z = tape.leaf(Array::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap());
        assert_eq!(z.rmsnorm(1e-6).unwrap().value().data(), &[0.0, 0.0, 0.0]);

        // scale invariance as eps -> 0
        let a = tape.leaf(Array::matrix(1, 3, vec![0.2, -1.0, 0.7]).unwrap());
        let b = tape.leaf(Array::matrix(1, 3, vec![20.0, -100.0, 70.0]).unwrap());
        let ya = a.rmsnorm(1e-15).unwrap().value();
        let yb = b.rmsnorm(1e-15).unwrap().value();
        for (va, vb) in ya.data().iter().zip(yb.data().iter()) {
            assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn silu_examples() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 3, vec![0.0, 1.0, 50.0]).unwrap());
        let y = x.silu().unwrap().value();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.7310585786).abs() < 1e-9);
        assert!((y.data()[2] - 50.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert_eq!(x.softmax_rows().unwrap().value().data(), &[0.5, 0.5]);

        let big = tape.leaf(Array::matrix(1, 2, vec![1000.0, 1000.0]).unwrap());
        assert_eq!(big.softmax_rows().unwrap().value().data(), &[0.5, 0.5]);

        let l3 = tape.leaf(Array::matrix(1, 2, vec![0.0, 3.0f64.ln()]).unwrap());
        let y = l3.softmax_rows().unwrap().value();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn huber_examples() {
        assert!((huber(0.5f64) - 0.125).abs() < 1e-12);
        assert!((huber(-2.0f64) - 1.5).abs() < 1e-12);
        // continuity at the knee
        assert!((huber(1.0f64) - 0.5).abs() < 1e-12);
        assert!((huber(1.0f64 - 1e-9) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn huber_mean_gradient_is_clipped_error() {
        let tape = t64();
        let preds = tape.leaf(Array::matrix(3, 1, vec![0.0, 5.0, 2.2]).unwrap());
        let targets = Array::matrix(3, 1, vec![0.5, 1.0, 2.0]).unwrap();
        let loss = preds.huber_mean(&targets).unwrap();
        let grads = backward(&loss).unwrap();
        let g = grads.get(&preds).unwrap();
        let expect = [(-0.5f64).clamp(-1.0, 1.0), 1.0, 0.2];
        for (gv, ev) in g.data().iter().zip(expect.iter()) {
            assert!((gv - ev / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_examples() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
        assert_eq!(x.reduce_max_rows().unwrap().value().data(), &[3.0, 5.0]);
        assert_eq!(x.reduce_mean_rows().unwrap().value().data(), &[2.0, 3.5]);

        // N = 1 is the identity for both
        let one = tape.leaf(Array::matrix(1, 2, vec![4.0, -1.0]).unwrap());
        assert_eq!(one.reduce_max_rows().unwrap().value().data(), &[4.0, -1.0]);
        assert_eq!(one.reduce_mean_rows().unwrap().value().data(), &[4.0, -1.0]);
    }

    #[test]
    fn reduce_max_tie_routes_to_lowest_row() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(3, 1, vec![7.0, 7.0, 1.0]).unwrap());
        let y = x.reduce_max_rows().unwrap();
        let loss = y.sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let tape = t64();
        let a = tape.leaf(Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Array::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let cat = concat_cols(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = cat.slice_cols(2, 3).unwrap();
        assert_eq!(back.value().data(), b.value().data());

        let rows = concat_rows(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(rows.shape(), vec![4, 2]);
        let mid = rows.slice_rows(1, 2).unwrap();
        assert_eq!(mid.value().data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn strict_tape_rejects_non_finite() {
        let tape = t64();
        let x = tape.leaf(Array::matrix(1, 1, vec![1e200]).unwrap());
        let doubled = x.add(&x).unwrap(); // still finite
        assert!(doubled.mul(&doubled).is_err()); // overflows to inf
    }

    /// Central-difference check of every primitive used by the model.
    #[test]
    fn finite_difference_all_primitives() {
        let cases: Vec<(&str, Box<dyn Fn(&Tape<f64>, &Var<f64>) -> Var<f64>>)> = vec![
            ("silu", Box::new(|_, x| x.silu().unwrap())),
            ("relu_shift", Box::new(|_, x| x.scale(1.0).unwrap().relu().unwrap())),
            ("rmsnorm", Box::new(|_, x| x.rmsnorm(1e-6).unwrap())),
            (
                "rmsnorm_seg2",
                Box::new(|_, x| x.rmsnorm_segments(2, 1e-6).unwrap()),
            ),
            ("softmax", Box::new(|_, x| x.softmax_rows().unwrap())),
            (
                "layernorm",
                Box::new(|t, x| {
                    let g = t.leaf(Array::matrix(1, 4, vec![1.1, 0.9, 1.3, 0.8]).unwrap());
                    let s = t.leaf(Array::matrix(1, 4, vec![0.1, -0.2, 0.0, 0.3]).unwrap());
                    x.layernorm(&g, &s, 1e-5).unwrap()
                }),
            ),
            (
                "matmul",
                Box::new(|t, x| {
                    let w =
                        t.leaf(Array::matrix(4, 2, vec![0.3, -0.7, 1.2, 0.4, -0.5, 0.9, 0.2, 0.8]).unwrap());
                    x.matmul(&w).unwrap()
                }),
            ),
            (
                "matmul_nt",
                Box::new(|t, x| {
                    let w =
                        t.leaf(Array::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap());
                    x.matmul_nt(&w).unwrap()
                }),
            ),
            ("max_rows", Box::new(|_, x| x.reduce_max_rows().unwrap())),
            ("mean_rows", Box::new(|_, x| x.reduce_mean_rows().unwrap())),
            (
                "conv1d3",
                Box::new(|t, x| {
                    let w = t.leaf(
                        Array::from_vec(vec![3, 4, 3], (0..36).map(|i| 0.05 * (i as f64) - 0.8).collect())
                            .unwrap(),
                    );
                    let b = t.leaf(Array::matrix(1, 3, vec![0.1, -0.1, 0.2]).unwrap());
                    x.conv1d3(&w, &b).unwrap()
                }),
            ),
        ];
        let base = [0.9, -1.4, 0.3, 2.2, -0.6, 0.8, 1.7, -0.2];
        for (name, f) in cases {
            let make_loss = |data: &[f64]| -> (Tape<f64>, Var<f64>, Var<f64>) {
                let tape = Tape::new();
                let x = tape.leaf(Array::matrix(2, 4, data.to_vec()).unwrap());
                let y = f(&tape, &x);
                // A fixed non-uniform mask keeps the loss sensitive even for
                // outputs with invariant norms (rmsnorm, softmax, batchnorm).
                let yv = y.value();
                let mask = tape.leaf(Array::from_vec(
                    yv.shape().to_vec(),
                    (0..yv.len()).map(|i| 0.3 + 0.61 * i as f64).collect(),
                ).unwrap());
                let ym = y.mul(&mask).unwrap();
                let loss = ym.mul(&ym).unwrap().sum_all().unwrap();
                (tape, x, loss)
            };
            let (_t, x, loss) = make_loss(&base);
            let grads = backward(&loss).unwrap();
            let g = grads.get(&x).unwrap().data().to_vec();
            for i in 0..base.len() {
                let h = 1e-6 * (1.0 + base[i].abs());
                let mut plus = base;
                plus[i] += h;
                let mut minus = base;
                minus[i] -= h;
                let (_tp, _xp, lp) = make_loss(&plus);
                let (_tm, _xm, lm) = make_loss(&minus);
                let fd = (lp.value().scalar_value() - lm.value().scalar_value()) / (2.0 * h);
                let rel = (g[i] - fd).abs() / (1e-8 + g[i].abs().max(fd.abs()));
                assert!(
                    rel < 1e-4,
                    "{name}: grad[{i}] ad={} fd={} rel={rel}",
                    g[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn batchnorm_finite_difference_training_mode() {
        let base: Vec<f64> = vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.7, 0.9, 1.1, -0.3, 0.4, 0.6, -1.2];
        let make_loss = |data: &[f64]| {
            let tape = Tape::new();
            let x = tape.leaf(Array::matrix(4, 3, data.to_vec()).unwrap());
            let g = tape.leaf(Array::matrix(1, 3, vec![1.2, 0.7, 1.0]).unwrap());
            let s = tape.leaf(Array::matrix(1, 3, vec![0.1, 0.0, -0.2]).unwrap());
            let rm = Array::zeros(vec![1, 3]);
            let rv = Array::full(vec![1, 3], 1.0);
            let (y, _updates) = x.batchnorm(&g, &s, &rm, &rv, true, 0.1, 1e-5).unwrap();
            let yv = y.value();
            let mask = tape.leaf(
                Array::from_vec(
                    yv.shape().to_vec(),
                    (0..yv.len()).map(|i| 0.3 + 0.61 * i as f64).collect(),
                )
                .unwrap(),
            );
            let ym = y.mul(&mask).unwrap();
            let loss = ym.mul(&ym).unwrap().sum_all().unwrap();
            (tape, x, loss)
        };
        let (_t, x, loss) = make_loss(&base);
        let grads = backward(&loss).unwrap();
        let g = grads.get(&x).unwrap().data().to_vec();
        for i in 0..base.len() {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let (_tp, _xp, lp) = make_loss(&plus);
            let (_tm, _xm, lm) = make_loss(&minus);
            let fd = (lp.value().scalar_value() - lm.value().scalar_value()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / (1e-8 + g[i].abs().max(fd.abs()));
            assert!(rel < 1e-4, "bn grad[{i}] ad={} fd={} rel={rel}", g[i], fd);
        }
    }
}
