//! Differentiable operations on tape variables.
//!
//! Forward values are computed eagerly; each operation records a closure
//! that maps the output gradient to parent gradients. All reductions run in
//! a fixed order, so results are deterministic for fixed inputs.

use crate::error::{Result, SptError};
use crate::numcore::array::{dims2, gemm, Array};
use crate::numcore::real::Real;
use crate::numcore::tape::Var;

fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Huber penalty with unit knee, as used by the training objective.
pub fn huber<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    if x.abs() < T::ONE {
        half * x * x
    } else {
        x.abs() - half
    }
}

fn clamp_unit<T: Real>(x: T) -> T {
    x.maximum(-T::ONE).minimum(T::ONE)
}

impl<T: Real> Var<T> {
    fn check_same_tape(&self, other: &Var<T>) {
        debug_assert!(
            self.tape.same_tape(&other.tape),
            "operands recorded on different tapes"
        );
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(other);
        let out = self.value().zip(&other.value(), "add", |a, b| a + b)?;
        self.tape.push(
            "add",
            out,
            vec![self.id, other.id],
            Box::new(move |g| vec![g.clone(), g.clone()]),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(other);
        let out = self.value().zip(&other.value(), "sub", |a, b| a - b)?;
        self.tape.push(
            "sub",
            out,
            vec![self.id, other.id],
            Box::new(move |g| vec![g.clone(), g.map(|x| -x)]),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(other);
        let a = self.value();
        let b = other.value();
        let out = a.zip(&b, "mul", |x, y| x * y)?;
        self.tape.push(
            "mul",
            out,
            vec![self.id, other.id],
            Box::new(move |g| {
                vec![
                    g.zip(&b, "mul", |gv, bv| gv * bv).expect("shape checked"),
                    g.zip(&a, "mul", |gv, av| gv * av).expect("shape checked"),
                ]
            }),
        )
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        let out = self.value().map(|x| x * c);
        self.tape.push(
            "scale",
            out,
            vec![self.id],
            Box::new(move |g| vec![g.map(|x| x * c)]),
        )
    }

    /// Adds a length-`C` bias row to every row of an `R x C` matrix.
    pub fn add_bias(&self, bias: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(bias);
        let x = self.value();
        let b = bias.value();
        let (rows, cols) = dims2(&x, "add_bias")?;
        if b.len() != cols {
            return Err(SptError::ShapeMismatch {
                op: "add_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = x.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += b.data()[c];
            }
        }
        let out = Array::matrix(rows, cols, out)?;
        let bshape = b.shape().to_vec();
        self.tape.push(
            "add_bias",
            out,
            vec![self.id, bias.id],
            Box::new(move |g| {
                let gd = g.data();
                let mut db = vec![T::ZERO; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += gd[r * cols + c];
                    }
                }
                vec![
                    g.clone(),
                    Array::from_vec(bshape.clone(), db).expect("bias grad shape"),
                ]
            }),
        )
    }

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(other);
        let a = self.value();
        let b = other.value();
        let out = gemm(&a, false, &b, false)?;
        self.tape.push(
            "matmul",
            out,
            vec![self.id, other.id],
            Box::new(move |g| {
                let da = gemm(g, false, &b, true).expect("matmul backward dA");
                let db = gemm(&a, true, g, false).expect("matmul backward dB");
                vec![da, db]
            }),
        )
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(other);
        let a = self.value();
        let b = other.value();
        let out = gemm(&a, false, &b, true)?;
        self.tape.push(
            "matmul_nt",
            out,
            vec![self.id, other.id],
            Box::new(move |g| {
                let da = gemm(g, false, &b, false).expect("matmul_nt backward dA");
                let db = gemm(g, true, &a, false).expect("matmul_nt backward dB");
                vec![da, db]
            }),
        )
    }

    pub fn silu(&self) -> Result<Var<T>> {
        let x = self.value();
        let out = x.map(|v| v * sigmoid(v));
        self.tape.push(
            "silu",
            out,
            vec![self.id],
            Box::new(move |g| {
                vec![g
                    .zip(&x, "silu", |gv, xv| {
                        let s = sigmoid(xv);
                        gv * (s * (T::ONE + xv * (T::ONE - s)))
                    })
                    .expect("shape checked")]
            }),
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let x = self.value();
        let out = x.map(|v| v.maximum(T::ZERO));
        self.tape.push(
            "relu",
            out,
            vec![self.id],
            Box::new(move |g| {
                vec![g
                    .zip(&x, "relu", |gv, xv| if xv > T::ZERO { gv } else { T::ZERO })
                    .expect("shape checked")]
            }),
        )
    }

    pub fn sum_all(&self) -> Result<Var<T>> {
        let x = self.value();
        let total: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.tape.push(
            "sum_all",
            Array::scalar(total),
            vec![self.id],
            Box::new(move |g| vec![Array::full(shape.clone(), g.scalar_value())]),
        )
    }

    /// Row-wise layer normalization over the innermost dimension with
    /// learnable gain and shift.
    pub fn layernorm(&self, gain: &Var<T>, shift: &Var<T>, eps: f64) -> Result<Var<T>> {
        self.check_same_tape(gain);
        self.check_same_tape(shift);
        let x = self.value();
        let d = x.last_dim();
        let rows = x.nrows();
        let gv = gain.value();
        let sv = shift.value();
        if gv.len() != d || sv.len() != d {
            return Err(SptError::ShapeMismatch {
                op: "layernorm",
                left: x.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let eps = T::from_f64(eps);
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut out = vec![T::ZERO; x.len()];
        let mut xhat = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; rows];
        let xd = x.data();
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean: T = row.iter().copied().sum::<T>() * inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let s = T::ONE / (var + eps).sqrt();
            inv_std[r] = s;
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gv.data()[c] + sv.data()[c];
            }
        }
        let out = Array::from_vec(x.shape().to_vec(), out)?;
        let xhat = Array::from_vec(x.shape().to_vec(), xhat)?;
        let gshape = gv.shape().to_vec();
        self.tape.push(
            "layernorm",
            out,
            vec![self.id, gain.id, shift.id],
            Box::new(move |g| {
                let gd = g.data();
                let hd = xhat.data();
                let mut dx = vec![T::ZERO; gd.len()];
                let mut dgain = vec![T::ZERO; d];
                let mut dshift = vec![T::ZERO; d];
                for r in 0..rows {
                    let base = r * d;
                    let mut mean_dh = T::ZERO;
                    let mut mean_dh_h = T::ZERO;
                    for c in 0..d {
                        let dy = gd[base + c];
                        let h = hd[base + c];
                        dgain[c] += dy * h;
                        dshift[c] += dy;
                        let dh = dy * gv.data()[c];
                        mean_dh += dh;
                        mean_dh_h += dh * h;
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    let s = inv_std[r];
                    for c in 0..d {
                        let dh = gd[base + c] * gv.data()[c];
                        dx[base + c] = s * (dh - mean_dh - hd[base + c] * mean_dh_h);
                    }
                }
                vec![
                    Array::from_vec(xhat.shape().to_vec(), dx).expect("ln dx shape"),
                    Array::from_vec(gshape.clone(), dgain).expect("ln dgain shape"),
                    Array::from_vec(gshape.clone(), dshift).expect("ln dshift shape"),
                ]
            }),
        )
    }

    /// Root-mean-square normalization of each row, without a learnable gain.
    pub fn rmsnorm(&self, eps: f64) -> Result<Var<T>> {
        self.rmsnorm_segments(1, eps)
    }

    /// RMS-normalizes `segments` equal contiguous slices of every row
    /// independently. With rows holding concatenated attention heads this
    /// normalizes each per-head row vector in one pass.
    pub fn rmsnorm_segments(&self, segments: usize, eps: f64) -> Result<Var<T>> {
        let x = self.value();
        let d = x.last_dim();
        if segments == 0 || d % segments != 0 {
            return Err(SptError::invalid(format!(
                "rmsnorm: {segments} segments do not divide row width {d}"
            )));
        }
        let w = d / segments;
        let rows = x.nrows();
        let eps = T::from_f64(eps);
        let inv_w = T::ONE / T::from_f64(w as f64);
        let nseg = rows * segments;
        let mut out = vec![T::ZERO; x.len()];
        let mut inv_rms = vec![T::ZERO; nseg];
        let xd = x.data();
        for s in 0..nseg {
            let base = s * w;
            let seg = &xd[base..base + w];
            let ms: T = seg.iter().map(|&v| v * v).sum::<T>() * inv_w;
            let u = T::ONE / (ms + eps).sqrt();
            inv_rms[s] = u;
            for c in 0..w {
                out[base + c] = seg[c] * u;
            }
        }
        let out = Array::from_vec(x.shape().to_vec(), out)?;
        self.tape.push(
            "rmsnorm",
            out,
            vec![self.id],
            Box::new(move |g| {
                let gd = g.data();
                let xv = x.data();
                let mut dx = vec![T::ZERO; gd.len()];
                for s in 0..nseg {
                    let base = s * w;
                    let u = inv_rms[s];
                    let mut dot = T::ZERO;
                    for c in 0..w {
                        dot += gd[base + c] * xv[base + c];
                    }
                    let k = u * u * u * inv_w * dot;
                    for c in 0..w {
                        dx[base + c] = u * gd[base + c] - k * xv[base + c];
                    }
                }
                vec![Array::from_vec(x.shape().to_vec(), dx).expect("rms dx shape")]
            }),
        )
    }

    /// Numerically-stable softmax over each row.
    pub fn softmax_rows(&self) -> Result<Var<T>> {
        let x = self.value();
        let d = x.last_dim();
        let rows = x.nrows();
        let mut out = vec![T::ZERO; x.len()];
        let xd = x.data();
        for r in 0..rows {
            let base = r * d;
            let row = &xd[base..base + d];
            let mut max = row[0];
            for &v in row {
                max = max.maximum(v);
            }
            let mut sum = T::ZERO;
            for c in 0..d {
                let e = (row[c] - max).exp();
                out[base + c] = e;
                sum += e;
            }
            let inv = T::ONE / sum;
            for c in 0..d {
                out[base + c] *= inv;
            }
        }
        let out = Array::from_vec(x.shape().to_vec(), out)?;
        let y = out.clone();
        self.tape.push(
            "softmax_rows",
            out,
            vec![self.id],
            Box::new(move |g| {
                let gd = g.data();
                let yd = y.data();
                let mut dx = vec![T::ZERO; gd.len()];
                for r in 0..rows {
                    let base = r * d;
                    let mut dot = T::ZERO;
                    for c in 0..d {
                        dot += gd[base + c] * yd[base + c];
                    }
                    for c in 0..d {
                        dx[base + c] = yd[base + c] * (gd[base + c] - dot);
                    }
                }
                vec![Array::from_vec(y.shape().to_vec(), dx).expect("softmax dx shape")]
            }),
        )
    }

    /// Column-wise maximum over rows; ties route the gradient to the lowest
    /// row index.
    pub fn reduce_max_rows(&self) -> Result<Var<T>> {
        let x = self.value();
        let (rows, cols) = dims2(&x, "reduce_max_rows")?;
        if rows == 0 {
            return Err(SptError::invalid("reduce over an empty point axis"));
        }
        let xd = x.data();
        let mut out = vec![T::ZERO; cols];
        let mut arg = vec![0usize; cols];
        for c in 0..cols {
            let mut best = xd[c];
            let mut best_r = 0usize;
            for r in 1..rows {
                let v = xd[r * cols + c];
                if v > best {
                    best = v;
                    best_r = r;
                }
            }
            out[c] = best;
            arg[c] = best_r;
        }
        let out = Array::matrix(1, cols, out)?;
        self.tape.push(
            "reduce_max_rows",
            out,
            vec![self.id],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![T::ZERO; rows * cols];
                for c in 0..cols {
                    dx[arg[c] * cols + c] = gd[c];
                }
                vec![Array::matrix(rows, cols, dx).expect("max dx shape")]
            }),
        )
    }

    /// Column-wise mean over rows.
    pub fn reduce_mean_rows(&self) -> Result<Var<T>> {
        let x = self.value();
        let (rows, cols) = dims2(&x, "reduce_mean_rows")?;
        if rows == 0 {
            return Err(SptError::invalid("reduce over an empty point axis"));
        }
        let inv = T::ONE / T::from_f64(rows as f64);
        let xd = x.data();
        let mut out = vec![T::ZERO; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += xd[r * cols + c];
            }
        }
        for v in out.iter_mut() {
            *v *= inv;
        }
        let out = Array::matrix(1, cols, out)?;
        self.tape.push(
            "reduce_mean_rows",
            out,
            vec![self.id],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![T::ZERO; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] = gd[c] * inv;
                    }
                }
                vec![Array::matrix(rows, cols, dx).expect("mean dx shape")]
            }),
        )
    }

    /// Keeps columns `c0..c1`.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Var<T>> {
        let x = self.value();
        let (rows, cols) = dims2(&x, "slice_cols")?;
        if c0 >= c1 || c1 > cols {
            return Err(SptError::invalid(format!(
                "slice_cols range {c0}..{c1} out of bounds for width {cols}"
            )));
        }
        let w = c1 - c0;
        let xd = x.data();
        let mut out = vec![T::ZERO; rows * w];
        for r in 0..rows {
            out[r * w..(r + 1) * w].copy_from_slice(&xd[r * cols + c0..r * cols + c1]);
        }
        let out = Array::matrix(rows, w, out)?;
        self.tape.push(
            "slice_cols",
            out,
            vec![self.id],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![T::ZERO; rows * cols];
                for r in 0..rows {
                    dx[r * cols + c0..r * cols + c1].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                vec![Array::matrix(rows, cols, dx).expect("slice_cols dx shape")]
            }),
        )
    }

    /// Keeps `len` rows starting at `start`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<T>> {
        let x = self.value();
        let (rows, cols) = dims2(&x, "slice_rows")?;
        if start + len > rows || len == 0 {
            return Err(SptError::invalid(format!(
                "slice_rows range {start}..{} out of bounds for {rows} rows",
                start + len
            )));
        }
        let out = Array::matrix(
            len,
            cols,
            x.data()[start * cols..(start + len) * cols].to_vec(),
        )?;
        self.tape.push(
            "slice_rows",
            out,
            vec![self.id],
            Box::new(move |g| {
                let mut dx = vec![T::ZERO; rows * cols];
                dx[start * cols..(start + len) * cols].copy_from_slice(g.data());
                vec![Array::matrix(rows, cols, dx).expect("slice_rows dx shape")]
            }),
        )
    }

    /// Mean Huber loss between predictions (`R x 1` or length `R`) and
    /// fixed targets.
    pub fn huber_mean(&self, targets: &Array<T>) -> Result<Var<T>> {
        let p = self.value();
        let n = p.len();
        if n == 0 || targets.len() != n {
            return Err(SptError::ShapeMismatch {
                op: "huber_mean",
                left: p.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        let inv_n = T::ONE / T::from_f64(n as f64);
        let mut total = T::ZERO;
        for (pv, tv) in p.data().iter().zip(targets.data().iter()) {
            total += huber(*tv - *pv);
        }
        total *= inv_n;
        let t = targets.clone();
        let pshape = p.shape().to_vec();
        self.tape.push(
            "huber_mean",
            Array::scalar(total),
            vec![self.id],
            Box::new(move |g| {
                let go = g.scalar_value();
                let dx: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data().iter())
                    .map(|(&pv, &tv)| go * inv_n * clamp_unit(pv - tv))
                    .collect();
                vec![Array::from_vec(pshape.clone(), dx).expect("huber dx shape")]
            }),
        )
    }

    /// Width-3 1-D convolution along the point axis with replicated edge
    /// padding. `weight` has shape `[out_ch, in_ch, 3]`, `bias` length
    /// `out_ch`.
    pub fn conv1d3(&self, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        self.check_same_tape(weight);
        self.check_same_tape(bias);
        let x = self.value();
        let w = weight.value();
        let b = bias.value();
        let (n, ci) = dims2(&x, "conv1d3")?;
        let (co, wci, k) = match w.shape() {
            [co, wci, k] => (*co, *wci, *k),
            other => {
                return Err(SptError::ShapeMismatch {
                    op: "conv1d3",
                    left: other.to_vec(),
                    right: x.shape().to_vec(),
                })
            }
        };
        if wci != ci || k != 3 || b.len() != co {
            return Err(SptError::ShapeMismatch {
                op: "conv1d3",
                left: w.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let clamp_row = move |i: isize| -> usize { i.clamp(0, n as isize - 1) as usize };
        let xd = x.data();
        let wd = w.data();
        let mut out = vec![T::ZERO; n * co];
        for row in 0..n {
            for tap in 0..3usize {
                let src = clamp_row(row as isize + tap as isize - 1);
                let xrow = &xd[src * ci..(src + 1) * ci];
                for o in 0..co {
                    let wrow = &wd[o * ci * 3 + tap..];
                    let mut acc = T::ZERO;
                    for c in 0..ci {
                        acc += wrow[c * 3] * xrow[c];
                    }
                    out[row * co + o] += acc;
                }
            }
            for o in 0..co {
                out[row * co + o] += b.data()[o];
            }
        }
        let out = Array::matrix(n, co, out)?;
        let wshape = w.shape().to_vec();
        let bshape = b.shape().to_vec();
        self.tape.push(
            "conv1d3",
            out,
            vec![self.id, weight.id, bias.id],
            Box::new(move |g| {
                let gd = g.data();
                let xd = x.data();
                let wd = w.data();
                let mut dx = vec![T::ZERO; n * ci];
                let mut dw = vec![T::ZERO; co * ci * 3];
                let mut db = vec![T::ZERO; co];
                for row in 0..n {
                    let grow = &gd[row * co..(row + 1) * co];
                    for o in 0..co {
                        db[o] += grow[o];
                    }
                    for tap in 0..3usize {
                        let src = clamp_row(row as isize + tap as isize - 1);
                        for o in 0..co {
                            let go = grow[o];
                            for c in 0..ci {
                                dw[o * ci * 3 + c * 3 + tap] += go * xd[src * ci + c];
                                dx[src * ci + c] += go * wd[o * ci * 3 + c * 3 + tap];
                            }
                        }
                    }
                }
                vec![
                    Array::matrix(n, ci, dx).expect("conv dx shape"),
                    Array::from_vec(wshape.clone(), dw).expect("conv dw shape"),
                    Array::from_vec(bshape.clone(), db).expect("conv db shape"),
                ]
            }),
        )
    }

    /// Batch normalization over the row axis (points, and samples when rows
    /// of several samples are packed together).
    ///
    /// In training mode the batch statistics are used and fresh running
    /// statistics are returned for the caller to commit after the step; in
    /// evaluation mode the provided running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &self,
        gain: &Var<T>,
        shift: &Var<T>,
        running_mean: &Array<T>,
        running_var: &Array<T>,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var<T>, Option<(Array<T>, Array<T>)>)> {
        self.check_same_tape(gain);
        self.check_same_tape(shift);
        let x = self.value();
        let (rows, cols) = dims2(&x, "batchnorm")?;
        let gv = gain.value();
        let sv = shift.value();
        if gv.len() != cols || sv.len() != cols || running_mean.len() != cols {
            return Err(SptError::ShapeMismatch {
                op: "batchnorm",
                left: x.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let epst = T::from_f64(eps);
        let inv_r = T::ONE / T::from_f64(rows as f64);
        let xd = x.data();

        let (mean, var) = if training {
            let mut mean = vec![T::ZERO; cols];
            let mut var = vec![T::ZERO; cols];
            for r in 0..rows {
                for c in 0..cols {
                    mean[c] += xd[r * cols + c];
                }
            }
            for m in mean.iter_mut() {
                *m *= inv_r;
            }
            for r in 0..rows {
                for c in 0..cols {
                    let d = xd[r * cols + c] - mean[c];
                    var[c] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_r;
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + epst).sqrt()).collect();
        let mut out = vec![T::ZERO; rows * cols];
        let mut xhat = vec![T::ZERO; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let h = (xd[r * cols + c] - mean[c]) * inv_std[c];
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * gv.data()[c] + sv.data()[c];
            }
        }
        let updates = if training {
            let m = T::from_f64(momentum);
            let keep = T::ONE - m;
            let new_mean: Vec<T> = running_mean
                .data()
                .iter()
                .zip(mean.iter())
                .map(|(&o, &b)| keep * o + m * b)
                .collect();
            let new_var: Vec<T> = running_var
                .data()
                .iter()
                .zip(var.iter())
                .map(|(&o, &b)| keep * o + m * b)
                .collect();
            Some((
                Array::from_vec(running_mean.shape().to_vec(), new_mean)?,
                Array::from_vec(running_var.shape().to_vec(), new_var)?,
            ))
        } else {
            None
        };

        let out = Array::matrix(rows, cols, out)?;
        let xhat = Array::matrix(rows, cols, xhat)?;
        let gshape = gv.shape().to_vec();
        let var_out = self.tape.push(
            "batchnorm",
            out,
            vec![self.id, gain.id, shift.id],
            Box::new(move |g| {
                let gd = g.data();
                let hd = xhat.data();
                let mut dgain = vec![T::ZERO; cols];
                let mut dshift = vec![T::ZERO; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dgain[c] += gd[r * cols + c] * hd[r * cols + c];
                        dshift[c] += gd[r * cols + c];
                    }
                }
                let mut dx = vec![T::ZERO; rows * cols];
                if training {
                    // Gradients flow through the batch statistics.
                    for c in 0..cols {
                        let mean_dy = dshift[c] * inv_r;
                        let mean_dy_h = dgain[c] * inv_r;
                        let a = gv.data()[c] * inv_std[c];
                        for r in 0..rows {
                            dx[r * cols + c] = a
                                * (gd[r * cols + c] - mean_dy - hd[r * cols + c] * mean_dy_h);
                        }
                    }
                } else {
                    for c in 0..cols {
                        let a = gv.data()[c] * inv_std[c];
                        for r in 0..rows {
                            dx[r * cols + c] = a * gd[r * cols + c];
                        }
                    }
                }
                vec![
                    Array::matrix(rows, cols, dx).expect("bn dx shape"),
                    Array::from_vec(gshape.clone(), dgain).expect("bn dgain shape"),
                    Array::from_vec(gshape.clone(), dshift).expect("bn dshift shape"),
                ]
            }),
        )?;
        Ok((var_out, updates))
    }
}

/// Column-concatenates matrices with equal row counts.
pub fn concat_cols<T: Real>(parts: &[Var<T>]) -> Result<Var<T>> {
    if parts.is_empty() {
        return Err(SptError::invalid("concat_cols of zero parts"));
    }
    let values: Vec<Array<T>> = parts.iter().map(|p| p.value()).collect();
    let (rows, _) = dims2(&values[0], "concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for v in &values {
        let (r, c) = dims2(v, "concat_cols")?;
        if r != rows {
            return Err(SptError::ShapeMismatch {
                op: "concat_cols",
                left: values[0].shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = vec![T::ZERO; rows * total];
    for r in 0..rows {
        let mut off = 0usize;
        for (v, &w) in values.iter().zip(widths.iter()) {
            out[r * total + off..r * total + off + w].copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    let out = Array::matrix(rows, total, out)?;
    let tape = parts[0].tape.clone();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push(
        "concat_cols",
        out,
        ids,
        Box::new(move |g| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(widths.len());
            let mut off = 0usize;
            for &w in &widths {
                let mut dv = vec![T::ZERO; rows * w];
                for r in 0..rows {
                    dv[r * w..(r + 1) * w]
                        .copy_from_slice(&gd[r * total + off..r * total + off + w]);
                }
                grads.push(Array::matrix(rows, w, dv).expect("concat_cols grad shape"));
                off += w;
            }
            grads
        }),
    )
}

/// Row-concatenates matrices with equal column counts.
pub fn concat_rows<T: Real>(parts: &[Var<T>]) -> Result<Var<T>> {
    if parts.is_empty() {
        return Err(SptError::invalid("concat_rows of zero parts"));
    }
    let values: Vec<Array<T>> = parts.iter().map(|p| p.value()).collect();
    let (_, cols) = dims2(&values[0], "concat_rows")?;
    let mut heights = Vec::with_capacity(parts.len());
    for v in &values {
        let (r, c) = dims2(v, "concat_rows")?;
        if c != cols {
            return Err(SptError::ShapeMismatch {
                op: "concat_rows",
                left: values[0].shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        heights.push(r);
    }
    let total: usize = heights.iter().sum();
    let mut out = Vec::with_capacity(total * cols);
    for v in &values {
        out.extend_from_slice(v.data());
    }
    let out = Array::matrix(total, cols, out)?;
    let tape = parts[0].tape.clone();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    tape.push(
        "concat_rows",
        out,
        ids,
        Box::new(move |g| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(heights.len());
            let mut off = 0usize;
            for &h in &heights {
                grads.push(
                    Array::matrix(h, cols, gd[off * cols..(off + h) * cols].to_vec())
                        .expect("concat_rows grad shape"),
                );
                off += h;
            }
            grads
        }),
    )
}
