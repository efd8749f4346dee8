//! Dense row-major array with cheap clones.
//!
//! Data lives behind an `Arc`, so cloning an `Array` (to stash inputs in a
//! tape node or to hand a parameter to a forward pass) never copies the
//! buffer. Mutation goes through `data_mut`, which copies only when shared.

use std::sync::Arc;

use crate::error::{Result, SptError};
use crate::numcore::real::Real;

#[derive(Clone, Debug)]
pub struct Array<T: Real> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Array<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SptError::invalid(format!(
                "array data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![T::ZERO; n]),
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![v; n]),
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    /// 2-D constructor, row-major.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Width of the innermost dimension (1 for rank-0/empty shapes).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when the array is viewed as `(len / last_dim, last_dim)`.
    pub fn nrows(&self) -> usize {
        let d = self.last_dim();
        if d == 0 {
            0
        } else {
            self.len() / d
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::<Vec<T>>::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn scalar_value(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data: Vec<T> = self.data.iter().map(|&x| f(x)).collect();
        Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    pub fn zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(SptError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data: Vec<T> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        let dst = self.data_mut();
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        let data: Vec<U> = self.data.iter().map(|x| U::from_f64(x.to_f64())).collect();
        Array {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }
}

/// `op(a) * op(b)` for row-major 2-D arrays, with optional logical transposes.
/// Transposition is expressed through strides; nothing is copied.
pub fn gemm<T: Real>(a: &Array<T>, ta: bool, b: &Array<T>, tb: bool) -> Result<Array<T>> {
    let (ar, ac) = dims2(a, "matmul")?;
    let (br, bc) = dims2(b, "matmul")?;
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if ka != kb {
        return Err(SptError::ShapeMismatch {
            op: "matmul",
            left: a.shape.to_vec(),
            right: b.shape.to_vec(),
        });
    }
    let (rsa, csa) = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    let mut out = vec![T::ZERO; m * n];
    T::gemm(
        m,
        ka,
        n,
        T::ONE,
        a.data(),
        rsa,
        csa,
        b.data(),
        rsb,
        csb,
        T::ZERO,
        &mut out,
        n as isize,
        1,
    );
    Array::matrix(m, n, out)
}

pub fn dims2<T: Real>(a: &Array<T>, op: &'static str) -> Result<(usize, usize)> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(SptError::ShapeMismatch {
            op,
            left: other.to_vec(),
            right: vec![],
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_identity() {
        let i = Array::matrix(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let x = Array::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = gemm(&i, false, &x, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn gemm_hand_example() {
        let a = Array::matrix(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Array::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let c = gemm(&a, false, &b, false).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn gemm_transposes_match_explicit() {
        let a = Array::matrix(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Array::matrix(2, 3, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        // a * b^T
        let c = gemm(&a, false, &b, true).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[50.0, 68.0, 122.0, 167.0]);
        // a^T * b
        let d = gemm(&a, true, &b, false).unwrap();
        assert_eq!(d.shape(), &[3, 3]);
        assert_eq!(d.data()[0], 1.0 * 7.0 + 4.0 * 10.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Array::matrix(2, 3, vec![0.0f32; 6]).unwrap();
        let b = Array::matrix(2, 3, vec![0.0f32; 6]).unwrap();
        let err = gemm(&a, false, &b, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "message was: {msg}");
    }
}
