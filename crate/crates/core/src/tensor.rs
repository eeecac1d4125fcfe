use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{contract, dim_err, Result};
use crate::rng::Rng;

pub const MAX_RANK: usize = 4;

/// Dense row-major array of `f64` with rank 1 to 4.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return contract(alloc::format!("rank must be 1..={MAX_RANK}, got {}", shape.len()));
    }
    if shape.contains(&0) {
        return contract(alloc::format!("shape {shape:?} has a zero extent"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return dim_err("Tensor::new", shape, &[data.len()]);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internal construction of shapes that
    /// were already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self::from_parts(vec![r, c], data)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n = check_shape(shape).expect("valid shape");
        let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    /// Glorot-uniform draw on `[-l, l]`, `l = sqrt(6 / (fan_in + fan_out))`,
    /// with `fan_out = numel / fan_in`.
    pub fn seeded_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Self> {
        if fan_in == 0 {
            return contract("seeded_init: fan_in must be positive");
        }
        let n = check_shape(shape)?;
        let fan_out = (n / fan_in).max(1);
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        Ok(Self::uniform(shape, -limit, limit, rng))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix; a rank-1 tensor counts as a column vector.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.numel() {
            return dim_err("reshape", &self.shape, shape);
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub(crate) fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return dim_err(op, &self.shape, &[0, 0]);
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        gemm(self, false, other, false)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return dim_err(op, &self.shape, &other.shape);
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.zip_map(other, "max_abs_diff", |a, b| a - b)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Column-wise softmax: each column is normalised over its rows, after
    /// subtracting the column maximum.
    pub fn softmax_cols(&self) -> Result<Self> {
        let (r, c) = self.require_matrix("softmax_cols")?;
        let mut out = self.data.clone();
        for j in 0..c {
            let mut max = f64::NEG_INFINITY;
            for i in 0..r {
                max = max.max(out[i * c + j]);
            }
            let mut total = 0.0;
            for i in 0..r {
                let e = libm::exp(out[i * c + j] - max);
                out[i * c + j] = e;
                total += e;
            }
            for i in 0..r {
                out[i * c + j] /= total;
            }
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return contract("concat_rows: no inputs");
        };
        let cols = first.require_matrix("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = p.require_matrix("concat_rows")?;
            if c != cols {
                return dim_err("concat_rows", first.shape(), p.shape());
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_parts(vec![rows, cols], data))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.require_matrix("slice_rows")?;
        if len == 0 || start + len > r {
            return dim_err("slice_rows", &self.shape, &[start, len]);
        }
        Ok(Self::from_parts(
            vec![len, c],
            self.data[start * c..(start + len) * c].to_vec(),
        ))
    }

    /// Selects columns by index, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Result<Self> {
        let (r, c) = self.require_matrix("select_cols")?;
        if idx.is_empty() || idx.iter().any(|&j| j >= c) {
            return contract("select_cols: empty or out-of-range index");
        }
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(Self::from_parts(vec![r, idx.len()], data))
    }

    pub fn column(&self, j: usize) -> Result<Self> {
        self.select_cols(&[j])
    }
}

/// `op(a) · op(b)` where `op` optionally transposes a matrix operand.
pub fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let (ar, ac) = a.require_matrix("matmul")?;
    let (br, bc) = b.require_matrix("matmul")?;
    let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    if k != k2 {
        return dim_err("matmul", &[m, k], &[k2, n]);
    }
    let mut out = vec![0.0; m * n];
    // SAFETY: pointer/stride pairs describe the full extents of `a`, `b` and
    // `out`, each of which is borrowed for the duration of the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.rows(), a.cols());
        let n = b.cols();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let m = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Tensor::eye(2).matmul(&m).unwrap(), m);
        let a = Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let b = Tensor::from_rows(&[[0.0], [5.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Tensor::zeros(&[2, 1]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let d = a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn gemm_transposes_match_explicit_transpose() {
        let mut rng = Rng::new(12);
        let a = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let at = a.transpose().unwrap();
        let tn = gemm(&a, true, &b, false).unwrap();
        assert!(tn.max_abs_diff(&naive(&at, &b)).unwrap() < 1e-12);
        let d = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let nt = gemm(&b, false, &d, true).unwrap();
        assert!(nt.max_abs_diff(&naive(&b, &d.transpose().unwrap())).unwrap() < 1e-12);
        let tt = gemm(&c, true, &b, true).unwrap();
        let want = naive(&c.transpose().unwrap(), &b.transpose().unwrap());
        assert!(tt.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&a), Err(crate::Error::Dimension { .. })));
    }

    #[test]
    fn softmax_closed_forms() {
        let s = Tensor::from_rows(&[[0.0], [0.0]]).softmax_cols().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::from_rows(&[[libm::log(2.0)], [0.0]]).softmax_cols().unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = Tensor::from_rows(&[[1000.0], [1000.0]]).softmax_cols().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let a = Tensor::seeded_init(&[3, 3], 3, &mut Rng::new(5)).unwrap();
        let b = Tensor::seeded_init(&[3, 3], 3, &mut Rng::new(5)).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|x| x.abs() <= 1.0));
        assert!(Tensor::seeded_init(&[3, 3], 0, &mut Rng::new(5)).is_err());
    }

    #[test]
    fn glorot_mean_is_centered() {
        let t = Tensor::seeded_init(&[100_000], 1, &mut Rng::new(99)).unwrap();
        let mean = t.sum() / t.numel() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }
}
