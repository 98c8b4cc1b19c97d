//! Dense row-major matrices and the few differentiable kernels the encoder
//! is built from. Every kernel comes with an explicit backward pass.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Epsilon used by the encoder's layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Single-row matrix.
    pub fn row_vector(values: Vec<T>) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, b, &mut out.data[i * other.cols..(i + 1) * other.cols]);
                }
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// A named trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A collection of trainable tensors in a fixed canonical order.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<&ParamTensor<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor<T>>;

    fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }
}

impl<T: Scalar> ParamSet<T> for Vec<ParamTensor<T>> {
    fn tensors(&self) -> Vec<&ParamTensor<T>> {
        self.iter().collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.iter_mut().collect()
    }
}

fn check_bias<T: Scalar>(b: &[T], m: usize) -> Result<()> {
    if b.len() != m {
        return Err(Error::Shape(format!("bias of length {} for {m} outputs", b.len())));
    }
    Ok(())
}

/// `Y = X·W + b`, with `b` broadcast over rows.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>> {
    check_bias(b, w.cols())?;
    let mut y = x.matmul(w)?;
    for i in 0..y.rows() {
        for (v, &bj) in y.row_mut(i).iter_mut().zip(b) {
            *v += bj;
        }
    }
    Ok(y)
}

/// Gradients of [`linear`] given `dY`: returns `(dX, dW, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    dy: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Vec<T>)> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(Error::Shape("linear backward: dY does not match forward output".into()));
    }
    let dx = dy.matmul_t(w)?;
    let dw = x.t_matmul(dy)?;
    let mut db = vec![T::zero(); dy.cols()];
    for i in 0..dy.rows() {
        for (acc, &g) in db.iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
    Ok((dx, dw, db))
}

/// `x·Φ(x)` with the exact Gaussian CDF.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    x * half * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf())
}

/// `Φ(x) + x·φ(x)`
#[inline]
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() / T::lit((2.0 * PI).sqrt());
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Scalar>(x: &Matrix<T>, dy: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(x.shape(), dy.shape());
    let data = x
        .as_slice()
        .iter()
        .zip(dy.as_slice())
        .map(|(&xv, &g)| g * gelu_grad_scalar(xv))
        .collect();
    Matrix {
        rows: x.rows,
        cols: x.cols,
        data,
    }
}

/// Saved activations of a [`layer_norm`] forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

/// Per-row normalization with biased variance, followed by `γ, β`.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let m = x.cols();
    check_bias(gamma, m)?;
    check_bias(beta, m)?;
    if m == 0 {
        return Err(Error::Shape("layer norm over zero columns".into()));
    }
    let inv_m = T::one() / T::from_usize(m).unwrap();
    let mut normalized = Matrix::zeros(x.rows(), m);
    let mut y = Matrix::zeros(x.rows(), m);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_m;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
        let s = T::one() / (var + eps).sqrt();
        inv_std.push(s);
        let nrow = normalized.row_mut(i);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * s;
        }
        let nrow = normalized.row(i).to_vec();
        for (k, out) in y.row_mut(i).iter_mut().enumerate() {
            *out = gamma[k] * nrow[k] + beta[k];
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Gradients of [`layer_norm`]: returns `(dX, dγ, dβ)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &Matrix<T>,
) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (n, m) = dy.shape();
    let inv_m = T::one() / T::from_usize(m).unwrap();
    let mut dx = Matrix::zeros(n, m);
    let mut dgamma = vec![T::zero(); m];
    let mut dbeta = vec![T::zero(); m];
    let mut dxhat = vec![T::zero(); m];
    for i in 0..n {
        let xhat = cache.normalized.row(i);
        let g = dy.row(i);
        for k in 0..m {
            dgamma[k] += g[k] * xhat[k];
            dbeta[k] += g[k];
            dxhat[k] = g[k] * gamma[k];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() * inv_m;
        let mean_dx = dot(&dxhat, xhat) * inv_m;
        let s = cache.inv_std[i];
        for (k, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = s * (dxhat[k] - mean_d - xhat[k] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Compares analytic gradients stored in `params` against central finite
/// differences of `f`. Returns the maximum of `|analytic - numeric| /
/// max(1, |analytic|)` over all coordinates.
pub fn finite_diff_check<T, P, F>(mut f: F, params: &mut P, h: T) -> Result<T>
where
    T: Scalar,
    P: ParamSet<T> + ?Sized,
    F: FnMut(&P) -> T,
{
    if h <= T::zero() {
        return Err(Error::Config("finite difference step must be positive".into()));
    }
    let two_h = h + h;
    let mut worst = T::zero();
    let counts: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in counts.iter().enumerate() {
        for k in 0..len {
            let (orig, analytic) = {
                let t = &params.tensors()[ti];
                (t.value.as_slice()[k], t.grad.as_slice()[k])
            };
            params.tensors_mut()[ti].value.as_mut_slice()[k] = orig + h;
            let up = f(params);
            params.tensors_mut()[ti].value.as_mut_slice()[k] = orig - h;
            let down = f(params);
            params.tensors_mut()[ti].value.as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                let name = params.tensors()[ti].name.clone();
                return Err(Error::NonFinite(format!("objective at {name}[{k}]")));
            }
            let numeric = (up - down) / two_h;
            let err = (analytic - numeric).abs() / analytic.abs().max(T::one());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Weighted-sum probe `Σ c_ij y_ij` so every output coordinate matters.
    fn probe(y: &Matrix<f64>, c: &Matrix<f64>) -> f64 {
        y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn linear_identity_and_arithmetic() {
        let i2 = Matrix::<f64>::identity(2);
        assert_eq!(linear(&i2, &i2, &[0.0, 0.0]).unwrap(), i2);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(linear(&x, &w, &[3.0]).unwrap().as_slice(), &[6.0]);
        assert!(linear(&x, &x, &[0.0]).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(3, 4, &mut rng);
        let w = random(4, 2, &mut rng);
        let b = vec![0.3, -0.2];
        let c = random(3, 2, &mut rng);
        let (dx, dw, db) = linear_backward(&x, &w, &c).unwrap();

        let mut params = vec![
            ParamTensor::new("x", x),
            ParamTensor::new("w", w),
            ParamTensor::new("b", Matrix::row_vector(b)),
        ];
        params[0].grad = dx;
        params[1].grad = dw;
        params[2].grad = Matrix::row_vector(db);
        let err = finite_diff_check(
            |p: &Vec<ParamTensor<f64>>| {
                probe(&linear(&p[0].value, &p[1].value, p[2].value.as_slice()).unwrap(), &c)
            },
            &mut params,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }

    #[test]
    fn linear_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x1, x2, w) = (random(2, 3, &mut rng), random(2, 3, &mut rng), random(3, 4, &mut rng));
        let zero = vec![0.0; 4];
        let mut combo = x1.clone();
        combo.scale(2.5);
        let mut scaled2 = x2.clone();
        scaled2.scale(-1.5);
        combo.add_assign(&scaled2);
        let lhs = linear(&combo, &w, &zero).unwrap();
        let mut rhs = linear(&x1, &w, &zero).unwrap();
        rhs.scale(2.5);
        let mut r2 = linear(&x2, &w, &zero).unwrap();
        r2.scale(-1.5);
        rhs.add_assign(&r2);
        for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_values_and_gradient() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-9);
        for &x in &[-2.0f64, -0.5, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() <= 1e-6, "x={x}");
        }
    }

    #[test]
    fn layer_norm_special_rows() {
        let x = Matrix::from_rows(&[vec![4.0f64, 4.0, 4.0], vec![1.0, -1.0, 0.0]]).unwrap();
        let (y, _) = layer_norm(&x, &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS).unwrap();
        assert!(y.row(0).iter().all(|&v| v == 0.0));

        let x = Matrix::from_rows(&[vec![1.0f64, -1.0]]).unwrap();
        let (y, _) = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-300).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12 && (y.get(0, 1) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(4, 9, &mut rng);
        let (y, _) = layer_norm(&x, &[1.0; 9], &[0.0; 9], LAYER_NORM_EPS).unwrap();
        for i in 0..4 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 9.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(2, 5, &mut rng);
        let gamma: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let c = random(2, 5, &mut rng);
        let eps = LAYER_NORM_EPS;
        let (_, cache) = layer_norm(&x, &gamma, &beta, eps).unwrap();
        let (dx, dg, db) = layer_norm_backward(&cache, &gamma, &c);
        let mut params = vec![
            ParamTensor::new("x", x),
            ParamTensor::new("gamma", Matrix::row_vector(gamma)),
            ParamTensor::new("beta", Matrix::row_vector(beta)),
        ];
        params[0].grad = dx;
        params[1].grad = Matrix::row_vector(dg);
        params[2].grad = Matrix::row_vector(db);
        let err = finite_diff_check(
            |p: &Vec<ParamTensor<f64>>| {
                let (y, _) =
                    layer_norm(&p[0].value, p[1].value.as_slice(), p[2].value.as_slice(), eps)
                        .unwrap();
                probe(&y, &c)
            },
            &mut params,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "rel err {err}");
    }

    #[test]
    fn finite_diff_check_on_simple_functions() {
        let mut params = vec![ParamTensor::new(
            "theta",
            Matrix::row_vector(vec![1.0f64, 2.0]),
        )];
        params[0].grad = Matrix::row_vector(vec![2.0, 4.0]);
        let err = finite_diff_check(
            |p: &Vec<ParamTensor<f64>>| p[0].value.as_slice().iter().map(|v| v * v).sum(),
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");

        params[0].grad.fill(0.0);
        let err = finite_diff_check(|_: &Vec<ParamTensor<f64>>| 3.0, &mut params, 1e-5).unwrap();
        assert_eq!(err, 0.0);

        let res = finite_diff_check(|_: &Vec<ParamTensor<f64>>| f64::NAN, &mut params, 1e-5);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn generic_over_f32() {
        let x = Matrix::<f32>::identity(3);
        let (y, _) = layer_norm(&x, &[1.0; 3], &[0.0; 3], 1e-6).unwrap();
        assert!(y.is_finite());
        assert!((gelu_scalar(1.0f32) - 0.841_344_7).abs() < 1e-6);
    }
}
