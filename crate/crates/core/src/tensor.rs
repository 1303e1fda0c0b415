//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Config(format!(
            "tensor shape must be non-empty with positive dims, got {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 1-D tensor holding `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngState) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.uniform(lo, hi)).collect(),
        }
    }

    pub fn normal(shape: &[usize], mean: f64, std_dev: f64, rng: &mut RngState) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.normal(mean, std_dev)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::shape(shape, &self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Elementwise sign with `sign(0) = 0`.
    pub fn sign(&self) -> Tensor {
        self.map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidRange { lo, hi });
        }
        Ok(self.map(|v| v.max(lo).min(hi)))
    }

    /// Largest absolute elementwise difference.
    pub fn linf_distance(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of a `[m, k]` and a `[k, n]` tensor.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape {
                expected: vec![self.shape.get(1).copied().unwrap_or(0), 0],
                actual: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.data, Layout::RowMajor, &other.data, Layout::RowMajor, 0.0, &mut out);
        Tensor::new(&[m, n], out)
    }
}

/// Storage order of a GEMM operand.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Layout {
    RowMajor,
    /// The operand is stored transposed (row-major storage of its transpose).
    Transposed,
}

/// `c = alpha * a * b + beta * c`, where `a` is `m x k`, `b` is `k x n` and
/// `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::RowMajor => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::RowMajor => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (asserted
    // above) and the strides address them in bounds for either layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn sign_examples() {
        assert_eq!(t(&[-0.5, 0.0, 2.0]).sign().data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(Tensor::zeros(&[2, 3]).sign(), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(t(&[-2.0, 0.0, 2.0]).clamp(-1.0, 1.0).unwrap().data(), &[-1.0, 0.0, 1.0]);
        let x = t(&[-3.0, 0.25, 7.5]);
        assert_eq!(x.clamp(-1e300, 1e300).unwrap(), x);
        assert!(matches!(x.clamp(1.0, -1.0), Err(Error::InvalidRange { .. })));
    }

    #[test]
    fn linf_examples() {
        let a = t(&[0.0, 0.0]);
        assert_eq!(a.linf_distance(&a).unwrap(), 0.0);
        assert_eq!(a.linf_distance(&t(&[0.1, -0.3])).unwrap(), 0.3);
        assert!(matches!(a.linf_distance(&t(&[1.0])), Err(Error::Shape { .. })));
    }

    #[test]
    fn arithmetic_shape_checks() {
        let mut rng = RngState::new(1);
        let x = Tensor::normal(&[3, 4], 0.0, 1.0, &mut rng);
        assert_eq!(x.add(&Tensor::zeros(&[3, 4])).unwrap(), x);
        assert!(x.add(&Tensor::zeros(&[4, 3])).is_err());
        assert_eq!(x.sub(&x).unwrap(), Tensor::zeros(&[3, 4]));
        assert_eq!(x.scale(2.0).data()[5], 2.0 * x.data()[5]);
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let mut rng = RngState::new(2);
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::normal(&[2, 7], 0.0, 1.0, &mut rng);
        assert_eq!(i2.matmul(&x).unwrap(), x);
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(3);
        for _ in 0..20 {
            let a = Tensor::normal(&[5, 4], 0.0, 1.0, &mut rng);
            let b = Tensor::normal(&[4, 3], 0.0, 1.0, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(a.data(), b.data(), 5, 4, 3);
            assert_eq!(got.shape(), &[5, 3]);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
        assert!(Tensor::zeros(&[5, 4]).matmul(&Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn transposed_gemm_layouts() {
        let mut rng = RngState::new(4);
        let (m, k, n) = (3, 5, 4);
        let a = Tensor::normal(&[m, k], 0.0, 1.0, &mut rng);
        let b = Tensor::normal(&[k, n], 0.0, 1.0, &mut rng);
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        let transpose = |x: &[f64], r: usize, c: usize| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
            out
        };
        let at = transpose(a.data(), m, k);
        let bt = transpose(b.data(), k, n);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &at, Layout::Transposed, &bt, Layout::Transposed, 0.0, &mut c);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = Tensor::normal(&[10], 0.0, 1.0, &mut RngState::new(8));
        let b = Tensor::normal(&[10], 0.0, 1.0, &mut RngState::new(8));
        assert_eq!(a, b);
        let u = Tensor::uniform(&[1000], -0.5, 0.5, &mut RngState::new(8));
        assert!(u.data().iter().all(|v| (-0.5..0.5).contains(v)));
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..40)
    }

    proptest! {
        #[test]
        fn sign_is_idempotent_and_ternary(v in vec_strategy()) {
            let x = Tensor::from_vec(v);
            let s = x.sign();
            prop_assert_eq!(s.sign(), s.clone());
            prop_assert!(s.data().iter().all(|&e| e == -1.0 || e == 0.0 || e == 1.0));
            prop_assert_eq!(s.shape(), x.shape());
        }

        #[test]
        fn clamp_is_idempotent(v in vec_strategy(), lo in -5.0f64..0.0, width in 0.0f64..5.0) {
            let x = Tensor::from_vec(v);
            let once = x.clamp(lo, lo + width).unwrap();
            prop_assert_eq!(once.clamp(lo, lo + width).unwrap(), once.clone());
            prop_assert!(once.data().iter().all(|&e| e >= lo && e <= lo + width));
        }

        #[test]
        fn linf_matches_brute_force_and_is_a_metric(
            triple in (1usize..30).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let (a, b, c) = triple;
            let mut brute = 0.0f64;
            for i in 0..a.len() {
                let d = (a[i] - b[i]).abs();
                if d > brute {
                    brute = d;
                }
            }
            let (ta, tb, tc) = (Tensor::from_vec(a), Tensor::from_vec(b), Tensor::from_vec(c));
            let ab = ta.linf_distance(&tb).unwrap();
            prop_assert_eq!(ab, brute);
            prop_assert_eq!(ab, tb.linf_distance(&ta).unwrap());
            prop_assert_eq!(ta.linf_distance(&ta).unwrap(), 0.0);
            let via = ta.linf_distance(&tc).unwrap() + tc.linf_distance(&tb).unwrap();
            prop_assert!(ab <= via + 1e-12);
        }
    }
}
