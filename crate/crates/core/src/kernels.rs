//! Stationary covariance functions with ARD lengthscales.
//!
//! Leaves are the squared-exponential (RBF) kernel and half-integer Matérn
//! kernels; [`KernelSpec::Sum`] adds two kernels. All hyperparameters are
//! exposed in log space, leaf by leaf in depth-first order, each leaf
//! contributing `[ln ℓ_1, …, ln ℓ_D, ln σ²]`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{sq_dist, CholeskyFactor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("input dimension {got} does not match kernel dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hyperparameter must be positive and finite, got {0}")]
    NonPositive(f64),
    #[error("kernel needs at least one lengthscale")]
    NoLengthscales,
    #[error("sum components have different dimensions ({0} vs {1})")]
    SumDimension(usize, usize),
    #[error("unsupported Matérn smoothness {0} (only 0.5, 1.5, 2.5)")]
    UnsupportedNu(f64),
    #[error("unknown hyperparameter id {0} (kernel has {1})")]
    UnknownParam(usize, usize),
    #[error("expected {expected} log-hyperparameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("Cholesky factorization failed even with jitter {0}")]
    FactorizationFailed(f64),
}

/// Half-integer Matérn smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Nu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl TryFrom<f64> for Nu {
    type Error = KernelError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        match v {
            v if v == 0.5 => Ok(Nu::Half),
            v if v == 1.5 => Ok(Nu::ThreeHalves),
            v if v == 2.5 => Ok(Nu::FiveHalves),
            other => Err(KernelError::UnsupportedNu(other)),
        }
    }
}

impl From<Nu> for f64 {
    fn from(nu: Nu) -> f64 {
        match nu {
            Nu::Half => 0.5,
            Nu::ThreeHalves => 1.5,
            Nu::FiveHalves => 2.5,
        }
    }
}

/// Covariance-function description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub enum KernelSpec {
    Rbf {
        lengthscales: Vec<f64>,
        variance: f64,
    },
    Matern {
        nu: Nu,
        lengthscales: Vec<f64>,
        variance: f64,
    },
    Sum(Box<KernelSpec>, Box<KernelSpec>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
enum RawKernel {
    Rbf {
        lengthscales: Vec<f64>,
        variance: f64,
    },
    Matern {
        nu: Nu,
        lengthscales: Vec<f64>,
        variance: f64,
    },
    Sum {
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
    },
}

impl TryFrom<RawKernel> for KernelSpec {
    type Error = KernelError;

    fn try_from(raw: RawKernel) -> Result<Self, Self::Error> {
        let spec = match raw {
            RawKernel::Rbf { lengthscales, variance } => KernelSpec::Rbf { lengthscales, variance },
            RawKernel::Matern { nu, lengthscales, variance } => KernelSpec::Matern { nu, lengthscales, variance },
            RawKernel::Sum { left, right } => KernelSpec::Sum(left, right),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for RawKernel {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::Rbf { lengthscales, variance } => RawKernel::Rbf { lengthscales, variance },
            KernelSpec::Matern { nu, lengthscales, variance } => RawKernel::Matern { nu, lengthscales, variance },
            KernelSpec::Sum(left, right) => RawKernel::Sum { left, right },
        }
    }
}

/// A leaf kernel's radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Profile {
    Rbf,
    Matern(Nu),
}

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

impl Profile {
    /// `k / σ²` as a function of the scaled squared distance `r²`.
    #[inline]
    fn value(self, r2: f64) -> f64 {
        match self {
            Profile::Rbf => (-0.5 * r2).exp(),
            Profile::Matern(Nu::Half) => (-r2.sqrt()).exp(),
            Profile::Matern(Nu::ThreeHalves) => {
                let a = SQRT3 * r2.sqrt();
                (1.0 + a) * (-a).exp()
            }
            Profile::Matern(Nu::FiveHalves) => {
                let r = r2.sqrt();
                let a = SQRT5 * r;
                (1.0 + a + 5.0 / 3.0 * r2) * (-a).exp()
            }
        }
    }

    /// [`Self::value`] and [`Self::lengthscale_factor`] sharing one `exp`.
    #[inline]
    fn value_and_factor(self, r2: f64) -> (f64, f64) {
        match self {
            Profile::Rbf => {
                let e = (-0.5 * r2).exp();
                (e, e)
            }
            Profile::Matern(Nu::Half) => {
                if r2 == 0.0 {
                    (1.0, 0.0)
                } else {
                    let r = r2.sqrt();
                    let e = (-r).exp();
                    (e, e / r)
                }
            }
            Profile::Matern(Nu::ThreeHalves) => {
                let a = SQRT3 * r2.sqrt();
                let e = (-a).exp();
                ((1.0 + a) * e, 3.0 * e)
            }
            Profile::Matern(Nu::FiveHalves) => {
                let r = r2.sqrt();
                let a = SQRT5 * r;
                let e = (-a).exp();
                ((1.0 + a + 5.0 / 3.0 * r2) * e, 5.0 / 3.0 * (1.0 + a) * e)
            }
        }
    }

    /// `s / σ²` such that `∂k/∂ln ℓ_d = s · Δ_d² / ℓ_d²`.
    #[inline]
    fn lengthscale_factor(self, r2: f64) -> f64 {
        match self {
            Profile::Rbf => (-0.5 * r2).exp(),
            Profile::Matern(Nu::Half) => {
                if r2 == 0.0 {
                    0.0
                } else {
                    let r = r2.sqrt();
                    (-r).exp() / r
                }
            }
            Profile::Matern(Nu::ThreeHalves) => 3.0 * (-SQRT3 * r2.sqrt()).exp(),
            Profile::Matern(Nu::FiveHalves) => {
                let a = SQRT5 * r2.sqrt();
                5.0 / 3.0 * (1.0 + a) * (-a).exp()
            }
        }
    }
}

/// Borrowed view of one leaf kernel.
#[derive(Clone, Copy)]
struct Leaf<'a> {
    profile: Profile,
    lengthscales: &'a [f64],
    variance: f64,
}

impl<'a> Leaf<'a> {
    #[inline]
    fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(self.lengthscales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum()
    }

    /// Inputs divided by the lengthscales, row-major.
    fn scaled_rows(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let (n, d) = x.shape();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                out[i * d + k] = x[(i, k)] / self.lengthscales[k];
            }
        }
        out
    }
}

/// Identifies one log-hyperparameter by its position in
/// [`KernelSpec::log_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl KernelSpec {
    pub fn rbf(lengthscales: Vec<f64>, variance: f64) -> Result<KernelSpec, KernelError> {
        let k = KernelSpec::Rbf { lengthscales, variance };
        k.validate()?;
        Ok(k)
    }

    pub fn matern(nu: Nu, lengthscales: Vec<f64>, variance: f64) -> Result<KernelSpec, KernelError> {
        let k = KernelSpec::Matern { nu, lengthscales, variance };
        k.validate()?;
        Ok(k)
    }

    pub fn sum(left: KernelSpec, right: KernelSpec) -> Result<KernelSpec, KernelError> {
        let k = KernelSpec::Sum(Box::new(left), Box::new(right));
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self {
            KernelSpec::Rbf { lengthscales, variance }
            | KernelSpec::Matern { lengthscales, variance, .. } => {
                if lengthscales.is_empty() {
                    return Err(KernelError::NoLengthscales);
                }
                for &v in lengthscales.iter().chain(std::iter::once(variance)) {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(KernelError::NonPositive(v));
                    }
                }
                Ok(())
            }
            KernelSpec::Sum(a, b) => {
                a.validate()?;
                b.validate()?;
                if a.dim() != b.dim() {
                    return Err(KernelError::SumDimension(a.dim(), b.dim()));
                }
                Ok(())
            }
        }
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::Rbf { lengthscales, .. } | KernelSpec::Matern { lengthscales, .. } => {
                lengthscales.len()
            }
            KernelSpec::Sum(a, _) => a.dim(),
        }
    }

    fn leaves(&self) -> Vec<Leaf<'_>> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<Leaf<'a>>) {
        match self {
            KernelSpec::Rbf { lengthscales, variance } => out.push(Leaf {
                profile: Profile::Rbf,
                lengthscales,
                variance: *variance,
            }),
            KernelSpec::Matern { nu, lengthscales, variance } => out.push(Leaf {
                profile: Profile::Matern(*nu),
                lengthscales,
                variance: *variance,
            }),
            KernelSpec::Sum(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            KernelSpec::Sum(a, b) => a.n_leaves() + b.n_leaves(),
            _ => 1,
        }
    }

    /// `k(x, x)`, the prior variance.
    pub fn prior_variance(&self) -> f64 {
        self.leaves().iter().map(|l| l.variance).sum()
    }

    pub fn n_params(&self) -> usize {
        self.leaves().iter().map(|l| l.lengthscales.len() + 1).sum()
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for leaf in self.leaves() {
            out.extend(leaf.lengthscales.iter().map(|l| l.ln()));
            out.push(leaf.variance.ln());
        }
        out
    }

    /// Copy of this kernel with hyperparameters `exp(params)`.
    pub fn with_log_params(&self, params: &[f64]) -> Result<KernelSpec, KernelError> {
        let expected = self.n_params();
        if params.len() != expected {
            return Err(KernelError::ParamCount { expected, got: params.len() });
        }
        let mut rest = params;
        let k = self.rebuild(&mut rest);
        k.validate()?;
        Ok(k)
    }

    fn rebuild(&self, rest: &mut &[f64]) -> KernelSpec {
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            *rest = tail;
            head.iter().map(|v| v.exp()).collect::<Vec<_>>()
        };
        match self {
            KernelSpec::Rbf { lengthscales, .. } => {
                let mut v = take(lengthscales.len() + 1);
                let variance = v.pop().unwrap();
                KernelSpec::Rbf { lengthscales: v, variance }
            }
            KernelSpec::Matern { nu, lengthscales, .. } => {
                let mut v = take(lengthscales.len() + 1);
                let variance = v.pop().unwrap();
                KernelSpec::Matern { nu: *nu, lengthscales: v, variance }
            }
            KernelSpec::Sum(a, b) => {
                let a = a.rebuild(rest);
                let b = b.rebuild(rest);
                KernelSpec::Sum(Box::new(a), Box::new(b))
            }
        }
    }

    /// Human-readable name for a log-hyperparameter.
    pub fn param_name(&self, id: ParamId) -> Option<String> {
        let mut offset = 0;
        for (i, leaf) in self.leaves().iter().enumerate() {
            let d = leaf.lengthscales.len();
            if id.0 < offset + d {
                return Some(format!("leaf{i}.ln_lengthscale[{}]", id.0 - offset));
            }
            if id.0 == offset + d {
                return Some(format!("leaf{i}.ln_variance"));
            }
            offset += d + 1;
        }
        None
    }

    /// Sets every leaf's output variance to `total / n_leaves` and every
    /// lengthscale to `lengthscale`.
    pub fn reinitialized(&self, lengthscale: f64, total_variance: f64) -> Result<KernelSpec, KernelError> {
        let per_leaf = total_variance / self.n_leaves() as f64;
        let mut params = Vec::with_capacity(self.n_params());
        for leaf in self.leaves() {
            params.extend(std::iter::repeat_n(lengthscale.ln(), leaf.lengthscales.len()));
            params.push(per_leaf.ln());
        }
        self.with_log_params(&params)
    }

    fn check_dim(&self, got: usize) -> Result<(), KernelError> {
        let expected = self.dim();
        if got != expected {
            return Err(KernelError::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    /// `k(x, x′)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        self.check_dim(x.len())?;
        self.check_dim(y.len())?;
        self.validate()?;
        Ok(self
            .leaves()
            .iter()
            .map(|l| l.variance * l.profile.value(l.scaled_sq_dist(x, y)))
            .sum())
    }

    /// Cross-covariance matrix, `K[i, j] = k(x_i, x′_j)`, rows of `x` and `y`
    /// being inputs.
    pub fn gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        self.check_dim(x.ncols())?;
        self.check_dim(y.ncols())?;
        let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
        let mut k = DMatrix::zeros(n, m);
        for leaf in self.leaves() {
            let zx = leaf.scaled_rows(x);
            let zy = leaf.scaled_rows(y);
            for i in 0..n {
                let a = &zx[i * d..(i + 1) * d];
                for j in 0..m {
                    let r2 = sq_dist(a, &zy[j * d..(j + 1) * d]);
                    k[(i, j)] += leaf.variance * leaf.profile.value(r2);
                }
            }
        }
        Ok(k)
    }

    /// Symmetric Gram matrix of one input set; only the lower triangle is
    /// evaluated.
    pub fn gram_sym(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        self.check_dim(x.ncols())?;
        let (n, d) = (x.nrows(), x.ncols());
        let mut k = DMatrix::zeros(n, n);
        for leaf in self.leaves() {
            let z = leaf.scaled_rows(x);
            for i in 0..n {
                k[(i, i)] += leaf.variance;
                let a = &z[i * d..(i + 1) * d];
                for j in 0..i {
                    let v = leaf.variance * leaf.profile.value(sq_dist(a, &z[j * d..(j + 1) * d]));
                    k[(i, j)] += v;
                    k[(j, i)] += v;
                }
            }
        }
        Ok(k)
    }

    /// Diagonal of the Gram matrix, i.e. the prior variance at each row.
    pub fn diag(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, KernelError> {
        self.check_dim(x.ncols())?;
        Ok(vec![self.prior_variance(); x.nrows()])
    }

    /// `∂K/∂θ` for one log-hyperparameter over the inputs `x`.
    pub fn gram_grad(&self, x: &DMatrix<f64>, param: ParamId) -> Result<DMatrix<f64>, KernelError> {
        self.check_dim(x.ncols())?;
        let total = self.n_params();
        if param.0 >= total {
            return Err(KernelError::UnknownParam(param.0, total));
        }
        let (n, d) = (x.nrows(), x.ncols());
        let mut offset = 0;
        for leaf in self.leaves() {
            if param.0 <= offset + d {
                let z = leaf.scaled_rows(x);
                let mut g = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let (a, b) = (&z[i * d..(i + 1) * d], &z[j * d..(j + 1) * d]);
                        let r2 = sq_dist(a, b);
                        let v = if param.0 == offset + d {
                            leaf.variance * leaf.profile.value(r2)
                        } else {
                            let k = param.0 - offset;
                            let dz = a[k] - b[k];
                            leaf.variance * leaf.profile.lengthscale_factor(r2) * dz * dz
                        };
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
                return Ok(g);
            }
            offset += d + 1;
        }
        unreachable!("param id checked against n_params")
    }

    /// `Σ_ij W_ij ∂K_ij/∂θ_p` for every log-hyperparameter `p`, for a
    /// symmetric weight matrix `W`. Equivalent to contracting each
    /// [`gram_grad`](Self::gram_grad) with `W` but in one `O(n² D)` pass.
    pub fn contract_grad(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>, KernelError> {
        self.check_dim(x.ncols())?;
        let (n, d) = (x.nrows(), x.ncols());
        let mut out = Vec::with_capacity(self.n_params());
        let mut ls_grad = vec![0.0; d];
        for leaf in self.leaves() {
            let z = leaf.scaled_rows(x);
            ls_grad.iter_mut().for_each(|g| *g = 0.0);
            let mut var_grad = 0.0;
            for i in 0..n {
                var_grad += w[(i, i)];
                let a = &z[i * d..(i + 1) * d];
                for j in 0..i {
                    let b = &z[j * d..(j + 1) * d];
                    let r2 = sq_dist(a, b);
                    let wij = w[(i, j)] + w[(j, i)];
                    let (value, factor) = leaf.profile.value_and_factor(r2);
                    var_grad += wij * value;
                    let s = wij * factor;
                    if s != 0.0 {
                        for ((g, p), q) in ls_grad.iter_mut().zip(a).zip(b) {
                            let dz = p - q;
                            *g += s * dz * dz;
                        }
                    }
                }
            }
            out.extend(ls_grad.iter().map(|g| g * leaf.variance));
            out.push(var_grad * leaf.variance);
        }
        Ok(out)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Rbf { lengthscales, variance } => {
                write!(f, "RBF(ARD d={}, σ²={variance:.4})", lengthscales.len())
            }
            KernelSpec::Matern { nu, lengthscales, variance } => write!(
                f,
                "Matern(ν={}, ARD d={}, σ²={variance:.4})",
                f64::from(*nu),
                lengthscales.len()
            ),
            KernelSpec::Sum(a, b) => write!(f, "{a} + {b}"),
        }
    }
}

/// Multiples of the mean diagonal tried in turn as diagonal jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterLadder(pub Vec<f64>);

impl Default for JitterLadder {
    fn default() -> Self {
        JitterLadder(vec![0.0, 1e-8, 1e-6, 1e-4])
    }
}

/// A Cholesky factor of `K + jitter · I`.
#[derive(Debug, Clone, PartialEq)]
pub struct JitteredCholesky {
    pub factor: CholeskyFactor,
    pub jitter: f64,
}

/// Factors `K + jI` for the smallest ladder step `j` that succeeds. Steps are
/// scaled by the mean absolute diagonal of `K` (or 1 when that is zero).
pub fn cholesky_jitter(k: &DMatrix<f64>, ladder: &JitterLadder) -> Result<JitteredCholesky, KernelError> {
    let n = k.nrows();
    let scale = if n == 0 {
        1.0
    } else {
        let m = k.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if m > 0.0 && m.is_finite() {
            m
        } else {
            1.0
        }
    };
    let mut last = 0.0;
    for &step in &ladder.0 {
        let jitter = step * scale;
        last = jitter;
        if let Some(factor) = CholeskyFactor::factor(k, jitter) {
            return Ok(JitteredCholesky { factor, jitter });
        }
    }
    Err(KernelError::FactorizationFailed(last))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fused_profile_matches_separate() {
        for nu in [Nu::Half, Nu::ThreeHalves, Nu::FiveHalves] {
            for p in [Profile::Rbf, Profile::Matern(nu)] {
                for r2 in [0.0, 1e-6, 0.3, 2.0, 9.0] {
                    assert_eq!(p.value_and_factor(r2), (p.value(r2), p.lengthscale_factor(r2)));
                }
            }
        }
    }

    #[test]
    fn zero_distance_gives_variance() {
        for k in [
            KernelSpec::rbf(vec![0.7, 2.0], 1.7).unwrap(),
            KernelSpec::matern(Nu::Half, vec![0.7, 2.0], 1.7).unwrap(),
            KernelSpec::matern(Nu::ThreeHalves, vec![0.7, 2.0], 1.7).unwrap(),
            KernelSpec::matern(Nu::FiveHalves, vec![0.7, 2.0], 1.7).unwrap(),
        ] {
            assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.7);
        }
    }

    #[test]
    fn unit_distance_values() {
        let rbf = KernelSpec::rbf(vec![1.0], 1.0).unwrap();
        assert!(close(rbf.eval(&[0.0], &[1.0]).unwrap(), 0.606_531, 1e-6));
        let m32 = KernelSpec::matern(Nu::ThreeHalves, vec![1.0], 1.0).unwrap();
        assert!(close(m32.eval(&[0.0], &[1.0]).unwrap(), 0.48335, 1e-5));
        let m52 = KernelSpec::matern(Nu::FiveHalves, vec![1.0], 1.0).unwrap();
        assert!(close(m52.eval(&[0.0], &[1.0]).unwrap(), 0.52399, 1e-5));
    }

    #[test]
    fn rbf_lengthscale_gradient_at_unit_distance() {
        let k = KernelSpec::rbf(vec![1.0], 1.0).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let g = k.gram_grad(&x, ParamId(0)).unwrap();
        assert!(close(g[(0, 1)], (-0.5f64).exp(), 1e-15));
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn variance_gradient_is_gram() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i as f64 * 0.37 + j as f64).sin());
        let k = KernelSpec::sum(
            KernelSpec::rbf(vec![0.5, 1.5], 0.8).unwrap(),
            KernelSpec::matern(Nu::FiveHalves, vec![1.0, 0.3], 1.3).unwrap(),
        )
        .unwrap();
        let g_left = k.gram_grad(&x, ParamId(2)).unwrap();
        let left = KernelSpec::rbf(vec![0.5, 1.5], 0.8).unwrap().gram_sym(&x).unwrap();
        assert!((g_left - left).abs().max() < 1e-15);
        assert!(k.gram_grad(&x, ParamId(6)).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(KernelSpec::rbf(vec![0.0], 1.0).is_err());
        assert!(KernelSpec::rbf(vec![1.0], -1.0).is_err());
        assert!(KernelSpec::rbf(vec![], 1.0).is_err());
        assert!(KernelSpec::sum(
            KernelSpec::rbf(vec![1.0], 1.0).unwrap(),
            KernelSpec::rbf(vec![1.0, 1.0], 1.0).unwrap()
        )
        .is_err());
        let k = KernelSpec::rbf(vec![1.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            k.eval(&[1.0], &[1.0, 2.0]),
            Err(KernelError::DimensionMismatch { .. })
        ));
        assert!(Nu::try_from(1.0).is_err());
    }

    #[test]
    fn log_params_round_trip() {
        let k = KernelSpec::sum(
            KernelSpec::rbf(vec![0.5, 1.5], 0.8).unwrap(),
            KernelSpec::matern(Nu::ThreeHalves, vec![1.0, 0.3], 1.3).unwrap(),
        )
        .unwrap();
        let p = k.log_params();
        assert_eq!(p.len(), 6);
        let back = k.with_log_params(&p).unwrap();
        for (a, b) in back.log_params().iter().zip(&p) {
            assert!(close(*a, *b, 1e-14));
        }
        assert!(k.with_log_params(&p[..5]).is_err());
        assert_eq!(k.param_name(ParamId(5)).unwrap(), "leaf1.ln_variance");
        assert_eq!(k.param_name(ParamId(3)).unwrap(), "leaf1.ln_lengthscale[0]");
        assert_eq!(k.param_name(ParamId(6)), None);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let k = KernelSpec::sum(
            KernelSpec::rbf(vec![0.1, 1.0 / 3.0], 0.8).unwrap(),
            KernelSpec::matern(Nu::FiveHalves, vec![1.0, 0.3], 1.3).unwrap(),
        )
        .unwrap();
        let text = serde_json::to_string(&k).unwrap();
        assert!(text.contains("\"nu\":2.5"));
        let back: KernelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, k);
        let bad = r#"{"variant":"matern","nu":1.0,"lengthscales":[1.0],"variance":1.0}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
        let bad = r#"{"variant":"rbf","lengthscales":[-1.0],"variance":1.0}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
    }

    #[test]
    fn jitter_ladder() {
        let id = DMatrix::<f64>::identity(3, 3);
        let c = cholesky_jitter(&id, &JitterLadder::default()).unwrap();
        assert_eq!(c.jitter, 0.0);
        assert_eq!(c.factor.to_matrix(), id);

        let ones = DMatrix::from_element(2, 2, 1.0);
        let c = cholesky_jitter(&ones, &JitterLadder::default()).unwrap();
        assert_eq!(c.jitter, 1e-8);
        let l = c.factor.to_matrix();
        let rec = &l * l.transpose() - (&ones + DMatrix::identity(2, 2) * 1e-8);
        assert!(rec.abs().max() <= 1e-10);

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_jitter(&indefinite, &JitterLadder::default()),
            Err(KernelError::FactorizationFailed(_))
        ));
    }
}
