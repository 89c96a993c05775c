//! Selective context aggregation.
//!
//! Every neuron `i` of the input map (row-major over `(h, w)`) is rewritten as
//!
//! ```text
//! h_i = a_ii · W_d x_i + (1 / (S_i + ε)) · Σ_{j≠i} a_ij · W_c x_j,   S_i = Σ_{j≠i} a_ij
//! ```
//!
//! where `A = (a_ij)` is an input-dependent dependency matrix with unit
//! diagonal and nonnegative entries. When `S_i = 0` the context term is
//! exactly zero. `W_d` extracts the *identity* feature of a neuron, `W_c`
//! its *context* feature.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, FeatureMap, Matrix};

/// Guard added to every normalisation denominator.
pub const NORM_EPSILON: f64 = 1e-12;

/// `n × n` nonnegative coefficients with `a_ii = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DependencyMatrix {
    /// No context at all: `a_ij = [i = j]`.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// Uniform context: every coefficient is one.
    pub fn ones(n: usize) -> Self {
        Self {
            n,
            data: vec![1.0; n * n],
        }
    }

    /// Validates the unit-diagonal, nonnegative, finite invariants.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::shape(format!(
                "dependency matrix with n = {n} needs {} coefficients, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = data[i * n + j];
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::data(format!("a[{i},{j}] = {a} must be finite and nonnegative")));
                }
                if i == j && a != 1.0 {
                    return Err(Error::data(format!("diagonal a[{i},{i}] = {a} must be 1")));
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Random off-diagonal coefficients in `[lo, hi)`, `0 <= lo`.
    pub fn random<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        assert!(lo >= 0.0 && hi > lo);
        let mut m = Self::identity(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.data[i * n + j] = rng.gen_range(lo..hi);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Overwrites an off-diagonal coefficient.
    pub fn set_off_diagonal(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i == j {
            return Err(Error::usage(format!("a[{i},{i}] is pinned to 1")));
        }
        if i >= self.n || j >= self.n {
            return Err(Error::shape(format!("index ({i},{j}) outside {0}x{0}", self.n)));
        }
        if !value.is_finite() || value < 0.0 {
            return Err(Error::data(format!("a[{i},{j}] = {value} must be finite and nonnegative")));
        }
        self.data[i * self.n + j] = value;
        Ok(())
    }

    /// Sum of the off-diagonal entries of row `i`.
    pub fn context_mass(&self, i: usize) -> f64 {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, a)| a)
            .sum()
    }

    /// `A' = P A Pᵀ` for the neuron relabelling `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> DependencyMatrix {
        assert_eq!(perm.len(), self.n);
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for (ni, &oi) in perm.iter().enumerate() {
            for (nj, &oj) in perm.iter().enumerate() {
                data[ni * n + nj] = self.data[oi * n + oj];
            }
        }
        DependencyMatrix { n, data }
    }
}

/// Identity-feature and context-feature projections, both `M × N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaParams {
    pub w_d: Matrix,
    pub w_c: Matrix,
}

impl ScaParams {
    pub fn new(w_d: Matrix, w_c: Matrix) -> Result<Self> {
        if (w_d.rows(), w_d.cols()) != (w_c.rows(), w_c.cols()) {
            return Err(Error::shape(format!(
                "W_d is {} but W_c is {}",
                w_d.shape_string(),
                w_c.shape_string()
            )));
        }
        Ok(Self { w_d, w_c })
    }

    /// He-uniform initialisation for both projections.
    pub fn he_uniform<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_channels as f64).sqrt();
        Self {
            w_d: Matrix::random(out_channels, in_channels, -limit, limit, rng),
            w_c: Matrix::random(out_channels, in_channels, -limit, limit, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w_d.cols()
    }

    pub fn out_channels(&self) -> usize {
        self.w_d.rows()
    }
}

#[derive(Clone, Debug)]
pub struct ScaGradients {
    pub x: FeatureMap,
    /// `n × n`, row-major. The diagonal is exactly zero.
    pub a: Vec<f64>,
    pub w_d: Matrix,
    pub w_c: Matrix,
}

fn check_shapes(x: &FeatureMap, a: &DependencyMatrix, params: &ScaParams) -> Result<()> {
    if a.n() != x.neurons() {
        return Err(Error::shape(format!(
            "dependency matrix is {0}x{0} but the feature map {1} has {2} neurons",
            a.n(),
            x.shape_string(),
            x.neurons()
        )));
    }
    if params.in_channels() != x.channels() {
        return Err(Error::shape(format!(
            "W_d/W_c are {} but the feature map {} has {} channels",
            params.w_d.shape_string(),
            x.shape_string(),
            x.channels()
        )));
    }
    if (params.w_c.rows(), params.w_c.cols()) != (params.w_d.rows(), params.w_d.cols()) {
        return Err(Error::shape("W_d and W_c shapes differ"));
    }
    Ok(())
}

/// Per-neuron projections `W x_i`, as an `n × M` matrix.
fn project(x: &FeatureMap, w: &Matrix) -> Matrix {
    let n = x.neurons();
    let mut out = Matrix::zeros(n, w.rows());
    for i in 0..n {
        w.mul_vec_into(x.neuron(i), out.row_mut(i));
    }
    out
}

pub fn sca_forward(x: &FeatureMap, a: &DependencyMatrix, params: &ScaParams) -> Result<FeatureMap> {
    check_shapes(x, a, params)?;
    let n = x.neurons();
    let m = params.out_channels();
    let identity = project(x, &params.w_d);
    let context = project(x, &params.w_c);
    let mut out = FeatureMap::zeros(x.height(), x.width(), m);
    let mut acc = vec![0.0; m];
    for i in 0..n {
        let a_ii = a.get(i, i);
        let mass = a.context_mass(i);
        let h = &mut out.data_mut()[i * m..(i + 1) * m];
        for (hk, dk) in h.iter_mut().zip(identity.row(i)) {
            *hk = a_ii * dk;
        }
        if mass == 0.0 {
            continue;
        }
        acc.fill(0.0);
        for (j, &a_ij) in a.row(i).iter().enumerate() {
            if j != i && a_ij != 0.0 {
                for (s, c) in acc.iter_mut().zip(context.row(j)) {
                    *s += a_ij * c;
                }
            }
        }
        let inv = 1.0 / (mass + NORM_EPSILON);
        for (hk, s) in h.iter_mut().zip(&acc) {
            *hk += inv * s;
        }
    }
    Ok(out)
}

/// Reverse pass of [`sca_forward`].
///
/// With `g_i = ∂L/∂h_i`, `c_j = W_c x_j`, `S_i` the off-diagonal row mass and
/// `p_ij = a_ij / (S_i + ε)`:
///
/// * `∂L/∂x_i  = a_ii W_dᵀ g_i + Σ_{k≠i} p_ki W_cᵀ g_k`
/// * `∂L/∂a_ij = g_i · Σ_{k≠i} a_ik (c_j − c_k) / (S_i + ε)²` for `j ≠ i`, zero on the diagonal
/// * `∂L/∂W_d  = Σ_i a_ii g_i x_iᵀ`
/// * `∂L/∂W_c  = Σ_i Σ_{j≠i} p_ij g_i x_jᵀ`
pub fn sca_backward(
    x: &FeatureMap,
    a: &DependencyMatrix,
    params: &ScaParams,
    d_h: &FeatureMap,
) -> Result<ScaGradients> {
    check_shapes(x, a, params)?;
    let n = x.neurons();
    let m = params.out_channels();
    let c_in = params.in_channels();
    if d_h.dims() != (x.height(), x.width(), m) {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match output {}x{}x{m}",
            d_h.shape_string(),
            x.height(),
            x.width()
        )));
    }
    let context = project(x, &params.w_c);

    let mut d_context = Matrix::zeros(n, m);
    let mut d_a = vec![0.0; n * n];
    let mut d_w_d = Matrix::zeros(m, c_in);
    let mut weighted = vec![0.0; m];
    for i in 0..n {
        let g = d_h.neuron(i);
        d_w_d.add_outer(a.get(i, i), g, x.neuron(i));
        let mass = a.context_mass(i);
        if mass == 0.0 {
            continue;
        }
        let denom = mass + NORM_EPSILON;
        let inv = 1.0 / denom;
        // Σ_{k≠i} a_ik c_k
        weighted.fill(0.0);
        for (k, &a_ik) in a.row(i).iter().enumerate() {
            if k != i && a_ik != 0.0 {
                for (w, c) in weighted.iter_mut().zip(context.row(k)) {
                    *w += a_ik * c;
                }
                for (d, gk) in d_context.row_mut(k).iter_mut().zip(g) {
                    *d += a_ik * inv * gk;
                }
            }
        }
        let g_weighted = dot(g, &weighted);
        let inv_sq = inv * inv;
        for j in 0..n {
            if j != i {
                d_a[i * n + j] = (mass * dot(g, context.row(j)) - g_weighted) * inv_sq;
            }
        }
    }

    let mut d_x = FeatureMap::zeros(x.height(), x.width(), c_in);
    let mut d_w_c = Matrix::zeros(m, c_in);
    let mut scaled = vec![0.0; m];
    for i in 0..n {
        let a_ii = a.get(i, i);
        for (s, g) in scaled.iter_mut().zip(d_h.neuron(i)) {
            *s = a_ii * g;
        }
        let dx = &mut d_x.data_mut()[i * c_in..(i + 1) * c_in];
        params.w_d.mul_transpose_vec_acc(&scaled, dx);
        params.w_c.mul_transpose_vec_acc(d_context.row(i), dx);
        d_w_c.add_outer(1.0, d_context.row(i), x.neuron(i));
    }

    Ok(ScaGradients {
        x: d_x,
        a: d_a,
        w_d: d_w_d,
        w_c: d_w_c,
    })
}

/// Parameter counts of a dense all-pairs layer versus the shared projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub fully_connected: u128,
    pub sca: u128,
}

/// `(n²·N·M, 2·N·M)` for `n` neurons, `N` input and `M` output channels.
pub fn param_count(n: usize, in_channels: usize, out_channels: usize) -> ParamCount {
    let (n, nc, mc) = (n as u128, in_channels as u128, out_channels as u128);
    ParamCount {
        fully_connected: n * n * nc * mc,
        sca: 2 * nc * mc,
    }
}
