//! Univariate penalized cubic regression splines.
//!
//! A fit minimizes
//!
//! ```text
//!     Σ w̃_i (y_i − g(x_i))² + λ ∫₀¹ g''(t)² dt,      w̃_i = w_i / Σ_j w_j
//! ```
//!
//! over `g` in the span of a clamped cubic B-spline basis on `[0,1]`. With no
//! weights `w̃_i = 1/n`. The roughness penalty is the exact Gram matrix of
//! second derivatives, so functions in `span{1, t}` are never penalized.
//!
//! Linear systems are solved in coordinates where that null space is
//! axis-aligned (`c = T β`, with the first two columns of `T` being the
//! coefficient vectors of `1` and `t`), followed by a diagonal scaling. This
//! keeps very large `λ` well conditioned.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, symmetric_eigen, Cholesky};
use crate::scalar::Real;

const DEGREE: usize = 3;

/// Nonzero basis values at one point: `values[k]` belongs to basis function `first + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow<T> {
    pub first: usize,
    pub values: [T; DEGREE + 1],
}

impl<T: Real> BasisRow<T> {
    #[inline]
    pub fn dot(&self, coef: &[T]) -> T {
        let mut s = T::zero();
        for k in 0..=DEGREE {
            s += self.values[k] * coef[self.first + k];
        }
        s
    }
}

/// Clamped cubic B-spline basis on `[0,1]` with its second-derivative penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis<T> {
    knots: Vec<T>,
    dim: usize,
    omega: Array2<T>,
    greville: Vec<T>,
    omega_t: Array2<T>,
}

impl<T: Real> SplineBasis<T> {
    /// Builds a basis of dimension `k` with interior knots at evenly spaced
    /// quantiles of the distinct values of `x`. `k` is reduced to the number of
    /// distinct values when there are fewer; fewer than 4 is an error.
    pub fn from_data(x: &[T], k: usize) -> Result<Self> {
        if k < 4 {
            return Err(Error::Domain(format!("basis dimension must be at least 4, got {k}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariate values must be finite".into()));
        }
        let mut distinct: Vec<T> = x.iter().map(|&v| v.max(T::zero()).min(T::one())).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        distinct.dedup();
        let m = distinct.len();
        if m < 4 {
            return Err(Error::DegenerateBasis { distinct: m });
        }
        let k = k.min(m);
        let segments = T::from_usize_lossy(k - 3);
        let span = T::from_usize_lossy(m - 1);
        let interior: Vec<T> = (1..=k - 4)
            .map(|j| {
                let pos = T::from_usize_lossy(j) * span / segments;
                let lo = pos.floor().to_usize().expect("nonnegative position").min(m - 2);
                let frac = pos - T::from_usize_lossy(lo);
                distinct[lo] + frac * (distinct[lo + 1] - distinct[lo])
            })
            .collect();
        Self::with_interior_knots(&interior)
    }

    /// Basis with the given strictly increasing interior knots in `(0,1)`;
    /// its dimension is `interior.len() + 4`.
    pub fn with_interior_knots(interior: &[T]) -> Result<Self> {
        let mut prev = T::zero();
        for &t in interior {
            if !(t > prev && t < T::one()) {
                return Err(Error::Numerical(
                    "interior knots must be strictly increasing inside (0,1)".into(),
                ));
            }
            prev = t;
        }
        let mut knots = vec![T::zero(); DEGREE + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(T::one()).take(DEGREE + 1));
        let dim = interior.len() + DEGREE + 1;
        let greville = (0..dim)
            .map(|i| (knots[i + 1] + knots[i + 2] + knots[i + 3]) / T::lit(3.0))
            .collect();
        let mut basis = SplineBasis {
            knots,
            dim,
            omega: Array2::zeros((dim, dim)),
            greville,
            omega_t: Array2::zeros((dim, dim)),
        };
        basis.omega = basis.compute_penalty();
        basis.omega_t = basis.transformed_penalty();
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Full knot vector, boundary knots repeated four times.
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[T] {
        &self.knots[DEGREE + 1..self.knots.len() - DEGREE - 1]
    }

    /// `Ω_kl = ∫₀¹ b_k''(t) b_l''(t) dt`.
    pub fn penalty(&self) -> &Array2<T> {
        &self.omega
    }

    /// Coefficients reproducing the identity function `t` (Greville abscissae).
    pub fn greville(&self) -> &[T] {
        &self.greville
    }

    fn span(&self, x: T) -> usize {
        let last = self.dim - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // largest s in [DEGREE, last] with knots[s] <= x
        let (mut lo, mut hi) = (DEGREE, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Values of the four nonzero basis functions at `x` (clamped to `[0,1]`).
    pub fn eval(&self, x: T) -> BasisRow<T> {
        let x = x.max(T::zero()).min(T::one());
        let s = self.span(x);
        BasisRow {
            first: s - DEGREE,
            values: basis_values(&self.knots, s, x),
        }
    }

    /// Values, first and second derivatives of the nonzero basis functions at `x`.
    pub fn eval_derivatives(&self, x: T) -> [BasisRow<T>; 3] {
        let x = x.max(T::zero()).min(T::one());
        let s = self.span(x);
        let ders = basis_derivatives(&self.knots, s, x);
        let first = s - DEGREE;
        [0, 1, 2].map(|d| BasisRow {
            first,
            values: ders[d],
        })
    }

    /// Dense `n × K` design matrix.
    pub fn design_matrix(&self, x: &[T]) -> Array2<T> {
        let mut b = Array2::zeros((x.len(), self.dim));
        for (i, &xi) in x.iter().enumerate() {
            let row = self.eval(xi);
            for k in 0..=DEGREE {
                b[[i, row.first + k]] = row.values[k];
            }
        }
        b
    }

    /// Second derivatives are linear on each knot interval, so their products
    /// are quadratic and two-point Gauss–Legendre is exact per interval.
    fn compute_penalty(&self) -> Array2<T> {
        let mut omega = Array2::zeros((self.dim, self.dim));
        let offset = T::one() / T::lit(3.0).sqrt();
        for s in DEGREE..self.dim {
            let (a, b) = (self.knots[s], self.knots[s + 1]);
            if b <= a {
                continue;
            }
            let half = (b - a) / T::lit(2.0);
            let mid = (a + b) / T::lit(2.0);
            for node in [mid - half * offset, mid + half * offset] {
                let d2 = basis_derivatives(&self.knots, s, node)[2];
                for p in 0..=DEGREE {
                    for q in p..=DEGREE {
                        omega[[s - DEGREE + p, s - DEGREE + q]] += half * d2[p] * d2[q];
                    }
                }
            }
        }
        for i in 0..self.dim {
            for j in 0..i {
                omega[[i, j]] = omega[[j, i]];
            }
        }
        omega
    }

    /// `Tᵀ Ω T` with the null-space rows and columns set to exactly zero.
    fn transformed_penalty(&self) -> Array2<T> {
        let mut out = self.omega.clone();
        for i in 0..self.dim {
            out[[0, i]] = T::zero();
            out[[i, 0]] = T::zero();
            out[[1, i]] = T::zero();
            out[[i, 1]] = T::zero();
        }
        out
    }

    /// `Tᵀ v`.
    fn to_reduced(&self, v: &[T]) -> Array1<T> {
        let mut out = Array1::from(v.to_vec());
        out[0] = v.iter().copied().sum();
        out[1] = v.iter().zip(&self.greville).map(|(a, g)| *a * *g).sum();
        out
    }

    /// `T β`.
    fn from_reduced(&self, beta: &Array1<T>) -> Array1<T> {
        let mut c = beta.clone();
        c[0] = T::zero();
        c[1] = T::zero();
        for i in 0..self.dim {
            c[i] += beta[0] + beta[1] * self.greville[i];
        }
        c
    }

    /// `Tᵀ M T` for symmetric `M`.
    fn congruence(&self, m: &Array2<T>) -> Array2<T> {
        let k = self.dim;
        // M T
        let mut mt = m.clone();
        for i in 0..k {
            let mut s0 = T::zero();
            let mut s1 = T::zero();
            for j in 0..k {
                s0 += m[[i, j]];
                s1 += m[[i, j]] * self.greville[j];
            }
            mt[[i, 0]] = s0;
            mt[[i, 1]] = s1;
        }
        // Tᵀ (M T)
        let mut out = mt.clone();
        for j in 0..k {
            let mut s0 = T::zero();
            let mut s1 = T::zero();
            for i in 0..k {
                s0 += mt[[i, j]];
                s1 += mt[[i, j]] * self.greville[i];
            }
            out[[0, j]] = s0;
            out[[1, j]] = s1;
        }
        out
    }
}

/// Nonzero B-spline values at `x` in knot span `s`.
fn basis_values<T: Real>(knots: &[T], s: usize, x: T) -> [T; DEGREE + 1] {
    let mut n = [T::zero(); DEGREE + 1];
    let mut left = [T::zero(); DEGREE + 1];
    let mut right = [T::zero(); DEGREE + 1];
    n[0] = T::one();
    for j in 1..=DEGREE {
        left[j] = x - knots[s + 1 - j];
        right[j] = knots[s + j] - x;
        let mut saved = T::zero();
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Nonzero B-spline values and first two derivatives at `x` in knot span `s`
/// (de Boor / Cox recurrences in the triangular-table form).
fn basis_derivatives<T: Real>(knots: &[T], s: usize, x: T) -> [[T; DEGREE + 1]; 3] {
    const P: usize = DEGREE;
    let mut ndu = [[T::zero(); P + 1]; P + 1];
    let mut left = [T::zero(); P + 1];
    let mut right = [T::zero(); P + 1];
    ndu[0][0] = T::one();
    for j in 1..=P {
        left[j] = x - knots[s + 1 - j];
        right[j] = knots[s + j] - x;
        let mut saved = T::zero();
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[T::zero(); P + 1]; 3];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let mut a = [[T::zero(); P + 1]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = T::one();
        for k in 1..=2usize {
            let mut d = T::zero();
            let rk = r as isize - k as isize;
            let pk = P - k;
            if r >= k {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { P - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = T::from_usize_lossy(P);
    for k in 1..=2 {
        for j in 0..=P {
            ders[k][j] *= factor;
        }
        factor *= T::from_usize_lossy(P - k);
    }
    ders
}

/// Builds the basis for covariate values `x` with target dimension `k`.
pub fn build_basis<T: Real>(x: &[T], k: usize) -> Result<SplineBasis<T>> {
    SplineBasis::from_data(x, k)
}

/// A fitted penalized spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit<T> {
    pub basis: SplineBasis<T>,
    pub coefficients: Array1<T>,
    pub lambda: T,
    /// Trace of the hat matrix.
    pub edf: T,
    /// `n · Σ w̃_i (y_i − ĝ(x_i))²`; the plain residual sum of squares when unweighted.
    pub rss: T,
    pub gcv_score: T,
}

impl<T: Real> SplineFit<T> {
    pub fn predict_one(&self, x: T) -> T {
        self.basis.eval(x).dot(self.coefficients.as_slice().expect("contiguous"))
    }

    pub fn predict(&self, x: &[T]) -> Vec<T> {
        x.iter().map(|&v| self.predict_one(v)).collect()
    }

    /// `cᵀ Ω c = ∫₀¹ ĝ''(t)² dt`.
    pub fn roughness(&self) -> T {
        quad_form(self.basis.penalty(), self.coefficients.view())
    }

    /// Adds a constant to the fitted function (B-splines sum to one).
    pub fn shift(&mut self, delta: T) {
        self.coefficients.mapv_inplace(|c| c + delta);
    }
}

/// `B(x_new) c`, with `x_new` clamped to `[0,1]`.
pub fn predict_spline<T: Real>(fit: &SplineFit<T>, x_new: &[T]) -> Vec<T> {
    fit.predict(x_new)
}

/// Penalized system factored at one `λ`.
#[derive(Debug, Clone)]
pub(crate) struct Factored<T> {
    pub lambda: T,
    chol: Cholesky<T>,
    scale: Vec<T>,
    pub edf: T,
}

/// Reduced coefficients `β` from the right-hand side `Tᵀ Bᵀ W̃ r`.
impl<T: Real> Factored<T> {
    fn solve(&self, rhs: &Array1<T>) -> Array1<T> {
        let mut v: Vec<T> = rhs.iter().zip(&self.scale).map(|(r, s)| *r * *s).collect();
        self.chol.solve_in_place(&mut v);
        Array1::from_iter(v.into_iter().zip(&self.scale).map(|(v, s)| v * *s))
    }
}

/// Simultaneous diagonalization of `G'` and `Ω'`: with `G' = L Lᵀ` and
/// `L⁻¹ Ω' L⁻ᵀ = U diag(s) Uᵀ`, the hat matrix at `λ` has eigenvalues
/// `1/(1 + λ s_k)`, so every grid point costs `O(K)`.
#[derive(Debug, Clone)]
struct Spectral<T> {
    lower: Cholesky<T>,
    vectors: Array2<T>,
    values: Vec<T>,
}

impl<T: Real> Spectral<T> {
    fn new(gram_t: &Array2<T>, omega_t: &Array2<T>) -> Option<Self> {
        let k = gram_t.nrows();
        let lower = Cholesky::factor(gram_t)?;
        // L⁻¹ column by column
        let mut linv = Array2::<T>::zeros((k, k));
        let mut col = vec![T::zero(); k];
        for j in 0..k {
            col.iter_mut().for_each(|v| *v = T::zero());
            col[j] = T::one();
            lower.forward_in_place(&mut col);
            for i in 0..k {
                linv[[i, j]] = col[i];
            }
        }
        let m = linv.dot(omega_t).dot(&linv.t());
        // rows/columns 0 and 1 of m are exactly zero: L⁻¹ is lower triangular
        // and Ω' vanishes on the first two coordinates.
        let block = m.slice(ndarray::s![2.., 2..]).to_owned();
        let block = (&block + &block.t()).mapv(|v| v / T::lit(2.0));
        let (vals, vecs) = symmetric_eigen(&block);
        let mut vectors = Array2::<T>::zeros((k, k));
        vectors[[0, 0]] = T::one();
        vectors[[1, 1]] = T::one();
        vectors.slice_mut(ndarray::s![2.., 2..]).assign(&vecs);
        let mut values = vec![T::zero(); 2];
        values.extend(vals.into_iter().map(|v| v.max(T::zero())));
        Some(Spectral { lower, vectors, values })
    }

    /// `Uᵀ L⁻¹ rhs`.
    fn project(&self, rhs: &Array1<T>) -> Vec<T> {
        let mut v = rhs.to_vec();
        self.lower.forward_in_place(&mut v);
        let k = v.len();
        (0..k)
            .map(|j| (0..k).map(|i| self.vectors[[i, j]] * v[i]).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Selection<T> {
    pub factored: Factored<T>,
    pub coefficients: Array1<T>,
}

/// Basis evaluated at fixed data points with fixed weights: everything about a
/// penalized fit that does not depend on the response or on `λ`.
#[derive(Debug, Clone)]
pub(crate) struct Smoother<'a, T> {
    pub basis: &'a SplineBasis<T>,
    rows: Vec<BasisRow<T>>,
    weights: Vec<T>,
    gram_t: Array2<T>,
    spectral: std::cell::OnceCell<Option<Spectral<T>>>,
}

impl<'a, T: Real> Smoother<'a, T> {
    pub fn new(basis: &'a SplineBasis<T>, x: &[T], weights: Option<&[T]>) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::Domain(format!("penalized fit needs at least 2 observations, got {n}")));
        }
        let weights = normalized_weights(n, weights)?;
        let rows: Vec<BasisRow<T>> = x.iter().map(|&v| basis.eval(v)).collect();
        let k = basis.dim();
        let mut gram = Array2::<T>::zeros((k, k));
        for (row, &w) in rows.iter().zip(&weights) {
            for p in 0..=DEGREE {
                let wp = w * row.values[p];
                for q in 0..=DEGREE {
                    gram[[row.first + p, row.first + q]] += wp * row.values[q];
                }
            }
        }
        let gram_t = basis.congruence(&gram);
        Ok(Smoother {
            basis,
            rows,
            weights,
            gram_t,
            spectral: std::cell::OnceCell::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// `Tᵀ Bᵀ W̃ r`.
    pub fn rhs(&self, r: &[T]) -> Array1<T> {
        let mut b = vec![T::zero(); self.basis.dim()];
        for ((row, &w), &ri) in self.rows.iter().zip(&self.weights).zip(r) {
            let wr = w * ri;
            for p in 0..=DEGREE {
                b[row.first + p] += wr * row.values[p];
            }
        }
        self.basis.to_reduced(&b)
    }

    pub fn factor(&self, lambda: T) -> Result<Factored<T>> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be a finite nonnegative real, got {lambda}")));
        }
        let k = self.basis.dim();
        let mut a = &self.gram_t + &self.basis.omega_t.mapv(|v| v * lambda);
        let scale: Vec<T> = (0..k)
            .map(|i| {
                let d = a[[i, i]];
                if d > T::zero() {
                    T::one() / d.sqrt()
                } else {
                    T::one()
                }
            })
            .collect();
        for i in 0..k {
            for j in 0..k {
                a[[i, j]] = a[[i, j]] * scale[i] * scale[j];
            }
        }
        let (chol, _) = Cholesky::factor_with_ridge(&a)?;
        let mut g = self.gram_t.clone();
        for i in 0..k {
            for j in 0..k {
                g[[i, j]] = g[[i, j]] * scale[i] * scale[j];
            }
        }
        let edf = chol.trace_solve(&g);
        Ok(Factored {
            lambda,
            chol,
            scale,
            edf,
        })
    }

    /// Original-basis coefficients for a factored system.
    pub fn coefficients(&self, factored: &Factored<T>, rhs: &Array1<T>) -> (Array1<T>, Array1<T>) {
        let beta = factored.solve(rhs);
        let c = self.basis.from_reduced(&beta);
        (beta, c)
    }

    pub fn fitted(&self, coef: &Array1<T>) -> Vec<T> {
        let c = coef.as_slice().expect("contiguous");
        self.rows.iter().map(|row| row.dot(c)).collect()
    }

    /// `n · Σ w̃ (r − fitted)²`.
    pub fn rss(&self, r: &[T], coef: &Array1<T>) -> T {
        let c = coef.as_slice().expect("contiguous");
        let n = T::from_usize_lossy(self.len());
        n * self
            .rows
            .iter()
            .zip(&self.weights)
            .zip(r)
            .map(|((row, &w), &ri)| {
                let e = ri - row.dot(c);
                w * e * e
            })
            .sum::<T>()
    }

    pub fn gcv(&self, rss: T, edf: T) -> Option<T> {
        let n = T::from_usize_lossy(self.len());
        let denom = n - edf;
        (denom > T::zero()).then(|| n * rss / (denom * denom))
    }

    /// GCV search over `grid`; ties (within a relative `1e-8`, plus a floor at
    /// round-off level of `rᵀW̃r`) go to the largest `λ`.
    pub fn select(&self, r: &[T], grid: &[T]) -> Result<Selection<T>> {
        if grid.is_empty() {
            return Err(Error::Domain("lambda grid is empty".into()));
        }
        if let Some(&bad) = grid.iter().find(|l| !(**l >= T::zero()) || !l.is_finite()) {
            return Err(Error::Domain(format!("lambda must be a finite nonnegative real, got {bad}")));
        }
        let rhs = self.rhs(r);
        let n = T::from_usize_lossy(self.len());
        let rwr: T = self.weights.iter().zip(r).map(|(&w, &v)| w * v * v).sum();
        let spectral = self
            .spectral
            .get_or_init(|| Spectral::new(&self.gram_t, &self.basis.omega_t));
        let two = T::lit(2.0);
        let mut scored: Vec<(T, T)> = Vec::with_capacity(grid.len());
        match spectral {
            Some(sp) => {
                let z = sp.project(&rhs);
                for &lambda in grid {
                    let mut edf = T::zero();
                    let mut explained = T::zero();
                    for (&sk, &zk) in sp.values.iter().zip(&z) {
                        let d = T::one() / (T::one() + lambda * sk);
                        edf += d;
                        explained += (two * d - d * d) * zk * zk;
                    }
                    let rss = (n * (rwr - explained)).max(T::zero());
                    if let Some(score) = self.gcv(rss, edf) {
                        scored.push((score, lambda));
                    }
                }
            }
            None => {
                for &lambda in grid {
                    let f = self.factor(lambda)?;
                    let beta = f.solve(&rhs);
                    let fit_term = beta.dot(&rhs);
                    let quad = quad_form(&self.gram_t, beta.view());
                    let rss = (n * (rwr - fit_term - fit_term + quad)).max(T::zero());
                    if let Some(score) = self.gcv(rss, f.edf) {
                        scored.push((score, lambda));
                    }
                }
            }
        }
        if scored.is_empty() {
            return Err(Error::Numerical("hat-matrix trace reaches n at every grid lambda".into()));
        }
        let best = scored.iter().map(|s| s.0).fold(T::infinity(), T::min);
        let tol = T::lit(1e-8) * best + T::lit(1e-10) * rwr;
        let lambda = scored
            .into_iter()
            .filter(|s| s.0 <= best + tol)
            .map(|s| s.1)
            .fold(T::neg_infinity(), T::max);
        let factored = self.factor(lambda)?;
        let (_, coefficients) = self.coefficients(&factored, &rhs);
        Ok(Selection {
            factored,
            coefficients,
        })
    }

    pub fn into_fit(&self, coefficients: Array1<T>, lambda: T, edf: T, r: &[T]) -> SplineFit<T> {
        let rss = self.rss(r, &coefficients);
        let gcv_score = self.gcv(rss, edf).unwrap_or(T::infinity());
        SplineFit {
            basis: self.basis.clone(),
            coefficients,
            lambda,
            edf,
            rss,
            gcv_score,
        }
    }
}

fn normalized_weights<T: Real>(n: usize, weights: Option<&[T]>) -> Result<Vec<T>> {
    match weights {
        None => Ok(vec![T::one() / T::from_usize_lossy(n); n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::Domain(format!("{} weights for {n} observations", w.len())));
            }
            if w.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
                return Err(Error::Domain("weights must be positive and finite".into()));
            }
            let total: T = w.iter().copied().sum();
            Ok(w.iter().map(|&v| v / total).collect())
        }
    }
}

fn check_lengths<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("x has {} values but y has {}", x.len(), y.len())));
    }
    Ok(())
}

/// Penalized least-squares fit at a fixed `λ`.
pub fn fit_pls<T: Real>(
    basis: &SplineBasis<T>,
    x: &[T],
    y: &[T],
    weights: Option<&[T]>,
    lambda: T,
) -> Result<SplineFit<T>> {
    check_lengths(x, y)?;
    let sm = Smoother::new(basis, x, weights)?;
    let f = sm.factor(lambda)?;
    let (_, c) = sm.coefficients(&f, &sm.rhs(y));
    Ok(sm.into_fit(c, lambda, f.edf, y))
}

/// Fit at the GCV-minimizing `λ` of `grid`, where
/// `GCV(λ) = n · RSS(λ) / (n − tr H_λ)²` and `RSS = n·Σ w̃_i e_i²`.
pub fn gcv_select<T: Real>(
    basis: &SplineBasis<T>,
    x: &[T],
    y: &[T],
    weights: Option<&[T]>,
    grid: &[T],
) -> Result<SplineFit<T>> {
    check_lengths(x, y)?;
    let sm = Smoother::new(basis, x, weights)?;
    let sel = sm.select(y, grid)?;
    Ok(sm.into_fit(sel.coefficients, sel.factored.lambda, sel.factored.edf, y))
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let steps = T::from_usize_lossy(count - 1);
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else {
                        (a + (b - a) * T::from_usize_lossy(i) / steps).exp()
                    }
                })
                .collect()
        }
    }
}

/// 40 log-spaced values on `[1e-8, 1e4]`.
pub fn default_lambda_grid<T: Real>() -> Vec<T> {
    log_grid(T::lit(1e-8), T::lit(1e4), 40)
}
