use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{IpmError, KktBlock, NlpDims, ParametricNlp, PrimalDualPoint};
use crate::real::{c, Real};

pub(crate) fn check_dims<T: Real>(
    dims: &NlpDims,
    y: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
) -> Result<(), IpmError> {
    let checks = [
        ("z", dims.n_z, y.z.len()),
        ("lambda", dims.n_g, y.lambda.len()),
        ("mu", dims.n_h, y.mu.len()),
        ("state", dims.n_s, s.len()),
        ("theta", dims.n_theta, theta.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(IpmError::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
    }
    Ok(())
}

fn finite_vec<T: Real>(v: &DVector<T>, block: KktBlock) -> Result<(), IpmError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(IpmError::NonFinite(block))
    }
}

fn finite_mat<T: Real>(m: &DMatrix<T>, block: KktBlock) -> Result<(), IpmError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(IpmError::NonFinite(block))
    }
}

fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<(), IpmError> {
    if expected == got {
        Ok(())
    } else {
        Err(IpmError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// First-order evaluations shared by the residual and its Jacobian.
pub(crate) struct FirstOrder<T: Real> {
    pub grad: DVector<T>,
    pub g: DVector<T>,
    pub h: DVector<T>,
    pub gz: DMatrix<T>,
    pub hz: DMatrix<T>,
}

impl<T: Real> FirstOrder<T> {
    pub fn eval<N: ParametricNlp<T> + ?Sized>(
        nlp: &N,
        z: &DVector<T>,
        s: &DVector<T>,
        theta: &DVector<T>,
    ) -> Result<Self, IpmError> {
        let d = nlp.dims();
        let grad = nlp.cost_gradient(z, theta);
        expect_len("cost gradient", d.n_z, grad.len())?;
        finite_vec(&grad, KktBlock::Stationarity)?;
        let g = nlp.equalities(z, s, theta);
        expect_len("equalities", d.n_g, g.len())?;
        finite_vec(&g, KktBlock::Equality)?;
        let h = nlp.inequalities(z, theta);
        expect_len("inequalities", d.n_h, h.len())?;
        finite_vec(&h, KktBlock::Complementarity)?;
        let gz = nlp.equality_jacobian(z, s, theta);
        if gz.shape() != (d.n_g, d.n_z) {
            return Err(IpmError::DimensionMismatch {
                what: "equality jacobian",
                expected: d.n_g * d.n_z,
                got: gz.len(),
            });
        }
        finite_mat(&gz, KktBlock::Stationarity)?;
        let hz = nlp.inequality_jacobian(z, theta);
        if hz.shape() != (d.n_h, d.n_z) {
            return Err(IpmError::DimensionMismatch {
                what: "inequality jacobian",
                expected: d.n_h * d.n_z,
                got: hz.len(),
            });
        }
        finite_mat(&hz, KktBlock::Stationarity)?;
        Ok(Self { grad, g, h, gz, hz })
    }

    pub fn residual(&self, y: &PrimalDualPoint<T>, tau: T) -> DVector<T> {
        let (nz, ng, nh) = (y.z.len(), y.lambda.len(), y.mu.len());
        let mut r = DVector::zeros(nz + ng + nh);
        let stat = &self.grad + self.gz.tr_mul(&y.lambda) + self.hz.tr_mul(&y.mu);
        r.rows_mut(0, nz).copy_from(&stat);
        r.rows_mut(nz, ng).copy_from(&self.g);
        let comp = self.h.component_mul(&y.mu).add_scalar(tau);
        r.rows_mut(nz + ng, nh).copy_from(&comp);
        r
    }
}

/// Relaxed KKT residual `[∇_z L; G(z, s); diag(μ) H(z) + τ 1]`.
pub fn kkt_residual<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    y: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
    tau: T,
) -> Result<DVector<T>, IpmError> {
    check_dims(&nlp.dims(), y, s, theta)?;
    let fo = FirstOrder::eval(nlp, &y.z, s, theta)?;
    let r = fo.residual(y, tau);
    // products of finite blocks can still overflow
    let nz = y.z.len();
    let ng = y.lambda.len();
    finite_vec(&r.rows(0, nz).into_owned(), KktBlock::Stationarity)?;
    finite_vec(
        &r.rows(nz + ng, y.mu.len()).into_owned(),
        KktBlock::Complementarity,
    )?;
    Ok(r)
}

/// Jacobian `∂r/∂y` of [`kkt_residual`]:
///
/// ```text
/// [ ∇²L        Gzᵀ  Hzᵀ    ]
/// [ Gz         0    0      ]
/// [ diag(μ)Hz  0    diag(H)]
/// ```
pub fn kkt_jacobian<T: Real, N: ParametricNlp<T> + ?Sized>(
    nlp: &N,
    y: &PrimalDualPoint<T>,
    s: &DVector<T>,
    theta: &DVector<T>,
    _tau: T,
) -> Result<DMatrix<T>, IpmError> {
    let d = nlp.dims();
    check_dims(&d, y, s, theta)?;
    let fo = FirstOrder::eval(nlp, &y.z, s, theta)?;
    let w = nlp.lagrangian_hessian(&y.z, &y.lambda, &y.mu, theta);
    if w.shape() != (d.n_z, d.n_z) {
        return Err(IpmError::DimensionMismatch {
            what: "lagrangian hessian",
            expected: d.n_z * d.n_z,
            got: w.len(),
        });
    }
    finite_mat(&w, KktBlock::Stationarity)?;
    let (nz, ng, nh) = (d.n_z, d.n_g, d.n_h);
    let mut j = DMatrix::zeros(d.n_y(), d.n_y());
    j.view_mut((0, 0), (nz, nz)).copy_from(&w);
    j.view_mut((0, nz), (nz, ng)).copy_from(&fo.gz.transpose());
    j.view_mut((0, nz + ng), (nz, nh)).copy_from(&fo.hz.transpose());
    j.view_mut((nz, 0), (ng, nz)).copy_from(&fo.gz);
    for i in 0..nh {
        for k in 0..nz {
            j[(nz + ng + i, k)] = y.mu[i] * fo.hz[(i, k)];
        }
        j[(nz + ng + i, nz + ng + i)] = fo.h[i];
    }
    finite_mat(&j, KktBlock::Complementarity)?;
    Ok(j)
}

/// Factorization of the KKT Jacobian after eliminating `dμ`.
///
/// With `Σ = diag(-μ/H)` the condensed system is
/// `[W + HzᵀΣHz + δI, Gzᵀ; Gz, 0] [dz; dλ] = [b₁ - Hzᵀ(b₃/H); b₂]`
/// and `dμ = (b₃ - μ∘(Hz dz)) / H`. Requires `H < 0` elementwise.
pub(crate) struct CondensedKkt<T: Real> {
    lu: LU<T, Dyn, Dyn>,
    hz: DMatrix<T>,
    h: DVector<T>,
    mu: DVector<T>,
    n_z: usize,
    n_g: usize,
    pub regularization: T,
}

/// Ratio of smallest to largest pivot magnitude of an LU factorization.
fn pivot_ratio<T: Real>(lu: &LU<T, Dyn, Dyn>) -> T {
    let u = lu.u();
    let diag = u.diagonal();
    if diag.is_empty() {
        return T::one();
    }
    let mut lo = diag[0].abs();
    let mut hi = lo;
    for p in diag.iter() {
        let a = p.abs();
        if a < lo {
            lo = a;
        }
        if a > hi {
            hi = a;
        }
    }
    if hi == T::zero() || !lo.is_finite() || !hi.is_finite() {
        T::zero()
    } else {
        lo / hi
    }
}

impl<T: Real> CondensedKkt<T> {
    /// Factors with `δ = 0`, escalating through `1e-9, 1e-8, …` up to
    /// `max_reg` while the pivot ratio stays below `T::PIVOT_FLOOR`.
    pub fn factor(
        w: &DMatrix<T>,
        fo: &FirstOrder<T>,
        mu: &DVector<T>,
        max_reg: T,
    ) -> Result<Self, IpmError> {
        let n_z = w.nrows();
        let n_g = fo.gz.nrows();
        let sigma = mu.zip_map(&fo.h, |m, h| -m / h);
        let mut scaled = fo.hz.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= sigma[i];
        }
        let condensed = w + fo.hz.tr_mul(&scaled);

        let n = n_z + n_g;
        let mut k = DMatrix::zeros(n, n);
        k.view_mut((0, 0), (n_z, n_z)).copy_from(&condensed);
        k.view_mut((0, n_z), (n_z, n_g)).copy_from(&fo.gz.transpose());
        k.view_mut((n_z, 0), (n_g, n_z)).copy_from(&fo.gz);

        let floor = c::<T>(T::PIVOT_FLOOR);
        let mut delta = T::zero();
        let mut last_ratio = T::zero();
        loop {
            let mut kd = k.clone();
            for i in 0..n_z {
                kd[(i, i)] += delta;
            }
            let lu = kd.lu();
            let ratio = pivot_ratio(&lu);
            if ratio.is_finite() && ratio > floor {
                return Ok(Self {
                    lu,
                    hz: fo.hz.clone(),
                    h: fo.h.clone(),
                    mu: mu.clone(),
                    n_z,
                    n_g,
                    regularization: delta,
                });
            }
            last_ratio = if ratio.is_finite() { ratio } else { last_ratio };
            delta = if delta == T::zero() {
                c(1e-9)
            } else {
                delta * c(10.0)
            };
            if delta > max_reg * c(1.000001) {
                return Err(IpmError::SolverFailure {
                    regularization: max_reg.to_f64_lossy(),
                    pivot_ratio: last_ratio.to_f64_lossy(),
                });
            }
        }
    }

    /// Solves `J d = b` for the full (uncondensed) KKT Jacobian.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let (nz, ng, nh) = (self.n_z, self.n_g, self.h.len());
        let b1 = b.rows(0, nz);
        let b2 = b.rows(nz, ng);
        let b3 = b.rows(nz + ng, nh);
        let b3_over_h = b3.component_div(&self.h);
        let mut rhs = DVector::zeros(nz + ng);
        rhs.rows_mut(0, nz)
            .copy_from(&(b1 - self.hz.tr_mul(&b3_over_h)));
        rhs.rows_mut(nz, ng).copy_from(&b2);
        let sol = self
            .lu
            .solve(&rhs)
            .unwrap_or_else(|| DVector::from_element(nz + ng, c::<T>(f64::NAN)));
        let dz = sol.rows(0, nz).into_owned();
        let hz_dz = &self.hz * &dz;
        let dmu = (b3 - self.mu.component_mul(&hz_dz)).component_div(&self.h);
        let mut out = DVector::zeros(nz + ng + nh);
        out.rows_mut(0, nz + ng).copy_from(&sol);
        out.rows_mut(nz + ng, nh).copy_from(&dmu);
        out
    }

    pub fn solve_columns(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    /// Reciprocal pivot ratio of the condensed factorization.
    pub fn condition_estimate(&self) -> f64 {
        let r = pivot_ratio(&self.lu).to_f64_lossy();
        if r > 0.0 {
            1.0 / r
        } else {
            f64::INFINITY
        }
    }
}
