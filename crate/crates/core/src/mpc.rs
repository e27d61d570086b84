//! Economic battery MPC cast as a parametric NLP, and the smoothed policy
//! `π_θ(s) = u₀` obtained from its barrier-relaxed solution.
//!
//! Decision variables, in order:
//!
//! ```text
//! z = [x₀ … x_N | u₀⁺ u₀⁻ … u_{N-1}⁺ u_{N-1}⁻ | σ₀ … σ_N]
//! ```
//!
//! The piecewise-linear exchange cost is written with a buy/sell split
//! `u = u⁺ - u⁻`, `0 ≤ u± ≤ Ū`, costing `φ_b u⁺ - φ_s u⁻`. Because
//! `φ_b ≥ φ_s` at most one side is active at the optimum and the split
//! reproduces the kinked cost exactly while keeping the NLP smooth.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::battery::Tariff;
use crate::ipm::{
    self, IpmError, KktSparsity, NlpDims, ParametricNlp, PrimalDualPoint, SolveOptions,
    SolveReport,
};
use crate::real::{c, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("barrier parameter must be positive")]
    InvalidTau,
    #[error("policy evaluation failed at s = {state}: {source}")]
    Solver { state: f64, source: IpmError },
    #[error("policy evaluation did not converge at s = {state} (residual {residual:e})")]
    NotConverged { state: f64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig<T> {
    pub horizon: usize,
    pub discount: T,
    pub x_ref: T,
    /// Scale of the stage tracking term `c·θ₁²(x - x_ref)²`.
    pub stage_weight: T,
    pub slack_weight: T,
    pub terminal_slack_weight: T,
    pub u_max: T,
    /// Deterministic model gain in `x⁺ = x + α u`.
    pub model_gain: T,
}

impl<T: Real> Default for MpcConfig<T> {
    fn default() -> Self {
        Self {
            horizon: 10,
            discount: c(0.99),
            x_ref: c(0.5),
            stage_weight: c(0.1),
            slack_weight: c(10.0),
            terminal_slack_weight: c(10.0),
            u_max: T::one(),
            model_gain: c(1.0 / 12.0),
        }
    }
}

impl<T: Real> MpcConfig<T> {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon < 1 {
            return Err(MpcError::InvalidConfig("horizon must be at least 1"));
        }
        if !(self.discount > T::zero() && self.discount <= T::one()) {
            return Err(MpcError::InvalidConfig("discount must lie in (0, 1]"));
        }
        if !(self.slack_weight > T::zero() && self.terminal_slack_weight > T::zero()) {
            return Err(MpcError::InvalidConfig("slack weights must be positive"));
        }
        if !(self.u_max > T::zero()) {
            return Err(MpcError::InvalidConfig("u_max must be positive"));
        }
        if !(self.model_gain.is_finite() && self.x_ref.is_finite() && self.stage_weight.is_finite())
        {
            return Err(MpcError::InvalidConfig("parameters must be finite"));
        }
        Ok(())
    }
}

/// Cost curvature parameters `θ = [θ₁, θ₂]`, squared inside the cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams<T>(pub [T; 2]);

impl<T: Real> PolicyParams<T> {
    pub fn new(theta1: T, theta2: T) -> Self {
        Self([theta1, theta2])
    }

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_column_slice(&self.0)
    }
}

/// The MPC as a [`ParametricNlp`] with `n_θ = 2`, `n_s = 1`.
#[derive(Debug, Clone)]
pub struct BatteryMpc<T> {
    cfg: MpcConfig<T>,
    tariff: Tariff<T>,
    /// `γ^i` for `i = 0..N`
    discounts: Vec<T>,
    ineq_jac: DMatrix<T>,
    eq_jac: DMatrix<T>,
}

/// Builds the MPC NLP. `θ` is supplied per solve.
pub fn build_nlp<T: Real>(cfg: MpcConfig<T>, tariff: Tariff<T>) -> Result<BatteryMpc<T>, MpcError> {
    cfg.validate()?;
    Ok(BatteryMpc::new(cfg, tariff))
}

impl<T: Real> BatteryMpc<T> {
    fn new(cfg: MpcConfig<T>, tariff: Tariff<T>) -> Self {
        let n = cfg.horizon;
        let mut discounts = Vec::with_capacity(n);
        let mut g = T::one();
        for _ in 0..n {
            discounts.push(g);
            g *= cfg.discount;
        }
        let mut out = Self {
            cfg,
            tariff,
            discounts,
            ineq_jac: DMatrix::zeros(0, 0),
            eq_jac: DMatrix::zeros(0, 0),
        };
        out.ineq_jac = out.build_ineq_jac();
        out.eq_jac = out.build_eq_jac();
        out
    }

    pub fn config(&self) -> &MpcConfig<T> {
        &self.cfg
    }

    pub fn tariff(&self) -> &Tariff<T> {
        &self.tariff
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    #[inline]
    pub fn x_index(&self, i: usize) -> usize {
        i
    }

    #[inline]
    pub fn buy_index(&self, i: usize) -> usize {
        self.cfg.horizon + 1 + 2 * i
    }

    #[inline]
    pub fn sell_index(&self, i: usize) -> usize {
        self.cfg.horizon + 2 + 2 * i
    }

    #[inline]
    pub fn slack_index(&self, i: usize) -> usize {
        3 * self.cfg.horizon + 1 + i
    }

    /// Net first input `u₀ = u₀⁺ - u₀⁻` of a primal vector.
    pub fn first_input(&self, z: &DVector<T>) -> T {
        z[self.buy_index(0)] - z[self.sell_index(0)]
    }

    /// Row selector `∂u₀/∂y` applied to a `n_y × k` matrix.
    pub fn first_input_rows(&self, m: &DMatrix<T>) -> Vec<T> {
        let (b, s) = (self.buy_index(0), self.sell_index(0));
        (0..m.ncols()).map(|j| m[(b, j)] - m[(s, j)]).collect()
    }

    fn n_state_rows(&self) -> usize {
        3 * (self.cfg.horizon + 1)
    }

    fn build_ineq_jac(&self) -> DMatrix<T> {
        let d = ParametricNlp::<T>::dims(self);
        let mut m = DMatrix::zeros(d.n_h, d.n_z);
        for i in 0..=self.cfg.horizon {
            let (x, sg) = (self.x_index(i), self.slack_index(i));
            m[(3 * i, x)] = T::one();
            m[(3 * i, sg)] = -T::one();
            m[(3 * i + 1, x)] = -T::one();
            m[(3 * i + 1, sg)] = -T::one();
            m[(3 * i + 2, sg)] = -T::one();
        }
        let base = self.n_state_rows();
        for i in 0..self.cfg.horizon {
            let (b, s) = (self.buy_index(i), self.sell_index(i));
            m[(base + 4 * i, b)] = -T::one();
            m[(base + 4 * i + 1, b)] = T::one();
            m[(base + 4 * i + 2, s)] = -T::one();
            m[(base + 4 * i + 3, s)] = T::one();
        }
        m
    }

    fn build_eq_jac(&self) -> DMatrix<T> {
        let d = ParametricNlp::<T>::dims(self);
        let mut m = DMatrix::zeros(d.n_g, d.n_z);
        m[(0, 0)] = T::one();
        for i in 0..self.cfg.horizon {
            m[(i + 1, self.x_index(i + 1))] = T::one();
            m[(i + 1, self.x_index(i))] = -T::one();
            m[(i + 1, self.buy_index(i))] = -self.cfg.model_gain;
            m[(i + 1, self.sell_index(i))] = self.cfg.model_gain;
        }
        m
    }

    /// Curvature `∂²Ψ/∂x_i²`.
    fn tracking_curvature(&self, i: usize, theta: &DVector<T>) -> T {
        let two = c::<T>(2.0);
        if i < self.cfg.horizon {
            two * self.discounts[i] * self.cfg.stage_weight * theta[0] * theta[0]
        } else {
            two * theta[1] * theta[1]
        }
    }
}

impl<T: Real> ParametricNlp<T> for BatteryMpc<T> {
    fn dims(&self) -> NlpDims {
        let n = self.cfg.horizon;
        NlpDims {
            n_z: (n + 1) + 2 * n + (n + 1),
            n_g: n + 1,
            n_h: 3 * (n + 1) + 4 * n,
            n_theta: 2,
            n_s: 1,
        }
    }

    fn cost(&self, z: &DVector<T>, theta: &DVector<T>) -> T {
        let n = self.cfg.horizon;
        let xr = self.cfg.x_ref;
        let dn = z[self.x_index(n)] - xr;
        let mut total = theta[1] * theta[1] * dn * dn
            + self.cfg.terminal_slack_weight * z[self.slack_index(n)];
        for i in 0..n {
            let dx = z[self.x_index(i)] - xr;
            let econ =
                self.tariff.buy * z[self.buy_index(i)] - self.tariff.sell * z[self.sell_index(i)];
            let track = self.cfg.stage_weight * theta[0] * theta[0] * dx * dx;
            total += self.discounts[i] * (econ + track + self.cfg.slack_weight * z[self.slack_index(i)]);
        }
        total
    }

    fn cost_gradient(&self, z: &DVector<T>, theta: &DVector<T>) -> DVector<T> {
        let n = self.cfg.horizon;
        let xr = self.cfg.x_ref;
        let mut g = DVector::zeros(ParametricNlp::<T>::dims(self).n_z);
        for i in 0..=n {
            g[self.x_index(i)] = self.tracking_curvature(i, theta) * (z[self.x_index(i)] - xr);
        }
        for i in 0..n {
            let d = self.discounts[i];
            g[self.buy_index(i)] = d * self.tariff.buy;
            g[self.sell_index(i)] = -d * self.tariff.sell;
            g[self.slack_index(i)] = d * self.cfg.slack_weight;
        }
        g[self.slack_index(n)] = self.cfg.terminal_slack_weight;
        g
    }

    fn equalities(&self, z: &DVector<T>, s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        let n = self.cfg.horizon;
        let mut g = DVector::zeros(n + 1);
        g[0] = z[self.x_index(0)] - s[0];
        for i in 0..n {
            let u = z[self.buy_index(i)] - z[self.sell_index(i)];
            g[i + 1] = z[self.x_index(i + 1)] - z[self.x_index(i)] - self.cfg.model_gain * u;
        }
        g
    }

    fn equality_jacobian(
        &self,
        _z: &DVector<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        self.eq_jac.clone()
    }

    fn inequalities(&self, z: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        let n = self.cfg.horizon;
        let mut h = DVector::zeros(ParametricNlp::<T>::dims(self).n_h);
        for i in 0..=n {
            let x = z[self.x_index(i)];
            let sg = z[self.slack_index(i)];
            h[3 * i] = x - T::one() - sg;
            h[3 * i + 1] = -x - sg;
            h[3 * i + 2] = -sg;
        }
        let base = self.n_state_rows();
        let um = self.cfg.u_max;
        for i in 0..n {
            let b = z[self.buy_index(i)];
            let s = z[self.sell_index(i)];
            h[base + 4 * i] = -b;
            h[base + 4 * i + 1] = b - um;
            h[base + 4 * i + 2] = -s;
            h[base + 4 * i + 3] = s - um;
        }
        h
    }

    fn inequality_jacobian(&self, _z: &DVector<T>, _theta: &DVector<T>) -> DMatrix<T> {
        self.ineq_jac.clone()
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<T>,
        _lambda: &DVector<T>,
        _mu: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T> {
        // constraints are linear: only the tracking terms curve
        let nz = ParametricNlp::<T>::dims(self).n_z;
        let mut w = DMatrix::zeros(nz, nz);
        for i in 0..=self.cfg.horizon {
            let k = self.x_index(i);
            w[(k, k)] = self.tracking_curvature(i, theta);
        }
        w
    }

    fn residual_theta_jacobian(
        &self,
        y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        theta: &DVector<T>,
    ) -> DMatrix<T> {
        let d = ParametricNlp::<T>::dims(self);
        let n = self.cfg.horizon;
        let xr = self.cfg.x_ref;
        let four = c::<T>(4.0);
        let mut m = DMatrix::zeros(d.n_y(), 2);
        for i in 0..n {
            let k = self.x_index(i);
            m[(k, 0)] =
                four * self.discounts[i] * self.cfg.stage_weight * theta[0] * (y.z[k] - xr);
        }
        let k = self.x_index(n);
        m[(k, 1)] = four * theta[1] * (y.z[k] - xr);
        m
    }

    fn residual_state_jacobian(
        &self,
        _y: &PrimalDualPoint<T>,
        _s: &DVector<T>,
        _theta: &DVector<T>,
    ) -> DMatrix<T> {
        let d = ParametricNlp::<T>::dims(self);
        let mut m = DMatrix::zeros(d.n_y(), 1);
        m[(d.n_z, 0)] = -T::one();
        m
    }

    /// Flat state trajectory at `s`, zero net input (`u± = Ū/2`) and slacks
    /// `0.1` above the state-constraint violation.
    fn initial_primal(&self, s: &DVector<T>, _theta: &DVector<T>) -> DVector<T> {
        let n = self.cfg.horizon;
        let mut z = DVector::zeros(ParametricNlp::<T>::dims(self).n_z);
        let s0 = s[0];
        let viol = (s0 - T::one()).max(-s0).max(T::zero());
        let half = self.cfg.u_max * c(0.5);
        for i in 0..=n {
            z[self.x_index(i)] = s0;
            z[self.slack_index(i)] = viol + c(0.1);
        }
        for i in 0..n {
            z[self.buy_index(i)] = half;
            z[self.sell_index(i)] = half;
        }
        z
    }

    fn kkt_sparsity(&self) -> KktSparsity {
        let d = ParametricNlp::<T>::dims(self);
        let mut entries = Vec::new();
        let (nz, ng) = (d.n_z, d.n_g);
        for i in 0..=self.cfg.horizon {
            let k = self.x_index(i);
            entries.push((k, k));
        }
        for (r, row) in self.eq_jac.row_iter().enumerate() {
            for (col, v) in row.iter().enumerate() {
                if *v != T::zero() {
                    entries.push((nz + r, col));
                    entries.push((col, nz + r));
                }
            }
        }
        for (r, row) in self.ineq_jac.row_iter().enumerate() {
            for (col, v) in row.iter().enumerate() {
                if *v != T::zero() {
                    entries.push((nz + ng + r, col));
                    entries.push((col, nz + ng + r));
                }
            }
            entries.push((nz + ng + r, nz + ng + r));
        }
        entries.sort_unstable();
        entries.dedup();
        KktSparsity {
            dim: d.n_y(),
            entries,
        }
    }
}

/// Policy output at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval<T: Real> {
    /// `u₀ = u₀⁺ - u₀⁻`
    pub action: T,
    /// `∇_θ π(s)`
    pub gradient: [T; 2],
    pub solution: PrimalDualPoint<T>,
    pub report: SolveReport<T>,
}

/// One point of a policy sweep over states.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint<T: Real> {
    pub s: T,
    pub result: Result<(T, [T; 2]), MpcError>,
}

/// The smoothed MPC policy together with its solver settings.
#[derive(Debug, Clone)]
pub struct MpcPolicy<T: Real> {
    nlp: BatteryMpc<T>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> MpcPolicy<T> {
    pub fn new(cfg: MpcConfig<T>, tariff: Tariff<T>) -> Result<Self, MpcError> {
        Ok(Self {
            nlp: build_nlp(cfg, tariff)?,
            tol: c(T::KKT_TOL),
            max_iter: 200,
        })
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn nlp(&self) -> &BatteryMpc<T> {
        &self.nlp
    }

    fn options(&self, tau: T) -> SolveOptions<T> {
        SolveOptions::new(tau)
            .with_tol(self.tol)
            .with_max_iter(self.max_iter)
    }

    /// Solves at `(s, θ, τ)` and returns only the primal-dual point.
    pub fn solve(
        &self,
        s: T,
        theta: &PolicyParams<T>,
        tau: T,
        warm: Option<&PrimalDualPoint<T>>,
    ) -> Result<(PrimalDualPoint<T>, SolveReport<T>), MpcError> {
        if !(tau > T::zero()) {
            return Err(MpcError::InvalidTau);
        }
        let sv = DVector::from_element(1, s);
        let th = theta.to_vector();
        let opts = self.options(tau);
        let state = s.to_f64_lossy();
        let attempt = ipm::solve(&self.nlp, &sv, &th, &opts, warm);
        let retry = match &attempt {
            Ok((_, rep)) => !rep.converged && warm.is_some(),
            Err(_) => warm.is_some(),
        };
        let (y, rep) = if retry {
            ipm::solve(&self.nlp, &sv, &th, &opts, None)
        } else {
            attempt
        }
        .map_err(|source| MpcError::Solver { state, source })?;
        if !rep.converged {
            return Err(MpcError::NotConverged {
                state,
                residual: rep.residual_norm.to_f64_lossy(),
            });
        }
        Ok((y, rep))
    }

    /// Action only.
    pub fn action(
        &self,
        s: T,
        theta: &PolicyParams<T>,
        tau: T,
        warm: Option<&PrimalDualPoint<T>>,
    ) -> Result<(T, PrimalDualPoint<T>), MpcError> {
        let (y, _) = self.solve(s, theta, tau, warm)?;
        Ok((self.nlp.first_input(&y.z), y))
    }

    /// `π_θ(s)` and `∇_θ π_θ(s)` at barrier `τ`.
    ///
    /// A failed warm-started solve is retried once from a cold start.
    pub fn evaluate(
        &self,
        s: T,
        theta: &PolicyParams<T>,
        tau: T,
        warm: Option<&PrimalDualPoint<T>>,
    ) -> Result<PolicyEval<T>, MpcError> {
        let (y, report) = self.solve(s, theta, tau, warm)?;
        let sv = DVector::from_element(1, s);
        let th = theta.to_vector();
        let dy = ipm::sensitivity(&self.nlp, &y, &sv, &th, tau).map_err(|source| {
            MpcError::Solver {
                state: s.to_f64_lossy(),
                source,
            }
        })?;
        let g = self.nlp.first_input_rows(&dy);
        Ok(PolicyEval {
            action: self.nlp.first_input(&y.z),
            gradient: [g[0], g[1]],
            solution: y,
            report,
        })
    }

    /// `∂π/∂s` at a converged solution.
    pub fn state_derivative(
        &self,
        eval: &PolicyEval<T>,
        s: T,
        theta: &PolicyParams<T>,
        tau: T,
    ) -> Result<T, MpcError> {
        let sv = DVector::from_element(1, s);
        let dy = ipm::state_sensitivity(&self.nlp, &eval.solution, &sv, &theta.to_vector(), tau)
            .map_err(|source| MpcError::Solver {
                state: s.to_f64_lossy(),
                source,
            })?;
        Ok(self.nlp.first_input_rows(&dy)[0])
    }

    /// Evaluates the policy along `grid`, warm-starting each point from the last
    /// success. Failures are recorded per point and do not stop the sweep.
    pub fn smoothness_profile(
        &self,
        theta: &PolicyParams<T>,
        tau: T,
        grid: &[T],
    ) -> Vec<ProfilePoint<T>> {
        let mut warm: Option<PrimalDualPoint<T>> = None;
        grid.iter()
            .map(|&s| {
                let result = match self.evaluate(s, theta, tau, warm.as_ref()) {
                    Ok(ev) => {
                        let out = (ev.action, ev.gradient);
                        warm = Some(ev.solution);
                        Ok(out)
                    }
                    Err(e) => Err(e),
                };
                ProfilePoint { s, result }
            })
            .collect()
    }

    /// Exploration-free policy tabulated on a uniform grid over `[lo, hi]`.
    pub fn tabulate(
        &self,
        theta: &PolicyParams<T>,
        tau: T,
        lo: T,
        hi: T,
        points: usize,
    ) -> Result<PolicyTable<T>, MpcError> {
        assert!(points >= 2, "policy table needs at least two nodes");
        let step = (hi - lo) / c::<T>((points - 1) as f64);
        let mut warm: Option<PrimalDualPoint<T>> = None;
        let mut actions = Vec::with_capacity(points);
        for k in 0..points {
            let s = lo + step * c::<T>(k as f64);
            let (a, y) = self.action(s, theta, tau, warm.as_ref())?;
            actions.push(a);
            warm = Some(y);
        }
        Ok(PolicyTable { lo, step, actions })
    }
}

/// Piecewise-linear interpolant of a policy on a uniform state grid,
/// held constant beyond the end nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T> {
    lo: T,
    step: T,
    actions: Vec<T>,
}

impl<T: Real> PolicyTable<T> {
    pub fn actions(&self) -> &[T] {
        &self.actions
    }

    pub fn eval(&self, s: T) -> T {
        let n = self.actions.len();
        let pos = (s - self.lo) / self.step;
        if !(pos > T::zero()) {
            return self.actions[0];
        }
        let last = c::<T>((n - 1) as f64);
        if pos >= last {
            return self.actions[n - 1];
        }
        let k = pos.floor().to_usize().unwrap_or(0).min(n - 2);
        let t = pos - c::<T>(k as f64);
        self.actions[k] * (T::one() - t) + self.actions[k + 1] * t
    }
}
