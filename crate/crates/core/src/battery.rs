//! Stochastic battery storage: SOC dynamics, economic and penalized stage costs,
//! and seeded Gaussian net-production noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{c, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment parameter: {0}")]
    Invalid(&'static str),
}

/// Constant buy/sell electricity prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tariff<T> {
    pub buy: T,
    pub sell: T,
}

impl<T: Real> Tariff<T> {
    /// Economic cost of exchanging power `a` with the grid (`a > 0` buys).
    #[inline]
    pub fn cost(&self, a: T) -> T {
        if a >= T::zero() {
            self.buy * a
        } else {
            self.sell * a
        }
    }
}

/// Battery model and RL cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams<T> {
    /// SOC change per unit of power per step.
    pub alpha: T,
    pub buy_price: T,
    pub sell_price: T,
    /// Power bound `Ū`.
    pub u_max: T,
    pub noise_mean: T,
    pub noise_variance: T,
    /// Penalty weight on SOC excursions outside `[0, 1]`.
    pub penalty: T,
}

impl<T: Real> Default for EnvParams<T> {
    fn default() -> Self {
        Self {
            alpha: c(1.0 / 12.0),
            buy_price: c(5.0),
            sell_price: c(2.5),
            u_max: T::one(),
            noise_mean: T::zero(),
            noise_variance: c(0.05),
            penalty: c(1000.0),
        }
    }
}

impl<T: Real> EnvParams<T> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [
            self.alpha,
            self.buy_price,
            self.sell_price,
            self.u_max,
            self.noise_mean,
            self.noise_variance,
            self.penalty,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Invalid("all parameters must be finite"));
        }
        if !(self.sell_price >= T::zero() && self.buy_price >= self.sell_price) {
            return Err(EnvError::Invalid("need buy_price >= sell_price >= 0"));
        }
        if !(self.alpha > T::zero()) {
            return Err(EnvError::Invalid("alpha must be positive"));
        }
        if !(self.u_max > T::zero()) {
            return Err(EnvError::Invalid("u_max must be positive"));
        }
        if !(self.noise_variance >= T::zero()) {
            return Err(EnvError::Invalid("noise_variance must be nonnegative"));
        }
        if !(self.penalty >= T::zero()) {
            return Err(EnvError::Invalid("penalty must be nonnegative"));
        }
        Ok(())
    }

    pub fn tariff(&self) -> Tariff<T> {
        Tariff {
            buy: self.buy_price,
            sell: self.sell_price,
        }
    }

    pub fn noise_std(&self) -> T {
        self.noise_variance.sqrt()
    }

    /// Clamps a power command into `[-Ū, Ū]`.
    #[inline]
    pub fn clamp_action(&self, a: T) -> T {
        a.max(-self.u_max).min(self.u_max)
    }

    /// `s + α(Δ + a)`. The SOC is not clipped: leaving `[0, 1]` is penalized, not prevented.
    ///
    /// Panics if an input is non-finite or `|a|` exceeds `Ū`.
    #[inline]
    pub fn step(&self, s: T, a: T, noise: T) -> T {
        assert!(
            s.is_finite() && a.is_finite() && noise.is_finite(),
            "battery step needs finite inputs"
        );
        assert!(
            a.abs() <= self.u_max * c(1.0 + 1e-9),
            "action {a} outside [-{u}, {u}]",
            u = self.u_max
        );
        s + self.alpha * (noise + a)
    }

    #[inline]
    pub fn stage_cost(&self, _s: T, a: T) -> T {
        self.tariff().cost(a)
    }

    /// Economic cost plus `p·max(s - 1, 0) + p·max(-s, 0)`.
    #[inline]
    pub fn rl_stage_cost(&self, s: T, a: T) -> T {
        let over = (s - T::one()).max(T::zero());
        let under = (-s).max(T::zero());
        self.stage_cost(s, a) + self.penalty * over + self.penalty * under
    }

    /// A noise stream drawing from `N(noise_mean, noise_variance)`.
    pub fn noise_stream(&self, seed: u64, stream: u64) -> NoiseStream<T> {
        NoiseStream::new(seed, stream, self.noise_mean, self.noise_std())
    }
}

/// One closed-loop sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub s: T,
    pub a: T,
    pub noise: T,
    /// Penalized stage cost `L̃(s, a)`.
    pub cost: T,
    pub next_s: T,
    /// Offset added to the policy action before clamping.
    pub exploration: T,
}

/// Seeded Gaussian stream. Identical `(seed, stream)` pairs give identical draws.
#[derive(Debug, Clone)]
pub struct NoiseStream<T> {
    seed: u64,
    stream: u64,
    counter: u64,
    mean: T,
    std: T,
    rng: ChaCha8Rng,
}

impl<T: Real> NoiseStream<T> {
    pub fn new(seed: u64, stream: u64, mean: T, std: T) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            counter: 0,
            mean,
            std,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of draws taken so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn sample(&mut self) -> T {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.counter += 1;
        if self.std == T::zero() {
            return self.mean;
        }
        self.mean + self.std * c(z)
    }

    /// Uniform draw on `[lo, hi)` from the same stream.
    pub fn uniform(&mut self, lo: T, hi: T) -> T {
        let u: f64 = rand::Rng::random(&mut self.rng);
        self.counter += 1;
        lo + (hi - lo) * c(u)
    }
}
