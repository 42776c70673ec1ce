//! Overflow-safe evaluation of the hyperbolic closed forms shared by the
//! trace-squared flow and the per-channel spectral flow.
//!
//! Both reduce to a scalar system parameterized by a gain `g > 0` (`|X0|^2`
//! or `x0^2`) and a target magnitude `c > 0` (`|Tr W0|` or `s0`), with
//!
//! ```text
//! k1    = g^2 + 4 c^2
//! theta = sqrt(k1) t + asinh(g / (2c))          (= sqrt(k1) (t + k2))
//! phi   = sqrt(k1) t / 2
//! D(t)  = 2 g sinh(theta) + 4 c
//! ```
//!
//! Every quantity below is evaluated after dividing `D` by `e^theta` and the
//! `sinh/cosh(phi)` numerators by `e^phi`; only `e^{-x}` with `x >= 0` is ever
//! formed, so nothing overflows for any `t >= 0`.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicFlow {
    gain: f64,
    target: f64,
    kappa1: f64,
    sqrt_k1: f64,
    /// `sqrt(k1) * k2 = asinh(g / 2c)`
    theta0: f64,
}

impl HyperbolicFlow {
    /// Both parameters must be positive and finite; callers validate.
    pub(crate) fn new(gain: f64, target: f64) -> Self {
        debug_assert!(gain > 0.0 && target > 0.0);
        let kappa1 = gain * gain + 4.0 * target * target;
        Self {
            gain,
            target,
            kappa1,
            sqrt_k1: kappa1.sqrt(),
            theta0: (gain / (2.0 * target)).asinh(),
        }
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.theta0 / self.sqrt_k1
    }

    fn theta(&self, t: f64) -> f64 {
        self.sqrt_k1 * t + self.theta0
    }

    /// `D(t) e^{-theta}` together with `e^{-theta}`.
    fn scaled_denominator(&self, t: f64) -> (f64, f64) {
        let th = self.theta(t);
        let e = (-th).exp();
        (self.gain * -(-2.0 * th).exp_m1() + 4.0 * self.target * e, e)
    }

    /// `|a(t)| = k1 / D(t)`.
    pub fn a_abs(&self, t: f64) -> f64 {
        let (dn, e) = self.scaled_denominator(t);
        self.kappa1 * e / dn
    }

    /// `|a'(t)| = 2 g k1^{3/2} cosh(theta) / D^2`.
    pub fn a_prime_abs(&self, t: f64) -> f64 {
        let (dn, e) = self.scaled_denominator(t);
        self.gain * self.kappa1 * self.sqrt_k1 * e * (1.0 + e * e) / (dn * dn)
    }

    /// `a'(t) / a(t) = -g sqrt(k1) cosh(theta) / (g sinh(theta) + 2c)`, finite
    /// even where `a` underflows.
    pub fn log_derivative(&self, t: f64) -> f64 {
        let (dn, e) = self.scaled_denominator(t);
        -self.gain * self.sqrt_k1 * (1.0 + e * e) / dn
    }

    /// Shared prefactor `e^{phi - theta/2} / (sqrt(c) sqrt(D e^{-theta}))`
    /// and `1 - e^{-2 phi}`, `1 + e^{-2 phi}`.
    fn factor_terms(&self, t: f64) -> (f64, f64, f64) {
        let (dn, _) = self.scaled_denominator(t);
        let pre = (-0.5 * self.theta0).exp() / (self.target.sqrt() * dn.sqrt());
        let two_phi = self.sqrt_k1 * t;
        let em = -(-two_phi).exp_m1();
        let ep = 1.0 + (-two_phi).exp();
        (pre, em, ep)
    }

    /// `p(t) = [g sinh(phi) + sqrt(k1) cosh(phi)] / (sqrt(c) sqrt(D))`; `p(0) = 1`.
    pub fn p(&self, t: f64) -> f64 {
        let (pre, em, ep) = self.factor_terms(t);
        0.5 * pre * (self.gain * em + self.sqrt_k1 * ep)
    }

    /// `q(t) = 2 sinh(phi) / (sqrt(c) sqrt(D))`; `q(0) = 0`.
    pub fn q(&self, t: f64) -> f64 {
        let (pre, em, _) = self.factor_terms(t);
        pre * em
    }

    /// Smallest `T >= 0` with `|a(T)| <= tol`.
    pub fn tail_horizon(&self, tol: f64) -> f64 {
        let need = (self.kappa1 / tol - 4.0 * self.target) / (2.0 * self.gain);
        if need <= 0.0 {
            return 0.0;
        }
        ((need.asinh() - self.theta0) / self.sqrt_k1).max(0.0)
    }
}
