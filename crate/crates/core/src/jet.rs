//! Third-order truncated Taylor arithmetic for exact derivatives of the
//! smooth ramps and bumps.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// `Σ_{i<=3} c_i ε^i`; `c_i = f^{(i)} / i!`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet(pub [f64; 4]);

const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];

impl Jet {
    pub const ZERO: Jet = Jet([0.0; 4]);

    pub fn constant(c: f64) -> Jet {
        Jet([c, 0.0, 0.0, 0.0])
    }

    /// The identity at `x`.
    pub fn var(x: f64) -> Jet {
        Jet([x, 1.0, 0.0, 0.0])
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// `f^{(k)}`.
    pub fn derivative(&self, k: usize) -> f64 {
        self.0[k] * FACT[k]
    }

    pub fn scale(self, c: f64) -> Jet {
        Jet(self.0.map(|v| v * c))
    }

    pub fn recip(self) -> Jet {
        let a = self.0;
        let mut b = [0.0; 4];
        b[0] = 1.0 / a[0];
        for k in 1..4 {
            let s: f64 = (1..=k).map(|i| a[i] * b[k - i]).sum();
            b[k] = -s * b[0];
        }
        Jet(b)
    }

    pub fn exp(self) -> Jet {
        let a = self.0;
        let mut e = [0.0; 4];
        e[0] = a[0].exp();
        for k in 1..4 {
            let s: f64 = (1..=k).map(|i| i as f64 * a[i] * e[k - i]).sum();
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    pub fn ln(self) -> Jet {
        let a = self.0;
        let mut l = [0.0; 4];
        l[0] = a[0].ln();
        for k in 1..4 {
            let s: f64 = (1..k).map(|i| i as f64 * l[i] * a[k - i]).sum();
            l[k] = (a[k] - s / k as f64) / a[0];
        }
        Jet(l)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let (a, b) = (self.0, o.0);
        let mut c = [0.0; 4];
        for k in 0..4 {
            c[k] = (0..=k).map(|i| a[i] * b[k - i]).sum();
        }
        Jet(c)
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Below this `exp(-1/x)` and all its derivatives are under `1e-200`.
const FLAT: f64 = 2e-3;

fn flat_exp(u: Jet) -> Jet {
    if u.value() <= FLAT {
        Jet::ZERO
    } else {
        (-u.recip()).exp()
    }
}

/// Smooth step: `0` for `u <= 0`, `1` for `u >= 1`, `C^∞`.
pub fn ramp(u: Jet) -> Jet {
    let x = u.value();
    if x <= FLAT {
        return Jet::ZERO;
    }
    if x >= 1.0 - FLAT {
        return Jet::constant(1.0);
    }
    let a = flat_exp(u);
    let b = flat_exp(Jet::constant(1.0) - u);
    a / (a + b)
}

/// `exp(-1 / (1 - x^2))` on `(-1, 1)`, zero outside.
pub fn bump(x: Jet) -> Jet {
    let v = x.value();
    if v.abs() >= 1.0 - FLAT / 2.0 {
        return Jet::ZERO;
    }
    let one = Jet::constant(1.0);
    (-(one - x * x).recip()).exp()
}
