//! Truncated power-series ("jet") arithmetic.
//!
//! Two flavors share the same idea of computing with Taylor coefficients
//! instead of symbolic derivatives:
//!
//! * [`Jet`] / [`Jet3`]: series in one variable (time), used by the
//!   trajectory integrator to propagate high-order time derivatives.
//! * [`TriJet`]: dense series in three variables truncated at a total
//!   degree, used to extract exact mixed spatial derivatives of the
//!   mobility kernels.
//!
//! Fractional powers of a series with positive leading coefficient go
//! through [`Jet::powf`] (first-order ODE recurrence) or [`TriJet::powf`]
//! (binomial series in the zero-constant part). Both avoid any symbolic
//! differentiation.

use crate::math::Vec3;
use std::sync::OnceLock;

/// Generalized binomial coefficient `binom(1/2, n)`.
///
/// First values: 1, 1/2, -1/8, 1/16, -5/128. The signs alternate from
/// `n = 2` on, so `(-1)^(n-1) * binom(1/2, n) >= 0` for all `n >= 1`.
pub fn binom_half(n: usize) -> f64 {
    let mut b = 1.0;
    for k in 1..=n {
        b *= (0.5 - (k as f64 - 1.0)) / k as f64;
    }
    b
}

/// Scalar truncated power series `c[0] + c[1] t + ... + c[order] t^order`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub c: Vec<f64>,
}

impl Jet {
    pub fn zeros(order: usize) -> Self {
        Jet {
            c: vec![0.0; order + 1],
        }
    }

    pub fn constant(value: f64, order: usize) -> Self {
        let mut j = Jet::zeros(order);
        j.c[0] = value;
        j
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        debug_assert_eq!(self.order(), rhs.order());
        Jet {
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            c: self.c.iter().map(|a| a * s).collect(),
        }
    }

    /// Cauchy product truncated at the common order.
    pub fn mul(&self, rhs: &Jet) -> Jet {
        debug_assert_eq!(self.order(), rhs.order());
        let n = self.order();
        let mut out = Jet::zeros(n);
        for k in 0..=n {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.c[j] * rhs.c[k - j];
            }
            out.c[k] = s;
        }
        out
    }

    /// `self^p` for a series with `c[0] > 0`.
    ///
    /// Uses the recurrence obtained from `u s' = p s u'`:
    /// `k u0 s_k = sum_{i=1..k} ((p+1) i - k) u_i s_{k-i}`.
    pub fn powf(&self, p: f64) -> Jet {
        let n = self.order();
        let u0 = self.c[0];
        debug_assert!(u0 > 0.0, "series power needs a positive leading term");
        let mut s = Jet::zeros(n);
        s.c[0] = u0.powf(p);
        for k in 1..=n {
            let mut acc = 0.0;
            for i in 1..=k {
                acc += ((p + 1.0) * i as f64 - k as f64) * self.c[i] * s.c[k - i];
            }
            s.c[k] = acc / (k as f64 * u0);
        }
        s
    }

    /// Horner evaluation at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }
}

/// A 3-vector of scalar series with a common order: the jet of a moving
/// point. Coefficient `k` is the vector Taylor coefficient of `t^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet3 {
    pub c: Vec<Vec3>,
}

impl Jet3 {
    pub fn constant(value: Vec3, order: usize) -> Self {
        let mut c = vec![Vec3::zeros(); order + 1];
        c[0] = value;
        Jet3 { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn sub(&self, rhs: &Jet3) -> Jet3 {
        debug_assert_eq!(self.order(), rhs.order());
        Jet3 {
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect(),
        }
    }

    /// Componentwise dot product of two vector series: a scalar series.
    pub fn dot(&self, rhs: &Jet3) -> Jet {
        debug_assert_eq!(self.order(), rhs.order());
        let n = self.order();
        let mut out = Jet::zeros(n);
        for k in 0..=n {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.c[j].dot(&rhs.c[k - j]);
            }
            out.c[k] = s;
        }
        out
    }

    /// One spatial component as a scalar series.
    pub fn component(&self, i: usize) -> Jet {
        Jet {
            c: self.c.iter().map(|v| v[i]).collect(),
        }
    }

    /// Product with a scalar series (each component convolved with `s`).
    pub fn mul_scalar_series(&self, s: &Jet) -> Jet3 {
        debug_assert_eq!(self.order(), s.order());
        let n = self.order();
        let mut out = Jet3::constant(Vec3::zeros(), n);
        for k in 0..=n {
            let mut acc = Vec3::zeros();
            for j in 0..=k {
                acc += self.c[j] * s.c[k - j];
            }
            out.c[k] = acc;
        }
        out
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        self.c.iter().rev().fold(Vec3::zeros(), |acc, &c| acc * t + c)
    }
}

const TRI_MAX_ORDER: usize = 16;

/// Monomial exponent table shared by all [`TriJet`] values: entry `m` is the
/// exponent triple of slot `m`, listed degree by degree.
fn monomials() -> &'static Vec<[u8; 3]> {
    static TABLE: OnceLock<Vec<[u8; 3]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::new();
        for d in 0..=TRI_MAX_ORDER {
            for i in (0..=d).rev() {
                for j in (0..=d - i).rev() {
                    t.push([i as u8, j as u8, (d - i - j) as u8]);
                }
            }
        }
        t
    })
}

fn tri_len(order: usize) -> usize {
    (order + 1) * (order + 2) * (order + 3) / 6
}

fn tri_index(i: usize, j: usize, k: usize) -> usize {
    let d = i + j + k;
    let block = d * (d + 1) * (d + 2) / 6;
    let di = d - i;
    block + di * (di + 1) / 2 + (di - j)
}

/// Dense power series in three variables truncated at total degree `order`.
/// Coefficients are stored degree by degree; slot `m` corresponds to the
/// monomial `h1^i h2^j h3^k` given by the shared exponent table.
#[derive(Clone, Debug, PartialEq)]
pub struct TriJet {
    order: usize,
    pub c: Vec<f64>,
}

impl TriJet {
    pub fn zeros(order: usize) -> Self {
        assert!(order <= TRI_MAX_ORDER);
        TriJet {
            order,
            c: vec![0.0; tri_len(order)],
        }
    }

    pub fn constant(value: f64, order: usize) -> Self {
        let mut t = TriJet::zeros(order);
        t.c[0] = value;
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficient of the monomial with exponents `alpha`.
    pub fn coeff(&self, alpha: [usize; 3]) -> f64 {
        self.c[tri_index(alpha[0], alpha[1], alpha[2])]
    }

    pub fn set_coeff(&mut self, alpha: [usize; 3], value: f64) {
        self.c[tri_index(alpha[0], alpha[1], alpha[2])] = value;
    }

    pub fn add(&self, rhs: &TriJet) -> TriJet {
        debug_assert_eq!(self.order, rhs.order);
        TriJet {
            order: self.order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> TriJet {
        TriJet {
            order: self.order,
            c: self.c.iter().map(|a| a * s).collect(),
        }
    }

    /// Truncated product. Zero coefficients on either side are skipped, so
    /// multiplying by a sparse polynomial stays cheap.
    pub fn mul(&self, rhs: &TriJet) -> TriJet {
        debug_assert_eq!(self.order, rhs.order);
        let mono = monomials();
        let mut out = TriJet::zeros(self.order);
        for (ma, &a) in self.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let ea = mono[ma];
            let da = (ea[0] + ea[1] + ea[2]) as usize;
            for (mb, &b) in rhs.c.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let eb = mono[mb];
                let db = (eb[0] + eb[1] + eb[2]) as usize;
                if da + db > self.order {
                    break;
                }
                let idx = tri_index(
                    (ea[0] + eb[0]) as usize,
                    (ea[1] + eb[1]) as usize,
                    (ea[2] + eb[2]) as usize,
                );
                out.c[idx] += a * b;
            }
        }
        out
    }

    /// `self^p` for a series with constant term `> 0`, via the binomial
    /// series in `w = self / c0 - 1` (which has no constant term, so the
    /// expansion terminates at the truncation order).
    pub fn powf(&self, p: f64) -> TriJet {
        let c0 = self.c[0];
        debug_assert!(c0 > 0.0, "series power needs a positive constant term");
        let mut w = self.scale(1.0 / c0);
        w.c[0] = 0.0;
        let mut out = TriJet::constant(1.0, self.order);
        let mut wpow = TriJet::constant(1.0, self.order);
        let mut coeff = 1.0;
        for m in 1..=self.order {
            coeff *= (p - (m as f64 - 1.0)) / m as f64;
            wpow = wpow.mul(&w);
            out = out.add(&wpow.scale(coeff));
        }
        out.scale(c0.powf(p))
    }

    /// Partial derivative along axis `axis` (exact on the polynomial,
    /// top-degree coefficients of the result are dropped).
    pub fn deriv(&self, axis: usize) -> TriJet {
        let mono = monomials();
        let mut out = TriJet::zeros(self.order);
        for (m, &a) in self.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let e = mono[m];
            let p = e[axis] as usize;
            if p == 0 {
                continue;
            }
            let mut ne = [e[0] as usize, e[1] as usize, e[2] as usize];
            ne[axis] = p - 1;
            out.c[tri_index(ne[0], ne[1], ne[2])] += a * p as f64;
        }
        out
    }

    /// Evaluate the polynomial at `h`.
    pub fn eval(&self, h: Vec3) -> f64 {
        let mono = monomials();
        let mut acc = 0.0;
        for (m, &a) in self.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let e = mono[m];
            acc += a
                * h.x.powi(e[0] as i32)
                * h.y.powi(e[1] as i32)
                * h.z.powi(e[2] as i32);
        }
        acc
    }
}
