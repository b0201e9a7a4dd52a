//! Commutative polynomial layer: complex polynomials in the boson fields
//! φ_x, φ̄_x (with a copy index for doubled fields), the external field σ, σ̄,
//! and symbolic coupling constants.

use num_complex::Complex64;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cpl {
    G,
    Nu,
    Z,
    Lambda,
    Q,
}

/// A commuting indeterminate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BVar {
    Field { copy: u8, site: u32, bar: bool },
    Sigma { bar: bool },
    Coupling(Cpl),
}

impl BVar {
    pub fn phi(site: usize) -> BVar {
        BVar::Field {
            copy: 0,
            site: site as u32,
            bar: false,
        }
    }
    pub fn phibar(site: usize) -> BVar {
        BVar::Field {
            copy: 0,
            site: site as u32,
            bar: true,
        }
    }
}

/// Monomial: variable -> positive power.
pub type BosMono = BTreeMap<BVar, u32>;

fn mono_degree_by(m: &BosMono, pred: impl Fn(&BVar) -> bool) -> u32 {
    m.iter().filter(|(v, _)| pred(v)).map(|(_, &p)| p).sum()
}

pub fn field_degree(m: &BosMono) -> u32 {
    mono_degree_by(m, |v| matches!(v, BVar::Field { .. }))
}

pub fn sigma_degree(m: &BosMono) -> u32 {
    mono_degree_by(m, |v| matches!(v, BVar::Sigma { .. }))
}

pub fn coupling_degree(m: &BosMono) -> u32 {
    mono_degree_by(m, |v| matches!(v, BVar::Coupling(_)))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub terms: BTreeMap<BosMono, Complex64>,
}

const PRUNE_EPS: f64 = 0.0; // exact arithmetic: drop only exact zeros

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn constant(c: Complex64) -> Poly {
        let mut terms = BTreeMap::new();
        if c != Complex64::new(0.0, 0.0) {
            terms.insert(BosMono::new(), c);
        }
        Poly { terms }
    }

    pub fn real(c: f64) -> Poly {
        Poly::constant(Complex64::new(c, 0.0))
    }

    pub fn one() -> Poly {
        Poly::real(1.0)
    }

    pub fn var(v: BVar) -> Poly {
        let mut m = BosMono::new();
        m.insert(v, 1);
        let mut terms = BTreeMap::new();
        terms.insert(m, Complex64::new(1.0, 0.0));
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: BosMono, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) && !self.terms.contains_key(&m) {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
        if entry.norm() <= PRUNE_EPS {
            self.terms.remove(&m);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> Poly {
        if c == Complex64::new(0.0, 0.0) {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(m, &v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn scale_real(&self, c: f64) -> Poly {
        self.scale(Complex64::new(c, 0.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let mut m = ma.clone();
                for (v, &p) in mb {
                    *m.entry(*v).or_insert(0) += p;
                }
                out.add_term(m, ca * cb);
            }
        }
        out
    }

    /// ∂/∂v, treating all indeterminates as commuting.
    pub fn differentiate(&self, v: BVar) -> Poly {
        let mut out = Poly::zero();
        for (m, &c) in &self.terms {
            if let Some(&p) = m.get(&v) {
                let mut m2 = m.clone();
                if p == 1 {
                    m2.remove(&v);
                } else {
                    m2.insert(v, p - 1);
                }
                out.add_term(m2, c * p as f64);
            }
        }
        out
    }

    /// Substitute numeric values for the variables selected by `assign`
    /// (returning Some(value)); unselected variables stay symbolic.
    pub fn eval_partial(&self, assign: impl Fn(&BVar) -> Option<Complex64>) -> Poly {
        let mut out = Poly::zero();
        for (m, &c) in &self.terms {
            let mut coeff = c;
            let mut rest = BosMono::new();
            for (v, &p) in m {
                match assign(v) {
                    Some(val) => coeff *= val.powu(p),
                    None => {
                        rest.insert(*v, p);
                    }
                }
            }
            out.add_term(rest, coeff);
        }
        out
    }

    /// Set σ = σ̄ = 0.
    pub fn sigma_zero(&self) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| sigma_degree(m) == 0)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Shift φ-variables: v -> v + shift(v) for every field variable with a
    /// shift provided; binomial expansion.
    pub fn shift_fields(&self, shift: impl Fn(&BVar) -> Option<Complex64>) -> Poly {
        let mut out = Poly::zero();
        for (m, &c) in &self.terms {
            let mut expanded = Poly::constant(c);
            for (v, &p) in m {
                let factor = match shift(v) {
                    Some(s) => Poly::var(*v).add(&Poly::constant(s)),
                    None => Poly::var(*v),
                };
                let mut pw = Poly::one();
                for _ in 0..p {
                    pw = pw.mul(&factor);
                }
                expanded = expanded.mul(&pw);
            }
            out = out.add(&expanded);
        }
        out
    }

    pub fn constant_value(&self) -> Option<Complex64> {
        if self.terms.is_empty() {
            return Some(Complex64::new(0.0, 0.0));
        }
        if self.terms.len() == 1 {
            if let Some(c) = self.terms.get(&BosMono::new()) {
                return Some(*c);
            }
        }
        None
    }

    /// Drop terms with total coupling degree exceeding `max`.
    pub fn truncate_coupling_degree(&self, max: u32) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| coupling_degree(m) <= max)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Keep only terms whose coupling degree equals `deg`.
    pub fn coupling_degree_part(&self, deg: u32) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| coupling_degree(m) == deg)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    pub fn max_field_degree(&self) -> u32 {
        self.terms.keys().map(field_degree).max().unwrap_or(0)
    }

    /// Drop terms with |coefficient| <= eps.
    pub fn prune(&self, eps: f64) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.norm() > eps)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Canonical text rendering (sorted monomials, exact digits).
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut parts = Vec::new();
        for (m, c) in &self.terms {
            let mut s = format!("({:?},{:?})", c.re, c.im);
            for (v, p) in m {
                s.push_str(&format!("*{:?}^{}", v, p));
            }
            parts.push(s);
        }
        parts.join(" + ")
    }
}

impl std::ops::Add for Poly {
    type Output = Poly;
    fn add(self, rhs: Poly) -> Poly {
        Poly::add(&self, &rhs)
    }
}

impl std::ops::Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        Poly::mul(&self, &rhs)
    }
}
