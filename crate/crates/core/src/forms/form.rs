//! The algebra N of differential forms: fermion monomials in ψ_x, ψ̄_x
//! (canonically ordered with tracked sign) with polynomial boson
//! coefficients, plus the builders for τ, τ_Δ, and the local interaction V.

use super::poly::{BVar, Cpl, Poly};
use crate::lattice::TorusLattice;
use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormError {
    #[error("forms live on different lattices: {0} vs {1} sites")]
    LatticeMismatch(usize, usize),
}

/// A fermion generator; the total order (copy, site, bar) defines the
/// canonical monomial representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FVar {
    pub copy: u8,
    pub site: u32,
    pub bar: bool,
}

impl FVar {
    pub fn psi(site: usize) -> FVar {
        FVar {
            copy: 0,
            site: site as u32,
            bar: false,
        }
    }
    pub fn psibar(site: usize) -> FVar {
        FVar {
            copy: 0,
            site: site as u32,
            bar: true,
        }
    }
}

/// Canonical (strictly increasing) fermion monomial.
pub type FermMono = Vec<FVar>;

/// Sort a generator word into canonical order; returns the permutation sign,
/// or None if a generator repeats (the wedge square is zero).
pub fn canonicalize(mut vars: Vec<FVar>) -> Option<(FermMono, f64)> {
    let mut sign = 1.0;
    // insertion sort, counting transpositions
    for i in 1..vars.len() {
        let mut k = i;
        while k > 0 && vars[k - 1] > vars[k] {
            vars.swap(k - 1, k);
            sign = -sign;
            k -= 1;
        }
    }
    for w in vars.windows(2) {
        if w[0] == w[1] {
            return None;
        }
    }
    Some((vars, sign))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Form {
    pub n_sites: usize,
    pub terms: BTreeMap<FermMono, Poly>,
}

impl Form {
    pub fn zero(n_sites: usize) -> Form {
        Form {
            n_sites,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_poly(n_sites: usize, p: Poly) -> Form {
        let mut terms = BTreeMap::new();
        if !p.is_zero() {
            terms.insert(Vec::new(), p);
        }
        Form { n_sites, terms }
    }

    pub fn one(n_sites: usize) -> Form {
        Form::from_poly(n_sites, Poly::one())
    }

    pub fn fermion(n_sites: usize, v: FVar) -> Form {
        let mut terms = BTreeMap::new();
        terms.insert(vec![v], Poly::one());
        Form { n_sites, terms }
    }

    pub fn add_term(&mut self, m: FermMono, p: Poly) {
        if p.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(Poly::zero);
        *entry = entry.add(&p);
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn add(&self, other: &Form) -> Form {
        let mut out = self.clone();
        for (m, p) in &other.terms {
            out.add_term(m.clone(), p.clone());
        }
        out
    }

    pub fn sub(&self, other: &Form) -> Form {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> Form {
        self.mul_poly(&Poly::constant(c))
    }

    pub fn scale_real(&self, c: f64) -> Form {
        self.scale(Complex64::new(c, 0.0))
    }

    pub fn mul_poly(&self, p: &Poly) -> Form {
        let mut out = Form::zero(self.n_sites);
        for (m, q) in &self.terms {
            out.add_term(m.clone(), q.mul(p));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the empty fermion monomial.
    pub fn degree_zero_part(&self) -> Poly {
        self.terms.get(&Vec::new()).cloned().unwrap_or_default()
    }

    pub fn max_fermion_degree(&self) -> usize {
        self.terms.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    /// Drop Poly terms with coupling degree > max, everywhere.
    pub fn truncate_coupling_degree(&self, max: u32) -> Form {
        let mut out = Form::zero(self.n_sites);
        for (m, p) in &self.terms {
            out.add_term(m.clone(), p.truncate_coupling_degree(max));
        }
        out
    }

    pub fn prune(&self, eps: f64) -> Form {
        let mut out = Form::zero(self.n_sites);
        for (m, p) in &self.terms {
            out.add_term(m.clone(), p.prune(eps));
        }
        out
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.terms
            .values()
            .map(|p| p.max_coeff_norm())
            .fold(0.0, f64::max)
    }

    /// Canonical text rendering for golden-file comparisons.
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (m, p) in &self.terms {
            let gens: Vec<String> = m.iter().map(|v| format!("{:?}", v)).collect();
            out.push_str(&format!("[{}] {}\n", gens.join(" "), p.render()));
        }
        out
    }
}

pub fn wedge_mul(f: &Form, g: &Form) -> Result<Form, FormError> {
    if f.n_sites != g.n_sites {
        return Err(FormError::LatticeMismatch(f.n_sites, g.n_sites));
    }
    let mut out = Form::zero(f.n_sites);
    for (ma, pa) in &f.terms {
        for (mb, pb) in &g.terms {
            let mut word = ma.clone();
            word.extend_from_slice(mb);
            if let Some((m, sign)) = canonicalize(word) {
                out.add_term(m, pa.mul(pb).scale_real(sign));
            }
        }
    }
    Ok(out)
}

/// e^{-F} for a form whose degree-zero part vanishes (nilpotent): the series
/// truncates at the fermion capacity 2·n_sites.
pub fn exp_nilpotent(f: &Form) -> Form {
    assert!(
        f.degree_zero_part().is_zero(),
        "exp_nilpotent needs a form with no degree-0 part"
    );
    let mut acc = Form::one(f.n_sites);
    let mut power = Form::one(f.n_sites);
    let mut k = 1.0;
    loop {
        power = wedge_mul(&power, f).unwrap().scale_real(-1.0 / k);
        if power.is_zero() {
            break;
        }
        acc = acc.add(&power);
        k += 1.0;
    }
    acc
}

/// τ_x = φ_x φ̄_x + ψ_x ψ̄_x.
pub fn tau(n_sites: usize, x: usize) -> Form {
    let mut f = Form::from_poly(
        n_sites,
        Poly::var(BVar::phi(x)).mul(&Poly::var(BVar::phibar(x))),
    );
    f.add_term(vec![FVar::psi(x), FVar::psibar(x)], Poly::one());
    f
}

/// τ_Δ,x = ½(φ_x(-Δφ̄)_x + (-Δφ)_x φ̄_x + ψ_x(-Δψ̄)_x + (-Δψ)_x ψ̄_x).
pub fn tau_delta(lat: &TorusLattice, x: usize) -> Form {
    let n = lat.site_count();
    let deg = 2.0 * lat.dimension() as f64;
    // (-Δ f)_x = 2d f_x - Σ_{y~x} f_y
    let minus_lap_phi = |bar: bool| -> Poly {
        let v = |s: usize| {
            if bar {
                Poly::var(BVar::phibar(s))
            } else {
                Poly::var(BVar::phi(s))
            }
        };
        let mut p = v(x).scale_real(deg);
        for y in lat.neighbors(x) {
            p = p.sub(&v(y));
        }
        p
    };
    let minus_lap_psi = |bar: bool| -> Form {
        let v = |s: usize| {
            if bar {
                Form::fermion(n, FVar::psibar(s))
            } else {
                Form::fermion(n, FVar::psi(s))
            }
        };
        let mut f = v(x).scale_real(deg);
        for y in lat.neighbors(x) {
            f = f.sub(&v(y));
        }
        f
    };
    let boson = Poly::var(BVar::phi(x))
        .mul(&minus_lap_phi(true))
        .add(&minus_lap_phi(false).mul(&Poly::var(BVar::phibar(x))));
    let fermion = wedge_mul(&Form::fermion(n, FVar::psi(x)), &minus_lap_psi(true))
        .unwrap()
        .add(&wedge_mul(&minus_lap_psi(false), &Form::fermion(n, FVar::psibar(x))).unwrap());
    Form::from_poly(n, boson).add(&fermion).scale_real(0.5)
}

/// The five coupling coefficients of V, as polynomials so they can be either
/// numeric or the symbolic coupling indeterminates.
#[derive(Debug, Clone)]
pub struct VCoefficients {
    pub g: Poly,
    pub nu: Poly,
    pub z: Poly,
    pub lambda: Poly,
    pub q: Poly,
}

impl VCoefficients {
    pub fn numeric(g: f64, nu: f64, z: f64, lambda: f64, q: f64) -> Self {
        VCoefficients {
            g: Poly::real(g),
            nu: Poly::real(nu),
            z: Poly::real(z),
            lambda: Poly::real(lambda),
            q: Poly::real(q),
        }
    }

    /// Fully symbolic couplings.
    pub fn symbolic() -> Self {
        VCoefficients {
            g: Poly::var(BVar::Coupling(Cpl::G)),
            nu: Poly::var(BVar::Coupling(Cpl::Nu)),
            z: Poly::var(BVar::Coupling(Cpl::Z)),
            lambda: Poly::var(BVar::Coupling(Cpl::Lambda)),
            q: Poly::var(BVar::Coupling(Cpl::Q)),
        }
    }
}

/// V(X) = Σ_{x∈X} (gτ_x² + ντ_x + zτ_Δ,x) + λ1_{a∈X}σ̄φ_a + λ1_{b∈X}σφ̄_b
///        + q Σ_{x∈X∩{a,b}} σ̄σ.
pub fn build_v(
    lat: &TorusLattice,
    c: &VCoefficients,
    xset: &[usize],
    a: usize,
    b: usize,
) -> Form {
    let n = lat.site_count();
    let mut v = Form::zero(n);
    for &x in xset {
        let t = tau(n, x);
        let tsq = wedge_mul(&t, &t).unwrap();
        v = v.add(&tsq.mul_poly(&c.g));
        v = v.add(&t.mul_poly(&c.nu));
        v = v.add(&tau_delta(lat, x).mul_poly(&c.z));
        // observable terms carry minus signs, and the σσ̄ monomial is
        // split half-and-half between the two marked sites so that V(Λ)
        // contains exactly one copy of qσσ̄; this is what makes the q-flow
        // increment equal the full covariance C(a,b) and the two-point
        // extraction −∂_σ∂_σ̄ read off q directly
        if x == a {
            let sb_phi = Poly::var(BVar::Sigma { bar: true }).mul(&Poly::var(BVar::phi(a)));
            v = v.sub(&Form::from_poly(n, sb_phi.mul(&c.lambda)));
        }
        if x == b {
            let s_phibar = Poly::var(BVar::Sigma { bar: false }).mul(&Poly::var(BVar::phibar(b)));
            v = v.sub(&Form::from_poly(n, s_phibar.mul(&c.lambda)));
        }
        if x == a || x == b {
            let ss = Poly::var(BVar::Sigma { bar: true }).mul(&Poly::var(BVar::Sigma {
                bar: false,
            }));
            v = v.sub(&Form::from_poly(n, ss.mul(&c.q).scale_real(0.5)));
        }
    }
    v
}

/// The supersymmetry antiderivation Q̂: Q̂φ = ψ, Q̂ψ = -φ, Q̂φ̄ = ψ̄, Q̂ψ̄ = φ̄;
/// Q̂(FG) = (Q̂F)G + (-1)^{deg F} F (Q̂G); Q̂σ = 0.
pub fn q_hat(f: &Form) -> Form {
    let n = f.n_sites;
    let mut out = Form::zero(n);
    for (m, p) in &f.terms {
        // boson part: Q̂ acting on the coefficient produces fermions
        for (mono, &coef) in &p.terms {
            for (v, _) in mono {
                if let BVar::Field { copy, site, bar } = v {
                    let dp = Poly {
                        terms: [(mono.clone(), coef)].into_iter().collect(),
                    }
                    .differentiate(*v);
                    let gen = Form::fermion(
                        n,
                        FVar {
                            copy: *copy,
                            site: *site,
                            bar: *bar,
                        },
                    );
                    // ψ factor multiplies from the left of ψ^m
                    let mut t = Form::zero(n);
                    t.add_term(m.clone(), dp);
                    out = out.add(&wedge_mul(&gen, &t).unwrap());
                }
            }
        }
        // fermion part: replace the k-th generator, sign (-1)^k from moving Q̂
        // past the k-1 preceding odd generators (the coefficient is even)
        for (k, v) in m.iter().enumerate() {
            let replacement = if v.bar {
                Poly::var(BVar::Field {
                    copy: v.copy,
                    site: v.site,
                    bar: true,
                })
            } else {
                Poly::var(BVar::Field {
                    copy: v.copy,
                    site: v.site,
                    bar: false,
                })
                .scale_real(-1.0)
            };
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let mut rest = m.clone();
            rest.remove(k);
            out.add_term(rest, p.mul(&replacement).scale_real(sign));
        }
    }
    out
}

/// Gauge flow (σ, φ) -> (e^{iθ}σ, e^{iθ}φ) applied to all boson variables,
/// with conjugates rotating oppositely; fermions rotate like their bosons.
pub fn gauge_rotate(f: &Form, theta: f64) -> Form {
    let phase = Complex64::from_polar(1.0, theta);
    let mut out = Form::zero(f.n_sites);
    for (m, p) in &f.terms {
        let mut rotated = Poly::zero();
        for (mono, &c) in &p.terms {
            let mut factor = c;
            for (v, &pw) in mono {
                let ph = match v {
                    BVar::Field { bar, .. } | BVar::Sigma { bar } => {
                        if *bar {
                            phase.conj()
                        } else {
                            phase
                        }
                    }
                    BVar::Coupling(_) => Complex64::new(1.0, 0.0),
                };
                factor *= ph.powu(pw);
            }
            rotated.add_term(mono.clone(), factor);
        }
        let fermion_phase: Complex64 = m
            .iter()
            .map(|v| if v.bar { phase.conj() } else { phase })
            .product();
        out.add_term(m.clone(), rotated.scale(fermion_phase));
    }
    out
}
