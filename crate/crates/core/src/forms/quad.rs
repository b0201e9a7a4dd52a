//! Full (non-Gaussian) integrals of forms on tiny tori by tensor
//! Gauss–Hermite quadrature.
//!
//! The integrand e^{-exponent} ∧ observable is reduced per the power-series
//! definition of form integrals: the fermionic part of the exponent is
//! expanded (finite, nilpotent), the coefficient of the top form
//! Π_x ψ_x ψ̄_x is extracted, ψ_x ψ̄_x = (-1/π) du_x dv_x converts it to a
//! Lebesgue integral over R^{2|Λ|}, and the purely quadratic boson part of
//! the exponent supplies the Gaussian weight for Gauss–Hermite nodes; all
//! remaining boson terms (quartics etc.) are evaluated inside the integrand.

use super::form::{exp_nilpotent, wedge_mul, FVar, Form};
use super::poly::{BVar, Poly};
use crate::lattice::TorusLattice;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature supports at most {cap} sites, lattice has {got}")]
    TooManySites { got: usize, cap: usize },
    #[error("coupling symbols must be numeric before quadrature")]
    SymbolicCoupling,
    #[error("external field sigma is not supported in quadrature mode")]
    SigmaPresent,
    #[error("boson exponent quadratic part is not symmetric (asymmetry {0})")]
    NonSymmetricEnvelope(f64),
    #[error("boson exponent quadratic part is not positive definite (min eigenvalue {0})")]
    NonPositiveEnvelope(f64),
    #[error("quadratic part has a complex coefficient")]
    ComplexEnvelope,
    #[error("quadrature did not converge: relative residual {residual} at order {order}")]
    NotConverged { residual: f64, order: usize },
}

pub const QUAD_SITE_CAP: usize = 3;

#[derive(Debug, Clone)]
pub struct QuadratureOutcome {
    pub value: Complex64,
    /// relative difference between the last two refinements
    pub residual: f64,
    pub order: usize,
}

/// Single Poly term compiled for fast numeric evaluation at φ ∈ C^Λ.
struct CompiledPoly {
    terms: Vec<(Complex64, Vec<(usize, bool, u32)>)>,
}

fn compile(p: &Poly) -> Result<CompiledPoly, QuadError> {
    let mut terms = Vec::with_capacity(p.terms.len());
    for (m, &c) in &p.terms {
        let mut vars = Vec::with_capacity(m.len());
        for (v, &pw) in m {
            match v {
                BVar::Field { copy: 0, site, bar } => vars.push((*site as usize, *bar, pw)),
                BVar::Field { .. } => return Err(QuadError::SymbolicCoupling),
                BVar::Sigma { .. } => return Err(QuadError::SigmaPresent),
                BVar::Coupling(_) => return Err(QuadError::SymbolicCoupling),
            }
        }
        terms.push((c, vars));
    }
    Ok(CompiledPoly { terms })
}

impl CompiledPoly {
    fn eval(&self, phi: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, vars) in &self.terms {
            let mut t = *c;
            for &(site, bar, pw) in vars {
                let v = if bar { phi[site].conj() } else { phi[site] };
                for _ in 0..pw {
                    t *= v;
                }
            }
            acc += t;
        }
        acc
    }
}

/// Physicists' Gauss–Hermite nodes/weights (weight e^{-x²}) by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let b = ((k as f64 + 1.0) / 2.0).sqrt();
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, i)].powi(2);
            (eig.eigenvalues[i], w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
    )
}

/// Split the degree-zero boson exponent into the quadratic matrix A
/// (terms φ_x φ̄_y) and the rest.
fn split_envelope(n: usize, vb: &Poly) -> Result<(DMatrix<f64>, Poly), QuadError> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rest = Poly::zero();
    for (m, &c) in &vb.terms {
        // detect monomials that are exactly one φ_x times one φ̄_y
        let mut unbarred = None;
        let mut barred = None;
        let mut other = false;
        let mut deg = 0u32;
        for (v, &pw) in m.iter() {
            deg += pw;
            match v {
                BVar::Field { copy: 0, site, bar: false } if pw == 1 => unbarred = Some(*site as usize),
                BVar::Field { copy: 0, site, bar: true } if pw == 1 => barred = Some(*site as usize),
                _ => other = true,
            }
        }
        let quad = match (unbarred, barred, other, deg) {
            (Some(x), Some(y), false, 2) => Some((x, y)),
            _ => None,
        };
        match quad {
            Some((x, y)) => {
                if c.im.abs() > 1e-14 * (1.0 + c.re.abs()) {
                    return Err(QuadError::ComplexEnvelope);
                }
                a[(x, y)] += c.re;
            }
            None => rest.add_term(m.clone(), c),
        }
    }
    let asym = (&a - a.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + a.abs().max()) {
        return Err(QuadError::NonSymmetricEnvelope(asym));
    }
    let sym = (&a + a.transpose()) * 0.5;
    Ok((sym, rest))
}

pub fn integrate_full(
    lat: &TorusLattice,
    exponent: &Form,
    observable: &Form,
    rel_tol: f64,
) -> Result<QuadratureOutcome, QuadError> {
    integrate_full_capped(lat, exponent, observable, rel_tol, QUAD_SITE_CAP)
}

pub fn integrate_full_capped(
    lat: &TorusLattice,
    exponent: &Form,
    observable: &Form,
    rel_tol: f64,
    site_cap: usize,
) -> Result<QuadratureOutcome, QuadError> {
    let n = lat.site_count();
    let site_cap = site_cap.min(MAX_QUAD_SITES);
    if n > site_cap {
        return Err(QuadError::TooManySites {
            got: n,
            cap: site_cap,
        });
    }
    // split exponent into boson part and (nilpotent) fermionic part
    let vb = exponent.degree_zero_part();
    let mut vf = exponent.clone();
    vf.terms.remove(&Vec::new());
    let top = wedge_mul(&exp_nilpotent(&vf), observable).expect("same lattice");
    // coefficient of ψ_0 ψ̄_0 ψ_1 ψ̄_1 ... (the canonical order)
    let top_mono: Vec<FVar> = (0..n).flat_map(|x| [FVar::psi(x), FVar::psibar(x)]).collect();
    let p_top = top.terms.get(&top_mono).cloned().unwrap_or_default();
    if p_top.is_zero() {
        return Ok(QuadratureOutcome {
            value: Complex64::new(0.0, 0.0),
            residual: 0.0,
            order: 0,
        });
    }
    let (mut a, mut extra) = split_envelope(n, &vb)?;
    // Gauss–Hermite converges poorly when a quartic term narrows the true
    // integrand relative to the bare quadratic envelope. Fold a mass shift
    // proportional to the square root of the strongest |φ_x|⁴ coefficient
    // into the weight and compensate inside the integrand. The shift
    // vanishes for purely Gaussian exponents, keeping those exact.
    let mut b_max = 0.0f64;
    for (m, &c) in &extra.terms {
        let vars: Vec<(&BVar, &u32)> = m.iter().collect();
        if let [(BVar::Field { copy: 0, site, bar: false }, 2), (BVar::Field { copy: 0, site: s2, bar: true }, 2)] =
            vars.as_slice()
        {
            if site == s2 {
                b_max = b_max.max(c.re);
            }
        }
    }
    let alpha = 4.0 * b_max.sqrt();
    if alpha > 0.0 {
        for x in 0..n {
            a[(x, x)] += alpha;
            let mut m = std::collections::BTreeMap::new();
            m.insert(BVar::phi(x), 1);
            m.insert(BVar::phibar(x), 1);
            extra.add_term(m, Complex64::new(-alpha, 0.0));
        }
    }
    let eig = nalgebra::SymmetricEigen::new(a);
    let dmin = eig.eigenvalues.min();
    if dmin <= 0.0 {
        return Err(QuadError::NonPositiveEnvelope(dmin));
    }
    let q = eig.eigenvectors.clone();
    let scale: Vec<f64> = eig.eigenvalues.iter().map(|d| 1.0 / d.sqrt()).collect();
    let jacobian: f64 = scale.iter().map(|s| s * s).product(); // u and v blocks
    let p_c = compile(&p_top)?;
    let extra_c = compile(&extra)?;

    let orders = [6usize, 10, 14, 18, 24];
    let mut prev: Option<Complex64> = None;
    let mut last_residual = f64::INFINITY;
    for &order in &orders {
        let val = tensor_integral(n, &q, &scale, &p_c, &extra_c, order);
        let total = val * jacobian * (-1.0 / std::f64::consts::PI).powi(n as i32);
        if let Some(p) = prev {
            let residual = (total - p).norm() / total.norm().max(1e-12);
            last_residual = residual;
            if residual < rel_tol {
                return Ok(QuadratureOutcome {
                    value: total,
                    residual,
                    order,
                });
            }
        }
        prev = Some(total);
    }
    Err(QuadError::NotConverged {
        residual: last_residual,
        order: *orders.last().unwrap(),
    })
}

const MAX_QUAD_SITES: usize = 8;

struct TensorState<'a> {
    n: usize,
    order: usize,
    weights: &'a [f64],
    /// contrib[pos][i][x] = nodes[i] * scale[pos] * Q[x, pos]
    contrib: Vec<Vec<[f64; MAX_QUAD_SITES]>>,
    p_c: &'a CompiledPoly,
    extra_c: &'a CompiledPoly,
}

impl TensorState<'_> {
    fn recurse(
        &self,
        dim: usize,
        u: [f64; MAX_QUAD_SITES],
        v: [f64; MAX_QUAD_SITES],
        w: f64,
    ) -> Complex64 {
        if dim == 2 * self.n {
            let mut phi = [Complex64::new(0.0, 0.0); MAX_QUAD_SITES];
            for x in 0..self.n {
                phi[x] = Complex64::new(u[x], v[x]);
            }
            let phi = &phi[..self.n];
            let e = self.extra_c.eval(phi);
            // the Gaussian weight is already in the GH nodes; guard the
            // non-quadratic exponent against overflow
            let damp = (-e.re).min(700.0);
            let ph = Complex64::from_polar(damp.exp(), -e.im);
            return ph * self.p_c.eval(phi) * w;
        }
        let pos = dim % self.n;
        let is_u = dim < self.n;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.order {
            let col = &self.contrib[pos][i];
            let mut u2 = u;
            let mut v2 = v;
            if is_u {
                for x in 0..self.n {
                    u2[x] += col[x];
                }
            } else {
                for x in 0..self.n {
                    v2[x] += col[x];
                }
            }
            acc += self.recurse(dim + 1, u2, v2, w * self.weights[i]);
        }
        acc
    }
}

fn tensor_integral(
    n: usize,
    q: &DMatrix<f64>,
    scale: &[f64],
    p_c: &CompiledPoly,
    extra_c: &CompiledPoly,
    order: usize,
) -> Complex64 {
    let (nodes, weights) = gauss_hermite(order);
    let mut contrib = vec![vec![[0.0f64; MAX_QUAD_SITES]; order]; n];
    for pos in 0..n {
        for i in 0..order {
            for x in 0..n {
                contrib[pos][i][x] = nodes[i] * scale[pos] * q[(x, pos)];
            }
        }
    }
    let state = TensorState {
        n,
        order,
        weights: &weights,
        contrib,
        p_c,
        extra_c,
    };
    // split the outermost dimension across threads; the merge order is fixed
    let partials: Vec<Complex64> = (0..order)
        .into_par_iter()
        .map(|i0| {
            let mut u = [0.0f64; MAX_QUAD_SITES];
            for x in 0..n {
                u[x] = state.contrib[0][i0][x];
            }
            state.recurse(1, u, [0.0; MAX_QUAD_SITES], weights[i0])
        })
        .collect();
    partials.into_iter().sum()
}

/// S_A for A = a·(m²-Δ)-type quadratic actions: Σ_x (z·τ_Δ,x + c_x τ_x),
/// including the fermionic parts, as a Form.
pub fn quadratic_action(lat: &TorusLattice, z: f64, c: &[f64]) -> Form {
    let n = lat.site_count();
    let mut s = Form::zero(n);
    for x in 0..n {
        s = s.add(&super::form::tau_delta(lat, x).scale_real(z));
        s = s.add(&super::form::tau(n, x).scale_real(c[x]));
    }
    s
}
