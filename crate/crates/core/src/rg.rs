//! Perturbative renormalisation-group machinery: the two-argument
//! cross-contraction F_w, the localized correction W_j, the interaction
//! factor I_{j,X}, the closed-form flow map v_pt, the symbolic extraction
//! of the flow equations from one fluctuation integration, and the ḡ
//! recursion.

use crate::forms::loc::{loc_project, LocError};
use crate::forms::wick::{exp_laplacian, Channel};
use crate::forms::{build_v, BVar, Cpl, Form, Poly, VCoefficients};
use crate::spectral::FlowMoments;
use crate::geometry::Polymer;
use crate::lattice::{Kernel, TorusLattice};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RgError {
    #[error("localization failed: {0}")]
    Loc(#[from] LocError),
    #[error("moments missing for scale {0}")]
    MissingScale(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CouplingConstants {
    pub g: f64,
    pub nu: f64,
    pub z: f64,
    pub lambda: f64,
    pub q: f64,
}

impl CouplingConstants {
    pub fn bulk(g: f64, nu: f64, z: f64) -> Self {
        CouplingConstants {
            g,
            nu,
            z,
            lambda: 1.0,
            q: 0.0,
        }
    }

    /// cone membership |ν| ∨ |z| ≤ b·g
    pub fn in_cone(&self, b: f64) -> bool {
        self.nu.abs().max(self.z.abs()) <= b * self.g
    }

    pub fn is_finite(&self) -> bool {
        [self.g, self.nu, self.z, self.lambda, self.q]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Per-scale context for the closed-form flow map.
#[derive(Debug, Clone)]
pub struct PTContext<'a> {
    pub j: usize,
    pub moments: &'a FlowMoments,
    pub l: usize,
    pub d: usize,
    pub c_g: f64,
    /// coalescence scale of the observable pair: at scales j ≥ s_ab the
    /// marked sites share a small set, the σ-weight schedule freezes, and
    /// λ stops renormalising (only q keeps accumulating)
    pub s_ab: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrajectory {
    pub steps: Vec<CouplingConstants>,
    pub diverged: bool,
    pub cone_exit: Option<usize>,
}

/// The closed-form second-order flow map; remainder terms are identically
/// zero in this perturbative mode.
pub fn v_pt(c: &CouplingConstants, ctx: &PTContext) -> CouplingConstants {
    let j = ctx.j;
    let m = ctx.moments;
    let c00 = m.c00[j];
    let l2j = (ctx.l as f64).powi(2 * j as i32);
    // Σ_{k>j} C_k(0,0) over the remaining scales
    let tail: f64 = m.c00[j..].iter().sum();
    let mu = l2j * (c.nu + 2.0 * c.g * tail);
    let lambda_factor = if ctx.s_ab.is_none_or(|s| j < s) {
        1.0 + c.g * m.delta[j] + 0.5 * mu / l2j * m.row_sum[j]
    } else {
        1.0
    };
    CouplingConstants {
        g: c.g - ctx.c_g * c.g * c.g,
        nu: c.nu + 2.0 * c.g * c00,
        z: c.z,
        lambda: lambda_factor * c.lambda,
        q: c.q + c.lambda * c.lambda * m.cab[j],
    }
}

/// map background fields (copy 0) into an auxiliary copy
fn form_to_copy(f: &Form, copy: u8) -> Form {
    let mut out = Form::zero(f.n_sites);
    for (m, p) in &f.terms {
        let fm: Vec<_> = m
            .iter()
            .map(|v| {
                let mut w = *v;
                if w.copy == 0 {
                    w.copy = copy;
                }
                w
            })
            .collect();
        let mut q = Poly::zero();
        for (bm, &c) in &p.terms {
            let bm2 = bm
                .iter()
                .map(|(v, &pw)| {
                    let v2 = match v {
                        BVar::Field { copy: 0, site, bar } => BVar::Field {
                            copy,
                            site: *site,
                            bar: *bar,
                        },
                        other => other.clone(),
                    };
                    (v2, pw)
                })
                .collect();
            q.add_term(bm2, c);
        }
        out.add_term(fm, q);
    }
    out
}

/// collapse an auxiliary copy back onto the background fields
fn merge_copy(f: &Form, copy: u8) -> Form {
    let mut out = Form::zero(f.n_sites);
    for (m, p) in &f.terms {
        let fm: Vec<_> = m
            .iter()
            .map(|v| {
                let mut w = *v;
                if w.copy == copy {
                    w.copy = 0;
                }
                w
            })
            .collect();
        let mut q = Poly::zero();
        for (bm, &c) in &p.terms {
            let bm2: Vec<(BVar, u32)> = bm
                .iter()
                .map(|(v, &pw)| {
                    let v2 = match v {
                        BVar::Field {
                            copy: cc,
                            site,
                            bar,
                        } if *cc == copy => BVar::Field {
                            copy: 0,
                            site: *site,
                            bar: *bar,
                        },
                        other => other.clone(),
                    };
                    (v2, pw)
                })
                .collect();
            // powers of the same variable from the two copies merge
            let mut merged: crate::forms::BosMono = std::collections::BTreeMap::new();
            for (v, pw) in bm2 {
                *merged.entry(v).or_insert(0) += pw;
            }
            q.add_term(merged, c);
        }
        if let Some((canon, sign)) = crate::forms::canonicalize(fm) {
            out.add_term(canon, q.scale_real(sign));
        }
    }
    out
}

/// cross-contraction channels between copy 0 and copy 1; the fermion signs
/// are fixed by the requirement that for V = ψ_x ψ̄_x the n=1 term is
/// Σ_y w(x,y) (ψ_x ψ̄_y + ψ̄_x ψ_y) and the n=2 term is −Σ_y w(x,y)²
fn cross_channels() -> Vec<Channel> {
    let mut ch = Vec::new();
    for fermion in [false, true] {
        // the unbarred derivative is always the (later-applied) left slot;
        // the two channels swap which copy carries it
        for (lc, rc) in [(0u8, 1u8), (1, 0)] {
            ch.push(Channel {
                left_copy: lc,
                left_bar: false,
                right_copy: rc,
                right_bar: true,
                fermion,
                weight: 1.0,
            });
        }
    }
    ch
}

/// F_w(F, G) = Σ_{n≥1} (1/n!) (DⁿF) wⁿ (DⁿG): all nonempty cross
/// contractions between F and an independent copy of G, merged back onto
/// shared fields. Truncates automatically at the field degree of F.
pub fn f_w(lat: &TorusLattice, f: &Form, g: &Form, w: &Kernel) -> Form {
    let g1 = form_to_copy(g, 1);
    let product = crate::forms::wedge_mul(f, &g1).expect("same lattice");
    let expanded = exp_laplacian(lat, w, &product, &cross_channels());
    let connected = expanded.sub(&product);
    merge_copy(&connected, 1)
}

/// W_j(V, X) = (1 − Loc_X) F_{w_j}(V(X), V(Λ)); zero whenever w_j = 0.
pub fn w_correction(
    lat: &TorusLattice,
    vc: &VCoefficients,
    x_sites: &BTreeSet<usize>,
    a: usize,
    b: usize,
    w: &Kernel,
) -> Result<Form, RgError> {
    if w.sup_norm() == 0.0 {
        return Ok(Form::zero(lat.site_count()));
    }
    let xv: Vec<usize> = x_sites.iter().copied().collect();
    let all: Vec<usize> = (0..lat.site_count()).collect();
    let v_x = build_v(lat, vc, &xv, a, b);
    let v_all = build_v(lat, vc, &all, a, b);
    let fw = f_w(lat, &v_x, &v_all, w);
    let loc = loc_project(lat, &fw, x_sites, a, b)?;
    Ok(fw.sub(&loc.to_form(lat)))
}

/// I_{j,X}(V) = e^{−V(X)} (1 + ½ W_j(V, X)), expanded through coupling
/// degree 2 (the working order).
pub fn i_factor(
    lat: &TorusLattice,
    vc: &VCoefficients,
    x_sites: &BTreeSet<usize>,
    a: usize,
    b: usize,
    w: &Kernel,
) -> Result<Form, RgError> {
    let xv: Vec<usize> = x_sites.iter().copied().collect();
    let v = build_v(lat, vc, &xv, a, b);
    let n = lat.site_count();
    // e^{-V} = 1 - V + V²/2 mod coupling degree 3
    let mut out = Form::one(n);
    out = out.sub(&v);
    let v2 = crate::forms::wedge_mul(&v, &v).expect("same lattice");
    out = out.add(&v2.scale_real(0.5));
    let w_form = w_correction(lat, vc, x_sites, a, b, w)?;
    out = out.add(&w_form.scale_real(0.5));
    Ok(out.truncate_coupling_degree(2))
}

fn form_coupling_part(f: &Form, deg: u32) -> Form {
    let mut out = Form::zero(f.n_sites);
    for (m, p) in &f.terms {
        out.add_term(m.clone(), p.coupling_degree_part(deg));
    }
    out
}

/// the field-free, σ-free (vacuum) part of a form's scalar coefficient
fn vacuum_part(f: &Form) -> Poly {
    let deg0 = f.degree_zero_part();
    let mut out = Poly::zero();
    for (m, &c) in &deg0.terms {
        let pure = m.keys().all(|v| matches!(v, BVar::Coupling(_)));
        if pure {
            out.add_term(m.clone(), c);
        }
    }
    out
}

fn strip_vacuum(f: &Form) -> Form {
    let vac = vacuum_part(f);
    f.sub(&Form::from_poly(f.n_sites, vac))
}

#[derive(Debug, Clone)]
pub struct ExtractedFlow {
    /// the flow map: each new coupling as a polynomial of coupling-degree
    /// ≤ 2 in the old coupling symbols
    pub v_prime: VCoefficients,
    /// bulk vacuum energy generated by the step (per torus, not per site)
    pub vacuum: Poly,
    /// mismatch at the matched orders (coupling degree ≤ 2); near zero for
    /// a successful extraction. The genuine third-order remainder is
    /// evaluated numerically by [`flow_residual`].
    pub residual: Form,
    /// worst localization residual across the two solved orders
    pub loc_residual: f64,
    /// −(coefficient of g² in the extracted g-flow)
    pub c_g: f64,
}

/// Match E_{C}[I_j(V)] against (1 − U + U²/2)(1 − V′ + V′²/2 + ½W_{j+1}(V′))
/// order by order in the couplings, solving for the local polynomial V′ and
/// the vacuum energy U by localization. The unmatched difference is the
/// third-order residual of the flow-equation proposition.
pub fn extract_flow(
    lat: &TorusLattice,
    c_next: &Kernel,
    w_j: &Kernel,
    w_next: &Kernel,
    a: usize,
    b: usize,
) -> Result<ExtractedFlow, RgError> {
    let n = lat.site_count();
    let all: BTreeSet<usize> = (0..n).collect();
    let vc = VCoefficients::symbolic();
    let i_j = i_factor(lat, &vc, &all, a, b, w_j)?;
    let z = crate::forms::wick::super_expectation(lat, c_next, &i_j)
        .truncate_coupling_degree(2)
        .prune(1e-13);

    // first order
    let z1 = form_coupling_part(&z, 1);
    let u1 = vacuum_part(&z1).scale_real(-1.0);
    let m1 = strip_vacuum(&z1).scale_real(-1.0);
    let loc1 = loc_project(lat, &m1, &all, a, b)?;
    let v1 = loc1.v;
    let mut loc_residual = loc1.residual;
    let v1_form = build_v(lat, &v1, &all.iter().copied().collect::<Vec<_>>(), a, b);

    // second order: M = −Z₂ + U₁V′₁ + U₁²/2 + V′₁²/2 + ½W_{j+1}(V′₁)
    let z2 = form_coupling_part(&z, 2);
    let w2 = w_correction(lat, &v1, &all, a, b, w_next)?;
    let mut m = z2.scale_real(-1.0);
    m = m.add(&v1_form.mul_poly(&u1));
    m = m.add(&Form::from_poly(n, u1.mul(&u1).scale_real(0.5)));
    m = m.add(
        &crate::forms::wedge_mul(&v1_form, &v1_form)
            .expect("same lattice")
            .scale_real(0.5),
    );
    m = m.add(&w2.scale_real(0.5));
    let m = m.truncate_coupling_degree(2).prune(1e-13);
    let u2 = vacuum_part(&m);
    let loc2 = loc_project(lat, &strip_vacuum(&m), &all, a, b)?;
    loc_residual = loc_residual.max(loc2.residual);
    let v2 = loc2.v;

    let v_prime = VCoefficients {
        g: v1.g.add(&v2.g),
        nu: v1.nu.add(&v2.nu),
        z: v1.z.add(&v2.z),
        lambda: v1.lambda.add(&v2.lambda),
        q: v1.q.add(&v2.q),
    };
    let vacuum = u1.add(&u2);

    // residual: Z − (1 − U + U²/2)(1 − V′ + V′²/2 + ½W_{j+1}(V′))
    let v_form = build_v(
        lat,
        &v_prime,
        &all.iter().copied().collect::<Vec<_>>(),
        a,
        b,
    );
    let w_prime = w_correction(lat, &v_prime, &all, a, b, w_next)?;
    let mut i_next = Form::one(n);
    i_next = i_next.sub(&v_form);
    i_next = i_next.add(
        &crate::forms::wedge_mul(&v_form, &v_form)
            .expect("same lattice")
            .scale_real(0.5),
    );
    i_next = i_next.add(&w_prime.scale_real(0.5));
    let u_form = Form::from_poly(n, vacuum.clone());
    let mut prefactor = Form::one(n);
    prefactor = prefactor.sub(&u_form);
    prefactor = prefactor.add(&Form::from_poly(
        n,
        vacuum.mul(&vacuum).scale_real(0.5),
    ));
    let model = crate::forms::wedge_mul(&prefactor, &i_next).expect("same lattice");
    let residual = z.sub(&model.truncate_coupling_degree(2)).prune(1e-12);

    let mut g2 = std::collections::BTreeMap::new();
    g2.insert(BVar::Coupling(Cpl::G), 2u32);
    let c_g = -v_prime
        .g
        .terms
        .get(&g2)
        .copied()
        .unwrap_or(Complex64::new(0.0, 0.0))
        .re;

    Ok(ExtractedFlow {
        v_prime,
        vacuum,
        residual,
        loc_residual,
        c_g,
    })
}

/// Evaluate a coupling-symbol polynomial at numeric couplings (fields and σ
/// pass through).
pub fn eval_couplings(p: &Poly, c: &CouplingConstants) -> Poly {
    p.eval_partial(&|v: &BVar| match v {
        BVar::Coupling(Cpl::G) => Some(Complex64::new(c.g, 0.0)),
        BVar::Coupling(Cpl::Nu) => Some(Complex64::new(c.nu, 0.0)),
        BVar::Coupling(Cpl::Z) => Some(Complex64::new(c.z, 0.0)),
        BVar::Coupling(Cpl::Lambda) => Some(Complex64::new(c.lambda, 0.0)),
        BVar::Coupling(Cpl::Q) => Some(Complex64::new(c.q, 0.0)),
        _ => None,
    })
}

/// sup of coefficient magnitudes after numeric coupling substitution
pub fn residual_magnitude(f: &Form, c: &CouplingConstants) -> f64 {
    let mut worst = 0.0f64;
    for (_, p) in &f.terms {
        worst = worst.max(eval_couplings(p, c).max_coeff_norm());
    }
    worst
}

/// ḡ_{j+1} = ḡ_j − c_g ḡ_j², the model β-function recursion.
pub fn gbar_flow(g0: f64, c_g: f64, steps: usize) -> Result<Vec<f64>, RgError> {
    let mut seq = Vec::with_capacity(steps + 1);
    seq.push(g0);
    let mut g = g0;
    for _ in 0..steps {
        g = g - c_g * g * g;
        seq.push(g);
    }
    Ok(seq)
}

/// V̂(B) = V(B) + Loc_B (K-term); identity when the K-term is absent
/// (perturbative mode).
pub fn vhat(
    lat: &TorusLattice,
    v: &VCoefficients,
    k_term: Option<&Form>,
    block_sites: &BTreeSet<usize>,
    a: usize,
    b: usize,
) -> Result<VCoefficients, RgError> {
    match k_term {
        None => Ok(v.clone()),
        Some(k) => {
            let loc = loc_project(lat, k, block_sites, a, b)?;
            Ok(VCoefficients {
                g: v.g.add(&loc.v.g),
                nu: v.nu.add(&loc.v.nu),
                z: v.z.add(&loc.v.z),
                lambda: v.lambda.add(&loc.v.lambda),
                q: v.q.add(&loc.v.q),
            })
        }
    }
}

/// Diagnostic bound shape M·c_pt·ε^{f(a,X)} with f(a,∅)=0 and
/// f(a,X) = 3 + a(|X|_j − 2^d)₊ otherwise.
pub fn k_bound_shape(x: &Polymer, d: usize, a_param: f64, eps: f64, m: f64, c_pt: f64) -> f64 {
    let exponent = if x.blocks.is_empty() {
        0.0
    } else {
        let excess = (x.blocks.len() as f64) - (1u64 << d) as f64;
        3.0 + a_param * excess.max(0.0)
    };
    m * c_pt * eps.powf(exponent)
}


/// couplings scaled by a single bookkeeping symbol ε (reusing the g-symbol
/// slot): coupling degree then counts powers of ε
fn eps_scaled(c: &CouplingConstants) -> VCoefficients {
    let eps = Poly::var(BVar::Coupling(Cpl::G));
    VCoefficients {
        g: eps.scale_real(c.g),
        nu: eps.scale_real(c.nu),
        z: eps.scale_real(c.z),
        lambda: eps.scale_real(c.lambda),
        q: eps.scale_real(c.q),
    }
}

/// substitute coupling symbols by ε·(numeric value), preserving the total
/// power as a power of ε
fn subst_eps(p: &Poly, c: &CouplingConstants) -> Poly {
    let mut out = Poly::zero();
    for (m, &coeff) in &p.terms {
        let mut factor = Complex64::new(1.0, 0.0);
        let mut eps_pow = 0u32;
        let mut rest: crate::forms::BosMono = std::collections::BTreeMap::new();
        for (v, &pw) in m {
            match v {
                BVar::Coupling(cpl) => {
                    let val = match cpl {
                        Cpl::G => c.g,
                        Cpl::Nu => c.nu,
                        Cpl::Z => c.z,
                        Cpl::Lambda => c.lambda,
                        Cpl::Q => c.q,
                    };
                    factor *= Complex64::new(val, 0.0).powu(pw);
                    eps_pow += pw;
                }
                other => {
                    rest.insert(other.clone(), pw);
                }
            }
        }
        if eps_pow > 0 {
            rest.insert(BVar::Coupling(Cpl::G), eps_pow);
        }
        out.add_term(rest, coeff * factor);
    }
    out
}

/// The third-order remainder of one flow-extraction step, evaluated with
/// all couplings scaled along the numeric ray `c`: both sides of the
/// matching identity are expanded through third order in the ray parameter
/// and the coefficient mismatch at that order is returned (together with
/// the worst mismatch at the matched orders ≤ 2, which should be tiny).
pub fn flow_residual(
    lat: &TorusLattice,
    c_next: &Kernel,
    w_j: &Kernel,
    w_next: &Kernel,
    a: usize,
    b: usize,
    extracted: &ExtractedFlow,
    c: &CouplingConstants,
) -> Result<(f64, f64), RgError> {
    let n = lat.site_count();
    let all: BTreeSet<usize> = (0..n).collect();
    let all_v: Vec<usize> = all.iter().copied().collect();
    let vc = eps_scaled(c);
    let v = build_v(lat, &vc, &all_v, a, b);
    let v2 = crate::forms::wedge_mul(&v, &v).expect("same lattice");
    let v3 = crate::forms::wedge_mul(&v2, &v).expect("same lattice");
    let w_form = w_correction(lat, &vc, &all, a, b, w_j)?;
    let mut i_j = Form::one(n);
    i_j = i_j.sub(&v);
    i_j = i_j.add(&v2.scale_real(0.5));
    i_j = i_j.sub(&v3.scale_real(1.0 / 6.0));
    i_j = i_j.add(&w_form.scale_real(0.5));
    i_j = i_j.sub(
        &crate::forms::wedge_mul(&w_form, &v)
            .expect("same lattice")
            .scale_real(0.5),
    );
    let i_j = i_j.truncate_coupling_degree(3);
    let z = crate::forms::wick::super_expectation(lat, c_next, &i_j)
        .truncate_coupling_degree(3)
        .prune(1e-14);

    let vp = VCoefficients {
        g: subst_eps(&extracted.v_prime.g, c),
        nu: subst_eps(&extracted.v_prime.nu, c),
        z: subst_eps(&extracted.v_prime.z, c),
        lambda: subst_eps(&extracted.v_prime.lambda, c),
        q: subst_eps(&extracted.v_prime.q, c),
    };
    let u = subst_eps(&extracted.vacuum, c);
    let vp_form = build_v(lat, &vp, &all_v, a, b);
    let vp2 = crate::forms::wedge_mul(&vp_form, &vp_form).expect("same lattice");
    let vp3 = crate::forms::wedge_mul(&vp2, &vp_form).expect("same lattice");
    let wp = w_correction(lat, &vp, &all, a, b, w_next)?;
    let mut i_next = Form::one(n);
    i_next = i_next.sub(&vp_form);
    i_next = i_next.add(&vp2.scale_real(0.5));
    i_next = i_next.sub(&vp3.scale_real(1.0 / 6.0));
    i_next = i_next.add(&wp.scale_real(0.5));
    i_next = i_next.sub(
        &crate::forms::wedge_mul(&wp, &vp_form)
            .expect("same lattice")
            .scale_real(0.5),
    );
    let mut prefactor = Form::one(n);
    prefactor = prefactor.sub(&Form::from_poly(n, u.clone()));
    prefactor = prefactor.add(&Form::from_poly(n, u.mul(&u).scale_real(0.5)));
    prefactor = prefactor.sub(&Form::from_poly(
        n,
        u.mul(&u).mul(&u).scale_real(1.0 / 6.0),
    ));
    let model = crate::forms::wedge_mul(&prefactor, &i_next)
        .expect("same lattice")
        .truncate_coupling_degree(3);
    let diff = z.sub(&model);
    let mut matched = 0.0f64;
    for k in 0..=2 {
        matched = matched.max(form_coupling_part(&diff, k).max_coeff_norm());
    }
    let third = form_coupling_part(&diff, 3).max_coeff_norm();
    Ok((third, matched))
}
