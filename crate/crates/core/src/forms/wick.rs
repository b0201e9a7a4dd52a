//! Exact Gaussian super-expectations by Wick contraction.
//!
//! The θ-doubled fluctuation integral E_C θF — F evaluated at φ+ξ, ψ+η with
//! (ξ,η) integrated out at covariance C — equals the heat-semigroup action
//! e^{Δ_C} F on the background fields, where
//!     Δ_C = Σ_{x,y} C(x,y) (∂_{φ_x} ∂_{φ̄_y} + ∂_{ψ_x} ∂_{ψ̄_y}).
//! Fermion derivatives are left derivatives (sign (-1)^position); applying
//! the barred derivative first fixes the convention so that
//! E_C ψ_a ψ̄_b = -C(a,b), which together with E_C φ̄_a φ_b = C(a,b) makes
//! E_C τ = 0 as supersymmetry demands.

use super::form::{FVar, FermMono, Form};
use super::poly::{BVar, Poly};
use crate::lattice::{Kernel, TorusLattice};

/// One contraction channel: Σ_{x,y} weight · K(x,y) ∂_{left_x} ∂_{right_y},
/// the right derivative applied first.
#[derive(Debug, Clone, Copy)]
pub struct Channel {
    pub left_copy: u8,
    pub left_bar: bool,
    pub right_copy: u8,
    pub right_bar: bool,
    pub fermion: bool,
    pub weight: f64,
}

/// The two channels of the super-expectation on copy 0.
pub fn super_channels() -> Vec<Channel> {
    vec![
        Channel {
            left_copy: 0,
            left_bar: false,
            right_copy: 0,
            right_bar: true,
            fermion: false,
            weight: 1.0,
        },
        Channel {
            left_copy: 0,
            left_bar: false,
            right_copy: 0,
            right_bar: true,
            fermion: true,
            weight: 1.0,
        },
    ]
}

/// Left derivative of a canonical fermion monomial: sign (-1)^position.
pub fn ferm_left_derivative(m: &FermMono, v: FVar) -> Option<(FermMono, f64)> {
    let pos = m.iter().position(|&w| w == v)?;
    let mut rest = m.clone();
    rest.remove(pos);
    let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
    Some((rest, sign))
}

fn distinct_field_vars(p: &Poly, copy: u8, bar: bool) -> Vec<u32> {
    let mut sites: Vec<u32> = p
        .terms
        .keys()
        .flat_map(|m| m.keys())
        .filter_map(|v| match v {
            BVar::Field {
                copy: c,
                site,
                bar: b,
            } if *c == copy && *b == bar => Some(*site),
            _ => None,
        })
        .collect();
    sites.sort_unstable();
    sites.dedup();
    sites
}

/// One application of the contraction Laplacian.
pub fn contraction_laplacian(
    lat: &TorusLattice,
    k: &Kernel,
    f: &Form,
    channels: &[Channel],
) -> Form {
    let mut out = Form::zero(f.n_sites);
    for (m, p) in &f.terms {
        for ch in channels {
            if ch.fermion {
                let rights: Vec<FVar> = m
                    .iter()
                    .filter(|v| v.copy == ch.right_copy && v.bar == ch.right_bar)
                    .cloned()
                    .collect();
                for vy in rights {
                    let (m1, s1) = ferm_left_derivative(m, vy).unwrap();
                    let lefts: Vec<FVar> = m1
                        .iter()
                        .filter(|v| v.copy == ch.left_copy && v.bar == ch.left_bar)
                        .cloned()
                        .collect();
                    for vx in lefts {
                        let (m2, s2) = ferm_left_derivative(&m1, vx).unwrap();
                        let cxy = k.at(lat, vx.site as usize, vy.site as usize);
                        if cxy != 0.0 {
                            out.add_term(m2.clone(), p.scale_real(ch.weight * s1 * s2 * cxy));
                        }
                    }
                }
            } else {
                for y in distinct_field_vars(p, ch.right_copy, ch.right_bar) {
                    let dp = p.differentiate(BVar::Field {
                        copy: ch.right_copy,
                        site: y,
                        bar: ch.right_bar,
                    });
                    for x in distinct_field_vars(&dp, ch.left_copy, ch.left_bar) {
                        let ddp = dp.differentiate(BVar::Field {
                            copy: ch.left_copy,
                            site: x,
                            bar: ch.left_bar,
                        });
                        let cxy = k.at(lat, x as usize, y as usize);
                        if cxy != 0.0 {
                            out.add_term(m.clone(), ddp.scale_real(ch.weight * cxy));
                        }
                    }
                }
            }
        }
    }
    out
}

/// e^{Δ_K} F with the given channels; terminates because every application
/// lowers the field degree by 2.
pub fn exp_laplacian(lat: &TorusLattice, k: &Kernel, f: &Form, channels: &[Channel]) -> Form {
    let mut acc = f.clone();
    let mut term = f.clone();
    let mut n = 1.0;
    loop {
        term = contraction_laplacian(lat, k, &term, channels);
        if term.is_zero() {
            break;
        }
        let scaled = term.scale_real(1.0 / n);
        acc = acc.add(&scaled);
        term = scaled;
        n += 1.0;
    }
    acc
}

/// E_C θF as a form in the background fields.
pub fn super_expectation(lat: &TorusLattice, c: &Kernel, f: &Form) -> Form {
    exp_laplacian(lat, c, f, &super_channels())
}

/// Background fields set to zero: the plain super-expectation value.
pub fn expectation_at_zero(lat: &TorusLattice, c: &Kernel, f: &Form) -> Poly {
    let e = super_expectation(lat, c, f);
    e.degree_zero_part().eval_partial(|v| match v {
        BVar::Field { .. } => Some(num_complex::Complex64::new(0.0, 0.0)),
        _ => None,
    })
}

/// (E_{C1+C2} F, E_{C2} (E_{C1} θF)) for progressive-integration testing.
pub fn progressive_check(
    lat: &TorusLattice,
    c1: &Kernel,
    c2: &Kernel,
    f: &Form,
) -> (Form, Form) {
    let mut total = c1.clone();
    total.add(c2);
    let joint = super_expectation(lat, &total, f);
    let stepped = super_expectation(lat, c2, &super_expectation(lat, c1, f));
    (joint, stepped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::form::{tau, wedge_mul};
    use crate::lattice::solve_green;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn setup() -> (TorusLattice, Kernel) {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let c = solve_green(&lat, 1.0, 0.0).unwrap();
        (lat, c)
    }

    fn constant(p: &Poly) -> Complex64 {
        p.eval_partial(|v| match v {
            BVar::Field { .. } => Some(Complex64::new(0.0, 0.0)),
            _ => None,
        })
        .constant_value()
        .unwrap()
    }

    #[test]
    fn covariance_identity() {
        let (lat, c) = setup();
        let f = Form::from_poly(3, Poly::var(BVar::phibar(0)).mul(&Poly::var(BVar::phi(1))));
        let e = expectation_at_zero(&lat, &c, &f);
        assert_abs_diff_eq!(
            e.constant_value().unwrap().re,
            c.at(&lat, 1, 0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn fermion_two_point_is_minus_c() {
        let (lat, c) = setup();
        let mut f = Form::zero(3);
        f.add_term(vec![FVar::psi(0), FVar::psibar(1)], Poly::one());
        let e = expectation_at_zero(&lat, &c, &f);
        assert_abs_diff_eq!(
            e.constant_value().unwrap().re,
            -c.at(&lat, 0, 1),
            epsilon = 1e-14
        );
    }

    #[test]
    fn tau_expectation_vanishes() {
        let (lat, c) = setup();
        let e = expectation_at_zero(&lat, &c, &tau(3, 0));
        assert_abs_diff_eq!(e.constant_value().unwrap().norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tau_squared_expectation_vanishes() {
        let (lat, c) = setup();
        let t = tau(3, 1);
        let tsq = wedge_mul(&t, &t).unwrap();
        let e = expectation_at_zero(&lat, &c, &tsq);
        assert_abs_diff_eq!(e.constant_value().unwrap().norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn quartic_moment() {
        let (lat, c) = setup();
        // |φ_x|⁴ -> 2 C_xx²
        let phi = Poly::var(BVar::phi(0));
        let phibar = Poly::var(BVar::phibar(0));
        let f = Form::from_poly(3, phi.mul(&phi).mul(&phibar).mul(&phibar));
        let e = expectation_at_zero(&lat, &c, &f);
        let cxx = c.diagonal();
        assert_abs_diff_eq!(
            e.constant_value().unwrap().re,
            2.0 * cxx * cxx,
            epsilon = 1e-14
        );
    }

    #[test]
    fn background_field_remains() {
        let (lat, c) = setup();
        // E_C θ(τ_x²) = τ² + lower order with 2 C(x,x) τ_x among the terms
        let t = tau(3, 0);
        let tsq = wedge_mul(&t, &t).unwrap();
        let e = super_expectation(&lat, &c, &tsq);
        // the coefficient of φ_0 φ̄_0 should be 2 C(0,0) (from 2cτ)
        let mono: crate::forms::poly::BosMono = [
            (BVar::phi(0), 1u32),
            (BVar::phibar(0), 1u32),
        ]
        .into_iter()
        .collect();
        let coeff = e.degree_zero_part().terms.get(&mono).cloned().unwrap();
        assert_abs_diff_eq!(coeff.re, 2.0 * c.diagonal(), epsilon = 1e-14);
    }

    #[test]
    fn progressive_integration_exact() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let c1 = solve_green(&lat, 1.0, 0.0).unwrap();
        let c2 = solve_green(&lat, 2.0, 0.0).unwrap();
        let t = tau(3, 0);
        let mut f = wedge_mul(&t, &t).unwrap();
        // add a fermionic observable so signs are exercised
        f = f.add(&Form::fermion(3, FVar::psi(1)).mul_poly(&Poly::var(BVar::phibar(2))));
        let (joint, stepped) = progressive_check(&lat, &c1, &c2, &f);
        assert!(joint.sub(&stepped).prune(1e-12).is_zero());
    }

    #[test]
    fn factorization_over_distant_supports() {
        // finite-range C: contractions across non-touching supports vanish,
        // so the expectation factorises exactly
        let lat = TorusLattice::new(1, 3, 2).unwrap();
        let frd = crate::frd::decompose(&lat, 1.0, 3).unwrap();
        let c1 = &frd.kernels[0]; // range < 3
        let fa = wedge_mul(&tau(9, 0), &tau(9, 0)).unwrap();
        let fb = wedge_mul(&tau(9, 4), &tau(9, 4)).unwrap();
        let prod = wedge_mul(&fa, &fb).unwrap();
        let lhs = constant(&super_expectation(&lat, c1, &prod).degree_zero_part());
        let ea = constant(&super_expectation(&lat, c1, &fa).degree_zero_part());
        let eb = constant(&super_expectation(&lat, c1, &fb).degree_zero_part());
        assert_abs_diff_eq!(lhs.re, (ea * eb).re, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs.im, (ea * eb).im, epsilon = 1e-12);
    }
}
