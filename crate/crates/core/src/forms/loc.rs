//! Localization: project a form onto the span of local field polynomials
//! by matching its pairings against the admissible polynomial test
//! functions.
//!
//! The projection target on a site set X (with observable sites a, b) is
//!   V = g τ²(X) + ν τ(X) + z τ_Δ(X)
//!     + λ (σ̄ φ_a 1_{a∈X} + σ φ̄_b 1_{b∈X}) + q σ̄σ |X ∩ {a,b}|.
//! The admissible test functions are coordinate-monomial products with the
//! degree caps: without σ-arguments the total coordinate degree is at most
//! d − (p+q)·[φ] with [φ] = (d−2)/2; with r ∈ {1,2} σ-arguments it is at
//! most r − p − q (so in particular p + q ≤ r). Coordinates are wrapped
//! displacements from the anchor (the smallest site of X), since
//! polynomials are only defined on a fundamental domain of the torus.
//!
//! The couplings are solved per coupling-symbol monomial of the input by
//! least squares from one shared SVD factorization; the worst relative
//! residual is reported so callers can detect inputs outside the span.

use super::form::{build_v, Form, VCoefficients};
use super::poly::{BosMono, BVar, Poly};
use super::testfn::{pairing, MonomialTestFunction};
use crate::lattice::TorusLattice;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LocError {
    #[error("site set is empty")]
    EmptySiteSet,
    #[error("site {0} outside lattice")]
    SiteOutOfRange(usize),
    #[error("matching system is rank deficient (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },
}

/// Result of localizing a form: coupling coefficients (polynomials in the
/// coupling symbols of the input), the support data, and the worst
/// relative matching residual over coupling monomials.
#[derive(Debug, Clone)]
pub struct LocalPolynomial {
    pub v: VCoefficients,
    pub sites: BTreeSet<usize>,
    pub a: usize,
    pub b: usize,
    pub residual: f64,
}

impl LocalPolynomial {
    pub fn to_form(&self, lat: &TorusLattice) -> Form {
        let xv: Vec<usize> = self.sites.iter().copied().collect();
        build_v(lat, &self.v, &xv, self.a, self.b)
    }
}

pub const MAX_PAIRING_FIELDS: usize = 9;

/// slot signature: unbarred bosons, barred bosons, unbarred fermions,
/// barred fermions, plus σ and σ̄ powers
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Signature {
    pb: usize,
    pbb: usize,
    pf: usize,
    pfb: usize,
    m: usize,
    n: usize,
}

impl Signature {
    fn fields(&self) -> usize {
        self.pb + self.pbb + self.pf + self.pfb
    }
    fn slots(&self) -> usize {
        self.fields()
    }
    fn sigma_mono(&self) -> BosMono {
        let mut mono = BTreeMap::new();
        if self.m > 0 {
            mono.insert(BVar::Sigma { bar: false }, self.m as u32);
        }
        if self.n > 0 {
            mono.insert(BVar::Sigma { bar: true }, self.n as u32);
        }
        mono
    }
}

/// maximum total coordinate degree admitted for a signature, or None if
/// the signature itself is excluded
fn degree_cap(d: usize, sig: &Signature) -> Option<i64> {
    let pq = sig.fields() as i64;
    let r = (sig.m + sig.n) as i64;
    if sig.pb + sig.pf > MAX_PAIRING_FIELDS || r > 2 {
        return None;
    }
    if r == 0 {
        // total degree ≤ d - (p+q)[φ], with [φ] = (d-2)/2; floor of the
        // half-integer bound in odd dimensions
        let twice = 2 * d as i64 - pq * (d as i64 - 2);
        if twice < 0 {
            None
        } else {
            Some(twice / 2)
        }
    } else {
        let cap = r - pq;
        if cap < 0 {
            None
        } else {
            Some(cap)
        }
    }
}

/// all exponent tables (slots × d) with total degree ≤ cap
fn exponent_tables(slots: usize, d: usize, cap: i64) -> Vec<Vec<Vec<u32>>> {
    let cells = slots * d;
    let mut out = Vec::new();
    let mut cur = vec![0u32; cells];
    fn rec(cur: &mut Vec<u32>, cell: usize, left: i64, d: usize, out: &mut Vec<Vec<Vec<u32>>>) {
        if cell == cur.len() {
            let table: Vec<Vec<u32>> = cur.chunks(d).map(|c| c.to_vec()).collect();
            out.push(table);
            return;
        }
        for e in 0..=left {
            cur[cell] = e as u32;
            rec(cur, cell + 1, left - e, d, out);
        }
        cur[cell] = 0;
    }
    if cells == 0 {
        out.push(Vec::new());
    } else {
        rec(&mut cur, 0, cap, d, &mut out);
    }
    out
}

fn signatures(max_fields: usize) -> Vec<Signature> {
    let mut sigs = Vec::new();
    for m in 0..=2usize {
        for n in 0..=(2 - m) {
            for pb in 0..=max_fields {
                for pbb in 0..=(max_fields - pb) {
                    for pf in 0..=(max_fields - pb - pbb) {
                        for pfb in 0..=(max_fields - pb - pbb - pf) {
                            sigs.push(Signature {
                                pb,
                                pbb,
                                pf,
                                pfb,
                                m,
                                n,
                            });
                        }
                    }
                }
            }
        }
    }
    sigs
}

/// coefficient of the pure σ monomial `sig` inside the pairing result,
/// grouped by the remaining (coupling) monomial
fn sigma_component(p: &Poly, sig: &Signature) -> BTreeMap<BosMono, Complex64> {
    let want = sig.sigma_mono();
    let mut out = BTreeMap::new();
    for (mono, &c) in &p.terms {
        let mut sigma_part = BTreeMap::new();
        let mut rest = BTreeMap::new();
        for (v, &pw) in mono {
            match v {
                BVar::Sigma { .. } => {
                    sigma_part.insert(v.clone(), pw);
                }
                _ => {
                    rest.insert(v.clone(), pw);
                }
            }
        }
        if sigma_part == want {
            *out.entry(rest).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
    }
    out
}

pub fn loc_project(
    lat: &TorusLattice,
    f: &Form,
    x_sites: &BTreeSet<usize>,
    a: usize,
    b: usize,
) -> Result<LocalPolynomial, LocError> {
    if x_sites.is_empty() {
        return Err(LocError::EmptySiteSet);
    }
    let n_sites = lat.site_count();
    for &s in x_sites.iter().chain([a, b].iter()) {
        if s >= n_sites {
            return Err(LocError::SiteOutOfRange(s));
        }
    }
    let anchor = *x_sites.iter().next().unwrap() as u32;
    let d = lat.dimension();

    // the five columns of the matching system
    let xv: Vec<usize> = x_sites.iter().copied().collect();
    let col_g = build_v(lat, &VCoefficients::numeric(1.0, 0.0, 0.0, 0.0, 0.0), &xv, a, b);
    let col_nu = build_v(lat, &VCoefficients::numeric(0.0, 1.0, 0.0, 0.0, 0.0), &xv, a, b);
    let col_z = build_v(lat, &VCoefficients::numeric(0.0, 0.0, 1.0, 0.0, 0.0), &xv, a, b);
    let col_l = build_v(lat, &VCoefficients::numeric(0.0, 0.0, 0.0, 1.0, 0.0), &xv, a, b);
    let col_q = build_v(lat, &VCoefficients::numeric(0.0, 0.0, 0.0, 0.0, 1.0), &xv, a, b);
    let columns = [&col_g, &col_nu, &col_z, &col_l, &col_q];

    // basis rows deep enough to pin down V (degree 4) and to see everything
    // the input can pair with
    let deg_f: usize = f
        .terms
        .iter()
        .map(|(m, p)| m.len() + p.max_field_degree() as usize)
        .max()
        .unwrap_or(0);
    let max_fields = deg_f.max(4).min(MAX_PAIRING_FIELDS);

    let mut rows_a: Vec<[f64; 5]> = Vec::new();
    let mut rows_rhs: Vec<BTreeMap<BosMono, Complex64>> = Vec::new();
    for sig in signatures(max_fields) {
        let Some(cap) = degree_cap(d, &sig) else { continue };
        for exps in exponent_tables(sig.slots(), d, cap) {
            let tf = MonomialTestFunction {
                lat,
                anchor,
                sig: (sig.pb, sig.pbb, sig.pf, sig.pfb),
                exps,
            };
            let mut arow = [0.0f64; 5];
            let mut any = false;
            for (k, col) in columns.iter().enumerate() {
                let comp = sigma_component(&pairing(col, &tf), &sig);
                // a V column with unit coupling pairs to a pure number
                let val = comp
                    .get(&BTreeMap::new())
                    .map(|c| c.re)
                    .unwrap_or(0.0);
                arow[k] = val;
                if val != 0.0 {
                    any = true;
                }
            }
            let rhs = sigma_component(&pairing(f, &tf), &sig);
            if !any && rhs.is_empty() {
                continue;
            }
            rows_a.push(arow);
            rows_rhs.push(rhs);
        }
    }

    let nrows = rows_a.len();
    // couplings whose basis column is identically zero (λ and q when a, b
    // lie outside X) are not part of the span and stay zero
    let active: Vec<usize> = (0..5)
        .filter(|&k| rows_a.iter().any(|r| r[k] != 0.0))
        .collect();
    let ncols = active.len();
    let mut a_mat = DMatrix::<f64>::zeros(nrows, ncols);
    for (i, r) in rows_a.iter().enumerate() {
        for (kk, &k) in active.iter().enumerate() {
            a_mat[(i, kk)] = r[k];
        }
    }
    let svd = a_mat.clone().svd(true, true);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * svd.singular_values.max())
        .count();
    if rank < ncols {
        return Err(LocError::RankDeficient { rank, cols: ncols });
    }

    // group right-hand sides per coupling monomial
    let mut monos: BTreeSet<BosMono> = BTreeSet::new();
    for rhs in &rows_rhs {
        monos.extend(rhs.keys().cloned());
    }
    let mut v = VCoefficients {
        g: Poly::zero(),
        nu: Poly::zero(),
        z: Poly::zero(),
        lambda: Poly::zero(),
        q: Poly::zero(),
    };
    let mut worst = 0.0f64;
    for mono in monos {
        for part in 0..2 {
            // real and imaginary parts solved separately
            let rhs = DVector::<f64>::from_iterator(
                nrows,
                rows_rhs.iter().map(|m| {
                    let c = m.get(&mono).copied().unwrap_or(Complex64::new(0.0, 0.0));
                    if part == 0 {
                        c.re
                    } else {
                        c.im
                    }
                }),
            );
            let scale = rhs.amax();
            if scale == 0.0 {
                continue;
            }
            let sol = svd.solve(&rhs, 1e-12).expect("svd solve");
            let res = (&a_mat * &sol - &rhs).norm() / rhs.norm().max(1e-300);
            worst = worst.max(res);
            let unit = if part == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 1.0)
            };
            let targets = [
                &mut v.g,
                &mut v.nu,
                &mut v.z,
                &mut v.lambda,
                &mut v.q,
            ];
            for (kk, &k) in active.iter().enumerate() {
                if sol[kk] != 0.0 {
                    targets[k].add_term(mono.clone(), unit * sol[kk]);
                }
            }
        }
    }
    Ok(LocalPolynomial {
        v,
        sites: x_sites.clone(),
        a,
        b,
        residual: worst,
    })
}
