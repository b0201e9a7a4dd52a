//! Pairing of forms with test functions.
//!
//! A form pairs with a test function by feeding the sites carried by each
//! field factor into the matching argument slot: unbarred boson slots,
//! barred boson slots, unbarred fermion slots, barred fermion slots. The
//! test function is symmetrized over boson slots of the same type and
//! antisymmetrized over fermion slots of the same type, so only the
//! correspondingly (anti)symmetric part of a test function is visible —
//! exactly the part a form can distinguish. External-field and coupling
//! symbols are not paired; they pass through into the returned polynomial.

use super::poly::{BVar, Poly};
use crate::lattice::TorusLattice;
use super::form::Form;
use num_complex::Complex64;

/// Arguments the pairing hands to a test function: sites for each slot
/// group, in a fixed deterministic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotArgs {
    pub bos: Vec<u32>,
    pub bos_bar: Vec<u32>,
    pub ferm: Vec<u32>,
    pub ferm_bar: Vec<u32>,
}

impl SlotArgs {
    pub fn signature(&self) -> (usize, usize, usize, usize) {
        (
            self.bos.len(),
            self.bos_bar.len(),
            self.ferm.len(),
            self.ferm_bar.len(),
        )
    }
}

pub trait TestFunction: Sync {
    fn eval(&self, args: &SlotArgs) -> f64;
    /// Which slot signature this test function accepts; pairings of
    /// monomials with any other signature are zero.
    fn signature(&self) -> (usize, usize, usize, usize);
}

/// Indicator of one specific argument tuple (no symmetrization of its own).
pub struct DeltaTestFunction {
    pub args: SlotArgs,
}

impl TestFunction for DeltaTestFunction {
    fn eval(&self, args: &SlotArgs) -> f64 {
        if *args == self.args {
            1.0
        } else {
            0.0
        }
    }
    fn signature(&self) -> (usize, usize, usize, usize) {
        self.args.signature()
    }
}

/// Product of per-slot coordinate monomials: slot k contributes
/// Π_dim w(site_k)^{exps[k][dim]}, where w is the coordinate of the slot's
/// site wrapped relative to `anchor` (signed representative). Slots are
/// numbered through the groups in order: unbarred bosons, barred bosons,
/// unbarred fermions, barred fermions.
pub struct MonomialTestFunction<'a> {
    pub lat: &'a TorusLattice,
    pub anchor: u32,
    pub sig: (usize, usize, usize, usize),
    pub exps: Vec<Vec<u32>>,
}

impl MonomialTestFunction<'_> {
    fn slot_value(&self, site: u32, exp: &[u32]) -> f64 {
        let disp = self.lat.displacement(self.anchor as usize, site as usize);
        let w = self.lat.wrapped_coords(disp);
        let mut v = 1.0;
        for (k, &e) in exp.iter().enumerate() {
            for _ in 0..e {
                v *= w[k] as f64;
            }
        }
        v
    }
}

impl TestFunction for MonomialTestFunction<'_> {
    fn eval(&self, args: &SlotArgs) -> f64 {
        let mut v = 1.0;
        let mut k = 0;
        for group in [&args.bos, &args.bos_bar, &args.ferm, &args.ferm_bar] {
            for &site in group.iter() {
                v *= self.slot_value(site, &self.exps[k]);
                k += 1;
            }
        }
        v
    }
    fn signature(&self) -> (usize, usize, usize, usize) {
        self.sig
    }
}

/// visit permutations with their signs (Heap's algorithm)
fn for_each_permutation(items: &[u32], f: &mut dyn FnMut(&[u32], f64)) {
    let mut a = items.to_vec();
    let n = a.len();
    let mut c = vec![0usize; n];
    let mut sign = 1.0;
    f(&a, sign);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            sign = -sign;
            f(&a, sign);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Average of g over permutations within each slot group: plain averages
/// for boson groups, sign-weighted averages for fermion groups.
fn symmetrized_eval(g: &dyn TestFunction, args: &SlotArgs) -> f64 {
    let mut total = 0.0;
    for_each_permutation(&args.bos, &mut |bos, _| {
        for_each_permutation(&args.bos_bar, &mut |bos_bar, _| {
            for_each_permutation(&args.ferm, &mut |ferm, s1| {
                for_each_permutation(&args.ferm_bar, &mut |ferm_bar, s2| {
                    let a = SlotArgs {
                        bos: bos.to_vec(),
                        bos_bar: bos_bar.to_vec(),
                        ferm: ferm.to_vec(),
                        ferm_bar: ferm_bar.to_vec(),
                    };
                    total += s1 * s2 * g.eval(&a);
                });
            });
        });
    });
    total
        / (factorial(args.bos.len())
            * factorial(args.bos_bar.len())
            * factorial(args.ferm.len())
            * factorial(args.ferm_bar.len()))
}

/// Pair a form with a test function at zero background field. Field factors
/// become slot arguments; σ and coupling symbols stay symbolic in the
/// result. Fermion factors are read in the monomial's canonical order and
/// regrouped (unbarred then barred) with the sign of that regrouping.
pub fn pairing(f: &Form, g: &dyn TestFunction) -> Poly {
    let sig = g.signature();
    let mut out = Poly::zero();
    for (fm, coeff_poly) in &f.terms {
        // split fermion factors into groups, tracking the reorder sign
        let mut ferm = Vec::new();
        let mut ferm_bar = Vec::new();
        let mut sign = 1.0f64;
        for (pos, v) in fm.iter().enumerate() {
            if v.copy != 0 {
                continue;
            }
            if v.bar {
                ferm_bar.push(v.site);
            } else {
                // moving this factor left past the barred ones seen so far
                let barred_before = fm[..pos].iter().filter(|w| w.copy == 0 && w.bar).count();
                if barred_before % 2 == 1 {
                    sign = -sign;
                }
                ferm.push(v.site);
            }
        }
        if fm.iter().any(|v| v.copy != 0) {
            continue; // auxiliary copies carry no pairing slots
        }
        if (ferm.len(), ferm_bar.len()) != (sig.2, sig.3) {
            continue;
        }
        for (bm, &c) in &coeff_poly.terms {
            let mut bos = Vec::new();
            let mut bos_bar = Vec::new();
            let mut passthrough = std::collections::BTreeMap::new();
            let mut skip = false;
            for (v, &pw) in bm {
                match v {
                    BVar::Field { copy: 0, site, bar } => {
                        let grp = if *bar { &mut bos_bar } else { &mut bos };
                        for _ in 0..pw {
                            grp.push(*site);
                        }
                    }
                    BVar::Field { .. } => skip = true,
                    _ => {
                        passthrough.insert(v.clone(), pw);
                    }
                }
            }
            if skip || (bos.len(), bos_bar.len()) != (sig.0, sig.1) {
                continue;
            }
            let args = SlotArgs {
                bos,
                bos_bar,
                ferm: ferm.clone(),
                ferm_bar: ferm_bar.clone(),
            };
            let val = symmetrized_eval(g, &args);
            if val != 0.0 {
                out.add_term(passthrough, c * sign * Complex64::new(val, 0.0));
            }
        }
    }
    out
}
