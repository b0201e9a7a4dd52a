//! Test-function norms, the dominating seminorm for forms, the h/ℓ/s
//! parameter schedules, and the large-field regulator.
//!
//! The test-function norm weights every spatial derivative (forward and
//! backward, up to order three per component) by a factor that grows with
//! the scale, and every argument slot by an inverse power of the field
//! scale h (boson and fermion slots) or s (external-field slots).  The
//! seminorm on forms is the coefficient-weighted dominating bound
//! Σ (1/x!y!z!) |F_{x,y,z}(φ,0)| h^{p+q} s^r, which bounds the pairing
//! against every unit-norm test function and is submultiplicative.

use crate::forms::{BVar, Form, Poly};
use crate::geometry::{small_set_neighborhood, Paving, Polymer};
use crate::lattice::{FieldConfig, TorusLattice};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Hard caps from the norm definition: test functions vanish when the
/// boson sequence exceeds MAX_BOSON_SLOTS or the external-field sequence
/// exceeds MAX_SIGMA_SLOTS.
pub const MAX_BOSON_SLOTS: usize = 9;
pub const MAX_SIGMA_SLOTS: usize = 2;
/// Highest finite-difference order per spatial component.
pub const MAX_GRADIENT_ORDER: usize = 3;
/// Degree cap for the polynomial subtraction in the large-field regulator.
pub const REGULATOR_POLY_DEGREE: usize = 3;

#[derive(Debug, Error)]
pub enum NormError {
    #[error("boson slot count {0} exceeds the cap {MAX_BOSON_SLOTS}")]
    TooManyBosonSlots(usize),
    #[error("external-field slot count {0} exceeds the cap {MAX_SIGMA_SLOTS}")]
    TooManySigmaSlots(usize),
    #[error("form contains symbolic coupling constants; evaluate them first")]
    SymbolicCoupling,
    #[error("field configuration has {got} sites, lattice has {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("slot value table has {got} entries, expected {want}")]
    BadTable { got: usize, want: usize },
}

/// Scale-dependent parameters of the norm family.
#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub j: usize,
    /// weight per boson/fermion slot (either the ℓ- or the h-schedule)
    pub h: f64,
    /// weight per external-field slot
    pub s: f64,
    pub l: usize,
    pub d: usize,
}

/// Scaling dimension of the field, [φ] = (d−2)/2.
pub fn field_dimension(d: usize) -> f64 {
    (d as f64 - 2.0) / 2.0
}

/// ℓ_j = ℓ₀ L^{−j[φ]}
pub fn ell_j(j: usize, ell0: f64, l: usize, d: usize) -> f64 {
    ell0 * (l as f64).powf(-(j as f64) * field_dimension(d))
}

/// h_j = k₀ ḡ_j^{−1/4} L^{−j[φ]}
pub fn h_j(j: usize, k0: f64, gbar_j: f64, l: usize, d: usize) -> f64 {
    k0 * gbar_j.powf(-0.25) * (l as f64).powf(-(j as f64) * field_dimension(d))
}

/// s_j = s₀ ℓ_{j∧s_ab}^{−1}: grows like L^{j[φ]} until the first scale
/// whose small sets cover both observable points, frozen afterwards.
pub fn s_schedule(j: usize, s0: f64, covering_scale_ab: usize, ell0: f64, l: usize, d: usize) -> f64 {
    s0 / ell_j(j.min(covering_scale_ab), ell0, l, d)
}

impl NormParams {
    /// ℓ-schedule parameters at scale j.
    pub fn with_ell(j: usize, ell0: f64, s: f64, l: usize, d: usize) -> Self {
        NormParams {
            j,
            h: ell_j(j, ell0, l, d),
            s,
            l,
            d,
        }
    }

    /// h-schedule parameters at scale j for the given ḡ_j.
    pub fn with_h(j: usize, k0: f64, gbar_j: f64, s: f64, l: usize, d: usize) -> Self {
        NormParams {
            j,
            h: h_j(j, k0, gbar_j, l, d),
            s,
            l,
            d,
        }
    }
}

/// Slot counts of a test function, split by conjugation type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotSignature {
    pub bos: usize,
    pub bos_bar: usize,
    pub ferm: usize,
    pub ferm_bar: usize,
    pub sig: usize,
    pub sig_bar: usize,
}

impl SlotSignature {
    pub fn spatial(&self) -> usize {
        self.bos + self.bos_bar + self.ferm + self.ferm_bar
    }
    pub fn boson(&self) -> usize {
        self.bos + self.bos_bar
    }
    pub fn sigma(&self) -> usize {
        self.sig + self.sig_bar
    }
}

/// A finitely supported test function of one fixed signature: a dense table
/// over spatial slot tuples (external-field slots carry no spatial index).
#[derive(Debug, Clone)]
pub struct SlottedFunction {
    pub sig: SlotSignature,
    pub n_sites: usize,
    /// row-major over the spatial slots, slot 0 slowest
    pub values: Vec<Complex64>,
}

impl SlottedFunction {
    pub fn zeros(sig: SlotSignature, n_sites: usize) -> Self {
        let len = n_sites.pow(sig.spatial() as u32);
        SlottedFunction {
            sig,
            n_sites,
            values: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    fn offset(&self, slots: &[usize]) -> usize {
        let mut idx = 0usize;
        for &s in slots {
            idx = idx * self.n_sites + s;
        }
        idx
    }

    pub fn eval(&self, slots: &[usize]) -> Complex64 {
        self.values[self.offset(slots)]
    }

    pub fn set(&mut self, slots: &[usize], v: Complex64) {
        let idx = self.offset(slots);
        self.values[idx] = v;
    }
}

/// Forward/backward unit steps for every site and direction.
fn step_tables(lat: &TorusLattice) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = lat.site_count();
    let d = lat.dimension();
    let mut fwd = vec![vec![0usize; n]; d];
    let mut bwd = vec![vec![0usize; n]; d];
    for x in 0..n {
        let c = lat.coords(x);
        for k in 0..d {
            let mut cf: Vec<i64> = c.iter().map(|&v| v as i64).collect();
            cf[k] += 1;
            fwd[k][x] = lat.site_at(&cf);
            cf[k] -= 2;
            bwd[k][x] = lat.site_at(&cf);
        }
    }
    (fwd, bwd)
}

/// Apply one finite difference along the given spatial slot and direction.
fn diff_table(
    values: &[Complex64],
    n_sites: usize,
    nslots: usize,
    slot: usize,
    step: &[usize],
    forward: bool,
) -> Vec<Complex64> {
    let stride = n_sites.pow((nslots - 1 - slot) as u32);
    let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
    for (idx, v) in values.iter().enumerate() {
        let site = (idx / stride) % n_sites;
        let other = step[site];
        let jdx = (idx as isize + (other as isize - site as isize) * stride as isize) as usize;
        // forward: f(x+e) − f(x); backward: f(x) − f(x−e)
        out[idx] = if forward {
            values[jdx] - v
        } else {
            *v - values[jdx]
        };
    }
    out
}

fn sup_modulus(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

struct PhiNormCtx<'a> {
    n_sites: usize,
    nslots: usize,
    d: usize,
    lscale: f64,
    fwd: &'a [Vec<usize>],
    bwd: &'a [Vec<usize>],
}

fn phi_norm_dfs(
    values: &[Complex64],
    comp: usize,
    total_order: usize,
    ctx: &PhiNormCtx,
    best: &mut f64,
) {
    if comp == ctx.nslots * ctx.d {
        let v = sup_modulus(values) * ctx.lscale.powi(total_order as i32);
        if v > *best {
            *best = v;
        }
        return;
    }
    let slot = comp / ctx.d;
    let dir = comp % ctx.d;
    // all splits of ≤ MAX_GRADIENT_ORDER into forward and backward orders
    for kf in 0..=MAX_GRADIENT_ORDER {
        let mut cur = values.to_vec();
        for _ in 0..kf {
            cur = diff_table(&cur, ctx.n_sites, ctx.nslots, slot, &ctx.fwd[dir], true);
        }
        for kb in 0..=(MAX_GRADIENT_ORDER - kf) {
            if kf + kb > 0 && sup_modulus(&cur) == 0.0 {
                // exact zeros stay zero under further differencing
                phi_norm_dfs(&cur, comp + 1, total_order + kf + kb, ctx, best);
                break;
            }
            phi_norm_dfs(&cur, comp + 1, total_order + kf + kb, ctx, best);
            if kb < MAX_GRADIENT_ORDER - kf {
                cur = diff_table(&cur, ctx.n_sites, ctx.nslots, slot, &ctx.bwd[dir], false);
            }
        }
    }
}

/// The test-function norm: the sup over slot tuples and mixed
/// forward/backward derivatives of order ≤ 3 per component of
/// h^{−(p+q)} s^{−r} L^{j|α|₁} |∇^α f|.
pub fn phi_norm(lat: &TorusLattice, f: &SlottedFunction, p: &NormParams) -> Result<f64, NormError> {
    if f.sig.boson() > MAX_BOSON_SLOTS {
        return Err(NormError::TooManyBosonSlots(f.sig.boson()));
    }
    if f.sig.sigma() > MAX_SIGMA_SLOTS {
        return Err(NormError::TooManySigmaSlots(f.sig.sigma()));
    }
    let want = lat.site_count().pow(f.sig.spatial() as u32);
    if f.values.len() != want {
        return Err(NormError::BadTable {
            got: f.values.len(),
            want,
        });
    }
    let pq = f.sig.boson() + f.sig.ferm + f.sig.ferm_bar;
    let weight = p.h.powi(-(pq as i32)) * p.s.powi(-(f.sig.sigma() as i32));
    if f.sig.spatial() == 0 {
        return Ok(weight * sup_modulus(&f.values));
    }
    let (fwd, bwd) = step_tables(lat);
    let ctx = PhiNormCtx {
        n_sites: lat.site_count(),
        nslots: f.sig.spatial(),
        d: lat.dimension(),
        lscale: (p.l as f64).powi(p.j as i32),
        fwd: &fwd,
        bwd: &bwd,
    };
    let mut best = 0.0f64;
    phi_norm_dfs(&f.values, 0, 0, &ctx, &mut best);
    Ok(weight * best)
}

/// One expanded coefficient of a form at a field configuration: the slot
/// multiset together with its complex Taylor coefficient.
struct ExpandedTerm {
    bos: Vec<usize>,
    bos_bar: Vec<usize>,
    sig: usize,
    sig_bar: usize,
    coef: Complex64,
}

/// Taylor-expand a scalar coefficient around the field configuration and
/// classify the derivative monomials.
fn expand_at(p: &Poly, phi: &FieldConfig) -> Result<Vec<ExpandedTerm>, NormError> {
    let shifted = p.shift_fields(|v| match v {
        BVar::Field { copy: 0, site, bar } => Some(if *bar {
            phi.values[*site as usize].conj()
        } else {
            phi.values[*site as usize]
        }),
        _ => None,
    });
    let mut out = Vec::new();
    for (m, &c) in &shifted.terms {
        let mut bos = Vec::new();
        let mut bos_bar = Vec::new();
        let mut sig = 0usize;
        let mut sig_bar = 0usize;
        for (v, &pw) in m {
            match v {
                BVar::Field { copy: 0, site, bar } => {
                    let list = if *bar { &mut bos_bar } else { &mut bos };
                    for _ in 0..pw {
                        list.push(*site as usize);
                    }
                }
                BVar::Field { .. } => {
                    // auxiliary copies never reach the norm layer
                    return Err(NormError::SymbolicCoupling);
                }
                BVar::Sigma { bar } => {
                    if *bar {
                        sig_bar += pw as usize;
                    } else {
                        sig += pw as usize;
                    }
                }
                BVar::Coupling(_) => return Err(NormError::SymbolicCoupling),
            }
        }
        out.push(ExpandedTerm {
            bos,
            bos_bar,
            sig,
            sig_bar,
            coef: c,
        });
    }
    Ok(out)
}

/// The dominating seminorm Σ (1/x!y!z!) |F_{x,y,z}(φ,0)| h^{p+q} s^r.
/// Bounds the pairing against every unit-norm test function and obeys the
/// product property exactly.
pub fn t_phi_norm_bound(f: &Form, phi: &FieldConfig, p: &NormParams) -> Result<f64, NormError> {
    let mut acc = 0.0f64;
    for (m, poly) in &f.terms {
        let q = m.len();
        for t in expand_at(poly, phi)? {
            let pq = t.bos.len() + t.bos_bar.len() + q;
            let r = t.sig + t.sig_bar;
            acc += t.coef.norm() * p.h.powi(pq as i32) * p.s.powi(r as i32);
        }
    }
    Ok(acc)
}

/// The pairing ⟨F, g⟩_φ of a form against a test function of one fixed
/// signature: the sum over matching derivative coefficients of F at φ,
/// evaluated on sorted slot tuples (boson slots first, then conjugate
/// boson, fermion, conjugate fermion).
pub fn pair_at(f: &Form, g: &SlottedFunction, phi: &FieldConfig) -> Result<Complex64, NormError> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, poly) in &f.terms {
        let ferm: Vec<usize> = m
            .iter()
            .filter(|v| !v.bar)
            .map(|v| v.site as usize)
            .collect();
        let ferm_bar: Vec<usize> = m
            .iter()
            .filter(|v| v.bar)
            .map(|v| v.site as usize)
            .collect();
        if ferm.len() != g.sig.ferm || ferm_bar.len() != g.sig.ferm_bar {
            continue;
        }
        for t in expand_at(poly, phi)? {
            if t.bos.len() != g.sig.bos
                || t.bos_bar.len() != g.sig.bos_bar
                || t.sig != g.sig.sig
                || t.sig_bar != g.sig.sig_bar
            {
                continue;
            }
            let mut slots = Vec::with_capacity(g.sig.spatial());
            let mut bos = t.bos.clone();
            bos.sort_unstable();
            let mut bos_bar = t.bos_bar.clone();
            bos_bar.sort_unstable();
            slots.extend_from_slice(&bos);
            slots.extend_from_slice(&bos_bar);
            slots.extend_from_slice(&ferm);
            slots.extend_from_slice(&ferm_bar);
            acc += t.coef * g.eval(&slots);
        }
    }
    Ok(acc)
}

/// All monomial exponent tuples in `d` variables of total degree ≤ cap.
fn poly_basis(d: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0usize; d]];
    for _ in 0..cap {
        let mut next = Vec::new();
        for e in &out {
            for k in 0..d {
                let mut e2 = e.clone();
                e2[k] += 1;
                if !next.contains(&e2) && !out.contains(&e2) {
                    next.push(e2);
                }
            }
        }
        out.extend(next);
    }
    out.sort();
    out.dedup();
    out
}

/// Rows of the weighted-difference operator restricted to `site_set`: for
/// every admissible derivative word (stencil fully inside the set), the
/// row maps a global complex field to the weighted difference at one site.
struct DiffRows {
    /// flattened stencils: (weight, Vec<(site, coefficient)>)
    rows: Vec<(f64, Vec<(usize, f64)>)>,
}

fn diff_rows(lat: &TorusLattice, site_set: &[usize], p: &NormParams) -> DiffRows {
    let n = lat.site_count();
    let d = lat.dimension();
    let (fwd, bwd) = step_tables(lat);
    let member = {
        let mut m = vec![false; n];
        for &s in site_set {
            m[s] = true;
        }
        m
    };
    // stencil per site: list of (site, coef), valid flag
    type Stencil = Vec<(usize, f64)>;
    let start: Vec<(Stencil, bool)> = (0..n).map(|x| (vec![(x, 1.0)], member[x])).collect();
    let mut rows = Vec::new();
    let lscale = (p.l as f64).powi(p.j as i32);

    fn apply(
        cur: &[(Stencil, bool)],
        step: &[usize],
        member: &[bool],
        forward: bool,
    ) -> Vec<(Stencil, bool)> {
        cur.iter()
            .enumerate()
            .map(|(x, (st, valid))| {
                let other = step[x];
                let (st_o, valid_o) = &cur[other];
                let mut merged: std::collections::BTreeMap<usize, f64> =
                    std::collections::BTreeMap::new();
                let (plus, minus): (&Stencil, &Stencil) =
                    if forward { (st_o, st) } else { (st, st_o) };
                for &(s, c) in plus {
                    *merged.entry(s).or_insert(0.0) += c;
                }
                for &(s, c) in minus {
                    *merged.entry(s).or_insert(0.0) -= c;
                }
                (
                    merged.into_iter().collect(),
                    *valid && *valid_o && member[x] && member[other],
                )
            })
            .collect()
    }

    // DFS over per-direction (forward, backward) order splits
    fn dfs(
        cur: Vec<(Stencil, bool)>,
        dir: usize,
        order: usize,
        d: usize,
        fwd: &[Vec<usize>],
        bwd: &[Vec<usize>],
        member: &[bool],
        lscale: f64,
        rows: &mut Vec<(f64, Stencil)>,
    ) {
        if dir == d {
            let w = lscale.powi(order as i32);
            for (st, valid) in cur {
                if valid {
                    rows.push((w, st));
                }
            }
            return;
        }
        for kf in 0..=MAX_GRADIENT_ORDER {
            let mut base = cur.clone();
            let mut dead = false;
            for _ in 0..kf {
                base = apply(&base, &fwd[dir], member, true);
                if base.iter().all(|(_, v)| !v) {
                    dead = true;
                    break;
                }
            }
            if dead {
                continue;
            }
            for kb in 0..=(MAX_GRADIENT_ORDER - kf) {
                dfs(
                    base.clone(),
                    dir + 1,
                    order + kf + kb,
                    d,
                    fwd,
                    bwd,
                    member,
                    lscale,
                    rows,
                );
                if kb < MAX_GRADIENT_ORDER - kf {
                    base = apply(&base, &bwd[dir], member, false);
                    if base.iter().all(|(_, v)| !v) {
                        break;
                    }
                }
            }
        }
    }

    dfs(start, 0, 0, d, &fwd, &bwd, &member, lscale, &mut rows);
    DiffRows { rows }
}

/// The polynomial-subtraction seminorm of a field on a site set: the
/// infimum over polynomials of total degree ≤ 3 (in torus coordinates
/// relative to the smallest site of the set) of the ℓ-schedule norm of the
/// difference, restricted to stencils inside the set.  Computed as an
/// iteratively reweighted least-squares approximation of the min–max
/// problem; the returned value is the achieved sup, a conservative upper
/// bound for the infimum.
pub fn phi_tilde_seminorm(
    lat: &TorusLattice,
    site_set: &[usize],
    phi: &FieldConfig,
    p: &NormParams,
) -> Result<f64, NormError> {
    if phi.values.len() != lat.site_count() {
        return Err(NormError::SizeMismatch {
            got: phi.values.len(),
            want: lat.site_count(),
        });
    }
    if site_set.is_empty() {
        return Ok(0.0);
    }
    let rows = diff_rows(lat, site_set, p);
    let nrows = rows.rows.len();
    let basis = poly_basis(lat.dimension(), REGULATOR_POLY_DEGREE);
    let ncoef = basis.len();
    let anchor = *site_set.iter().min().unwrap();
    // basis columns as global fields (coordinates wrapped around the anchor)
    let mut basis_vals = vec![vec![0.0f64; lat.site_count()]; ncoef];
    for (k, e) in basis.iter().enumerate() {
        for &x in site_set {
            let disp = lat.displacement(anchor, x);
            let c = lat.wrapped_coords(disp);
            let mut v = 1.0f64;
            for (dim, &pw) in e.iter().enumerate() {
                v *= (c[dim] as f64).powi(pw as i32);
            }
            basis_vals[k][x] = v;
        }
    }
    // assemble the weighted row matrix and targets
    let mut a = DMatrix::zeros(nrows, ncoef);
    let mut t_re = DVector::zeros(nrows);
    let mut t_im = DVector::zeros(nrows);
    for (i, (w, st)) in rows.rows.iter().enumerate() {
        let hw = w / p.h;
        for (k, col) in basis_vals.iter().enumerate() {
            a[(i, k)] = hw * st.iter().map(|&(s, c)| c * col[s]).sum::<f64>();
        }
        let tv: Complex64 = st
            .iter()
            .map(|&(s, c)| phi.values[s] * c)
            .sum::<Complex64>()
            * hw;
        t_re[i] = tv.re;
        t_im[i] = tv.im;
    }
    // Lawson-style iteratively reweighted least squares toward the min–max
    let mut weights = DVector::from_element(nrows, 1.0f64);
    let mut best = f64::INFINITY;
    for _ in 0..25 {
        let wsqrt = weights.map(|w: f64| w.max(1e-14).sqrt());
        let mut aw = a.clone();
        for i in 0..nrows {
            for k in 0..ncoef {
                aw[(i, k)] *= wsqrt[i];
            }
        }
        let mut tr = t_re.clone();
        let mut ti = t_im.clone();
        for i in 0..nrows {
            tr[i] *= wsqrt[i];
            ti[i] *= wsqrt[i];
        }
        let svd = aw.svd(true, true);
        let c_re = svd.solve(&tr, 1e-12).unwrap_or_else(|_| DVector::zeros(ncoef));
        let c_im = svd.solve(&ti, 1e-12).unwrap_or_else(|_| DVector::zeros(ncoef));
        let r_re = &t_re - &a * &c_re;
        let r_im = &t_im - &a * &c_im;
        let moduli: Vec<f64> = (0..nrows)
            .map(|i| (r_re[i] * r_re[i] + r_im[i] * r_im[i]).sqrt())
            .collect();
        let sup = moduli.iter().copied().fold(0.0, f64::max);
        if sup < best {
            best = sup;
        }
        if sup < 1e-13 {
            break;
        }
        // Lawson update: w ← w·|r| renormalized
        let mut total = 0.0;
        for i in 0..nrows {
            weights[i] *= moduli[i].max(1e-14);
            total += weights[i];
        }
        if total > 0.0 {
            weights /= total / nrows as f64;
        }
    }
    Ok(best)
}

/// The large-field regulator: the product over blocks of the polymer of
/// exp of the squared polynomial-subtraction seminorm of the field on the
/// small-set neighborhood of the block.  Always ≥ 1; equals 1 exactly when
/// the field agrees with a cubic polynomial on every such neighborhood.
pub fn regulator(
    lat: &TorusLattice,
    pav: &Paving,
    x: &Polymer,
    phi: &FieldConfig,
    p: &NormParams,
) -> Result<f64, NormError> {
    let mut acc = 1.0f64;
    for &b in &x.blocks {
        let bstar = small_set_neighborhood(pav, &pav.polymer([b]));
        let mut sites = Vec::new();
        for &blk in &bstar.blocks {
            sites.extend(pav.sites_in_block(lat, blk));
        }
        sites.sort_unstable();
        sites.dedup();
        let sem = phi_tilde_seminorm(lat, &sites, phi, p)?;
        acc *= (sem * sem).exp();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::form::FVar;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(j: usize, h: f64, s: f64, l: usize, d: usize) -> NormParams {
        NormParams { j, h, s, l, d }
    }

    #[test]
    fn scalar_constant_norm_is_modulus() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let mut f = SlottedFunction::zeros(SlotSignature::default(), lat.site_count());
        f.values[0] = Complex64::new(-2.5, 0.0);
        let p = params(2, 0.3, 0.7, 3, 1);
        assert_abs_diff_eq!(phi_norm(&lat, &f, &p).unwrap(), 2.5, epsilon = 1e-14);
    }

    #[test]
    fn single_slot_constant_scales_inverse_h() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let sig = SlotSignature {
            bos: 1,
            ..Default::default()
        };
        let mut f = SlottedFunction::zeros(sig, lat.site_count());
        for v in f.values.iter_mut() {
            *v = Complex64::new(3.0, 0.0);
        }
        let p = params(1, 0.5, 1.0, 3, 1);
        // constant: all gradients vanish, sup = 3, weight 1/h
        assert_abs_diff_eq!(phi_norm(&lat, &f, &p).unwrap(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_weights_match_bruteforce_enumeration() {
        // one boson slot on a 9-site circle; independent brute-force
        // enumeration of the weighted difference sup
        let lat = TorusLattice::new(1, 3, 2).unwrap();
        let n = lat.site_count();
        let sig = SlotSignature {
            bos: 1,
            ..Default::default()
        };
        let mut f = SlottedFunction::zeros(sig, n);
        let data = [0.0, 2.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        for (x, &v) in data.iter().enumerate() {
            f.set(&[x], Complex64::new(v, 0.0));
        }
        let p = params(1, 0.5, 1.0, 3, 1);
        let got = phi_norm(&lat, &f, &p).unwrap();

        // oracle: enumerate words of ≤3 forward/backward steps explicitly
        let idx = |x: i64| -> usize { x.rem_euclid(n as i64) as usize };
        let mut best = 0.0f64;
        for kf in 0..=3usize {
            for kb in 0..=(3 - kf) {
                for x in 0..n as i64 {
                    // iterated differences: Δ_fw^kf Δ_bw^kb f at x
                    let mut vals: Vec<f64> = (0..n as i64).map(|y| data[idx(y)]).collect();
                    for _ in 0..kf {
                        vals = (0..n as i64)
                            .map(|y| vals[idx(y + 1)] - vals[idx(y)])
                            .collect();
                    }
                    for _ in 0..kb {
                        vals = (0..n as i64)
                            .map(|y| vals[idx(y)] - vals[idx(y - 1)])
                            .collect();
                    }
                    let w = 3.0f64.powi((kf + kb) as i32) / 0.5;
                    best = best.max(w * vals[idx(x)].abs());
                }
            }
        }
        assert_abs_diff_eq!(got, best, epsilon = 1e-12);
    }

    #[test]
    fn rejects_oversized_signatures() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let p = params(0, 1.0, 1.0, 3, 1);
        let sig = SlotSignature {
            bos: 10,
            ..Default::default()
        };
        let f = SlottedFunction {
            sig,
            n_sites: lat.site_count(),
            values: vec![],
        };
        assert!(matches!(
            phi_norm(&lat, &f, &p),
            Err(NormError::TooManyBosonSlots(10))
        ));
        let sig = SlotSignature {
            sig: 2,
            sig_bar: 1,
            ..Default::default()
        };
        let f = SlottedFunction::zeros(sig, lat.site_count());
        assert!(matches!(
            phi_norm(&lat, &f, &p),
            Err(NormError::TooManySigmaSlots(3))
        ));
    }

    #[test]
    fn bound_of_single_field_is_h() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let f = Form::from_poly(lat.site_count(), Poly::var(BVar::phi(0)));
        let phi = FieldConfig::zeros(&lat);
        let p = params(0, 0.4, 1.0, 3, 1);
        assert_abs_diff_eq!(
            t_phi_norm_bound(&f, &phi, &p).unwrap(),
            0.4,
            epsilon = 1e-14
        );
    }

    #[test]
    fn bound_of_constant_is_modulus() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let f = Form::from_poly(lat.site_count(), Poly::real(-1.75));
        let phi = FieldConfig::zeros(&lat);
        let p = params(0, 0.4, 2.0, 3, 1);
        assert_abs_diff_eq!(
            t_phi_norm_bound(&f, &phi, &p).unwrap(),
            1.75,
            epsilon = 1e-14
        );
    }

    fn random_form(rng: &mut ChaCha8Rng, n: usize) -> Form {
        let mut f = Form::zero(n);
        for _ in 0..3 {
            let mut p = Poly::zero();
            for _ in 0..2 {
                let mut mono = std::collections::BTreeMap::new();
                if rng.gen_bool(0.7) {
                    mono.insert(BVar::phi(rng.gen_range(0..n)), rng.gen_range(1..3u32));
                }
                if rng.gen_bool(0.4) {
                    mono.insert(BVar::phibar(rng.gen_range(0..n)), 1u32);
                }
                if rng.gen_bool(0.3) {
                    mono.insert(BVar::Sigma { bar: rng.gen_bool(0.5) }, 1u32);
                }
                p.add_term(
                    mono,
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                );
            }
            let mono = if rng.gen_bool(0.5) {
                match crate::forms::canonicalize(vec![
                    FVar::psi(rng.gen_range(0..n as u32) as usize),
                    FVar::psibar(rng.gen_range(0..n as u32) as usize),
                ]) {
                    Some((m, s)) => {
                        p = p.scale_real(s);
                        m
                    }
                    None => vec![],
                }
            } else {
                vec![]
            };
            f.add_term(mono, p);
        }
        f
    }

    #[test]
    fn product_property_on_random_forms() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let n = lat.site_count();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = params(1, 0.6, 1.3, 3, 1);
        for trial in 0..40 {
            let f1 = random_form(&mut rng, n);
            let f2 = random_form(&mut rng, n);
            let mut phi = FieldConfig::zeros(&lat);
            for v in phi.values.iter_mut() {
                *v = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            }
            let prod = crate::forms::wedge_mul(&f1, &f2).unwrap();
            let b1 = t_phi_norm_bound(&f1, &phi, &p).unwrap();
            let b2 = t_phi_norm_bound(&f2, &phi, &p).unwrap();
            let bp = t_phi_norm_bound(&prod, &phi, &p).unwrap();
            assert!(
                bp <= b1 * b2 * (1.0 + 1e-12),
                "trial {trial}: {bp} > {b1}*{b2}"
            );
        }
    }

    #[test]
    fn bound_monotone_in_h() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let n = lat.site_count();
        let f = Form::from_poly(n, Poly::var(BVar::phi(1)).mul(&Poly::var(BVar::phibar(2))));
        let phi = FieldConfig::zeros(&lat);
        let lo = t_phi_norm_bound(&f, &phi, &params(0, 0.4, 1.0, 3, 1)).unwrap();
        let hi = t_phi_norm_bound(&f, &phi, &params(0, 0.9, 1.0, 3, 1)).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn bound_dominates_pairing_against_unit_test_functions() {
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let n = lat.site_count();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = params(1, 0.8, 1.1, 3, 1);
        for trial in 0..25 {
            let f = random_form(&mut rng, n);
            let mut phi = FieldConfig::zeros(&lat);
            for v in phi.values.iter_mut() {
                *v = Complex64::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            }
            let bound = t_phi_norm_bound(&f, &phi, &p).unwrap();
            // one random signature drawn from the form's own content
            let sig = SlotSignature {
                bos: rng.gen_range(0..3),
                bos_bar: rng.gen_range(0..2),
                ferm: rng.gen_range(0..2),
                ferm_bar: rng.gen_range(0..2),
                sig: rng.gen_range(0..2),
                sig_bar: rng.gen_range(0..2),
            };
            let mut g = SlottedFunction::zeros(sig, n);
            for v in g.values.iter_mut() {
                *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let norm = phi_norm(&lat, &g, &p).unwrap();
            if norm == 0.0 {
                continue;
            }
            for v in g.values.iter_mut() {
                *v /= norm;
            }
            let pairing = pair_at(&f, &g, &phi).unwrap();
            assert!(
                pairing.norm() <= bound * (1.0 + 1e-10),
                "trial {trial}: |pairing| {} > bound {}",
                pairing.norm(),
                bound
            );
        }
    }

    #[test]
    fn integration_property_shape() {
        // bound(E_C F, h) ≤ Gaussian average of bound(F, 2h) at the shifted
        // field, Monte Carlo with a fixed seed
        use rand_distr::{Distribution, Normal};
        let lat = TorusLattice::new(1, 3, 1).unwrap();
        let n = lat.site_count();
        let c = crate::lattice::solve_green(&lat, 1.0, 0.0).unwrap();
        let mut f = Form::zero(n);
        f.add_term(vec![], {
            let t = Poly::var(BVar::phi(0)).mul(&Poly::var(BVar::phibar(0)));
            t.add(&Poly::var(BVar::phi(1))).add(&Poly::one())
        });
        f.add_term(
            crate::forms::canonicalize(vec![FVar::psi(0), FVar::psibar(1)])
                .unwrap()
                .0,
            Poly::real(0.5),
        );
        let ef = crate::forms::wick::super_expectation(&lat, &c, &f);
        let p1 = params(1, 0.7, 1.0, 3, 1);
        let p2 = params(1, 1.4, 1.0, 3, 1);
        let lhs = t_phi_norm_bound(&ef, &FieldConfig::zeros(&lat), &p1).unwrap();
        // sample ξ with E ξ̄_x ξ_y = C(x,y) through the matrix square root
        let cm = DMatrix::from_fn(n, n, |i, j| c.at(&lat, i, j));
        let chol = cm.cholesky().expect("covariance PSD");
        let lmat = chol.l();
        let normal = Normal::new(0.0f64, (0.5f64).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let samples = 4000;
        let mut acc = 0.0f64;
        for _ in 0..samples {
            let z = DVector::from_fn(n, |_, _| {
                Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
            });
            let mut xi = FieldConfig::zeros(&lat);
            for i in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += Complex64::new(lmat[(i, k)], 0.0) * z[k];
                }
                xi.values[i] = s;
            }
            acc += t_phi_norm_bound(&f, &xi, &p2).unwrap();
        }
        let rhs = acc / samples as f64;
        assert!(lhs <= rhs, "integration property violated: {lhs} > {rhs}");
    }

    #[test]
    fn schedules() {
        let d = 4;
        // ℓ geometric with ratio L^{-[φ]}
        let r = ell_j(3, 1.0, 2, d) / ell_j(2, 1.0, 2, d);
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-14);
        // h-schedule: k0 ḡ^{-1/4} L^{-j[φ]}
        assert_abs_diff_eq!(
            h_j(2, 1.5, 0.0625, 2, d),
            1.5 * 2.0 * 0.25,
            epsilon = 1e-12
        );
        // s frozen at the covering scale
        let s_ab = 3usize;
        let s3 = s_schedule(3, 2.0, s_ab, 1.0, 2, d);
        for j in 4..8 {
            assert_abs_diff_eq!(s_schedule(j, 2.0, s_ab, 1.0, 2, d), s3, epsilon = 1e-12);
        }
        // geometric growth below saturation
        assert_abs_diff_eq!(
            s_schedule(2, 2.0, s_ab, 1.0, 2, d) / s_schedule(1, 2.0, s_ab, 1.0, 2, d),
            2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(s_schedule(0, 2.0, s_ab, 1.0, 2, d), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn regulator_is_one_at_zero_field() {
        let lat = TorusLattice::new(1, 3, 3).unwrap();
        let pav = Paving::new(&lat, 1).unwrap();
        let x = pav.polymer([4u32]);
        let p = params(1, ell_j(1, 1.0, 3, 1), 1.0, 3, 1);
        let phi = FieldConfig::zeros(&lat);
        assert_abs_diff_eq!(
            regulator(&lat, &pav, &x, &phi, &p).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn regulator_ignores_cubic_fields() {
        // a field that agrees with a cubic polynomial on the (non-wrapping)
        // neighborhood of the chosen block is fully subtracted
        let lat = TorusLattice::new(1, 3, 3).unwrap();
        let pav = Paving::new(&lat, 1).unwrap();
        let x = pav.polymer([4u32]); // middle block, B* stays off the seam
        let mut phi = FieldConfig::zeros(&lat);
        for s in 0..lat.site_count() {
            // raw coordinate: cubic across the whole torus except the seam
            // at the far end, which B* of the middle block never sees
            let c = lat.coords(s)[0] as f64;
            phi.values[s] = Complex64::new(
                0.3 * c * c * c - 1.1 * c + 0.2,
                0.05 * c * c + 0.4,
            );
        }
        let p = params(1, ell_j(1, 1.0, 3, 1), 1.0, 3, 1);
        let g = regulator(&lat, &pav, &x, &phi, &p).unwrap();
        assert_abs_diff_eq!(g, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn regulator_monotone_in_field_scale() {
        let lat = TorusLattice::new(1, 3, 3).unwrap();
        let pav = Paving::new(&lat, 1).unwrap();
        let x = pav.polymer([0u32, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut phi = FieldConfig::zeros(&lat);
        for v in phi.values.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let p = params(1, ell_j(1, 1.0, 3, 1), 1.0, 3, 1);
        let mut last = 0.0f64;
        for lam in [1.0f64, 1.5, 2.0, 3.0] {
            let mut scaled = phi.clone();
            for v in scaled.values.iter_mut() {
                *v *= lam;
            }
            let g = regulator(&lat, &pav, &x, &scaled, &p).unwrap();
            assert!(g >= last, "regulator decreased: {g} < {last}");
            assert!(g >= 1.0);
            last = g;
        }
    }
}
