//! Discrete torus Λ = Z^d / L^N Z^d, lattice Laplacian, and Green functions.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("base scale L must be at least 3, got {0}")]
    BaseTooSmall(usize),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("number of scales must be at least 1")]
    ZeroScales,
    #[error("lattice size overflows: L={l}, N={n}, d={d}")]
    Overflow { l: usize, n: usize, d: usize },
    #[error("field size {got} does not match lattice site count {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("operator m^2 - Delta is not invertible: m^2 + nu = {0}")]
    SingularOperator(f64),
    #[error("dense storage of {0} sites exceeds the configured budget")]
    TooLargeForDense(usize),
}

/// Largest site count for which we allocate dense (per-site) storage.
pub const DENSE_SITE_BUDGET: usize = 1 << 24;

/// The discrete torus of side R = L^N in d dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusLattice {
    d: usize,
    l: usize,
    n_scales: usize,
    side: usize,
    site_count: usize,
}

impl TorusLattice {
    pub fn new(d: usize, l: usize, n: usize) -> Result<Self, LatticeError> {
        if d == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if l < 3 {
            return Err(LatticeError::BaseTooSmall(l));
        }
        if n == 0 {
            return Err(LatticeError::ZeroScales);
        }
        let side = l
            .checked_pow(n as u32)
            .ok_or(LatticeError::Overflow { l, n, d })?;
        let site_count = side
            .checked_pow(d as u32)
            .ok_or(LatticeError::Overflow { l, n, d })?;
        Ok(TorusLattice {
            d,
            l,
            n_scales: n,
            side,
            site_count,
        })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn base(&self) -> usize {
        self.l
    }

    pub fn num_scales(&self) -> usize {
        self.n_scales
    }

    /// Side length R = L^N.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    /// Field dimension [phi] = (d-2)/2.
    pub fn field_dimension(&self) -> f64 {
        (self.d as f64 - 2.0) / 2.0
    }

    pub fn check_dense(&self) -> Result<(), LatticeError> {
        if self.site_count > DENSE_SITE_BUDGET {
            Err(LatticeError::TooLargeForDense(self.site_count))
        } else {
            Ok(())
        }
    }

    /// Lexicographic coordinates in {0,..,R-1}^d of a site index.
    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.d];
        let mut rest = site;
        for k in (0..self.d).rev() {
            c[k] = rest % self.side;
            rest /= self.side;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * self.side + (c % self.side);
        }
        idx
    }

    /// The 2d nearest neighbours of a site (with repetition impossible since R >= 3).
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let c = self.coords(site);
        let mut out = Vec::with_capacity(2 * self.d);
        for k in 0..self.d {
            let mut cp = c.clone();
            cp[k] = (c[k] + 1) % self.side;
            out.push(self.index(&cp));
            cp[k] = (c[k] + self.side - 1) % self.side;
            out.push(self.index(&cp));
        }
        out
    }

    /// Site index of the displacement b - a (mod R).
    pub fn displacement(&self, a: usize, b: usize) -> usize {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut diff = vec![0usize; self.d];
        for k in 0..self.d {
            diff[k] = (cb[k] + self.side - ca[k]) % self.side;
        }
        self.index(&diff)
    }

    pub fn negate(&self, disp: usize) -> usize {
        let c = self.coords(disp);
        let neg: Vec<usize> = c.iter().map(|&x| (self.side - x) % self.side).collect();
        self.index(&neg)
    }

    /// Per-axis torus distance of a displacement, as signed representatives
    /// in (-R/2, R/2].
    pub fn wrapped_coords(&self, disp: usize) -> Vec<i64> {
        let r = self.side as i64;
        self.coords(disp)
            .iter()
            .map(|&x| {
                let x = x as i64;
                if 2 * x > r {
                    x - r
                } else {
                    x
                }
            })
            .collect()
    }

    pub fn torus_dist_sq(&self, a: usize, b: usize) -> i64 {
        self.wrapped_coords(self.displacement(a, b))
            .iter()
            .map(|&x| x * x)
            .sum()
    }

    pub fn torus_dist(&self, a: usize, b: usize) -> f64 {
        (self.torus_dist_sq(a, b) as f64).sqrt()
    }

    pub fn torus_dist_linf(&self, a: usize, b: usize) -> i64 {
        self.wrapped_coords(self.displacement(a, b))
            .iter()
            .map(|&x| x.abs())
            .max()
            .unwrap_or(0)
    }

    pub fn torus_dist_l1(&self, a: usize, b: usize) -> i64 {
        self.wrapped_coords(self.displacement(a, b))
            .iter()
            .map(|&x| x.abs())
            .sum()
    }

    /// Eigenvalue of -Delta at the momentum labelled by `site` (each
    /// coordinate n_k gives frequency 2 pi n_k / R).
    pub fn laplacian_eigenvalue(&self, momentum: usize) -> f64 {
        let c = self.coords(momentum);
        c.iter()
            .map(|&n| {
                let theta = 2.0 * std::f64::consts::PI * n as f64 / self.side as f64;
                2.0 - 2.0 * theta.cos()
            })
            .sum()
    }

    /// Site at the origin-relative offset, wrapping each coordinate.
    pub fn site_at(&self, offset: &[i64]) -> usize {
        let r = self.side as i64;
        let coords: Vec<usize> = offset
            .iter()
            .map(|&x| (((x % r) + r) % r) as usize)
            .collect();
        self.index(&coords)
    }
}

/// Complex field phi on the lattice; the conjugate field is implied.
#[derive(Debug, Clone)]
pub struct FieldConfig {
    pub values: Vec<Complex64>,
}

impl FieldConfig {
    pub fn zeros(lat: &TorusLattice) -> Self {
        FieldConfig {
            values: vec![Complex64::new(0.0, 0.0); lat.site_count()],
        }
    }

    pub fn constant(lat: &TorusLattice, c: Complex64) -> Self {
        FieldConfig {
            values: vec![c; lat.site_count()],
        }
    }
}

/// (Delta f)_x = sum_{y ~ x} (f_y - f_x).
pub fn apply_laplacian(lat: &TorusLattice, f: &FieldConfig) -> Result<FieldConfig, LatticeError> {
    if f.values.len() != lat.site_count() {
        return Err(LatticeError::SizeMismatch {
            got: f.values.len(),
            want: lat.site_count(),
        });
    }
    let mut out = FieldConfig::zeros(lat);
    for x in 0..lat.site_count() {
        let mut acc = Complex64::new(0.0, 0.0);
        for y in lat.neighbors(x) {
            acc += f.values[y] - f.values[x];
        }
        out.values[x] = acc;
    }
    Ok(out)
}

/// Symmetric translation-invariant kernel on Λ×Λ, stored by displacement.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub d: usize,
    pub side: usize,
    /// values[disp] = K(0, disp)
    pub values: Vec<f64>,
}

impl Kernel {
    pub fn zeros(lat: &TorusLattice) -> Self {
        Kernel {
            d: lat.dimension(),
            side: lat.side(),
            values: vec![0.0; lat.site_count()],
        }
    }

    pub fn at(&self, lat: &TorusLattice, x: usize, y: usize) -> f64 {
        self.values[lat.displacement(x, y)]
    }

    pub fn diagonal(&self) -> f64 {
        self.values[0]
    }

    pub fn row_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&mut self, other: &Kernel) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += *b;
        }
    }
}

/// Inverse DFT along every axis: k[x] = (1/R^d) sum_p s[p] e^{2 pi i p.x / R}.
/// The spectrum must be symmetric under p -> -p so the result is real.
pub fn kernel_from_spectrum(lat: &TorusLattice, spectrum: &[f64]) -> Kernel {
    let r = lat.side();
    let d = lat.dimension();
    let n = lat.site_count();
    assert_eq!(spectrum.len(), n);
    let mut data: Vec<Complex64> = spectrum.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    // Precompute one period of twiddle factors.
    let tw: Vec<Complex64> = (0..r)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / r as f64))
        .collect();
    let mut line_in = vec![Complex64::new(0.0, 0.0); r];
    for axis in (0..d).rev() {
        // stride of this axis in the lexicographic layout
        let stride = r.pow((d - 1 - axis) as u32);
        let block = stride * r;
        for base in (0..n).step_by(block) {
            for off in 0..stride {
                for (p, slot) in line_in.iter_mut().enumerate() {
                    *slot = data[base + off + p * stride];
                }
                for x in 0..r {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (p, &v) in line_in.iter().enumerate() {
                        acc += v * tw[(p * x) % r];
                    }
                    data[base + off + x * stride] = acc;
                }
            }
        }
    }
    let norm = 1.0 / n as f64;
    Kernel {
        d,
        side: r,
        values: data.iter().map(|c| c.re * norm).collect(),
    }
}

/// Finite-volume Green function (m^2 + nu - Delta)^{-1} by Fourier
/// diagonalisation.
pub fn solve_green(lat: &TorusLattice, m2: f64, nu_shift: f64) -> Result<Kernel, LatticeError> {
    let mass = m2 + nu_shift;
    if mass <= 0.0 {
        return Err(LatticeError::SingularOperator(mass));
    }
    lat.check_dense()?;
    let spectrum: Vec<f64> = (0..lat.site_count())
        .map(|p| 1.0 / (mass + lat.laplacian_eigenvalue(p)))
        .collect();
    Ok(kernel_from_spectrum(lat, &spectrum))
}

/// Infinite-volume Green function (-Delta)^{-1}(a, b) on Z^d, d >= 3, via
/// half-offset midpoint quadrature of the Brillouin-zone integral with
/// Richardson extrapolation in the resolution.
pub fn infinite_volume_green(d: usize, a: &[i64], b: &[i64]) -> Result<f64, LatticeError> {
    assert!(d >= 3, "transience requires d >= 3");
    assert_eq!(a.len(), d);
    assert_eq!(b.len(), d);
    let x: Vec<i64> = a.iter().zip(b.iter()).map(|(&ai, &bi)| bi - ai).collect();
    let vals: Vec<f64> = [128usize, 256, 512]
        .iter()
        .map(|&m| brillouin_midpoint(d, &x, m))
        .collect();
    // Error model c/M^2: Richardson on successive doublings.
    let r1 = (4.0 * vals[1] - vals[0]) / 3.0;
    let r2 = (4.0 * vals[2] - vals[1]) / 3.0;
    let residual = (r2 - r1).abs();
    if !(residual.is_finite()) {
        return Err(LatticeError::SingularOperator(f64::NAN));
    }
    Ok(r2)
}

/// Midpoint sum over the shifted momentum grid k_i = 2 pi (n_i + 1/2) / M.
/// Axes with zero displacement are collapsed into a multiset of 1d
/// eigenvalues so the cost is M^{(#nonzero axes)} x (collapsed combinations).
fn brillouin_midpoint(d: usize, x: &[i64], m: usize) -> f64 {
    let mu: Vec<f64> = (0..m)
        .map(|n| {
            let theta = std::f64::consts::PI * (2.0 * n as f64 + 1.0) / m as f64;
            2.0 - 2.0 * theta.cos()
        })
        .collect();
    // distinct 1d eigenvalues with multiplicity (mu is symmetric: n <-> M-1-n)
    let half = m / 2;
    let dmu: Vec<f64> = (0..half).map(|n| mu[n]).collect();
    let dw: Vec<f64> = (0..half).map(|_| 2.0).collect();
    let zero_axes = x.iter().filter(|&&xi| xi == 0).count();
    let nz: Vec<i64> = x.iter().filter(|&&xi| xi != 0).cloned().collect();

    // Fold the zero axes into (sum of eigenvalues, weight) pairs over sorted
    // index tuples.
    let mut sums: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    if zero_axes > 0 {
        let mut out = Vec::new();
        enumerate_sorted_tuples(&dmu, &dw, zero_axes, &mut out);
        sums = out;
    }

    let mut total = 0.0;
    // loop over the non-collapsed axes explicitly
    let nnz = nz.len();
    let mut idx = vec![0usize; nnz];
    loop {
        let mut eig = 0.0;
        let mut phase = 1.0;
        for (k, &xi) in nz.iter().enumerate() {
            let n = idx[k];
            let theta = std::f64::consts::PI * (2.0 * n as f64 + 1.0) / m as f64;
            eig += 2.0 - 2.0 * theta.cos();
            phase *= (theta * xi as f64).cos();
        }
        for &(s, w) in &sums {
            total += w * phase / (eig + s);
        }
        // increment mixed-radix counter
        let mut k = 0;
        loop {
            if k == nnz {
                break;
            }
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == nnz {
            break;
        }
        if nnz == 0 {
            break;
        }
    }
    total / (m as f64).powi(d as i32)
}

/// All sorted `len`-tuples over the distinct values, with weight =
/// (#orderings) * product of per-value multiplicities.
pub fn enumerate_sorted_tuples(vals: &[f64], mult: &[f64], len: usize, out: &mut Vec<(f64, f64)>) {
    fn rec(
        vals: &[f64],
        mult: &[f64],
        remaining: usize,
        start: usize,
        s: f64,
        w: f64,
        slots_used: usize,
        run_len: usize,
        orderings: f64,
        out: &mut Vec<(f64, f64)>,
    ) {
        if remaining == 0 {
            out.push((s, w * orderings));
            return;
        }
        for i in start..vals.len() {
            let new_run = if slots_used > 0 && i == start && run_len > 0 {
                run_len + 1
            } else {
                1
            };
            // orderings of a sorted tuple = n! / prod(run lengths!): build the
            // factor incrementally: choosing the next slot multiplies by
            // (slots_used + 1) / new_run.
            let new_orderings = orderings * (slots_used as f64 + 1.0) / new_run as f64;
            rec(
                vals,
                mult,
                remaining - 1,
                i,
                s + vals[i],
                w * mult[i],
                slots_used + 1,
                new_run,
                new_orderings,
                out,
            );
        }
    }
    rec(vals, mult, len, 0, 0.0, 1.0, 0, 0, 1.0, out);
}
