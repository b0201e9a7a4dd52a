//! Flow moments on tori too large to materialise dense kernels.
//!
//! Every quantity the closed-form flow consumes — the diagonal C_{j+1}(0,0),
//! the row sum Σ_y C_{j+1}(0,y), the squared ℓ²-mass Σ_x C_{j+1}(0,x)², and
//! on-axis values C_{j+1}(a,b) — is a spectral sum over the torus momenta.
//! The Laplacian eigenvalue separates over axes, so the full d-dimensional
//! momentum sum collapses to sorted tuples of the R/2 distinct 1d
//! eigenvalues, weighted by their ordering multiplicities.  One pass over
//! (axis eigenvalue) × (collapsed (d−1)-tuple) accumulates, per scale, the
//! partial sums G_j(μ) = Σ f_j(μ+s) and H_j(μ) = Σ f_j(μ+s)²; every moment
//! is then a short cosine synthesis over the 1d spectrum.

use crate::frd::{FrdError, SliceFamily};
use crate::lattice::{enumerate_sorted_tuples, TorusLattice};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Frd(#[from] FrdError),
    #[error("displacement {r} exceeds the torus half-side {half}")]
    DisplacementTooLarge { r: usize, half: usize },
}

/// Lightweight per-scale flow inputs (no dense kernels).
#[derive(Debug, Clone)]
pub struct FlowMoments {
    /// c00[j] = C_{j+1}(0,0)
    pub c00: Vec<f64>,
    /// row_sum[j] = Σ_y C_{j+1}(0,y)
    pub row_sum: Vec<f64>,
    /// delta[j] = Σ_x C_{j+1}(0,x)²
    pub delta: Vec<f64>,
    /// cab[j] = C_{j+1}(a,b) for the chosen observable pair
    pub cab: Vec<f64>,
}

impl FlowMoments {
    pub fn from_dense(m: &crate::frd::ScaleMoments) -> Self {
        FlowMoments {
            c00: m.c00.clone(),
            row_sum: m.row_sum.clone(),
            delta: m.delta.clone(),
            cab: m.cab.clone(),
        }
    }
}

/// Per-scale axis-collapsed spectral sums, reusable for any on-axis
/// displacement.
#[derive(Debug, Clone)]
pub struct SpectralTable {
    pub d: usize,
    pub side: usize,
    pub n_scales: usize,
    pub m2: f64,
    /// distinct 1d eigenvalues μ(n) = 2 − 2cos(2πn/R), n = 0..=R/2
    mu: Vec<f64>,
    /// multiplicity of each distinct eigenvalue (1 or 2)
    mult: Vec<f64>,
    /// g[j][n] = Σ over collapsed (d−1)-tuples s of W·f_j(μ(n)+s)
    g: Vec<Vec<f64>>,
    /// h[j][n] = Σ over collapsed (d−1)-tuples s of W·f_j(μ(n)+s)²
    h: Vec<Vec<f64>>,
    /// row_sum[j] = f_j(0)
    row_sum: Vec<f64>,
}

/// Above this many slice arguments the builder switches from direct
/// Chebyshev evaluation to an interpolated lookup (≈3e-5 relative error,
/// far below the tolerances of anything consuming these moments).
const DIRECT_EVAL_BUDGET: usize = 50_000_000;

/// All scale slices tabulated on a uniform grid in u = √λ, interleaved so
/// one argument touches a single cache line.
struct SliceGrid {
    n_scales: usize,
    inv_step: f64,
    max_index: usize,
    rows: Vec<f64>,
}

impl SliceGrid {
    fn build(slices: &SliceFamily, n_scales: usize, lam_max: f64, nodes: usize) -> SliceGrid {
        let u_max = lam_max.sqrt();
        let step = u_max / nodes as f64;
        let mut rows = vec![0.0f64; (nodes + 2) * n_scales];
        for i in 0..=nodes + 1 {
            let u = step * i as f64;
            let lam = (u * u).min(lam_max);
            for j in 0..n_scales {
                rows[i * n_scales + j] = slices.eval(j, lam);
            }
        }
        SliceGrid {
            n_scales,
            inv_step: 1.0 / step,
            max_index: nodes,
            rows,
        }
    }

    #[inline]
    fn eval_all(&self, lam: f64, out: &mut [f64]) {
        let x = lam.sqrt() * self.inv_step;
        let i = (x as usize).min(self.max_index);
        let frac = x - i as f64;
        let lo = &self.rows[i * self.n_scales..(i + 1) * self.n_scales];
        let hi = &self.rows[(i + 1) * self.n_scales..(i + 2) * self.n_scales];
        for j in 0..self.n_scales {
            out[j] = lo[j] + frac * (hi[j] - lo[j]);
        }
    }
}

/// Build the axis-collapsed table for the given torus and mass.  Cost is
/// (R/2) × #sorted-(d−1)-tuples slice evaluations, independent of the
/// (astronomically larger) site count.
pub fn spectral_table(lat: &TorusLattice, m2: f64) -> Result<SpectralTable, SpectralError> {
    spectral_table_impl(lat, m2, false)
}

fn spectral_table_impl(
    lat: &TorusLattice,
    m2: f64,
    force_grid: bool,
) -> Result<SpectralTable, SpectralError> {
    let slices = SliceFamily::new(lat, m2)?;
    let d = lat.dimension();
    let r = lat.side();
    let n_scales = lat.num_scales();

    // distinct 1d eigenvalues with multiplicities (n ↔ R−n symmetry)
    let half = r / 2;
    let mut mu = Vec::with_capacity(half + 1);
    let mut mult = Vec::with_capacity(half + 1);
    for n in 0..=half {
        let theta = 2.0 * std::f64::consts::PI * n as f64 / r as f64;
        mu.push(2.0 - 2.0 * theta.cos());
        let m = if n == 0 || (r % 2 == 0 && n == half) {
            1.0
        } else {
            2.0
        };
        mult.push(m);
    }

    // collapsed (d−1)-tuples: (eigenvalue sum, weight)
    let mut tuples: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    if d > 1 {
        let mut out = Vec::new();
        enumerate_sorted_tuples(&mu, &mult, d - 1, &mut out);
        tuples = out;
    }

    let nd = mu.len();
    let mut g = vec![vec![0.0f64; nd]; n_scales];
    let mut h = vec![vec![0.0f64; nd]; n_scales];
    let mut fj = vec![0.0f64; n_scales];
    let grid = if force_grid || nd.saturating_mul(tuples.len()) > DIRECT_EVAL_BUDGET {
        Some(SliceGrid::build(&slices, n_scales, 4.0 * d as f64, 1 << 17))
    } else {
        None
    };
    for (i, &m1) in mu.iter().enumerate() {
        for &(s, w) in &tuples {
            let lam = m1 + s;
            match &grid {
                Some(t) => t.eval_all(lam, &mut fj),
                None => {
                    for (j, f) in fj.iter_mut().enumerate() {
                        *f = slices.eval(j, lam);
                    }
                }
            }
            for j in 0..n_scales {
                g[j][i] += w * fj[j];
                h[j][i] += w * fj[j] * fj[j];
            }
        }
    }
    let row_sum: Vec<f64> = (0..n_scales).map(|j| slices.eval(j, 0.0)).collect();
    Ok(SpectralTable {
        d,
        side: r,
        n_scales,
        m2,
        mu,
        mult,
        g,
        h,
        row_sum,
    })
}

impl SpectralTable {
    fn volume(&self) -> f64 {
        (self.side as f64).powi(self.d as i32)
    }

    /// C_{j+1}(0,0) for every scale.
    pub fn c00(&self) -> Vec<f64> {
        let vol = self.volume();
        (0..self.n_scales)
            .map(|j| {
                self.mu
                    .iter()
                    .enumerate()
                    .map(|(i, _)| self.mult[i] * self.g[j][i])
                    .sum::<f64>()
                    / vol
            })
            .collect()
    }

    /// Σ_x C_{j+1}(0,x)² for every scale.
    pub fn delta(&self) -> Vec<f64> {
        let vol = self.volume();
        (0..self.n_scales)
            .map(|j| {
                self.mu
                    .iter()
                    .enumerate()
                    .map(|(i, _)| self.mult[i] * self.h[j][i])
                    .sum::<f64>()
                    / vol
            })
            .collect()
    }

    /// Σ_y C_{j+1}(0,y) = f_j(0) for every scale.
    pub fn row_sum(&self) -> Vec<f64> {
        self.row_sum.clone()
    }

    /// C_{j+1}(0, r·e₁) by cosine synthesis over the first axis.
    pub fn cab_axis(&self, r: usize) -> Result<Vec<f64>, SpectralError> {
        if r > self.side / 2 {
            return Err(SpectralError::DisplacementTooLarge {
                r,
                half: self.side / 2,
            });
        }
        let vol = self.volume();
        let mut out = Vec::with_capacity(self.n_scales);
        for j in 0..self.n_scales {
            let mut acc = 0.0f64;
            for (i, _) in self.mu.iter().enumerate() {
                let theta = 2.0 * std::f64::consts::PI * (i as f64) * (r as f64) / self.side as f64;
                acc += self.mult[i] * theta.cos() * self.g[j][i];
            }
            out.push(acc / vol);
        }
        Ok(out)
    }

    /// Flow moments for an on-axis observable pair at distance r.
    pub fn flow_moments(&self, r: usize) -> Result<FlowMoments, SpectralError> {
        Ok(FlowMoments {
            c00: self.c00(),
            row_sum: self.row_sum(),
            delta: self.delta(),
            cab: self.cab_axis(r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense_reference(d: usize, l: usize, n: usize, m2: f64, r: usize) -> FlowMoments {
        let lat = TorusLattice::new(d, l, n).unwrap();
        let frd = crate::frd::decompose(&lat, m2, l).unwrap();
        let mut coords = vec![0usize; d];
        coords[0] = r;
        let b = lat.index(&coords);
        FlowMoments::from_dense(&crate::frd::moments(&frd, 0, b))
    }

    fn check_matches_dense(d: usize, l: usize, n: usize, m2: f64, r: usize) {
        let lat = TorusLattice::new(d, l, n).unwrap();
        let table = spectral_table(&lat, m2).unwrap();
        let got = table.flow_moments(r).unwrap();
        let want = dense_reference(d, l, n, m2, r);
        for j in 0..lat.num_scales() {
            assert_abs_diff_eq!(got.c00[j], want.c00[j], epsilon = 1e-10);
            assert_abs_diff_eq!(got.row_sum[j], want.row_sum[j], epsilon = 1e-10);
            assert_abs_diff_eq!(got.delta[j], want.delta[j], epsilon = 1e-10);
            assert_abs_diff_eq!(got.cab[j], want.cab[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn matches_dense_1d() {
        check_matches_dense(1, 3, 2, 0.5, 2);
    }

    #[test]
    fn matches_dense_2d() {
        check_matches_dense(2, 3, 2, 0.3, 3);
        check_matches_dense(2, 3, 2, 0.0, 1);
    }

    #[test]
    fn matches_dense_3d() {
        check_matches_dense(3, 3, 1, 1.0, 1);
    }

    #[test]
    fn completeness_of_spectral_sums() {
        // Σ_j C_{j+1}(0,0) telescopes to the Green function diagonal
        let lat = TorusLattice::new(2, 3, 2).unwrap();
        let m2 = 0.7;
        let table = spectral_table(&lat, m2).unwrap();
        let c00 = table.c00();
        let green = crate::lattice::solve_green(&lat, m2, 0.0).unwrap();
        let total: f64 = c00.iter().sum();
        assert_abs_diff_eq!(total, green.diagonal(), epsilon = 1e-10);
    }

    #[test]
    fn grid_path_matches_direct_evaluation() {
        let lat = TorusLattice::new(2, 3, 3).unwrap();
        let direct = spectral_table_impl(&lat, 0.2, false).unwrap();
        let grid = spectral_table_impl(&lat, 0.2, true).unwrap();
        let (md, mg) = (
            direct.flow_moments(3).unwrap(),
            grid.flow_moments(3).unwrap(),
        );
        for j in 0..lat.num_scales() {
            assert_abs_diff_eq!(mg.c00[j], md.c00[j], epsilon = 1e-4 * md.c00[j].abs());
            assert_abs_diff_eq!(mg.delta[j], md.delta[j], epsilon = 1e-4 * md.delta[j].abs());
            let tol = 1e-4 * md.c00[j].abs().max(md.cab[j].abs());
            assert_abs_diff_eq!(mg.cab[j], md.cab[j], epsilon = tol);
        }
    }

    #[test]
    fn rejects_displacement_beyond_half_side() {
        let lat = TorusLattice::new(1, 3, 2).unwrap();
        let table = spectral_table(&lat, 0.5).unwrap();
        assert!(matches!(
            table.cab_axis(5),
            Err(SpectralError::DisplacementTooLarge { r: 5, half: 4 })
        ));
        assert!(table.cab_axis(4).is_ok());
    }
}
