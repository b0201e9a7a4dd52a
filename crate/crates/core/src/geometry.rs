//! Blocks, polymers, connectivity, small sets, small-set neighborhoods, and
//! the circle product over block subsets.

use crate::lattice::TorusLattice;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("scale {j} out of range 0..={n}")]
    ScaleOutOfRange { j: usize, n: usize },
    #[error("polymer scale mismatch: {0} vs {1}")]
    ScaleMismatch(usize, usize),
    #[error("circle product over {blocks} blocks exceeds the cap of {cap}")]
    TooManyBlocks { blocks: usize, cap: usize },
}

/// An axis-aligned cube of side L^j in the scale-j paving.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub j: usize,
    pub anchor: Vec<usize>,
    pub side: usize,
}

/// The scale-j paving of the torus into L^{(N-j)d} disjoint blocks. For odd L
/// the grid is offset so the block containing 0 is centered
/// (|x| <= (L^j - 1)/2); for even L the grid is anchored at 0.
#[derive(Debug, Clone)]
pub struct Paving {
    pub d: usize,
    pub j: usize,
    pub side: usize,
    pub block_side: usize,
    /// blocks per axis = L^{N-j}
    pub per_axis: usize,
    /// anchor coordinate of block (0,...,0)
    pub offset: usize,
}

impl Paving {
    pub fn new(lat: &TorusLattice, j: usize) -> Result<Self, GeometryError> {
        let n = lat.num_scales();
        if j > n {
            return Err(GeometryError::ScaleOutOfRange { j, n });
        }
        let block_side = lat.base().pow(j as u32);
        let offset = if lat.base() % 2 == 1 {
            (lat.side() - (block_side - 1) / 2) % lat.side()
        } else {
            0
        };
        Ok(Paving {
            d: lat.dimension(),
            j,
            side: lat.side(),
            block_side,
            per_axis: lat.side() / block_side,
            offset,
        })
    }

    pub fn block_count(&self) -> usize {
        self.per_axis.pow(self.d as u32)
    }

    /// Lexicographic block index from per-axis block coordinates.
    pub fn block_index(&self, bc: &[usize]) -> u32 {
        let mut idx = 0usize;
        for &c in bc {
            idx = idx * self.per_axis + (c % self.per_axis);
        }
        idx as u32
    }

    pub fn block_coords(&self, idx: u32) -> Vec<usize> {
        let mut c = vec![0usize; self.d];
        let mut rest = idx as usize;
        for k in (0..self.d).rev() {
            c[k] = rest % self.per_axis;
            rest /= self.per_axis;
        }
        c
    }

    pub fn block(&self, idx: u32) -> Block {
        let bc = self.block_coords(idx);
        let anchor: Vec<usize> = bc
            .iter()
            .map(|&c| (self.offset + c * self.block_side) % self.side)
            .collect();
        Block {
            j: self.j,
            anchor,
            side: self.block_side,
        }
    }

    pub fn block_of_site(&self, lat: &TorusLattice, site: usize) -> u32 {
        let coords = lat.coords(site);
        let bc: Vec<usize> = coords
            .iter()
            .map(|&c| ((c + self.side - self.offset) % self.side) / self.block_side)
            .collect();
        self.block_index(&bc)
    }

    pub fn sites_in_block(&self, lat: &TorusLattice, idx: u32) -> Vec<usize> {
        let b = self.block(idx);
        let mut out = Vec::with_capacity(self.block_side.pow(self.d as u32));
        let mut off = vec![0usize; self.d];
        loop {
            let coords: Vec<usize> = b
                .anchor
                .iter()
                .zip(off.iter())
                .map(|(&a, &o)| (a + o) % self.side)
                .collect();
            out.push(lat.index(&coords));
            let mut k = 0;
            while k < self.d {
                off[k] += 1;
                if off[k] < self.block_side {
                    break;
                }
                off[k] = 0;
                k += 1;
            }
            if k == self.d {
                break;
            }
        }
        out
    }

    /// Torus distance between blocks in block coordinates, per the ∞-norm.
    pub fn block_dist_linf(&self, a: u32, b: u32) -> usize {
        let ca = self.block_coords(a);
        let cb = self.block_coords(b);
        ca.iter()
            .zip(cb.iter())
            .map(|(&x, &y)| {
                let diff = (x + self.per_axis - y) % self.per_axis;
                diff.min(self.per_axis - diff)
            })
            .max()
            .unwrap_or(0)
    }

    /// Blocks touch iff their site sets are within ∞-distance 1, which on the
    /// aligned grid is block distance <= 1.
    pub fn touch(&self, a: u32, b: u32) -> bool {
        self.block_dist_linf(a, b) <= 1
    }

    pub fn polymer(&self, blocks: impl IntoIterator<Item = u32>) -> Polymer {
        Polymer {
            j: self.j,
            blocks: blocks.into_iter().collect(),
        }
    }

    pub fn full_torus(&self) -> Polymer {
        self.polymer(0..self.block_count() as u32)
    }
}

/// A union of scale-j blocks, stored as the set of block indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Polymer {
    pub j: usize,
    pub blocks: BTreeSet<u32>,
}

impl Polymer {
    pub fn empty(j: usize) -> Self {
        Polymer {
            j,
            blocks: BTreeSet::new(),
        }
    }

    /// |X|_j, the number of blocks.
    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, b: u32) -> bool {
        self.blocks.contains(&b)
    }

    pub fn union(&self, other: &Polymer) -> Polymer {
        assert_eq!(self.j, other.j);
        Polymer {
            j: self.j,
            blocks: self.blocks.union(&other.blocks).cloned().collect(),
        }
    }

    pub fn difference(&self, other: &Polymer) -> Polymer {
        assert_eq!(self.j, other.j);
        Polymer {
            j: self.j,
            blocks: self.blocks.difference(&other.blocks).cloned().collect(),
        }
    }

    pub fn intersects(&self, other: &Polymer) -> bool {
        self.blocks.intersection(&other.blocks).next().is_some()
    }

    pub fn is_subset(&self, other: &Polymer) -> bool {
        self.blocks.is_subset(&other.blocks)
    }
}

/// Whether two polymers touch (some pair of their blocks touch).
pub fn polymers_touch(pav: &Paving, x: &Polymer, y: &Polymer) -> bool {
    x.blocks
        .iter()
        .any(|&a| y.blocks.iter().any(|&b| pav.touch(a, b)))
}

pub fn pave(lat: &TorusLattice, j: usize) -> Result<Vec<Block>, GeometryError> {
    let pav = Paving::new(lat, j)?;
    Ok((0..pav.block_count() as u32).map(|i| pav.block(i)).collect())
}

/// Maximal connected components under ∞-norm block adjacency, ordered by
/// their smallest block index.
pub fn components(pav: &Paving, x: &Polymer) -> Vec<Polymer> {
    let mut remaining: BTreeSet<u32> = x.blocks.clone();
    let mut out = Vec::new();
    while let Some(&seed) = remaining.iter().next() {
        let mut comp = BTreeSet::new();
        let mut queue = vec![seed];
        remaining.remove(&seed);
        comp.insert(seed);
        while let Some(b) = queue.pop() {
            let adjacent: Vec<u32> = remaining
                .iter()
                .cloned()
                .filter(|&c| pav.touch(b, c))
                .collect();
            for c in adjacent {
                remaining.remove(&c);
                comp.insert(c);
                queue.push(c);
            }
        }
        out.push(Polymer {
            j: x.j,
            blocks: comp,
        });
    }
    out
}

pub fn is_connected(pav: &Paving, x: &Polymer) -> bool {
    !x.is_empty() && components(pav, x).len() == 1
}

/// Small set: connected and at most 2^d blocks.
pub fn is_small_set(pav: &Paving, x: &Polymer) -> bool {
    !x.is_empty() && x.size() <= 1 << pav.d && is_connected(pav, x)
}

/// X* = union of all small sets meeting X. Closed form: a block B belongs to
/// X* iff some connected polymer of at most 2^d blocks contains B and a block
/// of X, i.e. iff min block ∞-distance from B to X is at most 2^d - 1 (a
/// diagonal staircase of 1 + dist blocks realises the minimum).
pub fn small_set_neighborhood(pav: &Paving, x: &Polymer) -> Polymer {
    if x.is_empty() {
        return Polymer::empty(x.j);
    }
    let reach = (1usize << pav.d) - 1;
    let blocks: BTreeSet<u32> = (0..pav.block_count() as u32)
        .filter(|&b| x.blocks.iter().any(|&a| pav.block_dist_linf(a, b) <= reach))
        .collect();
    Polymer { j: x.j, blocks }
}

/// All small sets at the paving's scale that contain the given block, grown
/// by breadth-first extension. Exponential in 2^d; intended for small d.
pub fn enumerate_small_sets(pav: &Paving, containing: u32) -> Vec<Polymer> {
    let cap = 1usize << pav.d;
    let mut seen: BTreeSet<BTreeSet<u32>> = BTreeSet::new();
    let mut frontier: Vec<BTreeSet<u32>> = vec![[containing].into_iter().collect()];
    seen.insert(frontier[0].clone());
    while let Some(set) = frontier.pop() {
        if set.len() == cap {
            continue;
        }
        for &b in &set {
            for c in 0..pav.block_count() as u32 {
                if !set.contains(&c) && pav.touch(b, c) {
                    let mut grown = set.clone();
                    grown.insert(c);
                    if seen.insert(grown.clone()) {
                        frontier.push(grown);
                    }
                }
            }
        }
    }
    seen.into_iter()
        .map(|blocks| Polymer { j: pav.j, blocks })
        .collect()
}

/// Brute-force oracle for X*: union over enumerated small sets meeting X.
pub fn small_set_neighborhood_bruteforce(pav: &Paving, x: &Polymer) -> Polymer {
    let mut acc = Polymer::empty(x.j);
    for &b in &x.blocks {
        for y in enumerate_small_sets(pav, b) {
            acc = acc.union(&y);
        }
    }
    acc
}

/// First scale j at which some small set contains both sites.
pub fn covering_scale(a: usize, b: usize, lat: &TorusLattice) -> usize {
    for j in 0..=lat.num_scales() {
        let pav = Paving::new(lat, j).unwrap();
        let ba = pav.block_of_site(lat, a);
        let bb = pav.block_of_site(lat, b);
        if 1 + pav.block_dist_linf(ba, bb) <= 1 << lat.dimension() {
            return j;
        }
    }
    lat.num_scales()
}

/// Polymer functional: scale-j assignment X ↦ value.
pub struct PolymerFunctional<'a, T> {
    pub j: usize,
    pub eval: Box<dyn Fn(&Polymer) -> T + Sync + 'a>,
    /// claims F(X) = Π_{Y ∈ components(X)} F(Y)
    pub factorizes: bool,
}

impl<'a, T> PolymerFunctional<'a, T> {
    pub fn new(j: usize, f: impl Fn(&Polymer) -> T + Sync + 'a) -> Self {
        PolymerFunctional {
            j,
            eval: Box::new(f),
            factorizes: false,
        }
    }
}

pub const CIRCLE_PRODUCT_CAP: usize = 16;

/// (F ∘ G)(Λ) = Σ_{X ⊆ blocks(Λ)} F(X) G(Λ∖X). Exponential in the block
/// count, capped.
pub fn circle_product<T>(
    f: &PolymerFunctional<T>,
    g: &PolymerFunctional<T>,
    lambda: &Polymer,
    zero: T,
) -> Result<T, GeometryError>
where
    T: Clone + std::ops::Add<Output = T> + std::ops::Mul<Output = T>,
{
    if f.j != g.j {
        return Err(GeometryError::ScaleMismatch(f.j, g.j));
    }
    let blocks: Vec<u32> = lambda.blocks.iter().cloned().collect();
    if blocks.len() > CIRCLE_PRODUCT_CAP {
        return Err(GeometryError::TooManyBlocks {
            blocks: blocks.len(),
            cap: CIRCLE_PRODUCT_CAP,
        });
    }
    let mut acc = zero;
    for mask in 0u32..(1u32 << blocks.len()) {
        let mut xs = BTreeSet::new();
        let mut ys = BTreeSet::new();
        for (k, &b) in blocks.iter().enumerate() {
            if mask & (1 << k) != 0 {
                xs.insert(b);
            } else {
                ys.insert(b);
            }
        }
        let x = Polymer {
            j: lambda.j,
            blocks: xs,
        };
        let y = Polymer {
            j: lambda.j,
            blocks: ys,
        };
        acc = acc + (f.eval)(&x) * (g.eval)(&y);
    }
    Ok(acc)
}

/// Validate the component-factorization claim of a scalar functional on all
/// sub-polymers of `lambda` (exponential; test use only).
pub fn check_factorization(
    pav: &Paving,
    f: &PolymerFunctional<f64>,
    lambda: &Polymer,
    tol: f64,
) -> bool {
    let blocks: Vec<u32> = lambda.blocks.iter().cloned().collect();
    assert!(blocks.len() <= CIRCLE_PRODUCT_CAP);
    for mask in 0u32..(1u32 << blocks.len()) {
        let xs: BTreeSet<u32> = blocks
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &b)| b)
            .collect();
        let x = Polymer {
            j: lambda.j,
            blocks: xs,
        };
        let whole = (f.eval)(&x);
        let product: f64 = components(pav, &x).iter().map(|c| (f.eval)(c)).product();
        if (whole - product).abs() > tol {
            return false;
        }
    }
    true
}
