//! Gradient-domain (Poisson) fusion of the global and local results.
//!
//! Inside the mask the fused image `R` reproduces the discrete Laplacian of
//! the local result `S_l`; everywhere else `R = S_g`. With the 4-neighbour
//! stencil, each interior pixel `p` satisfies
//!
//! ```text
//! sum_{q in N4(p)} (R_p - R_q) = sum_{q in N4(p)} (S_l,p - S_l,q)
//! ```
//!
//! with `R_q = S_g,q` substituted for every `q` outside the interior. Mask
//! pixels on the image border are boundary, so every interior pixel has four
//! neighbours and the system is symmetric positive definite.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const DEFAULT_TOL: f64 = 1e-8;
const NONE: u32 = u32::MAX;

/// Sparse 5-point system over the interior pixels of a mask.
#[derive(Debug, Clone)]
pub struct LaplacianSystem {
    height: usize,
    width: usize,
    /// Pixel index of each unknown.
    pixels: Vec<usize>,
    /// Unknown index of each pixel, `NONE` outside the interior.
    index: Vec<u32>,
    /// Interior neighbours of each unknown (up, down, left, right), `NONE` if boundary.
    neighbors: Vec<[u32; 4]>,
    diag: Vec<f64>,
    rhs: Vec<f64>,
    /// Starting iterate for CG: the local image on the interior.
    guess: Vec<f64>,
}

impl LaplacianSystem {
    pub fn build(s_g: &Image, s_l: &Image, mask: &Mask) -> Result<Self> {
        s_l.ensure_same_dims(s_g.dims(), "local image")?;
        if mask.dims() != s_g.dims() {
            return Err(Error::shape(
                format!("mask {}x{}", s_g.height(), s_g.width()),
                format!("{}x{}", mask.height(), mask.width()),
            ));
        }
        let (h, w) = s_g.dims();
        let mut index = vec![NONE; h * w];
        let mut pixels = Vec::new();
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                if mask.get(y, x) {
                    index[y * w + x] = pixels.len() as u32;
                    pixels.push(y * w + x);
                }
            }
        }
        let g = s_g.pixels();
        let l = s_l.pixels();
        let n = pixels.len();
        let mut neighbors = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        let mut guess = Vec::with_capacity(n);
        for &p in &pixels {
            let nbrs = [p - w, p + w, p - 1, p + 1];
            let mut row = [NONE; 4];
            let mut b = 0.0;
            for (slot, &q) in nbrs.iter().enumerate() {
                b += l[p] - l[q];
                if index[q] == NONE {
                    b += g[q];
                } else {
                    row[slot] = index[q];
                }
            }
            neighbors.push(row);
            diag.push(4.0);
            rhs.push(b);
            guess.push(l[p]);
        }
        Ok(Self {
            height: h,
            width: w,
            pixels,
            index,
            neighbors,
            diag,
            rhs,
            guess,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.pixels.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn pixel_of(&self, unknown: usize) -> usize {
        self.pixels[unknown]
    }

    pub fn unknown_at(&self, y: usize, x: usize) -> Option<usize> {
        let i = self.index[y * self.width + x];
        (i != NONE).then_some(i as usize)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Interior neighbours of an unknown.
    pub fn neighbors(&self, unknown: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[unknown]
            .iter()
            .filter(|&&j| j != NONE)
            .map(|&j| j as usize)
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, row) in self.neighbors.iter().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &j in row {
                if j != NONE {
                    acc -= x[j as usize];
                }
            }
            y[i] = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative residual `||b - A x|| / ||b||` per iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

impl CgSolution {
    pub fn residual(&self) -> f64 {
        *self.history.last().unwrap_or(&0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient, stopping at relative residual `tol`.
pub fn cg_solve(system: &LaplacianSystem, tol: f64, max_iter: usize) -> Result<CgSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = system.unknowns();
    let b = &system.rhs;
    let b_norm = dot(b, b).sqrt();
    if n == 0 || b_norm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            history: vec![0.0],
        });
    }
    let mut x = system.guess.clone();
    let mut ap = vec![0.0; n];
    system.apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut history = vec![dot(&r, &r).sqrt() / b_norm];
    if history[0] <= tol {
        return Ok(CgSolution {
            x,
            iterations: 0,
            history,
        });
    }
    let inv_diag: Vec<f64> = system.diag.iter().map(|d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        system.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap == 0.0 {
            // The search direction vanished before reaching `tol`: stagnation.
            return Err(Error::NonConvergence {
                iterations: it,
                residual: *history.last().unwrap(),
                history,
            });
        }
        if !(pap > 0.0) {
            return Err(Error::NonFinite(format!(
                "CG curvature {pap} at iteration {it}; system is not positive definite"
            )));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!("CG residual at iteration {it}")));
        }
        if rel <= tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                history,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: *history.last().unwrap(),
        history,
    })
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    /// Unclamped fused image.
    pub image: Image,
    pub iterations: usize,
    pub residual: f64,
    pub unknowns: usize,
}

/// Solves the fusion system without clamping the result.
pub fn poisson_fuse_raw(
    s_g: &Image,
    s_l: &Image,
    mask: &Mask,
    tol: f64,
    max_iter: Option<usize>,
) -> Result<FusionOutcome> {
    let system = LaplacianSystem::build(s_g, s_l, mask)?;
    let n = system.unknowns();
    let solution = cg_solve(&system, tol, max_iter.unwrap_or(10 * n.max(1)))?;
    let mut image = s_g.clone();
    let px = image.pixels_mut();
    for (i, &v) in solution.x.iter().enumerate() {
        px[system.pixel_of(i)] = v;
    }
    Ok(FusionOutcome {
        image,
        iterations: solution.iterations,
        residual: solution.residual(),
        unknowns: n,
    })
}

/// Poisson fusion clamped to `[0, 1]`.
pub fn poisson_fuse(s_g: &Image, s_l: &Image, mask: &Mask, tol: f64) -> Result<Image> {
    Ok(poisson_fuse_raw(s_g, s_l, mask, tol, None)?.image.clamped())
}

/// Merges the two decoded path outputs into one image.
pub trait FusionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn fuse(&self, s_g: &Image, s_l: &Image, mask: &Mask) -> Result<Image>;
}

#[derive(Debug, Clone, Copy)]
pub struct PoissonFusion {
    pub tol: f64,
}

impl Default for PoissonFusion {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL }
    }
}

impl FusionStrategy for PoissonFusion {
    fn name(&self) -> &'static str {
        "poisson"
    }

    fn fuse(&self, s_g: &Image, s_l: &Image, mask: &Mask) -> Result<Image> {
        poisson_fuse(s_g, s_l, mask, self.tol)
    }
}

/// Hard composite: local pixels inside the mask, global pixels outside.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlphaFusion;

impl FusionStrategy for AlphaFusion {
    fn name(&self) -> &'static str {
        "alpha"
    }

    fn fuse(&self, s_g: &Image, s_l: &Image, mask: &Mask) -> Result<Image> {
        s_l.ensure_same_dims(s_g.dims(), "local image")?;
        if mask.dims() != s_g.dims() {
            return Err(Error::shape(format!("{:?}", s_g.dims()), format!("{:?}", mask.dims())));
        }
        let (h, w) = s_g.dims();
        Ok(Image::from_fn(h, w, |y, x| {
            if mask.get(y, x) {
                s_l.get(y, x)
            } else {
                s_g.get(y, x)
            }
        }))
    }
}

/// Ignores the local path.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalOnly;

impl FusionStrategy for GlobalOnly {
    fn name(&self) -> &'static str {
        "none"
    }

    fn fuse(&self, s_g: &Image, s_l: &Image, mask: &Mask) -> Result<Image> {
        s_l.ensure_same_dims(s_g.dims(), "local image")?;
        if mask.dims() != s_g.dims() {
            return Err(Error::shape(format!("{:?}", s_g.dims()), format!("{:?}", mask.dims())));
        }
        Ok(s_g.clone())
    }
}
