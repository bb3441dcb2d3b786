//! Symmetric eigensystems and their rank-one updates.
//!
//! The eigenvalues of `U diag(lambda) U^T + rho v v^T` are the roots of the
//! secular equation `1 + rho * sum_j z_j^2 / (lambda_j - kappa) = 0` with
//! `z = U^T v`. Each root is bracketed by two consecutive poles (or by the
//! extreme pole and `+-inf`). The solver measures the root from the nearer
//! pole, substitutes `w = gamma^(-1/2)` so that the secular function becomes
//! decreasing and convex in `gamma`, and runs Newton from the pole side of the
//! root, where the iterates increase monotonically towards it.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::error::{OfterError, Result};

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-13;
const BISECTION_MAX_ITER: usize = 300;
/// Relative gap below which two eigenvalues are treated as one (deflation).
const TIE_TOL: f64 = 1e-10;
/// Relative size below which a component of `z` is deflated.
const ZERO_Z_TOL: f64 = 1e-14;

/// Eigenvalues sorted descending with the matching eigenvectors as columns.
///
/// `vectors` is `dim x rank`; a full system has `rank == dim`, a truncated
/// (leading) system has fewer columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn new(values: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if values.len() != vectors.ncols() {
            return Err(OfterError::DimensionMismatch {
                expected: vectors.ncols(),
                found: values.len(),
            });
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(OfterError::invalid("eigenvalues must be sorted descending"));
        }
        if values.iter().any(|v| !v.is_finite()) || vectors.iter().any(|v| !v.is_finite()) {
            return Err(OfterError::NonFinite("eigensystem"));
        }
        Ok(EigenSystem { values, vectors })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(&self.values) {
            col *= l;
        }
        &scaled * self.vectors.transpose()
    }

    /// Keep the leading `p` eigenpairs.
    pub fn leading(&self, p: usize) -> EigenSystem {
        let p = p.min(self.rank());
        EigenSystem {
            values: self.values[..p].to_vec(),
            vectors: self.vectors.columns(0, p).into_owned(),
        }
    }

    /// Multiply every eigenvalue by `factor`.
    pub fn scaled(&self, factor: f64) -> EigenSystem {
        EigenSystem {
            values: self.values.iter().map(|v| v * factor).collect(),
            vectors: self.vectors.clone(),
        }
    }

    /// Flip each eigenvector so that its largest-magnitude entry is positive.
    pub fn canonicalize_signs(&mut self) {
        for mut col in self.vectors.column_iter_mut() {
            let pivot = col.iter().copied().fold(0.0f64, |acc, x| {
                if x.abs() > acc.abs() {
                    x
                } else {
                    acc
                }
            });
            if pivot < 0.0 {
                col.neg_mut();
            }
        }
    }

    /// Flip each eigenvector to have a non-negative inner product with the
    /// same-rank column of `reference`.
    pub fn align_signs(&mut self, reference: &DMatrix<f64>) {
        let k = self.rank().min(reference.ncols());
        for j in 0..k {
            if self.vectors.column(j).dot(&reference.column(j)) < 0.0 {
                self.vectors.column_mut(j).neg_mut();
            }
        }
    }
}

/// The perturbation `rho v v^T`; `v` need not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneUpdate {
    pub rho: f64,
    pub v: DVector<f64>,
}

impl RankOneUpdate {
    pub fn new(rho: f64, v: DVector<f64>) -> Result<Self> {
        if !rho.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(OfterError::NonFinite("rank-one update"));
        }
        if !(rho.abs() * v.norm_squared()).is_finite() {
            return Err(OfterError::NonFinite("rank-one update magnitude"));
        }
        Ok(RankOneUpdate { rho, v })
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn full_eig(matrix: &DMatrix<f64>) -> Result<EigenSystem> {
    if !matrix.is_square() {
        return Err(OfterError::DimensionMismatch {
            expected: matrix.nrows(),
            found: matrix.ncols(),
        });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("matrix"));
    }
    let scale = matrix.amax().max(1.0);
    let asym = (matrix - matrix.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(OfterError::Asymmetric(asym));
    }
    diagnostics::record_full_eig();
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // Stable sort: ties keep their original index order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(order.iter());
    EigenSystem::new(values, vectors)
}

/// One root of a secular equation stored relative to a pole so that the
/// differences `pole_j - root` stay accurate near that pole.
#[derive(Debug, Clone, Copy)]
struct Root {
    origin: usize,
    offset: f64,
}

impl Root {
    fn value(&self, poles: &[f64]) -> f64 {
        poles[self.origin] + self.offset
    }

    /// `poles[j] - root`.
    fn gap_to(&self, poles: &[f64], j: usize) -> f64 {
        (poles[j] - poles[self.origin]) - self.offset
    }
}

/// The convexified secular function around one origin pole.
///
/// With `kappa = pole[origin] + rho * sign * w` the equation becomes
/// `G(gamma) = sign + sum_j weight_j / (e_j - gamma^(-1/2)) = 0`, where
/// `e_j = sign * (pole_j - pole[origin]) / rho`. `G` decreases and is convex
/// in `gamma` on the bracket, so Newton from a point with `G >= 0` increases
/// monotonically to the root.
struct Convexified<'a> {
    shifted: Vec<f64>,
    weights: &'a [f64],
    sign: f64,
}

impl Convexified<'_> {
    /// Returns `(G, dG/dgamma, sum of |terms|)` at `gamma`.
    fn eval(&self, gamma: f64) -> (f64, f64, f64) {
        let w = gamma.powf(-0.5);
        let mut g = self.sign;
        let mut dsum = 0.0;
        let mut mag = 1.0;
        for (&e, &wt) in self.shifted.iter().zip(self.weights) {
            let q = wt / (e - w);
            g += q;
            mag += q.abs();
            dsum += q / (e - w);
        }
        let dg = -0.5 * gamma.powf(-1.5) * dsum;
        (g, dg, mag)
    }

    fn value_at_w(&self, w: f64) -> f64 {
        self.sign
            + self
                .shifted
                .iter()
                .zip(self.weights)
                .map(|(&e, &wt)| wt / (e - w))
                .sum::<f64>()
    }
}

/// Diagnostics from one root solve.
#[derive(Debug, Clone, Default)]
pub struct NewtonTrace {
    /// `|G(gamma_k)|` for every Newton iterate, starting point included.
    pub residuals: Vec<f64>,
    pub used_bisection: bool,
}

/// Solve for the `i`-th root counted in increasing `pole / rho` order.
///
/// `poles` must be distinct and `weights` strictly positive. `order` is the
/// permutation sorting `poles / rho` ascending.
fn solve_one(
    poles: &[f64],
    weights: &[f64],
    rho: f64,
    order: &[usize],
    i: usize,
    trace: Option<&mut NewtonTrace>,
) -> Result<Root> {
    let n = order.len();
    let a = order[i];
    let (origin, sign, w_start) = if i + 1 < n {
        let b = order[i + 1];
        let gap = (poles[b] - poles[a]) / rho;
        let mid = rho * gap * 0.5;
        let f_mid = 1.0
            + rho
                * weights
                    .iter()
                    .enumerate()
                    .map(|(j, &wt)| wt / ((poles[j] - poles[a]) - mid))
                    .sum::<f64>();
        if f_mid >= 0.0 {
            (a, 1.0, gap * 0.5)
        } else {
            (b, -1.0, gap * 0.5)
        }
    } else {
        let total: f64 = weights.iter().sum();
        (a, 1.0, total)
    };

    let func = Convexified {
        shifted: poles
            .iter()
            .map(|&p| sign * (p - poles[origin]) / rho)
            .collect(),
        weights,
        sign,
    };

    let mut local = NewtonTrace::default();
    let mut gamma = w_start.powi(-2);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (g, dg, mag) = func.eval(gamma);
        local.residuals.push(g.abs());
        if !g.is_finite() || !dg.is_finite() {
            break;
        }
        if g.abs() < NEWTON_TOL || g.abs() <= 8.0 * f64::EPSILON * mag || g <= 0.0 {
            converged = true;
            break;
        }
        let next = gamma - g / dg;
        if !(next > gamma) || !next.is_finite() {
            // No further progress representable in floating point.
            converged = g.abs() <= 1e3 * f64::EPSILON * mag;
            break;
        }
        if (next - gamma) <= 2.0 * f64::EPSILON * gamma {
            gamma = next;
            let (g, _, _) = func.eval(gamma);
            local.residuals.push(g.abs());
            converged = true;
            break;
        }
        gamma = next;
    }

    let mut w = gamma.powf(-0.5);
    if !converged {
        // Bisection on w: G is increasing in w, root lies in (0, w].
        local.used_bisection = true;
        let (mut lo, mut hi) = (0.0f64, w.max(w_start));
        if func.value_at_w(hi) < 0.0 {
            hi = w_start;
        }
        for _ in 0..BISECTION_MAX_ITER {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if func.value_at_w(m) < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        w = 0.5 * (lo + hi);
        if !w.is_finite() || w <= 0.0 {
            return Err(OfterError::Convergence(format!(
                "secular root {i} of {n} did not converge"
            )));
        }
    }
    if let Some(t) = trace {
        *t = local;
    }
    Ok(Root {
        origin,
        offset: rho * sign * w,
    })
}

fn ascending_order(poles: &[f64], rho: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..poles.len()).collect();
    if rho > 0.0 {
        order.sort_by(|&a, &b| poles[a].total_cmp(&poles[b]));
    } else {
        order.sort_by(|&a, &b| poles[b].total_cmp(&poles[a]));
    }
    order
}

/// All roots for distinct poles and positive weights.
fn solve_all(poles: &[f64], weights: &[f64], rho: f64) -> Result<Vec<Root>> {
    diagnostics::record_secular_solve();
    let order = ascending_order(poles, rho);
    (0..poles.len())
        .map(|i| solve_one(poles, weights, rho, &order, i, None))
        .collect()
}

/// Newton residual trace for one root of `1 + rho sum z_j^2/(lambda_j - kappa)`.
///
/// `root` counts roots in ascending `lambda / rho` order. Poles must be
/// distinct and `z` free of zeros.
pub fn newton_trace(eigenvalues: &[f64], z: &[f64], rho: f64, root: usize) -> Result<NewtonTrace> {
    let weights: Vec<f64> = z.iter().map(|v| v * v).collect();
    let order = ascending_order(eigenvalues, rho);
    let mut trace = NewtonTrace::default();
    solve_one(eigenvalues, &weights, rho, &order, root, Some(&mut trace))?;
    Ok(trace)
}

/// Result of deflating a secular problem: which poles enter the root solve
/// (with their merged weights) and which are eigenvalues already.
struct Deflation {
    /// Indices (into the original poles) that remain active.
    active: Vec<usize>,
    /// Merged weights for the active poles.
    weights: Vec<f64>,
    /// Indices that are exact eigenvalues of the updated system.
    deflated: Vec<usize>,
    /// Givens rotations applied to basis columns: `(keep, drop, c, s)`.
    rotations: Vec<(usize, usize, f64, f64)>,
}

fn deflate(poles: &[f64], z: &[f64]) -> Deflation {
    let n = poles.len();
    let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = poles.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie = TIE_TOL * scale;

    let mut zz = z.to_vec();
    let mut deflated = Vec::new();
    let mut rotations = Vec::new();
    let mut candidates: Vec<usize> = Vec::new();
    for j in 0..n {
        if zz[j].abs() < ZERO_Z_TOL * znorm || znorm == 0.0 {
            deflated.push(j);
        } else {
            candidates.push(j);
        }
    }
    candidates.sort_by(|&a, &b| poles[a].total_cmp(&poles[b]).then(a.cmp(&b)));

    let mut active: Vec<usize> = Vec::new();
    for j in candidates {
        if let Some(&k) = active.last() {
            if (poles[j] - poles[k]).abs() <= tie {
                // Rotate the pair so all of z's mass sits on `k`.
                let r = zz[k].hypot(zz[j]);
                let (c, s) = (zz[k] / r, zz[j] / r);
                rotations.push((k, j, c, s));
                zz[k] = r;
                zz[j] = 0.0;
                deflated.push(j);
                continue;
            }
        }
        active.push(j);
    }
    if !rotations.is_empty() {
        warn!(
            "secular update: deflated {} near-repeated eigenvalue(s)",
            rotations.len()
        );
    }
    let weights = active.iter().map(|&j| zz[j] * zz[j]).collect();
    Deflation {
        active,
        weights,
        deflated,
        rotations,
    }
}

/// Roots of `1 + rho sum_i z_i^2 / (lambda_i - kappa) = 0`, sorted descending.
///
/// Components of `z` that vanish and repeated eigenvalues are deflated: the
/// corresponding roots equal the eigenvalue.
pub fn secular_roots(eigenvalues: &[f64], z: &[f64], rho: f64) -> Result<Vec<f64>> {
    if eigenvalues.len() != z.len() {
        return Err(OfterError::DimensionMismatch {
            expected: eigenvalues.len(),
            found: z.len(),
        });
    }
    if rho == 0.0 || !rho.is_finite() {
        return Err(OfterError::invalid("secular equation needs a finite nonzero rho"));
    }
    if eigenvalues.iter().chain(z).any(|v| !v.is_finite()) {
        return Err(OfterError::NonFinite("secular equation inputs"));
    }
    let defl = deflate(eigenvalues, z);
    let poles: Vec<f64> = defl.active.iter().map(|&j| eigenvalues[j]).collect();
    let roots = solve_all(&poles, &defl.weights, rho)?;
    let mut out: Vec<f64> = roots.iter().map(|r| r.value(&poles)).collect();
    out.extend(defl.deflated.iter().map(|&j| eigenvalues[j]));
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// The `m` largest roots of the truncated secular equation
/// `1 + rho (sum_i z_i^2/(lambda_i - kappa) + (1 - sum_i z_i^2)/(mu - kappa)) = 0`,
/// where the discarded directions are represented by the single value `mu`.
/// `z` is the projection of a unit vector onto the retained eigenvectors.
pub fn truncated_secular_roots(
    eigenvalues: &[f64],
    z: &[f64],
    rho: f64,
    mu: f64,
    m: usize,
) -> Result<Vec<f64>> {
    if m > eigenvalues.len() {
        return Err(OfterError::invalid(format!(
            "requested {m} roots from a {}-term equation",
            eigenvalues.len()
        )));
    }
    let tail = (1.0 - z.iter().map(|v| v * v).sum::<f64>()).max(0.0);
    let mut poles = eigenvalues.to_vec();
    let mut zs = z.to_vec();
    if tail > 0.0 {
        poles.push(mu);
        zs.push(tail.sqrt());
    }
    let mut roots = secular_roots(&poles, &zs, rho)?;
    roots.truncate(m);
    Ok(roots)
}

/// Eigenvalues and eigenvectors of a rank-one perturbed system, expressed in
/// a basis `basis` (columns orthonormal) with diagonal `poles` and
/// coordinates `z` of the unit update direction.
fn update_in_basis(
    basis: &DMatrix<f64>,
    poles: &[f64],
    z: &[f64],
    rho: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let defl = deflate(poles, z);
    let mut basis = basis.clone();
    for &(k, j, c, s) in &defl.rotations {
        let uk = basis.column(k).into_owned();
        let uj = basis.column(j).into_owned();
        basis.set_column(k, &(&uk * c + &uj * s));
        basis.set_column(j, &(&uj * c - &uk * s));
    }

    let act_poles: Vec<f64> = defl.active.iter().map(|&j| poles[j]).collect();
    let roots = solve_all(&act_poles, &defl.weights, rho)?;
    let n = act_poles.len();

    // Recompute z from the computed roots (Lowner) so the eigenvectors come
    // out numerically orthogonal.
    let signs: Vec<f64> = defl.active.iter().map(|&j| z_sign(z, &defl, j)).collect();
    let zhat: Vec<f64> = (0..n)
        .map(|j| {
            let mut prod = -roots[j].gap_to(&act_poles, j) / rho;
            for k in 0..n {
                if k == j {
                    continue;
                }
                let num = -roots[k].gap_to(&act_poles, j);
                let den = act_poles[k] - act_poles[j];
                prod *= num / den;
            }
            signs[j] * prod.abs().sqrt()
        })
        .collect();

    let dim = basis.nrows();
    let mut entries: Vec<(f64, usize, DVector<f64>)> = Vec::with_capacity(poles.len());
    for root in &roots {
        let mut u = DVector::<f64>::zeros(dim);
        for (j, &col) in defl.active.iter().enumerate() {
            let coef = zhat[j] / root.gap_to(&act_poles, j);
            u.axpy(coef, &basis.column(col), 1.0);
        }
        let norm = u.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(OfterError::Convergence(
                "degenerate eigenvector from secular update".into(),
            ));
        }
        entries.push((
            root.value(&act_poles),
            defl.active[root.origin],
            u / norm,
        ));
    }
    for &j in &defl.deflated {
        entries.push((poles[j], j, basis.column(j).into_owned()));
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let values = entries.iter().map(|e| e.0).collect();
    let mut vectors = DMatrix::<f64>::zeros(dim, entries.len());
    for (c, e) in entries.iter().enumerate() {
        vectors.set_column(c, &e.2);
    }
    Ok((values, vectors))
}

/// Sign of the merged z component for an active pole.
fn z_sign(z: &[f64], defl: &Deflation, j: usize) -> f64 {
    // Rotations make merged components positive; untouched ones keep sign.
    if defl.rotations.iter().any(|&(k, _, _, _)| k == j) {
        1.0
    } else if z[j] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigensystem of `U diag(lambda) U^T + rho v v^T` from that of `U diag(lambda) U^T`.
///
/// For a full system (`rank == dim`) this is exact up to rounding.
pub fn rank_one_update(system: &EigenSystem, update: &RankOneUpdate) -> Result<EigenSystem> {
    if update.v.len() != system.dim() {
        return Err(OfterError::DimensionMismatch {
            expected: system.dim(),
            found: update.v.len(),
        });
    }
    let vnorm = update.v.norm();
    if update.rho == 0.0 || vnorm == 0.0 {
        return Ok(system.clone());
    }
    let rho = update.rho * vnorm * vnorm;
    let vhat = &update.v / vnorm;
    let z: Vec<f64> = (system.vectors.transpose() * &vhat).iter().copied().collect();
    let (values, vectors) = update_in_basis(&system.vectors, &system.values, &z, rho)?;
    EigenSystem::new(values, vectors)
}

/// Rank-one update of a leading (truncated) eigensystem.
///
/// The discarded spectrum is modelled as `mu` times the identity on the
/// orthogonal complement of the retained eigenvectors. The update direction
/// is split into its retained part and a unit residual direction, the
/// `(rank+1)`-pole secular equation is solved, and the `rank` largest
/// eigenpairs are kept. Exact when the discarded eigenvalues all equal `mu`.
pub fn truncated_rank_one_update(
    system: &EigenSystem,
    update: &RankOneUpdate,
    mu: f64,
) -> Result<EigenSystem> {
    if update.v.len() != system.dim() {
        return Err(OfterError::DimensionMismatch {
            expected: system.dim(),
            found: update.v.len(),
        });
    }
    let vnorm = update.v.norm();
    if update.rho == 0.0 || vnorm == 0.0 {
        return Ok(system.clone());
    }
    let rho = update.rho * vnorm * vnorm;
    let vhat = &update.v / vnorm;
    let zp = system.vectors.transpose() * &vhat;
    let residual = &vhat - &system.vectors * &zp;
    let rnorm = residual.norm();
    let p = system.rank();

    let mut poles = system.values.clone();
    let mut z: Vec<f64> = zp.iter().copied().collect();
    let basis = if rnorm > 1e-12 && p < system.dim() {
        poles.push(mu);
        z.push(rnorm);
        let mut b = DMatrix::<f64>::zeros(system.dim(), p + 1);
        b.columns_mut(0, p).copy_from(&system.vectors);
        b.set_column(p, &(residual / rnorm));
        b
    } else {
        system.vectors.clone()
    };
    let (values, vectors) = update_in_basis(&basis, &poles, &z, rho)?;
    EigenSystem::new(values[..p].to_vec(), vectors.columns(0, p).into_owned())
}
