//! Bipartite Configuration Model fit, null ensemble sampling and link
//! validation.
//!
//! The fit finds fitnesses `x_c`, `y_s` such that the independent link
//! probabilities `p = x y / (1 + x y)` reproduce every observed row and column
//! degree in expectation. Degree sequences on the boundary of the feasible
//! region force some cells to 0 or 1 in every matrix with those degrees; those
//! cells are peeled off first (a tight Gale–Ryser inequality splits the
//! problem into two independent blocks), and the damped fixed point runs only
//! on blocks whose solution is finite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assist::{assist_kernel, AssistMatrix};
use crate::ingest::SectorRef;
use crate::matrix::BinaryMatrix;
use crate::scalar::{Real, Value};

/// Null values within this distance of the observed weight count as ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NullModelError {
    #[error("cannot fit an empty matrix")]
    EmptyMatrix,
    #[error("BiCM solver stopped after {iterations} iterations with residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },
    #[error("at least one null sample is required")]
    NoSamples,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("fit shape {fit:?} does not match the assist matrix axes")]
    ShapeMismatch { fit: (usize, usize) },
}

#[derive(Debug, Clone, Copy)]
pub struct BicmOptions {
    pub damping: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for BicmOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iters: 10_000,
            tolerance: 1e-8,
        }
    }
}

/// Fitted BiCM for one binary matrix.
///
/// Fitness is `None` for a line whose cells are all forced; forced cells carry
/// probability exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BicmFit<T> {
    rows: usize,
    cols: usize,
    pub row_fitness: Vec<Option<T>>,
    pub col_fitness: Vec<Option<T>>,
    link_prob: Vec<T>,
    free: Vec<bool>,
    /// Max absolute difference between expected and observed degrees.
    pub residual: T,
    pub iterations: usize,
}

impl<T: Real> BicmFit<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn prob(&self, r: usize, c: usize) -> T {
        self.link_prob[r * self.cols + c]
    }

    /// False when the cell is forced by the degree sequence.
    pub fn is_free(&self, r: usize, c: usize) -> bool {
        self.free[r * self.cols + c]
    }

    pub fn expected_row_degrees(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| (0..self.cols).fold(T::zero(), |a, c| a + self.prob(r, c)))
            .collect()
    }

    pub fn expected_col_degrees(&self) -> Vec<T> {
        (0..self.cols)
            .map(|c| (0..self.rows).fold(T::zero(), |a, r| a + self.prob(r, c)))
            .collect()
    }

    /// Max absolute degree error against `m`.
    pub fn degree_residual(&self, m: &BinaryMatrix) -> T {
        let rows = self.expected_row_degrees();
        let cols = self.expected_col_degrees();
        let mut res = T::zero();
        for (e, o) in rows.iter().zip(m.row_degrees()) {
            res = res.max((*e - T::from_count(o)).abs());
        }
        for (e, o) in cols.iter().zip(m.col_degrees()) {
            res = res.max((*e - T::from_count(o)).abs());
        }
        res
    }

    /// Draws one matrix with independent Bernoulli cells.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> BinaryMatrix {
        BinaryMatrix::from_fn(self.rows, self.cols, |r, c| {
            rng.random::<f64>() < self.prob(r, c).to_f64_lossy()
        })
    }
}

pub fn fit_bicm<T: Real>(m: &BinaryMatrix) -> Result<BicmFit<T>, NullModelError> {
    fit_bicm_with(m, &BicmOptions::default())
}

pub fn fit_bicm_with<T: Real>(
    m: &BinaryMatrix,
    opts: &BicmOptions,
) -> Result<BicmFit<T>, NullModelError> {
    if m.is_empty() {
        return Err(NullModelError::EmptyMatrix);
    }
    let mut fit = BicmFit {
        rows: m.rows(),
        cols: m.cols(),
        row_fitness: vec![None; m.rows()],
        col_fitness: vec![None; m.cols()],
        link_prob: vec![T::zero(); m.rows() * m.cols()],
        free: vec![false; m.rows() * m.cols()],
        residual: T::zero(),
        iterations: 0,
    };
    let rows: Vec<usize> = (0..m.rows()).collect();
    let cols: Vec<usize> = (0..m.cols()).collect();
    let mut pending = vec![(rows, cols)];
    while let Some((rows, cols)) = pending.pop() {
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        match split_block(m, &rows, &cols) {
            Split::Forced { ones, blocks } => {
                for (r, c) in ones {
                    fit.link_prob[r * fit.cols + c] = T::one();
                }
                pending.extend(blocks);
            }
            Split::Interior => solve_block(m, &rows, &cols, opts, &mut fit)?,
        }
    }
    fit.residual = fit.degree_residual(m);
    let tol = T::from_f64(opts.tolerance).unwrap();
    if !(fit.residual <= tol) {
        return Err(NullModelError::IterationLimit {
            iterations: fit.iterations,
            residual: fit.residual.to_f64_lossy(),
        });
    }
    Ok(fit)
}

enum Split {
    Interior,
    Forced {
        ones: Vec<(usize, usize)>,
        blocks: Vec<(Vec<usize>, Vec<usize>)>,
    },
}

/// Looks for a tight Gale–Ryser inequality inside the block.
///
/// With rows sorted by degree, `Σ_{i<k} d_i = Σ_c min(u_c, k)` means the top
/// `k` rows are full on every column with `u_c ≥ k` and the remaining rows
/// are empty on every column with `u_c ≤ k`.
fn split_block(m: &BinaryMatrix, rows: &[usize], cols: &[usize]) -> Split {
    let d: Vec<usize> = rows
        .iter()
        .map(|&r| cols.iter().filter(|&&c| m.get(r, c)).count())
        .collect();
    let u: Vec<usize> = cols
        .iter()
        .map(|&c| rows.iter().filter(|&&r| m.get(r, c)).count())
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| d[b].cmp(&d[a]).then(a.cmp(&b)));

    let mut lhs = 0usize;
    for k in 0..=rows.len() {
        if k > 0 {
            lhs += d[order[k - 1]];
        }
        let rhs: usize = u.iter().map(|&uc| uc.min(k)).sum();
        debug_assert!(lhs <= rhs);
        if lhs != rhs {
            continue;
        }
        let top: Vec<usize> = order[..k].iter().map(|&i| rows[i]).collect();
        let bottom: Vec<usize> = order[k..].iter().map(|&i| rows[i]).collect();
        let high: Vec<usize> = cols.iter().zip(&u).filter(|(_, &uc)| uc >= k).map(|(&c, _)| c).collect();
        let low: Vec<usize> = cols.iter().zip(&u).filter(|(_, &uc)| uc <= k).map(|(&c, _)| c).collect();
        if top.len() * high.len() + bottom.len() * low.len() == 0 {
            continue;
        }
        let ones = top.iter().flat_map(|&r| high.iter().map(move |&c| (r, c))).collect();
        let strictly_low: Vec<usize> = cols.iter().zip(&u).filter(|(_, &uc)| uc < k).map(|(&c, _)| c).collect();
        let strictly_high: Vec<usize> = cols.iter().zip(&u).filter(|(_, &uc)| uc > k).map(|(&c, _)| c).collect();
        return Split::Forced {
            ones,
            blocks: vec![(top, strictly_low), (bottom, strictly_high)],
        };
    }
    Split::Interior
}

/// Damped fixed point `x_r ← d_r / Σ_c y_c / (1 + x_r y_c)` (and symmetrically
/// for columns) on a block with an interior degree sequence.
fn solve_block<T: Real>(
    m: &BinaryMatrix,
    rows: &[usize],
    cols: &[usize],
    opts: &BicmOptions,
    fit: &mut BicmFit<T>,
) -> Result<(), NullModelError> {
    let d: Vec<T> = rows
        .iter()
        .map(|&r| T::from_count(cols.iter().filter(|&&c| m.get(r, c)).count()))
        .collect();
    let u: Vec<T> = cols
        .iter()
        .map(|&c| T::from_count(rows.iter().filter(|&&r| m.get(r, c)).count()))
        .collect();
    let links = d.iter().fold(T::zero(), |a, &b| a + b);
    let scale = links.sqrt();
    let mut x: Vec<T> = d.iter().map(|&v| v / scale).collect();
    let mut y: Vec<T> = u.iter().map(|&v| v / scale).collect();
    let damping = T::from_f64(opts.damping).unwrap();
    let keep = T::one() - damping;
    let tol = T::from_f64(opts.tolerance).unwrap();
    // Stop a little below the requested tolerance so the full-matrix residual,
    // summed in a different order, still meets it.
    let inner_tol = tol * T::from_f64(0.25).unwrap();

    let mut row_sum = vec![T::zero(); rows.len()];
    let mut col_sum = vec![T::zero(); cols.len()];
    let mut iterations = 0;
    loop {
        row_sum.iter_mut().for_each(|v| *v = T::zero());
        col_sum.iter_mut().for_each(|v| *v = T::zero());
        for (i, &xr) in x.iter().enumerate() {
            for (j, &yc) in y.iter().enumerate() {
                let xy = xr * yc;
                let p = xy / (T::one() + xy);
                row_sum[i] = row_sum[i] + p;
                col_sum[j] = col_sum[j] + p;
            }
        }
        let residual = row_sum
            .iter()
            .zip(&d)
            .chain(col_sum.iter().zip(&u))
            .fold(T::zero(), |acc, (&e, &o)| acc.max((e - o).abs()));
        if residual <= inner_tol || iterations >= opts.max_iters {
            break;
        }
        iterations += 1;
        // row_sum / x_r = Σ_c y_c / (1 + x_r y_c)
        for i in 0..x.len() {
            x[i] = keep * x[i] + damping * d[i] * x[i] / row_sum[i];
        }
        for j in 0..y.len() {
            y[j] = keep * y[j] + damping * u[j] * y[j] / col_sum[j];
        }
    }
    fit.iterations = fit.iterations.max(iterations);

    for (i, &r) in rows.iter().enumerate() {
        fit.row_fitness[r] = Some(x[i]);
        for (j, &c) in cols.iter().enumerate() {
            let xy = x[i] * y[j];
            fit.link_prob[r * fit.cols + c] = xy / (T::one() + xy);
            fit.free[r * fit.cols + c] = true;
        }
    }
    for (j, &c) in cols.iter().enumerate() {
        fit.col_fitness[c] = Some(y[j]);
    }
    Ok(())
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The `index`-th null pair; depends only on `(seed, index)`.
pub fn sample_pair<T: Real>(
    fit_t: &BicmFit<T>,
    fit_t_delta: &BicmFit<T>,
    seed: u64,
    index: u64,
) -> (BinaryMatrix, BinaryMatrix) {
    let mut rng = sample_rng(seed, index);
    let a = fit_t.sample(&mut rng);
    let b = fit_t_delta.sample(&mut rng);
    (a, b)
}

/// Independent null pairs for the two years, reproducible per sample index.
pub fn sample_null<'a, T: Real>(
    fit_t: &'a BicmFit<T>,
    fit_t_delta: &'a BicmFit<T>,
    n_samples: usize,
    seed: u64,
) -> Result<impl Iterator<Item = (BinaryMatrix, BinaryMatrix)> + 'a, NullModelError> {
    if n_samples == 0 {
        return Err(NullModelError::NoSamples);
    }
    Ok((0..n_samples as u64).map(move |i| sample_pair(fit_t, fit_t_delta, seed, i)))
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub n_samples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Benjamini–Hochberg selection at level `alpha` instead of `p ≤ alpha`.
    pub fdr: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            alpha: 0.05,
            seed: 0,
            fdr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult<T> {
    pub source: SectorRef,
    pub target: SectorRef,
    pub observed_b: T,
    pub p_value: f64,
    pub n_samples: usize,
    pub validated: bool,
}

/// Add-one Monte Carlo p-value.
pub fn empirical_p_value(at_least_as_large: usize, n_samples: usize) -> f64 {
    (1 + at_least_as_large) as f64 / (1 + n_samples) as f64
}

/// Right-tail test of every defined assist weight against the BiCM ensemble.
///
/// Each null sample recomputes the assist matrix with its own ubiquities and
/// diversifications; undefined null rows count as zero. Samples are
/// processed in parallel and reduced by integer sums, so the result does not
/// depend on the thread count. Passing the same fit for both years draws a
/// single matrix per sample and uses it on both sides, matching a
/// contemporaneous observation.
pub fn validate<T: Value, F: Real>(
    observed: &AssistMatrix<T>,
    fit_t: &BicmFit<F>,
    fit_t_delta: &BicmFit<F>,
    opts: &ValidationOptions,
) -> Result<Vec<ValidationResult<T>>, NullModelError> {
    if opts.n_samples == 0 {
        return Err(NullModelError::NoSamples);
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(NullModelError::BadAlpha(opts.alpha));
    }
    let max_index = observed
        .source_index
        .iter()
        .chain(&observed.target_index)
        .copied()
        .max()
        .unwrap_or(0);
    for fit in [fit_t, fit_t_delta] {
        if max_index >= fit.cols() || fit.rows() != observed.diversification.len() {
            return Err(NullModelError::ShapeMismatch {
                fit: (fit.rows(), fit.cols()),
            });
        }
    }

    let shared = std::ptr::eq(fit_t, fit_t_delta);
    let ns = observed.n_sources();
    let nt = observed.n_targets();
    let obs: Vec<f64> = (0..ns)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .map(|(i, j)| observed.get(i, j).map_or(f64::NAN, |v| v.to_f64_lossy()))
        .collect();

    let counts = (0..opts.n_samples as u64)
        .into_par_iter()
        .fold(
            || vec![0usize; ns * nt],
            |mut acc, i| {
                let (null_b, ..) = if shared {
                    let a = fit_t.sample(&mut sample_rng(opts.seed, i));
                    assist_kernel::<f64>(&a, &a, &observed.source_index, &observed.target_index)
                } else {
                    let (a, b) = sample_pair(fit_t, fit_t_delta, opts.seed, i);
                    assist_kernel::<f64>(&a, &b, &observed.source_index, &observed.target_index)
                };
                for ((count, &nb), &ob) in acc.iter_mut().zip(&null_b).zip(&obs) {
                    if nb + TIE_EPS >= ob {
                        *count += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0usize; ns * nt],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let mut results = Vec::new();
    for i in 0..ns {
        for j in 0..nt {
            let Some(b) = observed.get(i, j) else { continue };
            let p_value = empirical_p_value(counts[i * nt + j], opts.n_samples);
            results.push(ValidationResult {
                source: observed.sources[i].clone(),
                target: observed.targets[j].clone(),
                observed_b: b,
                p_value,
                n_samples: opts.n_samples,
                validated: p_value <= opts.alpha,
            });
        }
    }
    if opts.fdr {
        apply_fdr(&mut results, opts.alpha);
    }
    Ok(results)
}

/// Benjamini–Hochberg step-up selection.
fn apply_fdr<T>(results: &mut [ValidationResult<T>], alpha: f64) {
    let m = results.len();
    let mut ps: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    ps.sort_by(f64::total_cmp);
    let cutoff = ps
        .iter()
        .enumerate()
        .filter(|(k, &p)| p <= (k + 1) as f64 * alpha / m as f64)
        .map(|(_, &p)| p)
        .next_back();
    for r in results.iter_mut() {
        r.validated = cutoff.is_some_and(|c| r.p_value <= c);
    }
}
