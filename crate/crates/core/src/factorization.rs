//! Masked non-negative CP factorization of a [`SparseMaskedTensor`].
//!
//! The model is `x_ijk ≈ Σ_r U[i,r] T[j,r] F[k,r]` with all factor entries
//! non-negative. The objective is half the squared residual over observed
//! cells, observed zeros included:
//!
//! ```text
//! L(U, T, F) = ½ Σ_{(i,j) observed} Σ_k (x_ijk − Σ_r U_ir T_jr F_kr)²
//! ```
//!
//! Its gradient is the masked MTTKRP of the residual tensor with the
//! Khatri-Rao product of the other two factors. Both are accumulated slice
//! by slice over the observed `(i, j)` pairs in `O(|slices| · K · R)`; the
//! dense tensor is never formed.

use std::io::{Read, Write};

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounded::{minimize_nonnegative, BoundedOptions, Method, StopReason};
use crate::error::{Error, Result};
use crate::tensor_builder::SparseMaskedTensor;

/// Non-negative factor matrices `U (I×R)`, `T (J×R)`, `F (K×R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalFactors {
    pub u: Array2<f64>,
    pub t: Array2<f64>,
    pub f: Array2<f64>,
}

impl KruskalFactors {
    pub fn new(u: Array2<f64>, t: Array2<f64>, f: Array2<f64>) -> Result<Self> {
        let r = u.ncols();
        if r == 0 || t.ncols() != r || f.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks differ or are zero: {}, {}, {}",
                u.ncols(),
                t.ncols(),
                f.ncols()
            )));
        }
        Ok(KruskalFactors { u, t, f })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u.nrows(), self.t.nrows(), self.f.nrows())
    }

    fn from_flat(flat: &[f64], dims: (usize, usize, usize), rank: usize) -> Self {
        let (ni, nj, nk) = dims;
        let (a, b) = (ni * rank, (ni + nj) * rank);
        KruskalFactors {
            u: Array2::from_shape_vec((ni, rank), flat[..a].to_vec()).expect("shape"),
            t: Array2::from_shape_vec((nj, rank), flat[a..b].to_vec()).expect("shape"),
            f: Array2::from_shape_vec((nk, rank), flat[b..b + nk * rank].to_vec()).expect("shape"),
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.u.iter().chain(self.t.iter()).chain(self.f.iter()).copied().collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.u
            .iter()
            .chain(self.t.iter())
            .chain(self.f.iter())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `Σ_r U[i,r] T[j,r] F[k,r]`.
pub fn reconstruct(factors: &KruskalFactors, i: usize, j: usize, k: usize) -> Result<f64> {
    let (ni, nj, nk) = factors.dims();
    if i >= ni || j >= nj || k >= nk {
        return Err(Error::IndexOutOfRange(format!("({i}, {j}, {k}) outside {ni}x{nj}x{nk}")));
    }
    Ok((0..factors.rank())
        .map(|r| factors.u[[i, r]] * factors.t[[j, r]] * factors.f[[k, r]])
        .sum())
}

fn check_dims(factors: &KruskalFactors, tensor: &SparseMaskedTensor) -> Result<()> {
    if factors.dims() != tensor.dims() {
        return Err(Error::DimensionMismatch(format!(
            "factors are {:?} but tensor is {:?}",
            factors.dims(),
            tensor.dims()
        )));
    }
    Ok(())
}

/// Loss and (optionally) gradient on the flat `[U | T | F]` layout.
fn loss_and_gradient(
    flat: &[f64],
    dims: (usize, usize, usize),
    rank: usize,
    tensor: &SparseMaskedTensor,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (ni, nj, nk) = dims;
    let (u, rest) = flat.split_at(ni * rank);
    let (t, f) = rest.split_at(nj * rank);
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut a = vec![0.0; rank];
    let mut b = vec![0.0; rank];
    let mut loss = 0.0;
    for sv in tensor.iter_slices() {
        let (ur, tr) = (&u[sv.i * rank..][..rank], &t[sv.j * rank..][..rank]);
        for r in 0..rank {
            a[r] = ur[r] * tr[r];
        }
        b.fill(0.0);
        let mut next = 0;
        for k in 0..nk {
            let x = if next < sv.ks.len() && sv.ks[next] == k {
                next += 1;
                sv.values[next - 1]
            } else {
                0.0
            };
            let fk = &f[k * rank..][..rank];
            let pred: f64 = a.iter().zip(fk).map(|(ar, fr)| ar * fr).sum();
            let resid = pred - x;
            loss += 0.5 * resid * resid;
            if let Some(g) = grad.as_deref_mut() {
                let gf = &mut g[(ni + nj) * rank + k * rank..][..rank];
                for r in 0..rank {
                    gf[r] += resid * a[r];
                    b[r] += resid * fk[r];
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            for r in 0..rank {
                g[sv.i * rank + r] += tr[r] * b[r];
                g[ni * rank + sv.j * rank + r] += ur[r] * b[r];
            }
        }
    }
    loss
}

/// `½ Σ_observed (x_ijk − x̂_ijk)²`.
pub fn masked_loss(factors: &KruskalFactors, tensor: &SparseMaskedTensor) -> Result<f64> {
    check_dims(factors, tensor)?;
    Ok(loss_and_gradient(&factors.to_flat(), factors.dims(), factors.rank(), tensor, None))
}

/// Gradients of [`masked_loss`] with respect to `U`, `T` and `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradient {
    pub u: Array2<f64>,
    pub t: Array2<f64>,
    pub f: Array2<f64>,
}

pub fn masked_gradient(factors: &KruskalFactors, tensor: &SparseMaskedTensor) -> Result<FactorGradient> {
    check_dims(factors, tensor)?;
    let flat = factors.to_flat();
    let mut g = vec![0.0; flat.len()];
    loss_and_gradient(&flat, factors.dims(), factors.rank(), tensor, Some(&mut g));
    let parts = KruskalFactors::from_flat(&g, factors.dims(), factors.rank());
    Ok(FactorGradient {
        u: parts.u,
        t: parts.t,
        f: parts.f,
    })
}

/// Relative reconstruction error over the observed cells of `tensor`:
/// `‖x − x̂‖ / ‖x‖`.
pub fn relative_error(factors: &KruskalFactors, tensor: &SparseMaskedTensor) -> Result<f64> {
    let loss = masked_loss(factors, tensor)?;
    let norm_sq = tensor.observed_norm_sq();
    if norm_sq == 0.0 {
        return Ok(if loss == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((2.0 * loss / norm_sq).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub rank: usize,
    pub max_iterations: usize,
    /// Relative objective change that ends a run.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: Method,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            rank: 6,
            max_iterations: 500,
            tolerance: 1e-8,
            restarts: 3,
            seed: 0,
            optimizer: Method::QuasiNewtonBounded,
        }
    }
}

impl FitOptions {
    pub fn with_rank(rank: usize) -> Self {
        FitOptions {
            rank,
            ..Default::default()
        }
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub restart: usize,
    pub final_loss: Option<f64>,
    pub iterations: usize,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub factors: KruskalFactors,
    pub loss: f64,
    pub iterations: usize,
    pub best_restart: usize,
    pub runs: Vec<RunSummary>,
    /// Loss after every accepted step of the winning run.
    pub history: Vec<f64>,
}

/// Uniform `[0, 1)` factors rescaled so that the reconstruction norm over
/// observed cells equals the observed data norm.
fn initial_factors(tensor: &SparseMaskedTensor, rank: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (ni, nj, nk) = tensor.dims();
    let mut flat: Vec<f64> = (0..(ni + nj + nk) * rank).map(|_| rng.random::<f64>()).collect();
    let data_sq = tensor.observed_norm_sq();
    let empty = SparseMaskedTensor::from_parts(tensor.dims(), tensor.observed_slices().iter().copied(), [])
        .expect("observed slices of a valid tensor");
    let recon_sq = 2.0 * loss_and_gradient(&flat, tensor.dims(), rank, &empty, None);
    if data_sq > 0.0 && recon_sq > 0.0 {
        let scale = (data_sq / recon_sq).sqrt().cbrt();
        flat.iter_mut().for_each(|v| *v *= scale);
    }
    flat
}

/// Fits a rank-`options.rank` non-negative CP model to the observed cells.
///
/// Runs `options.restarts` independent fits from random non-negative
/// starting points and keeps the one with the lowest final loss.
pub fn factorize(tensor: &SparseMaskedTensor, options: &FitOptions) -> Result<Fit> {
    if tensor.n_observed_slices() == 0 {
        return Err(Error::EmptyObservation);
    }
    if options.rank == 0 {
        return Err(Error::InvalidConfig("rank must be at least 1".into()));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    if options.restarts == 0 || options.max_iterations == 0 {
        return Err(Error::InvalidConfig("restarts and max_iterations must be positive".into()));
    }
    let (ni, nj, nk) = tensor.dims();
    if options.rank > ni.min(nj).min(nk) {
        warn!("rank {} exceeds the smallest tensor mode ({ni}x{nj}x{nk})", options.rank);
    }
    let dims = tensor.dims();
    let rank = options.rank;
    let bounded = BoundedOptions {
        method: options.optimizer,
        max_iterations: options.max_iterations,
        tolerance: options.tolerance,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<Fit> = None;
    let mut runs = Vec::with_capacity(options.restarts);
    for restart in 0..options.restarts {
        let x0 = initial_factors(tensor, rank, &mut rng);
        let objective = |x: &[f64], g: &mut [f64]| loss_and_gradient(x, dims, rank, tensor, Some(g));
        match minimize_nonnegative(objective, x0, &bounded) {
            Ok(res) if res.value.is_finite() => {
                runs.push(RunSummary {
                    restart,
                    final_loss: Some(res.value),
                    iterations: res.iterations,
                    stop: Some(res.stop),
                });
                if best.as_ref().is_none_or(|b| res.value < b.loss) {
                    best = Some(Fit {
                        factors: KruskalFactors::from_flat(&res.x, dims, rank),
                        loss: res.value,
                        iterations: res.iterations,
                        best_restart: restart,
                        runs: Vec::new(),
                        history: res.history,
                    });
                }
            }
            Ok(_) | Err(_) => {
                warn!("restart {restart} produced a non-finite loss; skipping");
                runs.push(RunSummary {
                    restart,
                    final_loss: None,
                    iterations: 0,
                    stop: None,
                });
            }
        }
    }
    let mut fit = best.ok_or_else(|| Error::OptimizationFailed("every restart failed".into()))?;
    fit.runs = runs;
    Ok(fit)
}

/// Randomly moves `fraction` of the observed slices into a held-out tensor.
/// A slice is held out only if its user and its version each keep another
/// observed slice in the fit part, so every held-out slice stays
/// predictable; fewer slices are held out when too few qualify.
/// Returns `(fit_part, held_out)`.
pub fn holdout_slices(
    tensor: &SparseMaskedTensor,
    fraction: f64,
    seed: u64,
) -> Result<(SparseMaskedTensor, SparseMaskedTensor)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let (ni, nj, _) = tensor.dims();
    let mut order: Vec<(usize, usize)> = tensor.observed_slices().to_vec();
    let mut user_left = vec![0usize; ni];
    let mut version_left = vec![0usize; nj];
    for &(i, j) in &order {
        user_left[i] += 1;
        version_left[j] += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_hold = ((order.len() as f64 * fraction).round() as usize).max(1);
    let mut held: Vec<(usize, usize)> = Vec::with_capacity(n_hold);
    for &(i, j) in &order {
        if held.len() == n_hold {
            break;
        }
        if user_left[i] > 1 && version_left[j] > 1 {
            user_left[i] -= 1;
            version_left[j] -= 1;
            held.push((i, j));
        }
    }
    if held.is_empty() {
        return Err(Error::InvalidTensor("no slice can be held out without orphaning a user or version".into()));
    }
    if held.len() < n_hold {
        warn!("held out {} of the {n_hold} requested slices", held.len());
    }
    held.sort_unstable();
    let is_held = |i: usize, j: usize| held.binary_search(&(i, j)).is_ok();
    Ok((tensor.retain_slices(|i, j| !is_held(i, j)), tensor.retain_slices(is_held)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSelectionOptions {
    /// Relative slack around the best score within which smaller ranks win.
    pub tolerance: f64,
    pub direction: ScoreDirection,
}

impl Default for RankSelectionOptions {
    fn default() -> Self {
        RankSelectionOptions {
            tolerance: 0.005,
            direction: ScoreDirection::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub rank: usize,
    pub score: Option<f64>,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub chosen: usize,
    pub best_score: f64,
    pub scores: Vec<RankScore>,
}

/// Fits every candidate rank and returns the smallest one whose score is
/// within `selection.tolerance` (relative) of the best score.
///
/// A rank whose fit or evaluation fails is skipped with a warning.
pub fn select_rank<E>(
    tensor: &SparseMaskedTensor,
    candidates: &[usize],
    fit: &FitOptions,
    selection: &RankSelectionOptions,
    mut evaluator: E,
) -> Result<RankSelection>
where
    E: FnMut(&KruskalFactors) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::RankSelection("no candidate ranks".into()));
    }
    let mut ranks = candidates.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    let mut scores = Vec::with_capacity(ranks.len());
    for &rank in &ranks {
        let opts = FitOptions { rank, ..*fit };
        let outcome = factorize(tensor, &opts).and_then(|f| {
            let s = evaluator(&f.factors)?;
            if s.is_finite() {
                Ok((s, f.loss))
            } else {
                Err(Error::RankSelection(format!("non-finite score {s}")))
            }
        });
        match outcome {
            Ok((score, loss)) => {
                log::info!("rank {rank}: score {score}");
                scores.push(RankScore {
                    rank,
                    score: Some(score),
                    loss: Some(loss),
                });
            }
            Err(e) => {
                warn!("rank {rank} skipped: {e}");
                scores.push(RankScore {
                    rank,
                    score: None,
                    loss: None,
                });
            }
        }
    }
    let valid: Vec<(usize, f64)> = scores.iter().filter_map(|s| s.score.map(|v| (s.rank, v))).collect();
    let best = match selection.direction {
        ScoreDirection::HigherIsBetter => valid.iter().map(|v| v.1).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v)))),
        ScoreDirection::LowerIsBetter => valid.iter().map(|v| v.1).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v)))),
    }
    .ok_or_else(|| Error::RankSelection("every candidate rank failed".into()))?;
    let slack = selection.tolerance * best.abs();
    let chosen = valid
        .iter()
        .find(|(_, s)| match selection.direction {
            ScoreDirection::HigherIsBetter => *s >= best - slack,
            ScoreDirection::LowerIsBetter => *s <= best + slack,
        })
        .map(|v| v.0)
        .expect("the best rank always qualifies");
    Ok(RankSelection {
        chosen,
        best_score: best,
        scores,
    })
}

/// Evaluator scoring factors by `1 − relative error` on held-out slices.
pub fn reconstruction_evaluator(held_out: &SparseMaskedTensor) -> impl FnMut(&KruskalFactors) -> Result<f64> + '_ {
    move |factors| Ok(1.0 - relative_error(factors, held_out)?)
}

/// Writes one factor matrix as CSV with header `id,c0,…,c{R-1}`.
pub fn write_factor_csv<W: Write>(matrix: &Array2<f64>, ids: &[String], sink: W) -> Result<()> {
    if ids.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for {} factor rows",
            ids.len(),
            matrix.nrows()
        )));
    }
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string()];
    header.extend((0..matrix.ncols()).map(|r| format!("c{r}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(matrix.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a factor CSV written by [`write_factor_csv`].
pub fn read_factor_csv<R: Read>(source: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?.clone();
    let rank = header.len().saturating_sub(1);
    if rank == 0 || &header[0] != "id" || header.iter().skip(1).enumerate().any(|(r, h)| h != format!("c{r}")) {
        return Err(Error::Parse {
            line: 1,
            message: "factor header must be id,c0,...".into(),
        });
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != rank + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields", rank + 1),
            });
        }
        ids.push(row[0].to_string());
        for field in row.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad factor value {field:?}"),
            })?;
            values.push(v);
        }
    }
    let n = ids.len();
    Ok((ids, Array2::from_shape_vec((n, rank), values).expect("shape")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reconstruct_rank_one_ones() {
        let f = KruskalFactors::new(Array2::ones((2, 1)), Array2::ones((3, 1)), Array2::ones((4, 1))).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(reconstruct(&f, i, j, k).unwrap(), 1.0);
                }
            }
        }
        assert!(reconstruct(&f, 2, 0, 0).is_err());
    }

    #[test]
    fn reconstruct_zero_row_annihilates() {
        let u = array![[0.0, 0.0], [1.0, 2.0]];
        let f = KruskalFactors::new(u, Array2::ones((2, 2)), Array2::ones((2, 2))).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert_eq!(reconstruct(&f, 0, j, k).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_cell_scalar_gradient() {
        // One observed slice with one champion: grad_U = (u t f - x) t f.
        let (u, t, f, x) = (0.7, 1.3, 0.4, 0.25);
        let factors = KruskalFactors::new(array![[u]], array![[t]], array![[f]]).unwrap();
        let tensor = SparseMaskedTensor::from_parts((1, 1, 1), [(0, 0)], [(0, 0, 0, x)]).unwrap();
        let g = masked_gradient(&factors, &tensor).unwrap();
        let resid = u * t * f - x;
        assert!((g.u[[0, 0]] - resid * t * f).abs() < 1e-15);
        assert!((g.t[[0, 0]] - resid * u * f).abs() < 1e-15);
        assert!((g.f[[0, 0]] - resid * u * t).abs() < 1e-15);
        assert!((masked_loss(&factors, &tensor).unwrap() - 0.5 * resid * resid).abs() < 1e-15);
    }

    #[test]
    fn empty_observation_loss_is_zero_and_fit_errors() {
        let factors = KruskalFactors::new(Array2::ones((2, 1)), Array2::ones((2, 1)), Array2::ones((2, 1))).unwrap();
        let tensor = SparseMaskedTensor::from_parts((2, 2, 2), [], []).unwrap();
        assert_eq!(masked_loss(&factors, &tensor).unwrap(), 0.0);
        assert!(matches!(factorize(&tensor, &FitOptions::with_rank(1)), Err(Error::EmptyObservation)));
    }

    #[test]
    fn dimension_mismatch() {
        let factors = KruskalFactors::new(Array2::ones((2, 1)), Array2::ones((2, 1)), Array2::ones((3, 1))).unwrap();
        let tensor = SparseMaskedTensor::from_parts((2, 2, 2), [], []).unwrap();
        assert!(matches!(masked_loss(&factors, &tensor), Err(Error::DimensionMismatch(_))));
        assert!(matches!(masked_gradient(&factors, &tensor), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn select_rank_singleton_and_tie_break() {
        let tensor = SparseMaskedTensor::from_dense_masked((3, 3, 3), &[0.5; 27], &[true; 9]).unwrap();
        let fit = FitOptions {
            restarts: 1,
            max_iterations: 20,
            ..Default::default()
        };
        let sel = select_rank(&tensor, &[2], &fit, &RankSelectionOptions::default(), |_| Ok(0.3)).unwrap();
        assert_eq!(sel.chosen, 2);

        // 0.999 is within 0.5% of 1.0, so rank 1 wins over rank 2.
        let sel = select_rank(&tensor, &[2, 1, 3], &fit, &RankSelectionOptions::default(), |f| {
            Ok(match f.rank() {
                1 => 0.999,
                2 => 1.0,
                _ => 0.5,
            })
        })
        .unwrap();
        assert_eq!(sel.chosen, 1);
        assert_eq!(sel.best_score, 1.0);

        let sel = select_rank(
            &tensor,
            &[1, 2],
            &fit,
            &RankSelectionOptions {
                tolerance: 0.005,
                direction: ScoreDirection::LowerIsBetter,
            },
            |f| if f.rank() == 1 { Err(Error::RankSelection("boom".into())) } else { Ok(2.0) },
        )
        .unwrap();
        assert_eq!(sel.chosen, 2);
        assert_eq!(sel.scores[0].score, None);

        assert!(select_rank(&tensor, &[1], &fit, &RankSelectionOptions::default(), |_| Err(
            Error::RankSelection("x".into())
        ))
        .is_err());
        assert!(select_rank(&tensor, &[], &fit, &RankSelectionOptions::default(), |_| Ok(1.0)).is_err());
    }

    #[test]
    fn factor_csv_roundtrip() {
        let m = array![[0.5, 1.25], [0.0, 3.0]];
        let ids = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_factor_csv(&m, &ids, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,c0,c1\n"));
        let (ids2, m2) = read_factor_csv(buf.as_slice()).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(m2, m);
    }

    #[test]
    fn holdout_partitions_slices() {
        let tensor = SparseMaskedTensor::from_dense_masked((4, 5, 2), &[0.5; 40], &[true; 20]).unwrap();
        let (fit, held) = holdout_slices(&tensor, 0.1, 3).unwrap();
        assert_eq!(held.n_observed_slices(), 2);
        assert_eq!(fit.n_observed_slices(), 18);
        for s in held.observed_slices() {
            assert!(!fit.is_observed(s.0, s.1));
            assert!(fit.observed_slices().iter().any(|f| f.0 == s.0));
            assert!(fit.observed_slices().iter().any(|f| f.1 == s.1));
        }
    }

    #[test]
    fn holdout_never_orphans_a_user() {
        let mask: Vec<bool> = (0..20).map(|c| c % 5 == 0 || c < 5).collect();
        let tensor = SparseMaskedTensor::from_dense_masked((4, 5, 2), &[0.5; 40], &mask).unwrap();
        let (fit, held) = holdout_slices(&tensor, 0.5, 1).unwrap();
        assert!(held.n_observed_slices() >= 1);
        for i in 0..4 {
            assert!(fit.observed_slices().iter().any(|f| f.0 == i));
        }
        for j in 0..5 {
            assert!(fit.observed_slices().iter().any(|f| f.1 == j));
        }
    }
}
