//! User × version × champion proportion tensor with a slice-level mask.
//!
//! Cell `(i, j, k)` holds the fraction of user `i`'s matches in version `j`
//! that were played on champion `k`. A `(user, version)` slice is observed
//! when the user played at least one match in that version; every cell of
//! an observed slice is observed, including the zero cells of champions the
//! user did not pick. Only the non-zero values are stored.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data_model::{MatchRecord, UserIndex};
use crate::error::{Error, Result};

/// Sparse 3-way tensor over observed `(i, j)` slices.
///
/// Storage is slice-major: `slices[s]` is the `s`-th observed `(i, j)` pair
/// in lexicographic order and its non-zero entries are
/// `entry_k[ptr[s]..ptr[s + 1]]` / `entry_v[..]`, sorted by `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMaskedTensor {
    dims: (usize, usize, usize),
    slices: Vec<(usize, usize)>,
    ptr: Vec<usize>,
    entry_k: Vec<usize>,
    entry_v: Vec<f64>,
}

/// One observed `(i, j)` slice and its non-zero entries.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    pub i: usize,
    pub j: usize,
    pub ks: &'a [usize],
    pub values: &'a [f64],
}

impl SparseMaskedTensor {
    /// Assembles a tensor from observed slices and entries. Entries must lie
    /// in observed slices, be unique, finite and non-negative. Zero entries
    /// are dropped since observed zeros are implicit.
    pub fn from_parts(
        dims: (usize, usize, usize),
        observed_slices: impl IntoIterator<Item = (usize, usize)>,
        entries: impl IntoIterator<Item = (usize, usize, usize, f64)>,
    ) -> Result<Self> {
        let (ni, nj, nk) = dims;
        let mut by_slice: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
        for (i, j) in observed_slices {
            if i >= ni || j >= nj {
                return Err(Error::IndexOutOfRange(format!("slice ({i}, {j}) outside {ni}x{nj}")));
            }
            by_slice.entry((i, j)).or_default();
        }
        for (i, j, k, v) in entries {
            if i >= ni || j >= nj || k >= nk {
                return Err(Error::IndexOutOfRange(format!(
                    "entry ({i}, {j}, {k}) outside {ni}x{nj}x{nk}"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidTensor(format!("entry ({i}, {j}, {k}) has value {v}")));
            }
            let slice = by_slice
                .get_mut(&(i, j))
                .ok_or_else(|| Error::InvalidTensor(format!("entry ({i}, {j}, {k}) lies in an unobserved slice")))?;
            if slice.insert(k, v).is_some() {
                return Err(Error::InvalidTensor(format!("duplicate entry ({i}, {j}, {k})")));
            }
        }
        let mut t = SparseMaskedTensor {
            dims,
            slices: Vec::with_capacity(by_slice.len()),
            ptr: vec![0],
            entry_k: Vec::new(),
            entry_v: Vec::new(),
        };
        for (ij, cells) in by_slice {
            t.slices.push(ij);
            for (k, v) in cells {
                if v != 0.0 {
                    t.entry_k.push(k);
                    t.entry_v.push(v);
                }
            }
            t.ptr.push(t.entry_k.len());
        }
        Ok(t)
    }

    /// Builds a tensor from a dense row-major `I·J·K` array and an `I·J`
    /// slice mask. Values in unobserved slices are ignored.
    pub fn from_dense_masked(dims: (usize, usize, usize), values: &[f64], slice_mask: &[bool]) -> Result<Self> {
        let (ni, nj, nk) = dims;
        if values.len() != ni * nj * nk || slice_mask.len() != ni * nj {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values and {} mask flags, got {} and {}",
                ni * nj * nk,
                ni * nj,
                values.len(),
                slice_mask.len()
            )));
        }
        let observed: Vec<(usize, usize)> = (0..ni)
            .flat_map(|i| (0..nj).map(move |j| (i, j)))
            .filter(|&(i, j)| slice_mask[i * nj + j])
            .collect();
        let entries: Vec<_> = observed
            .iter()
            .flat_map(|&(i, j)| (0..nk).map(move |k| (i, j, k, values[(i * nj + j) * nk + k])))
            .collect();
        Self::from_parts(dims, observed, entries)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn n_observed_slices(&self) -> usize {
        self.slices.len()
    }

    /// Number of observed cells, zeros included.
    pub fn n_observed_cells(&self) -> usize {
        self.slices.len() * self.dims.2
    }

    pub fn n_nonzeros(&self) -> usize {
        self.entry_v.len()
    }

    pub fn observed_slices(&self) -> &[(usize, usize)] {
        &self.slices
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.slices.binary_search(&(i, j)).is_ok()
    }

    pub fn slice(&self, s: usize) -> SliceView<'_> {
        let (i, j) = self.slices[s];
        let range = self.ptr[s]..self.ptr[s + 1];
        SliceView {
            i,
            j,
            ks: &self.entry_k[range.clone()],
            values: &self.entry_v[range],
        }
    }

    pub fn iter_slices(&self) -> impl Iterator<Item = SliceView<'_>> + '_ {
        (0..self.slices.len()).map(move |s| self.slice(s))
    }

    /// Non-zero entries as `(i, j, k, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.iter_slices()
            .flat_map(|sv| sv.ks.iter().zip(sv.values).map(move |(&k, &v)| (sv.i, sv.j, k, v)))
    }

    /// Value of an observed cell, `None` when the slice is unobserved.
    pub fn value(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let s = self.slices.binary_search(&(i, j)).ok()?;
        let sv = self.slice(s);
        Some(sv.ks.binary_search(&k).map(|p| sv.values[p]).unwrap_or(0.0))
    }

    /// Mask weight `w_ijk`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.is_observed(i, j) {
            1.0
        } else {
            0.0
        }
    }

    /// Sum of squared observed values.
    pub fn observed_norm_sq(&self) -> f64 {
        self.entry_v.iter().map(|v| v * v).sum()
    }

    /// Largest absolute deviation of an observed slice sum from 1.
    pub fn max_slice_sum_deviation(&self) -> f64 {
        self.iter_slices()
            .map(|sv| (sv.values.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Copy keeping only the observed slices accepted by `keep`.
    pub fn retain_slices(&self, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let mut out = SparseMaskedTensor {
            dims: self.dims,
            slices: Vec::new(),
            ptr: vec![0],
            entry_k: Vec::new(),
            entry_v: Vec::new(),
        };
        for sv in self.iter_slices() {
            if keep(sv.i, sv.j) {
                out.slices.push((sv.i, sv.j));
                out.entry_k.extend_from_slice(sv.ks);
                out.entry_v.extend_from_slice(sv.values);
                out.ptr.push(out.entry_k.len());
            }
        }
        out
    }

    /// Writes non-zero entries as `i j k value` lines.
    pub fn write_triplets<W: Write>(&self, mut sink: W) -> Result<()> {
        for (i, j, k, v) in self.entries() {
            writeln!(sink, "{i} {j} {k} {v}")?;
        }
        Ok(())
    }

    /// Writes observed slices as `i j` lines.
    pub fn write_observed<W: Write>(&self, mut sink: W) -> Result<()> {
        for &(i, j) in &self.slices {
            writeln!(sink, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Builds the proportion tensor for `records`.
///
/// `users` maps user ids to rows; `n_versions` and `n_champions` give the
/// other two mode sizes. Records of users missing from `users` are errors.
pub fn build_tensor(
    records: &[MatchRecord],
    users: &UserIndex,
    n_versions: usize,
    n_champions: usize,
) -> Result<SparseMaskedTensor> {
    if records.is_empty() {
        return Err(Error::Empty("no records to build a tensor from".into()));
    }
    let dims = (users.len(), n_versions, n_champions);
    let mut counts: BTreeMap<(usize, usize), BTreeMap<usize, u64>> = BTreeMap::new();
    for r in records {
        let i = users
            .get(&r.user_id)
            .ok_or_else(|| Error::IndexOutOfRange(format!("user {} not in the user index", r.user_id)))?;
        if r.version_index >= n_versions {
            return Err(Error::IndexOutOfRange(format!(
                "version_index {} outside 0..{n_versions}",
                r.version_index
            )));
        }
        if r.champion_id >= n_champions {
            return Err(Error::IndexOutOfRange(format!(
                "champion_id {} outside 0..{n_champions}",
                r.champion_id
            )));
        }
        *counts
            .entry((i, r.version_index))
            .or_default()
            .entry(r.champion_id)
            .or_default() += 1;
    }
    let mut entries = Vec::new();
    for (&(i, j), picks) in &counts {
        let total: u64 = picks.values().sum();
        for (&k, &c) in picks {
            entries.push((i, j, k, c as f64 / total as f64));
        }
    }
    SparseMaskedTensor::from_parts(dims, counts.keys().copied(), entries)
}

/// Fraction of observed cells: `|observed slices| · K / (I · J · K)`.
pub fn density(tensor: &SparseMaskedTensor) -> f64 {
    let (ni, nj, nk) = tensor.dims();
    let total = ni * nj * nk;
    if total == 0 {
        return 0.0;
    }
    tensor.n_observed_cells() as f64 / total as f64
}
