use crate::data::Dataset;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::CnrParams;
use nalgebra::{DMatrix, DVector};

/// Row-compressed sparse matrix holding the derivative rows `p'_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
    // Column-major copy so that `Mᵀ v` is a gather rather than a scatter.
    col_ptr: Vec<usize>,
    col_row: Vec<u32>,
    col_val: Vec<f64>,
}

impl SparseRows {
    fn from_csr(ncols: usize, ptr: Vec<usize>, idx: Vec<u32>, val: Vec<f64>) -> Self {
        let mut col_ptr = vec![0usize; ncols + 1];
        for &j in &idx {
            col_ptr[j as usize + 1] += 1;
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_row = vec![0u32; idx.len()];
        let mut col_val = vec![0.0; idx.len()];
        for (i, r) in ptr.windows(2).enumerate() {
            for e in r[0]..r[1] {
                let slot = &mut next[idx[e] as usize];
                col_row[*slot] = i as u32;
                col_val[*slot] = val[e];
                *slot += 1;
            }
        }
        Self { ncols, ptr, idx, val, col_ptr, col_row, col_val }
    }

    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.ptr[i]..self.ptr[i + 1];
        self.idx[r.clone()].iter().map(|&j| j as usize).zip(self.val[r].iter().copied())
    }

    /// `M w`.
    pub fn mul(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.ncols, "vector length");
        self.ptr
            .windows(2)
            .map(|r| {
                let (idx, val) = (&self.idx[r[0]..r[1]], &self.val[r[0]..r[1]]);
                idx.iter().zip(val).map(|(&j, &v)| v * w[j as usize]).sum()
            })
            .collect()
    }

    /// `Mᵀ v`.
    pub fn tr_mul(&self, v: &[f64]) -> DVector<f64> {
        assert_eq!(v.len(), self.nrows(), "vector length");
        DVector::from_iterator(
            self.ncols,
            self.col_ptr.windows(2).map(|c| {
                let (rows, vals) = (&self.col_row[c[0]..c[1]], &self.col_val[c[0]..c[1]]);
                rows.iter().zip(vals).map(|(&i, &x)| x * v[i as usize]).sum::<f64>()
            }),
        )
    }

    /// `Mᵀ diag(weights) M`.
    pub fn weighted_gram(&self, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for i in 0..self.nrows() {
            let wi = weights(i);
            let r = self.ptr[i]..self.ptr[i + 1];
            let (idx, val) = (&self.idx[r.clone()], &self.val[r]);
            for (a, &ja) in idx.iter().enumerate() {
                for (b, &jb) in idx.iter().enumerate() {
                    g[(ja as usize, jb as usize)] += wi * val[a] * val[b];
                }
            }
        }
        g
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Quadratic and log-barrier data of the fitting objective
/// `wᵀ P w − 2 Σ_i log([P' w]_i)` over `w = [vec_row(A); b]`.
///
/// Rows are `p_i = [h(y_i) ⊗ ψ(x_i); h(y_i)]` and
/// `p'_i = [h'(y_i) ⊗ ψ(x_i); h'(y_i)]`. The matrices may be restricted to a
/// subset of the coordinates of `w`; the remaining coordinates are held at zero.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    dict: Dictionary,
    feature_map: FeatureMap,
    input_dim: usize,
    full_len: usize,
    columns: Vec<usize>,
    gram: DMatrix<f64>,
    deriv: SparseRows,
}

/// Dense rows `p_i` and sparse rows `p'_i` over all coordinates of `w`.
fn design_rows(
    data: &Dataset,
    dict: &Dictionary,
    feature_map: FeatureMap,
) -> (DMatrix<f64>, SparseRows) {
    let dim = dict.dim();
    let k = feature_map.output_dim(data.k());
    let len = dim * (k + 1);
    let n = data.n();
    let mut rows = DMatrix::zeros(n, len);
    let mut ptr = Vec::with_capacity(n + 1);
    let mut idx = Vec::with_capacity(n * (k + 1));
    let mut val = Vec::with_capacity(n * (k + 1));
    ptr.push(0);
    let mut h = vec![0.0; dim];
    let mut psi = Vec::with_capacity(k);
    for i in 0..n {
        let y = data.y()[i];
        feature_map.apply_into(data.row(i), &mut psi);
        dict.eval_into(y, &mut h);
        for (r, &hr) in h.iter().enumerate() {
            if hr != 0.0 {
                for (c, &pc) in psi.iter().enumerate() {
                    rows[(i, r * k + c)] = hr * pc;
                }
                rows[(i, dim * k + r)] = hr;
            }
        }
        let s = dict.slope_index(y);
        for (c, &pc) in psi.iter().enumerate() {
            idx.push((s * k + c) as u32);
            val.push(pc);
        }
        idx.push((dim * k + s) as u32);
        val.push(1.0);
        ptr.push(idx.len());
    }
    (rows, SparseRows::from_csr(len, ptr, idx, val))
}

/// Builds `P = Σ p_i p_iᵀ` and the stacked derivative rows `P'`.
pub fn assemble(
    data: &Dataset,
    dict: &Dictionary,
    feature_map: FeatureMap,
) -> Result<DesignMatrices> {
    if data.n() == 0 {
        return Err(Error::InvalidInput("cannot fit an empty dataset".into()));
    }
    let (rows, deriv) = design_rows(data, dict, feature_map);
    let gram = rows.tr_mul(&rows);
    let full_len = rows.ncols();
    Ok(DesignMatrices {
        dict: dict.clone(),
        feature_map,
        input_dim: data.k(),
        full_len,
        columns: (0..full_len).collect(),
        gram,
        deriv,
    })
}

impl DesignMatrices {
    /// Number of samples.
    pub fn n(&self) -> usize {
        self.deriv.nrows()
    }

    /// Number of free coordinates.
    pub fn m(&self) -> usize {
        self.columns.len()
    }

    /// Length of the full parameter vector `w`.
    pub fn full_len(&self) -> usize {
        self.full_len
    }

    /// Free coordinates as indices into the full `w`.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// `P`, restricted to the free coordinates.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `P'`, restricted to the free coordinates.
    pub fn deriv(&self) -> &SparseRows {
        &self.deriv
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Keeps only the listed coordinates of the full `w` free; all others are
    /// pinned to zero. `keep` must be strictly ascending.
    pub fn restrict(&self, keep: &[usize]) -> Result<DesignMatrices> {
        if keep.windows(2).any(|w| w[1] <= w[0]) || keep.iter().any(|&c| c >= self.full_len) {
            return Err(Error::InvalidInput("restriction must be ascending and in range".into()));
        }
        let local: Vec<usize> = keep
            .iter()
            .map(|c| {
                self.columns.binary_search(c).map_err(|_| {
                    Error::InvalidInput(format!("coordinate {c} is already pinned to zero"))
                })
            })
            .collect::<Result<_>>()?;
        let mut map = vec![usize::MAX; self.m()];
        for (new, &old) in local.iter().enumerate() {
            map[old] = new;
        }
        let gram = DMatrix::from_fn(local.len(), local.len(), |r, c| self.gram[(local[r], local[c])]);
        let (mut ptr, mut idx, mut val) = (vec![0], Vec::new(), Vec::new());
        for i in 0..self.n() {
            for (j, v) in self.deriv.row(i) {
                if map[j] != usize::MAX {
                    idx.push(map[j] as u32);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        let deriv = SparseRows::from_csr(local.len(), ptr, idx, val);
        Ok(DesignMatrices {
            dict: self.dict.clone(),
            feature_map: self.feature_map,
            input_dim: self.input_dim,
            full_len: self.full_len,
            columns: keep.to_vec(),
            gram,
            deriv,
        })
    }

    /// Scatters free coordinates into a full-length `w`.
    pub fn expand(&self, w: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.full_len];
        for (&c, &v) in self.columns.iter().zip(w) {
            full[c] = v;
        }
        full
    }

    /// Gathers the free coordinates of a full-length `w`.
    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|&c| full[c]).collect()
    }

    /// Parameters for a vector over the free coordinates.
    pub fn to_params(&self, w: &[f64]) -> Result<CnrParams> {
        CnrParams::from_flat(self.dict.clone(), self.feature_map, self.input_dim, &self.expand(w))
    }

    /// `wᵀ P w`.
    pub fn quadratic(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        w.dot(&(&self.gram * &w))
    }

    /// `wᵀ P w − 2 Σ log([P'w]_i)`; `+∞` when some `[P'w]_i ≤ 0`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        match sum_ln(&self.deriv.mul(w)) {
            Some(logs) => self.quadratic(w) - 2.0 * logs,
            None => f64::INFINITY,
        }
    }
}

/// `Σ ln v_i`, or `None` if some `v_i ≤ 0`. Takes one logarithm per block
/// of products and only falls back to per-entry logs when a block product
/// leaves the normal range.
pub(crate) fn sum_ln(values: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for block in values.chunks(16) {
        let mut prod = 1.0;
        for &v in block {
            if !(v > 0.0) {
                return None;
            }
            prod *= v;
        }
        if prod.is_normal() {
            total += prod.ln();
        } else {
            total += block.iter().map(|v| v.ln()).sum::<f64>();
        }
    }
    Some(total)
}
