//! Modality-specific classifier heads coupled by a variational trace-norm
//! penalty on `[W_N W_V]` and an orthogonality penalty on each head.
//!
//! The trace norm is never differentiated directly. Instead an auxiliary
//! PSD matrix Γ is kept alongside the heads: for fixed heads the penalty
//! `½λ·tr(MᵀΓ⁻¹M) + ½λ·tr(Γ)` is minimized by `Γ = (MMᵀ + μI)^{1/2}`, and
//! for fixed Γ it is a quadratic in the heads. Training alternates the two.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Modality;
use crate::linalg::{self, LinalgError, Matrix};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("sample {index}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error(
        "batch has {embeddings} embeddings but {labels} labels and {modalities} modality tags"
    )]
    BatchLength {
        embeddings: usize,
        labels: usize,
        modalities: usize,
    },
    #[error("embedding width {actual} does not match head dimension {expected}")]
    EmbeddingDim { expected: usize, actual: usize },
    #[error("heads must share a shape, got {0:?} and {1:?}")]
    HeadShape((usize, usize), (usize, usize)),
    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Scalar weights of the relevance objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadParams {
    /// Trace-norm strength inside R1.
    pub lambda: f64,
    /// Weight of R1 in the relevance objective.
    pub alpha1: f64,
    /// Weight of R2 in the relevance objective.
    pub alpha2: f64,
    /// Ridge added to `W_N W_Nᵀ + W_V W_Vᵀ` before the square root.
    pub mu: f64,
    /// Weight of the softmax term; 1 everywhere except isolation experiments.
    pub softmax_weight: f64,
}

impl Default for HeadParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            alpha1: 1.0,
            alpha2: 1.0,
            mu: 1e-6,
            softmax_weight: 1.0,
        }
    }
}

impl HeadParams {
    pub fn validate(&self) -> Result<(), CouplingError> {
        let bad = |what: &str, v: f64| Err(CouplingError::Hyperparameter(format!("{what} = {v}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative", self.lambda);
        }
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return bad("alpha1 must be non-negative", self.alpha1);
        }
        if !(self.alpha2 >= 0.0 && self.alpha2.is_finite()) {
            return bad("alpha2 must be non-negative", self.alpha2);
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive", self.mu);
        }
        if !(self.softmax_weight >= 0.0 && self.softmax_weight.is_finite()) {
            return bad("softmax_weight must be non-negative", self.softmax_weight);
        }
        Ok(())
    }
}

/// The pair of classifier matrices (embedding dim × classes) and the
/// coupling matrix Γ (embedding dim × embedding dim).
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledHeads {
    pub w_n: Matrix,
    pub w_v: Matrix,
    gamma: Matrix,
    gamma_inv: Matrix,
    pub params: HeadParams,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RelevanceParts {
    pub softmax: f64,
    pub r1: f64,
    pub r2: f64,
}

#[derive(Clone, Debug)]
pub struct RelevanceGrads {
    pub d_w_n: Matrix,
    pub d_w_v: Matrix,
    pub d_embeddings: Matrix,
    pub loss: f64,
    pub parts: RelevanceParts,
}

#[derive(Clone, Debug)]
pub struct SoftmaxOutput {
    pub loss: f64,
    pub d_w_n: Matrix,
    pub d_w_v: Matrix,
    pub d_embeddings: Matrix,
}

impl CoupledHeads {
    /// Gaussian heads with standard deviation `√(2/(m + C))`, Γ refreshed
    /// from them.
    pub fn init(
        embedding_dim: usize,
        classes: usize,
        params: HeadParams,
        seed: u64,
    ) -> Result<Self, CouplingError> {
        params.validate()?;
        let mut rng = rng::fork(seed, "heads-init");
        let std = (2.0 / (embedding_dim + classes) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w_n = Matrix::from_fn(embedding_dim, classes, |_, _| normal.sample(&mut rng));
        let w_v = Matrix::from_fn(embedding_dim, classes, |_, _| normal.sample(&mut rng));
        Self::from_weights(w_n, w_v, params)
    }

    /// Builds heads from explicit weights; Γ is set to its optimum.
    pub fn from_weights(
        w_n: Matrix,
        w_v: Matrix,
        params: HeadParams,
    ) -> Result<Self, CouplingError> {
        params.validate()?;
        if w_n.shape() != w_v.shape() {
            return Err(CouplingError::HeadShape(w_n.shape(), w_v.shape()));
        }
        let m = w_n.rows();
        let mut heads = Self {
            w_n,
            w_v,
            gamma: Matrix::identity(m),
            gamma_inv: Matrix::identity(m),
            params,
        };
        heads.update_gamma()?;
        Ok(heads)
    }

    /// Restores heads together with a previously computed Γ and Γ⁻¹
    /// (checkpoints), so that resumed runs reproduce uninterrupted ones.
    pub fn from_stored(
        w_n: Matrix,
        w_v: Matrix,
        gamma: Matrix,
        gamma_inv: Matrix,
        params: HeadParams,
    ) -> Result<Self, CouplingError> {
        params.validate()?;
        if w_n.shape() != w_v.shape() {
            return Err(CouplingError::HeadShape(w_n.shape(), w_v.shape()));
        }
        let m = w_n.rows();
        for g in [&gamma, &gamma_inv] {
            if g.shape() != (m, m) {
                return Err(CouplingError::Linalg(LinalgError::ShapeMismatch {
                    op: "stored gamma",
                    left: (m, m),
                    right: g.shape(),
                }));
            }
        }
        Ok(Self {
            w_n,
            w_v,
            gamma,
            gamma_inv,
            params,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.w_n.rows()
    }

    pub fn classes(&self) -> usize {
        self.w_n.cols()
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &Matrix {
        &self.gamma_inv
    }

    /// Installs an arbitrary symmetric positive definite Γ.
    pub fn set_gamma(&mut self, gamma: Matrix) -> Result<(), CouplingError> {
        let m = self.embedding_dim();
        if gamma.shape() != (m, m) {
            return Err(LinalgError::ShapeMismatch {
                op: "set_gamma",
                left: (m, m),
                right: gamma.shape(),
            }
            .into());
        }
        let asym = gamma.asymmetry();
        if asym > 1e-8 * gamma.frobenius_norm().max(1.0) {
            return Err(LinalgError::NotSymmetric(asym).into());
        }
        let gamma = gamma.symmetrize()?;
        self.gamma_inv = linalg::spd_inverse(&gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn head(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Nir => &self.w_n,
            Modality::Vis => &self.w_v,
        }
    }

    /// `[W_N W_V]`.
    pub fn stacked(&self) -> Matrix {
        self.w_n.hcat(&self.w_v).expect("heads share shape")
    }

    /// `W_N W_Nᵀ + W_V W_Vᵀ`.
    pub fn gram(&self) -> Matrix {
        let mut g = self.w_n.matmul_t(&self.w_n).expect("square");
        g.axpy(1.0, &self.w_v.matmul_t(&self.w_v).expect("square"))
            .expect("same shape");
        g
    }

    /// Γ ← `(W_N W_Nᵀ + W_V W_Vᵀ + μI)^{1/2}`, the minimizer of R1 over Γ
    /// for the current heads. Returns the new Γ.
    pub fn update_gamma(&mut self) -> Result<&Matrix, CouplingError> {
        let (g, gi) = linalg::psd_sqrt_and_inv_sqrt(&self.gram(), self.params.mu)?;
        self.gamma = g;
        self.gamma_inv = gi;
        Ok(&self.gamma)
    }

    fn check_batch(
        &self,
        embeddings: &Matrix,
        labels: &[usize],
        modalities: &[Modality],
    ) -> Result<(), CouplingError> {
        if embeddings.rows() != labels.len() || labels.len() != modalities.len() {
            return Err(CouplingError::BatchLength {
                embeddings: embeddings.rows(),
                labels: labels.len(),
                modalities: modalities.len(),
            });
        }
        if embeddings.cols() != self.embedding_dim() {
            return Err(CouplingError::EmbeddingDim {
                expected: self.embedding_dim(),
                actual: embeddings.cols(),
            });
        }
        let classes = self.classes();
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(CouplingError::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy, each sample scored by the head of its modality.
    pub fn softmax_loss(
        &self,
        embeddings: &Matrix,
        labels: &[usize],
        modalities: &[Modality],
    ) -> Result<SoftmaxOutput, CouplingError> {
        self.check_batch(embeddings, labels, modalities)?;
        let (m, classes) = self.w_n.shape();
        let batch = embeddings.rows();
        let mut d_w_n = Matrix::zeros(m, classes);
        let mut d_w_v = Matrix::zeros(m, classes);
        let mut d_emb = Matrix::zeros(batch, m);
        if batch == 0 {
            return Ok(SoftmaxOutput {
                loss: 0.0,
                d_w_n,
                d_w_v,
                d_embeddings: d_emb,
            });
        }
        let inv_b = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut logits = vec![0.0; classes];
        for i in 0..batch {
            let x = embeddings.row(i);
            let (w, dw) = match modalities[i] {
                Modality::Nir => (&self.w_n, &mut d_w_n),
                Modality::Vis => (&self.w_v, &mut d_w_v),
            };
            logits.iter_mut().for_each(|l| *l = 0.0);
            for (k, &xk) in x.iter().enumerate() {
                for (l, &wkc) in logits.iter_mut().zip(w.row(k)) {
                    *l += xk * wkc;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - logits[labels[i]];
            // logits become (p − y) / B
            for (c, l) in logits.iter_mut().enumerate() {
                let p = (*l - log_z).exp();
                *l = (p - if c == labels[i] { 1.0 } else { 0.0 }) * inv_b;
            }
            let dx = d_emb.row_mut(i);
            for k in 0..m {
                let wrow = w.row(k);
                dx[k] = logits.iter().zip(wrow).map(|(g, w)| g * w).sum();
                let xk = x[k];
                for (d, &g) in dw.row_mut(k).iter_mut().zip(&logits) {
                    *d += xk * g;
                }
            }
        }
        Ok(SoftmaxOutput {
            loss: loss * inv_b,
            d_w_n,
            d_w_v,
            d_embeddings: d_emb,
        })
    }

    /// `½λ·tr(MᵀΓ⁻¹M) + ½λ·tr(Γ)` at the stored Γ, with `M = [W_N W_V]`.
    pub fn r1_value(&self) -> f64 {
        let lambda = self.params.lambda;
        if lambda == 0.0 {
            return 0.0;
        }
        let quad = self.quadratic_form(&self.w_n) + self.quadratic_form(&self.w_v);
        0.5 * lambda * (quad + self.gamma.trace())
    }

    // tr(Wᵀ Γ⁻¹ W)
    fn quadratic_form(&self, w: &Matrix) -> f64 {
        self.gamma_inv
            .matmul(w)
            .expect("m×m · m×C")
            .frobenius_dot(w)
    }

    /// Gradients of R1 w.r.t. `W_N` and `W_V` at fixed Γ:
    /// `½λ(Γ⁻¹ + Γ⁻ᵀ)W`.
    pub fn r1_grads(&self) -> (Matrix, Matrix) {
        let gi = &self.gamma_inv;
        let sym = gi
            .add(&gi.transpose())
            .expect("square")
            .scale(0.5 * self.params.lambda);
        (
            sym.matmul(&self.w_n).expect("shapes"),
            sym.matmul(&self.w_v).expect("shapes"),
        )
    }

    /// `½(‖W_NᵀW_N − I‖²_F + ‖W_VᵀW_V − I‖²_F)` and its exact gradients
    /// `2W(WᵀW − I)`.
    pub fn r2_value_and_grads(&self) -> (f64, Matrix, Matrix) {
        let (vn, gn) = orthogonality_term(&self.w_n);
        let (vv, gv) = orthogonality_term(&self.w_v);
        (0.5 * (vn + vv), gn, gv)
    }

    /// `softmax + α1·R1 + α2·R2` with gradients; only the softmax part
    /// reaches the embeddings.
    pub fn relevance_loss(
        &self,
        embeddings: &Matrix,
        labels: &[usize],
        modalities: &[Modality],
    ) -> Result<RelevanceGrads, CouplingError> {
        let sm = self.softmax_loss(embeddings, labels, modalities)?;
        let r2 = self.r2_value_and_grads();
        Ok(self.assemble_relevance(&sm, &r2))
    }

    /// Combines a softmax evaluation and R2 (neither depends on Γ) with R1
    /// at the stored Γ.
    pub fn assemble_relevance(
        &self,
        sm: &SoftmaxOutput,
        r2: &(f64, Matrix, Matrix),
    ) -> RelevanceGrads {
        let p = self.params;
        let mut d_w_n = sm.d_w_n.clone();
        let mut d_w_v = sm.d_w_v.clone();
        let mut d_embeddings = sm.d_embeddings.clone();
        if p.softmax_weight != 1.0 {
            d_w_n = d_w_n.scale(p.softmax_weight);
            d_w_v = d_w_v.scale(p.softmax_weight);
            d_embeddings = d_embeddings.scale(p.softmax_weight);
        }
        let r1 = self.r1_value();
        if p.alpha1 != 0.0 && p.lambda != 0.0 {
            let (gn, gv) = self.r1_grads();
            d_w_n.axpy(p.alpha1, &gn).expect("shape");
            d_w_v.axpy(p.alpha1, &gv).expect("shape");
        }
        let (r2, gn, gv) = r2;
        if p.alpha2 != 0.0 {
            d_w_n.axpy(p.alpha2, gn).expect("shape");
            d_w_v.axpy(p.alpha2, gv).expect("shape");
        }
        RelevanceGrads {
            d_w_n,
            d_w_v,
            d_embeddings,
            loss: p.softmax_weight * sm.loss + p.alpha1 * r1 + p.alpha2 * r2,
            parts: RelevanceParts {
                softmax: sm.loss,
                r1,
                r2: *r2,
            },
        }
    }

    /// Absolute cosine similarity between every pair of columns of `[W_N W_V]`.
    pub fn correlation_matrix(&self) -> CorrelationMatrix {
        let stacked = self.stacked();
        let n = stacked.cols();
        let cols: Vec<Vec<f64>> = (0..n).map(|j| stacked.column(j)).collect();
        let norms: Vec<f64> = cols.iter().map(|c| linalg::dot(c, c).sqrt()).collect();
        let undefined: Vec<usize> = (0..n).filter(|&j| norms[j] == 0.0).collect();
        let values = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                (linalg::dot(&cols[i], &cols[j]) / (norms[i] * norms[j]))
                    .abs()
                    .min(1.0)
            }
        });
        CorrelationMatrix { values, undefined }
    }
}

fn orthogonality_term(w: &Matrix) -> (f64, Matrix) {
    let (m, c) = w.shape();
    if c <= m {
        let mut e = w.t_matmul(w).expect("square");
        for i in 0..c {
            e[(i, i)] -= 1.0;
        }
        let value = e.frobenius_dot(&e);
        let grad = w.matmul(&e).expect("shapes").scale(2.0);
        return (value, grad);
    }
    // Wide heads: the same quantities through the m × m Gram matrix,
    // ‖WᵀW − I‖² = ‖WWᵀ‖² − 2‖W‖² + C and W(WᵀW − I) = (WWᵀ)W − W.
    // The value is at least C − m here, so the subtraction is benign.
    let g = w.matmul_t(w).expect("square");
    let value = g.frobenius_dot(&g) - 2.0 * g.trace() + c as f64;
    let mut grad = g.matmul(w).expect("shapes");
    grad.axpy(-1.0, w).expect("same shape");
    (value, grad.scale(2.0))
}

/// `2C × 2C` absolute cosine similarities of the stacked head columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Matrix,
    /// Columns with zero norm; their off-diagonal entries are reported as 0.
    pub undefined: Vec<usize>,
}

impl CorrelationMatrix {
    /// Mean of entries `(i, C + i)`: how strongly each class's NIR and VIS
    /// columns align.
    pub fn cross_block_diagonal_mean(&self) -> f64 {
        let c = self.values.rows() / 2;
        if c == 0 {
            return 0.0;
        }
        (0..c).map(|i| self.values[(i, c + i)]).sum::<f64>() / c as f64
    }

    /// Median of the off-diagonal entries.
    pub fn off_diagonal_median(&self) -> f64 {
        let n = self.values.rows();
        let mut v: Vec<f64> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v.push(self.values[(i, j)]);
                }
            }
        }
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len().is_multiple_of(2) {
            0.5 * (v[mid - 1] + v[mid])
        } else {
            v[mid]
        }
    }

    /// Row-major CSV, no header, shortest round-trip decimal formatting.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.values)
    }
}

pub(crate) fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{central_difference, CheckReport};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(lambda: f64, alpha1: f64, alpha2: f64, mu: f64) -> HeadParams {
        HeadParams {
            lambda,
            alpha1,
            alpha2,
            mu,
            softmax_weight: 1.0,
        }
    }

    fn random_heads(m: usize, c: usize, seed: u64, p: HeadParams) -> CoupledHeads {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_n = Matrix::from_fn(m, c, |_, _| rng.random_range(-1.0..1.0));
        let w_v = Matrix::from_fn(m, c, |_, _| rng.random_range(-1.0..1.0));
        CoupledHeads::from_weights(w_n, w_v, p).unwrap()
    }

    fn random_batch(
        b: usize,
        m: usize,
        c: usize,
        seed: u64,
    ) -> (Matrix, Vec<usize>, Vec<Modality>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(b, m, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
        let mods = (0..b)
            .map(|i| {
                if i % 2 == 0 {
                    Modality::Nir
                } else {
                    Modality::Vis
                }
            })
            .collect();
        (x, labels, mods)
    }

    #[test]
    fn zero_weights_give_log_classes() {
        let heads = CoupledHeads::from_weights(
            Matrix::zeros(4, 5),
            Matrix::zeros(4, 5),
            HeadParams::default(),
        )
        .unwrap();
        let (x, labels, mods) = random_batch(6, 4, 5, 1);
        let out = heads.softmax_loss(&x, &labels, &mods).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn saturated_logit_gives_near_zero_loss() {
        let mut w = Matrix::zeros(1, 3);
        w[(0, 1)] = 50.0;
        let heads = CoupledHeads::from_weights(w.clone(), w, HeadParams::default()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0]]);
        let out = heads.softmax_loss(&x, &[1], &[Modality::Vis]).unwrap();
        assert!(out.loss < 1e-10);
    }

    #[test]
    fn softmax_hand_case() {
        // m = 2, C = 3, two samples on different heads.
        let w_n = Matrix::from_rows(&[vec![1.0, 0.0, -1.0], vec![0.5, 2.0, 0.0]]);
        let w_v = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![-1.0, 0.0, 3.0]]);
        let heads = CoupledHeads::from_weights(w_n, w_v, HeadParams::default()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -0.5]]);
        let out = heads
            .softmax_loss(&x, &[0, 2], &[Modality::Nir, Modality::Vis])
            .unwrap();
        // sample 0 via W_N: logits [2, 4, -1]; sample 1 via W_V: logits [0.5, 0.5, -1]
        let nll0 = -(2f64.exp() / (2f64.exp() + 4f64.exp() + (-1f64).exp())).ln();
        let nll1 = -((-1f64).exp() / (2.0 * 0.5f64.exp() + (-1f64).exp())).ln();
        assert!((out.loss - 0.5 * (nll0 + nll1)).abs() < 1e-14);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let heads = random_heads(3, 4, 1, HeadParams::default());
        let x = Matrix::zeros(2, 3);
        let err = heads
            .softmax_loss(&x, &[0, 4], &[Modality::Nir, Modality::Vis])
            .unwrap_err();
        assert_eq!(
            err,
            CouplingError::LabelOutOfRange {
                index: 1,
                label: 4,
                classes: 4
            }
        );
    }

    #[test]
    fn r1_examples() {
        let mu = 1e-6;
        let heads = CoupledHeads::from_weights(
            Matrix::zeros(4, 3),
            Matrix::zeros(4, 3),
            params(1.0, 1.0, 1.0, mu),
        )
        .unwrap();
        assert!(
            heads
                .gamma()
                .sub(&Matrix::identity(4).scale(1e-3))
                .unwrap()
                .frobenius_norm()
                < 1e-15
        );
        assert!((heads.r1_value() - 2e-3).abs() < 1e-15);

        let zero_lambda = random_heads(4, 3, 2, params(0.0, 1.0, 1.0, mu));
        assert_eq!(zero_lambda.r1_value(), 0.0);
    }

    #[test]
    fn r1_equals_trace_norm_at_optimal_gamma() {
        let mut heads = random_heads(4, 5, 3, params(0.7, 1.0, 1.0, 1e-6));
        let m = heads.stacked();
        heads
            .set_gamma(linalg::psd_sqrt(&m.matmul_t(&m).unwrap(), 0.0).unwrap())
            .unwrap();
        let tn = linalg::trace_norm(&m).unwrap();
        assert!((heads.r1_value() - 0.7 * tn).abs() <= 1e-6);
    }

    #[test]
    fn update_gamma_squares_back_and_is_infimum() {
        let mut heads = random_heads(5, 3, 4, params(1.0, 1.0, 1.0, 1e-6));
        heads.update_gamma().unwrap();
        let g = heads.gamma().clone();
        let target = {
            let mut t = heads.gram();
            for i in 0..5 {
                t[(i, i)] += 1e-6;
            }
            t
        };
        let err = g.matmul(&g).unwrap().sub(&target).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * target.frobenius_norm());

        // R1 is minimized (up to the μ ridge) by the refreshed Γ.
        let best = heads.r1_value();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let b = Matrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let mut alt = b.matmul_t(&b).unwrap();
            for i in 0..5 {
                alt[(i, i)] += 1e-3;
            }
            let mut other = heads.clone();
            other.set_gamma(alt).unwrap();
            assert!(best <= other.r1_value() + 1e-9);
        }
    }

    #[test]
    fn update_gamma_projector_case() {
        // W_N with orthonormal columns spanning R^m, W_V = 0, μ → 0.
        let w_n = Matrix::from_rows(&[vec![0.6, 0.8], vec![-0.8, 0.6]]);
        let mut p = HeadParams::default();
        p.mu = 1e-300;
        let heads = CoupledHeads::from_weights(w_n, Matrix::zeros(2, 2), p).unwrap();
        assert!(
            heads
                .gamma()
                .sub(&Matrix::identity(2))
                .unwrap()
                .frobenius_norm()
                < 1e-14
        );
    }

    #[test]
    fn r1_grads_examples() {
        let zero = CoupledHeads::from_weights(
            Matrix::zeros(3, 2),
            Matrix::zeros(3, 2),
            params(1.0, 1.0, 1.0, 1e-6),
        )
        .unwrap();
        let (gn, gv) = zero.r1_grads();
        assert_eq!(gn.frobenius_norm() + gv.frobenius_norm(), 0.0);

        let mut heads = random_heads(3, 2, 5, params(1.0, 1.0, 1.0, 1e-6));
        heads.set_gamma(Matrix::identity(3)).unwrap();
        let (gn, gv) = heads.r1_grads();
        assert!(gn.sub(&heads.w_n).unwrap().frobenius_norm() < 1e-15);
        assert!(gv.sub(&heads.w_v).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn r2_examples() {
        let q = Matrix::from_rows(&[vec![0.6, 0.0], vec![0.8, 0.0], vec![0.0, 1.0]]);
        let heads = CoupledHeads::from_weights(q.clone(), q, HeadParams::default()).unwrap();
        let (v, gn, gv) = heads.r2_value_and_grads();
        assert!(v < 1e-28);
        assert!(gn.frobenius_norm() < 1e-14 && gv.frobenius_norm() < 1e-14);

        let two = Matrix::identity(2).scale(2.0);
        let heads = CoupledHeads::from_weights(two.clone(), two, HeadParams::default()).unwrap();
        assert_eq!(heads.r2_value_and_grads().0, 18.0);

        let zero = CoupledHeads::from_weights(
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 3),
            HeadParams::default(),
        )
        .unwrap();
        assert_eq!(zero.r2_value_and_grads().0, 3.0);
    }

    #[test]
    fn wide_head_r2_matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = Matrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let (value, grad) = orthogonality_term(&w);
        let mut e = w.t_matmul(&w).unwrap();
        for i in 0..7 {
            e[(i, i)] -= 1.0;
        }
        assert!((value - e.frobenius_dot(&e)).abs() < 1e-12 * value);
        let direct = w.matmul(&e).unwrap().scale(2.0);
        assert!(grad.sub(&direct).unwrap().frobenius_norm() < 1e-12 * direct.frobenius_norm());
    }

    #[test]
    fn relevance_degenerate_weights() {
        let heads = random_heads(4, 3, 6, params(1e-3, 0.0, 0.0, 1e-6));
        let (x, labels, mods) = random_batch(8, 4, 3, 6);
        let rel = heads.relevance_loss(&x, &labels, &mods).unwrap();
        let sm = heads.softmax_loss(&x, &labels, &mods).unwrap();
        assert_eq!(rel.loss, sm.loss);
        assert_eq!(rel.d_w_n, sm.d_w_n);
        assert_eq!(rel.d_embeddings, sm.d_embeddings);

        // zero embeddings with orthonormal heads: ln C + α1·R1
        let q = Matrix::identity(3);
        let heads = CoupledHeads::from_weights(q.clone(), q, params(1e-3, 1.0, 5.0, 1e-6)).unwrap();
        let x = Matrix::zeros(4, 3);
        let rel = heads
            .relevance_loss(
                &x,
                &[0, 1, 2, 0],
                &[Modality::Nir, Modality::Vis, Modality::Nir, Modality::Vis],
            )
            .unwrap();
        assert!((rel.loss - (3f64.ln() + heads.r1_value())).abs() < 1e-14);
    }

    fn check_relevance_grads(seed: u64) -> CheckReport {
        let heads = random_heads(4, 3, seed, params(0.3, 1.0, 0.5, 1e-6));
        let (x, labels, mods) = random_batch(6, 4, 3, seed + 100);
        let g = heads.relevance_loss(&x, &labels, &mods).unwrap();
        let mut report = CheckReport::default();
        let eval = |h: &CoupledHeads, x: &Matrix| h.relevance_loss(x, &labels, &mods).unwrap().loss;
        for idx in 0..12 {
            let num = central_difference(
                |d| {
                    let mut h = heads.clone();
                    h.w_n.as_mut_slice()[idx] += d;
                    eval(&h, &x)
                },
                1e-5,
            );
            report.record(format!("w_n[{idx}]"), g.d_w_n.as_slice()[idx], num, 1e-4);
            let num = central_difference(
                |d| {
                    let mut h = heads.clone();
                    h.w_v.as_mut_slice()[idx] += d;
                    eval(&h, &x)
                },
                1e-5,
            );
            report.record(format!("w_v[{idx}]"), g.d_w_v.as_slice()[idx], num, 1e-4);
        }
        for idx in 0..24 {
            let num = central_difference(
                |d| {
                    let mut xx = x.clone();
                    xx.as_mut_slice()[idx] += d;
                    eval(&heads, &xx)
                },
                1e-5,
            );
            report.record(
                format!("x[{idx}]"),
                g.d_embeddings.as_slice()[idx],
                num,
                1e-4,
            );
        }
        report
    }

    #[test]
    fn relevance_gradients_match_finite_differences() {
        for seed in 0..5 {
            let r = check_relevance_grads(seed);
            assert!(r.passed(), "seed {seed}: {:?}", r.failures);
        }
    }

    #[test]
    fn alternation_descends() {
        let heads0 = random_heads(4, 6, 9, params(0.5, 1.0, 1.0, 1e-10));
        let (x, labels, mods) = random_batch(12, 4, 6, 9);
        let mut heads = heads0;
        let objective = |h: &CoupledHeads| h.relevance_loss(&x, &labels, &mods).unwrap().loss;
        let mut prev = objective(&heads);
        for _ in 0..100 {
            heads.update_gamma().unwrap();
            let g = heads.relevance_loss(&x, &labels, &mods).unwrap();
            heads.w_n.axpy(-1e-3, &g.d_w_n).unwrap();
            heads.w_v.axpy(-1e-3, &g.d_w_v).unwrap();
            let now = objective(&heads);
            assert!(now <= prev + 1e-9, "{now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn modality_isolation_is_bit_exact() {
        let heads = random_heads(4, 3, 10, HeadParams::default());
        let (x, labels, mods) = random_batch(8, 4, 3, 10);
        let base = heads.relevance_loss(&x, &labels, &mods).unwrap();
        // reverse the order of modality-1 samples only
        let vis: Vec<usize> = (0..8).filter(|&i| mods[i] == Modality::Vis).collect();
        let mut perm: Vec<usize> = (0..8).collect();
        for (a, b) in vis.iter().zip(vis.iter().rev()) {
            perm[*a] = *b;
        }
        let px = Matrix::from_fn(8, 4, |r, c| x[(perm[r], c)]);
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let pm: Vec<Modality> = perm.iter().map(|&i| mods[i]).collect();
        let permuted = heads.relevance_loss(&px, &pl, &pm).unwrap();
        assert_eq!(base.d_w_n, permuted.d_w_n);
    }

    #[test]
    fn correlation_matrix_properties() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 3.0]]);
        let heads = CoupledHeads::from_weights(w.clone(), w, HeadParams::default()).unwrap();
        let c = heads.correlation_matrix();
        assert_eq!(c.values.shape(), (4, 4));
        assert!((c.values[(0, 2)] - 1.0).abs() < 1e-15);
        assert!((c.values[(1, 3)] - 1.0).abs() < 1e-15);
        assert!((c.cross_block_diagonal_mean() - 1.0).abs() < 1e-15);

        let heads = CoupledHeads::from_weights(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]),
            HeadParams::default(),
        )
        .unwrap();
        let c = heads.correlation_matrix();
        assert_eq!(c.undefined, vec![1, 2]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.values[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }

        let heads = random_heads(5, 4, 11, HeadParams::default());
        let c = heads.correlation_matrix();
        assert!(c.values.asymmetry() == 0.0);
        assert!(c
            .values
            .as_slice()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(c.to_csv().lines().count(), 8);
    }
}
