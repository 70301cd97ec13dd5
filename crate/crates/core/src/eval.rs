//! Probe-versus-gallery evaluation: cosine scores, rank-1 identification,
//! ROC with verification rate at fixed false accept rates, and the
//! intra/inter-class scatter diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{matrix_to_csv, CorrelationMatrix};
use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("embedding widths differ: probe {probe}, gallery {gallery}")]
    DimMismatch { probe: usize, gallery: usize },
    #[error("{set} embedding {index} has zero norm")]
    ZeroNorm { set: &'static str, index: usize },
    #[error("{0} labels do not match the score matrix shape")]
    LabelCount(&'static str),
    #[error("probe {index} has label {label} which is absent from the gallery")]
    MissingGalleryLabel { index: usize, label: usize },
    #[error("no genuine pairs to evaluate")]
    NoGenuinePairs,
    #[error("no impostor pairs to evaluate")]
    NoImpostorPairs,
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("{0} labels for {1} embeddings")]
    LabelLength(usize, usize),
    #[error("requested dimension {requested} but the embeddings have rank {rank} (width {width})")]
    DimExceedsRank {
        requested: usize,
        rank: usize,
        width: usize,
    },
    #[error("the probe set is empty")]
    EmptyProbe,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Cosine similarity between every probe row and every gallery row.
pub fn cosine_scores(probe: &Matrix, gallery: &Matrix) -> Result<Matrix, EvalError> {
    if probe.cols() != gallery.cols() {
        return Err(EvalError::DimMismatch {
            probe: probe.cols(),
            gallery: gallery.cols(),
        });
    }
    let p = unit_rows(probe, "probe")?;
    let g = unit_rows(gallery, "gallery")?;
    Ok(p.matmul_t(&g).expect("checked widths"))
}

fn unit_rows(m: &Matrix, set: &'static str) -> Result<Matrix, EvalError> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(EvalError::ZeroNorm { set, index: r });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Probe × gallery similarity scores (higher is more similar) with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Matrix,
    pub probe_labels: Vec<usize>,
    pub gallery_labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(
        scores: Matrix,
        probe_labels: Vec<usize>,
        gallery_labels: Vec<usize>,
    ) -> Result<Self, EvalError> {
        if scores.rows() != probe_labels.len() {
            return Err(EvalError::LabelCount("probe"));
        }
        if scores.cols() != gallery_labels.len() {
            return Err(EvalError::LabelCount("gallery"));
        }
        Ok(Self {
            scores,
            probe_labels,
            gallery_labels,
        })
    }

    /// Cosine scores of the given embeddings.
    pub fn score(
        probe: &Matrix,
        probe_labels: Vec<usize>,
        gallery: &Matrix,
        gallery_labels: Vec<usize>,
    ) -> Result<Self, EvalError> {
        Self::new(cosine_scores(probe, gallery)?, probe_labels, gallery_labels)
    }

    /// Genuine (same label) and impostor scores.
    pub fn split_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for (i, &pl) in self.probe_labels.iter().enumerate() {
            for (j, &gl) in self.gallery_labels.iter().enumerate() {
                let s = self.scores[(i, j)];
                if pl == gl {
                    genuine.push(s);
                } else {
                    impostor.push(s);
                }
            }
        }
        (genuine, impostor)
    }
}

/// Fraction of probes whose best-scoring gallery entry has their label.
/// Ties go to the lowest gallery index.
pub fn rank1(scores: &ScoreMatrix) -> Result<f64, EvalError> {
    let probes = scores.probe_labels.len();
    if probes == 0 {
        return Err(EvalError::EmptyProbe);
    }
    let mut hits = 0usize;
    for (i, &label) in scores.probe_labels.iter().enumerate() {
        if !scores.gallery_labels.contains(&label) {
            return Err(EvalError::MissingGalleryLabel { index: i, label });
        }
        let row = scores.scores.row(i);
        let mut best = 0;
        for (j, &s) in row.iter().enumerate().skip(1) {
            if s > row[best] {
                best = j;
            }
        }
        if scores.gallery_labels[best] == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Accept when score ≥ threshold.
    pub threshold: f64,
    pub far: f64,
    pub vr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    /// From (0, 0) at threshold +∞ through every distinct score.
    pub curve: Vec<RocPoint>,
    /// (requested FAR, verification rate) pairs.
    pub vr_at_far: Vec<(f64, f64)>,
}

impl Roc {
    /// Highest verification rate whose empirical FAR does not exceed `far`.
    pub fn vr_at(&self, far: f64) -> f64 {
        self.curve
            .iter()
            .filter(|p| p.far <= far)
            .map(|p| p.vr)
            .fold(0.0, f64::max)
    }
}

/// Sweeps every distinct score as an acceptance threshold. VR at a target
/// FAR is read at the most permissive threshold whose FAR stays within the
/// target; no interpolation.
pub fn roc(scores: &ScoreMatrix, far_points: &[f64]) -> Result<Roc, EvalError> {
    let (mut genuine, mut impostor) = scores.split_pairs();
    if genuine.is_empty() {
        return Err(EvalError::NoGenuinePairs);
    }
    if impostor.is_empty() {
        return Err(EvalError::NoImpostorPairs);
    }
    genuine.sort_by(|a, b| b.total_cmp(a));
    impostor.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut curve = Vec::with_capacity(thresholds.len() + 1);
    curve.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        vr: 0.0,
    });
    let (mut gi, mut ii) = (0, 0);
    for t in thresholds {
        while gi < genuine.len() && genuine[gi] >= t {
            gi += 1;
        }
        while ii < impostor.len() && impostor[ii] >= t {
            ii += 1;
        }
        curve.push(RocPoint {
            threshold: t,
            far: ii as f64 / ni,
            vr: gi as f64 / ng,
        });
    }
    let mut out = Roc {
        curve,
        vr_at_far: Vec::new(),
    };
    out.vr_at_far = far_points.iter().map(|&f| (f, out.vr_at(f))).collect();
    Ok(out)
}

/// Divisor used for the between-class scatter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterNormalization {
    /// `1/N` over all samples.
    #[default]
    Samples,
    /// `1/c` over classes.
    Classes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub intra: f64,
    pub inter: f64,
}

/// `σ_intra = (1/c) Σ_i (1/N_i) Σ_{x∈X_i} ‖x − x̄_i‖²` and
/// `σ_inter = (1/N) Σ_i ‖x̄_i − x̄‖²` (or `1/c` with [`InterNormalization::Classes`]).
pub fn variance_analysis(
    embeddings: &Matrix,
    labels: &[usize],
    norm: InterNormalization,
) -> Result<VarianceStats, EvalError> {
    if labels.len() != embeddings.rows() {
        return Err(EvalError::LabelLength(labels.len(), embeddings.rows()));
    }
    let dim = embeddings.cols();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let c = groups.len();
    if c < 2 {
        return Err(EvalError::TooFewClasses(c));
    }
    let n = labels.len() as f64;
    let mut grand = vec![0.0; dim];
    for r in 0..embeddings.rows() {
        for (g, v) in grand.iter_mut().zip(embeddings.row(r)) {
            *g += v;
        }
    }
    grand.iter_mut().for_each(|g| *g /= n);

    let mut intra = 0.0;
    let mut inter = 0.0;
    for members in groups.values() {
        let ni = members.len() as f64;
        let mut mean = vec![0.0; dim];
        for &r in members {
            for (m, v) in mean.iter_mut().zip(embeddings.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= ni);
        let scatter: f64 = members
            .iter()
            .map(|&r| {
                embeddings
                    .row(r)
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum();
        intra += scatter / ni;
        inter += mean
            .iter()
            .zip(&grand)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    let inter_div = match norm {
        InterNormalization::Samples => n,
        InterNormalization::Classes => c as f64,
    };
    Ok(VarianceStats {
        intra: intra / c as f64,
        inter: inter / inter_div,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub dim: usize,
    pub intra: f64,
    pub inter: f64,
}

/// Scatter statistics after projecting onto the top-`d` principal
/// components (fit on these embeddings) for each requested `d`. An empty
/// `dims` means every `d` from 1 to the rank of the embeddings.
pub fn variance_curve(
    embeddings: &Matrix,
    labels: &[usize],
    dims: &[usize],
    norm: InterNormalization,
) -> Result<Vec<VariancePoint>, EvalError> {
    if labels.len() != embeddings.rows() {
        return Err(EvalError::LabelLength(labels.len(), embeddings.rows()));
    }
    let (n, width) = embeddings.shape();
    let mut centered = embeddings.clone();
    for j in 0..width {
        let mean = (0..n).map(|i| embeddings[(i, j)]).sum::<f64>() / n.max(1) as f64;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    let cov = centered.t_matmul(&centered)?.scale(1.0 / n.max(1) as f64);
    let eig = linalg::symmetric_eigen(&cov)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let rank = eig
        .values
        .iter()
        .filter(|&&v| v > top * 1e-12 && v > 0.0)
        .count();

    let every: Vec<usize> = (1..=rank).collect();
    let dims = if dims.is_empty() { &every[..] } else { dims };
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        if d == 0 || d > rank {
            return Err(EvalError::DimExceedsRank {
                requested: d,
                rank,
                width,
            });
        }
        let basis = Matrix::from_fn(width, d, |r, c| eig.vectors[(r, c)]);
        let projected = centered.matmul(&basis)?;
        let stats = variance_analysis(&projected, labels, norm)?;
        out.push(VariancePoint {
            dim: d,
            intra: stats.intra,
            inter: stats.inter,
        });
    }
    Ok(out)
}

/// Everything measured for one checkpoint on one gallery/probe split.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rank1: f64,
    pub roc: Vec<RocPoint>,
    pub vr_at_far: Vec<(f64, f64)>,
    pub sigma: Option<VarianceStats>,
    pub sigma_curve: Vec<VariancePoint>,
    pub correlation: Option<CorrelationMatrix>,
}

impl EvalReport {
    /// Rank-1 and ROC for probe embeddings against gallery embeddings.
    pub fn from_embeddings(
        probe: &Matrix,
        probe_labels: Vec<usize>,
        gallery: &Matrix,
        gallery_labels: Vec<usize>,
        far_points: &[f64],
    ) -> Result<Self, EvalError> {
        if probe.rows() == 0 {
            return Err(EvalError::EmptyProbe);
        }
        let sm = ScoreMatrix::score(probe, probe_labels, gallery, gallery_labels)?;
        let r1 = rank1(&sm)?;
        let curve = roc(&sm, far_points)?;
        Ok(Self {
            rank1: r1,
            roc: curve.curve,
            vr_at_far: curve.vr_at_far,
            sigma: None,
            sigma_curve: Vec::new(),
            correlation: None,
        })
    }

    pub fn vr_at(&self, far: f64) -> Option<f64> {
        self.vr_at_far
            .iter()
            .find(|(f, _)| *f == far)
            .map(|&(_, v)| v)
    }

    /// `key = value` summary lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# cdl-eval-report v1\n");
        writeln!(out, "rank1 = {}", self.rank1).unwrap();
        for (far, vr) in &self.vr_at_far {
            writeln!(out, "vr_at_far[{far}] = {vr}").unwrap();
        }
        if let Some(s) = self.sigma {
            writeln!(out, "sigma_intra = {}", s.intra).unwrap();
            writeln!(out, "sigma_inter = {}", s.inter).unwrap();
        }
        if let Some(c) = &self.correlation {
            writeln!(
                out,
                "correlation_cross_block_mean = {}",
                c.cross_block_diagonal_mean()
            )
            .unwrap();
            writeln!(
                out,
                "correlation_off_diagonal_median = {}",
                c.off_diagonal_median()
            )
            .unwrap();
        }
        writeln!(out, "roc_points = {}", self.roc.len()).unwrap();
        out
    }

    pub fn roc_csv(&self) -> String {
        roc_csv(&self.roc)
    }

    pub fn sigma_csv(&self) -> String {
        sigma_csv(&self.sigma_curve)
    }
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,far,vr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.far, p.vr).unwrap();
    }
    out
}

pub fn sigma_csv(points: &[VariancePoint]) -> String {
    let mut out = String::from("dim,sigma_intra,sigma_inter\n");
    for p in points {
        writeln!(out, "{},{},{}", p.dim, p.intra, p.inter).unwrap();
    }
    out
}

pub fn correlation_csv(c: &CorrelationMatrix) -> String {
    matrix_to_csv(&c.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert!((cosine_scores(&a, &a).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        let b = Matrix::from_rows(&[vec![-2.0, 1.0]]);
        assert_eq!(cosine_scores(&a, &b).unwrap()[(0, 0)], 0.0);

        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let g = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, -2.0]]);
        let s = cosine_scores(&p, &g).unwrap();
        let r2 = 2f64.sqrt();
        let expected = [[0.6, 0.0], [7.0 / (5.0 * r2), -1.0 / r2]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
        assert_eq!(
            cosine_scores(&Matrix::zeros(1, 2), &g).unwrap_err(),
            EvalError::ZeroNorm {
                set: "probe",
                index: 0
            }
        );
    }

    #[test]
    fn rank1_examples() {
        let sm = ScoreMatrix::new(Matrix::identity(3), vec![0, 1, 2], vec![0, 1, 2]).unwrap();
        assert_eq!(rank1(&sm).unwrap(), 1.0);

        let flat = ScoreMatrix::new(Matrix::zeros(4, 3), vec![5, 6, 5, 7], vec![5, 6, 7]).unwrap();
        assert_eq!(rank1(&flat).unwrap(), 0.5);

        let missing = ScoreMatrix::new(Matrix::zeros(1, 2), vec![9], vec![0, 1]).unwrap();
        assert_eq!(
            rank1(&missing).unwrap_err(),
            EvalError::MissingGalleryLabel { index: 0, label: 9 }
        );
    }

    #[test]
    fn rank1_matches_exhaustive_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scores = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let probe_labels = vec![0, 1, 2, 1, 0];
        let gallery_labels = vec![0, 1, 2];
        let sm =
            ScoreMatrix::new(scores.clone(), probe_labels.clone(), gallery_labels.clone()).unwrap();
        let mut hits = 0;
        for i in 0..5 {
            // correct iff the genuine score beats every impostor
            let genuine = scores[(i, probe_labels[i])];
            if (0..3).all(|j| j == probe_labels[i] || scores[(i, j)] < genuine) {
                hits += 1;
            }
        }
        assert_eq!(rank1(&sm).unwrap(), hits as f64 / 5.0);
    }

    #[test]
    fn perfectly_separated_roc() {
        let scores = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
        let sm = ScoreMatrix::new(scores, vec![0, 1], vec![0, 1]).unwrap();
        let r = roc(&sm, &[0.001, 0.01, 0.5]).unwrap();
        for &(_, vr) in &r.vr_at_far {
            assert_eq!(vr, 1.0);
        }
    }

    /// 6 scores: 3 genuine on the diagonal, 3 impostors.
    fn six_score_case() -> ScoreMatrix {
        // probe labels 0,1,2 ; gallery labels 0,1
        let scores = Matrix::from_rows(&[vec![0.8, 0.3], vec![0.6, 0.7], vec![0.5, 0.4]]);
        ScoreMatrix::new(scores, vec![0, 1, 0], vec![0, 1]).unwrap()
    }

    #[test]
    fn roc_matches_threshold_enumeration() {
        let sm = six_score_case();
        let (gen, imp) = sm.split_pairs();
        let r = roc(&sm, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        // every distinct score, descending
        let mut ts: Vec<f64> = gen.iter().chain(&imp).copied().collect();
        ts.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(r.curve.len(), ts.len() + 1);
        for (p, &t) in r.curve[1..].iter().zip(&ts) {
            let far = imp.iter().filter(|&&s| s >= t).count() as f64 / imp.len() as f64;
            let vr = gen.iter().filter(|&&s| s >= t).count() as f64 / gen.len() as f64;
            assert_eq!((p.threshold, p.far, p.vr), (t, far, vr));
        }
        // gen = {0.8, 0.7, 0.5}, imp = {0.3, 0.6, 0.4}
        assert_eq!(
            r.vr_at_far,
            vec![
                (0.0, 2.0 / 3.0),
                (1.0 / 3.0, 1.0),
                (2.0 / 3.0, 1.0),
                (1.0, 1.0)
            ]
        );
    }

    #[test]
    fn identical_distributions_give_vr_near_far() {
        // genuine and impostor multisets identical: {0.1, 0.2, ..., 0.9}
        let g: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        // Column 0 holds genuine scores (label 0), column 1 impostors (label 1).
        let scores = Matrix::from_fn(9, 2, |i, _| g[i]);
        let sm = ScoreMatrix::new(scores, vec![0; 9], vec![0, 1]).unwrap();
        let r = roc(&sm, &[]).unwrap();
        for p in &r.curve {
            assert!((p.vr - p.far).abs() < 1e-12);
        }
        assert_eq!(r.vr_at(4.0 / 9.0), 4.0 / 9.0);
    }

    #[test]
    fn roc_needs_genuine_pairs() {
        let sm = ScoreMatrix::new(Matrix::zeros(1, 1), vec![0], vec![1]).unwrap();
        assert_eq!(roc(&sm, &[0.1]).unwrap_err(), EvalError::NoGenuinePairs);
    }

    #[test]
    fn variance_examples() {
        let e = Matrix::from_rows(&[vec![1.0], vec![4.0], vec![9.0]]);
        let s = variance_analysis(&e, &[0, 1, 2], InterNormalization::Samples).unwrap();
        assert_eq!(s.intra, 0.0);

        let same = Matrix::from_rows(&vec![vec![2.0, 1.0]; 4]);
        let s = variance_analysis(&same, &[0, 0, 1, 1], InterNormalization::Samples).unwrap();
        assert_eq!(s.inter, 0.0);

        // class 0 at {0, 2}, class 1 at {5, 9}: means 1 and 7, grand mean 4
        let e = Matrix::from_rows(&[vec![0.0], vec![2.0], vec![5.0], vec![9.0]]);
        let s = variance_analysis(&e, &[0, 0, 1, 1], InterNormalization::Samples).unwrap();
        assert!((s.intra - 0.5 * (1.0 + 4.0)).abs() < 1e-15);
        assert!((s.inter - (9.0 + 9.0) / 4.0).abs() < 1e-15);
        let s = variance_analysis(&e, &[0, 0, 1, 1], InterNormalization::Classes).unwrap();
        assert!((s.inter - 9.0).abs() < 1e-15);

        assert_eq!(
            variance_analysis(&e, &[0, 0, 0, 0], InterNormalization::Samples).unwrap_err(),
            EvalError::TooFewClasses(1)
        );
    }

    fn random_embeddings(seed: u64, n: usize, d: usize) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..n).map(|i| i % 4).collect();
        (e, labels)
    }

    #[test]
    fn full_dimension_curve_equals_unprojected() {
        let (e, labels) = random_embeddings(3, 20, 5);
        let base = variance_analysis(&e, &labels, InterNormalization::Samples).unwrap();
        let curve = variance_curve(&e, &labels, &[5, 2, 5], InterNormalization::Samples).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0], curve[2]);
        assert_eq!(curve[1].dim, 2);
        assert!((curve[0].intra - base.intra).abs() < 1e-8);
        assert!((curve[0].inter - base.inter).abs() < 1e-8);
        assert!(matches!(
            variance_curve(&e, &labels, &[6], InterNormalization::Samples),
            Err(EvalError::DimExceedsRank { requested: 6, .. })
        ));
    }

    #[test]
    fn dominant_direction_carries_inter_class_scatter() {
        // class means spread along x, tiny noise in y and z
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..5 {
            for _ in 0..4 {
                rows.push(vec![
                    3.0 * c as f64 + rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                ]);
                labels.push(c);
            }
        }
        let e = Matrix::from_rows(&rows);
        let curve = variance_curve(&e, &labels, &[1, 3], InterNormalization::Samples).unwrap();
        assert!((curve[0].inter - curve[1].inter).abs() / curve[1].inter < 1e-4);
    }

    proptest! {
        #[test]
        fn rank1_invariant_under_monotone_map(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
            let pl = vec![0, 1, 2, 3, 0, 1];
            let gl = vec![0, 1, 2, 3];
            let a = rank1(&ScoreMatrix::new(s.clone(), pl.clone(), gl.clone()).unwrap()).unwrap();
            let b = rank1(&ScoreMatrix::new(s.map(|v| (3.0 * v).exp() - 1.0), pl, gl).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn roc_is_monotone(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Matrix::from_fn(8, 4, |_, _| (rng.random_range(-1.0..1.0) * 4.0f64).round() / 4.0);
            let sm = ScoreMatrix::new(s, (0..8).map(|i| i % 4).collect(), vec![0, 1, 2, 3]).unwrap();
            let r = roc(&sm, &[0.1]).unwrap();
            for w in r.curve.windows(2) {
                prop_assert!(w[1].far >= w[0].far && w[1].vr >= w[0].vr);
            }
        }

        #[test]
        fn variance_is_rotation_invariant(seed in any::<u64>()) {
            let (e, labels) = random_embeddings(seed, 12, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let q = linalg::svd(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap().u;
            let rotated = e.matmul(&q).unwrap();
            let a = variance_analysis(&e, &labels, InterNormalization::Samples).unwrap();
            let b = variance_analysis(&rotated, &labels, InterNormalization::Samples).unwrap();
            prop_assert!((a.intra - b.intra).abs() <= 1e-10);
            prop_assert!((a.inter - b.inter).abs() <= 1e-10);
        }

        #[test]
        fn scoring_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_fn(4, 3, |_, _| rng.random_range(0.1..1.0));
            let b = Matrix::from_fn(5, 3, |_, _| rng.random_range(0.1..1.0));
            let ab = cosine_scores(&a, &b).unwrap();
            let ba = cosine_scores(&b, &a).unwrap();
            prop_assert!(ab.transpose().sub(&ba).unwrap().frobenius_norm() <= 1e-12);
        }
    }
}
