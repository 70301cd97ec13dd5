//! Cross-modal triplet ranking: anchor and negative come from one modality,
//! the positive from the other; only semi-hard triplets are mined.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Modality;
use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankingError {
    #[error("triplet {index} references sample {sample} but the batch has {batch}")]
    IndexOutOfRange {
        index: usize,
        sample: usize,
        batch: usize,
    },
    #[error("margin must be positive, got {0}")]
    Margin(f64),
    #[error("max_triplets_per_anchor must be positive")]
    Cap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    pub margin: f64,
    pub max_triplets_per_anchor: usize,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            max_triplets_per_anchor: 4,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<(), RankingError> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(RankingError::Margin(self.margin));
        }
        if self.max_triplets_per_anchor == 0 {
            return Err(RankingError::Cap);
        }
        Ok(())
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean hinge `max(0, m + ‖a−p‖² − ‖a−n‖²)` over the triplets, with its
/// gradient w.r.t. every embedding. The hinge kink takes subgradient 0.
/// An empty triplet list yields zero loss and zero gradient.
pub fn triplet_loss(
    embeddings: &Matrix,
    triplets: &[Triplet],
    margin: f64,
) -> Result<(f64, Matrix), RankingError> {
    let batch = embeddings.rows();
    for (index, t) in triplets.iter().enumerate() {
        for sample in [t.anchor, t.positive, t.negative] {
            if sample >= batch {
                return Err(RankingError::IndexOutOfRange {
                    index,
                    sample,
                    batch,
                });
            }
        }
    }
    let mut grad = Matrix::zeros(batch, embeddings.cols());
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    for t in triplets {
        let a = embeddings.row(t.anchor);
        let p = embeddings.row(t.positive);
        let n = embeddings.row(t.negative);
        let act = margin + squared_distance(a, p) - squared_distance(a, n);
        if act <= 0.0 {
            continue;
        }
        loss += act;
        let dim = embeddings.cols();
        for k in 0..dim {
            let (ak, pk, nk) = (a[k], p[k], n[k]);
            grad[(t.anchor, k)] += scale * 2.0 * (nk - pk);
            grad[(t.positive, k)] += scale * -2.0 * (ak - pk);
            grad[(t.negative, k)] += scale * 2.0 * (ak - nk);
        }
    }
    Ok((loss * scale, grad))
}

fn pairwise_squared_distances(embeddings: &Matrix) -> Vec<f64> {
    let b = embeddings.rows();
    let mut d = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let v = squared_distance(embeddings.row(i), embeddings.row(j));
            d[i * b + j] = v;
            d[j * b + i] = v;
        }
    }
    d
}

/// Semi-hard cross-modal triplets: for anchor `a`, positive `p` of the same
/// label in the other modality, and negative `n` of a different label in the
/// anchor's modality, keep those with `d(a,p) < d(a,n) < d(a,p) + m`.
///
/// Each anchor keeps at most `max_triplets_per_anchor`, the hardest first
/// (largest `m + d(a,p) − d(a,n)`), ties broken by negative label, negative
/// index, then positive index. Output is ordered by anchor.
pub fn mine_triplets(
    embeddings: &Matrix,
    labels: &[usize],
    modalities: &[Modality],
    config: &RankingConfig,
) -> Vec<Triplet> {
    let b = embeddings.rows();
    debug_assert_eq!(labels.len(), b);
    debug_assert_eq!(modalities.len(), b);
    let m = config.margin;
    let dist = pairwise_squared_distances(embeddings);
    let mut out = Vec::new();
    let mut candidates: Vec<(f64, usize, usize, usize)> = Vec::new();
    for a in 0..b {
        candidates.clear();
        for p in 0..b {
            if labels[p] != labels[a] || modalities[p] == modalities[a] {
                continue;
            }
            let d_ap = dist[a * b + p];
            for n in 0..b {
                if labels[n] == labels[a] || modalities[n] != modalities[a] {
                    continue;
                }
                let d_an = dist[a * b + n];
                if d_ap < d_an && d_an < d_ap + m {
                    candidates.push((m + d_ap - d_an, labels[n], n, p));
                }
            }
        }
        candidates.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
                .then(x.3.cmp(&y.3))
        });
        out.extend(
            candidates
                .iter()
                .take(config.max_triplets_per_anchor)
                .map(|&(_, _, n, p)| Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                }),
        );
    }
    out
}

/// Unit-normalized rows plus the original norms for [`normalize_backward`].
pub fn normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows:
/// `(g − x̂(x̂·g)) / ‖x‖`.
pub fn normalize_backward(normalized: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(grad.rows(), grad.cols());
    for r in 0..grad.rows() {
        if norms[r] == 0.0 {
            continue;
        }
        let xh = normalized.row(r);
        let g = grad.row(r);
        let proj: f64 = xh.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (&gi, &xi)) in out.row_mut(r).iter_mut().zip(g.iter().zip(xh)) {
            *o = (gi - xi * proj) / norms[r];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck::{central_difference, CheckReport};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(a: usize, p: usize, n: usize) -> Triplet {
        Triplet {
            anchor: a,
            positive: p,
            negative: n,
        }
    }

    /// Points on a line so that squared distances are easy to place.
    fn line(points: &[f64]) -> Matrix {
        Matrix::from_rows(&points.iter().map(|&x| vec![x]).collect::<Vec<_>>())
    }

    #[test]
    fn inactive_hinge() {
        // d(a,p)² = 0.2, d(a,n)² = 0.9
        let e = line(&[0.0, 0.2f64.sqrt(), 0.9f64.sqrt()]);
        let (loss, g) = triplet_loss(&e, &[t(0, 1, 2)], 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.frobenius_norm(), 0.0);
    }

    #[test]
    fn identical_points_cost_margin() {
        let e = Matrix::from_rows(&vec![vec![0.3, 0.4]; 3]);
        let (loss, _) = triplet_loss(&e, &[t(0, 1, 2)], 0.7).unwrap();
        assert_eq!(loss, 0.7);
    }

    #[test]
    fn active_hinge_value() {
        // d(a,p)² = 0.5, d(a,n)² = 0.4, m = 0.2 → 0.3
        let e = line(&[0.0, 0.5f64.sqrt(), -(0.4f64.sqrt())]);
        let (loss, _) = triplet_loss(&e, &[t(0, 1, 2)], 0.2).unwrap();
        assert!((loss - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_triplets_and_bad_indices() {
        let e = line(&[0.0, 1.0]);
        let (loss, g) = triplet_loss(&e, &[], 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.frobenius_norm(), 0.0);
        assert_eq!(
            triplet_loss(&e, &[t(0, 1, 5)], 0.5).unwrap_err(),
            RankingError::IndexOutOfRange {
                index: 0,
                sample: 5,
                batch: 2
            }
        );
    }

    #[test]
    fn band_empty_when_negatives_far() {
        use Modality::*;
        let e = line(&[0.0, 0.1, 5.0, 5.1]);
        let mined = mine_triplets(
            &e,
            &[0, 0, 1, 1],
            &[Nir, Vis, Nir, Vis],
            &RankingConfig::default(),
        );
        assert!(mined.is_empty());
    }

    #[test]
    fn two_by_two_hand_case() {
        use Modality::*;
        // identity 0: a0 (NIR) at 0, p0 (VIS) with d² = 0.3; identity 1's NIR
        // sample at d² = 0.4 from a0. Mirror for VIS anchors.
        let e = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.3f64.sqrt(), 0.0],
            vec![0.0, 0.4f64.sqrt()],
            vec![0.3f64.sqrt(), 0.4f64.sqrt() + 1e-9],
        ]);
        let labels = [0, 0, 1, 1];
        let mods = [Nir, Vis, Nir, Vis];
        let cfg = RankingConfig {
            margin: 0.5,
            max_triplets_per_anchor: 4,
        };
        let mined = mine_triplets(&e, &labels, &mods, &cfg);
        assert!(mined.contains(&t(0, 1, 2)), "{mined:?}");
        assert!(mined.contains(&t(1, 0, 3)), "{mined:?}");
        for tr in &mined {
            assert_eq!(mods[tr.anchor], mods[tr.negative]);
            assert_ne!(mods[tr.anchor], mods[tr.positive]);
        }
    }

    #[test]
    fn cap_keeps_hardest() {
        use Modality::*;
        // anchor 0 (NIR, id 0), positive 1 (VIS, id 0) at d² = 1;
        // negatives at d² = 1.1, 1.2, 1.3 (all in band for m = 0.5).
        let e = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.3f64.sqrt()],
            vec![0.0, -(1.1f64.sqrt())],
            vec![-(1.2f64.sqrt()), 0.0],
        ]);
        let labels = [0, 0, 1, 2, 3];
        let mods = [Nir, Vis, Nir, Nir, Nir];
        let cfg = RankingConfig {
            margin: 0.5,
            max_triplets_per_anchor: 2,
        };
        let from_anchor0: Vec<Triplet> = mine_triplets(&e, &labels, &mods, &cfg)
            .into_iter()
            .filter(|tr| tr.anchor == 0)
            .collect();
        assert_eq!(from_anchor0, vec![t(0, 1, 3), t(0, 1, 4)]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut report = CheckReport::default();
        for _ in 0..5 {
            let e = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
            let trips = vec![t(0, 1, 2), t(3, 4, 5), t(0, 4, 5), t(2, 1, 0)];
            let margin = 0.8;
            // skip instances too close to a hinge kink
            let near_kink = trips.iter().any(|tr| {
                let act = margin + squared_distance(e.row(tr.anchor), e.row(tr.positive))
                    - squared_distance(e.row(tr.anchor), e.row(tr.negative));
                act.abs() < 1e-3
            });
            if near_kink {
                continue;
            }
            let (_, g) = triplet_loss(&e, &trips, margin).unwrap();
            for idx in 0..18 {
                let num = central_difference(
                    |d| {
                        let mut x = e.clone();
                        x.as_mut_slice()[idx] += d;
                        triplet_loss(&x, &trips, margin).unwrap().0
                    },
                    1e-5,
                );
                report.record(format!("{idx}"), g.as_slice()[idx], num, 1e-4);
            }
        }
        assert!(
            report.checked > 0 && report.passed(),
            "{:?}",
            report.failures
        );
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let (xh, norms) = normalize_rows(&x);
        let g = normalize_backward(&xh, &norms, &w);
        for idx in 0..12 {
            let num = central_difference(
                |d| {
                    let mut xx = x.clone();
                    xx.as_mut_slice()[idx] += d;
                    normalize_rows(&xx).0.frobenius_dot(&w)
                },
                1e-5,
            );
            assert!(crate::numcheck::relative_error(g.as_slice()[idx], num) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn mined_triplets_satisfy_constraints(seed in any::<u64>(), margin in 0.05f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 16;
            let e = normalize_rows(&Matrix::from_fn(b, 4, |_, _| rng.random_range(-1.0..1.0))).0;
            let labels: Vec<usize> = (0..b).map(|i| (i / 2) % 4).collect();
            let mods: Vec<Modality> = (0..b).map(|i| if i % 2 == 0 { Modality::Nir } else { Modality::Vis }).collect();
            let cfg = RankingConfig { margin, max_triplets_per_anchor: 3 };
            let mined = mine_triplets(&e, &labels, &mods, &cfg);
            for tr in &mined {
                let d_ap = squared_distance(e.row(tr.anchor), e.row(tr.positive));
                let d_an = squared_distance(e.row(tr.anchor), e.row(tr.negative));
                prop_assert!(d_ap < d_an && d_an < d_ap + margin);
                prop_assert_eq!(mods[tr.anchor], mods[tr.negative]);
                prop_assert_ne!(mods[tr.anchor], mods[tr.positive]);
                prop_assert_eq!(labels[tr.anchor], labels[tr.positive]);
                prop_assert_ne!(labels[tr.anchor], labels[tr.negative]);
            }
            let (loss, _) = triplet_loss(&e, &mined, margin).unwrap();
            prop_assert!(loss >= 0.0 && loss <= margin);
        }
    }
}
