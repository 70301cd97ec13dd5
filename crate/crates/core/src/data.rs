//! Two-modality datasets: synthetic generation, a plain-text file format,
//! and identity-balanced batch sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: expected {expected} features, found {actual}")]
    Width {
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("row {row}: modality must be 0 or 1, found {value}")]
    Modality { row: usize, value: String },
    #[error("row {row}: non-finite feature")]
    NonFinite { row: usize },
    #[error("cannot draw {requested} identities: only {available} eligible ({paired} with both modalities)")]
    ImpossibleBatch {
        requested: usize,
        available: usize,
        paired: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

/// Imaging domain of a sample: 0 = NIR-like, 1 = VIS-like.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Nir = 0,
    Vis = 1,
}

impl Modality {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Modality::Nir),
            1 => Some(Modality::Vis),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Nir => Modality::Vis,
            Modality::Vis => Modality::Nir,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub modality: Modality,
}

/// An immutable set of samples sharing one feature width.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    input_dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(input_dim: usize, samples: Vec<Sample>) -> Result<Self, DataError> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != input_dim {
                return Err(DataError::Width {
                    row: i + 1,
                    expected: input_dim,
                    actual: s.features.len(),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(DataError::NonFinite { row: i + 1 });
            }
        }
        Ok(Self { input_dim, samples })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Number of softmax classes needed to cover every label.
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples
            .iter()
            .filter(|s| s.modality == modality)
            .count()
    }

    pub fn features(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.samples.len() * self.input_dim);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        Matrix::from_vec(self.samples.len(), self.input_dim, data).expect("validated widths")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.samples.iter().map(|s| s.modality).collect()
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DataError> {
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let dim = if self.is_empty() {
            other.input_dim
        } else {
            self.input_dim
        };
        Dataset::new(dim, samples)
    }

    /// Native file contents: a header line, then `label,modality,features…`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{NATIVE_TAG} input_dim={}\n", self.input_dim);
        for s in &self.samples {
            write!(out, "{},{}", s.label, s.modality.index()).unwrap();
            for v in &s.features {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_text()).map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

const NATIVE_TAG: &str = "# cdl-dataset v1";

/// How a feature file is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// Header `# cdl-dataset v1 input_dim=D`, then `label,modality,f1,…,fD`.
    #[default]
    Native,
    /// Bare rows `label,modality,f1,…`; width taken from the first row.
    Csv { has_header: bool },
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Dataset, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut declared_dim = None;
    match format {
        DatasetFormat::Native => {
            if let Some((row, header)) = lines.next() {
                let rest = header
                    .strip_prefix(NATIVE_TAG)
                    .ok_or_else(|| DataError::Malformed {
                        row,
                        reason: format!("expected header starting with `{NATIVE_TAG}`"),
                    })?;
                let dim = rest
                    .trim()
                    .strip_prefix("input_dim=")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| DataError::Malformed {
                        row,
                        reason: "header must declare input_dim=<n>".into(),
                    })?;
                declared_dim = Some(dim);
            }
        }
        DatasetFormat::Csv { has_header: true } => {
            lines.next();
        }
        DatasetFormat::Csv { has_header: false } => {}
    }

    let mut samples = Vec::new();
    for (row, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("").trim();
        let label = label_field
            .parse::<usize>()
            .map_err(|_| DataError::Malformed {
                row,
                reason: format!("label `{label_field}` is not a non-negative integer"),
            })?;
        let mod_field = fields.next().ok_or_else(|| DataError::Malformed {
            row,
            reason: "missing modality".into(),
        })?;
        let modality = mod_field
            .trim()
            .parse::<usize>()
            .ok()
            .and_then(Modality::from_index)
            .ok_or_else(|| DataError::Modality {
                row,
                value: mod_field.trim().to_owned(),
            })?;
        let features = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| DataError::Malformed {
                    row,
                    reason: format!("feature `{}` is not a number", f.trim()),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row });
        }
        let expected = *declared_dim.get_or_insert(features.len());
        if features.len() != expected {
            return Err(DataError::Width {
                row,
                expected,
                actual: features.len(),
            });
        }
        samples.push(Sample {
            features,
            label,
            modality,
        });
    }
    Dataset::new(declared_dim.unwrap_or(0), samples)
}

/// Parameters of the latent-factor generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Training identities.
    pub identities: usize,
    /// Held-out identities for gallery and probe.
    pub test_identities: usize,
    pub samples_per_identity_per_modality: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    /// Size of the modality-specific perturbation of the shared projection.
    pub modality_transform_scale: f64,
    /// Observation noise standard deviation.
    pub noise_sigma: f64,
    /// Set from the top-level config seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            identities: 100,
            test_identities: 40,
            samples_per_identity_per_modality: 6,
            latent_dim: 16,
            input_dim: 64,
            modality_transform_scale: 1.0,
            noise_sigma: 0.3,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("identities", self.identities),
            ("test_identities", self.test_identities),
            (
                "samples_per_identity_per_modality",
                self.samples_per_identity_per_modality,
            ),
            ("latent_dim", self.latent_dim),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(DataError::Spec(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::Spec("noise_sigma must be non-negative".into()));
        }
        if !(self.modality_transform_scale >= 0.0 && self.modality_transform_scale.is_finite()) {
            return Err(DataError::Spec(
                "modality_transform_scale must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn train_rows(&self) -> usize {
        self.identities * self.samples_per_identity_per_modality * 2
    }

    pub fn gallery_rows(&self) -> usize {
        self.test_identities
    }

    pub fn probe_rows(&self) -> usize {
        self.test_identities * self.samples_per_identity_per_modality
    }
}

/// Nearest-neighbour rank-1 of probe against gallery, measured once in
/// raw input space and once on the generating latents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityGap {
    pub raw_rank1: f64,
    pub latent_rank1: f64,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Dataset,
    pub gallery: Dataset,
    pub probe: Dataset,
    pub gap: ModalityGap,
}

/// Observation model: per identity a latent `z ~ N(0, I)`; a sample in
/// modality `i` is `tanh(A_i z + b_i) + ε` with `A_i = A + s·E_i`,
/// `b_i = s·c_i` and `ε ~ N(0, σ²I)`.
///
/// Training identities are labelled `0..identities`; held-out identities
/// follow and are split into a gallery (one VIS sample each) and a probe
/// (all NIR samples).
pub fn generate(spec: &SynthSpec) -> Result<SynthData, DataError> {
    spec.validate()?;
    let (d, l) = (spec.input_dim, spec.latent_dim);
    let s = spec.modality_transform_scale;
    let mut rng = rng::fork(spec.seed, "synth-transforms");
    let proj = Normal::new(0.0, (1.0 / l as f64).sqrt()).expect("positive std");
    let shared = Matrix::from_fn(d, l, |_, _| proj.sample(&mut rng));
    let transforms: Vec<(Matrix, Vec<f64>)> = (0..2)
        .map(|_| {
            let e = Matrix::from_fn(d, l, |_, _| proj.sample(&mut rng));
            let mut a = shared.clone();
            a.axpy(s, &e).expect("same shape");
            let b = (0..d)
                .map(|_| {
                    s * 0.5 * {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v
                    }
                })
                .collect();
            (a, b)
        })
        .collect();

    let total = spec.identities + spec.test_identities;
    let mut latent_rng = rng::fork(spec.seed, "synth-latents");
    let latents: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            (0..l)
                .map(|_| StandardNormal.sample(&mut latent_rng))
                .collect()
        })
        .collect();

    let mut noise_rng = rng::fork(spec.seed, "synth-noise");
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut observe = |z: &[f64], modality: Modality| -> Vec<f64> {
        let (a, b) = &transforms[modality.index()];
        (0..d)
            .map(|r| {
                let pre: f64 = a.row(r).iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + b[r];
                let clean = pre.tanh();
                if spec.noise_sigma > 0.0 {
                    clean + noise.sample(&mut noise_rng)
                } else {
                    clean
                }
            })
            .collect()
    };

    let k = spec.samples_per_identity_per_modality;
    let mut train = Vec::with_capacity(spec.train_rows());
    for id in 0..spec.identities {
        for modality in [Modality::Nir, Modality::Vis] {
            for _ in 0..k {
                train.push(Sample {
                    features: observe(&latents[id], modality),
                    label: id,
                    modality,
                });
            }
        }
    }
    let mut gallery = Vec::with_capacity(spec.gallery_rows());
    let mut probe = Vec::with_capacity(spec.probe_rows());
    for id in spec.identities..total {
        gallery.push(Sample {
            features: observe(&latents[id], Modality::Vis),
            label: id,
            modality: Modality::Vis,
        });
        for _ in 0..k {
            probe.push(Sample {
                features: observe(&latents[id], Modality::Nir),
                label: id,
                modality: Modality::Nir,
            });
        }
    }
    let train = Dataset::new(d, train)?;
    let gallery = Dataset::new(d, gallery)?;
    let probe = Dataset::new(d, probe)?;

    let raw_rank1 = nearest_neighbour_rank1(
        probe
            .samples()
            .iter()
            .map(|s| (s.features.as_slice(), s.label)),
        gallery
            .samples()
            .iter()
            .map(|s| (s.features.as_slice(), s.label)),
    );
    let latent_rank1 = nearest_neighbour_rank1(
        probe
            .samples()
            .iter()
            .map(|s| (latents[s.label].as_slice(), s.label)),
        gallery
            .samples()
            .iter()
            .map(|s| (latents[s.label].as_slice(), s.label)),
    );
    Ok(SynthData {
        train,
        gallery,
        probe,
        gap: ModalityGap {
            raw_rank1,
            latent_rank1,
        },
    })
}

/// Euclidean nearest-neighbour identification rate; ties go to the first
/// gallery entry.
pub fn nearest_neighbour_rank1<'a>(
    probe: impl Iterator<Item = (&'a [f64], usize)>,
    gallery: impl Iterator<Item = (&'a [f64], usize)> + Clone,
) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, label) in probe {
        total += 1;
        let mut best = (f64::INFINITY, usize::MAX);
        for (g, gl) in gallery.clone() {
            let d: f64 = p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, gl);
            }
        }
        if best.1 == label {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// A mini-batch: features as rows plus per-row label and modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            features: ds.features(),
            labels: ds.labels(),
            modalities: ds.modalities(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_both_modalities(&self) -> bool {
        self.modalities.contains(&Modality::Nir) && self.modalities.contains(&Modality::Vis)
    }
}

/// Which identities a batch may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Only identities with samples in both modalities.
    PairedOnly,
    /// Any identity; single-modality identities still feed the softmax and
    /// serve as anchors or negatives.
    #[default]
    IncludeUnpaired,
}

/// Per-identity, per-modality index of a dataset for repeated batch draws.
#[derive(Clone, Debug)]
pub struct BatchSampler<'a> {
    dataset: &'a Dataset,
    cells: Vec<(usize, [Vec<usize>; 2])>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        let mut map: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
        for (i, s) in dataset.samples().iter().enumerate() {
            map.entry(s.label).or_default()[s.modality.index()].push(i);
        }
        Self {
            dataset,
            cells: map.into_iter().collect(),
        }
    }

    pub fn paired_identities(&self) -> usize {
        self.cells
            .iter()
            .filter(|(_, c)| !c[0].is_empty() && !c[1].is_empty())
            .count()
    }

    /// Draws `p` distinct identities and up to `k` samples per modality for
    /// each, without replacement inside an identity-modality cell.
    pub fn sample(
        &self,
        p: usize,
        k: usize,
        mode: SamplingMode,
        rng: &mut impl Rng,
    ) -> Result<Batch, DataError> {
        let eligible: Vec<usize> = (0..self.cells.len())
            .filter(|&i| {
                let c = &self.cells[i].1;
                match mode {
                    SamplingMode::PairedOnly => !c[0].is_empty() && !c[1].is_empty(),
                    SamplingMode::IncludeUnpaired => true,
                }
            })
            .collect();
        if p == 0 || k == 0 || eligible.len() < p {
            return Err(DataError::ImpossibleBatch {
                requested: p,
                available: eligible.len(),
                paired: self.paired_identities(),
            });
        }
        let chosen = index::sample(rng, eligible.len(), p);
        let mut rows = Vec::with_capacity(p * k * 2);
        for ci in chosen.iter() {
            let cell = &self.cells[eligible[ci]].1;
            for members in cell {
                let take = k.min(members.len());
                for j in index::sample(rng, members.len(), take).iter() {
                    rows.push(members[j]);
                }
            }
        }
        let samples = self.dataset.samples();
        let dim = self.dataset.input_dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for &r in &rows {
            data.extend_from_slice(&samples[r].features);
        }
        Ok(Batch {
            features: Matrix::from_vec(rows.len(), dim, data).expect("widths"),
            labels: rows.iter().map(|&r| samples[r].label).collect(),
            modalities: rows.iter().map(|&r| samples[r].modality).collect(),
        })
    }
}

/// One-shot convenience over [`BatchSampler`].
pub fn sample_batch(
    dataset: &Dataset,
    p_identities: usize,
    k_per_modality: usize,
    rng: &mut impl Rng,
) -> Result<Batch, DataError> {
    BatchSampler::new(dataset).sample(p_identities, k_per_modality, SamplingMode::PairedOnly, rng)
}
