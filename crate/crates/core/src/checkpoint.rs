//! Plain-text checkpoints of a [`TrainState`].
//!
//! ```text
//! # cdl-checkpoint v1
//! iteration 120
//! heads lambda=0.001 alpha1=1 alpha2=1 mu=0.000001 softmax_weight=1
//! layers 2
//! layer 64 128 max-feature-map
//! weight 128 64 <values>
//! bias 128 <values>
//! velocity_weight 128 64 <values>
//! velocity_bias 128 <values>
//! layer ...
//! w_n 32 100 <values>
//! w_v 32 100 <values>
//! gamma 32 32 <values>
//! gamma_inv 32 32 <values>
//! velocity_w_n 32 100 <values>
//! velocity_w_v 32 100 <values>
//! ```
//!
//! Matrices are row-major and values are space-separated. Floats are
//! written in Rust's shortest round-trip form, so save → load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coupling::{CoupledHeads, CouplingError, HeadParams};
use crate::linalg::Matrix;
use crate::net::{Activation, EmbeddingNet, Layer, LayerGrads, LayerSpec, NetError, NetGrads};
use crate::trainer::TrainState;

pub const HEADER: &str = "# cdl-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

pub fn to_text(state: &TrainState) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "iteration {}", state.iteration).unwrap();
    let p = state.heads.params;
    writeln!(
        out,
        "heads lambda={} alpha1={} alpha2={} mu={} softmax_weight={}",
        p.lambda, p.alpha1, p.alpha2, p.mu, p.softmax_weight
    )
    .unwrap();
    let layers = state.net.layers();
    writeln!(out, "layers {}", layers.len()).unwrap();
    for (layer, vel) in layers.iter().zip(&state.velocity_net.layers) {
        let s = layer.spec;
        writeln!(
            out,
            "layer {} {} {}",
            s.input_dim,
            s.output_dim,
            s.activation.name()
        )
        .unwrap();
        write_matrix(&mut out, "weight", &layer.weight);
        write_vector(&mut out, "bias", &layer.bias);
        write_matrix(&mut out, "velocity_weight", &vel.weight);
        write_vector(&mut out, "velocity_bias", &vel.bias);
    }
    write_matrix(&mut out, "w_n", &state.heads.w_n);
    write_matrix(&mut out, "w_v", &state.heads.w_v);
    write_matrix(&mut out, "gamma", state.heads.gamma());
    write_matrix(&mut out, "gamma_inv", state.heads.gamma_inv());
    write_matrix(&mut out, "velocity_w_n", &state.velocity_w_n);
    write_matrix(&mut out, "velocity_w_v", &state.velocity_w_v);
    out
}

fn write_values(out: &mut String, values: &[f64]) {
    for v in values {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

fn write_matrix(out: &mut String, key: &str, m: &Matrix) {
    write!(out, "{key} {} {}", m.rows(), m.cols()).unwrap();
    write_values(out, m.as_slice());
}

fn write_vector(out: &mut String, key: &str, v: &[f64]) {
    write!(out, "{key} {}", v.len()).unwrap();
    write_values(out, v);
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Parse {
            line: self.line,
            reason: reason.into(),
        }
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>, CheckpointError> {
        let (i, text) = self
            .inner
            .next()
            .ok_or_else(|| self.err(format!("missing `{key}`")))?;
        self.line = i + 1;
        let mut fields = text.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            other => Err(self.err(format!("expected `{key}`, found {other:?}"))),
        }
    }

    fn usize_field(&self, s: &str) -> Result<usize, CheckpointError> {
        s.parse()
            .map_err(|_| self.err(format!("invalid count {s:?}")))
    }

    fn floats(&self, fields: &[&str], expected: usize) -> Result<Vec<f64>, CheckpointError> {
        if fields.len() != expected {
            return Err(self.err(format!(
                "expected {expected} values, found {}",
                fields.len()
            )));
        }
        fields
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| self.err(format!("invalid number {s:?}")))
            })
            .collect()
    }

    fn matrix(&mut self, key: &str) -> Result<Matrix, CheckpointError> {
        let f = self.expect(key)?;
        if f.len() < 2 {
            return Err(self.err("missing matrix shape"));
        }
        let (r, c) = (self.usize_field(f[0])?, self.usize_field(f[1])?);
        let data = self.floats(&f[2..], r * c)?;
        Ok(Matrix::from_vec(r, c, data).expect("length checked"))
    }

    fn vector(&mut self, key: &str) -> Result<Vec<f64>, CheckpointError> {
        let f = self.expect(key)?;
        let n = self.usize_field(f.first().copied().unwrap_or(""))?;
        self.floats(&f[1..], n)
    }
}

pub fn from_text(text: &str) -> Result<TrainState, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    match lines.inner.next() {
        Some((_, h)) if h == HEADER => lines.line = 1,
        _ => {
            return Err(CheckpointError::Parse {
                line: 1,
                reason: format!("expected header `{HEADER}`"),
            })
        }
    }
    let f = lines.expect("iteration")?;
    let iteration = lines.usize_field(f.first().copied().unwrap_or(""))?;

    let f = lines.expect("heads")?;
    let mut params = HeadParams::default();
    let mut seen = 0;
    for kv in &f {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| lines.err(format!("expected key=value, found {kv:?}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| lines.err(format!("invalid number for {k}")))?;
        match k {
            "lambda" => params.lambda = v,
            "alpha1" => params.alpha1 = v,
            "alpha2" => params.alpha2 = v,
            "mu" => params.mu = v,
            "softmax_weight" => params.softmax_weight = v,
            _ => return Err(lines.err(format!("unknown head parameter {k:?}"))),
        }
        seen += 1;
    }
    if seen != 5 {
        return Err(lines.err("heads line needs all five parameters"));
    }

    let f = lines.expect("layers")?;
    let count = lines.usize_field(f.first().copied().unwrap_or(""))?;
    let mut layers = Vec::with_capacity(count);
    let mut velocity = Vec::with_capacity(count);
    for _ in 0..count {
        let f = lines.expect("layer")?;
        if f.len() != 3 {
            return Err(lines.err("layer line needs input_dim output_dim activation"));
        }
        let activation = Activation::from_name(f[2])
            .ok_or_else(|| lines.err(format!("unknown activation {:?}", f[2])))?;
        let spec = LayerSpec::new(
            lines.usize_field(f[0])?,
            lines.usize_field(f[1])?,
            activation,
        );
        let weight = lines.matrix("weight")?;
        let bias = lines.vector("bias")?;
        let vel_w = lines.matrix("velocity_weight")?;
        let vel_b = lines.vector("velocity_bias")?;
        if vel_w.shape() != weight.shape() || vel_b.len() != bias.len() {
            return Err(lines.err("velocity shape differs from its parameter"));
        }
        layers.push(Layer { spec, weight, bias });
        velocity.push(LayerGrads {
            weight: vel_w,
            bias: vel_b,
        });
    }
    let net = EmbeddingNet::from_layers(layers)?;
    let w_n = lines.matrix("w_n")?;
    let w_v = lines.matrix("w_v")?;
    let gamma = lines.matrix("gamma")?;
    let gamma_inv = lines.matrix("gamma_inv")?;
    let velocity_w_n = lines.matrix("velocity_w_n")?;
    let velocity_w_v = lines.matrix("velocity_w_v")?;
    if velocity_w_n.shape() != w_n.shape() || velocity_w_v.shape() != w_v.shape() {
        return Err(lines.err("head velocity shape differs from the heads"));
    }
    if net.embedding_dim() != w_n.rows() {
        return Err(lines.err(format!(
            "net emits {} features but heads expect {}",
            net.embedding_dim(),
            w_n.rows()
        )));
    }
    if lines.inner.any(|(_, l)| !l.trim().is_empty()) {
        return Err(lines.err("trailing content after the last section"));
    }
    let heads = CoupledHeads::from_stored(w_n, w_v, gamma, gamma_inv, params)?;
    Ok(TrainState {
        net,
        heads,
        velocity_net: NetGrads { layers: velocity },
        velocity_w_n,
        velocity_w_v,
        iteration,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_text(state)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<TrainState, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_text(&text)
}
