use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::signal_io::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(format!("unknown cell kind `{other}` (expected gru or lstm)")),
        }
    }
}

/// GRU weights act on the concatenation `[h_prev, x]`: columns `0..H` see the
/// previous state (for the candidate, the reset-gated state), columns `H..`
/// see the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_u: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub b_u: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        Self {
            w_u: w(),
            w_r: w(),
            w_h: w(),
            b_u: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_u.rows()
    }

    pub fn input(&self) -> usize {
        self.w_u.cols() - self.hidden()
    }
}

/// LSTM weights, laid out like [`GruCellParams`]: forget `f`, input `g`,
/// candidate state `s` and output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_f: Matrix,
    pub w_g: Matrix,
    pub w_s: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_g: Vec<f64>,
    pub b_s: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        Self {
            w_f: w(),
            w_g: w(),
            w_s: w(),
            w_o: w(),
            b_f: vec![0.0; hidden],
            b_g: vec![0.0; hidden],
            b_s: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Gru(GruCellParams),
    Lstm(LstmCellParams),
}

impl CellParams {
    pub fn zeros(kind: CellKind, hidden: usize, input: usize) -> Self {
        match kind {
            CellKind::Gru => CellParams::Gru(GruCellParams::zeros(hidden, input)),
            CellKind::Lstm => CellParams::Lstm(LstmCellParams::zeros(hidden, input)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    fn tensors(&self) -> Vec<(&'static str, [usize; 2], &[f64])> {
        let v = |b: &Vec<f64>| [b.len(), 1];
        match self {
            CellParams::Gru(p) => vec![
                ("w_u", p.w_u.shape(), p.w_u.as_slice()),
                ("w_r", p.w_r.shape(), p.w_r.as_slice()),
                ("w_h", p.w_h.shape(), p.w_h.as_slice()),
                ("b_u", v(&p.b_u), p.b_u.as_slice()),
                ("b_r", v(&p.b_r), p.b_r.as_slice()),
                ("b_h", v(&p.b_h), p.b_h.as_slice()),
            ],
            CellParams::Lstm(p) => vec![
                ("w_f", p.w_f.shape(), p.w_f.as_slice()),
                ("w_g", p.w_g.shape(), p.w_g.as_slice()),
                ("w_s", p.w_s.shape(), p.w_s.as_slice()),
                ("w_o", p.w_o.shape(), p.w_o.as_slice()),
                ("b_f", v(&p.b_f), p.b_f.as_slice()),
                ("b_g", v(&p.b_g), p.b_g.as_slice()),
                ("b_s", v(&p.b_s), p.b_s.as_slice()),
                ("b_o", v(&p.b_o), p.b_o.as_slice()),
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellParams::Gru(p) => vec![
                p.w_u.as_mut_slice(),
                p.w_r.as_mut_slice(),
                p.w_h.as_mut_slice(),
                &mut p.b_u,
                &mut p.b_r,
                &mut p.b_h,
            ],
            CellParams::Lstm(p) => vec![
                p.w_f.as_mut_slice(),
                p.w_g.as_mut_slice(),
                p.w_s.as_mut_slice(),
                p.w_o.as_mut_slice(),
                &mut p.b_f,
                &mut p.b_g,
                &mut p.b_s,
                &mut p.b_o,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLayerParams {
    pub forward: CellParams,
    pub backward: CellParams,
}

/// Classification head: two logits from the `2H`-wide top-layer output.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Two stacked bidirectional recurrent layers plus the relu/softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cell_kind: CellKind,
    pub hidden_size: usize,
    pub input_size: usize,
    pub layer1: BiLayerParams,
    pub layer2: BiLayerParams,
    pub head: HeadParams,
}

const LAYER_NAMES: [[&str; 2]; 2] = [["layer1.forward", "layer1.backward"], ["layer2.forward", "layer2.backward"]];

impl ModelParams {
    pub fn zeros(cell_kind: CellKind, hidden_size: usize, input_size: usize) -> Self {
        let h = hidden_size;
        let layer = |input| BiLayerParams {
            forward: CellParams::zeros(cell_kind, h, input),
            backward: CellParams::zeros(cell_kind, h, input),
        };
        Self {
            cell_kind,
            hidden_size,
            input_size,
            layer1: layer(input_size),
            layer2: layer(2 * h),
            head: HeadParams {
                w: Matrix::zeros(Stage::COUNT, 2 * h),
                b: vec![0.0; Stage::COUNT],
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cell_kind, self.hidden_size, self.input_size)
    }

    /// Every tensor in canonical order, with dotted names such as
    /// `layer2.backward.w_r` or `head.b`.
    pub fn tensors(&self) -> Vec<(String, [usize; 2], &[f64])> {
        let mut out = Vec::new();
        for (li, layer) in [&self.layer1, &self.layer2].into_iter().enumerate() {
            for (di, cell) in [&layer.forward, &layer.backward].into_iter().enumerate() {
                for (name, shape, data) in cell.tensors() {
                    out.push((format!("{}.{name}", LAYER_NAMES[li][di]), shape, data));
                }
            }
        }
        out.push(("head.w".into(), self.head.w.shape(), self.head.w.as_slice()));
        out.push(("head.b".into(), [self.head.b.len(), 1], self.head.b.as_slice()));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in [&mut self.layer1, &mut self.layer2] {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        out.push(self.head.w.as_mut_slice());
        out.push(&mut self.head.b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Flattened copy of every parameter in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, _, d)| d.iter().copied()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.cell_kind == other.cell_kind
            && self.hidden_size == other.hidden_size
            && self.input_size == other.input_size
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, _, data) in self.tensors() {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name}[{i}] = {}", data[i])));
            }
        }
        Ok(())
    }

    /// Sum of squares over every entry.
    pub fn norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "parameter shapes differ");
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, _, d)| d).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }
}

/// Weights i.i.d. uniform on `[−1/√H, 1/√H]`, biases zero. The draw order
/// follows [`ModelParams::tensors`], so a seed fully determines the result.
pub fn init_params(cell_kind: CellKind, hidden_size: usize, input_size: usize, seed: u64) -> Result<ModelParams> {
    if hidden_size == 0 {
        return Err(Error::Config("hidden size must be at least 1".into()));
    }
    if input_size == 0 {
        return Err(Error::Config("input size must be at least 1".into()));
    }
    let mut params = ModelParams::zeros(cell_kind, hidden_size, input_size);
    let bound = 1.0 / (hidden_size as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let is_weight: Vec<bool> = params.tensors().iter().map(|(_, s, _)| s[1] > 1).collect();
    for (t, weight) in params.tensors_mut().into_iter().zip(is_weight) {
        if weight {
            t.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        }
    }
    Ok(params)
}
