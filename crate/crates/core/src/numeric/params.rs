//! Learnable arrays, their fixed block order, seeded initialisation and the
//! binary checkpoint format.
//!
//! Block order (also the checkpoint order):
//!
//! 1. `pos_emb` (positions x d)
//! 2. `user_init`, `user_cell_init` (users x d)
//! 3. `comp_init`, `comp_cell_init` (companies x d)
//! 4. `user_grnn.*` matrices then biases, in the cell's gate order
//! 5. `comp_grnn.*`
//! 6. with position evolution only: `pos_cell_init`, then `pos_grnn.*`
//!
//! Every block is row-major. Initial values are drawn uniform in
//! `[-1/sqrt(d), 1/sqrt(d))` from one ChaCha8 stream, block by block in the
//! order above.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CaperError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CAPER1";

/// Recurrent cell used for the evolution encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    /// LSTM exactly as printed: linear gates, no biases.
    PaperLstm,
    /// Standard LSTM with sigmoid gates, tanh candidate and biases.
    Lstm,
    Gru,
    /// Elman cell, `tanh(W1 h + W2 x + b)`.
    Rnn,
    /// Evolution disabled: the new hidden state is the input.
    Identity,
}

impl CellKind {
    pub const SELECTABLE: [CellKind; 4] = [CellKind::PaperLstm, CellKind::Lstm, CellKind::Gru, CellKind::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::PaperLstm => "paper-lstm",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Rnn => "rnn",
            CellKind::Identity => "identity",
        }
    }

    pub fn matrix_names(self) -> &'static [&'static str] {
        match self {
            CellKind::PaperLstm | CellKind::Lstm => &["W_f1", "W_f2", "W_i1", "W_i2", "W_g1", "W_g2", "W_o1", "W_o2"],
            CellKind::Gru => &["W_r1", "W_r2", "W_z1", "W_z2", "W_n1", "W_n2"],
            CellKind::Rnn => &["W_1", "W_2"],
            CellKind::Identity => &[],
        }
    }

    pub fn bias_names(self) -> &'static [&'static str] {
        match self {
            CellKind::PaperLstm | CellKind::Identity => &[],
            CellKind::Lstm => &["b_f", "b_i", "b_g", "b_o"],
            CellKind::Gru => &["b_r", "b_z", "b_n"],
            CellKind::Rnn => &["b"],
        }
    }

    /// Whether the cell carries a separate cell-state vector.
    pub fn has_cell_state(self) -> bool {
        matches!(self, CellKind::PaperLstm | CellKind::Lstm)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = CaperError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-lstm" => Ok(CellKind::PaperLstm),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "rnn" => Ok(CellKind::Rnn),
            other => Err(CaperError::UnknownCellKind(other.to_owned())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub users: usize,
    pub companies: usize,
    pub positions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub dims: Dims,
    pub cell: CellKind,
    /// Adds a third evolution encoder for positions.
    pub position_evolution: bool,
}

/// Weights of one recurrent encoder, shared across all entities of a kind.
#[derive(Clone, Debug, PartialEq)]
pub struct GrnnWeights {
    pub kind: CellKind,
    /// `d x d` matrices in [`CellKind::matrix_names`] order.
    pub mats: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GrnnWeights {
    pub fn zeros(kind: CellKind, d: usize) -> Self {
        Self {
            kind,
            mats: kind.matrix_names().iter().map(|_| Array2::zeros((d, d))).collect(),
            biases: kind.bias_names().iter().map(|_| Array1::zeros(d)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mats
            .first()
            .map(|m| m.nrows())
            .or_else(|| self.biases.first().map(|b| b.len()))
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    layout: ParamLayout,
    /// Static position embeddings; with position evolution these are the
    /// initial position states instead.
    pub pos_emb: Array2<f64>,
    pub user_init: Array2<f64>,
    pub user_cell_init: Array2<f64>,
    pub comp_init: Array2<f64>,
    pub comp_cell_init: Array2<f64>,
    pub user_grnn: GrnnWeights,
    pub comp_grnn: GrnnWeights,
    pub pos_cell_init: Option<Array2<f64>>,
    pub pos_grnn: Option<GrnnWeights>,
}

impl ParameterStore {
    pub fn zeros(layout: ParamLayout) -> Self {
        let Dims {
            d,
            users,
            companies,
            positions,
        } = layout.dims;
        Self {
            layout,
            pos_emb: Array2::zeros((positions, d)),
            user_init: Array2::zeros((users, d)),
            user_cell_init: Array2::zeros((users, d)),
            comp_init: Array2::zeros((companies, d)),
            comp_cell_init: Array2::zeros((companies, d)),
            user_grnn: GrnnWeights::zeros(layout.cell, d),
            comp_grnn: GrnnWeights::zeros(layout.cell, d),
            pos_cell_init: layout.position_evolution.then(|| Array2::zeros((positions, d))),
            pos_grnn: layout.position_evolution.then(|| GrnnWeights::zeros(layout.cell, d)),
        }
    }

    /// Seeded uniform initialisation in the documented block order.
    pub fn init(layout: ParamLayout, seed: u64) -> Self {
        let mut store = Self::zeros(layout);
        let bound = 1.0 / (layout.dims.d.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, block) in store.blocks_mut() {
            for x in block.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        }
        store
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout)
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Named read-only views of every block in checkpoint order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        fn grnn<'a>(prefix: &str, w: &'a GrnnWeights, out: &mut Vec<(String, &'a [f64])>) {
            for (name, m) in w.kind.matrix_names().iter().zip(&w.mats) {
                out.push((format!("{prefix}.{name}"), m.as_slice().expect("standard layout")));
            }
            for (name, b) in w.kind.bias_names().iter().zip(&w.biases) {
                out.push((format!("{prefix}.{name}"), b.as_slice().expect("standard layout")));
            }
        }
        let mut out = vec![
            ("pos_emb".to_owned(), flat(&self.pos_emb)),
            ("user_init".to_owned(), flat(&self.user_init)),
            ("user_cell_init".to_owned(), flat(&self.user_cell_init)),
            ("comp_init".to_owned(), flat(&self.comp_init)),
            ("comp_cell_init".to_owned(), flat(&self.comp_cell_init)),
        ];
        grnn("user_grnn", &self.user_grnn, &mut out);
        grnn("comp_grnn", &self.comp_grnn, &mut out);
        if let (Some(cell), Some(w)) = (&self.pos_cell_init, &self.pos_grnn) {
            out.push(("pos_cell_init".to_owned(), flat(cell)));
            grnn("pos_grnn", w, &mut out);
        }
        out
    }

    /// Named mutable views of every block in checkpoint order.
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        fn grnn<'a>(prefix: &str, w: &'a mut GrnnWeights, out: &mut Vec<(String, &'a mut [f64])>) {
            let kind = w.kind;
            for (name, m) in kind.matrix_names().iter().zip(w.mats.iter_mut()) {
                out.push((format!("{prefix}.{name}"), m.as_slice_mut().expect("standard layout")));
            }
            for (name, b) in kind.bias_names().iter().zip(w.biases.iter_mut()) {
                out.push((format!("{prefix}.{name}"), b.as_slice_mut().expect("standard layout")));
            }
        }
        let Self {
            pos_emb,
            user_init,
            user_cell_init,
            comp_init,
            comp_cell_init,
            user_grnn,
            comp_grnn,
            pos_cell_init,
            pos_grnn,
            ..
        } = self;
        let mut out = vec![
            ("pos_emb".to_owned(), slice_mut(pos_emb)),
            ("user_init".to_owned(), slice_mut(user_init)),
            ("user_cell_init".to_owned(), slice_mut(user_cell_init)),
            ("comp_init".to_owned(), slice_mut(comp_init)),
            ("comp_cell_init".to_owned(), slice_mut(comp_cell_init)),
        ];
        grnn("user_grnn", user_grnn, &mut out);
        grnn("comp_grnn", comp_grnn, &mut out);
        if let (Some(cell), Some(w)) = (pos_cell_init, pos_grnn) {
            out.push(("pos_cell_init".to_owned(), slice_mut(cell)));
            grnn("pos_grnn", w, &mut out);
        }
        out
    }

    pub fn fill(&mut self, value: f64) {
        for (_, b) in self.blocks_mut() {
            b.fill(value);
        }
    }

    /// Global L2 norm over all blocks.
    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Errors with the first block holding a NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, b) in self.blocks() {
            if !b.iter().all(|x| x.is_finite()) {
                return Err(CaperError::NaNGradient { block: name });
            }
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = self.dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        for n in [dims.d, dims.users, dims.companies, dims.positions] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for (_, block) in self.blocks() {
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(6 + 32 + 8 * self.num_parameters());
        self.write_checkpoint(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    /// Reads a checkpoint. The header fixes the dimensions; the cell kind and
    /// position-evolution flag fix which blocks follow and must match what was
    /// written.
    pub fn read_checkpoint<R: Read>(mut r: R, cell: CellKind, position_evolution: bool) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| CaperError::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CaperError::Checkpoint("bad magic bytes".into()));
        }
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| CaperError::Checkpoint("truncated header".into()))?;
            *h = u64::from_le_bytes(b) as usize;
        }
        let [d, users, companies, positions] = header;
        let mut store = Self::zeros(ParamLayout {
            dims: Dims {
                d,
                users,
                companies,
                positions,
            },
            cell,
            position_evolution,
        });
        for (name, block) in store.blocks_mut() {
            for x in block.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| CaperError::Checkpoint(format!("truncated in block `{name}`")))?;
                *x = f64::from_le_bytes(b);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CaperError::Checkpoint(format!(
                "{} trailing bytes; cell kind or variant does not match the file",
                rest.len()
            )));
        }
        Ok(store)
    }

    /// SHA-256 of the checkpoint encoding, hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_checkpoint_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays use standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays use standard layout")
}
