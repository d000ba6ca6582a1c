//! Parameters and small network building blocks on top of the tape.
//!
//! Parameters live in a [`ParamRegistry`] keyed by stable names. A forward
//! pass binds the whole registry onto a fresh tape ([`ParamBinding`]) so
//! gradient extraction and optimizer updates can walk parameters in one
//! canonical order.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::autodiff::{Gradients, Tape, Tensor, ValueId};
use crate::{Error, Result};
use rand::Rng;
use std::collections::HashMap;

/// Handle to a parameter inside a [`ParamRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter store with insertion-stable order.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Usage(format!("parameter {name:?} registered twice")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Param { name: name.to_string(), value });
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|i| ParamId(*i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    /// Number of parameter tensors.
    pub fn tensor_count(&self) -> usize {
        self.params.len()
    }

    /// Total number of scalar values across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }
}

/// Registry parameters bound onto a tape as leaves, in registry order.
pub struct ParamBinding {
    ids: Vec<ValueId>,
}

impl ParamBinding {
    pub fn bind(tape: &mut Tape, registry: &ParamRegistry) -> Self {
        let ids = registry.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        ParamBinding { ids }
    }

    pub fn value(&self, id: ParamId) -> ValueId {
        self.ids[id.0]
    }

    /// Dense per-parameter gradients in registry order; parameters that do
    /// not influence the loss get zero tensors.
    pub fn parameter_gradients(&self, registry: &ParamRegistry, grads: &Gradients) -> Vec<Tensor> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| match grads.get(*id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(registry.params[i].value.shape()),
            })
            .collect()
    }
}

/// Uniform matrix in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("count matches shape")
}

/// Uniform vector in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_vector<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::vector((0..len).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Affine map `W x + b`, optionally followed by ReLU.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Embedding {
    /// Registers `<prefix>.weight` and `<prefix>.bias`, uniformly
    /// initialized with fan-in `in_dim`.
    pub fn init<R: Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = registry.register(
            &format!("{prefix}.weight"),
            uniform_matrix(rng, out_dim, in_dim, in_dim),
        )?;
        let bias =
            registry.register(&format!("{prefix}.bias"), uniform_vector(rng, out_dim, in_dim))?;
        Ok(Embedding { weight, bias, in_dim, out_dim })
    }

    /// Re-attaches to parameters already present under `prefix`.
    pub fn resolve(registry: &ParamRegistry, prefix: &str) -> Result<Self> {
        let weight = registry
            .lookup(&format!("{prefix}.weight"))
            .ok_or_else(|| Error::Validation(format!("missing parameter {prefix}.weight")))?;
        let bias = registry
            .lookup(&format!("{prefix}.bias"))
            .ok_or_else(|| Error::Validation(format!("missing parameter {prefix}.bias")))?;
        let w = registry.value(weight);
        if w.rank() != 2 {
            return Err(Error::Validation(format!("{prefix}.weight is not a matrix")));
        }
        Ok(Embedding { weight, bias, in_dim: w.cols(), out_dim: w.rows() })
    }

    /// `W x + b` with no activation.
    pub fn linear(&self, tape: &mut Tape, binding: &ParamBinding, x: ValueId) -> Result<ValueId> {
        let wx = tape.matmul(binding.value(self.weight), x)?;
        tape.add(wx, binding.value(self.bias))
    }

    /// `relu(W x + b)`.
    pub fn apply(&self, tape: &mut Tape, binding: &ParamBinding, x: ValueId) -> Result<ValueId> {
        let a = self.linear(tape, binding, x)?;
        tape.relu(a)
    }
}

/// Recurrent state: hidden vector plus cell vector, both `hidden_size` long.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: ValueId,
    pub cell: ValueId,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden_size: usize) -> Self {
        let hidden = tape.leaf(Tensor::zeros(&[hidden_size]));
        let cell = tape.leaf(Tensor::zeros(&[hidden_size]));
        LstmState { hidden, cell }
    }
}

/// Single LSTM cell. The stacked gate layout is fixed: rows `0..h` drive the
/// input gate, `h..2h` the forget gate, `2h..3h` the candidate, `3h..4h` the
/// output gate.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    /// Registers `<prefix>.w_input`, `<prefix>.w_hidden`, `<prefix>.bias`.
    /// Weights are uniform with per-matrix fan-in; the forget-gate slice of
    /// the bias starts at 1.0 so early training does not wash out state.
    pub fn init<R: Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_input = registry.register(
            &format!("{prefix}.w_input"),
            uniform_matrix(rng, 4 * hidden_size, input_size, input_size),
        )?;
        let w_hidden = registry.register(
            &format!("{prefix}.w_hidden"),
            uniform_matrix(rng, 4 * hidden_size, hidden_size, hidden_size),
        )?;
        let mut bias_t = uniform_vector(rng, 4 * hidden_size, hidden_size);
        for v in &mut bias_t.data_mut()[hidden_size..2 * hidden_size] {
            *v = 1.0;
        }
        let bias = registry.register(&format!("{prefix}.bias"), bias_t)?;
        Ok(LstmCell { w_input, w_hidden, bias, input_size, hidden_size })
    }

    pub fn resolve(registry: &ParamRegistry, prefix: &str) -> Result<Self> {
        let w_input = registry
            .lookup(&format!("{prefix}.w_input"))
            .ok_or_else(|| Error::Validation(format!("missing parameter {prefix}.w_input")))?;
        let w_hidden = registry
            .lookup(&format!("{prefix}.w_hidden"))
            .ok_or_else(|| Error::Validation(format!("missing parameter {prefix}.w_hidden")))?;
        let bias = registry
            .lookup(&format!("{prefix}.bias"))
            .ok_or_else(|| Error::Validation(format!("missing parameter {prefix}.bias")))?;
        let wi = registry.value(w_input);
        if wi.rank() != 2 || wi.rows() % 4 != 0 {
            return Err(Error::Validation(format!("{prefix}.w_input has a bad shape")));
        }
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            input_size: wi.cols(),
            hidden_size: wi.rows() / 4,
        })
    }

    /// One recurrence step. Returns a fresh state; the old state tensors are
    /// untouched on the tape.
    pub fn step(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        state: &LstmState,
        input: ValueId,
    ) -> Result<LstmState> {
        let h = self.hidden_size;
        if tape.value(input).shape() != [self.input_size] {
            return Err(Error::Dim(format!(
                "lstm step: input shape {:?}, want [{}]",
                tape.value(input).shape(),
                self.input_size
            )));
        }
        if tape.value(state.hidden).shape() != [h] || tape.value(state.cell).shape() != [h] {
            return Err(Error::Dim(format!(
                "lstm step: state shapes {:?}/{:?}, want [{h}]",
                tape.value(state.hidden).shape(),
                tape.value(state.cell).shape()
            )));
        }

        let wx = tape.matmul(binding.value(self.w_input), input)?;
        let wh = tape.matmul(binding.value(self.w_hidden), state.hidden)?;
        let lin = tape.add(wx, wh)?;
        let gates = tape.add(lin, binding.value(self.bias))?;

        let pre_i = tape.slice(gates, 0, h)?;
        let pre_f = tape.slice(gates, h, h)?;
        let pre_g = tape.slice(gates, 2 * h, h)?;
        let pre_o = tape.slice(gates, 3 * h, h)?;

        let gate_i = tape.sigmoid(pre_i)?;
        let gate_f = tape.sigmoid(pre_f)?;
        let cand = tape.tanh(pre_g)?;
        let gate_o = tape.sigmoid(pre_o)?;

        let keep = tape.mul(gate_f, state.cell)?;
        let write = tape.mul(gate_i, cand)?;
        let cell = tape.add(keep, write)?;
        let cell_act = tape.tanh(cell)?;
        let hidden = tape.mul(gate_o, cell_act)?;
        Ok(LstmState { hidden, cell })
    }
}
