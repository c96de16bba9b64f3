//! Parameter storage plus the embedding, linear and LSTM layers.

use std::io::BufRead;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Vocab;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter of a [`ParamStore`], valid for one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles recorded elsewhere, in parameter registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Records every parameter as a tape leaf. With `track_grads` false the
    /// leaves are constants and no backward information is kept.
    pub fn bind(&self, tape: &mut Tape, track_grads: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if track_grads {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Copies gradients from a finished backward pass into the grad slots.
    /// Parameters the loss does not reach get a zero gradient.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (tensor, var) in self.tensors.iter_mut().zip(&bound.vars) {
            let grad = tape
                .grad(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.len()]);
            tensor.set_grad(grad).expect("tape gradient matches parameter size");
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `y = x·Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[out_dim, in_dim], init_bound));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul_nt(x, bound.get(self.weight))?;
        Ok(tape.add(y, bound.get(self.bias))?)
    }
}

/// Trainable lookup table `[vocab × dim]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    vocab_size: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add(format!("{name}.table"), uniform(rng, &[vocab_size, dim], 0.1));
        Self {
            table,
            vocab_size,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rows for a flat id list: `[ids.len() × dim]`.
    pub fn lookup(&self, tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(contract(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        Ok(tape.gather_rows(bound.get(self.table), ids)?)
    }

    /// Embeds a row-major `[batch × steps]` id matrix into `[batch × steps × dim]`.
    pub fn embed(&self, tape: &mut Tape, bound: &Bound, ids: &[usize], batch: usize) -> Result<Var> {
        if batch == 0 || ids.len() % batch != 0 {
            return Err(contract(format!("{} ids do not form {batch} rows", ids.len())));
        }
        let rows = self.lookup(tape, bound, ids)?;
        Ok(tape.reshape(rows, vec![batch, ids.len() / batch, self.dim])?)
    }

    /// Overwrites rows from a text file with lines `token v1 v2 ... vD`.
    /// Tokens absent from `vocab` are ignored. Returns the number of rows set.
    pub fn load_text_vectors(&self, store: &mut ParamStore, vocab: &Vocab, input: impl BufRead) -> Result<usize> {
        let dim = self.dim;
        let table = store.get_mut(self.table);
        let mut loaded = 0;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let mut fields = line.split(' ').filter(|s| !s.is_empty());
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("embedding line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::Parse(format!(
                    "embedding line {}: expected {dim} values, found {}",
                    lineno + 1,
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding line {}", lineno + 1)));
            }
            let id = vocab.id(token);
            if vocab.token(id) != Some(token) {
                continue;
            }
            table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Hidden and cell state of one LSTM layer, each `[batch × hidden]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        let h = tape.constant(Tensor::zeros(&[batch, hidden]));
        let c = tape.constant(Tensor::zeros(&[batch, hidden]));
        Self { h, c }
    }
}

/// One LSTM layer. Gate rows of the fused weight `[4·hidden × (in + hidden)]`
/// are ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    in_dim: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[4 * hidden, in_dim + hidden], bound),
        );
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), bias);
        Self {
            weight,
            bias,
            in_dim,
            hidden,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, tape: &mut Tape, bound: &Bound, input: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden;
        let input_shape = tape.shape(input);
        if input_shape.len() != 2 || input_shape[1] != self.in_dim {
            return Err(contract(format!(
                "lstm input shape {input_shape:?} does not match input size {}",
                self.in_dim
            )));
        }
        let xh = tape.concat(&[input, state.h], 1)?;
        let gates = tape.matmul_nt(xh, bound.get(self.weight))?;
        let gates = tape.add(gates, bound.get(self.bias))?;
        let i = tape.slice(gates, 1, 0..h)?;
        let f = tape.slice(gates, 1, h..2 * h)?;
        let g = tape.slice(gates, 1, 2 * h..3 * h)?;
        let o = tape.slice(gates, 1, 3 * h..4 * h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Stacked LSTM; layer `k` reads layer `k-1`'s new hidden state.
#[derive(Debug, Clone)]
pub struct LstmStack {
    cells: Vec<LstmCell>,
}

impl LstmStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cells = (0..layers)
            .map(|k| {
                let input = if k == 0 { in_dim } else { hidden };
                LstmCell::new(store, &format!("{name}.l{k}"), input, hidden, rng)
            })
            .collect();
        Self { cells }
    }

    pub fn cells(&self) -> &[LstmCell] {
        &self.cells
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden()
    }

    pub fn zero_states(&self, tape: &mut Tape, batch: usize) -> Vec<LstmState> {
        (0..self.layers())
            .map(|_| LstmState::zeros(tape, batch, self.hidden()))
            .collect()
    }

    pub fn step(&self, tape: &mut Tape, bound: &Bound, input: Var, states: &[LstmState]) -> Result<Vec<LstmState>> {
        if states.len() != self.cells.len() {
            return Err(contract(format!(
                "{} states supplied for {} layers",
                states.len(),
                self.cells.len()
            )));
        }
        let mut x = input;
        let mut out = Vec::with_capacity(states.len());
        for (cell, &state) in self.cells.iter().zip(states) {
            let next = cell.step(tape, bound, x, state)?;
            x = next.h;
            out.push(next);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check_many, sigmoid, AutogradError};
    use crate::data::Corpus;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        uniform(rng, shape, 1.0)
    }

    /// Plain scalar LSTM equations on nested vectors.
    fn scalar_lstm(
        w: &[f64],
        b: &[f64],
        hidden: usize,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let cols = x.len() + hidden;
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let pre = |row: usize| -> f64 {
            b[row] + (0..cols).map(|k| w[row * cols + k] * xh[k]).sum::<f64>()
        };
        let mut h_out = vec![0.0; hidden];
        let mut c_out = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sigmoid(pre(j));
            let f = sigmoid(pre(hidden + j));
            let g = pre(2 * hidden + j).tanh();
            let o = sigmoid(pre(3 * hidden + j));
            c_out[j] = f * c[j] + i * g;
            h_out[j] = o * c_out[j].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", 3, 4, &mut rng(0));
        store.get_mut(cell.weight).data_mut().fill(0.0);
        store.get_mut(cell.bias).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(rand_tensor(&mut rng(1), &[2, 3]));
        let s0 = LstmState::zeros(&mut tape, 2, 4);
        let s1 = cell.step(&mut tape, &bound, x, s0).unwrap();
        assert!(tape.value(s1.h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(s1.c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_cell() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", 3, 2, &mut rng(0));
        let bias = store.get_mut(cell.bias).data_mut();
        bias[..2].fill(-100.0);
        bias[2..4].fill(100.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(rand_tensor(&mut rng(2), &[1, 3]));
        let c_prev = Tensor::new(vec![1, 2], vec![0.7, -0.3]).unwrap();
        let state = LstmState {
            h: tape.constant(Tensor::zeros(&[1, 2])),
            c: tape.constant(c_prev.clone()),
        };
        let next = cell.step(&mut tape, &bound, x, state).unwrap();
        for (a, b) in tape.value(next.c).data().iter().zip(c_prev.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let mut r = rng(7);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", 3, 3, &mut r);
        *store.get_mut(cell.bias) = rand_tensor(&mut r, &[12]);
        let x = rand_tensor(&mut r, &[2, 3]);
        let h0 = rand_tensor(&mut r, &[2, 3]);
        let c0 = rand_tensor(&mut r, &[2, 3]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let state = LstmState {
            h: tape.constant(h0.clone()),
            c: tape.constant(c0.clone()),
        };
        let next = cell.step(&mut tape, &bound, xv, state).unwrap();
        for b in 0..2 {
            let (h, c) = scalar_lstm(
                store.get(cell.weight).data(),
                store.get(cell.bias).data(),
                3,
                x.row(b),
                h0.row(b),
                c0.row(b),
            );
            for j in 0..3 {
                assert!((tape.value(next.h).row(b)[j] - h[j]).abs() < 1e-12);
                assert!((tape.value(next.c).row(b)[j] - c[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_layer_stack_equals_cell() {
        let mut store = ParamStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 4, 1, &mut rng(3));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(rand_tensor(&mut rng(4), &[2, 3]));
        let states = stack.zero_states(&mut tape, 2);
        let via_stack = stack.step(&mut tape, &bound, x, &states).unwrap();
        let via_cell = stack.cells()[0].step(&mut tape, &bound, x, states[0]).unwrap();
        assert_eq!(tape.value(via_stack[0].h), tape.value(via_cell.h));
        assert_eq!(tape.value(via_stack[0].c), tape.value(via_cell.c));
    }

    #[test]
    fn stack_composes_cells() {
        let mut r = rng(5);
        let mut store = ParamStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 4, 2, &mut r);
        let x = rand_tensor(&mut r, &[2, 3]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let states = stack.zero_states(&mut tape, 2);
        let out = stack.step(&mut tape, &bound, xv, &states).unwrap();

        let cells = stack.cells();
        let z = vec![0.0; 4];
        for b in 0..2 {
            let w0 = store.get(cells[0].weight).data();
            let b0 = store.get(cells[0].bias).data();
            let (h1, c1) = scalar_lstm(w0, b0, 4, x.row(b), &z, &z);
            let w1 = store.get(cells[1].weight).data();
            let b1 = store.get(cells[1].bias).data();
            let (h2, c2) = scalar_lstm(w1, b1, 4, &h1, &z, &z);
            for j in 0..4 {
                assert!((tape.value(out[0].h).row(b)[j] - h1[j]).abs() < 1e-12);
                assert!((tape.value(out[0].c).row(b)[j] - c1[j]).abs() < 1e-12);
                assert!((tape.value(out[1].h).row(b)[j] - h2[j]).abs() < 1e-12);
                assert!((tape.value(out[1].c).row(b)[j] - c2[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_second_layer_leaves_first_untouched() {
        let mut store = ParamStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 4, 2, &mut rng(6));
        let second = &stack.cells()[1];
        store.get_mut(second.weight).data_mut().fill(0.0);
        store.get_mut(second.bias).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(rand_tensor(&mut rng(8), &[2, 3]));
        let states = stack.zero_states(&mut tape, 2);
        let out = stack.step(&mut tape, &bound, x, &states).unwrap();
        let alone = stack.cells()[0].step(&mut tape, &bound, x, states[0]).unwrap();
        assert!(tape.value(out[1].h).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(out[0].h), tape.value(alone.h));
    }

    #[test]
    fn stack_rejects_wrong_state_count() {
        let mut store = ParamStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 4, 2, &mut rng(0));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let one = vec![LstmState::zeros(&mut tape, 1, 4)];
        assert!(stack.step(&mut tape, &bound, x, &one).is_err());
        let bad = tape.constant(Tensor::zeros(&[1, 5]));
        let states = stack.zero_states(&mut tape, 1);
        assert!(stack.step(&mut tape, &bound, bad, &states).is_err());
    }

    #[test]
    fn hidden_output_bounded() {
        let mut r = rng(11);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 5, 6, &mut r);
        for v in store.get_mut(cell.weight).data_mut() {
            *v *= 40.0;
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(uniform(&mut r, &[8, 5], 10.0));
        let s = LstmState::zeros(&mut tape, 8, 6);
        let next = cell.step(&mut tape, &bound, x, s).unwrap();
        assert!(tape.value(next.h).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn lstm_parameter_count() {
        let mut store = ParamStore::new();
        LstmStack::new(&mut store, "enc", 512, 256, 2, &mut rng(0));
        let expected = 4 * (256 * (512 + 256) + 256) + 4 * (256 * (256 + 256) + 256);
        assert_eq!(store.num_scalars(), expected);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 2, 3, &mut rng(0));
        assert_eq!(store.get(cell.bias).data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn cell_step_gradients_match_finite_differences() {
        for seed in 0..100 {
            let mut r = rng(100 + seed);
            let points = vec![
                rand_tensor(&mut r, &[12, 6]),
                rand_tensor(&mut r, &[12]),
                rand_tensor(&mut r, &[2, 3]),
                rand_tensor(&mut r, &[2, 3]),
                rand_tensor(&mut r, &[2, 3]),
            ];
            let err = grad_check_many(
                |tape: &mut Tape, v: &[Var]| -> std::result::Result<Var, AutogradError> {
                    let mut store = ParamStore::new();
                    let cell = LstmCell {
                        weight: store.add("w", Tensor::zeros(&[12, 6])),
                        bias: store.add("b", Tensor::zeros(&[12])),
                        in_dim: 3,
                        hidden: 3,
                    };
                    let bound = Bound {
                        vars: vec![v[0], v[1]],
                    };
                    let next = cell
                        .step(tape, &bound, v[2], LstmState { h: v[3], c: v[4] })
                        .map_err(|e| match e {
                            Error::Autograd(a) => a,
                            other => panic!("{other}"),
                        })?;
                    let hc = tape.concat(&[next.h, next.c], 1)?;
                    let sq = tape.mul(hc, hc)?;
                    let w = tape.tanh(hc);
                    let mix = tape.add(sq, w)?;
                    Ok(tape.sum(mix))
                },
                &points,
                1e-5,
                None,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 4, 4, &mut rng(0));
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        *store.get_mut(emb.table) = eye.with_requires_grad(true);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        let rows = emb.embed(&mut tape, &bound, &[0, 2, 2, 1], 2).unwrap();
        assert_eq!(tape.shape(rows), &[2, 2, 4]);
        assert_eq!(&tape.value(rows).data()[..4], &[1.0, 0.0, 0.0, 0.0]);
        let loss = tape.sum(rows);
        tape.backward(loss).unwrap();
        store.collect_grads(&tape, &bound);
        let g = store.get(emb.table).grad().unwrap();
        assert_eq!(&g[8..12], &[2.0; 4]);
        assert_eq!(&g[12..16], &[0.0; 4]);
        assert_eq!(&g[4..8], &[1.0; 4]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 4, 2, &mut rng(0));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        assert!(emb.lookup(&mut tape, &bound, &[4]).is_err());
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let mut r = rng(21);
        let table = rand_tensor(&mut r, &[5, 3]);
        let err = grad_check_many(
            |tape: &mut Tape, v: &[Var]| -> std::result::Result<Var, AutogradError> {
                let rows = tape.gather_rows(v[0], &[1, 3, 1])?;
                let y = tape.tanh(rows);
                let y = tape.mul(y, rows)?;
                Ok(tape.sum(y))
            },
            &[table],
            1e-5,
            None,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut r = rng(22);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, 0.5, &mut r);
        *store.get_mut(lin.bias) = rand_tensor(&mut r, &[3]);
        let points = vec![
            store.get(lin.weight).clone(),
            store.get(lin.bias).clone(),
            rand_tensor(&mut r, &[2, 4]),
        ];
        let err = grad_check_many(
            |tape: &mut Tape, v: &[Var]| -> std::result::Result<Var, AutogradError> {
                let bound = Bound {
                    vars: vec![v[0], v[1]],
                };
                let y = lin.forward(tape, &bound, v[2]).map_err(|e| match e {
                    Error::Autograd(a) => a,
                    other => panic!("{other}"),
                })?;
                let y = tape.sigmoid(y);
                Ok(tape.sum(y))
            },
            &points,
            1e-5,
            None,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn text_vectors_load_into_table() {
        let corpus = Corpus::from_lines(["blue spice"]);
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", vocab.len(), 3, &mut rng(0));
        let text = "blue 1 2 3\nunknown 4 5 6\nspice 0.5 0.25 -1\n";
        let n = emb.load_text_vectors(&mut store, &vocab, text.as_bytes()).unwrap();
        assert_eq!(n, 2);
        let row = vocab.id("blue");
        assert_eq!(&store.get(emb.table).data()[row * 3..row * 3 + 3], &[1.0, 2.0, 3.0]);
        assert!(emb.load_text_vectors(&mut store, &vocab, "blue 1 2\n".as_bytes()).is_err());
    }
}
