//! Token embeddings and the vanilla / orthogonal LSTM encoders.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;

/// Standard deviation for embeddings that are not read from a file.
pub const EMBEDDING_INIT_STD: f64 = 0.1;

/// Which recurrence the encoder runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Orthogonal,
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Vanilla => "vanilla",
            CellKind::Orthogonal => "orthogonal",
        })
    }
}

/// Token ↔ index map with reserved padding and out-of-vocabulary rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from tokens in first-seen order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab =
            Vocab::from_list(vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()]).expect("reserved tokens are distinct");
        for tok in tokens {
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
            }
        }
        vocab
    }

    /// Restores a vocabulary from its index-ordered token list.
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[OOV_INDEX] != OOV_TOKEN {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the padding and OOV tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of `token`, falling back to the OOV row.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Vocabulary plus a `|V| × d1` embedding matrix whose padding row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub vectors: Tensor,
}

impl EmbeddingTable {
    /// Gaussian `N(0, 0.1²)` initialization; the padding row stays zero.
    pub fn random(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let mut vectors = Tensor::zeros(&[vocab.len(), dim]);
        for (i, x) in vectors.data_mut().iter_mut().enumerate() {
            let v: f64 = normal.sample(rng);
            if i / dim != PAD_INDEX {
                *x = v;
            }
        }
        EmbeddingTable { vocab, vectors }
    }

    /// Reads `word v1 .. v_d` lines; vocabulary words missing from the file
    /// get Gaussian rows drawn from `rng`, and file words outside the
    /// vocabulary are ignored.
    pub fn load_text(path: &Path, vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable::random(vocab, dim, rng);
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("bad embedding value: {e}"),
                })?;
            if values.len() != dim {
                return Err(Error::Dataset {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if let Some(&row) = table.vocab.index.get(word) {
                if row != PAD_INDEX {
                    table.vectors.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
                }
            }
        }
        if !table.vectors.is_finite() {
            return Err(Error::NonFinite { op: "load_embeddings" });
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Plain (off-tape) lookup of each id's row.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= self.vocab.len() {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.vocab.len()
                )));
            }
            data.extend_from_slice(self.vectors.row(id));
        }
        Tensor::matrix(ids.len(), dim, data)
    }
}

/// Differentiable lookup of `ids` in an embedding matrix on the tape.
pub fn embed_on_tape<'t>(table: Var<'t>, ids: &[usize]) -> Result<Vec<Var<'t>>> {
    let rows = table.shape()[0];
    ids.iter()
        .map(|&id| {
            if id >= rows {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocabulary of {rows}"
                )));
            }
            table.row(id)
        })
        .collect()
}

/// Weights of one LSTM layer. `W_*` are `d2×d1`, `U_*` are `d2×d2`, `b_*` are `d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub u_f: Tensor,
    pub u_i: Tensor,
    pub u_o: Tensor,
    pub u_c: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

pub(crate) fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|x| *x = dist.sample(rng));
    t
}

impl LstmParams {
    pub const NAMES: [&'static str; 12] = [
        "W_f", "W_i", "W_o", "W_c", "U_f", "U_i", "U_o", "U_c", "b_f", "b_i", "b_o", "b_c",
    ];

    pub fn zeros(d1: usize, d2: usize) -> Self {
        let w = || Tensor::zeros(&[d2, d1]);
        let u = || Tensor::zeros(&[d2, d2]);
        let b = || Tensor::zeros(&[d2]);
        LstmParams {
            w_f: w(),
            w_i: w(),
            w_o: w(),
            w_c: w(),
            u_f: u(),
            u_i: u(),
            u_o: u(),
            u_c: u(),
            b_f: b(),
            b_i: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// Uniform `±1/√d2` initialization with zero biases.
    pub fn random(d1: usize, d2: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d2 as f64).sqrt();
        let mut p = LstmParams::zeros(d1, d2);
        for t in [
            &mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c, &mut p.u_f, &mut p.u_i, &mut p.u_o, &mut p.u_c,
        ] {
            *t = uniform_tensor(t.shape(), bound, rng);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_f.rows()
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_f, &self.w_i, &self.w_o, &self.w_c, &self.u_f, &self.u_i, &self.u_o, &self.u_c, &self.b_f,
            &self.b_i, &self.b_o, &self.b_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.u_f,
            &mut self.u_i,
            &mut self.u_o,
            &mut self.u_c,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    /// Places the weights on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> LstmVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LstmVars {
            w_f: put(&self.w_f),
            w_i: put(&self.w_i),
            w_o: put(&self.w_o),
            w_c: put(&self.w_c),
            u_f: put(&self.u_f),
            u_i: put(&self.u_i),
            u_o: put(&self.u_o),
            u_c: put(&self.u_c),
            b_f: put(&self.b_f),
            b_i: put(&self.b_i),
            b_o: put(&self.b_o),
            b_c: put(&self.b_c),
            d2: self.hidden_dim(),
        }
    }
}

/// [`LstmParams`] bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars<'t> {
    pub w_f: Var<'t>,
    pub w_i: Var<'t>,
    pub w_o: Var<'t>,
    pub w_c: Var<'t>,
    pub u_f: Var<'t>,
    pub u_i: Var<'t>,
    pub u_o: Var<'t>,
    pub u_c: Var<'t>,
    pub b_f: Var<'t>,
    pub b_i: Var<'t>,
    pub b_o: Var<'t>,
    pub b_c: Var<'t>,
    d2: usize,
}

impl<'t> LstmVars<'t> {
    pub fn vars(&self) -> [Var<'t>; 12] {
        [
            self.w_f, self.w_i, self.w_o, self.w_c, self.u_f, self.u_i, self.u_o, self.u_c, self.b_f, self.b_i,
            self.b_o, self.b_c,
        ]
    }

    pub fn hidden_dim(&self) -> usize {
        self.d2
    }
}

/// Recurrent state after `t` steps.
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t> {
    pub h: Var<'t>,
    pub c: Var<'t>,
    /// Sum of all hidden states emitted so far (maintained by the orthogonal cell).
    pub running_sum: Var<'t>,
    pub t: usize,
}

impl<'t> LstmState<'t> {
    /// Zero `h`, `c` and running sum before the first step.
    pub fn initial(tape: &'t Tape, d2: usize) -> Self {
        let zero = tape.constant(Tensor::zeros(&[d2]));
        LstmState {
            h: zero,
            c: zero,
            running_sum: zero,
            t: 0,
        }
    }
}

fn gate<'t>(w: Var<'t>, u: Var<'t>, b: Var<'t>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
    w.matmul(x)?.add(u.matmul(h)?)?.add(b)
}

/// One vanilla LSTM step. The running sum is passed through untouched.
pub fn lstm_step<'t>(x: Var<'t>, prev: &LstmState<'t>, p: &LstmVars<'t>) -> Result<LstmState<'t>> {
    let f = gate(p.w_f, p.u_f, p.b_f, x, prev.h)?.sigmoid()?;
    let i = gate(p.w_i, p.u_i, p.b_i, x, prev.h)?.sigmoid()?;
    let o = gate(p.w_o, p.u_o, p.b_o, x, prev.h)?.sigmoid()?;
    let c_hat = gate(p.w_c, p.u_c, p.b_c, x, prev.h)?.tanh()?;
    let c = f.mul(prev.c)?.add(i.mul(c_hat)?)?;
    let h = o.mul(c.tanh()?)?;
    Ok(LstmState {
        h,
        c,
        running_sum: prev.running_sum,
        t: prev.t + 1,
    })
}

/// Below this squared norm of the running sum the projection is skipped.
pub const PROJECTION_GUARD: f64 = 1e-12;

/// One orthogonal LSTM step: the vanilla output minus its component along the
/// sum of previous hidden states.
pub fn orthogonal_lstm_step<'t>(x: Var<'t>, prev: &LstmState<'t>, p: &LstmVars<'t>) -> Result<LstmState<'t>> {
    let vanilla = lstm_step(x, prev, p)?;
    let h_hat = vanilla.h;
    let sum_prev = prev.running_sum;
    let denom = sum_prev.dot(sum_prev)?;
    let h = if denom.item() < PROJECTION_GUARD {
        h_hat
    } else {
        let coef = h_hat.dot(sum_prev)?.mul(denom.recip()?)?;
        h_hat.sub(sum_prev.scalar_mul(coef)?)?
    };
    Ok(LstmState {
        h,
        c: vanilla.c,
        running_sum: sum_prev.add(h)?,
        t: vanilla.t,
    })
}

/// Runs the chosen cell over `inputs` from a zero state and returns every
/// hidden state.
pub fn encode_sequence<'t>(
    tape: &'t Tape,
    inputs: &[Var<'t>],
    p: &LstmVars<'t>,
    kind: CellKind,
) -> Result<Vec<Var<'t>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
    }
    let mut state = LstmState::initial(tape, p.hidden_dim());
    let mut hidden = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = match kind {
            CellKind::Vanilla => lstm_step(x, &state, p)?,
            CellKind::Orthogonal => orthogonal_lstm_step(x, &state, p)?,
        };
        hidden.push(state.h);
    }
    Ok(hidden)
}

/// Runs the encoder without gradients and returns the `n × d2` hidden states.
pub fn encode_tokens(table: &EmbeddingTable, p: &LstmParams, ids: &[usize], kind: CellKind) -> Result<Tensor> {
    let tape = Tape::new();
    let emb = tape.constant(table.vectors.clone());
    let xs = embed_on_tape(emb, ids)?;
    let vars = p.bind(&tape, false);
    let hidden = encode_sequence(&tape, &xs, &vars, kind)?;
    tape.stack(&hidden).map(|h| h.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{conicity, VectorSet};
    use crate::gradcheck::{finite_difference_check, DEFAULT_EPSILON};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        uniform_tensor(&[n], 1.0, rng)
    }

    #[test]
    fn embed_lookup() {
        let vocab = Vocab::from_tokens(["good", "movie"]);
        let table = EmbeddingTable::random(vocab, 3, &mut rng(1));
        assert_eq!(table.embed(&[]).unwrap().shape(), &[0, 3]);
        let oov = table.embed(&[OOV_INDEX, OOV_INDEX]).unwrap();
        assert_eq!(oov.row(0), oov.row(1));
        let ids = [2, 3, 2];
        let e = table.embed(&ids).unwrap();
        for (t, &id) in ids.iter().enumerate() {
            assert_eq!(e.row(t), table.vectors.row(id));
        }
        assert!(table.vectors.row(PAD_INDEX).iter().all(|&x| x == 0.0));
        assert!(table.embed(&[99]).is_err());
    }

    #[test]
    fn vocab_maps_unknown_to_oov() {
        let vocab = Vocab::from_tokens(["a", "b", "a"]);
        assert_eq!(vocab.len(), 4);
        assert_eq!(vocab.ids(&["b", "zzz"]), vec![3, OOV_INDEX]);
        let restored = Vocab::from_list(vocab.tokens().to_vec()).unwrap();
        assert_eq!(restored, vocab);
        assert!(Vocab::from_list(vec!["a".into()]).is_err());
    }

    #[test]
    fn load_embeddings_from_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "good 1 2\nunused 5 5\n<pad> 9 9\n").unwrap();
        let vocab = Vocab::from_tokens(["good", "movie"]);
        let table = EmbeddingTable::load_text(&path, vocab, 2, &mut rng(0)).unwrap();
        assert_eq!(table.vectors.row(2), &[1.0, 2.0]);
        assert_eq!(table.vectors.row(PAD_INDEX), &[0.0, 0.0]);
        std::fs::write(&path, "good 1\n").unwrap();
        let vocab = Vocab::from_tokens(["good"]);
        let err = EmbeddingTable::load_text(&path, vocab, 2, &mut rng(0)).unwrap_err();
        assert!(matches!(err, Error::Dataset { line: 1, .. }));
    }

    #[test]
    fn zero_params_closed_form() {
        let tape = Tape::new();
        let p = LstmParams::zeros(3, 2).bind(&tape, false);
        let c0 = [0.8, -1.4];
        let mut prev = LstmState::initial(&tape, 2);
        prev.c = tape.constant(Tensor::vector(c0.to_vec()));
        let x = tape.constant(Tensor::vector(vec![0.3, 0.1, -0.2]));
        let next = lstm_step(x, &prev, &p).unwrap();
        let c = next.c.value();
        let h = next.h.value();
        for ((&cj, &hj), &c0j) in c.data().iter().zip(h.data()).zip(&c0) {
            assert!((cj - 0.5 * c0j).abs() < 1e-15);
            assert!((hj - 0.5 * (0.5 * c0j).tanh()).abs() < 1e-15);
        }
        let zero = LstmState::initial(&tape, 2);
        let x0 = tape.constant(Tensor::zeros(&[3]));
        assert!(lstm_step(x0, &zero, &p)
            .unwrap()
            .h
            .value()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gates_bound_hidden_state() {
        let mut r = rng(5);
        let params = LstmParams::random(4, 6, &mut r);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let xs: Vec<_> = (0..8)
            .map(|_| tape.constant(random_vec(4, &mut r).map(|v| 5.0 * v)))
            .collect();
        for h in encode_sequence(&tape, &xs, &p, CellKind::Vanilla).unwrap() {
            assert!(h.value().data().iter().all(|v| v.abs() < 1.0));
        }
    }

    fn flat(params: &LstmParams) -> Vec<f64> {
        params.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
    }

    fn unflat(template: &LstmParams, values: &[f64]) -> LstmParams {
        let mut p = template.clone();
        let mut off = 0;
        for t in p.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        p
    }

    fn sequence_loss(params: &LstmParams, inputs: &[Tensor], kind: CellKind) -> Result<f64> {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let hs = encode_sequence(&tape, &xs, &p, kind)?;
        let mut loss = hs[0].dot(hs[0])?;
        for h in &hs[1..] {
            loss = loss.add(h.dot(*h)?)?;
        }
        Ok(loss.item())
    }

    fn check_encoder_gradients(kind: CellKind, len: usize) {
        let mut r = rng(17);
        let params = LstmParams::random(4, 4, &mut r);
        let inputs: Vec<Tensor> = (0..len).map(|_| random_vec(4, &mut r)).collect();
        let tape = Tape::new();
        let p = params.bind(&tape, true);
        let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let hs = encode_sequence(&tape, &xs, &p, kind).unwrap();
        let mut loss = hs[0].dot(hs[0]).unwrap();
        for h in &hs[1..] {
            loss = loss.add(h.dot(*h).unwrap()).unwrap();
        }
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<f64> = p.vars().iter().flat_map(|v| grads.wrt(*v).into_data()).collect();
        let err = finite_difference_check(
            |v| sequence_loss(&unflat(&params, v), &inputs, kind),
            &analytic,
            &flat(&params),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(err < 1e-4, "{kind}: {err}");
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        check_encoder_gradients(CellKind::Vanilla, 1);
    }

    #[test]
    fn sequence_gradients_match_finite_differences() {
        check_encoder_gradients(CellKind::Vanilla, 5);
        check_encoder_gradients(CellKind::Orthogonal, 5);
    }

    #[test]
    fn orthogonal_first_step_is_unprojected() {
        let mut r = rng(2);
        let params = LstmParams::random(3, 5, &mut r);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = tape.constant(random_vec(3, &mut r));
        let init = LstmState::initial(&tape, 5);
        let a = lstm_step(x, &init, &p).unwrap().h.value();
        let b = orthogonal_lstm_step(x, &init, &p).unwrap().h.value();
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_states_are_orthogonal_to_running_sum() {
        let mut r = rng(8);
        let params = LstmParams::random(3, 5, &mut r);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let mut state = LstmState::initial(&tape, 5);
        for _ in 0..10 {
            let x = tape.constant(random_vec(3, &mut r));
            let prev_sum = state.running_sum.value();
            state = orthogonal_lstm_step(x, &state, &p).unwrap();
            if state.t >= 2 {
                let h = state.h.value();
                let dot: f64 = h.data().iter().zip(prev_sum.data()).map(|(a, b)| a * b).sum();
                let nh = h.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                let ns = prev_sum.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(dot.abs() <= 1e-9 * nh * ns, "{dot}");
            }
        }
    }

    #[test]
    fn parallel_candidate_collapses_to_zero() {
        let mut r = rng(4);
        let params = LstmParams::random(3, 4, &mut r);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = tape.constant(random_vec(3, &mut r));
        let mut prev = LstmState::initial(&tape, 4);
        prev.h = tape.constant(random_vec(4, &mut r));
        prev.c = tape.constant(random_vec(4, &mut r));
        prev.t = 1;
        let h_hat = lstm_step(x, &prev, &p).unwrap().h;
        prev.running_sum = h_hat.scale(2.0).unwrap();
        let next = orthogonal_lstm_step(x, &prev, &p).unwrap();
        assert!(next.h.value().data().iter().all(|v| v.abs() < 1e-15));
        let mut state = next;
        for _ in 0..3 {
            let x = tape.constant(random_vec(3, &mut r));
            state = orthogonal_lstm_step(x, &state, &p).unwrap();
            assert!(state.h.value().is_finite());
        }
    }

    #[test]
    fn single_token_encoders_agree_and_repeat_bitwise() {
        let mut r = rng(12);
        let vocab = Vocab::from_tokens(["a", "b", "c"]);
        let table = EmbeddingTable::random(vocab, 4, &mut r);
        let params = LstmParams::random(4, 6, &mut r);
        let v = encode_tokens(&table, &params, &[2], CellKind::Vanilla).unwrap();
        let o = encode_tokens(&table, &params, &[2], CellKind::Orthogonal).unwrap();
        assert_eq!(v, o);
        let ids = [2, 3, 4, 2, 1];
        let first = encode_tokens(&table, &params, &ids, CellKind::Orthogonal).unwrap();
        let again = encode_tokens(&table, &params, &ids, CellKind::Orthogonal).unwrap();
        assert_eq!(first, again);
        assert!(encode_tokens(&table, &params, &[], CellKind::Vanilla).is_err());
    }

    #[test]
    fn orthogonal_cell_lowers_conicity() {
        let mut wins = 0;
        for seed in 0..20 {
            let mut r = rng(100 + seed);
            let tokens: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
            let vocab = Vocab::from_tokens(tokens.iter().map(String::as_str));
            let mut table = EmbeddingTable::random(vocab, 8, &mut r);
            table.vectors = table.vectors.map(|v| v * 10.0);
            let params = LstmParams::random(8, 8, &mut r);
            let ids: Vec<usize> = (0..10).map(|_| r.random_range(2..32)).collect();
            let vc =
                conicity(&VectorSet::new(encode_tokens(&table, &params, &ids, CellKind::Vanilla).unwrap()).unwrap())
                    .unwrap();
            let oc =
                conicity(&VectorSet::new(encode_tokens(&table, &params, &ids, CellKind::Orthogonal).unwrap()).unwrap())
                    .unwrap();
            if oc <= vc {
                wins += 1;
            }
        }
        assert!(wins > 10, "orthogonal lower in {wins}/20");
    }
}
