"""Reusable network layers: embeddings, BLSTMs, attention, dense head.

The batched entry points work on lists of per-timestep ``(B, d)`` tensors
so the recurrences stay vectorized over the batch; the single-sequence
functions wrap them for the common ``(T, d)`` case.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .errors import ShapeError, VocabError
from .tensor import Tensor

NEG_INF = -1e9  # additive mask value; exp underflows to exactly 0.0


def glorot(rng, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class EmbeddingTable:
    """Trainable word embedding matrix of shape (dim, vocab_size).

    Column ``t`` is the vector of token index ``t``. The PAD column
    (index 0) starts at zero and stays trainable.
    """

    def __init__(self, weights: np.ndarray, trainable: bool = True):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"embedding table must be 2-D, got {weights.shape}")
        self.table = Tensor(weights, requires_grad=trainable)

    @classmethod
    def random(cls, dim: int, vocab_size: int, rng) -> "EmbeddingTable":
        w = glorot(rng, dim, vocab_size)
        w[:, 0] = 0.0
        return cls(w)

    @property
    def dim(self) -> int:
        return self.table.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.table.shape[1]

    def lookup(self, idx: np.ndarray) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab_size):
            bad = int(idx.max() if idx.max() >= self.vocab_size else idx.min())
            raise VocabError(
                f"token index {bad} outside vocabulary of size {self.vocab_size}"
            )
        return tc.gather_cols(self.table, idx)


def embed(tokens, table: EmbeddingTable) -> Tensor:
    """Token index sequence -> (T, dim) matrix of embedding columns."""
    return table.lookup(np.asarray(tokens, dtype=np.int64))


class LSTMDirection:
    """Parameters of a single-direction LSTM with fused gate weights.

    Gate order in the fused matrices is [input | forget | candidate |
    output]; the forget-gate bias block starts at 1.0.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.wx = Tensor(glorot(rng, 4 * hidden_dim, input_dim), requires_grad=True)
        self.wh = Tensor(glorot(rng, 4 * hidden_dim, hidden_dim), requires_grad=True)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def run(self, xs):
        """Consume per-timestep (B, input_dim) tensors, return hidden states."""
        if not xs:
            raise ShapeError("LSTM needs at least one timestep")
        batch = xs[0].shape[0]
        h = tc.constant(np.zeros((batch, self.hidden_dim)))
        c = tc.constant(np.zeros((batch, self.hidden_dim)))
        states = []
        for x in xs:
            z = tc.affine2(x, h, self.wx, self.wh, self.b)
            hc = tc.lstm_cell(z, c)
            h = tc.slice_cols(hc, 0, self.hidden_dim)
            c = tc.slice_cols(hc, self.hidden_dim, 2 * self.hidden_dim)
            states.append(h)
        return states


class BLSTMLayer:
    """Bidirectional LSTM; ``output_dim`` is the concatenated fwd+bwd width."""

    def __init__(self, input_dim: int, output_dim: int, rng):
        if output_dim % 2 != 0:
            raise ShapeError(f"BLSTM output_dim must be even, got {output_dim}")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.fw = LSTMDirection(input_dim, output_dim // 2, rng)
        self.bw = LSTMDirection(input_dim, output_dim // 2, rng)

    def seq(self, xs):
        """Per-timestep outputs: [fwd_state_t | bwd_state_t] for each t."""
        fwd = self.fw.run(xs)
        bwd = self.bw.run(xs[::-1])[::-1]
        return [tc.concat(f, b, axis=1) for f, b in zip(fwd, bwd)]

    def pool(self, xs) -> Tensor:
        """Whole-sequence vector: last forward state with first backward state."""
        fwd = self.fw.run(xs)
        bwd = self.bw.run(xs[::-1])
        return tc.concat(fwd[-1], bwd[-1], axis=1)

    def params(self, prefix: str) -> dict:
        out = {}
        for tag, d in (("fw", self.fw), ("bw", self.bw)):
            out[f"{prefix}.{tag}.Wx"] = d.wx
            out[f"{prefix}.{tag}.Wh"] = d.wh
            out[f"{prefix}.{tag}.b"] = d.b
        return out


def _rows_as_steps(x: Tensor):
    if x.data.ndim != 2:
        raise ShapeError(f"expected a (T, d) matrix, got {x.shape}")
    return [tc.select_row(x, t) for t in range(x.shape[0])]


def blstm_seq(x: Tensor, layer: BLSTMLayer) -> Tensor:
    """(T, d_in) -> (T, d_out) bidirectional encoding of one sequence."""
    steps = layer.seq(_rows_as_steps(x))
    return tc.reshape(tc.stack_time(steps), (x.shape[0], layer.output_dim))


def blstm_pool(x: Tensor, layer: BLSTMLayer) -> Tensor:
    """(T, d_in) -> (d_out,) single-vector summary of one sequence."""
    return tc.reshape(layer.pool(_rows_as_steps(x)), (layer.output_dim,))


class AttentionResult:
    def __init__(self, weights: Tensor, context: Tensor):
        self.weights = weights
        self.context = context


def attend(src: Tensor, story: Tensor, story_mask=None) -> AttentionResult:
    """Dot-product attention of each src row over all story rows.

    Weights are the row-softmax of ``src @ story.T``; the context rows are
    the weight-averaged story rows. Optional ``story_mask`` (1 = real
    token) pushes padded story positions to an effectively -inf logit so
    they receive exactly zero weight.
    """
    if src.data.ndim != 2 or story.data.ndim != 2 or src.shape[1] != story.shape[1]:
        raise ShapeError(
            f"attend feature dims differ: src {src.shape} vs story {story.shape}"
        )
    scores = tc.matmul(src, tc.transpose(story))
    if story_mask is not None:
        story_mask = np.asarray(story_mask, dtype=np.float64)
        bias = np.tile(np.where(story_mask > 0, 0.0, NEG_INF), (src.shape[0], 1))
        scores = tc.add(scores, tc.constant(bias))
    weights = tc.softmax_rows(scores)
    context = tc.matmul(weights, story)
    return AttentionResult(weights, context)


def attend_step(src_t: Tensor, story: Tensor, story_swapped: Tensor,
                mask_bias: Tensor) -> Tensor:
    """Batched one-timestep attention context.

    ``src_t`` is (B, d); ``story`` is (B, S, d) with ``story_swapped`` its
    (B, d, S) transpose; ``mask_bias`` is a (B, S) additive logit mask.
    Returns the (B, d) context vectors.
    """
    batch, dim = src_t.shape
    s_len = story.shape[1]
    scores = tc.bmm(tc.reshape(src_t, (batch, 1, dim)), story_swapped)
    scores = tc.add(tc.reshape(scores, (batch, s_len)), mask_bias)
    weights = tc.softmax_rows(scores)
    ctx = tc.bmm(tc.reshape(weights, (batch, 1, s_len)), story)
    return tc.reshape(ctx, (batch, dim))


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    return tc.dropout(x, rate, training, rng)


def dense_shared(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Position-shared affine map from (T, d) features to (T, n_labels) scores."""
    return tc.affine(h, w, b)
