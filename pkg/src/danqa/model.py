"""Model variants, forward passes, label prediction and tuple decoding.

The full architecture encodes the question, the answer and their
concatenation (the QA story) with three context BLSTMs, lets question and
answer attend over the story, re-encodes both augmented sequences, and
classifies every question position from its encoding joined with a single
answer polarity vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np

from . import layers
from . import tensor as tc
from .corpus import EncodedExample, Vocab
from .errors import ConfigError, ContractError, ShapeError
from .labels import KIND_TARGET, KIND_FUNCWORD, LabelSpace, get_space, label_runs
from .layers import NEG_INF, BLSTMLayer, EmbeddingTable
from .tensor import Tensor

VARIANTS = ("dan", "dan-no-ans-attn", "qa-s-blstm", "qa-coattention")

FUNCWORD_WINDOW = 3  # max token gap when pairing function words to a target

CHECKPOINT_MAGIC = b"DANQACK1"


@dataclass
class ModelConfig:
    variant: str = "dan"
    d_e: int = 300
    blstm_dim: int = 128
    t_q: int = 82
    t_a: int = 82
    task: str = "compat"
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.t_q < 1 or self.t_a < 1:
            raise ConfigError("t_q and t_a must be >= 1")
        if self.blstm_dim % 2 != 0:
            raise ConfigError(f"blstm_dim must be even, got {self.blstm_dim}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in [0, 1), got "
                              f"{self.dropout_rate}")
        get_space(self.task)

    @property
    def space(self) -> LabelSpace:
        return get_space(self.task)


class BatchTrace:
    """All intermediates of one batched forward pass, kept as tape nodes."""

    def __init__(self, examples, cfg):
        self.examples = examples
        self.cfg = cfg
        self.hq1_steps = None
        self.ha1_steps = None
        self.hqa_steps = None
        self.cq_steps = None
        self.ca_steps = None
        self.hq2_steps = None
        self.ha2_steps = None
        self.hq3_steps = None
        self.ha3 = None
        self.sq_flat = None
        self.pq_flat = None

    def probs(self) -> np.ndarray:
        """Per-position label distributions, shape (B, T_q, L)."""
        b = len(self.examples)
        return self.pq_flat.data.reshape(b, self.cfg.t_q, -1)


@dataclass
class ForwardTrace:
    """Single-example view of the forward intermediates (2-D tensors)."""
    hq1: Tensor
    ha1: Tensor
    hqa: Tensor | None
    cq: Tensor | None
    ca: Tensor | None
    hq2: Tensor
    ha2: Tensor
    hq3: Tensor
    ha3: Tensor
    sq: Tensor
    pq: Tensor


class Model:
    def __init__(self, cfg: ModelConfig, vocab_size: int,
                 embedding=None):
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
        self.cfg = cfg
        self.vocab_size = vocab_size
        b = cfg.blstm_dim
        rng = np.random.default_rng(cfg.seed)

        if embedding is not None:
            weights = (embedding.table.data if isinstance(embedding, EmbeddingTable)
                       else np.asarray(embedding, dtype=np.float64))
            if weights.shape != (cfg.d_e, vocab_size):
                raise ShapeError(
                    f"embedding shape {weights.shape} does not match "
                    f"({cfg.d_e}, {vocab_size})"
                )
            self.embedding = EmbeddingTable(weights.copy())
            # keep the init stream aligned with the random-embedding path
            layers.glorot(rng, cfg.d_e, vocab_size)
        else:
            self.embedding = EmbeddingTable.random(cfg.d_e, vocab_size, rng)

        self.ctx1_q = BLSTMLayer(cfg.d_e, b, rng)
        self.ctx1_a = BLSTMLayer(cfg.d_e, b, rng)
        self.ctx1_qa = None
        if cfg.variant in ("dan", "dan-no-ans-attn"):
            self.ctx1_qa = BLSTMLayer(cfg.d_e, b, rng)

        q2_in = b if cfg.variant == "qa-s-blstm" else 2 * b
        a2_in = b if cfg.variant in ("qa-s-blstm", "dan-no-ans-attn") else 2 * b
        self.ctx2_q = BLSTMLayer(q2_in, b, rng)
        self.ctx2_a = BLSTMLayer(a2_in, b, rng)

        n_labels = len(cfg.space)
        self.dense_w = Tensor(layers.glorot(rng, n_labels, 2 * b),
                              requires_grad=True)
        self.dense_b = Tensor(np.zeros(n_labels), requires_grad=True)

    def params(self) -> dict:
        """All trainable tensors by name, iterated in sorted-name order."""
        out = {"embedding.We": self.embedding.table}
        out.update(self.ctx1_q.params("ctx1_q"))
        out.update(self.ctx1_a.params("ctx1_a"))
        if self.ctx1_qa is not None:
            out.update(self.ctx1_qa.params("ctx1_qa"))
        out.update(self.ctx2_q.params("ctx2_q"))
        out.update(self.ctx2_a.params("ctx2_a"))
        out["dense.W"] = self.dense_w
        out["dense.b"] = self.dense_b
        return dict(sorted(out.items()))

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    # ------------------------------------------------------------------
    # forward passes

    def forward_batch(self, examples, training: bool = False,
                      rng=None) -> BatchTrace:
        cfg = self.cfg
        if not examples:
            raise ContractError("forward_batch needs at least one example")
        for ex in examples:
            if len(ex.x_q) != cfg.t_q or len(ex.x_a) != cfg.t_a:
                raise ContractError(
                    f"example {ex.pair.id} has lengths ({len(ex.x_q)}, "
                    f"{len(ex.x_a)}), model expects ({cfg.t_q}, {cfg.t_a})"
                )
        rate = cfg.dropout_rate
        if training and rate > 0.0 and rng is None:
            raise ContractError("training forward pass needs an rng for dropout")

        def drop(t):
            return tc.dropout(t, rate, training, rng)

        xq = np.stack([ex.x_q for ex in examples])
        xa = np.stack([ex.x_a for ex in examples])
        qm = np.stack([ex.q_mask for ex in examples])
        am = np.stack([ex.a_mask for ex in examples])
        batch = len(examples)

        trace = BatchTrace(examples, cfg)

        eq = [self.embedding.lookup(xq[:, t]) for t in range(cfg.t_q)]
        ea = [self.embedding.lookup(xa[:, t]) for t in range(cfg.t_a)]

        hq1 = [drop(h) for h in self.ctx1_q.seq(eq)]
        ha1 = [drop(h) for h in self.ctx1_a.seq(ea)]
        trace.hq1_steps, trace.ha1_steps = hq1, ha1

        cq = ca = None
        if self.ctx1_qa is not None:
            hqa = [drop(h) for h in self.ctx1_qa.seq(eq + ea)]
            trace.hqa_steps = hqa
            story = tc.stack_time(hqa)
            story_sw = tc.swap_last2(story)
            bias = tc.constant(
                np.where(np.concatenate([qm, am], axis=1) > 0, 0.0, NEG_INF))
            cq = [layers.attend_step(h, story, story_sw, bias) for h in hq1]
            if cfg.variant == "dan":
                ca = [layers.attend_step(h, story, story_sw, bias) for h in ha1]
        elif cfg.variant == "qa-coattention":
            story_q = tc.stack_time(hq1)
            story_a = tc.stack_time(ha1)
            bias_q = tc.constant(np.where(qm > 0, 0.0, NEG_INF))
            bias_a = tc.constant(np.where(am > 0, 0.0, NEG_INF))
            sw_q, sw_a = tc.swap_last2(story_q), tc.swap_last2(story_a)
            cq = [layers.attend_step(h, story_a, sw_a, bias_a) for h in hq1]
            ca = [layers.attend_step(h, story_q, sw_q, bias_q) for h in ha1]
        trace.cq_steps, trace.ca_steps = cq, ca

        hq2 = [tc.concat(h, c, axis=1) for h, c in zip(hq1, cq)] if cq else hq1
        ha2 = [tc.concat(h, c, axis=1) for h, c in zip(ha1, ca)] if ca else ha1
        trace.hq2_steps, trace.ha2_steps = hq2, ha2

        hq3 = self.ctx2_q.seq(hq2)
        ha3 = self.ctx2_a.pool(ha2)
        trace.hq3_steps, trace.ha3 = hq3, ha3

        joined = tc.stack_time([tc.concat(h, ha3, axis=1) for h in hq3])
        flat = tc.reshape(joined, (batch * cfg.t_q, 2 * cfg.blstm_dim))
        flat = drop(flat)
        trace.sq_flat = layers.dense_shared(flat, self.dense_w, self.dense_b)
        trace.pq_flat = tc.softmax_rows(trace.sq_flat)
        return trace

    def forward(self, example: EncodedExample, training: bool = False,
                rng=None) -> ForwardTrace:
        """Single-example forward pass with all named intermediates."""
        cfg = self.cfg
        bt = self.forward_batch([example], training=training, rng=rng)
        b = cfg.blstm_dim

        def as_matrix(steps, width):
            return tc.reshape(tc.stack_time(steps), (len(steps), width))

        n_labels = len(cfg.space)
        return ForwardTrace(
            hq1=as_matrix(bt.hq1_steps, b),
            ha1=as_matrix(bt.ha1_steps, b),
            hqa=as_matrix(bt.hqa_steps, b) if bt.hqa_steps else None,
            cq=as_matrix(bt.cq_steps, b) if bt.cq_steps else None,
            ca=as_matrix(bt.ca_steps, b) if bt.ca_steps else None,
            hq2=as_matrix(bt.hq2_steps, bt.hq2_steps[0].shape[1]),
            ha2=as_matrix(bt.ha2_steps, bt.ha2_steps[0].shape[1]),
            hq3=as_matrix(bt.hq3_steps, b),
            ha3=tc.reshape(bt.ha3, (b,)),
            sq=tc.reshape(bt.sq_flat, (cfg.t_q, n_labels)),
            pq=tc.reshape(bt.pq_flat, (cfg.t_q, n_labels)),
        )


def build_model(cfg: ModelConfig, vocab_size: int,
                embedding: np.ndarray | None = None) -> Model:
    return Model(cfg, vocab_size, embedding=embedding)


def predict_labels(trace: ForwardTrace, mask) -> np.ndarray:
    """Per-position argmax labels; PAD positions forced to O.

    np.argmax resolves ties toward the lowest label index, deliberately
    biasing ties to O (index 0).
    """
    mask = np.asarray(mask)
    labels = trace.pq.data.argmax(axis=-1)
    labels[mask == 0] = 0
    return labels


def predict_label_batches(model: Model, examples, batch_size: int = 128):
    """Argmax labels for many examples, shape (N, T_q)."""
    out = np.zeros((len(examples), model.cfg.t_q), dtype=np.int64)
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        with tc.no_grad():
            bt = model.forward_batch(chunk, training=False)
        probs = bt.probs()
        idx = probs.argmax(axis=-1)
        qm = np.stack([ex.q_mask for ex in chunk])
        idx[qm == 0] = 0
        out[lo:lo + len(chunk)] = idx
    return out


# ---------------------------------------------------------------------------
# tuple decoding


@dataclass
class ExtractionTuple:
    product_id: str
    target_text: str
    target_span: tuple | None
    function_words: list = field(default_factory=list)
    function_spans: list = field(default_factory=list)
    polarity: int = 0

    def to_json(self) -> dict:
        return {
            "product_id": self.product_id,
            "target": self.target_text,
            "target_span": list(self.target_span) if self.target_span else None,
            "function_words": self.function_words,
            "function_spans": [list(s) for s in self.function_spans],
            "polarity": self.polarity,
        }


def _span_gap(a, b):
    """Token distance between two disjoint spans; adjacent spans are 1 apart."""
    if a[1] <= b[0]:
        return b[0] - a[1] + 1
    if b[1] <= a[0]:
        return a[0] - b[1] + 1
    return 0


def decode_tuples(labels, tokens, product_id: str, space: LabelSpace):
    """Turn a label sequence over question tokens into extraction tuples.

    Targets come from maximal same-label runs of target labels. In the
    satisfiability space, each target collects every function-word span of
    the same polarity class within FUNCWORD_WINDOW tokens; function-word
    spans attached to no target become tuples with an empty target.
    """
    idx = []
    for lab in labels[:len(tokens)]:
        if isinstance(lab, str):
            if lab not in space:
                raise ContractError(f"label {lab!r} outside space {space.name}")
            idx.append(space.index(lab))
        else:
            if not (0 <= int(lab) < len(space)):
                raise ContractError(f"label index {lab} outside space {space.name}")
            idx.append(int(lab))

    runs = label_runs(idx)
    targets = [(s, e, space.polarity(lab)) for s, e, lab in runs
               if space.kind(lab) == KIND_TARGET]
    funcs = [(s, e, space.polarity(lab)) for s, e, lab in runs
             if space.kind(lab) == KIND_FUNCWORD]

    tuples = []
    used_funcs = set()
    for ts, te, pol in targets:
        words, spans = [], []
        for fi, (fs, fe, fpol) in enumerate(funcs):
            if fpol == pol and _span_gap((fs, fe), (ts, te)) <= FUNCWORD_WINDOW:
                words.append(" ".join(tokens[fs:fe]))
                spans.append((fs, fe))
                used_funcs.add(fi)
        tuples.append(ExtractionTuple(
            product_id=product_id,
            target_text=" ".join(tokens[ts:te]),
            target_span=(ts, te),
            function_words=words,
            function_spans=spans,
            polarity=pol,
        ))
    for fi, (fs, fe, fpol) in enumerate(funcs):
        if fi not in used_funcs:
            tuples.append(ExtractionTuple(
                product_id=product_id,
                target_text="",
                target_span=None,
                function_words=[" ".join(tokens[fs:fe])],
                function_spans=[(fs, fe)],
                polarity=fpol,
            ))
    return tuples


# ---------------------------------------------------------------------------
# checkpoint serialization (little-endian float64 blobs + JSON manifest)


def save_checkpoint(path, model: Model, vocab: Vocab, extra: dict | None = None):
    params = model.params()
    manifest = {
        "format_version": 1,
        "config": asdict(model.cfg),
        "labels": list(model.cfg.space.labels),
        "vocab_hash": vocab.sha256(),
        "vocab_tokens": vocab.tokens,
        "extra": extra or {},
        "params": [{"name": name, "shape": list(p.shape)}
                   for name, p in params.items()],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (model, vocab, manifest)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        if manifest.get("format_version") != 1:
            raise ConfigError(
                f"unsupported checkpoint format {manifest.get('format_version')}"
            )
        cfg = ModelConfig(**manifest["config"])
        tokens = manifest["vocab_tokens"]
        vocab = Vocab(tokens[2:])
        if vocab.sha256() != manifest["vocab_hash"]:
            raise ConfigError("checkpoint vocabulary hash does not match its tokens")
        model = Model(cfg, vocab.size)
        params = model.params()
        declared = manifest["params"]
        if [d["name"] for d in declared] != list(params.keys()):
            raise ConfigError("checkpoint parameter inventory does not match model")
        for d in declared:
            p = params[d["name"]]
            if tuple(d["shape"]) != p.shape:
                raise ConfigError(
                    f"checkpoint shape {d['shape']} for {d['name']} does not "
                    f"match model shape {list(p.shape)}"
                )
            n = int(np.prod(d["shape"])) if d["shape"] else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ConfigError(f"checkpoint truncated at {d['name']}")
            p.data[...] = np.frombuffer(buf, dtype="<f8").reshape(p.shape)
    return model, vocab, manifest
