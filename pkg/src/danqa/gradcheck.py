"""Finite-difference verification of every parameter gradient.

Central differences with step 1e-4 in double precision are compared
against the backward pass of the batch loss on a tiny two-example model.
The relative error uses max(|analytic|, |numeric|, floor) as denominator
so near-zero gradients are judged by an absolute criterion.
"""

from __future__ import annotations

import time
import zlib

import numpy as np

from . import tensor as tc
from .corpus import build_vocab, encode, synth_generate
from .model import Model, ModelConfig, VARIANTS
from .training import batch_loss

EPS = 1e-4
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-3

MICRO = {"d_e": 8, "blstm_dim": 8, "t_q": 6, "t_a": 6, "dropout_rate": 0.0}


def micro_batch(task: str = "compat", seed: int = 0, n: int = 2):
    """Two encoded synthetic examples matching the micro widths."""
    cfg = ModelConfig(task=task, seed=seed, **MICRO)
    pairs = synth_generate(n, task, seed)
    vocab = build_vocab(pairs)
    return cfg, vocab, [encode(p, vocab, cfg) for p in pairs]


def check_model(model: Model, batch, eps: float = EPS,
                floor: float = ERROR_FLOOR, max_elements: int | None = None):
    """Per-parameter maximum relative error of backward vs finite differences."""
    model.zero_grad()
    loss = batch_loss(model, batch, training=False)
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in model.params().items()}
    model.zero_grad()

    def loss_value():
        with tc.no_grad():
            return batch_loss(model, batch, training=False).item()

    report = {}
    for name, p in model.params().items():
        flat = p.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        if max_elements is not None and flat.size > max_elements:
            picks = np.random.default_rng(zlib.crc32(name.encode())).choice(
                flat.size, size=max_elements, replace=False)
        else:
            picks = range(flat.size)
        worst = 0.0
        worst_idx = -1
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), floor)
            if err > worst:
                worst, worst_idx = err, int(i)
        report[name] = {"max_rel_err": worst, "element": worst_idx}
    return report


def run(seed: int = 0, eps: float = EPS, tolerance: float = TOLERANCE,
        variants=VARIANTS, max_elements: int | None = None):
    """Gradient-check every variant; returns (ok, per-variant report, seconds)."""
    started = time.monotonic()
    results = {}
    ok = True
    for variant in variants:
        cfg, vocab, batch = micro_batch(seed=seed)
        cfg = ModelConfig(variant=variant, task=cfg.task, seed=seed, **MICRO)
        model = Model(cfg, vocab.size)
        report = check_model(model, batch, eps=eps, max_elements=max_elements)
        results[variant] = report
        if any(r["max_rel_err"] > tolerance for r in report.values()):
            ok = False
    return ok, results, time.monotonic() - started


def worst_entry(results: dict):
    """(variant, parameter, error) of the largest relative error seen."""
    worst = ("", "", -1.0)
    for variant, report in results.items():
        for name, r in report.items():
            if r["max_rel_err"] > worst[2]:
                worst = (variant, name, r["max_rel_err"])
    return worst
