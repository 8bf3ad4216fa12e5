"""Shared test oracles: finite differences and a reference scorer.

The reference scorer re-implements the evaluation definitions naively and
independently of danqa.metrics (explicit per-example loops, repeated max
extraction instead of a sorted sweep) so agreement is meaningful.
"""

import numpy as np

from danqa.labels import KIND_FUNCWORD, KIND_TARGET


def fd_gradient(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. array x (mutated in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def _f1(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def _greedy_pairs(preds, golds):
    """One-to-one matching by repeatedly taking the best remaining candidate."""
    remaining = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(golds):
            inter = min(p.end, g.end) - max(p.start, g.start)
            ratio = max(0, inter) / (g.end - g.start)
            if ratio >= 0.5:
                remaining.append((pi, gi, ratio))
    pairs = []
    taken_p, taken_g = set(), set()
    while remaining:
        best = None
        for cand in remaining:
            if best is None:
                best = cand
                continue
            if (cand[2] > best[2]
                    or (cand[2] == best[2]
                        and (preds[cand[0]].start, golds[cand[1]].start)
                        < (preds[best[0]].start, golds[best[1]].start))):
                best = cand
        remaining.remove(best)
        if best[0] in taken_p or best[1] in taken_g:
            continue
        taken_p.add(best[0])
        taken_g.add(best[1])
        pairs.append((best[0], best[1]))
    return pairs


def reference_score(task, preds_per_ex, golds_per_ex):
    """Naive scorer implementing the same evaluation definitions."""
    classes = (1, 2, 3)
    tp = dict.fromkeys(classes, 0)
    fp = dict.fromkeys(classes, 0)
    n_gold = dict.fromkeys(classes, 0)
    e_tp = e_fp = e_gold = 0
    scored = correct = 0

    for preds, golds in zip(preds_per_ex, golds_per_ex):
        pt = [s for s in preds if s.kind == KIND_TARGET]
        gt = [s for s in golds if s.kind == KIND_TARGET]
        for s in gt:
            n_gold[s.polarity] += 1
        e_gold += len(gt)

        if task == "satisf":
            gold_func = set()
            for s in golds:
                if s.kind == KIND_FUNCWORD:
                    gold_func |= set(range(s.start, s.end))
            pred_func = set()
            for s in preds:
                if s.kind == KIND_FUNCWORD:
                    pred_func |= set(range(s.start, s.end))
            func_ok = (len(gold_func) == 0) or bool(gold_func & pred_func)
        else:
            func_ok = True

        pairs = _greedy_pairs(pt, gt)
        matched_p = {pi for pi, _ in pairs}
        for pi, gi in pairs:
            if not func_ok:
                continue
            e_tp += 1
            scored += 1
            if pt[pi].polarity == gt[gi].polarity:
                correct += 1
                tp[gt[gi].polarity] += 1
        for pi in range(len(pt)):
            if pi not in matched_p:
                e_fp += 1
                fp[pt[pi].polarity] += 1

    f1s = []
    per_class = {}
    for c in classes:
        fn_c = n_gold[c] - tp[c]
        per_class[c] = (tp[c], fp[c], fn_c)
        if tp[c] + fp[c] + fn_c > 0:
            f1s.append(_f1(tp[c], fp[c], fn_c))
    avg = sum(f1s) / len(f1s) if f1s else 1.0
    ext = _f1(e_tp, e_fp, e_gold - e_tp)
    acc = correct / scored if scored else 1.0
    return {"avg_f1": avg, "extraction_f1": ext, "polarity_acc": acc,
            "per_class": per_class}
