"""Independent reference computations used by the tests.

Nothing here imports the code under test beyond plain data types, so a bug in
a template, the linearizer or the connector cannot hide in its own oracle.
"""

from __future__ import annotations

import math
from decimal import Decimal

import numpy as np

ORDINAL_WORDS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth"]


def dec(x: float) -> Decimal:
    # values are stored rounded to at most 2 decimals, so repr is exact enough
    return Decimal(repr(x))


def fmt(d: Decimal) -> str:
    d = d.quantize(Decimal("0.01"))
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def candidate_answers(spec) -> dict[str, str]:
    """Every question any template could ask about ``spec``, with its answer.

    Built by brute force over all series, label pairs and ordinals; ties and
    inapplicable charts simply produce no entry.
    """
    out: dict[str, str] = {}
    S = spec.series
    labels = list(spec.x_labels)
    multi = len(S) > 1
    mark = {"line": "line", "pie": "slice"}.get(spec.chart_type, "bar")

    if multi and spec.chart_type != "pie":
        for a in range(len(S)):
            for b in range(a + 1, len(S)):
                diffs = [abs(dec(x) - dec(y)) for x, y in zip(S[a].values, S[b].values)]
                ca, cb = S[a].color, S[b].color
                out[f"What is the least difference between the {ca} {mark} and the {cb} {mark}?"] = fmt(min(diffs))
                out[f"What is the greatest difference between the {ca} {mark} and the {cb} {mark}?"] = fmt(max(diffs))
    if multi:
        for s in S:
            out[f"Which series is shown in {s.color}?"] = s.series_name
            out[f"What color represents {s.series_name}?"] = s.color

    if spec.chart_type == "grouped_bar":
        for k, s in enumerate(S):
            out[f"What is the label of the {ORDINAL_WORDS[k]} bar from the left in each group?"] = s.series_name
    for k, lab in enumerate(labels):
        o = ORDINAL_WORDS[k]
        q = {
            "vertical_bar": f"What is the label of the {o} bar from the left?",
            "horizontal_bar": f"What is the label of the {o} bar from the top?",
            "grouped_bar": f"What is the label of the {o} group from the left?",
            "line": f"What is the {o} category on the x-axis?",
            "pie": f"Which category is the {o} slice clockwise from the top?",
        }[spec.chart_type]
        out[q] = lab
    if spec.chart_type == "pie":
        out["How many slices does the pie chart have?"] = str(len(labels))
    elif spec.chart_type == "line":
        out["How many categories are on the x-axis?"] = str(len(labels))
    else:
        out["How many bars are there in total?"] = str(len(labels) * len(S))
    if spec.legend_position != "none":
        out["Where is the legend placed?"] = spec.legend_position
        if multi:
            out["How many series are shown in the legend?"] = str(len(S))

    for s in S:
        vals = [dec(v) for v in s.values]
        suffix = f" {s.series_name}" if multi else ""
        if not spec.annotate_values:
            for word, best in (("highest", max(vals)), ("lowest", min(vals))):
                hits = [labels[j] for j, v in enumerate(vals) if v == best]
                if len(hits) == 1:
                    out[f"Which category has the {word}{suffix} value?"] = hits[0]
            for a in range(len(labels)):
                for b in range(len(labels)):
                    if a == b or vals[a] == vals[b]:
                        continue
                    if multi:
                        q = f"Is {s.series_name} in {labels[a]} greater than in {labels[b]}?"
                    else:
                        q = f"Is the value for {labels[a]} greater than for {labels[b]}?"
                    out[q] = "Yes" if vals[a] > vals[b] else "No"
        for j, lab in enumerate(labels):
            if multi:
                q = f"What is the value of {s.series_name} for {lab}?"
            else:
                q = f"What is the value for {lab}?"
            out[q] = fmt(vals[j])
    if spec.title:
        out["What is the title of the chart?"] = spec.title
    return out


def linearize_reference(spec) -> str:
    lines = []
    if spec.title:
        lines.append("TITLE | " + spec.title)
    lines.append(" | ".join(["category"] + [s.series_name for s in spec.series]))
    for j, lab in enumerate(spec.x_labels):
        row = [lab]
        if spec.annotate_values:
            row += [fmt(dec(s.values[j])) for s in spec.series]
        lines.append(" | ".join(row))
    return "\n".join(lines)


def connector_naive(V: np.ndarray, Q: np.ndarray, W_k: np.ndarray, W_v: np.ndarray,
                    W_o: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-head cross-attention with explicit loops. Returns (weights, output)."""
    N, d_v = V.shape
    M, d_k = Q.shape
    K = np.zeros((N, d_k))
    Vv = np.zeros((N, d_k))
    for n in range(N):
        for c in range(d_k):
            for i in range(d_v):
                K[n, c] += V[n, i] * W_k[i, c]
                Vv[n, c] += V[n, i] * W_v[i, c]
    A = np.zeros((M, N))
    for m in range(M):
        scores = []
        for n in range(N):
            s = 0.0
            for c in range(d_k):
                s += Q[m, c] * K[n, c]
            scores.append(s / math.sqrt(d_k))
        top = max(scores)
        ex = [math.exp(s - top) for s in scores]
        tot = sum(ex)
        for n in range(N):
            A[m, n] = ex[n] / tot
    mixed = np.zeros((M, d_k))
    for m in range(M):
        for n in range(N):
            for c in range(d_k):
                mixed[m, c] += A[m, n] * Vv[n, c]
    d_l = W_o.shape[1]
    out = np.zeros((M, d_l))
    for m in range(M):
        for l in range(d_l):
            for c in range(d_k):
                out[m, l] += mixed[m, c] * W_o[c, l]
    return A, out


def adamw_reference(theta: float, grads: list[float], lr: float, b1: float, b2: float,
                    wd: float, eps: float) -> float:
    """Decoupled-weight-decay Adam, written out step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def finite_difference_check(loss_fn, params, eps=1e-6, samples=6, seed=0):
    """Worst relative error between autograd and central differences.

    ``loss_fn()`` must return a float64 scalar tensor built from ``params``
    (a list of float64 leaf tensors). A few coordinates per tensor are
    sampled; the error for one tensor is ``|a - fd| / max(|fd|, |a|, 1e-8)``
    over its sampled coordinates, taken as a vector norm.
    """
    import torch

    gen = np.random.default_rng(seed)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        idx = gen.choice(flat.numel(), size=min(samples, flat.numel()), replace=False)
        a, fd = [], []
        for i in idx:
            old = flat[i].item()
            flat[i] = old + eps
            up = loss_fn().item()
            flat[i] = old - eps
            down = loss_fn().item()
            flat[i] = old
            fd.append((up - down) / (2 * eps))
            a.append(g.reshape(-1)[i].item())
        a, fd = np.array(a), np.array(fd)
        denom = max(np.linalg.norm(fd), np.linalg.norm(a), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - fd) / denom))
    return worst
