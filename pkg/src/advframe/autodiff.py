"""Minimal reverse-mode differentiation over numpy float64 arrays.

Only the layer types the tagger needs are provided, most of them fused
(a whole GRU direction is a single node with hand-written BPTT).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

Parameters = dict[str, np.ndarray]


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or ''} shape={self.value.shape})"


def leaf(value, name=None) -> Node:
    return Node(value, name=name)


def _toposort(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node, seed: np.ndarray | None = None) -> None:
    """Populate ``.grad`` on every node reachable from ``root``.

    Gradients from earlier calls are cleared first, so one graph can be
    differentiated from several roots in turn.
    """
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise and dense ops ---------------------------------------------

def add(a: Node, b: Node) -> Node:
    return Node(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Node, b: Node) -> Node:
    return Node(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a: Node, c: float) -> Node:
    return Node(a.value * c, (a,), lambda g: (g * c,))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return Node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Node) -> Node:
    y = sigmoid_array(a.value)
    return Node(y, (a,), lambda g: (g * y * (1.0 - y),))


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """``x @ w + b`` over the last axis of ``x``."""
    out = x.value @ w.value
    if b is not None:
        out = out + b.value

    def back(g):
        flat_x = x.value.reshape(-1, x.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        grads = [g @ w.value.T, flat_x.T @ flat_g]
        if b is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    return Node(out, (x, w) if b is None else (x, w, b), back)


def embedding(table: Node, idx: np.ndarray) -> Node:
    idx = np.asarray(idx)

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (gt,)

    return Node(table.value[idx], (table,), back)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes))]

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, back)


def mask_time(x: Node, mask: np.ndarray) -> Node:
    """Zero padding positions of a ``[B, T, C]`` node."""
    m = mask[..., None]
    return Node(x.value * m, (x,), lambda g: (g * m,))


def dropout(x: Node, rate: float, rng: np.random.Generator | None) -> Node:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Node(x.value * keep, (x,), lambda g: (g * keep,))


def grad_reverse(x: Node, lam: float) -> Node:
    """Identity forward; backward multiplies the upstream gradient by ``-lam``."""
    return Node(x.value, (x,), lambda g: (grl_backward(g, lam),))


def grl_backward(upstream: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("reversal scale must be >= 0")
    return -lam * np.asarray(upstream, dtype=np.float64)


# --- recurrent, convolution, pooling ----------------------------------------

def gru(x: Node, mask: np.ndarray, w: Node, u: Node, b: Node, reverse: bool = False) -> Node:
    """One direction of a gated recurrent layer over ``x`` of shape ``[B, T, In]``.

    Gates are laid out ``[reset | update | candidate]`` along the last axis of
    ``w`` (``[In, 3H]``), ``u`` (``[H, 3H]``) and ``b``.  Padding steps carry
    the previous state unchanged.
    """
    B, T, _ = x.shape
    H = u.shape[0]
    Urz, Un = u.value[:, :2 * H], u.value[:, 2 * H:]
    xw = x.value @ w.value + b.value
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    out = np.zeros((B, T, H))
    prev = np.zeros((B, T, H))
    gates = np.zeros((B, T, 3 * H))  # r, z, n per step
    h = np.zeros((B, H))
    for t in steps:
        a = xw[:, t]
        hu = h @ Urz
        rz = sigmoid_array(a[:, :2 * H] + hu)
        r = rz[:, :H]
        z = rz[:, H:]
        n = np.tanh(a[:, 2 * H:] + (r * h) @ Un)
        m = mask[:, t, None]
        h_new = h + m * ((1.0 - z) * (n - h))
        prev[:, t] = h
        gates[:, t, :2 * H] = rz
        gates[:, t, 2 * H:] = n
        out[:, t] = h_new
        h = h_new

    def back(g):
        r, z, n = gates[..., :H], gates[..., H:2 * H], gates[..., 2 * H:]
        m = mask[..., None]
        # step-local derivative factors, computed for all steps at once
        k_n = m * (1.0 - z) * (1.0 - n * n)
        k_z = m * (prev - n) * z * (1.0 - z)
        k_r = prev * r * (1.0 - r)
        keep = 1.0 - m + m * z
        dxw = np.empty_like(xw)
        carry = np.zeros((B, H))
        UnT, UrzT = Un.T, Urz.T
        for t in reversed(steps):
            dh = g[:, t] + carry
            dan = dh * k_n[:, t]
            drh = dan @ UnT
            drz = np.concatenate([drh * k_r[:, t], dh * k_z[:, t]], axis=1)
            dxw[:, t, :2 * H] = drz
            dxw[:, t, 2 * H:] = dan
            carry = dh * keep[:, t] + drh * r[:, t] + drz @ UrzT
        flat = dxw.reshape(-1, 3 * H)
        du = np.empty_like(u.value)
        du[:, :2 * H] = prev.reshape(-1, H).T @ flat[:, :2 * H]
        du[:, 2 * H:] = (r * prev).reshape(-1, H).T @ flat[:, 2 * H:]
        dw = x.value.reshape(-1, x.shape[-1]).T @ flat
        return dxw @ w.value.T, dw, du, flat.sum(axis=0)

    return Node(out, (x, w, u, b), back)


def conv1d(x: Node, w: Node, b: Node) -> Node:
    """Same-length 1-D convolution over time with zero padding; ``w`` is ``[k, C, O]``."""
    k, C, O = w.shape
    if k % 2 != 1:
        raise ValueError("convolution window must be odd")
    B, T, _ = x.shape
    pad = k // 2
    xp = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([xp[:, j:j + T] for j in range(k)], axis=2).reshape(B, T, k * C)
    wf = w.value.reshape(k * C, O)

    def back(g):
        dw = (cols.reshape(-1, k * C).T @ g.reshape(-1, O)).reshape(k, C, O)
        dcols = (g @ wf.T).reshape(B, T, k, C)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j:j + T] += dcols[:, :, j]
        return dxp[:, pad:pad + T], dw, g.reshape(-1, O).sum(axis=0)

    return Node(cols @ wf + b.value, (x, w, b), back)


def masked_max(x: Node, mask: np.ndarray) -> Node:
    """Max over the time axis of ``[B, T, C]`` restricted to unmasked steps."""
    vals = np.where(mask[..., None] > 0, x.value, -np.inf)
    idx = vals.argmax(axis=1)
    out = np.take_along_axis(x.value, idx[:, None, :], axis=1)[:, 0]

    def back(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return Node(out, (x,), back)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Node, targets: np.ndarray, weights: np.ndarray | None = None) -> Node:
    """Weighted mean cross-entropy of integer ``targets`` under ``softmax(logits)``.

    ``logits`` is ``[..., K]``; padding is excluded with zero ``weights``.
    """
    K = logits.shape[-1]
    flat = logits.value.reshape(-1, K)
    tgt = np.asarray(targets).reshape(-1)
    w = np.ones(len(tgt)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    live = w > 0
    if np.any((tgt[live] < 0) | (tgt[live] >= K)):
        raise IndexError("gold index out of range")
    tgt = np.where(live, tgt, 0)
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    total = w.sum()
    loss = -(w * logp[np.arange(len(tgt)), tgt]).sum() / total

    def back(g):
        p = np.exp(logp)
        p[np.arange(len(tgt)), tgt] -= 1.0
        return ((g * p * (w / total)[:, None]).reshape(logits.shape),)

    return Node(loss, (logits,), back)


# --- gradient checking ------------------------------------------------------

class GradientCheckError(AssertionError):
    pass


@dataclass
class GradCheckReport:
    checked: int
    max_rel_error: float
    worst: tuple[str, tuple, float, float]  # (param, index, analytic, numeric)

    def __str__(self):
        name, idx, a, n = self.worst
        return (f"{self.checked} entries checked, worst {name}{list(idx)}: "
                f"analytic={a:.10g} numeric={n:.10g} rel={self.max_rel_error:.3g}")


def finite_diff_check(loss_fn: Callable[[Parameters], tuple[float, Mapping[str, np.ndarray]]],
                      params: Parameters, epsilon: float = 1e-5, tolerance: float = 1e-4,
                      n_samples: int = 50, per_param: int | None = None,
                      seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` returns ``(loss, grads)``.  ``n_samples`` scalar entries
    are drawn across all parameters; with ``per_param`` that many are drawn
    from every array instead.  Error is ``|a - n| / max(1, |a|)``.
    """
    _, grads = loss_fn(params)
    rng = np.random.default_rng(seed)
    names = sorted(params)
    picks: list[tuple[str, tuple]] = []
    if per_param is not None:
        for name in names:
            size = params[name].size
            for flat in rng.choice(size, size=min(per_param, size), replace=False):
                picks.append((name, np.unravel_index(flat, params[name].shape)))
    else:
        sizes = np.array([params[n].size for n in names])
        total = int(sizes.sum())
        bounds = np.cumsum(sizes)
        for flat in rng.choice(total, size=min(n_samples, total), replace=False):
            i = int(np.searchsorted(bounds, flat, side="right"))
            off = flat - (bounds[i - 1] if i else 0)
            picks.append((names[i], np.unravel_index(off, params[names[i]].shape)))
    worst = (names[0], (), 0.0, 0.0)
    max_err = -1.0
    for name, idx in picks:
        probe = {k: v.copy() for k, v in params.items()}
        probe[name][idx] += epsilon
        up, _ = loss_fn(probe)
        probe[name][idx] -= 2 * epsilon
        down, _ = loss_fn(probe)
        numeric = (up - down) / (2 * epsilon)
        analytic = float(grads[name][idx]) if name in grads else 0.0
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        if err > max_err:
            max_err = err
            worst = (name, tuple(int(i) for i in idx), analytic, float(numeric))
    report = GradCheckReport(len(picks), max_err, worst)
    if max_err > tolerance:
        raise GradientCheckError(f"gradient check failed: {report}")
    return report
