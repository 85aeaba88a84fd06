"""Bidirectional GRU frame tagger with an adversarial domain head.

The encoder embeds every token column, appends a 0/1 channel marking the
target LU, and runs ``n_layers`` stacked bidirectional GRU layers.  A softmax
over the joint label space sits on the last layer; the domain classifier
(convolution, max-pool over time, dense softmax) reads the same layer behind
a gradient reversal node.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Corpus, JointLabel, Sample, encode_labels, label_space_hash
from .optim import GradientSet, TrainingAborted, TrainingState, clip_gradients, lambda_schedule, progress, scale_head, sgd_step

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
HEAD_PREFIX = "dom."


@dataclass(frozen=True)
class NetConfig:
    embedding_dims: tuple[int, ...] = (32, 32, 8, 8)
    hidden_size: int = 64
    n_layers: int = 4
    conv_window: int = 3
    conv_channels: int = 32
    n_domains: int = 2
    dropout_rate: float = 0.1
    init_scale: float = 0.08

    def __post_init__(self):
        object.__setattr__(self, "embedding_dims", tuple(self.embedding_dims))
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_domains < 2:
            raise ValueError("n_domains must be >= 2")
        if min(self.embedding_dims, default=0) <= 0 or self.hidden_size <= 0 or self.conv_channels <= 0:
            raise ValueError("all dimensions must be positive")
        if self.conv_window < 1 or self.conv_window % 2 == 0:
            raise ValueError("conv_window must be a positive odd number")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


class Vocabulary:
    """Per-column string to index maps; 0 is padding and 1 the unknown entry."""

    def __init__(self, columns: Sequence[Sequence[str]]):
        self.columns = [list(c) for c in columns]
        self._index = [{w: i + 2 for i, w in enumerate(c)} for c in self.columns]

    @classmethod
    def build(cls, corpora: Iterable[Corpus]) -> "Vocabulary":
        seen: list[set[str]] = []
        for corpus in corpora:
            for s in corpus:
                for tok in s.tokens:
                    vals = cls.token_values(tok)
                    while len(seen) < len(vals):
                        seen.append(set())
                    for col, v in zip(seen, vals):
                        col.add(v)
        return cls([sorted(c) for c in seen])

    @staticmethod
    def token_values(tok) -> list[str]:
        return [tok.surface.lower(), tok.lemma, tok.pos, *tok.extra_features]

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def sizes(self) -> list[int]:
        return [len(c) + 2 for c in self.columns]

    def encode(self, tok) -> list[int]:
        vals = self.token_values(tok)
        if len(vals) != self.n_columns:
            raise ValueError(f"token has {len(vals)} feature columns, model expects {self.n_columns}")
        return [idx.get(v, UNK) for idx, v in zip(self._index, vals)]

    def to_dict(self) -> dict:
        return {"columns": self.columns}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["columns"])


@dataclass
class Batch:
    features: np.ndarray   # [B, T, C] int
    marker: np.ndarray     # [B, T] 0/1 target channel
    gold: np.ndarray       # [B, T] label indices (0 where absent)
    label_weight: np.ndarray  # [B, T] 1 on labelled real tokens
    domain: np.ndarray     # [B]
    mask: np.ndarray       # [B, T]
    lengths: np.ndarray    # [B]

    def __len__(self):
        return len(self.lengths)


def loss_frame(dists: np.ndarray, gold: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean masked cross-entropy of gold indices under ``dists`` ``[N, L]``, and its gradient."""
    dists = np.asarray(dists, dtype=np.float64)
    gold = np.asarray(gold)
    mask = np.asarray(mask, dtype=np.float64)
    live = mask > 0
    if np.any((gold[live] < 0) | (gold[live] >= dists.shape[-1])):
        raise IndexError("gold index out of range")
    rows = np.arange(len(gold))
    g = np.where(live, gold, 0)
    picked = dists[rows, g]
    total = mask.sum()
    with np.errstate(divide="ignore"):
        logp = np.where(live, np.log(picked), 0.0)
    loss = float(-(mask * logp).sum() / total)
    grad = np.zeros_like(dists)
    grad[rows[live], g[live]] = -mask[live] / (picked[live] * total)
    return loss, grad


def loss_adv(domain_dists: np.ndarray, domain_ids: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean domain cross-entropy and its gradient with respect to the distributions."""
    domain_ids = np.asarray(domain_ids)
    return loss_frame(domain_dists, domain_ids, np.ones(len(domain_ids)))


class Tagger:
    def __init__(self, config: NetConfig, vocab: Vocabulary, labels: Sequence[JointLabel]):
        if len(config.embedding_dims) != vocab.n_columns:
            config = replace(config, embedding_dims=default_embedding_dims(vocab.n_columns))
        self.config = config
        self.vocab = vocab
        self.labels = list(labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.label_hash = label_space_hash(self.labels)

    # --- parameters ---------------------------------------------------------

    def init_params(self, seed: int) -> ad.Parameters:
        """Glorot-uniform input weights, orthogonal recurrent weights, small output layers.

        The output and domain layers draw from ``+-init_scale`` so the initial
        label distribution is close to uniform.
        """
        cfg = self.config
        rng = np.random.default_rng(seed)
        s = cfg.init_scale

        def uni(scale, *shape):
            return rng.uniform(-scale, scale, size=shape)

        def glorot(fan_in, fan_out, *shape):
            return uni(math.sqrt(6.0 / (fan_in + fan_out)), *shape)

        params: ad.Parameters = {}
        for c, (size, dim) in enumerate(zip(self.vocab.sizes(), cfg.embedding_dims)):
            params[f"emb.{c}"] = uni(0.5, size, dim)
        H = cfg.hidden_size
        width = sum(cfg.embedding_dims) + 1
        for layer in range(cfg.n_layers):
            for d in ("fwd", "bwd"):
                params[f"gru.{layer}.{d}.W"] = glorot(width, H, width, 3 * H)
                params[f"gru.{layer}.{d}.U"] = np.concatenate(
                    [np.linalg.qr(rng.normal(size=(H, H)))[0] for _ in range(3)], axis=1)
                params[f"gru.{layer}.{d}.b"] = np.zeros(3 * H)
            width = 2 * H
        params["out.W"] = uni(s, 2 * H, len(self.labels))
        params["out.b"] = np.zeros(len(self.labels))
        params[HEAD_PREFIX + "conv.W"] = glorot(cfg.conv_window * 2 * H, cfg.conv_channels,
                                                 cfg.conv_window, 2 * H, cfg.conv_channels)
        params[HEAD_PREFIX + "conv.b"] = np.zeros(cfg.conv_channels)
        params[HEAD_PREFIX + "W"] = uni(s, cfg.conv_channels, cfg.n_domains)
        params[HEAD_PREFIX + "b"] = np.zeros(cfg.n_domains)
        return params

    @staticmethod
    def head_names(params) -> frozenset[str]:
        return frozenset(n for n in params if n.startswith(HEAD_PREFIX))

    # --- batching -------------------------------------------------------------

    def make_batch(self, samples: Sequence[Sample], domains: Sequence[int] | int = 0,
                   pad_to: int | None = None, rng: np.random.Generator | None = None,
                   word_dropout: float = 0.0) -> Batch:
        B = len(samples)
        if not B:
            raise ValueError("cannot build an empty batch")
        lengths = np.array([len(s.tokens) for s in samples])
        T = max(int(lengths.max()), pad_to or 0)
        C = self.vocab.n_columns
        feats = np.zeros((B, T, C), dtype=np.int64)
        marker = np.zeros((B, T))
        gold = np.zeros((B, T), dtype=np.int64)
        weight = np.zeros((B, T))
        mask = np.zeros((B, T))
        for b, s in enumerate(samples):
            n = len(s.tokens)
            feats[b, :n] = [self.vocab.encode(t) for t in s.tokens]
            marker[b, s.target.start:s.target.end + 1] = 1.0
            mask[b, :n] = 1.0
            if s.gold is not None:
                gold[b, :n] = [self.label_index[lab] for lab in encode_labels(s)]
                weight[b, :n] = 1.0
        if rng is not None and word_dropout > 0:
            drop = (rng.random((B, T)) < word_dropout) & (mask > 0) & (marker == 0)
            feats[drop, 0] = UNK
        dom = np.full(B, domains) if np.isscalar(domains) else np.asarray(domains)
        if np.any(dom >= self.config.n_domains) or np.any(dom < 0):
            raise ValueError("domain id out of range for the network")
        return Batch(feats, marker, gold, weight, dom.astype(np.int64), mask, lengths)

    # --- forward graph --------------------------------------------------------

    def _leaves(self, params):
        return {k: ad.leaf(v, k) for k, v in params.items()}

    def _encode(self, leaves, batch: Batch, rng: np.random.Generator | None) -> ad.Node:
        cfg = self.config
        embs = [ad.embedding(leaves[f"emb.{c}"], batch.features[..., c]) for c in range(self.vocab.n_columns)]
        embs.append(ad.leaf(batch.marker[..., None]))
        x = ad.concat(embs)
        for layer in range(cfg.n_layers):
            if layer:
                x = ad.dropout(x, cfg.dropout_rate, rng)
            f = ad.gru(x, batch.mask, *(leaves[f"gru.{layer}.fwd.{p}"] for p in "WUb"))
            r = ad.gru(x, batch.mask, *(leaves[f"gru.{layer}.bwd.{p}"] for p in "WUb"), reverse=True)
            x = ad.concat([f, r])
        return ad.mask_time(x, batch.mask)

    def _frame_logits(self, leaves, hidden: ad.Node) -> ad.Node:
        return ad.linear(hidden, leaves["out.W"], leaves["out.b"])

    def _domain_logits(self, leaves, hidden: ad.Node, batch: Batch, lam: float, reverse: bool) -> ad.Node:
        h = ad.grad_reverse(hidden, lam) if reverse else hidden
        conv = ad.tanh(ad.conv1d(h, leaves[HEAD_PREFIX + "conv.W"], leaves[HEAD_PREFIX + "conv.b"]))
        pooled = ad.masked_max(conv, batch.mask)
        return ad.linear(pooled, leaves[HEAD_PREFIX + "W"], leaves[HEAD_PREFIX + "b"])

    def forward_frame(self, params, batch: Batch) -> list[np.ndarray]:
        """Per-sample ``[n_tokens, L]`` label distributions (no dropout)."""
        leaves = self._leaves(params)
        probs = ad.softmax(self._frame_logits(leaves, self._encode(leaves, batch, None)).value)
        return [probs[b, :n] for b, n in enumerate(batch.lengths)]

    def forward_domain(self, params, batch: Batch, lam: float = 0.0, reverse: bool = True) -> np.ndarray:
        leaves = self._leaves(params)
        hidden = self._encode(leaves, batch, None)
        return ad.softmax(self._domain_logits(leaves, hidden, batch, lam, reverse).value)

    def encoder_states(self, params, batch: Batch) -> np.ndarray:
        leaves = self._leaves(params)
        return self._encode(leaves, batch, None).value

    # --- losses and gradients ---------------------------------------------------

    @staticmethod
    def _collect(leaves, params) -> dict[str, np.ndarray]:
        return {k: (leaves[k].grad if leaves[k].grad is not None else np.zeros_like(v))
                for k, v in params.items()}

    def frame_loss(self, params, batch: Batch, rng=None) -> tuple[float, dict[str, np.ndarray]]:
        leaves = self._leaves(params)
        logits = self._frame_logits(leaves, self._encode(leaves, batch, rng))
        loss = ad.softmax_cross_entropy(logits, batch.gold, batch.label_weight * batch.mask)
        ad.backward(loss)
        return float(loss.value), self._collect(leaves, params)

    def adv_loss(self, params, batch: Batch, lam: float = 1.0, reverse: bool = True,
                 rng=None) -> tuple[float, dict[str, np.ndarray]]:
        """Domain loss and its gradients; with ``reverse`` the trunk sees ``-lam`` times them."""
        leaves = self._leaves(params)
        hidden = self._encode(leaves, batch, rng)
        loss = ad.softmax_cross_entropy(self._domain_logits(leaves, hidden, batch, lam, reverse), batch.domain)
        ad.backward(loss)
        return float(loss.value), self._collect(leaves, params)

    def gradients(self, params, batch: Batch, adversarial: bool,
                  rng: np.random.Generator | None = None) -> tuple[float, float, GradientSet]:
        """Both losses from one shared forward pass; ``grad_adv`` is the unreversed gradient."""
        leaves = self._leaves(params)
        hidden = self._encode(leaves, batch, rng)
        frame = ad.softmax_cross_entropy(self._frame_logits(leaves, hidden), batch.gold,
                                         batch.label_weight * batch.mask)
        ad.backward(frame)
        g_frame = self._collect(leaves, params)
        if not adversarial:
            return float(frame.value), math.nan, GradientSet(g_frame, {}, self.head_names(params))
        adv = ad.softmax_cross_entropy(self._domain_logits(leaves, hidden, batch, 0.0, False), batch.domain)
        for node in leaves.values():
            node.grad = None  # the output layer is unreachable from the domain loss
        ad.backward(adv)
        g_adv = self._collect(leaves, params)
        return float(frame.value), float(adv.value), GradientSet(g_frame, g_adv, self.head_names(params))

    def fused_gradients(self, params, batch: Batch, lam: float,
                        rng: np.random.Generator | None = None) -> tuple[float, float, GradientSet]:
        """Single backward pass of ``L_frame + L_adv`` through the reversal node.

        Trunk leaves receive ``g_frame - lam * g_adv`` and head leaves ``g_adv``:
        the step :func:`sgd_step` takes from :meth:`gradients`, at half the
        cost.  The trunk direction is returned in ``grad_frame`` and ``grad_adv``
        only holds the head entries.
        """
        leaves = self._leaves(params)
        hidden = self._encode(leaves, batch, rng)
        frame = ad.softmax_cross_entropy(self._frame_logits(leaves, hidden), batch.gold,
                                         batch.label_weight * batch.mask)
        adv = ad.softmax_cross_entropy(self._domain_logits(leaves, hidden, batch, lam, True), batch.domain)
        ad.backward(ad.add(frame, adv))
        grads = self._collect(leaves, params)
        head = self.head_names(params)
        g_frame = {k: (np.zeros_like(v) if k in head else v) for k, v in grads.items()}
        g_adv = {k: grads[k] for k in head}
        return float(frame.value), float(adv.value), GradientSet(g_frame, g_adv, head)

    # --- convenience ------------------------------------------------------------

    def predict_dists(self, params, samples: Sequence[Sample], batch_size: int = 64) -> list[np.ndarray]:
        out = []
        for i in range(0, len(samples), batch_size):
            out.extend(self.forward_frame(params, self.make_batch(samples[i:i + batch_size])))
        return out

    def encode_corpus(self, params, samples: Sequence[Sample], batch_size: int = 64):
        """Frozen last-layer states, one ``[n_tokens, 2H]`` array per sample."""
        out = []
        for i in range(0, len(samples), batch_size):
            batch = self.make_batch(samples[i:i + batch_size])
            states = self.encoder_states(params, batch)
            out.extend(states[b, :n] for b, n in enumerate(batch.lengths))
        return out

    def describe(self) -> dict:
        return {"net": self.config.to_dict(), "vocab": self.vocab.to_dict(),
                "labels": [str(lab) for lab in self.labels]}

    @classmethod
    def from_description(cls, desc: dict) -> "Tagger":
        return cls(NetConfig.from_dict(desc["net"]), Vocabulary.from_dict(desc["vocab"]),
                   [JointLabel.parse(s) for s in desc["labels"]])


def default_embedding_dims(n_columns: int) -> tuple[int, ...]:
    base = (32, 32, 8)
    return tuple(base[c] if c < 3 else 8 for c in range(n_columns))


# --- training -----------------------------------------------------------------

MODES = ("baseline", "adversarial")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1.0
    seed: int = 0
    mode: str = "baseline"
    lambda_pin: float | None = None
    word_dropout: float = 0.0
    clip_norm: float | None = 1.0
    fused: bool = True
    adv_weight: float = 0.1
    head_lr_scale: float = 0.1
    select_deltas: tuple[float, ...] = (-0.4, -0.2, 0.0, 0.2, 0.4)

    def __post_init__(self):
        object.__setattr__(self, "select_deltas", tuple(self.select_deltas))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.adv_weight >= 0 or not self.head_lr_scale > 0:
            raise ValueError("adv_weight must be >= 0 and head_lr_scale > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def interleave(pools: Sequence[Sequence[int]], rng: np.random.Generator) -> list[tuple[int, int]]:
    """Shuffle each pool and merge them so every prefix keeps the pools' proportions."""
    keyed = []
    for p, pool in enumerate(pools):
        order = rng.permutation(len(pool))
        n = len(pool)
        keyed.extend(((k + 0.5) / n, p, int(pool[i])) for k, i in enumerate(order))
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [(p, i) for _, p, i in keyed]


@dataclass
class TrainResult:
    state: TrainingState
    best_epoch: int
    log: list[dict] = field(default_factory=list)


def train(state: TrainingState, tagger: Tagger, train_corpora: Sequence[Corpus], val: Corpus | None,
          lexicon, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """SGD over interleaved domains with a per-epoch adversarial ramp.

    Returns the state with the best validation AI Fmax over
    ``config.select_deltas`` (the last epoch when there is no validation set).
    """
    from .metrics import sweep_delta

    if not train_corpora:
        raise ValueError("need at least one training corpus")
    adversarial = config.mode == "adversarial"
    domains = {c.domain_id for c in train_corpora}
    if adversarial and len(domains) < 2:
        raise ValueError("adversarial training needs at least two distinct domain ids")
    pools = []
    samples = []
    for c in train_corpora:
        labelled = [s for s in c if s.gold is not None]
        pools.append(list(range(len(samples), len(samples) + len(labelled))))
        samples.extend((s, c.domain_id) for s in labelled)
    state = replace(state, learning_rate=config.learning_rate)
    best = (state, -1, -math.inf)
    records = []
    for epoch in range(config.epochs):
        p = progress(epoch, config.epochs)
        if config.lambda_pin is not None:
            lam = config.lambda_pin
        else:
            lam = lambda_schedule(p) if adversarial else 0.0
        state = replace(state, progress=p, lam=config.adv_weight * lam, epoch=epoch)
        rng = np.random.default_rng([config.seed, epoch])
        order = [i for _, i in interleave(pools, rng)]
        lf_sum = la_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [samples[i] for i in order[start:start + config.batch_size]]
            batch = tagger.make_batch([s for s, _ in chunk], [d for _, d in chunk],
                                      rng=rng, word_dropout=config.word_dropout)
            if adversarial and config.fused:
                lf, la, grads = tagger.fused_gradients(state.params, batch, state.lam, rng)
            else:
                lf, la, grads = tagger.gradients(state.params, batch, adversarial, rng)
            if not math.isfinite(lf) or (adversarial and not math.isfinite(la)):
                exc = TrainingAborted(f"non-finite loss at epoch {epoch}")
                exc.result = TrainResult(best[0], best[1], records)
                raise exc
            try:
                grads = clip_gradients(grads, state.lam, config.clip_norm)
                if config.head_lr_scale != 1.0:
                    grads = scale_head(grads, config.head_lr_scale)
                state = sgd_step(state, grads)
            except TrainingAborted as exc:
                exc.result = TrainResult(best[0], best[1], records)
                raise
            lf_sum += lf
            la_sum += la if adversarial else 0.0
            n_batches += 1
        rec = {"epoch": epoch, "progress": p, "lambda": lam,
               "loss_frame": lf_sum / max(1, n_batches),
               "loss_adv": (la_sum / max(1, n_batches)) if adversarial else None}
        score = 0.0
        if val is not None and len(val):
            sweep = sweep_delta(tagger, state.params, val, lexicon, config.select_deltas)
            rec.update(val_ai=sweep.fmax.f1, val_fi=sweep.fi_at_fmax.f1, val_delta=sweep.fmax.delta)
            score = sweep.fmax.f1
        if val is None or score > best[2]:
            best = (state, epoch, score)
        rec["selected"] = best[1] == epoch
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.info("epoch %d lambda=%.4f loss_frame=%.4f %s", epoch, lam, rec["loss_frame"],
                 f"val_ai={score:.4f}" if val is not None else "")
    return TrainResult(best[0], best[1], records)
