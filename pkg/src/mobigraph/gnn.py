"""Message-passing link predictor written directly in numpy.

Each layer is a GraphSAGE-mean convolution

    m_i = mean_{j in N(i)} h_j          (zero vector for isolated nodes)
    h_i' = relu(h_i W_self + m_i W_neigh + b)

followed by inverted dropout during training; the last layer is linear. An
edge ``(u, v)`` is scored by the logit ``<h_u, h_v>`` and trained with the
summed binary cross-entropy. Gradients are derived by hand (see
``_backward``) and the optimizer is Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError, NumericalError
from .graph_core import MobilityGraph

log = logging.getLogger(__name__)

Pair = tuple[int, int]

BCE_EPS = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 0.01
DEFAULT_HIDDEN = 16
DEFAULT_DROPOUT = 0.5
N_FEATURES = 3


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def build_features(g: MobilityGraph) -> np.ndarray:
    """Rows ``[x, y, degree / max_degree]``; null nodes get zero rows."""
    adj = (g.adjacency != 0) & ~g.null_mask[:, None] & ~g.null_mask[None, :]
    deg = adj.sum(axis=1).astype(float)
    top = deg.max() if deg.size else 0.0
    X = np.zeros((g.n, N_FEATURES))
    X[:, :2] = g.node_attrs
    if top > 0:
        X[:, 2] = deg / top
    X[g.null_mask] = 0.0
    return X


def mean_operator(n: int, edges: Iterable[Pair]) -> np.ndarray:
    """Row-normalized undirected adjacency ``M`` so that ``M @ h`` averages neighbors."""
    M = np.zeros((n, n))
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise DataError(f"edge ({u}, {v}) out of range for {n} nodes")
        if u != v:
            M[u, v] = M[v, u] = 1.0
    deg = M.sum(axis=1, keepdims=True)
    np.divide(M, deg, out=M, where=deg > 0)
    return M


@dataclass
class SageLayer:
    W_self: np.ndarray
    W_neigh: np.ndarray
    bias: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.W_self.shape

    def params(self) -> list[np.ndarray]:
        return [self.W_self, self.W_neigh, self.bias]


@dataclass
class LinkPredictor:
    layers: list[SageLayer]
    dropout_rate: float = DEFAULT_DROPOUT
    seed: int = 0
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionError(f"layer shapes do not chain: {a.shape} then {b.shape}")
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.parameters()]
            self.adam_v = [np.zeros_like(p) for p in self.parameters()]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> LinkPredictor:
        return LinkPredictor(
            layers=[SageLayer(*(p.copy() for p in layer.params())) for layer in self.layers],
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            adam_m=[m.copy() for m in self.adam_m],
            adam_v=[v.copy() for v in self.adam_v],
            step=self.step,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "layers": [
                {
                    "shape": list(layer.shape),
                    "W_self": layer.W_self.tolist(),
                    "W_neigh": layer.W_neigh.tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> LinkPredictor:
        layers = [
            SageLayer(
                np.asarray(d["W_self"], dtype=float).reshape(d["shape"]),
                np.asarray(d["W_neigh"], dtype=float).reshape(d["shape"]),
                np.asarray(d["bias"], dtype=float).reshape(d["shape"][1]),
            )
            for d in doc["layers"]
        ]
        return cls(layers, float(doc["dropout_rate"]), int(doc["seed"]), step=int(doc["step"]))


def default_layer_sizes(n_nodes: int, in_features: int = N_FEATURES, width: int = DEFAULT_HIDDEN) -> list[int]:
    """Two layers for graphs under 64 nodes, three from 64 on."""
    depth = 2 if n_nodes < 64 else 3
    return [in_features] + [width] * depth


def init_link_predictor(
    sizes: Sequence[int], dropout_rate: float = DEFAULT_DROPOUT, seed: int = 0
) -> LinkPredictor:
    rng = np.random.default_rng(seed)
    layers = []
    for f_in, f_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(f_in)
        layers.append(
            SageLayer(
                rng.uniform(-bound, bound, (f_in, f_out)),
                rng.uniform(-bound, bound, (f_in, f_out)),
                rng.uniform(-bound, bound, f_out),
            )
        )
    return LinkPredictor(layers, dropout_rate, seed)


# -- forward / backward ------------------------------------------------------


@dataclass
class _LayerCache:
    h: np.ndarray
    mh: np.ndarray
    z: np.ndarray
    keep: np.ndarray | None  # scaled dropout mask, or None
    last: bool


def _layer_forward(
    layer: SageLayer,
    h: np.ndarray,
    agg: np.ndarray,
    last: bool,
    keep: np.ndarray | None,
) -> tuple[np.ndarray, _LayerCache]:
    if h.shape[1] != layer.W_self.shape[0]:
        raise DimensionError(f"features have width {h.shape[1]}, layer expects {layer.W_self.shape[0]}")
    mh = agg @ h
    z = h @ layer.W_self + mh @ layer.W_neigh + layer.bias
    if last:
        out = z
    else:
        out = np.maximum(z, 0.0)
        if keep is not None:
            out = out * keep
    return out, _LayerCache(h, mh, z, keep, last)


def _dropout_masks(model: LinkPredictor, n: int, dropout_seed: Any) -> list[np.ndarray | None]:
    rate = model.dropout_rate
    if rate == 0.0:
        return [None] * len(model.layers)
    rng = np.random.default_rng(dropout_seed)
    masks: list[np.ndarray | None] = []
    for k, layer in enumerate(model.layers):
        if k == len(model.layers) - 1:
            masks.append(None)
        else:
            masks.append((rng.random((n, layer.shape[1])) >= rate) / (1.0 - rate))
    return masks


def sage_forward(
    layer: SageLayer,
    h: np.ndarray,
    edges: Iterable[Pair],
    training: bool = False,
    dropout_seed: int | None = None,
    dropout_rate: float = 0.0,
    last: bool = False,
) -> np.ndarray:
    """One convolution over ``edges``; ``last`` skips the relu and dropout."""
    h = np.asarray(h, dtype=float)
    agg = mean_operator(h.shape[0], edges)
    keep = None
    if training and not last and dropout_rate > 0:
        rng = np.random.default_rng(dropout_seed)
        keep = (rng.random((h.shape[0], layer.shape[1])) >= dropout_rate) / (1.0 - dropout_rate)
    out, _ = _layer_forward(layer, h, agg, last, keep)
    return out


def embed(
    model: LinkPredictor,
    x: np.ndarray,
    agg: np.ndarray,
    training: bool = False,
    dropout_seed: int | None = None,
) -> tuple[np.ndarray, list[_LayerCache]]:
    masks = _dropout_masks(model, x.shape[0], dropout_seed) if training else [None] * len(model.layers)
    h = x
    caches = []
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        h, cache = _layer_forward(layer, h, agg, k == last, masks[k])
        caches.append(cache)
    return h, caches


def _pairs_array(pairs: Sequence[Pair], n: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise DataError(f"node pair index out of range for {n} nodes")
    return arr


def edge_score(h: np.ndarray, pair: Pair) -> float:
    u, v = pair
    n = h.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise DataError(f"pair ({u}, {v}) out of range for {n} nodes")
    return float(h[u] @ h[v])


def _logits(h: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.sum(h[pairs[:, 0]] * h[pairs[:, 1]], axis=1)


def bce_loss(logits: Sequence[float] | np.ndarray, labels: Sequence[float] | np.ndarray) -> float:
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if logits.shape != labels.shape:
        raise DimensionError(f"{logits.size} logits but {labels.size} labels")
    if logits.size == 0:
        return 0.0
    y_hat = np.clip(sigmoid(logits), BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.sum(labels * np.log(y_hat) + (1.0 - labels) * np.log(1.0 - y_hat)))


def _bce_dlogits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    s = sigmoid(logits)
    inside = (s > BCE_EPS) & (s < 1.0 - BCE_EPS)
    return np.where(inside, s - labels, 0.0)


def _backward(model: LinkPredictor, caches: list[_LayerCache], dh: np.ndarray, agg: np.ndarray) -> list[np.ndarray]:
    grads: list[np.ndarray] = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        if cache.last:
            dz = dh
        else:
            if cache.keep is not None:
                dh = dh * cache.keep
            dz = dh * (cache.z > 0)
        g_bias = dz.sum(axis=0)
        g_self = cache.h.T @ dz
        g_neigh = cache.mh.T @ dz
        dh = dz @ layer.W_self.T + agg.T @ (dz @ layer.W_neigh.T)
        grads[:0] = [g_self, g_neigh, g_bias]
    return grads


def loss_and_gradients(
    model: LinkPredictor,
    x: np.ndarray,
    agg: np.ndarray,
    pairs: Sequence[Pair],
    labels: Sequence[float],
    training: bool = False,
    dropout_seed: int | None = None,
) -> tuple[float, list[np.ndarray]]:
    h, caches = embed(model, x, agg, training, dropout_seed)
    P = _pairs_array(pairs, h.shape[0])
    y = np.asarray(labels, dtype=float)
    logits = _logits(h, P)
    loss = bce_loss(logits, y)
    dl = _bce_dlogits(logits, y)
    dh = np.zeros_like(h)
    np.add.at(dh, P[:, 0], dl[:, None] * h[P[:, 1]])
    np.add.at(dh, P[:, 1], dl[:, None] * h[P[:, 0]])
    return loss, _backward(model, caches, dh, agg)


def gradients(
    model: LinkPredictor,
    features: np.ndarray,
    edges: Iterable[Pair],
    batch: Sequence[tuple[Pair, float]],
    training: bool = False,
    dropout_seed: int | None = None,
) -> list[np.ndarray]:
    """Exact gradients of the summed BCE over ``batch`` (pairs with 0/1 labels).

    Returned arrays align with ``model.parameters()``.
    """
    agg = mean_operator(features.shape[0], edges)
    pairs = [p for p, _ in batch]
    labels = [y for _, y in batch]
    return loss_and_gradients(model, features, agg, pairs, labels, training, dropout_seed)[1]


def adam_step(model: LinkPredictor, grads: Sequence[np.ndarray], lr: float = DEFAULT_LR) -> LinkPredictor:
    """In-place Adam update; returns ``model`` for chaining."""
    params = model.parameters()
    if len(grads) != len(params):
        raise DimensionError(f"{len(grads)} gradients for {len(params)} parameters")
    model.step += 1
    t = model.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(params, grads, model.adam_m, model.adam_v):
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return model


# -- data splits -------------------------------------------------------------


@dataclass(frozen=True)
class EdgeSplit:
    n: int
    train_pos: tuple[Pair, ...]
    test_pos: tuple[Pair, ...]
    train_neg: tuple[Pair, ...]
    test_neg: tuple[Pair, ...]
    non_edges: tuple[Pair, ...]
    seed: int

    def negatives_for_epoch(self, epoch: int) -> tuple[Pair, ...]:
        if epoch == 0:
            return self.train_neg
        rng = np.random.default_rng([self.seed, 3, epoch])
        return _sample_pairs(self.non_edges, len(self.train_pos), rng)

    def train_graph(self, g: MobilityGraph) -> MobilityGraph:
        """``g`` with the held-out positive edges removed."""
        A = np.array(g.adjacency)
        for u, v in self.test_pos:
            A[u, v] = A[v, u] = 0.0
        return replace(g, adjacency=A)


def _sample_pairs(pool: Sequence[Pair], k: int, rng: np.random.Generator) -> tuple[Pair, ...]:
    if k == 0:
        return ()
    idx = rng.choice(len(pool), size=k, replace=k > len(pool))
    return tuple(pool[i] for i in idx)


def split_edges(g: MobilityGraph, test_fraction: float = 0.2, seed: int = 0) -> EdgeSplit:
    if not 0.0 <= test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    edges = g.edges()
    if len(edges) < 2:
        raise DataError(f"graph has {len(edges)} real edges; need at least 2 to split")
    real = g.real_nodes
    present = g.adjacency != 0
    non_edges = tuple(
        (int(u), int(v)) for a, u in enumerate(real) for v in real[a + 1 :] if not present[u, v]
    )
    if not non_edges:
        raise DataError("graph is complete: no non-edges to sample negatives from")
    order = np.random.default_rng([seed, 0]).permutation(len(edges))
    shuffled = [edges[i] for i in order]
    n_test = min(int(round(test_fraction * len(edges))), len(edges) - 1)
    test_pos = tuple(shuffled[:n_test])
    train_pos = tuple(shuffled[n_test:])
    train_neg = _sample_pairs(non_edges, len(train_pos), np.random.default_rng([seed, 1]))
    test_neg = _sample_pairs(non_edges, len(test_pos), np.random.default_rng([seed, 2]))
    return EdgeSplit(g.n, train_pos, test_pos, train_neg, test_neg, non_edges, seed)


# -- training / inference ----------------------------------------------------


def train_link_predictor(
    g: MobilityGraph,
    split: EdgeSplit,
    epochs: int = 5000,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    sizes: Sequence[int] | None = None,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> tuple[LinkPredictor, list[float]]:
    """Full-batch training on the split's train edges; returns the model and per-epoch losses."""
    if split.n != g.n:
        raise DimensionError(f"split built for {split.n} nodes, graph has {g.n}")
    visible = split.train_graph(g)
    x = build_features(visible)
    agg = mean_operator(g.n, split.train_pos)
    model = init_link_predictor(sizes or default_layer_sizes(len(g.real_nodes)), dropout_rate, seed)
    pos = list(split.train_pos)
    losses: list[float] = []
    for epoch in range(epochs):
        neg = list(split.negatives_for_epoch(epoch))
        labels = [1.0] * len(pos) + [0.0] * len(neg)
        loss, grads = loss_and_gradients(
            model, x, agg, pos + neg, labels, training=True, dropout_seed=[seed, 4, epoch]
        )
        if not np.isfinite(loss) or not all(np.all(np.isfinite(gr)) for gr in grads):
            raise NumericalError(f"non-finite loss or gradient at epoch {epoch}")
        losses.append(loss)
        adam_step(model, grads, lr)
    return model, losses


def predict_links(model: LinkPredictor, g_structure: MobilityGraph, candidates: Sequence[Pair]) -> np.ndarray:
    """Inference-mode likelihoods for ``candidates`` on the visible structure ``g_structure``."""
    x = build_features(g_structure)
    agg = mean_operator(g_structure.n, g_structure.edges())
    h, _ = embed(model, x, agg, training=False)
    P = _pairs_array(candidates, h.shape[0])
    if P.size == 0:
        return np.zeros(0)
    return sigmoid(_logits(h, P))
