"""One feed-forward NNLM branch: shared embedding, one hidden layer, softmax.

Shapes (math convention, row-major storage):

* ``R_H``  D x V          embedding, column w is the vector of word w
* ``W``    H x (N-1)D     hidden weights, ``b_h`` length H
* ``R_P``  V x H          output weights, ``b_o`` length V

The hidden input concatenates the history embeddings newest word first.
"""

from dataclasses import dataclass, fields

import numpy as np

from dennlm.tensor import Rng, default_dtype, gaussian_init, sigmoid_elem, softmax_rows, tanh_elem

ACTIVATIONS = ("tanh", "sigmoid")
WEIGHT_NAMES = ("R_H", "W", "R_P")
BIAS_NAMES = ("b_h", "b_o")
PARAM_ORDER = ("R_H", "W", "b_h", "R_P", "b_o")


@dataclass
class NnlmParams:
    R_H: np.ndarray
    W: np.ndarray
    b_h: np.ndarray
    R_P: np.ndarray
    b_o: np.ndarray
    N: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        D, V = self.R_H.shape
        H = self.b_h.shape[0]
        expect = {
            "W": (H, (self.N - 1) * D),
            "b_h": (H,),
            "R_P": (V, H),
            "b_o": (V,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def D(self):
        return self.R_H.shape[0]

    @property
    def V(self):
        return self.R_H.shape[1]

    @property
    def H(self):
        return self.b_h.shape[0]

    @property
    def order(self):
        return self.N

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def replace(self, **arrays):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(arrays)
        return NnlmParams(**kw)

    def copy(self):
        return self.replace(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self):
        return self.replace(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def astype(self, dtype):
        return self.replace(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    def n_params(self):
        return sum(v.size for v in self.arrays().values())

    def distribution(self, context):
        return distribution(self, context)

    def target_probs(self, contexts, targets, chunk=4096):
        return target_probs(self, contexts, targets, chunk)


NnlmGrads = NnlmParams


def init_params(rng, N, D, H, V, activation="tanh", dtype=None):
    """Gaussian weights with stddev 1/sqrt(fan-in), zero biases."""
    dtype = dtype or default_dtype()
    if isinstance(rng, int):
        rng = Rng(rng)
    return NnlmParams(
        R_H=gaussian_init(rng, D, V, 1.0, dtype),
        W=gaussian_init(rng, H, (N - 1) * D, 1.0 / np.sqrt((N - 1) * D), dtype),
        b_h=np.zeros(H, dtype=dtype),
        R_P=gaussian_init(rng, V, H, 1.0 / np.sqrt(H), dtype),
        b_o=np.zeros(V, dtype=dtype),
        N=N,
        activation=activation,
    )


def _contexts(batch):
    return np.asarray(batch.contexts if hasattr(batch, "contexts") else batch, dtype=np.int64)


def embed(params, contexts):
    """B x (N-1)D input: embeddings of the history, newest word first."""
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.ndim != 2 or contexts.shape[1] != params.N - 1:
        raise ValueError(f"context width must be {params.N - 1}")
    if contexts.size and (contexts.min() < 0 or contexts.max() >= params.V):
        raise ValueError("word id out of range")
    E = params.R_H.T
    return E[contexts[:, ::-1]].reshape(len(contexts), -1)


def _activate(params, pre):
    return tanh_elem(pre) if params.activation == "tanh" else sigmoid_elem(pre)


def _activation_grad(params, hidden):
    if params.activation == "tanh":
        return 1.0 - hidden * hidden
    return hidden * (1.0 - hidden)


@dataclass
class ForwardCache:
    contexts: np.ndarray
    x: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def forward_cached(params, batch):
    contexts = _contexts(batch)
    x = embed(params, contexts)
    hidden = _activate(params, x @ params.W.T + params.b_h)
    probs = softmax_rows(hidden @ params.R_P.T + params.b_o)
    return ForwardCache(contexts, x, hidden, probs)


def forward(params, batch):
    """Return ``(hidden, probs)`` for a batch (or a bare context matrix)."""
    cache = forward_cached(params, batch)
    return cache.hidden, cache.probs


def nll(params, batch):
    _, probs = forward(params, batch)
    picked = probs[np.arange(batch.B), batch.targets].astype(np.float64)
    return float(-np.mean(np.log(np.maximum(picked, 1e-30))))


def backward_cached(params, cache, targets, row_weights):
    """Gradient of sum_b row_weights[b] * (-log p(target_b)) w.r.t. params.

    Works from the logit gradient ``row_weights * (p - onehot)``; callers
    choose the weights (1/B for the plain mean loss).
    """
    B = len(targets)
    dlogits = cache.probs * row_weights[:, None].astype(cache.probs.dtype)
    dlogits[np.arange(B), targets] -= row_weights.astype(cache.probs.dtype)
    g_R_P = dlogits.T @ cache.hidden
    g_b_o = dlogits.sum(axis=0)
    dpre = (dlogits @ params.R_P) * _activation_grad(params, cache.hidden)
    g_W = dpre.T @ cache.x
    g_b_h = dpre.sum(axis=0)
    dx = (dpre @ params.W).reshape(B * (params.N - 1), params.D)
    g_E = np.zeros((params.V, params.D), dtype=dx.dtype)
    np.add.at(g_E, cache.contexts[:, ::-1].reshape(-1), dx)
    return params.replace(R_H=np.ascontiguousarray(g_E.T), W=g_W, b_h=g_b_h, R_P=g_R_P, b_o=g_b_o)


def backward(params, batch):
    """Exact gradient of :func:`nll` (mean cross-entropy over the batch)."""
    cache = forward_cached(params, batch)
    targets = np.asarray(batch.targets)
    w = np.full(len(targets), 1.0 / len(targets), dtype=cache.probs.dtype)
    return backward_cached(params, cache, targets, w)


def target_probs(params, contexts, targets, chunk=4096):
    """P(target | context) per row, evaluated in float64 and in chunks."""
    contexts = np.asarray(contexts, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    out = np.empty(len(targets), dtype=np.float64)
    for s in range(0, len(targets), chunk):
        x = embed(params, contexts[s : s + chunk])
        hidden = _activate(params, x @ params.W.T + params.b_h).astype(np.float64)
        logits = hidden @ params.R_P.T.astype(np.float64) + params.b_o
        top = logits.max(axis=1)
        lse = top + np.log(np.exp(logits - top[:, None]).sum(axis=1))
        out[s : s + chunk] = np.exp(logits[np.arange(len(logits)), targets[s : s + chunk]] - lse)
    return out


def distribution(params, context):
    context = np.asarray(context, dtype=np.int64).reshape(1, -1)
    _, probs = forward(params, context)
    return probs[0]
