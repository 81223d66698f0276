"""Diverse embedding network: M NNLM branches trained jointly.

The training objective combines the NLL of the alpha-weighted mixture, the
alpha-weighted NLL of each branch, and a representational diversity score
computed from cosine-similarity matrices of sampled vocabulary embeddings.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from dennlm import nnlm
from dennlm.tensor import Rng, default_dtype

COS_EPS = 1e-12


@dataclass
class DennParams:
    branches: list
    alpha: np.ndarray = None

    def __post_init__(self):
        if not self.branches:
            raise ValueError("need at least one branch")
        M = len(self.branches)
        if self.alpha is None:
            self.alpha = np.full(M, 1.0 / M)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (M,) or np.any(self.alpha <= 0) or abs(self.alpha.sum() - 1.0) > 1e-12:
            raise ValueError("alpha must be a positive length-M vector summing to 1")
        N, V = self.branches[0].N, self.branches[0].V
        if any(b.N != N or b.V != V for b in self.branches):
            raise ValueError("all branches must share N and V")

    @property
    def M(self):
        return len(self.branches)

    @property
    def N(self):
        return self.branches[0].N

    @property
    def order(self):
        return self.N

    @property
    def V(self):
        return self.branches[0].V

    def copy(self):
        return DennParams([b.copy() for b in self.branches], self.alpha.copy())

    def n_params(self):
        return sum(b.n_params() for b in self.branches)

    def distribution(self, context):
        return fuse_predict(self, context)

    def target_probs(self, contexts, targets):
        return sum(a * b.target_probs(contexts, targets) for a, b in zip(self.alpha, self.branches))


@dataclass
class LossWeights:
    beta: float = 0.5
    gamma: float = 0.0
    K: int = 500
    normalize: bool = True  # divide d_Rep by K^2

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class LossBreakdown:
    total: float
    mixture_nll: float
    individual_nll: float
    diversity: float  # multi_d_rep value; enters total as -gamma * diversity
    per_branch_nll: np.ndarray = field(default_factory=lambda: np.zeros(0))


def init_denn(seed, N, V, dims, activation="tanh", alpha=None, dtype=None):
    """Independently initialized branches; ``dims`` is a list of (D_m, H_m)."""
    rng = Rng(seed) if isinstance(seed, int) else seed
    branches = [
        nnlm.init_params(rng.split(m), N, D, H, V, activation, dtype)
        for m, (D, H) in enumerate(dims)
    ]
    return DennParams(branches, alpha)


def cosine_matrix(R, sample):
    """K x K cosine similarities between the embedding columns in ``sample``."""
    U = np.asarray(R)[:, np.asarray(sample)]
    norms = np.sqrt(np.einsum("dk,dk->k", U, U))
    C = (U.T @ U) / (np.outer(norms, norms) + COS_EPS)
    np.fill_diagonal(C, 1.0)
    return C


def d_rep(C1, C2, normalize=True):
    """Negated inner product of two cosine matrices, mean over entries by default."""
    C1, C2 = np.asarray(C1), np.asarray(C2)
    if C1.shape != C2.shape:
        raise ValueError(f"cosine matrices differ in shape: {C1.shape} vs {C2.shape}")
    raw = -float(np.sum(C1 * C2))
    return raw / C1.size if normalize else raw


def multi_d_rep(Cs, normalize=True):
    """Mean pairwise d_rep over all unordered pairs (0 for a single matrix)."""
    if len({np.shape(C) for C in Cs}) > 1:
        raise ValueError("cosine matrices differ in shape")
    pairs = list(combinations(range(len(Cs)), 2))
    if not pairs:
        return 0.0
    return sum(d_rep(Cs[i], Cs[j], normalize) for i, j in pairs) / len(pairs)


def draw_sample(rng, V, K):
    if K > V:
        raise ValueError(f"diversity sample K={K} exceeds vocabulary size V={V}")
    return np.sort(rng.choice_without_replacement(V, K))


def _cosine_grad(U, G):
    """Gradient w.r.t. columns U of sum(G * C(U)); G symmetric with zero diagonal.

    Each column gets 2/|u| times the part of (U_hat G) orthogonal to u_hat.
    """
    norms = np.sqrt(np.einsum("dk,dk->k", U, U))
    safe = np.where(norms > 0, norms, 1.0)
    Uh = U / safe[None, :]
    P = Uh @ G
    radial = np.einsum("dk,dk->k", Uh, P)
    return np.where(norms > 0, 2.0 / safe, 0.0)[None, :] * (P - Uh * radial[None, :])


def _evaluate(params, batch, weights, sample, need_grads):
    M, alpha = params.M, params.alpha
    targets = np.asarray(batch.targets)
    B = len(targets)
    rows = np.arange(B)
    caches = [nnlm.forward_cached(b, batch) for b in params.branches]
    # per-branch target probabilities, in float64 for the loss arithmetic
    pt = np.stack([c.probs[rows, targets].astype(np.float64) for c in caches])
    log_pt = np.log(np.maximum(pt, 1e-300))
    mix = alpha @ pt
    mixture_nll = float(-np.mean(np.log(np.maximum(mix, 1e-300))))
    per_branch = -log_pt.mean(axis=1)
    individual_nll = float(alpha @ per_branch)

    if M > 1:
        Cs = [cosine_matrix(b.R_H.astype(np.float64), sample) for b in params.branches]
    else:
        Cs = []
    diversity = multi_d_rep(Cs, weights.normalize)
    total = weights.beta * mixture_nll + (1.0 - weights.beta) * individual_nll - weights.gamma * diversity
    loss = LossBreakdown(total, mixture_nll, individual_nll, diversity, per_branch)
    if not need_grads:
        return loss, None

    grads = []
    resp = alpha[:, None] * pt / np.maximum(mix, 1e-300)[None, :]
    n_pairs = M * (M - 1) // 2
    K = len(sample)
    div_scale = weights.gamma / n_pairs if n_pairs else 0.0
    if weights.normalize and div_scale:
        div_scale /= K * K
    C_sum = sum(Cs) if n_pairs else None
    for m, (branch, cache) in enumerate(zip(params.branches, caches)):
        row_w = (weights.beta * resp[m] + (1.0 - weights.beta) * alpha[m]) / B
        g = nnlm.backward_cached(branch, cache, targets, row_w.astype(cache.probs.dtype))
        if div_scale:
            G = div_scale * (C_sum - Cs[m])
            np.fill_diagonal(G, 0.0)
            dU = _cosine_grad(branch.R_H[:, sample].astype(np.float64), G)
            g.R_H[:, sample] += dU.astype(g.R_H.dtype)
        grads.append(g)
    return loss, grads


def _sample_for(params, weights, rng, sample):
    if sample is not None:
        return np.asarray(sample)
    if params.M == 1:
        return np.zeros(0, dtype=np.int64)
    return draw_sample(rng, params.V, weights.K)


def denn_loss(params, batch, weights, rng, sample=None):
    """Augmented loss on one minibatch; the K-word sample is drawn from ``rng``."""
    sample = _sample_for(params, weights, rng, sample)
    return _evaluate(params, batch, weights, sample, need_grads=False)[0]


def denn_backward(params, batch, weights, rng, sample=None):
    """Per-branch gradients of ``denn_loss(...).total``.

    ``rng`` must be in the same state as for the paired loss call so the
    same diversity sample is replayed.
    """
    sample = _sample_for(params, weights, rng, sample)
    return _evaluate(params, batch, weights, sample, need_grads=True)[1]


def denn_loss_and_grads(params, batch, weights, rng, sample=None):
    sample = _sample_for(params, weights, rng, sample)
    return _evaluate(params, batch, weights, sample, need_grads=True)


def fuse_predict(params, context):
    return sum(a * nnlm.distribution(b, context).astype(np.float64) for a, b in zip(params.alpha, params.branches))


def _block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=mats[0].dtype)
    r = c = 0
    for m in mats:
        out[r : r + m.shape[0], c : c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


@dataclass
class BlockMatrices:
    """The DENN written as a single NNLM with structured matrices.

    ``R_H`` maps the stacked one-hot history (newest word first, length
    (N-1)V) to the concatenated per-branch, per-position embeddings.
    """

    R_H: np.ndarray  # sum_m (N-1) D_m  x  (N-1) V
    W: np.ndarray  # sum_m H_m  x  sum_m (N-1) D_m
    b_h: np.ndarray
    R_P: np.ndarray  # M V  x  sum_m H_m
    b_o: np.ndarray
    N: int
    V: int
    activation: str


def to_block_matrices(params):
    N, V = params.N, params.V
    R_H = np.concatenate([_block_diag([b.R_H] * (N - 1)) for b in params.branches], axis=0)
    W = _block_diag([b.W for b in params.branches])
    R_P = _block_diag([b.R_P for b in params.branches])
    b_h = np.concatenate([b.b_h for b in params.branches])
    b_o = np.concatenate([b.b_o for b in params.branches])
    acts = {b.activation for b in params.branches}
    if len(acts) != 1:
        raise ValueError("block form needs one activation shared by all branches")
    return BlockMatrices(R_H, W, b_h, R_P, b_o, N, V, acts.pop())


def one_hot_history(contexts, V):
    """B x (N-1)V stacked one-hot history vectors, newest word first."""
    contexts = np.asarray(contexts, dtype=np.int64)[:, ::-1]
    B, n = contexts.shape
    X = np.zeros((B, n * V))
    X[np.arange(B)[:, None], contexts + V * np.arange(n)[None, :]] = 1.0
    return X


def block_hidden(blocks, contexts):
    """Monolithic hidden-layer forward pass through the block matrices."""
    X = one_hot_history(contexts, blocks.V).astype(blocks.R_H.dtype)
    pre = (X @ blocks.R_H.T) @ blocks.W.T + blocks.b_h
    return np.tanh(pre) if blocks.activation == "tanh" else 1.0 / (1.0 + np.exp(-pre))


def dense_param_count(N, V, D_total, H_total):
    """Parameters of a plain NNLM with embedding size D_total and H_total hidden units."""
    return V * D_total + H_total * (N - 1) * D_total + H_total + V * H_total + V


def branch_models(params):
    return list(params.branches)


def as_float(params, dtype=None):
    dtype = dtype or default_dtype()
    return DennParams([b.astype(dtype) for b in params.branches], params.alpha.copy())
