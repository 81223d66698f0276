"""RMSProp training loop for DENN models."""

import csv
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from dennlm import denn
from dennlm.corpus import make_batches, ngram_windows
from dennlm.nnlm import BIAS_NAMES, PARAM_ORDER
from dennlm.tensor import Rng

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_total", "mixture_nll", "individual_nll", "diversity", "heldout_ppl", "lr")


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    bias_lr_scale: float = 1.0
    l1: float = 0.0
    l2: float = 0.0
    max_epochs: int = 10
    patience: int = 1
    batch_size: int = 128

    def __post_init__(self):
        checks = [
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (0 <= self.rho < 1, "rho must lie in [0, 1)"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (self.clip_norm >= 0, "clip_norm must be >= 0"),
            (self.bias_lr_scale > 0, "bias_lr_scale must be > 0"),
            (self.l1 >= 0 and self.l2 >= 0, "l1 and l2 must be >= 0"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class OptimState:
    r: list  # one dict name -> accumulator per branch
    step: int = 0


def init_state(params):
    return OptimState([{k: np.zeros_like(v) for k, v in b.arrays().items()} for b in params.branches])


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(v, dtype=np.float64))) for g in grads for v in g.arrays().values()))


def clip_global_norm(grads, clip_norm):
    """Rescale every gradient by clip_norm / ||g|| when the global norm exceeds clip_norm."""
    if clip_norm <= 0:
        return grads
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return [g.replace(**{k: v * v.dtype.type(scale) for k, v in g.arrays().items()}) for g in grads]


def rmsprop_step(params, grads, state, config):
    """One in-place RMSProp update; returns ``(params, state)``.

    L1/L2 terms are added to weight-matrix gradients only. Bias updates use
    ``learning_rate * bias_lr_scale``.
    """
    for g in grads:
        for name, v in g.arrays().items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite gradient in {name}; step aborted")
    for branch, g, r in zip(params.branches, grads, state.r):
        for name in PARAM_ORDER:
            theta = getattr(branch, name)
            grad = getattr(g, name)
            is_bias = name in BIAS_NAMES
            if not is_bias and (config.l2 or config.l1):
                grad = grad + config.l2 * theta + config.l1 * np.sign(theta)
            acc = r[name]
            acc *= config.rho
            acc += (1.0 - config.rho) * grad * grad
            lr = config.learning_rate * (config.bias_lr_scale if is_bias else 1.0)
            theta -= (lr * grad / (np.sqrt(acc) + config.epsilon)).astype(theta.dtype)
    state.step += 1
    return params, state


@dataclass
class TrainingLog:
    initial_heldout_ppl: float
    records: list = field(default_factory=list)

    @property
    def best_heldout_ppl(self):
        ppls = [self.initial_heldout_ppl] + [r["heldout_ppl"] for r in self.records]
        return min(ppls)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for rec in self.records:
                w.writerow([rec["epoch"]] + [repr(float(rec[c])) for c in LOG_COLUMNS[1:]])


def heldout_perplexity(params, ids):
    """Fused-model perplexity over the padded window stream of ``ids``."""
    ctx, tgt = ngram_windows(ids, params.N)
    p = params.target_probs(ctx, tgt)
    return float(2.0 ** (-np.mean(np.log2(p))))


def train(model, data, weights, config, seed):
    """Train ``model`` on ``data.train``; returns (best params, TrainingLog).

    Each epoch reshuffles the training windows. Held-out perplexity on
    ``data.valid`` is measured after every epoch; when it fails to improve
    for ``patience`` epochs the learning rate is halved, and training stops
    at the next stagnation or after ``max_epochs``.
    """
    if len(data.train) == 0 or len(data.valid) == 0:
        raise ValueError("empty training or held-out data")
    params = model.copy()
    ctx, tgt = ngram_windows(data.train, params.N)
    rng = Rng(seed)
    state = init_state(params)
    lr = config.learning_rate
    best = params.copy()
    best_ppl = heldout_perplexity(params, data.valid)
    tlog = TrainingLog(best_ppl)
    stale, halved = 0, False
    log.info("initial held-out ppl %.3f", best_ppl)
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(ctx, tgt, config.batch_size, int(rng.split(epoch, 0).integers(0, 2**63 - 1)))
        sample_rng = rng.split(epoch, 1)
        step_cfg = OptimConfig(**{**config.__dict__, "learning_rate": lr})
        sums = np.zeros(4)
        for batch in batches:
            loss, grads = denn.denn_loss_and_grads(params, batch, weights, sample_rng)
            grads = clip_global_norm(grads, config.clip_norm)
            rmsprop_step(params, grads, state, step_cfg)
            sums += len(batch.targets) * np.array([loss.total, loss.mixture_nll, loss.individual_nll, loss.diversity])
        sums /= len(tgt)
        ppl = heldout_perplexity(params, data.valid)
        tlog.records.append(
            dict(epoch=epoch, train_total=sums[0], mixture_nll=sums[1], individual_nll=sums[2],
                 diversity=sums[3], heldout_ppl=ppl, lr=lr)
        )
        log.info("epoch %d loss %.4f held-out ppl %.3f lr %g", epoch, sums[0], ppl, lr)
        if ppl < best_ppl:
            best_ppl, best, stale = ppl, params.copy(), 0
            continue
        stale += 1
        if stale >= config.patience:
            if halved:
                break
            lr *= 0.5
            halved, stale = True, 0
    return best, tlog
