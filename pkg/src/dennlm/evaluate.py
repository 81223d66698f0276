"""Model-agnostic evaluation: perplexity, interpolation, posterior correlation.

Any model exposing ``distribution(context)`` and an ``order`` (or ``N``)
attribute can be evaluated; a vectorized ``target_probs(contexts, targets)``
is used when present.
"""

import csv
from dataclasses import dataclass, field
from itertools import combinations
import math

import numpy as np

from dennlm.corpus import ngram_windows

SCATTER_COLUMNS = ("run_id", "mean_posterior_corr", "pct_log_ppl_improvement", "fused_ppl", "best_branch_ppl")


def model_order(model):
    return getattr(model, "N", None) or model.order


def target_probs(model, ids, N=None):
    """Probability the model gives each actual next word over the window stream."""
    N = N or model_order(model)
    ctx, tgt = ngram_windows(ids, max(N, 2))
    ctx = ctx[:, ctx.shape[1] - (N - 1):] if N > 1 else ctx[:, :0]
    if hasattr(model, "target_probs"):
        return np.asarray(model.target_probs(ctx, tgt), dtype=np.float64)
    return np.array([model.distribution(c)[t] for c, t in zip(ctx, tgt)], dtype=np.float64)


@dataclass
class EvalReport:
    token_count: int
    log2_probs: np.ndarray
    L: float  # mean log2 probability (negative)
    perplexity: float


def report_from_probs(probs):
    probs = np.asarray(probs, dtype=np.float64)
    bad = np.flatnonzero(~(probs > 0))
    if len(bad):
        raise ValueError(f"model assigned zero probability at test position {bad[0]}")
    lp = np.log2(probs)
    L = float(np.mean(lp))
    return EvalReport(len(lp), lp, L, float(2.0 ** (-L)))


def perplexity(model, test, N=None):
    return report_from_probs(target_probs(model, test, N))


@dataclass
class InterpolatedLm:
    models: list
    weights: np.ndarray
    heldout_ll: float = float("nan")  # mean natural-log likelihood on the tuning data

    @property
    def order(self):
        return max(model_order(m) for m in self.models)

    def distribution(self, context):
        context = list(context)
        out = 0.0
        for w, m in zip(self.weights, self.models):
            n = model_order(m)
            out = out + w * np.asarray(m.distribution(context[len(context) - (n - 1):] if n > 1 else []), dtype=np.float64)
        return out

    def target_probs(self, contexts, targets):
        contexts = np.asarray(contexts)
        out = np.zeros(len(targets))
        for w, m in zip(self.weights, self.models):
            n = model_order(m)
            c = contexts[:, contexts.shape[1] - (n - 1):] if n > 1 else contexts[:, :0]
            out += w * (m.target_probs(c, targets) if hasattr(m, "target_probs")
                        else np.array([m.distribution(ci)[t] for ci, t in zip(c, targets)]))
        return out


def _mean_ll(P, lam):
    return float(np.mean(np.log(P @ lam)))


def tune_weights(P, grid_step=0.01, em_iters=50, tol=1e-6):
    """Interpolation weights maximizing mean log-likelihood of the columns of ``P``.

    ``P`` is T x k (per-position target probabilities of each model). Two
    models: exhaustive grid, ties resolved toward 0.5. More models: EM from
    uniform, then the best of the EM result and the simplex corners.
    """
    P = np.asarray(P, dtype=np.float64)
    k = P.shape[1]
    if k < 2:
        raise ValueError("need at least two models to interpolate")
    if k == 2:
        steps = int(round(1.0 / grid_step))
        best, best_ll = None, -math.inf
        for i in sorted(range(steps + 1), key=lambda i: abs(i - steps / 2)):
            lam = np.array([i / steps, 1.0 - i / steps])
            ll = _mean_ll(P, lam)
            if ll > best_ll + 1e-15:
                best, best_ll = lam, ll
        return best, best_ll
    lam = np.full(k, 1.0 / k)
    ll = _mean_ll(P, lam)
    for _ in range(em_iters):
        resp = P * lam / (P @ lam)[:, None]
        lam = resp.mean(axis=0)
        new_ll = _mean_ll(P, lam)
        done = new_ll - ll < tol
        ll = new_ll
        if done:
            break
    for j in range(k):
        corner = np.eye(k)[j]
        c_ll = float(np.mean(np.log(np.maximum(P[:, j], 1e-300))))
        if c_ll > ll:
            lam, ll = corner, c_ll
    return lam, ll


def tune_interpolation(models, heldout, N=None):
    if len(models) < 2:
        raise ValueError("need at least two models to interpolate")
    P = np.stack([target_probs(m, heldout, N) for m in models], axis=1)
    lam, ll = tune_weights(P)
    return InterpolatedLm(list(models), lam, ll)


def pearson(x, y):
    """Two-pass Pearson correlation; None when either vector has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(dx @ dy) / (sx * sy)


@dataclass
class DiversityReport:
    matrix: np.ndarray  # NaN where the correlation is undefined
    mean_offdiag: float
    errors: list = field(default_factory=list)


def correlation_report(vectors):
    k = len(vectors)
    C = np.eye(k)
    errors, vals = [], []
    for i, j in combinations(range(k), 2):
        r = pearson(vectors[i], vectors[j])
        if r is None:
            C[i, j] = C[j, i] = np.nan
            errors.append(f"models {i} and {j}: zero-variance posteriors, correlation undefined")
        else:
            C[i, j] = C[j, i] = r
            vals.append(r)
    mean = float(np.mean(vals)) if vals else float("nan")
    return DiversityReport(C, mean, errors)


def posterior_correlation(models, test, N=None):
    """Pairwise Pearson correlation of the target-word posteriors of ``models``."""
    if len(models) < 2:
        raise ValueError("need at least two models")
    return correlation_report([target_probs(m, test, N) for m in models])


@dataclass
class ScatterTable:
    rows: list
    across_run_corr: float = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCATTER_COLUMNS)
            for row in self.rows:
                w.writerow([row["run_id"]] + [repr(float(row[c])) for c in SCATTER_COLUMNS[1:]])


def scatter_row(run_id, params, test, heldout):
    """Branch diversity and fusion gain for one trained DENN (M >= 2)."""
    if params.M < 2:
        raise ValueError("scatter data needs a DENN with at least two branches")
    branch_test = [target_probs(b, test) for b in params.branches]
    corr = correlation_report(branch_test).mean_offdiag
    heldout_ppl = [perplexity(b, heldout).perplexity for b in params.branches]
    best = int(np.argmin(heldout_ppl))
    best_ppl = report_from_probs(branch_test[best]).perplexity
    fused_ppl = report_from_probs(sum(a * p for a, p in zip(params.alpha, branch_test))).perplexity
    improvement = 100.0 * (math.log(best_ppl) - math.log(fused_ppl)) / math.log(best_ppl)
    return dict(run_id=run_id, mean_posterior_corr=corr, pct_log_ppl_improvement=improvement,
                fused_ppl=fused_ppl, best_branch_ppl=best_ppl)


def scatter_data(runs, test, heldout):
    """``runs`` is a list of (run_id or hyperparams, DennParams)."""
    rows = []
    for i, (hp, params) in enumerate(runs):
        run_id = hp.get("run_id", i) if isinstance(hp, dict) else (hp if hp is not None else i)
        rows.append(scatter_row(run_id, params, test, heldout))
    return ScatterTable(rows, scatter_correlation(rows))


def scatter_correlation(rows):
    if len(rows) < 2:
        return None
    return pearson([r["mean_posterior_corr"] for r in rows], [r["pct_log_ppl_improvement"] for r in rows])
