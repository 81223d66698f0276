"""Interpolated Kneser-Ney N-gram language model.

N-grams are packed into int64 keys (oldest word most significant, base V),
so counting and lookup reduce to sorted-array operations.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from dennlm.corpus import ngram_windows

FALLBACK_DISCOUNT = 0.5


def _lookup(keys, values, query):
    """values[keys == query] for each query, 0 where absent."""
    query = np.asarray(query, dtype=np.int64)
    if len(keys) == 0:
        return np.zeros(query.shape, dtype=values.dtype)
    idx = np.searchsorted(keys, query)
    idx_c = np.minimum(idx, len(keys) - 1)
    hit = keys[idx_c] == query
    return np.where(hit, values[idx_c], 0)


def _pack(cols, V):
    key = np.zeros(len(cols[0]), dtype=np.int64)
    for c in cols:
        key = key * V + c
    return key


@dataclass
class CountTable:
    """Raw and continuation counts for orders 1..N.

    ``keys[n]``/``counts[n]`` hold raw counts of order-n n-grams;
    ``cont_keys[n]``/``cont_counts[n]`` hold, for each order-n n-gram g
    (n < N), the number of distinct words seen immediately before g.
    """

    N: int
    V: int
    keys: dict
    counts: dict
    cont_keys: dict
    cont_counts: dict

    def count(self, ngram):
        n = len(ngram)
        key = _pack([np.array([w]) for w in ngram], self.V)
        return int(_lookup(self.keys[n], self.counts[n], key)[0])

    def continuation(self, ngram):
        n = len(ngram)
        key = _pack([np.array([w]) for w in ngram], self.V)
        return int(_lookup(self.cont_keys[n], self.cont_counts[n], key)[0])

    def count_of_counts(self, n, continuation=False):
        c = self.cont_counts[n] if continuation else self.counts[n]
        return int(np.sum(c == 1)), int(np.sum(c == 2))

    def iter_counts(self, n):
        """Yield (ngram tuple, count) for order ``n`` in key order."""
        for key, c in zip(self.keys[n], self.counts[n]):
            words = []
            k = int(key)
            for _ in range(n):
                k, w = divmod(k, self.V)
                words.append(w)
            yield tuple(reversed(words)), int(c)


def count_ngrams(corpus, N, V=None, eos_id=1):
    """Count all orders 1..N over the eos-padded window stream of ``corpus``."""
    corpus = np.asarray(corpus, dtype=np.int64)
    if N < 1:
        raise ValueError("N must be >= 1")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    V = int(V if V is not None else corpus.max() + 1)
    if N == 1:
        return count_windows(np.zeros((len(corpus), 0), dtype=np.int64), corpus, 1, V)
    ctx, tgt = ngram_windows(corpus, N, eos_id=eos_id)
    return count_windows(ctx, tgt, N, V)


def count_windows(contexts, targets, N, V):
    """Count orders 1..N from explicit (context, target) windows."""
    if V ** N >= 2**63:
        raise ValueError("vocabulary too large to pack order-N keys into int64")
    contexts = np.asarray(contexts, dtype=np.int64).reshape(len(targets), -1)
    grams = np.concatenate([contexts[:, contexts.shape[1] - (N - 1):] if N > 1 else contexts[:, :0],
                            np.asarray(targets, dtype=np.int64)[:, None]], axis=1)
    if len(grams) == 0:
        raise ValueError("empty corpus")
    keys, counts, cont_keys, cont_counts = {}, {}, {}, {}
    for n in range(1, N + 1):
        k, c = np.unique(_pack([grams[:, j] for j in range(N - n, N)], V), return_counts=True)
        keys[n], counts[n] = k, c.astype(np.int64)
    for n in range(1, N):
        # drop the oldest word of each distinct (n+1)-gram
        suffix = keys[n + 1] % (V ** n)
        k, c = np.unique(suffix, return_counts=True)
        cont_keys[n], cont_counts[n] = k, c.astype(np.int64)
    return CountTable(N, V, keys, counts, cont_keys, cont_counts)


@dataclass
class _Level:
    keys: np.ndarray
    counts: np.ndarray
    discount: float
    ctx_keys: np.ndarray
    ctx_total: np.ndarray
    ctx_types: np.ndarray


@dataclass
class KneserNeyModel:
    """Interpolated KN with one absolute discount per order.

    The top order uses raw counts; lower orders use continuation counts;
    the unigram level is interpolated with a uniform 1/V floor.
    """

    N: int
    V: int
    levels: dict
    warnings: list = field(default_factory=list)

    @property
    def discounts(self):
        return {n: lvl.discount for n, lvl in self.levels.items()}

    def _prob(self, n, ctx_cols, words):
        lvl = self.levels[n]
        V = self.V
        c = _lookup(lvl.keys, lvl.counts, _pack(ctx_cols + [words], V)).astype(np.float64)
        if n == 1:
            total = float(lvl.ctx_total[0])
            types = float(lvl.ctx_types[0])
            return (np.maximum(c - lvl.discount, 0.0) + lvl.discount * types / V) / total
        lower = self._prob(n - 1, ctx_cols[1:], words)
        ctx_key = _pack(ctx_cols, V)
        total = _lookup(lvl.ctx_keys, lvl.ctx_total, ctx_key).astype(np.float64)
        types = _lookup(lvl.ctx_keys, lvl.ctx_types, ctx_key).astype(np.float64)
        seen = total > 0
        safe = np.where(seen, total, 1.0)
        mixed = (np.maximum(c - lvl.discount, 0.0) + lvl.discount * types * lower) / safe
        return np.where(seen, mixed, lower)

    def target_probs(self, contexts, targets):
        """P(target | context) for each row; contexts are oldest word first."""
        contexts = np.asarray(contexts, dtype=np.int64).reshape(len(targets), -1)
        targets = np.asarray(targets, dtype=np.int64)
        h = self.N - 1
        cols = [contexts[:, j] for j in range(contexts.shape[1] - h, contexts.shape[1])] if h else []
        return self._prob(self.N, cols, targets)

    def distribution(self, context):
        context = [int(w) for w in context][-(self.N - 1):] if self.N > 1 else []
        words = np.arange(self.V, dtype=np.int64)
        cols = [np.full(self.V, w, dtype=np.int64) for w in context]
        return self._prob(self.N, cols, words)


def _discount(counts, n, warn_list):
    n1 = int(np.sum(counts == 1))
    n2 = int(np.sum(counts == 2))
    if n1 + 2 * n2 == 0:
        msg = f"order {n}: no singletons or doubletons, discount falls back to {FALLBACK_DISCOUNT}"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        warn_list.append(msg)
        return FALLBACK_DISCOUNT
    return n1 / (n1 + 2 * n2)


def fit_kneser_ney(counts, discounts=None):
    """Build an interpolated KN model from a :class:`CountTable`.

    ``discounts`` optionally maps order -> fixed discount, bypassing the
    n1 / (n1 + 2 n2) estimate.
    """
    N, V = counts.N, counts.V
    levels, notes = {}, []
    for n in range(1, N + 1):
        if n == N:
            keys, cnt = counts.keys[n], counts.counts[n]
        else:
            keys, cnt = counts.cont_keys[n], counts.cont_counts[n]
        if discounts and n in discounts:
            d = float(discounts[n])
        else:
            d = _discount(cnt, n, notes)
        if n == 1:
            ctx_keys = np.zeros(1, dtype=np.int64)
            ctx_total = np.array([cnt.sum()], dtype=np.int64)
            ctx_types = np.array([len(cnt)], dtype=np.int64)
        else:
            ctx_keys, inv = np.unique(keys // V, return_inverse=True)
            ctx_total = np.bincount(inv, weights=cnt).astype(np.int64)
            ctx_types = np.bincount(inv).astype(np.int64)
        levels[n] = _Level(keys, cnt, d, ctx_keys, ctx_total, ctx_types)
    return KneserNeyModel(N, V, levels, notes)


def kn_distribution(model, context):
    return model.distribution(context)


def export_counts_tsv(counts, vocab, path):
    """Write every stored n-gram as ``tok1 tok2 ...<TAB>count``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n in range(1, counts.N + 1):
            for gram, c in counts.iter_counts(n):
                fh.write(" ".join(vocab.id_to_token[w] for w in gram) + f"\t{c}\n")
