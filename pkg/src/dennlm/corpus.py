"""Vocabulary building, id encoding, and N-gram window batching."""

from collections import Counter
from dataclasses import dataclass, field
import hashlib

import numpy as np

from dennlm.tensor import Rng

UNK = "<unk>"
EOS = "</s>"


@dataclass
class Vocabulary:
    id_to_token: list
    unk_id: int = 0
    eos_id: int = 1
    token_to_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        if len(self.id_to_token) < 2 or self.unk_id == self.eos_id:
            raise ValueError("vocabulary needs distinct unk and eos entries")
        if max(self.unk_id, self.eos_id) >= len(self.id_to_token):
            raise ValueError("reserved ids out of range")

    @property
    def V(self):
        return len(self.id_to_token)

    def __len__(self):
        return len(self.id_to_token)

    def id(self, token):
        return self.token_to_id.get(token, self.unk_id)

    def digest(self):
        """Hex sha256 of the vocabulary file contents."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self):
        return "".join(tok + "\n" for tok in self.id_to_token)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens, unk_id=tokens.index(UNK), eos_id=tokens.index(EOS))


@dataclass
class EncodedCorpus:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


@dataclass
class NGramBatch:
    contexts: np.ndarray  # B x (N-1), oldest history word first
    targets: np.ndarray

    @property
    def B(self):
        return len(self.targets)


def build_vocabulary(train_lines, max_size=None):
    """Rank tokens by descending count, ties broken lexicographically.

    ``max_size`` caps the total vocabulary size, the two reserved entries
    included. Existing ``<unk>`` tokens are folded into the unk id.
    """
    counts = Counter()
    for line in train_lines:
        counts.update(line.split())
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    if not counts:
        raise ValueError("empty corpus")
    ranked = sorted(counts, key=lambda tok: (-counts[tok], tok))
    if max_size is not None:
        if max_size < 2:
            raise ValueError("max_size must leave room for unk and eos")
        ranked = ranked[: max_size - 2]
    return Vocabulary([UNK, EOS] + ranked, unk_id=0, eos_id=1)


def encode(lines, vocab):
    """Map each non-blank line to ids and terminate it with eos."""
    ids = []
    for line in lines:
        toks = line.split()
        if not toks:
            continue
        ids.extend(vocab.id(t) for t in toks)
        ids.append(vocab.eos_id)
    return np.asarray(ids, dtype=np.int64)


def decode(ids, vocab):
    lines, cur = [], []
    for i in ids:
        if i == vocab.eos_id:
            lines.append(" ".join(cur))
            cur = []
        else:
            cur.append(vocab.id_to_token[i])
    if cur:
        lines.append(" ".join(cur))
    return lines


def ngram_windows(ids, N, eos_id=1):
    """One (context, target) window per token; contexts are left-padded with eos.

    Returns ``(contexts, targets)`` where ``contexts`` is T x (N-1), oldest
    word first. A context never reaches back past the start of its sentence.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    ids = np.asarray(ids, dtype=np.int64)
    T = len(ids)
    contexts = np.full((T, N - 1), eos_id, dtype=np.int64)
    if T == 0:
        return contexts, ids.copy()
    # position of the first token of each token's sentence
    is_start = np.zeros(T, dtype=bool)
    is_start[0] = True
    is_start[1:] = ids[:-1] == eos_id
    sent_start = np.maximum.accumulate(np.where(is_start, np.arange(T), 0))
    pos = np.arange(T)
    for k in range(1, N):
        src = pos - k
        ok = src >= sent_start
        contexts[ok, N - 1 - k] = ids[src[ok]]
    return contexts, ids.copy()


def make_batches(contexts, targets, B, seed):
    """Shuffle the windows with ``seed`` and cut them into batches of ``B``."""
    if B < 1:
        raise ValueError("batch size must be >= 1")
    order = Rng(seed).permutation(len(targets))
    return [
        NGramBatch(contexts[order[i : i + B]], targets[order[i : i + B]])
        for i in range(0, len(targets), B)
    ]


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()
