"""Seeded PTB-like text generator for desk-scale experiments.

Sentences come from a second-order Markov chain over latent word classes;
each class emits words with Zipfian frequencies, and with some probability
a word is replaced by a fixed collocate of the previous word. The result
has both class-level regularities (learnable by embeddings) and lexical
ones (learnable by counts).
"""

from dataclasses import dataclass
import os

import numpy as np


@dataclass
class SynthConfig:
    n_types: int = 3000
    n_classes: int = 40
    mean_sentence_len: float = 22.0
    collocation_prob: float = 0.25
    transition_concentration: float = 0.08
    zipf_exponent: float = 1.1
    seed: int = 0


class SyntheticSource:
    def __init__(self, cfg=SynthConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        C, W = cfg.n_classes, cfg.n_types
        self.words = [f"w{i:05d}" for i in range(W)]
        self.word_class = rng.integers(0, C, size=W)
        self.class_words = [np.flatnonzero(self.word_class == c) for c in range(C)]
        self.class_emit = []
        for members in self.class_words:
            ranks = rng.permutation(len(members)) + 1.0
            p = ranks ** -cfg.zipf_exponent
            self.class_emit.append(p / p.sum())
        # state (c_prev2, c_prev1) with C meaning sentence start; outcome C means end
        self.trans = rng.dirichlet(np.full(C + 1, cfg.transition_concentration), size=(C + 1, C + 1))
        end = 1.0 / cfg.mean_sentence_len
        self.trans[:, :, C] = end
        self.trans[:, :, :C] *= (1.0 - end) / self.trans[:, :, :C].sum(axis=2, keepdims=True)
        self.trans[C, C, C] = 0.0
        self.trans[C, C] /= self.trans[C, C].sum()
        self.collocate = rng.integers(0, W, size=W)

    def sentences(self, n_tokens, seed):
        """Generate sentences until at least ``n_tokens`` tokens (eos included)."""
        cfg = self.cfg
        C = cfg.n_classes
        rng = np.random.default_rng(seed)
        out, total = [], 0
        while total < n_tokens:
            c2, c1, prev, sent = C, C, None, []
            while len(sent) < 120:
                nxt = rng.choice(C + 1, p=self.trans[c2, c1])
                if nxt == C:
                    break
                if prev is not None and rng.random() < cfg.collocation_prob:
                    w = self.collocate[prev]
                    nxt = self.word_class[w]
                else:
                    w = self.class_words[nxt][rng.choice(len(self.class_words[nxt]), p=self.class_emit[nxt])]
                sent.append(self.words[w])
                c2, c1, prev = c1, nxt, w
            if sent:
                out.append(" ".join(sent))
                total += len(sent) + 1
        return out


def write_splits(out_dir, train_tokens=100_000, valid_tokens=10_000, test_tokens=10_000, cfg=SynthConfig()):
    """Write ``train.txt``, ``valid.txt``, ``test.txt`` and return their paths."""
    src = SyntheticSource(cfg)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for i, (name, n) in enumerate([("train", train_tokens), ("valid", valid_tokens), ("test", test_tokens)]):
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in src.sentences(n, seed=cfg.seed * 1000 + i + 1):
                fh.write(line + "\n")
        paths[name] = path
    return paths
