"""Versioned binary model files.

Layout (little-endian)::

    b"DENN" | u32 version | u32 metadata length | metadata JSON | array bytes

The metadata lists every array as ``{"name", "dtype", "shape"}`` in the
order its bytes follow. Network parameters are stored as float32;
Kneser-Ney count tables as int64.
"""

import json
import struct

import numpy as np

from dennlm import denn, nnlm
from dennlm.ngram import KneserNeyModel, _Level

MAGIC = b"DENN"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _meta_bytes(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write(path, meta, arrays):
    meta = dict(meta, arrays=[{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays])
    blob = _meta_bytes(meta)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).tobytes(order="C"))


def _read(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    version, n = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ModelFileError(f"{path}: format version {version}, expected {VERSION}")
    meta = json.loads(raw[12 : 12 + n].decode("utf-8"))
    arrays, off = {}, 12 + n
    for spec in meta["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arrays[spec["name"]] = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(spec["shape"]).copy()
        off += count * dt.itemsize
    if off != len(raw):
        raise ModelFileError(f"{path}: {len(raw) - off} trailing bytes")
    return meta, arrays


def save_denn(path, params, vocab_hash, hyperparams=None):
    arrays = []
    for m, b in enumerate(params.branches):
        for name, a in b.arrays().items():
            arrays.append((f"branch{m}.{name}", a.astype("<f4")))
    meta = {
        "kind": "denn",
        "N": params.N,
        "V": params.V,
        "activation": params.branches[0].activation,
        "branches": [[b.D, b.H] for b in params.branches],
        "alpha": [float(a) for a in params.alpha],
        "vocab_hash": vocab_hash,
        "hyperparams": hyperparams or {},
    }
    _write(path, meta, arrays)


def save_kn(path, model, vocab_hash, hyperparams=None):
    arrays = []
    for n, lvl in sorted(model.levels.items()):
        for field in ("keys", "counts", "ctx_keys", "ctx_total", "ctx_types"):
            arrays.append((f"order{n}.{field}", getattr(lvl, field).astype("<i8")))
    meta = {
        "kind": "kn",
        "N": model.N,
        "V": model.V,
        "discounts": {str(n): float(lvl.discount) for n, lvl in model.levels.items()},
        "vocab_hash": vocab_hash,
        "hyperparams": hyperparams or {},
    }
    _write(path, meta, arrays)


def save(path, model, vocab_hash, hyperparams=None):
    if isinstance(model, KneserNeyModel):
        save_kn(path, model, vocab_hash, hyperparams)
    else:
        save_denn(path, model, vocab_hash, hyperparams)


def load(path, dtype=None):
    """Return ``(model, metadata)``; network arrays are cast to ``dtype`` if given."""
    meta, arrays = _read(path)
    if meta["kind"] == "kn":
        levels = {}
        for n in range(1, meta["N"] + 1):
            a = {f: arrays[f"order{n}.{f}"].astype(np.int64) for f in ("keys", "counts", "ctx_keys", "ctx_total", "ctx_types")}
            levels[n] = _Level(a["keys"], a["counts"], meta["discounts"][str(n)], a["ctx_keys"], a["ctx_total"], a["ctx_types"])
        return KneserNeyModel(meta["N"], meta["V"], levels), meta
    if meta["kind"] != "denn":
        raise ModelFileError(f"{path}: unknown model kind {meta['kind']!r}")
    branches = []
    for m in range(len(meta["branches"])):
        kw = {name: arrays[f"branch{m}.{name}"] for name in nnlm.PARAM_ORDER}
        if dtype is not None:
            kw = {k: v.astype(dtype) for k, v in kw.items()}
        branches.append(nnlm.NnlmParams(**kw, N=meta["N"], activation=meta["activation"]))
    return denn.DennParams(branches, np.array(meta["alpha"])), meta
