"""Command-line entry point: ``dennlm prepare | train | eval | gridsearch | synth``."""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import itertools
import json
import logging
import os
import sys

import numpy as np

from dennlm import corpus, denn, evaluate, modelfile, ngram, optim
from dennlm.config import ConfigError, load_config
from dennlm.tensor import default_dtype

log = logging.getLogger("dennlm")

SPLITS = ("train", "valid", "test")


class CommandError(RuntimeError):
    pass


def _read_text(path):
    if not os.path.isfile(path):
        raise CommandError(f"file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return raw.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        raise CommandError(f"{path}:{line}: invalid UTF-8 ({exc.reason})") from exc


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def cmd_prepare(train, valid, test, out, vocab_cap=None):
    """Build the vocabulary from ``train`` and encode all three splits into ``out``."""
    lines = {name: _read_text(p) for name, p in zip(SPLITS, (train, valid, test))}
    try:
        vocab = corpus.build_vocabulary(lines["train"], vocab_cap)
    except ValueError as exc:
        raise CommandError(f"{train}: {exc}") from exc
    os.makedirs(out, exist_ok=True)
    vocab.save(os.path.join(out, "vocab.txt"))
    sizes = {}
    for name in SPLITS:
        ids = corpus.encode(lines[name], vocab).astype("<i4")
        np.save(os.path.join(out, f"{name}.npy"), ids, allow_pickle=False)
        sizes[name] = int(len(ids))
    _write_json(os.path.join(out, "meta.json"), {"V": vocab.V, "vocab_hash": vocab.digest(), "tokens": sizes})
    return vocab


def load_prepared(data_dir):
    for name in ("vocab.txt", *(f"{s}.npy" for s in SPLITS)):
        if not os.path.isfile(os.path.join(data_dir, name)):
            raise CommandError(f"missing prepared artifact: {os.path.join(data_dir, name)}")
    vocab = corpus.Vocabulary.load(os.path.join(data_dir, "vocab.txt"))
    splits = [np.load(os.path.join(data_dir, f"{s}.npy")).astype(np.int64) for s in SPLITS]
    return vocab, corpus.EncodedCorpus(*splits)


def train_model(cfg, vocab, data):
    """Fit the model a RunConfig describes; returns (model, TrainingLog or None)."""
    spec = cfg.model
    if spec.kind == "ngram":
        counts = ngram.count_ngrams(data.train, spec.order, vocab.V, vocab.eos_id)
        return ngram.fit_kneser_ney(counts), None
    params = denn.init_denn(cfg.seed, spec.order, vocab.V, spec.branches, spec.activation, spec.alpha, default_dtype())
    return optim.train(params, data, cfg.loss, cfg.optim, cfg.seed)


def cmd_train(cfg, kind=None):
    if kind is not None:
        cfg.model.kind = kind
    vocab, data = load_prepared(cfg.data_dir)
    model, tlog = train_model(cfg, vocab, data)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "model.denn")
    modelfile.save(path, model, vocab.digest(), cfg.hyperparams())
    if tlog is not None:
        tlog.write_csv(os.path.join(cfg.out, "train_log.csv"))
    return path


def cmd_eval(model_paths, data_dir, out, split="test", test_path=None, interpolate=False, correlate=False):
    vocab, data = load_prepared(data_dir)
    if test_path is not None:
        test = corpus.encode(_read_text(test_path), vocab)
    else:
        test = getattr(data, split)
    models = []
    for p in model_paths:
        if not os.path.isfile(p):
            raise CommandError(f"model file not found: {p}")
        model, meta = modelfile.load(p, default_dtype())
        if meta["vocab_hash"] != vocab.digest():
            raise CommandError(f"{p}: vocabulary hash does not match {data_dir}")
        models.append(model)
    rows = []
    for p, m in zip(model_paths, models):
        rows.append({"model": p, "perplexity": evaluate.perplexity(m, test).perplexity, "weight": ""})
    result = {"rows": rows}
    if interpolate:
        interp = evaluate.tune_interpolation(models, data.valid)
        for row, w in zip(rows, interp.weights):
            row["weight"] = repr(float(w))
        rows.append({"model": "interpolated", "perplexity": evaluate.perplexity(interp, test).perplexity, "weight": ""})
        result["interpolation"] = interp
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "perplexity", "weight"])
        for row in rows:
            w.writerow([row["model"], repr(float(row["perplexity"])), row["weight"]])
    if correlate:
        rep = evaluate.posterior_correlation(models, test)
        with open(os.path.join(out, "correlation.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model"] + list(model_paths))
            for p, r in zip(model_paths, rep.matrix):
                w.writerow([p] + ["" if np.isnan(v) else repr(float(v)) for v in r])
            w.writerow(["mean_offdiag", repr(rep.mean_offdiag)])
        for err in rep.errors:
            log.warning(err)
        result["correlation"] = rep
    return result


def grid_points(grid):
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def run_seed(base_seed, index):
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _grid_run(cfg, index, point):
    run_cfg = cfg.with_overrides(**point)
    run_cfg.seed = run_seed(cfg.seed, index)
    run_cfg.out = os.path.join(cfg.out, f"run_{index:03d}")
    try:
        cmd_train(run_cfg)
        return index, None
    except Exception as exc:  # recorded, remaining runs continue
        return index, f"{type(exc).__name__}: {exc}"


def cmd_gridsearch(cfg, jobs=1):
    points = grid_points(cfg.grid) if cfg.grid else [{}]
    os.makedirs(cfg.out, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_grid_run, [cfg] * len(points), range(len(points)), points))
    else:
        results = [_grid_run(cfg, i, p) for i, p in enumerate(points)]
    failures = {i: err for i, err in results if err}
    vocab, data = load_prepared(cfg.data_dir)
    rows = []
    for i, point in enumerate(points):
        if i in failures:
            continue
        params, _ = modelfile.load(os.path.join(cfg.out, f"run_{i:03d}", "model.denn"), default_dtype())
        try:
            rows.append(evaluate.scatter_row(i, params, data.test, data.valid))
        except ValueError as exc:
            failures[i] = str(exc)
    table = evaluate.ScatterTable(rows, evaluate.scatter_correlation(rows))
    table.write_csv(os.path.join(cfg.out, "scatter.csv"))
    _write_json(os.path.join(cfg.out, "gridsearch.json"), {
        "points": [dict(p, run_id=i, seed=run_seed(cfg.seed, i)) for i, p in enumerate(points)],
        "across_run_corr": table.across_run_corr,
        "failures": {str(k): v for k, v in sorted(failures.items())},
    })
    for i, err in sorted(failures.items()):
        log.warning("run %d failed: %s", i, err)
    return table, failures


def cmd_synth(out, train_tokens, valid_tokens, test_tokens, seed):
    from dennlm.synthetic import SynthConfig, write_splits

    return write_splits(out, train_tokens, valid_tokens, test_tokens, SynthConfig(seed=seed))


def build_parser():
    ap = argparse.ArgumentParser(prog="dennlm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build vocabulary and encode corpus splits")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--vocab-cap", type=int, default=None)
    p.add_argument("--out", required=True)

    for name, help_ in (("train", "train one model"), ("gridsearch", "train a hyperparameter grid")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if name == "train":
            p.add_argument("--kind", choices=("denn", "ngram"), default=None)
        else:
            p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="perplexity, interpolation and posterior correlation")
    p.add_argument("models", nargs="+")
    p.add_argument("--data", required=True, help="prepared data directory")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--test", default=None, help="raw text file to evaluate instead of a prepared split")
    p.add_argument("--interpolate", action="store_true")
    p.add_argument("--correlate", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic PTB-like corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train-tokens", type=int, default=100_000)
    p.add_argument("--valid-tokens", type=int, default=10_000)
    p.add_argument("--test-tokens", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s: %(message)s")
    try:
        if args.command == "prepare":
            vocab = cmd_prepare(args.train, args.valid, args.test, args.out, args.vocab_cap)
            print(f"V={vocab.V} written to {args.out}")
        elif args.command in ("train", "gridsearch"):
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.out is not None:
                cfg.out = args.out
            if args.command == "train":
                print(cmd_train(cfg, args.kind))
            else:
                table, failures = cmd_gridsearch(cfg, args.jobs)
                print(f"{len(table.rows)} runs, {len(failures)} failed, across-run correlation {table.across_run_corr}")
        elif args.command == "eval":
            res = cmd_eval(args.models, args.data, args.out, args.split, args.test, args.interpolate, args.correlate)
            for row in res["rows"]:
                print(f"{row['model']}\t{row['perplexity']:.3f}")
            if "correlation" in res:
                print(f"mean posterior correlation\t{res['correlation'].mean_offdiag:.4f}")
        elif args.command == "synth":
            paths = cmd_synth(args.out, args.train_tokens, args.valid_tokens, args.test_tokens, args.seed)
            print("\n".join(paths.values()))
    except (CommandError, ConfigError, modelfile.ModelFileError) as exc:
        print(f"dennlm: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
