"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import nn
from ..augment import build_augmented_pool
from ..corpus import CorpusError, compute_stats, load_corpus, save_corpus, split_dev, split_folds
from ..fusion import ABLATIONS, FUSION_METHODS
from ..synth import SynthConfig, synth_corpus
from .config import TrainConfig
from .data import FeatureStore, corpus_hash, segment_dialogue, transfer_labels
from .diagnostics import full_loss_gradient_check
from .experiment import baseline_majority, baseline_random, cross_validate, run_ablation, scenario_samples
from .train import TrainedModel, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--scenario", choices=("endpointing", "bargein"), default=d)
    p.add_argument("--fusion", choices=FUSION_METHODS, default=d)
    p.add_argument("--cl", choices=("on", "off"), default=d)
    p.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="turntaking", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = command("synth", "write a synthetic corpus")
    p.add_argument("--n-endpointing", type=int, default=SynthConfig.n_endpointing)
    p.add_argument("--n-bargein", type=int, default=SynthConfig.n_bargein)
    p.add_argument("--noise", type=float, default=SynthConfig.modality_noise, help="per-modality cue flip rate")
    p.add_argument("--switch-ratio-endpointing", type=float, default=SynthConfig.switch_ratio_endpointing)
    p.add_argument("--switch-ratio-bargein", type=float, default=SynthConfig.switch_ratio_bargein)
    p.add_argument("--no-audio", action="store_true")

    p = command("segment", "VAD + IPU extraction over a corpus's dialogues")
    p.add_argument("corpus")

    p = command("featurize", "precompute frame matrices")
    p.add_argument("corpus")

    p = command("train", "train one model on a dialogue-level train/dev split")
    p.add_argument("corpus")

    p = command("eval", "score a checkpoint on a corpus")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)

    p = command("crossval", "k-fold cross-validation")
    p.add_argument("corpus")

    p = command("ablate", "cross-validation with one modality removed")
    p.add_argument("corpus")
    p.add_argument("--drop", choices=ABLATIONS, required=True)

    p = command("augment", "write the augmented minority-class pool")
    p.add_argument("corpus")
    p.add_argument("--total", type=int, default=None)

    p = command("gradcheck", "finite-difference check of the full loss at toy size")
    p.add_argument("--coords", type=int, default=300)

    p = command("baseline", "random and majority-class baselines on the CV folds")
    p.add_argument("corpus")
    return parser


def resolve_config(args) -> TrainConfig:
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = TrainConfig.from_json(obj)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scenario is not None:
        changes["scenario"] = args.scenario
    if args.fusion is not None:
        changes["fusion"] = args.fusion
    if args.cl is not None:
        changes["cl_enabled"] = args.cl == "on"
    return cfg.replace(**changes) if changes else cfg


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


class _Log:
    def __init__(self, path: Path):
        self.path = path
        self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, line: str) -> None:
        self.fh.write(line + "\n")
        self.fh.flush()
        print(line, file=sys.stderr)

    def close(self):
        self.fh.close()


def _store(corpus: str) -> FeatureStore:
    store = FeatureStore(corpus)
    cached = Path(corpus) / "features.npz"
    if cached.exists():
        store.load(cached)
    return store


def cmd_synth(args, cfg):
    scfg = SynthConfig(
        n_endpointing=args.n_endpointing,
        n_bargein=args.n_bargein,
        switch_ratio_endpointing=args.switch_ratio_endpointing,
        switch_ratio_bargein=args.switch_ratio_bargein,
        modality_noise=args.noise,
        write_audio=not args.no_audio,
    )
    out = _out(args)
    _, samples, _ = synth_corpus(out, scfg, cfg.seed)
    counts = compute_stats(samples).counts
    _emit({"out": str(out), "counts": {f"{sc}/{lab}": n for (sc, lab), n in sorted(counts.items())}})


def cmd_segment(args, cfg):
    dialogues, labeled = load_corpus(args.corpus)
    out = _out(args)
    ipus, dropped, matched = [], 0, 0
    for d in dialogues:
        kept, n_drop = segment_dialogue(d, args.corpus)
        matched += transfer_labels(kept, labeled)
        ipus.extend(kept)
        dropped += n_drop
    save_corpus(out, dialogues, ipus)
    _emit({"ipus": len(ipus), "unclassifiable": dropped, "labels_transferred": matched})


def cmd_featurize(args, cfg):
    _, samples = load_corpus(args.corpus, check_audio=True)
    store = FeatureStore(args.corpus)
    for s in samples:
        store.get(s)
    path = Path(args.out or args.corpus) / "features.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    store.save(path)
    _emit({"features": str(path), "entries": len(store)})


def cmd_train(args, cfg):
    dialogues, samples = load_corpus(args.corpus)
    data = scenario_samples(samples, cfg.scenario)
    tr, dev = split_dev(data, cfg.dev_frac, cfg.seed)
    out = _out(args)
    log = _Log(out / "log.txt")
    try:
        model = train(cfg, tr, dev, _store(args.corpus), dialogues, log=log)
    finally:
        log.close()
    model.save(out / "model.npz")
    _emit({"checkpoint": str(out / "model.npz"), "best_epoch": model.best_epoch, "history": model.history})


def cmd_eval(args, cfg):
    _, samples = load_corpus(args.corpus)
    model = TrainedModel.load(args.checkpoint)
    data = scenario_samples(samples, model.config.scenario)
    metrics, _, _ = model.evaluate(model.prep.encode(data, _store(args.corpus)))
    _emit(metrics.to_json())


def _crossval(args, cfg, drop=None):
    dialogues, samples = load_corpus(args.corpus)
    out = _out(args)
    log = _Log(out / "log.txt")
    try:
        store = _store(args.corpus)
        h = corpus_hash(args.corpus)
        if drop is None:
            result = cross_validate(cfg, samples, store, dialogues, log=log, corpus_hash=h)
        else:
            result = run_ablation(cfg, samples, store, drop, dialogues, log=log, corpus_hash=h)
    finally:
        log.close()
    result.write(out / "results.json")
    _emit(result.summary())


def cmd_crossval(args, cfg):
    _crossval(args, cfg)


def cmd_ablate(args, cfg):
    _crossval(args, cfg, args.drop)


def cmd_augment(args, cfg):
    dialogues, samples = load_corpus(args.corpus)
    pool = build_augmented_pool(
        cfg.scenario,
        [s for s in samples if s.label is not None],
        dialogues,
        cfg.aug_total if args.total is None else args.total,
        np.random.default_rng([cfg.seed, 2]),
    )
    out = _out(args)
    save_corpus(out, (), pool)
    _emit({"augmented": len(pool), "out": str(out / "ipus.jsonl")})


def cmd_gradcheck(args, cfg):
    err = full_loss_gradient_check(cfg.fusion, cfg.seed, args.coords)
    _emit({"fusion": cfg.fusion, "max_relative_error": err, "tolerance": GRADCHECK_TOL})
    if not err < GRADCHECK_TOL:
        raise nn.GradientCheckError(f"max relative error {err:.3g} exceeds {GRADCHECK_TOL}")


def cmd_baseline(args, cfg):
    _, samples = load_corpus(args.corpus)
    data = scenario_samples(samples, cfg.scenario)
    folds = split_folds(data, cfg.k_folds, cfg.seed)
    rows = []
    for k, test in enumerate(folds):
        train_part = [s for j, f in enumerate(folds) if j != k for s in f]
        rows.append(
            {
                "fold": k,
                "majority": baseline_majority(train_part, test).to_json(),
                "random": baseline_random(test, cfg.seed * 1000 + k).to_json(),
            }
        )
    summary = {
        name: {
            "accuracy_mean": sum(r[name]["accuracy"] for r in rows) / len(rows),
            "macro_f1_mean": sum(r[name]["macro_f1"] for r in rows) / len(rows),
        }
        for name in ("majority", "random")
    }
    out = _out(args)
    (out / "results.json").write_text(
        json.dumps({"config": cfg.to_json(), "folds": rows, "summary": summary}, indent=2, sort_keys=True) + "\n"
    )
    _emit(summary)


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
    "augment": cmd_augment,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        print(f"turntaking: bad configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, cfg)
    except (nn.NumericError, nn.GradientCheckError, FloatingPointError) as e:
        print(f"turntaking: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, OSError, ValueError, KeyError) as e:
        print(f"turntaking: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
