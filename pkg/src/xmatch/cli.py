"""Command-line front end: ``xmatch {synth,train,eval,analyze,report}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, report
from .core import load_dataset, write_dataset
from .errors import ConfigError, UsageError, XMatchError
from .metrics import parse_far, write_score_file
from .synth import REFERENCE_SUBSET_SIZES, SynthConfig, generate
from .trainer import (TrainConfig, TrainHistory, init_head, load_checkpoint, save_checkpoint,
                      train)
from .valbuilder import build_hard_validation, default_per_fold, split_subjects

log = logging.getLogger("xmatch")

DEFAULT_FARS = (0.0001, 0.001)
GROUP_KEYS = ("subset", "gender", "card_format")


@dataclass
class ExperimentConfig:
    seed: int = None
    out: str = None
    train_path: str = None
    datasets: list = field(default_factory=list)
    checkpoint: str = None
    far_targets: list = field(default_factory=lambda: list(DEFAULT_FARS))
    group_by: list = field(default_factory=lambda: ["subset"])
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        fars = [parse_far(f) for f in self.far_targets]
        if any(f <= 0.0 for f in fars):
            raise ConfigError("FAR targets must lie in (0, 1)")
        self.far_targets = sorted(fars)
        bad = set(self.group_by) - set(GROUP_KEYS)
        if bad:
            raise ConfigError(f"unknown group_by keys {sorted(bad)}")
        return self


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def build_config(args):
    raw = _load_config_file(getattr(args, "config", None))
    train_over = dict(raw.pop("train", {}) or {})
    synth_over = dict(raw.pop("synth", {}) or {})
    known = set(ExperimentConfig.__dataclass_fields__) - {"train", "synth"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = ExperimentConfig(**raw)

    for flag, key in (("seed", "seed"), ("out", "out"), ("train_path", "train_path"),
                      ("checkpoint", "checkpoint"), ("datasets", "datasets"),
                      ("far", "far_targets"), ("group_by", "group_by")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.seed is not None:
        train_over.setdefault("seed", cfg.seed)
        synth_over.setdefault("seed", cfg.seed)
        if getattr(args, "seed", None) is not None:
            train_over["seed"] = synth_over["seed"] = args.seed

    for flag, key in (("max_iterations", "max_iterations"), ("eval_interval", "eval_interval"),
                      ("batch_size", "batch_size"), ("learning_rate", "learning_rate"),
                      ("momentum", "momentum"), ("margin", "margin"), ("d_out", "d_out"),
                      ("anchor_modality", "anchor_modality"), ("val_per_fold", "val_per_fold")):
        value = getattr(args, flag, None)
        if value is not None:
            train_over[key] = value
    for flag, key in (("n_train", "n_train_subjects"), ("n_test", "n_test_per_subset"),
                      ("d_in", "d_in"), ("yellow_extra_noise", "yellow_extra_noise")):
        value = getattr(args, flag, None)
        if value is not None:
            synth_over[key] = value
    if getattr(args, "reference_sizes", False):
        synth_over["subset_sizes"] = dict(REFERENCE_SUBSET_SIZES)
    try:
        cfg.train = TrainConfig.from_dict(train_over)
        cfg.synth = SynthConfig.from_dict(synth_over)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _require_seed(cfg, command):
    if cfg.seed is None:
        raise UsageError(f"{command} is randomized and needs an explicit --seed")


def _out_dir(cfg):
    if cfg.out is None:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _subset_name(path):
    return Path(path).name.split(".")[0]


def _load_subsets(paths):
    if not paths:
        raise UsageError("at least one --dataset is required")
    return {_subset_name(p): load_dataset(p) for p in paths}


def _load_head(path):
    if path is None:
        return None, "baseline"
    head, _ = load_checkpoint(path)
    return head, Path(path).stem


# --------------------------------------------------------------------------
# commands

def cmd_synth(cfg, fmt="csv"):
    _require_seed(cfg, "synth")
    out = _out_dir(cfg)
    train_set, tests, truth = generate(cfg.synth)
    suffix = "csv" if fmt == "csv" else "xmv"
    written = []
    path = out / f"train.{suffix}"
    write_dataset(train_set, path, fmt)
    written.append(path)
    print(f"train: {train_set.n_subjects} subjects")
    for label, ds in tests.items():
        path = out / f"{label.name}.{suffix}"
        write_dataset(ds, path, fmt)
        written.append(path)
        n_yellow = sum(c.value == "yellow" for c in ds.card_format)
        print(f"{label.name}: {ds.n_subjects} subjects ({n_yellow} yellow, "
              f"{ds.n_subjects - n_yellow} blue)")
    truth.save(out / "truth.npz")
    _write_json(out / "synth_config.json", cfg.synth.to_dict())
    return written


def prepare_training(data, tc):
    """Split ``data``, build the hard validation set with the initial head.

    Returns ``(train_set, validation, initial_head)``; all randomness derives
    from ``tc.seed``.
    """
    split_rng, val_rng = (np.random.default_rng(s)
                          for s in np.random.SeedSequence([tc.seed, 1]).spawn(2))
    train_set, val = split_subjects(data, tc.train_fraction, split_rng)
    per_fold = tc.val_per_fold
    if per_fold is None:
        per_fold = default_per_fold(val.n_subjects, tc.val_folds)
    head_rng = np.random.default_rng(np.random.SeedSequence(tc.seed).spawn(2)[0])
    head0 = init_head(data.d_in, tc.d_out, head_rng)
    validation = build_hard_validation(val, head0.embed, tc.val_folds, per_fold, val_rng)
    return train_set, validation, head0


def cmd_train(cfg):
    _require_seed(cfg, "train")
    out = _out_dir(cfg)
    if cfg.train_path is None:
        raise UsageError("--train is required")
    data = load_dataset(cfg.train_path)
    tc = cfg.train
    train_set, validation, head0 = prepare_training(data, tc)
    validation.write(out / "validation.csv")
    log.info("train %d / val %d subjects, %d validation pairs", train_set.n_subjects,
             validation.dataset.n_subjects, validation.n_pairs)
    best, history = train(train_set, validation, tc, head=head0)
    k = history.best_index
    save_checkpoint(out / "checkpoint.json", best, tc, history.iterations[k],
                    history.val_tars[k])
    history.write(out / "history.csv")
    print(f"best iteration {history.iterations[k]}: validation TAR {history.val_tars[k]:.4f} "
          f"(iteration 0: {history.val_tars[0]:.4f})")
    return best, history


def _group_members(ds, key):
    if key == "subset":
        return {"all": None}
    values = ds.gender if key == "gender" else ds.card_format
    groups = {}
    for i, v in enumerate(values):
        groups.setdefault(f"{key}={v.value}", []).append(i)
    return {k: np.array(v) for k, v in sorted(groups.items()) if len(v) >= 2}


def cmd_eval(cfg, label=None, write_scores=False):
    out = _out_dir(cfg)
    subsets = _load_subsets(cfg.datasets)
    head, model = _load_head(cfg.checkpoint)
    model = label or model
    result = {"model": model, "far_targets": cfg.far_targets, "subsets": {}, "groups": {}}
    lines = ["model,subset,group,far_target,threshold,tar,achieved_far,"
             "n_subjects,n_authentic,n_impostor"]
    for name, ds in subsets.items():
        matrix = analysis.subset_score_matrix(ds, head)
        if write_scores:
            write_score_file(out / f"scores_{name}.csv", analysis.score_pairs(ds, matrix))
        for key in (["subset"] + [g for g in cfg.group_by if g != "subset"]):
            for group, members in _group_members(ds, key).items():
                scores = analysis.split_scores(matrix, members)
                res = [analysis.tar_at_far(scores, f) for f in cfg.far_targets]
                dicts = [r.to_dict() for r in res]
                if group == "all":
                    result["subsets"][name] = dicts
                else:
                    result["groups"].setdefault(name, {})[group] = dicts
                n = ds.n_subjects if members is None else len(members)
                for r in res:
                    thr = "inf" if math.isinf(r.threshold) else repr(r.threshold)
                    lines.append(f"{model},{name},{group},{r.far_target!r},{thr},{r.tar!r},"
                                 f"{r.achieved_far!r},{n},{scores.authentic.size},"
                                 f"{scores.impostor.size}")
    with open(out / "eval.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json(out / "eval.json", result)
    for name, dicts in result["subsets"].items():
        cells = "  ".join(f"TAR@{100 * d['far_target']:g}%={100 * d['tar']:.2f}" for d in dicts)
        print(f"{model} {name}: {cells}")
    return result


def cmd_analyze(cfg, mode, n_draws=10, min_group=10):
    out = _out_dir(cfg)
    subsets = _load_subsets(cfg.datasets)
    head, model = _load_head(cfg.checkpoint)
    if mode == "gender":
        rep, score_sets = analysis.gender_analysis(subsets, head, cfg.far_targets)
        rep["model"] = model
        for g, s in score_sets.items():
            for kind in ("authentic", "impostor"):
                counts, edges = analysis.histogram(getattr(s, kind))
                report.write_histogram(out / f"hist_{model}_{g}_{kind}.csv", counts, edges)
        _write_json(out / "analyze_gender.json", rep)
        for g, r in rep["pooled"].items():
            tars = "  ".join(f"TAR@{100 * d['far_target']:g}%={100 * d['tar']:.2f}"
                             for d in r["tar_at_far"])
            print(f"{model} {g}: d'={r['d_prime']:.3f}  {tars}")
        return rep
    if mode == "card_format":
        _require_seed(cfg, "analyze --mode card_format")
        rng = np.random.default_rng(cfg.seed)
        rows = analysis.card_format_analysis(subsets, head, n_draws, rng, min_group)
        verdicts = analysis.card_format_verdicts(rows)
        with open(out / "card_format.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("subset,card_format,draw,n,mean_authentic,mean_impostor\n")
            for r in rows:
                fh.write(f"{r['subset']},{r['card_format']},{r['draw']},{r['n']},"
                         f"{r['mean_authentic']!r},{r['mean_impostor']!r}\n")
        rep = {"model": model, "rows": rows, "verdicts": verdicts}
        _write_json(out / "analyze_card_format.json", rep)
        for name, v in verdicts.items():
            print(f"{model} {name}: yellow authentic mean below blue in "
                  f"{sum(v['yellow_below_blue'])}/{len(v['yellow_below_blue'])} draws")
        return rep
    raise UsageError(f"unknown analyze mode {mode!r}")


def cmd_report(cfg, history_path=None, eval_paths=(), hist_paths=()):
    out = _out_dir(cfg) / "report"
    out.mkdir(exist_ok=True)
    if history_path is None and not eval_paths:
        raise UsageError("report needs --history and/or --eval")
    written = []
    if history_path is not None:
        report.training_curve(TrainHistory.read(history_path), out)
        written.append(out / "training_curve.svg")
    if eval_paths:
        written += report.tar_bars([report.load_eval(p) for p in eval_paths], out)
    if hist_paths:
        written.append(report.score_histograms({Path(p).stem: p for p in hist_paths}, out))
    for p in written:
        print(p)
    return written


# --------------------------------------------------------------------------

def make_parser():
    p = _Parser(prog="xmatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON key-value config file")
        sp.add_argument("--out", help="existing output directory")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="generate synthetic datasets")
    common(sp)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--d-in", type=int)
    sp.add_argument("--yellow-extra-noise", type=float)
    sp.add_argument("--reference-sizes", action="store_true",
                    help="use the five published subset sizes instead of --n-test")
    sp.add_argument("--format", choices=("csv", "binary"), default="csv")

    sp = sub.add_parser("train", help="fine-tune an embedding head")
    common(sp)
    sp.add_argument("--train", dest="train_path")
    sp.add_argument("--max-iterations", type=int)
    sp.add_argument("--eval-interval", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--margin", type=float)
    sp.add_argument("--d-out", type=int)
    sp.add_argument("--anchor-modality", choices=("both", "selfie_only"))
    sp.add_argument("--val-per-fold", type=int)

    sp = sub.add_parser("eval", help="TAR at FAR per subset")
    common(sp)
    sp.add_argument("--dataset", dest="datasets", nargs="+")
    sp.add_argument("--checkpoint")
    sp.add_argument("--far", nargs="+", help='e.g. "0.01%%" or 0.0001')
    sp.add_argument("--group-by", nargs="+", choices=GROUP_KEYS)
    sp.add_argument("--label", help="model name in outputs")
    sp.add_argument("--write-scores", action="store_true")

    sp = sub.add_parser("analyze", help="gender or card-format breakdown")
    common(sp)
    sp.add_argument("--dataset", dest="datasets", nargs="+")
    sp.add_argument("--checkpoint")
    sp.add_argument("--mode", choices=("gender", "card_format"), required=True)
    sp.add_argument("--far", nargs="+")
    sp.add_argument("--n-draws", type=int, default=10)
    sp.add_argument("--min-group", type=int, default=10)

    sp = sub.add_parser("report", help="render SVG figures")
    common(sp)
    sp.add_argument("--history")
    sp.add_argument("--eval", dest="evals", nargs="+", default=[])
    sp.add_argument("--hist", nargs="+", default=[])
    return p


def run(argv=None):
    args = make_parser().parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    cfg = build_config(args)
    if args.command == "synth":
        return cmd_synth(cfg, args.format)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.label, args.write_scores)
    if args.command == "analyze":
        return cmd_analyze(cfg, args.mode, args.n_draws, args.min_group)
    return cmd_report(cfg, args.history, args.evals, args.hist)


def main(argv=None):
    verbose = argv is not None and ("-v" in argv or "--verbose" in argv)
    verbose = verbose or (argv is None and ("-v" in sys.argv or "--verbose" in sys.argv))
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(argv)
    except XMatchError as exc:
        print(f"xmatch: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"xmatch: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"xmatch: internal error: {exc!r}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
