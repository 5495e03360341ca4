"""``hsaw`` command line: synth, train-base, build, detect, evaluate, compare, gradcheck.

Exit status is 0 on success, 1 on a usage error and 2 when a command fails.
Every subcommand accepts ``--seed`` and ``--config FILE``; the file holds
``key = value`` lines naming fields of the scenario, build or GAN settings.
Explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from hsaw import store
from hsaw.autodiff.gradcheck import TOLERANCE, run_gradcheck
from hsaw.detector import AbnormalitySignal, abnormality_signal
from hsaw.errors import ConsistencyError, HsawError
from hsaw.evaluation import false_positives, metrics_dict, metrics_json, roc, roc_csv, roc_svg
from hsaw.experiment import evaluate_models, train_hierarchy, train_single
from hsaw.gan import GanConfig
from hsaw.hierarchy import BuildConfig, build_hierarchy
from hsaw.scene import ActivityLabel, ScenarioConfig, subset_indices, synthesize_scenario

log = logging.getLogger("hsaw")

SIGNAL_COLUMNS = ("frame_index", "raw_y", "normalized_y", "accepted_level", "verdict")
SUBSETS = {
    "straight": (ActivityLabel.Straight,),
    "curve": (ActivityLabel.Curve,),
    "normal": (ActivityLabel.Straight, ActivityLabel.Curve),
    "all": tuple(ActivityLabel),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# config files --------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(text: str, current):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(p) for p in text.replace("x", ",").split(","))
    return text


def _apply(obj, values: dict, used: set, prefix: str = ""):
    kw = {}
    for f in fields(obj):
        for key in (prefix + f.name, f.name):
            if key in values and not hasattr(getattr(obj, f.name), "__dataclass_fields__"):
                kw[f.name] = _coerce(values[key], getattr(obj, f.name))
                used.add(key)
                break
    return replace(obj, **kw) if kw else obj


def scenario_config(values: dict, used: set, **overrides) -> ScenarioConfig:
    cfg = _apply(ScenarioConfig(), values, used)
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def build_config(values: dict, used: set, **overrides) -> BuildConfig:
    gan = _apply(GanConfig(), values, used, "gan.")
    cfg = _apply(BuildConfig(gan=gan), values, used)
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _known_keys() -> set:
    keys = {f.name for f in fields(ScenarioConfig)} | {f.name for f in fields(BuildConfig)}
    gan = {f.name for f in fields(GanConfig)}
    return keys | gan | {"gan." + k for k in gan}


def _check_unused(values: dict, used: set) -> None:
    # one file may serve every subcommand; only keys nobody understands are errors
    extra = sorted(set(values) - used - _known_keys())
    if extra:
        raise UsageError(f"unknown configuration keys: {', '.join(extra)}")


def _load_config(args) -> dict:
    values = read_config(args.config) if args.config else {}
    if args.seed is None:
        args.seed = int(values.get("seed", 0))
    return values


# signal CSV ----------------------------------------------------------------------

def signal_csv(signal: AbnormalitySignal) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIGNAL_COLUMNS)
    for i, raw, norm, lvl, bad in zip(signal.frame_indices, signal.raw, signal.normalized,
                                      signal.accepted_levels, signal.is_abnormal):
        w.writerow([int(i), repr(float(raw)), repr(float(norm)), int(lvl), "abnormal" if bad else "normal"])
    return buf.getvalue()


def read_signal(path) -> tuple[np.ndarray, np.ndarray]:
    """Frame indices and normalized values from a signal CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(c not in rows[0] for c in SIGNAL_COLUMNS):
        raise ConsistencyError(f"{path}: not a signal CSV (columns {', '.join(SIGNAL_COLUMNS)})")
    idx = np.array([int(r["frame_index"]) for r in rows])
    return idx, np.array([float(r["normalized_y"]) for r in rows])


# commands ------------------------------------------------------------------------

def cmd_synth(args, values, used) -> int:
    cfg = scenario_config(values, used, scenario=args.scenario, laps=args.laps,
                          frames_per_segment=args.frames_per_segment, seed=args.seed)
    _check_unused(values, used)
    data = synthesize_scenario(cfg)
    store.save_dataset(data, args.out)
    log.info("wrote %d couples to %s", len(data), args.out)
    return 0


def _subset(data, name: str) -> np.ndarray:
    return subset_indices(data, SUBSETS[name])


def cmd_train_base(args, values, used) -> int:
    cfg = build_config(values, used, seed=args.seed, max_levels=1)
    _check_unused(values, used)
    data = store.load_dataset(args.data)
    fp = store.dataset_fingerprint(args.data)
    h = build_hierarchy(data.frames, data.flows, _subset(data, args.subset), cfg, fp)
    store.save_model(h, args.out)
    return 0


def _theta_overrides(text: Optional[str]) -> dict:
    if text is None or text == "auto":
        return {"theta_policy": "auto"} if text else {}
    try:
        return {"theta_policy": "fixed", "theta": float(text)}
    except ValueError:
        raise UsageError(f"--theta expects 'auto' or a number, got {text!r}") from None


def cmd_build(args, values, used) -> int:
    cfg = build_config(values, used, seed=args.seed, max_levels=args.max_levels, k=args.k,
                       **_theta_overrides(args.theta))
    _check_unused(values, used)
    data = store.load_dataset(args.data)
    fp = store.dataset_fingerprint(args.data)
    h = build_hierarchy(data.frames, data.flows, _subset(data, args.subset), cfg, fp)
    store.save_model(h, args.out)
    log.info("built %d level(s), tau=%.6g", len(h), h.tau)
    return 0


def cmd_detect(args, values, used) -> int:
    _check_unused(values, used)
    h = store.load_model(args.model)
    data = store.load_dataset(args.data)
    sig = abnormality_signal(h, data.frames, data.flows, args.reduce)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(signal_csv(sig))
    return 0


def cmd_evaluate(args, values, used) -> int:
    _check_unused(values, used)
    data = store.load_dataset(args.data)
    idx, scores = read_signal(args.signal)
    if idx.min() < 0 or idx.max() >= len(data):
        raise ConsistencyError(f"{args.signal}: frame indices exceed the {len(data)}-frame dataset")
    labels = data.is_anomalous[idx]
    curve = roc(scores, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "roc.csv").write_text(roc_csv(curve))
    m = metrics_dict(curve)
    m["curve_false_positives"] = false_positives(scores, labels, curve.eer_threshold,
                                                 data.labels[idx] == ActivityLabel.Curve)
    (out / "metrics.json").write_text(metrics_json(m))
    (out / "roc.svg").write_text(roc_svg({Path(args.signal).stem: curve}))
    print(f"AUC {curve.auc:.4f}  EER {curve.eer:.4f}")
    return 0


def cmd_compare(args, values, used) -> int:
    cfg = build_config(values, used, seed=args.seed)
    _check_unused(values, used)
    train = store.load_dataset(args.train)
    test = store.load_dataset(args.test)
    fp = store.dataset_fingerprint(args.train)
    hierarchy = train_hierarchy(train, cfg, fp)
    single = train_single(train, cfg, fp)
    report = evaluate_models(hierarchy, single, test, args.reduce)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store.save_model(hierarchy, out / "hierarchy")
    store.save_model(single, out / "single")
    (out / "signal_hierarchy.csv").write_text(signal_csv(report.signal_hierarchy))
    (out / "signal_single.csv").write_text(signal_csv(report.signal_single))
    (out / "roc_hierarchy.csv").write_text(roc_csv(report.roc_hierarchy))
    (out / "roc_single.csv").write_text(roc_csv(report.roc_single))
    (out / "metrics.json").write_text(metrics_json(report.summary()))
    (out / "roc.svg").write_text(roc_svg({"hierarchy": report.roc_hierarchy, "single GAN": report.roc_single}))
    for name, r in (("hierarchy", report.roc_hierarchy), ("single", report.roc_single)):
        print(f"{name:<10} AUC {r.auc:.4f}  EER {r.eer:.4f}")
    return 0


def cmd_gradcheck(args, values, used) -> int:
    _check_unused(values, used)
    results = run_gradcheck(n_seeds=args.seeds, base_seed=args.seed)
    worst = max(results, key=lambda r: r.max_rel_error)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.op} seed={r.seed} rel_err={r.max_rel_error:.3e}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed; "
          f"worst {worst.op} {worst.max_rel_error:.3e} (tolerance {TOLERANCE:g})")
    return 0 if not failed else 2


# parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--config", metavar="FILE", help="key = value overrides")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hsaw", description="Hierarchical cross-modal GAN anomaly detection on synthetic patrols.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic scenario")
    s.add_argument("--scenario", type=int, choices=(1, 2), required=True)
    s.add_argument("--laps", type=int)
    s.add_argument("--frames-per-segment", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-base", parents=[common], help="train one cross-modal pair")
    s.add_argument("--data", required=True)
    s.add_argument("--subset", choices=sorted(SUBSETS), default="straight")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_base)

    s = sub.add_parser("build", parents=[common], help="grow the hierarchy")
    s.add_argument("--data", required=True)
    s.add_argument("--subset", choices=sorted(SUBSETS), default="straight")
    s.add_argument("--theta", help="'auto' or a fixed threshold")
    s.add_argument("--k", type=float, help="auto threshold: mean + k * std")
    s.add_argument("--max-levels", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("detect", parents=[common], help="abnormality signal for a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--reduce", choices=("mean", "max"), default="mean")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", parents=[common], help="ROC, AUC and EER of a signal")
    s.add_argument("--signal", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="single GAN vs hierarchy")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--reduce", choices=("mean", "max"), default="mean")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        values = _load_config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hsaw: cannot read config: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, values, set())
    except UsageError as exc:
        print(f"hsaw {args.command}: {exc}", file=sys.stderr)
        return 1
    except (HsawError, OSError, ValueError) as exc:
        print(f"hsaw {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
