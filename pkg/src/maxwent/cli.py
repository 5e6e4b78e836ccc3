"""Command-line interface: ``python -m maxwent <command>``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, replace

import numpy as np

from . import experiment as E
from .evaluation import auroc, predict_samples, scores_csv, uncertainty
from .network import WeightLayout
from .numerics import ContractError, NumericalError
from .oracle import run_verification
from .stochastic import checkpoint_dict, load_checkpoint_dict
from .trainer import pretrain

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
CLIP_SWEEP = (math.inf, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.0)


class ConfigError(ContractError):
    pass


# -- atomic output -----------------------------------------------------------------

def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n"


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def log_csv(histories) -> str:
    rows = []
    for member, hist in enumerate(histories):
        for h in hist:
            rows.append([member, h["iteration"], float(h["train_loss"]), float(h["val_nll"]),
                         float(h["entropy_proxy"]), int(h["accepted"])])
    return rows_csv(["member", "iteration", "train_loss", "val_nll", "entropy_proxy", "accepted"], rows)


# -- argument parsing --------------------------------------------------------------------

def _hidden(text):
    try:
        widths = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}") from None
    if any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("widths must be positive")
    return widths


def _clip(text):
    return math.inf if text.lower() in ("inf", "+inf", "none") else float(text)


def _target(text):
    try:
        return int(text)
    except ValueError:
        return text


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--dataset", default="two-moons", choices=E.SYNTHETIC, help="synthetic dataset (ignored with --data)")
    g.add_argument("--data", help="tabular CSV file with a header row")
    g.add_argument("--target", type=_target, default=-1, help="target column name or index (default: last)")
    g.add_argument("--split", default="extrapolation", choices=("extrapolation", "interpolation", "random"))
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--hidden", type=_hidden, default=(100, 100, 100), help="hidden widths, e.g. 100,100,100")


def _add_train(p):
    g = p.add_argument_group("optimization")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="entropy trade-off (default 10; 0.3 on two-moons)")
    g.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    g.add_argument("--maxwent-lr", type=float, default=None, help="learning rate of the scale fit (default --lr; 0.03 on two-moons)")
    g.add_argument("--batch-size", type=int, default=None, help="default 32 synthetic, 128 tabular")
    g.add_argument("--pretrain-iters", type=int, default=10_000)
    g.add_argument("--iters", type=int, default=None, help="scale-fit iterations (default 20k synthetic, 30k two-moons, 50k tabular)")
    g.add_argument("--mc-samples", type=int, default=1)
    g.add_argument("--u-init", type=float, default=None, help="initial raw scale (default -5 scaling, -10 svd)")
    g.add_argument("--val-gate", action=argparse.BooleanOptionalAction, default=None,
                   help="accept scale-fit checkpoints only below the validation threshold (default on; off on two-moons)")
    g.add_argument("--with-replacement", action="store_true", help="sample mini-batches with replacement")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxwent", description="Maximum weight entropy stochastic networks.")
    parser.add_argument("--config", help="JSON file of flag values (keys use the flag names with underscores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="fit deterministic networks")
    _add_data(p)
    _add_train(p)
    p.add_argument("--members", type=int, default=1, help="number of networks (a deep ensemble when > 1)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training-log CSV path")

    p = sub.add_parser("train", help="fit a stochastic model")
    _add_data(p)
    _add_train(p)
    p.add_argument("--method", default="maxwent-svd", choices=E.METHODS)
    p.add_argument("--members", type=int, default=None, help="number of members (default 5 for deep-ensemble, else 1)")
    p.add_argument("--bnn-kl-weight", type=float, default=1.0)
    p.add_argument("--in", dest="inp", help="pretrained checkpoint (trained from scratch when absent)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training-log CSV path")

    p = sub.add_parser("eval", help="score ID and OOD inputs")
    p.add_argument("--in", dest="inp", required=True, help="checkpoint path")
    p.add_argument("--P", type=int, default=50, help="weight draws per member")
    p.add_argument("--clip", type=_clip, default=math.inf, help="clamp level applied at test time")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--scores", help="per-sample scores CSV path")

    p = sub.add_parser("clip-sweep", help="uncertainty against the clamp level")
    p.add_argument("--in", dest="inp", required=True, help="checkpoint path")
    p.add_argument("--P", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", default=",".join(str(c) for c in CLIP_SWEEP), help="comma-separated levels")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("benchmark", help="methods x splits on a tabular CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--target", type=_target, default=-1)
    p.add_argument("--methods", default=",".join(E.METHODS))
    p.add_argument("--splits", default="extrapolation,interpolation")
    p.add_argument("--members", type=int, default=5, help="deep-ensemble size")
    p.add_argument("--P", type=int, default=50)
    p.add_argument("--hidden", type=_hidden, default=(100, 100, 100))
    _add_train_subset(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("verify", help="run the oracle cross-checks")
    p.add_argument("--inject-lambda-mismatch", type=float, default=0.0, help="debug: scale the solver trade-off by 1 + X (negative control)")
    return parser


def _add_train_subset(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="entropy trade-off (default 10)")
    p.add_argument("--pretrain-iters", type=int, default=10_000)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--maxwent-lr", type=float, default=None)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = parser.parse_args(argv)
    if known.config:
        if not os.path.isfile(known.config):
            raise ConfigError(f"config file not found: {known.config}")
        with open(known.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        allowed = set(vars(args))
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        # explicit flags win over the config file
        explicit = {a.lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
        for key, value in doc.items():
            if key not in explicit and key != "command":
                setattr(args, key, tuple(value) if key == "hidden" else value)
    return args


# -- commands ----------------------------------------------------------------------

def _task(args):
    if args.data is not None and not os.path.isfile(args.data):
        raise ConfigError(f"data file not found: {args.data}")
    return E.make_task(args.dataset, csv=args.data, target=args.target, split=args.split, seed=args.seed,
                       hidden=args.hidden, val_fraction=args.val_fraction, test_fraction=args.test_fraction)


def _task_from_manifest(doc):
    m = doc["data"]
    hidden = tuple(doc["spec"]["hidden"])
    if m["split_mode"] == "synthetic":
        return E.make_task(m["source"], seed=m["seed"], hidden=hidden)
    return E.make_task(csv=m["source"], target=m["target_column"], split=m["split_mode"], seed=m["seed"],
                       hidden=hidden, val_fraction=m["val_fraction"], test_fraction=m["test_fraction"])


def _config(args, task):
    over = {"seed": args.seed, "pretrain_iters": args.pretrain_iters}
    for key in ("lam", "lr", "batch_size", "iters", "mc_samples", "u_init", "maxwent_lr"):
        value = getattr(args, key, None)
        if value is not None:
            name = {"lr": "learning_rate", "iters": "maxwent_iters", "maxwent_lr": "maxwent_learning_rate"}.get(key, key)
            over[name] = value
    if getattr(args, "val_gate", None) is not None:
        over["val_gate"] = args.val_gate
    if getattr(args, "with_replacement", False):
        over["with_replacement"] = True
    return E.default_config(task, **over)


def _check_out(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ConfigError(f"output directory does not exist: {directory}")


def _save(args, task, fitted, cfg):
    extra = {
        "data": task.manifest,
        "config": {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in asdict(cfg).items()},
        "tau": fitted.tau,
        "accepted_iteration": fitted.accepted_iteration,
    }
    deterministic = fitted.method in ("vanilla", "deep-ensemble")
    doc = checkpoint_dict(task.spec, fitted.members, method=fitted.method, extra=extra, include_u=not deterministic)
    atomic_write(args.out, dumps(doc))
    if args.log:
        atomic_write(args.log, log_csv(fitted.histories))


def cmd_pretrain(args):
    for path in filter(None, (args.out, args.log)):
        _check_out(path)
    task = _task(args)
    cfg = _config(args, task)
    method = "vanilla" if args.members == 1 else "deep-ensemble"
    histories = []
    fitted = E.FittedModel(method, [])
    layout = WeightLayout.from_spec(task.spec)
    for j in range(args.members):
        hist = []
        w = pretrain(task.spec, task.train, task.val, replace(cfg, seed=cfg.seed + j), history=hist)
        fitted.members.append(E.deterministic(w, layout))
        histories.append(hist)
    fitted.histories = histories
    _save(args, task, fitted, cfg)
    return EXIT_OK


def _read_checkpoint(path):
    if not os.path.isfile(path):
        raise ConfigError(f"checkpoint not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"checkpoint is not valid JSON: {exc}") from None
    spec, layout, members = load_checkpoint_dict(doc)
    return doc, spec, layout, members


def cmd_train(args):
    for path in filter(None, (args.out, args.log)):
        _check_out(path)
    pretrained = None
    if args.inp:
        doc, spec, _, members = _read_checkpoint(args.inp)
        task = _task_from_manifest(doc)
        if task.spec != spec:
            raise ConfigError("checkpoint network does not match its dataset")
        pretrained = [m.mean for m in members]
        if args.members is not None and args.members != len(pretrained):
            raise ConfigError(f"--members {args.members} but the checkpoint holds {len(pretrained)} networks")
    else:
        task = _task(args)
    cfg = _config(args, task)
    fitted = E.fit_method(task, args.method, cfg, m=args.members, pretrained=pretrained,
                          bnn_kl_weight=args.bnn_kl_weight)
    _save(args, task, fitted, cfg)
    return EXIT_OK


def _fitted_from_checkpoint(path):
    doc, spec, _, members = _read_checkpoint(path)
    task = _task_from_manifest(doc)
    if task.spec != spec:
        raise ConfigError("checkpoint network does not match its dataset")
    return task, E.FittedModel(doc["method"], members), doc


def cmd_eval(args):
    for path in filter(None, (args.report, args.scores)):
        _check_out(path)
    task, fitted, _ = _fitted_from_checkpoint(args.inp)
    if not math.isinf(args.clip):
        fitted = fitted.with_clip(args.clip)
    report, s_id, s_ood = E.evaluate_model(task, fitted, P=args.P, seed=args.seed)
    atomic_write(args.report, dumps(report.to_dict()))
    if args.scores:
        atomic_write(args.scores, scores_csv(s_id, s_ood))
    return EXIT_OK


def cmd_clip_sweep(args):
    _check_out(args.out)
    try:
        clips = [_clip(c) for c in args.clips.split(",")]
    except ValueError:
        raise ConfigError(f"invalid clip list {args.clips!r}") from None
    task, fitted, _ = _fitted_from_checkpoint(args.inp)
    rows = []
    for c in clips:
        model = fitted.with_clip(c).predictor()
        u_id = uncertainty(predict_samples(model, task.spec, task.test.X, args.P, args.seed))
        u_ood = uncertainty(predict_samples(model, task.spec, task.ood.X, args.P, args.seed))
        rows.append([str(c), float(np.mean(u_id)), float(np.mean(u_ood)), auroc(u_id, u_ood)])
    atomic_write(args.out, rows_csv(["clip", "mean_uncertainty_id", "mean_uncertainty_ood", "auroc"], rows))
    return EXIT_OK


def cmd_benchmark(args):
    if not os.path.isfile(args.data):
        raise ConfigError(f"data file not found: {args.data}")
    if not os.path.isdir(args.out_dir):
        raise ConfigError(f"output directory does not exist: {args.out_dir}")
    methods = [m for m in args.methods.split(",") if m]
    splits = [s for s in args.splits.split(",") if s]
    for m in methods:
        if m not in E.METHODS:
            raise ConfigError(f"unknown method {m!r}")
    for s in splits:
        if s not in ("extrapolation", "interpolation", "random"):
            raise ConfigError(f"unknown split {s!r}")
    cfg_kw = {"pretrain_iters": args.pretrain_iters}
    if args.lam is not None:
        cfg_kw["lam"] = args.lam
    if args.iters is not None:
        cfg_kw["maxwent_iters"] = args.iters
    if args.maxwent_lr is not None:
        cfg_kw["maxwent_learning_rate"] = args.maxwent_lr
    reports = E.run_benchmark(args.data, args.target, methods=methods, splits=splits, m=args.members, P=args.P,
                              seed=args.seed, hidden=args.hidden, **cfg_kw)
    rows = []
    for r in reports:
        atomic_write(os.path.join(args.out_dir, f"{r['split']}-{r['method']}.json"), dumps(r))
        rows.append([r["split"], r["method"], r["auroc"], r["fpr95"], r["test_nll"], r.get("error", "")])
    atomic_write(os.path.join(args.out_dir, "summary.csv"),
                 rows_csv(["split", "method", "auroc", "fpr95", "test_nll", "error"], rows))
    if all("error" in r for r in reports):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_verify(args):
    checks = run_verification(lambda_mismatch=args.inject_lambda_mismatch)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: error {c.error:.3e} (tolerance {c.tolerance:.0e})")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "clip-sweep": cmd_clip_sweep,
    "benchmark": cmd_benchmark,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2, --help with 0
        return int(exc.code or 0)
    except (ContractError, json.JSONDecodeError) as exc:
        print(f"maxwent: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        where = f" at iteration {exc.iteration}" if exc.iteration is not None else ""
        print(f"maxwent: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ContractError, KeyError) as exc:
        print(f"maxwent: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
