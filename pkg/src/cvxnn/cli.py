"""Command-line interface: ``cvxnn <command> [options]``.

Every command writes its outputs under ``--out`` (default ``.``):
``manifest.json`` with the resolved settings, plus command-specific CSV,
JSON-lines and plain-text files. Passing that manifest back through
``--config`` replays the run. Floats are written with 17 significant
digits and no timing information is recorded, so identical settings give
byte-identical files.

Exit codes: 0 ok, 2 usage, 3 data error, 4 solver non-convergence,
5 parity or validation failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import datasets
from .arrangements import (ArrangementError, PatternSet, count_bound,
                           enumerate_exact, sample_convolutional,
                           sample_gaussian, sample_size_threshold)
from .baseline import TrainConfig, TrainingDiverged, multi_restart, seeded_configs, train_linear_cnn
from .core import ActivationSpec, svd_decompose
from .datasets import DataError
from .extensions import (PatchSet, circular_cnn_train, linear_cnn_train,
                         lowrank_train, subspace_distance)
from .mapping import (convex_to_network, load_network, network_forward,
                      nonconvex_objective, save_network, stationarity_check)
from .program import (build_interpolation_program, build_program,
                      constraint_violation, interpolation_residual, objective)
from .solvers import (SolverConfig, conjugate_symmetry_error, fourier_features,
                      solve_admm, solve_penalized_continuation)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_PARITY = 0, 2, 3, 4, 5


class CommandFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Deterministic serialization
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """17-significant-digit text for a float; ``nan``/``inf`` spelled out."""
    x = float(x) + 0.0  # folds -0.0 into 0.0
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def to_json(obj) -> str:
    """JSON with sorted keys and floats at 17 significant digits (non-finite as null)."""
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {to_json(v)}" for k, v in sorted(obj.items()))
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def config_to_manifest(text: str) -> dict:
    """Parse sectioned ``key = value`` text into ``{section: {key: value}}``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    return {s: dict(cp[s]) for s in cp.sections()}


def manifest_to_config(manifest: dict) -> str:
    """Inverse of :func:`config_to_manifest` for string-valued sections."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for s in sorted(manifest):
        cp[s] = {k: str(v) for k, v in sorted(manifest[s].items())}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def manifest_sections(manifest: dict) -> dict:
    """Config sections that replay a run recorded in ``manifest.json``.

    The recorded settings become the ``[<command>]`` section; unset options
    are left out, lists are space-separated and flags spelled true/false.
    """
    section = {}
    for k, v in sorted(manifest.get("settings", {}).items()):
        if v is None or k == "command":
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, list):
            v = " ".join(str(x) for x in v)
        section[k] = str(v)
    return {manifest["command"]: section}


def _config_defaults(path: Optional[str], command: str) -> dict:
    """Flatten ``[global]`` and ``[<command>]`` sections into argument defaults.

    ``path`` is a sectioned config file or a ``manifest.json`` written by an
    earlier run of the same command.
    """
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CommandFailure(EXIT_DATA, f"{p}: config file not found")
    text = p.read_text()
    try:
        if text.lstrip().startswith("{"):
            manifest = json.loads(text)
            if manifest.get("command") != command:
                raise CommandFailure(EXIT_USAGE, f"{p}: manifest records command "
                                     f"{manifest.get('command')!r}, not {command!r}")
            sections = manifest_sections(manifest)
        else:
            sections = config_to_manifest(text)
    except (configparser.Error, json.JSONDecodeError, KeyError) as exc:
        raise CommandFailure(EXIT_DATA, f"{p}: {exc}") from None
    out = {}
    for name in ("global", command):
        for k, v in sections.get(name, {}).items():
            out[k.replace("-", "_")] = v
    return out


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _activation(kappa: float) -> ActivationSpec:
    return ActivationSpec(float(kappa))


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CommandFailure(EXIT_USAGE, f"generator parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            out[k] = float(v)
    return out


def _load_xy(args, need_labels: bool = True):
    """Raw ``(X, y)`` from ``--data``/``--labels`` or ``--generator``."""
    try:
        if getattr(args, "generator", None):
            if args.generator not in datasets.GENERATORS:
                raise CommandFailure(EXIT_USAGE, f"unknown generator {args.generator!r}")
            X, y = datasets.GENERATORS[args.generator](seed=args.seed, **_parse_params(args.param))
            return np.asarray(X, dtype=float), np.asarray(y, dtype=float)
        if not getattr(args, "data", None):
            raise CommandFailure(EXIT_USAGE, "one of --data or --generator is required")
        if getattr(args, "labels", None):
            X = datasets.read_matrix(args.data)
            Y = datasets.read_matrix(args.labels)
            if Y.shape[0] != X.shape[0]:
                raise DataError(f"{args.labels}: {Y.shape[0]} label rows for {X.shape[0]} data rows")
            return X, Y[:, 0] if Y.shape[1] == 1 else Y
        if not need_labels:
            return datasets.read_matrix(args.data), None
        X, Y, _ = datasets.read_csv(args.data)
        return X, Y[:, 0] if Y.shape[1] == 1 else Y
    except (DataError, ValueError) as exc:
        if isinstance(exc, CommandFailure):
            raise
        raise CommandFailure(EXIT_DATA, str(exc)) from None


def _split(X, y, fraction: float):
    if not fraction:
        return X, y, None, None
    n_test = max(1, int(round(fraction * X.shape[0])))
    return X[:-n_test], y[:-n_test], X[-n_test:], y[-n_test:]


def _patterns(args, X, bias: bool) -> PatternSet:
    Xa = np.hstack([X, np.ones((X.shape[0], 1))]) if bias else X
    if getattr(args, "patterns_file", None):
        p = Path(args.patterns_file)
        if not p.is_file():
            raise CommandFailure(EXIT_DATA, f"{p}: pattern file not found")
        return PatternSet.from_text(p.read_text())
    if args.patterns == "sample":
        return sample_gaussian(Xa, args.count, args.seed, shards=args.threads, threads=args.threads)
    try:
        return enumerate_exact(Xa, r_max=args.r_max)
    except ArrangementError as exc:
        raise CommandFailure(EXIT_DATA, f"{exc}; use --patterns sample") from None


def _solver_cfg(args) -> SolverConfig:
    return SolverConfig(max_iters=args.max_iters, seed=args.seed)


def _report_dict(rep) -> dict:
    return {"status": rep.status, "iterations": rep.iterations,
            "objective": rep.objective, "final_violation": rep.final_violation}


def _write_manifest(out: Path, args, extra: Optional[dict] = None) -> None:
    settings = {k: v for k, v in sorted(vars(args).items())
                if k not in ("func", "out", "config") and not callable(v)}
    manifest = {"command": args.command, "seed": args.seed, "settings": settings}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(to_json(manifest) + "\n")


def _echo(line: str) -> None:
    print(line)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_enumerate(args, out: Path) -> int:
    X, _ = _load_xy(args, need_labels=False)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))]) if args.bias else X
    try:
        pats = enumerate_exact(Xa, r_max=args.r_max)
    except ArrangementError as exc:
        raise CommandFailure(EXIT_DATA, str(exc)) from None
    r = svd_decompose(Xa)[3]
    bound = count_bound(Xa.shape[0], max(r, 1))
    (out / "patterns.txt").write_text(pats.to_text())
    _write_manifest(out, args, {"P": pats.P, "bound": bound, "rank": r})
    _echo(f"P={pats.P}, bound={bound}")
    return EXIT_OK


def cmd_sample(args, out: Path) -> int:
    if args.method == "conv":
        H, W = _shape(args.image)
        if args.data:
            X, _ = _load_xy(args, need_labels=False)
        else:
            X = np.random.default_rng(args.seed).standard_normal((args.n_images, H * W))
        pats = sample_convolutional(X, (H, W), _shape(args.filter), args.count, args.seed)
    else:
        X, _ = _load_xy(args, need_labels=False)
        if args.bias:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        pats = sample_gaussian(X, args.count, args.seed, shards=args.threads, threads=args.threads)
    r = svd_decompose(X)[3]
    bound = count_bound(X.shape[0], max(min(r, X.shape[0]), 1))
    extra = {"P": pats.P, "bound": bound, "source": pats.source}
    line = f"P={pats.P}, bound={bound}"
    if args.exact:
        try:
            full = enumerate_exact(X, r_max=args.r_max)
        except ArrangementError as exc:
            raise CommandFailure(EXIT_DATA, str(exc)) from None
        extra["coverage"] = pats.P / full.P
        line += f", coverage={fmt(pats.P / full.P)}"
    (out / "patterns.txt").write_text(pats.to_text())
    _write_manifest(out, args, extra)
    _echo(line)
    return EXIT_OK


def _shape(text: str):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise CommandFailure(EXIT_USAGE, f"shape {text!r} must look like 8x8") from None


def cmd_bound(args, out: Path) -> int:
    res = {}
    if args.data or args.generator:
        X, _ = _load_xy(args, need_labels=False)
        res["n"], res["rank"] = X.shape[0], svd_decompose(X)[3]
    else:
        if args.n is None or args.r is None:
            raise CommandFailure(EXIT_USAGE, "bound needs --n and --r, or a dataset")
        res["n"], res["rank"] = args.n, args.r
    try:
        res["bound"] = count_bound(res["n"], res["rank"])
        if args.theta is not None:
            res["threshold"] = sample_size_threshold(res["bound"] if args.P is None else args.P,
                                                     args.theta, args.epsilon)
    except ValueError as exc:
        raise CommandFailure(EXIT_USAGE, str(exc)) from None
    _write_manifest(out, args, res)
    _echo(", ".join(f"{k}={v}" for k, v in res.items()))
    return EXIT_OK


def cmd_train_convex(args, out: Path) -> int:
    X, y = _load_xy(args)
    act = _activation(args.kappa)
    cfg = _solver_cfg(args)
    extra = {}
    if args.rank:
        if args.bias:
            raise CommandFailure(EXIT_USAGE, "--rank does not combine with --bias")
        try:
            res = lowrank_train(X, y, args.rank, args.beta, cfg, act)
        except ValueError as exc:
            raise CommandFailure(EXIT_DATA, str(exc)) from None
        w, rep, net = res.weights, res.report, res.network
        conv_obj = res.objective
        extra["plan"] = res.plan.to_dict()
        extra["lowrank_convex_objective"] = res.convex_objective
    else:
        pats = _patterns(args, X, args.bias)
        if args.interpolate:
            prog = build_interpolation_program(X, y, pats, act, bias=args.bias)
        else:
            prog = build_program(X, y, pats, args.beta, act, reg_p=args.p, bias=args.bias)
        if args.solver == "penalized":
            w, rep = solve_penalized_continuation(prog, cfg)
        else:
            w, rep = solve_admm(prog, cfg)
        conv_obj = objective(prog, w)
        net = convex_to_network(w, act)
        extra["program"] = prog.summary()
        extra["violation"] = constraint_violation(prog, w)[1]
        if args.interpolate:
            extra["residual"] = interpolation_residual(prog, w)
        (out / "patterns.txt").write_text(pats.to_text())
    if args.interpolate:
        # minimum-norm fit: compare against the weight-decay norm of the network
        nc = 0.5 * float(np.sum(net.hidden() ** 2) + np.sum(net.w2 ** 2))
    else:
        nc = nonconvex_objective(net, X, y, args.beta) if args.p == 2 else float("nan")
    gap = abs(nc - conv_obj) / (1.0 + abs(conv_obj)) if args.p == 2 else 0.0
    parity = {"convex_objective": conv_obj, "nonconvex_objective": nc, "relative_gap": gap,
              "tol": args.tol, "passed": bool(args.rank or gap <= args.tol)}
    (out / "weights.txt").write_text(
        "# blocks pattern sign values...\n" + "".join(
            f"{int(i)} {int(s)} " + " ".join(fmt(v) for v in b) + "\n"
            for b, i, s in zip(w.blocks, w.pattern_index, w.sign)))
    save_network(net, out / "network.txt")
    report = {"solver": _report_dict(rep), "parity": parity, "neurons": net.m}
    report.update(extra)
    (out / "report.json").write_text(to_json(report) + "\n")
    _write_manifest(out, args, {"ratio": extra["plan"]["ratio"]} if args.rank else None)
    _echo(f"objective={fmt(conv_obj)}")
    _echo(f"nonconvex={fmt(nc)} gap={fmt(gap)}")
    if args.interpolate:
        _echo(f"residual={fmt(extra['residual'])}")
    if args.rank:
        _echo(f"ratio={fmt(extra['plan']['ratio'])}")
    if not rep.converged:
        raise CommandFailure(EXIT_SOLVER, f"solver stopped with status {rep.status}")
    if not parity["passed"]:
        raise CommandFailure(EXIT_PARITY, f"parity gap {fmt(gap)} exceeds {fmt(args.tol)}")
    return EXIT_OK


def _baseline_cfgs(args, lr=None):
    base = TrainConfig(m=args.m, lr=args.lr if lr is None else lr, batch_size=args.batch_size,
                       epochs=args.epochs, init_scale=args.init_scale, seed=args.seed,
                       optimizer=args.optimizer)
    return seeded_configs(base, range(args.seed, args.seed + args.restarts))


def _train_runs(args, X, y, lr=None):
    try:
        return multi_restart(X, y, args.beta, _baseline_cfgs(args, lr), _activation(args.kappa),
                             bias=args.bias)
    except TrainingDiverged as exc:
        raise CommandFailure(EXIT_SOLVER, str(exc)) from None
    except ValueError as exc:
        raise CommandFailure(EXIT_USAGE, str(exc)) from None


def cmd_train_baseline(args, out: Path) -> int:
    X, y = _load_xy(args)
    summ = _train_runs(args, X, y)
    lines = []
    for row in summ.rows:
        res = row["result"]
        lines.append(to_json({"seed": row["seed"], "lr": row["lr"], "m": row["m"],
                              "trajectory": res.trajectory[::args.log_every].tolist()
                              + [res.trajectory[-1]]}))
        save_network(res.params, out / f"network_seed{row['seed']}.txt")
    (out / "trajectories.jsonl").write_text("\n".join(lines) + "\n")
    write_csv(out / "summary.csv", ["seed", "m", "lr", "objective"],
              [[r["seed"], r["m"], float(r["lr"]), float(r["objective"])] for r in summ.rows])
    _write_manifest(out, args, {"best": float(summ.best["objective"])})
    _echo(f"best={fmt(summ.best['objective'])}")
    return EXIT_OK


def cmd_compare(args, out: Path) -> int:
    X, y = _load_xy(args)
    Xtr, ytr, Xte, yte = _split(X, y, args.test_fraction)
    act = _activation(args.kappa)
    pats = _patterns(args, Xtr, args.bias)
    prog = build_program(Xtr, ytr, pats, args.beta, act, bias=args.bias)
    w, rep = solve_admm(prog, _solver_cfg(args))
    if not rep.converged:
        raise CommandFailure(EXIT_SOLVER, f"convex solver stopped with status {rep.status}")
    p_cvx = objective(prog, w)
    net = convex_to_network(w, act)

    def test_metric(params):
        if Xte is None:
            return ""
        r = network_forward(params, Xte)[:, 0] - yte
        return float(np.mean(r * r))

    rows = [["convex", args.seed, "", "", float(p_cvx), test_metric(net)]]
    lrs = args.lrs or [args.lr]
    for lr in lrs:
        summ = _train_runs(args, Xtr, ytr, lr)
        for row in summ.rows:
            rows.append(["sgd" if args.optimizer == "sgd" else "gd", row["seed"], float(lr),
                         row["m"], float(row["objective"]), test_metric(row["result"].params)])
    write_csv(out / "compare.csv", ["method", "seed", "lr", "m", "train_objective", "test_metric"], rows)
    _write_manifest(out, args, {"convex_objective": p_cvx})
    _echo(f"convex={fmt(p_cvx)} runs={len(rows) - 1}")
    return EXIT_OK


def cmd_check_stationarity(args, out: Path) -> int:
    X, y = _load_xy(args)
    p = Path(args.network)
    if not p.is_file():
        raise CommandFailure(EXIT_DATA, f"{p}: network file not found")
    params = load_network(p)
    rep = stationarity_check(params, X, y, args.beta, tol=args.tol)
    rows = [[r.neuron, float(r.output), float(r.hidden), float(r.balance), r.boundary,
             ";".join(r.failures)] for r in rep.neurons]
    write_csv(out / "stationarity.csv", ["neuron", "output", "hidden", "balance", "boundary", "failures"], rows)
    _write_manifest(out, args, {"is_stationary": rep.is_stationary, "max_residual": rep.max_residual(),
                                "scale": rep.scale})
    _echo(f"stationary={rep.is_stationary} max_residual={fmt(rep.max_residual())}")
    return EXIT_OK if rep.is_stationary else EXIT_PARITY


def cmd_cnn_linear(args, out: Path) -> int:
    S, y = _load_xy(args)
    patches = PatchSet.from_signals(S, args.patch, args.stride or args.patch)
    sol = linear_cnn_train(patches, y, args.beta, _solver_cfg(args))
    cvx = float(sol.report.objective)
    report = {"K": patches.K, "d": patches.d, "n": patches.n, "objective": cvx,
              "certificate": sol.certificate, "beta": args.beta, "rank": sol.filters.shape[1],
              "reconstruction_error": sol.reconstruction_error(patches),
              "solver": _report_dict(sol.report)}
    if args.gd_epochs:
        try:
            gd = train_linear_cnn(patches.patches, y, args.beta, args.m, args.lr, args.gd_epochs,
                                  seed=args.seed)
        except TrainingDiverged as exc:
            raise CommandFailure(EXIT_SOLVER, str(exc)) from None
        report["gd_objective"] = gd.objective
        report["gd_relative_gap"] = (gd.objective - cvx) / abs(cvx)
        if sol.filters.shape[1]:
            r = sol.filters.shape[1]
            report["subspace_distance"] = subspace_distance(gd.W1, sol.filters, rank=r)
    np.savetxt(out / "Z.txt", sol.Z, fmt="%.17g")
    (out / "report.json").write_text(to_json(report) + "\n")
    _write_manifest(out, args)
    _echo(f"objective={fmt(cvx)} certificate={fmt(sol.certificate)}")
    if not sol.report.converged:
        raise CommandFailure(EXIT_SOLVER, f"solver stopped with status {sol.report.status}")
    if sol.certificate > args.beta * (1 + 1e-4):
        raise CommandFailure(EXIT_PARITY, "dual certificate exceeds beta")
    return EXIT_OK


def cmd_cnn_circular(args, out: Path) -> int:
    X, y = _load_xy(args)
    sol = circular_cnn_train(X, y, args.beta, _solver_cfg(args))
    direct = np.real(fourier_features(X) @ sol.z)
    net_err = float(np.max(np.abs(sol.network_output(X) - direct)))
    support = np.flatnonzero(np.abs(sol.z) > args.support_tol * np.abs(sol.z).max(initial=0.0))
    report = {"support": support.tolist(), "symmetry_error": conjugate_symmetry_error(sol.z),
              "network_error": net_err, "objective": sol.report.objective,
              "solver": _report_dict(sol.report)}
    write_csv(out / "z.csv", ["k", "real", "imag"],
              [[k, float(v.real), float(v.imag)] for k, v in enumerate(sol.z)])
    (out / "report.json").write_text(to_json(report) + "\n")
    _write_manifest(out, args)
    _echo(f"support={support.tolist()} symmetry_error={fmt(report['symmetry_error'])}")
    if not sol.report.converged:
        raise CommandFailure(EXIT_SOLVER, f"solver stopped with status {sol.report.status}")
    return EXIT_OK


def cmd_lowrank(args, out: Path) -> int:
    X, y = _load_xy(args)
    k = args.k if args.k else X.shape[1] // 2
    try:
        res = lowrank_train(X, y, k, args.beta, _solver_cfg(args), _activation(args.kappa))
    except ValueError as exc:
        raise CommandFailure(EXIT_DATA, str(exc)) from None
    report = {"plan": res.plan.to_dict(), "objective": res.objective,
              "convex_objective": res.convex_objective, "solver": _report_dict(res.report)}
    if args.exact:
        try:
            pats = enumerate_exact(X, r_max=args.r_max)
        except ArrangementError as exc:
            raise CommandFailure(EXIT_DATA, str(exc)) from None
        prog = build_program(X, y, pats, args.beta, _activation(args.kappa))
        w, rep = solve_admm(prog, _solver_cfg(args))
        p_star = objective(prog, w)
        report["p_star"] = p_star
        report["full_patterns"] = pats.P
        report["sandwich"] = bool(p_star <= res.objective * (1 + args.tol)
                                  and res.objective <= p_star * res.plan.ratio * (1 + args.tol))
    (out / "report.json").write_text(to_json(report) + "\n")
    save_network(res.network, out / "network.txt")
    _write_manifest(out, args, {"plan": res.plan.to_dict()})
    _echo(f"objective={fmt(res.objective)} ratio={fmt(res.plan.ratio)}")
    if not res.report.converged:
        raise CommandFailure(EXIT_SOLVER, f"solver stopped with status {res.report.status}")
    if report.get("sandwich") is False:
        raise CommandFailure(EXIT_PARITY, "low-rank sandwich violated")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_data(p, labels=True):
    p.add_argument("--data", help="CSV file with a header row")
    if labels:
        p.add_argument("--labels", help="separate label CSV (header row, one column per output)")
    p.add_argument("--generator", help=f"one of {', '.join(sorted(datasets.GENERATORS))}")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="generator parameter (repeatable)")


def _add_program(p):
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--bias", action="store_true")
    p.add_argument("--patterns", choices=["exact", "sample"], default="exact")
    p.add_argument("--patterns-file")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--r-max", type=int, default=8)
    p.add_argument("--max-iters", type=int, default=20000)


def _add_baseline(p):
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--optimizer", choices=["gd", "sgd"], default="gd")
    p.add_argument("--restarts", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".")
    common.add_argument("--config")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--tol", type=float, default=1e-6)

    parser = argparse.ArgumentParser(prog="cvxnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", parents=[common], help="exact arrangement patterns")
    _add_data(p, labels=False)
    p.add_argument("--bias", action="store_true")
    p.add_argument("--r-max", type=int, default=8)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("sample", parents=[common], help="sampled arrangement patterns")
    _add_data(p, labels=False)
    p.add_argument("--method", choices=["gaussian", "conv"], default="gaussian")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--bias", action="store_true")
    p.add_argument("--image", default="8x8")
    p.add_argument("--filter", default="3x3")
    p.add_argument("--n-images", type=int, default=10)
    p.add_argument("--exact", action="store_true", help="also enumerate and report coverage")
    p.add_argument("--r-max", type=int, default=8)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bound", parents=[common], help="pattern-count bound and sample sizes")
    _add_data(p, labels=False)
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--P", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("train-convex", parents=[common], help="solve the convex program")
    _add_data(p)
    _add_program(p)
    p.add_argument("--p", type=int, choices=[1, 2], default=2)
    p.add_argument("--solver", choices=["admm", "penalized"], default="admm")
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--interpolate", action="store_true")
    p.set_defaults(func=cmd_train_convex)

    p = sub.add_parser("train-baseline", parents=[common], help="nonconvex GD/SGD restarts")
    _add_data(p)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--bias", action="store_true")
    p.add_argument("--log-every", type=int, default=1)
    _add_baseline(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("compare", parents=[common], help="convex optimum vs nonconvex runs")
    _add_data(p)
    _add_program(p)
    _add_baseline(p)
    p.add_argument("--lrs", type=float, nargs="+")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check-stationarity", parents=[common], help="Clarke stationarity residuals")
    _add_data(p)
    p.add_argument("--network", required=True)
    p.add_argument("--beta", type=float, default=1e-3)
    p.set_defaults(func=cmd_check_stationarity)

    p = sub.add_parser("cnn-linear", parents=[common], help="nuclear-norm linear CNN")
    _add_data(p)
    p.add_argument("--patch", type=int, default=6)
    p.add_argument("--stride", type=int, default=0, help="defaults to the patch size")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--gd-epochs", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=20000)
    p.set_defaults(func=cmd_cnn_linear)

    p = sub.add_parser("cnn-circular", parents=[common], help="Fourier-domain circular CNN")
    _add_data(p)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--support-tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=20000)
    p.set_defaults(func=cmd_cnn_circular)

    p = sub.add_parser("lowrank", parents=[common], help="rank-k arrangement approximation")
    _add_data(p)
    p.add_argument("--k", type=int, default=0, help="defaults to floor(d/2)")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--exact", action="store_true", help="also solve the full program")
    p.add_argument("--r-max", type=int, default=8)
    p.add_argument("--max-iters", type=int, default=20000)
    p.set_defaults(func=cmd_lowrank)
    return parser


_TRUE = {"1", "true", "yes", "on"}


def _apply_config(parser, argv) -> argparse.Namespace:
    # the config is resolved first so that it can also supply required options
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, rest = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if not a.startswith("-")), None)
    if not early.config or command not in choices:
        return parser.parse_args(argv)
    defaults = _config_defaults(early.config, command)
    subparser = choices[command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(defaults) - set(known))
    if unknown:
        raise CommandFailure(EXIT_USAGE, f"unknown config keys: {', '.join(unknown)}")
    for dest, value in defaults.items():
        action = known[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            subparser.set_defaults(**{dest: value.strip().lower() in _TRUE})
        elif action.nargs in ("+", "*"):
            subparser.set_defaults(**{dest: [action.type(v) if action.type else v
                                             for v in value.split()]})
        else:
            subparser.set_defaults(**{dest: value})
        action.required = False
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args, out)
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
