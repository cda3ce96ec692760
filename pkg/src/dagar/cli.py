"""Command-line entry point: ``dagar <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import DagarError, ParseError, ValidationError, VerificationError
from .graph import (
    Graph,
    coordinate_sum_ordering,
    make_ordering,
    parse_graph_spec,
    tree_traversal_ordering,
)
from .inference import MCMCConfig, ModelSpec, Priors, fit, posterior_summary
from .metrics import correlation_curve, dic_terms, loo_lppd
from .precision import assemble_precision, car_precision, dagar_factors, orderfree_precision, write_triplet
from .linalg import make_rng
from .simulate import ExperimentConfig, cell_data, named_graph, run_experiment, simulate_poisson
from .verify import SUITES

log = logging.getLogger("dagar")

ORDERS = ("sum", "sum-desc", "diff", "diff-desc", "left", "right", "bfs", "index")


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _ordering(g: Graph, order: str, root: int = 1):
    if order in ("sum", "left"):
        return coordinate_sum_ordering(g, "sum")
    if order in ("sum-desc", "right"):
        return coordinate_sum_ordering(g, "sum", decreasing=True)
    if order == "diff":
        return coordinate_sum_ordering(g, "difference")
    if order == "diff-desc":
        return coordinate_sum_ordering(g, "difference", decreasing=True)
    if order == "bfs":
        return tree_traversal_ordering(g, root - 1)
    if order == "index":
        return make_ordering(g, np.arange(g.k))
    raise ValidationError(f"unknown ordering {order!r}")


class Manifest:
    """Collects what a run did; written once as ``manifest.json``."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.data = {
            "command": command,
            "argv": sys.argv[1:],
            "config": {k: v for k, v in vars(args).items() if k != "func"},
            "seed": getattr(args, "seed", None),
            "versions": {"dagar": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "outputs": [],
            "timings": {},
        }
        self._t0 = time.perf_counter()

    def output(self, path) -> Path:
        path = Path(path)
        self.data["outputs"].append(str(path))
        return path

    def write(self, path) -> None:
        self.data["timings"]["total_seconds"] = time.perf_counter() - self._t0
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, default=str)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


# ---------------------------------------------------------------------------
# build


def cmd_build(args) -> int:
    g = parse_graph_spec(args.graph)
    model = args.model
    if args.rho is None and not (model == "car" and args.improper):
        raise ValidationError("--rho is required")
    if model == "dagar":
        q = assemble_precision(dagar_factors(g, _ordering(g, args.order, args.root), args.rho,
                                             allow_disconnected=args.allow_disconnected))
    elif model == "dagar-of":
        q = orderfree_precision(g, args.rho, allow_disconnected=args.allow_disconnected)
    else:
        variant = "improper" if args.improper else "proper"
        rho = None if args.improper and args.rho is None else args.rho
        q = car_precision(g, rho, variant, allow_disconnected=args.allow_disconnected)
    out = Path(args.output)
    man = Manifest("build", args)
    write_triplet(q, man.output(out))
    man.data["result"] = {"k": q.k, "nnz": q.nnz}
    man.write(_manifest_path(out))
    print(f"wrote {out} (k={q.k}, nnz={q.nnz})")
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    suites = list(SUITES) if args.suite == "all" else [args.suite]
    reports = []
    for name in suites:
        kw = {}
        if name == "orderfree":
            kw = {"max_k": args.max_k, "n_random": args.n_random}
        elif name == "grid" and args.rho is not None:
            kw = {"rhos": [args.rho]}
        elif name == "tree":
            kw = {"seed": args.seed}
            if args.rho is not None:
                kw["rhos"] = [args.rho]
        rep = SUITES[name](**kw)
        reports.append(rep)
        print(f"{name}: {'PASS' if rep['passed'] else 'FAIL'} (max error {rep['max_error']:.3g}, "
              f"tolerance {rep['tolerance']:g})")
    report = {"passed": all(r["passed"] for r in reports), "suites": reports}
    text = json.dumps(report, indent=2, default=float)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    if not report["passed"]:
        raise VerificationError("verification failed")
    return 0


# ---------------------------------------------------------------------------
# curve


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def cmd_curve(args) -> int:
    graphs = {name: named_graph(name) for name in args.graphs.split(",")}
    models = [m.replace("-", "_") for m in args.models.split(",")]
    rows = correlation_curve(graphs, _floats(args.rhos), models)
    out = Path(args.output)
    man = Manifest("curve", args)
    with open(man.output(out), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["graph", "rho", "model", "value"])
        for name, rho, model, value in rows:
            wr.writerow([name, _fmt(rho), model, _fmt(value)])
    man.write(_manifest_path(out))
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit


def read_region_csv(path, g: Graph, link: str):
    """Parse the data CSV; returns (response, offsets or None, covariate matrix, names)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty data file", path)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "region":
        raise ParseError("first column must be 'region'", path, 1)
    need = ["observed", "expected"] if link == "log" else ["y"]
    for col in need:
        if col not in header:
            raise ParseError(f"missing required column {col!r} for link {link!r}", path, 1)
    covs = [h for h in header[1:] if h not in need]
    labels = {lab: i for i, lab in enumerate(g.labels)} if g.labels else {}
    values = np.full((g.k, len(header) - 1), np.nan)
    seen = np.zeros(g.k, dtype=bool)
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        key = row[0].strip()
        if key in labels:
            i = labels[key]
        else:
            try:
                i = int(key) - 1
            except ValueError:
                raise ParseError(f"unknown region {key!r}", path, lineno) from None
        if not 0 <= i < g.k:
            raise ParseError(f"region {key} not in graph (1..{g.k})", path, lineno)
        if seen[i]:
            raise ParseError(f"region {key} appears twice", path, lineno)
        seen[i] = True
        try:
            values[i] = [float(c) for c in row[1:]]
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0]) + 1
        raise ParseError(f"region {missing} of the graph has no data row", path)
    col = {h: values[:, t] for t, h in enumerate(header[1:])}
    if link == "log":
        if np.any(col["expected"] <= 0):
            raise ValidationError("expected counts must be positive")
        response, offsets = col["observed"], col["expected"]
    else:
        response, offsets = col["y"], None
    X = np.column_stack([col[c] for c in covs]) if covs else np.zeros((g.k, 0))
    return response, offsets, X, covs


def cmd_fit(args) -> int:
    g = parse_graph_spec(args.graph)
    response, offsets, X, names = read_region_csv(args.data, g, args.link)
    intercept = args.intercept == "yes" or (args.intercept == "auto" and args.link == "log")
    if intercept:
        X = np.column_stack([np.ones(g.k), X])
        names = ["intercept"] + names
    ordering = _ordering(g, args.order, args.root) if args.model == "dagar" else None
    spec = ModelSpec(args.model, g, X, ordering=ordering, link=args.link, offsets=offsets)
    priors = Priors(beta_precision=args.beta_precision, gamma_parametrisation=args.gamma)
    cfg = MCMCConfig(iterations=args.iterations, burn_in=args.burn_in, thin=args.thin, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("fit", args)
    chain = fit(response, spec, priors, cfg)

    cols = chain.scalar_columns()
    for j, nm in enumerate(names):
        cols[nm] = cols.pop(f"beta{j + 1}")
    with open(man.output(out / "trace.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        keys = names + [c for c in cols if c not in names]
        wr.writerow(keys)
        for t in range(chain.n_draws):
            wr.writerow([_fmt(cols[c][t]) for c in keys])
    with open(man.output(out / "w.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        labels = g.labels or tuple(str(i + 1) for i in range(g.k))
        wr.writerow([f"w_{lab}" for lab in labels])
        for t in range(chain.n_draws):
            wr.writerow([_fmt(v) for v in chain.w[t]])
    summary = posterior_summary(chain)
    params = summary["parameters"]
    for j, nm in enumerate(names):
        params[nm] = params.pop(f"beta{j + 1}")
    summary["dic"] = dic_terms(chain)
    if args.loo:
        if g.k > 250:
            log.warning("leave-one-out needs %d refits", g.k)
        summary["loo_lppd"] = loo_lppd(response, spec, priors, cfg)
    with open(man.output(out / "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    man.data["timings"]["mcmc_seconds"] = chain.seconds
    man.write(out / "manifest.json")
    for nm in names + ["rho"]:
        s = params[nm]
        print(f"{nm:>12}: {s['median']:.4g} ({s['lower']:.4g}, {s['upper']:.4g})")
    print(f"{'DIC':>12}: {summary['dic']['DIC']:.2f}")
    if args.loo:
        print(f"{'LOO-LPPD':>12}: {summary['loo_lppd']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    """Write a synthetic data CSV in the format ``fit`` reads.

    Gaussian data come from the same generator as one cell of ``experiment``
    (same seed, same replicate index give the same numbers); the per-model
    MCMC seeds of that cell are recorded in the manifest.
    """
    log = args.link == "log"
    for name, gauss, pois in (("rho", 0.5, 0.3), ("tau_w", 0.25, 10.0)):
        if getattr(args, name) is None:
            setattr(args, name, pois if log else gauss)
    out = Path(args.output)
    man = Manifest("simulate", args)
    if log:
        g = named_graph(args.graph)
        beta = _floats(args.beta or "-0.12")
        if len(beta) != 1:
            raise ValidationError("--link log takes a single slope in --beta")
        data = simulate_poisson(g, args.alpha, beta[0], args.rho, args.tau_w,
                                make_rng(np.random.SeedSequence(args.seed, spawn_key=(args.replicate,))))
        labels = g.labels or tuple(str(i + 1) for i in range(g.k))
        with open(man.output(out), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "observed", "expected", "x1"])
            for i in range(g.k):
                wr.writerow([labels[i], int(data["observed"][i]), _fmt(data["expected"][i]),
                             _fmt(data["x"][i])])
        w = data["w"]
    else:
        cfg = ExperimentConfig(graphs=[args.graph], rhos=[args.rho], tau_w=args.tau_w,
                               ratios=[args.ratio], replicates=args.replicate + 1,
                               beta=_floats(args.beta or "1,5"), seed=args.seed)
        data = cell_data(cfg, 0, 0, 0, args.replicate)
        g, w = data.graph, data.w
        man.data["fit_seeds"] = data.fit_seeds
        with open(man.output(out), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region", "y"] + [f"x{j + 1}" for j in range(data.X.shape[1])])
            for i in range(g.k):
                wr.writerow([i + 1, _fmt(data.y[i])] + [_fmt(v) for v in data.X[i]])
    with open(man.output(out.with_suffix(".truth.csv")), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region", "w"])
        for i in range(g.k):
            wr.writerow([i + 1, _fmt(w[i])])
    man.write(_manifest_path(out))
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# experiment


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data["config"], dict) and "graphs" in data["config"]:
        data = data["config"]
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ValidationError(f"bad experiment config: {exc}") from None


def cmd_experiment(args) -> int:
    if args.config == "desk":
        with resources.as_file(resources.files("dagar") / "data" / "desk.json") as p:
            cfg = load_experiment_config(p)
    else:
        cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.workers = args.threads
    out = Path(args.output)
    man = Manifest("experiment", args)

    def progress(n, total):
        if n % 10 == 0 or n == total:
            log.info("cell %d/%d", n, total)

    res = run_experiment(cfg, progress=progress)
    res.to_csv(man.output(out))
    man.data.update(res.manifest())
    man.write(_manifest_path(out))
    print(f"wrote {len(res.rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    threads = int(os.environ.get("DAGAR_THREADS", "1"))
    p = argparse.ArgumentParser(prog="dagar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="write a precision matrix as sparse triplets")
    b.add_argument("--graph", required=True, help="path:K, grid:MxN, us48 or edges.txt[,coords.txt]")
    b.add_argument("--model", required=True, choices=["dagar", "dagar-of", "car"])
    b.add_argument("--rho", type=float)
    b.add_argument("--order", default="sum", choices=ORDERS)
    b.add_argument("--root", type=int, default=1, help="root vertex for --order bfs (1-based)")
    b.add_argument("--improper", action="store_true", help="intrinsic CAR (rho fixed at 1)")
    b.add_argument("--allow-disconnected", action="store_true", help="block-diagonal model per island")
    b.add_argument("--output", "-o", default="precision.txt")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--suite", default="all", choices=["all"] + list(SUITES))
    v.add_argument("--max-k", type=int, default=5)
    v.add_argument("--n-random", type=int, default=100)
    v.add_argument("--rho", type=float)
    v.add_argument("--output", "-o")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("curve", help="average neighbour-pair correlation against rho")
    c.add_argument("--graphs", default="path100,grid10,us48")
    c.add_argument("--rhos", default=",".join(str(j / 10) for j in range(0, 10)))
    c.add_argument("--models", default="dagar,dagar-of,car")
    c.add_argument("--output", "-o", default="curve.csv")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_curve)

    f = sub.add_parser("fit", help="fit the hierarchical model by MCMC")
    f.add_argument("--data", required=True)
    f.add_argument("--graph", required=True)
    f.add_argument("--model", required=True,
                   choices=["dagar", "dagar-of", "car", "car-proper", "car-improper", "icar"])
    f.add_argument("--link", default="identity", choices=["identity", "log"])
    f.add_argument("--order", default="sum", choices=ORDERS)
    f.add_argument("--root", type=int, default=1)
    f.add_argument("--intercept", default="auto", choices=["auto", "yes", "no"])
    f.add_argument("--iterations", type=int, default=10_000)
    f.add_argument("--burn-in", type=int, default=5_000)
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--beta-precision", type=float, default=1e-3)
    f.add_argument("--gamma", default="rate", choices=["rate", "scale"],
                   help="read the second Gamma prior parameter as a rate or a scale")
    f.add_argument("--loo", action="store_true", help="also compute leave-one-out LPPD")
    f.add_argument("--out-dir", default="fit-out")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="write a synthetic data CSV")
    s.add_argument("--graph", default="grid10")
    s.add_argument("--rho", type=float, help="default 0.5; 0.3 for --link log")
    s.add_argument("--tau-w", type=float, help="default 0.25; 10 for --link log")
    s.add_argument("--ratio", type=float, default=0.1)
    s.add_argument("--beta", help="comma-separated slopes (default 1,5; -0.12 for --link log)")
    s.add_argument("--link", default="identity", choices=["identity", "log"])
    s.add_argument("--alpha", type=float, default=0.1, help="intercept for --link log")
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--output", "-o", default="data.csv")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("experiment", help="replicate simulation sweep")
    e.add_argument("--config", default="desk", help="JSON config, a previous manifest, or 'desk'")
    e.add_argument("--output", "-o", default="experiment.csv")
    e.add_argument("--threads", type=int, default=threads)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DagarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
