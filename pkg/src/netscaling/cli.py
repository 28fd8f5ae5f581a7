"""Command-line entry point: ``python -m netscaling {plan,sweep,render,verify,bound}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import bounds
from .constructions import DEFAULT_BUDGET, Regime, instantiate, plan
from .core import ModelParams
from .errors import AdmissibilityError, BudgetExceededError, InfeasiblePlanError
from .render import render_svg
from .sweep import SweepConfig, parse_grid, run_sweep
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "model": "up", "n": 2, "eps": None, "eps_grid": "1e-7:1e-3:17", "a": None, "ell": 1.0,
    "density": 1.0, "regime": None, "seed": 0, "out": None, "format": "csv", "max_layers": 0,
    "budget": DEFAULT_BUDGET, "workers": 1, "suite": "all",
}


class UsageError(Exception):
    pass


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _add_model_flags(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with flag values; flags given here win")
    p.add_argument("--model", choices=["up", "bt"])
    p.add_argument("--n", type=int)
    if grid:
        p.add_argument("--eps-grid", dest="eps_grid", help="geometric grid start:stop:points")
        p.add_argument("--a", help="off-network cost a, or a comma separated list")
        p.add_argument("--workers", type=int)
    else:
        p.add_argument("--eps", type=float)
        p.add_argument("--a", type=float)
    p.add_argument("--ell", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--regime", choices=[r.value for r in Regime])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netscaling",
                                     description="Hierarchical transport networks and their energy scaling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the layer schedule as JSON")
    _add_model_flags(p)

    p = sub.add_parser("sweep", help="excess energy over a geometric epsilon grid")
    _add_model_flags(p, grid=True)
    p.add_argument("--format", choices=["csv", "json"])

    p = sub.add_parser("render", help="draw an instantiated plan as SVG")
    _add_model_flags(p)
    p.add_argument("--max-layers", dest="max_layers", type=int)
    p.add_argument("--budget", type=int)

    p = sub.add_parser("verify", help="run acceptance suites")
    p.add_argument("--suite", choices=sorted(SUITES))
    p.add_argument("--out", type=Path)
    p.add_argument("--config", type=Path)

    p = sub.add_parser("bound", help="lower-bound certificates")
    bsub = p.add_subparsers(dest="kind", required=True)
    w1 = bsub.add_parser("w1", help="Wasserstein bound for atoms facing a density-capped hyperplane")
    w1.add_argument("--density", type=float, default=1.0)
    w1.add_argument("--mass", type=float, required=True)
    w1.add_argument("--atoms", type=int, default=1)
    w1.add_argument("--t", type=float, required=True, help="separation |t - s|")
    w1.add_argument("--n", type=int, default=2)
    cp = bsub.add_parser("convex", help="dual value of the entropy-constrained program")
    cp.add_argument("--mass", type=float, required=True)
    cp.add_argument("--entropy", type=float, required=True)
    cp.add_argument("--n", type=int, default=3)
    cp.add_argument("--samples", type=int, default=0, help="also scan this many random primal points")
    cp.add_argument("--seed", type=int, default=0)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config {path}: {err}") from err
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    return cfg


def _params(cfg: dict) -> ModelParams:
    if cfg["eps"] is None:
        raise UsageError("--eps is required")
    if cfg["model"] == "bt":
        if cfg["a"] is not None:
            _warn("--a is ignored for the branched transport model")
        return ModelParams("bt", float(cfg["eps"]), n=int(cfg["n"]), ell=float(cfg["ell"]),
                           density=float(cfg["density"]))
    a = 2.0 if cfg["a"] is None else float(cfg["a"])
    return ModelParams("up", float(cfg["eps"]), a, int(cfg["n"]), float(cfg["ell"]), float(cfg["density"]))


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_plan(cfg: dict) -> int:
    pl = plan(_params(cfg), cfg["regime"])
    _emit(pl.to_json(indent=2) + "\n", cfg["out"])
    return EXIT_OK


def _a_values(raw) -> tuple[float, ...]:
    if raw is None:
        return (2.0,)
    if isinstance(raw, (int, float)):
        return (float(raw),)
    if isinstance(raw, list):
        return tuple(float(x) for x in raw)
    return tuple(float(x) for x in str(raw).split(",") if x.strip())


def cmd_sweep(cfg: dict) -> int:
    start, stop, points = parse_grid(cfg["eps_grid"]) if isinstance(cfg["eps_grid"], str) \
        else tuple(cfg["eps_grid"])
    if cfg["model"] == "bt" and cfg["a"] is not None:
        _warn("--a is ignored for the branched transport model")
    sc = SweepConfig(cfg["model"], int(cfg["n"]), float(cfg["ell"]), _a_values(cfg["a"]),
                     float(start), float(stop), int(points), cfg["regime"], int(cfg["seed"]),
                     int(cfg["workers"]))
    res = run_sweep(sc)
    for notice in res.notices:
        print(f"notice: {notice}", file=sys.stderr)
    for eps, a, why in res.skipped:
        print(f"skipped eps={eps:.6g}: {why}", file=sys.stderr)
    report = res.fit_report()
    if cfg["format"] == "json":
        doc = {"rows": [dict(zip(("model", "n", "eps", "a", "ell", "regime", "K", "w1", "excess",
                                  "envelope", "ratio"),
                                 (r.model, r.n, r.eps, None if math.isnan(r.a) else r.a, r.ell,
                                  r.regime, r.K, r.w1, r.excess, r.envelope, r.ratio)))
                        for r in res.rows],
               **report}
        _emit(json.dumps(doc, indent=2) + "\n", cfg["out"])
        return EXIT_OK
    _emit(res.to_csv(), cfg["out"])
    fit_text = json.dumps(report, indent=2) + "\n"
    if cfg["out"] is None:
        sys.stderr.write(fit_text)
    else:
        out = Path(cfg["out"])
        out.with_name(out.name + ".fit.json").write_text(fit_text, encoding="utf-8")
    return EXIT_OK


def cmd_render(cfg: dict) -> int:
    params = _params(cfg)
    if params.n > 3:
        raise UsageError(f"rendering supports n <= 3, got n={params.n}")
    pl = plan(params, cfg["regime"])
    net = instantiate(pl, int(cfg["max_layers"]), int(cfg["budget"]))
    title = f"{pl.regime.value} eps={params.epsilon:g} K={pl.K}"
    svg = render_svg(net, params.ell, title=title, notes=[f"plan: {pl.regime.value}, K={pl.K}, w1={pl.w1!r}"])
    _emit(svg, cfg["out"])
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    results = run_suite(cfg["suite"])
    for r in results:
        print(r.line(), file=sys.stderr)
    failed = [r for r in results if not r.passed]
    verdict = {"suite": cfg["suite"], "passed": not failed,
               "first_failure": failed[0].line() if failed else None,
               "checks": [r.to_dict() for r in results]}
    _emit(json.dumps(verdict, indent=2, default=str) + "\n", cfg["out"])
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bound(args: argparse.Namespace) -> int:
    if args.kind == "w1":
        inst = bounds.AtomBoundInstance(args.density, args.mass, args.atoms, args.t, args.n)
        doc = {"bound": bounds.w1_atom_lower_bound(inst), "R": inst.radius, "omega": inst.omega,
               "branch": "R<=2t" if args.t > 0 and inst.radius <= 2 * args.t else "R>2t"}
    else:
        inst = bounds.ConvexProgramInstance(args.mass, args.entropy, args.n)
        dual = bounds.convex_program_dual(inst)
        doc = {"dual": float(dual), "lambda": dual.lam, "kappa": dual.kappa,
               "c_star": math.exp(-args.entropy / args.mass), "log_convention": "natural"}
        if args.samples:
            rep = bounds.dual_gap_scan(args.mass, args.entropy, args.n, args.samples, args.seed)
            doc["scan"] = {"samples": rep.samples, "min_primal": rep.min_primal,
                           "min_gap": rep.min_gap, "violations": rep.violations, "notice": rep.notice}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "bound":
            return cmd_bound(args)
        cfg = _resolve(args)
        return {"plan": cmd_plan, "sweep": cmd_sweep, "render": cmd_render,
                "verify": cmd_verify}[args.command](cfg)
    except AdmissibilityError as err:
        print(f"error: admissibility violated: {err.condition}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasiblePlanError, BudgetExceededError, UsageError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
