"""Command-line front end.

    pyrafem <verify|spaces|quadtable|convergence|consistency> [options]

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 solver failure.
``PYRAFEM_THREADS`` caps the number of BLAS threads.
"""
from __future__ import annotations

import os
import sys

_THREADS = os.environ.get("PYRAFEM_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
from dataclasses import dataclass  # noqa: E402

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("verify", "spaces", "quadtable", "convergence", "consistency")
MAX_DOFS = 200_000

REPORT_SCHEMA = json.dumps({
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pyrafem verify report",
    "type": "object",
    "required": ["k_max", "degrees", "seed", "passed", "theorem_3_1_max_residual", "checks"],
    "properties": {
        "k_max": {"type": "integer", "minimum": 1},
        "degrees": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 3}},
        "seed": {"type": "integer"},
        "passed": {"type": "boolean"},
        "theorem_3_1_max_residual": {"type": "number", "minimum": 0},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "status", "worst_residual"],
                "properties": {
                    "name": {"type": "string"},
                    "status": {"enum": ["pass", "fail"]},
                    "worst_residual": {"type": "number"},
                    "detail": {"type": "object"},
                },
            },
        },
    },
}, sort_keys=True)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    k: int = 1
    k_max: int | None = None
    s: int | None = None
    ns: tuple = (1, 2, 4)
    q: int | None = None
    A: str | None = None
    u: str = "sin3"
    seed: int = 0
    out: str | None = None
    fmt: str | None = None
    family: str = "reduced"

    @property
    def order(self) -> int:
        return self.k if self.q is None else self.q

    @property
    def degrees(self) -> tuple:
        return (0, 1, 2, 3) if self.s is None else (self.s,)


def _parse_ns(text: str) -> tuple:
    try:
        ns = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad n list {text!r}") from None
    return ns


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pyrafem", description="Pyramid finite elements with reduced quadrature.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--k", type=int, default=1, help="polynomial order")
    p.add_argument("--k-max", type=int, default=None, help="largest order for verify/spaces")
    p.add_argument("--s", type=int, default=None, help="form degree 0..3")
    p.add_argument("--q", type=int, default=None, help="quadrature order (default k)")
    p.add_argument("--n", type=_parse_ns, default=(1, 2, 4), help="comma separated subdivisions")
    p.add_argument("--A", default=None, help="coefficient preset: identity, poly1, smooth")
    p.add_argument("--u", default="sin3", help="solution preset: sin3, poly_bubble")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default=None)
    p.add_argument("--family", choices=("reduced", "conforming"), default="reduced",
                   help="element space for the global solver")
    return p


def validate(cfg: RunConfig) -> RunConfig:
    from .meshfem import COEFFICIENTS, SOLUTIONS

    if cfg.k < 1:
        raise ConfigError("--k must be >= 1")
    if cfg.k_max is not None and cfg.k_max < 1:
        raise ConfigError("--k-max must be >= 1")
    if cfg.s is not None and not 0 <= cfg.s <= 3:
        raise ConfigError("--s must be in 0..3")
    if cfg.q is not None and cfg.q < 0:
        raise ConfigError("--q must be >= 0")
    if not cfg.ns or any(n < 1 for n in cfg.ns) or list(cfg.ns) != sorted(set(cfg.ns)):
        raise ConfigError("--n must be a non-empty ascending list of positive integers")
    if cfg.A is not None and cfg.A not in COEFFICIENTS:
        raise ConfigError(f"unknown --A {cfg.A!r}; choose from {sorted(COEFFICIENTS)}")
    if cfg.u not in SOLUTIONS:
        raise ConfigError(f"unknown --u {cfg.u!r}; choose from {sorted(SOLUTIONS)}")
    if cfg.command in ("convergence", "consistency"):
        n = max(cfg.ns)
        # lattice nodes plus at most a few interior moments per element
        estimate = (2 * n * cfg.k + 1) ** 3 + 6 * n ** 3 * cfg.k ** 3
        if estimate > MAX_DOFS:
            raise ConfigError(f"n={n}, k={cfg.k} exceeds the {MAX_DOFS} degree of freedom budget")
    return cfg


# ---------------------------------------------------------------------------
# commands

def cmd_verify(cfg: RunConfig) -> tuple[int, str]:
    from .verify import run_suite

    report = run_suite(cfg.k_max or 3, cfg.degrees, cfg.seed)
    return (EXIT_OK if report["passed"] else EXIT_FAIL), json.dumps(report, indent=2, sort_keys=True) + "\n"


def cmd_spaces(cfg: RunConfig) -> tuple[int, str]:
    from . import spaces as sp

    ks = range(1, (cfg.k_max or cfg.k) + 1) if cfg.k_max else [cfg.k]
    rows = []
    for k in ks:
        rep = sp.exact_sequence_report(k)
        for s in cfg.degrees:
            rows.append({
                "s": s, "k": k,
                "dim_underlying": len(sp.build_underlying_basis(s, k)),
                "dim_conforming": len(sp.build_conforming_basis(s, k)),
                "dim_reduced": len(sp.build_reduced_basis(s, k)),
                "dim_x": [len(sp.build_exact_weight_basis(s, k, r)) for r in range(k + 1)],
                "rank_d": rep.ranks[s] if s < 3 else 0,
                "euler": rep.euler, "exact": rep.exact,
            })
    if (cfg.fmt or "json") == "json":
        return EXIT_OK, json.dumps({"rows": rows}, indent=2) + "\n"
    head = "s,k,dim_underlying,dim_conforming,dim_reduced,dim_x,rank_d,euler,exact"
    lines = [head] + [",".join([str(r["s"]), str(r["k"]), str(r["dim_underlying"]), str(r["dim_conforming"]),
                                str(r["dim_reduced"]), " ".join(map(str, r["dim_x"])), str(r["rank_d"]),
                                str(r["euler"]), str(r["exact"]).lower()]) for r in rows]
    return EXIT_OK, "\n".join(lines) + "\n"


def cmd_quadtable(cfg: RunConfig) -> tuple[int, str]:
    from .quadrature import conical_rule, gauss_jacobi20, gauss_legendre

    order = cfg.order
    rule = conical_rule(order)
    if (cfg.fmt or "csv") == "json":
        gl, gj = gauss_legendre(order + 1), gauss_jacobi20(order + 1)
        data = {"order": order,
                "legendre": {"nodes": gl.nodes.tolist(), "weights": gl.weights.tolist()},
                "jacobi20": {"nodes": gj.nodes.tolist(), "weights": gj.weights.tolist()},
                "points": rule.points.tolist(), "weights": rule.weights.tolist()}
        return EXIT_OK, json.dumps(data, indent=1) + "\n"
    lines = ["index,xi,eta,zeta,weight"]
    for i, (p, w) in enumerate(zip(rule.points, rule.weights)):
        lines.append(f"{i},{p[0]:.17e},{p[1]:.17e},{p[2]:.17e},{w:.17e}")
    return EXIT_OK, "\n".join(lines) + "\n"


def _study_output(cfg: RunConfig, res) -> str:
    if (cfg.fmt or "csv") == "json":
        return json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n"
    return res.to_csv()


def cmd_convergence(cfg: RunConfig) -> tuple[int, str]:
    from .meshfem import convergence_study

    res = convergence_study(cfg.k, cfg.order, cfg.ns, cfg.A or "identity", cfg.u, cfg.family)
    _report_rates(res, ("l2_error", "h1_error"))
    return EXIT_OK, _study_output(cfg, res)


def cmd_consistency(cfg: RunConfig) -> tuple[int, str]:
    from .meshfem import consistency_study

    res = consistency_study(cfg.k, cfg.ns, cfg.A or "poly1", cfg.u, cfg.family)
    _report_rates(res, ("consistency",))
    print(f"fitted rate elliptic: {res.extra['elliptic_rate']:.4f}", file=sys.stderr)
    return EXIT_OK, _study_output(cfg, res)


def _report_rates(res, names) -> None:
    for name in names:
        print(f"fitted rate {name}: {res.fitted(name):.4f}", file=sys.stderr)


HANDLERS = {"verify": cmd_verify, "spaces": cmd_spaces, "quadtable": cmd_quadtable,
            "convergence": cmd_convergence, "consistency": cmd_consistency}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    cfg = RunConfig(args.command, args.k, args.k_max, args.s, args.n, args.q, args.A, args.u,
                    args.seed, args.out, args.fmt, args.family)
    try:
        validate(cfg)
    except ConfigError as exc:
        print(f"pyrafem: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .errors import ConvergenceError, IndefiniteSystemError, SingularSystemError

    try:
        code, text = HANDLERS[cfg.command](cfg)
    except (IndefiniteSystemError, SingularSystemError, ConvergenceError) as exc:
        print(f"pyrafem: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
