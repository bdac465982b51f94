"""Command-line front end: ``planar-stlc analyze|scan|verify|simulate``.

Every option can also be supplied through an environment variable named
``PLANAR_STLC_<OPTION>`` (upper case, dashes as underscores); an explicit
flag takes precedence.  Exit codes: 0 success, 1 unreadable model or bad
arguments, 2 rank-deficient state under ``--expect-accessible``, 3 a
verification suite failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import closed_forms
from .accessibility import (
    RankReport,
    StructuralRefusal,
    algebra,
    default_pair,
    grid_states,
    numerical_rank,
    scan,
    spanning_set,
)
from .model import ChainModel, ModelError, State, load_model, to_relabeled
from .pfl import VectorFieldSet
from .stlc import certificate_search
from .tolerances import RANK_TOL
from . import verify

ENV_PREFIX = "PLANAR_STLC_"

EXIT_OK, EXIT_INPUT, EXIT_RANK, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(ValueError):
    """Bad option value; reported with exit code 1."""


# -- parsing helpers ----------------------------------------------------------------

def parse_angle(text: str) -> float:
    """A float, or a multiple of pi such as ``pi/2``, ``-3pi/4``, ``2*pi``."""
    t = text.strip().lower().replace(" ", "").replace("*", "")
    if "pi" not in t:
        try:
            return float(t)
        except ValueError:
            raise UsageError(f"cannot parse angle {text!r}") from None
    num, _, den = t.partition("pi")
    if den and not den.startswith("/"):
        raise UsageError(f"cannot parse angle {text!r}")
    try:
        k = 1.0 if num in ("", "+") else -1.0 if num == "-" else float(num)
        d = float(den[1:]) if den else 1.0
    except ValueError:
        raise UsageError(f"cannot parse angle {text!r}") from None
    return k * np.pi / d


def parse_grid(text: str, n: int) -> dict[int, np.ndarray]:
    """``"q2:min:max:step,q3:..."`` to per-joint value arrays; ``max`` is inclusive."""
    grid: dict[int, np.ndarray] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 4 or not parts[0].lower().startswith("q"):
            raise UsageError(f"grid item {item!r} is not 'qK:min:max:step'")
        try:
            joint = int(parts[0][1:])
        except ValueError:
            raise UsageError(f"bad joint name in grid item {item!r}") from None
        if not 1 <= joint <= n:
            raise UsageError(f"grid joint q{joint} outside q1..q{n}")
        lo, hi, step = (parse_angle(p) for p in parts[1:])
        if step <= 0:
            raise UsageError(f"grid step must be positive in {item!r}")
        if hi < lo:
            raise UsageError(f"grid max below min in {item!r}")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        grid[joint] = lo + step * np.arange(count)
    return grid


def parse_state(text: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``"q1,...,qN"`` or ``"q1,...,qN:qdot1,...,qdotN"`` in physical joint order."""
    q_txt, _, v_txt = text.partition(":")
    q = np.array([parse_angle(s) for s in q_txt.split(",")])
    qd = np.zeros(n) if not v_txt else np.array([float(s) for s in v_txt.split(",")])
    if q.shape != (n,) or qd.shape != (n,):
        raise UsageError(f"state {text!r} needs {n} angles and optionally {n} velocities")
    return q, qd


def pi_multiple(angle: float, max_den: int = 12, tol: float = 1e-9) -> str:
    """``"3pi/2"``-style text when ``angle`` is within ``tol`` of such a multiple, else ``""``."""
    f = Fraction(angle / np.pi).limit_denominator(max_den)
    if abs(angle - float(f) * np.pi) > tol:
        return ""
    if f == 0:
        return "0"
    num = {1: "", -1: "-"}.get(f.numerator, str(f.numerator))
    return f"{num}pi" + ("" if f.denominator == 1 else f"/{f.denominator}")


def fmt(v) -> str:
    return repr(float(v))


def resolve_model(spec: str) -> ChainModel:
    """A path to a model JSON file, or the name of a bundled model."""
    p = Path(spec)
    if p.exists():
        return load_model(p)
    bundled = resources.files("planar_stlc") / "models" / f"{spec}.json"
    if bundled.is_file():
        with resources.as_file(bundled) as path:
            return load_model(path)
    raise ModelError(f"no model file or bundled model named {spec!r}")


def builtin_models() -> list[str]:
    root = resources.files("planar_stlc") / "models"
    return sorted(e.name[:-5] for e in root.iterdir() if e.name.endswith(".json"))


# -- configuration ---------------------------------------------------------------------

@dataclass
class AnalysisConfig:
    command: str
    model_spec: str
    out: Path
    tol: float = RANK_TOL
    depth: int | None = None
    seed: int = 0
    samples: int = 200
    states: list[str] = field(default_factory=list)
    random_states: int = 0
    grid: str = ""
    expect_accessible: bool = False
    duration: float = 5.0
    amplitude: float = 1.0
    frequency: float = 0.5
    mode: str = "pfl"
    dt: float | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise UsageError("--tol must be positive")
        if self.depth is not None and self.depth < 1:
            raise UsageError("--depth must be at least 1")
        if self.samples < 1:
            raise UsageError("--samples must be positive")
        if self.random_states < 0:
            raise UsageError("--random-states must be non-negative")


def _env(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def _env_flag(name: str) -> bool:
    v = _env(name)
    return v is not None and v.strip().lower() in ("1", "true", "yes", "on")


def _env_list(name: str) -> list[str]:
    v = _env(name)
    return [s for s in v.split(";") if s.strip()] if v else []


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planar-stlc",
        description="Accessibility and small-time local controllability of planar chains with one passive joint.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default=_env("model"), help="model JSON path or bundled model name")
    common.add_argument("--out", default=_env("out", "."), help="output directory")
    common.add_argument("--tol", type=float, default=float(_env("tol", RANK_TOL)), help="relative rank tolerance")
    common.add_argument(
        "--depth",
        type=int,
        default=None if _env("depth") is None else int(_env("depth")),
        help="bracket nesting depth for the full algebra",
    )
    common.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="rank and STLC verdicts at given states")
    a.add_argument(
        "--state",
        action="append",
        default=None,
        help="physical state 'q1,..,qN[:qdot1,..,qdotN]'; repeatable (env: ';'-separated)",
    )
    a.add_argument("--random-states", type=int, default=int(_env("random_states", 0)))
    a.add_argument("--expect-accessible", action="store_true", default=_env_flag("expect_accessible"))

    s = sub.add_parser("scan", parents=[common], help="rank and certificate verdicts over a grid")
    s.add_argument("--grid", default=_env("grid", ""), help="'q2:min:max:step,...'; angles accept pi")

    v = sub.add_parser("verify", parents=[common], help="oracle suites")
    v.add_argument("--samples", type=int, default=int(_env("samples", 200)))

    m = sub.add_parser("simulate", parents=[common], help="integrate and export a trajectory CSV")
    m.add_argument("--state", action="append", default=None, help="initial physical state")
    m.add_argument("--duration", type=float, default=float(_env("duration", 5.0)))
    m.add_argument("--amplitude", type=float, default=float(_env("amplitude", 1.0)))
    m.add_argument("--frequency", type=float, default=float(_env("frequency", 0.5)))
    m.add_argument("--mode", choices=("pfl", "torque"), default=_env("mode", "pfl"))
    m.add_argument(
        "--dt",
        type=float,
        default=None if _env("dt") is None else float(_env("dt")),
        help="fixed RK4 step; the adaptive integrator is used when omitted",
    )

    return parser


def config_from_args(ns: argparse.Namespace) -> AnalysisConfig:
    if not ns.model:
        raise UsageError("--model is required")
    states = getattr(ns, "state", None)
    if states is None:
        states = _env_list("state")
    return AnalysisConfig(
        command=ns.command,
        model_spec=ns.model,
        out=Path(ns.out),
        tol=ns.tol,
        depth=ns.depth,
        seed=ns.seed,
        samples=getattr(ns, "samples", 200),
        states=list(states),
        random_states=getattr(ns, "random_states", 0),
        grid=getattr(ns, "grid", ""),
        expect_accessible=getattr(ns, "expect_accessible", False),
        duration=getattr(ns, "duration", 5.0),
        amplitude=getattr(ns, "amplitude", 1.0),
        frequency=getattr(ns, "frequency", 0.5),
        mode=getattr(ns, "mode", "pfl"),
        dt=getattr(ns, "dt", None),
    )


# -- outputs ----------------------------------------------------------------------------

def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def angle_header(n: int, prefix: str = "q") -> list[str]:
    return [f"{prefix}{k}" for k in range(1, n + 1)] + [f"{prefix}{k}_pi" for k in range(1, n + 1)]


def angle_cells(q) -> list[str]:
    return [fmt(v) for v in q] + [pi_multiple(float(v)) for v in q]


def p_columns(model: ChainModel) -> list[tuple[int, int]]:
    idx = range(2, model.n + 1)
    return [(a, b) for a in idx for b in idx if a <= b]


def default_depth(model: ChainModel) -> int:
    return 4 if model.n == 2 else 3


def rank_distribution(model: ChainModel, depth: int | None):
    """The distribution ``analyze`` ranks, and a short description of it."""
    fields = VectorFieldSet(model)
    if depth is None and not model.base_unactuated:
        pair = default_pair(model)
        return spanning_set(model, pair), f"spanning set for pair {pair}"
    d = default_depth(model) if depth is None else depth
    return algebra(fields, d + 1), f"bracket algebra to nesting depth {d}"


# -- commands ---------------------------------------------------------------------------

def cmd_analyze(cfg: AnalysisConfig, model: ChainModel) -> int:
    n = model.n
    states = [parse_state(s, n) for s in cfg.states]
    if cfg.random_states:
        rng = np.random.default_rng(cfg.seed)
        for _ in range(cfg.random_states):
            states.append((rng.uniform(-np.pi, np.pi, n), rng.uniform(-2.0, 2.0, n)))
    dist, described = rank_distribution(model, cfg.depth)
    reports: list[RankReport] = []
    certificates = []
    if states:
        x_phys = np.array([np.concatenate(s) for s in states])
        x_rel = to_relabeled(model, x_phys)
        A = dist.matrix(x_rel)
        rank, sv = numerical_rank(A, dist.fields.generator_norm(x_rel), cfg.tol)
        for i in range(len(states)):
            reports.append(RankReport(x_phys[i], sv[i], int(rank[i]), cfg.tol, 2 * n, tuple(dist.labels)))
            if not model.base_unactuated and not np.any(states[i][1]):
                cert = certificate_search(model, State.from_physical(model, states[i][0]))
                certificates.append({"index": i, **cert.to_dict()})

    k = len(dist.generators)
    header = angle_header(n) + [f"qdot{j}" for j in range(1, n + 1)]
    header += [f"sigma{j}" for j in range(1, min(k, 2 * n) + 1)] + ["rank", "dim", "verdict"]
    rows = []
    for r, (q, qd) in zip(reports, states):
        rows.append(angle_cells(q) + [fmt(v) for v in qd] + [fmt(v) for v in r.singular_values] + [r.rank, r.dim, r.verdict])
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out / "analyze.csv", header, rows)
    deficient = sum(not r.accessible for r in reports)
    write_json(
        cfg.out / "analyze.json",
        {
            "model": model.to_dict(),
            "distribution": described,
            "tol": cfg.tol,
            "reports": [r.to_dict() for r in reports],
            "certificates": certificates,
            "summary": {"states": len(reports), "accessible": len(reports) - deficient, "rank_deficient": deficient},
        },
    )
    for r in reports:
        print(f"rank {r.rank}/{r.dim} {r.verdict} at q={[round(float(v), 6) for v in r.state[:n]]}")
    print(f"{len(reports)} states, {deficient} rank-deficient ({described})")
    if cfg.expect_accessible and deficient:
        return EXIT_RANK
    return EXIT_OK


SCAN_STLC_HEADER_TAIL = ["pair", "theta_degrees", "verdict", "reason"]


def cmd_scan(cfg: AnalysisConfig, model: ChainModel) -> int:
    n = model.n
    if not cfg.grid:
        raise UsageError("--grid is required for scan")
    q = grid_states(model, parse_grid(cfg.grid, n))
    cols = p_columns(model)
    thr_rows = []
    stlc_rows = []
    if model.base_unactuated:
        # no spanning set exists; rank the bracket algebra instead
        dist, _ = rank_distribution(model, cfg.depth)
        x_rel = to_relabeled(model, np.concatenate([q, np.zeros_like(q)], axis=-1))
        rank, sv = numerical_rank(dist.matrix(x_rel), dist.fields.generator_norm(x_rel), cfg.tol)
        for i in range(len(q)):
            pv = [fmt(closed_forms.closed_form_P_ab(model, x_rel[i], a, b)) for a, b in cols]
            sig = [fmt(v) for v in sv[i][: 2 * n]]
            thr_rows.append(angle_cells(q[i]) + [int(rank[i]), 2 * n, int(rank[i] < 2 * n)] + sig + pv)
            stlc_rows.append(
                angle_cells(q[i]) + pv + ["", "", "refused", "base joint passive: P_ab vanishes identically"]
            )
    else:
        rows = scan(model, q, tol=cfg.tol)
        for i, r in enumerate(rows):
            x_rel = to_relabeled(model, np.concatenate([q[i], np.zeros(n)]))
            pv = [fmt(closed_forms.closed_form_P_ab(model, x_rel, a, b)) for a, b in cols]
            sig = [fmt(v) for v in r.singular_values[: 2 * n]]
            thr_rows.append(angle_cells(q[i]) + [r.rank, r.dim, int(r.singular)] + sig + pv)
            cert = certificate_search(model, State.from_physical(model, q[i]), diagnose=False)
            pair = "" if not cert.found else f"g{cert.pair[0]}:g{cert.pair[1]}"
            degs = "" if not cert.found else ":".join(str(d) for d in cert.theta_degrees)
            stlc_rows.append(angle_cells(q[i]) + pv + [pair, degs, cert.verdict, cert.reason])
    p_head = [f"P_{a}{b}" for a, b in cols]
    sing_head = angle_header(n) + ["rank", "dim", "singular"] + [f"sigma{j}" for j in range(1, 2 * n + 1)] + p_head
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out / "singular.csv", sing_head, thr_rows)
    write_csv(cfg.out / "stlc.csv", angle_header(n) + p_head + SCAN_STLC_HEADER_TAIL, stlc_rows)
    positive = sum(r[-2] == "certificate" for r in stlc_rows)
    singular = sum(r[2 * n + 2] == 1 for r in thr_rows)
    print(f"{len(q)} grid points, {singular} singular, {positive} with an STLC certificate")
    return EXIT_OK


def cmd_verify(cfg: AnalysisConfig, model: ChainModel) -> int:
    results = verify.run_suites(model, cfg.samples, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(
        cfg.out / "verify.json",
        {
            "model": model.to_dict(),
            "samples": cfg.samples,
            "seed": cfg.seed,
            "suites": [r.to_dict() for r in results],
            "passed": all(r.passed for r in results),
        },
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: max residual {r.max_residual:.3e} (tol {r.tol:.0e}) {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_simulate(cfg: AnalysisConfig, model: ChainModel) -> int:
    n = model.n
    if len(cfg.states) > 1:
        raise UsageError("simulate takes a single --state")
    q0, qd0 = parse_state(cfg.states[0], n) if cfg.states else (np.zeros(n), np.zeros(n))
    width = n - 1 if cfg.mode == "pfl" else n
    rng = np.random.default_rng(cfg.seed)
    sched = verify.sinusoidal_input(np.full(width, cfg.amplitude), np.full(width, cfg.frequency), rng.uniform(0, 2 * np.pi, width))
    x0 = np.concatenate([q0, qd0])
    if cfg.dt is None:
        traj = verify.simulate(model, x0, sched, cfg.duration, mode=cfg.mode)
    else:
        traj = verify.simulate_rk4(model, x0, sched, cfg.duration, cfg.dt, mode=cfg.mode)
    cfg.out.mkdir(parents=True, exist_ok=True)
    verify.export_trajectory_csv(model, traj, cfg.out / "trajectory.csv")
    print(f"{len(traj.t)} samples written; energy range {verify.energy_drift(model, traj):.3e}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "scan": cmd_scan, "verify": cmd_verify, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser()
    except ValueError as exc:
        print(f"error: bad {ENV_PREFIX}* environment value: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage, which is reserved for rank deficiency
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        cfg = config_from_args(ns)
        model = resolve_model(cfg.model_spec)
        return COMMANDS[cfg.command](cfg, model)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, StructuralRefusal) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except verify.SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
