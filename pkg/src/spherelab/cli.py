"""Command-line entry point exposing every pipeline with pinned configuration.

Subcommands: ``spectrum`` (Laplace eigenvalues of a conformal density),
``index`` (spectral/energy indices with the inequality suite), ``enumerate``
(exact-arithmetic exceptional set with proof traces), ``maximize``
(eigenvalue ascent or degenerating families), and ``sequence-verify``
(residual tables for the harmonic-sequence, conjugation, and descent
identities).

Every run is pure given its configuration: same inputs produce byte-identical
outputs, except for one ``# generated <timestamp>`` header line in CSV
artifacts.  JSON outputs carry no timestamp at all.  A flat ``key=value``
config file supplies defaults that individual flags override; the seed
defaults to 42 everywhere.

Exit codes: 0 success; 1 verification failure (an asserted value was
missed); 2 usage or validation error; 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import arithmetic, eigensolve, fem, maps, optimize
from . import sequence as sq
from .errors import SolverError, ValidationError
from .index import DEFAULT_ENERGY_GUARD, compute_index_report
from .mesh import chart_grid, icosphere
from .sequence import ResidualRow

__all__ = ["main"]

# config-file keys (flags override); everything else is flag-only
CONFIG_KEYS = ("surface", "mesh_level", "count", "tol", "guard",
               "energy_guard", "seed", "out")

DESCENT_GENERATOR = np.array([[0.5, 0.0], [0.0, -0.5]])

# calibrated degenerating-family schedules for the two-bubble limits
FAMILY_EPS = {
    ("s2", 2): (0.09, 0.04, 0.016, 0.0064, 0.0036),
    ("rp2", 2): (0.05, 0.03, 0.02, 0.012, 0.008, 0.005, 0.003),
}
GENERIC_FAMILY_EPS = (0.08, 0.05, 0.03, 0.02, 0.012)
FAMILY_MESH_LEVEL = 6
ASCENT_MESH_LEVEL = 4
ASCENT_STEPS = 150
CLOSENESS_FAMILY = 0.95      # default two-bubble schedules must reach this
CLOSENESS_ASCENT = 0.98      # k = 1 ascent must land within 2%


def _stamp() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat()}\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config file: {exc}") from exc
    config: dict = {}
    for ln, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"config line {ln} is not key=value: {raw!r}")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ValidationError(f"unknown config key {key!r} (line {ln}); "
                                  f"known: {', '.join(CONFIG_KEYS)}")
        config[key] = value.strip()
    return config


def _resolve(args, config: dict, key: str, cast, default):
    """Flag value if given, else config-file value, else the default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        try:
            return cast(config[key])
        except ValueError as exc:
            raise ValidationError(f"bad config value for {key!r}: "
                                  f"{config[key]!r}") from exc
    return default


def _surface(value: str) -> str:
    s = value.strip().lower()
    if s not in ("s2", "rp2"):
        raise ValidationError(f"surface must be s2 or rp2, got {value!r}")
    return s


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# spectrum


def _cmd_spectrum(args) -> int:
    config = _load_config(args.config)
    surface = _surface(_resolve(args, config, "surface", str, "s2"))
    level = _resolve(args, config, "mesh_level", int, 5)
    count = _resolve(args, config, "count", int, 16)
    tol = _resolve(args, config, "tol", float, 1e-8)
    seed = _resolve(args, config, "seed", int, eigensolve.DEFAULT_SEED)
    out = _resolve(args, config, "out", str, None)

    mesh = icosphere(level)
    if args.density is None:
        rho = fem.uniform_density(mesh)
    else:
        try:
            values = np.loadtxt(args.density, ndmin=1)
        except OSError as exc:
            raise ValidationError(f"cannot read density file: {exc}") from exc
        if values.shape != (mesh.n_vertices,):
            raise ValidationError(
                f"density file has {values.shape[0]} values; mesh level "
                f"{level} needs {mesh.n_vertices}")
        rho = fem.density(values)
    K = fem.assemble_stiffness(mesh)
    M = fem.assemble_mass(mesh, rho)
    if surface == "rp2":
        sel = fem.even_selection(mesh)
        asym = np.max(np.abs(rho.values[mesh.antipodal] - rho.values))
        if asym > 1e-8 * max(np.max(rho.values), 1e-30):
            raise ValidationError("density is not antipodally even; the "
                                  "projective spectrum needs an even density")
        K, M = fem.restrict(K, sel), fem.restrict(M, sel)
    spec = eigensolve.solve_lowest(K.matrix, M.matrix, count, tol=tol,
                                   seed=seed)
    _emit(eigensolve.spectrum_csv(spec), out)
    return 0


# ---------------------------------------------------------------------------
# index


def _cmd_index(args) -> int:
    config = _load_config(args.config)
    surface = _surface(_resolve(args, config, "surface", str, "s2"))
    level = _resolve(args, config, "mesh_level", int, 4)
    guard = _resolve(args, config, "guard", float, None)
    energy_guard = _resolve(args, config, "energy_guard", float,
                            DEFAULT_ENERGY_GUARD)
    seed = _resolve(args, config, "seed", int, eigensolve.DEFAULT_SEED)
    out = _resolve(args, config, "out", str, None)

    mapping = maps.parse_map(args.map)
    mesh = icosphere(level)
    report = compute_index_report(mapping, mesh,
                                  "RP2" if surface == "rp2" else "S2",
                                  descriptor=args.map, guard=guard,
                                  energy_guard=energy_guard, seed=seed)
    _emit(report.to_json() + "\n", out)
    failed = [q["name"] for q in report.inequalities if not q["pass"]]
    if failed:
        print(f"verification failure: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# enumerate


def _cmd_enumerate(args) -> int:
    config = _load_config(args.config)
    out = _resolve(args, config, "out", str, None)
    dropped = frozenset(name.replace("-", "_")
                        for name in (args.drop_constraint or ()))
    exceptions = arithmetic.enumerate_exceptions(dropped, m_max=args.m_max)
    payload = {
        "exceptions": sorted(list(pair) for pair in exceptions),
        "cutoff": arithmetic.derived_search_cutoff(),
        "dropped_constraints": sorted(dropped),
        "m_max": args.m_max,
        "induction_traces": [],
    }
    if dropped:
        baseline = arithmetic.enumerate_exceptions(m_max=args.m_max)
        payload["baseline_exceptions"] = sorted(list(p) for p in baseline)
        payload["superset_of_baseline"] = baseline <= exceptions
    for k in (1, 2, 3):
        chains = arithmetic.verify_induction_step(k)
        payload["induction_traces"].append(
            {"k": k, **{name: json.loads(trace.to_json())
                        for name, trace in chains.items()}})
    _emit(_json_text(payload), out)
    return 0


# ---------------------------------------------------------------------------
# maximize


def _cmd_maximize(args) -> int:
    config = _load_config(args.config)
    surface = _surface(_resolve(args, config, "surface", str, "s2"))
    seed = _resolve(args, config, "seed", int, eigensolve.DEFAULT_SEED)
    out = _resolve(args, config, "out", str, None)
    k = args.k
    if k < 1:
        raise ValidationError(f"k must be a positive integer, got {k}")
    target = optimize.lambda_bar_ceiling(surface, k)

    if args.mode == "family":
        if k < 2:
            raise ValidationError("family mode needs k >= 2 (a single bubble "
                                  "does not degenerate); use --mode ascend")
        level = _resolve(args, config, "mesh_level", int, FAMILY_MESH_LEVEL)
        default_eps = FAMILY_EPS.get((surface, k), GENERIC_FAMILY_EPS)
        eps = list(args.eps) if args.eps else list(default_eps)
        calibrated = (args.eps is None and level >= FAMILY_MESH_LEVEL
                      and (surface, k) in FAMILY_EPS)
        family = optimize.limit_family(surface, k, eps, mesh_level=level,
                                       seed=seed)
        ratios = [v / family.target for v in family.lambda_bars]
        monotone = all(b > a for a, b in zip(ratios, ratios[1:]))
        below = all(r < 1.0 + 1e-6 for r in ratios)
        ok = monotone and below and (not calibrated
                                     or ratios[-1] > CLOSENESS_FAMILY)
        summary = {"mode": "family", "surface": surface, "k": k,
                   "mesh_level": level, "target": family.target,
                   "epsilons": list(family.epsilons),
                   "lambda_bars": list(family.lambda_bars),
                   "final_ratio": ratios[-1], "monotone": monotone,
                   "below_ceiling": below, "ok": ok}
        csv_text = optimize.family_csv(family)
    else:
        level = _resolve(args, config, "mesh_level", int, ASCENT_MESH_LEVEL)
        mesh = icosphere(level)
        state0 = optimize.random_state(mesh, surface, k, seed=seed)
        states = optimize.ascend(mesh, surface, k, state0, args.steps)
        final = states[-1].lambda_bar
        ok = k != 1 or final > CLOSENESS_ASCENT * target
        summary = {"mode": "ascend", "surface": surface, "k": k,
                   "mesh_level": level, "target": target, "seed": seed,
                   "steps_requested": args.steps,
                   "iterations": states[-1].iteration,
                   "initial": states[0].lambda_bar, "final": final,
                   "final_ratio": final / target, "ok": ok}
        csv_text = optimize.trajectory_csv(states)

    if out:
        Path(out).write_text(_stamp() + csv_text)
    sys.stdout.write(_json_text(summary))
    return 0 if summary["ok"] else 1


# ---------------------------------------------------------------------------
# sequence-verify


def _descent_field(mapping):
    if isinstance(mapping, maps.RationalMap):
        return sq.MobiusField(rmap=mapping, generator=DESCENT_GENERATOR)
    dim = mapping.ambient_dim
    A = np.zeros((dim, dim))
    A[0, 1], A[1, 0] = 1.0, -1.0
    return sq.RotationField(matrix=A)


def _conjugation_rows(mapping, seed: int, center) -> list:
    points = icosphere(2).vertices
    if not mapping.antipodally_even:
        # rational maps branch at the poles; drop them from the sample
        points = points[np.abs(np.abs(points[:, 2]) - 1.0) > 1e-9]
    fld = sq.random_tangent_field(mapping, seed=seed)
    V = fld.values(mapping, points)
    star = sq.conjugate_field(mapping, V, points).v_star
    again = sq.conjugate_field(mapping, star, points).v_star
    involution = float(np.max(np.abs(again + V)))
    qe = sq.energy_quadratic_form(mapping, fld)
    qec = sq.energy_quadratic_form(mapping, fld, conjugate=True)
    energy = abs(qec - qe) / max(abs(qe), 1e-30)
    return [
        ResidualRow("conjugation_involution", center, involution,
                    involution < 1e-6),
        ResidualRow("conjugation_energy_form", center, float(energy),
                    energy < 1e-6),
    ]


def _cmd_sequence_verify(args) -> int:
    config = _load_config(args.config)
    seed = _resolve(args, config, "seed", int, eigensolve.DEFAULT_SEED)
    out = _resolve(args, config, "out", str, None)
    if args.charts < 1:
        raise ValidationError(f"--charts must be >= 1, got {args.charts}")

    mapping = maps.parse_map(args.map)
    base = sq.default_chart(mapping, radius=args.radius, n=args.points)
    rows: list = []
    for j in range(args.charts):
        # rotate the chart center about the vertical axis: branch points of
        # rational maps sit at the poles, so the safety margin is preserved
        theta = 2.0 * math.pi * j / args.charts
        c, s = math.cos(theta), math.sin(theta)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        chart = chart_grid(R @ base.center, args.radius, args.points)
        seq = sq.build_sequence(mapping, chart)
        rows.extend(sq.verify_identities(seq))
        chain = sq.gammahat_chain(mapping, _descent_field(mapping), chart)
        rows.append(ResidualRow("descent_dzv", rows[-1].chart_center,
                                float(max(chain.dzv_residuals)),
                                chain.converged))
    rows.extend(_conjugation_rows(mapping, seed, rows[0].chart_center))

    _emit(_stamp() + sq.residual_table_csv(rows), out)
    bad = [r.identity for r in rows if not r.converged]
    if bad:
        print(f"verification failure: {', '.join(sorted(set(bad)))}",
              file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, help="RNG seed (default 42)")
    sub.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spherelab",
        description="Spectra, harmonic-map indices, exact enumeration, and "
                    "eigenvalue maximization on the sphere and the "
                    "projective plane.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("spectrum",
                        help="Laplace spectrum of a conformal density")
    p.add_argument("--surface", choices=["s2", "rp2"])
    p.add_argument("--mesh-level", type=int, dest="mesh_level")
    p.add_argument("--count", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--density",
                   help="per-vertex density file (one value per line); "
                        "round sphere if omitted")
    _add_common(p)
    p.set_defaults(handler=_cmd_spectrum)

    p = subs.add_parser("index",
                        help="spectral/energy index report for one map")
    p.add_argument("--map", required=True,
                   help="map descriptor, e.g. veronese:2 or rational:z^3/1")
    p.add_argument("--surface", choices=["s2", "rp2"])
    p.add_argument("--mesh-level", type=int, dest="mesh_level")
    p.add_argument("--guard", type=float)
    p.add_argument("--energy-guard", type=float, dest="energy_guard")
    _add_common(p)
    p.set_defaults(handler=_cmd_index)

    p = subs.add_parser("enumerate",
                        help="exact exceptional set with proof traces")
    p.add_argument("--drop-constraint", action="append",
                   dest="drop_constraint", metavar="NAME",
                   help="omit one enumeration constraint (even-m, "
                        "nullity-floor, area-floor); repeatable")
    p.add_argument("--m-max", type=int, dest="m_max", default=64)
    _add_common(p)
    p.set_defaults(handler=_cmd_enumerate)

    p = subs.add_parser("maximize",
                        help="normalized-eigenvalue ascent or bubbling family")
    p.add_argument("--surface", choices=["s2", "rp2"])
    p.add_argument("--k", type=int, required=True,
                   help="eigenvalue rank (1 = first nonzero)")
    p.add_argument("--mode", choices=["ascend", "family"], default="ascend")
    p.add_argument("--mesh-level", type=int, dest="mesh_level")
    p.add_argument("--steps", type=int, default=ASCENT_STEPS,
                   help="ascent iteration budget")
    p.add_argument("--eps", type=lambda s: [float(x) for x in s.split(",")],
                   help="comma-separated bubble scales for family mode "
                        "(calibrated schedule if omitted)")
    _add_common(p)
    p.set_defaults(handler=_cmd_maximize)

    p = subs.add_parser("sequence-verify",
                        help="residual tables for sequence, conjugation, "
                             "and descent identities")
    p.add_argument("--map", required=True)
    p.add_argument("--charts", type=int, default=1,
                   help="number of rotated chart placements")
    p.add_argument("--radius", type=float, default=0.45)
    p.add_argument("--points", type=int, default=9,
                   help="grid points per chart side")
    _add_common(p)
    p.set_defaults(handler=_cmd_sequence_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse handles --help and bad flags
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
