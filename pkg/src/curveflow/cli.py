"""Command-line front end: config loading, hypothesis validation, runs, reports.

Subcommands:
  run         integrate the flow, write monitors.csv / final_state.snap / report.txt
  stationary  solve the stationary problem directly
  oracle      radial reference runs vs the 2-D engine at matched times
  verify      initial-data, barrier and evolution-identity diagnostics
  props       admissibility report for a curvature-function family

Exit codes: 0 converged/ok, 2 timeout, 3 flow breakdown, 4 config error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass

import numpy as np

from .domain_grid import Domain, DomainError
from .flow_engine import (BarrierParams, ConfigError, FlowBreakdownError,
                          FlowConfig, FlowEngine, IncompatibleInitialDataError,
                          MONITOR_FIELDS, sphere_cap_preset)
from .geometry import affine_forcing, constant_forcing, validate_forcing
from .radial_oracle import RadialConfig, RadialEngine, lift_to_grid
from .symfunc import CurvatureFunction, check_structure

EXIT_OK = 0
EXIT_TIMEOUT = 2
EXIT_BREAKDOWN = 3
EXIT_CONFIG = 4


@dataclass
class RunConfig:
    flow: FlowConfig
    seed: int = 0
    out_dir: str = "."
    sphere_radius: float | None = None  # set for the sphere-cap preset
    delta: float = 0.15


# ---------------------------------------------------------------------------
# config file loading
# ---------------------------------------------------------------------------


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{section.name}] is missing required key {key!r}")
        return default
    raw = section[key]
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a key-value config file.

    Every violated solvability hypothesis is collected with a witness point
    and reported in one error, rather than failing on the first.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc

    if "domain" not in parser:
        raise ConfigError("config needs a [domain] section")
    dom = parser["domain"]
    kind = dom.get("kind", "disk")
    if kind == "disk":
        radius = _get(dom, "radius", float, 1.0)
        domain = Domain(a=radius, b=radius)
    elif kind == "ellipse":
        domain = Domain(a=_get(dom, "a", float, required=True),
                        b=_get(dom, "b", float, required=True))
    else:
        raise ConfigError(f"[domain] kind must be disk or ellipse, got {kind!r}")

    grid_sec = parser["grid"] if "grid" in parser else {}
    n_rho = int(grid_sec.get("n_rho", 64))
    n_theta = int(grid_sec.get("n_theta", 64))

    curv = parser["curvature"] if "curvature" in parser else {}
    family = curv.get("family", "combined")
    n_dim = int(curv.get("n", 2))
    if family == "kth-root":
        f = CurvatureFunction.kth_root(n_dim, int(curv.get("k", 1)))
    elif family == "quotient":
        f = CurvatureFunction.quotient(n_dim, int(curv.get("l", 1)))
    elif family == "combined":
        f = CurvatureFunction.combined(n_dim, int(curv.get("l", 1)))
    else:
        raise ConfigError(f"[curvature] unknown family {family!r}")

    run_sec = parser["run"] if "run" in parser else {}
    run_kwargs = dict(
        sigma=float(run_sec.get("sigma", 0.9)),
        tol_res=float(run_sec.get("tol_res", 1e-6)),
        t_max=float(run_sec.get("t_max", 60.0)),
        monitor_cadence=int(run_sec.get("cadence", 50)),
    )
    seed = int(run_sec.get("seed", 0))

    barrier = None
    if "barrier" in parser:
        bar = parser["barrier"]
        barrier = BarrierParams(
            a_bar=float(bar.get("a_bar", 2.5)),
            mu=float(bar["mu"]) if "mu" in bar else None,
            quad_coef=float(bar["quad_coef"]) if "quad_coef" in bar else None,
        )

    forcing_sec = parser["forcing"] if "forcing" in parser else {}
    preset = forcing_sec.get("preset", "sphere-cap")
    sphere_radius = None

    if preset == "sphere-cap":
        if kind != "disk":
            raise ConfigError("the sphere-cap preset needs a disk domain")
        sphere_radius = float(forcing_sec.get("sphere_radius", 2.0))
        delta = float(forcing_sec.get("delta", 0.15))
        flow = sphere_cap_preset(n_rho, n_theta, boundary_radius=domain.a,
                                 sphere_radius=sphere_radius, delta=delta,
                                 barrier=barrier if barrier is not None else BarrierParams(),
                                 **run_kwargs)
        _validate_hypotheses(flow, seed)
        return RunConfig(flow=flow, seed=seed, sphere_radius=sphere_radius,
                         delta=delta)

    if preset not in ("constant", "affine"):
        raise ConfigError(f"[forcing] unknown preset {preset!r}")
    try:
        if preset == "constant":
            forcing = constant_forcing(
                phi_value=float(forcing_sec.get("phi_value", 0.5)),
                flux_at_zero=float(forcing_sec.get("flux_at_zero", 0.0)),
                flux_slope=float(forcing_sec.get("flux_slope", -1.0)),
            )
        else:
            forcing = affine_forcing(
                phi_at_zero=float(forcing_sec.get("phi_at_zero", 0.5)),
                phi_slope=float(forcing_sec.get("phi_slope", 0.0)),
                flux_at_zero=float(forcing_sec.get("flux_at_zero", 0.0)),
                flux_slope=float(forcing_sec.get("flux_slope", -1.0)),
            )
    except ValueError as exc:
        raise ConfigError(f"[forcing] {exc}") from exc

    init_sec = parser["initial"] if "initial" in parser else {}
    u0 = None
    if "file" in init_sec:
        from .domain_grid import Grid
        _, fld = Grid.snapshot_read(init_sec["file"])
        u0 = fld
    elif init_sec.get("preset", "") == "paraboloid":
        curv0 = float(init_sec.get("curvature", 1.0))
        if "height" in init_sec:
            height = float(init_sec["height"])
        else:
            # solve the flux condition for the offset (exact on disks, where
            # the radial profile has constant normal derivative)
            if not domain.is_disk:
                raise ConfigError("paraboloid height can only be derived on disks; "
                                  "set [initial] height explicitly")
            R = domain.a
            g0 = float(forcing_sec.get("flux_at_zero", 0.0))
            slope = float(forcing_sec.get("flux_slope", -1.0))
            height = (curv0 * R - g0) / slope - 0.5 * curv0 * R * R
        u0 = lambda x, y: height + 0.5 * curv0 * (x ** 2 + y ** 2)  # noqa: E731
    else:
        raise ConfigError("non-sphere presets need [initial] file= or preset=paraboloid")

    flow = FlowConfig(domain=domain, n_rho=n_rho, n_theta=n_theta, f=f,
                      forcing=forcing, u0=u0, barrier=barrier, **run_kwargs)
    _validate_hypotheses(flow, seed)
    return RunConfig(flow=flow, seed=seed)


def _validate_hypotheses(flow: FlowConfig, seed: int) -> None:
    """Sampled sign checks of the solvability hypotheses; all failures at once."""
    rng = np.random.default_rng(seed)
    a, b = flow.domain.a, flow.domain.b
    pts = []
    for _ in range(24):
        t = rng.uniform(0, 2 * np.pi)
        r = np.sqrt(rng.uniform(0, 1))
        pts.append(np.array([r * a * np.cos(t), r * b * np.sin(t)]))
    z_bound = 4.0 * (abs(a) + abs(b) + 1.0)
    violations = validate_forcing(flow.forcing, pts, z_bound)
    if violations:
        listing = "\n  ".join(violations[:8])
        raise ConfigError(f"forcing violates the solvability hypotheses:\n  {listing}")


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def write_monitor_csv(records, path, radial_flag=None) -> None:
    header = list(MONITOR_FIELDS)
    if radial_flag is not None:
        header.append("radial")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for rec in records:
            row = [f"{v:.17g}" for v in rec.as_row()]
            if radial_flag is not None:
                row.append(str(int(radial_flag)))
            fh.write(",".join(row) + "\n")


def write_report(result, engine, path) -> None:
    recs = result.records
    lines = [f"flow run: {engine.config.label}, status {result.status}, "
             f"{result.n_steps} steps to t={result.state.t:.6g}"]

    def verdict(name, ok, detail):
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    verdict("speed-extrema-bounded", result.speed_within_bounds,
            "flow speed never left its initial envelope")
    verdict("monotone-motion", result.monotone,
            "surface height nondecreasing at every node")
    min_k = min(r.min_kappa for r in recs)
    verdict("strict-convexity", min_k > 0.0, f"min principal curvature {min_k:.3e}")
    grad_gap = max(r.max_grad_interior - r.max_grad_boundary for r in recs)
    verdict("gradient-peaks-on-boundary", grad_gap <= 1e-10,
            f"max interior-vs-boundary gradient gap {grad_gap:.3e}")
    verdict("residual-convergence", result.converged,
            f"final residual {recs[-1].residual:.3e}")
    if engine.barrier_enabled:
        bar_min = min(r.barrier_min for r in recs)
        verdict("collar-barrier-nonnegative", bar_min >= -1e-8,
                f"min collar field {bar_min:.3e}")
    ratio = max(r.interior_ratio for r in recs)
    lines.append(f"[info] interior curvature ratio peak: {ratio:.4g}")
    lines.append(f"[info] boundary double-normal derivative peak: "
                 f"{max(r.max_u_nunu for r in recs):.4g}")
    lines.append(f"[info] boundary mixed derivative peak: "
                 f"{max(r.max_abs_u_taunu for r in recs):.4g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(rc: RunConfig, out_dir: str) -> int:
    engine = FlowEngine(rc.flow)
    try:
        result = engine.run()
    except FlowBreakdownError as exc:
        print(f"breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    os.makedirs(out_dir, exist_ok=True)
    write_monitor_csv(result.records, os.path.join(out_dir, "monitors.csv"))
    engine.grid.snapshot_write(result.state.field,
                               os.path.join(out_dir, "final_state.snap"))
    write_report(result, engine, os.path.join(out_dir, "report.txt"))
    print(f"{result.status}: {result.n_steps} steps, t={result.state.t:.6g}, "
          f"residual {result.records[-1].residual:.3e}")
    return EXIT_OK if result.converged else EXIT_TIMEOUT


def _cmd_stationary(rc: RunConfig, out_dir: str) -> int:
    engine = FlowEngine(rc.flow)
    try:
        stat, info = engine.solve_stationary()
    except FlowBreakdownError as exc:
        print(f"breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    os.makedirs(out_dir, exist_ok=True)
    engine.grid.snapshot_write(stat, os.path.join(out_dir, "final_state.snap"))
    print(f"stationary solve: residual {info['residual']:.3e} "
          f"after {info['stage_evals']} stage evaluations")
    return EXIT_OK


def _cmd_oracle(rc: RunConfig, out_dir: str) -> int:
    if rc.sphere_radius is None or not rc.flow.domain.is_disk:
        print("oracle comparison needs the sphere-cap preset on a disk",
              file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    times = (0.1, 0.25, 0.5)
    rows = []
    for n in (rc.flow.n_rho // 2, rc.flow.n_rho):
        diffs = _oracle_diffs(rc, n, times, out_dir)
        rows.append((n, diffs))
    lines = ["n_rho  " + "  ".join(f"sup_diff(t={t:g})" for t in times)]
    for n, diffs in rows:
        lines.append(f"{n:5d}  " + "  ".join(f"{d:.6e}" for d in diffs))
    ratios = [c / f for c, f in zip(rows[0][1], rows[1][1])]
    lines.append("refinement ratios: " + "  ".join(f"{r:.3f}" for r in ratios))
    table = "\n".join(lines)
    print(table)
    with open(os.path.join(out_dir, "oracle_table.txt"), "w") as fh:
        fh.write(table + "\n")
    return EXIT_OK


def _oracle_diffs(rc: RunConfig, n, times, out_dir):
    cfg2d = sphere_cap_preset(n, n, boundary_radius=rc.flow.domain.a,
                              sphere_radius=rc.sphere_radius, delta=rc.delta,
                              sigma=rc.flow.sigma, tol_res=rc.flow.tol_res,
                              t_max=max(times) + 0.5,
                              monitor_cadence=rc.flow.monitor_cadence)
    eng = FlowEngine(cfg2d)
    res2d = eng.run(record_times=times)

    R = rc.flow.domain.a
    rad_cfg = RadialConfig(radius=R, n_points=n, f=cfg2d.f, forcing=cfg2d.forcing,
                           u0=_radial_u0(R, rc.sphere_radius, rc.delta),
                           sigma=rc.flow.sigma, tol_res=rc.flow.tol_res,
                           t_max=max(times) + 0.5)
    rad_eng = RadialEngine(rad_cfg)
    res1d = rad_eng.run(record_times=times)
    radial_csv = os.path.join(out_dir, f"monitors_radial_{n}.csv")
    write_monitor_csv(res1d.records, radial_csv, radial_flag=True)

    diffs = []
    for t in times:
        lifted = lift_to_grid(res1d.recorded[t].values, rad_eng.r, eng.grid)
        gap = res2d.recorded[t].field.values[:-1] - lifted.values[:-1]
        diffs.append(float(np.abs(gap).max()))
    return diffs


def _radial_u0(R, sphere_radius, delta):
    def u0(r):
        cap = -np.sqrt(sphere_radius ** 2 - r ** 2)
        bump = 0.25 + 1.0 / (2.0 * R) - r ** 2 / (4.0 * R ** 2)
        return cap - delta * bump
    return u0


def _cmd_verify(rc: RunConfig, out_dir: str) -> int:
    engine = FlowEngine(rc.flow)
    report = engine.check_initial()
    lines = [
        f"initial data: compatibility residual {report.compat_residual:.3e} "
        f"(tolerance {report.compat_tol:.3e}) -> "
        f"{'PASS' if report.compatible else 'FAIL'}",
        f"initial data: stationary margin {report.supersolution_margin:+.3e} -> "
        f"{'PASS' if report.supersolution_margin >= 0 else 'WARN'}",
        f"initial data: min principal curvature {report.min_kappa:.3e} -> "
        f"{'PASS' if report.convex else 'FAIL'}",
    ]
    horizon = min(0.25, 0.5 * rc.flow.t_max)
    cfg_short = FlowConfig(**{**rc.flow.__dict__, "t_max": horizon})
    eng = FlowEngine(cfg_short)
    try:
        result = eng.run(capture_window_at=0.8 * horizon)
    except (FlowBreakdownError, IncompatibleInitialDataError) as exc:
        print("\n".join(lines))
        print(f"short verification run failed: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    if eng.barrier_enabled:
        _, bar_min, node = eng.barrier_field(result.state)
        lines.append(f"collar barrier: min {bar_min:.3e} at ring {node[0]} -> "
                     f"{'PASS' if bar_min >= -1e-8 else 'FAIL'}")
    if result.window is not None:
        ident = eng.verify_evolution_identities(result.window)
        ok = ident["metric_rel_err"] <= 0.05 and ident["nu_vert_rel_err"] <= 0.05
        lines.append(
            f"evolution identities: metric {ident['metric_rel_err']:.3e}, "
            f"vertical normal {ident['nu_vert_rel_err']:.3e} -> "
            f"{'PASS' if ok else 'FAIL'}")
    text = "\n".join(lines)
    print(text)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "verify.txt"), "w") as fh:
        fh.write(text + "\n")
    return EXIT_OK


def _cmd_props(args) -> int:
    if args.family == "kth-root":
        f = CurvatureFunction.kth_root(args.n, args.k)
    elif args.family == "quotient":
        f = CurvatureFunction.quotient(args.n, args.l)
    else:
        f = CurvatureFunction.combined(args.n, args.l)
    report = check_structure(f, sample_count=args.samples, seed=args.seed)
    print("\n".join(report.summary_lines()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curveflow",
        description="Curvature flow of convex graphs with Neumann boundary data")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="validation sample seed")
        p.add_argument("--resolution", default=None, metavar="NRxNT",
                       help="override grid resolution, e.g. 64x64")
        p.add_argument("--tol", type=float, default=None, help="override tol_res")
        p.add_argument("--tmax", type=float, default=None, help="override t_max")

    for name in ("run", "stationary", "oracle", "verify"):
        add_common(sub.add_parser(name))

    props = sub.add_parser("props", help="curvature-function admissibility report")
    props.add_argument("--family", choices=("kth-root", "quotient", "combined"),
                       default="combined")
    props.add_argument("--n", type=int, default=2)
    props.add_argument("--k", type=int, default=1)
    props.add_argument("--l", type=int, default=1)
    props.add_argument("--samples", type=int, default=1000)
    props.add_argument("--seed", type=int, default=0)
    return parser


def _apply_overrides(rc: RunConfig, args) -> RunConfig:
    flow = rc.flow
    changes = {}
    if args.resolution:
        try:
            nr, nt = (int(tok) for tok in args.resolution.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"--resolution expects NRxNT, got {args.resolution!r}") from exc
        changes.update(n_rho=nr, n_theta=nt)
    if args.tol is not None:
        changes["tol_res"] = args.tol
    if args.tmax is not None:
        changes["t_max"] = args.tmax
    if changes:
        fields = {**flow.__dict__, **changes}
        flow = FlowConfig(**fields)
    seed = rc.seed if args.seed is None else args.seed
    return RunConfig(flow=flow, seed=seed, out_dir=args.out,
                     sphere_radius=rc.sphere_radius, delta=rc.delta)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "props":
        return _cmd_props(args)
    try:
        rc = load_config(args.config)
        rc = _apply_overrides(rc, args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(rc, args.out)
        if args.command == "stationary":
            return _cmd_stationary(rc, args.out)
        if args.command == "oracle":
            return _cmd_oracle(rc, args.out)
        if args.command == "verify":
            return _cmd_verify(rc, args.out)
    except IncompatibleInitialDataError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FlowBreakdownError as exc:
        print(f"breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
