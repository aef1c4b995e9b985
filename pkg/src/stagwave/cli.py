"""Command-line interface.

Subcommands cover operator verification, grid and stability inspection,
manufactured-solution runs, convergence studies, point-source runs, and a
benchmark of the matrix-free kernels against an assembled sparse matrix.
Every subcommand writes a machine-readable result (JSON or CSV) and a
short human summary to standard output.

Exit codes: 0 success, 2 verification failure, 3 instability detected,
4 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources

import numpy as np

from . import analysis, geometry, grid2d, metric as metric_ops, sbp1d, \
    solver, stability

__all__ = ["main"]

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_INSTABILITY = 3
EXIT_CONFIG = 4

_RESIDUAL_TOL = 1e-11


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _ConfigError(message)


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _write(path, text):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        print(text)


def _coefficient_table(args):
    if getattr(args, "coefficients", None):
        return sbp1d.load_table(args.coefficients)
    if getattr(args, "construct", None):
        from . import construct
        return construct.construct_operator_set(objective=args.construct)
    return sbp1d.load_table(getattr(args, "table", "min_norm"))


def _mapping(args):
    params = json.loads(args.params) if getattr(args, "params", None) else {}
    return geometry.MappingSpec(args.mapping, params,
                                rotate=getattr(args, "rotate", 0.0))


def _add_mapping_args(p):
    p.add_argument("--mapping", default="identity",
                   choices=sorted(geometry.KINDS))
    p.add_argument("--params", help="mapping parameters as a JSON object")
    p.add_argument("--rotate", type=float, default=0.0,
                   help="rigid rotation angle applied after the mapping")


def _add_table_args(p):
    p.add_argument("--table", default="min_norm",
                   help="built-in coefficient table name or file path")
    p.add_argument("--coefficients", help="explicit coefficient file")
    p.add_argument("--construct", choices=["min_norm", "max_norm",
                                           "accuracy"],
                   help="construct the table from scratch instead")


def _tensor_variant(name):
    return {"G": "unconditional", "Gmod": "modified"}[name]


# -- subcommand implementations ---------------------------------------------


def _cmd_ops_verify(args):
    table = _coefficient_table(args)
    report = {"provenance": table.to_dict().get("provenance", ""), "N": {}}
    worst = 0.0
    for N in args.N:
        entry = {}
        for periodic in (False, True):
            ops = sbp1d.instantiate(table, N, periodic=periodic)
            rep = sbp1d.verify_operator_set(ops)
            key = "periodic" if periodic else "bounded"
            entry[key] = {k: float(v) for k, v in rep.residuals.items()}
            entry[key]["max_residual"] = rep.max_residual
            worst = max(worst, rep.max_residual)
        report["N"][str(N)] = entry
    report["max_residual"] = worst
    report["tolerance"] = _RESIDUAL_TOL
    report["norm_PPhat"] = sbp1d.interpolation_norm(
        sbp1d.instantiate(table, max(args.N)))
    _write(args.out, json.dumps(report, indent=1))
    ok = worst <= _RESIDUAL_TOL
    print(f"operator verification: max residual {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'}), |P Phat|_2 = "
          f"{report['norm_PPhat']:.6f}")
    if not ok:
        for N, entry in report["N"].items():
            for key, res in entry.items():
                bad = {k: v for k, v in res.items()
                       if not k.startswith(("min_", "smin_"))
                       and k != "max_residual" and v > _RESIDUAL_TOL}
                if bad:
                    print(f"  N={N} {key}: failing {sorted(bad)}")
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_ops_norm(args):
    table = _coefficient_table(args)
    ops = sbp1d.instantiate(table, args.n)
    out = {"N": args.n, "norm_PPhat": sbp1d.interpolation_norm(ops)}
    _write(args.out, json.dumps(out, indent=1))
    print(f"|P Phat|_2 = {out['norm_PPhat']:.8f} at N = {args.n}")
    return EXIT_OK


def _cmd_grid_metrics(args):
    spec = _mapping(args)
    table = _coefficient_table(args)
    if args.n2 is None:
        args.n2 = args.n1
    grid = grid2d.make_grid2d(args.n1, args.n2)
    ops1 = sbp1d.instantiate(table, args.n1)
    ops2 = sbp1d.instantiate(table, args.n2)
    ops2d = grid2d.make_operators(grid, ops1, ops2)
    mf = geometry.build_metric_fields(spec, grid, ops2d, method=args.method)
    out = {"mapping": json.loads(spec.to_json()), "method": args.method,
           "n1": args.n1, "n2": args.n2}
    for loc in ("cell", "edge1", "edge2"):
        s = getattr(mf, loc)
        det = s.g11 * s.g22 - s.g12 ** 2
        out[loc] = {"J_min": float(s.J.min()), "J_max": float(s.J.max()),
                    "det_g_min": float(det.min()),
                    "g12_max_abs": float(np.abs(s.g12).max())}
    if args.dump_prefix:
        for name, arr in (("J", mf.cell.J), ("gu11", mf.cell.gu11),
                          ("gu12", mf.cell.gu12), ("gu22", mf.cell.gu22)):
            grid2d.save_field(f"{args.dump_prefix}_{name}",
                              grid2d.from_array(grid, "cell", arr))
        print(f"dumped cell metric fields to {args.dump_prefix}_*")
    _write(args.out, json.dumps(out, indent=1))
    print(f"J in [{out['cell']['J_min']:.4g}, {out['cell']['J_max']:.4g}] "
          f"at cell centers")
    return EXIT_OK


def _stability_setup(args, table):
    spec = _mapping(args)
    if args.n2 is None:
        args.n2 = args.n1
    grid = grid2d.make_grid2d(args.n1, args.n2)
    ops1 = sbp1d.instantiate(table, args.n1)
    ops2 = sbp1d.instantiate(table, args.n2)
    ops2d = grid2d.make_operators(grid, ops1, ops2)
    weights = grid2d.norm_weights(grid, ops1, ops2)
    mf = geometry.build_metric_fields(spec, grid, ops2d,
                                      method=args.metric_method)
    gop = metric_ops.build_metric_tensor(mf, ops2d,
                                         _tensor_variant(args.tensor))
    kin = metric_ops.build_kinetic_matrix(gop, weights)
    return mf, ops1, ops2, kin


def _cmd_stability_check(args):
    table = _coefficient_table(args)
    mf, ops1, ops2, kin = _stability_setup(args, table)
    rep = stability.stability_report(mf, ops1, ops2, kin=kin,
                                     direct=args.direct)
    out = {"alpha": rep.alpha, "beta": rep.beta,
           "min_pointwise_eig": rep.min_pointwise_eig,
           "verdict": rep.verdict,
           "lambda_min_direct": rep.lambda_min_direct}
    _write(args.out, json.dumps(out, indent=1))
    if args.direct:
        ok = rep.lambda_min_direct > 0
        print(f"direct lambda_min = {rep.lambda_min_direct:.6e} "
              f"({'positive' if ok else 'NOT positive'}); "
              f"certificate: {rep.verdict}")
    else:
        ok = rep.verdict == "definite"
        print(f"certificate verdict: {rep.verdict} "
              f"(min pointwise eig {rep.min_pointwise_eig:.6e})")
    return EXIT_OK if ok else EXIT_VERIFY


def _sweep_csv(rows):
    cols = ["pair", "gamma", "norm_PPhat", "lambda_min_direct",
            "lambda_min_bound", "verdict"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(
            "" if r[c] is None else
            (f"{r[c]:.10e}" if isinstance(r[c], float) else str(r[c]))
            for c in cols))
    return "\n".join(lines) + "\n"


def _cmd_stability_sweep(args):
    tables = {name: sbp1d.load_table(name) for name in args.pairs}
    if args.critical:
        lines = ["pair,kind,critical_gamma"]
        for name, table in tables.items():
            for kind in ("bound", "direct"):
                lo, hi = (args.lo, args.hi)
                gc = stability.critical_gamma(table, N=args.n1, kind=kind,
                                              lo=lo, hi=hi,
                                              steps=args.bisection_steps)
                lines.append(f"{name},{kind},{gc:.6e}")
                print(f"{name} {kind} critical amplitude ~ {gc:.4f}")
        _write(args.out, "\n".join(lines) + "\n")
        return EXIT_OK
    rows = stability.gamma_sweep(args.gammas, tables, N=args.n1,
                                 direct=args.direct)
    _write(args.out, _sweep_csv(rows))
    flips = {}
    for r in rows:
        flips.setdefault(r["pair"], []).append(
            (r["gamma"], r["verdict"],
             r["lambda_min_direct"]))
    for pair, entries in flips.items():
        certified = [g for g, v, _ in entries if v == "definite"]
        print(f"{pair}: certificate holds up to gamma = "
              f"{max(certified) if certified else float('nan')}")
    return EXIT_OK


def _build_config(args, **overrides):
    kwargs = dict(
        mapping=_mapping(args),
        n1=args.n1, n2=args.n2,
        variant=(overrides.get("variant")
                 or _tensor_variant(args.tensor)),
        formulation=args.formulation,
        T=args.T, dt=args.dt, cfl=args.cfl,
        metric_method=args.metric_method,
        table=args.table,
        stage_correction=args.stage_correction,
    )
    periodic = getattr(args, "periodic", "none")
    if periodic != "none":
        bc = {s: "sat" for s in grid2d.SIDES}
        if periodic in ("1", "both"):
            bc["L"] = bc["R"] = "periodic"
        if periodic in ("2", "both"):
            bc["B"] = bc["T"] = "periodic"
        kwargs["bc"] = bc
    kwargs.update(overrides)
    return solver.SolverConfig(**kwargs)


def _mms_errors(config):
    disc = solver.Discretization(config)
    spec = config.mapping
    state0 = analysis.mms_state(spec, disc.grid, disc.metric, 0.0,
                                formulation=config.formulation)
    result = solver.run(config,
                        boundary_data=analysis.mms_boundary_data(),
                        initial_state=state0, record_energy=False)
    exact = analysis.mms_state(spec, disc.grid, disc.metric,
                               result.final.t,
                               formulation=config.formulation)
    return disc, result, analysis.error_norms(result.final, exact, disc.grid)


def _cmd_solve_mms(args):
    config = _build_config(args)
    try:
        disc, result, errs = _mms_errors(config)
    except solver.InstabilityError as exc:
        print(f"instability: {exc}")
        return EXIT_INSTABILITY
    out = {"config": json.loads(config.to_json()),
           "dt": result.dt, "steps": result.steps,
           "errors": {k: {"l2": v[0], "linf": v[1]}
                      for k, v in errs.items()}}
    _write(args.out, json.dumps(out, indent=1))
    print(f"N = {args.n1} x {config.n2}: summed l2 error "
          f"{errs['sum'][0]:.6e}, linf {errs['sum'][1]:.6e}")
    return EXIT_OK


def _cmd_solve_converge(args):
    levels = args.levels
    for a, b in zip(levels, levels[1:]):
        if b != 2 * a:
            raise _ConfigError("levels must be nested by factors of 2")
    tensors = ["G", "Gmod"] if args.tensor == "both" else [args.tensor]
    formulations = (["covariant", "cartesian"]
                    if args.formulation == "both" else [args.formulation])
    tables = {}
    n2_over_n1 = args.n2 / args.n1 if args.n2 else 1.0
    for tensor in tensors:
        for formulation in formulations:
            runs = []
            for k, N in enumerate(levels):
                dt = args.dt * levels[0] / N if args.dt else None
                config = _build_config(
                    args, n1=N, n2=int(round(N * n2_over_n1)),
                    variant=_tensor_variant(tensor),
                    formulation=formulation, dt=dt)
                try:
                    disc, result, errs = _mms_errors(config)
                except solver.InstabilityError as exc:
                    print(f"instability at level N = {N}: {exc}")
                    return EXIT_INSTABILITY
                row = {"N": N, "err_l2": errs["sum"][0],
                       "err_inf": errs["sum"][1]}
                if args.characteristic:
                    exact = analysis.mms_state(
                        config.mapping, disc.grid, disc.metric,
                        result.final.t, formulation=formulation)
                    sl = analysis.characteristic_errors(
                        result.final, exact, disc.metric, disc.grid,
                        disc.ops2)
                    row["err_c"] = sl.err_c[0]
                    row["err_nc"] = sl.err_nc[0]
                runs.append(row)
                print(f"  {tensor}/{formulation} N = {N}: "
                      f"l2 {row['err_l2']:.4e}")
            keys = ["err_l2", "err_inf"]
            if args.characteristic:
                keys += ["err_c", "err_nc"]
            tables[f"{tensor}_{formulation}"] = \
                analysis.convergence_table(runs, keys)
    chunks = []
    for label, table in tables.items():
        chunks.append(f"# {label}\n" + table.to_csv())
    _write(args.out, "\n".join(chunks))
    for label, table in tables.items():
        last = table.rows[-1]
        print(f"{label}: final rate q_l2 = {last['q_err_l2']:.3f}")
    return EXIT_OK


def _cmd_solve_source(args):
    n1 = args.n1
    n2 = args.n2 or n1 // 2
    config = solver.SolverConfig(
        mapping=geometry.MappingSpec("gaussian_top"),
        n1=n1, n2=n2,
        variant=_tensor_variant(args.tensor),
        T=args.T, dt=args.dt, cfl=args.cfl,
        table=args.table,
        source=solver.SourceSpec(r_star=args.r_star, t0=args.t0, side="T"),
        receivers=((args.receiver[0], args.receiver[1]),),
        energy_stride=0,
    )
    try:
        result = solver.run(config, record_energy=False)
    except solver.InstabilityError as exc:
        print(f"instability: {exc}")
        return EXIT_INSTABILITY
    lines = ["t,p,v1,v2"]
    for k, t in enumerate(result.times):
        lines.append(f"{t:.10e},{result.receivers['p'][0, k]:.10e},"
                     f"{result.receivers['v1'][0, k]:.10e},"
                     f"{result.receivers['v2'][0, k]:.10e}")
    _write(args.out, "\n".join(lines) + "\n")
    peak = float(np.abs(result.receivers["p"][0]).max())
    print(f"grid {n1} x {n2}, {result.steps} steps, dt = {result.dt:.6g}, "
          f"peak |p| at receiver = {peak:.6e}")
    return EXIT_OK


def _cmd_bench_apply(args):
    config = solver.SolverConfig(
        mapping=geometry.MappingSpec("gaussian_top"),
        n1=args.n1, n2=args.n2,
        variant=_tensor_variant(args.tensor),
        skip_spd_check=True,
    )
    disc = solver.Discretization(config)
    L = solver.assemble_rhs_matrix(disc)
    rng = np.random.default_rng(0)
    state = disc.zero_state()
    state.p[:] = rng.standard_normal(state.p.shape)
    state.v1[:] = rng.standard_normal(state.v1.shape)
    state.v2[:] = rng.standard_normal(state.v2.shape)

    def bc(side):
        return np.zeros_like(disc.bxy[side][0])

    x = solver.pack_state(state)
    rate = disc.rhs_covariant(state, bc)
    free = solver.pack_state(solver.State(rate.dp, rate.dv1, rate.dv2))
    asm = L @ x
    rel = float(np.abs(free - asm).max() / max(np.abs(free).max(), 1e-300))
    if rel > 1e-12:
        print(f"implementation mismatch: relative difference {rel:.3e}")
        return EXIT_VERIFY

    def bench(f):
        f()
        t0 = time.perf_counter()
        for _ in range(args.reps):
            f()
        return (time.perf_counter() - t0) / args.reps

    t_free = bench(lambda: disc.rhs_covariant(state, bc))
    t_asm = bench(lambda: L @ x)
    n_dof = x.size
    out = {"n1": args.n1, "n2": args.n2, "reps": args.reps,
           "relative_difference": rel,
           "matrix_free_s": t_free, "assembled_s": t_asm,
           "matrix_free_updates_per_s": n_dof / t_free,
           "assembled_updates_per_s": n_dof / t_asm,
           "speedup": t_asm / t_free}
    _write(args.out, json.dumps(out, indent=1))
    print(f"matrix-free {1e3 * t_free:.2f} ms, assembled "
          f"{1e3 * t_asm:.2f} ms per apply "
          f"(speedup {out['speedup']:.2f}x, agreement {rel:.2e})")
    return EXIT_OK


def _cmd_preset(args):
    base = resources.files("stagwave") / "data" / "presets"
    if args.list:
        names = sorted(p.name[:-5] for p in base.iterdir()
                       if p.name.endswith(".json"))
        print("\n".join(names))
        return EXIT_OK
    path = base / f"{args.name}.json"
    try:
        preset = json.loads(path.read_text())
    except FileNotFoundError:
        raise _ConfigError(f"unknown preset {args.name!r}")
    argv = [preset["subcommand"]]
    for key, val in preset.get("options", {}).items():
        if isinstance(val, bool):
            if val:
                argv.append(f"--{key}")
        else:
            argv.extend([f"--{key}", str(val)])
    if args.out:
        argv.extend(["--out", args.out])
    print(f"preset {args.name}: stagwave " + " ".join(argv))
    return main(argv)


# -- argument wiring ----------------------------------------------------------


def _build_parser():
    parser = _Parser(prog="stagwave",
                     description="staggered-grid curvilinear acoustic "
                                 "wave solver")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ops-verify", help="check operator identities")
    _add_table_args(p)
    p.add_argument("--N", type=_int_list, default=[16, 32, 64])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ops_verify)

    p = sub.add_parser("ops-norm", help="interpolation norm |P Phat|_2")
    _add_table_args(p)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ops_norm)

    p = sub.add_parser("grid-metrics", help="metric coefficient summary")
    _add_mapping_args(p)
    _add_table_args(p)
    p.add_argument("--n1", type=int, default=32)
    p.add_argument("--n2", type=int)
    p.add_argument("--method", default="sbp", choices=["sbp", "analytic"])
    p.add_argument("--dump-prefix")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_grid_metrics)

    p = sub.add_parser("stability-check",
                       help="definiteness certificate for one grid")
    _add_mapping_args(p)
    _add_table_args(p)
    p.add_argument("--n1", type=int, default=16)
    p.add_argument("--n2", type=int)
    p.add_argument("--tensor", default="Gmod", choices=["G", "Gmod"])
    p.add_argument("--metric-method", default="analytic",
                   choices=["sbp", "analytic"])
    p.add_argument("--direct", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stability_check)

    p = sub.add_parser("stability-sweep",
                       help="hill-amplitude sweep of the definiteness "
                            "indicators")
    p.add_argument("--pairs", type=lambda s: s.split(","),
                   default=["min_norm", "max_norm"])
    p.add_argument("--gammas", type=_float_list,
                   default=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0,
                            3.0, 4.0])
    p.add_argument("--n1", type=int, default=16)
    p.add_argument("--direct", action="store_true", default=True)
    p.add_argument("--no-direct", dest="direct", action="store_false")
    p.add_argument("--critical", action="store_true",
                   help="bisect for the critical amplitudes instead")
    p.add_argument("--lo", type=float, default=1e-3)
    p.add_argument("--hi", type=float, default=8.0)
    p.add_argument("--bisection-steps", type=int, default=12)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stability_sweep)

    def add_solve_args(p):
        _add_mapping_args(p)
        p.add_argument("--table", default="min_norm")
        p.add_argument("--tensor", default="Gmod",
                       choices=["G", "Gmod", "both"])
        p.add_argument("--formulation", default="covariant",
                       choices=["covariant", "cartesian", "both"])
        p.add_argument("--T", type=float, default=0.5)
        p.add_argument("--dt", type=float)
        p.add_argument("--cfl", type=float, default=0.5)
        p.add_argument("--metric-method", default="sbp",
                       choices=["sbp", "analytic"])
        p.add_argument("--stage-correction", default="consistent",
                       choices=["consistent", "naive"])
        p.add_argument("--periodic", default="none",
                       choices=["none", "1", "2", "both"],
                       help="replace SAT boundaries with periodic coupling "
                            "in the given direction(s)")
        p.add_argument("--out")

    p = sub.add_parser("solve-mms",
                       help="manufactured-solution run with error report")
    add_solve_args(p)
    p.add_argument("--n1", type=int, default=32)
    p.add_argument("--n2", type=int)
    p.set_defaults(func=_cmd_solve_mms)

    p = sub.add_parser("solve-converge",
                       help="nested-refinement convergence table")
    add_solve_args(p)
    p.add_argument("--levels", type=_int_list, default=[16, 32, 64, 128])
    p.add_argument("--n1", type=int, default=16,
                   help="coarsest level (with --n2 sets the aspect ratio)")
    p.add_argument("--n2", type=int)
    p.add_argument("--characteristic", action="store_true",
                   help="also report boundary-slice errors split by "
                        "characteristic type")
    p.set_defaults(func=_cmd_solve_converge)

    p = sub.add_parser("solve-source",
                       help="boundary point-source run with receiver trace")
    p.add_argument("--n1", type=int, default=128)
    p.add_argument("--n2", type=int)
    p.add_argument("--tensor", default="Gmod", choices=["G", "Gmod"])
    p.add_argument("--table", default="min_norm")
    p.add_argument("--T", type=float, default=7.8125)
    p.add_argument("--dt", type=float)
    p.add_argument("--cfl", type=float, default=0.25)
    p.add_argument("--t0", type=float, default=1.7)
    p.add_argument("--r-star", type=float, default=0.45)
    p.add_argument("--receiver", type=_float_list, default=[0.5, 0.5])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_solve_source)

    p = sub.add_parser("bench-apply",
                       help="matrix-free vs assembled RHS throughput")
    p.add_argument("--n1", type=int, default=1024)
    p.add_argument("--n2", type=int, default=512)
    p.add_argument("--tensor", default="Gmod", choices=["G", "Gmod"])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bench_apply)

    p = sub.add_parser("preset", help="run a shipped experiment recipe")
    p.add_argument("name", nargs="?", default="")
    p.add_argument("--list", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_preset)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except metric_ops.ConvergenceError as exc:
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY


if __name__ == "__main__":
    sys.exit(main())
