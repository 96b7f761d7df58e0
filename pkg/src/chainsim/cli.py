"""``chainsim`` command line.

Every output starts with ``#``-prefixed metadata (tool version and the full
run configuration as JSON) for CSV, or carries a ``config`` key for JSON, so
``chainsim replay FILE --out NEW`` regenerates the same data.

Exit codes: 0 success, 2 usage error, 3 infeasible plan, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, qec
from .channels import compose_depolarizing
from .montecarlo import (
    REFERENCE_ALPHA,
    REFERENCE_BETA,
    EmpiricalFit,
    FitError,
    SurfaceGrid,
    fit_empirical,
    gamma_surface,
    predicted_surface,
    synthetic_surface,
)
from .protocol import (
    EmpiricalSource,
    FixedSource,
    InfeasiblePlan,
    PhysicalSource,
    Plan,
    make_plan,
    plan_transmission,
    simulate_protocol,
)
from .spin_dynamics import (
    ChainSpec,
    DisorderModel,
    Distribution,
    PacketParams,
    Propagator,
    build_hamiltonian,
    clamp_for,
    encode_packet,
    sample_disorder,
)

EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 2, 3, 4
DEFAULT_J = 0.70710678

# flags that do not affect the data written
_VOLATILE = {"out", "threads", "command", "func"}


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def parse_grid(text: str) -> list[float]:
    """``"a,b,c"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    return [float(v) for v in text.split(",") if v]


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE} | {
        "command": args.command
    }


def _open_out(path: str):
    if path == "-":
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def write_csv(path: str, config: dict, header: list[str], rows, extra: dict | None = None):
    buf = io.StringIO()
    buf.write(f"# chainsim {__version__}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    for key, value in (extra or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    fh = _open_out(path)
    try:
        fh.write(buf.getvalue())
    finally:
        if fh is not sys.stdout:
            fh.close()


def write_json(path: str, config: dict, payload: dict):
    doc = {"tool": f"chainsim {__version__}", "config": config, **payload}
    fh = _open_out(path)
    try:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def read_csv(path: str) -> tuple[dict, list[str], np.ndarray]:
    """Metadata dict, column names and numeric rows of a ``write_csv`` file."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                if value:
                    try:
                        meta[key] = json.loads(value)
                    except json.JSONDecodeError:
                        meta[key] = value
            elif line.strip():
                lines.append(line.strip())
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return meta, header, data.reshape(-1, len(header))


def read_config(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["config"]
    return read_csv(path)[0]["config"]


def _chain(args) -> ChainSpec:
    try:
        return ChainSpec(args.n, args.j, args.alice, args.bob)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _packet(args) -> PacketParams:
    return PacketParams(args.center, args.width, args.momentum)


# --- subcommands ------------------------------------------------------------


def cmd_propagate(args) -> int:
    chain = _chain(args)
    if args.steps < 1 or args.dt < 0:
        raise UsageError("--steps must be >= 1 and --dt >= 0")
    times = [i * args.dt for i in range(args.steps)]
    psi0 = encode_packet(chain, _packet(args))
    header, columns, capture = ["site"], [], {}
    for delta in args.delta:
        if delta < 0:
            raise UsageError("--delta must be nonnegative")
        model = DisorderModel(args.dist, delta, args.seed)
        disorder = sample_disorder(model, chain.n_sites, args.trial, clamp_for(chain, model))
        prop = Propagator(build_hamiltonian(chain, disorder))
        for t in times:
            prob = np.abs(prop.evolve_amplitudes(psi0.amplitudes, t)) ** 2
            name = f"delta={fmt(delta)};t={fmt(t)}"
            header.append(name)
            columns.append(prob)
            capture[name] = float(prob[chain.bob_sites].sum())
    sites = np.arange(chain.n_sites)
    rows = np.column_stack([sites] + columns)
    if args.format == "json":
        write_json(args.out, _config(args), {
            "sites": sites, "columns": dict(zip(header[1:], columns)), "bob_capture": capture,
        })
    else:
        write_csv(args.out, _config(args), header,
                  ([int(r[0])] + list(r[1:]) for r in rows), {"bob_capture": capture})
    return 0


def _surface_rows(s: SurfaceGrid):
    for i, t in enumerate(s.times):
        for j, d in enumerate(s.deltas):
            yield [t, d, s.mean_gamma[i, j], s.stderr_gamma[i, j], s.trials]


def _surface_meta(s: SurfaceGrid) -> dict:
    meta = {"mode": s.mode, "geometry": s.geometry,
            "distribution": Distribution(s.distribution).value, "seed": s.seed}
    if s.chain is not None:
        meta["chain"] = {"n_sites": s.chain.n_sites, "coupling_j": s.chain.coupling_j,
                         "alice_size": s.chain.alice_size, "bob_size": s.chain.bob_size}
    return meta


def cmd_surface(args) -> int:
    if args.synthetic:
        alpha, beta = args.synthetic
        rng = np.random.default_rng(args.seed) if args.noise_trials else None
        surf = synthetic_surface(alpha, beta, args.times, args.deltas,
                                 args.noise_trials or 1, rng)
        surfaces = {"synthetic": surf}
    else:
        chain = _chain(args)
        modes = ["relative", "raw"] if args.mode == "both" else [args.mode]
        model = DisorderModel(args.dist, 0.0, args.seed)
        surfaces = {}
        for mode in modes:
            try:
                surfaces[mode] = gamma_surface(chain, model, args.times, args.deltas, args.trials,
                                               _packet(args), mode, args.geometry, args.threads)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    header = ["t", "delta", "mean_gamma", "stderr", "trials"]
    for i, (mode, surf) in enumerate(surfaces.items()):
        out = args.out
        if i > 0:
            p = Path(args.out)
            out = str(p.with_name(f"{p.stem}_{mode}{p.suffix}"))
        if args.format == "json":
            write_json(out, _config(args), {"surface": _surface_meta(surf), "header": header,
                                            "rows": list(_surface_rows(surf))})
        else:
            write_csv(out, _config(args), header, _surface_rows(surf),
                      {"surface": _surface_meta(surf)})
    return 0


def load_surface(path: str) -> SurfaceGrid:
    meta, header, data = read_csv(path)
    col = {name: data[:, i] for i, name in enumerate(header)}
    times = np.unique(col["t"])
    deltas = np.unique(col["delta"])
    mean = np.full((times.size, deltas.size), np.nan)
    err = np.zeros_like(mean)
    ti = np.searchsorted(times, col["t"])
    di = np.searchsorted(deltas, col["delta"])
    mean[ti, di] = col["mean_gamma"]
    err[ti, di] = col["stderr"]
    if np.isnan(mean).any():
        raise UsageError("surface CSV is not a complete grid")
    info = meta.get("surface", {})
    dist = info.get("distribution", "uniform")
    chain = ChainSpec(**info["chain"]) if "chain" in info else None
    return SurfaceGrid(times, deltas, mean, err, int(col["trials"][0]), Distribution(dist),
                       chain=chain, seed=int(info.get("seed", 0)),
                       mode=info.get("mode", "relative"), geometry=info.get("geometry", "moving"))


def cmd_fit(args) -> int:
    try:
        surf = load_surface(args.surface)
    except (OSError, KeyError, IndexError) as exc:
        raise UsageError(f"cannot read surface {args.surface}: {exc}") from exc
    fit = fit_empirical(surf)
    model = predicted_surface(fit, surf.times, surf.deltas)
    rows = [[t, d, surf.mean_gamma[i, j], model[i, j]]
            for i, t in enumerate(surf.times) for j, d in enumerate(surf.deltas)]
    result = fit.to_dict() | {
        "alpha_ci95": list(fit.confidence_interval("alpha")),
        "beta_ci95": list(fit.confidence_interval("beta")),
        "reference_alpha": REFERENCE_ALPHA,
        "reference_beta": REFERENCE_BETA,
        "grid_meta": _surface_meta(surf) | {
            "times": surf.times, "deltas": surf.deltas, "trials": surf.trials,
        },
    }
    if args.format == "csv":
        write_csv(args.out, _config(args), ["t", "delta", "mean_gamma", "model_gamma"], rows,
                  {"fit": json.loads(json.dumps(result, default=_json_default))})
    else:
        write_json(args.out, _config(args), result | {
            "overlay": {"header": ["t", "delta", "mean_gamma", "model_gamma"], "rows": rows},
        })
    return 0


def cmd_qec(args) -> int:
    rows = []
    for p in args.p_grid:
        if not 0 <= p <= 1:
            raise UsageError("p values must lie in [0, 1]")
        enum_p = poly_p = p
        for k in range(1, args.k_max + 1):
            enum_p = qec.effective_depolarizing_after_ec(enum_p)
            poly_p = qec.one_level_parameter(poly_p)
            if abs(enum_p - poly_p) > 1e-12:
                raise ArithmeticError(f"enumeration and polynomial disagree at p={p}, k={k}")
            rows.append([p, k, enum_p, poly_p, qec.level_bound(p, k)])
    header = ["p", "k", "p_enumeration", "p_polynomial", "bound"]
    if args.format == "json":
        write_json(args.out, _config(args), {"header": header, "rows": rows})
    else:
        write_csv(args.out, _config(args), header, rows)
    return 0


def _load_fit(path: str | None) -> EmpiricalFit | None:
    if path is None:
        return None
    with open(path) as fh:
        return EmpiricalFit.from_dict(json.load(fh))


def cmd_plan(args) -> int:
    fit = _load_fit(args.fit)
    if args.p is not None:
        if args.m is None:
            raise UsageError("--p needs --m")
        plan = make_plan(args.p, args.m, args.epsilon, args.length)
    else:
        if args.delta is None or args.distance is None:
            raise UsageError("give either --p/--m or --delta/--distance")
        if fit is None and args.trials == 0:
            raise UsageError("physical planning needs --fit or --trials > 0")
        plan = plan_transmission(args.delta, args.distance, args.epsilon, fit, _chain(args),
                                 args.quantile, args.margin, args.trials, args.seed,
                                 Distribution(args.dist), _packet(args))
    payload = plan.to_json_dict(
        delta=args.delta, epsilon=args.epsilon,
        fit_alpha=fit.alpha if fit else None, fit_beta=fit.beta if fit else None,
        seed=args.seed, config=_config(args), tool=f"chainsim {__version__}",
    )
    fh = _open_out(args.out)
    try:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_endtoend(args) -> int:
    if args.plan:
        with open(args.plan) as fh:
            plan = Plan.from_json_dict(json.load(fh))
    elif args.p is not None and args.k is not None and args.m is not None:
        from .protocol import p_total_bound
        b = p_total_bound(args.p, args.k, args.m)
        plan = Plan(1.0, 1.0 / math.sqrt(2), args.m, args.k, 5**args.k, args.p, b, 1 - b / 2)
    else:
        raise UsageError("give --plan or all of --p, --k, --m")
    if args.source == "fixed":
        source = FixedSource(plan.p_basic if args.p is None else args.p)
    elif args.source == "empirical":
        fit = _load_fit(args.fit)
        if fit is None or args.delta is None:
            raise UsageError("empirical source needs --fit and --delta")
        source = EmpiricalSource(fit, args.delta)
    else:
        if args.delta is None:
            raise UsageError("physical source needs --delta")
        source = PhysicalSource(_chain(args), DisorderModel(args.dist, args.delta, args.seed),
                                args.pool_size, _packet(args))
    est = simulate_protocol(plan, source, args.trials, args.seed)
    report = {
        "p_hat": est.p_hat, "stderr": est.stderr, "ci95": [est.ci_low, est.ci_high],
        "p_total_bound": est.p_total_bound, "fidelity_hat": 1 - est.p_hat / 2,
        "logical_counts": est.logical_counts, "trials": est.trials,
        "plan": plan.to_json_dict(),
    }
    if isinstance(source, FixedSource):
        block = qec.concatenated_parameter(source.p, plan.level_k)
        report["p_exact"] = compose_depolarizing(block, plan.segments_m)
    if args.format == "csv":
        keys = ["p_hat", "stderr", "p_total_bound", "trials"]
        write_csv(args.out, _config(args), keys + ["ci_low", "ci_high"],
                  [[report[k] for k in keys] + report["ci95"]])
    else:
        write_json(args.out, _config(args), report)
    return 0


def cmd_replay(args) -> int:
    config = read_config(args.source)
    argv = config_to_argv(config) + ["--out", args.out]
    if args.threads:
        argv += ["--threads", str(args.threads)]
    return main(argv)


def config_to_argv(config: dict) -> list[str]:
    """Rebuild a command line from an embedded config block."""
    config = dict(config)
    command = config.pop("command")
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
    argv = [command]
    for action in sub._actions:  # noqa: SLF001
        if not action.option_strings or action.dest not in config:
            continue
        value = config[action.dest]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            if value:
                argv.append(flag)
        elif value is None:
            continue
        elif isinstance(value, list):
            joined = ",".join(fmt(v) for v in value)
            if action.nargs in ("+", 2):
                argv += [flag] + [fmt(v) for v in value]
            else:
                argv += [flag, joined]
        else:
            argv += [flag, str(value)]
    return argv


# --- parser -----------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output path ('-' for stdout)")
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: CHAINSIM_THREADS or all cores)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    return common


def _chain_flags() -> argparse.ArgumentParser:
    chain = argparse.ArgumentParser(add_help=False)
    chain.add_argument("--n", type=_positive_int, default=250)
    chain.add_argument("--j", type=float, default=DEFAULT_J)
    chain.add_argument("--alice", type=_positive_int, default=40)
    chain.add_argument("--bob", type=_positive_int, default=40)
    chain.add_argument("--dist", choices=[d.value for d in Distribution], default="uniform")
    chain.add_argument("--center", type=float, default=None)
    chain.add_argument("--width", type=float, default=None)
    chain.add_argument("--momentum", type=float, default=math.pi / 2)
    return chain


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainsim",
        description="Qubit transfer through disordered spin chains and multi-rail error correction.")
    parser.add_argument("--version", action="version", version=f"chainsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", parents=[_common_flags(), _chain_flags()],
                       help="site-resolved |c_j(t)|^2 snapshots")
    p.set_defaults(func=cmd_propagate, n=501, alice=50, bob=50, dist="normal")
    p.add_argument("--delta", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.3])
    p.add_argument("--dt", type=float, default=25.0)
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--trial", type=int, default=0, help="disorder realisation index")

    p = sub.add_parser("surface", parents=[_common_flags(), _chain_flags()],
                       help="disorder-averaged gamma(t, delta)")
    p.set_defaults(func=cmd_surface)
    p.add_argument("--times", type=parse_grid, default=parse_grid("10:120:10"))
    p.add_argument("--deltas", type=parse_grid, default=parse_grid("0.05:0.5:0.05"))
    p.add_argument("--trials", type=_positive_int, default=50)
    p.add_argument("--mode", choices=("relative", "raw", "both"), default="relative")
    p.add_argument("--geometry", choices=("moving", "fixed"), default="moving")
    p.add_argument("--synthetic", type=float, nargs=2, metavar=("ALPHA", "BETA"), default=None,
                   help="sample the empirical law instead of simulating")
    p.add_argument("--noise-trials", type=int, default=0,
                   help="binomial noise for --synthetic (0 = noise free)")

    p = sub.add_parser("fit", parents=[_common_flags()], help="fit the empirical damping law")
    p.set_defaults(func=cmd_fit, format="json")
    p.add_argument("--surface", required=True)

    p = sub.add_parser("qec", parents=[_common_flags()],
                       help="5-qubit code logical parameter table")
    p.set_defaults(func=cmd_qec)
    p.add_argument("--p-grid", type=parse_grid, default=parse_grid("0:1:0.01"))
    p.add_argument("--k-max", type=_positive_int, default=3)

    p = sub.add_parser("plan", parents=[_common_flags(), _chain_flags()],
                       help="segment length and depth plan")
    p.set_defaults(func=cmd_plan, format="json")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--p", type=float, default=None, help="fixed per-segment parameter")
    p.add_argument("--m", type=_positive_int, default=None)
    p.add_argument("--length", type=float, default=1.0, help="segment length with --p")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--fit", default=None, help="fit JSON from 'chainsim fit'")
    p.add_argument("--trials", type=int, default=0, help="disorder samples per length")
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument("--margin", type=float, default=0.75)

    p = sub.add_parser("endtoend", parents=[_common_flags(), _chain_flags()],
                       help="Pauli-frame protocol simulation")
    p.set_defaults(func=cmd_endtoend, format="json")
    p.add_argument("--plan", default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--m", type=_positive_int, default=None)
    p.add_argument("--source", choices=("fixed", "empirical", "physical"), default="fixed")
    p.add_argument("--fit", default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--pool-size", type=_positive_int, default=256)
    p.add_argument("--trials", type=_positive_int, default=10_000)

    p = sub.add_parser("replay", help="re-run the configuration embedded in an output file")
    p.set_defaults(func=cmd_replay)
    p.add_argument("source")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=_positive_int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"chainsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasiblePlan as exc:
        print(f"chainsim: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FitError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"chainsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"chainsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
