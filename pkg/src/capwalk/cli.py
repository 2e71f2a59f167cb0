"""Command-line entry point.

Every subcommand writes its outputs and a ``manifest.json`` into ``--out``
(default ``capwalk_out``).  Exit codes: 0 on success, 1 when a check fails
(stuck certificate, residual above tolerance, failed criterion), 2 on
usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CheckFailed(Exception):
    """A computed check did not hold; maps to exit code 1."""


@dataclass
class RunManifest:
    """Record of one CLI run: command, configuration, seed, code version, timing and outputs."""

    command: str
    config: dict
    seed: int | None
    version: str = __version__
    started: str = ""
    finished: str = ""
    runtime_s: float = 0.0
    exit_code: int | None = None
    error: str | None = None
    outputs: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "version": self.version, "started": self.started, "finished": self.finished,
                "runtime_s": self.runtime_s, "exit_code": self.exit_code, "error": self.error,
                "outputs": list(self.outputs)}

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(self.as_dict(), indent=2) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_config(path):
    """Parse and validate an experiment config (JSON); unknown keys are rejected."""
    from .deviation_lab import ConfigError, ExperimentConfig

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file {p} not found")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)


class _Outputs:
    """Writes output files into the run directory and records them in the manifest."""

    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest

    def json(self, name: str, data) -> Path:
        path = self.out / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.manifest.outputs.append(str(path))
        return path

    def csv(self, name: str, header, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.manifest.outputs.append(str(path))
        return path

    def path(self, name: str) -> Path:
        path = self.out / name
        self.manifest.outputs.append(str(path))
        return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ---------------------------------------------------------------- commands


def _cmd_green(args, out: _Outputs) -> int:
    from .green import build_green_table, get_green_table, save_green_table

    if args.action == "build":
        g = build_green_table(args.dim, args.radius)
        save_green_table(g, out.path(f"green_d{args.dim}_R{args.radius}.grn"))
    else:
        g = get_green_table(args.dim, args.radius)
    res = g.harmonic_residual()
    summary = {"dim": g.dim, "radius": g.radius, "G0": g.at_origin(), "harmonic_residual": res,
               "seam_mismatch": g.seam_mismatch(), "tail_constant": g.tail_constant}
    out.json("green.json", summary)
    print(f"max harmonic residual {res:.3e}")
    print(f"G(0) = {g.at_origin():.16f}, seam mismatch {summary['seam_mismatch']:.3e}")
    if args.action == "check" and not res < 1e-6:
        raise CheckFailed(f"harmonic residual {res:.3e} is not below 1e-6")
    return EXIT_OK


def _walks(args, count: int):
    from .lattice import RngStream, simulate_walk

    stream = RngStream(args.seed, 0)
    return stream, [simulate_walk(args.dim, args.n, stream, k) for k in range(count)]


def _cmd_cap(args, out: _Outputs) -> int:
    from .capacity import EscapeConfig, PointSet, capacity, capacity_via_hitting

    stream, (S,) = _walks(args, 1)
    A = PointSet.from_walk(S)
    cfg = EscapeConfig(radius=args.radius, replicates=args.replicates)
    res = {"n": args.n, "dim": args.dim, "points": len(A)}
    if args.method in ("escape", "both"):
        c = capacity(A, cfg, stream)
        res["escape"] = {"cap": c.mean, "stderr": c.stderr, "bias_bound": c.bias_bound}
        print(f"cap (escape sum)    {c.mean:.6f} +- {c.stderr:.6f}")
    if args.method in ("hitting", "both"):
        h = capacity_via_hitting(A, None, EscapeConfig(replicates=args.replicates), stream)
        res["hitting"] = {"cap": h.mean, "stderr": h.stderr, "bias_bound": h.bias_bound}
        print(f"cap (hitting ratio) {h.mean:.6f} +- {h.stderr:.6f}")
    if args.n == 0:
        from .green import get_green_table

        res["exact"] = 1.0 / get_green_table(args.dim).at_origin()
        print(f"1/G_D(0)            {res['exact']:.6f}")
    out.json("cap.json", res)
    return EXIT_OK


def _cmd_chi(args, out: _Outputs) -> int:
    from .capacity import EscapeConfig
    from .cross_term import chi, chi_localized, decorate

    stream, (S, T) = _walks(args, 2)
    cfg = EscapeConfig(radius=args.radius, replicates=args.replicates)
    if args.b > 1:
        c = chi_localized(S, T, args.b, cfg, stream)
    else:
        c = chi(decorate(S, cfg, stream, 0), decorate(T, cfg, stream, 1))
    out.json("chi.json", {"n": args.n, "dim": args.dim, "b": args.b, "chi": c.value, "stderr": c.stderr})
    print(f"chi_b (b={args.b}) = {c.value:.6f} +- {c.stderr:.6f}")
    return EXIT_OK


def _cmd_decompose(args, out: _Outputs) -> int:
    from .capacity import EscapeConfig
    from .cross_term import decomposition_terms

    stream, (S,) = _walks(args, 1)
    d = decomposition_terms(S, args.level, EscapeConfig(radius=args.radius, replicates=args.replicates),
                            stream)
    res = d.as_dict()
    res["telescoping_residual"] = str(d.telescoping_residual())
    res["epsilon_residual"] = str(d.epsilon_residual())
    out.json("decompose.json", res)
    print(json.dumps(res, indent=2))
    if d.telescoping_residual() != 0 or d.epsilon_residual() != 0:
        raise CheckFailed("decomposition identities do not hold exactly")
    return EXIT_OK


def _cmd_xyzw(args, out: _Outputs) -> int:
    from .cross_term import xyzw_stats

    _, (S, T) = _walks(args, 2)
    res = xyzw_stats(S, T, args.level)
    out.json("xyzw.json", {"n": args.n, "level": args.level, **res})
    print(json.dumps(res, indent=2))
    return EXIT_OK


def _parse_phi(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--phi expects comma-separated integers, got {text!r}") from None


def _cmd_reduce(args, out: _Outputs) -> int:
    from . import graph_calculus as GC

    if args.action == "replay":
        if not args.certificate:
            raise _UsageError("reduce replay needs --certificate PATH")
        text = Path(args.certificate).read_text()
        try:
            cert = GC.replay(text)
        except (GC.StuckState, GC.PatternMismatch, AssertionError, ValueError) as exc:
            raise CheckFailed(f"certificate does not replay: {exc}") from None
        if not cert.residual_ok:
            raise CheckFailed("replayed certificate leaves edges behind")
        out.json("replay.json", {"ok": True, "bound": str(cert.symbolic_bound())})
        print(f"certificate replays; bound {cert.symbolic_bound()}")
        return EXIT_OK
    if args.phi is not None:
        phi = args.phi
        if len(phi) % 2:
            raise _UsageError("--phi must have even length")
        graphs = [GC.build_error_graph(len(phi) // 2, phi)]
    else:
        if args.m is None:
            raise _UsageError("reduce enumerate needs --m or --phi")
        graphs = [GC.build_error_graph(args.m, phi) for phi in GC.two_to_one_maps(args.m)]
    certs, failures = [], []
    for g in graphs:
        try:
            cert = GC.reduce_to_certificate(g)
            GC.replay(cert.to_json())
            certs.append(json.loads(cert.to_json()))
        except (GC.StuckState, GC.PatternMismatch, AssertionError) as exc:
            failures.append({"phi": list(g.phi), "error": str(exc)})
    summary = {"certificates": len(certs), "failures": failures}
    if args.phi is None:
        rep = GC.enumerate_and_certify(args.m)
        summary["report"] = rep.as_dict()
        if not rep.ok:
            failures.extend(rep.failures)
    out.json("certificates.json", certs)
    out.json("reduce.json", summary)
    print(f"{len(certs)} certificates, {len(failures)} failures")
    if failures:
        raise CheckFailed(f"{len(failures)} graphs did not reduce")
    return EXIT_OK


def _cmd_oracle(args, out: _Outputs) -> int:
    from . import exact_oracle as O

    if args.kind == "rules":
        rows = O.certify_rule_constants(dim=args.dim, i_max=args.t_max or 12, half_width=args.x_max or 8)
    else:
        rows = [O.displacement_sweep(args.dim, args.t_max or 256, args.x_max or 3)]
    O.write_constant_table(rows, out.path("constants.csv"))
    for r in rows:
        print(f"{r.label:12s} max ratio {r.max_ratio:.6g} at {r.argmax}")
    if not all(np.isfinite(r.max_ratio) for r in rows):
        raise CheckFailed("a swept ratio is not finite")
    return EXIT_OK


def _cmd_deviate(args, out: _Outputs) -> int:
    from . import deviation_lab as D

    if args.suite == "scaling":
        rep = D.scaling_suite(args.dim, _scaling_ns(args), args.replicates, args.seed, args.workers)
        out.json("scaling.json", rep.as_dict())
        for f in (rep.chi_exponent, rep.var_drift, rep.ebr_loglog_exponent):
            print(f"{f.name}: {f.exponent:.4f} (95% CI {f.ci[0]:.4f} .. {f.ci[1]:.4f})")
        return EXIT_OK
    if args.suite == "gamma":
        est = D.estimate_gamma_tilde(replicates=args.replicates, seed=args.seed, workers=args.workers)
        out.json("gamma_tilde.json", est.as_dict())
        print(f"gamma~ = {est.value:.5f} +- {est.stderr:.5f} (alternative fit {est.alternative:.5f})")
        if not est.monotone:
            print("warning: finite-horizon estimates are not monotone in T")
        return EXIT_OK
    if args.config is None:
        raise _UsageError("deviate needs --config PATH or --suite")
    cfg = load_config(args.config)
    out.manifest.config["experiment"] = cfg.as_dict()
    out.manifest.seed = cfg.seed
    res = D.run_experiment(cfg, args.workers)
    out.json("results.json", res)
    out.csv("results.csv", ["n", "statistic", "value", "stderr"], D.results_csv_rows(res))
    for d in res["per_n"]:
        print(f"n={d['n']:7d}  mean {d['mean']:.6g} +- {d['stderr']:.3g}")
    return EXIT_OK


def _scaling_ns(args) -> tuple:
    return tuple(args.n_grid) if args.n_grid else tuple(2**k for k in range(8, 14))


def _cmd_rates(args, out: _Outputs) -> int:
    from . import deviation_lab as D

    res = {}
    if args.i5:
        res["I5"] = D.rate_functions(args.lam, args.kappa, args.gamma, 5)
        print(f"I_5 = {res['I5']!r}")
    if args.i4:
        res["I4"] = D.rate_functions(args.lam, args.kappa, dim=4)
        print(f"I_4 = {res['I4']!r}")
    if args.identities:
        checks = D.optimization_identities(args.theta, args.kappa, args.C, args.lam)
        res["identities"] = [{"name": c.name, "numeric": c.numeric, "closed_form": c.closed_form,
                              "relative_error": c.relative_error} for c in checks]
        for c in checks:
            print(f"{c.name}: numeric {c.numeric!r}, closed form {c.closed_form!r}, "
                  f"rel. error {c.relative_error:.2e}")
        if any(c.relative_error >= 1e-8 for c in checks):
            raise CheckFailed("an optimisation identity is off by more than 1e-8")
    if not res:
        raise _UsageError("rates needs --i5, --i4 or --identities")
    out.json("rates.json", res)
    return EXIT_OK


def _cmd_check(args, out: _Outputs) -> int:
    from .acceptance import run_criterion

    kwargs = {}
    if args.criterion == 9 and args.workers is not None:
        kwargs["workers"] = args.workers
    r = run_criterion(args.criterion, **kwargs)
    out.json(f"criterion_{args.criterion}.json", r.as_dict())
    print(r.line())
    if not (r.passed and r.within_budget):
        raise CheckFailed(f"criterion {args.criterion} failed")
    return EXIT_OK


# ------------------------------------------------------------------ parser


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="capwalk_out", help="output directory")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--dim", type=int, choices=(4, 5), default=5)
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available CPUs); results do not depend on it")

    p = argparse.ArgumentParser(prog="capwalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"capwalk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("green", parents=[common], help="build or check a Green's function table")
    g.add_argument("action", choices=("build", "check"))
    g.add_argument("--radius", type=int, default=32)

    for name, helptext in (("cap", "capacity of a walk range"), ("chi", "cross term of two ranges"),
                           ("decompose", "dyadic capacity decomposition"),
                           ("xyzw", "triple Green sums of sibling pieces")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--n", type=int, default=1024, help="walk length")
        if name != "xyzw":
            s.add_argument("--replicates", type=int, default=16, help="escape walks per point")
            s.add_argument("--radius", type=float, default=None, help="kill radius")
        if name == "cap":
            s.add_argument("--method", choices=("escape", "hitting", "both"), default="escape")
        if name == "chi":
            s.add_argument("--b", type=int, default=1, help="block count of the localized cross term")
        if name in ("decompose", "xyzw"):
            s.add_argument("--level", type=int, default=2)

    r = sub.add_parser("reduce", parents=[common], help="reduction certificates")
    r.add_argument("action", choices=("enumerate", "replay"))
    r.add_argument("--m", type=int, default=None)
    r.add_argument("--phi", type=_parse_phi, default=None, help="two-to-one map, e.g. 1,2,1,2")
    r.add_argument("--certificate", default=None, help="certificate JSON to replay")

    o = sub.add_parser("oracle", parents=[common], help="exact-oracle sweeps")
    o.add_argument("action", choices=("sweep",))
    o.add_argument("--kind", choices=("rules", "displacement"), default="rules")
    o.add_argument("--t-max", type=int, default=None)
    o.add_argument("--x-max", type=int, default=None)

    d = sub.add_parser("deviate", parents=[common], help="scaling and deviation experiments")
    d.add_argument("--config", default=None, help="experiment config JSON")
    d.add_argument("--suite", choices=("scaling", "gamma"), default=None)
    d.add_argument("--replicates", type=int, default=2000)
    d.add_argument("--n-grid", type=int, nargs="+", default=None)

    t = sub.add_parser("rates", parents=[common], help="rate functions and optimisation identities")
    t.add_argument("--i5", action="store_true")
    t.add_argument("--i4", action="store_true")
    t.add_argument("--identities", action="store_true")
    t.add_argument("--lambda", dest="lam", type=float, default=1.0)
    t.add_argument("--kappa", type=float, default=1.0)
    t.add_argument("--gamma", type=float, default=1.0)
    t.add_argument("--theta", type=float, default=1.0)
    t.add_argument("--C", type=float, default=1.0)

    c = sub.add_parser("check", parents=[common], help="run one acceptance criterion")
    c.add_argument("--criterion", type=int, required=True, choices=range(1, 12))
    return p


COMMANDS = {"green": _cmd_green, "cap": _cmd_cap, "chi": _cmd_chi, "decompose": _cmd_decompose,
            "xyzw": _cmd_xyzw, "reduce": _cmd_reduce, "oracle": _cmd_oracle, "deviate": _cmd_deviate,
            "rates": _cmd_rates, "check": _cmd_check}


def run(argv=None) -> int:
    """Run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k not in ("out",)}
    config = json.loads(json.dumps(config, default=_jsonable))
    manifest = RunManifest(" ".join(["capwalk"] + list(sys.argv[1:] if argv is None else argv)),
                           config, getattr(args, "seed", None), started=_now())
    t = time.perf_counter()
    code = EXIT_FAIL
    try:
        code = COMMANDS[args.command](args, _Outputs(out_dir, manifest))
    except CheckFailed as exc:
        manifest.error = str(exc)
        print(f"check failed: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    except (_UsageError, ValueError) as exc:
        manifest.error = str(exc)
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        code = EXIT_USAGE
    except Exception as exc:
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.exit_code = EXIT_FAIL
        raise
    finally:
        manifest.finished = _now()
        manifest.runtime_s = time.perf_counter() - t
        if manifest.exit_code is None:
            manifest.exit_code = code
        manifest.write(out_dir)
    return code


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
