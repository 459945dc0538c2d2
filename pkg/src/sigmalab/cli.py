"""Command-line entry point ``sigmalab``.

Every command writes ``<command>.csv`` (rows tagged with ``seed`` and
``config_digest``), ``manifest.json`` and command-specific detail files into the
output directory (``--outdir``, else ``$SIGMALAB_OUTDIR/<command>``, else
``./sigmalab_runs/<command>``).

Exit codes: 0 ok, 2 configuration / input error, 3 solver non-convergence,
4 inequality or check violation, 5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from math import comb
from typing import Optional, Sequence

import numpy as np

from . import __version__, cm_solver, config, degprobe, expr, io, khessian_torus, matcalc, symfun
from .errors import CompatibilityError, ConfigError, ConvergenceError, InadmissibleError
from .sphere import make_grid
from .torusgrid import TorusGrid

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VIOLATION, EXIT_IO = 0, 2, 3, 4, 5
SWEEP_COLUMNS = ("eps", "inf_f", "sup_sigma1", "u_inf_norm", "iterations", "residual")
SUITES = ("maclaurin", "dominance", "chou-wang", "concavity", "barrier")


class _Run:
    """Collects outputs of one invocation and writes them with a manifest."""

    def __init__(self, args, argv, settings: dict):
        self.args = args
        self.argv = ["sigmalab"] + list(argv)
        self.settings = settings
        self.digest = config.config_digest(settings)
        self.seed = getattr(args, "seed", None)
        self.started = io.now()
        self.outdir = io.output_dir(args.outdir, args.command)
        self.outputs = {}

    def path(self, name: str) -> str:
        return os.path.join(self.outdir, name)

    def csv(self, rows, name=None, columns=None):
        name = name or f"{self.args.command}.csv"
        self.outputs[name] = io.write_csv(self.path(name), rows, self.seed, self.digest, columns)

    def json(self, name, obj):
        text = json.dumps(obj, indent=2, sort_keys=True, default=io._json_default) + "\n"
        self.outputs[name] = io.atomic_write(self.path(name), text)

    def fields(self, name, grid, **values):
        self.outputs[name] = io.save_fields(self.path(name), grid, **values)

    def finish(self, code: int, status: str = "ok") -> int:
        io.write_manifest(
            self.path("manifest.json"),
            argv=self.argv,
            digest=self.digest,
            seed=self.seed,
            started=self.started,
            outputs=self.outputs,
            config=self.settings,
            status=status,
            exit_code=code,
        )
        return code

    def say(self, msg: str):
        if not getattr(self.args, "quiet", False):
            print(msg)


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _numbers(text: str) -> list:
    return [_number(t) for t in text.replace(",", " ").split()]


def _settings(args, drop=("outdir", "quiet", "func")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


# ---------------------------------------------------------------------------
# probe-ineq


def _probe_ineq(args, argv):
    run = _Run(args, argv, _settings(args))
    rows = []
    if args.suite == "barrier":
        rng = np.random.default_rng(args.seed)
        for i in range(args.samples):
            p = khessian_torus.BarrierParams(float(rng.uniform(1, 20)), float(rng.uniform(1, 20)), args.gamma)
            chk = khessian_torus.barrier_check(p)
            worst = max(chk[key] for key in khessian_torus.INEQUALITY_KEYS)
            eq = max(chk["phi_equality"], chk["psi_equality"])
            rows.append(
                {"check": "barrier", "draw": i, "alpha": p.alpha, "beta": p.beta, "gamma": p.gamma,
                 "worst_residual": args.tol - max(worst, eq), "inequality_defect": worst,
                 "equality_defect": eq, "combined_slack": chk["combined_slack"],
                 "violations": int(max(worst, eq) > args.tol)}
            )
    elif args.suite == "chou-wang":
        res = symfun.chou_wang_eps(args.delta, args.n, args.k, sample_count=args.samples, seed=args.seed)
        rows.append(
            {"check": "chou_wang", "n": args.n, "k": args.k, "delta": args.delta,
             "samples": res.samples, "eps": res.eps,
             "worst_residual": 0.0 if res.eps is not None else -1.0,
             "violations": 0 if res.eps is not None else 1,
             "restricted_positive": res.restricted_positive}
        )
    else:
        if args.suite == "maclaurin":
            reports = list(symfun.maclaurin_suite(args.n, args.k, args.samples, args.seed).values())
        elif args.suite == "dominance":
            reports = [symfun.dominance_suite(args.eps, args.n, args.k, args.samples, args.seed)]
        else:
            reports = [matcalc.concavity_suite(args.n, args.k, args.samples, args.seed)]
        for r in reports:
            row = r.row()
            row.pop("seed", None)
            rows.append(row)
    run.csv(rows)
    bad = sum(int(r["violations"]) for r in rows)
    for r in rows:
        run.say(f"{r['check']}: worst_residual={float(r['worst_residual']):.3e} violations={r['violations']}")
    return run.finish(EXIT_VIOLATION if bad else EXIT_OK, "violation" if bad else "ok")


# ---------------------------------------------------------------------------
# probe-degenerate


def _family_from_args(args, kind_default=None):
    if args.family:
        spec = config.validate_config(args.family, k=getattr(args, "k", None))
    else:
        if not args.g:
            raise ConfigError("g: give --family FILE or --g EXPR")
        raw = {"domain": args.domain or kind_default, "g": args.g, "even": args.even, "k": getattr(args, "k", None)}
        if getattr(args, "n", None):
            raw["n"] = args.n
        raw = {k: v for k, v in raw.items() if v is not None}
        spec = config.validate_config(raw)
    if getattr(args, "eps", None):
        spec.eps = config.parse_schedule(args.eps)
    if getattr(args, "rule", None):
        spec.rule = config.rule_name(args.rule)
        if spec.k is not None:
            spec.p = config.exponent(spec.k, spec.rule)
    return spec


def _probe_degenerate(args, argv):
    if args.sharpness:
        run = _Run(args, argv, _settings(args))
        betas = config.parse_schedule(args.betas)
        rows = []
        for al in args.alpha:
            scan = degprobe.sharpness_scan(al, betas, res=args.res or 201)
            Ks = [r.K_required for _, r in scan]
            slope = degprobe.loglog_slope(betas, Ks) if min(Ks) > 0 else float("nan")
            for b, r in scan:
                rows.append({"alpha": al, "beta": b, "K_required": r.K_required, "raw_max": r.raw_max,
                             "loglog_slope": slope})
            run.say(f"alpha={al:.6g}: slope={slope:.4f} factor={degprobe.stability_factor(Ks):.4g}")
        run.csv(rows)
        return run.finish(EXIT_OK)
    spec = _family_from_args(args)
    settings = {"family": spec.as_dict(), **_settings(args, ("outdir", "quiet", "func", "family", "g", "eps"))}
    run = _Run(args, argv, settings)
    if spec.domain == "interval":
        iv = spec.interval
        dom = degprobe.ProbeDomain.interval(iv["a"], iv["b"], iv["margin"], args.res or 401)
    elif spec.domain == "torus":
        dom = degprobe.ProbeDomain.torus(spec.n, args.res or 32)
    else:
        if spec.n != 2:
            raise ConfigError("n: degenerate probes on the sphere support n = 2 only")
        dom = degprobe.ProbeDomain.sphere(args.res or 32)
    gfun = spec.evaluate
    rows = degprobe.epsilon_sweep(dom, gfun, spec.eps, args.alpha)
    if args.jk is not None:
        if spec.domain != "torus":
            raise ConfigError("jk: the J probe runs on torus families only")
        for row in rows:
            ft = degprobe.ScalarField.from_function(dom, lambda p, e=row["eps"]: gfun(p) + e)
            row["J_K3"] = khessian_torus.j_lower_bound_probe(ft, args.jk, allow_small_k=True).K_required
    run.csv(rows)
    factors = {key: degprobe.stability_factor([r[key] for r in rows]) for key in rows[0] if key not in ("eps", "inf_h")}
    run.json("stability.json", factors)
    for key, fac in factors.items():
        run.say(f"{key}: factor {fac:.4g}")
    bad = args.max_factor is not None and any(f >= args.max_factor for f in factors.values())
    return run.finish(EXIT_VIOLATION if bad else EXIT_OK, "violation" if bad else "ok")


# ---------------------------------------------------------------------------
# solves


def _rhs(spec_text: str, kind: str, n: int, grid, k: int):
    """``constant`` (``C(n, k)``), a grid file (``.npz`` with field ``f``, or text) or an expression."""
    text = spec_text.strip()
    if text.lower() == "constant":
        return np.full(grid.shape, float(comb(n, k)))
    if text.endswith((".npz", ".txt")):
        data = io.load_fields(text) if text.endswith(".npz") else io.read_field_text(text)
        got = (data["kind"], data["n"], data["res"])
        if got != (kind, n, grid.res):
            raise ConfigError(f"f: grid file {text!r} has kind/n/res {got}, expected {(kind, n, grid.res)}")
        values = data.get("f", data.get("values"))
        if values is None:
            raise ConfigError(f"f: grid file {text!r} has no field 'f'")
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ConfigError(f"f: grid file shape {values.shape} does not match grid {grid.shape}")
        return values
    e = expr.parse(text, kind, n)
    return e(expr.coordinate_env(kind, n, grid.points()))


def _solve_common(run, args, grid, solve, f, u0):
    try:
        u, rep = solve(f, args.k, u0, grid, tol=args.tol, max_iter=args.max_iter)
    except ConvergenceError as exc:
        rec = exc.report.to_record() if exc.report is not None else {"converged": False}
        run.csv([_flat(rec)])
        run.say(f"not converged: {exc}")
        return run.finish(EXIT_SOLVER, "not converged")
    rec = _flat(rep.to_record())
    rec.update(u_min=float(np.min(u)), u_max=float(np.max(u)))
    run.csv([rec])
    run.json("details.json", {"residual_history": rep.residual_history, "extras": rep.extras})
    run.fields("solution.npz", grid, u=u, f=f)
    if args.text:
        run.outputs["solution.txt"] = io.atomic_write(run.path("solution.txt"), io.field_text(grid, u))
    run.say(f"converged in {rep.iterations} steps, residual {rep.residual:.3e}, u in [{rec['u_min']:.12g}, {rec['u_max']:.12g}]")
    return run.finish(EXIT_OK)


def _flat(rec: dict) -> dict:
    out = {}
    for key, v in rec.items():
        if key == "residual_history":
            continue
        if isinstance(v, (list, tuple, np.ndarray, dict)):
            v = json.dumps(v, default=io._json_default)
        out[key] = v
    return out


def _solve_cm(args, argv):
    run = _Run(args, argv, _settings(args))
    if not (1 <= args.k <= args.n):
        raise ConfigError(f"k: need 1 <= k <= {args.n}")
    grid = make_grid(args.n, args.res or (48 if args.n == 2 else 12))
    f = _rhs(args.f, "sphere", args.n, grid, args.k)
    u0 = np.full(grid.shape, args.u0)

    def solve(f, k, u0, grid, **kw):
        return cm_solver.newton_solve(f, k, u0, grid, **kw)

    return _solve_common(run, args, grid, solve, f, u0)


def _solve_torus(args, argv):
    run = _Run(args, argv, _settings(args))
    if not (1 <= args.k <= args.n_c):
        raise ConfigError(f"k: need 1 <= k <= {args.n_c}")
    grid = TorusGrid(args.n_c, args.res or (32 if args.n_c <= 2 else 8))
    f = _rhs(args.f, "torus", args.n_c, grid, args.k)
    u0 = np.zeros(grid.shape)

    def solve(f, k, u0, grid, **kw):
        return khessian_torus.newton_solve(f, k, u0, grid, rescale=not args.no_rescale, **kw)

    return _solve_common(run, args, grid, solve, f, u0)


# ---------------------------------------------------------------------------
# sweeps


def _sweep(args, argv, kind):
    spec = _family_from_args(args, kind)
    if spec.domain != kind:
        raise ConfigError(f"domain: this command needs a {kind} family, got {spec.domain}")
    if spec.k is None:
        raise ConfigError("k: give --k or set k in the family")
    settings = {"family": spec.as_dict(), **_settings(args, ("outdir", "quiet", "func", "family", "g", "eps", "k"))}
    run = _Run(args, argv, settings)
    if kind == "sphere":
        grid = make_grid(spec.n, args.res or spec.res or (32 if spec.n == 2 else 12))
        g = spec.evaluate(grid.points())
        reps, sols = cm_solver.degenerate_sweep(
            g, spec.k, spec.eps, grid, rule=spec.rule_short, tol=args.tol, max_iter=args.max_iter,
            return_solutions=True,
        )
    else:
        grid = TorusGrid(spec.n, args.res or spec.res or (16 if spec.n <= 2 else 8))
        g = spec.evaluate(grid.points())
        reps, sols = khessian_torus.degenerate_sweep(
            g, spec.k, spec.eps, grid, rule=spec.rule_short, tol=args.tol, max_iter=args.max_iter,
            return_solutions=True,
        )
    rows = []
    for r in reps:
        rec = _flat(r.to_record())
        rec["u_inf_norm"] = rec.pop("u_inf")
        rows.append(rec)
    run.csv(rows, columns=list(SWEEP_COLUMNS) + [c for c in rows[0] if c not in SWEEP_COLUMNS])
    run.json("details.json", [{"eps": r.eps, "residual_history": r.residual_history, "message": r.message} for r in reps])
    arrays = {f"u_{i}": s for i, s in enumerate(sols) if s is not None}
    run.fields("solutions.npz", grid, eps=np.array([r.eps for r in reps]), g=g, **arrays)
    ok = [r for r in reps if r.converged]
    factors = {
        "sup_sigma1": degprobe.stability_factor([r.sup_sigma1 for r in ok]) if ok else float("inf"),
        "u_inf": degprobe.stability_factor([r.u_inf for r in ok]) if ok else float("inf"),
    }
    run.json("stability.json", factors)
    for r in reps:
        run.say(f"eps={r.eps:.3e} converged={r.converged} iters={r.iterations} sup_sigma1={r.sup_sigma1:.6g} u_inf={r.u_inf:.6g}")
    run.say(f"stability factors: sup_sigma1 {factors['sup_sigma1']:.4g}, u_inf {factors['u_inf']:.4g}")
    failed = len(ok) < len(reps)
    return run.finish(EXIT_SOLVER if failed else EXIT_OK, "not converged" if failed else "ok")


def _sweep_cm(args, argv):
    return _sweep(args, argv, "sphere")


def _sweep_torus(args, argv):
    return _sweep(args, argv, "torus")


def _spectrum_check(args, argv):
    run = _Run(args, argv, _settings(args))
    grid = make_grid(args.n, args.res or (48 if args.n == 2 else 32))
    rep = cm_solver.spectrum_check(grid, args.tol)
    rows = [{"index": i, "eigenvalue": float(v), "target": rep.target if 1 <= i <= rep.multiplicity else ""}
            for i, v in enumerate(rep.eigenvalues)]
    run.csv(rows)
    summary = {key: getattr(rep, key) for key in
               ("n", "target", "multiplicity", "max_deviation", "kernel_dim", "subspace_angle", "symmetry_defect", "passed", "notes")}
    run.json("details.json", summary)
    run.say(f"multiplicity={rep.multiplicity} max_deviation={rep.max_deviation:.3e} "
            f"subspace_angle={rep.subspace_angle:.3e} passed={rep.passed}")
    return run.finish(EXIT_OK if rep.passed else EXIT_VIOLATION, "ok" if rep.passed else "violation")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sigmalab", description="sigma_k probes, suites and PDE solves")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(sp, seed=False):
        sp.add_argument("--outdir", help="output directory")
        sp.add_argument("--quiet", action="store_true")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("probe-ineq", help="sampled inequality suites")
    sp.add_argument("--suite", choices=SUITES, required=True)
    sp.add_argument("--n", type=int, default=6)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--samples", type=int, default=100000, help="samples (barrier: parameter draws)")
    sp.add_argument("--delta", type=_number, default=0.5, help="chou-wang delta")
    sp.add_argument("--eps", type=_number, default=0.1, help="dominance eps")
    sp.add_argument("--gamma", type=_number, default=0.0, help="barrier gamma")
    sp.add_argument("--tol", type=_number, default=1e-12, help="barrier tolerance")
    common(sp, seed=True)
    sp.set_defaults(func=_probe_ineq)

    def family_opts(sp):
        sp.add_argument("--family", help="family config file")
        sp.add_argument("--g", help="base profile expression (instead of --family)")
        sp.add_argument("--domain", choices=("interval", "torus", "sphere"))
        sp.add_argument("--n", type=int, help="sphere dimension or complex torus dimension")
        sp.add_argument("--even", action="store_true", help="declare g antipodally even")
        sp.add_argument("--eps", help="eps schedule, e.g. 1e-1:1e-6:decade")
        sp.add_argument("--rule", help="exponent rule: paper-C21 or paper-C11")

    sp = sub.add_parser("probe-degenerate", help="eps-uniformity of the gradient quotients")
    family_opts(sp)
    sp.add_argument("--alpha", type=_numbers, default=[1.0 / 3.0], help="exponents, e.g. '1/3,7/15'")
    sp.add_argument("--res", type=int)
    sp.add_argument("--jk", type=int, help="also run the J probe with this k (torus)")
    sp.add_argument("--sharpness", action="store_true", help="run the h_beta sharpness scan instead")
    sp.add_argument("--betas", default="1e-2:1e-6:decade")
    sp.add_argument("--max-factor", type=_number, help="exit 4 when a stability factor reaches this")
    common(sp)
    sp.set_defaults(func=_probe_degenerate)

    def solve_opts(sp):
        sp.add_argument("--k", type=int, required=True)
        sp.add_argument("--res", type=int)
        sp.add_argument("--f", default="constant", help="'constant' or an expression")
        sp.add_argument("--tol", type=_number, default=1e-9)
        sp.add_argument("--max-iter", type=int, default=30)
        sp.add_argument("--text", action="store_true", help="also write solution.txt")
        common(sp)

    sp = sub.add_parser("solve-cm", help="sigma_k(u_ij + u delta_ij) = f on S^n")
    sp.add_argument("--n", type=int, default=2, choices=(2, 3))
    sp.add_argument("--u0", type=_number, default=1.0)
    solve_opts(sp)
    sp.set_defaults(func=_solve_cm)

    sp = sub.add_parser("solve-torus", help="complex k-Hessian equation on the flat torus")
    sp.add_argument("--n-c", type=int, default=2)
    sp.add_argument("--no-rescale", action="store_true")
    solve_opts(sp)
    sp.set_defaults(func=_solve_torus)

    for name, fn, help_ in (("sweep-cm", _sweep_cm, "degenerate continuation on S^n"),
                            ("sweep-torus", _sweep_torus, "degenerate continuation on the torus")):
        sp = sub.add_parser(name, help=help_)
        family_opts(sp)
        sp.add_argument("--k", type=int)
        sp.add_argument("--res", type=int)
        sp.add_argument("--tol", type=_number, default=1e-9)
        sp.add_argument("--max-iter", type=int, default=40)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("spectrum-check", help="kernel of Delta + n on S^n")
    sp.add_argument("--n", type=int, default=2, choices=(2, 3))
    sp.add_argument("--res", type=int)
    sp.add_argument("--tol", type=_number)
    common(sp)
    sp.set_defaults(func=_spectrum_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (ConfigError, CompatibilityError, InadmissibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (io.PersistError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
