"""Command line tools: solve, converge, diagnose, certify.

    parastep converge --config run.cfg --out results/
    parastep diagnose --problem heat_sine --h-list 0.0625 --strict
    parastep certify results/certificates.txt --problem heat_sine

Exit codes: 0 on success, 1 on error (bad usage, unreadable or malformed
config -- config problems carry ``file:line``), 2 when ``--strict`` is set
and a checked property fails.

Thread pinning: ``PARASTEP_THREADS`` is applied to the BLAS/OpenMP pool
variables before numpy loads (see the package ``__init__``), which is the
reliable route.  ``--threads`` sets the same variables from inside the
process -- too late for a pool that already spun up, so it is best effort
plus ``threadpoolctl`` when that package happens to be installed.

Single-mesh commands (solve, diagnose) use the first entry of the h list;
pass ``--h-list 0.03125`` to pick a specific spacing.  ``certify`` expects a
file of certificate rows as written by ``diagnose`` (certificates.txt).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

from .config import ProblemConfig
from .errors import ConfigError, ParastepError

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _apply_threads(threads: int | None):
    if threads is None:
        raw = os.environ.get("PARASTEP_THREADS")
        if not raw:
            return
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"PARASTEP_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {threads}")
    os.environ["PARASTEP_THREADS"] = str(threads)
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(threads)
    except ImportError:
        pass


def _bool_text(flag) -> str:
    return "true" if flag else "false"


def _parse_h_arg(text: str) -> list:
    try:
        vals = [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--h-list expects comma separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--h-list is empty")
    return vals


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value run configuration file")
    common.add_argument("--out", metavar="DIR", help="directory for reports and grids (default .)")
    common.add_argument(
        "--strict",
        action="store_true",
        default=None,
        help="exit 2 when a checked property fails",
    )
    common.add_argument("--seed", type=int, metavar="INT", help="sampler seed (recorded in headers)")
    common.add_argument(
        "--threads",
        type=int,
        metavar="INT",
        help="pin BLAS/OpenMP threads (PARASTEP_THREADS is the env fallback)",
    )
    common.add_argument(
        "--h-list",
        dest="h_list",
        metavar="LIST",
        help="comma separated mesh spacings, coarsest first",
    )
    common.add_argument(
        "--scheme",
        metavar="KIND",
        help="operator family when no built-in problem is named: linear, pucci_plus, pucci_minus",
    )
    common.add_argument("--stencil-N", dest="stencil_N", type=int, metavar="INT", help="stencil width")
    common.add_argument("--problem", metavar="NAME", help="built-in exact-solution id")
    common.add_argument("--T", type=float, metavar="TIME", help="final time")
    common.add_argument("--method", metavar="NAME", help="solver: auto, picard or howard")
    common.add_argument(
        "--dump-tables",
        action="store_true",
        help="also write scheme_tables.txt (coefficient tables for audit)",
    )

    parser = _Parser(prog="parastep", description="monotone parabolic schemes and their verification tools")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("solve", parents=[common], help="solve one mesh and write the grid")
    sub.add_parser("converge", parents=[common], help="mesh sweep, rate fit, convergence.csv")
    sub.add_parser("diagnose", parents=[common], help="falsifier and property checks, diagnostics.txt")
    cert = sub.add_parser("certify", parents=[common], help="replay violation certificates")
    cert.add_argument("certificates", metavar="CERTFILE", help="certificate rows from diagnose")
    return parser


def _resolved_config(args) -> ProblemConfig:
    cfg = ProblemConfig.from_file(args.config) if args.config else ProblemConfig()
    return cfg.with_overrides(
        seed=args.seed,
        strict=args.strict,
        out=args.out,
        h_list=_parse_h_arg(args.h_list) if args.h_list else None,
        scheme_kind=args.scheme,
        N=args.stencil_N,
        problem=args.problem,
        T=args.T,
        method=args.method,
    )


def _outdir(cfg: ProblemConfig) -> Path:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _label(cfg: ProblemConfig) -> str:
    return cfg.problem or cfg.scheme_kind or "grid"


def _single_mesh(cfg: ProblemConfig, solve_grid_boundary: bool):
    """The mesh function a single-mesh command works on.

    With ``boundary.file`` and no built-in problem the stored grid either
    seeds a fresh solve (solve command) or is taken as-is (diagnose,
    certify).  Otherwise the named problem is solved on the first h.
    Returns (u, solve report or None, exact callable or None).
    """
    from .geometry import MeshFunction, MeshSpec
    from .scheme import build_monotone_scheme
    from .solver import solve

    descriptor = cfg.descriptor()
    scheme = build_monotone_scheme(descriptor, N=cfg.N)
    if cfg.boundary_file is not None and cfg.problem is None:
        grid = MeshFunction.read_text(cfg.boundary_file)
        if not solve_grid_boundary:
            return grid, None, None
        u, report = solve(
            scheme, grid.spec, grid, method=cfg.method, tol=cfg.tol,
            max_iterations=cfg.max_iterations,
        )
        return u, report, None
    from .harness import get_problem

    if cfg.problem is None:
        raise ConfigError("this command needs problem = <name> or boundary.file = <grid>")
    sol = get_problem(cfg.problem)
    spec = MeshSpec(h=cfg.h_list[0], bounds=cfg.bounds(), T=cfg.T, N=cfg.N)
    u, report = solve(
        scheme, spec, sol.fn, method=cfg.method, tol=cfg.tol,
        max_iterations=cfg.max_iterations,
    )
    return u, report, sol.fn


def _maybe_dump_tables(cfg: ProblemConfig, args, outdir: Path, lines: list):
    if not getattr(args, "dump_tables", False):
        return
    from .scheme import build_monotone_scheme, scheme_tables_text

    path = outdir / "scheme_tables.txt"
    path.write_text(scheme_tables_text(build_monotone_scheme(cfg.descriptor(), N=cfg.N)))
    lines.append(f"# wrote {path}")


def _cmd_solve(cfg: ProblemConfig, args) -> int:
    import numpy as np

    u, report, exact = _single_mesh(cfg, solve_grid_boundary=True)
    outdir = _outdir(cfg)
    spec = u.spec
    path = outdir / f"solution_{_label(cfg)}_h{spec.h!r}.txt"
    u.write_text(path)
    lines = [
        "# parastep solve",
        f"# problem={_label(cfg)} n={spec.n} h={spec.h!r} N={spec.N} T={spec.T!r}"
        f" method={cfg.method} seed={cfg.seed}",
    ]
    if report is not None:
        lines.append(
            f"# iterations={report.total_iterations()} max_residual={report.max_residual!r}"
        )
    if exact is not None:
        from .geometry import MeshFunction

        err = float(np.max(np.abs(u.values - MeshFunction.from_callable(spec, exact).values)))
        lines.append(f"# sup_error={err!r}")
    lines.append(f"# wrote {path}")
    _maybe_dump_tables(cfg, args, outdir, lines)
    print("\n".join(lines))
    return 0


def _cmd_converge(cfg: ProblemConfig, args) -> int:
    if cfg.problem is None:
        raise ConfigError("converge needs problem = <built-in id> (errors require an exact solution)")
    from .harness import run_convergence_study

    study = run_convergence_study(
        cfg.problem, cfg.h_list, T=cfg.T, N=cfg.N, method=cfg.method, seed=cfg.seed
    )
    outdir = _outdir(cfg)
    path = outdir / "convergence.csv"
    study.write_csv(path)

    problems = []
    for e_coarse, e_fine in zip(study.sup_errors, study.sup_errors[1:]):
        if not e_fine < e_coarse:
            problems.append(f"sup errors not strictly decreasing ({e_coarse!r} -> {e_fine!r})")
    if not all(map(math.isfinite, study.sup_errors)):
        problems.append("non-finite sup error")
    if len(study.sup_errors) > 1 and not study.fitted_rate >= cfg.rate_floor:
        problems.append(f"fitted rate {study.fitted_rate!r} below floor {cfg.rate_floor!r}")

    out = study.to_csv() + f"# wrote {path}"
    lines = [out]
    _maybe_dump_tables(cfg, args, outdir, lines)
    for p in problems:
        lines.append(f"# property violation: {p}")
    print("\n".join(lines))
    if problems and cfg.strict:
        return 2
    return 0


def _centered_kbox(spec):
    """Largest calibrated box centered in space whose top touches T."""
    from .geometry import KBox

    n = spec.n
    half = min((hi - lo) / 2.0 for lo, hi in spec.bounds)
    r = min(9.0 * math.sqrt(n) * half, math.sqrt(81.0 * n * spec.T))
    center = tuple((lo + hi) / 2.0 for lo, hi in spec.bounds)
    t0 = max(0.0, spec.T - r * r / (81.0 * n))
    return KBox((center, t0), r)


def _format_diagnostics(cfg: ProblemConfig, spec, report: dict) -> str:
    lines = [
        "# parastep diagnostics",
        f"# problem={_label(cfg)} n={spec.n} h={spec.h!r} N={spec.N} T={spec.T!r} seed={cfg.seed}",
        f"# delta={report['delta']!r} samples={cfg.samples}",
    ]
    fal = report["falsifier"]
    for side in ("super", "sub"):
        lines.append(f"falsifier {side} violations={fal[side]['violations']}")
    lines.append(f"falsifier clean={_bool_text(fal['clean'])}")
    for side in ("super", "sub"):
        lines.extend(fal[side]["certificates"])
    if "convolution" in report:
        conv = report["convolution"]
        lines.append(
            f"convolution theta={conv['theta']!r} eta={conv['eta']!r}"
            f" omega={conv['omega']!r} passed={_bool_text(conv['passed'])}"
        )
        for name, chk in conv["checks"].items():
            lines.append(
                f"convolution check {name} passed={_bool_text(chk['passed'])}"
                f" worst={chk['worst']!r} bound={chk['bound']!r}"
            )
    if "good_set" in report:
        gs = report["good_set"]
        lines.append(
            f"good_set nodes={gs['node_count']} slope={float(gs['slope'])!r}"
            f" slope_ci={float(gs['slope_ci'][0])!r},{float(gs['slope_ci'][1])!r}"
        )
        for M, frac, meas in zip(gs["M_values"], gs["bad_fraction"], gs["bad_measure"]):
            lines.append(
                f"good_set M={float(M)!r} bad_fraction={float(frac)!r}"
                f" bad_measure={float(meas)!r}"
            )
    if "abp" in report:
        abp = report["abp"]
        lines.append(
            f"abp ratio={float(abp['ratio'])!r} lhs={float(abp['lhs'])!r}"
            f" rhs_core={float(abp['rhs_core'])!r} K={float(abp['K'])!r}"
            f" rho={float(abp['rho'])!r} contact_count={abp['contact_count']}"
        )
    return "\n".join(lines) + "\n"


def _cmd_diagnose(cfg: ProblemConfig, args) -> int:
    from .diagnostics import FalsifierConfig
    from .harness import run_diagnostics

    u, _, _ = _single_mesh(cfg, solve_grid_boundary=False)
    spec = u.spec
    delta = None if cfg.delta_multiple is None else cfg.delta_multiple * spec.h
    fcfg = FalsifierConfig(samples=cfg.samples, seed=cfg.seed)
    kbox = _centered_kbox(spec) if cfg.M_values is not None else None
    report = run_diagnostics(
        u,
        cfg.descriptor(),
        delta=delta,
        falsifier_config=fcfg,
        theta=cfg.theta,
        M_values=cfg.M_values,
        kbox=kbox,
        abp=cfg.abp,
    )

    outdir = _outdir(cfg)
    text = _format_diagnostics(cfg, spec, report)
    (outdir / "diagnostics.txt").write_text(text)
    rows = report["falsifier"]["super"]["certificates"] + report["falsifier"]["sub"]["certificates"]
    (outdir / "certificates.txt").write_text("".join(r + "\n" for r in rows))

    violated = not report["falsifier"]["clean"]
    if "convolution" in report:
        violated = violated or not report["convolution"]["passed"]
    if "abp" in report:
        violated = violated or not math.isfinite(report["abp"]["ratio"])
    lines = [text + f"# wrote {outdir / 'diagnostics.txt'} and {outdir / 'certificates.txt'}"]
    _maybe_dump_tables(cfg, args, outdir, lines)
    if violated:
        lines.append("# property violation: see certificate rows / failed checks above")
    print("\n".join(lines))
    if violated and cfg.strict:
        return 2
    return 0


def _cmd_certify(cfg: ProblemConfig, args) -> int:
    from .diagnostics import replay_violation, row_to_certificate
    from .errors import DiagnosticsError

    path = Path(args.certificates)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read certificates {path}: {exc.strerror or exc}") from None
    certs = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            certs.append((lineno, row_to_certificate(line)))
        except DiagnosticsError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None

    u, _, _ = _single_mesh(cfg, solve_grid_boundary=False)
    descriptor = cfg.descriptor()
    lines = [
        "# parastep certify",
        f"# problem={_label(cfg)} h={u.spec.h!r} N={u.spec.N} seed={cfg.seed}"
        f" certificates={len(certs)}",
    ]
    failed = 0
    for lineno, cert in certs:
        rep = replay_violation(cert, u, descriptor)
        ok = rep["valid"]
        if not ok:
            failed += 1
            why = "not touching" if not rep["touching"] else "margin mismatch"
            lines.append(f"certificate line {lineno}: FAILED ({why})")
        else:
            lines.append(
                f"certificate line {lineno}: ok side={cert.side}"
                f" margin={rep['margin']!r} touch_gap={rep['touch_gap']!r}"
            )
    lines.append(f"# replayed {len(certs) - failed}/{len(certs)} certificates")
    if failed:
        lines.append(f"# property violation: {failed} certificate(s) failed to replay")
    print("\n".join(lines))
    if failed and cfg.strict:
        return 2
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "converge": _cmd_converge,
    "diagnose": _cmd_diagnose,
    "certify": _cmd_certify,
}


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        code = exc.code
        return code if isinstance(code, int) else 0
    try:
        _apply_threads(args.threads)
        cfg = _resolved_config(args)
        return _COMMANDS[args.command](cfg, args)
    except ParastepError as exc:
        print(f"parastep: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"parastep: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
