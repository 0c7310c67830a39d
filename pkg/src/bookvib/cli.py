"""Command-line front end.

Exit codes: 0 success, 1 config or usage error, 2 numerical failure,
3 property-suite violation (``check`` only).  Every failure is also
written to ``<out>/diagnostics.json``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import fit_rate, form_discrepancy_sweep, quasimode_study, sweep
from .config import RunConfig, parse_config
from .eigen import SPDFactor
from .errors import (BookVibError, CheckFailure, ClassificationFailure, ConfigError,
                     DegenerateQuasimode, NumericalError)
from .report import (DTN_COLUMNS, EIGENVALUE_COLUMNS, QUASIMODE_COLUMNS, SIGMA_D_COLUMNS,
                     SWEEP_COLUMNS, Series, emit_report, read_csv)
from .spectra import (LAMBDA_THETA, SIGMA_THETA, classify_spectrum, discretize, dtn_problem,
                      limit_spectrum_high_m, limit_spectrum_m1, perturbed_spectrum, scan_roots,
                      sigma_d, unperturbed_spectrum)

logger = logging.getLogger("bookvib")

COMMANDS = ("solve", "limit", "dtn-scan", "sigma-d", "sweep", "quasimode", "check", "report")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 1, 2, 3

# pencil -> (mode it is scanned with, dtn_problem keyword arguments)
PENCILS = {
    "neumann": (SIGMA_THETA, {"perturbed": False}),
    "perturbed": (SIGMA_THETA, {"perturbed": True}),
    "limit_m1": (LAMBDA_THETA, {"bulk_mass": True}),
    "limit_high_m": (LAMBDA_THETA, {"bulk_mass": False}),
}


class UsageError(BookVibError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bookvib", description="Spectra of loaded membrane books.")
    p.add_argument("--version", action="version", version=f"bookvib {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--epsilon", type=float, help="band width")
    p.add_argument("--epsilons", help="comma-separated decreasing band widths")
    p.add_argument("--m", type=float, help="mass exponent")
    p.add_argument("--interval", help="scan interval a,b")
    p.add_argument("--mode", choices=(SIGMA_THETA, LAMBDA_THETA))
    p.add_argument("--pencil", choices=tuple(PENCILS))
    p.add_argument("--grid-n", type=int)
    p.add_argument("--n-eig", type=int)
    p.add_argument("--out",
                   help="output directory (default: config, then $BOOKVIB_OUT, then ./out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name} expects comma-separated numbers, got {text!r}") from exc


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    scn = cfg.scenario
    if args.m is not None:
        if args.m < 1:
            raise ConfigError("m must be >= 1", "coefficients.m")
        scn = scn.with_(m=args.m)
    if args.epsilon is not None:
        if not args.epsilon > 0:
            raise ConfigError("epsilon must be positive", "coefficients.epsilon")
        scn = scn.with_(epsilon=args.epsilon)
    if args.n_eig is not None:
        if args.n_eig < 1:
            raise ConfigError("n_eig must be >= 1", "solver.n_eig")
        scn = scn.with_(solver=replace(scn.solver, n_eig=args.n_eig))
    cmds = cfg.commands
    if args.epsilons is not None:
        eps = _floats(args.epsilons, "epsilons")
        cmds["sweep"]["epsilons"] = eps
        cmds["quasimode"]["epsilons"] = eps
    if args.interval is not None:
        iv = _floats(args.interval, "interval")
        if len(iv) != 2 or not iv[1] > iv[0] >= 0:
            raise UsageError("--interval expects a,b with 0 <= a < b")
        cmds["dtn_scan"]["interval"] = iv
    if args.grid_n is not None:
        cmds["dtn_scan"]["grid_n"] = args.grid_n
    if args.pencil is not None:
        cmds["dtn_scan"]["pencil"] = args.pencil
    if args.mode is not None:
        cmds["dtn_scan"]["mode"] = args.mode
        if args.pencil is None and PENCILS[cmds["dtn_scan"]["pencil"]][0] != args.mode:
            if args.mode == SIGMA_THETA:
                pencil = "perturbed" if scn.coefficients.epsilon is not None else "neumann"
            else:
                pencil = "limit_m1" if scn.coefficients.m == 1 else "limit_high_m"
            cmds["dtn_scan"]["pencil"] = pencil
    return replace(cfg, scenario=scn, commands=cmds)


def _need_epsilon(cfg: RunConfig) -> float:
    eps = cfg.scenario.coefficients.epsilon
    if eps is None:
        raise ConfigError("this command needs a band width (--epsilon or coefficients.epsilon)",
                          "coefficients.epsilon")
    return eps


def _eigen_records(spec, cls) -> list[dict]:
    return [{"index": i + 1, "lambda": spec.values[i], "residual": spec.residuals[i],
             "group_id": int(spec.group_ids[i]), "class": cls.tags[i],
             "gamma_trace_norm": cls.trace_norms[i]} for i in range(len(spec))]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    eps = _need_epsilon(cfg)
    scn = cfg.scenario
    n_eig = cfg.commands["solve"].get("n_eig")
    spec = perturbed_spectrum(scn, eps, n_eig=n_eig)
    cls = classify_spectrum(spec, sigma_d(scn, eps, perturbed=True),
                            group_tol=scn.solver.group_tol)
    emit_report(_eigen_records(spec, cls), "csv", out / "eigenvalues.csv", EIGENVALUE_COLUMNS)
    emit_report({"pencil": "perturbed", "epsilon": eps, "m": scn.coefficients.m,
                 "mesh": discretize(scn, eps).mesh.stats(), "clusters": cls.clusters,
                 "violations": cls.violations}, "json", out / "classification.json")
    return EXIT_OK


def cmd_limit(cfg: RunConfig, out: Path) -> int:
    eps = _need_epsilon(cfg)
    scn = cfg.scenario
    opts = cfg.commands["limit"]
    which = opts["which"]
    if which == "auto":
        which = "m1" if scn.coefficients.m == 1 else "high_m"
    if which == "m1":
        spec = limit_spectrum_m1(scn, eps, n_eig=opts.get("n_eig"))
        cls = classify_spectrum(spec, sigma_d(scn, eps), group_tol=scn.solver.group_tol)
        records = _eigen_records(spec, cls)
        violations = cls.violations
    else:
        spec = limit_spectrum_high_m(scn, eps, n_eig=opts.get("n_eig"))
        norms = spec.gamma_trace_norms(discretize(scn, eps).mesh.gamma_dofs)
        records = [{"index": i + 1, "lambda": spec.values[i], "residual": spec.residuals[i],
                    "group_id": int(spec.group_ids[i]), "class": "dtn",
                    "gamma_trace_norm": norms[i]} for i in range(len(spec))]
        violations = []
    emit_report(records, "csv", out / "limit_eigenvalues.csv", EIGENVALUE_COLUMNS)
    emit_report({"pencil": f"limit_{which}", "epsilon": eps, "violations": violations},
                "json", out / "limit_classification.json")
    return EXIT_OK


def cmd_dtn_scan(cfg: RunConfig, out: Path) -> int:
    scn = cfg.scenario
    opts = cfg.commands["dtn_scan"]
    pencil = opts["pencil"]
    mode, kwargs = PENCILS[pencil]
    if opts["mode"] != mode:
        raise ConfigError(f"pencil {pencil!r} is scanned in mode {mode!r}",
                          "commands.dtn_scan.mode")
    eps = _need_epsilon(cfg)
    problem = dtn_problem(scn, mode, eps, **kwargs)
    res = scan_roots(problem, tuple(opts["interval"]), opts["grid_n"], opts["root_tol"])
    emit_report(res.records(), "csv", out / "dtn_scan.csv", DTN_COLUMNS)
    emit_report([{"root": r} for r in res.roots], "csv", out / "dtn_roots.csv", ["root"])
    return EXIT_OK


def cmd_sigma_d(cfg: RunConfig, out: Path) -> int:
    eps = _need_epsilon(cfg)
    rep = sigma_d(cfg.scenario, eps, perturbed=cfg.commands["sigma_d"]["perturbed"])
    emit_report(rep.records(), "csv", out / "sigma_d.csv", SIGMA_D_COLUMNS)
    return EXIT_OK


def _sweep_svg(records: list[dict], out: Path, m: float) -> None:
    series = []
    for j in sorted({int(r["j"]) for r in records}):
        rows = [r for r in records if int(r["j"]) == j]
        x = [float(r["epsilon"]) for r in rows]
        y = [float(r["raw_error"]) for r in rows]
        try:
            fit = fit_rate(x, y)
            series.append(Series(f"j={j}", x, y, fit.slope, fit.constant))
        except BookVibError:
            series.append(Series(f"j={j}", x, y))
    emit_report(series, "svg", out / "sweep.svg", title=f"eigenvalue error, m={m:g}",
                xlabel="epsilon", ylabel="error")


def _quasimode_svg(records: list[dict], out: Path, m: float) -> None:
    x = [float(r["epsilon"]) for r in records]
    y = [float(r["residual"]) for r in records]
    try:
        fit = fit_rate(x, y)
        s = Series("residual", x, y, fit.slope, fit.constant)
    except BookVibError:
        s = Series("residual", x, y)
    emit_report([s], "svg", out / "quasimode.svg", title=f"quasimode residual, m={m:g}",
                xlabel="epsilon", ylabel="error")


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    scn = cfg.scenario
    opts = cfg.commands["sweep"]
    rep = sweep(scn, opts["epsilons"], opts["modes"], track=opts["track"])
    emit_report(rep.records, "csv", out / "sweep.csv", SWEEP_COLUMNS)
    emit_report(rep.rates(), "json", out / "rates.json")
    if cfg.output.get("svg", True):
        _sweep_svg(rep.records, out, scn.coefficients.m)
    if rep.failure:
        raise NumericalError(f"sweep aborted: {rep.failure}")
    return EXIT_OK


def cmd_quasimode(cfg: RunConfig, out: Path) -> int:
    scn = cfg.scenario
    opts = cfg.commands["quasimode"]
    rep = quasimode_study(scn, opts["epsilons"], opts["entry"], opts["eta"], opts["delta0"])
    emit_report(rep.records, "csv", out / "quasimode.csv", QUASIMODE_COLUMNS)
    emit_report({"m": rep.m, "eta": rep.eta, "beta": rep.beta, "lambda_D": rep.lam_D,
                 "J": rep.J, "J_defect": rep.J_defect, "fit": rep.fit.record(),
                 "records": rep.records}, "json", out / "quasimode.json")
    if cfg.output.get("svg", True):
        _quasimode_svg(rep.records, out, scn.coefficients.m)
    return EXIT_OK


def run_checks(cfg: RunConfig) -> list[dict]:
    """Property suite on the configured scenario; one record per property."""
    scn = cfg.scenario
    opts = cfg.check
    eps = scn.coefficients.epsilon or opts["epsilons"][0]
    d = discretize(scn, eps)
    checks = []

    def add(name, value, tol, passed):
        checks.append({"name": name, "value": value, "tolerance": tol, "passed": bool(passed)})

    asym = max(abs(A - A.T).max() if A.nnz else 0.0
               for A in (d.H, d.M_whole, d.M_out, d.M_band, d.M_kappa))
    add("matrix_symmetry", float(asym), opts["symmetry_tol"], asym <= opts["symmetry_tol"])
    try:
        SPDFactor(d.H)
        add("stiffness_spd", 1.0, None, True)
    except NumericalError:
        add("stiffness_spd", 0.0, None, False)

    spec = perturbed_spectrum(scn, eps)
    res = float(spec.residuals.max())
    add("eigen_residual", res, opts["residual_tol"], res <= opts["residual_tol"])
    X = spec.vectors
    orth = float(np.abs(X.T @ (d.M_eps @ X) - np.eye(X.shape[1])).max())
    add("mass_orthonormality", orth, opts["orthonormality_tol"],
        orth <= opts["orthonormality_tol"])
    ascending = bool(np.all(np.diff(spec.values) >= 0))
    add("ascending_order", float(ascending), None, ascending)

    cls = classify_spectrum(spec, sigma_d(scn, eps, perturbed=True),
                            group_tol=scn.solver.group_tol)
    add("classification_violations", float(len(cls.violations)), 0, not cls.violations)

    base = unperturbed_spectrum(scn, eps).values
    lim = limit_spectrum_m1(scn, eps).values
    gap = float(np.max(lim - base))
    add("m1_limit_below_neumann", gap, 0.0, np.all(lim <= base * (1 + 1e-12)))

    hm = limit_spectrum_high_m(scn, eps)
    ev = dtn_problem(scn, LAMBDA_THETA, eps, bulk_mass=False).evaluate(hm.values[0], full=True)
    rel = abs(ev.smallest_eig) / np.abs(ev.gamma_spectrum).max()
    add("schur_route_consistency", float(rel), opts["schur_tol"], rel <= opts["schur_tol"])
    other = limit_spectrum_high_m(scn.with_(m=scn.coefficients.m + 0.5), eps)
    drift = float(np.abs(other.values - hm.values).max())
    add("high_m_limit_independent_of_m", drift, 0.0, drift == 0.0)

    if opts["proposition_samples"] > 0:
        fds = form_discrepancy_sweep(scn, opts["epsilons"], opts["proposition_samples"],
                                     scn.solver.seed)
        for key in ("R1_max", "R2_max"):
            vals = [getattr(f, key) for f in fds]
            growth = max(vals) / vals[0] if vals[0] > 0 else np.inf
            add(f"proposition_{key}_growth", float(growth), opts["proposition_growth"],
                growth <= opts["proposition_growth"])
    return checks


def cmd_check(cfg: RunConfig, out: Path) -> int:
    checks = run_checks(cfg)
    violations = [c["name"] for c in checks if not c["passed"]]
    emit_report({"checks": checks, "violations": violations, "ok": not violations},
                "json", out / "check.json")
    if violations:
        raise CheckFailure(violations)
    return EXIT_OK


def cmd_report(cfg: RunConfig | None, out: Path) -> int:
    done = 0
    m = cfg.scenario.coefficients.m if cfg is not None else 1.0
    if (out / "sweep.csv").exists():
        _sweep_svg(read_csv(out / "sweep.csv"), out, m)
        done += 1
    if (out / "quasimode.csv").exists():
        _quasimode_svg(read_csv(out / "quasimode.csv"), out, m)
        done += 1
    if not done:
        raise UsageError(f"nothing to plot in {out} (run sweep or quasimode first)")
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "limit": cmd_limit, "dtn-scan": cmd_dtn_scan,
            "sigma-d": cmd_sigma_d, "sweep": cmd_sweep, "quasimode": cmd_quasimode,
            "check": cmd_check, "report": cmd_report}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NumericalError, DegenerateQuasimode)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ClassificationFailure, CheckFailure)):
        return EXIT_VIOLATION
    return EXIT_CONFIG


def _write_diagnostics(out: Path | None, command: str | None, exc: BaseException, code: int):
    diag = {"command": command, "error": type(exc).__name__, "message": str(exc),
            "exit_code": code}
    for attr in ("field", "line", "column", "violations", "lam"):
        if getattr(exc, attr, None) is not None:
            diag[attr] = getattr(exc, attr)
    print(f"bookvib: error: {exc}", file=sys.stderr)
    if out is None:
        return
    try:
        emit_report(diag, "json", out / "diagnostics.json")
    except OSError:
        pass


def _fallback_out(argv) -> Path:
    """Output directory for errors raised before the config is read."""
    argv = list(argv)
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if a.startswith("--out="):
            return Path(a.split("=", 1)[1])
    return Path(os.environ.get("BOOKVIB_OUT") or "out")


def run_command(argv) -> int:
    out: Path | None = None
    command = None
    try:
        args = build_parser().parse_args(list(argv))
        command = args.command
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
        cfg = None
        if args.config is not None:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from exc
            cfg = _apply_overrides(parse_config(text), args)
        elif command != "report":
            raise UsageError(f"{command} needs --config")
        out = Path(args.out or (cfg.data["output"].get("dir") if cfg is not None else None)
                   or os.environ.get("BOOKVIB_OUT") or "out")
        out.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[command](cfg, out)
        diag = out / "diagnostics.json"
        if code == EXIT_OK and diag.exists():
            diag.unlink()
        return code
    except (BookVibError, ValueError, OSError) as exc:
        code = _exit_code(exc)
        _write_diagnostics(out or _fallback_out(argv), command, exc, code)
        return code


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
