"""Command-line entry point.

Every subcommand reads its settings from flags and, optionally, a
``key = value`` config file (``--config``); flags win over the file. Curves go
out as CSV with 17 significant digits, scalar reports as JSON. With ``--out``
the file is written atomically next to a ``<out>.meta.json`` sidecar.

Exit codes: 0 success, 1 computation error or failed check suite, 2 usage.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Any, Callable

from . import __version__
from .errors import CapacityError, DomainError, EvaluationError, FitError, PreconditionError


class UsageError(Exception):
    pass


# -- parameter specs -------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # int | float | floats | onoff | choice | str
    default: Any
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()
    help: str = ""
    optional: bool = False  # None is a valid resolved value

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _parse(p: Param, raw: str):
    s = raw.strip()
    if p.optional and s.lower() in ("", "none", "auto"):
        return None
    try:
        if p.kind == "int":
            v = int(s)
        elif p.kind == "float":
            v = float(s)
        elif p.kind == "floats":
            v = [float(x) for x in s.split(",") if x.strip()]
            if not v:
                raise ValueError
        elif p.kind == "onoff":
            if s.lower() not in ("on", "off", "true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return s.lower() in ("on", "true", "1", "yes")
        elif p.kind == "choice":
            if s not in p.choices:
                raise UsageError(f"{p.name}: expected one of {', '.join(p.choices)}, got {s!r}")
            return s
        else:
            return s
    except ValueError:
        raise UsageError(f"{p.name}: cannot parse {raw!r} as {p.kind}") from None
    for x in (v if isinstance(v, list) else [v]):
        if not math.isfinite(x):
            raise UsageError(f"{p.name}: must be finite")
        if p.lo is not None and x < p.lo:
            raise UsageError(f"{p.name}: {x!r} below minimum {p.lo!r}")
        if p.hi is not None and x > p.hi:
            raise UsageError(f"{p.name}: {x!r} above maximum {p.hi!r}")
    return v


N = Param("n", "int", 1, 0, 64, help="number of field components (0 = self-avoiding walk)")
L = Param("L", "int", 2, 2, 64, help="block side")
G0 = Param("g0", "float", 0.04, 0.0, 0.1, help="initial quartic coupling")
Z0 = Param("z0", "float", 0.0, 0.0, 10.0, help="field-strength parameter")
DRIVING = Param("toggle-driving", "onoff", True, help="include the C_{j+1}(0) driving term (on/off)")
JMAX = Param("jmax", "int", None, 1, 2000, optional=True, help="number of RG steps (default: from m2)")
MU_ESC = Param("mu-esc", "float", 1.0, 1e-12, 1e12, help="escape threshold for |mu_j|")
WORKERS = Param("workers", "int", 1, 1, 256, help="worker processes (output does not depend on it)")
GRID = [Param("m2-max", "float", 1e-2, 1e-300, 1.0, help="largest grid m2"),
        Param("m2-min", "float", 1e-16, 1e-300, 1.0, help="smallest grid m2"),
        Param("per-period", "int", 4, 1, 64, help="grid points per factor L^2 in m2")]
PRECISE_ON = Param("precise", "onoff", True, help="extended-precision flow (on/off)")

COMMANDS: dict[str, tuple[str, list[Param]]] = {
    "beta": ("per-scale beta coefficients b_j", [
        L, Param("m2", "float", 1e-4, 0.0, 1e6),
        Param("jmin", "int", 0, 0, 2000), Param("jmax", "int", 20, 0, 2000),
        Param("backend", "choice", "proper-time", choices=("proper-time", "momentum")),
        Param("level", "int", 1, 0, 6, help="momentum quadrature refinement")]),
    "bubble": ("bubble diagram B(m2)", [
        Param("m2", "floats", [1e-4], 1e-300, 1e6, help="comma-separated masses"),
        Param("backend", "choice", "proper-time", choices=("proper-time", "momentum")),
        Param("level", "int", 1, 0, 6)]),
    "flow": ("one trajectory of the second-order flow", [
        N, L, Param("m2", "float", 1e-4, 0.0, 1e6), G0, Param("nu0", "float", 0.0, -1e6, 1e6),
        Z0, DRIVING, JMAX, MU_ESC, Param("escape", "onoff", True, help="stop once |mu_j| > mu-esc"),
        Param("precise", "onoff", False)]),
    "critical": ("critical initial mass by bisection", [
        N, L, Param("m2", "float", 1e-4, 0.0, 1e6), G0, Z0, DRIVING, JMAX, MU_ESC,
        Param("tol", "float", None, 1e-300, 1.0, optional=True, help="bracket width (default: auto)"),
        PRECISE_ON]),
    "chi-curve": ("susceptibility along the critical line", [
        N, L, G0, Z0, DRIVING, MU_ESC, *GRID, PRECISE_ON, WORKERS]),
    "specific-heat": ("specific-heat proxy along the critical line", [
        Param("n", "int", 1, 1, 64), L, G0, Z0, DRIVING, MU_ESC, *GRID, PRECISE_ON, WORKERS]),
    "exponents": ("closed-form log-correction exponents", [N]),
    "polymer-check": ("exhaustive polymer-algebra identities", [
        Param("seed", "int", 0, 0, 2**63 - 1),
        Param("d", "int", None, 1, 3, optional=True, help="single torus dimension (default: standard set)"),
        Param("side-L", "int", 2, 2, 16), Param("side-N", "int", 2, 1, 8)]),
    "mcmc": ("Metropolis susceptibility on a small torus", [
        Param("side", "int", 4, 2, 64), Param("d", "int", 4, 1, 4), Param("n", "int", 1, 1, 16),
        Param("g", "float", 0.0, 0.0, 1e6), Param("nu", "float", 0.5, -1e6, 1e6),
        Param("z", "float", 1.0, 1e-6, 1e6), Param("sweeps", "int", 100_000, 512, 10**9),
        Param("seed", "int", 12345, 0, 2**63 - 1), Param("batches", "int", 32, 16, 4096)]),
    "oracle-suite": ("all independent cross-checks", [
        Param("sweeps", "int", 100_000, 512, 10**9), Param("seed", "int", 12345, 0, 2**63 - 1)]),
}


# -- config resolution -------------------------------------------------------------


def read_config(path: str, params: list[Param]) -> dict:
    """Parse a ``key = value`` file against ``params``; unknown keys are errors."""
    by_key = {p.dest: p for p in params}
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "out":
            out["out"] = val
            continue
        if key not in by_key:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _parse(by_key[key], val)
    return out


def _build_parser():
    ap = argparse.ArgumentParser(prog="phi4rg", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"phi4rg {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subs = {}
    for name, (desc, params) in COMMANDS.items():
        sp = subs[name] = sub.add_parser(name, help=desc, description=desc)
        for p in params:
            sp.add_argument(f"--{p.name}", dest=p.dest, default=None, metavar=p.kind.upper(),
                            help=f"{p.help} [default: {p.default}]".strip())
        sp.add_argument("--config", default=None, help="key = value settings file")
        sp.add_argument("--out", default=None, help="output path (stdout when omitted)")
    return ap, subs


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    params = COMMANDS[command][1]
    cfg = {p.dest: p.default for p in params}
    cfg["out"] = None
    if ns.config:
        cfg.update(read_config(ns.config, params))
    for p in params:
        raw = getattr(ns, p.dest)
        if raw is not None:
            cfg[p.dest] = _parse(p, raw)
    if ns.out is not None:
        cfg["out"] = ns.out
    return cfg


# -- emission ------------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return f"{float(x):.17g}"


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt(v) for v in r) + "\n")
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    try:
        v = float(x)
    except (TypeError, ValueError):
        return str(x)
    # JSON has no inf/nan literals
    return v if math.isfinite(v) else str(v)


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2) + "\n"


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".phi4rg-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, cfg: dict, meta: dict, stdout):
    out = cfg.get("out")
    if out is None:
        stdout.write(text)
        return
    sidecar = out + ".meta.json"
    try:
        _atomic_write(out, text)
        _atomic_write(sidecar, json_text(meta))
    except BaseException:
        for p in (out, sidecar):
            if os.path.exists(p):
                os.unlink(p)
        raise


# -- commands ---------------------------------------------------------------------------


def _flow_config(c: dict, **kw):
    from .flow import FlowConfig
    return FlowConfig(c["n"], c["L"], c["m2"], c["g0"], z0=c["z0"], j_max=c.get("jmax"),
                      mu_esc=c["mu_esc"], driving=c["toggle_driving"], precise=c["precise"], **kw)


def _grid(c: dict):
    from .observables import period_grid
    if c["m2_min"] >= c["m2_max"]:
        raise UsageError("m2-min must be below m2-max")
    return period_grid(c["L"], c["per_period"], c["m2_max"], c["m2_min"])


def cmd_beta(c):
    from .covariance import SCHEDULE_PREFACTOR, beta_coefficient, window_norm_sq
    if c["jmin"] > c["jmax"]:
        raise UsageError("jmin must not exceed jmax")
    if c["backend"] == "momentum" and not c["m2"] > 0:
        raise UsageError("the momentum backend needs m2 > 0")
    rows = []
    for j in range(c["jmin"], c["jmax"] + 1):
        if c["backend"] == "proper-time":
            b = beta_coefficient(j, c["m2"], c["L"])
        else:
            hi = window_norm_sq(j + 1, c["m2"], c["L"], backend="momentum", level=c["level"])
            lo = window_norm_sq(j, c["m2"], c["L"], backend="momentum", level=c["level"])
            b = hi - lo
        rows.append((j, b))
    meta = {"L": c["L"], "m2": c["m2"], "schedule_prefactor": SCHEDULE_PREFACTOR,
            "backend": c["backend"], "level": c["level"]}
    return csv_text(["j", "b_j"], rows), meta, True


def cmd_bubble(c):
    from .covariance import bubble
    rows = [(m2, bubble(m2, backend=c["backend"], level=c["level"]).B) for m2 in c["m2"]]
    return csv_text(["m2", "B"], rows), {"backend": c["backend"], "level": c["level"]}, True


def cmd_flow(c):
    from .flow import run_flow
    cfg = _flow_config(c)
    tr = run_flow(cfg, c["nu0"], escape=c["escape"])
    meta = {"termination": tr.termination, "j_max": cfg.j_max}
    return csv_text(["j", "g", "mu", "nu", "nuprime"], tr.rows()), meta, True


def cmd_critical(c):
    from .flow import find_critical_nu0
    cfg = _flow_config(c)
    cp = find_critical_nu0(cfg, c["tol"])
    rec = cp.as_dict()
    rec.update(n=cfg.n, L=cfg.L, j_max=cfg.j_max, driving=cfg.driving, precise=cfg.precise)
    return json_text(rec), {"j_max": cfg.j_max}, True


def _curve(c):
    from .observables import chi_curve
    return chi_curve(c["n"], c["L"], c["g0"], _grid(c), z0=c["z0"], driving=c["toggle_driving"],
                     precise=c["precise"], mu_esc=c["mu_esc"], workers=c["workers"])


def cmd_chi_curve(c):
    from .observables import effective_exponents
    curve = _curve(c)
    rows = [(p.m2, p.nu0c, p.nu, p.eps, p.chi, p.dchidnu, p.A_eff, p.gamma_eff) for p in curve.points]
    ex = effective_exponents(curve)
    meta = {"nu_c": curve.nu_c, "fit_residual": curve.fit_residual, "route_defect": curve.route_defect,
            "gamma_terminal": ex.gamma_terminal, "gamma_theory": curve.gamma_theory,
            "stride": ex.stride}
    return csv_text(["m2", "nu0c", "nu", "eps", "chi", "dchidnu", "Aeff", "gammaeff"], rows), meta, True


def cmd_specific_heat(c):
    from .observables import specific_heat_proxy, theory_exponents
    sh = specific_heat_proxy(c["n"], c["L"], c["g0"], None, curve=_curve(c))
    rows = zip(sh.m2, sh.eps, sh.cH, sh.exponent_eff)
    th = theory_exponents(c["n"])
    meta = {"exponent_terminal": sh.exponent_terminal, "loglog_drift": sh.loglog_drift,
            "regime": th.cH_regime,
            "exponent_theory": None if th.cH_exponent is None else float(th.cH_exponent)}
    return csv_text(["m2", "eps", "cH", "exponent_eff"], rows), meta, True


def cmd_exponents(c):
    from .observables import theory_exponents
    return json_text(theory_exponents(c["n"]).as_dict()), {}, True


def cmd_polymer_check(c):
    from .lattice import TorusSpec
    from .polymers import identity_suite, top_scale_collapse
    if c["d"] is None:
        tori = [TorusSpec(2, 3, 1), TorusSpec(2, 2, 2)]
    else:
        tori = [TorusSpec(c["side_L"], c["side_N"], c["d"])]
    report = {}
    for t in tori:
        for j in range(t.N):
            try:
                suite = identity_suite(t, j, c["seed"])
            except CapacityError as e:
                suite = {"skipped": {"passed": True, "reason": str(e)}}
            report[f"d={t.d},side={t.side},j={j}"] = suite
        top = top_scale_collapse(t, c["seed"])
        report[f"d={t.d},side={t.side},top-scale-collapse"] = {"passed": top <= 1e-12, "defect": top}
    ok = all(v["passed"] for suite in report.values()
             for v in (suite.values() if "passed" not in suite else [suite]))
    report["passed"] = ok
    return json_text(report), {}, ok


def cmd_mcmc(c):
    from .lattice import TorusSpec
    from .mcmc import mcmc_phi4
    if c["side"] % 2:
        raise UsageError("side must be even")
    if c["side"] ** c["d"] > 4096:
        raise UsageError("at most 4096 sites")
    if c["sweeps"] < c["batches"]:
        raise UsageError("need at least one sweep per batch")
    est = mcmc_phi4(TorusSpec(c["side"], 1, c["d"]), c["n"], c["g"], c["nu"], c["seed"], c["sweeps"],
                    z=c["z"], n_batches=c["batches"])
    return json_text(est.as_dict()), {}, True


def cmd_oracle_suite(c):
    from .oracle import oracle_suite
    rep = oracle_suite(sweeps=c["sweeps"], seed=c["seed"])
    wall = rep.pop("wall_time")
    return json_text(rep), {"suite_wall_time": wall}, bool(rep["passed"])


HANDLERS: dict[str, Callable] = {
    "beta": cmd_beta, "bubble": cmd_bubble, "flow": cmd_flow, "critical": cmd_critical,
    "chi-curve": cmd_chi_curve, "specific-heat": cmd_specific_heat, "exponents": cmd_exponents,
    "polymer-check": cmd_polymer_check, "mcmc": cmd_mcmc, "oracle-suite": cmd_oracle_suite,
}

COMPUTATION_ERRORS = (DomainError, EvaluationError, FitError, PreconditionError, CapacityError,
                      ArithmeticError, ValueError, RuntimeError)


def run_command(argv: list[str] | None = None, *, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser, subs = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    t0 = time.time()
    try:
        cfg = resolve(ns.command, ns)
        text, extra, ok = HANDLERS[ns.command](cfg)
    except UsageError as e:
        stderr.write(subs[ns.command].format_usage())
        print(f"phi4rg {ns.command}: error: {e}", file=stderr)
        return 2
    except COMPUTATION_ERRORS as e:
        print(f"phi4rg {ns.command}: {type(e).__name__}: {e}", file=stderr)
        return 1
    meta = {"version": __version__, "command": ns.command, "config": cfg,
            "wall_time_s": time.time() - t0, **extra}
    try:
        emit(text, cfg, meta, stdout)
    except OSError as e:
        print(f"phi4rg {ns.command}: cannot write output: {e}", file=stderr)
        return 1
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
