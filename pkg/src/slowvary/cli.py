"""Command line entry point: ``slowvary <subcommand> CONFIG [--out DIR]``.

Subcommands: psi, heatkernel, bounds, solve, czdiag, report.  Configs are
INI files (see README for the grammar).  Exit status: 0 success, 1 a
certification FAILed, 2 bad config (no files written), 3 numerical failure.
Every run except a config error writes ``summary.json``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import struct
import sys
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SUBCOMMANDS = ("psi", "heatkernel", "bounds", "solve", "czdiag", "report")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config parsing


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


class RunConfig:
    """Validated view of an INI config."""

    def __init__(self, parser: configparser.ConfigParser, source: str):
        self.parser = parser
        self.source = source
        k = self.section("kernel")
        self.family = k.get("family", "stable").strip()
        self.alpha = self._num(k, "alpha", 1.0)
        self.d = int(self._num(k, "d", 1))
        self.n = int(self._num(k, "n", 5))
        self.base = k.get("base", "log").strip()
        self.seed = int(self._num(self.section("run"), "seed", 0))
        self.out = self.section("output").get("dir", "out").strip()
        from .jump_kernels import FAMILIES

        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not 0 < self.alpha < 2:
            raise ConfigError("alpha must lie in (0, 2)")
        if self.d not in (1, 2, 3):
            raise ConfigError("d must be 1, 2 or 3")

    def section(self, name):
        return self.parser[name] if self.parser.has_section(name) else {}

    @staticmethod
    def _num(sec, key, default):
        raw = sec.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} = {raw!r} is not a number") from None

    def num(self, sec_name, key, default):
        return self._num(self.section(sec_name), key, default)

    def ints(self, sec_name, key, default):
        v = self.num(sec_name, key, default)
        if v != int(v):
            raise ConfigError(f"{sec_name}.{key} must be an integer")
        return int(v)

    def list(self, sec_name, key, default):
        raw = self.section(sec_name).get(key)
        if raw is None:
            return list(default)
        try:
            return _floats(raw)
        except ValueError:
            raise ConfigError(f"{sec_name}.{key} must be a list of numbers") from None

    def text(self, sec_name, key, default):
        return self.section(sec_name).get(key, default).strip()

    def kernel_dict(self):
        return {"family": self.family, "alpha": self.alpha, "d": self.d, "n": self.n,
                "base": self.base}


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return RunConfig(parser, str(path))


def _validate(cfg: RunConfig, sub: str):
    """Subcommand-specific checks, all before any computation or file output."""
    if sub == "solve":
        N = cfg.ints("solve", "N", 64)
        if N < 2 or N & (N - 1):
            raise ConfigError("solve.N must be a power of two")
        for key in ("p", "q"):
            v = cfg.num("solve", key, 2.0)
            if not 1 < v < math.inf:
                raise ConfigError(f"solve.{key} must lie in (1, inf)")
        if cfg.ints("solve", "M", 400) < 4:
            raise ConfigError("solve.M must be at least 4")
        if cfg.num("solve", "T", 1.0) <= 0:
            raise ConfigError("solve.T must be positive")
        if cfg.text("solve", "forcing", "single_mode") not in ("single_mode", "random"):
            raise ConfigError("solve.forcing must be single_mode or random")
        if cfg.text("solve", "coefficient", "constant") not in ("constant", "annulus", "time"):
            raise ConfigError("solve.coefficient must be constant, annulus or time")
        if cfg.d != 1:
            raise ConfigError("solve runs in d = 1")
    if sub == "psi":
        lo, hi = cfg.num("psi", "rho_min", 0.1), cfg.num("psi", "rho_max", 100.0)
        if not 0 < lo < hi:
            raise ConfigError("need 0 < psi.rho_min < psi.rho_max")
    if sub in ("heatkernel", "bounds"):
        ts = cfg.list(sub, "times", [0.5, 1.0, 2.0])
        if not ts or min(ts) <= 0:
            raise ConfigError(f"{sub}.times must be positive")
    if sub == "czdiag":
        if cfg.d != 1:
            raise ConfigError("czdiag runs in d = 1")
        N = cfg.ints("czdiag", "N", 128)
        if N < 2 or N & (N - 1):
            raise ConfigError("czdiag.N must be a power of two")


# --------------------------------------------------------------------------
# deterministic writers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_bytes(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _json_bytes(obj):
    return (json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n").encode()


class Artifacts:
    """Collects files in memory; written in one go at the end of a run."""

    def __init__(self):
        self.files = {}

    def csv(self, name, header, rows):
        self.files[name] = _csv_bytes(header, rows)

    def json(self, name, obj):
        self.files[name] = _json_bytes(obj)

    def raw(self, name, blob):
        self.files[name] = blob

    def write(self, outdir):
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        for name, blob in sorted(self.files.items()):
            (out / name).write_bytes(blob)


# --------------------------------------------------------------------------
# subcommands


def _kernel(cfg):
    from .jump_kernels import builtin_kernel

    return builtin_kernel(cfg.family, cfg.alpha, cfg.d, base=cfg.base, n=cfg.n)


def run_psi(cfg, art):
    from .char_exponent import CharExponent, certify_psi_h
    from .scale_functions import ScaleTriple

    k = _kernel(cfg)
    E = CharExponent(k)
    lo, hi = cfg.num("psi", "rho_min", 0.1), cfg.num("psi", "rho_max", 100.0)
    pts = cfg.ints("psi", "points", 31)
    rho = np.geomspace(lo, hi, pts)
    triple = ScaleTriple(k.profile)
    rows = []
    if cfg.text("psi", "include_zero", "yes").lower() in ("yes", "true", "1"):
        rows.append((0.0, 0.0, ""))
    vals = E(rho)
    ratio = vals / triple.h(1.0 / rho)
    rows += [(float(r), float(v), float(q)) for r, v, q in zip(rho, vals, ratio)]
    art.csv("psi.csv", ["rho", "psi", "h_ratio"], rows)
    cert = certify_psi_h(k, exponent=E, triple=triple)
    r = np.logspace(-3, 3, 97)
    ratio = triple.K(r) / (r ** k.d * k(r))
    spread = float(ratio.max() / ratio.min())
    passed = cert.passed and spread < 100
    return passed, {"psi_h_certificate": cert.to_dict(), "K_over_rdj_spread": spread,
                    "rows": len(rows)}


def run_heatkernel(cfg, art):
    from .char_exponent import CharExponent
    from .heat_kernel import HeatKernelField, _envelope

    k = _kernel(cfg)
    H = HeatKernelField(CharExponent(k))
    times = cfg.list("heatkernel", "times", [0.5, 1.0, 2.0])
    x = np.linspace(cfg.num("heatkernel", "x_min", 0.0), cfg.num("heatkernel", "x_max", 20.0),
                    cfg.ints("heatkernel", "points", 64))
    m = cfg.ints("heatkernel", "derivative", 0)
    envs = ("offdiag", "theta", "large_time") if m == 0 else ("LkDm_theta", "LkDm_bounded",
                                                            "LkDm_large_time")
    rows, info = [], []
    for t in times:
        p = H.density(t, x) if m == 0 else H.deriv(m, t, x)
        rec = {"t": t, "xi": H.last_info.xi, "route": H.last_info.route,
               "below_t_min": H.last_info.below_t_min}
        r = np.maximum(x, 1e-12)
        env = [_envelope(name, H, H.triple, t, r, k=0, m=m) for name in envs]
        rows += [(t, float(xx), float(v), *(float(e[i]) if xx > 0 else "" for e in env))
                 for i, (xx, v) in enumerate(zip(x, p))]
        if m == 0 and cfg.text("heatkernel", "mass", "yes").lower() in ("yes", "true", "1"):
            rec["mass_minus_one"] = H.mass(t) - 1.0
        info.append(rec)
    art.csv("heatkernel.csv", ["t", "r", "p" if m == 0 else f"d{m}p"] + [f"env_{e}" for e in envs],
            rows)
    return True, {"t_min": H.t_min, "times": info, "derivative": m}


def run_bounds(cfg, art):
    from .char_exponent import CharExponent
    from .heat_kernel import BOUND_NAMES, HeatKernelField, bound_stability, theta_parameter_sweep
    from .scale_functions import Regime

    k = _kernel(cfg)
    H = HeatKernelField(CharExponent(k))
    times = cfg.list("bounds", "times", [0.5, 1.0, 2.0, 4.0])
    x = np.geomspace(cfg.num("bounds", "x_min", 0.1), cfg.num("bounds", "x_max", 100.0),
                     cfg.ints("bounds", "points", 13))
    kk, mm = cfg.ints("bounds", "k", 1), cfg.ints("bounds", "m", 1)
    b = cfg.num("bounds", "b", 0.0)
    names = cfg.text("bounds", "names", ",".join(BOUND_NAMES)).replace(",", " ").split()
    for name in names:
        if name not in BOUND_NAMES:
            raise ConfigError(f"unknown bound {name!r}")
    rows, recs = [], []
    for name in names:
        k_, m_ = (0, 0) if name in ("offdiag", "theta", "large_time") else (kk, mm)
        st = bound_stability(H, name, times, x, k=k_, m=m_, b=b, triple=H.triple)
        recs.append(st.to_dict() | {"status": "PASS" if st.passed() else "FAIL"})
        rows.append((name, k_, m_, st.sup_coarse, st.sup_fine, st.change, st.finite))
    art.csv("bounds.csv", ["bound", "k", "m", "sup_coarse", "sup_fine", "change", "finite"], rows)
    passed = all(r["status"] == "PASS" for r in recs)
    result = {"bounds": recs}
    if k.profile.regime == Regime.UNBOUNDED_EXP_CONDITION:
        result["theta_sweep"] = theta_parameter_sweep(H, times, x, k=kk, m=mm, b=b)
    return passed, result


def _spacetime_bytes(u):
    head = b"SVST" + struct.pack("<iiid", u.d, u.N, u.times.size, u.period)
    return (head + np.ascontiguousarray(u.times, dtype="<f8").tobytes()
            + np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def run_solve(cfg, art):
    from .char_exponent import CharExponent
    from .nonlocal_operator import annulus_coefficient, time_coefficient
    from .pde_solver import (SpaceTimeField, random_forcing, regularity_constant, residual,
                             solve_constant, solve_time_coeff)

    k = _kernel(cfg)
    E = CharExponent(k)
    N, M = cfg.ints("solve", "N", 64), cfg.ints("solve", "M", 400)
    T, P = cfg.num("solve", "T", 1.0), cfg.num("solve", "period", 1.0)
    p, q = cfg.num("solve", "p", 2.0), cfg.num("solve", "q", 2.0)
    kind = cfg.text("solve", "coefficient", "constant")
    a0, a1 = cfg.num("solve", "a0", 1.0), cfg.num("solve", "a1", 2.0)
    coef = None
    if kind == "annulus":
        coef = annulus_coefficient(a0, a1)
    elif kind == "time":
        coef = time_coefficient(lambda t: a0 + (a1 - a0) * (t > 0.5 * T), a0, a1, "step-in-time")
    times = np.linspace(0.0, T, M + 1)
    forcing = cfg.text("solve", "forcing", "single_mode")
    summary = {"N": N, "M": M, "T": T, "period": P, "coefficient": kind, "forcing": forcing}
    if forcing == "single_mode":
        fn = lambda t, x: math.exp(-t) * np.cos(x / P)
    else:
        fn = random_forcing(np.random.default_rng(cfg.seed), 1, P, max(1, N // 8), 4, T)
    f = SpaceTimeField.from_function(fn, times, 1, N, P)
    u = solve_constant(f, E) if coef is None else solve_time_coeff(f, coef, k, E)
    res = residual(u, f, E, coef=coef, kernel=k)
    summary["residual"] = res.to_dict()
    passed = True
    if forcing == "single_mode" and coef is None:
        lam = float(E(np.array([1.0 / P]))[0])
        xs = f.slice(0).axis(N, P)
        exact = np.cos(xs / P) * (math.exp(-T) - math.exp(-lam * T)) / (lam - 1.0)
        err = float(np.max(np.abs(u.values[-1] - exact)))
        summary["closed_form_error"] = err
        passed = err < cfg.num("solve", "closed_form_tol", 1e-6)
    trials = cfg.ints("solve", "trials", 0)
    if trials:
        rc = regularity_constant(k, E, coef, p=p, q=q, trials=max(trials, 10), N=N,
                                 M=min(M, cfg.ints("solve", "regularity_M", 128)), T=T,
                                 period=P, seed=cfg.seed)
        summary["regularity"] = rc
        passed = passed and rc.get("drift", 0.0) < 0.1
    art.raw("solution.bin", _spacetime_bytes(u))
    xs = f.slice(0).axis(N, P)
    art.csv("solution_final.csv", ["x", "u"], [(float(a), float(b)) for a, b in
                                               zip(xs, u.values[-1])])
    return passed, summary


def run_czdiag(cfg, art):
    from .char_exponent import CharExponent
    from .estimate_harness import bmo_estimate_check, bump_ensemble, fefferman_stein_constant, \
        tail_sweep
    from .heat_kernel import HeatKernelField

    k = _kernel(cfg)
    H = HeatKernelField(CharExponent(k))
    e_lo, e_hi = cfg.ints("czdiag", "b_min_exp", -4), cfg.ints("czdiag", "b_max_exp", 4)
    bs = 2.0 ** np.arange(e_lo, e_hi + 1)
    q1 = tail_sweep(H, "q1", bs=bs)
    q0 = tail_sweep(H, "q0", bs=bs)
    art.csv("q1.csv", ["b", "value", "remainder", "b_times_value"],
            [(r.b, r.value, r.remainder, r.scaled) for r in q1])
    art.csv("q0.csv", ["b", "value", "remainder"], [(r.b, r.value, r.remainder) for r in q0])
    ens = bump_ensemble(cfg.ints("czdiag", "ensemble", 10), seed=cfg.seed)
    N, nt = cfg.ints("czdiag", "N", 128), cfg.ints("czdiag", "nt", 256)
    bmo = bmo_estimate_check(H, ens, N=N, nt=nt)
    art.csv("bmo.csv", ["index", "ratio", "ratio_refined"],
            [(i, a, b) for i, (a, b) in enumerate(zip(bmo["ratios"], bmo["ratios_refined"]))])
    fs = fefferman_stein_constant(H, ens, N=N, nt=nt)
    s1 = [r.scaled for r in q1]
    s0 = [r.scaled for r in q0]
    checks = {"q1_spread": max(s1) / min(s1), "q0_spread": max(s0) / min(s0),
              "bmo_drift": bmo["drift"]}
    passed = checks["q1_spread"] < 2 and checks["q0_spread"] < 2 and bmo["drift"] < 0.1
    return passed, {"q1_sweep": [r.to_dict() for r in q1], "q0_sweep": [r.to_dict() for r in q0],
                    "bmo_ratios": bmo, "fs_constants": fs, "checks": checks}


def run_report(summary_path, art):
    """Render every list of records in a summary JSON as a CSV table."""
    try:
        data = json.loads(Path(summary_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read summary: {exc}") from None
    tables = 0

    def walk(obj, prefix):
        nonlocal tables
        if isinstance(obj, dict):
            for key in sorted(obj):
                walk(obj[key], f"{prefix}_{key}" if prefix else key)
        elif isinstance(obj, list) and obj and all(isinstance(v, dict) for v in obj):
            cols = sorted({c for v in obj for c in v if not isinstance(v[c], (dict, list))})
            art.csv(f"{prefix}.csv", cols, [[row.get(c, "") for c in cols] for row in obj])
            tables += 1

    walk(data.get("result", data), "")
    scalars = sorted((k, v) for k, v in _flatten(data).items())
    art.csv("scalars.csv", ["key", "value"], scalars)
    return True, {"source": str(summary_path), "tables": tables}


def _flatten(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
    elif not isinstance(obj, list):
        out[prefix] = obj
    return out


RUNNERS = {"psi": run_psi, "heatkernel": run_heatkernel, "bounds": run_bounds,
           "solve": run_solve, "czdiag": run_czdiag}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="slowvary", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("config", help="INI config (for report: a summary.json)")
    ap.add_argument("--out", help="output directory (overrides the config and SLOWVARY_OUTPUT_DIR)")
    args = ap.parse_args(argv)

    from .quadrature import QuadratureError
    from .estimate_harness import EpsilonLimitError, RemainderTooLargeError
    from .heat_kernel import MissingCertificateError, TimeTooSmallError

    art = Artifacts()
    if args.subcommand == "report":
        outdir = args.out or os.environ.get("SLOWVARY_OUTPUT_DIR") or str(Path(args.config).parent)
        try:
            ok, result = run_report(args.config, art)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        art.write(outdir)
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        _validate(cfg, args.subcommand)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = args.out or os.environ.get("SLOWVARY_OUTPUT_DIR") or cfg.out
    summary = {"schema_version": SCHEMA_VERSION, "subcommand": args.subcommand,
               "kernel": cfg.kernel_dict(), "seed": cfg.seed}
    try:
        ok, result = RUNNERS[args.subcommand](cfg, art)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, TimeTooSmallError, MissingCertificateError, EpsilonLimitError,
            RemainderTooLargeError, ArithmeticError) as exc:
        summary.update(status="error", error=f"{type(exc).__name__}: {exc}")
        art.files.clear()
        art.json("summary.json", summary)
        art.write(outdir)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary.update(status="PASS" if ok else "FAIL", result=result)
    art.json("summary.json", summary)
    art.write(outdir)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
