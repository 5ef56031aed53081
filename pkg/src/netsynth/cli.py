"""Command-line front end.

Commands::

    netsynth synth SYSTEM [--mode kron,blockdiag,full] [--format structured] [--out FILE]
    netsynth analyze SYSTEM [--gains FILE] [--gamma G]
    netsynth bench [--sizes 4,8,16] [--mode kron,full]
    netsynth export SYSTEM --gamma G --out DIR
    netsynth fixture bipartite6 [--out FILE]

Exit codes: 0 success, 1 I/O or validation error, 2 infeasible, 3 verification
failure (including an unrecoverable slack matrix).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys as _sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import StateSpace, hinf_norm, spectral_abscissa, verify_certificate
from .lmi import assemble_decomposed_efbsp, assemble_dual_efbsp, export_sdpa
from .model import (FIXTURES, ControllerGains, ModelError, PatternGraph, dump_system, expand,
                    load_fixture, load_system, pattern_violations, random_system, validate)
from .slalg import sym_eig
from .synthesis import (InfeasibleError, SingularSlackError, SynthesisOptions, VerificationError,
                        synth_decomposed, synth_full_dual)

__all__ = ["main", "build_parser", "RunConfig", "synth_report", "parse_report", "CSV_COLUMNS",
           "EXIT_OK", "EXIT_IO", "EXIT_INFEASIBLE", "EXIT_VERIFY"]

EXIT_OK, EXIT_IO, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3
CSV_COLUMNS = ("n", "mode", "gamma_certified", "gamma_verified", "seconds")
MODES = ("kron", "blockdiag", "full")
FULL_GUARD = 12


@dataclass
class RunConfig:
    command: str
    system: str | None = None
    modes: tuple = ("kron",)
    options: dict = field(default_factory=dict)
    out: str | None = None
    fmt: str = "human"
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args):
        skip = {"command", "func", "system", "mode", "out", "format"}
        system = getattr(args, "system", None)
        if args.command not in ("fixture", "bench") or system:
            if args.command != "fixture" and not (system or "").startswith("fixture:") \
                    and not Path(system).is_file():
                raise UsageError(f"no such file: {system}")
        return cls(args.command, system,
                   _parse_modes(args.mode) if hasattr(args, "mode") else (),
                   {k: v for k, v in vars(args).items() if k not in skip},
                   getattr(args, "out", None), getattr(args, "format", "human"))


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ reports

def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def synth_report(result, system, mode) -> dict:
    """Plain-JSON report of a SynthesisResult."""
    return {
        "mode": mode,
        "N": system.N,
        "status": result.status,
        "gamma_certified": _num(result.gamma_certified),
        "gamma_verified": _num(result.gamma_verified),
        "K_d": result.gains.K_d.tolist(),
        "K_i": result.gains.K_i.tolist(),
        "spectral_abscissa": _num(result.abscissa),
        "per_eigenvalue": [{"lambda": _num(lam), "margin": _num(m)} for lam, m in result.per_eigenvalue],
        "probes": [{"gamma": _num(p.gamma), "feasible": p.feasible,
                    "margin": None if p.margin is None else _num(p.margin), "status": p.status}
                   for p in result.iterations],
        "monotone": bool(result.iterations.monotone),
        "timings": {k: _num(v) for k, v in result.timings.items()},
    }


def _failure_report(mode, system, status, message, extra=None):
    doc = {"mode": mode, "N": system.N, "status": status, "message": message}
    doc.update(extra or {})
    return doc


def parse_report(text: str):
    """Inverse of the structured output (a JSON list of per-mode reports)."""
    return json.loads(text)


def _human(reports) -> str:
    out = []
    for r in reports:
        out.append(f"[{r['mode']}] N={r['N']} status={r['status']}")
        if "gamma_certified" in r:
            out.append(f"  gamma_certified = {r['gamma_certified']}")
            out.append(f"  gamma_verified  = {r['gamma_verified']}")
            out.append(f"  K_d = {np.array2string(np.array(r['K_d']), precision=6)}")
            out.append(f"  K_i = {np.array2string(np.array(r['K_i']), precision=6)}")
            for e in r.get("per_eigenvalue", []):
                out.append(f"  lambda {e['lambda']:+.6g}: margin {e['margin']:.3e}")
            t = r.get("timings", {})
            if t:
                out.append("  timings: " + ", ".join(f"{k} {v:.3f}s" for k, v in t.items()))
        if "message" in r:
            out.append(f"  {r['message']}")
    return "\n".join(out) + "\n"


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.get(c, "") for c in CSV_COLUMNS])
    return buf.getvalue()


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        _sys.stdout.write(text)


# ------------------------------------------------------------------ helpers

def _load(path):
    if path.startswith("fixture:"):
        return load_fixture(path.split(":", 1)[1])
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "pattern" in doc:
        try:
            bad = pattern_violations(np.asarray(doc["pattern"]))
        except (TypeError, ValueError):
            bad = ["pattern is not a numeric square matrix"]
        if bad:
            raise ModelError("invalid pattern: " + "; ".join(bad))
    sysm = load_system(path, check=False)
    rep = validate(sysm)
    if not rep.ok:
        raise ModelError("invalid system: " + "; ".join(rep.violations))
    return sysm


def _parse_modes(text):
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown mode(s) {bad}; choose from {MODES}")
    return modes


def _options(args) -> SynthesisOptions:
    kw = {}
    if args.gamma_lo is not None:
        kw["gamma_lo"] = args.gamma_lo
    if args.gamma_hi is not None:
        kw["gamma_hi"] = args.gamma_hi
    if args.tol is not None:
        kw["bisect_tol"] = args.tol
    if args.epsilon is not None:
        kw["epsilon"] = args.epsilon
    kw["multiplier_mode"] = args.multiplier
    kw["backend"] = args.backend
    kw["variant"] = args.variant
    kw["use_rho"] = args.rho
    try:
        return SynthesisOptions(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _run_mode(system, mode, opts):
    if mode == "kron":
        return synth_decomposed(system, opts, structure_mode="kron-structured")
    if mode == "blockdiag":
        return synth_decomposed(system, opts, structure_mode="blockdiag-baseline")
    return synth_full_dual(system, opts)


def _synth_one(system, mode, opts):
    """Run one mode; returns (report, exit code)."""
    try:
        res = _run_mode(system, mode, opts)
        return synth_report(res, system, mode), EXIT_OK
    except InfeasibleError as exc:
        return _failure_report(mode, system, "infeasible", str(exc)), EXIT_INFEASIBLE
    except VerificationError as exc:
        doc = synth_report(exc.result, system, mode) if exc.result is not None else \
            _failure_report(mode, system, "verification-failed", str(exc))
        doc["status"] = "verification-failed"
        doc["message"] = str(exc)
        return doc, EXIT_VERIFY
    except SingularSlackError as exc:
        return _failure_report(mode, system, "singular-slack", str(exc)), EXIT_VERIFY


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    system = _load(args.system)
    opts = _options(args)
    modes = _parse_modes(args.mode)
    reports, code = [], EXIT_OK
    for mode in modes:
        if mode == "full" and system.N > FULL_GUARD:
            reports.append(_failure_report(mode, system, "skipped", f"full mode guarded to N ≤ {FULL_GUARD}"))
            continue
        doc, c = _synth_one(system, mode, opts)
        reports.append(doc)
        code = max(code, c)
    if args.format == "structured":
        text = json.dumps(reports, indent=1) + "\n"
    elif args.format == "csv":
        text = _csv([{"n": r["N"], "mode": r["mode"], "gamma_certified": r.get("gamma_certified", ""),
                      "gamma_verified": r.get("gamma_verified", ""),
                      "seconds": r.get("timings", {}).get("total", "")} for r in reports])
    else:
        text = _human(reports)
    _emit(text, args.out)
    return code


def _load_gains(path, dims):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        doc = next((r for r in doc if "K_d" in r), None)
        if doc is None:
            raise ModelError(f"{path}: no gains in report")
    try:
        k = ControllerGains(np.asarray(doc["K_d"], dtype=float), np.asarray(doc["K_i"], dtype=float))
    except KeyError as exc:
        raise ModelError(f"{path}: missing {exc}") from exc
    if k.K_d.shape != (dims.n_u, dims.n):
        raise ModelError(f"{path}: gain shape {k.K_d.shape} does not match ({dims.n_u}, {dims.n})")
    return k


def cmd_analyze(args) -> int:
    system = _load(args.system)
    g = system.pattern
    doc = {"N": system.N}
    code = EXIT_OK
    if args.gains:
        k = _load_gains(args.gains, system.dims)
        gamma = args.gamma if args.gamma is not None else np.inf
        rep = verify_certificate(system, k, gamma, lmi_checks=args.lmi)
        doc.update({"closed_loop": True, **{key: _num(v) if isinstance(v, float) else v
                                              for key, v in rep.as_dict().items()}})
        if args.gamma is not None and not rep.passed:
            code = EXIT_VERIFY
        elif not rep.stable:
            code = EXIT_VERIFY
    else:
        ss = StateSpace(expand(system.A, g), expand(system.B_w, g), expand(system.C_z, g),
                        expand(system.D_zw, g))
        h = hinf_norm(ss)
        doc.update({"closed_loop": False, "hinf": _num(h.norm), "peak_frequency": _num(h.peak_frequency),
                    "abscissa": _num(spectral_abscissa(ss.A)), "stable": h.stable})
    eig = sym_eig(g)
    doc["eigenvalues"] = [{"lambda": _num(v), "multiplicity": m} for v, m in eig.distinct]
    if args.format == "structured":
        text = json.dumps(doc, indent=1) + "\n"
    else:
        text = "\n".join(f"{k}: {v}" for k, v in doc.items()) + "\n"
    _emit(text, args.out)
    return code


def bench_rows(sizes, modes, opts, base_seed=0, n=3, full_guard=FULL_GUARD, system=None):
    """Time synthesis over ring networks replicating one base subsystem."""
    if system is None:
        base = random_system(2, n=n, rng=base_seed)
    else:
        base = system
    rows = []
    for N in sizes:
        s = base.replace(pattern=PatternGraph.ring(N))
        for mode in modes:
            if mode == "full" and N > full_guard:
                rows.append({"n": N, "mode": mode, "gamma_certified": "", "gamma_verified": "",
                             "seconds": "skipped"})
                continue
            t0 = time.perf_counter()
            doc, code = _synth_one(s, mode, opts)
            dt = time.perf_counter() - t0
            rows.append({"n": N, "mode": mode, "gamma_certified": doc.get("gamma_certified", "") if code == 0 else "",
                         "gamma_verified": doc.get("gamma_verified", "") if code == 0 else "",
                         "seconds": round(dt, 6), "status": doc["status"]})
    return rows


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --sizes: {exc}") from exc
    if not sizes or min(sizes) < 2:
        raise UsageError("--sizes must list integers ≥ 2")
    system = _load(args.system) if args.system else None
    rows = bench_rows(sizes, _parse_modes(args.mode), _options(args), args.seed, args.n, system=system)
    if args.format == "structured":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        text = _csv(rows)
    _emit(text, args.out)
    return EXIT_OK


def export_problems(system, gamma, mode="kron", multiplier="all", variant="corrected"):
    """``[(filename, text)]`` SDPA exports, one per distinct eigenvalue (decomposed)."""
    if not gamma > 0:
        raise UsageError("--gamma must be positive")
    mult = {"all": "all", "extremes": "extremes"}[multiplier]
    if mode == "full":
        p = assemble_dual_efbsp(system, gamma, variant=variant)
        return [("full.dat-s", export_sdpa(p, f"full-size problem, gamma={gamma!r}"))]
    struct = "kron" if mode == "kron" else "blockdiag"
    lams = sym_eig(system.pattern).distinct_values
    out = []
    for k, lam in enumerate(lams):
        p = assemble_decomposed_efbsp(system, [lam], gamma, structure=struct, multiplier=mult,
                                      variant=variant)
        out.append((f"lambda_{k}.dat-s", export_sdpa(p, f"lambda={lam!r}, gamma={gamma!r}")))
    return out


def cmd_export(args) -> int:
    system = _load(args.system)
    if args.gamma is None:
        raise UsageError("export needs --gamma")
    mode = _parse_modes(args.mode)[0]
    files = export_problems(system, args.gamma, mode, args.multiplier, args.variant)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in files:
        (outdir / name).write_text(text)
        _sys.stdout.write(str(outdir / name) + "\n")
    return EXIT_OK


def cmd_fixture(args) -> int:
    name = args.system or "bipartite6"
    if name not in FIXTURES:
        raise UsageError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    text = dump_system(load_fixture(name))
    _emit(text, args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    ap = argparse.ArgumentParser(prog="netsynth", description="Distributed H-infinity synthesis "
                                 "for homogeneous interconnected systems.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, system=True, system_required=True):
        if system:
            p.add_argument("system", nargs=None if system_required else "?",
                           help="system JSON file or fixture:NAME")
        p.add_argument("--mode", default="kron", help="comma list of kron, blockdiag, full")
        p.add_argument("--gamma-lo", type=float, default=None)
        p.add_argument("--gamma-hi", type=float, default=None)
        p.add_argument("--tol", type=float, default=None, help="relative bisection tolerance")
        p.add_argument("--epsilon", type=float, default=None, help="LMI strictness")
        p.add_argument("--multiplier", choices=("all", "extremes"), default="all")
        p.add_argument("--variant", choices=("corrected", "printed"), default="corrected")
        p.add_argument("--backend", choices=("auto", "clarabel", "cvxopt"), default="auto")
        p.add_argument("--rho", action="store_true", help="single SDP maximising 1/gamma^2")
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("human", "csv", "structured"), default="human")

    p = sub.add_parser("synth", help="synthesize and verify a controller")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="open- or closed-loop H-infinity analysis")
    common(p)
    p.add_argument("--gains", default=None, help="JSON with K_d and K_i (or a synth report)")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lmi", action="store_true", help="also run the structure-free LMI checks")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="ring-network scaling benchmark (CSV)")
    common(p, system_required=False)
    p.add_argument("--sizes", default="4,8,16")
    p.add_argument("--seed", type=int, default=0, help="seed of the random base subsystem")
    p.add_argument("--n", type=int, default=3, help="subsystem state dimension")
    p.set_defaults(func=cmd_bench, format="csv")

    p = sub.add_parser("export", help="write SDPA files of the synthesis LMIs at a fixed gamma")
    common(p)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("fixture", help="print a bundled system as JSON")
    p.add_argument("system", nargs="?", default="bipartite6", help=f"one of {sorted(FIXTURES)}")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fixture)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        RunConfig.from_args(args)
        return args.func(args)
    except (UsageError, ModelError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _sys.stderr.write(f"netsynth {args.command}: error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
