"""Command-line runner: validate configs, simulate screen intensities, analyze periods."""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import random
import sys
import time
from dataclasses import replace
from pathlib import Path

import gmpy2
from gmpy2 import mpfr
import mpmath
import numpy as np
import scipy

from . import __version__
from .analysis import (DEFAULT_LATTICE_TOL, DEFAULT_WINDOW, LatticeMapError, add_noise, b_values,
                       crb_curve, estimate_period, ifft_scan, period_model, sda_errors, sigma_from_snr,
                       theorem1_check, trivial_regime_bound)
from .config import (ConfigError, ConfigParseError, ConfigValidationError, NoiseModel, parse_config_text,
                     validate_setup)
from .exotic import PathCapExceeded, count_exotic, exotic_screen_intensity
from .intensity import IntensityRangeError, enumerate_paths, path_amplitude, read_samples_csv
from .numerics import PrecisionPolicy, format_real, policy_from_env, relative_difference, to_real
from .oracle import QuadratureSpec, quadrature_amplitudes
from .propagator import DegenerateGeometryError, NonNormalizableError, coupling_for

EXIT_OK, EXIT_INVARIANT, EXIT_IO, EXIT_CAP = 0, 1, 2, 3


class Manifest:
    def __init__(self, command: str, out: Path):
        self.command = command
        self.out = out
        self.stages = {}
        self.outputs = []
        self.config_digest = None
        self.config_path = None
        self.digits = None

    def load_config(self, path: str) -> bytes:
        data = Path(path).read_bytes()
        self.config_digest = hashlib.sha256(data).hexdigest()
        self.config_path = str(path)
        return data

    def stage(self, name):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                manifest.stages[name] = round(time.perf_counter() - self.t, 6)

        return _Timer()

    def write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text, encoding="utf-8")
        self.outputs.append(name)

    def finish(self):
        doc = {
            "command": self.command,
            "config_path": self.config_path,
            "config_sha256": self.config_digest,
            "precision_digits": self.digits,
            "versions": {
                "qpc": __version__, "python": platform.python_version(), "gmpy2": gmpy2.version(),
                "mpmath": mpmath.__version__, "numpy": np.__version__, "scipy": scipy.__version__,
            },
            "stage_seconds": self.stages,
            "outputs": sorted(self.outputs),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load(args, manifest: Manifest | None = None):
    """Parse and validate --config; returns (consts, geom, exp, policy)."""
    data = manifest.load_config(args.config) if manifest else Path(args.config).read_bytes()
    consts, geom, exp = parse_config_text(data.decode("utf-8"))
    report = validate_setup(consts, geom, exp)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        raise ConfigValidationError(report.errors)
    policy = policy_from_env(exp.precision)
    if getattr(args, "digits", None):
        policy = PrecisionPolicy(args.digits, policy.escalation_factor)
    if manifest:
        manifest.digits = policy.decimal_digits
    return consts, geom, exp, policy


def _float(x):
    return None if x is None else float(x)


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    try:
        consts, geom, exp = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    report = validate_setup(consts, geom, exp)
    for v in report.errors:
        print(f"violation: {v}")
    for v in report.warnings:
        print(f"warning: {v}")
    if report.ok:
        print(f"ok: N = {geom.n_planes}, slits per plane {list(geom.slits_per_plane)}, "
              f"{geom.path_count} classical paths")
        return EXIT_OK
    return EXIT_INVARIANT


def cmd_simulate(args) -> int:
    out = Path(args.out)
    man = Manifest("simulate", out)
    consts, geom, exp, policy = _load(args, man)
    k_min = exp.k_min if args.k_min is None else args.k_min
    k_max = exp.k_max if args.k_max is None else args.k_max
    if k_min > k_max:
        raise ConfigValidationError([])
    order = exp.exotic_order if args.exotic is None else args.exotic
    cap = args.path_cap or exp.path_cap
    counts = count_exotic(geom, order)
    if counts.sensor_total > cap:
        raise PathCapExceeded(f"{counts.sensor_total} sensor paths exceed the cap of {cap} (use --path-cap)")
    with policy.context():
        with man.stage("coupling"):
            coupling = coupling_for(geom, consts)
        with man.stage("intensity"):
            samples = exotic_screen_intensity(coupling, geom, consts, order, range(k_min, k_max + 1),
                                              exp.sampling_interval, cap, args.workers, exp.spread_source)
        if args.exotic is None and order == 0:
            samples = replace(samples, exotic_order=None)
        man.write("intensity.csv", samples.to_csv())
        noise = exp.noise
        if args.noise_snr is not None:
            noise = NoiseModel(snr_db=args.noise_snr, seed=args.seed if args.seed is not None else exp.rng_seed)
        elif noise is not None and args.seed is not None:
            noise = replace(noise, seed=args.seed)
        if noise is not None:
            with man.stage("noise"):
                noisy = add_noise(samples, noise)
            man.write("intensity_noisy.csv", noisy.to_csv())
    man.finish()
    print(f"wrote {len(samples)} samples over {samples.path_count} paths to {out / 'intensity.csv'}")
    return EXIT_OK


def _read_intensity(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    try:
        ks, rescaled, _ = read_samples_csv(text)
    except (ValueError, KeyError) as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    if ks[0] != 0 or ks != list(range(len(ks))):
        raise ConfigParseError(f"{path}: samples must cover k = 0, 1, 2, ... consecutively")
    return rescaled


def _r_csv(est) -> str:
    lines = ["M,R,degenerate"]
    for M, R in zip(est.r_M, est.r_values):
        lines.append(f"{M},{format_real(R, 20) if gmpy2.is_finite(R) else 'inf'},{int(not gmpy2.is_finite(R))}")
    return "\n".join(lines) + "\n"


def _eps_csv(curve) -> str:
    lines = ["M,eps_mean,eps_max,eps_min"]
    for M, a, b, c in zip(curve.M, curve.eps_mean, curve.eps_max, curve.eps_min):
        lines.append(f"{M},{format_real(a, 20)},{format_real(b, 20)},{format_real(c, 20)}")
    return "\n".join(lines) + "\n"


def _theorem_doc(rep):
    return {
        "k_tilde": rep.k_tilde, "lattice_ok": rep.lattice_ok, "condition2a": rep.condition2a,
        "condition2a_strict": rep.condition2a_strict, "condition2b": rep.condition2b,
        "condition2b_as_stated": rep.condition2b_as_stated, "conclusion_asserted": rep.conclusion_asserted,
        "conclusion_holds": rep.conclusion_holds, "violations": list(rep.violations),
    }


def cmd_analyze(args) -> int:
    out = Path(args.out)
    man = Manifest("analyze", out)
    policy = policy_from_env(PrecisionPolicy(args.digits) if args.digits else None)
    coupling = paths = b = consts = geom = exp = None
    if args.config:
        consts, geom, exp, policy = _load(args, man)
    man.digits = policy.decimal_digits
    with policy.context():
        samples = _read_intensity(args.intensity)
        if args.config:
            with man.stage("coupling"):
                coupling = coupling_for(geom, consts)
                paths = list(enumerate_paths(geom))
                d = exp.d_override or coupling.d_vec
                b = b_values([to_real(v) for v in d], paths, exp.sampling_interval)
        with man.stage("scan"):
            est = estimate_period(samples, args.m_max, prominence=args.prominence, b=b,
                                  window=args.window, tol=args.tol)
        doc = {
            "m_max": args.m_max,
            "prominence": args.prominence,
            "prominence_note": "peaks below this prominence are not reported; no calibrated threshold exists",
            "degenerate": est.degenerate,
            "candidates": [{"M": c.M, "R": c.R, "refined_M": c.refined, "lattice_ok": c.lattice_ok,
                            "eps_mean": c.eps_mean, "eps_max": c.eps_max} for c in est.candidates],
            "top_candidate": est.top,
            "intensity_local_maxima": est.intensity_maxima,
        }
        man.write("r_curve.csv", _r_csv(est))
        if est.sda is not None:
            man.write("eps_curve.csv", _eps_csv(est.sda))
        if args.k_tilde:
            if coupling is None:
                raise ConfigParseError("--k-tilde needs --config to build the period model")
            try:
                model = period_model(coupling, paths, exp.sampling_interval, args.k_tilde, args.tol,
                                     d_vec=[to_real(v) for v in (exp.d_override or coupling.d_vec)])
            except LatticeMapError as exc:
                doc["hypothesis"] = {"k_tilde": args.k_tilde, "lattice_ok": False, "error": str(exc)}
            else:
                with man.stage("theorem1"):
                    rep = theorem1_check(model, samples)
                with man.stage("gamma"):
                    entry = ifft_scan(samples, args.k_tilde, model)
                doc["hypothesis"] = {"k_tilde": args.k_tilde, "lattice_ok": True,
                                     "gamma_identity_error": _float(entry.identity_error),
                                     "R_at_k_tilde": _float(entry.R)}
                doc["theorem1"] = _theorem_doc(rep)
    man.write("report.json", _dump(doc))
    man.finish()
    print(_dump({k: doc[k] for k in ("degenerate", "top_candidate", "candidates")}), end="")
    return EXIT_OK


def _read_b_file(path):
    vals = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().strip(",")
        if not line:
            continue
        try:
            vals.append(to_real(line.split(",")[-1]))
        except ValueError:
            if vals:
                raise ConfigParseError(f"{path}: cannot parse {line!r}")
    if not vals:
        raise ConfigParseError(f"{path}: no values")
    return vals


def cmd_sda(args) -> int:
    out = Path(args.out)
    man = Manifest("sda", out)
    if args.config:
        consts, geom, exp, policy = _load(args, man)
    else:
        policy = policy_from_env(PrecisionPolicy(args.digits) if args.digits else None)
        man.digits = policy.decimal_digits
    with policy.context():
        if args.config:
            coupling = coupling_for(geom, consts)
            d = exp.d_override or coupling.d_vec
            b = b_values([to_real(v) for v in d], list(enumerate_paths(geom)), exp.sampling_interval)
        else:
            try:
                b = _read_b_file(args.b_file)
            except OSError as exc:
                raise ConfigParseError(str(exc)) from exc
        with man.stage("sda"):
            curve = sda_errors(b, args.k_pre)
        floor = trivial_regime_bound(b)
        best = curve.argmin_mean()
        best_nt = curve.argmin_mean(min(floor, args.k_pre))
        doc = {
            "paths": len(b),
            "k_pre": args.k_pre,
            "best_M": best,
            "best_eps_mean": float(curve.eps_mean[curve.at(best)]),
            "nontrivial_from": floor,
            "best_nontrivial_M": best_nt,
            "best_nontrivial_eps_mean": float(curve.eps_mean[curve.at(best_nt)]),
            "best_nontrivial_eps_max": float(curve.eps_max[curve.at(best_nt)]),
        }
        man.write("eps_curve.csv", _eps_csv(curve))
    man.write("sda.json", _dump(doc))
    man.finish()
    print(_dump(doc), end="")
    return EXIT_OK


def cmd_crb(args) -> int:
    out = Path(args.out)
    man = Manifest("crb", out)
    consts, geom, exp, policy = _load(args, man)
    counts = list(range(args.step, args.m_max + 1, args.step))
    with policy.context():
        coupling = coupling_for(geom, consts)
        paths = list(enumerate_paths(geom))
        d = [to_real(v) for v in (exp.d_override or coupling.d_vec)]
        try:
            model = period_model(coupling, paths, exp.sampling_interval, args.k_tilde, args.tol, d_vec=d)
        except LatticeMapError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVARIANT
        samples = exotic_screen_intensity(coupling, geom, consts, 0, range(0, args.m_max),
                                          exp.sampling_interval)
        rows = ["snr_db,M,crb,fisher"]
        doc = {"k_tilde": args.k_tilde, "sample_counts": counts, "bias_derivative": args.bias_derivative,
               "curves": {}}
        with man.stage("crb"):
            for snr in args.snr:
                sigma = sigma_from_snr(samples, snr)
                reps = crb_curve(model, counts, sigma, coupling.A_last, exp.sampling_interval,
                                 args.bias_derivative)
                doc["curves"][str(snr)] = [float(r.crb) for r in reps]
                for M, r in zip(counts, reps):
                    rows.append(f"{snr},{M},{format_real(r.crb, 20)},{format_real(r.fisher, 20)}")
        man.write("crb_curve.csv", "\n".join(rows) + "\n")
    man.write("crb.json", _dump(doc))
    man.finish()
    print(_dump(doc), end="")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    out = Path(args.out)
    man = Manifest("oracle-check", out)
    consts, geom, exp, policy = _load(args, man)
    rng = random.Random(args.seed)
    spec = QuadratureSpec(rel_tol=args.rel_tol, digits=args.oracle_digits)
    rows = []
    worst = 0.0
    with policy.context():
        coupling = coupling_for(geom, consts)
        paths = list(enumerate_paths(geom))
        width = 1 / gmpy2.sqrt(-2 * coupling.A_last)
        centers = [-_dot_real(coupling.c_vec, p.x) / (2 * coupling.A_last) for p in paths]
        peaks = [abs(path_amplitude(coupling, p, x)) for p, x in zip(paths, centers)]
        # a quadrature at limited digits cannot resolve amplitudes far below the strongest path
        floor = max(peaks) * resolvable_ratio(spec.digits)
        eligible = [n for n, a in enumerate(peaks) if a >= floor]
        chosen = sorted(rng.sample(eligible, min(args.paths, len(eligible))))
        with man.stage("oracle"):
            for n in chosen:
                p = paths[n]
                center = centers[n]
                offsets = np.linspace(-1.5, 1.5, args.points) if args.points > 1 else [0.0]
                xs = [center + width * to_real(float(o)) for o in offsets]
                quad = quadrature_amplitudes(geom, consts, p.s, [float(x) for x in xs], spec)
                for x, q in zip(xs, quad):
                    closed = path_amplitude(coupling, p, x)
                    err = float(relative_difference(closed, gmpy2.mpc(q.value)))
                    worst = max(worst, err)
                    rows.append({"path": n, "slits": list(p.s), "x": float(x), "closed_form": str(complex(closed)),
                                 "quadrature": str(q.value), "relative_difference": err,
                                 "quadrature_error_estimate": q.relative_error, "converged": q.converged})
    doc = {"points": rows, "eligible_paths": len(eligible), "total_paths": len(paths),
           "max_relative_difference": worst, "threshold": args.threshold,
           "agree": worst <= args.threshold}
    man.write("oracle_check.json", _dump(doc))
    man.finish()
    print(f"max relative difference {worst:.3e} over {len(rows)} points")
    return EXIT_OK if doc["agree"] else EXIT_INVARIANT


def _dot_real(u, v):
    return gmpy2.fsum([a * b for a, b in zip(u, v)])


def resolvable_ratio(digits: int):
    """Smallest amplitude ratio a quadrature at ``digits`` still resolves to about 1e-6."""
    return mpfr(10) ** (6 - digits)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qpc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"qpc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config and list every violated constraint")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="compute detector intensity samples")
    p.add_argument("--config", required=True)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--exotic", type=int, help="maximum same-plane hops per plane")
    p.add_argument("--noise-snr", type=float, help="also write a noisy copy at this SNR (dB)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--path-cap", type=int)
    p.add_argument("--digits", type=int)
    p.add_argument("--out", default="qpc_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="R[M] scan and period candidates from an intensity CSV")
    p.add_argument("--intensity", required=True)
    p.add_argument("--m-max", type=int, required=True)
    p.add_argument("--k-tilde", type=int)
    p.add_argument("--config", help="geometry for lattice verification and the period model")
    p.add_argument("--prominence", type=float, default=0.0)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW)
    p.add_argument("--tol", type=float, default=DEFAULT_LATTICE_TOL)
    p.add_argument("--digits", type=int)
    p.add_argument("--out", default="qpc_out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sda", help="simultaneous Diophantine approximation error curves")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--b-file")
    src.add_argument("--config")
    p.add_argument("--k-pre", type=int, required=True)
    p.add_argument("--digits", type=int)
    p.add_argument("--out", default="qpc_out")
    p.set_defaults(func=cmd_sda)

    p = sub.add_parser("crb", help="Cramer-Rao bound on the period versus sample count")
    p.add_argument("--config", required=True)
    p.add_argument("--k-tilde", type=int, required=True)
    p.add_argument("--snr", type=float, nargs="+", default=[-5, 0, 5, 10, 15])
    p.add_argument("--m-max", type=int, default=200)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--tol", type=float, default=DEFAULT_LATTICE_TOL)
    p.add_argument("--bias-derivative", type=float, default=0.0)
    p.add_argument("--digits", type=int)
    p.add_argument("--out", default="qpc_out")
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("oracle-check", help="compare closed-form amplitudes with brute-force quadrature")
    p.add_argument("--config", required=True)
    p.add_argument("--paths", type=int, default=3)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--threshold", type=float, default=1e-6)
    p.add_argument("--oracle-digits", type=int, default=15,
                   help="quadrature working digits; above 15 uses arbitrary precision (slow)")
    p.add_argument("--digits", type=int)
    p.add_argument("--out", default="qpc_out")
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigValidationError as exc:
        for v in exc.violations:
            print(f"violation: {v}", file=sys.stderr)
        if not exc.violations:
            print("violation: empty sample range", file=sys.stderr)
        return EXIT_INVARIANT
    except PathCapExceeded as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (DegenerateGeometryError, NonNormalizableError, IntensityRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
