"""Command-line front end: ``consensus optimize|sample|converge|verify``.

Configuration is a JSON object. Every key is optional; missing keys take
the defaults below, and unknown keys are rejected with their path::

    {
      "objective": "ackley", "d": 2,
      "method": "cbo-iso", "beta": 3.0, "sigma": 0.2,
      "dt": 0.01, "T": 1.0,                  # or "steps" instead of "T"
      "init": {"kind": "gaussian", "mean": [0, 0], "cov": [[1, 0], [0, 1]]},
      "J": 100, "stride": 1, "seed": 0,
      "convergence": {"J_list": [...], "J_inf": 32768, "M": 20, "p": 2, "fit_min_J": 160}
    }

``sigma`` is the CBO noise amplitude ``sqrt(2 theta)``; it is ignored by CBS.
Output files carry a ``# config_sha256=... seed=...`` header and are written
atomically, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from consensus import analysis
from consensus.dynamics import METHODS, DynamicsSpec
from consensus.ensemble import write_ensemble_csv
from consensus.integrator import BlowUpError, InitSpec, NoiseStream, TimeGrid, simulate, write_trajectory_csv
from consensus.meanfield import (
    DEFAULT_J_LIST,
    ConvergenceConfig,
    StudyError,
    run_convergence_study,
    write_raw_csv,
    write_results_csv,
)
from consensus.objectives import REGISTRY, get_objective, quadratic

logger = logging.getLogger("consensus")

COMMANDS = ("optimize", "sample", "converge", "verify")
SUITES = ("stability", "matrix", "iid", "excursion", "nocollapse", "moments")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    objective: str = "ackley"
    d: int = 2
    method: str = "cbo-iso"
    beta: float = 3.0
    sigma: float = 0.2
    dt: float = 0.01
    steps: int = 100
    init: InitSpec = field(default_factory=lambda: InitSpec.standard_normal(2))
    J: int = 100
    stride: int = 1
    seed: int = 0
    J_list: tuple[int, ...] = DEFAULT_J_LIST
    J_inf: int = 32768
    M: int = 20
    p: float = 2.0
    fit_min_J: int = 160

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.dt, self.steps)

    @property
    def spec(self) -> DynamicsSpec:
        return DynamicsSpec.from_sigma(self.method, self.beta, self.sigma)

    def convergence_config(self) -> ConvergenceConfig:
        return ConvergenceConfig(
            J_list=self.J_list, J_inf=self.J_inf, M=self.M, p=self.p, grid=self.grid,
            spec=self.spec, objective=self.objective, d=self.d, init=self.init,
            seed=self.seed, fit_min_J=self.fit_min_J,
        )

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()

    def header(self) -> str:
        return f"config_sha256={self.digest()} seed={self.seed}"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {"objective", "d", "method", "beta", "sigma", "dt", "T", "steps", "init", "J", "stride", "seed", "convergence"}
_CONV_KEYS = {"J_list", "J_inf", "M", "p", "fit_min_J"}
_INIT_KEYS = {"gaussian": {"kind", "mean", "cov"}, "uniform": {"kind", "low", "high"}}


def _unknown(obj: dict, allowed: set, path: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}: unknown key")


def _num(obj: dict, key: str, path: str, default, *, positive=True, integer=False, nonneg=False):
    if key not in obj:
        return default
    v = obj[key]
    where = f"{path}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {type(v).__name__}")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {v}")
        v = int(v)
    elif not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if nonneg and v < 0:
        raise ConfigError(f"{where}: must be non-negative, got {v}")
    if positive and not nonneg and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    return v if integer else float(v)


def _vector(v, where: str, d: int) -> list[float]:
    if not isinstance(v, list) or len(v) != d:
        raise ConfigError(f"{where}: expected a list of {d} numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{where}[{i}]: expected a finite number")
        out.append(float(x))
    return out


def _parse_init(obj, d: int, path: str) -> InitSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = obj.get("kind", "gaussian")
    if kind not in _INIT_KEYS:
        raise ConfigError(f"{path}.kind: expected one of {sorted(_INIT_KEYS)}, got {kind!r}")
    _unknown(obj, _INIT_KEYS[kind], path)
    try:
        if kind == "gaussian":
            mean = _vector(obj.get("mean", [0.0] * d), f"{path}.mean", d)
            cov = obj.get("cov", np.eye(d).tolist())
            if not isinstance(cov, list) or len(cov) != d:
                raise ConfigError(f"{path}.cov: expected a {d}x{d} matrix")
            cov = [_vector(row, f"{path}.cov[{i}]", d) for i, row in enumerate(cov)]
            return InitSpec.gaussian(mean, cov)
        for key in ("low", "high"):
            if key not in obj:
                raise ConfigError(f"{path}.{key}: required for a uniform initial law")
        return InitSpec.uniform(_vector(obj["low"], f"{path}.low", d), _vector(obj["high"], f"{path}.high", d))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text: str, command: str) -> RunConfig:
    """Parse and validate a JSON config for ``command``; errors name the offending key."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    try:
        obj = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    path = "config"
    _unknown(obj, _TOP_KEYS, path)

    objective = obj.get("objective", "ackley")
    if objective not in REGISTRY:
        raise ConfigError(f"config.objective: expected one of {sorted(REGISTRY)}, got {objective!r}")
    d = _num(obj, "d", path, 2, integer=True)
    default_method = "cbs-sample" if command == "sample" else "cbo-iso"
    method = obj.get("method", default_method)
    if method not in METHODS:
        raise ConfigError(f"config.method: expected one of {list(METHODS)}, got {method!r}")
    beta = _num(obj, "beta", path, 3.0)
    sigma = _num(obj, "sigma", path, 0.2)
    dt = _num(obj, "dt", path, 0.01)
    if "T" in obj and "steps" in obj:
        raise ConfigError("config.steps: give either T or steps, not both")
    if "steps" in obj:
        steps = _num(obj, "steps", path, 100, integer=True, nonneg=True)
    else:
        T = _num(obj, "T", path, 1.0)
        try:
            steps = TimeGrid.from_final_time(T, dt).steps
        except ValueError as exc:
            raise ConfigError(f"config.T: {exc}") from None
    init = _parse_init(obj.get("init", {}), d, f"{path}.init")
    J = _num(obj, "J", path, 100, integer=True)
    stride = _num(obj, "stride", path, 1, integer=True)
    seed = _num(obj, "seed", path, 0, integer=True, nonneg=True)
    if seed >= 2**64:
        raise ConfigError("config.seed: must fit in 64 bits")

    conv = obj.get("convergence", {})
    cpath = f"{path}.convergence"
    if not isinstance(conv, dict):
        raise ConfigError(f"{cpath}: expected an object")
    _unknown(conv, _CONV_KEYS, cpath)
    J_list = conv.get("J_list", list(DEFAULT_J_LIST))
    if not isinstance(J_list, list) or not J_list:
        raise ConfigError(f"{cpath}.J_list: expected a non-empty list of integers")
    for i, J_ in enumerate(J_list):
        if isinstance(J_, bool) or not isinstance(J_, int) or J_ < 1:
            raise ConfigError(f"{cpath}.J_list[{i}]: expected a positive integer")
    if J_list != sorted(set(J_list)):
        raise ConfigError(f"{cpath}.J_list: must be strictly ascending")
    J_inf = _num(conv, "J_inf", cpath, 32768, integer=True)
    if max(J_list) > J_inf:
        raise ConfigError(f"{cpath}.J_inf: must be at least max(J_list)={max(J_list)}")

    cfg = RunConfig(
        command=command, objective=objective, d=d, method=method, beta=beta, sigma=sigma,
        dt=dt, steps=steps, init=init, J=J, stride=stride, seed=seed,
        J_list=tuple(J_list), J_inf=J_inf,
        M=_num(conv, "M", cpath, 20, integer=True),
        p=_num(conv, "p", cpath, 2.0),
        fit_min_J=_num(conv, "fit_min_J", cpath, 160, integer=True),
    )
    try:
        cfg.spec
    except ValueError as exc:
        raise ConfigError(f"config.method: {exc}") from None
    return cfg


def serialize(cfg: RunConfig) -> str:
    """Canonical JSON of a config (without the command); ``parse_config`` reads it back unchanged."""
    init = cfg.init
    if init.kind == "gaussian":
        init_obj = {"kind": "gaussian", "mean": [float(v) for v in init.mean],
                    "cov": [[float(v) for v in row] for row in init.cov]}
    else:
        init_obj = {"kind": "uniform", "low": [float(v) for v in init.low], "high": [float(v) for v in init.high]}
    obj = {
        "objective": cfg.objective, "d": cfg.d, "method": cfg.method, "beta": cfg.beta,
        "sigma": cfg.sigma, "dt": cfg.dt, "steps": cfg.steps, "init": init_obj, "J": cfg.J,
        "stride": cfg.stride, "seed": cfg.seed,
        "convergence": {"J_list": list(cfg.J_list), "J_inf": cfg.J_inf, "M": cfg.M,
                        "p": cfg.p, "fit_min_J": cfg.fit_min_J},
    }
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def atomic_outputs(paths):
    """Yield temporary paths next to each target; move them into place only on success."""
    temps = []
    try:
        for p in paths:
            fd, tmp = tempfile.mkstemp(prefix=f".{Path(p).name}.", dir=Path(p).parent)
            os.close(fd)
            temps.append(tmp)
        yield temps
        for tmp, p in zip(temps, paths):
            os.replace(tmp, p)
        temps = []
    finally:
        for tmp in temps:
            with contextlib.suppress(OSError):
                os.unlink(tmp)


def _check_writable(paths) -> None:
    for p in paths:
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise ConfigError(f"output directory {parent} does not exist")
        if not os.access(parent, os.W_OK):
            raise ConfigError(f"output directory {parent} is not writable")


def _with_suffix(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{tag}{p.suffix or '.csv'}"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _write_trace(record, objective, path, header) -> None:
    d = objective.dimension
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(",".join(["t"] + [f"M_{i + 1}" for i in range(d)] + ["f_M", "ess", "min_eig_wcov"]) + "\n")
        for t, s in zip(record.times, record.summaries):
            row = [t, *s.weighted_mean, float(objective(s.weighted_mean)), s.ess,
                   float(np.linalg.eigvalsh(s.weighted_cov)[0])]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def run_particles(cfg: RunConfig, out: str, trajectory: str | None = None) -> str:
    objective = get_objective(cfg.objective, cfg.d)
    outputs = [out, _with_suffix(out, "trace")] + ([trajectory] if trajectory else [])
    _check_writable(outputs)
    rec = simulate(cfg.J, cfg.spec, objective, cfg.grid, cfg.init, NoiseStream(cfg.seed, cfg.d),
                   stride=cfg.stride)
    with atomic_outputs(outputs) as tmp:
        write_ensemble_csv(rec.final, tmp[0], comment=cfg.header())
        _write_trace(rec, objective, tmp[1], cfg.header())
        if trajectory:
            write_trajectory_csv(rec, tmp[2], comment=cfg.header())
    final = rec.summaries[-1]
    mean = np.array2string(final.weighted_mean, precision=4, separator=",")
    return (f"{cfg.command}: method={cfg.method} J={cfg.J} T={cfg.grid.T:g} M_beta={mean} "
            f"f(M_beta)={float(objective(final.weighted_mean)):.4g} ess={final.ess:.1f} -> {out}")


def run_converge(cfg: RunConfig, out: str, raw: str | None, threads: int) -> tuple[int, str]:
    conv = cfg.convergence_config()
    outputs = [out] + ([raw] if raw else [])
    _check_writable(outputs)
    try:
        report = run_convergence_study(conv, threads=threads)
    except StudyError as exc:
        return EXIT_RUNTIME, f"converge: {exc}"
    with atomic_outputs(outputs) as tmp:
        write_results_csv(report, tmp[0])
        if raw:
            write_raw_csv(report, tmp[1])
    slope = "n/a" if report.slope is None else f"{report.slope:.3f}"
    return EXIT_OK, (f"converge: method={cfg.method} J={list(report.J_list)} M={cfg.M} J_inf={cfg.J_inf} "
                     f"slope={slope} runtime={report.runtime_s:.1f}s -> {out}")


def _floats(a) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.ravel(a)]


def verify_suite(suite: str, seed: int, quick: bool = False) -> list[dict]:
    """Run one verification suite; each entry has ``check``, ``passed`` and observed extremes.

    ``quick`` shrinks trial counts tenfold for smoke runs.
    """
    scale = 10 if quick else 1
    q = quadratic(2)
    entries = []
    if suite == "stability":
        n = 10_000 // scale
        for which, fn, p in (("mean", analysis.stability_stress_mean, 1.0),
                             ("sqrtcov", analysis.stability_stress_sqrtcov, 2.0)):
            r = fn(q, 1.0, p, 5.0, n, seed)
            small = r.max_over_first(n // 10)
            growth = r.max_ratio / small
            entries.append({"check": f"stability-{which}", "passed": bool(growth < 1.10),
                            "trials": n, "max_ratio": r.max_ratio, "max_ratio_first_tenth": small,
                            "growth": growth, "skipped": r.skipped})
    elif suite == "matrix":
        r = analysis.matrix_inequality_checks(10_000 // scale, (2, 3, 5), seed)
        for a in r.audits:
            entries.append({"check": f"{a.name}-d{a.dim}", "passed": bool(a.passed), "trials": a.trials,
                            "violations": a.violations, "max_ratio": a.max_ratio,
                            "max_sharp_ratio": a.max_sharp_ratio})
    elif suite == "iid":
        sampler = analysis.gaussian_sampler([1.0, 0.5])
        ref = analysis.gibbs_reference_oracle(q, 1.0, sampler, 10**7 // scale, seed)
        for which in ("mean", "sqrtcov"):
            r = analysis.iid_weighted_moment_rate(q, 1.0, sampler, [100, 1000, 10_000], 200, 2.0, which, seed, ref)
            entries.append({"check": f"iid-{which}", "passed": bool(-1.2 <= r.slope <= -0.8),
                            "trials": 200, "slope": r.slope, "errors": _floats(r.errors),
                            "reference": ref.kind})
    elif suite == "excursion":
        r = analysis.excursion_probability(lambda rng, n: rng.standard_normal(n), 2.0, 3.0,
                                           [10, 100, 1000], 10**5 // scale, seed)
        entries.append({"check": "excursion", "passed": bool(r.decays), "trials": 10**5 // scale,
                        "probabilities": _floats(r.probabilities), "mean_estimate": r.mean_estimate})
    elif suite == "nocollapse":
        margins, residuals, ok = [], [], True
        # the bound needs a large ensemble, so quick mode trims seeds rather than J
        for s in range(1 if quick else 10):
            r = analysis.run_no_collapse(q, 1.0, 8192, TimeGrid(0.01, 100),
                                         InitSpec.standard_normal(2), seed + s)
            ok &= r.passed
            margins.append(float(r.margin.min()))
            residuals.append(float(r.residual.max()))
        entries.append({"check": "no-collapse", "passed": bool(ok), "trials": len(margins),
                        "min_margin": min(margins), "max_residual": max(residuals)})
    elif suite == "moments":
        r = analysis.weighted_moment_audit(2.0, 2.0, 1.0, 10_000 // scale, seed)
        entries.append({"check": "weighted-moment-bound", "passed": bool(r.passed), "trials": r.trials,
                        "max_ratio": r.max_ratio, "constant": r.constant})
    else:
        raise ConfigError(f"unknown suite {suite!r}")
    return entries


def run_verify(suite: str, out: str, seed: int, quick: bool) -> tuple[int, str]:
    _check_writable([out])
    suites = SUITES if suite == "all" else (suite,)
    entries = []
    t0 = time.perf_counter()
    for name in suites:
        logger.info("running suite %s", name)
        for e in verify_suite(name, seed, quick):
            entries.append({"suite": name, **e})
    ok = all(e["passed"] for e in entries)
    body = {"seed": seed, "suite": suite, "quick": quick, "passed": ok, "checks": entries}
    digest = hashlib.sha256(json.dumps({"suite": suite, "seed": seed, "quick": quick}, sort_keys=True).encode())
    body["config_sha256"] = digest.hexdigest()
    with atomic_outputs([out]) as tmp:
        Path(tmp[0]).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    failed = [e["check"] for e in entries if not e["passed"]]
    status = "all passed" if ok else f"FAILED: {', '.join(failed)}"
    return (EXIT_OK if ok else EXIT_FAILED), (
        f"verify: {len(entries)} checks in {time.perf_counter() - t0:.1f}s, {status} -> {out}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("CONSENSUS_LOG", "off").lower()
    levels = {"off": logging.CRITICAL + 1, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"CONSENSUS_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("consensus").setLevel(levels[level])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus", description="Consensus-based optimization and sampling.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("optimize", "run CBO (or any method) and write the final ensemble"),
                        ("sample", "run CBS sampling and write the final ensemble")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file (defaults if omitted)")
        p.add_argument("--out", default=f"{name}.csv", help="final ensemble CSV; a .trace.csv goes alongside")
        p.add_argument("--seed", type=int)
        p.add_argument("--trajectory", help="also dump the thinned trajectory to this CSV")
    p = sub.add_parser("converge", help="coupled mean-field convergence study")
    p.add_argument("--config")
    p.add_argument("--out", default="results.csv")
    p.add_argument("--raw", help="also dump raw per-particle squared sups to this CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = one per CPU)")
    p = sub.add_parser("verify", help="numerical audits of the analytic estimates")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--out", default="report.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="tenfold fewer trials")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_logging()
        if args.command == "verify":
            code, line = run_verify(args.suite, args.out, args.seed, args.quick)
        else:
            text = Path(args.config).read_text(encoding="utf-8") if args.config else "{}"
            cfg = parse_config(text, args.command)
            if args.seed is not None:
                if not 0 <= args.seed < 2**64:
                    raise ConfigError("--seed must be a 64-bit non-negative integer")
                cfg = replace(cfg, seed=args.seed)
            if args.command == "converge":
                if args.threads < 0:
                    raise ConfigError("--threads must be >= 0")
                code, line = run_converge(cfg, args.out, args.raw, args.threads)
            else:
                code, line = EXIT_OK, run_particles(cfg, args.out, args.trajectory)
    except (ConfigError, OSError) as exc:
        print(f"consensus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as exc:
        print(f"consensus: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
