"""Command-line driver.

Every command reads one YAML config with nested blocks. Missing keys take
the defaults shown by ``pco --print-defaults``; unknown keys are rejected.
Outputs are CSV files ending in a ``# config=<hash> seed=<seed>`` line.

Exit status: 0 on success, 2 for invalid configuration, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np
import yaml

from . import besov, concentration, risk, selection, wavelet
from .penalty import PenaltySpec, UncalibratedError, default_moments, load_moments_table, \
    write_moments_table
from .sequence import (ConfigurationError, GeometryError, NoiseSpec, WeightScheme, observe,
                       read_observations, write_observations, write_signal)
from .streams import make_rng

COMMANDS = ("estimate", "simulate", "rates", "concentration", "regress", "calibrate")

DEFAULTS = {
    "command": None,
    "seed": 0,
    "signal": {"kind": "dense", "s": 1.0, "r": 2.0, "R": 1.0, "seed": 0, "extra_levels": 4},
    "noise": {"distribution": "gaussian", "epsilon": 0.05, "N": None},
    "penalty": {"p": 2.0, "q": None, "a": None, "K_I": None, "K_S": None,
                "weights": "dyadic", "strategies": ["H", "I", "S"]},
    "sweep": {"epsilons": [0.2, 0.1, 0.05, 0.025], "replicates": 200, "N_cap": 65536},
    "concentration": {"p": 2.0, "D": [10, 50, 200], "x_grid": [1, 2, 3, 5],
                      "replicates": 100000},
    "calibrate": {"distributions": ["gaussian"], "p_grid": [1.5, 3.0, 4.0],
                  "D_grid": [10, 50, 200], "x_grid": [1, 2, 3, 5], "replicates": 20000,
                  "confidence": 0.99, "date": "unset"},
    "regression": {"function": "blocks", "n": 1024, "sigma": 0.5, "J": None,
                   "basis": "haar", "replicates": 20},
    "io": {"out_dir": ".", "observations": None, "samples": None, "moments_file": None},
}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------------------
# configuration


def _key_lines(text):
    """Map dotted key paths to 1-based line numbers in the YAML source."""
    lines = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    if node is not None:
        walk(node, "")
    return lines


def _merge(defaults, given, lines, prefix=""):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown key '{path}'", lines.get(path))
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{path}' must be a block", lines.get(path))
            out[key] = _merge(defaults[key], val, lines, path)
        else:
            out[key] = val
    return out


def load_config(text):
    try:
        given = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML error: {exc}", mark.line + 1 if mark else None) from None
    if not isinstance(given, dict):
        raise ConfigError("config must be a mapping")
    lines = _key_lines(text)
    cfg = _merge(DEFAULTS, given, lines)
    _validate(cfg, lines)
    return cfg


def _require(cond, path, message, lines):
    if not cond:
        raise ConfigError(f"'{path}': {message}", lines.get(path))


def _number(cfg, path, lines, low=None, high=None, allow_none=False):
    block, key = path.split(".")
    val = cfg[block][key]
    if val is None and allow_none:
        return
    _require(isinstance(val, (int, float)) and not isinstance(val, bool), path,
             "must be a number", lines)
    if low is not None:
        _require(val >= low, path, f"must be >= {low}", lines)
    if high is not None:
        _require(val <= high, path, f"must be <= {high}", lines)


def _validate(cfg, lines):
    if cfg["command"] is not None:
        _require(cfg["command"] in COMMANDS, "command", f"must be one of {COMMANDS}", lines)
    _require(isinstance(cfg["seed"], int), "seed", "must be an integer", lines)
    _require(cfg["signal"]["kind"] in besov.GENERATORS, "signal.kind",
             f"must be one of {sorted(besov.GENERATORS)}", lines)
    _number(cfg, "signal.s", lines, low=0)
    _number(cfg, "signal.r", lines, low=1)
    _number(cfg, "signal.R", lines, low=0)
    _require(cfg["noise"]["distribution"] in NoiseSpec.DISTRIBUTIONS, "noise.distribution",
             f"must be one of {NoiseSpec.DISTRIBUTIONS}", lines)
    _number(cfg, "noise.epsilon", lines, low=0, high=1)
    _number(cfg, "noise.N", lines, low=2, allow_none=True)
    _number(cfg, "penalty.p", lines, low=1)
    _number(cfg, "penalty.q", lines, low=1, allow_none=True)
    _require(cfg["penalty"]["weights"] in ("constant", "dyadic"), "penalty.weights",
             "must be 'constant' or 'dyadic'", lines)
    strategies = cfg["penalty"]["strategies"]
    _require(isinstance(strategies, list) and strategies
             and all(s in selection.STRATEGY_ORDER for s in strategies),
             "penalty.strategies", "must be a non-empty list drawn from H, I, S", lines)
    eps = cfg["sweep"]["epsilons"]
    _require(isinstance(eps, list) and all(isinstance(e, (int, float)) for e in eps),
             "sweep.epsilons", "must be a list of numbers", lines)
    _number(cfg, "sweep.replicates", lines, low=2)
    _number(cfg, "concentration.p", lines, low=1)
    _number(cfg, "concentration.replicates", lines, low=1)
    _number(cfg, "regression.n", lines, low=2)
    _number(cfg, "regression.sigma", lines, low=0)
    _number(cfg, "regression.replicates", lines, low=2)


def config_hash(cfg):
    """Short SHA-256 of the resolved config; the output directory is left out."""
    cfg = copy.deepcopy(cfg)
    cfg["io"].pop("out_dir", None)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# output


def write_csv(path, header, rows, cfg):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    buf.write(f"# config={config_hash(cfg)} seed={cfg['seed']}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _out(cfg, name):
    os.makedirs(cfg["io"]["out_dir"], exist_ok=True)
    return os.path.join(cfg["io"]["out_dir"], name)


def _meta(cfg):
    return {"config": config_hash(cfg), "seed": cfg["seed"]}


# ---------------------------------------------------------------------------
# commands


def _penalty_spec(cfg, N=None, p=None):
    pen = cfg["penalty"]
    p = float(pen["p"] if p is None else p)
    table = cfg["io"]["moments_file"]
    extra = {k: pen[k] for k in ("q", "a", "K_I", "K_S") if pen[k] is not None}
    return PenaltySpec.default(p, cfg["noise"]["distribution"], N=N, table=table, **extra)


def _weights(cfg):
    return WeightScheme(cfg["penalty"]["weights"], float(cfg["penalty"]["p"]))


def _ball(cfg):
    sig = cfg["signal"]
    return besov.BesovBall(float(sig["s"]), float(sig["r"]), float(sig["R"]))


def cmd_estimate(cfg):
    path = cfg["io"]["observations"]
    if not path:
        raise ConfigError("'io.observations' is required for estimate")
    obs = read_observations(path)
    spec = _penalty_spec(cfg, N=obs.N)
    w = _weights(cfg)
    per = selection.select_all(obs, spec, w, cfg["penalty"]["strategies"])
    best = selection.argmin_overall(obs, spec, w, cfg["penalty"]["strategies"])
    print("strategy,crit,size,L")
    for a, res in per.items():
        print(f"{a},{res.crit_value!r},{len(res.model)},{res.L}")
    write_csv(_out(cfg, "model.csv"), ["j", "k"],
              [(idx.j, idx.k) for idx in best.model.indices()], cfg)
    write_signal(_out(cfg, "theta_tilde.csv"), selection.pco_estimate(obs, best), _meta(cfg))
    print(f"estimate: strategy={best.strategy} size={len(best.model)} crit={best.crit_value:.6g}")


def _signal(cfg, J):
    sig = cfg["signal"]
    return besov.generate(sig["kind"], _ball(cfg), J + int(sig["extra_levels"]), sig["seed"])


def cmd_simulate(cfg):
    eps = float(cfg["noise"]["epsilon"])
    R = float(cfg["signal"]["R"])
    N = cfg["noise"]["N"] or risk.choose_N(R, eps, cfg["sweep"]["N_cap"])
    J = N.bit_length() - 2
    theta = _signal(cfg, J)
    spec = _penalty_spec(cfg, N=N)
    noise = NoiseSpec(cfg["noise"]["distribution"], cfg["seed"])
    obs = observe(theta, eps, noise, N, rng=make_rng(cfg["seed"], "simulate"))
    write_signal(_out(cfg, "signal.csv"), theta, _meta(cfg))
    write_observations(_out(cfg, "observations.csv"), obs, _meta(cfg))
    rep = risk.mc_risk(theta, eps, spec, _weights(cfg), cfg["penalty"]["strategies"],
                       int(cfg["sweep"]["replicates"]), cfg["seed"], noise.distribution, N)
    write_csv(_out(cfg, "risk.csv"), ["epsilon", "N", "mc_risk", "stderr", "oracle_risk",
                                      "oracle_ratio"],
              [(rep.epsilon, rep.N, rep.mc_risk, rep.mc_stderr, rep.oracle_risk,
                rep.oracle_ratio)], cfg)
    print(f"simulate: N={N} eps={eps} mc_risk={rep.mc_risk:.6g} "
          f"oracle_ratio={rep.oracle_ratio:.3g}")


def cmd_rates(cfg):
    ball = _ball(cfg)
    p = float(cfg["penalty"]["p"])
    spec = _penalty_spec(cfg)
    gen = besov.GENERATORS[cfg["signal"]["kind"]]
    sig_seed = cfg["signal"]["seed"]

    def generator(b, J_max, _seed):
        return gen(b, J_max, sig_seed)

    fit = risk.rate_fit(ball, p, cfg["sweep"]["epsilons"], spec, _weights(cfg), generator,
                        int(cfg["sweep"]["replicates"]), cfg["seed"],
                        cfg["noise"]["distribution"], int(cfg["sweep"]["N_cap"]),
                        int(cfg["signal"]["extra_levels"]), cfg["penalty"]["strategies"])
    rows = [(r["epsilon"], r["N"], r["mc_risk"], r["stderr"], r["oracle_risk"])
            for r in fit.rows()]
    write_csv(_out(cfg, "rates.csv"), ["epsilon", "N", "mc_risk", "stderr", "oracle_risk"],
              rows, cfg)
    summary = {"slope": fit.slope, "theory": fit.theory, "regime": fit.regime,
               "log_power": fit.log_power, "oracle_ratios": fit.oracle_ratios(p)}
    print(json.dumps(summary, indent=2))
    print(f"rates: slope={fit.slope:.4f} theory={fit.theory:.4f} regime={fit.regime}")


def cmd_concentration(cfg):
    c = cfg["concentration"]
    p = float(c["p"])
    noise = NoiseSpec(cfg["noise"]["distribution"], cfg["seed"])
    moments = default_moments(p, noise.distribution, cfg["io"]["moments_file"])
    rows, ok = [], True
    for D in c["D"]:
        rep = concentration.tail_check(noise, p, int(D), moments, c["x_grid"],
                                       int(c["replicates"]))
        ok &= rep.passed
        rows.extend((r["p"], r["D"], float(r["x"]), r["exceedance"], r["bound"], r["se"],
                     int(r["ok"])) for r in rep.rows())
    write_csv(_out(cfg, "concentration.csv"),
              ["p", "D", "x", "exceedance", "bound", "se", "ok"], rows, cfg)
    print(f"concentration: p={p} kappa={moments.kappa_p:.4g} pass={ok}")


def cmd_calibrate(cfg):
    c = cfg["calibrate"]
    out = []
    for dist in c["distributions"]:
        for p in c["p_grid"]:
            m = concentration.calibrated_moments(
                NoiseSpec(dist, cfg["seed"]), float(p), D_grid=tuple(c["D_grid"]),
                x_grid=tuple(c["x_grid"]), replicates=int(c["replicates"]),
                confidence=float(c["confidence"]))
            out.append((dist, m, c["date"]))
            print(f"calibrate: {dist} p={p} c1={m.c1} c2={m.c2} kappa={m.kappa_p:.4g}")
    path = cfg["io"]["moments_file"] or _out(cfg, "moments.csv")
    write_moments_table(path, out)


def _read_samples(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
    if not rows or [h.strip() for h in rows[0]] != ["i", "X"]:
        raise ConfigError(f"{path}: expected header i,X")
    data = sorted((int(r[0]), float(r[1])) for r in rows[1:])
    return np.array([x for _, x in data])


def cmd_regress(cfg):
    reg = cfg["regression"]
    p = float(cfg["penalty"]["p"])
    basis = wavelet.WaveletBasis(reg["basis"])
    sigma = float(reg["sigma"])
    noise = cfg["noise"]["distribution"]
    if cfg["io"]["samples"]:
        sample = wavelet.RegressionSample(_read_samples(cfg["io"]["samples"]), sigma)
        f = None
    else:
        f = wavelet.named_function(reg["function"], cfg["seed"])
        sample = wavelet.draw_sample(f, int(reg["n"]), sigma, noise,
                                     rng=make_rng(cfg["seed"], "regress-cli"))
    n = sample.n
    J = n.bit_length() - 2 if reg["J"] is None else int(reg["J"])
    N = 1 << (J + 1)
    spec = _penalty_spec(cfg, N=N)
    theta_tilde, result = wavelet.pco_regress(sample, basis, J, spec,
                                              cfg["penalty"]["strategies"])
    grid_size = max(4 * N, n)
    f_hat = wavelet.reconstruct(theta_tilde, basis, grid_size)
    t = wavelet.grid(grid_size)
    write_csv(_out(cfg, "f_tilde.csv"), ["t", "value"],
              [(float(a), float(b)) for a, b in zip(t, f_hat)], cfg)
    msg = f"regress: n={n} J={J} strategy={result.strategy} size={len(result.model)}"
    if f is not None:
        mean, se = wavelet.regression_mc_risk(f, n, sigma, p, int(reg["replicates"]),
                                              cfg["seed"], basis, J, spec, noise)
        write_csv(_out(cfg, "risk.csv"), ["n", "sigma", "epsilon", "p", "mc_risk", "stderr"],
                  [(n, sigma, sample.epsilon, p, mean, se)], cfg)
        msg += f" mc_risk={mean:.6g}"
    print(msg)


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "rates": cmd_rates,
            "concentration": cmd_concentration, "regress": cmd_regress,
            "calibrate": cmd_calibrate}


def build_parser():
    parser = argparse.ArgumentParser(prog="pco", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="YAML config file")
    parser.add_argument("--moments-file", help="moments table CSV (overrides io.moments_file)")
    parser.add_argument("--out", help="output directory (overrides io.out_dir)")
    parser.add_argument("--seed", type=int, help="master seed (overrides seed)")
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the default config and exit")
    return parser


def run(cfg):
    """Execute a validated config; returns the exit status."""
    try:
        HANDLERS[cfg["command"]](cfg)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, GeometryError, UncalibratedError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (concentration.CalibrationError, FloatingPointError, ArithmeticError,
            np.linalg.LinAlgError, ValueError) as exc:
        print(f"numeric failure in {cfg['command']}: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.print_defaults:
        print(yaml.safe_dump(DEFAULTS, sort_keys=False), end="")
        return 0
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    try:
        cfg = load_config(text)
        if args.command:
            cfg["command"] = args.command
        if cfg["command"] is None:
            raise ConfigError("no command given")
        if args.moments_file:
            cfg["io"]["moments_file"] = args.moments_file
        if args.out:
            cfg["io"]["out_dir"] = args.out
        if args.seed is not None:
            cfg["seed"] = args.seed
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
