"""Command-line entry point: one structured config file per experiment.

Subcommands: ``check``, ``kernel``, ``simulate``, ``pair``, ``verify`` and
``spectrum``.  The config is TOML or JSON; ``--set section.key=value``
overrides single fields (the value is parsed as JSON when possible).  Every
artifact records the hash of the effective config, package versions and the
seed.  Exit codes: 0 success, 2 config error, 3 precondition error,
4 numerical error.
"""
import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import run_checks
from .errors import CarmaError, ConfigError
from .field import (DEFAULT_WRAP_TOL, bump, generalized_weight, pair_generalized, pair_whitenoise, simulate_fields,
                    spde_residual)
from .grid import GridSpec
from .kernels import (BMKernelSpec, Carma1dStateSpace, Envelope, kernel_bm, kernel_carma1d, kernel_delta,
                      kernel_fft, kernel_matern3, kernel_newton, kernel_regularized)
from .levy import LevyTriplet, simulate_cells
from .poly import format_polynomial, parse_polynomial, select_alpha
from .stats import (DEFAULT_BAND, autocovariance_compare, char_functional_test, noise_variance,
                    pairing_samples, periodogram_compare)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("levycarma")

OUTDIR_ENV = "LEVYCARMA_OUTDIR"
SUBCOMMANDS = ("check", "kernel", "simulate", "pair", "verify", "spectrum")
SECTIONS = {
    "model": {"p", "q", "alpha", "kernel", "images", "check_extent", "a", "b", "lambdas", "kappas", "lam",
              "envelope", "epsilon"},
    "noise": {"a", "gamma", "nu"},
    "grid": {"shape", "spacing", "origin"},
    "run": {"seed", "streams", "realizations", "delta", "workers", "outdir", "wrap_tol"},
    "check": {"R", "epsilon", "eps_elliptic"},
    "pair": {"center", "radius", "amplitude", "pad", "log"},
    "verify": {"u", "samples", "weight", "tolerance"},
    "spectrum": {"band", "lags", "realizations"},
}
KERNEL_KINDS = ("fft", "regularized", "carma1d", "bm", "matern3", "newton", "delta")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path):
    """Parse a TOML or JSON file; syntax errors report line and column."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part!r} is not a table")
        node[parts[-1]] = value
    return cfg


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a table")
    for section, body in cfg.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(body) - SECTIONS[section]
        if unknown:
            raise ConfigError(f"[{section}] has unknown field(s) {sorted(unknown)}")
    kind = cfg.get("model", {}).get("kernel")
    if kind is not None and kind not in KERNEL_KINDS:
        raise ConfigError(f"model.kernel: unknown kind {kind!r}; expected one of {list(KERNEL_KINDS)}")
    return cfg


# settings that change where or how fast a run happens but not what it computes
HASH_EXCLUDED = {"run": ("workers", "outdir")}


def config_hash(cfg):
    """sha256 of the canonical JSON of ``cfg`` without the keys in ``HASH_EXCLUDED``."""
    cfg = {sec: ({k: v for k, v in body.items() if k not in HASH_EXCLUDED.get(sec, ())}
                 if isinstance(body, dict) else body) for sec, body in cfg.items()}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def versions():
    import numba
    import scipy
    return {"levycarma": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": sys.version.split()[0]}


def _field(cfg, section, key, default=None, required=False):
    body = cfg.get(section, {})
    if key not in body:
        if required:
            raise ConfigError(f"missing required field {section}.{key}")
        return default
    return body[key]


def _as_float(cfg, section, key, default=None, required=False):
    v = _field(cfg, section, key, default, required)
    if v is None:
        return None
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected a number, got {v!r}") from None


def _as_int(cfg, section, key, default=None):
    v = _field(cfg, section, key, default)
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected an integer, got {v!r}") from None


class Experiment:
    """Typed view of a validated config."""

    def __init__(self, cfg, outdir=None):
        self.cfg = validate_config(cfg)
        self.hash = config_hash(cfg)
        self.seed = _as_int(cfg, "run", "seed", 0)
        self.delta = _as_float(cfg, "run", "delta", 0.01)
        self.workers = max(1, _as_int(cfg, "run", "workers", 1))
        wrap = _field(cfg, "run", "wrap_tol", DEFAULT_WRAP_TOL)
        self.wrap_tol = None if wrap in (None, "off", "none") else float(wrap)
        out = outdir or os.environ.get(OUTDIR_ENV) or _field(cfg, "run", "outdir", "out")
        self.outdir = Path(out)
        self._spec = None
        self._triplet = None

    # -- metadata ---------------------------------------------------------
    def metadata(self, **extra):
        return {"config_hash": self.hash, "versions": versions(), "seed": self.seed, **extra}

    def header_lines(self, **extra):
        return [f"{k}: {json.dumps(v, sort_keys=True)}" for k, v in self.metadata(**extra).items()]

    def path(self, name):
        self.outdir.mkdir(parents=True, exist_ok=True)
        return self.outdir / name

    # -- model pieces -----------------------------------------------------
    @property
    def spec(self):
        if self._spec is None:
            shape = _field(self.cfg, "grid", "shape", required=True)
            spacing = _field(self.cfg, "grid", "spacing", required=True)
            shape = tuple(np.atleast_1d(shape).astype(int).tolist())
            spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(shape),))
            origin = _field(self.cfg, "grid", "origin")
            if origin is None:
                self._spec = GridSpec.centered(shape, tuple(spacing))
            else:
                self._spec = GridSpec(shape, tuple(spacing), tuple(np.broadcast_to(origin, (len(shape),))))
        return self._spec

    @property
    def triplet(self):
        if self._triplet is None:
            try:
                self._triplet = LevyTriplet.from_config(self.cfg.get("noise", {}))
            except ConfigError as exc:
                raise ConfigError(f"[noise]: {exc}") from None
        return self._triplet

    def polynomial(self, key, default=None):
        text = _field(self.cfg, "model", key, default)
        if text is None:
            return None
        try:
            return parse_polynomial(str(text), self.spec.d)
        except ConfigError as exc:
            raise ConfigError(f"model.{key}: {exc}") from None

    def polynomials(self):
        p, q = self.polynomial("p"), self.polynomial("q", "1")
        if p is None and _field(self.cfg, "model", "kernel") == "carma1d":
            p, q = self._carma1d().polynomials()
        return p, q

    def _carma1d(self):
        a = _field(self.cfg, "model", "a", required=True)
        b = _field(self.cfg, "model", "b", [1.0])
        return Carma1dStateSpace(np.asarray(a, dtype=float), np.asarray(b, dtype=float))

    def alpha(self, p, q):
        alpha = _field(self.cfg, "model", "alpha")
        if alpha is not None:
            return int(alpha)
        eps = _as_float(self.cfg, "model", "epsilon", 0.5)
        return select_alpha(p, q, eps)

    def streams(self, default_count=1):
        streams = _field(self.cfg, "run", "streams")
        if streams is None:
            n = _as_int(self.cfg, "run", "realizations", default_count)
            return list(range(n))
        return sorted(int(s) for s in np.atleast_1d(streams))

    def kernel(self):
        kind = _field(self.cfg, "model", "kernel", "fft")
        spec = self.spec
        images = _field(self.cfg, "model", "images", "auto")
        if kind == "fft":
            p, q = self.polynomials()
            if p is None:
                raise ConfigError("missing required field model.p")
            check = bool(_field(self.cfg, "model", "check_extent", images != 0))
            K = kernel_fft(p, q, spec, images=images, check_extent=check)
        elif kind == "regularized":
            p, q = self.polynomials()
            K = kernel_regularized(p, q, self.alpha(p, q), spec)
        elif kind == "carma1d":
            K = kernel_carma1d(self._carma1d(), spec)
        elif kind == "bm":
            lam = [complex(x) for x in _field(self.cfg, "model", "lambdas", required=True)]
            kap = [complex(x) for x in _field(self.cfg, "model", "kappas", [])]
            lam = [x.real if x.imag == 0 else x for x in lam]
            kap = [x.real if x.imag == 0 else x for x in kap]
            K = kernel_bm(BMKernelSpec(tuple(lam), tuple(kap), spec.d), spec)
        elif kind == "matern3":
            K = kernel_matern3(_as_float(self.cfg, "model", "lam", required=True), spec)
        elif kind == "newton":
            K = kernel_newton(spec)
        else:
            K = kernel_delta(spec)
        env = _field(self.cfg, "model", "envelope")
        if env is not None:
            K = K.with_envelope(Envelope.from_dict(env))
        return K

    def test_function(self):
        d = self.spec.d
        center = _field(self.cfg, "pair", "center", [0.0] * d)
        radius = _as_float(self.cfg, "pair", "radius", 1.0)
        amp = _as_float(self.cfg, "pair", "amplitude", float(np.e))
        pad = _as_int(self.cfg, "pair", "pad", 2)
        return bump(center, radius, amp, self.spec, pad)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return str(obj)


def write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt_cell(row[c]) for c in columns])


def _fmt_cell(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return x


def append_csv(path, header_lines, columns, rows):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        if new:
            for line in header_lines:
                fh.write(f"# {line}\n")
            csv.writer(fh).writerow(columns)
        w = csv.writer(fh)
        for row in rows:
            w.writerow([_fmt_cell(row[c]) for c in columns])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_check(exp):
    t = exp.triplet
    p, q = exp.polynomials()
    K = exp.kernel() if ("grid" in exp.cfg and (p is not None or "kernel" in exp.cfg.get("model", {}))) else None
    R = tuple(float(r) for r in _field(exp.cfg, "check", "R", (0.5, 1.0, 2.0)))
    eps = _as_float(exp.cfg, "check", "epsilon", 0.5)
    eps_ell = _as_float(exp.cfg, "check", "eps_elliptic", 0.01)
    rep = run_checks(t, K, p, q, eps, R, eps_ell)
    payload = {"metadata": exp.metadata(), **rep.to_dict()}
    write_json(exp.path("check_report.json"), payload)
    print(rep.table())
    return 0


def cmd_kernel(exp):
    K = exp.kernel()
    K.provenance = {**K.provenance, "run": exp.metadata()}
    K.save(exp.path("kernel.grid"))
    K.write_profile_csv(exp.path("kernel_profile.csv"), header_lines=exp.header_lines())
    print(f"kernel {K.provenance.get('construction', '?')} on {K.spec.shape}; envelope {K.envelope.to_dict()}")
    return 0


def cmd_simulate(exp):
    K = exp.kernel()
    streams = exp.streams()
    fields = simulate_fields(K, exp.triplet, exp.spec, streams, exp.seed, exp.delta, exp.workers, exp.wrap_tol)
    for s, X in zip(streams, fields):
        X.provenance["kernel"] = {k: v for k, v in K.provenance.items()}
        X.save(exp.path(f"field_s{s}.grid"), {"run": exp.metadata(stream=s)})
    print(f"wrote {len(fields)} field(s) to {exp.outdir}")
    return 0


def cmd_pair(exp):
    p, q = exp.polynomials()
    if p is None:
        raise ConfigError("missing required field model.p")
    spec = exp.spec
    phi = exp.test_function()
    alpha = exp.alpha(p, q)
    K = kernel_regularized(p, q, alpha, spec)
    rows = []
    for s in exp.streams():
        n = simulate_cells(exp.triplet, spec, exp.delta, exp.seed, s)
        res = spde_residual(p, q, K, alpha, n, phi)
        white = pair_whitenoise(n, phi)
        value = pair_generalized(K, alpha, n, phi)
        rows.append({"seed": exp.seed, "stream": s, "value": value, "whitenoise": white,
                     "spde_lhs": res.lhs, "spde_rhs": res.rhs, "spde_relative": res.relative})
    name = _field(exp.cfg, "pair", "log", "pairings.csv")
    cols = ["seed", "stream", "value", "whitenoise", "spde_lhs", "spde_rhs", "spde_relative"]
    append_csv(exp.path(name), exp.header_lines(alpha=alpha, p=format_polynomial(p), q=format_polynomial(q)),
               cols, rows)
    worst = max(r["spde_relative"] for r in rows)
    print(f"{len(rows)} pairing(s) logged to {exp.path(name)}; worst relative SPDE residual {worst:.3g}")
    return 0


def _u_grid(exp):
    u = _field(exp.cfg, "verify", "u", {"min": -3.0, "max": 3.0, "n": 61})
    if isinstance(u, dict):
        return np.linspace(float(u.get("min", -3.0)), float(u.get("max", 3.0)), int(u.get("n", 61)))
    return np.asarray(u, dtype=float)


def cmd_verify(exp):
    t, spec = exp.triplet, exp.spec
    phi = exp.test_function()
    which = _field(exp.cfg, "verify", "weight", "phi")
    if which == "phi":
        w = phi.values
    elif which == "generalized":
        p, q = exp.polynomials()
        alpha = exp.alpha(p, q)
        w = generalized_weight(kernel_regularized(p, q, alpha, spec), alpha, phi.values)
    else:
        raise ConfigError(f"verify.weight: expected 'phi' or 'generalized', got {which!r}")
    n = _as_int(exp.cfg, "verify", "samples", 5000)
    samples = pairing_samples(t, spec, w, n, exp.seed, exp.delta, exp.workers)
    rep = char_functional_test(t, w, samples, _u_grid(exp), spec.cell_volume,
                               _as_float(exp.cfg, "verify", "tolerance", 0.0))
    cols = ["u", "re_emp", "im_emp", "re_theo", "im_theo", "abs_dev"]
    write_csv(exp.path("char_functional.csv"), exp.header_lines(samples=n), cols, rep.rows())
    summary = {"metadata": exp.metadata(), "samples": n, "sup_deviation": rep.sup_deviation,
               "tolerance": rep.tolerance, "passed": rep.passed, "weight": which}
    write_json(exp.path("verify_summary.json"), summary)
    print(f"CF sup deviation {rep.sup_deviation:.4g} (tolerance {rep.tolerance:.4g}, N={n}): "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return 0


def cmd_spectrum(exp):
    t, spec = exp.triplet, exp.spec
    p, q = exp.polynomials()
    if p is None:
        raise ConfigError("missing required field model.p")
    sigma2 = noise_variance(t)
    K = exp.kernel()
    m = _as_int(exp.cfg, "spectrum", "realizations", 200)
    fields = simulate_fields(K, t, spec, range(m), exp.seed, exp.delta, exp.workers, exp.wrap_tol)
    band = tuple(float(b) for b in _field(exp.cfg, "spectrum", "band", DEFAULT_BAND))
    rep = periodogram_compare(fields, p, q, sigma2, band)
    rows = ({"xi": " ".join(f"{x:.17g}" for x in np.atleast_1d(xi)), "periodogram": P, "density": f}
            for xi, P, f in zip(rep.xi, rep.periodogram, rep.density))
    hdr = exp.header_lines(realizations=m, band=list(band))
    write_csv(exp.path("periodogram.csv"), hdr, ["xi", "periodogram", "density"], rows)
    lags = _field(exp.cfg, "spectrum", "lags", [[0] * spec.d])
    acov = autocovariance_compare(fields, K, sigma2, lags)
    for r in acov:
        r["lag"] = " ".join(str(x) for x in r["lag"])
        r["lag_x"] = " ".join(f"{x:.17g}" for x in r["lag_x"])
    write_csv(exp.path("autocovariance.csv"), hdr,
              ["lag", "lag_x", "empirical", "theoretical", "rel_error", "stderr"], acov)
    write_json(exp.path("spectrum_summary.json"),
               {"metadata": exp.metadata(), "realizations": m, "band": band, "relative_l1_error": rep.error,
                "band_mean_ratio": rep.band_mean_ratio, "sigma2": sigma2})
    print(f"periodogram relative L1 error {rep.error:.4g} on band {band} with M={m}")
    return 0


COMMANDS = {"check": cmd_check, "kernel": cmd_kernel, "simulate": cmd_simulate, "pair": cmd_pair,
            "verify": cmd_verify, "spectrum": cmd_spectrum}


def build_parser():
    ap = argparse.ArgumentParser(prog="levycarma", description="Lévy-driven CARMA random fields")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="TOML or JSON experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config field")
        sp.add_argument("-o", "--outdir", help=f"output directory (overrides ${OUTDIR_ENV} and run.outdir)")
        sp.add_argument("-j", "--workers", type=int, help="worker pool size")
        sp.add_argument("--seed", type=int)
    return ap


def run(command, cfg, outdir=None):
    """Run one subcommand on an already-loaded config dict; returns the exit status."""
    exp = Experiment(cfg, outdir)
    return COMMANDS[command](exp)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        sets = list(args.set)
        if args.workers is not None:
            sets.append(f"run.workers={args.workers}")
        if args.seed is not None:
            sets.append(f"run.seed={args.seed}")
        cfg = apply_overrides(cfg, sets)
        return run(args.command, cfg, args.outdir)
    except CarmaError as exc:
        print(f"levycarma {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
