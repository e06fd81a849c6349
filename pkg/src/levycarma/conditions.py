"""Existence-condition checkers.

Each checker returns a :class:`ConditionEntry` with a verdict in
``{"holds", "fails", "not_applicable", "inconclusive"}``.  Finite-versus-
infinite decisions come from the analytic tail class of the Lévy measure
combined with the asymptotic growth class of the weight (derived from the
kernel's tail envelope); quadrature only supplies the value once the
integral is known to be finite.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import KernelFunctionals
from .levy import Weight, cell_moments, nu_integral, tail_diverges
from .poly import check_strip, l2_strip_sup, sphere_directions

DEFAULT_R = (0.5, 1.0, 2.0)
DEFAULT_EPS_ELLIPTIC = 0.01
SIGN_TOL = 1e-12
MEAN_TOL = 1e-12

VERDICTS = ("holds", "fails", "not_applicable", "inconclusive")


@dataclass
class ConditionEntry:
    name: str
    verdict: str
    values: dict = field(default_factory=dict)
    tolerance: float = 0.0
    tail: str = ""
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ConfigError(f"bad verdict {self.verdict!r}")

    def to_dict(self):
        return {"name": self.name, "verdict": self.verdict, "values": _jsonable(self.values),
                "tolerance": self.tolerance, "tail": self.tail, "notes": list(self.notes)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class ConditionReport:
    """Ordered collection of entries; each condition name appears once."""

    def __init__(self, entries=()):
        self._entries = {}
        for e in entries:
            self.add(e)

    def add(self, entry):
        if entry.name in self._entries:
            raise ConfigError(f"condition {entry.name!r} reported twice")
        self._entries[entry.name] = entry

    def __getitem__(self, name):
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def to_dict(self):
        return {"conditions": [e.to_dict() for e in self]}

    def table(self):
        rows = [("condition", "verdict", "detail")]
        for e in self:
            detail = "; ".join(f"{k}={_fmt(v)}" for k, v in e.values.items())
            rows.append((e.name, e.verdict, detail))
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        return "\n".join(f"{a:<{w0}}  {b:<{w1}}  {c}" for a, b, c in rows)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _has_jumps(t):
    return t.nu.family != "zero" and t.nu.mass(1.0) > 0


def _kernel_integrable(K):
    env = K.envelope
    if env.kind == "exponential":
        return True
    if env.kind == "power":
        return env.rate > K.d
    return None


def _weighted_integral(t, F, which):
    g = F.growth(which)
    fn = {"h": F.h, "w1": F.w1, "w2": F.w2, "dcor": F.dcor}[which]
    if g.infinite:
        return np.inf, g
    return nu_integral(t.nu, Weight(fn, g.power, g.log_power, which)), g


def _tail_note(K, t):
    env = K.envelope
    return (f"kernel envelope {env.kind}(c={env.c:.4g}, rate={env.rate:.4g}); "
            f"nu tail class {t.nu.tail()[0]}")


def check_sufficient_T1(K, t, R_list=DEFAULT_R):
    """Integrability of ``h_R(|r|)`` against ``nu`` on ``|r| > 1`` for every tested radius."""
    name = "sufficient_h_R"
    if K.envelope.kind == "none":
        return ConditionEntry(name, "inconclusive", notes=["kernel has no tail envelope"])
    integrable = _kernel_integrable(K)
    l1_grid = float(np.sum(np.abs(K.values)) * K.spec.cell_volume)
    if not integrable:
        return ConditionEntry(name, "not_applicable", {"grid_L1": l1_grid}, tail=_tail_note(K, t),
                              notes=["kernel tail is not integrable; the condition needs G in L1"])
    vals = {}
    if not _has_jumps(t):
        return ConditionEntry(name, "holds", {"R": list(R_list), "integral": [0.0] * len(R_list),
                                              "grid_L1": l1_grid},
                              tail=_tail_note(K, t), notes=["no jumps above 1: the integral is 0"])
    finite = True
    for R in R_list:
        F = KernelFunctionals(K, R)
        val, g = _weighted_integral(t, F, "h")
        vals[f"R={R:g}"] = {"integral": val, "growth_power": g.power, "growth_log_power": g.log_power}
        finite &= bool(np.isfinite(val))
    vals["grid_L1"] = l1_grid
    return ConditionEntry(name, "holds" if finite else "fails", vals, tail=_tail_note(K, t))


def _mean_zero(t):
    m = cell_moments(t, 1.0)
    if not m.mean_defined:
        return None, m
    return abs(m.mean) <= MEAN_TOL * (1.0 + abs(t.gamma)), m


def check_sufficient_T38(K, t, R=1.0):
    """Mean-zero noise plus integrability of the two layer-cake weights against ``nu``."""
    name = "sufficient_mean_zero"
    zero, m = _mean_zero(t)
    if zero is None:
        return ConditionEntry(name, "not_applicable", {"mean": "undefined"},
                              notes=["first moment of the noise is undefined"])
    if not zero:
        return ConditionEntry(name, "not_applicable", {"mean": m.mean}, MEAN_TOL,
                              notes=["first moment of the noise is nonzero"])
    if K.envelope.kind == "none":
        return ConditionEntry(name, "inconclusive", notes=["kernel has no tail envelope"])
    if not _has_jumps(t):
        return ConditionEntry(name, "holds", {"R": R, "w1": 0.0, "w2": 0.0, "mean": m.mean},
                              tail=_tail_note(K, t), notes=["no jumps above 1"])
    F = KernelFunctionals(K, R)
    v1, g1 = _weighted_integral(t, F, "w1")
    v2, g2 = _weighted_integral(t, F, "w2")
    ok = bool(np.isfinite(v1) and np.isfinite(v2))
    return ConditionEntry(name, "holds" if ok else "fails",
                          {"R": R, "w1": v1, "w2": v2, "w1_growth": g1.power, "w2_growth": g2.power,
                           "mean": m.mean}, MEAN_TOL, _tail_note(K, t))


def check_necessary(K, t, R=1.0):
    """``int_{|r|>1} d_{G_R}(1/|r|) nu(dr) < inf`` for kernels of one sign."""
    name = "necessary_distribution"
    g = K.values
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    one_sign = bool(np.all(g >= -SIGN_TOL * scale) or np.all(g <= SIGN_TOL * scale))
    if not one_sign:
        return ConditionEntry(name, "not_applicable", tolerance=SIGN_TOL, notes=["kernel changes sign"])
    if K.envelope.kind == "none":
        return ConditionEntry(name, "inconclusive", notes=["kernel has no tail envelope"])
    if not _has_jumps(t):
        return ConditionEntry(name, "holds", {"R": R, "integral": 0.0}, tail=_tail_note(K, t))
    F = KernelFunctionals(K, R)
    val, gr = _weighted_integral(t, F, "dcor")
    if np.isfinite(val):
        return ConditionEntry(name, "holds", {"R": R, "integral": val, "growth_power": gr.power},
                              tail=_tail_note(K, t), notes=["necessary condition holds"])
    return ConditionEntry(name, "fails", {"R": R, "integral": val, "growth_power": gr.power},
                          tail=_tail_note(K, t), notes=["no generalized process exists"])


def check_mild(p, q, epsilon, t):
    """Strip L2 bound on ``q/p`` together with a finite ``log^d`` moment of ``nu``."""
    name = "mild_solution"
    d = p.d
    strip = check_strip(p, q, epsilon)
    vals = {"strip_verdict": strip.verdict, "strip_min_abs_p": strip.min_abs_p}
    if strip.verdict == "fails":
        return ConditionEntry(name, "fails", vals, strip.tolerance, notes=["p vanishes in the strip"])
    l2 = l2_strip_sup(p, q, epsilon)
    vals.update({"l2_sup": l2.estimate, "l2_converged": l2.converged})
    w = Weight.log_power_law(d)
    log_moment = np.inf if tail_diverges(t.nu, w) else nu_integral(t.nu, w)
    vals["log_moment"] = log_moment
    ok = l2.converged and np.isfinite(log_moment)
    verdict = "holds" if ok else "fails"
    if ok and strip.verdict != "holds_on_box":
        verdict = "inconclusive"
    return ConditionEntry(name, verdict, vals, 0.01, f"nu tail class {t.nu.tail()[0]}")


def check_elliptic(p, t, epsilon=DEFAULT_EPS_ELLIPTIC):
    """Homogeneous elliptic ``p`` of order ``m``: ``d > 2m``, mean zero, finite ``|r|^{d/(d-m)+eps}`` moment."""
    name = "elliptic_homogeneous"
    if p.is_zero() or not p.is_homogeneous():
        raise ConfigError("check_elliptic needs a nonzero homogeneous polynomial")
    d, m = p.d, p.degree
    dirs = sphere_directions(d, 512)
    min_abs = float(np.min(np.abs(p(1j * dirs))))
    if min_abs <= p.zero_tol():
        raise ConfigError(f"p is not elliptic: its symbol vanishes on the unit sphere (min {min_abs:.3g})")
    vals = {"d": d, "m": m, "min_abs_symbol_on_sphere": min_abs}
    if not d > 2 * m:
        return ConditionEntry(name, "fails", vals, notes=[f"needs d > 2m, got d={d}, m={m}"])
    beta = d / (d - m) + epsilon
    moment = nu_integral(t.nu, Weight.power_law(beta))
    vals.update({"beta": beta, "moment": moment})
    zero, mm = _mean_zero(t)
    vals["mean"] = mm.mean if mm.mean_defined else "undefined"
    ok = bool(np.isfinite(moment)) and bool(zero)
    return ConditionEntry(name, "holds" if ok else "fails", vals, epsilon, f"nu tail class {t.nu.tail()[0]}")


def run_checks(t, K=None, p=None, q=None, epsilon=0.5, R_list=DEFAULT_R, eps_elliptic=DEFAULT_EPS_ELLIPTIC):
    """Run every checker whose inputs are available and collect a report."""
    rep = ConditionReport()
    if p is not None and q is not None:
        rep.add(check_mild(p, q, epsilon, t))
        if p.is_homogeneous() and not p.is_zero():
            try:
                rep.add(check_elliptic(p, t, eps_elliptic))
            except ConfigError as exc:
                rep.add(ConditionEntry("elliptic_homogeneous", "not_applicable", notes=[str(exc)]))
    if K is not None:
        rep.add(check_sufficient_T1(K, t, R_list))
        rep.add(check_sufficient_T38(K, t, R_list[len(R_list) // 2]))
        rep.add(check_necessary(K, t, R_list[len(R_list) // 2]))
    return rep
