"""Lévy triplets, parametric Lévy measures and cell-wise noise simulation.

The characteristic exponent uses the truncation ``1_{|r| <= 1}``::

    psi(z) = i gamma z - a z^2 / 2 + int (exp(i r z) - 1 - i r z 1_{|r|<=1}) nu(dr)

Each measure family knows its density (or atoms), a tail class used for
analytic divergence tests, and a sampler for jumps above a cutoff.
"""
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigError, NumericalError, ResourceError
from .grid import GridSpec, read_grid, write_grid

QUAD_TOL = 1e-10
BLOCK_CELLS = 1 << 16
DEFAULT_JUMP_BUDGET = 50_000_000


def _quad(f, a, b, **kw):
    kw.setdefault("limit", 400)
    kw.setdefault("epsabs", QUAD_TOL)
    kw.setdefault("epsrel", 1e-10)
    val, err = integrate.quad(f, a, b, **kw)[:2]
    if not np.isfinite(val):
        raise NumericalError(f"quadrature on [{a}, {b}] returned {val} (error estimate {err})")
    return val


def _pieces(intervals, lo, hi):
    """Intersect support intervals with ``{lo < |r| <= hi}``."""
    out = []
    for a, b in intervals:
        for s_lo, s_hi in ((lo, hi), (-hi, -lo)):
            x, y = max(a, s_lo), min(b, s_hi)
            if x < y:
                out.append((x, y))
    return out


# ---------------------------------------------------------------------------
# measure families
# ---------------------------------------------------------------------------

class LevyMeasureSpec:
    """Base class: a Lévy measure given by a density on finitely many intervals.

    Subclasses set ``family`` and implement ``density``/``intervals`` or
    override the integral methods with closed forms.
    """

    family = "abstract"
    finite = True

    def params(self):
        return {}

    def to_dict(self):
        return {"family": self.family, **self.params()}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"

    # -- generic numerics -------------------------------------------------
    def intervals(self):
        return []

    def density(self, r):
        raise NotImplementedError

    def integrate(self, g, lo=0.0, hi=np.inf):
        """``int_{lo < |r| <= hi} g(r) nu(dr)``."""
        total = 0.0
        for a, b in _pieces(self.intervals(), lo, hi):
            total += _quad(lambda r: g(r) * self.density(r), a, b)
        return total

    def mass(self, lo):
        return self.integrate(lambda r: 1.0, lo, np.inf)

    def abs_moment(self, beta, lo=0.0, hi=np.inf):
        return self.integrate(lambda r: abs(r) ** beta, lo, hi)

    def first_moment(self, lo=0.0, hi=np.inf):
        return self.integrate(lambda r: r, lo, hi)

    def tail(self):
        """``("bounded", R)``, ``("exp", rate)``, ``("power", theta)`` or ``("log", kappa)``."""
        return ("bounded", 0.0)

    def exponent(self, z):
        """Compensated jump integral at real ``z``."""
        z = float(z)
        if z == 0.0:
            return 0.0j
        re = -self.mass(0.0)
        im = 0.0
        for a, b in _pieces(self.intervals(), 0.0, np.inf):
            re += self._osc(a, b, z, "cos")
            im += self._osc(a, b, z, "sin")
        im -= z * self.first_moment(0.0, 1.0)
        return complex(re, im)

    def _osc(self, a, b, z, kind):
        """``int_a^b w(r z) f(r) dr`` with oscillatory weight ``w`` in {cos, sin}."""
        if np.isinf(b) or np.isinf(a):
            # QAWF needs a semi-infinite range [a, inf)
            if np.isinf(b):
                val = integrate.quad(self.density, a, np.inf, weight=kind, wvar=z,
                                     limlst=200, epsabs=QUAD_TOL)[0]
            else:
                f = lambda r: self.density(-r)
                val = integrate.quad(f, -b, np.inf, weight=kind, wvar=z, limlst=200, epsabs=QUAD_TOL)[0]
                if kind == "sin":
                    val = -val
            if not np.isfinite(val):
                raise NumericalError(f"oscillatory quadrature failed for {self.family} at z={z}")
            return val
        return _quad(self.density, a, b, weight=kind, wvar=z)

    def sample(self, rng, n, delta):
        raise NotImplementedError


class ZeroMeasure(LevyMeasureSpec):
    family = "zero"

    def integrate(self, g, lo=0.0, hi=np.inf):
        return 0.0

    def exponent(self, z):
        return 0.0j

    def sample(self, rng, n, delta):
        return np.zeros(n)


class FiniteAtomic(LevyMeasureSpec):
    """Atoms ``r_k`` with masses ``c_k``."""

    family = "finite_atomic"

    def __init__(self, atoms, masses):
        r = np.atleast_1d(np.asarray(atoms, dtype=float))
        c = np.atleast_1d(np.asarray(masses, dtype=float))
        if r.shape != c.shape:
            raise ConfigError("finite_atomic: atoms and masses must have equal length")
        if np.any(r == 0):
            raise ConfigError("finite_atomic: an atom at 0 is not allowed")
        if np.any(c < 0) or not np.all(np.isfinite(c)) or not np.all(np.isfinite(r)):
            raise ConfigError("finite_atomic: masses must be finite and nonnegative")
        keep = c > 0
        self.atoms, self.masses = r[keep], c[keep]

    def params(self):
        return {"atoms": self.atoms.tolist(), "masses": self.masses.tolist()}

    def integrate(self, g, lo=0.0, hi=np.inf):
        sel = (np.abs(self.atoms) > lo) & (np.abs(self.atoms) <= hi)
        return float(sum(g(r) * c for r, c in zip(self.atoms[sel], self.masses[sel])))

    def tail(self):
        return ("bounded", float(np.max(np.abs(self.atoms), initial=0.0)))

    def exponent(self, z):
        r, c = self.atoms, self.masses
        comp = np.where(np.abs(r) <= 1.0, r, 0.0)
        return complex(np.sum(c * (np.exp(1j * r * z) - 1.0 - 1j * z * comp)))

    def sample(self, rng, n, delta):
        sel = np.abs(self.atoms) > delta
        r, c = self.atoms[sel], self.masses[sel]
        if n == 0 or len(r) == 0:
            return np.zeros(n)
        return r[rng.choice(len(r), size=n, p=c / c.sum())]


class CompoundPoisson(LevyMeasureSpec):
    """``nu = intensity * law`` with a normal or uniform jump law."""

    family = "compound_poisson"

    def __init__(self, intensity, jump="normal", mean=0.0, std=1.0, low=-1.0, high=1.0):
        self.intensity = float(intensity)
        if self.intensity < 0 or not np.isfinite(self.intensity):
            raise ConfigError("compound_poisson: intensity must be finite and >= 0")
        self.jump = jump
        if jump == "normal":
            if std <= 0:
                raise ConfigError("compound_poisson: std must be positive")
            self.law = stats.norm(loc=mean, scale=std)
            self._p = {"mean": float(mean), "std": float(std)}
        elif jump == "uniform":
            if not high > low:
                raise ConfigError("compound_poisson: need high > low")
            self.law = stats.uniform(loc=low, scale=high - low)
            self._p = {"low": float(low), "high": float(high)}
        else:
            raise ConfigError(f"compound_poisson: unknown jump law {jump!r} (normal, uniform)")

    def params(self):
        return {"intensity": self.intensity, "jump": self.jump, **self._p}

    def intervals(self):
        if self.jump == "normal":
            return [(-np.inf, 0.0), (0.0, np.inf)]
        return [(self._p["low"], self._p["high"])]

    def density(self, r):
        return self.intensity * self.law.pdf(r)

    def mass(self, lo):
        return self.intensity * (1.0 - (self.law.cdf(lo) - self.law.cdf(-lo)))

    def first_moment(self, lo=0.0, hi=np.inf):
        return self.intensity * (self._partial_mean(lo, hi) + self._partial_mean(-hi, -lo))

    def _partial_mean(self, a, b):
        """``E[R; a < R <= b]`` for the jump law."""
        if a >= b:
            return 0.0
        if self.jump == "normal":
            m, s = self._p["mean"], self._p["std"]
            alpha, beta = (a - m) / s, (b - m) / s
            return m * (special.ndtr(beta) - special.ndtr(alpha)) + s * (stats.norm.pdf(alpha) - stats.norm.pdf(beta))
        lo, hi = self._p["low"], self._p["high"]
        x, y = max(a, lo), min(b, hi)
        return 0.0 if x >= y else (y * y - x * x) / (2.0 * (hi - lo))

    def tail(self):
        if self.jump == "normal":
            return ("exp", np.inf)
        return ("bounded", max(abs(self._p["low"]), abs(self._p["high"])))

    def exponent(self, z):
        if self.jump == "normal":
            m, s = self._p["mean"], self._p["std"]
            cf = np.exp(1j * m * z - 0.5 * s * s * z * z)
        else:
            lo, hi = self._p["low"], self._p["high"]
            cf = 1.0 if z == 0 else (np.exp(1j * z * hi) - np.exp(1j * z * lo)) / (1j * z * (hi - lo))
        return complex(self.intensity * (cf - 1.0) - 1j * z * self.first_moment(0.0, 1.0))

    def sample(self, rng, n, delta):
        out = np.empty(0)
        while len(out) < n:
            need = n - len(out)
            draw = self.law.rvs(size=2 * need + 16, random_state=rng)
            out = np.concatenate([out, draw[np.abs(draw) > delta]])
        return out[:n]


class GammaSubordinator(LevyMeasureSpec):
    """``nu(dr) = shape * r^{-1} exp(-rate r) dr`` on ``r > 0``."""

    family = "gamma_subordinator"
    finite = False

    def __init__(self, shape, rate):
        self.shape, self.rate = float(shape), float(rate)
        if self.shape <= 0 or self.rate <= 0:
            raise ConfigError("gamma_subordinator: shape and rate must be positive")

    def params(self):
        return {"shape": self.shape, "rate": self.rate}

    def intervals(self):
        return [(0.0, np.inf)]

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r > 0, self.shape * np.exp(-self.rate * np.abs(r)) / np.where(r > 0, r, 1.0), 0.0)

    def abs_moment(self, beta, lo=0.0, hi=np.inf):
        if beta <= 0 and lo == 0:
            return np.inf
        if beta <= 0:
            return self.integrate(lambda r: r ** beta, lo, hi)
        b = self.rate
        up = 1.0 if np.isinf(hi) else special.gammainc(beta, b * hi)
        return float(self.shape * special.gamma(beta) * b ** (-beta) * (up - special.gammainc(beta, b * lo)))

    def first_moment(self, lo=0.0, hi=np.inf):
        return self.abs_moment(1.0, lo, hi)

    def mass(self, lo):
        if lo <= 0:
            return np.inf
        return float(self.shape * special.exp1(self.rate * lo))

    def tail(self):
        return ("exp", self.rate)

    def exponent(self, z):
        k, b = self.shape, self.rate
        return complex(-k * np.log(1.0 - 1j * z / b) - 1j * z * self.first_moment(0.0, 1.0))

    def sample(self, rng, n, delta):
        b = self.rate
        m_low = max(self.mass(delta) - self.mass(1.0), 0.0) if delta < 1 else 0.0
        m_high = self.mass(max(delta, 1.0))
        n_low = rng.binomial(n, m_low / (m_low + m_high)) if n else 0
        out = []
        if n_low:
            # log-uniform proposal on (delta, 1], accept with exp(-b (r - delta))
            acc = np.empty(0)
            while len(acc) < n_low:
                r = delta ** (1.0 - rng.random(2 * n_low + 16))
                keep = rng.random(len(r)) < np.exp(-b * (r - delta))
                acc = np.concatenate([acc, r[keep]])
            out.append(acc[:n_low])
        n_high = n - n_low
        if n_high:
            start = max(delta, 1.0)
            acc = np.empty(0)
            while len(acc) < n_high:
                r = start + rng.exponential(1.0 / b, 2 * n_high + 16)
                keep = rng.random(len(r)) < start / r
                acc = np.concatenate([acc, r[keep]])
            out.append(acc[:n_high])
        # the two pieces are drawn in bulk; shuffle so draws are exchangeable
        return rng.permutation(np.concatenate(out)) if out else np.zeros(0)


class TwoSidedPareto(LevyMeasureSpec):
    """``nu(dr) = scale * theta * |r|^{-1-theta} dr`` on ``|r| > rmin``, weighted per side."""

    family = "two_sided_pareto"

    def __init__(self, theta, scale=1.0, rmin=1.0, w_plus=1.0, w_minus=1.0):
        self.theta, self.scale, self.rmin = float(theta), float(scale), float(rmin)
        self.w_plus, self.w_minus = float(w_plus), float(w_minus)
        if self.theta <= 0 or self.scale < 0 or self.rmin <= 0:
            raise ConfigError("two_sided_pareto: need theta > 0, scale >= 0, rmin > 0")
        if self.w_plus < 0 or self.w_minus < 0:
            raise ConfigError("two_sided_pareto: side weights must be >= 0")

    def params(self):
        return {"theta": self.theta, "scale": self.scale, "rmin": self.rmin,
                "w_plus": self.w_plus, "w_minus": self.w_minus}

    def intervals(self):
        out = []
        if self.w_minus > 0:
            out.append((-np.inf, -self.rmin))
        if self.w_plus > 0:
            out.append((self.rmin, np.inf))
        return out

    def density(self, r):
        r = np.asarray(r, dtype=float)
        w = np.where(r > 0, self.w_plus, self.w_minus)
        a = np.abs(r)
        return np.where(a > self.rmin, w * self.scale * self.theta * a ** (-1.0 - self.theta), 0.0)

    def _radial(self, beta, lo, hi):
        """``int_{max(lo,rmin)}^{hi} r^beta theta r^{-1-theta} dr`` per unit side weight."""
        a = max(lo, self.rmin)
        if a >= hi:
            return 0.0
        e = beta - self.theta
        if np.isinf(hi):
            if e >= 0:
                return np.inf
            return self.theta * a ** e / (-e)
        if e == 0:
            return self.theta * math.log(hi / a)
        return self.theta * (hi ** e - a ** e) / e

    def abs_moment(self, beta, lo=0.0, hi=np.inf):
        return self.scale * (self.w_plus + self.w_minus) * self._radial(beta, lo, hi)

    def first_moment(self, lo=0.0, hi=np.inf):
        rad = self._radial(1.0, lo, hi)
        diff = self.w_plus - self.w_minus
        if np.isinf(rad):
            return np.nan if diff == 0 else np.inf * np.sign(diff)
        return self.scale * diff * rad

    def mass(self, lo):
        return self.abs_moment(0.0, lo)

    def tail(self):
        if self.scale == 0 or (self.w_plus == 0 and self.w_minus == 0):
            return ("bounded", 0.0)
        return ("power", self.theta)

    def sample(self, rng, n, delta):
        a = max(delta, self.rmin)
        wp, wm = self.w_plus, self.w_minus
        sign = np.where(rng.random(n) < wp / (wp + wm), 1.0, -1.0)
        r = a * rng.random(n) ** (-1.0 / self.theta)
        return sign * r


class LogPareto(LevyMeasureSpec):
    """``nu(dr) = weight * kappa * (log r)^{-1-kappa} r^{-1} dr`` on ``r > e``.

    Total mass is ``weight``; ``int log(r)^d nu`` is finite iff ``kappa > d``.
    """

    family = "log_pareto"

    def __init__(self, kappa, weight=1.0):
        self.kappa, self.weight = float(kappa), float(weight)
        if self.kappa <= 0 or self.weight < 0:
            raise ConfigError("log_pareto: need kappa > 0 and weight >= 0")

    def params(self):
        return {"kappa": self.kappa, "weight": self.weight}

    def intervals(self):
        return [(math.e, np.inf)]

    def density(self, r):
        r = np.asarray(r, dtype=float)
        safe = np.where(r > math.e, r, math.e + 1.0)
        return np.where(r > math.e, self.weight * self.kappa * np.log(safe) ** (-1 - self.kappa) / safe, 0.0)

    def integrate(self, g, lo=0.0, hi=np.inf):
        # substitute r = exp(u): int g(e^u) w kappa u^{-1-kappa} du over u > 1
        a = max(1.0, math.log(lo) if lo > 0 else -np.inf)
        b = math.log(hi) if np.isfinite(hi) else np.inf
        if a >= b:
            return 0.0
        f = lambda u: g(math.exp(min(u, 700.0))) * self.weight * self.kappa * u ** (-1 - self.kappa)
        return _quad(f, a, b)

    def abs_moment(self, beta, lo=0.0, hi=np.inf):
        if beta > 0 and np.isinf(hi) and self.weight > 0:
            return np.inf
        return super().abs_moment(beta, lo, hi)

    def first_moment(self, lo=0.0, hi=np.inf):
        if np.isinf(hi) and self.weight > 0:
            return np.inf
        return super().first_moment(lo, hi)

    def mass(self, lo):
        u = max(1.0, math.log(lo) if lo > 0 else 1.0)
        return self.weight * u ** (-self.kappa)

    def tail(self):
        return ("log", self.kappa) if self.weight > 0 else ("bounded", 0.0)

    def sample(self, rng, n, delta):
        u = rng.random(n) ** (-1.0 / self.kappa)
        with np.errstate(over="ignore"):
            r = np.exp(u)
        if np.any(~np.isfinite(r)):
            raise NumericalError("log_pareto: sampled jump overflows float64")
        return r


class Tabulated(LevyMeasureSpec):
    """Piecewise-linear density through ``(r, density)`` nodes on one side of 0."""

    family = "tabulated"

    def __init__(self, r, density, support=None):
        r = np.asarray(r, dtype=float)
        f = np.asarray(density, dtype=float)
        if r.ndim != 1 or r.shape != f.shape or len(r) < 2:
            raise ConfigError("tabulated: r and density must be equal-length vectors with >= 2 nodes")
        if np.any(np.diff(r) <= 0):
            raise ConfigError("tabulated: r must be strictly increasing")
        if r[0] < 0 < r[-1] or r[0] == 0 or r[-1] == 0:
            raise ConfigError("tabulated: table must not touch or straddle 0")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ConfigError("tabulated: density must be finite and >= 0")
        if support is not None and (support[0] < r[0] or support[1] > r[-1]):
            raise ConfigError("tabulated: declared support extends beyond the table")
        self.r, self.f = r, f

    def params(self):
        return {"r": self.r.tolist(), "density": self.f.tolist()}

    def intervals(self):
        return [(self.r[0], self.r[-1])]

    def density(self, r):
        return np.interp(r, self.r, self.f, left=0.0, right=0.0)

    def integrate(self, g, lo=0.0, hi=np.inf):
        total = 0.0
        for a, b in _pieces(self.intervals(), lo, hi):
            pts = self.r[(self.r > a) & (self.r < b)]
            total += _quad(lambda r: g(r) * self.density(r), a, b,
                           points=pts[:100] if len(pts) else None)
        return total

    def tail(self):
        return ("bounded", float(max(abs(self.r[0]), abs(self.r[-1]))))

    def _restricted(self, delta):
        r, f = self.r, self.f
        keep = np.abs(r) > delta
        cuts = []
        if r[0] < delta < r[-1]:
            cuts.append(delta)
        if r[0] < -delta < r[-1]:
            cuts.append(-delta)
        rr = np.concatenate([r[keep], cuts])
        order = np.argsort(rr)
        rr = rr[order]
        ff = np.interp(rr, r, f)
        return rr, ff

    def sample(self, rng, n, delta):
        rr, ff = self._restricted(delta)
        if len(rr) < 2:
            return np.zeros(n)
        dx = np.diff(rr)
        m = 0.5 * (ff[:-1] + ff[1:]) * dx
        cm = np.cumsum(m)
        seg = np.searchsorted(cm, rng.random(n) * cm[-1], side="right").clip(0, len(m) - 1)
        u = rng.random(n) * m[seg]
        f0, f1, h = ff[seg], ff[seg + 1], dx[seg]
        slope = (f1 - f0) / h
        # solve f0 t + slope t^2 / 2 = u for t in [0, h]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_quad = (-f0 + np.sqrt(np.maximum(f0 * f0 + 2 * slope * u, 0.0))) / slope
            t_lin = u / f0
        t = np.where(np.abs(slope) * h > 1e-12 * np.maximum(f0, 1e-300), t_quad, t_lin)
        return rr[seg] + np.clip(np.nan_to_num(t), 0.0, h)


_FAMILIES = {
    "zero": ZeroMeasure,
    "finite_atomic": FiniteAtomic,
    "compound_poisson": CompoundPoisson,
    "gamma_subordinator": GammaSubordinator,
    "two_sided_pareto": TwoSidedPareto,
    "log_pareto": LogPareto,
    "tabulated": Tabulated,
}


def levy_measure(family, **params):
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ConfigError(f"unknown Lévy measure family {family!r}; choose from {sorted(_FAMILIES)}") from None
    try:
        nu = cls(**params)
    except TypeError as exc:
        raise ConfigError(f"{family}: {exc}") from None
    if not nu.finite:
        small = nu.abs_moment(2.0, 0.0, 1.0) + nu.mass(1.0)
        if not np.isfinite(small):
            raise ConfigError(f"{family}: int min(1, r^2) nu(dr) is not finite")
    return nu


# ---------------------------------------------------------------------------
# triplets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevyTriplet:
    a: float = 0.0
    gamma: float = 0.0
    nu: LevyMeasureSpec = field(default_factory=ZeroMeasure)

    def __post_init__(self):
        if not (self.a >= 0 and np.isfinite(self.a)):
            raise ConfigError(f"Gaussian variance a must be finite and >= 0, got {self.a}")
        if not np.isfinite(self.gamma):
            raise ConfigError("drift gamma must be finite")

    @classmethod
    def from_config(cls, cfg):
        """Build from ``{"a": ..., "gamma": ..., "nu": {"family": ..., ...}}``."""
        cfg = dict(cfg or {})
        nu_cfg = dict(cfg.get("nu") or {"family": "zero"})
        family = nu_cfg.pop("family", "zero")
        return cls(float(cfg.get("a", 0.0)), float(cfg.get("gamma", 0.0)), levy_measure(family, **nu_cfg))

    def to_dict(self):
        return {"a": self.a, "gamma": self.gamma, "nu": self.nu.to_dict()}


def char_exponent(t, z):
    """``psi(z)`` for scalar or array ``z``."""
    zs = np.asarray(z, dtype=float)
    out = np.empty(zs.shape, dtype=complex)
    for idx, zz in np.ndenumerate(zs):
        out[idx] = 1j * t.gamma * zz - 0.5 * t.a * zz * zz + t.nu.exponent(float(zz))
    return out[()] if out.ndim == 0 else out


class Weight:
    """Weight ``w(r)`` for tail integrals with declared growth ``r^power * log(r)^log_power``.

    The growth class is what the divergence tests use; ``func`` is only
    integrated when the test says the integral is finite.
    """

    def __init__(self, func, power=0.0, log_power=0.0, name="custom"):
        self.func, self.power, self.log_power, self.name = func, float(power), float(log_power), name

    @classmethod
    def power_law(cls, beta):
        return cls(lambda r: abs(r) ** beta, beta, 0.0, f"|r|^{beta}")

    @classmethod
    def log_power_law(cls, d):
        return cls(lambda r: math.log(abs(r)) ** d, 0.0, d, f"log|r|^{d}")

    @classmethod
    def indicator(cls):
        return cls(lambda r: 1.0, 0.0, 0.0, "1")


def tail_diverges(nu, weight):
    """Analytic test: is ``int_{|r|>1} w(r) nu(dr)`` infinite for this family's tail?"""
    kind, par = nu.tail()
    if kind in ("bounded", "exp"):
        return False
    if kind == "power":
        return weight.power >= par
    if kind == "log":
        return weight.power > 0 or (weight.power == 0 and weight.log_power >= par)
    raise ConfigError(f"unknown tail class {kind!r}")


def nu_integral(nu, weight):
    """``int_{|r|>1} w(r) nu(dr)``; ``inf`` when the family's divergence test fires."""
    if tail_diverges(nu, weight):
        return np.inf
    if weight.name.startswith("|r|^") and weight.log_power == 0:
        return float(nu.abs_moment(weight.power, 1.0))
    kind, _ = nu.tail()
    if isinstance(nu, LogPareto) and weight.power == 0 and weight.name.startswith("log"):
        return nu.weight * nu.kappa / (nu.kappa - weight.log_power)
    if kind == "power" and isinstance(nu, TwoSidedPareto):
        return float((nu.w_plus + nu.w_minus) * nu.scale * _pareto_side(nu.theta, max(nu.rmin, 1.0), weight))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return float(nu.integrate(lambda r: weight.func(abs(r)), 1.0, np.inf))


PARETO_CUTOFF_LOG = math.log(1e12)


def _pareto_side(theta, rmin, weight):
    """``int_{rmin}^inf w(r) theta r^{-1-theta} dr`` for a weight of declared growth.

    With ``r = exp(u)`` the integrand decays like ``exp(-(theta - power) u)``,
    which can be very slow near the threshold.  The range ``u <= U`` is
    integrated numerically; beyond ``U`` the weight is replaced by its growth
    model ``C r^power log(r)^k`` matched at ``U`` and integrated in closed form.
    """
    a = math.log(rmin)
    U = max(PARETO_CUTOFF_LOG, a + 1.0)
    f = lambda u: weight.func(math.exp(u)) * theta * math.exp(-theta * u)
    # unit panels in u: the weights are piecewise smooth with kinks at grid levels
    edges = np.append(np.arange(a, U, 1.0), U)
    # tabulated weights have many kinks per panel; quad's accuracy warnings there are expected
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        body = sum(_quad(f, lo, hi, limit=200, epsrel=1e-8) for lo, hi in zip(edges[:-1], edges[1:]))
    gam, k = weight.power, weight.log_power
    rate = theta - gam
    base = math.exp(gam * U) * U ** k
    C = weight.func(math.exp(U)) / base if base > 0 else 0.0
    tail = C * theta * special.gammaincc(k + 1, rate * U) * special.gamma(k + 1) / rate ** (k + 1)
    return body + tail


@dataclass
class CellMoments:
    mean: float
    variance: float
    mean_defined: bool
    variance_defined: bool


def cell_moments(t, v):
    """Per-cell mean and variance of ``Delta L`` for cell volume ``v``."""
    first_tail = t.nu.abs_moment(1.0, 1.0)
    mean_ok = bool(np.isfinite(first_tail))
    mean = v * (t.gamma + t.nu.first_moment(1.0)) if mean_ok else np.nan
    second = t.nu.abs_moment(2.0)
    var_ok = bool(np.isfinite(second))
    var = v * (t.a + second) if var_ok else np.nan
    return CellMoments(float(mean), float(var), mean_ok, var_ok)


def small_jump_cf_bound(t, delta, v, zmax):
    """Bound on the CF error from replacing jumps ``|r| <= delta`` by a Gaussian.

    Both laws share mean and variance, so the third-order Taylor remainder gives
    ``v * zmax^3 / 6 * int_{|r|<=delta} |r|^3 nu(dr)`` for each, doubled.
    """
    m3 = t.nu.abs_moment(3.0, 0.0, delta)
    return float(2.0 * v * zmax ** 3 / 6.0 * m3)


# ---------------------------------------------------------------------------
# cell noise
# ---------------------------------------------------------------------------

@dataclass
class CellNoise:
    spec: GridSpec
    values: np.ndarray
    seed: int
    stream: int
    delta: float
    triplet: dict = field(default_factory=dict)

    def meta(self):
        return {"seed": self.seed, "stream": self.stream, "delta": self.delta, "triplet": self.triplet}

    def save(self, path, extra=None):
        write_grid(path, "cell_noise", self.spec, self.values, {**self.meta(), **(extra or {})})

    @classmethod
    def load(cls, path):
        kind, spec, values, meta = read_grid(path)
        if kind != "cell_noise":
            raise ConfigError(f"{path}: expected a cell_noise grid, found {kind!r}")
        return cls(spec, values, int(meta["seed"]), int(meta["stream"]), float(meta["delta"]),
                   meta.get("triplet", {}))

    @classmethod
    def point_mass(cls, spec, index, value=1.0):
        """Noise with a single jump ``value`` at the cell ``index``; useful as a probe."""
        values = np.zeros(spec.shape)
        values[tuple(index)] = value
        return cls(spec, values, -1, -1, 0.0, {})


def block_rng(seed, stream, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def simulate_cells(t, spec, delta=0.01, seed=0, stream=0, jump_budget=DEFAULT_JUMP_BUDGET, workers=1):
    """Independent infinitely divisible increments on every cell of ``spec``.

    Jumps above ``delta`` are drawn exactly as a compound Poisson sum; the
    compensated jumps below ``delta`` are replaced by a Gaussian of matching
    variance.  Randomness is keyed by ``(seed, stream, block)`` where a block
    is a run of ``BLOCK_CELLS`` consecutive cells in row-major order, so the
    output does not depend on ``workers``.
    """
    if not 0 < delta <= 1:
        raise ConfigError(f"cutoff delta must lie in (0, 1], got {delta}")
    v = spec.cell_volume
    nu = t.nu
    lam = nu.mass(delta)
    if not np.isfinite(lam):
        raise ConfigError(f"nu(|r| > {delta}) is not finite for family {nu.family}")
    sigma2_small = nu.abs_moment(2.0, 0.0, delta)
    gamma_eff = t.gamma - (nu.first_moment(delta, 1.0) if delta < 1 else 0.0)
    expected_jumps = lam * v * spec.size
    if expected_jumps > jump_budget:
        raise ResourceError(f"expected {expected_jumps:.3g} jumps exceeds the budget {jump_budget:.3g}; "
                            "raise delta or the budget")
    loc = gamma_eff * v
    scale = math.sqrt((t.a + sigma2_small) * v)
    n = spec.size
    out = np.empty(n)
    n_blocks = (n + BLOCK_CELLS - 1) // BLOCK_CELLS

    def fill(b):
        lo, hi = b * BLOCK_CELLS, min(n, (b + 1) * BLOCK_CELLS)
        rng = block_rng(seed, stream, b)
        vals = loc + scale * rng.standard_normal(hi - lo)
        if lam > 0:
            counts = rng.poisson(lam * v, hi - lo)
            total = int(counts.sum())
            if total:
                jumps = nu.sample(rng, total, delta)
                cell = np.repeat(np.arange(hi - lo), counts)
                vals = vals + np.bincount(cell, weights=jumps, minlength=hi - lo)
        out[lo:hi] = vals

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(fill, range(n_blocks)))
    else:
        for b in range(n_blocks):
            fill(b)
    return CellNoise(spec, out.reshape(spec.shape), int(seed), int(stream), float(delta), t.to_dict())
