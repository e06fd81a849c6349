"""Real multivariate polynomials and the differential operators they define.

A polynomial ``P(z) = sum_a c_a z**a`` stands for the operator ``P(D)`` whose
Fourier symbol at angular frequency ``xi`` is ``P(i xi)`` under the transform
``F f(xi) = int exp(-i <xi, x>) f(x) dx``.  The adjoint operator ``P(D)*`` is
``P(-D)``.

Everything grid-based here uses DFT multipliers.  On even-length axes the
Nyquist bin is shared by ``+pi/h`` and ``-pi/h``; the multiplier there is the
average over both signs, which keeps every multiplier Hermitian so that real
inputs give real outputs.  Averaging a monomial over a sign flip of one axis
zeroes it when the exponent on that axis is odd, so the rule is applied term
by term.
"""
import re
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import optimize
from scipy.stats import qmc, norm

from . import _accel
from .errors import ConfigError, NumericalError, PaddingError, PreconditionError, SingularSymbolError


class MultiPolynomial:
    """Immutable real polynomial in ``d`` variables ``x1..xd``.

    ``terms`` maps exponent tuples to nonzero float coefficients.  The zero
    polynomial has no terms and degree -1.
    """

    __slots__ = ("_d", "_terms", "_degree")

    def __init__(self, d, terms=None):
        d = int(d)
        if d < 1:
            raise ConfigError(f"polynomial dimension must be >= 1, got {d}")
        clean = {}
        for exps, c in dict(terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != d:
                raise ConfigError(f"multi-index {exps} has length {len(exps)}, expected {d}")
            if any(e < 0 for e in exps):
                raise ConfigError(f"negative exponent in {exps}")
            c = float(c)
            if not np.isfinite(c):
                raise ConfigError(f"non-finite coefficient {c} for {exps}")
            clean[exps] = clean.get(exps, 0.0) + c
        self._terms = {k: v for k, v in sorted(clean.items()) if v != 0.0}
        self._d = d
        self._degree = max((sum(k) for k in self._terms), default=-1)

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c, d):
        return cls(d, {(0,) * d: c})

    @classmethod
    def variable(cls, k, d):
        """The coordinate polynomial ``x_{k+1}`` (``k`` is zero-based)."""
        e = [0] * d
        e[k] = 1
        return cls(d, {tuple(e): 1.0})

    @classmethod
    def sum_of_squares(cls, d):
        """``z1^2 + ... + zd^2``, the Laplacian."""
        terms = {}
        for k in range(d):
            e = [0] * d
            e[k] = 2
            terms[tuple(e)] = 1.0
        return cls(d, terms)

    # -- basic properties -------------------------------------------------
    @property
    def d(self):
        return self._d

    @property
    def terms(self):
        return dict(self._terms)

    @property
    def degree(self):
        return self._degree

    def is_zero(self):
        return not self._terms

    def coef_norm(self):
        return float(np.sqrt(sum(c * c for c in self._terms.values())))

    def zero_tol(self):
        """Threshold below which a symbol value counts as a root."""
        return 1e-9 * (1.0 + self.coef_norm())

    def homogeneous_part(self, m=None):
        m = self._degree if m is None else m
        return MultiPolynomial(self._d, {k: c for k, c in self._terms.items() if sum(k) == m})

    def is_homogeneous(self):
        return all(sum(k) == self._degree for k in self._terms)

    def packed(self):
        """``(exps, coefs)`` arrays for the accelerated kernels."""
        if not self._terms:
            return np.zeros((1, self._d), dtype=np.int64), np.zeros(1)
        exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(-1, self._d)
        return exps, np.array(list(self._terms.values()), dtype=float)

    # -- algebra ----------------------------------------------------------
    def _check_same_d(self, other):
        if other._d != self._d:
            raise ConfigError(f"dimension mismatch: {self._d} vs {other._d}")

    def _coerce(self, other):
        if isinstance(other, MultiPolynomial):
            self._check_same_d(other)
            return other
        if np.isscalar(other):
            return MultiPolynomial.constant(float(other), self._d)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for k, c in other._terms.items():
            terms[k] = terms.get(k, 0.0) + c
        return MultiPolynomial(self._d, terms)

    __radd__ = __add__

    def __neg__(self):
        return MultiPolynomial(self._d, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                terms[k] = terms.get(k, 0.0) + c1 * c2
        return MultiPolynomial(self._d, terms)

    __rmul__ = __mul__

    def __pow__(self, n):
        n = int(n)
        if n < 0:
            raise ConfigError("negative polynomial power")
        out = MultiPolynomial.constant(1.0, self._d)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, MultiPolynomial) and other._d == self._d and other._terms == self._terms

    def __hash__(self):
        return hash((self._d, tuple(self._terms.items())))

    def adjoint(self):
        """``P(-z)``: the polynomial of the formal adjoint operator."""
        return MultiPolynomial(self._d, {k: c * (-1) ** sum(k) for k, c in self._terms.items()})

    def derivative(self, k):
        terms = {}
        for e, c in self._terms.items():
            if e[k]:
                e2 = list(e)
                e2[k] -= 1
                terms[tuple(e2)] = c * e[k]
        return MultiPolynomial(self._d, terms)

    # -- evaluation -------------------------------------------------------
    def __call__(self, z):
        return eval_symbol(self, z)

    def symbol_grid(self, freqs, sign=1, nyquist=None):
        """``P(sign * i * xi)`` on the tensor grid of per-axis frequency vectors.

        ``nyquist`` lists, per axis, the index of a Nyquist bin (or ``None``);
        there the value is averaged over both frequency signs.
        """
        d = self._d
        if len(freqs) != d:
            raise ConfigError(f"expected {d} frequency axes, got {len(freqs)}")
        shape = tuple(len(f) for f in freqs)
        out = np.zeros(shape, dtype=np.complex128)
        nyq = list(nyquist) if nyquist is not None else [None] * d
        for exps, c in self._terms.items():
            term = np.array(c, dtype=np.complex128)
            for k, e in enumerate(exps):
                if e == 0:
                    continue
                fac = (sign * 1j * np.asarray(freqs[k])) ** e
                if nyq[k] is not None and e % 2 == 1:
                    fac = fac.copy()
                    fac[nyq[k]] = 0.0
                sl = [None] * d
                sl[k] = slice(None)
                term = term * fac[tuple(sl)]
            out = out + term
        return out

    # -- text format ------------------------------------------------------
    def __str__(self):
        return format_polynomial(self)

    def __repr__(self):
        return f"MultiPolynomial({self._d}, {self._terms!r})"


def nyquist_indices(shape):
    """Nyquist bin per axis (``n // 2`` for even ``n``), valid for both fftn and rfftn layouts."""
    return [n // 2 if n % 2 == 0 and n > 1 else None for n in shape]


def eval_symbol(P, z):
    """``sum_a c_a z**a`` at a complex point (or array of points, last axis ``d``)."""
    z = np.asarray(z, dtype=np.complex128)
    if z.shape[-1:] != (P.d,):
        raise ConfigError(f"point has length {z.shape[-1:]} but polynomial dimension is {P.d}")
    out = np.zeros(z.shape[:-1], dtype=np.complex128)
    for exps, c in P.terms.items():
        term = np.full(z.shape[:-1], c, dtype=np.complex128)
        for k, e in enumerate(exps):
            if e:
                term = term * z[..., k] ** e
        out = out + term
    return out[()] if out.ndim == 0 else out


def adjoint(P):
    return P.adjoint()


def psi_polynomial(alpha, d):
    """Polynomial whose symbol at ``i xi`` is ``(1 + |xi|^2)**alpha``."""
    return (MultiPolynomial.constant(1.0, d) - MultiPolynomial.sum_of_squares(d)) ** int(alpha)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def format_polynomial(P):
    """Render as ``c * x1^a1 * x2^a2 + ...``; ``parse_polynomial`` inverts it exactly."""
    if P.is_zero():
        return "0"
    parts = []
    for exps, c in P.terms.items():
        mono = " * ".join(f"x{k + 1}^{e}" if e > 1 else f"x{k + 1}" for k, e in enumerate(exps) if e)
        coef = repr(abs(c))
        body = f"{coef} * {mono}" if mono else coef
        sign = "-" if c < 0 else "+"
        parts.append((sign, body))
    first_sign, first = parts[0]
    out = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        out += f" {sign} {body}"
    return out


_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan"
_TOKEN = re.compile(rf"\s*(?:(?P<num>{_NUM})|(?P<var>[xz](?P<idx>\d*))|(?P<op>[-+*^]))")


def parse_polynomial(text, d=None):
    """Parse ``"1 - 2.5*x1^2 + x1 x2"``-style text.

    Variables are ``x1..xd`` (``z1..zd`` accepted too); a bare ``x`` means ``x1``.  Factors inside a term
    may be joined by ``*`` or whitespace.  ``d`` defaults to the largest
    variable index that appears (at least 1).
    """
    if not isinstance(text, str):
        raise ConfigError(f"polynomial must be a string, got {type(text).__name__}")
    tokens = []
    pos = 0
    stripped = text.strip()
    while pos < len(stripped):
        m = _TOKEN.match(stripped, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse polynomial {text!r} at column {pos + 1}")
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num"))))
        elif m.group("var") is not None:
            idx = int(m.group("idx") or 1)
            if idx < 1:
                raise ConfigError(f"variable index must start at 1 in {text!r}")
            tokens.append(("var", idx))
        else:
            tokens.append(("op", m.group("op")))
    if not tokens:
        raise ConfigError("empty polynomial text")

    terms = []  # list of (coef, {var: exp})
    i = 0
    sign = 1.0
    expect_term = True
    coef, mono = None, {}

    def flush():
        nonlocal coef, mono
        if coef is None and not mono:
            raise ConfigError(f"dangling operator in polynomial {text!r}")
        terms.append((sign * (1.0 if coef is None else coef), mono))
        coef, mono = None, {}

    while i < len(tokens):
        kind, val = tokens[i]
        if kind == "op" and val in "+-":
            if not expect_term:
                flush()
                sign = 1.0
            sign *= -1.0 if val == "-" else 1.0
            expect_term = True
            i += 1
            continue
        if kind == "op" and val == "*":
            if expect_term and coef is None and not mono:
                raise ConfigError(f"unexpected '*' in polynomial {text!r}")
            i += 1
            continue
        if kind == "op" and val == "^":
            raise ConfigError(f"unexpected '^' in polynomial {text!r}")
        if kind == "num":
            coef = val if coef is None else coef * val
            i += 1
        else:
            exp = 1
            if i + 2 < len(tokens) + 1 and i + 1 < len(tokens) and tokens[i + 1] == ("op", "^"):
                if i + 2 >= len(tokens) or tokens[i + 2][0] != "num":
                    raise ConfigError(f"missing exponent after '^' in polynomial {text!r}")
                e = tokens[i + 2][1]
                if e != int(e) or e < 0:
                    raise ConfigError(f"exponent must be a nonnegative integer in {text!r}")
                exp = int(e)
                i += 3
            else:
                i += 1
            mono[val] = mono.get(val, 0) + exp
        expect_term = False
    if expect_term:
        raise ConfigError(f"polynomial {text!r} ends with an operator")
    flush()

    max_idx = max((k for _, mono in terms for k in mono), default=1)
    if d is None:
        d = max_idx
    elif max_idx > d:
        raise ConfigError(f"polynomial {text!r} uses x{max_idx} but dimension is {d}")
    out = {}
    for c, mono in terms:
        e = [0] * d
        for k, p in mono.items():
            e[k - 1] += p
        out[tuple(e)] = out.get(tuple(e), 0.0) + c
    return MultiPolynomial(d, out)


# ---------------------------------------------------------------------------
# operator action on gridded functions
# ---------------------------------------------------------------------------

def check_padding(f, pad, rel_tol=1e-12):
    """Raise if ``f`` is not negligible on the outer ``pad`` cells of every axis."""
    if pad <= 0:
        return
    f = np.asarray(f)
    scale = float(np.max(np.abs(f))) if f.size else 0.0
    if scale == 0.0:
        return
    for k in range(f.ndim):
        if f.shape[k] <= 2 * pad:
            raise PaddingError(f"axis {k} has {f.shape[k]} cells, fewer than twice the padding {pad}")
        lo = np.take(f, np.arange(pad), axis=k)
        hi = np.take(f, np.arange(f.shape[k] - pad, f.shape[k]), axis=k)
        edge = max(float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
        if edge > rel_tol * scale:
            raise PaddingError(
                f"function support reaches within {pad} cells of the boundary on axis {k} "
                f"(edge magnitude {edge:.3g} vs max {scale:.3g})")


def real_freqs(shape, spacing):
    """Per-axis angular frequencies for ``rfftn`` layout (last axis halved)."""
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(shape),))
    fr = [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(shape[:-1], spacing[:-1])]
    fr.append(2.0 * np.pi * np.fft.rfftfreq(shape[-1], d=spacing[-1]))
    return fr


def apply_multiplier(f, symbol):
    """``F^{-1}(symbol * F f)`` with ``symbol`` given on the ``rfftn`` layout."""
    f = np.asarray(f, dtype=float)
    return np.fft.irfftn(symbol * np.fft.rfftn(f), s=f.shape, axes=tuple(range(f.ndim)))


def apply_operator(P, f, spacing, adjoint=False, pad=2):
    """Apply ``P(D)`` (or ``P(D)*`` when ``adjoint``) to grid samples ``f``.

    ``spacing`` is a scalar or per-axis sequence.  ``pad`` is the number of
    boundary cells on which ``f`` must be negligible; set it to 0 for
    genuinely periodic data.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != P.d:
        raise ConfigError(f"function is {f.ndim}-dimensional, polynomial is {P.d}-dimensional")
    check_padding(f, pad)
    if P.degree <= 0:
        return P.terms.get((0,) * P.d, 0.0) * f
    if adjoint:
        P = P.adjoint()
    sym = P.symbol_grid(real_freqs(f.shape, spacing), nyquist=nyquist_indices(f.shape))
    return apply_multiplier(f, sym)


# ---------------------------------------------------------------------------
# strip holomorphy and L2 bounds
# ---------------------------------------------------------------------------

@dataclass
class StripReport:
    """Outcome of sampling ``|p(i xi + eta)|`` over a box of ``xi`` and shells of ``eta``.

    The verdict is a semi-decision: ``holds_on_box`` only certifies the
    sampled box.  ``leading_form_min`` is the minimum over the real unit
    sphere of the top-degree part of ``p``; it bounds the behaviour outside
    the box when positive.
    """

    epsilon_tested: float
    min_abs_p: float
    box_halfwidth: float
    grid_resolution: int
    verdict: str
    tolerance: float = 0.0
    argmin: tuple = ()
    leading_form_min: float = float("nan")
    leading_form_elliptic: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def sphere_directions(d, n_extra=32):
    """Deterministic direction set on the unit sphere: coordinate axes, diagonals, Halton points."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    dirs = []
    eye = np.eye(d)
    dirs.extend(eye)
    dirs.extend(-eye)
    for signs in product((1.0, -1.0), repeat=min(d, 3)):
        v = np.zeros(d)
        v[: len(signs)] = signs
        dirs.append(v / np.linalg.norm(v))
    u = qmc.Halton(d, scramble=False).random(n_extra + 1)[1:]
    g = norm.ppf(np.clip(u, 1e-6, 1 - 1e-6))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    dirs.extend(g)
    return np.array(dirs)


def strip_shifts(d, epsilon, n_extra=32):
    """Real shifts ``eta``: the origin plus shells of radius eps/4, eps/2, 3eps/4, eps."""
    dirs = sphere_directions(d, n_extra)
    shells = [np.zeros((1, d))]
    for frac in (0.25, 0.5, 0.75, 1.0):
        shells.append(frac * epsilon * dirs)
    return np.concatenate(shells)


def check_strip(p, q=None, epsilon=0.5, box_halfwidth=10.0, resolution=41, refine=True):
    """Sample ``|p(i xi + eta)|`` for ``xi`` in a box and ``|eta| <= epsilon``.

    ``q`` is accepted for interface symmetry; the caller is responsible for
    cancelling common factors before the call.  Each shift's sampled minimum is
    polished by a Nelder-Mead search in ``xi`` so roots between grid nodes are
    still found.
    """
    if p.is_zero():
        raise PreconditionError("check_strip needs a nonzero polynomial p")
    d = p.d
    tol = p.zero_tol()
    etas = strip_shifts(d, epsilon)
    res = int(resolution)
    # keep the tensor grid affordable in higher dimension
    while res > 5 and res ** d > 200_000:
        res = (res + 1) // 2 + (0 if ((res + 1) // 2) % 2 else 1)
    ax = np.linspace(-box_halfwidth, box_halfwidth, res)
    xi = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    best = (np.inf, None, None)
    per_eta = []
    for eta in etas:
        vals = np.abs(eval_symbol(p, 1j * xi + eta))
        j = int(np.argmin(vals))
        per_eta.append((vals[j], xi[j], eta))
        if vals[j] < best[0]:
            best = (float(vals[j]), xi[j].copy(), eta.copy())
    if refine:
        per_eta.sort(key=lambda t: t[0])
        for v0, x0, eta in per_eta[:8]:
            fun = lambda x, eta=eta: float(np.abs(eval_symbol(p, 1j * np.asarray(x) + eta)))
            r = optimize.minimize(fun, x0, method="Nelder-Mead",
                                  options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 400 * d})
            if np.all(np.abs(r.x) <= box_halfwidth) and r.fun < best[0]:
                best = (float(r.fun), np.asarray(r.x), eta.copy())
    min_abs, arg_xi, arg_eta = best

    top = p.homogeneous_part()
    dirs = sphere_directions(d, 256)
    lead = float(np.min(np.abs(eval_symbol(top, 1j * dirs))))
    notes = []
    if min_abs < tol:
        verdict = "fails"
    elif min_abs < 1e3 * tol:
        verdict = "inconclusive"
        notes.append("minimum within three decades of the zero tolerance")
    else:
        verdict = "holds_on_box"
    if lead <= top.zero_tol():
        notes.append("leading form vanishes on the real sphere; behaviour outside the box is not controlled")
    return StripReport(float(epsilon), min_abs, float(box_halfwidth), res, verdict, tol,
                       tuple(np.concatenate([arg_xi, arg_eta]).tolist()), lead,
                       lead > top.zero_tol(), notes)


def _graded_nodes(extent, n_gauss=6, finest=1.0 / 16):
    """Symmetric Gauss-Legendre nodes/weights on ``[-extent, extent]`` with geometric panels."""
    edges = [0.0]
    e = finest
    while e < extent:
        edges.append(e)
        e *= 2.0
    edges.append(float(extent))
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (b - a) * x0 + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w0)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    return np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])


DEFAULT_EXTENTS = (4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)


@dataclass
class L2StripResult:
    estimate: float
    converged: bool
    history: list
    worst_eta: tuple


def _l2_on_box(p, q, eta, extent, n_gauss):
    d = p.d
    x, w = _graded_nodes(extent, n_gauss)
    pe, pc = p.packed()
    qe, qc = q.packed()
    total = 0.0
    if d == 1:
        vals = _accel.rational_abs2(qe, qc, pe, pc, x[:, None], eta)
        return float(np.dot(w, vals))
    # loop over the first axis to bound memory
    rest = np.stack(np.meshgrid(*([x] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    wgrids = np.meshgrid(*([w] * (d - 1)), indexing="ij")
    wrest = np.prod(np.stack([g.reshape(-1) for g in wgrids]), axis=0)
    pts = np.empty((len(rest), d))
    pts[:, 1:] = rest
    for xi0, wi in zip(x, w):
        pts[:, 0] = xi0
        vals = _accel.rational_abs2(qe, qc, pe, pc, pts, eta)
        total += wi * float(np.dot(wrest, vals))
    return total


def l2_strip_sup(p, q, epsilon, extents=DEFAULT_EXTENTS, rel_tol=0.01, n_directions=8, n_gauss=None):
    """Sup over shifts ``|eta| <= epsilon`` of the L2 norm of ``q/p`` along ``i xi + eta``.

    The norm is integrated over boxes of growing half-width; the result is
    flagged converged once two successive boxes agree to ``rel_tol``.
    """
    if p.d != q.d:
        raise ConfigError("p and q dimensions differ")
    d = p.d
    if n_gauss is None:
        n_gauss = {1: 10, 2: 8, 3: 5}.get(d, 3)
    etas = strip_shifts(d, epsilon, n_extra=n_directions)
    if d >= 3:
        # shells at the two outer radii carry the supremum for strip-regular symbols
        etas = etas[np.linalg.norm(etas, axis=1) >= 0.75 * epsilon - 1e-15]
        etas = etas[: 2 * (2 * d + 2 ** min(d, 3) + n_directions)]
    history = []
    prev = None
    worst = ()
    for ext in extents:
        vals = [_l2_on_box(p, q, eta, ext, n_gauss) for eta in etas]
        j = int(np.argmax(vals))
        est = float(np.sqrt(vals[j]))
        if not np.isfinite(est):
            raise NumericalError(f"L2 strip integral is not finite at extent {ext}")
        history.append((float(ext), est))
        worst = tuple(etas[j].tolist())
        if prev is not None and abs(est - prev) <= rel_tol * max(abs(est), 1e-300):
            return L2StripResult(est, True, history, worst)
        prev = est
    return L2StripResult(history[-1][1], False, history, worst)


def select_alpha(p, q, epsilon, max_alpha=8, extents=DEFAULT_EXTENTS):
    """Smallest ``alpha >= 1`` for which ``q / (p * psi_alpha)`` has a finite strip L2 bound."""
    strip = check_strip(p, q, epsilon)
    if strip.verdict == "fails":
        raise SingularSymbolError(f"p has a root in the strip of half-width {epsilon} "
                                  f"(min |p| = {strip.min_abs_p:.3g}); no alpha can repair that")
    for alpha in range(1, max_alpha + 1):
        res = l2_strip_sup(p * psi_polynomial(alpha, p.d), q, epsilon, extents)
        if res.converged:
            return alpha
    raise NumericalError(f"no admissible alpha found numerically (searched up to {max_alpha})")
