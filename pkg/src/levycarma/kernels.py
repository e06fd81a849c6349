"""Kernels G on grids: FFT synthesis from rational symbols and closed forms.

``kernel_fft`` samples ``F^{-1}(q(i.)/p(i.))``.  A plain inverse DFT of the
symbol on the dual grid aliases the symbol's slow decay back into the kernel,
so by default the symbol is summed over ``J`` periodic images per axis and
the result is Richardson-extrapolated between ``J`` and ``J - 1``.  With
``images=0`` the kernel is the exact inverse of the discrete multiplier, which
is what the pathwise identities in :mod:`levycarma.field` rely on.

``kernel_functionals`` implements the ball-averaged kernel, its distribution
function and the layer-cake transforms that enter the existence conditions.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from . import _accel
from .errors import (ConfigError, GridMismatchError, NotAFunctionError, NumericalError,
                     PreconditionError, SingularSymbolError, StationarityError, WrapAroundError)
from .grid import GridSpec, read_grid, write_grid
from .poly import MultiPolynomial, format_polynomial, l2_strip_sup, nyquist_indices, psi_polynomial, sphere_directions

IMAGE_BUDGET = 3e8
MAX_IMAGES = 64


# ---------------------------------------------------------------------------
# envelope and kernel container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Tail bound ``|G(x)| <= c exp(-rate |x|)`` or ``c |x|^{-rate}`` for ``|x| >= r0``."""

    kind: str = "none"
    c: float = 0.0
    rate: float = 0.0
    r0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exponential", "power", "none"):
            raise ConfigError(f"unknown envelope kind {self.kind!r}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "exponential":
            return self.c * np.exp(-self.rate * r)
        if self.kind == "power":
            with np.errstate(divide="ignore"):
                return self.c * np.where(r > 0, r, np.inf) ** (-self.rate)
        return np.full(r.shape, np.nan)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "rate": self.rate, "r0": self.r0}

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(d.get("kind", "none"), float(d.get("c", 0.0)), float(d.get("rate", 0.0)), float(d.get("r0", 0.0)))


@dataclass
class KernelGrid:
    spec: GridSpec
    values: np.ndarray
    envelope: Envelope = field(default_factory=Envelope)
    provenance: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.spec.d

    def with_envelope(self, env):
        return KernelGrid(self.spec, self.values, env, dict(self.provenance))

    def symbol(self):
        """``v * fftn`` of the samples laid out with the origin at index 0."""
        return self.spec.cell_volume * np.fft.fftn(to_fft_layout(self.values, self.spec))

    def save(self, path):
        write_grid(path, "kernel", self.spec, self.values,
                   {"envelope": self.envelope.to_dict(), "provenance": self.provenance})

    @classmethod
    def load(cls, path):
        kind, spec, values, meta = read_grid(path)
        if kind != "kernel":
            raise ConfigError(f"{path}: expected a kernel grid, found {kind!r}")
        return cls(spec, values, Envelope.from_dict(meta.get("envelope")), meta.get("provenance", {}))

    def radial_profile(self, nbins=64):
        """Mean and max of ``G`` in radial bins: ``(r_mid, mean, max)`` arrays."""
        r = self.spec.radii().ravel()
        g = self.values.ravel()
        edges = np.linspace(0, r.max() * (1 + 1e-12), nbins + 1)
        idx = np.clip(np.digitize(r, edges) - 1, 0, nbins - 1)
        cnt = np.bincount(idx, minlength=nbins)
        mean = np.bincount(idx, weights=g, minlength=nbins) / np.maximum(cnt, 1)
        mx = np.full(nbins, -np.inf)
        np.maximum.at(mx, idx, g)
        keep = cnt > 0
        return 0.5 * (edges[1:] + edges[:-1])[keep], mean[keep], mx[keep]

    def write_profile_csv(self, path, nbins=64, header_lines=()):
        r, mean, mx = self.radial_profile(nbins)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["r", "mean", "max"])
            for row in zip(r, mean, mx):
                w.writerow([f"{x:.17g}" for x in row])


def _origin_offsets(spec):
    """Integer offsets ``c`` with ``origin = -c * h``; the grid must contain 0 as a sample."""
    offs = []
    for o, h, n in zip(spec.origin, spec.spacing, spec.shape):
        c = -o / h
        ci = int(round(c))
        if abs(c - ci) > 1e-9 or not 0 <= ci < n:
            raise GridMismatchError("kernel grids must contain x = 0 as a sample (origin a multiple of spacing)")
        offs.append(ci)
    return offs


def to_fft_layout(values, spec):
    """Roll samples so that x = 0 sits at index 0 on every axis."""
    return np.roll(values, [-c for c in _origin_offsets(spec)], axis=tuple(range(spec.d)))


def from_fft_layout(values, spec):
    return np.roll(values, _origin_offsets(spec), axis=tuple(range(spec.d)))


def _boundary_shell(shape):
    mask = np.zeros(shape, dtype=bool)
    for k in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[k] = 0
        mask[tuple(sl)] = True
        sl[k] = -1
        mask[tuple(sl)] = True
    return mask


def fit_envelope(values, spec, noise_floor=1e-12, shell=0.1, abs_floor=0.0):
    """Fit an exponential or power tail bound on the outer shell of the inscribed ball.

    ``log|G|`` is regressed against ``|x|`` and against ``log|x|``; the model
    with the smaller residual wins and its constant is raised until every
    shell sample lies under the bound.  Samples below ``noise_floor * max|G|``
    (or below ``abs_floor``) are ignored; if the outer shell is entirely below the floor the band moves
    inward to the outermost radii that are still resolved.
    """
    r = spec.radii().ravel()
    g = np.abs(values).ravel()
    gmax = float(g.max()) if g.size else 0.0
    if gmax == 0.0:
        return Envelope("exponential", 0.0, 1.0, 0.0)
    R_in = min(0.5 * n * h for n, h in zip(spec.shape, spec.spacing))
    floor = max(noise_floor * gmax, abs_floor)
    resolved = (g > floor) & (r > 0) & (r < R_in)
    if resolved.sum() < 4:
        return Envelope("none")
    r_top = min(R_in, float(r[resolved].max()) + 1e-12)
    band = resolved & (r >= (1.0 - shell) * r_top) & (r <= r_top)
    if band.sum() < 4:
        band = resolved & (r >= 0.5 * r_top)
    rb, gb = r[band], np.log(g[band])
    fits = []
    for kind, xs in (("exponential", rb), ("power", np.log(rb))):
        if np.ptp(xs) == 0:
            continue
        A = np.stack([np.ones_like(xs), -xs], axis=1)
        coef, *_ = np.linalg.lstsq(A, gb, rcond=None)
        resid = float(np.sum((A @ coef - gb) ** 2))
        if coef[1] > 0:
            fits.append((resid, kind, coef[1]))
    if not fits:
        return Envelope("none")
    _, kind, rate = min(fits)
    r0 = float(rb.min())
    shell_pts = (r >= r0) & resolved
    shape_fn = (lambda rr: np.exp(-rate * rr)) if kind == "exponential" else (lambda rr: rr ** (-rate))
    c = float(np.max(g[shell_pts] / shape_fn(r[shell_pts]))) * (1.0 + 1e-6)
    return Envelope(kind, c, float(rate), r0)


# ---------------------------------------------------------------------------
# FFT synthesis
# ---------------------------------------------------------------------------

def _symbol_decay(p, q):
    return p.degree - q.degree


def _check_l2(p, q):
    """Raise ``NotAFunctionError`` when ``q(i.)/p(i.)`` is not square integrable."""
    s = _symbol_decay(p, q)
    d = p.d
    if s <= 0 and not q.is_zero():
        top_q = q.homogeneous_part()
        if s < 0 or np.min(np.abs(top_q(1j * sphere_directions(d, 64)))) > top_q.zero_tol():
            raise NotAFunctionError("symbol does not decay: the kernel is a distribution, not a function")
    top = p.homogeneous_part()
    elliptic = np.min(np.abs(top(1j * sphere_directions(d, 256)))) > top.zero_tol()
    if elliptic:
        if 2 * s <= d:
            raise NotAFunctionError(f"|q/p|^2 decays like |xi|^(-{2 * s}) which is not integrable in d={d}")
        return
    res = l2_strip_sup(p, q, 0.0, n_directions=0)
    if not res.converged:
        raise NotAFunctionError("q/p is not square integrable along the real axis (numerical check)")


def _auto_images(shape):
    n = int(np.prod(shape))
    J = 1
    while J < MAX_IMAGES and (2 * (J + 1) + 1) ** len(shape) * n <= IMAGE_BUDGET:
        J += 1
    return J


def _rich_exponents(d, s):
    """Error exponents of the image-sum truncation away from and at the origin."""
    e = d - s - (2 if s % 2 == 0 else 1)
    e0 = d - s - (s % 2)
    return e, e0


def _richardson(gJ, gJ1, J, e):
    a, b = (2 * J - 1) ** e, (2 * J + 1) ** e
    return (gJ * a - gJ1 * b) / (a - b)


def kernel_fft(p, q, spec, images="auto", extrapolate=True, check_extent=True, wrap_tol=1e-6,
               envelope=None):
    """Sample ``F^{-1}(q(i.)/p(i.))`` on ``spec`` (which must contain x = 0).

    ``images`` is the number of periodic symbol images summed per axis
    (``"auto"`` picks the largest affordable count, ``0`` gives the exact
    inverse of the discrete multiplier).  The maximal difference between the
    two finest image levels is stored as ``provenance["truncation_error"]``.
    """
    if p.d != spec.d or q.d != spec.d:
        raise GridMismatchError(f"polynomial dimension {p.d}/{q.d} does not match grid dimension {spec.d}")
    if p.is_zero():
        raise SingularSymbolError("p is the zero polynomial")
    _check_l2(p, q)
    d = spec.d
    v = spec.cell_volume
    freqs = spec.freqs()
    nyq = nyquist_indices(spec.shape)
    p_grid = p.symbol_grid(freqs, nyquist=nyq)
    tol = p.zero_tol()
    if np.min(np.abs(p_grid)) < tol:
        raise SingularSymbolError("p(i xi) vanishes on the sampled frequency grid")
    s = _symbol_decay(p, q)
    J = _auto_images(spec.shape) if images == "auto" else int(images)
    if J < 0:
        raise ConfigError("images must be >= 0")
    prov = {"construction": "fft", "p": format_polynomial(p), "q": format_polynomial(q),
            "images": J, "decay": s}

    jump = None
    origin_singular = s < d or (s == d and d >= 2)
    if J == 0:
        S = q.symbol_grid(freqs, nyquist=nyq) / p_grid
        G = np.fft.ifftn(S)
        trunc = float("nan")
        far_noise = 0.0
    else:
        pn, qn = p, q
        if d == 1 and s == 1:
            # remove the kernel's jump at 0 with a known causal exponential
            L = spec.shape[0] * spec.spacing[0]
            mu = max(1.0, 40.0 / L)
            c = q.terms[(q.degree,)] / p.terms[(p.degree,)]
            z = MultiPolynomial.variable(0, 1)
            qn = q * (mu + z) - c * p
            pn = p * (mu + z)
            jump = (c, mu)
        pe, pc = pn.packed()
        qe, qc = qn.packed()
        SJ, SJ1 = _accel.image_sum(qe, qc, pe, pc, freqs, spec.spacing, J)
        if not (np.all(np.isfinite(SJ)) and np.all(np.isfinite(SJ1))):
            raise SingularSymbolError("p(i xi) vanishes at an image frequency")
        GJ = np.fft.ifftn(SJ)
        GJ1 = np.fft.ifftn(SJ1)
        diff = np.abs(GJ.real - GJ1.real)
        if origin_singular:
            diff.flat[0] = 0.0
        trunc = float(np.max(diff) / v)
        far = from_fft_layout(diff, spec)[spec.radii() >= 0.25 * min(spec.extent)]
        far_noise = float(np.max(far) / v) if far.size else 0.0
        s_eff = 2 if jump else s
        e, e0 = _rich_exponents(d, s_eff)
        if extrapolate and J >= 1 and e < 0:
            G = _richardson(GJ, GJ1, J, e)
            if e0 < 0:
                G.flat[0] = _richardson(GJ.flat[0], GJ1.flat[0], J, e0)
            else:
                G.flat[0] = GJ.flat[0]
            prov["richardson_exponents"] = [e, e0]
        else:
            G = GJ
    imag = float(np.max(np.abs(G.imag)))
    scale = float(np.max(np.abs(G.real))) or 1.0
    if imag > 1e-10 * scale:
        raise NumericalError(f"inverse DFT has imaginary residue {imag:.3g} (relative {imag / scale:.3g})")
    G = G.real / v
    if jump:
        c, mu = jump
        t = np.fft.fftfreq(spec.shape[0], d=1.0 / (spec.shape[0] * spec.spacing[0]))
        t = np.round(t / spec.spacing[0]) * spec.spacing[0]
        G = G + np.where(t >= 0, c * np.exp(-mu * np.maximum(t, 0.0)), 0.0)
        prov["jump_subtraction"] = {"c": c, "mu": mu}
    if origin_singular and J > 0:
        S0 = complex(q(np.zeros(d)) / p(np.zeros(d))).real
        G.flat[0] = 0.0
        G.flat[0] = (S0 - v * G.sum()) / v
        prov["origin"] = "mass_conserving"
    prov["truncation_error"] = trunc
    values = from_fft_layout(G, spec)

    shell = _boundary_shell(spec.shape)
    ratio = float(np.max(np.abs(values[shell])) / max(float(np.max(np.abs(values))), 1e-300))
    prov["boundary_ratio"] = ratio
    if check_extent and ratio > wrap_tol:
        raise WrapAroundError(f"kernel at the grid boundary is {ratio:.3g} of its maximum "
                              f"(limit {wrap_tol:g}); enlarge the grid")
    prov["far_field_truncation_error"] = far_noise
    env = envelope if envelope is not None else fit_envelope(values, spec, abs_floor=10.0 * far_noise)
    return KernelGrid(spec, values, env, prov)


def kernel_regularized(p, q, alpha, spec, images=0, **kw):
    """Kernel of ``q(-i xi) / ((1 + |xi|^2)^alpha p(-i xi))``.

    The default ``images=0`` makes the sampled kernel the exact inverse of the
    discrete multiplier, so pairing identities hold to roundoff.
    """
    alpha = int(alpha)
    if alpha < 0:
        raise ConfigError("alpha must be >= 0")
    P = p.adjoint() * psi_polynomial(alpha, p.d)
    Q = q.adjoint()
    kw.setdefault("check_extent", False)
    K = kernel_fft(P, Q, spec, images=images, **kw)
    K.provenance.update({"construction": "regularized", "alpha": alpha,
                         "p": format_polynomial(p), "q": format_polynomial(q)})
    return K


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

class Carma1dStateSpace:
    """``dY = A Y dt + e_p dL`` with output ``b^T Y``.

    ``a`` holds ``a_1..a_p`` of ``a(z) = z^p + a_1 z^{p-1} + ... + a_p`` and
    ``b`` holds ``b_0..b_q`` of ``b(z) = b_0 + b_1 z + ... + b_q z^q``.
    """

    def __init__(self, a, b):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        p = len(a)
        if p < 1:
            raise ConfigError("CARMA order p must be >= 1")
        nz = np.nonzero(b)[0]
        if len(nz) == 0:
            raise ConfigError("b must have a nonzero coefficient")
        qdeg = int(nz[-1])
        if qdeg >= p:
            raise ConfigError(f"need q < p, got q={qdeg}, p={p}")
        self.a = a
        self.b = np.zeros(p)
        self.b[: qdeg + 1] = b[: qdeg + 1]
        self.p, self.q = p, qdeg
        A = np.zeros((p, p))
        A[:-1, 1:] = np.eye(p - 1)
        A[-1, :] = -a[::-1]
        self.A = A
        self.eigenvalues = np.linalg.eigvals(A)
        if np.any(self.eigenvalues.real >= 0):
            raise StationarityError(f"companion matrix has eigenvalues with nonnegative real part: {self.eigenvalues}")

    @classmethod
    def from_roots(cls, roots, b):
        coefs = np.real_if_close(np.poly(np.asarray(roots)))
        return cls(np.asarray(coefs[1:], dtype=float), b)

    def polynomials(self):
        """``(p, q)`` with ``p(z) = a(z)`` and ``q(z) = b(z)`` as 1-D polynomials."""
        p = MultiPolynomial(1, {(self.p - k,): c for k, c in enumerate(np.concatenate([[1.0], self.a]))})
        q = MultiPolynomial(1, {(k,): c for k, c in enumerate(self.b)})
        return p, q

    def residues(self):
        """``b(l) / a'(l)`` at each eigenvalue (valid when the eigenvalues are distinct)."""
        full = np.concatenate([[1.0], self.a])
        da = np.polyder(full)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.array([np.polyval(self.b[::-1], lam) / np.polyval(da, lam) for lam in self.eigenvalues])

    def kernel(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        pos = t >= 0
        lam = self.eigenvalues
        ep = np.zeros(self.p)
        ep[-1] = 1.0
        vecs = None
        if len(np.unique(np.round(lam, 12))) == self.p:
            _, vecs = np.linalg.eig(self.A)
            if np.linalg.cond(vecs) > 1e8:
                vecs = None
        if vecs is not None:
            res = self.residues()
            out[pos] = np.real(np.exp(np.outer(t[pos], lam)) @ res)
        else:
            tt = t[pos]
            mats = linalg.expm(tt[:, None, None] * self.A[None, :, :])
            out[pos] = mats[:, :, -1] @ self.b
        return out


def kernel_carma1d(ss, spec):
    """``g(t) = b^T exp(A t) e_p`` for ``t >= 0`` and 0 for ``t < 0``, on a 1-D grid."""
    if spec.d != 1:
        raise GridMismatchError("kernel_carma1d needs a 1-D grid")
    t = spec.axes()[0]
    g = ss.kernel(t)
    rate = float(-np.max(ss.eigenvalues.real))
    distinct = len(np.unique(np.round(ss.eigenvalues, 12))) == ss.p
    c = float(np.sum(np.abs(ss.residues()))) if distinct else float("nan")
    # with repeated roots the residue bound is unavailable; fall back to a fit
    env = Envelope("exponential", c * (1 + 1e-9), rate, 0.0) if np.isfinite(c) else fit_envelope(g, spec)
    return KernelGrid(spec, g, env, {"construction": "carma1d", "a": ss.a.tolist(), "b": ss.b.tolist()})


@dataclass(frozen=True)
class BMKernelSpec:
    """Isotropic kernel data: roots ``lambdas`` of ``a``, ``kappas`` of ``b``, dimension ``d``."""

    lambdas: tuple
    kappas: tuple = ()
    d: int = 1

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=complex)
        kap = np.asarray(self.kappas, dtype=complex)
        if lam.size == 0:
            raise ConfigError("need at least one lambda")
        if np.any(lam.real >= 0):
            raise ConfigError("all lambdas need negative real part")
        if len(np.unique(np.round(lam, 12))) != lam.size:
            raise ConfigError("lambdas must be distinct")
        if kap.size and np.min(np.abs(lam[:, None] - kap[None, :])) < 1e-12:
            raise ConfigError("lambdas and kappas must differ")
        if kap.size >= lam.size:
            raise ConfigError("need fewer kappas than lambdas")
        if self.d < 1:
            raise ConfigError("dimension must be >= 1")

    def coefficients(self):
        """``b(l_i) / a'(l_i)`` with ``a(z) = prod (z^2 - l^2)``, ``b(z) = prod (z^2 - k^2)``."""
        lam = np.asarray(self.lambdas, dtype=complex)
        kap = np.asarray(self.kappas, dtype=complex)
        a = np.poly(np.concatenate([lam, -lam]))
        b = np.poly(np.concatenate([kap, -kap])) if kap.size else np.array([1.0])
        da = np.polyder(a)
        return np.polyval(b, lam) / np.polyval(da, lam)

    def profile(self, r):
        lam = np.asarray(self.lambdas, dtype=complex)
        vals = np.exp(np.multiply.outer(np.asarray(r, dtype=float), lam)) @ self.coefficients()
        return vals


def kernel_bm(bspec, spec):
    if bspec.d != spec.d:
        raise GridMismatchError(f"kernel dimension {bspec.d} does not match grid dimension {spec.d}")
    vals = bspec.profile(spec.radii())
    imag = float(np.max(np.abs(vals.imag)))
    if imag > 1e-10 * max(float(np.max(np.abs(vals.real))), 1e-300):
        raise NumericalError("complex roots must come in conjugate pairs for a real kernel")
    coef = bspec.coefficients()
    rate = float(np.min(-np.asarray(bspec.lambdas, dtype=complex).real))
    env = Envelope("exponential", float(np.sum(np.abs(coef))) * (1 + 1e-9), rate, 0.0)
    return KernelGrid(spec, vals.real, env, {"construction": "bm", "lambdas": [str(x) for x in bspec.lambdas],
                                             "kappas": [str(x) for x in bspec.kappas]})


def _origin_cell_average(profile, ball_integral, spec, sub=None):
    """Average of a radial function over the origin cell.

    The inscribed ball is integrated exactly through ``ball_integral(rho)``;
    the rest of the cell uses a midpoint rule on a sub-grid.
    """
    d = spec.d
    h = np.asarray(spec.spacing)
    rho = 0.5 * float(h.min())
    if sub is None:
        sub = max(4, int(round((2.5e5) ** (1.0 / d))))
        sub += sub % 2
    axes = [(np.arange(sub) + 0.5) / sub * hk - 0.5 * hk for hk in h]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    r = np.linalg.norm(pts, axis=1)
    outside = r > rho
    dv = float(np.prod(h)) / sub ** d
    # sub-cells straddling the sphere |x| = rho are assigned by their midpoint
    total = ball_integral(rho) + float(np.sum(profile(r[outside]))) * dv
    return total / float(np.prod(h))


def kernel_matern3(lam, spec):
    """``exp(-sqrt(lam) |x|) / (4 pi |x|)`` on a 3-D grid; ``lam = 0`` gives the Newtonian potential."""
    if spec.d != 3:
        raise GridMismatchError("kernel_matern3 is defined for d = 3 only")
    lam = float(lam)
    if lam < 0:
        raise ConfigError("lam must be >= 0")
    k = math.sqrt(lam)
    r = spec.radii()
    with np.errstate(divide="ignore"):
        vals = np.exp(-k * r) / (4 * np.pi * r)
    profile = lambda rr: np.exp(-k * rr) / (4 * np.pi * rr)
    if k > 0:
        ball = lambda rho: (1.0 - math.exp(-k * rho) * (1.0 + k * rho)) / (k * k)
    else:
        ball = lambda rho: 0.5 * rho * rho
    zi = spec.zero_index()
    if zi is not None:
        vals[zi] = _origin_cell_average(profile, ball, spec)
    r0 = 0.5 * min(spec.spacing)
    if k > 0:
        env = Envelope("exponential", 1.0 / (4 * np.pi * r0), k, r0)
    else:
        env = Envelope("power", 1.0 / (4 * np.pi), 1.0, r0)
    return KernelGrid(spec, vals, env, {"construction": "matern3", "lambda": lam})


def sphere_area(d):
    """Surface area of the unit sphere in ``R^d``."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def kernel_newton(spec):
    """Fundamental solution of the Laplacian, ``-|x|^{2-d} / ((d-2) |S^{d-1}|)``, for ``d >= 3``."""
    d = spec.d
    if d < 3:
        raise GridMismatchError("kernel_newton needs d >= 3")
    cst = 1.0 / ((d - 2) * sphere_area(d))
    r = spec.radii()
    with np.errstate(divide="ignore"):
        vals = -cst * r ** (2.0 - d)
    zi = spec.zero_index()
    if zi is not None:
        profile = lambda rr: -cst * rr ** (2.0 - d)
        ball = lambda rho: -rho * rho / (2.0 * (d - 2))
        vals[zi] = _origin_cell_average(profile, ball, spec)
    r0 = 0.5 * min(spec.spacing)
    return KernelGrid(spec, vals, Envelope("power", cst, d - 2.0, r0),
                      {"construction": "newton", "d": d})


def kernel_delta(spec):
    """Discrete delta ``1/v`` at the origin cell: convolution with it returns the noise per unit volume."""
    vals = np.zeros(spec.shape)
    zi = spec.zero_index()
    if zi is None:
        raise GridMismatchError("kernel grids must contain x = 0 as a sample")
    vals[zi] = 1.0 / spec.cell_volume
    return KernelGrid(spec, vals, Envelope("exponential", 0.0, 1.0, 0.0), {"construction": "delta"})


# ---------------------------------------------------------------------------
# ball averages and layer-cake functionals
# ---------------------------------------------------------------------------

@dataclass
class GrowthClass:
    """Asymptotic growth ``x^power log(x)^log_power`` of a weight; ``power = inf`` means identically infinite."""

    power: float
    log_power: float = 0.0

    @property
    def infinite(self):
        return not np.isfinite(self.power)


class KernelFunctionals:
    """Distribution function of ``G_R`` and its layer-cake transforms.

    Grid cells inside the inscribed ball of the grid contribute their sampled
    ``G_R`` values; outside it ``G_R(x)`` is replaced by
    ``|B_R| * envelope(|x|)`` and integrated radially.
    """

    def __init__(self, K, R):
        env = K.envelope
        if env.kind == "none":
            raise PreconditionError("kernel functionals need a declared tail envelope")
        spec = K.spec
        self.R = float(R)
        self.d = spec.d
        self.v = spec.cell_volume
        self.envelope = env
        self.G_R = ball_average(K, R)
        r = spec.radii()
        self.R_in = min(0.5 * (n - 1) * h for n, h in zip(spec.shape, spec.spacing))
        vals = self.G_R[r <= self.R_in]
        self.levels = np.sort(vals)
        self.csum = np.concatenate([[0.0], np.cumsum(self.levels)])
        self.csum2 = np.concatenate([[0.0], np.cumsum(self.levels ** 2)])
        self.ball_vol = ball_volume(self.d) * self.R ** self.d if self.R > 0 else 1.0
        self.area = sphere_area(self.d)

    # -- tail model -------------------------------------------------------
    def _f(self, r):
        return self.ball_vol * self.envelope(r)

    def _r_of(self, alpha):
        """Radius where the tail model equals ``alpha`` (inf if never)."""
        env = self.envelope
        c = self.ball_vol * env.c
        if c <= 0:
            return 0.0
        if alpha <= 0:
            return np.inf
        if env.kind == "exponential":
            return max(0.0, math.log(c / alpha) / env.rate) if c > alpha else 0.0
        return (c / alpha) ** (1.0 / env.rate)

    def _radial_f(self, power, lo, hi):
        """``int_{lo < |x| < hi} f(|x|)^power dx`` in closed form for the envelope models."""
        if hi <= lo:
            return 0.0
        env, d = self.envelope, self.d
        C = (self.ball_vol * env.c) ** power
        if C == 0:
            return 0.0
        if env.kind == "exponential":
            rho = env.rate * power
            if np.isinf(hi):
                up = 1.0
            else:
                up = special.gammainc(d, rho * hi)
            frac = up - special.gammainc(d, rho * lo)
            return self.area * C * math.gamma(d) * rho ** (-d) * frac
        e = d - env.rate * power
        if np.isinf(hi):
            if e >= 0:
                return np.inf
            return self.area * C * (-(lo ** e) / e)
        if e == 0:
            return self.area * C * math.log(hi / lo)
        return self.area * C * (hi ** e - lo ** e) / e

    def _tail_min(self, A, power=1):
        """``int_{|x| > R_in} min(f, A)^power dx``."""
        ra = max(self._r_of(A), self.R_in)
        if ra > 1e300 ** (1.0 / self.d):
            return np.inf
        inner = A ** power * (ball_volume(self.d) * (ra ** self.d - self.R_in ** self.d))
        return inner + self._radial_f(power, ra, np.inf)

    def _tail_excess(self, A):
        """``int_{|x| > R_in} (f - A)^+ dx``."""
        ra = self._r_of(A)
        if ra <= self.R_in:
            return 0.0
        if ra > 1e300 ** (1.0 / self.d):
            return np.inf
        return self._radial_f(1, self.R_in, ra) - A * ball_volume(self.d) * (ra ** self.d - self.R_in ** self.d)

    def _tail_count(self, A):
        ra = self._r_of(A)
        if ra > 1e300 ** (1.0 / self.d):
            return np.inf
        return ball_volume(self.d) * max(ra ** self.d - self.R_in ** self.d, 0.0)

    # -- grid sums --------------------------------------------------------
    def _split(self, A):
        k = int(np.searchsorted(self.levels, A, side="right"))
        return k, len(self.levels) - k

    def distribution(self, alpha):
        """``d_{G_R}(alpha)``: measure of ``{G_R > alpha}``."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        out = np.empty(alpha.shape)
        for i, a in enumerate(alpha):
            _, above = self._split(a)
            out[i] = self.v * above + self._tail_count(a)
        return out

    def int_d_below(self, A):
        """``int_0^A d(alpha) d alpha = int min(G_R, A)``."""
        k, above = self._split(A)
        return self.v * (self.csum[k] + A * above) + self._tail_min(A, 1)

    def int_d_above(self, A):
        """``int_A^inf d(alpha) d alpha = int (G_R - A)^+``."""
        k, _ = self._split(A)
        return self.v * ((self.csum[-1] - self.csum[k]) - A * (len(self.levels) - k)) + self._tail_excess(A)

    def int_alpha_d_below(self, A):
        """``int_0^A alpha d(alpha) d alpha = int min(G_R, A)^2 / 2``."""
        k, above = self._split(A)
        return 0.5 * (self.v * (self.csum2[k] + A * A * above) + self._tail_min(A, 2))

    # -- weights in |r| ---------------------------------------------------
    def h(self, x):
        return x * self.int_d_below(1.0 / x)

    def w1(self, x):
        return x * self.int_d_above(1.0 / x)

    def w2(self, x):
        return x * x * self.int_alpha_d_below(1.0 / x)

    def dcor(self, x):
        return float(self.distribution(1.0 / x)[0])

    def growth(self, which):
        """Asymptotic class of the weight ``which`` in {h, w1, w2, dcor} as ``x -> inf``."""
        env, d = self.envelope, self.d
        if env.kind == "exponential":
            return {"h": GrowthClass(0.0, d), "w1": GrowthClass(1.0, 0.0),
                    "w2": GrowthClass(0.0, d), "dcor": GrowthClass(0.0, d)}[which]
        q = d / env.rate
        if which == "h":
            return GrowthClass(q) if q < 1 else GrowthClass(np.inf)
        if which == "w1":
            if q < 1:
                return GrowthClass(1.0)
            return GrowthClass(q, 1.0 if q == 1 else 0.0)
        if which == "w2":
            return GrowthClass(q) if q < 2 else GrowthClass(np.inf)
        return GrowthClass(q)

    def table(self, xs):
        xs = np.asarray(xs, dtype=float)
        return {"x": xs.tolist(),
                "d_GR": [self.dcor(x) for x in xs],
                "h_R": [self.h(x) for x in xs]}


def ball_average(K, R):
    """``G_R(x) = int_{B_R(x)} |G|`` on the grid; ``R = 0`` returns ``|G|``.

    ``|G|`` is extended beyond the grid by its envelope so the convolution
    near the boundary sees the tail instead of periodic copies.
    """
    spec = K.spec
    A = np.abs(K.values)
    if R <= 0:
        return A
    pads = [int(math.ceil(R / h)) + 1 for h in spec.spacing]
    ext_shape = tuple(n + 2 * pk for n, pk in zip(spec.shape, pads))
    ext = GridSpec(ext_shape, spec.spacing, tuple(o - pk * h for o, pk, h in zip(spec.origin, pads, spec.spacing)))
    if K.envelope.kind == "none":
        raise PreconditionError("ball averages need a tail envelope to extend the kernel")
    big = K.envelope(ext.radii())
    big = np.where(np.isfinite(big), big, 0.0)
    inner = tuple(slice(pk, pk + n) for pk, n in zip(pads, spec.shape))
    big[inner] = A
    # indicator of the ball, centred at index 0 of the extended grid
    offs = []
    for n, h in zip(ext_shape, spec.spacing):
        idx = np.arange(n)
        idx = np.where(idx > n // 2, idx - n, idx)
        offs.append(idx * h)
    r2 = sum(np.meshgrid(*[o ** 2 for o in offs], indexing="ij"))
    ball = (r2 <= R * R + 1e-12).astype(float)
    conv = np.fft.irfftn(np.fft.rfftn(big) * np.fft.rfftn(ball), s=ext_shape, axes=tuple(range(spec.d)))
    out = spec.cell_volume * conv[inner]
    return np.maximum(out, 0.0)


def kernel_functionals(K, R, xs=()):
    """Return the :class:`KernelFunctionals` for radius ``R`` and a table at ``xs``."""
    F = KernelFunctionals(K, R)
    return F, F.table(xs) if len(xs) else {}
