"""Mild fields, pairings with test functions, and the pathwise identities.

Kernels, operators and convolutions share one DFT grid, so the defining
identity of the generalized solution and the rearrangement behind the
mild/generalized consistency hold exactly up to roundoff.  Continuum accuracy
is a separate question answered by comparing kernels with closed forms.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridMismatchError, PaddingError, PreconditionError, WrapAroundError
from .grid import GridSpec, read_grid, write_grid
from .kernels import ball_volume, sphere_area, to_fft_layout
from .levy import simulate_cells
from .poly import apply_operator, nyquist_indices, psi_polynomial, real_freqs

DEFAULT_WRAP_TOL = 1e-6


def _same_cells(a, b, what):
    if a.shape != b.shape or not np.allclose(a.spacing, b.spacing, rtol=1e-12, atol=0):
        raise GridMismatchError(f"{what}: grids differ ({a} vs {b})")


@dataclass
class TestFunction:
    """Mollifier ``amp * exp(-1 / (1 - |(x - c)/h|^2))`` sampled on a grid."""

    __test__ = False  # not a pytest class

    center: tuple
    radius: float
    amplitude: float
    spec: GridSpec
    values: np.ndarray
    pad: int = 2

    @property
    def integral(self):
        return float(np.sum(self.values) * self.spec.cell_volume)

    def apply(self, P, adjoint=False):
        """``P(D) phi`` (or ``P(D)* phi``) by spectral multiplication."""
        return apply_operator(P, self.values, self.spec.spacing, adjoint=adjoint, pad=self.pad)


def bump(center, radius, amplitude, spec, pad=2):
    """Sample the mollifier; its support must stay ``pad`` cells away from the grid boundary."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (spec.d,))
    if radius <= 0:
        raise ConfigError("bump radius must be positive")
    for k, (c, o, h, n) in enumerate(zip(center, spec.origin, spec.spacing, spec.shape)):
        lo_ok = c - radius >= o + pad * h
        hi_ok = c + radius <= o + (n - 1 - pad) * h
        if not (lo_ok and hi_ok):
            raise PaddingError(f"bump support leaves the padded grid on axis {k}")
    x = spec.coords()
    s2 = np.sum(((x - center) / radius) ** 2, axis=-1)
    inside = s2 < 1.0
    vals = np.zeros(spec.shape)
    vals[inside] = amplitude * np.exp(-1.0 / (1.0 - s2[inside]))
    return TestFunction(tuple(center.tolist()), float(radius), float(amplitude), spec, vals, int(pad))


@dataclass
class FieldRealization:
    spec: GridSpec
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def save(self, path, extra=None):
        write_grid(path, "field", self.spec, self.values, {**self.provenance, **(extra or {})})

    @classmethod
    def load(cls, path):
        kind, spec, values, meta = read_grid(path)
        if kind != "field":
            raise ConfigError(f"{path}: expected a field grid, found {kind!r}")
        return cls(spec, values, meta)


def wrap_fraction(K):
    """Envelope mass of ``|G|`` beyond the inscribed ball of the grid, relative to the grid mass."""
    env = K.envelope
    grid_mass = float(np.sum(np.abs(K.values)) * K.spec.cell_volume)
    if grid_mass == 0:
        return 0.0
    if env.kind == "none":
        return np.nan
    d = K.d
    R_in = min(0.5 * (n - 1) * h for n, h in zip(K.spec.shape, K.spec.spacing))
    lo = max(R_in, env.r0)
    if env.kind == "exponential":
        from scipy import special
        tail = sphere_area(d) * env.c * special.gamma(d) * env.rate ** (-d) * special.gammaincc(d, env.rate * lo)
    else:
        e = d - env.rate
        tail = np.inf if e >= 0 else sphere_area(d) * env.c * (-(lo ** e) / e)
    return float(tail / grid_mass)


def _kernel_hat(K):
    return np.fft.rfftn(to_fft_layout(K.values, K.spec))


def simulate_mild(K, noise, wrap_tol=DEFAULT_WRAP_TOL):
    """``X(t_i) = sum_c G(t_i - x_c) Delta L_c`` by circular convolution on the noise grid."""
    _same_cells(K.spec, noise.spec, "kernel and noise")
    if wrap_tol is not None:
        frac = wrap_fraction(K)
        if not frac <= wrap_tol:
            raise WrapAroundError(f"kernel tail mass beyond the grid is {frac:.3g} of the total "
                                  f"(limit {wrap_tol:g}); enlarge the grid or declare an envelope")
    X = np.fft.irfftn(_kernel_hat(K) * np.fft.rfftn(noise.values), s=noise.spec.shape, axes=tuple(range(noise.spec.d)))
    prov = {"construction": "mild_convolution", "kernel": K.provenance, "seed": noise.seed,
            "stream": noise.stream, "delta": noise.delta}
    return FieldRealization(noise.spec, X, prov)


def pair_whitenoise(noise, phi):
    """``<L', phi> = sum_c phi(x_c) Delta L_c``."""
    noise.spec.require_same(phi.spec, "noise and test function grids")
    return float(np.sum(phi.values * noise.values))


def _phi_values(phi):
    return phi.values if isinstance(phi, TestFunction) else np.asarray(phi, dtype=float)


def generalized_weight(K_psi, alpha, phi_values, fault=None, noise_values=None):
    """``w = G_psi * (1 - Delta)^alpha phi`` with one fused spectral multiplication.

    ``fault`` multiplies the dominant frequency sample of the kernel (and its
    mirror) by ``1 + fault``; this is only for checking that the residual test
    can fail.
    """
    spec = K_psi.spec
    if "alpha" in K_psi.provenance and int(K_psi.provenance["alpha"]) != int(alpha):
        raise PreconditionError(f"kernel was built with alpha={K_psi.provenance['alpha']}, got alpha={alpha}")
    shape = phi_values.shape
    psi = psi_polynomial(alpha, spec.d).symbol_grid(real_freqs(shape, spec.spacing),
                                                    nyquist=nyquist_indices(shape)).real
    Ghat = spec.cell_volume * _kernel_hat(K_psi)
    prod = Ghat * psi * np.fft.rfftn(phi_values)
    if fault:
        score = np.abs(prod)
        if noise_values is not None:
            score = np.abs(prod * np.conj(np.fft.rfftn(noise_values)))
        k = np.unravel_index(int(np.argmax(score)), score.shape)
        prod[k] *= 1.0 + fault
    return np.fft.irfftn(prod, s=shape, axes=tuple(range(len(shape))))


def pair_generalized(K_psi, alpha, noise, phi, fault=None):
    """``<L', G_psi * (1 - Delta)^alpha phi>``."""
    _same_cells(K_psi.spec, noise.spec, "kernel and noise")
    if isinstance(phi, TestFunction):
        noise.spec.require_same(phi.spec, "noise and test function grids")
    w = generalized_weight(K_psi, alpha, _phi_values(phi), fault, noise.values)
    return float(np.sum(w * noise.values))


@dataclass
class Residual:
    lhs: float
    rhs: float
    residual: float
    normalizer: float

    @property
    def relative(self):
        return self.residual / self.normalizer


def spde_residual(p, q, K_psi, alpha, noise, phi, fault=None):
    """``|<s, p(D)* phi> - <L', q(D)* phi>|`` with normalizer ``max(|lhs|, |rhs|, 1)``."""
    p_phi = phi.apply(p, adjoint=True)
    q_phi = phi.apply(q, adjoint=True)
    lhs = pair_generalized(K_psi, alpha, noise, p_phi, fault=fault)
    rhs = float(np.sum(q_phi * noise.values))
    return Residual(lhs, rhs, abs(lhs - rhs), max(abs(lhs), abs(rhs), 1.0))


@dataclass
class FubiniResult:
    lhs: float
    rhs: float
    diff: float

    @property
    def relative(self):
        scale = max(abs(self.lhs), abs(self.rhs))
        return 0.0 if scale == 0 else self.diff / scale


def fubini_check(K, noise, phi, wrap_tol=None):
    """Compare ``sum X phi v`` with ``sum (G(-.) * phi)(x_c) Delta L_c``."""
    noise.spec.require_same(phi.spec, "noise and test function grids")
    X = simulate_mild(K, noise, wrap_tol=wrap_tol)
    v = noise.spec.cell_volume
    lhs = float(np.sum(X.values * phi.values) * v)
    Ghat = _kernel_hat(K)
    corr = np.fft.irfftn(np.conj(Ghat) * np.fft.rfftn(phi.values), s=phi.values.shape, axes=tuple(range(phi.spec.d))) * v
    rhs = float(np.sum(corr * noise.values))
    return FubiniResult(lhs, rhs, abs(lhs - rhs))


def simulate_fields(K, triplet, spec, streams, seed=0, delta=0.01, workers=1, wrap_tol=DEFAULT_WRAP_TOL):
    """Independent mild realizations, one per stream id, returned in stream order."""
    _same_cells(K.spec, spec, "kernel and noise")
    streams = sorted(int(s) for s in streams)

    def one(stream):
        n = simulate_cells(triplet, spec, delta, seed, stream)
        return simulate_mild(K, n, wrap_tol=wrap_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, streams))
    return [one(s) for s in streams]
