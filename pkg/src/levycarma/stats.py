"""Monte Carlo checks of the noise and field laws.

Every comparison states its sample count ``N`` and uses the tolerance
``max(stated, 4 / sqrt(N))`` where the check is Monte Carlo.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import interpolate

from . import _accel
from .errors import ConfigError, GridMismatchError, NumericalError, PreconditionError
from .kernels import kernel_bm, to_fft_layout
from .levy import cell_moments, char_exponent, simulate_cells

MIN_CF_SAMPLES = 1000
MIN_PERIODOGRAM_FIELDS = 50
DEFAULT_BAND = (0.05, 0.8)
DIVERGENCE_FACTOR = 10.0
# beyond this many distinct arguments the exponent is interpolated from a dense table
PSI_DIRECT_LIMIT = 4096
PSI_TABLE_NODES = 8193


def mc_tolerance(n, stated=0.0):
    return max(float(stated), 4.0 / math.sqrt(n))


# ---------------------------------------------------------------------------
# characteristic functional
# ---------------------------------------------------------------------------

def exponent_values(t, z):
    """``psi(z)`` for many real arguments.

    Distinct arguments up to ``PSI_DIRECT_LIMIT`` are evaluated directly;
    above that the exponent is tabulated on a uniform grid and interpolated
    by cubic splines on the real and imaginary parts.
    """
    z = np.asarray(z, dtype=float)
    uniq, inv = np.unique(z, return_inverse=True)
    if uniq.size <= PSI_DIRECT_LIMIT:
        vals = char_exponent(t, uniq)
    else:
        nodes = np.linspace(uniq[0], uniq[-1], PSI_TABLE_NODES)
        table = char_exponent(t, nodes)
        re = interpolate.CubicSpline(nodes, table.real)(uniq)
        im = interpolate.CubicSpline(nodes, table.imag)(uniq)
        vals = re + 1j * im
    return np.asarray(vals).reshape(-1)[inv].reshape(z.shape)


def theoretical_cf(t, w, cell_volume, u):
    """``exp(sum_c psi(u w_c) v)`` for each ``u``."""
    w = np.asarray(w, dtype=float).ravel()
    w = w[w != 0.0]
    u = np.asarray(u, dtype=float)
    args = np.multiply.outer(u, w)
    psi = exponent_values(t, args)
    return np.exp(cell_volume * psi.sum(axis=-1))


def empirical_cf(samples, u):
    samples = np.asarray(samples, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.exp(1j * np.multiply.outer(u, samples)).mean(axis=-1)
    out[u == 0] = 1.0
    return out


@dataclass
class CharFunctionalReport:
    u: np.ndarray
    empirical: np.ndarray
    theoretical: np.ndarray
    n: int
    tolerance: float

    @property
    def deviation(self):
        return np.abs(self.empirical - self.theoretical)

    @property
    def sup_deviation(self):
        return float(np.max(self.deviation))

    @property
    def passed(self):
        return self.sup_deviation <= self.tolerance

    def rows(self):
        for u, e, th in zip(self.u, self.empirical, self.theoretical):
            yield {"u": u, "re_emp": e.real, "im_emp": e.imag, "re_theo": th.real, "im_theo": th.imag,
                   "abs_dev": abs(e - th)}


def char_functional_test(t, w, samples, u=None, cell_volume=None, stated_tol=0.0):
    """Compare the empirical CF of pairing values with ``exp(sum psi(u w) v)``.

    ``w`` is the weight the samples were paired with: a grid object with
    ``values`` and ``spec``, or a plain array together with ``cell_volume``.
    """
    if hasattr(w, "values") and hasattr(w, "spec"):
        cell_volume = w.spec.cell_volume
        w = w.values
    if cell_volume is None:
        raise ConfigError("cell_volume is required when w is a plain array")
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < MIN_CF_SAMPLES:
        raise PreconditionError(f"need at least {MIN_CF_SAMPLES} samples, got {n}")
    u = np.linspace(-3.0, 3.0, 61) if u is None else np.asarray(u, dtype=float)
    emp = empirical_cf(samples, u)
    theo = theoretical_cf(t, w, cell_volume, u)
    return CharFunctionalReport(u, emp, theo, n, mc_tolerance(n, stated_tol))


def pairing_samples(t, spec, weight, n, seed=0, delta=0.01, workers=1, first_stream=0):
    """``sum_c w_c Delta L_c`` for ``n`` independent noise streams, in stream order."""
    weight = np.asarray(weight, dtype=float)
    if weight.shape != tuple(spec.shape):
        raise ConfigError(f"weight shape {weight.shape} does not match grid {spec.shape}")

    def one(stream):
        return float(np.sum(weight * simulate_cells(t, spec, delta, seed, stream).values))

    streams = range(first_stream, first_stream + n)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return np.fromiter(ex.map(one, streams), float, n)
    return np.fromiter(map(one, streams), float, n)


# ---------------------------------------------------------------------------
# second-order structure
# ---------------------------------------------------------------------------

def noise_variance(t):
    """``sigma^2 = a + int r^2 nu(dr)``; raises when the second moment is infinite."""
    m = cell_moments(t, 1.0)
    if not m.variance_defined:
        raise PreconditionError("the noise has no finite second moment; the spectral density is undefined")
    return m.variance


def spectral_density(p, q, sigma2, xi):
    """``sigma^2 |q(i xi) / p(i xi)|^2`` at points ``xi`` (shape ``(M, d)``, or ``(M,)`` when ``d = 1``)."""
    if sigma2 is None or not np.isfinite(sigma2) or sigma2 < 0:
        raise PreconditionError(f"spectral density needs a finite variance, got {sigma2!r}")
    xi = np.asarray(xi, dtype=float)
    flat_1d = xi.ndim == 1 and p.d == 1
    pts = xi.reshape(-1, 1) if flat_1d else xi.reshape(-1, p.d)
    qe, qc = q.packed()
    pe, pc = p.packed()
    vals = sigma2 * _accel.rational_abs2(qe, qc, pe, pc, pts, np.zeros(p.d))
    return vals.reshape(xi.shape if flat_1d else xi.shape[:-1])


def _field_stack(fields):
    if not fields:
        raise PreconditionError("no fields given")
    spec = fields[0].spec
    for f in fields[1:]:
        spec.require_same(f.spec, "fields")
    return spec, np.stack([f.values for f in fields])


def _band_mask(spec, band):
    """Frequencies whose largest per-axis fraction of Nyquist lies in ``(lo, hi]``."""
    lo, hi = band
    frac = np.zeros(spec.shape)
    for k, (n, h) in enumerate(zip(spec.shape, spec.spacing)):
        f = np.abs(np.fft.fftfreq(n)) * 2.0  # fraction of Nyquist
        sh = [1] * spec.d
        sh[k] = n
        frac = np.maximum(frac, f.reshape(sh))
    return (frac > lo) & (frac <= hi)


@dataclass
class PeriodogramReport:
    error: float
    n_fields: int
    band: tuple
    xi: np.ndarray
    periodogram: np.ndarray
    density: np.ndarray

    @property
    def band_mean_ratio(self):
        return float(self.periodogram.mean() / self.density.mean())


def averaged_periodogram(fields):
    """``v |DFT X|^2 / N`` averaged over realizations; unit white noise gives 1."""
    spec, X = _field_stack(fields)
    N = int(np.prod(spec.shape))
    axes = tuple(range(1, X.ndim))
    P = np.abs(np.fft.fftn(X, axes=axes)) ** 2
    return spec, P.mean(axis=0) * spec.cell_volume / N


def periodogram_compare(fields, p, q, sigma2, band=DEFAULT_BAND):
    """Relative L1 distance between the averaged periodogram and the spectral density on a band."""
    if len(fields) < MIN_PERIODOGRAM_FIELDS:
        raise PreconditionError(f"need at least {MIN_PERIODOGRAM_FIELDS} realizations, got {len(fields)}")
    spec, P = averaged_periodogram(fields)
    mask = _band_mask(spec, band)
    xi = np.stack(np.meshgrid(*spec.freqs(), indexing="ij"), axis=-1)[mask]
    f = spectral_density(p, q, sigma2, xi)
    Pb = P[mask]
    err = float(np.sum(np.abs(Pb - f)) / np.sum(f))
    return PeriodogramReport(err, len(fields), tuple(band), xi, Pb, f)


def kernel_autocorrelation(K, lags):
    """``v sum_x G(x) G(x - lag)`` for integer cell lags (circular on the kernel grid)."""
    G = to_fft_layout(K.values, K.spec)
    Gh = np.fft.fftn(G)
    corr = np.fft.ifftn(np.abs(Gh) ** 2).real * K.spec.cell_volume
    return np.array([corr[tuple(np.asarray(l) % np.asarray(K.spec.shape))] for l in lags])


def autocovariance_compare(fields, K, sigma2, lags):
    """Empirical spatial autocovariance at cell lags against ``sigma^2 (G * G~)(lag)``."""
    spec, X = _field_stack(fields)
    if K.spec.shape != spec.shape or not np.allclose(K.spec.spacing, spec.spacing, rtol=1e-12, atol=0):
        raise GridMismatchError("kernel and field grids differ")
    lags = [tuple(np.atleast_1d(l).astype(int).tolist()) for l in lags]
    for l in lags:
        if len(l) != spec.d:
            raise ConfigError(f"lag {l} has the wrong dimension for a {spec.d}-d grid")
    axes = tuple(range(1, X.ndim))
    theo = sigma2 * kernel_autocorrelation(K, lags)
    rows = []
    for l, th in zip(lags, theo):
        shifted = np.roll(X, [-x for x in l], axis=axes)
        per_field = (X * shifted).mean(axis=axes)
        emp = float(per_field.mean())
        se = float(per_field.std(ddof=1) / math.sqrt(len(per_field))) if len(per_field) > 1 else float("nan")
        rel = abs(emp - th) / abs(th) if th != 0 else float("inf")
        lag_x = [li * h for li, h in zip(l, spec.spacing)]
        rows.append({"lag": l, "lag_x": lag_x, "empirical": emp, "theoretical": float(th),
                     "rel_error": rel, "stderr": se})
    return rows


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

@dataclass
class MomentScan:
    betas: list
    levels: list
    moments: np.ndarray  # (levels, betas)
    ratios: np.ndarray  # (levels - 1, betas)
    divergence_suspected: list

    def rows(self):
        for i, lev in enumerate(self.levels):
            for j, b in enumerate(self.betas):
                ratio = self.ratios[i - 1, j] if i > 0 else float("nan")
                yield {"level": lev, "beta": b, "moment": float(self.moments[i, j]), "ratio": float(ratio),
                       "divergence_suspected": bool(self.divergence_suspected[j])}


def moment_scan(fields_by_level, betas, labels=None):
    """Empirical ``E|X|^beta`` per refinement level and a heuristic divergence flag.

    ``fields_by_level`` is a sequence (coarse to fine) of lists of
    realizations.  The flag is raised when the moment grows by at least
    ``DIVERGENCE_FACTOR`` between successive levels; it is a trend test on
    Monte Carlo data and cannot prove divergence.
    """
    if len(fields_by_level) < 2:
        raise PreconditionError("moment_scan needs at least two refinement levels")
    betas = [float(b) for b in betas]
    mom = np.empty((len(fields_by_level), len(betas)))
    for i, fields in enumerate(fields_by_level):
        X = np.abs(np.concatenate([np.ravel(f.values) for f in fields]))
        for j, b in enumerate(betas):
            mom[i, j] = 1.0 if b == 0 else float(np.mean(X ** b))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = mom[1:] / mom[:-1]
    flags = [bool(np.any(ratios[:, j] >= DIVERGENCE_FACTOR)) for j in range(len(betas))]
    labels = list(labels) if labels is not None else list(range(len(fields_by_level)))
    return MomentScan(betas, labels, mom, ratios, flags)


# ---------------------------------------------------------------------------
# isotropic kernel symbol
# ---------------------------------------------------------------------------

DEFAULT_BM_GRIDS = {1: ((8192,), 0.01), 2: ((512, 512), 0.08), 3: ((128, 128, 128), 0.25)}
BM_FIT_FRACTION = 0.2


def bm_rational_form(bspec, xi_abs):
    """``sum_i 2 l_i b(l_i) / (a'(l_i) (|xi|^2 + l_i^2)^((d+1)/2))``."""
    lam = np.asarray(bspec.lambdas, dtype=complex)
    coef = bspec.coefficients()
    x2 = np.asarray(xi_abs, dtype=float)[..., None] ** 2
    vals = (2.0 * lam * coef / (x2 + lam * lam) ** ((bspec.d + 1) / 2.0)).sum(axis=-1)
    return vals.real


@dataclass
class BMSymbolFit:
    c_d: float
    residual: float
    n_points: int
    xi_max: float


def bm_symbol_check(bspec, spec=None, fit_fraction=BM_FIT_FRACTION):
    """Fit the scalar ``c_d`` in ``DFT(G) = c_d * rational form`` by least squares.

    The fit uses frequencies with every component below ``fit_fraction`` of
    Nyquist, where aliasing of the sampled kernel is negligible.
    """
    d = bspec.d
    if d not in (1, 2, 3):
        raise ConfigError("bm_symbol_check supports d in {1, 2, 3}")
    if spec is None:
        from .grid import GridSpec
        shape, h = DEFAULT_BM_GRIDS[d]
        spec = GridSpec.centered(shape, (h,) * d)
    K = kernel_bm(bspec, spec)
    S = K.symbol()
    if np.max(np.abs(S.imag)) > 1e-8 * np.max(np.abs(S.real)):
        raise NumericalError("the isotropic kernel's DFT is not real; check the grid centering")
    mask = ~_band_mask(spec, (fit_fraction, 1.0))
    mask &= _band_mask(spec, (-1.0, 1.0))
    xs = np.stack(np.meshgrid(*spec.freqs(), indexing="ij"), axis=-1)
    xi_abs = np.linalg.norm(xs, axis=-1)[mask]
    s = S.real[mask]
    R = bm_rational_form(bspec, xi_abs)
    c = float(np.dot(R, s) / np.dot(R, R))
    res = float(np.linalg.norm(s - c * R) / np.linalg.norm(s))
    return BMSymbolFit(c, res, int(mask.sum()), float(xi_abs.max()))
