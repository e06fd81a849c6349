"""Hot kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``LEVYCARMA_DISABLE_NUMBA`` is
unset (or ``0``).  Both paths are always importable so tests and the benchmark
can compare them directly.

Polynomials are passed in packed form: ``exps`` is an ``(n_terms, d)`` int64
array of multi-indices and ``coefs`` a float64 vector.  The symbol of a
polynomial ``P`` at a complex point ``z`` is ``sum_t coefs[t] * prod_k z_k**exps[t, k]``.
"""
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled():
    flag = os.environ.get("LEVYCARMA_DISABLE_NUMBA", "0").strip().lower()
    return HAVE_NUMBA and flag in ("", "0", "false", "no")


def _njit(*args, **kwargs):
    if not HAVE_NUMBA:
        return lambda f: f
    return numba.njit(*args, **kwargs)


# ----------------------------------------------------------------------------
# numpy reference implementations
# ----------------------------------------------------------------------------

def _poly_eval_np(exps, coefs, z):
    """Evaluate a packed polynomial at complex points ``z`` of shape (..., d)."""
    out = np.zeros(z.shape[:-1], dtype=np.complex128)
    for t in range(len(coefs)):
        term = np.full(z.shape[:-1], coefs[t], dtype=np.complex128)
        for k in range(exps.shape[1]):
            e = exps[t, k]
            if e:
                term = term * z[..., k] ** e
        out += term
    return out


def _axis_images(n, J):
    """Image offsets and weights for every bin along one axis.

    Returns ``(offsets, weights, weights_prev)`` of shape ``(n, m)``.  The last
    entry holds the weights of the level ``J - 1`` image set expressed on the
    level ``J`` offsets, so one pass produces both levels.  Non-Nyquist bins use
    offsets ``-J..J`` with unit weights; the Nyquist bin of an even axis uses
    ``-J..J+1`` with half weights at both ends, which keeps the summed symbol
    Hermitian and the frequency extent equal to ``(2J+1) pi / h``.
    """
    m = 2 * J + 2
    offs = np.zeros((n, m), dtype=np.int64)
    wts = np.zeros((n, m))
    base = np.arange(-J, J + 1)
    offs[:, : 2 * J + 1] = base
    wts[:, : 2 * J + 1] = 1.0
    if n % 2 == 0:
        ny = n // 2
        offs[ny, :] = np.arange(-J, J + 2)
        wts[ny, :] = 1.0
        wts[ny, 0] = 0.5
        wts[ny, -1] = 0.5
    prev = np.where(np.abs(offs) <= J - 1, 1.0, 0.0) * (wts > 0)
    if n % 2 == 0 and J > 0:
        o = offs[n // 2]
        prev[n // 2] = np.where((o > -(J - 1)) & (o < J), 1.0, 0.0)
        prev[n // 2][(o == -(J - 1)) | (o == J)] = 0.5
    if J == 0:
        prev = wts.copy()
    return offs, wts, prev


def image_sum_numpy(num_exps, num_coefs, den_exps, den_coefs, freqs, spacing, J):
    """Alias-summed rational symbol on a full frequency grid.

    ``freqs`` is a list of per-axis angular frequency vectors (FFT order).
    Returns ``(A_J, A_{J-1})``; for ``J == 0`` the second entry equals the first.
    The symbol evaluated is ``num(i xi) / den(i xi)``.
    """
    d = len(freqs)
    shape = tuple(len(f) for f in freqs)
    per_axis = [_axis_images(len(f), J) for f in freqs]
    width = [2.0 * np.pi / h for h in spacing]
    acc = np.zeros(shape, dtype=np.complex128)
    acc_prev = np.zeros(shape, dtype=np.complex128)

    # iterate over image multi-index columns; each column is a full-grid pass
    cols = [range(pa[0].shape[1]) for pa in per_axis]
    for combo in np.ndindex(*[len(c) for c in cols]):
        w = np.ones(shape)
        wp = np.ones(shape)
        z = np.empty(shape + (d,), dtype=np.complex128)
        for k in range(d):
            offs, wts, prev = per_axis[k]
            sl = [None] * d
            sl[k] = slice(None)
            sl = tuple(sl)
            o = offs[:, combo[k]]
            w = w * wts[:, combo[k]][sl]
            xi = freqs[k] + o * width[k]
            z[..., k] = np.broadcast_to((1j * xi)[sl], shape)
            wp = wp * prev[:, combo[k]][sl]
        if not np.any(w):
            continue
        val = _poly_eval_np(num_exps, num_coefs, z) / _poly_eval_np(den_exps, den_coefs, z)
        acc += w * val
        acc_prev += wp * val
    return acc, acc_prev


def rational_abs2_numpy(num_exps, num_coefs, den_exps, den_coefs, xi, eta):
    """``|num(i xi + eta) / den(i xi + eta)|**2`` at points ``xi`` of shape (M, d)."""
    z = 1j * xi + eta[None, :]
    r = _poly_eval_np(num_exps, num_coefs, z) / _poly_eval_np(den_exps, den_coefs, z)
    return (r.real ** 2 + r.imag ** 2)


# ----------------------------------------------------------------------------
# numba implementations
# ----------------------------------------------------------------------------

@_njit(cache=True)
def _poly_eval_point(exps, coefs, z):
    s = 0.0 + 0.0j
    for t in range(coefs.shape[0]):
        term = coefs[t] + 0.0j
        for k in range(exps.shape[1]):
            e = exps[t, k]
            zk = z[k]
            for _ in range(e):
                term *= zk
        s += term
    return s


@_njit(cache=True, fastmath=True, error_model="numpy")
def _image_sum_kernel(num_exps, num_coefs, num_act, num_nact, den_exps, den_coefs, den_act, den_nact,
                      pow_tab, shape, wts_pad, wts_prev_pad, n_img, out, out_prev):
    # pow_tab[k, c, e, i] = (i * (xi_k[i] + offset_k[i, c] * width_k)) ** e
    # the outer loop runs over image columns so the grid sweep is contiguous;
    # monomials only multiply over the axes they actually contain
    d = shape.shape[0]
    total = out.shape[0]
    cnt = np.zeros(d, dtype=np.int64)
    idx = np.zeros(d, dtype=np.int64)
    for comb in range(n_img ** d):
        rem = comb
        for k in range(d - 1, -1, -1):
            cnt[k] = rem % n_img
            rem //= n_img
        for k in range(d):
            idx[k] = 0
        for flat in range(total):
            w = 1.0
            wp = 1.0
            for k in range(d):
                w *= wts_pad[k, cnt[k], idx[k]]
                wp *= wts_prev_pad[k, cnt[k], idx[k]]
            if w != 0.0:
                num = 0.0 + 0.0j
                for t in range(num_coefs.shape[0]):
                    term = num_coefs[t] + 0.0j
                    for j in range(num_nact[t]):
                        k = num_act[t, j]
                        term *= pow_tab[k, cnt[k], num_exps[t, k], idx[k]]
                    num += term
                den = 0.0 + 0.0j
                for t in range(den_coefs.shape[0]):
                    term = den_coefs[t] + 0.0j
                    for j in range(den_nact[t]):
                        k = den_act[t, j]
                        term *= pow_tab[k, cnt[k], den_exps[t, k], idx[k]]
                    den += term
                val = num * den.conjugate() / (den.real * den.real + den.imag * den.imag)
                out[flat] += w * val
                out_prev[flat] += wp * val
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] < shape[k]:
                    break
                idx[k] = 0
                k -= 1


def _active_axes(exps):
    """Per term, the axes with a nonzero exponent (padded) and their count."""
    act = np.zeros_like(exps)
    nact = np.zeros(exps.shape[0], dtype=np.int64)
    for t in range(exps.shape[0]):
        ks = np.nonzero(exps[t])[0]
        act[t, :len(ks)] = ks
        nact[t] = len(ks)
    return act, nact


def image_sum_numba(num_exps, num_coefs, den_exps, den_coefs, freqs, spacing, J):
    d = len(freqs)
    shape = np.array([len(f) for f in freqs], dtype=np.int64)
    nmax = int(shape.max())
    n_img = 2 * J + 2
    num_exps = np.ascontiguousarray(num_exps, dtype=np.int64)
    den_exps = np.ascontiguousarray(den_exps, dtype=np.int64)
    max_e = int(max(num_exps.max(), den_exps.max()))
    pow_tab = np.zeros((d, n_img, max_e + 1, nmax), dtype=np.complex128)
    wts_pad = np.zeros((d, n_img, nmax))
    wts_prev_pad = np.zeros((d, n_img, nmax))
    for k, f in enumerate(freqs):
        n = len(f)
        offs, wts, prev = _axis_images(n, J)
        zt = (1j * (np.asarray(f)[:, None] + offs * (2.0 * np.pi / spacing[k]))).T
        # repeated products: complex ``**`` goes through exp/log and is much slower
        pow_tab[k, :, 0, :n] = 1.0
        for e in range(1, max_e + 1):
            pow_tab[k, :, e, :n] = pow_tab[k, :, e - 1, :n] * zt
        wts_pad[k, :, :n] = wts.T
        wts_prev_pad[k, :, :n] = prev.T
    total = int(np.prod(shape))
    out = np.zeros(total, dtype=np.complex128)
    out_prev = np.zeros(total, dtype=np.complex128)
    num_act, num_nact = _active_axes(num_exps)
    den_act, den_nact = _active_axes(den_exps)
    _image_sum_kernel(num_exps, np.asarray(num_coefs, float), num_act, num_nact,
                      den_exps, np.asarray(den_coefs, float), den_act, den_nact,
                      pow_tab, shape, wts_pad, wts_prev_pad, n_img, out, out_prev)
    shp = tuple(int(s) for s in shape)
    return out.reshape(shp), out_prev.reshape(shp)


@_njit(cache=True)
def _rational_abs2_kernel(num_exps, num_coefs, den_exps, den_coefs, xi, eta, out):
    d = xi.shape[1]
    z = np.zeros(d, dtype=np.complex128)
    for m in range(xi.shape[0]):
        for k in range(d):
            z[k] = eta[k] + 1j * xi[m, k]
        r = _poly_eval_point(num_exps, num_coefs, z) / _poly_eval_point(den_exps, den_coefs, z)
        out[m] = r.real * r.real + r.imag * r.imag


def rational_abs2_numba(num_exps, num_coefs, den_exps, den_coefs, xi, eta):
    out = np.empty(xi.shape[0])
    _rational_abs2_kernel(np.ascontiguousarray(num_exps, dtype=np.int64), np.asarray(num_coefs, float),
                          np.ascontiguousarray(den_exps, dtype=np.int64), np.asarray(den_coefs, float),
                          np.ascontiguousarray(xi, dtype=np.float64), np.asarray(eta, float), out)
    return out


def image_sum(*args, **kwargs):
    if numba_enabled():
        return image_sum_numba(*args, **kwargs)
    return image_sum_numpy(*args, **kwargs)


def rational_abs2(*args, **kwargs):
    if numba_enabled():
        return rational_abs2_numba(*args, **kwargs)
    return rational_abs2_numpy(*args, **kwargs)
