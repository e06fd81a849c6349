"""Compare the numba and pure-numpy paths of the two hot kernels.

Run with ``python benchmarks/bench_kernels.py``.  The numba path is compiled
once before timing; both paths must agree to 1e-12 relative.
"""
import argparse
import time

import numpy as np

from levycarma import _accel
from levycarma.grid import GridSpec
from levycarma.poly import parse_polynomial


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_image_sum(shape, J, repeat):
    d = len(shape)
    spec = GridSpec.centered(shape, (0.1,) * d)
    p = parse_polynomial("1 - " + " - ".join(f"x{k + 1}^2" for k in range(d)), d)
    q = parse_polynomial("1", d)
    args = (*q.packed(), *p.packed(), spec.freqs(), spec.spacing, J)
    _accel.image_sum_numba(*args)  # compile
    t_nb, (a_nb, _) = _best_of(lambda: _accel.image_sum_numba(*args), repeat)
    t_np, (a_np, _) = _best_of(lambda: _accel.image_sum_numpy(*args), repeat)
    err = float(np.max(np.abs(a_nb - a_np)) / np.max(np.abs(a_np)))
    return t_nb, t_np, err


def bench_rational_abs2(m, d, repeat):
    rng = np.random.default_rng(0)
    xi = rng.normal(size=(m, d)) * 5
    eta = np.full(d, 0.25)
    p = parse_polynomial("2 + " + " + ".join(f"x{k + 1}^2" for k in range(d)) + " + x1^3", d)
    q = parse_polynomial("1 + x1", d)
    args = (*q.packed(), *p.packed(), xi, eta)
    _accel.rational_abs2_numba(*args)
    t_nb, a_nb = _best_of(lambda: _accel.rational_abs2_numba(*args), repeat)
    t_np, a_np = _best_of(lambda: _accel.rational_abs2_numpy(*args), repeat)
    err = float(np.max(np.abs(a_nb - a_np) / np.abs(a_np)))
    return t_nb, t_np, err


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'case':<34} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8} {'rel diff':>10}")
    cases = [
        ("image_sum 4096, J=16", lambda: bench_image_sum((4096,), 16, args.repeat)),
        ("image_sum 64x64, J=8", lambda: bench_image_sum((64, 64), 8, args.repeat)),
        ("image_sum 24^3, J=2", lambda: bench_image_sum((24, 24, 24), 2, args.repeat)),
        ("rational_abs2 1e6 pts, d=2", lambda: bench_rational_abs2(10 ** 6, 2, args.repeat)),
    ]
    for name, fn in cases:
        t_nb, t_np, err = fn()
        print(f"{name:<34} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.2f} {err:>10.2e}")
        assert err < 1e-12, f"{name}: numba and numpy paths disagree ({err:.3g})"


if __name__ == "__main__":
    main()
