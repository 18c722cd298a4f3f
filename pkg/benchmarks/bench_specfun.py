"""Compare the compiled Bessel kernel with the pure-Python fallback.

Run with ``python3 benchmarks/bench_specfun.py [--repeat R]``. Both kernels
tabulate orders ``0..nmax`` on the same set of complex arguments; the
script prints the best-of-R wall time per call, the speedup, and the
largest relative disagreement between the two tables.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from regcloak import _fallback

try:
    from regcloak import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _arguments(size: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mag = 10 ** rng.uniform(-4, 2, size)
    ang = rng.uniform(-0.5, 0.5, size)
    return mag * np.exp(1j * ang)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nmax", type=int, nargs="+", default=[16, 40])
    ap.add_argument("--size", type=int, nargs="+", default=[1, 100, 2000])
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernel not built; only the fallback is available")
        return
    print(f"{'nmax':>5} {'points':>7} {'python [s]':>12} {'compiled [s]':>13} {'speedup':>8} {'max rel diff':>13}")
    for nmax in args.nmax:
        for size in args.size:
            z = _arguments(size)
            number = max(1, 2000 // size)
            t_py = min(timeit.repeat(lambda: _fallback.sph_jh_table(nmax, z), number=number, repeat=args.repeat)) / number
            t_c = min(timeit.repeat(lambda: _kernels.sph_jh_table(nmax, z), number=number, repeat=args.repeat)) / number
            jp, hp = _fallback.sph_jh_table(nmax, z)
            jc, hc = _kernels.sph_jh_table(nmax, z)
            diff = max(
                float(np.max(np.abs(jp - jc) / np.maximum(np.abs(jp), 1e-300))),
                float(np.max(np.abs(hp - hc) / np.maximum(np.abs(hp), 1e-300))),
            )
            print(f"{nmax:>5} {size:>7} {t_py:>12.3e} {t_c:>13.3e} {t_py / t_c:>8.1f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
