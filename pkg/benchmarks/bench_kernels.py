"""Compare the compiled kernels with their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the comparison does not depend on
``FOCKGEN_PURE_PYTHON``. Also checks that the two agree on every case.
"""

import argparse
import timeit

import numpy as np

from fockgen import _kernels_py as py
from fockgen.distributions import ModeSpectrum

try:
    from fockgen import _kernels as cy
except ImportError:  # extension not built
    cy = None


def cases():
    for k_max, gain in ((1, 1.0), (35, 1.0), (35, 2.0), (100, 3.0)):
        spec = ModeSpectrum.from_mu(gain, 0.6, k_max)
        q = np.ascontiguousarray(spec.vacuum_probs)
        a = np.ascontiguousarray(spec.emission_probs)
        yield f"phase_type  K={k_max:<3d} B={gain}", "phase_type", (q, a, -1, 1e-12, 2_000_000)
    for lam2, m_max in ((0.3, 60), (0.8, 200), (0.95, 800)):
        yield f"joint_table lam2={lam2} m={m_max}", "joint_table", (lam2, 0.64, 0.59, 20, 20, m_max)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"{'case':<32} {'python [ms]':>12} {'cython [ms]':>12} {'speed-up':>9}")
    for label, name, fargs in cases():
        f_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: f_py(*fargs), number=1, repeat=args.repeat))
        if cy is None:
            print(f"{label:<32} {1e3 * t_py:>12.3f} {'n/a':>12} {'':>9}")
            continue
        f_cy = getattr(cy, name)
        r_py, r_cy = f_py(*fargs), f_cy(*fargs)
        a_py = r_py[0] if isinstance(r_py, tuple) else r_py
        a_cy = r_cy[0] if isinstance(r_cy, tuple) else r_cy
        assert np.allclose(a_py, a_cy, rtol=1e-12, atol=1e-300), label
        t_cy = min(timeit.repeat(lambda: f_cy(*fargs), number=1, repeat=args.repeat))
        print(f"{label:<32} {1e3 * t_py:>12.3f} {1e3 * t_cy:>12.3f} {t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
