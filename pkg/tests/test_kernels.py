import numpy as np
import pytest

from fockgen import _kernels_py, kernels

compiled = pytest.importorskip("fockgen._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("n_modes", [1, 2, 5, 12])
def test_phase_type_backends_agree(rng, n_modes):
    q = rng.uniform(0.05, 1.0, n_modes)
    a = 1.0 - q
    p1, t1 = compiled.phase_type(q, a, 40, 1e-12, 100)
    p2, t2 = _kernels_py.phase_type(q, a, 40, 1e-12, 100)
    np.testing.assert_allclose(p1, p2, rtol=1e-13, atol=1e-300)
    assert t1 == pytest.approx(t2, rel=1e-12, abs=1e-18)


def test_phase_type_adaptive_stops_at_tolerance():
    q = np.array([0.3, 0.5])
    probs, tail = compiled.phase_type(q, 1 - q, -1, 1e-12, 10_000)
    assert tail < 1e-12
    assert probs.sum() + tail == pytest.approx(1.0, abs=1e-14)
    shorter, tail_before = compiled.phase_type(q, 1 - q, probs.size - 2, 1e-12, 10_000)
    assert tail_before >= 1e-12


@pytest.mark.parametrize("lam2,eta_s,eta_i", [(0.0, 0.5, 0.5), (0.3, 1.0, 1.0), (0.6, 0.64, 0.59),
                                              (0.9, 0.0, 1.0), (1e-8, 0.3, 0.8)])
def test_joint_table_backends_agree(lam2, eta_s, eta_i):
    t1 = compiled.joint_table(lam2, eta_s, eta_i, 7, 5, 400)
    t2 = _kernels_py.joint_table(lam2, eta_s, eta_i, 7, 5, 400)
    np.testing.assert_allclose(t1, t2, rtol=1e-11, atol=1e-17)
