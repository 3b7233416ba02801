import threading

import numpy as np
import pytest

from cphifi.kernels import RkhsMode, gaussian_kernel, sym_eig


def test_gaussian_kernel_values():
    assert np.array_equal(gaussian_kernel([3.0, 3.0, 3.0], 1.0), np.ones((3, 3)))
    k = gaussian_kernel([0.0, 1.0], 1.0)
    assert np.isclose(k[0, 1], np.exp(-0.5)) and np.isclose(k[0, 1], 0.60653066, atol=1e-8)
    assert np.array_equal(np.diag(k), [1.0, 1.0])
    wide = gaussian_kernel(np.arange(5.0), 1e6)
    assert np.allclose(wide, 1.0, atol=1e-10)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_kernel_rejects_bandwidth(sigma):
    with pytest.raises(ValueError):
        gaussian_kernel([0.0, 1.0], sigma)


def test_sym_eig_identity_and_diag():
    u, d = sym_eig(np.eye(4))
    assert np.allclose(d, 1.0)
    u, d = sym_eig(np.diag([3.0, 1.0]))
    assert sorted(d) == [1.0, 3.0]
    assert np.allclose(np.abs(u), np.array([[0, 1], [1, 0]]))


def test_sym_eig_reconstructs(rng):
    g = rng.standard_normal((8, 8))
    k = g @ g.T
    u, d = sym_eig(k)
    assert np.linalg.norm(u.T @ u - np.eye(8)) <= 1e-10
    assert np.linalg.norm(u @ np.diag(d) @ u.T - k) <= 1e-10 * np.linalg.norm(k)
    assert np.all(d >= 0)


def test_sym_eig_rejects_nonsymmetric(rng):
    with pytest.raises(ValueError):
        sym_eig(rng.standard_normal((3, 3)))


@pytest.mark.parametrize("n", [10, 60, 200])
def test_gaussian_kernel_is_psd(rng, n):
    pts = rng.uniform(0, 10, n)
    evals = np.linalg.eigvalsh(gaussian_kernel(pts, rng.uniform(0.3, 3.0)))
    assert evals.min() >= -1e-10 * evals.max()


def test_rkhs_mode_caches_eig(rng):
    mode = RkhsMode.on_grid(30, 2.0, 0.1)
    assert mode.factorization_count == 0
    u, d = mode.eig
    assert mode.eig[0] is u
    assert mode.factorization_count == 1
    assert np.linalg.norm(u @ np.diag(d) @ u.T - mode.kernel) <= 1e-10 * np.linalg.norm(mode.kernel)
    other = mode.with_lambda(1.0)
    assert other.eig[0] is u and mode.factorization_count == 1 and other.lam == 1.0


def test_rkhs_mode_eig_once_under_threads():
    mode = RkhsMode.on_grid(150, 3.0)
    threads = [threading.Thread(target=lambda: mode.eig) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert mode.factorization_count == 1


def test_rkhs_mode_unknown_kernel():
    with pytest.raises(ValueError):
        RkhsMode([0.0, 1.0], 1.0, kernel="matern")


def test_rkhs_mode_from_matrix():
    m = RkhsMode.from_matrix(2 * np.eye(3), 1.0)
    assert np.array_equal(m.kernel, 2 * np.eye(3)) and m.n == 3
    assert np.allclose(m.eig[1], 2.0) and m.factorization_count == 1
    with pytest.raises(ValueError):
        RkhsMode.from_matrix(np.triu(np.ones((3, 3))))
