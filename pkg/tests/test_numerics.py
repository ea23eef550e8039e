import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ..nfsf.errors import DomainError
from ..nfsf.model.grids import SpatialGrid
from ..nfsf.model.kernel import ConnectivityKernel
from ..nfsf.numerics import (
    HeatKernelEval,
    fourier_modes,
    half_line_gaussian_integral,
    heat_kernel,
    heat_kernel_dxi,
    moment_zG,
    moment_zGdxi,
    periodic_convolve,
)

finite = st.floats(min_value=-3.0, max_value=3.0)
elapsed = st.floats(min_value=0.01, max_value=4.0)


def _quad(f, a: float, center: float) -> float:  # type: ignore
    b = max(a, center) + 30.0
    points = [center] if a < center < b else None
    return integrate.quad(f, a, b, points=points, epsabs=1e-13, epsrel=1e-11, limit=200)[0]


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-1.0, max_value=3.0), st.floats(min_value=0.5, max_value=5.0))
def test_half_line_gaussian_integral(mu: float, scale: float) -> None:
    expected = _quad(lambda y: np.exp(-((y - mu) ** 2) / (2.0 * scale)), 0.0, mu)
    assert float(half_line_gaussian_integral(mu, scale)) == pytest.approx(expected, rel=1e-8)


def test_half_line_gaussian_tail() -> None:
    assert float(half_line_gaussian_integral(0.0, 1.0)) == pytest.approx(np.sqrt(np.pi / 2.0))
    assert float(half_line_gaussian_integral(-40.0, 1.0)) > 0.0
    with pytest.raises(DomainError):
        half_line_gaussian_integral(0.0, 0.0)


def test_heat_kernel() -> None:
    total = integrate.quad(lambda z: heat_kernel(z, 0.7, 0.3, 0.2), -np.inf, np.inf)[0]
    assert total == pytest.approx(1.0, rel=1e-8)
    h = 1e-6
    fd = (heat_kernel(0.4, 1.0, 0.1 + h, 0.5) - heat_kernel(0.4, 1.0, 0.1 - h, 0.5)) / (2.0 * h)
    assert float(heat_kernel_dxi(0.4, 1.0, 0.1, 0.5)) == pytest.approx(float(fd), rel=1e-6)
    e = HeatKernelEval(0.4, 1.0, 0.1, 0.5)
    assert e.value == pytest.approx(float(heat_kernel(0.4, 1.0, 0.1, 0.5)))
    with pytest.raises(DomainError):
        heat_kernel(0.0, 1.0, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(finite, finite, elapsed)
def test_moment_zG(gamma: float, xi: float, dt: float) -> None:
    expected = _quad(lambda z: z * heat_kernel(z, 1.0 + dt, xi, 1.0), gamma, xi)
    assert float(moment_zG(gamma, 1.0 + dt, xi, 1.0)) == pytest.approx(expected, rel=1e-7, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(finite, finite, elapsed)
def test_moment_zGdxi(gamma_tau: float, gamma_eta: float, dt: float) -> None:
    expected = _quad(lambda z: z * heat_kernel_dxi(z, 1.0 + dt, gamma_eta, 1.0), gamma_tau, gamma_eta)
    assert float(moment_zGdxi(gamma_tau, 1.0 + dt, gamma_eta, 1.0)) == pytest.approx(expected, rel=1e-7, abs=1e-10)


def test_moment_near_singular() -> None:
    assert float(moment_zG(0.0, 1.0, 2.0, 1.0 - 1e-16)) == pytest.approx(2.0)
    assert float(moment_zG(3.0, 1.0, 2.0, 1.0 - 1e-16)) == 0.0
    assert float(moment_zGdxi(0.0, 1.0, -1.0, 1.0 - 1e-16)) == pytest.approx(0.0)
    assert np.isinf(moment_zGdxi(1.0, 1.0, 1.0, 1.0 - 1e-16))
    assert float(moment_zGdxi(-1.0, 1.0, -1.0, 1.0 - 1e-16)) == -np.inf
    # off the diagonal the Gaussian factor vanishes and only the indicator remains
    assert float(moment_zGdxi(0.3, 1.0, 0.1, 1.0 - 1e-15)) == 0.0
    assert float(moment_zGdxi(0.1, 1.0, 0.3, 1.0 - 1e-15)) == 1.0


def test_periodic_convolve_direct_sum() -> None:
    g = SpatialGrid.create(1, 2.0, 12)
    rng = np.random.default_rng(7)
    w = ConnectivityKernel.from_samples(g, rng.normal(size=12))
    f = rng.normal(size=12)
    direct = np.array([sum(w.samples[(i - j) % 12] * f[j] for j in range(12)) for i in range(12)]) * g.cell_volume
    np.testing.assert_allclose(periodic_convolve(w, f), direct, atol=1e-12)

    batch = np.stack([f, 2.0 * f])
    np.testing.assert_allclose(periodic_convolve(w, batch)[1], 2.0 * direct, atol=1e-12)
    with pytest.raises(DomainError):
        periodic_convolve(w, np.ones(5))


def test_periodic_convolve_2d() -> None:
    g = SpatialGrid.create(2, 1.0, 6)
    w = ConnectivityKernel.constant(g, 3.0)
    f = np.arange(36.0)
    np.testing.assert_allclose(periodic_convolve(w, f), 3.0 * f.sum() * g.cell_volume)
    np.testing.assert_allclose(periodic_convolve(w, f.reshape(6, 6)), 3.0 * f.sum() * g.cell_volume)


def test_shifted_kernel_translates() -> None:
    g = SpatialGrid.create(1, 1.0, 16)
    w = ConnectivityKernel.difference_of_gaussians(g, 1.0, 0.1, 0.5, 0.2)
    f = np.random.default_rng(3).uniform(size=16)
    np.testing.assert_allclose(periodic_convolve(w.shifted((3,)), f), np.roll(periodic_convolve(w, f), 3), atol=1e-12)


def test_fourier_modes_cosine() -> None:
    g = SpatialGrid.create(1, 3.0, 32)
    modes = fourier_modes(ConnectivityKernel.cosine(g, 0.8), 4)
    assert modes.k.shape == (9, 1)
    assert modes.mode(1).real == pytest.approx(0.8 * 3.0 / 2.0)
    assert modes.mode(-1).real == pytest.approx(0.8 * 3.0 / 2.0)
    assert abs(modes.mode(0)) < 1e-12
    assert abs(modes.mode(2)) < 1e-12
    assert modes.max_imag < 1e-12
    with pytest.raises(KeyError):
        modes.mode(5)


def test_fourier_modes_clip() -> None:
    g = SpatialGrid.create(2, 1.0, 8)
    modes = fourier_modes(ConnectivityKernel.constant(g, 2.0), 10)
    assert modes.k.shape == (81, 2)
    assert modes.mode(0, 0).real == pytest.approx(2.0)
    with pytest.raises(DomainError):
        fourier_modes(ConnectivityKernel.constant(g, 2.0), -1)
