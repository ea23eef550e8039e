import numpy as np
import pytest

from ..nfsf.errors import DomainError
from ..nfsf.equilibrium import (
    g_function,
    homogeneous_branch,
    state_from_field,
    stationarity_residual,
    truncated_gaussian_stats,
)
from ..nfsf.model.density import DensityField, mean_activity
from ..nfsf.model.grids import ActivityGrid, SpatialGrid
from ..nfsf.model.inputs import ExternalInput
from ..nfsf.model.kernel import ConnectivityKernel
from ..nfsf.model.modulation import ModulationFn
from ..nfsf.model.params import ModelParams
from ..nfsf.solvers.direct import SolverConfig, simulate
from ..nfsf.stability import check_high_noise_remark


def _params(phi: ModulationFn, w: float, b: float, sigma: float = 1.0, n_x: int = 4) -> ModelParams:
    g = SpatialGrid.create(1, 1.0, n_x)
    return ModelParams.create(phi, ConnectivityKernel.constant(g, w), ExternalInput.constant(b), sigma=sigma)


def _high_noise() -> ModelParams:
    # threshold L^{2d}πB²/(2W₀²) = π/8, so σ = π/4 is twice above it
    return _params(ModulationFn.rectifier(1.0), -1.0, 0.5, sigma=np.pi / 4.0, n_x=8)


def test_g_function() -> None:
    assert float(g_function(0.0)) == pytest.approx(1.0 - 2.0 / np.pi)
    g = g_function(np.linspace(-6.0, 6.0, 49))
    assert np.all((g > 0.0) & (g < 1.0))
    assert np.all(np.diff(g) > 0.0)


def test_truncated_gaussian_stats() -> None:
    z, rho_bar, m_inf = truncated_gaussian_stats(0.0, 2.0, 2.0)
    assert float(z) == pytest.approx(2.0 * np.sqrt(np.pi))
    assert float(rho_bar) == pytest.approx(np.sqrt(4.0 / np.pi) / 2.0)
    assert float(m_inf) == pytest.approx(2.0 * (1.0 - 2.0 / np.pi) / 2.0)

    g = SpatialGrid.create(1, 2.0, 1)
    rho = DensityField.half_gaussian(g, ActivityGrid.create(20.0, 8000), 2.0, 1.3)
    _, rho_bar, m_inf = truncated_gaussian_stats(1.3, 2.0, 2.0)
    m = float(mean_activity(rho)[0])
    assert m == pytest.approx(float(rho_bar), rel=1e-5)
    spread = float(rho.moment(lambda s: (s - m * 2.0) ** 2)[0])
    assert spread == pytest.approx(float(m_inf), rel=1e-5)
    with pytest.raises(DomainError):
        truncated_gaussian_stats(0.0, 0.0, 1.0)


def test_high_noise_branch() -> None:
    p = _high_noise()
    assert check_high_noise_remark(p)[0].passed
    state = homogeneous_branch(p, ActivityGrid.covering(0.0, p.sigma, n_s=256))
    assert np.all(state.phi0 == 0.0)
    assert state.roots == (0.0,)
    assert state.homogeneous
    assert state.residual == 0.0
    assert state.scalars()["Phi0"] == 0.0
    assert set(state.scalars()) == {"Phi0", "Phi0_prime", "rho_bar_inf", "M_inf", "Z_rho", "residual"}
    assert state.M_sup == pytest.approx(p.sigma * (1.0 - 2.0 / np.pi))


def test_high_noise_state_is_stationary() -> None:
    p = _high_noise()
    state = homogeneous_branch(p, ActivityGrid.covering(0.0, p.sigma, n_s=256))
    relation, discrete = stationarity_residual(state, p, parts=True)
    assert relation < 1e-3
    assert discrete < 1e-10
    run = simulate(state.profile, p, SolverConfig.create(0.01, 1.0))
    assert np.abs(run.final.values - state.profile.values).max() < 1e-10


def test_linear_branch() -> None:
    p = _params(ModulationFn.linear(1.0), 0.0, 0.6)
    state = homogeneous_branch(p, ActivityGrid.covering(0.6, 1.0, n_s=256))
    np.testing.assert_allclose(state.phi0, 0.6, atol=1e-14)
    np.testing.assert_allclose(state.phi0_prime, 1.0)
    _, rho_bar, _ = truncated_gaussian_stats(0.6, 1.0, 1.0)
    np.testing.assert_allclose(state.rho_bar, rho_bar)
    assert state.residual < 1e-12


def test_bistable_branch() -> None:
    p = _params(ModulationFn.sigmoid(4.0, 2.0, 0.2), 1.0, 0.0, sigma=0.1)
    state = homogeneous_branch(p, ActivityGrid.covering(4.0, 0.1, n_s=256))
    assert len(state.roots) == 3
    assert state.roots[0] < 0.01 < 1.0 < state.roots[1] < 3.0 < state.roots[2]
    np.testing.assert_allclose(state.phi0, state.roots[0])


def test_state_from_field() -> None:
    p = _params(ModulationFn.linear(1.0), 0.0, 0.6)
    state = homogeneous_branch(p, ActivityGrid.covering(0.6, 1.0, n_s=256))
    again = state_from_field(state.profile, p)
    np.testing.assert_allclose(again.phi0, state.phi0, atol=1e-12)
    np.testing.assert_allclose(again.M_inf, state.M_inf, rtol=1e-10)


def test_branch_needs_constant_input() -> None:
    g = SpatialGrid.create(1, 1.0, 2)
    p = ModelParams.create(
        ModulationFn.linear(1.0), ConnectivityKernel.constant(g, 0.0), ExternalInput.tabulated([0.0, 1.0], [0.0, 1.0])
    )
    with pytest.raises(DomainError):
        homogeneous_branch(p, ActivityGrid.create(10.0, 64))
