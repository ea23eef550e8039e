import numpy as np
import pytest

from ..nfsf.errors import BlowUpError, DomainError
from ..nfsf.model.density import DensityField, mean_activity
from ..nfsf.model.grids import ActivityGrid, SpatialGrid
from ..nfsf.model.inputs import ExternalInput
from ..nfsf.model.kernel import ConnectivityKernel
from ..nfsf.model.modulation import ModulationFn
from ..nfsf.model.params import ModelParams
from ..nfsf.solvers.direct import SolverConfig, simulate
from ..nfsf.solvers.stefan import (
    StefanConfig,
    TauMesh,
    _product_weights,
    alpha,
    initial_data,
    integrate_gamma,
    reconstruct_u,
    run_stefan,
    selfsimilar_to_density,
    t_of_tau,
    tau_of_t,
    to_original,
    to_selfsimilar,
)


def _single(phi: ModulationFn, w: float = 0.0, b: float = 0.0) -> ModelParams:
    g = SpatialGrid.create(1, 1.0, 1)
    return ModelParams.create(phi, ConnectivityKernel.constant(g, w), ExternalInput.constant(b))


def test_time_change() -> None:
    t = np.linspace(0.0, 3.0, 7)
    np.testing.assert_allclose(t_of_tau(tau_of_t(t)), t, atol=1e-14)
    np.testing.assert_allclose(alpha(tau_of_t(t)), np.exp(-t), rtol=1e-14)


def test_mesh_and_config() -> None:
    mesh = TauMesh.covering(0.01, 1.0)
    assert mesh.n_nodes == 101
    assert mesh.tau_end == pytest.approx(1.0)
    assert mesh.window(20, 100).k1 == 100
    with pytest.raises(DomainError):
        TauMesh.covering(0.001, 2.0).window(0, 1500)
    with pytest.raises(DomainError):
        StefanConfig.create(0.01, 1.0, window=2.0)
    with pytest.raises(DomainError):
        StefanConfig.create(0.0, 1.0)


def test_product_weights() -> None:
    h, m = 0.01, 40
    wa, wb = _product_weights(m + 1, h)
    assert not wa.flags.writeable
    lags = np.arange(1, m + 1)
    tau = m * h
    assert float((wa[lags] + wb[lags]).sum()) == pytest.approx(2.0 * np.sqrt(tau), rel=1e-12)
    # exact for linear integrands: ∫₀^τ η(τ − η)^{−1/2} dη = (4/3)τ^{3/2}
    linear = (wa[lags] * (tau - lags * h) + wb[lags] * (tau - (lags - 1) * h)).sum()
    assert float(linear) == pytest.approx(4.0 / 3.0 * tau**1.5, rel=1e-12)


def test_selfsimilar_round_trip() -> None:
    g = SpatialGrid.create(1, 1.0, 2)
    rho = DensityField.half_gaussian(g, ActivityGrid.create(10.0, 100), 1.0, 1.0)
    rho = rho.with_values(rho.values, 0.4)
    u = to_selfsimilar(rho)
    assert u.tau == pytest.approx(float(tau_of_t(0.4)))
    np.testing.assert_allclose(u.mass_per_x, rho.mass_per_x, rtol=1e-12)
    np.testing.assert_allclose(np.exp(-0.4) * u.first_moment, mean_activity(rho), rtol=1e-12)
    back = selfsimilar_to_density(u, rho)
    np.testing.assert_allclose(back.values, rho.values, rtol=1e-12)


def test_constant_modulation_boundary() -> None:
    c = 0.7
    p = _single(ModulationFn.constant(c))
    mesh = TauMesh.covering(0.01, 1.0).window(0, 100)
    gamma, psi = integrate_gamma(np.zeros((1, 101)), np.array([0.0]), p, mesh)
    tau = mesh.nodes
    np.testing.assert_allclose(gamma[0], -c * (np.sqrt(2.0 * tau + 1.0) - 1.0), atol=1e-8)
    np.testing.assert_allclose(psi[0], c * alpha(tau), rtol=1e-12)
    with pytest.raises(DomainError):
        integrate_gamma(np.zeros((1, 50)), np.array([0.0]), p, mesh)


def test_blow_up() -> None:
    p = _single(ModulationFn.polynomial(0.0, 0.0, 1.0), 1.0)
    mesh = TauMesh.covering(1e-3, 1.0).window(0, 1000)
    with pytest.raises(BlowUpError) as e:
        integrate_gamma(np.zeros((1, 1001)), np.array([-5.0]), p, mesh)
    # γ′ = −α³γ² reaches −∞ at τ = 0.28125
    assert 0.27 < e.value.tau < 0.30
    assert e.value.diagnostics["tau"] == e.value.tau


def _ou_case() -> "tuple[ModelParams, DensityField]":
    p = _single(ModulationFn.linear(1.0), 0.0, 1.0)
    rho = DensityField.half_gaussian(p.grid, ActivityGrid.create(10.0, 200), 1.0, 1.0)
    return p, rho


def test_stefan_initial_state() -> None:
    p, rho = _ou_case()
    run = run_stefan(rho, p, StefanConfig.create(0.01, 0.1))
    assert run.mesh.tau_end >= float(tau_of_t(0.1))
    assert run.triple.filled == run.mesh.n_nodes - 1
    np.testing.assert_allclose(initial_data(rho).first_moment, mean_activity(rho), rtol=1e-12)
    assert to_original(run, 0.0, "mean")[0, 0] == pytest.approx(float(mean_activity(rho)[0]), rel=1e-12)
    # both backends extrapolate the boundary value from the first two cells
    np.testing.assert_allclose(run.boundary_trace([0.0])[0], rho.boundary_value(), rtol=1e-12)
    np.testing.assert_allclose(initial_data(rho).boundary_value, rho.boundary_value(), rtol=1e-12)
    u = reconstruct_u(run.triple, run.u0, 0.0, rho.activity.centers)
    np.testing.assert_allclose(u.u, rho.values, rtol=1e-12)
    assert run.triple.lipschitz_defect() <= 1e-12
    with pytest.raises(DomainError):
        to_original(run, 0.0, "variance")


def test_rebase_invariance() -> None:
    p = _single(ModulationFn.sigmoid(2.0, 0.5, 1.0), 0.5, 0.3)
    rho = DensityField.half_gaussian(p.grid, ActivityGrid.create(10.0, 100), 1.0, 0.5)
    a = run_stefan(rho, p, StefanConfig.create(0.005, 0.2, window=0.05, rebase=True))
    b = run_stefan(rho, p, StefanConfig.create(0.005, 0.2, window=0.05, rebase=False))
    np.testing.assert_allclose(a.triple.v, b.triple.v, atol=1e-8)
    np.testing.assert_allclose(a.triple.gamma, b.triple.gamma, atol=1e-8)


def test_agrees_with_direct() -> None:
    p, rho = _ou_case()
    t_end = 0.5
    direct = simulate(rho, p, SolverConfig.create(1e-3, t_end))
    stefan = run_stefan(rho, p, StefanConfig.create(2e-3, t_end))
    times = direct.step_times[::50]
    np.testing.assert_allclose(stefan.mean_trace(times), direct.means[::50], atol=2e-2)
    np.testing.assert_allclose(stefan.boundary_trace(times), direct.boundary[::50], atol=2e-2)
    final = stefan.field(t_end)
    assert final.l1_distance(direct.final) < 5e-2


def _coupled_case(n_s: int) -> "tuple[ModelParams, DensityField]":
    g = SpatialGrid.create(1, 1.0, 4)
    p = ModelParams.create(ModulationFn.rectifier(1.0, 0.2), ConnectivityKernel.cosine(g, 0.5), ExternalInput.constant(1.0))
    rho = DensityField.half_gaussian(g, ActivityGrid.create(10.0, n_s), 1.0, np.linspace(0.5, 1.5, 4))
    return p, rho


def test_coupled_agrees_with_direct() -> None:
    p, rho = _coupled_case(200)
    t_end = 0.5
    direct = simulate(rho, p, SolverConfig.create(1e-3, t_end))
    stefan = run_stefan(rho, p, StefanConfig.create(2e-3, t_end))
    times = direct.step_times[::50]
    np.testing.assert_allclose(stefan.mean_trace(times), direct.means[::50], atol=2e-2)
    np.testing.assert_allclose(stefan.boundary_trace(times), direct.boundary[::50], atol=2e-2)
    assert stefan.field(t_end).l1_distance(direct.final) < 5e-2


@pytest.mark.slow
@pytest.mark.parametrize("case", ["ou", "coupled"])
def test_reference_resolution_agreement(case: str) -> None:
    # Δs = √σ/50 and Δτ = 1e-3 over t ∈ [0, 1]
    if case == "ou":
        p = _single(ModulationFn.linear(1.0), 0.0, 1.0)
        rho = DensityField.half_gaussian(p.grid, ActivityGrid.create(10.0, 500), 1.0, 1.0)
    else:
        p, rho = _coupled_case(500)
    direct = simulate(rho, p, SolverConfig.create(1e-4, 1.0, snapshot_stride=2500))
    stefan = run_stefan(rho, p, StefanConfig.create(1e-3, 1.0))
    assert len(direct.snapshots) == 5
    for f in direct.snapshots:
        assert stefan.field(f.t).l1_distance(f) < 1e-3
