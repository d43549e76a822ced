import math

import numpy as np
import pytest

from fnodyn.dynamics import (
    PAPER_ICS,
    State,
    SystemCase,
    SystemParams,
    generate_dataset,
    integrate,
    integrate_states,
    rhs,
    sample_rng,
    stiffness_k1,
)
from fnodyn.rng import KeyedRng
from fnodyn.signals import FreqConfig, Impulse, TimeGrid, draw_forcing, sample_impulse, sample_two_tone
from fnodyn.spectral import welch_psd


def mechanical_energy(states, params, k1):
    x1, v1, x2, v2 = states.T
    return 0.5 * params.m1 * v1**2 + 0.5 * params.m2 * v2**2 \
        + 0.5 * k1 * x1**2 + 0.5 * params.k2 * (x1 - x2) ** 2


def test_stiffness_values():
    p = SystemParams.for_case(SystemCase.LINEAR_SOFTENING)
    assert stiffness_k1(SystemCase.LINEAR_SOFTENING, p, 0.0) == pytest.approx(40.0)
    assert stiffness_k1(SystemCase.LINEAR, p, 123.0) == pytest.approx(30.0)
    # scalar oracle evaluation
    expected = 10.0 + 30.0 * math.exp(-0.05 * 100.0)
    assert stiffness_k1(SystemCase.NONLINEAR_SOFTENING, p, 100.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(10.2021, abs=1e-4)


def test_rhs_equilibrium():
    for case in SystemCase:
        p = SystemParams.for_case(case)
        d = rhs(State(0, 0, 0, 0), 3.0, case, p, 0.0)
        assert d.as_array().tolist() == [0.0, 0.0, 0.0, 0.0]


def test_rhs_equal_displacement_decouples():
    c = 0.37
    p = SystemParams.for_case(SystemCase.LINEAR)
    d = rhs(State(c, 0, c, 0), 0.0, SystemCase.LINEAR, p, 0.0)
    assert d.v1 == pytest.approx(-p.k1_const * c / p.m1, abs=1e-14)
    assert d.v2 == pytest.approx(0.0, abs=1e-14)


def test_rhs_matches_direct_equations():
    # direct per-equation oracle for the nonlinear case
    rng = KeyedRng(31, "rhs-oracle")
    p = SystemParams.for_case(SystemCase.NONLINEAR)
    for _ in range(20):
        x1, v1, x2, v2 = rng.normal(size=(4,))
        f = rng.normal() * 10
        t = abs(rng.normal()) * 100
        d = rhs(State(x1, v1, x2, v2), t, SystemCase.NONLINEAR, p, f)
        a1 = (f - 30.0 * x1 - 50.0 * (x1 - x2) - 20.0 * (x1 - x2) ** 3) / 5.0
        a2 = (-50.0 * (x2 - x1) - 20.0 * (x2 - x1) ** 3) / 10.0
        assert d.x1 == pytest.approx(v1, abs=1e-14)
        assert d.v1 == pytest.approx(a1, rel=1e-14, abs=1e-14)
        assert d.x2 == pytest.approx(v2, abs=1e-14)
        assert d.v2 == pytest.approx(a2, rel=1e-14, abs=1e-14)


def test_rhs_rejects_nonfinite_state():
    p = SystemParams.for_case(SystemCase.LINEAR)
    with pytest.raises(ValueError):
        rhs(State(np.nan, 0, 0, 0), 0.0, SystemCase.LINEAR, p, 0.0)


def test_integrate_zero_everything():
    grid = TimeGrid(n_steps=500)
    p = SystemParams.for_case(SystemCase.NONLINEAR)
    traj = integrate(SystemCase.NONLINEAR, p, grid, np.zeros(500), ics=State(0, 0, 0, 0))
    assert np.all(traj.x1 == 0.0) and np.all(traj.x2 == 0.0)


@pytest.fixture(scope="module")
def linear_free_states():
    grid = TimeGrid()
    p = SystemParams.for_case(SystemCase.LINEAR)
    return grid, p, integrate_states(SystemCase.LINEAR, p, grid, np.zeros(5000))


def test_linear_free_vibration_energy_conserved(linear_free_states):
    grid, p, states = linear_free_states
    E = mechanical_energy(states, p, p.k1_const)
    assert np.abs(E - E[0]).max() / E[0] < 1e-6


def test_linear_free_psd_peaks_at_eigenfrequencies(linear_free_states):
    grid, p, states = linear_free_states
    # eigen-oracle: 2x2 generalized problem K v = w^2 M v
    M = np.diag([p.m1, p.m2])
    K = np.array([[p.k1_const + p.k2, -p.k2], [-p.k2, p.k2]])
    lam = np.sort(np.linalg.eigvals(np.linalg.inv(M) @ K).real)
    f_eig = np.sqrt(lam) / (2 * np.pi)
    assert f_eig[0] == pytest.approx(0.1976, abs=2e-4)
    assert f_eig[1] == pytest.approx(0.7021, abs=2e-4)

    est = welch_psd(states[:, 0], fs=grid.fs)
    df = est.freqs[1] - est.freqs[0]
    v = est.values
    local_max = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    peaks = local_max[np.argsort(v[local_max])][-2:]
    found = np.sort(est.freqs[peaks])
    assert abs(found[0] - f_eig[0]) <= df
    assert abs(found[1] - f_eig[1]) <= df


def test_tolerance_halving_convergence():
    # linear plant: the nonlinear broadband system amplifies any tolerance
    # difference exponentially (mild chaos), so convergence is asserted where
    # trajectories are stable
    grid = TimeGrid()
    p = SystemParams.for_case(SystemCase.LINEAR)
    spec = draw_forcing(FreqConfig.BROADBAND, KeyedRng(77, 0))
    forcing = sample_two_tone(spec, grid)
    fn = lambda t: 20.0 * spec.a_sin * np.sin(2 * np.pi * spec.f1 * t + spec.phi1) \
        + 16.0 * spec.a_cos * np.cos(2 * np.pi * spec.f2 * t + spec.phi2)
    a = integrate_states(SystemCase.LINEAR, p, grid, forcing, forcing_fn=fn)
    b = integrate_states(SystemCase.LINEAR, p, grid, forcing, forcing_fn=fn,
                         rtol=0.5e-8, atol=0.5e-10)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-7


@pytest.mark.parametrize("case", [SystemCase.LINEAR, SystemCase.NONLINEAR])
def test_autonomous_time_shift(case):
    # time-shifting a forcing that is zero before the shift shifts the response
    grid = TimeGrid(n_steps=2000)
    p = SystemParams.for_case(case)
    shift = 250  # samples
    base = sample_impulse(Impulse(t_center=20.0, amplitude=50.0, width=0.2), grid)
    shifted = sample_impulse(Impulse(t_center=20.0 + shift * grid.dt, amplitude=50.0, width=0.2), grid)
    rest = State(0, 0, 0, 0)
    # tighter-than-default tolerances: the property is about autonomy, so keep
    # accumulated integration error well below the assertion threshold
    ya = integrate_states(case, p, grid, base, ics=rest, rtol=1e-11, atol=1e-13)
    yb = integrate_states(case, p, grid, shifted, ics=rest, rtol=1e-11, atol=1e-13)
    ref = ya[: grid.n_steps - shift]
    assert np.linalg.norm(yb[shift:] - ref) / np.linalg.norm(ref) < 1e-6
    assert np.abs(yb[:shift]).max() < 1e-12


def test_dataset_nesting_prefix():
    d_small = generate_dataset(SystemCase.LINEAR, FreqConfig.LOW, 8, seed=41, grid=TimeGrid(n_steps=400))
    d_big = generate_dataset(SystemCase.LINEAR, FreqConfig.LOW, 24, seed=41, grid=TimeGrid(n_steps=400))
    for name in ("forcing", "x1", "x2"):
        assert np.array_equal(d_big.channel(name)[:8], d_small.channel(name))


def test_dataset_forcing_regenerates_from_keyed_rng():
    grid = TimeGrid(n_steps=300)
    d = generate_dataset(SystemCase.LINEAR, FreqConfig.BROADBAND, 5, seed=13, grid=grid)
    for i in range(5):
        spec = draw_forcing(FreqConfig.BROADBAND, sample_rng(13, i))
        assert np.array_equal(d.forcing[i], sample_two_tone(spec, grid))


def test_dataset_uses_paper_ics():
    grid = TimeGrid(n_steps=200)
    d = generate_dataset(SystemCase.LINEAR, FreqConfig.LOW, 2, seed=3, grid=grid)
    assert np.all(d.x1[:, 0] == PAPER_ICS.x1)
    assert np.all(d.x2[:, 0] == PAPER_ICS.x2)


def test_dataset_norm_stats_from_prefix():
    grid = TimeGrid(n_steps=300)
    d = generate_dataset(SystemCase.LINEAR, FreqConfig.LOW, 6, seed=9, grid=grid)
    assert d.norm_stats.mean[1] == pytest.approx(d.x1.mean())
    assert d.norm_stats.std[2] == pytest.approx(d.x2.std())


def test_integration_failure_reports_sample_index():
    from fnodyn.dynamics import IntegrationError
    # absurd cubic stiffness overflows the state; the error names the sample
    grid = TimeGrid(n_steps=100)
    p = SystemParams(k3=1e250)
    forcing = np.full(100, 1e3)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(IntegrationError) as err:
            integrate_states(SystemCase.NONLINEAR, p, grid, forcing)
    assert err.value.sample_index == 0


def test_params_validation():
    with pytest.raises(ValueError):
        SystemParams(m1=0.0)
    with pytest.raises(ValueError):
        SystemParams(k3=-1.0)
    assert SystemParams.for_case(SystemCase.NONLINEAR).k3 == 20.0
    assert SystemParams.for_case(SystemCase.LINEAR).k3 == 0.0


def test_case_parse():
    assert SystemCase.parse("Nonlinear_Softening") is SystemCase.NONLINEAR_SOFTENING
    with pytest.raises(ValueError):
        SystemCase.parse("cubic")
