import math

import numpy as np
import pytest

from kslab import dynamics
from kslab.constants import ModelParams
from kslab.criterion import amplitude_for_ratio
from kslab.dynamics import (
    NumericalBlowup,
    PositivityError,
    SimState,
    SolverConfig,
    choose_dt,
    initial_data,
    run,
    step,
)
from kslab.field import GridSpec, ScalarField, lp_norm, mass, solve_helmholtz, write_field
from kslab.semigroup import heat_evolve

P = ModelParams(3, 1.25, 1.0)


def blob_setup(N=24, L=20.0, ratio=0.5, c0="resolvent"):
    g = GridSpec(3, N, L)
    rho, _ = initial_data("gaussian_blob", g, 1.0, c0="zero")
    rho = rho * amplitude_for_ratio(rho, P, ratio)
    c = solve_helmholtz(rho) if c0 == "resolvent" else ScalarField.zeros(g)
    return rho, c, ModelParams(3, 1.25, mass(rho))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt_init=0.0)
    with pytest.raises(ValueError):
        SolverConfig(cfl_safety=1.5)
    with pytest.raises(ValueError):
        SolverConfig(epsilon=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(scheme="rk4")


def test_initial_data_mass():
    g = GridSpec(3, 32, 20.0)
    rho, c = initial_data("gaussian_blob", g, 1.0)
    assert mass(rho) == pytest.approx(1.0, abs=1e-12)
    assert rho.values.min() >= 0
    assert np.allclose(c.values, solve_helmholtz(rho).values)
    _, c = initial_data("gaussian_blob", g, 2.0, c0="zero")
    assert not c.values.any()
    with pytest.raises(ValueError):
        initial_data("gaussian_blob", g, 0.0)
    with pytest.raises(ValueError):
        initial_data("ring", g, 1.0)


def test_two_blobs_reflection_symmetric():
    g = GridSpec(3, 32, 20.0)
    rho, _ = initial_data("two_blobs", g, 3.0, separation=5.0)
    idx = (-np.arange(g.N)) % g.N  # x -> -x on the [-L/2, L/2) lattice
    assert np.abs(rho.values - rho.values[idx, :, :]).max() <= 1e-12 * rho.values.max()
    assert mass(rho) == pytest.approx(3.0, rel=1e-12)


def test_noise_is_seeded():
    g = GridSpec(2, 16, 10.0)
    a, _ = initial_data("gaussian_blob", g, 1.0, noise=0.1, seed=7)
    b, _ = initial_data("gaussian_blob", g, 1.0, noise=0.1, seed=7)
    c, _ = initial_data("gaussian_blob", g, 1.0, noise=0.1, seed=8)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_file_initial_data_round_trip(tmp_path):
    g = GridSpec(3, 16, 10.0)
    rho, _ = initial_data("gaussian_blob", g, 2.0)
    write_field(tmp_path / "r.ksf", rho)
    back, _ = initial_data("file", path=tmp_path / "r.ksf", mass_target=None)
    assert back.values.tobytes() == rho.values.tobytes()
    (tmp_path / "bad.ksf").write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(ValueError, match="magic"):
        initial_data("file", path=tmp_path / "bad.ksf")


def test_constant_state_is_steady():
    g = GridSpec(3, 16, 10.0)
    rho = ScalarField.constant(g, 0.7)
    c = ScalarField.constant(g, 0.2)
    cfg = SolverConfig(epsilon=1e-6, dt_init=0.05, t_end=5.0)
    s = run(cfg, P, (rho, c), keep_snapshots=False).final
    assert s.t == 5.0
    assert np.abs(s.rho.values - 0.7).max() < 1e-14
    # c relaxes toward the constant density
    assert abs(s.c.values.mean() - 0.7) < abs(0.2 - 0.7) * math.exp(-4.0)


def test_one_step_conserves_mass_and_positivity():
    rho, c, prm = blob_setup()
    cfg = SolverConfig(epsilon=1e-6)
    s = step(SimState(rho, c), cfg, prm)
    assert abs(mass(s.rho) - mass(rho)) <= 1e-12 * mass(rho)
    assert s.rho.values.min() >= 0
    assert s.step_count == 1 and s.t == pytest.approx(s.dt_last)
    assert s.c_prev is c


@pytest.mark.parametrize("scheme", ["explicit_rho_implicit_c", "fully_explicit"])
@pytest.mark.parametrize("mollify", [True, False])
def test_short_run_invariants(scheme, mollify):
    rho, c, prm = blob_setup()
    cfg = SolverConfig(epsilon=1e-6, t_end=0.05, snapshot_every=5, scheme=scheme, mollify=mollify)
    traj = run(cfg, prm, (rho, c))
    assert traj.outcome == "completed"
    assert traj.final.t == 0.05
    M0 = mass(rho)
    for s in traj.snapshots:
        assert abs(mass(s.rho) - M0) <= 1e-10 * M0
        assert s.rho.values.min() >= -1e-12 * s.rho.values.max()


def test_pure_diffusion_matches_heat_semigroup():
    g = GridSpec(3, 64, 10.0)
    rho, _ = initial_data("gaussian_blob", g, 1.0, c0="zero")
    prm = ModelParams(3, 1.0 + 1e-12, 1.0)
    cfg = SolverConfig(epsilon=0.0, t_end=0.01, chemotaxis=False, mollify=False, cfl_safety=0.5)
    traj = run(cfg, prm, (rho, ScalarField.zeros(g)))
    ref = heat_evolve(rho, 0.01)
    assert lp_norm(traj.final.rho - ref, 2) / lp_norm(ref, 2) <= 1e-3


def test_choose_dt_formula():
    g = GridSpec(3, 16, 8.0)
    z = ScalarField.zeros(g)
    eps = 1e-4
    cfg = SolverConfig(epsilon=eps, dt_init=1e6, t_end=1e9, cfl_safety=0.5)
    dt = choose_dt(SimState(z, z), cfg, P)
    assert dt == pytest.approx(0.5 * g.dx**2 / (2 * 3 * 1.25 * eps**0.25), rel=1e-12)


def test_choose_dt_decreases_with_density():
    g = GridSpec(3, 16, 8.0)
    z = ScalarField.zeros(g)
    cfg = SolverConfig(dt_init=1e6, t_end=1e9)
    a = choose_dt(SimState(ScalarField.constant(g, 1.0), z), cfg, P)
    b = choose_dt(SimState(ScalarField.constant(g, 2.0), z), cfg, P)
    assert b < a


def test_choose_dt_advection_limited_scales_with_dx():
    dts = []
    for N in (64, 128):
        g = GridSpec(1, N, 20.0)
        rho = ScalarField.constant(g, 1e-12)
        c = ScalarField(g, 1e3 * np.exp(-g.radius_squared() / 2))
        cfg = SolverConfig(epsilon=0.0, dt_init=1e6, t_end=1e9, mollify=False)
        dts.append(choose_dt(SimState(rho, c), cfg, P))
    assert dts[1] / dts[0] == pytest.approx(0.5, rel=2e-2)


def test_choose_dt_respects_caps():
    rho, c, prm = blob_setup()
    cfg = SolverConfig(dt_init=1e-5, t_end=1.0)
    assert choose_dt(SimState(rho, c), cfg, prm) == 1e-5
    cfg = SolverConfig(dt_init=1.0, t_end=1.0)
    assert choose_dt(SimState(rho, c, t=1.0 - 1e-9), cfg, prm) == pytest.approx(1e-9)


def test_excess_negativity_is_a_hard_failure():
    rho, c, prm = blob_setup()
    with pytest.raises(PositivityError):
        step(SimState(rho, c), SolverConfig(), prm, dt=1.0)


def test_dt_floor_raises_and_run_flags(monkeypatch):
    rho, c, prm = blob_setup()
    with pytest.raises(NumericalBlowup):
        step(SimState(rho, c), SolverConfig(), prm, dt=1e-13)
    monkeypatch.setattr(dynamics, "DT_FLOOR", 1.0)
    traj = run(SolverConfig(t_end=0.1), prm, (rho, c))
    assert traj.outcome == "numerical_blowup_flag"
    assert "t=" in traj.message
    assert len(traj.snapshots) == 1


def test_t_end_zero_gives_initial_state_only():
    rho, c, prm = blob_setup()
    traj = run(SolverConfig(t_end=0.0), prm, (rho, c))
    assert len(traj.snapshots) == 1
    assert traj.snapshots[0].rho is rho


def test_runs_are_deterministic():
    rho, c, prm = blob_setup()
    cfg = SolverConfig(t_end=0.03, snapshot_every=3)
    a = run(cfg, prm, (rho, c))
    b = run(cfg, prm, (rho, c))
    assert len(a.snapshots) == len(b.snapshots)
    for x, y in zip(a.snapshots, b.snapshots):
        assert x.rho.values.tobytes() == y.rho.values.tobytes()
        assert x.c.values.tobytes() == y.c.values.tobytes()


def test_halving_dt_is_first_order():
    rho, c, prm = blob_setup(N=24)
    finals = []
    for cfl in (0.1, 0.05, 0.025):
        traj = run(SolverConfig(t_end=0.05, cfl_safety=cfl, dt_init=1.0), prm, (rho, c))
        finals.append(traj.final.rho)
    d1 = lp_norm(finals[0] - finals[1], 1)
    d2 = lp_norm(finals[1] - finals[2], 1)
    assert 1.6 < d1 / d2 < 2.4


def test_snapshot_cadence_and_callback():
    rho, c, prm = blob_setup()
    seen = []
    cfg = SolverConfig(t_end=0.02, snapshot_every=4)
    traj = run(cfg, prm, (rho, c), on_snapshot=lambda s: seen.append(s.step_count), keep_snapshots=False)
    assert seen[0] == 0 and seen[-1] == traj.steps
    assert all(k % 4 == 0 for k in seen[1:-1])
    assert len(traj.snapshots) == 1
