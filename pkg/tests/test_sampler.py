import numpy as np
import pytest

from ssdm import diffusion as dif
from ssdm import geometry as geo
from ssdm import sampler as smp
from ssdm import training as tr
from ssdm.rng import RngStream
from ssdm.score_model import ScoreNet

SCHED = dif.NoiseSchedule.default(4, n_steps=100)


def zero_net(d=4, head="horizontal"):
    return ScoreNet.create(d, RngStream(0), hidden=16, head=head)


def constant_net(c: np.ndarray):
    """Zero weights everywhere, final bias ``c``: raw output is ``c`` for every input."""
    net = zero_net(len(c) // 2)
    net.params[:] = 0.0
    net.layers()[-1][1][:] = c
    return net


def test_zero_net_without_drift_keeps_haar():
    free = SCHED.with_(lambda_ou=0.0)
    ens = smp.sample_ensemble(zero_net(), free, 2000, seed=1)
    f = np.abs(ens[:, 0]) ** 2
    assert f.mean() == pytest.approx(0.25, abs=4 * f.std() / np.sqrt(len(f)))
    assert np.mean(f**2) == pytest.approx(0.1, abs=0.01)


def test_unit_norm_output():
    ens = smp.sample_ensemble(zero_net(), SCHED, 70, seed=2)
    assert np.max(np.abs(geo.norm(ens) - 1)) < 1e-12


def test_prefix_and_thread_invariance():
    net = ScoreNet.create(4, RngStream(3), hidden=16, zero_final=False)
    full = smp.sample_ensemble(net, SCHED, 150, seed=4)
    assert smp.sample_ensemble(net, SCHED, 70, seed=4).tobytes() == full[:70].tobytes()
    assert smp.sample_ensemble(net, SCHED, 150, seed=4, threads=3).tobytes() == full.tobytes()
    assert not np.array_equal(smp.sample_ensemble(net, SCHED, 5, seed=5), full[:5])


def test_reverse_step_noise_free_displacement():
    c = np.array([0.3, -0.1, 0.2, 0.05, 0.0, 0.4, -0.2, 0.1])
    net = constant_net(c)
    free = SCHED.with_(lambda_ou=0.0)
    psi = geo.haar_state(4, RngStream(6), 3)
    t, dt = 0.7, free.dt
    out = smp._reverse_from_raw(net, free, psi, t, dt, np.zeros((3, 8)))
    sigma2 = float(free.sigma(t)) ** 2
    field = geo.project_horizontal(psi, c[:4] + 1j * c[4:])
    assert np.allclose(geo.fs_distance(psi, out), sigma2 * dt * geo.norm(field), rtol=1e-9)
    assert np.allclose(out, geo.exp_map(psi, sigma2 * dt * field), atol=1e-14)


def test_reverse_step_runs_forward_drift_backwards():
    psi = geo.haar_state(4, RngStream(7), 4)
    t, dt = 0.5, SCHED.dt
    out = smp._reverse_from_raw(zero_net(), SCHED, psi, t, dt, np.zeros((4, 8)))
    assert np.allclose(out, geo.exp_map(psi, -dif.drift(SCHED, psi, t) * dt), atol=1e-14)


def test_reverse_step_noise_scale():
    free = SCHED.with_(lambda_ou=0.0)
    psi = np.tile(geo.basis_state(4), (20_000, 1))
    out = smp.reverse_step(zero_net(), free, psi, 0.5, free.dt, RngStream(8))
    # squared FS displacement averages (2d - 2) sigma^2 dt for horizontal real dimension 2d - 2
    msd = np.mean(geo.fs_distance(psi, out) ** 2)
    expected = 6 * float(free.sigma(0.5)) ** 2 * free.dt
    assert msd == pytest.approx(expected, rel=0.03)


def test_reverse_step_single_state_and_bounds():
    psi = geo.basis_state(4)
    out = smp.reverse_step(zero_net(), SCHED, psi, 0.5, SCHED.dt, RngStream(9))
    assert out.shape == (4,)
    with pytest.raises(ValueError):
        smp.reverse_step(zero_net(), SCHED, psi, 0.0, SCHED.dt, RngStream(9))
    with pytest.raises(ValueError):
        smp.reverse_step(zero_net(), SCHED, psi, 1.5, SCHED.dt, RngStream(9))


def test_sample_validation():
    with pytest.raises(ValueError):
        smp.sample_ensemble(zero_net(), SCHED, 0, seed=1)
    with pytest.raises(ValueError):
        smp.sample_ensemble(zero_net(d=2), SCHED, 3, seed=1)


def test_vp_sample_unit_norm_and_deterministic():
    net = zero_net(head="identity")
    a = smp.vp_sample(net, SCHED, 80, seed=10)
    b = smp.vp_sample(net, SCHED, 80, seed=10, threads=2)
    assert np.max(np.abs(geo.norm(a) - 1)) < 1e-12
    assert a.tobytes() == b.tobytes()
    assert smp.vp_sample(net, SCHED, 10, seed=10).tobytes() == a[:10].tobytes()


@pytest.mark.slow
def test_point_mass_is_recovered():
    sched = dif.NoiseSchedule.default(4)
    data = np.tile(geo.basis_state(4), (64, 1))
    net, _, _ = tr.train(tr.TrainConfig(schedule=sched, steps=2000, seed=12), data)
    gen = smp.sample_ensemble(net, sched, 256, seed=13)
    fid = float(np.mean(np.abs(gen[:, 0]) ** 2))
    assert fid >= 0.25 + 0.5
