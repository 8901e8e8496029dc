import json

import numpy as np
import pytest
from hypothesis import given, settings

from ssdm import geometry as geo
from ssdm import score_model as sm
from ssdm.rng import RngStream

from .conftest import seeds


def small_net(d=2, hidden=8, seed=0, head="horizontal", zero_final=False):
    return sm.ScoreNet.create(d, RngStream(seed), hidden=hidden, head=head, zero_final=zero_final)


def horizontal_batch(d, size, seed):
    rng = RngStream(seed)
    psi = geo.haar_state(d, rng, size)
    return psi, geo.project_horizontal(psi, rng.complex_normal((size, d)))


def test_time_embed_examples():
    e0 = sm.time_embed(0.0)
    assert e0.shape == (128,)
    assert np.array_equal(e0[:64], np.zeros(64)) and np.array_equal(e0[64:], np.ones(64))
    e1 = sm.time_embed(1.0)
    assert e1[0] == pytest.approx(np.sin(1.0), abs=1e-15)
    assert e1[63] == pytest.approx(np.sin(1e4), abs=1e-12)
    assert np.allclose(sm.time_embed(0.5, horizon=2.0), sm.time_embed(0.25))
    assert sm.time_embed(np.array([0.1, 0.2])).shape == (2, 128)


def test_time_embed_separates_grid_points():
    grid = np.arange(501) / 500
    emb = sm.time_embed(grid)
    gaps = np.linalg.norm(emb[1:] - emb[:-1], axis=1)
    assert gaps.min() > 1e-6
    # and not only neighbours: every pair on the grid is distinct
    sq = np.sum(emb**2, axis=1)
    dist2 = sq[:, None] + sq[None] - 2 * emb @ emb.T
    np.fill_diagonal(dist2, np.inf)
    assert np.sqrt(max(dist2.min(), 0.0)) > 1e-6


def test_zero_final_layer_gives_zero_output():
    net = sm.ScoreNet.create(4, RngStream(1), hidden=16)
    psi = geo.haar_state(4, RngStream(2), 5)
    assert np.array_equal(sm.score_forward(net, psi, 0.3), np.zeros((5, 4), dtype=complex))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_output_is_horizontal_and_finite(seed):
    net = small_net(d=4, hidden=16, seed=seed % 1000)
    psi = geo.haar_state(4, RngStream(seed), 7)
    t = RngStream(seed).uniform(0.002, 1.0, 7)
    out = sm.score_forward(net, psi, t)
    assert np.all(np.isfinite(out))
    assert np.max(np.abs(geo.inner(psi, out))) < 1e-12


def test_finite_on_random_scan():
    net = sm.ScoreNet.create(4, RngStream(20), hidden=64, zero_final=False)
    rng = RngStream(21)
    out = sm.score_forward(net, geo.haar_state(4, rng, 10_000), rng.uniform(0.0, 1.0, 10_000))
    assert np.all(np.isfinite(out))


def test_single_state_matches_batch_row():
    net = small_net(d=4, hidden=16)
    psi = geo.haar_state(4, RngStream(3), 3)
    batch = sm.score_forward(net, psi, np.full(3, 0.4))
    assert np.array_equal(sm.score_forward(net, psi[1], 0.4), batch[1])


def test_rows_independent_of_batch_size():
    net = small_net(d=4, hidden=16)
    psi = geo.haar_state(4, RngStream(4), 150)
    t = np.linspace(0.01, 1, 150)
    full = sm.forward_raw(net, psi, t)
    assert np.array_equal(sm.forward_raw(net, psi[:70], t[:70]), full[:70])
    assert np.array_equal(sm.forward_raw(net, psi[65:66], t[65:66]), full[65:66])


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        sm.score_forward(small_net(d=2), geo.haar_state(4, RngStream(0)), 0.5)


def finite_difference(net, fn, h=1e-5):
    grads = np.empty_like(net.params)
    for i in range(net.params.size):
        keep = net.params[i]
        net.params[i] = keep + h
        up = fn()
        net.params[i] = keep - h
        down = fn()
        net.params[i] = keep
        grads[i] = (up - down) / (2 * h)
    return grads


@pytest.mark.parametrize("head", ["horizontal", "identity"])
def test_gradient_matches_central_differences(head):
    net = small_net(d=2, hidden=8, seed=5, head=head)
    rng = RngStream(6)
    if head == "horizontal":
        states, targets = horizontal_batch(2, 6, 7)
    else:
        states, targets = rng.normal((6, 4)), rng.normal((6, 4))
    t = rng.uniform(0.01, 1.0, 6)
    w = rng.uniform(0.5, 2.0, 6)
    _, analytic = sm.loss_and_grads(net, states, targets, t, w)
    numeric = finite_difference(net, lambda: sm.loss_and_grads(net, states, targets, t, w)[0])
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    big = scale > 1e-7
    assert np.max(np.abs(analytic - numeric)[big] / scale[big]) < 1e-5
    assert np.max(np.abs(analytic - numeric)[~big], initial=0.0) < 1e-9


def test_loss_scales_with_weights():
    net = small_net(d=2, hidden=8)
    states, targets = horizontal_batch(2, 4, 8)
    l1, g1 = sm.loss_and_grads(net, states, targets, 0.5, 1.0)
    l2, g2 = sm.loss_and_grads(net, states, targets, 0.5, 2.0)
    assert l2 == pytest.approx(2 * l1, rel=1e-14)
    assert np.allclose(g2, 2 * g1, rtol=1e-13, atol=0)


def test_loss_rejects_non_horizontal_target():
    net = small_net(d=2)
    psi = geo.haar_state(2, RngStream(9), 3)
    with pytest.raises(ValueError, match="horizontal"):
        sm.loss_and_grads(net, psi, psi, 0.5, 1.0)


def test_adam_zero_gradient_is_noop():
    net = small_net()
    before = net.params.copy()
    state = sm.AdamState.for_net(net)
    sm.adam_step(net, state, np.zeros_like(net.params))
    assert np.array_equal(net.params, before)
    assert state.step == 1


def test_adam_first_step_moves_by_lr_times_sign():
    net = small_net()
    before = net.params.copy()
    rng = RngStream(10)
    g = np.where(rng.normal(net.params.shape) > 0, 1.0, -1.0) * rng.uniform(1e-3, 1e-2, net.params.shape)
    state = sm.AdamState.for_net(net, lr=1e-3, clip_norm=np.inf)
    sm.adam_step(net, state, g)
    assert np.allclose(net.params - before, -1e-3 * np.sign(g), rtol=1e-4, atol=0)


def test_adam_clips_global_norm():
    net = small_net()
    state = sm.AdamState.for_net(net, clip_norm=1.0)
    g = np.full_like(net.params, 3.0)
    sm.adam_step(net, state, g)
    assert state.last_grad_norm == pytest.approx(3.0 * np.sqrt(g.size))
    clipped = g / np.linalg.norm(g)
    assert np.allclose(state.m, 0.1 * clipped, rtol=1e-12)


def test_adam_matches_reference_loop():
    # oracle: textbook AdamW written elementwise in numpy
    net = small_net()
    ref = net.params.copy()
    m, v = np.zeros_like(ref), np.zeros_like(ref)
    state = sm.AdamState.for_net(net, lr=1e-2, weight_decay=0.1, clip_norm=np.inf)
    rng = RngStream(11)
    for k in range(1, 6):
        g = rng.normal(ref.shape)
        sm.adam_step(net, state, g)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref * (1 - 1e-2 * 0.1) - 1e-2 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert np.allclose(net.params, ref, rtol=1e-12, atol=1e-15)


def test_adam_rejects_non_finite_gradient():
    net = small_net()
    g = np.zeros_like(net.params)
    g[3] = np.nan
    with pytest.raises(FloatingPointError, match="step 17"):
        sm.adam_step(net, sm.AdamState.for_net(net), g, step_index=17)


def _fit(steps):
    net = sm.ScoreNet.create(2, RngStream(12), hidden=16)
    state = sm.AdamState.for_net(net, lr=1e-3)
    states, targets = horizontal_batch(2, 32, 13)
    t = RngStream(14).uniform(0.01, 1, 32)
    losses = []
    for _ in range(steps):
        loss, g = sm.loss_and_grads(net, states, targets, t, 1.0)
        sm.adam_step(net, state, g)
        losses.append(loss)
    return net, losses


def test_optimization_is_deterministic_and_decreases_loss():
    a, la = _fit(100)
    b, lb = _fit(100)
    assert np.array_equal(a.params, b.params) and la == lb
    assert la[-1] < 0.5 * la[0]


def test_checkpoint_round_trip(tmp_path):
    net = small_net(d=4, hidden=16, head="identity")
    state = sm.AdamState.for_net(net, lr=3e-4)
    state.step = 12
    path = tmp_path / "m.ckpt"
    sm.save_checkpoint(path, net, state, config={"a": 1}, seed=5)
    back, doc = sm.load_checkpoint(path)
    assert np.array_equal(back.params, net.params)
    assert (back.d, back.head, back.widths) == (net.d, net.head, net.widths)
    assert doc["optimizer"]["step"] == 12 and doc["optimizer"]["lr"] == 3e-4
    assert doc["seed"] == 5 and doc["config"] == {"a": 1}


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "m.ckpt"
    sm.save_checkpoint(path, small_net())
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="format_version"):
        sm.load_checkpoint(path)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        sm.ScoreNet(2, (132, 8, 4), np.zeros(3))
    with pytest.raises(ValueError):
        sm.ScoreNet(2, (10, 8, 4), np.zeros(10 * 8 + 8 + 8 * 4 + 4))
    with pytest.raises(ValueError):
        small_net(head="radial")
