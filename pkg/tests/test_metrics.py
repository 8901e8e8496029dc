import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdm import geometry as geo
from ssdm import metrics as met
from ssdm.rng import RngStream

from .conftest import seeds

E = [geo.basis_state(4, i) for i in range(4)]


def pairwise_mean(a, b):
    # direct O(nm) kernel average, used as an independent route
    return float(np.mean(np.abs(np.conj(a) @ b.T) ** 2))


def test_fidelity_examples():
    assert met.mean_fidelity([E[0]], [E[0]]) == 1.0
    assert met.mean_fidelity([E[0]], [E[1]]) == 0.0
    haar = geo.haar_state(4, RngStream(1), 10_000)
    assert met.mean_fidelity(haar, [E[0]]) == pytest.approx(0.25, abs=0.01)


def test_fidelity_matches_pairwise_route():
    rng = RngStream(2)
    a, b = geo.haar_state(8, rng, 37), geo.haar_state(8, rng, 53)
    assert met.mean_fidelity(a, b) == pytest.approx(pairwise_mean(a, b), abs=1e-14)


def test_fidelity_dimension_mismatch():
    with pytest.raises(ValueError):
        met.mean_fidelity([E[0]], [geo.basis_state(2)])


def test_mmd_examples():
    ens = geo.haar_state(4, RngStream(3), 64)
    assert met.mmd_overlap(ens, ens) == 0.0
    assert met.mmd_overlap([E[0]] * 5, [E[1]] * 5) == pytest.approx(np.sqrt(2), abs=1e-15)


def test_mmd_matches_pairwise_v_statistic():
    rng = RngStream(4)
    a, b = geo.haar_state(4, rng, 40), geo.haar_state(4, rng, 25)
    direct = pairwise_mean(a, a) + pairwise_mean(b, b) - 2 * pairwise_mean(a, b)
    assert met.mmd2_overlap(a, b) == pytest.approx(direct, abs=1e-14)
    assert met.mmd_overlap(a, b) == met.mmd_overlap(b, a)


def test_mmd_haar_vs_haar_passes_permutation_test():
    hits = 0
    trials = 20
    for k in range(trials):
        rng = RngStream(1000 + k)
        a, b = geo.haar_state(4, rng, 256), geo.haar_state(4, rng, 256)
        observed = met.mmd2_overlap(a, b)
        pooled = np.concatenate([a, b])
        null = []
        for _ in range(100):
            perm = rng.gen.permutation(len(pooled))
            null.append(met.mmd2_overlap(pooled[perm[:256]], pooled[perm[256:]]))
        hits += observed <= np.quantile(null, 0.95)
    assert hits >= 0.9 * trials


def test_delta_obs_examples():
    ens = geo.haar_state(4, RngStream(5), 30)
    assert met.delta_obs(ens, ens, 2) == 0.0
    zero, one = geo.basis_state(2, 0), geo.basis_state(2, 1)
    assert met.delta_obs([zero], [one], 1) == pytest.approx(2 / 3, abs=1e-15)
    rng = RngStream(6)
    assert met.delta_obs(geo.haar_state(4, rng, 10_000), geo.haar_state(4, rng, 10_000), 2) < 0.03
    with pytest.raises(ValueError):
        met.delta_obs(geo.haar_state(3, rng, 2), geo.haar_state(3, rng, 2), 2)


def test_entanglement_examples():
    bell = geo.normalize(np.array([1, 0, 0, 1], dtype=complex))
    assert np.max(np.abs(met.entanglement_profile([bell] * 5, 2) - np.log(2))) < 1e-9
    ghz = np.zeros(16, dtype=complex)
    ghz[[0, 15]] = 1 / np.sqrt(2)
    assert met.entanglement_profile([ghz], 4)[0] == pytest.approx(np.log(2), abs=1e-9)
    product = np.kron(geo.haar_state(2, RngStream(7)), geo.haar_state(2, RngStream(8)))
    assert np.max(np.abs(met.entanglement_profile([product], 2))) < 1e-9
    with pytest.raises(ValueError):
        met.entanglement_profile([geo.basis_state(2)], 1)


def test_entanglement_bounds():
    ens = geo.haar_state(64, RngStream(9), 200)
    s = met.entanglement_profile(ens, 6)
    assert np.all(s >= -1e-10) and np.all(s <= 3 * np.log(2) + 1e-10)


def brute_force_w1(a, b):
    # exact W1 between empirical measures via the CDF integral
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(np.sort(a), grid[:-1], side="right") / len(a)
    fb = np.searchsorted(np.sort(b), grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(fa - fb) * np.diff(grid)))


def test_wasserstein_examples():
    x = np.array([0.3, 0.1, 0.9])
    assert met.wasserstein1(x, x) == 0.0
    assert met.wasserstein1([0.0], [1.0]) == 1.0
    assert met.wasserstein1([0.0, 1.0], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(1, 30), st.integers(1, 30))
def test_wasserstein_matches_independent_routes(seed, n, m):
    rng = RngStream(seed)
    a, b = rng.normal(n), rng.normal(m)
    assert met.wasserstein1(a, b) == pytest.approx(brute_force_w1(a, b), abs=1e-12)
    if n == m:
        sorted_match = np.mean(np.abs(np.sort(a) - np.sort(b)))
        assert met.wasserstein1(a, b) == pytest.approx(sorted_match, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_wasserstein_triangle(seed):
    rng = RngStream(seed)
    a, b, c = rng.normal(10), rng.normal(13) + 0.5, rng.uniform(size=7)
    assert met.wasserstein1(a, c) <= met.wasserstein1(a, b) + met.wasserstein1(b, c) + 1e-12


Y4 = np.array([1.0, 1.0, -1.0, -1.0])


def test_kernel_alignment_examples():
    assert met.kernel_alignment(np.outer(Y4, Y4), Y4) == pytest.approx(1.0, abs=1e-12)
    assert met.kernel_alignment(np.eye(4), Y4) == pytest.approx(0.5, abs=1e-12)
    assert met.kernel_alignment(np.outer(-Y4, -Y4), Y4) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        met.kernel_alignment(np.zeros((4, 4)), Y4)


def test_kernel_gap_examples():
    block = (np.outer(Y4, Y4) + 1) / 2
    assert met.kernel_gap(block, Y4) == pytest.approx(1.0, abs=1e-12)
    assert met.kernel_gap(np.full((4, 4), 0.7), Y4) == pytest.approx(0.0, abs=1e-12)
    assert met.kernel_gap(np.outer(Y4, Y4), Y4) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        met.kernel_gap(np.eye(3), np.array([1.0, 1.0, -1.0]))


def test_mean_margin_examples():
    assert met.mean_margin(np.eye(4), Y4, ridge=1.0) == pytest.approx(0.5, abs=1e-12)
    block = (np.outer(Y4, Y4) + 1) / 2
    assert met.mean_margin(block, Y4) > 0
    assert met.mean_margin(block, -Y4) == pytest.approx(met.mean_margin(block, Y4), abs=1e-12)


def test_mean_margin_matches_direct_solve():
    rng = RngStream(10)
    feats = rng.normal((12, 3))
    k = feats @ feats.T
    y = np.where(rng.normal(12) > 0, 1.0, -1.0)
    alpha = np.linalg.inv(k + 0.1 * np.eye(12)) @ y
    assert met.mean_margin(k, y, ridge=0.1) == pytest.approx(np.mean(y * (k @ alpha)), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_metrics_gauge_and_unitary_invariance(seed):
    rng = RngStream(seed)
    a, b = geo.haar_state(4, rng, 20), geo.haar_state(4, rng, 15)
    pa = a * np.exp(1j * rng.uniform(0, 2 * np.pi, (20, 1)))
    pb = b * np.exp(1j * rng.uniform(0, 2 * np.pi, (15, 1)))
    m1, m2 = met.evaluate(a, b, 2), met.evaluate(pa, pb, 2)
    for f in ("f0", "mmd", "delta_obs", "ent_w1"):
        assert abs(getattr(m1, f) - getattr(m2, f)) < 1e-12
    q, _ = np.linalg.qr(rng.complex_normal((4, 4)))
    ua, ub = a @ q.T, b @ q.T
    assert abs(met.mean_fidelity(ua, ub) - m1.f0) < 1e-12
    assert abs(met.mmd_overlap(ua, ub) - m1.mmd) < 1e-12


def test_metrics_csv_round_trip():
    m = met.EnsembleMetrics(0.9, 0.01, 0.02, 0.03, 256, 4096, seed=7)
    text = m.to_csv()
    assert text.splitlines()[0] == "f0,mmd,delta_obs,ent_w1,n_gen,n_target,seed"
    assert met.EnsembleMetrics.from_csv(text) == m


def test_overlap_kernel_is_psd():
    k = met.overlap_kernel(geo.haar_state(4, RngStream(11), 30))
    assert np.min(np.linalg.eigvalsh(k)) > -1e-10
    assert np.allclose(np.diag(k), 1)


def test_evaluate_fields():
    rng = RngStream(12)
    a, b = geo.haar_state(4, rng, 10), geo.haar_state(4, rng, 12)
    m = met.evaluate(a, b, 2, seed=3)
    assert (m.n_generated, m.n_target, m.seed) == (10, 12, 3)
    assert 0 <= m.f0 <= 1 and m.mmd >= 0 and m.delta_obs >= 0 and m.ent_w1 >= 0
    assert list(itertools.islice(met.CSV_HEADER, 4)) == ["f0", "mmd", "delta_obs", "ent_w1"]
