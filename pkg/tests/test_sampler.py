import math

import numpy as np
import pytest
from scipy import stats

from btbslab.errors import DomainError
from btbslab.model import Constant, CosineProduct, FieldConfig, heat_expectation
from btbslab.quadrature import quad_btbs_moment, quad_ks_moment
from btbslab.sampler import (
    BLOCK,
    Estimate,
    RngStream,
    draw_normals,
    martingale_probe,
    mc_bs_moment,
    mc_btbs_moment,
    mc_ks_moment,
    sample_brownian_times,
    sample_btbs_point,
    sample_sheet_grid,
)

SEED = 1234

def test_stream_identity_and_independence():
    a = draw_normals(RngStream(SEED, 0), 1000, 2)
    b = draw_normals(RngStream(SEED, 0), 1000, 2)
    c = draw_normals(RngStream(SEED, 1), 1000, 2)
    assert np.array_equal(a, b)
    assert abs(np.corrcoef(a[:, 0], c[:, 0])[0, 1]) < 0.1

def test_blocks_are_addressable():
    rng = RngStream(SEED, 5)
    big = draw_normals(rng, BLOCK + 10, 3)
    assert np.array_equal(big[BLOCK:], rng.generator(1).standard_normal((10, 3)))

def test_workers_do_not_change_draws():
    rng = RngStream(SEED, 2)
    assert np.array_equal(draw_normals(rng, 3 * BLOCK + 7, 2, workers=1), draw_normals(rng, 3 * BLOCK + 7, 2, workers=3))

def test_rng_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(1 << 64)

def test_brownian_times_boundary_component():
    s = sample_brownian_times((0.0, 5.0), RngStream(SEED), size=100)
    assert np.all(s[:, 0] == 0.0)
    assert np.all(s[:, 1] >= 0.0)

def test_brownian_times_mean():
    s = sample_brownian_times((1.0,), RngStream(SEED), size=10**6)[:, 0]
    stderr = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - math.sqrt(2 / math.pi)) < 3 * stderr

def test_brownian_scaling_ks():
    a = sample_brownian_times((4.0,), RngStream(SEED, 1), size=20000)[:, 0]
    b = sample_brownian_times((1.0,), RngStream(SEED, 2), size=20000)[:, 0]
    assert stats.ks_2samp(a / 2.0, b).pvalue > 0.01

def test_btbs_point_boundary_and_determinism():
    cfg = FieldConfig(2, 2)
    s, w = sample_btbs_point(cfg, (0.0, 1.0), [0.3, -0.2], RngStream(SEED), size=50)
    assert np.all(w == np.array([0.3, -0.2]))
    s1, w1 = sample_btbs_point(cfg, (1.0, 1.0), [0.0, 0.0], RngStream(SEED, 9))
    s2, w2 = sample_btbs_point(cfg, (1.0, 1.0), [0.0, 0.0], RngStream(SEED, 9))
    assert np.array_equal(s1, s2) and np.array_equal(w1, w2)

def test_btbs_point_variance():
    cfg = FieldConfig(2, 1)
    s, w = sample_btbs_point(cfg, (1.0, 1.0), [0.0], RngStream(SEED), size=10**6)
    sq = w[:, 0] ** 2
    stderr = sq.std(ddof=1) / math.sqrt(sq.size)
    assert abs(sq.mean() - 2 / math.pi) < 3 * stderr

def test_sheet_scaling():
    cfg = FieldConfig(2, 1)
    for t in [(0.3, 0.5), (2.0, 1.5)]:
        _, w = sample_btbs_point(cfg, t, [0.0], RngStream(SEED, 3), size=1)
        W = sample_sheet_grid(cfg, [[0.0, t[0]], [0.0, t[1]]], RngStream(SEED, 4), size=200_000)[:, 1, 1, 0]
        r = W**2 / (t[0] * t[1])
        assert abs(r.mean() - 1.0) < 3 * r.std(ddof=1) / math.sqrt(r.size)

def test_mc_constant_and_boundary():
    cfg = FieldConfig(2, 1)
    e = mc_btbs_moment(cfg, Constant(1.0), 0, None, (1.0, 1.0), [0.0], 1000, RngStream(SEED))
    assert e.value == 1.0 and e.stderr == 0.0
    z = mc_btbs_moment(cfg, CosineProduct((1.0,)), 2, 1, (1.0, 0.0), [0.3], 1000, RngStream(SEED))
    assert z.value == 0.0 and z.stderr == 0.0
    # boundary laws: u = f anywhere on the boundary, U^(1) = t_2 f when t_1 = 0
    f = CosineProduct((1.0,))
    b = mc_btbs_moment(cfg, f, 0, None, (0.0, 1.0), [0.3], 1000, RngStream(SEED))
    assert b.value == math.cos(0.3) and b.stderr == 0.0

def test_mc_btbs_n1_closed_form():
    e = mc_btbs_moment(FieldConfig(1), CosineProduct((1.0,)), 0, None, (1.0,), [0.0], 10**6, RngStream(SEED))
    assert abs(e.value - 0.6992377) < 3 * e.stderr

def test_mc_argument_checks():
    cfg = FieldConfig(2)
    f = CosineProduct((1.0,))
    with pytest.raises(ValueError):
        mc_btbs_moment(cfg, f, 1, 1, (1.0, 1.0), [0.0], 10, RngStream(SEED))
    with pytest.raises(ValueError):
        mc_btbs_moment(cfg, f, 2, None, (1.0, 1.0), [0.0], 10, RngStream(SEED))
    with pytest.raises(ValueError):
        mc_btbs_moment(cfg, f, 0, None, (1.0, 1.0), [0.0], 1, RngStream(SEED))

@pytest.mark.parametrize("n, d", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_mc_matches_quadrature_grid(n, d):
    cfg = FieldConfig(n, d)
    rng = RngStream(SEED, 10 * n + d)
    k = 0
    for t0 in (0.5, 1.5):
        for theta in (0.6, 1.4):
            f = CosineProduct((theta,) * d)
            t = (t0,) * n
            x = [0.25] * d
            q = quad_btbs_moment(cfg, f, 0, None, t, x)
            e = mc_btbs_moment(cfg, f, 0, None, t, x, 200_000, rng.substream(k))
            k += 1
            assert abs(e.value - q.value) < 3 * (e.stderr + q.error)

def test_mc_ks_matches_quadrature():
    cfg = FieldConfig(2, 1, "ks")
    f = CosineProduct((1.0,))
    q = quad_ks_moment(cfg, f, 1, 2, (0.7, 1.3), [0.2])
    e = mc_ks_moment(cfg, f, 1, 2, (0.7, 1.3), [0.2], 400_000, RngStream(SEED))
    assert abs(e.value - q.value) < 3 * e.stderr

def test_mc_bs_matches_closed_form():
    cfg = FieldConfig(2, 1, "bs")
    f = CosineProduct((1.0,))
    e = mc_bs_moment(cfg, f, (0.8, 1.2), [0.4], 400_000, RngStream(SEED))
    assert abs(e.value - heat_expectation(f, (0.8, 1.2), [0.4])) < 3 * e.stderr

def test_sheet_grid_boundary_and_covariance():
    cfg = FieldConfig(2, 1)
    W = sample_sheet_grid(cfg, [[0, 1, 2], [0, 1]], RngStream(SEED), size=100_000)
    assert W.shape == (100_000, 3, 2, 1)
    assert np.all(W[:, 0] == 0.0) and np.all(W[:, :, 0] == 0.0)
    prod = W[:, 1, 1, 0] * W[:, 2, 1, 0]
    assert abs(prod.mean() - 1.0) < 3 * prod.std(ddof=1) / math.sqrt(prod.size)

def test_sheet_grid_n1_increments():
    cfg = FieldConfig(1, 1)
    knots = [0.0, 0.5, 1.5, 1.75]
    W = sample_sheet_grid(cfg, [knots], RngStream(SEED), size=100_000)[..., 0]
    inc = np.diff(W, axis=1)
    for k, width in enumerate(np.diff(knots)):
        v = inc[:, k] ** 2
        assert abs(v.mean() - width) < 3 * v.std(ddof=1) / math.sqrt(v.size)
    assert abs(np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]) < 0.02

def test_sheet_grid_rejects_bad_knots():
    with pytest.raises(DomainError):
        sample_sheet_grid(FieldConfig(1), [[0.0, 1.0, 0.5]], RngStream(SEED))
    with pytest.raises(DomainError):
        sample_sheet_grid(FieldConfig(1), [[0.1, 1.0]], RngStream(SEED))

def test_martingale_constant_and_bounds():
    cfg = FieldConfig(2, 1)
    u = lambda t, X: heat_expectation(Constant(2.0), t, X)  # noqa: E731
    ests = martingale_probe(cfg, u, (1.0, 1.0), [0.0], [0.0, 0.3, 0.9], 1000, RngStream(SEED))
    assert all(e.value == 2.0 and e.stderr == 0.0 for e in ests)
    with pytest.raises(DomainError):
        martingale_probe(cfg, u, (1.0, 1.0), [0.0], [1.0], 1000, RngStream(SEED))

def test_estimate_stderr_definition():
    rng = RngStream(SEED)
    e = mc_bs_moment(FieldConfig(1), CosineProduct((1.0,)), (1.0,), [0.0], 5000, rng)
    Z = draw_normals(rng, 5000, 1)[:, 0]
    vals = np.cos(Z)
    assert e.value == pytest.approx(vals.mean(), rel=1e-14)
    assert e.stderr == pytest.approx(vals.std(ddof=1) / math.sqrt(5000), rel=1e-12)
    assert isinstance(e, Estimate) and e.n_samples == 5000
