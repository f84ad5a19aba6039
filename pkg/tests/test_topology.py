import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellfree_ris.config import default_profile, small_profile
from cellfree_ris.topology import (Topology, draw_topology, hata_intercept_db, large_scale_gain,
                                   path_loss, path_loss_db)

# reference values evaluated with mpmath at 30 digits
HATA_1900 = 140.71508370390842
INTERCEPT = 140.0


def test_hata_intercept_reference():
    assert hata_intercept_db(1.9e9, 15.0, 1.65) == pytest.approx(HATA_1900, rel=1e-14)


def test_path_loss_reference_points():
    # beyond d1: -L - 35 log10(d_km); inside (d0, d1]: -L - 15 log10(d1) - 20 log10(d)
    assert path_loss_db(100.0, HATA_1900) == pytest.approx(-105.7150837039084, rel=1e-13)
    assert path_loss_db(20.0, HATA_1900) == pytest.approx(-87.22023368222831, rel=1e-13)


def test_doubling_beyond_d1_costs_35_db_per_decade():
    ratio = path_loss(100.0, INTERCEPT) / path_loss(50.0, INTERCEPT)
    assert ratio == pytest.approx(0.08838834764831845, rel=1e-12)  # 2 ** -3.5


@pytest.mark.parametrize("edge", [10.0, 50.0])
def test_continuous_at_breakpoints(edge):
    lo = path_loss(edge * (1 - 1e-12), INTERCEPT)
    hi = path_loss(edge * (1 + 1e-12), INTERCEPT)
    assert hi == pytest.approx(lo, rel=1e-9)


def test_flat_below_d0():
    assert path_loss(1.0, INTERCEPT) == path_loss(9.0, INTERCEPT)


def test_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_loss(0.0, INTERCEPT)
    with pytest.raises(ValueError):
        path_loss(np.array([5.0, -1.0]), INTERCEPT)


def test_monotone_on_random_pairs():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.1, 3000.0, size=(1000, 2))
    d.sort(axis=1)
    pl = path_loss(d, INTERCEPT)
    assert np.all(pl[:, 1] <= pl[:, 0])


def test_regions_and_heights():
    cfg = default_profile()
    topo = draw_topology(cfg, np.random.default_rng(0))
    half = cfg.D_km / 2 * 1e3
    assert np.all((topo.ap_pos[:, :2] >= -half) & (topo.ap_pos[:, :2] <= 0))
    for pos in (topo.user_pos, topo.ris_pos):
        assert np.all((pos[:, :2] >= 0) & (pos[:, :2] <= half))
    assert np.all(topo.ap_pos[:, 2] == 15.0)
    assert np.all(topo.ris_pos[:, 2] == 30.0)
    assert np.all(topo.user_pos[:, 2] == 1.65)
    assert topo.beta_d.shape == (20, 20)
    assert topo.beta_c_ap_ris.shape == (20, 2)
    assert topo.beta_c_user_ris.shape == (20, 2)


def test_no_shadowing_depends_on_distance_only():
    cfg = small_profile(sigma_sh_dB=0.0)
    d = np.array([[120.0, 120.0, 300.0]])
    g = large_scale_gain(d, cfg, np.random.default_rng(1))
    assert g[0, 0] == g[0, 1] and g[0, 2] < g[0, 0]


def test_no_shadowing_permutation_invariance():
    cfg = small_profile(sigma_sh_dB=0.0)
    rng = np.random.default_rng(4)
    d = rng.uniform(20, 2000, size=50)
    perm = rng.permutation(50)
    g = large_scale_gain(d, cfg, rng)
    assert np.array_equal(large_scale_gain(d[perm], cfg, rng), g[perm])


def test_seeded_draw_is_bit_identical():
    cfg = default_profile()
    a = draw_topology(cfg, np.random.default_rng(99))
    b = draw_topology(cfg, np.random.default_rng(99))
    for name in Topology.__dataclass_fields__:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_json_round_trip():
    topo = draw_topology(small_profile(), np.random.default_rng(5))
    back = Topology.from_json(topo.to_json())
    for name in Topology.__dataclass_fields__:
        assert np.array_equal(getattr(back, name), getattr(topo, name))


def test_without_ris():
    topo = draw_topology(small_profile(), np.random.default_rng(5))
    bare = topo.without_ris()
    assert bare.J == 0 and bare.beta_c_ap_ris.shape == (4, 0)
    assert np.array_equal(bare.beta_d, topo.beta_d)


@given(st.integers(0, 2 ** 32 - 1))
def test_every_beta_positive_and_finite(seed):
    topo = draw_topology(default_profile(), np.random.default_rng(seed))
    for b in (topo.beta_d, topo.beta_c_ap_ris, topo.beta_c_user_ris):
        assert np.all(np.isfinite(b)) and np.all(b > 0)
