"""Qualitative trends on the default profile, over fixed seeded drops."""

import numpy as np
import pytest

from cellfree_ris.config import default_profile
from cellfree_ris.harness import build_drop
from cellfree_ris.pipeline import evaluate_drop

DROPS = [build_drop(default_profile(), 101, d) for d in range(50)]


def test_lsfd_beats_mf_on_sum_se():
    lsfd = np.array([evaluate_drop(d).se_ul.sum() for d in DROPS])
    mf = np.array([evaluate_drop(d, receiver="mf").se_ul.sum() for d in DROPS])
    assert np.all(lsfd >= mf) and np.median(lsfd) > np.median(mf)


def test_fractional_power_control_raises_median_sum_se():
    on = [evaluate_drop(d).se_ul.sum() for d in DROPS]
    off = [evaluate_drop(d, power_control=False).se_ul.sum() for d in DROPS]
    assert np.median(on) > np.median(off)


def test_benchmark_nmse_above_two_phase_on_median():
    two = [evaluate_drop(d).nmse for d in DROPS]
    bench = [evaluate_drop(d, "benchmark").nmse for d in DROPS]
    assert np.median(two) < np.median(bench)


@pytest.mark.xfail(strict=True, reason=(
    "weak users are noise limited at this working point: giving them more downlink power "
    "(alpha = 1) lifts the 5%-likely SE instead of lowering it"))
def test_full_fairness_exponent_lowers_tail_se():
    tail = {}
    for alpha in (0.5, 1.0):
        se = np.concatenate([evaluate_drop(d, alpha=alpha).se_dl for d in DROPS])
        tail[alpha] = np.percentile(se, 5)
    assert tail[1.0] < tail[0.5]
