import numpy as np
import pytest

from paygap.dgp import (CategoricalVar, DgpConfig, DgpError, SHAPE_TARGETS, dumps, generate,
                        heterogeneous_gap_dgp, homogeneous_gap_dgp, loads, misspecified_mu0_dgp,
                        misspecified_pscore_dgp, paper_shape_dgp, true_propensity, truth)


def _raw_gap(data) -> tuple[float, float]:
    """Weighted sample raw gap and its plug-in standard error."""
    out = []
    for k in (1, 0):
        sel = data.group == k
        y, w = data.outcome[sel], data.weight[sel]
        m = w @ y / w.sum()
        v = w @ (y - m) ** 2 / w.sum()
        neff = w.sum() ** 2 / (w ** 2).sum()
        out.append((m, v / neff))
    return out[0][0] - out[1][0], float(np.sqrt(out[0][1] + out[1][1]))


def test_homogeneous_truth_exact():
    tr = truth(homogeneous_gap_dgp(gap=-0.05))
    assert tr.unexplained == pytest.approx(-0.05, abs=1e-15)


def test_heterogeneous_hand_expectation():
    a = CategoricalVar("A", ("a", "b"), (0.3, 0.7), (0.5, 0.5), (0.0, 0.1), gap=(-0.10, -0.02))
    tr = truth(DgpConfig(n=10, categoricals=(a,)))
    assert tr.unexplained == pytest.approx(-0.044, abs=1e-15)


def test_disjoint_level_support_share():
    a = CategoricalVar("A", ("a", "b", "c"), (0.4, 0.4, 0.2), (0.5, 0.5, 0.0), (0.0, 0.1, -0.2))
    tr = truth(DgpConfig(n=10, categoricals=(a,)))
    assert tr.support_share == pytest.approx(0.8, abs=1e-15)


def test_invalid_config_rejected():
    a = CategoricalVar("A", ("a", "b"), (0.3, 0.6), (0.5, 0.5), (0.0, 0.1))
    with pytest.raises(DgpError):
        generate(DgpConfig(n=10, categoricals=(a,)))


@pytest.mark.parametrize("sector", ["private", "public"])
def test_shape_calibration(sector):
    cfg = paper_shape_dgp(sector, n=200_000, seed=11)
    tr = truth(cfg)
    assert tr.raw == pytest.approx(SHAPE_TARGETS[sector]["raw"], abs=1e-9)
    shares = [s.share_women for s in tr.steps]
    assert all(b <= a + 1e-15 for a, b in zip(shares, shares[1:]))
    data, _ = generate(cfg)
    raw, se = _raw_gap(data)
    assert abs(raw - tr.raw) <= 3 * se
    if sector == "public":
        # a large part of the public raw gap sits outside common support
        assert tr.raw_on_support == pytest.approx(SHAPE_TARGETS["public"]["raw_on_support"], abs=1e-9)


def test_same_seed_same_data():
    a, _ = generate(heterogeneous_gap_dgp(n=2000, seed=3))
    b, _ = generate(heterogeneous_gap_dgp(n=2000, seed=3))
    c, _ = generate(heterogeneous_gap_dgp(n=2000, seed=4))
    assert np.array_equal(a.outcome, b.outcome) and np.array_equal(a["x"], b["x"])
    assert not np.array_equal(a.outcome, c.outcome)


def test_raw_gap_error_shrinks_like_root_n():
    cfg0 = homogeneous_gap_dgp()
    target = truth(cfg0).raw
    sizes = (1_000, 10_000, 100_000)
    err = []
    for n in sizes:
        e = [abs(_raw_gap(generate(homogeneous_gap_dgp(n=n, seed=s))[0])[0] - target)
             for s in range(30)]
        err.append(np.mean(e))
    slope = np.polyfit(np.log(sizes), np.log(err), 1)[0]
    assert -0.75 <= slope <= -0.25


@pytest.mark.parametrize("make", [homogeneous_gap_dgp, heterogeneous_gap_dgp, misspecified_mu0_dgp,
                                  misspecified_pscore_dgp])
def test_config_roundtrip(make):
    cfg = make(n=500, seed=2)
    assert loads(dumps(cfg)) == cfg


def test_true_propensity_matches_sample_shares():
    data, _ = generate(misspecified_pscore_dgp(n=100_000, seed=1))
    p = true_propensity(misspecified_pscore_dgp(), data)
    assert np.all((p > 0) & (p < 1))
    # calibration: mean of G within deciles of p matches mean p
    q = np.quantile(p, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(q, p, side="right") - 1, 0, 9)
    for k in range(10):
        sel = idx == k
        if sel.sum() > 1000:
            assert data.group[sel].mean() == pytest.approx(p[sel].mean(), abs=0.02)
