import math

import numpy as np
import pytest

from odgen.core import ODNetwork
from odgen.exceptions import DataFormatError
from odgen.metrics import cpc, f_jsd, mass_correlation, rmse


def net(rows):
    return ODNetwork(flows=np.array(rows, dtype=float))


def random_net(rng, n=5):
    flows = rng.uniform(0, 10, size=(n, n))
    return ODNetwork(flows=flows)


# ------------------------------------------------------------------ cpc


def test_cpc_identical_is_one():
    a = net([[0, 4], [1, 0]])
    assert cpc(a, a) == pytest.approx(1.0, abs=1e-12)


def test_cpc_disjoint_supports_is_zero():
    a = net([[0, 4], [0, 0]])
    b = net([[0, 0], [3, 0]])
    assert cpc(a, b) == 0.0


def test_cpc_hand_value():
    real = net([[0, 4], [0, 0]])
    fake = net([[0, 2], [2, 0]])
    # min overlap 2; totals 4 and 4 -> 2*2/8
    assert cpc(real, fake) == pytest.approx(0.5, abs=1e-12)


def test_cpc_properties_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = random_net(rng), random_net(rng)
        v = cpc(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(cpc(b, a), abs=1e-12)
        assert cpc(a, a) == pytest.approx(1.0, abs=1e-12)


def test_cpc_shape_mismatch():
    with pytest.raises(DataFormatError):
        cpc(net([[0, 1], [1, 0]]), ODNetwork(flows=np.zeros((3, 3))))


# ----------------------------------------------------------------- rmse


def test_rmse_identical_is_zero():
    a = net([[0, 3], [2, 0]])
    assert rmse(a, a) == 0.0


def test_rmse_hand_value():
    real = net([[0, 2], [0, 0]])
    fake = net([[0, 0], [0, 0]])
    # one cell differs by 2 over 2 off-diagonal cells -> sqrt(4/2)
    assert rmse(real, fake) == pytest.approx(math.sqrt(2.0), abs=1e-12)


def test_rmse_homogeneous():
    rng = np.random.default_rng(1)
    a, b = random_net(rng), random_net(rng)
    assert rmse(ODNetwork(flows=2 * a.flows), ODNetwork(flows=2 * b.flows)) == pytest.approx(
        2 * rmse(a, b), rel=1e-12
    )


def test_rmse_symmetric_and_positive():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b = random_net(rng), random_net(rng)
        assert rmse(a, b) == pytest.approx(rmse(b, a), rel=1e-12)
        assert rmse(a, b) > 0
    assert rmse(a, a) == 0.0


# ---------------------------------------------------------------- f_jsd


def test_f_jsd_identical_is_zero():
    a = net([[0, 3], [1, 0]])
    assert f_jsd(a, a) == pytest.approx(0.0, abs=1e-12)
    assert f_jsd(a, a, standard=True) == pytest.approx(0.0, abs=1e-12)


def test_f_jsd_disjoint_verbatim_is_infinite():
    fake = net([[0, 1], [0, 0]])
    real = net([[0, 0], [1, 0]])
    # P_M = (0.5, 0.5) on the two off-diagonal cells; KL(P_M||P_real) = +inf
    assert math.isinf(f_jsd(real, fake))


def test_f_jsd_disjoint_standard_closed_form():
    fake = net([[0, 1], [0, 0]])
    real = net([[0, 0], [1, 0]])
    assert f_jsd(real, fake, standard=True) == pytest.approx(math.sqrt(math.log(2)), abs=1e-12)


def test_f_jsd_verbatim_hand_value():
    # distributions p_fake = (0.75, 0.25), p_real = (0.25, 0.75) on two cells
    fake = net([[0, 3], [1, 0]])
    real = net([[0, 1], [3, 0]])
    p_f, p_r = np.array([0.75, 0.25]), np.array([0.25, 0.75])
    p_m = (p_f + p_r) / 2
    kl_fm = np.sum(p_f * np.log(p_f / p_m))
    kl_mr = np.sum(p_m * np.log(p_m / p_r))
    expected = math.sqrt((kl_fm + kl_mr) / 2)
    assert f_jsd(real, fake) == pytest.approx(expected, abs=1e-12)


def test_f_jsd_scale_invariant():
    rng = np.random.default_rng(3)
    a, b = random_net(rng), random_net(rng)
    assert f_jsd(a, b) == pytest.approx(
        f_jsd(ODNetwork(flows=7 * a.flows), ODNetwork(flows=0.2 * b.flows)), rel=1e-9
    )


def test_f_jsd_zero_on_identical_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = random_net(rng)
        assert f_jsd(a, a) == pytest.approx(0.0, abs=1e-9)


# ----------------------------------------------------- mass correlation


def test_mass_correlation_perfect():
    ref = np.array([1.0, 2.0, 3.0, 4.0])
    assert mass_correlation(ref, ref) == pytest.approx(1.0)
    assert mass_correlation(-ref, ref) == pytest.approx(-1.0)


def test_mass_correlation_excludes_zero_population():
    masses = np.array([1.0, 2.0, 3.0, 100.0])
    ref = np.array([1.0, 2.0, 3.0, 0.0])
    # the zero-population region is dropped, leaving a perfect correlation
    assert mass_correlation(masses, ref) == pytest.approx(1.0)
    poi = np.array([2.0, 4.0, 6.0, 1.0])
    pops = np.array([5.0, 5.0, 5.0, 0.0])
    assert mass_correlation(masses, poi, populations=pops) == pytest.approx(1.0)


def test_mass_correlation_errors():
    with pytest.raises(DataFormatError):
        mass_correlation(np.ones(5), np.arange(5.0))
    with pytest.raises(DataFormatError):
        mass_correlation(np.arange(2.0), np.arange(2.0))
