import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinilab import sequences as seq
from dinilab.errors import DomainError, InconclusiveError


def _geometric_head(q, n):
    return q * (1 - q ** (n - 1)) / (1 - q)


def test_geometric_norm_and_tail():
    a = seq.geometric(1 / 16)
    s, err = seq.l1_norm(a)
    assert s == pytest.approx(1 / 15, rel=1e-15)
    assert err <= 1e-12
    assert a.tail(3) == pytest.approx(16.0 ** -3 / (1 - 1 / 16))


def test_power_tail_matches_direct_sum():
    a = seq.power_decay(2.0)
    direct = math.fsum(1.0 / k ** 2 for k in range(5, 2_000_000)) + 1 / 2_000_000
    assert a.tail(5) == pytest.approx(direct, rel=1e-9)
    assert seq.l1_norm(a)[0] == pytest.approx(math.pi ** 2 / 6, rel=1e-14)


def test_ratio_bounded_norm_certifies_precision():
    a = seq.ratio_bounded(lambda k: 0.5 ** np.asarray(k, dtype=float), 0.5)
    s, err = seq.l1_norm(a, precision=1e-10)
    assert err <= 1e-10
    assert abs(s - 1.0) <= err


def test_finite_sequence():
    a = seq.finite([3.0, 2.0, 1.0])
    assert seq.l1_norm(a)[0] == 6.0
    assert a.tail(2) == 3.0 and a.tail(4) == 0.0
    with pytest.raises(DomainError):
        seq.finite([1.0, -1.0])


def test_modulator_geometric_sixteenth():
    res = seq.dp_modulator(seq.geometric(1 / 16), 20 / 21, 1 / 20, horizon=42)
    assert res.blocks[:4] == (3, 4, 5, 6)
    c = res.c(np.arange(1, 8))
    expected = np.array([1.05, 1.05, 1.05, 0.525, 0.2625, 0.13125, 0.065625])
    assert np.allclose(c, expected, rtol=1e-14)
    m = res.members[0]
    assert m.within_lemma and m.blocks_ok
    assert res.max_c() == pytest.approx(1.05)


def test_block_boundaries_are_least_indices():
    a = seq.power_decay(1.5, 3.0)
    delta = 0.09
    res = seq.dp_modulator(a, 0.5, delta)
    norm = seq.l1_norm(a)[0]
    prev = 0
    for j, n in enumerate(res.blocks, start=1):
        thr = delta * norm / 2.0 ** (2 * j - 1)
        assert a.tail(n) < thr * (1 + 1e-12)
        if n - 1 > prev:
            assert a.tail(n - 1) >= thr * (1 - 1e-12)
        prev = n


def test_modulator_beyond_horizon_is_inconclusive():
    res = seq.dp_modulator(seq.geometric(0.5), 1.0, 0.05)
    with pytest.raises(InconclusiveError):
        res.c(res.horizon)


def test_modulator_rejects_zero_sequence():
    with pytest.raises(DomainError):
        seq.dp_modulator(seq.finite([0.0, 0.0]), 1.0, 0.05)


def test_with_epsilon_rescales_bounds():
    res = seq.dp_modulator(seq.power_decay(3.0), 1.0, 0.05)
    half = res.with_epsilon(0.5)
    assert half.blocks == res.blocks
    assert half.members[0].b_norm_lo == pytest.approx(0.5 * res.members[0].b_norm_lo, rel=1e-14)


def test_compact_modulator_serves_all_members():
    fam = [seq.geometric(0.3), seq.power_decay(2.5, 0.2), seq.finite([0.1, 0.05, 0.01])]
    res = seq.dp_modulator_compact(fam, 0.8, 0.05)
    assert len(res.members) == 3
    for m in res.members:
        assert m.within_lemma and m.blocks_ok


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0.05, 0.95), st.floats(1.2, 4.0),
                          st.floats(0.1, 10.0)), min_size=1, max_size=3),
       st.sampled_from([0.5, 1.0]), st.sampled_from([0.05, 0.09]))
def test_modulator_bounds_property(parts, eps, delta):
    comps = [seq.geometric(q, s) if geo else seq.power_decay(p, s) for geo, q, p, s in parts]
    a = comps[0] if len(comps) == 1 else seq.mixture(comps)
    res = seq.dp_modulator(a, eps, delta)
    m = res.members[0]
    assert res.max_c() <= 1 / eps
    assert m.within_lemma
    assert m.blocks_ok


def test_adversarial_harmonic_small_target():
    res = seq.adversarial_for(seq.harmonic_null(), 3.0)
    assert res.partial_sum > 3.0
    assert res.norm == pytest.approx(1.0, abs=1e-12)
    assert res.is_monotone()
    # every complete block adds at least 2^(k+2)
    for k, contrib in enumerate(res.block_contributions, start=1):
        assert contrib >= 2.0 ** (k + 2)


def test_adversarial_partial_sum_direct_check():
    c = seq.harmonic_null()
    res = seq.adversarial_for(c, 3.0)
    j = np.arange(1, res.K + 1)
    direct = math.fsum(res.sequence.terms(j) * j)
    assert direct == pytest.approx(res.partial_sum, rel=1e-12)
    vals = res.sequence.terms(j)
    assert np.all(np.diff(vals) <= 0)


def test_adversarial_geometric_null():
    res = seq.adversarial_for(seq.geometric_null(0.5), 100.0)
    assert res.partial_sum > 100
    assert abs(res.norm - 1.0) <= 1e-12
    assert res.sequence.tail(1) == pytest.approx(1.0, abs=1e-12)


def test_inverse_log_reciprocal_sums_match_direct():
    c = seq.inverse_log_null()
    direct = mpmath.fsum(mpmath.log(j + 1) for j in range(10, 200))
    assert float(c.recip_sum(10, 199)) == pytest.approx(float(direct), rel=1e-12)


def test_adversarial_supplied_indices_checked():
    with pytest.raises(DomainError):
        seq.adversarial_for(seq.harmonic_null(), 3.0, indices=[40, 41, 42])


def test_adversarial_search_limit():
    slow = seq.NullSequence("slow", lambda j: 1.0 / math.log(math.log(j + 3)))
    with pytest.raises(InconclusiveError):
        seq.adversarial_for(slow, 10.0, max_bits=64)


def test_from_config_and_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("k,a\n1,0.5\n2,0.25\n3,0.125\n")
    a = seq.from_config({"kind": "tabulated", "csv": str(p)})
    assert seq.l1_norm(a)[0] == 0.875
    assert seq.from_config({"kind": "geometric", "ratio": 0.5}).tail(1) == pytest.approx(1.0)
