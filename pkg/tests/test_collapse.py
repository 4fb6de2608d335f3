import numpy as np
import pytest

from dinilab import collapse as col
from dinilab import modulus as mod
from dinilab.errors import DomainError, InvariantError

GRID = np.linspace(1e-3, 1.0, 1000)


def test_finite_family_does_not_collapse():
    fam = col.power_family(2)
    rep = col.collapsing_measure_estimate(fam, GRID, 10, zero_threshold=1e-12)
    assert rep.mu_estimate == 0.0
    assert rep.members_evaluated == 2


def test_powers_collapse_below_threshold_root():
    rep = col.collapsing_measure_estimate(col.power_family(), GRID, 200, zero_threshold=1e-9)
    # s^200 < 1e-9 exactly when s < 1e-9^(1/200)
    edge = 1e-9 ** (1 / 200)
    assert rep.mu_estimate == GRID[GRID < edge].max()


def test_collapse_monotone_in_budget_and_threshold():
    fam = col.power_family()
    mus = [col.collapsing_measure_estimate(fam, GRID, b).mu_estimate for b in (10, 50, 200, 800)]
    assert mus == sorted(mus)
    by_thr = [col.collapsing_measure_estimate(fam, GRID, 200, zero_threshold=z).mu_estimate
              for z in (1e-3, 1e-6, 1e-9)]
    assert by_thr == sorted(by_thr, reverse=True)


def test_union_law_at_finite_budget():
    a = col.power_family()
    b = col.ModulusFamily(lambda n: (lambda s, n=n: np.sqrt(s) / n), 1.0, "sqrt/n")
    u = a.union(b)
    for budget in (5, 40):
        mu_u = col.collapsing_measure_estimate(u, GRID, 2 * budget).mu_estimate
        mu_a = col.collapsing_measure_estimate(a, GRID, budget).mu_estimate
        mu_b = col.collapsing_measure_estimate(b, GRID, budget).mu_estimate
        assert mu_u == max(mu_a, mu_b)


def test_grid_outside_interval_rejected():
    with pytest.raises(DomainError):
        col.collapsing_measure_estimate(col.power_family(3), [0.0, 0.5], 3)
    with pytest.raises(DomainError):
        col.collapsing_measure_estimate(col.power_family(3), [0.5, 1.5], 3)


def test_failed_member_evaluation_surfaces():
    def bad(s):
        raise RuntimeError("boom")
    with pytest.raises(InvariantError):
        col.collapsing_measure_estimate(col.ModulusFamily([bad]), GRID, 1)


def test_shored_up_examples():
    powers = lambda n: (lambda s, n=n: s ** n)  # noqa: E731
    res = col.is_shored_up(powers, lambda n: 0.5, 20, floor=0.01)
    assert not res
    assert res.witness == 20
    sq = mod.power(0.5, domain_end=1.0)
    res = col.is_shored_up([sq] * 30, [1 / n ** 2 for n in range(1, 31)], 30, floor=0.05)
    assert not res and res.min_value == pytest.approx(1 / 30)


def test_shored_up_accepts_blockwise_constant_gammas():
    ident = lambda s: s / 0.5  # noqa: E731
    res = col.is_shored_up([ident] * 4, [0.5, 0.5, 0.25, 0.125], 4, floor=0.0)
    assert res.gammas_decreasing
    res = col.is_shored_up([ident] * 3, [0.5, 0.5, 0.5], 3, floor=0.0)
    assert not res.gammas_decreasing


def test_noncollapse_witness():
    assert col.noncollapse_witness(col.power_family(), 0.5, 10) == pytest.approx(2.0 ** -10)
    assert col.noncollapse_witness(col.power_family(2), 0.5, 10) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        col.noncollapse_witness(col.power_family(2), -1.0, 3)


def test_uniform_dini_family_does_not_collapse():
    fam = col.ModulusFamily([mod.power(a, domain_end=1.0) for a in (0.5, 1.0, 1.5, 2.0)])
    assert col.collapsing_measure_estimate(fam, GRID, 4).mu_estimate == 0.0


def test_report_serialization(tmp_path):
    rep = col.collapsing_measure_estimate(col.power_family(), GRID[:5], 3)
    rep.write_csv(tmp_path / "c.csv")
    rep.write_json(tmp_path / "c.json")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "s,inf_value"
    assert '"mu_estimate"' in (tmp_path / "c.json").read_text()
