import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geosim.workload import (
    ArrivalProcess,
    CountryProfile,
    country,
    country_rate,
    gib_arrival_rate,
    generate_arrivals,
    load_countries,
    next_arrival,
)


def test_rate_examples():
    assert country_rate(CountryProfile("a", "AAA", 1_000_000)) == pytest.approx(2e6 / 7_488_000)
    assert country_rate(CountryProfile("b", "BBB", 3_744_000)) == 1.0
    assert country("IND").rate == 478.0
    with pytest.raises(ValueError):
        CountryProfile("c", "CCC", 0)


def test_country_table():
    table = load_countries()
    assert len(table) == 184
    assert len({p.iso for p in table}) == 184
    for p in table:
        if p.rate_override_tps is None:
            assert p.rate == pytest.approx(p.population * 2 / (260 * 8 * 3600), rel=1e-6)
    assert max(table, key=lambda p: p.rate).iso == "IND"


def test_next_arrival_mean():
    proc = ArrivalProcess(478.0, 3)
    t, prev, gaps = 0.0, 0.0, np.empty(1_000_000)
    for i in range(gaps.size):
        t = next_arrival(proc, t)
        gaps[i] = t - prev
        prev = t
    assert gaps.mean() == pytest.approx(1 / 478, rel=0.01)


def test_vectorised_stream_equals_iterated():
    proc = ArrivalProcess(50.0, 8, stream=2)
    arr = generate_arrivals(50.0, 40.0, 8, 2)
    t, it = 0.0, []
    while True:
        t = next_arrival(proc, t)
        if t >= 40.0:
            break
        it.append(t)
    np.testing.assert_array_equal(arr, np.array(it))


def test_determinism_and_streams():
    a = generate_arrivals(100, 100, 1, 0)
    assert np.array_equal(a, generate_arrivals(100, 100, 1, 0))
    b = generate_arrivals(100, 100, 1, 1)
    assert not np.array_equal(a[:100], b[:100])
    n = min(a.size, b.size) - 1
    ga, gb = np.diff(a[: n + 1]), np.diff(b[: n + 1])
    assert abs(np.corrcoef(ga, gb)[0, 1]) < 0.05


@settings(max_examples=20, deadline=None)
@given(rate=st.floats(10, 5000), seed=st.integers(0, 2**32))
def test_count_within_three_sigma(rate, seed):
    duration = 50.0
    mean = rate * duration
    # 3 sigma for the single draw plus slack so 20 examples rarely trip
    assert abs(generate_arrivals(rate, duration, seed).size - mean) <= 4.5 * math.sqrt(mean)


def test_chi_square_counts():
    arr = generate_arrivals(20.0, 2000.0, 5)
    counts = np.bincount(arr.astype(int), minlength=2000)[:2000]
    lam = 20.0
    # Poisson counts per 1 s bin: bucket and compare with expected frequencies
    from math import exp, factorial

    edges = list(range(10, 31))
    observed, expected = [], []
    for k in edges:
        observed.append(np.sum(counts == k))
        expected.append(2000 * exp(-lam) * lam**k / factorial(k))
    observed.append(np.sum((counts < 10) | (counts > 30)))
    expected.append(2000 - sum(expected))
    chi2 = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    assert chi2 < 45  # 21 dof, p ~ 0.002


def test_sorted_and_bounded():
    arr = generate_arrivals(478, 10, 0)
    assert np.all(np.diff(arr) >= 0) and arr[-1] < 10 and arr[0] > 0
    assert generate_arrivals(478, 0, 0).size == 0


def test_gib_rate_examples():
    assert gib_arrival_rate([0.5], 1) == 0.5
    assert gib_arrival_rate([0.1] * 184, 1) == pytest.approx(18.4)
    assert gib_arrival_rate([0.1] * 184, 5) == pytest.approx(18.4 / 5)
    with pytest.raises(ValueError):
        gib_arrival_rate([1.0], 0)
