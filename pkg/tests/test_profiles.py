import itertools
import math
from collections import Counter

import numpy as np
import pytest

from permpml.permanent import log_permanent
from permpml.profiles import (
    Profile,
    check_pseudo_distribution,
    log_c_phi,
    profile_of_sequence,
    profile_probability_bruteforce,
    profile_probability_exact,
    profile_probability_grouped,
    profile_probability_matrix,
    sample_sequence,
)


def partitions(n, maxpart=None):
    """All integer partitions of n, parts non-increasing."""
    if maxpart is None:
        maxpart = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, maxpart), 0, -1):
        for rest in partitions(n - first, first):
            yield (first,) + rest


def profile_of_partition(part) -> Profile:
    c = Counter(part)
    freqs = tuple(sorted(c))
    return Profile(freqs, tuple(c[f] for f in freqs))


def test_profile_of_sequence_examples():
    p = profile_of_sequence("abbc")
    assert p.freqs == (1, 2) and p.counts == (2, 1) and p.n == 4
    p = profile_of_sequence("aaaa")
    assert p.freqs == (4,) and p.counts == (1,) and p.n == 4
    p = profile_of_sequence("abcde")
    assert p.freqs == (1,) and p.counts == (5,)
    with pytest.raises(ValueError):
        profile_of_sequence("")


def test_profile_validation():
    with pytest.raises(ValueError):
        Profile((2, 1), (1, 1))  # not increasing
    with pytest.raises(ValueError):
        Profile((0,), (1,))
    with pytest.raises(ValueError):
        Profile((1,), (0,))
    with pytest.raises(ValueError):
        Profile((), ())


def test_profile_json_round_trip():
    p = Profile((1, 3), (2, 1))
    assert Profile.from_json(p.to_json()) == p


def test_log_c_phi():
    assert log_c_phi(Profile((1,), (2,))) == pytest.approx(math.log(2))
    assert log_c_phi(Profile((2,), (1,))) == pytest.approx(0.0)
    assert log_c_phi(Profile((1, 2), (2, 1))) == pytest.approx(math.log(12))


def test_pseudo_distribution_checks():
    check_pseudo_distribution([0.2, 0.3])
    with pytest.raises(ValueError):
        check_pseudo_distribution([0.8, 0.4])
    with pytest.raises(ValueError):
        check_pseudo_distribution([-0.1, 0.5])


def test_profile_probability_matrix_layout():
    p = Profile((1,), (2,))
    m = profile_probability_matrix([0.5, 0.5], p, 0)
    np.testing.assert_allclose(m, np.full((2, 2), 0.5))
    m = profile_probability_matrix([1 / 3], Profile((2,), (1,)), 0)
    np.testing.assert_allclose(m, [[1 / 9]])
    # zero-probability row keeps a 1 in the frequency-0 column (0^0 = 1)
    m = profile_probability_matrix([0.0, 0.5], Profile((2,), (1,)), 1)
    np.testing.assert_allclose(m, [[1.0, 0.0], [1.0, 0.25]])
    with pytest.raises(ValueError):
        profile_probability_matrix([0.5, 0.5], Profile((1,), (1,)), 0)


def test_distinct_columns_at_most_k_plus_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(2, 6))
        q = rng.dirichlet(np.ones(d))
        seq = sample_sequence(q, int(rng.integers(2, 9)), int(rng.integers(1 << 30)))
        p = profile_of_sequence(seq)
        phi0 = d - p.observed + 2
        m = profile_probability_matrix(
            np.concatenate([q, np.zeros(p.observed + phi0 - d)]), p, phi0
        )
        distinct = np.unique(m, axis=1).shape[1]
        assert distinct <= p.k + 1
        assert distinct <= math.isqrt(p.n) + 1 + 1  # k <= sqrt(n) plus unseen


def test_profile_probability_examples():
    p = profile_of_sequence("ab")
    assert profile_probability_exact([0.5, 0.5], p, 0) == pytest.approx(math.log(0.5))
    assert profile_probability_bruteforce([0.5, 0.5], p) == pytest.approx(math.log(0.5))
    assert profile_probability_exact([1.0], Profile((3,), (1,)), 0) == pytest.approx(0.0)
    assert profile_probability_bruteforce([1.0, 0.0], Profile((2,), (1,))) == pytest.approx(0.0)
    # sequences aa, bb under (0.6, 0.4)
    assert profile_probability_bruteforce([0.6, 0.4], Profile((2,), (1,))) == pytest.approx(
        math.log(0.52)
    )


def test_exact_matches_bruteforce_and_grouped():
    qs = [0.15, 0.3, 0.5]
    grids = []
    for d in (1, 2, 3):
        for combo in itertools.product(qs, repeat=d):
            if sum(combo) <= 1.0:
                grids.append(np.array(combo))
    grids.append(np.array([0.0, 0.3, 0.5]))  # zero-entry convention case
    count = 0
    for n in range(1, 6):
        for part in partitions(n):
            p = profile_of_partition(part)
            for q in grids:
                if p.observed > len(q):
                    continue
                phi0 = len(q) - p.observed
                brute = profile_probability_bruteforce(q, p)
                exact = profile_probability_exact(q, p, phi0)
                grouped = profile_probability_grouped(q, p, phi0)
                if brute == -math.inf:
                    assert exact == -math.inf and grouped == -math.inf
                else:
                    assert exact == pytest.approx(brute, abs=1e-10)
                    assert grouped == pytest.approx(brute, abs=1e-10)
                count += 1
    assert count > 100


def test_permanent_invariant_under_q_permutation():
    rng = np.random.default_rng(5)
    q = rng.dirichlet(np.ones(4))
    p = Profile((1, 2), (1, 1))
    base = log_permanent(profile_probability_matrix(q, p, 2))
    for _ in range(5):
        perm = rng.permutation(4)
        assert log_permanent(
            profile_probability_matrix(q[perm], p, 2)
        ) == pytest.approx(base, rel=1e-10)


def test_completeness_sums_to_one():
    rng = np.random.default_rng(8)
    for d in (2, 3):
        for n in (2, 4, 5):
            q = rng.dirichlet(np.ones(d))
            total = 0.0
            for part in partitions(n):
                if len(part) > d:
                    continue
                p = profile_of_partition(part)
                total += math.exp(profile_probability_exact(q, p, d - p.observed))
            assert total == pytest.approx(1.0, abs=1e-9)


def test_grouped_handles_large_supports():
    # 40 symbols in 3 value groups: far past the permanent limit
    q = np.concatenate([np.full(10, 0.02), np.full(10, 0.03), np.full(20, 0.01)])
    p = Profile((1, 2), (2, 1))
    val = profile_probability_grouped(q, p, 40 - p.observed)
    assert -math.inf < val < 0.0


def test_sample_sequence():
    assert sample_sequence([1.0], 3, 0) == ["s0", "s0", "s0"]
    seq = sample_sequence([0.5, 0.5], 10_000, 123)
    freq = Counter(seq)["s0"] / 10_000
    assert 0.48 <= freq <= 0.52
    assert sample_sequence([0.5, 0.5], 10_000, 123) == seq  # reproducible
    with pytest.raises(ValueError):
        sample_sequence([0.5, 0.4], 5, 0)
    with pytest.raises(ValueError):
        profile_of_sequence(sample_sequence([1.0], 0, 0))
