"""Profiles of sample sequences and exact profile-probability oracles.

A profile is the multiset of distinct nonzero symbol frequencies with their
multiplicities; it forgets symbol identities.  The probability of observing a
profile under a (pseudo-)distribution factors through the permanent of the
profile probability matrix, which is what the whole pipeline approximates.

Three independent evaluators of the same quantity live here:

* ``profile_probability_bruteforce`` enumerates raw sequences (tiny n only),
* ``profile_probability_exact`` goes through the permanent formula,
* ``profile_probability_grouped`` sums over level-to-frequency allocation
  matrices, which stays exact for distributions with few distinct values even
  when the domain is far beyond the permanent size limit.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from permpml.permanent import log_permanent

BRUTEFORCE_N = 8
BRUTEFORCE_DOMAIN = 5

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Profile:
    """Distinct nonzero frequencies (increasing) with their multiplicities."""

    freqs: tuple[int, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.freqs) != len(self.counts) or not self.freqs:
            raise ValueError("freqs and counts must be equal-length and non-empty")
        if any(f < 1 or int(f) != f for f in self.freqs):
            raise ValueError("frequencies must be positive integers")
        if any(c < 1 or int(c) != c for c in self.counts):
            raise ValueError("multiplicities must be positive integers")
        if any(b <= a for a, b in zip(self.freqs, self.freqs[1:])):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def n(self) -> int:
        """Total sample count."""
        return sum(m * c for m, c in zip(self.freqs, self.counts))

    @property
    def k(self) -> int:
        """Number of distinct observed frequencies."""
        return len(self.freqs)

    @property
    def observed(self) -> int:
        """Number of distinct observed symbols."""
        return sum(self.counts)

    def to_json(self) -> str:
        return json.dumps({"freqs": list(self.freqs), "counts": list(self.counts)})

    @classmethod
    def from_json(cls, text: str) -> "Profile":
        obj = json.loads(text)
        return cls(tuple(obj["freqs"]), tuple(obj["counts"]))


def profile_of_sequence(seq) -> Profile:
    """Profile of a sequence of hashable symbols."""
    tokens = list(seq)
    if not tokens:
        raise ValueError("cannot take the profile of an empty sequence")
    freq_of_freq = Counter(Counter(tokens).values())
    freqs = sorted(freq_of_freq)
    return Profile(tuple(freqs), tuple(freq_of_freq[f] for f in freqs))


def check_pseudo_distribution(q) -> np.ndarray:
    """Validate a non-negative weight vector with total mass <= 1."""
    v = np.asarray(q, dtype=float)
    if v.ndim != 1:
        raise ValueError("pseudo-distribution must be a 1-d vector")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("pseudo-distribution entries must be finite and non-negative")
    if v.sum() > 1.0 + MASS_TOL:
        raise ValueError(f"total mass {v.sum()} exceeds 1")
    return v


def log_c_phi(p: Profile) -> float:
    """log of the sequence-count factor n! / prod_j (m_j!)^{phi_j}."""
    return float(
        gammaln(p.n + 1)
        - sum(c * gammaln(m + 1) for m, c in zip(p.freqs, p.counts))
    )


def profile_probability_matrix(q, p: Profile, phi0: int) -> np.ndarray:
    """N x N matrix with phi_j columns equal to q^{m_j} per frequency.

    Column layout: phi0 all-ones columns for the unseen frequency 0 first
    (0^0 = 1 keeps rows of probability zero supported), then phi_j columns of
    q^{m_j} in increasing frequency order.
    """
    v = check_pseudo_distribution(q)
    if phi0 < 0:
        raise ValueError("phi0 must be non-negative")
    n_dom = phi0 + p.observed
    if len(v) != n_dom:
        raise ValueError(
            f"domain size {len(v)} != phi0 + observed symbols = {n_dom}"
        )
    col_freqs = np.repeat(
        np.concatenate(([0], p.freqs)), np.concatenate(([phi0], p.counts))
    )
    return np.power(v[:, None], col_freqs[None, :])


def profile_probability_exact(q, p: Profile, phi0: int) -> float:
    """log P(q, phi) via the permanent of the profile probability matrix."""
    a = profile_probability_matrix(q, p, phi0)
    counts = np.concatenate(([phi0], p.counts))
    lp = log_permanent(a)  # enforces the Ryser size limit
    return log_c_phi(p) - float(np.sum(gammaln(counts + 1))) + lp


def profile_probability_bruteforce(q, p: Profile) -> float:
    """log P(q, phi) by enumerating every length-n sequence (n <= 8, |D| <= 5)."""
    v = check_pseudo_distribution(q)
    n = p.n
    d = len(v)
    if n > BRUTEFORCE_N:
        raise ValueError(f"brute force limited to n <= {BRUTEFORCE_N}")
    if d > BRUTEFORCE_DOMAIN:
        raise ValueError(f"brute force limited to domains <= {BRUTEFORCE_DOMAIN}")
    want = Counter(dict(zip(p.freqs, p.counts)))
    terms = []
    for seq in itertools.product(range(d), repeat=n):
        freq = np.bincount(seq, minlength=d)
        have = Counter(int(f) for f in freq if f > 0)
        if have == want:
            terms.append(float(np.prod(v**freq)))
    total = math.fsum(terms)
    return math.log(total) if total > 0 else -math.inf


def profile_probability_grouped(q, p: Profile, phi0: int) -> float:
    """log P(q, phi), exact, by summing over level-to-frequency allocations.

    Groups equal probability values: with L distinct positive values of
    multiplicities rho_i, P factors as C_phi times a sum over integer
    matrices X with row sums rho and column sums (phi0, phi_1..phi_k) of
    prod_i rho_i!/prod_j X_ij! * prod r_i^{m_j X_ij}.  Cost grows with the
    number of distinct values, not the domain size, so this evaluates
    distributions whose support is far beyond the permanent limit.
    """
    v = check_pseudo_distribution(q)
    if phi0 < 0:
        raise ValueError("phi0 must be non-negative")
    if len(v) != phi0 + p.observed:
        raise ValueError("domain size must equal phi0 + observed symbols")
    n_zero = int(np.sum(v == 0))
    if n_zero > phi0:
        return -math.inf  # zero-probability symbols can only be unseen
    values, rho = np.unique(v[v > 0], return_counts=True)
    col_counts = [phi0 - n_zero] + list(p.counts)
    col_freqs = [0] + list(p.freqs)
    nlev = len(values)
    logv = np.log(values)

    term_logs: list[float] = []
    capacity = rho.astype(int).copy()

    def recurse(j: int, acc: float):
        if j == len(col_counts) - 1:
            # the remaining capacity must absorb the last column
            if capacity.sum() != col_counts[-1]:
                return
            total = acc
            for i in range(nlev):
                x = capacity[i]
                total += x * col_freqs[-1] * logv[i] - gammaln(x + 1)
            term_logs.append(total)
            return
        target = col_counts[j]

        def fill(i: int, left: int, acc_j: float):
            if i == nlev - 1:
                if left > capacity[i]:
                    return
                x = left
                capacity[i] -= x
                recurse(
                    j + 1,
                    acc_j + x * col_freqs[j] * logv[i] - gammaln(x + 1),
                )
                capacity[i] += x
                return
            for x in range(min(target, capacity[i], left) + 1):
                capacity[i] -= x
                fill(i + 1, left - x, acc_j + x * col_freqs[j] * logv[i] - gammaln(x + 1))
                capacity[i] += x

        fill(0, target, acc)

    rho_log = float(np.sum(gammaln(rho + 1)))
    recurse(0, rho_log)
    if not term_logs:
        return -math.inf
    return log_c_phi(p) + float(logsumexp(term_logs))


def sample_sequence(q, n: int, seed) -> list[str]:
    """n i.i.d. draws from a normalized distribution, reproducible from seed."""
    v = check_pseudo_distribution(q)
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValueError("sample_sequence requires a normalized distribution")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(v), size=n, p=v / v.sum())
    return [f"s{i}" for i in draws]
