"""Entropy, divergence, and multivariate correlation functionals.

All quantities are in nats.  The conventions throughout: ``0 log 0 = 0``, and
KL divergence returns ``math.inf`` when the first argument is not absolutely
continuous with respect to the second.  Conditional entropies are evaluated
only over conditioning strings realized in the support, via the chain-rule
identity H(coord | rest) = H(joint) - H(rest).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .measures import (
    DiscreteMeasure,
    FuzzyPartition,
    MeasureError,
    MixtureRepresentation,
    Word,
    fuzzy_split,
    hookup,
    marginal,
)


def shannon_entropy(mu: DiscreteMeasure) -> float:
    """-sum p log p over the atoms of ``mu``."""
    return -sum(m * math.log(m) for m in mu.atoms.values() if m > 0.0)


def entropy_of_vector(probs: Sequence[float]) -> float:
    """Entropy of a bare probability vector (zero entries contribute 0)."""
    return -sum(p * math.log(p) for p in probs if p > 0.0)


def binary_entropy(p: float) -> float:
    return entropy_of_vector((p, 1.0 - p))


def kl_divergence(nu: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """KL divergence D(nu || mu); +inf unless supp(nu) is inside supp(mu)."""
    if nu.space != mu.space:
        raise MeasureError("kl_divergence needs measures on the same space")
    total = 0.0
    for w, q in nu.atoms.items():
        p = mu.mass(w)
        if p == 0.0:
            return math.inf
        total += q * math.log(q / p)
    return max(total, 0.0) if total > -1e-12 else total


def per_coordinate_entropies(mu: DiscreteMeasure) -> tuple[float, ...]:
    n = mu.space.dimension
    return tuple(shannon_entropy(marginal(mu, [i])) for i in range(n))


def conditional_coordinate_entropy(mu: DiscreteMeasure, i: int) -> float:
    """H(coordinate i | all other coordinates), grouping atoms by their projection."""
    n = mu.space.dimension
    if n == 1:
        return shannon_entropy(mu)
    rest = [c for c in range(n) if c != i]
    groups: dict[Word, list[float]] = {}
    for w, m in mu.atoms.items():
        key = tuple(w[c] for c in rest)
        groups.setdefault(key, []).append(m)
    total = 0.0
    for masses in groups.values():
        q = sum(masses)
        total += q * entropy_of_vector([m / q for m in masses])
    return total


def total_correlation(mu: DiscreteMeasure) -> float:
    """Sum of marginal entropies minus joint entropy; equals the KL divergence
    from ``mu`` to the product of its marginals."""
    tc = sum(per_coordinate_entropies(mu)) - shannon_entropy(mu)
    return max(tc, 0.0) if tc > -1e-12 else tc


def dual_total_correlation(mu: DiscreteMeasure) -> float:
    """Joint entropy minus the sum of each coordinate's entropy given the rest."""
    n = mu.space.dimension
    if n == 1:
        return 0.0
    h = shannon_entropy(mu)
    dtc = h - sum(conditional_coordinate_entropy(mu, i) for i in range(n))
    return max(dtc, 0.0) if dtc > -1e-12 else dtc


@dataclass(frozen=True)
class InfoReport:
    """One-pass summary of the information functionals of a measure."""

    entropy: float
    per_coordinate_entropies: tuple[float, ...]
    tc: float
    dtc: float

    def to_dict(self) -> dict:
        return {
            "entropy": self.entropy,
            "per_coordinate_entropies": list(self.per_coordinate_entropies),
            "tc": self.tc,
            "dtc": self.dtc,
        }


def info_report(mu: DiscreteMeasure) -> InfoReport:
    h = shannon_entropy(mu)
    coords = per_coordinate_entropies(mu)
    tc = sum(coords) - h
    tc = max(tc, 0.0) if tc > -1e-12 else tc
    return InfoReport(h, coords, tc, dual_total_correlation(mu))


# -----------------------------------------------------------------------------
# Fuzzy-partition information
# -----------------------------------------------------------------------------
def fuzzy_mutual_information(mu: DiscreteMeasure, fp: FuzzyPartition) -> float:
    """Mutual information between ``mu`` and the index of a fuzzy partition.

    Computed as sum_j p_j * D(mu reweighted by rho_j || mu), which agrees with
    the mutual information of the randomization's joint law.
    """
    rep = fuzzy_split(mu, fp)
    return sum(p * kl_divergence(comp, mu)
               for p, comp in zip(rep.weights, rep.components))


def mixture_mutual_information(rep: MixtureRepresentation, mu: DiscreteMeasure) -> float:
    """sum_j p_j D(mu_j || mu) for an explicit mixture representation of ``mu``."""
    return sum(p * kl_divergence(comp, mu)
               for p, comp in zip(rep.weights, rep.components))


def _hookup_entropy_terms(mu: DiscreteMeasure, fp: FuzzyPartition):
    """Joint law of (index, word) plus the index count, for decrement arithmetic."""
    rep = fuzzy_split(mu, fp)
    joint = hookup(rep.weights, rep.components)
    return rep, joint


def dtc_decrement(mu: DiscreteMeasure, fp: FuzzyPartition) -> tuple[float, float]:
    """Both sides of the decrement identity for a binary fuzzy partition.

    Returns ``(lhs, rhs)`` where
      lhs = DTC(mu) - sum_j p_j DTC(mu_j)
      rhs = I(word; index) - sum_i I(coord_i; index | other coords),
    the right side evaluated on the joint (index, word) law.  The two agree
    up to float error.
    """
    if len(fp) != 2:
        raise MeasureError("dtc_decrement needs a binary fuzzy partition")
    rep, joint = _hookup_entropy_terms(mu, fp)
    if len(rep) != 2:
        raise MeasureError("degenerate weight in binary fuzzy partition")
    n = mu.space.dimension

    lhs = dual_total_correlation(mu) - sum(
        p * dual_total_correlation(comp)
        for p, comp in zip(rep.weights, rep.components))

    # rhs from the joint law: coordinate 0 of `joint` is the mixture index.
    h_joint = shannon_entropy(joint)
    h_word = shannon_entropy(marginal(joint, range(1, n + 1)))
    h_index = shannon_entropy(marginal(joint, [0]))
    mutual = h_word + h_index - h_joint
    cond_sum = 0.0
    for i in range(n):
        rest = [c for c in range(1, n + 1) if c != i + 1]
        h_rest = shannon_entropy(marginal(joint, rest))
        h_rest_index = shannon_entropy(marginal(joint, [0] + rest))
        # I(coord_i; index | rest) = H(coord_i|rest) - H(coord_i|rest,index)
        cond_sum += (h_word - h_rest) - (h_joint - h_rest_index)
    rhs = mutual - cond_sum
    return lhs, rhs


# -----------------------------------------------------------------------------
# Coordinate trimming
# -----------------------------------------------------------------------------
def trim_coordinates(mu: DiscreteMeasure, r: float) -> tuple[int, ...]:
    """Greedily discard coordinates until each retained one is nearly determined
    by the others, returning the retained subset S.

    With threshold alpha = TC(mu) / (r n): while some retained coordinate i has
    H(coord_i) - H(coord_i | other retained coords) > alpha, remove the one
    with the largest excess (ties to the lowest index).  The result satisfies
    |S| >= (1-r) n and DTC(mu_S) <= TC(mu)/r.
    """
    if not (0.0 < r < 1.0):
        raise MeasureError(f"r must lie in (0,1), got {r}")
    n = mu.space.dimension
    tc = total_correlation(mu)
    alpha = tc / (r * n)
    retained = list(range(n))
    # strictly fewer than r*n removals can occur, so |S| >= (1-r)n is forced
    max_removals = max(0, math.ceil(r * n) - 1)
    for _ in range(max_removals):
        if len(retained) <= 1:
            break
        sub = marginal(mu, retained)
        gaps = []
        for pos, coord in enumerate(retained):
            h_i = shannon_entropy(marginal(sub, [pos]))
            h_cond = conditional_coordinate_entropy(sub, pos)
            gaps.append((h_i - h_cond, coord, pos))
        excess, coord, pos = max(gaps, key=lambda g: (g[0], -g[1]))
        if excess <= alpha + 1e-12:
            break
        retained.pop(pos)
    return tuple(retained)
