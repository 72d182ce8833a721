"""Sparse probability measures on finite product spaces and their mixture algebra.

A measure on ``A^n`` is stored as a map from words (length-``n`` tuples of
symbols in ``range(alphabet_size)``) to positive masses.  The full cube is
never materialised: every operation touches supports only, and supports are
kept in lexicographic order so that all downstream output is deterministic.

Mixing variables are always finite index sets here; kernels are finite lists
of measures.  Measures with genuinely continuous mixing variables can only be
represented through finite samples of their kernels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

Word = tuple[int, ...]

#: slack accepted when validating that masses sum to one
MASS_TOL = 1e-12
#: atoms below this mass are pruned after arithmetic and the measure renormalized
PRUNE_TOL = 1e-15
#: pointwise slack for fuzzy-partition densities summing to one
FUZZY_TOL = 1e-10
#: default cap on enumerated support sizes
DEFAULT_SUPPORT_CAP = 1 << 20


class MeasureError(ValueError):
    """Raised when a measure, partition, or mixture violates its invariants."""


@dataclass(frozen=True)
class ProductSpace:
    """The finite product space ``A^n`` with ``|A| = alphabet_size``, ``n = dimension``."""

    alphabet_size: int
    dimension: int

    def __post_init__(self) -> None:
        if self.alphabet_size < 1:
            raise MeasureError(f"alphabet_size must be >= 1, got {self.alphabet_size}")
        if self.dimension < 1:
            raise MeasureError(f"dimension must be >= 1, got {self.dimension}")

    def contains(self, word: Word) -> bool:
        return len(word) == self.dimension and all(
            0 <= s < self.alphabet_size for s in word
        )

    def restrict(self, dimension: int) -> "ProductSpace":
        """Same alphabet, different number of coordinates."""
        return ProductSpace(self.alphabet_size, dimension)


class DiscreteMeasure:
    """A probability measure on a :class:`ProductSpace`, stored sparsely.

    Parameters
    ----------
    space : ProductSpace
    atoms : mapping from word to mass
        Masses must be nonnegative and sum to 1 within ``MASS_TOL``.  Zero-mass
        entries are dropped; the stored masses are otherwise kept exactly as
        given, so that file round trips are byte-faithful.

    Instances are immutable; all arithmetic returns new measures.
    """

    __slots__ = ("space", "_atoms")

    def __init__(self, space: ProductSpace, atoms: Mapping[Word, float]):
        cleaned: dict[Word, float] = {}
        for word in sorted(atoms):
            mass = float(atoms[word])
            if not space.contains(tuple(word)):
                raise MeasureError(f"word {word!r} not in A^{space.dimension} "
                                   f"with |A|={space.alphabet_size}")
            if mass < 0.0:
                raise MeasureError(f"negative mass {mass} at word {word!r}")
            if mass > 0.0:
                cleaned[tuple(word)] = mass
        if not cleaned:
            raise MeasureError("measure has empty support")
        total = sum(cleaned.values())
        if abs(total - 1.0) > MASS_TOL:
            raise MeasureError(f"masses sum to {total!r}, not 1 within {MASS_TOL}")
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "_atoms", cleaned)

    def __setattr__(self, name, value):  # pragma: no cover - guard rail
        raise AttributeError("DiscreteMeasure is immutable")

    # -- construction helpers ---------------------------------------------------
    @classmethod
    def from_unnormalized(cls, space: ProductSpace, raw: Mapping[Word, float]) -> "DiscreteMeasure":
        """Prune masses below ``PRUNE_TOL`` and renormalize. Used by all arithmetic."""
        kept = {w: m for w, m in raw.items() if m > PRUNE_TOL}
        total = sum(kept.values())
        if total <= 0.0:
            raise MeasureError("null reweighting")
        return cls(space, {w: m / total for w, m in kept.items()})

    @classmethod
    def point_mass(cls, space: ProductSpace, word: Word) -> "DiscreteMeasure":
        return cls(space, {tuple(word): 1.0})

    @classmethod
    def uniform_on(cls, space: ProductSpace, words: Iterable[Word]) -> "DiscreteMeasure":
        words = [tuple(w) for w in words]
        if not words:
            raise MeasureError("measure has empty support")
        return cls(space, {w: 1.0 / len(words) for w in words})

    # -- access ------------------------------------------------------------------
    @property
    def atoms(self) -> Mapping[Word, float]:
        return MappingProxyType(self._atoms)

    @property
    def support(self) -> tuple[Word, ...]:
        return tuple(self._atoms)

    def mass(self, word: Word) -> float:
        return self._atoms.get(tuple(word), 0.0)

    def __len__(self) -> int:
        return len(self._atoms)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DiscreteMeasure)
                and self.space == other.space
                and self._atoms == other._atoms)

    def __hash__(self):
        return hash((self.space, tuple(self._atoms.items())))

    def __repr__(self) -> str:
        return (f"DiscreteMeasure(|A|={self.space.alphabet_size}, "
                f"n={self.space.dimension}, atoms={len(self._atoms)})")


@dataclass(frozen=True)
class FuzzyPartition:
    """A finite tuple of densities in [0, 1] summing pointwise to 1 on a support.

    Densities are stored as maps over the support of a reference measure; a
    word missing from a density map is treated as density 0 there.
    """

    space: ProductSpace
    densities: tuple[Mapping[Word, float], ...]

    def __post_init__(self) -> None:
        if not self.densities:
            raise MeasureError("fuzzy partition needs at least one density")
        frozen = tuple(MappingProxyType(dict(d)) for d in self.densities)
        object.__setattr__(self, "densities", frozen)
        support: set[Word] = set()
        for d in frozen:
            support.update(d)
        for w in support:
            vals = [d.get(w, 0.0) for d in frozen]
            if any(v < -FUZZY_TOL or v > 1.0 + FUZZY_TOL for v in vals):
                raise MeasureError(f"density value outside [0,1] at {w!r}")
            total = sum(vals)
            if abs(total - 1.0) > FUZZY_TOL:
                raise MeasureError(
                    f"densities sum to {total!r} at {w!r}, not 1 within {FUZZY_TOL}")

    def __len__(self) -> int:
        return len(self.densities)

    @classmethod
    def from_functions(cls, space: ProductSpace, support: Iterable[Word],
                       funcs: Sequence[Callable[[Word], float]]) -> "FuzzyPartition":
        support = [tuple(w) for w in support]
        return cls(space, tuple({w: float(f(w)) for w in support} for f in funcs))

    @classmethod
    def indicator(cls, space: ProductSpace, support: Iterable[Word],
                  cells: Sequence[Iterable[Word]]) -> "FuzzyPartition":
        """Indicator fuzzy partition of ``support`` by disjoint covering ``cells``."""
        support = [tuple(w) for w in support]
        cell_sets = [frozenset(tuple(w) for w in c) for c in cells]
        dens = []
        for cell in cell_sets:
            dens.append({w: 1.0 for w in support if w in cell})
        fp = cls(space, tuple(dens))
        return fp


@dataclass(frozen=True)
class MixtureRepresentation:
    """A stochastic weight vector together with component measures on one space."""

    weights: tuple[float, ...]
    components: tuple[DiscreteMeasure, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.components):
            raise MeasureError("weight/component count mismatch")
        if not self.components:
            raise MeasureError("mixture needs at least one component")
        space = self.components[0].space
        for comp in self.components:
            if comp.space != space:
                raise MeasureError("mixture components on different spaces")
        if any(w < 0 for w in self.weights):
            raise MeasureError("negative mixture weight")
        total = sum(self.weights)
        if abs(total - 1.0) > MASS_TOL:
            raise MeasureError(f"weights sum to {total!r}, not 1 within {MASS_TOL}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def space(self) -> ProductSpace:
        return self.components[0].space

    def __len__(self) -> int:
        return len(self.weights)


# -----------------------------------------------------------------------------
# Core operations
# -----------------------------------------------------------------------------
def marginal(mu: DiscreteMeasure, coords: Iterable[int]) -> DiscreteMeasure:
    """Pushforward of ``mu`` under projection to ``coords`` (given in [0, n))."""
    coords = sorted(set(int(c) for c in coords))
    if not coords:
        raise MeasureError("empty projection")
    n = mu.space.dimension
    if coords[0] < 0 or coords[-1] >= n:
        raise MeasureError(f"coords {coords} outside [0,{n})")
    out: dict[Word, float] = {}
    for word, mass in mu.atoms.items():
        proj = tuple(word[c] for c in coords)
        out[proj] = out.get(proj, 0.0) + mass
    space = mu.space.restrict(len(coords))
    # projection preserves mass exactly; constructor validates
    return DiscreteMeasure(space, out)


def _density_values(mu: DiscreteMeasure, rho) -> dict[Word, float]:
    """Evaluate a density (callable or mapping) on the support of ``mu``."""
    if callable(rho):
        return {w: float(rho(w)) for w in mu.support}
    return {w: float(rho.get(w, 0.0)) for w in mu.support}


def reweight(mu: DiscreteMeasure, rho) -> DiscreteMeasure:
    """The reweighted measure with density proportional to ``rho``.

    ``rho`` may be a callable on words or a mapping; values must be
    nonnegative on the support and have positive integral.  Conditioning on a
    set is the special case where ``rho`` is its indicator.
    """
    vals = _density_values(mu, rho)
    raw = {}
    for w, mass in mu.atoms.items():
        v = vals[w]
        if v < 0:
            raise MeasureError(f"negative density {v} at {w!r}")
        raw[w] = v * mass
    return DiscreteMeasure.from_unnormalized(mu.space, raw)


def condition(mu: DiscreteMeasure, subset: Iterable[Word]) -> DiscreteMeasure:
    """``mu`` conditioned on a set of words with positive mass."""
    cell = frozenset(tuple(w) for w in subset)
    return reweight(mu, lambda w: 1.0 if w in cell else 0.0)


def mix(rep: MixtureRepresentation) -> DiscreteMeasure:
    """Atomwise weighted sum of the components."""
    if len(rep) == 1:
        return rep.components[0]
    raw: dict[Word, float] = {}
    for weight, comp in zip(rep.weights, rep.components):
        if weight == 0.0:
            continue
        for w, m in comp.atoms.items():
            raw[w] = raw.get(w, 0.0) + weight * m
    return DiscreteMeasure.from_unnormalized(rep.space, raw)


def fuzzy_split(mu: DiscreteMeasure, fp: FuzzyPartition) -> MixtureRepresentation:
    """Split ``mu`` along a fuzzy partition into weights and reweighted components.

    Weight ``p_j`` is the integral of the j-th density; the j-th component is
    ``mu`` reweighted by it.  Zero-weight terms are dropped.
    """
    weights = []
    comps = []
    for dens in fp.densities:
        vals = _density_values(mu, dens)
        p = sum(vals[w] * m for w, m in mu.atoms.items())
        if p <= PRUNE_TOL:
            continue
        weights.append(p)
        comps.append(reweight(mu, vals))
    total = sum(weights)
    return MixtureRepresentation(tuple(w / total for w in weights), tuple(comps))


def hookup(weights: Sequence[float], kernel: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    """Joint law of (index, word) for a finite mixture.

    The result lives on an augmented product space whose coordinate 0 is the
    mixture index; its projection to coordinates [1, n] equals the mixture and
    its coordinate-0 marginal equals ``weights``.
    """
    rep = MixtureRepresentation(tuple(weights), tuple(kernel))
    n = rep.space.dimension
    alpha = max(rep.space.alphabet_size, len(rep))
    joint_space = ProductSpace(alpha, n + 1)
    raw: dict[Word, float] = {}
    for j, (weight, comp) in enumerate(zip(rep.weights, rep.components)):
        if weight == 0.0:
            continue
        for w, m in comp.atoms.items():
            raw[(j,) + w] = weight * m
    return DiscreteMeasure(joint_space, raw)


def regroup(mu: DiscreteMeasure, block: int) -> DiscreteMeasure:
    """View a measure on ``A^(k*block)`` as one on ``(A^block)^k``.

    Consecutive blocks of ``block`` symbols are encoded as single symbols in
    ``range(|A|**block)``, most-significant-first.
    """
    n = mu.space.dimension
    if block < 1 or n % block != 0:
        raise MeasureError(f"dimension {n} is not a multiple of block {block}")
    a = mu.space.alphabet_size
    k = n // block
    space = ProductSpace(a ** block, k)
    out: dict[Word, float] = {}
    for word, mass in mu.atoms.items():
        enc = []
        for i in range(k):
            code = 0
            for s in word[i * block:(i + 1) * block]:
                code = code * a + s
            enc.append(code)
        out[tuple(enc)] = mass
    return DiscreteMeasure(space, out)


def variation_norm(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """The total mass of |mu - nu| (lies in [0, 2])."""
    words = set(mu.atoms) | set(nu.atoms)
    return sum(abs(mu.mass(w) - nu.mass(w)) for w in sorted(words))


def tv_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Total variation distance, one half of :func:`variation_norm` (in [0, 1])."""
    return 0.5 * variation_norm(mu, nu)


def product_measure(space: ProductSpace, dists: Sequence[Sequence[float]],
                    cap: int = DEFAULT_SUPPORT_CAP) -> DiscreteMeasure:
    """The product of per-coordinate distributions, enumerated sparsely."""
    n = space.dimension
    if len(dists) == 1 and n > 1:
        dists = [dists[0]] * n
    if len(dists) != n:
        raise MeasureError(f"need {n} coordinate distributions, got {len(dists)}")
    partial: dict[Word, float] = {(): 1.0}
    for i in range(n):
        nxt: dict[Word, float] = {}
        for prefix, mass in partial.items():
            for s, p in enumerate(dists[i]):
                m = mass * p
                if m > PRUNE_TOL:
                    nxt[prefix + (s,)] = m
        if len(nxt) > cap:
            raise MeasureError(f"product support exceeds cap {cap}")
        partial = nxt
    return DiscreteMeasure.from_unnormalized(space, partial)


# -----------------------------------------------------------------------------
# JSON measure files
# -----------------------------------------------------------------------------
def measure_to_dict(mu: DiscreteMeasure) -> dict:
    return {
        "alphabet_size": mu.space.alphabet_size,
        "dimension": mu.space.dimension,
        "atoms": [{"word": list(w), "mass": m} for w, m in mu.atoms.items()],
    }


def measure_from_dict(data: dict) -> DiscreteMeasure:
    """Build a measure from its JSON dict, rejecting bad fields with their path."""
    for key in ("alphabet_size", "dimension", "atoms"):
        if key not in data:
            raise MeasureError(f"missing field '{key}'")
    try:
        space = ProductSpace(int(data["alphabet_size"]), int(data["dimension"]))
    except (TypeError, ValueError) as exc:
        raise MeasureError(f"alphabet_size/dimension: {exc}") from exc
    atoms: dict[Word, float] = {}
    for i, entry in enumerate(data["atoms"]):
        if not isinstance(entry, dict) or "word" not in entry or "mass" not in entry:
            raise MeasureError(f"atoms[{i}]: expected object with 'word' and 'mass'")
        word = entry["word"]
        if (not isinstance(word, list) or len(word) != space.dimension
                or not all(isinstance(s, int) for s in word)):
            raise MeasureError(f"atoms[{i}].word: expected {space.dimension} integers")
        word = tuple(word)
        if not space.contains(word):
            raise MeasureError(
                f"atoms[{i}].word: symbol out of range [0,{space.alphabet_size})")
        mass = entry["mass"]
        if not isinstance(mass, (int, float)) or mass < 0:
            raise MeasureError(f"atoms[{i}].mass: expected nonnegative number")
        if word in atoms:
            raise MeasureError(f"atoms[{i}].word: duplicate word {list(word)}")
        atoms[word] = float(mass)
    try:
        return DiscreteMeasure(space, atoms)
    except MeasureError as exc:
        raise MeasureError(f"atoms: {exc}") from exc


def load_measure(path: str) -> DiscreteMeasure:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeasureError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return measure_from_dict(data)
    except MeasureError as exc:
        raise MeasureError(f"{path}: {exc}") from exc


def dump_measure(mu: DiscreteMeasure, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(measure_to_dict(mu), fh, indent=1, sort_keys=True)
        fh.write("\n")
