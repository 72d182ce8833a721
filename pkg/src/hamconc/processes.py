"""Stationary finite-state process generators and their block statistics.

Process specifications are small declarative records (i.i.d., Markov, hidden
Markov with a deterministic letter map, expansive block codes, and joint
processes over a product alphabet).  Exact window laws come from forward
dynamic programming over (state, emitted word) with mass pruning; empirical
laws from seeded path simulation with sliding windows.  On top of these sit
the conditional block statistics: block kernels, total-correlation profiles,
relative transportation estimates between joints sharing a base marginal,
block-independence gaps, and per-conditioning-string partitions.

Zero-probability conditioning strings map to the uniform measure: the
conditional law there is arbitrary, and uniform is the deterministic choice.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .measures import (
    DEFAULT_SUPPORT_CAP,
    DiscreteMeasure,
    MeasureError,
    ProductSpace,
    Word,
    marginal,
    mix,
    MixtureRepresentation,
    product_measure,
    regroup,
)
from .information import total_correlation
from .transport import transport_distance
from .decompose import DecompositionResult, PipelineConfig, partition_decomposition

STATIONARY_TOL = 1e-10
ROW_TOL = 1e-12


# -----------------------------------------------------------------------------
# Specifications
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ProcessSpec:
    """Base class; every spec exposes its output alphabet size."""

    @property
    def alphabet_size(self) -> int:  # pragma: no cover - overridden
        raise NotImplementedError


@dataclass(frozen=True)
class IIDSpec(ProcessSpec):
    dist: tuple[float, ...]

    def __post_init__(self) -> None:
        d = tuple(float(p) for p in self.dist)
        if any(p < 0 for p in d) or abs(sum(d) - 1.0) > ROW_TOL:
            raise MeasureError("iid distribution must be a probability vector")
        object.__setattr__(self, "dist", d)

    @property
    def alphabet_size(self) -> int:
        return len(self.dist)


@dataclass(frozen=True)
class MarkovSpec(ProcessSpec):
    """An irreducible-enough chain started from its stationary law."""

    transition: tuple[tuple[float, ...], ...]
    stationary: tuple[float, ...]

    def __post_init__(self) -> None:
        t = tuple(tuple(float(x) for x in row) for row in self.transition)
        pi = tuple(float(x) for x in self.stationary)
        k = len(t)
        if any(len(row) != k for row in t) or len(pi) != k:
            raise MeasureError("transition matrix must be square, matching stationary")
        for row in t:
            if any(x < 0 for x in row) or abs(sum(row) - 1.0) > ROW_TOL:
                raise MeasureError("transition rows must be stochastic")
        flow = [sum(pi[i] * t[i][j] for i in range(k)) for j in range(k)]
        if max(abs(flow[j] - pi[j]) for j in range(k)) > STATIONARY_TOL:
            raise MeasureError("law is not stationary for the transition matrix")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "stationary", pi)

    @classmethod
    def from_matrix(cls, transition: Sequence[Sequence[float]]) -> "MarkovSpec":
        """Compute the stationary law by eigen decomposition."""
        p = np.asarray(transition, dtype=float)
        vals, vecs = np.linalg.eig(p.T)
        idx = int(np.argmin(np.abs(vals - 1.0)))
        pi = np.real(vecs[:, idx])
        pi = np.abs(pi) / np.abs(pi).sum()
        # polish to machine precision
        for _ in range(64):
            pi = pi @ p
        pi /= pi.sum()
        return cls(tuple(tuple(row) for row in p), tuple(pi))

    @property
    def alphabet_size(self) -> int:
        return len(self.transition)


@dataclass(frozen=True)
class HiddenSpec(ProcessSpec):
    """Markov base with a deterministic per-state output letter."""

    base: MarkovSpec
    emit: tuple[int, ...]

    def __post_init__(self) -> None:
        emit = tuple(int(e) for e in self.emit)
        if len(emit) != self.base.alphabet_size or min(emit) < 0:
            raise MeasureError("emit map must assign a letter to every state")
        object.__setattr__(self, "emit", emit)

    @property
    def alphabet_size(self) -> int:
        return max(self.emit) + 1


@dataclass(frozen=True)
class BlockCodeSpec(ProcessSpec):
    """Non-overlapping window code: every ``window`` base letters emit
    ``out_len`` output letters through ``code``."""

    base: ProcessSpec
    window: int
    out_len: int
    code: Mapping[Word, Word]
    out_alphabet: int

    def __post_init__(self) -> None:
        if self.window < 1 or self.out_len < 1:
            raise MeasureError("window and out_len must be >= 1")
        table = {tuple(k): tuple(v) for k, v in dict(self.code).items()}
        for k, v in table.items():
            if len(k) != self.window or len(v) != self.out_len:
                raise MeasureError("code table arity mismatch")
            if any(s < 0 or s >= self.out_alphabet for s in v):
                raise MeasureError("code output letter out of range")
        object.__setattr__(self, "code", table)

    @property
    def alphabet_size(self) -> int:
        return self.out_alphabet


@dataclass(frozen=True)
class JointSpec(ProcessSpec):
    """A single law over (B x A)^Z given by a base spec on the product
    alphabet; symbol b*a_size + a encodes the pair (b, a)."""

    base: ProcessSpec
    b_size: int
    a_size: int

    def __post_init__(self) -> None:
        if self.base.alphabet_size > self.b_size * self.a_size:
            raise MeasureError("joint base alphabet exceeds b_size * a_size")

    @property
    def alphabet_size(self) -> int:
        return self.b_size * self.a_size

    def split_word(self, word: Word) -> tuple[Word, Word]:
        b = tuple(s // self.a_size for s in word)
        a = tuple(s % self.a_size for s in word)
        return b, a


@dataclass(frozen=True)
class BlockKernel:
    """Conditional window law of one process given another's window."""

    n: int
    base: DiscreteMeasure            # law of the conditioning window
    kernel: Mapping[Word, DiscreteMeasure]

    def conditional(self, b: Word) -> DiscreteMeasure:
        b = tuple(b)
        if b in self.kernel:
            return self.kernel[b]
        # zero-probability conditioning string: deterministic uniform choice
        space = next(iter(self.kernel.values())).space
        return _uniform_cube(space)


def _uniform_cube(space: ProductSpace) -> DiscreteMeasure:
    return product_measure(
        space, [[1.0 / space.alphabet_size] * space.alphabet_size])


# -----------------------------------------------------------------------------
# Exact block laws by forward dynamic programming
# -----------------------------------------------------------------------------
def exact_block_measure(spec: ProcessSpec, n: int,
                        cap: int = DEFAULT_SUPPORT_CAP) -> DiscreteMeasure:
    """Exact law of a length-``n`` output window."""
    if n < 1:
        raise MeasureError("window length must be >= 1")
    if isinstance(spec, IIDSpec):
        space = ProductSpace(spec.alphabet_size, n)
        return product_measure(space, [list(spec.dist)], cap=cap)
    if isinstance(spec, MarkovSpec):
        return _dp_block(spec.stationary, spec.transition,
                         tuple(range(spec.alphabet_size)), spec.alphabet_size,
                         n, cap)
    if isinstance(spec, HiddenSpec):
        return _dp_block(spec.base.stationary, spec.base.transition,
                         spec.emit, spec.alphabet_size, n, cap)
    if isinstance(spec, BlockCodeSpec):
        k = -(-n // spec.out_len)  # windows needed to cover n letters
        base_law = exact_block_measure(spec.base, k * spec.window, cap=cap)
        space = ProductSpace(spec.out_alphabet, n)
        out: dict[Word, float] = {}
        for word, mass in base_law.atoms.items():
            enc: list[int] = []
            for i in range(k):
                chunk = word[i * spec.window:(i + 1) * spec.window]
                if chunk not in spec.code:
                    raise MeasureError(f"code table missing input {chunk}")
                enc.extend(spec.code[chunk])
            key = tuple(enc[:n])
            out[key] = out.get(key, 0.0) + mass
        return DiscreteMeasure.from_unnormalized(space, out)
    if isinstance(spec, JointSpec):
        return exact_block_measure(spec.base, n, cap=cap)
    raise MeasureError(f"unknown spec {spec!r}")


def _dp_block(start: Sequence[float], transition, emit: Sequence[int],
              out_alpha: int, n: int, cap: int) -> DiscreteMeasure:
    """Forward DP over (state, emitted word); prunes mass below 1e-15."""
    k = len(start)
    # state maps: word -> vector of per-state masses
    layer: dict[Word, np.ndarray] = {}
    for s in range(k):
        if start[s] <= 0.0:
            continue
        key = (emit[s],)
        vec = layer.setdefault(key, np.zeros(k))
        vec[s] += start[s]
    for _ in range(1, n):
        nxt: dict[Word, np.ndarray] = {}
        for word, vec in layer.items():
            for s2 in range(k):
                mass = sum(vec[s1] * transition[s1][s2] for s1 in range(k))
                if mass <= 1e-15:
                    continue
                key = word + (emit[s2],)
                tgt = nxt.setdefault(key, np.zeros(k))
                tgt[s2] += mass
        if len(nxt) > cap:
            raise MeasureError(
                f"window support exceeds cap {cap}; "
                "use empirical_block_measure instead")
        layer = nxt
    space = ProductSpace(out_alpha, n)
    return DiscreteMeasure.from_unnormalized(
        space, {w: float(v.sum()) for w, v in layer.items()})


# -----------------------------------------------------------------------------
# Simulation and empirical laws
# -----------------------------------------------------------------------------
def simulate_path(spec: ProcessSpec, length: int, seed: int) -> list[int]:
    """One sampled output path, deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if isinstance(spec, IIDSpec):
        return [int(x) for x in rng.choice(len(spec.dist), size=length,
                                           p=spec.dist)]
    if isinstance(spec, (MarkovSpec, HiddenSpec)):
        base = spec if isinstance(spec, MarkovSpec) else spec.base
        emit = (tuple(range(base.alphabet_size))
                if isinstance(spec, MarkovSpec) else spec.emit)
        k = base.alphabet_size
        rows = [np.array(row) for row in base.transition]
        state = int(rng.choice(k, p=base.stationary))
        out = [emit[state]]
        for _ in range(length - 1):
            state = int(rng.choice(k, p=rows[state]))
            out.append(emit[state])
        return out
    if isinstance(spec, BlockCodeSpec):
        k = -(-length // spec.out_len)
        base_path = simulate_path(spec.base, k * spec.window, seed)
        out: list[int] = []
        for i in range(k):
            chunk = tuple(base_path[i * spec.window:(i + 1) * spec.window])
            out.extend(spec.code[chunk])
        return out[:length]
    if isinstance(spec, JointSpec):
        return simulate_path(spec.base, length, seed)
    raise MeasureError(f"unknown spec {spec!r}")


def empirical_block_measure(spec: ProcessSpec, n: int, length: int,
                            seed: int) -> DiscreteMeasure:
    """Sliding-window frequencies along one simulated path."""
    if length < n:
        raise MeasureError("path length must be at least the window length")
    path = simulate_path(spec, length, seed)
    counts: dict[Word, float] = {}
    for i in range(length - n + 1):
        w = tuple(path[i:i + n])
        counts[w] = counts.get(w, 0.0) + 1.0
    space = ProductSpace(spec.alphabet_size, n)
    return DiscreteMeasure.from_unnormalized(space, counts)


# -----------------------------------------------------------------------------
# Block kernels and derived statistics
# -----------------------------------------------------------------------------
def block_kernel(spec: JointSpec, n: int,
                 cap: int = DEFAULT_SUPPORT_CAP) -> BlockKernel:
    """Conditional law of the A-window given the B-window of a joint process."""
    if not isinstance(spec, JointSpec):
        raise MeasureError("block_kernel needs a joint spec")
    joint = exact_block_measure(spec, n, cap=cap)
    by_b: dict[Word, dict[Word, float]] = {}
    mass_b: dict[Word, float] = {}
    for word, mass in joint.atoms.items():
        b, a = spec.split_word(word)
        by_b.setdefault(b, {})[a] = by_b.get(b, {}).get(a, 0.0) + mass
        mass_b[b] = mass_b.get(b, 0.0) + mass
    a_space = ProductSpace(spec.a_size, n)
    b_space = ProductSpace(spec.b_size, n)
    kernel = {
        b: DiscreteMeasure.from_unnormalized(a_space, atoms)
        for b, atoms in sorted(by_b.items())
    }
    base = DiscreteMeasure(b_space, mass_b)
    return BlockKernel(n, base, kernel)


def hookup_block_kernel(bk: BlockKernel, spec: JointSpec) -> DiscreteMeasure:
    """Rebuild the joint window law from the kernel and its base."""
    out: dict[Word, float] = {}
    for b, mass in bk.base.atoms.items():
        cond = bk.conditional(b)
        for a, p in cond.atoms.items():
            word = tuple(bb * spec.a_size + aa for bb, aa in zip(b, a))
            out[word] = mass * p
    space = ProductSpace(spec.alphabet_size, bk.n)
    return DiscreteMeasure(space, out)


def tc_profile(spec: ProcessSpec, n_max: int, block_size: int | None = None,
               cap: int = DEFAULT_SUPPORT_CAP) -> list[float]:
    """Total correlation of the window laws for n = 1 .. n_max.

    With ``block_size`` = L, window kL is viewed as k symbols over the
    L-block alphabet.  For joint specs the value at each n is the
    base-marginal average of the conditional windows' total correlations.
    """
    ell = 1 if block_size is None else int(block_size)
    if ell < 1:
        raise MeasureError("block size must be >= 1")
    out = []
    for k in range(1, n_max + 1):
        window = k * ell
        if isinstance(spec, JointSpec):
            bk = block_kernel(spec, window, cap=cap)
            total = 0.0
            for b, mass in bk.base.atoms.items():
                cond = bk.conditional(b)
                grouped = regroup(cond, ell) if ell > 1 else cond
                total += mass * total_correlation(grouped)
            out.append(total)
        else:
            mu = exact_block_measure(spec, window, cap=cap)
            grouped = regroup(mu, ell) if ell > 1 else mu
            out.append(total_correlation(grouped))
    return out


def relative_dbar_estimate(lam: JointSpec, theta: JointSpec, n: int,
                           cap: int = DEFAULT_SUPPORT_CAP) -> float:
    """Base-averaged transportation distance between the two conditional
    window laws; the n-indexed sequence of these converges to the relative
    distance between the joints, but no single n bounds it either way."""
    bk_l = block_kernel(lam, n, cap=cap)
    bk_t = block_kernel(theta, n, cap=cap)
    from .measures import variation_norm
    if (bk_l.base.space != bk_t.base.space
            or variation_norm(bk_l.base, bk_t.base) > 1e-9):
        raise MeasureError("joint specs do not share the base marginal")
    total = 0.0
    for b, mass in bk_l.base.atoms.items():
        cost, _ = transport_distance(bk_l.conditional(b), bk_t.conditional(b))
        total += mass * cost
    return total


def block_independence_gap(lam: JointSpec, n: int, k: int,
                           cap: int = DEFAULT_SUPPORT_CAP) -> float:
    """Base-averaged distance between the kn-window conditional law and the
    product of its n-window conditional laws along the base string."""
    if k < 1:
        raise MeasureError("k must be >= 1")
    bk_long = block_kernel(lam, k * n, cap=cap)
    bk_short = block_kernel(lam, n, cap=cap)
    total = 0.0
    for b, mass in bk_long.base.atoms.items():
        pieces = [bk_short.conditional(b[j * n:(j + 1) * n]) for j in range(k)]
        prod: dict[Word, float] = {(): 1.0}
        for piece in pieces:
            nxt: dict[Word, float] = {}
            for prefix, pm in prod.items():
                for w, m in piece.atoms.items():
                    val = pm * m
                    if val > 1e-15:
                        nxt[prefix + w] = val
            prod = nxt
        space = ProductSpace(lam.a_size, k * n)
        prod_measure = DiscreteMeasure.from_unnormalized(space, prod)
        cost, _ = transport_distance(bk_long.conditional(b), prod_measure)
        total += mass * cost
    return total


@dataclass(frozen=True)
class ConditionalPartitionReport:
    """Per-conditioning-string partitions of the regrouped window law."""

    n: int
    block_size: int
    good_mass: float
    good_strings: tuple[Word, ...]
    partitions: Mapping[Word, DecompositionResult]
    labels: Mapping[Word, Mapping[Word, str]]   # b-word -> (a-word -> cell code)
    tc_by_string: Mapping[Word, float]
    delta: float


def conditional_partition(lam: JointSpec, n: int, cfg: PipelineConfig,
                          block_size: int = 1,
                          cap: int = DEFAULT_SUPPORT_CAP
                          ) -> ConditionalPartitionReport:
    """Gate conditioning strings by the total correlation of their regrouped
    conditional law (TC <= delta * n) and partition each good conditional.

    The per-string partition is encoded as a labeling of A-words by binary
    cell codes of length n, the combinatorial core of writing the partitions
    as an auxiliary process.
    """
    bk = block_kernel(lam, n, cap=cap)
    delta = cfg.delta
    tc_by_string: dict[Word, float] = {}
    conds: dict[Word, DiscreteMeasure] = {}
    for b in bk.base.support:
        cond = bk.conditional(b)
        grouped = regroup(cond, block_size) if block_size > 1 else cond
        conds[b] = grouped
        tc_by_string[b] = total_correlation(grouped)
    good = tuple(b for b in bk.base.support
                 if tc_by_string[b] <= delta * n + 1e-12)
    good_mass = sum(bk.base.mass(b) for b in good)

    partitions: dict[Word, DecompositionResult] = {}
    labels: dict[Word, dict[Word, str]] = {}
    width = max(n, 1)
    for j, b in enumerate(good):
        sub_cfg = replace(cfg, seed=int(
            np.random.SeedSequence(cfg.seed, spawn_key=(9, j))
            .generate_state(1)[0]))
        res = partition_decomposition(conds[b], sub_cfg)
        partitions[b] = res
        lab: dict[Word, str] = {}
        for cell_idx, cell in enumerate(res.sets):
            code = format(cell_idx, "b").zfill(width)[-width:]
            for word in cell:
                lab[word] = code
        labels[b] = lab
    return ConditionalPartitionReport(
        n=n, block_size=block_size, good_mass=good_mass, good_strings=good,
        partitions=partitions, labels=labels, tc_by_string=tc_by_string,
        delta=delta)


# -----------------------------------------------------------------------------
# JSON spec files
# -----------------------------------------------------------------------------
def spec_from_dict(data: dict) -> ProcessSpec:
    kind = data.get("kind")
    if kind == "iid":
        return IIDSpec(tuple(data["dist"]))
    if kind == "markov":
        if "stationary" in data:
            return MarkovSpec(tuple(tuple(r) for r in data["transition"]),
                              tuple(data["stationary"]))
        return MarkovSpec.from_matrix(data["transition"])
    if kind == "hidden":
        base = spec_from_dict(data["base"])
        if not isinstance(base, MarkovSpec):
            raise MeasureError("hidden spec needs a markov base")
        return HiddenSpec(base, tuple(data["emit"]))
    if kind == "block_code":
        base = spec_from_dict(data["base"])
        table = {tuple(json.loads(f"[{k}]")): tuple(v)
                 for k, v in data["code"].items()}
        return BlockCodeSpec(base, int(data["window"]), int(data["out_len"]),
                             table, int(data["out_alphabet"]))
    if kind == "joint":
        return JointSpec(spec_from_dict(data["base"]),
                         int(data["b_size"]), int(data["a_size"]))
    raise MeasureError(f"unknown process kind {kind!r}")


def spec_to_dict(spec: ProcessSpec) -> dict:
    if isinstance(spec, IIDSpec):
        return {"kind": "iid", "dist": list(spec.dist)}
    if isinstance(spec, MarkovSpec):
        return {"kind": "markov",
                "transition": [list(r) for r in spec.transition],
                "stationary": list(spec.stationary)}
    if isinstance(spec, HiddenSpec):
        return {"kind": "hidden", "base": spec_to_dict(spec.base),
                "emit": list(spec.emit)}
    if isinstance(spec, BlockCodeSpec):
        return {"kind": "block_code", "base": spec_to_dict(spec.base),
                "window": spec.window, "out_len": spec.out_len,
                "out_alphabet": spec.out_alphabet,
                "code": {",".join(str(s) for s in k): list(v)
                         for k, v in sorted(spec.code.items())}}
    if isinstance(spec, JointSpec):
        return {"kind": "joint", "base": spec_to_dict(spec.base),
                "b_size": spec.b_size, "a_size": spec.a_size}
    raise MeasureError(f"unknown spec {spec!r}")


def load_spec(path: str) -> ProcessSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeasureError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return spec_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise MeasureError(f"{path}: {exc}") from exc
