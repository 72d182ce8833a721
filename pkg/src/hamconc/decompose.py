"""Constructive decomposition pipelines.

``decrement_step`` splits a non-concentrated measure by a Gibbs-tilted binary
fuzzy partition; ``decrement_recursion`` iterates it until the still-splittable
mass is small; ``sample_coarsen`` replaces a low-information mixture by a
bounded-size empirical average; ``mixture_decomposition`` chains trimming,
recursion, sampling and lifting into a mixture whose non-bad components carry
budgeted concentration certificates; ``carve_concentrated_set`` extracts one
concentrated set, and ``partition_decomposition`` repeats it into a partition
of the support.

Every split is gated on the exactly computable decrement inequality
(average-DTC drop >= half the mutual information of the split, and the mutual
information >= r^2 n^{-1} e^{-n}); product measures can never pass the gate,
so they are never split.  All randomness is derived from one seed through
explicit spawn keys, so results are reproducible byte for byte.  Existential
constants are configuration, reported against achieved counts, never asserted.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .measures import (
    DiscreteMeasure,
    FuzzyPartition,
    MeasureError,
    MixtureRepresentation,
    Word,
    condition,
    fuzzy_split,
    marginal,
    mix,
    product_measure,
    reweight,
    tv_distance,
    variation_norm,
)
from .information import (
    dual_total_correlation,
    kl_divergence,
    mixture_mutual_information,
    per_coordinate_entropies,
    shannon_entropy,
    total_correlation,
    trim_coordinates,
)
from .transport import transport_distance
from .concentration import (
    DensityBound,
    Lift,
    RefutationBudget,
    RefutationResult,
    TParams,
    _l_search_candidates,
    concentrate_subset,
    propagate_t_params,
    refute_T,
)

#: desk-scale envelope for the exact pipelines
MAX_ALPHABET = 8
MAX_DIMENSION = 12
MAX_PIPELINE_SUPPORT = 1 << 16


@dataclass(frozen=True)
class PipelineConfig:
    """Tolerances, constants, budgets and the seed for the pipelines.

    The denominators 200/600/1200 and the numerator 100 are the inequality
    constants used by the internal parameter arithmetic; ``c``, ``c_B`` and
    ``c_C`` stand in for the non-constructive existential constants and are
    only reported against.  ``delta_override`` and ``atom_exponent`` replace
    the derived values min(r^2/42, 1/18) and 161 c_B / delta^2; their correct
    joint calibration at small n is unspecified, so they are configuration.
    """

    epsilon: float = 0.3
    r: float = 0.3
    seed: int = 0
    max_iters: int = 64
    max_cells: int = 4096
    c: float = 50.0
    c_B: float = 10.0
    c_C: float = 10.0
    dec_denominator: float = 200.0
    mix_denominator: float = 600.0
    final_denominator: float = 1200.0
    delta_override: float | None = None
    atom_exponent: float | None = None
    carve_retries: int = 16
    budget: RefutationBudget = field(default_factory=RefutationBudget)
    split_budget: RefutationBudget = field(
        default_factory=lambda: RefutationBudget(restarts=2, max_grad_steps=15))
    sample_start: int = 64
    sample_cap: int = 1 << 18
    approx_transport: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0) or not (0.0 < self.r < 1.0):
            raise MeasureError("epsilon and r must lie in (0,1)")
        if self.max_iters < 1 or self.max_cells < 1:
            raise MeasureError("iteration caps must be >= 1")

    @property
    def delta(self) -> float:
        if self.delta_override is not None:
            return self.delta_override
        return min(self.r * self.r / 42.0, 1.0 / 18.0)

    def atom_threshold_exponent(self) -> float:
        if self.atom_exponent is not None:
            return self.atom_exponent
        d = self.delta
        return 161.0 * self.c_B / (d * d)

    def spawned_budget(self, base: RefutationBudget, *key: int) -> RefutationBudget:
        child = int(np.random.SeedSequence(self.seed, spawn_key=key)
                    .generate_state(1)[0])
        return replace(base, seed=child)

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def to_dict(self) -> dict:
        out = {
            "epsilon": self.epsilon, "r": self.r, "seed": self.seed,
            "max_iters": self.max_iters, "max_cells": self.max_cells,
            "c": self.c, "c_B": self.c_B, "c_C": self.c_C,
            "dec_denominator": self.dec_denominator,
            "mix_denominator": self.mix_denominator,
            "final_denominator": self.final_denominator,
            "delta": self.delta,
            "carve_retries": self.carve_retries,
            "approx_transport": self.approx_transport,
        }
        if self.delta_override is not None:
            out["delta_override"] = self.delta_override
        if self.atom_exponent is not None:
            out["atom_exponent"] = self.atom_exponent
        return out


@dataclass(frozen=True)
class DecompositionResult:
    """A mixture or support partition with per-component certificates and audit."""

    kind: str  # "mixture" | "partition"
    weights: tuple[float, ...]
    components: tuple[DiscreteMeasure | None, ...]
    sets: tuple[tuple[Word, ...], ...] | None
    bad_index: int | None
    certificates: tuple[RefutationResult | None, ...]
    certificate_params: tuple[TParams | None, ...]
    truncated: bool
    audit: dict

    @property
    def bad_mass(self) -> float:
        return self.weights[self.bad_index] if self.bad_index is not None else 0.0

    def good_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.weights)) if i != self.bad_index)

    def reconstruct(self) -> DiscreteMeasure:
        pairs = [(w, c) for w, c in zip(self.weights, self.components)
                 if c is not None and w > 0.0]
        rep = MixtureRepresentation(
            tuple(w / sum(p[0] for p in pairs) for w, _ in pairs),
            tuple(c for _, c in pairs))
        return mix(rep)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "weights": list(self.weights),
            "bad_index": self.bad_index,
            "truncated": self.truncated,
            "components": [
                None if c is None else
                [[list(w), m] for w, m in c.atoms.items()]
                for c in self.components
            ],
            "certificates": [None if c is None else c.to_dict()
                             for c in self.certificates],
            "certificate_params": [
                None if p is None else {"kappa": p.kappa, "r": p.r}
                for p in self.certificate_params
            ],
            "audit": self.audit,
        }
        if self.sets is not None:
            out["sets"] = [[list(w) for w in cell] for cell in self.sets]
        return out


def _check_envelope(mu: DiscreteMeasure, cfg: PipelineConfig) -> None:
    if cfg.approx_transport:
        return
    if (mu.space.alphabet_size > MAX_ALPHABET
            or mu.space.dimension > MAX_DIMENSION
            or len(mu) > MAX_PIPELINE_SUPPORT):
        raise MeasureError(
            "input exceeds the exact pipeline envelope "
            f"(|A|<={MAX_ALPHABET}, n<={MAX_DIMENSION}, "
            f"support<={MAX_PIPELINE_SUPPORT}); "
            "set PipelineConfig.approx_transport=True to proceed approximately")


def _map_indexed(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -----------------------------------------------------------------------------
# Decrement machinery
# -----------------------------------------------------------------------------
def _decrement_checks(mu: DiscreteMeasure, fp: FuzzyPartition, r: float,
                      i_floor: float | None = None) -> tuple[bool, dict]:
    """Exact evaluation of the split inequalities: average-DTC drop >= I/2 and
    I above the information floor.

    The floor is max of the asymptotic bound r^2 n^{-1} e^{-n} and an optional
    significance floor; without the latter, measures with any residual
    correlation would admit endless micro-splits at small n.
    """
    n = mu.space.dimension
    rep = fuzzy_split(mu, fp)
    if len(rep) < 2:
        return False, {"reason": "degenerate split"}
    info = mixture_mutual_information(rep, mu)
    drop = dual_total_correlation(mu) - sum(
        p * dual_total_correlation(c) for p, c in zip(rep.weights, rep.components))
    floor = r * r * math.exp(-n) / n
    if i_floor is not None:
        floor = max(floor, i_floor)
    ok = (drop >= 0.5 * info - 1e-8) and (info >= floor - 1e-12)
    return ok, {"information": info, "decrement": drop, "floor": floor}


def decrement_step(mu: DiscreteMeasure, r: float,
                   budget: RefutationBudget | None = None,
                   i_floor: float | None = None,
                   dtc_fraction: float = 0.1
                   ) -> FuzzyPartition | None:
    """One splitting step: search for a tilt witness and return the binary
    fuzzy partition (e^{-t f}/2, 1 - e^{-t f}/2) when the split passes the
    exact decrement checks; None otherwise (always None on product measures,
    whose average-DTC drop can never reach half the split information).

    ``i_floor`` defaults to r^2/(4n), and the split must also carry at least
    ``dtc_fraction`` of the measure's dual correlation: significance levels
    below which a split is treated as noise at small n, keeping the recursion
    from chasing vanishing decrements.
    """
    if not (0.0 < r < 1.0):
        raise MeasureError(f"r must lie in (0,1), got {r}")
    if len(mu.support) == 1:
        return None
    n = mu.space.dimension
    if i_floor is None:
        i_floor = r * r / (4.0 * n)
    dtc = dual_total_correlation(mu)
    i_floor = max(i_floor, dtc_fraction * dtc)
    if 2.0 * dtc < i_floor - 1e-12:
        # the drop inequality caps any split's information at 2 DTC
        return None
    budget = budget or RefutationBudget(restarts=2, max_grad_steps=15)
    kappa = r * n / 200.0
    # allow tilts strong enough to cleanly separate the lightest atom
    min_mass = min(mu.atoms.values())
    t_hi = min(max(kappa, r / 2.0, math.log(1.0 / min_mass) + 6.0), 50.0)
    candidates = _l_search_candidates(mu, r, kappa, budget, t_hi=t_hi,
                                      t_points=10)
    # the decrement gate favours informative tilts, not the raw score margin
    candidates = sorted(candidates, key=lambda c: -c[3])
    slate = [(fm, t) for _, fm, t, _, _ in candidates[:6]]
    # plus the plain anchor separators, which divergence ascent tends to
    # sharpen past the point of a balanced split
    masses = {w: m for w, m in mu.atoms.items()}
    anchors = sorted(mu.support, key=lambda w: (-masses[w], w))[:2]
    t_coarse = np.exp(np.linspace(math.log(max(r / 2.0, 0.25)),
                                  math.log(max(t_hi, 1.0)), 6))
    for anchor in anchors:
        fm = {w: min(sum(a != b for a, b in zip(w, anchor)) / n, 1.0)
              for w in mu.support}
        for t in t_coarse:
            slate.append((fm, float(t)))
    # among passing candidates keep the one consuming the most correlation
    best = None
    best_drop = -math.inf
    for fm, t in slate:
        rho1 = {w: 0.5 * math.exp(-t * v) for w, v in fm.items()}
        rho2 = {w: 1.0 - rho1[w] for w in rho1}
        fp = FuzzyPartition(mu.space, (rho1, rho2))
        ok, chk = _decrement_checks(mu, fp, r, i_floor)
        if ok and chk["decrement"] > best_drop:
            best, best_drop = fp, chk["decrement"]
    return best


def decrement_recursion(mu: DiscreteMeasure, cfg: PipelineConfig,
                        *, r: float | None = None, epsilon: float | None = None
                        ) -> tuple[FuzzyPartition, dict]:
    """Iterated splitting of ``mu`` until the still-splittable mass is < epsilon.

    Returns the final fuzzy partition (bad cell first when present) and an
    audit ledger with the per-step information growth and decrement totals.

    A component joins the bad cell when it still admitted a split at the
    natural stop, or when it is refuted by the budgeted inequality test at the
    round cap.  Split availability alone does not disqualify a component:
    strongly correlated but concentrated measures (block codes, subgroup laws)
    admit decrement splits indefinitely, and for those the budgeted refutation
    is the operative notion of failure.  The ``truncated`` flag is raised only
    when the round cap leaves a bad cell at or above epsilon; hitting the cap
    itself is recorded as ``cap_hit``.
    """
    r = cfg.r if r is None else r
    epsilon = cfg.epsilon if epsilon is None else epsilon
    support = mu.support

    # each entry: density over supp(mu); status is "firing" (a split passed),
    # "concentrated" (no split within budget), or "bad" (firing at stop time);
    # fire-status is evaluated once per component and cached, and exactly one
    # component (the heaviest firing one) is split per round.
    densities: list[dict[Word, float]] = [{w: 1.0 for w in support}]
    splits_found: list[FuzzyPartition | None] = [None]
    status = ["unknown"]
    audit: dict = {"rounds": [], "truncated": False}
    total_decrement = 0.0

    def weight_of(dens: Mapping[Word, float]) -> float:
        return sum(dens.get(w, 0.0) * m for w, m in mu.atoms.items())

    def evaluate(idx: int, round_no: int) -> None:
        dens = densities[idx]
        if weight_of(dens) <= 1e-14:
            status[idx] = "concentrated"
            return
        comp = reweight(mu, dens)
        fp = decrement_step(
            comp, r, cfg.spawned_budget(cfg.split_budget, 1, round_no, idx))
        splits_found[idx] = fp
        status[idx] = "concentrated" if fp is None else "firing"

    stalled = False
    history: list[float] = []
    for round_no in range(cfg.max_iters):
        for idx in range(len(densities)):
            if status[idx] == "unknown":
                evaluate(idx, round_no)
        firing = [i for i, st in enumerate(status) if st == "firing"]
        firing_mass = sum(weight_of(densities[i]) for i in firing)
        round_entry = {"round": round_no, "firing_mass": firing_mass,
                       "splits": []}
        history.append(firing_mass)
        if firing_mass < epsilon or not firing:
            for idx in firing:
                status[idx] = "bad"
            audit["rounds"].append(round_entry)
            break
        if len(history) > 8 and firing_mass >= 0.98 * history[-9]:
            # self-similar grind: splits fire but the splittable mass does not
            # drain; route the leftovers through the refutation test instead
            stalled = True
            audit["rounds"].append(round_entry)
            break
        idx = max(firing, key=lambda i: (weight_of(densities[i]), -i))
        dens = densities[idx]
        weight = weight_of(dens)
        comp = reweight(mu, dens)
        fp = splits_found[idx]
        ok, chk = _decrement_checks(comp, fp, r)
        total_decrement += weight * chk["decrement"]
        round_entry["splits"].append(
            {"component": idx, "weight": weight,
             "information": chk["information"],
             "decrement": chk["decrement"]})
        children = []
        for sigma in fp.densities:
            child = {w: dens[w] * sigma.get(w, 0.5) for w in support}
            children.append(child)
        densities[idx] = children[0]
        status[idx] = "unknown"
        splits_found[idx] = None
        densities.append(children[1])
        status.append("unknown")
        splits_found.append(None)
        audit["rounds"].append(round_entry)
    else:
        stalled = True
    if stalled:
        # round cap or stall: still-splittable components are kept only if the
        # budgeted refutation test actually refutes them
        audit["cap_hit"] = True
        n = mu.space.dimension
        params = TParams(max(r * n / 200.0, 1e-9), r)
        refuted_mass = 0.0
        for idx, st in enumerate(status):
            if st not in ("unknown", "firing"):
                continue
            weight = weight_of(densities[idx])
            if weight <= 1e-14:
                status[idx] = "concentrated"
                continue
            comp = reweight(mu, densities[idx])
            check = refute_T(comp, params,
                             cfg.spawned_budget(
                                 replace(cfg.budget, max_subsets=512), 10, idx))
            if check.refuted:
                status[idx] = "bad"
                refuted_mass += weight
            else:
                status[idx] = "concentrated"
        audit["truncated"] = refuted_mass >= epsilon

    audit.setdefault("cap_hit", False)
    bad = [d for d, st in zip(densities, status) if st == "bad"]
    good = [d for d, st in zip(densities, status) if st != "bad"]
    final: list[dict[Word, float]] = []
    if bad:
        merged: dict[Word, float] = {w: 0.0 for w in support}
        for d in bad:
            for w, v in d.items():
                merged[w] += v
        final.append(merged)
    final.extend(good)
    fp_final = FuzzyPartition(mu.space, tuple(final))
    audit["bad_present"] = bool(bad)
    audit["total_decrement"] = total_decrement
    audit["final_cells"] = len(final)
    rep = fuzzy_split(mu, fp_final)
    audit["final_information"] = mixture_mutual_information(rep, mu)
    audit["dtc"] = dual_total_correlation(mu)
    return fp_final, audit


# -----------------------------------------------------------------------------
# Sampling coarsening
# -----------------------------------------------------------------------------
def _sample_coarsen_detail(mu: DiscreteMeasure, rep: MixtureRepresentation,
                           good_set: Sequence[int], epsilon: float,
                           seed: int, *, start: int = 64, cap: int = 1 << 18
                           ) -> tuple[MixtureRepresentation, tuple[int, ...], dict]:
    if not (0.0 < epsilon < 0.5):
        raise MeasureError("epsilon must lie in (0, 1/2)")
    good = sorted(set(int(g) for g in good_set))
    if not good:
        raise MeasureError("good set is empty")
    weights = np.array(rep.weights)
    good_mass = float(weights[good].sum())
    if good_mass <= 1.0 - epsilon / 2.0:
        raise MeasureError(
            f"good-set mass {good_mass} does not exceed 1 - epsilon/2")

    info = mixture_mutual_information(rep, mu)
    # truncation of the density kernel: analysis device, recorded as diagnostics
    f_cap = math.exp(min(8.0 * (info + 1.0) / epsilon, 700.0))
    trunc_mass = 0.0
    for p, comp in zip(rep.weights, rep.components):
        for w, m in comp.atoms.items():
            ratio = m / mu.mass(w)
            if ratio > f_cap:
                trunc_mass += p * (m - f_cap * mu.mass(w))
    exponent = 16.0 * (info + 1.0) / epsilon
    m_star = math.inf if exponent > 700 else math.ceil(
        16.0 / (epsilon * epsilon) * math.exp(exponent))

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    good_weights = weights[good] / good_mass
    m = start
    best_tv = math.inf
    diag = {"information": info, "truncation_cap": f_cap,
            "truncated_mass": trunc_mass, "m_star": m_star}
    while True:
        m_eff = int(min(m, m_star if m_star != math.inf else m, cap))
        draws = rng.choice(len(weights), size=m_eff, p=weights)
        draws = [int(d) if int(d) in good else
                 int(rng.choice(good, p=good_weights)) for d in draws]
        counts: dict[int, int] = {}
        for d in draws:
            counts[d] = counts.get(d, 0) + 1
        idx = sorted(counts)
        emp = MixtureRepresentation(
            tuple(counts[i] / m_eff for i in idx),
            tuple(rep.components[i] for i in idx))
        err = variation_norm(mix(emp), mu)
        best_tv = min(best_tv, err)
        if err < 3.0 * epsilon:
            diag.update({"m": m_eff, "unique": len(idx), "variation": err})
            return emp, tuple(idx), diag
        if m_eff >= min(cap, m_star):
            raise BudgetExhausted(
                f"sampling cap {m_eff} exhausted; best variation {best_tv}")
        m *= 2


def sample_coarsen(mu: DiscreteMeasure, rep: MixtureRepresentation,
                   good_set: Sequence[int], epsilon: float, seed: int
                   ) -> MixtureRepresentation:
    """Empirical coarsening of a mixture: i.i.d. index draws (bad-set draws
    replaced by good-set redraws), doubling the sample size from 64 until the
    empirical average matches ``mu`` within 3 epsilon in variation norm."""
    out, _, _ = _sample_coarsen_detail(mu, rep, good_set, epsilon, seed)
    return out


# -----------------------------------------------------------------------------
# Mixture pipeline
# -----------------------------------------------------------------------------
def mixture_decomposition(mu: DiscreteMeasure, cfg: PipelineConfig
                          ) -> DecompositionResult:
    """Decompose ``mu`` into a mixture with a small bad cell and budgeted
    concentration certificates on every other component.

    Pipeline: trim coordinates to control the dual correlation, run the
    decrement recursion and the sampling coarsening on the projection, reweight
    against the reconstruction residual, lift the densities back to all
    coordinates, then certify each component at the exactly propagated
    parameters (density bound, then lift).
    """
    _check_envelope(mu, cfg)
    n = mu.space.dimension
    tc = total_correlation(mu)

    retained = trim_coordinates(mu, cfg.r)
    a_frac = 1.0 - len(retained) / n
    mu_s = marginal(mu, retained) if len(retained) < n else mu
    m_dim = mu_s.space.dimension
    dtc_s = dual_total_correlation(mu_s)

    # internal tolerances: the component inequalities below compound to a bad
    # cell below cfg.epsilon and a final radius of order cfg.r.  The recursion
    # runs at epsilon/10 (the squared-tolerance schedule of the asymptotic
    # argument forces unboundedly many rounds at small n); the sampling
    # tolerance adapts to the bad mass the recursion actually achieved, and
    # the final bad-cell mass is accounted exactly either way.
    r_dec = cfg.r * cfg.dec_denominator / cfg.final_denominator
    eps_b = cfg.epsilon / 2.5
    eps_rec = cfg.epsilon / 10.0
    kappa_inner = r_dec * m_dim / cfg.dec_denominator

    audit: dict = {
        "tc": tc, "dtc_trimmed": dtc_s,
        "retained_coordinates": list(retained), "lift_fraction": a_frac,
        "r_internal": r_dec, "epsilon_internal": eps_b,
        "paper_inequality_failures": [],
    }
    bookkeeping = 400.0 * math.log(1.0 / (1.0 - 1.5 * eps_b)) < r_dec * r_dec
    if not bookkeeping:
        audit["paper_inequality_failures"].append(
            "reweight-radius bookkeeping 400 log((1-3e/2)^-1) < r^2")

    fp, dec_audit = decrement_recursion(mu_s, cfg, r=r_dec, epsilon=eps_rec)
    audit["decrement_recursion"] = dec_audit
    rep = fuzzy_split(mu_s, fp)
    bad_present = dec_audit["bad_present"]
    good = list(range(1, len(rep))) if bad_present else list(range(len(rep)))
    bad_rec = rep.weights[0] if bad_present else 0.0
    eps_samp = min(max(eps_b * eps_b, 2.5 * bad_rec, cfg.epsilon / 30.0), 0.49)
    audit["epsilon_sampling"] = eps_samp

    seed_samp = int(np.random.SeedSequence(cfg.seed, spawn_key=(2,))
                    .generate_state(1)[0])
    emp, drawn, samp_diag = _sample_coarsen_detail(
        mu_s, rep, good, eps_samp, seed_samp,
        start=cfg.sample_start, cap=cfg.sample_cap)
    audit["sampling"] = samp_diag

    # reconstruction residual: gamma = mu_s ^ emp atomwise, f = d gamma / d emp
    emp_mix = mix(emp)
    gamma = {w: min(mu_s.mass(w), emp_mix.mass(w)) for w in mu_s.support}
    f_dens = {w: (gamma[w] / emp_mix.mass(w) if emp_mix.mass(w) > 0 else 0.0)
              for w in mu_s.support}
    resid = {w: mu_s.mass(w) - gamma[w] for w in mu_s.support}

    keep_threshold = 1.0 - 1.5 * eps_b
    bad_raw: dict[Word, float] = {w: v for w, v in resid.items() if v > 0.0}
    kept: list[tuple[float, DiscreteMeasure, float]] = []  # weight, comp, M
    for q, comp in zip(emp.weights, emp.components):
        mass_f = sum(f_dens.get(w, 0.0) * m for w, m in comp.atoms.items())
        if mass_f > keep_threshold:
            tilted = reweight(comp, lambda w: f_dens.get(w, 0.0))
            density_bound = max(
                tilted.mass(w) / comp.mass(w) for w in tilted.support)
            kept.append((q * mass_f, tilted, max(density_bound, 1.0)))
        else:
            for w, m in comp.atoms.items():
                val = q * f_dens.get(w, 0.0) * m
                if val > 0.0:
                    bad_raw[w] = bad_raw.get(w, 0.0) + val

    # lift everything back to A^n through densities w.r.t. the projection
    sel = list(retained)

    def lift(raw: Mapping[Word, float]) -> DiscreteMeasure:
        total = sum(raw.values())
        scaled = {z: v / total for z, v in raw.items()}
        if len(retained) == n:
            return DiscreteMeasure.from_unnormalized(mu.space, scaled)
        dens = {z: v / mu_s.mass(z) for z, v in scaled.items()}
        lifted = {w: mu.mass(w) * dens.get(tuple(w[c] for c in sel), 0.0)
                  for w in mu.support}
        return DiscreteMeasure.from_unnormalized(mu.space, lifted)

    weights: list[float] = []
    components: list[DiscreteMeasure | None] = []
    params_list: list[TParams | None] = []
    bad_mass = sum(bad_raw.values())
    bad_index = None
    if bad_mass > 1e-12:
        bad_index = 0
        weights.append(bad_mass)
        components.append(lift(bad_raw))
        params_list.append(None)
    for weight, comp, density_bound in kept:
        weights.append(weight)
        raw = {w: weight * m for w, m in comp.atoms.items()}
        components.append(lift(raw))
        p = TParams(kappa_inner, r_dec)
        p = propagate_t_params(p, DensityBound(density_bound))
        p = propagate_t_params(p, Lift(a_frac))
        params_list.append(TParams(p.kappa, min(p.r, 1.0)))

    # normalize float drift in the weights
    total_w = sum(weights)
    weights = [w / total_w for w in weights]

    # certify every non-bad component; refuted ones are routed to the bad cell
    def certify(idx: int) -> RefutationResult | None:
        if idx == bad_index:
            return None
        return refute_T(components[idx], params_list[idx],
                        cfg.spawned_budget(cfg.budget, 3, idx))

    certs = _map_indexed(certify, range(len(weights)), cfg.threads)
    rerouted = [i for i, c in enumerate(certs)
                if c is not None and c.refuted]
    if rerouted:
        audit["rerouted_components"] = rerouted
        new_w, new_c, new_p, new_cert = [], [], [], []
        bad_w = weights[bad_index] if bad_index is not None else 0.0
        bad_raw2: dict[Word, float] = {}
        if bad_index is not None:
            for w, m in components[bad_index].atoms.items():
                bad_raw2[w] = bad_w * m
        for i in rerouted:
            for w, m in components[i].atoms.items():
                bad_raw2[w] = bad_raw2.get(w, 0.0) + weights[i] * m
        bad_w = sum(bad_raw2.values())
        if bad_w > 0.0:
            new_w.append(bad_w)
            new_c.append(DiscreteMeasure.from_unnormalized(mu.space, bad_raw2))
            new_p.append(None)
            new_cert.append(None)
            new_bad = 0
        else:
            new_bad = None
        for i in range(len(weights)):
            if i == bad_index or i in rerouted:
                continue
            new_w.append(weights[i])
            new_c.append(components[i])
            new_p.append(params_list[i])
            new_cert.append(certs[i])
        weights, components, params_list, certs = new_w, new_c, new_p, new_cert
        bad_index = new_bad

    audit["achieved_m"] = len(weights)
    audit["m_bound_reported"] = cfg.c * math.exp(
        min(cfg.c * dtc_s, 700.0)) if cfg.c * dtc_s <= 700 else math.inf
    result = DecompositionResult(
        kind="mixture",
        weights=tuple(weights),
        components=tuple(components),
        sets=None,
        bad_index=bad_index,
        certificates=tuple(certs),
        certificate_params=tuple(params_list),
        truncated=dec_audit["truncated"],
        audit=audit,
    )
    return result


# -----------------------------------------------------------------------------
# Carving and the partition pipeline
# -----------------------------------------------------------------------------
class BudgetExhausted(MeasureError):
    """An adaptive budget (sampling size, retries) ran out; the message carries
    the best value achieved."""


@dataclass(frozen=True)
class CarveResult:
    cell: tuple[Word, ...]
    case: str  # "atom" | "small-tc" | "carve"
    params: TParams
    certificate: RefutationResult
    info: dict


class CarveError(MeasureError):
    """Carving failed; the message lists the inequalities or acceptance tests
    that could not be met, with diagnostics."""


def carve_concentrated_set(mu: DiscreteMeasure, cfg: PipelineConfig,
                           *, _seed_key: tuple[int, ...] = ()) -> CarveResult:
    """Extract one subset V with positive mass whose conditioned measure
    carries a budgeted not-refuted concentration certificate.

    Three routes: a single heavy atom; small total correlation (compare with
    the product of marginals and keep the well-coupled part); otherwise the
    level-set construction (near-flat slice, low-entropy coordinates, one
    concentrated mixture summand, a random subset with inclusion probabilities
    given by its density, and a final trim).  Desk-scale failures of the
    sufficient-n inequalities are recorded in ``info['paper_inequality_failures']``;
    the random acceptance tests retry over fresh seeds and error out with
    diagnostics if they never pass.
    """
    _check_envelope(mu, cfg)
    n = mu.space.dimension
    e_val = total_correlation(mu)
    delta = cfg.delta
    r = cfg.r
    kappa_n = r * n / cfg.final_denominator
    failures: list[str] = []
    info: dict = {"tc": e_val, "delta": delta,
                  "paper_inequality_failures": failures}

    # case 1: a heavy atom (lexicographically first among the heaviest)
    threshold = math.exp(-min(cfg.atom_threshold_exponent() * e_val, 700.0))
    top_mass = max(mu.atoms.values())
    top_word = min(w for w, m in mu.atoms.items() if m == top_mass)
    if top_mass >= threshold:
        cell = (top_word,)
        params = TParams(kappa_n, r)
        cert = refute_T(condition(mu, cell), params,
                        cfg.spawned_budget(cfg.budget, 4, *_seed_key))
        info["atom_threshold"] = threshold
        return CarveResult(cell, "atom", params, cert, info)

    # case 2: small total correlation
    if e_val <= (r ** 4) * n:
        prod = product_measure(
            mu.space, [list(_marginal_vector(mu, i)) for i in range(n)])
        dbar, _ = transport_distance(mu, prod)
        info["dbar_to_product"] = dbar
        if dbar > r * r:
            failures.append("marton distance dbar <= r^2")
        delta_cs = min(math.sqrt(max(dbar, 0.0)) if dbar > r * r else r, 0.124)
        cell, params = concentrate_subset(prod, mu, TParams(8 * r * n, r), delta_cs)
        mass = sum(mu.mass(w) for w in cell)
        if mass < 1.0 - 4.0 * delta_cs - 1e-9 or mass <= 0.0:
            raise CarveError(f"small-tc subset kept mass {mass}; diagnostics {info}")
        params = TParams(params.kappa, min(params.r, 1.0))
        cert = refute_T(condition(mu, cell), params,
                        cfg.spawned_budget(cfg.budget, 5, *_seed_key))
        return CarveResult(tuple(sorted(cell)), "small-tc", params, cert, info)

    # case 3: level sets, low-entropy coordinates, one concentrated summand
    big_m = math.ceil(n * math.log(mu.space.alphabet_size)) if \
        mu.space.alphabet_size > 1 else 1
    h0 = cfg.atom_threshold_exponent() * e_val
    cells: dict[int, list[Word]] = {}
    for w, m in mu.atoms.items():
        j = min(int(math.floor(-math.log(m) - h0)) if m < math.exp(-h0) else 0,
                big_m)
        j = max(j, 0)
        cells.setdefault(j, []).append(w)
    candidates = []
    for j in sorted(cells):
        if j >= big_m:
            continue
        cond_j = condition(mu, cells[j])
        tc_j = total_correlation(cond_j)
        mass_j = sum(mu.mass(w) for w in cells[j])
        if tc_j <= 4.0 * e_val + 1e-9:
            candidates.append((mass_j, -j, j))
    if not candidates:
        raise CarveError(
            f"no level set with TC <= 4 TC(mu); diagnostics {info}")
    mass_p, _, j_star = max(candidates)
    p_words = cells[j_star]
    mu_p = condition(mu, p_words)
    h = h0 + j_star - math.log(1.0 / mass_p)
    info["level_index"] = j_star
    info["level_mass"] = mass_p
    info["h"] = h
    if h < 160.0 * cfg.c_B * e_val / (delta * delta):
        failures.append("flat-slice exponent h >= 160 c_B TC / delta^2")
    if mass_p < 1.0 / (4.0 * big_m):
        failures.append("flat-slice mass >= 1/(4 ceil(n log|A|))")

    m_keep = math.ceil((1.0 - delta) * n)
    if m_keep >= n:
        failures.append("delta n >= 1 (no coordinate can be dropped)")
        m_keep = n - 1
    ents = per_coordinate_entropies(mu_p)
    order = sorted(range(n), key=lambda i: (ents[i], i))
    s_coords = tuple(sorted(order[:m_keep]))
    proj = marginal(mu_p, s_coords)
    q_thresh = math.exp(-(1.0 - delta / 4.0) * h) if h > 0 else 1.0
    q_words = {z for z in proj.support if proj.mass(z) >= q_thresh}
    if not q_words:
        raise CarveError(
            f"high-probability projection set empty at threshold {q_thresh}; "
            f"diagnostics {info}")
    r_words = [w for w in mu_p.support
               if tuple(w[c] for c in s_coords) in q_words]
    nu = condition(mu, r_words)
    mass_r = sum(mu.mass(w) for w in r_words)
    info["kept_coordinates"] = list(s_coords)
    info["r_mass"] = mass_r
    tc_nu = total_correlation(nu)
    if tc_nu > 33.0 * e_val / delta + 1e-9:
        failures.append("TC of sliced measure <= 33 TC / delta")
    for z in sorted(q_words):
        block = [w for w in r_words if tuple(w[c] for c in s_coords) == z]
        bmass = sum(nu.mass(w) for w in block)
        top = max(nu.mass(w) for w in block)
        if top > math.exp(-delta * h / 4.0) * bmass + 1e-12:
            failures.append("within-block flatness (max atom <= e^{-delta h/4} block)")
            break

    inner_cfg = replace(cfg, epsilon=0.5,
                        seed=int(np.random.SeedSequence(
                            cfg.seed, spawn_key=(6,) + _seed_key)
                            .generate_state(1)[0]))
    inner = mixture_decomposition(nu, inner_cfg)
    good = inner.good_indices()
    if not good:
        raise CarveError(f"no certified summand inside the slice; diagnostics {info}")
    pick = max(good, key=lambda i: (inner.weights[i], -i))
    rho_weight = inner.weights[pick]
    comp = inner.components[pick]
    floor = math.exp(-min(33.0 * cfg.c_B * e_val / delta, 700.0)) / (2.0 * cfg.c_B)
    if rho_weight < floor:
        failures.append("summand weight >= e^{-33 c_B TC/delta} / (2 c_B)")
    dens = {w: min(rho_weight * comp.mass(w) / nu.mass(w), 1.0)
            for w in nu.support}
    info["summand_weight"] = rho_weight

    accepted = None
    attempts = []
    for attempt in range(cfg.carve_retries):
        rng = cfg.rng(7, attempt, *_seed_key)
        draw = rng.random(len(nu.support))
        u_words = [w for w, x in zip(nu.support, draw) if x < dens[w]]
        if not u_words:
            attempts.append({"attempt": attempt, "reason": "empty set"})
            continue
        mass_u = sum(nu.mass(w) for w in u_words)
        nu_u = condition(nu, u_words)
        nu_rho = comp
        dd, _ = transport_distance(nu_u, nu_rho)
        ok_mass = abs(mass_u - rho_weight) <= 9.0 * delta * rho_weight + 1e-12
        ok_dist = mass_u * dd <= 21.0 * delta * rho_weight + 1e-12
        attempts.append({"attempt": attempt, "mass": mass_u,
                         "dbar": dd, "ok_mass": ok_mass, "ok_dist": ok_dist})
        if ok_mass and ok_dist:
            accepted = (u_words, nu_u, nu_rho, dd)
            break
    info["random_set_attempts"] = attempts
    if accepted is None:
        raise CarveError(
            f"random subset acceptance failed over {cfg.carve_retries} seeds; "
            f"diagnostics {info}")
    u_words, nu_u, nu_rho, dd = accepted
    if dd > 42.0 * delta + 1e-12:
        failures.append("dbar(nu_U, nu_rho) <= 42 delta")
    delta_cs = math.sqrt(max(dd, 0.0))
    if delta_cs >= 0.125:
        raise CarveError(
            f"trim distance sqrt({dd}) outside [0,1/8); diagnostics {info}")
    cell, params = concentrate_subset(nu_rho, nu_u, TParams(kappa_n, r), delta_cs)
    cell = tuple(sorted(set(cell) & set(u_words))) or tuple(sorted(cell))
    params = TParams(params.kappa, min(params.r, 1.0))
    cert = refute_T(condition(mu, cell), params,
                    cfg.spawned_budget(cfg.budget, 8, *_seed_key))
    mass_v = sum(mu.mass(w) for w in cell)
    info["cell_mass"] = mass_v
    floor_v = math.exp(-min(cfg.c * e_val, 700.0))
    info["mass_floor_reported"] = floor_v
    if mass_v <= 0.0:
        raise CarveError(f"carved cell has zero mass; diagnostics {info}")
    return CarveResult(cell, "carve", params, cert, info)


def _marginal_vector(mu: DiscreteMeasure, i: int) -> list[float]:
    vec = [0.0] * mu.space.alphabet_size
    for w, m in mu.atoms.items():
        vec[w[i]] += m
    return vec


def partition_decomposition(mu: DiscreteMeasure, cfg: PipelineConfig
                            ) -> DecompositionResult:
    """Partition the support of ``mu`` into cells whose conditioned measures
    carry budgeted concentration certificates, plus one residual cell of mass
    below epsilon.

    Repeatedly carves a concentrated set out of the conditioned remainder.
    The residual cell is index 0; cells are otherwise in carving order.
    """
    _check_envelope(mu, cfg)
    tc = total_correlation(mu)
    remaining = set(mu.support)
    cells: list[tuple[Word, ...]] = []
    carve_infos: list[dict] = []
    params_list: list[TParams] = []
    certs: list[RefutationResult] = []
    truncated = False
    step = 0
    while True:
        mass_w = sum(mu.mass(w) for w in remaining)
        if mass_w < cfg.epsilon or not remaining:
            break
        if step >= cfg.max_cells:
            truncated = True
            break
        cond_w = condition(mu, remaining)
        carve = carve_concentrated_set(cond_w, cfg, _seed_key=(step,))
        cell = tuple(sorted(set(carve.cell) & remaining))
        if not cell:
            raise CarveError("carved cell does not intersect the remainder")
        cells.append(cell)
        carve_infos.append({"case": carve.case, **carve.info})
        params_list.append(carve.params)
        certs.append(carve.certificate)
        remaining -= set(cell)
        step += 1

    residual = tuple(sorted(remaining))
    weights = [sum(mu.mass(w) for w in residual)]
    components: list[DiscreteMeasure | None] = [
        condition(mu, residual) if weights[0] > 0.0 else None]
    sets: list[tuple[Word, ...]] = [residual]
    out_params: list[TParams | None] = [None]
    out_certs: list[RefutationResult | None] = [None]
    for cell, params, cert in zip(cells, params_list, certs):
        weights.append(sum(mu.mass(w) for w in cell))
        components.append(condition(mu, cell))
        sets.append(cell)
        out_params.append(params)
        out_certs.append(cert)

    audit = {
        "tc": tc,
        "achieved_m": len(sets),
        "m_bound_reported": cfg.c * math.exp(min(cfg.c * tc, 700.0)),
        "carves": carve_infos,
        "residual_mass": weights[0],
    }
    return DecompositionResult(
        kind="partition",
        weights=tuple(weights),
        components=tuple(components),
        sets=tuple(sets),
        bad_index=0,
        certificates=tuple(out_certs),
        certificate_params=tuple(out_params),
        truncated=truncated,
        audit=audit,
    )
