"""Variational-principle verifiers, example-tree generators, and the
randomized property suite.

A VPReport pairs an entropy estimate with constructive witness measures.
Its `measure_side` is the best certified witness exponent over the tested
measures, where each candidate's witness exponent is a depth-normalized
local-entropy statistic chosen so that the easy inequality direction is a
theorem at finite depth, not an empirical observation:

 - covering side: the support floor min over admissible support nodes u of
   -(ln mass(u))/|u|. If the floor exceeded s, every admissible support
   node would have mass below e^(-s |u|), so any admissible cutset would
   have weight sum above the covering gauge e^(s m); hence the floor never
   exceeds the covering critical exponent.
 - packing side: either the level statistic max over admissible depths d of
   min over depth-d support nodes of -(ln mass(u))/d (the full level is an
   admissible antichain of total mass one, pushing the antichain value
   above its gauge e^(s(m-1))), or the same bound witnessed by an explicit
   admissible antichain of total mass one: the final-stage atoms of a
   staged measure, or the normalized optimal antichain selection itself.

Both statistics are therefore provably at most the estimate's upper
bracket, and the constructions keep them within the report tolerance of
the estimate, so `gap` is small for structural reasons. Each candidate
additionally records its tail local-entropy integral as a diagnostic; that
integral carries a +ln(c)/n finite-horizon transient and is not bound by
any invariant.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engines import (
    EntropyEstimate,
    bowen_entropy,
    capacity_entropy,
    max_antichain_value,
    min_cutset_value,
    packing_entropy,
    weighted_cover_value,
)
from .errors import DomainError
from .kernels import logsumexp
from .measures import (
    RatioMeasure,
    StageMeasure,
    _forward_max,
    _log_big,
    bernoulli,
    frostman_bound_margin,
    frostman_measure,
    integral_local_entropy,
    markov,
    packing_frostman,
)
from .trees import (
    CylinderTree,
    explicit,
    frequency,
    full_shift,
    level_branching,
    block_schedule,
    random_pruned_tree,
    sft,
    tree_to_json_obj,
    union,
)
from .words import common_prefix_length, dn_distance, word_to_string

FLOOR_TOL = 1e-9


# ---------------------------------------------------------------------------
# measure-side statistics
# ---------------------------------------------------------------------------


def _covering_witness(measure: RatioMeasure, n_window: int,
                      scale: int) -> float:
    """min over admissible-depth support nodes of -(ln mass)/depth.

    Uses the per-class maximum single-node mass, which is exact on the class
    dag. Dividing by the full node depth (rather than depth - m) folds the
    covering gauge e^(s m) into the bound: if this witness exceeded s, every
    admissible support node would be lighter than e^(-s depth), so every
    admissible cutset would have weight sum above e^(s m).
    """
    dag = measure._dag
    start = n_window + scale
    maxmass = _forward_max(dag, measure.edge_ratio) + measure.root_log
    depths = dag.class_depth
    floor = math.inf
    for c in range(dag.n_classes):
        d = int(depths[c])
        if d < start or maxmass[c] == -math.inf:
            continue
        floor = min(floor, -float(maxmass[c]) / d)
    return floor


def _packing_level_witness(measure: RatioMeasure, n_window: int,
                           scale: int) -> float:
    """max over admissible depths d of min over depth-d support nodes of
    -(ln mass)/d.

    Each admissible level is an antichain of total mass one, so at the best
    depth the antichain value at s equal to this witness is at least the
    packing gauge e^(s(m-1)); the witness never exceeds the packing
    critical exponent.
    """
    dag = measure._dag
    start = max(n_window + scale - 1, 1)
    maxmass = _forward_max(dag, measure.edge_ratio) + measure.root_log
    best = 0.0
    for d in range(start, dag.depth + 1):
        level = [-float(maxmass[c]) / d for c in dag.classes_at(d)
                 if maxmass[c] > -math.inf]
        if level:
            best = max(best, min(level))
    return best


def _stage_atom_witness(measure: StageMeasure) -> float:
    """min over final-stage atoms of -(ln mass)/depth.

    The atoms form an admissible antichain carrying total mass one, so the
    antichain value at this exponent clears the packing gauge; and each
    atom keeps mass(u) = e^(-s n(u)) / total with total > 1, so the witness
    sits at or above the construction exponent s (for unit ball scale).
    """
    vals = [-(rec.below_log - measure.total_log) / rec.depth
            for rec in measure.records if not rec.children]
    return min(vals) if vals else 0.0


def _antichain_candidate(tree: CylinderTree, est: EntropyEstimate,
                         scale: int, backend: str):
    """Witness candidate from the maximal antichain at the bracket's low end.

    Normalizing the optimal selection weights to a probability vector puts
    mass e^(-s n(u)) / P on each selected node, so its exponent
    -(ln mass)/|u| equals (s n(u) + ln P)/|u|; with ln P at or above the
    packing gauge s(m-1) every atom's exponent is at least s, and the
    selection itself is an admissible antichain of total mass one, so the
    minimum exponent never exceeds the packing critical exponent. Returns
    (candidate, None) or (None, flag) when the gauge sanity check fails.
    """
    s = max(est.bracket[0], 0.0)
    result = max_antichain_value(tree, s, n_window=est.n_window, scale=scale,
                                 backend=backend)
    entries = result.selection
    norm = logsumexp([_log_big(e.count) + e.log_weight for e in entries])
    gauge = s * (scale - 1)
    if not entries or norm < gauge - FLOOR_TOL:
        return None, (
            "antichain candidate skipped: selection value "
            f"{norm:.6g} sits below the gauge {gauge:.6g}"
        )
    witness = min((norm - e.log_weight) / e.depth for e in entries)
    return {
        "kind": "antichain",
        "s": float(s),
        "atom_depths": sorted({int(e.depth) for e in entries}),
        "atom_classes": len(entries),
        "witness": float(witness),
        "tail_integral": None,
        "integral_method": None,
        "boundary": float(math.exp(norm - norm)),
    }, None


# ---------------------------------------------------------------------------
# VP reports
# ---------------------------------------------------------------------------


@dataclass
class VPReport:
    """Entropy estimate vs constructive measure-side witnesses."""

    kind: str  # "bowen" | "packing"
    entropy_estimate: EntropyEstimate
    measure_side: float
    gap: float
    candidates: list  # dicts with provenance and per-measure statistics
    params: dict
    flags: list
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json_obj(self) -> dict:
        est = self.entropy_estimate
        return {
            "kind": self.kind,
            "entropy_estimate": {
                "value": float(est.value),
                "bracket": [float(est.bracket[0]), float(est.bracket[1])],
                "mode": est.mode,
                "depth": est.depth,
                "n_window": est.n_window,
                "scale": est.scale,
                "tol": est.tol,
            },
            "measure_side": float(self.measure_side),
            "gap": float(self.gap),
            "candidates": self.candidates,
            "params": self.params,
            "flags": list(self.flags),
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def _finish_report(kind, est, candidates, params, flags, tol,
                   assert_gap=True):
    if candidates:
        measure_side = max(c["witness"] for c in candidates)
        boundary_ok = all(c["boundary"] == 1.0 for c in candidates)
    else:
        measure_side = 0.0
        boundary_ok = True
        flags = list(flags) + ["degenerate: no feasible witness measure"]
        assert_gap = False
    checks = {
        "measure_side_below_upper_bracket":
            measure_side <= est.bracket[1] + FLOOR_TOL,
        "measure_side_within_tol": measure_side <= est.value + tol,
        "boundary_mass_one": boundary_ok,
    }
    if assert_gap:
        checks["gap_within_tol"] = est.value - measure_side <= tol
    return VPReport(
        kind=kind, entropy_estimate=est, measure_side=measure_side,
        gap=float(est.value - measure_side), candidates=candidates,
        params=params, flags=list(flags), checks=checks,
    )


def verify_bowen_vp(tree: CylinderTree, scale: int = 1, tol: float = 0.05,
                    n_window: int = None, grid: int = 4, seed: int = 0,
                    backend: str = None,
                    entropy: EntropyEstimate = None) -> VPReport:
    """Covering-entropy variational principle at finite depth.

    Witnesses are Frostman flow measures extracted on a grid of exponents
    approaching the entropy bracket from below. Each candidate's witness
    exponent is its covering support floor, which sits at or above its grid
    exponent (the flow totals clear the covering gauge there) and provably
    at or below the entropy bracket, so the reported gap stays within the
    tolerance whenever the top grid point is feasible.
    """
    if tol <= 0:
        raise DomainError(f"report tolerance must be positive, got {tol}")
    est = entropy if entropy is not None else bowen_entropy(
        tree, n_window, scale, tol=min(tol / 4, 1e-3), backend=backend,
        diagnostics=False,
    )
    n_max = tree.depth - scale
    if n_max < 1:
        raise DomainError(
            f"tree depth {tree.depth} leaves no horizon at scale {scale}"
        )
    lo = est.bracket[0]
    fracs = np.linspace(0.55, 0.95, max(grid - 1, 1))
    s_values = sorted({max(lo - 0.8 * tol, 0.0)}
                      | {lo * float(f) for f in fracs})
    candidates, flags = [], []
    for s in s_values:
        try:
            res = frostman_measure(tree, s, n_window=est.n_window,
                                   scale=scale, backend=backend)
        except DomainError as exc:
            flags.append(f"frostman at s={s:.6g} failed: {exc}")
            continue
        integ = integral_local_entropy(res.measure, "lower", n_max=n_max,
                                       scale=scale, seed=seed)
        candidates.append({
            "kind": "frostman",
            "s": float(s),
            "log_c": float(res.log_c),
            "witness": float(_covering_witness(res.measure, est.n_window,
                                               scale)),
            "tail_integral": float(integ.value),
            "integral_method": integ.method,
            "boundary": res.measure.boundary_mass(),
        })
    params = {"kind": "bowen", "scale": scale, "depth": tree.depth,
              "tol": tol, "n_window": est.n_window,
              "grid": [float(s) for s in s_values], "seed": seed}
    return _finish_report("bowen", est, candidates, params, flags, tol)


def _bigram_adjacency(tree: CylinderTree) -> np.ndarray:
    """Depth-2 bigram indicator matrix, walked on the level dag (symbols
    entering the same class share one child-symbol set by construction)."""
    ell = tree.alphabet.size
    A = np.zeros((ell, ell))
    dag = tree.dag
    root = dag.classes_at(0)[0]
    for e in range(int(dag.child_ptr[root]), int(dag.child_ptr[root + 1])):
        a = int(dag.child_sym[e])
        c = int(dag.child_idx[e])
        for e2 in range(int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])):
            A[a - 1, int(dag.child_sym[e2]) - 1] = 1.0
    return A


def _parry_candidate(tree: CylinderTree):
    """Maximal-entropy Markov parameters from the tree's bigram structure,
    or None when the structure is degenerate (no growth or dead symbols)."""
    if tree.depth < 2:
        return None
    A = _bigram_adjacency(tree)
    if not A.any():
        return None
    vals, vecs = np.linalg.eig(A)
    k = int(np.argmax(vals.real))
    lam = float(vals[k].real)
    if lam <= 1.0 + 1e-12 or abs(vals[k].imag) > 1e-9:
        return None
    r = vecs[:, k].real
    if r.sum() < 0:
        r = -r
    if (r < -1e-12).any():
        return None
    r = np.clip(r, 0.0, None)
    lvals, lvecs = np.linalg.eig(A.T)
    kl = int(np.argmax(lvals.real))
    l = lvecs[:, kl].real
    if l.sum() < 0:
        l = -l
    l = np.clip(l, 0.0, None)
    ell = A.shape[0]
    P = np.zeros_like(A)
    for a in range(ell):
        if r[a] <= 0:
            P[a, a] = 1.0  # unreachable state; any valid row works
            continue
        row = A[a] * r / (lam * r[a])
        total = row.sum()
        if total <= 0:
            P[a, a] = 1.0
            continue
        P[a] = row / total
    pi = l * r
    if pi.sum() <= 0:
        return None
    pi = pi / pi.sum()
    return P.tolist(), tuple(float(x) for x in pi)


def verify_packing_vp(tree: CylinderTree, scale: int = 1, tol: float = 0.05,
                      stages: int = 3, n_window: int = None, seed: int = 0,
                      backend: str = None,
                      entropy: EntropyEstimate = None) -> VPReport:
    """Packing-entropy variational principle at finite depth.

    The main witness is the staged antichain measure built at an exponent
    just below the entropy bracket, with the final stage pushed deep when
    the tree allows it; its witness exponent comes from the final-stage
    atoms. Uniform Bernoulli and a maximal-entropy Markov candidate are
    evaluated alongside via the level witness, and the normalized optimal
    antichain at the bracket's low end joins as a further candidate whose
    atom exponents sit at the bracket by construction. The entropy window
    is capped so the staged atoms stay admissible; when the staged
    construction is infeasible the report carries the parametric
    candidates only, flagged.
    """
    if tol <= 0:
        raise DomainError(f"report tolerance must be positive, got {tol}")
    n_max = tree.depth - scale
    if n_max < 1:
        raise DomainError(
            f"tree depth {tree.depth} leaves no horizon at scale {scale}"
        )
    est = entropy if entropy is not None else packing_entropy(
        tree, n_window, scale, tol=min(tol / 4, 1e-3), backend=backend,
        diagnostics=False,
    )
    candidates, flags = [], []
    s_target = max(est.bracket[0] - 0.8 * tol, 0.0)
    deep = (3 * tree.depth) // 4

    def build_staged(s):
        last_error = None
        for count in range(stages, 0, -1):
            for final_min_depth in (max(deep, scale + 1), scale + 1):
                try:
                    return packing_frostman(
                        tree, s, scale=scale, stages=count,
                        final_min_depth=final_min_depth,
                    ), None
                except DomainError as exc:
                    last_error = exc
        return None, last_error

    stage_measure = None
    if s_target > 0:
        stage_measure, error = build_staged(s_target)
        if stage_measure is None:
            flags.append(f"packing-frostman infeasible: {error}")
    else:
        flags.append("packing-frostman skipped: entropy bracket at zero")
    if stage_measure is not None:
        if stage_measure.stages < stages:
            flags.append(
                f"staged construction degraded to {stage_measure.stages} "
                f"stage(s)"
            )
        atom_top = min(stage_measure.stage_depths[-1])
        max_window = max(atom_top - scale + 1, 1)
        if est.n_window > max_window:
            # the atoms must sit inside the admissible antichain window
            est = packing_entropy(tree, max_window, scale,
                                  tol=min(tol / 4, 1e-3), backend=backend,
                                  diagnostics=False)
            flags.append(
                f"entropy window capped at {max_window} so the stage atoms "
                "stay admissible"
            )
            new_target = max(est.bracket[0] - 0.8 * tol, 0.0)
            if new_target > s_target:
                rebuilt, _ = build_staged(new_target)
                if (rebuilt is not None
                        and min(rebuilt.stage_depths[-1]) >= atom_top):
                    stage_measure = rebuilt
                    s_target = new_target
        integ = integral_local_entropy(stage_measure, "upper", n_max=n_max,
                                       scale=scale)
        candidates.append({
            "kind": "packing-frostman",
            "s": float(stage_measure.params["s"]),
            "stages": stage_measure.stages,
            "stage_depths": [list(map(int, ds))
                             for ds in stage_measure.stage_depths],
            "bound_margin": float(stage_measure.bound_margin()),
            "witness": float(_stage_atom_witness(stage_measure)),
            "tail_integral": float(integ.value),
            "integral_method": integ.method,
            "boundary": stage_measure.boundary_mass(),
        })
    ell = tree.alphabet.size
    parametric = [("bernoulli", lambda: bernoulli(tree, (1.0 / ell,) * ell))]
    parry = _parry_candidate(tree)
    if parry is not None:
        parametric.append(("markov", lambda: markov(tree, *parry)))
    else:
        flags.append("markov candidate skipped: degenerate bigram structure")
    for name, build in parametric:
        try:
            mu = build()
        except DomainError as exc:
            flags.append(f"{name} candidate failed: {exc}")
            continue
        integ = integral_local_entropy(mu, "upper", n_max=n_max, scale=scale,
                                       seed=seed)
        candidates.append({
            "kind": name,
            "params": dict(mu.params),
            "witness": float(_packing_level_witness(mu, est.n_window,
                                                    scale)),
            "tail_integral": float(integ.value),
            "integral_method": integ.method,
            "boundary": mu.boundary_mass(),
        })
    if stage_measure is not None:
        antichain, note = _antichain_candidate(tree, est, scale, backend)
        if antichain is not None:
            candidates.append(antichain)
        else:
            flags.append(note)
    params = {"kind": "packing", "scale": scale, "depth": tree.depth,
              "tol": tol, "n_window": est.n_window, "stages": stages,
              "s_target": float(s_target), "seed": seed}
    report = _finish_report("packing", est, candidates, params, flags, tol,
                            assert_gap=stage_measure is not None)
    if stage_measure is not None:
        report.checks["stage_bound_margin"] = (
            stage_measure.bound_margin() <= FLOOR_TOL
        )
    return report


# ---------------------------------------------------------------------------
# example-tree generators
# ---------------------------------------------------------------------------


def besicovitch_tree(targets, delta: float, depth: int) -> CylinderTree:
    """Words whose depth-D symbol frequencies sit within delta of targets."""
    try:
        tree = frequency(targets, delta, depth)
        tree.dag  # construction is lazy; surface infeasibility here
        return tree
    except DomainError as exc:
        if "empty compact set" in str(exc):
            raise DomainError(
                f"frequency window too tight: no depth-{depth} word keeps "
                f"all symbol frequencies within {delta} of {tuple(targets)}"
            ) from exc
        raise


def upper_density_tree(depth: int = 1024) -> CylinderTree:
    """Binary tree branching only on a sparse position set of upper density
    2/3: position 1, the dyadic runs [4,8), [16,32), [64,128), [256,512),
    and the final position. The densest prefix window ends at 511 with 341
    branching positions, so the capacity and packing exponents sit near
    (2/3) ln 2 while long thin runs drag the covering exponent lower."""
    if depth < 8:
        raise DomainError(f"upper-density schedule needs depth >= 8, got {depth}")

    # branching runs [4,8), [16,32), [64,128), ... are [4^k, 2*4^k)
    def bushy(pos):
        if pos == 1 or pos == depth:
            return True
        run = 4
        while run <= pos:
            if pos < 2 * run:
                return True
            run *= 4
        return False

    widths = [2 if bushy(p) else 1 for p in range(1, depth + 1)]
    return level_branching(2, depth, widths)


def separator_tree(depth: int = 12) -> CylinderTree:
    """Bushy crown then thin stalks: full binary branching on the first half
    of the positions, single chains below. Deep cutsets stay cheap (the
    covering exponent is ln(count)/depth) while the crown antichain resists
    every decomposition, separating the covering and packing exponents."""
    if depth < 4 or depth % 2:
        raise DomainError(f"separator schedule needs an even depth >= 4, got {depth}")
    half = depth // 2
    widths = [2] * half + [1] * (depth - half)
    return level_branching(2, depth, widths)


FIRST_BLOCK = 8
BLOCK_GROWTH = 4


def _rate_for_frequency(f: float, ell: int) -> float:
    """Branch growth rate when the tracked symbol has frequency f and the
    other ell-1 symbols are free: -f ln f - (1-f) ln((1-f)/(ell-1))."""
    out = 0.0
    if 0 < f:
        out -= f * math.log(f)
    if f < 1:
        out -= (1 - f) * math.log((1 - f) / (ell - 1))
    return out


def _solve_frequency(s: float, ell: int, side: str) -> float:
    """Frequency with branch rate s on one side of the maximum at 1/ell."""
    lo, hi = (0.0, 1.0 / ell) if side == "low" else (1.0 / ell, 1.0)
    increasing = side == "low"
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if (_rate_for_frequency(mid, ell) < s) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nontypical_block_lengths(depth: int) -> list:
    """Block schedule: lengths 8, 32, 128, ... (factor 4), last truncated."""
    lengths, total = [], 0
    size = FIRST_BLOCK
    while total + size < depth:
        lengths.append(size)
        total += size
        size *= BLOCK_GROWTH
    lengths.append(depth - total)
    return lengths


def nontypical_tree(ell: int, s: float, depth: int) -> CylinderTree:
    """Branches with non-converging Birkhoff averages at branch rate s.

    Consecutive blocks alternate the exact count of symbol 1 between a low
    frequency and a high frequency with the same branch rate s, so the
    running average of the symbol-1 indicator oscillates on every branch
    while the cutset critical exponent stays near s. The lengths quadruple,
    so each block dominates everything before it; the designated checkpoints
    are the ends of the last two complete blocks.
    """
    if ell < 2:
        raise DomainError(f"alphabet size must be >= 2, got {ell}")
    if not 0 <= s < math.log(ell):
        raise DomainError(
            f"target exponent must satisfy 0 <= s < ln({ell}), got {s}"
        )
    min_rate = _rate_for_frequency(0.0, ell)  # ln(ell-1)
    if s < min_rate - 1e-12:
        raise DomainError(
            f"target exponent {s:.6g} below ln({ell}-1): the low-frequency "
            "blocks cannot branch that slowly; raise s or use a binary "
            "alphabet"
        )
    min_depth = FIRST_BLOCK * (1 + BLOCK_GROWTH * (1 + BLOCK_GROWTH
                               * (1 + BLOCK_GROWTH))) + 1
    if depth < min_depth:
        raise DomainError(
            "the block schedule needs four complete blocks plus a final "
            f"one, so the minimal feasible depth is {min_depth}; got {depth}"
        )
    f_low = _solve_frequency(s, ell, "low")
    f_high = _solve_frequency(s, ell, "high")
    lengths = nontypical_block_lengths(depth)
    blocks, freqs = [], []
    for i, length in enumerate(lengths):
        f = f_low if i % 2 == 0 else f_high
        freqs.append(f)
        blocks.append((length, int(round(f * length))))
    ends = [int(x) for x in np.cumsum([b[0] for b in blocks])]
    counts = [int(x) for x in np.cumsum([b[1] for b in blocks])]
    checkpoints = (ends[-3], ends[-2])
    averages = {end: counts[i] / end for i, end in enumerate(ends)}
    oscillation = abs(averages[checkpoints[1]] - averages[checkpoints[0]])
    if s > 0 and oscillation < 0.21:
        raise DomainError(
            f"target exponent {s:.6g} too close to ln({ell}): the frequency "
            f"split ({f_low:.4f}, {f_high:.4f}) moves the checkpoint "
            f"averages by only {oscillation:.4f} < 0.21"
        )
    tree = block_schedule(ell, depth, blocks, tracked_symbol=1)
    tree.metadata.update({
        "schedule": {
            "block_lengths": [b[0] for b in blocks],
            "block_counts": [b[1] for b in blocks],
            "frequencies": [float(f) for f in freqs],
            "checkpoints": list(checkpoints),
            "checkpoint_averages": [averages[c] for c in checkpoints],
            "oscillation": float(oscillation),
            "target_exponent": float(s),
        }
    })
    return tree


def checkpoint_oscillation(tree: CylinderTree, tracked_symbol: int = 1) -> dict:
    """Running-average move of the tracked-symbol indicator between the
    tree's designated checkpoints, certified over every depth-D branch.

    A forward sweep over the level dag carries the exact [min, max] count of
    the tracked symbol into each class; every depth-D node lies under some
    class at each checkpoint, so degenerate and equal count intervals there
    certify that 100% of branches share the same two running averages. A
    non-deterministic count raises instead of sampling.
    """
    sched = tree.metadata.get("schedule")
    if not sched:
        raise DomainError("tree carries no block-schedule metadata")
    c1, c2 = sched["checkpoints"]
    dag = tree.dag
    lo = [None] * dag.n_classes
    hi = [None] * dag.n_classes
    root = dag.classes_at(0)[0]
    lo[root] = hi[root] = 0
    for c in range(dag.n_classes):
        if lo[c] is None:
            continue
        for e in range(int(dag.child_ptr[c]), int(dag.child_ptr[c + 1])):
            k = int(dag.child_idx[e])
            step = 1 if int(dag.child_sym[e]) == tracked_symbol else 0
            a, b = lo[c] + step, hi[c] + step
            lo[k] = a if lo[k] is None else min(lo[k], a)
            hi[k] = b if hi[k] is None else max(hi[k], b)
    averages = []
    for cp in (c1, c2):
        vals = {v for c in dag.classes_at(cp) for v in (lo[c], hi[c])}
        if len(vals) != 1:
            raise DomainError(
                f"tracked-symbol count at depth {cp} is not the same on "
                f"every branch (saw counts {sorted(vals)})"
            )
        averages.append(vals.pop() / cp)
    return {
        "checkpoints": (c1, c2),
        "averages": (averages[0], averages[1]),
        "oscillation": abs(averages[1] - averages[0]),
        "branch_coverage": 1.0,
    }


# ---------------------------------------------------------------------------
# property suite
# ---------------------------------------------------------------------------


@dataclass
class PropertyCheck:
    invariant: str
    subject: str
    passed: bool
    detail: str = ""
    counterexample: dict = None

    def to_json_obj(self) -> dict:
        obj = {"invariant": self.invariant, "subject": self.subject,
               "passed": self.passed, "detail": self.detail}
        if self.counterexample is not None:
            obj["counterexample"] = self.counterexample
        return obj


@dataclass
class SuiteReport:
    seed: int
    count: int
    depth: int
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def to_json_obj(self) -> dict:
        return {
            "seed": self.seed,
            "count": self.count,
            "depth": self.depth,
            "passed": self.passed,
            "rows": [r.to_json_obj() for r in self.rows],
        }

    def csv_text(self) -> str:
        lines = ["invariant,subject,passed,detail"]
        for r in self.rows:
            detail = r.detail.replace('"', "'")
            lines.append(
                f'{r.invariant},{r.subject},{int(r.passed)},"{detail}"'
            )
        return "\n".join(lines) + "\n"


def _row(rows, invariant, subject, passed, detail="", tree=None, extra=None):
    counterexample = None
    if not passed and tree is not None:
        counterexample = {"tree": tree_to_json_obj(tree)}
        if extra:
            counterexample.update(extra)
    rows.append(PropertyCheck(invariant=invariant, subject=subject,
                              passed=bool(passed), detail=detail,
                              counterexample=counterexample))


def _guarded(rows, invariant, subject, tree, fn):
    """Run one invariant check; an unexpected error is itself a failure."""
    try:
        passed, detail = fn()
    except Exception as exc:  # noqa: BLE001 - failures are data here
        _row(rows, invariant, subject, False, f"error: {exc}", tree)
        return
    _row(rows, invariant, subject, passed, detail, tree)


def _boundary_words(tree, limit=None):
    words = [w for w in tree.materialize_words() if len(w) == tree.depth]
    return words if limit is None else words[:limit]


def _check_ball_relation(tree):
    """Same-scale Bowen balls are nested or disjoint: membership between
    centers is symmetric and transitive; and membership matches the
    cylinder-length law exactly."""
    words = _boundary_words(tree, 12)
    for n, scale, kind in ((3, 1, "open"), (4, 2, "open"), (2, 3, "closed"),
                           (4, 3, "closed"), (1, 1, "open")):
        cutoff = math.exp(-scale)
        member = {}
        for i, x in enumerate(words):
            for j, y in enumerate(words):
                d = dn_distance(x, y, n)
                inside = d < cutoff if kind == "open" else d <= cutoff
                need = n + scale if kind == "open" else n + scale - 1
                if inside != (common_prefix_length(x, y) >= need
                              or x == y):
                    return False, (
                        f"cylinder-length law broke at n={n} m={scale} "
                        f"{kind}: {word_to_string(x)} vs {word_to_string(y)}"
                    )
                member[i, j] = inside
        for i in range(len(words)):
            for j in range(len(words)):
                if member[i, j] != member[j, i]:
                    return False, f"membership asymmetry at n={n} m={scale}"
                if not member[i, j]:
                    continue
                for k in range(len(words)):
                    if member[j, k] and not member[i, k]:
                        return False, (
                            f"membership not transitive at n={n} m={scale}"
                        )
    return True, ""


def _check_union_idempotent(tree):
    words = tree.materialize_words()
    doubled = union([tree, tree])
    if doubled.materialize_words() != words:
        return False, "union with itself changed the node set"
    rebuilt = explicit(tree.alphabet.size, tree.depth, words)
    if rebuilt.materialize_words() != words:
        return False, "rebuilding from the node set changed it"
    return True, ""


_GRID = ((0.2, 1, 1), (0.45, 2, 1), (math.log(2.0), 1, 2))


def _check_subset_monotone(tree, bigger):
    for s, nw, m in _GRID:
        if nw + m > tree.depth:
            continue
        a = min_cutset_value(tree, s, nw, m)
        b = min_cutset_value(bigger, s, nw, m)
        if a.log_value > b.log_value + 1e-9:
            return False, f"cutset value dropped on a supertree at s={s}"
        a = max_antichain_value(tree, s, nw, m)
        b = max_antichain_value(bigger, s, nw, m)
        if a.log_value > b.log_value + 1e-9:
            return False, f"antichain value dropped on a supertree at s={s}"
    small = tree.depth_counts()
    big = bigger.depth_counts()
    if any(x > y for x, y in zip(small, big)):
        return False, "a level count dropped on a supertree"
    return True, ""


def _check_chain(tree, tol, ests):
    """Covering <= packing holds outright; packing <= capacity carries the
    finite-depth decomposition slack: an antichain mixing several depths can
    beat every single level by at most a factor of the window length, so
    the packing exponent is bounded by max over admissible depths d of
    (ln count(d) + ln(window length)) / d."""
    hb, hp, hc = ests
    slack = 2 * tol + 1e-9
    if hb.value > hp.value + slack:
        return False, f"bowen {hb.value:.6f} > packing {hp.value:.6f}"
    start = hc.n_window + hc.scale - 1
    width = math.log(tree.depth - start + 1)
    mixed_cap = max(rate + width / int(d)
                    for d, rate in hc.diagnostics["level_rates"].items())
    if hp.value > mixed_cap + slack:
        return False, (f"packing {hp.value:.6f} > mixed-level capacity "
                       f"bound {mixed_cap:.6f}")
    return True, (f"h_bowen={hb.value:.4f} h_packing={hp.value:.4f} "
                  f"h_capacity={hc.value:.4f}")


def _check_duality(tree):
    for s, nw, m in _GRID:
        if nw + m > tree.depth:
            continue
        cut = min_cutset_value(tree, s, nw, m)
        flow = weighted_cover_value(tree, s, nw, m)
        tol = 1e-9 * max(1.0, abs(cut.log_value))
        if abs(cut.log_value - flow.log_value) > tol:
            return False, (f"duality gap {cut.log_value - flow.log_value:.3e}"
                           f" at s={s}, N={nw}, m={m}")
    return True, ""


def _check_union_bound(t1, t2, tol):
    """Cutset values are subadditive under union exactly; the entropy of a
    union of two trees can exceed the max of the parts at finite depth by
    at most ln(2)/n_window (the doubled cutset weight moves the gauged
    crossing by that much at worst)."""
    u = union([t1, t2])
    for s, nw, m in _GRID[:2]:
        vu = min_cutset_value(u, s, nw, m).value
        v1 = min_cutset_value(t1, s, nw, m).value
        v2 = min_cutset_value(t2, s, nw, m).value
        if vu > v1 + v2 + 1e-9 * (v1 + v2):
            return False, f"union cutset value exceeded the sum at s={s}"
    hu = bowen_entropy(u, tol=tol, diagnostics=False)
    h1 = bowen_entropy(t1, tol=tol, diagnostics=False).value
    h2 = bowen_entropy(t2, tol=tol, diagnostics=False).value
    slack = math.log(2.0) / hu.n_window + 2 * tol + 1e-9
    if hu.value > max(h1, h2) + slack:
        return False, (f"union entropy {hu.value:.6f} exceeded "
                       f"max({h1:.6f}, {h2:.6f}) + {slack:.4f}")
    return True, ""


def _check_increasing_sets(tree):
    words = _boundary_words(tree)
    cuts = [max(1, (len(words) * k) // 3) for k in (1, 2, 3)]
    values = []
    for c in cuts:
        sub = explicit(tree.alphabet.size, tree.depth, words[:c])
        values.append(
            min_cutset_value(sub, 0.4, n_window=3, mode="clopen").log_value
        )
    full = min_cutset_value(tree, 0.4, n_window=3, mode="clopen").log_value
    if any(values[i] > values[i + 1] + 1e-12 for i in range(2)):
        return False, "clopen cutset value not monotone along the chain"
    if abs(values[-1] - full) > 1e-9:
        return False, "stabilized union value differs from the full tree"
    return True, ""


def _check_n_monotone(tree):
    prev_cut, prev_pack = -math.inf, math.inf
    for nw in (1, 2, 3, 4):
        if nw + 1 > tree.depth:
            break
        cut = min_cutset_value(tree, 0.4, nw, 1).log_value
        pack = max_antichain_value(tree, 0.4, nw, 1).log_value
        if cut < prev_cut - 1e-12:
            return False, f"covering value decreased moving to N={nw}"
        if pack > prev_pack + 1e-12:
            return False, f"packing value increased moving to N={nw}"
        prev_cut, prev_pack = cut, pack
    return True, ""


def _check_additivity(measure):
    tree = measure.tree
    kids = {}
    for w in tree.materialize_words():
        kids.setdefault(w[:-1], []).append(w)
    for parent, ks in kids.items():
        want = measure.mass(parent)
        got = sum(measure.mass(k) for k in ks)
        if abs(got - want) > 1e-12 * max(1.0, abs(want)):
            return False, (f"not additive at '{word_to_string(parent)}': "
                           f"{got!r} vs {want!r}")
    return True, ""


def _check_measures(tree):
    ell = tree.alphabet.size
    probs = tuple(
        (0.3, 0.7) if ell == 2 else (1.0 / ell,) * ell
    )
    ok, detail = _check_additivity(bernoulli(tree, probs))
    if not ok:
        return False, "bernoulli " + detail
    res = frostman_measure(tree, 0.3)
    ok, detail = _check_additivity(res.measure)
    if not ok:
        return False, "frostman " + detail
    return True, ""


def _check_frostman(tree):
    for s in (0.2, 0.45):
        res = frostman_measure(tree, s)
        margin = frostman_bound_margin(res)
        if margin > FLOOR_TOL:
            return False, f"frostman bound violated by e^{margin:.3e} at s={s}"
        if res.capacity_margin > 1e-12:
            return False, f"flow exceeded a capacity at s={s}"
        if res.measure.boundary_mass() != 1.0:
            return False, f"boundary mass not exactly 1 at s={s}"
        cover = weighted_cover_value(tree, s)
        if abs(res.log_c - cover.log_value) > 1e-9:
            return False, f"total flow differs from the cover value at s={s}"
    return True, ""


def _check_packing_bound(tree, est):
    s = 0.5 * est.value
    if s <= 0.02:
        return True, "vacuous: packing exponent too small for a staged witness"
    try:
        mu = packing_frostman(tree, s, stages=2)
    except DomainError as exc:
        return True, f"vacuous: staged selection infeasible ({exc})"
    if mu.bound_margin() > FLOOR_TOL:
        return False, f"stage bound violated by e^{mu.bound_margin():.3e}"
    if mu.boundary_mass() != 1.0:
        return False, "stage boundary mass not exactly 1"
    return True, ""


def _check_vp(report):
    if not report.passed:
        bad = [k for k, v in report.checks.items() if not v]
        return False, f"failed checks: {', '.join(bad)}"
    return True, (f"gap={report.gap:.4f} "
                  f"measure_side={report.measure_side:.4f}")


def _brute_cutset(tree, s, n_window, scale):
    """Exhaustive minimum over all admissible cutsets (tiny trees only)."""
    start = n_window + scale
    kids = {}
    for w in tree.materialize_words():
        kids.setdefault(w[:-1], []).append(w)

    def best(w):
        own = math.exp(-s * (len(w) - scale)) if len(w) >= start else math.inf
        below = kids.get(w)
        if below is None:
            return own
        return min(own, sum(best(k) for k in below))

    return best(())


def _brute_antichain(tree, s, n_window, scale):
    start = n_window + scale - 1
    kids = {}
    for w in tree.materialize_words():
        kids.setdefault(w[:-1], []).append(w)

    def best(w):
        own = (math.exp(-s * (len(w) - scale + 1))
               if len(w) >= start else 0.0)
        below = kids.get(w)
        if below is None:
            return own
        return max(own, sum(best(k) for k in below))

    return best(())


def _tree_rows(seed: int, index: int, depth: int, tol: float,
               vp_tol: float) -> list:
    rng = np.random.default_rng([seed, index])
    tree = random_pruned_tree(rng, ell=2, depth=depth)
    extra = random_pruned_tree(rng, ell=2, depth=depth)
    label = f"tree-{index:03d}"
    rows = []
    _guarded(rows, "ball-nesting-and-length-law", label, tree,
             lambda: _check_ball_relation(tree))
    _guarded(rows, "union-idempotent", label, tree,
             lambda: _check_union_idempotent(tree))
    bigger = union([tree, extra])
    _guarded(rows, "subset-monotonicity", label, tree,
             lambda: _check_subset_monotone(tree, bigger))
    ests = (
        bowen_entropy(tree, tol=tol, diagnostics=False),
        packing_entropy(tree, tol=tol, diagnostics=False),
        capacity_entropy(tree),
    )
    _guarded(rows, "chain-inequality", label, tree,
             lambda: _check_chain(tree, tol, ests))
    _guarded(rows, "cover-flow-duality", label, tree,
             lambda: _check_duality(tree))
    _guarded(rows, "union-bound", label, tree,
             lambda: _check_union_bound(tree, extra, tol))
    _guarded(rows, "increasing-sets-stabilize", label, tree,
             lambda: _check_increasing_sets(tree))
    _guarded(rows, "window-monotonicity", label, tree,
             lambda: _check_n_monotone(tree))
    _guarded(rows, "measure-additivity", label, tree,
             lambda: _check_measures(tree))
    _guarded(rows, "frostman-bound-and-optimality", label, tree,
             lambda: _check_frostman(tree))
    _guarded(rows, "packing-stage-bound", label, tree,
             lambda: _check_packing_bound(tree, ests[1]))
    _guarded(rows, "vp-bowen-report", label, tree,
             lambda: _check_vp(verify_bowen_vp(tree, tol=vp_tol,
                                               entropy=ests[0])))
    _guarded(rows, "vp-packing-report", label, tree,
             lambda: _check_vp(verify_packing_vp(tree, tol=vp_tol,
                                                 entropy=ests[1])))
    return rows


def _worker(args):
    seed, index, depth, tol, vp_tol = args
    return index, [r.to_json_obj() for r in _tree_rows(seed, index, depth,
                                                       tol, vp_tol)]


def _global_rows(seed: int, depth: int, tol: float) -> list:
    rows = []
    for tree, label in ((full_shift(2, 12), "full_shift(2)"),
                        (full_shift(3, 10), "full_shift(3)")):
        def check(tree=tree):
            hb = bowen_entropy(tree, tol=tol, diagnostics=False).value
            hp = packing_entropy(tree, tol=tol, diagnostics=False).value
            hc = capacity_entropy(tree).value
            spread = max(hb, hp, hc) - min(hb, hp, hc)
            return spread <= 2 * tol + 1e-9, f"spread={spread:.5f}"
        _guarded(rows, "equality-on-full-shifts", label, tree, check)

    rng = np.random.default_rng([seed, 10**6])
    for k in range(3):
        tiny = random_pruned_tree(rng, ell=2, depth=4)

        def check(tiny=tiny):
            for s in (0.1, 0.3, math.log(2.0), 1.0):
                dp = min_cutset_value(tiny, s, 1, 1).value
                brute = _brute_cutset(tiny, s, 1, 1)
                if abs(dp - brute) > 1e-9 * max(1.0, brute):
                    return False, f"covering DP {dp} != brute {brute} at s={s}"
                dp = max_antichain_value(tiny, s, 1, 1).value
                brute = _brute_antichain(tiny, s, 1, 1)
                if abs(dp - brute) > 1e-9 * max(1.0, brute):
                    return False, f"packing DP {dp} != brute {brute} at s={s}"
            return True, ""
        _guarded(rows, "dp-vs-exhaustive", f"tiny-{k}", tiny, check)

    def brin_katok():
        target = -(0.2 * math.log(0.2) + 0.8 * math.log(0.8))
        mu = bernoulli(full_shift(2, 10001), (0.2, 0.8))
        lo = integral_local_entropy(mu, "lower", n_max=10000, samples=100,
                                    seed=seed, method="monte-carlo")
        hi = integral_local_entropy(mu, "upper", n_max=10000, samples=100,
                                    seed=seed, method="monte-carlo")
        ok = (abs(lo.value - target) <= 0.02 and abs(hi.value - target) <= 0.02
              and 0 <= hi.value - lo.value <= 0.02)
        return ok, (f"lower={lo.value:.4f} upper={hi.value:.4f} "
                    f"target={target:.4f}")
    _guarded(rows, "brin-katok-consistency", "bernoulli(0.2,0.8)", None,
             brin_katok)

    def besi_monotone():
        nodes = None
        for delta in (0.025, 0.05, 0.1):
            t = besicovitch_tree((0.2, 0.8), delta, 20)
            current = set(t.materialize_words())
            if nodes is not None and not nodes.issubset(current):
                return False, f"node set shrank when delta grew to {delta}"
            nodes = current
        return True, ""
    _guarded(rows, "besicovitch-delta-monotone", "p=(0.2,0.8)", None,
             besi_monotone)

    def separation():
        tree = separator_tree(12)
        hb = bowen_entropy(tree, tol=tol, diagnostics=False).value
        hp = packing_entropy(tree, tol=tol, diagnostics=False).value
        return hp - hb >= 0.1, f"h_packing - h_bowen = {hp - hb:.4f}"
    _guarded(rows, "bowen-packing-separation", "separator-tree", None,
             separation)

    def reproducible():
        rng0 = np.random.default_rng([seed, 0])
        t0 = random_pruned_tree(rng0, ell=2, depth=depth)
        a = json.dumps(verify_bowen_vp(t0, tol=0.05).to_json_obj(),
                       sort_keys=True)
        b = json.dumps(verify_bowen_vp(t0, tol=0.05).to_json_obj(),
                       sort_keys=True)
        return a == b, ""
    _guarded(rows, "report-reproducibility", "tree-000", None, reproducible)
    return rows


def run_property_suite(seed: int = 42, count: int = 200, depth: int = 12,
                       tol: float = 1e-3, vp_tol: float = 0.05,
                       jobs: int = 1, progress=None) -> SuiteReport:
    """Run every invariant over seeded random trees plus global cases.

    Identical parameters give bit-identical reports regardless of the job
    count; failures are recorded as rows (with serialized counterexamples),
    never raised. `progress`, when given, is called with (subject,
    rows_so_far, failures_so_far) after each completed tree so long runs
    stay observable.
    """
    if count < 1:
        raise DomainError(f"tree count must be >= 1, got {count}")
    if depth < 4:
        raise DomainError(f"suite depth must be >= 4, got {depth}")
    rows = []

    def report_progress(label=None):
        if progress is not None:
            bad = sum(1 for r in rows if not r.passed)
            progress(label or (rows[-1].subject if rows else ""),
                     len(rows), bad)

    if jobs > 1:
        args = [(seed, i, depth, tol, vp_tol) for i in range(count)]
        by_index = {}
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, row_objs in pool.map(_worker, args):
                by_index[index] = row_objs
        for i in range(count):
            for obj in by_index[i]:
                rows.append(PropertyCheck(
                    invariant=obj["invariant"], subject=obj["subject"],
                    passed=obj["passed"], detail=obj["detail"],
                    counterexample=obj.get("counterexample"),
                ))
            report_progress()
    else:
        for i in range(count):
            rows.extend(_tree_rows(seed, i, depth, tol, vp_tol))
            report_progress()
    rows.extend(_global_rows(seed, depth, tol))
    report_progress("global")
    return SuiteReport(seed=seed, count=count, depth=depth, rows=rows)
