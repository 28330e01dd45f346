"""Check-agnosia post-processing around the quantized NMS decoder.

When the initial decode does not match the syndrome, the ``lam`` least
reliable checks are tried one at a time: the a-priori values on the support
of the chosen check are erased and the decoder is run again. ``alg1`` stops
each retry on the checks away from the erased support and then solves the
remaining local system by peeling plus enumeration; ``alg2`` simply asks the
retry to match the full syndrome.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .code_model import ParityCheckMatrix, TannerGraph, build_tanner
from .gf2 import syndrome
from .nms import DecodeOutcome, DecoderConfig, NmsDecoder

METRICS = ("min2sum", "abs_sum", "random")
MODES = ("alg1", "alg2")
EXECUTIONS = ("sequential", "parallel")


@dataclass(frozen=True)
class PostProcessConfig:
    lam: int = 10
    metric: str = "min2sum"
    mode: str = "alg2"
    execution: str = "sequential"
    i_delta: int | None = None
    max_workers: int | None = None

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.execution not in EXECUTIONS:
            raise ValueError(f"execution must be one of {EXECUTIONS}, got {self.execution!r}")


@dataclass(frozen=True)
class NeighborhoodSets:
    target: int
    erased_qubits: tuple[int, ...]
    frontier_checks: tuple[int, ...]
    active_checks: tuple[int, ...]

    def active_mask(self, n_checks: int) -> np.ndarray:
        mask = np.zeros(n_checks, dtype=np.uint8)
        mask[list(self.active_checks)] = 1
        return mask


@dataclass
class ResidualSolution:
    """Assignment of the erased qubits (in ``erased_qubits`` order) plus bookkeeping."""

    assignment: np.ndarray
    e_hat: np.ndarray
    pinned: int
    candidates: int


@dataclass
class AttemptRecord:
    k: int
    check: int
    success: bool
    converged: bool
    iterations: int
    solver_called: bool = False
    unsatisfiable: bool = False
    e_hat: np.ndarray | None = field(default=None, repr=False)


@dataclass
class CAResult:
    """Outcome of one check-agnosia decode.

    ``e_hat`` is ``None`` when decoding failed; ``winner`` is the 1-based
    index of the rescuing attempt.
    """

    success: bool
    e_hat: np.ndarray | None
    initial: DecodeOutcome
    selected: list[int] = field(default_factory=list)
    winner: int | None = None
    attempts: list[AttemptRecord] = field(default_factory=list)

    @property
    def initial_converged(self) -> bool:
        return self.initial.converged

    @property
    def rescued(self) -> bool:
        return self.winner is not None

    @property
    def solver_calls(self) -> int:
        return sum(a.solver_called for a in self.attempts)

    @property
    def unsat_count(self) -> int:
        return sum(a.unsatisfiable for a in self.attempts)


def select_least_reliable(delta, lam: int, metric: str = "min2sum", rng: np.random.Generator | None = None,
                          n_checks: int | None = None) -> list[int]:
    """Indices of the ``lam`` checks with the smallest metric, ascending (ties: lowest index).

    With ``metric="random"`` the metric values are ignored and ``lam``
    distinct checks are drawn uniformly.
    """
    if n_checks is None:
        n_checks = len(delta)
    if lam > n_checks:
        warnings.warn(f"lam={lam} exceeds the {n_checks} checks; clamping", stacklevel=2)
        lam = n_checks
    if metric == "random":
        if rng is None:
            raise ValueError("random metric needs an rng")
        return [int(c) for c in rng.choice(n_checks, size=lam, replace=False)]
    order = np.argsort(np.asarray(delta), kind="stable")
    return [int(c) for c in order[:lam]]


def neighborhood_sets(graph: TannerGraph, c_k: int) -> NeighborhoodSets:
    erased = graph.check_neighbors[c_k]
    frontier = sorted({c for q in erased for c in graph.qubit_neighbors[q]})
    fset = set(frontier)
    active = tuple(c for c in range(graph.n_checks) if c not in fset)
    return NeighborhoodSets(c_k, tuple(erased), tuple(frontier), active)


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def brute_force_residual(h: ParityCheckMatrix, sets: NeighborhoodSets, e_hat, s) -> ResidualSolution | None:
    """Fill ``e_hat`` on the erased qubits so every frontier check matches ``s``.

    Values outside the erased support are kept. Frontier checks with a single
    undetermined erased qubit fix it directly (repeated until no such check
    remains); the remaining free qubits are enumerated as a binary counter,
    lowest erased index as the least significant bit. Returns ``None`` when no
    assignment exists.
    """
    e_hat = np.asarray(e_hat, dtype=np.uint8)
    s = np.asarray(s, dtype=np.uint8)
    erased = sets.erased_qubits
    pos = {q: j for j, q in enumerate(erased)}
    equations = []
    for c in sets.frontier_checks:
        mask, target = 0, int(s[c])
        for q in h.rows[c]:
            j = pos.get(q)
            if j is None:
                target ^= int(e_hat[q])
            else:
                mask |= 1 << j
        equations.append((mask, target))

    known, values = 0, 0
    progress = True
    while progress:
        progress = False
        for mask, target in equations:
            open_bits = mask & ~known
            if open_bits and open_bits & (open_bits - 1) == 0:
                if target ^ _parity(mask & known & values):
                    values |= open_bits
                known |= open_bits
                progress = True
    pinned = bin(known).count("1")
    for mask, target in equations:
        if mask & ~known == 0 and _parity(mask & values) != target:
            return None

    m = len(erased)
    free = [j for j in range(m) if not (known >> j) & 1]
    candidates = 0
    for counter in range(1 << len(free)):
        x = values
        for b, j in enumerate(free):
            if (counter >> b) & 1:
                x |= 1 << j
        candidates += 1
        if all(_parity(mask & x) == target for mask, target in equations):
            assignment = np.array([(x >> j) & 1 for j in range(m)], dtype=np.uint8)
            out = e_hat.copy()
            out[list(erased)] = assignment
            return ResidualSolution(assignment, out, pinned, candidates)
    return None


def execute_postprocess(attempts: Sequence[Callable[[], AttemptRecord]], execution: str = "sequential",
                        max_workers: int | None = None) -> tuple[int | None, list[AttemptRecord]]:
    """Run attempts and pick the successful one with the smallest index.

    Returns ``(winner_position, records)`` where ``records`` stops at the
    winner under both contracts, so the outcome does not depend on timing.
    Under ``parallel``, attempts after a known winner are cancelled if they
    have not started.
    """
    records: list[AttemptRecord] = []
    if execution == "sequential":
        for i, run in enumerate(attempts):
            rec = run()
            records.append(rec)
            if rec.success:
                return i, records
        return None, records
    if execution != "parallel":
        raise ValueError(f"unknown execution contract {execution!r}")
    if not attempts:
        return None, records
    with ThreadPoolExecutor(max_workers=max_workers or len(attempts)) as pool:
        futures = [pool.submit(run) for run in attempts]
        for i, fut in enumerate(futures):
            rec = fut.result()
            records.append(rec)
            if rec.success:
                for later in futures[i + 1:]:
                    later.cancel()
                return i, records
    return None, records


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def child_rng(ss: np.random.SeedSequence, *key: int) -> np.random.Generator:
    """Generator for stream ``key`` under ``ss``; independent of draw order elsewhere."""
    return np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + key))


# rng stream roles under a trial's seed sequence
STREAM_INITIAL, STREAM_METRIC, STREAM_ATTEMPT = 0, 1, 2


class CheckAgnosiaDecoder:
    """Initial NMS decode followed, on failure, by check-agnosia retries."""

    def __init__(self, graph: TannerGraph | ParityCheckMatrix, dec_cfg: DecoderConfig, pp_cfg: PostProcessConfig):
        if isinstance(graph, ParityCheckMatrix):
            graph = build_tanner(graph)
        self.graph = graph
        self.h = graph.h
        if pp_cfg.i_delta is not None:
            dec_cfg = replace(dec_cfg, i_delta=pp_cfg.i_delta)
        self.dec_cfg = dec_cfg
        self.pp_cfg = pp_cfg
        self.decoder = NmsDecoder(graph.h, dec_cfg)
        self._sets: dict[int, NeighborhoodSets] = {}
        self._warned = False

    def sets_for(self, c: int) -> NeighborhoodSets:
        sets = self._sets.get(c)
        if sets is None:
            sets = self._sets[c] = neighborhood_sets(self.graph, c)
        return sets

    def _assert_sound(self, e_hat, s) -> None:
        if not np.array_equal(syndrome(self.h, e_hat), s):
            raise AssertionError("post-processing returned an estimate that does not match the syndrome")

    def initial_decode(self, s, priors, seed=None) -> DecodeOutcome:
        ss = _seed_sequence(seed)
        return self.decoder.decode(s, priors, rng=child_rng(ss, STREAM_INITIAL))

    def select(self, initial: DecodeOutcome, seed=None) -> list[int]:
        ss = _seed_sequence(seed)
        metric = self.pp_cfg.metric
        values = initial.abs_sum_snapshot if metric == "abs_sum" else initial.delta_snapshot
        if values is None and metric != "random":
            raise ValueError("no reliability snapshot: the initial decode stopped before i_delta")
        return select_least_reliable(values, self.pp_cfg.lam, metric, rng=child_rng(ss, STREAM_METRIC),
                                     n_checks=self.h.n_checks)

    def attempt(self, k: int, c_k: int, s, priors, seed=None) -> AttemptRecord:
        """Retry ``k`` (1-based): erase the priors on ``N(c_k)`` and decode again."""
        ss = _seed_sequence(seed)
        sets = self.sets_for(c_k)
        erased_priors = np.array(priors, dtype=np.int32)
        erased_priors[list(sets.erased_qubits)] = 0
        rng = child_rng(ss, STREAM_ATTEMPT, k)
        if self.pp_cfg.mode == "alg2":
            out = self.decoder.decode(s, erased_priors, rng=rng)
            return AttemptRecord(k, c_k, out.converged, out.converged, out.iterations_used,
                                 e_hat=out.e_hat if out.converged else None)

        out = self.decoder.decode(s, erased_priors, active=sets.active_mask(self.h.n_checks), rng=rng)
        rec = AttemptRecord(k, c_k, False, out.converged, out.iterations_used)
        if not out.converged:
            return rec
        if np.array_equal(syndrome(self.h, out.e_hat), s):
            rec.success, rec.e_hat = True, out.e_hat
            return rec
        rec.solver_called = True
        sol = brute_force_residual(self.h, sets, out.e_hat, s)
        if sol is None:
            rec.unsatisfiable = True
            return rec
        rec.success, rec.e_hat = True, sol.e_hat
        return rec

    def decode(self, s, priors, seed=None) -> CAResult:
        s = np.asarray(s, dtype=np.uint8)
        ss = _seed_sequence(seed)
        initial = self.initial_decode(s, priors, ss)
        if initial.converged:
            return CAResult(True, initial.e_hat, initial)
        selected = self.select(initial, ss)
        if self.pp_cfg.mode == "alg2" and not self._warned:
            bad = [c for c in selected if not self.graph.peeling_report[c][0]]
            if bad:
                self._warned = True
                warnings.warn(f"check {bad[0]} support contains a stopping set; alg2 may not resolve it",
                              stacklevel=2)
        jobs = [
            (lambda k=k, c=c: self.attempt(k, c, s, priors, ss))
            for k, c in enumerate(selected, start=1)
        ]
        win, records = execute_postprocess(jobs, self.pp_cfg.execution, self.pp_cfg.max_workers)
        if win is None:
            return CAResult(False, None, initial, selected, None, records)
        e_hat = records[win].e_hat
        self._assert_sound(e_hat, s)
        return CAResult(True, e_hat, initial, selected, win + 1, records)


def ca_decode_alg1(graph, s, priors, dec_cfg: DecoderConfig, pp_cfg: PostProcessConfig | None = None,
                   seed=None) -> CAResult:
    pp_cfg = replace(pp_cfg or PostProcessConfig(), mode="alg1")
    return CheckAgnosiaDecoder(graph, dec_cfg, pp_cfg).decode(s, priors, seed)


def ca_decode_alg2(graph, s, priors, dec_cfg: DecoderConfig, pp_cfg: PostProcessConfig | None = None,
                   seed=None) -> CAResult:
    pp_cfg = replace(pp_cfg or PostProcessConfig(), mode="alg2")
    return CheckAgnosiaDecoder(graph, dec_cfg, pp_cfg).decode(s, priors, seed)
