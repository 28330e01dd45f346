"""Bit-accurate quantized normalized min-sum decoding (flooded and layered).

Integer conventions, chosen to mirror a fixed-point datapath:

* LLR sign: positive means "no error"; the hard decision is ``e_v = 1`` iff
  the a-posteriori value is ``<= 0``.
* Messages saturate to ``[-msg_max, msg_max]``, a-posteriori values to
  ``[-llr_max, llr_max]``.
* Check-to-qubit magnitudes come from the first/second minimum of the
  incoming magnitudes and are scaled by shift-and-subtract, e.g.
  ``x * 0.875 -> x - (x >> 3)``.
* The target parity of check ``c`` is the syndrome bit ``s_c``.

The inner loops are compiled with numba; the Python layer only prepares
arrays and wraps results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .code_model import LayerCover, ParityCheckMatrix, TannerGraph

SCHEDULES = ("flooded", "layered")
LAYER_ORDERS = ("fixed", "random")
_MAX_SHIFT = 16


@dataclass(frozen=True)
class FixedPointParams:
    msg_bits: int = 6
    llr_bits: int = 8

    def __post_init__(self):
        if self.msg_bits < 2 or self.llr_bits < self.msg_bits:
            raise ValueError("need 2 <= msg_bits <= llr_bits")

    @property
    def msg_max(self) -> int:
        return (1 << (self.msg_bits - 1)) - 1

    @property
    def llr_max(self) -> int:
        return (1 << (self.llr_bits - 1)) - 1


def scaling_shifts(s_nms: float) -> tuple[int, ...]:
    """Shifts ``k_i`` with ``s_nms == 1 - sum(2**-k_i)``.

    >>> scaling_shifts(0.875), scaling_shifts(0.9375), scaling_shifts(1.0)
    ((3,), (4,), ())
    """
    s = Fraction(s_nms)
    if not 0 < s <= 1:
        raise ValueError(f"s_nms must lie in (0, 1], got {s_nms}")
    rest = 1 - s
    if rest.denominator & (rest.denominator - 1) or rest.denominator > (1 << _MAX_SHIFT):
        raise ValueError(f"s_nms={s_nms} is not a sum of powers of two down to 2^-{_MAX_SHIFT}")
    shifts = []
    for k in range(1, _MAX_SHIFT + 1):
        if rest >= Fraction(1, 1 << k):
            rest -= Fraction(1, 1 << k)
            shifts.append(k)
    return tuple(shifts)


def scale_magnitude(x: int, s_nms: float) -> int:
    """Scale a non-negative integer magnitude, e.g. ``scale_magnitude(8, 0.875) == 7``."""
    y = int(x)
    for k in scaling_shifts(s_nms):
        y -= int(x) >> k
    return y


@dataclass(frozen=True)
class DecoderConfig:
    schedule: str = "flooded"
    i_max: int = 60
    s_nms: float = 0.875
    llr_init: int = 12
    layer_order: str = "fixed"
    i_delta: int | None = None
    layer_cover: LayerCover | None = None
    fixed_point: FixedPointParams = field(default_factory=FixedPointParams)

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.layer_order not in LAYER_ORDERS:
            raise ValueError(f"layer_order must be one of {LAYER_ORDERS}, got {self.layer_order!r}")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if self.i_delta is None:
            object.__setattr__(self, "i_delta", self.i_max)
        if not 1 <= self.i_delta <= self.i_max:
            raise ValueError(f"i_delta must lie in [1, i_max={self.i_max}], got {self.i_delta}")
        if not 0 < self.llr_init <= self.fixed_point.llr_max:
            raise ValueError(f"llr_init must lie in (0, {self.fixed_point.llr_max}]")
        scaling_shifts(self.s_nms)

    @classmethod
    def flooded(cls, **kw) -> "DecoderConfig":
        """Flooded defaults: 60 iterations, LLR_init 12, scaling 0.875."""
        return cls(**{"schedule": "flooded", "i_max": 60, "s_nms": 0.875, "llr_init": 12, **kw})

    @classmethod
    def layered(cls, layer_cover: LayerCover | None = None, **kw) -> "DecoderConfig":
        """Layered defaults: 15 iterations, LLR_init 8, scaling 0.9375, random layer order."""
        base = {"schedule": "layered", "i_max": 15, "s_nms": 0.9375, "llr_init": 8, "layer_order": "random"}
        return cls(layer_cover=layer_cover, **{**base, **kw})


@dataclass
class MessageState:
    """Mutable decoder state; check-side storage is min1/min2 compressed."""

    prior: np.ndarray
    syndrome: np.ndarray
    v2c: np.ndarray
    c2v: np.ndarray
    posterior: np.ndarray
    min1: np.ndarray
    min2: np.ndarray
    min1_edge: np.ndarray
    sign_parity: np.ndarray
    abs_sum: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, h: ParityCheckMatrix, syndrome, prior, params: FixedPointParams) -> "MessageState":
        prior = np.asarray(prior, dtype=np.int32)
        n_e, n_c = h.n_edges, h.n_checks
        return cls(
            prior=prior,
            syndrome=np.asarray(syndrome, dtype=np.uint8),
            v2c=np.zeros(n_e, dtype=np.int32),
            c2v=np.zeros(n_e, dtype=np.int32),
            posterior=np.clip(prior, -params.llr_max, params.llr_max).astype(np.int32),
            min1=np.zeros(n_c, dtype=np.int32),
            min2=np.zeros(n_c, dtype=np.int32),
            min1_edge=h.indptr[:-1].copy(),
            sign_parity=np.zeros(n_c, dtype=np.uint8),
            abs_sum=np.zeros(n_c, dtype=np.int32),
        )

    def hard_decision(self) -> np.ndarray:
        return (self.posterior <= 0).astype(np.uint8)

    def delta(self) -> np.ndarray:
        return (self.min1 + self.min2).astype(np.int32)


@dataclass
class DecodeOutcome:
    e_hat: np.ndarray
    converged: bool
    iterations_used: int
    delta_snapshot: np.ndarray | None
    posterior: np.ndarray
    abs_sum_snapshot: np.ndarray | None = None
    max_msg_seen: int = 0
    max_llr_seen: int = 0


# --- compiled kernels ------------------------------------------------------


@njit(cache=True)
def _sat(x, m):
    if x > m:
        return m
    if x < -m:
        return -m
    return x


@njit(cache=True)
def _scale(x, shifts):
    y = x
    for k in shifts:
        y -= x >> k
    return y


@njit(cache=True)
def _check_update(c, indptr, v2c, c2v, synd, shifts, msg_max, min1, min2, min1_edge, sign_parity, abs_sum):
    a = indptr[c]
    b = indptr[c + 1]
    m1 = msg_max + 1
    m2 = msg_max + 1
    idx = a
    par = 0
    tot = 0
    for e in range(a, b):
        x = v2c[e]
        mag = -x if x < 0 else x
        tot += mag
        if x < 0:
            par ^= 1
        if mag < m1:
            m2 = m1
            m1 = mag
            idx = e
        elif mag < m2:
            m2 = mag
    # a degree-1 check has no second input: its register stays at full scale
    if m2 > msg_max:
        m2 = msg_max
    min1[c] = m1
    min2[c] = m2
    min1_edge[c] = idx
    sign_parity[c] = par
    abs_sum[c] = tot
    out1 = _scale(m1, shifts)
    out2 = _scale(m2, shifts)
    par ^= synd[c]
    for e in range(a, b):
        mag = out2 if e == idx else out1
        s = par ^ (1 if v2c[e] < 0 else 0)
        c2v[e] = -mag if s else mag


@njit(cache=True)
def _flooded_iteration(prior, indptr, qubit, synd, shifts, msg_max, llr_max,
                       v2c, c2v, post, acc, min1, min2, min1_edge, sign_parity, abs_sum):
    n = prior.shape[0]
    n_e = qubit.shape[0]
    for v in range(n):
        acc[v] = prior[v]
    for e in range(n_e):
        acc[qubit[e]] += c2v[e]
    for e in range(n_e):
        v2c[e] = _sat(acc[qubit[e]] - c2v[e], msg_max)
    for c in range(indptr.shape[0] - 1):
        _check_update(c, indptr, v2c, c2v, synd, shifts, msg_max, min1, min2, min1_edge, sign_parity, abs_sum)
    for v in range(n):
        acc[v] = prior[v]
    for e in range(n_e):
        acc[qubit[e]] += c2v[e]
    for v in range(n):
        post[v] = _sat(acc[v], llr_max)


@njit(cache=True)
def _layer_update(checks, indptr, qubit, synd, shifts, msg_max, llr_max,
                  v2c, c2v, post, tmp, min1, min2, min1_edge, sign_parity, abs_sum):
    for c in checks:
        for e in range(indptr[c], indptr[c + 1]):
            t = _sat(post[qubit[e]] - c2v[e], llr_max)
            tmp[e] = t
            v2c[e] = _sat(t, msg_max)
        _check_update(c, indptr, v2c, c2v, synd, shifts, msg_max, min1, min2, min1_edge, sign_parity, abs_sum)
        for e in range(indptr[c], indptr[c + 1]):
            post[qubit[e]] = _sat(tmp[e] + c2v[e], llr_max)


@njit(cache=True)
def _satisfied(post, indptr, qubit, synd, active):
    for c in range(indptr.shape[0] - 1):
        if active[c]:
            par = synd[c]
            for e in range(indptr[c], indptr[c + 1]):
                if post[qubit[e]] <= 0:
                    par ^= 1
            if par:
                return False
    return True


@njit(cache=True)
def _max_abs(a):
    m = 0
    for x in a:
        if x > m:
            m = x
        elif -x > m:
            m = -x
    return m


@njit(cache=True, nogil=True)
def _decode(prior, indptr, qubit, synd, active, shifts, msg_max, llr_max, i_max, i_delta,
            layered, layer_ptr, layer_checks, layer_seq, iter_end, track):
    n = prior.shape[0]
    n_e = qubit.shape[0]
    n_c = indptr.shape[0] - 1
    v2c = np.zeros(n_e, dtype=np.int32)
    c2v = np.zeros(n_e, dtype=np.int32)
    tmp = np.zeros(n_e, dtype=np.int32)
    acc = np.zeros(n, dtype=np.int32)
    post = np.empty(n, dtype=np.int32)
    for v in range(n):
        post[v] = _sat(prior[v], llr_max)
    min1 = np.zeros(n_c, dtype=np.int32)
    min2 = np.zeros(n_c, dtype=np.int32)
    min1_edge = indptr[:-1].copy()
    sign_parity = np.zeros(n_c, dtype=np.uint8)
    abs_sum = np.zeros(n_c, dtype=np.int32)
    delta = np.zeros(n_c, dtype=np.int32)
    abs_snap = np.zeros(n_c, dtype=np.int32)
    snapped = False
    converged = False
    max_msg = 0
    max_llr = _max_abs(post)
    pos = 0
    it = 0
    for it in range(1, i_max + 1):
        if layered:
            while pos < iter_end[it - 1]:
                lay = layer_seq[pos]
                _layer_update(layer_checks[layer_ptr[lay]:layer_ptr[lay + 1]], indptr, qubit, synd, shifts,
                              msg_max, llr_max, v2c, c2v, post, tmp, min1, min2, min1_edge, sign_parity, abs_sum)
                pos += 1
                if track:
                    max_msg = max(max_msg, _max_abs(v2c), _max_abs(c2v))
                    max_llr = max(max_llr, _max_abs(post))
        else:
            _flooded_iteration(prior, indptr, qubit, synd, shifts, msg_max, llr_max,
                               v2c, c2v, post, acc, min1, min2, min1_edge, sign_parity, abs_sum)
            if track:
                max_msg = max(max_msg, _max_abs(v2c), _max_abs(c2v))
                max_llr = max(max_llr, _max_abs(post))
        if it == i_delta:
            for c in range(n_c):
                delta[c] = min1[c] + min2[c]
                abs_snap[c] = abs_sum[c]
            snapped = True
        if _satisfied(post, indptr, qubit, synd, active):
            converged = True
            break
    return post, it, converged, snapped, delta, abs_snap, max_msg, max_llr


# --- Python surface ------------------------------------------------------------


def quantize_priors(n: int, llr_init: int | None = None, erasure=None, p: float | None = None,
                    params: FixedPointParams = FixedPointParams()) -> np.ndarray:
    """Uniform prior vector; entries in ``erasure`` (mask or index list) are set to 0.

    With ``p`` instead of ``llr_init`` the magnitude is ``round(log((1-p)/p))``
    clipped to ``[1, llr_max]``.
    """
    if llr_init is None:
        if p is None:
            raise ValueError("give llr_init or p")
        llr_init = int(np.clip(round(np.log((1 - p) / p)), 1, params.llr_max))
    if not 0 < llr_init <= params.llr_max:
        raise ValueError(f"llr_init must lie in (0, {params.llr_max}]")
    out = np.full(n, llr_init, dtype=np.int32)
    if erasure is not None:
        erasure = np.asarray(erasure)
        if erasure.dtype == bool:
            out[erasure] = 0
        else:
            out[erasure.astype(np.int64)] = 0
    return out


def check_node_update(v2c, syndrome_bit: int = 0, s_nms: float = 1.0,
                      params: FixedPointParams = FixedPointParams()):
    """Min-sum update of a single check.

    Returns ``(outgoing, min1, min2, min1_position)`` where ``outgoing`` are
    the scaled check-to-qubit messages.
    """
    v2c = np.asarray(v2c, dtype=np.int32)
    indptr = np.array([0, v2c.size], dtype=np.int64)
    c2v = np.zeros_like(v2c)
    m1, m2, idx = (np.zeros(1, dtype=np.int32), np.zeros(1, dtype=np.int32), np.zeros(1, dtype=np.int64))
    par, tot = np.zeros(1, dtype=np.uint8), np.zeros(1, dtype=np.int32)
    _check_update(0, indptr, v2c, c2v, np.array([syndrome_bit], dtype=np.uint8),
                  np.array(scaling_shifts(s_nms), dtype=np.int64), params.msg_max, m1, m2, idx, par, tot)
    return c2v, int(m1[0]), int(m2[0]), int(idx[0])


def compute_delta(state: MessageState, c: int) -> int:
    """Check reliability: sum of the two smallest incoming magnitudes at ``c``."""
    return int(state.min1[c] + state.min2[c])


class NmsDecoder:
    """Quantized NMS decoder bound to one parity-check matrix and configuration.

    Instances hold only immutable precomputed arrays, so one decoder can be
    shared by many concurrent ``decode`` calls.
    """

    def __init__(self, h: ParityCheckMatrix | TannerGraph, cfg: DecoderConfig):
        if isinstance(h, TannerGraph):
            h = h.h
        self.h = h
        self.cfg = cfg
        self.params = cfg.fixed_point
        self._indptr = h.indptr
        self._qubit = h.indices
        self._shifts = np.array(scaling_shifts(cfg.s_nms), dtype=np.int64)
        self._all_active = np.ones(h.n_checks, dtype=np.uint8)
        if cfg.schedule == "layered":
            cover = cfg.layer_cover
            if cover is None:
                raise ValueError("layered schedule needs a layer cover in DecoderConfig.layer_cover")
            cover.validate(h)
            self._layer_ptr = np.concatenate(([0], np.cumsum([len(l) for l in cover.layers]))).astype(np.int64)
            self._layer_checks = np.fromiter((c for l in cover.layers for c in l), dtype=np.int64)
            n_layers, t = len(cover.layers), cover.t
            # iteration k ends once ceil(k * n_layers / t) layers have been processed
            self._iter_end = np.array([-(-k * n_layers // t) for k in range(1, cfg.i_max + 1)], dtype=np.int64)
        else:
            self._layer_ptr = np.zeros(1, dtype=np.int64)
            self._layer_checks = np.zeros(0, dtype=np.int64)
            self._iter_end = np.zeros(cfg.i_max, dtype=np.int64)

    @property
    def iteration_ends(self) -> np.ndarray:
        """Cumulative layer count at which each iteration ends (layered only)."""
        return self._iter_end.copy()

    def layer_sequence(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """Layer indices in processing order for a full ``i_max`` run.

        Random order draws one uniform permutation per pass over the cover.
        """
        if self.cfg.schedule != "layered":
            return np.zeros(0, dtype=np.int64)
        n_layers = len(self.cfg.layer_cover.layers)
        total = int(self._iter_end[-1])
        passes = -(-total // n_layers)
        if self.cfg.layer_order == "random":
            if rng is None:
                raise ValueError("random layer order needs an rng")
            seq = np.concatenate([rng.permutation(n_layers) for _ in range(passes)])
        else:
            seq = np.tile(np.arange(n_layers), passes)
        return seq[:total].astype(np.int64)

    def decode(self, s, priors, active=None, rng: np.random.Generator | None = None,
               layer_seq: np.ndarray | None = None, track_bounds: bool = False) -> DecodeOutcome:
        """Run NMS on syndrome ``s`` from a-priori values ``priors``.

        ``active`` restricts the stopping rule to a subset of checks (boolean
        mask); by default every check must be satisfied.
        """
        s = np.asarray(s, dtype=np.uint8)
        priors = np.asarray(priors, dtype=np.int32)
        if s.shape != (self.h.n_checks,) or priors.shape != (self.h.n_qubits,):
            raise ValueError("syndrome/prior dimensions do not match the matrix")
        if np.abs(priors).max(initial=0) > self.params.llr_max:
            raise ValueError("prior outside the LLR range")
        active = self._all_active if active is None else np.asarray(active, dtype=np.uint8)
        if layer_seq is None:
            layer_seq = self.layer_sequence(rng)
        cfg = self.cfg
        post, it, converged, snapped, delta, abs_snap, max_msg, max_llr = _decode(
            priors, self._indptr, self._qubit, s, active, self._shifts,
            self.params.msg_max, self.params.llr_max, cfg.i_max, cfg.i_delta,
            cfg.schedule == "layered", self._layer_ptr, self._layer_checks,
            np.asarray(layer_seq, dtype=np.int64), self._iter_end, track_bounds,
        )
        return DecodeOutcome(
            e_hat=(post <= 0).astype(np.uint8),
            converged=bool(converged),
            iterations_used=int(it),
            delta_snapshot=delta if snapped else None,
            posterior=post,
            abs_sum_snapshot=abs_snap if snapped else None,
            max_msg_seen=int(max_msg),
            max_llr_seen=int(max_llr),
        )

    # step-wise API over an explicit MessageState

    def new_state(self, s, priors) -> MessageState:
        return MessageState.initial(self.h, s, priors, self.params)

    def flooded_iteration(self, state: MessageState) -> MessageState:
        acc = np.zeros(self.h.n_qubits, dtype=np.int32)
        _flooded_iteration(state.prior, self._indptr, self._qubit, state.syndrome, self._shifts,
                           self.params.msg_max, self.params.llr_max, state.v2c, state.c2v, state.posterior,
                           acc, state.min1, state.min2, state.min1_edge, state.sign_parity, state.abs_sum)
        state.iteration += 1
        return state

    def layered_iteration(self, state: MessageState, layers) -> MessageState:
        """Process the given layers (each a sequence of check indices) in order."""
        tmp = np.zeros(self.h.n_edges, dtype=np.int32)
        for layer in layers:
            _layer_update(np.asarray(layer, dtype=np.int64), self._indptr, self._qubit, state.syndrome,
                          self._shifts, self.params.msg_max, self.params.llr_max, state.v2c, state.c2v,
                          state.posterior, tmp, state.min1, state.min2, state.min1_edge,
                          state.sign_parity, state.abs_sum)
        state.iteration += 1
        return state

    def is_satisfied(self, state: MessageState, active=None) -> bool:
        active = self._all_active if active is None else np.asarray(active, dtype=np.uint8)
        return bool(_satisfied(state.posterior, self._indptr, self._qubit, state.syndrome, active))


def nms_decode(graph: TannerGraph | ParityCheckMatrix, s, priors, cfg: DecoderConfig, active=None,
               rng: np.random.Generator | None = None) -> DecodeOutcome:
    return NmsDecoder(graph, cfg).decode(s, priors, active=active, rng=rng)
