"""GF(2) helpers, the i.i.d. bit-flip channel and the logical-failure oracle.

Error vectors and syndromes are plain ``uint8`` numpy arrays. Row-space
queries pack rows into Python integers and XOR whole words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .code_model import CssCode, ParityCheckMatrix, _error_type


@dataclass(frozen=True)
class ChannelConfig:
    p: float
    error_type: str = "X"

    def __post_init__(self):
        if not 0.0 < self.p < 0.5:
            raise ValueError(f"p must lie in (0, 0.5), got {self.p}")
        object.__setattr__(self, "error_type", _error_type(self.error_type))


def sample_error(cfg: ChannelConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(n) < cfg.p).astype(np.uint8)


def syndrome(h: ParityCheckMatrix, e) -> np.ndarray:
    e = np.asarray(e, dtype=np.uint8)
    if e.shape != (h.n_qubits,):
        raise ValueError(f"error vector has shape {e.shape}, expected ({h.n_qubits},)")
    if h.n_edges == 0:
        return np.zeros(h.n_checks, dtype=np.uint8)
    return (np.add.reduceat(e[h.indices], h.indptr[:-1]) & 1).astype(np.uint8)


def pack_bits(v) -> int:
    """Bit ``i`` of the result is ``v[i]``."""
    v = np.asarray(v, dtype=np.uint8)
    return int.from_bytes(np.packbits(v, bitorder="little").tobytes(), "little")


def unpack_bits(x: int, n: int) -> np.ndarray:
    raw = np.frombuffer(x.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].copy()


class RowSpace:
    """Echelon basis of a binary row space, one packed integer per basis row.

    Every basis row has a distinct leading (highest) bit; reduction walks the
    basis from the highest pivot down.
    """

    def __init__(self, rows, n_bits: int):
        self.n_bits = n_bits
        basis: list[int] = []
        for r in rows:
            r = self._reduce(r, basis)
            if r:
                basis.append(r)
                basis.sort(reverse=True)
        self.basis = basis

    @staticmethod
    def _reduce(x: int, basis: list[int]) -> int:
        for b in basis:
            if (x >> (b.bit_length() - 1)) & 1:
                x ^= b
        return x

    @property
    def rank(self) -> int:
        return len(self.basis)

    def contains(self, v) -> bool:
        x = v if isinstance(v, int) else pack_bits(v)
        return self._reduce(x, self.basis) == 0

    @classmethod
    def of(cls, m: ParityCheckMatrix) -> "RowSpace":
        """Row space of ``m``, memoised on the (immutable) matrix instance."""
        rs = m.__dict__.get("_rowspace")
        if rs is None:
            rs = cls((sum(1 << q for q in r) for r in m.rows), m.n_qubits)
            m.__dict__["_rowspace"] = rs
        return rs


def gf2_rank(m: ParityCheckMatrix) -> int:
    return RowSpace.of(m).rank


def gf2_rowspace_membership(m: ParityCheckMatrix, v) -> bool:
    v = np.asarray(v, dtype=np.uint8)
    if v.shape != (m.n_qubits,):
        raise ValueError(f"vector has shape {v.shape}, expected ({m.n_qubits},)")
    return RowSpace.of(m).contains(v)


def is_logical_failure(code: CssCode, e, e_hat, error_type: str = "X") -> bool:
    """Decoding failed unless ``e ^ e_hat`` is a same-type stabilizer.

    A residual with non-zero syndrome counts as a failure too, so an
    unconverged estimate is always scored as failed.
    """
    e = np.asarray(e, dtype=np.uint8)
    e_hat = np.asarray(e_hat, dtype=np.uint8)
    if e.shape != e_hat.shape:
        raise ValueError("e and e_hat differ in length")
    r = e ^ e_hat
    if syndrome(code.decoding_matrix(error_type), r).any():
        return True
    return not gf2_rowspace_membership(code.stabilizer_matrix(error_type), r)
