"""Analytical worst-case latency and power of check-agnosia decoder architectures.

Four designs are modelled: flooded or layered message passing, combined with
either one decoder reused for all retries (``hw-reuse``) or one dedicated
decoder per retry (``dedicated``). Cycle counts follow the datapath: one
load cycle per decoder pass, 2 cycles per flooded iteration or ``eta``
cycles per layered iteration, plus a pipelined sorting tree.

Powers are inputs (measured per decoder instance), never derived.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class ArchitectureSpec:
    schedule: str
    pp_style: str
    f: float
    i_max: int
    lam: int
    n_checks: int
    p_unit: float
    i_delta: int | None = None
    eta: float | None = None
    sorter_power_w: float = 0.0

    def __post_init__(self):
        if self.schedule not in ("flooded", "layered"):
            raise ValueError(f"schedule must be 'flooded' or 'layered', got {self.schedule!r}")
        if self.pp_style not in ("hw-reuse", "dedicated"):
            raise ValueError(f"pp_style must be 'hw-reuse' or 'dedicated', got {self.pp_style!r}")
        if self.f <= 0:
            raise ValueError("clock frequency must be positive")
        if self.i_max < 1 or self.lam < 1 or self.n_checks < 1:
            raise ValueError("i_max, lam and n_checks must be >= 1")
        if self.schedule == "layered" and (self.eta is None or self.eta <= 0):
            raise ValueError("layered schedule needs eta > 0")
        if self.pp_style == "dedicated":
            if self.i_delta is None:
                object.__setattr__(self, "i_delta", self.i_max)
            if not 1 <= self.i_delta <= self.i_max:
                raise ValueError("i_delta must lie in [1, i_max]")

    @property
    def cycles_per_iteration(self) -> float:
        return 2 if self.schedule == "flooded" else self.eta


@dataclass(frozen=True)
class LatencyPowerEstimate:
    spec: ArchitectureSpec
    cycles: float
    cycles_ceil: int
    latency_s: float
    latency_ceil_s: float
    power_w: float
    breakdown: Mapping[str, float] = field(default_factory=dict)
    pareto: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["breakdown"] = dict(self.breakdown)
        return d


def sorter_cycles(lam: int, n_checks: int) -> int:
    """Cycles to extract the ``lam`` smallest of ``n_checks`` values: ceil(lam/2) * ceil(log2 n_checks)."""
    if lam < 1 or n_checks < 1:
        raise ValueError("lam and n_checks must be >= 1")
    depth = (n_checks - 1).bit_length()
    return -(-lam // 2) * depth


def decoder_pass_cycles(schedule: str, iterations: int, eta: float | None = None) -> float:
    per_it = 2 if schedule == "flooded" else eta
    return 1 + per_it * iterations


def estimate(spec: ArchitectureSpec) -> LatencyPowerEstimate:
    full_pass = decoder_pass_cycles(spec.schedule, spec.i_max, spec.eta)
    sort = sorter_cycles(spec.lam, spec.n_checks)
    if spec.pp_style == "hw-reuse":
        initial = full_pass
        post = spec.lam * full_pass
        power = spec.p_unit
    else:
        initial = decoder_pass_cycles(spec.schedule, spec.i_delta, spec.eta)
        post = full_pass
        power = (spec.lam + 1) * spec.p_unit
    cycles = initial + sort + post
    cycles_ceil = math.ceil(initial) + sort + math.ceil(post)
    return LatencyPowerEstimate(
        spec=spec,
        cycles=cycles,
        cycles_ceil=cycles_ceil,
        latency_s=cycles / spec.f,
        latency_ceil_s=cycles_ceil / spec.f,
        power_w=power + spec.sorter_power_w,
        breakdown={"initial_mp": initial, "sorter": sort, "post_processing": post},
    )


def pareto_flags(points: Sequence[tuple[float, float]]) -> list[bool]:
    """Non-domination flags for (latency, power) pairs, smaller is better in both."""
    flags = []
    for i, (lat, pw) in enumerate(points):
        dominated = any(
            (l2 <= lat and p2 <= pw) and (l2 < lat or p2 < pw)
            for j, (l2, p2) in enumerate(points) if j != i
        )
        flags.append(not dominated)
    return flags


def sweep(template: ArchitectureSpec | Iterable[ArchitectureSpec],
          grid: Mapping[str, Sequence] | None = None) -> list[LatencyPowerEstimate]:
    """Evaluate the Cartesian product of ``grid`` over ``template`` and flag the Pareto front.

    ``template`` may also be an explicit list of specs (``grid`` ignored).
    """
    if isinstance(template, ArchitectureSpec):
        grid = grid or {}
        keys = list(grid)
        specs = [replace(template, **dict(zip(keys, combo)))
                 for combo in itertools.product(*(grid[k] for k in keys))]
    else:
        specs = list(template)
    estimates = [estimate(s) for s in specs]
    flags = pareto_flags([(e.latency_s, e.power_w) for e in estimates])
    return [replace(e, pareto=f) for e, f in zip(estimates, flags)]


def reference_designs(i_f: int = 30, i_l: int = 15, lam: int = 10, n_checks: int = 441,
                   f_f: float = 100e6, f_l: float = 80e6, eta: float = 3.5,
                   p_f: float = 5.5, p_l: float = 2.03, early: int = 3) -> dict[str, ArchitectureSpec]:
    """Six FPGA design points: both schedules, reused or dedicated retries, early or late snapshot."""
    fl = dict(schedule="flooded", f=f_f, i_max=i_f, lam=lam, n_checks=n_checks, p_unit=p_f)
    ly = dict(schedule="layered", f=f_l, i_max=i_l, lam=lam, n_checks=n_checks, p_unit=p_l, eta=eta)
    return {
        "flooded/hw-reuse": ArchitectureSpec(pp_style="hw-reuse", **fl),
        "layered/hw-reuse": ArchitectureSpec(pp_style="hw-reuse", **ly),
        "flooded/dedicated/last": ArchitectureSpec(pp_style="dedicated", i_delta=i_f, **fl),
        "layered/dedicated/last": ArchitectureSpec(pp_style="dedicated", i_delta=i_l, **ly),
        "flooded/dedicated/early": ArchitectureSpec(pp_style="dedicated", i_delta=early, **fl),
        "layered/dedicated/early": ArchitectureSpec(pp_style="dedicated", i_delta=early, **ly),
    }
