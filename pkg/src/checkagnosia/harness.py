"""Monte-Carlo logical-error-rate experiments.

Trial ``i`` at grid point ``j`` draws every random number from streams keyed
by ``(seed, j, i)``, so results do not depend on trial order or on how
trials are split across worker processes. Aggregates are integer sums.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from statistics import NormalDist
from typing import Any, Iterable, Mapping, TextIO

import numpy as np
import yaml

from .agnosia import CheckAgnosiaDecoder, PostProcessConfig
from .code_model import CssCode, build_tanner, has_four_cycles, layer_cover_for, load_alist, validate_css
from .gf2 import ChannelConfig, is_logical_failure, sample_error, syndrome
from .nms import DecoderConfig, quantize_priors

log = logging.getLogger(__name__)

WORKERS_ENV = "CHECKAGNOSIA_WORKERS"

CSV_FIELDS = (
    "p", "trials", "mp_failures", "pp_rescues", "decoding_failures", "logical_failures",
    "ler", "ler_ci_low", "ler_ci_high", "mean_iters", "mean_win_k",
)

_SCHEDULE_DEFAULTS = {
    "flooded": {"i_max": 60, "s_nms": 0.875, "llr_init": 12, "layer_order": "fixed"},
    "layered": {"i_max": 15, "s_nms": 0.9375, "llr_init": 8, "layer_order": "random"},
}


class ConfigError(ValueError):
    pass


class SoundnessError(RuntimeError):
    """A decoder reported success with an estimate that misses the syndrome."""


@dataclass(frozen=True)
class ExperimentConfig:
    hx: str | None = None
    hz: str | None = None
    layer_cover: str | None = None
    layer_t: int = 1
    error_type: str = "X"
    p_values: tuple[float, ...] = (0.01,)
    trials: int = 1000
    seed: int = 0
    schedule: str = "flooded"
    i_max: int | None = None
    s_nms: float | None = None
    llr_init: int | None = None
    layer_order: str | None = None
    i_delta: int | None = None
    lam: int = 10
    metric: str = "min2sum"
    mode: str = "alg2"
    execution: str = "sequential"
    baseline: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not self.p_values:
            raise ConfigError("p_values is empty")
        for p in self.p_values:
            if not 0.0 < p < 0.5:
                raise ConfigError(f"p values must lie strictly in (0, 0.5), got {p}")
        if self.schedule not in _SCHEDULE_DEFAULTS:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if str(self.error_type).upper() not in ("X", "Z"):
            raise ConfigError(f"error_type must be X or Z, got {self.error_type!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        defaults = _SCHEDULE_DEFAULTS[self.schedule]
        for key, value in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        try:
            self.decoder_config(None)
            self.pp_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def decoder_config(self, layer_cover) -> DecoderConfig:
        return DecoderConfig(
            schedule=self.schedule, i_max=self.i_max, s_nms=self.s_nms, llr_init=self.llr_init,
            layer_order=self.layer_order, i_delta=self.i_delta, layer_cover=layer_cover,
        )

    def pp_config(self) -> PostProcessConfig:
        return PostProcessConfig(lam=self.lam, metric=self.metric, mode=self.mode, execution=self.execution)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["p_values"] = list(self.p_values)
        return d

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: str | os.PathLike | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        data = dict(data)
        if isinstance(data.get("p_values"), (int, float)):
            data["p_values"] = [data["p_values"]]
        if base_dir is not None:
            for key in ("hx", "hz", "layer_cover"):
                if data.get(key) and not os.path.isabs(data[key]):
                    data[key] = os.path.join(base_dir, data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | os.PathLike, **overrides) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat key/value mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data, base_dir=os.path.dirname(os.path.abspath(path)))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


@dataclass(frozen=True)
class ResultRow:
    p: float
    trials: int
    mp_failures: int
    pp_rescues: int
    decoding_failures: int
    logical_failures: int
    ler: float
    ler_ci_low: float
    ler_ci_high: float
    mean_iters: float
    mean_win_k: float | None


@dataclass(frozen=True)
class PairedComparison:
    """Baseline NMS and check-agnosia scored on the same error samples."""

    p: float
    trials: int
    baseline_failures: int
    ca_failures: int
    baseline_only: int
    ca_only: int

    @property
    def p_value(self) -> float:
        """One-sided exact sign test of "CA fails less often" on the discordant pairs."""
        return sign_test_p_value(self.baseline_only, self.ca_only)


def sign_test_p_value(wins: int, losses: int) -> float:
    n = wins + losses
    if n == 0:
        return 1.0
    tail = sum(math.comb(n, k) for k in range(wins, n + 1))
    return tail / 2 ** n


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    z2 = z * z
    denom = n + z2
    center = (k + z2 / 2) / denom
    half = z / denom * math.sqrt(k * (n - k) / n + z2 / 4)
    low = 0.0 if k == 0 else max(0.0, center - half)
    high = z2 / denom if k == 0 else min(1.0, center + half)
    return low, high


# --- trial execution -------------------------------------------------------------

_COUNTERS = (
    "trials", "mp_failures", "pp_rescues", "decoding_failures", "logical_failures", "iters",
    "win_k", "solver_calls", "unsat", "baseline_failures", "baseline_only", "ca_only",
)


@dataclass
class _Context:
    cfg: ExperimentConfig
    code: CssCode
    decoder: CheckAgnosiaDecoder = field(init=False)
    priors: Any = field(init=False)

    def __post_init__(self):
        h = self.code.decoding_matrix(self.cfg.error_type)
        cover = None
        if self.cfg.schedule == "layered":
            cover = layer_cover_for(h, self.cfg.layer_t, self.cfg.layer_cover)
        self.decoder = CheckAgnosiaDecoder(build_tanner(h), self.cfg.decoder_config(cover), self.cfg.pp_config())
        self.priors = quantize_priors(h.n_qubits, self.cfg.llr_init)


def trial_seed(seed: int, p_index: int, trial: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(p_index, trial, stream))


def run_trial(ctx: _Context, p_index: int, p: float, trial: int) -> dict[str, int]:
    cfg, code, dec = ctx.cfg, ctx.code, ctx.decoder
    h = dec.h
    e = sample_error(ChannelConfig(p, cfg.error_type), h.n_qubits,
                     np.random.default_rng(trial_seed(cfg.seed, p_index, trial, 0)))
    s = syndrome(h, e)
    ss = trial_seed(cfg.seed, p_index, trial, 1)
    if cfg.baseline:
        initial = dec.initial_decode(s, ctx.priors, ss)
        success, e_hat, win = initial.converged, initial.e_hat, None
        solver = unsat = 0
    else:
        res = dec.decode(s, ctx.priors, ss)
        initial, success, e_hat, win = res.initial, res.success, res.e_hat, res.winner
        solver, unsat = res.solver_calls, res.unsat_count
    if success and not np.array_equal(syndrome(h, e_hat), s):
        raise SoundnessError(f"p={p} trial {trial}: accepted estimate violates the syndrome")
    logical = (not success) or is_logical_failure(code, e, e_hat, cfg.error_type)
    base_logical = (not initial.converged) or is_logical_failure(code, e, initial.e_hat, cfg.error_type)
    return {
        "trials": 1,
        "mp_failures": int(not initial.converged),
        "pp_rescues": int(win is not None),
        "decoding_failures": int(not success),
        "logical_failures": int(logical),
        "iters": initial.iterations_used,
        "win_k": win or 0,
        "solver_calls": solver,
        "unsat": unsat,
        "baseline_failures": int(base_logical),
        "baseline_only": int(base_logical and not logical),
        "ca_only": int(logical and not base_logical),
    }


def _run_chunk(ctx: _Context, p_index: int, p: float, start: int, stop: int) -> dict[str, int]:
    tot = dict.fromkeys(_COUNTERS, 0)
    for i in range(start, stop):
        for k, v in run_trial(ctx, p_index, p, i).items():
            tot[k] += v
    return tot


_worker_ctx: _Context | None = None


def _init_worker(cfg: ExperimentConfig, code: CssCode) -> None:
    global _worker_ctx
    _worker_ctx = _Context(cfg, code)


def _worker_chunk(p_index: int, p: float, start: int, stop: int) -> tuple[int, dict[str, int]]:
    return p_index, _run_chunk(_worker_ctx, p_index, p, start, stop)


def load_code(cfg: ExperimentConfig) -> CssCode:
    if not cfg.hx or not cfg.hz:
        raise ConfigError("hx and hz matrix files are required")
    try:
        code = CssCode(load_alist(cfg.hx), load_alist(cfg.hz))
    except OSError as exc:
        raise ConfigError(f"cannot read code file: {exc}") from None
    if not validate_css(code):
        raise ConfigError("h_x and h_z do not commute: not a CSS code")
    return code


def simulate(cfg: ExperimentConfig, code: CssCode | None = None, chunk: int = 2000) -> list[dict[str, int]]:
    """Raw integer counters per grid point."""
    if code is None:
        code = load_code(cfg)
    ctx = _Context(cfg, code)
    if cfg.mode == "alg2" and not cfg.baseline:
        # advisory only; retries still run
        bad = [c for c, (ok, _) in enumerate(ctx.decoder.graph.peeling_report) if not ok]
        if bad:
            log.warning("%d check supports contain stopping sets; alg2 may not resolve them", len(bad))
    totals = [dict.fromkeys(_COUNTERS, 0) for _ in cfg.p_values]
    tasks = [(j, p, a, min(a + chunk, cfg.trials))
             for j, p in enumerate(cfg.p_values) for a in range(0, cfg.trials, chunk)]
    if cfg.workers == 1:
        parts = [(j, _run_chunk(ctx, j, p, a, b)) for j, p, a, b in tasks]
    else:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(cfg, code)) as pool:
            parts = list(pool.map(_worker_chunk, *zip(*tasks)))
    for j, part in parts:
        for k, v in part.items():
            totals[j][k] += v
    return totals


def _row(p: float, t: Mapping[str, int]) -> ResultRow:
    n = t["trials"]
    low, high = wilson_interval(t["logical_failures"], n)
    return ResultRow(
        p=p, trials=n, mp_failures=t["mp_failures"], pp_rescues=t["pp_rescues"],
        decoding_failures=t["decoding_failures"], logical_failures=t["logical_failures"],
        ler=t["logical_failures"] / n, ler_ci_low=low, ler_ci_high=high,
        mean_iters=t["iters"] / n,
        mean_win_k=t["win_k"] / t["pp_rescues"] if t["pp_rescues"] else None,
    )


def run_experiment(cfg: ExperimentConfig, code: CssCode | None = None) -> list[ResultRow]:
    return [_row(p, t) for p, t in zip(cfg.p_values, simulate(cfg, code))]


def run_paired(cfg: ExperimentConfig, code: CssCode | None = None) -> list[PairedComparison]:
    """Check-agnosia against plain NMS on shared error samples (``cfg.baseline`` ignored)."""
    cfg = replace(cfg, baseline=False)
    return [
        PairedComparison(p, t["trials"], t["baseline_failures"], t["logical_failures"],
                         t["baseline_only"], t["ca_only"])
        for p, t in zip(cfg.p_values, simulate(cfg, code))
    ]


def pilot_p(cfg: ExperimentConfig, target: float, code: CssCode | None = None, lo: float = 1e-4,
            hi: float = 0.2, trials: int = 2000, steps: int = 10) -> float:
    """Bisect (in log p) for the physical rate where the plain NMS failure rate is ``target``."""
    if code is None:
        code = load_code(cfg)
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        row = run_experiment(replace(cfg, baseline=True, p_values=(mid,), trials=trials), code)[0]
        if row.ler < target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


# --- result emission ---------------------------------------------------------------


def _csv_value(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def format_csv(rows: Iterable[ResultRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([_csv_value(getattr(r, f)) for f in CSV_FIELDS])
    return out.getvalue()


def format_json(rows: Iterable[ResultRow], config: ExperimentConfig | None = None) -> str:
    doc = {
        "seed": config.seed if config else None,
        "config": config.to_dict() if config else None,
        "rows": [asdict(r) for r in rows],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_json_rows(text: str) -> list[ResultRow]:
    return [ResultRow(**r) for r in json.loads(text)["rows"]]


def parse_csv_rows(text: str) -> list[ResultRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for f in fields(ResultRow):
            raw = rec[f.name]
            if f.name in ("trials", "mp_failures", "pp_rescues", "decoding_failures", "logical_failures"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = None if raw == "" else float(raw)
        rows.append(ResultRow(**kw))
    return rows


def emit_results(rows: Iterable[ResultRow], fmt: str = "csv", destination: str | os.PathLike | TextIO = "-",
                 config: ExperimentConfig | None = None) -> None:
    if fmt == "csv":
        text = format_csv(rows)
    elif fmt == "json":
        text = format_json(rows, config)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if destination == "-" or destination is None:
        sys.stdout.write(text)
    elif hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_text(text, encoding="utf-8")


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def code_report(code: CssCode, error_type: str = "X") -> dict[str, Any]:
    """Structural checks used by the ``validate`` command."""
    h = code.decoding_matrix(error_type)
    graph = build_tanner(h)
    peel = graph.peeling_report
    return {
        "n_checks": h.n_checks,
        "n_qubits": h.n_qubits,
        "row_weights": sorted(set(h.row_weights())),
        "column_weights": sorted(set(h.column_weights())),
        "css": validate_css(code),
        "four_cycle_free": not has_four_cycles(h),
        "no_stopping_subset": all(ok for ok, _ in peel),
        "max_peeling_rounds": max((r for _, r in peel), default=0),
        "isolated_qubits": len(graph.isolated_qubits),
    }
