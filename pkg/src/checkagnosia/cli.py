"""Command-line entry point: ``checkagnosia {validate,decode,experiment,hwmodel}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from . import hwmodel
from .agnosia import CheckAgnosiaDecoder
from .code_model import AlistParseError, CssCode, build_tanner, layer_cover_for, load_alist
from .harness import (
    ConfigError,
    ExperimentConfig,
    SoundnessError,
    code_report,
    default_workers,
    emit_results,
    run_experiment,
)
from .nms import quantize_priors


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $CHECKAGNOSIA_WORKERS or 1)")
    p.add_argument("--format", choices=("csv", "json", "text"), default=None, help="output format")
    return p


def _code_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--hx", required=required, help="alist file of H_x")
    p.add_argument("--hz", required=required, help="alist file of H_z")
    p.add_argument("--error-type", choices=("X", "Z"), default=None)


def _decoder_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=("flooded", "layered"))
    p.add_argument("--i-max", type=int)
    p.add_argument("--s-nms", type=float)
    p.add_argument("--llr-init", type=int)
    p.add_argument("--layer-order", choices=("fixed", "random"))
    p.add_argument("--layer-cover", help="layer-cover file (default: greedy construction)")
    p.add_argument("--layer-t", type=int, help="iterations covered per pass for the greedy cover")
    p.add_argument("--i-delta", type=int)
    p.add_argument("--lam", type=int)
    p.add_argument("--metric", choices=("min2sum", "abs_sum", "random"))
    p.add_argument("--mode", choices=("alg1", "alg2"))
    p.add_argument("--execution", choices=("sequential", "parallel"))
    p.add_argument("--baseline", action="store_true", default=None, help="plain NMS, no post-processing")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="checkagnosia", parents=[common],
                                     description="Quantized NMS decoding with check-agnosia post-processing.")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="structural checks of a CSS code")
    _code_args(v)

    d = sub.add_parser("decode", parents=[common], help="decode one syndrome")
    _code_args(d)
    d.add_argument("--syndrome", required=True, help="file with the syndrome bits (0/1, any spacing)")
    _decoder_args(d)

    e = sub.add_parser("experiment", parents=[common], help="Monte-Carlo sweep from a config file")
    e.add_argument("--config", help="flat YAML key/value config file")
    _code_args(e, required=False)
    _decoder_args(e)
    e.add_argument("--p", dest="p_values", type=float, nargs="+", help="physical error rates")
    e.add_argument("--trials", type=int)
    e.add_argument("--output", default="-", help="output file (default: stdout)")
    e.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    h = sub.add_parser("hwmodel", parents=[common], help="latency/power estimate of one architecture")
    h.add_argument("--schedule", choices=("flooded", "layered"), required=True)
    h.add_argument("--pp-style", choices=("hw-reuse", "dedicated"), required=True)
    h.add_argument("--f", type=float, required=True, help="clock frequency in Hz")
    h.add_argument("--i-max", type=int, required=True)
    h.add_argument("--i-delta", type=int)
    h.add_argument("--eta", type=float, help="layers per iteration (layered)")
    h.add_argument("--lam", type=int, default=10)
    h.add_argument("--n-checks", type=int, required=True)
    h.add_argument("--p-unit", type=float, required=True, help="power of one decoder instance (W)")
    h.add_argument("--sorter-power", type=float, default=0.0, help="additive sorter power (W)")
    return parser


_CONFIG_KEYS = ("hx", "hz", "layer_cover", "layer_t", "error_type", "p_values", "trials", "seed", "schedule",
                "i_max", "s_nms", "llr_init", "layer_order", "i_delta", "lam", "metric", "mode", "execution",
                "baseline", "workers")


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}


def _load_code(args) -> CssCode:
    return CssCode(load_alist(args.hx), load_alist(args.hz))


def _cmd_validate(args) -> int:
    code = _load_code(args)
    rep = code_report(code, args.error_type or "X")
    if args.format == "json":
        print(json.dumps(rep, indent=2))
    else:
        yes = lambda b: "yes" if b else "no"  # noqa: E731
        print(f"matrix: {rep['n_checks']}x{rep['n_qubits']} "
              f"(row weights {rep['row_weights']}, column weights {rep['column_weights']})")
        print(f"CSS: {yes(rep['css'])}")
        print(f"four-cycle-free: {yes(rep['four_cycle_free'])}")
        print(f"no-stopping-subset: {yes(rep['no_stopping_subset'])} (max peeling rounds {rep['max_peeling_rounds']})")
        if rep["isolated_qubits"]:
            print(f"isolated qubits: {rep['isolated_qubits']}")
    return 0 if rep["css"] else 1


def _read_bits(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        text = "".join(fh.read().split())
    if not text or set(text) - {"0", "1"}:
        raise ConfigError(f"{path}: syndrome must consist of 0/1 characters")
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def _cmd_decode(args) -> int:
    code = _load_code(args)
    cfg = ExperimentConfig(**{k: v for k, v in _overrides(args).items() if k not in ("hx", "hz", "workers")})
    h = code.decoding_matrix(cfg.error_type)
    s = _read_bits(args.syndrome)
    if s.size != h.n_checks:
        raise ConfigError(f"syndrome has {s.size} bits, the decoding matrix has {h.n_checks} checks")
    cover = layer_cover_for(h, cfg.layer_t, cfg.layer_cover) if cfg.schedule == "layered" else None
    dec = CheckAgnosiaDecoder(build_tanner(h), cfg.decoder_config(cover), cfg.pp_config())
    priors = quantize_priors(h.n_qubits, cfg.llr_init)
    ss = np.random.SeedSequence(cfg.seed)
    if cfg.baseline:
        init = dec.initial_decode(s, priors, ss)
        result = {"success": init.converged, "e_hat": init.e_hat, "initial_converged": init.converged,
                  "initial_iterations": init.iterations_used, "winner": None, "selected": []}
    else:
        res = dec.decode(s, priors, ss)
        result = {"success": res.success, "e_hat": res.e_hat, "initial_converged": res.initial_converged,
                  "initial_iterations": res.initial.iterations_used, "winner": res.winner,
                  "selected": res.selected, "solver_calls": res.solver_calls, "unsat": res.unsat_count}
    bits = "" if result["e_hat"] is None else "".join(str(int(b)) for b in result["e_hat"])
    if args.format == "json":
        print(json.dumps({**result, "e_hat": bits}, indent=2))
    else:
        print(f"e_hat: {bits if bits else 'decoding failure'}")
        for key, val in result.items():
            if key != "e_hat":
                print(f"{key}: {val}")
    return 0 if result["success"] else 3


def _cmd_experiment(args) -> int:
    overrides = _overrides(args)
    if args.config:
        cfg = ExperimentConfig.load(args.config, **overrides)
    else:
        cfg = ExperimentConfig.from_mapping(overrides)
    if "workers" not in overrides:
        cfg = ExperimentConfig.from_mapping({**cfg.to_dict(), "workers": default_workers()})
    if args.print_config:
        sys.stdout.write(cfg.dump())
        return 0
    rows = run_experiment(cfg)
    emit_results(rows, "json" if args.format == "json" else "csv", args.output, config=cfg)
    return 0


def _cmd_hwmodel(args) -> int:
    spec = hwmodel.ArchitectureSpec(
        schedule=args.schedule, pp_style=args.pp_style, f=args.f, i_max=args.i_max, lam=args.lam,
        n_checks=args.n_checks, p_unit=args.p_unit, i_delta=args.i_delta, eta=args.eta,
        sorter_power_w=args.sorter_power,
    )
    est = hwmodel.sweep([spec])[0]
    if args.format == "json":
        print(json.dumps({**asdict(est), "breakdown": dict(est.breakdown)}, indent=2))
    else:
        print(f"{est.latency_s * 1e6:.2f} µs / {est.power_w:g} W")
        print(f"cycles: {est.cycles:g} (ceil {est.cycles_ceil}); "
              + ", ".join(f"{k} {v:g}" for k, v in est.breakdown.items()))
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "decode": _cmd_decode,
    "experiment": _cmd_experiment,
    "hwmodel": _cmd_hwmodel,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, AlistParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SoundnessError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
