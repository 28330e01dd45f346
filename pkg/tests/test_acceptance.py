"""Acceptance criteria 1-9, one test each; every test reports a PASS/FAIL line."""

import math
import os
import warnings
from dataclasses import replace

import numpy as np
import pytest

from checkagnosia.agnosia import CheckAgnosiaDecoder, PostProcessConfig, brute_force_residual, neighborhood_sets
from checkagnosia.cli import main as cli_main
from checkagnosia.code_model import (
    CssCode,
    ParityCheckMatrix,
    build_layer_cover,
    build_tanner,
    format_alist,
    load_alist,
    no_stopping_subset_check,
)
from checkagnosia.gf2 import syndrome
from checkagnosia.harness import ExperimentConfig, pilot_p, run_paired
from checkagnosia.hwmodel import estimate, sorter_cycles, reference_designs
from checkagnosia.nms import DecoderConfig, NmsDecoder, quantize_priors

from codes import drop_light_columns, random_four_cycle_free, two_core, toric_code
from oracles import exhaustive_solve, float_nms

EXTRA_HX = os.environ.get("CHECKAGNOSIA_EXTRA_HX")
EXTRA_HZ = os.environ.get("CHECKAGNOSIA_EXTRA_HZ")


def dense_syndrome(m: np.ndarray, e: np.ndarray) -> np.ndarray:
    return (m.astype(np.int64) @ e.astype(np.int64)) % 2


# --- 1 ---------------------------------------------------------------------------


def test_reference_design_points(acceptance_report):
    designs = reference_designs(i_f=30, i_l=15, lam=10, n_checks=441, f_f=100e6, f_l=80e6, eta=3.5)
    expected = {
        "flooded/hw-reuse": (7.2, 5.5),
        "layered/hw-reuse": (7.9, 2.03),
        "flooded/dedicated/last": (1.7, 60.5),
        "layered/dedicated/last": (1.9, 22.3),
        "flooded/dedicated/early": (1.1, 60.5),
        "layered/dedicated/early": (1.4, 22.3),
    }
    bad = []
    for name, (lat_us, power) in expected.items():
        est = estimate(designs[name])
        got_us = est.latency_s * 1e6
        if abs(got_us - lat_us) > 0.05:
            bad.append(f"{name} latency {got_us:.3f}")
        if name.endswith("hw-reuse"):
            ok_power = est.power_w == power
        elif name.startswith("flooded"):
            ok_power = est.power_w == 11 * 5.5 == power
        else:
            ok_power = abs(est.power_w - power) <= 0.05 and est.power_w == pytest.approx(11 * 2.03)
        if not ok_power:
            bad.append(f"{name} power {est.power_w}")
    assert acceptance_report(1, "design points", not bad, "; ".join(bad) or "6 latencies and powers match")


# --- 2 ---------------------------------------------------------------------------


def test_sorter_formula(acceptance_report):
    rng = np.random.default_rng(2)
    mism = 0
    for _ in range(1000):
        lam, n = int(rng.integers(1, 64)), int(rng.integers(1, 100_000))
        depth = 0
        while 2 ** depth < n:
            depth += 1
        mism += sorter_cycles(lam, n) != math.ceil(lam / 2) * depth
    ok = sorter_cycles(10, 441) == 45 and mism == 0
    assert acceptance_report(2, "sorter formula", ok, f"sorter_cycles(10,441)={sorter_cycles(10, 441)}, "
                                                      f"{mism}/1000 random mismatches")


# --- 3 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_soundness_suite(acceptance_report):
    code = toric_code(6)
    h = code.h_z
    hd = h.to_dense()
    graph = build_tanner(h)
    cover = build_layer_cover(h, 2)
    trials, p = 100_000, 0.03
    summary, violations = [], 0
    for schedule in ("flooded", "layered"):
        dcfg = DecoderConfig.flooded() if schedule == "flooded" else DecoderConfig.layered(cover)
        priors = quantize_priors(h.n_qubits, dcfg.llr_init)
        for mode in ("alg1", "alg2"):
            dec = CheckAgnosiaDecoder(graph, dcfg, PostProcessConfig(mode=mode, i_delta=3))
            rng = np.random.default_rng([3, schedule == "layered", mode == "alg2"])
            bad = rescued = 0
            for t in range(trials):
                e = (rng.random(h.n_qubits) < p).astype(np.uint8)
                s = dense_syndrome(hd, e).astype(np.uint8)
                try:
                    res = dec.decode(s, priors, seed=t)
                except AssertionError:
                    bad += 1
                    continue
                if res.success and not np.array_equal(dense_syndrome(hd, res.e_hat), s):
                    bad += 1
                rescued += res.rescued
            violations += bad
            summary.append(f"{schedule}/{mode}: {bad} violations, {rescued} rescues")
    assert acceptance_report(3, "soundness", violations == 0, f"{trials} trials each; " + "; ".join(summary))


# --- 4 ---------------------------------------------------------------------------


def test_solver_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(4)
    done = disagree = 0
    while done < 1000:
        n, m = int(rng.integers(3, 16)), int(rng.integers(1, 10))
        dense = (rng.random((m, n)) < rng.uniform(0.15, 0.6)).astype(np.uint8)
        dense[dense.sum(axis=1) == 0, rng.integers(n)] = 1
        h = ParityCheckMatrix.from_dense(dense)
        c = int(rng.integers(m))
        if len(h.rows[c]) > 8:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sets = neighborhood_sets(build_tanner(h), c)
        e_hat = (rng.random(n) < 0.3).astype(np.uint8)
        s = (rng.random(m) < 0.5).astype(np.uint8)
        erased = list(sets.erased_qubits)
        pos = {q: j for j, q in enumerate(erased)}
        eqs = [([pos[q] for q in h.rows[f] if q in pos],
                int(s[f]) ^ (sum(int(e_hat[q]) for q in h.rows[f] if q not in pos) & 1))
               for f in sets.frontier_checks]
        sols = exhaustive_solve(eqs, len(erased))
        got = brute_force_residual(h, sets, e_hat, s)
        if (got is None) != (not sols):
            disagree += 1
        elif got is not None:
            a = got.assignment
            if not all(sum(int(a[v]) for v in vs) % 2 == rhs for vs, rhs in eqs):
                disagree += 1
            outside = np.ones(n, bool)
            outside[erased] = False
            if not np.array_equal(got.e_hat[outside], e_hat[outside]):
                disagree += 1
        done += 1
    assert acceptance_report(4, "solver oracle", disagree == 0, f"{disagree}/1000 disagreements")


# --- 5 ---------------------------------------------------------------------------


def test_peeling_claim(acceptance_report):
    rng = np.random.default_rng(5)
    h = drop_light_columns(random_four_cycle_free(60, 120, 5, rng))
    graph = build_tanner(h)
    results = [no_stopping_subset_check(graph, c) for c in range(h.n_checks)]
    ok = all(r == (True, 1) for r in results)
    detail = f"{sum(r == (True, 1) for r in results)}/{h.n_checks} checks peel in one round"
    if EXTRA_HZ:
        ext = build_tanner(load_alist(EXTRA_HZ))
        ext_res = [no_stopping_subset_check(ext, c) for c in range(ext.n_checks)]
        ok = ok and all(r == (True, 1) for r in ext_res)
        detail += f"; extra code {sum(r == (True, 1) for r in ext_res)}/{ext.n_checks}"
    else:
        detail += "; extra code not supplied"
    assert acceptance_report(5, "peeling", ok, detail)


# --- 6 ---------------------------------------------------------------------------


def test_quantized_fidelity(acceptance_report):
    rng = np.random.default_rng(6)
    converged = match = bound_violations = 0
    for i in range(1000):
        h = two_core(random_four_cycle_free(int(rng.integers(12, 20)), 30, 4, rng))
        e = np.zeros(h.n_qubits, np.uint8)
        e[rng.choice(h.n_qubits, size=int(rng.integers(1, 3)), replace=False)] = 1
        s = dense_syndrome(h.to_dense(), e).astype(np.uint8)
        if i % 2 == 0:
            cfg = DecoderConfig.flooded(i_max=20)
            dec = NmsDecoder(h, cfg)
            prior = quantize_priors(h.n_qubits, cfg.llr_init)
            out = dec.decode(s, prior, track_bounds=True)
            ref, _, _ = float_nms(h.rows, h.n_qubits, s, prior, cfg.s_nms, cfg.i_max)
        else:
            cover = build_layer_cover(h, 1)
            cfg = DecoderConfig.layered(cover, layer_order="fixed")
            dec = NmsDecoder(h, cfg)
            prior = quantize_priors(h.n_qubits, cfg.llr_init)
            seq = dec.layer_sequence()
            out = dec.decode(s, prior, layer_seq=seq, track_bounds=True)
            ref, _, _ = float_nms(h.rows, h.n_qubits, s, prior, cfg.s_nms, cfg.i_max, "layered",
                                  [cover.layers[k] for k in seq], dec.iteration_ends.tolist())
        bound_violations += out.max_msg_seen > 31 or out.max_llr_seen > 127
        if out.converged:
            converged += 1
            match += bool(np.array_equal(out.e_hat, ref))
    rate = match / converged if converged else 0.0
    ok = converged > 0 and rate >= 0.99 and bound_violations == 0
    assert acceptance_report(6, "quantized fidelity", ok,
                             f"match {match}/{converged} converged ({rate:.2%}), "
                             f"{bound_violations} saturation violations")


# --- 7 ---------------------------------------------------------------------------


def _paired(code, schedule, trials, seed):
    base = ExperimentConfig(schedule=schedule, layer_t=2, lam=10, i_delta=3, seed=seed, trials=trials)
    p = pilot_p(base, 1e-2, code, lo=1e-3, hi=0.05, trials=4000, steps=8)
    return p, run_paired(replace(base, p_values=(p,)), code)[0]


@pytest.mark.slow
def test_improvement_property(acceptance_report):
    code = toric_code(6)
    lines, ok = [], True
    for schedule in ("flooded", "layered"):
        p, comp = _paired(code, schedule, 100_000, seed=7)
        good = comp.ca_failures <= comp.baseline_failures and comp.p_value < 0.05
        ok &= good
        lines.append(f"{schedule} p={p:.4g}: baseline LER {comp.baseline_failures / comp.trials:.3g}, "
                     f"CA LER {comp.ca_failures / comp.trials:.3g}, discordant {comp.baseline_only}/{comp.ca_only}, "
                     f"p-value {comp.p_value:.2g}")
    if EXTRA_HX and EXTRA_HZ:
        ext = CssCode(load_alist(EXTRA_HX), load_alist(EXTRA_HZ))
        cfg = ExperimentConfig(lam=10, i_delta=3, seed=7, trials=20_000, p_values=(0.05,))
        comp = run_paired(cfg, ext)[0]
        lines.append(f"extra code stretch p=0.05: baseline {comp.baseline_failures}, CA {comp.ca_failures}, "
                     f"p-value {comp.p_value:.2g}")
    assert acceptance_report(7, "improvement", ok, "; ".join(lines))


# --- 8 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_determinism_across_workers(acceptance_report, tmp_path):
    code = toric_code(6)
    hx, hz = tmp_path / "hx.alist", tmp_path / "hz.alist"
    hx.write_text(format_alist(code.h_x))
    hz.write_text(format_alist(code.h_z))
    outs = []
    for schedule in ("flooded", "layered"):
        for workers in (1, 2):
            out = tmp_path / f"{schedule}-{workers}.csv"
            rc = cli_main(["experiment", "--hx", str(hx), "--hz", str(hz), "--schedule", schedule,
                           "--p", "0.02", "0.04", "--trials", "10000", "--seed", "8", "--i-delta", "3",
                           "--workers", str(workers), "--output", str(out)])
            assert rc == 0
            outs.append(out.read_bytes())
    ok = outs[0] == outs[1] and outs[2] == outs[3]
    assert acceptance_report(8, "determinism", ok,
                             "flooded and layered CSV byte-identical for 1 vs 2 workers" if ok else "CSV differs")


# --- 9 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_execution_contracts(acceptance_report):
    code = toric_code(6)
    h = code.h_z
    graph = build_tanner(h)
    dcfg = DecoderConfig.flooded()
    priors = quantize_priors(h.n_qubits, dcfg.llr_init)
    rng = np.random.default_rng(9)
    details, mism_total = [], 0
    for mode in ("alg1", "alg2"):
        seq = CheckAgnosiaDecoder(graph, dcfg, PostProcessConfig(mode=mode, i_delta=3))
        par = CheckAgnosiaDecoder(graph, dcfg, PostProcessConfig(mode=mode, i_delta=3, execution="parallel"))
        failing = mism = rescued = t = 0
        while failing < 10_000:
            e = (rng.random(h.n_qubits) < 0.06).astype(np.uint8)
            s = syndrome(h, e)
            t += 1
            if seq.initial_decode(s, priors, t).converged:
                continue
            failing += 1
            a, b = seq.decode(s, priors, seed=t), par.decode(s, priors, seed=t)
            same = (a.success == b.success and a.winner == b.winner and a.selected == b.selected
                    and ((a.e_hat is None and b.e_hat is None) or np.array_equal(a.e_hat, b.e_hat))
                    and [(r.k, r.success, r.iterations) for r in a.attempts]
                    == [(r.k, r.success, r.iterations) for r in b.attempts])
            mism += not same
            rescued += a.rescued
        mism_total += mism
        details.append(f"{mode}: {mism}/10000 mismatches ({rescued} rescued)")
    assert acceptance_report(9, "execution contracts", mism_total == 0, "; ".join(details))
