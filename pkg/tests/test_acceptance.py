"""Acceptance suite: runs ``biralab verify`` twice and checks every criterion.

Run directly (``python3 tests/test_acceptance.py``) or through pytest; either
way one PASS/FAIL line per criterion is printed.
"""
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

# pinned tolerances and runtime limits (seconds)
P_TAU_TARGET, P_TAU_TOL = 0.632, 1e-3
BOUND_TARGETS, BOUND_TOL = {"delta_0.1": 0.3166, "delta_0.2": 0.0100}, 1e-3
MC_CEILING = 0.3166
EFFICACY_FLOOR = 0.95
ASR_GAIN = 0.3
OVERLAP_F1, F1_TOL = 2 / 3, 1e-9
LIMITS = {1: 1.0, 2: 1.0, 3: 1.0, 4: 10.0, 5: 30.0, 6: 300.0, 7: 1.0, 8: 2.0, 9: 10.0, 10: 120.0}

LINES: list = []


def _verify(out: Path) -> dict:
    proc = subprocess.run([sys.executable, "-m", "biralab.cli", "verify", "--seed", "0", "--out", str(out)],
                          capture_output=True, text=True, timeout=1800)
    timings = json.loads(proc.stderr.strip().splitlines()[-1])["timings_s"]
    return {"returncode": proc.returncode, "stdout": proc.stdout,
            "timings": {int(k): v for k, v in timings.items()},
            "results": {r["number"]: r for r in json.loads((out / "verify.json").read_text())["results"]},
            "bytes": (out / "verify.json").read_bytes()}


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    first = _verify(tmp_path_factory.mktemp("verify_a"))
    second = _verify(tmp_path_factory.mktemp("verify_b"))
    return first, second


def _record(number, ok, msg):
    LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {msg}")
    return ok


def _check(runs, number, predicate, msg):
    first, _ = runs
    res = first["results"][number]
    elapsed = first["timings"][number]
    in_time = elapsed < LIMITS[number]
    ok = res["passed"] and predicate(res["details"]) and in_time
    _record(number, ok, f"{msg} ({elapsed:.2f}s < {LIMITS[number]:g}s: {in_time})")
    assert predicate(res["details"]), res["details"]
    assert res["passed"]
    assert in_time, f"criterion {number} took {elapsed:.2f}s"


def test_criterion_01_threshold_equivalence(runs):
    _check(runs, 1, lambda d: d["mismatches"] == [] and d["cases"] > 0, "z-decision equals rate-decision at every count")


def test_criterion_02_p_tau(runs):
    _check(runs, 2, lambda d: abs(d["p_tau"] - P_TAU_TARGET) <= P_TAU_TOL, "p_tau(0.5, 4, 230) within 0.632 +- 0.001")


def test_criterion_03_bound_numerics(runs):
    _check(runs, 3, lambda d: all(abs(d[k] - v) <= BOUND_TOL for k, v in BOUND_TARGETS.items()),
           "exp bound at delta 0.1 and 0.2 within 1e-3")


def test_criterion_04_monte_carlo(runs):
    def ok(d):
        c, a = d["constant"], d["alternating"]
        return (c["rate"] <= MC_CEILING + c["slack"] and c["rate"] <= c["bound"] + c["slack"]
                and a["rate"] <= a["bound"] + a["slack"])
    _check(runs, 4, ok, "empirical detection rate under the exponential bound (+3 sigma)")


def test_criterion_05_watermark_efficacy(runs):
    _check(runs, 5, lambda d: all(d[k]["detection_rate"] >= EFFICACY_FLOOR for k in ("unigram", "kgw")),
           "pre-attack detection rate >= 0.95 for Unigram and KGW")


def test_criterion_06_attack_trend(runs):
    def ok(d):
        for kind in ("unigram", "kgw"):
            rows = {r["beta"]: r for r in d[kind]["rows"]}
            head = [rows[-float(b) if b else 0.0]["mean_z"] for b in range(5)]
            if not all(x > y for x, y in zip(head, head[1:])):
                return False
            if rows[-4.0]["asr"] < rows[0.0]["asr"] + ASR_GAIN:
                return False
        return True
    _check(runs, 6, ok, "mean z strictly decreasing to beta=-4 and ASR gain >= 0.3")


def test_criterion_07_degeneration(runs):
    _check(runs, 7, lambda d: d["collapsed_fires"] and not d["distinct_fires"] and not d["boundary_fires"]
           and d["boundary_ratio"] == 0.25 and d["collapsed_ratio"] < 0.25, "detector fires below rho only")


def test_criterion_08_adaptive_bias(runs):
    _check(runs, 8, lambda d: d["final_beta"] == -4.875 and d["iterations"] == 2 and d["degenerations"] == 1,
           "final beta -4.875 after one restart from -5")


def test_criterion_09_metrics(runs):
    _check(runs, 9, lambda d: d["fpr_violations"] == 0 and d["best_f1_mismatches"] == 0
           and abs(d["overlap_best_f1"] - OVERLAP_F1) <= F1_TOL, "FPR respected, best-F1 matches scan, overlap 2/3")


def test_criterion_10_per_sample_bounds(runs):
    def ok(d):
        b = [r["bira_bound"] for r in d["curve"]]
        return len(b) == 50 and b == sorted(b) and d["median_bira"] < d["median_vanilla"]
    _check(runs, 10, ok, "median attacked bound below median vanilla bound, curve sorted")


def test_criterion_11_determinism(runs):
    first, second = runs
    ok = first["bytes"] == second["bytes"]
    _record(11, ok, "two verify runs give byte-identical verify.json")
    assert ok


def test_verify_exit_status(runs):
    assert all(r["returncode"] == 0 for r in runs)
    assert runs[0]["stdout"].count("[PASS]") == 10


def test_mean_z_tail_within_noise(runs):
    """Beyond beta=-4 the proxy is saturated; allow 2 standard errors of drift."""
    d = runs[0]["results"][6]["details"]
    for kind in ("unigram", "kgw"):
        rows = d[kind]["rows"]
        for a, b in zip(rows, rows[1:]):
            assert b["mean_z"] <= a["mean_z"] + 2 * math.hypot(a["z_sem"], b["z_sem"]), (kind, a, b)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
