"""Executable acceptance checks.

Each check returns a :class:`CheckResult` whose ``details`` are deterministic
for a fixed seed; wall-clock times are kept apart so result files can be
compared byte for byte.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import analysis, metrics, pipeline
from .attack import AttackConfig, attack, calibrate_beta0, is_degenerated, distinct_1gram_ratio
from .corpus import ExperimentConfig
from .lm import SamplingConfig, TableModel
from .watermark import KGW, UNIGRAM, WatermarkScheme, p_tau, report_from_count, threshold_count


# budget for checks that involve no simulation at scale; the calibration
# replay in check 8 gets twice this
INSTANT = 1.0


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    limit_s: float = math.inf


def check_equivalence(seed: int = 0) -> CheckResult:
    mismatches = []
    cases = 0
    for N, p0, tau in itertools.product((10, 50, 230), (0.25, 0.5), (2.0, 4.0)):
        pt = p_tau(p0, tau, N)
        c_star = threshold_count(p0, tau, N)
        for c in range(N + 1):
            rep = report_from_count(c, N, p0, tau)
            z_form = rep.z >= tau
            rate_form = rep.p_hat >= pt
            cases += 1
            if not (z_form == rate_form == rep.decision == (c >= c_star)):
                mismatches.append([N, p0, tau, c])
    return CheckResult(1, "threshold equivalence z>=tau <=> p_hat>=p_tau", not mismatches,
                       {"cases": cases, "mismatches": mismatches}, limit_s=1.0)


def check_p_tau(seed: int = 0) -> CheckResult:
    v = p_tau(0.5, 4, 230)
    return CheckResult(2, "p_tau(0.5, 4, 230) = 0.632 +- 0.001", abs(v - 0.632) <= 1e-3, {"p_tau": v},
                       limit_s=INSTANT)


def check_bound_numerics(seed: int = 0) -> CheckResult:
    b1 = analysis.detection_bound(230, 0.1)
    b2 = analysis.detection_bound(230, 0.2)
    ok = abs(b1 - 0.3166) <= 1e-3 and abs(b2 - 0.0100) <= 1e-3
    return CheckResult(3, "detection bounds at N=230, delta=0.1/0.2", ok, {"delta_0.1": b1, "delta_0.2": b2},
                       limit_s=INSTANT)


def check_monte_carlo(seed: int = 0, trials: int = 100_000) -> CheckResult:
    N, pt = 230, 0.632
    const = analysis.monte_carlo_bound_check(N, 0.532, pt, trials, seed=seed)
    alternating = np.where(np.arange(N) % 2 == 0, pt - 0.2, pt)
    alt = analysis.monte_carlo_bound_check(N, alternating, pt, trials, seed=seed + 1)
    details = {}
    for name, r in (("constant", const), ("alternating", alt)):
        details[name] = {"p_bar": r.p_bar, "rate": r.rate, "bound": r.bound, "slack": r.slack}
    ok = const.within_bound and alt.within_bound and const.bound <= 0.3166 + 1e-3
    return CheckResult(4, "Monte Carlo detection rate <= exp(-N delta^2/2)", ok, details, limit_s=10.0)


def desk_config(kind: str, seed: int = 0, samples: int = 200) -> ExperimentConfig:
    return ExperimentConfig(scheme=WatermarkScheme(kind=kind), sample_count=samples, seed=seed)


def check_watermark_efficacy(seed: int = 0, samples: int = 200) -> CheckResult:
    details = {}
    ok = True
    for kind in (UNIGRAM, KGW):
        cfg = desk_config(kind, seed, samples)
        recs = pipeline.generate_corpus(cfg)
        reps = [pipeline.detect_text(cfg, r.watermarked, r.prompt) for r in recs]
        rate = sum(r.decision for r in reps) / len(reps)
        details[kind] = {"detection_rate": rate, "mean_z": float(np.mean([r.z for r in reps])),
                         "mean_p_hat": float(np.mean([r.p_hat for r in reps]))}
        ok &= rate >= 0.95
    return CheckResult(5, "pre-attack detection rate >= 0.95 at tau=4", ok, details, limit_s=30.0)


def check_attack_trend(seed: int = 0, samples: int = 200, betas=tuple(float(-b) for b in range(9))) -> CheckResult:
    details = {}
    ok = True
    for kind in (UNIGRAM, KGW):
        cfg = desk_config(kind, seed, samples)
        recs = pipeline.generate_corpus(cfg)
        rows = []
        for beta in betas:
            attacked, _, _ = pipeline.attack_corpus(cfg, recs, beta=beta)
            reps = [pipeline.detect_text(cfg, r.attacked) for r in attacked]
            z = np.array([r.z for r in reps])
            rows.append({"beta": beta, "asr": metrics.asr(reps), "mean_z": float(z.mean()),
                         "z_sem": float(z.std(ddof=1) / math.sqrt(z.size)) if z.size > 1 else 0.0})
        z_head = [r["mean_z"] for r in rows if r["beta"] >= -4]
        strictly = all(a > b for a, b in zip(z_head, z_head[1:]))
        asr0 = next(r["asr"] for r in rows if r["beta"] == 0)
        asr4 = next(r["asr"] for r in rows if r["beta"] == -4)
        z_all = [r["mean_z"] for r in rows]
        details[kind] = {"rows": rows, "z_strictly_decreasing_to_-4": strictly,
                         "z_non_increasing_full_sweep": all(a >= b for a, b in zip(z_all, z_all[1:])),
                         "asr_gain_at_-4": asr4 - asr0}
        ok &= strictly and asr4 >= asr0 + 0.3
    return CheckResult(6, "attack trend over beta sweep", ok, details, limit_s=300.0)


def check_degeneration(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    distinct = rng.permutation(1000)[:112].tolist()
    # 450-token window built from exactly 112 distinct ids
    collapsed = [distinct[i % 112] for i in range(450)]
    fully = list(range(450))
    boundary = [i % 100 for i in range(400)]  # 100 / 400 == 0.25
    res = {
        "collapsed_ratio": distinct_1gram_ratio(collapsed, 450),
        "collapsed_fires": is_degenerated(collapsed, 450, 0.25),
        "distinct_fires": is_degenerated(fully, 450, 0.25),
        "boundary_ratio": distinct_1gram_ratio(boundary, 450),
        "boundary_fires": is_degenerated(boundary, 450, 0.25),
        "repeated_fires": is_degenerated([7] * 450, 450, 0.25),
    }
    ok = res["collapsed_fires"] and res["repeated_fires"] and not res["distinct_fires"] and not res["boundary_fires"]
    return CheckResult(7, "degeneration detector boundaries", ok, res, limit_s=INSTANT)


def scripted_collapse_model(collapse_below: float = -4.9, proxy_size: int = 200) -> TableModel:
    """Flat model over ``proxy_size`` tokens plus one sink token at ``collapse_below``.

    Under near-greedy sampling the sink wins, and the rewrite collapses into a
    single repeated token, exactly when the bias on the proxy tokens drops
    below ``collapse_below``.
    """
    row = np.zeros(proxy_size + 1)
    row[proxy_size] = collapse_below
    return TableModel(row)


SCRIPTED_SAMPLING = SamplingConfig(temperature=0.01, top_p=0.95, seed=0)


def check_adaptive_bias(seed: int = 0) -> CheckResult:
    model = scripted_collapse_model()
    text = list(range(200))
    cfg = AttackConfig(beta0=-5.0, lr=0.125, q=0.0, max_length=230, sampling=replace(SCRIPTED_SAMPLING, seed=seed))
    out = attack(model, text, cfg)
    calibrated = calibrate_beta0(model, [text], cfg, trials=50, seed=seed)
    res = {"final_beta": out.beta, "iterations": out.iterations, "degenerations": out.degenerations,
           "calibrated_beta0": calibrated}
    ok = out.beta == -4.875 and out.iterations == 2 and out.degenerations == 1 and calibrated == -4.0
    return CheckResult(8, "adaptive bias restart from beta0=-5", ok, res, limit_s=2 * INSTANT)


def _exhaustive_best_f1(a, h) -> float:
    best = 0.0
    for t in sorted(set(a) | set(h)) + [math.inf]:
        tp = sum(x >= t for x in a)
        fp = sum(x >= t for x in h)
        fn = len(a) - tp
        if tp:
            best = max(best, 2 * tp / (2 * tp + fp + fn))
    return best


def check_metrics(seed: int = 0, sets: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    fpr_violations = 0
    f1_mismatch = 0
    for k in range(sets):
        n = int(rng.integers(1, 200))
        human = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        for fpr in (0.01, 0.10):
            t = metrics.calibrate_threshold(human, fpr)
            fpr_violations += (human >= t).mean() > fpr
        if k < 200:
            attacked = np.round(rng.normal(loc=rng.uniform(0, 3), size=int(rng.integers(1, 40))), 1)
            h_small = human[:40]
            f1, _ = metrics.best_f1(attacked, h_small)
            f1_mismatch += abs(f1 - _exhaustive_best_f1(attacked.tolist(), h_small.tolist())) > 1e-12
    scores = rng.normal(size=500)
    overlap, _ = metrics.best_f1(scores, scores.copy())
    ok = fpr_violations == 0 and f1_mismatch == 0 and abs(overlap - 2 / 3) <= 1e-9
    return CheckResult(9, "threshold calibration and best-F1", ok,
                       {"fpr_violations": int(fpr_violations), "best_f1_mismatches": int(f1_mismatch),
                        "overlap_best_f1": overlap}, limit_s=10.0)


def per_sample_bound_curve(cfg: ExperimentConfig, beta_attack: float = -4.0):
    recs = pipeline.generate_corpus(cfg)
    rows = {}
    for arm, beta in (("bira", beta_attack), ("vanilla", 0.0)):
        attacked, outcomes, proxies = pipeline.attack_corpus(cfg, recs, beta=beta)
        bounds = pipeline.bound_reports(cfg, attacked, proxies, [o.beta for o in outcomes])
        rows[arm] = {b.sample_id: b for b in bounds}
    order = sorted(rows["bira"], key=lambda s: (rows["bira"][s].bound, s))
    curve = [{"rank": i, "sample_id": s, "bira_bound": rows["bira"][s].bound,
              "vanilla_bound": rows["vanilla"][s].bound,
              "bira_p_bar": rows["bira"][s].p_bar, "vanilla_p_bar": rows["vanilla"][s].p_bar}
             for i, s in enumerate(order)]
    return curve


def check_per_sample_bounds(seed: int = 0, samples: int = 50) -> CheckResult:
    cfg = desk_config(UNIGRAM, seed, samples)
    curve = per_sample_bound_curve(cfg)
    bira = [r["bira_bound"] for r in curve]
    vanilla = [r["vanilla_bound"] for r in curve]
    med_b, med_v = float(np.median(bira)), float(np.median(vanilla))
    sorted_ok = all(a <= b for a, b in zip(bira, bira[1:]))
    in_range = all(0 <= x <= 1 for x in bira + vanilla)
    return CheckResult(10, "per-sample bounds: median BIRA < median vanilla", med_b < med_v and sorted_ok and in_range,
                       {"median_bira": med_b, "median_vanilla": med_v,
                        "p90_bira": float(np.percentile(bira, 90)), "p90_vanilla": float(np.percentile(vanilla, 90)),
                        "curve": curve}, limit_s=120.0)


CHECKS: dict[int, Callable[..., CheckResult]] = {
    1: check_equivalence,
    2: check_p_tau,
    3: check_bound_numerics,
    4: check_monte_carlo,
    5: check_watermark_efficacy,
    6: check_attack_trend,
    7: check_degeneration,
    8: check_adaptive_bias,
    9: check_metrics,
    10: check_per_sample_bounds,
}


def run_checks(seed: int = 0, only=None, on_result=None) -> tuple[list[CheckResult], dict[int, float]]:
    results, timings = [], {}
    for number, fn in CHECKS.items():
        if only and number not in only:
            continue
        t0 = time.perf_counter()
        res = fn(seed=seed)
        timings[number] = time.perf_counter() - t0
        results.append(res)
        if on_result:
            on_result(res, timings[number])
    return results, timings
