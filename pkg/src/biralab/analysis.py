"""Detection thresholds, exponential detection bounds and their checks.

Functions that read true green sets run only with ``white_box=True``; the
attack module never calls them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attack import biased_logits
from .lm import InvalidInputError, LanguageModel, SamplingConfig, nucleus_probs
from .watermark import WatermarkScheme, green_mask, p_tau


class AnalysisModeError(PermissionError):
    """A white-box routine was called without enabling analysis mode."""


@dataclass(frozen=True)
class BoundReport:
    N: int
    p_bar: float
    p_tau: float
    delta_hat: float
    bound: float
    sample_id: str = ""


@dataclass(frozen=True)
class ProxyRobustnessReport:
    epsilon: float
    proxy_suppression: float
    p_tau: float
    p_tau_prime: float
    delta: float
    satisfied: bool


def detection_bound(N: int, delta: float) -> float:
    """Upper bound ``exp(-N delta^2 / 2)`` on the detection probability."""
    if N < 1 or delta < 0:
        raise InvalidInputError("need N >= 1 and delta >= 0")
    return math.exp(-N * delta * delta / 2)


def bound_report(N: int, p_bar: float, p0: float, tau: float, sample_id: str = "") -> BoundReport:
    pt = p_tau(p0, tau, N)
    delta_hat = max(0.0, pt - p_bar)
    return BoundReport(N=N, p_bar=p_bar, p_tau=pt, delta_hat=delta_hat,
                       bound=detection_bound(N, delta_hat), sample_id=sample_id)


def _require_white_box(white_box: bool) -> None:
    if not white_box:
        raise AnalysisModeError("true green sets are only available with white_box=True")


def conditional_green_probabilities(model: LanguageModel, scheme: WatermarkScheme, text: Sequence[int],
                                    proxy, beta: float, cfg: SamplingConfig, prompt: Sequence[int] = (),
                                    white_box: bool = False) -> np.ndarray:
    """Per scored position, the attacker's sampling mass on that step's true green set.

    The sampling distribution includes the proxy bias, temperature and top-p
    truncation, so each value is the exact conditional green probability.
    """
    _require_white_box(white_box)
    V = model.vocab_size
    full = list(prompt) + list(text)
    offset = len(prompt)
    out = []
    for n in range(len(text)):
        pos = offset + n
        if scheme.kind == "kgw" and pos == 0:
            continue
        l = model.logits(full[:pos])
        if proxy is not None and beta != 0:
            l = biased_logits(l, proxy, beta)
        probs = nucleus_probs(l, cfg)
        out.append(float(probs[green_mask(scheme, V, full[pos - 1:pos])].sum()))
    return np.asarray(out)


def average_green_probability(model: LanguageModel, scheme: WatermarkScheme, text: Sequence[int],
                              proxy, beta: float, cfg: SamplingConfig, prompt: Sequence[int] = (),
                              white_box: bool = False) -> float:
    probs = conditional_green_probabilities(model, scheme, text, proxy, beta, cfg, prompt, white_box)
    if probs.size == 0:
        raise InvalidInputError("no scored positions")
    return float(probs.mean())


def per_sample_bound(model_for, scheme: WatermarkScheme, samples, cfg: SamplingConfig,
                     white_box: bool = False) -> list[BoundReport]:
    """One bound per attacked sample.

    ``samples`` yields ``(sample_id, prompt, text, proxy, beta)`` tuples and
    ``model_for(prompt)`` returns the model that produced ``text`` after
    ``prompt``.
    """
    _require_white_box(white_box)
    reports = []
    for sample_id, prompt, text, proxy, beta in samples:
        probs = conditional_green_probabilities(model_for(prompt), scheme, text, proxy, beta, cfg,
                                                prompt, white_box=True)
        reports.append(bound_report(len(probs), float(probs.mean()), scheme.p0, scheme.tau,
                                    sample_id=str(sample_id)))
    return reports


def proxy_robustness_check(epsilon: float, suppression: float, p_tau: float,
                           delta: float) -> ProxyRobustnessReport:
    """Check the two sufficient conditions for the bound to hold with an imperfect proxy."""
    if delta <= 0:
        raise InvalidInputError("delta must be positive")
    if epsilon < 0:
        raise InvalidInputError("epsilon must be non-negative")
    prime = p_tau - epsilon
    ok = prime > 0 and suppression <= prime - delta
    return ProxyRobustnessReport(epsilon=epsilon, proxy_suppression=suppression, p_tau=p_tau,
                                 p_tau_prime=prime, delta=delta, satisfied=bool(ok))


@dataclass(frozen=True)
class MonteCarloResult:
    N: int
    trials: int
    p_bar: float
    p_tau: float
    delta: float
    rate: float
    bound: float
    slack: float

    @property
    def within_bound(self) -> bool:
        return self.rate <= self.bound + self.slack


def monte_carlo_bound_check(N: int, p_schedule, p_tau_value: float, trials: int, seed: int = 0,
                         threshold: Optional[int] = None, chunk: int = 20000) -> MonteCarloResult:
    """Simulate conditionally independent green indicators and count detections.

    Detection is ``green_count >= threshold`` where ``threshold`` defaults to
    ``ceil(N * p_tau)``, i.e. ``p_hat >= p_tau`` on the count lattice.
    """
    sched = np.broadcast_to(np.asarray(p_schedule, dtype=np.float64), (N,))
    if np.any(sched < 0) or np.any(sched > 1):
        raise InvalidInputError("schedule probabilities must lie in [0, 1]")
    if threshold is None:
        threshold = math.ceil(N * p_tau_value)
    p_bar = float(sched.mean())
    delta = max(0.0, p_tau_value - p_bar)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        counts = (rng.random((m, N)) < sched).sum(axis=1)
        hits += int((counts >= threshold).sum())
        done += m
    bound = detection_bound(N, delta)
    return MonteCarloResult(N=N, trials=trials, p_bar=p_bar, p_tau=p_tau_value, delta=delta,
                            rate=hits / trials, bound=bound,
                            slack=3 * math.sqrt(bound * (1 - bound) / trials))
