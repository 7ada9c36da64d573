"""Bias-inversion rewriting attack.

The attacker never sees the watermark key: it estimates likely-green tokens
from surprisal under its own model and pushes their logits down while
rewriting. Nothing in this module imports the watermark module.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .lm import InvalidInputError, LanguageModel, SamplingConfig, generate, self_information
from .rng import SplitMix64

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProxyGreenSet:
    ids: frozenset
    eta: float
    q: float

    def mask(self, vocab_size: int) -> np.ndarray:
        m = np.zeros(vocab_size, dtype=bool)
        if self.ids:
            m[list(self.ids)] = True
        return m


@dataclass(frozen=True)
class AttackConfig:
    beta0: float = -4.0
    lr: float = 0.125
    q: float = 0.5
    max_restarts: int = 10
    max_length: int = 1500
    window: int = 450
    rho: float = 0.25
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.beta0 > 0:
            raise InvalidInputError("beta0 must be <= 0")
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")
        if not 0 <= self.q < 1:
            raise InvalidInputError("q must lie in [0, 1)")
        if self.max_restarts < 1 or self.max_length < 1 or self.window < 1:
            raise InvalidInputError("max_restarts, max_length and window must be positive")
        if not 0 < self.rho <= 1:
            raise InvalidInputError("rho must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackConfig":
        d = dict(d)
        if "sampling" in d and isinstance(d["sampling"], Mapping):
            d["sampling"] = SamplingConfig(**d["sampling"])
        return cls(**d)


@dataclass(frozen=True)
class AttackOutcome:
    text: list
    beta: float
    iterations: int
    degenerations: int
    degenerated: bool = False
    proxy: Optional[ProxyGreenSet] = None


def build_proxy_set(model: LanguageModel, watermarked: Sequence[int], q: float,
                    prompt: Sequence[int] = ()) -> ProxyGreenSet:
    """Token ids whose surprisal in ``watermarked`` reaches the ``q``-quantile."""
    if len(watermarked) == 0:
        raise InvalidInputError("cannot build a proxy set from an empty text")
    if not 0 <= q < 1:
        raise InvalidInputError("q must lie in [0, 1)")
    info = np.asarray(self_information(model, watermarked, prompt))
    eta = float(np.percentile(info, 100 * q, method="linear"))
    ids = frozenset(int(t) for t, i in zip(watermarked, info) if i >= eta)
    return ProxyGreenSet(ids=ids, eta=eta, q=q)


def biased_logits(l, proxy, beta: float) -> np.ndarray:
    """Shift proxy coordinates by ``beta``. ``proxy`` is a ProxyGreenSet or a boolean mask."""
    if beta > 0:
        raise InvalidInputError("beta must be <= 0")
    l = np.asarray(l, dtype=np.float64)
    mask = proxy.mask(l.size) if isinstance(proxy, ProxyGreenSet) else np.asarray(proxy, dtype=bool)
    return l + beta * mask


def distinct_1gram_ratio(text: Sequence[int], h: int) -> float:
    """Distinct-token fraction of the last ``min(h, len(text))`` tokens; 1.0 when empty."""
    window = list(text)[-h:] if h > 0 else []
    if not window:
        return 1.0
    return len(set(window)) / len(window)


def is_degenerated(text: Sequence[int], h: int, rho: float) -> bool:
    window = list(text)[-h:] if h > 0 else []
    if not window:
        return False
    return len(set(window)) / len(window) < rho


def rewrite_once(model: LanguageModel, prompt: Sequence[int], proxy, beta: float,
                 cfg: AttackConfig, rng: Optional[SplitMix64] = None) -> list[int]:
    """One biased rewrite of up to ``cfg.max_length`` tokens conditioned on ``prompt``."""
    if beta > 0:
        raise InvalidInputError("beta must be <= 0")
    mask = proxy.mask(model.vocab_size) if isinstance(proxy, ProxyGreenSet) else np.asarray(proxy, bool)
    shift = beta * mask
    processor = None if beta == 0 else (lambda l, _ctx: l + shift)
    return generate(model, prompt, cfg.max_length, cfg.sampling, rng=rng, logit_processor=processor)


def attack(model: LanguageModel, watermarked: Sequence[int], cfg: AttackConfig,
           rng: Optional[SplitMix64] = None, proxy_model: Optional[LanguageModel] = None,
           prompt: Optional[Sequence[int]] = None) -> AttackOutcome:
    """Run the adaptive-bias rewriting loop.

    ``proxy_model`` scores surprisal (defaults to ``model``); ``prompt`` is the
    conditioning prefix for rewriting (defaults to the watermarked text).
    """
    if rng is None:
        rng = SplitMix64(cfg.sampling.seed)
    proxy = build_proxy_set(proxy_model or model, watermarked, cfg.q)
    prefix = list(watermarked) if prompt is None else list(prompt)
    beta = cfg.beta0
    text: list[int] = []
    degenerations = 0
    for r in range(1, cfg.max_restarts + 1):
        text = rewrite_once(model, prefix, proxy, beta, cfg, rng)
        if not is_degenerated(text, cfg.window, cfg.rho):
            return AttackOutcome(text=text, beta=beta, iterations=r, degenerations=degenerations,
                                 proxy=proxy)
        degenerations += 1
        log.debug("degeneration at beta=%s (attempt %d)", beta, r)
        beta = min(0.0, beta + cfg.lr)
    return AttackOutcome(text=text, beta=beta, iterations=cfg.max_restarts,
                         degenerations=degenerations, degenerated=True, proxy=proxy)


def default_beta_grid() -> list[float]:
    return [-float(b) for b in range(1, 13)]


def calibrate_beta0(model_for, prompts: Sequence[Sequence[int]], cfg: AttackConfig,
                    trials: int = 50, beta_grid: Optional[Iterable[float]] = None,
                    seed: int = 0) -> float:
    """Strongest grid bias before degeneration first appears in ``trials`` rewrites.

    ``model_for(prompt)`` returns the rewriting model for one calibration text
    (a plain model is accepted too). Returns the grid minimum when nothing
    degenerates, and the first grid value (with a warning) when degeneration
    already appears there.
    """
    if not prompts:
        raise InvalidInputError("calibration needs at least one prompt")
    grid = default_beta_grid() if beta_grid is None else [float(b) for b in beta_grid]
    factory = model_for if callable(model_for) and not hasattr(model_for, "logits") else (lambda _p: model_for)
    proxies = [build_proxy_set(factory(p), p, cfg.q) for p in prompts]
    previous = None
    for beta in grid:
        rng = SplitMix64(seed)
        degenerated = False
        for i in range(trials):
            p = prompts[i % len(prompts)]
            text = rewrite_once(factory(p), p, proxies[i % len(prompts)], beta, cfg, rng.spawn(i))
            if is_degenerated(text, cfg.window, cfg.rho):
                degenerated = True
                break
        if degenerated:
            if previous is None:
                warnings.warn(f"degeneration already at the first grid value {beta}", RuntimeWarning,
                              stacklevel=2)
                return beta
            return previous
        previous = beta
    return grid[-1]


def with_beta(cfg: AttackConfig, beta: float, q: Optional[float] = None) -> AttackConfig:
    return replace(cfg, beta0=beta, q=cfg.q if q is None else q)
