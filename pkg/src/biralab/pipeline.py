"""Corpus-level orchestration shared by the CLI and the verification suite.

Each record gets its own RNG streams derived from ``(seed, purpose, index)``,
so results do not depend on ``jobs`` or on completion order.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache, partial
from typing import Callable, Iterable, Optional, Sequence

from . import analysis, metrics
from .attack import AttackConfig, AttackOutcome, attack
from .corpus import CorpusRecord, ExperimentConfig
from .lm import CopyParaphraser, MarkovModel, MarkovModelSpec, generate, perplexity
from .rng import SplitMix64, mix
from .watermark import WatermarkScheme, generate_watermarked, z_score

PROMPT, WATERMARK, HUMAN, ATTACK = 1, 2, 3, 4


def stream(seed: int, purpose: int, index: int) -> SplitMix64:
    return SplitMix64(mix(mix(seed, purpose), index))


@lru_cache(maxsize=8)
def model_for_spec(spec: MarkovModelSpec) -> MarkovModel:
    return spec.build()


def _map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def record_id(i: int) -> str:
    return f"s{i:05d}"


def make_prompt(cfg: ExperimentConfig, i: int) -> list[int]:
    model = model_for_spec(cfg.model)
    return generate(model, (), cfg.prompt_length, cfg.sampling, rng=stream(cfg.seed, PROMPT, i))


def _generate_one(cfg: ExperimentConfig, i: int) -> CorpusRecord:
    model = model_for_spec(cfg.model)
    prompt = make_prompt(cfg, i)
    text = generate_watermarked(model, cfg.scheme, prompt, cfg.length, cfg.sampling,
                                rng=stream(cfg.seed, WATERMARK, i))
    return CorpusRecord(id=record_id(i), prompt=prompt, watermarked=text,
                        provenance={"scheme": cfg.scheme.kind, "seed": cfg.seed, "index": i})


def generate_corpus(cfg: ExperimentConfig, jobs: int = 1) -> list[CorpusRecord]:
    return _map(partial(_generate_one, cfg), list(range(cfg.sample_count)), jobs)


def _human_one(cfg: ExperimentConfig, i: int) -> list[int]:
    model = model_for_spec(cfg.model)
    return generate(model, make_prompt(cfg, i), cfg.length, cfg.sampling, rng=stream(cfg.seed, HUMAN, i))


def human_texts(cfg: ExperimentConfig, count: Optional[int] = None, jobs: int = 1) -> list[list[int]]:
    """Unwatermarked continuations of the same prompts; the negative class."""
    n = cfg.sample_count if count is None else count
    return _map(partial(_human_one, cfg), list(range(n)), jobs)


def paraphraser(cfg: ExperimentConfig, source: Sequence[int]) -> CopyParaphraser:
    return CopyParaphraser(model_for_spec(cfg.model), source, cfg.copy_bias)


def _attack_one(cfg: ExperimentConfig, attack_cfg: AttackConfig, item) -> tuple[CorpusRecord, AttackOutcome, float]:
    i, rec = item
    model = paraphraser(cfg, rec.watermarked)
    outcome = attack(model, rec.watermarked, attack_cfg, rng=stream(cfg.seed, ATTACK, i))
    prov = dict(rec.provenance)
    prov.update({"beta": outcome.beta, "iterations": outcome.iterations, "q": attack_cfg.q,
                 "degenerated": outcome.degenerated})
    out = CorpusRecord(id=rec.id, prompt=rec.prompt, watermarked=rec.watermarked,
                       attacked=outcome.text, provenance=prov)
    return out, outcome, outcome.proxy


def attack_corpus(cfg: ExperimentConfig, records: Sequence[CorpusRecord], beta: Optional[float] = None,
                  q: Optional[float] = None, jobs: int = 1):
    """Attack every record; returns ``(records, outcomes, proxies)``."""
    acfg = cfg.attack
    if beta is not None:
        acfg = replace(acfg, beta0=float(beta))
    if q is not None:
        acfg = replace(acfg, q=float(q))
    results = _map(partial(_attack_one, cfg, acfg), list(enumerate(records)), jobs)
    return [r[0] for r in results], [r[1] for r in results], [r[2] for r in results]


def detect_text(cfg: ExperimentConfig, text: Sequence[int], prompt: Sequence[int] = ()):
    return z_score(text, cfg.scheme, cfg.model.vocab_size, prompt=prompt)


def bound_reports(cfg: ExperimentConfig, records: Sequence[CorpusRecord], proxies, betas) -> list:
    """Per-sample detection bounds for attacked records (white-box)."""
    samples = []
    for rec, proxy, beta in zip(records, proxies, betas):
        samples.append((rec.id, rec.watermarked, rec.attacked, proxy, beta))
    by_source = {tuple(r.watermarked): r.watermarked for r in records}

    def model_for(prompt):
        return paraphraser(cfg, by_source[tuple(prompt)])

    return analysis.per_sample_bound(model_for, cfg.scheme, samples, cfg.sampling,
                                     white_box=cfg.white_box)


def sweep_row(cfg: ExperimentConfig, records, human_scores, beta: float, q: float, jobs: int = 1) -> dict:
    attacked, outcomes, _ = attack_corpus(cfg, records, beta=beta, q=q, jobs=jobs)
    reports = [detect_text(cfg, r.attacked) for r in attacked]
    model = model_for_spec(cfg.model)
    eff = metrics.efficacy_report(reports, human_scores, fprs=cfg.fprs)
    return {
        "beta": float(beta),
        "q": float(q),
        "asr": eff.asr,
        "mean_z": metrics.summarize(r.z for r in reports)["mean"],
        "best_f1": eff.best_f1,
        **{f"tpr@{f:g}": eff.tpr_at_fpr[f] for f in cfg.fprs},
        "self_bleu": metrics.summarize(metrics.self_bleu(r.attacked, r.watermarked) for r in attacked)["mean"],
        "ppl": metrics.summarize(perplexity(model, r.attacked, r.watermarked) for r in attacked)["mean"],
        "iterations": metrics.summarize(o.iterations for o in outcomes)["mean"],
    }
