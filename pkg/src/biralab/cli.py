"""Command-line pipeline: generate -> attack -> detect -> analyze -> report, plus verify.

Every command takes ``--config``, ``--seed`` and ``--out``. ``--out`` is a
working directory; each command reads and writes fixed file names inside it
(see README). Input corpora can be redirected with ``--corpus``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, analysis, metrics, pipeline, verify
from .attack import build_proxy_set
from .corpus import (ATTACK_LOG_COLUMNS, BOUND_COLUMNS, DETECTION_COLUMNS, CorpusRecord, detection_from_row,
                     detection_row, dump_json, load_config, load_corpus, read_table, write_corpus, write_table)
from .lm import InvalidInputError, perplexity
from .remote import RemoteError
from .watermark import p_tau

log = logging.getLogger("biralab")

WATERMARKED = "watermarked.jsonl"
HUMAN = "human.jsonl"
ATTACKED = "attacked.jsonl"


def _cfg(args):
    return load_config(args.config).with_seed(args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path: Path, cfg, what: str):
    if not path.exists():
        raise InvalidInputError(f"missing input corpus {path} (run '{what}' first)")
    return load_corpus(path, vocab_size=cfg.model.vocab_size)


def cmd_generate(args) -> int:
    cfg, out = _cfg(args), _out(args)
    records = pipeline.generate_corpus(cfg, jobs=args.jobs)
    humans = pipeline.human_texts(cfg, jobs=args.jobs)
    write_corpus(records, out / WATERMARKED)
    write_corpus([CorpusRecord(id=f"h{r.id[1:]}", prompt=r.prompt, provenance={"kind": "human", "human": h})
                  for r, h in zip(records, humans)], out / HUMAN)
    reports = [pipeline.detect_text(cfg, r.watermarked, r.prompt) for r in records]
    summary = {
        "samples": len(records),
        "mean_z": metrics.summarize(r.z for r in reports)["mean"] if reports else None,
        "detection_rate": (sum(r.decision for r in reports) / len(reports)) if reports else None,
        "tau": cfg.scheme.tau,
    }
    dump_json(summary, out / "generate_summary.json")
    print(f"generated {len(records)} watermarked samples -> {out / WATERMARKED}")
    return 0


def cmd_attack(args) -> int:
    cfg, out = _cfg(args), _out(args)
    records = _load(Path(args.corpus) if args.corpus else out / WATERMARKED, cfg, "generate")
    missing = [r.id for r in records if r.watermarked is None]
    if missing:
        raise InvalidInputError(f"records without watermarked text: {missing[:5]}")
    attacked, outcomes, proxies = pipeline.attack_corpus(cfg, records, jobs=args.jobs)
    write_corpus(attacked, out / ATTACKED)
    rows = [{"id": r.id, "beta": o.beta, "iterations": o.iterations, "degenerations": o.degenerations,
             "degenerated": o.degenerated, "proxy_size": len(p.ids), "eta": p.eta}
            for r, o, p in zip(attacked, outcomes, proxies)]
    write_table(rows, ATTACK_LOG_COLUMNS, out / "attack_log.csv")
    print(f"attacked {len(attacked)} samples -> {out / ATTACKED}")
    return 0


def cmd_detect(args) -> int:
    cfg, out = _cfg(args), _out(args)
    rows = []
    src = Path(args.corpus) if args.corpus else (out / ATTACKED if (out / ATTACKED).exists() else out / WATERMARKED)
    for rec in _load(src, cfg, "generate"):
        if rec.watermarked is not None:
            rows.append(detection_row(rec.id, "watermarked", pipeline.detect_text(cfg, rec.watermarked, rec.prompt)))
        if rec.attacked is not None:
            rows.append(detection_row(rec.id, "attacked", pipeline.detect_text(cfg, rec.attacked)))
        if "human" in rec.provenance:
            rows.append(detection_row(rec.id, "human", pipeline.detect_text(cfg, rec.provenance["human"], rec.prompt)))
    if not args.corpus and (out / HUMAN).exists():
        for rec in _load(out / HUMAN, cfg, "generate"):
            rows.append(detection_row(rec.id, "human", pipeline.detect_text(cfg, rec.provenance["human"], rec.prompt)))
    write_table(rows, DETECTION_COLUMNS, out / "detection.csv")
    print(f"scored {len(rows)} texts -> {out / 'detection.csv'}")
    return 0


def cmd_analyze(args) -> int:
    cfg, out = _cfg(args), _out(args)
    if not cfg.white_box:
        raise InvalidInputError("analyze needs white_box: true in the config (it reads true green sets)")
    attacked = _load(Path(args.corpus) if args.corpus else out / ATTACKED, cfg, "attack")
    proxies = [build_proxy_set(pipeline.paraphraser(cfg, r.watermarked), r.watermarked,
                               r.provenance.get("q", cfg.attack.q)) for r in attacked]
    betas = [r.provenance.get("beta", cfg.attack.beta0) for r in attacked]
    rows = [dict(asdict(b), arm="bira") for b in pipeline.bound_reports(cfg, attacked, proxies, betas)]
    vanilla, outcomes, vproxies = pipeline.attack_corpus(cfg, attacked, beta=0.0, jobs=args.jobs)
    rows += [dict(asdict(b), arm="vanilla")
             for b in pipeline.bound_reports(cfg, vanilla, vproxies, [o.beta for o in outcomes])]
    write_table(rows, BOUND_COLUMNS, out / "bounds.csv")
    pt = p_tau(cfg.scheme.p0, cfg.scheme.tau, cfg.length)
    mc = {}
    for name, sched in (("constant", np.full(cfg.length, pt - 0.1)),
                        ("alternating", np.where(np.arange(cfg.length) % 2 == 0, pt - 0.2, pt))):
        r = analysis.monte_carlo_bound_check(cfg.length, np.clip(sched, 0, 1), pt, cfg.mc_trials, seed=cfg.seed)
        mc[name] = {**asdict(r), "within_bound": r.within_bound}
    dump_json(mc, out / "montecarlo.json")
    print(f"wrote {len(rows)} bound rows -> {out / 'bounds.csv'}")
    return 0


def cmd_report(args) -> int:
    cfg, out = _cfg(args), _out(args)
    det_path = out / "detection.csv"
    if not det_path.exists():
        raise InvalidInputError(f"missing {det_path} (run 'detect' first)")
    det = read_table(det_path)
    by_source: dict[str, list] = {}
    for row in det:
        by_source.setdefault(row["source"], []).append(detection_from_row(row))
    human = [r.z for r in by_source.get("human", [])]
    rows = []
    for source in ("watermarked", "attacked"):
        reps = by_source.get(source)
        if not reps:
            continue
        row = {"source": source, "n": len(reps), "asr": metrics.asr(reps),
               "mean_z": metrics.summarize(r.z for r in reps)["mean"]}
        if human:
            eff = metrics.efficacy_report(reps, human, fprs=cfg.fprs)
            row["best_f1"] = eff.best_f1
            for f in cfg.fprs:
                row[f"tpr@{f:g}"] = eff.tpr_at_fpr[f]
                row[f"threshold@{f:g}"] = eff.thresholds[f]
        rows.append(row)
    if (out / ATTACKED).exists():
        attacked = load_corpus(out / ATTACKED, vocab_size=cfg.model.vocab_size)
        model = pipeline.model_for_spec(cfg.model)
        for row in rows:
            if row["source"] == "attacked":
                row["self_bleu"] = metrics.summarize(metrics.self_bleu(r.attacked, r.watermarked)
                                                     for r in attacked)["mean"]
                row["ppl"] = metrics.summarize(perplexity(model, r.attacked, r.watermarked)
                                               for r in attacked)["mean"]
    lead = ["source", "n", "asr", "mean_z", "best_f1"]
    cols = lead + sorted({k for r in rows for k in r} - set(lead))
    write_table([{c: r.get(c, "") for c in cols} for r in rows], cols, out / "metrics.csv")

    if (out / "bounds.csv").exists():
        bounds = read_table(out / "bounds.csv")
        arms: dict[str, dict] = {}
        for b in bounds:
            arms.setdefault(b["arm"], {})[b["sample_id"]] = float(b["bound"])
        bira = arms.get("bira", {})
        order = sorted(bira, key=lambda s: (bira[s], s))
        curve = [{"rank": i, "sample_id": s, "bira_bound": bira[s],
                  "vanilla_bound": arms.get("vanilla", {}).get(s, float("nan"))} for i, s in enumerate(order)]
        write_table(curve, ("rank", "sample_id", "bira_bound", "vanilla_bound"), out / "bounds_sorted.csv")

    if not args.no_sweeps and (out / WATERMARKED).exists():
        records = load_corpus(out / WATERMARKED, vocab_size=cfg.model.vocab_size)[: cfg.sweep_samples]
        if records:
            hum = human[: len(records)] or [pipeline.detect_text(cfg, h).z
                                            for h in pipeline.human_texts(cfg, len(records))]
            beta_rows = [pipeline.sweep_row(cfg, records, hum, b, cfg.attack.q, jobs=args.jobs)
                         for b in cfg.beta_grid]
            q_rows = [pipeline.sweep_row(cfg, records, hum, cfg.attack.beta0, q, jobs=args.jobs)
                      for q in cfg.q_grid]
            cols = list(beta_rows[0])
            write_table(beta_rows, cols, out / "beta_sweep.csv")
            write_table(q_rows, cols, out / "q_sweep.csv")
    print(f"wrote report tables to {out}")
    return 0


def cmd_verify(args) -> int:
    out = _out(args)
    seed = 0 if args.seed is None else args.seed
    only = set(args.only) if args.only else None

    def show(res, elapsed):
        status = "PASS" if res.passed else "FAIL"
        over = "" if elapsed <= res.limit_s else f" (over {res.limit_s:g}s limit)"
        print(f"[{status}] criterion {res.number:2d}: {res.name}  {elapsed:.2f}s{over}", flush=True)

    results, timings = verify.run_checks(seed=seed, only=only, on_result=show)
    payload = {"seed": seed, "version": __version__,
               "results": [{"number": r.number, "name": r.name, "passed": r.passed, "details": r.details}
                           for r in results]}
    dump_json(payload, out / "verify.json")
    print(json.dumps({"timings_s": {str(k): round(v, 3) for k, v in timings.items()}}), file=sys.stderr)
    ok = all(r.passed for r in results) and all(timings[r.number] <= r.limit_s for r in results)
    print("all criteria passed" if ok else "some criteria FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biralab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": (cmd_generate, "generate watermarked and human corpora"),
        "attack": (cmd_attack, "rewrite watermarked texts with the bias-inversion attack"),
        "detect": (cmd_detect, "score corpora with the z-test detector"),
        "analyze": (cmd_analyze, "per-sample detection bounds and Monte Carlo check"),
        "report": (cmd_report, "metrics, sorted bound curve and beta/q sweeps"),
        "verify": (cmd_verify, "run the acceptance checks"),
    }
    for name, (fn, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML experiment config (defaults built in)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help="working directory for outputs")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name in ("attack", "detect", "analyze"):
            p.add_argument("--corpus", help="input corpus instead of the default file in --out")
        if name == "report":
            p.add_argument("--no-sweeps", action="store_true", help="skip beta/q sweep tables")
        if name == "verify":
            p.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, OSError, RemoteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
