"""JSONL corpora, CSV result tables and the experiment config file."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

import yaml

from .attack import AttackConfig
from .lm import InvalidInputError, MarkovModelSpec, SamplingConfig
from .watermark import DetectionReport, WatermarkScheme


class CorpusError(InvalidInputError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CorpusRecord:
    id: str
    prompt: list
    watermarked: Optional[list] = None
    attacked: Optional[list] = None
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d: dict[str, Any] = {"id": self.id, "prompt": list(self.prompt)}
        if self.watermarked is not None:
            d["watermarked"] = list(self.watermarked)
        if self.attacked is not None:
            d["attacked"] = list(self.attacked)
        if self.provenance:
            d["provenance"] = self.provenance
        return d


def _ids(value, name: str, line: int, vocab_size: Optional[int]) -> list:
    if not isinstance(value, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in value):
        raise CorpusError(f"field {name!r} must be a list of integer token ids", line)
    for t in value:
        if t < 0 or (vocab_size is not None and t >= vocab_size):
            raise CorpusError(f"token id {t} in {name!r} outside vocabulary", line)
    return value


def parse_record(obj: Any, line: int, vocab_size: Optional[int] = None) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object", line)
    if "id" not in obj or not isinstance(obj["id"], str):
        raise CorpusError("record needs a string 'id'", line)
    unknown = set(obj) - {"id", "prompt", "watermarked", "attacked", "provenance"}
    if unknown:
        raise CorpusError(f"unknown fields {sorted(unknown)}", line)
    prov = obj.get("provenance", {})
    if not isinstance(prov, dict):
        raise CorpusError("'provenance' must be an object", line)
    return CorpusRecord(
        id=obj["id"],
        prompt=_ids(obj.get("prompt", []), "prompt", line, vocab_size),
        watermarked=_ids(obj["watermarked"], "watermarked", line, vocab_size) if "watermarked" in obj else None,
        attacked=_ids(obj["attacked"], "attacked", line, vocab_size) if "attacked" in obj else None,
        provenance=prov,
    )


def load_corpus(path, vocab_size: Optional[int] = None) -> list[CorpusRecord]:
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON ({exc.msg})", lineno) from None
            rec = parse_record(obj, lineno, vocab_size)
            if rec.id in seen:
                raise CorpusError(f"duplicate id {rec.id!r}", lineno)
            seen.add(rec.id)
            records.append(rec)
    return records


def write_corpus(records: Iterable[CorpusRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(rows: Sequence[Mapping], columns: Sequence[str], path) -> None:
    """CSV with a fixed column order; floats use ``repr`` so they round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def read_table(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


DETECTION_COLUMNS = ("id", "source", "N", "green_count", "p_hat", "z", "tau", "p_tau", "decision")
BOUND_COLUMNS = ("sample_id", "arm", "N", "p_bar", "p_tau", "delta_hat", "bound")
ATTACK_LOG_COLUMNS = ("id", "beta", "iterations", "degenerations", "degenerated", "proxy_size", "eta")


def detection_row(rec_id: str, source: str, report) -> dict:
    return {"id": rec_id, "source": source, **asdict(report)}


def detection_from_row(row: Mapping) -> DetectionReport:
    return DetectionReport(N=int(row["N"]), green_count=int(row["green_count"]), p_hat=float(row["p_hat"]),
                           z=float(row["z"]), tau=float(row["tau"]), p_tau=float(row["p_tau"]),
                           decision=row["decision"] == "true")


@dataclass
class ExperimentConfig:
    """Every knob of a pipeline run; the YAML file mirrors these field names."""

    model: MarkovModelSpec = field(default_factory=MarkovModelSpec)
    scheme: WatermarkScheme = field(default_factory=WatermarkScheme)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(max_length=230))
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    sample_count: int = 200
    length: int = 230
    prompt_length: int = 8
    copy_bias: float = 4.0
    seed: int = 0
    white_box: bool = True
    beta_grid: list = field(default_factory=lambda: [float(-b) for b in range(0, 10)])
    q_grid: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(10)])
    sweep_samples: int = 50
    fprs: list = field(default_factory=lambda: [0.01, 0.10])
    mc_trials: int = 20000

    def __post_init__(self):
        if self.attack.sampling != self.sampling:
            self.attack = replace(self.attack, sampling=self.sampling)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "scheme": self.scheme.to_dict(),
            "attack": {k: v for k, v in self.attack.to_dict().items() if k != "sampling"},
            "sampling": asdict(self.sampling),
            **{f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("model", "scheme", "attack", "sampling")},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        sampling = SamplingConfig(**d.pop("sampling", {}))
        kw: dict[str, Any] = {"sampling": sampling}
        if "model" in d:
            kw["model"] = MarkovModelSpec.from_dict(d.pop("model"))
        if "scheme" in d:
            kw["scheme"] = WatermarkScheme.from_dict(d.pop("scheme"))
        attack = {"max_length": 230, **d.pop("attack", {})}
        attack["sampling"] = sampling
        kw["attack"] = AttackConfig.from_dict(attack)
        kw.update(d)
        return cls(**kw)

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return replace(self, seed=int(seed))


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh) or {})


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
