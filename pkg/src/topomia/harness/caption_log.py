"""Line-delimited JSON caption logs.

One record per line::

    {"v":1,"id":"...","label":"member"|"non-member","generated":"...",
     "references":["...", ...],"tau":2.0,"model_tag":"..."}

Toy-model runs write their captions in this format too, so external logs
(for example from real captioning models) and toy runs share one scoring
and attack path.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import DuplicateKeyError, ParseError
from ..mia_core import MembershipLabel

LOG_VERSION = 1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaptionLogRecord:
    id: str
    label: MembershipLabel
    generated: str
    references: tuple[str, ...]
    tau: float
    model_tag: str

    @property
    def key(self) -> tuple[str, float, str]:
        return (self.id, self.tau, self.model_tag)

    def to_json(self) -> str:
        return json.dumps(
            {
                "v": LOG_VERSION,
                "id": self.id,
                "label": self.label.value,
                "generated": self.generated,
                "references": list(self.references),
                "tau": self.tau,
                "model_tag": self.model_tag,
            },
            ensure_ascii=False,
        )


def parse_record(obj, lineno: int) -> CaptionLogRecord:
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno)
    if obj.get("v") != LOG_VERSION:
        raise ParseError(f"unsupported or missing schema version v={obj.get('v')!r}", lineno)
    missing = [k for k in ("id", "label", "generated", "references", "tau", "model_tag") if k not in obj]
    if missing:
        raise ParseError(f"missing field(s) {missing}", lineno)
    rid, label, generated, refs, tau, tag = (
        obj["id"], obj["label"], obj["generated"], obj["references"], obj["tau"], obj["model_tag"]
    )
    if not isinstance(rid, str) or not rid:
        raise ParseError("'id' must be a non-empty string", lineno)
    if label not in ("member", "non-member"):
        raise ParseError(f"'label' must be 'member' or 'non-member', got {label!r}", lineno)
    if not isinstance(generated, str):
        raise ParseError("'generated' must be a string", lineno)
    if not isinstance(refs, list) or not refs or not all(isinstance(r, str) for r in refs):
        raise ParseError("'references' must be a non-empty list of strings", lineno)
    if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not math.isfinite(tau) or tau < 0:
        raise ParseError("'tau' must be a finite number >= 0", lineno)
    if not isinstance(tag, str) or not tag:
        raise ParseError("'model_tag' must be a non-empty string", lineno)
    return CaptionLogRecord(rid, MembershipLabel(label), generated, tuple(refs), float(tau), tag)


def read_caption_log(path: str | Path) -> list[CaptionLogRecord]:
    records: list[CaptionLogRecord] = []
    seen: dict[tuple, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            rec = parse_record(obj, lineno)
            if rec.key in seen:
                raise DuplicateKeyError(
                    f"line {lineno}: duplicate (id, tau, model_tag) {rec.key}, first seen on line {seen[rec.key]}"
                )
            seen[rec.key] = lineno
            records.append(rec)
    return records


def label_counts(records: Iterable[CaptionLogRecord]) -> dict[str, int]:
    counts = Counter(r.label.value for r in records)
    return {"member": counts.get("member", 0), "non-member": counts.get("non-member", 0)}


def ingest_external_log(path: str | Path) -> tuple[list[CaptionLogRecord], dict[str, int]]:
    """Parse and validate a caption log; return the records and per-label counts.

    A class with no records only produces a warning here; the attack stage
    refuses it.
    """
    records = read_caption_log(path)
    counts = label_counts(records)
    for label, n in counts.items():
        if n == 0:
            logger.warning("caption log %s has no %s records", path, label)
    return records, counts


def write_caption_log(path: str | Path, records: Sequence[CaptionLogRecord]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def group_records(records: Iterable[CaptionLogRecord]) -> dict[tuple[str, float], list[CaptionLogRecord]]:
    """Group by ``(model_tag, tau)``, preserving record order within each group."""
    groups: dict[tuple[str, float], list[CaptionLogRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model_tag, rec.tau), []).append(rec)
    return dict(sorted(groups.items()))
