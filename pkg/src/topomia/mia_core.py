"""Threshold membership-inference attack over caption-similarity scores.

Each queried image gets one score (the best similarity between the model's
caption and any reference caption). Members should score higher than
non-members; the attack is summarized by the similarity gap, the best
threshold rule, and the ROC-AUC, the latter also over random subsamples of
``g`` members and ``g`` non-members.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import text_metrics
from .errors import (
    DataError,
    DegenerateClassError,
    EmptyReferencesError,
    InsufficientSamplesError,
    ParseError,
)

ROUGE2 = "rouge2"
EMBEDDING_COSINE = "embedding-cosine"
METRICS = (ROUGE2, EMBEDDING_COSINE)


class MembershipLabel(str, enum.Enum):
    MEMBER = "member"
    NON_MEMBER = "non-member"

    @property
    def bit(self) -> int:
        return 1 if self is MembershipLabel.MEMBER else 0

    def swapped(self) -> "MembershipLabel":
        return MembershipLabel.NON_MEMBER if self is MembershipLabel.MEMBER else MembershipLabel.MEMBER

    @classmethod
    def parse(cls, value: "str | MembershipLabel") -> "MembershipLabel":
        try:
            return cls(value)
        except ValueError:
            raise DataError(f"unknown membership label {value!r}") from None


@dataclass(frozen=True)
class ScoreSample:
    id: str
    label: MembershipLabel
    score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", MembershipLabel.parse(self.label))
        if not math.isfinite(self.score):
            raise DataError(f"score for {self.id!r} is not finite: {self.score}")


def membership_signal(
    generated: str,
    references: Sequence[str],
    metric: str,
    provider: text_metrics.EmbeddingProvider | None = None,
) -> float:
    """Best similarity between ``generated`` and any of ``references``."""
    if not references:
        raise EmptyReferencesError("membership signal needs at least one reference caption")
    if metric == ROUGE2:
        cand = text_metrics.tokenize(generated)
        return max(text_metrics.rouge2_f1(cand, text_metrics.tokenize(ref)) for ref in references)
    if metric == EMBEDDING_COSINE:
        provider = provider or text_metrics.EmbeddingProvider.builtin()
        gen_vec = text_metrics.embed(generated, provider)
        return max(
            text_metrics.cosine_similarity(gen_vec, text_metrics.embed(ref, provider))
            for ref in references
        )
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def split_scores(samples: Iterable[ScoreSample]) -> tuple[list[float], list[float]]:
    members, nonmembers = [], []
    for s in samples:
        (members if s.label is MembershipLabel.MEMBER else nonmembers).append(s.score)
    if not members or not nonmembers:
        raise DegenerateClassError(
            f"need both classes, got {len(members)} members and {len(nonmembers)} non-members"
        )
    return members, nonmembers


def roc_auc(samples: Sequence[ScoreSample]) -> float:
    """Mann-Whitney AUC: P(member score > non-member score), ties credited 0.5.

    Sorts once and walks tie groups, accumulating twice the credit as an
    integer so the result is exact.
    """
    members, nonmembers = split_scores(samples)
    tagged = sorted([(s, 1) for s in members] + [(s, 0) for s in nonmembers])
    twice_credit = 0
    nonmembers_below = 0
    i = 0
    while i < len(tagged):
        j = i
        m_group = n_group = 0
        while j < len(tagged) and tagged[j][0] == tagged[i][0]:
            if tagged[j][1]:
                m_group += 1
            else:
                n_group += 1
            j += 1
        twice_credit += 2 * m_group * nonmembers_below + m_group * n_group
        nonmembers_below += n_group
        i = j
    return twice_credit / (2 * len(members) * len(nonmembers))


def similarity_gap(samples: Sequence[ScoreSample]) -> tuple[float, float, float]:
    """Return ``(alpha_in, alpha_out, delta)``: class means and their difference."""
    members, nonmembers = split_scores(samples)
    alpha_in = math.fsum(members) / len(members)
    alpha_out = math.fsum(nonmembers) / len(nonmembers)
    return alpha_in, alpha_out, alpha_in - alpha_out


def best_threshold(samples: Sequence[ScoreSample]) -> tuple[float, float]:
    """Threshold maximizing balanced accuracy of the rule ``score >= t``.

    Candidates are the distinct observed scores; ties go to the smallest ``t``.
    """
    members, nonmembers = split_scores(samples)
    m, n = len(members), len(nonmembers)
    members = sorted(members)
    nonmembers = sorted(nonmembers)
    best_t = None
    best_num = -1
    # balanced accuracy = (tp*n + tn*m) / (2*m*n); compare integer numerators
    mi = ni = 0
    for t in sorted(set(members) | set(nonmembers)):
        while mi < m and members[mi] < t:
            mi += 1
        while ni < n and nonmembers[ni] < t:
            ni += 1
        tp = m - mi
        tn = ni
        num = tp * n + tn * m
        if num > best_num:
            best_num, best_t = num, t
    return best_t, best_num / (2 * m * n)


def decide(score: float, t: float) -> MembershipLabel:
    return MembershipLabel.MEMBER if score >= t else MembershipLabel.NON_MEMBER


def child_rng(seed: int, g: int, repeat: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(g), int(repeat)]))


def draw_subsample(
    samples: Sequence[ScoreSample], g: int, seed: int, repeat: int
) -> list[ScoreSample]:
    """The ``g`` + ``g`` subset used by repeat ``repeat`` of :func:`subsampled_auc`."""
    members = [s for s in samples if s.label is MembershipLabel.MEMBER]
    nonmembers = [s for s in samples if s.label is MembershipLabel.NON_MEMBER]
    if g < 1:
        raise ValueError("granularity must be positive")
    if len(members) < g or len(nonmembers) < g:
        raise InsufficientSamplesError(
            f"granularity {g} exceeds class sizes ({len(members)} members, {len(nonmembers)} non-members)"
        )
    rng = child_rng(seed, g, repeat)
    mi = rng.choice(len(members), size=g, replace=False)
    ni = rng.choice(len(nonmembers), size=g, replace=False)
    return [members[i] for i in mi] + [nonmembers[i] for i in ni]


def subsampled_auc(samples: Sequence[ScoreSample], g: int, repeats: int, seed: int) -> list[float]:
    if repeats < 1:
        raise ValueError("repeats must be positive")
    return [roc_auc(draw_subsample(samples, g, seed, r)) for r in range(repeats)]


@dataclass
class GranularityRun:
    g: int
    repeats: int
    aucs: list[float]


@dataclass
class AttackResult:
    metric: str
    auc_mean: float
    auc_std: float
    per_g: list[GranularityRun]
    alpha_in: float
    alpha_out: float
    delta: float
    best_threshold: float
    best_accuracy: float
    full_auc: float
    n_members: int
    n_nonmembers: int
    seed: int
    meta: dict = field(default_factory=dict)

    def all_aucs(self) -> list[float]:
        return [a for run in self.per_g for a in run.aucs]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AttackResult":
        data = dict(data)
        data["per_g"] = [GranularityRun(**run) for run in data["per_g"]]
        return cls(**data)


def pooled_mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def aggregate_attack(
    samples: Sequence[ScoreSample],
    metric: str,
    granularities: Sequence[int],
    repeats: int,
    seed: int,
) -> AttackResult:
    if not granularities:
        raise ValueError("at least one granularity is required")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    # whole-population statistics first so an empty class is reported as such
    members, nonmembers = split_scores(samples)
    alpha_in, alpha_out, delta = similarity_gap(samples)
    t, acc = best_threshold(samples)
    per_g = [GranularityRun(int(g), repeats, subsampled_auc(samples, g, repeats, seed)) for g in granularities]
    auc_mean, auc_std = pooled_mean_std([a for run in per_g for a in run.aucs])
    return AttackResult(
        metric=metric,
        auc_mean=auc_mean,
        auc_std=auc_std,
        per_g=per_g,
        alpha_in=alpha_in,
        alpha_out=alpha_out,
        delta=delta,
        best_threshold=t,
        best_accuracy=acc,
        full_auc=roc_auc(samples),
        n_members=len(members),
        n_nonmembers=len(nonmembers),
        seed=int(seed),
    )


# -- persistence -------------------------------------------------------------

SCORE_HEADER = ["id", "label", "metric", "score"]


def scores_to_csv(rows: Iterable[tuple[ScoreSample, str]]) -> str:
    """Render ``(sample, metric)`` rows; scores use ``repr`` so they round-trip exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_HEADER)
    for sample, metric in rows:
        writer.writerow([sample.id, sample.label.value, metric, repr(float(sample.score))])
    return buf.getvalue()


def write_scores_csv(path: str | Path, rows: Iterable[tuple[ScoreSample, str]]) -> None:
    Path(path).write_text(scores_to_csv(rows), encoding="utf-8")


def read_scores_csv(path: str | Path) -> dict[str, list[ScoreSample]]:
    """Load a score table, grouped by metric in file order."""
    out: dict[str, list[ScoreSample]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORE_HEADER:
            raise ParseError(f"expected header {','.join(SCORE_HEADER)}, got {header}", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError("expected 4 columns", lineno)
            sid, label, metric, score = row
            try:
                out.setdefault(metric, []).append(ScoreSample(sid, MembershipLabel.parse(label), float(score)))
            except (DataError, ValueError) as exc:
                raise ParseError(str(exc), lineno) from None
    return out


def write_attack_json(path: str | Path, result: AttackResult) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_attack_json(path: str | Path) -> AttackResult:
    return AttackResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
