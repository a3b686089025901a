"""Stage functions for the attack pipeline.

Output tree under ``config.output_dir``::

    config.yaml
    dataset/            images/*.pgm + index.jsonl            (synthetic only)
    models/tau_<t>/     checkpoint.json + trace.csv            (synthetic only)
    captions/           <model_tag>__tau_<t>.jsonl             caption logs
    scores/             <model_tag>__tau_<t>.csv               id,label,metric,score
    attack/             <model_tag>__tau_<t>__<metric>.json    AttackResult
    report/             table.csv, table.txt, summary.json, *.svg
    manifest.json

Every stage reads only what earlier stages wrote (plus the config), so the
CLI can run them one at a time.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import mia_core
from ..errors import ConfigError, DataError, DegenerateClassError, TopomiaError
from ..mia_core import AttackResult, MembershipLabel, ScoreSample
from ..toy_vlm import checkpoint, data, model
from . import caption_log, manifest
from .caption_log import CaptionLogRecord
from .config import (
    EXTERNAL_LOG,
    TOY_MODEL_TAG,
    ExperimentConfig,
    derive_seed,
    format_tau,
    regime_name,
)

logger = logging.getLogger(__name__)

AUC_POPULATION_NOTE = (
    "ROC-AUC mean/std pool every (granularity, repeat) subsample AUC; "
    "std is the population standard deviation"
)


class StageError(TopomiaError):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause} (partial manifest written)")


@dataclass
class DatasetSplit:
    train: list
    validation: list
    nonmembers: list

    @property
    def members(self) -> list:
        return sorted(self.train + self.validation, key=lambda pair: pair[0].id)


@dataclass
class ReportBundle:
    results: dict[tuple[str, float, str], AttackResult]
    traces: dict[tuple[str, float], list[model.TraceRow]] = field(default_factory=dict)
    config_hash: str = ""
    granularities: list[int] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def groups(self) -> list[tuple[str, float]]:
        return sorted({(tag, tau) for tag, tau, _ in self.results})

    def metrics(self) -> list[str]:
        present = {m for _, _, m in self.results}
        return [m for m in mia_core.METRICS if m in present]


# -- helpers -----------------------------------------------------------------


def _safe_tag(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", tag)


def group_stem(model_tag: str, tau: float) -> str:
    return f"{_safe_tag(model_tag)}__tau_{format_tau(tau)}"


def tau_dir(out: Path, tau: float) -> Path:
    return out / "models" / f"tau_{format_tau(tau)}"


def stage_seeds(config: ExperimentConfig, taus: Sequence[float] | None = None) -> dict:
    taus = config.taus if taus is None else taus
    return {
        "master_seed": config.master_seed,
        "dataset": derive_seed(config.master_seed, "dataset"),
        "split": derive_seed(config.master_seed, "split"),
        "train": {format_tau(t): derive_seed(config.master_seed, "train", t) for t in taus},
        "attack": {format_tau(t): derive_seed(config.master_seed, "attack", t) for t in taus},
    }


def write_config(config: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config.to_yaml(), encoding="utf-8")


# -- stages ------------------------------------------------------------------


def build_dataset(config: ExperimentConfig) -> DatasetSplit:
    ds = config.dataset
    if ds.kind == EXTERNAL_LOG:
        raise ConfigError("the synthetic dataset stages do not apply to an external-log config")
    members, nonmembers = data.generate_dataset(
        ds.n_members,
        ds.n_nonmembers,
        derive_seed(config.master_seed, "dataset"),
        (ds.image_height, ds.image_width),
        ds.noise_pool,
    )
    train, validation = data.split_members(members, ds.member_fraction, derive_seed(config.master_seed, "split"))
    return DatasetSplit(train, validation, nonmembers)


def stage_gen_data(config: ExperimentConfig, out: Path) -> DatasetSplit:
    split = build_dataset(config)
    data.export_dataset(out / "dataset", split.train, split.validation, split.nonmembers)
    return split


def _check_dataset_index(out: Path, split: DatasetSplit) -> None:
    index = out / "dataset" / "index.jsonl"
    if not index.is_file():
        return
    on_disk = {}
    for line in index.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        on_disk[row["id"]] = row["caption"]
    expected = {
        scene.id: data.caption_text(tokens)
        for scene, tokens in split.train + split.validation + split.nonmembers
    }
    if on_disk != expected:
        raise ConfigError(f"{index} was generated from a different dataset configuration")


def write_trace(path: Path, trace: Sequence[model.TraceRow]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "j_cap", "r_topo", "j_tau", "val_j_cap"])
    for row in trace:
        writer.writerow(
            [row.epoch, repr(row.j_cap), repr(row.r_topo), repr(row.j_tau), "" if row.val_j_cap is None else repr(row.val_j_cap)]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_trace(path: Path) -> list[model.TraceRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                model.TraceRow(
                    int(rec["epoch"]),
                    float(rec["j_cap"]),
                    float(rec["r_topo"]),
                    float(rec["j_tau"]),
                    float(rec["val_j_cap"]) if rec["val_j_cap"] else None,
                )
            )
    return rows


def stage_train(config: ExperimentConfig, out: Path, split: DatasetSplit | None = None) -> dict:
    """Train one toy model per tau; returns ``{tau: (params, trace)}``."""
    split = split or build_dataset(config)
    _check_dataset_index(out, split)
    ds = config.dataset
    image_shape = (ds.image_height, ds.image_width)
    trained = {}
    for tau in config.taus:
        tcfg = config.train_config(tau)
        params = model.init_params(
            image_shape,
            (config.model.sheet_height, config.model.sheet_width),
            data.CAPTION_LENGTH,
            len(data.VOCAB),
            seed=tcfg.seed,
        )
        logger.info("training tau=%s for %d epochs", format_tau(tau), tcfg.epochs)
        params, trace = model.train(params, split.train, tcfg, split.validation)
        target = tau_dir(out, tau)
        target.mkdir(parents=True, exist_ok=True)
        checkpoint.save_checkpoint(target / "checkpoint.json", params, image_shape, tcfg)
        write_trace(target / "trace.csv", trace)
        trained[tau] = (params, trace)
    return trained


def stage_caption(config: ExperimentConfig, out: Path, split: DatasetSplit | None = None) -> dict:
    """Caption every member and non-member with each tau's model."""
    split = split or build_dataset(config)
    _check_dataset_index(out, split)
    cap_dir = out / "captions"
    cap_dir.mkdir(parents=True, exist_ok=True)
    pairs = [(MembershipLabel.MEMBER, p) for p in split.members] + [
        (MembershipLabel.NON_MEMBER, p) for p in split.nonmembers
    ]
    images = np.stack([scene.image for _, (scene, _) in pairs])
    logs = {}
    for tau in config.taus:
        ckpt = tau_dir(out, tau) / "checkpoint.json"
        if not ckpt.is_file():
            raise DataError(f"missing checkpoint {ckpt}; run the train stage first")
        params, _ = checkpoint.load_checkpoint(ckpt)
        generated = model.caption_batch(params, images)
        records = [
            CaptionLogRecord(
                id=scene.id,
                label=label,
                generated=text,
                references=(data.caption_text(tokens),),
                tau=float(tau),
                model_tag=TOY_MODEL_TAG,
            )
            for (label, (scene, tokens)), text in zip(pairs, generated)
        ]
        caption_log.write_caption_log(cap_dir / f"{group_stem(TOY_MODEL_TAG, tau)}.jsonl", records)
        logs[(TOY_MODEL_TAG, float(tau))] = records
    return logs


def stage_ingest(config: ExperimentConfig, out: Path, path: str | Path | None = None) -> dict:
    """Validate an external caption log and split it into per-(model_tag, tau) logs."""
    path = path or config.dataset.path
    if path is None:
        raise ConfigError("no caption log given")
    records, counts = caption_log.ingest_external_log(path)
    logger.info("ingested %d records (%s)", len(records), counts)
    groups = caption_log.group_records(records)
    stems = {}
    for tag, tau in groups:
        stem = group_stem(tag, tau)
        if stem in stems:
            raise DataError(f"model tags {stems[stem]!r} and {tag!r} map to the same file name")
        stems[stem] = tag
    cap_dir = out / "captions"
    cap_dir.mkdir(parents=True, exist_ok=True)
    for (tag, tau), recs in groups.items():
        caption_log.write_caption_log(cap_dir / f"{group_stem(tag, tau)}.jsonl", recs)
    return groups


def load_caption_groups(out: Path) -> dict[tuple[str, float], list[CaptionLogRecord]]:
    cap_dir = out / "captions"
    files = sorted(cap_dir.glob("*.jsonl")) if cap_dir.is_dir() else []
    if not files:
        raise DataError(f"no caption logs under {cap_dir}")
    groups = {}
    for path in files:
        for key, recs in caption_log.group_records(caption_log.read_caption_log(path)).items():
            if key in groups:
                raise DataError(f"(model_tag, tau) {key} appears in more than one caption log")
            groups[key] = recs
    return dict(sorted(groups.items()))


def score_records(
    records: Sequence[CaptionLogRecord], metrics: Sequence[str], provider
) -> dict[str, list[ScoreSample]]:
    return {
        metric: [
            ScoreSample(r.id, r.label, mia_core.membership_signal(r.generated, r.references, metric, provider))
            for r in records
        ]
        for metric in metrics
    }


def stage_score(config: ExperimentConfig, out: Path) -> dict:
    provider = config.embedding_provider()
    score_dir = out / "scores"
    score_dir.mkdir(parents=True, exist_ok=True)
    scored = {}
    for (tag, tau), records in load_caption_groups(out).items():
        by_metric = score_records(records, config.metrics, provider)
        rows = [(s, metric) for metric, samples in by_metric.items() for s in samples]
        mia_core.write_scores_csv(score_dir / f"{group_stem(tag, tau)}.csv", rows)
        scored[(tag, tau)] = by_metric
    return scored


def _attack_meta(config: ExperimentConfig, tag: str, tau: float) -> dict:
    meta = {
        "model_tag": tag,
        "tau": float(tau),
        "regime": regime_name(tau),
        "auc_population": AUC_POPULATION_NOTE,
    }
    if tag == TOY_MODEL_TAG:
        meta["blur_sigma"] = config.train.sigma
        meta["regularized_sheet"] = (
            f"encoder hidden sheet {config.model.sheet_height}x{config.model.sheet_width}"
        )
    return meta


def stage_attack(config: ExperimentConfig, out: Path) -> dict[tuple[str, float, str], AttackResult]:
    attack_dir = out / "attack"
    attack_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for (tag, tau), _ in load_caption_groups(out).items():
        score_path = out / "scores" / f"{group_stem(tag, tau)}.csv"
        if not score_path.is_file():
            raise DataError(f"missing score table {score_path}; run the score stage first")
        by_metric = mia_core.read_scores_csv(score_path)
        for metric in config.metrics:
            samples = by_metric.get(metric)
            if not samples:
                raise DataError(f"{score_path} has no scores for metric {metric}")
            ids = [s.id for s in samples]
            if len(set(ids)) != len(ids):
                raise DataError(f"{score_path} repeats sample ids for metric {metric}")
            try:
                result = mia_core.aggregate_attack(
                    samples,
                    metric,
                    config.granularities,
                    config.repeats,
                    derive_seed(config.master_seed, "attack", tau),
                )
            except DegenerateClassError as exc:
                raise DegenerateClassError(f"{tag} tau={format_tau(tau)}: {exc}") from None
            result.meta = _attack_meta(config, tag, tau)
            mia_core.write_attack_json(attack_dir / f"{group_stem(tag, tau)}__{metric}.json", result)
            results[(tag, float(tau), metric)] = result
    return results


def load_bundle(config: ExperimentConfig, out: Path) -> ReportBundle:
    results = {}
    traces = {}
    for (tag, tau), _ in load_caption_groups(out).items():
        for metric in config.metrics:
            path = out / "attack" / f"{group_stem(tag, tau)}__{metric}.json"
            if not path.is_file():
                raise DataError(f"missing attack result {path}; run the attack stage first")
            results[(tag, tau, metric)] = mia_core.read_attack_json(path)
        trace_path = tau_dir(out, tau) / "trace.csv"
        if tag == TOY_MODEL_TAG and trace_path.is_file():
            traces[(tag, tau)] = read_trace(trace_path)
    return ReportBundle(
        results=results,
        traces=traces,
        config_hash=config.hash(),
        granularities=list(config.granularities),
        notes={"auc_population": AUC_POPULATION_NOTE, "repeats": config.repeats},
    )


def stage_report(config: ExperimentConfig, out: Path) -> ReportBundle:
    from .report import emit_report

    bundle = load_bundle(config, out)
    emit_report(bundle, out / "report")
    return bundle


# -- orchestration -----------------------------------------------------------


def _run_stages(config: ExperimentConfig, out: Path, stages: list[tuple[str, Callable]]):
    seeds = stage_seeds(config)
    value = None
    for name, fn in stages:
        try:
            value = fn()
        except (TopomiaError, OSError) as exc:
            out.mkdir(parents=True, exist_ok=True)
            manifest.write_manifest(out, config.hash(), seeds, status="partial", note=f"aborted at stage {name}: {exc}")
            raise StageError(name, exc) from exc
    manifest.write_manifest(out, config.hash(), seeds)
    return value


def run_pipeline(config: ExperimentConfig) -> ReportBundle:
    """Run every stage in order and return the report bundle."""
    out = Path(config.output_dir)
    write_config(config, out)
    if config.dataset.kind == EXTERNAL_LOG:
        stages = [("ingest", lambda: stage_ingest(config, out))]
    else:
        holder = {}

        def gen():
            holder["split"] = stage_gen_data(config, out)

        stages = [
            ("gen-data", gen),
            ("train", lambda: stage_train(config, out, holder["split"])),
            ("caption", lambda: stage_caption(config, out, holder["split"])),
        ]
    stages += [
        ("score", lambda: stage_score(config, out)),
        ("attack", lambda: stage_attack(config, out)),
        ("report", lambda: stage_report(config, out)),
    ]
    return _run_stages(config, out, stages)


def run_single_stage(config: ExperimentConfig, stage: str, **kwargs):
    out = Path(config.output_dir)
    write_config(config, out)
    fns = {
        "gen-data": lambda: stage_gen_data(config, out),
        "train": lambda: stage_train(config, out),
        "caption": lambda: stage_caption(config, out),
        "ingest": lambda: stage_ingest(config, out, kwargs.get("path")),
        "score": lambda: stage_score(config, out),
        "attack": lambda: stage_attack(config, out),
        "report": lambda: stage_report(config, out),
    }
    return _run_stages(config, out, [(stage, fns[stage])])


# -- multi-seed trend --------------------------------------------------------


def run_seed_sweep(config: ExperimentConfig, seeds: Sequence[int], out_root: str | Path | None = None) -> dict:
    """Run the pipeline once per master seed and summarize median AUC per tau.

    Non-monotone tau trends are flagged, not treated as errors.
    """
    out_root = Path(out_root or config.output_dir)
    bundles = {}
    for seed in seeds:
        cfg = replace(config, master_seed=int(seed), output_dir=str(out_root / f"seed_{seed}"))
        bundles[int(seed)] = run_pipeline(cfg)
    trend = summarize_trend(bundles)
    trend_dir = out_root / "trend"
    trend_dir.mkdir(parents=True, exist_ok=True)
    (trend_dir / "trend.json").write_text(json.dumps(trend, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (trend_dir / "trend.txt").write_text(format_trend(trend), encoding="utf-8")
    return trend


def summarize_trend(bundles: dict[int, ReportBundle]) -> dict:
    cells: dict[tuple, list[float]] = {}
    totals: dict[tuple, list[float]] = {}
    for bundle in bundles.values():
        for (tag, tau, metric), res in bundle.results.items():
            totals.setdefault((tag, tau, metric), []).append(res.auc_mean)
            for run in res.per_g:
                cells.setdefault((tag, tau, metric, run.g), []).append(statistics.fmean(run.aucs))
    per_tau = [
        {"model_tag": tag, "tau": tau, "metric": metric, "median_auc": statistics.median(v), "auc_means": v}
        for (tag, tau, metric), v in sorted(totals.items())
    ]
    per_cell = [
        {"model_tag": tag, "tau": tau, "metric": metric, "g": g, "median_auc": statistics.median(v)}
        for (tag, tau, metric, g), v in sorted(cells.items())
    ]
    flags = []
    for tag, metric in sorted({(r["model_tag"], r["metric"]) for r in per_tau}):
        seq = [(r["tau"], r["median_auc"]) for r in per_tau if r["model_tag"] == tag and r["metric"] == metric]
        rising = [(a[0], b[0]) for a, b in zip(seq, seq[1:]) if b[1] > a[1]]
        if rising:
            flags.append(
                {
                    "model_tag": tag,
                    "metric": metric,
                    "note": "median AUC rises between tau pairs " + ", ".join(f"{a:g}->{b:g}" for a, b in rising),
                }
            )
    return {"seeds": sorted(bundles), "per_tau": per_tau, "per_cell": per_cell, "non_monotone": flags}


def format_trend(trend: dict) -> str:
    lines = [f"seeds: {', '.join(str(s) for s in trend['seeds'])}", ""]
    lines.append(f"{'model_tag':<12} {'tau':>5} {'metric':<17} {'median AUC':>10}")
    for row in trend["per_tau"]:
        lines.append(f"{row['model_tag']:<12} {row['tau']:>5g} {row['metric']:<17} {row['median_auc']:>10.4f}")
    lines.append("")
    if trend["non_monotone"]:
        lines.append("non-monotone tau trends (flagged, not failures):")
        lines.extend(f"  {f['model_tag']} / {f['metric']}: {f['note']}" for f in trend["non_monotone"])
    else:
        lines.append("median AUC is non-increasing in tau for every metric")
    return "\n".join(lines) + "\n"
