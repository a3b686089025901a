"""Tables, JSON summary and plots for a finished attack run."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .. import mia_core
from .config import format_tau, regime_name
from .pipeline import ReportBundle

# column prefix per metric; "semantic" plays the sentence-encoder role
METRIC_PREFIX = {mia_core.EMBEDDING_COSINE: "semantic", mia_core.ROUGE2: "rouge2"}

TABLE_COLUMNS = [
    "model_tag",
    "tau",
    "regime",
    "semantic_member",
    "semantic_nonmember",
    "semantic_delta",
    "rouge2_member",
    "rouge2_nonmember",
    "rouge2_delta",
    "auc_semantic_mean",
    "auc_semantic_std",
    "auc_rouge2_mean",
    "auc_rouge2_std",
]


def table_rows(bundle: ReportBundle) -> list[dict]:
    """One row per (model_tag, tau); cells for absent metrics are None."""
    rows = []
    for tag, tau in bundle.groups():
        row = dict.fromkeys(TABLE_COLUMNS)
        row.update(model_tag=tag, tau=tau, regime=regime_name(tau))
        for metric, prefix in METRIC_PREFIX.items():
            res = bundle.results.get((tag, tau, metric))
            if res is None:
                continue
            row[f"{prefix}_member"] = res.alpha_in
            row[f"{prefix}_nonmember"] = res.alpha_out
            row[f"{prefix}_delta"] = res.delta
            row[f"auc_{prefix}_mean"] = res.auc_mean
            row[f"auc_{prefix}_std"] = res.auc_std
        rows.append(row)
    return rows


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()


def _fmt(value, pattern="{:.3f}") -> str:
    return "-" if value is None else pattern.format(value)


def render_text(bundle: ReportBundle, rows: list[dict]) -> str:
    lines = [
        "# Membership-inference attack summary",
        f"# config hash: {bundle.config_hash}",
        f"# {bundle.notes.get('auc_population', '')}",
        f"# granularities: {', '.join(str(g) for g in bundle.granularities)}; repeats per g: {bundle.notes.get('repeats', '?')}",
        "# ROC-AUC columns are on a 0-100 scale (mean +- std)",
        "",
    ]
    head = (
        f"{'model':<12} {'tau':>4} {'regime':<9} "
        f"{'sem(M)':>7} {'sem(NM)':>7} {'sem d':>7} "
        f"{'R2(M)':>7} {'R2(NM)':>7} {'R2 d':>7} "
        f"{'AUC semantic':>15} {'AUC ROUGE-2':>15}"
    )
    lines.append(head)
    lines.append("-" * len(head))
    for row in rows:
        auc_sem = (
            "-" if row["auc_semantic_mean"] is None
            else f"{100 * row['auc_semantic_mean']:.2f} ± {100 * row['auc_semantic_std']:.2f}"
        )
        auc_r2 = (
            "-" if row["auc_rouge2_mean"] is None
            else f"{100 * row['auc_rouge2_mean']:.2f} ± {100 * row['auc_rouge2_std']:.2f}"
        )
        lines.append(
            f"{row['model_tag']:<12} {format_tau(row['tau']):>4} {row['regime']:<9} "
            f"{_fmt(row['semantic_member']):>7} {_fmt(row['semantic_nonmember']):>7} {_fmt(row['semantic_delta']):>7} "
            f"{_fmt(row['rouge2_member']):>7} {_fmt(row['rouge2_nonmember']):>7} {_fmt(row['rouge2_delta']):>7} "
            f"{auc_sem:>15} {auc_r2:>15}"
        )
    return "\n".join(lines) + "\n"


def summary_doc(bundle: ReportBundle, rows: list[dict]) -> dict:
    per_g = []
    for (tag, tau, metric), res in sorted(bundle.results.items()):
        for run in res.per_g:
            mean, std = mia_core.pooled_mean_std(run.aucs)
            per_g.append(
                {"model_tag": tag, "tau": tau, "metric": metric, "g": run.g, "auc_mean": mean, "auc_std": std}
            )
    traces = {
        f"{tag}__tau_{format_tau(tau)}": {
            "final_j_cap": trace[-1].j_cap,
            "final_r_topo": trace[-1].r_topo,
            "final_j_tau": trace[-1].j_tau,
            "final_val_j_cap": trace[-1].val_j_cap,
            "epochs": trace[-1].epoch,
        }
        for (tag, tau), trace in sorted(bundle.traces.items())
    }
    results = {
        f"{tag}__tau_{format_tau(tau)}__{metric}": {k: v for k, v in res.to_dict().items() if k != "per_g"}
        for (tag, tau, metric), res in sorted(bundle.results.items())
    }
    return {
        "config_hash": bundle.config_hash,
        "notes": bundle.notes,
        "granularities": bundle.granularities,
        "table": rows,
        "per_granularity": per_g,
        "results": results,
        "training": traces,
    }


def emit_report(bundle: ReportBundle, output_dir: str | Path) -> list[Path]:
    """Write table.csv, table.txt, summary.json and the SVG plots; return their paths."""
    from . import plots

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = table_rows(bundle)
    written = []
    for name, text in (
        ("table.csv", render_csv(rows)),
        ("table.txt", render_text(bundle, rows)),
        ("summary.json", json.dumps(summary_doc(bundle, rows), indent=2, sort_keys=True) + "\n"),
    ):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    written.append(plots.similarity_means_plot(bundle, out / "similarity_means.svg"))
    written.append(plots.auc_vs_granularity_plot(bundle, out / "auc_vs_g.svg"))
    return written
