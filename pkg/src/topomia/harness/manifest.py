from __future__ import annotations

import hashlib
import json
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def list_files(out_dir: Path) -> list[dict]:
    entries = []
    for path in sorted(p for p in out_dir.rglob("*") if p.is_file()):
        rel = path.relative_to(out_dir).as_posix()
        if rel == MANIFEST_NAME:
            continue
        entries.append({"path": rel, "sha256": sha256_file(path), "bytes": path.stat().st_size})
    return entries


def write_manifest(
    out_dir: str | Path,
    config_hash: str,
    seeds: dict,
    status: str = "complete",
    note: str | None = None,
) -> Path:
    """Record every file under ``out_dir`` with its checksum."""
    out_dir = Path(out_dir)
    doc = {
        "status": status,
        "note": note,
        "config_hash": config_hash,
        "seeds": seeds,
        "files": list_files(out_dir),
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(out_dir: str | Path) -> list[str]:
    """Return the paths whose checksum no longer matches or that are unlisted."""
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    listed = {e["path"]: e["sha256"] for e in doc["files"]}
    current = {e["path"]: e["sha256"] for e in list_files(out_dir)}
    return sorted(p for p in set(listed) | set(current) if listed.get(p) != current.get(p))
