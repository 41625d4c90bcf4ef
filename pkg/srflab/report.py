"""Deterministic result files: canonical JSON, commented CSV and summaries."""

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# "


def _to_builtin(obj):
    """Convert numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def canonical_json_bytes(obj) -> bytes:
    """Serialize obj with sorted keys and fixed separators, newline terminated."""
    s = json.dumps(
        obj,
        sort_keys=True,
        ensure_ascii=True,
        indent=2,
        separators=(", ", ": "),
        default=_to_builtin,
    )
    return (s + "\n").encode("utf-8")


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def format_value(value) -> str:
    """Render a cell so identical runs produce identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12e}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def write_json(path: str | Path, obj) -> Path:
    """Write obj as canonical JSON.

    Dict payloads are stamped with the package version unless they carry one.

    Args:
        path: Destination file; parent directories are created.
        obj: Any structure of dicts, lists, numbers, strings and numpy values.

    Returns:
        The written path.
    """
    if isinstance(obj, dict):
        obj = {"version": __version__, **obj}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json_bytes(obj))
    logger.info(f"Wrote {path}")
    return path


def write_csv(
    path: str | Path,
    columns: list[str],
    rows: list[dict],
    config_hash: str,
    version: str = __version__,
) -> Path:
    """Write rows under a two-line comment header carrying hash and version.

    Args:
        path: Destination file; parent directories are created.
        columns: Column order. Keys missing from a row are written empty.
        rows: One dict per row.
        config_hash: Hash of the run configuration that produced the rows.
        version: Code version string.

    Returns:
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{HEADER_PREFIX}config_hash={config_hash}\n")
        fh.write(f"{HEADER_PREFIX}version={version}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])
    logger.info(f"Wrote {path} ({len(rows)} rows)")
    return path


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a file produced by write_csv.

    Returns:
        Tuple of (header metadata, rows as string dicts).
    """
    meta: dict[str, str] = {}
    body: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith(HEADER_PREFIX) and not body:
                key, _, value = line[len(HEADER_PREFIX):].strip().partition("=")
                meta[key] = value
            else:
                body.append(line)
    rows = list(csv.DictReader(body))
    return meta, rows


def render_summary(directory: str | Path) -> str:
    """Render every CSV/JSON result in a directory as a plain-text table."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"Result directory does not exist: {directory}")

    lines = [f"{'file':<32} {'rows':>6} {'failed':>7}  config_hash"]
    for path in sorted(directory.glob("*.csv")):
        meta, rows = read_csv(path)
        failed = sum(1 for r in rows if r.get("passed") == "false")
        lines.append(
            f"{path.name:<32} {len(rows):>6} {failed:>7}  {meta.get('config_hash', '')[:12]}"
        )
    for path in sorted(directory.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        verdict = data.get("passed", "") if isinstance(data, dict) else ""
        lines.append(f"{path.name:<32} {'-':>6} {str(verdict):>7}  {data.get('config_hash', '')[:12] if isinstance(data, dict) else ''}")
    return "\n".join(lines)
