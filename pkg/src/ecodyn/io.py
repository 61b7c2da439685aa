"""CSV and JSON emission, config loading with schema validation, run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

SCHEMA_VERSION = "v1"


class ConfigError(ValueError):
    """Input file missing, malformed or rejected by its schema."""


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None if math.isnan(f) else ("inf" if f > 0 else "-inf")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return v


def to_json(obj) -> str:
    """Deterministic JSON text; non-finite floats become ``null`` or ``"inf"``."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return "" if math.isnan(f) else repr(f)
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return str(v)


def to_csv(header, rows) -> str:
    """RFC 4180 text: header row, CRLF line ends, minimal quoting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def read_hitting_times(path):
    """``hitting_time`` column and optional ``censored`` flags of a CSV file."""
    header, rows = read_csv(path)
    if "hitting_time" not in header:
        raise ConfigError(f"{path}: missing 'hitting_time' column")
    i = header.index("hitting_time")
    j = header.index("censored") if "censored" in header else None
    values = np.array([float(r[i]) for r in rows])
    cens = np.array([r[j].strip().lower() in ("true", "1") for r in rows]) if j is not None \
        else np.zeros(values.size, bool)
    return values, cens


def schema(name: str) -> dict:
    text = resources.files("ecodyn").joinpath("schemas", SCHEMA_VERSION, f"{name}.schema.json").read_text()
    return json.loads(text)


def load_json(path, schema_name: str | None = None):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if schema_name is not None:
        try:
            jsonschema.validate(data, schema(schema_name))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"{path}: {exc.message}") from exc
    return data


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class OutputSink:
    """Collects named text artifacts and writes them with a manifest."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def write(self, out_dir, manifest: dict) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        digests = {}
        for name, text in self.files.items():
            data = text.encode()
            (out / name).write_bytes(data)
            digests[name] = sha256_bytes(data)
        manifest = dict(manifest, outputs=digests)
        (out / "manifest.json").write_text(to_json(manifest))
        return manifest
