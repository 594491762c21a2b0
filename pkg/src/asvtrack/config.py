"""Config file loading.

Two formats are accepted: YAML (``.yaml``/``.yml``) and a plain ``key = value``
text format with ``#`` comments. Both are flattened to dotted keys, so
``wind: {speed_knots: 4}`` and ``wind.speed_knots = 4`` are equivalent.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration."""


def _coerce(text: str) -> Any:
    value = yaml.safe_load(text)
    return text if value is None and text.strip() not in ("null", "~", "") else value


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a config file into a flat ``{dotted.key: value}`` dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml", ".json"):
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(tree, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        return flatten(tree)

    flat: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split(sep, 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        flat[key] = _coerce(value)
    return flat


def section(flat: Mapping[str, Any], prefix: str) -> dict[str, Any]:
    """Return the entries under ``prefix.`` with the prefix stripped."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in flat.items() if k.startswith(head)}


def config_hash(flat: Mapping[str, Any]) -> str:
    blob = json.dumps(dict(flat), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
