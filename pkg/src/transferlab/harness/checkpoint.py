"""JSON checkpoints with parameter values stored as exact decimal text."""

from __future__ import annotations

import json
from pathlib import Path

from ..diffcore import ParamGroup
from ..errors import ConfigError

FORMAT_VERSION = 1


def group_record(group: ParamGroup) -> dict:
    return {
        "name": group.name,
        "shapes": [list(s) for s in group.shapes],
        # repr gives the shortest decimal string that round-trips exactly
        "values": [repr(float(v)) for v in group.values],
    }


def group_from_record(rec: dict) -> ParamGroup:
    return ParamGroup(rec["name"], [tuple(s) for s in rec["shapes"]],
                      [float(v) for v in rec["values"]])


def save_checkpoint(path, groups, config_hash: str = "", rng_state=None, meta=None):
    payload = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "rng_state": rng_state,
        "meta": meta or {},
        "groups": [group_record(g) for g in groups],
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path) -> dict:
    """Returns the payload with ``groups`` rebuilt as a name -> ParamGroup dict."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint {path} has format version {payload.get('format_version')}, "
            f"expected {FORMAT_VERSION}"
        )
    payload["groups"] = {rec["name"]: group_from_record(rec) for rec in payload["groups"]}
    return payload
