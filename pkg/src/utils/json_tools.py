"""Utilities for converting numeric and model objects into JSON-serializable values."""
from __future__ import annotations

import dataclasses
import json
from typing import Any

import numpy as np


def make_json_safe(value: Any) -> Any:
    """Recursively convert numpy values, pydantic models and dataclasses into JSON primitives.

    Falls back to string conversion when no structured representation is available.
    """

    if value is None or isinstance(value, (str, int, float, bool)):
        return value

    if isinstance(value, np.generic):
        return value.item()

    if isinstance(value, np.ndarray):
        return make_json_safe(value.tolist())

    if isinstance(value, (list, tuple, set)):
        return [make_json_safe(v) for v in value]

    if isinstance(value, dict):
        return {str(k): make_json_safe(v) for k, v in value.items()}

    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return make_json_safe(dataclasses.asdict(value))

    for attr in ("model_dump", "to_dict", "as_dict"):
        method = getattr(value, attr, None)
        if callable(method):
            try:
                return make_json_safe(method())
            except Exception:
                continue

    return str(value)


def dump_pretty(value: Any) -> str:
    """Stable pretty JSON (sorted keys) so that identical inputs give identical bytes."""
    return json.dumps(make_json_safe(value), ensure_ascii=False, indent=2, sort_keys=True) + "\n"
