"""Config files, command-line overrides and the output root."""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from pydantic import BaseModel, ValidationError

from loasp.types.config import PRESETS, RunConfig
from loasp.types.errors import ConfigurationError

OUTPUT_ENV = "LOASP_OUT"
DEFAULT_OUTPUT = "runs"
LIST_KEYS = frozenset({"seeds", "data.domains", "spline.domain"})


def known_keys() -> List[str]:
    """Every dotted key a config file or override may set."""
    keys = []
    for name, field in RunConfig.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            keys.extend(f"{name}.{sub}" for sub in annotation.model_fields)
        else:
            keys.append(name)
    return sorted(keys)


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ConfigurationError: If the file is missing or a line has no ``=``.
    """
    source = Path(path)
    if not source.is_file():
        raise ConfigurationError(f"config file not found: {source}")
    values: Dict[str, str] = {}
    for number, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{number}: expected 'key = value', got {line.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    """``["train.epochs=3", ...]`` to a flat mapping."""
    values: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"override must look like key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def parse_value(key: str, raw: Any) -> Any:
    """JSON literal when possible, comma list for list keys, else the raw string."""
    if not isinstance(raw, str):
        return raw
    try:
        value = json.loads(raw)
    except ValueError:
        if "," in raw:
            value = [parse_value(key, part.strip()) for part in raw.split(",") if part.strip()]
        else:
            value = raw
    if key in LIST_KEYS and not isinstance(value, list):
        value = [value]
    return value


def _assign(tree: Dict[str, Any], key: str, value: Any) -> None:
    node = tree
    *parents, leaf = key.split(".")
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def build_run_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Assemble a validated RunConfig.

    The preset is applied first, then file values, then overrides.

    Args:
        file_values: Output of ``load_config_file``.
        overrides: Output of ``parse_overrides``; wins over file values.

    Returns:
        The validated configuration.

    Raises:
        ConfigurationError: On unknown keys, an unknown preset or invalid values.

    Example:
        >>> build_run_config(overrides={"loasp.r": "8"}).loasp.r
        8
    """
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update(overrides or {})
    allowed = known_keys()
    unknown = [k for k in merged if k not in allowed]
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}", valid=allowed)

    preset = str(merged.pop("preset", RunConfig.model_fields["preset"].default))
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}", valid=sorted(PRESETS))
    tree: Dict[str, Any] = {"preset": preset}
    for key, value in PRESETS[preset].items():
        _assign(tree, key, value)
    for key, raw in merged.items():
        _assign(tree, key, parse_value(key, raw))

    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigurationError(f"invalid configuration: {details}") from exc


def get_output_root(explicit: Optional[Union[str, Path]] = None) -> Path:
    """Output directory from the argument, then ``LOASP_OUT``, then ``./runs``."""
    if explicit:
        return Path(explicit)
    return Path(os.getenv(OUTPUT_ENV) or DEFAULT_OUTPUT)
