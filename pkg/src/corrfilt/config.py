"""INI configuration for scenarios.

Keys are grouped in sections; every key maps onto a
:class:`~corrfilt.experiment.ScenarioConfig` field::

    [signal]       b1 b2 sigma2 init q_form
    [observation]  f_p delta m_a
    [noise]        D sigma_u sigma_v0 dist
    [attacks]      sigma_w
    [experiment]   steps runs gamma_bar lambda_bar lag seed mode policy
                   nominal tail cross_terms cell_seeds
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .experiment import ScenarioConfig

SECTIONS: dict[str, tuple[str, ...]] = {
    "signal": ("b1", "b2", "sigma2", "init", "q_form"),
    "observation": ("f_p", "delta", "m_a"),
    "noise": ("D", "sigma_u", "sigma_v0", "dist"),
    "attacks": ("sigma_w",),
    "experiment": ("steps", "runs", "gamma_bar", "lambda_bar", "lag", "seed", "mode",
                   "policy", "nominal", "tail", "cross_terms", "cell_seeds"),
}

_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str) -> Any:
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if kind == "int":
            return int(text, 0)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in _TRUE | _FALSE:
                return low in _TRUE
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}", key=key) from None
    if kind.startswith("Optional") and text.lower() in ("", "none", "auto"):
        return None
    return text


def parse_config(text: str, source: str = "<string>") -> dict[str, Any]:
    """Parse INI text into a flat ``{field: value}`` mapping."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep "D" distinct from "d"
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict[str, Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", key=section)
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", key=key)
            values[key] = _coerce(key, raw)
    return values


def load_config(path: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """Defaults, then the file at ``path``, then non-``None`` ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", key="config") from exc
        values.update(parse_config(text, source=str(path)))
    for key, val in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", key=key)
        if val is not None:
            values[key] = val
    return replace(ScenarioConfig(), **values).validate()


def dump_config(cfg: ScenarioConfig) -> str:
    """Render ``cfg`` back to INI text; round-trips through :func:`parse_config`."""
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(cfg, key)
            lines.append(f"{key} = {'none' if val is None else val}")
        lines.append("")
    return "\n".join(lines)
