"""Plain ``key = value`` configuration documents.

One key per line, dotted by section (``train.lr0 = 0.001``). ``#`` starts a
comment outside double quotes and blank lines are skipped. Lists are comma
separated and backbone stages are written ``2x8,2x16``. A string holding
``#`` is written in double quotes. Unknown keys are rejected.
"""

import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Tuple, Union, get_args, get_origin

from config.experiment.settings import ExperimentSettings, KeySchema, schema
from src.errors import ConfigError, ConfigParseError

PathLike = Union[str, Path]

_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


def _scalar(text: str, kind: Any) -> Any:
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected true or false, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"expected a finite number, got {text!r}")
        return value
    if get_origin(kind) is tuple:
        convs, channels = text.lower().split("x")
        return int(convs), int(channels)
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return text[1:-1]
    return text


def parse_value(text: str, entry: KeySchema) -> Any:
    """Convert the text of one value to the key's type.

    Raises:
        ValueError: If the text does not fit the type
    """
    text = text.strip()
    if get_origin(entry.type) is list:
        (item,) = get_args(entry.type)
        return [_scalar(part.strip(), item) for part in text.split(",")] if text else []
    return _scalar(text, entry.type)


def _render_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return f"{value[0]}x{value[1]}"
    text = str(value)
    if "#" in text or (len(text) >= 2 and text[0] == text[-1] == '"'):
        if "#" in text and '"' in text:
            raise ConfigError(f"cannot write {text!r}: it mixes '#' and double quotes")
        return f'"{text}"'
    return text


def render_value(value: Any) -> str:
    if isinstance(value, list):
        return ",".join(_render_scalar(v) for v in value)
    return _render_scalar(value)


def _assign(settings: ExperimentSettings, key: str, raw: str, line: int, key_col: int,
            value_col: int) -> None:
    keys = schema()
    entry = keys.get(key)
    if entry is None:
        raise ConfigParseError(f"unknown key {key!r}", line, key_col)
    try:
        value = parse_value(raw, entry)
    except ValueError as e:
        raise ConfigParseError(f"{key}: {e}", line, value_col) from e
    problem = entry.check(value)
    if problem:
        raise ConfigParseError(problem, line, value_col)
    settings.set(key, value)


def _comment_start(text: str) -> int:
    quoted = False
    for i, ch in enumerate(text):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return i
    return len(text)


def _split_line(text: str, line: int) -> Optional[Tuple[str, str, int, int]]:
    body = text[:_comment_start(text)]
    if not body.strip():
        return None
    if "=" not in body:
        raise ConfigParseError("expected key = value", line, len(body) - len(body.lstrip()) + 1)
    key_part, value_part = body.split("=", 1)
    key_col = len(key_part) - len(key_part.lstrip()) + 1
    value_col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
    return key_part.strip(), value_part.strip(), key_col, value_col


def parse_config(text: str, base: Optional[ExperimentSettings] = None) -> ExperimentSettings:
    """Parse a configuration document.

    Args:
        text: Document contents
        base: Settings the document is applied on top of (defaults when None)

    Returns:
        Settings with every key not in ``text`` left at its base value

    Raises:
        ConfigParseError: Unknown key, bad value or violated constraint, with location
    """
    settings = base.copy() if base is not None else ExperimentSettings()
    seen = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        parts = _split_line(raw_line, line_no)
        if parts is None:
            continue
        key, value, key_col, value_col = parts
        if key in seen:
            raise ConfigParseError(f"duplicate key {key!r}", line_no, key_col)
        seen.add(key)
        _assign(settings, key, value, line_no, key_col, value_col)
    return settings


def render_config(settings: ExperimentSettings) -> str:
    """Serialize every key; ``parse_config(render_config(s)) == s``."""
    lines, section = [], None
    for key, value in settings.items():
        current = key.split(".", 1)[0]
        if current != section:
            if section is not None:
                lines.append("")
            lines.append(f"# {current}")
            section = current
        lines.append(f"{key} = {render_value(value)}")
    return "\n".join(lines) + "\n"


def apply_overrides(settings: ExperimentSettings, overrides: Iterable[str]) -> ExperimentSettings:
    """Apply ``key=value`` flags on top of ``settings``; a flag wins over the file.

    Locations in errors refer to the override's position (1-based) as the line.
    """
    result = settings.copy()
    for position, flag in enumerate(overrides, start=1):
        parts = _split_line(flag, position)
        if parts is None:
            raise ConfigParseError("empty override", position, 1)
        key, value, key_col, value_col = parts
        _assign(result, key, value, position, key_col, value_col)
    return result


def load_config(path: Optional[PathLike], overrides: Iterable[str] = ()) -> ExperimentSettings:
    """Defaults, then the file (if any), then overrides; validated."""
    settings = ExperimentSettings()
    if path is not None:
        file = Path(path)
        if not file.exists():
            raise ConfigError(f"config file {file} does not exist")
        settings = parse_config(file.read_text())
    return apply_overrides(settings, list(overrides)).validate()


def documented_keys() -> List[Tuple[str, str, str]]:
    """(key, default, doc) for every key."""
    return [(k, render_value(e.default), e.doc) for k, e in schema().items()]
