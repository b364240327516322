import configparser
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.utils.errors import ConfigurationError

load_dotenv()


class Settings(BaseSettings):
    THREADS: int = 1
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False
    OUTPUT_DIR: str = "runs"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="NLAB_", case_sensitive=True)


settings = Settings()


def read_ini(path: Path) -> Dict[str, Dict[str, str]]:
    """Read an INI experiment file into {section: {key: raw value}}."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigurationError(f"Malformed config file {path}: {e}") from e

    sections: Dict[str, Dict[str, str]] = {}
    for name in parser.sections():
        sections[name] = dict(parser.items(name))
    if parser.defaults():
        sections.setdefault("run", {}).update(parser.defaults())
    return sections


def write_ini(sections: Dict[str, Dict[str, Any]], path: Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, values in sections.items():
        parser[name] = {key: _format_value(value) for key, value in values.items()}
    with open(path, "w", encoding="utf-8") as handle:
        parser.write(handle)


def apply_overrides(
    sections: Dict[str, Dict[str, str]], overrides: Iterable[str]
) -> Dict[str, Dict[str, str]]:
    """Apply ``section.key=value`` overrides on top of parsed sections."""
    merged = {name: dict(values) for name, values in sections.items()}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"Override '{item}' is not of the form section.key=value")
        section, dot, field = key.strip().partition(".")
        if not dot:
            section, field = "run", section
        merged.setdefault(section, {})[field] = value.strip()
    return merged


def nest_sections(
    sections: Dict[str, Dict[str, str]], nested: Dict[str, Optional[str]]
) -> Dict[str, Any]:
    """Turn flat INI sections into the nested dict the pydantic models expect.

    ``nested`` maps an INI section name to the model field it fills; ``None``
    means its keys live at the top level. Dotted keys (``glyph.num_classes``)
    descend into sub-models.
    """
    payload: Dict[str, Any] = {}
    for name, values in sections.items():
        if name not in nested:
            raise ConfigurationError(f"Unknown config section [{name}]")
        target = payload if nested[name] is None else payload.setdefault(nested[name], {})
        for key, raw in values.items():
            node = target
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = _parse_value(raw)
    return payload


def validation_message(error: ValidationError) -> str:
    problems = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        problems.append(f"{location}: {item['msg']}")
    return "; ".join(problems)


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    return text


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(item) for item in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)
