"""Settings access and the flat key = value experiment config file."""
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Optional, Union

from pydantic import ValidationError

from fedprompt.config import Settings
from fedprompt.core.errors import ConfigError, MissingFile
from fedprompt.schemas.config import FedConfig

logger = logging.getLogger(__name__)


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance; bad FEDPROMPT_* values are a ConfigError."""
    try:
        return Settings()
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigError(f"FEDPROMPT_{err['loc'][0]}: {err['msg']}") from e


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _optional_float(v: str) -> Optional[float]:
    return None if v.lower() in {"", "none", "null", "iid"} else float(v)


def _optional_str(v: str) -> Optional[str]:
    return None if v.lower() in {"", "none", "null"} else v


def _int_list(v: str) -> list[int]:
    return [int(x) for x in v.replace(",", " ").split()]


def _label_words(v: str) -> list[list[str]]:
    return [[w.strip() for w in group.split(",") if w.strip()] for group in v.split(";")]


# flat key -> (section or None, field, converter)
CONFIG_KEYS: dict[str, tuple[Optional[str], str, Callable[[str], Any]]] = {
    "clients": (None, "clients", _int),
    "fraction": (None, "fraction", _float),
    "rounds": (None, "rounds", _int),
    "batch": (None, "batch", _int),
    "local_steps": (None, "local_steps", _int),
    "seed": (None, "seed", _int),
    "backbone_seed": (None, "backbone_seed", _int),
    "prompt_seed": (None, "prompt_seed", _int),
    "alpha": (None, "alpha", _optional_float),
    "timeout": (None, "timeout", _optional_float),
    "optimizer": ("optimizer", "kind", str.lower),
    "lr": ("optimizer", "lr", _float),
    "trigger": ("attack", "trigger", str),
    "target": ("attack", "target_label", _int),
    "lambda": ("attack", "poison_rate", _float),
    "malicious": ("attack", "malicious_clients", _int_list),
    "malicious_fraction": ("attack", "malicious_fraction", _float),
    "clip_norm": ("ldp", "clip_norm", _float),
    "laplace_b": ("ldp", "laplace_scale", _float),
    "noise_seed": ("ldp", "noise_seed", _int),
    "screen_tau": ("screen", "mad_threshold", _float),
    "vocab": ("model", "vocab_size", _int),
    "hidden": ("model", "hidden", _int),
    "ffn": ("model", "ffn", _int),
    "m": ("model", "prompt_len", _int),
    "L_max": ("model", "max_len", _int),
    "label_words": ("model", "label_words", _label_words),
    "n_train": ("data", "n_train", _int),
    "n_test": ("data", "n_test", _int),
    "words_per_text": ("data", "words_per_text", _int),
    "contamination": ("data", "contamination", _float),
    "data_seed": ("data", "data_seed", _int),
    "train_path": ("data", "train_path", _optional_str),
    "test_path": ("data", "test_path", _optional_str),
    "partition_path": ("data", "partition_path", _optional_str),
}


def parse_config_text(text: str) -> FedConfig:
    """Parse `key = value` lines (# comments, blank lines ignored) into a FedConfig."""
    raw: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {}
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}", line=line_no)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", line=line_no)
        seen.add(key)
        section, field, convert = CONFIG_KEYS[key]
        try:
            converted = convert(value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {value!r}", line=line_no) from e
        if section is None:
            raw[field] = converted
        else:
            sections.setdefault(section, {})[field] = converted

    attack = sections.get("attack")
    if attack is not None and "malicious_fraction" in attack:
        fraction = attack.pop("malicious_fraction")
        if "malicious_clients" in attack:
            raise ConfigError("give either 'malicious' or 'malicious_fraction', not both")
        # local import: data_service pulls in the model stack
        from fedprompt.services.data_service import pick_malicious

        attack["malicious_clients"] = list(
            pick_malicious(raw.get("clients", FedConfig.model_fields["clients"].default),
                           fraction, raw.get("seed", 0))
        )
    raw.update(sections)
    try:
        return FedConfig.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"{where}: {err['msg']}") from e


def load_config(path: Union[str, Path]) -> FedConfig:
    """
    Load and validate an experiment config file.

    Args:
        path: Flat `key = value` file

    Returns:
        The validated configuration

    Raises:
        MissingFile: If the file does not exist
        ConfigError: If a line or value is malformed
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"Config file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"))
    logger.debug(f"Loaded config from {path}")
    return cfg


def _fmt(value: Any) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return ";".join(",".join(group) for group in value)
        return ",".join(str(v) for v in value)
    return "none" if value is None else str(value)


def format_config(cfg: FedConfig) -> str:
    """Inverse of parse_config_text: one `key = value` line per set field."""
    lines = []
    for key, (section, field, _) in CONFIG_KEYS.items():
        if field == "malicious_fraction":
            continue
        holder: Any = cfg if section is None else getattr(cfg, section)
        if holder is None:
            continue
        value = getattr(holder, field)
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
