"""Run configuration layering: defaults < config file < environment < flags."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

ENV_PREFIX = "BOXGRADE_"
FORMAT_VERSION = 1


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str  # dest name, e.g. "bad_iou_min"
    type: Callable = str
    default: Any = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None
    flag: bool = False  # boolean switch

    @property
    def cli(self) -> str:
        return "--" + self.name.replace("_", "-")


def to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _coerce(opt: Opt, value, source: str):
    if value is None:
        return None
    try:
        out = to_bool(value) if opt.flag else opt.type(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{opt.cli}: bad value {value!r} from {source}: {exc}") from None
    if opt.choices and out not in opt.choices:
        raise UsageError(f"{opt.cli}: {out!r} from {source} is not one of {opt.choices}")
    return out


def read_config_file(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    parser.read(path)
    return parser


def resolve(command: str, opts, flags: dict, config_file=None, presets: dict | None = None,
            environ=None) -> dict:
    """Merge option values for ``command``.

    Precedence, lowest first: option defaults, ``presets``, the config file
    (``[global]`` then ``[command]`` section), ``BOXGRADE_<NAME>``
    environment variables, explicit flags.
    """
    environ = os.environ if environ is None else environ
    cfg = read_config_file(config_file) if config_file else None
    out = {}
    for opt in opts:
        value, source = opt.default, "default"
        if presets and opt.name in presets:
            value, source = presets[opt.name], "preset"
        if cfg is not None:
            for section in ("global", command):
                if cfg.has_option(section, opt.name):
                    value, source = cfg.get(section, opt.name), f"config [{section}]"
        env_key = ENV_PREFIX + opt.name.upper()
        if env_key in environ:
            value, source = environ[env_key], f"${env_key}"
        if flags.get(opt.name) is not None:
            value, source = flags[opt.name], "flag"
        value = _coerce(opt, value, source)
        if opt.required and value is None:
            raise UsageError(f"{command}: {opt.cli} is required")
        out[opt.name] = value
    return out


def run_config(command: str, values: dict) -> dict:
    """The provenance block written into every artifact."""
    return {"command": command, "format_version": FORMAT_VERSION,
            "options": {k: v for k, v in sorted(values.items())}}
