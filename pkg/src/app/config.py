"""Run configuration: environment settings plus command-line flags over an optional key=value file."""

import argparse
import logging
import os
from dataclasses import dataclass, fields

from src.constants import (
    COMMANDS,
    DEFAULT_BIAS_ALLOWANCE,
    DEFAULT_H,
    DEFAULT_K,
    DEFAULT_REPLICATES,
    DEFAULT_SEED,
    DEFAULT_STEP_BUDGET,
    MODELS,
)
from src.models.errors import ConfigError

log = logging.getLogger(__name__)

MATRICES = ("q", "p", "g", "b", "ghat", "gbar", "a-kappa", "b-kappa")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class EnvSettings:
    out_dir: str | None
    workers: int
    step_budget: int
    log_level: str


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{name} must be at least 1, got {value}")
    return value


def load_env_settings() -> EnvSettings:
    log_level = os.environ.get("SEEDBANK_LOG_LEVEL", "INFO").upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"SEEDBANK_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}")
    return EnvSettings(
        out_dir=os.environ.get("SEEDBANK_OUT_DIR") or None,
        workers=_env_int("SEEDBANK_WORKERS", 1),
        step_budget=_env_int("SEEDBANK_STEP_BUDGET", DEFAULT_STEP_BUDGET),
        log_level=log_level,
    )


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: str = "seedbank"
    c: float = 1.0
    c_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.02)
    K: float = DEFAULT_K
    alpha_prime: float = 0.0
    n0: int = 3
    m0: int = 2
    x0: float = 0.5
    y0: float = 0.5
    t_list: tuple[float, ...] = (1.0,)
    h: float = DEFAULT_H
    replicates: int = DEFAULT_REPLICATES
    seed: int = DEFAULT_SEED
    out_path: str | None = None
    out_dir: str | None = None
    workers: int = 1
    step_budget: int = DEFAULT_STEP_BUDGET
    pairs: tuple[tuple[int, int], ...] = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2))
    points: tuple[tuple[float, float], ...] = ()
    joint: tuple[tuple[float, float], ...] = ()
    C_grid: tuple[float, ...] = (10.0, 40.0, 160.0)
    horizon: float = 1.0
    bias_allowance: float = DEFAULT_BIAS_ALLOWANCE
    matrix: str = "g"
    limit: bool = False
    rescaled: bool = False
    verbose: bool = False

    def params(self) -> dict[str, object]:
        """Every field except command, seed and output placement, for CSV metadata."""
        skip = {"command", "seed", "out_path", "out_dir", "verbose", "workers"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _int_pairs(text: str) -> tuple[tuple[int, int], ...]:
    return tuple((int(a), int(b)) for a, b in (item.split(":") for item in text.split(",") if item.strip()))


def _float_pairs(text: str) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in (item.split(":") for item in text.split(",") if item.strip()))


def _flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# key -> (converter, flag spelling)
_CONVERTERS = {
    "model": (str, "--model"),
    "c": (float, "--c"),
    "c_list": (_floats, "--c-list"),
    "K": (float, "--K"),
    "alpha_prime": (float, "--alpha-prime"),
    "n0": (int, "--n0"),
    "m0": (int, "--m0"),
    "x0": (float, "--x0"),
    "y0": (float, "--y0"),
    "t_list": (_floats, "--t-list"),
    "h": (float, "--h"),
    "replicates": (int, "--replicates"),
    "seed": (int, "--seed"),
    "out_path": (str, "--out"),
    "workers": (int, "--workers"),
    "step_budget": (int, "--step-budget"),
    "pairs": (_int_pairs, "--pairs"),
    "points": (_float_pairs, "--points"),
    "joint": (_float_pairs, "--joint"),
    "C_grid": (_floats, "--C-grid"),
    "horizon": (float, "--horizon"),
    "bias_allowance": (float, "--bias-allowance"),
    "matrix": (str, "--matrix"),
    "limit": (_flag, "--limit"),
    "rescaled": (_flag, "--rescaled"),
}
_ALIASES = {"t": "t_list", "out": "out_path"}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="seedbank",
        description="Seed bank coalescent scaling limits: matrices, simulation, checks.",
        allow_abbrev=False,
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", dest="config_file", default=None, help="key=value file; flags override it")
    parser.add_argument("--verbose", action="store_true", default=None)
    for key, (_, flag) in _CONVERTERS.items():
        if key in ("limit", "rescaled"):
            parser.add_argument(flag, dest=key, action="store_true", default=None)
        elif key == "t_list":
            parser.add_argument("--t", "--t-list", dest=key, default=None)
        else:
            parser.add_argument(flag, dest=key, default=None)
    return parser


def _convert(key: str, raw: str) -> object:
    converter, _ = _CONVERTERS[key]
    try:
        return converter(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"Invalid value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict[str, object]:
    """Flat key=value lines; '#' starts a comment; keys may use '-' or '_'."""
    values: dict[str, object] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Config line {number} is not key=value: {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _CONVERTERS:
            raise ConfigError(f"Unknown config key {key!r} on line {number}")
        values[key] = _convert(key, raw)
    return values


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")


def validate(config: RunConfig) -> RunConfig:
    if config.model not in MODELS:
        raise ConfigError(f"model must be one of {', '.join(MODELS)}, got {config.model!r}")
    if config.matrix not in MATRICES:
        raise ConfigError(f"matrix must be one of {', '.join(MATRICES)}, got {config.matrix!r}")
    _positive("c", config.c)
    if not config.c_list:
        raise ConfigError("c_list must not be empty")
    for c in config.c_list:
        _positive("c_list entry", c)
    _positive("K", config.K)
    _positive("h", config.h)
    _positive("horizon", config.horizon)
    if config.alpha_prime < 0:
        raise ConfigError(f"alpha_prime must be non-negative, got {config.alpha_prime}")
    if config.n0 < 0 or config.m0 < 0 or config.n0 + config.m0 < 1:
        raise ConfigError(f"n0, m0 must be non-negative with n0 + m0 >= 1, got ({config.n0}, {config.m0})")
    for name, value in (("x0", config.x0), ("y0", config.y0)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    for x, y in config.points:
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigError(f"points must lie in [0, 1]^2, got ({x}, {y})")
    if not config.t_list or any(t < 0 for t in config.t_list):
        raise ConfigError(f"t_list must be non-empty and non-negative, got {config.t_list}")
    if config.replicates < 1:
        raise ConfigError(f"replicates must be at least 1, got {config.replicates}")
    if config.seed < 0:
        raise ConfigError(f"seed must be non-negative, got {config.seed}")
    if config.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {config.workers}")
    if config.step_budget < 1:
        raise ConfigError(f"step_budget must be at least 1, got {config.step_budget}")
    if config.bias_allowance < 0:
        raise ConfigError(f"bias_allowance must be non-negative, got {config.bias_allowance}")
    if not config.pairs or any(n < 0 or m < 0 for n, m in config.pairs):
        raise ConfigError(f"pairs must be non-empty and non-negative, got {config.pairs}")
    return config


def parse_config(
    argv: list[str], config_text: str | None = None, env: EnvSettings | None = None
) -> RunConfig:
    """Defaults, then environment, then the config file, then flags."""
    args = vars(build_parser().parse_args(argv))
    if config_text is None and args.get("config_file"):
        path = args["config_file"]
        try:
            with open(path, encoding="utf-8") as f:
                config_text = f.read()
        except OSError as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc

    values: dict[str, object] = {}
    if env is not None:
        values.update(workers=env.workers, step_budget=env.step_budget, out_dir=env.out_dir)
    if config_text:
        values.update(parse_config_text(config_text))
    for key in _CONVERTERS:
        raw = args.get(key)
        if raw is None:
            continue
        values[key] = raw if isinstance(raw, bool) else _convert(key, raw)
    if args.get("verbose"):
        values["verbose"] = True
    config = RunConfig(command=args["command"], **values)
    log.debug("Run config: %s", config)
    return validate(config)
