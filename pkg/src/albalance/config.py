"""Run-config file parsing and schema validation.

The config is TOML-style: ``[section]`` headers with ``key = value`` lines.
Strings may be quoted, integer lists are written ``[1, 2, 3]``. Example:

    [run]
    budget = 8000
    iterations = 16
    af = "dmcs-rand"
    scheme_policy = "auto_switch"
    seeds = [0, 1, 2, 3, 4]

    [training]
    epochs = 60
    learning_rate = 0.01
    batch_size = 32
    l2 = 0.0001
    hidden_width = 256
    plateau_patience = 10

    [data]
    normalize = true

Every schema violation is collected, so one failed parse reports all bad
fields at once.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .acquisition import AF_TABLE
from .classifiers import TrainingConfig
from .runner import RunConfig, RunnerError, SchemePolicy


class ConfigError(Exception):
    """Invalid run config; ``problems`` lists every offending field."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid run config:\n" + "\n".join(f"  - {p}" for p in problems))


def _unquote(raw: str) -> str:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def _parse_int(raw: str) -> int:
    return int(_unquote(raw), 10)


def _parse_float(raw: str) -> float:
    return float(_unquote(raw))


def _parse_bool(raw: str) -> bool:
    val = _unquote(raw).lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_list(raw: str) -> list[int]:
    inner = _unquote(raw).strip()
    if inner.startswith("[") and inner.endswith("]"):
        inner = inner[1:-1]
    parts = [p for p in (s.strip() for s in inner.split(",")) if p]
    if not parts:
        raise ValueError("empty list")
    return [_parse_int(p) for p in parts]


_RUN_FIELDS = {
    "budget": _parse_int,
    "iterations": _parse_int,
    "af": _unquote,
    "scheme_policy": _unquote,
    "seeds": _parse_int_list,
}
_TRAINING_FIELDS = {
    "epochs": _parse_int,
    "learning_rate": _parse_float,
    "batch_size": _parse_int,
    "l2": _parse_float,
    "hidden_width": _parse_int,
    "plateau_patience": _parse_int,
    "lr_decay": _parse_float,
}
_DATA_FIELDS = {
    "normalize": _parse_bool,
    "embeddings": _unquote,
    "labels": _unquote,
    "test_embeddings": _unquote,
    "test_labels": _unquote,
    "eval_reference": _unquote,
}


def load_run_config(path: str | Path) -> tuple[RunConfig, dict]:
    """Parse and validate a run config file.

    Returns the config plus the raw ``[data]`` section (test-set paths may
    live there or be given on the command line).
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as err:
        raise ConfigError([f"cannot parse config file: {err}"]) from err

    problems: list[str] = []
    values: dict[str, dict] = {"run": {}, "training": {}, "data": {}}
    field_maps = {"run": _RUN_FIELDS, "training": _TRAINING_FIELDS, "data": _DATA_FIELDS}

    for section in parser.sections():
        if section not in field_maps:
            problems.append(f"unknown section [{section}]")
            continue
        fields = field_maps[section]
        for key, raw in parser[section].items():
            if key not in fields:
                problems.append(f"[{section}] unknown key {key!r}")
                continue
            try:
                values[section][key] = fields[key](raw)
            except ValueError as err:
                problems.append(f"[{section}] {key}: {err}")

    run = values["run"]
    for required in ("budget", "iterations", "af"):
        if required not in run:
            problems.append(f"[run] missing required key {required!r}")
    if "af" in run and run["af"] not in AF_TABLE:
        problems.append(
            f"[run] af: unknown acquisition function {run['af']!r} "
            f"(expected one of {sorted(AF_TABLE)})"
        )
    policy = run.get("scheme_policy", SchemePolicy.CS_SVM_ONLY.value)
    if policy not in [p.value for p in SchemePolicy]:
        problems.append(
            f"[run] scheme_policy: unknown policy {policy!r} "
            f"(expected one of {[p.value for p in SchemePolicy]})"
        )
    if "budget" in run and run["budget"] < 1:
        problems.append("[run] budget: must be >= 1")
    if "iterations" in run and run["iterations"] < 1:
        problems.append("[run] iterations: must be >= 1")
    seeds = run.get("seeds", [0])
    if any(s < 0 for s in seeds):
        problems.append("[run] seeds: must be non-negative")
    if problems:
        raise ConfigError(sorted(problems))

    try:
        training = TrainingConfig(**values["training"])
        config = RunConfig(
            budget=run["budget"],
            iterations=run["iterations"],
            af_name=run["af"],
            scheme_policy=SchemePolicy(policy),
            seeds=tuple(seeds),
            training=training,
            normalize_embeddings=values["data"].get("normalize", True),
            eval_reference=values["data"].get("eval_reference", ""),
        )
    except (ValueError, TypeError, RunnerError) as err:  # dataclass validation
        raise ConfigError([str(err)]) from err
    return config, values["data"]
