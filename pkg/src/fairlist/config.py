"""Run configuration: one INI file plus ``--set section.key=value`` overrides."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

from .calllog import FIELDS
from .exposure import SlotSchedule
from .recommender import EnsembleConfig
from .simulator import ALL_VARIANTS, DepthMode, ModelVariant
from .users import FilterThresholds

OUTPUT_DIR_ENV = "FAIRLIST_OUTPUT_DIR"

DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {"logs": "", "items": "", "output_dir": "out"},
    "ingest": {"delimiter": ",", "heard_threshold": "0.45"},
    "columns": {},
    "thresholds": {"min_calls": "8", "min_keys_per_second": repr(1 / 240), "divergence_keep_fraction": "0.6"},
    "clustering": {"k": "5", "k_min": "2", "k_max": "8", "gamma": "", "seed": "0"},
    "classifier": {
        "mode": "ensemble",
        "n_trees": "50",
        "max_depth": "6",
        "max_features": "",
        "validation_fraction": "0.25",
        "seed": "0",
    },
    "policy": {"min_share": "0.05"},
    "schedule": {
        "start_hour": "18",
        "end_hour": "21",
        "days": "34",
        "horizon_hours": "100",
        "regen_interval": "1",
        "list_length": "10",
        "origin": "",
    },
    "simulation": {"variants": "all", "depth_mode": "replay", "seed": "0", "topic": ""},
    "report": {"format": "delimited", "per_item_gini": "false", "run_id": "run"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    logs: Path | None
    items: Path | None
    output_dir: Path
    delimiter: str
    heard_threshold: float
    columns: dict[str, str]
    thresholds: FilterThresholds
    k: int | None  # None: choose by elbow over k_range
    k_range: tuple[int, ...]
    gamma: float | None
    cluster_seed: int
    classifier_mode: str
    ensemble: EnsembleConfig
    classifier_seed: int
    min_share: float
    schedule: SlotSchedule
    origin: date | None
    variants: tuple[ModelVariant, ...]
    depth_mode: DepthMode
    seed: int
    topic: str
    report_format: str
    per_item_gini: bool
    run_id: str
    raw: dict[str, dict[str, str]] = field(default_factory=dict)

    def config_hash(self) -> str:
        """Digest of every setting except the output location."""
        h = hashlib.sha256()
        for section in sorted(self.raw):
            for key in sorted(self.raw[section]):
                if (section, key) == ("paths", "output_dir"):
                    continue
                h.update(f"{section}.{key}={self.raw[section][key]}\n".encode())
        return h.hexdigest()[:16]


def _merge(parser: configparser.ConfigParser, overrides: Iterable[str]) -> dict[str, dict[str, str]]:
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    for section in parser.sections():
        if section not in raw:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if section != "columns" and key not in raw[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            raw[section][key] = value
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if section not in raw or (section != "columns" and key not in raw[section]):
            raise ConfigError(f"unknown config key {lhs.strip()}")
        raw[section][key] = value.strip()
    return raw


def _int(raw, section, key) -> int:
    try:
        return int(raw[section][key])
    except ValueError:
        raise ConfigError(f"{section}.{key} must be an integer, got {raw[section][key]!r}") from None


def _float(raw, section, key) -> float:
    try:
        return float(raw[section][key])
    except ValueError:
        raise ConfigError(f"{section}.{key} must be a number, got {raw[section][key]!r}") from None


def _variants(text: str) -> tuple[ModelVariant, ...]:
    if text.strip().lower() == "all":
        return ALL_VARIANTS
    try:
        chosen = {ModelVariant(v.strip()) for v in text.split(",") if v.strip()}
    except ValueError as err:
        raise ConfigError(f"unknown variant in {text!r}: {err}") from None
    if not chosen:
        raise ConfigError("simulation.variants is empty")
    return tuple(v for v in ALL_VARIANTS if v in chosen)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = (), env=None) -> RunConfig:
    """Read ``path`` (optional), apply overrides, then the output-dir env var."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep column names case-sensitive
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        parser.read(path)
        base = path.parent
    raw = _merge(parser, overrides)
    if env.get(OUTPUT_DIR_ENV):
        raw["paths"]["output_dir"] = env[OUTPUT_DIR_ENV]

    def resolve(value: str) -> Path | None:
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    unknown_cols = set(raw["columns"]) - set(FIELDS)
    if unknown_cols:
        raise ConfigError(f"unknown event fields in [columns]: {sorted(unknown_cols)}")

    c = raw["clustering"]
    k = None if c["k"].strip().lower() == "auto" else _int(raw, "clustering", "k")
    k_range = tuple(range(_int(raw, "clustering", "k_min"), _int(raw, "clustering", "k_max") + 1))

    cl = raw["classifier"]
    mode = cl["mode"].strip().lower()
    if mode not in ("ensemble", "oracle"):
        raise ConfigError(f"classifier.mode must be ensemble or oracle, got {cl['mode']!r}")
    ensemble = EnsembleConfig(
        n_trees=_int(raw, "classifier", "n_trees"),
        max_depth=_int(raw, "classifier", "max_depth"),
        max_features=_int(raw, "classifier", "max_features") if cl["max_features"] else None,
        validation_fraction=_float(raw, "classifier", "validation_fraction"),
    )

    s = raw["schedule"]
    try:
        schedule = SlotSchedule.daily(
            _int(raw, "schedule", "start_hour"),
            _int(raw, "schedule", "end_hour"),
            _int(raw, "schedule", "days"),
            horizon_hours=_float(raw, "schedule", "horizon_hours"),
            regen_interval=_float(raw, "schedule", "regen_interval"),
            list_length=_int(raw, "schedule", "list_length"),
        )
        thresholds = FilterThresholds(
            _int(raw, "thresholds", "min_calls"),
            _float(raw, "thresholds", "min_keys_per_second"),
            _float(raw, "thresholds", "divergence_keep_fraction"),
        )
        origin = date.fromisoformat(s["origin"]) if s["origin"] else None
        depth_mode = DepthMode(raw["simulation"]["depth_mode"].strip())
    except ValueError as err:
        raise ConfigError(str(err)) from None

    fmt = raw["report"]["format"].strip().lower()
    if fmt not in ("delimited", "structured"):
        raise ConfigError(f"report.format must be delimited or structured, got {fmt!r}")

    return RunConfig(
        logs=resolve(raw["paths"]["logs"]),
        items=resolve(raw["paths"]["items"]),
        output_dir=Path(raw["paths"]["output_dir"]) if env.get(OUTPUT_DIR_ENV) else resolve(raw["paths"]["output_dir"]),
        delimiter=raw["ingest"]["delimiter"] or ",",
        heard_threshold=_float(raw, "ingest", "heard_threshold"),
        columns=dict(raw["columns"]),
        thresholds=thresholds,
        k=k,
        k_range=k_range,
        gamma=_float(raw, "clustering", "gamma") if c["gamma"] else None,
        cluster_seed=_int(raw, "clustering", "seed"),
        classifier_mode=mode,
        ensemble=ensemble,
        classifier_seed=_int(raw, "classifier", "seed"),
        min_share=_float(raw, "policy", "min_share"),
        schedule=schedule,
        origin=origin,
        variants=_variants(raw["simulation"]["variants"]),
        depth_mode=depth_mode,
        seed=_int(raw, "simulation", "seed"),
        topic=raw["simulation"]["topic"].strip(),
        report_format=fmt,
        per_item_gini=raw["report"]["per_item_gini"].strip().lower() in ("1", "true", "yes", "on"),
        run_id=raw["report"]["run_id"].strip() or "run",
        raw=raw,
    )


def write_config(raw: dict[str, dict[str, str]], path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in raw.items():
        if values:
            parser[section] = values
    with open(path, "w") as fh:
        parser.write(fh)
