"""Declarative gateway configuration, loaded from a single YAML file.

Paths inside the file are resolved relative to the file itself, so a config
directory can be moved as a unit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .metrics import RewardWeights
from .model import SystemDescriptor, SystemKind, TaskType

DEFAULT_RPP = {TaskType.RANKING: 10, TaskType.RECOMMENDATION: 6}
DEFAULT_SESSION_TIMEOUT = 30 * 60.0

DEFAULT_INDEX_FIELDS = {
    "literature": ("TITLE",),
    "social-science": ("title", "title_en", "abstract", "abstract_en", "topic", "topic_en"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusPaths:
    documents: str | None = None
    schema: str = "literature"
    index_fields: tuple[str, ...] | None = None
    publications: str | None = None
    datasets: str | None = None
    head_queries: str | None = None


@dataclass(frozen=True)
class SystemEntry:
    descriptor: SystemDescriptor
    run_file: str | None = None
    url: str | None = None
    timeout: float = 2.0
    max_in_flight: int = 8


@dataclass(frozen=True)
class GatewayConfig:
    site: str
    systems: tuple[SystemEntry, ...]
    feedback_log: str
    corpora: CorpusPaths = CorpusPaths()
    default_task: TaskType | None = None
    rotation_seed: int = 0
    session_timeout: float = DEFAULT_SESSION_TIMEOUT
    flush_interval: float = 60.0
    forward_to: str | None = None
    rpp: Mapping[TaskType, int] = field(default_factory=lambda: dict(DEFAULT_RPP))
    weights: RewardWeights = RewardWeights()

    def __post_init__(self) -> None:
        names = [entry.descriptor.name for entry in self.systems]
        if len(set(names)) != len(names):
            raise ConfigError("system names must be unique")
        for task in TaskType:
            task_systems = [e for e in self.systems if e.descriptor.task is task]
            baselines = [e for e in task_systems if e.descriptor.is_baseline]
            if task_systems and len(baselines) != 1:
                raise ConfigError(
                    f"task {task.value!r} needs exactly one baseline system, found {len(baselines)}"
                )
        for task, value in self.rpp.items():
            if value < 1:
                raise ConfigError(f"rpp for {task.value!r} must be >= 1")
        if self.session_timeout <= 0:
            raise ConfigError("session_timeout must be positive")

    def systems_for(self, task: TaskType) -> list[SystemEntry]:
        return [e for e in self.systems if e.descriptor.task is task]

    def index_fields_for(self, schema: str) -> tuple[str, ...]:
        if self.corpora.index_fields:
            return self.corpora.index_fields
        try:
            return DEFAULT_INDEX_FIELDS[schema]
        except KeyError:
            raise ConfigError(f"no default index fields for schema {schema!r}")


def load_weights(source: str | Path | Mapping) -> RewardWeights:
    """Weights from an inline mapping or a YAML/JSON file.

    Accepted shapes: {elements: {name: weight}, default_element: name} or a
    bare {name: weight} mapping.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    else:
        data = dict(source)
    if not isinstance(data, dict) or not data:
        raise ConfigError("weights must be a non-empty mapping")
    if "elements" in data:
        elements = data["elements"]
        default = data.get("default_element", "Details")
    else:
        elements = data
        default = "Details"
    if not isinstance(elements, dict):
        raise ConfigError("weights elements must be a mapping")
    try:
        parsed = {str(name): float(weight) for name, weight in elements.items()}
        if default not in parsed:
            parsed[default] = 1.0
        return RewardWeights(weights=parsed, default_element=str(default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid weights: {exc}") from exc


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def _require_exists(path: str | None, what: str) -> None:
    if path is not None and not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def load_config(path: str | Path) -> GatewayConfig:
    """Parse and cross-check a gateway config file."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    base = path.parent

    corpora_raw = data.get("corpora") or {}
    if not isinstance(corpora_raw, dict):
        raise ConfigError("corpora must be a mapping")
    schema = corpora_raw.get("schema", "literature")
    index_fields = corpora_raw.get("index_fields")
    corpora = CorpusPaths(
        documents=_resolve(base, corpora_raw.get("documents")),
        schema=schema,
        index_fields=tuple(index_fields) if index_fields else None,
        publications=_resolve(base, corpora_raw.get("publications")),
        datasets=_resolve(base, corpora_raw.get("datasets")),
        head_queries=_resolve(base, corpora_raw.get("head_queries")),
    )
    for attr, label in (
        ("documents", "documents corpus"),
        ("publications", "publications corpus"),
        ("datasets", "datasets corpus"),
        ("head_queries", "head-query file"),
    ):
        _require_exists(getattr(corpora, attr), label)

    systems_raw = data.get("systems")
    if not isinstance(systems_raw, list) or not systems_raw:
        raise ConfigError("config must register at least one system")
    entries: list[SystemEntry] = []
    for i, raw in enumerate(systems_raw):
        if not isinstance(raw, dict):
            raise ConfigError(f"systems[{i}] must be a mapping")
        try:
            name = raw["name"]
            kind = SystemKind(raw.get("kind", "builtin"))
            task = TaskType(raw["task"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"systems[{i}]: {exc}") from exc
        run_file = _resolve(base, raw.get("run_file"))
        url = raw.get("url")
        if kind is SystemKind.PRECOMPUTED:
            if run_file is None:
                raise ConfigError(f"system {name!r}: precomputed systems need run_file")
            _require_exists(run_file, f"run file for system {name!r}")
        if kind is SystemKind.LIVE_REMOTE and not url:
            raise ConfigError(f"system {name!r}: live systems need url")
        entries.append(
            SystemEntry(
                descriptor=SystemDescriptor(
                    name=name,
                    kind=kind,
                    task=task,
                    is_baseline=bool(raw.get("baseline", False)),
                    source=run_file or url,
                ),
                run_file=run_file,
                url=url,
                timeout=float(raw.get("timeout", 2.0)),
                max_in_flight=int(raw.get("max_in_flight", 8)),
            )
        )

    rpp = dict(DEFAULT_RPP)
    for key, value in (data.get("rpp") or {}).items():
        rpp[TaskType(key)] = int(value)

    weights_raw = data.get("weights")
    if weights_raw is None:
        weights = RewardWeights()
    elif isinstance(weights_raw, str):
        weights = load_weights(_resolve(base, weights_raw))
    else:
        weights = load_weights(weights_raw)

    default_task = data.get("task")
    timeout_minutes = data.get("session_timeout_minutes")
    session_timeout = (
        float(timeout_minutes) * 60.0 if timeout_minutes is not None else DEFAULT_SESSION_TIMEOUT
    )

    feedback_log = _resolve(base, data.get("feedback_log", "feedback.jsonl"))
    assert feedback_log is not None
    forward_to = data.get("forward_to")
    if forward_to and not str(forward_to).startswith(("http://", "https://")):
        forward_to = _resolve(base, str(forward_to))
    try:
        return GatewayConfig(
            site=str(data.get("site", "site")),
            systems=tuple(entries),
            feedback_log=feedback_log,
            corpora=corpora,
            default_task=TaskType(default_task) if default_task else None,
            rotation_seed=int(data.get("rotation_seed", 0)),
            session_timeout=session_timeout,
            flush_interval=float(data.get("flush_interval_seconds", 60.0)),
            forward_to=forward_to,
            rpp=rpp,
            weights=weights,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
