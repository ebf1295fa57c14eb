"""Run configurations, reports and their JSON/CSV serialisation.

A :class:`RunConfig` is everything needed to repeat a run; every
:class:`Report` embeds it. Both are validated against the JSON schemas
shipped in ``invlab/schemas``. Wall-clock fields live under the report's
``timing`` key so two runs of one config differ only there.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "RunConfig",
    "Report",
    "load_schema",
    "to_jsonable",
    "write_csv",
    "write_plot_spec",
    "EXIT_PASS",
    "EXIT_FAIL",
    "EXIT_INCONCLUSIVE",
    "EXIT_CONFIG",
    "exit_code",
]

SCHEMA_VERSION = "1.0"
EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_CONFIG = 0, 1, 2, 3
COMMANDS = ("check-invariance", "classify", "simulate", "reproduce", "list-examples")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (exit status 3)."""


def load_schema(name: str) -> dict:
    text = resources.files("invlab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if obj is None or isinstance(obj, (int, str)):
        return obj
    return repr(obj)


def _validate(doc: dict, schema: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(schema))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{schema} invalid at {where}: {exc.message}") from None


@dataclass
class RunConfig:
    """Serializable description of one CLI run.

    Exactly one of ``example`` (a gallery id with ``params``) or ``inline``
    (expression strings for ``A``, ``G`` and ``rho``) names the operator,
    except for ``list-examples`` which needs neither.
    """

    command: str
    example: str | None = None
    params: dict = field(default_factory=dict)
    inline: dict | None = None
    measure: str = "mu"
    tol: float = 1e-6
    criteria: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command != "list-examples":
            if (self.example is None) == (self.inline is None):
                raise ConfigError("give exactly one of an example id or an inline operator")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        _validate(doc, "run_config")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)


def exit_code(status: str) -> int:
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}.get(status, EXIT_CONFIG)


@dataclass
class Report:
    config: RunConfig
    status: str = "inconclusive"
    results: dict = field(default_factory=dict)
    citations: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        self._t0 = time.perf_counter()
        self.timing.setdefault("started", datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def finish(self, status: str) -> "Report":
        self.status = status
        self.timing["elapsed_s"] = time.perf_counter() - self._t0
        return self

    def cite(self, *items: str) -> None:
        for c in items:
            if c and c not in self.citations:
                self.citations.append(c)

    def to_dict(self) -> dict:
        return to_jsonable({"schema_version": SCHEMA_VERSION, "tool": "invlab", "version": __version__,
                            "command": self.config.command, "status": self.status,
                            "config": self.config.to_dict(), "results": self.results,
                            "citations": self.citations, "artifacts": self.artifacts,
                            "timing": self.timing})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        _validate(doc, "report")
        rep = cls(RunConfig.from_dict(doc["config"]), doc["status"], doc["results"],
                  list(doc["citations"]), list(doc["artifacts"]), dict(doc["timing"]))
        return rep

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict()
        _validate(doc, "report")
        path = out / "report.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    """Write rows with full float precision (``repr``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_plot_spec(path, data, x: str, y: str, *, error: str | None = None, title: str = "",
                    xscale: str = "linear", yscale: str = "linear") -> Path:
    """Axis names for a CSV file; rendering is left to the user's plotting tool."""
    doc = {"data": Path(data).name, "x": x, "y": y, "title": title, "xscale": xscale, "yscale": yscale}
    if error is not None:
        doc["error"] = error
    _validate(doc, "plot_spec")
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
