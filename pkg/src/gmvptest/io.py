"""File formats: return panels, weight rows, curve CSVs, experiment configs and run manifests.

Floats are written with 17 significant digits so that reading a file back
reproduces the in-memory values exactly.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import secrets
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigError, InputError
from .model import PortfolioWeights, ReturnsMatrix
from .simulation import CurveKind, CurveResult, ExperimentConfig, TestKind
from .singular import Standardization

__all__ = [
    "WEIGHT_SUM_TOLERANCE",
    "fmt",
    "read_returns_csv",
    "read_weights_csv",
    "write_curve_csv",
    "read_curve_csv",
    "write_power_csv",
    "RunManifest",
    "SimulationPlan",
    "load_config_file",
    "plan_from_mapping",
]

WEIGHT_SUM_TOLERANCE = 1e-6


def fmt(x: float) -> str:
    """Round-trip exact decimal representation (17 significant digits)."""
    return format(float(x), ".17g")


def _parse_row(row: list[str], where: str) -> list[float]:
    values = []
    for cell in row:
        cell = cell.strip()
        try:
            v = float(cell)
        except ValueError as exc:
            raise InputError(f"{where}: non-numeric entry {cell!r}") from exc
        if not math.isfinite(v):
            raise InputError(f"{where}: missing or non-finite entry {cell!r}")
        values.append(v)
    return values


def read_returns_csv(path: str | Path) -> ReturnsMatrix:
    """Read an ``n x p`` panel with a header row; any missing value is an error."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InputError(f"{path}: expected a header row followed by data rows")
    header, body = rows[0], rows[1:]
    p = len(header)
    data = []
    for i, row in enumerate(body, start=2):
        if len(row) != p:
            raise InputError(f"{path}:{i}: expected {p} columns, found {len(row)}")
        data.append(_parse_row(row, f"{path}:{i}"))
    return ReturnsMatrix(np.asarray(data))


def read_weights_csv(path: str | Path, p: int | None = None) -> PortfolioWeights:
    """Read one row of weights (an optional header row is skipped).

    Weights must sum to one within ``1e-6``; they are then renormalized so
    the sum is exact.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            _parse_row(rows[0], str(path))
        except InputError:
            rows = rows[1:]
    if len(rows) != 1:
        raise InputError(f"{path}: expected exactly one row of weights")
    w = np.asarray(_parse_row(rows[0], str(path)))
    if p is not None and w.size != p:
        raise InputError(f"{path}: expected {p} weights, found {w.size}")
    total = float(w.sum())
    if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise InputError(f"{path}: weights sum to {total:.17g}, not 1")
    return PortfolioWeights(w / total)


_CURVE_COLUMNS = ["kappa_or_threshold", "estimate", "std_error", "B"]
_ROC_COLUMNS = ["fpr", "fpr_std_error"]


def write_curve_csv(curve: CurveResult, path: str | Path) -> None:
    cols = _CURVE_COLUMNS + (_ROC_COLUMNS if curve.fpr is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, g in enumerate(curve.grid):
            row = [fmt(g), fmt(curve.estimates[i]), fmt(curve.std_errors[i]), str(curve.replications)]
            if curve.fpr is not None:
                row += [fmt(curve.fpr[i]), fmt(curve.fpr_std_errors[i])]
            w.writerow(row)


def read_curve_csv(path: str | Path, kind: CurveKind | str = CurveKind.POWER, label: str = "") -> CurveResult:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    if header[:4] != _CURVE_COLUMNS:
        raise InputError(f"{path}: unexpected header {header}")
    if not rows:
        raise InputError(f"{path}: no rows")
    reps = {int(r["B"]) for r in rows}
    if len(reps) != 1:
        raise InputError(f"{path}: inconsistent replication counts")
    has_fpr = "fpr" in header
    return CurveResult(
        grid=tuple(float(r["kappa_or_threshold"]) for r in rows),
        estimates=tuple(float(r["estimate"]) for r in rows),
        std_errors=tuple(float(r["std_error"]) for r in rows),
        replications=reps.pop(),
        kind=CurveKind(kind),
        label=label,
        fpr=tuple(float(r["fpr"]) for r in rows) if has_fpr else None,
        fpr_std_errors=tuple(float(r["fpr_std_error"]) for r in rows) if has_fpr else None,
    )


def write_power_csv(rows: list[tuple[float, float, float | None, str]], path_or_file) -> None:
    """Rows of ``(effect, value, std_error or None, mode)``."""

    def _emit(fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["effect", "value", "std_error", "mode"])
        for effect, value, se, mode in rows:
            w.writerow([fmt(effect), fmt(value), "" if se is None else fmt(se), mode])

    if hasattr(path_or_file, "write"):
        _emit(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _emit(fh)


@dataclass(frozen=True)
class RunManifest:
    """Provenance written next to every output; the timestamp is informational only."""

    command: str
    config: dict
    master_seed: int
    artifact_version: str = __version__
    timestamp: str = ""

    @classmethod
    def create(cls, command: str, config: dict, master_seed: int) -> RunManifest:
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return cls(command, _canonical(config), int(master_seed), __version__, stamp)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        missing = {"command", "config", "master_seed"} - set(raw)
        if missing:
            raise ConfigError(f"{path}: manifest is missing keys {sorted(missing)}")
        return cls(
            raw["command"],
            raw["config"],
            int(raw["master_seed"]),
            raw.get("artifact_version", ""),
            raw.get("timestamp", ""),
        )


def _canonical(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _canonical(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


# ---------------------------------------------------------------------------
# simulation configs
# ---------------------------------------------------------------------------

_REQUIRED = {"kind", "tests", "p", "n"}
_OPTIONAL = {
    "q",
    "m_fraction",
    "kappas",
    "alpha",
    "B",
    "seed",
    "k",
    "standardization",
    "ignore_singularity",
    "roc_kappa",
    "thresholds",
}
_SECTIONS = {
    "scenario": {"p", "q", "n", "m_fraction", "seed"},
    "experiment": {
        "kind",
        "tests",
        "kappas",
        "alpha",
        "B",
        "k",
        "standardization",
        "ignore_singularity",
        "roc_kappa",
        "thresholds",
    },
    "output": {"directory"},
}


@dataclass(frozen=True)
class SimulationPlan:
    kind: str
    experiment: ExperimentConfig
    directory: Path | None

    def canonical_config(self) -> dict:
        e = self.experiment
        return _canonical(
            {
                "kind": self.kind,
                "tests": [t.value for t in e.tests],
                "p": e.p,
                "q": e.rank,
                "n": e.n,
                "m_fraction": e.m_fraction,
                "kappas": list(e.kappas),
                "alpha": e.alpha,
                "B": e.B,
                "seed": e.seed,
                "k": e.k,
                "standardization": e.standardization.value,
                "ignore_singularity": e.ignore_singularity,
                "roc_kappa": e.roc_kappa,
                "thresholds": list(e.thresholds),
            }
        )


def _parse_int_list(text: str, key: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"{key}: empty list")
    return tuple(out)


def parse_grid(text: str) -> tuple[float, ...]:
    """``"a:b:m"`` gives ``m`` evenly spaced points from ``a`` to ``b``; otherwise a comma list."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {text!r}: expected start:stop:count")
        lo, hi, m = float(parts[0]), float(parts[1]), int(parts[2])
        if m < 1:
            raise ConfigError(f"grid {text!r}: count must be positive")
        return tuple(float(v) for v in np.linspace(lo, hi, m))
    values = tuple(float(v) for v in text.split(",") if v.strip())
    if not values:
        raise ConfigError("grid: empty")
    return values


def _parse_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def plan_from_mapping(raw: dict, directory: Path | None = None, seed_override: int | None = None) -> SimulationPlan:
    """Validate a flat key-value mapping (config file or manifest) into a plan."""
    keys = set(raw)
    unknown = sorted(keys - _REQUIRED - _OPTIONAL)
    missing = sorted(_REQUIRED - keys)
    if unknown or missing:
        parts = []
        if unknown:
            parts.append(f"unknown keys: {', '.join(unknown)}")
        if missing:
            parts.append(f"missing keys: {', '.join(missing)}")
        raise ConfigError("; ".join(parts))
    bad: list[str] = []

    def get(key, conv, default=None):
        if key not in raw or raw[key] is None or raw[key] == "":
            return default
        try:
            return conv(raw[key])
        except (TypeError, ValueError, ConfigError) as exc:
            bad.append(f"{key} ({exc})")
            return default

    def as_list(conv):
        return lambda v: tuple(conv(x) for x in (v if isinstance(v, list) else str(v).split(",")) if str(x).strip())

    kind = str(raw["kind"]).strip().lower()
    if kind not in ("power", "roc"):
        bad.append("kind (must be power or roc)")
    tests = get("tests", as_list(lambda s: TestKind(str(s).strip())), ())
    kappas = get("kappas", lambda v: tuple(int(x) for x in v) if isinstance(v, list) else _parse_int_list(v, "kappas"))
    thresholds = get("thresholds", lambda v: tuple(float(x) for x in v) if isinstance(v, list) else parse_grid(v))
    seed = seed_override if seed_override is not None else get("seed", int)
    if seed is None:
        seed = secrets.randbits(63)
    kwargs = dict(
        tests=tests,
        p=get("p", int),
        n=get("n", int),
        q=get("q", int),
        m_fraction=get("m_fraction", float, 0.2),
        kappas=kappas if kappas is not None else (0,),
        alpha=get("alpha", float, 0.05),
        B=get("B", int, 10_000),
        seed=seed,
        k=get("k", int),
        standardization=get("standardization", lambda v: Standardization(str(v).strip()), Standardization.GENERAL),
        ignore_singularity=get("ignore_singularity", lambda v: _parse_bool(v, "ignore_singularity"), False),
        roc_kappa=get("roc_kappa", int, 4),
    )
    if thresholds is not None:
        kwargs["thresholds"] = thresholds
    if bad:
        raise ConfigError("invalid values for keys: " + ", ".join(bad))
    if kwargs["p"] is None or kwargs["n"] is None:
        raise ConfigError("invalid values for keys: p, n")
    return SimulationPlan(kind, ExperimentConfig(**kwargs), directory)


def load_config_file(path: str | Path, seed_override: int | None = None) -> SimulationPlan:
    """Parse an INI-style ``.cfg`` file with sections ``scenario``, ``experiment`` and ``output``.

    A relative ``output.directory`` is resolved against the config file.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"{path}: cannot read config file")
    offending = []
    flat: dict[str, str] = {}
    for section in parser.sections():
        allowed = _SECTIONS.get(section)
        if allowed is None:
            offending.append(f"[{section}]")
            continue
        for key, value in parser.items(section):
            if key not in allowed:
                offending.append(f"{section}.{key}")
            else:
                flat[key] = value
    if offending:
        raise ConfigError(f"{path}: unknown keys: {', '.join(offending)}")
    directory = flat.pop("directory", None)
    out_dir = None
    if directory:
        out_dir = Path(directory)
        if not out_dir.is_absolute():
            out_dir = path.parent / out_dir
    return plan_from_mapping(flat, out_dir, seed_override)
