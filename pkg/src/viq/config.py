"""Experiment configuration: a flat `section.key = value` text format.

Grammar, one assignment per line:

    section.key = value     # trailing comments allowed

Values are double-quoted strings, integers, floats, booleans
(true/false), or flat bracketed lists of those.  Unknown keys are
rejected so typos cannot silently fall back to defaults.  Every key has
a default, so the empty file is a valid (if slow) experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, UnsupportedEmbeddingError
from .phantoms import BackgroundConfig, DegradationConfig, SignalConfig
from .observers import TrainedObserver, embed_family, family_from_descriptor

CONDITIONS = ("low_field", "restored", "high_field")

# key -> (expected type tag, default); list defaults copied on read
_SCHEMA = {
    "task.kind": ("str", "binary"),
    "task.train_counts": ("int_list", [200, 200]),
    "task.val_counts": ("int_list", [50, 50]),
    "task.test_counts": ("int_list", [100, 100]),
    "background.height": ("int", 64),
    "background.width": ("int", 64),
    "background.blob_count_mean": ("float", 5.0),
    "background.blob_amplitude": ("float_list", [0.5, 1.0]),
    "background.blob_sigma": ("float_list", [1.5, 3.0]),
    "background.base_level": ("float", 0.0),
    "signal.amplitude": ("float", 0.5),
    "signal.sigma": ("float", 3.0),
    "signal.region": ("float_list", []),  # [x_lo, x_hi, y_lo, y_hi]; empty = auto inset
    "degradation.mask_height": ("int", 32),
    "degradation.mask_width": ("int", 32),
    "degradation.noise_sigma": ("float", 0.1),
    "degradation.reconstruction": ("str", "magnitude"),
    "restorer.levels": ("int", 2),
    "restorer.base_channels": ("int", 8),
    "restorer.epochs": ("int", 60),
    "restorer.learning_rate": ("float", 0.002),
    "restorer.skip_connections": ("bool", True),
    "observer.epochs": ("int", 150),
    "observer.learning_rate": ("float", 0.005),
    "observer.batch_size": ("int", 128),
    "sweep.capacity_grid": (
        "str_list",
        ["constant", "linear_logistic", "mlp(8)", "mlp(16)", "mlp(32)"],
    ),
    "sweep.conditions": ("str_list", list(CONDITIONS)),
    "sweep.runs": ("int", 5),
    "sweep.base_seed": ("int", 0),
    "sweep.v_info_split": ("str", "train"),
    "output.timing": ("bool", False),
}


def _parse_scalar(token, where):
    token = token.strip()
    if not token:
        raise ConfigError(f"{where}: empty value")
    if token.startswith('"'):
        if not token.endswith('"') or len(token) < 2:
            raise ConfigError(f"{where}: unterminated string {token!r}")
        body = token[1:-1]
        if '"' in body:
            raise ConfigError(f"{where}: embedded quote in {token!r}")
        return body
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {token!r}") from None


def _parse_value(token, where):
    token = token.strip()
    if token.startswith("["):
        if not token.endswith("]"):
            raise ConfigError(f"{where}: unterminated list {token!r}")
        body = token[1:-1].strip()
        if not body:
            return []
        return [_parse_scalar(part, where) for part in body.split(",")]
    return _parse_scalar(token, where)


def _strip_comment(line):
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def parse_config(text):
    """Raw key/value mapping from config text; duplicate keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected `section.key = value`, got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if "." not in key or not all(part.isidentifier() for part in key.split(".")):
            raise ConfigError(f"{where}: malformed key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = _parse_value(rhs, where)
    return values


def _coerce(key, value):
    tag, _ = _SCHEMA[key]
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a quoted string")
        return value
    if tag == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} must be an integer")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{key} must be a bracketed list")
    if tag == "int_list":
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key} must hold integers")
        return list(value)
    if tag == "float_list":
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{key} must hold numbers")
        return [float(v) for v in value]
    if not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{key} must hold quoted strings")
    return list(value)


@dataclass
class ExperimentConfig:
    """Validated settings for one capacity-sweep experiment."""

    task: str
    train_counts: list
    val_counts: list
    test_counts: list
    background: BackgroundConfig
    signal: SignalConfig
    degradation: DegradationConfig
    restorer_levels: int
    restorer_base_channels: int
    restorer_epochs: int
    restorer_learning_rate: float
    restorer_skip_connections: bool
    observer_epochs: int
    observer_learning_rate: float
    observer_batch_size: int
    capacity_grid: list
    conditions: list
    runs: int
    base_seed: int
    v_info_split: str
    timing: bool

    def __post_init__(self):
        if self.task not in ("binary", "three_class"):
            raise ConfigError(f"unknown task {self.task!r}")
        self.num_classes = 2 if self.task == "binary" else 3
        for name, counts in (
            ("train", self.train_counts),
            ("val", self.val_counts),
            ("test", self.test_counts),
        ):
            if len(counts) != self.num_classes:
                raise ConfigError(
                    f"task.{name}_counts needs {self.num_classes} entries, got {len(counts)}"
                )
            if any(c < 1 for c in counts):
                raise ConfigError(f"task.{name}_counts entries must be >= 1")
        if self.runs < 1:
            raise ConfigError("sweep.runs must be >= 1")
        if not self.capacity_grid:
            raise ConfigError("sweep.capacity_grid must be nonempty")
        if not self.conditions:
            raise ConfigError("sweep.conditions must be nonempty")
        for cond in self.conditions:
            if cond not in CONDITIONS:
                raise ConfigError(f"unknown condition {cond!r}")
        if len(set(self.conditions)) != len(self.conditions):
            raise ConfigError("sweep.conditions has duplicates")
        if self.v_info_split not in ("train", "test"):
            raise ConfigError("sweep.v_info_split must be train or test")
        h, w = self.background.height, self.background.width
        div = 2**self.restorer_levels
        if "restored" in self.conditions and (h % div or w % div):
            raise ConfigError(
                f"{h}x{w} images are not divisible by 2^restorer.levels = {div}"
            )
        self._validate_grid(h, w)

    def _validate_grid(self, h, w):
        """Families must exist and form a warm-startable chain."""
        families = []
        for desc in self.capacity_grid:
            try:
                fam = family_from_descriptor(desc, (h, w), self.num_classes)
            except InvalidInputError as exc:
                raise ConfigError(f"bad family in capacity grid: {exc}") from None
            if fam.kind == "tabular":
                raise ConfigError("tabular families cannot appear in a sweep grid")
            families.append(fam)
        for prev, nxt in zip(families, families[1:]):
            probe = TrainedObserver(prev, np.zeros(prev.param_count()))
            try:
                embed_family(probe, nxt)
            except UnsupportedEmbeddingError as exc:
                raise ConfigError(
                    f"capacity grid break between {family_descriptor_of(prev)} "
                    f"and {family_descriptor_of(nxt)}: {exc}"
                ) from None
        self.families = families


def family_descriptor_of(family):
    from .observers import family_descriptor

    return family_descriptor(family)


def config_from_values(values):
    unknown = sorted(set(values) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    for key, (tag, default) in _SCHEMA.items():
        if key in values:
            merged[key] = _coerce(key, values[key])
        else:
            merged[key] = list(default) if isinstance(default, list) else default

    background = BackgroundConfig(
        height=merged["background.height"],
        width=merged["background.width"],
        blob_count_mean=merged["background.blob_count_mean"],
        blob_amplitude_range=tuple(merged["background.blob_amplitude"]),
        blob_sigma_range=tuple(merged["background.blob_sigma"]),
        base_level=merged["background.base_level"],
    )
    region = merged["signal.region"]
    if region and len(region) != 4:
        raise ConfigError("signal.region needs [x_lo, x_hi, y_lo, y_hi]")
    signal = SignalConfig(
        amplitude=merged["signal.amplitude"],
        sigma=merged["signal.sigma"],
        region=tuple(region) if region else None,
    )
    degradation = DegradationConfig(
        mask_height=merged["degradation.mask_height"],
        mask_width=merged["degradation.mask_width"],
        noise_sigma=merged["degradation.noise_sigma"],
        reconstruction=merged["degradation.reconstruction"],
    )
    return ExperimentConfig(
        task=merged["task.kind"],
        train_counts=merged["task.train_counts"],
        val_counts=merged["task.val_counts"],
        test_counts=merged["task.test_counts"],
        background=background,
        signal=signal,
        degradation=degradation,
        restorer_levels=merged["restorer.levels"],
        restorer_base_channels=merged["restorer.base_channels"],
        restorer_epochs=merged["restorer.epochs"],
        restorer_learning_rate=merged["restorer.learning_rate"],
        restorer_skip_connections=merged["restorer.skip_connections"],
        observer_epochs=merged["observer.epochs"],
        observer_learning_rate=merged["observer.learning_rate"],
        observer_batch_size=merged["observer.batch_size"],
        capacity_grid=merged["sweep.capacity_grid"],
        conditions=merged["sweep.conditions"],
        runs=merged["sweep.runs"],
        base_seed=merged["sweep.base_seed"],
        v_info_split=merged["sweep.v_info_split"],
        timing=merged["output.timing"],
    )


def load_experiment_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_values(parse_config(fh.read()))
