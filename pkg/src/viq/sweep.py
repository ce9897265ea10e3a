"""Capacity-sweep experiments over degraded, restored, and clean images.

One run builds paired (low, high) datasets, trains the restorer, and
walks the capacity grid under each image condition.  Each (condition,
family) pair gets two observers: a validation-selected one scored by
task metrics on the test split, and a train-loss-selected one whose
cross entropy prices the information estimate.  The second kind is
warm-started along the grid through exact parameter embeddings, so its
estimate can never decrease as capacity grows within a run.

Runs may execute in parallel; VIQ_THREADS caps the worker count.  Every
random draw comes from a seed derived with hash64, so the result is
byte-for-byte reproducible regardless of scheduling.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ExperimentError, InvalidInputError
from .info import v_information
from .metrics import accuracy, auc, confidence_scores, psnr, ssim
from .observers import (
    TrainConfig,
    embed_family,
    family_descriptor,
    fit_constant,
    train_observer,
)
from .phantoms import LabeledDataset, build_dataset
from .restoration import restore, train_restorer
from .rng import RandomStream, hash64

_SPLITS = ("train", "val", "test")

_NUMERIC_FIELDS = ("v_info_nats", "auc", "accuracy", "ssim", "psnr")


@dataclass(frozen=True)
class ResultRow:
    """One (condition, family, run) outcome."""

    condition: str
    family: str
    run: int
    seed: int
    v_info_nats: float
    split: str
    auc: float  # None for tasks with more than two classes
    accuracy: float
    ssim: float
    psnr: float
    wall_time_s: float = None  # None unless timing was requested

    def __post_init__(self):
        if self.run < 0:
            raise InvalidInputError("run index must be >= 0")
        if self.split not in ("train", "test"):
            raise InvalidInputError(f"bad split label {self.split!r}")
        for name in _NUMERIC_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if np.isnan(value):
                raise InvalidInputError(f"{name} is NaN")


@dataclass(frozen=True)
class AggregateRow:
    """Across-run mean and sample standard deviation for one cell."""

    condition: str
    family: str
    means: dict
    stds: dict

    def __post_init__(self):
        for d in (self.means, self.stds):
            if sorted(d) != sorted(_NUMERIC_FIELDS):
                raise InvalidInputError("aggregate fields incomplete")


def _sample_std(values):
    # one run gives no spread information; report zero, not NaN
    if len(values) < 2:
        return 0.0
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        # identical infinities (perfect-fidelity PSNR) have no spread
        return 0.0 if np.all(arr == arr[0]) else float("inf")
    return float(np.std(arr, ddof=1))


def aggregate_rows(rows, runs):
    """Mean/std per (condition, family), in first-appearance order."""
    order = []
    groups = {}
    for row in rows:
        key = (row.condition, row.family)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        cell = groups[key]
        if len(cell) != runs:
            raise InvalidInputError(
                f"cell {key} has {len(cell)} rows, expected {runs}"
            )
        means, stds = {}, {}
        for name in _NUMERIC_FIELDS:
            values = [getattr(r, name) for r in cell]
            if any(v is None for v in values):
                means[name] = None
                stds[name] = None
            else:
                means[name] = float(np.mean(values))
                stds[name] = _sample_std(values)
        out.append(AggregateRow(key[0], key[1], means, stds))
    return out


@dataclass
class ExperimentResult:
    """All per-run rows plus one aggregate row per (condition, family)."""

    rows: list
    aggregates: list
    runs: int

    def __post_init__(self):
        if self.runs < 1:
            raise InvalidInputError("runs must be >= 1")
        counts = {}
        for row in self.rows:
            counts[(row.condition, row.family)] = (
                counts.get((row.condition, row.family), 0) + 1
            )
        agg_keys = [(a.condition, a.family) for a in self.aggregates]
        if len(set(agg_keys)) != len(agg_keys):
            raise InvalidInputError("duplicate aggregate cells")
        if sorted(agg_keys) != sorted(counts):
            raise InvalidInputError("aggregates do not match row cells")
        for key, n in counts.items():
            if n != self.runs:
                raise InvalidInputError(
                    f"cell {key} has {n} rows, expected {self.runs}"
                )

    def conditions(self):
        seen = []
        for row in self.rows:
            if row.condition not in seen:
                seen.append(row.condition)
        return seen

    def families(self):
        seen = []
        for row in self.rows:
            if row.family not in seen:
                seen.append(row.family)
        return seen


def _restored_dataset(model, ds):
    images = restore(model, ds.images())
    samples = [(images[i], label) for i, (_, label) in enumerate(ds.samples)]
    return LabeledDataset(samples, ds.num_classes, ds.split, list(ds.class_counts))


def _peak_range(ds):
    """Dynamic range of a reference set; the PSNR/SSIM scale."""
    best = 0.0
    for img, _ in ds.samples:
        best = max(best, float(np.max(img) - np.min(img)))
    return best if best > 0 else 1.0


def _image_fidelity(cond_ds, high_ds, peak):
    ssims, psnrs = [], []
    for (a, _), (b, _) in zip(cond_ds.samples, high_ds.samples):
        ssims.append(ssim(a, b, data_range=peak))
        psnrs.append(psnr(a, b, peak))
    return float(np.mean(ssims)), float(np.mean(psnrs))


def _train_cfg(cfg, seed):
    return TrainConfig(
        learning_rate=cfg.observer_learning_rate,
        epochs=cfg.observer_epochs,
        batch_size=cfg.observer_batch_size,
        seed=seed,
    )


def _fit_info_observer(cfg, family, train_ds, seed, prev):
    """Train-loss-selected observer, warm-started from the previous rung."""
    if family.kind == "constant":
        return fit_constant(train_ds)
    init = None
    if prev is not None:
        init = embed_family(prev, family)
    return train_observer(family, train_ds, _train_cfg(cfg, seed), init=init)


def _fit_metric_observer(cfg, family, train_ds, val_ds, seed, prev):
    """Validation-selected observer used for AUC and accuracy.

    Warm-started like the information ladder so the selected checkpoint
    never scores worse on validation than the previous capacity did.
    """
    if family.kind == "constant":
        return fit_constant(train_ds)
    init = None
    if prev is not None:
        init = embed_family(prev, family)
    return train_observer(
        family, train_ds, _train_cfg(cfg, seed), init=init, val_data=val_ds
    )


def _run_one(cfg, run_index):
    """All rows for one run, in (condition, family) grid order."""
    base = cfg.base_seed
    datasets = {}
    try:
        for split in _SPLITS:
            counts = getattr(cfg, f"{split}_counts")
            stream = RandomStream(hash64(base, "data", run_index, split))
            datasets[split] = build_dataset(
                cfg.task,
                counts,
                cfg.background,
                cfg.signal,
                cfg.degradation,
                stream,
                split=split,
            )
    except Exception as exc:
        raise ExperimentError(f"dataset build failed: {exc}", run=run_index) from exc

    condition_sets = {}
    if "low_field" in cfg.conditions:
        condition_sets["low_field"] = {s: datasets[s][0] for s in _SPLITS}
    if "high_field" in cfg.conditions:
        condition_sets["high_field"] = {s: datasets[s][1] for s in _SPLITS}
    if "restored" in cfg.conditions:
        try:
            low_tr, high_tr = datasets["train"]
            pairs = [
                (lo, hi)
                for (lo, _), (hi, _) in zip(low_tr.samples, high_tr.samples)
            ]
            rest_cfg = TrainConfig(
                learning_rate=cfg.restorer_learning_rate,
                epochs=cfg.restorer_epochs,
                seed=hash64(base, "restorer", run_index),
            )
            model = train_restorer(
                pairs,
                rest_cfg,
                levels=cfg.restorer_levels,
                base_channels=cfg.restorer_base_channels,
                skip_connections=cfg.restorer_skip_connections,
            )
            condition_sets["restored"] = {
                s: _restored_dataset(model, datasets[s][0]) for s in _SPLITS
            }
        except ExperimentError:
            raise
        except Exception as exc:
            raise ExperimentError(
                f"restorer training failed: {exc}", run=run_index
            ) from exc

    peak = _peak_range(datasets["test"][1])
    rows = []
    for condition in cfg.conditions:
        sets = condition_sets[condition]
        prev_info = None
        prev_metric = None
        for descriptor, family in zip(cfg.capacity_grid, cfg.families):
            name = family_descriptor(family)
            seed = hash64(base, run_index, condition, descriptor)
            started = time.perf_counter()
            try:
                info_obs = _fit_info_observer(
                    cfg, family, sets["train"], seed, prev_info
                )
                prev_info = info_obs
                info = v_information(info_obs, sets[cfg.v_info_split])
                metric_obs = _fit_metric_observer(
                    cfg,
                    family,
                    sets["train"],
                    sets["val"],
                    hash64(seed, "metrics"),
                    prev_metric,
                )
                prev_metric = metric_obs
                acc = accuracy(metric_obs, sets["test"])
                auc_value = None
                if sets["test"].num_classes == 2:
                    auc_value = auc(confidence_scores(metric_obs, sets["test"]))
                mean_ssim, mean_psnr = _image_fidelity(
                    sets["test"], datasets["test"][1], peak
                )
            except ExperimentError:
                raise
            except Exception as exc:
                raise ExperimentError(
                    str(exc), condition=condition, family=name, run=run_index
                ) from exc
            elapsed = time.perf_counter() - started
            rows.append(
                ResultRow(
                    condition=condition,
                    family=name,
                    run=run_index,
                    seed=seed,
                    v_info_nats=info.value,
                    split=cfg.v_info_split,
                    auc=auc_value,
                    accuracy=acc,
                    ssim=mean_ssim,
                    psnr=mean_psnr,
                    wall_time_s=elapsed if cfg.timing else None,
                )
            )
    return rows


def thread_count():
    """Worker cap from VIQ_THREADS; unset or invalid means one."""
    raw = os.environ.get("VIQ_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_capacity_sweep(cfg):
    """Full experiment: every (condition, family, run) cell.

    Rows come back sorted by (condition order, grid order, run index),
    independent of how the runs were scheduled.
    """
    workers = thread_count()
    if workers == 1 or cfg.runs == 1:
        per_run = [_run_one(cfg, r) for r in range(cfg.runs)]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, cfg.runs)) as pool:
            per_run = list(pool.map(lambda r: _run_one(cfg, r), range(cfg.runs)))

    cond_order = {c: i for i, c in enumerate(cfg.conditions)}
    fam_order = {
        family_descriptor(f): i for i, f in enumerate(cfg.families)
    }
    rows = [row for chunk in per_run for row in chunk]
    rows.sort(key=lambda r: (cond_order[r.condition], fam_order[r.family], r.run))
    return ExperimentResult(rows, aggregate_rows(rows, cfg.runs), cfg.runs)
