"""Command-line front end.

Subcommands map one-to-one onto the library layers: `simulate` writes
datasets to disk, `train-restorer` fits and saves a restoration model,
`sweep` runs the full experiment and reports it, `report` regenerates
tables and plots from an existing results CSV, and `selftest` runs a
handful of built-in numerical checks.  Expected failures (bad config,
malformed files, diverged training) exit with status 1 and a one-line
message on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_experiment_config
from .errors import ExperimentError, TrainingDivergedError
from .phantoms import build_dataset, save_dataset
from .report import load_results, write_report
from .restoration import save_restorer, train_restorer
from .rng import RandomStream, hash64
from .sweep import run_capacity_sweep
from .tensors import write_pgm
from .observers import TrainConfig

_SPLITS = ("train", "val", "test")


def _build_split(cfg, split, run_index=0):
    counts = getattr(cfg, f"{split}_counts")
    stream = RandomStream(hash64(cfg.base_seed, "data", run_index, split))
    return build_dataset(
        cfg.task,
        counts,
        cfg.background,
        cfg.signal,
        cfg.degradation,
        stream,
        split=split,
    )


def _cmd_simulate(args):
    cfg = load_experiment_config(args.config)
    for split in _SPLITS:
        low, high = _build_split(cfg, split)
        for arm, ds in (("low", low), ("high", high)):
            directory = os.path.join(args.out, split, arm)
            save_dataset(ds, directory, seed=cfg.base_seed, extra={"arm": arm})
            for i in range(min(args.previews, len(ds))):
                img, label = ds.samples[i]
                name = f"preview_{arm}_{i:02d}_label{label}.pgm"
                write_pgm(os.path.join(args.out, split, name), img)
        print(f"{split}: {len(low)} samples per arm -> {os.path.join(args.out, split)}")
    return 0


def _cmd_train_restorer(args):
    cfg = load_experiment_config(args.config)
    low, high = _build_split(cfg, "train")
    pairs = [(lo, hi) for (lo, _), (hi, _) in zip(low.samples, high.samples)]
    train_cfg = TrainConfig(
        learning_rate=cfg.restorer_learning_rate,
        epochs=cfg.restorer_epochs,
        seed=hash64(cfg.base_seed, "restorer", 0),
    )
    model = train_restorer(
        pairs,
        train_cfg,
        levels=cfg.restorer_levels,
        base_channels=cfg.restorer_base_channels,
        skip_connections=cfg.restorer_skip_connections,
    )
    save_restorer(args.out, model)
    losses = dict(model.train_loss_curve)
    print(
        f"saved {args.out}: epoch {model.selected_epoch} of {cfg.restorer_epochs}, "
        f"train mse {losses[model.selected_epoch]:.6g}"
    )
    return 0


def _cmd_sweep(args):
    cfg = load_experiment_config(args.config)
    result = run_capacity_sweep(cfg)
    paths = write_report(result, args.out)
    for path in paths:
        print(path)
    return 0


def _cmd_report(args):
    result = load_results(args.results)
    paths = write_report(result, args.out)
    for path in paths:
        print(path)
    return 0


def _selftest_checks():
    from .info import JointPMF, exact_mi_discrete, v_information
    from .metrics import ScoreSet, auc, psnr, ssim
    from .observers import (
        TrainedObserver,
        finite_diff_gradient,
        fit_tabular,
        gradient,
        init_params,
        linear_family,
    )
    from .phantoms import LabeledDataset
    from .restoration import RestorationModel, param_count, restore
    from .tensors import tensor_bytes, tensor_from_bytes

    def check_rng():
        a = RandomStream(11).normal(8)
        b = RandomStream(11).normal(8)
        assert np.array_equal(a, b), "stream replay differs"

    def check_tensor_round_trip():
        stream = RandomStream(5)
        t = stream.normal((3, 4))
        back = tensor_from_bytes(tensor_bytes(t))
        assert np.allclose(back, t, atol=1e-6), "tensor round trip drifted"

    def check_tabular_matches_exact_mi():
        stream = RandomStream(21)
        table = stream.uniform((3, 2)) + 0.05
        table /= table.sum()
        cells, labels = [], []
        for x in range(3):
            for y in range(2):
                reps = int(round(table[x, y] * 600))
                cells += [x] * reps
                labels += [y] * reps
        samples = [(np.full((1, 1), float(c)), y) for c, y in zip(cells, labels)]
        ds = LabeledDataset(samples, 2, "train")
        obs = fit_tabular(ds, lambda img: int(img[0, 0]), num_cells=3)
        empirical = JointPMF(np.histogram2d(cells, labels, bins=(3, 2))[0] / len(cells))
        got = v_information(obs, ds).value
        want = exact_mi_discrete(empirical).value
        assert abs(got - want) < 1e-9, f"tabular {got} vs exact {want}"

    def check_gradient():
        stream = RandomStream(33)
        fam = linear_family(3, 3, 2)
        obs = TrainedObserver(fam, init_params(fam, stream.child("init")))
        X = stream.normal((5, 3, 3))
        y = np.array([stream.integer(2) for _ in range(5)])
        g = gradient(obs, (X, y))
        fd = finite_diff_gradient(obs, (X, y))
        rel = np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)
        assert rel < 1e-4, f"gradient mismatch {rel}"

    def check_restorer_identity():
        model = RestorationModel(2, 2, True, np.zeros(param_count(2, 2)))
        img = RandomStream(7).normal((8, 8))
        assert np.array_equal(restore(model, img), img), "zero model not identity"

    def check_metric_values():
        assert abs(auc(ScoreSet([0.9, 0.6], [0.1, 0.7])) - 0.75) < 1e-12
        img = RandomStream(9).uniform((16, 16))
        assert abs(ssim(img, img) - 1.0) < 1e-12
        a = np.zeros((8, 8))
        b = np.full((8, 8), 0.1)
        assert abs(psnr(a, b, 1.0) - 20.0) < 1e-9

    return [
        ("rng determinism", check_rng),
        ("tensor round trip", check_tensor_round_trip),
        ("tabular information equals exact mi", check_tabular_matches_exact_mi),
        ("analytic gradient matches finite differences", check_gradient),
        ("zero restorer is identity", check_restorer_identity),
        ("metric reference values", check_metric_values),
    ]


def _cmd_selftest(args):
    failures = 0
    for name, check in _selftest_checks():
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL - {name}: {exc}")
        else:
            print(f"ok - {name}")
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="viq",
        description="Task-based image quality experiments with learned observers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate and save paired datasets")
    p.add_argument("config")
    p.add_argument("--out", default="datasets")
    p.add_argument("--previews", type=int, default=4)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train-restorer", help="fit and save a restoration model")
    p.add_argument("config")
    p.add_argument("--out", default="restorer.viqr")
    p.set_defaults(func=_cmd_train_restorer)

    p = sub.add_parser("sweep", help="run the capacity sweep and write reports")
    p.add_argument("config")
    p.add_argument("--out", default="results")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="regenerate tables and plots from a results CSV")
    p.add_argument("results")
    p.add_argument("--out", default="report")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("selftest", help="run built-in numerical checks")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ExperimentError, TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
