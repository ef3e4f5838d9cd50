"""Experiment orchestration: config loading, dataset generation, observer
execution, and network training."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, neuralnet, observers
from .dataset import DatasetWriter, read_dataset
from .mcmc import McmcConfig, mcmc_io_record
from .neuralnet import Architecture, TrainSchedule, TrainingDiverged
from .rng import stream, substream
from .tasks import PRESETS, TaskConfig, simulate_measurement, task_preset

OBSERVER_NAMES = ("analytic_io", "hotelling", "mcmc_io", "cnn_io")

# key -> (type, default); required keys have default REQUIRED
_REQUIRED = object()
_SCHEMA = {
    "preset": (str, _REQUIRED),
    "observers": (list, []),
    "n_train_backgrounds": (int, 0),
    "n_val_per_class": (int, 200),
    "n_test_per_class": (int, 200),
    "seed": (int, 0),
    "out_dir": (str, _REQUIRED),
    "batch_per_class": (int, 80),
    "total_minibatches": (int, 50_000),
    "learning_rate": (float, 1e-4),
    "val_period": (int, 1000),
    "conv_layers": ((int, list), 5),
    "cov_samples": (int, 2000),
    "mcmc_iterations": (int, 200_000),
    "mcmc_burn_in": (int, -1),       # -1 -> default 5%
    "bootstrap_samples": (int, 1000),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    preset: str
    out_dir: Path
    observers: list[str] = field(default_factory=list)
    n_train_backgrounds: int = 0
    n_val_per_class: int = 200
    n_test_per_class: int = 200
    seed: int = 0
    batch_per_class: int = 80
    total_minibatches: int = 50_000
    learning_rate: float = 1e-4
    val_period: int = 1000
    conv_layers: int | list[int] = 5
    cov_samples: int = 2000
    mcmc_iterations: int = 200_000
    mcmc_burn_in: int = -1
    bootstrap_samples: int = 1000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}; "
                              f"expected one of {PRESETS}")
        for obs in self.observers:
            if obs not in OBSERVER_NAMES:
                raise ConfigError(f"observers: unknown observer {obs!r}")
        self.out_dir = Path(self.out_dir)

    @property
    def task(self) -> TaskConfig:
        return task_preset(self.preset)


def load_config(path) -> ExperimentPlan:
    """Load and validate a flat-key JSON experiment plan."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    values = {}
    for key, (typ, default) in _SCHEMA.items():
        if key in raw:
            val = raw[key]
            if typ is float and isinstance(val, int):
                val = float(val)
            if not isinstance(val, typ) or isinstance(val, bool):
                raise ConfigError(f"{path}: key {key!r} must be {typ}")
            values[key] = val
        elif default is _REQUIRED:
            raise ConfigError(f"{path}: missing required key {key!r}")
        else:
            values[key] = default
    return ExperimentPlan(**values)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_split(path, task, n_per_class, rng):
    """Balanced noisy split: n images per class, labels 0..J in order."""
    w, h = task.grid
    with DatasetWriter(path, w, h, task.J) as out:
        for label in range(task.J + 1):
            for _ in range(n_per_class):
                img, _ = simulate_measurement(task, label, rng)
                out.append(img, label)


def generate_dataset(plan: ExperimentPlan, force: bool = False) -> dict:
    """Write the noiseless training store and fixed noisy val/test splits.

    Each split draws from its own named random stream, so no background can
    appear in more than one split.  Returns the manifest entries.
    """
    task = plan.task
    out = plan.out_dir
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    w, h = task.grid

    targets = [out / "val.bin", out / "test.bin"]
    if plan.n_train_backgrounds > 0:
        targets.append(out / "train_backgrounds.bin")
    existing = [p for p in targets if p.exists()]
    if existing and not force:
        raise FileExistsError(
            f"refusing to overwrite {existing[0]} (use force)")

    if plan.n_train_backgrounds > 0:
        rng = stream(plan.seed, "train-backgrounds")
        path = out / "train_backgrounds.bin"
        with DatasetWriter(path, w, h, task.J) as writer:
            for _ in range(plan.n_train_backgrounds):
                writer.append(task.sample_background(rng), 0)
        files["train_backgrounds"] = path

    for split, n in (("val", plan.n_val_per_class),
                     ("test", plan.n_test_per_class)):
        path = out / f"{split}.bin"
        _write_split(path, task, n, stream(plan.seed, f"{split}-images"))
        files[split] = path

    manifest = {
        "preset": plan.preset,
        "seed": plan.seed,
        "n_train_backgrounds": plan.n_train_backgrounds,
        "n_val_per_class": plan.n_val_per_class,
        "n_test_per_class": plan.n_test_per_class,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    for name, path in files.items():
        manifest[f"sha256_{name}"] = _sha256(path)
    with open(out / "manifest.txt", "w") as fh:
        for key, val in manifest.items():
            fh.write(f"{key}={val}\n")
    return manifest


def _noise_variance(task: TaskConfig) -> float:
    return task.noise.std ** 2


def _analytic_io_records(images, labels, task):
    if task.kind != "bke_laplacian":
        raise ValueError("analytic IO is available only for the Laplacian "
                         "BKE task")
    background = np.zeros(task.grid[::-1], dtype=np.float32)
    log_lrs = observers.laplacian_io_log_lrs_batch(
        images, task.signal_images, background, task.noise.scale)
    records = []
    log_prior = np.log(task.priors[1:])
    for i in range(len(images)):
        lams = log_prior + log_lrs[i]
        t, j_star = observers.scanning_decision(lams)
        post = observers.posteriors_from_lrs(log_lrs[i], task.priors)
        records.append(observers.ObserverRecord(
            t, j_star, int(labels[i]), lams,
            observers.binary_detection_statistic(post)))
    return records


def _hotelling_records(images, labels, task, plan):
    if task.kind == "bke_laplacian":
        backgrounds = None
    else:
        rng = stream(plan.seed, "hotelling-covariance")
        backgrounds = np.stack([task.sample_background(rng)
                                for _ in range(plan.cov_samples)])
    state = observers.build_hotelling(backgrounds, task.signal_images,
                                      _noise_variance(task))
    return observers.scanning_ho_records(images, labels, state)


def _mcmc_records(images, labels, task, plan):
    cfg = McmcConfig(
        iterations=plan.mcmc_iterations,
        burn_in=None if plan.mcmc_burn_in < 0 else plan.mcmc_burn_in)
    records = []
    for i in range(len(images)):
        rng = substream(plan.seed, "mcmc-chain", i)
        records.append(mcmc_io_record(images[i], task, cfg, rng,
                                      true_label=int(labels[i])))
    return records


def _cnn_records(images, labels, task, plan):
    ckpt = plan.out_dir / "checkpoint.bin"
    if not ckpt.exists():
        raise FileNotFoundError(f"cnn_io requires a checkpoint at {ckpt}")
    state = neuralnet.load_checkpoint(ckpt)
    return neuralnet.cnn_io_records(images, labels, state, priors=task.priors)


def run_observers(plan: ExperimentPlan) -> list[dict]:
    """Run the configured observers on the test split; write records,
    curves, and the figure-of-merit report."""
    if not plan.observers:
        raise ConfigError("observers: empty observer list")
    task = plan.task
    test_path = plan.out_dir / "test.bin"
    if not test_path.exists():
        raise FileNotFoundError(f"missing test set {test_path}; "
                                "run generate first")
    images, labels, _ = read_dataset(test_path)

    runners = {
        "analytic_io": lambda: _analytic_io_records(images, labels, task),
        "hotelling": lambda: _hotelling_records(images, labels, task, plan),
        "mcmc_io": lambda: _mcmc_records(images, labels, task, plan),
        "cnn_io": lambda: _cnn_records(images, labels, task, plan),
    }
    rows = []
    for name in plan.observers:
        records = runners[name]()
        observers.records_to_csv(plan.out_dir / f"records_{name}.csv", records)
        evaluation.curve_to_csv(plan.out_dir / f"lroc_{name}.csv",
                                evaluation.empirical_lroc(records))
        alroc = evaluation.alroc(records, plan.bootstrap_samples,
                                 stream(plan.seed, f"bootstrap-{name}"))
        row = {"observer": name, "task": task.kind, "system": plan.preset,
               "alroc": alroc.value, "alroc_se": alroc.std_error,
               "n_records": len(records)}
        if records[0].binary_statistic is not None:
            evaluation.curve_to_csv(plan.out_dir / f"roc_{name}.csv",
                                    evaluation.empirical_roc(records))
            auc = evaluation.auc(records, plan.bootstrap_samples,
                                 stream(plan.seed, f"bootstrap-roc-{name}"))
            row["auc"] = auc.value
            row["auc_se"] = auc.std_error
        rows.append(row)
    evaluation.report_to_csv(plan.out_dir / "report.csv", rows)
    return rows


def run_training(plan: ExperimentPlan):
    """Train the posterior network per plan; writes checkpoint + log CSV."""
    task = plan.task
    out = plan.out_dir
    bg_path = out / "train_backgrounds.bin"
    backgrounds = None
    if bg_path.exists():
        backgrounds, _, _ = read_dataset(bg_path)
    elif task.kind != "bke_laplacian":
        raise FileNotFoundError(f"missing training store {bg_path}; "
                                "run generate first")
    val_images, val_labels, _ = read_dataset(out / "val.bin")
    schedule = TrainSchedule(
        total_minibatches=plan.total_minibatches,
        batch_per_class=plan.batch_per_class,
        learning_rate=plan.learning_rate,
        val_period=plan.val_period,
        seed=plan.seed,
    )
    h, w = task.grid[1], task.grid[0]

    def trainer(depth):
        arch = Architecture(conv_layers=depth, input_shape=(h, w),
                            n_classes=task.J + 1)
        try:
            result = neuralnet.train(
                arch, task, backgrounds, schedule,
                val_images=val_images, val_labels=val_labels,
                log_path=out / f"training_log_depth{depth}.csv")
        except TrainingDiverged as exc:
            stable = getattr(exc, "state", None)
            if stable is not None:
                neuralnet.save_checkpoint(out / "checkpoint_diverged.bin",
                                          stable)
            raise
        return result, result.best_val_loss

    depths = plan.conv_layers
    if isinstance(depths, list):
        depth, result, history = neuralnet.select_depth(depths, trainer)
        with open(out / "depth_selection.csv", "w") as fh:
            fh.write("conv_layers,val_loss\n")
            for d, v in history:
                fh.write(f"{d},{v:.6f}\n")
    else:
        result, _ = trainer(depths)
    neuralnet.save_checkpoint(out / "checkpoint.bin", result.best_state)
    return result


def ranking_report(report_paths) -> dict:
    """Merge per-system report CSVs and flag ALROC/AUC ranking disagreement."""
    import csv

    entries = []
    for path in report_paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if not row.get("auc"):
                    continue
                entries.append((
                    row["system"],
                    evaluation.FomEstimate(float(row["alroc"]),
                                           float(row["alroc_se"]), 0),
                    evaluation.FomEstimate(float(row["auc"]),
                                           float(row["auc_se"]), 0),
                ))
    return evaluation.compare_systems(entries)
