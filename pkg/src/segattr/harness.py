"""Run orchestration: sample ingestion, synthetic data, target selection,
the (methods x samples) evaluation loop, JSONL records, and aggregation.

One records file is one run. Aggregation first averages each metric within a
run and then reports mean and sample standard deviation across those run
means, so every completed run contributes equally regardless of how many
samples it processed.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import attribution
from .metrics import (
    insertion_gain,
    leak_abs,
    offtarget_deletion_drop,
    stability,
    target_deletion_drop,
    time_explanation,
)
from .model import MicroModel
from .netpbm import read_pgm, read_ppm, write_heatmap_pgm
from .ops import EmptyRegionError, InvalidInputError
from .perturbations import BLUR_SIGMA_COEFF

log = logging.getLogger("segattr.harness")

IGNORE_LABEL = 255

RECORD_FIELDS = (
    "run_id",
    "seed",
    "dataset",
    "sample_id",
    "method",
    "target_class",
    "tdd",
    "odd",
    "leak_abs",
    "insertion",
    "stability",
    "runtime_ms",
)

AGGREGATE_METRICS = ("tdd", "odd", "leak_abs", "insertion", "stability", "runtime_ms")


@dataclass
class Sample:
    """One evaluation image with its integer label map (0 = background)."""

    id: str
    image: np.ndarray
    labels: np.ndarray


@dataclass
class RunConfig:
    """Everything a benchmark run depends on; JSON keys match field names."""

    dataset: dict
    adapter: dict
    methods: tuple = attribution.METHOD_NAMES
    k: float = 0.2
    grid: int = 14
    alpha: float = 0.65
    beta: float = 0.35
    strength: float = 0.03
    seed: int = 0
    run_id: str = ""
    output: str = "records.jsonl"
    heatmap_dir: str | None = None
    blur_sigma_coeff: float = BLUR_SIGMA_COEFF
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        unknown = [m for m in self.methods if m not in attribution.METHOD_NAMES]
        if unknown:
            raise InvalidInputError(f"unknown methods {unknown}")
        if not self.methods:
            raise InvalidInputError("method list is empty")
        if not 0.0 < self.k <= 1.0:
            raise InvalidInputError(f"k must be in (0, 1], got {self.k}")
        if self.grid < 1:
            raise InvalidInputError(f"grid must be >= 1, got {self.grid}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")
        if self.strength < 0.0:
            raise InvalidInputError(f"strength must be >= 0, got {self.strength}")
        if self.workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {self.workers}")
        if not self.run_id:
            self.run_id = f"{self.dataset_name()}-seed{self.seed}"

    def dataset_name(self) -> str:
        if "name" in self.dataset:
            return str(self.dataset["name"])
        if self.dataset.get("type") == "directory":
            return Path(self.dataset["path"]).name
        return "synthetic"

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def select_target(labels: np.ndarray):
    """Pick the most frequent foreground label; ties go to the smallest id.

    Returns (class_id, boolean mask). Raises EmptyRegionError when the map
    holds nothing but background/ignore pixels, which callers treat as a
    sample skip.
    """
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    keep = (values != 0) & (values != IGNORE_LABEL)
    values, counts = values[keep], counts[keep]
    if values.size == 0:
        raise EmptyRegionError("no foreground pixels")
    best = values[np.argmax(counts)]  # values sorted, so first max = smallest id
    return int(best), labels == best


def synth_sample(seed: int, size: int = 64, sample_id: str | None = None) -> Sample:
    """Deterministic sample: 1-3 flat-colored shapes over a textured background."""
    if size < 16:
        raise InvalidInputError(f"synthetic size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size]
    ramp_y = rows / (size - 1)
    ramp_x = cols / (size - 1)

    image = np.empty((3, size, size), dtype=np.float64)
    base = rng.uniform(0.15, 0.35, size=3)
    slope = rng.uniform(-0.12, 0.12, size=(3, 2))
    for channel in range(3):
        image[channel] = base[channel] + slope[channel, 0] * ramp_y + slope[channel, 1] * ramp_x
    image += rng.normal(0.0, 0.02, size=image.shape)

    labels = np.zeros((size, size), dtype=np.int64)
    for class_id in range(1, int(rng.integers(1, 4)) + 1):
        color = rng.uniform(0.55, 0.95, size=3)
        half_h = int(rng.integers(size // 8, size // 4 + 1))
        half_w = int(rng.integers(size // 8, size // 4 + 1))
        center_r = int(rng.integers(half_h, size - half_h))
        center_c = int(rng.integers(half_w, size - half_w))
        if rng.random() < 0.5:
            region = np.zeros((size, size), dtype=bool)
            region[center_r - half_h : center_r + half_h, center_c - half_w : center_c + half_w] = True
        else:
            region = ((rows - center_r) / half_h) ** 2 + ((cols - center_c) / half_w) ** 2 <= 1.0
        image[:, region] = color[:, None]
        labels[region] = class_id

    image = np.clip(image, 0.0, 1.0)
    if sample_id is None:
        sample_id = f"synth-{seed:012d}"
    return Sample(id=sample_id, image=image, labels=labels)


def load_samples(config: RunConfig) -> list[Sample]:
    """Materialize the run's samples in sorted-id order."""
    spec = config.dataset
    kind = spec.get("type")
    if kind == "synthetic":
        count = int(spec.get("count", 10))
        size = int(spec.get("size", 64))
        return [
            synth_sample(config.seed * 1_000_003 + index, size, sample_id=f"synth-{index:04d}")
            for index in range(count)
        ]
    if kind == "directory":
        root = Path(spec["path"])
        samples = []
        for ppm in sorted(root.glob("*.ppm")):
            mask_path = ppm.with_name(ppm.stem + "_mask.pgm")
            if not mask_path.exists():
                raise InvalidInputError(f"missing mask for {ppm.name}")
            samples.append(
                Sample(
                    id=ppm.stem,
                    image=read_ppm(ppm),
                    labels=read_pgm(mask_path).astype(np.int64),
                )
            )
        if not samples:
            raise InvalidInputError(f"no .ppm samples under {root}")
        return samples
    raise InvalidInputError(f"unknown dataset type {kind!r}")


def make_adapter(config: RunConfig):
    spec = config.adapter
    kind = spec.get("type")
    if kind == "micro":
        return MicroModel(seed=int(spec.get("seed", 0)), num_classes=int(spec.get("num_classes", 4)))
    if kind == "bridge":
        from .bridge import BridgeAdapter

        return BridgeAdapter(spec["command"])
    raise InvalidInputError(f"unknown adapter type {kind!r}")


def build_methods(config: RunConfig) -> dict:
    table = {}
    for name in config.methods:
        if name == "gpa":
            table[name] = attribution.gpa
        elif name == "ega":
            table[name] = attribution.ega
        elif name == "ria":
            table[name] = partial(attribution.ria, grid=config.grid)
        elif name == "dea":
            table[name] = partial(
                attribution.dea, alpha=config.alpha, beta=config.beta, grid=config.grid
            )
    return table


def _noise_seed(config: RunConfig, sample_id: str) -> int:
    # derived from (run seed, sample id) so it is independent of worker order
    return zlib.crc32(f"{config.seed}:{sample_id}".encode())


def _sample_records(adapter, methods, config: RunConfig, sample: Sample, warmed: set) -> list:
    target, mask = select_target(sample.labels)
    if mask.all():
        raise EmptyRegionError("target mask covers the whole image")
    seed = _noise_seed(config, sample.id)
    records = []
    for name in config.methods:
        method = methods[name]
        if name not in warmed:  # discard one warm-up call per (method, adapter)
            method(adapter, sample.image, target, mask)
            warmed.add(name)
        heatmap, runtime_ms = time_explanation(method, adapter, sample.image, target, mask)
        tdd = target_deletion_drop(adapter, sample.image, heatmap, target, mask, config.k)
        odd = offtarget_deletion_drop(adapter, sample.image, heatmap, target, mask, config.k)
        insertion = insertion_gain(adapter, sample.image, heatmap, target, mask, config.k)
        stab = stability(
            method,
            adapter,
            sample.image,
            target,
            mask,
            strength=config.strength,
            seed=seed,
            base_heatmap=heatmap,
            blur_sigma_coeff=config.blur_sigma_coeff,
        )
        records.append(
            {
                "run_id": config.run_id,
                "seed": config.seed,
                "dataset": config.dataset_name(),
                "sample_id": sample.id,
                "method": name,
                "target_class": target,
                "tdd": tdd,
                "odd": odd,
                "leak_abs": leak_abs(tdd, odd),
                "insertion": insertion,
                "stability": stab,
                "runtime_ms": runtime_ms,
            }
        )
        if config.heatmap_dir:
            out_dir = Path(config.heatmap_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_heatmap_pgm(out_dir / f"{sample.id}_{name}.pgm", heatmap)
    return records


_WORKER_CACHE: dict = {}


def _worker_records(args):
    payload, sample = args
    key = json.dumps(payload, sort_keys=True)
    state = _WORKER_CACHE.get(key)
    if state is None:
        config = RunConfig.from_dict(payload)
        state = (config, make_adapter(config), build_methods(config), set())
        _WORKER_CACHE[key] = state
    config, adapter, methods, warmed = state
    try:
        return ("ok", sample.id, _sample_records(adapter, methods, config, sample, warmed))
    except EmptyRegionError as exc:
        return ("skip", sample.id, str(exc))


def run_benchmark(config: RunConfig):
    """Yield one record dict per (non-skipped sample, method), in sorted sample order.

    Adapter or runtime failure yields a terminal ``{"run_id":..., "error":...}``
    record and then re-raises, so partial output written by the consumer is
    preserved alongside an explicit abort marker.
    """
    try:
        samples = sorted(load_samples(config), key=lambda s: s.id)
        if config.workers <= 1:
            adapter = make_adapter(config)
            methods = build_methods(config)
            warmed: set = set()
            for sample in samples:
                try:
                    yield from _sample_records(adapter, methods, config, sample, warmed)
                except EmptyRegionError as exc:
                    log.warning("skipping sample %s: %s", sample.id, exc)
            closer = getattr(adapter, "close", None)
            if closer is not None:
                closer()
        else:
            payload = config.to_dict()
            jobs = [(payload, sample) for sample in samples]
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for status, sample_id, result in pool.map(_worker_records, jobs):
                    if status == "skip":
                        log.warning("skipping sample %s: %s", sample_id, result)
                    else:
                        yield from result
    except Exception as exc:
        yield {"run_id": config.run_id, "error": f"{type(exc).__name__}: {exc}"}
        raise


def write_records(records, path) -> int:
    """Serialize records as UTF-8 JSONL; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def aggregate(record_files) -> list:
    """Cross-run aggregation table rows: dataset, method, metric, mean, std, runs.

    Each file is one run. Std is the sample standard deviation across run
    means (n-1 denominator), reported as 0 for a single run.
    """
    if not record_files:
        raise InvalidInputError("no record files given")
    run_means: dict = defaultdict(lambda: defaultdict(list))
    for path in record_files:
        rows = [r for r in read_records(path) if "error" not in r]
        if not rows:
            raise InvalidInputError(f"no usable records in {path}")
        groups = defaultdict(list)
        for row in rows:
            missing = [f for f in RECORD_FIELDS if f not in row]
            if missing:
                raise InvalidInputError(f"record in {path} missing fields {missing}")
            groups[(row["dataset"], row["method"])].append(row)
        for key, group in groups.items():
            for metric in AGGREGATE_METRICS:
                run_means[key][metric].append(float(np.mean([r[metric] for r in group])))
    table = []
    for dataset, method in sorted(run_means):
        per_metric = run_means[(dataset, method)]
        for metric in AGGREGATE_METRICS:
            values = per_metric[metric]
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            table.append(
                {
                    "dataset": dataset,
                    "method": method,
                    "metric": metric,
                    "mean": float(np.mean(values)),
                    "std": std,
                    "runs": len(values),
                }
            )
    return table


def write_aggregate_csv(table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "method", "metric", "mean", "std", "runs"])
        for row in table:
            writer.writerow(
                [
                    row["dataset"],
                    row["method"],
                    row["metric"],
                    f"{row['mean']:.10g}",
                    f"{row['std']:.10g}",
                    row["runs"],
                ]
            )
