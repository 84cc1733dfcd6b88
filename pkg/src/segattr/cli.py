"""Command-line interface: run, aggregate, explain, selftest.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import attribution, bridge, harness, metrics, model, netpbm, ops


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the CLI contract reserves 2 for
    # runtime failures, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="segattr", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="execute a benchmark run from a JSON config")
    run.add_argument("--config", required=True, help="path to a RunConfig JSON file")
    run.add_argument("--out", help="override the config's output path")
    run.add_argument("--workers", type=int, help="sample-level worker processes")
    for name, cast in (
        ("seed", int),
        ("k", float),
        ("grid", int),
        ("alpha", float),
        ("beta", float),
        ("strength", float),
    ):
        run.add_argument(f"--{name}", type=cast, help=f"override config {name}")

    agg = sub.add_parser("aggregate", help="aggregate one or more record files to CSV")
    agg.add_argument("records", nargs="+", help="JSONL record files, one per run")
    agg.add_argument("--out", required=True, help="output CSV path")

    explain = sub.add_parser("explain", help="emit one heatmap for one sample")
    explain.add_argument("--image", required=True, help="input image (binary P6 .ppm)")
    explain.add_argument("--mask", required=True, help="label map (binary P5 .pgm)")
    explain.add_argument("--method", required=True, choices=attribution.METHOD_NAMES)
    explain.add_argument("--out", required=True, help="output heatmap (binary P5 .pgm)")
    explain.add_argument("--seed", type=int, default=0, help="micro model seed")
    explain.add_argument("--classes", type=int, help="micro model class count")
    explain.add_argument("--grid", type=int, default=14)
    explain.add_argument("--alpha", type=float, default=0.65)
    explain.add_argument("--beta", type=float, default=0.35)

    sub.add_parser("selftest", help="run gradient checks and oracle equivalences")
    return parser


def cmd_run(args) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise UsageError(f"config file not found: {config_path}")
    payload = json.loads(config_path.read_text(encoding="utf-8"))
    for name in ("seed", "k", "grid", "alpha", "beta", "strength", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            payload[name] = value
    if args.out is not None:
        payload["output"] = args.out
    config = harness.RunConfig.from_dict(payload)
    try:
        count = harness.write_records(harness.run_benchmark(config), config.output)
    except Exception as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} records to {config.output}")
    return 0


def cmd_aggregate(args) -> int:
    for path in args.records:
        if not Path(path).is_file():
            raise UsageError(f"record file not found: {path}")
    table = harness.aggregate(args.records)
    harness.write_aggregate_csv(table, args.out)
    print(f"wrote {len(table)} aggregate rows to {args.out}")
    return 0


def cmd_explain(args) -> int:
    for path in (args.image, args.mask):
        if not Path(path).is_file():
            raise UsageError(f"input file not found: {path}")
    image = netpbm.read_ppm(args.image)
    labels = netpbm.read_pgm(args.mask).astype(np.int64)
    target, mask = harness.select_target(labels)
    num_classes = args.classes
    if num_classes is None:
        foreground = labels[(labels != 0) & (labels != harness.IGNORE_LABEL)]
        num_classes = max(4, int(foreground.max()) + 1)
    adapter = model.MicroModel(seed=args.seed, num_classes=num_classes)
    if args.method == "gpa":
        heatmap = attribution.gpa(adapter, image, target, mask)
    elif args.method == "ega":
        heatmap = attribution.ega(adapter, image, target, mask)
    elif args.method == "ria":
        heatmap = attribution.ria(adapter, image, target, mask, grid=args.grid)
    else:
        heatmap = attribution.dea(
            adapter, image, target, mask, alpha=args.alpha, beta=args.beta, grid=args.grid
        )
    netpbm.write_heatmap_pgm(args.out, heatmap)
    print(f"wrote {args.method} heatmap for class {target} to {args.out}")
    return 0


def _selftest_checks():
    yield "gradient-check", _check_gradients
    yield "ria-oracle", _check_ria_oracle
    yield "fusion-identities", _check_fusion_identities
    yield "aggregation-arithmetic", _check_aggregation
    yield "codec-roundtrip", _check_codec


def _check_gradients():
    rng = np.random.default_rng(7)
    for trial in range(5):
        adapter = model.MicroModel(seed=trial, num_classes=4)
        sample = harness.synth_sample(trial, size=16)
        target, mask = harness.select_target(sample.labels)
        analytic = adapter.features_and_gradient(sample.image, target, mask).gradient
        numeric = model.fd_gradient_oracle(adapter, sample.image, target, mask, step=1e-3)
        features = adapter.features(sample.image)
        usable = np.abs(features) > 2e-3  # FD is invalid across the ReLU kink
        err = np.abs(analytic - numeric) / (np.maximum(np.abs(analytic), np.abs(numeric)) + 1e-7)
        if err[usable].max() >= 1e-3:
            raise AssertionError(f"gradient mismatch {err[usable].max():.2e} on trial {trial}")
        del rng


def _check_ria_oracle():
    adapter = model.MicroModel(seed=0, num_classes=4)
    for seed, grid in ((0, 2), (1, 4)):
        sample = harness.synth_sample(seed, size=32)
        target, mask = harness.select_target(sample.labels)
        deltas = attribution.ria_cell_deltas(adapter, sample.image, target, mask, grid)
        rows, cols = attribution.grid_cells(32, 32, grid)
        base = metrics.region_score(adapter.predict(sample.image), target, mask)
        for i in range(grid):
            for j in range(grid):
                cell = attribution._cell_pixels(rows[i], rows[i + 1], cols[j], cols[j + 1])
                fresh = base - metrics.region_score(
                    adapter.predict(ops.occlude(sample.image, cell)), target, mask
                )
                if abs(fresh - deltas[i, j]) >= 1e-9:
                    raise AssertionError(f"cell ({i},{j}) delta off by {abs(fresh - deltas[i, j]):.2e}")


def _check_fusion_identities():
    adapter = model.MicroModel(seed=3, num_classes=4)
    sample = harness.synth_sample(11, size=32)
    target, mask = harness.select_target(sample.labels)
    ega_map = attribution.ega(adapter, sample.image, target, mask)
    ria_map = attribution.ria(adapter, sample.image, target, mask, grid=4)
    collapsed_g = attribution.dea(adapter, sample.image, target, mask, alpha=1.0, beta=0.0, grid=4)
    collapsed_r = attribution.dea(adapter, sample.image, target, mask, alpha=0.0, beta=0.35, grid=4)
    if not np.array_equal(collapsed_g, ega_map):
        raise AssertionError("dea(alpha=1, beta=0) differs from ega")
    if not np.array_equal(collapsed_r, ria_map):
        raise AssertionError("dea(alpha=0) differs from ria")


def _fake_record(sample_id, value):
    return {
        "run_id": "check",
        "seed": 0,
        "dataset": "check",
        "sample_id": sample_id,
        "method": "ega",
        "target_class": 1,
        "tdd": value,
        "odd": 0.0,
        "leak_abs": 0.0,
        "insertion": 0.0,
        "stability": 1.0,
        "runtime_ms": 1.0,
    }


def _check_aggregation():
    with tempfile.TemporaryDirectory() as tmp:
        run_a = Path(tmp) / "a.jsonl"
        run_b = Path(tmp) / "b.jsonl"
        harness.write_records([_fake_record("s0", 0.3), _fake_record("s1", 0.5)], run_a)
        harness.write_records([_fake_record("s0", 0.5)], run_b)
        table = {r["metric"]: r for r in harness.aggregate([run_a, run_b])}
        row = table["tdd"]
        if abs(row["mean"] - 0.45) > 1e-12 or abs(row["std"] - 0.07071067811865475) > 1e-4:
            raise AssertionError(f"aggregate arithmetic off: {row}")
        single = {r["metric"]: r for r in harness.aggregate([run_a])}["tdd"]
        if single["std"] != 0.0:
            raise AssertionError("single-run std must be 0")


def _check_codec():
    rng = np.random.default_rng(5)
    for _ in range(10):
        shape = tuple(int(d) for d in rng.integers(1, 6, size=int(rng.integers(1, 4))))
        tensor = rng.normal(size=shape).astype(np.float32)
        back = bridge.decode_tensor(bridge.encode_tensor(tensor))
        if not np.array_equal(back.astype(np.float32), tensor):
            raise AssertionError(f"codec round-trip failed for shape {shape}")


def cmd_selftest(_args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            check()
        except Exception as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    return 3 if failures else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        handler = {
            "run": cmd_run,
            "aggregate": cmd_aggregate,
            "explain": cmd_explain,
            "selftest": cmd_selftest,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
