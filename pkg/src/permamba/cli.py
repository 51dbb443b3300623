"""Command-line front end tying the pipeline together.

Commands: generate, simulate, train, eval, ablate, bench, plotdata. One
``--seed`` flag feeds every subsystem through purpose-tagged streams, and a
JSON ``--config`` overrides the built-in defaults section by section. All
outputs are deterministic for identical inputs and seeds; wall-clock values
appear only in the training log.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .bench import bench_report, slopes_payload, write_footprints_csv
from .checkpoint import load_arrays
from .cnn import CNNConfig, CNNModel
from .dataset import DatasetManifest, generate_dataset, load_manifest
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateFieldError,
    NonFiniteError,
    ShapeError,
    StateError,
)
from .lbm import FluidSpec, measure_permeability
from .porous import SynthConfig
from .svgplot import Series, render_figure
from .training import ABLATION_GRIDS, NormStats, TrainConfig, ablate, evaluate, train
from .vim import ViMConfig, ViMModel
from .vit import ViTConfig, ViTModel

__all__ = ["RunConfig", "load_run_config", "main"]

DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)

_MODEL_CONFIGS = {"vim": ViMConfig, "vit": ViTConfig, "cnn": CNNConfig}
_MODEL_CLASSES = {"vim": ViMModel, "vit": ViTModel, "cnn": CNNModel}

_BENCH_KEYS = {"side", "patches", "batch", "budget_gb", "fit_patches",
               "vit_fit_patches"}

_EXPECTED_ERRORS = (ConfigError, ShapeError, DataError, StateError,
                    DegenerateFieldError, ConvergenceError, NonFiniteError,
                    OSError)


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build_section(cls, entry: dict, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {unknown}")
    obj = cls(**{k: _tupled(v) for k, v in entry.items()})
    obj.validate()
    return obj


@dataclass(frozen=True)
class RunConfig:
    """Run settings from JSON, one section per subsystem.

    ``base_dir`` anchors every relative path of the run, so a config file
    can be invoked from any working directory.
    """

    synth: SynthConfig
    flow: FluidSpec
    model_kind: str
    model_args: dict
    train: TrainConfig
    bench_args: dict
    base_dir: Path

    @classmethod
    def default(cls, base_dir: Path) -> "RunConfig":
        return cls(synth=SynthConfig(), flow=FluidSpec(), model_kind="vim",
                   model_args={}, train=TrainConfig(), bench_args={},
                   base_dir=Path(base_dir))

    def resolve(self, path: str | Path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def model_config(self, kind: str, side: int, overrides: dict):
        """Model config for ``kind`` at cube edge ``side``.

        Config-file arguments apply only when the config declared the same
        kind; command-line overrides apply on top of them.
        """
        cfg_cls = _MODEL_CONFIGS[kind]
        args = dict(self.model_args) if kind == self.model_kind else {}
        allowed = {f.name for f in fields(cfg_cls)}
        for key, value in overrides.items():
            if key not in allowed:
                raise ConfigError(
                    f"model kind {kind!r} has no setting {key!r}")
            args[key] = value
        if "side" in allowed:
            declared = args.setdefault("side", side)
            if declared != side:
                raise ConfigError(
                    f"configured side {declared} does not match dataset edge {side}")
        config = cfg_cls(**args)
        config.validate()
        if config.side != side:
            raise ConfigError(
                f"model expects side {config.side} but the dataset edge is {side}")
        return config


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise ConfigError(f"config {path} must be a JSON object of sections")
    unknown = sorted(set(body) - {"synth", "flow", "model", "train", "bench"})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    for name, entry in body.items():
        if not isinstance(entry, dict):
            raise ConfigError(f"config section {name!r} must be an object")

    model_entry = dict(body.get("model", {}))
    kind = model_entry.pop("kind", "vim")
    if kind not in _MODEL_CONFIGS:
        raise ConfigError(
            f"unknown model kind {kind!r}, expected one of {sorted(_MODEL_CONFIGS)}")
    allowed = {f.name for f in fields(_MODEL_CONFIGS[kind])}
    bad = sorted(set(model_entry) - allowed)
    if bad:
        raise ConfigError(f"unknown keys in config section 'model': {bad}")

    bench_entry = dict(body.get("bench", {}))
    bad = sorted(set(bench_entry) - _BENCH_KEYS)
    if bad:
        raise ConfigError(f"unknown keys in config section 'bench': {bad}")

    return RunConfig(
        synth=_build_section(SynthConfig, body.get("synth", {}), "synth"),
        flow=_build_section(FluidSpec, body.get("flow", {}), "flow"),
        model_kind=kind,
        model_args={k: _tupled(v) for k, v in model_entry.items()},
        train=_build_section(TrainConfig, body.get("train", {}), "train"),
        bench_args={k: _tupled(v) for k, v in bench_entry.items()},
        base_dir=path.resolve().parent,
    )


def _load_manifest_for(data: Path, command: str) -> DatasetManifest:
    manifest_path = data / "manifest.json"
    if not manifest_path.exists():
        raise DataError(
            f"no manifest at {manifest_path}; run `permamba generate` "
            f"(and `permamba simulate`) before `permamba {command}`")
    return load_manifest(manifest_path)


def _model_overrides(args) -> dict:
    overrides = {}
    if args.patch is not None:
        overrides["patch"] = args.patch
    if args.blocks is not None:
        # The depth knob is named per family.
        kind = args.model
        overrides["blocks" if kind != "vit" else "depth"] = args.blocks
    if args.scan is not None:
        overrides["scan_axes"] = (
            ("x", "y", "z") if args.scan == "all" else (args.scan,))
    return overrides


def cmd_generate(args, config: RunConfig) -> int:
    seed = args.seed if args.seed is not None else 0
    out = config.resolve(args.out or "data")
    manifest = generate_dataset(config.synth, args.count, DEFAULT_FRACTIONS,
                                out, seed)
    porosities = [r.porosity for r in manifest.samples]
    print(f"generated {len(manifest.samples)} samples in {out}")
    print(f"porosity range [{min(porosities):.4f}, {max(porosities):.4f}], "
          f"mean {sum(porosities) / len(porosities):.4f}")
    return 0


def cmd_simulate(args, config: RunConfig) -> int:
    data = config.resolve(args.data)
    manifest = _load_manifest_for(data, "simulate")
    filled = []
    failed = []
    for record in manifest.samples:
        grid = manifest.load_grid(record, data)
        try:
            k, _ = measure_permeability(grid, config.flow)
        except ConvergenceError as err:
            failed.append(record.id)
            print(f"sample {record.id}: solver hit its step cap "
                  f"(residual {err.residual:.3e}); permeability left unset",
                  file=sys.stderr)
            filled.append(record)
            continue
        filled.append(replace(record, permeability_mD=k))
    DatasetManifest(samples=filled, n=manifest.n, dx=manifest.dx,
                    master_seed=manifest.master_seed,
                    synth=manifest.synth).save(data / "manifest.json")
    solved = [r.permeability_mD for r in filled if r.permeability_mD is not None]
    if solved:
        print(f"simulated {len(solved)} of {len(filled)} samples; "
              f"k range [{min(solved):.3f}, {max(solved):.3f}] mD")
    if failed:
        print(f"{len(failed)} samples flagged without permeability",
              file=sys.stderr)
        return 1
    return 0


def _write_run_metadata(workdir: Path, kind: str, model_config,
                        stats: NormStats) -> None:
    body = {
        "model": kind,
        "config": asdict(model_config),
        "stats": {"k_min": stats.k_min, "k_max": stats.k_max},
    }
    (workdir / "run.json").write_text(
        json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args, config: RunConfig) -> int:
    data = config.resolve(args.data)
    manifest = _load_manifest_for(data, "train")
    kind = args.model
    model_config = config.model_config(kind, manifest.n, _model_overrides(args))
    train_config = config.train
    if args.seed is not None:
        train_config = replace(train_config, seed=args.seed)
    model = _MODEL_CLASSES[kind].initialize(model_config, train_config.seed)
    workdir = config.resolve(args.out or f"run_{kind}")

    def report_epoch(row):
        print(f"epoch {row['epoch']:4d}  train {row['train_mse']:.6f}  "
              f"valid {row['valid_mse']:.6f}")

    result = train(model, manifest, data, train_config, workdir,
                   on_epoch=report_epoch)
    _write_run_metadata(workdir, kind, model_config, result.stats)
    print(f"best epoch {result.best_epoch} "
          f"(valid mse {result.best_valid_mse:.6f}) after "
          f"{result.epochs_run} epochs")
    print(f"checkpoint {result.checkpoint}")
    return 0


def _load_run_metadata(run_dir: Path):
    run_path = run_dir / "run.json"
    checkpoint = run_dir / "model_best.ckpt"
    for required in (run_path, checkpoint):
        if not required.exists():
            raise DataError(
                f"missing {required}; run `permamba train --out {run_dir}` first")
    meta = json.loads(run_path.read_text(encoding="utf-8"))
    kind = meta["model"]
    cfg_cls = _MODEL_CONFIGS[kind]
    model_config = cfg_cls(**{k: _tupled(v) for k, v in meta["config"].items()})
    stats = NormStats(**meta["stats"])
    model = _MODEL_CLASSES[kind].initialize(model_config, seed=0)
    model.load_state(load_arrays(checkpoint))
    return kind, model, stats


def cmd_eval(args, config: RunConfig) -> int:
    run_dir = config.resolve(args.run)
    kind, model, stats = _load_run_metadata(run_dir)
    data = config.resolve(args.data)
    manifest = _load_manifest_for(data, "eval")
    report = evaluate(model, manifest, data, args.split, stats,
                      batch_size=config.train.batch_size)
    out = config.resolve(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    with open(out / "scatter.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "k_true_mD", "k_pred_mD"])
        for record, (k_true, k_pred) in zip(manifest.split(args.split),
                                            report.pairs):
            writer.writerow([record.id, k_true, k_pred])
    print(f"{kind} on {args.split}: R^2 {report.r2:.4f}, "
          f"RMSE {report.rmse_mD:.3f} mD "
          f"({report.zero_targets_skipped} zero targets skipped)")
    print(f"wrote {out / 'metrics.json'} and {out / 'scatter.csv'}")
    return 0


def cmd_ablate(args, config: RunConfig) -> int:
    data = config.resolve(args.data)
    manifest = _load_manifest_for(data, "ablate")
    model_config = config.model_config("vim", manifest.n, {})
    workdir = config.resolve(args.out or f"ablate_{args.grid}")

    def report_point(row):
        outcome = f"skipped ({row['skipped']})" if row["skipped"] else \
            f"r2 {row['r2']:.4f}"
        print(f"{args.grid}={row['value']}: {outcome}")

    ablate(args.grid, manifest, data, model_config, config.train, workdir,
           on_point=report_point)
    print(f"wrote {workdir / f'ablation_{args.grid}.csv'}")
    return 0


def cmd_bench(args, config: RunConfig) -> int:
    report = bench_report(**config.bench_args)
    out = config.resolve(args.out or "bench")
    out.mkdir(parents=True, exist_ok=True)
    write_footprints_csv(report.records, out / "footprints.csv")
    payload = slopes_payload(report)
    (out / "slopes.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"vim slope in tokens {report.vim_slope.slope:.3f} "
          f"(stderr {report.vim_slope.stderr:.3f})")
    print(f"vit slope in tokens {report.vit_slope.slope:.3f} "
          f"(stderr {report.vit_slope.stderr:.3f}, attention-dominated sizes)")
    for record in report.over_budget:
        print(f"flag: {record.model} at patch {record.patch} needs "
              f"{record.gigabytes:.0f} GB, over the {report.budget_gb:.0f} GB budget")
    print(f"wrote {out / 'footprints.csv'} and {out / 'slopes.json'}")
    return 0


def _read_csv(path: Path) -> tuple[list[str], list[dict]]:
    if not path.exists():
        raise DataError(f"no such CSV: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        names = reader.fieldnames or []
    if not rows:
        raise DataError(f"{path} has no data rows")
    return names, rows


def _figure_for(columns: list[str], rows: list[dict], source: Path):
    have = set(columns)
    if {"id", "k_true_mD", "k_pred_mD"} <= have:
        points = tuple((float(r["k_true_mD"]), float(r["k_pred_mD"]))
                       for r in rows)
        return dict(series=[Series(points)], identity=True,
                    title="Predicted versus simulated permeability",
                    x_label="simulated permeability (mD)",
                    y_label="predicted permeability (mD)")
    if {"model", "patch", "tokens", "bytes"} <= have:
        by_model: dict[str, list] = {}
        for r in rows:
            by_model.setdefault(r["model"], []).append(
                (float(r["tokens"]), float(r["bytes"])))
        series = [Series(tuple(sorted(pts)), label=name, draw_line=True)
                  for name, pts in sorted(by_model.items())]
        return dict(series=series, log_x=True, log_y=True,
                    title="Activation memory versus token count",
                    x_label="tokens", y_label="retained bytes")
    if {"epoch", "train_mse", "valid_mse"} <= have:
        epochs = [float(r["epoch"]) for r in rows]
        series = [
            Series(tuple(zip(epochs, (float(r["train_mse"]) for r in rows))),
                   label="train", draw_line=True, draw_markers=False),
            Series(tuple(zip(epochs, (float(r["valid_mse"]) for r in rows))),
                   label="valid", draw_line=True, draw_markers=False),
        ]
        return dict(series=series, title="Training curves",
                    x_label="epoch", y_label="normalized MSE")
    if {"grid", "value", "r2"} <= have:
        kept = [r for r in rows if r["r2"] != ""]
        if not kept:
            raise DataError(f"{source} has no completed ablation points")
        grid = kept[0]["grid"]
        try:
            xs = [float(r["value"]) for r in kept]
            ticks = None
        except ValueError:
            xs = list(range(len(kept)))
            ticks = [(float(i), r["value"]) for i, r in enumerate(kept)]
        points = tuple(zip(xs, (float(r["r2"]) for r in kept)))
        return dict(series=[Series(points, draw_line=True)], x_ticks=ticks,
                    title=f"Ablation over {grid}",
                    x_label=grid, y_label="test R^2")
    raise ConfigError(
        f"unrecognized CSV shape in {source}: expected scatter metrics, "
        f"footprints, a training log, or an ablation table")


def cmd_plotdata(args, config: RunConfig) -> int:
    source = config.resolve(args.csv)
    columns, rows = _read_csv(source)
    spec = _figure_for(columns, rows, source)
    out = config.resolve(args.out) if args.out else source.with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_figure(**spec), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="JSON run config; relative paths resolve beside it")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed for all randomness")
    common.add_argument("--out", type=Path, default=None,
                        help="output directory or file")

    parser = argparse.ArgumentParser(
        prog="permamba",
        description="Porous-media permeability pipeline: synthesis, flow "
                    "simulation, regression training, and scaling benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="synthesize voxel samples and a manifest")
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("simulate", parents=[common],
                       help="fill the manifest with simulated permeabilities")
    p.add_argument("--data", type=Path, default=Path("data"))
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="fit a model")
    p.add_argument("--data", type=Path, default=Path("data"))
    p.add_argument("--model", choices=sorted(_MODEL_CONFIGS), default="vim")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--scan", choices=("all", "x", "y", "z"), default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score a trained run on a split")
    p.add_argument("--run", type=Path, required=True,
                   help="training output directory")
    p.add_argument("--data", type=Path, default=Path("data"))
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[common],
                       help="sweep one ablation grid")
    p.add_argument("--grid", choices=sorted(ABLATION_GRIDS), required=True)
    p.add_argument("--data", type=Path, default=Path("data"))
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("bench", parents=[common],
                       help="emit activation-memory footprints and slopes")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("plotdata", parents=[common],
                       help="render a pipeline CSV to SVG")
    p.add_argument("csv", type=Path)
    p.set_defaults(handler=cmd_plotdata)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            config = load_run_config(args.config)
        else:
            config = RunConfig.default(Path.cwd())
        return args.handler(args, config)
    except _EXPECTED_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
