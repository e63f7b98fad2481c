"""Command-line interface: synth, train, eval, verify, export and efficiency.

Exit codes: 0 success, 1 failed check or evaluation error, 2 usage error.
Set ``ARTERYFLOW_THREADS`` to cap the BLAS thread pool.
"""
from __future__ import annotations

import os

_threads = os.environ.get("ARTERYFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402

MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    tool_version: str = __version__
    started: float = field(default_factory=time.time)
    duration_s: float = 0.0

    def write(self, directory: Path) -> Path:
        self.duration_s = round(time.time() - self.started, 3)
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(path: str) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_data(path: str):
    from .synthetic import MANIFEST, load_dataset

    if not (Path(path) / MANIFEST).is_file():
        raise UsageError(f"{path}: not a dataset directory (no {MANIFEST})")
    return load_dataset(path)


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthetic import SpecRanges, gen_dataset, save_dataset

    if args.count < 1:
        raise UsageError("--count must be >= 1")
    ranges = SpecRanges(axial_segments=(args.axial, args.axial), radial_rings=(args.rings, args.rings))
    samples = gen_dataset(args.count, ranges, args.seed, random_rotation=args.rotate)
    out = _out_dir(args.out)
    save_dataset(samples, out, {"seed": args.seed, "rotate": args.rotate, "ranges": asdict(ranges)})
    man = RunManifest("synth", {"count": args.count, "rotate": args.rotate, "ranges": asdict(ranges)}, args.seed)
    man.outputs = sorted(p.name for p in out.iterdir() if p.name != MANIFEST_NAME)
    man.write(out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    from .experiments import SMALL_BASELINE, SMALL_SEGNN, build_model
    from .nn.params import save_checkpoint
    from .plotting import plot_loss
    from .train import TrainConfig, prepare, split_indices, train

    samples, _ = _load_data(args.data)
    model_cfg = (SMALL_SEGNN if args.model == "segnn" else SMALL_BASELINE).to_dict()
    if args.model_config:
        model_cfg.update(json.loads(args.model_config))
    model, lmax = build_model(args.model, model_cfg)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      patience=args.patience, seed=args.seed)
    tr, va, te = split_indices(len(samples), args.seed)
    prep = [prepare(s.mesh, s.velocity, lmax) for s in samples]

    def report(epoch, train_loss, val_loss, _):
        if args.verbose:
            print(f"epoch {epoch:4d}  train {train_loss:.4f}  val {val_loss:.4f}", flush=True)

    res = train(model, model.init_params(args.seed), [prep[i] for i in tr], [prep[i] for i in va], cfg, report)
    out = _out_dir(args.out)
    split = {"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}
    save_checkpoint(out / "checkpoint.json", res.params, args.model,
                    {"model": model_cfg, "train": asdict(cfg), "split": split, "best_epoch": res.best_epoch})
    (out / "loss.csv").write_text(res.history_csv())
    plot_loss(res.history, out / "loss.png", f"{args.model} training")
    man = RunManifest("train", {"model": args.model, "model_config": model_cfg, "train": asdict(cfg)}, args.seed,
                      {"data": str(args.data)}, ["checkpoint.json", "loss.csv", "loss.png"])
    man.write(out)
    print(f"best epoch {res.best_epoch}, validation L1 {min(h[2] for h in res.history):.4f}")
    return 0


def _load_model(path: str):
    from .experiments import build_model
    from .nn.params import CheckpointError, load_checkpoint

    if not Path(path).is_file():
        raise UsageError(f"{path}: checkpoint not found")
    try:
        params, kind, config = load_checkpoint(path)
    except (CheckpointError, KeyError, ValueError) as exc:
        raise UsageError(f"{path}: unreadable checkpoint ({exc})") from None
    model, lmax = build_model(kind, config["model"])
    if len(params) != len(model.init_params(0)):
        raise UsageError(f"{path}: parameter count does not match the stored model config")
    return params, kind, config, model, lmax


def _test_samples(samples, config, which: str, rotate_seed: int | None):
    from .experiments import random_motions

    split = config["split"]
    idx = {"test": split["test"], "val+test": split["val"] + split["test"], "all": list(range(len(samples)))}[which]
    if max(idx) >= len(samples):
        raise ValueError("checkpoint split does not fit this dataset")
    chosen = [samples[i] for i in idx]
    if rotate_seed is not None:
        chosen = random_motions(chosen, rotate_seed)
    return idx, chosen


def cmd_eval(args) -> int:
    from .experiments import evaluate
    from .plotting import plot_metrics
    from .train import prepare

    params, kind, config, model, lmax = _load_model(args.checkpoint)
    samples, _ = _load_data(args.data)
    idx, chosen = _test_samples(samples, config, args.split, args.seed if args.rotate_test else None)
    report = evaluate(model, params, [prepare(s.mesh, s.velocity, lmax) for s in chosen],
                      [f"sample_{i:03d}" for i in idx])
    out = _out_dir(args.out)
    (out / "metrics.csv").write_text(report.to_csv())
    label = f"{kind} ({'rotated' if args.rotate_test else 'canonical'})"
    table = report.table(kind)
    (out / "metrics.txt").write_text(table)
    plot_metrics(report, out / "metrics.png", label)
    RunManifest("eval", {"rotate_test": args.rotate_test, "split": args.split}, args.seed,
                {"data": str(args.data), "checkpoint": str(args.checkpoint)},
                ["metrics.csv", "metrics.txt", "metrics.png"]).write(out)
    print(table, end="")
    return 0


def cmd_export(args) -> int:
    from .experiments import predict
    from .mesh import save_mesh
    from .train import prepare

    params, kind, config, model, lmax = _load_model(args.checkpoint)
    samples, _ = _load_data(args.data)
    idx, chosen = _test_samples(samples, config, args.split, None)
    out = _out_dir(args.out)
    names = []
    for i, s in zip(idx, chosen):
        pred = predict(model, params, prepare(s.mesh, s.velocity, lmax))
        name = f"prediction_{i:03d}.vtk"
        (out / name).write_text(save_mesh(s.mesh, pred, {"truth": s.velocity, "error": pred - s.velocity},
                                          title=f"{kind} prediction for sample {i}"))
        names.append(name)
    RunManifest("export", {"split": args.split}, None, {"data": str(args.data), "checkpoint": str(args.checkpoint)},
                names).write(out)
    print(f"wrote {len(names)} files to {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed, poison=args.poison)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    failed = [r.name for r in results if not r.passed]
    print(f"FAILED: {', '.join(failed)}" if failed else "all checks passed")
    if args.out:
        out = _out_dir(args.out)
        (out / "verify.txt").write_text("\n".join(lines) + "\n")
        RunManifest("verify", {"poison": args.poison}, args.seed, {}, ["verify.txt"]).write(out)
    return 1 if failed else 0


def cmd_efficiency(args) -> int:
    from .experiments import data_efficiency
    from .plotting import plot_efficiency

    sizes = tuple(int(s) for s in args.sizes.split(","))
    seeds = tuple(range(args.seeds))

    def progress(kind, n, seed, e):
        if args.verbose:
            print(f"{kind:<9} n={n:<3} seed={seed}  eps {100 * e:.1f}%", flush=True)

    res = data_efficiency(sizes, seeds, args.epochs, args.seed, rotate=args.rotate, progress=progress, lr=args.lr,
                          steps=args.steps)
    out = _out_dir(args.out)
    (out / "efficiency.csv").write_text(res.to_csv())
    plot_efficiency(res, sizes, out / "efficiency.png")
    RunManifest("efficiency", {"sizes": sizes, "seeds": seeds, "epochs": args.epochs, "steps": args.steps,
                               "lr": args.lr, "rotate": args.rotate},
                args.seed, {}, ["efficiency.csv", "efficiency.png"]).write(out)
    for kind in sorted({r[0] for r in res.rows}):
        print(kind, " ".join(f"{100 * e:.1f}%" for e in res.curve(kind, sizes)))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arteryflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"arteryflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic tube dataset")
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rotate", action="store_true", help="apply a random rigid motion to every sample")
    s.add_argument("--axial", type=int, default=8, help="axial segments per tube")
    s.add_argument("--rings", type=int, default=3, help="radial rings per cross-section")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a dataset (80:10:10 split)")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=("segnn", "baseline"), default="segnn")
    t.add_argument("--model-config", help="JSON object overriding model config fields")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--batch-size", type=int, default=2)
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score a checkpoint on its held-out split"),
                                 ("export", cmd_export, "write predicted fields as VTK")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", required=True)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--split", choices=("test", "val+test", "all"), default="test")
        e.add_argument("--out", required=True)
        if name == "eval":
            e.add_argument("--rotate-test", action="store_true", help="rigidly move the test meshes first")
            e.add_argument("--seed", type=int, default=0, help="seed for the test motions")
        e.set_defaults(func=func)

    v = sub.add_parser("verify", help="run the equivariance and gradient checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--poison", action="store_true", help="corrupt one edge attribute (negative control)")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("efficiency", help="test error against training-set size for both models")
    f.add_argument("--sizes", default="2,4,8,16")
    f.add_argument("--seeds", type=int, default=3)
    f.add_argument("--epochs", type=int, default=100, help="epochs per run")
    f.add_argument("--steps", type=int, help="fix optimiser updates per run instead of epochs")
    f.add_argument("--lr", type=float, default=1e-3)
    f.add_argument("--seed", type=int, default=1, help="dataset seed")
    f.add_argument("--rotate", action="store_true", help="use randomly oriented tubes")
    f.add_argument("--out", required=True)
    f.add_argument("-v", "--verbose", action="store_true")
    f.set_defaults(func=cmd_efficiency)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"arteryflow: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"arteryflow: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
