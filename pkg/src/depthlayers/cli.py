"""Command-line entry point: ``depthlayers <command> --config run.ini``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing, malformed or mismatched inputs), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .completion import FillRegion, propagate_fill
from .core import DEPTH_MAX, DEPTH_MIN, merge_layers
from .datagen import degrade_mask, generate_dataset, resize
from .fileio import (DataError, atomic_write_text, list_samples, load_depth, load_instances,
                     load_mask, load_rgb, read_dataset, save_depth, write_json, write_png8,
                     write_ply, write_sample)
from .metrics import MetricOptions, MetricsReport, aggregate, evaluate, improvement_map
from .refine import (BackendError, IdentityBackend, PropagationBackend, refine_instances,
                     refine_layered)
from .toynet import (CheckpointError, ModelParams, ToyNetBackend, load_checkpoint,
                     run_stage, save_checkpoint)
from .toynet.model import Architecture

log = logging.getLogger("depthlayers")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared helpers --------------------------------------------------------------

def _metric_options(cfg) -> MetricOptions:
    m = cfg.metrics
    return MetricOptions(t=m.t, delta=m.delta, theta=m.theta, edge_threshold=m.edge_threshold,
                         pairs=m.pairs, min_fraction=m.min_fraction, seed=m.seed)


def _make_backend(cfg, name=None, checkpoint=None):
    name = name or cfg.run.backend
    if name == "identity":
        return IdentityBackend()
    if name == "propagation":
        return PropagationBackend(radius=cfg.refine.radius)
    path = Path(checkpoint or cfg.paths.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    params, _, _ = load_checkpoint(path)
    return ToyNetBackend(params)


def _load_sources(root):
    """RGB-D records: one sub-directory per record holding ``rgb.png`` and a
    ``depth.pfm`` or ``depth.png``."""
    records = []
    for sub in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        depth = next((sub / n for n in ("depth.pfm", "depth.png") if (sub / n).exists()), None)
        if depth is None or not (sub / "rgb.png").exists():
            continue
        d = load_depth(depth)
        records.append((load_rgb(sub / "rgb.png"), np.nan_to_num(d.values, nan=0.0)))
    if not records:
        raise DataError(f"no RGB-D records found under {root}")
    return records


def _load_masks(root):
    """Binary mask images (``*.png``) from a directory, in name order."""
    paths = sorted(Path(root).glob("*.png"))
    if not paths:
        raise DataError(f"no mask images found under {root}")
    masks = [load_mask(p) for p in paths]
    if not any(m.any() and not m.all() for m in masks):
        raise DataError(f"every mask under {root} is empty or full")
    return masks


def _finite_or_fail(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


# -- generate ----------------------------------------------------------------------

def cmd_generate(cfg, args) -> int:
    out = Path(args.out or cfg.paths.data)
    records = _load_sources(cfg.paths.sources) if cfg.paths.sources else None
    masks = _load_masks(cfg.paths.masks) if cfg.paths.masks else None
    g = cfg.generate
    if g.count <= 0:
        raise DataError("generate.count must be positive")
    samples = generate_dataset(g.count, cfg.run.seed, g.size, cfg.perturb, g.kind_weights,
                               g.n_planes, records, workers=cfg.run.workers, masks=masks)
    for i, s in enumerate(samples):
        write_sample(out, i, s)
    kinds = Counter(s.kind for s in samples)
    manifest = {"count": len(samples), "seed": cfg.run.seed, "size": g.size,
                "kinds": dict(sorted(kinds.items())), "perturb": cfg.perturb.to_dict(),
                "sources": "records" if records else "synthetic",
                "masks": "user" if masks else "procedural"}
    write_json(out / "dataset.json", manifest)
    print(f"generated {len(samples)} samples in {out}")
    for kind, n in sorted(kinds.items()):
        print(f"  {kind}: {n} ({n / len(samples):.1%})")
    return EXIT_OK


# -- train -------------------------------------------------------------------------

CSV_FIELDS = ("iteration", "l1", "l2", "grad", "total")


def _read_csv_rows(path, upto):
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if int(r["iteration"]) <= upto]


def _write_csv(path, rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(float(r[k])) if k != "iteration" else int(r[k])) for k in CSV_FIELDS})
    atomic_write_text(path, buf.getvalue())


def _dataset_shape(dataset):
    shapes = {s.depth.shape for s in dataset}
    if len(shapes) != 1:
        raise DataError(f"training samples have mixed sizes {sorted(shapes)}")
    return list(shapes.pop())


def _train_one(cfg, args, stage, dataset, shape, params, state, start):
    tc = cfg.train
    iters = tc.iters_stage1 if stage == 1 else tc.iters_stage2
    ckpt = Path(cfg.paths.checkpoint)
    csv_path = Path(cfg.paths.output) / f"loss_stage{stage}.csv"
    rows = _read_csv_rows(csv_path, start) if start else []
    every = max(1, args.checkpoint_every)

    def meta(it):
        return {"stage": stage, "iteration": it, "iters": iters, "shape": shape, "seed": tc.seed}

    def on_iter(it, p, st):
        if it % every == 0 and it < iters:
            save_checkpoint(ckpt, p, st, meta(it))

    result = run_stage(f"stage{stage}", tc, dataset, params, iters, state=state, start=start,
                       callback=on_iter)
    rows.extend(result.log)
    _write_csv(csv_path, rows)
    for name, arr in result.params.arrays().items():
        _finite_or_fail(arr, f"parameter {name}")
    if result.log and not np.isfinite(result.log[-1]["total"]):
        raise NumericError(f"stage {stage} loss diverged")
    save_checkpoint(ckpt, result.params, result.state, meta(iters))
    final = result.log[-1]["total"] if result.log else float("nan")
    print(f"stage {stage}: {iters} iterations, final loss {final:.6f}, "
          f"skipped steps {result.state.skipped}, checkpoint {ckpt}")
    return result.params


def cmd_train(cfg, args) -> int:
    data_root = Path(args.data or cfg.paths.data)
    if not list_samples(data_root):
        raise DataError(f"no training samples under {data_root}")
    dataset = read_dataset(data_root)
    shape = _dataset_shape(dataset)
    stages = {"1": [1], "2": [2], "both": [1, 2]}[args.stage or ("both" if cfg.train.stage == 0
                                                                 else str(cfg.train.stage))]
    ckpt = Path(cfg.paths.checkpoint)
    existing = None
    if ckpt.exists() and (args.resume or 2 in stages and 1 not in stages):
        existing = load_checkpoint(ckpt)
        if existing[2].get("shape", shape) != shape:
            raise DataError(f"checkpoint was trained on {existing[2]['shape']}, dataset is {shape}")

    arch = Architecture(widths=tuple(cfg.train.widths), low_channels=cfg.train.low_channels)
    params, state, start = None, None, 0
    if args.resume and existing is not None:
        p, st, meta = existing
        if meta.get("iteration", 0) < meta.get("iters", 0):
            stages = [s for s in stages if s >= meta["stage"]]
            params, state, start = p, st, int(meta["iteration"])
        elif meta.get("stage") == 1 and stages == [1, 2]:
            stages, params = [2], p
        elif meta.get("stage") in stages and stages[-1] == meta.get("stage"):
            print(f"checkpoint {ckpt} already complete")
            return EXIT_OK

    for stage in stages:
        if params is None:
            if stage == 2 and not args.from_scratch:
                if existing is None or existing[2].get("stage") != 1 or \
                        existing[2].get("iteration") != existing[2].get("iters"):
                    raise UsageError("stage 2 needs a finished stage-1 checkpoint "
                                     f"at {ckpt} (or pass --from-scratch)")
                params = existing[0]
            else:
                params = ModelParams.init(arch, seed=cfg.train.seed)
        params = _train_one(cfg, args, stage, dataset, shape, params, state, start)
        state, start = None, 0
    return EXIT_OK


# -- refine ------------------------------------------------------------------------

def _at_size(arr, size, nearest=False):
    return resize(arr, size, nearest=nearest) if arr.shape[:2] != tuple(size) else arr


def cmd_refine(cfg, args) -> int:
    if args.mask is None and args.instances is None:
        raise UsageError("refine needs --mask or --instances")
    if args.emit_layers and args.mask is None:
        raise UsageError("--emit-layers requires --mask")
    dm = load_depth(args.depth)
    depth, valid = dm.values.copy(), dm.valid_mask()
    if not valid.any():
        raise DataError(f"{args.depth}: no valid depth pixels")
    if not valid.all():
        depth[~valid] = 0.0
        depth = propagate_fill(depth, FillRegion(~valid), radius=cfg.refine.radius)
    rgb = load_rgb(args.rgb)
    guide = load_mask(args.mask) if args.mask else load_instances(args.instances)
    if rgb.shape[:2] != depth.shape or guide.shape != depth.shape:
        raise DataError("depth, rgb and mask/instances must share a size")
    backend = _make_backend(cfg, args.backend, args.checkpoint)
    size = args.infer_size if args.infer_size is not None else cfg.refine.infer_size
    work = (size, size) if size else depth.shape
    d_in, rgb_in = _at_size(depth, work), _at_size(rgb, work)
    g_in = _at_size(guide, work, nearest=True)
    layers = None
    if args.mask:
        res = refine_layered(backend, d_in, rgb_in, g_in)
        merged, layers = res.merged, (res.layer1, res.layer2)
    else:
        merged = refine_instances(backend, d_in, rgb_in, g_in.astype(np.int64),
                                  cfg.refine.min_fraction)
    if size:
        merged = _at_size(merged, depth.shape)
        if layers:
            layers = tuple(_at_size(x, depth.shape) for x in layers)
            merged = merge_layers(layers[0], layers[1], guide)
    _finite_or_fail(merged, "refined depth")
    merged = np.where(valid, merged, np.nan)
    out = Path(args.out)
    save_depth(merged, out)
    print(f"refined depth written to {out}")
    if args.emit_layers:
        for i, layer in enumerate(layers, start=1):
            p = out.with_name(f"{out.stem}.layer{i}{out.suffix}")
            save_depth(layer, p)
            print(f"layer {i} written to {p}")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------------

DEPTH_EXT = (".pfm", ".png")


def _files(root, exts):
    root = Path(root)
    if root.is_file():
        return [root]
    if not root.is_dir():
        raise DataError(f"{root} does not exist")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in exts)


def _eval_task(task):
    name, pred, gt, inst, initial, opts, align = task
    rep = evaluate(pred, gt, inst, initial=initial, opts=opts, valid=np.isfinite(gt) & np.isfinite(pred),
                   align=align)
    return name, rep


def _map_ordered(fn, tasks, workers):
    if workers <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _file_tasks(cfg, args, opts):
    preds = _files(args.pred, DEPTH_EXT)
    gts = _files(args.gt, DEPTH_EXT)
    insts = _files(args.instances, (".png",))
    inits = _files(args.initial, DEPTH_EXT) if args.initial else None
    counts = {"pred": len(preds), "gt": len(gts), "instances": len(insts)}
    if inits is not None:
        counts["initial"] = len(inits)
    if len(set(counts.values())) != 1 or not preds:
        raise DataError(f"file-set sizes differ or are empty: {counts}")
    tasks = []
    for i, (p, g, m) in enumerate(zip(preds, gts, insts)):
        init = load_depth(inits[i]).values if inits else None
        tasks.append((p.stem, load_depth(p).values, load_depth(g).values, load_instances(m), init,
                      opts, cfg.metrics.align))
    return tasks


def _sweep(cfg, backend, samples, opts, workers):
    table = {}
    for op in cfg.sweep.ops:
        table[op] = {}
        for k in cfg.sweep.ks:
            tasks = []
            for name, s in samples:
                m = degrade_mask(s.mask, op, k)
                pred = refine_layered(backend, s.perturbed, s.rgb, m).merged
                tasks.append((name, pred, s.depth, s.mask.astype(np.int64), s.perturbed, opts,
                              cfg.metrics.align))
            reps = [r for _, r in _map_ordered(_eval_task, tasks, workers)]
            table[op][str(k)] = aggregate(reps)
    return table


def _sweep_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["op", "k", "mbe", "rmse", "r3"])
    for op, rows in table.items():
        for k, agg in rows.items():
            w.writerow([op, k, repr(agg["mbe"]), repr(agg["rmse"]), repr(agg.get("r3"))])
    return buf.getvalue()


def cmd_evaluate(cfg, args) -> int:
    opts = _metric_options(cfg)
    workers = cfg.run.workers
    out = Path(args.out or Path(cfg.paths.output) / "report.json")
    sweep = None
    if args.pred or args.gt or args.instances:
        if not (args.pred and args.gt and args.instances):
            raise UsageError("file-set mode needs --pred, --gt and --instances")
        if args.sweep:
            raise UsageError("the degradation sweep needs a dataset (--dataset)")
        tasks = _file_tasks(cfg, args, opts)
    else:
        root = Path(args.dataset or cfg.paths.data)
        dirs = list_samples(root)
        if not dirs:
            raise DataError(f"no samples under {root}")
        samples = [(d.name, s) for d, s in zip(dirs, read_dataset(root))]
        backend = _make_backend(cfg, args.backend, args.checkpoint)
        tasks = []
        for name, s in samples:
            pred = refine_layered(backend, s.perturbed, s.rgb, s.mask).merged
            tasks.append((name, pred, s.depth, s.mask.astype(np.int64), s.perturbed, opts,
                          cfg.metrics.align))
        if args.sweep or cfg.sweep.enabled:
            sweep = _sweep(cfg, backend, samples, opts, workers)
    results = _map_ordered(_eval_task, tasks, workers)
    for name, rep in results:
        for key in ("rmse", "whdr", "mbe", "eps_acc", "eps_comp"):
            if not np.isfinite(getattr(rep, key)):
                raise NumericError(f"{name}: non-finite {key}")
    report = {"images": [{"name": n, "report": r.to_dict()} for n, r in results],
              "aggregate": aggregate([r for _, r in results])}
    if sweep is not None:
        report["sweep"] = sweep
        atomic_write_text(out.with_name("sweep.csv"), _sweep_csv(sweep))
    write_json(out, report)
    agg = report["aggregate"]
    line = f"evaluated {len(results)} images: mbe {agg['mbe']:.4f} rmse {agg['rmse']:.4f}"
    if agg.get("r3") is not None:
        line += f" r3 {agg['r3']:.3f}"
    print(line)
    print(f"report written to {out}")
    return EXIT_OK


def read_report(path) -> dict:
    """Load a report written by ``evaluate``; per-image entries become
    :class:`MetricsReport` objects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    data["images"] = [{"name": e["name"], "report": MetricsReport.from_dict(e["report"])}
                      for e in data["images"]]
    return data


# -- viz ---------------------------------------------------------------------------

def colorize(values, cmap: str, lo: float, hi: float) -> np.ndarray:
    """Map values onto a matplotlib colormap; returns uint8 RGB."""
    from matplotlib import colormaps

    t = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    rgba = colormaps[cmap](np.nan_to_num(t, nan=0.0))
    return np.rint(rgba[..., :3] * 255).astype(np.uint8)


def cmd_viz(cfg, args) -> int:
    out = Path(args.out or cfg.paths.output)
    d = load_depth(args.depth).values
    write_png8(out / "depth.png", colorize(d, "magma", DEPTH_MIN, DEPTH_MAX))
    print(f"wrote {out / 'depth.png'}")
    if args.initial or args.gt:
        if not (args.initial and args.gt):
            raise UsageError("an improvement map needs both --initial and --gt")
        imp = improvement_map(load_depth(args.initial).values, d, load_depth(args.gt).values)
        limit = args.limit or max(float(np.nanmax(np.abs(imp))), 1e-12)
        # improvement reads blue, worsening red, zero neutral
        write_png8(out / "improvement.png", colorize(imp, "RdBu", -limit, limit))
        print(f"wrote {out / 'improvement.png'}")
    if args.ply:
        rgb = load_rgb(args.rgb) if args.rgb else None
        n = write_ply(out / "cloud.ply", d, rgb, np.isfinite(d))
        print(f"wrote {out / 'cloud.ply'} ({n} vertices)")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthlayers", description="Mask-guided layered depth refinement.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration value (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for run.seed")
        p.add_argument("--workers", type=int, help="shorthand for run.workers")

    p = sub.add_parser("generate", help="write a synthetic training dataset")
    common(p)
    p.add_argument("--count", type=int, help="shorthand for generate.count")
    p.add_argument("--out", help="dataset directory (default paths.data)")

    p = sub.add_parser("train", help="train the toy refiner")
    common(p)
    p.add_argument("--stage", choices=["1", "2", "both"])
    p.add_argument("--iters", type=int, help="iterations for each selected stage")
    p.add_argument("--data", help="dataset directory (default paths.data)")
    p.add_argument("--resume", action="store_true", help="continue from paths.checkpoint")
    p.add_argument("--from-scratch", action="store_true", help="allow stage 2 without stage-1 weights")
    p.add_argument("--checkpoint-every", type=int, default=500)

    p = sub.add_parser("refine", help="refine one depth map")
    common(p)
    p.add_argument("--depth", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--mask")
    p.add_argument("--instances")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=config_mod.BACKENDS)
    p.add_argument("--checkpoint")
    p.add_argument("--emit-layers", action="store_true")
    p.add_argument("--infer-size", type=int, help="square working resolution (0 = native)")

    p = sub.add_parser("evaluate", help="score predictions or a backend on a dataset")
    common(p)
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--instances")
    p.add_argument("--initial", help="initial predictions for R3")
    p.add_argument("--dataset", help="score the configured backend on a generated dataset")
    p.add_argument("--backend", choices=config_mod.BACKENDS)
    p.add_argument("--checkpoint")
    p.add_argument("--sweep", action="store_true", help="run the mask-degradation sweep")
    p.add_argument("--out", help="report path (default <output>/report.json)")

    p = sub.add_parser("viz", help="colour-mapped PNGs and point clouds")
    common(p)
    p.add_argument("--depth", required=True)
    p.add_argument("--initial")
    p.add_argument("--gt")
    p.add_argument("--rgb")
    p.add_argument("--limit", type=float, help="symmetric range of the improvement map")
    p.add_argument("--ply", action="store_true")
    p.add_argument("--out", help="output directory (default paths.output)")
    return parser


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "refine": cmd_refine,
            "evaluate": cmd_evaluate, "viz": cmd_viz}


def _resolve_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"run.seed={args.seed}", f"train.seed={args.seed}"]
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    if getattr(args, "count", None) is not None:
        overrides.append(f"generate.count={args.count}")
    if getattr(args, "iters", None) is not None:
        overrides += [f"train.iters_stage1={args.iters}", f"train.iters_stage2={args.iters}"]
    if args.config:
        return config_mod.load(args.config, overrides)
    return config_mod.loads("", overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        with np.errstate(invalid="ignore", divide="ignore"):
            return COMMANDS[args.command](cfg, args)
    except (UsageError, config_mod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        numeric = isinstance(exc.cause, FloatingPointError)
        print(f"{'numeric failure' if numeric else 'data error'}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if numeric else EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
