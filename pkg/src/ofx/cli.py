"""Command line entry point: ``ofx <command>``.

Commands: ingest, augment, split, train, finetune, eval, complexity. Each
accepts ``--config file.json``; explicit flags override file values. Logging
verbosity comes from ``OFX_LOG`` (error, warn, info, debug).
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fcn, imaging, metrics, pipeline

log = logging.getLogger("ofx")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class _WarningCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.count = 0

    def emit(self, record):
        if record.levelno == logging.WARNING:
            self.count += 1


def _setup_logging():
    level = _LEVELS.get(os.environ.get("OFX_LOG", "warn").lower(), logging.WARNING)
    root = logging.getLogger("ofx")
    root.setLevel(logging.DEBUG)
    for h in list(root.handlers):
        root.removeHandler(h)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(level)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    counter = _WarningCounter()
    root.addHandler(stream)
    root.addHandler(counter)
    root.propagate = False
    return counter


def _fmt_lr(lr):
    mant, exp = f"{lr:e}".split("e")
    mant = mant.rstrip("0").rstrip(".")
    return f"{mant}e{int(exp)}"


def parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _parse_ratios(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("ratios need three values: train,val,test")
    return vals


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(args, cfg, keys):
    """Config file values overridden by any flag that was given explicitly."""
    out = {}
    for key, default in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = cfg[key]
        else:
            out[key] = default
    return out


# --- commands -------------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".pgm")


def _find_pairs(src):
    src = Path(src)
    img_dir, mask_dir = src / "images", src / "masks"
    if img_dir.is_dir():
        images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.suffix.lower() in _IMAGE_SUFFIXES}
        masks = {p.stem: p for p in sorted(mask_dir.iterdir())} if mask_dir.is_dir() else {}
        masks = {k: v for k, v in masks.items() if v.suffix.lower() in _IMAGE_SUFFIXES}
    else:
        files = [p for p in sorted(src.iterdir()) if p.suffix.lower() in _IMAGE_SUFFIXES]
        masks = {p.stem[: -len("_mask")]: p for p in files if p.stem.endswith("_mask")}
        images = {p.stem: p for p in files if not p.stem.endswith("_mask")}
    paired = sorted(set(images) & set(masks))
    unpaired = sorted((set(images) ^ set(masks)))
    return [(s, images[s], masks[s]) for s in paired], unpaired


def cmd_ingest(args):
    cfg = _load_config(args.config)
    opts = _resolve(args, cfg, {"target_size": list(imaging.CANONICAL_SHAPE)})
    h, w = (int(v) for v in opts["target_size"])
    log.info("resolved config: %s", json.dumps({"src": str(args.src), "out": str(args.out), **opts}))
    pairs, unpaired = _find_pairs(args.src)
    for stem in unpaired:
        log.warning("unpaired file %s skipped", stem)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for stem, img_path, mask_path in pairs:
        img, mask = pipeline.load_pair(img_path, mask_path, (h, w))
        img_rel, mask_rel = f"images/{stem}.png", f"masks/{stem}.png"
        imaging.write_image(out / img_rel, img)
        imaging.write_mask(out / mask_rel, mask)
        records.append(pipeline.Record(stem, stem, img_rel, mask_rel, pipeline.ORIGINAL))
    pipeline.write_manifest(out / "manifest.csv", records)
    print(f"ingested {len(records)} pairs into {out / 'manifest.csv'} ({len(unpaired)} unpaired skipped)")
    return 0


def cmd_augment(args):
    cfg = _load_config(args.config)
    opts = _resolve(args, cfg, {"seed": 0, "visible_light_mode": False, "output_dir": None,
                                "multipliers": dict(pipeline.DEFAULT_MULTIPLIERS),
                                "target_size": list(imaging.CANONICAL_SHAPE), "jobs": 1})
    manifest = Path(args.manifest)
    if opts["output_dir"] is None:
        opts["output_dir"] = str(manifest.parent / "augmented")
    config = pipeline.BuildConfig.from_dict(opts)
    log.info("resolved config: %s", json.dumps({**config.to_dict(), "jobs": opts["jobs"]}))
    sources = [r for r in pipeline.read_manifest(manifest) if r.subset == pipeline.ORIGINAL]
    records, _ = pipeline.build_dataset(sources, config, jobs=int(opts["jobs"]), manifest_dir=manifest.parent)
    out_manifest = Path(config.output_dir) / "manifest.csv"
    pipeline.write_manifest(out_manifest, records)
    print(pipeline.audit_table([r.plan for r in records]))
    print(f"manifest: {out_manifest}")
    return 0


def cmd_split(args):
    cfg = _load_config(args.config)
    opts = _resolve(args, cfg, {"seed": 0, "ratios": list(pipeline.DEFAULT_RATIOS)})
    log.info("resolved config: %s", json.dumps({"manifest": str(args.manifest), **{k: list(v) if isinstance(v, tuple) else v for k, v in opts.items()}}))
    records = pipeline.read_manifest(args.manifest)
    records = pipeline.split_dataset(records, tuple(opts["ratios"]), int(opts["seed"]))
    out = Path(args.output or args.manifest)
    if args.output:
        # keep paths valid relative to the new location
        for r in records:
            r.image_path = os.path.relpath(pipeline.resolve(args.manifest, r.image_path), out.parent)
            r.mask_path = os.path.relpath(pipeline.resolve(args.manifest, r.mask_path), out.parent)
    pipeline.write_manifest(out, records)
    counts = {s: sum(r.split == s for r in records) for s in pipeline.SPLITS}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def load_split(manifest, split, target_size=imaging.CANONICAL_SHAPE):
    """Inputs scaled to [0, 1] and binary targets for one manifest split."""
    recs = [r for r in pipeline.read_manifest(manifest) if r.split == split]
    xs, ys = [], []
    for r in recs:
        img, mask = pipeline.load_pair(pipeline.resolve(manifest, r.image_path),
                                       pipeline.resolve(manifest, r.mask_path), target_size)
        xs.append(img / 255.0)
        ys.append(mask)
    if not xs:
        return recs, np.zeros((0,) + tuple(target_size), np.float32), np.zeros((0,) + tuple(target_size), np.float32)
    return recs, np.asarray(xs, dtype=np.float32), np.asarray(ys, dtype=np.float32)


_TRAIN_KEYS = {"batch_size": 16, "max_epochs": 100, "patience": 10, "seed": 0, "max_steps": None,
               "target_size": list(imaging.CANONICAL_SHAPE)}


def _train_common(args, finetune):
    cfg = _load_config(args.config)
    keys = dict(_TRAIN_KEYS)
    keys["lr"] = fcn.FINETUNE_LR if finetune else fcn.TRAIN_LR
    opts = _resolve(args, cfg, keys)
    log.info("resolved config: %s", json.dumps({"manifest": str(args.manifest), "out": str(args.out),
                                                 "finetune": finetune, **opts}))
    print(f"learning rate: {_fmt_lr(float(opts['lr']))}")
    size = tuple(int(v) for v in opts["target_size"])
    _, tx, ty = load_split(args.manifest, "train", size)
    _, vx, vy = load_split(args.manifest, "val", size)
    if len(tx) == 0:
        raise ValueError(f"{args.manifest}: training split is empty (run `ofx split` first)")
    adam = None
    if finetune:
        net, _ = fcn.load_checkpoint(getattr(args, "from"))
    else:
        net = fcn.Network.initialize(seed=int(opts["seed"]))
    config = fcn.TrainConfig(lr=float(opts["lr"]), batch_size=int(opts["batch_size"]),
                             max_epochs=int(opts["max_epochs"]), patience=int(opts["patience"]),
                             seed=int(opts["seed"]),
                             max_steps=None if opts["max_steps"] is None else int(opts["max_steps"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fcn.train(net, tx, ty, vx if len(vx) else None, vy if len(vy) else None, config,
                       checkpoint_path=out / "checkpoint.ofx", adam=adam)
    fcn.write_loss_csv(out / "loss.csv", result.history)
    print(f"best epoch {result.best_epoch + 1}, loss {result.best_loss:.6f}; checkpoint {out / 'checkpoint.ofx'}")
    return 0


def cmd_train(args):
    return _train_common(args, finetune=False)


def cmd_finetune(args):
    return _train_common(args, finetune=True)


def cmd_eval(args):
    cfg = _load_config(args.config)
    opts = _resolve(args, cfg, {"mode": "nir", "threshold": None, "split": "test", "jobs": 1,
                                "target_size": list(imaging.CANONICAL_SHAPE)})
    if opts["mode"] not in metrics.MODE_THRESHOLDS:
        raise ValueError(f"mode must be nir or visible, got {opts['mode']!r}")
    threshold = float(opts["threshold"]) if opts["threshold"] is not None else metrics.MODE_THRESHOLDS[opts["mode"]]
    log.info("resolved config: %s", json.dumps({"manifest": str(args.manifest), "checkpoint": str(args.checkpoint),
                                                 **opts, "threshold": threshold}))
    net, _ = fcn.load_checkpoint(args.checkpoint)
    _, x, y = load_split(args.manifest, opts["split"], tuple(int(v) for v in opts["target_size"]))
    if len(x) == 0:
        raise ValueError(f"{args.manifest}: split {opts['split']!r} is empty")
    batches = [slice(i, i + 16) for i in range(0, len(x), 16)]
    with ThreadPoolExecutor(max_workers=max(1, int(opts["jobs"]))) as pool:
        probs = np.concatenate(list(pool.map(lambda s: net.forward(x[s])[0], batches)))
    report = metrics.evaluate(probs, y, threshold)
    text = report.to_json(mode=opts["mode"], threshold=threshold)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_complexity(args):
    h, w = args.input
    report = fcn.complexity(fcn.canonical_network(), h, w)
    print(report.render())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ofx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="JSON config; flags override its values")
        return sp

    sp = add("ingest", cmd_ingest, "resize image/mask pairs to the working resolution")
    sp.add_argument("src")
    sp.add_argument("out")
    sp.add_argument("--target-size", dest="target_size", type=parse_size)

    sp = add("augment", cmd_augment, "build the augmented dataset from an ingested manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", dest="output_dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--visible-light", dest="visible_light_mode", action="store_const", const=True)
    sp.add_argument("--jobs", type=int)

    sp = add("split", cmd_split, "assign train/val/test by source group")
    sp.add_argument("manifest")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ratios", type=_parse_ratios)
    sp.add_argument("-o", "--output")

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        sp = add(name, func, f"{name} the segmentation network")
        sp.add_argument("manifest")
        sp.add_argument("--out", required=True)
        if name == "finetune":
            sp.add_argument("--from", dest="from", required=True, help="checkpoint to start from")
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--epochs", dest="max_epochs", type=int)
        sp.add_argument("--patience", type=int)
        sp.add_argument("--max-steps", dest="max_steps", type=int)
        sp.add_argument("--seed", type=int)

    sp = add("eval", cmd_eval, "threshold network outputs and report metrics")
    sp.add_argument("manifest")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=sorted(metrics.MODE_THRESHOLDS))
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--split")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--out")

    sp = add("complexity", cmd_complexity, "parameter, memory and MAC counts")
    sp.add_argument("--input", type=parse_size, default=imaging.CANONICAL_SHAPE, help="input size HxW")
    return p


def main(argv=None):
    counter = _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        log.error("%s", exc)
        code = 1
    if counter.count:
        print(f"{counter.count} warning(s)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
