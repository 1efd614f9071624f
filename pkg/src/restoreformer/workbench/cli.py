"""Command-line entry point: ``restoreformer <command> ...``."""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import degradation as dg
from ..losses import IdentityNet
from ..metrics import evaluate
from ..resample import resize
from ..rng import Rng
from . import train
from .config import CONFIG_DIR, StageConfig
from .imageio import read_image, write_image
from .synthetic import gen_data


def _config(args):
    cfg = StageConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists() and (CONFIG_DIR / f"{args.config}.cfg").exists():
            path = CONFIG_DIR / f"{args.config}.cfg"   # shipped config by name
        cfg = StageConfig.load(path)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "data", None):
        changes["data_dir"] = args.data
    if getattr(args, "stage1", None):
        changes["stage1_checkpoint"] = args.stage1
    if getattr(args, "iterations", None):
        changes["iterations"] = args.iterations
    return cfg.replace(**changes) if changes else cfg


def _inputs(paths):
    files = []
    for p in map(Path, paths):
        files += sorted(q for q in p.iterdir() if q.suffix.lower() in (".ppm", ".png")) if p.is_dir() else [p]
    if not files:
        raise SystemExit("no input images")
    return files


def cmd_gen_data(args):
    names = gen_data(args.out, args.n, args.size, args.seed)
    print(f"wrote {len(names)} images to {args.out}")


def cmd_train_dict(args):
    cfg = _config(args)
    res = train.train_dict(cfg, out_dir=args.out, quantize=not args.autoencoder, progress=print)
    print(f"checkpoint {res.checkpoint}\nloss trace {res.csv}")


def cmd_train_restore(args):
    cfg = _config(args).replace(stage="restore")
    res = train.train_restorer(cfg, out_dir=args.out, progress=print)
    print(f"checkpoint {res.checkpoint}\nloss trace {res.csv}")


def cmd_restore(args):
    cfg, model = train.load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _inputs(args.inputs)
    images = []
    for f in files:
        img = read_image(f)
        if img.shape[:2] != (cfg.image_size, cfg.image_size):
            if not args.resize:
                raise SystemExit(f"{f}: size {img.shape[:2]} != {cfg.image_size} (pass --resize)")
            img = resize(img, cfg.image_size, cfg.image_size)
        images.append(img)
    restored, attn = train.run_model(model, np.stack(images))
    ext = ".png" if args.png else ".ppm"
    for i, (f, img) in enumerate(zip(files, restored)):
        write_image(out / f"{f.stem}_restored{ext}", img)
        if args.dump_attention and attn:
            for tag, m in train.attention_images(attn[i]):
                write_image(out / f"{f.stem}_attn_{tag}.ppm", m)
    print(f"restored {len(files)} images into {out}")


def cmd_eval(args):
    refs = {f.stem: f for f in _inputs([args.reference])}
    outs, tgts, names = [], [], []
    for f in _inputs([args.restored]):
        key = f.stem[:-len("_restored")] if f.stem.endswith("_restored") else f.stem
        if key not in refs:
            continue
        names.append(key)
        outs.append(read_image(f))
        tgts.append(read_image(refs[key]))
    if not names:
        raise SystemExit("no restored/reference pairs matched by name")
    rep = evaluate(names, outs, tgts, IdentityNet(args.stand_in_seed))
    csv = rep.to_csv()
    if args.out:
        Path(args.out).write_text(csv)
    else:
        sys.stdout.write(csv)
    print(rep.summary())


def cmd_degrade(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(_inputs(args.inputs)):
        img = read_image(f)
        if args.spec:
            spec = dg.DegradationSpec.from_text(args.spec)
        else:
            rng = Rng(args.seed, i)
            spec = dg.sample_spec(rng, int(rng.integers(0, 2 ** 31)), min(img.shape[:2]))
        lq, clamped = dg.degrade(img, spec, return_clamped=True)
        write_image(out / f"{f.stem}{f.suffix}", lq)
        print(f"{f.name}\t{spec.to_text()}\tclamped={clamped}")


def build_parser():
    p = argparse.ArgumentParser(prog="restoreformer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write procedural face images and a manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    for name, fn, helptext in (("train-dict", cmd_train_dict, "stage 1: HQ dictionary"),
                               ("train-restore", cmd_train_restore, "stage 2: restoration network")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="config file, or a shipped name such as desk32_dict")
        t.add_argument("--seed", type=int)
        t.add_argument("--data", help="image directory (default: generate in memory)")
        t.add_argument("--iterations", type=int)
        t.add_argument("--out", required=True)
        if name == "train-dict":
            t.add_argument("--autoencoder", action="store_true", help="train without quantisation")
        else:
            t.add_argument("--stage1", help="stage-1 checkpoint (overrides the config)")
        t.set_defaults(func=fn)

    r = sub.add_parser("restore", help="restore images with a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--dump-attention", action="store_true")
    r.add_argument("--resize", action="store_true", help="bilinearly resize inputs to the model size")
    r.add_argument("--png", action="store_true", help="write PNG instead of PPM (needs Pillow)")
    r.set_defaults(func=cmd_restore)

    e = sub.add_parser("eval", help="PSNR/SSIM/IDD/FFD of restored images against references")
    e.add_argument("--restored", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--out", help="CSV report path (default: stdout)")
    e.add_argument("--stand-in-seed", type=int, default=StageConfig.stand_in_seed)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("degrade", help="apply the synthetic degradation")
    d.add_argument("inputs", nargs="+")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--spec", help="fixed spec 'sigma=..,r=..,delta=..,q=..,seed=..'")
    d.set_defaults(func=cmd_degrade)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
