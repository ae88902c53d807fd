"""Command line interface.

Every command prints one JSON record on stdout (and writes it to ``--json``
when given). Failures exit with status 2 and print an error record
``{"error": <type>, "message": <text>, "command": <name>}`` on stderr.
Records never contain timestamps or timings, so reruns with the same
``--seed`` give identical bytes.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, datasets, geometry as geo, pipeline as pipe, qim
from .config import load_settings
from .io_utils import atomic_write_text, dumps_json

log = logging.getLogger("wmsync")


class CliError(Exception):
    """Bad user input; reported as an error record."""


def _emit(record: dict, args) -> None:
    text = dumps_json(record)
    if getattr(args, "json", None):
        atomic_write_text(args.json, text + "\n")
    sys.stdout.write(text + "\n")


def _settings(args):
    settings = load_settings(args.config)
    if getattr(args, "key", None) is not None:
        from dataclasses import replace

        settings = replace(settings, pipeline=replace(settings.pipeline, key=args.key))
    return settings


def _seed_everything(seed: int) -> None:
    import torch

    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _read_payload(args, capacity: int) -> qim.Payload:
    given = [v is not None for v in (args.bits, args.bitfile)]
    if sum(given) > 1:
        raise CliError("give at most one of --bits and --bitfile")
    if args.bits is not None:
        text = args.bits
        if Path(text).is_file():
            text = Path(text).read_text()
        return qim.Payload.from_hex(text.strip(), capacity)
    if args.bitfile is not None:
        payload = qim.Payload.from_bitfile(Path(args.bitfile).read_bytes())
        if len(payload) != capacity:
            raise CliError(f"bit file holds {len(payload)} bits, capacity is {capacity}")
        return payload
    return qim.Payload.random(capacity, seed=args.seed)


def _load_model(path):
    if path is None:
        return None
    if not Path(path).is_file():
        raise CliError(f"model file not found: {path}")
    return checkpoint.load_model(path)


def _rst_record(p: geo.RstParams) -> dict:
    return {k: round(float(v), 10) for k, v in zip(("R", "Sx", "Sy", "Tx", "Ty"), p.as_array())}


# --------------------------------------------------------------------- commands


def cmd_embed(args) -> dict:
    settings = _settings(args)
    cfg = settings.pipeline
    image = datasets.load_image(args.inp)
    if image.ndim == 3:
        image = image[..., :3]
    model = _load_model(args.model)
    if model is not None and args.key is None:
        from dataclasses import replace

        cfg = replace(cfg, key=model.layout_key)
    payload = _read_payload(args, cfg.capacity)
    res = pipe.embed_image(image, payload, model, cfg)
    datasets.save_image(args.out, res.stego_image)
    return {"command": "embed", "input": str(args.inp), "output": str(args.out),
            "key": cfg.key, "payload_hex": payload.to_hex(), "bits": len(payload),
            "psnr": round(res.psnr, 6), "ssim": round(res.ssim, 8), "template": model is not None,
            "shape": list(res.stego_image.shape)}


def _parse_rst(text: str) -> geo.RstParams:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"cannot parse RST parameters {text!r}") from None
    if len(vals) != 5:
        raise CliError("RST parameters are R,Sx,Sy,Tx,Ty")
    return geo.RstParams(*vals)


def cmd_decode(args) -> dict:
    settings = _settings(args)
    cfg = settings.pipeline
    model = _load_model(args.model)
    if model is not None and args.key is None:
        from dataclasses import replace

        cfg = replace(cfg, key=model.layout_key)
    mode = args.recover or ("template" if model is not None else "none")
    gt = _parse_rst(args.gt) if args.gt else None
    if mode == "template" and model is None:
        raise CliError("template recovery needs --model")
    if mode == "gt" and gt is None:
        raise CliError("--recover gt needs --gt R,Sx,Sy,Tx,Ty")
    image = datasets.load_image(args.inp)
    rep = pipe.decode_image(image, model, cfg=cfg, mode=mode, gt=gt)
    rec = {"command": "decode", "input": str(args.inp), "key": cfg.key, "mode": mode,
           "est_rst": _rst_record(rep.est_rst), "payload_hex": rep.payload.to_hex(),
           "bits": len(rep.payload),
           "mean_confidence": round(float(np.mean(rep.per_block_confidence)), 8)}
    if args.truth:
        text = Path(args.truth).read_text().strip() if Path(args.truth).is_file() else args.truth
        truth = qim.Payload.from_hex(text, len(rep.payload))
        from .metrics import ber

        rec["ber"] = ber(rep.payload, truth)
    if args.recovered:
        datasets.save_image(args.recovered, rep.recovered_image)
        rec["recovered"] = str(args.recovered)
    return rec


def cmd_attack(args) -> dict:
    image = datasets.to_gray(datasets.load_image(args.inp))
    if args.random:
        spec = geo.sample_attack(args.seed, args.scale_mode)
    else:
        sx = args.sx if args.sx is not None else args.scale
        sy = args.sy if args.sy is not None else args.scale
        spec = geo.AttackSpec(geo.RstParams(args.rotate, sx, sy, args.tx, args.ty),
                              args.noise, args.jpeg, args.scale_mode)
    out = geo.apply_attack(image, spec, seed=args.seed)
    datasets.save_image(args.out, out)
    return {"command": "attack", "input": str(args.inp), "output": str(args.out), "seed": args.seed,
            "attack": spec.to_record(), "canvas_rst": _rst_record(geo.effective_rst(spec)),
            "shape": list(out.shape)}


def cmd_pretrain(args) -> dict:
    from . import nets, training

    _seed_everything(args.seed)
    settings = _settings(args)
    model = nets.TemplateModel.create(settings.pipeline.key, settings.net, seed=args.seed,
                                      lam=settings.train.lam)
    target = nets.pretrain_target(model.cfg.canvas, seed=args.seed)
    rep = training.pretrain_generator(model, target, budget=args.budget, threshold=args.threshold,
                                      lr=args.lr, seed=args.seed)
    rec = {"command": "pretrain", "seed": args.seed, "key": model.layout_key, "steps": rep.steps,
           "final_mse": rep.final_mse, "status": rep.status, "output": str(args.out)}
    if args.matcher_steps:
        hist = training.pretrain_matcher(model, args.matcher_steps, seed=args.seed, cfg=settings.train)
        rec["matcher_steps"] = args.matcher_steps
        rec["matcher_final_L_d"] = float(np.mean(hist[-50:]))
    checkpoint.save_model(model, args.out)
    return rec


def _load_images(spec: str, n: int, seed: int, size: int) -> np.ndarray:
    if spec.startswith("builtin:"):
        return datasets.builtin_corpus(spec.split(":", 1)[1] or "train", n, seed=seed, size=size)
    paths = datasets.list_images(spec)[:n]
    if not paths:
        raise CliError(f"no images found in {spec}")
    return datasets.load_canvas_set(paths, size=size)


def cmd_train(args) -> dict:
    from dataclasses import replace

    from . import training

    _seed_everything(args.seed)
    settings = _settings(args)
    model = _load_model(args.model)
    if model is None:
        raise CliError("train needs a pretrained --model (see the pretrain command)")
    tcfg = settings.train
    if args.epochs < 0:
        raise CliError("epochs must be nonnegative")
    size = model.cfg.canvas
    images = _load_images(args.images, args.n_images, args.seed, size)
    heldout = _load_images(args.heldout, args.n_heldout, args.seed + 1, size) if args.n_heldout else None
    rec = {"command": "train", "seed": args.seed, "images": args.images, "n_images": len(images),
           "output": str(args.out)}
    if args.extractor_steps:
        hist = training.pretrain_extractor(model, images, args.extractor_steps, seed=args.seed,
                                           cfg=replace(tcfg, lr=args.extractor_lr))
        rec["extractor_steps"] = args.extractor_steps
        rec["extractor_final_L_e"] = float(np.mean(hist[-50:]))
    if args.epochs:
        report = training.train_end_to_end(model, images, args.epochs, seed=args.seed, cfg=tcfg,
                                           heldout=heldout, curve_path=args.curve)
        rec["curve"] = report.curve
    checkpoint.save_model(model, args.out)
    return rec


def cmd_eval(args) -> dict:
    from . import evaluation as ev

    settings = _settings(args)
    if args.manifest:
        manifest = ev.ExperimentManifest.from_ini(args.manifest)
    else:
        manifest = ev.ExperimentManifest(
            images=args.images, n_images=args.n_images, suite=args.suite,
            recovery=tuple(m.strip() for m in args.recovery.split(",")),
            seed=args.seed, key=settings.pipeline.key, output=args.out)
    model = _load_model(args.model)
    if "template" in manifest.recovery and model is None:
        raise CliError("template recovery needs --model (or drop 'template' from --recovery)")
    from dataclasses import replace

    cfg = replace(settings.pipeline, key=manifest.key)
    images = ev.load_manifest_images(manifest)
    tables = ev.run_robustness_suite(manifest, model, cfg, images=images,
                                     progress=lambda msg: log.info(msg))
    record = ev.write_suite_outputs(tables, manifest, args.out)
    if args.quality:
        record["quality"] = ev.quality_report(images, model, cfg, seed=manifest.seed)
        atomic_write_text(Path(args.out) / "results.json", dumps_json(record))
    record["command"] = "eval"
    return record


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmsync", description="Curvelet QIM watermark with a learned "
                                                            "synchronization template.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, key=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="INI file with [layout] [codec] [decode] [net] [train]")
        sp.add_argument("--json", help="also write the result record to this file")
        if key:
            sp.add_argument("--key", type=int, default=None, help="layout key (default: model/config)")

    sp = sub.add_parser("embed", help="embed a payload (and the template) into an image")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--model", help="checkpoint; without it no template is inserted")
    sp.add_argument("--bits", help="payload as hex text or a file holding it (default: random from --seed)")
    sp.add_argument("--bitfile", help="payload as a file of 0/1 characters")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("decode", help="recover the geometry and read the payload")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--model")
    sp.add_argument("--recover", choices=pipe.RECOVERY_MODES)
    sp.add_argument("--gt", help="ground-truth canvas RST as R,Sx,Sy,Tx,Ty (with --recover gt)")
    sp.add_argument("--truth", help="true payload (hex or file) to report BER")
    sp.add_argument("--recovered", help="write the recovered 512x512 image here")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("attack", help="apply RST, Gaussian noise and JPEG to an image")
    common(sp, key=False)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--random", action="store_true", help="sample the attack from --seed")
    sp.add_argument("--rotate", type=float, default=0.0)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--sx", type=float)
    sp.add_argument("--sy", type=float)
    sp.add_argument("--tx", type=float, default=0.0)
    sp.add_argument("--ty", type=float, default=0.0)
    sp.add_argument("--noise", type=float, default=0.0, help="Gaussian noise variance (8-bit units)")
    sp.add_argument("--jpeg", type=int, help="JPEG quality")
    sp.add_argument("--scale-mode", choices=geo.SCALE_MODES, default="resize")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("pretrain", help="create a model and pretrain its generator")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget", type=int, default=600)
    sp.add_argument("--threshold", type=float, default=0.1)
    sp.add_argument("--lr", type=float, default=3e-3)
    sp.add_argument("--matcher-steps", type=int, default=0, help="synthetic matcher warm-up steps")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="end-to-end training of a pretrained model")
    common(sp, key=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--images", default="builtin:train", help="image directory or builtin:train")
    sp.add_argument("--n-images", type=int, default=200)
    sp.add_argument("--heldout", default="builtin:test")
    sp.add_argument("--n-heldout", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--extractor-steps", type=int, default=0, help="L_e warm-up steps before training")
    sp.add_argument("--extractor-lr", type=float, default=1e-3)
    sp.add_argument("--curve", help="loss-curve CSV path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="robustness tables (CSV + Markdown) and quality metrics")
    common(sp)
    sp.add_argument("--suite", default="rst", help="rst, tables, or one suite name")
    sp.add_argument("--model")
    sp.add_argument("--images", default="builtin:test")
    sp.add_argument("--n-images", type=int, default=50)
    sp.add_argument("--recovery", default="template,gt,none")
    sp.add_argument("--manifest", help="INI manifest with an [experiment] section")
    sp.add_argument("--quality", action="store_true", help="also report PSNR/SSIM")
    sp.add_argument("--out", default="results")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        record = args.func(args)
    except (CliError, ValueError, FileNotFoundError, OSError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2
    _emit(record, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
