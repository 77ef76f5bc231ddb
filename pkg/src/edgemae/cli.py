"""Command-line entry point: gen-data | pretrain | finetune | synth | eval | impute | grad-check."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError
from .config import ConfigError, EdgeMaeConfig, MtNetConfig, apply_overrides, config_dict, read_kv
from .ntf import FormatError, read_ntf, write_ntf, write_pgm
from .phantom import DatasetManifest, generate_dataset, split_dataset

log = logging.getLogger("edgemae")

AUGMENT_HELP = ("per-sample brightness/contrast jitter on the source image (on|off, default on); "
                "sharpness jitter is not implemented")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _onoff(text: str) -> bool:
    low = text.lower()
    if low in ("on", "1", "true", "yes"):
        return True
    if low in ("off", "0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgemae", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="file of 'key = value' lines; flags override it")
        sp.add_argument("--threads", type=int, default=1, help="intra-op threads (default 1, deterministic)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen-data", help="write a synthetic paired phantom dataset")
    common(g)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-train", type=int, default=256)
    g.add_argument("--n-test", type=int, default=64)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--paired-ratio", type=float, default=1.0)

    pt = sub.add_parser("pretrain", help="self-supervised Edge-MAE pretraining on all train images")
    common(pt)
    pt.add_argument("--data", type=Path, required=True)
    pt.add_argument("--out", type=Path, required=True)
    pt.add_argument("--mask-ratio", type=float, default=0.70)
    pt.add_argument("--epochs", type=int, default=60)
    pt.add_argument("--stage-switch-epoch", type=int, default=None, help="default: epochs // 2")
    pt.add_argument("--lr", type=float, default=5e-4)
    pt.add_argument("--batch", type=int, default=16)

    ft = sub.add_parser("finetune", help="train MT-Net on paired images with a pretrained encoder")
    common(ft)
    ft.add_argument("--data", type=Path, required=True)
    ft.add_argument("--encoder", type=Path, required=True, help="Edge-MAE checkpoint directory")
    ft.add_argument("--out", type=Path, required=True)
    ft.add_argument("--direction", choices=("A2B", "B2A"), default="A2B")
    ft.add_argument("--paired-ratio", type=float, default=1.0)
    ft.add_argument("--freeze-layers", type=int, default=None, help="default: encoder layers // 2")
    ft.add_argument("--epochs", type=int, default=40)
    ft.add_argument("--lr", type=float, default=3e-4)
    ft.add_argument("--batch", type=int, default=8)
    ft.add_argument("--augment", type=_onoff, default=True, help=AUGMENT_HELP)

    sy = sub.add_parser("synth", help="synthesize the target modality for one NTF1 image")
    common(sy, seed=False)
    sy.add_argument("--model", type=Path, required=True)
    sy.add_argument("--input", type=Path, required=True)
    sy.add_argument("--out", type=Path, required=True)
    sy.add_argument("--pgm", type=Path)

    ev = sub.add_parser("eval", help="score the test split and write a CSV report")
    common(ev, seed=False)
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--direction", choices=("A2B", "B2A"), default=None,
                    help="default: the direction the model was trained for")
    ev.add_argument("--edge", choices=("sobel", "prewitt"), default=None,
                    help="also score edge maps of synthesized vs true images")

    im = sub.add_parser("impute", help="masked input / imputation / edge estimate panel as PGM files")
    common(im)
    im.add_argument("--encoder", type=Path, required=True, help="Edge-MAE checkpoint directory")
    im.add_argument("--input", type=Path, required=True, help="NTF1 image")
    im.add_argument("--out-dir", type=Path, required=True)
    im.add_argument("--mask-ratio", type=float, default=None, help="default: the checkpoint's ratio")

    gc = sub.add_parser("grad-check", help="finite-difference check of every analytic gradient")
    common(gc)
    gc.add_argument("--micro", action="store_true", help="micro configuration (the only supported one)")
    return p


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "edgemae: error: a subcommand is required")
    if getattr(args, "config", None):
        sp = parser._subparsers._group_actions[0].choices[args.command]
        file_values = read_kv(args.config)
        dests = {a.dest: a for a in sp._actions}
        arch = _arch_fields(args.command)
        defaults, extra = {}, {}
        for key, raw in file_values.items():
            dest = key.replace("-", "_")
            if dest in dests and dest not in ("config", "help"):
                action = dests[dest]
                defaults[dest] = action.type(raw) if action.type else raw
            elif dest in arch:
                extra[dest] = raw
            else:
                raise ConfigError(f"{args.config}: unknown key {key!r} for {args.command}")
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
        args.arch_overrides = extra
    else:
        args.arch_overrides = {}
    return args


def _arch_fields(command: str) -> set[str]:
    if command == "pretrain":
        return {f.name for f in fields(EdgeMaeConfig)}
    if command == "finetune":
        return {f.name for f in fields(MtNetConfig)}
    if command == "gen-data":
        return {"patch_size"}
    return set()


def cmd_gen_data(args) -> int:
    patch = int(args.arch_overrides.get("patch_size", 8))
    manifest = generate_dataset(args.seed, args.n_train, args.n_test, args.size, args.out, patch)
    if args.paired_ratio != 1.0:
        split_dataset(manifest, args.paired_ratio).write()
    print(f"wrote {len(manifest.entries)} images for {len(manifest.ids())} ids to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .train import PretrainData, pretrain_run

    cfg = apply_overrides(EdgeMaeConfig(), args.arch_overrides)
    switch = args.stage_switch_epoch if args.stage_switch_epoch is not None else args.epochs // 2
    cfg = apply_overrides(cfg, {"mask_ratio": args.mask_ratio, "epochs": args.epochs,
                                "stage_switch_epoch": switch, "lr": args.lr, "batch_size": args.batch})
    log.info("resolved pretrain config: %s", config_dict(cfg))
    data = PretrainData.from_manifest(DatasetManifest.read(args.data))
    if data.images.shape[-1] != cfg.image_size:
        raise ConfigError(f"dataset images are {data.images.shape[-1]}px but image_size is {cfg.image_size}")
    pretrain_run(cfg, data, args.seed, args.out)
    print(f"saved Edge-MAE checkpoint to {args.out}")
    return 0


def cmd_finetune(args) -> int:
    from .train import finetune_run, load_edge_mae, paired_arrays

    cfg = apply_overrides(MtNetConfig(), args.arch_overrides)
    cfg = apply_overrides(cfg, {"direction": args.direction, "paired_ratio": args.paired_ratio,
                                "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch,
                                "augment": args.augment})
    if args.freeze_layers is not None:
        cfg = apply_overrides(cfg, {"freeze_layers": args.freeze_layers})
    enc = load_edge_mae(args.encoder)
    cfg.resolved_freeze(enc.cfg)
    log.info("resolved finetune config: %s", config_dict(cfg))
    manifest = split_dataset(DatasetManifest.read(args.data), cfg.paired_ratio)
    ids, src, tgt = paired_arrays(manifest, cfg.direction)
    log.info("fine-tuning on %d paired ids", len(ids))
    finetune_run(cfg, enc, src, tgt, args.seed, args.out)
    print(f"saved MT-Net checkpoint to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .train import load_synthesizer, synthesize

    synth = load_synthesizer(args.model)
    img = read_ntf(args.input)
    out = synthesize(synth, img[None])[0]
    write_ntf(args.out, out)
    if args.pgm:
        write_pgm(args.pgm, out)
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import read_checkpoint_config
    from .train import evaluate_set, load_synthesizer

    _, _, mt_cfg, _ = read_checkpoint_config(args.model)
    direction = args.direction or (mt_cfg.direction if mt_cfg else "A2B")
    synth = load_synthesizer(args.model)
    report, failed = evaluate_set(synth, DatasetManifest.read(args.data), direction, args.edge)
    args.out.write_text(report.to_csv(), encoding="utf-8")
    log.info("%s", report.summary())
    print(report.summary())
    if failed:
        log.error("%d test ids could not be evaluated: %s", len(failed), failed)
        return 1
    return 0


def cmd_impute(args) -> int:
    from .patches import sample_mask
    from .rng import Rng
    from .train import load_edge_mae

    model = load_edge_mae(args.encoder).eval()
    cfg = model.cfg
    ratio = args.mask_ratio if args.mask_ratio is not None else cfg.mask_ratio
    img = read_ntf(args.input)
    if img.shape != (cfg.image_size, cfg.image_size):
        raise ConfigError(f"input is {img.shape}, model expects {cfg.image_size}x{cfg.image_size}")
    plan = sample_mask(cfg.grid, cfg.grid, ratio, Rng(args.seed))
    mask = torch.from_numpy(plan.mask.astype(bool)).reshape(1, -1)
    with torch.no_grad():
        imputed, edges = model(torch.from_numpy(img)[None, None], mask)
    pix_mask = np.kron(plan.mask, np.ones((cfg.patch_size, cfg.patch_size), dtype=np.uint8)).astype(bool)
    masked = np.where(pix_mask, 0.0, img).astype(np.float32)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    panel = {"masked": masked, "imputed": imputed[0, 0].numpy(), "edges": edges[0, 0].numpy()}
    for name, arr in panel.items():
        write_pgm(out / f"{name}.pgm", arr)
        write_ntf(out / f"{name}.ntf", arr)
    write_ntf(out / "mask.ntf", plan.mask.astype(np.float32))
    print(f"wrote masked/imputed/edges panel to {out}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_grad_check

    if not args.micro:
        raise UsageError("grad-check only supports --micro")
    torch.set_num_threads(max(1, args.threads))
    reports = run_grad_check(seed=args.seed)
    offenders = []
    for r in reports:
        print("\n".join(r.lines()))
        offenders += [f"{r.label}: {name}" for name in r.offenders]
    worst = max(r.max_rel_err for r in reports)
    print(f"max relative error {worst:.3e} (tolerance {reports[0].tolerance:.0e})")
    if offenders:
        print("FAILED tensors:\n  " + "\n  ".join(offenders))
        return 2
    print("grad-check PASSED")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "synth": cmd_synth,
    "eval": cmd_eval, "impute": cmd_impute, "grad-check": cmd_grad_check,
}


def run_cli(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, OSError) as exc:
        print(f"edgemae: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command not in ("gen-data", "grad-check"):
        from .train import set_deterministic
        set_deterministic(args.threads)
    log.info("command %s args %s", args.command,
             {k: str(v) for k, v in vars(args).items() if k != "command"})
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, CheckpointError, FormatError, FileNotFoundError) as exc:
        print(f"edgemae: error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
