"""Command-line front end: filter, attack, ablate, evaluate, sweep.

Exit codes: 0 on success, 1 for usage/config errors, 2 for runtime failures
and invariant violations.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .ablation import generate_ablations
from .adversary import patch_side, train_lavan
from .classifier import ReferenceClassifier, generate_synthetic, train_reference
from .config import KEYS, ConfigError, RunConfig, format_config, parse_config
from .evaluation import InvariantViolation, defend, evaluate_image, run_sweep, summarize, write_report
from .filters import classic_vmf, smart_vmf
from .raster import RasterFormatError, encode_ppm, read_attention, read_image, write_image

log = logging.getLogger("smartvmf")

COMMANDS = ("filter", "attack", "ablate", "evaluate", "sweep")


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartvmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    positional = {
        "filter": [("input", "input image (PPM/PGM/PNG)"), ("output", "output PPM/PGM")],
        "attack": [("input", "input image"), ("output_dir", "directory for patch artifacts")],
        "ablate": [("input", "input image")],
        "evaluate": [("input", "input image")],
        "sweep": [],
    }
    for name in COMMANDS:
        p = sub.add_parser(name)
        for arg, help_text in positional[name]:
            p.add_argument(arg, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in KEYS:
            flags = [f"--{key.name.replace('_', '-')}"]
            if "_" in key.name:
                flags.append(f"--{key.name}")
            if key.name == "target_class":
                flags.append("--target")
            p.add_argument(*flags, dest=f"opt_{key.name}", default=None, metavar="VALUE", help=key.help)
        if name == "ablate":
            p.add_argument("--dump-ablations", dest="dump_ablations", metavar="DIR", help="write members as numbered PPMs")
        if name == "sweep":
            p.add_argument("--out", help="CSV report path (default: stdout)")
    return parser


def resolve(args) -> RunConfig:
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for key in KEYS:
        val = getattr(args, f"opt_{key.name}")
        if val is not None:
            overrides[key.name] = val
    inputs = [getattr(args, a) for a in ("input", "output", "output_dir") if getattr(args, a, None)]
    return parse_config(text, overrides, args.command, inputs)


def _check_input(path):
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _check_output_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")


def _dump_dir(cfg, override=None):
    path = override or cfg["dump"]
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _load_model(cfg, shape):
    if cfg["model"]:
        if not os.path.isfile(cfg["model"]):
            raise UsageError(f"model file not found: {cfg['model']}")
        return ReferenceClassifier.load(cfg["model"])
    h, w, c = shape
    data = generate_synthetic(cfg["seed"], cfg["classes"], cfg["per_class"], h, w, c)
    return train_reference(data, cfg["epochs"], cfg["lr"], cfg["pool_factor"])


def _write(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


def cmd_filter(cfg, args):
    _check_input(args.input)
    _check_output_parent(args.output)
    img = read_image(args.input)
    if cfg["filter_method"] == "classic":
        out = classic_vmf(img, cfg["vmf_side"])
        weights = None
    else:
        attention = read_attention(cfg["attention"], img.shape[:2]) if cfg["attention"] else None
        out, weights = smart_vmf(img, attention, cfg.filter_config(), return_fusion_weights=True)
    write_image(args.output, out)
    dump = _dump_dir(cfg)
    if dump and weights is not None:
        for side, pi in zip(cfg.filter_config().scales, weights):
            _write(os.path.join(dump, f"fusion_weight_s{side}.pgm"), encode_ppm(pi[:, :, None]))
    return 0


def cmd_attack(cfg, args):
    _check_input(args.input)
    img = read_image(args.input)
    attack = cfg.attack_config()
    model = _load_model(cfg, img.shape)
    os.makedirs(args.output_dir, exist_ok=True)
    result = train_lavan(img, model, attack, seed=cfg["seed"])
    _write(os.path.join(args.output_dir, "attacked.ppm"), encode_ppm(result.adversarial))
    for i, patch in enumerate(result.patches):
        _write(os.path.join(args.output_dir, f"patch_{i}.ppm"), encode_ppm(patch))
    manifest = [
        f"success={'true' if result.success else 'false'}",
        f"source_class={result.source_class}",
        f"target_class={result.target_class}",
        f"iterations={result.iterations}",
        f"final_target_prob={result.trace[-1].target_prob!r}",
        f"side={result.side}",
        "placements=" + ";".join(f"{r},{c}" for r, c in result.placements),
    ]
    with open(os.path.join(args.output_dir, "patch.manifest"), "w", newline="\n") as fh:
        fh.write("\n".join(manifest) + "\n# resolved configuration\n" + format_config(cfg))
    with open(os.path.join(args.output_dir, "trace.csv"), "w", newline="\n") as fh:
        fh.write(result.trace_csv())
    dump = _dump_dir(cfg)
    if dump:
        _write(os.path.join(dump, "mask.pgm"), encode_ppm(result.mask.data[:, :, None]))
    print(f"success={'true' if result.success else 'false'} iterations={result.iterations}")
    return 0


def cmd_ablate(cfg, args):
    _check_input(args.input)
    img = read_image(args.input)
    m = patch_side(cfg["area_fraction"], *img.shape[:2])
    aset = generate_ablations(img, cfg.ablation_spec(), patch_size=m)
    dump = _dump_dir(cfg, args.dump_ablations)
    if dump:
        width = len(str(aset.n - 1))
        for i, member in enumerate(aset.images):
            _write(os.path.join(dump, f"ablation_{i:0{width}d}.ppm"), encode_ppm(member))
    print(f"kind={aset.spec.kind} size={aset.size} n={aset.n} delta={aset.delta!r}")
    return 0


def cmd_evaluate(cfg, args):
    _check_input(args.input)
    if cfg["label"] is None:
        raise UsageError("evaluate requires --label CLASS")
    img = read_image(args.input)
    model = _load_model(cfg, img.shape)
    if not 0 <= cfg["label"] < model.num_classes:
        raise UsageError(f"label must be in 0..{model.num_classes - 1}")
    rec = evaluate_image(model, img, cfg["label"], cfg["defense"], cfg.ablation_spec(), filter_cfg=cfg.filter_config(), vmf_side=cfg["vmf_side"])
    dump = _dump_dir(cfg)
    if dump and cfg["defense"] != "none":
        defended = defend(img, cfg["defense"], cfg.filter_config(), cfg["vmf_side"])
        for i, member in enumerate(generate_ablations(defended, cfg.ablation_spec()).images):
            _write(os.path.join(dump, f"ablation_{i:03d}.ppm"), encode_ppm(member))
    print(f"clean={rec.clean!r}")
    print(f"robust={'true' if rec.robust else 'false'}")
    print("vote=" + ",".join(str(int(v)) for v in rec.vote.counts))
    print(f"n_ablations={rec.n_ablations}")
    print(f"delta={rec.delta!r}")
    return 0


def cmd_sweep(cfg, args):
    if args.out:
        _check_output_parent(args.out)
    h, w = cfg["height"], cfg["width"]
    data = generate_synthetic(cfg["seed"], cfg["classes"], cfg["per_class"], h, w)
    model = _load_model(cfg, data.images.shape[1:]) if cfg["model"] else train_reference(
        data, cfg["epochs"], cfg["lr"], cfg["pool_factor"]
    )
    dump_dir = _dump_dir(cfg)

    def dump(idx, attack, defense, stage, image):
        name = f"img{idx:03d}_a{attack[0]}x{attack[1]}_{defense or 'input'}_{stage}.ppm"
        _write(os.path.join(dump_dir, name), encode_ppm(image))

    records = run_sweep(
        data.images,
        data.labels,
        model,
        defenses=cfg.defense_list(),
        attacks=cfg.attack_grid(),
        spec=cfg.ablation_spec(),
        seed=cfg["seed"],
        filter_cfg=cfg.filter_config(),
        attack_cfg=cfg.attack_config(),
        dump=dump if dump_dir else None,
        vmf_side=cfg["vmf_side"],
    )
    report = write_report(records)
    if args.out:
        _write(args.out, report)
    else:
        sys.stdout.buffer.write(report)
        sys.stdout.flush()
    for (n, pct, defense), (clean, robust) in summarize(records).items():
        log.info("attack %dx%d%% %-13s clean=%.3f robust=%.3f", n, pct, defense, clean, robust)
    return 0


HANDLERS = {
    "filter": cmd_filter,
    "attack": cmd_attack,
    "ablate": cmd_ablate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stderr.write("# resolved configuration\n" + format_config(cfg))
    try:
        return HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, RasterFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
