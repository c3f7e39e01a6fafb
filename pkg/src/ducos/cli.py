"""Command line: ducos {gen, train, eval, export-prompts}.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .data import REGIMES, degrade, gen_scene, load_scene, make_dataset, save_scene
from .io import CorruptFileError, IncompatibleFileError
from .metrics import eval_run, threads_from_env, write_report_csv
from .network import DuCosModel, load_model
from .prompts import export_prompts
from .trainer import NumericAbort, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCENE_MANIFEST = "manifest.json"

log = logging.getLogger("ducos")


class DataError(Exception):
    pass


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    return h, w


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_regimes(text: str) -> list[str]:
    out = [v.strip() for v in text.split(",") if v.strip()]
    bad = [r for r in out if r not in REGIMES]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"regimes must be drawn from {REGIMES}, got {text!r}")
    return out


# ----------------------------------------------------------------------- scenes
def load_scene_dir(path) -> list[tuple[str, object]]:
    """(name, Scene) pairs from a ``gen`` directory, checksums verified."""
    path = Path(path)
    try:
        manifest = json.loads((path / SCENE_MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read scene manifest in {path}: {exc}") from None
    out = []
    for entry in manifest["scenes"]:
        f = path / entry["file"]
        if not f.exists():
            raise DataError(f"missing scene file {f}")
        if sha256(f) != entry["sha256"]:
            raise DataError(f"checksum mismatch for {f}")
        out.append((Path(entry["file"]).stem, load_scene(f)))
    return out


def _scenes(cfg_data) -> list[tuple[str, object]]:
    if cfg_data.scenes:
        return load_scene_dir(cfg_data.scenes)
    H, W = cfg_data.size
    return [(f"scene_{i:04d}", s) for i, s in enumerate(make_dataset(cfg_data.n, H, W, cfg_data.seed, cfg_data.edge_rich))]


def _prompt_lookup(prompt_dir):
    if not prompt_dir:
        return lambda name: None
    prompt_dir = Path(prompt_dir)

    def lookup(name):
        f = prompt_dir / f"{name}.dpf"
        return f if f.exists() else None

    return lookup


# --------------------------------------------------------------------- commands
def cmd_gen(args) -> int:
    H, W = args.size
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.n)
    entries = []
    for i, s in enumerate(seeds):
        name = f"scene_{i:04d}.dsc"
        save_scene(out / name, gen_scene(None, H, W, int(s), args.edge_rich))
        entries.append({"file": name, "seed": int(s), "sha256": sha256(out / name)})
    manifest = {"n": args.n, "size": [H, W], "seed": args.seed, "edge_rich": args.edge_rich, "scenes": entries}
    (out / SCENE_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.n} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.out = args.out
    named_scenes = _scenes(cfg.data)
    lookup = _prompt_lookup(cfg.data.prompts)
    pairs = [
        degrade(scene, cfg.data.scale, cfg.data.regime, cfg.data.seed + i, lookup(name))
        for i, (name, scene) in enumerate(named_scenes)
    ]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    model = DuCosModel(cfg.model, seed=cfg.train.seed)
    result = train(model, pairs, cfg.train, out, cfg.to_dict())
    last = result.history[-1]
    print(f"trained {cfg.train.epochs} epochs: l_rec={last['l_rec']:.6g} lambda={last['lambda']:.6g} mu={last['mu']:.6g}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = load_model(args.ckpt)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.ckpt}") from None
    for s in args.scales:
        if s <= 1:
            raise ConfigError(f"scales must exceed 1, got {s}")
    if args.data:
        named_scenes = load_scene_dir(args.data)
    else:
        H, W = args.size
        named_scenes = [(f"scene_{i:04d}", s) for i, s in enumerate(make_dataset(args.n, H, W, args.seed, args.edge_rich))]
    lookup = _prompt_lookup(args.prompts)
    names = [n for n, _ in named_scenes]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = eval_run(
        model,
        [s for _, s in named_scenes],
        args.scales,
        args.regimes,
        args.seed,
        prompts=(lambda i, scene: lookup(names[i])) if args.prompts else None,
        error_map_dir=out / "error_maps" if args.error_maps else None,
        threads=threads_from_env(),
    )
    write_report_csv(reports, out / "metrics.csv")
    print(f"{'scale':>6} {'regime':>6} {'rmse':>10} {'mae':>10} {'d1.25':>7} {'d1.05':>7}")
    for r in reports:
        print(f"{r.scale:>6g} {r.regime:>6} {r.rmse:>10.5f} {r.mae:>10.5f} {r.delta[1.25]:>7.2f} {r.delta[1.05]:>7.2f}")
    return EXIT_OK


def cmd_export_prompts(args) -> int:
    try:
        written = export_prompts(args.raw, args.out)
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed prompt manifest: {exc}") from None
    print(f"exported {len(written)} prompt files to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------------ entry
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ducos", description="Prompt-guided depth super-resolution toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic RGB-D scenes")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--size", type=parse_size, default=(64, 64))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--edge-rich", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override the config's output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint over a scale/regime grid")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scales", type=parse_floats, default=[2.0, 4.0, 8.0, 16.0])
    e.add_argument("--regimes", type=parse_regimes, default=["clean"])
    e.add_argument("--data", help="scene directory from 'ducos gen'")
    e.add_argument("--prompts", help="directory of <scene>.dpf prompt files")
    e.add_argument("--n", type=int, default=8)
    e.add_argument("--size", type=parse_size, default=(64, 64))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--edge-rich", action="store_true")
    e.add_argument("--out", default="eval")
    e.add_argument("--error-maps", action="store_true")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-prompts", help="convert raw prompt arrays into DPF files")
    x.add_argument("--raw", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_prompts)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericAbort, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorruptFileError, IncompatibleFileError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
