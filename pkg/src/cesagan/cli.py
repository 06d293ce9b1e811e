"""Command-line entry point: train, generate, check, evaluate, export-corpus, render."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bootstrap import CorpusState, Origin, sample_levels
from .config import BadConfig, apply_overrides, load_config
from .evaluation import evaluate_set
from .level import (
    NUM_TILES,
    SYMBOLS,
    LevelError,
    check_uniform,
    load_corpus,
    load_fixtures,
    parse_level,
    read_level,
    serialize_level,
    write_level,
)
from .nets import NetworkParams
from .playability import check_many, failure_histogram
from .training import train

log = logging.getLogger("cesagan")

PALETTE = {
    0: (90, 90, 90),  # wall
    1: (235, 225, 200),  # empty
    2: (240, 200, 30),  # key
    3: (40, 160, 70),  # door
    4: (200, 40, 40),  # enemy1
    5: (220, 110, 30),  # enemy2
    6: (150, 50, 170),  # enemy3
    7: (40, 90, 220),  # avatar
}
GENERATE_CHUNK = 500


class MissingCheckpoint(FileNotFoundError):
    pass


class IoError(OSError):
    pass


def _level_paths(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.txt")))
        elif p.is_file():
            out.append(p)
        else:
            raise IoError(f"no such file or directory: {p}")
    if not out:
        raise IoError("no level files found")
    return out


def _read_levels(paths: list[str]):
    files = _level_paths(paths)
    try:
        return files, [read_level(f) for f in files]
    except LevelError as exc:
        raise IoError(f"malformed level: {exc}") from exc


def _write_json(data, path: Path | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")


def save_corpus(corpus: CorpusState, path: Path) -> None:
    entries = [
        {"level": serialize_level(g), "origin": o.kind, "round": o.round}
        for g, o in zip(corpus.levels, corpus.origins)
    ]
    path.write_text(json.dumps({"levels": entries}, indent=1) + "\n")


def load_saved_corpus(path: Path) -> CorpusState:
    state = CorpusState()
    for e in json.loads(path.read_text())["levels"]:
        state.append(parse_level(e["level"]), Origin(e["origin"], e["round"]))
    return state


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(
        cfg,
        train={"total_iterations": args.iterations, "seed": args.seed, "batch_size": args.batch_size,
               "learning_rate": args.lr, "checkpoint_every": args.checkpoint_every},
        bootstrap={"cadence": args.cadence, "candidates_per_round": args.candidates,
                   "max_corpus_size": args.max_corpus},
        arch={"attention": False, "conditioning": False} if args.ablation else {},
        paths={"corpus_dir": args.corpus, "output_dir": args.out},
        disable_bootstrap=args.no_bootstrap,
    )
    if cfg.paths.corpus_dir:
        corpus = load_corpus(cfg.paths.corpus_dir)
        if not corpus:
            raise IoError(f"no *.txt levels in {cfg.paths.corpus_dir}")
    else:
        corpus = load_fixtures()
    h, w = check_uniform(corpus)
    cfg.arch = replace(cfg.arch, height=h, width=w)

    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(cfg.dumps())
    result = train(
        corpus, cfg.train, cfg.bootstrap, cfg.arch,
        log_path=out / "train_log.jsonl", checkpoint_dir=out / "checkpoints",
    )
    final = out / "final.ckpt"
    result.params.save(final, {"iteration": cfg.train.total_iterations})
    save_corpus(result.corpus, out / "corpus.json")
    last = result.log.iterations()[-1]
    _write_json({"checkpoint": str(final), "corpus_size": len(result.corpus), "last": last}, None)
    return 0


def _load_checkpoint(path) -> NetworkParams:
    if path is None or not Path(path).is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    return NetworkParams.load(path)


def _parse_u(text: str | None):
    if text is None:
        return None
    try:
        u = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise BadConfig(f"--u must be {NUM_TILES} comma-separated integers") from exc
    if len(u) != NUM_TILES or min(u) < 0:
        raise BadConfig(f"--u must be {NUM_TILES} non-negative integers (order {SYMBOLS})")
    return np.array(u, dtype=np.int64)


def cmd_generate(args) -> int:
    params = _load_checkpoint(args.checkpoint)
    u = _parse_u(args.u)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    width = max(5, len(str(args.n - 1)))
    written = 0
    while written < args.n:
        chunk = sample_levels(params, min(GENERATE_CHUNK, args.n - written), rng, u=u)
        for g in chunk:
            write_level(g, out / f"level_{args.seed}_{written:0{width}d}.txt")
            written += 1
    _write_json({"written": written, "directory": str(out)}, None)
    return 0


def cmd_check(args) -> int:
    files, levels = _read_levels(args.paths)
    reports = check_many(levels, workers=args.workers)
    result = {
        "levels": [{"path": str(f), **r.as_dict()} for f, r in zip(files, reports)],
        "summary": {
            "n": len(levels),
            "playable": sum(r.playable for r in reports),
            "failed": failure_histogram(reports),
        },
    }
    _write_json(result, Path(args.out) if args.out else None)
    return 0


def cmd_evaluate(args) -> int:
    _, levels = _read_levels(args.paths)
    reference = _read_levels([args.reference])[1] if args.reference else None
    report = evaluate_set(levels, reference, workers=args.workers).as_dict()
    _write_json(report, Path(args.out) if args.out else None)
    if args.csv_dir:
        csv_dir = Path(args.csv_dir)
        csv_dir.mkdir(parents=True, exist_ok=True)
        for name, dist in report["tile_distributions"].items():
            with open(csv_dir / f"tiles_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["count", "levels"])
                for k, v in sorted(((dist or {}).get("histogram") or {}).items(), key=lambda kv: int(kv[0])):
                    writer.writerow([k, v])
    return 0


def cmd_export_corpus(args) -> int:
    src = Path(args.run_dir) / "corpus.json"
    if not src.is_file():
        raise IoError(f"no corpus.json in {args.run_dir}")
    corpus = load_saved_corpus(src)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, (g, o) in enumerate(zip(corpus.levels, corpus.origins)):
        name = f"corpus_{i:04d}.txt"
        write_level(g, out / name)
        manifest.append({"file": name, "origin": o.kind, "round": o.round})
    _write_json({"levels": manifest}, out / "manifest.json")
    _write_json({"written": len(manifest), "directory": str(out)}, None)
    return 0


def render_png(grid, path: Path, scale: int = 16) -> None:
    from PIL import Image

    lut = np.array([PALETTE[i] for i in range(NUM_TILES)], dtype=np.uint8)
    img = lut[grid.cells].repeat(scale, axis=0).repeat(scale, axis=1)
    Image.fromarray(img, "RGB").save(path)


def cmd_render(args) -> int:
    try:
        grid = read_level(args.path)
    except (OSError, LevelError) as exc:
        raise IoError(str(exc)) from exc
    if args.png:
        render_png(grid, Path(args.png), args.scale)
    else:
        print(serialize_level(grid))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cesagan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a generator/discriminator pair")
    t.add_argument("--config")
    t.add_argument("--corpus", help="directory of *.txt levels (default: bundled fixtures)")
    t.add_argument("--out", help="output directory")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--cadence", type=int, help="iterations between bootstrap rounds")
    t.add_argument("--candidates", type=int, help="candidates generated per bootstrap round")
    t.add_argument("--max-corpus", type=int)
    t.add_argument("--no-bootstrap", action="store_true")
    t.add_argument("--ablation", action="store_true", help="disable attention and conditioning")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample levels from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("-n", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--u", help=f"fixed feature vector: {NUM_TILES} comma-separated counts ({SYMBOLS})")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("check", help="playability report for level files")
    c.add_argument("paths", nargs="+")
    c.add_argument("--out")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("evaluate", help="playability/duplication/diversity metrics")
    e.add_argument("paths", nargs="+")
    e.add_argument("--reference", help="directory of levels counted as duplicates if regenerated")
    e.add_argument("--out", help="write eval.json here instead of stdout")
    e.add_argument("--csv-dir", help="also write tile histograms as CSV")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-corpus", help="write a run's training corpus as level files")
    x.add_argument("--run-dir", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_corpus)

    r = sub.add_parser("render", help="print a level or render it to PNG")
    r.add_argument("path")
    r.add_argument("--png")
    r.add_argument("--scale", type=int, default=16)
    r.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (BadConfig, MissingCheckpoint, IoError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except (OSError, LevelError, ValueError) as exc:
        kind = "IoError" if isinstance(exc, OSError) else "BadConfig"
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
