"""``tride`` command line: gen-data, train, eval, ablate, gradcheck."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import ContractError, TrideError
from ..metrics import CAPS, SUBSETS
from ..synth import GenParams, generate_scene, load_split, save_scene, write_manifest
from .config import RunConfig

EXIT_OK, EXIT_CONTRACT, EXIT_GRADCHECK = 0, 1, 2
SPLITS = ("train", "val", "test")


def scene_seed(seed: int, split: str, index: int) -> int:
    """Independent per-scene seed derived from the run seed, the split and the index."""
    state = np.random.SeedSequence([seed, SPLITS.index(split), index]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def gen_data(out_dir, counts: dict, params: GenParams, seed: int) -> Path:
    """Write scene files and ``manifest.txt``; returns the manifest path."""
    if any(int(n) <= 0 for n in counts.values()):
        raise ContractError(f"empty split: {', '.join(k for k, n in counts.items() if int(n) <= 0)}")
    params.validate()
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    entries = []
    for split, n in counts.items():
        for i in range(int(n)):
            rel = f"scenes/{split}_{i:05d}.scn"
            save_scene(generate_scene(scene_seed(seed, split, i), params), out / rel)
            entries.append((rel, split))
    manifest = out / "manifest.txt"
    write_manifest(manifest, entries)
    return manifest


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ContractError(f"expected comma-separated numbers, got {text!r}") from None


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    return cfg.replace(**overrides) if overrides else cfg


def _split(manifest, split: str):
    samples = load_split(manifest, split)
    if not samples:
        raise ContractError(f"manifest {manifest} has no {split!r} scenes")
    return samples


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    gen = cfg.gen
    if args.weather_mix:
        mix = tuple(_floats(args.weather_mix))
        gen = GenParams(**{**gen.__dict__, "weather_mix": mix})
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}
    for split in SPLITS:
        value = getattr(args, f"n_{split}")
        if value is not None:
            counts[split] = value
    manifest = gen_data(args.out or cfg.out_dir, counts, gen, cfg.seed)
    print(f"wrote {sum(counts.values())} scenes, manifest {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train
    cfg = _load_config(args)
    train_set = _split(args.data, "train")
    val_set = load_split(args.data, "val")

    def progress(row):
        print(f"step {row['step']:6d} lr {row['lr']:.2e} loss {row['loss_total']:.4f} "
              f"(depth {row['loss_depth']:.4f}, cls {row['loss_cls']:.4f})", flush=True)

    result = train(cfg, train_set, val_set, resume=args.resume, out_dir=cfg.out_dir, progress=progress)
    print(f"trained {result.steps_done} steps in {result.elapsed_s:.1f}s; checkpoints in {result.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .train import load_model
    samples = _split(args.data, args.split)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    model = None
    if not args.oracle:
        if not args.checkpoint:
            raise ContractError("eval needs --checkpoint (or --oracle)")
        model, _, _ = load_model(args.checkpoint)
    caps = _floats(args.caps)
    subsets = [s.strip() for s in args.subsets.split(",") if s.strip()]
    reports, acc = evaluate(model, samples, caps, subsets, out / "metrics.csv", oracle=args.oracle,
                            sparse_csv=out / "metrics_sparse.csv")
    for r in reports:
        print(f"{r.subset:>7s} cap {r.cap:4.0f}  n {r.n_pixels:8d}  mae {r.mae:.4f}  rmse {r.rmse:.4f}  d1 {r.d1:.4f}")
    if acc is not None:
        print(f"weather top-1 accuracy {acc:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablate import AblationGrid, ablate, dataset_id
    cfg = _load_config(args)
    grid = AblationGrid.from_dict(json.loads(Path(args.grid).read_text(encoding="utf-8")))
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ContractError("no seeds given")
    train_set = _split(args.data, "train")
    val_set = load_split(args.data, "val")
    test_set = _split(args.data, "test")

    def progress(arm, seed, metrics, error):
        status = f"mae {metrics['mae_all']:.4f}" if metrics else f"FAILED\n{error}"
        print(f"{arm} seed {seed}: {status}", flush=True)

    data_id = dataset_id(args.data)
    ablate(grid, cfg, seeds, train_set, val_set, test_set, cfg.out_dir, data_id=data_id,
           cache_dir=args.cache, progress=progress)
    print(f"wrote {Path(cfg.out_dir) / 'ablation.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import SCOPES, format_report, run_suite
    scopes = SCOPES if args.scope == "all" else (args.scope,)
    results = []
    for scope in scopes:
        results.extend(run_suite(scope, seed=args.seed or 0))
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tride", description="Image/radar/text depth estimation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", type=Path, help="run config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        if out:
            p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    for split in SPLITS:
        p.add_argument(f"--n-{split}", type=int, dest=f"n_{split}")
    p.add_argument("--weather-mix", help="normal,rainy,night weights, e.g. 0.7,0.15,0.15")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset manifest")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--caps", default=",".join(f"{c:g}" for c in CAPS))
    p.add_argument("--subsets", default=",".join(SUBSETS))
    p.add_argument("--oracle", action="store_true", help="score ground truth as the prediction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    common(p)
    p.add_argument("--grid", type=Path, required=True, help="grid JSON")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--cache", type=Path, help="directory memoising finished runs")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=("primitives", "blocks", "model", "all"), default="primitives")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
