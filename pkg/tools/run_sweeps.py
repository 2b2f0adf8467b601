"""Run the desk-scale ablation arms seed by seed into the shared result cache."""
import json
import sys
import time
from pathlib import Path

from tride.harness.ablate import AblationGrid, dataset_id, expand_grid, run_arm
from tride.harness.cli import gen_data
from tride.harness.config import RunConfig
from tride.synth import load_split

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".cache"


def main(seeds=(0, 1, 2, 3, 4)):
    base = RunConfig.load(ROOT / "configs" / "desk.json")
    data = CACHE / "desk_data"
    manifest = data / "manifest.txt"
    if not manifest.exists():
        gen_data(data, {"train": base.data.n_train, "val": base.data.n_val, "test": base.data.n_test},
                 base.gen, 0)
    did = dataset_id(manifest)
    sets = [load_split(manifest, s) for s in ("train", "val", "test")]
    arms = []
    for grid in ("grid_modality.json", "grid_fusion.json"):
        g = AblationGrid.from_dict(json.loads((ROOT / "configs" / grid).read_text()))
        arms += [a for a in expand_grid(g, base) if a not in arms]
    for seed in seeds:
        for arm in arms:
            t0 = time.time()
            run_dir = CACHE / "sweep" / arm.name.replace("|", "_").replace("+", "") / f"seed{seed}"
            m = run_arm(arm.config(base, seed), *sets, run_dir, did, CACHE / "runs")
            print(f"{arm.name} seed {seed}: mae {m['mae_all']:.3f} normal {m['mae_normal']:.3f} "
                  f"adverse {m['mae_adverse']:.3f} acc {m.get('weather_acc')} ({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main(tuple(int(s) for s in sys.argv[1:]) or (0, 1, 2, 3, 4))
