"""Train a small image+radar+text model for a few hundred steps and print its metric table."""
import time

from tride.harness import RunConfig, evaluate, train
from tride.harness.evaluate import find_report
from tride.synth import GenParams, generate_scene

config = RunConfig.from_dict({
    "model": {"modalities": "I+R+T", "fusion": "wafb", "c": 4, "c_t": 32, "c_r": 64, "embed_dim": 128},
    "optim": {"base_lr": 2e-3, "steps": 300, "batch_size": 4},
    "log_every": 50,
})
params = GenParams()
train_set = [generate_scene(i, params) for i in range(32)]
test_set = [generate_scene(10_000 + i, params) for i in range(24)]

t0 = time.time()
result = train(config, train_set, save=False)
print(f"trained {result.steps_done} steps in {time.time() - t0:.0f}s, "
      f"last loss_depth {result.rows[-1]['loss_depth']:.3f}")

reports, acc = evaluate(result.model, test_set)
print(f"weather accuracy {acc:.2%}")
for subset in ("all", "normal", "rainy", "night"):
    r = find_report(reports, 80.0, subset)
    print(f"{subset:>7} @80m: MAE {r.mae:.3f}  RMSE {r.rmse:.3f}  d1 {r.d1:.3f}  ({r.n_pixels} px)")
