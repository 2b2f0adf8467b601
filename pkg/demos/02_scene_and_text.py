"""Generate one synthetic scene, read its description back, and embed the sentences."""
import numpy as np

from tride.geometry import project_points
from tride.synth import GenParams, generate_scene
from tride.text import WEATHER_LABELS, embed_description, parse_description

params = GenParams()
scene = generate_scene(7, params, "rainy")
print(f"weather: {WEATHER_LABELS[scene.weather]}, image {scene.image.shape}, {len(scene.cloud)} radar points")
print(f"dense depth {scene.depth.min():.1f}..{scene.depth.max():.1f} m, "
      f"sparse support {(scene.sparse > 0).mean():.1%} of pixels")

proj = project_points(scene.cloud, params.intrinsics(), params.height, params.width, 80.0)
print(f"{proj.kept.size} points land inside the image")

print("\n" + scene.text + "\n")
desc = parse_description(scene.text)
for name, para in zip(("general", "right", "middle right", "middle left", "left"), [desc.general] + desc.regional):
    print(f"{name:>12}: {len(para)} sentence(s)")

feats = embed_description(desc)
print("sentence features per paragraph:", [np.asarray(p).shape for p in feats])
