"""Generate one scene, predict it and dump every intermediate tensor as TENS1.

    python3 scripts/dump_scene.py 5 /tmp/scene5
"""

import sys
from pathlib import Path

from disc import io
from disc.config import PipelineConfig
from disc.model import run_forward, weights_for
from disc.pipeline import save_scene, scene_for

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out = Path(sys.argv[2] if len(sys.argv) > 2 else f"scene{seed}")
out.mkdir(parents=True, exist_ok=True)

cfg = PipelineConfig().with_overrides(seed=seed)
scene = scene_for(cfg, seed)
save_scene(out / "scene.sscv1", scene)
res = run_forward(cfg, scene, weights_for(cfg))
io.save_labels(out / "pred.sscv1", res.pred, cfg.partition.num_classes)
for name, arr in res.intermediates.items():
    io.save_tensor(out / f"{name}.tens1", arr)
    print(f"{name:16s} {tuple(arr.shape)}")
