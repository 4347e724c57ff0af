"""Write the draws of every setting in a config to disk."""

from __future__ import annotations

import json
from pathlib import Path

from ..data import save_draw
from .config import ExperimentConfig
from .runner import generate_setting_draws


def generate_datasets(config: ExperimentConfig, out_dir: str | Path, base_dir: Path | None = None) -> Path:
    """One directory per setting holding ``draw_0000.csv`` ... plus an index file.

    Each draw is stored with :func:`catebench.data.save_draw` and loads back
    bit-exactly with :func:`catebench.data.load_draw`.
    """
    out = Path(out_dir)
    index = {"master_seed": config.master_seed, "settings": {}}
    for s, setting in enumerate(config.settings):
        target = out / setting.name
        draws = generate_setting_draws(config, s, base_dir)
        stems = []
        for k, draw in enumerate(draws):
            stem = f"draw_{k:04d}"
            save_draw(target, draw, stem)
            stems.append(stem)
        index["settings"][setting.name] = {"dgp": setting.dgp, "n": draws[0].n, "draws": stems}
    out.mkdir(parents=True, exist_ok=True)
    path = out / "index.json"
    path.write_text(json.dumps(index, indent=2) + "\n")
    return path
