"""JSON experiment configuration.

Every section is optional and falls back to the library defaults::

    {
      "seed": 0,
      "sakp":    {"top_k": 5, "grids": 900, "num_classes": 80, "window": 1},
      "kdf":     {"iterations": 10000, "salt_context": "ESAE-v1", "prf": "sha256"},
      "channel": {"snr_db": 25, "p_drop_max": 0.3, "lambda_spurious_max": 0.5,
                  "sigma_center_max": 0.01, "sigma_conf_max": 0.1,
                  "s_mid": 8.0, "width": 5.0},
      "mcr":     {"mode": "independent", "runs": 100, "frames_per_run": 50,
                  "snr_db": [5, 10, 25], "top_k": [1, 3, 5, 10],
                  "window": [1, 3, 5], "grids": [900], "policy": "none"},
      "game":    {"trials": 10000, "adversary": "random", "epsilon_threshold": 0.05},
      "scene":   {"mean_objects": 6.0, "class_weights_file": null},
      "output":  {"csv": null, "json": null}
    }

``sakp.grids`` may be replaced by ``sakp.grid: [rows, cols]``.  A class
weights file is a JSON list with one non-negative weight per class.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .analysis import GameConfig, McrSkgConfig
from .channel import ChannelParams
from .errors import ConfigurationError
from .keychain import KdfParams
from .sakp import GridSpec, SakpConfig
from .scene import SceneConfig

SECTIONS = ("seed", "sakp", "kdf", "channel", "mcr", "game", "scene", "output")


def _build(cls, raw: dict, section: str, **extra):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**raw, **extra)
    except TypeError as exc:
        raise ConfigurationError(f"bad {section!r} section: {exc}") from exc


@dataclass
class ExperimentConfig:
    seed: int = 0
    sakp: SakpConfig = field(default_factory=SakpConfig)
    kdf: KdfParams = field(default_factory=KdfParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    mcr: McrSkgConfig = field(default_factory=McrSkgConfig)
    game: GameConfig = field(default_factory=GameConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    output: dict = field(default_factory=lambda: {"csv": None, "json": None})

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(seed=int(raw.get("seed", 0)))

        sakp = dict(raw.get("sakp", {}))
        grid = None
        if "grid" in sakp:
            rows, cols = sakp.pop("grid")
            grid = GridSpec(int(rows), int(cols))
        if "grids" in sakp:
            grid = GridSpec.from_cells(int(sakp.pop("grids")))
        cfg.sakp = _build(SakpConfig, sakp, "sakp", **({"grid": grid} if grid else {}))

        kdf = dict(raw.get("kdf", {}))
        if "salt_context" in kdf:
            kdf["salt_context"] = str(kdf["salt_context"]).encode("utf-8")
        cfg.kdf = _build(KdfParams, kdf, "kdf")

        channel = dict(raw.get("channel", {}))
        channel.setdefault("seed", cfg.seed)
        cfg.channel = _build(ChannelParams, channel, "channel")

        mcr = dict(raw.get("mcr", {}))
        for axis in ("snr_db", "top_k", "window", "grids"):
            if axis in mcr:
                mcr[axis] = tuple(mcr[axis])
        mcr.setdefault("num_classes", cfg.sakp.num_classes)
        cfg.mcr = _build(McrSkgConfig, mcr, "mcr")

        cfg.game = _build(GameConfig, dict(raw.get("game", {})), "game")

        scene = dict(raw.get("scene", {}))
        weights_file = scene.pop("class_weights_file", None)
        if weights_file:
            path = Path(weights_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            scene["class_weights"] = tuple(json.loads(path.read_text()))
        scene.setdefault("num_classes", cfg.sakp.num_classes)
        cfg.scene = _build(SceneConfig, scene, "scene")

        output = raw.get("output", {})
        unknown = set(output) - {"csv", "json"}
        if unknown:
            raise ConfigurationError(f"unknown keys in 'output': {sorted(unknown)}")
        cfg.output.update(output)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    def resolved(self) -> dict:
        """JSON-safe dump of the fully resolved configuration."""
        d = asdict(self)
        d["kdf"]["salt_context"] = self.kdf.salt_context.decode("utf-8", "replace")
        d["sakp"]["grid"] = [self.sakp.grid.rows, self.sakp.grid.cols]
        for axis in ("snr_db", "top_k", "window", "grids"):
            d["mcr"][axis] = list(d["mcr"][axis])
        if d["scene"]["class_weights"] is not None:
            d["scene"]["class_weights"] = list(d["scene"]["class_weights"])
        d["scene"]["conf_range"] = list(d["scene"]["conf_range"])
        d["scene"]["size_range"] = list(d["scene"]["size_range"])
        return {"esae_version": __version__, **d}
