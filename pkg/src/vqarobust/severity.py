"""Severity tables: per-corruption parameter records for levels 1-5."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

NUM_LEVELS = 5
DEFAULT_TABLE = "severity_v1.yaml"

# (low, high) inclusive bounds; None means unbounded on that side
_RANGES: dict[str, dict[str, tuple[float | None, float | None]]] = {
    "gaussian_noise": {"sigma": (0, None)},
    "shot_noise": {"lam": (0, None), "scale": (0, None), "rate": (0, None)},
    "impulse_noise": {"p": (0, 1)},
    "random_impulse_noise": {"p": (0, 1)},
    "speckle_noise": {"sigma": (0, None)},
    "binary_threshold": {"threshold": (0, 255)},
    "brightness": {"c": (-1, 1)},
    "contrast": {"c": (0, None)},
    "saturation": {"c1": (0, None), "c2": (-1, 1)},
    "defocus_blur": {"radius": (0, None), "alias_blur": (0, None)},
    "zoom_blur": {"max_zoom": (1, None), "zoom_step": (0, None)},
    "glass_blur": {"sigma": (0, None), "iterations": (0, None), "neighborhood": (0, None)},
    "snow": {"std": (0, None), "zoom": (0, None), "threshold": (0, 1), "blur_radius": (0, None),
             "blur_sigma": (0, None), "blend": (0, 1)},
    "splatter": {"density": (0, 1), "smoothing": (0, None), "opacity": (0, 1)},
    "elastic": {"alpha": (0, None), "sigma": (0, None)},
    "pixelate": {"factor": (0, 1)},
    "jpeg_compression": {"quality": (1, 100)},
}


class SeverityTableError(ValueError):
    pass


@dataclass
class SeverityTable:
    version: str
    levels: dict[str, list[dict]]
    options: dict[str, dict] = field(default_factory=dict)
    source: str = "<memory>"

    @classmethod
    def from_dict(cls, data: dict, source: str = "<memory>") -> "SeverityTable":
        if "version" not in data or "corruptions" not in data:
            raise SeverityTableError(f"{source}: expected top-level 'version' and 'corruptions'")
        levels, options = {}, {}
        for name, section in data["corruptions"].items():
            records = section.get("levels")
            if not isinstance(records, list) or len(records) != NUM_LEVELS:
                raise SeverityTableError(
                    f"{source}: '{name}' must list exactly {NUM_LEVELS} level records"
                )
            levels[name] = [dict(r or {}) for r in records]
            options[name] = {k: v for k, v in section.items() if k != "levels"}
        table = cls(str(data["version"]), levels, options, source)
        table.validate()
        return table

    @classmethod
    def load(cls, path: str | Path) -> "SeverityTable":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f), source=str(path))

    @classmethod
    def default(cls) -> "SeverityTable":
        text = resources.files("vqarobust.data").joinpath(DEFAULT_TABLE).read_text("utf-8")
        return cls.from_dict(yaml.safe_load(text), source=DEFAULT_TABLE)

    def validate(self) -> None:
        for name, records in self.levels.items():
            bounds = _RANGES.get(name, {})
            for i, rec in enumerate(records, start=1):
                for key, (lo, hi) in bounds.items():
                    if key not in rec:
                        continue
                    val = rec[key]
                    if (lo is not None and val < lo) or (hi is not None and val > hi):
                        raise SeverityTableError(
                            f"{self.source}: {name} level {i}: {key}={val} outside [{lo}, {hi}]"
                        )

    def params(self, corruption: str, level: int) -> dict:
        if corruption not in self.levels:
            raise KeyError(f"no severity records for corruption {corruption!r}")
        if not 1 <= level <= NUM_LEVELS:
            raise ValueError(f"level must be in 1..{NUM_LEVELS}, got {level}")
        return dict(self.levels[corruption][level - 1])

    def option(self, corruption: str, key: str, default=None):
        return self.options.get(corruption, {}).get(key, default)
