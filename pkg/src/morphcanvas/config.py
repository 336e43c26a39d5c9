"""Configuration: flags > environment > config file > defaults.

Environment variables use the MORPHCANVAS_ prefix (MORPHCANVAS_DELTA_T_MS
and so on). The config file is flat ``key = value`` lines with the same
names as the flags; unknown keys are rejected outright so typos fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

ENV_PREFIX = "MORPHCANVAS_"

BACKEND_MOCK = "mock"
BACKEND_REMOTE = "remote"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass
class Config:
    """Operating point; defaults reproduce the reference installation."""

    canvas: str = "canvas.png"
    delta_t_ms: int = 1000
    n_frames: int = 32
    backend: str = BACKEND_MOCK
    remote_url: str = ""
    sim_inpaint_ms: int = 410
    sim_interp_ms: int = 210
    gaze_listen: str = "127.0.0.1:7601"
    view_listen: str = "127.0.0.1:7602"
    http_listen: str = "127.0.0.1:8760"
    archive_dir: str = "archive"
    prompts: str = ""
    replay: str = ""
    replay_fast: bool = False
    replay_end: str = "reverse"
    dump_masks: bool = False
    session_id: str = ""
    stroke_w_min: float = 4.0
    stroke_w_max: float = 48.0
    stroke_alpha: float = 0.02
    mask_threshold: float = 0.5
    width_law: str = "direct"
    crop_min_side: int = 256
    crop_max_side: int = 512
    seed_policy: str = "per_cycle"
    fixed_seed: int = 0
    schedule_margin_ms: int = 400
    empty_retry_ms: int = 250
    keyframe_refresh_ms: int = 5000
    frame_png_level: int = 1

    def validate(self) -> "Config":
        if not (500 <= self.delta_t_ms <= 3000):
            raise ConfigError("delta_t_ms", f"{self.delta_t_ms} outside the valid range 500-3000")
        if self.n_frames < 1:
            raise ConfigError("n_frames", "must be >= 1")
        if self.backend not in (BACKEND_MOCK, BACKEND_REMOTE):
            raise ConfigError("backend", f"unknown backend {self.backend!r}")
        if self.backend == BACKEND_REMOTE and not self.remote_url:
            raise ConfigError("remote_url", "required when backend is remote")
        for key in ("sim_inpaint_ms", "sim_interp_ms", "schedule_margin_ms",
                    "empty_retry_ms", "keyframe_refresh_ms", "fixed_seed"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be >= 0")
        if not (0 < self.stroke_w_min <= self.stroke_w_max):
            raise ConfigError("stroke_w_min", "require 0 < stroke_w_min <= stroke_w_max")
        if self.stroke_alpha < 0:
            raise ConfigError("stroke_alpha", "must be >= 0")
        if not (0 < self.mask_threshold < 1):
            raise ConfigError("mask_threshold", "must lie strictly between 0 and 1")
        if self.width_law not in ("direct", "inverse"):
            raise ConfigError("width_law", f"unknown law {self.width_law!r}")
        if self.crop_min_side < 1 or self.crop_max_side < 1:
            raise ConfigError("crop_min_side", "crop sides must be >= 1")
        if self.seed_policy not in ("per_cycle", "fixed"):
            raise ConfigError("seed_policy", f"unknown policy {self.seed_policy!r}")
        if self.replay_end not in ("reverse", "archive"):
            raise ConfigError("replay_end", "must be 'reverse' or 'archive'")
        if not (0 <= self.frame_png_level <= 9):
            raise ConfigError("frame_png_level", "must be 0-9")
        for key in ("gaze_listen", "view_listen", "http_listen"):
            parse_listen(getattr(self, key), key)
        return self

    def snapshot(self) -> dict:
        """Deterministic subset recorded in archive manifests (no paths,
        no addresses, nothing that varies between equivalent replays)."""
        return {
            "delta_t_ms": self.delta_t_ms,
            "n_frames": self.n_frames,
            "backend": self.backend,
            "sim_inpaint_ms": self.sim_inpaint_ms,
            "sim_interp_ms": self.sim_interp_ms,
            "stroke_w_min": self.stroke_w_min,
            "stroke_w_max": self.stroke_w_max,
            "stroke_alpha": self.stroke_alpha,
            "mask_threshold": self.mask_threshold,
            "width_law": self.width_law,
            "crop_min_side": self.crop_min_side,
            "crop_max_side": self.crop_max_side,
            "seed_policy": self.seed_policy,
            "fixed_seed": self.fixed_seed,
        }


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value, target_type: str):
    if isinstance(value, str):
        text = value.strip()
        if target_type == "int":
            try:
                return int(text)
            except ValueError:
                raise ConfigError(key, f"expected an integer, got {text!r}") from None
        if target_type == "float":
            try:
                return float(text)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {text!r}") from None
        if target_type == "bool":
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ConfigError(key, f"expected a boolean, got {text!r}")
        return text
    return value


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` file; # comments; quotes on strings optional."""
    out: dict = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {line_no}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        value = value.strip()
        if value and value[0] == value[-1] and value[0] in "\"'" and len(value) >= 2:
            value = value[1:-1]
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"line {line_no}: unknown key")
        out[key] = _coerce(key, value, _FIELD_TYPES[key])
    return out


def parse_env(environ: dict | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown environment variable {name}")
        out[key] = _coerce(key, value, _FIELD_TYPES[key])
    return out


def parse_config(
    flag_values: dict | None = None,
    environ: dict | None = None,
    file_path: str | Path | None = None,
) -> Config:
    """Merge the three sources over defaults and validate the result.

    ``flag_values`` holds only the flags the user actually passed.
    """
    merged: dict = {}
    if file_path:
        merged.update(parse_config_file(file_path))
    merged.update(parse_env(environ))
    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown flag")
        merged[key] = _coerce(key, value, _FIELD_TYPES[key])
    return Config(**merged).validate()


def parse_listen(addr: str, key: str = "listen") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ConfigError(key, f"expected host:port, got {addr!r}")
    try:
        port_num = int(port)
    except ValueError:
        raise ConfigError(key, f"bad port in {addr!r}") from None
    if not (0 <= port_num <= 65535):
        raise ConfigError(key, f"port out of range in {addr!r}")
    return host, port_num
