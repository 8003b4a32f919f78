"""Scenario configuration: line-oriented ``key = value`` files.

Grammar: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored.  Keys are fixed; unknown keys are errors.  Utility parameter
values are comma-separated ``name=value`` lists (e.g. ``x0_kbps=32``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

__all__ = ["ScenarioConfig", "parse_config", "load_config", "config_keys"]


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_params(s: str) -> dict[str, float]:
    out: dict[str, float] = {}
    s = s.strip()
    if not s:
        return out
    for item in s.split(","):
        if "=" not in item:
            raise ValueError(f"utility params must be name=value pairs, got {item!r}")
        name, _, val = item.partition("=")
        out[name.strip()] = float(val)
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a simulation run needs, with the documented defaults."""

    # channel
    bandwidth_hz: float = 1_024_000.0
    subcarriers: int = 256
    cell_radius_m: float = 1000.0
    tx_power_dbm: float = 43.0
    noise_dbm: float = -108.0
    ber_target: float = 1e-4
    shadow_sigma_db: float = 8.0
    speed_mean_mps: float = 20.0
    speed_std_mps: float = 2.24
    gamma_divides: bool = False
    freeze_fading: bool = False
    freeze_shadowing: bool = False
    # scheduler
    scheduler_mode: str = "best_channel"
    # traffic: population
    voip_users: int = 10
    video_users: int = 4
    be_users: int = 20
    # traffic: generators
    voip_on_mean_s: float = 1.0
    voip_off_mean_s: float = 1.5
    voip_rate_kbps: float = 32.0
    voip_deadline_ms: float = 80.0
    video_state_mean_ms: float = 160.0
    video_rate_min_kbps: float = 64.0
    video_rate_max_kbps: float = 256.0
    video_rate_mean_kbps: float = 180.0
    video_deadline_s: float = 1.0
    # utilities (per class): kind, params, normalization point in kbps
    utility_kind: dict = field(
        default_factory=lambda: {
            "voip": "sigmoid",
            "video": "sigmoid",
            "be": "proportional_fairness",
        }
    )
    utility_params: dict = field(
        default_factory=lambda: {
            "voip": {"x0_kbps": 32.0},
            "video": {"x0_kbps": 180.0},
            "be": {"c0": 1.0, "c1": 1.0, "c2": 1.0},
        }
    )
    utility_normalize_to: dict = field(
        default_factory=lambda: {"voip": 64.0, "video": 512.0, "be": "auto"}
    )
    # bridge between per-subcarrier rate and the utility's total-rate axis:
    # "auto" projects by the average carriers per user (K / N)
    persub_rate_scale: str | float = "auto"
    # simulation
    frame_s: float = 0.000125
    duration_s: float = 10.0
    report_window_s: float = 0.5
    seed: int = 1
    fading_stride_frames: int = 8
    sched_stride_frames: int = 16
    # reporting
    report_metric: str = "utility"  # or "objective"
    quantize_mcs: bool = True

    def class_users(self) -> dict[str, int]:
        return {"voip": self.voip_users, "video": self.video_users, "be": self.be_users}


# key -> (attribute, parser); dict-valued attributes carry (attr, subkey, parser)
_SCALAR_KEYS = {
    "channel.bandwidth_hz": ("bandwidth_hz", float),
    "channel.subcarriers": ("subcarriers", int),
    "channel.cell_radius_m": ("cell_radius_m", float),
    "channel.tx_power_dbm": ("tx_power_dbm", float),
    "channel.noise_dbm": ("noise_dbm", float),
    "channel.ber_target": ("ber_target", float),
    "channel.shadow_sigma_db": ("shadow_sigma_db", float),
    "channel.speed_mean_mps": ("speed_mean_mps", float),
    "channel.speed_std_mps": ("speed_std_mps", float),
    "channel.gamma_divides": ("gamma_divides", _parse_bool),
    "channel.freeze_fading": ("freeze_fading", _parse_bool),
    "channel.freeze_shadowing": ("freeze_shadowing", _parse_bool),
    "scheduler.mode": ("scheduler_mode", str),
    "traffic.voip.users": ("voip_users", int),
    "traffic.video.users": ("video_users", int),
    "traffic.be.users": ("be_users", int),
    "traffic.voip.on_mean_s": ("voip_on_mean_s", float),
    "traffic.voip.off_mean_s": ("voip_off_mean_s", float),
    "traffic.voip.rate_kbps": ("voip_rate_kbps", float),
    "traffic.voip.deadline_ms": ("voip_deadline_ms", float),
    "traffic.video.state_mean_ms": ("video_state_mean_ms", float),
    "traffic.video.rate_min_kbps": ("video_rate_min_kbps", float),
    "traffic.video.rate_max_kbps": ("video_rate_max_kbps", float),
    "traffic.video.rate_mean_kbps": ("video_rate_mean_kbps", float),
    "traffic.video.deadline_s": ("video_deadline_s", float),
    "sim.frame_s": ("frame_s", float),
    "sim.duration_s": ("duration_s", float),
    "sim.report_window_s": ("report_window_s", float),
    "sim.seed": ("seed", int),
    "sim.fading_stride_frames": ("fading_stride_frames", int),
    "sim.sched_stride_frames": ("sched_stride_frames", int),
    "report.metric": ("report_metric", str),
    "link.quantize_mcs": ("quantize_mcs", _parse_bool),
}

_CLASS_NAMES = ("voip", "video", "be")


def config_keys() -> list[str]:
    """All recognized configuration keys."""
    keys = list(_SCALAR_KEYS)
    for c in _CLASS_NAMES:
        keys += [f"utility.{c}.kind", f"utility.{c}.params", f"utility.{c}.normalize_to"]
    keys.append("utility.persub_rate_scale")
    return sorted(keys)


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse config text on top of defaults (or another config)."""
    cfg = base or ScenarioConfig()
    updates: dict = {}
    kind = dict(cfg.utility_kind)
    params = {c: dict(v) for c, v in cfg.utility_params.items()}
    norm = dict(cfg.utility_normalize_to)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _SCALAR_KEYS:
            attr, parser = _SCALAR_KEYS[key]
            try:
                updates[attr] = parser(value)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
            continue
        parts = key.split(".")
        if key == "utility.persub_rate_scale":
            updates["persub_rate_scale"] = (
                "auto" if value == "auto" else float(value)
            )
        elif len(parts) == 3 and parts[0] == "utility" and parts[1] in _CLASS_NAMES:
            cls, leaf = parts[1], parts[2]
            if leaf == "kind":
                kind[cls] = value
            elif leaf == "params":
                params[cls] = _parse_params(value)
            elif leaf == "normalize_to":
                norm[cls] = "auto" if value == "auto" else float(value)
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    updates["utility_kind"] = kind
    updates["utility_params"] = params
    updates["utility_normalize_to"] = norm
    cfg = replace(cfg, **updates)
    _validate(cfg)
    return cfg


def load_config(path: str | Path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    return parse_config(Path(path).read_text(), base=base)


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.subcarriers < 1:
        raise ValueError("channel.subcarriers must be >= 1")
    if cfg.frame_s <= 0 or cfg.report_window_s < cfg.frame_s:
        raise ValueError("need sim.frame_s > 0 and report window >= frame")
    if min(cfg.voip_users, cfg.video_users, cfg.be_users) < 0:
        raise ValueError("user counts must be >= 0")
    if cfg.scheduler_mode not in ("best_channel", "utility_greedy"):
        raise ValueError(
            f"scheduler.mode must be best_channel or utility_greedy, got {cfg.scheduler_mode!r}"
        )
    if cfg.report_metric not in ("utility", "objective"):
        raise ValueError(
            f"report.metric must be utility or objective, got {cfg.report_metric!r}"
        )
    if cfg.fading_stride_frames < 1 or cfg.sched_stride_frames < 1:
        raise ValueError("stride frames must be >= 1")
    for cls in _CLASS_NAMES:
        if cls not in cfg.utility_kind:
            raise ValueError(f"missing utility kind for class {cls}")
