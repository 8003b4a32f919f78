"""Frame-by-frame simulation engine and scenario sweeps.

Per frame: generate traffic, advance the channel, partition subcarriers,
solve the budgeted power allocation, convert rates to served bits through
the modulation table, and drain the per-user queues.  Per reporting window,
each user's achieved throughput is mapped through their class's normalized
utility curve and averaged per class.

Utility curves live on a total-rate axis measured in "rate units": one unit
is the throughput carried by one nat/symbol on one subcarrier, so
units = kbps * (1000 * ln 2 / delta_f).  Configuration points given in kbps
(inflection, normalization) are converted once at setup.  Inside the
optimizer each subcarrier uses the same family bridged to per-subcarrier
rates: the projected carriers-per-user share (K / N by default,
utility.persub_rate_scale to override) rescales the curve so that a carrier
hits the class's inflection when the user's projected total does.  Sigmoids
bridge by shifting the inflection point (axis scaling would break the
concavity criterion); log utilities bridge by exact axis scaling, which
their family absorbs.

Randomness is drawn from one stream per (role, class, index-within-class),
so enlarging one class leaves every other user's channel and traffic
realization untouched: sweep points are paired, which is what makes
monotone-trend comparisons meaningful at desk scale.

Every frame asserts the power budget and the partition cover; violations
raise RuntimeError at the window boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import simkernel
from .channel import LinkBudget, ChannelParams, MCS_PRODUCTS, COHERENCE_CONST, LIGHT_SPEED_MPS
from .config import ScenarioConfig
from .traffic import truncated_exp_lambda
from .utility import UtilityModel, make_utility, normalize

__all__ = [
    "ClassMetrics",
    "MetricsRecord",
    "EmptyInput",
    "CLASS_ORDER",
    "run_scenario",
    "sweep",
    "average_utility",
    "simulate_csv",
    "sweep_csv",
    "build_report_models",
    "build_persub_models",
    "rate_units_per_kbps",
    "capacity_estimate_kbps",
]

CLASS_ORDER = ("voip", "video", "be")
_CLASS_CODE = {"voip": 0, "video": 1, "be": 2}
_MCS_MAX = float(np.max(MCS_PRODUCTS))
_POOL_MIN = 64

_KIND_CODE = {"sigmoid": 0, "proportional_fairness": 1, "linear": 2}


class EmptyInput(ValueError):
    """Aggregation over an empty record list."""


@dataclass(frozen=True)
class ClassMetrics:
    avg_utility: float
    avg_throughput_bps: float
    drop_rate: float


@dataclass(frozen=True)
class MetricsRecord:
    window_index: int
    per_class: dict


def rate_units_per_kbps(cfg: ScenarioConfig) -> float:
    """Utility-axis units per kbps of throughput."""
    delta_f = cfg.bandwidth_hz / cfg.subcarriers
    return 1000.0 * math.log(2.0) / delta_f


def capacity_estimate_kbps(cfg: ScenarioConfig) -> float:
    """Rough cell capacity: every subcarrier at the top modulation entry."""
    delta_f = cfg.bandwidth_hz / cfg.subcarriers
    return cfg.subcarriers * delta_f * _MCS_MAX / 1000.0


def _normalize_point_kbps(cfg: ScenarioConfig, cls: str) -> float:
    m = cfg.utility_normalize_to[cls]
    if m == "auto":
        return capacity_estimate_kbps(cfg)
    return float(m)


def _base_model(cfg: ScenarioConfig, cls: str, share: float) -> UtilityModel:
    """Unnormalized utility for a class; share > 0 bridges to per-subcarrier rates."""
    kind = cfg.utility_kind[cls]
    params = cfg.utility_params[cls]
    upk = rate_units_per_kbps(cfg)
    if kind == "sigmoid":
        x0 = upk * float(params.get("x0_kbps", 32.0)) / share
        return make_utility("sigmoid", x0=x0)
    if kind == "proportional_fairness":
        c0 = float(params.get("c0", 1.0))
        c1 = float(params.get("c1", 1.0)) * share
        c2 = float(params.get("c2", 1.0))
        return make_utility("proportional_fairness", c0=c0, c1=c1, c2=c2)
    if kind == "linear":
        a = float(params.get("a", 1.0)) * share
        return make_utility("linear", a=a)
    raise ValueError(
        f"simulation supports sigmoid, proportional_fairness and linear "
        f"utilities; class {cls} has {kind!r}"
    )


def build_report_models(cfg: ScenarioConfig) -> dict[str, UtilityModel]:
    """Per-class normalized curves on the total-rate axis (units domain)."""
    upk = rate_units_per_kbps(cfg)
    out = {}
    for cls in CLASS_ORDER:
        model = _base_model(cfg, cls, share=1.0)
        out[cls] = normalize(model, upk * _normalize_point_kbps(cfg, cls))
    return out


def build_persub_models(
    cfg: ScenarioConfig, n_users: int
) -> dict[str, UtilityModel]:
    """Per-class normalized curves the optimizer applies to subcarrier rates."""
    share = _persub_share(cfg, n_users)
    upk = rate_units_per_kbps(cfg)
    out = {}
    for cls in CLASS_ORDER:
        model = _base_model(cfg, cls, share=share)
        out[cls] = normalize(model, upk * _normalize_point_kbps(cfg, cls) / share)
    return out


def _persub_share(cfg: ScenarioConfig, n_users: int) -> float:
    if cfg.persub_rate_scale == "auto":
        return cfg.subcarriers / max(1, n_users)
    share = float(cfg.persub_rate_scale)
    if share <= 0:
        raise ValueError("utility.persub_rate_scale must be positive")
    return share


def _class_tables(models: dict[str, UtilityModel], cfg: ScenarioConfig):
    """Pack per-class curves into the kernel's (kind, params, scale, offset) rows."""
    ukind = np.zeros(3, dtype=np.int64)
    uprm = np.zeros((3, 4))
    uscale = np.ones(3)
    uoff = np.zeros(3)
    for cls, code in _CLASS_CODE.items():
        m = models[cls]
        kindname = m.kind.value
        if kindname in ("power_t", "linear"):
            ukind[code] = 2
            uprm[code, 0] = float(m.params["a"])
        elif kindname == "sigmoid":
            ukind[code] = 0
            uprm[code, 0] = float(m.params["x0"])
        elif kindname == "proportional_fairness":
            if m.params.get("c3", 0.0) or m.params.get("c4", 0.0):
                raise ValueError(
                    "simulation log utilities must have c3 = c4 = 0"
                )
            uprm[code, 0] = float(m.params["c0"])
            uprm[code, 1] = float(m.params["c1"])
            uprm[code, 2] = float(m.params["c2"])
            ukind[code] = 1
        else:
            raise ValueError(f"unsupported utility kind {kindname!r} in simulation")
        uscale[code] = m.scale
        uoff[code] = m.offset
    return ukind, uprm, uscale, uoff


def _streams(seed: int, role: int, cls_code: int, idx: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), role, cls_code, idx])
    )


def _count_stride_hits(frame0: int, n: int, stride: int) -> int:
    first = ((frame0 + stride - 1) // stride) * stride
    if first >= frame0 + n:
        return 0
    return (frame0 + n - 1 - first) // stride + 1


def run_scenario(cfg: ScenarioConfig) -> list[MetricsRecord]:
    """Run one seeded scenario; one MetricsRecord per reporting window."""
    counts = cfg.class_users()
    classes_present = [c for c in CLASS_ORDER if counts[c] > 0]
    n = sum(counts.values())
    n_windows = max(0, int(round(cfg.duration_s / cfg.report_window_s)))
    frames_per_window = max(1, int(round(cfg.report_window_s / cfg.frame_s)))
    if n == 0 or n_windows == 0:
        return [MetricsRecord(w, {}) for w in range(n_windows)]

    link = LinkBudget(
        tx_power_dbm=cfg.tx_power_dbm,
        noise_dbm_per_subcarrier=cfg.noise_dbm,
        ber_target=cfg.ber_target,
        bandwidth_hz=cfg.bandwidth_hz,
        n_subcarriers=cfg.subcarriers,
        gamma_divides=cfg.gamma_divides,
    )
    chp = ChannelParams(
        link=link,
        cell_radius_m=cfg.cell_radius_m,
        shadow_sigma_db=cfg.shadow_sigma_db,
        freeze_fading=cfg.freeze_fading,
        freeze_shadowing=cfg.freeze_shadowing,
    )
    k = cfg.subcarriers
    delta_f = link.delta_f_hz
    budget = link.budget_w
    upk = rate_units_per_kbps(cfg)

    persub = build_persub_models(cfg, n)
    report = build_report_models(cfg)
    ukind, uprm, uscale, uoff = _class_tables(persub, cfg)

    # user layout: voip block, then video, then be
    cls_arr = np.concatenate(
        [np.full(counts[c], _CLASS_CODE[c], dtype=np.int64) for c in CLASS_ORDER]
    )
    chan_gens: list[np.random.Generator] = []
    traf_gens: list[np.random.Generator] = []
    for c in CLASS_ORDER:
        for j in range(counts[c]):
            chan_gens.append(_streams(cfg.seed, 1, _CLASS_CODE[c], j))
            traf_gens.append(_streams(cfg.seed, 2, _CLASS_CODE[c], j))

    # mobility / shadowing initial state
    pos = np.zeros((n, 2))
    dirv = np.zeros((n, 2))
    speed = np.zeros(n)
    shadow_db = np.zeros(n)
    taps = np.zeros((n, chp.n_taps), dtype=np.complex128)
    tap_amp = np.sqrt(chp.tap_powers() / 2.0)
    for i, g in enumerate(chan_gens):
        radius = cfg.cell_radius_m * math.sqrt(g.uniform())
        angle = g.uniform(0.0, 2.0 * math.pi)
        pos[i] = (radius * math.cos(angle), radius * math.sin(angle))
        speed[i] = max(0.0, g.normal(cfg.speed_mean_mps, cfg.speed_std_mps))
        heading = g.uniform(0.0, 2.0 * math.pi)
        dirv[i] = (math.cos(heading), math.sin(heading))
        shadow_db[i] = g.normal(0.0, cfg.shadow_sigma_db)
        z = g.standard_normal((chp.n_taps, 2))
        taps[i] = tap_amp * (z[:, 0] + 1j * z[:, 1])

    if cfg.freeze_shadowing:
        rho_sh = np.ones(n)
        sh_scale = np.zeros(n)
    else:
        rho_sh = np.exp(-speed * cfg.frame_s / chp.shadow_decorr_m)
        sh_scale = cfg.shadow_sigma_db * np.sqrt(
            np.maximum(0.0, 1.0 - rho_sh**2)
        )
    if cfg.freeze_fading:
        rho_fad = np.ones(n)
        fad_scale = np.zeros(n)
    else:
        doppler = speed * chp.carrier_hz / LIGHT_SPEED_MPS
        fad_dt = cfg.fading_stride_frames * cfg.frame_s
        rho_fad = np.where(
            doppler > 0, np.exp(-fad_dt * doppler / COHERENCE_CONST), 1.0
        )
        fad_scale = np.sqrt(np.maximum(0.0, 1.0 - rho_fad**2))

    dft = np.exp(
        -2j * math.pi * np.outer(np.arange(chp.n_taps), np.arange(k)) / k
    )
    h2 = np.abs(np.fft.fft(taps, n=k, axis=1)) ** 2
    gains = np.zeros(n)

    # traffic initial state
    phase_on = np.zeros(n, dtype=np.int64)
    resid = np.full(n, 1e18)
    vrate_bps = np.zeros(n)
    v_lam = truncated_exp_lambda(
        cfg.video_rate_min_kbps, cfg.video_rate_max_kbps, cfg.video_rate_mean_kbps
    )
    v_span = cfg.video_rate_max_kbps - cfg.video_rate_min_kbps
    v_q = -math.expm1(-v_lam * v_span)
    for i, g in enumerate(traf_gens):
        if cls_arr[i] == 0:
            on = g.uniform() < cfg.voip_on_mean_s / (
                cfg.voip_on_mean_s + cfg.voip_off_mean_s
            )
            phase_on[i] = 1 if on else 0
            resid[i] = g.standard_exponential() * (
                cfg.voip_on_mean_s if on else cfg.voip_off_mean_s
            )
        elif cls_arr[i] == 1:
            u = g.uniform()
            if abs(v_lam) < 1e-12:
                rate = cfg.video_rate_min_kbps + u * v_span
            else:
                rate = cfg.video_rate_min_kbps - math.log1p(-u * v_q) / v_lam
            vrate_bps[i] = rate * 1000.0
            resid[i] = g.standard_exponential() * (cfg.video_state_mean_ms / 1000.0)

    # queues sized by the longest deadline in frames
    deadline_frames = max(
        int(math.ceil(cfg.voip_deadline_ms / 1000.0 / cfg.frame_s)),
        int(math.ceil(cfg.video_deadline_s / cfg.frame_s)),
    )
    qcap = 1 << max(4, int(math.ceil(math.log2(deadline_frames + 8))))
    qbits = np.zeros((n, qcap))
    qdl = np.zeros((n, qcap))
    qhead = np.zeros(n, dtype=np.int64)
    qlen = np.zeros(n, dtype=np.int64)

    pool = max(
        _POOL_MIN,
        int(8 * frames_per_window * cfg.frame_s / cfg.voip_on_mean_s),
        int(8 * frames_per_window * cfg.frame_s / (cfg.video_state_mean_ms / 1000.0)),
    )

    owner = np.zeros(k, dtype=np.int64)
    kcls = np.zeros(k, dtype=np.int64)
    beta_own = np.zeros(k)
    p_prev = np.zeros(k)
    nu_state = np.zeros(1)
    cap_bits = np.zeros(n)
    mcs_products = np.unique(MCS_PRODUCTS)
    viol = np.zeros(4, dtype=np.int64)

    records: list[MetricsRecord] = []
    report_objective = 1 if cfg.report_metric == "objective" else 0
    window_s = frames_per_window * cfg.frame_s
    for w in range(n_windows):
        frame0 = w * frames_per_window
        n_fad = _count_stride_hits(frame0, frames_per_window, cfg.fading_stride_frames)
        shadow_z = np.empty((frames_per_window, n))
        fade_z = np.empty((n_fad, n, chp.n_taps, 2))
        for i, g in enumerate(chan_gens):
            shadow_z[:, i] = g.standard_normal(frames_per_window)
            fade_z[:, i] = g.standard_normal((n_fad, chp.n_taps, 2))
        dur_pool = np.zeros((n, pool))
        u_pool = np.zeros((n, pool))
        for i, g in enumerate(traf_gens):
            if cls_arr[i] == 0:
                dur_pool[i] = g.standard_exponential(pool)
            elif cls_arr[i] == 1:
                dur_pool[i] = g.standard_exponential(pool)
                u_pool[i] = g.random(pool)
        dur_cur = np.zeros(n, dtype=np.int64)
        u_cur = np.zeros(n, dtype=np.int64)
        fad_idx = np.zeros(1, dtype=np.int64)
        acc_offered = np.zeros(n)
        acc_served = np.zeros(n)
        acc_dropped = np.zeros(n)
        obj_sum = np.zeros(3)
        obj_cnt = np.zeros(3, dtype=np.int64)

        simkernel.run_window(
            frame0, frames_per_window, cfg.frame_s,
            cfg.fading_stride_frames, cfg.sched_stride_frames,
            cfg.cell_radius_m, link.snr_coef, delta_f,
            pos, dirv, speed, shadow_db, rho_sh, sh_scale, gains,
            taps, tap_amp, rho_fad, fad_scale, dft, h2,
            shadow_z, fade_z, fad_idx,
            cls_arr, ukind, uprm, uscale, uoff,
            0 if cfg.scheduler_mode == "best_channel" else 1, owner,
            budget, 1e-9, p_prev, nu_state, beta_own, kcls,
            1 if cfg.quantize_mcs else 0, mcs_products,
            cfg.voip_on_mean_s, cfg.voip_off_mean_s,
            cfg.voip_rate_kbps * 1000.0, cfg.voip_deadline_ms / 1000.0,
            cfg.video_state_mean_ms / 1000.0, cfg.video_rate_min_kbps,
            v_span, v_lam, v_q, cfg.video_deadline_s,
            phase_on, resid, vrate_bps, dur_pool, dur_cur, u_pool, u_cur,
            qbits, qdl, qhead, qlen,
            acc_offered, acc_served, acc_dropped, obj_sum, obj_cnt,
            report_objective, cap_bits, viol,
        )
        if viol[0] or viol[1]:
            raise RuntimeError(
                f"invariant violated in window {w}: power={viol[0]}, partition={viol[1]}"
            )
        if viol[2] or viol[3]:
            raise RuntimeError(
                f"internal capacity exceeded in window {w}: pools={viol[2]}, queue={viol[3]}"
            )

        per_class = {}
        for cname in classes_present:
            code = _CLASS_CODE[cname]
            idx = np.flatnonzero(cls_arr == code)
            thr_bps = acc_served[idx] / window_s
            if report_objective:
                util = obj_sum[code] / max(1, obj_cnt[code])
                util = float(min(1.0, max(0.0, util)))
            else:
                vals = report[cname].value(upk * thr_bps / 1000.0)
                util = float(np.mean(np.clip(vals, 0.0, 1.0)))
            offered = float(np.sum(acc_offered[idx]))
            dropped = float(np.sum(acc_dropped[idx]))
            per_class[cname] = ClassMetrics(
                avg_utility=util,
                avg_throughput_bps=float(np.mean(thr_bps)),
                drop_rate=dropped / offered if offered > 0 else 0.0,
            )
        records.append(MetricsRecord(w, per_class))
    return records


# ---------------------------------------------------------------------------
# aggregation, sweeps, CSV
# ---------------------------------------------------------------------------


def average_utility(records: list[MetricsRecord], cls: str) -> tuple[float, float]:
    """Mean and normal-approximation 95% CI of a class's window utilities."""
    vals = [r.per_class[cls].avg_utility for r in records if cls in r.per_class]
    if not vals:
        raise EmptyInput(f"no records carry class {cls!r}")
    arr = np.asarray(vals)
    mean = float(np.mean(arr))
    if arr.size < 2:
        return mean, 0.0
    ci = 1.96 * float(np.std(arr, ddof=1)) / math.sqrt(arr.size)
    return mean, ci


_SWEEPABLE = {
    "traffic.voip.users": "voip_users",
    "traffic.video.users": "video_users",
    "traffic.be.users": "be_users",
}


@dataclass(frozen=True)
class SweepRow:
    param_value: int
    cls: str
    mean_utility: float
    ci95: float
    mean_throughput_bps: float
    drop_rate: float


def sweep(
    cfg: ScenarioConfig,
    param: str,
    values: list[int],
    n_seeds: int = 5,
) -> list[SweepRow]:
    """Run the scenario per value with seeds cfg.seed + 0 .. n_seeds - 1.

    Seeds are shared across values (and user streams are keyed per class
    index), so sweep points are paired realizations.  Rows come back in
    deterministic (value, class) order, windows pooled across seeds.
    """
    if param not in _SWEEPABLE:
        raise ValueError(
            f"sweep parameter must be one of {sorted(_SWEEPABLE)}, got {param!r}"
        )
    attr = _SWEEPABLE[param]
    rows: list[SweepRow] = []
    for value in values:
        pooled: list[MetricsRecord] = []
        for s in range(n_seeds):
            run_cfg = replace(cfg, **{attr: int(value), "seed": cfg.seed + s})
            pooled.extend(run_scenario(run_cfg))
        counts = replace(cfg, **{attr: int(value)}).class_users()
        for cname in CLASS_ORDER:
            if counts[cname] <= 0:
                continue
            mean, ci = average_utility(pooled, cname)
            thr = float(
                np.mean([r.per_class[cname].avg_throughput_bps for r in pooled])
            )
            drop = float(np.mean([r.per_class[cname].drop_rate for r in pooled]))
            rows.append(SweepRow(int(value), cname, mean, ci, thr, drop))
    return rows


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def simulate_csv(records: list[MetricsRecord]) -> str:
    lines = ["window,class,avg_utility,avg_throughput_bps,drop_rate"]
    for r in records:
        for cname in CLASS_ORDER:
            if cname not in r.per_class:
                continue
            m = r.per_class[cname]
            lines.append(
                f"{r.window_index},{cname},{_fmt(m.avg_utility)},"
                f"{_fmt(m.avg_throughput_bps)},{_fmt(m.drop_rate)}"
            )
    return "\n".join(lines) + "\n"


def sweep_csv(rows: list[SweepRow]) -> str:
    lines = ["param_value,class,mean_utility,ci95,mean_throughput_bps,drop_rate"]
    for r in rows:
        lines.append(
            f"{r.param_value},{r.cls},{_fmt(r.mean_utility)},{_fmt(r.ci95)},"
            f"{_fmt(r.mean_throughput_bps)},{_fmt(r.drop_rate)}"
        )
    return "\n".join(lines) + "\n"
