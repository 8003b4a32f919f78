"""Downlink channel model: path loss, shadowing, multipath fading, SNR.

Produces the per-(user, subcarrier) coefficient beta such that the received
SNR on subcarrier k at power p is beta * p.  Composition:

    beta = Gamma * G_user * |H_user,k|^2 / N_subcarrier

with Gamma the BER-driven SNR gap, G the linear path gain (log-distance path
loss plus lognormal shadowing), H the K-point frequency response of a short
exponential power-delay profile, and N the per-subcarrier noise power.
Mobility follows a random-direction model inside a circular cell with
specular boundary reflection; shadowing and fading taps evolve as AR(1)
processes whose coefficients derive from speed (decorrelation distance for
shadowing, Doppler coherence time for fading), so a zero-length or
zero-speed step leaves the channel untouched.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "LinkBudget",
    "ChannelParams",
    "UserMobilityState",
    "ChannelState",
    "MCS_TABLE",
    "MCS_PRODUCTS",
    "path_loss_db",
    "gamma_from_ber",
    "init_mobility",
    "init_channel",
    "step_channel",
    "rate_nats",
    "rate_bps",
    "quantize_mcs",
]

LIGHT_SPEED_MPS = 299_792_458.0
PATH_LOSS_INTERCEPT_DB = 38.4
PATH_LOSS_SLOPE_DB = 20.0
# Clarke 50% coherence time constant: tau_c = 0.423 / doppler.
COHERENCE_CONST = 0.423


class DomainError(ValueError):
    """Argument outside the physically meaningful domain."""


def path_loss_db(d: float) -> float:
    """Log-distance path loss 38.4 + 20*log10(d) in dB, d in meters.

    Distances below 1 m are clamped to 1 m with a warning.
    """
    if d < 1.0:
        warnings.warn(
            f"path_loss_db: distance {d} m below 1 m, clamping", RuntimeWarning
        )
        d = 1.0
    return PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * math.log10(d)


def gamma_from_ber(ber: float) -> float:
    """SNR gap Gamma = -ln(5*BER)/1.5 for an uncoded QAM error target."""
    if not (0.0 < ber <= 0.2):
        raise DomainError(f"BER target must be in (0, 0.2], got {ber}")
    return -math.log(5.0 * ber) / 1.5


@dataclass(frozen=True)
class LinkBudget:
    """Static link-level constants; derived quantities are properties."""

    tx_power_dbm: float = 43.0
    noise_dbm_per_subcarrier: float = -108.0
    ber_target: float = 1e-4
    bandwidth_hz: float = 1_024_000.0
    n_subcarriers: int = 256
    gamma_divides: bool = False

    @property
    def gamma(self) -> float:
        return gamma_from_ber(self.ber_target)

    @property
    def delta_f_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def budget_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_w(self) -> float:
        return 10.0 ** ((self.noise_dbm_per_subcarrier - 30.0) / 10.0)

    @property
    def snr_coef(self) -> float:
        """Multiplier c in beta = c * G * |H|^2 (Gamma placement configurable)."""
        if self.gamma_divides:
            return 1.0 / (self.gamma * self.noise_w)
        return self.gamma / self.noise_w


@dataclass(frozen=True)
class ChannelParams:
    link: LinkBudget = field(default_factory=LinkBudget)
    cell_radius_m: float = 1000.0
    shadow_sigma_db: float = 8.0
    shadow_decorr_m: float = 20.0
    carrier_hz: float = 2e9
    n_taps: int = 6
    tap_decay: float = 1.0
    freeze_fading: bool = False
    freeze_shadowing: bool = False

    def tap_powers(self) -> np.ndarray:
        w = np.exp(-self.tap_decay * np.arange(self.n_taps))
        return w / np.sum(w)


@dataclass
class UserMobilityState:
    """Position (m, 2-d), speed (m/s), heading (rad) and shadowing (dB)."""

    position: np.ndarray
    speed: float
    heading: float
    shadowing_db: float


@dataclass(frozen=True)
class ChannelState:
    """Per-frame channel snapshot: SNR coefficients and fading taps."""

    beta: np.ndarray  # (N, K), 1/W
    taps: np.ndarray  # (N, L) complex
    frame_index: int = 0


def init_mobility(
    n_users: int,
    rng: np.random.Generator,
    cell_radius_m: float = 1000.0,
    speed_mean_mps: float = 20.0,
    speed_std_mps: float = 2.24,
    shadow_sigma_db: float = 8.0,
) -> list[UserMobilityState]:
    """Users uniform over the cell disk, speeds drawn once, headings uniform."""
    states = []
    for _ in range(n_users):
        radius = cell_radius_m * math.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * math.pi)
        position = np.array(
            [radius * math.cos(angle), radius * math.sin(angle)]
        )
        speed = max(0.0, rng.normal(speed_mean_mps, speed_std_mps))
        heading = rng.uniform(0.0, 2.0 * math.pi)
        shadow = rng.normal(0.0, shadow_sigma_db)
        states.append(UserMobilityState(position, speed, heading, shadow))
    return states


def _path_gain_linear(mobility, params: ChannelParams) -> np.ndarray:
    gains = np.empty(len(mobility))
    for i, m in enumerate(mobility):
        d = max(1.0, float(np.hypot(m.position[0], m.position[1])))
        pl = PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * math.log10(d)
        gains[i] = 10.0 ** ((-pl + m.shadowing_db) / 10.0)
    return gains


def _beta_from(taps: np.ndarray, mobility, params: ChannelParams) -> np.ndarray:
    k = params.link.n_subcarriers
    h = np.fft.fft(taps, n=k, axis=1)
    h2 = (h.real**2 + h.imag**2)
    gains = _path_gain_linear(mobility, params)
    return params.link.snr_coef * gains[:, None] * h2


def init_channel(
    mobility, rng: np.random.Generator, params: ChannelParams
) -> ChannelState:
    n = len(mobility)
    amp = np.sqrt(params.tap_powers() / 2.0)
    z = rng.standard_normal((n, params.n_taps, 2))
    taps = amp[None, :] * (z[..., 0] + 1j * z[..., 1])
    return ChannelState(beta=_beta_from(taps, mobility, params), taps=taps)


def step_channel(
    state: ChannelState,
    mobility: list[UserMobilityState],
    dt: float,
    rng: np.random.Generator,
    params: ChannelParams,
) -> ChannelState:
    """Advance mobility, shadowing and fading by dt and rebuild beta.

    Mobility objects are updated in place; a fresh ChannelState is returned.
    Deterministic given the generator state.  dt = 0 is an exact identity
    (AR coefficients become 1 and nothing moves).
    """
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    n = len(mobility)
    radius = params.cell_radius_m
    shadow_z = rng.standard_normal(n)
    tap_z = rng.standard_normal((n, params.n_taps, 2))
    amp = np.sqrt(params.tap_powers() / 2.0)
    taps = state.taps.copy()

    for i, m in enumerate(mobility):
        # straight-line motion with specular reflection at the cell edge
        step_vec = m.speed * dt * np.array(
            [math.cos(m.heading), math.sin(m.heading)]
        )
        pos = m.position + step_vec
        r = float(np.hypot(pos[0], pos[1]))
        if r > radius:
            pos = pos * max(2.0 * radius - r, 0.0) / r
            rr = float(np.hypot(pos[0], pos[1]))
            if rr > radius:  # pathological overshoot past the far edge
                pos = pos * radius / rr
                rr = radius
            if rr > 0:
                normal = pos / rr
                v = np.array([math.cos(m.heading), math.sin(m.heading)])
                v = v - 2.0 * float(v @ normal) * normal
                m.heading = math.atan2(v[1], v[0])
        m.position = pos

        if not params.freeze_shadowing:
            rho_s = math.exp(-m.speed * dt / params.shadow_decorr_m)
            m.shadowing_db = rho_s * m.shadowing_db + math.sqrt(
                max(0.0, 1.0 - rho_s**2)
            ) * params.shadow_sigma_db * shadow_z[i]

        if not params.freeze_fading:
            doppler = m.speed * params.carrier_hz / LIGHT_SPEED_MPS
            if doppler > 0:
                rho_f = math.exp(-dt * doppler / COHERENCE_CONST)
            else:
                rho_f = 1.0
            innov = amp * (tap_z[i, :, 0] + 1j * tap_z[i, :, 1])
            taps[i] = rho_f * taps[i] + math.sqrt(
                max(0.0, 1.0 - rho_f**2)
            ) * innov

    return ChannelState(
        beta=_beta_from(taps, mobility, params),
        taps=taps,
        frame_index=state.frame_index + 1,
    )


def rate_nats(beta, p):
    """Shannon log rate ln(1 + beta*p) in nats per symbol."""
    return np.log1p(np.asarray(beta, dtype=float) * np.asarray(p, dtype=float))


def rate_bps(r_nats, delta_f: float):
    """Convert nats/symbol to bits/s over a subcarrier of width delta_f Hz."""
    return delta_f * np.asarray(r_nats, dtype=float) / math.log(2.0)


# For equal spectral efficiency the lower modulation order sorts last among
# equals, so it wins the "largest product <= x" pick in quantize_mcs.
def _mcs_sort_key(entry):
    name, _, product = entry
    bits = {"QPSK": 2, "16QAM": 4, "32QAM": 5, "64QAM": 6}[name]
    return (product, -bits)


MCS_TABLE = sorted(
    [
        (name, rate_label, bits * num / den)
        for (name, bits) in [("QPSK", 2), ("16QAM", 4), ("32QAM", 5), ("64QAM", 6)]
        for (num, den, rate_label) in [
            (1, 2, "1/2"),
            (2, 3, "2/3"),
            (3, 4, "3/4"),
            (7, 8, "7/8"),
        ]
    ],
    key=_mcs_sort_key,
)

MCS_PRODUCTS = np.array([entry[2] for entry in MCS_TABLE])


def quantize_mcs(spectral_eff_bits: float) -> tuple[str, float, float]:
    """Cap a spectral efficiency at the best modulation-and-coding entry.

    Returns (modulation, coding_rate, served_bits_per_symbol): the entry with
    the largest bits-per-symbol product not exceeding the input, preferring
    the lower modulation order on ties.  Below QPSK 1/2 (1.0 bit/symbol)
    nothing is transmitted.
    """
    if spectral_eff_bits < 0:
        raise ValueError(f"spectral efficiency must be >= 0, got {spectral_eff_bits}")
    idx = int(np.searchsorted(MCS_PRODUCTS, spectral_eff_bits, side="right")) - 1
    if idx < 0:
        return ("none", 0.0, 0.0)
    name, rate_label, product = MCS_TABLE[idx]
    num, den = rate_label.split("/")
    return (name, float(num) / float(den), product)
