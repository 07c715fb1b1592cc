"""Controller building blocks: PID law, observation vector, rewards, gating.

The CO2 valve only matters while the culture is photosynthesizing, so a
gate arms the controller when light is strong and the pH has drifted above
its setpoint, and disarms it when light falls away. Both the PID expert and
the learned policy run behind the same gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteInputError

OBS_DIM = 10

SECONDS_PER_DAY = 86400.0


@dataclass
class PidConfig:
    """Ideal-form PI controller for CO2 injection.

    The plant gain is positive in the wrong direction for this loop (more
    CO2 pushes pH down), hence the negative proportional gain. Output is
    clamped to the valve range.
    """

    kp: float = -32.0        # L/min per pH unit
    ti: float = 1200.0       # integral time, s
    ts: float = 10.0         # controller sampling time, s
    u_min: float = 0.0       # L/min
    u_max: float = 10.0      # L/min


@dataclass
class PidState:
    integral_e: float = 0.0  # accumulated error, pH*s, kept inside +-clip
    last_u: float = 0.0      # most recent applied flow, L/min


@dataclass
class ObservationConfig:
    """Scaling used to squash raw measurements into the policy observation.

    Channels 0..5 are min-max scaled to [0, 1] and clamped. The integral
    channel divides by ``int_clip`` so it lives in [-1, 1]. Error enters
    unscaled; around the setpoint it is already order 0.1.
    """

    temp_range: tuple[float, float] = (0.0, 45.0)        # degC
    irradiance_range: tuple[float, float] = (0.0, 1200.0)  # W/m^2
    do_range: tuple[float, float] = (0.0, 30.0)          # mg/L
    q_dil_range: tuple[float, float] = (0.0, 5.0)        # L/min
    q_air_range: tuple[float, float] = (0.0, 50.0)       # L/min
    co2_range: tuple[float, float] = (0.0, 10.0)         # L/min
    int_clip: float = 240.0                              # pH*s
    setpoint: float = 8.0                                # pH


@dataclass
class Measurements:
    """Raw sensor and actuator values feeding the observation builder."""

    temp: float
    irradiance: float
    do_conc: float
    q_dil: float
    q_air: float
    co2_prev: float


def accumulate_error(integral_e: float, e: float, ts: float,
                     int_clip: float) -> float:
    """Advance the clipped error integral by one sample.

    Clipping the accumulator is the anti-windup mechanism: while the valve
    is saturated the integral cannot grow past ``int_clip``, so recovery
    starts as soon as the error changes sign instead of after a long
    unwinding transient.
    """
    return float(np.clip(integral_e + e * ts, -int_clip, int_clip))


def pid_output(e: float, integral_e: float, cfg: PidConfig) -> float:
    """Ideal-form PI law on an already-updated integral, clamped."""
    u_raw = cfg.kp * (e + integral_e / cfg.ti)
    return float(np.clip(u_raw, cfg.u_min, cfg.u_max))


def pid_step(e: float, pid: PidState, cfg: PidConfig,
             int_clip: float = 240.0) -> tuple[float, PidState]:
    """One ideal-form PI update: u = kp * (e + integral_e / ti), clamped.

    The integral accumulates before the law is applied, so the returned
    state's ``integral_e`` is exactly what produced ``u``.
    """
    if not math.isfinite(e):
        raise NonFiniteInputError("pid error input is not finite")
    integral_e = accumulate_error(pid.integral_e, e, cfg.ts, int_clip)
    u = pid_output(e, integral_e, cfg)
    return u, PidState(integral_e=integral_e, last_u=u)


def _scale01(value: float, lo: float, hi: float) -> tuple[float, bool]:
    scaled = (value - lo) / (hi - lo)
    out_of_range = scaled < 0.0 or scaled > 1.0
    return float(np.clip(scaled, 0.0, 1.0)), out_of_range


def build_observation(meas: Measurements, e: float, integral_e: float,
                      t_of_day: float, cfg: ObservationConfig
                      ) -> tuple[np.ndarray, bool]:
    """Assemble the 10-channel policy observation.

    Layout: scaled temperature, irradiance, dissolved oxygen, dilution
    flow, air flow, previous CO2 flow, then sin/cos of time of day, the
    raw setpoint error, and the scaled error integral. Returns the vector
    and a flag marking whether any raw channel had to be clamped, which
    callers count as telemetry rather than treat as an error.
    """
    values = [meas.temp, meas.irradiance, meas.do_conc, meas.q_dil,
              meas.q_air, meas.co2_prev, e, integral_e, t_of_day]
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteInputError("observation inputs contain NaN or inf")
    ranges = [cfg.temp_range, cfg.irradiance_range, cfg.do_range,
              cfg.q_dil_range, cfg.q_air_range, cfg.co2_range]
    raw = [meas.temp, meas.irradiance, meas.do_conc, meas.q_dil,
           meas.q_air, meas.co2_prev]
    obs = np.empty(OBS_DIM, dtype=np.float64)
    clamped = False
    for i, (value, (lo, hi)) in enumerate(zip(raw, ranges)):
        obs[i], out = _scale01(value, lo, hi)
        clamped = clamped or out
    phase = 2.0 * math.pi * (t_of_day % SECONDS_PER_DAY) / SECONDS_PER_DAY
    obs[6] = math.sin(phase)
    obs[7] = math.cos(phase)
    obs[8] = e
    scaled_int = integral_e / cfg.int_clip
    if abs(scaled_int) > 1.0:
        clamped = True
        scaled_int = float(np.clip(scaled_int, -1.0, 1.0))
    obs[9] = scaled_int
    return obs, clamped


def reward_quadratic(e: float) -> float:
    """Penalty form: negative squared setpoint error."""
    return -float(e) ** 2


def reward_log(e: float, eps: float = 1e-6) -> float:
    """Shaped form: -ln(e^2 + eps), large when the error is tiny.

    The floor ``eps`` caps the reward at -ln(eps), about 13.8 for the
    default, so a perfect step is strongly but finitely rewarded.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if not math.isfinite(e):
        raise NonFiniteInputError("reward error input is not finite")
    return -math.log(e * e + eps)


def activation_gate(irradiance: float, ph: float, setpoint: float,
                    currently_active: bool,
                    irradiance_threshold: float = 100.0) -> bool:
    """Decide whether the CO2 controller is armed this step.

    Arms when light exceeds the threshold while pH sits above setpoint,
    and stays armed until light drops below the threshold. The pH
    condition applies only at arming time; once active, the controller
    keeps authority even if it drives the pH below setpoint.
    """
    if irradiance < irradiance_threshold:
        return False
    if currently_active:
        return True
    return irradiance > irradiance_threshold and ph > setpoint
