"""Open raceway pond surrogate: pH, dissolved oxygen, and temperature.

The model is deliberately small. One explicit-Euler step of length ``ts``
advances three states driven by light, aeration, dilution, and the CO2
injection command:

    growth factor   pt  = q10^((temp - 20)/10) * I / (I + k_i)
    pH              ph' = ph + ts * (k_ph * I * pt - k_co2 * u_co2
                          + k_air * q_air - k_dil * q_dil * (ph - ph_in))
                          + noise,              clamped to [5, 11]
    oxygen          do' = do + ts * (k_o2 * pt * I
                          - k_la * q_air * (do - do_sat) - r_resp),
                          clamped at 0
    temperature     t'  = temp + ts * (t_amb + k_heat * I - temp) / tau_t,
                          clamped to [0, 45]

Photosynthesis pulls CO2 out of the water and pushes pH up during the day;
injected CO2 pushes it back down; aeration strips CO2 overnight chemistry
aside and nudges pH up slightly; dilution drags pH toward the feed water.
Oxygen accumulates under light and is stripped by the same aeration, so the
air blower is driven by a dissolved-oxygen hysteresis loop that has nothing
to do with the pH controller, which makes its disturbance kicks identical
for every controller under comparison.

Day profiles (sun arc, clouds, harvest dilution, ambient temperature) come
from a seeded per-day schedule so that two controllers given the same seed
face byte-identical exogenous inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import NonFiniteInputError

SECONDS_PER_DAY = 86400.0


@dataclass
class PlantState:
    ph: float = 7.9
    do_conc: float = 6.0     # dissolved oxygen, mg/L
    temp: float = 16.0       # degC
    t: float = 0.0           # absolute time, s


@dataclass
class ExogenousInputs:
    """Per-step inputs the pH controller does not command."""

    irradiance: float = 0.0  # W/m^2
    q_air: float = 0.0       # aeration flow, L/min
    q_dil: float = 0.0       # dilution flow, L/min


@dataclass
class PlantParams:
    """Surrogate coefficients. Defaults give a midday CO2 demand of
    roughly 2-5 L/min against the default summer schedule, comfortably
    inside the 0-10 L/min valve range. The dilution term doubles as the
    pond's only pH self-damping, so the make-up water duty cycle sets
    how quickly uncontrolled pH drifts settle."""

    k_ph: float = 6.5e-7     # pH gain of photosynthesis, pH/(s*W/m^2)
    k_co2: float = 1.0e-4    # pH drop per unit CO2 flow, pH/(s*L/min)
    k_air: float = 8.0e-6    # pH rise per unit air flow, pH/(s*L/min)
    k_dil: float = 2.0e-3    # dilution mixing rate, 1/(s*L/min)
    ph_in: float = 7.9       # feed water pH
    k_i: float = 150.0       # light half-saturation, W/m^2
    q10: float = 2.0         # growth rate doubling per 10 degC
    k_o2: float = 3.0e-6     # oxygen yield of photosynthesis
    k_la: float = 2.0e-5     # aeration stripping rate, 1/(s*L/min)
    do_sat: float = 9.0      # air-equilibrium oxygen, mg/L
    r_resp: float = 1.2e-4   # respiration drain, mg/(L*s)
    k_heat: float = 0.009    # solar heating, degC per W/m^2
    tau_t: float = 7200.0    # thermal time constant, s
    noise_std: float = 0.0008  # per-step pH process noise
    ph_min: float = 5.0
    ph_max: float = 11.0
    temp_min: float = 0.0
    temp_max: float = 45.0


@dataclass
class CloudEvent:
    start: float             # seconds after midnight
    duration: float
    attenuation: float       # fraction of light removed, 0..1


@dataclass
class DilutionPulse:
    start: float
    duration: float
    flow: float              # L/min


@dataclass
class DisturbanceSchedule:
    """One concrete simulated day."""

    i_max: float = 900.0
    sunrise: float = 28800.0
    sunset: float = 57600.0
    cloud_events: list[CloudEvent] = field(default_factory=list)
    dilution_pulses: list[DilutionPulse] = field(default_factory=list)
    t_amb_mean: float = 18.0
    t_amb_amp: float = 5.0
    do_hi: float = 20.0      # blower on at or above, mg/L
    do_lo: float = 12.0      # blower off at or below, mg/L
    q_air_on: float = 20.0   # blower flow when running, L/min


@dataclass
class SeasonConfig:
    """Random-day template from which per-day schedules are drawn.

    ``start_weekday`` anchors day 0 on the weekly cycle (0 = Monday).
    Weekend days skip harvest dilution; evaporation make-up water runs
    every day as a duty cycle of short pulses between sunrise and
    sunset, which is also the main source of pH self-damping while the
    controllers are active.
    """

    i_max: float = 900.0
    i_max_jitter: float = 60.0
    sunrise: float = 28800.0         # 08:00
    sunset: float = 57600.0          # 16:00
    sun_jitter: float = 900.0
    cloud_max: int = 3
    cloud_duration: tuple[float, float] = (1200.0, 3600.0)
    cloud_attenuation: tuple[float, float] = (0.4, 0.7)
    harvest_count: tuple[int, int] = (2, 3)
    harvest_flow: tuple[float, float] = (2.5, 4.0)
    harvest_duration: tuple[float, float] = (1500.0, 2700.0)
    topup_flow: float = 0.8
    topup_duration: float = 420.0
    topup_period: float = 900.0
    t_amb_mean: float = 18.0
    t_amb_amp: float = 5.0
    do_hi: float = 20.0
    do_lo: float = 12.0
    q_air_on: float = 20.0
    start_weekday: int = 5


@dataclass
class ClampCounter:
    """Telemetry for state-bound hits during a run."""

    ph: int = 0
    do_conc: int = 0
    temp: int = 0

    @property
    def total(self) -> int:
        return self.ph + self.do_conc + self.temp


def diurnal_irradiance(t_of_day: float, sched: DisturbanceSchedule) -> float:
    """Half-sine sun arc between sunrise and sunset, darkened by clouds."""
    t = t_of_day % SECONDS_PER_DAY
    if t <= sched.sunrise or t >= sched.sunset:
        return 0.0
    value = sched.i_max * math.sin(
        math.pi * (t - sched.sunrise) / (sched.sunset - sched.sunrise))
    for cloud in sched.cloud_events:
        if cloud.start <= t < cloud.start + cloud.duration:
            value *= 1.0 - cloud.attenuation
    return max(value, 0.0)


def ambient_temperature(t_of_day: float, sched: DisturbanceSchedule) -> float:
    """Sinusoidal air temperature, coolest before dawn, warmest late day."""
    t = t_of_day % SECONDS_PER_DAY
    phase = 2.0 * math.pi * (t - 11.0 * 3600.0) / SECONDS_PER_DAY
    return sched.t_amb_mean + sched.t_amb_amp * math.sin(phase)


def dilution_flow(t_of_day: float, sched: DisturbanceSchedule) -> float:
    """Dilution flow at a time of day; pulses do not overlap."""
    t = t_of_day % SECONDS_PER_DAY
    for pulse in sched.dilution_pulses:
        if pulse.start <= t < pulse.start + pulse.duration:
            return pulse.flow
    return 0.0


def air_controller(do_conc: float, currently_on: bool,
                   sched: DisturbanceSchedule) -> float:
    """Hysteresis blower: on at ``do_hi``, off at ``do_lo``, else hold."""
    if do_conc >= sched.do_hi:
        on = True
    elif do_conc <= sched.do_lo:
        on = False
    else:
        on = currently_on
    return sched.q_air_on if on else 0.0


def plant_step(state: PlantState, u_co2: float, x: ExogenousInputs,
               p: PlantParams, ts: float,
               rng: np.random.Generator | None = None,
               t_amb: float | None = None,
               telemetry: ClampCounter | None = None) -> PlantState:
    """Advance the pond one Euler step.

    ``rng`` feeds the pH process noise and is only consumed when
    ``noise_std`` is positive, so noise-free runs need no generator.
    ``t_amb`` defaults to the 20 degC reference when no schedule value
    is supplied. Bound hits are clamped and counted, never raised; the
    simulation loop decides when too many clamps mean instability.
    """
    values = (state.ph, state.do_conc, state.temp, u_co2,
              x.irradiance, x.q_air, x.q_dil)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteInputError("plant step received NaN or inf")
    if not 0.0 <= u_co2 <= 10.0:
        raise ValueError(f"CO2 flow {u_co2} outside the 0-10 L/min valve range")

    pt = p.q10 ** ((state.temp - 20.0) / 10.0) * x.irradiance / (x.irradiance + p.k_i)

    dph = (p.k_ph * x.irradiance * pt - p.k_co2 * u_co2
           + p.k_air * x.q_air - p.k_dil * x.q_dil * (state.ph - p.ph_in))
    ph = state.ph + ts * dph
    if p.noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        ph += rng.normal(0.0, p.noise_std)
    if ph < p.ph_min or ph > p.ph_max:
        if telemetry is not None:
            telemetry.ph += 1
        ph = min(max(ph, p.ph_min), p.ph_max)

    ddo = (p.k_o2 * pt * x.irradiance
           - p.k_la * x.q_air * (state.do_conc - p.do_sat) - p.r_resp)
    do_conc = state.do_conc + ts * ddo
    if do_conc < 0.0:
        if telemetry is not None:
            telemetry.do_conc += 1
        do_conc = 0.0

    ambient = 20.0 if t_amb is None else t_amb
    temp = state.temp + ts * (ambient + p.k_heat * x.irradiance - state.temp) / p.tau_t
    if temp < p.temp_min or temp > p.temp_max:
        if telemetry is not None:
            telemetry.temp += 1
        temp = min(max(temp, p.temp_min), p.temp_max)

    return PlantState(ph=float(ph), do_conc=float(do_conc),
                      temp=float(temp), t=state.t + ts)


def _weekday(day_index: int, season: SeasonConfig) -> int:
    return (season.start_weekday + day_index) % 7


def derive_day_schedule(day_index: int, season: SeasonConfig,
                        schedule_entropy: int) -> DisturbanceSchedule:
    """Draw one day's concrete schedule from the season template.

    The generator is keyed on (entropy, day_index), so schedules depend
    only on those two values, not on how many days were built before.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=schedule_entropy,
                               spawn_key=(day_index,)))
    sunrise = season.sunrise + rng.uniform(-season.sun_jitter, season.sun_jitter)
    sunset = season.sunset + rng.uniform(-season.sun_jitter, season.sun_jitter)
    if sunset - sunrise < 4.0 * 3600.0:
        sunset = sunrise + 4.0 * 3600.0
    i_max = season.i_max + rng.uniform(-season.i_max_jitter, season.i_max_jitter)

    clouds: list[CloudEvent] = []
    n_clouds = int(rng.integers(0, season.cloud_max + 1))
    for _ in range(n_clouds):
        duration = rng.uniform(*season.cloud_duration)
        latest = sunset - 1800.0 - duration
        earliest = sunrise + 1800.0
        if latest <= earliest:
            continue
        clouds.append(CloudEvent(
            start=float(rng.uniform(earliest, latest)),
            duration=float(duration),
            attenuation=float(rng.uniform(*season.cloud_attenuation))))
    clouds.sort(key=lambda c: c.start)
    clouds = _drop_overlaps(clouds)

    harvests: list[DilutionPulse] = []
    if _weekday(day_index, season) < 5:
        n_harvest = int(rng.integers(season.harvest_count[0],
                                     season.harvest_count[1] + 1))
        window_lo = sunrise + 2.0 * 3600.0
        window_hi = sunset - 2.0 * 3600.0
        for _ in range(n_harvest):
            duration = rng.uniform(*season.harvest_duration)
            if window_hi - duration <= window_lo:
                continue
            harvests.append(DilutionPulse(
                start=float(rng.uniform(window_lo, window_hi - duration)),
                duration=float(duration),
                flow=float(rng.uniform(*season.harvest_flow))))
    harvests.sort(key=lambda pu: pu.start)
    harvests = _drop_overlaps(harvests)

    # Evaporation make-up water runs as a duty cycle of short pulses
    # through the daylight hours, every day including weekends. Harvest
    # pulses take precedence; top-ups that would overlap one are skipped.
    pulses = list(harvests)
    start = sunrise + rng.uniform(0.0, 120.0)
    while start + season.topup_duration < sunset:
        topup = DilutionPulse(start=float(start),
                              duration=float(season.topup_duration),
                              flow=float(season.topup_flow))
        if not any(topup.start < h.start + h.duration
                   and h.start < topup.start + topup.duration
                   for h in harvests):
            pulses.append(topup)
        start += season.topup_period + rng.uniform(-60.0, 60.0)
    pulses.sort(key=lambda pu: pu.start)
    pulses = _drop_overlaps(pulses)

    return DisturbanceSchedule(
        i_max=float(i_max), sunrise=float(sunrise), sunset=float(sunset),
        cloud_events=clouds, dilution_pulses=pulses,
        t_amb_mean=season.t_amb_mean + float(rng.uniform(-1.0, 1.0)),
        t_amb_amp=season.t_amb_amp,
        do_hi=season.do_hi, do_lo=season.do_lo, q_air_on=season.q_air_on)


def _drop_overlaps(events):
    kept = []
    last_end = -math.inf
    for ev in events:
        if ev.start >= last_end:
            kept.append(ev)
            last_end = ev.start + ev.duration
    return kept


def day_input_series(sched: DisturbanceSchedule,
                     ts: float) -> list[ExogenousInputs]:
    """Expand a schedule into per-step inputs for one day.

    The aeration column is left at zero here because the blower reacts to
    the live oxygen state; the simulation loop fills it in step by step.
    """
    steps = int(round(SECONDS_PER_DAY / ts))
    return [
        ExogenousInputs(
            irradiance=diurnal_irradiance(k * ts, sched),
            q_air=0.0,
            q_dil=dilution_flow(k * ts, sched))
        for k in range(steps)
    ]


def build_day_inputs(day_index: int, season: SeasonConfig,
                     schedule_entropy: int, ts: float) -> list[ExogenousInputs]:
    """Per-step exogenous inputs for one seeded day of a season."""
    sched = derive_day_schedule(day_index, season, schedule_entropy)
    return day_input_series(sched, ts)


def with_air(x: ExogenousInputs, q_air: float) -> ExogenousInputs:
    return replace(x, q_air=q_air)
