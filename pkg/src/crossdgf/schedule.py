"""Annealing power schedule and fine-grained operator ratio."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ScheduleConfig:
    t_x: float = 1800.0  # seconds
    t_x_sim: float = 20_000.0  # executions, for the simulated clock
    max_factor_exp: float = 10.0
    base_energy: int = 64

    def __post_init__(self):
        if not (self.t_x > 0 and self.t_x_sim > 0):
            raise ValueError("t_x must be positive")
        if not self.max_factor_exp > 0:
            raise ValueError("max_factor_exp must be positive")
        if self.base_energy < 1:
            raise ValueError("base_energy must be >= 1")


@dataclass(frozen=True)
class CampaignClock:
    t_global: float
    t_library: float = 0.0


def cooling(t: float, t_x: float) -> float:
    """Exploration temperature 20^(-t/t_x); 1 at start, tends to 0."""
    return 20.0 ** (-t / t_x)


def annealing_factor(risk: float, t: float, t_x: float, max_factor_exp: float = 10.0) -> float:
    temp = cooling(t, t_x)
    p = (1.0 - risk) * (1.0 - temp) + 0.5 * temp
    exp = max_factor_exp * (2.0 * p - 1.0)
    exp = min(max(exp, -max_factor_exp), max_factor_exp)
    return 2.0 ** exp


def assign_power(risk, clock: CampaignClock, cfg: ScheduleConfig, t_x: float | None = None) -> int:
    """Energy for one scheduling round of a seed with normalized ``risk``.

    ``t_x`` overrides the config value (the campaign passes the simulated-clock
    variant when running on executions).
    """
    t_x = cfg.t_x if t_x is None else t_x
    base = cfg.base_energy
    power_lib = 0.0
    if risk.R_library != -1:
        power_lib = base * annealing_factor(risk.R_library, clock.t_library, t_x, cfg.max_factor_exp)
    if power_lib > 0:
        # caller set may be incomplete; anything inside the library gets the best client power
        power_client = base * annealing_factor(0.0, clock.t_global, t_x, cfg.max_factor_exp)
    elif risk.R_client != -1:
        power_client = base * annealing_factor(risk.R_client, clock.t_global, t_x, cfg.max_factor_exp)
    else:
        power_client = float(base)
    return max(1, round(power_client + power_lib))


def fine_ratio(t: float, t_x: float, r_client: float, r_library: float) -> float:
    """Probability of drawing a mutation operator from the fine-only set."""
    ramp = 0.25 * (1.0 - cooling(t, t_x))
    if r_library >= 0:
        return ramp * 2.0 ** (1.0 - r_library)
    if r_client >= 0:
        return ramp * (2.0 ** (1.0 - r_client) - 1.0)
    return 0.0
