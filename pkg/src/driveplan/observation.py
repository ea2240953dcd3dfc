"""Observation types shared by the filter, the POMDP model, and the harness."""
from __future__ import annotations

from dataclasses import dataclass

AgentId = int


@dataclass(frozen=True, slots=True)
class ObservationNoise:
    pos: float = 0.3  # m, per axis
    heading: float = 0.05  # rad
    speed: float = 0.3  # m/s


@dataclass(frozen=True, slots=True)
class AgentObs:
    x: float
    y: float
    heading: float
    speed: float


@dataclass(frozen=True, slots=True)
class Observation:
    t: float
    agents: dict[AgentId, AgentObs]
