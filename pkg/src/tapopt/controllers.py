"""Rule-based tap controllers: autonomous deadband control (ATC) and
voltage level control (VLC) from feeder-wide extremes.

Both are pure state machines: ``step(state, inputs) -> (state', command)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class AtcState:
    tap: int = 0
    v_ref: float = 0.99
    bandwidth: float = 0.0167
    delay: float = 60.0
    timer: float = 0.0
    tau_max: int = 16

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0 <= self.timer <= self.delay:
            raise ValueError("timer outside [0, delay]")


def atc_step(state: AtcState, v_local: float, dt: float):
    """Advance the deadband/time-delay rule by ``dt`` seconds.

    In band (|v - v_ref| <= bandwidth/2) the timer resets. Out of band it
    accumulates; once it reaches the delay the tap moves one step toward the
    reference and the timer resets. A move that would pass a tap limit is
    not issued.

    Returns ``(new_state, command)`` with command in {-1, 0, +1}.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = v_local - state.v_ref
    if abs(err) <= state.bandwidth / 2:
        return replace(state, timer=0.0), 0
    timer = state.timer + dt
    if timer < state.delay:
        return replace(state, timer=timer), 0
    cmd = -1 if err > 0 else 1
    if abs(state.tap + cmd) > state.tau_max:
        return replace(state, timer=state.delay), 0
    return replace(state, tap=state.tap + cmd, timer=0.0), cmd


def reference_to_tap(u: float, tau_max: int = 16, a_max: float = 1.1, a_min: float | None = None) -> int:
    """Nearest tap whose reference voltage is ``u``; clamped to the tap range."""
    a_min = 2.0 - a_max if a_min is None else a_min
    x = 2 * tau_max * (u - 1.0) / (a_max - a_min)
    tau = math.floor(x + 0.5 + 1e-9)
    return max(-tau_max, min(tau_max, tau))


def tap_to_reference(tau: int, tau_max: int = 16, a_max: float = 1.1, a_min: float | None = None) -> float:
    a_min = 2.0 - a_max if a_min is None else a_min
    return 1.0 + (a_max - a_min) * tau / (2 * tau_max)


@dataclass(frozen=True)
class VlcState:
    tap: int = 0
    u_old: float = 1.0
    u_upper: float = 1.05
    band: float = 0.1
    tau_max: int = 16
    a_max: float = 1.1
    dto_max: int = 1

    def reset(self) -> "VlcState":
        """Day-start state: reference 1 p.u. at tap 0."""
        return replace(self, tap=0, u_old=1.0)


@dataclass(frozen=True)
class VlcDecision:
    state: VlcState
    reference: float
    command: int
    unresolvable: bool


def vlc_triggered(u_max: float, u_min: float, upper: float = 1.05, band: float = 0.1) -> bool:
    return u_max > upper or u_min < upper - band


def vlc_step(state: VlcState, u_max: float, u_min: float) -> VlcDecision:
    """New reference from the measured extremes, then one bounded tap move.

    ``U_new = U_UL - (VB - Rng)/2 - (u_max - U_old)`` with ``Rng = u_max -
    u_min``. The target tap is the nearest to ``U_new``; the move is limited
    to ``dto_max`` steps, and the stored reference is that of the tap
    actually reached. ``unresolvable`` flags a spread wider than the band.
    """
    if u_max < u_min:
        raise ValueError("u_max below u_min")
    rng = u_max - u_min
    u_new = state.u_upper - (state.band - rng) / 2 - (u_max - state.u_old)
    target = reference_to_tap(u_new, state.tau_max, state.a_max)
    move = max(-state.dto_max, min(state.dto_max, target - state.tap))
    tap = max(-state.tau_max, min(state.tau_max, state.tap + move))
    new = replace(state, tap=tap, u_old=tap_to_reference(tap, state.tau_max, state.a_max))
    return VlcDecision(new, u_new, tap - state.tap, rng > state.band)
