"""Discrete-time unicycle models and their analytic Jacobians.

Two update rules are provided:

* ``kinematic``: first-order update with the heading advanced by the turn
  command directly, ``x' = x + v cos(phi + w) dt``, ``phi' = phi + w``.
* ``dynamic``: exact integration of constant (v, w) over one step, with a
  straight-line branch when ``|w| < omega_eps``.

The ``*_array`` functions broadcast over leading batch dimensions and are what
the cost and learning code call in inner loops. The dataclass wrappers are the
convenient single-step surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_OMEGA_EPS = 1e-6


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        _check_finite("EgoState", (self.x, self.y, self.heading))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "EgoState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class Control:
    speed: float
    turn_rate: float

    def __post_init__(self):
        _check_finite("Control", (self.speed, self.turn_rate))

    def as_array(self) -> np.ndarray:
        return np.array([self.speed, self.turn_rate], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Control":
        return cls(float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class StepConfig:
    dt: float = 0.1
    omega_eps: float = DEFAULT_OMEGA_EPS

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be finite and > 0, got {self.dt}")
        if not (np.isfinite(self.omega_eps) and self.omega_eps > 0):
            raise InvalidInputError(f"omega_eps must be finite and > 0, got {self.omega_eps}")


@dataclass(frozen=True)
class Jacobians:
    a_matrix: np.ndarray  # (3, 3) d next_state / d state
    b_matrix: np.ndarray  # (3, 2) d next_state / d control


def _check_finite(what, values):
    if not all(np.isfinite(v) for v in values):
        raise InvalidInputError(f"{what} has non-finite entries: {tuple(values)}")


# -- array kernels ---------------------------------------------------------


def step_kinematic_array(states, controls, dt):
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    x, y, phi = states[..., 0], states[..., 1], states[..., 2]
    v, w = controls[..., 0], controls[..., 1]
    ang = phi + w
    return np.stack([x + v * np.cos(ang) * dt, y + v * np.sin(ang) * dt, phi + w], axis=-1)


def jacobians_kinematic_array(states, controls, dt):
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    phi = states[..., 2]
    v, w = controls[..., 0], controls[..., 1]
    c = np.cos(phi + w) * dt
    s = np.sin(phi + w) * dt
    shape = np.broadcast(phi, v).shape
    a = np.zeros(shape + (3, 3))
    a[..., 0, 0] = a[..., 1, 1] = a[..., 2, 2] = 1.0
    a[..., 0, 2] = -v * s
    a[..., 1, 2] = v * c
    b = np.zeros(shape + (3, 2))
    b[..., 0, 0] = c
    b[..., 1, 0] = s
    b[..., 0, 1] = -v * s
    b[..., 1, 1] = v * c
    b[..., 2, 1] = 1.0
    return a, b


def _sinc(h):
    return np.sinc(h / np.pi)  # sin(h) / h


def _sinc_prime(h):
    """d/dh sin(h)/h, with a series near 0 where the closed form cancels."""
    h = np.asarray(h, dtype=float)
    small = np.abs(h) < 1e-2
    hs = np.where(small, 1.0, h)
    closed = (hs * np.cos(hs) - np.sin(hs)) / (hs * hs)
    h2 = h * h
    series = h * (-1.0 / 3.0 + h2 * (1.0 / 30.0 - h2 / 840.0))
    return np.where(small, series, closed)


def _turn_terms(phi, w, dt, omega_eps):
    """Return (straight mask, D_S, D_C, mid heading, half angle).

    D_S = (sin(phi + w dt) - sin(phi)) / w and D_C = (cos(phi + w dt) - cos(phi)) / w
    are evaluated in the equivalent half-angle form, which stays accurate as w -> 0.
    """
    straight = np.abs(w) < omega_eps
    half = 0.5 * w * dt
    mid = phi + half
    sinc = _sinc(half)
    d_s = dt * np.cos(mid) * sinc
    d_c = -dt * np.sin(mid) * sinc
    return straight, d_s, d_c, mid, half


def step_dynamic_array(states, controls, dt, omega_eps=DEFAULT_OMEGA_EPS):
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    x, y, phi = states[..., 0], states[..., 1], states[..., 2]
    v, w = controls[..., 0], controls[..., 1]
    straight, d_s, d_c, _, _ = _turn_terms(phi, w, dt, omega_eps)
    dx = np.where(straight, v * np.cos(phi) * dt, v * d_s)
    dy = np.where(straight, v * np.sin(phi) * dt, -v * d_c)
    # w * dt is exactly the printed zero increment when w == 0
    return np.stack([x + dx, y + dy, phi + w * dt], axis=-1)


def jacobians_dynamic_array(states, controls, dt, omega_eps=DEFAULT_OMEGA_EPS, exact_limit=True):
    """Jacobians of :func:`step_dynamic_array`.

    In the straight branch the printed table sets d/dw to zero. With
    ``exact_limit`` (the default) that column is replaced by the ``w -> 0``
    limit of the turning branch, ``(-v sin(phi) dt^2/2, v cos(phi) dt^2/2, dt)``,
    which is the true derivative of the continuous step map and what any
    finite-difference check or chain rule needs.
    """
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    phi = states[..., 2]
    v, w = controls[..., 0], controls[..., 1]
    straight, d_s, d_c, mid, half = _turn_terms(phi, w, dt, omega_eps)
    sp, cp = np.sin(phi), np.cos(phi)
    shape = np.broadcast(phi, v).shape

    a = np.zeros(shape + (3, 3))
    a[..., 0, 0] = a[..., 1, 1] = a[..., 2, 2] = 1.0
    a[..., 0, 2] = np.where(straight, -v * sp * dt, v * d_c)
    a[..., 1, 2] = np.where(straight, v * cp * dt, v * d_s)

    b = np.zeros(shape + (3, 2))
    b[..., 0, 0] = np.where(straight, cp * dt, d_s)
    b[..., 1, 0] = np.where(straight, sp * dt, -d_c)
    # (v / w) (cos(phi + w dt) dt - D_S) and (v / w) (sin(phi + w dt) dt + D_C), half-angle form
    sinc, dsinc = _sinc(half), _sinc_prime(half)
    sm, cm = np.sin(mid), np.cos(mid)
    scale = 0.5 * v * dt * dt
    b12 = scale * (cm * dsinc - sm * sinc)
    b22 = scale * (sm * dsinc + cm * sinc)
    if exact_limit:
        b[..., 0, 1] = np.where(straight, -0.5 * v * sp * dt * dt, b12)
        b[..., 1, 1] = np.where(straight, 0.5 * v * cp * dt * dt, b22)
        b[..., 2, 1] = dt
    else:
        b[..., 0, 1] = np.where(straight, 0.0, b12)
        b[..., 1, 1] = np.where(straight, 0.0, b22)
        b[..., 2, 1] = np.where(straight, 0.0, dt)
    return a, b


def rollout_states_array(initial, controls, dt, omega_eps=DEFAULT_OMEGA_EPS):
    """Integrate ``controls`` (..., T, 2) from ``initial`` (..., 3) with the dynamic model.

    Returns states of shape (..., T + 1, 3).
    """
    controls = np.asarray(controls, dtype=float)
    initial = np.asarray(initial, dtype=float)
    n_steps = controls.shape[-2]
    out = np.empty(np.broadcast_shapes(controls.shape[:-2], initial.shape[:-1]) + (n_steps + 1, 3))
    out[..., 0, :] = initial
    for t in range(n_steps):
        out[..., t + 1, :] = step_dynamic_array(out[..., t, :], controls[..., t, :], dt, omega_eps)
    return out


# -- single-step surface ---------------------------------------------------


def _unpack(s, u):
    if not isinstance(s, EgoState):
        s = EgoState.from_array(s)
    if not isinstance(u, Control):
        u = Control.from_array(u)
    return s.as_array(), u.as_array()


def step_kinematic(s: EgoState, u: Control, cfg: StepConfig = StepConfig()) -> EgoState:
    """Kinematic unicycle step; the heading advances by the raw turn command (no dt)."""
    sa, ua = _unpack(s, u)
    return EgoState.from_array(step_kinematic_array(sa, ua, cfg.dt))


def jacobians_kinematic(s: EgoState, u: Control, cfg: StepConfig = StepConfig()) -> Jacobians:
    sa, ua = _unpack(s, u)
    a, b = jacobians_kinematic_array(sa, ua, cfg.dt)
    return Jacobians(a, b)


def step_dynamic(s: EgoState, u: Control, cfg: StepConfig = StepConfig()) -> EgoState:
    sa, ua = _unpack(s, u)
    return EgoState.from_array(step_dynamic_array(sa, ua, cfg.dt, cfg.omega_eps))


def jacobians_dynamic(
    s: EgoState, u: Control, cfg: StepConfig = StepConfig(), exact_limit: bool = True
) -> Jacobians:
    sa, ua = _unpack(s, u)
    a, b = jacobians_dynamic_array(sa, ua, cfg.dt, cfg.omega_eps, exact_limit=exact_limit)
    return Jacobians(a, b)
