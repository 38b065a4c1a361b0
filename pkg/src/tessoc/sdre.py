"""Continuous-discrete state-dependent Riccati equation filter.

The estimate is propagated at a fixed prediction step by rebuilding the
state-dependent matrices at the current estimate and applying the exact
frozen-in-time discretization; measurement updates run every N-th step
(N = 1 gives the fully discrete filter). The error covariance is kept
symmetric positive definite by resymmetrization after every step and a
small jitter whenever an update drives the smallest eigenvalue to zero
or below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .discretize import discretize
from .errors import (
    FilterDivergenceError,
    InvalidConfigError,
    InvalidInputError,
    NumericalError,
)
from .materials import SocParams, state_of_charge, total_enthalpy
from .network import LpvSystem, Sensor
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

DEFAULT_SENSOR_VARIANCE = 0.007  # single-thermocouple noise variance [K^2]
DEFAULT_PROCESS_VARIANCE = 1e-7  # process noise diagonal [K^2]
_JITTER = 1e-12


def sensor_variances(sensors: Sequence[Sensor], sigma2: float = DEFAULT_SENSOR_VARIANCE) -> np.ndarray:
    """Measurement variances per output: sigma^2, halved for averaged pairs."""
    if sigma2 <= 0.0:
        raise InvalidConfigError(f"sensor variance must be positive, got {sigma2}")
    return np.array([0.5 * sigma2 if s.averaged else sigma2 for s in sensors])


@dataclass(frozen=True)
class NoiseModel:
    """Process covariance W [K^2] (n x n) and measurement covariance V [K^2] (p x p)."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        V = np.asarray(self.V, dtype=float)
        for name, mat in (("W", W), ("V", V)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise InvalidConfigError(f"NoiseModel.{name} must be square, got {mat.shape}")
            if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12):
                raise InvalidConfigError(f"NoiseModel.{name} must be symmetric")
        if np.any(np.linalg.eigvalsh(W) < -1e-12):
            raise InvalidConfigError("NoiseModel.W must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(V) <= 0.0):
            raise InvalidConfigError("NoiseModel.V must be positive definite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)

    @classmethod
    def build(
        cls,
        sensors: Sequence[Sensor],
        n: int,
        sigma2: float = DEFAULT_SENSOR_VARIANCE,
        process_variance: float = DEFAULT_PROCESS_VARIANCE,
    ) -> "NoiseModel":
        return cls(W=process_variance * np.eye(n), V=np.diag(sensor_variances(sensors, sigma2)))


@dataclass(frozen=True)
class FilterState:
    """Estimate x_hat [K], covariance P [K^2], step index k, and time t [s]."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x_hat, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if x.ndim != 1 or P.shape != (x.size, x.size):
            raise InvalidInputError(
                f"estimate/covariance shapes inconsistent: {x.shape} vs {P.shape}"
            )
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "P", P)


@dataclass(frozen=True)
class SampleSchedule:
    """Prediction step dt_predict [s] and updates every update_every-th step."""

    dt_predict: float = 0.0125
    update_every: int = 8

    def __post_init__(self):
        if not self.dt_predict > 0.0:
            raise InvalidConfigError(f"dt_predict must be positive, got {self.dt_predict}")
        if self.update_every < 1 or int(self.update_every) != self.update_every:
            raise InvalidConfigError(f"update_every must be an integer >= 1, got {self.update_every}")

    @property
    def sample_interval(self) -> float:
        return self.dt_predict * self.update_every

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_interval

    @classmethod
    def for_rate(cls, rate_hz: float, dt_predict: float = 0.0125) -> "SampleSchedule":
        """Schedule for a measurement rate that is an integer multiple of the step."""
        steps = 1.0 / (rate_hz * dt_predict)
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidConfigError(
                f"rate {rate_hz} S/s is not an integer number of {dt_predict} s steps"
            )
        return cls(dt_predict=dt_predict, update_every=int(round(steps)))


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(
    fs: FilterState,
    sys: LpvSystem,
    u: float,
    t_in: float,
    noise: NoiseModel,
    dt: float,
) -> FilterState:
    """One prediction step: discretize at the current estimate and propagate."""
    if not np.all(np.isfinite(fs.x_hat)):
        raise FilterDivergenceError(f"estimate diverged at step {fs.k} (t={fs.t:.6g} s)")
    A, B = sys.assemble(fs.x_hat, t_in)
    step = discretize(A, B, dt)
    x_next = step.phi @ fs.x_hat + step.gamma * u
    P_next = _symmetrize(step.phi @ fs.P @ step.phi.T + noise.W)
    if not np.all(np.isfinite(x_next)):
        raise FilterDivergenceError(f"estimate diverged at step {fs.k + 1} (t={fs.t + dt:.6g} s)")
    return FilterState(x_hat=x_next, P=P_next, k=fs.k + 1, t=fs.t + dt)


def kalman_gain(P_pred: np.ndarray, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    """K = P C' (C P C' + V)^-1 through a symmetric positive-definite solve."""
    P_pred = np.asarray(P_pred, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    S = _symmetrize(C @ P_pred @ C.T + V)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by V > 0
        raise NumericalError(
            f"innovation covariance not positive definite (cond ~ {np.linalg.cond(S):.3g}): {exc}"
        ) from exc
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            f"innovation covariance not positive definite (cond ~ {np.linalg.cond(S):.3g}): {exc}"
        ) from exc
    return scipy.linalg.cho_solve(factor, C @ P_pred).T


def update(fs: FilterState, y: np.ndarray, C: np.ndarray, V: np.ndarray) -> FilterState:
    """Measurement update with innovation y - C x_hat and PD-restoring jitter."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != fs.x_hat.size or y.shape != (C.shape[0],):
        raise InvalidInputError(
            f"dimension mismatch: y {y.shape}, C {C.shape}, state {fs.x_hat.shape}"
        )
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("measurement vector must be finite")
    K = kalman_gain(fs.P, C, V)
    innovation = y - C @ fs.x_hat
    x_new = fs.x_hat + K @ innovation
    P_new = _symmetrize((np.eye(fs.x_hat.size) - K @ C) @ fs.P)
    min_eig = float(np.linalg.eigvalsh(P_new)[0])
    if min_eig <= 0.0:
        # jitter just large enough to restore positive definiteness
        P_new = P_new + (_JITTER - min_eig) * np.eye(fs.x_hat.size)
    logger.debug(
        "update k=%d t=%.6g innovation=%s gain_norm=%.3g",
        fs.k,
        fs.t,
        np.array2string(innovation, precision=4),
        float(np.linalg.norm(K)),
    )
    return replace(fs, x_hat=x_new, P=P_new)


@dataclass
class FilterTrajectory:
    """Per-step filter outputs plus per-update diagnostics.

    ``innovation_norm`` is NaN on steps without an update. ``innovations``
    holds the raw per-update innovation vectors for whiteness diagnostics,
    and ``min_eig_p`` the post-jitter smallest covariance eigenvalue seen
    at each update.
    """

    t: np.ndarray
    x_hat: np.ndarray
    soc: np.ndarray
    trace_p: np.ndarray
    innovation_norm: np.ndarray
    update_steps: np.ndarray
    innovations: np.ndarray
    min_eig_p: np.ndarray
    final: FilterState

    def to_timeseries(self) -> TimeSeries:
        channels = {f"xhat_cv{j + 1}_K": self.x_hat[:, j] for j in range(self.x_hat.shape[1])}
        channels["soc"] = self.soc
        channels["trace_p_K2"] = self.trace_p
        channels["innovation_norm_K"] = self.innovation_norm
        return TimeSeries(t=self.t, channels=channels)

    def save_csv(self, path) -> None:
        self.to_timeseries().save_csv(path)


def run_filter(
    initial: FilterState,
    sys: LpvSystem,
    schedule: SampleSchedule,
    inputs: TimeSeries,
    measurements: TimeSeries,
    noise: NoiseModel,
    soc_params: Optional[SocParams] = None,
    t_end: Optional[float] = None,
    on_misaligned: str = "abort",
) -> FilterTrajectory:
    """Run the multi-rate predict/update recursion over a signal window.

    ``inputs`` needs channels ``mdot_kg_s`` and ``t_in_K`` (zero-order
    held between samples). ``measurements`` supplies one channel per
    sensor, ordered like the rows of the system's C matrix; timestamps
    must land on prediction-step boundaries within dt_predict/2. A
    measurement that misses every boundary triggers the ``on_misaligned``
    policy: "abort" raises, "skip" drops it with a warning. Given
    identical arguments the trajectory is bit-identical between runs.
    """
    if on_misaligned not in ("abort", "skip"):
        raise InvalidConfigError(f"on_misaligned must be 'abort' or 'skip', got {on_misaligned!r}")
    if measurements.matrix().shape[1] != sys.p:
        raise InvalidInputError(
            f"measurements provide {measurements.matrix().shape[1]} channels, C has {sys.p} rows"
        )
    dt = schedule.dt_predict
    t0 = float(initial.t)
    horizon = float(inputs.t[-1]) if t_end is None else float(t_end)
    n_steps = int(np.floor((horizon - t0) / dt + 1e-9))
    if n_steps < 1:
        raise InvalidInputError(f"input signals cover no prediction step after t={t0}")

    step_times = t0 + dt * np.arange(n_steps + 1)
    u_seq = inputs.zoh_many("mdot_kg_s", step_times[:-1])
    t_in_seq = inputs.zoh_many("t_in_K", step_times[:-1])

    y_matrix = measurements.matrix()
    t_meas = measurements.t
    tol = 0.5 * dt

    n = sys.n
    x_hist = np.empty((n_steps + 1, n))
    soc_hist = np.full(n_steps + 1, np.nan)
    trace_hist = np.empty(n_steps + 1)
    innov_hist = np.full(n_steps + 1, np.nan)
    update_steps: list[int] = []
    innovations: list[np.ndarray] = []
    min_eigs: list[float] = []

    def record(row: int, fs: FilterState) -> None:
        x_hist[row] = fs.x_hat
        trace_hist[row] = float(np.trace(fs.P))
        if soc_params is not None:
            soc_hist[row] = state_of_charge(
                total_enthalpy(fs.x_hat, sys.grid, sys.pcm), soc_params
            )

    fs = initial
    meas_idx = 0

    def apply_due_measurement(fs: FilterState, row: int) -> FilterState:
        nonlocal meas_idx
        while meas_idx < len(t_meas) and t_meas[meas_idx] <= fs.t + tol:
            if abs(t_meas[meas_idx] - fs.t) <= tol:
                y = y_matrix[meas_idx]
                innovation = y - sys.C @ fs.x_hat
                fs = update(fs, y, sys.C, noise.V)
                innov_hist[row] = float(np.linalg.norm(innovation))
                update_steps.append(row)
                innovations.append(innovation)
                min_eigs.append(float(np.linalg.eigvalsh(fs.P)[0]))
                meas_idx += 1
            elif on_misaligned == "abort":
                raise InvalidInputError(
                    f"measurement at t={t_meas[meas_idx]:.6g} s does not align with any "
                    f"prediction step (tolerance {tol:.6g} s)"
                )
            else:
                logger.warning(
                    "skipping measurement at t=%.6g s: misses the step grid", t_meas[meas_idx]
                )
                meas_idx += 1
        return fs

    fs = apply_due_measurement(fs, 0)
    record(0, fs)
    for k in range(n_steps):
        fs = predict(fs, sys, float(u_seq[k]), float(t_in_seq[k]), noise, dt)
        if (k + 1) % schedule.update_every == 0:
            fs = apply_due_measurement(fs, k + 1)
        record(k + 1, fs)

    return FilterTrajectory(
        t=step_times,
        x_hat=x_hist,
        soc=soc_hist,
        trace_p=trace_hist,
        innovation_norm=innov_hist,
        update_steps=np.asarray(update_steps, dtype=int),
        innovations=np.asarray(innovations) if innovations else np.empty((0, sys.p)),
        min_eig_p=np.asarray(min_eigs),
        final=fs,
    )
