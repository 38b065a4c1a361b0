"""CSV-backed time series: datasets, input signals, and result trajectories.

All series share one shape: a strictly increasing time column plus named
channels. Values are written with 17 significant digits so a save/load
round trip is lossless for float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError

# Raw dataset column order: time, mass flow, inlet fluid, outlet fluid,
# then the five embedded thermocouples (laterally adjacent pairs a/b).
DATASET_COLUMNS = (
    "t_s",
    "mdot_kg_s",
    "tc0_K",
    "tc1_K",
    "tc2a_K",
    "tc2b_K",
    "tc3_K",
    "tc4a_K",
    "tc4b_K",
)

_FLOAT_FMT = "%.17g"


@dataclass
class TimeSeries:
    """Named channels over a strictly increasing time grid [s]."""

    t: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 1:
            raise InvalidInputError("time column must be one-dimensional")
        if len(self.t) > 1:
            bad = np.flatnonzero(np.diff(self.t) <= 0.0)
            if bad.size:
                row = int(bad[0]) + 1
                raise InvalidInputError(
                    f"timestamps must be strictly increasing; row {row} "
                    f"(t={self.t[row]}) does not advance past t={self.t[row - 1]}"
                )
        coerced = {}
        for name, values in self.channels.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != self.t.shape:
                raise InvalidInputError(
                    f"channel {name!r} has {arr.shape[0] if arr.ndim else 0} samples, "
                    f"expected {len(self.t)}"
                )
            coerced[name] = arr
        self.channels = coerced

    def __len__(self) -> int:
        return len(self.t)

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise InvalidInputError(
                f"no channel {name!r}; available: {', '.join(self.channels) or 'none'}"
            ) from None

    def matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Channels stacked as columns, in the given (or stored) order."""
        names = list(self.channels) if names is None else list(names)
        if not names:
            return np.empty((len(self.t), 0))
        return np.column_stack([self.channel(name) for name in names])

    def select(self, names: Sequence[str]) -> "TimeSeries":
        return TimeSeries(t=self.t.copy(), channels={n: self.channel(n).copy() for n in names})

    def decimate(self, factor: int) -> "TimeSeries":
        """Keep every factor-th row, starting from the first."""
        if factor < 1 or int(factor) != factor:
            raise InvalidInputError(f"decimation factor must be a positive integer, got {factor}")
        sl = slice(None, None, int(factor))
        return TimeSeries(
            t=self.t[sl].copy(), channels={k: v[sl].copy() for k, v in self.channels.items()}
        )

    def sample_rate(self, jitter_tol: float = 0.01) -> float:
        """Mean rate [1/s]; requires spacing uniform within the jitter tolerance."""
        if len(self.t) < 2:
            raise InvalidInputError("need at least two samples to define a rate")
        dt = np.diff(self.t)
        mean_dt = float(dt.mean())
        worst = float(np.max(np.abs(dt - mean_dt)))
        if worst > jitter_tol * mean_dt:
            raise InvalidInputError(
                f"sample spacing varies by {worst:.3g} s against a mean of {mean_dt:.3g} s; "
                f"exceeds the {jitter_tol:.0%} jitter tolerance"
            )
        return 1.0 / mean_dt

    def zoh(self, name: str) -> Callable[[float], float]:
        """Zero-order-hold lookup: value at the latest sample time <= t."""
        values = self.channel(name)
        t_grid = self.t

        def lookup(t: float) -> float:
            idx = int(np.searchsorted(t_grid, t, side="right")) - 1
            return float(values[max(idx, 0)])

        return lookup

    def zoh_many(self, name: str, times: np.ndarray) -> np.ndarray:
        """Vectorized zero-order hold over an array of query times."""
        idx = np.searchsorted(self.t, np.asarray(times, dtype=float), side="right") - 1
        return self.channel(name)[np.maximum(idx, 0)]

    def save_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = self.channel_names
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", *names])
            columns = [self.t] + [self.channels[n] for n in names]
            for row in zip(*columns):
                writer.writerow([_FLOAT_FMT % v for v in row])

    @classmethod
    def load_csv(cls, path, required: Optional[Sequence[str]] = None) -> "TimeSeries":
        path = Path(path)
        if not path.exists():
            raise InvalidInputError(f"no such file: {path}")
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InvalidInputError(f"{path}: file is empty") from None
            header = [h.strip() for h in header]
            if not header or header[0] != "t_s":
                raise InvalidInputError(f"{path}: first column must be 't_s', got {header[:1]}")
            if required is not None:
                missing = [c for c in required if c not in header]
                if missing:
                    raise InvalidInputError(f"{path}: missing columns: {', '.join(missing)}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise InvalidInputError(
                        f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                    )
                try:
                    values = [float(cell) for cell in row]
                except ValueError as exc:
                    raise InvalidInputError(f"{path}: row {lineno}: {exc}") from None
                if not all(np.isfinite(v) for v in values):
                    raise InvalidInputError(f"{path}: row {lineno} contains a NaN or infinity")
                rows.append(values)
        if not rows:
            raise InvalidInputError(f"{path}: no data rows")
        data = np.asarray(rows)
        t = data[:, 0]
        diffs = np.diff(t)
        bad = np.flatnonzero(diffs <= 0.0)
        if bad.size:
            raise InvalidInputError(
                f"{path}: row {int(bad[0]) + 3}: time {t[bad[0] + 1]} does not advance "
                f"past {t[bad[0]]}"
            )
        channels = {name: data[:, k + 1] for k, name in enumerate(header[1:])}
        return cls(t=t, channels=channels)


def load_dataset(path) -> TimeSeries:
    """Load a raw measurement log and derive the pair-averaged channels.

    Expects the exact column set in :data:`DATASET_COLUMNS`. The averaged
    channels ``tc2_K`` and ``tc4_K`` (means of the a/b pairs) are added,
    matching how the paired thermocouples feed a single output each.
    """
    ts = TimeSeries.load_csv(path, required=DATASET_COLUMNS[1:])
    ts.channels["tc2_K"] = 0.5 * (ts.channel("tc2a_K") + ts.channel("tc2b_K"))
    ts.channels["tc4_K"] = 0.5 * (ts.channel("tc4a_K") + ts.channel("tc4b_K"))
    return ts
