"""Destination-side predictive frame interpolation.

While the source stays silent, the destination keeps displaying something:
a queue of pre-computed predicted layouts is popped once per sensing
interval, refilled either from the two most recently received scenes (after
a reception) or from the two most recently displayed layouts (when the queue
runs dry mid-silence).

The reference predictor extrapolates constant velocity.  It works on
annotations when it has them (per-track box velocity) and falls back to
per-class centroid shift when only raster layouts are available.  A learned
predictor can be slotted in by implementing :class:`LayoutPredictor`.
"""
from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layout import (
    BoundingBox,
    SceneAnnotation,
    SemanticMessage,
    VehicleClass,
    VehicleRecord,
    VisualLayout,
    decode_message,
    prediction_deviation,
    rasterize,
)

__all__ = [
    "PredictorConfig",
    "LayoutPredictor",
    "ConstantVelocityPredictor",
    "Feedback",
    "DestinationState",
]


@dataclass(frozen=True)
class PredictorConfig:
    """Prediction horizon, grid dimensions and the resample threshold.

    ``max_track_speed`` (normalized units per interval) rejects implausible
    per-track velocities: decoded scenes carry positional track ids, so an
    entry or exit can pair unrelated vehicles, and the implied jump would
    otherwise whip predictions across the frame.  Rejected tracks are held
    static like freshly appeared ones.  ``None`` disables the guard.
    """

    horizon: int = 5
    grid_width: int = 120
    grid_height: int = 80
    deviation_threshold: float = 0.07
    max_track_speed: Optional[float] = None

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.max_track_speed is not None and self.max_track_speed <= 0:
            raise ValueError("max_track_speed must be positive or None")


class Feedback(enum.Enum):
    NONE = "none"
    REQUEST_RESAMPLE = "request_resample"


class LayoutPredictor(ABC):
    """Produces the next ``horizon`` layouts from two past observations."""

    @abstractmethod
    def predict_scenes(
        self,
        older: SceneAnnotation,
        newer: SceneAnnotation,
        gap: int,
        horizon: int,
    ) -> list[VisualLayout]:
        """Predict from two annotated scenes ``gap`` intervals apart."""

    @abstractmethod
    def predict_layouts(
        self,
        older: VisualLayout,
        newer: VisualLayout,
        gap: int,
        horizon: int,
    ) -> list[VisualLayout]:
        """Predict from two raster layouts ``gap`` intervals apart."""

    def predict(self, older, newer, gap: int, horizon: int) -> list[VisualLayout]:
        """Dispatch on input kind (scene pair or layout pair)."""
        if isinstance(older, SceneAnnotation) and isinstance(newer, SceneAnnotation):
            return self.predict_scenes(older, newer, gap, horizon)
        if isinstance(older, VisualLayout) and isinstance(newer, VisualLayout):
            return self.predict_layouts(older, newer, gap, horizon)
        raise TypeError("predict needs two scenes or two layouts")


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


class ConstantVelocityPredictor(LayoutPredictor):
    """Linear extrapolation of per-track boxes or per-class pixel masks."""

    def __init__(self, config: PredictorConfig):
        self.config = config

    def predict_scenes(self, older, newer, gap, horizon):
        if gap < 1:
            raise ValueError("gap between the two inputs must be >= 1")
        old = {v.track_id: v for v in older.vehicles}
        cap = self.config.max_track_speed
        tracks = []
        for rec in newer.vehicles:
            prev = old.get(rec.track_id)
            if prev is None:
                velocity = (0.0, 0.0)  # no motion evidence yet
            else:
                # track the box center and hold the newer box's size: corner
                # coordinates quantize independently on the wire, and
                # extrapolating them separately turns that noise into boxes
                # that steadily inflate or collapse
                a = prev.box
                b = rec.box
                velocity = (
                    ((b.b1 + b.b3) - (a.b1 + a.b3)) / (2.0 * gap),
                    ((b.b2 + b.b4) - (a.b2 + a.b4)) / (2.0 * gap),
                )
                if cap is not None and max(abs(v) for v in velocity) > cap:
                    velocity = (0.0, 0.0)  # implausible pairing
            tracks.append((rec, velocity))
        layouts = []
        for k in range(1, horizon + 1):
            records = []
            for rec, (vx, vy) in tracks:
                b1 = rec.box.b1 + k * vx
                b3 = rec.box.b3 + k * vx
                b2 = rec.box.b2 + k * vy
                b4 = rec.box.b4 + k * vy
                if b3 <= 0.0 or b1 >= 1.0 or b4 <= 0.0 or b2 >= 1.0:
                    continue  # fully out of frame: drop the track
                records.append(
                    VehicleRecord(
                        track_id=rec.track_id,
                        vehicle_class=rec.vehicle_class,
                        box=BoundingBox(*map(_clamp01, (b1, b2, b3, b4))),
                    )
                )
            scene = SceneAnnotation(frame_index=0, vehicles=tuple(records))
            layouts.append(
                rasterize(scene, self.config.grid_width, self.config.grid_height)
            )
        return layouts

    def predict_layouts(self, older, newer, gap, horizon):
        if gap < 1:
            raise ValueError("gap between the two inputs must be >= 1")
        if older.grid.shape != newer.grid.shape:
            raise ValueError("layout dimensions differ")
        height, width = newer.grid.shape
        shifts = []
        for cls in VehicleClass:  # ascending class code: higher codes paint last
            rows, cols = np.nonzero(newer.grid == cls)
            if rows.size == 0:
                continue
            old_rows, old_cols = np.nonzero(older.grid == cls)
            if old_rows.size == 0:
                dr = dc = 0.0  # class just appeared: hold static
            else:
                dr = (rows.mean() - old_rows.mean()) / gap
                dc = (cols.mean() - old_cols.mean()) / gap
            shifts.append((int(cls), rows, cols, dr, dc))
        layouts = []
        for k in range(1, horizon + 1):
            grid = np.zeros((height, width), dtype=np.uint8)
            for code, rows, cols, dr, dc in shifts:
                r = rows + int(np.rint(k * dr))
                c = cols + int(np.rint(k * dc))
                keep = (r >= 0) & (r < height) & (c >= 0) & (c < width)
                grid[r[keep], c[keep]] = code
            layouts.append(VisualLayout(grid))
        return layouts


class DestinationState:
    """Destination bookkeeping: what to display each interval, and when to
    ask the source to sample again.

    Single-owner mutable state; advance it from one logical thread only.
    """

    def __init__(
        self,
        config: PredictorConfig,
        predictor: Optional[LayoutPredictor] = None,
        record_history: bool = False,
    ):
        self.config = config
        self.predictor = predictor or ConstantVelocityPredictor(config)
        self.pending: deque[VisualLayout] = deque()
        self._last_displayed: deque[VisualLayout] = deque(maxlen=2)
        self._prev_received: Optional[tuple[SceneAnnotation, int]] = None
        self._last_received: Optional[tuple[SceneAnnotation, int]] = None
        self.last_comparison: Optional[float] = None
        self.history: Optional[list[tuple[int, VisualLayout]]] = (
            [] if record_history else None
        )

    @classmethod
    def bootstrap(
        cls,
        first_message: SemanticMessage,
        second_message: SemanticMessage,
        config: PredictorConfig,
        predictor: Optional[LayoutPredictor] = None,
        second_time: int = 0,
        record_history: bool = False,
    ) -> "DestinationState":
        """Case 1: two consecutive initial receptions prime the queue."""
        state = cls(config, predictor, record_history)
        older = decode_message(first_message)
        newer = decode_message(second_message)
        for scene, t in ((older, second_time - 1), (newer, second_time)):
            layout = rasterize(scene, config.grid_width, config.grid_height)
            state._last_displayed.append(layout)
            if state.history is not None:
                state.history.append((t, layout))
        state._prev_received = (older, second_time - 1)
        state._last_received = (newer, second_time)
        state.pending = deque(
            state.predictor.predict_scenes(older, newer, 1, config.horizon)
        )
        return state

    @property
    def t_hat(self) -> int:
        """Timestamp of the most recently received sample."""
        if self._last_received is None:
            raise RuntimeError("destination not bootstrapped")
        return self._last_received[1]

    @property
    def queue_len(self) -> int:
        return len(self.pending)

    def step(
        self, t: int, received: Optional[SemanticMessage] = None
    ) -> tuple[VisualLayout, Feedback]:
        """Advance one sensing interval; returns the displayed layout and a
        flag that, when set, asks the source to sample at t+1.

        Exactly one layout is displayed per call for any reception pattern.
        """
        if self._last_received is None:
            raise RuntimeError("destination not bootstrapped (Case 1 missing)")
        if not self.pending:
            # Case 2b: chain a new round from the last two displayed layouts
            older, newer = self._last_displayed[0], self._last_displayed[1]
            self.pending = deque(
                self.predictor.predict_layouts(older, newer, 1, self.config.horizon)
            )
        predicted = self.pending.popleft()
        feedback = Feedback.NONE
        self.last_comparison = None
        if received is None:
            displayed = predicted  # Case 2a
        else:
            # Case 3: display the real layout, compare against the prediction
            scene = decode_message(received)
            displayed = rasterize(scene, self.config.grid_width, self.config.grid_height)
            deviation = prediction_deviation(displayed, predicted)
            self.last_comparison = deviation
            prev_scene, prev_time = self._last_received
            gap = t - prev_time
            if gap < 1:
                raise RuntimeError(f"reception at t={t} not after t_hat={prev_time}")
            self.pending = deque(
                self.predictor.predict_scenes(prev_scene, scene, gap, self.config.horizon)
            )
            self._prev_received = self._last_received
            self._last_received = (scene, t)
            if deviation > self.config.deviation_threshold:
                feedback = Feedback.REQUEST_RESAMPLE
        self._last_displayed.append(displayed)
        if self.history is not None:
            self.history.append((t, displayed))
        return displayed, feedback
