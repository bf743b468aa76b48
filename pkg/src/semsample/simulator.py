"""The episode environment: clips, channel, destination and policies glued
into one decision loop.

An episode starts with two bootstrap transmissions (the destination needs two
consecutive layouts to prime its predictor), then runs T decision steps.  At
each step the policy sees the current observation and picks transmit/skip;
transmitting costs closed-form expected energy, skipping displays a predicted
layout and is scored by its deviation from the true one.  A destination
resample request forces the next step's action to transmit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .agent import (
    AgentState,
    RewardConfig,
    SacNetworks,
    StateScaling,
    Transition,
    reward,
    select_action,
)
from .channel import (
    FadingParams,
    LinkBudget,
    expected_energy,
    sampled_energy,
)
from .ingest import FootageClip
from .layout import (
    SceneAnnotation,
    VisualLayout,
    encode_message,
    penalized_deviation,
    prediction_deviation,
    rasterize,
    semantic_change,
)
from .predictor import DestinationState, Feedback, PredictorConfig

__all__ = [
    "EpisodeConfig",
    "StepTrace",
    "EpisodeMetrics",
    "SamplingPolicy",
    "PeriodicPolicy",
    "NeverSamplePolicy",
    "AgentPolicy",
    "SamplingEnv",
    "run_episode",
    "compare_policies",
    "layout_history_to_json",
]


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one episode needs besides the clip itself."""

    steps: int = 150
    link: LinkBudget = field(default_factory=LinkBudget)
    fading_m: float = 6.0
    fading_m_s: float = 6.0
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    scaling: StateScaling = field(default_factory=StateScaling)
    energy_scale: float = 1.0
    energy_mode: str = "expected"  # or "stochastic"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 2:
            raise ValueError("episodes need at least 2 steps")
        if self.energy_mode not in ("expected", "stochastic"):
            raise ValueError(f"unknown energy mode {self.energy_mode!r}")

    def fading(self) -> FadingParams:
        return self.link.fading(self.fading_m, self.fading_m_s)


@dataclass(frozen=True)
class StepTrace:
    """Everything that happened in one decision step."""

    t: int
    action: int
    forced: bool
    packet_bits: int
    energy_j: float
    deviation: Optional[float]
    penalized: Optional[float]
    case3_deviation: Optional[float]
    reward: float
    chi: float
    queue_len: int


@dataclass
class EpisodeMetrics:
    """Per-episode aggregates plus the optional per-step trace."""

    cumulative_reward: float = 0.0
    total_energy_j: float = 0.0
    bootstrap_energy_j: float = 0.0
    mean_deviation: float = 0.0
    sample_count: int = 0
    steps: int = 0
    truncated: bool = False
    trace: Optional[list[StepTrace]] = None


class SamplingPolicy(Protocol):
    """Decides, per decision step, whether to transmit."""

    def decide(self, features: np.ndarray, t: int) -> int: ...


class PeriodicPolicy:
    """Samples whenever t is a multiple of the period (t counts from the
    bootstrap interval at 0, so the first in-episode sample lands at
    t = period)."""

    def __init__(self, period: int):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.period = period

    def decide(self, features: np.ndarray, t: int) -> int:
        return int(t % self.period == 0)


class NeverSamplePolicy:
    def decide(self, features: np.ndarray, t: int) -> int:
        return 0


class AgentPolicy:
    """Wraps trained networks; greedy for evaluation, stochastic for rollout."""

    def __init__(
        self,
        nets: SacNetworks,
        mode: str = "greedy",
        rng: Optional[np.random.Generator] = None,
    ):
        self.nets = nets
        self.mode = mode
        self.rng = rng

    def decide(self, features: np.ndarray, t: int) -> int:
        return select_action(features, self.nets, self.mode, self.rng)


class SamplingEnv:
    """MDP wrapper over clips, channel and destination.

    ``reset(new_scene=True)`` draws a fresh clip and start offset from the
    seeded stream; ``reset(new_scene=False)`` replays the previous choice, so
    blocks of episodes can share one initial scene.
    """

    def __init__(
        self,
        config: EpisodeConfig,
        clips: Sequence[FootageClip],
        record_trace: bool = False,
    ):
        if not clips:
            raise ValueError("need at least one clip")
        self.config = config
        self.clips = list(clips)
        self.fading = config.fading()
        self.scaling = config.scaling
        self.state_dim = config.scaling.state_dim
        self.record_trace = record_trace
        root = np.random.SeedSequence(config.seed)
        scene_ss, energy_ss = root.spawn(2)
        self._scene_rng = np.random.default_rng(scene_ss)
        self._energy_rng = np.random.default_rng(energy_ss)
        self._clip_index: Optional[int] = None
        self._offset: Optional[int] = None
        self.metrics: Optional[EpisodeMetrics] = None
        self.bootstrap_energy_j = 0.0

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, new_scene: bool = True) -> np.ndarray:
        if new_scene or self._clip_index is None:
            self._clip_index = int(self._scene_rng.integers(0, len(self.clips)))
            clip = self.clips[self._clip_index]
            # prefer offsets that leave room for a full episode (bootstrap
            # pair + T steps); short clips start at 0 and get truncated
            max_offset = len(clip) - (self.config.steps + 2)
            if len(clip) < 3:
                raise ValueError(f"clip {clip.name!r} too short for an episode")
            if max_offset < 0:
                self._offset = 0
            else:
                self._offset = int(self._scene_rng.integers(0, max_offset + 1))
        clip = self.clips[self._clip_index]
        offset = self._offset
        horizon = min(self.config.steps, len(clip) - offset - 2)
        self._truncated = horizon < self.config.steps
        self._horizon = horizon
        self._clip = clip
        self._t = 1
        self._t_hat_frame = offset + 1  # frame of the last sampled scene (STI 0)
        msg_prev = encode_message(clip.frames[offset])
        msg_cur = encode_message(clip.frames[offset + 1])
        e0 = self._transmit_energy(msg_prev.size_bits)
        e1 = self._transmit_energy(msg_cur.size_bits)
        self.bootstrap_energy_j = e0 + e1
        self.destination = DestinationState.bootstrap(
            msg_prev, msg_cur, self.config.predictor, second_time=0
        )
        self._window = np.zeros(self.scaling.window + 1, dtype=np.float64)
        self._pending_force = False
        self.metrics = EpisodeMetrics(
            total_energy_j=self.bootstrap_energy_j,
            bootstrap_energy_j=self.bootstrap_energy_j,
            truncated=self._truncated,
            trace=[] if self.record_trace else None,
        )
        self._dev_sum = 0.0
        self._dev_count = 0
        return self._observe()

    def _frame(self, t: int) -> SceneAnnotation:
        return self._clip.frames[self._offset + 1 + t]

    def _transmit_energy(self, size_bits: int) -> float:
        if self.config.energy_mode == "stochastic":
            return sampled_energy(size_bits, self.config.link, self.fading, self._energy_rng)
        return expected_energy(size_bits, self.config.link, self.fading)

    def _observe(self) -> np.ndarray:
        t = self._t
        scene = self._frame(t)
        chi = semantic_change(scene, self._clip.frames[self._t_hat_frame])
        self._window = np.roll(self._window, 1)
        self._window[0] = chi
        self._last_chi = chi
        state = AgentState(
            packet_bits=22 * scene.vehicle_count,
            chi_window=self._window.copy(),
            gain=self.fading.g_bar,
            gap=t - (self._t_hat_frame - self._offset - 1),
        )
        return self.scaling.features(state)

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        if self.metrics is None:
            raise RuntimeError("call reset() before step()")
        t = self._t
        if t > self._horizon:
            raise RuntimeError("episode already finished")
        forced = self._pending_force
        a = 1 if forced else int(action)
        scene = self._frame(t)
        cfg = self.config
        chi = self._last_chi
        if a == 1:
            msg = encode_message(scene)
            energy = self._transmit_energy(msg.size_bits)
            displayed, feedback = self.destination.step(t, msg)
            r = reward(1, energy * cfg.energy_scale, 0.0, cfg.reward)
            self._t_hat_frame = self._offset + 1 + t
            deviation = None
            penalized = None
            case3 = self.destination.last_comparison
            self.metrics.sample_count += 1
            self.metrics.total_energy_j += energy
            packet_bits = msg.size_bits
        else:
            displayed, feedback = self.destination.step(t, None)
            real = rasterize(scene, cfg.predictor.grid_width, cfg.predictor.grid_height)
            deviation = prediction_deviation(real, displayed)
            penalized = penalized_deviation(
                deviation, cfg.reward.deviation_threshold, cfg.reward.penalty
            )
            r = reward(0, 0.0, penalized, cfg.reward)
            energy = 0.0
            case3 = None
            self._dev_sum += deviation
            self._dev_count += 1
            packet_bits = 22 * scene.vehicle_count
        self._pending_force = feedback is Feedback.REQUEST_RESAMPLE
        self.metrics.cumulative_reward += r
        self.metrics.steps += 1
        if self.metrics.trace is not None:
            self.metrics.trace.append(
                StepTrace(
                    t=t,
                    action=a,
                    forced=forced,
                    packet_bits=packet_bits,
                    energy_j=energy,
                    deviation=deviation,
                    penalized=penalized,
                    case3_deviation=case3,
                    reward=r,
                    chi=chi,
                    queue_len=self.destination.queue_len,
                )
            )
        self._t += 1
        done = self._t > self._horizon
        if done:
            self.metrics.mean_deviation = (
                self._dev_sum / self._dev_count if self._dev_count else 0.0
            )
            next_features = np.zeros(self.state_dim, dtype=np.float64)
        else:
            next_features = self._observe()
        info = {
            "action": a,
            "forced": forced,
            "sampled": a == 1,
            "energy_j": energy,
            "deviation": deviation,
            "reward": r,
            "t": t,
        }
        return next_features, r, done, info


def run_episode(
    config: EpisodeConfig,
    clips: Sequence[FootageClip] | FootageClip,
    policy: SamplingPolicy,
    record_trace: bool = True,
    collect_transitions: bool = False,
) -> tuple[EpisodeMetrics, list[Transition]]:
    """Run one full episode under a policy; returns metrics and, on request,
    the recorded transition stream."""
    if isinstance(clips, FootageClip):
        clips = [clips]
    env = SamplingEnv(config, clips, record_trace=record_trace)
    state = env.reset(new_scene=True)
    transitions: list[Transition] = []
    done = False
    t = 1
    while not done:
        action = policy.decide(state, t)
        next_state, r, done, info = env.step(action)
        if collect_transitions:
            transitions.append(Transition(state, int(info["action"]), r, next_state, done))
        state = next_state
        t += 1
    assert env.metrics is not None
    return env.metrics, transitions


def compare_policies(
    config: EpisodeConfig,
    clips: Sequence[FootageClip],
    policies: dict[str, SamplingPolicy],
    seed: Optional[int] = None,
    record_trace: bool = False,
    on_result=None,
) -> list[dict]:
    """Evaluate every policy on every clip under shared per-clip seeds.

    Returns one row per (clip, policy) with the four episode metrics.  When
    ``on_result`` is given it is called with (clip_name, policy_name,
    metrics) after each episode, e.g. to archive traces.
    """
    if not clips:
        raise ValueError("need at least one clip")
    if not policies:
        raise ValueError("need at least one policy")
    base_seed = config.seed if seed is None else seed
    rows = []
    for clip_idx, clip in enumerate(clips):
        clip_seed = int(
            np.random.SeedSequence([base_seed, clip_idx]).generate_state(1)[0]
        )
        clip_config = _with_seed(config, clip_seed)
        for name, policy in policies.items():
            metrics, _ = run_episode(clip_config, clip, policy, record_trace=record_trace)
            if on_result is not None:
                on_result(clip.name, name, metrics)
            rows.append(
                {
                    "clip": clip.name,
                    "policy": name,
                    "cumulative_reward": metrics.cumulative_reward,
                    "total_energy_j": metrics.total_energy_j,
                    "mean_deviation": metrics.mean_deviation,
                    "sample_count": metrics.sample_count,
                }
            )
    return rows


def _with_seed(config: EpisodeConfig, seed: int) -> EpisodeConfig:
    return EpisodeConfig(
        steps=config.steps,
        link=config.link,
        fading_m=config.fading_m,
        fading_m_s=config.fading_m_s,
        predictor=config.predictor,
        reward=config.reward,
        scaling=config.scaling,
        energy_scale=config.energy_scale,
        energy_mode=config.energy_mode,
        seed=seed,
    )


def layout_history_to_json(history: Iterable[tuple[int, VisualLayout]]) -> str:
    """Dump a displayed-layout history as JSON; each grid row becomes a
    string of digit characters (0 background, 1..4 class codes)."""
    frames = []
    width = height = None
    for t, layout in history:
        width, height = layout.width, layout.height
        rows = ["".join(str(int(c)) for c in row) for row in layout.grid]
        frames.append({"t": t, "rows": rows})
    return json.dumps(
        {"width": width, "height": height, "frames": frames}, separators=(",", ":")
    )
