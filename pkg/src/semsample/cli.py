"""Command-line front end.

Four subcommands: ``train`` (learn a sampling policy on configured clips),
``evaluate`` (compare a snapshot against periodic baselines), ``channel-check``
(closed form vs Monte Carlo vs quadrature self-validation of the channel
math) and ``ingest`` (annotation XML to native clip JSON).

Exit codes are stable: 0 success, 2 usage/config error, 3 runtime failure
(divergence or failed self-check).  Every run that writes files also writes a
manifest with content digests, so reruns are diffable.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad

from . import __version__
from .agent import SacNetworks, Trainer, TrainingDiverged
from .channel import (
    FadingParams,
    expected_energy,
    moment,
    pdf,
    rate_bits_per_s,
    sample_gain,
    transmission_duration,
)
from .config import (
    ConfigError,
    build_clips,
    build_episode_config,
    build_link,
    build_sac_config,
    config_digest,
    default_config,
    load_config,
    resolve_config,
)
from .ingest import ClipParseError, clip_to_json, parse_detrac_xml
from .simulator import (
    AgentPolicy,
    NeverSamplePolicy,
    PeriodicPolicy,
    SamplingEnv,
    compare_policies,
)

log = logging.getLogger("semsample")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

CURVE_COLUMNS = ("episode", "cumulative_reward", "total_energy_j", "mean_deviation", "sample_count")
COMPARISON_COLUMNS = ("clip", "policy", "cumulative_reward", "total_energy_j", "mean_deviation", "sample_count")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, digest: str, seed: int,
                    outputs: list[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config_sha256": digest,
        "seed": seed,
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
        "wall_clock_s": time.monotonic() - started,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_config_arg(path: Optional[str]) -> dict:
    if path is None:
        return resolve_config(default_config())
    return resolve_config(load_config(path))


def _write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


def _build_policy(spec: str, nets: Optional[SacNetworks]):
    if spec == "agent":
        if nets is None:
            raise ConfigError("policy 'agent' needs a snapshot")
        return AgentPolicy(nets, mode="greedy")
    if spec == "always":
        return PeriodicPolicy(1)
    if spec == "never":
        return NeverSamplePolicy()
    if spec.startswith("periodic:"):
        try:
            return PeriodicPolicy(int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad periodic policy spec {spec!r}") from exc
    raise ConfigError(f"unknown policy spec {spec!r}")


def _snapshot_doc(trainer: Trainer, resolved: dict, episodes: int) -> dict:
    doc = trainer.nets.to_dict()
    doc["trained_episodes"] = episodes
    doc["state"] = dict(resolved["state"])
    return doc


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    resolved = _load_config_arg(args.config)
    if args.seed is not None:
        resolved["seed"] = args.seed
    if args.episodes is not None:
        resolved["training"]["episodes"] = args.episodes
    episodes = int(resolved["training"]["episodes"])
    seed = int(resolved["seed"])
    digest = config_digest(resolved)

    clips = build_clips(resolved["train_clips"], args.base_dir)
    episode_cfg = build_episode_config(resolved, seed=seed)
    sac_cfg = build_sac_config(resolved)
    env = SamplingEnv(episode_cfg, clips)
    trainer = Trainer(env, sac_cfg, seed=seed,
                      scene_refresh_every=int(resolved["training"]["scene_refresh_every"]))
    start_episode = 0
    if args.resume:
        doc = json.loads(Path(args.resume).read_text())
        trainer.load_networks(SacNetworks.from_dict(doc, sac_cfg))
        start_episode = int(doc.get("trained_episodes", 0))
        log.info("resumed from %s at episode %d", args.resume, start_episode)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("training %d episodes (seed %d) on %d clips", episodes, seed, len(clips))
    try:
        curves = trainer.train(episodes, start_episode=start_episode)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for stats in curves:
        log.debug("episode %d reward %.3f", stats.episode, stats.cumulative_reward)

    snapshot_path = out_dir / "snapshot.json"
    snapshot_path.write_text(json.dumps(
        _snapshot_doc(trainer, resolved, start_episode + episodes),
        separators=(",", ":"),
    ))
    curves_path = out_dir / "curves.csv"
    _write_csv(curves_path, CURVE_COLUMNS, [
        {
            "episode": s.episode,
            "cumulative_reward": s.cumulative_reward,
            "total_energy_j": s.total_energy_j,
            "mean_deviation": s.mean_deviation,
            "sample_count": s.sample_count,
        }
        for s in curves
    ])
    _write_manifest(out_dir, "train", digest, seed, [snapshot_path, curves_path], started)
    print(f"trained {episodes} episodes -> {snapshot_path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    resolved = _load_config_arg(args.config)
    if args.seed is not None:
        resolved["seed"] = args.seed
    seed = int(resolved["seed"])
    digest = config_digest(resolved)

    snapshot_doc = json.loads(Path(args.snapshot).read_text())
    sac_cfg = build_sac_config(resolved)
    nets = SacNetworks.from_dict(snapshot_doc, sac_cfg)
    snap_state = snapshot_doc.get("state")
    if snap_state is not None and snap_state != resolved["state"]:
        raise ConfigError(
            f"snapshot state settings {snap_state} differ from config {resolved['state']}"
        )

    if args.clips:
        from .ingest import parse_clip_json
        clips = [parse_clip_json(Path(p).read_text()) for p in args.clips]
    else:
        clips = build_clips(resolved["eval_clips"], args.base_dir)
    if not clips:
        raise ConfigError("no clips to evaluate")

    episode_cfg = build_episode_config(resolved, seed=seed)
    policies = {spec: _build_policy(spec, nets) for spec in resolved["eval_policies"]}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    traces = {}

    def on_result(clip_name: str, policy_name: str, metrics) -> None:
        if args.traces:
            traces[(clip_name, policy_name)] = metrics.trace

    rows = compare_policies(episode_cfg, clips, policies, seed=seed,
                            record_trace=args.traces, on_result=on_result)
    comparison_path = out_dir / "comparison.csv"
    _write_csv(comparison_path, COMPARISON_COLUMNS, rows)
    outputs.append(comparison_path)
    for (clip_name, policy_name), trace in sorted(traces.items()):
        safe = f"trace_{clip_name}_{policy_name}".replace(":", "-").replace("/", "-")
        path = out_dir / f"{safe}.jsonl"
        with path.open("w") as fh:
            for step in trace:
                fh.write(json.dumps({
                    "t": step.t,
                    "action": step.action,
                    "forced": step.forced,
                    "packet_bits": step.packet_bits,
                    "energy_j": step.energy_j,
                    "deviation": step.deviation,
                    "penalized": step.penalized,
                    "case3_deviation": step.case3_deviation,
                    "reward": step.reward,
                    "chi": step.chi,
                    "queue_len": step.queue_len,
                }, separators=(",", ":")) + "\n")
        outputs.append(path)
    _write_manifest(out_dir, "evaluate", digest, seed, outputs, started)
    print(f"evaluated {len(policies)} policies on {len(clips)} clips -> {comparison_path}")
    return EXIT_OK


def _check_line(name: str, value: float, reference: float, tolerance: float,
                failures: list[str]) -> None:
    rel = abs(value - reference) / max(abs(reference), 1e-300)
    status = "ok" if rel <= tolerance else "FAIL"
    if status == "FAIL":
        failures.append(name)
    print(f"  {name}: {value:.9g} vs {reference:.9g} (rel err {rel:.3g}, tol {tolerance:g}) {status}")


def cmd_channel_check(args: argparse.Namespace) -> int:
    resolved = _load_config_arg(args.config)
    if args.m is not None:
        resolved["channel"]["m"] = args.m
    if args.m_s is not None:
        resolved["channel"]["m_s"] = args.m_s
    link = build_link(resolved)
    try:
        fading = FadingParams(
            m=float(resolved["channel"]["m"]),
            m_s=float(resolved["channel"]["m_s"]),
            g_bar=link.g_bar,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    draws = sample_gain(fading, rng, size=args.draws)
    failures: list[str] = []

    print(f"channel self-check: m={fading.m}, m_s={fading.m_s}, g_bar={fading.g_bar:.6g}")
    norm, _ = quad(lambda g: pdf(fading, g), 0.0, np.inf, limit=200)
    _check_line("pdf normalization (quadrature)", norm, 1.0, 1e-6, failures)

    mean_closed = moment(fading, 1)
    mean_quad, _ = quad(lambda g: g * pdf(fading, g), 0.0, np.inf, limit=200)
    _check_line("mean: closed form vs g_bar", mean_closed, fading.g_bar, 1e-9, failures)
    _check_line("mean: quadrature vs closed form", mean_quad, mean_closed, 1e-6, failures)
    _check_line("mean: Monte Carlo vs closed form", float(draws.mean()), mean_closed, 0.02, failures)

    inv_closed = moment(fading, -1)
    inv_quad, _ = quad(lambda g: pdf(fading, g) / g, 0.0, np.inf, limit=200)
    _check_line("inverse moment: quadrature vs closed form", inv_quad, inv_closed, 1e-6, failures)
    _check_line("inverse moment: Monte Carlo vs closed form",
                float((1.0 / draws).mean()), inv_closed, 0.02, failures)
    print(f"  E[1/g] * g_bar = {inv_closed * fading.g_bar:.9g}")

    bits = 22.0
    delta = transmission_duration(bits, link)
    e_closed = expected_energy(bits, link, fading)
    e_moment = delta * link.snr_threshold * link.noise_power_w * inv_closed
    e_mc = delta * link.snr_threshold * link.noise_power_w * float((1.0 / draws).mean())
    print(f"  rate = {rate_bits_per_s(link):.6g} bit/s, delta(22 bit) = {delta:.6g} s")
    _check_line("energy: closed form vs moment identity", e_closed, e_moment, 1e-12, failures)
    _check_line("energy: Monte Carlo vs closed form", e_mc, e_closed, 0.02, failures)

    if failures:
        print(f"FAILED: {', '.join(failures)}", file=sys.stderr)
        return EXIT_RUNTIME
    print("all channel checks passed")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    started = time.monotonic()
    path = Path(args.xml)
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    clip = parse_detrac_xml(data, frame_width=args.width, frame_height=args.height,
                            name=args.name or path.stem)
    out_path = Path(args.out) if args.out else path.with_suffix(".json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(clip_to_json(clip))
    histogram = {1: 0, 2: 0, 3: 0, 4: 0}
    total = 0
    for frame in clip.frames:
        for vehicle in frame.vehicles:
            histogram[int(vehicle.vehicle_class)] += 1
            total += 1
    print(f"clip {clip.name!r}: {len(clip)} frames, {total} vehicle records")
    print(f"  class histogram: car={histogram[1]} bus={histogram[2]} "
          f"van={histogram[3]} others={histogram[4]}")
    print(f"  wrote {out_path} (sha256 {_sha256(out_path)[:16]}...)")
    return EXIT_OK


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semsample",
        description="agent-driven semantic sampling simulator",
    )
    parser.add_argument("--version", action="version", version=f"semsample {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the sampling agent")
    p_train.add_argument("--config", help="experiment config JSON")
    p_train.add_argument("--episodes", type=int, help="override training.episodes")
    p_train.add_argument("--seed", type=int, help="override the config seed")
    p_train.add_argument("--out", default="runs/train", help="output directory")
    p_train.add_argument("--resume", help="snapshot to continue from")
    p_train.add_argument("--base-dir", default=None, help="base dir for clip paths")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="compare policies on clips")
    p_eval.add_argument("--config", help="experiment config JSON")
    p_eval.add_argument("--snapshot", required=True, help="trained model snapshot")
    p_eval.add_argument("--clips", nargs="*", help="clip JSON files (override config)")
    p_eval.add_argument("--seed", type=int, help="override the config seed")
    p_eval.add_argument("--out", default="runs/eval", help="output directory")
    p_eval.add_argument("--traces", action="store_true", help="write per-step traces")
    p_eval.add_argument("--base-dir", default=None, help="base dir for clip paths")
    p_eval.set_defaults(func=cmd_evaluate)

    p_check = sub.add_parser("channel-check", help="validate the channel math")
    p_check.add_argument("--config", help="experiment config JSON")
    p_check.add_argument("--m", type=float, help="override multipath shape")
    p_check.add_argument("--m-s", dest="m_s", type=float, help="override shadowing shape")
    p_check.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws")
    p_check.add_argument("--seed", type=int, help="Monte Carlo seed")
    p_check.set_defaults(func=cmd_channel_check)

    p_ingest = sub.add_parser("ingest", help="convert annotation XML to clip JSON")
    p_ingest.add_argument("xml", help="annotation XML file")
    p_ingest.add_argument("--out", help="output clip JSON path")
    p_ingest.add_argument("--width", type=int, default=960, help="source frame width")
    p_ingest.add_argument("--height", type=int, default=540, help="source frame height")
    p_ingest.add_argument("--name", help="clip name override")
    p_ingest.set_defaults(func=cmd_ingest)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("SEMSAMPLE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ClipParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
