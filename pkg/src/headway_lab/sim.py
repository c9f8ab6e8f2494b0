"""Synthetic AVL trajectory generator for a two-direction metro line.

Stands in for a calibrated microsimulation: trains traverse fixed signal
blocks at noisy speeds, dwell at stations, queue behind predecessors so
consecutive activations of a block stay at least ``min_separation`` apart,
and an optional share of southbound trains short-turn mid-line and re-enter
northbound service after a fixed turnback time.

All randomness is pre-drawn per train from numpy's PCG64 generator, so a
given (config, schedules, seed) triple reproduces the log byte for byte.
Distances in events are direction-relative: 0 is the departure terminal of
the event's direction.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .common import DIRECTIONS, NB, SB

SPEED_FLOOR_FPS = 5.0   # lower bound applied to every run-speed draw
DWELL_MIN_S = 10.0      # truncation point of the dwell distribution
_TRUNC_RETRIES = 100    # dwell redraws before clamping to DWELL_MIN_S


class ConfigError(ValueError):
    """Raised when a LineConfig or DispatchSchedule violates its invariants."""


@dataclass(frozen=True)
class LineConfig:
    """Static description of the line, its terminals and its noise model.

    Positions are feet on a global axis with 0 at the northbound departure
    terminal and ``line_length`` at the southbound departure terminal.
    """

    line_length: float
    block_length: float
    station_positions: tuple[float, ...]
    terminal_nb_position: float = 0.0
    terminal_sb_position: float | None = None
    short_turn_position: float | None = None
    short_turn_fraction: float = 0.0
    min_separation: float = 90.0
    dwell_mean: float = 25.0
    dwell_sd: float = 8.0
    run_speed_mean: float = 45.0
    run_speed_sd: float = 6.0
    service_start: float = 54000.0
    service_end: float = 64800.0
    turnback_time: float = 180.0

    def __post_init__(self):
        if self.terminal_sb_position is None:
            object.__setattr__(self, "terminal_sb_position", self.line_length)
        object.__setattr__(self, "station_positions", tuple(float(p) for p in self.station_positions))
        if not 0 < self.block_length <= self.line_length:
            raise ConfigError("block_length must satisfy 0 < block_length <= line_length")
        pos = self.station_positions
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ConfigError("station_positions must be strictly increasing")
        if pos and (pos[0] < 0 or pos[-1] > self.line_length):
            raise ConfigError("station_positions must lie within [0, line_length]")
        if not 0.0 <= self.short_turn_fraction <= 1.0:
            raise ConfigError("short_turn_fraction must be in [0, 1]")
        if self.short_turn_fraction > 0 and self.short_turn_position is None:
            raise ConfigError("short_turn_position required when short_turn_fraction > 0")
        if self.short_turn_position is not None and not 0 < self.short_turn_position < self.line_length:
            raise ConfigError("short_turn_position must be strictly inside the line")
        if self.min_separation <= 0:
            raise ConfigError("min_separation must be positive")
        if self.service_start >= self.service_end:
            raise ConfigError("service_start must precede service_end")
        if self.run_speed_mean <= 0 or self.dwell_mean < 0:
            raise ConfigError("speed/dwell means must be positive")

    @property
    def n_blocks(self) -> int:
        return int(math.ceil(self.line_length / self.block_length))

    def digest(self) -> str:
        """Stable identifier of the generating config."""
        body = json.dumps(
            {k: getattr(self, k) for k in self.__dataclass_fields__}, sort_keys=True
        ).encode()
        return hashlib.sha256(body).hexdigest()[:16]


@dataclass(frozen=True)
class DispatchSchedule:
    """Terminal departure times (seconds) for one direction."""

    direction: str
    departure_times: tuple[float, ...]

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "departure_times", tuple(float(t) for t in self.departure_times))
        times = self.departure_times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("departure_times must be strictly increasing")

    def check_separation(self, min_separation: float) -> None:
        times = self.departure_times
        for a, b in zip(times, times[1:]):
            if b - a < min_separation:
                raise ConfigError(
                    f"{self.direction} departures {a:.1f}s and {b:.1f}s are "
                    f"{b - a:.1f}s apart, below min_separation={min_separation:.1f}s"
                )


@dataclass(slots=True)
class TrajectoryEvent:
    """One signal-block activation. ``distance`` is feet from the departure
    terminal of ``direction``; ``headway`` stays None until enrichment."""

    replication_id: int
    train_id: int
    direction: str
    block_id: int
    distance: float
    timestamp: float
    headway: float | None = None


@dataclass
class TrajectoryLog:
    replication_id: int
    events: list[TrajectoryEvent]
    config_digest: str


# ---------------------------------------------------------------------------
# simulation internals

@dataclass(slots=True)
class _BlockStep:
    block_id: int
    entry_dist: float      # direction-relative feet at activation
    travel_time: float     # traversal incl. dwell of stations inside


@dataclass(slots=True)
class _Leg:
    train_id: int
    direction: str
    steps: list[_BlockStep]
    start_time: float
    next_leg: "_Leg | None" = None   # NB continuation of a short-turned SB train
    turnback: float = 0.0


def _station_dwells(config: LineConfig, rng: np.random.Generator) -> dict[float, float]:
    """Truncated-normal dwell per station position, min DWELL_MIN_S."""
    dwells = {}
    for pos in config.station_positions:
        value = rng.normal(config.dwell_mean, config.dwell_sd)
        tries = 0
        while value < DWELL_MIN_S and tries < _TRUNC_RETRIES:
            value = rng.normal(config.dwell_mean, config.dwell_sd)
            tries += 1
        dwells[pos] = max(value, DWELL_MIN_S)
    return dwells


def _draw_speeds(config: LineConfig, rng: np.random.Generator) -> np.ndarray:
    speeds = rng.normal(config.run_speed_mean, config.run_speed_sd, size=config.n_blocks)
    return np.maximum(speeds, SPEED_FLOOR_FPS)


def _segment_steps(config, direction, from_rel, to_rel, speeds, dwells):
    """Block steps covering direction-relative distances [from_rel, to_rel).

    Blocks partition [0, line_length] anchored at the direction's departure
    terminal; the first and last steps may be partial. Station dwell is folded
    into the travel time of the block stretch that contains the station.
    """
    length = config.line_length
    bl = config.block_length
    steps = []
    pos = from_rel
    while pos < to_rel - 1e-9:
        block_id = int(pos // bl)
        block_end = min((block_id + 1) * bl, length, to_rel)
        stretch = block_end - pos
        speed = speeds[min(block_id, len(speeds) - 1)]
        travel = stretch / speed
        for st_pos, dwell in dwells.items():
            st_rel = st_pos if direction == NB else length - st_pos
            if pos <= st_rel < block_end:
                travel += dwell
        steps.append(_BlockStep(block_id=block_id, entry_dist=pos, travel_time=travel))
        pos = block_end
    return steps


def _short_turn_flags(n_trains: int, fraction: float) -> list[bool]:
    """Deterministic quota selection: train i turns iff the running quota
    floor(fraction * trains_so_far) increments at i. Yields exactly
    floor(fraction * n_trains) short turns for any n_trains."""
    flags = []
    for i in range(n_trains):
        flags.append(math.floor((i + 1) * fraction) > math.floor(i * fraction))
    return flags


def _build_legs(config: LineConfig, schedules: dict[str, DispatchSchedule],
                rng: np.random.Generator) -> list[_Leg]:
    legs = []
    length = config.line_length
    next_train_id = 0

    for t_dep in schedules[NB].departure_times:
        speeds = _draw_speeds(config, rng)
        dwells = _station_dwells(config, rng)
        steps = _segment_steps(config, NB, 0.0, length, speeds, dwells)
        legs.append(_Leg(next_train_id, NB, steps, t_dep))
        next_train_id += 1

    sb_times = schedules[SB].departure_times
    turn_flags = _short_turn_flags(len(sb_times), config.short_turn_fraction)
    for t_dep, turns in zip(sb_times, turn_flags):
        speeds = _draw_speeds(config, rng)
        dwells = _station_dwells(config, rng)
        if turns:
            p = config.short_turn_position
            sb_steps = _segment_steps(config, SB, 0.0, length - p, speeds, dwells)
            nb_speeds = _draw_speeds(config, rng)
            nb_dwells = _station_dwells(config, rng)
            nb_steps = _segment_steps(config, NB, p, length, nb_speeds, nb_dwells)
            leg = _Leg(next_train_id, SB, sb_steps, t_dep)
            leg.next_leg = _Leg(next_train_id, NB, nb_steps, 0.0, turnback=config.turnback_time)
            legs.append(leg)
        else:
            steps = _segment_steps(config, SB, 0.0, length, speeds, dwells)
            legs.append(_Leg(next_train_id, SB, steps, t_dep))
        next_train_id += 1
    return legs


def simulate_replication(config: LineConfig, schedules, seed: int,
                         replication_id: int = 0) -> TrajectoryLog:
    """Run one replication and return its trajectory log.

    ``schedules`` is a pair of DispatchSchedule (one per direction, any
    order). Trains dispatched inside the service window run to completion;
    the log keeps every activation. Per (block, direction), activation
    times of distinct trains are at least ``min_separation`` apart, and a
    train enters a block only after its predecessor has left it.
    """
    by_dir = {s.direction: s for s in schedules}
    if set(by_dir) != set(DIRECTIONS):
        raise ConfigError("schedules must cover exactly the NB and SB directions")
    for sched in by_dir.values():
        sched.check_separation(config.min_separation)

    rng = np.random.Generator(np.random.PCG64(seed))
    legs = _build_legs(config, by_dir, rng)

    events: list[TrajectoryEvent] = []
    last_activation: dict[tuple[str, int], float] = {}
    occupant: dict[tuple[str, int], _Leg | None] = {}
    waiters: dict[tuple[str, int], list] = {}

    heap: list[tuple[float, int, str, _Leg, int]] = []
    seq = 0

    def push(time, action, leg, step_idx):
        nonlocal seq
        heapq.heappush(heap, (time, seq, action, leg, step_idx))
        seq += 1

    for leg in legs:
        push(leg.start_time, "enter", leg, 0)

    def release(key, t_now):
        occupant[key] = None
        queue = waiters.get(key)
        if queue:
            for earliest, w_leg, w_idx in queue:
                push(max(earliest, t_now), "enter", w_leg, w_idx)
            queue.clear()

    def finish_leg(leg, t_now):
        last = leg.steps[-1]
        release((leg.direction, last.block_id), t_now)
        if leg.next_leg is not None:
            nxt = leg.next_leg
            nxt.start_time = t_now + nxt.turnback
            push(nxt.start_time, "enter", nxt, 0)

    while heap:
        t, _, action, leg, idx = heapq.heappop(heap)
        if action == "exit":
            finish_leg(leg, t)
            continue
        step = leg.steps[idx]
        key = (leg.direction, step.block_id)
        if occupant.get(key) is not None:
            waiters.setdefault(key, []).append((t, leg, idx))
            continue
        allowed = last_activation.get(key, -math.inf) + config.min_separation
        if t < allowed:
            push(allowed, "enter", leg, idx)
            continue

        events.append(TrajectoryEvent(
            replication_id=replication_id,
            train_id=leg.train_id,
            direction=leg.direction,
            block_id=step.block_id,
            distance=step.entry_dist,
            timestamp=t,
        ))
        last_activation[key] = t
        occupant[key] = leg
        if idx > 0:
            release((leg.direction, leg.steps[idx - 1].block_id), t)
        if idx + 1 < len(leg.steps):
            push(t + step.travel_time, "enter", leg, idx + 1)
        else:
            push(t + step.travel_time, "exit", leg, idx)

    events.sort(key=lambda e: (e.timestamp, e.direction, e.train_id, e.block_id))
    return TrajectoryLog(replication_id=replication_id, events=events,
                         config_digest=config.digest())


def build_even_schedule(config: LineConfig, direction: str, even_headway: float,
                        jitter_sd: float, rng: np.random.Generator) -> DispatchSchedule:
    """Departures spaced ``even_headway`` apart with normal jitter on each gap,
    clamped so no gap drops below min_separation."""
    times = []
    t = config.service_start
    while t < config.service_end:
        times.append(t)
        gap = even_headway + (rng.normal(0.0, jitter_sd) if jitter_sd > 0 else 0.0)
        t += max(gap, config.min_separation)
    return DispatchSchedule(direction=direction, departure_times=tuple(times))


def derived_schedules(config: LineConfig, seed: int, even_headway: float,
                      jitter_sd: float) -> tuple[DispatchSchedule, DispatchSchedule]:
    """The (NB, SB) schedules generate_dataset builds for one replication."""
    sched_rng = np.random.Generator(np.random.PCG64([seed, 0x5C4ED]))
    return (
        build_even_schedule(config, NB, even_headway, jitter_sd, sched_rng),
        build_even_schedule(config, SB, even_headway, jitter_sd, sched_rng),
    )


def generate_dataset(config: LineConfig, n_replications: int, base_seed: int,
                     even_headway: float, jitter_sd: float = 60.0) -> list[TrajectoryLog]:
    """Simulate ``n_replications`` independent replications.

    Replication r uses seed base_seed + r for both its schedule jitter and
    its kinematic noise; schedules are even-headway with per-replication
    jitter on each departure gap.
    """
    if n_replications < 1:
        raise ConfigError("n_replications must be >= 1")
    if even_headway < config.min_separation:
        raise ConfigError("even_headway must be >= min_separation")
    logs = []
    for r in range(n_replications):
        seed = base_seed + r
        schedules = derived_schedules(config, seed, even_headway, jitter_sd)
        logs.append(simulate_replication(config, schedules, seed, replication_id=r))
    return logs


# ---------------------------------------------------------------------------
# log invariants and CSV round-trip

def check_log_invariants(log: TrajectoryLog, config: LineConfig) -> None:
    """Raise AssertionError if the log violates its structural invariants."""
    per_train: dict[tuple[int, str], TrajectoryEvent] = {}
    per_block: dict[tuple[str, int], float] = {}
    for ev in sorted(log.events, key=lambda e: e.timestamp):
        assert 0.0 <= ev.distance <= config.line_length, "distance outside the line"
        assert ev.timestamp >= config.service_start, "event before service start"
        if ev.headway is not None:
            assert ev.headway > 0, "non-positive headway"
        tkey = (ev.train_id, ev.direction)
        prev = per_train.get(tkey)
        if prev is not None:
            assert ev.timestamp > prev.timestamp, "timestamps not strictly increasing"
            assert ev.distance >= prev.distance, "distance decreased along travel"
        per_train[tkey] = ev
        bkey = (ev.direction, ev.block_id)
        if bkey in per_block:
            gap = ev.timestamp - per_block[bkey]
            assert gap >= config.min_separation - 1e-9, (
                f"separation {gap:.1f}s below minimum at block {bkey}")
        per_block[bkey] = ev.timestamp


def default_line_config(**overrides) -> LineConfig:
    """A 26.7-mile two-terminal line with a mid-line short turn, afternoon
    peak service, sized so the default grid spec covers it with 64 bins."""
    fields = dict(
        line_length=140800.0,
        block_length=1100.0,
        station_positions=tuple(4400.0 + 8800.0 * k for k in range(16)),
        terminal_nb_position=0.0,
        terminal_sb_position=140800.0,
        short_turn_position=46200.0,
        short_turn_fraction=0.4,
        min_separation=90.0,
        dwell_mean=25.0,
        dwell_sd=8.0,
        run_speed_mean=45.0,
        run_speed_sd=6.0,
        service_start=54000.0,   # 15:00, warm-up before the grid window
        service_end=64800.0,     # 18:00
        turnback_time=180.0,
    )
    fields.update(overrides)
    return LineConfig(**fields)


def load_line_config(path: str) -> LineConfig:
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    return default_line_config(**body)


CSV_HEADER = ["replication_id", "train_id", "direction", "block_id",
              "distance_ft", "timestamp_s", "headway_s"]


def log_to_csv(logs) -> str:
    """Serialize one log or a list of logs to the trajectory CSV format."""
    if isinstance(logs, TrajectoryLog):
        logs = [logs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for log in logs:
        for ev in log.events:
            writer.writerow([
                ev.replication_id, ev.train_id, ev.direction, ev.block_id,
                repr(float(ev.distance)), repr(float(ev.timestamp)),
                "" if ev.headway is None else repr(float(ev.headway)),
            ])
    return buf.getvalue()


def logs_from_csv(text: str, config_digest: str = "") -> list[TrajectoryLog]:
    """Parse the trajectory CSV format back into per-replication logs."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected trajectory CSV header: {header}")
    by_rep: dict[int, list[TrajectoryEvent]] = {}
    for row in reader:
        if not row:
            continue
        rep = int(row[0])
        by_rep.setdefault(rep, []).append(TrajectoryEvent(
            replication_id=rep,
            train_id=int(row[1]),
            direction=row[2],
            block_id=int(row[3]),
            distance=float(row[4]),
            timestamp=float(row[5]),
            headway=None if row[6] == "" else float(row[6]),
        ))
    return [TrajectoryLog(rep, events, config_digest) for rep, events in sorted(by_rep.items())]
