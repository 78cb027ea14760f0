"""Deterministic timeline simulation of collaborative inference.

Four execution modes over the same workload description:

  aggregate-edge  all devices compute in parallel, ship features to the
                  central node once, which then fuses them
  pipe-edge       devices run as pipeline segments in device order, with
                  inter-segment transfers; the last device runs the head
  distri-edge     per-layer rounds: every device computes a slice of each
                  layer, then synchronizes with the central node
  single-edge     one device executes the whole workload alone

Accounting: ``busy_ms`` is processor-active time (compute + aggregation),
``transmit_ms`` is radio time, and ``idle_ms = end_to_end - busy``, so a
device waiting on the network counts as idle even while its radio is
draining (the processor has nothing to do).  Energy is
busy * busy_power + idle * idle_power, converted mW*ms -> mJ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidWorkload
from .model import DecompositionPolicy, DeviceFleet, TransformerConfig

MODES = ("aggregate-edge", "pipe-edge", "distri-edge", "single-edge")


@dataclass(frozen=True)
class Workload:
    """Mode-independent inputs for one inference.

    ``compute_ms`` is each device's sub-model (or segment) time;
    ``feature_bits`` the data volume it forwards; ``aggregate_ms`` the fusion
    cost on the finishing device.  ``distri_layers``/``sync_bits`` shape the
    per-layer synchronization of distri-edge; ``single_ms`` overrides the
    single-edge compute time (default: sum of compute_ms).
    """

    compute_ms: tuple[float, ...]
    feature_bits: tuple[float, ...]
    aggregate_ms: float = 0.0
    distri_layers: int = 1
    sync_bits: float = 0.0
    single_ms: float | None = None

    def __post_init__(self):
        if len(self.compute_ms) != len(self.feature_bits):
            raise InvalidWorkload("compute_ms and feature_bits lengths differ")
        if any(c < 0 for c in self.compute_ms):
            raise InvalidWorkload("compute times must be >= 0")
        if any(b < 0 for b in self.feature_bits):
            raise InvalidWorkload("feature sizes must be >= 0")
        if self.aggregate_ms < 0:
            raise InvalidWorkload("aggregate_ms must be >= 0")
        if self.distri_layers < 1:
            raise InvalidWorkload("distri_layers must be >= 1")
        if self.sync_bits < 0:
            raise InvalidWorkload("sync_bits must be >= 0")
        if self.single_ms is not None and self.single_ms < 0:
            raise InvalidWorkload("single_ms must be >= 0")


@dataclass(frozen=True)
class TimelineEvent:
    device: str
    phase: str  # compute | transmit | aggregate | idle
    start_ms: float
    end_ms: float


@dataclass(frozen=True)
class DeviceStats:
    name: str
    busy_ms: float
    transmit_ms: float
    idle_ms: float
    energy_mj: float


@dataclass(frozen=True)
class SimReport:
    mode: str
    end_to_end_ms: float
    device_stats: tuple[DeviceStats, ...]
    events: tuple[TimelineEvent, ...]
    transmission_fraction: float
    total_energy_mj: float


def _check(workload: Workload, fleet: DeviceFleet) -> None:
    if len(workload.compute_ms) != len(fleet):
        raise InvalidWorkload(
            f"workload describes {len(workload.compute_ms)} devices, "
            f"fleet has {len(fleet)}")


def _finalize(mode: str, fleet: DeviceFleet, active: dict[int, list],
              end: float) -> SimReport:
    """Fill idle gaps, accumulate per-device stats, price the energy."""
    events: list[TimelineEvent] = []
    stats: list[DeviceStats] = []
    for idx in sorted(active):
        dev = fleet.devices[idx]
        busy = 0.0
        transmit = 0.0
        cursor = 0.0
        for start, stop, phase in sorted(active[idx]):
            if start > cursor:
                events.append(TimelineEvent(dev.name, "idle", cursor, start))
            events.append(TimelineEvent(dev.name, phase, start, stop))
            if phase == "transmit":
                transmit += stop - start
            else:
                busy += stop - start
            cursor = stop
        if cursor < end:
            events.append(TimelineEvent(dev.name, "idle", cursor, end))
        idle = end - busy
        energy = (busy * dev.busy_power + idle * dev.idle_power) * 1e-3
        stats.append(DeviceStats(dev.name, busy, transmit, idle, energy))

    total_busy = sum(s.busy_ms for s in stats)
    total_transmit = sum(s.transmit_ms for s in stats)
    active_time = total_busy + total_transmit
    fraction = total_transmit / active_time if active_time > 0 else 0.0
    return SimReport(mode, end, tuple(stats), tuple(events), fraction,
                     sum(s.energy_mj for s in stats))


def _sim_aggregate(workload: Workload, fleet: DeviceFleet,
                   serialized_ingress: bool) -> SimReport:
    central = fleet.central_index
    active: dict[int, list] = {i: [] for i in range(len(fleet))}
    arrivals = []
    ingress_free = 0.0
    for i, dev in enumerate(fleet.devices):
        c = workload.compute_ms[i]
        active[i].append((0.0, c, "compute"))
        if i == central:
            arrivals.append(c)
            continue
        start = c
        if serialized_ingress:
            start = max(start, ingress_free)
        stop = start + workload.feature_bits[i] / dev.bandwidth
        active[i].append((start, stop, "transmit"))
        ingress_free = stop
        arrivals.append(stop)
    agg_start = max(arrivals)
    end = agg_start + workload.aggregate_ms
    if workload.aggregate_ms > 0:
        active[central].append((agg_start, end, "aggregate"))
    return _finalize("aggregate-edge", fleet, active, end)


def _sim_pipe(workload: Workload, fleet: DeviceFleet) -> SimReport:
    active: dict[int, list] = {i: [] for i in range(len(fleet))}
    t = 0.0
    n = len(fleet)
    for i, dev in enumerate(fleet.devices):
        c = workload.compute_ms[i]
        active[i].append((t, t + c, "compute"))
        t += c
        if i < n - 1 and workload.feature_bits[i] > 0:
            x = workload.feature_bits[i] / dev.bandwidth
            active[i].append((t, t + x, "transmit"))
            t += x
    if workload.aggregate_ms > 0:
        active[n - 1].append((t, t + workload.aggregate_ms, "aggregate"))
    t += workload.aggregate_ms
    return _finalize("pipe-edge", fleet, active, t)


def _sim_distri(workload: Workload, fleet: DeviceFleet) -> SimReport:
    central = fleet.central_index
    rounds = workload.distri_layers
    active: dict[int, list] = {i: [] for i in range(len(fleet))}
    t = 0.0
    for _ in range(rounds):
        round_end = t
        for i, dev in enumerate(fleet.devices):
            c = workload.compute_ms[i] / rounds
            if c > 0:
                active[i].append((t, t + c, "compute"))
            finish = t + c
            if i != central and workload.sync_bits > 0:
                x = workload.sync_bits / dev.bandwidth
                active[i].append((finish, finish + x, "transmit"))
                finish += x
            round_end = max(round_end, finish)
        t = round_end
    if workload.aggregate_ms > 0:
        active[central].append((t, t + workload.aggregate_ms, "aggregate"))
    t += workload.aggregate_ms
    return _finalize("distri-edge", fleet, active, t)


def _sim_single(workload: Workload, fleet: DeviceFleet,
                device_index: int) -> SimReport:
    if not 0 <= device_index < len(fleet):
        raise InvalidWorkload("single-edge device index out of range")
    c = (workload.single_ms if workload.single_ms is not None
         else sum(workload.compute_ms))
    active = {device_index: [(0.0, c, "compute")]}
    end = c + workload.aggregate_ms
    if workload.aggregate_ms > 0:
        active[device_index].append((c, end, "aggregate"))
    return _finalize("single-edge", fleet, active, end)


def simulate(workload: Workload, fleet: DeviceFleet, mode: str, *,
             single_device: int | None = None,
             serialized_ingress: bool = False) -> SimReport:
    """Run one mode over the workload; see module docstring for semantics.

    single-edge reports only the executing device (others are not part of
    the run); every other mode reports the full fleet.
    """
    _check(workload, fleet)
    if mode == "aggregate-edge":
        return _sim_aggregate(workload, fleet, serialized_ingress)
    if mode == "pipe-edge":
        return _sim_pipe(workload, fleet)
    if mode == "distri-edge":
        return _sim_distri(workload, fleet)
    if mode == "single-edge":
        idx = fleet.central_index if single_device is None else single_device
        return _sim_single(workload, fleet, idx)
    raise InvalidWorkload(f"unknown mode {mode!r}; expected one of {MODES}")


def workload_from_policy(policy: DecompositionPolicy, fleet: DeviceFleet,
                         base: TransformerConfig,
                         bits_per_value: int = 32) -> Workload:
    """Noise-free per-device profile of a policy, as simulator inputs.

    Compute times come from the analytic device profile; each device's
    outbound volume is its S x d_n feature block.  distri-edge syncs one
    central-width feature block per layer round (max sub-model depth).
    """
    from .latency import synth_profile
    from .objective import feature_bits, phase3_latency

    if len(policy) != len(fleet):
        raise InvalidWorkload(
            f"policy has {len(policy)} sub-models, fleet has {len(fleet)}")
    compute = tuple(synth_profile(dev, cfg, base)
                    for cfg, dev in zip(policy.sub_models, fleet.devices))
    bits = tuple(float(feature_bits(base.seq_len, cfg.embed_dim,
                                    bits_per_value))
                 for cfg in policy.sub_models)
    d_agg = sum(c.embed_dim for c in policy.sub_models)
    d_central = policy.sub_models[fleet.central_index].embed_dim
    agg_ms = phase3_latency(base.seq_len, d_central, d_agg,
                            fleet.central.compute)
    return Workload(
        compute_ms=compute, feature_bits=bits, aggregate_ms=agg_ms,
        distri_layers=max(c.layers for c in policy.sub_models),
        sync_bits=float(feature_bits(base.seq_len, d_central,
                                     bits_per_value)))


def compare_modes(workload: Workload, fleet: DeviceFleet, *,
                  single_device: int | None = None,
                  serialized_ingress: bool = False) -> dict[str, SimReport]:
    """Simulate every mode on identical inputs."""
    return {mode: simulate(workload, fleet, mode,
                           single_device=single_device,
                           serialized_ingress=serialized_ingress)
            for mode in MODES}


def energy(report: SimReport, fleet: DeviceFleet) -> float:
    """Total energy of a report in millijoules, priced from fleet powers."""
    by_name = {d.name: d for d in fleet.devices}
    total = 0.0
    for s in report.device_stats:
        dev = by_name[s.name]
        total += (s.busy_ms * dev.busy_power
                  + s.idle_ms * dev.idle_power) * 1e-3
    return total


def timeline_csv(report: SimReport) -> str:
    lines = ["device,phase,start_ms,end_ms"]
    for ev in report.events:
        lines.append(f"{ev.device},{ev.phase},{ev.start_ms!r},{ev.end_ms!r}")
    return "\n".join(lines) + "\n"
