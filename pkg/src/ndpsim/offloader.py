"""Per-instruction feature collection, the cost model and the policy zoo."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Protocol

from .isa import VecInstr, VecOpType
from .resources import ResourceKind, compute_latency, supports
from .topology import SimConfig, transfer_ns

R = ResourceKind
RESOURCES = (R.ISP, R.PUD, R.IFP)

#: Saturating stand-in for "cannot run here".
INF = 1 << 62


class Location(str, Enum):
    FLASH = "Flash"
    DRAM = "Dram"


HOME = {R.IFP: Location.FLASH, R.PUD: Location.DRAM, R.ISP: Location.DRAM}


class PolicyKind(str, Enum):
    COST = "cost"
    BW = "bw"
    DM = "dm"
    IDEAL = "ideal"
    FIXED = "fixed"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    resource: ResourceKind | None = None

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.FIXED:
            return f"fixed-{self.resource.value.lower()}"
        return self.kind.value

    def __str__(self) -> str:
        return self.name


COST = Policy(PolicyKind.COST)
BW = Policy(PolicyKind.BW)
DM = Policy(PolicyKind.DM)
IDEAL = Policy(PolicyKind.IDEAL)
FIXED_ISP = Policy(PolicyKind.FIXED, R.ISP)
FIXED_PUD = Policy(PolicyKind.FIXED, R.PUD)
FIXED_IFP = Policy(PolicyKind.FIXED, R.IFP)
ALL_POLICIES = (FIXED_ISP, FIXED_PUD, FIXED_IFP, BW, DM, COST, IDEAL)
POLICY_NAMES = {p.name: p for p in ALL_POLICIES}


def parse_policy(name: str) -> Policy:
    key = name.strip().lower().replace("_", "-")
    if key in POLICY_NAMES:
        return POLICY_NAMES[key]
    raise ValueError(f"unknown policy {name!r}; valid: {', '.join(POLICY_NAMES)}")


@dataclass(frozen=True)
class OperandState:
    owner: Location
    dirty: bool


@dataclass
class FeatureVector:
    op_type: VecOpType
    operand_locations: tuple[OperandState, ...]
    delay_dd: int
    delay_queue: dict[ResourceKind, int]
    latency_dm: dict[ResourceKind, int]
    latency_comp: dict[ResourceKind, int]


@dataclass(frozen=True)
class Breakdown:
    latency_comp: int
    latency_dm: int
    delay_dd: int
    delay_queue: int
    total: int


@dataclass
class Decision:
    resource: ResourceKind
    breakdown: dict[ResourceKind, Breakdown]
    overhead_charged: int = 0

    @property
    def estimate(self) -> int:
        return self.breakdown[self.resource].total


def total_latency(r: ResourceKind, fv: FeatureVector) -> int:
    """comp + dm + max(dd, queue); dependence and queueing waits overlap."""
    comp = fv.latency_comp[r]
    if comp >= INF:
        return INF
    return min(INF, comp + fv.latency_dm[r] + max(fv.delay_dd, fv.delay_queue[r]))


# --- data-movement table -----------------------------------------------------

def dm_estimate(state: OperandState, r: ResourceKind, page_bytes: int, fetch_bytes: int,
                cfg: SimConfig) -> int:
    """Uncontended cost of making one operand page usable by ``r``."""
    ft, topo = cfg.flash_timing, cfg.topology
    to_dram = ft.t_read_slc + ft.t_dma + transfer_ns(page_bytes, topo.channel_bandwidth)
    bus = transfer_ns(fetch_bytes, cfg.dram.bus_bandwidth)
    if r is R.IFP:
        if state.owner is Location.DRAM and state.dirty:
            return (transfer_ns(page_bytes, cfg.dram.bus_bandwidth) + ft.t_dma
                    + transfer_ns(page_bytes, topo.channel_bandwidth) + ft.t_prog_slc)
        return 0
    cost = 0
    if state.owner is Location.FLASH:
        cost = to_dram + (ft.t_prog_slc if state.dirty else 0)
    if r is R.ISP:
        cost += bus
    return cost


class StateView(Protocol):
    """What feature collection needs to see of a running simulation."""

    def operand_state(self, page: int) -> OperandState: ...

    def dependence_delay(self, ins: VecInstr) -> int: ...

    def queue_delay(self, r: ResourceKind, ins: VecInstr) -> int: ...

    def placement_cost(self, ins: VecInstr) -> int: ...


def collect_features(ins: VecInstr, state: StateView, cfg: SimConfig) -> FeatureVector:
    locs = tuple(state.operand_state(p) for p in ins.src_pages)
    page = cfg.topology.page_size
    fetch = max(1, ins.nbytes)
    comp: dict[ResourceKind, int] = {}
    dm: dict[ResourceKind, int] = {}
    queue: dict[ResourceKind, int] = {}
    zero = cfg.offloader.zero_dynamic_features
    for r in RESOURCES:
        if not supports(r, ins.op, cfg):
            comp[r] = dm[r] = queue[r] = INF
            continue
        comp[r] = compute_latency(r, ins, cfg)
        if zero:
            dm[r] = queue[r] = 0
            continue
        cost = sum(dm_estimate(s, r, page, fetch, cfg) for s in locs)
        if r is R.ISP and ins.dst_page is not None:
            cost += transfer_ns(fetch, cfg.dram.bus_bandwidth)
        elif r is R.IFP:
            cost += state.placement_cost(ins)
        dm[r] = cost
        queue[r] = state.queue_delay(r, ins)
    dd = 0 if zero else state.dependence_delay(ins)
    return FeatureVector(ins.op, locs, dd, queue, dm, comp)


# --- bandwidth monitor -------------------------------------------------------

class BandwidthMonitor:
    """Sliding-window bytes delivered on each resource's ingress path."""

    def __init__(self, cfg: SimConfig):
        self.window = cfg.offloader.bw_window
        topo, ft = cfg.topology, cfg.flash_timing
        # Peak bytes per second of each path.
        self.peak = {
            R.IFP: topo.n_dies * topo.page_size * 1_000_000_000 // ft.t_read_slc,
            R.PUD: cfg.dram.bus_bandwidth,
            R.ISP: cfg.dram.bus_bandwidth,
        }
        self.events: dict[ResourceKind, deque[tuple[int, int]]] = {r: deque() for r in RESOURCES}
        self.bytes = {r: 0 for r in RESOURCES}

    def _expire(self, now: int) -> None:
        horizon = now - self.window
        for r in RESOURCES:
            ev = self.events[r]
            while ev and ev[0][0] <= horizon:
                self.bytes[r] -= ev.popleft()[1]

    def record(self, r: ResourceKind, now: int, nbytes: int) -> None:
        self._expire(now)
        self.events[r].append((now, nbytes))
        self.bytes[r] += nbytes

    def utilization(self, now: int) -> dict[ResourceKind, float]:
        self._expire(now)
        scale = self.window / 1_000_000_000
        return {r: self.bytes[r] / (self.peak[r] * scale) for r in RESOURCES}


# --- policies ----------------------------------------------------------------

def _resident(r: ResourceKind, fv: FeatureVector) -> bool:
    home = HOME[r]
    return all(s.owner is home for s in fv.operand_locations)


def _argmin(cands: Iterable[ResourceKind], key: Callable[[ResourceKind], object],
            fv: FeatureVector, order: Mapping[ResourceKind, int]) -> ResourceKind:
    return min(cands, key=lambda r: (key(r), not _resident(r, fv), order[r]))


def tie_order(cfg: SimConfig) -> dict[ResourceKind, int]:
    return {R(name): i for i, name in enumerate(cfg.offloader.tie_break)}


def choose(fv: FeatureVector, policy: Policy, cfg: SimConfig,
           utilization: Mapping[ResourceKind, float] | None = None) -> Decision:
    order = tie_order(cfg)
    cands = [r for r in RESOURCES if fv.latency_comp[r] < INF]
    if not cands:
        raise ValueError(f"no resource supports {fv.op_type.value}")
    ideal = policy.kind is PolicyKind.IDEAL
    breakdown = {}
    for r in RESOURCES:
        if ideal:
            c = fv.latency_comp[r]
            breakdown[r] = Breakdown(c, 0, 0, 0, c)
        else:
            breakdown[r] = Breakdown(fv.latency_comp[r], fv.latency_dm[r], fv.delay_dd,
                                     fv.delay_queue[r], total_latency(r, fv))
    kind = policy.kind
    if kind is PolicyKind.COST:
        pick = _argmin(cands, lambda r: breakdown[r].total, fv, order)
    elif kind is PolicyKind.IDEAL:
        pick = _argmin(cands, lambda r: fv.latency_comp[r], fv, order)
    elif kind is PolicyKind.DM:
        pick = _argmin(cands, lambda r: (fv.latency_dm[r], fv.latency_comp[r]), fv, order)
    elif kind is PolicyKind.BW:
        util = utilization or {r: 0.0 for r in RESOURCES}
        pick = _argmin(cands, lambda r: util[r], fv, order)
    else:
        pick = policy.resource if policy.resource in cands else R.ISP
    return Decision(pick, breakdown)


def decision_overhead(ins: VecInstr, policy: Policy, cfg: SimConfig,
                      l2p_cached: Callable[[int], bool]) -> int:
    """Simulated time the offloader spends deciding where ``ins`` runs.

    Mapping-table lookups for DRAM-cached entries cost ``l2p_dram`` each; if
    any entry must be fetched from flash, one flash lookup is charged and the
    remaining DRAM lookups overlap with it.
    """
    if policy.kind is PolicyKind.IDEAL:
        return 0
    ov = cfg.overheads
    pages = set(ins.src_pages)
    if ins.dst_page is not None:
        pages.add(ins.dst_page)
    if all(l2p_cached(p) for p in pages):
        lookup = ov.l2p_dram * len(pages)
    else:
        lookup = ov.l2p_flash
    return (lookup + ov.dependence_tracking + ov.queue_tracking + ov.dm_lookup
            + ov.comp_lookup * len(RESOURCES) + ov.translation)

