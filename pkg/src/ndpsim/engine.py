"""Deterministic discrete-event simulation of offloaded trace execution.

The offloader walks the trace in order, one decision at a time, charging
its own latency to the clock. Each decision updates the logical mapping
table immediately (so later decisions see where data *will* be) and spawns
tasks: data movements, coherence commits and the compute itself. Tasks are
chains of stages on FIFO servers (flash dies, flash channels, the DRAM bus,
the DRAM arrays, the compute core) and start once all their predecessors
finish. Compute tasks additionally issue in dispatch order per resource
queue.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Iterable

from .isa import PageStore, Trace, VecInstr, VecOpType, apply, evaluate, interpret
from .offloader import (HOME, INF, RESOURCES, BandwidthMonitor, Location, OperandState, Policy,
                        PolicyKind, choose, collect_features, decision_overhead)
from .resources import ExecQueue, ResourceKind, compute_energy, compute_latency
from .topology import SimConfig, ceil_div, transfer_ns

R = ResourceKind
FLASH, DRAM = Location.FLASH, Location.DRAM
MAX_VERSION = 255


class SimulationError(RuntimeError):
    pass


class EventKind(IntEnum):
    """Values double as the tie-break order for simultaneous events."""

    ComputeDone = 0
    TransferDone = 1
    CoherenceSync = 2
    DecisionReady = 3
    TransferStart = 4
    ComputeStart = 5


class Trigger(IntEnum):
    CROSS_RESOURCE = 1
    HOST_TRANSFER = 2
    EVICTION = 3
    GARBAGE_COLLECTION = 4
    POWER_CYCLE = 5
    VERSION_WRAP = 6


class Server:
    __slots__ = ("name", "busy", "waiting", "unlimited", "busy_time")

    def __init__(self, name: str, unlimited: bool = False):
        self.name = name
        self.busy = False
        self.waiting: deque[Task] = deque()
        self.unlimited = unlimited
        self.busy_time = 0


@dataclass(slots=True)
class Stage:
    server: Server
    duration: int
    kind: EventKind            # kind logged when the stage finishes
    category: str = ""         # "" (no energy), "dm", or a resource name
    energy: int = 0


class Task:
    __slots__ = ("stages", "idx", "npred", "succs", "done", "done_time", "ref",
                 "queue", "est", "instr", "compute_stage", "result", "started")

    def __init__(self, stages: list[Stage], ref: Any):
        self.stages = stages
        self.idx = 0
        self.npred = 0
        self.succs: list[Task] = []
        self.done = False
        self.done_time = -1
        self.ref = ref
        self.queue: ExecQueue | None = None
        self.est = 0
        self.instr: VecInstr | None = None
        self.compute_stage = -1
        self.result = None
        self.started = -1


@dataclass
class StatsReport:
    policy: str
    profile: str
    n_instructions: int
    total_time: int
    latencies: list[int]
    p99: int
    p9999: int
    energy_compute: dict[str, int]
    energy_dm: int
    energy_total: int
    decision_fractions: dict[str, float]
    offload_fractions: dict[str, float]
    timeline: str
    overheads: list[int]
    event_counts: dict[str, int]
    content_digest: str = ""
    final_pages: dict[int, bytes] | None = field(default=None, repr=False)
    energy_log: list[tuple[int, str, str, int]] = field(default_factory=list, repr=False)
    event_log: list[tuple] | None = field(default=None, repr=False)

    @property
    def mean_overhead(self) -> float:
        return sum(self.overheads) / len(self.overheads) if self.overheads else 0.0

    @property
    def max_overhead(self) -> int:
        return max(self.overheads, default=0)

    @property
    def energy_compute_total(self) -> int:
        return sum(self.energy_compute.values())

    def to_dict(self) -> dict:
        return {
            "policy": self.policy, "profile": self.profile,
            "n_instructions": self.n_instructions, "total_time_ns": self.total_time,
            "p99_ns": self.p99, "p9999_ns": self.p9999,
            "energy": {"compute_pj": dict(sorted(self.energy_compute.items())),
                       "data_movement_pj": self.energy_dm, "total_pj": self.energy_total},
            "decision_fractions": self.decision_fractions,
            "offload_fractions": self.offload_fractions,
            "overhead_ns": {"mean": self.mean_overhead, "max": self.max_overhead},
            "event_counts": self.event_counts,
            "content_digest": self.content_digest,
            "timeline": self.timeline,
            "latencies_ns": self.latencies,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def csv_row(self) -> dict[str, Any]:
        f = self.decision_fractions
        return {"policy": self.policy, "profile": self.profile,
                "total_time_ns": self.total_time, "p99_ns": self.p99, "p9999_ns": self.p9999,
                "energy_compute_pj": self.energy_compute_total, "energy_dm_pj": self.energy_dm,
                "frac_isp": f["ISP"], "frac_pud": f["PUD"], "frac_ifp": f["IFP"]}


CSV_COLUMNS = ("policy", "profile", "total_time_ns", "p99_ns", "p9999_ns", "energy_compute_pj",
               "energy_dm_pj", "frac_isp", "frac_pud", "frac_ifp")

TIMELINE_CODE = {R.ISP: "I", R.PUD: "P", R.IFP: "F"}
TIMELINE_DECODE = {v: k for k, v in TIMELINE_CODE.items()}


def percentile(values: Iterable[int], p: float) -> int:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    data = sorted(values)
    if not data:
        raise ValueError("percentile of an empty sample")
    if not 0 < p < 100:
        raise ValueError("p must be in (0, 100)")
    rank = max(1, math.ceil(p / 100 * len(data) - 1e-9))
    return data[rank - 1]


def initial_planes(trace: Trace, cfg: SimConfig, colocate: bool = False) -> dict[int, int]:
    """Home plane of every trace page.

    Pages are striped round-robin over channels, then dies, then planes. With
    ``colocate`` the first operands of each in-flash-capable instruction are
    pulled into the plane of its first already-placed operand, up to one
    block's worth of pages per anchor.
    """
    topo = cfg.topology
    C, D, P = topo.channels, topo.dies_per_channel, topo.planes_per_die

    def striped(p: int) -> int:
        ch, rest = p % C, p // C
        die, rest = rest % D, rest // D
        return (ch * D + die) * P + rest % P

    pages = sorted(trace.pages())
    home = {p: striped(p) for p in pages}
    if colocate:
        from .resources import IFP_OPS
        placed: set[int] = set()
        written: set[int] = set()
        load: dict[int, int] = {}
        for ins in trace.instrs:
            if ins.op in IFP_OPS:
                fresh = [p for p in ins.src_pages if p not in placed and p not in written]
                anchor = next((home[p] for p in ins.src_pages if p in placed), None)
                for p in fresh:
                    if anchor is None:
                        anchor = home[p]
                    elif load.get(anchor, 0) < topo.pages_per_block:
                        home[p] = anchor
                        load[anchor] = load.get(anchor, 0) + 1
                    placed.add(p)
            if ins.dst_page is not None:
                written.add(ins.dst_page)
    return home


class Engine:
    def __init__(self, trace: Trace, cfg: SimConfig, policy: Policy, seed: int = 0,
                 functional: bool = False, record_events: bool = False,
                 colocate: bool = False):
        self.trace = trace
        self.cfg = cfg
        self.policy = policy
        self.seed = seed  # the engine itself draws no random numbers
        self.functional = functional
        self.ideal = policy.kind is PolicyKind.IDEAL
        topo = cfg.topology
        pages = trace.pages()
        if pages and max(pages) >= topo.total_pages:
            raise SimulationError(
                f"trace page {max(pages)} exceeds simulated capacity of {topo.total_pages} pages")
        if trace.header.page_size != topo.page_size:
            raise SimulationError("trace page size differs from the configured page size")
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.energy_compute = {r.value: 0 for r in RESOURCES}
        self.energy_dm = 0
        self.energy_log: list[tuple[int, str, str, int]] = []
        self.event_log: list[tuple] | None = [] if record_events else None
        self.event_counts = {k.name: 0 for k in EventKind}
        unlimited = self.ideal
        self.dies = [Server(f"die{d}", unlimited) for d in range(topo.n_dies)]
        self.channels = [Server(f"ch{c}", unlimited) for c in range(topo.channels)]
        self.bus = Server("bus", unlimited)
        self.core = Server("core", unlimited)
        self.dram = Server("dram", unlimited)
        self.queues = {R.ISP: ExecQueue(), R.PUD: ExecQueue()}
        self.ifp_queues = [ExecQueue() for _ in range(topo.n_dies)]
        self.bw = BandwidthMonitor(cfg)
        # Logical mapping table, updated at decision time.
        self.owner: dict[int, Location] = {p: FLASH for p in pages}
        self.dirty: dict[int, bool] = {p: False for p in pages}
        self.version: dict[int, int] = {p: 0 for p in pages}
        self.home = initial_planes(trace, cfg, colocate)
        self.avail: dict[tuple[int, Location], Task] = {}
        self.last_writer: dict[int, Task] = {}
        self.readers: dict[int, list[Task]] = {}
        pct = cfg.offloader.l2p_dram_pct
        self._cached = lambda p: (p * 2654435761 + 97) % 100 < pct
        n = len(trace.instrs)
        self.tasks: list[Task | None] = [None] * n
        self.resource: list[ResourceKind | None] = [None] * n
        self.estimate = [0] * n
        self.pending_cost = [0] * n
        self.decided_at = [0] * n
        self.overheads = [0] * n
        self.store = PageStore(topo.page_size, trace.initial) if functional else None
        self._comp_cache: dict[tuple, tuple[int, int]] = {}

    # --- event machinery ---------------------------------------------------

    def _push(self, t: int, kind: EventKind, obj: Any) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, int(kind), self._seq, obj))

    def _log(self, kind: EventKind, ref: Any) -> None:
        self.event_counts[kind.name] += 1
        if self.event_log is not None:
            self.event_log.append((self.now, kind.name, ref))

    def _charge(self, category: str, pj: int, ref: Any) -> None:
        if pj == 0:
            return
        if category == "dm":
            self.energy_dm += pj
        else:
            self.energy_compute[category] += pj
        self.energy_log.append((self.now, category, str(ref), pj))

    def _submit(self, task: Task) -> None:
        srv = task.stages[task.idx].server
        if srv.unlimited or not srv.busy:
            self._start(task, srv)
        else:
            srv.waiting.append(task)

    def _start(self, task: Task, srv: Server) -> None:
        if not srv.unlimited:
            srv.busy = True
        st = task.stages[task.idx]
        if task.idx == task.compute_stage:
            self._log(EventKind.ComputeStart, task.ref)
            task.started = self.now
            if self.store is not None:
                task.result = evaluate(task.instr, self.store)
        elif st.kind is EventKind.TransferDone:
            self._log(EventKind.TransferStart, task.ref)
        srv.busy_time += st.duration
        self._push(self.now + st.duration, st.kind, task)

    def _stage_done(self, task: Task) -> None:
        st = task.stages[task.idx]
        self._log(st.kind, task.ref)
        if st.category:
            self._charge(st.category, st.energy, task.ref)
        srv = st.server
        if not srv.unlimited:
            srv.busy = False
            if srv.waiting:
                self._start(srv.waiting.popleft(), srv)
        task.idx += 1
        if task.idx < len(task.stages):
            self._submit(task)
        else:
            self._complete(task)

    def _complete(self, task: Task) -> None:
        task.done = True
        task.done_time = self.now
        if task.instr is not None:
            if self.store is not None:
                apply(task.result, self.store)
                task.result = None
            if task.queue is not None:
                task.queue.dequeue_complete(task)
        for s in task.succs:
            s.npred -= 1
            if s.npred == 0:
                self._ready(s)

    def _ready(self, task: Task) -> None:
        # Compute work joins its execution queue once operands and producers
        # are in place, so the queue only ever holds runnable work and its
        # FIFO order matches the order its servers see.
        if task.queue is not None:
            task.queue.enqueue(task, task.est)
        if task.stages:
            self._submit(task)
        else:
            self._complete(task)

    def _task(self, stages: list[Stage], ref: Any, preds: Iterable[Task | None] = (),
              queue: ExecQueue | None = None, instr: VecInstr | None = None,
              compute_stage: int = -1, est: int = 0) -> Task:
        t = Task(stages, ref)
        t.queue = queue
        t.est = est
        t.instr = instr
        t.compute_stage = compute_stage
        seen = set()
        for p in preds:
            if p is None or p.done or id(p) in seen:
                continue
            seen.add(id(p))
            p.succs.append(t)
            t.npred += 1
        if t.npred == 0:
            self._ready(t)
        return t

    def drain(self, until: int | None = None) -> None:
        """Process events (optionally only those at or before ``until``)."""
        heap = self._heap
        while heap:
            if until is not None and heap[0][0] > until:
                break
            t, kind, _, obj = heapq.heappop(heap)
            if t < self.now:
                raise SimulationError("event time went backwards")
            self.now = t
            if kind == EventKind.DecisionReady:
                self._decide(obj)
            else:
                self._stage_done(obj)

    # --- geometry helpers --------------------------------------------------

    def _die_of_plane(self, plane: int) -> int:
        return plane // self.cfg.topology.planes_per_die

    def _channel_of_plane(self, plane: int) -> int:
        topo = self.cfg.topology
        return plane // (topo.dies_per_channel * topo.planes_per_die)

    def _xfer(self, nbytes: int) -> int:
        return self.cfg.flash_timing.t_dma + transfer_ns(nbytes, self.cfg.topology.channel_bandwidth)

    def _bus(self, nbytes: int) -> int:
        return transfer_ns(nbytes, self.cfg.dram.bus_bandwidth)

    def _read_stage(self, plane: int) -> Stage:
        return Stage(self.dies[self._die_of_plane(plane)], self.cfg.flash_timing.t_read_slc,
                     EventKind.TransferDone, "dm", self.cfg.energy.e_read_per_channel)

    def _channel_stage(self, plane: int, nbytes: int) -> Stage:
        return Stage(self.channels[self._channel_of_plane(plane)], self._xfer(nbytes),
                     EventKind.TransferDone, "dm", self.cfg.energy.e_dma_per_channel)

    def _prog_stage(self, plane: int) -> Stage:
        return Stage(self.dies[self._die_of_plane(plane)], self.cfg.flash_timing.t_prog_slc,
                     EventKind.CoherenceSync, "dm", self.cfg.energy.e_prog_per_page)

    def _bus_stage(self, nbytes: int, kind: EventKind = EventKind.TransferDone) -> Stage:
        e = ceil_div(self.cfg.energy.e_bus_per_kb * nbytes, 1024)
        return Stage(self.bus, self._bus(nbytes), kind, "dm", e)

    # --- data movement and coherence --------------------------------------

    def move_data(self, page: int, dest: Location | str, preds: Iterable[Task | None] = (),
                  size: int | None = None, plane: int | None = None) -> Task | None:
        """Move ``page`` so that ``dest`` holds a valid copy.

        ``dest`` may be FLASH, DRAM, or ``"core"`` (a DRAM-to-core fetch of
        ``size`` bytes). Moving to where the page already is costs nothing.
        """
        if page not in self.owner:
            raise SimulationError(f"unknown page {page}")
        size = self.cfg.topology.page_size if size is None else size
        preds = list(preds)
        if dest == "core":
            if self.owner[page] is not DRAM:
                raise SimulationError(f"page {page} must be DRAM-resident before a core fetch")
            return self._task([self._bus_stage(size)], ("fetch", page),
                              preds + [self.avail.get((page, DRAM))])
        if dest is self.owner[page]:
            return None
        if dest is DRAM:
            if self.dirty[page]:
                raise SimulationError(f"page {page} is dirty in flash; sync before moving")
            src = self.home[page]
            t = self._task([self._read_stage(src), self._channel_stage(src, size)],
                           ("move", page), preds + [self.avail.get((page, FLASH))])
            self.owner[page] = DRAM
            self.avail[(page, DRAM)] = t
            return t
        if dest is FLASH:
            if self.dirty[page]:
                return self.sync_page(page, Trigger.CROSS_RESOURCE, preds, plane)
            # A clean DRAM copy is identical to the flash copy.
            self.owner[page] = FLASH
            return None
        raise SimulationError(f"invalid route to {dest!r}")

    def sync_page(self, page: int, trigger: Trigger, preds: Iterable[Task | None] = (),
                  plane: int | None = None) -> Task | None:
        """Commit a dirty page to flash; clean pages need nothing."""
        if page not in self.owner:
            raise SimulationError(f"unknown page {page}")
        if not self.dirty[page]:
            return None
        preds = list(preds)
        size = self.cfg.topology.page_size
        if self.owner[page] is DRAM:
            dst = self.home[page] if plane is None else plane
            stages = [self._bus_stage(size), self._channel_stage(dst, size), self._prog_stage(dst)]
            t = self._task(stages, ("sync", page, trigger.name),
                           preds + [self.avail.get((page, DRAM))])
            self.home[page] = dst
        else:
            t = self._task([self._prog_stage(self.home[page])], ("sync", page, trigger.name),
                           preds + [self.avail.get((page, FLASH))])
        self.owner[page] = FLASH
        self.dirty[page] = False
        self.version[page] = 0
        self.avail[(page, FLASH)] = t
        return t

    def flush_all(self, trigger: Trigger = Trigger.POWER_CYCLE) -> list[Task]:
        """Commit every dirty page (garbage collection / power cycle hook)."""
        out = []
        for p in sorted(self.owner):
            t = self.sync_page(p, trigger, [self.last_writer.get(p)])
            if t is not None:
                out.append(t)
        return out

    def replay(self, instr_id: int) -> None:
        """Hook for re-executing an instruction after a timeout.

        Fault injection is not modelled, so nothing ever times out and
        calling this is an error.
        """
        raise NotImplementedError("instruction replay requires fault injection, which is not modelled")

    # --- StateView for feature collection ---------------------------------

    def operand_state(self, page: int) -> OperandState:
        if page not in self.owner:
            raise SimulationError(f"unknown logical page {page}")
        return OperandState(self.owner[page], self.dirty[page])

    def dependence_delay(self, ins: VecInstr) -> int:
        total = 0
        for pid in ins.producer_ids:
            t = self.tasks[pid]
            if t is not None and not t.done:
                total += max(0, self.pending_cost[pid] - (self.now - self.decided_at[pid]))
        return total

    def placement_cost(self, ins: VecInstr) -> int:
        """Uncontended cost of relocating flash operands into the executing plane."""
        if not ins.src_pages:
            return 0
        plane = self._ifp_plane(ins)
        total = 0
        for p in dict.fromkeys(ins.src_pages):
            # A dirty DRAM copy is committed straight into the plane instead.
            if self.home[p] == plane or (self.owner[p] is DRAM and self.dirty[p]):
                continue
            total += self._relocation_cost(p, ins.op)
        return total

    def _ifp_plane(self, ins: VecInstr) -> int:
        if ins.src_pages:
            return self.home[ins.src_pages[0]]
        return self.home[ins.dst_page]

    def _queue(self, r: ResourceKind, ins: VecInstr) -> ExecQueue:
        if r is R.IFP:
            return self.ifp_queues[self._die_of_plane(self._ifp_plane(ins))]
        return self.queues[r]

    def queue_delay(self, r: ResourceKind, ins: VecInstr) -> int:
        return self._queue(r, ins).counter

    # --- decisions ---------------------------------------------------------

    def _overhead(self, i: int) -> int:
        ins = self.trace.instrs[i]
        return decision_overhead(ins, self.policy, self.cfg, self._cached)

    def _comp(self, r: ResourceKind, ins: VecInstr) -> tuple[int, int]:
        key = (r, ins.op, ins.fn, ins.vector_length, ins.element_width, ins.n_operands, ins.imm)
        v = self._comp_cache.get(key)
        if v is None:
            v = (compute_latency(r, ins, self.cfg), compute_energy(r, ins, self.cfg))
            self._comp_cache[key] = v
        return v

    def _decide(self, i: int) -> None:
        self._log(EventKind.DecisionReady, i)
        ins = self.trace.instrs[i]
        fv = collect_features(ins, self, self.cfg)
        util = self.bw.utilization(self.now) if self.policy.kind is PolicyKind.BW else None
        d = choose(fv, self.policy, self.cfg, util)
        self.resource[i] = d.resource
        self.estimate[i] = min(d.estimate, INF)
        # A producer's own dependence wait is left out: chained producers
        # would otherwise be counted once per descendant.
        b = d.breakdown[d.resource]
        self.pending_cost[i] = min(INF, b.latency_comp + b.latency_dm + b.delay_queue)
        self.decided_at[i] = self.now
        self._dispatch(ins, d.resource)
        nxt = i + 1
        if nxt < len(self.trace.instrs):
            ov = self._overhead(nxt)
            self.overheads[nxt] = ov
            self._push(self.now + ov, EventKind.DecisionReady, nxt)

    def _dispatch(self, ins: VecInstr, r: ResourceKind) -> None:
        comp_lat, comp_e = self._comp(r, ins)
        tasks = self.tasks
        preds: list[Task | None] = [tasks[p] for p in ins.producer_ids]
        declared: dict[int, Task | None] = {}
        for pid in ins.producer_ids:
            dst = self.trace.instrs[pid].dst_page
            if dst is not None:
                declared[dst] = tasks[pid]
        srcs = list(dict.fromkeys(ins.src_pages))
        target = HOME[r]
        plane = self._ifp_plane(ins) if r is R.IFP else -1
        for p in srcs:
            data = declared.get(p)
            if self.ideal:
                self._logical_access(p, target, plane)
                continue
            if target is DRAM:
                if self.owner[p] is FLASH:
                    if self.dirty[p]:
                        self.sync_page(p, Trigger.CROSS_RESOURCE, [data], None)
                    preds.append(self.move_data(p, DRAM, [data]))
                else:
                    preds.append(self.avail.get((p, DRAM)))
                continue
            if self.owner[p] is DRAM and self.dirty[p]:
                preds.append(self.sync_page(p, Trigger.CROSS_RESOURCE, [data], plane))
                continue
            self.owner[p] = FLASH
            if self.home[p] != plane:
                t = self._relocate(p, plane, ins.op, data)
                preds.append(t)
            else:
                preds.append(self.avail.get((p, FLASH)))
        for p in srcs:
            if self.owner[p] is not target:
                raise SimulationError(f"coherence violation: page {p} read by {r.value} "
                                      f"while owned by {self.owner[p].value}")
        dst = ins.dst_page
        if dst is not None:
            preds.append(self.last_writer.get(dst))
            preds.extend(self.readers.get(dst, ()))
            preds.append(self._logical_write(dst, target, plane))
        # Build the compute task.
        cat = r.value
        if self.ideal:
            stages = [Stage(self.core, comp_lat, EventKind.ComputeDone, cat, comp_e)]
            cs = 0
        elif r is R.ISP:
            fetch = max(1, ins.nbytes)
            stages = [self._bus_stage(fetch * max(1, len(srcs))),
                      Stage(self.core, comp_lat, EventKind.ComputeDone, cat, comp_e)]
            if dst is not None:
                stages.append(self._bus_stage(fetch))
            cs = 1
        elif r is R.PUD:
            stages = [Stage(self.dram, comp_lat, EventKind.ComputeDone, cat, comp_e)]
            cs = 0
        else:
            stages = [Stage(self.dies[self._die_of_plane(plane)], comp_lat,
                            EventKind.ComputeDone, cat, comp_e)]
            cs = 0
        queue = None if self.ideal else self._queue(r, ins)
        # Queue backlog is counted in service time of the task's own stages.
        service = sum(st.duration for st in stages)
        task = self._task(stages, ins.id, preds, queue, ins, cs, service)
        tasks[ins.id] = task
        if dst is not None:
            self.last_writer[dst] = task
            self.readers[dst] = []
        for p in srcs:
            if p != dst:
                self.readers.setdefault(p, []).append(task)
        if self.policy.kind is PolicyKind.BW:
            self.bw.record(r, self.now, max(1, ins.nbytes) * max(1, len(srcs)))

    def _logical_access(self, p: int, target: Location, plane: int) -> None:
        if self.owner[p] is target:
            return
        if self.dirty[p]:
            self.dirty[p] = False
            self.version[p] = 0
            if target is FLASH:
                self.home[p] = plane
        self.owner[p] = target

    def _logical_write(self, q: int, target: Location, plane: int) -> Task | None:
        flush = None
        if self.owner[q] is target and self.dirty[q]:
            if self.version[q] >= MAX_VERSION:
                if not self.ideal:
                    flush = self.sync_page(q, Trigger.VERSION_WRAP, [self.last_writer.get(q)])
                self.owner[q] = target
                self.dirty[q] = True
                self.version[q] = 1
            else:
                self.version[q] += 1
        else:
            self.owner[q] = target
            self.dirty[q] = True
            self.version[q] = 1
        if target is FLASH:
            self.home[q] = plane
        self.avail.pop((q, FLASH), None)
        self.avail.pop((q, DRAM), None)
        return flush

    def _relocation_cost(self, p: int, op: VecOpType) -> int:
        ft = self.cfg.flash_timing
        cost = 2 * self._xfer(self.cfg.topology.page_size)
        if not self.dirty[p]:
            cost += ft.t_read_slc
        if op in (VecOpType.AND, VecOpType.OR):
            cost += ft.t_prog_slc
        return cost

    def _relocate(self, p: int, plane: int, op: VecOpType, data: Task | None) -> Task:
        """Bring a flash operand into the executing plane."""
        size = self.cfg.topology.page_size
        src = self.home[p]
        stages = []
        if not self.dirty[p]:
            stages.append(self._read_stage(src))
        stages.append(self._channel_stage(src, size))
        stages.append(self._channel_stage(plane, size))
        if op in (VecOpType.AND, VecOpType.OR):
            # Multi-wordline sensing needs the operand stored in the block.
            stages.append(self._prog_stage(plane))
        t = self._task(stages, ("relocate", p), [data, self.avail.get((p, FLASH))])
        if op in (VecOpType.AND, VecOpType.OR):
            self.home[p] = plane
            self.dirty[p] = False
            self.version[p] = 0
            self.avail[(p, FLASH)] = t
        return t

    # --- run ---------------------------------------------------------------

    def run(self) -> StatsReport:
        n = len(self.trace.instrs)
        if n:
            ov = self._overhead(0)
            self.overheads[0] = ov
            self._push(ov, EventKind.DecisionReady, 0)
        self.drain()
        for t in self.tasks:
            if t is None or not t.done:
                raise SimulationError("simulation ended with unfinished instructions")
        return self._report()

    def _report(self) -> StatsReport:
        instrs = self.trace.instrs
        n = len(instrs)
        done = [t.done_time for t in self.tasks]
        lat = [done[i] - self.decided_at[i] for i in range(n)]
        total = max(done, default=0)
        counts = {r.value: 0 for r in RESOURCES}
        vcounts = {r.value: 0 for r in RESOURCES}
        for ins, r in zip(instrs, self.resource):
            counts[r.value] += 1
            if not ins.is_scalar:
                vcounts[r.value] += 1
        nv = sum(vcounts.values())
        fr = {k: (v / n if n else 0.0) for k, v in counts.items()}
        vfr = {k: (v / nv if nv else 0.0) for k, v in vcounts.items()}
        decided = [self.overheads[i] for i in range(n)] if not self.ideal else []
        final = None
        digest = ""
        if self.store is not None:
            final = self.store.snapshot()
            h = hashlib.sha256()
            for p, data in final.items():
                h.update(p.to_bytes(8, "little"))
                h.update(data)
            digest = h.hexdigest()
        return StatsReport(
            policy=self.policy.name, profile=self.trace.header.profile, n_instructions=n,
            total_time=total, latencies=lat,
            p99=percentile(lat, 99) if lat else 0, p9999=percentile(lat, 99.99) if lat else 0,
            energy_compute=dict(self.energy_compute), energy_dm=self.energy_dm,
            energy_total=self.energy_dm + sum(self.energy_compute.values()),
            decision_fractions=fr, offload_fractions=vfr,
            timeline="".join(TIMELINE_CODE[r] for r in self.resource),
            overheads=decided, event_counts=dict(self.event_counts), content_digest=digest,
            final_pages=final, energy_log=self.energy_log, event_log=self.event_log,
        )


def run(trace: Trace, cfg: SimConfig, policy: Policy, seed: int = 0, *,
        functional: bool = False, record_events: bool = False,
        colocate: bool = False) -> StatsReport:
    """Simulate ``trace`` under ``policy``; a pure function of its inputs."""
    return Engine(trace, cfg, policy, seed, functional=functional,
                  record_events=record_events, colocate=colocate).run()


@dataclass
class VerifyResult:
    passed: bool
    page: int | None = None
    instr: int | None = None
    message: str = ""


def functional_verify(trace: Trace, report: StatsReport) -> VerifyResult:
    """Compare a functional-mode run against the in-order reference."""
    if trace.initial is None:
        raise ValueError("functional verification needs initial page contents")
    if report.final_pages is None:
        raise ValueError("report was not produced in functional mode")
    ref = interpret(trace)
    got = report.final_pages
    for p in sorted(set(ref) | set(got)):
        a = ref.get(p, bytes(trace.header.page_size))
        b = got.get(p, bytes(trace.header.page_size))
        if a != b:
            writer = next((ins.id for ins in reversed(trace.instrs) if ins.dst_page == p), None)
            return VerifyResult(False, p, writer,
                                f"page {p} differs from the reference (last written by "
                                f"instruction {writer})")
    return VerifyResult(True, message="all pages match")


def energy_from_log(report: StatsReport) -> tuple[int, int]:
    """(compute, data movement) totals recomputed from the per-event log."""
    comp = sum(e for _, cat, _, e in report.energy_log if cat != "dm")
    dm = sum(e for _, cat, _, e in report.energy_log if cat == "dm")
    return comp, dm
