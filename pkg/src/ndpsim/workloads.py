"""Synthetic trace generators matched to target workload characteristics."""
from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .isa import (LatencyClass, Trace, TraceHeader, VecInstr, VecOpType, elems_per_page,
                  trace_stats, validate_trace)
from .topology import SimConfig, default_config, desk_scale, load_config

O = VecOpType

DEFAULT_INSTRUCTIONS = 100_000
DEFAULT_WS_FRACTION = 0.5

#: Relative frequency of each operation inside its latency class.
OP_WEIGHTS: dict[str, dict[VecOpType, int]] = {
    "low": {O.AND: 30, O.XOR: 30, O.OR: 20, O.NOT: 5, O.SHL: 5, O.SHR: 5, O.COPY: 5},
    "medium": {O.ADD: 40, O.SUB: 20, O.CMP_GT: 15, O.CMP_EQ: 10, O.SELECT: 15},
    "high": {O.MUL: 85, O.REDUCE_ADD: 15},
}

VECTORIZABLE_TOL = 3.0
REUSE_TOL = 0.10
MIX_TOL = 3.0


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    vectorizable_pct: float
    avg_reuse: float
    latency_mix: Mapping[str, float]
    n_instructions: int = DEFAULT_INSTRUCTIONS
    working_set: int | None = None
    seed: int = 0
    element_width: int = 32

    def validate(self) -> "WorkloadProfile":
        if not 0 <= self.vectorizable_pct <= 100:
            raise WorkloadError(f"{self.name}: vectorizable_pct must be within [0, 100]")
        if set(self.latency_mix) != {c.value for c in LatencyClass}:
            raise WorkloadError(f"{self.name}: latency_mix needs exactly low, medium and high")
        if any(v < 0 for v in self.latency_mix.values()):
            raise WorkloadError(f"{self.name}: latency_mix shares must be non-negative")
        if abs(sum(self.latency_mix.values()) - 100) > 1e-9:
            raise WorkloadError(f"{self.name}: latency_mix must sum to 100")
        if self.avg_reuse < 1:
            raise WorkloadError(f"{self.name}: avg_reuse below 1 is unreachable")
        if self.n_instructions < 0:
            raise WorkloadError(f"{self.name}: n_instructions must be non-negative")
        if self.element_width not in (8, 32):
            raise WorkloadError(f"{self.name}: element width must be 8 or 32")
        if self.working_set is not None and self.working_set < MIN_WORKING_SET:
            raise WorkloadError(
                f"{self.name}: working set of {self.working_set} pages cannot hold "
                f"{MAX_SOURCES} distinct sources plus a destination, so the requested "
                f"reuse is unreachable")
        return self

    def with_(self, **kw: Any) -> "WorkloadProfile":
        return dataclasses.replace(self, **kw)


MAX_SOURCES = 3
MIN_WORKING_SET = MAX_SOURCES + 2


def _mix(low: float, medium: float, high: float) -> dict[str, float]:
    return {"low": low, "medium": medium, "high": high}


def builtin_profiles() -> list[WorkloadProfile]:
    return [
        WorkloadProfile("aes_like", 65, 15.2, _mix(87, 13, 0)),
        WorkloadProfile("xor_filter_like", 16, 2.0, _mix(1, 98, 1)),
        WorkloadProfile("heat3d_like", 95, 16, _mix(0, 60, 40)),
        WorkloadProfile("jacobi1d_like", 95, 3, _mix(0, 67, 33)),
        WorkloadProfile("llama_infer_like", 70, 1.8, _mix(0, 53, 47)),
        WorkloadProfile("llm_train_like", 60, 5.2, _mix(0, 88, 12)),
    ]


COMPUTE_INTENSIVE = ("heat3d_like", "jacobi1d_like", "llama_infer_like", "llm_train_like")


def profile_from_dict(d: Mapping[str, Any]) -> WorkloadProfile:
    known = {f.name for f in dataclasses.fields(WorkloadProfile)}
    unknown = set(d) - known
    if unknown:
        raise WorkloadError(f"unknown profile fields: {', '.join(sorted(unknown))}")
    if "name" not in d:
        raise WorkloadError("profile needs a name")
    kw = dict(d)
    if "latency_mix" in kw:
        kw["latency_mix"] = {str(k): float(v) for k, v in kw["latency_mix"].items()}
    return WorkloadProfile(**kw).validate()


def load_profiles(config_path: str | Path | None = None) -> dict[str, WorkloadProfile]:
    """Built-in profiles, overridden or extended by a config file's ``profiles`` list."""
    out = {p.name: p for p in builtin_profiles()}
    if config_path is None:
        return out
    import yaml
    raw = yaml.safe_load(Path(config_path).read_text()) or {}
    for entry in raw.get("profiles", []) or []:
        base = out.get(entry.get("name"))
        merged = {**dataclasses.asdict(base), **entry} if base else entry
        p = profile_from_dict(merged)
        out[p.name] = p
    load_config(config_path)  # reject a malformed remainder early
    return out


def get_profile(name: str, profiles: Mapping[str, WorkloadProfile] | None = None
                ) -> WorkloadProfile:
    profiles = profiles if profiles is not None else load_profiles()
    if name not in profiles:
        raise WorkloadError(f"unknown profile {name!r}; valid: {', '.join(sorted(profiles))}")
    return profiles[name]


def default_working_set(cfg: SimConfig | None = None) -> int:
    cfg = cfg or desk_scale(default_config())
    return max(MIN_WORKING_SET, int(cfg.topology.total_pages * DEFAULT_WS_FRACTION))


# --- exact count allocation --------------------------------------------------

def _apportion(total: int, weights: Mapping[Any, float]) -> dict[Any, int]:
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    keys = list(weights)
    s = sum(weights.values())
    if s <= 0 or total == 0:
        return {k: 0 for k in keys}
    exact = {k: total * weights[k] / s for k in keys}
    out = {k: int(exact[k]) for k in keys}
    rest = total - sum(out.values())
    order = sorted(keys, key=lambda k: (-(exact[k] - out[k]), keys.index(k)))
    for k in order[:rest]:
        out[k] += 1
    return out


def _scalar_slots(n: int, n_scalar: int) -> list[bool]:
    """Evenly spaced SCALAR positions (Bresenham)."""
    slots = [False] * n
    for j in range(n_scalar):
        slots[(2 * j + 1) * n // (2 * n_scalar)] = True
    return slots


def _arity(op: VecOpType) -> int:
    if op is O.SELECT:
        return 3
    if op in (O.NOT, O.SHL, O.SHR, O.COPY, O.SHUFFLE, O.REDUCE_ADD):
        return 1
    return 2


# --- the generator -----------------------------------------------------------

class _ReusePool:
    """Page versions that still have reads left in their budget."""

    def __init__(self, rng: random.Random, mean: float, n_pages: int):
        self.rng = rng
        self.p = 1.0 / max(1.0, mean)
        self.left: dict[int, int] = {}
        self.active: list[int] = []
        self.index: dict[int, int] = {}
        self.untouched = list(range(n_pages))
        rng.shuffle(self.untouched)
        self.free: list[int] = []
        self.free_index: dict[int, int] = {}

    def budget(self) -> int:
        # Geometric on {1, 2, ...} with the requested mean.
        if self.p >= 1.0:
            return 1
        u = self.rng.random()
        return 1 + int(math.log1p(-u) / math.log1p(-self.p))

    def _add(self, lst: list[int], idx: dict[int, int], page: int) -> None:
        idx[page] = len(lst)
        lst.append(page)

    def _remove(self, lst: list[int], idx: dict[int, int], page: int) -> None:
        i = idx.pop(page)
        last = lst.pop()
        if last != page:
            lst[i] = last
            idx[last] = i

    def activate(self, page: int, budget: int) -> None:
        if page in self.free_index:
            self._remove(self.free, self.free_index, page)
        self.left[page] = budget
        self._add(self.active, self.index, page)

    def retire(self, page: int) -> None:
        if page in self.index:
            self._remove(self.active, self.index, page)
            self.left.pop(page, None)
        if page not in self.free_index:
            self._add(self.free, self.free_index, page)

    def introduce(self) -> bool:
        if not self.untouched:
            return False
        self.activate(self.untouched.pop(), self.budget())
        return True

    def pick_sources(self, k: int) -> list[int]:
        while len(self.active) < k and self.introduce():
            pass
        if len(self.active) >= k:
            chosen = self.rng.sample(self.active, k)
        else:
            # Pool exhausted: re-read versions beyond their budget.
            chosen = list(self.active)
            spare = [p for p in self.free if p not in chosen]
            chosen += self.rng.sample(spare, min(k - len(chosen), len(spare)))
            for p in chosen:
                if p not in self.index:
                    self.activate(p, 1)
        for p in chosen:
            self.left[p] -= 1
        return chosen

    def pick_dst(self, exclude: set[int]) -> int:
        for _ in range(8):
            if self.free:
                p = self.rng.choice(self.free)
                if p not in exclude:
                    return p
        if self.untouched:
            return self.untouched.pop()
        cands = [p for p in self.free if p not in exclude]
        if cands:
            return self.rng.choice(cands)
        # Every page is still wanted: cut the shortest remaining budget.
        return min((p for p in self.active if p not in exclude), key=lambda p: (self.left[p], p))


def _class_ops(profile: WorkloadProfile, n_vec: int, rng: random.Random) -> list[VecOpType]:
    per_class = _apportion(n_vec, profile.latency_mix)
    ops: list[VecOpType] = []
    for cls, count in per_class.items():
        for op, k in _apportion(count, OP_WEIGHTS[cls]).items():
            ops.extend([op] * k)
    rng.shuffle(ops)
    return ops


def _build(profile: WorkloadProfile, mean: float, ws: int, page_size: int,
           contents: bool) -> Trace:
    rng = random.Random(f"{profile.name}:{profile.seed}")
    n = profile.n_instructions
    per = elems_per_page(page_size, profile.element_width)
    n_scalar = n - round(n * profile.vectorizable_pct / 100)
    slots = _scalar_slots(n, n_scalar)
    ops = iter(_class_ops(profile, n - n_scalar, rng))
    pool = _ReusePool(rng, mean, ws)
    # Reads each instruction makes, on average, set how often a write must
    # start a fresh reusable version to keep the pool in balance.
    mean_reads = _mean_reads(profile)
    q = min(1.0, mean_reads / mean)
    last_writer: dict[int, int] = {}
    instrs: list[VecInstr] = []
    for i in range(n):
        op = O.SCALAR if slots[i] else next(ops)
        k = 2 if op is O.SCALAR else _arity(op)
        srcs = pool.pick_sources(k)
        if op is O.REDUCE_ADD:
            # Accumulate into a second version, which is read as well.
            acc = pool.pick_sources(1)[0] if len(pool.active) > 1 else pool.pick_dst(set(srcs))
            if acc in srcs:
                acc = pool.pick_dst(set(srcs))
            srcs.append(acc)
            dst = acc
        else:
            dst = pool.pick_dst(set(srcs))
        for p in srcs:
            if p in pool.index and pool.left[p] <= 0:
                pool.retire(p)
        deps = tuple(sorted({last_writer[p] for p in srcs if p in last_writer}))
        if op is O.SCALAR:
            ins = VecInstr(i, op, tuple(srcs), dst, 1, profile.element_width, deps, fn=O.ADD)
        else:
            ins = VecInstr(i, op, tuple(srcs), dst, per, profile.element_width, deps)
        instrs.append(ins)
        last_writer[dst] = i
        pool.retire(dst)
        if rng.random() < q:
            pool.activate(dst, pool.budget())
    header = TraceHeader(vector_width=per, element_width=profile.element_width,
                         page_size=page_size, profile=profile.name)
    initial = None
    if contents:
        gen = np.random.default_rng(rng.getrandbits(64))
        pages = sorted({p for ins in instrs for p in ins.src_pages} | {ins.dst_page for ins in instrs})
        initial = {p: gen.integers(0, 256, page_size, dtype=np.uint8).tobytes() for p in pages}
    return Trace(header, instrs, initial)


def _mean_reads(profile: WorkloadProfile) -> float:
    v = profile.vectorizable_pct / 100
    mix = profile.latency_mix
    total = 0.0
    for cls, weights in OP_WEIGHTS.items():
        wsum = sum(weights.values())
        for op, w in weights.items():
            reads = _arity(op) + (1 if op is O.REDUCE_ADD else 0)
            total += mix[cls] / 100 * w / wsum * reads
    return v * total + (1 - v) * 2


def generate(profile: WorkloadProfile, cfg: SimConfig | None = None, *,
             contents: bool = False, calibrate: bool = True) -> Trace:
    """Synthesize a trace whose measured statistics match ``profile``.

    Class and SCALAR counts are exact. Reuse comes from a pool of page
    versions that each receive a geometric read budget; a short feedback
    loop rescales the budget mean so the measured reuse lands on target.
    """
    profile.validate()
    cfg = cfg or desk_scale(default_config())
    ws = profile.working_set if profile.working_set is not None else default_working_set(cfg)
    if ws > cfg.topology.total_pages:
        raise WorkloadError(f"{profile.name}: working set of {ws} pages exceeds capacity of "
                            f"{cfg.topology.total_pages} pages")
    page_size = cfg.topology.page_size
    if profile.n_instructions == 0:
        per = elems_per_page(page_size, profile.element_width)
        return Trace(TraceHeader(per, profile.element_width, page_size, profile.name), [],
                     {} if contents else None)
    mean = profile.avg_reuse
    best = None
    for _ in range(4 if calibrate else 1):
        t = _build(profile, mean, ws, page_size, contents=False)
        got = trace_stats(t).avg_reuse
        err = abs(got - profile.avg_reuse) / profile.avg_reuse
        if best is None or err < best[0]:
            best = (err, mean)
        if err <= REUSE_TOL / 4 or got <= 0:
            break
        mean = max(1.0, mean * profile.avg_reuse / got)
    t = _build(profile, best[1], ws, page_size, contents)
    return validate_trace(t)


def stats_within_tolerance(profile: WorkloadProfile, t: Trace) -> list[str]:
    """Empty when the trace matches the profile, else the failing metrics."""
    s = trace_stats(t)
    bad = []
    if abs(s.vectorizable_pct - profile.vectorizable_pct) > VECTORIZABLE_TOL:
        bad.append(f"vectorizable_pct {s.vectorizable_pct:.2f} vs {profile.vectorizable_pct}")
    if abs(s.avg_reuse - profile.avg_reuse) > REUSE_TOL * profile.avg_reuse:
        bad.append(f"avg_reuse {s.avg_reuse:.2f} vs {profile.avg_reuse}")
    if profile.vectorizable_pct > 0:
        for k, v in profile.latency_mix.items():
            if abs(s.latency_class_mix[k] - v) > MIX_TOL:
                bad.append(f"{k} share {s.latency_class_mix[k]:.2f} vs {v}")
    return bad
