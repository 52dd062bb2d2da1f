from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .isa import Category, VecInstr, VecOpType
from .topology import SimConfig, ceil_div

O = VecOpType


class ResourceKind(str, Enum):
    ISP = "ISP"
    PUD = "PUD"
    IFP = "IFP"


R = ResourceKind

#: Native operations of the in-DRAM substrate. NOP has no trace-level
#: counterpart, so 15 of the 16 are reachable from a trace.
PUD_NATIVE_OPS = ("AND", "OR", "XOR", "NOT", "SHL", "SHR", "ADD", "SUB", "MUL", "CMP_GT",
                  "CMP_EQ", "SELECT", "COPY", "SHUFFLE", "REDUCE_ADD", "NOP")
IFP_OPS = frozenset({O.AND, O.OR, O.XOR, O.NOT, O.SHL, O.SHR, O.ADD, O.SUB, O.MUL})

CAPABILITIES: dict[ResourceKind, frozenset[VecOpType]] = {
    R.ISP: frozenset(VecOpType),
    R.PUD: frozenset(O(n) for n in PUD_NATIVE_OPS if n != "NOP"),
    R.IFP: IFP_OPS,
}

_CAP_CACHE: dict[int, dict[ResourceKind, frozenset[VecOpType]]] = {}


def capability_table(cfg: SimConfig | None = None) -> dict[ResourceKind, frozenset[VecOpType]]:
    override = cfg.resources.capabilities if cfg is not None else None
    if not override:
        return CAPABILITIES
    key = id(override)
    table = _CAP_CACHE.get(key)
    if table is None:
        table = dict(CAPABILITIES)
        for name, ops in override.items():
            table[R(name)] = frozenset(O(o) for o in ops)
        # ISP stays the universal fallback.
        table[R.ISP] = frozenset(VecOpType)
        _CAP_CACHE[key] = table
    return table


def supports(r: ResourceKind, op: VecOpType, cfg: SimConfig | None = None) -> bool:
    return op in capability_table(cfg)[r]


class UnsupportedOperation(ValueError):
    pass


def _require(r: ResourceKind, ins: VecInstr, cfg: SimConfig) -> None:
    if not supports(r, ins.op, cfg):
        raise UnsupportedOperation(f"{r.value} does not support {ins.op.value}")


def _steps(ins: VecInstr) -> int:
    """Binary steps needed to fold an n-ary operation."""
    op = ins.semantic_op
    if op is not None and op.nary:
        return max(1, ins.n_operands - 1)
    return 1


def pud_k(op: VecOpType, cfg: SimConfig) -> int:
    table = cfg.resources.pud_k
    if op.name in table:
        return table[op.name]
    if op in (O.CMP_GT, O.CMP_EQ):
        return table["CMP"]
    if op.category is Category.BITWISE:
        return table["bitwise"]
    return table.get("COPY", 1)


def isp_cycles(op: VecOpType | None, cfg: SimConfig) -> int:
    table = cfg.resources.isp_cycles
    if op is not None and op.name in table:
        return table[op.name]
    return table["default"]


def pud_sub_length(width: int, cfg: SimConfig) -> int:
    return cfg.dram.row_size * 8 // width


def _ifp_senses(ins: VecInstr) -> int:
    n = max(1, ins.n_operands)
    if ins.op is O.AND:
        return ceil_div(n, 48)
    if ins.op is O.OR:
        return ceil_div(n, 4)
    return n


def _ifp_bit_serial(cfg: SimConfig) -> int:
    ft = cfg.flash_timing
    return ft.t_xor + ft.t_and_or + ft.t_latch_transfer


def compute_latency(r: ResourceKind, ins: VecInstr, cfg: SimConfig) -> int:
    """Execution latency in ns of ``ins`` on ``r`` with no contention."""
    _require(r, ins, cfg)
    if ins.vector_length == 0:
        return 0
    w = ins.element_width
    if r is R.IFP:
        ft = cfg.flash_timing
        op, n = ins.op, max(1, ins.n_operands)
        if op in (O.AND, O.OR):
            return _ifp_senses(ins) * (ft.t_read_slc + ft.t_and_or)
        if op is O.XOR:
            return n * ft.t_read_slc + (n - 1) * ft.t_xor
        if op is O.NOT:
            return ft.t_read_slc + ft.t_latch_transfer
        if op in (O.SHL, O.SHR):
            return ft.t_read_slc + min(max(ins.imm, 1), w) * ft.t_latch_transfer
        add_prim = w * _ifp_bit_serial(cfg)
        if op in (O.ADD, O.SUB):
            return n * ft.t_read_slc + max(1, n - 1) * add_prim
        # MUL: one shift-and-add iteration per multiplier bit.
        return 2 * ft.t_read_slc + w * (ft.t_latch_transfer + add_prim)
    if r is R.PUD:
        nsub = ceil_div(ins.vector_length, pud_sub_length(w, cfg))
        rounds = ceil_div(nsub, cfg.dram.banks)
        return rounds * pud_k(ins.op, cfg) * _steps(ins) * cfg.dram.t_bbop
    cycles = _isp_native_ops(ins, cfg) * isp_cycles(ins.semantic_op, cfg)
    return ceil_div(cycles * 1_000_000_000, cfg.cores.clock)


def _isp_native_ops(ins: VecInstr, cfg: SimConfig) -> int:
    return ceil_div(ins.vector_length * ins.element_width, cfg.cores.simd_width) * _steps(ins)


def _per_kb(e_per_kb: int, nbytes: int) -> int:
    return ceil_div(e_per_kb * nbytes, 1024)


def compute_energy(r: ResourceKind, ins: VecInstr, cfg: SimConfig) -> int:
    """Computation energy in pJ of ``ins`` on ``r``."""
    _require(r, ins, cfg)
    if ins.vector_length == 0:
        return 0
    e = cfg.energy
    w = ins.element_width
    nbytes = ins.nbytes
    if r is R.IFP:
        op, n = ins.op, max(1, ins.n_operands)
        if op in (O.AND, O.OR):
            s = _ifp_senses(ins)
            return s * (e.e_read_per_channel + _per_kb(e.e_and_or_per_kb, nbytes))
        if op is O.XOR:
            return n * e.e_read_per_channel + (n - 1) * _per_kb(e.e_xor_per_kb, nbytes)
        if op in (O.NOT, O.SHL, O.SHR):
            steps = 1 if op is O.NOT else min(max(ins.imm, 1), w)
            return e.e_read_per_channel + steps * _per_kb(e.e_latch_per_kb, nbytes)
        bit = _per_kb(e.e_xor_per_kb + e.e_and_or_per_kb + e.e_latch_per_kb, nbytes)
        if op in (O.ADD, O.SUB):
            return n * e.e_read_per_channel + max(1, n - 1) * w * bit
        return 2 * e.e_read_per_channel + w * (_per_kb(e.e_latch_per_kb, nbytes) + w * bit)
    if r is R.PUD:
        nsub = ceil_div(ins.vector_length, pud_sub_length(w, cfg))
        return nsub * pud_k(ins.op, cfg) * _steps(ins) * e.e_bbop
    return _isp_native_ops(ins, cfg) * isp_cycles(ins.semantic_op, cfg) * e.e_isp_per_op


class Primitive(str, Enum):
    MVE_SIMD_OP = "MVE_SIMD_OP"
    BBOP_OP = "BBOP_OP"
    MWS_AND = "MWS_AND"
    MWS_OR = "MWS_OR"
    XOR_LATCH = "XOR_LATCH"
    SHIFT_AND_ADD = "SHIFT_AND_ADD"


@dataclass(frozen=True)
class NativeInstr:
    resource: ResourceKind
    primitive: Primitive
    repeat_count: int
    sub_vector_length: int


_IFP_PRIMITIVE = {O.AND: Primitive.MWS_AND, O.OR: Primitive.MWS_OR, O.XOR: Primitive.XOR_LATCH,
                  O.NOT: Primitive.XOR_LATCH, O.SHL: Primitive.SHIFT_AND_ADD,
                  O.SHR: Primitive.SHIFT_AND_ADD, O.ADD: Primitive.SHIFT_AND_ADD,
                  O.SUB: Primitive.SHIFT_AND_ADD, O.MUL: Primitive.SHIFT_AND_ADD}


def transform(ins: VecInstr, r: ResourceKind, cfg: SimConfig) -> list[NativeInstr]:
    """Lower a trace instruction into the native batch of resource ``r``."""
    _require(r, ins, cfg)
    n = ins.vector_length
    if n == 0:
        return []
    if r is R.PUD:
        sub = min(n, pud_sub_length(ins.element_width, cfg))
        return [NativeInstr(r, Primitive.BBOP_OP, ceil_div(n, sub), sub)]
    if r is R.ISP:
        lanes = max(1, cfg.cores.simd_width // ins.element_width)
        sub = min(n, lanes)
        return [NativeInstr(r, Primitive.MVE_SIMD_OP, ceil_div(n, sub), sub)]
    prim = _IFP_PRIMITIVE[ins.op]
    reps = _ifp_senses(ins) if ins.op in (O.AND, O.OR) else 1
    if ins.op is O.MUL:
        reps = ins.element_width
    return [NativeInstr(r, prim, reps, n)]


class QueueError(RuntimeError):
    pass


class ExecQueue:
    """FIFO of dispatched batches with a running latency counter."""

    __slots__ = ("pending", "counter")

    def __init__(self) -> None:
        self.pending: deque[tuple[Any, int]] = deque()
        self.counter = 0

    def enqueue(self, batch: Any, est_latency: int) -> None:
        if est_latency < 0:
            raise QueueError("estimated latency must be non-negative")
        self.pending.append((batch, est_latency))
        self.counter += est_latency

    def dequeue_complete(self, batch: Any) -> None:
        if not self.pending or self.pending[0][0] is not batch:
            raise QueueError("completed batch is not at the head of the queue")
        _, est = self.pending.popleft()
        self.counter -= est

    def __len__(self) -> int:
        return len(self.pending)
