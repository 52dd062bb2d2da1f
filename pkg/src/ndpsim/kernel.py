"""Miniature loop-kernel IR and a strip-mining vectorizer that lowers it to
a page-aligned vector trace."""
from __future__ import annotations

from dataclasses import dataclass, field

from .isa import (PageStore, Trace, TraceHeader, VecInstr, VecOpType, elems_per_page,
                  evaluate, apply)

O = VecOpType


class KernelError(ValueError):
    """Invalid kernel or a kernel the vectorizer refuses to lower."""


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    length: int


@dataclass(frozen=True)
class Access:
    """``array[scale * i + offset]``; ``indirect`` names an index array."""

    array: str
    offset: int = 0
    scale: int = 1
    indirect: str | None = None

    def index(self, i: int) -> int:
        return self.scale * i + self.offset


@dataclass(frozen=True)
class Statement:
    op: VecOpType
    dst: Access
    srcs: tuple[Access, ...]
    imm: int = 1
    vectorizable: bool = True
    loop_carried: bool = False


@dataclass(frozen=True)
class Loop:
    trip_count: int
    body: tuple[Statement, ...]


@dataclass(frozen=True)
class KernelIR:
    arrays: tuple[ArrayDecl, ...]
    loops: tuple[Loop, ...]
    element_width: int = 32
    name: str = "kernel"


@dataclass
class _Layout:
    base: dict[str, int] = field(default_factory=dict)
    length: dict[str, int] = field(default_factory=dict)
    per_page: int = 1
    n_pages: int = 0

    def pos(self, acc: Access, i: int) -> int:
        return self.base[acc.array] * self.per_page + acc.index(i)


def layout_arrays(k: KernelIR, page_size: int) -> _Layout:
    """Arrays are laid out page-aligned, back to back, from logical page 0."""
    per = elems_per_page(page_size, k.element_width)
    lay = _Layout(per_page=per)
    page = 0
    for a in k.arrays:
        if a.name in lay.base:
            raise KernelError(f"duplicate array {a.name}")
        if a.length < 1:
            raise KernelError(f"array {a.name} must be non-empty")
        lay.base[a.name] = page
        lay.length[a.name] = a.length
        page += -(-a.length // per)
    lay.n_pages = page
    return lay


def _check(k: KernelIR, lay: _Layout) -> None:
    if k.element_width not in (8, 32):
        raise KernelError("element width must be 8 or 32")
    for li, loop in enumerate(k.loops):
        if loop.trip_count < 0:
            raise KernelError(f"loop {li}: negative trip count")
        for si, st in enumerate(loop.body):
            where = f"loop {li}, statement {si}"
            if st.op is O.SCALAR:
                raise KernelError(f"{where}: SCALAR is not a kernel operation")
            if len(st.srcs) < st.op.min_operands or (not st.op.nary and len(st.srcs) > st.op.min_operands):
                raise KernelError(f"{where}: wrong operand count for {st.op.value}")
            for acc in (st.dst, *st.srcs):
                if acc.indirect is not None:
                    raise KernelError(f"{where}: non-affine access to {acc.array}")
                if acc.array not in lay.base:
                    raise KernelError(f"{where}: unknown array {acc.array}")
                if loop.trip_count:
                    lo, hi = sorted((acc.index(0), acc.index(loop.trip_count - 1)))
                    if lo < 0 or hi >= lay.length[acc.array]:
                        raise KernelError(f"{where}: access to {acc.array} out of bounds")
            if st.op is O.REDUCE_ADD and st.dst.scale != 0:
                raise KernelError(f"{where}: REDUCE_ADD needs a fixed destination element")


def interpret_kernel(k: KernelIR, page_size: int, initial: dict[int, bytes] | None = None
                     ) -> dict[int, bytes]:
    """Direct element-by-element execution in source order."""
    lay = layout_arrays(k, page_size)
    _check(k, lay)
    store = PageStore(page_size, initial)
    for p in range(lay.n_pages):
        store.page(p)
    for loop in k.loops:
        for i in range(loop.trip_count):
            for st in loop.body:
                ins = _scalar_instr(0, st, i, lay, page_size, k.element_width)
                apply(evaluate(ins, store), store)
    return store.snapshot()


def _pages_of(pos: int, n: int, per: int) -> list[int]:
    return list(range(pos // per, (pos + n - 1) // per + 1))


def _scalar_instr(iid: int, st: Statement, i: int, lay: _Layout, page_size: int,
                  width: int) -> VecInstr:
    per = lay.per_page
    spos = tuple(lay.pos(a, i) for a in st.srcs)
    dpos = lay.pos(st.dst, i)
    pages = sorted({p // per for p in spos} | ({dpos // per} if st.op is O.REDUCE_ADD else set()))
    return VecInstr(id=iid, op=O.SCALAR, src_pages=tuple(pages), dst_page=dpos // per,
                    vector_length=1, element_width=width, src_pos=spos, dst_pos=dpos,
                    imm=st.imm, fn=st.op)


def _loop_safety(loop: Loop) -> tuple[bool, set[int]]:
    """Return (strip order is legal, statements that must stay scalar).

    Strip-mining runs each statement over a whole strip before the next one.
    That is only legal if no later statement feeds an earlier one across
    iterations; a statement that reads its own output from an earlier
    iteration must run element by element.
    """
    scalar: set[int] = set()
    accesses: list[tuple[int, Access, bool]] = []
    for si, st in enumerate(loop.body):
        accesses.append((si, st.dst, True))
        accesses.extend((si, a, False) for a in st.srcs)
        # SHUFFLE permutes lanes, so it has no element-wise strip form.
        if (not st.vectorizable or st.loop_carried or st.op is O.SHUFFLE
                or st.dst.scale not in (0, 1) or any(a.scale != 1 for a in st.srcs)
                or (st.dst.scale == 0 and st.op is not O.REDUCE_ADD)):
            scalar.add(si)
        if st.dst.scale == 0 and any(a.array == st.dst.array for a in st.srcs):
            scalar.add(si)
    written = {a.array for _, a, w in accesses if w}
    for si, st in enumerate(loop.body):
        if st.dst.scale != 1 or any(a.scale != 1 for a in st.srcs):
            # Strided or fixed-element accesses: only safe when nobody else
            # touches the arrays involved.
            for a in (st.dst, *st.srcs):
                if a.scale != 1 and a.array in written:
                    if any(sj != si and b.array == a.array for sj, b, _ in accesses):
                        return False, scalar
                    if a is not st.dst and a.array == st.dst.array and st.op is not O.REDUCE_ADD:
                        scalar.add(si)
        for a in st.srcs:
            if a.array == st.dst.array and st.dst.scale == 1 and a.scale == 1 \
                    and st.dst.offset > a.offset:
                scalar.add(si)
    for x_si, x, xw in accesses:
        for y_si, y, yw in accesses:
            if x_si >= y_si or x.array != y.array or not (xw or yw):
                continue
            if x.scale != 1 or y.scale != 1:
                continue
            # x belongs to an earlier statement; the strip runs all of x first.
            if x.offset < y.offset:
                return False, scalar
    return True, scalar


def vectorize_kernel(k: KernelIR, vector_width: int, page_size: int = 4096,
                     initial: dict[int, bytes] | None = None) -> Trace:
    """Strip-mine every loop into page-aligned vector instructions.

    A vectorizable statement over N iterations yields ceil(N / width) vector
    instructions when its destination is page aligned; chunks that would
    cross a destination page boundary are split there. Other statements
    yield one SCALAR instruction per iteration. Producer ids are the last
    writers of every page an instruction reads.
    """
    per = elems_per_page(page_size, k.element_width)
    if vector_width < 1:
        raise KernelError("vector width must be >= 1")
    if vector_width > per:
        raise KernelError(f"vector width {vector_width} exceeds one page ({per} elements)")
    lay = layout_arrays(k, page_size)
    _check(k, lay)
    instrs: list[VecInstr] = []
    last_writer: dict[int, int] = {}

    def emit(ins: VecInstr) -> None:
        deps = tuple(sorted({last_writer[p] for p in ins.src_pages if p in last_writer}))
        ins = VecInstr(id=len(instrs), op=ins.op, src_pages=ins.src_pages, dst_page=ins.dst_page,
                       vector_length=ins.vector_length, element_width=ins.element_width,
                       producer_ids=deps, src_pos=ins.src_pos, dst_pos=ins.dst_pos,
                       imm=ins.imm, fn=ins.fn)
        instrs.append(ins)
        last_writer[ins.dst_page] = ins.id

    for loop in k.loops:
        legal, scalar = _loop_safety(loop)
        n = loop.trip_count
        if not legal:
            for i in range(n):
                for st in loop.body:
                    emit(_scalar_instr(0, st, i, lay, page_size, k.element_width))
            continue
        for lo in range(0, n, vector_width):
            hi = min(n, lo + vector_width)
            for si, st in enumerate(loop.body):
                if si in scalar:
                    for i in range(lo, hi):
                        emit(_scalar_instr(0, st, i, lay, page_size, k.element_width))
                    continue
                start = lo
                while start < hi:
                    dpos = lay.pos(st.dst, start)
                    if st.op is O.REDUCE_ADD:
                        stop = hi
                    else:
                        stop = min(hi, start + (per - dpos % per))
                    length = stop - start
                    spos = tuple(lay.pos(a, start) for a in st.srcs)
                    pages = sorted({p for s in spos for p in _pages_of(s, length, per)}
                                   | ({dpos // per} if st.op is O.REDUCE_ADD else set()))
                    emit(VecInstr(id=0, op=st.op, src_pages=tuple(pages), dst_page=dpos // per,
                                  vector_length=length, element_width=k.element_width,
                                  src_pos=spos, dst_pos=dpos, imm=st.imm))
                    start = stop
    header = TraceHeader(vector_width=vector_width, element_width=k.element_width,
                         page_size=page_size, profile=k.name)
    return Trace(header, instrs, dict(initial) if initial is not None else None)
