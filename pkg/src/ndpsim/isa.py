"""Vector instruction set, trace file codec, trace statistics and the
reference (in-order) interpreter used as the functional oracle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

TRACE_VERSION = 1


class TraceError(ValueError):
    """Malformed or inconsistent trace."""


class LatencyClass(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Category(str, Enum):
    BITWISE = "bitwise"
    ARITHMETIC = "arithmetic"
    PREDICATION = "predication"
    DATA = "data"
    CONTROL = "control"


class VecOpType(str, Enum):
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    NOT = "NOT"
    SHL = "SHL"
    SHR = "SHR"
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    CMP_GT = "CMP_GT"
    CMP_EQ = "CMP_EQ"
    SELECT = "SELECT"
    COPY = "COPY"
    SHUFFLE = "SHUFFLE"
    REDUCE_ADD = "REDUCE_ADD"
    SCALAR = "SCALAR"

    @property
    def category(self) -> Category:
        return _CATEGORY[self]

    @property
    def latency_class(self) -> LatencyClass | None:
        """``None`` for SCALAR, which is not a vector operation."""
        return _LATENCY[self]

    @property
    def min_operands(self) -> int:
        return _ARITY[self][0]

    @property
    def nary(self) -> bool:
        return _ARITY[self][1]


O = VecOpType
_CATEGORY = {
    **{o: Category.BITWISE for o in (O.AND, O.OR, O.XOR, O.NOT, O.SHL, O.SHR)},
    **{o: Category.ARITHMETIC for o in (O.ADD, O.SUB, O.MUL)},
    **{o: Category.PREDICATION for o in (O.CMP_GT, O.CMP_EQ, O.SELECT)},
    **{o: Category.DATA for o in (O.COPY, O.SHUFFLE, O.REDUCE_ADD)},
    O.SCALAR: Category.CONTROL,
}
_LATENCY = {
    **{o: LatencyClass.LOW for o in (O.AND, O.OR, O.XOR, O.NOT, O.SHL, O.SHR, O.COPY, O.SHUFFLE)},
    **{o: LatencyClass.MEDIUM for o in (O.ADD, O.SUB, O.CMP_GT, O.CMP_EQ, O.SELECT)},
    **{o: LatencyClass.HIGH for o in (O.MUL, O.REDUCE_ADD)},
    O.SCALAR: None,
}
# (minimum operand count, accepts more than the minimum)
_ARITY = {
    O.AND: (1, True), O.OR: (1, True), O.XOR: (1, True), O.ADD: (1, True),
    O.NOT: (1, False), O.SHL: (1, False), O.SHR: (1, False), O.COPY: (1, False),
    O.SHUFFLE: (1, False), O.REDUCE_ADD: (1, False),
    O.SUB: (2, False), O.MUL: (2, False), O.CMP_GT: (2, False), O.CMP_EQ: (2, False),
    O.SELECT: (3, False), O.SCALAR: (0, True),
}
VECTOR_OPS = tuple(o for o in VecOpType if o is not O.SCALAR)


@dataclass(frozen=True)
class VecInstr:
    """One trace instruction.

    Operands are ``src_pages`` read from element 0, unless ``src_pos`` gives a
    global element position per operand (page * elems_per_page + offset). An
    operand may then straddle two pages; ``src_pages`` lists every page read.
    SCALAR instructions apply ``fn`` to a single element.
    """

    id: int
    op: VecOpType
    src_pages: tuple[int, ...]
    dst_page: int | None
    vector_length: int
    element_width: int
    producer_ids: tuple[int, ...] = ()
    src_pos: tuple[int, ...] | None = None
    dst_pos: int | None = None
    imm: int = 1
    fn: VecOpType | None = None

    @property
    def is_scalar(self) -> bool:
        return self.op is VecOpType.SCALAR

    @property
    def n_operands(self) -> int:
        return len(self.src_pos) if self.src_pos is not None else len(self.src_pages)

    @property
    def semantic_op(self) -> VecOpType | None:
        return self.fn if self.is_scalar else self.op

    @property
    def nbytes(self) -> int:
        return self.vector_length * self.element_width // 8


@dataclass
class TraceHeader:
    vector_width: int
    element_width: int
    page_size: int
    profile: str = ""
    version: int = TRACE_VERSION


@dataclass
class Trace:
    header: TraceHeader
    instrs: list[VecInstr] = field(default_factory=list)
    initial: dict[int, bytes] | None = None

    def __len__(self) -> int:
        return len(self.instrs)

    def pages(self) -> set[int]:
        out: set[int] = set()
        for ins in self.instrs:
            out.update(ins.src_pages)
            if ins.dst_page is not None:
                out.add(ins.dst_page)
        if self.initial:
            out.update(self.initial)
        return out


def elems_per_page(page_size: int, width: int) -> int:
    return page_size * 8 // width


def validate_instr(ins: VecInstr, header: TraceHeader, expected_id: int | None = None) -> None:
    if expected_id is not None and ins.id != expected_id:
        raise TraceError(f"instruction ids must be dense: expected {expected_id}, got {ins.id}")
    if ins.element_width not in (8, 32):
        raise TraceError(f"instr {ins.id}: element width must be 8 or 32")
    if ins.vector_length < 0:
        raise TraceError(f"instr {ins.id}: negative vector length")
    if ins.vector_length * ins.element_width > header.page_size * 8:
        raise TraceError(f"instr {ins.id}: vector exceeds one page")
    if ins.vector_length > header.vector_width:
        raise TraceError(f"instr {ins.id}: vector length exceeds header vector width")
    for p in ins.producer_ids:
        if p >= ins.id:
            raise TraceError(f"instr {ins.id}: producer {p} is not an earlier instruction")
        if p < 0:
            raise TraceError(f"instr {ins.id}: negative producer id {p}")
    if any(p < 0 for p in ins.src_pages) or (ins.dst_page is not None and ins.dst_page < 0):
        raise TraceError(f"instr {ins.id}: negative page id")
    if ins.is_scalar:
        if ins.vector_length != 1:
            raise TraceError(f"instr {ins.id}: SCALAR must have vector length 1")
        if ins.fn is not None:
            if ins.fn is VecOpType.SCALAR:
                raise TraceError(f"instr {ins.id}: SCALAR fn cannot be SCALAR")
            if ins.n_operands < ins.fn.min_operands or ins.dst_page is None:
                raise TraceError(f"instr {ins.id}: too few operands for {ins.fn.value}")
        return
    if not ins.src_pages:
        raise TraceError(f"instr {ins.id}: {ins.op.value} needs source pages")
    if ins.dst_page is None:
        raise TraceError(f"instr {ins.id}: {ins.op.value} needs a destination page")
    if ins.n_operands < ins.op.min_operands:
        raise TraceError(f"instr {ins.id}: too few operands for {ins.op.value}")


def validate_trace(t: Trace) -> Trace:
    h = t.header
    if h.version != TRACE_VERSION:
        raise TraceError(f"unsupported trace version {h.version}")
    if h.element_width not in (8, 32):
        raise TraceError("header element width must be 8 or 32")
    if h.page_size <= 0 or h.page_size & (h.page_size - 1):
        raise TraceError("header page size must be a power of two")
    if not 1 <= h.vector_width <= elems_per_page(h.page_size, h.element_width):
        raise TraceError("header vector width must be within one page")
    for i, ins in enumerate(t.instrs):
        validate_instr(ins, h, i)
    if t.initial:
        for p, data in t.initial.items():
            if len(data) != h.page_size:
                raise TraceError(f"initial contents of page {p} must be {h.page_size} bytes")
    return t


# --- codec -------------------------------------------------------------------

def _instr_to_obj(ins: VecInstr) -> dict:
    obj = {"id": ins.id, "op": ins.op.value, "srcs": list(ins.src_pages), "dst": ins.dst_page,
           "len": ins.vector_length, "width": ins.element_width, "deps": list(ins.producer_ids)}
    if ins.src_pos is not None:
        obj["spos"] = list(ins.src_pos)
    if ins.dst_pos is not None:
        obj["dpos"] = ins.dst_pos
    if ins.imm != 1:
        obj["imm"] = ins.imm
    if ins.fn is not None:
        obj["fn"] = ins.fn.value
    return obj


def _instr_from_obj(obj: dict) -> VecInstr:
    try:
        spos = obj.get("spos")
        fn = obj.get("fn")
        return VecInstr(
            id=int(obj["id"]), op=VecOpType(obj["op"]),
            src_pages=tuple(int(p) for p in obj["srcs"]),
            dst_page=None if obj["dst"] is None else int(obj["dst"]),
            vector_length=int(obj["len"]), element_width=int(obj["width"]),
            producer_ids=tuple(int(p) for p in obj["deps"]),
            src_pos=None if spos is None else tuple(int(p) for p in spos),
            dst_pos=obj.get("dpos"), imm=int(obj.get("imm", 1)),
            fn=None if fn is None else VecOpType(fn),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise TraceError(f"malformed instruction record {obj!r}: {exc}") from exc


def encode_trace(t: Trace) -> bytes:
    h = t.header
    lines = [json.dumps({"version": h.version, "vector_width": h.vector_width,
                         "element_width": h.element_width, "page_size": h.page_size,
                         "profile": h.profile}, separators=(",", ":"))]
    lines.extend(json.dumps(_instr_to_obj(i), separators=(",", ":")) for i in t.instrs)
    return ("\n".join(lines) + "\n").encode()


def encode_contents(t: Trace) -> bytes | None:
    if t.initial is None:
        return None
    return json.dumps({str(p): t.initial[p].hex() for p in sorted(t.initial)},
                      separators=(",", ":")).encode()


def decode_trace(data: bytes | str, contents: bytes | str | None = None) -> Trace:
    text = data.decode() if isinstance(data, bytes) else data
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TraceError("empty trace stream: missing header")
    try:
        hobj = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceError(f"bad header: {exc}") from exc
    if hobj.get("version") != TRACE_VERSION:
        raise TraceError(f"schema version mismatch: expected {TRACE_VERSION}, "
                         f"got {hobj.get('version')}")
    try:
        header = TraceHeader(vector_width=int(hobj["vector_width"]),
                             element_width=int(hobj["element_width"]),
                             page_size=int(hobj["page_size"]),
                             profile=str(hobj.get("profile", "")))
    except (KeyError, ValueError) as exc:
        raise TraceError(f"bad header: {exc}") from exc
    instrs = []
    for ln in lines[1:]:
        try:
            instrs.append(_instr_from_obj(json.loads(ln)))
        except json.JSONDecodeError as exc:
            raise TraceError(f"bad instruction line: {exc}") from exc
    initial = None
    if contents is not None:
        raw = json.loads(contents)
        initial = {int(p): bytes.fromhex(h) for p, h in raw.items()}
    return validate_trace(Trace(header, instrs, initial))


# --- statistics --------------------------------------------------------------

@dataclass(frozen=True)
class TraceStats:
    n_instructions: int
    vectorizable_pct: float
    avg_reuse: float
    latency_class_mix: dict[str, float]


def trace_stats(t: Trace) -> TraceStats:
    """Summarise a trace.

    ``avg_reuse`` counts, for every version of a page (its pre-trace contents
    or a value written by an instruction), how many distinct instructions read
    it before it is overwritten, and averages over versions read at least once.
    ``latency_class_mix`` is over vector (non-SCALAR) instructions.
    """
    n = len(t.instrs)
    vec = [i for i in t.instrs if not i.is_scalar]
    mix = {c.value: 0.0 for c in LatencyClass}
    for i in vec:
        mix[i.op.latency_class.value] += 1
    if vec:
        mix = {k: 100.0 * v / len(vec) for k, v in mix.items()}
    readers: dict[int, int] = {}
    finished: list[int] = []
    for ins in t.instrs:
        for p in set(ins.src_pages):
            readers[p] = readers.get(p, 0) + 1
        if ins.dst_page is not None:
            prev = readers.pop(ins.dst_page, 0)
            if prev:
                finished.append(prev)
    finished.extend(v for v in readers.values() if v)
    reuse = sum(finished) / len(finished) if finished else 0.0
    return TraceStats(n, 100.0 * len(vec) / n if n else 0.0, reuse, mix)


# --- functional semantics ----------------------------------------------------

_DTYPES = {8: np.dtype("u1"), 32: np.dtype("<u4")}


class PageStore:
    """Logical page contents, zero-filled on first touch."""

    def __init__(self, page_size: int, initial: Mapping[int, bytes] | None = None):
        self.page_size = page_size
        self.pages: dict[int, np.ndarray] = {}
        for p, data in (initial or {}).items():
            self.pages[p] = np.frombuffer(data, dtype=np.uint8).copy()

    def page(self, p: int) -> np.ndarray:
        arr = self.pages.get(p)
        if arr is None:
            arr = self.pages[p] = np.zeros(self.page_size, dtype=np.uint8)
        return arr

    def read(self, pos: int, n: int, width: int) -> np.ndarray:
        per = elems_per_page(self.page_size, width)
        first, last = pos // per, (pos + n - 1) // per
        buf = np.concatenate([self.page(p) for p in range(first, last + 1)]) \
            if last > first else self.page(first)
        view = buf.view(_DTYPES[width])
        off = pos - first * per
        return view[off:off + n].copy()

    def write(self, pos: int, values: np.ndarray, width: int) -> None:
        per = elems_per_page(self.page_size, width)
        dt = _DTYPES[width]
        done = 0
        n = len(values)
        while done < n:
            p, off = divmod(pos + done, per)
            take = min(n - done, per - off)
            self.page(p).view(dt)[off:off + take] = values[done:done + take]
            done += take

    def snapshot(self) -> dict[int, bytes]:
        return {p: a.tobytes() for p, a in sorted(self.pages.items())}


def operand_positions(ins: VecInstr, page_size: int) -> tuple[list[int], int | None]:
    per = elems_per_page(page_size, ins.element_width)
    srcs = list(ins.src_pos) if ins.src_pos is not None else [p * per for p in ins.src_pages]
    if ins.dst_pos is not None:
        dst = ins.dst_pos
    else:
        dst = None if ins.dst_page is None else ins.dst_page * per
    return srcs, dst


Write = tuple[int, np.ndarray, int]


def evaluate(ins: VecInstr, store: PageStore) -> Write | None:
    """Read operands and compute the result; the write is applied separately."""
    op = ins.semantic_op
    if op is None:
        return None
    w = ins.element_width
    dt = _DTYPES[w]
    n = ins.vector_length
    srcs, dst = operand_positions(ins, store.page_size)
    a = [store.read(s, n, w) for s in srcs]
    if op in (O.AND, O.OR, O.XOR, O.ADD):
        ufunc = {O.AND: np.bitwise_and, O.OR: np.bitwise_or,
                 O.XOR: np.bitwise_xor, O.ADD: np.add}[op]
        out = a[0]
        for x in a[1:]:
            out = ufunc(out, x, dtype=dt)
    elif op is O.NOT:
        out = np.invert(a[0])
    elif op is O.SHL:
        out = (a[0].astype(np.uint64) << ins.imm).astype(dt) if ins.imm < w else np.zeros_like(a[0])
    elif op is O.SHR:
        out = (a[0] >> ins.imm).astype(dt) if ins.imm < w else np.zeros_like(a[0])
    elif op is O.SUB:
        out = np.subtract(a[0], a[1], dtype=dt)
    elif op is O.MUL:
        out = np.multiply(a[0], a[1], dtype=dt)
    elif op is O.CMP_GT:
        out = (a[0] > a[1]).astype(dt)
    elif op is O.CMP_EQ:
        out = (a[0] == a[1]).astype(dt)
    elif op is O.SELECT:
        out = np.where(a[0] != 0, a[1], a[2]).astype(dt)
    elif op is O.COPY:
        out = a[0]
    elif op is O.SHUFFLE:
        out = a[0][::-1].copy()
    elif op is O.REDUCE_ADD:
        acc = int(store.read(dst, 1, w)[0]) + int(a[0].astype(np.uint64).sum())
        out = np.array([acc % (1 << w)], dtype=dt)
    else:  # pragma: no cover
        raise TraceError(f"no semantics for {op}")
    return dst, out, w


def apply(write: Write | None, store: PageStore) -> None:
    if write is not None:
        store.write(*write)


def interpret(t: Trace, initial: Mapping[int, bytes] | None = None) -> dict[int, bytes]:
    """Execute the trace strictly in id order; returns final page contents."""
    store = PageStore(t.header.page_size, t.initial if initial is None else initial)
    for ins in t.instrs:
        apply(evaluate(ins, store), store)
        if ins.dst_page is not None:
            store.page(ins.dst_page)
    return store.snapshot()


def raw_producers(instrs: Iterable[VecInstr]) -> list[tuple[int, ...]]:
    """Recompute read-after-write producer ids at page granularity."""
    last: dict[int, int] = {}
    out = []
    for ins in instrs:
        out.append(tuple(sorted({last[p] for p in ins.src_pages if p in last})))
        if ins.dst_page is not None:
            last[ins.dst_page] = ins.id
    return out
