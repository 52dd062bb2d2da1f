"""Random trace and kernel builders plus independent reference oracles."""
from __future__ import annotations

import random

import numpy as np

from ndpsim.isa import Trace, TraceHeader, VecInstr, VecOpType, raw_producers
from ndpsim.kernel import Access, ArrayDecl, KernelIR, Loop, Statement
from ndpsim.offloader import INF, RESOURCES, FeatureVector, OperandState, Location
from ndpsim.resources import ResourceKind

O = VecOpType
VECTOR_OPS = [o for o in VecOpType if o is not O.SCALAR]
ARITY = {O.NOT: 1, O.SHL: 1, O.SHR: 1, O.COPY: 1, O.SHUFFLE: 1, O.REDUCE_ADD: 1,
         O.SUB: 2, O.MUL: 2, O.CMP_GT: 2, O.CMP_EQ: 2, O.SELECT: 3}


def random_trace(rng: random.Random, n: int, n_pages: int = 8, page_size: int = 4096,
                 width: int = 32, contents: bool = True, scalar_share: float = 0.2) -> Trace:
    """A valid trace over a small page pool with correct RAW producer ids."""
    per = page_size * 8 // width
    instrs = []
    for i in range(n):
        if rng.random() < scalar_share:
            fn = rng.choice(VECTOR_OPS)
            k = ARITY.get(fn, rng.randint(1, 3))
            srcs = [rng.randrange(n_pages) for _ in range(k)]
            dst = rng.randrange(n_pages)
            if fn is O.REDUCE_ADD:
                srcs.append(dst)
            instrs.append(VecInstr(i, O.SCALAR, tuple(srcs), dst, 1, width, fn=fn,
                                   imm=rng.randint(0, width)))
            continue
        op = rng.choice(VECTOR_OPS)
        k = ARITY.get(op, rng.randint(1, 4))
        srcs = [rng.randrange(n_pages) for _ in range(k)]
        dst = rng.randrange(n_pages)
        if op is O.REDUCE_ADD:
            srcs.append(dst)
        length = per if rng.random() < 0.7 else rng.randint(1, per)
        instrs.append(VecInstr(i, op, tuple(srcs), dst, length, width,
                               imm=rng.randint(0, width)))
    deps = raw_producers(instrs)
    instrs = [VecInstr(x.id, x.op, x.src_pages, x.dst_page, x.vector_length, x.element_width,
                       d, x.src_pos, x.dst_pos, x.imm, x.fn) for x, d in zip(instrs, deps)]
    header = TraceHeader(vector_width=per, element_width=width, page_size=page_size,
                         profile="random")
    initial = None
    if contents:
        gen = np.random.default_rng(rng.getrandbits(64))
        pages = {p for x in instrs for p in x.src_pages} | {x.dst_page for x in instrs}
        initial = {p: gen.integers(0, 256, page_size, dtype=np.uint8).tobytes()
                   for p in sorted(pages)}
    return Trace(header, instrs, initial)


def random_kernel(rng: random.Random, width: int = 32, page_size: int = 4096) -> KernelIR:
    """Affine loop nests mixing vectorizable, carried and reduction statements."""
    per = page_size * 8 // width
    n_arrays = rng.randint(2, 4)
    length = rng.choice([rng.randint(4, 64), rng.randint(per // 2, 2 * per)])
    arrays = tuple(ArrayDecl(f"a{j}", length + 8) for j in range(n_arrays))
    loops = []
    for _ in range(rng.randint(1, 2)):
        trip = rng.randint(0, length)
        body = []
        for _ in range(rng.randint(1, 3)):
            op = rng.choice([o for o in VECTOR_OPS if o is not O.REDUCE_ADD]
                            + ([O.REDUCE_ADD] if rng.random() < 0.3 else []))
            k = ARITY.get(op, rng.randint(1, 3))
            dst_arr = rng.choice(arrays).name
            srcs = tuple(Access(rng.choice(arrays).name, rng.randint(0, 8)) for _ in range(k))
            if op is O.REDUCE_ADD:
                dst = Access(dst_arr, rng.randint(0, 7), scale=0)
                srcs = tuple(Access(a.array if a.array != dst_arr else
                                    next(x.name for x in arrays if x.name != dst_arr),
                                    a.offset) for a in srcs)
            else:
                dst = Access(dst_arr, rng.randint(0, 8))
            body.append(Statement(op, dst, srcs, imm=rng.randint(0, width),
                                  vectorizable=rng.random() < 0.85,
                                  loop_carried=rng.random() < 0.1))
        loops.append(Loop(trip, tuple(body)))
    return KernelIR(arrays, tuple(loops), width, name="random_kernel")


def kernel_initial(k: KernelIR, page_size: int, seed: int) -> dict[int, bytes]:
    per = page_size * 8 // k.element_width
    n_pages = sum(-(-a.length // per) for a in k.arrays)
    gen = np.random.default_rng(seed)
    return {p: gen.integers(0, 256, page_size, dtype=np.uint8).tobytes() for p in range(n_pages)}


# --- cost-model oracle -------------------------------------------------------

def oracle_total(fv: FeatureVector, r: ResourceKind) -> int:
    comp = fv.latency_comp[r]
    if comp >= INF:
        return INF
    wait = fv.delay_dd if fv.delay_dd > fv.delay_queue[r] else fv.delay_queue[r]
    return min(INF, comp + fv.latency_dm[r] + wait)


def oracle_argmin(fv: FeatureVector, order=("PUD", "IFP", "ISP")) -> ResourceKind:
    """Enumerate every resource; keep the minimum, then break ties."""
    home = {"ISP": Location.DRAM, "PUD": Location.DRAM, "IFP": Location.FLASH}
    best = None
    for r in RESOURCES:
        if fv.latency_comp[r] >= INF:
            continue
        t = oracle_total(fv, r)
        resident = all(s.owner is home[r.value] for s in fv.operand_locations)
        key = (t, 0 if resident else 1, order.index(r.value))
        if best is None or key < best[0]:
            best = (key, r)
    return best[1]


def random_feature_vector(rng: random.Random, small: bool = False) -> FeatureVector:
    hi = 8 if small else 50_000
    op = rng.choice(VECTOR_OPS)
    locs = tuple(OperandState(rng.choice(list(Location)), rng.random() < 0.3)
                 for _ in range(rng.randint(1, 3)))
    comp, dm, queue = {}, {}, {}
    for r in RESOURCES:
        unsupported = r is not ResourceKind.ISP and rng.random() < 0.2
        comp[r] = INF if unsupported else rng.randint(0, hi)
        dm[r] = INF if unsupported else rng.randint(0, hi)
        queue[r] = INF if unsupported else rng.randint(0, hi)
    return FeatureVector(op, locs, rng.randint(0, hi), queue, dm, comp)
