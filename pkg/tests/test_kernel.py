from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import kernel_initial, random_kernel
from ndpsim.isa import VecOpType, interpret, trace_stats, validate_trace
from ndpsim.kernel import (Access, ArrayDecl, KernelError, KernelIR, Loop, Statement,
                           interpret_kernel, vectorize_kernel)

O = VecOpType


def add_kernel(n, extra=()):
    arrays = (ArrayDecl("a", n), ArrayDecl("b", n), ArrayDecl("c", n))
    body = (Statement(O.ADD, Access("c"), (Access("a"), Access("b"))), *extra)
    return KernelIR(arrays, (Loop(n, body),))


def test_two_full_strips():
    t = vectorize_kernel(add_kernel(8192), 4096, page_size=16384)
    assert [i.vector_length for i in t.instrs] == [4096, 4096]
    assert all(i.op is O.ADD for i in t.instrs)


def test_remainder_strip():
    t = vectorize_kernel(add_kernel(5000), 4096, page_size=16384)
    assert [i.vector_length for i in t.instrs] == [4096, 904]


def test_default_page_strips():
    t = vectorize_kernel(add_kernel(5000), 1024)
    assert [i.vector_length for i in t.instrs] == [1024] * 4 + [904]


def test_mixed_vector_and_scalar():
    carried = Statement(O.ADD, Access("d", offset=1), (Access("d"), Access("b")),
                        vectorizable=False)
    k = add_kernel(300, (carried,))
    k = KernelIR(k.arrays + (ArrayDecl("d", 301),), k.loops)
    init = kernel_initial(k, 4096, 5)
    t = vectorize_kernel(k, 128, initial=init)
    assert interpret(t) == interpret_kernel(k, 4096, init)
    vec = sum(1 for i in t.instrs if not i.is_scalar)
    scal = sum(1 for i in t.instrs if i.is_scalar)
    assert vec == 3 and scal == 300
    assert 0 < trace_stats(t).vectorizable_pct < 100


def test_illegal_strip_order_falls_back_to_scalar():
    # Statement 0 reads a[i], which statement 1 wrote one iteration earlier.
    carried = Statement(O.ADD, Access("a", offset=1), (Access("a"), Access("b")))
    k = add_kernel(300, (carried,))
    k = KernelIR((ArrayDecl("a", 301), ArrayDecl("b", 300), ArrayDecl("c", 300)), k.loops)
    init = kernel_initial(k, 4096, 9)
    t = vectorize_kernel(k, 128, initial=init)
    assert all(i.is_scalar for i in t.instrs) and len(t.instrs) == 600
    assert interpret(t) == interpret_kernel(k, 4096, init)


def test_rejects_indirect_and_out_of_bounds():
    arrays = (ArrayDecl("a", 10), ArrayDecl("i", 10))
    k = KernelIR(arrays, (Loop(10, (Statement(O.COPY, Access("a"), (Access("a", indirect="i"),)),)),))
    with pytest.raises(KernelError, match="non-affine"):
        vectorize_kernel(k, 4)
    k = KernelIR(arrays, (Loop(10, (Statement(O.COPY, Access("a"), (Access("i", offset=1),)),)),))
    with pytest.raises(KernelError, match="out of bounds"):
        vectorize_kernel(k, 4)
    with pytest.raises(KernelError, match="exceeds one page"):
        vectorize_kernel(add_kernel(10), 2048)


def test_read_ahead_stays_vector():
    # b[i] = a[i+1] then a[i] = ...: strip order is legal because the read is ahead.
    arrays = (ArrayDecl("a", 2001), ArrayDecl("b", 2000))
    body = (Statement(O.COPY, Access("b"), (Access("a", offset=1),)),
            Statement(O.NOT, Access("a"), (Access("b"),)))
    k = KernelIR(arrays, (Loop(2000, body),))
    init = kernel_initial(k, 4096, 3)
    t = vectorize_kernel(k, 512, initial=init)
    assert all(not i.is_scalar for i in t.instrs)
    assert interpret(t) == interpret_kernel(k, 4096, init)


def test_reduction():
    arrays = (ArrayDecl("x", 3000), ArrayDecl("s", 1))
    k = KernelIR(arrays, (Loop(3000, (Statement(O.REDUCE_ADD, Access("s", scale=0),
                                                (Access("x"),)),)),))
    init = kernel_initial(k, 4096, 11)
    t = vectorize_kernel(k, 1024, initial=init)
    assert [i.vector_length for i in t.instrs] == [1024, 1024, 952]
    assert all(i.dst_page in i.src_pages for i in t.instrs)
    assert interpret(t) == interpret_kernel(k, 4096, init)


def elements_per_statement(k: KernelIR) -> int:
    return sum(loop.trip_count * len(loop.body) for loop in k.loops)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_conservation_and_equivalence(seed):
    rng = random.Random(seed)
    k = random_kernel(rng, width=rng.choice([8, 32]))
    per = 4096 * 8 // k.element_width
    init = kernel_initial(k, 4096, seed)
    t = validate_trace(vectorize_kernel(k, rng.choice([1, 5, 64, per]), 4096, init))
    assert sum(i.vector_length for i in t.instrs) == elements_per_statement(k)
    assert interpret(t) == interpret_kernel(k, 4096, init)
    for ins in t.instrs:
        assert all(p < ins.id for p in ins.producer_ids)
