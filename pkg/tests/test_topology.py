from __future__ import annotations

import dataclasses
import itertools

import pytest
from hypothesis import given, strategies as st

from ndpsim.topology import (ConfigError, FlashAddress, SsdTopology, address_from_index,
                             config_from_dict, default_config, desk_scale, linear_page_index,
                             load_config, serialize_config, transfer_ns)


def test_hardware_constants():
    c = default_config()
    ft, topo, e = c.flash_timing, c.topology, c.energy
    assert ft.t_read_slc == 22_500
    assert ft.t_prog_slc == 400_000
    assert ft.t_bers == 3_500_000
    assert (ft.t_and_or, ft.t_latch_transfer, ft.t_xor) == (20, 20, 30)
    assert ft.t_dma == 3_300
    assert (topo.channels, topo.dies_per_channel, topo.planes_per_die) == (8, 8, 2)
    assert (topo.blocks_per_plane, topo.pages_per_block, topo.page_size) == (2048, 196, 4096)
    assert topo.channel_bandwidth == 1_200_000_000
    assert c.dram.t_bbop == 49
    assert c.dram.capacity == 2 * 1024**3
    assert c.dram.banks == 8
    assert (c.cores.n_cores, c.cores.clock) == (5, 1_500_000_000)
    assert e.e_read_per_channel == 20_500_000
    assert (e.e_and_or_per_kb, e.e_latch_per_kb, e.e_xor_per_kb) == (10_000, 10_000, 20_000)
    assert e.e_dma_per_channel == 7_656_000
    assert e.e_bbop == 864


def test_capacity_consistency():
    t = default_config().topology
    assert t.capacity == 8 * 8 * 2 * 2048 * 196 * 4096
    assert t.total_pages * t.page_size == t.capacity


def test_desk_scale_shape():
    t = desk_scale().topology
    assert (t.channels, t.dies_per_channel, t.planes_per_die, t.blocks_per_plane) == (2, 2, 2, 512)
    assert t.total_pages == 2 * 2 * 2 * 512 * 196 == 802_816
    assert desk_scale().flash_timing == default_config().flash_timing
    with pytest.raises(ConfigError):
        desk_scale(factor=0)


def test_load_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("topology:\n  channels: 2\n")
    c = load_config(p)
    assert c.topology.channels == 2
    assert c.replace(topology__channels=8) == default_config()


def test_bad_page_size(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("topology:\n  page_size: 3000\n")
    with pytest.raises(ConfigError, match="page_size must be power of two"):
        load_config(p)


def test_empty_file_is_default(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p) == default_config()


@pytest.mark.parametrize("raw, msg", [
    ({"bogus": {}}, "unknown section"),
    ({"topology": {"lanes": 3}}, "unknown field"),
    ({"topology": {"channels": "8"}}, "must be an integer"),
    ({"topology": {"channels": 0}}, "channels must be >= 1"),
    ({"cores": {"compute_cores": 5}}, "compute_cores"),
    ({"offloader": {"tie_break": ["PUD", "PUD", "ISP"]}}, "tie_break"),
    ({"offloader": {"l2p_dram_pct": 101}}, "l2p_dram_pct"),
    ({"flash_timing": {"t_prog_slc": 100}}, "t_prog_slc"),
    ({"resources": {"isp_cycles": {"MUL": -1}}}, "non-negative"),
])
def test_invalid_configs(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(raw)


def test_partial_table_override_keeps_defaults():
    c = config_from_dict({"resources": {"pud_k": {"ADD": 10}}})
    assert c.resources.pud_k["ADD"] == 10
    assert c.resources.pud_k["MUL"] == 1536


configs = st.builds(
    lambda ch, dies, blocks, page_exp, bw, pct, zero, tr, tb: default_config().replace(
        topology__channels=ch, topology__dies_per_channel=dies, topology__blocks_per_plane=blocks,
        topology__page_size=2 ** page_exp, topology__channel_bandwidth=bw,
        offloader__l2p_dram_pct=pct, offloader__zero_dynamic_features=zero,
        flash_timing__t_read_slc=tr, offloader__tie_break=tb),
    st.integers(1, 16), st.integers(1, 16), st.integers(1, 4096), st.integers(9, 16),
    st.integers(1, 10**10), st.integers(0, 100), st.booleans(), st.integers(1, 399_999),
    st.permutations(["ISP", "PUD", "IFP"]).map(tuple))


@given(configs)
def test_config_round_trip(tmp_path_factory, c):
    p = tmp_path_factory.mktemp("cfg") / "c.yaml"
    p.write_text(serialize_config(c))
    assert load_config(p) == c


def test_address_ends():
    t = default_config().topology
    assert linear_page_index(FlashAddress(0, 0, 0, 0, 0), t) == 0
    last = FlashAddress(t.channels - 1, t.dies_per_channel - 1, t.planes_per_die - 1,
                        t.blocks_per_plane - 1, t.pages_per_block - 1)
    assert linear_page_index(last, t) == t.total_pages - 1
    with pytest.raises(IndexError):
        linear_page_index(FlashAddress(t.channels, 0, 0, 0, 0), t)
    with pytest.raises(IndexError):
        address_from_index(t.total_pages, t)


def test_address_bijection_exhaustive():
    # Lexicographic enumeration is an independent model of the encoding.
    t = SsdTopology(channels=2, dies_per_channel=2, planes_per_die=2, blocks_per_plane=3,
                    pages_per_block=5)
    dims = (t.channels, t.dies_per_channel, t.planes_per_die, t.blocks_per_plane,
            t.pages_per_block)
    for i, coords in enumerate(itertools.product(*map(range, dims))):
        a = FlashAddress(*coords)
        assert linear_page_index(a, t) == i
        assert address_from_index(i, t) == a


@given(st.data())
def test_address_round_trip(data):
    t = desk_scale().topology
    a = FlashAddress(*(data.draw(st.integers(0, n - 1)) for n in (
        t.channels, t.dies_per_channel, t.planes_per_die, t.blocks_per_plane, t.pages_per_block)))
    assert address_from_index(linear_page_index(a, t), t) == a


def test_transfer_rounding():
    # 4096 B at 1.2 GB/s is 3413.33 ns, charged as 3414.
    assert transfer_ns(4096, 1_200_000_000) == 3414
    assert transfer_ns(0, 1_200_000_000) == 0


def test_config_is_immutable():
    c = default_config()
    with pytest.raises(dataclasses.FrozenInstanceError):
        c.topology.channels = 1
