"""Hardware description of the simulated SSD.

Every quantity is an integer in a fixed unit so that configs round-trip
exactly and energy sums stay exact:

* times in nanoseconds
* energies in picojoules
* bandwidths in bytes per second
* clock in hertz, power in milliwatts
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed or violates an invariant."""


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class SsdTopology:
    channels: int = 8
    dies_per_channel: int = 8
    planes_per_die: int = 2
    blocks_per_plane: int = 2048
    pages_per_block: int = 196
    page_size: int = 4096
    channel_bandwidth: int = 1_200_000_000

    def validate(self) -> None:
        for name in ("channels", "dies_per_channel", "planes_per_die",
                     "blocks_per_plane", "pages_per_block"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not _is_pow2(self.page_size):
            raise ConfigError("page_size must be power of two")
        if self.channel_bandwidth <= 0:
            raise ConfigError("channel_bandwidth must be positive")

    @property
    def n_dies(self) -> int:
        return self.channels * self.dies_per_channel

    @property
    def n_planes(self) -> int:
        return self.n_dies * self.planes_per_die

    @property
    def pages_per_plane(self) -> int:
        return self.blocks_per_plane * self.pages_per_block

    @property
    def total_pages(self) -> int:
        return self.n_planes * self.pages_per_plane

    @property
    def capacity(self) -> int:
        return self.total_pages * self.page_size


@dataclass(frozen=True)
class FlashTiming:
    t_read_slc: int = 22_500
    t_prog_slc: int = 400_000
    t_bers: int = 3_500_000
    t_and_or: int = 20
    t_xor: int = 30
    t_latch_transfer: int = 20
    t_dma: int = 3_300

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.t_prog_slc <= self.t_read_slc:
            raise ConfigError("t_prog_slc must exceed t_read_slc")


@dataclass(frozen=True)
class DramConfig:
    capacity: int = 2 * 1024**3
    banks: int = 8
    row_size: int = 8192
    t_bbop: int = 49
    # LPDDR4-1866 on a 16-bit interface: 1866e6 transfers/s * 2 bytes.
    bus_bandwidth: int = 3_732_000_000

    def validate(self) -> None:
        if self.banks < 1:
            raise ConfigError("banks must be >= 1")
        if self.row_size <= 0 or self.capacity % self.row_size:
            raise ConfigError("row_size must divide capacity")
        if self.t_bbop <= 0:
            raise ConfigError("t_bbop must be positive")
        if self.bus_bandwidth <= 0:
            raise ConfigError("bus_bandwidth must be positive")


@dataclass(frozen=True)
class CoreConfig:
    n_cores: int = 5
    clock: int = 1_500_000_000
    simd_width: int = 128
    compute_cores: int = 1
    power_mw: int = 500

    def validate(self) -> None:
        if not 1 <= self.compute_cores < self.n_cores:
            raise ConfigError("compute_cores must satisfy 1 <= compute_cores < n_cores")
        if self.clock <= 0:
            raise ConfigError("clock must be positive")
        if self.simd_width < 8 or self.simd_width % 8:
            raise ConfigError("simd_width must be a positive multiple of 8")
        if self.power_mw < 0:
            raise ConfigError("power_mw must be non-negative")


@dataclass(frozen=True)
class EnergyTable:
    e_read_per_channel: int = 20_500_000
    e_and_or_per_kb: int = 10_000
    e_xor_per_kb: int = 20_000
    e_latch_per_kb: int = 10_000
    e_dma_per_channel: int = 7_656_000
    e_bbop: int = 864
    # 500 mW for one 1.5 GHz cycle, rounded to whole picojoules.
    e_isp_per_op: int = 333
    e_prog_per_page: int = 20_500_000
    e_bus_per_kb: int = 32_768

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be non-negative")


def _default_pud_k() -> dict[str, int]:
    return {"bitwise": 1, "ADD": 64, "SUB": 64, "MUL": 1536, "CMP": 66,
            "SELECT": 3, "COPY": 1, "SHUFFLE": 1, "REDUCE_ADD": 704}


def _default_isp_cycles() -> dict[str, int]:
    return {"default": 1, "MUL": 3}


@dataclass(frozen=True)
class ResourceParams:
    """Per-op cost multipliers and optional capability overrides."""

    pud_k: dict[str, int] = field(default_factory=_default_pud_k)
    isp_cycles: dict[str, int] = field(default_factory=_default_isp_cycles)
    # Empty means "use the built-in table" (see resources.CAPABILITIES).
    capabilities: dict[str, list[str]] = field(default_factory=dict)

    def validate(self) -> None:
        for table in (self.pud_k, self.isp_cycles):
            for k, v in table.items():
                if not isinstance(v, int) or v < 0:
                    raise ConfigError(f"multiplier {k} must be a non-negative integer")
        if "default" not in self.isp_cycles:
            raise ConfigError("isp_cycles needs a 'default' entry")

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.pud_k.items())),
                     tuple(sorted(self.isp_cycles.items()))))


@dataclass(frozen=True)
class OffloaderParams:
    bw_window: int = 100_000
    tie_break: tuple[str, ...] = ("PUD", "IFP", "ISP")
    # Percentage of L2P mapping entries cached in SSD DRAM.
    l2p_dram_pct: int = 100
    # Ablation switch: zero data-movement, dependence and queueing features.
    zero_dynamic_features: bool = False

    def validate(self) -> None:
        if self.bw_window <= 0:
            raise ConfigError("bw_window must be positive")
        if sorted(self.tie_break) != ["IFP", "ISP", "PUD"]:
            raise ConfigError("tie_break must order exactly ISP, PUD, IFP")
        if not 0 <= self.l2p_dram_pct <= 100:
            raise ConfigError("l2p_dram_pct must be within [0, 100]")


@dataclass(frozen=True)
class OverheadParams:
    l2p_dram: int = 100
    l2p_flash: int = 30_000
    dependence_tracking: int = 1_000
    queue_tracking: int = 1_000
    dm_lookup: int = 100
    comp_lookup: int = 150
    translation: int = 300

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    topology: SsdTopology = field(default_factory=SsdTopology)
    flash_timing: FlashTiming = field(default_factory=FlashTiming)
    dram: DramConfig = field(default_factory=DramConfig)
    cores: CoreConfig = field(default_factory=CoreConfig)
    energy: EnergyTable = field(default_factory=EnergyTable)
    resources: ResourceParams = field(default_factory=ResourceParams)
    offloader: OffloaderParams = field(default_factory=OffloaderParams)
    overheads: OverheadParams = field(default_factory=OverheadParams)

    def validate(self) -> "SimConfig":
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        return self

    def replace(self, **sections: Any) -> "SimConfig":
        """Return a copy with whole sections or ``section__field`` keys replaced."""
        out = self
        for key, value in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                out = dataclasses.replace(
                    out, **{sec: dataclasses.replace(getattr(out, sec), **{name: value})})
            else:
                out = dataclasses.replace(out, **{key: value})
        return out.validate()


_SECTION_TYPES = {
    "topology": SsdTopology, "flash_timing": FlashTiming, "dram": DramConfig,
    "cores": CoreConfig, "energy": EnergyTable, "resources": ResourceParams,
    "offloader": OffloaderParams, "overheads": OverheadParams,
}


def default_config() -> SimConfig:
    return SimConfig().validate()


def desk_scale(cfg: SimConfig | None = None, factor: int = 4) -> SimConfig:
    """Shrink channels, dies per channel and blocks per plane by ``factor``.

    Timings, energies and page geometry are left untouched.
    """
    if factor < 1:
        raise ConfigError("desk-scale factor must be >= 1")
    cfg = cfg or default_config()
    t = cfg.topology
    topo = dataclasses.replace(
        t,
        channels=max(1, t.channels // factor),
        dies_per_channel=max(1, t.dies_per_channel // factor),
        blocks_per_plane=max(1, t.blocks_per_plane // factor),
    )
    return dataclasses.replace(cfg, topology=topo).validate()


def config_to_dict(cfg: SimConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name in _SECTION_TYPES:
        sec = dataclasses.asdict(getattr(cfg, name))
        if name == "offloader":
            sec["tie_break"] = list(sec["tie_break"])
        out[name] = sec
    return out


def serialize_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def _build_section(name: str, raw: Any) -> Any:
    cls = _SECTION_TYPES[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown field {name}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name}.{key} must be an integer")
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{name}.{key} must be a mapping")
            merged = dict(default) if key != "capabilities" else {}
            merged.update(value)
            value = merged
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict[str, Any] | None) -> SimConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTION_TYPES) - {"profiles"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    sections = {name: _build_section(name, raw.get(name)) for name in _SECTION_TYPES}
    try:
        return SimConfig(**sections).validate()
    except TypeError as exc:  # pragma: no cover - defensive
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimConfig:
    """Read a YAML (or JSON) config; missing sections and fields take defaults."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


@dataclass(frozen=True, order=True)
class FlashAddress:
    channel: int
    die: int
    plane: int
    block: int
    page: int


def _check_bounds(addr: FlashAddress, topo: SsdTopology) -> None:
    bounds = (("channel", topo.channels), ("die", topo.dies_per_channel),
              ("plane", topo.planes_per_die), ("block", topo.blocks_per_plane),
              ("page", topo.pages_per_block))
    for name, bound in bounds:
        v = getattr(addr, name)
        if not 0 <= v < bound:
            raise IndexError(f"{name} index {v} out of range [0, {bound})")


def linear_page_index(addr: FlashAddress, topo: SsdTopology) -> int:
    """Channel-major mixed-radix encoding of a physical page address."""
    _check_bounds(addr, topo)
    idx = addr.channel
    idx = idx * topo.dies_per_channel + addr.die
    idx = idx * topo.planes_per_die + addr.plane
    idx = idx * topo.blocks_per_plane + addr.block
    return idx * topo.pages_per_block + addr.page


def address_from_index(index: int, topo: SsdTopology) -> FlashAddress:
    if not 0 <= index < topo.total_pages:
        raise IndexError(f"page index {index} out of range [0, {topo.total_pages})")
    index, page = divmod(index, topo.pages_per_block)
    index, block = divmod(index, topo.blocks_per_plane)
    index, plane = divmod(index, topo.planes_per_die)
    channel, die = divmod(index, topo.dies_per_channel)
    return FlashAddress(channel, die, plane, block, page)


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def transfer_ns(size: int, bandwidth: int) -> int:
    """Time to move ``size`` bytes at ``bandwidth`` B/s, rounded up to a ns."""
    return ceil_div(size * 1_000_000_000, bandwidth)
