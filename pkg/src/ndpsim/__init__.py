"""Discrete-event simulator for instruction-level offloading inside an SSD."""
from .engine import StatsReport, functional_verify, percentile, run
from .isa import Trace, TraceHeader, VecInstr, VecOpType, decode_trace, encode_trace, trace_stats
from .kernel import KernelIR, vectorize_kernel
from .offloader import ALL_POLICIES, Policy, PolicyKind, choose, parse_policy
from .resources import ResourceKind, compute_energy, compute_latency, transform
from .topology import SimConfig, default_config, desk_scale, load_config
from .workloads import WorkloadProfile, builtin_profiles, generate

__all__ = [
    "ALL_POLICIES", "KernelIR", "Policy", "PolicyKind", "ResourceKind", "SimConfig",
    "StatsReport", "Trace", "TraceHeader", "VecInstr", "VecOpType", "WorkloadProfile",
    "builtin_profiles", "choose", "compute_energy", "compute_latency", "decode_trace",
    "default_config", "desk_scale", "encode_trace", "functional_verify", "generate",
    "load_config", "parse_policy", "percentile", "run", "trace_stats", "transform",
    "vectorize_kernel",
]
