"""Throughput models, a round-based simulator and provisioning tools for TCP and TCP/NC."""

from .model_tcp import DomainError, FlowParams, ThroughputEstimate, tcp_throughput
from .model_nc import MarkovChainSpec, nc_average_throughput, recommend_redundancy
from .sim import FlowSpec, FlowTrace, PathConfig, SimConfig, run_nc_flow, run_shared_link, run_tcp_flow

__all__ = [
    "DomainError", "FlowParams", "ThroughputEstimate", "tcp_throughput",
    "MarkovChainSpec", "nc_average_throughput", "recommend_redundancy",
    "FlowSpec", "FlowTrace", "PathConfig", "SimConfig",
    "run_nc_flow", "run_shared_link", "run_tcp_flow",
]
