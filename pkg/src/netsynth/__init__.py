"""netsynth: constructive synthesis of network approximators as explicit
weighted DAGs, plus a sup-norm/parameter-count measurement harness."""

from .network import (
    Network,
    NetBuilder,
    SigmaSpec,
    compose_parallel,
    compose_serial,
    count_params,
    eval_batch,
    eval_network,
    eval_outputs,
    network_from_json,
    network_to_json,
)
from .scalars import RATIONAL, FLOAT64, BigFloat, rat

__all__ = [
    "Network",
    "NetBuilder",
    "SigmaSpec",
    "compose_parallel",
    "compose_serial",
    "count_params",
    "eval_batch",
    "eval_network",
    "eval_outputs",
    "network_from_json",
    "network_to_json",
    "RATIONAL",
    "FLOAT64",
    "BigFloat",
    "rat",
]

__version__ = "0.1.0"
