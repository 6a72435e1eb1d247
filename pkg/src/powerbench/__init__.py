"""Server power simulation and container power-attribution validation."""
from .attribution import KeplerRatioEstimator, ResourceCentricEstimator
from .simnode import NodeState, SocketSpec, oracle_container_power, socket_power

__version__ = "0.1.0"

__all__ = [
    "KeplerRatioEstimator",
    "NodeState",
    "ResourceCentricEstimator",
    "SocketSpec",
    "oracle_container_power",
    "socket_power",
]
