"""The four benchmarked agents and their factory constructors."""

from .base import AgentBase, build_network
from .ppo import Ppo, make_ppo
from .dqn import Dqn, make_dqn
from .td3 import Td3, make_td3
from .sac import Sac, make_sac

__all__ = [
    "AgentBase", "build_network",
    "Ppo", "make_ppo", "Dqn", "make_dqn",
    "Td3", "make_td3", "Sac", "make_sac",
]
