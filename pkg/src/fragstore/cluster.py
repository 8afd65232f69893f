"""A simulated deployment: replicas, the network and client fragment managers."""

from __future__ import annotations

from typing import Any, Optional

from .chunking import ChunkParams
from .core import ClientId
from .fm import FragmentManager
from .history import History
from .register import CORRECT, ClientContext, Replica, Variant
from .transport import FaultPlan, Network, OpGen, Task


def server_ids(n: int) -> list[str]:
    return [f"s{i}" for i in range(n)]


class Cluster:
    def __init__(
        self,
        n_servers: int = 3,
        seed: int = 0,
        faults: Optional[FaultPlan] = None,
        manual: bool = False,
        variant: Variant = CORRECT,
        params: ChunkParams = ChunkParams(),
        max_block: Optional[int] = None,
        transport: str = "sim",
    ) -> None:
        self.history = History()
        self.variant = variant
        self.params = params
        self.max_block = max_block
        self.replicas = {s: Replica(variant) for s in server_ids(n_servers)}
        if transport == "sim":
            self.net = Network(self.replicas, seed=seed, faults=faults, manual=manual)
        elif transport == "socket":
            from .netsock import SocketNetwork

            self.net = SocketNetwork(self.replicas, faults=faults)
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self.clients: dict[ClientId, FragmentManager] = {}

    def context(self, cid: ClientId) -> ClientContext:
        return ClientContext(cid, self.history, clock=self.net.clock, variant=self.variant)

    def client(self, cid: ClientId) -> FragmentManager:
        if cid not in self.clients:
            self.clients[cid] = FragmentManager(self.context(cid), self.params, self.max_block)
        return self.clients[cid]

    def run(self, fm: FragmentManager, gen: OpGen) -> Any:
        """Drive one client operation to completion and return its result."""
        return self.net.call(fm.ctx.pid, gen)

    def close(self) -> None:
        self.net.close()

    def spawn(self, fm: FragmentManager, gen: OpGen, delay: float = 0.0) -> Task:
        return self.net.spawn(fm.ctx.pid, gen, delay=delay)
