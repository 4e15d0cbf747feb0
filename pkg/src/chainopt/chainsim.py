"""Discrete-event proof-of-work network simulator.

Blocks are discovered by a single global Poisson process whose mean
inter-arrival time is the expected mining interval; the finder is drawn in
proportion to node hash rate and extends the longest chain it has seen so far
(first-seen wins among equal heights). Each block travels directly from its
miner to every other node, taking the region-pair latency plus the transfer
time of the block over the bottleneck bandwidth. A node cannot use a block
before it holds the block's parent, so effective arrival times are propagated
down the tree.

Transactions are not simulated: throughput is the block capacity divided by
the expected interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .params import ConfigError, SimResult

REGIONS = ("NORTH_AMERICA", "EUROPE", "SOUTH_AMERICA", "ASIA_PACIFIC", "JAPAN", "AUSTRALIA")

REGION_DISTRIBUTION = (0.3869, 0.5159, 0.0113, 0.0574, 0.0119, 0.0166)

LATENCY_MS = (
    (32, 124, 184, 198, 151, 189),
    (124, 11, 227, 237, 252, 294),
    (184, 227, 88, 325, 301, 322),
    (198, 237, 325, 85, 58, 198),
    (151, 252, 301, 58, 12, 126),
    (189, 294, 322, 198, 126, 16),
)

# Per-region bandwidth in bit/s; the trailing entry is the inter-regional cap.
UPLOAD_BPS = (19_200_000, 20_700_000, 5_800_000, 15_700_000, 10_200_000, 11_300_000, 600_000)
DOWNLOAD_BPS = (52_000_000, 40_000_000, 18_000_000, 22_800_000, 22_800_000, 29_900_000, 600_000)

DEFAULT_TX_SIZE_BYTES = 500.0


@dataclass(frozen=True)
class NetworkModel:
    regions: tuple[str, ...] = REGIONS
    region_distribution: tuple[float, ...] = REGION_DISTRIBUTION
    latency_ms: tuple[tuple[float, ...], ...] = LATENCY_MS
    upload_bps: tuple[float, ...] = UPLOAD_BPS
    download_bps: tuple[float, ...] = DOWNLOAD_BPS

    def __post_init__(self):
        k = len(self.regions)
        dist = np.asarray(self.region_distribution, dtype=float)
        lat = np.asarray(self.latency_ms, dtype=float)
        if dist.shape != (k,) or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ConfigError("region distribution must be non-negative and sum to 1", "network.region_distribution")
        if lat.shape != (k, k) or not np.all(lat > 0) or not np.all(np.isfinite(lat)):
            raise ConfigError(f"latency must be a positive {k}x{k} matrix", "network.latency_ms")
        for name in ("upload_bps", "download_bps"):
            bw = np.asarray(getattr(self, name), dtype=float)
            if bw.shape != (k + 1,) or not np.all(bw > 0) or not np.all(np.isfinite(bw)):
                raise ConfigError(f"need {k} regional entries plus one inter-regional entry, all positive",
                                  f"network.{name}")

    def delay_matrix(self, block_size_bytes: float) -> np.ndarray:
        """Seconds for a block to go from a node in region i to a node in region j."""
        up = np.asarray(self.upload_bps, dtype=float)
        down = np.asarray(self.download_bps, dtype=float)
        k = len(self.regions)
        bps = np.minimum(up[:k, None], down[None, :k])
        inter = min(up[k], down[k])
        off_diag = ~np.eye(k, dtype=bool)
        bps[off_diag] = np.minimum(bps[off_diag], inter)
        return np.asarray(self.latency_ms, dtype=float) / 1000.0 + block_size_bytes * 8.0 / bps

    @classmethod
    def from_file(cls, path: str | Path) -> NetworkModel:
        text = Path(path).read_text()
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("network file must hold a mapping", str(path))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", str(path))
        kwargs = {}
        for key, value in data.items():
            if key == "latency_ms":
                kwargs[key] = tuple(tuple(float(x) for x in row) for row in value)
            elif key == "regions":
                kwargs[key] = tuple(str(x) for x in value)
            else:
                kwargs[key] = tuple(float(x) for x in value)
        return cls(**kwargs)


@dataclass(frozen=True)
class SimConfig:
    block_height: int = 100
    block_size_bytes: float = 1e6
    expected_mining_interval_s: float = 600.0
    avg_hash_rate: float = 40_000.0
    node_count: int = 6000
    network: NetworkModel = field(default_factory=NetworkModel)
    tx_size_bytes: float = DEFAULT_TX_SIZE_BYTES
    seed: int = 0

    def __post_init__(self):
        for name in ("block_size_bytes", "expected_mining_interval_s", "avg_hash_rate", "tx_size_bytes"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"must be a positive finite number, got {value!r}", name)
        for name in ("block_height", "node_count"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and value > 0):
                raise ConfigError(f"must be a positive integer, got {value!r}", name)
        if self.node_count < 2:
            raise ConfigError("at least 2 nodes are required", "node_count")

    def with_values(self, **values) -> SimConfig:
        return replace(self, **values)


@dataclass
class ChainState:
    """Block tree in mining order; index 0 is genesis."""

    parent: np.ndarray
    height: np.ndarray
    mined_at: np.ndarray
    miner: np.ndarray
    arrival: np.ndarray = None  # (blocks, nodes) effective arrival times; genesis row is -inf

    @property
    def blocks_mined(self) -> int:
        return len(self.height) - 1

    @property
    def main_chain_height(self) -> int:
        return int(self.height.max())

    def main_chain_tip(self) -> int:
        # Equal-height tips resolve to the earliest mined one.
        return int(np.flatnonzero(self.height == self.height.max())[0])

    def main_chain(self) -> list[int]:
        out, b = [], self.main_chain_tip()
        while b > 0:
            out.append(b)
            b = int(self.parent[b])
        return out[::-1]


def fork_rate(chain: ChainState) -> float:
    """Fraction of mined blocks that are not on the main chain."""
    total = chain.blocks_mined
    if total < 1:
        raise ValueError("fork rate is undefined before any block is mined")
    return (total - chain.main_chain_height) / total


def throughput(block_size_bytes: float, interval_s: float, tx_size_bytes: float = DEFAULT_TX_SIZE_BYTES) -> float:
    """Transactions per second implied by block capacity and mining interval."""
    for name, v in (("block_size_bytes", block_size_bytes), ("interval_s", interval_s),
                    ("tx_size_bytes", tx_size_bytes)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return block_size_bytes / tx_size_bytes / interval_s


def simulate_chain(config: SimConfig) -> ChainState:
    rng = np.random.default_rng(config.seed)
    net = config.network
    n, h = config.node_count, config.block_height

    region = rng.choice(len(net.regions), size=n, p=np.asarray(net.region_distribution, dtype=float))
    hash_rate = np.full(n, float(config.avg_hash_rate))
    mined_at = np.concatenate(([0.0], np.cumsum(rng.exponential(config.expected_mining_interval_s, size=h))))
    miner = np.concatenate(([-1], rng.choice(n, size=h, p=hash_rate / hash_rate.sum())))
    delay = net.delay_matrix(config.block_size_bytes)

    parent = np.full(h + 1, -1, dtype=np.int64)
    height = np.zeros(h + 1, dtype=np.int64)
    arrival = np.empty((h + 1, n))
    arrival[0] = -np.inf

    for k in range(1, h + 1):
        m, t = miner[k], mined_at[k]
        seen = arrival[:k, m] <= t
        heights_seen = np.where(seen, height[:k], -1)
        tips = np.flatnonzero(heights_seen == heights_seen.max())
        head = int(tips[np.argmin(arrival[tips, m])])
        parent[k] = head
        height[k] = height[head] + 1
        direct = t + delay[region[m], region]
        direct[m] = t
        arrival[k] = np.maximum(direct, arrival[head])

    return ChainState(parent=parent, height=height, mined_at=mined_at, miner=miner, arrival=arrival)


def run_simulation(config: SimConfig) -> SimResult:
    chain = simulate_chain(config)
    # Time for each block to reach half / 90% of the network, then the median over blocks.
    elapsed = chain.arrival[1:] - chain.mined_at[1:, None]
    per_block = np.quantile(elapsed, [0.5, 0.9], axis=1)
    values = {
        "fork_rate": fork_rate(chain),
        "throughput_tps": throughput(config.block_size_bytes, config.expected_mining_interval_s,
                                     config.tx_size_bytes),
        "propagation_median_s": float(np.median(per_block[0])),
        "propagation_p90_s": float(np.median(per_block[1])),
    }
    diagnostics = {
        "blocks_mined": float(chain.blocks_mined),
        "main_chain_height": float(chain.main_chain_height),
        "orphans": float(chain.blocks_mined - chain.main_chain_height),
    }
    return SimResult(values=values, diagnostics=diagnostics)
