"""Streaming data pipeline: weighted source mixing, a shuffle buffer and shard replication.

Examples are opaque ``bytes``. Shards are read lazily through a reader callable
so the same code runs on newline-delimited files and on synthetic data.
"""
from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Protocol, Sequence

import numpy as np

DEFAULT_BUFFER = 10_000


class SourceExhausted(Exception):
    pass


class ShardUnavailable(Exception):
    def __init__(self, shards: Sequence[str]):
        super().__init__(f"no remaining replicas of {', '.join(shards)}")
        self.shards = tuple(shards)


@dataclass(frozen=True)
class Shard:
    id: str
    n_examples: int
    uri: str | None = None


@dataclass(frozen=True)
class Source:
    id: str
    weight: float
    shards: tuple[Shard, ...]


Reader = Callable[[Shard], Iterator[bytes]]


def synthetic_reader(shard: Shard) -> Iterator[bytes]:
    for k in range(shard.n_examples):
        yield f"{shard.id}:{k}".encode()


def file_reader(root: str | Path | None = None) -> Reader:
    """Reader over newline-delimited shard files; relative uris resolve against ``root``."""
    base = Path(root) if root is not None else None

    def read(shard: Shard) -> Iterator[bytes]:
        if shard.uri is None:
            raise ValueError(f"shard {shard.id} has no uri")
        path = Path(shard.uri)
        if base is not None and not path.is_absolute():
            path = base / path
        with open(path, "rb") as f:
            for line in f:
                yield line.rstrip(b"\n")

    return read


class ShardCatalog:
    def __init__(self, sources: Sequence[Source]):
        seen: set[str] = set()
        for src in sources:
            if not src.weight > 0:
                raise ValueError(f"source {src.id} needs a positive weight")
            for sh in src.shards:
                if sh.id in seen:
                    raise ValueError(f"duplicate shard id {sh.id}")
                seen.add(sh.id)
        self.sources = tuple(sources)

    @property
    def shard_ids(self) -> list[str]:
        return [sh.id for src in self.sources for sh in src.shards]

    def shard(self, shard_id: str) -> Shard:
        for src in self.sources:
            for sh in src.shards:
                if sh.id == shard_id:
                    return sh
        raise KeyError(shard_id)

    def mixing_probabilities(self) -> dict[str, float]:
        total = sum(s.weight for s in self.sources)
        return {s.id: s.weight / total for s in self.sources}

    @classmethod
    def from_manifest(cls, doc: Mapping) -> "ShardCatalog":
        sources = []
        for raw in doc["sources"]:
            shards = tuple(Shard(str(s["id"]), int(s["n_examples"]), s.get("uri")) for s in raw["shards"])
            sources.append(Source(str(raw["id"]), float(raw["weight"]), shards))
        return cls(sources)

    @classmethod
    def load(cls, path: str | Path) -> "ShardCatalog":
        with open(path) as f:
            return cls.from_manifest(json.load(f))

    def to_manifest(self) -> dict:
        return {
            "sources": [
                {
                    "id": s.id,
                    "weight": s.weight,
                    "shards": [{"id": sh.id, "n_examples": sh.n_examples, "uri": sh.uri} for sh in s.shards],
                }
                for s in self.sources
            ]
        }


# -- mixing and shuffling ---------------------------------------------------------

class MixedStream:
    """Per draw, pick a source with probability proportional to its weight.

    Within a source, shards are visited in a seed-dependent order. Exhausted
    sources drop out and the remaining weights are renormalized.
    """

    def __init__(self, catalog: ShardCatalog, seed: int = 0, reader: Reader = synthetic_reader,
                 shuffle_shards: bool = True):
        self.rng = np.random.default_rng(seed)
        self.reader = reader
        self._ids = [s.id for s in catalog.sources]
        self._weights = np.array([s.weight for s in catalog.sources], dtype=float)
        self._iters = []
        for src in catalog.sources:
            order = list(src.shards)
            if shuffle_shards:
                order = [order[k] for k in self.rng.permutation(len(order))]
            self._iters.append(self._chain(order))
        self._alive = np.ones(len(self._ids), dtype=bool)
        self.last_source: str | None = None

    def _chain(self, shards: Sequence[Shard]) -> Iterator[bytes]:
        for sh in shards:
            yield from self.reader(sh)

    def __iter__(self):
        return self

    def __next__(self) -> bytes:
        while self._alive.any():
            cum = np.cumsum(np.where(self._alive, self._weights, 0.0))
            k = int(np.searchsorted(cum, self.rng.random() * cum[-1], side="right"))
            k = min(k, len(cum) - 1)
            try:
                item = next(self._iters[k])
            except StopIteration:
                self._alive[k] = False
                continue
            self.last_source = self._ids[k]
            return item
        raise StopIteration

    def draw_sources(self, count: int) -> list[str]:
        """Source ids of the next ``count`` examples."""
        out = []
        for _ in range(count):
            next(self)
            out.append(self.last_source)
        return out


class ShuffleBuffer:
    """Fill-then-sample shuffle buffer over an example iterator."""

    def __init__(self, stream: Iterator[bytes], capacity: int = DEFAULT_BUFFER, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.stream = iter(stream)
        self.rng = np.random.default_rng(seed)
        self.contents: list[bytes] = []
        self.exhausted = False

    def _pull(self) -> bytes | None:
        if self.exhausted:
            return None
        try:
            return next(self.stream)
        except StopIteration:
            self.exhausted = True
            return None

    def _fill(self) -> None:
        while len(self.contents) < self.capacity:
            item = self._pull()
            if item is None:
                break
            self.contents.append(item)

    def next_batch(self, size: int) -> list[bytes]:
        if size < 1:
            raise ValueError("batch size must be positive")
        self._fill()
        if not self.contents:
            raise SourceExhausted("all shards consumed and the buffer is empty")
        batch: list[bytes] = []
        while len(batch) < size and self.contents:
            take = min(size - len(batch), len(self.contents))
            picks = self.rng.choice(len(self.contents), size=take, replace=False)
            batch.extend(self.contents[k] for k in picks)
            holes = []
            for k in picks:
                item = self._pull()
                if item is None:
                    holes.append(int(k))
                else:
                    self.contents[k] = item
            for k in sorted(holes, reverse=True):
                del self.contents[k]
        return batch

    def __iter__(self) -> Iterator[bytes]:
        while True:
            try:
                yield from self.next_batch(1)
            except SourceExhausted:
                return


def next_batch(buffer: ShuffleBuffer, size: int) -> list[bytes]:
    return buffer.next_batch(size)


# -- replication policy ------------------------------------------------------------

class MetadataStore(Protocol):
    def get(self, shard_id: str) -> int: ...
    def increment(self, shard_id: str) -> int: ...
    def decrement(self, shard_id: str) -> int: ...
    def snapshot(self) -> dict[str, int]: ...


class InMemoryMetadataStore:
    """Replica counters guarded by a lock so updates are atomic."""

    def __init__(self, shard_ids: Sequence[str] = ()):
        self._lock = threading.Lock()
        self._counts = {sid: 0 for sid in shard_ids}

    def get(self, shard_id: str) -> int:
        with self._lock:
            return self._counts.get(shard_id, 0)

    def increment(self, shard_id: str) -> int:
        with self._lock:
            self._counts[shard_id] = self._counts.get(shard_id, 0) + 1
            return self._counts[shard_id]

    def decrement(self, shard_id: str) -> int:
        with self._lock:
            cur = self._counts.get(shard_id, 0)
            if cur <= 0:
                raise ValueError(f"replica count of {shard_id} would go negative")
            self._counts[shard_id] = cur - 1
            return cur - 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)


def choose_next_shard(
    candidates: Sequence[str], replicas: Mapping[str, int] | MetadataStore, rng: np.random.Generator
) -> str:
    """Uniform pick among the candidates with the fewest replicas (single linear scan)."""
    if not candidates:
        raise ValueError("no unconsumed shards")
    counts = replicas.snapshot() if hasattr(replicas, "snapshot") else replicas
    best: list[str] = []
    low = None
    for sid in candidates:
        c = counts.get(sid, 0)
        if low is None or c < low:
            low, best = c, [sid]
        elif c == low:
            best.append(sid)
    return best[int(rng.integers(len(best)))]


class LocalShardBuffer:
    """Shards held by one peer, remembered in arrival order."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.held: OrderedDict[str, None] = OrderedDict()

    def __contains__(self, shard_id: str) -> bool:
        return shard_id in self.held

    def __len__(self) -> int:
        return len(self.held)

    @property
    def full(self) -> bool:
        return len(self.held) >= self.capacity


def evict_if_full(buffer: LocalShardBuffer, replicas: Mapping[str, int] | MetadataStore) -> str | None:
    """Drop the most replicated held shard when the buffer is full; ties go to the oldest."""
    if not buffer.full:
        return None
    counts = replicas.snapshot() if hasattr(replicas, "snapshot") else replicas
    victim, top = None, None
    for sid in buffer.held:  # oldest first, strict > keeps the oldest on ties
        c = counts.get(sid, 0)
        if top is None or c > top:
            victim, top = sid, c
    del buffer.held[victim]
    return victim


class ReplicationSwarm:
    """Peers fetching and evicting shards against one shared metadata store."""

    def __init__(self, catalog: ShardCatalog, store: MetadataStore | None = None, seed: int = 0):
        self.catalog = catalog
        self.store = store or InMemoryMetadataStore(catalog.shard_ids)
        self.rng = np.random.default_rng(seed)
        self.peers: dict[str, LocalShardBuffer] = {}
        self._lock = threading.Lock()

    def join(self, peer: str, capacity: int) -> None:
        with self._lock:
            if peer in self.peers:
                raise ValueError(f"{peer} already joined")
            self.peers[peer] = LocalShardBuffer(capacity)

    def fetch(self, peer: str) -> tuple[str, str | None]:
        """Download the least replicated shard the peer lacks; returns (fetched, evicted)."""
        buf = self.peers[peer]
        candidates = [sid for sid in self.catalog.shard_ids if sid not in buf]
        shard = choose_next_shard(candidates, self.store, self.rng)
        evicted = evict_if_full(buf, self.store)
        if evicted is not None:
            self.store.decrement(evicted)
        buf.held[shard] = None
        self.store.increment(shard)
        return shard, evicted

    def leave(self, peer: str, strict: bool = False) -> list[str]:
        """Remove a peer; returns shards that no longer have any replica.

        With ``strict`` the loss is raised as ShardUnavailable instead, after
        the peer has been removed.
        """
        buf = self.peers.pop(peer)
        lost = []
        for sid in buf.held:
            if self.store.decrement(sid) == 0:
                lost.append(sid)
        if strict and lost:
            raise ShardUnavailable(lost)
        return lost

    def holdings(self) -> dict[str, int]:
        out = {sid: 0 for sid in self.catalog.shard_ids}
        for buf in self.peers.values():
            for sid in buf.held:
                out[sid] += 1
        return out
