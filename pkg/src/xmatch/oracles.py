"""Slow reference implementations used to cross-check the fast paths.

Nothing here is used by the pipeline itself; ``verify`` and the tests call
these on small inputs.
"""

from __future__ import annotations

from collections import defaultdict, deque
from typing import Hashable, Iterable

import numpy as np

from .catalog import Catalog, parse_distance
from .geometry import separation_arcsec


def haversine_arcsec(ra1, dec1, ra2, dec2) -> np.ndarray:
    """Haversine great-circle distance between (ra, dec) pairs in degrees."""
    ra1, dec1, ra2, dec2 = (np.radians(np.asarray(v, dtype=np.float64))
                            for v in (ra1, dec1, ra2, dec2))
    h = (np.sin((dec2 - dec1) / 2) ** 2
         + np.cos(dec1) * np.cos(dec2) * np.sin((ra2 - ra1) / 2) ** 2)
    return np.degrees(2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))) * 3600.0


def brute_force_pairs(xyz: np.ndarray, radius: float, block: int = 2048) -> set[tuple[int, int]]:
    """Every ordered pair (i, j), i != j, with separation <= radius arcsec."""
    xyz = np.asarray(xyz, dtype=np.float64)
    out: set[tuple[int, int]] = set()
    for start in range(0, len(xyz), block):
        a = xyz[start:start + block]
        sep = separation_arcsec(a[:, None, :], xyz[None, :, :])
        ii, jj = np.nonzero(sep <= radius)
        ii = ii + start
        keep = ii != jj
        out.update(zip(ii[keep].tolist(), jj[keep].tolist()))
    return out


def brute_force_hits(catalog: Catalog, fn) -> set[tuple[str, int, str, int]]:
    """Hit keys by comparing every object against every other object."""
    fn = parse_distance(fn)
    runs = catalog.run_ids
    ids = catalog.object_ids
    err = catalog.pos_err
    xyz = catalog.xyz
    out = set()
    for i in range(len(catalog)):
        sep = separation_arcsec(xyz[i], xyz)
        limit = np.asarray(fn(err[i], err), dtype=np.float64)
        for j in np.flatnonzero((sep < limit) & (runs != runs[i])):
            out.add((runs[i], int(ids[i]), runs[j], int(ids[j])))
    return out


def bfs_components(nodes: Iterable[Hashable],
                   edges: Iterable[tuple[Hashable, Hashable]]) -> set[frozenset]:
    """Connected components by breadth-first search."""
    adj = defaultdict(set)
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen = set()
    comps = set()
    for start in list(nodes) + list(adj):
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    comp.add(nxt)
                    queue.append(nxt)
        comps.add(frozenset(comp))
    return comps


def friend_fixed_point(edges: Iterable[tuple[Hashable, Hashable]]) -> set[tuple[Hashable, Hashable]]:
    """Friend pairs produced by repeated self-join insertion until nothing new appears.

    Each round joins every stored pair (a, b) with every stored pair (b, c)
    and inserts (a, c) unless a == c or (a, c) is already stored.
    """
    table = set(edges)
    friends = set()
    while True:
        by_source = defaultdict(set)
        for a, b in table:
            by_source[a].add(b)
        new = set()
        for a, b in table:
            for c in by_source.get(b, ()):
                if a != c and (a, c) not in table:
                    new.add((a, c))
        if not new:
            return friends
        table |= new
        friends |= new


def partition_of(keys: Iterable[Hashable], labels: Iterable[int]) -> set[frozenset]:
    groups = defaultdict(set)
    for k, lab in zip(keys, labels):
        groups[lab].add(k)
    return {frozenset(g) for g in groups.values()}


__all__ = ["bfs_components", "brute_force_hits", "brute_force_pairs", "friend_fixed_point",
           "haversine_arcsec", "partition_of"]
