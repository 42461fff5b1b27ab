"""Social networks derived from the knowledge graph and degree analytics.

Four networks: coauthorship (undirected), citation (directed), and the two
author-paper bipartite graphs (authorship, and authors linked to the papers
their own papers cite). Degree tails are fitted with a discrete power law:
maximum likelihood for the exponent at each candidate cutoff, the cutoff
minimizing the Kolmogorov-Smirnov distance, and a seeded semi-parametric
bootstrap for the plausibility p-value.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

log = logging.getLogger(__name__)

NETWORK_KINDS = ("coauthor", "citation", "author_writes_paper", "paper_inspires_author")

_ALPHA_LO = 1.0001
_ALPHA_HI = 12.0
_GOLDEN_TOL = 1e-6
_MAX_XMIN_CANDIDATES = 75
_SAMPLER_GRID_LIMIT = 200_000


@dataclass
class NetworkGraph:
    kind: str
    directed: bool
    # one partition for homogeneous graphs, two for bipartite ones
    partitions: dict[str, set[str]]
    edges: set[tuple[str, str]]

    @property
    def bipartite(self) -> bool:
        return len(self.partitions) == 2


def build_network(kg, kind: str) -> NetworkGraph:
    """Derive one of the four degree-analytics networks from the KG."""
    if kind not in NETWORK_KINDS:
        raise ValueError(f"unknown network kind {kind!r}; expected one of {NETWORK_KINDS}")

    writes: dict[str, list[str]] = {}  # paper -> authors
    cited_by: list[tuple[str, str]] = []  # (cited paper, citing paper)
    for (source, rel, target) in kg.edges:
        if rel == "is_written_by":
            writes.setdefault(source, []).append(target)
        elif rel == "is_cited_by":
            cited_by.append((source, target))

    if kind == "coauthor":
        authors: set[str] = set()
        edges: set[tuple[str, str]] = set()
        for paper_authors in writes.values():
            authors.update(paper_authors)
            uniq = sorted(set(paper_authors))
            for i in range(len(uniq)):
                for j in range(i + 1, len(uniq)):
                    edges.add((uniq[i], uniq[j]))
        return NetworkGraph(kind, directed=False, partitions={"author": authors}, edges=edges)

    if kind == "citation":
        papers = {p for pair in cited_by for p in pair}
        edges = set(cited_by)
        if _has_cycle(papers, edges):
            log.warning("citation network contains cycles; kept as-is")
        return NetworkGraph(kind, directed=True, partitions={"paper": papers}, edges=edges)

    if kind == "author_writes_paper":
        authors = set()
        papers = set()
        edges = set()
        for paper, paper_authors in writes.items():
            papers.add(paper)
            for a in paper_authors:
                authors.add(a)
                edges.add((a, paper))
        return NetworkGraph(kind, directed=False, partitions={"author": authors, "paper": papers}, edges=edges)

    # paper_inspires_author: an author touches every paper cited by papers they wrote
    authors = set()
    papers = set()
    edges = set()
    for cited, citing in cited_by:
        for author in writes.get(citing, ()):
            authors.add(author)
            papers.add(cited)
            edges.add((author, cited))
    return NetworkGraph(kind, directed=False, partitions={"author": authors, "paper": papers}, edges=edges)


def _has_cycle(nodes: set[str], edges: set[tuple[str, str]]) -> bool:
    indeg = {n: 0 for n in nodes}
    out: dict[str, list[str]] = {}
    for s, t in edges:
        indeg[t] += 1
        out.setdefault(s, []).append(t)
    queue = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for t in out.get(n, ()):
            indeg[t] -= 1
            if indeg[t] == 0:
                queue.append(t)
    return seen < len(nodes)


@dataclass
class PartitionStats:
    name: str
    size: int
    max_degree: int
    avg_degree: float
    histogram: dict[int, int]


@dataclass
class NetworkStats:
    kind: str
    volume: int
    partitions: list[PartitionStats]


def degree_stats(g: NetworkGraph) -> NetworkStats:
    """Size/volume/degree summary per partition.

    Average degree: 2V/N for undirected homogeneous graphs, V/N for directed
    ones (per-endpoint incidence), V/side for each bipartite partition.
    """
    degrees: dict[str, dict[str, int]] = {name: {n: 0 for n in nodes} for name, nodes in g.partitions.items()}

    def bump(node):
        for name in degrees:
            if node in degrees[name]:
                degrees[name][node] += 1
                return

    for s, t in g.edges:
        bump(s)
        bump(t)

    volume = len(g.edges)
    parts = []
    for name, nodes in g.partitions.items():
        degs = degrees[name]
        size = len(nodes)
        if size == 0:
            parts.append(PartitionStats(name, 0, 0, 0.0, {}))
            continue
        if g.bipartite:
            avg = volume / size
        elif g.directed:
            avg = volume / size
        else:
            avg = 2 * volume / size
        hist = Counter(degs.values())
        parts.append(
            PartitionStats(
                name=name,
                size=size,
                max_degree=max(degs.values()),
                avg_degree=avg,
                histogram=dict(sorted(hist.items())),
            )
        )
    return NetworkStats(kind=g.kind, volume=volume, partitions=parts)


def degree_sequence(g: NetworkGraph, partition: str) -> list[int]:
    stats = degree_stats(g)
    for part in stats.partitions:
        if part.name == partition:
            return sorted(d for d, c in part.histogram.items() for _ in range(c))
    raise ValueError(f"no partition {partition!r} in network {g.kind!r}")


# -- discrete power-law fitting ---------------------------------------------------


@dataclass
class PowerLawFit:
    alpha: float
    x_min: int
    ks: float
    n_tail: int
    p_value: float | None = None
    n_bootstrap: int = 0
    seed: int | None = None


def _alpha_mle_golden(x_mins: np.ndarray, ln_sums: np.ndarray, n_tails: np.ndarray) -> np.ndarray:
    """Vectorized golden-section minimization of the zeta-normalized NLL.

    NLL(alpha; c) = n_c * ln zeta(alpha, xmin_c) + alpha * S_c, minimized
    independently for every candidate cutoff c.
    """

    def nll(alpha: np.ndarray) -> np.ndarray:
        return n_tails * np.log(zeta(alpha, x_mins)) + alpha * ln_sums

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo = np.full_like(ln_sums, _ALPHA_LO, dtype=float)
    hi = np.full_like(ln_sums, _ALPHA_HI, dtype=float)
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = nll(x1), nll(x2)
    iters = int(math.ceil(math.log(_GOLDEN_TOL / (_ALPHA_HI - _ALPHA_LO)) / math.log(invphi)))
    for _ in range(iters):
        go_left = f1 < f2
        hi = np.where(go_left, x2, hi)
        lo = np.where(go_left, lo, x1)
        x1_new = np.where(go_left, hi - invphi * (hi - lo), x2)
        x2_new = np.where(go_left, x1, lo + invphi * (hi - lo))
        probe = np.where(go_left, x1_new, x2_new)
        f_probe = nll(probe)
        f1_old = f1
        f1 = np.where(go_left, f_probe, f2)
        f2 = np.where(go_left, f1_old, f_probe)
        x1, x2 = x1_new, x2_new
    return (lo + hi) / 2.0


def _ks_distance(tail: np.ndarray, alpha: float, x_min: int) -> float:
    """Sup distance between the empirical tail CDF and the fitted one."""
    values, counts = np.unique(tail, return_counts=True)
    ecdf = np.cumsum(counts) / tail.size
    z0 = zeta(alpha, x_min)
    cdf = 1.0 - zeta(alpha, values + 1.0) / z0
    return float(np.abs(ecdf - cdf).max())


def _fit_once(data: np.ndarray, min_tail_fraction: float) -> tuple[float, int, float, int]:
    """(alpha, x_min, ks, n_tail) for one sample; candidates are unique values.

    Cutoffs keeping less than min_tail_fraction of the sample in the tail are
    not considered: a shrinking tail always looks locally power-law, which
    would defeat the goodness-of-fit test. The fraction is compared as a pure
    ratio, so duplicating every observation changes nothing.
    """
    x = np.sort(data)
    uniq = np.unique(x)
    candidates = uniq[:-1] if uniq.size > 1 else uniq  # keep >= 2 distinct tail values
    ln_x = np.log(x)
    suffix_ln = np.concatenate((np.cumsum(ln_x[::-1])[::-1], [0.0]))
    first_idx = np.searchsorted(x, candidates, side="left")
    keep = (x.size - first_idx) >= min_tail_fraction * x.size
    if keep.any():
        candidates = candidates[keep]
        first_idx = first_idx[keep]
    else:  # degenerate spacing; fall back to the smallest cutoff
        candidates = candidates[:1]
        first_idx = first_idx[:1]
    if candidates.size > _MAX_XMIN_CANDIDATES:
        idx = np.unique(np.linspace(0, candidates.size - 1, _MAX_XMIN_CANDIDATES).round().astype(int))
        candidates = candidates[idx]
        first_idx = first_idx[idx]
    ln_sums = suffix_ln[first_idx]
    n_tails = x.size - first_idx

    alphas = _alpha_mle_golden(candidates.astype(float), ln_sums, n_tails.astype(float))
    best = None
    for c, alpha, n_tail in zip(candidates, alphas, n_tails):
        ks = _ks_distance(x[x >= c], float(alpha), int(c))
        key = (ks, int(c))
        if best is None or key < best[:2]:
            best = (ks, int(c), float(alpha), int(n_tail))
    ks, x_min, alpha, n_tail = best
    return alpha, x_min, ks, n_tail


def sample_power_law(alpha: float, x_min: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact inverse-CDF draws from the zeta-normalized discrete power law."""
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    u = rng.random(size)
    z0 = zeta(alpha, x_min)
    u_min = u.min() if size else 1.0

    # survival grid: S(x) = zeta(alpha, x) / z0, exact for x in [x_min, hi)
    hi = x_min + 1024
    while zeta(alpha, hi) / z0 > u_min and hi - x_min < _SAMPLER_GRID_LIMIT:
        hi = x_min + (hi - x_min) * 4
    hi = min(hi, x_min + _SAMPLER_GRID_LIMIT)
    grid = np.arange(x_min, hi + 1)
    survival = zeta(alpha, grid) / z0  # P(X >= grid)
    # P(X <= v) = 1 - S(v + 1): find the smallest v with CDF >= u
    cdf = 1.0 - survival[1:]  # CDF at grid[:-1]
    idx = np.searchsorted(cdf, u, side="left")
    out = grid[np.minimum(idx, grid.size - 2)]

    overflow = idx >= cdf.size  # u beyond the grid: finish by doubling + bisection
    for i in np.nonzero(overflow)[0]:
        target = (1.0 - u[i]) * z0  # find smallest v with zeta(alpha, v + 1) <= target
        lo_v, hi_v = int(grid[-1]), int(grid[-1]) * 2
        while zeta(alpha, hi_v + 1) > target:
            lo_v, hi_v = hi_v, hi_v * 2
        while lo_v < hi_v:
            mid = (lo_v + hi_v) // 2
            if zeta(alpha, mid + 1) <= target:
                hi_v = mid
            else:
                lo_v = mid + 1
        out[i] = lo_v
    return out


def fit_power_law(
    degrees,
    n_bootstrap: int = 1000,
    seed: int = 0,
    min_tail_fraction: float = 0.05,
) -> PowerLawFit:
    """Discrete power-law tail fit with a seeded bootstrap plausibility test.

    degrees: positive integers, >= 50 of them, not all equal. The p-value is
    the bootstrap fraction of synthetic samples (power-law tail + resampled
    body) whose refit KS distance reaches the observed one; n_bootstrap=0
    skips it.
    """
    x = np.asarray(list(degrees), dtype=np.int64)
    if x.size < 50:
        raise ValueError("need at least 50 observations")
    if (x < 1).any():
        raise ValueError("degrees must be positive integers")
    if np.unique(x).size == 1:
        raise ValueError("degenerate sample: all observations equal")

    alpha, x_min, ks, n_tail = _fit_once(x, min_tail_fraction)
    fit = PowerLawFit(alpha=alpha, x_min=x_min, ks=ks, n_tail=n_tail, n_bootstrap=n_bootstrap, seed=seed)
    if n_bootstrap <= 0:
        return fit

    body = x[x < x_min]
    p_tail = n_tail / x.size
    children = np.random.SeedSequence(seed).spawn(n_bootstrap)
    exceed = 0
    for child in children:
        rng = np.random.default_rng(child)
        from_tail = rng.random(x.size) < p_tail
        n_from_tail = int(from_tail.sum())
        parts = []
        if n_from_tail:
            parts.append(sample_power_law(alpha, x_min, n_from_tail, rng))
        if x.size - n_from_tail:
            if body.size == 0:
                parts.append(sample_power_law(alpha, x_min, x.size - n_from_tail, rng))
            else:
                parts.append(rng.choice(body, size=x.size - n_from_tail, replace=True))
        sample = np.concatenate(parts)
        if np.unique(sample).size == 1:
            exceed += 1  # degenerate replicate cannot beat the observed fit
            continue
        _, _, ks_rep, _ = _fit_once(sample, min_tail_fraction)
        if ks_rep >= ks:
            exceed += 1
    fit.p_value = exceed / n_bootstrap
    return fit


# -- exports ----------------------------------------------------------------------


def export_edges(g: NetworkGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, t in sorted(g.edges):
            fh.write(f"{s}\t{t}\n")


def log_bins(histogram: dict[int, int]) -> list[tuple[int, int]]:
    """Power-of-two degree bins [lo, 2*lo); degree zero gets its own bin."""
    if not histogram:
        return []
    out: dict[int, int] = {}
    for degree, count in histogram.items():
        lo = 0 if degree == 0 else 1 << (degree.bit_length() - 1)
        out[lo] = out.get(lo, 0) + count
    return sorted(out.items())


def export_distribution(g: NetworkGraph, path) -> None:
    """Log-binned degree distribution per partition: partition, bin lower edge, count."""
    stats = degree_stats(g)
    with open(path, "w", encoding="utf-8") as fh:
        for part in stats.partitions:
            for lo, count in log_bins(part.histogram):
                fh.write(f"{part.name}\t{lo}\t{count}\n")
