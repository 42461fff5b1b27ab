"""Geohash encoding, the paper-location POI index, and bounding-box search.

Geohashes follow the public base32 scheme: 5 bits per character, longitude and
latitude bisected alternately starting with longitude. The index keeps every
(paper, location) pair at full 12-character precision; box queries prune by
geohash prefix ranges and then filter exactly, so results match a linear scan.
"""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_VALUE = {c: i for i, c in enumerate(BASE32)}

MAX_PRECISION = 12
INDEX_PRECISION = 12  # stored entry resolution (~4 cm; exact enough for filtering)

_MAX_COVER_CELLS = 512


def _split_bits(precision: int) -> tuple[int, int]:
    bits = 5 * precision
    return bits // 2, (bits + 1) // 2  # (lat_bits, lon_bits)


def _cell_of(value: float, low: float, high: float, nbits: int) -> int:
    # Interval bisection, not integer scaling: midpoints are exact in binary
    # floating point, so cell assignment matches the canonical algorithm even
    # for values within one ulp of a cell edge.
    cell = 0
    for _ in range(nbits):
        mid = (low + high) / 2
        cell <<= 1
        if value >= mid:
            cell |= 1
            low = mid
        else:
            high = mid
    return cell


def _encode_cells(ilat: int, ilon: int, precision: int) -> str:
    lat_bits, lon_bits = _split_bits(precision)
    # Longitude owns the leading bit; from the LSB side that flips with parity.
    lon_off, lat_off = (1, 0) if lat_bits == lon_bits else (0, 1)
    combined = 0
    for i in range(lon_bits):
        combined |= ((ilon >> i) & 1) << (2 * i + lon_off)
    for i in range(lat_bits):
        combined |= ((ilat >> i) & 1) << (2 * i + lat_off)
    chars = []
    for i in range(precision):
        shift = 5 * (precision - 1 - i)
        chars.append(BASE32[(combined >> shift) & 0x1F])
    return "".join(chars)


def encode(lat: float, lon: float, precision: int) -> str:
    """Geohash of a point; the decoded box of the result contains the point."""
    if not (1 <= precision <= MAX_PRECISION):
        raise ValueError(f"precision must be in [1, {MAX_PRECISION}]")
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")
    lat_bits, lon_bits = _split_bits(precision)
    ilat = _cell_of(lat, -90.0, 90.0, lat_bits)
    ilon = _cell_of(lon, -180.0, 180.0, lon_bits)
    return _encode_cells(ilat, ilon, precision)


def decode(geohash: str) -> tuple[float, float, float, float]:
    """Bounding box (lat_min, lat_max, lon_min, lon_max) of a geohash cell."""
    if not geohash or len(geohash) > MAX_PRECISION:
        raise ValueError("geohash length must be in [1, 12]")
    combined = 0
    for ch in geohash:
        if ch not in _CHAR_VALUE:
            raise ValueError(f"invalid geohash character {ch!r}")
        combined = (combined << 5) | _CHAR_VALUE[ch]
    lat_bits, lon_bits = _split_bits(len(geohash))
    ilat = ilon = 0
    # Bit order mirrors _encode_cells: longitude first.
    total = lat_bits + lon_bits
    for pos in range(total):
        bit = (combined >> (total - 1 - pos)) & 1
        if pos % 2 == 0:
            ilon = (ilon << 1) | bit
        else:
            ilat = (ilat << 1) | bit
    lat_span = 180.0 / (1 << lat_bits)
    lon_span = 360.0 / (1 << lon_bits)
    return (
        -90.0 + ilat * lat_span,
        -90.0 + (ilat + 1) * lat_span,
        -180.0 + ilon * lon_span,
        -180.0 + (ilon + 1) * lon_span,
    )


@dataclass
class GeoEntry:
    geohash: str
    paper_id: str
    location_name: str
    lat: float
    lon: float


@dataclass
class GeoIndex:
    """Prefix-sorted POI entries plus the searchable text of each indexed paper."""

    entries: list[GeoEntry] = field(default_factory=list)
    papers_text: dict[str, str] = field(default_factory=dict)
    _hashes: list[str] = field(default_factory=list)

    def finalize(self) -> None:
        self.entries.sort(key=lambda e: (e.geohash, e.paper_id, e.location_name))
        self._hashes = [e.geohash for e in self.entries]

    def prefix_range(self, prefix: str) -> list[GeoEntry]:
        lo = bisect.bisect_left(self._hashes, prefix)
        hi = bisect.bisect_left(self._hashes, prefix + "{")  # '{' sorts after 'z'
        return self.entries[lo:hi]


def build_geo_index(mentions, papers_text: dict[str, str]) -> GeoIndex:
    """mentions: iterable with paper_id, canonical_name, lat, lon attributes."""
    index = GeoIndex(papers_text=dict(papers_text))
    for m in mentions:
        index.entries.append(
            GeoEntry(encode(m.lat, m.lon, INDEX_PRECISION), m.paper_id, m.canonical_name, m.lat, m.lon)
        )
    index.finalize()
    return index


def _validate_box(box) -> list[tuple[float, float, float, float]]:
    lat_min, lat_max, lon_min, lon_max = box
    if not (-90.0 <= lat_min <= lat_max <= 90.0):
        raise ValueError("invalid latitude range")
    if not (-180.0 <= lon_min <= 180.0 and -180.0 <= lon_max <= 180.0):
        raise ValueError("longitude out of range")
    if lon_min <= lon_max:
        return [(lat_min, lat_max, lon_min, lon_max)]
    # Antimeridian-crossing boxes split into two ordinary ones.
    return [(lat_min, lat_max, lon_min, 180.0), (lat_min, lat_max, -180.0, lon_max)]


def _cover_prefixes(lat_min, lat_max, lon_min, lon_max) -> list[str]:
    """Geohash cells covering the box at the finest precision within budget."""
    for precision in range(6, 0, -1):
        lat_bits, lon_bits = _split_bits(precision)
        la0 = _cell_of(lat_min, -90.0, 90.0, lat_bits)
        la1 = _cell_of(lat_max, -90.0, 90.0, lat_bits)
        lo0 = _cell_of(lon_min, -180.0, 180.0, lon_bits)
        lo1 = _cell_of(lon_max, -180.0, 180.0, lon_bits)
        if (la1 - la0 + 1) * (lo1 - lo0 + 1) <= _MAX_COVER_CELLS:
            return [
                _encode_cells(ilat, ilon, precision)
                for ilat in range(la0, la1 + 1)
                for ilon in range(lo0, lo1 + 1)
            ]
    return [c for c in BASE32]  # whole earth at precision 1


def bbox_search(index: GeoIndex, box, keyword: str | None = None) -> list[str]:
    """Paper ids with >= 1 location inside the closed box, optionally keyword-filtered.

    box: (lat_min, lat_max, lon_min, lon_max); lon_min > lon_max wraps the
    antimeridian. Keyword matching is a case-insensitive substring test against
    the paper's indexed text.
    """
    needle = keyword.casefold() if keyword else None
    hits: set[str] = set()
    for lat_min, lat_max, lon_min, lon_max in _validate_box(box):
        for prefix in _cover_prefixes(lat_min, lat_max, lon_min, lon_max):
            for entry in index.prefix_range(prefix):
                if entry.paper_id in hits:
                    continue
                if not (lat_min <= entry.lat <= lat_max and lon_min <= entry.lon <= lon_max):
                    continue
                if needle is not None and needle not in index.papers_text.get(entry.paper_id, "").casefold():
                    continue
                hits.add(entry.paper_id)
    return sorted(hits)


def density_grid(index: GeoIndex, precision: int) -> dict[str, int]:
    """(paper, location) pair counts per geohash cell; counts sum to the pair total."""
    if not (1 <= precision <= 6):
        raise ValueError("density precision must be in [1, 6]")
    counts: Counter[str] = Counter()
    for entry in index.entries:
        counts[entry.geohash[:precision]] += 1
    return dict(sorted(counts.items()))


def write_density(grid: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cell in sorted(grid):
            fh.write(f"{cell}\t{grid[cell]}\n")
