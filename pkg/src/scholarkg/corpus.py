"""Ingestion, normalization and fusion of paper metadata from multiple source feeds.

Sources ship one JSON object per line (fields: source, id, doi, title, abstract,
year, authors[], orgs[], venue, type). Records are validated on ingest, fused by
DOI (or by normalized title + year when no DOI is present), and author /
organization / venue strings are collapsed onto canonical entities keyed by a
folded normalization of the raw string.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

SOURCE_IDS = ("acemap", "cord19", "digsci", "preprint")
PAPER_TYPES = ("article", "proceeding", "preprint")

# Venue kind implied by the type of papers published there.
_TYPE_TO_VENUE_KIND = {"article": "journal", "proceeding": "conference", "preprint": "preprint"}
_VENUE_KIND_PRIORITY = ("journal", "conference", "preprint")

_APOSTROPHES = "'’‘ʼ`´"


@dataclass
class SourceRecord:
    source_id: str
    external_id: str
    doi: str | None
    title: str
    abstract: str
    year: int
    authors: list[str]
    org_strings: list[str]
    venue_string: str
    type: str


@dataclass
class PaperRecord:
    paper_id: str
    doi: str | None
    title: str
    abstract: str
    year: int
    type: str
    author_ids: list[str]
    org_ids: list[str]
    venue_id: str | None
    provenance: set[tuple[str, str]]


@dataclass
class CanonicalEntity:
    """Canonical author / organization / venue."""

    id: str
    display_name: str
    normalized_key: str
    aliases: set[str] = field(default_factory=set)
    kind: str | None = None  # venues only: journal | conference | preprint


@dataclass
class LocationMention:
    paper_id: str
    surface: str
    canonical_name: str
    lat: float
    lon: float


@dataclass
class FusedCorpus:
    papers: dict[str, PaperRecord]
    authors: dict[str, CanonicalEntity]
    orgs: dict[str, CanonicalEntity]
    venues: dict[str, CanonicalEntity]
    conflicts: list[str] = field(default_factory=list)


def normalize_name(raw: str) -> str:
    """Fold a raw name to its canonical key.

    Case-, diacritic- and whitespace-insensitive; apostrophes are deleted
    (O'Brien -> obrien) while all other punctuation separates tokens.
    Idempotent: normalize_name(normalize_name(x)) == normalize_name(x).
    """
    if not raw:
        raise ValueError("cannot normalize an empty string")
    text = raw
    # NFKD + casefold can each re-introduce foldable characters; iterate to a fixpoint.
    for _ in range(4):
        folded = unicodedata.normalize("NFKD", text)
        folded = "".join(ch for ch in folded if not unicodedata.combining(ch))
        folded = folded.casefold()
        if folded == text:
            break
        text = folded
    text = "".join(ch for ch in text if ch not in _APOSTROPHES)
    text = "".join(ch if (ch.isalnum() or ch.isspace()) else " " for ch in text)
    return " ".join(text.split())


def _hash_id(kind: str, key: str) -> str:
    return hashlib.blake2b(f"{kind}|{key}".encode("utf-8"), digest_size=16).hexdigest()


def paper_id_for(doi: str | None, title: str, year: int) -> str:
    """Stable 128-bit id from the dedup key (DOI first, else normalized title + year)."""
    if doi:
        return _hash_id("paper", f"doi:{doi.strip().lower()}")
    return _hash_id("paper", f"title:{normalize_name(title)}|year:{year}")


def _dedup_key(rec: SourceRecord):
    if rec.doi:
        return ("doi", rec.doi.strip().lower())
    return ("ty", normalize_name(rec.title), rec.year)


def validate_record(obj: dict, source_id: str) -> SourceRecord:
    """Check one parsed ingestion object against the record schema.

    Raises ValueError with a human-readable reason on any violation.
    """
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    src = obj.get("source", source_id)
    if src != source_id:
        raise ValueError(f"source field {src!r} does not match feed {source_id!r}")
    if source_id not in SOURCE_IDS:
        raise ValueError(f"unknown source tag {source_id!r}")
    ext = obj.get("id")
    if not isinstance(ext, str) or not ext:
        raise ValueError("missing or empty id")
    title = obj.get("title")
    if not isinstance(title, str) or not title.strip():
        raise ValueError("missing or empty title")
    abstract = obj.get("abstract", "")
    if not isinstance(abstract, str):
        raise ValueError("abstract must be a string")
    year = obj.get("year")
    if not isinstance(year, int) or isinstance(year, bool) or not (1900 <= year <= 2100):
        raise ValueError(f"year {year!r} outside [1900, 2100]")
    doi = obj.get("doi")
    if doi is not None and (not isinstance(doi, str) or not doi.strip()):
        raise ValueError("doi must be null or a non-empty string")
    authors = obj.get("authors", [])
    if not isinstance(authors, list) or any(not isinstance(a, str) or not a.strip() for a in authors):
        raise ValueError("authors must be a list of non-empty strings")
    orgs = obj.get("orgs", [])
    if not isinstance(orgs, list) or any(not isinstance(o, str) for o in orgs):
        raise ValueError("orgs must be a list of strings")
    venue = obj.get("venue", "")
    if not isinstance(venue, str):
        raise ValueError("venue must be a string")
    ptype = obj.get("type")
    if ptype not in PAPER_TYPES:
        raise ValueError(f"type {ptype!r} not one of {PAPER_TYPES}")
    return SourceRecord(
        source_id=source_id,
        external_id=ext,
        doi=doi.strip() if doi else None,
        title=title.strip(),
        abstract=abstract,
        year=year,
        authors=[a.strip() for a in authors],
        org_strings=[o.strip() for o in orgs if o.strip()],
        venue_string=venue.strip(),
        type=ptype,
    )


def ingest_source(path, source_id: str) -> tuple[list[SourceRecord], list[tuple[int, str]]]:
    """Read one source feed; returns (records, errors) with 1-based line numbers.

    Malformed lines are reported, never silently dropped. An unreadable file
    raises (fatal); a per-line schema violation only records a warning.
    """
    records: list[SourceRecord] = []
    errors: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append((lineno, f"invalid JSON: {exc.msg}"))
                continue
            try:
                records.append(validate_record(obj, source_id))
            except ValueError as exc:
                errors.append((lineno, str(exc)))
    return records, errors


def write_error_report(errors: list[tuple[int, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lineno, msg in errors:
            fh.write(f"line {lineno}: {msg}\n")


def _register(registry: dict[str, CanonicalEntity], kind: str, raw: str) -> str | None:
    key = normalize_name(raw)
    if not key:
        return None
    eid = _hash_id(kind, key)
    ent = registry.get(eid)
    if ent is None:
        ent = CanonicalEntity(id=eid, display_name=raw, normalized_key=key, aliases={raw})
        registry[eid] = ent
    else:
        ent.aliases.add(raw)
        if raw < ent.display_name:
            ent.display_name = raw
    return eid


def fuse(sources: list[list[SourceRecord]]) -> FusedCorpus:
    """Merge validated records from all sources into one deduplicated corpus.

    Records sharing a DOI, or sharing (normalized title, year) when no DOI is
    present, collapse into a single PaperRecord carrying the union of their
    provenance. Author/org/venue strings from every merged record feed the
    canonical entity registries.
    """
    groups: dict[tuple, list[SourceRecord]] = {}
    order: list[tuple] = []
    for recs in sources:
        for rec in recs:
            key = _dedup_key(rec)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(rec)

    corpus = FusedCorpus(papers={}, authors={}, orgs={}, venues={})
    venue_type_votes: dict[str, Counter] = {}

    for key in order:
        group = groups[key]
        # Primary record supplies the display fields; prefer the richest abstract.
        primary = sorted(group, key=lambda r: (-len(r.abstract), r.source_id, r.external_id))[0]
        years = [r.year for r in group]
        year_counts = Counter(years)
        top = max(year_counts.values())
        year = min(y for y, c in year_counts.items() if c == top)
        conflicts: list[str] = []
        if len(year_counts) > 1:
            conflicts.append(f"year conflict for {key}: {sorted(year_counts)} -> {year}")

        doi = key[1] if key[0] == "doi" else None
        pid = _hash_id("paper", f"doi:{doi}") if doi else _hash_id(
            "paper", f"title:{key[1]}|year:{key[2]}"
        )

        # Authors and orgs are the union over the merged records; the venue is
        # the primary record's (a paper carries a single venue_id), so only
        # aliases of that venue are registered.
        author_ids: list[str] = []
        org_ids: list[str] = []
        for rec in group:
            for raw in rec.authors:
                aid = _register(corpus.authors, "author", raw)
                if aid is not None and aid not in author_ids:
                    author_ids.append(aid)
            for raw in rec.org_strings:
                oid = _register(corpus.orgs, "org", raw)
                if oid is not None and oid not in org_ids:
                    org_ids.append(oid)
        venue_id = _register(corpus.venues, "venue", primary.venue_string) if primary.venue_string else None
        for rec in group:
            if venue_id is not None and rec.venue_string:
                vid = _hash_id("venue", normalize_name(rec.venue_string))
                if vid == venue_id:
                    _register(corpus.venues, "venue", rec.venue_string)
                    venue_type_votes.setdefault(vid, Counter())[_TYPE_TO_VENUE_KIND[rec.type]] += 1

        corpus.papers[pid] = PaperRecord(
            paper_id=pid,
            doi=doi,
            title=primary.title,
            abstract=primary.abstract,
            year=year,
            type=primary.type,
            author_ids=author_ids,
            org_ids=org_ids,
            venue_id=venue_id,
            provenance={(r.source_id, r.external_id) for r in group},
        )
        corpus.conflicts.extend(conflicts)

    for vid, votes in venue_type_votes.items():
        if vid in corpus.venues:
            top = max(votes.values())
            winners = {k for k, c in votes.items() if c == top}
            corpus.venues[vid].kind = next(k for k in _VENUE_KIND_PRIORITY if k in winners)
    return corpus


def load_gazetteer(path) -> dict[str, tuple[float, float]]:
    """Tab-separated gazetteer: name, lat, lon."""
    table: dict[str, tuple[float, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"gazetteer line {lineno}: expected 3 tab-separated fields")
            name, lat_s, lon_s = parts
            lat, lon = float(lat_s), float(lon_s)
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"gazetteer line {lineno}: coordinates out of range")
            table[name] = (lat, lon)
    return table


def _match_spans(text: str, names: list[str]) -> list[tuple[int, int, str]]:
    """All non-overlapping gazetteer matches, longest match first."""
    occurrences: list[tuple[int, int, str]] = []
    for name in names:
        pattern = re.compile(r"\b" + re.escape(name) + r"\b", re.IGNORECASE)
        for m in pattern.finditer(text):
            occurrences.append((m.start(), m.end(), name))
    occurrences.sort(key=lambda o: (-(o[1] - o[0]), o[0], o[2]))
    chosen: list[tuple[int, int, str]] = []
    for start, end, name in occurrences:
        if all(end <= s or start >= e for s, e, _ in chosen):
            chosen.append((start, end, name))
    chosen.sort()
    return chosen


def tag_locations(paper: PaperRecord, gazetteer: dict[str, tuple[float, float]]) -> list[LocationMention]:
    """Gazetteer matches in title or abstract; one mention per distinct place name."""
    names = sorted(gazetteer)
    seen: dict[str, str] = {}
    for text in (paper.title, paper.abstract):
        for start, end, name in _match_spans(text, names):
            seen.setdefault(name, text[start:end])
    mentions = []
    for name in sorted(seen):
        lat, lon = gazetteer[name]
        mentions.append(LocationMention(paper.paper_id, seen[name], name, lat, lon))
    return mentions
