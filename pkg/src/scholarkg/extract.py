"""Knowledge-entity tagging for abstracts.

Glossary entries carry a textual description; descriptions form a tf-idf
corpus and an abstract is matched against it as a query, yielding scored
candidate entities. Each candidate gets a 4-feature vector (tf-idf score,
name length, mean-idf complexity, letter count) scored by a two-layer
rectifier network. The network trains on expert binary relevance with a
pairwise logistic loss weighted by the NDCG swap delta of each pair, and
tagging emits candidates whose score clears a threshold picked to favor
precision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .text import tokenize

log = logging.getLogger(__name__)

ENTRY_SOURCES = ("glossary", "discipline_kg", "wiki")

DEFAULT_TOP_N = 50
DEFAULT_NDCG_K = 10
RECALL_FLOOR = 0.2


@dataclass
class GlossaryEntry:
    entity_id: str
    name: str
    description: str
    discipline: str
    source: str = "glossary"


@dataclass
class Candidate:
    entity_id: str
    esa_score: float
    matched_span: tuple[int, int] | None = None


@dataclass
class RankFeatures:
    tfidf_score: float
    length: int
    complexity: float
    letter_count: int

    def as_array(self) -> np.ndarray:
        return np.array([self.tfidf_score, self.length, self.complexity, self.letter_count], dtype=float)


@dataclass
class RankAnnotation:
    paper_id: str
    entity_id: str
    label: int


class TfidfIndex:
    """Inverted tf-idf index over glossary descriptions supporting cosine retrieval."""

    def __init__(self, glossary: list[GlossaryEntry]):
        if not glossary:
            raise ValueError("glossary is empty")
        ids = [e.entity_id for e in glossary]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate entity_id in glossary")
        for e in glossary:
            if not e.name or not e.description:
                raise ValueError(f"entry {e.entity_id!r} needs a name and a description")
        self.entries = list(glossary)
        self.by_id = {e.entity_id: i for i, e in enumerate(self.entries)}

        docs = [tokenize(e.description) for e in self.entries]
        df: dict[str, int] = {}
        for toks in docs:
            for t in set(toks):
                df[t] = df.get(t, 0) + 1
        self.vocab = {t: i for i, t in enumerate(sorted(df))}
        n = len(docs)
        self.idf = np.array([math.log(n / df[t]) for t in sorted(df)])

        self.doc_vectors: list[dict[int, float]] = []
        self.postings: dict[int, list[tuple[int, float]]] = {}
        for doc_idx, toks in enumerate(docs):
            counts: dict[int, int] = {}
            for t in toks:
                counts[self.vocab[t]] = counts.get(self.vocab[t], 0) + 1
            vec = {i: c * self.idf[i] for i, c in counts.items()}
            norm = math.sqrt(sum(w * w for w in vec.values()))
            vec = {i: w / norm for i, w in vec.items() if w != 0.0} if norm > 0 else {}
            self.doc_vectors.append(vec)
            for i, w in vec.items():
                self.postings.setdefault(i, []).append((doc_idx, w))

    def token_idf(self, token: str) -> float:
        i = self.vocab.get(token)
        return float(self.idf[i]) if i is not None else 0.0

    def query_vector(self, text: str) -> dict[int, float]:
        counts: dict[int, int] = {}
        for t in tokenize(text):
            i = self.vocab.get(t)
            if i is not None:
                counts[i] = counts.get(i, 0) + 1
        vec = {i: c * self.idf[i] for i, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        return {i: w / norm for i, w in vec.items() if w != 0.0} if norm > 0 else {}

    def cosine(self, a_idx: int, b_idx: int) -> float:
        a, b = self.doc_vectors[a_idx], self.doc_vectors[b_idx]
        if len(b) < len(a):
            a, b = b, a
        return sum(w * b.get(i, 0.0) for i, w in a.items())


def build_index(glossary: list[GlossaryEntry]) -> TfidfIndex:
    return TfidfIndex(glossary)


def candidates(q: str, index: TfidfIndex, top_n: int = DEFAULT_TOP_N) -> list[Candidate]:
    """Entities whose descriptions are cosine-similar to the query text.

    Sorted by score descending with entity_id breaking ties; only strictly
    positive scores are emitted. matched_span records the first verbatim
    (case-insensitive) occurrence of the entity name in the query.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    qvec = index.query_vector(q)
    if not qvec:
        return []
    scores: dict[int, float] = {}
    for i, qw in qvec.items():
        for doc_idx, dw in index.postings.get(i, ()):
            scores[doc_idx] = scores.get(doc_idx, 0.0) + qw * dw
    ranked = sorted(
        ((idx, s) for idx, s in scores.items() if s > 0.0),
        key=lambda t: (-t[1], index.entries[t[0]].entity_id),
    )[:top_n]
    lowered = q.lower()
    out = []
    for idx, s in ranked:
        entry = index.entries[idx]
        pos = lowered.find(entry.name.lower())
        span = (pos, pos + len(entry.name)) if pos >= 0 else None
        out.append(Candidate(entity_id=entry.entity_id, esa_score=s, matched_span=span))
    return out


def features(candidate: Candidate, entry: GlossaryEntry, index: TfidfIndex) -> RankFeatures:
    """4-feature vector: retrieval score, name length, mean-idf rarity, letter count."""
    name_tokens = tokenize(entry.name)
    complexity = (
        sum(index.token_idf(t) for t in name_tokens) / len(name_tokens) if name_tokens else 0.0
    )
    return RankFeatures(
        tfidf_score=candidate.esa_score,
        length=len(entry.name.split()),
        complexity=complexity,
        letter_count=sum(ch.isalpha() for ch in entry.name),
    )


@dataclass
class RankerModel:
    w1: np.ndarray  # (4, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float
    sigma: float = 1.0

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


def init_ranker(hidden: int = 16, sigma: float = 1.0, seed: int = 0) -> RankerModel:
    rng = np.random.default_rng(seed)
    return RankerModel(
        w1=rng.normal(0.0, 0.1, (4, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, 0.1, hidden),
        b2=0.0,
        sigma=sigma,
    )


def score_batch(F: np.ndarray, model: RankerModel) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    hidden = np.maximum(F @ model.w1 + model.b1, 0.0)
    return hidden @ model.w2 + model.b2


def score(f: RankFeatures, model: RankerModel) -> float:
    return float(score_batch(f.as_array(), model)[0])


def ndcg(ranked_labels: list[int], k: int) -> float:
    """Normalized discounted cumulative gain at k; 1.0 when no gain is achievable."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gains = list(ranked_labels)
    dcg = sum(g / math.log2(r + 2) for r, g in enumerate(gains[:k]))
    ideal = sorted(gains, reverse=True)
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal[:k]))
    if idcg == 0:
        return 1.0
    return dcg / idcg


def _positions(scores: np.ndarray) -> np.ndarray:
    """1-based rank of every item under score-descending, index-ascending order."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    pos = np.empty(len(scores), dtype=int)
    pos[order] = np.arange(1, len(scores) + 1)
    return pos


def lambdarank_loss(
    scores: np.ndarray,
    labels: np.ndarray,
    k: int = DEFAULT_NDCG_K,
    sigma: float = 1.0,
    pairs: list[tuple[int, int]] | None = None,
) -> tuple[float, np.ndarray]:
    """Pairwise logistic loss weighted by each pair's NDCG@k swap delta.

    pairs lists (positive, negative) index pairs; by default every such pair.
    Returns the summed loss and its gradient with respect to the scores: the
    positive side's gradient is negative (raising its score lowers the loss).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and aligned")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    if not (1 <= k <= len(s)):
        raise ValueError(f"k must be in [1, {len(s)}]")
    if pairs is None:
        pos_idx = np.nonzero(y == 1)[0]
        neg_idx = np.nonzero(y == 0)[0]
        pairs = [(int(i), int(j)) for i in pos_idx for j in neg_idx]
    for i, j in pairs:
        if not (y[i] == 1 and y[j] == 0):
            raise ValueError(f"pair ({i}, {j}) must order a positive before a negative")

    pos = _positions(s)
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(sorted(y, reverse=True)[:k]))
    disc = np.where(pos <= k, 1.0 / np.log2(pos + 1.0), 0.0)

    loss = 0.0
    grad = np.zeros_like(s)
    for i, j in pairs:
        delta = abs(disc[i] - disc[j]) / idcg if idcg > 0 else 0.0
        diff = s[i] - s[j]
        loss += float(np.logaddexp(0.0, -sigma * diff)) * delta
        slope = -sigma * delta / (1.0 + math.exp(sigma * diff))
        grad[i] += slope
        grad[j] -= slope
    return loss, grad


@dataclass
class RankerConfig:
    epochs: int = 200
    lr: float = 0.02
    hidden: int = 16
    sigma: float = 1.0
    k: int = DEFAULT_NDCG_K
    seed: int = 0


def train_ranker(groups: list[tuple[np.ndarray, np.ndarray]], config: RankerConfig) -> RankerModel:
    """Gradient descent on the pairwise loss over per-paper candidate groups.

    groups: (feature matrix, binary labels) per paper. Groups with a single
    label class carry no ranking signal and are skipped with a warning.
    """
    usable = []
    for gi, (F, y) in enumerate(groups):
        y = np.asarray(y)
        if y.sum() == 0 or y.sum() == len(y):
            log.warning("group %d has one label class only; skipped", gi)
            continue
        usable.append((np.atleast_2d(np.asarray(F, dtype=float)), y.astype(int)))
    if not usable:
        raise ValueError("no trainable group has both a positive and a negative")

    model = init_ranker(config.hidden, config.sigma, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    for _ in range(config.epochs):
        for gi in rng.permutation(len(usable)):
            F, y = usable[gi]
            k = min(config.k, len(y))
            pre = F @ model.w1 + model.b1
            hidden = np.maximum(pre, 0.0)
            s = hidden @ model.w2 + model.b2
            _, ds = lambdarank_loss(s, y, k=k, sigma=model.sigma)
            dw2 = hidden.T @ ds
            db2 = ds.sum()
            dh = np.outer(ds, model.w2) * (pre > 0)
            dw1 = F.T @ dh
            db1 = dh.sum(axis=0)
            model.w2 -= config.lr * dw2
            model.b2 -= config.lr * db2
            model.w1 -= config.lr * dw1
            model.b1 -= config.lr * db1
    return model


def rank_candidates(q: str, index: TfidfIndex, model: RankerModel, top_n: int = DEFAULT_TOP_N):
    """Candidates with ranker scores, ordered score-descending (id tie-break)."""
    cands = candidates(q, index, top_n)
    if not cands:
        return []
    F = np.stack([features(c, index.entries[index.by_id[c.entity_id]], index).as_array() for c in cands])
    scores = score_batch(F, model)
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], cands[i].entity_id))
    return [(cands[i], float(scores[i])) for i in order]


def tag(paper, index: TfidfIndex, model: RankerModel, threshold: float, top_n: int = DEFAULT_TOP_N):
    """(paper_id, "mention_knowledge", entity_id) for candidates scoring >= threshold."""
    out = []
    for cand, s in rank_candidates(paper.abstract, index, model, top_n):
        if s >= threshold:
            out.append((paper.paper_id, "mention_knowledge", cand.entity_id))
    return out


def sweep_threshold(
    scored: list[tuple[str, list[tuple[str, float]]]],
    gold: set[tuple[str, str]],
    recall_floor: float = RECALL_FLOOR,
) -> float:
    """Pick the tag threshold on a validation split: max precision s.t. recall >= floor.

    scored: per paper, (entity_id, ranker score) lists. Falls back to the
    max-recall threshold when no candidate threshold reaches the floor.
    """
    if not gold:
        raise ValueError("empty validation gold set")
    all_scores = sorted({s for _, items in scored for _, s in items}, reverse=True)
    if not all_scores:
        raise ValueError("no scored candidates to sweep")
    best = None  # (precision, recall, threshold)
    fallback = None
    for t in all_scores:
        tags = {(pid, eid) for pid, items in scored for eid, s in items if s >= t}
        tp = len(tags & gold)
        precision = tp / len(tags) if tags else 1.0
        recall = tp / len(gold)
        key = (precision, recall, t)
        if recall >= recall_floor and (best is None or key > best):
            best = key
        fb_key = (recall, precision, t)
        if fallback is None or fb_key > fallback:
            fallback = fb_key
    if best is not None:
        return best[2]
    log.warning("no threshold reaches recall >= %.2f; falling back to max recall", recall_floor)
    return fallback[2]


def evaluate_tagging(tags, gold: set[tuple[str, str]]) -> tuple[float, float]:
    """Set precision and recall of emitted tags against gold (paper, entity) pairs."""
    if not gold:
        raise ValueError("empty gold set")
    tag_set = {(t[0], t[-1]) for t in tags}
    tp = len(tag_set & gold)
    precision = tp / len(tag_set) if tag_set else 1.0
    recall = tp / len(gold)
    return precision, recall


def load_glossary(path) -> list[GlossaryEntry]:
    """Tab-separated glossary: entity_id, name, discipline, source, description."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"glossary line {lineno}: expected 5 tab-separated fields")
            entity_id, name, discipline, source, description = parts
            if source not in ENTRY_SOURCES:
                raise ValueError(f"glossary line {lineno}: unknown source {source!r}")
            entries.append(GlossaryEntry(entity_id, name, description, discipline, source))
    return entries


def load_annotations(path) -> list[RankAnnotation]:
    """Tab-separated annotations: paper_id, entity_id, binary label."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ValueError(f"annotation line {lineno}: expected paper_id, entity_id, 0/1")
            out.append(RankAnnotation(parts[0], parts[1], int(parts[2])))
    return out
