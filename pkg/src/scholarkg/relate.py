"""Alignment of open-domain triples to glossary entities and relation typing.

Triples arrive as (head, relation, tail, sentence) surface strings. Heads and
tails that exactly match a glossary name (case-folded, whitespace-normalized)
become entity-aligned edges; everything else goes to an audit stream. Each
aligned sentence is encoded as the mean of token + segment + position
embeddings, where the segment table marks tokens belonging to the triple, and
a linear softmax head types the relation as is_A / impact / related_to /
unknown. Training maximizes the log-probability of the correct label by
gradient ascent with hand-derived gradients.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .text import tokenize

log = logging.getLogger(__name__)

RELATION_LABELS = ("is_A", "impact", "related_to", "unknown")
MAX_SENTENCE_TOKENS = 128
UNK_INDEX = 0


@dataclass
class RawTriple:
    paper_id: str
    head: str
    relation: str
    tail: str
    sentence: str


@dataclass
class AlignedTriple:
    paper_id: str
    head_id: str
    tail_id: str
    relation_surface: str
    sentence: str


@dataclass
class RelationAnnotation:
    sentence: str
    head: str
    relation: str
    tail: str
    label: str


@dataclass
class RelationModel:
    vocab: dict[str, int]  # token -> index >= 1; 0 is the unknown token
    tok_emb: np.ndarray  # (V + 1, d)
    seg_emb: np.ndarray  # (2, d): outside / inside the triple
    pos_emb: np.ndarray  # (max_len, d)
    w: np.ndarray  # (d, 4)

    @property
    def dim(self) -> int:
        return self.tok_emb.shape[1]


def _escape(sentence: str) -> str:
    return sentence.replace("\\", "\\\\").replace("\t", "\\t")


def _unescape(sentence: str) -> str:
    out = []
    i = 0
    while i < len(sentence):
        ch = sentence[i]
        if ch == "\\" and i + 1 < len(sentence):
            nxt = sentence[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def ingest_triples(path) -> tuple[list[RawTriple], list[tuple[int, str]]]:
    """Tab-separated triples: paper_id, head, relation, tail, sentence (tabs escaped).

    Malformed lines are reported with their line number, never dropped silently.
    """
    triples: list[RawTriple] = []
    errors: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                errors.append((lineno, f"expected 5 tab-separated fields, got {len(parts)}"))
                continue
            paper_id, head, relation, tail, sentence = parts
            sentence = _unescape(sentence)
            if not (paper_id and head and relation and tail):
                errors.append((lineno, "empty field"))
                continue
            if head.lower() not in sentence.lower() or tail.lower() not in sentence.lower():
                errors.append((lineno, "sentence does not contain head and tail"))
                continue
            triples.append(RawTriple(paper_id, head, relation, tail, sentence))
    return triples, errors


def write_triples(triples: list[RawTriple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write("\t".join((t.paper_id, t.head, t.relation, t.tail, _escape(t.sentence))) + "\n")


def fold_name(raw: str) -> str:
    return " ".join(raw.casefold().split())


def glossary_name_map(entries) -> dict[str, str]:
    """Case-folded glossary name -> entity_id (first entry wins on collisions)."""
    table: dict[str, str] = {}
    for e in entries:
        table.setdefault(fold_name(e.name), e.entity_id)
    return table


def align(triple: RawTriple, name_map: dict[str, str]) -> AlignedTriple | None:
    """Exact-match alignment; both surfaces must resolve, to distinct entities."""
    head_id = name_map.get(fold_name(triple.head))
    tail_id = name_map.get(fold_name(triple.tail))
    if head_id is None or tail_id is None or head_id == tail_id:
        return None
    return AlignedTriple(
        paper_id=triple.paper_id,
        head_id=head_id,
        tail_id=tail_id,
        relation_surface=triple.relation,
        sentence=triple.sentence,
    )


def find_token_span(tokens: list[str], surface: str) -> tuple[int, int] | None:
    """First occurrence of the surface's token sequence; (start, end) half-open."""
    needle = tokenize(surface)
    if not needle or len(needle) > len(tokens):
        return None
    for start in range(len(tokens) - len(needle) + 1):
        if tokens[start : start + len(needle)] == needle:
            return (start, start + len(needle))
    return None


def segment_mask(n_tokens: int, h_span: tuple[int, int] | None, t_span: tuple[int, int] | None) -> np.ndarray:
    mask = np.zeros(n_tokens, dtype=int)
    for span in (h_span, t_span):
        if span is not None:
            lo = max(span[0], 0)
            hi = min(span[1], n_tokens)
            mask[lo:hi] = 1
    return mask


def encode(sentence: str, h_span, t_span, model: RelationModel) -> np.ndarray:
    """Mean over tokens of token + segment + position embeddings.

    Out-of-vocabulary tokens map to the reserved unknown index; sentences are
    truncated to the position table length.
    """
    tokens = tokenize(sentence)[: model.pos_emb.shape[0]]
    if not tokens:
        raise ValueError("sentence has no tokens")
    ids = np.array([model.vocab.get(t, UNK_INDEX) for t in tokens])
    mask = segment_mask(len(tokens), h_span, t_span)
    vecs = model.tok_emb[ids] + model.seg_emb[mask] + model.pos_emb[: len(tokens)]
    return vecs.mean(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def classify(h: np.ndarray, model: RelationModel) -> np.ndarray:
    """Probability distribution over the four relation labels."""
    return softmax(np.asarray(h, dtype=float) @ model.w)


@dataclass
class RelationTrainConfig:
    epochs: int = 150
    lr: float = 0.5
    batch_size: int = 16
    seed: int = 0
    dim: int = 24
    max_len: int = MAX_SENTENCE_TOKENS


def init_relation_model(vocab: dict[str, int], config: RelationTrainConfig) -> RelationModel:
    rng = np.random.default_rng(config.seed)
    d = config.dim
    return RelationModel(
        vocab=vocab,
        tok_emb=rng.normal(0.0, 0.1, (len(vocab) + 1, d)),
        seg_emb=rng.normal(0.0, 0.1, (2, d)),
        pos_emb=rng.normal(0.0, 0.1, (config.max_len, d)),
        w=rng.normal(0.0, 0.1, (d, len(RELATION_LABELS))),
    )


def _prepare(ann: RelationAnnotation, model: RelationModel):
    tokens = tokenize(ann.sentence)[: model.pos_emb.shape[0]]
    ids = np.array([model.vocab.get(t, UNK_INDEX) for t in tokens])
    mask = segment_mask(len(tokens), find_token_span(tokens, ann.head), find_token_span(tokens, ann.tail))
    return ids, mask


def train_relation(annotations: list[RelationAnnotation], config: RelationTrainConfig) -> RelationModel:
    """Gradient ascent on the label log-probability; seed-deterministic."""
    if not annotations:
        raise ValueError("no annotations")
    labels = {a.label for a in annotations}
    if not labels <= set(RELATION_LABELS):
        raise ValueError(f"unknown labels: {sorted(labels - set(RELATION_LABELS))}")
    if len(labels) < 2:
        raise ValueError("training needs at least two distinct labels")
    for a in annotations:
        if not tokenize(a.sentence):
            raise ValueError("annotation with empty sentence")

    vocab: dict[str, int] = {}
    for a in annotations:
        for t in tokenize(a.sentence):
            if t not in vocab:
                vocab[t] = len(vocab) + 1
    model = init_relation_model(vocab, config)
    rng = np.random.default_rng(config.seed + 1)

    prepared = []
    for a in annotations:
        ids, mask = _prepare(a, model)
        prepared.append((ids, mask, RELATION_LABELS.index(a.label)))

    n = len(prepared)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            g_tok = np.zeros_like(model.tok_emb)
            g_seg = np.zeros_like(model.seg_emb)
            g_pos = np.zeros_like(model.pos_emb)
            g_w = np.zeros_like(model.w)
            for bi in batch:
                ids, mask, label = prepared[bi]
                count = len(ids)
                vecs = model.tok_emb[ids] + model.seg_emb[mask] + model.pos_emb[:count]
                h = vecs.mean(axis=0)
                p = softmax(h @ model.w)
                d_logits = p.copy()
                d_logits[label] -= 1.0
                d_logits /= len(batch)
                g_w += np.outer(h, d_logits)
                dh = model.w @ d_logits
                per_token = dh / count
                np.add.at(g_tok, ids, per_token)
                np.add.at(g_seg, mask, per_token)
                g_pos[:count] += per_token
            model.tok_emb -= config.lr * g_tok
            model.seg_emb -= config.lr * g_seg
            model.pos_emb -= config.lr * g_pos
            model.w -= config.lr * g_w
    return model


def predict_relation(sentence: str, head: str, tail: str, model: RelationModel) -> tuple[str, np.ndarray]:
    tokens = tokenize(sentence)[: model.pos_emb.shape[0]]
    h = encode(sentence, find_token_span(tokens, head), find_token_span(tokens, tail), model)
    probs = classify(h, model)
    return RELATION_LABELS[int(np.argmax(probs))], probs


def evaluate_relations(predictions: list[str], gold: list[str]) -> tuple[float, float]:
    """Macro precision/recall over is_A, impact, related_to (unknown abstains).

    A class with no predictions scores precision 0 unless it also has no gold
    occurrences, in which case it is skipped on both sides.
    """
    if not gold:
        raise ValueError("empty gold set")
    if len(predictions) != len(gold):
        raise ValueError("predictions and gold are misaligned")
    precisions, recalls = [], []
    for label in RELATION_LABELS[:3]:
        tp = sum(1 for p, g in zip(predictions, gold) if p == label and g == label)
        n_pred = sum(1 for p in predictions if p == label)
        n_gold = sum(1 for g in gold if g == label)
        if n_pred == 0 and n_gold == 0:
            continue
        precisions.append(tp / n_pred if n_pred else 0.0)
        recalls.append(tp / n_gold if n_gold else 0.0)
    if not precisions:
        raise ValueError("no relation label occurs in predictions or gold")
    return float(np.mean(precisions)), float(np.mean(recalls))


def load_relation_annotations(path) -> list[RelationAnnotation]:
    """Tab-separated: head, relation, tail, label, sentence (tabs escaped, last)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"annotation line {lineno}: expected 5 tab-separated fields")
            head, relation, tail, label, sentence = parts
            if label not in RELATION_LABELS:
                raise ValueError(f"annotation line {lineno}: unknown label {label!r}")
            out.append(RelationAnnotation(_unescape(sentence), head, relation, tail, label))
    return out


MODEL_FORMAT_VERSION = 1


def save_relation_model(model: RelationModel, path) -> None:
    tokens = [t for t, _ in sorted(model.vocab.items(), key=lambda kv: kv[1])]
    np.savez(
        path,
        version=np.array(MODEL_FORMAT_VERSION),
        tokens=np.array(json.dumps(tokens)),
        tok_emb=model.tok_emb,
        seg_emb=model.seg_emb,
        pos_emb=model.pos_emb,
        w=model.w,
    )


def load_relation_model(path) -> RelationModel:
    data = np.load(path, allow_pickle=False)
    if int(data["version"]) != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {int(data['version'])}")
    tokens = json.loads(str(data["tokens"]))
    return RelationModel(
        vocab={t: i + 1 for i, t in enumerate(tokens)},
        tok_emb=data["tok_emb"],
        seg_emb=data["seg_emb"],
        pos_emb=data["pos_emb"],
        w=data["w"],
    )
