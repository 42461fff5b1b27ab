"""Multi-label discipline classification with a trainable bag-of-words encoder.

Documents are featurized as L2-normalized tf-idf vectors, embedded by one
linear layer, and scored by a linear head over the 22 discipline labels.
Training minimizes per-label binary cross-entropy plus a contrastive term
computed on two token-dropout views of each document: the views' embeddings
are pulled together and pushed apart from the rest of the batch under a
temperature-scaled cosine softmax. All gradients are derived by hand and
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .text import tokenize

log = logging.getLogger(__name__)

DISCIPLINES = (
    "Mathematical Sciences",
    "Physical Sciences",
    "Chemical Sciences",
    "Earth Sciences",
    "Environmental Sciences",
    "Biological Sciences",
    "Agricultural and Veterinary Sciences",
    "Information and Computing Sciences",
    "Engineering",
    "Technology",
    "Medical and Health Sciences",
    "Built Environment and Design",
    "Education",
    "Economics",
    "Commerce, Management, Tourism and Services",
    "Studies in Human Society",
    "Psychology and Cognitive Sciences",
    "Law and Legal Studies",
    "Studies in Creative Arts and Writing",
    "Language, Communication and Culture",
    "History and Archaeology",
    "Philosophy and Religious Studies",
)
N_LABELS = len(DISCIPLINES)

_PROB_EPS = 1e-12


@dataclass
class Vocabulary:
    index: dict[str, int]  # token -> column
    idf: np.ndarray  # (V,), idf = ln(N / df)

    def __len__(self) -> int:
        return len(self.index)


def build_vocabulary(corpus: list[str], min_df: int = 1, max_vocab: int = 50000) -> Vocabulary:
    """Document-frequency filtered vocabulary over tokenized texts.

    Tokens with df < min_df are dropped; at most max_vocab tokens survive,
    preferring high document frequency with lexicographic tie-breaking.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    df: dict[str, int] = {}
    for text in corpus:
        for token in set(tokenize(text)):
            df[token] = df.get(token, 0) + 1
    kept = sorted((t for t, c in df.items() if c >= min_df), key=lambda t: (-df[t], t))
    if not kept:
        log.warning("no token reaches min_df=%d over %d documents; vocabulary is empty", min_df, len(corpus))
    kept = kept[:max_vocab]
    index = {t: i for i, t in enumerate(sorted(kept))}
    n = len(corpus)
    idf = np.zeros(len(index))
    for t, i in index.items():
        idf[i] = np.log(n / df[t])
    return Vocabulary(index=index, idf=idf)


def featurize_tokens(tokens: list[str], vocab: Vocabulary) -> dict[int, float]:
    """Sparse L2-normalized tf-idf weights for a token sequence."""
    counts: dict[int, int] = {}
    for t in tokens:
        i = vocab.index.get(t)
        if i is not None:
            counts[i] = counts.get(i, 0) + 1
    weights = {i: c * vocab.idf[i] for i, c in counts.items()}
    norm = np.sqrt(sum(w * w for w in weights.values()))
    if norm > 0:
        weights = {i: w / norm for i, w in weights.items()}
    return {i: w for i, w in weights.items() if w != 0.0}


def featurize(text: str, vocab: Vocabulary) -> dict[int, float]:
    return featurize_tokens(tokenize(text), vocab)


def _dense(rows: list[dict[int, float]], width: int) -> np.ndarray:
    X = np.zeros((len(rows), width))
    for r, fv in enumerate(rows):
        for i, w in fv.items():
            X[r, i] = w
    return X


@dataclass
class DisciplineModel:
    vocab: Vocabulary
    w_encoder: np.ndarray  # (V, d)
    b_encoder: np.ndarray  # (d,)
    w_classifier: np.ndarray  # (d, n_labels)
    b_classifier: np.ndarray  # (n_labels,)
    tau: float = 0.5

    @property
    def embed_dim(self) -> int:
        return self.w_encoder.shape[1]

    def embed(self, X: np.ndarray) -> np.ndarray:
        return X @ self.w_encoder + self.b_encoder

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.embed(X) @ self.w_classifier + self.b_classifier


def sigmoid(logits: np.ndarray) -> np.ndarray:
    """Numerically clamped sigmoid; outputs stay inside (0, 1)."""
    out = np.empty_like(logits, dtype=float)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _PROB_EPS, 1.0 - _PROB_EPS)


def bce_loss(probs: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to the logits.

    probs = sigmoid(logits), y binary. Returns (loss, d loss / d logits);
    the mean runs over every (sample, label) cell, so the gradient is
    (probs - y) / probs.size.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if probs.shape != y.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    p = np.clip(probs, _PROB_EPS, 1.0 - _PROB_EPS)
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / p.size
    return float(loss), grad


def info_nce_loss(pairs: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Contrastive loss over augmented-view pairs and its embedding gradient.

    pairs: (n, 2, d) embeddings, two views per document. For each document the
    first view is the anchor; its loss is -log softmax of the paired view's
    temperature-scaled cosine similarity against every other embedding in the
    batch (the anchor itself is excluded from the denominator, the paired view
    is included, so each term is >= 0). Returns (mean loss, gradient of the
    mean loss wrt pairs).
    """
    Z = np.asarray(pairs, dtype=float)
    if Z.ndim != 3 or Z.shape[1] != 2:
        raise ValueError("pairs must have shape (n, 2, d)")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = Z.shape[0]
    flat = Z.reshape(2 * n, -1)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for zero-norm embeddings")
    unit = flat / norms[:, None]
    C = unit @ unit.T  # cosine matrix
    S = C / tau

    anchors = np.arange(0, 2 * n, 2)
    positives = anchors + 1
    # G[a, j] = d(mean loss)/dS[a, j]; nonzero only on anchor rows, j != a.
    G = np.zeros((2 * n, 2 * n))
    losses = np.empty(n)
    for idx, (a, p) in enumerate(zip(anchors, positives)):
        row = S[a].copy()
        row[a] = -np.inf  # exclude the anchor itself
        m = row.max()
        expv = np.exp(row - m)
        denom = expv.sum()
        losses[idx] = -(S[a, p] - m - np.log(denom))
        soft = expv / denom
        G[a] = soft / n
        G[a, p] -= 1.0 / n
        G[a, a] = 0.0
    loss = float(losses.mean())

    # d loss/dC = G/tau restricted to anchor rows; C is symmetric in its two
    # arguments, so row r of the embedding gradient collects G[r, :] + G[:, r].
    W = (G + G.T) / tau
    row_inner = (W * C).sum(axis=1)
    grad_unit = W @ unit - row_inner[:, None] * unit
    grad_flat = grad_unit / norms[:, None]
    return loss, grad_flat.reshape(Z.shape)


def total_loss(bce: float, cl: float) -> float:
    """Unweighted sum of the two training terms."""
    return bce + cl


def augment(tokens: list[str], rng: np.random.Generator, drop_prob: float) -> list[str]:
    """Token dropout keeping at least one token."""
    if not tokens:
        raise ValueError("cannot augment an empty document")
    if not (0.0 <= drop_prob < 1.0):
        raise ValueError("drop_prob must be in [0, 1)")
    kept = [t for t in tokens if rng.random() >= drop_prob]
    if not kept:
        kept = [tokens[int(rng.integers(len(tokens)))]]
    return kept


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 0.5
    batch_size: int = 32
    seed: int = 0
    embed_dim: int = 32
    tau: float = 0.5
    drop_prob: float = 0.3
    min_df: int = 1
    max_vocab: int = 50000
    contrastive: bool = True


def _doc_text(doc) -> str:
    if isinstance(doc, str):
        return doc
    return f"{doc.title} {doc.abstract}"


def train(dataset: list[tuple[object, np.ndarray]], config: TrainConfig) -> DisciplineModel:
    """Mini-batch gradient descent on bce + contrastive loss; seed-deterministic.

    dataset: (document, binary label vector) pairs; documents are strings or
    records with title/abstract. Every label vector needs >= 1 positive.
    """
    if not dataset:
        raise ValueError("empty training set")
    texts = [_doc_text(doc) for doc, _ in dataset]
    Y = np.array([np.asarray(y, dtype=float) for _, y in dataset])
    if Y.ndim != 2:
        raise ValueError("label vectors must share one length")
    if not np.isin(Y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if (Y.sum(axis=1) < 1).any():
        raise ValueError("every document needs at least one positive label")

    rng = np.random.default_rng(config.seed)
    vocab = build_vocabulary(texts, config.min_df, config.max_vocab)
    V, d, L = len(vocab), config.embed_dim, Y.shape[1]
    model = DisciplineModel(
        vocab=vocab,
        w_encoder=rng.normal(0.0, 0.1, (V, d)),
        b_encoder=rng.normal(0.0, 0.1, d),
        w_classifier=rng.normal(0.0, 0.1, (d, L)),
        b_classifier=np.zeros(L),
        tau=config.tau,
    )
    tokens_list = [tokenize(t) for t in texts]
    X = _dense([featurize_tokens(toks, vocab) for toks in tokens_list], V)

    n = len(dataset)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            Xb, Yb = X[batch], Y[batch]
            Zb = model.embed(Xb)
            logits = Zb @ model.w_classifier + model.b_classifier
            _, d_logits = bce_loss(sigmoid(logits), Yb)

            g_wc = Zb.T @ d_logits
            g_bc = d_logits.sum(axis=0)
            dZ = d_logits @ model.w_classifier.T
            g_we = Xb.T @ dZ
            g_be = dZ.sum(axis=0)

            if config.contrastive:
                views = []
                for i in batch:
                    toks = tokens_list[i]
                    if toks:
                        views.append(featurize_tokens(augment(toks, rng, config.drop_prob), vocab))
                        views.append(featurize_tokens(augment(toks, rng, config.drop_prob), vocab))
                    else:
                        views.extend(({}, {}))
                A = _dense(views, V)
                Zaug = model.embed(A)
                _, dZaug = info_nce_loss(Zaug.reshape(-1, 2, d), model.tau)
                dZaug = dZaug.reshape(-1, d)
                g_we += A.T @ dZaug
                g_be += dZaug.sum(axis=0)

            model.w_classifier -= config.lr * g_wc
            model.b_classifier -= config.lr * g_bc
            model.w_encoder -= config.lr * g_we
            model.b_encoder -= config.lr * g_be
    return model


def predict(doc, model: DisciplineModel, threshold: float = 0.5) -> tuple[set[int], np.ndarray]:
    """Labels whose probability clears the threshold; argmax fallback keeps >= 1 label."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    x = _dense([featurize(_doc_text(doc), model.vocab)], len(model.vocab))
    probs = sigmoid(model.logits(x))[0]
    labels = {int(i) for i in np.nonzero(probs >= threshold)[0]}
    if not labels:
        labels = {int(np.argmax(probs))}
    return labels, probs


@dataclass
class PredictionRecord:
    paper_id: str
    x: np.ndarray  # predicted probabilities
    y: np.ndarray  # binary ground truth


@dataclass
class Metrics:
    precision_at_k: float
    ndcg_at_k: float
    auc: float
    k: int


def _ranked_labels(scores: np.ndarray, y: np.ndarray) -> np.ndarray:
    order = np.lexsort((np.arange(len(scores)), -scores))
    return y[order]


def evaluate(predictions: list[PredictionRecord], k: int) -> Metrics:
    """Precision@k, NDCG@k, and label-macro rank AUC (all in [0, 1])."""
    from .extract import ndcg  # ranking metric lives with the ranker

    if not predictions:
        raise ValueError("no predictions to evaluate")
    width = len(predictions[0].x)
    if not (1 <= k <= width):
        raise ValueError(f"k must be in [1, {width}]")
    X = np.array([np.asarray(r.x, dtype=float) for r in predictions])
    Y = np.array([np.asarray(r.y, dtype=float) for r in predictions])
    if not np.isin(Y, (0.0, 1.0)).all():
        raise ValueError("ground truth must be binary")

    prec = []
    ndcgs = []
    for x, y in zip(X, Y):
        ranked = _ranked_labels(x, y)
        prec.append(ranked[:k].sum() / k)
        ndcgs.append(ndcg(ranked.astype(int).tolist(), k))

    from scipy.stats import rankdata

    aucs = []
    for label in range(Y.shape[1]):
        y = Y[:, label]
        n_pos = int(y.sum())
        n_neg = len(y) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(X[:, label])
        aucs.append((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
    if not aucs:
        raise ValueError("AUC undefined: no label has both positives and negatives")
    return Metrics(
        precision_at_k=float(np.mean(prec)),
        ndcg_at_k=float(np.mean(ndcgs)),
        auc=float(np.mean(aucs)),
        k=k,
    )


def format_metrics_report(by_k: dict[int, Metrics]) -> str:
    """Text table: one row of Pre.@k / NDCG@k per requested k plus AUC, scaled x100."""
    ks = sorted(by_k)
    header = [f"Pre.@{k}" for k in ks] + [f"NDCG@{k}" for k in ks] + ["AUC"]
    values = [f"{by_k[k].precision_at_k * 100:.2f}" for k in ks]
    values += [f"{by_k[k].ndcg_at_k * 100:.2f}" for k in ks]
    values += [f"{by_k[ks[0]].auc * 100:.2f}"]
    w = max(len(h) for h in header) + 2
    return "".join(h.ljust(w) for h in header).rstrip() + "\n" + "".join(v.ljust(w) for v in values).rstrip() + "\n"


MODEL_FORMAT_VERSION = 1


def save_model(model: DisciplineModel, path) -> None:
    tokens = [t for t, _ in sorted(model.vocab.index.items(), key=lambda kv: kv[1])]
    np.savez(
        path,
        version=np.array(MODEL_FORMAT_VERSION),
        tokens=np.array(json.dumps(tokens)),
        idf=model.vocab.idf,
        w_encoder=model.w_encoder,
        b_encoder=model.b_encoder,
        w_classifier=model.w_classifier,
        b_classifier=model.b_classifier,
        tau=np.array(model.tau),
    )


def load_model(path) -> DisciplineModel:
    data = np.load(path, allow_pickle=False)
    if int(data["version"]) != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {int(data['version'])}")
    tokens = json.loads(str(data["tokens"]))
    vocab = Vocabulary(index={t: i for i, t in enumerate(tokens)}, idf=data["idf"])
    return DisciplineModel(
        vocab=vocab,
        w_encoder=data["w_encoder"],
        b_encoder=data["b_encoder"],
        w_classifier=data["w_classifier"],
        b_classifier=data["b_classifier"],
        tau=float(data["tau"]),
    )


def load_training_file(path) -> list[tuple[str, str, np.ndarray]]:
    """Training records: paper_id, comma-separated label indices, title, abstract (tab-separated)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
            paper_id, labels_s, title, abstract = parts
            y = np.zeros(N_LABELS)
            for tok in labels_s.split(","):
                idx = int(tok)
                if not (0 <= idx < N_LABELS):
                    raise ValueError(f"line {lineno}: label index {idx} out of range")
                y[idx] = 1.0
            out.append((paper_id, f"{title} {abstract}", y))
    return out
