import math

import numpy as np
import pytest

from scholarkg.extract import GlossaryEntry
from scholarkg.relate import (
    RELATION_LABELS,
    RawTriple,
    RelationAnnotation,
    RelationModel,
    RelationTrainConfig,
    align,
    classify,
    encode,
    evaluate_relations,
    find_token_span,
    glossary_name_map,
    ingest_triples,
    init_relation_model,
    load_relation_annotations,
    load_relation_model,
    predict_relation,
    save_relation_model,
    segment_mask,
    softmax,
    train_relation,
    write_triples,
)


def glossary():
    return [
        GlossaryEntry("e_cov", "SARS-CoV-2", "virus causing the pandemic", "Biological Sciences", "wiki"),
        GlossaryEntry("e_pneu", "pneumonia", "lung inflammation", "Medical and Health Sciences", "glossary"),
        GlossaryEntry("e_lock", "lockdown", "movement restriction policy", "Studies in Human Society", "glossary"),
    ]


class TestIngestTriples:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("")
        triples, errors = ingest_triples(p)
        assert triples == [] and errors == []

    def test_malformed_line_reported(self, tmp_path):
        p = tmp_path / "t.tsv"
        good = "p1\tSARS-CoV-2\tcauses\tpneumonia\tSARS-CoV-2 causes pneumonia in patients."
        lines = [good, "p2\tonly\tthree", good, good, good.replace("p1", "p5")]
        p.write_text("\n".join(lines) + "\n")
        triples, errors = ingest_triples(p)
        assert len(triples) == 4
        assert errors == [(2, "expected 5 tab-separated fields, got 3")]

    def test_sentence_must_contain_surfaces(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("p1\tSARS-CoV-2\tcauses\tpneumonia\tA sentence about nothing.\n")
        triples, errors = ingest_triples(p)
        assert triples == []
        assert len(errors) == 1

    def test_tab_escape_round_trip(self, tmp_path):
        p = tmp_path / "t.tsv"
        t = RawTriple("p1", "a b", "rel", "c d", "a b\tweird\tc d")
        write_triples([t], p)
        triples, errors = ingest_triples(p)
        assert errors == []
        assert triples[0].sentence == "a b\tweird\tc d"

    def test_unreadable_fatal(self, tmp_path):
        with pytest.raises(OSError):
            ingest_triples(tmp_path / "nope.tsv")


class TestAlign:
    def test_both_match(self):
        name_map = glossary_name_map(glossary())
        t = RawTriple("p1", "SARS-CoV-2", "causes", "pneumonia", "SARS-CoV-2 causes pneumonia.")
        aligned = align(t, name_map)
        assert aligned is not None
        assert (aligned.head_id, aligned.tail_id) == ("e_cov", "e_pneu")

    def test_partial_match_rejected(self):
        name_map = glossary_name_map(glossary())
        t = RawTriple("p1", "SARS-CoV-2", "causes", "sneezing", "SARS-CoV-2 causes sneezing.")
        assert align(t, name_map) is None

    def test_case_folding(self):
        name_map = glossary_name_map(glossary())
        t = RawTriple("p1", "sars-cov-2", "causes", "PNEUMONIA", "sars-cov-2 causes PNEUMONIA.")
        aligned = align(t, name_map)
        assert aligned is not None and aligned.head_id == "e_cov"

    def test_self_loop_rejected(self):
        name_map = glossary_name_map(glossary())
        t = RawTriple("p1", "lockdown", "is", "Lockdown", "lockdown is Lockdown.")
        assert align(t, name_map) is None


class TestEncode:
    def model(self, seed=0, dim=6):
        vocab = {t: i + 1 for i, t in enumerate(["alpha", "beta", "gamma", "delta"])}
        return init_relation_model(vocab, RelationTrainConfig(seed=seed, dim=dim))

    def test_segment_mask_hand_case(self):
        mask = segment_mask(4, (0, 1), (3, 4))
        assert mask.tolist() == [1, 0, 0, 1]

    def test_no_triple_tokens_constant_segment(self):
        model = self.model()
        h1 = encode("alpha beta gamma", None, None, model)
        # all tokens share segment row 0: replacing row 1 must not matter
        model.seg_emb[1] += 100.0
        h2 = encode("alpha beta gamma", None, None, model)
        assert np.array_equal(h1, h2)

    def test_mask_changes_encoding_when_rows_differ(self):
        model = self.model()
        base = encode("alpha beta gamma delta", None, None, model)
        marked = encode("alpha beta gamma delta", (0, 1), (3, 4), model)
        assert not np.allclose(base, marked)

    def test_unknown_token_maps_to_reserved_row(self):
        model = self.model()
        a = encode("zzz", None, None, model)
        b = encode("qqq", None, None, model)
        assert np.array_equal(a, b)  # both resolve to the unknown row

    def test_deterministic_bits(self):
        model = self.model()
        h1 = encode("alpha beta gamma", (0, 1), (2, 3), model)
        h2 = encode("alpha beta gamma", (0, 1), (2, 3), model)
        assert np.array_equal(h1, h2)

    def test_find_token_span(self):
        tokens = ["sars", "cov", "2", "causes", "pneumonia"]
        assert find_token_span(tokens, "SARS-CoV-2") == (0, 3)
        assert find_token_span(tokens, "pneumonia") == (4, 5)
        assert find_token_span(tokens, "missing") is None


class TestClassify:
    def test_zero_weights_uniform(self):
        model = init_relation_model({"a": 1}, RelationTrainConfig(dim=5))
        model.w[:] = 0.0
        p = classify(np.ones(5), model)
        assert p == pytest.approx([0.25, 0.25, 0.25, 0.25])

    def test_one_hot_alignment(self):
        model = init_relation_model({"a": 1}, RelationTrainConfig(dim=4))
        model.w = np.eye(4) * 5.0
        p = classify(np.array([0.0, 0.0, 1.0, 0.0]), model)
        assert int(np.argmax(p)) == 2

    def test_hand_softmax(self):
        p = softmax(np.array([1.0, 0.0, 0.0, 0.0]))
        e = math.e
        assert p == pytest.approx([e / (e + 3), 1 / (e + 3), 1 / (e + 3), 1 / (e + 3)])

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = softmax(rng.normal(scale=5, size=4))
            assert abs(p.sum() - 1.0) < 1e-9
            assert (p > 0).all()

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0, 0.0])
        assert softmax(logits + 7.5) == pytest.approx(softmax(logits))


def marker_dataset(n=240, seed=0):
    """Label is determined by a marker token appearing in the sentence."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{i}" for i in range(20)]
    markers = {label: f"marker{i}" for i, label in enumerate(RELATION_LABELS)}
    out = []
    for _ in range(n):
        label = RELATION_LABELS[int(rng.integers(4))]
        words = list(rng.choice(fillers, size=6))
        words.insert(int(rng.integers(len(words))), markers[label])
        head, tail = "alpha entity", "beta entity"
        sentence = f"{head} {' '.join(words)} {tail}"
        out.append(RelationAnnotation(sentence, head, "rel", tail, label))
    return out


class TestTrainRelation:
    def test_marker_token_heldout_accuracy(self):
        data = marker_dataset(n=240, seed=1)
        train_split, held = data[:180], data[180:]
        model = train_relation(train_split, RelationTrainConfig(epochs=150, lr=0.5, seed=0, dim=24))
        correct = 0
        for ann in held:
            pred, _ = predict_relation(ann.sentence, ann.head, ann.tail, model)
            correct += pred == ann.label
        assert correct / len(held) > 0.95

    def test_zero_epochs_initial_model(self):
        data = marker_dataset(n=20)
        m = train_relation(data, RelationTrainConfig(epochs=0, seed=4))
        vocab = m.vocab
        init = init_relation_model(vocab, RelationTrainConfig(epochs=0, seed=4))
        assert np.array_equal(m.tok_emb, init.tok_emb)
        assert np.array_equal(m.w, init.w)

    def test_single_label_rejected(self):
        anns = [RelationAnnotation("a b c", "a", "r", "c", "is_A") for _ in range(5)]
        with pytest.raises(ValueError):
            train_relation(anns, RelationTrainConfig(epochs=1))

    def test_bit_deterministic(self):
        data = marker_dataset(n=40, seed=2)
        m1 = train_relation(data, RelationTrainConfig(epochs=10, seed=3, dim=8))
        m2 = train_relation(data, RelationTrainConfig(epochs=10, seed=3, dim=8))
        assert np.array_equal(m1.tok_emb, m2.tok_emb)
        assert np.array_equal(m1.seg_emb, m2.seg_emb)
        assert np.array_equal(m1.pos_emb, m2.pos_emb)
        assert np.array_equal(m1.w, m2.w)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        vocab = {t: i + 1 for i, t in enumerate(["a", "b", "c", "d", "e"])}
        for trial in range(10):
            config = RelationTrainConfig(seed=trial, dim=4, max_len=8)
            model = init_relation_model(vocab, config)
            sentence = "a b zz c d e"
            tokens = sentence.split()
            h_span, t_span = (0, 2), (4, 6)
            label = trial % 4

            def loss():
                h = encode(sentence, h_span, t_span, model)
                p = classify(h, model)
                return -math.log(p[label])

            # analytic gradients
            ids = np.array([model.vocab.get(t, 0) for t in tokens])
            mask = segment_mask(len(tokens), h_span, t_span)
            vecs = model.tok_emb[ids] + model.seg_emb[mask] + model.pos_emb[: len(tokens)]
            h = vecs.mean(axis=0)
            p = softmax(h @ model.w)
            d_logits = p.copy()
            d_logits[label] -= 1.0
            g_w = np.outer(h, d_logits)
            dh = model.w @ d_logits
            per_token = dh / len(tokens)
            g_tok = np.zeros_like(model.tok_emb)
            np.add.at(g_tok, ids, per_token)
            g_seg = np.zeros_like(model.seg_emb)
            np.add.at(g_seg, mask, per_token)
            g_pos = np.zeros_like(model.pos_emb)
            g_pos[: len(tokens)] += per_token

            eps = 1e-6
            for arr, grad in (
                (model.w, g_w),
                (model.tok_emb, g_tok),
                (model.seg_emb, g_seg),
                (model.pos_emb, g_pos),
            ):
                fd = np.zeros_like(arr)
                flat, fdf = arr.reshape(-1), fd.reshape(-1)
                for i in range(flat.size):
                    old = flat[i]
                    flat[i] = old + eps
                    hi = loss()
                    flat[i] = old - eps
                    lo = loss()
                    flat[i] = old
                    fdf[i] = (hi - lo) / (2 * eps)
                denom = max(np.abs(grad).max(), np.abs(fd).max())
                if denom < 1e-8:
                    continue
                assert np.abs(grad - fd).max() / denom < 1e-4


class TestEvaluateRelations:
    def test_exact_match(self):
        gold = ["is_A", "impact", "related_to"]
        assert evaluate_relations(gold, gold) == (1.0, 1.0)

    def test_hand_confusion_matrix(self):
        # gold:    is_A x3, impact x2, related_to x1
        # predict: is_A: 2 right + 1 called impact; impact: 1 right + 1 called related_to;
        #          related_to: 1 right
        gold = ["is_A", "is_A", "is_A", "impact", "impact", "related_to"]
        pred = ["is_A", "is_A", "impact", "impact", "related_to", "related_to"]
        p, r = evaluate_relations(pred, gold)
        # per-class precision: is_A 2/2, impact 1/2, related_to 1/2 -> 2/3
        assert p == pytest.approx((1.0 + 0.5 + 0.5) / 3)
        # per-class recall: 2/3, 1/2, 1/1 -> 0.7222…
        assert r == pytest.approx((2 / 3 + 0.5 + 1.0) / 3)

    def test_all_unknown_zero_recall(self):
        gold = ["is_A", "impact", "related_to", "is_A"]
        pred = ["unknown"] * 4
        p, r = evaluate_relations(pred, gold)
        assert r == 0.0

    def test_empty_gold(self):
        with pytest.raises(ValueError):
            evaluate_relations([], [])


class TestPersistenceAndLoaders:
    def test_model_round_trip(self, tmp_path):
        data = marker_dataset(n=24)
        model = train_relation(data, RelationTrainConfig(epochs=3, seed=0, dim=8))
        path = tmp_path / "relation.npz"
        save_relation_model(model, path)
        loaded = load_relation_model(path)
        assert loaded.vocab == model.vocab
        assert np.array_equal(loaded.tok_emb, model.tok_emb)
        assert np.array_equal(loaded.w, model.w)

    def test_annotation_loader(self, tmp_path):
        p = tmp_path / "ann.tsv"
        p.write_text("SARS-CoV-2\tcauses\tpneumonia\timpact\tSARS-CoV-2 causes pneumonia.\n")
        anns = load_relation_annotations(p)
        assert anns[0].label == "impact"
        assert anns[0].head == "SARS-CoV-2"

    def test_annotation_loader_bad_label(self, tmp_path):
        p = tmp_path / "ann.tsv"
        p.write_text("a\tr\tb\tnot_a_label\ta r b\n")
        with pytest.raises(ValueError):
            load_relation_annotations(p)
