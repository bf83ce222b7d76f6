"""Corpus generator: determinism, planted structure, file round-trip."""

import json

import numpy as np
import pytest

from lgdn.errors import InvalidConfig
from lgdn.synth import (CORPUS_VERSION, CorpusConfig, generate_corpus,
                        load_corpus, save_corpus)

SMALL = CorpusConfig(n_train=12, n_val=4, n_test=8, n_concepts=4,
                     frames_per_video=6, tokens_per_frame=3,
                     tokens_per_text=3, token_dim=16, noise_fraction=0.5,
                     concept_spread=0.3, seed=11)


def test_salient_count_matches_noise_fraction():
    corpus = generate_corpus(SMALL)
    expected = round((1 - SMALL.noise_fraction) * SMALL.frames_per_video)
    for p in corpus.pairs:
        assert int(p.salient_mask.sum()) == expected
        assert len(p.video) == SMALL.frames_per_video
        assert p.text.tokens.shape == (SMALL.tokens_per_text, SMALL.token_dim)


def test_zero_noise_marks_every_frame_salient():
    cfg = CorpusConfig(n_train=4, n_val=0, n_test=0, n_concepts=2,
                       frames_per_video=5, noise_fraction=0.0, seed=1)
    for p in generate_corpus(cfg).pairs:
        assert p.salient_mask.all()


def test_at_least_one_salient_frame():
    cfg = CorpusConfig(n_train=4, n_val=0, n_test=0, n_concepts=2,
                       frames_per_video=4, noise_fraction=0.95, seed=2)
    for p in generate_corpus(cfg).pairs:
        assert int(p.salient_mask.sum()) >= 1


def test_generation_deterministic():
    a = generate_corpus(SMALL)
    b = generate_corpus(SMALL)
    for pa, pb in zip(a.pairs, b.pairs):
        assert (pa.salient_mask == pb.salient_mask).all()
        assert (pa.text.tokens == pb.text.tokens).all()
        for fa, fb in zip(pa.video, pb.video):
            assert (fa.tokens == fb.tokens).all()


def test_splits_are_disjoint_and_sized():
    corpus = generate_corpus(SMALL)
    seen = {}
    for p in corpus.pairs:
        assert p.pair_id not in seen
        seen[p.pair_id] = p.split
    assert len(corpus.split("train")) == SMALL.n_train
    assert len(corpus.split("val")) == SMALL.n_val
    assert len(corpus.split("test")) == SMALL.n_test


def test_intra_concept_cosine_exceeds_inter_by_three_sigma():
    cfg = CorpusConfig(n_train=60, n_val=0, n_test=0, n_concepts=8,
                       frames_per_video=4, concept_spread=0.3, seed=3)
    corpus = generate_corpus(cfg)
    rng = np.random.default_rng(0)

    def cos(a, b):
        return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

    intra, inter = [], []
    pairs = corpus.pairs
    for _ in range(1000):
        i, j = rng.integers(len(pairs)), rng.integers(len(pairs))
        a = pairs[i].text.tokens[rng.integers(cfg.tokens_per_text)]
        b = pairs[j].text.tokens[rng.integers(cfg.tokens_per_text)]
        (intra if pairs[i].concept_id == pairs[j].concept_id else inter).append(
            cos(a, b))
    gap = np.mean(intra) - np.mean(inter)
    sigma = np.sqrt(np.var(intra) / len(intra) + np.var(inter) / len(inter))
    assert gap > 3 * sigma


def test_planted_frames_closer_to_text_than_noise_frames():
    corpus = generate_corpus(SMALL)
    margins = []
    for p in corpus.pairs:
        text_center = p.text.tokens.mean(axis=0)
        sal, noise = [], []
        for j, frame in enumerate(p.video):
            c = frame.tokens.mean(axis=0)
            sim = c @ text_center / (np.linalg.norm(c) * np.linalg.norm(text_center))
            (sal if p.salient_mask[j] else noise).append(sim)
        margins.append(np.mean(sal) - np.mean(noise))
    assert np.mean(margins) > 0.3


def test_noise_frames_never_use_pair_concept():
    # noise tokens must sit near some *other* concept prototype
    cfg = CorpusConfig(n_train=30, n_val=0, n_test=0, n_concepts=6,
                       frames_per_video=6, concept_spread=0.2, seed=4)
    corpus = generate_corpus(cfg)
    protos = {}
    for p in corpus.pairs:  # estimate prototypes from salient frames
        protos.setdefault(p.concept_id, []).append(
            np.concatenate([f.tokens for f, m in zip(p.video, p.salient_mask)
                            if m]).mean(axis=0))
    protos = {c: np.mean(v, axis=0) for c, v in protos.items()}
    for p in corpus.pairs:
        for j, frame in enumerate(p.video):
            if p.salient_mask[j]:
                continue
            center = frame.tokens.mean(axis=0)
            sims = {c: center @ q / (np.linalg.norm(center) * np.linalg.norm(q))
                    for c, q in protos.items()}
            assert max(sims, key=sims.get) != p.concept_id


class TestCorpusFile:
    def test_round_trip(self, tmp_path):
        corpus = generate_corpus(SMALL)
        path = tmp_path / "c.json"
        save_corpus(corpus, path)
        loaded = load_corpus(path)
        assert loaded.config == SMALL
        for a, b in zip(corpus.pairs, loaded.pairs):
            assert a.split == b.split and a.concept_id == b.concept_id
            assert (a.salient_mask == b.salient_mask).all()
            assert (a.text.tokens == b.text.tokens).all()
            for fa, fb in zip(a.video, b.video):
                assert (fa.tokens == fb.tokens).all()
                assert (fa.pad_mask == fb.pad_mask).all()

    def test_version_tag(self, tmp_path):
        path = tmp_path / "c.json"
        save_corpus(generate_corpus(SMALL), path)
        doc = json.loads(path.read_text())
        assert doc["version"] == CORPUS_VERSION == "lgdn-corpus/1"

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        save_corpus(generate_corpus(SMALL), path)
        doc = json.loads(path.read_text())
        doc["version"] = "lgdn-corpus/999"
        path.write_text(json.dumps(doc))
        with pytest.raises(InvalidConfig):
            load_corpus(path)

    def test_identical_bytes_across_generations(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_corpus(generate_corpus(SMALL), p1)
        save_corpus(generate_corpus(SMALL), p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_invalid_configs_rejected():
    with pytest.raises(InvalidConfig):
        CorpusConfig(n_concepts=1).validate()
    with pytest.raises(InvalidConfig):
        CorpusConfig(noise_fraction=1.0).validate()
    with pytest.raises(InvalidConfig):
        CorpusConfig(frames_per_video=0).validate()
    with pytest.raises(InvalidConfig):
        CorpusConfig.from_dict({"bogus_key": 3})
