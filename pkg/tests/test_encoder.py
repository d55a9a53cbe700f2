from collections import Counter

import numpy as np
import pytest

from udscascade.autodiff import Tensor, grad_check
from udscascade.autodiff import functional as F
from udscascade.encoder import Encoder, EncoderConfig, Vocabulary, build_vocab


def small(kind="bilstm", **kw):
    cfg = EncoderConfig(vocab_size=12, embed_dim=5, hidden_dim=6, kind=kind, heads=2, dropout=0.0, **kw)
    return Encoder(cfg, np.random.default_rng(0))


class TestVocabulary:
    def test_min_count(self):
        v = build_vocab([["a", "a", "b"]], min_count=2)
        assert "a" in v and "b" not in v
        assert len(v) == 3  # a plus the two specials

    def test_unknown_maps_to_unk(self):
        v = build_vocab([["a", "a"]], min_count=1)
        assert v.lookup("zebra") == v.unk_id

    def test_size_matches_independent_count(self):
        rng = np.random.default_rng(0)
        corpus = [[f"w{rng.integers(0, 40)}" for _ in range(rng.integers(1, 12))] for _ in range(60)]
        counts = Counter(w for s in corpus for w in s)
        for k in (1, 2, 3):
            assert len(build_vocab(corpus, k)) == 2 + sum(c >= k for c in counts.values())

    def test_frequency_sorted(self):
        v = build_vocab([["b", "a", "a", "c", "c", "c"]], 1)
        ids = [v.lookup(w) for w in ("c", "a", "b")]
        assert ids == sorted(ids)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_vocab([], 1)

    def test_file_roundtrip(self, tmp_path):
        v = build_vocab([["x", "y", "y"]], 1)
        v.save(tmp_path / "vocab.txt")
        lines = (tmp_path / "vocab.txt").read_text().splitlines()
        assert any(line.split()[0] == "y" and line.split()[-1] == "2" for line in lines)
        back = Vocabulary.load(tmp_path / "vocab.txt")
        assert back.to_dict() == v.to_dict()


class TestEncoder:
    @pytest.mark.parametrize("kind", ["bilstm", "transformer"])
    def test_output_shape(self, kind):
        assert small(kind)(np.array([2, 3, 4, 5])).shape == (4, 6)

    def test_context_sensitivity(self):
        enc = small()
        a = enc(np.array([2, 3, 4, 5])).data
        b = enc(np.array([2, 3, 4, 9])).data
        assert not np.allclose(a[0], b[0])

    @pytest.mark.parametrize("kind", ["bilstm", "transformer"])
    def test_padding_never_leaks(self, kind):
        enc = small(kind)
        plain = enc(np.array([2, 3, 4])).data
        padded = enc(np.array([2, 3, 4, 0, 0])).data
        np.testing.assert_array_equal(padded[:3], plain)
        assert not padded[3:].any()

    def test_max_len(self):
        enc = small(max_len=3)
        with pytest.raises(ValueError, match="max_len"):
            enc(np.array([2, 3, 4, 5]))

    def test_deterministic_given_seed(self):
        ids = np.array([2, 3, 4])
        assert np.array_equal(small()(ids).data, small()(ids).data)

    def test_kinds_share_output_shape(self):
        ids = np.array([2, 3, 4, 5, 6])
        assert small("bilstm")(ids).shape == small("transformer")(ids).shape

    @pytest.mark.parametrize("kind", ["bilstm", "transformer"])
    def test_gradient_reaches_embeddings(self, kind):
        enc = small(kind)
        ids = np.array([2, 7])

        def f(table):
            enc.embedding = table
            return F.sum(F.tanh(enc(ids)))

        table = Tensor(enc.embedding.data.copy())
        assert grad_check(f, [table]) <= 1e-4

    def test_fused_lstm_matches_stepwise(self):
        enc = small()
        x = Tensor(np.random.default_rng(1).normal(size=(5, 5)))
        for reverse in (False, True):
            fused = enc.forward_layers[0](x, reverse=reverse).data
            slow = enc.forward_layers[0].stepwise(x, reverse=reverse).data
            np.testing.assert_allclose(fused, slow, atol=1e-14)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(vocab_size=5, layers=0)
        with pytest.raises(ValueError):
            EncoderConfig(vocab_size=5, kind="gru")
