import numpy as np
import pytest

from udscascade.autodiff import Tensor
from udscascade.autodiff import functional as F
from udscascade.injection import (MODES, AttentionRefiner, GCNRefiner, InjectionConfig, SpanRefiner,
                                  head_adjacency, injection_parameter_count, label_distribution)
from udscascade.syntax import SyntaxParser

DIM, N_LABELS = 6, 3


@pytest.fixture
def parsed():
    rng = np.random.default_rng(0)
    parser = SyntaxParser(DIM, 4, N_LABELS, rng, mlp_dim=5, arc_dim=4, label_dim=3, dropout=0.0)
    H = Tensor(rng.normal(size=(5, DIM)))
    return parser, H, parser.score(H)


class TestAdjacency:
    def test_soft_rows_are_stochastic_without_self(self, parsed):
        _, _, heads = parsed
        A = head_adjacency(heads).data
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(np.diag(A), 0.0)
        assert (A >= 0).all()

    def test_hard_rows_are_one_hot(self, parsed):
        _, _, heads = parsed
        A = head_adjacency(heads, hard=True).data
        assert set(np.unique(A)) <= {0.0, 1.0}
        best = heads.arc.data.argmax(axis=1)
        for i, row in enumerate(A):
            assert row.sum() == (0.0 if best[i] == i else 1.0)

    def test_single_word_row_stays_zero(self):
        rng = np.random.default_rng(0)
        parser = SyntaxParser(DIM, 4, N_LABELS, rng, mlp_dim=5, arc_dim=4, label_dim=3, dropout=0.0)
        heads = parser.score(Tensor(rng.normal(size=(1, DIM))))
        np.testing.assert_array_equal(head_adjacency(heads).data, 0.0)

    def test_label_distribution(self, parsed):
        _, _, heads = parsed
        A_t = label_distribution(heads).data
        assert A_t.shape == (5, N_LABELS)
        np.testing.assert_allclose(A_t.sum(axis=1), 1.0, atol=1e-12)


class TestRefiners:
    def test_gcn_shape(self, parsed):
        _, H, heads = parsed
        gcn = GCNRefiner(DIM, N_LABELS, np.random.default_rng(1))
        assert gcn(H, head_adjacency(heads), label_distribution(heads)).shape == H.shape

    def test_gcn_rejects_bad_adjacency(self, parsed):
        _, H, heads = parsed
        gcn = GCNRefiner(DIM, N_LABELS, np.random.default_rng(1))
        with pytest.raises(F.ShapeError):
            gcn(H, Tensor(np.zeros((4, 4))), label_distribution(heads))

    def test_gcn_zero_graph_keeps_only_skip_path(self, parsed):
        _, H, _ = parsed
        gcn = GCNRefiner(DIM, N_LABELS, np.random.default_rng(1))
        for layer in gcn.layers:
            layer.mix.weight.data[:] = 0.0
            layer.mix.bias.data[:] = 0.0
        out = gcn(H, Tensor(np.zeros((5, 5))), Tensor(np.zeros((5, N_LABELS)))).data
        W, b = gcn.out.weight.data, gcn.out.bias.data
        expected = H.data @ W[:DIM] + b
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_attention_zero_adjacency_is_affine_in_h(self, parsed):
        _, H, heads = parsed
        att = AttentionRefiner(DIM, 4, 3, np.random.default_rng(1))
        out = att(H, heads, Tensor(np.zeros((5, 5)))).data
        expected = H.data @ att.out.weight.data[:DIM] + att.out.bias.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_attention_reuses_parser_projections(self, parsed):
        parser, H, _ = parsed
        att = AttentionRefiner(DIM, 4, 3, np.random.default_rng(1))

        def run():
            heads = parser.score(H)
            return att(H, heads, head_adjacency(heads)).data

        before = run()
        parser.arc_left.weight.data *= 1.5
        assert not np.allclose(before, run())

    def test_attention_is_smaller_than_gcn(self):
        rng = np.random.default_rng(0)
        gcn = GCNRefiner(32, 20, rng)
        att = AttentionRefiner(32, 16, 16, rng)
        assert 0 < injection_parameter_count(att) < injection_parameter_count(gcn)
        assert injection_parameter_count(None) == 0


class TestSpanRefiner:
    def test_singleton_span_is_affine_in_center(self):
        rng = np.random.default_rng(0)
        ref = SpanRefiner(DIM, rng)
        G_m = Tensor(rng.normal(size=(3, DIM)))
        out = ref(G_m, None, []).data
        np.testing.assert_allclose(out, G_m.data @ ref.out.weight.data + ref.out.bias.data, atol=1e-12)

    def test_member_order_does_not_matter(self):
        rng = np.random.default_rng(1)
        ref = SpanRefiner(DIM, rng)
        G_m = Tensor(rng.normal(size=(2, DIM)))
        G_n = rng.normal(size=(4, DIM))
        owners = np.array([0, 1, 0, 0])
        perm = np.array([3, 1, 0, 2])
        a = ref(G_m, Tensor(G_n), owners).data
        b = ref(G_m, Tensor(G_n[perm]), owners[perm]).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_only_own_members_contribute(self):
        rng = np.random.default_rng(2)
        ref = SpanRefiner(DIM, rng)
        G_m = Tensor(rng.normal(size=(2, DIM)))
        G_n = rng.normal(size=(2, DIM))
        a = ref(G_m, Tensor(G_n), [1, 1]).data
        G_n[1] += 5.0
        b = ref(G_m, Tensor(G_n), [1, 1]).data
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.allclose(a[1], b[1])


class TestModes:
    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            InjectionConfig(mode="tree-lstm")

    def test_modes(self):
        assert MODES == ("none", "multitask", "gcn", "attention")

    def test_none_is_plain_encoder(self, make_model):
        model = make_model("none")
        assert model.syntax is None and model.refiner is None
        ids = np.array([2, 3, 4])
        H, heads = model.contextualize(ids)
        assert heads is None
        assert np.array_equal(H.data, model.encoder(ids, None, pad_id=-1).data)

    def test_multitask_shares_encoder_output(self, make_model):
        model = make_model("multitask")
        ids = np.array([2, 3, 4])
        H, heads = model.contextualize(ids)
        assert heads is not None and model.refiner is None
        assert np.array_equal(H.data, model.encoder(ids, None, pad_id=-1).data)

    @pytest.mark.parametrize("mode", ["gcn", "attention"])
    def test_refined_modes_change_h(self, make_model, mode):
        model = make_model(mode)
        ids = np.array([2, 3, 4])
        H, heads = model.contextualize(ids)
        assert H.shape == (3, model.config.hidden_dim)
        assert not np.allclose(H.data, model.encoder(ids, None, pad_id=-1).data)

    def test_parameter_counts_by_mode(self, make_model):
        counts = {m: make_model(m).num_parameters() for m in MODES}
        assert counts["none"] < counts["multitask"] < counts["attention"] < counts["gcn"]
