"""Pruned sub-models: node sets, cut-set property, bitwise inference
equivalence, parameter aliasing, isolated training."""

import numpy as np
import pytest

from unetsharp.grid import ArchConfig, build_grid
from unetsharp.pruning import (
    isolated_model,
    prune,
    pruned_inference,
    retained_branches,
    retained_graph,
)
from unetsharp.supervision import UNetSharp, attach_heads, inference_output, param_count
from unetsharp.tensor import Tensor, no_grad

DESK = ArchConfig(depth=5, channels=(4, 8, 12, 16, 20), input_size=32)


@pytest.fixture(scope="module")
def model():
    return UNetSharp(DESK, cgm=True, seed=7)


@pytest.fixture(scope="module")
def image():
    return Tensor(np.random.default_rng(5).normal(size=(2, 1, 32, 32)).astype(np.float32))


class TestRetention:
    def test_level1_retains_three_nodes(self, model):
        g = retained_graph(model.graph, 1)
        assert {s.node for s in g.nodes} == {(0, 0), (1, 0), (0, 1)}

    def test_level2_retains_six_nodes(self, model):
        g = retained_graph(model.graph, 2)
        assert {s.node for s in g.nodes} == {(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)}

    def test_level4_is_identity(self, model):
        g = retained_graph(model.graph, 4)
        assert len(g.nodes) == 15
        pruned = prune(model, 4)
        assert [b.name for b in pruned.branches] == [b.name for b in model.branches]

    def test_cut_set_property_all_levels(self, model):
        for level in (1, 2, 3, 4):
            g = retained_graph(model.graph, level)
            kept = {s.node for s in g.nodes}
            for spec in g.nodes:
                for e in spec.edges:
                    assert e.src is None or e.src in kept

    def test_retained_branches_below_top(self, model):
        branches = attach_heads(model.graph)
        assert [b.name for b in retained_branches(branches, 5, 1)] == ["in_0_1"]
        assert [b.name for b in retained_branches(branches, 5, 3)] == ["in_0_1", "in_0_2", "in_0_3"]

    def test_level_out_of_range(self, model):
        with pytest.raises(ValueError):
            prune(model, 0)
        with pytest.raises(ValueError):
            prune(model, 5)


class TestAliasing:
    def test_pruned_params_alias_parent(self, model):
        pruned = prune(model, 2)
        for name, t in pruned.params.items():
            assert t is model.params[name], name

    def test_fan_in_law_holds_on_subgrid(self, model):
        for level in (1, 2, 3):
            g = retained_graph(model.graph, level)
            for spec in g.nodes:
                if spec.node[1] >= 1:
                    assert len(spec.edges) == 2 * spec.node[1]


class TestBitEquivalence:
    @pytest.mark.parametrize("level,branch", [(1, "in_0_1"), (2, "in_0_2"), (3, "in_0_3"), (4, "de_0_4")])
    def test_pruned_inference_equals_full_branch(self, model, image, level, branch):
        pruned = prune(model, level)
        with no_grad():
            sub = pruned_inference(pruned, image)
            outputs = model.forward_branches(image, mode="eval")
            full = inference_output(outputs, mode="fast", branch=branch)
        np.testing.assert_array_equal(sub.data, full.data)

    def test_equivalence_after_weight_change(self, model, image):
        # any trained weights: perturb and re-check structural equality
        rng = np.random.default_rng(11)
        for _, t in model.params.learnable_items():
            t.data += rng.normal(scale=0.01, size=t.shape).astype(t.dtype)
        pruned = prune(model, 2)
        with no_grad():
            sub = pruned_inference(pruned, image)
            full = inference_output(model.forward_branches(image, mode="eval"), "fast", "in_0_2")
        np.testing.assert_array_equal(sub.data, full.data)


class TestParamCounts:
    def test_pruned_store_counts_match_param_count(self, model):
        for level in (1, 2, 3, 4):
            pruned = prune(model, level)
            assert pruned.params.learnable_count() == param_count(DESK, level=level)


class TestIsolated:
    def test_isolated_l1_supervises_single_branch(self):
        m = isolated_model(DESK, 1, cgm=False, seed=0)
        assert len(m.branches) == 1
        assert m.branches[0].node == (0, 1)

    def test_isolated_l3_supervises_three_branches(self):
        m = isolated_model(DESK, 3, cgm=False, seed=0)
        assert [b.node for b in m.branches] == [(0, 1), (0, 2), (0, 3)]

    def test_isolated_grid_matches_pruned_topology(self, model):
        m = isolated_model(DESK, 2, cgm=False, seed=0)
        pruned_nodes = {s.node for s in retained_graph(model.graph, 2).nodes}
        assert {s.node for s in m.graph.nodes} == pruned_nodes
        for spec in m.graph.nodes:
            assert spec.edges == model.graph.by_id[spec.node].edges

    def test_train_isolated_end_to_end(self, tmp_path):
        from unetsharp.data import synth_generate, load_dataset
        from unetsharp.pruning import train_isolated
        from unetsharp.train import TrainConfig

        synth_generate(tmp_path / "d", count=20, size=32, empty_fraction=0.25, seed=2)
        ds = load_dataset(tmp_path / "d")
        cfg = TrainConfig(epochs=1, batch_size=4, seed=2, val_fraction=0.25)
        model, result = train_isolated(DESK, 1, ds, cfg)
        assert len(model.branches) == 1
        assert len(result.history) == 1
        assert {s.node for s in model.graph.nodes} == {(0, 0), (1, 0), (0, 1)}

    def test_isolated_weights_differ_from_embedded(self, model, image):
        # deeper gradients are absent in isolated training, so shared
        # parameters end up different even from the same seed
        from unetsharp.losses import LossWeights
        from unetsharp.optim import Adam
        from unetsharp.supervision import supervised_loss
        from unetsharp.tensor import backward

        mask = Tensor((np.random.default_rng(1).uniform(size=(2, 1, 32, 32)) > 0.8).astype(np.float32))
        presence = Tensor(np.ones(2, dtype=np.float32))

        def one_step(m):
            opt = Adam(m.params, lr=1e-2)
            outputs = m.forward_branches(image, mode="train", rng=np.random.default_rng(0))
            total, _ = supervised_loss(outputs, mask, presence, LossWeights())
            backward(total)
            opt.step()
            return m

        embedded = one_step(UNetSharp(DESK, cgm=False, seed=42))
        isolated = one_step(isolated_model(DESK, 2, cgm=False, seed=42))
        shared = [n for n in isolated.params.names() if n in embedded.params]
        assert shared
        diffs = [
            float(np.abs(isolated.params[n].data - embedded.params[n].data).max()) for n in shared
        ]
        assert max(diffs) > 0.0
