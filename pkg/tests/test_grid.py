"""Grid topology oracles, forward shape contracts, export, parameter math."""

import json

import numpy as np
import pytest

from unetsharp import ops
from unetsharp.errors import ConfigError, ShapeError
from unetsharp.grid import (
    ArchConfig,
    build_grid,
    export_graph,
    forward,
    fullscale_sources,
    grid_param_specs,
    node_role,
    register_params,
    sub_config,
)
from unetsharp.optim import init_weights
from unetsharp.params import ParamStore
from unetsharp.tensor import Tensor, no_grad

DEFAULT = ArchConfig(input_size=64)


def enumerate_expected_edges(node, depth):
    """Independent enumeration of a node's inputs, term by term:
    J dense + 1 up + (J-1) full-scale anti-diagonal sources."""
    i, j = node
    if j == 0:
        return [("input", None)] if i == 0 else [("pool", (i - 1, 0))]
    edges = [("dense", (i, jj)) for jj in range(j)]
    edges.append(("up", (i + 1, j - 1)))
    for jj in range(j - 1):
        edges.append(("fullscale", (i + j - jj, jj)))
    return edges


def small_params(graph, seed=0, dtype=np.float32):
    store = ParamStore()
    register_params(store, grid_param_specs(graph), dtype=dtype)
    init_weights(store, np.random.default_rng(seed))
    return store


class TestTopology:
    def test_node_count_depth5(self):
        # lattice points with I+J <= 4: 5+4+3+2+1
        assert len(build_grid(DEFAULT).nodes) == 15

    def test_fan_in_law_exhaustive(self):
        graph = build_grid(DEFAULT)
        for spec in graph.nodes:
            i, j = spec.node
            if j >= 1:
                assert len(spec.edges) == 2 * j, f"node {spec.node}"
            elif i == 0:
                assert len(spec.edges) == 1 and spec.edges[0].kind == "input"
            else:
                assert len(spec.edges) == 1 and spec.edges[0].kind == "pool"

    def test_node_0_2_has_four_inputs(self):
        assert build_grid(DEFAULT).fan_in((0, 2)) == 4

    def test_node_0_4_has_eight_inputs(self):
        assert build_grid(DEFAULT).fan_in((0, 4)) == 8

    def test_column_one_has_two_inputs(self):
        graph = build_grid(DEFAULT)
        for i in range(4):
            assert graph.fan_in((i, 1)) == 2

    def test_node_1_3_sources(self):
        graph = build_grid(DEFAULT)
        spec = graph.by_id[(1, 3)]
        assert len(spec.edges) == 6
        fs = [(e.src, e.factor) for e in spec.edges if e.kind == "fullscale"]
        assert ((4, 0), 8) in fs
        assert ((3, 1), 4) in fs

    def test_edge_enumeration_oracle_full_grid(self):
        graph = build_grid(DEFAULT)
        for spec in graph.nodes:
            expected = enumerate_expected_edges(spec.node, DEFAULT.depth)
            got = [(e.kind, e.src) for e in spec.edges]
            assert got == expected, f"node {spec.node}"

    def test_fullscale_sources_on_antidiagonal_with_power_factors(self):
        graph = build_grid(DEFAULT)
        for spec in graph.nodes:
            i, j = spec.node
            for e in spec.edges:
                if e.kind == "fullscale":
                    si, sj = e.src
                    assert si + sj == i + j, "source must lie on the anti-diagonal"
                    assert e.factor == 2 ** (j - sj)

    def test_evaluation_order_is_topological(self):
        graph = build_grid(DEFAULT)
        seen = set()
        for spec in graph.nodes:
            for e in spec.edges:
                if e.src is not None:
                    assert e.src in seen, f"{e.src} used before definition at {spec.node}"
            seen.add(spec.node)

    def test_concat_channel_totals(self):
        graph = build_grid(DEFAULT)
        for spec in graph.nodes:
            assert spec.in_channels == sum(e.out_channels for e in spec.edges)

    def test_roles(self):
        assert node_role((0, 0), 5) == "en"
        assert node_role((4, 0), 5) == "en"
        assert node_role((0, 4), 5) == "de"
        assert node_role((3, 1), 5) == "de"
        assert node_role((1, 1), 5) == "in"

    def test_fullscale_sources_of_final_node(self):
        assert fullscale_sources((0, 4)) == [((4, 0), 16), ((3, 1), 8), ((2, 2), 4)]

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            ArchConfig(depth=5, channels=(8, 16, 32), input_size=64)
        with pytest.raises(ConfigError):
            ArchConfig(input_size=60)
        with pytest.raises(ConfigError):
            ArchConfig(upsample_mode="cubic", input_size=64)


TINY = ArchConfig(depth=3, channels=(4, 6, 8), input_size=16, input_channels=1)


class TestForward:
    def test_output_shapes_all_nodes(self):
        graph = build_grid(TINY)
        params = small_params(graph)
        image = Tensor(np.random.default_rng(0).normal(size=(2, 1, 16, 16)).astype(np.float32))
        with no_grad():
            outs = forward(graph, params, image, mode="train")
        for (i, j), t in outs.items():
            assert t.shape == (2, TINY.channels[i], 16 // 2**i, 16 // 2**i), f"node {(i, j)}"

    def test_full_grid_shapes(self):
        graph = build_grid(DEFAULT)
        cfg_small = ArchConfig(depth=5, channels=(4, 8, 12, 16, 20), input_size=32)
        graph = build_grid(cfg_small)
        params = small_params(graph)
        image = Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32))
        with no_grad():
            outs = forward(graph, params, image, mode="eval")
        assert outs[(0, 4)].shape == (1, 4, 32, 32)
        assert outs[(4, 0)].shape == (1, 20, 2, 2)

    def test_zero_network_outputs_zero(self):
        graph = build_grid(TINY)
        params = ParamStore()
        register_params(params, grid_param_specs(graph))  # weights/biases zero, bn identity
        image = Tensor(np.random.default_rng(1).normal(size=(2, 1, 16, 16)).astype(np.float32))
        with no_grad():
            outs = forward(graph, params, image, mode="eval")
        for t in outs.values():
            np.testing.assert_array_equal(t.data, 0.0)

    def test_forward_deterministic_bitwise(self):
        graph = build_grid(TINY)
        params = small_params(graph, seed=3)
        image = Tensor(np.random.default_rng(2).normal(size=(1, 1, 16, 16)).astype(np.float32))
        with no_grad():
            a = forward(graph, params, image, mode="eval")
            b = forward(graph, params, image, mode="eval")
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_wrong_input_size_raises(self):
        graph = build_grid(TINY)
        params = small_params(graph)
        with pytest.raises(ShapeError):
            forward(graph, params, Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32)))

    def test_wrong_channel_count_raises(self):
        graph = build_grid(TINY)
        params = small_params(graph)
        with pytest.raises(ShapeError):
            forward(graph, params, Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))


class TestExport:
    def test_json_node_and_edge_counts(self):
        graph = build_grid(DEFAULT)
        doc = json.loads(export_graph(graph, "json"))
        assert len(doc["nodes"]) == 15
        # sum of fan-in: 2J per node with J>=1, 1 per pooled encoder, 1 image input
        expected_edges = sum(2 * j for j in range(1, 5) for _ in range(5 - j)) + 4 + 1
        assert len(doc["edges"]) == expected_edges

    def test_dot_parses_as_graph(self):
        import re

        import networkx as nx

        dot = export_graph(build_grid(DEFAULT), "dot")
        assert dot.startswith("digraph") and dot.rstrip().endswith("}")
        node_re = re.compile(r'^\s*"([^"]+)" \[label="[^"]*"\];$')
        edge_re = re.compile(r'^\s*"([^"]+)" -> "([^"]+)" \[label="[^"]*"\];$')
        g = nx.DiGraph()
        for line in dot.splitlines()[1:-1]:
            if not line.strip() or line.strip().startswith("rankdir"):
                continue
            m = edge_re.match(line)
            if m:
                g.add_edge(m.group(1), m.group(2))
                continue
            m = node_re.match(line)
            assert m, f"unparseable DOT line: {line!r}"
            g.add_node(m.group(1))
        assert g.number_of_nodes() == 15
        assert nx.is_directed_acyclic_graph(g)

    def test_unknown_format_raises(self):
        with pytest.raises(ValueError):
            export_graph(build_grid(DEFAULT), "yaml")

    def test_deterministic_output(self):
        g = build_grid(DEFAULT)
        assert export_graph(g, "dot") == export_graph(g, "dot")
        assert export_graph(g, "json") == export_graph(g, "json")


class TestSubConfig:
    def test_sub_config_matches_filtered_grid(self):
        full = build_grid(DEFAULT)
        small = build_grid(sub_config(DEFAULT, 3))
        kept = {spec.node for spec in full.nodes if sum(spec.node) <= 2}
        assert {spec.node for spec in small.nodes} == kept
        for spec in small.nodes:
            assert spec.edges == full.by_id[spec.node].edges
