"""The grid of compute nodes with dense and full-scale skip connections.

Nodes live on the triangular lattice {(I, J): I + J <= depth-1}. Row I fixes
the resolution (1/2^I of the input) and the channel width; column J counts
depth along the row. The first column is the encoder chain; each node with
J >= 1 consumes every earlier node of its row (dense interconnections), the
2x upsampling of its lower-right neighbour, and, for J > 1, one rescaled
feature map from every deeper node on its anti-diagonal (full-scale
intraconnections), each passed through its own conv-norm-relu stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .params import ParamStore
from .tensor import Tensor

NodeId = tuple[int, int]

EDGE_KINDS = ("input", "pool", "dense", "up", "fullscale")


def node_role(node: NodeId, depth: int) -> str:
    """'en' on the encoder column, 'de' on the anti-diagonal, 'in' between."""
    i, j = node
    if j == 0:
        return "en"
    if i + j == depth - 1:
        return "de"
    return "in"


def node_name(node: NodeId, depth: int) -> str:
    return f"{node_role(node, depth)}_{node[0]}_{node[1]}"


@dataclass(frozen=True)
class ArchConfig:
    """Static description of the grid: depth, channel plan, block shape."""

    depth: int = 5
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    convs_per_node: int = 2
    upsample_mode: str = "bilinear"
    input_channels: int = 1
    input_size: int = 64
    fullscale_channels: int | None = None  # None -> channels[0]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if len(self.channels) != self.depth:
            raise ConfigError(
                f"channels must list one width per level: got {len(self.channels)} for depth {self.depth}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel widths must be positive")
        if self.convs_per_node < 1:
            raise ConfigError(f"convs_per_node must be >= 1, got {self.convs_per_node}")
        if self.upsample_mode not in ops.UPSAMPLE_MODES:
            raise ConfigError(f"upsample_mode must be one of {ops.UPSAMPLE_MODES}")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")
        divisor = 2 ** (self.depth - 1)
        if self.input_size < divisor or self.input_size % divisor:
            raise ConfigError(
                f"input_size must be a positive multiple of {divisor} for depth {self.depth}"
            )

    @property
    def fs_channels(self) -> int:
        return self.channels[0] if self.fullscale_channels is None else self.fullscale_channels


@dataclass(frozen=True)
class Edge:
    """One input of a node: where it comes from and how it is transformed."""

    src: NodeId | None  # None for the raw image input
    kind: str  # one of EDGE_KINDS
    factor: int  # resampling factor (1 where no resampling happens)
    out_channels: int  # channels this edge contributes to the concat

    def label(self) -> str:
        if self.kind == "dense":
            return "dense"
        if self.kind == "up":
            return "up x2"
        if self.kind == "fullscale":
            return f"fullscale f(u x{self.factor})"
        if self.kind == "pool":
            return "maxpool /2"
        return "input"


@dataclass(frozen=True)
class NodeSpec:
    node: NodeId
    edges: tuple[Edge, ...]
    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class ArchGraph:
    """Immutable grid description; `nodes` is in evaluation order
    (column-major: J ascending, then I ascending)."""

    config: ArchConfig
    nodes: tuple[NodeSpec, ...]
    by_id: dict[NodeId, NodeSpec] = field(repr=False, hash=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "by_id", {spec.node: spec for spec in self.nodes})

    def node_ids(self) -> list[NodeId]:
        return [spec.node for spec in self.nodes]

    def fan_in(self, node: NodeId) -> int:
        return len(self.by_id[node].edges)


def fullscale_sources(node: NodeId) -> list[tuple[NodeId, int]]:
    """Anti-diagonal sources of a J>1 node with their upsampling factors.

    Source (I+J-j, j) for j = 0..J-2 sits i+j = I+J levels away on the
    anti-diagonal and is brought to row I's scale by a 2^(J-j) upsample.
    """
    i, j = node
    return [((i + j - jj, jj), 2 ** (j - jj)) for jj in range(j - 1)]


def build_grid(config: ArchConfig) -> ArchGraph:
    """Construct the node matrix with its dense/up/full-scale edge lists."""
    ch = config.channels
    fs_ch = config.fs_channels
    specs: list[NodeSpec] = []
    defined: set[NodeId] = set()
    for j in range(config.depth):
        for i in range(config.depth - j):
            node = (i, j)
            edges: list[Edge] = []
            if j == 0:
                if i == 0:
                    edges.append(Edge(None, "input", 1, config.input_channels))
                else:
                    edges.append(Edge((i - 1, 0), "pool", 2, ch[i - 1]))
            else:
                for jj in range(j):
                    edges.append(Edge((i, jj), "dense", 1, ch[i]))
                edges.append(Edge((i + 1, j - 1), "up", 2, ch[i + 1]))
                for src, factor in fullscale_sources(node):
                    edges.append(Edge(src, "fullscale", factor, fs_ch))
            for e in edges:
                if e.src is not None and e.src not in defined:
                    raise ConfigError(f"edge {e.src} -> {node} references an undefined node")
            in_channels = sum(e.out_channels for e in edges)
            specs.append(NodeSpec(node, tuple(edges), in_channels, ch[i]))
            defined.add(node)
    return ArchGraph(config, tuple(specs))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def grid_param_specs(graph: ArchGraph) -> list[tuple[str, tuple[int, ...], str]]:
    """Enumerate (name, shape, kind) for every grid parameter and buffer.

    Single source of truth shared by model construction and parameter
    accounting; insertion order is the canonical checkpoint order.
    """
    cfg = graph.config
    specs: list[tuple[str, tuple[int, ...], str]] = []

    def add_conv_bn(prefix: str, cin: int, cout: int, k: int):
        specs.append((f"{prefix}.conv.w", (cout, cin, k, k), "weight"))
        specs.append((f"{prefix}.conv.b", (cout,), "bias"))
        specs.append((f"{prefix}.bn.gamma", (cout,), "bn_gamma"))
        specs.append((f"{prefix}.bn.beta", (cout,), "bn_beta"))
        specs.append((f"{prefix}.bn.mean", (cout,), "bn_mean"))
        specs.append((f"{prefix}.bn.var", (cout,), "bn_var"))

    for spec in graph.nodes:
        i, j = spec.node
        base = f"node_{i}_{j}"
        for e in spec.edges:
            if e.kind == "fullscale":
                si, sj = e.src
                add_conv_bn(f"{base}.from_{si}_{sj}", cfg.channels[si], e.out_channels, 3)
        cin = spec.in_channels
        for s in range(1, cfg.convs_per_node + 1):
            add_conv_bn(f"{base}.f{s}", cin, spec.out_channels, 3)
            cin = spec.out_channels
    return specs


def register_params(store: ParamStore, specs, dtype=np.float32) -> None:
    """Allocate zero-filled tensors for a spec list (values come from init)."""
    for name, shape, kind in specs:
        init = np.ones(shape, dtype=dtype) if kind in ("bn_gamma", "bn_var") else np.zeros(shape, dtype=dtype)
        store.add(name, Tensor(init), kind)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _f_stage(x: Tensor, params: ParamStore, prefix: str, mode: str) -> Tensor:
    y = ops.conv2d(x, params[f"{prefix}.conv.w"], params[f"{prefix}.conv.b"])
    y = ops.batch_norm(
        y,
        params[f"{prefix}.bn.gamma"],
        params[f"{prefix}.bn.beta"],
        params[f"{prefix}.bn.mean"],
        params[f"{prefix}.bn.var"],
        mode=mode,
    )
    return ops.relu(y)


def forward(graph: ArchGraph, params: ParamStore, image: Tensor, mode: str = "train") -> dict[NodeId, Tensor]:
    """Execute the grid; returns every node output keyed by (I, J).

    Node (I, J) produces shape (N, channels[I], H/2^I, W/2^I).
    """
    cfg = graph.config
    if image.ndim != 4:
        raise ShapeError(f"grid forward expects an NCHW image, got shape {image.shape}")
    n, c, h, w = image.shape
    if c != cfg.input_channels:
        raise ShapeError(f"image has {c} channels, config expects {cfg.input_channels}")
    if h != cfg.input_size or w != cfg.input_size:
        raise ShapeError(f"image extents {h}x{w} do not match config input_size {cfg.input_size}")

    out: dict[NodeId, Tensor] = {}
    for spec in graph.nodes:
        i, j = spec.node
        base = f"node_{i}_{j}"
        inputs: list[Tensor] = []
        for e in spec.edges:
            if e.kind == "input":
                t = image
            elif e.kind == "pool":
                t = ops.max_pool2d(out[e.src])
            elif e.kind == "dense":
                t = out[e.src]
            elif e.kind == "up":
                t = ops.upsample(out[e.src], 2, mode=cfg.upsample_mode)
            else:  # fullscale: one conv-norm-relu stage after upsampling
                si, sj = e.src
                t = ops.upsample(out[e.src], e.factor, mode=cfg.upsample_mode)
                t = _f_stage(t, params, f"{base}.from_{si}_{sj}", mode)
            expect = (h // 2**i, w // 2**i)
            if t.shape[2:] != expect:
                raise ShapeError(
                    f"edge {e.src} -> {spec.node} ({e.kind}) delivered extents "
                    f"{t.shape[2:]} where {expect} was expected"
                )
            inputs.append(t)
        x = ops.concat_channels(inputs)
        if x.shape[1] != spec.in_channels:
            raise ShapeError(
                f"node {spec.node} concatenated {x.shape[1]} channels, expected {spec.in_channels}"
            )
        for s in range(1, cfg.convs_per_node + 1):
            x = _f_stage(x, params, f"{base}.f{s}", mode)
        out[spec.node] = x
    return out


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_graph(graph: ArchGraph, fmt: str = "dot") -> str:
    """Deterministic DOT or JSON rendering of nodes and edges."""
    cfg = graph.config
    if fmt == "json":
        nodes = [
            {
                "i": spec.node[0],
                "j": spec.node[1],
                "name": node_name(spec.node, cfg.depth),
                "role": node_role(spec.node, cfg.depth),
                "channels": spec.out_channels,
                "scale": 2 ** spec.node[0],
            }
            for spec in graph.nodes
        ]
        edges = [
            {
                "src": None if e.src is None else list(e.src),
                "dst": list(spec.node),
                "transform": e.kind,
                "factor": e.factor,
                "channels": e.out_channels,
            }
            for spec in graph.nodes
            for e in spec.edges
        ]
        return json.dumps({"depth": cfg.depth, "nodes": nodes, "edges": edges}, indent=2)
    if fmt == "dot":
        lines = ["digraph grid {", "  rankdir=LR;"]
        for spec in graph.nodes:
            i, j = spec.node
            nm = node_name(spec.node, cfg.depth)
            lines.append(
                f'  "{nm}" [label="{nm}\\nch={spec.out_channels} scale=1/{2 ** i}"];'
            )
        for spec in graph.nodes:
            dst = node_name(spec.node, cfg.depth)
            for e in spec.edges:
                if e.src is None:
                    continue
                src = node_name(e.src, cfg.depth)
                lines.append(f'  "{src}" -> "{dst}" [label="{e.label()}"];')
        lines.append("}")
        return "\n".join(lines)
    raise ValueError(f"unknown export format {fmt!r}; use 'dot' or 'json'")


def sub_config(config: ArchConfig, depth: int) -> ArchConfig:
    """Config of the grid truncated to `depth` levels (used by pruning)."""
    if not 1 <= depth <= config.depth:
        raise ConfigError(f"sub-grid depth must be in [1, {config.depth}], got {depth}")
    return replace(config, depth=depth, channels=config.channels[:depth])
