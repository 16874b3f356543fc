"""Inference-time pruning: extract the sub-model of nodes {I+J <= level}.

Because no edge runs from a pruned node into a retained one (the cut-set
property of the triangular grid), the retained computation is identical to
the full model's, and pruned inference is bitwise equal to the full model's
corresponding branch output.
"""

from __future__ import annotations

from .errors import ShapeError
from .grid import ArchConfig, ArchGraph, node_name, sub_config
from .supervision import BranchSpec, UNetSharp, inference_output
from .tensor import Tensor

PRUNE_LEVELS = (1, 2, 3, 4)


def _check_level(depth: int, level: int) -> None:
    if not 1 <= level <= depth - 1:
        raise ValueError(f"prune level must be in [1, {depth - 1}], got {level}")


def retained_graph(graph: ArchGraph, level: int) -> ArchGraph:
    """Sub-graph of nodes with I+J <= level; asserts the cut-set property."""
    _check_level(graph.config.depth, level)
    kept = tuple(spec for spec in graph.nodes if sum(spec.node) <= level)
    kept_ids = {spec.node for spec in kept}
    for spec in kept:
        for e in spec.edges:
            if e.src is not None and e.src not in kept_ids:
                raise ShapeError(f"cut-set violation: pruned node {e.src} feeds retained {spec.node}")
    return ArchGraph(graph.config, kept)


def retained_branches(branches: list[BranchSpec], depth: int, level: int) -> list[BranchSpec]:
    """Below the top level only the row-0 branches (0,1)..(0,level) survive;
    at the top level pruning is the identity."""
    _check_level(depth, level)
    if level == depth - 1:
        return list(branches)
    return [b for b in branches if b.family == "in" and b.node[1] <= level]


def output_branch_name(depth: int, level: int) -> str:
    return node_name((0, level), depth)


def prune(model: UNetSharp, level: int) -> UNetSharp:
    """View of the model restricted to {I+J <= level}; parameters alias the
    parent store (no weights are copied or modified)."""
    _check_level(model.config.depth, level)
    graph = retained_graph(model.graph, level)
    branches = retained_branches(model.branches, model.config.depth, level)
    pruned = UNetSharp(
        model.config,
        cgm=model.cgm,
        families=model.families,
        _graph=graph,
        _branches=branches,
        _params=model.params.subset(_names_for(model, graph, branches)),
    )
    return pruned


def _names_for(model: UNetSharp, graph: ArchGraph, branches: list[BranchSpec]) -> list[str]:
    from .grid import grid_param_specs
    from .supervision import branch_param_specs

    specs = grid_param_specs(graph) + branch_param_specs(branches, model.config, model.cgm)
    return [name for name, _, _ in specs]


def pruned_inference(model: UNetSharp, image: Tensor) -> Tensor:
    """Gated probability map of the model's output branch (0, level)."""
    in_cols = [b.node[1] for b in model.branches if b.family == "in"]
    if not in_cols:
        raise ValueError("model has no full-resolution output branch")
    out_branch = node_name((0, max(in_cols)), model.config.depth)
    outputs = model.forward_branches(image, mode="eval")
    return inference_output(outputs, mode="fast", branch=out_branch)


def isolated_model(config: ArchConfig, level: int, cgm: bool = True, seed: int = 0) -> UNetSharp:
    """Standalone sub-grid for isolated training: only the row-0 branches
    (0,1)..(0,level) are supervised; deeper rows simply do not exist."""
    _check_level(config.depth, level)
    cfg = sub_config(config, level + 1)
    model = UNetSharp(cfg, cgm=cgm, families=("in",), seed=seed)
    return model


def train_isolated(config: ArchConfig, level: int, dataset, train_config, loss_weights=None, out_dir=None):
    """Build the pruned grid standalone and train it to completion."""
    from .train import train_model

    model = isolated_model(config, level, cgm=train_config.cgm, seed=train_config.seed)
    result = train_model(model, dataset, train_config, loss_weights=loss_weights, out_dir=out_dir)
    return model, result
