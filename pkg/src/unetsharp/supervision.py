"""Deep-supervision branches, classification-guided gating, and the model.

Eight branches hang off the depth-5 grid: the four full-resolution row-0
branches (1x1 heads, compared against the full-resolution mask — these are
what make pruning possible) and the four anti-diagonal branches (3x3 heads,
compared against max-pool-downscaled masks). Every branch also carries a
presence classifier whose hard {0,1} gate multiplies the branch's
probability map at inference, suppressing false positives on empty images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ShapeError
from .grid import ArchConfig, ArchGraph, NodeId, build_grid, forward, grid_param_specs, node_name, register_params
from .losses import LossReport, LossWeights, bce_loss, mixed_seg_loss
from .params import ParamStore
from .tensor import Tensor, stack_mean

CGM_DROPOUT = 0.5
CGM_WEIGHT_DEFAULT = 0.25
FAMILIES = ("in", "de")


@dataclass(frozen=True)
class BranchSpec:
    """One supervised branch: its source node, loss family, head geometry,
    ground-truth scale, and which classifier variant gates it."""

    name: str
    node: NodeId
    family: str  # "in": full-resolution pruning branches; "de": hierarchical branches
    head_kernel: int  # 1 for the in family, 3 for the de family
    gt_scale: int  # 1, or 2^I for de branches
    cgm_variant: str  # "full" | "simplified"


def attach_heads(graph: ArchGraph) -> list[BranchSpec]:
    """Enumerate the supervision branches of a grid.

    The "in" family sits on row 0 at columns 1..depth-1; the "de" family on
    the anti-diagonal at rows 1..depth-1. The two coarsest de branches get
    the full classifier variant, everything else the simplified one.
    """
    depth = graph.config.depth
    branches: list[BranchSpec] = []
    for j in range(1, depth):
        node = (0, j)
        branches.append(
            BranchSpec(node_name(node, depth), node, "in", head_kernel=1, gt_scale=1,
                       cgm_variant="simplified")
        )
    for i in range(1, depth):
        node = (i, depth - 1 - i)
        variant = "full" if i >= depth - 2 else "simplified"
        branches.append(
            BranchSpec(node_name(node, depth), node, "de", head_kernel=3, gt_scale=2**i,
                       cgm_variant=variant)
        )
    return branches


def branch_param_specs(branches: list[BranchSpec], config: ArchConfig,
                       with_cgm: bool) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, kind) for head convolutions and classifier stacks."""
    specs: list[tuple[str, tuple[int, ...], str]] = []
    for b in branches:
        c = config.channels[b.node[0]]
        k = b.head_kernel
        specs.append((f"head_{b.name}.conv.w", (1, c, k, k), "weight"))
        specs.append((f"head_{b.name}.conv.b", (1,), "bias"))
    if not with_cgm:
        return specs
    for b in branches:
        c = config.channels[b.node[0]]
        pooled = 2 * c  # avg-pool and max-pool concatenated
        base = f"cgm_{b.name}"
        specs.append((f"{base}.bn1.gamma", (pooled,), "bn_gamma"))
        specs.append((f"{base}.bn1.beta", (pooled,), "bn_beta"))
        specs.append((f"{base}.bn1.mean", (pooled,), "bn_mean"))
        specs.append((f"{base}.bn1.var", (pooled,), "bn_var"))
        if b.cgm_variant == "full":
            hidden = max(c // 4, 2)
            specs.append((f"{base}.lin1.w", (pooled, hidden), "weight"))
            specs.append((f"{base}.lin1.b", (hidden,), "bias"))
            specs.append((f"{base}.bn2.gamma", (hidden,), "bn_gamma"))
            specs.append((f"{base}.bn2.beta", (hidden,), "bn_beta"))
            specs.append((f"{base}.bn2.mean", (hidden,), "bn_mean"))
            specs.append((f"{base}.bn2.var", (hidden,), "bn_var"))
            specs.append((f"{base}.lin2.w", (hidden, 2), "weight"))
            specs.append((f"{base}.lin2.b", (2,), "bias"))
        else:
            specs.append((f"{base}.lin1.w", (pooled, 2), "weight"))
            specs.append((f"{base}.lin1.b", (2,), "bias"))
    return specs


def cgm_forward(feature: Tensor, variant: str, params: ParamStore, prefix: str,
                mode: str = "train", rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Presence classifier over a node's feature map.

    Pools the map to 1x1 by mean and by max, concatenates, and runs the
    norm-dropout-linear stack of the requested variant. Returns the softmax
    probability pair and the hard argmax gate (1 means "object present").
    """
    pooled = ops.concat_channels([ops.adaptive_avg_pool_1x1(feature), ops.adaptive_max_pool_1x1(feature)])
    x = ops.flatten(pooled)

    def bn(x, tag):
        return ops.batch_norm(
            x,
            params[f"{prefix}.{tag}.gamma"], params[f"{prefix}.{tag}.beta"],
            params[f"{prefix}.{tag}.mean"], params[f"{prefix}.{tag}.var"],
            mode=mode,
        )

    x = bn(x, "bn1")
    x = ops.dropout(x, CGM_DROPOUT, mode, rng)
    x = ops.linear(x, params[f"{prefix}.lin1.w"], params[f"{prefix}.lin1.b"])
    if variant == "full":
        x = ops.relu(x)
        x = bn(x, "bn2")
        x = ops.dropout(x, CGM_DROPOUT, mode, rng)
        x = ops.linear(x, params[f"{prefix}.lin2.w"], params[f"{prefix}.lin2.b"])
    probs = ops.softmax(x, axis=1)
    gate = Tensor(np.argmax(probs.data, axis=1).astype(probs.dtype))
    return probs, gate


def apply_gate(seg_map: Tensor, gate: Tensor) -> Tensor:
    """Multiply each batch item's map by its {0,1} gate."""
    return ops.scale_rows(seg_map, gate)


def downscale_gt(mask: Tensor, factor: int) -> Tensor:
    """Repeated 2x2 max-pooling of a binary mask; output stays binary."""
    if factor not in (2, 4, 8, 16):
        raise ValueError(f"downscale factor must be one of (2, 4, 8, 16), got {factor}")
    out = mask
    steps = int(np.log2(factor))
    for _ in range(steps):
        out = ops.max_pool2d(out)
    return out


@dataclass
class BranchOutputs:
    """Per-branch logit maps, classifier probabilities, and hard gates from
    one forward pass."""

    specs: tuple[BranchSpec, ...]
    logits: dict[str, Tensor]
    cgm_probs: dict[str, Tensor] = field(default_factory=dict)
    gates: dict[str, Tensor] = field(default_factory=dict)

    def in_branches(self) -> list[BranchSpec]:
        return [b for b in self.specs if b.family == "in"]

    def gated_probability(self, name: str) -> Tensor:
        prob = ops.sigmoid(self.logits[name])
        return apply_gate(prob, self.gates[name])


class UNetSharp:
    """The full grid plus supervision heads and presence classifiers,
    owning one parameter store."""

    def __init__(
        self,
        config: ArchConfig,
        cgm: bool = True,
        families: tuple[str, ...] = FAMILIES,
        seed: int = 0,
        dtype=np.float32,
        _graph: ArchGraph | None = None,
        _branches: list[BranchSpec] | None = None,
        _params: ParamStore | None = None,
    ):
        for fam in families:
            if fam not in FAMILIES:
                raise ValueError(f"unknown branch family {fam!r}")
        self.config = config
        self.cgm = cgm
        self.families = tuple(families)
        self.graph = _graph if _graph is not None else build_grid(config)
        if _branches is not None:
            self.branches = list(_branches)
        else:
            self.branches = [b for b in attach_heads(self.graph) if b.family in self.families]
        if _params is not None:
            self.params = _params
        else:
            from .optim import init_weights  # deferred: optim depends on params only

            self.params = ParamStore()
            register_params(self.params, self.param_specs(), dtype=dtype)
            init_weights(self.params, np.random.default_rng(seed))

    def param_specs(self) -> list[tuple[str, tuple[int, ...], str]]:
        return grid_param_specs(self.graph) + branch_param_specs(self.branches, self.config, self.cgm)

    def param_names(self) -> list[str]:
        return [name for name, _, _ in self.param_specs()]

    def branch(self, name: str) -> BranchSpec:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(f"no branch named {name!r}; have {[b.name for b in self.branches]}")

    def forward_nodes(self, image: Tensor, mode: str = "train") -> dict[NodeId, Tensor]:
        return forward(self.graph, self.params, image, mode=mode)

    def forward_branches(self, image: Tensor, mode: str = "train",
                         rng: np.random.Generator | None = None) -> BranchOutputs:
        nodes = self.forward_nodes(image, mode=mode)
        n = image.shape[0]
        logits: dict[str, Tensor] = {}
        probs: dict[str, Tensor] = {}
        gates: dict[str, Tensor] = {}
        ones = Tensor(np.ones(n, dtype=image.dtype))
        for b in self.branches:
            feat = nodes[b.node]
            logits[b.name] = ops.conv2d(
                feat, self.params[f"head_{b.name}.conv.w"], self.params[f"head_{b.name}.conv.b"]
            )
            if self.cgm:
                p, g = cgm_forward(feat, b.cgm_variant, self.params, f"cgm_{b.name}", mode=mode, rng=rng)
                probs[b.name], gates[b.name] = p, g
            else:
                gates[b.name] = ones
        return BranchOutputs(tuple(self.branches), logits, probs, gates)


def supervised_loss(
    outputs: BranchOutputs,
    mask: Tensor,
    presence: Tensor,
    weights: LossWeights | None = None,
    cgm_weight: float = CGM_WEIGHT_DEFAULT,
) -> tuple[Tensor, LossReport]:
    """Mean mixed loss over all branches plus the weighted mean presence BCE.

    "in" branches compare against the full-resolution mask, "de" branches
    against the mask max-pooled down to their scale. Gates never enter the
    loss path (a hard argmax would block gradients); the classifiers learn
    from their BCE term alone.
    """
    if weights is None:
        weights = LossWeights()
    if not outputs.specs:
        raise ValueError("no branches to supervise")
    reports: dict[str, LossReport] = {}
    gts: dict[int, Tensor] = {1: mask}
    for b in outputs.specs:
        if b.name not in outputs.logits:
            raise ValueError(f"branch {b.name!r} missing from outputs")
        if b.gt_scale not in gts:
            gts[b.gt_scale] = downscale_gt(mask, b.gt_scale)
        reports[b.name] = mixed_seg_loss(outputs.logits[b.name], gts[b.gt_scale], weights)
    seg_total = stack_mean([reports[b.name].total for b in outputs.specs])
    total = seg_total
    if outputs.cgm_probs and cgm_weight != 0.0:
        bce = stack_mean([bce_loss(outputs.cgm_probs[b.name], presence) for b in outputs.specs])
        total = seg_total + cgm_weight * bce
    agg = LossReport(
        total=total,
        focal=stack_mean([reports[b.name].focal for b in outputs.specs]),
        dice=stack_mean([reports[b.name].dice for b in outputs.specs]),
        lovasz=stack_mean([reports[b.name].lovasz for b in outputs.specs]),
        branches=reports,
    )
    return total, agg


def inference_output(outputs: BranchOutputs, mode: str = "accurate",
                     branch: str | None = None) -> Tensor:
    """Probability map for prediction.

    Accurate mode averages the gated sigmoid maps of the full-resolution
    "in"-family branches; fast mode returns one chosen branch's gated map.
    """
    in_specs = outputs.in_branches()
    if not in_specs:
        raise ValueError("model has no full-resolution branches to predict from")
    if mode == "accurate":
        return stack_mean([outputs.gated_probability(b.name) for b in in_specs])
    if mode == "fast":
        if branch is None:
            raise ValueError("fast mode needs a branch (validated on the validation split)")
        names = [b.name for b in in_specs]
        if branch not in names:
            raise ValueError(f"fast mode branch must be a full-resolution branch, one of {names}")
        return outputs.gated_probability(branch)
    raise ValueError(f"inference mode must be 'accurate' or 'fast', got {mode!r}")


def param_count(config: ArchConfig, level: int | None = None,
                include_heads: bool = True, include_cgm: bool = True) -> int:
    """Exact learnable-scalar count of the (optionally pruned) model."""
    from .pruning import retained_branches, retained_graph  # deferred: pruning builds on this module

    graph = build_grid(config)
    branches = attach_heads(graph)
    if level is not None:
        graph = retained_graph(graph, level)
        branches = retained_branches(branches, config.depth, level)
    specs = grid_param_specs(graph)
    if include_heads or include_cgm:
        bspecs = branch_param_specs(branches, config, with_cgm=include_cgm)
        if not include_heads:
            bspecs = [s for s in bspecs if not s[0].startswith("head_")]
        specs = specs + bspecs
    learnable = ("weight", "bias", "bn_gamma", "bn_beta")
    return sum(int(np.prod(shape)) for _, shape, kind in specs if kind in learnable)
