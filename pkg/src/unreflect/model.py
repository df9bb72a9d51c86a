"""Full separation network: estimator + prompt + reversible encoder + decoders.

Also houses the memory-style gradient path that rebuilds earlier column
pyramids from later ones instead of storing them, then replays each column
locally to accumulate exactly the gradients the stored-activation path
would produce (up to float32 reconstruction drift).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hdec import HierarchyDecoder, LayerPair
from .losses import FeatureExtractor, LossWeights, content_loss, perceptual_loss, total_loss
from .mcre import Mcre, McreConfig, PyramidState
from .nn import Module
from .rng import DEFAULT_SEED, SplitMix64
from .tapg import Prompt, PromptMlp, RateEstimator, apply_rate_correction
from .tensor import Tensor, mul, no_grad, sum_all


@dataclass
class ForwardResult:
    pairs: list[LayerPair]  # one per column; the last is the output
    rate: Tensor | None  # Bx6 estimator output (pre-detach), None if unused
    net_input: Tensor  # image actually fed to the encoder (post adjustment)
    pyramids: list[PyramidState]


class SeparationNet(Module):
    """Everything trainable, built from one seeded stream."""

    def __init__(self, cfg: McreConfig, seed: int = DEFAULT_SEED, dtype=np.float32):
        rng = SplitMix64(seed)
        self.cfg = cfg
        self.estimator = RateEstimator(rng, dtype)
        self.prompt_mlp = PromptMlp(cfg.base_channels, rng, dtype=dtype)
        self.mcre = Mcre(cfg, rng, dtype)
        self.decoders = [HierarchyDecoder(cfg, i, rng, dtype) for i in range(1, cfg.num_columns + 1)]
        self.dtype = dtype

    def _prepare(self, image: Tensor, use_prompt: bool, adjust_input: bool):
        """Rate estimate, optional input correction, optional prompt.

        The prompt consumes the rate as data (detached); during stage two
        the estimator is frozen anyway, and gradients reach the MLP only.
        """
        rate = None
        if use_prompt or adjust_input:
            rate = self.estimator(image)
        net_input = image
        if adjust_input:
            fixed = np.stack([
                apply_rate_correction(image.data[s], rate.data[s])
                for s in range(image.shape[0])
            ])
            net_input = Tensor(fixed.astype(image.data.dtype))
        prompt = Prompt(self.prompt_mlp(rate.detach())) if use_prompt else None
        return rate, net_input, prompt

    def forward(self, image: Tensor, use_prompt: bool = True, adjust_input: bool = False) -> ForwardResult:
        rate, net_input, prompt = self._prepare(image, use_prompt, adjust_input)
        pyramids = self.mcre.encode(net_input, prompt)
        pairs = [dec.decode(pyr, net_input) for dec, pyr in zip(self.decoders, pyramids)]
        return ForwardResult(pairs=pairs, rate=rate, net_input=net_input, pyramids=pyramids)

    def project_scales(self) -> None:
        self.mcre.project_scales()

    def estimator_parameters(self):
        return self.estimator.parameters()

    def main_parameters(self):
        """Everything except the rate estimator (the stage-two training set)."""
        skip = {id(p) for p in self.estimator.parameters()}
        return [p for p in self.parameters() if id(p) not in skip]


def compute_loss(model: SeparationNet, extractor: FeatureExtractor, image: Tensor,
                 trans: Tensor, refl: Tensor, weights: LossWeights,
                 use_prompt: bool = True, adjust_input: bool = False):
    """Full-graph loss; returns (scalar loss tensor, forward result)."""
    out = model.forward(image, use_prompt=use_prompt, adjust_input=adjust_input)
    loss = total_loss(out.pairs, trans, refl, weights, extractor)
    return loss, out


def _column_objective(model, extractor, col_index, emb_leaf, prev_leaves, net_input,
                      trans, refl, weights, carry):
    """Replayed column loss plus inner products seeding the downstream adjoint."""
    cur = model.mcre.column_forward(col_index, emb_leaf, prev_leaves)
    pair = model.decoders[col_index - 1].decode(PyramidState(cur), net_input)
    ncols = model.cfg.num_columns
    term = content_loss(pair.t_hat, trans, pair.r_hat, refl, weights)
    if weights.w:
        term = term + perceptual_loss(pair.t_hat, trans, extractor, weights.omega_j) * weights.w
    obj = term * (1.0 / ncols)
    col_loss = obj.item()
    for f, g in zip(cur, carry):
        if g is not None:
            obj = obj + sum_all(mul(f, Tensor(g)))
    return obj, col_loss


def compute_loss_recomputed(model: SeparationNet, extractor: FeatureExtractor, image: Tensor,
                            trans: Tensor, refl: Tensor, weights: LossWeights,
                            use_prompt: bool = True, adjust_input: bool = False) -> float:
    """Accumulate parameter gradients without storing intermediate pyramids.

    Walks columns last-to-first, reconstructing each predecessor pyramid via
    the reversible connections, replaying one column at a time under grad,
    and threading the adjoint through leaf tensors. Returns the loss value.
    """
    ncols = model.cfg.num_columns
    with no_grad():
        rate, net_input, prompt = model._prepare(image, use_prompt, adjust_input)
        emb = model.mcre.modulated_embedding(net_input, prompt)
        prev = model.mcre.phe(net_input).features
        for i in range(1, ncols + 1):
            prev = model.mcre.column_forward(i, emb, prev)
        current = prev  # only the last pyramid is retained

    carry: list[np.ndarray | None] = [None] * model.cfg.num_levels
    g_emb = np.zeros_like(emb.data)
    loss_value = 0.0
    net_const = net_input.detach()
    for i in range(ncols, 0, -1):
        prev_vals = model.mcre.reconstruct_previous(i, current, emb).features
        prev_leaves = [Tensor(f.data, requires_grad=True) for f in prev_vals]
        emb_leaf = Tensor(emb.data, requires_grad=True)
        obj, col_loss = _column_objective(
            model, extractor, i, emb_leaf, prev_leaves, net_const, trans, refl, weights, carry
        )
        obj.backward()
        loss_value += col_loss
        carry = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
                 for leaf in prev_leaves]
        if emb_leaf.grad is not None:
            g_emb += emb_leaf.grad
        current = prev_vals

    # tail of the graph: hierarchy ladder, then embedding + prompt
    phe_out = model.mcre.phe(net_const).features
    obj = None
    for f, g in zip(phe_out, carry):
        term = sum_all(mul(f, Tensor(g)))
        obj = term if obj is None else obj + term
    obj.backward()

    prompt_graph = Prompt(model.prompt_mlp(rate.detach())) if use_prompt else None
    emb_graph = model.mcre.modulated_embedding(net_const, prompt_graph)
    sum_all(mul(emb_graph, Tensor(g_emb))).backward()
    return loss_value
