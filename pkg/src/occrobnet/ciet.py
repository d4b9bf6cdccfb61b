"""Contextual-attention refinement block.

Keys are contextualised by a 3x3 convolution over their neighbourhood; the
result is concatenated with the query and passed through two 1x1
convolutions (ReLU after the first only) to give an attention map.  The
values are then reweighted position by position with the channel-softmax of
that map, and the block adds its (projected) output back onto the input.
Queries, keys and values are all the input map itself.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor


def contextualize_keys(features: Tensor, w_key: Tensor) -> Tensor:
    """Static context: same-padded 3x3 convolution of the keys."""
    return T.conv2d(features, w_key)


def fuse_attention(k1: Tensor, q: Tensor, w_theta: Tensor, w_delta: Tensor) -> Tensor:
    """A = conv1x1(relu(conv1x1([K1, Q]; W_theta)); W_delta)."""
    if w_theta.shape[2] != k1.shape[-1] + q.shape[-1]:
        raise DimensionError(
            f"W_theta expects {w_theta.shape[2]} input channels, [K1, Q] has {k1.shape[-1] + q.shape[-1]}"
        )
    hidden = T.relu(T.conv2d(T.concat_channels(k1, q), w_theta))
    return T.conv2d(hidden, w_delta)


def aggregate(values: Tensor, attention: Tensor) -> Tensor:
    """Per-position reweighting of V by the channel-softmax of A."""
    if values.shape != attention.shape:
        raise DimensionError(f"aggregate needs matching shapes, got {values.shape} and {attention.shape}")
    return values * T.softmax(attention, axis=-1)


class CIET(Module):
    def __init__(self, rng: np.random.Generator, channels: int):
        self.key = Conv2d(rng, channels, channels, 3, bias=False)
        self.theta = Conv2d(rng, 2 * channels, channels, 1, bias=False)
        self.delta = Conv2d(rng, channels, channels, 1, bias=False)
        # zero weights here make the whole block an exact identity
        self.out = Conv2d(rng, channels, channels, 1, bias=False)

    def attention(self, features: Tensor) -> Tensor:
        k1 = contextualize_keys(features, self.key.weight)
        return fuse_attention(k1, features, self.theta.weight, self.delta.weight)

    def contextual(self, features: Tensor) -> Tensor:
        return aggregate(features, self.attention(features))

    def refine(self, features: Tensor) -> Tensor:
        """Residual refinement; output has the input's shape."""
        return features + T.conv2d(self.contextual(features), self.out.weight)

    __call__ = refine


def ciet_refine(block: CIET, features: Tensor) -> Tensor:
    return block.refine(features)
