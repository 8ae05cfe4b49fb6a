"""Single- and multi-stage temporal convolutional networks for sample-wise
jump classification, with full-sequence training and prediction.

A stage is: 1x1 conv to `num_filters`, then `num_layers` residual blocks
(dilated k=3 conv, dilation 2^l -> ReLU -> 1x1 conv -> residual add), then a
1x1 conv down to the class count. Stages after the first consume the softmax
of the previous stage's logits and refine it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import AdamState, ConvKernel, DimensionError, LossConfig

WEIGHTS_VERSION = 1


@dataclass
class SsTcnConfig:
    num_layers: int = 10
    num_filters: int = 64
    kernel_size: int = 3
    in_channels: int = 6
    num_classes: int = 8

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")

    def receptive_field(self) -> int:
        rf = 1
        for layer in range(self.num_layers):
            rf += (self.kernel_size - 1) * 2**layer
        return rf


@dataclass
class MsTcnConfig:
    num_stages: int = 4
    stage: SsTcnConfig = field(default_factory=SsTcnConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 50
    lr: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")


@dataclass
class StageWeights:
    conv_in: ConvKernel
    blocks: list  # [(dilated ConvKernel, pointwise ConvKernel), ...]
    conv_out: ConvKernel


@dataclass
class ModelWeights:
    config: MsTcnConfig
    stages: list[StageWeights]
    version: int = WEIGHTS_VERSION

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) list in a fixed order; arrays are live views."""
        out = []
        for s, st in enumerate(self.stages):
            out.append((f"stage{s}.conv_in.w", st.conv_in.weights))
            out.append((f"stage{s}.conv_in.b", st.conv_in.bias))
            for l, (dk, pk) in enumerate(st.blocks):
                out.append((f"stage{s}.block{l}.dilated.w", dk.weights))
                out.append((f"stage{s}.block{l}.dilated.b", dk.bias))
                out.append((f"stage{s}.block{l}.pointwise.w", pk.weights))
                out.append((f"stage{s}.block{l}.pointwise.b", pk.bias))
            out.append((f"stage{s}.conv_out.w", st.conv_out.weights))
            out.append((f"stage{s}.conv_out.b", st.conv_out.bias))
        return out

    def params(self) -> list[np.ndarray]:
        return [a for _, a in self.named_params()]


def _init_kernel(rng, k: int, cin: int, cout: int, dilation: int = 1) -> ConvKernel:
    bound = 1.0 / math.sqrt(k * cin)
    w = rng.uniform(-bound, bound, size=(k, cin, cout))
    b = rng.uniform(-bound, bound, size=(cout,))
    return ConvKernel(weights=w, bias=b, dilation=dilation)


def build_mstcn(config: MsTcnConfig, seed: int | None = None) -> ModelWeights:
    """Deterministic uniform +-1/sqrt(fan_in) initialization from seed."""
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    sc = config.stage
    stages = []
    for s in range(config.num_stages):
        din = sc.in_channels if s == 0 else sc.num_classes
        conv_in = _init_kernel(rng, 1, din, sc.num_filters)
        blocks = []
        for l in range(sc.num_layers):
            dk = _init_kernel(rng, sc.kernel_size, sc.num_filters, sc.num_filters,
                              dilation=2**l)
            pk = _init_kernel(rng, 1, sc.num_filters, sc.num_filters)
            blocks.append((dk, pk))
        conv_out = _init_kernel(rng, 1, sc.num_filters, sc.num_classes)
        stages.append(StageWeights(conv_in, blocks, conv_out))
    return ModelWeights(config=config, stages=stages)


def sstcn_forward(stage: StageWeights, x: np.ndarray):
    """Forward one stage; returns (logits, cache for backward)."""
    h = nncore.conv1d_dilated(x, stage.conv_in)
    block_caches = []
    for dk, pk in stage.blocks:
        a = nncore.conv1d_dilated(h, dk)
        r = nncore.relu(a)
        p = nncore.conv1d_dilated(r, pk)
        block_caches.append((h, a, r))
        h = h + p
    logits = nncore.conv1d_dilated(h, stage.conv_out)
    cache = (x, block_caches, h)
    return logits, cache


def sstcn_backward(stage: StageWeights, cache, grad_logits: np.ndarray):
    """Backward one stage; returns (param grads in named_params order, gx)."""
    x, block_caches, h_final = cache
    gh, gw_out, gb_out = nncore.conv1d_backward(h_final, stage.conv_out, grad_logits)
    block_grads = []
    for (dk, pk), (h_in, a, r) in zip(reversed(stage.blocks),
                                      reversed(block_caches)):
        gr, gw_p, gb_p = nncore.conv1d_backward(r, pk, gh)
        ga = nncore.relu_backward(a, gr)
        gh_conv, gw_d, gb_d = nncore.conv1d_backward(h_in, dk, ga)
        gh = gh + gh_conv  # residual path
        block_grads.append((gw_d, gb_d, gw_p, gb_p))
    gx, gw_in, gb_in = nncore.conv1d_backward(x, stage.conv_in, gh)
    grads = [gw_in, gb_in]
    for gw_d, gb_d, gw_p, gb_p in reversed(block_grads):
        grads.extend([gw_d, gb_d, gw_p, gb_p])
    grads.extend([gw_out, gb_out])
    return grads, gx


def mstcn_forward(weights: ModelWeights, x: np.ndarray, with_cache: bool = False):
    """Run all stages; returns list of per-stage probability sequences."""
    x = nncore.as_tensor2(x)
    sc = weights.config.stage
    if x.shape[1] != sc.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, model expects {sc.in_channels}"
        )
    probs_list, caches = [], []
    inp = x
    for stage in weights.stages:
        logits, cache = sstcn_forward(stage, inp)
        probs = nncore.softmax_rows(logits)
        probs_list.append(probs)
        caches.append(cache)
        inp = probs
    if with_cache:
        return probs_list, caches
    return probs_list


def _loss_and_grads(weights: ModelWeights, x: np.ndarray, labels: np.ndarray):
    """Total loss over all stages and gradients for every parameter."""
    cfg = weights.config
    probs_list, caches = mstcn_forward(weights, x, with_cache=True)
    total = 0.0
    for probs in probs_list:
        total += nncore.cross_entropy_loss(probs, labels)
        total += cfg.loss.lambda_tmse * nncore.tmse_loss(probs, cfg.loss)

    all_grads: list[list[np.ndarray]] = [None] * cfg.num_stages
    g_input_next = None  # grad w.r.t. the probs feeding the next stage
    for s in range(cfg.num_stages - 1, -1, -1):
        probs = probs_list[s]
        gprobs = nncore.cross_entropy_grad(probs, labels)
        gprobs += cfg.loss.lambda_tmse * nncore.tmse_grad(probs, cfg.loss)
        if g_input_next is not None:
            gprobs = gprobs + g_input_next
        glogits = nncore.softmax_backward(probs, gprobs)
        stage_grads, gx = sstcn_backward(weights.stages[s], caches[s], glogits)
        all_grads[s] = stage_grads
        g_input_next = gx
    flat = [g for stage_grads in all_grads for g in stage_grads]
    return total, flat, probs_list


def train(config: MsTcnConfig, sessions) -> tuple[ModelWeights, list[float]]:
    """Full-sequence gradient training; one session = one batch.

    Sessions are visited in the given order every epoch (deterministic).
    Returns the weights and the per-epoch mean loss history.
    """
    sessions = list(sessions)
    if not sessions:
        raise ValueError("at least one labeled session is required")
    for sess in sessions:
        if sess.labels is None:
            raise ValueError(f"session {sess.subject_id!r} has no labels")
        if len(sess.labels) != sess.samples.shape[0]:
            raise ValueError(f"session {sess.subject_id!r} labels length mismatch")
    weights = build_mstcn(config)
    opt = AdamState(lr=config.lr)
    history = []
    for _ in range(config.epochs):
        epoch_loss = 0.0
        for sess in sessions:
            loss, grads, _ = _loss_and_grads(
                weights, sess.samples, np.asarray(sess.labels, dtype=np.int64)
            )
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            nncore.adam_step(weights.params(), grads, opt)
            epoch_loss += loss
        history.append(epoch_loss / len(sessions))
    return weights, history


def predict(weights: ModelWeights, session) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample probabilities (final stage) and argmax labels.

    Ties break toward the lowest class index.
    """
    probs_list = mstcn_forward(weights, session.samples)
    probs = probs_list[-1]
    labels = np.argmax(probs, axis=1)
    return probs, labels
