"""
TOPIC policy: prompt/text/vision token encoders, multi-view transformer
encoder, prompt projection, broadcast fusion and factorized action heads
File: app/services/policy_service.py

Pipeline for one observation:
    P (n×C), T = encode_language(l), O = encode_views(o)
    X = [P; T; O] → mvte_forward → (X̂, P̂)
    X_out = X̂ + project(P̂) → mean over tokens → head → 5 logit blocks
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union
import logging
import math
import zlib

import numpy as np

from app.core import ops
from app.core.checkpoint import load_params, save_params
from app.core.exceptions import ConfigError, DimensionError, EncodingError
from app.core.tensor import Tensor, parameter
from app.schemas.config import ModelConfig, ProjectionMode
from app.schemas.report import ParameterSummary
from app.schemas.task import HEIGHT_LEVELS, ROTATION_BINS, Gripper, KeyframeAction
from app.services.env_service import NUM_CHANNELS

logger = logging.getLogger(__name__)


NUM_VIEWS = 3
SEGMENT_TEXT, SEGMENT_VISION = 0, 1
BASE_PROMPT_ID = "__base__"


def action_block_sizes(grid: int) -> Tuple[int, ...]:
    """Logit block sizes in action order: x, y, z, rot, gripper"""
    return (grid, grid, HEIGHT_LEVELS, ROTATION_BINS, len(Gripper))


def _normal(rng: np.random.Generator, std: float, shape) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


# ==================== PARAMETER CONTAINERS ====================

@dataclass
class LayerParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    FIELDS = ("ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "bo",
              "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2")

    def named(self) -> List[Tuple[str, Tensor]]:
        return [(f, getattr(self, f)) for f in self.FIELDS]


@dataclass
class BackboneParams:
    """Token embedders and transformer layers; frozen after stage 1"""

    token_embedding: Tensor
    text_pos: Tensor
    segment: Tensor
    patch_w: List[Tensor]
    patch_b: List[Tensor]
    vision_pos: Tensor
    view_segment: Tensor
    layers: List[LayerParams]
    final_gain: Tensor
    final_bias: Tensor
    heads: int
    frozen: bool = False

    @property
    def width(self) -> int:
        return self.token_embedding.shape[1]

    @property
    def d_k(self) -> int:
        return self.width // self.heads

    def named(self) -> List[Tuple[str, Tensor]]:
        items = [
            ("token_embedding", self.token_embedding),
            ("text_pos", self.text_pos),
            ("segment", self.segment),
        ]
        for v in range(NUM_VIEWS):
            items += [(f"patch_w.{v}", self.patch_w[v]), (f"patch_b.{v}", self.patch_b[v])]
        items += [("vision_pos", self.vision_pos), ("view_segment", self.view_segment)]
        for i, layer in enumerate(self.layers):
            items += [(f"layers.{i}.{name}", t) for name, t in layer.named()]
        items += [("final_gain", self.final_gain), ("final_bias", self.final_bias)]
        return items

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named()]

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        for t in self.parameters():
            t.requires_grad = not frozen
            t.grad = None


@dataclass
class ProjectionParams:
    """Prompt projection h; identity and average_pooling carry no tensors"""

    mode: ProjectionMode
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def named(self) -> List[Tuple[str, Tensor]]:
        return list(self.tensors.items())

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def set_frozen(self, frozen: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = not frozen
            t.grad = None


@dataclass
class PromptSet:
    task_id: str
    prompts: Tensor

    @property
    def n(self) -> int:
        return self.prompts.shape[0]


@dataclass
class PolicyHead:
    """Pooled feature → concatenated logits of every action block"""

    weight: Tensor
    bias: Tensor
    block_sizes: Tuple[int, ...]

    @property
    def width(self) -> int:
        return self.weight.shape[0]

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def to_vector(self) -> np.ndarray:
        """Flat layout: weight (C×A, row-major) then bias (A)"""
        return np.concatenate([self.weight.data.reshape(-1), self.bias.data.reshape(-1)])

    @classmethod
    def from_vector(cls, vector: np.ndarray, width: int, block_sizes: Sequence[int], trainable: bool = False) -> "PolicyHead":
        a = int(sum(block_sizes))
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != width * a + a:
            raise DimensionError(f"Head vector of length {vector.size} does not fit C={width}, A={a}")
        weight = Tensor(vector[: width * a].reshape(width, a).copy(), requires_grad=trainable, name="head.weight")
        bias = Tensor(vector[width * a:].copy(), requires_grad=trainable, name="head.bias")
        return cls(weight=weight, bias=bias, block_sizes=tuple(block_sizes))

    def split(self, vector: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Cut a head-layout vector into (weight, bias) shaped arrays"""
        cut = self.weight.size
        return vector[:cut].reshape(self.weight.shape), vector[cut:].reshape(self.bias.shape)


@dataclass
class ActionLogits:
    logits: Tensor
    block_sizes: Tuple[int, ...]

    def blocks(self) -> List[Tensor]:
        bounds = np.cumsum((0,) + tuple(self.block_sizes))
        return [ops.slice_cols(self.logits, int(bounds[i]), int(bounds[i + 1])) for i in range(len(self.block_sizes))]

    def decode(self) -> KeyframeAction:
        """Greedy per-block argmax; bins are in range by construction"""
        flat = self.logits.data.reshape(-1)
        bounds = np.cumsum((0,) + tuple(self.block_sizes))
        bins = [int(np.argmax(flat[bounds[i]:bounds[i + 1]])) for i in range(len(self.block_sizes))]
        return KeyframeAction.from_tuple(bins)


@dataclass
class TopicPolicy:
    config: ModelConfig
    grid: int
    view_size: int
    vocab_size: int
    backbone: BackboneParams
    projection: ProjectionParams

    @property
    def block_sizes(self) -> Tuple[int, ...]:
        return action_block_sizes(self.grid)

    @property
    def width(self) -> int:
        return self.config.width

    def freeze(self) -> None:
        self.backbone.set_frozen(True)
        self.projection.set_frozen(True)

    def named(self) -> List[Tuple[str, Tensor]]:
        items = [(f"backbone.{n}", t) for n, t in self.backbone.named()]
        items += [(f"projection.{n}", t) for n, t in self.projection.named()]
        return items


# ==================== INITIALIZATION ====================

def init_backbone(config: ModelConfig, view_size: int, vocab_size: int, rng: np.random.Generator) -> BackboneParams:
    c, p = config.width, config.patch
    if c % config.heads != 0:
        raise DimensionError(f"Width {c} is not divisible by {config.heads} heads")
    if view_size % p != 0:
        raise DimensionError(f"View size {view_size} is not divisible by patch {p}")
    patch_dim = p * p * NUM_CHANNELS
    k = NUM_VIEWS * (view_size // p) ** 2
    ff = config.ff_mult * c
    emb_std = 0.02

    def w(fan_in, shape, name):
        return parameter(_normal(rng, 1.0 / math.sqrt(fan_in), shape), name=name)

    layers = []
    for i in range(config.layers):
        layers.append(LayerParams(
            ln1_gain=parameter(np.ones(c)), ln1_bias=parameter(np.zeros(c)),
            wq=w(c, (c, c), f"l{i}.wq"), wk=w(c, (c, c), f"l{i}.wk"), wv=w(c, (c, c), f"l{i}.wv"),
            wo=w(c, (c, c), f"l{i}.wo"), bo=parameter(np.zeros(c)),
            ln2_gain=parameter(np.ones(c)), ln2_bias=parameter(np.zeros(c)),
            w1=w(c, (c, ff), f"l{i}.w1"), b1=parameter(np.zeros(ff)),
            w2=w(ff, (ff, c), f"l{i}.w2"), b2=parameter(np.zeros(c)),
        ))

    return BackboneParams(
        token_embedding=parameter(_normal(rng, emb_std, (vocab_size, c)), name="token_embedding"),
        text_pos=parameter(_normal(rng, emb_std, (config.max_tokens, c)), name="text_pos"),
        segment=parameter(_normal(rng, emb_std, (2, c)), name="segment"),
        patch_w=[w(patch_dim, (patch_dim, c), f"patch_w.{v}") for v in range(NUM_VIEWS)],
        patch_b=[parameter(np.zeros(c), name=f"patch_b.{v}") for v in range(NUM_VIEWS)],
        vision_pos=parameter(_normal(rng, emb_std, (k, c)), name="vision_pos"),
        view_segment=parameter(_normal(rng, emb_std, (NUM_VIEWS, c)), name="view_segment"),
        layers=layers,
        final_gain=parameter(np.ones(c)),
        final_bias=parameter(np.zeros(c)),
        heads=config.heads,
    )


def init_projection(mode: ProjectionMode, width: int, rng: np.random.Generator) -> ProjectionParams:
    c = width
    if mode == ProjectionMode.LINEAR:
        tensors = {"w": parameter(np.eye(c)), "b": parameter(np.zeros(c))}
    elif mode == ProjectionMode.MLP:
        std = 1.0 / math.sqrt(c)
        tensors = {
            "w1": parameter(_normal(rng, std, (c, c))), "b1": parameter(np.zeros(c)),
            "w2": parameter(_normal(rng, std, (c, c))), "b2": parameter(np.zeros(c)),
        }
    else:
        tensors = {}
    return ProjectionParams(mode=mode, tensors=tensors)


def init_prompts(task_id: str, config: ModelConfig, seed: int, trainable: bool = True) -> PromptSet:
    """Gaussian prompts seeded by (run seed, task-id hash)"""
    rng = np.random.default_rng([int(seed), zlib.crc32(task_id.encode())])
    data = _normal(rng, config.prompt_init_std, (config.prompts, config.width))
    return PromptSet(task_id=task_id, prompts=Tensor(data, requires_grad=trainable, name=f"prompts.{task_id}"))


def init_head(width: int, block_sizes: Sequence[int], rng: np.random.Generator) -> PolicyHead:
    a = int(sum(block_sizes))
    return PolicyHead(
        weight=parameter(_normal(rng, 0.02, (width, a)), name="head.weight"),
        bias=parameter(np.zeros(a), name="head.bias"),
        block_sizes=tuple(block_sizes),
    )


def init_policy(config: ModelConfig, grid: int, view_size: int, vocab_size: int, seed: int) -> Tuple[TopicPolicy, PromptSet, PolicyHead]:
    """Fresh policy, the shared base prompt set and W_base"""
    rng = np.random.default_rng([int(seed), 1])
    backbone = init_backbone(config, view_size, vocab_size, rng)
    projection = init_projection(config.projection, config.width, rng)
    head = init_head(config.width, action_block_sizes(grid), rng)
    policy = TopicPolicy(config=config, grid=grid, view_size=view_size, vocab_size=vocab_size,
                         backbone=backbone, projection=projection)
    return policy, init_prompts(BASE_PROMPT_ID, config, seed), head


# ==================== ENCODERS ====================

def encode_language(tokens: Sequence[int], backbone: BackboneParams) -> Tensor:
    """T (m×C): token lookup + text positions + text segment"""
    m, vocab = backbone.text_pos.shape[0], backbone.token_embedding.shape[0]
    ids = list(tokens)
    if len(ids) > m:
        raise EncodingError(f"Instruction has {len(ids)} tokens, limit is {m}")
    for t in ids:
        if not 0 <= int(t) < vocab:
            raise EncodingError(f"Token id {t} outside the vocabulary of {vocab}")
    ids = ids + [0] * (m - len(ids))
    emb = ops.gather_rows(backbone.token_embedding, ids)
    seg = ops.slice_rows(backbone.segment, SEGMENT_TEXT, SEGMENT_TEXT + 1)
    return ops.add(ops.add(emb, backbone.text_pos), seg)


def patchify(view: np.ndarray, patch: int) -> np.ndarray:
    """(V, V, ch) → ((V/p)², p·p·ch), patches in row-major grid order"""
    v, _, ch = view.shape
    g = v // patch
    return view.reshape(g, patch, g, patch, ch).transpose(0, 2, 1, 3, 4).reshape(g * g, patch * patch * ch)


def encode_views(views: np.ndarray, backbone: BackboneParams, patch: int) -> Tensor:
    """O (k×C): per-view patch embedding + view segment, then vision positions + segment"""
    views = np.asarray(views, dtype=np.float64)
    k = backbone.vision_pos.shape[0]
    if views.ndim != 4 or views.shape[0] != NUM_VIEWS or views.shape[1] != views.shape[2] \
            or views.shape[3] != NUM_CHANNELS or views.shape[1] % patch != 0:
        raise EncodingError(f"Observation views of shape {views.shape} do not fit patch {patch}")
    if NUM_VIEWS * (views.shape[1] // patch) ** 2 != k:
        raise EncodingError(f"Observation views of shape {views.shape} do not yield {k} tokens")

    parts = []
    for v in range(NUM_VIEWS):
        tokens = ops.add(ops.matmul(Tensor(patchify(views[v], patch)), backbone.patch_w[v]), backbone.patch_b[v])
        parts.append(ops.add(tokens, ops.slice_rows(backbone.view_segment, v, v + 1)))
    seg = ops.slice_rows(backbone.segment, SEGMENT_VISION, SEGMENT_VISION + 1)
    return ops.add(ops.add(ops.concat_rows(parts), backbone.vision_pos), seg)


def concat_inputs(prompts: Tensor, text: Tensor, vision: Tensor) -> Tensor:
    """X = [P; T; O]; prompts occupy rows [0, n)"""
    widths = {prompts.shape[1], text.shape[1], vision.shape[1]}
    if len(widths) != 1:
        raise DimensionError(f"concat_inputs: width mismatch P{prompts.shape} T{text.shape} O{vision.shape}")
    return ops.concat_rows([prompts, text, vision])


# ==================== ENCODER ====================

def _layer_forward(x: Tensor, layer: LayerParams, heads: int, d_k: int, eps: float) -> Tensor:
    h = ops.layer_norm(x, layer.ln1_gain, layer.ln1_bias, eps)
    q, k, v = ops.matmul(h, layer.wq), ops.matmul(h, layer.wk), ops.matmul(h, layer.wv)
    outs = []
    for i in range(heads):
        lo, hi = i * d_k, (i + 1) * d_k
        outs.append(ops.attention(ops.slice_cols(q, lo, hi), ops.slice_cols(k, lo, hi), ops.slice_cols(v, lo, hi), d_k))
    attn = outs[0] if heads == 1 else ops.concat_cols(outs)
    x = ops.add(x, ops.add(ops.matmul(attn, layer.wo), layer.bo))

    h = ops.layer_norm(x, layer.ln2_gain, layer.ln2_bias, eps)
    f = ops.gelu(ops.add(ops.matmul(h, layer.w1), layer.b1))
    return ops.add(x, ops.add(ops.matmul(f, layer.w2), layer.b2))


def mvte_forward(x: Tensor, backbone: BackboneParams, n_prompts: int, eps: float = 1e-5) -> Tuple[Tensor, Tensor]:
    """Pre-norm layers with full self-attention; returns (X̂, P̂) from the final layer"""
    if x.ndim != 2 or x.shape[1] != backbone.width:
        raise DimensionError(f"mvte_forward: expected (tokens×{backbone.width}), got {x.shape}")
    for layer in backbone.layers:
        x = _layer_forward(x, layer, backbone.heads, backbone.d_k, eps)
    out = ops.layer_norm(x, backbone.final_gain, backbone.final_bias, eps)
    rows = out.shape[0]
    return ops.slice_rows(out, n_prompts, rows), ops.slice_rows(out, 0, n_prompts)


def project_prompts(p_hat: Tensor, projection: ProjectionParams) -> Tensor:
    """h(P̂) as a 1×C row; every mode pools the n prompt rows by their mean first"""
    width = p_hat.shape[1]
    if p_hat.shape[0] == 0:
        return Tensor(np.zeros((1, width)))
    pooled = ops.mean_rows(p_hat)
    mode, t = projection.mode, projection.tensors
    if mode == ProjectionMode.LINEAR:
        return ops.add(ops.matmul(pooled, t["w"]), t["b"])
    if mode == ProjectionMode.MLP:
        hidden = ops.gelu(ops.add(ops.matmul(pooled, t["w1"]), t["b1"]))
        return ops.add(ops.matmul(hidden, t["w2"]), t["b2"])
    return pooled


def fuse_features(x_hat: Tensor, p_vec: Tensor) -> Tensor:
    """Broadcast addition of the projected prompt vector onto every row of X̂"""
    if p_vec.shape[-1] != x_hat.shape[1] or p_vec.size != x_hat.shape[1]:
        raise DimensionError(f"fuse_features: prompt vector {p_vec.shape} vs features {x_hat.shape}")
    if p_vec.ndim == 1:
        p_vec = ops.reshape(p_vec, (1, p_vec.shape[0]))
    return ops.add(x_hat, p_vec)


# ==================== HEAD / LOSS ====================

def pool_tokens(x_out: Tensor) -> Tensor:
    return ops.mean_rows(x_out)


def head_logits(pooled: Tensor, head: PolicyHead) -> ActionLogits:
    return ActionLogits(logits=ops.add(ops.matmul(pooled, head.weight), head.bias), block_sizes=head.block_sizes)


def predict_action(x_out: Tensor, head: PolicyHead) -> ActionLogits:
    """Mean-pool X_out over tokens, then the five logit blocks"""
    return head_logits(pool_tokens(x_out), head)


def imitation_loss(logits: ActionLogits, expert: KeyframeAction) -> Tensor:
    """Sum of the per-block cross-entropies of the expert action"""
    targets = expert.to_tuple()
    losses = [ops.cross_entropy(block, t) for block, t in zip(logits.blocks(), targets)]
    return ops.stack_scalars(losses)


def batch_mean(losses: List[Tensor]) -> Tensor:
    return ops.stack_scalars(losses, [1.0 / len(losses)] * len(losses))


# ==================== FULL FORWARD ====================

@dataclass
class ForwardResult:
    logits: ActionLogits
    x_hat: Tensor
    p_hat: Tensor
    p_vec: Tensor
    x_out: Tensor


class PolicyService:

    @staticmethod
    def encode_observation(policy: TopicPolicy, tokens: Sequence[int], views: np.ndarray) -> Tuple[Tensor, Tensor]:
        backbone = policy.backbone
        return encode_language(tokens, backbone), encode_views(views, backbone, policy.config.patch)

    @staticmethod
    def forward_tokens(policy: TopicPolicy, prompts: Tensor, text: Tensor, vision: Tensor, head: PolicyHead) -> ForwardResult:
        x = concat_inputs(prompts, text, vision)
        x_hat, p_hat = mvte_forward(x, policy.backbone, prompts.shape[0], policy.config.ln_eps)
        p_vec = project_prompts(p_hat, policy.projection)
        x_out = fuse_features(x_hat, p_vec)
        return ForwardResult(logits=predict_action(x_out, head), x_hat=x_hat, p_hat=p_hat, p_vec=p_vec, x_out=x_out)

    @staticmethod
    def forward(policy: TopicPolicy, prompts: Tensor, tokens: Sequence[int], views: np.ndarray, head: PolicyHead) -> ForwardResult:
        text, vision = PolicyService.encode_observation(policy, tokens, views)
        return PolicyService.forward_tokens(policy, prompts, text, vision, head)

    @staticmethod
    def parameter_summary(policy: TopicPolicy, stage: str, prompt_sets: int = 1) -> ParameterSummary:
        """Total and trainable parameter counts for a training stage"""
        head_size = policy.width * sum(policy.block_sizes) + sum(policy.block_sizes)
        groups = {
            "backbone": sum(t.size for t in policy.backbone.parameters()),
            "projection": sum(t.size for t in policy.projection.parameters()),
            "prompts": policy.config.prompts * policy.width * prompt_sets,
            "head": head_size,
        }
        trainable_by_stage = {
            "stage1": ["backbone", "projection", "prompts", "head"],
            "stage2": ["prompts", "head"],
            "stage3": ["prompts", "head"],
            "finetune": ["head"],
        }
        if stage not in trainable_by_stage:
            raise ConfigError(f"Unknown stage '{stage}' for parameter summary")
        trainable = trainable_by_stage[stage]
        return ParameterSummary(
            stage=stage,
            groups=groups,
            trainable_groups=trainable,
            total=sum(groups.values()),
            trainable=sum(groups[g] for g in trainable),
        )

    # ==================== CHECKPOINTS ====================

    @staticmethod
    def save_stage1(path: Union[str, Path], policy: TopicPolicy, base_prompts: PromptSet, w_base: PolicyHead, meta: dict) -> Path:
        arrays = {name: t.data for name, t in policy.named()}
        arrays[f"prompts.{BASE_PROMPT_ID}"] = base_prompts.prompts.data
        arrays["head.base"] = w_base.to_vector()
        return save_params(path, arrays, kind="stage1", meta=meta)

    @staticmethod
    def load_stage1(
        path: Union[str, Path],
        config: ModelConfig,
        grid: int,
        view_size: int,
        vocab_size: int,
    ) -> Tuple[TopicPolicy, PromptSet, PolicyHead, dict]:
        """Rebuild the frozen policy, base prompts and W_base from a stage-1 checkpoint"""
        arrays, meta = load_params(path, kind="stage1")
        policy, base_prompts, _ = init_policy(config, grid, view_size, vocab_size, seed=0)
        for name, tensor in policy.named():
            PolicyService._assign(tensor, arrays, name, path)
        PolicyService._assign(base_prompts.prompts, arrays, f"prompts.{BASE_PROMPT_ID}", path)
        w_base = PolicyHead.from_vector(arrays["head.base"], config.width, action_block_sizes(grid))
        policy.freeze()
        base_prompts.prompts.requires_grad = False
        return policy, base_prompts, w_base, meta

    @staticmethod
    def _assign(tensor: Tensor, arrays: Dict[str, np.ndarray], name: str, path) -> None:
        if name not in arrays:
            raise ConfigError(f"{path}: checkpoint lacks tensor '{name}'")
        if arrays[name].shape != tensor.shape:
            raise ConfigError(f"{path}: tensor '{name}' has shape {arrays[name].shape}, expected {tensor.shape}")
        tensor.data = arrays[name].copy()
