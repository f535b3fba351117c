"""Network assembly: the plain encoder-decoder and the residual-fused variant.

A network is an ordered, topologically sorted node list over the kernels in
:mod:`segres.layers` plus a named parameter table. Forward caches every
activation and pooling index so ``backward`` can replay the graph in
reverse; decoder unpooling always consumes the indices recorded by its
resolution-matched encoder pool.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import layers
from .tensor import Rng, he_init, new_tensor
from .validation import ShapeError, StateError, check_nchw, check_spatial_divisible

DESK_CHANNELS = (16, 32, 64)


@dataclass
class ArchConfig:
    """Structural hyperparameters shared by both network variants."""

    input_channels: int = 3
    class_count: int = 2
    stage_channels: tuple = (64, 128, 256)
    desk_scale: bool = False
    convs_per_stage: int = 1

    def __post_init__(self):
        c1, c2, c3 = self.stage_channels
        if not (1 <= c1 < c2 < c3):
            raise ValueError(f"stage channels must be increasing and >= 1, got {self.stage_channels}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")
        if self.convs_per_stage < 1:
            raise ValueError(f"convs_per_stage must be >= 1, got {self.convs_per_stage}")

    @property
    def channels(self) -> tuple:
        return DESK_CHANNELS if self.desk_scale else tuple(self.stage_channels)


@dataclass
class Param:
    name: str
    data: np.ndarray
    grad: np.ndarray


@dataclass
class Node:
    op: str  # input | conv | bn | relu | pool | unpool | deconv | add | concat | softmax | identity
    inputs: tuple = ()
    param: str = ""
    pool_node: int = -1  # unpool only: node id of the matching encoder pool


class Network:
    """Executable node graph with named parameters.

    Instances are single-writer: forward/backward mutate the activation
    caches (and, in training mode, batchnorm running statistics), so one
    instance must not run concurrently. Pure inference on distinct
    instances is safe to parallelize.
    """

    def __init__(self, cfg: ArchConfig, kind: str, nodes: list, params: dict, bn_states: dict):
        self.cfg = cfg
        self.kind = kind
        self.nodes = nodes
        self.params = params
        self.bn_states = bn_states
        self._acts = None
        self._caches = None
        self._pool_idx = None
        self._training = False
        self.input_grad = None

    # -- introspection ------------------------------------------------

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad[...] = 0.0

    def state_tensors(self) -> dict:
        """Named persistent tensors: parameters plus batchnorm running stats."""
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    # -- execution ----------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        check_nchw(x)
        if x.shape[1] != self.cfg.input_channels:
            raise ShapeError(f"expected {self.cfg.input_channels} input channels, got {x.shape[1]}")
        check_spatial_divisible(x.shape[2], x.shape[3])
        acts: list = [None] * len(self.nodes)
        caches: dict = {}
        pool_idx: dict = {}
        for i, node in enumerate(self.nodes):
            src = [acts[j] for j in node.inputs]
            if node.op == "input":
                acts[i] = x
            elif node.op == "identity":
                acts[i] = src[0]
            elif node.op == "conv":
                w = self.params[f"{node.param}.w"].data
                b = self.params[f"{node.param}.b"].data
                cols = layers.conv_columns(src[0], w.shape[2])
                acts[i] = layers.conv2d(src[0], w, b, cols=cols)
                caches[i] = cols
            elif node.op == "deconv":
                w = self.params[f"{node.param}.w"].data
                b = self.params[f"{node.param}.b"].data
                cols = layers.conv_columns(src[0], w.shape[2])
                acts[i] = layers.deconv(src[0], w, b, cols=cols)
                caches[i] = cols
            elif node.op == "bn":
                acts[i], caches[i] = layers.batchnorm(src[0], self.bn_states[node.param], training)
            elif node.op == "relu":
                acts[i] = layers.relu(src[0])
            elif node.op == "pool":
                acts[i], pool_idx[i] = layers.maxpool2(src[0])
            elif node.op == "unpool":
                idx = pool_idx[node.pool_node]
                h, w = src[0].shape[2], src[0].shape[3]
                acts[i] = layers.maxunpool2(src[0], idx, 2 * h, 2 * w)
            elif node.op == "add":
                acts[i] = layers.fuse_add(src[0], src[1])
            elif node.op == "concat":
                acts[i] = layers.concat_channels(src[0], src[1])
            elif node.op == "softmax":
                acts[i] = layers.softmax_pixels(src[0])
            else:
                raise StateError(f"unknown node op {node.op!r}")
        self._acts = acts
        self._caches = caches
        self._pool_idx = pool_idx
        self._training = training
        return acts[-1]

    def backward(self, dprob: np.ndarray) -> dict:
        """Reverse-mode sweep from an upstream gradient on the output probabilities.

        Overwrites every parameter's ``grad`` buffer and returns the
        name -> gradient table. Also records the input gradient in
        ``self.input_grad``.
        """
        if self._acts is None:
            raise StateError("backward requires a prior forward pass")
        acts, caches, pool_idx = self._acts, self._caches, self._pool_idx
        if dprob.shape != acts[-1].shape:
            raise ShapeError(f"upstream gradient shape {dprob.shape} != output shape {acts[-1].shape}")
        self.zero_grad()
        dacts: list = [None] * len(self.nodes)
        dacts[-1] = np.asarray(dprob, dtype=np.float64)

        def send(j: int, g: np.ndarray) -> None:
            if dacts[j] is None:
                dacts[j] = g
            else:
                dacts[j] = dacts[j] + g

        for i in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[i]
            dy = dacts[i]
            if dy is None or node.op == "input":
                continue
            src = node.inputs
            if node.op == "identity":
                send(src[0], dy)
            elif node.op == "conv":
                w = self.params[f"{node.param}.w"]
                dx, dw, db = layers.conv2d_backward(acts[src[0]], w.data, dy, cols=caches[i])
                w.grad += dw
                self.params[f"{node.param}.b"].grad += db
                send(src[0], dx)
            elif node.op == "deconv":
                w = self.params[f"{node.param}.w"]
                dx, dw, db = layers.deconv_backward(acts[src[0]], w.data, dy, cols=caches[i])
                w.grad += dw
                self.params[f"{node.param}.b"].grad += db
                send(src[0], dx)
            elif node.op == "bn":
                dx, dgamma, dbeta = layers.batchnorm_backward(caches[i], dy)
                self.params[f"{node.param}.gamma"].grad += dgamma
                self.params[f"{node.param}.beta"].grad += dbeta
                send(src[0], dx)
            elif node.op == "relu":
                send(src[0], layers.relu_backward(acts[src[0]], dy))
            elif node.op == "pool":
                send(src[0], layers.maxpool2_backward(pool_idx[i], dy))
            elif node.op == "unpool":
                send(src[0], layers.maxunpool2_backward(pool_idx[node.pool_node], dy))
            elif node.op == "add":
                send(src[0], dy)
                send(src[1], dy)
            elif node.op == "concat":
                da, db_ = layers.split_channels(dy, acts[src[0]].shape[1])
                send(src[0], da)
                send(src[1], db_)
            elif node.op == "softmax":
                send(src[0], layers.softmax_pixels_backward(acts[i], dy))
        self.input_grad = dacts[0]
        return {name: p.grad for name, p in self.params.items()}


class _Builder:
    def __init__(self, cfg: ArchConfig, rng: Rng):
        self.cfg = cfg
        self.rng = rng
        self.nodes: list = []
        self.params: dict = {}
        self.bn_states: dict = {}

    def node(self, **kw) -> int:
        self.nodes.append(Node(**kw))
        return len(self.nodes) - 1

    def _param(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Param(name, data, np.zeros_like(data))

    def conv(self, src: int, name: str, cin: int, cout: int, k: int) -> int:
        self._param(f"{name}.w", he_init((cout, cin, k, k), cin * k * k, self.rng))
        self._param(f"{name}.b", new_tensor((cout,), 0.0))
        return self.node(op="conv", inputs=(src,), param=name)

    def deconv(self, src: int, name: str, cin: int, cout: int, k: int) -> int:
        self._param(f"{name}.w", he_init((cin, cout, k, k), cin * k * k, self.rng))
        self._param(f"{name}.b", new_tensor((cout,), 0.0))
        return self.node(op="deconv", inputs=(src,), param=name)

    def bn(self, src: int, name: str, c: int) -> int:
        gamma = new_tensor((c,), 1.0)
        beta = new_tensor((c,), 0.0)
        self._param(f"{name}.gamma", gamma)
        self._param(f"{name}.beta", beta)
        self.bn_states[name] = layers.BatchNormState(
            gamma=gamma, beta=beta, running_mean=new_tensor((c,), 0.0), running_var=new_tensor((c,), 1.0)
        )
        return self.node(op="bn", inputs=(src,), param=name)

    def conv_block(self, src: int, stage: str, cin: int, cout: int) -> int:
        """convs_per_stage repetitions of conv + batchnorm + relu."""
        cur, c_prev = src, cin
        for i in range(self.cfg.convs_per_stage):
            cur = self.conv(cur, f"{stage}.conv{i}", c_prev, cout, 3)
            cur = self.bn(cur, f"{stage}.bn{i}", cout)
            cur = self.node(op="relu", inputs=(cur,))
            c_prev = cout
        return cur

    def encoder(self) -> tuple:
        c1, c2, c3 = self.cfg.channels
        inp = self.node(op="input")
        feat_full = self.conv_block(inp, "enc1", self.cfg.input_channels, c1)
        pool_full = self.node(op="pool", inputs=(feat_full,))
        feat_half = self.conv_block(pool_full, "enc2", c1, c2)
        pool_half = self.node(op="pool", inputs=(feat_half,))
        feat_quarter = self.conv_block(pool_half, "enc3", c2, c3)
        pool_quarter = self.node(op="pool", inputs=(feat_quarter,))  # innermost map
        return feat_full, pool_full, feat_half, pool_half, feat_quarter, pool_quarter

    def classifier(self, src: int, cin: int) -> int:
        logits = self.conv(src, "classifier", cin, self.cfg.class_count, 1)
        return self.node(op="softmax", inputs=(logits,))


def build_improved(cfg: ArchConfig, rng: Rng | None = None) -> Network:
    """Encoder-decoder with residual fusion at every unpooling stage.

    Each decoder stage unpools with the matching encoder indices, adds the
    encoder map of that resolution, then reduces channels with a stride-1
    transposed convolution; the full-resolution result is concatenated with
    the first encoder map before the 1x1 classifier.
    """
    b = _Builder(cfg, rng or Rng(0))
    c1, c2, c3 = cfg.channels
    feat_full, pool_full, feat_half, pool_half, feat_quarter, pool_quarter = b.encoder()
    up_quarter = b.node(op="unpool", inputs=(pool_quarter,), pool_node=pool_quarter)
    fused_quarter = b.node(op="add", inputs=(up_quarter, feat_quarter))
    dec_quarter = b.deconv(fused_quarter, "dec3", c3, c2, 3)
    up_half = b.node(op="unpool", inputs=(dec_quarter,), pool_node=pool_half)
    fused_half = b.node(op="add", inputs=(up_half, feat_half))
    dec_half = b.deconv(fused_half, "dec2", c2, c1, 3)
    up_full = b.node(op="unpool", inputs=(dec_half,), pool_node=pool_full)
    fused_full = b.node(op="add", inputs=(up_full, feat_full))
    cat = b.node(op="concat", inputs=(fused_full, feat_full))
    b.classifier(cat, 2 * c1)
    return Network(cfg, "improved", b.nodes, b.params, b.bn_states)


def build_baseline(cfg: ArchConfig, rng: Rng | None = None) -> Network:
    """Plain encoder-decoder: index-driven unpooling and deconvolution only."""
    b = _Builder(cfg, rng or Rng(0))
    c1, c2, c3 = cfg.channels
    _, pool_full, _, pool_half, _, pool_quarter = b.encoder()
    up_quarter = b.node(op="unpool", inputs=(pool_quarter,), pool_node=pool_quarter)
    dec_quarter = b.deconv(up_quarter, "dec3", c3, c2, 3)
    up_half = b.node(op="unpool", inputs=(dec_quarter,), pool_node=pool_half)
    dec_half = b.deconv(up_half, "dec2", c2, c1, 3)
    up_full = b.node(op="unpool", inputs=(dec_half,), pool_node=pool_full)
    b.classifier(up_full, c1)
    return Network(cfg, "baseline", b.nodes, b.params, b.bn_states)


def with_zeroed_fusion(net: Network) -> Network:
    """Copy of an improved network whose residual additions pass only the decoder path.

    Used for graph-surgery checks: with shared parameters and the classifier
    restricted to its first channel block, the result must match the plain
    baseline forward.
    """
    nodes = [
        replace(n, op="identity", inputs=n.inputs[:1]) if n.op == "add" else replace(n)
        for n in net.nodes
    ]
    return Network(net.cfg, net.kind, nodes, net.params, net.bn_states)
