"""Layer-stack CNN with a flat parameter vector and per-sample gradients."""

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from . import ops
from .errors import ConfigError, DataError, InputError

LAYER_KINDS = ("conv2d", "maxpool", "relu", "dropout", "dense", "flatten")
INPUT_SHAPE = (1, 28, 28)
N_CLASSES = 10


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    padding: int = 0
    rate: float = 0.0
    units: int | None = None
    channelwise: bool = False  # dropout: one draw per feature map

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout":
            ops.check_dropout_rate(self.rate)


def default_architecture(conv1=8, conv2=16, kernel=5, hidden=32, dropout=0.25, dropout_2d=True):
    return [
        LayerSpec("conv2d", out_channels=conv1, kernel=kernel),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv2d", out_channels=conv2, kernel=kernel),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("dropout", rate=dropout, channelwise=dropout_2d),
        LayerSpec("flatten"),
        LayerSpec("dense", units=hidden),
        LayerSpec("relu"),
        LayerSpec("dense", units=N_CLASSES),
    ]


@dataclass(frozen=True)
class ParamSlot:
    layer: int
    name: str
    start: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def stop(self):
        return self.start + self.size


class Network:
    """Ordered layers over one flat parameter vector.

    ``params`` owns the storage; per-layer weights are views into it, so an
    in-place update of ``params`` is seen by every layer.
    """

    def __init__(self, layers, input_shape, shapes, slots, params):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = shapes  # output shape after each layer
        self.slots = slots
        self.params = params

    @property
    def param_count(self):
        return self.params.size

    def param(self, layer, name):
        for slot in self.slots:
            if slot.layer == layer and slot.name == name:
                return self.params[slot.start:slot.stop].reshape(slot.shape)
        raise KeyError((layer, name))

    def digest(self):
        return architecture_digest(self.layers, self.input_shape)

    def copy(self):
        return Network(self.layers, self.input_shape, self.shapes, self.slots, self.params.copy())


def architecture_digest(layers, input_shape=INPUT_SHAPE):
    blob = json.dumps({"input": list(input_shape), "layers": [asdict(l) for l in layers]},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).digest()


def _infer_shapes(layers, input_shape):
    shapes, slots = [], []
    shape = tuple(input_shape)
    offset = 0

    def add(layer, name, pshape):
        nonlocal offset
        slots.append(ParamSlot(layer, name, offset, tuple(pshape)))
        offset += int(np.prod(pshape))

    for i, spec in enumerate(layers):
        if spec.kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"layer {i}: conv2d needs (C, H, W) input, got {shape}")
            if not spec.out_channels or not spec.kernel:
                raise ConfigError(f"layer {i}: conv2d needs out_channels and kernel")
            c, h, w = shape
            if spec.kernel > h + 2 * spec.padding or spec.kernel > w + 2 * spec.padding:
                raise ConfigError(f"layer {i}: kernel {spec.kernel} larger than input {shape}")
            oh = ops.conv_output_size(h, spec.kernel, spec.stride, spec.padding)
            ow = ops.conv_output_size(w, spec.kernel, spec.stride, spec.padding)
            add(i, "w", (spec.out_channels, c, spec.kernel, spec.kernel))
            add(i, "b", (spec.out_channels,))
            shape = (spec.out_channels, oh, ow)
        elif spec.kind == "maxpool":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ConfigError(f"layer {i}: maxpool needs (C, H>=2, W>=2), got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif spec.kind == "dropout":
            if spec.channelwise and len(shape) != 3:
                raise ConfigError(f"layer {i}: channel-wise dropout needs (C, H, W) input, got {shape}")
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ConfigError(f"layer {i}: dense needs flat input, got {shape}; add a flatten layer")
            if not spec.units:
                raise ConfigError(f"layer {i}: dense needs units")
            add(i, "w", (spec.units, shape[0]))
            add(i, "b", (spec.units,))
            shape = (spec.units,)
        shapes.append(shape)
    return shapes, slots, offset


def build_network(arch=None, seed=0, input_shape=INPUT_SHAPE, n_classes=N_CLASSES):
    """Validate the layer stack and draw parameters.

    Weights and biases of a layer are uniform in +/-1/sqrt(fan_in), where
    fan_in counts the weight's inputs per output unit.
    """
    layers = default_architecture() if arch is None else list(arch)
    shapes, slots, count = _infer_shapes(layers, input_shape)
    if not shapes or shapes[-1] != (n_classes,):
        raise ConfigError(f"network output {shapes[-1] if shapes else None} != ({n_classes},)")
    params = np.zeros(count)
    rng = np.random.default_rng(seed)
    fan_in = {s.layer: int(np.prod(s.shape[1:])) for s in slots if s.name == "w"}
    for slot in slots:
        bound = 1.0 / np.sqrt(fan_in[slot.layer])
        params[slot.start:slot.stop] = rng.uniform(-bound, bound, slot.size)
    return Network(layers, input_shape, shapes, slots, params)


def _check_batch(net, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != len(net.input_shape) + 1 or x.shape[1:] != net.input_shape:
        raise InputError(f"expected batch shaped (B, {', '.join(map(str, net.input_shape))}), got {x.shape}")
    return x


def draw_dropout_masks(net, batch_size, rng):
    """Keep-masks for every dropout layer, drawn layer by layer for the whole batch."""
    masks = {}
    for i, spec in enumerate(net.layers):
        if spec.kind == "dropout" and spec.rate > 0:
            in_shape = tuple(net.shapes[i - 1] if i else net.input_shape)
            if spec.channelwise:
                in_shape = in_shape[:1] + (1,) * (len(in_shape) - 1)
            masks[i] = ops.dropout_mask((batch_size,) + in_shape, spec.rate, rng)
    return masks


def forward(net, batch, mode="eval", rng=None, masks=None):
    """Logits ``(B, n_classes)``; train mode also returns the op contexts."""
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _check_batch(net, batch)
    train = mode == "train"
    if train and masks is None:
        masks = draw_dropout_masks(net, x.shape[0], rng) if rng is not None else {}
    contexts = []
    for i, spec in enumerate(net.layers):
        ctx = None
        if spec.kind == "conv2d":
            x, ctx = ops.conv2d_forward(x, net.param(i, "w"), net.param(i, "b"),
                                        stride=spec.stride, padding=spec.padding)
        elif spec.kind == "dense":
            x, ctx = ops.dense_forward(x, net.param(i, "w"), net.param(i, "b"))
        elif spec.kind == "relu":
            x, ctx = ops.relu_forward(x)
        elif spec.kind == "maxpool":
            x, ctx = ops.maxpool2x2_forward(x)
        elif spec.kind == "dropout":
            mask = masks.get(i) if train else None
            if train and spec.rate > 0 and mask is None:
                raise InputError("train-mode dropout needs an rng or precomputed masks")
            x, ctx = ops.dropout_forward(x, spec.rate, train=train, mask=mask)
        elif spec.kind == "flatten":
            ctx = x.shape
            x = x.reshape(x.shape[0], -1)
        contexts.append(ctx)
    return (x, contexts) if train else x


def backward(net, contexts, grad_logits, per_sample=False):
    """Parameter gradient: ``(B, param_count)`` rows if ``per_sample`` else a summed vector."""
    g = np.asarray(grad_logits, dtype=np.float64)
    b = g.shape[0]
    out = np.zeros((b, net.param_count)) if per_sample else np.zeros(net.param_count)
    first_param_layer = min(s.layer for s in net.slots)
    for i in range(len(net.layers) - 1, -1, -1):
        spec, ctx = net.layers[i], contexts[i]
        if spec.kind in ("conv2d", "dense"):
            need = i > first_param_layer
            fn = ops.conv2d_backward if spec.kind == "conv2d" else ops.dense_backward
            g_in, gw, gb = fn(ctx, g, per_sample=per_sample, need_input_grad=need)
            for slot, grad in ((_slot(net, i, "w"), gw), (_slot(net, i, "b"), gb)):
                if per_sample:
                    out[:, slot.start:slot.stop] = grad.reshape(b, -1)
                else:
                    out[slot.start:slot.stop] = grad.ravel()
            if not need:
                break
            g = g_in
        elif spec.kind == "relu":
            g = ops.relu_backward(ctx, g)
        elif spec.kind == "maxpool":
            g = ops.maxpool2x2_backward(ctx, g)
        elif spec.kind == "dropout":
            g = ops.dropout_backward(ctx, g)
        elif spec.kind == "flatten":
            g = g.reshape(ctx)
    return out


def _slot(net, layer, name):
    for slot in net.slots:
        if slot.layer == layer and slot.name == name:
            return slot
    raise KeyError((layer, name))


@dataclass
class PerSampleGrads:
    rows: np.ndarray  # (B, param_count)

    @cached_property
    def norms(self):
        return np.linalg.norm(self.rows, axis=1)

    def __len__(self):
        return self.rows.shape[0]


def loss_and_gradient(net, batch, labels, rng=None, masks=None):
    """Mean loss and the gradient of the mean loss over the batch."""
    x = _check_batch(net, batch)
    labels = np.asarray(labels)
    logits, ctxs = forward(net, x, "train", rng=rng, masks=masks)
    losses, glog = ops.softmax_cross_entropy(logits, labels)
    return float(losses.mean()), backward(net, ctxs, glog / x.shape[0])


def per_sample_gradients(net, batch, labels, rng=None, masks=None, workers=1, micro_batch=64):
    """One gradient row per example, each the gradient of that example's loss alone.

    Samples are processed in fixed ``micro_batch`` chunks whatever the worker
    count, and dropout masks are drawn for the full batch up front, so the
    output is bit-identical for any ``workers``.
    """
    x = _check_batch(net, batch)
    labels = np.asarray(labels)
    b = x.shape[0]
    if labels.shape != (b,):
        raise InputError(f"{b} samples but {labels.shape[0] if labels.ndim else 0} labels")
    if masks is None:
        masks = draw_dropout_masks(net, b, rng) if rng is not None else {}
    rows = np.empty((b, net.param_count))
    losses = np.empty(b)

    def run(start):
        stop = min(start + micro_batch, b)
        sub = {k: m[start:stop] for k, m in masks.items()}
        logits, ctxs = forward(net, x[start:stop], "train", masks=sub)
        loss, glog = ops.softmax_cross_entropy(logits, labels[start:stop])
        rows[start:stop] = backward(net, ctxs, glog, per_sample=True)
        losses[start:stop] = loss

    starts = range(0, b, micro_batch)
    if workers > 1 and b > micro_batch:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return PerSampleGrads(rows), (float(losses.mean()) if b else float("nan"))


def predict(net, images, chunk=1000):
    out = [forward(net, images[i:i + chunk], "eval") for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def evaluate(net, images, labels, chunk=1000):
    """(accuracy, mean loss) in eval mode."""
    logits = predict(net, images, chunk)
    losses, _ = ops.softmax_cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return acc, float(losses.mean())


@dataclass
class MomentumState:
    velocity: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n))


def apply_update(net, update, lr, state, mu=0.9):
    """velocity <- mu * velocity + update; params <- params - lr * velocity (in place)."""
    update = np.asarray(update, dtype=np.float64)
    if update.shape != (net.param_count,):
        raise InputError(f"update has shape {update.shape}, expected ({net.param_count},)")
    v = state.velocity
    v *= mu
    v += update
    net.params -= lr * v
    return net


# checkpoint: magic, u32 version, 32-byte architecture digest, u64 count, f64 LE params
CHECKPOINT_MAGIC = b"SUPERDP\x00"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sI32sQ")


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, net.digest(), net.param_count))
        fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path, net):
    """Read parameters into ``net``; the stored digest must match its architecture."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated checkpoint header")
        magic, version, digest, count = _HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        if digest != net.digest():
            raise DataError(f"{path}: architecture digest does not match the network")
        payload = fh.read()
    if count != net.param_count or len(payload) != 8 * count:
        raise DataError(f"{path}: parameter payload has wrong length")
    net.params[:] = np.frombuffer(payload, dtype="<f8")
    return net
