"""The per-client network: conv encoder, self-expressive layer, deconv decoder.

The topology is fixed (two strided conv layers with ReLU, a dense n x n
self-expressive matrix, two mirrored transposed-conv layers with ReLU then
sigmoid) and all gradients are derived by hand; there is no autodiff.

Transposed convolutions are implemented as the exact adjoint of the matching
forward convolution, which guarantees the decoder restores the encoder's
input geometry for any image size.  All training math is float64; checkpoints
are stored as float32.

The total objective per client is

    1/2 ||X - Xhat||_F^2  +  lam1 ||R||_F^2  +  lam2/2 ||Z - R Z||_F^2
                          +  lam3/2 ||alpha A - beta R||_F^2

with diag(R) = 0 enforced by projection (the diagonal of R and of its
gradient is zeroed).  Xhat decodes Z directly; R couples to the features only
through the self-expression term, so a perfect autoencoder is representable
at R = 0.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, NumericsError, ShapeError

# ---------------------------------------------------------------------------
# convolution primitives (ceil-mode "same" geometry, extra pad after)


def _out_and_pad(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max(0, (out - 1) * stride + k - size)
    before = total // 2
    return out, before, total - before


def conv_output_hw(in_hw: tuple[int, int], kh: int, kw: int, stride: int) -> tuple[int, int]:
    return (_out_and_pad(in_hw[0], kh, stride)[0], _out_and_pad(in_hw[1], kw, stride)[0])


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate x (n,c,h,w) with kernels (o,c,kh,kw); no bias."""
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = kernels.shape
    if cin_k != cin:
        raise ShapeError(f"kernel expects {cin_k} input channels, got {cin}")
    oh, pt, pb = _out_and_pad(h, kh, stride)
    ow, pl, pr = _out_and_pad(w, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, cin, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    cols = patches.reshape(n * oh * ow, cin * kh * kw)
    y = cols @ kernels.reshape(cout, -1).T
    return np.ascontiguousarray(y.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_input_grad(
    dy: np.ndarray, kernels: np.ndarray, stride: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of conv2d: scatter dy (n,o,oh,ow) back to the (n,c,h,w) input."""
    n, cout, oh, ow = dy.shape
    cout_k, cin, kh, kw = kernels.shape
    if cout_k != cout:
        raise ShapeError(f"kernel expects {cout_k} output channels, got {cout}")
    h, w = in_hw
    oh2, pt, pb = _out_and_pad(h, kh, stride)
    ow2, pl, pr = _out_and_pad(w, kw, stride)
    if (oh2, ow2) != (oh, ow):
        raise ShapeError(f"gradient spatial shape {(oh, ow)} does not match input {(h, w)}")
    dxp = np.zeros((n, cin, h + pt + pb, w + pl + pr))
    for a in range(kh):
        row_hi = a + (oh - 1) * stride + 1
        for b in range(kw):
            col_hi = b + (ow - 1) * stride + 1
            contrib = np.tensordot(dy, kernels[:, :, a, b], axes=([1], [0]))
            dxp[:, :, a:row_hi:stride, b:col_hi:stride] += contrib.transpose(0, 3, 1, 2)
    return dxp[:, :, pt:pt + h, pl:pl + w]


def conv2d_kernel_grad(
    x: np.ndarray, dy: np.ndarray, kernel_shape: tuple[int, ...], stride: int
) -> np.ndarray:
    """Gradient of conv2d w.r.t. its kernels."""
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = kernel_shape
    _, pt, pb = _out_and_pad(h, kh, stride)
    _, pl, pr = _out_and_pad(w, kw, stride)
    oh, ow = dy.shape[2], dy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, cin, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    cols = patches.reshape(n * oh * ow, cin * kh * kw)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
    return (dy_mat.T @ cols).reshape(cout, cin_k, kh, kw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ConvLayer:
    kernels: np.ndarray   # (out_ch, in_ch, kh, kw)
    biases: np.ndarray    # (out_ch,)
    stride: int


@dataclass
class DeconvLayer:
    """Adjoint of a conv layer: maps hi_ch feature maps back to lo_ch maps."""

    kernels: np.ndarray       # (hi_ch, lo_ch, kh, kw)
    biases: np.ndarray        # (lo_ch,), added on the upsampled output
    stride: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]


@dataclass
class EncoderParams:
    layers: list[ConvLayer]

    def __post_init__(self):
        if len(self.layers) != 2:
            raise ConfigError("encoder uses exactly two conv layers")

    def copy(self) -> "EncoderParams":
        return EncoderParams([
            ConvLayer(l.kernels.copy(), l.biases.copy(), l.stride) for l in self.layers
        ])


@dataclass
class DecoderParams:
    layers: list[DeconvLayer]

    def __post_init__(self):
        if len(self.layers) != 2:
            raise ConfigError("decoder uses exactly two transposed-conv layers")

    def copy(self) -> "DecoderParams":
        return DecoderParams([
            DeconvLayer(l.kernels.copy(), l.biases.copy(), l.stride, l.in_hw, l.out_hw)
            for l in self.layers
        ])


@dataclass
class SelfExpressiveParams:
    r: np.ndarray   # (n, n), zero diagonal

    def copy(self) -> "SelfExpressiveParams":
        return SelfExpressiveParams(self.r.copy())


@dataclass
class NetParams:
    encoder: EncoderParams
    selfexpr: SelfExpressiveParams
    decoder: DecoderParams
    image_shape: tuple[int, int, int]   # (channels, height, width)

    def copy(self) -> "NetParams":
        return NetParams(self.encoder.copy(), self.selfexpr.copy(),
                         self.decoder.copy(), self.image_shape)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.encoder.layers):
            out.append((f"enc{i}.kernels", layer.kernels))
            out.append((f"enc{i}.biases", layer.biases))
        out.append(("selfexpr.r", self.selfexpr.r))
        for i, layer in enumerate(self.decoder.layers):
            out.append((f"dec{i}.kernels", layer.kernels))
            out.append((f"dec{i}.biases", layer.biases))
        return out

    def load_tensors(self, named: dict[str, np.ndarray]) -> None:
        """Overwrite every parameter tensor in place from a name -> array map."""
        for name, current in self.named_tensors():
            if name not in named:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(named[name], dtype=np.float64)
            if arr.shape != current.shape:
                raise ShapeError(f"tensor {name!r}: shape {arr.shape} != {current.shape}")
            current[...] = arr


@dataclass(frozen=True)
class Hyperparams:
    lam1: float = 1.0
    lam2: float = 15.0
    lam3: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam3", "alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class Architecture:
    channels: tuple[int, int] = (16, 8)
    kernel_sizes: tuple[int, int] = (5, 3)
    strides: tuple[int, int] = (2, 2)


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    regularizer_r: float
    self_expression: float
    graph_alignment: float
    total: float

    def as_tuple(self):
        return (self.reconstruction, self.regularizer_r, self.self_expression,
                self.graph_alignment, self.total)


def _breakdown(rec, reg, se, ga) -> LossBreakdown:
    for name, value in (("reconstruction", rec), ("regularizer_r", reg),
                        ("self_expression", se), ("graph_alignment", ga)):
        if not np.isfinite(value):
            raise NumericsError(f"non-finite loss term: {name}")
    return LossBreakdown(rec, reg, se, ga, rec + reg + se + ga)


# ---------------------------------------------------------------------------
# initialisation


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(image_shape: tuple[int, int, int], arch: Architecture,
                 rng: np.random.Generator) -> EncoderParams:
    c0 = image_shape[0]
    c1, c2 = arch.channels
    k1, k2 = arch.kernel_sizes
    s1, s2 = arch.strides
    return EncoderParams([
        ConvLayer(_uniform_fan_in(rng, (c1, c0, k1, k1)), np.zeros(c1), s1),
        ConvLayer(_uniform_fan_in(rng, (c2, c1, k2, k2)), np.zeros(c2), s2),
    ])


def init_decoder(image_shape: tuple[int, int, int], arch: Architecture,
                 rng: np.random.Generator) -> DecoderParams:
    c0, h0, w0 = image_shape
    c1, c2 = arch.channels
    k1, k2 = arch.kernel_sizes
    s1, s2 = arch.strides
    hw1 = conv_output_hw((h0, w0), k1, k1, s1)
    hw2 = conv_output_hw(hw1, k2, k2, s2)
    return DecoderParams([
        DeconvLayer(_uniform_fan_in(rng, (c2, c1, k2, k2)), np.zeros(c1), s2, hw2, hw1),
        DeconvLayer(_uniform_fan_in(rng, (c1, c0, k1, k1)), np.zeros(c0), s1, hw1, (h0, w0)),
    ])


def init_net_params(
    n_samples: int,
    image_shape: tuple[int, int, int],
    arch: Architecture,
    encoder_rng: np.random.Generator,
    decoder_rng: np.random.Generator,
) -> NetParams:
    """Fresh parameters: fan-in-scaled uniform conv weights, R = 0."""
    return NetParams(
        encoder=init_encoder(image_shape, arch, encoder_rng),
        selfexpr=SelfExpressiveParams(np.zeros((n_samples, n_samples))),
        decoder=init_decoder(image_shape, arch, decoder_rng),
        image_shape=image_shape,
    )


def latent_dim(image_shape: tuple[int, int, int], arch: Architecture) -> int:
    _, h0, w0 = image_shape
    k1, k2 = arch.kernel_sizes
    s1, s2 = arch.strides
    hw2 = conv_output_hw(conv_output_hw((h0, w0), k1, k1, s1), k2, k2, s2)
    return arch.channels[1] * hw2[0] * hw2[1]


# ---------------------------------------------------------------------------
# forward ops


def encode(enc: EncoderParams, x: np.ndarray, image_shape: tuple[int, int, int]) -> np.ndarray:
    """Flattened ReLU features of the two-layer conv stack; rows are samples."""
    x = np.asarray(x, dtype=float)
    c0, h0, w0 = image_shape
    if x.ndim != 2 or x.shape[1] != c0 * h0 * w0:
        raise ShapeError(f"expected rows of length {c0 * h0 * w0}, got {x.shape}")
    l1, l2 = enc.layers
    a1 = conv2d(x.reshape(-1, c0, h0, w0), l1.kernels, l1.stride) + l1.biases[None, :, None, None]
    h1 = np.maximum(a1, 0.0)
    a2 = conv2d(h1, l2.kernels, l2.stride) + l2.biases[None, :, None, None]
    h2 = np.maximum(a2, 0.0)
    return h2.reshape(x.shape[0], -1)


def self_express(selfexpr: SelfExpressiveParams, z: np.ndarray) -> np.ndarray:
    """Reconstruct every feature row as an R-weighted mix of the other rows."""
    r = selfexpr.r
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ShapeError("self-expressive matrix must be square")
    if z.shape[0] != r.shape[0]:
        raise ShapeError(f"R is {r.shape[0]}x{r.shape[0]} but z has {z.shape[0]} rows")
    return r @ z


def decode(dec: DecoderParams, z: np.ndarray) -> np.ndarray:
    """Map flattened features back to flattened images through the deconvs."""
    d1, d2 = dec.layers
    chi = d1.kernels.shape[0]
    h2, w2 = d1.in_hw
    if z.ndim != 2 or z.shape[1] != chi * h2 * w2:
        raise ShapeError(f"expected feature rows of length {chi * h2 * w2}, got {z.shape}")
    u0 = z.reshape(-1, chi, h2, w2)
    g1 = conv2d_input_grad(u0, d1.kernels, d1.stride, d1.out_hw) + d1.biases[None, :, None, None]
    u1 = np.maximum(g1, 0.0)
    g2 = conv2d_input_grad(u1, d2.kernels, d2.stride, d2.out_hw) + d2.biases[None, :, None, None]
    return _sigmoid(g2).reshape(z.shape[0], -1)


# ---------------------------------------------------------------------------
# loss and gradients


@dataclass
class Gradients:
    encoder: list[tuple[np.ndarray, np.ndarray]]   # (d_kernels, d_biases) per layer
    r: np.ndarray
    decoder: list[tuple[np.ndarray, np.ndarray]]

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (dk, db) in enumerate(self.encoder):
            out.append((f"enc{i}.kernels", dk))
            out.append((f"enc{i}.biases", db))
        out.append(("selfexpr.r", self.r))
        for i, (dk, db) in enumerate(self.decoder):
            out.append((f"dec{i}.kernels", dk))
            out.append((f"dec{i}.biases", db))
        return out


def _forward(params: NetParams, x: np.ndarray) -> dict:
    c0, h0, w0 = params.image_shape
    n = x.shape[0]
    l1, l2 = params.encoder.layers
    x4 = x.reshape(n, c0, h0, w0)
    a1 = conv2d(x4, l1.kernels, l1.stride) + l1.biases[None, :, None, None]
    h1 = np.maximum(a1, 0.0)
    a2 = conv2d(h1, l2.kernels, l2.stride) + l2.biases[None, :, None, None]
    h2 = np.maximum(a2, 0.0)
    z = h2.reshape(n, -1)

    d1, d2 = params.decoder.layers
    g1 = conv2d_input_grad(h2, d1.kernels, d1.stride, d1.out_hw) + d1.biases[None, :, None, None]
    u1 = np.maximum(g1, 0.0)
    g2 = conv2d_input_grad(u1, d2.kernels, d2.stride, d2.out_hw) + d2.biases[None, :, None, None]
    xhat4 = _sigmoid(g2)
    return {"x4": x4, "a1": a1, "h1": h1, "a2": a2, "h2": h2, "z": z,
            "g1": g1, "u1": u1, "xhat4": xhat4}


def _loss_terms(params: NetParams, hyper: Hyperparams, x, adjacency, cache) -> tuple:
    z = cache["z"]
    r = params.selfexpr.r
    diff = x - cache["xhat4"].reshape(x.shape)
    rec = 0.5 * float((diff * diff).sum())
    reg = hyper.lam1 * float((r * r).sum())
    q = z - r @ z
    se = 0.5 * hyper.lam2 * float((q * q).sum())
    if hyper.lam3 != 0.0:
        if adjacency is None:
            raise ConfigError("lam3 > 0 requires an adjacency matrix")
        mism = hyper.alpha * adjacency.a - hyper.beta * r
        ga = 0.5 * hyper.lam3 * float((mism * mism).sum())
    else:
        ga = 0.0
    return rec, reg, se, ga, diff, q


def loss(params: NetParams, hyper: Hyperparams, x, adjacency=None) -> LossBreakdown:
    """Evaluate the four objective terms; lam3 = 0 ignores the adjacency."""
    x = np.asarray(x, dtype=float)
    _check_loss_inputs(params, x, adjacency)
    # Overflow is legal here: non-finite terms surface as NumericsError.
    with np.errstate(over="ignore", invalid="ignore"):
        cache = _forward(params, x)
        rec, reg, se, ga, _, _ = _loss_terms(params, hyper, x, adjacency, cache)
    return _breakdown(rec, reg, se, ga)


def _check_loss_inputs(params: NetParams, x, adjacency):
    n = x.shape[0]
    r = params.selfexpr.r
    if r.shape != (n, n):
        raise ShapeError(f"R is {r.shape} but the batch has {n} samples")
    c0, h0, w0 = params.image_shape
    if x.shape[1] != c0 * h0 * w0:
        raise ShapeError(f"expected rows of length {c0 * h0 * w0}, got {x.shape[1]}")
    if adjacency is not None and adjacency.a.shape != (n, n):
        raise ShapeError(f"adjacency is {adjacency.a.shape}, expected {(n, n)}")


def loss_and_gradients(
    params: NetParams, hyper: Hyperparams, x, adjacency=None
) -> tuple[LossBreakdown, Gradients]:
    """One forward/backward pass; the R gradient has its diagonal projected out."""
    x = np.asarray(x, dtype=float)
    _check_loss_inputs(params, x, adjacency)
    with np.errstate(over="ignore", invalid="ignore"):
        cache = _forward(params, x)
        rec, reg, se, ga, diff, q = _loss_terms(params, hyper, x, adjacency, cache)
    breakdown = _breakdown(rec, reg, se, ga)

    with np.errstate(over="ignore", invalid="ignore"):
        z = cache["z"]
        r = params.selfexpr.r
        l1, l2 = params.encoder.layers
        d1, d2 = params.decoder.layers

        # Reconstruction path back through the decoder.
        xhat4 = cache["xhat4"]
        dxhat4 = -diff.reshape(xhat4.shape)                  # d rec / d xhat
        dg2 = dxhat4 * xhat4 * (1.0 - xhat4)
        db_d2 = dg2.sum(axis=(0, 2, 3))
        dk_d2 = conv2d_kernel_grad(dg2, cache["u1"], d2.kernels.shape, d2.stride)
        du1 = conv2d(dg2, d2.kernels, d2.stride)
        dg1 = du1 * (cache["g1"] > 0.0)
        db_d1 = dg1.sum(axis=(0, 2, 3))
        dk_d1 = conv2d_kernel_grad(dg1, cache["h2"], d1.kernels.shape, d1.stride)
        dh2_from_decoder = conv2d(dg1, d1.kernels, d1.stride)

        # Feature gradient: self-expression term plus the decoder path.
        dz = hyper.lam2 * (q - r.T @ q)
        dh2 = dz.reshape(cache["h2"].shape) + dh2_from_decoder

        # Encoder backprop.
        da2 = dh2 * (cache["a2"] > 0.0)
        db_e2 = da2.sum(axis=(0, 2, 3))
        dk_e2 = conv2d_kernel_grad(cache["h1"], da2, l2.kernels.shape, l2.stride)
        dh1 = conv2d_input_grad(da2, l2.kernels, l2.stride,
                                (cache["h1"].shape[2], cache["h1"].shape[3]))
        da1 = dh1 * (cache["a1"] > 0.0)
        db_e1 = da1.sum(axis=(0, 2, 3))
        dk_e1 = conv2d_kernel_grad(cache["x4"], da1, l1.kernels.shape, l1.stride)

        # Self-expressive matrix: closed forms for all three terms, then project.
        dr = 2.0 * hyper.lam1 * r - hyper.lam2 * (q @ z.T)
        if hyper.lam3 != 0.0:
            dr -= hyper.lam3 * hyper.beta * (hyper.alpha * adjacency.a - hyper.beta * r)
        np.fill_diagonal(dr, 0.0)

    grads = Gradients(
        encoder=[(dk_e1, db_e1), (dk_e2, db_e2)],
        r=dr,
        decoder=[(dk_d1, db_d1), (dk_d2, db_d2)],
    )
    return breakdown, grads


def gradients(params: NetParams, hyper: Hyperparams, x, adjacency=None) -> Gradients:
    return loss_and_gradients(params, hyper, x, adjacency)[1]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float
    velocities: dict[str, np.ndarray]

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.learning_rate, self.momentum,
                              {k: v.copy() for k, v in self.velocities.items()})


def init_optimizer_state(params: NetParams, learning_rate: float, momentum: float) -> OptimizerState:
    if learning_rate < 0 or not np.isfinite(learning_rate):
        raise ConfigError(f"invalid learning rate {learning_rate}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    velocities = {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
    return OptimizerState(learning_rate, momentum, velocities)


def sgd_momentum_step(
    params: NetParams, grads: Gradients, state: OptimizerState
) -> tuple[NetParams, OptimizerState]:
    """v <- mu v - eta g; theta <- theta + v, per tensor; diag(R) re-zeroed."""
    new_params = params.copy()
    new_vel = {}
    grad_map = dict(grads.named_tensors())
    with np.errstate(over="ignore", invalid="ignore"):
        for name, tensor in new_params.named_tensors():
            g = grad_map[name]
            if g.shape != tensor.shape:
                raise ShapeError(f"gradient {name!r} has shape {g.shape}, expected {tensor.shape}")
            v = state.momentum * state.velocities[name] - state.learning_rate * g
            tensor += v
            new_vel[name] = v
    np.fill_diagonal(new_params.selfexpr.r, 0.0)
    return new_params, OptimizerState(state.learning_rate, state.momentum, new_vel)


def train_local(
    shard,
    params: NetParams,
    hyper: Hyperparams,
    adjacency,
    epochs: int,
    state: OptimizerState,
) -> tuple[NetParams, OptimizerState, list[LossBreakdown]]:
    """Full-batch momentum-SGD epochs on one shard.

    The returned trace holds the loss evaluated at the start of each epoch
    (the point where that epoch's gradient was taken).
    """
    if np.any(np.diag(params.selfexpr.r) != 0.0):
        raise ConfigError("diag(R) must be zero on entry to train_local")
    x = shard.samples
    trace = []
    for epoch in range(epochs):
        try:
            breakdown, grads = loss_and_gradients(params, hyper, x, adjacency)
            trace.append(breakdown)
            params, state = sgd_momentum_step(params, grads, state)
        except NumericsError as exc:
            raise NumericsError(f"epoch {epoch}: {exc}") from exc
        assert not np.any(np.diag(params.selfexpr.r)), "diag(R) drifted from zero"
    return params, state, trace


# ---------------------------------------------------------------------------
# checkpoints and loss traces

CHECKPOINT_MAGIC = b"FDSC"
CHECKPOINT_VERSION = 1


def save_checkpoint(named_tensors, path) -> None:
    """Binary tensor bundle: magic, u16 version, then per tensor its
    u16 name length, utf-8 name, u8 rank, u32 dims and float32 payload
    (all integers little-endian)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        for name, arr in named_tensors:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 6
    out: dict[str, np.ndarray] = {}
    while offset < len(data):
        (name_len,) = struct.unpack("<H", data[offset:offset + 2])
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rank = data[offset]
        offset += 1
        dims = struct.unpack(f"<{rank}I", data[offset:offset + 4 * rank])
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data[offset:offset + 4 * count], dtype="<f4").reshape(dims)
        offset += 4 * count
        out[name] = arr.astype(np.float64)
    return out


def append_loss_trace(path, round_index: int, trace: list[LossBreakdown]) -> None:
    """Append per-epoch loss rows to a client's CSV trace file."""
    import os

    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["round", "epoch", "reconstruction", "regularizer_r",
                             "self_expression", "graph_alignment", "total"])
        for epoch, lb in enumerate(trace):
            writer.writerow([round_index, epoch, *lb.as_tuple()])
