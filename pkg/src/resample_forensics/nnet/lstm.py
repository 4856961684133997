"""Convolutional front-end + stacked LSTM patch classifier.

A ``P x P`` input map goes through two 3x3 convolutions (rectified
multi-channel, then a single linear channel), is cut into ``block x block``
tiles scanned row-major, and the tiles are fed as a sequence through the
stacked LSTM. The top layer's last output feeds a two-class softmax.

Gate pre-activations are affine in ``[h_prev, x_t]``; gate order inside the
packed weight matrix is input, forget, output, candidate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TrainingError
from .core import check_finite_grads, cross_entropy_loss, logistic, softmax
from .optim import Adam, TrainConfig, minibatches

DEFAULT_HIDDEN = 256
DEFAULT_LAYERS = 3
DEFAULT_BLOCK = 8
DEFAULT_CONV_CHANNELS = 8
N_CLASSES = 2


@dataclass
class LstmCellParams:
    W: np.ndarray  # (hidden + input, 4 * hidden)
    b: np.ndarray  # (4 * hidden,)

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[1] % 4 or self.b.shape != (self.W.shape[1],):
            raise ShapeError("LSTM weights must be (hidden + input, 4 * hidden) with matching bias")
        if self.W.shape[0] <= self.hidden:
            raise ShapeError("LSTM weight matrix has no input rows")

    @property
    def hidden(self) -> int:
        return self.W.shape[1] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[0] - self.hidden


def lstm_cell_step(p: LstmCellParams, x_t, h_prev, c_prev):
    """One cell update; works on single vectors or on batches (leading axis)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H = p.hidden
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ShapeError("cell inputs do not match the parameter shapes")
    a = np.concatenate([h_prev, x_t], axis=-1) @ p.W + p.b
    i = logistic(a[..., :H])
    f = logistic(a[..., H : 2 * H])
    o = logistic(a[..., 2 * H : 3 * H])
    g = np.tanh(a[..., 3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class LstmModel:
    conv1_w: np.ndarray  # (3, 3, 1, channels)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (3, 3, channels, 1)
    conv2_b: np.ndarray
    layers: list[LstmCellParams]
    out_w: np.ndarray  # (hidden, 2)
    out_b: np.ndarray
    block: int = DEFAULT_BLOCK
    patch_size: int = 64

    def __post_init__(self):
        ch = self.conv1_w.shape[3]
        if self.conv1_w.shape != (3, 3, 1, ch) or self.conv1_b.shape != (ch,):
            raise ShapeError("first convolution must be 3x3 from 1 channel")
        if self.conv2_w.shape != (3, 3, ch, 1) or self.conv2_b.shape != (1,):
            raise ShapeError("second convolution must be 3x3 down to 1 channel")
        if not self.layers:
            raise ShapeError("at least one LSTM layer required")
        if self.patch_size % self.block:
            raise ShapeError("patch size must be a multiple of the block size")
        if self.layers[0].input_size != self.block * self.block:
            raise ShapeError("first LSTM layer input must equal the block area")
        for lo, hi in zip(self.layers[:-1], self.layers[1:]):
            if hi.input_size != lo.hidden:
                raise ShapeError("stacked LSTM layer sizes disagree")
        if self.out_w.shape != (self.layers[-1].hidden, N_CLASSES) or self.out_b.shape != (N_CLASSES,):
            raise ShapeError("softmax weights must be (hidden, 2)")

    @property
    def hidden(self) -> int:
        return self.layers[-1].hidden

    @property
    def seq_len(self) -> int:
        return (self.patch_size // self.block) ** 2

    def arch(self) -> dict:
        return {
            "kind": "lstm",
            "hidden": self.hidden,
            "n_layers": len(self.layers),
            "block": self.block,
            "patch_size": self.patch_size,
            "conv_channels": int(self.conv1_w.shape[3]),
        }

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"conv1_w": self.conv1_w, "conv1_b": self.conv1_b,
               "conv2_w": self.conv2_w, "conv2_b": self.conv2_b}
        for k, layer in enumerate(self.layers):
            out[f"lstm{k}_W"] = layer.W
            out[f"lstm{k}_b"] = layer.b
        out["out_w"] = self.out_w
        out["out_b"] = self.out_b
        return out


def _shapes(hidden, n_layers, block, channels):
    shapes = {"conv1_w": (3, 3, 1, channels), "conv1_b": (channels,),
              "conv2_w": (3, 3, channels, 1), "conv2_b": (1,)}
    d = block * block
    for k in range(n_layers):
        shapes[f"lstm{k}_W"] = (hidden + d, 4 * hidden)
        shapes[f"lstm{k}_b"] = (4 * hidden,)
        d = hidden
    shapes["out_w"] = (hidden, N_CLASSES)
    shapes["out_b"] = (N_CLASSES,)
    return shapes


def model_from_parameters(params: dict[str, np.ndarray], block: int, patch_size: int) -> LstmModel:
    n_layers = sum(1 for k in params if k.startswith("lstm") and k.endswith("_W"))
    return LstmModel(
        params["conv1_w"], params["conv1_b"], params["conv2_w"], params["conv2_b"],
        [LstmCellParams(params[f"lstm{k}_W"], params[f"lstm{k}_b"]) for k in range(n_layers)],
        params["out_w"], params["out_b"], block, patch_size,
    )


def zero_lstm(hidden=DEFAULT_HIDDEN, n_layers=DEFAULT_LAYERS, block=DEFAULT_BLOCK,
              patch_size=64, conv_channels=DEFAULT_CONV_CHANNELS) -> LstmModel:
    shapes = _shapes(hidden, n_layers, block, conv_channels)
    return model_from_parameters({k: np.zeros(s) for k, s in shapes.items()}, block, patch_size)


def init_lstm(rng: np.random.Generator, hidden=DEFAULT_HIDDEN, n_layers=DEFAULT_LAYERS,
              block=DEFAULT_BLOCK, patch_size=64, conv_channels=DEFAULT_CONV_CHANNELS) -> LstmModel:
    """Uniform initialization scaled by fan-in; forget-gate biases start at +1."""
    params = {}
    for name, shape in _shapes(hidden, n_layers, block, conv_channels).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        if name.startswith("conv"):
            fan_in = 9 * shape[2]
            lim = np.sqrt(6.0 / fan_in)
        else:
            lim = 1.0 / np.sqrt(shape[0])
        params[name] = rng.uniform(-lim, lim, size=shape)
    for k in range(n_layers):
        params[f"lstm{k}_b"][hidden : 2 * hidden] = 1.0
    return model_from_parameters(params, block, patch_size)


# ---------------------------------------------------------------------------
# building blocks with explicit backward passes


def _gather(a: np.ndarray, sign: int) -> np.ndarray:
    """``(B, H, W, C)`` to ``(B, H, W, 9, C)`` with ``out[p, k] = a[p + sign * s_k]`` (zero outside)."""
    _, h, w, _ = a.shape
    ap = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty(a.shape[:3] + (9, a.shape[3]))
    for k in range(9):
        oy, ox = 1 + sign * (k // 3 - 1), 1 + sign * (k % 3 - 1)
        out[:, :, :, k, :] = ap[:, oy : oy + h, ox : ox + w, :]
    return out


def _shift_sum(y: np.ndarray, sign: int) -> np.ndarray:
    """``(B, H, W, 9, C)`` to ``(B, H, W, C)`` with ``out[p] = sum_k y[p + sign * s_k, k]``."""
    _, h, w, _, c = y.shape
    yp = np.pad(y, ((0, 0), (1, 1), (1, 1), (0, 0), (0, 0)))
    out = np.zeros(y.shape[:3] + (c,))
    for k in range(9):
        oy, ox = 1 + sign * (k // 3 - 1), 1 + sign * (k % 3 - 1)
        out += yp[:, oy : oy + h, ox : ox + w, k, :]
    return out


# A 3x3 correlation is one GEMM plus nine shifts. The channel contraction is
# done on whichever side has fewer channels, so the 9x-expanded intermediate
# stays small.


def conv3x3_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 convolution (correlation) on channels-last ``(B, H, W, C)``."""
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    if cin <= cout:
        out = _gather(x, +1).reshape(-1, 9 * cin) @ w.reshape(9 * cin, cout)
        out = out.reshape(bsz, h, wd, cout)
    else:
        y = x.reshape(-1, cin) @ w.transpose(2, 0, 1, 3).reshape(cin, 9 * cout)
        out = _shift_sum(y.reshape(bsz, h, wd, 9, cout), +1)
    return out + b


def conv3x3_same_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray, input_grad: bool = True):
    """Gradients ``(dx, dw, db)``; ``dx`` is None when ``input_grad`` is false."""
    bsz, h, wd, cin = x.shape
    cout = w.shape[3]
    flat_dout = dout.reshape(-1, cout)
    if cin <= cout:
        dw = (_gather(x, +1).reshape(-1, 9 * cin).T @ flat_dout).reshape(w.shape)
    else:
        g = x.reshape(-1, cin).T @ _gather(dout, -1).reshape(-1, 9 * cout)
        dw = g.reshape(cin, 3, 3, cout).transpose(1, 2, 0, 3)
    dx = None
    if input_grad:
        if cout <= cin:
            dx = _gather(dout, -1).reshape(-1, 9 * cout) @ w.transpose(0, 1, 3, 2).reshape(9 * cout, cin)
            dx = dx.reshape(bsz, h, wd, cin)
        else:
            z = flat_dout @ w.transpose(3, 0, 1, 2).reshape(cout, 9 * cin)
            dx = _shift_sum(z.reshape(bsz, h, wd, 9, cin), -1)
    return dx, dw, flat_dout.sum(axis=0)


def to_blocks(maps: np.ndarray, block: int) -> np.ndarray:
    """``(B, P, P)`` maps to ``(B, T, block * block)`` tiles in row-major scan order."""
    bsz, p, _ = maps.shape
    g = p // block
    return maps.reshape(bsz, g, block, g, block).transpose(0, 1, 3, 2, 4).reshape(bsz, g * g, block * block)


def from_blocks(blocks: np.ndarray, block: int) -> np.ndarray:
    bsz, t, _ = blocks.shape
    g = int(round(np.sqrt(t)))
    return blocks.reshape(bsz, g, g, block, block).transpose(0, 1, 3, 2, 4).reshape(bsz, g * block, g * block)


@dataclass
class _LayerCache:
    xs: np.ndarray  # (T, B, D)
    hs: np.ndarray  # (T + 1, B, H)
    cs: np.ndarray  # (T + 1, B, H)
    acts: np.ndarray  # (T, B, 4H) activated gates


def _layer_forward(p: LstmCellParams, xs: np.ndarray) -> tuple[np.ndarray, _LayerCache]:
    t_len, bsz, d = xs.shape
    H = p.hidden
    wh, wx = p.W[:H], p.W[H:]
    xw = (xs.reshape(t_len * bsz, d) @ wx).reshape(t_len, bsz, 4 * H) + p.b
    hs = np.zeros((t_len + 1, bsz, H))
    cs = np.zeros((t_len + 1, bsz, H))
    acts = np.empty((t_len, bsz, 4 * H))
    for t in range(t_len):
        a = xw[t] + hs[t] @ wh
        acts[t, :, : 3 * H] = logistic(a[:, : 3 * H])
        acts[t, :, 3 * H :] = np.tanh(a[:, 3 * H :])
        i, f, o, g = (acts[t, :, k * H : (k + 1) * H] for k in range(4))
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
    return hs[1:], _LayerCache(xs, hs, cs, acts)


def _layer_backward(p: LstmCellParams, cache: _LayerCache, dhs: np.ndarray):
    """Backprop through time given gradients w.r.t. every output ``h_t``."""
    t_len, bsz, d = cache.xs.shape
    H = p.hidden
    wh, wx = p.W[:H], p.W[H:]
    das = np.empty((t_len, bsz, 4 * H))
    dh_next = np.zeros((bsz, H))
    dc_next = np.zeros((bsz, H))
    for t in range(t_len - 1, -1, -1):
        acts = cache.acts[t]
        i, f, o, g = (acts[:, k * H : (k + 1) * H] for k in range(4))
        dh = dhs[t] + dh_next
        tc = np.tanh(cache.cs[t + 1])
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = das[t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * cache.cs[t] * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = da @ wh.T
    flat_da = das.reshape(t_len * bsz, 4 * H)
    dW = np.empty_like(p.W)
    dW[:H] = cache.hs[:-1].reshape(t_len * bsz, H).T @ flat_da
    dW[H:] = cache.xs.reshape(t_len * bsz, d).T @ flat_da
    db = flat_da.sum(axis=0)
    dxs = (flat_da @ wx.T).reshape(t_len, bsz, d)
    return dW, db, dxs


def _check_blocks(model: LstmModel, blocks) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim == 2:
        blocks = blocks[None]
    d = model.layers[0].input_size
    if blocks.ndim != 3 or blocks.shape[1:] != (model.seq_len, d):
        raise ShapeError(f"expected {model.seq_len} blocks of {d} values, got {blocks.shape[1:]}")
    return blocks


def _stack_forward(model: LstmModel, blocks: np.ndarray):
    seq = blocks.transpose(1, 0, 2)  # (T, B, D)
    caches = []
    for layer in model.layers:
        seq, cache = _layer_forward(layer, seq)
        caches.append(cache)
    feat = seq[-1]
    return feat, caches


def lstm_forward(model: LstmModel, blocks) -> np.ndarray:
    """Class probabilities from an already tiled sequence ``(T, D)`` or ``(B, T, D)``."""
    single = np.asarray(blocks).ndim == 2
    feat, _ = _stack_forward(model, _check_blocks(model, blocks))
    probs = softmax(feat @ model.out_w + model.out_b)
    return probs[0] if single else probs


def _front_end(model: LstmModel, maps: np.ndarray):
    x0 = maps[..., None]
    z1 = conv3x3_same(x0, model.conv1_w, model.conv1_b)
    r1 = np.maximum(z1, 0.0)
    z2 = conv3x3_same(r1, model.conv2_w, model.conv2_b)
    return x0, z1, r1, to_blocks(z2[..., 0], model.block)


def _check_maps(model: LstmModel, maps) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 2:
        maps = maps[None]
    if maps.ndim != 3 or maps.shape[1:] != (model.patch_size, model.patch_size):
        raise ShapeError(f"expected {model.patch_size}x{model.patch_size} input maps, got {maps.shape}")
    return maps


def lstm_predict(model: LstmModel, maps, batch_size: int = 128) -> np.ndarray:
    """Class probabilities ``(n, 2)`` for input maps ``(n, P, P)``."""
    maps = _check_maps(model, maps)
    out = []
    for start in range(0, maps.shape[0], batch_size):
        *_, blocks = _front_end(model, maps[start : start + batch_size])
        out.append(lstm_forward(model, blocks))
    return np.concatenate(out, axis=0) if out else np.zeros((0, N_CLASSES))


def lstm_loss(model: LstmModel, maps, labels, weight_decay: float = 0.0) -> float:
    probs = lstm_predict(model, maps, batch_size=max(1, len(np.atleast_1d(labels))))
    loss = cross_entropy_loss(probs, labels)
    if weight_decay:
        loss += 0.5 * weight_decay * _weight_norm(model)
    return loss


def _weight_norm(model: LstmModel) -> float:
    return sum(float(np.sum(v * v)) for k, v in model.parameters().items() if not k.endswith("_b"))


def lstm_loss_and_grads(model: LstmModel, maps, labels, weight_decay: float = 0.0):
    """Cross-entropy over the batch and gradients for every parameter block."""
    maps = _check_maps(model, maps)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    x0, z1, r1, blocks = _front_end(model, maps)
    feat, caches = _stack_forward(model, blocks)
    probs = softmax(feat @ model.out_w + model.out_b)
    loss = cross_entropy_loss(probs, labels)
    m = maps.shape[0]

    dlogits = probs.copy()
    dlogits[np.arange(m), labels] -= 1.0
    dlogits /= m
    grads = {"out_w": feat.T @ dlogits, "out_b": dlogits.sum(axis=0)}
    t_len = blocks.shape[1]
    dhs = np.zeros((t_len, m, model.hidden))
    dhs[-1] = dlogits @ model.out_w.T
    for k in range(len(model.layers) - 1, -1, -1):
        dW, db, dhs = _layer_backward(model.layers[k], caches[k], dhs)
        grads[f"lstm{k}_W"] = dW
        grads[f"lstm{k}_b"] = db

    dz2 = from_blocks(dhs.transpose(1, 0, 2), model.block)[..., None]
    dr1, grads["conv2_w"], grads["conv2_b"] = conv3x3_same_backward(r1, model.conv2_w, dz2)
    dz1 = dr1 * (z1 > 0)
    _, grads["conv1_w"], grads["conv1_b"] = conv3x3_same_backward(x0, model.conv1_w, dz1, input_grad=False)

    if weight_decay:
        params = model.parameters()
        for k in grads:
            if not k.endswith("_b"):
                grads[k] = grads[k] + weight_decay * params[k]
        loss += 0.5 * weight_decay * _weight_norm(model)
    check_finite_grads(grads)
    return loss, grads


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)


def dihedral(maps: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Apply one of the 8 square symmetries per map (code: rot90 count + 4 * transpose)."""
    out = np.empty_like(maps)
    for code in range(8):
        sel = codes == code
        if not sel.any():
            continue
        m = maps[sel]
        if code >= 4:
            m = m.transpose(0, 2, 1)
        out[sel] = np.rot90(m, code % 4, axes=(1, 2))
    return out


def train_lstm_classifier(maps, labels, cfg: TrainConfig | None = None, hidden=DEFAULT_HIDDEN,
                          n_layers=DEFAULT_LAYERS, block=DEFAULT_BLOCK,
                          conv_channels=DEFAULT_CONV_CHANNELS, augment: bool = False, log=None):
    """Train on labeled input maps ``(n, P, P)`` (label 1 = manipulated).

    With ``augment`` every mini-batch sample gets a random square symmetry.
    Returns ``(model, history)``; ``history.epoch_losses[k]`` is the mean
    mini-batch loss of epoch ``k``.
    """
    cfg = cfg or TrainConfig(epochs=20)
    maps = np.asarray(maps, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if maps.ndim != 3 or maps.shape[0] == 0 or maps.shape[1] != maps.shape[2]:
        raise TrainingError("training maps must be a non-empty (n, P, P) stack")
    if labels.shape[0] != maps.shape[0]:
        raise TrainingError("one label per map required")
    if len(np.unique(labels)) < 2:
        raise TrainingError("training set must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    model = init_lstm(rng, hidden, n_layers, block, maps.shape[1], conv_channels)
    opt = Adam(model.parameters(), cfg)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in minibatches(maps.shape[0], cfg.batch_size, rng):
            batch = maps[idx]
            if augment:
                batch = dihedral(batch, rng.integers(0, 8, size=len(idx)))
            loss, grads = lstm_loss_and_grads(model, batch, labels[idx], cfg.weight_decay)
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        history.epoch_losses.append(total / count)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {history.epoch_losses[-1]:.4f}")
    return model, history
