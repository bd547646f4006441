"""Minimal differentiable layers and the gated depth-bin fusion network.

Everything runs on float64 numpy arrays with the channel axis last, so a
"1x1 convolution" is a per-position linear map over channels.  Each layer
caches what its backward pass needs; backward passes return the input
gradient and accumulate parameter gradients on the layer.  Gradients are
exact analytic derivatives and are verified against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import SmoothingHead
from .losses import (NUM_BINS, DepthDistribution, loss_grad_wrt_probs,
                     total_depth_loss)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
INIT_SCALE = 0.1


class ShapeMismatch(Exception):
    pass


class DivergenceDetected(Exception):
    pass


class Conv1x1:
    """Pointwise linear map over the channel axis: y = x @ w.T + b."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.w = np.asarray(weight, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeMismatch("weight must be (out, in), bias (out,)")
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    @classmethod
    def seeded(cls, c_in: int, c_out: int, rng: np.random.Generator) -> "Conv1x1":
        w = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(c_out, c_in))
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=c_out)
        return cls(w, b)

    @classmethod
    def identity(cls, channels: int) -> "Conv1x1":
        return cls(np.eye(channels), np.zeros(channels))

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.w.shape[1]:
            raise ShapeMismatch(
                f"input has {x.shape[-1]} channels, expected {self.w.shape[1]}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        flat_x = self._x.reshape(-1, self.w.shape[1])
        flat_dy = dy.reshape(-1, self.w.shape[0])
        self.gw += flat_dy.T @ flat_x
        self.gb += flat_dy.sum(axis=0)
        return dy @ self.w

    def params(self):
        return [("w", self.w, self.gw), ("b", self.b, self.gb)]


class BatchNorm:
    """Per-channel batch normalization (channel-last).

    Training mode normalizes with statistics of the current batch (all
    leading axes) and folds them into running estimates with momentum
    0.1; inference mode applies the frozen running statistics.
    """

    def __init__(self, channels: int):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.g_gamma = np.zeros(channels)
        self.g_beta = np.zeros(channels)
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.gamma.shape[0]:
            raise ShapeMismatch(
                f"input has {x.shape[-1]} channels, expected {self.gamma.shape[0]}")
        axes = tuple(range(x.ndim - 1))
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += BN_MOMENTUM * (mu - self.running_mean)
            self.running_var += BN_MOMENTUM * (var - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, training, x.shape)
        return self.gamma * xhat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, training, shape = self._cache
        axes = tuple(range(dy.ndim - 1))
        self.g_gamma += (dy * xhat).sum(axis=axes)
        self.g_beta += dy.sum(axis=axes)
        dxhat = dy * self.gamma
        if not training:
            return dxhat * inv_std
        m = np.prod(shape[:-1])
        return (inv_std / m) * (m * dxhat
                                - dxhat.sum(axis=axes)
                                - xhat * (dxhat * xhat).sum(axis=axes))

    def params(self):
        return [("gamma", self.gamma, self.g_gamma),
                ("beta", self.beta, self.g_beta)]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)

    def params(self):
        return []


class Sigmoid:
    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._y * (1.0 - self._y)

    def params(self):
        return []


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray,
                     axis: int = -1) -> np.ndarray:
    inner = (dprobs * probs).sum(axis=axis, keepdims=True)
    return probs * (dprobs - inner)


class SqueezeExcite:
    """Channel recalibration: scale channels by a gated squeeze of their
    global averages.  Two weight matrices, no biases."""

    def __init__(self, w1: np.ndarray, w2: np.ndarray):
        w1 = np.asarray(w1, dtype=np.float64)
        w2 = np.asarray(w2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w2.shape != (w1.shape[1], w1.shape[0]):
            raise ShapeMismatch("need w1 (C/r, C) and w2 (C, C/r)")
        self.w1 = w1
        self.w2 = w2
        self.gw1 = np.zeros_like(w1)
        self.gw2 = np.zeros_like(w2)
        self._cache = None

    @classmethod
    def seeded(cls, channels: int, reduction: int,
               rng: np.random.Generator) -> "SqueezeExcite":
        if channels % reduction != 0:
            raise ShapeMismatch(
                f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        w1 = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden, channels))
        w2 = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(channels, hidden))
        return cls(w1, w2)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[-1] != self.w1.shape[1]:
            raise ShapeMismatch(
                f"expected (H, W, {self.w1.shape[1]}) input, got {x.shape}")
        z = x.mean(axis=(0, 1))
        pre1 = self.w1 @ z
        h = np.maximum(pre1, 0.0)
        pre2 = self.w2 @ h
        s = 1.0 / (1.0 + np.exp(-pre2))
        self._cache = (x, z, pre1, h, s)
        return x * s

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, z, pre1, h, s = self._cache
        ds = (dy * x).sum(axis=(0, 1))
        dpre2 = ds * s * (1.0 - s)
        self.gw2 += np.outer(dpre2, h)
        dh = self.w2.T @ dpre2
        dpre1 = dh * (pre1 > 0)
        self.gw1 += np.outer(dpre1, z)
        dz = self.w1.T @ dpre1
        return dy * s + dz / (x.shape[0] * x.shape[1])

    def params(self):
        return [("w1", self.w1, self.gw1), ("w2", self.w2, self.gw2)]


@dataclass
class TrainSample:
    """One supervised view: inputs plus densified targets and weights."""

    f_img: np.ndarray
    f_geo: np.ndarray
    target_depth: np.ndarray
    g: np.ndarray
    valid: np.ndarray


class GatedDepthFusion:
    """Toy depth modulator: encodes image and geometry streams, gates their
    concatenation with a per-pixel sigmoid attention value, adds the image
    stream back as a residual, and emits a per-pixel depth-bin distribution.
    """

    def __init__(self, image_channels: int, hidden: int = 16,
                 num_bins: int = NUM_BINS, seed: int = 0,
                 geo_channels: int = 2):
        rng = np.random.default_rng([int(seed), 0x5DF0])
        self.image_channels = image_channels
        self.geo_channels = geo_channels
        self.hidden = hidden
        self.num_bins = num_bins
        self.cam_conv = Conv1x1.seeded(image_channels, hidden, rng)
        self.cam_bn = BatchNorm(hidden)
        self.cam_relu = ReLU()
        self.geo_conv = Conv1x1.seeded(geo_channels, hidden, rng)
        self.geo_bn = BatchNorm(hidden)
        self.geo_relu = ReLU()
        self.gate_conv = Conv1x1.seeded(2 * hidden, 1, rng)
        self.gate_sigmoid = Sigmoid()
        self.feat_conv = Conv1x1.seeded(2 * hidden, hidden, rng)
        self.head_conv = Conv1x1.seeded(hidden, num_bins, rng)
        self._cache = None

    def _layers(self):
        return [self.cam_conv, self.cam_bn, self.geo_conv, self.geo_bn,
                self.gate_conv, self.feat_conv, self.head_conv]

    def forward(self, f_img: np.ndarray, f_geo: np.ndarray,
                training: bool = False) -> np.ndarray:
        if f_img.shape[:2] != f_geo.shape[:2]:
            raise ShapeMismatch(
                f"spatial dims differ: {f_img.shape[:2]} vs {f_geo.shape[:2]}")
        c = self.cam_relu.forward(
            self.cam_bn.forward(self.cam_conv.forward(f_img), training))
        g = self.geo_relu.forward(
            self.geo_bn.forward(self.geo_conv.forward(f_geo), training))
        cg = np.concatenate([c, g], axis=-1)
        a = self.gate_sigmoid.forward(self.gate_conv.forward(cg))
        f = self.feat_conv.forward(cg)
        fused = a * f + c
        logits = self.head_conv.forward(fused)
        probs = softmax(logits)
        self._cache = (a, f, probs)
        return probs

    def backward(self, dprobs: np.ndarray) -> None:
        a, f, probs = self._cache
        dlogits = softmax_backward(probs, dprobs)
        dfused = self.head_conv.backward(dlogits)
        da = (dfused * f).sum(axis=-1, keepdims=True)
        df = dfused * a
        dc_residual = dfused
        dcg = self.feat_conv.backward(df)
        dcg = dcg + self.gate_conv.backward(self.gate_sigmoid.backward(da))
        h = self.hidden
        dc = dcg[..., :h] + dc_residual
        dg = dcg[..., h:]
        self.cam_conv.backward(
            self.cam_bn.backward(self.cam_relu.backward(dc)))
        self.geo_conv.backward(
            self.geo_bn.backward(self.geo_relu.backward(dg)))

    def params(self):
        out = []
        for i, layer in enumerate(self._layers()):
            for name, value, grad in layer.params():
                out.append((f"{i}.{name}", value, grad))
        return out

    def zero_grads(self):
        for _, _, grad in self.params():
            grad[...] = 0.0

    def step(self, lr: float):
        for _, value, grad in self.params():
            value -= lr * grad

    def to_json(self) -> dict:
        state = {
            "imageChannels": self.image_channels,
            "geoChannels": self.geo_channels,
            "hidden": self.hidden,
            "numBins": self.num_bins,
            "tensors": {},
        }
        names = self._tensor_names()
        for name, arr in names.items():
            state["tensors"][name] = {"shape": list(arr.shape),
                                      "values": arr.ravel().tolist()}
        return state

    def _tensor_names(self):
        return {
            "camW": self.cam_conv.w, "camB": self.cam_conv.b,
            "camGamma": self.cam_bn.gamma, "camBeta": self.cam_bn.beta,
            "camMean": self.cam_bn.running_mean, "camVar": self.cam_bn.running_var,
            "geoW": self.geo_conv.w, "geoB": self.geo_conv.b,
            "geoGamma": self.geo_bn.gamma, "geoBeta": self.geo_bn.beta,
            "geoMean": self.geo_bn.running_mean, "geoVar": self.geo_bn.running_var,
            "gateW": self.gate_conv.w, "gateB": self.gate_conv.b,
            "featW": self.feat_conv.w, "featB": self.feat_conv.b,
            "headW": self.head_conv.w, "headB": self.head_conv.b,
        }

    @classmethod
    def from_json(cls, state: dict) -> "GatedDepthFusion":
        model = cls(state["imageChannels"], state["hidden"], state["numBins"],
                    geo_channels=state["geoChannels"])
        for name, arr in model._tensor_names().items():
            spec = state["tensors"][name]
            values = np.asarray(spec["values"], dtype=np.float64)
            arr[...] = values.reshape(spec["shape"])
        return model


def fusion_forward(f_img: np.ndarray, f_geo: np.ndarray,
                   model: GatedDepthFusion) -> DepthDistribution:
    """Inference pass; per-pixel distributions over depth bins."""
    return DepthDistribution(model.forward(f_img, f_geo, training=False))


def grad_check(loss_fn, params, analytic_grads, eps: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_fn()` must return the scalar loss as a function of the current
    contents of `params` (a list of arrays, perturbed in place here).
    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8).
    """
    worst = 0.0
    for arr, grad in zip(params, analytic_grads):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss_fn()
            flat[i] = orig - eps
            minus = loss_fn()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


def train(model: GatedDepthFusion, dataset, lr: float, iterations: int,
          gamma: float = 2.0):
    """Plain full-batch gradient descent on the composite depth loss.

    Records the (pre-update) loss at every iteration; raises
    DivergenceDetected if the loss ever goes non-finite.
    """
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    trace = []
    n = len(dataset)
    for _ in range(iterations):
        model.zero_grads()
        total = 0.0
        for sample in dataset:
            probs = model.forward(sample.f_img, sample.f_geo, training=True)
            loss = total_depth_loss(probs, sample.target_depth, sample.g,
                                    sample.valid, gamma)
            dprobs = loss_grad_wrt_probs(probs, sample.target_depth, sample.g,
                                         sample.valid, gamma) / n
            model.backward(dprobs)
            total += loss / n
        if not np.isfinite(total):
            raise DivergenceDetected(f"loss became {total}")
        trace.append(total)
        model.step(lr)
    return model, trace


class SmoothingHeadModel:
    """Trainable form of the 5-channel smoothing head (conv + BN + ReLU).

    `clamp=False` evaluates the pre-ReLU affine output.  Fitting uses it:
    the output ReLU is a nonnegativity clamp that is inactive at any good
    fit (depth targets are positive), but training through it permanently
    silences every point whose initial normalized output is negative.
    """

    def __init__(self):
        self.conv = Conv1x1(np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]), np.zeros(1))
        self.bn = BatchNorm(1)
        self.bn.running_var[...] = 1.0 - BN_EPS
        self.relu = ReLU()
        self._clamped = True

    def forward(self, features: np.ndarray, training: bool = False,
                clamp: bool = True) -> np.ndarray:
        y = self.bn.forward(self.conv.forward(features), training)
        self._clamped = clamp
        if clamp:
            y = self.relu.forward(y)
        return y[..., 0]

    def backward(self, dout: np.ndarray) -> None:
        dy = dout[..., None]
        if self._clamped:
            dy = self.relu.backward(dy)
        self.conv.backward(self.bn.backward(dy))

    def params(self):
        return self.conv.params() + self.bn.params()

    def zero_grads(self):
        for _, _, grad in self.params():
            grad[...] = 0.0

    def step(self, lr: float):
        for _, value, grad in self.params():
            value -= lr * grad

    def freeze(self) -> SmoothingHead:
        return SmoothingHead(
            weights=self.conv.w[0].copy(),
            bias=float(self.conv.b[0]),
            bn_gamma=float(self.bn.gamma[0]),
            bn_beta=float(self.bn.beta[0]),
            bn_mean=float(self.bn.running_mean[0]),
            bn_var=float(self.bn.running_var[0]),
        )


def fit_smoothing_head(features: np.ndarray, targets: np.ndarray, lr: float,
                       iterations: int, huber_delta: float = 1.0):
    """Fit the smoothing head to true depths by a Huber regression.

    The Huber loss (quadratic within huber_delta, linear outside) keeps
    the handful of boundary-crossed returns, whose residuals are tens of
    meters, from dragging the fit away from the bulk, while still pulling
    them toward their neighbor depths.  Training normalizes with batch
    statistics of the full point set and regresses the pre-clamp output
    (see SmoothingHeadModel); the returned head carries the accumulated
    running statistics.  Returns (head, per-iteration loss trace).
    """
    feats = np.asarray(features, dtype=np.float64)
    targs = np.asarray(targets, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != 5 or targs.shape != (feats.shape[0],):
        raise ShapeMismatch("need (n, 5) features and (n,) targets")
    model = SmoothingHeadModel()
    trace = []
    n = feats.shape[0]
    d = huber_delta
    # Warm up with squared error (whose gradient carries the output scale),
    # then switch to the Huber gradient so outliers stop dominating.
    warmup = iterations // 2
    for it in range(iterations):
        model.zero_grads()
        pred = model.forward(feats, training=True, clamp=False)
        resid = pred - targs
        small = np.abs(resid) <= d
        loss = float(np.mean(np.where(small, 0.5 * resid ** 2,
                                      d * (np.abs(resid) - 0.5 * d))))
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss}")
        trace.append(loss)
        if it < warmup:
            grad = 2.0 * resid / n
        else:
            grad = np.where(small, resid, d * np.sign(resid)) / n
        model.backward(grad)
        model.step(lr)
    return model.freeze(), trace
