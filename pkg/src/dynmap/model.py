"""Small convolutional predictor mapping local observations + pose to global maps.

Input is an 8-channel feature grid: five channels of what the robot saw in
the input window (flow, direction cos/sin, entropy, visibility) and three
pose channels. Two 3x3 convolutions feed three 1x1 heads (flow, entropy,
direction). Each head also owns a learned per-cell prior map, which is how
the network stores the environment-specific layout a positional embedding
would otherwise carry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .descriptors import DescriptorMaps
from .grid import GridSpec, PoseStamped, SpecMismatch
from .losses import LossConfig, direction_loss, entropy_loss, flow_loss

N_CHANNELS = 8
OBS_CHANNELS = slice(0, 5)
POSE_CHANNELS = slice(5, 8)
HIDDEN = 16
LEAK = 0.1
POSE_BLOB_SIGMA = 2.0  # cells
PRIOR_CLIP = 0.99  # keeps initial priors away from the activations' flat tails

PARAM_SHAPES = {
    "conv1_w": lambda h, w: (HIDDEN, N_CHANNELS, 3, 3),
    "conv1_b": lambda h, w: (HIDDEN,),
    "conv2_w": lambda h, w: (HIDDEN, HIDDEN, 3, 3),
    "conv2_b": lambda h, w: (HIDDEN,),
    "flow_w": lambda h, w: (1, HIDDEN),
    "flow_b": lambda h, w: (1,),
    "flow_prior": lambda h, w: (1, h, w),
    "entropy_w": lambda h, w: (1, HIDDEN),
    "entropy_b": lambda h, w: (1,),
    "entropy_prior": lambda h, w: (1, h, w),
    "dir_w": lambda h, w: (2, HIDDEN),
    "dir_b": lambda h, w: (2,),
    "dir_prior": lambda h, w: (2, h, w),
}


@dataclass
class FeatureTensor:
    spec: GridSpec
    data: np.ndarray  # (8, height, width)
    pose: PoseStamped

    def __post_init__(self):
        if self.data.shape != (N_CHANNELS,) + self.spec.shape:
            raise SpecMismatch(f"feature shape {self.data.shape} does not match grid")


@dataclass
class ModelParams:
    spec: GridSpec
    arrays: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ModelParams":
        h, w = spec.shape
        return cls(spec, {k: np.zeros(f(h, w)) for k, f in PARAM_SHAPES.items()})

    @classmethod
    def init(cls, spec: GridSpec, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        p = cls.zeros(spec)
        a = p.arrays
        a["conv1_w"][:] = rng.standard_normal(a["conv1_w"].shape) * math.sqrt(2.0 / (N_CHANNELS * 9))
        a["conv2_w"][:] = rng.standard_normal(a["conv2_w"].shape) * math.sqrt(2.0 / (HIDDEN * 9))
        for k in ("flow_w", "entropy_w", "dir_w"):
            a[k][:] = rng.standard_normal(a[k].shape) * math.sqrt(1.0 / HIDDEN)
        return p

    def init_priors(self, targets) -> None:
        """Set each head's prior map to the per-cell mean of training targets
        (in pre-activation space), so training starts from the layout average."""
        flow = np.mean([t.flow for t in targets], axis=0)
        ent = np.mean([t.entropy for t in targets], axis=0)
        dc = np.mean([t.dir_cos for t in targets], axis=0)
        ds = np.mean([t.dir_sin for t in targets], axis=0)
        a = self.arrays
        a["flow_prior"][0] = _logit(flow) - a["flow_b"][0]
        a["entropy_prior"][0] = _logit(ent) - a["entropy_b"][0]
        a["dir_prior"][0] = np.arctanh(np.clip(dc, -PRIOR_CLIP, PRIOR_CLIP)) - a["dir_b"][0]
        a["dir_prior"][1] = np.arctanh(np.clip(ds, -PRIOR_CLIP, PRIOR_CLIP)) - a["dir_b"][1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.spec, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def __getitem__(self, key):
        return self.arrays[key]


def pose_channels(pose: PoseStamped, spec: GridSpec) -> np.ndarray:
    """Gaussian bump at the robot's cell plus broadcast heading cos/sin."""
    rows, cols = np.indices(spec.shape)
    r0 = (pose.y - spec.origin_y) / spec.cell_size - 0.5
    c0 = (pose.x - spec.origin_x) / spec.cell_size - 0.5
    blob = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * POSE_BLOB_SIGMA**2))
    yaw = pose.yaw
    return np.stack([blob, np.full(spec.shape, math.cos(yaw)), np.full(spec.shape, math.sin(yaw))])


def featurize(local: DescriptorMaps, vis: np.ndarray, pose: PoseStamped) -> FeatureTensor:
    spec = local.spec
    vis = np.asarray(vis, dtype=bool)
    if vis.shape != spec.shape:
        raise SpecMismatch("visibility does not match the map grid")
    obs = np.stack([local.flow, local.dir_cos, local.dir_sin, local.entropy,
                    np.ones(spec.shape)]).astype(float)
    obs = np.where(vis[None], obs, 0.0)
    return FeatureTensor(spec, np.concatenate([obs, pose_channels(pose, spec)]), pose)


@dataclass(frozen=True)
class AugmentConfig:
    feature_noise_sigma: float = 0.1
    feature_dropout: float = 0.01
    pose_translation: float = 0.2
    pose_rotation_deg: float = 5.0
    pose_dropout: float = 0.3


def augment(features: FeatureTensor, cfg: AugmentConfig, rng: np.random.Generator):
    """Training-time perturbation; returns ``(features, pose)``."""
    data = features.data.copy()
    obs = data[OBS_CHANNELS]
    shape = obs.shape
    mult = 1.0 + cfg.feature_noise_sigma * rng.standard_normal(shape)
    drop = rng.random(shape) < cfg.feature_dropout
    data[OBS_CHANNELS] = np.where(drop, 0.0, obs * mult)
    pose = features.pose
    shift = rng.uniform(-1.0, 1.0, 3)
    if cfg.pose_translation > 0 or cfg.pose_rotation_deg > 0:
        pose = PoseStamped.from_yaw(
            pose.t,
            pose.x + cfg.pose_translation * shift[0],
            pose.y + cfg.pose_translation * shift[1],
            pose.yaw + math.radians(cfg.pose_rotation_deg) * shift[2],
            pose.z,
        )
        data[POSE_CHANNELS] = pose_channels(pose, features.spec)
    if rng.random() < cfg.pose_dropout:
        data[POSE_CHANNELS] = 0.0
    return FeatureTensor(features.spec, data, pose), pose


def _leaky(z):
    return np.where(z > 0, z, LEAK * z)


# Pre-activation clamps. Past them float64 would round the squashed output
# onto the closed bound; the true derivative there is below 1e-12 anyway.
SIGMOID_CLAMP = 30.0
TANH_CLAMP = 15.0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.clip(z, -SIGMOID_CLAMP, SIGMOID_CLAMP)))


def _logit(p):
    p = np.clip(p, 1.0 - PRIOR_CLIP, PRIOR_CLIP)
    return np.log(p / (1.0 - p))


def _im2col(x):
    """(N, C, H, W) -> (N, H*W, C*9) for a 3x3 'same' convolution."""
    n, c, h, w = x.shape
    pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    patches = sliding_window_view(pad, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * 9)


def _col2im(cols, c, h, w):
    n = cols.shape[0]
    cols = cols.reshape(n, h, w, c, 3, 3)
    pad = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            pad[:, :, i:i + h, j:j + w] += cols[..., i, j].transpose(0, 3, 1, 2)
    return pad[:, :, 1:-1, 1:-1]


@dataclass
class Outputs:
    flow: np.ndarray      # (N, H, W)
    entropy: np.ndarray
    dir_cos: np.ndarray
    dir_sin: np.ndarray
    cache: dict

    def maps(self, spec: GridSpec, k: int = 0, num_bins: int = 8) -> DescriptorMaps:
        c, s = self.dir_cos[k], self.dir_sin[k]
        return DescriptorMaps(spec, self.flow[k].copy(), c.copy(), s.copy(),
                              np.hypot(c, s) > 0, self.entropy[k].copy(),
                              self.flow[k] > 0, num_bins, normalized=True)


def forward_batch(params: ModelParams, x: np.ndarray,
                  dropout_mask: Optional[np.ndarray] = None) -> Outputs:
    """Batched forward pass over features ``x`` of shape (N, 8, H, W).

    ``dropout_mask`` (same shape as ``x``, already scaled) is applied to the
    input in training mode; inference passes ``None``.
    """
    a = params.arrays
    x = np.asarray(x, dtype=float)
    if dropout_mask is not None:
        x = x * dropout_mask
    n, _, h, w = x.shape
    cols1 = _im2col(x)
    z1 = cols1 @ a["conv1_w"].reshape(HIDDEN, -1).T + a["conv1_b"]
    h1 = _leaky(z1)
    cols2 = _im2col(h1.reshape(n, h, w, HIDDEN).transpose(0, 3, 1, 2))
    z2 = cols2 @ a["conv2_w"].reshape(HIDDEN, -1).T + a["conv2_b"]
    h2 = _leaky(z2)
    zf = h2 @ a["flow_w"].T + a["flow_b"] + a["flow_prior"].reshape(1, -1).T
    ze = h2 @ a["entropy_w"].T + a["entropy_b"] + a["entropy_prior"].reshape(1, -1).T
    zd = h2 @ a["dir_w"].T + a["dir_b"] + a["dir_prior"].reshape(2, -1).T
    flow = _sigmoid(zf[..., 0]).reshape(n, h, w)
    ent = _sigmoid(ze[..., 0]).reshape(n, h, w)
    d = np.tanh(np.clip(zd, -TANH_CLAMP, TANH_CLAMP))
    cache = {"cols1": cols1, "z1": z1, "cols2": cols2, "z2": z2, "h2": h2, "d": d,
             "zf": zf, "ze": ze, "zd": zd}
    return Outputs(flow, ent, d[..., 0].reshape(n, h, w), d[..., 1].reshape(n, h, w), cache)


def forward(params: ModelParams, features: FeatureTensor,
            dropout_mask: Optional[np.ndarray] = None) -> DescriptorMaps:
    mask = None if dropout_mask is None else dropout_mask[None]
    out = forward_batch(params, features.data[None], mask)
    return out.maps(features.spec)


def direction_weights(gt: DescriptorMaps, weights: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Weights for the direction loss: motion cells without a dominant
    direction are demoted to background weight (scaled, so W stays linear)."""
    demote = gt.flow_valid & ~gt.dir_valid
    return np.where(demote, weights * (cfg.w_bg / cfg.w_valid), weights)


def sample_loss(out: Outputs, k: int, gt: DescriptorMaps, weights: np.ndarray,
                cfg: LossConfig):
    """Total loss of batch element ``k`` and its gradients w.r.t. the four outputs."""
    lf, gf = flow_loss(out.flow[k], gt.flow, weights, cfg)
    le, ge = entropy_loss(out.entropy[k], gt.entropy, weights, cfg)
    wd = direction_weights(gt, weights, cfg)
    ld, (gc, gs) = direction_loss(out.dir_cos[k], out.dir_sin[k], gt.dir_cos, gt.dir_sin, wd, cfg)
    parts = {"flow": lf, "entropy": le, "direction": ld}
    return lf + le + ld, (gf, ge, gc, gs), parts


def backward_batch(params: ModelParams, x: np.ndarray, gts, weights, cfg: LossConfig,
                   dropout_mask: Optional[np.ndarray] = None):
    """Mean loss over the batch and exact parameter gradients."""
    a = params.arrays
    n, _, h, w = x.shape
    out = forward_batch(params, x, dropout_mask)
    total = 0.0
    d_flow = np.zeros((n, h, w))
    d_ent = np.zeros((n, h, w))
    d_dir = np.zeros((n, h * w, 2))
    for k in range(n):
        loss, (gf, ge, gc, gs), _ = sample_loss(out, k, gts[k], weights[k], cfg)
        total += loss / n
        d_flow[k] = gf / n
        d_ent[k] = ge / n
        d_dir[k, :, 0] = gc.ravel() / n
        d_dir[k, :, 1] = gs.ravel() / n
    c = out.cache
    grads = params.zeros_like().arrays
    f = out.flow.reshape(n, -1)
    e = out.entropy.reshape(n, -1)
    dzf = (d_flow.reshape(n, -1) * f * (1 - f))[..., None]
    dze = (d_ent.reshape(n, -1) * e * (1 - e))[..., None]
    dzd = d_dir * (1 - c["d"] ** 2)
    h2 = c["h2"]
    grads["flow_w"] = np.einsum("npo,npi->oi", dzf, h2)
    grads["flow_b"] = dzf.sum(axis=(0, 1))
    grads["flow_prior"] = dzf.sum(axis=0).T.reshape(1, h, w)
    grads["entropy_w"] = np.einsum("npo,npi->oi", dze, h2)
    grads["entropy_b"] = dze.sum(axis=(0, 1))
    grads["entropy_prior"] = dze.sum(axis=0).T.reshape(1, h, w)
    grads["dir_w"] = np.einsum("npo,npi->oi", dzd, h2)
    grads["dir_b"] = dzd.sum(axis=(0, 1))
    grads["dir_prior"] = dzd.sum(axis=0).T.reshape(2, h, w)
    dh2 = dzf @ a["flow_w"] + dze @ a["entropy_w"] + dzd @ a["dir_w"]
    dz2 = dh2 * np.where(c["z2"] > 0, 1.0, LEAK)
    grads["conv2_w"] = np.einsum("npo,npi->oi", dz2, c["cols2"]).reshape(a["conv2_w"].shape)
    grads["conv2_b"] = dz2.sum(axis=(0, 1))
    dcols2 = dz2 @ a["conv2_w"].reshape(HIDDEN, -1)
    dh1 = _col2im(dcols2, HIDDEN, h, w).transpose(0, 2, 3, 1).reshape(n, h * w, HIDDEN)
    dz1 = dh1 * np.where(c["z1"] > 0, 1.0, LEAK)
    grads["conv1_w"] = np.einsum("npo,npi->oi", dz1, c["cols1"]).reshape(a["conv1_w"].shape)
    grads["conv1_b"] = dz1.sum(axis=(0, 1))
    return total, ModelParams(params.spec, grads)


def backward(params: ModelParams, features: FeatureTensor, gt: DescriptorMaps,
             weights: np.ndarray, cfg: LossConfig = LossConfig(),
             dropout_mask: Optional[np.ndarray] = None):
    """Single-sample total loss (flow + direction + entropy) and gradients."""
    mask = None if dropout_mask is None else dropout_mask[None]
    return backward_batch(params, features.data[None], [gt], [weights], cfg, mask)


def input_dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask over the observation channels; pose channels pass."""
    mask = np.ones(shape)
    if p > 0:
        obs_shape = (shape[0], 5) + tuple(shape[2:]) if len(shape) == 4 else (5,) + tuple(shape[1:])
        keep = rng.random(obs_shape) >= p
        if len(shape) == 4:
            mask[:, OBS_CHANNELS] = keep / (1.0 - p)
        else:
            mask[OBS_CHANNELS] = keep / (1.0 - p)
    return mask


def batch_loss(params: ModelParams, x: np.ndarray, gts, weights, cfg: LossConfig,
               dropout_mask: Optional[np.ndarray] = None) -> float:
    """Mean total loss only; the cheap half of :func:`backward_batch`."""
    out = forward_batch(params, x, dropout_mask)
    return sum(sample_loss(out, k, gts[k], weights[k], cfg)[0] for k in range(len(x))) / len(x)


def _regimes(params: ModelParams, x: np.ndarray, gts, cfg: LossConfig,
             dropout_mask: Optional[np.ndarray]) -> list:
    """Which side of every kink the loss sits on: leaky-rectifier signs,
    Huber quadratic/linear zones and the squashing clamps."""
    out = forward_batch(params, x, dropout_mask)
    flow_gt = np.stack([g.flow for g in gts])
    ent_gt = np.stack([g.entropy for g in gts])
    return [out.cache["z1"] > 0, out.cache["z2"] > 0,
            np.abs(out.flow - flow_gt) <= cfg.beta, np.abs(out.entropy - ent_gt) <= cfg.beta,
            np.abs(out.cache["zf"]) < SIGMOID_CLAMP, np.abs(out.cache["ze"]) < SIGMOID_CLAMP,
            np.abs(out.cache["zd"]) < TANH_CLAMP]


def gradient_check(params: ModelParams, x: np.ndarray, gts, weights, cfg: LossConfig,
                   dropout_mask: Optional[np.ndarray] = None, h: float = 1e-4,
                   floor: float = 1e-7, max_entries: int = 24, seed: int = 0,
                   min_step: float = 1e-7) -> float:
    """Max relative error between backprop and central differences.

    Tensors with at most ``max_entries`` entries are checked entry by entry;
    larger ones on a seeded random subset of that size. One extra probe
    along a random direction through all parameters at once covers the rest.

    Central differences only measure the derivative when the loss is smooth
    on the probed interval. A probe whose endpoints fall on a different side
    of any kink than the base point is repeated with a step ten times
    smaller, down to ``min_step``.
    """
    params = params.copy()
    _, grads = backward_batch(params, x, gts, weights, cfg, dropout_mask)
    base = _regimes(params, x, gts, cfg, dropout_mask)
    rng = np.random.default_rng(seed)

    def shift(direction, step):
        for k, d in direction.items():
            params.arrays[k] += step * d

    def evaluate():
        loss = batch_loss(params, x, gts, weights, cfg, dropout_mask)
        smooth = all(np.array_equal(a, b)
                     for a, b in zip(_regimes(params, x, gts, cfg, dropout_mask), base))
        return loss, smooth

    def numeric(direction):
        step = h
        while True:
            shift(direction, step)
            up, smooth_up = evaluate()
            shift(direction, -2 * step)
            down, smooth_down = evaluate()
            shift(direction, step)
            if (smooth_up and smooth_down) or step / 10 < min_step:
                return (up - down) / (2 * step)
            step /= 10

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), floor)

    worst = 0.0
    for k, arr in params.arrays.items():
        flat = range(arr.size) if arr.size <= max_entries else \
            rng.choice(arr.size, max_entries, replace=False)
        for i in flat:
            idx = np.unravel_index(int(i), arr.shape)
            e = np.zeros(arr.shape)
            e[idx] = 1.0
            worst = max(worst, rel(numeric({k: e}), grads.arrays[k][idx]))
    direction = {k: rng.standard_normal(v.shape) for k, v in params.arrays.items()}
    norm = math.sqrt(sum(float(np.sum(d * d)) for d in direction.values()))
    direction = {k: d / norm for k, d in direction.items()}
    analytic = sum(float(np.sum(grads.arrays[k] * d)) for k, d in direction.items())
    return max(worst, rel(numeric(direction), analytic))
