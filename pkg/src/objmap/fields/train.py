"""Keyframe selection and batched training of all object fields at once."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..clustering import ObjectInstance
from ..dataset import Dataset
from .losses import LossResult, LossWeights, RayTargets, compute_losses
from .network import (FieldNetwork, NonFiniteError, Params, backward, check_finite, forward,
                      normalize_points, stack_params)
from .optim import adam_init, adam_step
from .render import composite, composite_backward
from .sampling import RayConfig, pixel_rays, resolve_surface, sample_depths
from .views import ObjectView, make_view, object_mask, observing_frames

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    rays_per_object: int = 32
    ray: RayConfig = field(default_factory=RayConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    n_keyframes: int = 12
    min_mask_area: int = 64
    bbox_pad: int = 0
    seed: int = 0
    n_freqs: int = 5
    hidden: int = 32
    n_layers: int = 4
    margin: float = 0.1
    dtype: str = "float32"


class TrainingDiverged(RuntimeError):
    pass


def greedy_maxmin(positions: np.ndarray, n: int) -> list[int]:
    """Farthest-point selection; starts from the point farthest from the mean.

    Ties go to the lowest index. Returns indices in ascending order.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if len(positions) <= n:
        return list(range(len(positions)))
    first = int(np.argmax(np.linalg.norm(positions - positions.mean(axis=0), axis=1)))
    chosen = [first]
    dmin = np.linalg.norm(positions - positions[first], axis=1)
    while len(chosen) < n:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(positions - positions[nxt], axis=1))
    return sorted(chosen)


def select_keyframes(obj: ObjectInstance, dataset: Dataset, n_keyframes: int,
                     min_area: int = 64) -> list[int]:
    """Frame indices used to supervise ``obj``.

    Candidates are frames where the object's mask covers more than
    ``min_area`` pixels (all observing frames if none does); at most
    ``n_keyframes`` are picked by max-min spacing of camera positions.
    """
    frames = observing_frames(obj, dataset)
    if not frames:
        raise ValueError(f"object {obj.object_id} is never observed")
    areas = [int(object_mask(obj, dataset, i).sum()) for i in frames]
    cand = [f for f, a in zip(frames, areas) if a > min_area] or frames
    pos = np.stack([dataset.poses[i][:3, 3] for i in cand])
    return [cand[j] for j in greedy_maxmin(pos, n_keyframes)]


@dataclass
class TrainResult:
    fields: list[FieldNetwork]
    history: np.ndarray  # (steps, K, 5): total, occ, depth, color, feat
    empty_terms: np.ndarray  # (K, 4) count of steps where a term had no supervised rays
    keyframes: list[list[int]]


@dataclass
class RayBatch:
    """Stacked rays for ``K`` objects: samples ``(K, R, S)`` and targets."""

    origins: np.ndarray  # (K, R, 3)
    dirs: np.ndarray  # (K, R, 3)
    depths: np.ndarray  # (K, R, S)
    targets: RayTargets

    @property
    def points(self) -> np.ndarray:
        return self.origins[:, :, None, :] + self.depths[..., None] * self.dirs[:, :, None, :]


def sample_object_rays(view: ObjectView, n_rays: int, cfg: RayConfig, rng: np.random.Generator):
    """Random pixels inside the view's 2D box with samples and supervision."""
    u0, v0, u1, v1 = view.bbox
    u = rng.integers(u0, u1 + 1, n_rays)
    v = rng.integers(v0, v1 + 1, n_rays)
    t_s, ok = resolve_surface(view.depth, u, v, view.fallback_depth, cfg.near)
    t_s = np.where(ok, t_s, cfg.near + 1.0)
    depths = sample_depths(t_s, cfg, rng)
    origins, dirs = pixel_rays(u, v, view.K, view.pose)
    feat, cov = view.features.lookup(u, v)
    depth = view.depth[v, u].astype(np.float64)
    return origins, dirs, depths, dict(
        ray_valid=ok, inside=view.mask[v, u], depth=depth, depth_valid=depth > cfg.near,
        color=view.color[v, u], feature=feat, feature_valid=cov)


def stack_batch(per_object: Sequence[tuple]) -> RayBatch:
    origins, dirs, depths, tg = zip(*per_object)
    targets = RayTargets(**{k: np.stack([t[k] for t in tg]) for k in tg[0]})
    return RayBatch(np.stack(origins), np.stack(dirs), np.stack(depths), targets)


def loss_and_gradients(params: Params, center: np.ndarray, half: np.ndarray, batch: RayBatch,
                       weights: LossWeights, n_freqs: int, n_layers: int) -> tuple[LossResult, Params]:
    """Forward render, masked losses and exact parameter gradients for stacked fields."""
    dtype = params["w0"].dtype
    K, R, S = batch.depths.shape
    x = normalize_points(batch.points.reshape(K, R * S, 3), center, half).astype(dtype)
    c, o, f, cache = forward(params, x, n_freqs, n_layers)
    D_e = f.shape[-1]
    o_r, c_r, f_r = o.reshape(K, R, S), c.reshape(K, R, S, 3), f.reshape(K, R, S, D_e)
    d = batch.depths.astype(dtype)
    O, D, C, F, T = composite(o_r, d, c_r, f_r)
    t = batch.targets
    cast = RayTargets(t.ray_valid, t.inside, t.depth.astype(dtype), t.depth_valid,
                      t.color.astype(dtype), t.feature.astype(dtype), t.feature_valid)
    res = compute_losses(O, D, C, F, cast, weights)
    g_o, g_c, g_f = composite_backward(o_r, d, c_r, f_r, T, *res.grads)
    grads = backward(params, cache, g_c.reshape(K, R * S, 3), g_o.reshape(K, R * S),
                     g_f.reshape(K, R * S, D_e), n_layers)
    return res, grads


def compute_gradients(fields: Sequence[FieldNetwork], batch: RayBatch,
                      weights: LossWeights) -> tuple[LossResult, list[Params]]:
    """Gradients of the summed loss w.r.t. each field's parameters.

    Raises:
        NonFiniteError: naming the first parameter whose gradient is not finite.
    """
    for fld in fields:
        check_finite(fld.params)
    f0 = fields[0]
    res, grads = loss_and_gradients(stack_params(fields), np.stack([f.center for f in fields]),
                                    np.stack([f.half_extent for f in fields]), batch, weights,
                                    f0.n_freqs, f0.n_layers)
    for k, fld in enumerate(fields):
        check_finite({name: g[k] for name, g in grads.items()},
                     f"gradient (object {fld.object_id})")
    return res, [{name: g[k] for name, g in grads.items()} for k in range(len(fields))]


def init_fields(objects: Sequence[ObjectInstance], feat_dim: int, cfg: TrainConfig) -> list[FieldNetwork]:
    fields = []
    for obj in objects:
        rng = np.random.default_rng([cfg.seed, obj.object_id, 0])
        fields.append(FieldNetwork.create(obj.bbox, feat_dim, rng, cfg.n_freqs, cfg.hidden,
                                          cfg.n_layers, cfg.margin, np.dtype(cfg.dtype),
                                          object_id=obj.object_id))
    return fields


def train_objects(objects: Sequence[ObjectInstance], dataset: Dataset, cfg: TrainConfig = TrainConfig(),
                  fields: Optional[list[FieldNetwork]] = None, feature_cache=None,
                  callback: Optional[Callable[[int, LossResult], None]] = None) -> TrainResult:
    """Train one field per object, all objects in one stacked computation per step.

    Every step each object draws one of its keyframes and ``rays_per_object``
    pixels inside its 2D box, using its own RNG stream seeded from
    ``(seed, object_id)``, so results do not depend on the other objects.
    """
    if not objects:
        return TrainResult([], np.zeros((cfg.steps, 0, 5)), np.zeros((0, 4), dtype=np.int64), [])
    if fields is None:
        fields = init_fields(objects, dataset.D_e, cfg)
    keyframes = [select_keyframes(o, dataset, cfg.n_keyframes, cfg.min_mask_area) for o in objects]
    views = [[make_view(o, dataset, i, cfg.bbox_pad, feature_cache, cfg.ray.near) for i in kf]
             for o, kf in zip(objects, keyframes)]
    rngs = [np.random.default_rng([cfg.seed, o.object_id, 1]) for o in objects]

    params = stack_params(fields)
    center = np.stack([f.center for f in fields])
    half = np.stack([f.half_extent for f in fields])
    state = adam_init(params)
    if all(f.opt_state for f in fields) and len({f.opt_state["t"] for f in fields}) == 1:
        # resume the optimizer where a previous run stopped
        for moment in ("m", "v"):
            state[moment] = {n: np.stack([f.opt_state[moment][n] for f in fields]) for n in params}
        state["t"] = fields[0].opt_state["t"]
    f0 = fields[0]
    K = len(objects)
    history = np.zeros((cfg.steps, K, 5))
    empty = np.zeros((K, 4), dtype=np.int64)
    for step in range(cfg.steps):
        per_object = []
        for k in range(K):
            view = views[k][rngs[k].integers(len(views[k]))]
            per_object.append(sample_object_rays(view, cfg.rays_per_object, cfg.ray, rngs[k]))
        batch = stack_batch(per_object)
        res, grads = loss_and_gradients(params, center, half, batch, cfg.weights, f0.n_freqs, f0.n_layers)
        if not np.all(np.isfinite(res.per_object)):
            bad = [objects[k].object_id for k in np.nonzero(~np.isfinite(res.per_object))[0]]
            raise TrainingDiverged(f"step {step}: non-finite loss for objects {bad}; terms={res.terms.tolist()}")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"step {step}: non-finite gradient in {name!r}")
        adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        history[step, :, 0] = res.per_object
        history[step, :, 1:] = res.terms
        empty += res.empty
        if callback is not None:
            callback(step, res)

    for k, fld in enumerate(fields):
        fld.params = {name: np.ascontiguousarray(p[k]) for name, p in params.items()}
        fld.opt_state = {"m": {n: a[k].copy() for n, a in state["m"].items()},
                         "v": {n: a[k].copy() for n, a in state["v"].items()}, "t": state["t"]}
        fld.trained_steps += cfg.steps
    if empty.any():
        log.warning("loss terms without supervised rays (steps per object/term): %s", empty.tolist())
    return TrainResult(fields, history, empty, keyframes)
