"""Desk-scale attacks for evaluation: universal adversarial patches and FGSM/BIM noise."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .bundle import SampleSet
from .network import Network, Objective, forward_batch, loss_gradient, objective_and_gradient

logger = logging.getLogger(__name__)


def input_box(net: Network):
    """(low, high) arrays broadcastable to the input shape, or None if unbounded."""
    meta = net.spec.meta
    shape = net.input_shape
    if meta.get("modality") == "audio-mfcc":
        if meta.get("feature_scaling"):
            return np.zeros(shape), np.ones(shape)
        return None
    norm = meta.get("normalization") or {}
    c = shape[0]
    mean = np.broadcast_to(np.asarray(norm.get("mean", 0.0), dtype=np.float64), (c,))
    std = np.broadcast_to(np.asarray(norm.get("std", 1.0), dtype=np.float64), (c,))
    lo = np.broadcast_to(((0.0 - mean) / std)[:, None, None], shape)
    hi = np.broadcast_to(((1.0 - mean) / std)[:, None, None], shape)
    return lo, hi


@dataclass(frozen=True)
class PatchSpec:
    side: int = 8
    target: int = 0
    placement: str = "fixed"          # placement when applying for evaluation
    position: tuple = (0, 0)          # (top, left) for fixed placement
    steps: int = 500
    step_size: float = 0.01
    batch: int = 32
    seed: int = 0
    min_gain: float = 1e-6

    def check(self, net: Network):
        _, h, w = net.input_shape
        if not 1 <= self.side <= min(h, w):
            raise ValueError(f"patch side {self.side} does not fit a {h}x{w} input")
        if not 0 <= self.target < len(net.class_labels):
            raise ValueError(f"target class {self.target} out of range")
        if self.placement not in ("fixed", "random"):
            raise ValueError(f"unknown placement {self.placement!r}")
        top, left = self.position
        if self.placement == "fixed" and not (0 <= top <= h - self.side and 0 <= left <= w - self.side):
            raise ValueError(f"fixed position {self.position} puts the patch outside the input")

    def to_dict(self):
        d = asdict(self)
        d["position"] = list(self.position)
        return d


@dataclass
class PatchResult:
    patch: np.ndarray          # (C, side, side)
    history: list              # mean target logit per step
    gain: float
    no_progress: bool
    spec: PatchSpec

    def apply(self, x, position=None):
        return apply_patch(x, self.patch, self.spec.position if position is None else position)


def apply_patch(x, patch, position):
    """Copy of ``x`` (single or batch) with the patch rectangle overwritten."""
    out = np.array(x, copy=True)
    top, left = position
    s = patch.shape[-1]
    out[..., top:top + s, left:left + s] = patch
    return out


def random_positions(rng, n, hw, side):
    h, w = hw
    return np.stack([rng.integers(0, h - side + 1, size=n),
                     rng.integers(0, w - side + 1, size=n)], axis=1)


def _mean_target_logit(net, xs, target):
    obj = Objective.logit(net, target)
    values, grads = objective_and_gradient(net, xs, obj)
    return values, grads


def forge_patch(net: Network, spec: PatchSpec, carriers) -> PatchResult:
    """Optimize a universal patch that raises the mean target logit over carriers.

    Each step places the patch at a random position on a random mini-batch of
    carriers and takes a signed-gradient ascent step of ``step_size``, then
    clamps to the value box.
    """
    spec.check(net)
    carriers = np.asarray(carriers, dtype=net.dtype)
    if len(carriers) == 0:
        raise ValueError("no carrier samples")
    rng = np.random.default_rng(spec.seed)
    c, h, w = net.input_shape
    s = spec.side
    box = input_box(net)
    lo = hi = None
    if box is not None:
        lo, hi = box[0][:, :s, :s], box[1][:, :s, :s]
        patch = lo + (hi - lo) * rng.random((c, s, s))
    else:
        patch = rng.random((c, s, s))
    patch = patch.astype(net.dtype)

    # fixed evaluation batch for the progress measure
    eval_rng = np.random.default_rng(spec.seed + 1)
    eval_idx = eval_rng.choice(len(carriers), size=min(len(carriers), spec.batch), replace=False)
    eval_pos = random_positions(eval_rng, len(eval_idx), (h, w), s)

    def placed(idx, pos):
        xs = carriers[idx].copy()
        for j, (t, l) in enumerate(pos):
            xs[j, :, t:t + s, l:l + s] = patch
        return xs

    def progress():
        return float(_mean_target_logit(net, placed(eval_idx, eval_pos), spec.target)[0].mean())

    start = progress()
    history = []
    for _ in range(spec.steps):
        idx = rng.choice(len(carriers), size=min(len(carriers), spec.batch), replace=False)
        pos = random_positions(rng, len(idx), (h, w), s)
        values, grads = _mean_target_logit(net, placed(idx, pos), spec.target)
        history.append(float(values.mean()))
        g = np.zeros_like(patch)
        for j, (t, l) in enumerate(pos):
            g += grads[j, :, t:t + s, l:l + s]
        patch = patch + net.dtype.type(spec.step_size) * np.sign(g).astype(net.dtype)
        if box is not None:
            patch = np.clip(patch, lo, hi).astype(net.dtype)
    gain = progress() - start
    no_progress = gain < spec.min_gain
    if no_progress:
        logger.warning("patch optimization made no progress (gain %.3g)", gain)
    return PatchResult(patch, history, gain, no_progress, spec)


@dataclass(frozen=True)
class NoiseAttackSpec:
    kind: str = "fgsm"        # "fgsm" | "bim"
    epsilon: float = 0.1
    iterations: int = 10
    step: float | None = None  # per-step size for bim; defaults to epsilon / iterations * 2.5
    target: int | None = None  # None: untargeted

    def __post_init__(self):
        if self.kind not in ("fgsm", "bim"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.kind == "bim":
            if self.iterations < 1:
                raise ValueError("bim needs at least one iteration")
            if self.step_size * self.iterations < self.epsilon:
                raise ValueError("bim step * iterations cannot reach epsilon")

    @property
    def step_size(self):
        if self.step is not None:
            return self.step
        return 2.5 * self.epsilon / self.iterations

    def to_dict(self):
        d = asdict(self)
        d["step"] = self.step_size
        return d


def _project(x_adv, x, eps, box):
    """Clip to the eps-ball around x and the value box, exactly (no float overshoot)."""
    x64 = x.astype(np.float64)
    out = np.clip(x_adv.astype(np.float64), x64 - eps, x64 + eps)
    if box is not None:
        out = np.clip(out, box[0], box[1])
    out = out.astype(x.dtype)
    # float32 rounding can land one ulp outside the ball; step back toward x
    for _ in range(4):
        over = np.abs(out.astype(np.float64) - x64) > eps
        if not over.any():
            break
        out[over] = np.nextafter(out[over], x[over])
    return out


def forge_noise(net: Network, x, spec: NoiseAttackSpec, label=None):
    """FGSM / BIM on a single input or a batch.

    Untargeted attacks ascend the cross-entropy of ``label`` (default: the
    model's own prediction); targeted attacks descend toward ``spec.target``.
    """
    x = np.asarray(x, dtype=net.dtype)
    single = x.shape == net.input_shape
    xs = x[None] if single else x
    box = input_box(net)
    if spec.target is not None:
        labels = np.full(len(xs), spec.target)
        targeted = True
    else:
        if label is None:
            labels = np.argmax(forward_batch(net, xs)[0], axis=1)
        else:
            labels = np.broadcast_to(np.asarray(label), (len(xs),))
        targeted = False
    if spec.epsilon == 0:
        return x.copy()
    if spec.kind == "fgsm":
        _, g = loss_gradient(net, xs, labels, targeted)
        adv = _project(xs + spec.epsilon * np.sign(g), xs, spec.epsilon, box)
    else:
        adv = xs.copy()
        for _ in range(spec.iterations):
            _, g = loss_gradient(net, adv, labels, targeted)
            adv = _project(adv + spec.step_size * np.sign(g), xs, spec.epsilon, box)
    return adv[0] if single else adv


# -- attack sets for evaluation -------------------------------------------------------

def _predict(net, xs, batch=64):
    return np.concatenate([np.argmax(forward_batch(net, xs[i:i + batch])[0], axis=1)
                           for i in range(0, len(xs), batch)])


def patch_attack_set(net: Network, carriers: SampleSet, targets, side=8, groups=25,
                     group_size=8, steps=200, step_size=0.05, seed=0):
    """Forge one patch per group and apply it to held-out carriers.

    Group ``g`` targets ``targets[g % len(targets)]``. It draws ``2 * group_size``
    carriers the model does not already assign to the target: the first half
    optimizes the patch, the second half receives it at a seeded position
    that is fixed per item.
    """
    if len(carriers) == 0:
        raise ValueError("no carrier samples")
    rng = np.random.default_rng(seed)
    _, h, w = net.input_shape
    preds = _predict(net, carriers.items)
    items, labels, ids, meta, specs = [], [], [], [], []
    for g in range(groups):
        target = int(targets[g % len(targets)])
        pool = np.flatnonzero(preds != target)
        if len(pool) < 2 * group_size:
            raise ValueError(f"only {len(pool)} carriers outside target class {target}")
        pick = rng.choice(pool, 2 * group_size, replace=False)
        spec = PatchSpec(side=side, target=target, placement="random", steps=steps,
                         step_size=step_size, batch=group_size, seed=seed * 100003 + g)
        res = forge_patch(net, spec, carriers.items[pick[:group_size]])
        specs.append({**spec.to_dict(), "group": g, "gain": res.gain,
                      "no_progress": res.no_progress})
        positions = random_positions(rng, group_size, (h, w), side)
        for i, (top, left) in zip(pick[group_size:], positions):
            items.append(apply_patch(carriers.items[i], res.patch, (int(top), int(left))))
            labels.append(carriers.labels[i])
            ids.append(f"patch-g{g:03d}-{carriers.ids[i]}")
            meta.append({"truth": "adversarial", "attack": "patch", "source": carriers.ids[i],
                         "target": net.class_labels[target], "group": g,
                         "position": [int(top), int(left)], "side": side})
    items = np.stack(items).astype(np.float32)
    after = _predict(net, items)
    for m, p in zip(meta, after):
        m["fooled"] = bool(net.class_labels[p] == m["target"])
    info = {"attack": "patch", "seed": seed, "patches": specs}
    return SampleSet(items, carriers.modality, labels, ids, meta, info)


def noise_attack_set(net: Network, samples: SampleSet, kinds=("fgsm", "bim"),
                     epsilons=(0.05, 0.1), iterations=10, target=None, batch=64):
    """FGSM/BIM versions of every sample for each (kind, epsilon).

    Untargeted attacks push away from the model's own prediction. Each item
    records its epsilon and achieved max-norm.
    """
    if len(samples) == 0:
        raise ValueError("no samples to attack")
    x = samples.items
    before = _predict(net, x)
    items, labels, ids, meta, specs = [], [], [], [], []
    for kind in kinds:
        for eps in epsilons:
            spec = NoiseAttackSpec(kind, float(eps), iterations, target=target)
            specs.append(spec.to_dict())
            adv = np.concatenate([forge_noise(net, x[i:i + batch], spec, label=before[i:i + batch])
                                  for i in range(0, len(x), batch)])
            after = _predict(net, adv)
            linf = np.abs(adv.astype(np.float64) - x.astype(np.float64)).reshape(len(x), -1).max(axis=1)
            for i in range(len(x)):
                fooled = (after[i] == target) if target is not None else (after[i] != before[i])
                items.append(adv[i])
                labels.append(samples.labels[i])
                ids.append(f"{kind}-e{eps:g}-{samples.ids[i]}")
                meta.append({"truth": "adversarial", "attack": kind, "epsilon": float(eps),
                             "source": samples.ids[i], "linf": float(linf[i]),
                             "fooled": bool(fooled)})
    info = {"attack": "noise", "specs": specs}
    return SampleSet(np.stack(items), samples.modality, labels, ids, meta, info)
