"""Beam / blockage predictor: encoders, decision heads, losses, training.

The network mirrors the fused architecture: an auxiliary MLP encodes the
target user location, a small residual CNN encodes the stacked concept
masks of the selected semantic features, the two codes are concatenated
and a dense head produces beam logits (or a blockage logit put through a
sigmoid). Everything runs on the numpy layers in :mod:`streetbeam.nn`
so gradients can be verified against finite differences.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rng_mod
from .featsel import LOCATION, canonical
from .nn import (Adam, AvgPool, BatchNorm, Conv2d, Dense, Dropout, Flatten,
                 ReLU, ResidualBlock, Sequential)
from .semantics import CATALOG, SemanticMap

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# samples and inputs

@dataclass(frozen=True)
class SampleRecord:
    maps: tuple               # per-camera SemanticMap
    location: tuple           # (x, y, z) meters
    beam_label: int
    blockage_labels: tuple    # one flag per configured horizon
    frame_id: int = 0
    user_id: int = 0


@dataclass
class SampleSet:
    """Column-oriented dataset: one row per labeled sample."""
    label_maps: np.ndarray    # (N, n_cams, H, W) uint8
    locations: np.ndarray     # (N, 3) float32
    beam_labels: np.ndarray   # (N,) uint16
    blockage: np.ndarray      # (N, n_horizons) uint8
    frame_ids: np.ndarray     # (N,) uint32
    horizons: tuple
    M_bm: int
    channels: np.ndarray | None = None  # (N, K, N_t) complex, optional

    def __len__(self):
        return self.label_maps.shape[0]

    @property
    def n_cams(self):
        return self.label_maps.shape[1]

    @property
    def map_hw(self):
        return self.label_maps.shape[2:]


def _downsample(arr, out_hw):
    h, w = arr.shape[-2:]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return arr
    if h % oh or w % ow:
        raise ValueError(f"map resolution {(h, w)} not an integer multiple of {out_hw}")
    return arr[..., ::h // oh, ::w // ow]


def semantic_features(features):
    """Canonical non-location features of a set; location must be present."""
    feats = canonical(features)
    if LOCATION not in feats:
        raise ValueError("the feature set must contain the location feature")
    return [f for f in feats if f != LOCATION]


def mask_channels(label_maps, features, out_hw=None):
    """Stack selected concept masks as channels.

    label_maps: (N, n_cams, H, W) uint8. Channel order is canonical feature
    order (major) then camera order (minor); shape (N, C, H', W') float32
    with C = (len(features) - 1) * n_cams.
    """
    sem = semantic_features(features)
    if out_hw is not None:
        label_maps = _downsample(label_maps, out_hw)
    n, n_cams = label_maps.shape[:2]
    chans = []
    for f in sem:
        idx = CATALOG.index(f)
        for cam in range(n_cams):
            chans.append(label_maps[:, cam] == idx)
    if not chans:
        return np.zeros((n, 0) + label_maps.shape[2:], dtype=np.float32)
    return np.stack(chans, axis=1).astype(np.float32)


def build_input(sample: SampleRecord, features, out_hw=None):
    """(location 3-vector, mask tensor (C, H, W)) for one sample."""
    maps = np.stack([m.labels for m in sample.maps])[None]  # (1, cams, H, W)
    masks = mask_channels(maps, features, out_hw)[0]
    return np.asarray(sample.location, dtype=np.float32), masks


# ---------------------------------------------------------------------------
# architecture

@dataclass(frozen=True)
class ArchConfig:
    """Desk-scale network shape; all widths configurable."""
    input_hw: tuple = (80, 160)
    aux_widths: tuple = (256, 16)
    beam_conv: tuple = ((16, 4), (16, 2))  # (filters, stride) per conv block
    beam_res: tuple = ((8, 2), (8, 1))     # (filters, stride) per residual block
    beam_hidden: int = 256
    bl_conv: tuple = ((16, 4),)
    bl_res: tuple = ((8, 2),)
    bl_hidden: int = 64
    dropout: float = 0.1


# small preset for fast unit tests
TINY_ARCH = ArchConfig(input_hw=(16, 32), aux_widths=(16, 8),
                       beam_conv=((4, 2),), beam_res=((4, 1),), beam_hidden=16,
                       bl_conv=((4, 2),), bl_res=((4, 1),), bl_hidden=8)


class Predictor:
    """Auxiliary branch + optional semantic branch + decision head."""

    def __init__(self, task, in_channels, M_bm, arch: ArchConfig):
        if task not in ("beam", "blockage"):
            raise ValueError(f"unknown task {task!r}")
        self.task = task
        self.in_channels = in_channels
        self.M_bm = M_bm
        self.arch = arch

        w1, w2 = arch.aux_widths
        self.aux = Sequential([
            BatchNorm(3),
            Dense(3, w1), BatchNorm(w1), ReLU(),
            Dense(w1, w2), BatchNorm(w2), ReLU(),
        ])
        self.aux_dim = w2

        conv_spec = arch.beam_conv if task == "beam" else arch.bl_conv
        res_spec = arch.beam_res if task == "beam" else arch.bl_res
        if in_channels > 0:
            layers = []
            c_prev = in_channels
            h, w = arch.input_hw
            for filters, stride in conv_spec:
                conv = Conv2d(c_prev, filters, 3, stride, 1)
                layers += [conv, BatchNorm(filters), ReLU()]
                h, w = conv.out_hw(h, w)
                c_prev = filters
            pool = AvgPool(3, 2, 1)
            layers.append(pool)
            h, w = pool.out_hw(h, w)
            for filters, stride in res_spec:
                block = ResidualBlock(c_prev, filters, stride)
                layers.append(block)
                h, w = block.out_hw(h, w)
                c_prev = filters
            layers.append(Flatten())
            self.sem = Sequential(layers)
            self.sem_dim = c_prev * h * w
        else:
            self.sem = None
            self.sem_dim = 0

        hidden = arch.beam_hidden if task == "beam" else arch.bl_hidden
        out_dim = M_bm if task == "beam" else 1
        self.head = Sequential([
            Dense(self.aux_dim + self.sem_dim, hidden), BatchNorm(hidden), ReLU(),
            Dropout(arch.dropout),
            Dense(hidden, out_dim),
        ])

    def init(self, seed, dtype=np.float32):
        rng = rng_mod.stream(seed, "predictor.init")
        params, state = {}, {}
        for name, mod in (("aux", self.aux), ("sem", self.sem), ("head", self.head)):
            if mod is None:
                continue
            p, s = mod.init(rng, dtype)
            params.update({f"{name}.{k}": v for k, v in p.items()})
            state.update({f"{name}.{k}": v for k, v in s.items()})
        return params, state

    def _split(self, d, name):
        pre = name + "."
        return {k[len(pre):]: v for k, v in d.items() if k.startswith(pre)}

    def forward(self, params, state, loc, masks, training=False, rng=None):
        """Returns (output, cache): beam logits (N, M_bm) or blockage logit (N, 1)."""
        a, ca = self.aux.forward(loc, self._split(params, "aux"),
                                 self._split(state, "aux"), training, rng)
        if self.sem is not None:
            m, cm = self.sem.forward(masks, self._split(params, "sem"),
                                     self._split(state, "sem"), training, rng)
            x = np.concatenate([a, m], axis=1)
        else:
            m, cm = None, None
            x = a
        y, ch = self.head.forward(x, self._split(params, "head"),
                                  self._split(state, "head"), training, rng)
        return y, (ca, cm, ch)

    def backward(self, dy, cache, params):
        ca, cm, ch = cache
        grads = {}
        dx, gh = self.head.backward(dy, ch, self._split(params, "head"))
        grads.update({f"head.{k}": v for k, v in gh.items()})
        da = dx[:, :self.aux_dim]
        if self.sem is not None:
            dm = dx[:, self.aux_dim:]
            _, gm = self.sem.backward(dm, cm, self._split(params, "sem"))
            grads.update({f"sem.{k}": v for k, v in gm.items()})
        _, ga = self.aux.backward(da, ca, self._split(params, "aux"))
        grads.update({f"aux.{k}": v for k, v in ga.items()})
        return grads


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return out if out.ndim else float(out)


def forward_beam(model: Predictor, params, state, loc, masks, training=False, rng=None):
    """Beam logits for a batch (or a single sample given leading dim 1)."""
    y, _ = model.forward(params, state, loc, masks, training, rng)
    return y


def forward_blockage(model: Predictor, params, state, loc, masks, training=False, rng=None):
    """Blockage probability in (0, 1)."""
    y, _ = model.forward(params, state, loc, masks, training, rng)
    return sigmoid(y[:, 0])


# ---------------------------------------------------------------------------
# losses

def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def beam_loss(logits, label):
    """Cross entropy -log softmax(logits)[label] for one sample."""
    logits = np.asarray(logits, dtype=float)
    if not 0 <= int(label) < logits.shape[-1]:
        raise ValueError("beam label out of range")
    return float(-log_softmax(logits)[..., int(label)])


_PROB_CLAMP = 1e-7


def blockage_loss(prob, label):
    """Binary cross entropy with the probability clamped away from {0, 1}."""
    if label not in (0, 1):
        raise ValueError("blockage label must be 0 or 1")
    p = min(max(float(prob), _PROB_CLAMP), 1 - _PROB_CLAMP)
    return float(-(label * np.log(p) + (1 - label) * np.log(1 - p)))


def _batch_loss_grad(model, out, labels):
    """Mean loss over a batch and its gradient wrt the network output."""
    n = out.shape[0]
    if model.task == "beam":
        ls = log_softmax(out)
        loss = -ls[np.arange(n), labels].mean()
        dout = np.exp(ls)
        dout[np.arange(n), labels] -= 1
        dout /= n
    else:
        z = out[:, 0]
        y = labels.astype(z.dtype)
        # stable BCE-with-logits
        loss = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
        dout = ((sigmoid(z) - y) / n)[:, None]
    return float(loss), dout.astype(out.dtype)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    split: tuple = (0.7, 0.15, 0.15)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs) <= 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split_indices(frame_ids, split, seed, n_blocks=10):
    """Disjoint train/val/test index arrays keyed on frame id.

    Frames are grouped into contiguous blocks which are then shuffled and
    dealt out, so temporally adjacent frames never straddle a boundary.
    """
    frame_ids = np.asarray(frame_ids)
    uniq = np.unique(frame_ids)
    n_blocks = min(n_blocks, len(uniq))
    blocks = np.array_split(uniq, n_blocks)
    order = rng_mod.stream(seed, "split").permutation(n_blocks)
    n = len(frame_ids)
    targets = [split[0] * n, (split[0] + split[1]) * n]
    out = [[], [], []]
    assigned = 0
    for bi in order:
        members = np.flatnonzero(np.isin(frame_ids, blocks[bi]))
        if assigned < targets[0]:
            out[0].append(members)
        elif assigned < targets[1]:
            out[1].append(members)
        else:
            out[2].append(members)
        assigned += len(members)
    train, val, test = (np.sort(np.concatenate(g)) if g else np.array([], dtype=int)
                        for g in out)
    if len(train) == 0 or (split[1] > 0 and len(val) == 0):
        raise ValueError("empty train/val split; dataset too small for the fractions")
    return train, val, test


@dataclass
class TrainResult:
    model: Predictor
    params: dict
    state: dict
    features: tuple
    val_accuracy: float
    split: tuple  # (train_idx, val_idx, test_idx)
    horizon: int | None = None


def _labels_for(dataset: SampleSet, task, horizon):
    if task == "beam":
        return dataset.beam_labels.astype(np.int64)
    if horizon is None:
        horizon = dataset.horizons[0]
    col = list(dataset.horizons).index(horizon)
    return dataset.blockage[:, col].astype(np.int64)


def predict(model, params, state, dataset, idx, features, batch_size=256):
    """Eval-mode network outputs for the given sample indices."""
    outs = []
    for lo in range(0, len(idx), batch_size):
        sel = idx[lo:lo + batch_size]
        masks = mask_channels(dataset.label_maps[sel], features, model.arch.input_hw)
        loc = dataset.locations[sel].astype(np.float32)
        y, _ = model.forward(params, state, loc, masks, training=False)
        outs.append(y)
    return np.concatenate(outs) if outs else np.zeros((0, 1))


def accuracy(model, params, state, dataset, idx, features, task, horizon=None):
    """Top-1 beam accuracy (argmax) or blockage accuracy (0.5 threshold)."""
    if len(idx) == 0:
        return 0.0
    out = predict(model, params, state, dataset, idx, features)
    labels = _labels_for(dataset, task, horizon)[idx]
    if task == "beam":
        pred = np.argmax(out, axis=1)
    else:
        pred = (sigmoid(out[:, 0]) >= 0.5).astype(np.int64)
    return float(np.mean(pred == labels))


def train(dataset: SampleSet, features, task, cfg: TrainConfig, horizon=None) -> TrainResult:
    """Mini-batch ADAM training with fresh seeded initialization.

    Deterministic for a fixed (dataset, features, task, cfg): the split,
    the init, the shuffles and the dropout masks all come from named child
    streams of cfg.seed, and batches run sequentially.
    """
    feats = canonical(features)
    sem = semantic_features(feats)  # validates location presence
    in_channels = len(sem) * dataset.n_cams
    labels = _labels_for(dataset, task, horizon)
    train_idx, val_idx, test_idx = split_indices(dataset.frame_ids, cfg.split, cfg.seed)

    model = Predictor(task, in_channels, dataset.M_bm, cfg.arch)
    params, state = model.init(cfg.seed)
    opt = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    shuffle_rng = rng_mod.stream(cfg.seed, "shuffle")
    dropout_rng = rng_mod.stream(cfg.seed, "dropout")

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(train_idx)
        ep_loss = 0.0
        for lo in range(0, len(perm), cfg.batch_size):
            sel = perm[lo:lo + cfg.batch_size]
            if len(sel) < 2:
                continue  # batch statistics need more than one sample
            masks = mask_channels(dataset.label_maps[sel], feats, cfg.arch.input_hw)
            loc = dataset.locations[sel].astype(np.float32)
            out, cache = model.forward(params, state, loc, masks,
                                       training=True, rng=dropout_rng)
            loss, dout = _batch_loss_grad(model, out, labels[sel])
            grads = model.backward(dout, cache, params)
            opt.step(params, grads)
            ep_loss += loss * len(sel)
        log.debug("epoch %d: train loss %.4f", epoch, ep_loss / max(len(perm), 1))

    val_acc = accuracy(model, params, state, dataset, val_idx, feats, task, horizon)
    return TrainResult(model=model, params=params, state=state, features=feats,
                       val_accuracy=val_acc, split=(train_idx, val_idx, test_idx),
                       horizon=horizon)


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(model: Predictor, params, state, loc, masks, label,
                   n_samples=120, step=1e-5, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Runs in evaluation mode (dropout off, frozen normalization stats) on
    64-bit shadow copies of the parameters. A sample whose difference
    interval straddles a ReLU kink invalidates the central difference, not
    the gradient, so suspect samples are re-measured at step/10 and step/100
    and the smallest error kept: a genuine backpropagation error persists at
    every step, a kink crossing vanishes.
    """
    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    s64 = {k: v.astype(np.float64) for k, v in state.items()}
    loc = np.asarray(loc, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))

    def loss_of(p):
        out, _ = model.forward(p, s64, loc, masks, training=False)
        loss, _ = _batch_loss_grad(model, out, labels)
        return loss

    out, cache = model.forward(p64, s64, loc, masks, training=False)
    _, dout = _batch_loss_grad(model, out, labels)
    grads = model.backward(dout, cache, p64)

    rng = np.random.default_rng(seed)
    keys = sorted(p64.keys())
    max_err = 0.0
    for _ in range(max(n_samples, 100)):
        k = keys[int(rng.integers(len(keys)))]
        flat = p64[k].reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        analytic = grads[k].reshape(-1)[i]
        err = np.inf
        for h in (step, step / 10, step / 100):
            flat[i] = orig + h
            lp = loss_of(p64)
            flat[i] = orig - h
            lm = loss_of(p64)
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            err = min(err, abs(analytic - numeric)
                      / max(abs(analytic), abs(numeric), 1e-8))
            if err < 1e-7:
                break
        max_err = max(max_err, err)
    return max_err
