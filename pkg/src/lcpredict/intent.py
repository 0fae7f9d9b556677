"""Sequence-to-sequence maneuver classifier built on two LSTM cells.

The encoder consumes the last T_in states (yaw, lateral speed, longitudinal
speed, remaining distance), its final hidden/cell state seeds the decoder,
and the decoder unrolls T_out steps, feeding each step's output probability
back through a learned scalar-to-hidden embedding. Everything is float64
numpy so backpropagation through time can be checked against central finite
differences to 1e-4 relative error.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core.types import ManeuverLabel
from .errors import DomainError, NumericalError

INPUT_FIELDS = ("yaw", "v_lat", "v_lon", "d_remain")
N_INPUTS = 4

T_IN_DEFAULT = 10
T_OUT_DEFAULT = 10
HIDDEN_DEFAULT = 64

DECODER_START = 0.5  # stand-in "previous probability" for the first decode step


@dataclass(frozen=True)
class IntentInputWindow:
    """Raw (T_in, 4) slice of a trajectory in INPUT_FIELDS order."""

    values: np.ndarray
    end_index: int = -1  # index of the last state in the source trajectory

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != N_INPUTS:
            raise DomainError(f"window must be (T_in, {N_INPUTS}), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("window contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class IntentOutput:
    probabilities: np.ndarray  # (T_out,) in (0, 1)
    labels: tuple  # ManeuverLabel per step, threshold 0.5

    @property
    def majority(self):
        n_change = sum(1 for l in self.labels if l == ManeuverLabel.CHANGE)
        return ManeuverLabel.CHANGE if 2 * n_change > len(self.labels) else ManeuverLabel.KEEP


PARAM_NAMES = ("W_enc", "b_enc", "W_dec", "b_dec", "W_emb", "b_emb", "W_out", "b_out")


class SeqModel:
    """Parameter container; immutable by convention after training."""

    def __init__(self, params, input_mean, input_std, t_in=T_IN_DEFAULT,
                 t_out=T_OUT_DEFAULT, hidden=HIDDEN_DEFAULT, seed=0):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.input_mean = np.asarray(input_mean, dtype=float)
        self.input_std = np.asarray(input_std, dtype=float)
        self.t_in = int(t_in)
        self.t_out = int(t_out)
        self.hidden = int(hidden)
        self.seed = int(seed)
        self._check_shapes()

    def _check_shapes(self):
        H = self.hidden
        expected = {
            "W_enc": (4 * H, N_INPUTS + H), "b_enc": (4 * H,),
            "W_dec": (4 * H, 2 * H), "b_dec": (4 * H,),
            "W_emb": (H, 1), "b_emb": (H,),
            "W_out": (1, H), "b_out": (1,),
        }
        for name, shape in expected.items():
            got = self.params[name].shape
            if got != shape:
                raise DomainError(f"{name} has shape {got}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise DomainError(f"{name} contains non-finite values")
        if self.input_mean.shape != (N_INPUTS,) or self.input_std.shape != (N_INPUTS,):
            raise DomainError("input scaling stats must have 4 entries each")

    @staticmethod
    def initialize(hidden=HIDDEN_DEFAULT, t_in=T_IN_DEFAULT, t_out=T_OUT_DEFAULT,
                   seed=0, input_mean=None, input_std=None):
        rng = np.random.default_rng(seed)
        H = hidden

        def glorot(shape):
            lim = math.sqrt(6.0 / (shape[0] + shape[-1]))
            return rng.uniform(-lim, lim, size=shape)

        params = {
            "W_enc": glorot((4 * H, N_INPUTS + H)),
            "b_enc": np.zeros(4 * H),
            "W_dec": glorot((4 * H, 2 * H)),
            "b_dec": np.zeros(4 * H),
            "W_emb": glorot((H, 1)),
            "b_emb": np.zeros(H),
            "W_out": glorot((1, H)),
            "b_out": np.zeros(1),
        }
        # Forget-gate bias starts at 1 so early training keeps memory open.
        params["b_enc"][H:2 * H] = 1.0
        params["b_dec"][H:2 * H] = 1.0
        if input_mean is None:
            input_mean = np.zeros(N_INPUTS)
        if input_std is None:
            input_std = np.ones(N_INPUTS)
        return SeqModel(params, input_mean, input_std, t_in, t_out, hidden, seed)

    def to_dict(self):
        flat = np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])
        return {
            "hidden": self.hidden,
            "t_in": self.t_in,
            "t_out": self.t_out,
            "seed": self.seed,
            "input_mean": list(self.input_mean),
            "input_std": list(self.input_std),
            "param_shapes": {k: list(self.params[k].shape) for k in PARAM_NAMES},
            "param_data": [float(v) for v in flat],
        }

    @staticmethod
    def from_dict(doc):
        flat = np.asarray(doc["param_data"], dtype=float)
        params = {}
        pos = 0
        for name in PARAM_NAMES:
            shape = tuple(doc["param_shapes"][name])
            size = int(np.prod(shape))
            params[name] = flat[pos:pos + size].reshape(shape)
            pos += size
        if pos != flat.size:
            raise DomainError("flat parameter array size mismatch")
        return SeqModel(
            params, doc["input_mean"], doc["input_std"],
            t_in=doc["t_in"], t_out=doc["t_out"], hidden=doc["hidden"],
            seed=doc.get("seed", 0),
        )


def _split_gates(z, H):
    return z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]


def _cell_forward(x, h_prev, c_prev, W, b, H):
    """One LSTM step on a batch. Returns new (h, c) and the cache for backprop."""
    xc = np.concatenate([x, h_prev], axis=1)
    z = xc @ W.T + b
    zi, zf, zg, zo = _split_gates(z, H)
    i, f, o = expit(zi), expit(zf), expit(zo)
    g = np.tanh(zg)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xc, i, f, g, o, c_prev, tc)


def _cell_backward(dh, dc, cache, W, H):
    xc, i, f, g, o, c_prev, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dzi = di * i * (1.0 - i)
    dzf = df * f * (1.0 - f)
    dzg = dg * (1.0 - g * g)
    dzo = do * o * (1.0 - o)
    dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
    dW = dz.T @ xc
    db = dz.sum(axis=0)
    dxc = dz @ W
    return dxc, dc_prev, dW, db


def _forward_pass(model, X, teacher=None, labels=None):
    """Forward over a batch X (B, T_in, 4), already z-scaled.

    teacher: optional boolean mask (B, T_out); where True, decode step t>0
    receives the true previous label instead of the previous probability.
    Returns logits (B, T_out) and the cache needed for backprop.
    """
    B = X.shape[0]
    H = model.hidden
    p = model.params
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    enc_caches = []
    for t in range(model.t_in):
        h, c, cache = _cell_forward(X[:, t, :], h, c, p["W_enc"], p["b_enc"], H)
        enc_caches.append(cache)

    logits = np.empty((B, model.t_out))
    probs = np.empty((B, model.t_out))
    dec_caches = []
    u = np.full((B, 1), DECODER_START)
    u_sources = []  # "const" | "prob" | "teacher" per step
    for t in range(model.t_out):
        if t == 0:
            u_sources.append("const")
        elif teacher is not None and labels is not None:
            mask = teacher[:, t:t + 1]
            u = np.where(mask, labels[:, t - 1:t], probs[:, t - 1:t])
            u_sources.append(mask)
        else:
            u = probs[:, t - 1:t].copy()
            u_sources.append("prob")
        e = u @ p["W_emb"].T + p["b_emb"]
        h, c, cache = _cell_forward(e, h, c, p["W_dec"], p["b_dec"], H)
        z_out = h @ p["W_out"].T + p["b_out"]
        logits[:, t] = z_out[:, 0]
        probs[:, t] = expit(z_out[:, 0])
        dec_caches.append((cache, u.copy()))
    return logits, probs, (enc_caches, dec_caches, u_sources)


def forward(model, window):
    """Decode maneuver probabilities for one input window (pure, deterministic)."""
    vals = window.values if isinstance(window, IntentInputWindow) else np.asarray(window, float)
    if vals.shape != (model.t_in, N_INPUTS):
        raise DomainError(f"window shape {vals.shape} != ({model.t_in}, {N_INPUTS})")
    Xs = (vals - model.input_mean) / model.input_std
    _, probs, _ = _forward_pass(model, Xs[None, :, :])
    probs = np.clip(probs[0], 1e-15, 1.0 - 1e-15)
    labels = tuple(
        ManeuverLabel.CHANGE if pr >= 0.5 else ManeuverLabel.KEEP for pr in probs
    )
    return IntentOutput(probabilities=probs, labels=labels)


def loss_and_gradients(model, windows, labels, class_weights=None, teacher=None):
    """Step-averaged weighted binary cross-entropy and exact BPTT gradients.

    windows: (B, T_in, 4) already z-scaled; labels: (B, T_out) in {0, 1};
    class_weights: (w_keep, w_change) applied per step; teacher: optional
    (B, T_out) boolean teacher-forcing mask.
    """
    X = np.asarray(windows, dtype=float)
    Y = np.asarray(labels, dtype=float)
    if X.ndim != 3 or X.shape[0] == 0:
        raise DomainError("batch must be non-empty (B, T_in, 4)")
    if Y.shape != (X.shape[0], model.t_out):
        raise DomainError(f"labels shape {Y.shape} != (B, {model.t_out})")
    B = X.shape[0]
    H = model.hidden
    p = model.params
    w_keep, w_change = (1.0, 1.0) if class_weights is None else class_weights
    W = np.where(Y > 0.5, w_change, w_keep)

    logits, probs, (enc_caches, dec_caches, u_sources) = _forward_pass(
        model, X, teacher=teacher, labels=Y
    )
    # BCE with logits: softplus(z) - y*z, numerically exact for gradcheck.
    norm = B * model.t_out
    loss = float(np.sum(W * (np.logaddexp(0.0, logits) - Y * logits)) / norm)
    if not math.isfinite(loss):
        bad = np.argwhere(~np.isfinite(np.logaddexp(0.0, logits) - Y * logits))
        raise NumericalError(f"non-finite loss at batch index {bad[0] if len(bad) else '?'}")

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    du_next = None  # gradient flowing into the next step's fed-back probability
    for t in range(model.t_out - 1, -1, -1):
        dz_out = W[:, t:t + 1] * (probs[:, t:t + 1] - Y[:, t:t + 1]) / norm
        if du_next is not None:
            # probs[t] fed decode step t+1 where not teacher-forced
            dp = du_next
            dz_out = dz_out + dp * probs[:, t:t + 1] * (1.0 - probs[:, t:t + 1])
        grads["W_out"] += dz_out.T @ _dec_hidden(dec_caches[t])
        grads["b_out"] += dz_out.sum(axis=0)
        dh = dh + dz_out @ p["W_out"]

        cache, u = dec_caches[t]
        dxc, dc, dW, db = _cell_backward(dh, dc, cache, p["W_dec"], H)
        grads["W_dec"] += dW
        grads["b_dec"] += db
        de = dxc[:, :H]
        dh = dxc[:, H:]
        grads["W_emb"] += de.T @ u
        grads["b_emb"] += de.sum(axis=0)
        du = de @ p["W_emb"]  # (B, 1)

        src = u_sources[t]
        if isinstance(src, str):
            du_next = du if src == "prob" else None
        else:
            # teacher mask: gradient only flows where the probability was used
            du_next = np.where(src, 0.0, du)

    for t in range(model.t_in - 1, -1, -1):
        dxc, dc, dW, db = _cell_backward(dh, dc, enc_caches[t], p["W_enc"], H)
        grads["W_enc"] += dW
        grads["b_enc"] += db
        dh = dxc[:, N_INPUTS:]
    return loss, grads


def _dec_hidden(dec_cache):
    """Recover the post-step hidden state h = o * tanh(c) from a decoder cache."""
    (xc, i, f, g, o, c_prev, tc), _u = dec_cache
    return o * tc


# ---------------------------------------------------------------------------
# Window extraction and training.
# ---------------------------------------------------------------------------


def window_values(traj, start, stop):
    cols = traj.arrays
    return np.stack(
        [cols["yaw"][start:stop], cols["v_lat"][start:stop],
         cols["v_lon"][start:stop], cols["d_remain"][start:stop]],
        axis=1,
    )


def window_stream(traj, t_in=T_IN_DEFAULT):
    """Sliding input windows, stride 1, in arrival order.

    Short trajectories yield nothing; |traj| == t_in yields exactly one.
    """
    n = len(traj)
    for end in range(t_in - 1, n):
        yield IntentInputWindow(window_values(traj, end - t_in + 1, end + 1), end)


def build_labeled_windows(traj, t_in=T_IN_DEFAULT, t_out=T_OUT_DEFAULT,
                          change_threshold=4.0):
    """Training pairs (window, future label sequence).

    Future step j is labeled Change once |lateral offset| has reached the
    completion threshold, so a window carries a Change label exactly when the
    crossing falls inside its decoded horizon.
    """
    n = len(traj)
    ys = np.abs(traj.arrays["y"])
    step_labels = (ys >= change_threshold).astype(float)
    out = []
    for end in range(t_in - 1, n - t_out):
        win = IntentInputWindow(window_values(traj, end - t_in + 1, end + 1), end)
        out.append((win, step_labels[end + 1:end + 1 + t_out].copy()))
    return out


@dataclass(frozen=True)
class IntentTrainConfig:
    hidden: int = HIDDEN_DEFAULT
    t_in: int = T_IN_DEFAULT
    t_out: int = T_OUT_DEFAULT
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 0.2
    momentum: float = 0.9
    teacher_ratio: float = 0.5
    val_fraction: float = 0.2
    patience: int = 25
    clip_norm: float = 5.0
    max_class_weight: float = 10.0
    seed: int = 0


def _global_clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}, total
    return grads, total


def train_intent(windows, label_seqs, cfg=None):
    """Mini-batch gradient descent with momentum and validation early stop.

    windows: (N, t_in, 4) raw values or list of IntentInputWindow;
    label_seqs: (N, t_out) per-step {0, 1}. Deterministic given cfg.seed.
    Returns (model, report).
    """
    cfg = cfg or IntentTrainConfig()
    if windows is None or len(windows) == 0:
        raise DomainError("empty training set")
    X = np.stack([w.values if isinstance(w, IntentInputWindow) else np.asarray(w, float)
                  for w in windows])
    Y = np.asarray(label_seqs, dtype=float)
    if Y.shape != (X.shape[0], cfg.t_out):
        raise DomainError(f"label shape {Y.shape} != (N, {cfg.t_out})")
    flat = Y.ravel()
    if flat.min() == flat.max():
        raise DomainError("training set contains a single class only")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(X))
    n_val = int(round(cfg.val_fraction * len(X)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = order, order[:0]

    mean = X[train_idx].reshape(-1, N_INPUTS).mean(axis=0)
    std = np.maximum(X[train_idx].reshape(-1, N_INPUTS).std(axis=0), 1e-6)
    Xs = (X - mean) / std

    n_change = float(Y[train_idx].sum())
    n_total = float(Y[train_idx].size)
    n_keep = n_total - n_change
    w_change = min(n_total / (2.0 * max(n_change, 1.0)), cfg.max_class_weight)
    w_keep = min(n_total / (2.0 * max(n_keep, 1.0)), cfg.max_class_weight)
    class_weights = (w_keep, w_change)

    model = SeqModel.initialize(cfg.hidden, cfg.t_in, cfg.t_out, cfg.seed, mean, std)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}

    def eval_loss(idx):
        if len(idx) == 0:
            return math.nan
        loss, _ = loss_and_gradients(model, Xs[idx], Y[idx], class_weights)
        return loss

    best_params = {k: v.copy() for k, v in model.params.items()}
    best_val = math.inf
    stale = 0
    train_curve, val_curve = [], []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(train_idx)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            teacher = rng.random((len(idx), cfg.t_out)) < cfg.teacher_ratio
            loss, grads = loss_and_gradients(
                model, Xs[idx], Y[idx], class_weights, teacher=teacher
            )
            grads, _ = _global_clip(grads, cfg.clip_norm)
            for k in model.params:
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grads[k]
                model.params[k] = model.params[k] + velocity[k]
            epoch_loss += loss
            n_batches += 1
        train_curve.append(epoch_loss / max(n_batches, 1))
        monitor = eval_loss(val_idx) if len(val_idx) else train_curve[-1]
        val_curve.append(monitor)
        if monitor < best_val - 1e-6:
            best_val = monitor
            best_params = {k: v.copy() for k, v in model.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.params = best_params
    model._check_shapes()

    def step_accuracy(idx):
        if len(idx) == 0:
            return math.nan
        logits, probs, _ = _forward_pass(model, Xs[idx])
        return float(np.mean((probs >= 0.5) == (Y[idx] > 0.5)))

    report = {
        "epochs_run": len(train_curve),
        "train_loss": train_curve,
        "val_loss": val_curve,
        "train_step_accuracy": step_accuracy(train_idx),
        "val_step_accuracy": step_accuracy(val_idx),
        "class_weights": list(class_weights),
        "n_train": int(len(train_idx)),
        "n_val": int(len(val_idx)),
    }
    return model, report
