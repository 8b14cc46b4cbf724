"""LSTM traffic predictor: windowed training on activation histories.

The network sees a window of W past activation vectors (W x D binaries) and
learns the next slot's activation vector, one shared model across all
devices. Training minimizes binary cross-entropy; evaluation thresholds the
sigmoid outputs at 0.5 (ties count as active) and reports the usual
confusion-matrix metrics per class.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalFault
from .nn import Network, loss_value_and_grad
from .seeding import substream

DEFAULT_WINDOW = 32
DEFAULT_HIDDEN = (64, 128, 64)


@dataclass
class WindowedDataset:
    """Sliding windows over a history; chronological train/validation split."""

    inputs: np.ndarray  # (N, W, D)
    targets: np.ndarray  # (N, D): activations of the slot after each window
    train_count: int

    @property
    def train(self):
        return self.inputs[: self.train_count], self.targets[: self.train_count]

    @property
    def validation(self):
        return self.inputs[self.train_count :], self.targets[self.train_count :]


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class TrainResult:
    net: Network
    train_losses: list
    val_losses: list


def build_dataset(history, window: int, train_fraction: float = 0.8) -> WindowedDataset:
    """Stride-1 windows over a (T, D) history targeting the following slot."""
    history = np.asarray(history, dtype=float)
    slots = history.shape[0]
    if slots <= window:
        raise ConfigError(
            f"history of {slots} slots is too short for window {window}"
        )
    count = slots - window
    inputs = np.empty((count, window, history.shape[1]))
    for j in range(count):
        inputs[j] = history[j : j + window]
    targets = history[window:]
    train_count = int(round(count * train_fraction))
    train_count = min(max(train_count, 1), count)
    return WindowedDataset(inputs=inputs, targets=targets, train_count=train_count)


def train(dataset: WindowedDataset, hidden_sizes=DEFAULT_HIDDEN, epochs: int = 20,
          lr: float = 1e-3, batch_size: int = 128, seed: int = 0,
          dtype=np.float64, patience: int = 0) -> TrainResult:
    """Fit the stacked LSTM; returns the net plus per-epoch BCE curves.

    patience > 0 enables early stopping on the validation loss (off by
    default: a fixed horizon keeps runs comparable).
    """
    x_train, y_train = dataset.train
    if x_train.shape[0] == 0:
        raise ConfigError("empty training split")
    num_devices = x_train.shape[2]
    net = Network.lstm_stack(num_devices, tuple(hidden_sizes), num_devices,
                             head="sigmoid", rng=substream(seed, "lstm", "init"),
                             seed=seed, dtype=dtype)
    x_train = x_train.astype(dtype)
    y_train = y_train.astype(dtype)
    x_val, y_val = dataset.validation
    x_val = x_val.astype(dtype)
    y_val = y_val.astype(dtype)

    shuffle_rng = substream(seed, "lstm", "shuffle")
    train_losses, val_losses = [], []
    best_val, since_best = np.inf, 0
    for epoch in range(epochs):
        order = shuffle_rng.permutation(x_train.shape[0])
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            caches = []
            pred = net.forward(x_train[idx], caches)
            value, d_pred = loss_value_and_grad("bce", pred, y_train[idx])
            if not np.isfinite(value):
                raise NumericalFault(
                    f"diverged: non-finite BCE at epoch {epoch}, seed {seed}"
                )
            net.adam_step(net.backward(d_pred, caches), lr)
            epoch_loss += value * len(idx)
            seen += len(idx)
        train_losses.append(epoch_loss / seen)
        val_losses.append(_bce_eval(net, x_val, y_val, batch_size))
        if patience > 0:
            if val_losses[-1] < best_val - 1e-12:
                best_val, since_best = val_losses[-1], 0
            else:
                since_best += 1
                if since_best >= patience:
                    break
    return TrainResult(net=net, train_losses=train_losses, val_losses=val_losses)


def _bce_eval(net, x, y, batch_size):
    if x.shape[0] == 0:
        return float("nan")
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        pred = net.forward(x[start : start + batch_size])
        value, _ = loss_value_and_grad("bce", pred, y[start : start + batch_size])
        total += value * pred.shape[0]
    return total / x.shape[0]


def predict(net: Network, window):
    """Binary predictions plus raw sigmoid probabilities for one window."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ConfigError("window must be a W x D matrix")
    probs = net.forward(window[None, :, :])[0]
    binary = (probs >= 0.5).astype(np.int8)  # exact 0.5 counts as active
    return binary, probs


def predict_batch(net: Network, windows):
    probs = net.forward(np.asarray(windows, dtype=float))
    return (probs >= 0.5).astype(np.int8), probs


def confusion(preds, truths) -> ConfusionMatrix:
    preds = np.asarray(preds).astype(bool).ravel()
    truths = np.asarray(truths).astype(bool).ravel()
    if preds.shape != truths.shape:
        raise ConfigError("prediction/truth lengths differ")
    return ConfusionMatrix(
        tp=int(np.sum(preds & truths)),
        fp=int(np.sum(preds & ~truths)),
        fn=int(np.sum(~preds & truths)),
        tn=int(np.sum(~preds & ~truths)),
    )


def _safe_ratio(num, den):
    """ratio, or (0, flagged) on an empty denominator."""
    if den == 0:
        return 0.0, True
    return num / den, False


def classification_report(preds, truths) -> dict:
    """Per-class precision/recall/f1 plus overall accuracy.

    Degenerate ratios (empty denominators) report 0.0 and set the
    `degenerate` flag for that class.
    """
    cm = confusion(preds, truths)
    report = {"confusion": cm, "accuracy": (cm.tp + cm.tn) / cm.total if cm.total else 0.0}
    for label, tp, fp, fn in (
        ("active", cm.tp, cm.fp, cm.fn),
        ("silent", cm.tn, cm.fn, cm.fp),
    ):
        precision, p_flag = _safe_ratio(tp, tp + fp)
        recall, r_flag = _safe_ratio(tp, tp + fn)
        f1, f_flag = _safe_ratio(2.0 * precision * recall, precision + recall)
        report[label] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "degenerate": p_flag or r_flag or f_flag,
        }
    return report
