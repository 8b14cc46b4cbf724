"""Minimal from-scratch neural toolkit on numpy.

Dense stacks and stacked LSTM networks with hand-written backprop (through
time), MSE/BCE losses, Adam, finite-difference gradient verification and a
deterministic checkpoint format. No autodiff, no GPU: float64 by default,
float32 available where speed matters more than the last digits.

LSTM cell, given the previous short memory h and long memory c:

    f = sigmoid(W_f [h, x] + b_f)        forget
    i = sigmoid(W_i [h, x] + b_i)        learn
    g = tanh   (W_c [h, x] + b_c)        candidate memory
    c' = f * c + i * g                   remember
    o = sigmoid(W_o [h, x] + b_o)        use
    h' = o * tanh(c')

The four gate blocks live in one (n_in + hidden, 4*hidden) matrix in
[f, i, g, o] order. Biases are kept in every gate.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalFault

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_activation(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise ConfigError(f"unknown activation {name!r}")


def _activation_grad(name, z, a):
    """d activation / d z, from preactivation z and activation a."""
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    raise ConfigError(f"unknown activation {name!r}")


def _init_matrix(rng, n_in, n_out, dtype):
    # Uniform scaled by 1/sqrt(fan-in).
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)


@dataclass
class LstmState:
    """Short memory h(t) and long memory C(t) of one LSTM layer."""

    hidden: np.ndarray
    cell: np.ndarray


class Dense:
    kind = "dense"

    def __init__(self, n_in, n_out, activation="linear", rng=None, dtype=np.float64):
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        if rng is None:
            self.W = np.zeros((n_in, n_out), dtype=dtype)
        else:
            self.W = _init_matrix(rng, n_in, n_out, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self._zero_moments()

    def _zero_moments(self):
        self.mW = np.zeros_like(self.W)
        self.vW = np.zeros_like(self.W)
        self.mb = np.zeros_like(self.b)
        self.vb = np.zeros_like(self.b)

    def spec(self):
        return {
            "kind": "dense",
            "n_in": self.n_in,
            "n_out": self.n_out,
            "activation": self.activation,
        }

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def moments(self):
        return [("W", self.mW, self.vW), ("b", self.mb, self.vb)]

    def forward(self, x, cache=None):
        if x.shape[-1] != self.n_in:
            raise ConfigError(
                f"dense layer expects {self.n_in} inputs, got {x.shape[-1]}"
            )
        z = x @ self.W + self.b
        a = _apply_activation(self.activation, z)
        if cache is not None:
            cache["x"], cache["z"], cache["a"] = x, z, a
        return a

    def backward(self, da, cache, grads):
        dz = da * _activation_grad(self.activation, cache["z"], cache["a"])
        grads["W"] = cache["x"].T @ dz
        grads["b"] = dz.sum(axis=0)
        return dz @ self.W.T


class Lstm:
    kind = "lstm"

    def __init__(self, n_in, hidden, rng=None, dtype=np.float64):
        self.n_in = n_in
        self.hidden = hidden
        n_cat = n_in + hidden
        if rng is None:
            self.W = np.zeros((n_cat, 4 * hidden), dtype=dtype)
        else:
            self.W = _init_matrix(rng, n_cat, 4 * hidden, dtype)
        self.b = np.zeros(4 * hidden, dtype=dtype)
        self._zero_moments()

    def _zero_moments(self):
        self.mW = np.zeros_like(self.W)
        self.vW = np.zeros_like(self.W)
        self.mb = np.zeros_like(self.b)
        self.vb = np.zeros_like(self.b)

    def spec(self):
        return {"kind": "lstm", "n_in": self.n_in, "hidden": self.hidden}

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def moments(self):
        return [("W", self.mW, self.vW), ("b", self.mb, self.vb)]

    def _gates(self, h_prev, c_prev, x_t):
        h = self.hidden
        z = h_prev @ self.W[:h] + x_t @ self.W[h:] + self.b
        f = _sigmoid(z[:, :h])
        i = _sigmoid(z[:, h : 2 * h])
        g = np.tanh(z[:, 2 * h : 3 * h])
        o = _sigmoid(z[:, 3 * h :])
        c = f * c_prev + i * g
        hc = np.tanh(c)
        h_new = o * hc
        return f, i, g, o, c, hc, h_new

    def cell(self, state: LstmState, x_t) -> LstmState:
        """Single-step update (batched or flat vectors)."""
        flat = x_t.ndim == 1
        h_prev = np.atleast_2d(state.hidden)
        c_prev = np.atleast_2d(state.cell)
        x2 = np.atleast_2d(x_t)
        if x2.shape[-1] != self.n_in:
            raise ConfigError(f"lstm expects {self.n_in} inputs, got {x2.shape[-1]}")
        if h_prev.shape[-1] != self.hidden or c_prev.shape[-1] != self.hidden:
            raise ConfigError("lstm state size does not match the layer")
        *_, c, _, h_new = self._gates(h_prev, c_prev, x2)
        if flat:
            return LstmState(hidden=h_new[0], cell=c[0])
        return LstmState(hidden=h_new, cell=c)

    def forward_seq(self, x, cache=None):
        """x: (B, T, n_in) -> hidden sequence (B, T, hidden); h0 = c0 = 0."""
        batch, steps, _ = x.shape
        dtype = self.W.dtype
        h = np.zeros((batch, self.hidden), dtype=dtype)
        c = np.zeros((batch, self.hidden), dtype=dtype)
        h_seq = np.empty((batch, steps, self.hidden), dtype=dtype)
        if cache is not None:
            cache["x"] = x
            cache["steps"] = []
        for t in range(steps):
            c_prev = c
            f, i, g, o, c, hc, h = self._gates(h, c_prev, x[:, t])
            h_seq[:, t] = h
            if cache is not None:
                cache["steps"].append((f, i, g, o, c_prev, c, hc))
        if cache is not None:
            cache["h_seq"] = h_seq
        return h_seq

    def backward_seq(self, dh_seq, cache, grads):
        """BPTT given upstream gradients on every hidden output."""
        x = cache["x"]
        h_seq = cache["h_seq"]
        batch, steps, _ = x.shape
        hdim = self.hidden
        dtype = self.W.dtype
        da_all = np.empty((batch, steps, 4 * hdim), dtype=dtype)
        dh_rec = np.zeros((batch, hdim), dtype=dtype)
        dc_rec = np.zeros((batch, hdim), dtype=dtype)
        dWh = np.zeros((hdim, 4 * hdim), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            f, i, g, o, c_prev, c, hc = cache["steps"][t]
            dh = dh_seq[:, t] + dh_rec
            do = dh * hc
            dc = dh * o * (1.0 - hc * hc) + dc_rec
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            da = da_all[:, t]
            da[:, :hdim] = df * f * (1.0 - f)
            da[:, hdim : 2 * hdim] = di * i * (1.0 - i)
            da[:, 2 * hdim : 3 * hdim] = dg * (1.0 - g * g)
            da[:, 3 * hdim :] = do * o * (1.0 - o)
            dc_rec = dc * f
            dh_rec = da @ self.W[:hdim].T
            h_prev = h_seq[:, t - 1] if t > 0 else np.zeros((batch, hdim), dtype=dtype)
            dWh += h_prev.T @ da
        flat_da = da_all.reshape(batch * steps, 4 * hdim)
        flat_x = x.reshape(batch * steps, self.n_in)
        grads["W"] = np.concatenate([dWh, flat_x.T @ flat_da], axis=0)
        grads["b"] = flat_da.sum(axis=0)
        return (flat_da @ self.W[hdim:].T).reshape(batch, steps, self.n_in)


class Network:
    """A stack of Dense/Lstm layers with shared Adam state.

    Two shapes of network are supported: pure dense stacks operating on
    (batch, features), and sequence networks (any Lstm present) operating on
    (batch, time, features) where the first dense layer after the recurrent
    stack reads the final-step hidden state.
    """

    def __init__(self, layers, seed=None):
        self.layers = list(layers)
        self.step = 0
        self.seed = seed
        for prev, nxt in zip(self.layers, self.layers[1:]):
            n_out = prev.n_out if prev.kind == "dense" else prev.hidden
            if nxt.n_in != n_out:
                raise ConfigError(
                    f"layer sizes do not compose: {n_out} -> {nxt.n_in}"
                )

    # -- constructors -------------------------------------------------------

    @classmethod
    def mlp(cls, sizes, hidden_activation="relu", head="linear", rng=None,
            seed=None, dtype=np.float64):
        """Dense stack: sizes = (n_in, h1, ..., n_out)."""
        layers = []
        for j in range(len(sizes) - 1):
            act = head if j == len(sizes) - 2 else hidden_activation
            layers.append(Dense(sizes[j], sizes[j + 1], act, rng=rng, dtype=dtype))
        return cls(layers, seed=seed)

    @classmethod
    def lstm_stack(cls, n_in, hidden_sizes, n_out, head="sigmoid", rng=None,
                   seed=None, dtype=np.float64):
        """Stacked LSTM layers followed by a dense head on the last step."""
        layers = []
        size = n_in
        for h in hidden_sizes:
            layers.append(Lstm(size, h, rng=rng, dtype=dtype))
            size = h
        layers.append(Dense(size, n_out, head, rng=rng, dtype=dtype))
        return cls(layers, seed=seed)

    @property
    def is_recurrent(self):
        return any(layer.kind == "lstm" for layer in self.layers)

    # -- forward/backward ---------------------------------------------------

    def forward(self, x, caches=None):
        x = np.asarray(x)
        squeeze = False
        if not self.is_recurrent and x.ndim == 1:
            x, squeeze = x[None, :], True
        out = x
        for idx, layer in enumerate(self.layers):
            cache = None
            if caches is not None:
                cache = {}
                caches.append(cache)
            if layer.kind == "lstm":
                out = layer.forward_seq(out, cache)
            else:
                if out.ndim == 3:  # dense head reads the final hidden state
                    if cache is not None:
                        cache["from_seq"] = out.shape
                    out = out[:, -1, :]
                out = layer.forward(out, cache)
        return out[0] if squeeze else out

    def backward(self, d_out, caches):
        grads = [dict() for _ in self.layers]
        d = d_out
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            cache = caches[idx]
            if layer.kind == "lstm":
                d = layer.backward_seq(d, cache, grads[idx])
            else:
                d = layer.backward(d, cache, grads[idx])
                if "from_seq" in cache:  # re-expand onto the sequence
                    full = np.zeros(cache["from_seq"], dtype=d.dtype)
                    full[:, -1, :] = d
                    d = full
        return grads

    # -- parameter plumbing -------------------------------------------------

    def parameter_arrays(self):
        """[(layer_idx, name, array)] over all trainable parameters."""
        out = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params():
                out.append((idx, name, arr))
        return out

    def num_parameters(self):
        return sum(arr.size for _, _, arr in self.parameter_arrays())

    def copy(self):
        """Deep copy (parameters, moments and step counter)."""
        clone = Network.__new__(Network)
        clone.layers = []
        clone.step = self.step
        clone.seed = self.seed
        for layer in self.layers:
            if layer.kind == "dense":
                dup = Dense(layer.n_in, layer.n_out, layer.activation)
            else:
                dup = Lstm(layer.n_in, layer.hidden)
            dup.W = layer.W.copy()
            dup.b = layer.b.copy()
            dup.mW, dup.vW = layer.mW.copy(), layer.vW.copy()
            dup.mb, dup.vb = layer.mb.copy(), layer.vb.copy()
            clone.layers.append(dup)
        return clone

    def copy_weights_from(self, other):
        for mine, theirs in zip(self.layers, other.layers):
            mine.W[...] = theirs.W
            mine.b[...] = theirs.b

    # -- optimization -------------------------------------------------------

    def adam_step(self, grads, lr):
        self.step += 1
        t = self.step
        bc1 = 1.0 - ADAM_BETA1**t
        bc2 = 1.0 - ADAM_BETA2**t
        for layer, g in zip(self.layers, grads):
            for name, param in layer.params():
                grad = g[name]
                m = getattr(layer, "m" + name)
                v = getattr(layer, "v" + name)
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * grad
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * grad * grad
                param -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)

    # -- persistence --------------------------------------------------------

    def save(self, path):
        """Deterministic single-file checkpoint: JSON header + raw arrays."""
        arrays = []
        blobs = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params():
                arrays.append(_array_entry(f"layers.{idx}.{name}", arr))
                blobs.append(arr)
            for name, m, v in layer.moments():
                arrays.append(_array_entry(f"layers.{idx}.m{name}", m))
                blobs.append(m)
                arrays.append(_array_entry(f"layers.{idx}.v{name}", v))
                blobs.append(v)
        header = {
            "format": "aoisim-net-v1",
            "layers": [layer.spec() for layer in self.layers],
            "step": self.step,
            "seed": self.seed,
            "arrays": arrays,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            for blob in blobs:
                fh.write(np.ascontiguousarray(blob).astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            if header.get("format") != "aoisim-net-v1":
                raise ConfigError(f"{path}: not an aoisim network checkpoint")
            layers = []
            for spec in header["layers"]:
                if spec["kind"] == "dense":
                    layers.append(Dense(spec["n_in"], spec["n_out"], spec["activation"]))
                else:
                    layers.append(Lstm(spec["n_in"], spec["hidden"]))
            net = cls(layers, seed=header.get("seed"))
            net.step = header["step"]
            by_name = {}
            for idx, layer in enumerate(net.layers):
                for name, arr in layer.params():
                    by_name[f"layers.{idx}.{name}"] = arr
                for name, m, v in layer.moments():
                    by_name[f"layers.{idx}.m{name}"] = m
                    by_name[f"layers.{idx}.v{name}"] = v
            for entry in header["arrays"]:
                arr = by_name[entry["name"]]
                raw = fh.read(entry["nbytes"])
                arr[...] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"])
        return net


def _array_entry(name, arr):
    return {"name": name, "shape": list(arr.shape), "nbytes": arr.size * 8}


# -- losses -----------------------------------------------------------------

BCE_CLAMP = 1e-7


def loss_value_and_grad(kind, pred, target):
    """Scalar loss (mean over every element) and its gradient w.r.t. pred."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ConfigError(f"prediction {pred.shape} vs target {target.shape}")
    n = pred.size
    if kind == "mse":
        diff = pred - target
        return float(np.mean(diff * diff)), (2.0 / n) * diff
    if kind == "bce":
        p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
        value = -float(np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))
        return value, (p - target) / (p * (1.0 - p)) / n
    raise ConfigError(f"unknown loss {kind!r}")


# -- spec-level operations ---------------------------------------------------

def dense_forward(net: Network, x):
    """Forward pass through a dense stack, with a finite-output guard."""
    out = net.forward(np.asarray(x))
    if not np.all(np.isfinite(out)):
        raise NumericalFault("non-finite output from dense forward pass")
    return out


def lstm_cell(layer: Lstm, state: LstmState, x) -> LstmState:
    """One LSTM step on explicit state (the training loop batches instead)."""
    return layer.cell(state, np.asarray(x))


def train_step(net: Network, inputs, targets, loss="mse", lr=1e-3):
    """One Adam step on the mean batch loss; returns the pre-step loss."""
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    inputs = np.asarray(inputs)
    if inputs.shape[0] == 0:
        raise ConfigError("empty batch")
    caches = []
    pred = net.forward(inputs, caches)
    value, d_pred = loss_value_and_grad(loss, pred, targets)
    if not np.isfinite(value):
        raise NumericalFault(
            f"non-finite {loss} loss at adam step {net.step + 1}"
        )
    grads = net.backward(d_pred, caches)
    net.adam_step(grads, lr)
    return value


def gradient_check(net: Network, inputs, targets, loss="mse", num_samples=120,
                   eps=1e-5, rng=None):
    """Max relative error of backprop vs central differences.

    Samples up to num_samples parameter entries (all of them when the
    network is smaller than that).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    inputs = np.asarray(inputs)
    caches = []
    pred = net.forward(inputs, caches)
    _, d_pred = loss_value_and_grad(loss, pred, targets)
    grads = net.backward(d_pred, caches)

    entries = []
    for idx, (layer, g) in enumerate(zip(net.layers, grads)):
        for name, param in layer.params():
            entries.append((param, g[name]))
    sizes = np.array([p.size for p, _ in entries])
    total = int(sizes.sum())
    count = min(num_samples, total)
    picks = rng.choice(total, size=count, replace=False)

    worst = 0.0
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for flat_idx in picks:
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        param, grad = entries[which]
        local = int(flat_idx - offsets[which])
        orig = param.flat[local]
        param.flat[local] = orig + eps
        up, _ = loss_value_and_grad(loss, net.forward(inputs), targets)
        param.flat[local] = orig - eps
        down, _ = loss_value_and_grad(loss, net.forward(inputs), targets)
        param.flat[local] = orig
        fd = (up - down) / (2.0 * eps)
        bp = grad.flat[local]
        rel = abs(bp - fd) / max(abs(bp), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst
