"""Small numpy function approximators with hand-written reverse-mode gradients.

Everything here works on flat float64 parameter vectors so that optimizers,
checkpoints and finite-difference checks can treat every network the same way.
Networks expose views (weights, biases) into that flat vector; updating the
vector in place updates the network.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, UsageError

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HEADS = ("linear", "categorical", "gaussian")
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def orthogonal(rng, n_in, n_out, gain=1.0):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class DenseNet:
    """Fully connected ReLU network with a linear output layer.

    ``head`` only changes how the output is interpreted: ``"categorical"``
    outputs are logits, ``"gaussian"`` outputs are action means and the net
    carries an extra state-independent log-std vector at the tail of
    ``params``.
    """

    def __init__(self, sizes, head="linear", rng=None, out_gain=1.0, log_std_init=0.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer widths must be >= 2 positive integers, got {sizes}")
        if head not in HEADS:
            raise ConfigError(f"unknown head {head!r}; expected one of {HEADS}")
        self.sizes = sizes
        self.head = head
        self.n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        if head == "gaussian":
            self.n_params += sizes[-1]
        self.bind(np.zeros(self.n_params))
        self._cache = None
        if rng is not None:
            self.init_params(rng, out_gain=out_gain, log_std_init=log_std_init)

    @property
    def in_size(self):
        return self.sizes[0]

    @property
    def out_size(self):
        return self.sizes[-1]

    def bind(self, buffer):
        """Use ``buffer`` (length ``n_params``) as backing storage for the parameters."""
        if buffer.shape != (self.n_params,):
            raise ConfigError(f"parameter buffer has shape {buffer.shape}, need ({self.n_params},)")
        self.params = buffer
        self.weights, self.biases = [], []
        ofs = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(buffer[ofs:ofs + i * o].reshape(i, o))
            ofs += i * o
            self.biases.append(buffer[ofs:ofs + o])
            ofs += o
        self.raw_log_std = buffer[ofs:] if self.head == "gaussian" else None

    def init_params(self, rng, out_gain=1.0, log_std_init=0.0):
        n_layers = len(self.weights)
        for k, w in enumerate(self.weights):
            gain = out_gain if k == n_layers - 1 else math.sqrt(2.0)
            w[...] = orthogonal(rng, *w.shape, gain=gain)
        for b in self.biases:
            b[...] = 0.0
        if self.raw_log_std is not None:
            self.raw_log_std[...] = log_std_init

    @property
    def log_std(self):
        if self.raw_log_std is None:
            return None
        return np.clip(self.raw_log_std, LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_size or x.ndim not in (1, 2):
            raise ConfigError(f"input shape {x.shape} does not match first layer width {self.in_size}")
        single = x.ndim == 1
        h = x[None, :] if single else x
        inputs, pre = [], []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            if k < last:
                pre.append(z)
                h = np.maximum(z, 0.0)
            else:
                h = z
        self._cache = (inputs, pre, single)
        return h[0] if single else h

    def backward(self, grad_out, grad_log_std=None):
        """Gradient of the loss w.r.t. ``params`` given dLoss/dOutput.

        ``grad_log_std`` is dLoss/dlog_std (after clamping) for gaussian heads;
        it is masked where the clamp is active. The input gradient is left in
        ``self.input_grad``.
        """
        if self._cache is None:
            raise UsageError("backward called without a recorded forward pass")
        inputs, pre, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        g = g[None, :] if single else g
        if g.shape != (inputs[0].shape[0], self.out_size):
            raise UsageError(f"output gradient shape {g.shape} does not match forward output")
        grad = np.zeros(self.n_params)
        gw, gb = [], []
        for k in range(len(self.weights) - 1, -1, -1):
            gw.append(inputs[k].T @ g)
            gb.append(g.sum(axis=0))
            g = g @ self.weights[k].T
            if k > 0:
                g = g * (pre[k - 1] > 0.0)
        gw.reverse()
        gb.reverse()
        ofs = 0
        for w_grad, b_grad in zip(gw, gb):
            grad[ofs:ofs + w_grad.size] = w_grad.ravel()
            ofs += w_grad.size
            grad[ofs:ofs + b_grad.size] = b_grad
            ofs += b_grad.size
        if self.head == "gaussian" and grad_log_std is not None:
            gls = np.asarray(grad_log_std, dtype=np.float64)
            if gls.ndim == 2:
                gls = gls.sum(axis=0)
            inside = (self.raw_log_std >= LOG_STD_MIN) & (self.raw_log_std <= LOG_STD_MAX)
            grad[ofs:] = gls * inside
        self.input_grad = g[0] if single else g
        return grad


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class RecurrentCell:
    """GRU cell.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn), h' = (1 - z) * n + z * h.
    """

    def __init__(self, input_size, hidden_size, rng=None):
        if input_size <= 0 or hidden_size <= 0:
            raise ConfigError("GRU sizes must be positive")
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        i, h = self.input_size, self.hidden_size
        self.n_params = 3 * (i * h + h * h + h)
        self.bind(np.zeros(self.n_params))
        self._cache = None
        if rng is not None:
            self.init_params(rng)

    def bind(self, buffer):
        if buffer.shape != (self.n_params,):
            raise ConfigError(f"parameter buffer has shape {buffer.shape}, need ({self.n_params},)")
        self.params = buffer
        i, h = self.input_size, self.hidden_size
        ofs = 0
        self.W = buffer[ofs:ofs + 3 * i * h].reshape(i, 3 * h)
        ofs += 3 * i * h
        self.U = buffer[ofs:ofs + 3 * h * h].reshape(3, h, h)
        ofs += 3 * h * h
        self.b = buffer[ofs:ofs + 3 * h]

    def init_params(self, rng):
        h = self.hidden_size
        for k in range(3):
            self.W[:, k * h:(k + 1) * h] = orthogonal(rng, self.input_size, h)
            self.U[k] = orthogonal(rng, h, h)
        self.b[...] = 0.0

    def initial_state(self, batch=None):
        return np.zeros(self.hidden_size if batch is None else (batch, self.hidden_size))

    def _step(self, x, h):
        H = self.hidden_size
        xw = x @ self.W + self.b
        z = _sigmoid(xw[:, :H] + h @ self.U[0])
        r = _sigmoid(xw[:, H:2 * H] + h @ self.U[1])
        rh = r * h
        n = np.tanh(xw[:, 2 * H:] + rh @ self.U[2])
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, z, r, rh, n)

    def _check(self, x, h):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_size:
            raise ConfigError(f"input width {x.shape[-1]} != GRU input size {self.input_size}")
        if h is None:
            h = np.zeros(x.shape[:-1] + (self.hidden_size,))
        return x, np.asarray(h, dtype=np.float64)

    def forward(self, x, h=None):
        x, h = self._check(x, h)
        single = x.ndim == 1
        h_new, cache = self._step(np.atleast_2d(x), np.atleast_2d(h))
        self._cache = ([cache], single)
        out = h_new[0] if single else h_new
        return out, out

    def forward_sequence(self, xs, h0=None, resets=None):
        """Run T steps on inputs shaped (T, B, in); ``resets[t, b]`` zeros the state first."""
        xs, _ = self._check(xs, None)
        T, B = xs.shape[:2]
        h = np.zeros((B, self.hidden_size)) if h0 is None else np.array(h0, dtype=np.float64)
        caches, outs = [], np.empty((T, B, self.hidden_size))
        for t in range(T):
            if resets is not None:
                h = h * (1.0 - np.asarray(resets[t], dtype=np.float64))[:, None]
            h, cache = self._step(xs[t], h)
            caches.append(cache)
            outs[t] = h
        self._cache = (caches, None, resets)
        return outs

    def _step_backward(self, gh, cache, grad):
        x, h, z, r, rh, n = cache
        H = self.hidden_size
        dn = gh * (1.0 - z)
        dz = gh * (h - n)
        dh = gh * z
        dn_pre = dn * (1.0 - n * n)
        drh = dn_pre @ self.U[2].T
        dr = drh * h
        dh += drh * r
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dh += dz_pre @ self.U[0].T + dr_pre @ self.U[1].T
        dxw = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
        i = self.input_size
        grad[0:3 * i * H] += (x.T @ dxw).ravel()
        ofs = 3 * i * H
        for k, (a, d) in enumerate(((h, dz_pre), (h, dr_pre), (rh, dn_pre))):
            grad[ofs + k * H * H:ofs + (k + 1) * H * H] += (a.T @ d).ravel()
        ofs += 3 * H * H
        grad[ofs:] += dxw.sum(axis=0)
        dx = dxw @ self.W.T
        return dx, dh

    def backward(self, grad_out):
        """Single-step backward; leaves input and previous-state gradients on the cell."""
        if self._cache is None or len(self._cache) != 2:
            raise UsageError("backward called without a recorded single-step forward")
        (cache,), single = self._cache
        grad = np.zeros(self.n_params)
        dx, dh = self._step_backward(np.atleast_2d(grad_out), cache, grad)
        self.input_grad = dx[0] if single else dx
        self.hidden_grad = dh[0] if single else dh
        return grad

    def backward_sequence(self, grad_outs):
        """BPTT for the last ``forward_sequence``; returns parameter gradient."""
        if self._cache is None or len(self._cache) != 3:
            raise UsageError("backward_sequence called without forward_sequence")
        caches, _, resets = self._cache
        grad = np.zeros(self.n_params)
        T = len(caches)
        dxs = np.empty((T,) + caches[0][0].shape)
        carry = np.zeros_like(caches[0][1])
        for t in range(T - 1, -1, -1):
            dx, carry = self._step_backward(grad_outs[t] + carry, caches[t], grad)
            dxs[t] = dx
            if resets is not None:
                carry = carry * (1.0 - np.asarray(resets[t], dtype=np.float64))[:, None]
        self.input_grad = dxs
        return grad


class PolicyNet:
    """Actor (or critic) = optional GRU encoder followed by a DenseNet head.

    All parameters live in one flat vector so a single optimizer and
    checkpoint entry covers the whole network.
    """

    def __init__(self, in_size, out_size, hidden=(128, 128), head="categorical",
                 gru_hidden=0, rng=None, out_gain=0.01, log_std_init=0.0):
        self.in_size = in_size
        self.gru = RecurrentCell(in_size, gru_hidden) if gru_hidden else None
        feat = gru_hidden if gru_hidden else in_size
        self.dense = DenseNet([feat, *hidden, out_size], head=head)
        n_gru = self.gru.n_params if self.gru else 0
        self.n_params = n_gru + self.dense.n_params
        self.params = np.zeros(self.n_params)
        if self.gru:
            self.gru.bind(self.params[:n_gru])
        self.dense.bind(self.params[n_gru:])
        self._n_gru = n_gru
        if rng is not None:
            if self.gru:
                self.gru.init_params(rng)
            self.dense.init_params(rng, out_gain=out_gain, log_std_init=log_std_init)

    @property
    def head(self):
        return self.dense.head

    @property
    def recurrent(self):
        return self.gru is not None

    @property
    def log_std(self):
        return self.dense.log_std

    def step(self, x, h=None):
        """One decision step: returns (head output, new hidden state or None)."""
        if self.gru is None:
            return self.dense.forward(x), None
        h_new, _ = self.gru.forward(x, h)
        return self.dense.forward(h_new), h_new

    def forward(self, xs):
        """Batch evaluation. Feed-forward: xs is (B, in). Recurrent: xs is (T, B, in),
        each column a whole episode starting from a zero state."""
        if self.gru is None:
            return self.dense.forward(xs)
        hs = self.gru.forward_sequence(xs)
        T, B, H = hs.shape
        return self.dense.forward(hs.reshape(T * B, H)).reshape(T, B, -1)

    def backward(self, grad_out, grad_log_std=None):
        grad = np.zeros(self.n_params)
        if self.gru is None:
            grad[:] = self.dense.backward(grad_out, grad_log_std)
            return grad
        T, B, A = grad_out.shape
        grad[self._n_gru:] = self.dense.backward(grad_out.reshape(T * B, A), grad_log_std)
        dh = self.dense.input_grad.reshape(T, B, -1)
        grad[:self._n_gru] = self.gru.backward_sequence(dh)
        return grad


class Adam:
    """Bias-corrected Adam acting in place on a flat parameter vector."""

    def __init__(self, n_params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != params.shape or grad.shape != self.m.shape:
            raise UsageError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient; update rejected")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def clip_grad_norm(grad, max_norm):
    if max_norm is None or max_norm <= 0:
        return grad
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad


# -- action distributions ---------------------------------------------------

def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_log_prob(logits, actions):
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.int64)
    return np.take_along_axis(lp, actions[..., None], axis=-1)[..., 0]


def categorical_entropy(logits):
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -(np.exp(lp) * lp).sum(axis=-1)


def gaussian_log_prob(mean, log_std, actions):
    z = (actions - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - _HALF_LOG_2PI).sum(axis=-1)


def gaussian_entropy(log_std, batch_shape=()):
    h = float(np.sum(log_std + 0.5 + _HALF_LOG_2PI))
    return np.full(batch_shape, h) if batch_shape else h


def log_prob(head, output, actions, log_std=None):
    if head == "categorical":
        return categorical_log_prob(output, actions)
    return gaussian_log_prob(output, log_std, actions)


def entropy(head, output, log_std=None):
    if head == "categorical":
        return categorical_entropy(output)
    return gaussian_entropy(log_std, np.shape(output)[:-1])


def log_prob_grads(head, output, actions, log_std=None):
    """d log-prob / d output per sample, and d log-prob / d log_std (gaussian)."""
    if head == "categorical":
        p = np.exp(log_softmax(output))
        g = -p
        idx = np.asarray(actions, dtype=np.int64)
        np.put_along_axis(g, idx[..., None], np.take_along_axis(g, idx[..., None], -1) + 1.0, -1)
        return g, None
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - output
    return diff * inv_var, diff * diff * inv_var - 1.0


def entropy_grads(head, output, log_std=None):
    if head == "categorical":
        lp = log_softmax(output)
        p = np.exp(lp)
        h = -(p * lp).sum(axis=-1, keepdims=True)
        return -p * (lp + h), None
    return np.zeros_like(output), np.ones(np.shape(output))


def sample_action(output, head="categorical", mode="stochastic", rng=None, log_std=None):
    """Draw an action from a policy head output.

    Returns ``(action, log_prob, entropy)``; works on a single output vector or
    a batch of them.
    """
    output = np.asarray(output, dtype=np.float64)
    if not np.all(np.isfinite(output)):
        raise NumericError("non-finite policy output")
    if mode not in ("stochastic", "greedy"):
        raise ConfigError(f"unknown sampling mode {mode!r}")
    if head == "categorical":
        if mode == "greedy":
            action = np.argmax(output, axis=-1)
        else:
            p = np.exp(log_softmax(output))
            u = rng.random(output.shape[:-1] + (1,))
            action = np.minimum((np.cumsum(p, axis=-1) < u).sum(axis=-1), output.shape[-1] - 1)
    elif head == "gaussian":
        if log_std is None:
            raise ConfigError("gaussian head needs log_std")
        if mode == "greedy":
            action = output.copy()
        else:
            action = output + np.exp(log_std) * rng.standard_normal(output.shape)
    else:
        raise ConfigError(f"head {head!r} does not define an action distribution")
    return action, log_prob(head, output, action, log_std), entropy(head, output, log_std)


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"E2CCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays, meta=None):
    """Write named float arrays: header (magic, version, JSON meta, shape
    manifest) followed by little-endian float64 data in insertion order."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    head = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays)),
            struct.pack("<I", len(meta_bytes)), meta_bytes]
    body = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode()
        head.append(struct.pack("<HB", len(nb), arr.ndim) + nb + struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(head + body))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(arrays, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 16)
    ofs = 20
    meta = json.loads(data[ofs:ofs + meta_len])
    ofs += meta_len
    manifest = []
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", data, ofs)
        ofs += 3
        name = data[ofs:ofs + name_len].decode()
        ofs += name_len
        shape = struct.unpack_from(f"<{ndim}I", data, ofs)
        ofs += 4 * ndim
        manifest.append((name, shape))
    arrays = {}
    for name, shape in manifest:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=ofs).reshape(shape).astype(np.float64)
        ofs += 8 * n
    if ofs != len(data):
        raise ConfigError(f"{path}: trailing or missing bytes in checkpoint")
    return arrays, meta
