"""Deep LSTM + FNN channel tracker.

A K-layer LSTM stack is unrolled over a window of T past steps. Layer 1 at
unrolled step tau sees one previous channel estimate (2M reals: real parts
then imaginary parts) and one scaled feedback value; the last layer's output
at the final step is the coarse estimate ``h_bar``. An FNN with L ReLU
hidden layers and a linear output layer maps ``h_bar`` to the 2M reals of the
channel estimate, which is pushed back into the window for the next step.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .channel import ChannelDynamics, generate_batch
from .numerics import PRNG_ID, Rng

CHECKPOINT_FORMAT = "wettrack-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrackerArch:
    m: int = 2
    t_window: int = 2
    k_depth: int = 3
    l_hidden: int = 2
    q_hidden: int = 20
    gate_activation: str = "tanh"
    fnn_hidden_activation: str = "relu"
    fnn_output_activation: str = "identity"
    untied: bool = False

    def __post_init__(self):
        for name in ("m", "t_window", "k_depth", "l_hidden", "q_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.gate_activation not in ("tanh", "sigmoid"):
            raise ValueError(f"gate_activation must be tanh or sigmoid, got {self.gate_activation!r}")
        for name in ("fnn_hidden_activation", "fnn_output_activation"):
            if getattr(self, name) not in nn.ACTIVATIONS:
                raise ValueError(f"unknown {name} {getattr(self, name)!r}")

    @property
    def input_dim(self) -> int:
        return 2 * self.m + 1

    @property
    def out_dim(self) -> int:
        return 2 * self.m


@dataclass
class TrainConfig:
    n_samples: int = 10_000
    minibatch: int = 1_000
    epochs: int = 100
    alpha: float = 2e-3
    optimizer: str = "adam"
    mode: str = "teacher_forced"
    train_snr_db: float = 30.0
    seed: int = 0
    perturb_var: float = 1e-4
    closed_loop_epochs: int = 0
    closed_loop_seq_len: int = 100

    def __post_init__(self):
        if self.n_samples < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("n_samples, minibatch and epochs must be >= 1")
        if self.minibatch > self.n_samples:
            raise ValueError("minibatch must not exceed n_samples")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("teacher_forced", "closed_loop"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.perturb_var < 0:
            raise ValueError("perturb_var must be >= 0")


@dataclass
class TrainReport:
    loss_history: list
    params: dict
    wall_seconds: float = 0.0
    closed_loop_history: list = field(default_factory=list)
    final_mse: float = float("nan")

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


# -- operation counting ------------------------------------------------------

class OpCounter:
    """Tally of multiply-adds performed by network forward passes, per sample."""

    _active: "OpCounter | None" = None

    def __init__(self):
        self.madds = 0

    def add(self, n: int):
        self.madds += int(n)


@contextlib.contextmanager
def count_ops():
    prev = OpCounter._active
    counter = OpCounter()
    OpCounter._active = counter
    try:
        yield counter
    finally:
        OpCounter._active = prev


def _tally(n: int):
    if OpCounter._active is not None:
        OpCounter._active.add(n)


# -- helpers -----------------------------------------------------------------

def to_reals(h) -> np.ndarray:
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag], axis=-1)


def to_complex(v) -> np.ndarray:
    v = np.asarray(v)
    m = v.shape[-1] // 2
    return v[..., :m] + 1j * v[..., m:]


class LstmFnnTracker:
    """Parameters of the LSTM grid and FNN plus the sliding input window."""

    def __init__(self, arch: TrackerArch, cells: list, fnn: list, zeta: float = 1.0):
        self.arch = arch
        self.cells = cells
        self.fnn = fnn
        self.zeta = float(zeta)
        self._validate()
        self.reset()

    def _validate(self):
        a = self.arch
        if len(self.cells) != a.k_depth:
            raise ValueError(f"expected {a.k_depth} LSTM layers, got {len(self.cells)}")
        per_layer = a.t_window if a.untied else 1
        for k, layer in enumerate(self.cells):
            if len(layer) != per_layer:
                raise ValueError(f"layer {k} has {len(layer)} cells, expected {per_layer}")
            d = a.input_dim if k == 0 else a.q_hidden
            for p in layer:
                if (p.q, p.d) != (a.q_hidden, d):
                    raise ValueError(f"layer {k} cell shape {(p.q, p.d)} != {(a.q_hidden, d)}")
        if len(self.fnn) != a.l_hidden + 1:
            raise ValueError(f"expected {a.l_hidden + 1} dense layers, got {len(self.fnn)}")
        width = a.q_hidden
        for j, p in enumerate(self.fnn):
            out = a.out_dim if j == a.l_hidden else a.q_hidden
            if p.V.shape != (out, width):
                raise ValueError(f"dense layer {j} shape {p.V.shape} != {(out, width)}")
            width = out

    # window --------------------------------------------------------------
    def reset(self):
        """Cold start: zero estimates and zero feedbacks in the window."""
        a = self.arch
        self.est_window = np.zeros((a.t_window, a.out_dim))
        self.fb_window = np.zeros(a.t_window)
        self.steps = 0

    def cell(self, k: int, tau: int) -> nn.LstmCellParams:
        layer = self.cells[k]
        return layer[tau] if self.arch.untied else layer[0]

    def feedback_scale(self) -> float:
        return 1.0 / (self.zeta * self.arch.m)

    def window_inputs(self, est, fb) -> np.ndarray:
        """Layer-1 inputs ``(B, T, 2M+1)`` from estimate windows ``(B, T, 2M)`` and
        feedback windows ``(B, T)``, both oldest first."""
        est = nn.as_float(est)
        fb = nn.as_float(fb)
        if est.ndim == 2:
            est, fb = est[None], fb[None]
        a = self.arch
        if est.shape[1:] != (a.t_window, a.out_dim) or fb.shape != est.shape[:2]:
            raise ValueError(f"window shapes {est.shape}, {fb.shape} do not match arch")
        return np.concatenate([est, fb[..., None] * self.feedback_scale()], axis=-1)

    # parameters ------------------------------------------------------------
    def params(self) -> dict:
        tree = {}
        for k, layer in enumerate(self.cells):
            for tau, p in enumerate(layer):
                pre = f"lstm{k}.t{tau}" if self.arch.untied else f"lstm{k}"
                tree[f"{pre}.W"], tree[f"{pre}.U"], tree[f"{pre}.b"] = p.W, p.U, p.b
        for j, p in enumerate(self.fnn):
            tree[f"fnn{j}.V"], tree[f"fnn{j}.beta"] = p.V, p.beta
        return tree

    def set_params(self, tree: dict):
        current = self.params()
        if tree.keys() != current.keys():
            raise ValueError("parameter tree keys do not match this tracker")
        for k, v in tree.items():
            if np.shape(v) != current[k].shape:
                raise ValueError(f"shape mismatch for {k}")
        for k, layer in enumerate(self.cells):
            for tau in range(len(layer)):
                pre = f"lstm{k}.t{tau}" if self.arch.untied else f"lstm{k}"
                layer[tau] = nn.LstmCellParams(nn.as_float(tree[f"{pre}.W"]).copy(),
                                               nn.as_float(tree[f"{pre}.U"]).copy(),
                                               nn.as_float(tree[f"{pre}.b"]).copy())
        for j, p in enumerate(self.fnn):
            self.fnn[j] = nn.DenseParams(nn.as_float(tree[f"fnn{j}.V"]).copy(),
                                         nn.as_float(tree[f"fnn{j}.beta"]).copy(), p.activation)

    def copy(self) -> "LstmFnnTracker":
        tr = LstmFnnTracker(self.arch, [[p for p in layer] for layer in self.cells], list(self.fnn), self.zeta)
        tr.set_params({k: v.copy() for k, v in self.params().items()})
        tr.est_window, tr.fb_window, tr.steps = self.est_window.copy(), self.fb_window.copy(), self.steps
        return tr

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.params().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    # forward / backward ------------------------------------------------------
    def coarse_forward(self, inputs):
        """Unroll the LSTM stack over the window; returns ``(h_bar, caches)``.

        ``inputs`` is ``(B, T, 2M+1)``. ``h_bar`` is the last layer's output
        at the final step, shape ``(B, q)``.
        """
        inputs = nn.as_float(inputs)
        if inputs.ndim == 2:
            inputs = inputs[None]
        a = self.arch
        if inputs.shape[1] != a.t_window:
            raise RuntimeError(f"window holds {inputs.shape[1]} steps, tracker needs {a.t_window}")
        batch = inputs.shape[0]
        caches = [[None] * a.t_window for _ in range(a.k_depth)]
        layer_in = [inputs[:, tau] for tau in range(a.t_window)]
        for k in range(a.k_depth):
            state = nn.LstmCellState.zeros(a.q_hidden, batch)
            outs = []
            for tau in range(a.t_window):
                p = self.cell(k, tau)
                _tally(4 * p.q * (p.d + p.q))
                state, caches[k][tau] = nn.lstm_cell_forward(p, layer_in[tau], state, a.gate_activation)
                outs.append(state.c)
            layer_in = outs
        return layer_in[-1], caches

    def fine_tune_forward(self, h_bar):
        """FNN on the coarse estimate; returns ``(h_hat_reals (B, 2M), caches)``."""
        x = nn.as_float(h_bar)
        caches = []
        for p in self.fnn:
            _tally(p.V.size)
            x, c = nn.dense_forward(p, x)
            caches.append(c)
        return x, caches

    def forward(self, inputs):
        h_bar, lstm_caches = self.coarse_forward(inputs)
        out, fnn_caches = self.fine_tune_forward(h_bar)
        return out, (lstm_caches, fnn_caches)

    def backward(self, caches, d_out) -> dict:
        """Gradient tree of a loss with dL/d(output reals) = ``d_out``."""
        lstm_caches, fnn_caches = caches
        a = self.arch
        grads = {}
        d = d_out
        for j in range(len(self.fnn) - 1, -1, -1):
            g, d = nn.dense_backward(self.fnn[j], fnn_caches[j], d)
            grads[f"fnn{j}.V"], grads[f"fnn{j}.beta"] = g.V, g.beta
        batch = d.shape[0]
        # d_layer_out[tau]: gradient w.r.t. c-output of the current layer at step tau
        d_layer_out = [np.zeros((batch, a.q_hidden)) for _ in range(a.t_window)]
        d_layer_out[-1] = d
        for k in range(a.k_depth - 1, -1, -1):
            d_next = nn.LstmCellState(np.zeros((batch, a.q_hidden)), np.zeros((batch, a.q_hidden)))
            d_below = [None] * a.t_window
            for tau in range(a.t_window - 1, -1, -1):
                p = self.cell(k, tau)
                d_next = nn.LstmCellState(d_next.c + d_layer_out[tau], d_next.s)
                g, d_below[tau], d_next = nn.lstm_cell_backward(p, lstm_caches[k][tau], d_next)
                pre = f"lstm{k}.t{tau}" if a.untied else f"lstm{k}"
                for name in ("W", "U", "b"):
                    key = f"{pre}.{name}"
                    grads[key] = grads[key] + getattr(g, name) if key in grads else getattr(g, name)
            d_layer_out = d_below
        return grads

    def loss(self, inputs, targets):
        out, _ = self.forward(inputs)
        diff = out - targets
        return np.sum(diff * diff) / out.shape[0]

    def loss_and_grads(self, inputs, targets):
        """Mean over the batch of ||target - output||^2 and its gradient tree."""
        out, caches = self.forward(inputs)
        diff = out - targets
        batch = out.shape[0]
        loss = np.sum(diff * diff) / batch
        return loss, self.backward(caches, 2.0 * diff / batch)

    # tracking --------------------------------------------------------------
    def track_step(self, r_now: float) -> np.ndarray:
        """Consume the current feedback, emit the current channel estimate."""
        self.fb_window = np.append(self.fb_window[1:], float(r_now))
        out, _ = self.forward(self.window_inputs(self.est_window, self.fb_window))
        self.est_window = np.vstack([self.est_window[1:], out[0]])
        self.steps += 1
        return to_complex(out[0])

    def track_batch(self, feedbacks) -> np.ndarray:
        """Closed-loop tracking of ``B`` independent feedback streams ``(B, n)``
        from a cold start. Returns complex estimates ``(B, n, M)``.

        Equivalent to calling :meth:`track_step` on a fresh copy per stream.
        """
        fbs = np.asarray(feedbacks, dtype=np.float64)
        if fbs.ndim == 1:
            fbs = fbs[None]
        a = self.arch
        batch, n = fbs.shape
        est = np.zeros((batch, a.t_window, a.out_dim))
        fw = np.zeros((batch, a.t_window))
        out_all = np.empty((batch, n, a.out_dim))
        for t in range(n):
            fw = np.concatenate([fw[:, 1:], fbs[:, t:t + 1]], axis=1)
            out, _ = self.forward(self.window_inputs(est, fw))
            est = np.concatenate([est[:, 1:], out[:, None]], axis=1)
            out_all[:, t] = out
        return to_complex(out_all)


def build_tracker(arch: TrackerArch, rng: Rng, zeta: float = 1.0) -> LstmFnnTracker:
    """Fresh tracker with uniform fan-in-scaled weights and a cold window."""
    gen = rng.gen
    cells = []
    for k in range(arch.k_depth):
        d = arch.input_dim if k == 0 else arch.q_hidden
        n_cells = arch.t_window if arch.untied else 1
        cells.append([nn.LstmCellParams.init(d, arch.q_hidden, gen) for _ in range(n_cells)])
    fnn = []
    width = arch.q_hidden
    for j in range(arch.l_hidden):
        fnn.append(nn.DenseParams.init(width, arch.q_hidden, arch.fnn_hidden_activation, gen))
        width = arch.q_hidden
    fnn.append(nn.DenseParams.init(width, arch.out_dim, arch.fnn_output_activation, gen))
    return LstmFnnTracker(arch, cells, fnn, zeta)


def loss_mse(true_channels, estimates) -> float:
    """Mean over time of the squared Euclidean error between complex vectors."""
    h = np.asarray(true_channels, dtype=np.complex128)
    e = np.asarray(estimates, dtype=np.complex128)
    if h.shape != e.shape:
        raise ValueError(f"length/shape mismatch: {h.shape} vs {e.shape}")
    if h.ndim < 2 or h.shape[0] == 0:
        raise ValueError("need at least one channel vector")
    d = h - e
    return float(np.mean(np.sum(d.real**2 + d.imag**2, axis=-1)))


# -- training ----------------------------------------------------------------

def teacher_forced_windows(arch: TrackerArch, n_samples: int, dyn: ChannelDynamics, zeta: float,
                           snr_db: float, perturb_var: float, rng: Rng):
    """Independent (window, target) pairs built from true past channels.

    Each sample is a fresh stationary trajectory of T+1 steps. Returns
    ``(est (N, T, 2M), fb (N, T), target (N, 2M))``.
    """
    ch, _, fb = generate_batch(n_samples, arch.t_window + 1, arch.m, dyn, zeta, snr_db, rng)
    est = to_reals(ch[:, :-1])
    if perturb_var > 0:
        est = est + np.sqrt(perturb_var) * rng.gen.standard_normal(est.shape)
    return est, fb[:, 1:], to_reals(ch[:, -1])


def closed_loop_windows(tr: LstmFnnTracker, channels, feedbacks):
    """Windows as the tracker itself sees them when run closed-loop.

    Rolls the current tracker over each sequence; the first T steps (cold
    start) are dropped. Returns the same triple as :func:`teacher_forced_windows`.
    """
    a = tr.arch
    batch, n = feedbacks.shape
    est_hist = to_reals(tr.track_batch(feedbacks))
    T = a.t_window
    est, fb, tgt = [], [], []
    for t in range(T, n):
        est.append(est_hist[:, t - T:t])
        fb.append(feedbacks[:, t - T + 1:t + 1])
        tgt.append(to_reals(channels[:, t]))
    return (np.concatenate(est), np.concatenate(fb), np.concatenate(tgt))


def _run_epochs(tr, inputs, targets, cfg: TrainConfig, epochs: int, gen, opt_state, epoch_offset=0,
                on_epoch=None):
    history = []
    params = tr.params()
    n = len(targets)
    for epoch in range(epochs):
        order = gen.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            loss, grads = tr.loss_and_grads(inputs[idx], targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch_offset + epoch, loss)
            total += loss * len(idx)
            if cfg.alpha > 0:
                if cfg.optimizer == "sgd":
                    params = nn.sgd_step(params, grads, cfg.alpha)
                else:
                    params, opt_state = nn.adam_step(params, grads, opt_state, cfg.alpha)
                tr.set_params(params)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch_offset + epoch, history[-1])
    return history, opt_state


def train(tr: LstmFnnTracker, cfg: TrainConfig, dyn: ChannelDynamics, zeta: float = 1.0,
          on_epoch=None) -> TrainReport:
    """Offline training on simulated channels and noise only.

    ``teacher_forced`` mode uses true previous channels (with a Gaussian
    perturbation of ``cfg.perturb_var`` per real dimension) in the estimate
    slots. ``closed_loop`` mode rebuilds the windows from the tracker's own
    rollouts every epoch. After the main phase, ``cfg.closed_loop_epochs``
    extra closed-loop epochs fine-tune the result. The reported loss of an
    epoch is the mean minibatch loss seen during it. ``final_mse`` is the
    loss over the whole teacher-forced training set, taken when the
    teacher-forced phase ends (or at the very end in ``closed_loop`` mode).
    """
    started = time.perf_counter()
    tr.zeta = float(zeta)
    rng = Rng(cfg.seed)
    data_rng, shuffle_rng = rng.spawn(1), rng.spawn(2)
    a = tr.arch
    opt_state = None
    cl_history = []
    est, fb, tgt = teacher_forced_windows(a, cfg.n_samples, dyn, zeta, cfg.train_snr_db,
                                          cfg.perturb_var, data_rng)
    tf_inputs = tr.window_inputs(est, fb)
    final = None
    if cfg.mode == "teacher_forced":
        history, opt_state = _run_epochs(tr, tf_inputs, tgt, cfg, cfg.epochs,
                                         shuffle_rng.gen, opt_state, on_epoch=on_epoch)
        final = float(tr.loss(tf_inputs, tgt))
        cl_epochs = cfg.closed_loop_epochs
    else:
        history = []
        cl_epochs = cfg.epochs
    if cl_epochs:
        seq_len = cfg.closed_loop_seq_len
        n_seq = max(1, -(-cfg.n_samples // max(1, seq_len - a.t_window)))
        ch, _, fbs = generate_batch(n_seq, seq_len, a.m, dyn, zeta, cfg.train_snr_db, data_rng)
        for e in range(cl_epochs):
            cl_est, cl_fb, cl_tgt = closed_loop_windows(tr, ch, fbs)
            h, opt_state = _run_epochs(tr, tr.window_inputs(cl_est, cl_fb), cl_tgt, cfg, 1,
                                       shuffle_rng.gen, opt_state,
                                       epoch_offset=len(history) + e, on_epoch=on_epoch)
            cl_history.extend(h)
        if cfg.mode == "closed_loop":
            history = list(cl_history)
    if final is None:
        final = float(tr.loss(tf_inputs, tgt))
    return TrainReport(history, {k: v.copy() for k, v in tr.params().items()},
                       time.perf_counter() - started, cl_history, final)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(tr: LstmFnnTracker, path, train_config: TrainConfig | None = None,
                    extra: dict | None = None) -> None:
    """Text checkpoint: ``key: value`` header, then one named block per array.

    Floats are written with ``repr`` (shortest round-trip form), so loading
    reproduces every parameter bit-for-bit.
    """
    lines = [
        f"format: {CHECKPOINT_FORMAT}",
        f"version: {CHECKPOINT_VERSION}",
        f"arch: {json.dumps(asdict(tr.arch), sort_keys=True)}",
        f"zeta: {tr.zeta!r}",
        f"prng: {PRNG_ID}",
        f"param_sha256: {tr.param_hash()}",
        f"train_config: {json.dumps(asdict(train_config), sort_keys=True) if train_config else 'null'}",
        f"extra: {json.dumps(extra or {}, sort_keys=True)}",
        "---",
    ]
    for name, arr in tr.params().items():
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"[{name}] {shape}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_checkpoint_header(path) -> dict:
    header = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line == "---":
                break
            key, sep, value = line.partition(": ")
            if not sep:
                raise ValueError(f"malformed checkpoint header line: {line!r}")
            header[key] = value
    return header


def load_checkpoint(path, expect_m: int | None = None) -> LstmFnnTracker:
    with open(path, encoding="utf-8") as f:
        text = f.read().splitlines()
    try:
        sep = text.index("---")
    except ValueError:
        raise ValueError(f"{path}: malformed checkpoint (no header terminator)") from None
    header = dict(line.split(": ", 1) for line in text[:sep])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a tracker checkpoint")
    if int(header.get("version", -1)) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    arch = TrackerArch(**json.loads(header["arch"]))
    if expect_m is not None and arch.m != expect_m:
        raise ValueError(f"{path}: checkpoint is for M={arch.m}, config requests M={expect_m}")
    body = text[sep + 1:]
    if len(body) % 2:
        raise ValueError(f"{path}: malformed parameter blocks")
    tree = {}
    for i in range(0, len(body), 2):
        tag, _, shape_s = body[i].partition(" ")
        name = tag.strip("[]")
        shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
        vals = np.array([float(v) for v in body[i + 1].split()], dtype=np.float64)
        if vals.size != int(np.prod(shape)):
            raise ValueError(f"{path}: block {name} has {vals.size} values, shape {shape}")
        tree[name] = vals.reshape(shape)
    tr = build_tracker(arch, Rng(0), zeta=float(header["zeta"]))
    expected = tr.params()
    if tree.keys() != expected.keys():
        raise ValueError(f"{path}: parameter blocks do not match the architecture")
    for k, v in tree.items():
        if v.shape != expected[k].shape:
            raise ValueError(f"{path}: block {k} has shape {v.shape}, expected {expected[k].shape}")
    tr.set_params(tree)
    if tr.param_hash() != header.get("param_sha256"):
        raise ValueError(f"{path}: parameter hash mismatch")
    return tr


def inference_madds(arch: TrackerArch) -> int:
    """Multiply-adds for one tracking step, counted by running one."""
    tr = build_tracker(arch, Rng(0))
    with count_ops() as c:
        tr.track_step(0.0)
    return c.madds
