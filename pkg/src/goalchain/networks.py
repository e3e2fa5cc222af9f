"""Feed-forward networks, optimizer and policy head used by all training code.

Parameters of every network live in one flat float64 vector; layer weights
and biases are views into it.  This keeps the optimizer and target-network
updates to a handful of vectorized operations and makes checkpointing a
matter of dumping one array per network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericsError, Tensor

_ACTIVATIONS = ("relu", "tanh", "linear")


class DimensionError(ValueError):
    """Input length does not match the network's first layer."""


def _apply_activation_np(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _apply_activation_t(name, x):
    if name == "relu":
        return ad.relu(x)
    if name == "tanh":
        return ad.tanh(x)
    return x


class MLP:
    """Fully-connected network with a flat parameter vector.

    ``layer_sizes`` includes the input and output widths, e.g. (3, 64, 64, 1).
    """

    def __init__(self, layer_sizes, hidden_activation="relu",
                 output_activation="linear", rng=None):
        layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        for name in (hidden_activation, output_activation):
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        self.layer_sizes = layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation

        n_params = sum((fi + 1) * fo for fi, fo in zip(layer_sizes, layer_sizes[1:]))
        self.theta = np.zeros(n_params, dtype=np.float64)
        self.grad = np.zeros(n_params, dtype=np.float64)

        # Per-layer views into theta/grad, plus leaf tensors reused by apply().
        self._weights = []
        self._biases = []
        self._w_tensors = []
        self._b_tensors = []
        off = 0
        for fi, fo in zip(layer_sizes, layer_sizes[1:]):
            w = self.theta[off : off + fi * fo].reshape(fi, fo)
            wg = self.grad[off : off + fi * fo].reshape(fi, fo)
            off += fi * fo
            b = self.theta[off : off + fo]
            bg = self.grad[off : off + fo]
            off += fo
            self._weights.append(w)
            self._biases.append(b)
            # Leaf tensors share the views, so edits to theta are live and
            # gradients land directly in the flat grad buffer.
            wt = Tensor(w, needs_grad=True)
            wt.attach_grad(wg)
            bt = Tensor(b, needs_grad=True)
            bt.attach_grad(bg)
            self._w_tensors.append(wt)
            self._b_tensors.append(bt)

        if rng is not None:
            self.init_params(rng)

    @property
    def n_params(self):
        return self.theta.size

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def init_params(self, rng):
        """Uniform init in +-1/sqrt(fan_in), weights and biases alike."""
        for w, b in zip(self._weights, self._biases):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    def layer(self, l):
        """(weight, bias) views of layer ``l``."""
        return self._weights[l], self._biases[l]

    def forward(self, x):
        """Pure evaluation. Accepts a vector or a (batch, in_dim) matrix."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise DimensionError(
                f"input has {x.shape[1]} features, network expects {self.in_dim}")
        last = len(self._weights) - 1
        for l, (w, b) in enumerate(zip(self._weights, self._biases)):
            x = x @ w + b
            act = self.output_activation if l == last else self.hidden_activation
            x = _apply_activation_np(act, x)
        return x[0] if single else x

    def apply(self, x):
        """Differentiable evaluation for loss construction (tape path)."""
        if not isinstance(x, Tensor):
            x = ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.data.shape[1] != self.in_dim:
            raise DimensionError(
                f"input has {x.data.shape[1]} features, network expects {self.in_dim}")
        last = len(self._w_tensors) - 1
        for l, (wt, bt) in enumerate(zip(self._w_tensors, self._b_tensors)):
            x = ad.linear(x, wt, bt)
            act = self.output_activation if l == last else self.hidden_activation
            x = _apply_activation_t(act, x)
        return x

    def apply_frozen(self, x):
        """Differentiable in the input only; parameters act as constants.

        Used when another network's update needs gradients through this
        network's output (e.g. the policy update through the critic).
        """
        if not isinstance(x, Tensor):
            x = ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.data.shape[1] != self.in_dim:
            raise DimensionError(
                f"input has {x.data.shape[1]} features, network expects {self.in_dim}")
        last = len(self._weights) - 1
        for l, (w, b) in enumerate(zip(self._weights, self._biases)):
            x = ad.linear(x, ad.constant(w), ad.constant(b))
            act = self.output_activation if l == last else self.hidden_activation
            x = _apply_activation_t(act, x)
        return x

    def params(self):
        """The leaf tensors, in layer order (w0, b0, w1, b1, ...)."""
        out = []
        for wt, bt in zip(self._w_tensors, self._b_tensors):
            out.append(wt)
            out.append(bt)
        return out

    def zero_grad(self):
        self.grad.fill(0.0)

    def copy(self):
        clone = MLP(self.layer_sizes, self.hidden_activation, self.output_activation)
        clone.theta[...] = self.theta
        return clone

    def to_spec(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "params": self.theta.tolist(),
        }

    @classmethod
    def from_spec(cls, spec):
        net = cls(spec["layer_sizes"], spec["hidden_activation"],
                  spec["output_activation"])
        params = np.asarray(spec["params"], dtype=np.float64)
        if params.shape != net.theta.shape:
            raise ValueError(
                f"checkpoint has {params.size} params, network needs {net.theta.size}")
        net.theta[...] = params
        return net


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        params = np.asarray(params)
        return cls(m=np.zeros_like(params, dtype=np.float64),
                   v=np.zeros_like(params, dtype=np.float64),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(params, grads, state):
    """One adaptive-moment update, in place. Returns (params, state).

    ``params`` and ``grads`` are flat arrays of matching shape.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != param shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericsError("non-finite gradient")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grads * grads)
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


def polyak_update(target_params, online_params, tau):
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if target_params.shape != online_params.shape:
        raise ValueError("parameter shapes disagree")
    target_params *= 1.0 - tau
    target_params += tau * online_params
    return target_params


@dataclass
class GaussianPolicyHead:
    """Squashed-Gaussian head over an MLP that outputs (mean, log_std) pairs.

    Actions are ``bound * tanh(u)`` with ``u ~ N(mean, std)``; log-densities
    include the tanh change of variables, so they are finite for every
    sampled action.
    """

    net: MLP
    action_dim: int
    bound: float = 1.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0

    def __post_init__(self):
        if self.net.out_dim != 2 * self.action_dim:
            raise ValueError("policy net must output mean and log_std per action dim")

    def _split(self, out):
        mean = out[..., : self.action_dim]
        log_std = np.clip(out[..., self.action_dim :], self.log_std_min, self.log_std_max)
        return mean, log_std

    def sample(self, x, rng):
        """Sample actions for a feature vector or batch.

        Returns (action, log_prob); shapes (act_dim,)/() for vector input,
        (n, act_dim)/(n,) for batch input.
        """
        out = self.net.forward(x)
        single = out.ndim == 1
        if single:
            out = out[None, :]
        mean, log_std = self._split(out)
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(log_std)):
            raise NumericsError("policy head produced non-finite outputs")
        noise = rng.standard_normal(mean.shape)
        u = mean + np.exp(log_std) * noise
        action = self.bound * np.tanh(u)
        logp = self._log_prob_from_noise(noise, log_std, u).sum(axis=1)
        if single:
            return action[0], float(logp[0])
        return action, logp

    def mean_action(self, x):
        """Deterministic action: squashed mean, no noise."""
        out = self.net.forward(x)
        mean, _ = self._split(out)
        return self.bound * np.tanh(mean)

    def log_prob(self, x, action):
        """Log-density of ``action`` under the current head (numpy path)."""
        out = np.atleast_2d(self.net.forward(x))
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        mean, log_std = self._split(out)
        a = np.clip(action / self.bound, -1.0 + 1e-12, 1.0 - 1e-12)
        u = np.arctanh(a)
        z = (u - mean) * np.exp(-log_std)
        logp = self._log_prob_from_noise(z, log_std, u).sum(axis=1)
        return logp

    def _log_prob_from_noise(self, noise, log_std, u):
        # Gaussian term in u-space plus the tanh/bound change of variables:
        # log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)).
        gauss = -0.5 * noise * noise - log_std - 0.5 * ad.LOG_2PI
        corr = np.log(self.bound) + 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
        return gauss - corr

    def sample_t(self, x, noise):
        """Tape path: reparameterized sample with gradients to mean/log_std.

        ``noise`` is a fixed standard-normal array of shape (n, action_dim).
        Returns (action Tensor (n, act_dim), log_prob Tensor (n, 1)).
        """
        if self.action_dim != 1:
            raise NotImplementedError("tape sampling is implemented for 1-D actions")
        out = self.net.apply(x)
        mean = ad.col(out, 0)
        log_std = ad.clip(ad.col(out, 1), self.log_std_min, self.log_std_max)
        std = ad.exp(log_std)
        u = ad.add(mean, ad.mul(std, ad.constant(noise)))
        action = ad.mul(ad.tanh(u), self.bound)

        # log N(u; mean, std) at u = mean + std*noise reduces to
        # -0.5*noise^2 - log_std - 0.5*log(2*pi); the rest is the squash term.
        const = -0.5 * noise * noise - 0.5 * ad.LOG_2PI - np.log(self.bound) - 2.0 * np.log(2.0)
        corr = ad.mul(ad.add(u, ad.softplus(ad.mul(u, -2.0))), 2.0)
        logp = ad.add(ad.sub(corr, log_std), ad.constant(const))
        return action, logp

    def entropy_estimate(self, logp):
        return float(-np.mean(logp))


def save_checkpoint(path, networks, extra=None):
    """Write a self-describing JSON checkpoint.

    ``networks`` maps name -> MLP.  Floats round-trip exactly through
    Python's JSON repr, so a saved/loaded network is bit-identical.
    """
    doc = {
        "format": "goalchain-checkpoint-v1",
        "networks": {name: net.to_spec() for name, net in networks.items()},
        "extra": extra or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "goalchain-checkpoint-v1":
        raise ValueError(f"{path}: not a goalchain checkpoint")
    nets = {name: MLP.from_spec(spec) for name, spec in doc["networks"].items()}
    return nets, doc.get("extra", {})
