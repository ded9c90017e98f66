"""Guidance-and-control network: separate policy and value MLPs plus a Gaussian head.

Weights are stored as ``(fan_in, fan_out)`` so a batch of observations
``X`` of shape ``(B, input_dim)`` maps through ``X @ W + b``. Gradients are
computed by hand with a straight reverse sweep over each head.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeMismatch, VersionMismatch

FORMAT_NAME = "helios-policy"
FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    policy_out: int = 3
    value_out: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation != "tanh":
            raise ValueError(f"only tanh activation is supported, got {self.activation!r}")

    def layer_shapes(self, head: str) -> list[tuple[int, int]]:
        out = self.policy_out if head == "pi" else self.value_out
        dims = [self.input_dim, *self.hidden, out]
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for head in ("pi", "vf"):
            for i, (fan_in, fan_out) in enumerate(self.layer_shapes(head)):
                shapes[f"{head}.{i}.W"] = (fan_in, fan_out)
                shapes[f"{head}.{i}.b"] = (fan_out,)
        shapes["log_std"] = (self.policy_out,)
        return shapes

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


class PolicyParams:
    """Named parameter arrays for both heads and the log standard deviation."""

    def __init__(self, spec: NetworkSpec, arrays: dict[str, np.ndarray]):
        shapes = spec.param_shapes()
        if set(arrays) != set(shapes):
            raise ShapeMismatch(f"parameter names {sorted(arrays)} do not match spec {sorted(shapes)}")
        self.spec = spec
        self.arrays = {}
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name], dtype=float)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            self.arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(self.spec, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    @classmethod
    def from_flat(cls, spec: NetworkSpec, vec: np.ndarray) -> "PolicyParams":
        arrays, i = {}, 0
        for name, shape in spec.param_shapes().items():
            size = math.prod(shape)
            arrays[name] = np.array(vec[i:i + size], dtype=float).reshape(shape)
            i += size
        if i != len(vec):
            raise ShapeMismatch(f"flat vector has {len(vec)} entries, spec needs {i}")
        return cls(spec, arrays)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    a = rng.standard_normal(shape if shape[0] >= shape[1] else shape[::-1])
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> PolicyParams:
    """Orthogonal weights (gain sqrt(2) hidden, 0.01 policy output, 1 value output), zero biases."""
    arrays = {}
    for head, out_gain in (("pi", 0.01), ("vf", 1.0)):
        layers = spec.layer_shapes(head)
        for i, shape in enumerate(layers):
            gain = out_gain if i == len(layers) - 1 else math.sqrt(2.0)
            arrays[f"{head}.{i}.W"] = _orthogonal(rng, shape, gain)
            arrays[f"{head}.{i}.b"] = np.zeros(shape[1])
    arrays["log_std"] = np.zeros(spec.policy_out)
    return PolicyParams(spec, arrays)


def _head_forward(params: PolicyParams, head: str, x: np.ndarray):
    n_layers = len(params.spec.hidden) + 1
    acts = [x]
    h = x
    for i in range(n_layers):
        z = h @ params[f"{head}.{i}.W"] + params[f"{head}.{i}.b"]
        h = np.tanh(z) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def _check_obs(params: PolicyParams, obs) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeMismatch(f"observation must have {params.spec.input_dim} entries, got shape {np.shape(obs)}")
    return x, single


def forward(params: PolicyParams, obs):
    """Return (mean, value) for one observation or a batch of them."""
    x, single = _check_obs(params, obs)
    mean, _ = _head_forward(params, "pi", x)
    value, _ = _head_forward(params, "vf", x)
    value = value[:, 0]
    if single:
        return mean[0], float(value[0])
    return mean, value


def forward_with_cache(params: PolicyParams, obs):
    x, _ = _check_obs(params, obs)
    mean, pi_acts = _head_forward(params, "pi", x)
    value, vf_acts = _head_forward(params, "vf", x)
    return mean, value[:, 0], {"pi": pi_acts, "vf": vf_acts}


def _head_backward(params: PolicyParams, head: str, acts: list[np.ndarray], d_out: np.ndarray, grads: dict):
    n_layers = len(params.spec.hidden) + 1
    delta = d_out
    for i in reversed(range(n_layers)):
        grads[f"{head}.{i}.W"] = acts[i].T @ delta
        grads[f"{head}.{i}.b"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[f"{head}.{i}.W"].T) * (1.0 - acts[i] ** 2)


def backward(params: PolicyParams, cache: dict, d_mean: np.ndarray, d_value: np.ndarray, d_log_std: np.ndarray) -> PolicyParams:
    """Pull loss sensitivities w.r.t. the network outputs back onto every parameter.

    ``d_mean`` is (B, policy_out), ``d_value`` is (B,), ``d_log_std`` is
    (policy_out,); together they describe any scalar loss built from
    :func:`forward`, :func:`log_prob` and :func:`entropy`.
    """
    grads: dict[str, np.ndarray] = {}
    _head_backward(params, "pi", cache["pi"], np.asarray(d_mean, dtype=float), grads)
    _head_backward(params, "vf", cache["vf"], np.asarray(d_value, dtype=float)[:, None], grads)
    grads["log_std"] = np.asarray(d_log_std, dtype=float).copy()
    return PolicyParams(params.spec, grads)


def log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log-density; the last axis is the action dimension."""
    z = (np.asarray(action) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


def sample_action(mean: np.ndarray, log_std: np.ndarray, stream) -> tuple[np.ndarray, np.ndarray]:
    """Draw raw (pre-squash) actions and their log-probabilities.

    ``stream`` is anything with a ``normal(size)`` method returning standard normals.
    """
    z = stream.normal(np.shape(mean))
    action = mean + np.exp(log_std) * z
    return action, log_prob(mean, log_std, action)


def describe(params: PolicyParams) -> str:
    spec = params.spec
    lines = [
        f"input_dim={spec.input_dim} hidden={list(spec.hidden)} activation={spec.activation}",
        f"policy head: {spec.input_dim} -> {' -> '.join(map(str, spec.hidden))} -> {spec.policy_out}",
        f"value head:  {spec.input_dim} -> {' -> '.join(map(str, spec.hidden))} -> {spec.value_out}",
    ]
    for name, arr in params.arrays.items():
        lines.append(f"  {name:10s} {str(arr.shape):12s} {arr.size}")
    lines.append(f"total parameters: {spec.n_params()}")
    return "\n".join(lines)


def params_to_json(params: PolicyParams) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": {**asdict(params.spec), "hidden": list(params.spec.hidden)},
        "params": [
            {"name": name, "shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for name, arr in params.arrays.items()
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def params_from_json(text: str, expected_spec: NetworkSpec | None = None) -> PolicyParams:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ParseError("not a policy checkpoint")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')!r}, this build reads {FORMAT_VERSION}")
    try:
        spec = NetworkSpec(**doc["spec"])
        arrays = {}
        for entry in doc["params"]:
            shape = tuple(entry["shape"])
            data = np.array(entry["data"], dtype=float)
            if data.size != math.prod(shape):
                raise ShapeMismatch(f"{entry['name']}: {data.size} values for shape {shape}")
            arrays[entry["name"]] = data.reshape(shape)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from exc
    if expected_spec is not None and spec != expected_spec:
        raise ShapeMismatch(f"checkpoint network {spec} does not match expected {expected_spec}")
    return PolicyParams(spec, arrays)


def save_params(params: PolicyParams, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(params_to_json(params))


def load_params(path, expected_spec: NetworkSpec | None = None) -> PolicyParams:
    return params_from_json(Path(path).read_text(), expected_spec)
