"""Small dense networks with hand-written reverse-mode gradients.

Everything here is float64 numpy. Networks are a flat stack of fully
connected layers, each with a ``relu``, ``tanh``, or ``linear`` activation.
``forward`` keeps the per-layer values needed by ``backward``, which returns
both parameter gradients and the gradient with respect to the input. The
input gradient is what lets a policy network be trained through a frozen
value network.

``adam_step`` operates on a flat list of parameter arrays so the same
optimizer code serves a plain network and a multi-branch composite.
``check_gradients`` compares analytic gradients against central finite
differences and is the self-test used by the acceptance suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    CheckpointFormatError,
    DimensionMismatchError,
    NonFiniteInputError,
)

ACTIVATIONS = ("relu", "tanh", "linear")

_MAGIC = "raceway-net 1"


@dataclass
class DenseLayer:
    """One fully connected layer. ``weights`` has shape [out, in]."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    """A stack of dense layers applied in order."""

    layers: list[DenseLayer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class ForwardCache:
    """Values saved by ``forward`` for reuse in ``backward``."""

    x: np.ndarray                 # network input, always 2-D [B, in]
    pre: list[np.ndarray]         # pre-activation per layer
    post: list[np.ndarray]        # post-activation per layer
    squeezed: bool                # True when the caller passed a 1-D input


def init_mlp(layer_dims: list[int], activations: list[str],
             rng: np.random.Generator) -> Mlp:
    """Build a network with uniform +-1/sqrt(fan_in) weights and biases.

    ``layer_dims`` lists sizes from input to output, so a network with
    ``layer_dims=[10, 256, 1]`` has two layers and needs two activations.
    """
    if len(layer_dims) < 2:
        raise DimensionMismatchError("need at least an input and output size")
    if len(activations) != len(layer_dims) - 1:
        raise DimensionMismatchError(
            f"{len(layer_dims) - 1} layers but {len(activations)} activations")
    layers = []
    for fan_in, fan_out, act in zip(layer_dims, layer_dims[1:], activations):
        if act not in ACTIVATIONS:
            raise DimensionMismatchError(f"unknown activation {act!r}")
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(DenseLayer(w, b, act))
    return Mlp(layers)


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network. Accepts one sample [in] or a batch [B, in]."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"input shape {x.shape} does not match input size {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("network input contains NaN or inf")
    pre, post = [], []
    h = x
    for layer in net.layers:
        z = h @ layer.weights.T + layer.biases
        h = _apply_activation(z, layer.activation)
        pre.append(z)
        post.append(h)
    y = h[0] if squeezed else h
    return y, ForwardCache(x=x, pre=pre, post=post, squeezed=squeezed)


def backward(net: Mlp, cache: ForwardCache, dl_dy: np.ndarray,
             param_grads: bool = True
             ) -> tuple[list[np.ndarray] | None, np.ndarray]:
    """Propagate loss gradients back through a cached forward pass.

    ``dl_dy`` holds the partial of a scalar loss with respect to each
    network output; any 1/batch factor belongs to the caller. Returns
    (gradients in ``param_list`` order or None, gradient w.r.t. the input).
    """
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if cache.squeezed and dl_dy.ndim == 1:
        dl_dy = dl_dy[None, :]
    if dl_dy.shape != cache.post[-1].shape:
        raise DimensionMismatchError(
            f"upstream gradient shape {dl_dy.shape} does not match "
            f"output shape {cache.post[-1].shape}")
    grads: list[np.ndarray] = []
    d = dl_dy
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.activation == "relu":
            dz = d * (cache.pre[i] > 0.0)
        elif layer.activation == "tanh":
            dz = d * (1.0 - cache.post[i] ** 2)
        else:
            dz = d
        if param_grads:
            h_in = cache.x if i == 0 else cache.post[i - 1]
            grads.append(dz.sum(axis=0))        # bias
            grads.append(dz.T @ h_in)           # weights
        d = dz @ layer.weights
    dl_dx = d[0] if cache.squeezed else d
    if not param_grads:
        return None, dl_dx
    grads.reverse()
    return grads, dl_dx


def param_list(net: Mlp) -> list[np.ndarray]:
    """Flat view of the parameters: [w0, b0, w1, b1, ...]."""
    out = []
    for layer in net.layers:
        out.append(layer.weights)
        out.append(layer.biases)
    return out


@dataclass
class AdamState:
    """Adam accumulators for a flat list of parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step_count: int = 0
    rejected_steps: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[np.ndarray], lr: float) -> AdamState:
    state = AdamState(lr=lr)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              opt: AdamState) -> bool:
    """Apply one Adam update in place.

    A batch whose gradients contain NaN or inf is skipped entirely: the
    parameters and step count stay untouched and ``rejected_steps`` grows,
    so one bad batch cannot poison the accumulators.
    """
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise DimensionMismatchError("parameter, gradient, and state lists differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionMismatchError(
                f"gradient shape {g.shape} does not match parameter {p.shape}")
    # a single sum per array: any NaN or inf survives the reduction
    total = 0.0
    for g in grads:
        total += float(np.abs(g).max(initial=0.0))
    if not np.isfinite(total):
        opt.rejected_steps += 1
        return False
    # scratch buffers keep the hot loop allocation-free; they are derived
    # state, rebuilt on demand, never serialized
    scratch = getattr(opt, "_scratch", None)
    if scratch is None or len(scratch) != len(params) or any(
            s.shape != p.shape for s, p in zip(scratch, params)):
        scratch = [np.empty_like(p) for p in params]
        opt._scratch = scratch
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    for p, g, m, v, tmp in zip(params, grads, opt.m, opt.v, scratch):
        m *= opt.beta1
        np.multiply(g, 1.0 - opt.beta1, out=tmp)
        m += tmp
        v *= opt.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - opt.beta2
        v += tmp
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += opt.eps_adam
        np.divide(m, tmp, out=tmp)
        tmp *= opt.lr / bc1
        p -= tmp
    return True


@dataclass
class GradCheckReport:
    """Result of comparing analytic and finite-difference gradients."""

    max_rel_error: float
    worst_location: str
    per_layer: dict[int, float]
    input_error: float
    passed: bool


def check_gradients(net: Mlp, x: np.ndarray, tolerance: float = 1e-4,
                    step: float = 1e-5) -> GradCheckReport:
    """Verify analytic gradients against central differences.

    Uses the scalar loss L = 0.5 * sum(y^2) so the upstream gradient is
    just y. Relative error is |a - n| / max(|a|, |n|, 1e-8) per entry.
    """
    x = np.asarray(x, dtype=np.float64)

    def loss() -> float:
        y, _ = forward(net, x)
        return 0.5 * float(np.sum(np.asarray(y) ** 2))

    y, cache = forward(net, x)
    grads, dl_dx = backward(net, cache, np.asarray(y))
    params = param_list(net)

    def rel_err(analytic: float, flat: np.ndarray, idx: int) -> float:
        orig = flat[idx]
        flat[idx] = orig + step
        up = loss()
        flat[idx] = orig - step
        down = loss()
        flat[idx] = orig
        numeric = (up - down) / (2.0 * step)
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)

    worst = 0.0
    worst_loc = "none"
    per_layer: dict[int, float] = {i: 0.0 for i in range(len(net.layers))}
    for k, (p, g) in enumerate(zip(params, grads)):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        layer_idx = k // 2
        kind = "w" if k % 2 == 0 else "b"
        for idx in range(flat_p.size):
            err = rel_err(flat_g[idx], flat_p, idx)
            per_layer[layer_idx] = max(per_layer[layer_idx], err)
            if err > worst:
                worst = err
                worst_loc = f"layer {layer_idx} {kind}[{idx}]"

    input_err = 0.0
    flat_x = x.reshape(-1)
    flat_dx = np.asarray(dl_dx).reshape(-1)
    for idx in range(flat_x.size):
        err = rel_err(flat_dx[idx], flat_x, idx)
        if err > input_err:
            input_err = err
        if err > worst:
            worst = err
            worst_loc = f"input[{idx}]"

    return GradCheckReport(
        max_rel_error=worst,
        worst_location=worst_loc,
        per_layer=per_layer,
        input_error=input_err,
        passed=worst < tolerance,
    )


# ---------------------------------------------------------------------------
# serialization
#
# Checkpoints are a text header followed by raw little-endian float64 blobs.
# A zip container would be simpler but stamps member timestamps into the
# file, which breaks byte-identical reruns, so the format is hand-rolled.
# ---------------------------------------------------------------------------


def write_array_file(path: str, header: dict,
                     arrays: list[tuple[str, np.ndarray]]) -> None:
    """Write named float64 arrays with a JSON header, deterministically."""
    directory = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    head = dict(header)
    head["arrays"] = directory
    blob = json.dumps(head, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(_MAGIC.encode("ascii") + b"\n")
        fh.write(blob.encode("ascii") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_array_file(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a file produced by ``write_array_file``."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != _MAGIC.encode("ascii"):
            raise CheckpointFormatError(
                f"bad magic {magic[:30]!r}, expected {_MAGIC!r}")
        try:
            header = json.loads(fh.readline().decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"unreadable header: {exc}") from exc
        if "arrays" not in header:
            raise CheckpointFormatError("header lacks an array directory")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointFormatError(
                    f"array {entry['name']!r} is truncated")
            arrays[entry["name"]] = np.frombuffer(
                raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after last array")
    return header, arrays


def mlp_header(net: Mlp) -> dict:
    """Structure block describing a network, for checkpoint headers."""
    return {
        "dims": [net.input_dim] + [layer.out_dim for layer in net.layers],
        "activations": [layer.activation for layer in net.layers],
    }


def mlp_arrays(net: Mlp, prefix: str) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, layer in enumerate(net.layers):
        out.append((f"{prefix}.{i}.w", layer.weights))
        out.append((f"{prefix}.{i}.b", layer.biases))
    return out


def mlp_from_arrays(structure: dict, arrays: dict[str, np.ndarray],
                    prefix: str) -> Mlp:
    dims = structure["dims"]
    acts = structure["activations"]
    layers = []
    for i, act in enumerate(acts):
        try:
            w = arrays[f"{prefix}.{i}.w"]
            b = arrays[f"{prefix}.{i}.b"]
        except KeyError as exc:
            raise CheckpointFormatError(f"missing array for {prefix}.{i}") from exc
        if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise CheckpointFormatError(
                f"array shapes for {prefix}.{i} disagree with declared dims")
        layers.append(DenseLayer(w, b, act))
    return Mlp(layers)


def save_mlp(path: str, net: Mlp) -> None:
    write_array_file(path, {"kind": "mlp", "net": mlp_header(net)},
                     mlp_arrays(net, "net"))


def load_mlp(path: str) -> Mlp:
    header, arrays = read_array_file(path)
    if header.get("kind") != "mlp":
        raise CheckpointFormatError("file does not hold a single network")
    return mlp_from_arrays(header["net"], arrays, "net")
