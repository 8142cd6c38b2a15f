"""Minimal layer/optimizer toolkit on top of :mod:`stlca.autodiff`.

Modules hold :class:`~stlca.autodiff.Parameter` attributes (or child modules)
and expose them by hierarchical name, which is also the checkpoint naming
scheme.  Initialization is fan-in-scaled uniform from an explicit generator,
so a seed pins every weight in the model.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import CheckpointError

CHECKPOINT_FORMAT_VERSION = 1


class Module:
    """Base class providing parameter discovery by attribute walking.

    Shared submodules are reported once, under the first name encountered.
    """

    def named_parameters(self, prefix: str = "", _seen: set[int] | None = None):
        seen = _seen if _seen is not None else set()
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.", seen)
                    elif isinstance(item, Parameter):
                        if id(item) not in seen:
                            seen.add(id(item))
                            yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise CheckpointError(
                f"parameter name mismatch; missing={missing} unexpected={unexpected}"
            )
        for name, p in own.items():
            if state[name].shape != p.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {state[name].shape}, "
                    f"model {p.data.shape}"
                )
            p.data = np.ascontiguousarray(state[name], dtype=ad.DTYPE)


# leaky-relu(0.2) gain; keeps activation variance stable through depth
_LRELU_GAIN_SQ = 2.0 / (1.0 + 0.2**2)


def _weight_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(3.0 * _LRELU_GAIN_SQ / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bias_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, dilation=1, padding=None,
                 bias=True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if padding is None:
            padding = dilation * (kernel - 1) // 2
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        fan_in = cin * kernel * kernel
        self.weight = Parameter(_weight_init(rng, (cout, cin, kernel, kernel), fan_in))
        self.bias = Parameter(_bias_init(rng, (cout,), fan_in)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride,
                         self.dilation, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel=4, stride=2, padding=1,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        # each output position receives (kernel/stride)^2 taps per channel
        fan_in = cin * (kernel // stride) ** 2
        self.weight = Parameter(_weight_init(rng, (cin, cout, kernel, kernel), fan_in))
        self.bias = Parameter(_bias_init(rng, (cout,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride,
                                   self.padding)


class Aspp(Module):
    """Residual multi-rate context block: parallel dilated 3x3 convolutions
    (rates 1,2,4,8) summed, passed through a nonlinearity and a pointwise
    fuse, added back onto the input.

    The fuse convolution starts at zero, so the block is the identity at
    initialization and content placed by alignment survives an untrained
    network.
    """

    RATES = (1, 2, 4, 8)

    def __init__(self, channels: int, rng: np.random.Generator):
        self.branches = [
            Conv2d(channels, channels, kernel=3, dilation=r, rng=rng)
            for r in self.RATES
        ]
        self.fuse = Conv2d(channels, channels, kernel=1, rng=rng)
        self.fuse.weight.data[:] = 0.0
        self.fuse.bias.data[:] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        out = self.branches[0](x)
        for branch in self.branches[1:]:
            out = out + branch(x)
        return x + self.fuse(ad.leaky_relu(out))


class ConvLstmCell(Module):
    """Convolutional LSTM cell; hidden and cell state match the input shape."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.gates = Conv2d(2 * channels, 4 * channels, kernel=3, rng=rng)
        # open the forget gate at the start so early state survives
        self.gates.bias.data[channels : 2 * channels] += 1.0

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        n = self.channels
        z = self.gates(ad.concat([x, h], axis=0))
        i = ad.sigmoid(ad.narrow(z, 0, 0, n))
        f = ad.sigmoid(ad.narrow(z, 0, n, n))
        o = ad.sigmoid(ad.narrow(z, 0, 2 * n, n))
        g = ad.tanh(ad.narrow(z, 0, 3 * n, n))
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        return h_new, c_new

    def initial_state(self, h: int, w: int):
        zeros = np.zeros((self.channels, h, w), dtype=ad.DTYPE)
        return Tensor(zeros), Tensor(zeros)


class Adam:
    """Adam optimizer over named parameters (state is checkpointable)."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        eps = self.eps * np.sqrt(1.0 - b2**self.t)
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= scale * m / (np.sqrt(v) + eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.m:
            if k not in state["m"]:
                raise CheckpointError(f"optimizer state missing {k}")
            self.m[k] = np.asarray(state["m"][k], dtype=ad.DTYPE)
            self.v[k] = np.asarray(state["v"][k], dtype=ad.DTYPE)


def save_checkpoint(path, module: Module, meta: dict, optimizer: Adam | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None):
    """Write parameters plus a JSON meta block to a single .npz container."""
    arrays = {f"param/{k}": v for k, v in module.state_dict().items()}
    header = {"format_version": CHECKPOINT_FORMAT_VERSION, "meta": meta}
    if optimizer is not None:
        arrays.update({f"opt_m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"opt_v/{k}": v for k, v in optimizer.v.items()})
        header["optimizer_t"] = optimizer.t
    if extra_arrays:
        arrays.update({f"extra/{k}": v for k, v in extra_arrays.items()})
    arrays["__header__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, header, opt_state, extra_arrays)."""
    try:
        with np.load(path) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__header__" not in data:
        raise CheckpointError(f"{path} is not a checkpoint (no header)")
    header = json.loads(bytes(data["__header__"]).decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {header.get('format_version')}"
        )
    params = {k[len("param/"):]: v for k, v in data.items() if k.startswith("param/")}
    opt_state = None
    if "optimizer_t" in header:
        opt_state = {
            "t": header["optimizer_t"],
            "m": {k[len("opt_m/"):]: v for k, v in data.items() if k.startswith("opt_m/")},
            "v": {k[len("opt_v/"):]: v for k, v in data.items() if k.startswith("opt_v/")},
        }
    extra = {k[len("extra/"):]: v for k, v in data.items() if k.startswith("extra/")}
    return params, header, opt_state, extra
