"""Network configuration and parameter state."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

KINDS = ("unet2d", "unet3d", "unetr")
DTYPES = {"single": np.float32, "double": np.float64}


@dataclass(frozen=True)
class NetConfig:
    kind: str
    input_dims: tuple[int, ...]
    channel_widths: tuple[int, ...] = (8, 16, 32, 64)
    kernel_size: int = 3
    pool_factor: int = 2
    dropout_rate: float = 0.0
    patch_size: int = 8
    embed_dim: int = 32
    heads: int = 2
    depth: int = 2
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "channel_widths", tuple(int(c) for c in self.channel_widths))
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {tuple(DTYPES)}")
        nd = 2 if self.kind == "unet2d" else 3
        if len(self.input_dims) != nd:
            raise ValueError(f"{self.kind} needs {nd} input dims, got {self.input_dims}")
        if not self.channel_widths or min(self.channel_widths) < 1:
            raise ValueError("channel_widths must be non-empty and positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd number")
        if self.pool_factor < 2:
            raise ValueError("pool_factor must be >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.kind == "unetr":
            if any(d % self.patch_size for d in self.input_dims):
                raise ValueError(f"input dims {self.input_dims} not divisible by patch size "
                                 f"{self.patch_size}")
            if self.embed_dim % self.heads:
                raise ValueError("embed_dim must be divisible by heads")
            if self.depth < 1:
                raise ValueError("depth must be >= 1")
            stages = 0
            p = self.patch_size
            while p > 1 and p % self.pool_factor == 0:
                p //= self.pool_factor
                stages += 1
            if p != 1:
                raise ValueError("patch_size must be a power of pool_factor")
        else:
            div = self.pool_factor ** (len(self.channel_widths) - 1)
            if any(d % div for d in self.input_dims):
                raise ValueError(f"input dims {self.input_dims} not divisible by {div}")

    @property
    def spatial_ndim(self) -> int:
        return 2 if self.kind == "unet2d" else 3

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1
    steps_per_epoch: int = 50
    dropout_rate: float | None = None  # None: use the network's rate
    loss_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        # a zero learning rate is allowed: it freezes training for baselines
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if self.loss_eps <= 0:
            raise ValueError("loss_eps must be > 0")
        if self.dropout_rate is not None and not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


@dataclass
class NetState:
    """Parameters, frozen flags and Adam state of one network.

    ``layers`` lists parameterized layers in forward-definition order
    (input side first) with the parameter names each one owns.
    """

    config: NetConfig
    params: dict[str, np.ndarray]
    layers: list[tuple[str, tuple[str, ...]]]
    frozen: set[str] = field(default_factory=set)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "NetState":
        return copy.deepcopy(self)

    def astype(self, precision: str) -> "NetState":
        """Copy with parameters cast to ``precision`` ('single' or 'double')."""
        from dataclasses import replace

        dtype = DTYPES[precision]
        out = self.copy()
        out.config = replace(self.config, precision=precision)
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        out.adam_m = {k: v.astype(dtype) for k, v in out.adam_m.items()}
        out.adam_v = {k: v.astype(dtype) for k, v in out.adam_v.items()}
        return out


# Small positive conv bias: with zero bias, any voxel whose receptive field is
# all zeros sits exactly on a ReLU corner.
CONV_BIAS_INIT = 0.01


class ParamBuilder:
    """Collects initialized parameters in definition order."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.dtype = dtype
        self.params: dict[str, np.ndarray] = {}
        self.layers: list[tuple[str, tuple[str, ...]]] = []

    def layer(self, name: str, **arrays):
        names = []
        for key, arr in arrays.items():
            full = f"{name}.{key}"
            self.params[full] = np.asarray(arr, dtype=self.dtype)
            names.append(full)
        self.layers.append((name, tuple(names)))

    def conv(self, name, cin, cout, k, nd):
        fan_in = cin * k ** nd
        w = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin) + (k,) * nd)
        self.layer(name, w=w, b=np.full(cout, CONV_BIAS_INIT))

    def conv_transpose(self, name, cin, cout, k, nd):
        w = self.rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout) + (k,) * nd)
        self.layer(name, w=w, b=np.full(cout, CONV_BIAS_INIT))

    def linear(self, name, nin, nout, **extra):
        limit = np.sqrt(6.0 / (nin + nout))
        w = self.rng.uniform(-limit, limit, size=(nin, nout))
        self.layer(name, w=w, b=np.zeros(nout), **extra)

    def state(self, cfg: NetConfig) -> NetState:
        return NetState(cfg, self.params, self.layers)
