"""Conditional encoder-decoder generator and patch discriminator.

The generator sees the fundus image with one standard-normal noise channel
appended and emits a vessel probability map of the same spatial size.  The
discriminator sees the image concatenated with a candidate map and emits one
realness score per output cell; each cell only looks at its own receptive
field, so cells act as independent patch classifiers.
"""
import contextlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conv import BatchNormState, ConvSpec, batch_norm2d, conv2d, conv_transpose2d
from .errors import ConfigError, ShapeError

KERNEL = 4
DOWN = ConvSpec(stride=2, padding=1)
HEAD = ConvSpec(stride=1, padding=1)


class ParameterStore:
    """Ordered name -> Tensor map of trainable parameters plus norm buffers.

    ``buffers`` holds the :class:`BatchNormState` of each normalization layer,
    keyed by layer name.  ``config`` is the architecture the store was built
    for; the forward functions read it to walk the layer plan.
    """

    def __init__(self, config=None):
        self.config = config
        self._params = {}
        self.buffers = {}

    def add(self, name, array):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = T.Tensor(array, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self):
        return list(self._params)

    def num_elements(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays):
        for name, t in self._params.items():
            if name not in arrays:
                raise ConfigError(f"missing parameter {name!r}")
            if arrays[name].shape != t.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arrays[name].shape} != model shape {t.shape}")
            t.data = np.array(arrays[name], dtype=t.dtype)

    def astype(self, dtype):
        """Deep copy with every parameter and buffer cast to ``dtype``."""
        out = ParameterStore(self.config)
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        for name, st in self.buffers.items():
            copy = BatchNormState(st.running_mean.size, st.momentum, dtype)
            copy.running_mean[...] = st.running_mean
            copy.running_var[...] = st.running_var
            out.buffers[name] = copy
        return out

    @contextlib.contextmanager
    def frozen(self):
        """Stop gradients at these parameters for the duration of the block."""
        flags = [(t, t.requires_grad) for t in self._params.values()]
        for t, _ in flags:
            t.requires_grad = False
        try:
            yield self
        finally:
            for t, flag in flags:
                t.requires_grad = flag


def _stage_channels(base, depth, cap=512):
    return [min(base * 2 ** i, cap) for i in range(depth)]


@dataclass
class GeneratorConfig:
    depth: int = 5
    base_channels: int = 64
    image_channels: int = 3
    noise_channels: int = 1
    output_channels: int = 1
    max_channels: int = 512

    @property
    def input_channels(self):
        return self.image_channels + self.noise_channels

    @property
    def multiple(self):
        return 2 ** self.depth

    def encoder_channels(self):
        return _stage_channels(self.base_channels, self.depth, self.max_channels)

    def decoder_plan(self):
        """(name, in_channels, out_channels) for each decoder stage, deepest first.

        Stage ``dec{d}`` upsamples to the resolution of encoder stage d-1 and
        is followed by concatenation with that stage's features.
        """
        enc = self.encoder_channels()
        plan = []
        for d in range(self.depth, 0, -1):
            cin = enc[d - 1] if d == self.depth else 2 * enc[d - 1]
            cout = enc[d - 2] if d > 1 else self.output_channels
            plan.append((f"dec{d}", cin, cout))
        return plan

    def check_extent(self, h, w):
        m = self.multiple
        if h % m or w % m:
            raise ConfigError(f"generator depth {self.depth} needs spatial extents divisible by {m}, got {h}x{w}")

    def validate(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigError("generator depth and base_channels must be positive")


@dataclass
class DiscriminatorConfig:
    depth: int = 3
    base_channels: int = 64
    image_channels: int = 3
    map_channels: int = 1
    max_channels: int = 512

    @property
    def input_channels(self):
        return self.image_channels + self.map_channels

    def stage_channels(self):
        return _stage_channels(self.base_channels, self.depth, self.max_channels)

    def patch_grid(self, h, w):
        """Score-map extent (gH, gW) for an h x w input; errors if it would be empty."""
        size = (h, w)
        try:
            for _ in range(self.depth):
                size = DOWN.output_extent(size, (KERNEL, KERNEL))
            size = HEAD.output_extent(size, (KERNEL, KERNEL))
        except ConfigError as exc:
            raise ConfigError(f"discriminator depth {self.depth} yields no patches for a {h}x{w} input: {exc}") from None
        return size

    def patch_count(self, h, w):
        gh, gw = self.patch_grid(h, w)
        return gh * gw

    def receptive_field(self):
        """Input pixels seen by one score cell (square)."""
        rf = KERNEL
        for _ in range(self.depth):
            rf = (rf - 1) * DOWN.stride[0] + KERNEL
        return rf

    def validate(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigError("discriminator depth and base_channels must be positive")


@dataclass
class NoiseSpec:
    """Standard-normal noise planes, one fresh draw per call."""

    channels: int = 1

    def sample(self, rng, n, h, w, dtype=None):
        dtype = dtype or T.get_default_dtype()
        return T.Tensor(rng.standard_normal((n, self.channels, h, w)).astype(dtype))

    def zeros(self, n, h, w, dtype=None):
        dtype = dtype or T.get_default_dtype()
        return T.Tensor(np.zeros((n, self.channels, h, w), dtype=dtype))


def _init_conv(store, rng, prefix, shape, dtype):
    store.add(f"{prefix}/kernel", rng.normal(0.0, 0.02, shape).astype(dtype))
    out_channels = shape[1] if prefix.endswith("convt") else shape[0]
    store.add(f"{prefix}/bias", np.zeros(out_channels, dtype=dtype))


def _init_norm(store, rng, prefix, channels, dtype):
    store.add(f"{prefix}/gamma", rng.normal(1.0, 0.02, channels).astype(dtype))
    store.add(f"{prefix}/beta", np.zeros(channels, dtype=dtype))
    store.buffers[prefix] = BatchNormState(channels, dtype=dtype)


def build_generator(cfg=None, seed=0):
    cfg = cfg or GeneratorConfig()
    cfg.validate()
    dtype = T.get_default_dtype()
    rng = np.random.default_rng(seed)
    store = ParameterStore(cfg)
    cin = cfg.input_channels
    for i, cout in enumerate(cfg.encoder_channels(), start=1):
        _init_conv(store, rng, f"gen/enc{i}/conv", (cout, cin, KERNEL, KERNEL), dtype)
        if i > 1:
            _init_norm(store, rng, f"gen/enc{i}/bn", cout, dtype)
        cin = cout
    for name, cin, cout in cfg.decoder_plan():
        _init_conv(store, rng, f"gen/{name}/convt", (cin, cout, KERNEL, KERNEL), dtype)
        if name != "dec1":
            _init_norm(store, rng, f"gen/{name}/bn", cout, dtype)
    return store


def _norm(params, prefix, h, mode):
    return batch_norm2d(h, params[f"{prefix}/gamma"], params[f"{prefix}/beta"], params.buffers[prefix], mode)


def generator_forward(params, x, z, mode="train", skip=True):
    """G(x, z): vessel probabilities of shape (N, 1, H, W).

    ``skip=False`` replaces every skip tensor by zeros of the same shape,
    keeping the channel plan intact; it exists to test the wiring.
    """
    cfg = params.config
    x, z = T.as_tensor(x), T.as_tensor(z)
    if x.data.ndim != 4 or z.data.ndim != 4:
        raise ShapeError(f"generator expects rank-4 x and z, got {x.shape} and {z.shape}")
    if z.shape != (x.shape[0], cfg.noise_channels, *x.shape[2:]):
        raise ShapeError(f"noise shape {z.shape} does not match image shape {x.shape}")
    if x.shape[1] != cfg.image_channels:
        raise ShapeError(f"generator expects {cfg.image_channels} image channels, got shape {x.shape}")
    cfg.check_extent(*x.shape[2:])

    h = T.concat_channels(x, z)
    features = []
    for i in range(1, cfg.depth + 1):
        p = f"gen/enc{i}"
        h = conv2d(h, params[f"{p}/conv/kernel"], params[f"{p}/conv/bias"], DOWN)
        if i > 1:
            h = _norm(params, f"{p}/bn", h, mode)
        h = T.leaky_relu(h, 0.2)
        features.append(h)

    for d in range(cfg.depth, 0, -1):
        p = f"gen/dec{d}"
        if d < cfg.depth:
            bridge = features[d - 1]
            if not skip:
                bridge = T.Tensor(np.zeros_like(bridge.data))
            h = T.concat_channels(h, bridge)
        h = conv_transpose2d(h, params[f"{p}/convt/kernel"], params[f"{p}/convt/bias"], DOWN)
        if d > 1:
            h = T.relu(_norm(params, f"{p}/bn", h, mode))
    return T.sigmoid(h)


def build_discriminator(cfg=None, seed=0):
    cfg = cfg or DiscriminatorConfig()
    cfg.validate()
    dtype = T.get_default_dtype()
    rng = np.random.default_rng(seed)
    store = ParameterStore(cfg)
    cin = cfg.input_channels
    for i, cout in enumerate(cfg.stage_channels(), start=1):
        _init_conv(store, rng, f"disc/stage{i}/conv", (cout, cin, KERNEL, KERNEL), dtype)
        if i > 1:
            _init_norm(store, rng, f"disc/stage{i}/bn", cout, dtype)
        cin = cout
    _init_conv(store, rng, "disc/head/conv", (1, cin, KERNEL, KERNEL), dtype)
    return store


def discriminator_forward(params, x, candidate, mode="train"):
    """Per-patch realness scores (N, 1, gH, gW) for the pair (x, candidate)."""
    cfg = params.config
    x, candidate = T.as_tensor(x), T.as_tensor(candidate)
    if candidate.data.ndim != 4 or x.data.ndim != 4:
        raise ShapeError(f"discriminator expects rank-4 inputs, got {x.shape} and {candidate.shape}")
    if candidate.shape != (x.shape[0], cfg.map_channels, *x.shape[2:]):
        raise ShapeError(f"candidate shape {candidate.shape} does not match image shape {x.shape}")
    cfg.patch_grid(*x.shape[2:])

    h = T.concat_channels(x, candidate)
    for i in range(1, cfg.depth + 1):
        p = f"disc/stage{i}"
        h = conv2d(h, params[f"{p}/conv/kernel"], params[f"{p}/conv/bias"], DOWN)
        if i > 1:
            h = _norm(params, f"{p}/bn", h, mode)
        h = T.leaky_relu(h, 0.2)
    h = conv2d(h, params["disc/head/conv/kernel"], params["disc/head/conv/bias"], HEAD)
    return T.sigmoid(h)
