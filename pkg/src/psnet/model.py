"""PSNet: truncated VGG-16 backbone, stacked pyramid scale modules, regression head."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .optim import make_rng
from .tensor import Tensor

# VGG-16 up to conv4_3: (out-channel multiplier, or "M" for a 2x2 max pool)
VGG_PREFIX = (1, 1, "M", 2, 2, "M", 4, 4, 4, "M", 8, 8, 8)
HEAD_MULTIPLIERS = (4, 2, 1)  # 256/128/64 at base width 64
NEW_LAYER_STD = 0.01


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    message_passing: bool = True
    gam: bool = True
    use_dilation: bool = False

    @classmethod
    def named(cls, name):
        table = {
            "baseline": cls(False, False, False),
            "baseline-fpm": cls(True, False, False),
            "baseline-psm": cls(True, True, False),
            "psnet": cls(True, True, False),
            "psnet-dilation": cls(True, True, True),
        }
        try:
            return table[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; choose from {sorted(table)}") from None

    @property
    def name(self):
        if not self.message_passing and not self.gam:
            return "Baseline"
        if self.message_passing and not self.gam:
            return "Baseline-FPM"
        if self.message_passing and self.gam:
            return "PSNet-dilation" if self.use_dilation else "PSNet"
        return "custom"


@dataclass
class ModelConfig:
    base_width: int = 64
    psm_count: int = 3
    branch_kernels: tuple = (3, 5, 7, 9)
    reduction_ratio: int = 16
    variant: Variant = field(default_factory=Variant)
    # std of non-backbone init; None draws from N(0, 2/fan_in) like the backbone
    init_std: float | None = NEW_LAYER_STD

    def __post_init__(self):
        self.branch_kernels = tuple(int(k) for k in self.branch_kernels)
        if isinstance(self.variant, dict):
            self.variant = Variant(**self.variant)

    @property
    def psm_channels(self):
        return 8 * self.base_width

    def validate(self):
        c = self.psm_channels
        if self.base_width <= 0 or self.psm_count <= 0 or self.reduction_ratio <= 0:
            raise ConfigError("base_width, psm_count and reduction_ratio must be positive")
        if len(self.branch_kernels) < 2:
            raise ConfigError("need at least two branches")
        if c % len(self.branch_kernels):
            raise ConfigError(f"{c} PSM channels not divisible by {len(self.branch_kernels)} branches")
        if c % self.reduction_ratio:
            raise ConfigError(f"{c} PSM channels not divisible by reduction ratio {self.reduction_ratio}")
        ks = self.branch_kernels
        if any(k % 2 == 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError(f"branch kernels must be odd and strictly increasing, got {ks}")

    def to_dict(self):
        d = asdict(self)
        d["branch_kernels"] = list(self.branch_kernels)
        return d


@dataclass(frozen=True)
class ConvSpec:
    name: str
    cin: int
    cout: int
    k: int
    dilation: int = 1
    init_std: float | None = None  # None: fan-in scaled

    @property
    def padding(self):
        return self.dilation * (self.k - 1) // 2


class PsnetModel:
    """Named parameters plus the layer plan needed to run them."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params
        self.backbone_plan, self.psm_plans, self.head_plan = _layer_plan(config)

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def astype(self, dtype):
        return PsnetModel(self.config, {n: Tensor(p.data.astype(dtype), requires_grad=True, name=n) for n, p in self.params.items()})

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    # structure --------------------------------------------------------------
    @property
    def backbone_conv_count(self):
        return sum(1 for s in self.backbone_plan if s != "M")

    @property
    def backbone_pool_count(self):
        return sum(1 for s in self.backbone_plan if s == "M")

    @property
    def head_conv_count(self):
        return len(self.head_plan)

    def psm_graph(self, psm_index):
        """Predecessor lists of the convolution DAG inside one PSM."""
        return _psm_graph(self.config, psm_index)

    def conv(self, spec, x):
        return T.conv2d(x, self.params[spec.name + ".weight"], self.params[spec.name + ".bias"], padding=spec.padding, dilation=spec.dilation)


def _branch_conv(config, k):
    if config.variant.use_dilation and k > 3:
        return 3, (k - 1) // 2
    return k, 1


def _layer_plan(config):
    bw = config.base_width
    backbone = []
    cin, n = 3, 0
    for item in VGG_PREFIX:
        if item == "M":
            backbone.append("M")
            continue
        n += 1
        backbone.append(ConvSpec(f"backbone.conv{n}", cin, bw * item, 3))
        cin = bw * item
    c = config.psm_channels
    q = c // len(config.branch_kernels)
    std = config.init_std
    psms = []
    for i in range(config.psm_count):
        p = f"psm{i}"
        plan = {
            "gam_reduce": ConvSpec(f"{p}.gam.reduce", c, c // config.reduction_ratio, 1, init_std=std),
            "gam_expand": ConvSpec(f"{p}.gam.expand", c // config.reduction_ratio, c, 1, init_std=std),
            "reduce": [],
            "branch": [],
            "pass": [],
            "fuse": ConvSpec(f"{p}.fuse", c, c, 3, init_std=std),
        }
        for b, k in enumerate(config.branch_kernels):
            kk, dil = _branch_conv(config, k)
            plan["reduce"].append(ConvSpec(f"{p}.branch{b}.reduce", c, q, 1, init_std=std))
            plan["branch"].append(ConvSpec(f"{p}.branch{b}.conv", q, q, kk, dil, init_std=std))
            if b > 0 and config.variant.message_passing:
                plan["pass"].append(ConvSpec(f"{p}.branch{b}.pass", 2 * q, q, 3, init_std=std))
        psms.append(plan)
    head = []
    cin = c
    for j, m in enumerate(HEAD_MULTIPLIERS):
        head.append(ConvSpec(f"head.conv{j + 1}", cin, bw * m, 3, init_std=std))
        cin = bw * m
    head.append(ConvSpec(f"head.conv{len(HEAD_MULTIPLIERS) + 1}", cin, 1, 1, init_std=std))
    return backbone, psms, head


def _all_convs(backbone, psms, head):
    for s in backbone:
        if s != "M":
            yield s
    for plan in psms:
        yield plan["gam_reduce"]
        yield plan["gam_expand"]
        for b in range(len(plan["reduce"])):
            yield plan["reduce"][b]
            yield plan["branch"][b]
            if 0 < b <= len(plan["pass"]):
                yield plan["pass"][b - 1]
        yield plan["fuse"]
    yield from head


def build_model(config: ModelConfig, rng=None, seed=0, dtype=np.float32):
    """Create a model with freshly initialized parameters.

    Backbone convolutions draw from N(0, 2/fan_in); all other layers from
    N(0, init_std^2), 0.01 by default. Biases start at zero.
    """
    config.validate()
    rng = rng if rng is not None else make_rng(seed)
    backbone, psms, head = _layer_plan(config)
    params = {}
    for spec in _all_convs(backbone, psms, head):
        fan_in = spec.cin * spec.k * spec.k
        std = spec.init_std if spec.init_std is not None else np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(spec.cout, spec.cin, spec.k, spec.k))
        params[spec.name + ".weight"] = Tensor(w.astype(dtype), requires_grad=True, name=spec.name + ".weight")
        params[spec.name + ".bias"] = Tensor(np.zeros(spec.cout, dtype=dtype), requires_grad=True, name=spec.name + ".bias")
    return PsnetModel(config, params)


# -------------------------------------------------------------------- forward


def backbone_forward(model, x):
    for spec in model.backbone_plan:
        x = T.maxpool2(x) if spec == "M" else T.relu(model.conv(spec, x))
    return x


def gam_forward(model, psm_index, f_in):
    """Channel gate in (0, 1): pool, squeeze, relu, excite, sigmoid."""
    plan = model.psm_plans[psm_index]
    c = f_in.shape[0]
    if c % model.config.reduction_ratio:
        raise ConfigError(f"{c} channels not divisible by reduction ratio {model.config.reduction_ratio}")
    z = T.global_avg_pool(f_in)
    z = T.relu(model.conv(plan["gam_reduce"], z))
    return T.sigmoid(model.conv(plan["gam_expand"], z))


def fpm_forward(model, psm_index, f_in):
    """Four-branch pyramid; returns the fused map and each branch's final output."""
    plan = model.psm_plans[psm_index]
    c = f_in.shape[0]
    nb = len(plan["reduce"])
    if c % nb:
        raise ConfigError(f"{c} channels not divisible by {nb} branches")
    outs = []
    for b in range(nb):
        raw = T.relu(model.conv(plan["branch"][b], T.relu(model.conv(plan["reduce"][b], f_in))))
        if b > 0 and model.config.variant.message_passing:
            raw = T.relu(model.conv(plan["pass"][b - 1], T.concat_channels([raw, outs[-1]])))
        outs.append(raw)
    fused = T.relu(model.conv(plan["fuse"], T.concat_channels(outs)))
    return fused, outs


def psm_forward(model, psm_index, f_in, force_attention=None):
    fused, branches = fpm_forward(model, psm_index, f_in)
    if not model.config.variant.gam:
        return fused, branches
    att = force_attention if force_attention is not None else gam_forward(model, psm_index, f_in)
    return T.mul(fused, att), branches


def head_forward(model, x):
    *hidden, last = model.head_plan
    for spec in hidden:
        x = T.relu(model.conv(spec, x))
    return model.conv(last, x)


def psnet_forward(model, image):
    """Density map at 1/8 resolution plus per-PSM branch outputs."""
    if image.data.ndim != 3 or image.shape[0] != 3:
        raise T.ShapeError(f"expected a 3 x H x W image, got {image.shape}")
    _, h, w = image.shape
    if h % 8 or w % 8:
        raise T.ShapeError(f"image size {h}x{w} is not divisible by 8")
    x = backbone_forward(model, image)
    records = []
    for k in range(model.config.psm_count):
        x, branches = psm_forward(model, k, x)
        records.append(branches)
    return head_forward(model, x), records


# ------------------------------------------------------------------ structure


def _psm_graph(config, psm_index):
    g = {"in": []}
    for b in range(len(config.branch_kernels)):
        g[f"reduce{b}"] = ["in"]
        g[f"conv{b}"] = [f"reduce{b}"]
        if b > 0 and config.variant.message_passing:
            g[f"pass{b}"] = [f"conv{b}", f"out{b - 1}"]
            g[f"out{b}"] = [f"pass{b}"]
        else:
            g[f"out{b}"] = [f"conv{b}"]
    g["fuse"] = [f"out{b}" for b in range(len(config.branch_kernels))]
    return g


def count_paths(model, psm_index, branch_index):
    """Distinct convolution paths from the PSM input to a branch's final output."""
    if not 0 <= psm_index < model.config.psm_count:
        raise IndexError(f"psm index {psm_index} out of range")
    graph = model.psm_graph(psm_index)
    memo = {"in": 1}

    def paths(node):
        if node not in memo:
            memo[node] = sum(paths(p) for p in graph[node])
        return memo[node]

    return paths(f"out{branch_index}")


# ----------------------------------------------------------------- checkpoint

FORMAT_TAG = "psnet-checkpoint-1"


def save_checkpoint(model, path):
    """Write a key-value text manifest at ``path`` and a float32 blob beside it."""
    blob_path = path + ".bin"
    cfg = model.config
    lines = [
        f"format = {FORMAT_TAG}",
        f"base_width = {cfg.base_width}",
        f"psm_count = {cfg.psm_count}",
        f"branch_kernels = {','.join(map(str, cfg.branch_kernels))}",
        f"reduction_ratio = {cfg.reduction_ratio}",
        f"message_passing = {str(cfg.variant.message_passing).lower()}",
        f"gam = {str(cfg.variant.gam).lower()}",
        f"use_dilation = {str(cfg.variant.use_dilation).lower()}",
        f"init_std = {cfg.init_std if cfg.init_std is not None else 'fan_in'}",
        f"blob = {os.path.basename(blob_path)}",
    ]
    offset = 0
    chunks = []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        lines.append(f"param {name} = {'x'.join(map(str, arr.shape))} @ {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(blob_path, "wb") as f:
        for c in chunks:
            f.write(c)


def load_checkpoint(path):
    meta, entries = {}, []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = key.strip(), value.strip()
            if key.startswith("param "):
                shape_txt, _, off = value.partition("@")
                shape = tuple(int(s) for s in shape_txt.strip().split("x"))
                entries.append((key[6:].strip(), shape, int(off)))
            else:
                meta[key] = value
    if meta.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unknown checkpoint format {meta.get('format')!r}")

    def flag(k):
        return meta[k].lower() == "true"

    config = ModelConfig(
        base_width=int(meta["base_width"]),
        psm_count=int(meta["psm_count"]),
        branch_kernels=tuple(int(k) for k in meta["branch_kernels"].split(",")),
        reduction_ratio=int(meta["reduction_ratio"]),
        variant=Variant(flag("message_passing"), flag("gam"), flag("use_dilation")),
        init_std=None if meta.get("init_std", "fan_in") == "fan_in" else float(meta["init_std"]),
    )
    with open(os.path.join(os.path.dirname(path), meta["blob"]), "rb") as f:
        blob = f.read()
    params = {}
    for name, shape, off in entries:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    model = PsnetModel(config, params)
    expected = {s.name + suffix for s in _all_convs(model.backbone_plan, model.psm_plans, model.head_plan) for suffix in (".weight", ".bias")}
    if expected != set(params):
        raise ValueError(f"{path}: parameter set does not match the configured architecture")
    return model
