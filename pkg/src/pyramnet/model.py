"""PyramNet assembly: shared-MLP backbone, two GEMs, the pyramid branch and task heads.

Per-point feature maps are computed in a flat (B, N, C) layout; the forward
trace records them in the (B, N, 1, C) layout used in the architecture
diagram so every stage can be audited against it.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, InternalError
from .gem import choose_k, gem_forward
from .pan import PyramidAttention, PyramidConfig, pan_collapse

TASKS = ("classification", "part_seg", "scene_seg")
REFERENCE_SHAPES = {
    "classification": (1024, 3, 40),
    "part_seg": (2048, 3, 50),
    "scene_seg": (4096, 9, 13),
}
CEIL_RULE = "ceil_f_over_4"


@dataclass
class ModelConfig:
    task: str = "classification"
    n_points: int = 1024
    in_channels: int = 3
    num_classes: int = 40
    enable_gem: bool = True
    enable_pan: bool = True
    k_rule: str = CEIL_RULE
    stem_widths: tuple = (32,)
    mlp_widths: tuple = (64, 128, 256, 512)
    head_widths: tuple = (512, 256)
    cls_shortcuts: tuple = (256,)
    seg_shortcuts: tuple = (64, 128, 256)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    dropout_keep: float = 0.65
    correlation: bool = False
    init_std: float = 0.1
    logit_init_std: float = 0.01
    seed: int = 0
    free_form: bool = False

    @classmethod
    def reference(cls, task, **overrides):
        n, f, p = REFERENCE_SHAPES[task]
        kwargs = {"n_points": n, "in_channels": f, "num_classes": p, **overrides}
        return cls(task=task, **kwargs)

    def fixed_k(self):
        """None for the ceil(F/4) rule, else the fixed neighbour count."""
        if self.k_rule == CEIL_RULE:
            return None
        if self.k_rule.startswith("fixed:"):
            return int(self.k_rule.split(":", 1)[1])
        raise ConfigError(f"unknown k_rule {self.k_rule!r}; use {CEIL_RULE} or fixed:<k>")

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.free_form:
            n, f, p = REFERENCE_SHAPES[self.task]
            ok = (self.n_points, self.in_channels) == (n, f)
            ok = ok and (self.num_classes == p or self.task != "scene_seg")
            if not ok:
                raise ConfigError(
                    f"(task, N, F, P)=({self.task}, {self.n_points}, {self.in_channels}, "
                    f"{self.num_classes}) is not a reference configuration; enable free_form"
                )
        if self.in_channels < 1 or self.num_classes < 2 or self.n_points < 2:
            raise ConfigError("need F >= 1, P >= 2 and N >= 2")
        k = self.fixed_k()
        if k is not None and not 1 <= k <= self.n_points - 1:
            raise ConfigError(f"fixed k={k} must lie in [1, N-1={self.n_points - 1}]")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")
        shortcuts = self.cls_shortcuts if self.task == "classification" else self.seg_shortcuts
        for w in shortcuts:
            if w not in self.mlp_widths:
                raise ConfigError(f"shortcut width {w} is not a backbone width {self.mlp_widths}")
        self.pyramid.validate(reference=not self.free_form)
        return self

    # flat key=value serialisation ----------------------------------------------
    def to_text(self):
        lines = []
        for key, value in asdict(self).items():
            if key == "pyramid":
                for pk, pv in value.items():
                    lines.append(f"pyramid.{pk}={_fmt(pv)}")
            else:
                lines.append(f"{key}={_fmt(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        kwargs, pyr = {}, {}
        defaults = cls()
        for f in fields(cls):
            if f.name == "pyramid":
                for pf in fields(PyramidConfig):
                    key = f"pyramid.{pf.name}"
                    if key in raw:
                        pyr[pf.name] = _parse(raw[key], getattr(defaults.pyramid, pf.name))
            elif f.name in raw:
                kwargs[f.name] = _parse(raw[f.name], getattr(defaults, f.name))
        return cls(pyramid=PyramidConfig(**pyr), **kwargs)


def _fmt(value):
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(text, like):
    if isinstance(like, bool):
        if text not in ("True", "False"):
            raise ConfigError(f"expected True/False, got {text!r}")
        return text == "True"
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(int(v) for v in text.split(",") if v)
    return text


class SharedDense:
    """Per-point (or per-sample) linear map, optionally followed by batch norm + ReLU."""

    def __init__(self, cin, cout, rng, dtype, std=0.1, activate=True):
        self.W = T.Tensor(T.truncated_normal(rng, (cin, cout), std, dtype), requires_grad=True)
        self.b = T.Tensor(np.zeros(cout, dtype), requires_grad=True)
        self.bn = T.BatchNormState.create(cout, dtype) if activate else None

    def parameters(self):
        out = {"W": self.W, "b": self.b}
        if self.bn is not None:
            out.update({"bn.gamma": self.bn.gamma, "bn.beta": self.bn.beta})
        return out

    def __call__(self, x, training):
        y = T.pointwise_linear(x, self.W, self.b)
        if self.bn is None:
            return y
        return T.relu(T.batch_norm(y, self.bn, training))


class ForwardTrace:
    """Named intermediate tensors of one forward pass, in diagram layout."""

    def __init__(self):
        self.tensors = OrderedDict()
        self.kinds = {}
        self.adjacency = {}
        self.logits = None

    def record(self, stage, tensor, kind="mlp"):
        self.tensors[stage] = tensor
        self.kinds[stage] = kind

    def __getitem__(self, stage):
        return self.tensors[stage]

    def __contains__(self, stage):
        return stage in self.tensors

    def shapes(self):
        return OrderedDict((k, tuple(v.shape)) for k, v in self.tensors.items())

    def report(self):
        """Plain-text shape audit, one stage per line."""
        rows = [f"{stage:<10} {self.kinds[stage]:<8} {' x '.join(map(str, shape))}"
                for stage, shape in self.shapes().items()]
        return "\n".join(rows) + "\n"


def _unit(t):
    return T.reshape(t, t.shape[:-1] + (1, t.shape[-1]))


class PyramNet:
    def __init__(self, config, dtype=np.float32):
        self.config = config.validate()
        self.dtype = np.dtype(dtype)
        cfg = config
        rng = np.random.default_rng(cfg.seed)
        std = cfg.init_std
        self.layers = OrderedDict()

        cin = cfg.in_channels
        for i, w in enumerate(cfg.stem_widths):
            self.layers[f"stem{i}"] = SharedDense(cin, w, rng, dtype, std)
            cin = w
        self.stem_out = cin
        splice = 2 * cin
        if not cfg.enable_gem:
            self.layers["embed1"] = SharedDense(cin, splice, rng, dtype, std)
        cin = splice
        self.splice_width = splice
        for i, w in enumerate(cfg.mlp_widths):
            self.layers[f"top{i}"] = SharedDense(cin, w, rng, dtype, std)
            cin = w
        top_out = cin
        pan_width = cfg.pyramid.out_channels
        self.pan = None
        if cfg.enable_pan:
            self.pan = PyramidAttention(cfg.pyramid, rng, dtype, check_reference=not cfg.free_form)
        else:
            self.layers["bottom"] = SharedDense(splice, pan_width, rng, dtype, std)
        concat = top_out + pan_width
        self.concat_width = concat
        if not cfg.enable_gem:
            self.layers["embed2"] = SharedDense(concat, 2 * concat, rng, dtype, std)
        feat = 2 * concat
        self.feature_width = feat
        shortcuts = cfg.cls_shortcuts if cfg.task == "classification" else cfg.seg_shortcuts
        cin = feat + sum(shortcuts)
        self.head_in_width = cin
        for i, w in enumerate(cfg.head_widths):
            self.layers[f"head{i}"] = SharedDense(cin, w, rng, dtype, std)
            cin = w
        self.layers["logits"] = SharedDense(cin, cfg.num_classes, rng, dtype, cfg.logit_init_std, activate=False)

    # parameters / state ------------------------------------------------------------
    def parameters(self):
        out = OrderedDict()
        for lname, layer in self.layers.items():
            for pname, p in layer.parameters().items():
                out[f"{lname}.{pname}"] = p
        if self.pan is not None:
            for pname, p in self.pan.parameters().items():
                out[f"pan.{pname}"] = p
        return out

    def bn_states(self):
        out = OrderedDict()
        for lname, layer in self.layers.items():
            if layer.bn is not None:
                out[f"{lname}.bn"] = layer.bn
        if self.pan is not None:
            for name, st in self.pan.bn_states().items():
                out[f"pan.{name}"] = st
        return out

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def set_bn_decay(self, decay):
        for st in self.bn_states().values():
            st.decay = decay

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    # forward ------------------------------------------------------------------------
    def k_for(self, channels):
        return choose_k(channels, self.config.fixed_k())

    def forward(self, points, training=False, rng=None, selections=None):
        """Run the network on a (B, N, F) batch and return the full trace.

        ``selections`` (a dict) caches the GEM neighbour tables so a second
        call reuses them, freezing the discrete selection.
        """
        cfg = self.config
        L = self.layers
        x = points if isinstance(points, T.Tensor) else T.Tensor(np.asarray(points, dtype=self.dtype))
        if x.ndim != 3 or x.shape[1:] != (cfg.n_points, cfg.in_channels):
            raise ConfigError(
                f"input shape {x.shape} does not match (B, N={cfg.n_points}, F={cfg.in_channels})"
            )
        b, n = x.shape[:2]
        tr = ForwardTrace()
        tr.record("input", x, "input")

        h = x
        for i in range(len(cfg.stem_widths)):
            h = L[f"stem{i}"](h, training)
        tr.record("post-mlp1", _unit(h))

        h = self._embed(h, 1, tr, training, selections)
        tr.record("post-gem1", _unit(h), tr.kinds.pop("_embed"))
        tr.record("splice", h, "reshape")

        t = h
        short = {}
        for i, w in enumerate(cfg.mlp_widths):
            t = L[f"top{i}"](t, training)
            short[w] = t
        tr.record("mlp-top", _unit(t))

        if self.pan is not None:
            p = self.pan(h, training)
            tr.record("pan-out", p, "pan")
            g = pan_collapse(p)
            tr.record("pan-gap", g, "pan")
            g = T.reshape(g, (b, n, g.shape[-1]))
        else:
            g = L["bottom"](h, training)
            tr.record("bottom", _unit(g), "linear")

        c = T.concat([t, g], axis=-1)
        tr.record("concat", _unit(c), "concat")
        c = self._embed(c, 2, tr, training, selections)
        tr.record("post-gem2", _unit(c), tr.kinds.pop("_embed"))

        if cfg.task == "classification":
            head = T.concat([c] + [short[w] for w in cfg.cls_shortcuts], axis=-1)
            tr.record("head-in", _unit(head), "concat")
            z = T.max_pool_over_points(head, axis=1)
            for i in range(len(cfg.head_widths)):
                z = L[f"head{i}"](z, training)
            z = T.dropout(z, cfg.dropout_keep, training, rng)
        else:
            head = T.concat([c] + [short[w] for w in cfg.seg_shortcuts], axis=-1)
            tr.record("head-in", _unit(head), "concat")
            z = head
            for i in range(len(cfg.head_widths)):
                z = L[f"head{i}"](z, training)
        logits = L["logits"](z, training)
        tr.record("logits", logits, "linear")
        tr.logits = logits
        self._check_trace(tr, b)
        return tr

    def _embed(self, h, which, tr, training, selections):
        if not self.config.enable_gem:
            tr.kinds["_embed"] = "linear"
            return self.layers[f"embed{which}"](h, training)
        key = f"gem{which}"
        cached = selections.get(key) if selections is not None else None
        out, adj = gem_forward(
            h,
            k=self.config.fixed_k(),
            correlation=self.config.correlation,
            adjacency=cached,
            return_adjacency=True,
        )
        if selections is not None:
            selections[key] = adj
        tr.adjacency[key] = adj
        tr.kinds["_embed"] = "gem"
        return out

    def expected_shapes(self, batch):
        cfg = self.config
        n = cfg.n_points
        s = OrderedDict()
        s["input"] = (batch, n, cfg.in_channels)
        s["post-mlp1"] = (batch, n, 1, self.stem_out)
        s["post-gem1"] = (batch, n, 1, self.splice_width)
        s["splice"] = (batch, n, self.splice_width)
        s["mlp-top"] = (batch, n, 1, cfg.mlp_widths[-1])
        if cfg.enable_pan:
            s["pan-out"] = (batch, n, self.splice_width, cfg.pyramid.out_channels)
            s["pan-gap"] = (batch, n, 1, cfg.pyramid.out_channels)
        else:
            s["bottom"] = (batch, n, 1, cfg.pyramid.out_channels)
        s["concat"] = (batch, n, 1, self.concat_width)
        s["post-gem2"] = (batch, n, 1, self.feature_width)
        s["head-in"] = (batch, n, 1, self.head_in_width)
        if cfg.task == "classification":
            s["logits"] = (batch, cfg.num_classes)
        else:
            s["logits"] = (batch, n, cfg.num_classes)
        return s

    def _check_trace(self, tr, batch):
        for stage, shape in self.expected_shapes(batch).items():
            got = tuple(tr[stage].shape) if stage in tr else None
            if got != shape:
                raise InternalError(f"stage {stage!r}: shape {got} differs from contract {shape}")

    # convenience ----------------------------------------------------------------------
    def predict(self, points):
        """Arg-max class ids in inference mode."""
        logits = self.forward(points, training=False).logits.data
        return logits.argmax(axis=-1)


def loss(logits, labels, task=None):
    """Mean cross-entropy over samples (classification) or over all B*N points."""
    return T.softmax_cross_entropy(logits, labels)


def softmax(logits):
    z = np.asarray(logits.data if isinstance(logits, T.Tensor) else logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
