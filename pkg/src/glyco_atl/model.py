"""Fully convolutional forecaster with an optional adversarial domain head.

Architecture (input is a batch of 3-channel, 36-step standardized windows):

  extractor   3 x [conv1d k=3 -> ReLU -> batchnorm -> dropout],
              channels 64, 128, 64; lengths 36 -> 34 -> 32 -> 30
  predictor   conv1d k=30, 2048 channels (spans the whole remaining length,
              i.e. acts as a dense layer) -> affine 2048 -> 1
  classifier  gradient reversal -> conv1d k=30, 2048 channels
              -> affine 2048 -> n_domains   (adversarial variants only)

The classifier mirrors the predictor head; the reversal layer makes the
extractor unlearn whatever lets the classifier tell domains apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import layers as L
from .nn.seeds import stream
from .nn.store import load_arrays, save_arrays

INPUT_CHANNELS = 3
INPUT_STEPS = 36
EXTRACTOR_CHANNELS = (64, 128, 64)
EXTRACTOR_KERNEL = 3
HEAD_CHANNELS = 2048
HEAD_KERNEL = 30
FEATURE_DIM = EXTRACTOR_CHANNELS[-1] * HEAD_KERNEL  # 64 * 30 = 1920

VARIANTS = ("FCN1", "FCN2", "TL", "ATL")
DEFAULT_ADVERSARY_WEIGHT = 10.0 ** -0.75


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    dropout_rate: float
    learning_rate: float
    early_stop_patience: int
    adversary_weight: float | None = None
    n_domains: int | None = None

    @classmethod
    def for_variant(cls, variant: str, n_domains: int | None = None,
                    **overrides) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        base = dict(dropout_rate=0.5, learning_rate=1e-4, early_stop_patience=250)
        if variant == "FCN2":
            base = dict(dropout_rate=0.9, learning_rate=1e-3, early_stop_patience=250)
        if variant == "ATL":
            if n_domains is None or n_domains < 2:
                raise ValueError("ATL needs n_domains >= 2")
            base.update(adversary_weight=DEFAULT_ADVERSARY_WEIGHT, n_domains=n_domains)
        base.update(overrides)
        return cls(variant=variant, **base)

    def finetuned(self) -> "ModelConfig":
        """Finetuning stage: learning rate down to 1e-5, patience to 50,
        adversarial head off."""
        return replace(self, learning_rate=1e-5, early_stop_patience=50,
                       adversary_weight=None, n_domains=None)

    @property
    def adversarial(self) -> bool:
        return self.adversary_weight is not None

    def to_json(self) -> dict:
        return {"variant": self.variant, "dropout_rate": self.dropout_rate,
                "learning_rate": self.learning_rate,
                "early_stop_patience": self.early_stop_patience,
                "adversary_weight": self.adversary_weight,
                "n_domains": self.n_domains}

    @classmethod
    def from_json(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


@dataclass
class ForwardOutput:
    prediction: np.ndarray            # (batch,)
    features: np.ndarray              # (batch, FEATURE_DIM)
    domain_logits: np.ndarray | None  # (batch, n_domains) or None


class _ConvBlock:
    """conv -> ReLU -> batchnorm -> dropout, in that order."""

    def __init__(self, in_channels, out_channels, dropout_rate, rng):
        self.conv = L.Conv1d(in_channels, out_channels, EXTRACTOR_KERNEL, rng)
        self.relu = L.ReLU()
        self.bn = L.BatchNorm1d(out_channels)
        self.drop = L.Dropout(dropout_rate)

    def forward(self, x, train, rng):
        x = self.conv.forward(x, train)
        x = self.relu.forward(x, train)
        x = self.bn.forward(x, train)
        return self.drop.forward(x, train, rng)

    def backward(self, g):
        g = self.drop.backward(g)
        g = self.bn.backward(g)
        g = self.relu.backward(g)
        return self.conv.backward(g)


class _Head:
    """Full-length convolution plus affine projection to out_features."""

    def __init__(self, out_features, rng_conv, rng_out):
        self.conv = L.Conv1d(EXTRACTOR_CHANNELS[-1], HEAD_CHANNELS, HEAD_KERNEL, rng_conv)
        self.out = L.Affine(HEAD_CHANNELS, out_features, rng_out)

    def forward(self, x, train):
        h = self.conv.forward(x, train)      # (B, 2048, 1)
        return self.out.forward(h[:, :, 0], train)

    def backward(self, g):
        g = self.out.backward(g)
        return self.conv.backward(g[:, :, None])


class FcnModel:
    """Parameter container plus forward/backward orchestration.

    forward() takes (batch, 3, 36) arrays; backward() takes the loss
    gradients for the heads, routes the domain gradient through the
    reversal layer onto the shared features, and scales the classifier's
    own parameter gradients by the same adversary weight so both sides of
    the domain objective are weighted symmetrically.
    """

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        channels = (INPUT_CHANNELS,) + EXTRACTOR_CHANNELS
        self.extractor = [
            _ConvBlock(channels[i], channels[i + 1], config.dropout_rate,
                       stream(seed, "init", f"extractor.{i}.conv"))
            for i in range(len(EXTRACTOR_CHANNELS))
        ]
        self.predictor = _Head(1, stream(seed, "init", "predictor.conv"),
                               stream(seed, "init", "predictor.out"))
        self.classifier = None
        self.grl = None
        if config.adversarial:
            self.classifier = _Head(config.n_domains,
                                    stream(seed, "init", "classifier.conv"),
                                    stream(seed, "init", "classifier.out"))
            self.grl = L.GradientReversal(config.adversary_weight)

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (INPUT_CHANNELS, INPUT_STEPS):
            raise ValueError(f"expected (batch, {INPUT_CHANNELS}, {INPUT_STEPS}), "
                             f"got {x.shape}")
        h = x
        for block in self.extractor:
            h = block.forward(h, train, rng)
        prediction = self.predictor.forward(h, train)[:, 0]
        logits = None
        if self.classifier is not None:
            logits = self.classifier.forward(self.grl.forward(h, train), train)
        self._features_shape = h.shape
        return ForwardOutput(prediction=prediction,
                             features=h.reshape(len(h), -1),
                             domain_logits=logits)

    def backward(self, grad_prediction: np.ndarray,
                 grad_domain_logits: np.ndarray | None = None):
        g_features = self.predictor.backward(np.asarray(grad_prediction)[:, None])
        if grad_domain_logits is not None:
            if self.classifier is None:
                raise ValueError("model has no domain classifier")
            g_dom = self.classifier.backward(grad_domain_logits)
            weight = self.grl.weight
            for grad in self._component_grads("classifier").values():
                grad *= weight
            g_features = g_features + self.grl.backward(g_dom)
        g = g_features
        for block in reversed(self.extractor):
            g = block.backward(g)
        return g

    # -- parameter access ---------------------------------------------------

    def _components(self):
        comps = {}
        for i, block in enumerate(self.extractor):
            comps[f"extractor.{i}.conv"] = block.conv
            comps[f"extractor.{i}.bn"] = block.bn
        comps["predictor.conv"] = self.predictor.conv
        comps["predictor.out"] = self.predictor.out
        if self.classifier is not None:
            comps["classifier.conv"] = self.classifier.conv
            comps["classifier.out"] = self.classifier.out
        return comps

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{cname}.{pname}": arr
                for cname, comp in self._components().items()
                for pname, arr in comp.parameters().items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{cname}.{pname}": arr
                for cname, comp in self._components().items()
                for pname, arr in comp.gradients().items()}

    def _component_grads(self, prefix: str) -> dict[str, np.ndarray]:
        return {name: g for name, g in self.gradients().items()
                if name.startswith(prefix)}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{cname}.{bname}": arr
                for cname, comp in self._components().items()
                for bname, arr in comp.buffers().items()}

    def zero_grads(self):
        for g in self.gradients().values():
            g.fill(0.0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays().items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, arr in self.state_arrays().items():
            arr[...] = snap[name]

    # -- surgery / persistence ----------------------------------------------

    def strip_classifier(self) -> "FcnModel":
        """Return a copy without the domain head; shared weights (and
        running stats) are preserved bit-exactly."""
        cfg = replace(self.config, adversary_weight=None, n_domains=None)
        stripped = FcnModel(cfg, self.seed)
        own = self.state_arrays()
        for name, arr in stripped.state_arrays().items():
            arr[...] = own[name]
        return stripped

    def save(self, path, extra_meta: dict | None = None):
        meta = dict(extra_meta or {})
        meta["config"] = self.config.to_json()
        meta["seed"] = self.seed
        save_arrays(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> tuple["FcnModel", dict]:
        arrays, meta = load_arrays(path)
        model = cls(ModelConfig.from_json(meta["config"]), meta["seed"])
        for name, arr in model.state_arrays().items():
            arr[...] = arrays[name]
        return model, meta


def parameter_count(model: FcnModel) -> int:
    return sum(p.size for p in model.parameters().values())


def expected_extractor_parameter_count() -> int:
    """Shape arithmetic for the three conv blocks incl. batch-norm affines."""
    total = 0
    channels = (INPUT_CHANNELS,) + EXTRACTOR_CHANNELS
    for i in range(len(EXTRACTOR_CHANNELS)):
        c_in, c_out = channels[i], channels[i + 1]
        total += c_out * c_in * EXTRACTOR_KERNEL + c_out  # conv weight + bias
        total += 2 * c_out                                # gamma + beta
    return total
