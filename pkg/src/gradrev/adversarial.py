"""Domain-adversarial training of a feature extractor / label classifier /
domain discriminator triple.

The feature extractor ``F`` feeds two heads: the label classifier ``C``
(identity logits) and the domain discriminator ``D`` (source vs target
logits).  ``D`` sits behind a gradient reversal layer, so one backward pass
gives every parameter group the gradient of its own objective:

* ``D`` descends ``L_C + L_D`` (``L_C`` does not depend on ``D``),
* ``F`` and ``C`` descend ``L_C - lambda * L_D``.

Both losses are batch means of softmax cross-entropy.  Domain label 0 is
source, 1 is target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import nn_core
from .errors import DimensionError, TrainingError, ValidationError
from .nn_core import ParameterSet

SOURCE, TARGET = 0, 1
UNLABELED = -1


@dataclass
class NetworkBundle:
    feature_extractor: ParameterSet
    label_classifier: ParameterSet
    domain_discriminator: ParameterSet
    velocity: dict[str, ParameterSet] = field(default_factory=dict)

    def __post_init__(self):
        feat = self.feature_extractor.output_dim
        if self.label_classifier.input_dim != feat or self.domain_discriminator.input_dim != feat:
            raise DimensionError(f"classifier/discriminator inputs must equal feature dim {feat}")
        if self.domain_discriminator.output_dim != 2:
            raise DimensionError("domain discriminator must output exactly 2 logits")

    @property
    def num_classes(self) -> int:
        return self.label_classifier.output_dim

    @property
    def input_dim(self) -> int:
        return self.feature_extractor.input_dim

    def copy(self) -> NetworkBundle:
        return NetworkBundle(self.feature_extractor.copy(), self.label_classifier.copy(),
                             self.domain_discriminator.copy(),
                             {k: v.copy() for k, v in self.velocity.items()})


@dataclass(frozen=True)
class NetConfig:
    """Layer widths for the three heads (input and class count come from the data)."""

    feature_dims: tuple[int, ...] = (64, 32)
    discriminator_hidden: tuple[int, ...] = (64, 64)

    @classmethod
    def reference_scale(cls) -> NetConfig:
        # 1024-d features, C = 1024-30, D = 1024-1024-1024-2
        return cls(feature_dims=(1024,), discriminator_hidden=(1024, 1024))


def build_bundle(input_dim: int, num_classes: int, net: NetConfig, rng: np.random.Generator) -> NetworkBundle:
    feat_dims = [input_dim, *net.feature_dims]
    f = nn_core.init_params(nn_core.layer_specs(feat_dims, final_activation="relu"), rng)
    c = nn_core.init_params(nn_core.layer_specs([feat_dims[-1], num_classes]), rng)
    d = nn_core.init_params(nn_core.layer_specs([feat_dims[-1], *net.discriminator_hidden, 2]), rng)
    return NetworkBundle(f, c, d)


@dataclass(frozen=True)
class AdversarialConfig:
    """Optimisation and trade-off settings.

    In ``scheduled`` mode lambda ramps as ``lambda_value * lambda_schedule(p)``
    with ``p`` the fraction of training done; in ``fixed`` mode it is
    ``lambda_value`` throughout.  ``update_scheme`` picks single-pass
    gradient reversal (``grl``) or a two-phase update where ``D`` moves first
    and ``F``/``C`` are then updated against the new ``D`` (``alternating``).

    Labeled target samples (semi-supervised modes) enter the label loss with
    weight 1 and still contribute to the domain loss as target rows.
    """

    lambda_mode: str = "scheduled"
    lambda_value: float = 1.0
    schedule_gamma: float = 10.0
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 100
    steps_per_epoch: int = 20
    update_scheme: str = "grl"
    labeled_target_fraction: float = 0.25

    def __post_init__(self):
        if self.lambda_mode not in ("fixed", "scheduled"):
            raise ValidationError(f"lambda_mode must be 'fixed' or 'scheduled', got {self.lambda_mode!r}")
        if self.lambda_value < 0:
            raise ValidationError("lambda_value must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValidationError("batch_size must be even (half source, half target)")
        if self.update_scheme not in ("grl", "alternating"):
            raise ValidationError(f"update_scheme must be 'grl' or 'alternating', got {self.update_scheme!r}")
        if not 0.0 <= self.labeled_target_fraction <= 1.0:
            raise ValidationError("labeled_target_fraction must be in [0, 1]")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValidationError("epochs must be >= 0 and steps_per_epoch >= 1")

    def lambda_at(self, progress: float) -> float:
        if self.lambda_mode == "fixed":
            return float(self.lambda_value)
        return float(self.lambda_value) * lambda_schedule(progress, self.schedule_gamma)


@dataclass(frozen=True)
class LossBreakdown:
    label_loss: float
    domain_loss: float
    combined_fc_objective: float
    lambda_used: float

    @classmethod
    def from_losses(cls, label_loss: float, domain_loss: float, lam: float) -> LossBreakdown:
        return cls(label_loss, domain_loss, label_loss - lam * domain_loss, lam)

    def as_dict(self) -> dict:
        return {"label_loss": self.label_loss, "domain_loss": self.domain_loss,
                "combined_fc_objective": self.combined_fc_objective, "lambda_used": self.lambda_used}


@dataclass(frozen=True)
class Batch:
    """Rows of inputs with integer labels; ``UNLABELED`` (-1) marks a missing label."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def of(cls, x, y=None) -> Batch:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.full(x.shape[0], UNLABELED, dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise DimensionError(f"{x.shape[0]} rows but {y.shape} labels")
        return cls(x, y)

    def __len__(self) -> int:
        return self.x.shape[0]


def grl_forward(features: np.ndarray) -> np.ndarray:
    return np.array(features, dtype=np.float64, copy=True)


def grl_backward(upstream_grad: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    return -lam * np.asarray(upstream_grad, dtype=np.float64)


def lambda_schedule(progress: float, gamma: float = 10.0) -> float:
    """``2 / (1 + exp(-gamma * progress)) - 1``, rising from 0 towards 1."""
    if not 0.0 <= progress <= 1.0:
        raise ValidationError(f"progress must be in [0, 1], got {progress}")
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0


@dataclass
class Gradients:
    feature_extractor: ParameterSet
    label_classifier: ParameterSet
    domain_discriminator: ParameterSet
    breakdown: LossBreakdown
    # d L_D / d features as D sees it, and what the GRL passes on to F
    domain_feature_grad: np.ndarray
    reversed_feature_grad: np.ndarray


def compute_gradients(bundle: NetworkBundle, source: Batch, target: Batch, lam: float,
                      reverse_fn=grl_backward) -> Gradients:
    """Gradients of both adversarial objectives for one half-source/half-target batch.

    ``reverse_fn`` stands in for :func:`grl_backward`; tests swap it to inject faults.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValidationError("source and target batches must be non-empty")
    if np.any(source.y < 0):
        raise ValidationError("every source sample needs a class label")
    F, C, D = bundle.feature_extractor, bundle.label_classifier, bundle.domain_discriminator
    ns = len(source)

    fs, trace_s = nn_core.forward(F, source.x)
    ft, trace_t = nn_core.forward(F, target.x)

    labeled_t = target.y >= 0
    if labeled_t.any():
        feats_lab = np.vstack([fs, ft[labeled_t]])
        y_lab = np.concatenate([source.y, target.y[labeled_t]])
    else:
        feats_lab, y_lab = fs, source.y
    logits, trace_c = nn_core.forward(C, feats_lab)
    label_loss, dlogits = nn_core.softmax_xent(logits, y_lab)
    grad_c, dfeat_lab = nn_core.backward(C, trace_c, dlogits)
    dfs = dfeat_lab[:ns]
    dft = np.zeros_like(ft)
    dft[labeled_t] = dfeat_lab[ns:]

    dom_in = grl_forward(np.vstack([fs, ft]))
    dom_y = np.concatenate([np.full(ns, SOURCE), np.full(len(target), TARGET)])
    dlog, trace_d = nn_core.forward(D, dom_in)
    domain_loss, ddlog = nn_core.softmax_xent(dlog, dom_y)
    grad_d, dfeat_dom = nn_core.backward(D, trace_d, ddlog)
    reversed_grad = reverse_fn(dfeat_dom, lam)

    grad_fs, _ = nn_core.backward(F, trace_s, dfs + reversed_grad[:ns])
    grad_ft, _ = nn_core.backward(F, trace_t, dft + reversed_grad[ns:])
    breakdown = LossBreakdown.from_losses(label_loss, domain_loss, lam)
    if not (math.isfinite(label_loss) and math.isfinite(domain_loss)):
        raise TrainingError(f"non-finite loss: {breakdown}")
    return Gradients(grad_fs + grad_ft, grad_c, grad_d, breakdown, dfeat_dom, reversed_grad)


def _update(bundle: NetworkBundle, name: str, grads: ParameterSet, config: AdversarialConfig) -> None:
    attr = {"F": "feature_extractor", "C": "label_classifier", "D": "domain_discriminator"}[name]
    params, vel = nn_core.sgd_step(getattr(bundle, attr), grads, config.lr, config.momentum,
                                   bundle.velocity.get(name))
    setattr(bundle, attr, params)
    bundle.velocity[name] = vel


def dan_train_step(bundle: NetworkBundle, source: Batch, target: Batch, config: AdversarialConfig,
                   progress: float) -> tuple[NetworkBundle, LossBreakdown]:
    """One adversarial update of all three parameter groups; returns a new bundle."""
    lam = config.lambda_at(progress)
    grads = compute_gradients(bundle, source, target, lam)
    new = bundle.copy()
    _update(new, "D", grads.domain_discriminator, config)
    if config.update_scheme == "alternating":
        grads = replace(compute_gradients(new, source, target, lam), breakdown=grads.breakdown)
    _update(new, "F", grads.feature_extractor, config)
    _update(new, "C", grads.label_classifier, config)
    return new, grads.breakdown


def source_only_step(bundle: NetworkBundle, labeled: Batch,
                     config: AdversarialConfig) -> tuple[NetworkBundle, LossBreakdown]:
    """Plain supervised update of F and C; the discriminator is left untouched."""
    if len(labeled) == 0:
        raise ValidationError("empty batch")
    if np.any(labeled.y < 0):
        raise ValidationError("source-only training needs labels on every sample")
    F, C = bundle.feature_extractor, bundle.label_classifier
    feats, trace_f = nn_core.forward(F, labeled.x)
    logits, trace_c = nn_core.forward(C, feats)
    loss, dlogits = nn_core.softmax_xent(logits, labeled.y)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite label loss {loss}")
    grad_c, dfeat = nn_core.backward(C, trace_c, dlogits)
    grad_f, _ = nn_core.backward(F, trace_f, dfeat)
    new = bundle.copy()
    _update(new, "F", grad_f, config)
    _update(new, "C", grad_c, config)
    return new, LossBreakdown.from_losses(loss, 0.0, 0.0)


def class_logits(bundle: NetworkBundle, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    feats, _ = nn_core.forward(bundle.feature_extractor, x)
    return nn_core.forward(bundle.label_classifier, feats)[0]


def predict_labels(bundle: NetworkBundle, x) -> np.ndarray:
    return np.argmax(class_logits(bundle, x), axis=1)


def predict_domains(bundle: NetworkBundle, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    feats, _ = nn_core.forward(bundle.feature_extractor, x)
    return np.argmax(nn_core.forward(bundle.domain_discriminator, feats)[0], axis=1)


def domain_confusion(bundle: NetworkBundle, source_x, target_x) -> float:
    """Discriminator accuracy on source vs target, each domain weighted equally.

    Values near 0.5 mean the features carry no usable domain signal.
    """
    source_x = np.asarray(source_x, dtype=np.float64)
    target_x = np.asarray(target_x, dtype=np.float64)
    if len(source_x) == 0 or len(target_x) == 0:
        raise ValidationError("domain_confusion needs non-empty source and target sets")
    acc_s = float(np.mean(predict_domains(bundle, source_x) == SOURCE))
    acc_t = float(np.mean(predict_domains(bundle, target_x) == TARGET))
    return 0.5 * (acc_s + acc_t)


def _forward_as(params: nn_core.ParameterSet, x: np.ndarray, dtype) -> np.ndarray:
    h = np.asarray(x, dtype=dtype)
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        h = h @ w.astype(dtype) + b.astype(dtype)
        if spec.activation == "relu":
            h = np.maximum(h, 0)
    return h


def _mean_xent_as(logits: np.ndarray, labels: np.ndarray):
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return (lse - logits[np.arange(len(labels)), labels]).mean()


def adversarial_objectives(bundle: NetworkBundle, source: Batch, target: Batch,
                           lam: float, dtype=np.float64) -> tuple[float, float]:
    """Forward-only values of the D objective and the F/C objective.

    Evaluated independently of the training code path.  ``dtype=np.longdouble``
    makes a finite-difference oracle whose rounding stays far below the
    truncation error of a 1e-5 step.
    """
    F, C, D = bundle.feature_extractor, bundle.label_classifier, bundle.domain_discriminator
    fs = _forward_as(F, source.x, dtype)
    ft = _forward_as(F, target.x, dtype)
    labeled_t = target.y >= 0
    feats = np.vstack([fs, ft[labeled_t]])
    y = np.concatenate([source.y, target.y[labeled_t]])
    label_loss = _mean_xent_as(_forward_as(C, feats, dtype), y)
    dom_y = np.concatenate([np.full(len(source), SOURCE), np.full(len(target), TARGET)])
    domain_loss = _mean_xent_as(_forward_as(D, np.vstack([fs, ft]), dtype), dom_y)
    lam = np.asarray(lam, dtype=dtype)
    return label_loss + domain_loss, label_loss - lam * domain_loss


def parameter_groups(bundle: NetworkBundle) -> Sequence[tuple[str, ParameterSet]]:
    return (("F", bundle.feature_extractor), ("C", bundle.label_classifier),
            ("D", bundle.domain_discriminator))
