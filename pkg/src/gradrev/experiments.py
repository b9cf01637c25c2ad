"""The seven-model ablation matrix: training, evaluation and reports.

Each mode trains the same F + C architecture on its own combination of
sets; only the DAN family attaches the discriminator through the gradient
reversal layer.  Accuracies from the original EK-LFH experiments ride
along in every report for comparison; they are not expected to be met by
the desk-scale toy.
"""

from __future__ import annotations

import csv
import enum
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import adversarial as adv
from .adversarial import AdversarialConfig, Batch, LossBreakdown, NetConfig, NetworkBundle
from .datasets import SplitBundle, Sample, ToyShiftConfig, attach_virtual, gen_toy_samples, \
    build_splits, toy_virtual_views
from .errors import ConfigurationError, ValidationError

PAPER_CITATION = "EK-LFH recognition rate (%), VGG-Face backbone"


class ExperimentMode(enum.Enum):
    SourceOnly = "source-only"
    SourceOnlyPlusVirtual = "source-only-virtual"
    DAN = "dan"
    SSPP_DAN = "sspp-dan"
    SemiDAN = "semi-dan"
    SemiSSPP_DAN = "semi-sspp-dan"
    TrainOnTarget = "train-on-target"

    @classmethod
    def parse(cls, text: str) -> ExperimentMode:
        for mode in cls:
            if text in (mode.value, mode.name):
                return mode
        valid = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"unknown mode {text!r}; valid modes: {valid}")

    @property
    def training_sets(self) -> tuple[str, ...]:
        return _TRAINING_SETS[self]

    @property
    def formula(self) -> str:
        return _FORMULA[self]

    @property
    def adversarial(self) -> bool:
        return "T" in self.training_sets

    @property
    def paper_reference(self) -> float:
        return _PAPER_ACCURACY[self]


_TRAINING_SETS = {
    ExperimentMode.SourceOnly: ("S",),
    ExperimentMode.SourceOnlyPlusVirtual: ("S", "S_v"),
    ExperimentMode.DAN: ("S", "T"),
    ExperimentMode.SSPP_DAN: ("S", "S_v", "T"),
    ExperimentMode.SemiDAN: ("S", "T", "T_l"),
    ExperimentMode.SemiSSPP_DAN: ("S", "S_v", "T", "T_l"),
    ExperimentMode.TrainOnTarget: ("target_labeled",),
}
_FORMULA = {
    ExperimentMode.SourceOnly: "S",
    ExperimentMode.SourceOnlyPlusVirtual: "S + S_v",
    ExperimentMode.DAN: "S + T",
    ExperimentMode.SSPP_DAN: "S + S_v + T",
    ExperimentMode.SemiDAN: "S + T + T_l",
    ExperimentMode.SemiSSPP_DAN: "S + S_v + T + T_l",
    ExperimentMode.TrainOnTarget: "T_l (all target labels)",
}
_PAPER_ACCURACY = {
    ExperimentMode.SourceOnly: 39.22,
    ExperimentMode.SourceOnlyPlusVirtual: 37.15,
    ExperimentMode.DAN: 31.11,
    ExperimentMode.SSPP_DAN: 58.53,
    ExperimentMode.SemiDAN: 67.28,
    ExperimentMode.SemiSSPP_DAN: 72.08,
    ExperimentMode.TrainOnTarget: 88.31,
}


class SplitView:
    """Read access to the sets a mode is allowed to train on, and nothing else."""

    def __init__(self, bundle: SplitBundle, mode: ExperimentMode):
        self._bundle = bundle
        self._mode = mode
        for name in mode.training_sets:
            if not getattr(bundle, name):
                raise ConfigurationError(f"mode {mode.value} needs a non-empty {name} set")

    def __getattr__(self, name: str) -> list[Sample]:
        if name.startswith("_"):
            raise AttributeError(name)
        if name not in self._mode.training_sets:
            raise ConfigurationError(f"mode {self._mode.value} may not read the {name} set")
        return getattr(self._bundle, name)


@dataclass
class ExperimentReport:
    mode: ExperimentMode
    seed: int
    epochs: int
    target_test_accuracy: float
    domain_confusion: float
    loss_history: list[LossBreakdown] = field(default_factory=list)
    paper_reference_accuracy: float | None = None
    paper_reference_citation: str = PAPER_CITATION
    network: NetworkBundle | None = field(default=None, repr=False, compare=False)

    def csv_row(self) -> list[str]:
        return [self.mode.value, str(self.seed), repr(self.target_test_accuracy), repr(self.domain_confusion),
                "" if self.paper_reference_accuracy is None else f"{self.paper_reference_accuracy:.2f}"]


REPORT_COLUMNS = ["mode", "seed", "accuracy", "domain_confusion", "paper_reference"]


def stack_inputs(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([np.asarray(s.input, dtype=np.float64).reshape(-1) for s in samples])


def _labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([-1 if s.class_label is None else s.class_label for s in samples], dtype=np.int64)


def evaluate(network: NetworkBundle, test: Sequence[Sample]) -> float:
    """Fraction of test samples whose argmax class prediction is correct."""
    if not test:
        raise ValidationError("test set is empty")
    if any(s.class_label is None for s in test):
        raise ValidationError("every test sample needs a class label")
    pred = adv.predict_labels(network, stack_inputs(test))
    return float(np.mean(pred == _labels(test)))


def _draw(rng: np.random.Generator, x: np.ndarray, y: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.integers(0, len(x), size=n)
    return x[idx], y[idx]


def run_experiment(mode: ExperimentMode, bundle: SplitBundle, net_config: NetConfig | None = None,
                   adv_config: AdversarialConfig | None = None, seed: int = 0,
                   num_classes: int | None = None) -> ExperimentReport:
    """Train one mode on its sets and score it on ``bundle.test``.

    Every step draws ``batch_size / 2`` labeled rows (with replacement) from the
    mode's labeled pool; adversarial modes add ``batch_size / 2`` target rows,
    of which a ``labeled_target_fraction`` share comes from ``T_l`` in the
    semi-supervised modes.
    """
    net_config = net_config or NetConfig()
    adv_config = adv_config or AdversarialConfig()
    view = SplitView(bundle, mode)
    if not bundle.test:
        raise ConfigurationError("bundle has no test set")
    rng = np.random.default_rng(seed)
    sets = mode.training_sets
    if mode is ExperimentMode.TrainOnTarget:
        labeled = list(view.target_labeled)
    else:
        labeled = list(view.S) + (list(view.S_v) if "S_v" in sets else [])
    xs, ys = stack_inputs(labeled), _labels(labeled)
    num_classes = num_classes or bundle.num_classes
    network = adv.build_bundle(xs.shape[1], num_classes, net_config, rng)

    half = adv_config.batch_size // 2
    if mode.adversarial:
        xt, yt = stack_inputs(view.T), _labels(view.T)
        n_lab = int(round(adv_config.labeled_target_fraction * half)) if "T_l" in sets else 0
        if n_lab:
            xtl, ytl = stack_inputs(view.T_l), _labels(view.T_l)

    total = adv_config.epochs * adv_config.steps_per_epoch
    history: list[LossBreakdown] = []
    for step in range(total):
        progress = step / max(total - 1, 1)
        bx, by = _draw(rng, xs, ys, half)
        if mode.adversarial:
            tx, ty = _draw(rng, xt, yt, half - n_lab)
            if n_lab:
                lx, ly = _draw(rng, xtl, ytl, n_lab)
                tx, ty = np.vstack([tx, lx]), np.concatenate([ty, ly])
            network, losses = adv.dan_train_step(network, Batch(bx, by), Batch(tx, ty), adv_config, progress)
        else:
            network, losses = adv.source_only_step(network, Batch(bx, by), adv_config)
        history.append(losses)

    accuracy = evaluate(network, bundle.test)
    confusion = adv.domain_confusion(network, xs if mode is not ExperimentMode.TrainOnTarget
                                     else stack_inputs(bundle.S), stack_inputs(bundle.test))
    return ExperimentReport(mode, seed, adv_config.epochs, accuracy, confusion, history,
                            mode.paper_reference, network=network)


@dataclass
class ModeSummary:
    mode: ExperimentMode
    mean: float
    std: float
    n: int


@dataclass
class MatrixResult:
    reports: list[ExperimentReport]
    summary: list[ModeSummary]
    failures: dict[tuple[str, int], str] = field(default_factory=dict)

    def mean(self, mode: ExperimentMode) -> float:
        for row in self.summary:
            if row.mode is mode:
                return row.mean
        raise KeyError(mode)


def summarize(reports: Sequence[ExperimentReport], modes: Sequence[ExperimentMode]) -> list[ModeSummary]:
    out = []
    for mode in modes:
        accs = [r.target_test_accuracy for r in reports if r.mode is mode]
        if not accs:
            continue
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        out.append(ModeSummary(mode, float(np.mean(accs)), std, len(accs)))
    return out


def _worker_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("GRADREV_THREADS", "")
    return max(1, int(env)) if env.strip().isdigit() else 1


def run_matrix(bundle: SplitBundle, seeds: Sequence[int], modes: Sequence[ExperimentMode] = tuple(ExperimentMode),
               net_config: NetConfig | None = None, adv_config: AdversarialConfig | None = None,
               threads: int | None = None) -> MatrixResult:
    """One report per (mode, seed), in mode order then seed order.

    A failing cell is recorded in ``failures`` and the rest still run.
    ``GRADREV_THREADS`` (or ``threads``) caps how many cells run at once.
    """
    if not seeds:
        raise ValidationError("run_matrix needs at least one seed")
    modes = sorted(set(modes), key=list(ExperimentMode).index)
    cells = [(m, s) for m in modes for s in seeds]
    num_classes = bundle.num_classes

    def run(cell):
        mode, seed = cell
        try:
            return run_experiment(mode, bundle, net_config, adv_config, seed, num_classes)
        except Exception as exc:  # recorded per cell; the matrix keeps going
            return exc

    workers = _worker_count(threads)
    if workers == 1:
        results = [run(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cells))
    reports, failures = [], {}
    for (mode, seed), res in zip(cells, results):
        if isinstance(res, Exception):
            failures[(mode.value, seed)] = f"{type(res).__name__}: {res}"
        else:
            reports.append(res)
    return MatrixResult(reports, summarize(reports, modes), failures)


def write_report_csv(reports: Sequence[ExperimentReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow(r.csv_row())


def format_table(summary: Sequence[ModeSummary]) -> str:
    """Aligned text table: model, training set, toy accuracy, reference accuracy."""
    header = ("Model", "Training set", "Accuracy (%)", "Reference (%)")
    rows = [header]
    for row in summary:
        acc = f"{100 * row.mean:.2f}" + (f" ± {100 * row.std:.2f}" if row.n > 1 else "")
        rows.append((row.mode.value, row.mode.formula, acc, f"{row.mode.paper_reference:.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_loss_log(reports: Sequence[ExperimentReport], path) -> None:
    """JSON lines: one record per training step."""
    with open(path, "w") as fh:
        for r in reports:
            for step, losses in enumerate(r.loss_history):
                fh.write(json.dumps({"mode": r.mode.value, "seed": r.seed, "step": step, **losses.as_dict()},
                                    sort_keys=True) + "\n")


def default_sspp_toy(seed: int = 0, k_labels_per_class: int = 3, test_fraction: float = 0.33,
                     **overrides) -> SplitBundle:
    """The reference toy: 10 classes, one source sample each plus six pose views,
    200 target samples per class shifted by 35 degrees with noise 0.3."""
    config = ToyShiftConfig(seed=seed, **overrides)
    bundle = build_splits(gen_toy_samples(config), k_labels_per_class, test_fraction, seed)
    return attach_virtual(bundle, toy_virtual_views(bundle.S))


def zero_shift_control(seed: int = 0, samples_per_class_source: int = 200) -> SplitBundle:
    """Source and target from one distribution: no rotation, noise or smoothing."""
    config = ToyShiftConfig(samples_per_class_source=samples_per_class_source, shift_rotation=0.0,
                            noise_sigma=0.0, blur_kernel_width=1, seed=seed)
    return build_splits(gen_toy_samples(config), 3, 0.33, seed)
