"""Acceptance gate: ten criteria, each at its stated tolerance and time budget.

Every criterion prints one ``PASS``/``FAIL`` line, both inline and in the
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradrev import adversarial as adv
from gradrev import cli, experiments as ex, nn_core as nc, pose_synth as ps

Mode = ex.ExperimentMode
MODEL = ps.load_model()


class Criterion:
    """Collects named checks, then reports one line and fails on any miss."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.failures = []
        self.notes = []
        self.start = time.perf_counter()

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)

    def note(self, text):
        self.notes.append(text)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        self.check(elapsed < self.budget, f"took {elapsed:.1f}s, budget {self.budget}s")
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.notes + self.failures)
        line = f"[{status}] {self.number:>2}. {self.title} ({elapsed:.2f}s) {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert not self.failures, line


def test_c01_gradient_correctness():
    c = Criterion(1, "gradient correctness", 10)
    rng = np.random.default_rng(0)
    bundle = adv.build_bundle(8, 4, adv.NetConfig((16, 8), (8,)), rng)
    source = adv.Batch.of(rng.normal(size=(6, 8)), rng.integers(0, 4, size=6))
    target = adv.Batch.of(rng.normal(size=(6, 8)))
    worst = 0.0
    for lam in (0.0, 0.5, 1.0):
        grads = adv.compute_gradients(bundle, source, target, lam)
        analytic = {"F": grads.feature_extractor, "C": grads.label_classifier, "D": grads.domain_discriminator}
        for name, params in adv.parameter_groups(bundle):
            which = 0 if name == "D" else 1
            numeric = nc.numeric_gradient(
                lambda: adv.adversarial_objectives(bundle, source, target, lam, np.longdouble)[which],
                params.arrays(), step=1e-5)
            for a, n in zip(analytic[name].arrays(), numeric):
                err = float(nc.relative_error(a, n).max())
                worst = max(worst, err)
                c.check(err < 1e-4, f"{name} at lambda={lam}: rel err {err:.2e}")
    # finite differences are only meaningful away from relu kinks
    feats = nc.forward(bundle.feature_extractor, np.vstack([source.x, target.x]))
    pre = list(feats[1].pre_activations) + list(nc.forward(bundle.domain_discriminator, feats[0])[1].pre_activations)
    margin = min(float(np.abs(z).min()) for z in pre)
    c.note(f"max rel err {worst:.2e}, closest relu kink {margin:.1e}")
    c.finish()


def test_c02_grl_exactness():
    c = Criterion(2, "GRL exactness", 1)
    g = np.random.default_rng(1).normal(size=(64, 32)) * np.logspace(-300, 300, 32)
    c.check(adv.grl_forward(g).tobytes() == g.tobytes(), "forward not bit-exact")
    for lam in (0.0, 0.25, 1.0, 2.0):
        c.check(adv.grl_backward(g, lam).tobytes() == (-lam * g).tobytes(), f"backward differs at lambda={lam}")
    c.finish()


def test_c03_lambda_zero_decoupling():
    c = Criterion(3, "lambda=0 decoupling", 5)
    rng = np.random.default_rng(2)
    bundle = adv.build_bundle(8, 4, adv.NetConfig((16, 8), (8,)), rng)
    cfg = adv.AdversarialConfig(lambda_mode="fixed", lambda_value=0.0)
    for step in range(3):
        source = adv.Batch.of(rng.normal(size=(8, 8)), rng.integers(0, 4, size=8))
        target = adv.Batch.of(rng.normal(size=(8, 8)) + 1.0)
        plain, _ = adv.source_only_step(bundle, source, cfg)
        bundle, _ = adv.dan_train_step(bundle, source, target, cfg, step / 2)
        for name in ("feature_extractor", "label_classifier"):
            same = all(a.tobytes() == b.tobytes() for a, b in
                       zip(getattr(plain, name).arrays(), getattr(bundle, name).arrays()))
            c.check(same, f"{name} differs at step {step}")
    c.finish()


def test_c04_camera_fit_oracle():
    c = Criterion(4, "camera-fit oracle", 10)
    rng = np.random.default_rng(3)
    worst_entry, worst_rms = 0.0, 0.0
    for _ in range(100):
        true = ps.AffineCamera.from_parts(rng.normal(size=(2, 3)), rng.uniform(20, 80, size=2))
        camera, rms = ps.fit_camera(ps.project(true, MODEL), MODEL)
        worst_entry = max(worst_entry, float(np.abs(camera.matrix - true.matrix).max()))
        worst_rms = max(worst_rms, rms)
    c.check(worst_entry <= 1e-8, f"entry error {worst_entry:.2e}")
    c.check(worst_rms < 1e-9, f"rms {worst_rms:.2e}")
    noisy = []
    for seed in range(100):
        r = np.random.default_rng(seed)
        true = ps.AffineCamera.from_parts(r.normal(size=(2, 3)), r.uniform(20, 80, size=2))
        noisy.append(ps.fit_camera(ps.project(true, MODEL) + r.normal(scale=0.5, size=(9, 2)), MODEL)[1])
    median = float(np.median(noisy))
    c.check(0.2 <= median <= 1.5, f"noisy median residual {median:.3f}")
    c.note(f"max entry err {worst_entry:.1e}, noisy median {median:.3f}px")
    c.finish()


def test_c05_rotation_projection_invariants():
    c = Criterion(5, "rotation/projection invariants", 5)
    rng = np.random.default_rng(4)
    worst_orth, worst_det = 0.0, 0.0
    for yaw, pitch, roll in rng.uniform(-90, 90, size=(1000, 3)):
        r = ps.rotation_matrix(ps.PoseSpec(yaw, pitch, roll))
        worst_orth = max(worst_orth, float(np.abs(r.T @ r - np.eye(3)).max()))
        worst_det = max(worst_det, abs(float(np.linalg.det(r)) - 1.0))
    c.check(worst_orth < 1e-12, f"orthogonality {worst_orth:.2e}")
    c.check(worst_det < 1e-12, f"determinant {worst_det:.2e}")
    c.check(ps.rotate_model(MODEL, ps.PoseSpec()).tobytes() == MODEL.tobytes(), "zero pose moves the model")
    img, lm = ps.face_test_card(96)
    view = ps.synthesize_views(img, lm, MODEL, [ps.PoseSpec()]).views[0]
    camera, _ = ps.fit_camera(lm, MODEL)
    c.check(view.landmarks.tobytes() == ps.project(camera, MODEL).tobytes(), "zero-pose landmarks differ")
    c.check(np.abs(view.landmarks - lm).max() < 1e-9, "zero-pose landmarks drift from the input")
    c.finish()


def test_c06_synthesis_round_trip():
    c = Criterion(6, "synthesis round trip", 10)
    img, lm = ps.face_test_card(96)
    diff = float(np.abs(ps.synthesize_views(img, lm, MODEL, [ps.PoseSpec()]).views[0].image - img).max())
    c.check(diff <= 1e-9, f"zero-pose pixel diff {diff:.2e}")
    rng = np.random.default_rng(5)
    h, w = 48, 56
    src = np.array([(x, y) for y in np.linspace(0, h - 1, 4) for x in np.linspace(0, w - 1, 4)])
    noise = rng.random((h, w))
    ident = ps.warp_piecewise_affine(noise, src, src).image
    c.check(np.abs(ident - noise).max() <= 1e-12, "identity warp differs")
    shifted = ps.warp_piecewise_affine(noise, src, src + [4.0, 3.0]).image
    err = float(np.abs(shifted[8:-8, 8:-8] - noise[5:-11, 4:-12]).max())
    c.check(err <= 1e-12, f"integer translation error {err:.2e}")
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    ramp = (xx + 2.0 * yy) / 200.0
    shifted = ps.warp_piecewise_affine(ramp, src, src + [1.5, -2.25]).image
    oracle = ((xx - 1.5) + 2.0 * (yy + 2.25)) / 200.0
    err2 = float(np.abs(shifted[8:-8, 8:-8] - oracle[8:-8, 8:-8]).max())
    c.check(err2 <= 1e-12, f"sub-pixel translation error {err2:.2e}")
    c.note(f"zero-pose diff {diff:.1e}, translation err {max(err, err2):.1e}")
    c.finish()


@pytest.fixture(scope="module")
def trend_matrix():
    start = time.perf_counter()
    result = ex.run_matrix(ex.default_sspp_toy(0), seeds=[0, 1, 2, 3, 4])
    return result, time.perf_counter() - start


def _means(result):
    return {m: result.mean(m) for m in Mode}


def test_c07_adaptation_trend(trend_matrix):
    result, elapsed = trend_matrix
    c = Criterion(7, "adaptation trend", 300)
    c.start -= elapsed
    c.check(not result.failures, f"failed cells {result.failures}")
    m = _means(result)
    c.check(m[Mode.SSPP_DAN] > m[Mode.SourceOnly] + 0.10,
            f"SSPP_DAN {m[Mode.SSPP_DAN]:.3f} vs SourceOnly {m[Mode.SourceOnly]:.3f}")
    c.check(m[Mode.SSPP_DAN] > m[Mode.DAN] + 0.05, f"SSPP_DAN {m[Mode.SSPP_DAN]:.3f} vs DAN {m[Mode.DAN]:.3f}")
    c.note(" ".join(f"{mode.value}={m[mode]:.3f}" for mode in Mode))
    c.finish()


def test_c08_semi_supervised_and_bound(trend_matrix):
    result, _ = trend_matrix
    c = Criterion(8, "semi-supervised and upper bound", 300)
    m = _means(result)
    c.check(m[Mode.SemiSSPP_DAN] >= m[Mode.SSPP_DAN] - 0.02,
            f"SemiSSPP_DAN {m[Mode.SemiSSPP_DAN]:.3f} vs SSPP_DAN {m[Mode.SSPP_DAN]:.3f}")
    for mode in Mode:
        c.check(m[Mode.TrainOnTarget] >= m[mode] - 0.02, f"TrainOnTarget below {mode.value}")
    c.note(f"SemiSSPP_DAN={m[Mode.SemiSSPP_DAN]:.3f} SSPP_DAN={m[Mode.SSPP_DAN]:.3f} "
           f"TrainOnTarget={m[Mode.TrainOnTarget]:.3f}")
    c.finish()


def test_c09_cli_determinism(tmp_path, capsys):
    c = Criterion(9, "CLI determinism", 60)
    fast = ["--epochs", "10"]
    for run in ("a", "b"):
        d = tmp_path / run
        c.check(cli.main(["gen-data", "--seed", "7", "--out", str(d / "data")]) == 0, "gen-data failed")
        c.check(cli.main(["train", "--data", str(d / "data"), "--mode", "sspp-dan", "--seed", "1",
                          "--out", str(d / "train"), *fast]) == 0, "train failed")
        c.check(cli.main(["matrix", "--data", str(d / "data"), "--seeds", "1,2", "--out", str(d / "matrix"),
                          *fast]) == 0, "matrix failed")
        c.check(cli.main(["eval", "--data", str(d / "data"), "--network", str(d / "train" / "network.npz"),
                          "--out", str(d / "eval")]) == 0, "eval failed")
    capsys.readouterr()
    for rel in ("data/manifest.csv", "data/dataset.csv", "train/report.csv", "matrix/report.csv",
                "eval/eval.csv"):
        c.check((tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), f"{rel} differs")
    c.finish()


def test_c10_domain_confusion_zero_shift():
    c = Criterion(10, "domain confusion on zero shift", 120)
    bundle = ex.zero_shift_control(0)
    values = [ex.run_experiment(Mode.DAN, bundle, seed=s).domain_confusion for s in range(3)]
    for seed, v in enumerate(values):
        c.check(0.45 <= v <= 0.60, f"seed {seed}: domain_confusion {v:.3f}")
    c.note("domain_confusion " + ", ".join(f"{v:.3f}" for v in values))
    c.finish()
