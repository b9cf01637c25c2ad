"""Command line for gradrev: gen-data, synth, train, matrix, eval, gradcheck.

Exit codes: 0 success, 1 runtime or check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import adversarial as adv
from . import datasets, experiments, formats, nn_core, pose_synth
from .config import SCHEMA, CliConfig, load_config
from .errors import GradrevError
from .nn_core import LayerSpec, ParameterSet

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DATASET_FILE, MANIFEST_FILE, CONFIG_FILE = "dataset.csv", "manifest.csv", "config.ini"


class UsageError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser, sections) -> None:
    for section in sections:
        group = parser.add_argument_group(f"[{section}] settings")
        for key, (default, _, help_text) in SCHEMA[section].items():
            group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE",
                               help=f"{help_text} (default: {default})")


def _common(parser: argparse.ArgumentParser, out_required: bool) -> None:
    parser.add_argument("--config", help="key = value config file with sections")
    parser.add_argument("--out", required=out_required, help="output directory")
    parser.add_argument("--verbose", action="store_true", help="extra logging (per-step loss log for training)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradrev", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a seeded two-domain toy dataset and split manifest")
    _common(p, True)
    _add_config_flags(p, ["run", "data"])

    p = sub.add_parser("synth", help="render virtual pose views of a gallery of PGM images")
    _common(p, True)
    p.add_argument("--gallery", required=True, help="directory of gallery .pgm images")
    p.add_argument("--landmarks", required=True, help="landmark CSV: image_name, x1, y1, ..., x9, y9")
    _add_config_flags(p, ["synth"])

    for name, help_text in (("train", "train one mode and report target accuracy"),
                            ("matrix", "run every mode over several seeds")):
        p = sub.add_parser(name, help=help_text)
        _common(p, True)
        p.add_argument("--data", required=True, help="gen-data output directory or PGM dataset root")
        if name == "train":
            p.add_argument("--mode", required=True, help="one of: " + ", ".join(m.value for m in experiments.ExperimentMode))
        else:
            p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated training seeds")
            p.add_argument("--modes", default=None, help="comma-separated subset of modes (default: all)")
        _add_config_flags(p, ["run", "data", "network", "adversarial"])

    p = sub.add_parser("eval", help="score a saved network on a dataset's test split")
    _common(p, False)
    p.add_argument("--data", required=True)
    p.add_argument("--network", required=True, help="network.npz written by train")
    _add_config_flags(p, ["run", "data"])

    p = sub.add_parser("gradcheck", help="finite-difference check of every adversarial gradient path")
    _common(p, False)
    p.add_argument("--corrupt", choices=["none", "grl-sign"], default="none",
                   help="inject a fault to confirm the check catches it")
    _add_config_flags(p, ["run"])
    return parser


def _config_from_args(args) -> CliConfig:
    overrides = {k: getattr(args, k) for k in vars(args) if k in {k2 for s in SCHEMA.values() for k2 in s}}
    try:
        return load_config(args.config, overrides)
    except GradrevError as exc:
        raise UsageError(str(exc)) from None


def _prepare_out(args, cfg: CliConfig) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_FILE).write_text(cfg.to_text())
    except OSError as exc:
        raise GradrevError(f"cannot write to {out}: {exc}") from None
    return out


def load_bundle(data_dir, cfg: CliConfig) -> datasets.SplitBundle:
    """A gen-data directory (dataset.csv + manifest.csv) or an image dataset root."""
    root = Path(data_dir)
    if (root / DATASET_FILE).exists():
        samples = datasets.read_feature_samples(root / DATASET_FILE)
        return datasets.bundle_from_manifest(samples, datasets.read_manifest(root / MANIFEST_FILE))
    samples = datasets.load_image_dataset(root)
    return datasets.build_splits(samples, cfg.get("k_labels"), cfg.get("test_fraction"), cfg.get("seed"))


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    out = _prepare_out(args, cfg)
    samples = datasets.gen_toy_samples(cfg.toy_config())
    bundle = datasets.build_splits(samples, cfg.get("k_labels"), cfg.get("test_fraction"), cfg.get("seed"))
    if cfg.get("virtual"):
        bundle = datasets.attach_virtual(bundle, datasets.toy_virtual_views(bundle.S, cfg.get("poses")))
    datasets.write_feature_samples([*samples, *bundle.S_v], out / DATASET_FILE)
    datasets.write_manifest(bundle, out / MANIFEST_FILE)
    print(f"seed: {cfg.get('seed')}")
    print("counts: " + ", ".join(f"{r}={len(getattr(bundle, r))}" for r in datasets.ROLES))
    return EXIT_OK


def _view_name(stem: str, pose: pose_synth.PoseSpec) -> str:
    name = f"{stem}_yaw{pose.yaw:g}_pitch{pose.pitch:g}"
    return name + (f"_roll{pose.roll:g}" if pose.roll else "") + ".pgm"


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    out = _prepare_out(args, cfg)
    model = pose_synth.load_model(cfg.get("model") or None)
    landmarks = formats.read_landmark_csv(args.landmarks)
    gallery = sorted(Path(args.gallery).glob("*.pgm"))
    rows, warnings, errors = {}, 0, 0
    for path in gallery:
        lm = landmarks.get(path.name, landmarks.get(path.stem))
        if lm is None:
            print(f"error: {path.name}: no landmark row", file=sys.stderr)
            errors += 1
            continue
        try:
            result = pose_synth.synthesize_views(formats.read_pgm(path), lm, model, cfg.get("poses"),
                                                 cfg.get("max_residual"))
        except GradrevError as exc:
            print(f"warning: {path.name}: skipped ({exc})", file=sys.stderr)
            warnings += 1
            continue
        for msg in result.skipped + (result.warnings if args.verbose else []):
            print(f"warning: {path.name}: {msg}", file=sys.stderr)
        warnings += len(result.skipped)
        for view in result.views:
            name = _view_name(path.stem, view.pose)
            formats.write_pgm(out / name, view.image)
            rows[name] = view.landmarks
    formats.write_landmark_csv(out / "landmarks.csv", rows)
    print(f"views written: {len(rows)}; warnings: {warnings}; errors: {errors}")
    return EXIT_FAIL if errors else EXIT_OK


def save_network(network: adv.NetworkBundle, path) -> None:
    arrays, specs = {}, {}
    for name, params in adv.parameter_groups(network):
        specs[name] = [[s.input_dim, s.output_dim, s.activation] for s in params.specs]
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            arrays[f"{name}_w{i}"] = w
            arrays[f"{name}_b{i}"] = b
    np.savez(path, specs=np.array(json.dumps(specs)), **arrays)


def load_network(path) -> adv.NetworkBundle:
    with np.load(path) as data:
        specs = json.loads(str(data["specs"]))
        groups = []
        for name in ("F", "C", "D"):
            layer_specs = [LayerSpec(*s) for s in specs[name]]
            n = len(layer_specs)
            groups.append(ParameterSet(layer_specs, [data[f"{name}_w{i}"] for i in range(n)],
                                       [data[f"{name}_b{i}"] for i in range(n)]))
    return adv.NetworkBundle(*groups)


def _write_reports(out: Path, reports, summary, verbose: bool) -> None:
    experiments.write_report_csv(reports, out / "report.csv")
    (out / "report.txt").write_text(experiments.format_table(summary))
    if verbose:
        experiments.write_loss_log(reports, out / "loss_log.jsonl")


def cmd_train(args) -> int:
    try:
        mode = experiments.ExperimentMode.parse(args.mode)
    except GradrevError as exc:
        raise UsageError(str(exc)) from None
    cfg = _config_from_args(args)
    out = _prepare_out(args, cfg)
    bundle = load_bundle(args.data, cfg)
    report = experiments.run_experiment(mode, bundle, cfg.net_config(), cfg.adversarial_config(), cfg.get("seed"))
    _write_reports(out, [report], experiments.summarize([report], [mode]), args.verbose)
    save_network(report.network, out / "network.npz")
    print(f"{mode.value} seed={report.seed} accuracy={report.target_test_accuracy:.4f} "
          f"domain_confusion={report.domain_confusion:.4f}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        modes = ([experiments.ExperimentMode.parse(m.strip()) for m in args.modes.split(",") if m.strip()]
                 if args.modes else list(experiments.ExperimentMode))
    except (ValueError, GradrevError) as exc:
        raise UsageError(str(exc)) from None
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    cfg = _config_from_args(args)
    out = _prepare_out(args, cfg)
    bundle = load_bundle(args.data, cfg)
    result = experiments.run_matrix(bundle, seeds, modes, cfg.net_config(), cfg.adversarial_config())
    _write_reports(out, result.reports, result.summary, args.verbose)
    print(experiments.format_table(result.summary), end="")
    for (mode, seed), msg in result.failures.items():
        print(f"failed: {mode} seed={seed}: {msg}", file=sys.stderr)
    return EXIT_FAIL if result.failures else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    out = _prepare_out(args, cfg)
    bundle = load_bundle(args.data, cfg)
    try:
        network = load_network(args.network)
    except (OSError, KeyError, ValueError) as exc:
        raise GradrevError(f"cannot load network {args.network}: {exc}") from None
    accuracy = experiments.evaluate(network, bundle.test)
    if out is not None:
        (out / "eval.csv").write_text(f"network,accuracy\n{Path(args.network).name},{accuracy!r}\n")
    print(f"accuracy={accuracy:.4f}")
    return EXIT_OK


GRADCHECK_TOLERANCE = 1e-4


def gradcheck_rows(seed: int = 0, corrupt: str = "none") -> list[tuple[str, float]]:
    """Max relative error of each gradient path of a small F(8-16-8)/C(8-4)/D(8-8-2) bundle.

    * ``label_path``: F and C gradients of the F/C objective with lambda = 0
    * ``domain_path``: D gradients of the D objective
    * ``grl_path``: F and C gradients of the F/C objective with lambda = 1
    """
    rng = np.random.default_rng(seed)
    bundle = adv.build_bundle(8, 4, adv.NetConfig((16, 8), (8,)), rng)
    source = adv.Batch.of(rng.normal(size=(6, 8)), rng.integers(0, 4, size=6))
    target = adv.Batch.of(rng.normal(size=(6, 8)))
    reverse = adv.grl_backward
    if corrupt == "grl-sign":
        def reverse(g, lam):
            return lam * np.asarray(g)

    def worst(lam: float, groups: str) -> float:
        grads = adv.compute_gradients(bundle, source, target, lam, reverse_fn=reverse)
        err = 0.0
        for name in groups:
            params = dict(adv.parameter_groups(bundle))[name]
            analytic = {"F": grads.feature_extractor, "C": grads.label_classifier,
                        "D": grads.domain_discriminator}[name]
            which = 0 if name == "D" else 1
            numeric = nn_core.numeric_gradient(
                lambda: adv.adversarial_objectives(bundle, source, target, lam, np.longdouble)[which],
                params.arrays())
            for a, n in zip(analytic.arrays(), numeric):
                err = max(err, float(nn_core.relative_error(a, n).max()))
        return err

    return [("label_path", worst(0.0, "FC")), ("domain_path", worst(1.0, "D")), ("grl_path", worst(1.0, "FC"))]


def cmd_gradcheck(args) -> int:
    cfg = _config_from_args(args)
    _prepare_out(args, cfg)
    rows = gradcheck_rows(cfg.get("seed"), args.corrupt)
    ok = True
    for name, err in rows:
        passed = err < GRADCHECK_TOLERANCE
        ok &= passed
        print(f"{name:<12} max_rel_err={err:.3e} {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"gen-data": cmd_gen_data, "synth": cmd_synth, "train": cmd_train, "matrix": cmd_matrix,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gradrev: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GradrevError as exc:
        print(f"gradrev: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
