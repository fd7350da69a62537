"""Command-line pipeline: train | dissect | reconstruct | infer | eval |
sweep | analyze | synth-data.

Every stage reads its inputs from files and writes its outputs to files,
so any stage can be rerun in isolation. Machine-readable results go to
CSV files, human summaries to stdout, errors to stderr.

Exit codes: 0 success, 2 usage, 3 parse/integrity error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis, data, dissect, inference, reconstruct
from .train import train as train_network, write_metrics_csv
from .config import PipelineConfig, load_config, save_config
from .errors import IntegrityError, ParseError
from .layers import ShapeError
from .model import load_model, mnist5, save_model

EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_NUMERIC = 4


def _config_from(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def _override(value, fallback):
    return fallback if value is None else value


def _parse_classes(text: str) -> list[int]:
    try:
        ids = [int(c) for c in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad class list {text!r}")
    if len(ids) < 2 or len(set(ids)) != len(ids):
        raise argparse.ArgumentTypeError("need at least 2 distinct class ids")
    return ids


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_synth_data(args) -> int:
    cfg = _config_from(args)
    out = _override(args.data_dir, cfg.data_dir)
    data.build_synthetic_digits(out, train_per_class=args.train_per_class,
                                test_per_class=args.test_per_class,
                                seed=_override(args.seed, cfg.seed))
    tr, te = data.load_mnist(out)
    print(f"wrote synthetic digit corpus to {out}: {len(tr)} train / {len(te)} test")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    tc = cfg.train
    tc.learning_rate = _override(args.lr, tc.learning_rate)
    tc.momentum = _override(args.momentum, tc.momentum)
    tc.weight_decay = _override(args.weight_decay, tc.weight_decay)
    tc.batch_size = _override(args.batch_size, tc.batch_size)
    tc.epochs = _override(args.epochs, tc.epochs)
    tc.seed = _override(args.seed, tc.seed)
    train_set, test_set = data.load_mnist(_override(args.data_dir, cfg.data_dir))
    net = mnist5()
    metrics = train_network(net, train_set.images, train_set.labels, tc,
                            test_set.images, test_set.labels, log=print)
    model_path = _override(args.model, cfg.model_file)
    _ensure_parent(model_path)
    save_model(net, model_path)
    if args.metrics_csv:
        _ensure_parent(args.metrics_csv)
        write_metrics_csv(metrics, args.metrics_csv)
    print(f"saved model to {model_path} (final test accuracy "
          f"{metrics[-1].test_accuracy:.4f})")
    return 0


def cmd_dissect(args) -> int:
    cfg = _config_from(args)
    gc = cfg.gates
    gc.gamma = _override(args.gamma, gc.gamma)
    gc.iterations = _override(args.iterations, gc.iterations)
    gc.learning_rate = _override(args.lr, gc.learning_rate)
    gc.momentum = _override(args.momentum, gc.momentum)
    net = load_model(_override(args.model, cfg.model_file))
    train_set, _ = data.load_mnist(_override(args.data_dir, cfg.data_dir))
    result = dissect.dissect_dataset(net, train_set.images, train_set.labels,
                                     _override(args.per_class_n, cfg.per_class_n),
                                     gc, log=print)
    civ_path = _override(args.out, cfg.civ_file)
    _ensure_parent(civ_path)
    dissect.save_civs(result.civs, net, civ_path)
    if args.cdrp_archive:
        _ensure_parent(args.cdrp_archive)
        dissect.save_cdrp_archive(result.cdrps, net, args.cdrp_archive)
    print(f"wrote {len(result.civs)} CIVs to {civ_path} "
          f"(fallback rate {result.fallback_rate:.3f})")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _config_from(args)
    civs = dissect.load_civs(_override(args.civ, cfg.civ_file))
    classes = args.classes
    missing = [c for c in classes if c not in civs]
    if missing:
        raise IntegrityError(f"no CIV for classes {missing}")
    method = _override(args.method, cfg.method)
    thr = _override(args.thr, cfg.threshold)
    cciv = reconstruct.combine([civs[c] for c in classes], method, thr)
    _ensure_parent(args.out)
    reconstruct.save_cciv(cciv, args.out)
    frac = reconstruct.running_fraction(cciv.mask)
    print(f"wrote CCIV for classes {classes} ({method}, thr={thr}) to {args.out}: "
          f"{int(cciv.mask.sum())}/{len(cciv.mask)} channels running ({frac:.1%})")
    return 0


def cmd_infer(args) -> int:
    cfg = _config_from(args)
    net = load_model(_override(args.model, cfg.model_file))
    cciv = reconstruct.load_cciv(args.cciv)
    _, test_set = data.load_mnist(_override(args.data_dir, cfg.data_dir))
    if not 0 <= args.index < len(test_set):
        raise IndexError(f"test index {args.index} out of range [0, {len(test_set)})")
    image = test_set.images[args.index]
    logits = inference.masked_forward(net, image, cciv).ravel()
    probs = inference.masked_softmax(logits, cciv.class_set)
    print(f"test image {args.index} (label {test_set.labels[args.index]}), "
          f"classes {list(cciv.class_set)}:")
    for c in cciv.class_set:
        print(f"  class {c}: {probs[c]:.6f}")
    print(f"prediction: {int(np.argmax(probs))}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    net = load_model(_override(args.model, cfg.model_file))
    civs = dissect.load_civs(_override(args.civ, cfg.civ_file))
    _, test_set = data.load_mnist(_override(args.data_dir, cfg.data_dir))
    method = _override(args.method, cfg.method)
    thr = _override(args.thr, cfg.threshold)
    if args.classes:
        class_sets = [args.classes]
    else:
        rng = np.random.default_rng(_override(args.seed, cfg.seed))
        ids = sorted(civs)
        class_sets = []
        while len(class_sets) < args.pairs:
            pair = sorted(rng.choice(ids, size=2, replace=False).tolist())
            if pair not in class_sets:
                class_sets.append(pair)
    results = []
    for cs in class_sets:
        cciv = reconstruct.combine([civs[c] for c in cs], method, thr)
        results.append(analysis.evaluate_subtask(net, test_set.images,
                                                 test_set.labels, cciv))
    if args.out:
        _ensure_parent(args.out)
        analysis.save_subtask_results_csv(results, args.out)
    for r in results:
        print(f"classes {list(r.class_set)}: full {r.full_net_accuracy:.4f} "
              f"sub {r.sub_net_accuracy:.4f} drop {r.accuracy_drop:+.4f} "
              f"channels {r.running_channel_fraction:.1%} "
              f"params {r.running_param_fraction:.1%}")
    summary = analysis.summarize_results(results)
    print(f"mean drop {summary['mean_drop']:+.4f} "
          f"(min {summary['min_drop']:+.4f}, max {summary['max_drop']:+.4f}), "
          f"mean running channels {summary['mean_running_channel_fraction']:.1%}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from(args)
    civs = dissect.load_civs(_override(args.civ, cfg.civ_file))
    selected = [civs[c] for c in args.classes] if args.classes else list(civs.values())
    method = _override(args.method, cfg.method)
    if args.thresholds:
        thresholds = sorted(float(t) for t in args.thresholds.replace(",", " ").split())
    else:
        top = float(max(c.values.max() for c in selected))
        thresholds = [round(top * i / 20, 12) for i in range(21)]
    table = reconstruct.sweep_threshold(selected, method, thresholds)
    print("threshold,running_channel_fraction")
    for t, frac in table:
        print(f"{t},{frac}")
    if args.out:
        _ensure_parent(args.out)
        with open(args.out, "w") as f:
            f.write("threshold,running_channel_fraction\n")
            for t, frac in table:
                f.write(f"{t!r},{frac!r}\n")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config_from(args)
    civs = dissect.load_civs(_override(args.civ, cfg.civ_file))
    out_dir = _override(args.out_dir, cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    sim = analysis.similarity_matrix(civs, epsilon=args.epsilon)
    analysis.save_similarity_csv(sim, os.path.join(out_dir, "similarity.csv"))
    analysis.render_similarity_pgm(sim, os.path.join(out_dir, "similarity.pgm"))
    print(f"similarity matrix over classes {sim.class_ids} "
          f"(epsilon={sim.epsilon}) written to {out_dir}")
    off_diag = sim.values[~np.eye(len(sim.class_ids), dtype=bool)]
    print(f"mean off-diagonal similarity: {off_diag.mean():.4f}")
    if 1 in sim.class_ids:
        i = sim.class_ids.index(1)
        row = np.delete(sim.values[i], i)
        print(f"class 1 mean similarity to others: {row.mean():.4f}")
    if args.cciv:
        net = load_model(_override(args.model, cfg.model_file))
        cciv = reconstruct.load_cciv(args.cciv)
        dist = analysis.layer_distribution(net, cciv)
        report = inference.cost_report(net, cciv)
        inference.write_cost_report_csv(report,
                                        os.path.join(out_dir, "layer_distribution.csv"))
        print(inference.format_cost_report(report))
        first = dist[0]
        last = dist[-1]
        print(f"running fraction: first conv layer {first[2] / first[1]:.1%}, "
              f"last conv layer {last[2] / last[1]:.1%}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatednet",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file; flags override its values")
        p.add_argument("--data-dir", help="directory with the four IDX files")
        p.add_argument("--model", help="model file (.drnm)")

    p = sub.add_parser("synth-data", help="generate the synthetic IDX digit corpus")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-per-class", type=int, default=600)
    p.add_argument("--test-per-class", type=int, default=200)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="pre-train the base network")
    common(p)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics-csv", help="write per-epoch metrics here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dissect", help="optimize per-image gates, aggregate per-class CIVs")
    common(p)
    p.add_argument("--out", help="CIV output file (.civ.csv)")
    p.add_argument("--cdrp-archive", help="write all per-image gate vectors here")
    p.add_argument("--per-class-n", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("reconstruct", help="combine CIVs into a binary channel mask")
    common(p)
    p.add_argument("--civ", help="CIV input file")
    p.add_argument("--classes", type=_parse_classes, required=True)
    p.add_argument("--method", choices=["union", "xor"])
    p.add_argument("--thr", type=float)
    p.add_argument("--out", required=True, help="CCIV output file (.cciv.csv)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("infer", help="run one test image through the masked sub-net")
    common(p)
    p.add_argument("--cciv", required=True)
    p.add_argument("--index", type=int, default=0, help="test image index")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="full-net vs sub-net accuracy on sub-tasks")
    common(p)
    p.add_argument("--civ")
    p.add_argument("--classes", type=_parse_classes,
                   help="evaluate this one class set")
    p.add_argument("--pairs", type=int, default=10,
                   help="number of random class pairs when --classes is absent")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["union", "xor"])
    p.add_argument("--thr", type=float)
    p.add_argument("--out", help="results CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="threshold vs running-channel fraction table")
    common(p)
    p.add_argument("--civ")
    p.add_argument("--classes", type=_parse_classes)
    p.add_argument("--method", choices=["union", "xor"])
    p.add_argument("--thresholds", help="comma-separated; default: 21-point grid")
    p.add_argument("--out", help="table CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="layer distribution and class-similarity matrix")
    common(p)
    p.add_argument("--civ")
    p.add_argument("--cciv", help="also report layer-wise running channels for this mask")
    p.add_argument("--epsilon", type=float, default=1e-2,
                   help="importance cutoff for 'nonzero' channels")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, IntegrityError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (FloatingPointError, ShapeError, ValueError, IndexError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
