"""Command line front end.

Subcommands: ``build-graph``, ``synth``, ``train``, ``eval``, ``gradcheck``
and ``report``. Settings come from flags, optionally seeded from a
``key = value`` config file given with ``--config`` (keys are the long flag
names with dashes or underscores; flags win over the file). Errors print one
line ``error[CODE]: message`` on stderr and exit non-zero.
"""

import argparse
import logging
import os
import sys

from .data import (DEFAULT_RATIOS, DatasetManifest, SyntheticConfig, cache_graph, read_image, split_dataset,
                   synth_sonar, write_pgm)
from .exceptions import ConfigError, ParseError, SIGATError
from .graph_builder import extract_nodes
from .knn import sparsify
from .model import ModelConfig, TrainConfig, build_model, default_layers, evaluate, load_checkpoint, train
from .report import write_report

logger = logging.getLogger("sigat")

GRADCHECK_TOLERANCE = 1e-4


def parse_pair(text, sep="x"):
    try:
        a, b = (int(v) for v in str(text).lower().split(sep))
    except ValueError:
        raise ConfigError(f"expected WxH, got {text!r}") from None
    return a, b


def parse_floats(text):
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"expected comma separated numbers, got {text!r}") from None


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key = value", line=lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# option name -> (type, default)
COMMON_GRAPH = {"gamma": (float, 0.5), "k": (int, 8), "grid": (parse_pair, (10, 10)),
                "scheme": (str, "grid"), "superpixels": (int, 100)}
OPTIONS = {
    "build-graph": {"image": (str, None), "out": (str, None), "seed": (int, 0), **COMMON_GRAPH},
    "synth": {"out": (str, None), "classes": (str, "disk,bar,ring"), "per_class": (int, 30),
              "size": (parse_pair, (200, 200)), "noise": (float, 1.0), "seed": (int, 0),
              "ratios": (parse_floats, DEFAULT_RATIOS)},
    "train": {"manifest": (str, None), "out": (str, None), "epochs": (int, 250), "batch_size": (int, 4),
              "lr": (float, 0.001), "lr_decay": (float, 0.5), "decay_every": (int, 50), "seed": (int, 0),
              "optimizer": (str, "adam"), "layers": (int, 4), "heads": (int, 8), "hidden_dim": (int, 10),
              "out_dim": (int, 152), **COMMON_GRAPH},
    "eval": {"checkpoint": (str, None), "manifest": (str, None), "split": (str, "test"), "out": (str, None)},
    "gradcheck": {"seed": (int, 0), "epsilon": (float, 1e-5)},
    "report": {"metrics": (str, None), "out": (str, None), "title": (str, "training curves")},
}
REQUIRED = {"build-graph": ("image", "out"), "synth": ("out",), "train": ("manifest", "out"),
            "eval": ("checkpoint", "manifest"), "report": ("metrics", "out")}


def build_parser():
    parser = argparse.ArgumentParser(prog="sigat", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file")
        for key in opts:
            # types are applied after merging with the config file
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    return parser


def resolve(command, args):
    """Merge config file and flags, convert types and check required settings."""
    file_values = read_config(args.config) if args.config else {}
    unknown = set(file_values) - set(OPTIONS[command])
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    settings = {}
    for key, (kind, default) in OPTIONS[command].items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            settings[key] = default
            continue
        try:
            settings[key] = kind(raw)
        except ValueError:
            raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    for key in REQUIRED.get(command, ()):
        if settings[key] is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")
    return settings


def _validate_graph_settings(s):
    if not 0.0 <= s["gamma"] <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {s['gamma']}")
    if s["k"] < 1:
        raise ConfigError(f"k must be >= 1, got {s['k']}")
    if min(s["grid"]) < 1:
        raise ConfigError(f"grid dims must be positive, got {s['grid']}")


def _graph_of(path, s):
    nodes = extract_nodes(read_image(path), s["grid"], s["scheme"], s["superpixels"], s.get("seed", 0))
    return sparsify(nodes, s["gamma"], s["k"])


def cmd_build_graph(s):
    _validate_graph_settings(s)
    graph = _graph_of(s["image"], s)
    cache_graph(graph, s["out"])
    density = graph.density()
    print(f"n={graph.n} k={graph.k} density={density.mean():.6f}")
    return 0


def cmd_synth(s):
    classes = tuple(c.strip() for c in s["classes"].split(",") if c.strip())
    w, h = s["size"]
    config = SyntheticConfig(classes=classes, width=w, height=h, per_class=s["per_class"],
                             noise_amplitude=s["noise"], seed=s["seed"])
    images, labels = synth_sonar(config)
    names = [classes[y] for y in labels]
    splits = split_dataset(names, s["ratios"], s["seed"])
    img_dir = os.path.join(s["out"], "images")
    os.makedirs(img_dir, exist_ok=True)
    paths = []
    for i, im in enumerate(images):
        rel = os.path.join("images", f"{i:05d}_{names[i]}.pgm")
        write_pgm(os.path.join(s["out"], rel), im)
        paths.append(rel)
    DatasetManifest(paths, names, classes, splits).write(os.path.join(s["out"], "manifest.csv"))
    counts = {k: splits.count(k) for k in ("train", "val", "test")}
    print(f"wrote {len(images)} images to {img_dir}; split " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _load_split(manifest, split, s):
    paths, labels = manifest.subset(split)
    graphs = [_graph_of(p, s) for p in paths]
    return graphs, [manifest.class_names.index(l) for l in labels]


def cmd_train(s):
    _validate_graph_settings(s)
    tc = TrainConfig(epochs=s["epochs"], batch_size=s["batch_size"], lr0=s["lr"], lr_decay=s["lr_decay"],
                     decay_every=s["decay_every"], seed=s["seed"], gamma=s["gamma"], k=s["k"],
                     optimizer=s["optimizer"])
    tc.validate()
    manifest = DatasetManifest.read(s["manifest"])
    if not manifest.splits:
        raise ConfigError("manifest has no split column; run synth or add train/val/test assignments")
    train_g, train_y = _load_split(manifest, "train", s)
    val_g, val_y = _load_split(manifest, "val", s)
    config = ModelConfig(n_classes=len(manifest.class_names),
                         layers=default_layers(4, s["layers"], s["heads"], s["hidden_dim"], s["out_dim"]),
                         seed=s["seed"], gamma=s["gamma"], k=s["k"], grid=s["grid"],
                         class_names=manifest.class_names)
    model = build_model(config)
    print(f"model parameters: {model.n_params}")
    os.makedirs(s["out"], exist_ok=True)
    metrics = train(model, train_g, train_y, tc, val_g, val_y,
                    checkpoint_path=os.path.join(s["out"], "checkpoint.json"), log_every=1)
    metrics.write_csv(os.path.join(s["out"], "metrics.csv"))
    print(f"trained {tc.epochs} epochs; best epoch {metrics.best_epoch}; "
          f"final train loss {metrics.train_loss[-1]:.6f}")
    return 0


def cmd_eval(s):
    model = load_checkpoint(s["checkpoint"])
    manifest = DatasetManifest.read(s["manifest"], model.config.class_names)
    if s["split"] not in ("train", "val", "test", "all"):
        raise ConfigError(f"unknown split {s['split']!r}")
    gs = {"gamma": model.config.gamma, "k": model.config.k, "grid": model.config.grid,
          "scheme": "grid", "superpixels": 0}
    if s["split"] == "all":
        graphs = [_graph_of(p, gs) for p in manifest.paths]
        labels = list(manifest.label_indices())
    else:
        graphs, labels = _load_split(manifest, s["split"], gs)
    metrics = evaluate(model, graphs, labels)
    print(f"accuracy={metrics.accuracy:.6f} n={len(graphs)}")
    if s["out"]:
        os.makedirs(s["out"], exist_ok=True)
        metrics.write_confusion(os.path.join(s["out"], "confusion.csv"))
        with open(os.path.join(s["out"], "summary.txt"), "w") as fh:
            fh.write(metrics.summary())
    return 0


def cmd_gradcheck(s):
    from .autodiff import grad_check
    from .fixtures import gradcheck_problem, model_closure

    graph, label, model = gradcheck_problem(s["seed"])
    err = grad_check(model_closure(model, graph, label), model.params(), s["epsilon"])
    print(f"max relative error: {err:.3e} ({model.n_params} parameters, {graph.n} nodes)")
    return 0 if err < GRADCHECK_TOLERANCE else 1


def cmd_report(s):
    n = write_report(s["metrics"], s["out"], s["title"])
    print(f"wrote {s['out']} ({n} epochs)")
    return 0


COMMANDS = {"build-graph": cmd_build_graph, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except SIGATError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error[IO]: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
