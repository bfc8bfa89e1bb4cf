"""``ordlab`` command line: flat ``key = value`` configs, seeded orchestration, CSV artifacts."""

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PreprocessConfig, load_cifar10, load_mnist_idx, subset_per_class, synthetic_blobs
from .errors import BudgetExceeded, ConfigError, OrdlabError
from .metrics import write_metrics_csv
from .nn import Checkpoint, ConvBlock, ModelSpec, restore
from .plots import emit_plots
from .training import TrainConfig, TrainState, run_training

SUBCOMMANDS = ("train", "explore", "poa", "cascade", "gradual", "tta", "attack-eval", "plot")
ECHO_NAME = "config.resolved"
NONE = "none"


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, ints, floats, strs, path, paths
    default: object
    choices: tuple = ()
    optional: bool = False  # accepts "none"


def _f(kind, default, *choices, optional=False):
    return Field(kind, default, tuple(choices), optional)


SCHEMA = {
    "run.seed": _f("int", 0),
    "run.id": _f("str", "run"),
    "run.output_dir": _f("str", "ordlab-out"),
    "run.workers": _f("int", 1),
    "dataset.kind": _f("str", "synthetic", "synthetic", "cifar10", "mnist"),
    "dataset.train_files": _f("paths", ()),
    "dataset.test_files": _f("paths", ()),
    "dataset.train_images": _f("path", None, optional=True),
    "dataset.train_labels": _f("path", None, optional=True),
    "dataset.test_images": _f("path", None, optional=True),
    "dataset.test_labels": _f("path", None, optional=True),
    "dataset.num_classes": _f("int", 10),
    "dataset.classes": _f("ints", None, optional=True),
    "dataset.per_class": _f("int", None, optional=True),
    "dataset.test_per_class": _f("int", None, optional=True),
    "dataset.subset_seed": _f("int", 0),
    "dataset.synthetic_classes": _f("int", 2),
    "dataset.synthetic_per_class": _f("int", 8),
    "dataset.synthetic_test_per_class": _f("int", 20),
    "dataset.synthetic_dims": _f("int", 4),
    "dataset.synthetic_separation": _f("float", 3.0),
    "dataset.mean": _f("floats", ()),
    "dataset.std": _f("floats", ()),
    "dataset.flip_prob": _f("float", 0.0),
    "dataset.crop_padding": _f("int", 0),
    "model.kind": _f("str", "mlp", "mlp", "conv"),
    "model.widths": _f("ints", (8,)),
    "model.activation": _f("str", "relu", "relu", "tanh", "identity"),
    "model.conv_channels": _f("ints", (16, 32)),
    "model.conv_kernel": _f("int", 3),
    "model.conv_stride": _f("int", 1),
    "model.pool": _f("bool", True),
    "model.classifier_width": _f("int", 0),
    "model.dtype": _f("str", "float32", "float32", "float64"),
    "optim.lr": _f("float", 0.05),
    "optim.momentum": _f("float", 0.9),
    "optim.weight_decay": _f("float", 1e-4),
    "optim.nesterov": _f("bool", True),
    "optim.batch_size": _f("int", 100),
    "optim.epochs": _f("int", 1),
    "optim.lr_schedule": _f("str", "none", "none", "step", "plateau"),
    "optim.lr_step_every": _f("int", 30),
    "optim.lr_factor": _f("float", 0.5),
    "optim.lr_patience": _f("int", 300),
    "optim.eval_batch_size": _f("int", 500),
    "poa.scorer": _f("str", "sample_loss", "sample_loss", "max_loss_delta_same", "max_loss_delta_external"),
    "poa.delta_mode": _f("str", "absolute", "absolute", "relative"),
    "poa.reference_size": _f("int", 512),
    "poa.resample_reference": _f("bool", True),
    "poa.strategy": _f("str", "ascending", "ascending", "descending", "direct", "inverse"),
    "poa.kappa": _f("int", 8),
    "poa.rescore": _f("str", "step", "step", "epoch"),
    "poa.item_kind": _f("str", "batch", "batch", "sample"),
    "poa.epsilon": _f("float", 1e-8),
    "explorer.batch_size": _f("int", 8),
    "explorer.epochs": _f("int", 1),
    "explorer.clusters": _f("int", 12),
    "explorer.budget": _f("int", 200000),
    "sumaug.start_k": _f("int", 4),
    "sumaug.patience": _f("int", 300),
    "sumaug.delta": _f("float", 1e-4),
    "sumaug.eval_every": _f("int", 0),
    "sumaug.stop_k": _f("int", 1),
    "sumaug.max_steps": _f("int", 100000),
    "sumaug.n": _f("int", 4),
    "sumaug.nr_epochs": _f("int", 10),
    "sumaug.nr_finetune_epochs": _f("int", 1),
    "tta.c": _f("int", 16),
    "tta.lambda": _f("float", 1.0),
    "tta.k": _f("int", 4),
    "tta.pool": _f("str", "test", "test", "train"),
    "tta.normalize": _f("bool", False),
    "tta.seed": _f("int", 0),
    "tta.checkpoint": _f("path", None, optional=True),
    "tta.limit": _f("int", None, optional=True),
    "tta.attacks": _f("strs", ("fgsm", "pgd")),
    "tta.epsilon": _f("float", 8 / 255),
    "tta.pgd_alpha": _f("float", 2 / 255),
    "tta.pgd_steps": _f("int", 10),
    "plot.metrics_csv": _f("path", None, optional=True),
    "plot.columns": _f("strs", ()),
    "plot.x": _f("str", "epoch"),
}


def _parse_value(key, field, text):
    text = text.strip()
    if field.optional and text.lower() == NONE:
        return None
    try:
        if field.kind == "int":
            value = int(text)
        elif field.kind == "float":
            value = float(text)
        elif field.kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            value = low == "true"
        elif field.kind in ("str", "path"):
            value = text
        elif field.kind in ("ints", "floats", "strs", "paths"):
            cast = {"ints": int, "floats": float, "strs": str, "paths": str}[field.kind]
            value = tuple(cast(part.strip()) for part in text.split(",") if part.strip())
        else:
            raise AssertionError(field.kind)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {field.kind}") from None
    if field.choices and value not in field.choices:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(field.choices)}")
    return value


def _format_value(field, value):
    if value is None:
        return NONE
    if field.kind == "bool":
        return "true" if value else "false"
    if field.kind == "float":
        return repr(float(value))
    if field.kind in ("ints", "floats", "strs", "paths"):
        return ", ".join(repr(float(v)) if field.kind == "floats" else str(v) for v in value)
    return str(value)


def parse_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, SCHEMA[key], value)
    return values


def resolve(values, base_dir=Path(".")):
    """Defaults applied, file references checked (relative paths resolve against ``base_dir``)."""
    out = {key: field.default for key, field in SCHEMA.items()}
    out.update(values)
    for key, field in SCHEMA.items():
        value = out[key]
        if field.kind == "path" and value is not None:
            out[key] = _existing(key, value, base_dir)
        elif field.kind == "paths":
            out[key] = tuple(_existing(key, v, base_dir) for v in value)
    return out


def _existing(key, value, base_dir):
    path = Path(value)
    if not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise ConfigError(f"{key}: file {value!r} does not exist")
    return str(path.resolve())


def render_config(config):
    return "".join(f"{key} = {_format_value(SCHEMA[key], config[key])}\n" for key in SCHEMA)


def parse_config(path, overrides=None, echo=True):
    """Read, validate and resolve a config file; optionally echo it into ``run.output_dir``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config file {str(path)!r} cannot be read: {exc.strerror}") from None
    values = parse_text(text, str(path))
    for key, value in (overrides or {}).items():
        values[key] = value
    config = resolve(values, path.parent)
    if echo:
        out = Path(config["run.output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / ECHO_NAME).write_text(render_config(config))
    return config


# ---------------------------------------------------------------- orchestration


def preprocess_config(cfg):
    try:
        return PreprocessConfig(cfg["dataset.mean"], cfg["dataset.std"], cfg["dataset.flip_prob"],
                                cfg["dataset.crop_padding"])
    except ConfigError as exc:
        raise ConfigError(f"dataset: {exc}") from None


def train_config(cfg):
    return TrainConfig(
        lr=cfg["optim.lr"], momentum=cfg["optim.momentum"], weight_decay=cfg["optim.weight_decay"],
        nesterov=cfg["optim.nesterov"], batch_size=cfg["optim.batch_size"], epochs=cfg["optim.epochs"],
        lr_schedule=cfg["optim.lr_schedule"], lr_step_every=cfg["optim.lr_step_every"],
        lr_factor=cfg["optim.lr_factor"], lr_patience=cfg["optim.lr_patience"],
        eval_batch_size=cfg["optim.eval_batch_size"], preprocess=preprocess_config(cfg),
    )


def _restrict(dataset, classes, per_class, seed):
    if classes is not None:
        mask = np.isin(dataset.labels, classes)
        dataset = dataset.take(np.flatnonzero(mask))
    if per_class is not None:
        dataset = subset_per_class(dataset, per_class, classes, seed)
    return dataset


def load_datasets(cfg):
    kind = cfg["dataset.kind"]
    if kind == "synthetic":
        classes, dims = cfg["dataset.synthetic_classes"], cfg["dataset.synthetic_dims"]
        sep, seed = cfg["dataset.synthetic_separation"], cfg["dataset.subset_seed"]
        return (synthetic_blobs(classes, cfg["dataset.synthetic_per_class"], dims, sep, seed, split="train"),
                synthetic_blobs(classes, cfg["dataset.synthetic_test_per_class"], dims, sep, seed, split="test"))
    if kind == "cifar10":
        if not cfg["dataset.train_files"] or not cfg["dataset.test_files"]:
            raise ConfigError("dataset.train_files and dataset.test_files are required for cifar10")
        train, test = load_cifar10(cfg["dataset.train_files"]), load_cifar10(cfg["dataset.test_files"])
    else:
        for key in ("dataset.train_images", "dataset.train_labels", "dataset.test_images", "dataset.test_labels"):
            if cfg[key] is None:
                raise ConfigError(f"{key} is required for mnist")
        n = cfg["dataset.num_classes"]
        train = load_mnist_idx(cfg["dataset.train_images"], cfg["dataset.train_labels"], n)
        test = load_mnist_idx(cfg["dataset.test_images"], cfg["dataset.test_labels"], n)
    classes, seed = cfg["dataset.classes"], cfg["dataset.subset_seed"]
    return (_restrict(train, classes, cfg["dataset.per_class"], seed),
            _restrict(test, classes, cfg["dataset.test_per_class"], seed))


def model_spec(cfg, train):
    shape = train.sample_shape
    num_classes = train.num_classes
    if cfg["model.kind"] == "mlp":
        return ModelSpec("mlp", shape, num_classes, widths=cfg["model.widths"], activation=cfg["model.activation"],
                         dtype=cfg["model.dtype"])
    if len(shape) != 3:
        raise ConfigError("model.kind = conv needs image data (channels, height, width)")
    blocks = tuple(ConvBlock(c, cfg["model.conv_kernel"], cfg["model.conv_stride"]) for c in cfg["model.conv_channels"])
    return ModelSpec("conv", shape, num_classes, conv_blocks=blocks, pool=cfg["model.pool"],
                     classifier_width=cfg["model.classifier_width"], dtype=cfg["model.dtype"])


class Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg["run.output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.events = []

    def log(self, message):
        self.events.append(message)

    def finish(self):
        (self.out / "events.log").write_text("".join(f"{line}\n" for line in self.events))


def _save_state(run, state, name="model.ckpt"):
    ckpt = state.snapshot()
    ckpt.save(run.out / name)
    run.log(f"checkpoint {name} {ckpt.content_hash}")


def cmd_train(run, cfg):
    train, test = load_datasets(cfg)
    records, state = run_training(train, test, model_spec(cfg, train), train_config(cfg), cfg["run.seed"],
                                  cfg["run.id"])
    write_metrics_csv(run.out / "metrics.csv", records)
    run.log(f"train epochs={len(records)} steps={state.step}")
    _save_state(run, state)


def cmd_poa(run, cfg):
    from .poa import LoaderConfig, run_poa_training

    loader = LoaderConfig(
        scorer=cfg["poa.scorer"], delta_mode=cfg["poa.delta_mode"], reference_size=cfg["poa.reference_size"],
        resample_reference=cfg["poa.resample_reference"], strategy=cfg["poa.strategy"], kappa=cfg["poa.kappa"],
        rescore=cfg["poa.rescore"], item_kind=cfg["poa.item_kind"], epsilon=cfg["poa.epsilon"],
    )
    train, test = load_datasets(cfg)
    records, state = run_poa_training(train, test, model_spec(cfg, train), train_config(cfg), loader,
                                      cfg["run.seed"], cfg["run.id"], workers=cfg["run.workers"])
    write_metrics_csv(run.out / "metrics.csv", records)
    run.log(f"poa scorer={loader.scorer} strategy={loader.strategy} kappa={loader.kappa} steps={state.step}")
    if any(r.event == "diverged" for r in records):
        run.log("poa diverged: non-finite training loss")
    _save_state(run, state)


def cmd_explore(run, cfg):
    from .explorer import ExploreConfig, count_orderings, explore, write_distribution_csv, write_ledger_csv

    train, test = load_datasets(cfg)
    ecfg = ExploreConfig(cfg["explorer.batch_size"], cfg["explorer.epochs"], cfg["explorer.clusters"],
                         cfg["explorer.budget"])
    try:
        count_orderings(len(train), ecfg.batch_size)
    except OrdlabError as exc:
        raise ConfigError(f"explorer.batch_size: {exc}") from None
    dists, ledger, initial, kept = explore(train, test, model_spec(cfg, train), train_config(cfg), ecfg,
                                           cfg["run.seed"], workers=cfg["run.workers"])
    write_ledger_csv(run.out / "ledger.csv", ledger)
    write_distribution_csv(run.out / "distribution.csv", dists)
    ckpt_dir = run.out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for epoch, reps in kept.items():
        for r in reps:
            (ckpt_dir / f"{r.checkpoint_hash}.ckpt").write_bytes(r.checkpoint)
    run.log(f"explore runs={len(ledger)} initial={initial}")


def cmd_cascade(run, cfg):
    from .sumaug import CascadeConfig, run_cascade

    ccfg = CascadeConfig(cfg["sumaug.start_k"], cfg["sumaug.patience"], cfg["sumaug.delta"], cfg["sumaug.eval_every"],
                         cfg["sumaug.stop_k"], cfg["sumaug.max_steps"])
    train, test = load_datasets(cfg)
    records, state, transitions = run_cascade(train, test, model_spec(cfg, train), train_config(cfg), ccfg,
                                              cfg["run.seed"], cfg["run.id"])
    write_metrics_csv(run.out / "metrics.csv", records)
    for K, acc, ckpt in transitions:
        ckpt.save(run.out / f"stage_K{K}.ckpt")
        run.log(f"stage K={K} best_test_acc={acc!r} checkpoint={ckpt.content_hash}")
    _save_state(run, state)


def cmd_gradual(run, cfg):
    from .sumaug import GradualConfig, run_gradual_cascade

    gcfg = GradualConfig(cfg["sumaug.n"], cfg["sumaug.nr_epochs"], cfg["sumaug.nr_finetune_epochs"])
    train, test = load_datasets(cfg)
    records, state = run_gradual_cascade(train, test, model_spec(cfg, train), train_config(cfg), gcfg,
                                         cfg["run.seed"], cfg["run.id"])
    write_metrics_csv(run.out / "metrics.csv", records)
    run.log(f"gradual epochs={len(records) - 1} steps={state.step}")
    _save_state(run, state)


def _model_for_eval(run, cfg, train, test):
    if cfg["tta.checkpoint"] is not None:
        ckpt = Checkpoint.load(cfg["tta.checkpoint"])
        if ckpt.spec.input_shape != train.sample_shape:
            raise ConfigError("tta.checkpoint: model input shape does not match the dataset")
        model, _, _ = restore(ckpt)
        run.log(f"model from checkpoint {ckpt.content_hash}")
        return model
    _, state = run_training(train, test, model_spec(cfg, train), train_config(cfg), cfg["run.seed"], cfg["run.id"])
    run.log(f"model trained for {state.step} steps")
    return state.model


def _tta_config(cfg):
    from .tta import TTAConfig

    return TTAConfig(cfg["tta.c"], cfg["tta.lambda"], cfg["tta.k"], cfg["tta.pool"], cfg["tta.normalize"],
                     cfg["tta.seed"])


def _eval_set(cfg, test):
    limit = cfg["tta.limit"]
    return test if limit is None else test.take(np.arange(min(limit, len(test))))


def cmd_tta(run, cfg):
    import csv

    from .tta import plain_evaluate, tta_evaluate

    train, test = load_datasets(cfg)
    model = _model_for_eval(run, cfg, train, test)
    tcfg, prep = _tta_config(cfg), preprocess_config(cfg)
    data = _eval_set(cfg, test)
    pool = train if tcfg.pool == "train" else test
    plain, plain_cls = plain_evaluate(model, data, prep)
    acc, per_cls = tta_evaluate(model, data, pool, tcfg, prep)
    with open(run.out / "tta.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mode", "accuracy"] + [f"class_{c}" for c in range(data.num_classes)])
        writer.writerow(["plain", repr(plain)] + [repr(float(v)) for v in plain_cls])
        writer.writerow([f"tta(C={tcfg.C},lambda={tcfg.lam},K={tcfg.K})", repr(acc)] + [repr(float(v)) for v in per_cls])
    run.log(f"tta accuracy={acc!r} plain={plain!r}")


def cmd_attack_eval(run, cfg):
    from .tta import AttackConfig, robustness_eval, write_robustness_csv

    train, test = load_datasets(cfg)
    model = _model_for_eval(run, cfg, train, test)
    attacks = []
    for name in cfg["tta.attacks"]:
        if name not in ("fgsm", "pgd"):
            raise ConfigError(f"tta.attacks: unknown attack {name!r}")
        attacks.append(AttackConfig(name, cfg["tta.epsilon"], cfg["tta.pgd_alpha"], cfg["tta.pgd_steps"]))
    tcfg = _tta_config(cfg)
    pool = train if tcfg.pool == "train" else test
    columns, rows = robustness_eval(model, _eval_set(cfg, test), attacks, preprocess_config(cfg), tcfg, pool,
                                    cfg["run.id"])
    write_robustness_csv(run.out / "robustness.csv", columns, rows)
    run.log(f"attack-eval attacks={','.join(cfg['tta.attacks']) or 'none'}")


def cmd_plot(run, cfg):
    source = cfg["plot.metrics_csv"]
    if source is None:
        source = run.out / "metrics.csv"
        if not source.exists():
            raise ConfigError("plot.metrics_csv is not set and no metrics.csv exists in run.output_dir")
    paths = emit_plots(source, run.out / "plots", cfg["plot.columns"] or None, cfg["plot.x"])
    run.log(f"plot charts={len(paths)}")


COMMANDS = {
    "train": cmd_train,
    "explore": cmd_explore,
    "poa": cmd_poa,
    "cascade": cmd_cascade,
    "gradual": cmd_gradual,
    "tta": cmd_tta,
    "attack-eval": cmd_attack_eval,
    "plot": cmd_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ordlab", description="Data-ordering and sum-augmentation experiments.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--workers", type=int, help="overrides run.workers (default: $ORDLAB_WORKERS)")
    parser.add_argument("--out", help="overrides run.output_dir")
    return parser


def run_command(subcommand, config_path, seed=None, workers=None, out=None):
    overrides = {}
    if seed is not None:
        overrides["run.seed"] = seed
    if workers is None and os.environ.get("ORDLAB_WORKERS"):
        try:
            workers = int(os.environ["ORDLAB_WORKERS"])
        except ValueError:
            raise ConfigError("ORDLAB_WORKERS must be an integer") from None
    if workers is not None:
        if workers < 1:
            raise ConfigError("run.workers must be at least 1")
        overrides["run.workers"] = workers
    if out is not None:
        overrides["run.output_dir"] = out
    cfg = parse_config(config_path, overrides)
    run = Run(cfg)
    run.log(f"{subcommand} seed={cfg['run.seed']}")
    COMMANDS[subcommand](run, cfg)
    run.log("done")
    run.finish()
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run_command(args.subcommand, args.config, args.seed, args.workers, args.out)
    except BudgetExceeded as exc:
        print(f"ordlab: refused: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"ordlab: config error: {exc}", file=sys.stderr)
        return 1
    except (OrdlabError, OSError, ValueError, ArithmeticError) as exc:
        print(f"ordlab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
