"""Command-line front end: the four experiments plus verification commands.

Every run writes deterministic artifacts into --out-dir: metrics.csv (fixed
schema, 9 significant digits), a resolved_config.json snapshot sufficient to
reproduce the run, and a final checkpoint. Exit codes: 0 success,
1 verification failure, 2 numeric divergence, 64 usage error.

The metrics.csv seconds column is written as 0.0 so repeated runs with one
seed are byte-identical; measured wall-clock timings go to run_summary.json.
"""

import argparse
import hashlib
import json
import sys
import urllib.request
from pathlib import Path

import numpy as np

from . import cartpole, checkpoint, datasets, lstm
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     NumericError, ParseError, SearchError, ShapeError)
from .layers import Conv, Flatten, Linear, MaxPool, ReLU, SoftmaxLogLoss
from .network import (SequentialModel, TrainConfig, grad_check,
                      init_model_params, train)
from .optim import OptimHyper, SelectiveSgdConfig
from .tensor import SeededRng, derive_seed, dtype_for

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_DIVERGED = 2
EXIT_USAGE = 64

EXPERIMENTS = ("mlp-mnist", "cnn-cifar10", "lstm-char", "qnet-cartpole")

CLASSIFIER_CSV_COLUMNS = ("epoch", "train_loss", "train_err", "test_loss",
                          "test_err", "seconds")
EPISODE_CSV_COLUMNS = ("episode", "steps", "total_reward", "epsilon", "mean_loss")

DATASET_URLS = {
    "mnist": [f"https://ossci-datasets.s3.amazonaws.com/mnist/{name}.gz"
              for name in datasets.MNIST_FILES.values()],
    "cifar10": ["https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"],
    "shakespeare": ["https://raw.githubusercontent.com/karpathy/char-rnn/"
                    "master/data/tinyshakespeare/input.txt"],
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_csv(path, columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_classifier_metrics(path, records):
    rows = [(r.epoch, r.train_loss, r.train_err, r.test_loss, r.test_err, 0.0)
            for r in records]
    write_csv(path, CLASSIFIER_CSV_COLUMNS, rows)


def write_episode_metrics(path, records):
    rows = [(r.episode, r.steps, r.total_reward, r.epsilon, r.mean_loss)
            for r in records]
    write_csv(path, EPISODE_CSV_COLUMNS, rows)


def read_config_file(path):
    """Flat `key = value` pairs; '#' starts a comment; keys match flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


_DEFAULTS = {
    "mlp-mnist": dict(epochs=10, batch_size=100, lr=0.1, optimizer="sgd"),
    "cnn-cifar10": dict(epochs=10, batch_size=64, lr=0.01, optimizer="sgd"),
    "lstm-char": dict(epochs=5, batch_size=32, lr=2e-3, optimizer="rmsprop"),
    "qnet-cartpole": dict(epochs=0, batch_size=32, lr=1e-3, optimizer="adam"),
}

_CONFIG_TYPES = {
    "epochs": int, "batch_size": int, "lr": float, "optimizer": str,
    "selective_sgd": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "seed": int, "subset": int, "precision": int, "data_dir": str,
    "out_dir": str, "momentum": float, "weight_decay": float,
    "max_episodes": int, "replay_capacity": int, "hidden": int,
    "seq_len": int, "gamma": float, "corpus": str, "eval_every": int,
}


def resolve_run_config(args):
    """defaults per experiment < config file < explicit flags."""
    resolved = dict(_DEFAULTS[args.experiment])
    resolved.update(dict(
        experiment=args.experiment, selective_sgd=False, seed=None, subset=None,
        precision=32, data_dir="data", out_dir="runs/latest", momentum=0.0,
        weight_decay=0.0, max_episodes=2000, replay_capacity=10000,
        hidden=None, seq_len=50, gamma=0.99, corpus="shakespeare.txt",
        eval_every=1))
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key == "experiment":
                continue
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = _CONFIG_TYPES[key](raw)
    for key in _CONFIG_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    if args.selective_sgd:
        resolved["selective_sgd"] = True
    if resolved["seed"] is None:
        raise ConfigError("a seed is required (pass --seed; runs never use "
                          "wall-clock seeding)")
    if resolved["precision"] not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {resolved['precision']}")
    return resolved


def _mlp_layers(dtype):
    return [Flatten(),
            Linear(784, 128, dtype=dtype), ReLU(),
            Linear(128, 128, dtype=dtype), ReLU(),
            Linear(128, 10, dtype=dtype)]


def _cnn_layers(dtype):
    # 32,32,64 maps of 5x5 kernels, then a 4x4 valid stage, relu after each
    return [Conv((5, 5), 3, 32, pad=(2, 2, 2, 2), dtype=dtype), ReLU(),
            MaxPool((2, 2)),
            Conv((5, 5), 32, 32, pad=(2, 2, 2, 2), dtype=dtype), ReLU(),
            MaxPool((2, 2)),
            Conv((5, 5), 32, 64, pad=(2, 2, 2, 2), dtype=dtype), ReLU(),
            MaxPool((2, 2)),
            Conv((4, 4), 64, 64, dtype=dtype), ReLU(),
            Flatten(),
            Linear(64, 10, dtype=dtype)]


def build_experiment_model(experiment, precision, seed, hidden=None):
    dtype = dtype_for(precision)
    if experiment == "mlp-mnist":
        layers = _mlp_layers(dtype)
    elif experiment == "cnn-cifar10":
        layers = _cnn_layers(dtype)
    else:
        raise ConfigError(f"no sequential model for {experiment}")
    model = SequentialModel(layers, dtype=dtype)
    init_model_params(model, SeededRng(derive_seed(seed, 0x1717)))
    return model


def _train_classifier(resolved, out_dir):
    dtype = dtype_for(resolved["precision"])
    data_dir = resolved["data_dir"]
    if resolved["experiment"] == "mlp-mnist":
        train_set, test_set = datasets.load_mnist(data_dir, dtype=dtype)
    else:
        train_set, test_set = datasets.load_cifar10(data_dir, dtype=dtype)
    if resolved["subset"]:
        sub_rng = SeededRng(derive_seed(resolved["seed"], 0x5B))
        train_set = datasets.subset(train_set, resolved["subset"], sub_rng)

    model = build_experiment_model(resolved["experiment"], resolved["precision"],
                                   resolved["seed"])
    hyper = OptimHyper(lr=resolved["lr"], momentum=resolved["momentum"],
                       weight_decay=resolved["weight_decay"])
    config = TrainConfig(
        epochs=resolved["epochs"], batch_size=resolved["batch_size"],
        optimizer=resolved["optimizer"], hyper=hyper,
        selective=SelectiveSgdConfig() if resolved["selective_sgd"] else None,
        seed=resolved["seed"], eval_every=resolved["eval_every"])
    result = train(model, SoftmaxLogLoss(), train_set, test_set, config)

    write_classifier_metrics(out_dir / "metrics.csv", result.metrics)
    tensors, meta = checkpoint.pack_training_state(
        model, result.optimizer, result.rng, result.epochs_done,
        arch=resolved["experiment"])
    checkpoint.save_checkpoint(out_dir / "checkpoint.bin", tensors, meta)
    resolved["chosen_lr"] = result.chosen_lr
    return {"final": result.metrics[-1].__dict__ if result.metrics else None}


def _train_lstm(resolved, out_dir):
    corpus_path = Path(resolved["data_dir"]) / resolved["corpus"]
    text = datasets.load_text(corpus_path)
    if resolved["subset"]:
        text = text[:resolved["subset"]]
    config = lstm.CharLmConfig(
        epochs=resolved["epochs"], hidden=resolved["hidden"] or 30,
        seq_len=resolved["seq_len"], batch_size=resolved["batch_size"],
        optimizer=resolved["optimizer"],
        hyper=OptimHyper(lr=resolved["lr"], momentum=resolved["momentum"],
                         weight_decay=resolved["weight_decay"]),
        seed=resolved["seed"],
        selective=SelectiveSgdConfig() if resolved["selective_sgd"] else None,
        precision=resolved["precision"])
    result = lstm.train_char_lm(text, config)

    write_classifier_metrics(out_dir / "metrics.csv", result.metrics)
    tensors = {f"model.{k}": v for k, v in result.params.state_dict().items()}
    meta = {"arch": "lstm-char", "vocab": json.dumps(list(result.vocab.chars)),
            "hidden": str(result.params.hidden)}
    checkpoint.save_checkpoint(out_dir / "checkpoint.bin", tensors, meta)
    resolved["chosen_lr"] = result.chosen_lr
    last = result.metrics[-1] if result.metrics else None
    return {"final": last.__dict__ if last else None,
            "vocab_size": result.vocab.size}


def _train_qnet(resolved, out_dir):
    config = cartpole.QNetConfig(
        gamma=resolved["gamma"],
        hidden=resolved["hidden"] or 64,
        replay_capacity=resolved["replay_capacity"],
        replay_batch=resolved["batch_size"],
        max_episodes=resolved["max_episodes"],
        optimizer=resolved["optimizer"],
        hyper=OptimHyper(lr=resolved["lr"]))
    result = cartpole.run_training(config, seed=resolved["seed"])

    write_episode_metrics(out_dir / "metrics.csv", result.episodes)
    tensors, meta = checkpoint.pack_training_state(result.model,
                                                   arch="qnet-cartpole")
    meta["hidden"] = str(config.hidden)
    checkpoint.save_checkpoint(out_dir / "checkpoint.bin", tensors, meta)
    resolved["chosen_lr"] = resolved["lr"]
    return {"episodes": len(result.episodes), "solved_at": result.solved_at,
            "eval_history": result.eval_history}


def cmd_train(args):
    import time
    resolved = resolve_run_config(args)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    runners = {"mlp-mnist": _train_classifier, "cnn-cifar10": _train_classifier,
               "lstm-char": _train_lstm, "qnet-cartpole": _train_qnet}
    try:
        summary = runners[resolved["experiment"]](resolved, out_dir)
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    summary["wall_seconds"] = time.time() - started
    (out_dir / "run_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    print(f"run complete: {out_dir / 'metrics.csv'}")
    return EXIT_OK


def _corrupt_layer(model, kind):
    """Test hook: flip the sign of one layer type's backward output."""
    targets = {"conv": Conv, "linear": Linear, "pool": MaxPool, "relu": ReLU}
    if kind not in targets:
        raise ConfigError(f"unknown --corrupt target {kind!r}")
    for layer in model.layers:
        if isinstance(layer, targets[kind]):
            original = layer.backward

            def corrupted(upstream, _orig=original, _layer=layer):
                out = -_orig(upstream)
                for _, grad in _layer.parameters():
                    grad *= -1.0
                return out

            layer.backward = corrupted
            return
    raise ConfigError(f"model has no {kind!r} layer to corrupt")


def gradcheck_architecture(arch, seed=0, corrupt=None):
    """Small 64-bit instance of a named architecture, checked against
    central finite differences."""
    rng = SeededRng(derive_seed(seed, 0xAB))
    if arch == "lstm":
        if corrupt:
            raise ConfigError("--corrupt applies to sequential layers only")
        return lstm.lstm_grad_check(seed=seed)
    if arch == "mlp":
        model = SequentialModel([Flatten(),
                                 Linear(36, 16, dtype=np.float64), ReLU(),
                                 Linear(16, 16, dtype=np.float64), ReLU(),
                                 Linear(16, 10, dtype=np.float64)])
        init_model_params(model, rng)
        x = SeededRng(derive_seed(seed, 1)).normal((6, 6, 1, 4))
        target = SeededRng(derive_seed(seed, 2)).integers(4, 10)
        loss = SoftmaxLogLoss()
    elif arch == "cnn":
        model = SequentialModel([
            Conv((3, 3), 2, 4, pad=(1, 1, 1, 1), dtype=np.float64), ReLU(),
            MaxPool((2, 2), stride=(1, 1)),
            Conv((3, 3), 4, 4, stride=(2, 2), dtype=np.float64), ReLU(),
            Flatten(),
            Linear(36, 5, dtype=np.float64)])
        init_model_params(model, rng)
        x = SeededRng(derive_seed(seed, 1)).normal((8, 8, 2, 3))
        target = SeededRng(derive_seed(seed, 2)).integers(3, 5)
        loss = SoftmaxLogLoss()
    elif arch == "qnet":
        model = cartpole.build_qnet(8, seed)
        x = SeededRng(derive_seed(seed, 1)).normal((4, 6), std=0.1)
        acts = SeededRng(derive_seed(seed, 2)).integers(6, 2)
        targets = SeededRng(derive_seed(seed, 3)).normal((6,))
        target = (acts, targets)
        loss = cartpole.MaskedSquaredLoss()
    else:
        raise ConfigError(f"unknown architecture {arch!r}; choose from "
                          f"mlp, cnn, lstm, qnet")
    if corrupt:
        _corrupt_layer(model, corrupt)
    return grad_check(model, loss, x, target, coords_per_layer=6, seed=seed)


def cmd_gradcheck(args):
    report = gradcheck_architecture(args.architecture, seed=args.seed,
                                    corrupt=args.corrupt)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY_FAIL


def cmd_sample(args):
    ckpt = checkpoint.load_checkpoint(args.checkpoint)
    if ckpt.meta.get("arch") != "lstm-char":
        raise CheckpointError(f"{args.checkpoint}: not a character-model "
                              f"checkpoint (arch={ckpt.meta.get('arch')!r})")
    vocab = lstm.CharVocab(tuple(json.loads(ckpt.meta["vocab"])))
    hidden = int(ckpt.meta["hidden"])
    tensors = checkpoint.split_prefix(ckpt.tensors, "model.")
    dtype = tensors["Wy"].dtype
    params = lstm.LstmParams(vocab.size, hidden, dtype=dtype)
    params.load_state_dict(tensors)
    rng = SeededRng(args.seed)
    text = lstm.sample(params, vocab, args.seed_char, args.length,
                       args.temperature, rng)
    print(text)
    return EXIT_OK


def cmd_play_cartpole(args):
    ckpt = checkpoint.load_checkpoint(args.checkpoint)
    if ckpt.meta.get("arch") != "qnet-cartpole":
        raise CheckpointError(f"{args.checkpoint}: not a cart-pole checkpoint "
                              f"(arch={ckpt.meta.get('arch')!r})")
    hidden = int(ckpt.meta.get("hidden", 64))
    model = cartpole.build_qnet(hidden, seed=0)
    checkpoint.restore_model(model, ckpt, expected_arch="qnet-cartpole")
    rng = SeededRng(args.seed)
    lengths = [cartpole.greedy_episode_length(model, rng, args.max_steps)
               for _ in range(args.episodes)]
    for i, n in enumerate(lengths, 1):
        print(f"episode {i}: {n} steps")
    print(f"mean: {np.mean(lengths):.2f}")
    return EXIT_OK


def cmd_fetch(args):
    """Explicit dataset download with digest reporting (never implicit)."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for url in DATASET_URLS[args.dataset]:
        dest = out / url.rsplit("/", 1)[1]
        print(f"fetching {url} -> {dest}")
        with urllib.request.urlopen(url) as resp:
            data = resp.read()
        dest.write_bytes(data)
        print(f"  {len(data)} bytes sha256={hashlib.sha256(data).hexdigest()}")
    if args.dataset == "mnist":
        print("gunzip the four files (or leave .gz; the loader reads both)")
    elif args.dataset == "cifar10":
        print("extract cifar-10-binary.tar.gz so the .bin files sit in the "
              "data directory")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="scratchnet",
                     description="train and verify the built-in experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run one experiment")
    tr.add_argument("experiment", choices=EXPERIMENTS)
    tr.add_argument("--config", help="key = value file; flags override it")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--optimizer", choices=("sgd", "adagrad", "rmsprop", "adam"))
    tr.add_argument("--selective-sgd", dest="selective_sgd", action="store_true")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--subset", type=int)
    tr.add_argument("--precision", type=int, choices=(32, 64))
    tr.add_argument("--data-dir", dest="data_dir")
    tr.add_argument("--out-dir", dest="out_dir")
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--weight-decay", dest="weight_decay", type=float)
    tr.add_argument("--max-episodes", dest="max_episodes", type=int)
    tr.add_argument("--replay-capacity", dest="replay_capacity", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--seq-len", dest="seq_len", type=int)
    tr.add_argument("--gamma", type=float)
    tr.add_argument("--corpus")
    tr.add_argument("--eval-every", dest="eval_every", type=int)
    tr.set_defaults(func=cmd_train)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("architecture", choices=("mlp", "cnn", "lstm", "qnet"))
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--corrupt", help="test hook: sign-flip a layer's backward")
    gc.set_defaults(func=cmd_gradcheck)

    sm = sub.add_parser("sample", help="generate text from a char-model checkpoint")
    sm.add_argument("checkpoint")
    sm.add_argument("--seed-char", dest="seed_char", default="T")
    sm.add_argument("--length", type=int, default=200)
    sm.add_argument("--temperature", type=float, default=1.0)
    sm.add_argument("--seed", type=int, default=0)
    sm.set_defaults(func=cmd_sample)

    pl = sub.add_parser("play-cartpole", help="greedy episodes from a checkpoint")
    pl.add_argument("checkpoint")
    pl.add_argument("--episodes", type=int, default=20)
    pl.add_argument("--max-steps", dest="max_steps", type=int, default=200)
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_play_cartpole)

    ft = sub.add_parser("fetch", help="download a dataset (explicit only)")
    ft.add_argument("--dataset", choices=sorted(DATASET_URLS), required=True)
    ft.add_argument("--out", default="data")
    ft.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FileNotFoundError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DataError, CheckpointError, ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NumericError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except SearchError as err:
        print(f"search error: {err}", file=sys.stderr)
        return EXIT_DIVERGED


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
