"""Command-line interface: each pipeline stage reads the files produced by
the previous one (convert -> fit-propensity -> select-features -> train ->
evaluate), plus an `experiment` subcommand running the whole protocol."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import propensity as prop
from .datasets import (FeatureSchema, load_csv, load_reward_sidecar,
                       save_conversion, add_noise_features, convert_to_bandit)
from .evaluation import accuracy
from .harness import ExperimentConfig, report_json, report_table, run_experiment
from .policy import (PolicyArchitecture, PolicyNetwork, TrainConfig, forward,
                     train)
from .relevance import RelevanceReport, select_features


def _load_schema(path) -> FeatureSchema:
    with open(path) as fh:
        return FeatureSchema.from_dict(json.load(fh))


def _cap(args) -> prop.WeightCap | None:
    return prop.WeightCap(args.cap_m) if args.cap_m else None


def _weights(ds, args):
    model = None
    if getattr(args, "propensity_model", None):
        with open(args.propensity_model) as fh:
            model = prop.PropensityModel.from_json(fh.read())
    return prop.importance_weights(ds, model, _cap(args))


def cmd_convert(args):
    schema = _load_schema(args.schema)
    sup = load_csv(args.input, schema, args.k)
    if args.noise_features:
        sup = add_noise_features(sup, args.noise_features, args.seed)
    conv = convert_to_bandit(sup, args.kappa, args.seed)
    save_conversion(conv, args.output)
    print(f"wrote {args.output}.csv, {args.output}.rewards.csv, "
          f"{args.output}.manifest.json")


def cmd_fit_propensity(args):
    schema = _load_schema(args.schema)
    ds = load_csv(args.input, schema, args.k)
    model = prop.fit(ds, l2=args.l2)
    with open(args.output, "w") as fh:
        fh.write(model.to_json())
    print(f"wrote {args.output}")


def cmd_select_features(args):
    schema = _load_schema(args.schema)
    ds = load_csv(args.input, schema, args.k)
    weights = _weights(ds, args)
    report, _ = select_features(ds, weights, args.lambda1, args.lambda2,
                                loss=args.loss)
    with open(args.output, "w") as fh:
        fh.write(report.to_json())
    print(f"wrote {args.output}")


def cmd_train(args):
    schema = _load_schema(args.schema)
    train_ds = load_csv(args.train, schema, args.k)
    val_ds = load_csv(args.val, schema, args.k,
                      normalization=train_ds.normalization)
    train_w = _weights(train_ds, args)
    val_w = _weights(val_ds, args)
    with open(args.masks) as fh:
        masks = RelevanceReport.from_json(fh.read()).masks()
    layers = tuple(int(v) for v in args.layers.split(",")) if args.layers else ()
    arch = PolicyArchitecture(schema.d, args.k, masks, layers, seed=args.seed)
    config = TrainConfig(lambda3=args.lambda3, learning_rate=args.lr,
                         epochs=args.epochs, seed=args.seed)
    net = train(arch, train_ds, val_ds, train_w, val_w, config)
    with open(args.output, "w") as fh:
        fh.write(net.to_json())
    print(f"wrote {args.output}")


def cmd_evaluate(args):
    schema = _load_schema(args.schema)
    ds = load_csv(args.test, schema, args.k)
    table = load_reward_sidecar(args.rewards)
    with open(args.policy) as fh:
        net = PolicyNetwork.from_json(fh.read())
    acc = accuracy(forward(net, ds.features), table)
    result = {"acc": acc, "n_test": ds.n}
    out = json.dumps(result, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(out)
    print(out)


def _load_config(path) -> ExperimentConfig:
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            obj = tomllib.load(fh)
    else:
        with open(path) as fh:
            obj = json.load(fh)
    return ExperimentConfig.from_dict(obj)


def cmd_experiment(args):
    schema = _load_schema(args.schema)
    sup = load_csv(args.data, schema, args.k)
    config = _load_config(args.config) if args.config else ExperimentConfig()
    report = run_experiment(sup, config)
    with open(args.output, "w") as fh:
        fh.write(report_json(report))
    if args.table:
        print(report_table(report))
    print(f"wrote {args.output}")
    if report["errors"]:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfpolicy")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="supervised -> biased logged dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kappa", type=float, default=0.25)
    p.add_argument("--noise-features", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("fit-propensity", help="estimate the logging policy")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--l2", type=float, default=prop.DEFAULT_L2)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_fit_propensity)

    p = sub.add_parser("select-features", help="per-action relevance masks")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--propensity-model")
    p.add_argument("--cap-m", type=float)
    p.add_argument("--lambda1", type=float, required=True)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--loss", choices=("abs", "squared"), default="abs")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("train", help="train the policy network")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--propensity-model")
    p.add_argument("--cap-m", type=float)
    p.add_argument("--layers", default="50,100")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lambda3", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a policy on held-out rewards")
    p.add_argument("--policy", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rewards", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="full repeated-run protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--table", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
