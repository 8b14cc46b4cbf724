"""Command-line pipeline: traffic generation, predictor training, DQN
training, reward-weight search, evaluation and comparison.

Artifacts flow through one experiment directory (--out): each subcommand
writes its own subdirectory (traffic/, predictor_fa/, predictor_lstm/,
dqn/, meta/, eval_<policy>/, compare/) and reads its inputs from sibling
subdirectories, failing with a dependency error when an upstream artifact
is missing. Exit codes: 0 ok, 1 config error, 2 dependency error, 3
numerical fault.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import forward, kpi, lstm_predictor, meta, traffic
from .agent import AgentConfig, TrainedAgent, run_policy, train_dqn
from .env import WorldConfig
from .errors import ConfigError, DependencyError, NumericalFault
from .nn import Network
from .predictors import make_predictor
from .runio import prepare_run_dir, require_artifact, write_csv, write_json
from .seeding import substream


def agent_config(cfg: config_mod.ExperimentConfig, episodes=None) -> AgentConfig:
    a = cfg.agent
    return AgentConfig(
        gamma=a["gamma"], lr=a["lr"], epsilon_start=a["epsilon_start"],
        epsilon_decay=a["epsilon_decay"], epsilon_floor=a["epsilon_floor"],
        target_period=a["target_period"], batch_size=a["batch_size"],
        episodes=episodes if episodes is not None else a["episodes"],
        hidden_sizes=tuple(a["hidden"]), buffer_capacity=a["buffer_capacity"],
        eval_slots=a["eval_slots"], dtype=a["dtype"],
    )


# -- traffic ---------------------------------------------------------------------

def traffic_csv_path(out_dir):
    return os.path.join(out_dir, "traffic", "traffic.csv")


def cmd_generate_traffic(cfg, out_dir):
    run_dir = prepare_run_dir(out_dir, "traffic", cfg.raw, cfg.seed)
    model = cfg.model
    events, acts, probs = traffic.generate_history(
        model, cfg.traffic_slots,
        substream(cfg.seed, "traffic", "events"),
        substream(cfg.seed, "traffic", "activations"),
    )
    header = (["slot"]
              + [f"w_{d}" for d in range(model.num_devices)]
              + [f"s_{k}" for k in range(model.num_events)]
              + [f"y_{d}" for d in range(model.num_devices)])
    rows = []
    for t in range(cfg.traffic_slots):
        rows.append([t + 1, *acts[t].tolist(), *events[t].tolist(), *probs[t].tolist()])
    write_csv(os.path.join(run_dir, "traffic.csv"), header, rows)
    return 0


def load_traffic(path, model):
    """Read back (events, activations, probs) from a traffic CSV."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim == 1:
        data = data[None, :]
    d, k = model.num_devices, model.num_events
    expected = 1 + d + k + d
    if data.shape[1] != expected:
        raise ConfigError(
            f"{path} has {data.shape[1]} columns, expected {expected} "
            f"for D={d}, K={k}"
        )
    acts = data[:, 1 : 1 + d].astype(np.int8)
    events = data[:, 1 + d : 1 + d + k].astype(np.int8)
    probs = data[:, 1 + d + k :]
    return events, acts, probs


# -- predictors --------------------------------------------------------------------

def cmd_train_predictor(cfg, out_dir, kind=None):
    kind = kind or cfg.predictor["kind"]
    if kind == "genie":
        raise ConfigError("the genie needs no training; pick fa or lstm")
    source = require_artifact(traffic_csv_path(out_dir),
                              "run generate-traffic first")
    _, acts, probs = load_traffic(source, cfg.model)
    if kind == "fa":
        return _train_fa(cfg, out_dir, acts, probs)
    return _train_lstm(cfg, out_dir, acts)


def _train_fa(cfg, out_dir, acts, probs):
    run_dir = prepare_run_dir(out_dir, "predictor_fa", cfg.raw, cfg.seed)
    run = forward.forward_filter(cfg.model, acts,
                                 marginalize=cfg.predictor["marginalize"])
    per_slot = forward.fa_mse_per_slot(run.predictions, probs)
    write_csv(os.path.join(run_dir, "mse_curve.csv"), ["slot", "mse"],
              [[t + 1, float(per_slot[t])] for t in range(len(per_slot))])
    rows = []
    for t in range(acts.shape[0]):
        for d in range(cfg.model.num_devices):
            err = (probs[t, d] - run.predictions[t, d]) ** 2
            rows.append([t + 1, d, float(run.predictions[t, d]),
                         float(probs[t, d]), float(err)])
    write_csv(os.path.join(run_dir, "predictions.csv"),
              ["slot", "device", "predicted", "true_prob", "squared_error"], rows)
    write_json(os.path.join(run_dir, "report.json"), {
        "kind": "fa",
        "mean_mse": float(np.mean(per_slot)),
        "final_mse": float(per_slot[-1]),
        "log_likelihood": run.log_likelihood,
        "slots": int(acts.shape[0]),
    })
    return 0


def lstm_checkpoint_path(out_dir):
    return os.path.join(out_dir, "predictor_lstm", "checkpoint.net")


def _train_lstm(cfg, out_dir, acts):
    run_dir = prepare_run_dir(out_dir, "predictor_lstm", cfg.raw, cfg.seed)
    p = cfg.predictor
    dataset = lstm_predictor.build_dataset(acts, p["window"],
                                           p["lstm"]["train_fraction"])
    dtype = np.float32 if p["lstm"]["dtype"] == "float32" else np.float64
    result = lstm_predictor.train(
        dataset, hidden_sizes=tuple(p["lstm"]["hidden"]),
        epochs=p["lstm"]["epochs"], lr=p["lstm"]["lr"],
        batch_size=p["lstm"]["batch_size"], seed=cfg.seed, dtype=dtype,
        patience=p["lstm"]["patience"],
    )
    result.net.save(os.path.join(run_dir, "checkpoint.net"))
    write_csv(os.path.join(run_dir, "losses.csv"),
              ["epoch", "train_bce", "val_bce"],
              [[e + 1, tr, va] for e, (tr, va) in
               enumerate(zip(result.train_losses, result.val_losses))])
    x_val, y_val = dataset.validation
    preds, _ = lstm_predictor.predict_batch(result.net, x_val)
    report = lstm_predictor.classification_report(preds, y_val)
    cm = report["confusion"]
    write_json(os.path.join(run_dir, "report.json"), {
        "kind": "lstm",
        "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
        "accuracy": report["accuracy"],
        "active": report["active"],
        "silent": report["silent"],
        "epochs_run": len(result.train_losses),
    })
    return 0


def _build_predictor(cfg, out_dir, kind):
    if kind == "lstm":
        path = require_artifact(lstm_checkpoint_path(out_dir),
                                "run train-predictor with kind=lstm first")
        net = Network.load(path)
        return lambda: make_predictor("lstm", cfg.model, lstm_net=net,
                                      window=cfg.predictor["window"])
    if kind == "fa":
        return lambda: make_predictor("fa", cfg.model)
    return lambda: None  # genie


# -- DQN ---------------------------------------------------------------------------

def dqn_checkpoint_path(out_dir):
    return os.path.join(out_dir, "dqn", "checkpoint.net")


def cmd_train_dqn(cfg, out_dir):
    kind = cfg.predictor["kind"]
    factory = _build_predictor(cfg, out_dir, kind)
    run_dir = prepare_run_dir(out_dir, "dqn", cfg.raw, cfg.seed)
    agent = train_dqn(cfg.world, cfg.model, factory, agent_config(cfg), seed=cfg.seed)
    agent.net.save(os.path.join(run_dir, "checkpoint.net"))
    write_csv(os.path.join(run_dir, "episodes.csv"),
              ["episode", "epsilon", "reward", "slots"],
              [[e.episode + 1, e.epsilon, e.reward, e.slots]
               for e in agent.episode_log])
    return 0


def _write_eval(run_dir, record, trace, world: WorldConfig):
    write_json(os.path.join(run_dir, "kpi.json"), record.as_dict())
    header = ["slot"]
    for u in range(world.num_uavs):
        header += [f"u{u}_x", f"u{u}_y", f"u{u}_energy", f"u{u}_delta", f"u{u}_grant"]
    header += ["activity", "regret", "mean_aoi", "mean_power", "reward"]
    rows = []
    for rec in trace.records:
        row = [rec.slot + 1]
        for u in range(world.num_uavs):
            grant = rec.grants[u]
            row += [rec.positions[u][0], rec.positions[u][1],
                    rec.energies[u], rec.deltas[u],
                    grant if grant != world.num_devices else -1]
        row += ["".join(str(int(b)) for b in rec.activity), rec.regret,
                rec.mean_aoi, rec.mean_power, rec.reward]
        rows.append(row)
    write_csv(os.path.join(run_dir, "trace.csv"), header, rows)


def cmd_evaluate(cfg, out_dir, policy):
    if policy not in ("trained", "rw", "genie"):
        raise ConfigError(f"--policy must be trained|rw|genie, got {policy!r}")
    run_dir = prepare_run_dir(out_dir, f"eval_{policy}", cfg.raw, cfg.seed)
    net = None
    predictor = None
    if policy == "trained":
        net = Network.load(require_artifact(dqn_checkpoint_path(out_dir),
                                            "run train-dqn first"))
        predictor = _build_predictor(cfg, out_dir, cfg.predictor["kind"])()
    elif policy == "genie":
        net = Network.load(require_artifact(dqn_checkpoint_path(out_dir),
                                            "run train-dqn first"))
    record, trace = run_policy(net, cfg.world, cfg.model, predictor,
                               cfg.agent["eval_slots"], cfg.seed, policy=policy)
    _write_eval(run_dir, record, trace, cfg.world)
    return 0


def cmd_compare(cfg, out_dir):
    policies = cfg.compare["policies"]
    if len(policies) < 2:
        raise ConfigError("compare needs at least two policies")
    run_dir = prepare_run_dir(out_dir, "compare", cfg.raw, cfg.seed)
    checkpoints = cfg.compare["dqn_checkpoints"]
    runs = {}
    for policy in policies:
        if policy == "rw":
            net, predictor_factory = None, lambda: None
        else:
            if policy not in checkpoints:
                raise DependencyError(
                    f"compare.dqn_checkpoints has no entry for {policy!r}")
            net = Network.load(require_artifact(checkpoints[policy],
                                                f"checkpoint for {policy}"))
            if policy == "lstm":
                lstm_path = require_artifact(cfg.compare["lstm_checkpoint"],
                                             "compare.lstm_checkpoint")
                lstm_net = Network.load(lstm_path)
                predictor_factory = lambda: make_predictor(
                    "lstm", cfg.model, lstm_net=lstm_net,
                    window=cfg.predictor["window"])
            elif policy == "fa":
                predictor_factory = lambda: make_predictor("fa", cfg.model)
            else:
                predictor_factory = lambda: None
        records = []
        for seed in cfg.agent["eval_seeds"]:
            mode = "rw" if policy == "rw" else ("genie" if policy == "genie" else "trained")
            record, _ = run_policy(net, cfg.world, cfg.model, predictor_factory(),
                                   cfg.agent["eval_slots"], int(seed), policy=mode)
            records.append(record)
        runs[policy] = records
    baseline = "rw" if "rw" in runs else policies[0]
    table = kpi.compare(runs, baseline)
    header = list(table[0].keys())
    write_csv(os.path.join(run_dir, "comparison.csv"), header,
              [[row[h] for h in header] for row in table])
    return 0


# -- reward optimization ------------------------------------------------------------

def cmd_optimize_reward(cfg, out_dir):
    kind = cfg.predictor["kind"]
    factory = _build_predictor(cfg, out_dir, kind)
    run_dir = prepare_run_dir(out_dir, "meta", cfg.raw, cfg.seed)
    m = cfg.meta
    inner_episodes = m["inner_episodes"] or cfg.agent["episodes"]
    eval_slots = m["inner_eval_slots"] or cfg.agent["eval_slots"]

    def inner_eval(zeta1, zeta2, seed):
        world = replace(cfg.world, zeta1=zeta1, zeta2=zeta2)
        agent = train_dqn(world, cfg.model, factory,
                          agent_config(cfg, episodes=inner_episodes), seed=seed)
        agent.net.save(os.path.join(
            run_dir, f"inner_z1_{zeta1:g}_z2_{zeta2:g}_seed{seed}.net"))
        record, _ = run_policy(agent.net, world, cfg.model, factory(),
                               eval_slots, seed, policy="trained")
        return record.ergodic_age, record.accumulated_regret, record.ergodic_power

    if m["mode"] == "sweep":
        result = meta.sweep(m["zeta1_grid"], m["zeta2_grid"], inner_eval,
                            seeds=[int(s) for s in m["seeds"]])
    elif m["mode"] == "dqn":
        result = meta.optimize(m["zeta1_grid"], m["zeta2_grid"], inner_eval,
                               num_devices=cfg.world.num_devices,
                               episodes=m["episodes"], seed=cfg.seed,
                               inner_seed=int(m["seeds"][0]))
    else:
        raise ConfigError(f"meta.mode must be sweep|dqn, got {m['mode']!r}")

    write_csv(os.path.join(run_dir, "meta_log.csv"),
              ["zeta1", "zeta2", "seed", "avg_aoi", "acc_regret", "avg_power",
               "meta_reward", "failed"],
              [[r.action.zeta1, r.action.zeta2, r.seed, r.avg_aoi, r.acc_regret,
                r.avg_power, r.meta_reward, int(r.failed)] for r in result.log])
    write_json(os.path.join(run_dir, "best.json"), {
        "zeta1": result.best.zeta1, "zeta2": result.best.zeta2,
        "meta_reward": result.best_reward, "mode": result.mode,
        "evaluations": len(result.log),
    })
    return 0


# -- entry point ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are config errors (exit 1)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="aoisim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate-traffic", "train-predictor", "train-dqn",
                 "optimize-reward", "evaluate", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", required=True, help="experiment directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if name == "train-predictor":
            p.add_argument("--kind", choices=("fa", "lstm"), default=None)
        if name == "evaluate":
            p.add_argument("--policy", choices=("trained", "rw", "genie"),
                           default="trained")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config, seed_override=args.seed)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "generate-traffic":
            return cmd_generate_traffic(cfg, args.out)
        if args.command == "train-predictor":
            return cmd_train_predictor(cfg, args.out, kind=args.kind)
        if args.command == "train-dqn":
            return cmd_train_dqn(cfg, args.out)
        if args.command == "optimize-reward":
            return cmd_optimize_reward(cfg, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, args.policy)
        if args.command == "compare":
            return cmd_compare(cfg, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 2
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
