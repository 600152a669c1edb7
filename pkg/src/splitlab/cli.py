"""Command line entry point: ``splitlab {train,attack,verify,report}``."""

from __future__ import annotations

import argparse
import os
import sys

from splitlab.harness.config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="line-based 'section.key = value' file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--steps", type=int)
    p.add_argument("--transport", choices=("inproc", "socket"))
    p.add_argument("--full", action="store_true", help="28x28 images and full MNIST splits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitlab", description="Two-party split learning laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", help="honest split training")
    _common(train)
    role = train.add_mutually_exclusive_group()
    role.add_argument("--listen", metavar="HOST:PORT", help="run only the server role")
    role.add_argument("--connect", metavar="HOST:PORT", help="run only the client role")
    attack = sub.add_parser("attack", help="training under an attack")
    _common(attack)
    attack.add_argument("--attack", choices=("unsplit", "fsha", "fake_grad"))
    verify = sub.add_parser("verify", help="run the certificate suite")
    verify.add_argument("--out", metavar="DIR")
    verify.add_argument("--claims", nargs="+", metavar="ID")
    report = sub.add_parser("report", help="print a run's summary")
    report.add_argument("--out", metavar="DIR", required=True)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out = args.out
    if args.steps is not None:
        cfg.run.steps, cfg.run.epochs = args.steps, 0
    if args.transport is not None:
        cfg.run.transport = args.transport
    if args.full:
        cfg.data.image = 28
        if cfg.data.source == "mnist":
            cfg.data.n_train = cfg.data.n_test = 0
    return cfg.validate()


def _split_role(cfg: ExperimentConfig, listen: str | None, connect: str | None) -> None:
    """One party of a two-process run; both processes must share config and seed."""
    from splitlab import rng, transport
    from splitlab.harness import architectures
    from splitlab.harness.experiment import load_data
    from splitlab.optim import Optimizer
    from splitlab.protocol import SplitSession, drive_client, serve

    train, _, _ = load_data(cfg)
    client, server = architectures.split(cfg.model.arch, train.images.shape[1:], train.classes,
                                         rng.stream(cfg.run.seed, "model.init"), cfg.cut)
    session = SplitSession(client, server, train.images, train.labels,
                           Optimizer(cfg.optim.name, cfg.optim.lr), Optimizer(cfg.optim.name, cfg.optim.server_lr),
                           batch_size=cfg.optim.batch_size or None, seed=cfg.run.seed)
    c_party, s_party = session.make_parties()
    if listen:
        serve(s_party, transport.listen(listen))
        print("server finished")
        return
    trace = drive_client(c_party, transport.connect(connect), 0, cfg.run.steps)
    os.makedirs(cfg.run.out, exist_ok=True)
    with open(os.path.join(cfg.run.out, "client_metrics.csv"), "w") as f:
        f.write("step,loss\n")
        f.writelines(f"{r.step},{r.loss!r}\n" for r in trace)
    print(f"client finished {len(trace)} steps; final loss {trace[-1].loss:.6f}" if trace else "no steps")


def _print_summary(path: str) -> None:
    from splitlab.harness.experiment import read_summary

    s = read_summary(os.path.join(path, "summary.csv"))
    width = max(len(k) for k in s)
    for k, v in s.items():
        print(f"{k.ljust(width)}  {v}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    from splitlab.harness.experiment import ExperimentError, run_experiment
    from splitlab.protocol import ProtocolError

    try:
        if args.command == "verify":
            from splitlab.analysis import verify

            claims = tuple(args.claims) if args.claims else verify.CLAIMS
            reports = verify.run_suite(claims)
            print(verify.format_table(reports))
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                verify.write_csv(os.path.join(args.out, "verify.csv"), reports)
            return EXIT_OK if all(r.passed for r in reports) else EXIT_RUNTIME
        if args.command == "report":
            _print_summary(args.out)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "train":
            cfg.attack.kind = "none"
            if args.listen or args.connect:
                _split_role(cfg, args.listen, args.connect)
                return EXIT_OK
        elif args.attack:
            cfg.attack.kind = args.attack
        if args.command == "attack" and cfg.attack.kind == "none":
            print("error: no attack selected (use --attack or attack.kind)", file=sys.stderr)
            return EXIT_USAGE
        out = run_experiment(cfg)
        _print_summary(out)
        return EXIT_OK
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except (ExperimentError, ProtocolError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
