"""Command-line entry point: ``proactive-defense run|report|baseline``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bench.metrics import MetricsError
from .config import SCENARIOS, ConfigError, ScenarioConfig, load_config
from .reasoner import MODEL_PRESETS, ReasonerConfig

log = logging.getLogger("proactive_defense")


def _scenarios(name: str) -> list[str]:
    return list(SCENARIOS) if name == "all" else [name]


def _reasoner_config(args: argparse.Namespace) -> ReasonerConfig:
    if args.backend == "oracle":
        return ReasonerConfig()
    extra = {"endpoint": args.endpoint, "price_input": args.price_input, "price_output": args.price_output,
             "timeout": args.timeout, "retries": args.retries, "transcript_path": args.transcript}
    if args.model in MODEL_PRESETS:
        return ReasonerConfig.preset(args.model, **extra)
    return ReasonerConfig(backend="remote", model_name=args.model, **extra)


def cmd_run(args: argparse.Namespace) -> int:
    from .bench import RunConfig, compute, export, run, save_results

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base: Optional[ScenarioConfig] = load_config(args.config) if args.config else None
    if args.no_attack:
        base = (base or ScenarioConfig()).replace(attack_enabled=False)
    reports = []
    for scenario in _scenarios(args.scenario):
        trace = None
        if args.trace:
            trace = args.trace if args.scenario != "all" else str(Path(args.trace).with_suffix(f".{scenario}.jsonl"))
        cfg = RunConfig(
            scenario=scenario, backend=args.backend, trials=args.trials, episodes=args.episodes, seed=args.seed,
            epsilon=args.epsilon, use_memory=not args.no_memory, memory_path=args.memory_path, trace=trace,
            risk_k=args.risk_k, max_rounds=args.max_rounds, workers=args.workers, scenario_config=base,
            reasoner=_reasoner_config(args),
        )
        results = run(cfg)
        save_results(results, out / f"results-{scenario}.jsonl")
        rep = compute(results)
        reports.append(rep)
        print(f"{scenario}: surviving rate {rep.surviving_rate:.4f} ± {rep.surviving_ci:.4f}, "
              f"efficacy {rep.efficacy:.4f}, errored trials {rep.errored}")
    for path in export(reports, out):
        print(f"wrote {path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .bench import compute, export, load_results

    reports = [compute(load_results(p)) for p in args.results]
    for path in export(reports, args.out_dir):
        print(f"wrote {path}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    from .baselines import TrainConfig, evaluate_policy, train, write_curve

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for scenario in _scenarios(args.scenario):
        cfg = ScenarioConfig(scenario=scenario)
        res = train(args.agent, cfg, TrainConfig(episodes=args.episodes), seed=args.seed)
        write_curve(res.curve, out / f"curve-{args.agent}-{scenario}.csv")
        net = res.agent.q if args.agent == "dqn" else res.agent.actor
        net.save(out / f"params-{args.agent}-{scenario}.json")
        m = evaluate_policy(res.agent, cfg, args.eval_episodes, seed=args.seed)
        print(f"{args.agent} {scenario}: efficacy {m['efficacy']:.4f}, surviving rate {m['surviving_rate']:.4f}, "
              f"latency {m['latency']:.6f} s, cost {m['cost']:.8f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proactive-defense", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run trials and export metrics")
    r.add_argument("--scenario", choices=(*SCENARIOS, "all"), default="syn_flood")
    r.add_argument("--backend", choices=("oracle", "remote"), default="oracle")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--episodes", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--epsilon", type=float, default=0.1)
    r.add_argument("--memory-path", help="load inter-episode memory from here and save it back")
    r.add_argument("--no-memory", action="store_true", help="do not consult inter-episode memory")
    r.add_argument("--trace", help="JSON-lines per-round trace file")
    r.add_argument("--out-dir", default="bench-out")
    r.add_argument("--risk-k", type=float, default=3.0)
    r.add_argument("--max-rounds", type=int, default=50)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--config", help="scenario file in key = value format")
    r.add_argument("--no-attack", action="store_true")
    r.add_argument("--model", default="gpt-4o-mini")
    r.add_argument("--endpoint", default=ReasonerConfig.endpoint)
    r.add_argument("--price-input", type=float, default=0.0, help="currency per input token")
    r.add_argument("--price-output", type=float, default=0.0, help="currency per output token")
    r.add_argument("--timeout", type=float, default=30.0)
    r.add_argument("--retries", type=int, default=2)
    r.add_argument("--transcript", help="JSON-lines transcript of remote calls")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="recompute metrics from saved results")
    rp.add_argument("results", nargs="+", help="results-*.jsonl files, one per scenario")
    rp.add_argument("--out-dir", default="bench-out")
    rp.set_defaults(func=cmd_report)

    b = sub.add_parser("baseline", help="train and evaluate an RL baseline")
    b.add_argument("--agent", choices=("dqn", "ac", "ppo"), default="dqn")
    b.add_argument("--scenario", choices=(*SCENARIOS, "all"), default="syn_flood")
    b.add_argument("--episodes", type=int, default=200)
    b.add_argument("--eval-episodes", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out-dir", default="bench-out")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MetricsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
