"""Command-line entry points: serve the gateway, run simulations and sweeps,
calibrate the crowd model, replay logs, score predictions, and generate
synthetic corpora.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from statistics import mean, pstdev

from .aggregation import aggregate, config_for_policy
from .crowd_sim import (
    RecruitmentModel,
    WorkerBehavior,
    behavior_preset,
    calibrate,
    run_trial,
    simulate_answer_streams,
)
from .domain import (
    POLICIES,
    GameConfig,
    generate_synthetic_corpus,
    load_corpus,
    sample_profiles,
    write_corpus,
)
from .evaluation import (
    GameStreams,
    TimelineStats,
    build_report,
    score_accuracy,
    score_outcome,
    ScoreCounts,
    summarize_timeline,
    tradeoff_sweep,
    write_sweep_table,
)
from .matching import Gazetteer, normalize


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _game_config(cfg: dict, **overrides) -> GameConfig:
    params = dict(cfg.get("game", {}))
    params.update({k: v for k, v in overrides.items() if v is not None})
    return GameConfig(**params)


def _recruitment(cfg: dict) -> RecruitmentModel:
    params = dict(cfg.get("recruitment", {}))
    if "routing_delay_range_s" in params:
        params["routing_delay_range_s"] = tuple(params["routing_delay_range_s"])
    return RecruitmentModel(**params)


def _behavior(cfg: dict) -> WorkerBehavior:
    params = cfg.get("behavior")
    if params is None:
        return behavior_preset()
    return WorkerBehavior(**params)


def _write_out(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_gen_corpus(args) -> int:
    profiles = sample_profiles(args.profiles, args.seed)
    tasks = generate_synthetic_corpus(profiles, args.seed)
    write_corpus(tasks, args.out or sys.stdout)
    if args.out:
        print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    config = _game_config(cfg, mode="collection", time_constraint_s=args.time_constraint)
    recruitment = _recruitment(cfg)
    behavior = _behavior(cfg)
    tasks = load_corpus(args.corpus)
    timelines = []
    per_policy: dict[str, tuple[ScoreCounts, list[float]]] = {
        p: (ScoreCounts(), []) for p in POLICIES
    }
    for idx, task in enumerate(tasks):
        trial = run_trial(task, config, recruitment, behavior, seed=args.seed + idx)
        timelines.append(trial.timeline)
        for policy in POLICIES:
            outcome = aggregate(trial.events, config_for_policy(config, policy))
            counts, times = per_policy[policy]
            counts.add(score_outcome(outcome.label, task.gold))
            times.append(outcome.decision_offset_s)
    stats = summarize_timeline(timelines)
    payload = {
        "n_trials": len(tasks),
        "timeline": {
            name: {
                "mean": getattr(stats, name)[0] if getattr(stats, name) else None,
                "stdev": getattr(stats, name)[1] if getattr(stats, name) else None,
                "absent_fraction": stats.absent_fraction[name],
            }
            for name in ("first_worker_s", "first_answer_s", "first_match_s")
        },
        "policies": {
            policy: {
                "accuracy": score_accuracy(counts),
                "mean_response_s": mean(times) if times else None,
                "stdev_response_s": pstdev(times) if times else None,
            }
            for policy, (counts, times) in per_policy.items()
        },
    }
    _write_out(payload, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    config = _game_config(cfg, mode="collection", time_constraint_s=args.time_constraint)
    behavior = (
        _behavior(cfg)
        if cfg.get("behavior")
        else behavior_preset(correct=args.correct, latency_median_s=args.latency_median)
    )
    tasks = load_corpus(args.corpus)
    lo, hi = (int(x) for x in args.k.split(":"))
    games = [
        GameStreams(
            gold=task.gold,
            events_by_worker=simulate_answer_streams(
                task, args.workers, behavior, config, seed=args.seed + idx
            ),
        )
        for idx, task in enumerate(tasks)
    ]
    rows = tradeoff_sweep(
        games,
        range(lo, hi + 1),
        POLICIES,
        config,
        rounds=args.rounds,
        seed=args.seed,
    )
    write_sweep_table(rows, args.out or sys.stdout)
    if args.out:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    fw, fa, fm = (float(x) for x in args.targets.split(","))
    result = calibrate(
        TimelineStats.from_means(fw, fa, fm),
        search_budget=args.budget,
        seed=args.seed,
        trials_per_candidate=args.trials,
    )
    payload = {
        "recruitment": asdict(result.recruitment),
        "behavior": asdict(result.behavior),
        "achieved": {
            name: list(getattr(result.achieved, name)) if getattr(result.achieved, name) else None
            for name in ("first_worker_s", "first_answer_s", "first_match_s")
        },
        "max_rel_error": result.rel_error,
    }
    _write_out(payload, args.out)
    return 0


def cmd_replay(args) -> int:
    from .gateway import GatewayService

    service = GatewayService(mode="sim", seed=args.seed)
    gazetteer = Gazetteer.from_file(args.gazetteer) if args.gazetteer else None
    sessions, report = service.replay_log(
        args.log,
        corpus_path=args.corpus,
        policy=args.policy,
        i=args.i,
        gazetteer=gazetteer,
        resample_k=args.k,
        resample_rounds=args.rounds,
        resample_seed=args.seed,
    )
    payload = {
        "n_sessions": len(sessions),
        "outcomes": {
            gid: (s.outcome.to_record() if s.outcome else None) for gid, s in sessions.items()
        },
    }
    if report is not None:
        payload["report"] = report.to_record()
    _write_out(payload, args.out)
    return 0


def cmd_score(args) -> int:
    tasks = {t.task_id: t for t in load_corpus(args.corpus)}
    gazetteer = Gazetteer.from_file(args.gazetteer) if args.gazetteer else None
    scored = []
    with open(args.pred, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            task = tasks.get(record.get("task_id"))
            if task is None:
                print(f"warning: line {line_no}: unknown task_id, skipped", file=sys.stderr)
                continue
            label = record.get("label")
            label = normalize(label) if label else None
            scored.append((label, task, float(record.get("response_s", 0.0))))
    report = build_report(scored, gazetteer)
    _write_out({"n_scored": len(scored), "report": report.to_record()}, args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .gateway import GatewayService, create_app

    cfg = _load_config(args.config)
    service = GatewayService(
        mode=args.mode,
        seed=args.seed,
        log_path=args.log,
        game_config=_game_config(cfg),
        recruitment=_recruitment(cfg) if cfg.get("recruitment") else None,
        behavior=_behavior(cfg) if cfg.get("behavior") else None,
    )
    service.start_sweeper()
    app = create_app(service)
    try:
        uvicorn.run(app, host=args.host, port=args.port)
    finally:
        service.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialog-esp")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=int(os.environ.get("SEED", "0")))
        p.add_argument("--config", help="JSON parameter file")
        p.add_argument("--out", help="output file path")

    p = sub.add_parser("gen-corpus", help="generate a synthetic chat corpus")
    common(p)
    p.add_argument("--profiles", type=int, default=10)

    p = sub.add_parser("simulate", help="run end-to-end simulated games over a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--time-constraint", type=float, default=60.0)

    p = sub.add_parser("sweep", help="accuracy/latency trade-off sweep")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--workers", type=int, default=10)
    p.add_argument("--k", default="2:10", help="player range lo:hi")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--correct", type=float, default=0.8)
    p.add_argument("--latency-median", type=float, default=6.0)
    p.add_argument("--time-constraint", type=float, default=20.0)

    p = sub.add_parser("calibrate", help="fit crowd model to timeline targets")
    common(p)
    p.add_argument("--targets", default="30.83,37.14,40.95")
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--trials", type=int, default=250)

    p = sub.add_parser("replay", help="rebuild sessions from an event log")
    common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--corpus")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--i", type=int)
    p.add_argument("--gazetteer")
    p.add_argument("--k", type=int, help="resample player subsets of this size")
    p.add_argument("--rounds", type=int, default=20)

    p = sub.add_parser("score", help="score external predictions against a corpus")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--gazetteer")

    p = sub.add_parser("serve", help="run the HTTP gateway")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("PORT", "8080")))
    p.add_argument("--mode", choices=("sim", "live"), default=os.environ.get("MODE", "sim"))
    p.add_argument("--log", default="events.log")

    return parser


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "replay": cmd_replay,
    "score": cmd_score,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
