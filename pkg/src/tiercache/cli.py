"""Command-line entry point: calibrate, generate, replay, sweep, failover,
drain, spike, serve, report.

All randomness flows from ``--seed`` (no hidden entropy), reports are written
as CSV and/or JSON, and every report the CLI writes can be re-read with the
``report`` subcommand. Exit codes: 0 success, 1 validation/usage error, 2 I/O
or parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigRegistry, load_registry
from .core import ModelCacheConfig, ValidationError
from .server import CacheServer
from .simulator import (
    GeneratorSpec,
    SimConfig,
    SimReport,
    drain_test,
    failover_experiment,
    run,
    spike_test,
    triangle_report,
    ttl_sweep,
)
from .store import CacheStore
from .workload import (
    DEFAULT_CDF_ANCHORS,
    DEFAULT_HIT_RATE_TARGETS,
    InterArrivalModel,
    TraceParseError,
    calibrate,
    default_demand_profile,
    expected_hit_rate,
    generate_trace,
    single_model_profile,
    spread_demand_profile,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _load_pairs(path: str) -> list[tuple[int, float]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(int(t), float(p)) for t, p in data]


def _parse_profile(text: str):
    if text == "default":
        return default_demand_profile()
    if text == "single":
        return single_model_profile()
    if text.startswith("spread:"):
        return spread_demand_profile(int(text.split(":", 1)[1]))
    raise ValidationError(f"unknown profile {text!r} (default|single|spread:N)")


def _base_config(args: argparse.Namespace) -> SimConfig:
    """Build the run config from --config plus any overriding flags."""
    if getattr(args, "config", None):
        config = SimConfig.from_json_file(args.config)
    else:
        profile = _parse_profile(getattr(args, "profile", "single") or "single")
        registry = tuple(
            ModelCacheConfig(model_id=m.model_id,
                             enable_direct=True,
                             direct_ttl_ms=args.direct_ttl_ms,
                             enable_failover=args.failover_ttl_ms > 0,
                             failover_ttl_ms=max(args.failover_ttl_ms,
                                                 args.direct_ttl_ms))
            for m in profile)
        generator = None
        if getattr(args, "model", None):
            generator = GeneratorSpec(args.users, args.horizon_ms,
                                      InterArrivalModel.load(args.model))
        config = SimConfig(registry_configs=registry, demand_profile=profile,
                           generator=generator,
                           warmup_ms=args.warmup_ms or 0)
    if getattr(args, "trace", None):
        config = replace(config, trace_path=args.trace)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "config", None) and args.warmup_ms is not None:
        config = replace(config, warmup_ms=args.warmup_ms)
    return config


def _write_report_csv(report: SimReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(report.to_csv_rows())


def _emit_report(report: SimReport, out: str | None, out_json: str | None) -> None:
    if out:
        _write_report_csv(report, out)
    if out_json:
        Path(out_json).write_text(report.to_json(), encoding="utf-8")
    print(f"serves={report.serves_total} direct_hit_rate={report.direct_hit_rate:.4f} "
          f"fallback_with={report.fallback_rate_with:.5f} "
          f"fallback_without={report.fallback_rate_without:.5f}")


def _cmd_calibrate(args: argparse.Namespace) -> int:
    anchors = _load_pairs(args.anchors) if args.anchors else list(DEFAULT_CDF_ANCHORS)
    targets = (_load_pairs(args.targets) if args.targets
               else list(DEFAULT_HIT_RATE_TARGETS))
    result = calibrate(anchors, targets, k=args.k)
    result.model.save(args.out)
    print(f"calibration ok={result.ok} max_abs_residual={result.max_abs_residual:.4f}")
    for (t, p), residual in zip(anchors, result.anchor_residuals):
        print(f"  anchor t={t}ms target={p:.3f} residual={residual:+.4f}")
    for (ttl, rate), residual in zip(targets, result.hit_residuals):
        print(f"  hit ttl={ttl}ms target={rate:.3f} residual={residual:+.4f}")
    if args.report:
        Path(args.report).write_text(
            json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
    return EXIT_OK


def _cmd_generate(args: argparse.Namespace) -> int:
    model = InterArrivalModel.load(args.model)
    profile = _parse_profile(args.profile)
    trace = generate_trace(model, args.users, args.horizon_ms, profile,
                           args.seed, out_path=args.out)
    print(f"wrote {len(trace)} events for {args.users} users to {args.out}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    config = _base_config(args)
    report = run(config)
    _emit_report(report, args.out, args.json)
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _base_config(args)
    ttls = [int(x) for x in args.ttls.split(",") if x]
    results = ttl_sweep(config, ttls)
    rows = []
    for ttl, report in results:
        row = {
            "direct_ttl_ms": ttl,
            "direct_hit_rate": report.direct_hit_rate,
            "inference_avoided_fraction": report.inference_requests_avoided_fraction,
            "staleness_mean_ms": report.staleness_all_serves_ms_mean,
            "fallback_rate": report.fallback_rate_with,
            "serves": report.serves_total,
        }
        if config.generator is not None:
            row["analytic_hit_rate"] = expected_hit_rate(config.generator.model, ttl)
        rows.append(row)
        print(f"ttl={ttl}ms hit_rate={report.direct_hit_rate:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0]),
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    if args.json:
        payload = {"kind": "ttl_sweep",
                   "results": [{"direct_ttl_ms": ttl, "report": report.to_dict()}
                               for ttl, report in results]}
        Path(args.json).write_text(json.dumps(payload, sort_keys=True, indent=2)
                                   + "\n", encoding="utf-8")
    if args.triangle:
        triangle = triangle_report(results)
        with open(args.triangle, "w", encoding="utf-8", newline="\n") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(triangle[0]),
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(triangle)
    return EXIT_OK


def _cmd_failover(args: argparse.Namespace) -> int:
    config = _base_config(args)
    report = failover_experiment(config, args.failure_rate, args.failover_ttl_ms)
    _emit_report(report, args.out, args.json)
    print(f"failover_hit_rate_among_failures={report.failover_hit_rate_among_failures:.4f}")
    return EXIT_OK


def _cmd_drain(args: argparse.Namespace) -> int:
    config = _base_config(args)
    report = drain_test(config, args.region, args.start_ms, args.end_ms)
    _emit_report(report, args.out, args.json)
    stats = report.scenario
    print(f"pre_drain_mean={stats['pre_drain_mean_hit_rate']:.4f} "
          f"max_deviation={stats['max_abs_deviation_during_drain']:.4f} "
          f"lost={stats['lost_requests']}")
    return EXIT_OK


def _cmd_spike(args: argparse.Namespace) -> int:
    config = _base_config(args)
    report = spike_test(config, args.multiplier, (args.start_ms, args.end_ms))
    _emit_report(report, args.out, args.json)
    print(f"rate_limited={report.events_rate_limited}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    host, _, port_text = args.listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValidationError(f"--listen must be host:port, got {args.listen!r}")
    registry = ConfigRegistry()
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if isinstance(data, dict) and "registry" in data:
            registry = ConfigRegistry(SimConfig.from_dict(data).registry_configs)
        else:
            registry = load_registry(args.config)
    store = CacheStore(max_entries=args.max_entries)
    server = CacheServer((host, int(port_text)), store, registry)
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}")
    server.serve_until_interrupt()
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.input)
    if path.suffix == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
        if not rows or rows[0][0] not in ("metric", "direct_ttl_ms"):
            raise ValidationError(f"unrecognized CSV report {path}")
        for row in rows[1 if rows[0][0] == "metric" else 0:]:
            print(",".join(row))
        return EXIT_OK
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and data.get("kind") == "ttl_sweep":
        for item in data["results"]:
            report = SimReport.from_dict(item["report"])
            print(f"ttl={item['direct_ttl_ms']}ms "
                  f"hit_rate={report.direct_hit_rate:.4f} serves={report.serves_total}")
        return EXIT_OK
    if isinstance(data, dict) and "max_abs_residual" in data:
        print(f"calibration ok={data['ok']} max_abs_residual={data['max_abs_residual']:.4f}")
        return EXIT_OK
    report = SimReport.from_dict(data)
    for key, value in sorted(report.to_dict().items()):
        if not isinstance(value, (dict, list)):
            print(f"{key}={value}")
    return EXIT_OK


def _add_common_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="sim config JSON file")
    parser.add_argument("--trace", help="trace CSV path (overrides config)")
    parser.add_argument("--model", help="inter-arrival model JSON (inline generator)")
    parser.add_argument("--users", type=int, default=1000,
                        help="generated users when no config file is given")
    parser.add_argument("--horizon-ms", type=int, default=3_600_000,
                        help="generated trace horizon in ms")
    parser.add_argument("--warmup-ms", type=int, default=None,
                        help="leading window excluded from report metrics")
    parser.add_argument("--direct-ttl-ms", type=int, default=300_000,
                        help="direct-tier TTL for flag-built registries")
    parser.add_argument("--failover-ttl-ms", type=int, default=3_600_000,
                        help="failover-tier TTL (0 disables the tier)")
    parser.add_argument("--profile", default="single",
                        help="demand profile: default|single|spread:N")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed; all randomness flows from it")
    parser.add_argument("--out", help="report CSV path")
    parser.add_argument("--json", help="report JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiercache",
        description="Two-tier TTL embedding cache: simulator, calibration, server.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit the inter-arrival model")
    p.add_argument("--anchors", help="JSON [[t_ms, probability], ...]")
    p.add_argument("--targets", help="JSON [[ttl_ms, hit_rate], ...]")
    p.add_argument("--k", type=int, default=4, help="mixture components")
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--report", help="calibration report JSON output path")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("generate", help="generate a deterministic trace CSV")
    p.add_argument("--model", required=True, help="inter-arrival model JSON")
    p.add_argument("--users", type=int, required=True, help="user count")
    p.add_argument("--horizon-ms", type=int, required=True,
                   help="trace horizon in ms")
    p.add_argument("--seed", type=int, default=1, help="generation seed")
    p.add_argument("--profile", default="default",
                   help="demand profile: default|single|spread:N")
    p.add_argument("--out", required=True, help="trace CSV output path")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("replay", help="replay a trace through the cache stack")
    _add_common_sim_flags(p)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("sweep", help="hit-rate sweep over direct TTLs")
    _add_common_sim_flags(p)
    p.add_argument("--ttls", default="60000,300000,3600000,21600000,43200000",
                   help="comma-separated direct TTLs in ms")
    p.add_argument("--triangle", help="triangle trade-off CSV output")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("failover", help="failover-tier experiment")
    _add_common_sim_flags(p)
    p.add_argument("--failure-rate", type=float, required=True,
                   help="inference failure probability in (0, 1]")
    p.set_defaults(func=_cmd_failover)

    p = sub.add_parser("drain", help="drain one region for a window")
    _add_common_sim_flags(p)
    p.add_argument("--region", type=int, required=True, help="region index")
    p.add_argument("--start-ms", type=int, required=True, help="window start")
    p.add_argument("--end-ms", type=int, required=True, help="window end")
    p.set_defaults(func=_cmd_drain)

    p = sub.add_parser("spike", help="offered-QPS spike through the rate limiter")
    _add_common_sim_flags(p)
    p.add_argument("--multiplier", type=int, required=True,
                   help="offered-traffic multiplier inside the window")
    p.add_argument("--start-ms", type=int, required=True, help="window start")
    p.add_argument("--end-ms", type=int, required=True, help="window end")
    p.set_defaults(func=_cmd_spike)

    p = sub.add_parser("serve", help="run the wire-protocol cache server")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--config", help="sim config JSON or registry records JSON")
    p.add_argument("--max-entries", type=int, default=None,
                   help="optional store capacity safeguard")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("report", help="re-read and summarize a written report")
    p.add_argument("--in", dest="input", required=True,
                   help="report CSV/JSON written by another subcommand")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except TraceParseError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
