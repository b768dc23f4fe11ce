"""Command-line front end.

Usage: ``soatest [global flags] COMMAND [flags]``.  Global flags may also
follow the command name.

Global flags (defaults in brackets):

  --store PATH        journal file [$SOATEST_STORE or ./soatest-journal.jsonl]
  --parallelism N     agents and worker threads per run [4]
  --timeout-ms N      acquire and dispatch timeout [5000]
  --seed N            default seed for the random strategy [0]
  --format F          report format on stdout, ``table`` or ``machine`` [table]
  --report-out FILE   also write the machine-readable report to FILE

Commands:

  register FILE                       register the descriptors in FILE
  generate --service ID --op NAME     create and store test cases
  plan --service ID --op NAME         bind an oracle and build the client plan
  run --service ID [--fleet FILE]     run every stored case of the services
  regress --modified ID               re-run previously successful cases
  report --run ID                     print the report of a past run
  fleet-up CONFIG                     serve a mock fleet until terminated
  fleet-down                          stop a fleet started by fleet-up

Exit codes: 0 when the command succeeded and every verdict is SUCCESSFUL,
1 when at least one verdict is UNSUCCESSFUL, 2 on usage or configuration
errors.  An empty regression selection is not an error: it prints a
diagnostic and exits 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from contextlib import ExitStack
from pathlib import Path
from typing import Any, Sequence, TextIO

from soatest.engine import Engine, RunConfig
from soatest.errors import DuplicateId, EmptySelection, HarnessError, UnknownService
from soatest.mockfleet import FleetHandle, load_fleet_config, start_fleet
from soatest.monitor import RunReport
from soatest.registry import Registry, ServiceDescriptor, load_descriptors
from soatest.store import Journal
from soatest.testgen import Boundary, ExpectedSource, Explicit, Random, generate_cases, persist_cases
from soatest.values import coerce

log = logging.getLogger(__name__)

STORE_ENV = "SOATEST_STORE"
DEFAULT_STORE = "soatest-journal.jsonl"
DEFAULT_PIDFILE = "soatest-fleet.pid"

EXIT_OK = 0
EXIT_UNSUCCESSFUL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value: Any) -> Any:
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--store", default=default(None), help="journal file")
    parser.add_argument("--parallelism", type=int, default=default(4))
    parser.add_argument("--timeout-ms", type=int, default=default(5000))
    parser.add_argument("--seed", type=int, default=default(0))
    parser.add_argument("--format", choices=("table", "machine"), default=default("table"))
    parser.add_argument("--report-out", default=default(None), help="write the machine-readable report here")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soatest", description="Cross-protocol regression testing for web services.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("register", "register service descriptors from a JSON file")
    p.add_argument("file")
    p.add_argument("--replace", action="store_true", help="update services that are already registered")

    p = command("generate", "generate and store test cases")
    p.add_argument("--service", type=int, required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--strategy", choices=("boundary", "random", "explicit"), default="boundary")
    p.add_argument("--count", type=int, default=10, help="number of random cases")
    p.add_argument("--args", help="JSON list of argument lists for the explicit strategy")
    p.add_argument("--expect", choices=("oracle", "golden", "explicit"), default="oracle")
    p.add_argument("--expected", help="JSON value used with --expect explicit")

    p = command("plan", "bind an oracle and build the client plan")
    p.add_argument("--service", type=int, required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--oracle", help="builtin name (int_add, concat, echo) or module:function")

    p = command("run", "run all stored cases of the given services")
    p.add_argument("--service", type=int, action="append", required=True)
    p.add_argument("--fleet", help="start this mock fleet in-process for the run")
    p.add_argument("--config", help="run configuration JSON file")
    p.add_argument("--run-id")

    p = command("regress", "re-run previously successful cases of modified services")
    p.add_argument("--modified", type=int, action="append", required=True)
    p.add_argument("--fleet", help="start this mock fleet in-process for the run")
    p.add_argument("--config", help="run configuration JSON file")
    p.add_argument("--run-id")

    p = command("report", "show the report of a past run")
    p.add_argument("--run", required=True)

    p = command("fleet-up", "serve a mock fleet until SIGTERM or SIGINT")
    p.add_argument("config")
    p.add_argument("--register", action="store_true", help="register or update the fleet's descriptors")
    p.add_argument("--pidfile", default=DEFAULT_PIDFILE)
    p.add_argument("--addresses-out", help="write the address report to this file")

    p = command("fleet-down", "stop a fleet started with fleet-up")
    p.add_argument("--pidfile", default=DEFAULT_PIDFILE)
    return parser


def _store_path(args: argparse.Namespace) -> str:
    return args.store or os.environ.get(STORE_ENV) or DEFAULT_STORE


def _run_config(args: argparse.Namespace) -> RunConfig:
    base: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read run configuration {args.config}: {exc}") from None
    timeout_s = args.timeout_ms / 1000.0
    base.setdefault("parallelism", args.parallelism)
    base.setdefault("acquire_timeout_s", timeout_s)
    base.setdefault("dispatch_timeout_s", timeout_s)
    if getattr(args, "run_id", None):
        base["run_id"] = args.run_id
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad run configuration: {exc}") from None


def _emit_report(report: RunReport, args: argparse.Namespace) -> int:
    doc = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(doc if args.format == "machine" else report.render_table())
    if args.report_out:
        Path(args.report_out).write_text(doc + "\n", encoding="utf-8")
    return EXIT_OK if report.all_passed else EXIT_UNSUCCESSFUL


def _register_all(
    registry: Registry, descriptors: Sequence[ServiceDescriptor], replace: bool, out: TextIO | None = None
) -> None:
    out = out or sys.stdout
    for d in descriptors:
        try:
            registry.register_service(d)
            print(f"registered service {d.service_id} ({d.protocol.value}, {len(d.endpoints)} endpoint(s))", file=out)
        except DuplicateId:
            if not replace:
                raise
            registry.update_service(d)
            print(f"updated service {d.service_id}", file=out)


def _start_fleet(engine: Engine, path: str, stack: ExitStack) -> FleetHandle:
    fleet = stack.enter_context(start_fleet(load_fleet_config(path)))
    _register_all(engine.registry, fleet.descriptors(), replace=True, out=sys.stderr)
    return fleet


def cmd_register(engine: Engine, args: argparse.Namespace) -> int:
    _register_all(engine.registry, load_descriptors(args.file), args.replace)
    return EXIT_OK


def _json_arg(text: str, flag: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag} is not valid JSON: {exc}") from None


def cmd_generate(engine: Engine, args: argparse.Namespace) -> int:
    descriptor = engine.registry.lookup_service(args.service)
    sig = descriptor.operation(args.op)
    if args.strategy == "explicit":
        if not args.args:
            raise UsageError("--strategy explicit needs --args")
        tuples = _json_arg(args.args, "--args")
        if not isinstance(tuples, list) or not all(isinstance(t, list) for t in tuples):
            raise UsageError("--args must be a JSON list of argument lists")
        strategy: Any = Explicit(tuples)
    elif args.strategy == "random":
        strategy = Random(args.seed, args.count)
    else:
        strategy = Boundary()

    if args.expect == "explicit":
        if args.expected is None:
            raise UsageError("--expect explicit needs --expected")
        expected = ExpectedSource.explicit(coerce(_json_arg(args.expected, "--expected"), sig.return_type))
    elif args.expect == "golden":
        expected = ExpectedSource.golden()
    else:
        expected = ExpectedSource.oracle()

    cases = generate_cases(descriptor, args.op, strategy, expected)
    persist_cases(engine.journal, cases)
    for c in cases:
        print(c.case_id)
    print(f"stored {len(cases)} case(s) for service {args.service} {args.op}", file=sys.stderr)
    return EXIT_OK


def cmd_plan(engine: Engine, args: argparse.Namespace) -> int:
    if args.oracle:
        try:
            plan = engine.codegen.register_oracle(args.service, args.op, args.oracle)
        except (ImportError, AttributeError, LookupError) as exc:
            if isinstance(exc, UnknownService):
                raise
            raise UsageError(f"cannot resolve oracle {args.oracle!r}: {exc}") from None
    else:
        plan = engine.codegen.build_client_plan(args.service, args.op)
    print(f"{plan.plan_id} oracle={plan.oracle_ref or 'none'}")
    return EXIT_OK


def cmd_run(engine: Engine, args: argparse.Namespace) -> int:
    config = _run_config(args)
    with ExitStack() as stack:
        if args.fleet:
            _start_fleet(engine, args.fleet, stack)
        report = engine.run_full(args.service, config)
    return _emit_report(report, args)


def cmd_regress(engine: Engine, args: argparse.Namespace) -> int:
    config = _run_config(args)
    with ExitStack() as stack:
        if args.fleet:
            _start_fleet(engine, args.fleet, stack)
        try:
            report = engine.run_regression(args.modified, config)
        except EmptySelection as exc:
            print(f"soatest: nothing to re-run: {exc}", file=sys.stderr)
            return EXIT_OK
    return _emit_report(report, args)


def cmd_report(engine: Engine, args: argparse.Namespace) -> int:
    return _emit_report(engine.monitor.summarize(args.run), args)


def cmd_fleet_up(engine: Engine, args: argparse.Namespace) -> int:
    stop = threading.Event()

    def on_signal(signum: int, frame: Any) -> None:
        stop.set()

    previous = {s: signal.signal(s, on_signal) for s in (signal.SIGTERM, signal.SIGINT)}
    pidfile = Path(args.pidfile)
    try:
        with start_fleet(load_fleet_config(args.config)) as fleet:
            if args.register:
                _register_all(engine.registry, fleet.descriptors(), replace=True, out=sys.stderr)
            report = json.dumps(fleet.address_report(), sort_keys=True)
            if args.addresses_out:
                Path(args.addresses_out).write_text(report + "\n", encoding="utf-8")
            pidfile.write_text(f"{os.getpid()}\n", encoding="utf-8")
            print(report, flush=True)
            # the journal stays closed while idle so other commands can use it
            engine.journal.close()
            while not stop.wait(0.2):
                pass
    finally:
        for s, handler in previous.items():
            signal.signal(s, handler)
        if pidfile.exists() and pidfile.read_text().strip() == str(os.getpid()):
            pidfile.unlink()
    return EXIT_OK


def cmd_fleet_down(args: argparse.Namespace) -> int:
    pidfile = Path(args.pidfile)
    try:
        pid = int(pidfile.read_text().strip())
    except (OSError, ValueError) as exc:
        raise UsageError(f"no running fleet recorded in {pidfile}: {exc}") from None
    try:
        os.kill(pid, signal.SIGTERM)
    except ProcessLookupError:
        pidfile.unlink(missing_ok=True)
        print(f"fleet process {pid} was not running", file=sys.stderr)
        return EXIT_OK
    deadline = time.monotonic() + 10
    while pidfile.exists() and time.monotonic() < deadline:
        time.sleep(0.05)
    print(f"stopped fleet process {pid}")
    return EXIT_OK


COMMANDS = {
    "register": cmd_register,
    "generate": cmd_generate,
    "plan": cmd_plan,
    "run": cmd_run,
    "regress": cmd_regress,
    "report": cmd_report,
    "fleet-up": cmd_fleet_up,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fleet-down":
            return cmd_fleet_down(args)
        with Journal(_store_path(args)) as journal:
            return COMMANDS[args.command](Engine(journal), args)
    except UsageError as exc:
        print(f"soatest: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HarnessError, ValueError, LookupError, OSError, KeyError) as exc:
        print(f"soatest: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())
