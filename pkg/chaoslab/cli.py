from __future__ import annotations

import argparse
import sys
from pathlib import Path

import uvicorn
from loguru import logger

from .db import init_db
from .errors import ChaosLabError, ScenarioError
from .harness.archive import rootcauses_tsv
from .harness.config import fault_templates, load_harness_config
from .harness.orchestrate import Orchestrator, reanalyze_archive
from .harness.report import write_report
from .harness.scenarios import count_scenarios, dump_scenarios, generate_scenarios, load_scenarios
from .rca.tickets import render_ticket
from .settings import settings
from .topology import dump_topology, load_topology_file


def error_line(code: str, message: str) -> str:
    return f'error code={code} message="{message.replace(chr(34), chr(39))}"'


class ChaosLabParser(argparse.ArgumentParser):
    def error(self, message: str):
        print(error_line("usage", message), file=sys.stderr)
        raise SystemExit(2)


def _scenarios(args) -> list:
    if args.scenarios:
        scenarios = load_scenarios(args.scenarios)
    else:
        scenarios = generate_scenarios(load_harness_config(args.config))
    if args.scenario:
        wanted = set(args.scenario)
        scenarios = [s for s in scenarios if s.scenario_id in wanted]
        missing = wanted - {s.scenario_id for s in scenarios}
        if missing:
            raise ScenarioError(f"unknown scenario: {', '.join(sorted(missing))}", entity=sorted(missing)[0])
    return scenarios


def cmd_gen(args):
    cfg = load_harness_config(args.config)
    if args.count_only:
        n = count_scenarios(len(cfg.flows), len(fault_templates(cfg)), len(cfg.variants), len(cfg.topologies))
        print(n)
        return
    scenarios = generate_scenarios(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_scenarios(scenarios), encoding="utf-8")
    logger.info("Wrote {} scenarios to {}", len(scenarios), out)


def cmd_run(args):
    cfg = load_harness_config(args.config) if args.config else None
    root = args.archive_root or (cfg.archive_root if cfg and cfg.archive_root else None) or settings.archive_root
    orch = Orchestrator(
        archive_root=root,
        workers=args.workers or (cfg.workers if cfg else None),
        classifier_mode=args.classifier_mode or (cfg.classifier_mode if cfg else None),
    )
    outcomes = orch.run(_scenarios(args))
    for o in outcomes:
        print(f"{o.chaos.scenario_id}\tr{o.chaos.repeat}\t{o.baseline.verdict}\t{o.chaos.verdict}\t{o.chaos.digest}")


def cmd_rca(args):
    root = args.archive_root or settings.archive_root
    report, ticket = reanalyze_archive(root, args.run_id, classifier_mode=args.classifier_mode)
    out = rootcauses_tsv(report)
    if ticket is not None:
        out += "\n" + render_ticket(ticket)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
        logger.info("Wrote RCA for {} to {}", args.run_id, args.out)
    else:
        print(out)


def cmd_eval(args):
    metrics = write_report(args.archives, args.out)
    logger.info("Evaluated {} runs", metrics.runs)


def cmd_topo_check(args):
    topology = load_topology_file(args.path)
    violations = list(topology.violations())
    logger.info("{}: {} services, {} declared violations", args.path, len(topology.services), len(violations))
    if args.dump:
        print(dump_topology(topology))


def cmd_serve(args):
    init_db()
    uvicorn.run("chaoslab.api:app", host=args.host, port=args.port, reload=args.reload)


def build_parser() -> argparse.ArgumentParser:
    p = ChaosLabParser(prog="chaoslab")
    p.add_argument("--log-level", default=None, help="override CHAOSLAB_LOG_LEVEL")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=ChaosLabParser)

    s0 = sub.add_parser("gen", help="Generate the scenario list from a harness config")
    s0.add_argument("--config", required=True)
    s0.add_argument("--out", default="data/scenarios.yaml")
    s0.add_argument("--count-only", action="store_true", help="print the cross-product size only")
    s0.set_defaults(func=cmd_gen)

    s1 = sub.add_parser("run", help="Run baseline/chaos pairs and write archives")
    src = s1.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--scenarios", help="scenario list written by gen")
    s1.add_argument("--scenario", action="append", help="only this scenario id (repeatable)")
    s1.add_argument("--archive-root", default=None)
    s1.add_argument("--workers", type=int, default=None)
    s1.add_argument("--classifier-mode", choices=["oracle", "degraded", "external"], default=None)
    s1.set_defaults(func=cmd_run)

    s2 = sub.add_parser("rca", help="Re-analyze a stored chaos run")
    s2.add_argument("--run-id", required=True)
    s2.add_argument("--archive-root", default=None)
    s2.add_argument("--classifier-mode", choices=["oracle", "degraded", "external"], default=None)
    s2.add_argument("--out", default=None)
    s2.set_defaults(func=cmd_rca)

    s3 = sub.add_parser("eval", help="Compute metrics over an archive set")
    s3.add_argument("--archives", required=True)
    s3.add_argument("--out", default="data/eval")
    s3.set_defaults(func=cmd_eval)

    s4 = sub.add_parser("topo", help="Topology tools")
    topo = s4.add_subparsers(dest="topo_cmd", required=True, parser_class=ChaosLabParser)
    s4c = topo.add_parser("check", help="Validate a topology file")
    s4c.add_argument("path")
    s4c.add_argument("--dump", action="store_true", help="print the normalized topology")
    s4c.set_defaults(func=cmd_topo_check)

    s5 = sub.add_parser("serve", help="Run the FastAPI service")
    s5.add_argument("--host", default="127.0.0.1")
    s5.add_argument("--port", default=8000, type=int)
    s5.add_argument("--reload", action="store_true")
    s5.set_defaults(func=cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level=(args.log_level or settings.log_level).upper())
    try:
        args.func(args)
    except ChaosLabError as e:
        print(error_line(e.code, str(e)), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
