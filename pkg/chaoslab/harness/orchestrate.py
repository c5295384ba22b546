from __future__ import annotations

import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from loguru import logger
from pydantic import BaseModel, ConfigDict

from ..crawler.assertions import DefaultClassifier, RemoteClassifier, VisualClassifier
from ..crawler.flows import FlowDefinition, load_flow
from ..crawler.policy import DefaultPolicy, Policy, RemotePolicy
from ..crawler.runner import RunResult, run_flow
from ..db import get_sessionmaker, init_db
from ..errors import ArchiveError, ConfigError
from ..havoc import HavocHeaders
from ..rca.baseline import BaselineStats, compute_baseline_stats
from ..rca.categorize import Categorizer, build_categorizer
from ..rca.detect import RemoteInspector, ScreenInspector
from ..rca.pipeline import RcaReport, analyze_run
from ..rca.scoring import DEFAULT_WEIGHTS, ScoreWeights
from ..rca.tickets import Comparison, Ticket, compare_with_baseline, emit_ticket
from ..runlog import read_runlog
from ..settings import settings
from ..simmesh import RpcRecord
from ..topology import EdgeRef, Topology, load_topology_file, plant_violation
from .archive import (
    RUNLOG,
    RunArchive,
    checked_file,
    havoc_run_tag,
    list_archives,
    load_archive,
    new_run_id,
    register_archive,
    write_archive,
)
from .scenarios import Scenario


class PairRun(BaseModel):
    """One baseline/chaos pair before persistence."""

    model_config = ConfigDict(frozen=True)

    scenario: Scenario
    repeat: int
    seed: int
    baseline_run_id: str
    chaos_run_id: str
    baseline_headers: HavocHeaders
    chaos_headers: HavocHeaders
    baseline: RunResult
    baseline_log: tuple[RpcRecord, ...]
    chaos: RunResult
    chaos_log: tuple[RpcRecord, ...]
    comparison: Comparison | None = None
    report: RcaReport | None = None
    ticket: Ticket | None = None


class PairOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    baseline: RunArchive
    chaos: RunArchive
    ticket: Ticket | None = None


class Orchestrator:
    """Runs scenario pairs, analyzes chaos failures and stores the archives.

    Pairs run in a thread pool; analysis needs the corpus baseline stats,
    so it happens after every pair of a batch has executed.
    """

    def __init__(
        self,
        *,
        archive_root: str | Path | None = None,
        workers: int | None = None,
        classifier_mode: str | None = None,
        weights: ScoreWeights = DEFAULT_WEIGHTS,
        policy: Policy | None = None,
        classifier: VisualClassifier | None = None,
    ):
        self.archive_root = Path(archive_root) if archive_root is not None else settings.archive_root
        self.workers = max(1, workers or settings.workers)
        self.mode = classifier_mode or settings.classifier_mode
        self.weights = weights
        self.policy = policy or self._default_policy()
        self.classifier = classifier or self._default_classifier()
        self._topologies: dict[tuple[str, tuple[EdgeRef, ...]], Topology] = {}
        self._flows: dict[str, FlowDefinition] = {}
        self._lock = threading.Lock()

    def _default_policy(self) -> Policy:
        if self.mode == "external" and settings.policy_url:
            return RemotePolicy(settings.policy_url)
        return DefaultPolicy()

    def _default_classifier(self) -> VisualClassifier:
        if self.mode == "external":
            if not settings.classifier_url:
                raise ConfigError("external classifier mode needs CHAOSLAB_CLASSIFIER_URL")
            return RemoteClassifier(settings.classifier_url)
        return DefaultClassifier()

    def inspector(self) -> ScreenInspector | None:
        if self.mode == "external" and settings.classifier_url:
            return RemoteInspector(settings.classifier_url)
        return None

    def topology(self, path: str, planted: tuple[EdgeRef, ...] = ()) -> Topology:
        """The topology file with the given violations planted."""
        key = (path, tuple(planted))
        with self._lock:
            if key not in self._topologies:
                topology = self._topologies.get((path, ())) or load_topology_file(path)
                for edge in planted:
                    topology = plant_violation(topology, edge)
                self._topologies[key] = topology
            return self._topologies[key]

    def flow(self, path: str) -> FlowDefinition:
        with self._lock:
            if path not in self._flows:
                self._flows[path] = load_flow(path)
            return self._flows[path]

    def categorizer(self, topology: Topology, flow_path: str) -> Categorizer:
        flow = self.flow(flow_path)
        return build_categorizer(
            self.mode,
            topology,
            keywords={flow.flow_id: list(flow.keywords)},
            url=settings.classifier_url,
        )

    def execute(self, scenario: Scenario, repeat: int = 0) -> PairRun:
        """Baseline (test tenancy, no faults) then chaos (scenario faults), same seed."""
        topology = self.topology(scenario.topology_path, scenario.planted_violations)
        flow = self.flow(scenario.flow_path)
        seed = scenario.repeat_seed(repeat)
        base_h = HavocHeaders(tenancy="test", faults=(), run_id=havoc_run_tag(scenario.scenario_id, "baseline", repeat))
        chaos_h = HavocHeaders(
            tenancy="test",
            faults=scenario.faults,
            run_id=havoc_run_tag(scenario.scenario_id, "chaos", repeat),
        )
        baseline, baseline_log = run_flow(flow, topology, base_h, self.policy, seed, classifier=self.classifier)
        chaos, chaos_log = run_flow(flow, topology, chaos_h, self.policy, seed, classifier=self.classifier)
        logger.debug("Pair {} r{}: baseline {} chaos {}", scenario.scenario_id, repeat, baseline.label, chaos.label)
        return PairRun(
            scenario=scenario,
            repeat=repeat,
            seed=seed,
            baseline_run_id=new_run_id(scenario.scenario_id, "baseline", repeat),
            chaos_run_id=new_run_id(scenario.scenario_id, "chaos", repeat),
            baseline_headers=base_h,
            chaos_headers=chaos_h,
            baseline=baseline,
            baseline_log=tuple(baseline_log),
            chaos=chaos,
            chaos_log=tuple(chaos_log),
        )

    def analyze(self, pair: PairRun, stats: BaselineStats) -> PairRun:
        comparison = compare_with_baseline(pair.chaos, pair.baseline)
        if comparison is None:
            return pair
        topology = self.topology(pair.scenario.topology_path, pair.scenario.planted_violations)
        log = list(pair.chaos_log)
        report = analyze_run(
            pair.chaos, log, topology, stats, self.categorizer(topology, pair.scenario.flow_path),
            inspector=self.inspector(), weights=self.weights,
        )
        ticket = emit_ticket(
            pair.chaos_run_id,
            pair.chaos,
            report.ranking,
            list(report.root_causes),
            report.detection.findings,
            comparison,
            log,
            topology,
            weights=self.weights,
        )
        return pair.model_copy(update={"comparison": comparison, "report": report, "ticket": ticket})

    @staticmethod
    def corpus_stats(pairs: list[PairRun]) -> dict[str, BaselineStats]:
        """Per-topology stats from every baseline run of the batch (failing ones are skipped)."""
        by_topology: dict[str, list[tuple[RunResult, list[RpcRecord]]]] = defaultdict(list)
        for p in pairs:
            by_topology[p.scenario.topology].append((p.baseline, list(p.baseline_log)))
        return {name: compute_baseline_stats(runs) for name, runs in sorted(by_topology.items())}

    def sweep(self, scenarios: list[Scenario]) -> list[PairRun]:
        """Execute and analyze every (scenario, repeat) without touching disk."""
        jobs = [(s, r) for s in scenarios for r in range(s.repeat_count)]
        if self.workers == 1 or len(jobs) <= 1:
            pairs = [self.execute(s, r) for s, r in jobs]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                pairs = list(pool.map(lambda job: self.execute(*job), jobs))
        stats = self.corpus_stats(pairs)
        analyzed = [self.analyze(p, stats[p.scenario.topology]) for p in pairs]
        tickets = sum(1 for p in analyzed if p.ticket is not None)
        logger.info("Swept {} pairs over {} scenarios; {} tickets", len(analyzed), len(scenarios), tickets)
        return analyzed

    def persist(self, pair: PairRun) -> PairOutcome:
        common = dict(scenario=pair.scenario, repeat=pair.repeat, seed=pair.seed)
        baseline = write_archive(
            self.archive_root, role="baseline", headers=pair.baseline_headers,
            result=pair.baseline, merged_log=list(pair.baseline_log), run_id=pair.baseline_run_id, **common,
        )
        chaos = write_archive(
            self.archive_root, role="chaos", headers=pair.chaos_headers,
            result=pair.chaos, merged_log=list(pair.chaos_log), report=pair.report, ticket=pair.ticket,
            comparison=pair.comparison, run_id=pair.chaos_run_id, **common,
        )
        SessionLocal = get_sessionmaker(self.archive_root)
        with SessionLocal() as session:
            register_archive(session, baseline)
            register_archive(session, chaos, pair.ticket)
            session.commit()
        return PairOutcome(baseline=baseline, chaos=chaos, ticket=pair.ticket)

    def run_pair(self, scenario: Scenario, repeat: int = 0, stats: BaselineStats | None = None) -> PairOutcome:
        """Single pair; without corpus stats the pair's own baseline supplies them."""
        init_db(self.archive_root)
        pair = self.execute(scenario, repeat)
        if stats is None:
            stats = self.corpus_stats([pair])[scenario.topology]
        return self.persist(self.analyze(pair, stats))

    def run(self, scenarios: list[Scenario]) -> list[PairOutcome]:
        init_db(self.archive_root)
        # persisted in scenario order so the catalog reads back deterministically
        outcomes = [self.persist(p) for p in self.sweep(scenarios)]
        logger.info("Stored {} archives under {}", 2 * len(outcomes), self.archive_root)
        return outcomes


def reanalyze_archive(
    archive_root: str | Path,
    run_id: str,
    *,
    classifier_mode: str | None = None,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
) -> tuple[RcaReport, Ticket | None]:
    """RCA over a stored chaos run, with stats from the stored baselines of its topology."""
    root = Path(archive_root)
    archive = load_archive(root / run_id)
    if archive.role != "chaos":
        raise ArchiveError(f"{run_id} is a baseline run; RCA needs a chaos run", entity=run_id)
    chaos = read_runlog(checked_file(archive, "runlog", RUNLOG))

    baselines = [a for a in list_archives(root) if a.role == "baseline" and a.topology == archive.topology]
    runs = {a.run_id: read_runlog(checked_file(a, "runlog", RUNLOG)) for a in baselines}
    stats = compute_baseline_stats((r.result, list(r.records)) for r in runs.values())
    paired = next(
        (runs[a.run_id].result for a in baselines if a.scenario_id == archive.scenario_id and a.repeat == archive.repeat),
        None,
    )

    orch = Orchestrator(archive_root=root, classifier_mode=classifier_mode, weights=weights)
    topology = orch.topology(archive.topology_path, tuple(archive.planted))
    categorizer = orch.categorizer(topology, archive.flow_path)
    log = list(chaos.records)
    report = analyze_run(chaos.result, log, topology, stats, categorizer, inspector=orch.inspector(), weights=weights)
    comparison = compare_with_baseline(chaos.result, paired)
    ticket = None
    if comparison is not None:
        ticket = emit_ticket(
            run_id, chaos.result, report.ranking, list(report.root_causes),
            report.detection.findings, comparison, log, topology, weights=weights,
        )
    logger.info("Re-analyzed {}: {} root causes", run_id, len(report.root_causes))
    return report, ticket
