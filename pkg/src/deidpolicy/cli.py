"""Command-line pipeline: validate -> search -> select -> evaluate.

Commands communicate through files only. Every run writes a manifest with
the seed, RNG identity, parameters, and input digests, and all outputs are
deterministic, so a rerun from the same manifest reproduces them byte for
byte regardless of worker count.
"""

from __future__ import annotations

import argparse
import logging
import multiprocessing
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__, planner, reports
from .errors import DeidPolicyError, ValidationError
from .planner import (
    CATEGORIES,
    DEFAULT_GRID,
    PreferenceRule,
    ReleaseDecision,
    SearchTable,
    builtin_k_anonymous_policy,
    category_for,
)
from .population import load_population
from .risk import RiskParams, summarize
from .series import load_case_series, load_forecasts, week_start
from .taxonomy import default_hierarchy, enumerate_policies, load_hierarchy, parse_policy_code

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@dataclass
class RunConfig:
    hierarchy_path: str | None
    population_path: str
    cases_path: str | None
    forecasts_path: str | None
    out_dir: Path
    seed: int
    counties: list[str] | None
    workers: int
    grid: tuple[int, ...]
    params: RiskParams
    preference: PreferenceRule
    withhold_counts_as_meeting: bool
    source: str
    policy_mode: str

    def hierarchy(self):
        if self.hierarchy_path:
            return load_hierarchy(self.hierarchy_path)
        return default_hierarchy()

    def settings(self) -> dict:
        # worker count is deliberately absent: it cannot change any output
        return {
            "seed": self.seed,
            "grid": list(self.grid),
            "params": self.params.snapshot(),
            "preference": {
                "weights": dict(self.preference.weights),
                "tie_order": list(self.preference.tie_order),
            },
            "counties": self.counties,
            "source": self.source,
            "policy": self.policy_mode,
            "withhold_counts_as_meeting": self.withhold_counts_as_meeting,
            "hierarchy": self.hierarchy_path or "builtin:default",
        }

    def input_paths(self) -> dict:
        paths = {"population": self.population_path}
        if self.cases_path:
            paths["cases"] = self.cases_path
        if self.forecasts_path:
            paths["forecasts"] = self.forecasts_path
        if self.hierarchy_path:
            paths["hierarchy"] = self.hierarchy_path
        return paths


def _build_config(args) -> RunConfig:
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValidationError("config file must be a YAML mapping")

    params_doc = dict(doc.get("params") or {})
    for flag, key in (("k", "k"), ("threshold", "threshold"), ("lag", "lagging_days"),
                      ("schedule", "schedule"), ("replicates", "n_replicates")):
        value = getattr(args, flag, None)
        if value is not None:
            params_doc[key] = value
    try:
        params = RiskParams(**params_doc)
    except TypeError as exc:
        raise ValidationError(f"bad params in config: {exc}") from None

    pref_doc = doc.get("preference") or {}
    preference = PreferenceRule(
        weights=dict(pref_doc.get("weights")
                     or {"age": 4.0, "race": 3.0, "ethnicity": 2.0, "sex": 1.0}),
        tie_order=tuple(pref_doc.get("tie_order") or ("age", "race", "sex", "ethnicity")),
    )

    counties = doc.get("counties")
    if getattr(args, "counties", None):
        counties = [c.strip() for c in args.counties.split(",") if c.strip()]
    if counties is not None:
        counties = [str(c) for c in counties]

    population = doc.get("population")
    if not population:
        raise ValidationError("config must name a population file")
    out_dir = getattr(args, "out", None) or doc.get("out") or "out"
    seed = args.seed if getattr(args, "seed", None) is not None else doc.get("seed", 0)
    source = getattr(args, "source", None) or doc.get("source") or "forecast"
    if source not in ("forecast", "actual"):
        raise ValidationError("source must be 'forecast' or 'actual'")
    policy_mode = getattr(args, "policy", None) or doc.get("policy") or "dynamic"

    grid = tuple(int(v) for v in (doc.get("grid") or DEFAULT_GRID))
    workers = getattr(args, "workers", None) or int(doc.get("workers", 1))

    return RunConfig(
        hierarchy_path=doc.get("hierarchy"),
        population_path=str(population),
        cases_path=str(doc["cases"]) if doc.get("cases") else None,
        forecasts_path=str(doc["forecasts"]) if doc.get("forecasts") else None,
        out_dir=Path(out_dir),
        seed=int(seed),
        counties=counties,
        workers=int(workers),
        grid=grid,
        params=params,
        preference=preference,
        withhold_counts_as_meeting=bool(doc.get("withhold_counts_as_meeting", True)),
        source=source,
        policy_mode=str(policy_mode),
    )


def _load_inputs(config: RunConfig, need_cases: bool):
    hierarchy = config.hierarchy()
    pops = load_population(config.population_path, hierarchy)
    if config.counties is not None:
        missing = [c for c in config.counties if c not in pops]
        if missing:
            raise ValidationError(f"counties missing from population file: {missing}")
        pops = {c: pops[c] for c in config.counties}
    cases = None
    if config.cases_path:
        cases = load_case_series(config.cases_path, config.params.schedule)
    elif need_cases:
        raise ValidationError("config must name a case series file for this command")
    return hierarchy, pops, cases


def cmd_validate(config: RunConfig) -> int:
    hierarchy, pops, cases = _load_inputs(config, need_cases=False)
    print(f"hierarchy: {len(enumerate_policies(hierarchy))} policies "
          f"({'x'.join(str(a.n_levels) for a in hierarchy.attributes)} levels)")
    print(f"population: {len(pops)} counties, {sum(p.total for p in pops.values())} residents")
    if cases is not None:
        uncovered = sorted(set(cases) - set(pops))
        if uncovered:
            raise ValidationError(f"case series counties missing population: {uncovered}")
        for fips in sorted(cases):
            s = cases[fips]
            print(f"cases[{fips}]: {len(s)} {s.periodicity} periods "
                  f"{s.start.isoformat()}..{s.end.isoformat()}, total {s.total()}")
    if config.forecasts_path:
        forecasts = load_forecasts(config.forecasts_path)
        n_weeks = sum(len(w) for w in forecasts.values())
        print(f"forecasts: {len(forecasts)} counties, {n_weeks} county-weeks")
        missing = sorted(set(forecasts) - set(pops))
        if missing:
            logger.warning("forecast counties not in population file: %s", missing)
    print("validation clean")
    return EXIT_OK


def _category_slug(label: str) -> str:
    return label.replace(",", "").replace("<", "lt").replace(">", "gt")


def _search_one(task):
    pop, policies, grid, params, seed = task
    return planner.search_county(pop, policies, grid, params, seed)


def _run_tasks(tasks, worker, n_workers: int):
    if n_workers <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    # spawn, not fork: forking after numba's OpenMP pool has run deadlocks
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(min(n_workers, len(tasks))) as pool:
        return pool.map(worker, tasks, chunksize=1)


def cmd_search(config: RunConfig) -> int:
    hierarchy, pops, _ = _load_inputs(config, need_cases=False)
    policies = enumerate_policies(hierarchy)
    out = config.out_dir / "search"
    out.mkdir(parents=True, exist_ok=True)

    tasks = [(pops[f], policies, config.grid, config.params, config.seed)
             for f in sorted(pops)]
    tables = {t.scope: t for t in _run_tasks(tasks, _search_one, config.workers)}

    totals = {f: p.total for f, p in pops.items()}
    categories = planner.summarize_by_category(tables, totals)

    for fips, table in sorted(tables.items()):
        reports.write_search_table_json(table, out / f"county_{fips}.json")
    for label, table in sorted(categories.items()):
        reports.write_search_table_json(table, out / f"category_{_category_slug(label)}.json")
    reports.write_search_tables_csv({**tables, **categories}, out / "search_tables.csv")
    reports.write_manifest(config.out_dir / "search_manifest.json", "search",
                           config.settings(), config.input_paths())
    print(f"searched {len(tables)} counties over {len(config.grid)} volumes -> {out}")
    return EXIT_OK


def _table_for(fips: str, total: int, tables_dir: Path) -> SearchTable:
    county_path = tables_dir / f"county_{fips}.json"
    if county_path.exists():
        return reports.read_search_table_json(county_path)
    cat = category_for(total)
    if cat is not None:
        cat_path = tables_dir / f"category_{_category_slug(cat.label)}.json"
        if cat_path.exists():
            return reports.read_search_table_json(cat_path)
    raise ValidationError(f"no search table for county {fips}; run search first")


def cmd_select(config: RunConfig) -> int:
    hierarchy, pops, cases = _load_inputs(config, need_cases=True)
    policies_by_code = {p.code: p for p in enumerate_policies(hierarchy)}
    forecasts = load_forecasts(config.forecasts_path) if config.forecasts_path else {}
    if config.source == "forecast" and not config.forecasts_path:
        raise ValidationError("select --source forecast requires a forecasts file")
    tables_dir = config.out_dir / "search"

    decisions: list[ReleaseDecision] = []
    failures = []
    for fips in sorted(cases):
        if fips not in pops:
            raise ValidationError(f"county {fips} has cases but no population")
        try:
            table = _table_for(fips, pops[fips].total, tables_dir)
            decisions.extend(planner.plan_decisions(
                table, cases[fips], config.params, config.preference,
                policies_by_code, config.source, forecasts.get(fips),
            ))
        except DeidPolicyError as exc:
            failures.append(f"{fips}: {exc}")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    reports.write_decisions_csv(decisions, config.out_dir / "decisions.csv")
    reports.write_manifest(config.out_dir / "select_manifest.json", "select",
                           config.settings(), config.input_paths())
    print(f"selected {len(decisions)} county-weeks -> {config.out_dir / 'decisions.csv'}")
    if failures:
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _static_decisions(code: str, series) -> list[ReleaseDecision]:
    return [
        ReleaseDecision(series.fips, sunday, code, 0, "static")
        for sunday in series.week_starts()
    ]


def _evaluate_one(task):
    pop, series, decisions, params, policies_by_code, seed, withhold_meets = task
    return planner.evaluate_sequence(
        decisions, series, pop, params, policies_by_code, seed,
        withhold_meets=withhold_meets,
    )


def cmd_evaluate(config: RunConfig) -> int:
    hierarchy, pops, cases = _load_inputs(config, need_cases=True)
    policies_by_code = {p.code: p for p in enumerate_policies(hierarchy)}
    kanon = builtin_k_anonymous_policy(hierarchy)
    policies_by_code[kanon.code] = kanon

    mode = config.policy_mode
    if mode == "dynamic":
        all_decisions = reports.read_decisions_csv(config.out_dir / "decisions.csv")
        by_fips: dict[str, list[ReleaseDecision]] = {}
        for d in all_decisions:
            by_fips.setdefault(d.fips, []).append(d)
        label = "dynamic"
    else:
        code = kanon.code if mode == "k-anon" else parse_policy_code(mode, hierarchy).code
        by_fips = {fips: _static_decisions(code, cases[fips]) for fips in cases}
        label = f"static:{code}"

    tasks = []
    for fips in sorted(cases):
        if fips not in pops:
            raise ValidationError(f"county {fips} has cases but no population")
        if fips not in by_fips:
            raise ValidationError(f"no decisions for county {fips}")
        tasks.append((pops[fips], cases[fips], by_fips[fips], config.params,
                      policies_by_code, config.seed,
                      config.withhold_counts_as_meeting))
    evaluations = _run_tasks(tasks, _evaluate_one, config.workers)

    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    reports.write_risk_report_csv(evaluations, config.params.k, out / "risk_report.csv")
    reports.write_county_summary_csv(evaluations, out / "county_summary.csv")
    reports.write_category_summary_csv(
        _category_rows(evaluations, pops, label, config.params),
        out / "category_summary.csv",
    )
    reports.write_timeseries_csv(
        _timeseries_rows(evaluations, cases, by_fips, config.params),
        out / "timeseries.csv",
    )
    reports.write_manifest(out / "evaluate_manifest.json", "evaluate",
                           config.settings(), config.input_paths())
    print(f"evaluated {len(evaluations)} counties ({label}) -> {out / 'risk_report.csv'}")
    return EXIT_OK


def _category_rows(evaluations, pops, label: str, params) -> list[dict]:
    groups: dict[str, list[float]] = {}
    for report in evaluations:
        cat = category_for(pops[report.fips].total)
        if cat is None or report.proportion is None:
            continue
        groups.setdefault(cat.label, []).append(report.proportion)
    rows = []
    order = {c.label: i for i, c in enumerate(CATEGORIES)}
    for cat_label in sorted(groups, key=order.get):
        values = groups[cat_label]
        mean, lower, upper = summarize(values, params.quantile_range)
        rows.append({
            "category": cat_label, "schedule": params.schedule,
            "policy_mode": label, "n_counties": len(values),
            "mean_proportion": mean, "lower": lower, "upper": upper,
        })
    return rows


def _timeseries_rows(evaluations, cases, by_fips, params) -> list[tuple]:
    rows = []
    lag = params.lagging_days
    for report in sorted(evaluations, key=lambda r: r.fips):
        series = cases[report.fips]
        counts = np.asarray(series.counts, dtype=np.int64)
        decisions = {d.week_start: d.decision for d in by_fips[report.fips]}
        for t in range(len(series)):
            date = series.date_at(t)
            rows.append((report.fips, date, "new_cases", float(counts[t])))
            lo = max(0, t - lag + 1)
            rows.append((report.fips, date, f"rolling_sum_{lag}",
                         float(counts[lo:t + 1].sum())))
            rows.append((report.fips, date, "decision",
                         decisions.get(week_start(date), "")))
        for row in report.rows:
            if row.mean is None:
                continue
            rows.append((report.fips, row.date, "pk_mean", row.mean))
            rows.append((report.fips, row.date, "pk_lower", row.lower))
            rows.append((report.fips, row.date, "pk_upper", row.upper))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deidpolicy",
        description="Forecast re-identification risk and plan data release policies.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("validate", "schema-validate all configured input files"),
        ("search", "find minimal qualifying case volumes per county and policy"),
        ("select", "pick weekly policies from forecasts or actual counts"),
        ("evaluate", "score selected or static policies against actual cases"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--counties", help="comma-separated FIPS filter")
        p.add_argument("--k", type=int, help="group-size threshold")
        p.add_argument("--threshold", type=float, help="maximum acceptable risk")
        p.add_argument("--lag", type=int, help="lagging period in days")
        p.add_argument("--schedule", choices=["daily", "weekly"])
        p.add_argument("--replicates", type=int, help="simulation replicates")
        p.add_argument("--seed", type=int, help="top-level RNG seed")
        p.add_argument("--source", choices=["forecast", "actual"],
                       help="selection statistic source (select)")
        p.add_argument("--policy", help="evaluate: policy CODE, k-anon, or dynamic")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel county workers")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "search": cmd_search,
    "select": cmd_select,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = _build_config(args)
        return COMMANDS[args.command](config)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DeidPolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
