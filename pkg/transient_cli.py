#!/usr/bin/env python3
"""
Transient Analysis CLI
======================
Runs scenario files and writes CSV/JSON artifacts.

Usage:
    transient-mac run scenarios/method_accuracy.toml
    transient-mac validate scenarios/backlog_chain_events.toml
    transient-mac list-scenarios

Environment:
    TRANSIENT_WORKERS     worker processes (1 runs replications in-process)
    TRANSIENT_OUTPUT_DIR  base directory overriding each scenario's output_dir
    TRANSIENT_LOG_DIR     log directory (default: logs)
"""
import argparse
import logging
import math
import os
import sys
import time
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from artifacts import ArtifactWriter, sha256_file
from backlog_chain import build_chain, chain_frame, expected_hitting_time_seconds, hitting_times
from coupled_sim import (
    CoupledConfig,
    records_frame,
    run_replications,
    summarize_metric1,
    summarize_metric2,
    trajectory_frame,
)
from dcf_sim import DcfSimConfig, mitigation_hold_mean, phase_delay, phase_throughput, run_replications_sim
from errors import DegenerateSample, StableRegime, ToolkitError
from protocol_models import (
    FixedPointSolution,
    ServiceRateCurve,
    service_rate_curve,
    split_solutions,
    throughput_sweep,
)
from replication import seed_for, worker_count
from stability import assess, stability_limit
from stats import compare_fits, ecdf, fits_frame
from validation import Method, ProtocolSection, Scenario, list_scenarios, load_scenario, validate_scenario_file

logger = logging.getLogger(__name__)

__all__ = ['main', 'run_scenario', 'seed_for', 'ScenarioRunner']


def setup_logging(verbose: bool = False):
    log_dir = os.environ.get('TRANSIENT_LOG_DIR', 'logs')
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s %(levelname)s [%(name)s] %(message)s',
        handlers=[
            RotatingFileHandler(
                os.path.join(log_dir, 'transient.log'),
                maxBytes=10*1024*1024,
                backupCount=5
            ),
            logging.StreamHandler(sys.stderr)
        ],
        force=True,
    )


def _point_tag(label: str, n: int, lam: float) -> str:
    return f"{label}_N{n}_lambda{lam:g}"


def _keyed(frame: pd.DataFrame, **keys) -> pd.DataFrame:
    """Prefix a frame with constant key columns."""
    frame = frame.copy()
    for position, (name, value) in enumerate(keys.items()):
        frame.insert(position, name, value)
    return frame


class ScenarioRunner:
    """Executes one scenario and keeps run statistics."""

    def __init__(self, scenario: Scenario, scenario_hash: str, workers: Optional[int] = None,
                 output_dir: Optional[Path] = None):
        self.scenario = scenario
        self.workers = workers or worker_count()
        self.writer = ArtifactWriter(output_dir or scenario.resolved_output_dir(), scenario.name, scenario_hash)
        self._curves: Dict[Tuple[str, int], ServiceRateCurve] = {}
        self._point_index = 0
        self._fit_summaries: Dict[str, List[dict]] = {}
        self.stats = {
            'start_time': None,
            'points': 0,
            'replications': 0,
            'censored': 0,
            'events': 0,
        }

    def curve(self, section: ProtocolSection, n_max: int) -> ServiceRateCurve:
        key = (section.name, n_max)
        if key not in self._curves:
            self._curves[key] = service_rate_curve(section.to_params(), n_max)
        return self._curves[key]

    def next_point_seed(self) -> int:
        seed = seed_for(self.scenario.master_seed, self._point_index)
        self._point_index += 1
        return seed

    def run(self) -> Path:
        s = self.scenario
        self.stats['start_time'] = time.time()
        logger.info("=" * 70)
        logger.info(f"Scenario '{s.name}' ({s.method.value}): {s.description}")
        logger.info(f"Protocols: {', '.join(p.name for p in s.protocols)}; points: {len(s.points())}; "
                    f"replications: {s.replications}; workers: {self.workers}")
        logger.info("=" * 70)

        handlers = {
            Method.FIXED_POINT: self._run_fixed_point,
            Method.STABILITY: self._run_stability,
            Method.METHOD1: self._run_method1,
            Method.METHOD2: self._run_method2,
            Method.METHOD3: self._run_method3,
            Method.MITIGATION: self._run_mitigation,
        }
        try:
            handlers[s.method]()
        except Exception as e:
            self.writer.mark_failed(e)
            raise
        manifest = self.writer.write_manifest(extra={'method': s.method.value, 'master_seed': s.master_seed})
        self._print_stats()
        return manifest

    def _print_stats(self):
        duration = time.time() - self.stats['start_time']
        logger.info("=" * 70)
        logger.info(f"Sweep points:       {self.stats['points']}")
        logger.info(f"Replications:       {self.stats['replications']}")
        logger.info(f"Censored:           {self.stats['censored']}")
        logger.info(f"Events simulated:   {self.stats['events']:,}")
        logger.info(f"Wall time:          {duration:.1f} s")
        logger.info(f"Artifacts:          {len(self.writer.files)} files in {self.writer.output_dir}")
        logger.info("=" * 70)

    # FixedPoint: aggregate throughput for both initialisations
    def _run_fixed_point(self):
        s = self.scenario
        for section in s.protocols:
            params = section.to_params()
            for n in s.n_values():
                solutions = throughput_sweep(params, n, s.lambdas(), inits=s.inits)
                rows = [{'config': section.name, **sol.as_row()} for sol in solutions]
                self.writer.append_frame('fixed_point.csv', pd.DataFrame(rows))
                self.writer.append_frame('two_solution_window.csv',
                                         pd.DataFrame(self._window_rows(section.name, solutions),
                                                      columns=['config', 'N', 'lambda', 'S_aggregate_saturated',
                                                               'S_aggregate_light', 'relative_gap']))
                self.stats['points'] += len(s.lambdas())

    @staticmethod
    def _window_rows(label: str, solutions: List[FixedPointSolution]) -> List[dict]:
        return [{
            'config': label,
            'N': saturated.N,
            'lambda': lam,
            'S_aggregate_saturated': saturated.aggregate_throughput(),
            'S_aggregate_light': light.aggregate_throughput(),
            'relative_gap': abs(light.S - saturated.S) / max(saturated.S, light.S),
        } for lam, saturated, light in split_solutions(solutions)]

    def _run_stability(self):
        s = self.scenario
        n_max = max(s.n_values())
        for section in s.protocols:
            curve = self.curve(section, n_max)
            self.writer.write_frame(f"curve_{section.name}.csv", pd.DataFrame(curve.as_rows()))
            limits = [{'config': section.name, 'N': n, 'mu_sat': stability_limit(curve.truncated(n))}
                      for n in s.n_values()]
            self.writer.append_frame('stability_limit.csv', pd.DataFrame(limits))
            for n, lam in s.points():
                report = assess(lam, curve.truncated(n))
                self.writer.append_frame('stability.csv',
                                         pd.DataFrame([{'config': section.name, 'N': n, **report.as_row()}]))
                self.stats['points'] += 1

    def _method2_row(self, section: ProtocolSection, n: int, lam: float, curve: ServiceRateCurve,
                     write_chain: bool = True) -> dict:
        row = {'config': section.name, 'N': n, 'lambda': lam, 'N_prime': None, 'h0': math.nan, 'h0_seconds': math.nan}
        try:
            chain = build_chain(n, lam, curve)
        except StableRegime as e:
            logger.warning(f"{section.name} N={n}: {e}")
            return row
        h = hitting_times(chain)
        row.update(N_prime=chain.N_prime, h0=float(h[0]), h0_seconds=expected_hitting_time_seconds(chain, h))
        if write_chain:
            self.writer.write_frame(f"chains/{_point_tag(section.name, n, lam)}.csv", chain_frame(chain, h))
        return row

    def _run_method2(self):
        s = self.scenario
        for section in s.protocols:
            for n, lam in s.points():
                curve = self.curve(section, n)
                row = self._method2_row(section, n, lam, curve)
                self.writer.append_frame('method2.csv', pd.DataFrame([row]))
                self.stats['points'] += 1
                logger.info(f"{section.name} N={n} lambda={lam}: N'={row['N_prime']} h(0)={row['h0']:.4g}")

    def _write_t_e(self, prefix: str, section: ProtocolSection, n: int, lam: float, runs) -> dict:
        """ECDF, fits and summary of T_E for one sweep point."""
        result = summarize_metric2(runs)
        keys = {'config': section.name, 'N': n, 'lambda': lam}
        self.writer.append_frame(f"{prefix}_T_E_ecdf.csv", _keyed(ecdf(result.samples).frame(), **keys))
        if result.samples.size >= 2:
            try:
                fits = compare_fits(result.samples)
            except DegenerateSample as e:
                logger.warning(f"{section.name} N={n} lambda={lam}: no fit ({e})")
            else:
                self.writer.append_frame(f"{prefix}_T_E_fits.csv", _keyed(fits_frame(fits), **keys))
                self._fit_summaries.setdefault(prefix, []).append({**keys, 'fits': [fit.as_dict() for fit in fits]})
                self.writer.write_json(f"{prefix}_T_E_fits.json", self._fit_summaries[prefix])
        summary = {
            **keys,
            'mean_T_E_s': result.mean,
            'mean_T_E_min': result.mean / 60.0,
            'samples': int(result.samples.size),
            'censored': result.censored,
            'undefined': result.undefined,
        }
        self.writer.append_frame(f"{prefix}_metric2.csv", pd.DataFrame([summary]))
        self.stats['censored'] += result.censored
        return summary

    def _run_method1(self):
        s = self.scenario
        for section in s.protocols:
            for n, lam in s.points():
                curve = self.curve(section, n)
                config = CoupledConfig(
                    N=n, Q=s.Q, lam=lam, curve=curve, theta=s.theta, preload=s.preload,
                    max_events=s.max_events, seed=self.next_point_seed(),
                )
                records = run_replications(config, s.replications, self.workers)
                keys = {'config': section.name, 'N': n, 'lambda': lam}
                self.writer.append_frame('method1_replications.csv', _keyed(records_frame(records), **keys))
                self.stats['points'] += 1
                self.stats['replications'] += len(records)
                self.stats['events'] += sum(r.total_events for r in records)

                metric1 = summarize_metric1(records)
                chain_row = self._method2_row(section, n, lam, curve, write_chain=False)
                h0 = chain_row['h0']
                self.writer.append_frame('method1_metric1.csv', pd.DataFrame([{
                    **keys,
                    **metric1.as_row(),
                    'h0': h0,
                    'accuracy_ratio': math.nan if math.isnan(h0) else metric1.accuracy_ratio(h0),
                }]))

                summary = self._write_t_e('method1', section, n, lam, records)
                logger.info(f"{section.name} N={n} lambda={lam}: Metric 1 {metric1.mean_events:.1f} events "
                            f"(h(0)={h0:.1f}), mean T_E {summary['mean_T_E_min']:.2f} min")

                for record in records[:s.trajectories]:
                    tag = _point_tag(section.name, n, lam)
                    self.writer.write_frame(f"trajectories/{tag}_rep{record.seed_index}.csv", trajectory_frame(record))

    def _dcf_config(self, section: ProtocolSection, n: int, lam: float, seed: int, **overrides) -> DcfSimConfig:
        s = self.scenario
        values = dict(
            params=section.to_params(), N=n, Q=s.Q, lam=lam, theta=s.theta, preload=s.preload,
            horizon=s.horizon, throughput_bin=s.throughput_bin, traffic=s.traffic.model,
            burst_size=s.traffic.burst_size, burst_gap=s.traffic.burst_gap, seed=seed,
            stop_at_theta=s.stop_at_theta,
        )
        values.update(overrides)
        return DcfSimConfig(**values)

    def _trace_rows(self, traces, **keys) -> pd.DataFrame:
        rows = []
        for trace in traces:
            before, after = phase_throughput(trace)
            delay_before, delay_after = phase_delay(trace)
            rows.append({
                **keys,
                **trace.summary_row(),
                'throughput_before_bps': before,
                'throughput_after_bps': after,
                'delay_before_s': delay_before,
                'delay_after_s': delay_after,
                'elapsed_s': trace.elapsed,
            })
        return pd.DataFrame(rows)

    def _run_method3(self):
        s = self.scenario
        for section in s.protocols:
            for n, lam in s.points():
                config = self._dcf_config(section, n, lam, self.next_point_seed())
                traces = run_replications_sim(config, s.replications, self.workers)
                keys = {'config': section.name, 'N': n, 'lambda': lam}
                self.writer.append_frame('method3_runs.csv', self._trace_rows(traces, **keys))
                self.stats['points'] += 1
                self.stats['replications'] += len(traces)
                self.stats['events'] += sum(t.empty_slots + t.success_slots + t.collision_slots for t in traces)

                summary = self._write_t_e('method3', section, n, lam, traces)
                logger.info(f"{section.name} N={n} lambda={lam}: mean T_E {summary['mean_T_E_min']:.2f} min "
                            f"({summary['samples']} samples, {summary['censored']} censored)")

                for trace in traces[:s.trajectories]:
                    tag = f"{_point_tag(section.name, n, lam)}_seed{trace.seed}"
                    self.writer.write_frame(f"traces/{tag}_throughput.csv", trace.throughput_frame())
                    self.writer.write_frame(f"traces/{tag}_queues.csv", trace.queue_frame())

    def _run_mitigation(self):
        s = self.scenario
        for section in s.protocols:
            params = section.to_params()
            for n, lam in s.points():
                mu_sat = stability_limit(self.curve(section, n))
                hold = mitigation_hold_mean(mu_sat, n, s.mitigation_factor)
                keys = {'config': section.name, 'N': n, 'lambda': lam}
                seed = self.next_point_seed()

                # non-converged reference points are kept with converged=False
                fixed = throughput_sweep(params, n, [lam], inits=s.inits)
                self.writer.append_frame('mitigation_fixed_point.csv', pd.DataFrame(
                    [{'config': section.name, **sol.as_row()} for sol in fixed]))

                for label, mean_delay in (('without_hold', None), ('with_hold', hold)):
                    config = self._dcf_config(section, n, lam, seed, mitigation_mean_delay=mean_delay,
                                              stop_at_theta=False)
                    traces = run_replications_sim(config, s.replications, self.workers)
                    frame = self._trace_rows(traces, **keys, hold=label, hold_mean_s=mean_delay or 0.0)
                    frame['mean_throughput_bps'] = [t.bits_per_bin.sum() / t.elapsed for t in traces]
                    self.writer.append_frame('mitigation_runs.csv', frame)
                    tag = f"{_point_tag(section.name, n, lam)}_{label}"
                    self.writer.write_frame(f"mitigation/{tag}_throughput.csv", traces[0].throughput_frame())
                    self.stats['replications'] += len(traces)
                    transitioned = sum(1 for t in traces if t.reached_theta)
                    logger.info(f"{section.name} N={n} lambda={lam} {label}: "
                                f"{transitioned}/{len(traces)} runs reached saturation")
                self.stats['points'] += 1


def run_scenario(path, workers: Optional[int] = None, output_dir: Optional[Path] = None) -> Path:
    """Load and run a scenario file; returns the manifest path."""
    scenario = load_scenario(path)
    runner = ScenarioRunner(scenario, sha256_file(Path(path)), workers=workers, output_dir=output_dir)
    return runner.run()


def _cmd_run(args) -> int:
    output_dir = Path(args.output_dir) if args.output_dir else None
    manifest = run_scenario(args.config, workers=args.workers, output_dir=output_dir)
    print(f"Artifacts written; manifest: {manifest}")
    return 0


def _cmd_validate(args) -> int:
    result = validate_scenario_file(args.config)
    if not result.is_valid:
        print(f"INVALID: {result.error_message}")
        return 2
    scenario = result.value
    print(f"OK: {scenario.name} ({scenario.method.value}), {len(scenario.points())} points "
          f"x {len(scenario.protocols)} protocol configs")
    for warning in result.warnings:
        print(f"  warning: {warning}")
    return 0


def _cmd_list(args) -> int:
    entries = list_scenarios(Path(args.dir) if args.dir else None)
    if not entries:
        print("No scenarios found")
        return 0
    width = max(len(name) for name, _, _, _ in entries)
    for name, method, description, _ in entries:
        print(f"  {name:<{width}}  {method:<12} {description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='transient-mac',
        description='Transient analysis of random access MAC protocols above the stability limit',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  transient-mac list-scenarios
  transient-mac validate scenarios/backlog_chain_events.toml
  transient-mac run scenarios/method_accuracy.toml --workers 8
  TRANSIENT_OUTPUT_DIR=/tmp/out transient-mac run scenarios/dcf_two_solutions.toml
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Verbose logging')
    sub = parser.add_subparsers(dest='command', required=True)

    run_parser = sub.add_parser('run', help='Run a scenario file')
    run_parser.add_argument('config', help='Scenario TOML file')
    run_parser.add_argument('-w', '--workers', type=int, default=None,
                            help='Worker processes (default: TRANSIENT_WORKERS or CPU count)')
    run_parser.add_argument('-o', '--output-dir', help='Override the scenario output directory')
    run_parser.set_defaults(handler=_cmd_run)

    validate_parser = sub.add_parser('validate', help='Check a scenario file without running it')
    validate_parser.add_argument('config', help='Scenario TOML file')
    validate_parser.set_defaults(handler=_cmd_validate)

    list_parser = sub.add_parser('list-scenarios', help='List shipped scenarios')
    list_parser.add_argument('--dir', help='Scenario directory (default: bundled scenarios)')
    list_parser.set_defaults(handler=_cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        return args.handler(args)
    except ToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return 130
    except Exception as e:
        logger.error(f"Error: {e}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
