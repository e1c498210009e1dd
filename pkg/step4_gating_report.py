"""Step 4: Compare the two GNSS gating methods over several simulated scenarios."""
import os
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import replace

from fusion.errors import InputError
from fusion.estimator import EstimatorConfig, MODE_FUSED, run_estimator
from fusion.gating import METHOD_GNSS, METHOD_MIXED, GatingRun, gating_cost_report, gating_recall
from fusion.metrics import align_rigid, compute_ate
from fusion.simulator import simulate
from utils.data_io import GATE_LOG_FILE, write_gate_log, write_manifest, write_results_csv
from utils.validation import scenario_from_config


logger = logging.getLogger(__name__)

GATING_COLUMNS = [
    'sequence', 'method', 'executions', 'mean_time_ms', 'ate',
    'all_filtered', 'partially_filtered', 'not_filtered', 'recall', 'false_removal',
]
DEFAULT_OUTLIER_RATE = 0.2


def gating_scenarios(config, count):
    """`count` scenario variants differing in seed; outliers are always injected."""
    base = scenario_from_config(config)
    if base.outlier_rate <= 0.0:
        base = replace(base, outlier_rate=DEFAULT_OUTLIER_RATE)
    return [replace(base, seed=base.seed + i, name=f'{base.name}_{i + 1}') for i in range(count)]


def _outlier_index(gnss_truth):
    outliers = {}
    for record in gnss_truth:
        if record.outlier_bias:
            outliers.setdefault(record.epoch_index, set()).add(record.sat_id)
    return outliers


def compare_scenario(scenario, estimator_config, output_dir=None):
    """Simulate once, then run the fused estimator with each gating method."""
    simulation = simulate(scenario)
    gt = simulation.dataset.ground_truth
    outliers = _outlier_index(simulation.gnss_truth)
    runs, extras = [], []
    for method in (METHOD_GNSS, METHOD_MIXED):
        config = replace(estimator_config, gating_method=method, mode=MODE_FUSED)
        result = run_estimator(simulation.dataset, config, progress=False)
        poses = [pose.as_timed_pose() for pose in result.trajectory()]
        ate = compute_ate(align_rigid(poses, gt), gt)
        runs.append(GatingRun(scenario.name, method, result.gate_reports, ate))
        extras.append(gating_recall(result.gate_reports, outliers))
        if output_dir:
            run_dir = os.path.join(output_dir, scenario.name, method)
            os.makedirs(run_dir, exist_ok=True)
            write_gate_log(os.path.join(run_dir, GATE_LOG_FILE), result.gate_reports)
        logger.info(f"{scenario.name}/{method}: ATE {ate:.3f} m over {len(result.gate_reports)} gated epochs")
    return runs, extras


def run_step4(config, output_dir=None, force=False, config_path=None):
    """Run step 4: write gating_report.csv.

    Returns:
        (path to the CSV, rows)
    """
    evaluation = config.get('evaluation') or {}
    count = int(evaluation.get('gating_scenarios', 4))
    workers = max(1, int(evaluation.get('workers', 1) or 1))
    if count < 1:
        raise InputError("evaluation.gating_scenarios must be at least 1")
    if output_dir is None:
        output_dir = os.path.join(config['paths']['output_dir'], 'gating')
    report_file = os.path.join(output_dir, 'gating_report.csv')
    if os.path.exists(report_file) and not force:
        logger.info(f"Gating report already exists at {report_file}, skipping step 4")
        return report_file, []

    estimator_config = EstimatorConfig.from_dict(config.get('estimator'))
    scenarios = gating_scenarios(config, count)
    results = {}

    if workers > 1 and len(scenarios) > 1:
        logger.info(f"Step 4: comparing gating on {len(scenarios)} scenarios with workers={workers}")
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(compare_scenario, scenario, estimator_config, output_dir): scenario.name
                for scenario in scenarios
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()
    else:
        for scenario in scenarios:
            results[scenario.name] = compare_scenario(scenario, estimator_config, output_dir)

    rows = []
    for scenario in scenarios:
        runs, extras = results[scenario.name]
        for row, (recall, false_rate) in zip(gating_cost_report(runs), extras):
            row.update({'recall': recall, 'false_removal': false_rate})
            rows.append(row)

    os.makedirs(output_dir, exist_ok=True)
    write_results_csv(report_file, rows, columns=GATING_COLUMNS)
    write_manifest(output_dir, {
        'command': 'compare-gating',
        'config_path': config_path,
        'seed': scenarios[0].seed,
        'scenarios': [s.name for s in scenarios],
        'gating_method': [METHOD_GNSS, METHOD_MIXED],
        'mode': MODE_FUSED,
        'output_dir': output_dir,
    })
    logger.info(f"Step 4 complete: {report_file}")
    return report_file, rows


if __name__ == '__main__':
    import yaml

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    with open('config.yaml', 'r', encoding='utf-8') as f:
        config = yaml.safe_load(f)

    run_step4(config, force=True)
