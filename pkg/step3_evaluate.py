"""Step 3: Evaluate estimated trajectories against ground truth."""
import os
import logging

from fusion.errors import InputError
from fusion.metrics import ASSOCIATION_WINDOW, evaluate_trajectory, result_row, trajectory_length
from utils.data_io import ESTIMATE_FILE, read_manifest, read_tum, write_results_csv


logger = logging.getLogger(__name__)


def _resolve_estimate(path):
    """Accept either a run directory or a TUM file; returns (file, approach label)."""
    if os.path.isdir(path):
        manifest = read_manifest(path)
        mode = manifest.get('mode') or os.path.basename(os.path.normpath(path))
        gating = manifest.get('gating_method')
        label = f'{mode}_{gating}' if gating else mode
        return os.path.join(path, ESTIMATE_FILE), label
    return path, os.path.splitext(os.path.basename(path))[0]


def evaluate_files(estimate_paths, gt_path, sequence=None, align=True, max_dt=ASSOCIATION_WINDOW):
    """One results row per estimate, in the order given."""
    if not os.path.isfile(gt_path):
        raise InputError(f"ground truth file not found: {gt_path}")
    gt = read_tum(gt_path)
    if len(gt) < 2:
        raise InputError(f"{gt_path}: need at least two ground-truth poses")
    sequence = sequence or os.path.basename(os.path.dirname(os.path.abspath(gt_path)))
    length = trajectory_length(gt)
    span = (gt[0].stamp, gt[-1].stamp)

    rows = []
    for path in estimate_paths:
        est_file, approach = _resolve_estimate(path)
        if not os.path.isfile(est_file):
            raise InputError(f"estimate file not found: {est_file}")
        est = read_tum(est_file)
        evaluation = evaluate_trajectory(est, gt, align=align, span=span, max_dt=max_dt)
        logger.info(f"{sequence}/{approach}: ATE {evaluation.rmse_translation:.3f} m, "
                    f"completeness {evaluation.completeness:.3f} over {evaluation.pairs} pairs")
        rows.append(result_row(sequence, approach, evaluation, length))
    return rows


def run_step3(config, estimate_paths, gt_path, output_file=None, sequence=None):
    """Run step 3: write the results CSV.

    Returns:
        (path to the CSV, rows)
    """
    evaluation = config.get('evaluation') or {}
    if output_file is None:
        output_file = os.path.join(config['paths']['output_dir'], evaluation.get('results_file', 'results.csv'))
    rows = evaluate_files(
        estimate_paths,
        gt_path,
        sequence=sequence,
        align=evaluation.get('align', True),
        max_dt=evaluation.get('association_window', ASSOCIATION_WINDOW),
    )
    os.makedirs(os.path.dirname(os.path.abspath(output_file)), exist_ok=True)
    write_results_csv(output_file, rows)
    logger.info(f"Step 3 complete: {len(rows)} rows written to {output_file}")
    return output_file, rows


if __name__ == '__main__':
    import sys
    import yaml

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    with open('config.yaml', 'r', encoding='utf-8') as f:
        config = yaml.safe_load(f)

    run_step3(config, sys.argv[2:], sys.argv[1])
