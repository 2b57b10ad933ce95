"""
Plot ready CSV tables of the pipeline results. Every column that carries a unit names it in its header
(``_mm``, ``_kPa``); Poisson's ratio, R2 and attributions are dimensionless.
"""

import pandas as pd

from metapatch import geometry


def _design_columns(prefix, record):
    if record is None:
        return {'{}_{}_mm'.format(prefix, k): float('nan') for k in geometry.DESIGN_VARIABLES}
    return {'{}_{}_mm'.format(prefix, k): record[k] for k in geometry.DESIGN_VARIABLES}


def _mae_columns(prefix, group):
    return {'{}_mae_nu'.format(prefix): group.get('mae_nu'),
            '{}_mae_sigma_kPa'.format(prefix): group.get('mae_sigma_kPa')}


def table_single(design_results, ga_results):
    """
    One row per target: true design, design model proposal and GA proposal with their MAEs.

    :param design_results: list of {'source', 'true', 'proposal'} records of a single design model
    :param ga_results: list of records of the same targets from the GA stage
    """
    ga_by_source = {r['source']: r for r in ga_results}

    rows = []
    for res in design_results:
        group = res['proposal']['groups'][0]
        row = {'target': res['source']}
        row.update(_design_columns('true', res.get('true')))
        row.update(_design_columns('model', group))
        row.update(_mae_columns('model', group))

        ga = ga_by_source.get(res['source'])
        ga_group = ga['proposal']['groups'][0] if ga is not None else {}
        row.update(_design_columns('ga', ga_group if ga is not None else None))
        row.update(_mae_columns('ga', ga_group))
        rows.append(row)

    return pd.DataFrame(rows)


def table_multi(design_result, ga_result=None):
    """
    One row per proposed group for a single target: design model groups next to the best distinct GA individuals.
    """
    ga_groups = ga_result['proposal']['groups'] if ga_result is not None else []

    rows = []
    for k, group in enumerate(design_result['proposal']['groups']):
        row = {'target': design_result['source'], 'group': k + 1}
        row.update(_design_columns('true', design_result.get('true')))
        row.update(_design_columns('model', group))
        row.update(_mae_columns('model', group))
        row['model_valid'] = group['valid']

        ga_group = ga_groups[k] if k < len(ga_groups) else {}
        row.update(_design_columns('ga', ga_group if ga_group else None))
        row.update(_mae_columns('ga', ga_group))
        rows.append(row)

    return pd.DataFrame(rows)


def r2_summary(predictors):
    """
    R2 and MAE of every surrogate on every split.

    :param predictors: dict target -> CurvePredictor holding its split data
    """
    rows = []
    for target, predictor in predictors.items():
        for split, data in (('train', predictor.train_data), ('val', predictor.val_data),
                            ('test', predictor.test_data)):
            if data is None or len(data[0]) < 2:
                continue
            score = predictor.score(data)
            rows.append({'target': target, 'split': split, 'n': len(data[0]), 'r2': score['r2'],
                         'mae': score['mae'], 'mae_unit': 'kPa' if target == 'sigma' else '-'})
    return pd.DataFrame(rows)


def explain_table(comparison, sensitivity):
    """Paired bars of one surrogate plus the raw slope (curve unit per mm)."""
    table = comparison.copy()
    table.insert(2, 'sensitivity_slope', sensitivity.slopes)
    return table


def write_table(table, filename):
    table.to_csv(filename, index=False, na_rep='NaN')
