"""
Full scale runs of the default pipeline. Each takes minutes to tens of minutes, select them with -m slow.
"""

import os

import pytest

import numpy as np
import pandas as pd

from metapatch import fileio, geometry, inverse_design, main, mechanics, sampling

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    output = str(tmp_path_factory.mktemp('pipeline'))
    exit_code = main.main(['all', '-o', output])
    return output, exit_code


def read(output, name):
    return fileio.read_json(os.path.join(output, name))


def mean_mae(results, key):
    return float(np.mean([r['proposal']['groups'][0][key] for r in results]))


def test_scaled_designs_have_the_same_curves():
    pool = sampling.generate_pool(sampling.PoolSpec(size=10, seed=21))
    for v in pool:
        small, _ = mechanics.run_tension_test(v)
        large, _ = mechanics.run_tension_test(geometry.validate_design(2. * v.as_array()))
        np.testing.assert_allclose(large.nu, small.nu, rtol=1e-2, atol=1e-6)
        np.testing.assert_allclose(large.sigma, small.sigma, rtol=1e-2)


def test_pipeline_finishes(pipeline):
    output, exit_code = pipeline
    assert exit_code == 0, read(output, 'error.json')


def test_surrogates_reach_r2(pipeline):
    output, _ = pipeline
    summary = pd.read_csv(os.path.join(output, 'r2_summary.csv'))
    test = summary[summary['split'] == 'test'].set_index('target')
    assert test.loc['nu', 'r2'] >= 0.99
    assert test.loc['sigma', 'r2'] >= 0.99


def test_single_design_errors(pipeline):
    output, _ = pipeline
    dataset = fileio.read_dataset(os.path.join(output, 'dataset.json'))
    results = read(output, 'proposals_n1_a1_b1_g0.json')['results']
    assert len(results) == 9

    stress_scale = np.mean(np.abs(dataset.targets('sigma', 'test')))
    assert mean_mae(results, 'mae_nu') <= 0.02
    assert mean_mae(results, 'mae_sigma_kPa') <= 0.05 * stress_scale
    assert all(r['proposal']['groups'][0]['valid'] for r in results)


def test_design_model_beats_ga(pipeline):
    output, _ = pipeline
    model = read(output, 'proposals_n1_a1_b1_g0.json')['results']
    ga = read(output, 'ga_results.json')['results']
    assert mean_mae(model, 'mae_nu') < mean_mae(ga, 'mae_nu')
    assert mean_mae(model, 'mae_sigma_kPa') < mean_mae(ga, 'mae_sigma_kPa')


def test_multi_design_groups_differ(pipeline):
    output, _ = pipeline
    results = read(output, 'proposals_n3_a1_b1_g0.5.json')['results']
    for result in results:
        groups = result['proposal']['groups']
        assert len(groups) == 3
        assert all(g['valid'] for g in groups)
        assert all(g['mae_nu'] <= 0.05 for g in groups)

        raw = [[g['raw'][k] for k in ('lambda', 't', 'A')] for g in groups]
        deviations = inverse_design.pairwise_ratio_deviation(raw)
        assert min(deviations.values()) > 1e-6


def test_explanations_agree(pipeline):
    output, _ = pipeline
    for target in ('nu', 'sigma'):
        report = read(output, 'explain_{}.json'.format(target))
        assert report['rankings_agree'], (report['attribution']['ranking'], report['sensitivity']['ranking'])
        comparison = pd.DataFrame(report['comparison'])
        assert comparison['sensitivity_normalized'].max() == pytest.approx(comparison['attribution'].max())
