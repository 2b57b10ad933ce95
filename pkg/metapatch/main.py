"""
metapatch command line front end.

Every stage reads the artifacts of the stages before it from the output directory, writes its own artifacts and a
manifest holding the hashes of what it read and wrote, the seeds and the wall time. On failure a machine readable
``error.json`` is written and the process exits with 2 (invalid input) or 3 (stage failure).
"""

import argparse
import logging
import os
import sys
import time

import numpy as np
import pandas as pd

from metapatch import defaults, fileio, mechanics, sampling, predictors, inverse_design, ga_baseline, explain
from metapatch.errors import MetapatchError, RankingDisagreement, StaleArtifact
from metapatch.reporting import tables

logger = logging.getLogger('metapatch')

FILES = {
    'pool': 'pool.json',
    'dataset': 'dataset.json',
    'designs_csv': 'designs.csv',
    'curves_csv': 'curves.csv',
    'solve_traces': 'solve_traces.json',
    'surrogate_nu': 'surrogate_nu.json',
    'surrogate_sigma': 'surrogate_sigma.json',
    'history_nu': 'history_nu.csv',
    'history_sigma': 'history_sigma.csv',
    'ga_results': 'ga_results.json',
    'ga_history': 'ga_history.csv',
    'explain_nu': 'explain_nu.json',
    'explain_sigma': 'explain_sigma.json',
    'table_single': 'table_single.csv',
    'table_multi': 'table_multi.csv',
    'r2_summary': 'r2_summary.csv',
    'explain_nu_csv': 'explain_nu.csv',
    'explain_sigma_csv': 'explain_sigma.csv',
}

# the multi design run of the pipeline: three groups with the scale loss switched on
MULTI_DESIGN = {'n_designs': 3, 'gamma': 0.5}


def _path(setup, name):
    return os.path.join(setup['output'], FILES[name])


def _manifest(setup, stage):
    return os.path.join(setup['output'], 'manifest_{}.json'.format(stage))


def _tag(cfg):
    return 'n{}_a{:g}_b{:g}_g{:g}'.format(cfg.N, cfg.alpha, cfg.beta, cfg.gamma)


def _design_model_path(setup, cfg):
    return os.path.join(setup['output'], 'design_model_{}.json'.format(_tag(cfg)))


def _proposals_path(setup, cfg):
    return os.path.join(setup['output'], 'proposals_{}.json'.format(_tag(cfg)))


def _inverse_setup(setup, args, overrides=None):
    section = dict(setup['inverse'])
    section.update(overrides or {})
    for key, arg in (('n_designs', 'n'), ('alpha', 'alpha'), ('beta', 'beta'), ('gamma', 'gamma')):
        value = getattr(args, arg, None)
        if value is not None and key not in (overrides or {}):
            section[key] = value
    if section['n_designs'] == 1:
        section['gamma'] = 0.
    return section


# { Artifact loading

def load_material(setup):
    if setup['material'] is None:
        return mechanics.Material.linear()
    return mechanics.Material.from_csv(setup['material'])


def load_dataset(setup):
    fileio.check_manifest(_manifest(setup, 'label'), {'dataset': _path(setup, 'dataset')})
    return fileio.read_dataset(_path(setup, 'dataset'))


def load_surrogates(setup, dataset=None):
    files = {'surrogate_nu': _path(setup, 'surrogate_nu'), 'surrogate_sigma': _path(setup, 'surrogate_sigma')}
    fileio.check_manifest(_manifest(setup, 'train-forward'), files)
    surrogates = {}
    for target in predictors.TARGETS:
        p = predictors.CurvePredictor(saved_model=files['surrogate_' + target])
        p.set_data(dataset)
        surrogates[target] = p
    return surrogates


def load_targets(setup, args, dataset):
    """
    Targets of the design and GA stages: the external curve file given with --targets, otherwise the test split.

    :return: list of (source, PropertyCurves, true design or None)
    """
    if getattr(args, 'targets', None):
        return [('file:' + os.path.basename(args.targets), fileio.read_curves_csv(args.targets), None)]
    return [('test:{}'.format(i), dataset.curves[i], dataset.designs[i]) for i in dataset.indices('test')]


def _rescale_for(args, true_design):
    if getattr(args, 'rescale', None) is not None:
        return args.rescale
    return true_design.lam if true_design is not None else None

# }


# { Stages

def stage_sample(setup, args):
    pool_setup = setup['pool']
    spec = sampling.PoolSpec(ranges=pool_setup['ranges'], size=pool_setup['size'], seed=setup['seeds']['pool'])
    pool = sampling.generate_pool(spec)
    picks = sampling.greedy_select(pool, budget=pool_setup['budget'], ranges=pool_setup['ranges'])

    fileio.write_pool(_path(setup, 'pool'), pool, picks, pool_setup['ranges'], {'pool': setup['seeds']['pool']})
    return {}, {'pool': _path(setup, 'pool')}, 'sample'


def stage_label(setup, args):
    fileio.check_manifest(_manifest(setup, 'sample'), {'pool': _path(setup, 'pool')})
    pool, picks, ranges, seeds = fileio.read_pool(_path(setup, 'pool'))

    seeds = dict(seeds, split=setup['seeds']['split'])
    dataset = sampling.label_and_split(pool, picks, material=load_material(setup),
                                       config=mechanics.MechanicsConfig.from_setup(setup['mechanics']),
                                       split_seed=setup['seeds']['split'], n_jobs=setup['n_jobs'],
                                       n_val=setup['split']['n_val'], n_test=setup['split']['n_test'],
                                       ranges=ranges, seeds=seeds)

    fileio.write_dataset(_path(setup, 'dataset'), dataset)
    fileio.export_dataset_csv(dataset, _path(setup, 'designs_csv'), _path(setup, 'curves_csv'))
    fileio.write_solve_traces(_path(setup, 'solve_traces'), dataset)

    inputs = {'pool': _path(setup, 'pool')}
    if setup['material'] is not None:
        inputs['material'] = setup['material']
    outputs = {k: _path(setup, k) for k in ('dataset', 'designs_csv', 'curves_csv', 'solve_traces')}
    return inputs, outputs, 'label'


def stage_train_forward(setup, args):
    dataset = load_dataset(setup)

    outputs = {}
    for target in predictors.TARGETS:
        p = predictors.train_forward_model(dataset, target, setup['forward'], seed=setup['seeds']['nn'],
                                           verbose=args.verbose > 0)
        p.save_model(_path(setup, 'surrogate_' + target))
        p.save_training_history(_path(setup, 'history_' + target))
        outputs['surrogate_' + target] = _path(setup, 'surrogate_' + target)
        outputs['history_' + target] = _path(setup, 'history_' + target)

    return {'dataset': _path(setup, 'dataset')}, outputs, 'train-forward'


def stage_train_inverse(setup, args, overrides=None):
    dataset = load_dataset(setup)
    surrogates = load_surrogates(setup, dataset)

    section = _inverse_setup(setup, args, overrides)
    cfg = inverse_design.InverseLossConfig.from_setup(section)
    model = inverse_design.train_design_model(dataset, surrogates, cfg, hyper=section, seed=setup['seeds']['nn'],
                                              verbose=args.verbose > 0)
    model.save_model(_design_model_path(setup, cfg))

    inputs = {'dataset': _path(setup, 'dataset'), 'surrogate_nu': _path(setup, 'surrogate_nu'),
              'surrogate_sigma': _path(setup, 'surrogate_sigma')}
    return inputs, {'design_model': _design_model_path(setup, cfg)}, 'train-inverse_' + _tag(cfg)


def stage_design(setup, args, overrides=None):
    dataset = load_dataset(setup)
    surrogates = load_surrogates(setup, dataset)

    cfg = inverse_design.InverseLossConfig.from_setup(_inverse_setup(setup, args, overrides))
    model_path = _design_model_path(setup, cfg)
    if not os.path.exists(model_path):
        logger.info("no design model for %s yet, training it", _tag(cfg))
        run_stage(lambda s, a: stage_train_inverse(s, a, overrides), setup, args)
    fileio.check_manifest(_manifest(setup, 'train-inverse_' + _tag(cfg)), {'design_model': model_path})
    model = inverse_design.DesignModel.load_model(model_path)

    results = []
    for source, target, true in load_targets(setup, args, dataset):
        proposal = inverse_design.propose_designs(model, target, surrogates, rescale_to=_rescale_for(args, true))
        results.append({'source': source, 'true': true.to_dict() if true is not None else None,
                        'proposal': proposal.to_dict()})

    fileio.write_json(_proposals_path(setup, cfg), {'results': results, 'config': cfg.to_dict(),
                                                    'seeds': setup['seeds']})

    inputs = {'design_model': model_path}
    if getattr(args, 'targets', None):
        inputs['targets'] = args.targets
    return inputs, {'proposals': _proposals_path(setup, cfg)}, 'design_' + _tag(cfg)


def stage_ga(setup, args):
    dataset = load_dataset(setup)
    surrogates = load_surrogates(setup, dataset)

    ga_setup = dict(setup['ga'])
    if getattr(args, 'population', None) is not None:
        ga_setup['population'] = args.population
    cfg = ga_baseline.GAConfig.from_setup(ga_setup, seed=setup['seeds']['ga'], ranges=dataset.ranges)

    alpha = args.alpha if getattr(args, 'alpha', None) is not None else setup['inverse']['alpha']
    beta = args.beta if getattr(args, 'beta', None) is not None else setup['inverse']['beta']
    weights = inverse_design.InverseLossConfig(alpha=alpha, beta=beta)
    n_top = max(MULTI_DESIGN['n_designs'], getattr(args, 'n', None) or 1)

    results, histories = [], []
    for source, target, true in load_targets(setup, args, dataset):
        target_weights = inverse_design.effective_config(target, weights)
        _, targets_std = inverse_design.standardize_targets(target, surrogates, target_weights)
        result = ga_baseline.evolve(targets_std, surrogates, cfg, alpha=target_weights.alpha,
                                    beta=target_weights.beta)

        top = np.array([p.as_array() for p in result.top_designs(n_top)])
        proposal = inverse_design.evaluate_designs(top, target, surrogates, rescale_to=_rescale_for(args, true),
                                                   config={'population': cfg.population,
                                                           'generations': cfg.generations})
        results.append({'source': source, 'true': true.to_dict() if true is not None else None,
                        'best_fitness': result.best_fitness, 'proposal': proposal.to_dict()})

        history = result.history.copy()
        history.insert(0, 'target', source)
        histories.append(history)

    fileio.write_json(_path(setup, 'ga_results'), {'results': results, 'seeds': setup['seeds'],
                                                   'config': {k: v for k, v in cfg.__dict__.items()}})
    pd.concat(histories, ignore_index=True).to_csv(_path(setup, 'ga_history'), index=False)

    inputs = {'surrogate_nu': _path(setup, 'surrogate_nu'), 'surrogate_sigma': _path(setup, 'surrogate_sigma')}
    return inputs, {'ga_results': _path(setup, 'ga_results'), 'ga_history': _path(setup, 'ga_history')}, 'ga'


def stage_explain(setup, args):
    dataset = load_dataset(setup)
    surrogates = load_surrogates(setup, dataset)

    outputs, reports = {}, []
    for target, predictor in surrogates.items():
        attribution, sensitivity, comparison = explain.explain_model(
            predictor, dataset, setup['explain'], seed=setup['seeds']['explain'], ranges=dataset.ranges)
        table = tables.explain_table(comparison, sensitivity)
        agree = attribution.ranking() == sensitivity.ranking()
        fileio.write_json(_path(setup, 'explain_' + target),
                          {'target': target, 'attribution': attribution.to_dict(),
                           'sensitivity': sensitivity.to_dict(), 'comparison': table.to_dict(orient='records'),
                           'rankings_agree': agree, 'seeds': setup['seeds']})
        outputs['explain_' + target] = _path(setup, 'explain_' + target)
        reports.append((target, attribution, sensitivity))

    # explanations are on disk before a disagreement fails the stage
    if setup['explain']['strict']:
        for target, attribution, sensitivity in reports:
            explain.check_rankings(target, attribution, sensitivity, strict=True)

    inputs = {'surrogate_nu': _path(setup, 'surrogate_nu'), 'surrogate_sigma': _path(setup, 'surrogate_sigma')}
    return inputs, outputs, 'explain'


def stage_report(setup, args):
    dataset = load_dataset(setup)
    surrogates = load_surrogates(setup, dataset)

    single_cfg = inverse_design.InverseLossConfig.from_setup(_inverse_setup(setup, args))
    multi_cfg = inverse_design.InverseLossConfig.from_setup(_inverse_setup(setup, args, MULTI_DESIGN))

    for required in (_proposals_path(setup, single_cfg), _path(setup, 'ga_results')):
        if not os.path.exists(required):
            raise StaleArtifact("{} not found, run the design and ga stages first".format(required))

    single = fileio.read_json(_proposals_path(setup, single_cfg))['results']
    ga = fileio.read_json(_path(setup, 'ga_results'))['results']

    outputs = {}
    tables.write_table(tables.table_single(single, ga), _path(setup, 'table_single'))
    outputs['table_single'] = _path(setup, 'table_single')

    if os.path.exists(_proposals_path(setup, multi_cfg)):
        multi = fileio.read_json(_proposals_path(setup, multi_cfg))['results']
        ga_by_source = {r['source']: r for r in ga}
        tables.write_table(tables.table_multi(multi[0], ga_by_source.get(multi[0]['source'])),
                           _path(setup, 'table_multi'))
        outputs['table_multi'] = _path(setup, 'table_multi')
    else:
        logger.warning("no multi design proposals found, table_multi is not written")

    tables.write_table(tables.r2_summary(surrogates), _path(setup, 'r2_summary'))
    outputs['r2_summary'] = _path(setup, 'r2_summary')

    for target in predictors.TARGETS:
        if not os.path.exists(_path(setup, 'explain_' + target)):
            logger.warning("no explanation for the %s surrogate found", target)
            continue
        comparison = fileio.read_json(_path(setup, 'explain_' + target))['comparison']
        tables.write_table(pd.DataFrame(comparison), _path(setup, 'explain_{}_csv'.format(target)))
        outputs['explain_{}_csv'.format(target)] = _path(setup, 'explain_{}_csv'.format(target))

    inputs = {'proposals': _proposals_path(setup, single_cfg), 'ga_results': _path(setup, 'ga_results')}
    return inputs, outputs, 'report'


def stage_all(setup, args):
    for stage in (stage_sample, stage_label, stage_train_forward):
        run_stage(stage, setup, args)
    for overrides in (None, MULTI_DESIGN):
        run_stage(lambda s, a: stage_train_inverse(s, a, overrides), setup, args)
        run_stage(lambda s, a: stage_design(s, a, overrides), setup, args)
    run_stage(stage_ga, setup, args)
    try:
        run_stage(stage_explain, setup, args)
    except RankingDisagreement:
        # report first, then fail
        stage_report(setup, args)
        raise
    return stage_report(setup, args)


STAGES = {
    'sample': stage_sample,
    'label': stage_label,
    'train-forward': stage_train_forward,
    'train-inverse': stage_train_inverse,
    'design': stage_design,
    'ga': stage_ga,
    'explain': stage_explain,
    'report': stage_report,
    'all': stage_all,
}

# }


def run_stage(stage, setup, args):
    """Run one stage function and write its manifest."""
    os.makedirs(setup['output'], exist_ok=True)
    start = time.time()
    inputs, outputs, name = stage(setup, args)
    wall_time = time.time() - start
    fileio.write_manifest(_manifest(setup, name), name, inputs, outputs, setup['seeds'], wall_time)
    logger.info("stage %s finished in %.1f s", name, wall_time)
    return outputs


def get_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', dest='config', default=None,
                        help='YAML or JSON setup file, missing values are taken from the defaults')
    common.add_argument('-o', '--output', dest='output', default=None,
                        help='Output directory (overrides the setup and METAPATCH_OUTPUT)')
    common.add_argument('--n-jobs', dest='n_jobs', type=int, default=None,
                        help='Worker processes used for labelling')
    common.add_argument('-v', '--verbose', dest='verbose', action='count', default=0,
                        help='-v for progress information, -vv for debug output')

    parser = argparse.ArgumentParser(prog='metapatch',
                                     description='metapatch: inverse design of sinusoidal auxetic patches')
    subparsers = parser.add_subparsers(dest='command')

    for name in STAGES:
        sub = subparsers.add_parser(name, parents=[common])
        if name in ('train-inverse', 'design', 'ga', 'report'):
            sub.add_argument('--n', dest='n', type=int, default=None, help='Number of design groups')
            sub.add_argument('--alpha', dest='alpha', type=float, default=None, help='Weight of the nu loss')
            sub.add_argument('--beta', dest='beta', type=float, default=None, help='Weight of the stress loss')
            sub.add_argument('--gamma', dest='gamma', type=float, default=None, help='Weight of the scale loss')
        if name in ('design', 'ga'):
            sub.add_argument('--targets', dest='targets', default=None,
                             help='CSV with columns strain,nu,sigma_kPa (one channel may be omitted)')
            sub.add_argument('--rescale', dest='rescale', type=float, default=None,
                             help='Scale proposals to this wavelength in mm')
        if name == 'ga':
            sub.add_argument('--population', dest='population', type=int, default=None,
                             help='GA population size')

    return parser


def main(argv=None):
    parser = get_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 0

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s')

    output = args.output or os.environ.get('METAPATCH_OUTPUT') or defaults.default_output
    try:
        setup = defaults.read_setup(args.config) if args.config else defaults.add_defaults_to_setup({})
        if args.output:
            setup['output'] = args.output
        if args.n_jobs is not None:
            setup['n_jobs'] = args.n_jobs
        output = setup['output']

        run_stage(STAGES[args.command], setup, args)

    except MetapatchError as e:
        return _fail(output, args.command, e.to_dict(), e.exit_code)
    except Exception as e:
        logger.exception("stage %s failed", args.command)
        return _fail(output, args.command, {'error': e.__class__.__name__, 'message': str(e), 'exit_code': 3}, 3)

    return 0


def _fail(output, stage, record, exit_code):
    record = dict(record, stage=stage)
    os.makedirs(output, exist_ok=True)
    fileio.write_json(os.path.join(output, 'error.json'), record)
    print("metapatch {} failed: {}".format(stage, record['message']), file=sys.stderr)
    return exit_code


if __name__ == '__main__':
    sys.exit(main())
