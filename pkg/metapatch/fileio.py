"""
Reading and writing of metapatch artifacts.

Every artifact is either JSON or CSV. JSON files are written with sorted keys, two space indentation and the
shortest round trip representation of floats, so that re-running a stage with the same inputs reproduces the
same bytes.
"""

import hashlib
import json
import os

import numpy as np
import pandas as pd

from sklearn import preprocessing

from metapatch import geometry, mechanics
from metapatch.errors import StaleArtifact

UNITS = {'lambda': 'mm', 't': 'mm', 'A': 'mm', 'd': 'mm', 'strain': '-', 'nu': '-', 'sigma': 'kPa'}


# { JSON

def _to_builtin(level):
    if isinstance(level, dict):
        return {str(k): _to_builtin(v) for k, v in level.items()}
    elif isinstance(level, (list, tuple)):
        return [_to_builtin(v) for v in level]
    elif isinstance(level, np.ndarray):
        return _to_builtin(level.tolist())
    elif isinstance(level, (np.bool_, bool)):
        return bool(level)
    elif isinstance(level, (np.integer, int)):
        return int(level)
    elif isinstance(level, (np.floating, float)):
        return float(level)
    return level


def dumps(data):
    return json.dumps(_to_builtin(data), sort_keys=True, indent=2)


def write_json(filename, data):
    with open(filename, 'w') as f:
        f.write(dumps(data))
        f.write('\n')


def read_json(filename):
    with open(filename) as f:
        return json.load(f)


def fingerprint(data):
    """sha256 of the canonical JSON form of a structure."""
    return hashlib.sha256(dumps(data).encode('utf-8')).hexdigest()


def file_hash(filename):
    sha = hashlib.sha256()
    with open(filename, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()

# }


# { Scalers

def processors2dict(processors):
    """
    Convert fitted StandardScalers to plain dictionaries.

    :param processors: dict name -> StandardScaler (or None)
    :return: dict name -> {'preprocessor': 'StandardScaler', 'kwargs': {...}}
    """
    processor_dict = {}

    for name, processor in processors.items():
        if processor is None:
            p = None
        elif processor.__class__ == preprocessing.StandardScaler:
            p = dict(preprocessor='StandardScaler',
                     kwargs={'scale_': processor.scale_, 'mean_': processor.mean_, 'var_': processor.var_,
                             'n_features_in_': processor.n_features_in_,
                             'n_samples_seen_': processor.n_samples_seen_})
        else:
            raise ValueError("Processor {} can not be stored, only StandardScaler is supported".format(
                processor.__class__.__name__))

        processor_dict[name] = p

    return processor_dict


def dict2processors(processor_dict):

    processors = {}

    for name, processor_data in processor_dict.items():

        if processor_data is None:
            p = None

        elif processor_data['preprocessor'] == 'StandardScaler':
            p = preprocessing.StandardScaler()
            kwargs = processor_data['kwargs']
            for key in ('scale_', 'mean_', 'var_'):
                setattr(p, key, np.array(kwargs[key], dtype=float))
            p.n_features_in_ = int(kwargs['n_features_in_'])
            p.n_samples_seen_ = np.array(kwargs['n_samples_seen_']) \
                if np.ndim(kwargs['n_samples_seen_']) else int(kwargs['n_samples_seen_'])

        else:
            raise ValueError("Processor {} not recognized".format(processor_data['preprocessor']))

        processors[name] = p

    return processors

# }


# { Checkpoints

def checkpoint_dict(network, processors, setup=None, metadata=None, history=None):
    data = {
        'spec': network.spec.to_dict(),
        'layers': network.to_dict()['layers'],
        'scalers': processors2dict(processors),
        'setup': setup or {},
        'metadata': metadata or {},
    }
    if history is not None:
        data['history'] = {'columns': list(history.columns), 'values': history.values}
    return data


def save_checkpoint(filename, network, processors, setup=None, metadata=None, history=None):
    """
    Store a network, its scalers, the setup it was trained with and the training metadata as JSON.
    """
    write_json(filename, checkpoint_dict(network, processors, setup=setup, metadata=metadata, history=history))


def load_checkpoint(filename):
    """
    :return: network, processors, setup, metadata, history (DataFrame or None)
    """
    from metapatch.neural import Network

    data = read_json(filename)
    network = Network.from_dict({'spec': data['spec'], 'layers': data['layers']})
    processors = dict2processors(data['scalers'])

    history = None
    if 'history' in data:
        values = np.array(data['history']['values'], dtype=float).reshape(-1, len(data['history']['columns']))
        history = pd.DataFrame(values, columns=data['history']['columns'])
        history.index.name = 'epoch'

    return network, processors, data.get('setup', {}), data.get('metadata', {}), history

# }


# { Curves

def write_curves_csv(filename, curves):
    """Write PropertyCurves with header strain,nu,sigma_kPa."""
    curves.to_frame().to_csv(filename, index=False)


def read_curves_csv(filename, strain_grid=None):
    """
    Read target curves. The file must hold a ``strain`` column and at least one of ``nu`` and ``sigma_kPa``; a
    missing channel is returned as NaN.

    :return: PropertyCurves
    """
    data = pd.read_csv(filename)
    if 'strain' not in data.columns or not ({'nu', 'sigma_kPa'} & set(data.columns)):
        raise ValueError("{} needs a strain column and a nu and/or sigma_kPa column, found {}".format(
            filename, list(data.columns)))

    n = len(data)
    nu = data['nu'].values if 'nu' in data.columns else np.full(n, np.nan)
    sigma = data['sigma_kPa'].values if 'sigma_kPa' in data.columns else np.full(n, np.nan)
    return mechanics.PropertyCurves(strain_grid=data['strain'].values, nu=nu, sigma=sigma)

# }


# { Datasets

def write_pool(filename, pool, picks, ranges, seeds):
    """Unlabelled pool with the greedy picks, in pick order."""
    write_json(filename, {'designs': [v.to_dict() for v in pool], 'picks': list(picks), 'ranges': ranges,
                          'seeds': seeds, 'units': UNITS})


def read_pool(filename):
    """:return: pool (list of ValidDesign), picks, ranges, seeds"""
    data = read_json(filename)
    pool = [geometry.validate_design(geometry.DesignParams.from_dict(d)) for d in data['designs']]
    ranges = {k: tuple(v) for k, v in data['ranges'].items()}
    return pool, data['picks'], ranges, data['seeds']


def dataset_dict(dataset):
    records = []
    for design, curves in zip(dataset.designs, dataset.curves):
        records.append({'design': design.to_dict(), 'strain_grid': curves.strain_grid, 'nu': curves.nu,
                        'sigma_kPa': curves.sigma})
    return {'ranges': dataset.ranges, 'seeds': dataset.seeds, 'records': records, 'split': dataset.split,
            'units': UNITS}


def write_dataset(filename, dataset):
    write_json(filename, dataset_dict(dataset))


def read_dataset(filename):
    """:return: sampling.Dataset"""
    from metapatch.sampling import Dataset

    data = read_json(filename)
    designs, curves = [], []
    for record in data['records']:
        designs.append(geometry.validate_design(geometry.DesignParams.from_dict(record['design'])))
        curves.append(mechanics.PropertyCurves(strain_grid=record['strain_grid'], nu=record['nu'],
                                               sigma=record['sigma_kPa']))
    ranges = {k: tuple(v) for k, v in data['ranges'].items()}
    return Dataset(designs=designs, curves=curves, split=data['split'], ranges=ranges, seeds=data['seeds'])


def export_dataset_csv(dataset, designs_file, curves_file):
    """
    Flat export: one row per design (id, lambda_mm, t_mm, A_mm, d_mm, subset) and one row per
    (design, strain level) in the curves file.
    """
    subset_of = {i: name for name, idx in dataset.split.items() for i in idx}

    designs = pd.DataFrame({
        'id': np.arange(len(dataset)),
        'lambda_mm': [v.lam for v in dataset.designs],
        't_mm': [v.t for v in dataset.designs],
        'A_mm': [v.A for v in dataset.designs],
        'd_mm': [v.d for v in dataset.designs],
        'subset': [subset_of.get(i, '') for i in range(len(dataset))],
    })
    designs.to_csv(designs_file, index=False)

    frames = []
    for i, curves in enumerate(dataset.curves):
        frame = curves.to_frame()
        frame.insert(0, 'id', i)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(curves_file, index=False)

# }


# { Solve traces

def write_solve_traces(filename, dataset):
    """Load step history of every labelled record next to its design. Records without a trace get null."""
    traces = dataset.traces or [None] * len(dataset)
    records = [{'id': k, 'design': design.to_dict(), 'trace': trace}
               for k, (design, trace) in enumerate(zip(dataset.designs, traces))]
    write_json(filename, {'records': records, 'units': UNITS})

# }


# { Manifests

def write_manifest(filename, stage, inputs, outputs, seeds, wall_time):
    """
    :param inputs: dict name -> path of the files the stage read
    :param outputs: dict name -> path of the files the stage wrote
    """
    data = {
        'stage': stage,
        'inputs': {k: {'path': os.path.basename(p), 'sha256': file_hash(p)} for k, p in inputs.items()},
        'outputs': {k: {'path': os.path.basename(p), 'sha256': file_hash(p)} for k, p in outputs.items()},
        'seeds': seeds,
        'wall_time_s': float(wall_time),
    }
    write_json(filename, data)


def check_manifest(filename, inputs):
    """
    Verify that the files a downstream stage is about to read are the ones recorded by the upstream manifest.

    :param inputs: dict name -> path, the names must be outputs of the manifest
    :raises StaleArtifact: when a file is missing from the manifest or its hash changed
    """
    if not os.path.exists(filename):
        raise StaleArtifact("manifest {} not found, run the upstream stage first".format(filename))

    manifest = read_json(filename)
    for name, path in inputs.items():
        record = manifest['outputs'].get(name)
        if record is None:
            raise StaleArtifact("{} is not an output of stage {}".format(name, manifest['stage']))
        if not os.path.exists(path) or file_hash(path) != record['sha256']:
            raise StaleArtifact("{} changed since stage {} wrote it".format(path, manifest['stage']))

# }
