"""
Default pipeline setup and merging of a user setup with the defaults.
"""

import copy
import os

import yaml

from metapatch.errors import ConfigError

default_seeds = {'pool': 1, 'split': 2, 'nn': 3, 'ga': 4, 'explain': 5}

default_pool = {'size': 5000, 'budget': 150,
                'ranges': {'lambda': [2.0, 21.0], 't': [0.2, 2.1], 'A': [0.2, 2.1]}}

default_mechanics = {'t_e': 1.0, 'newton_tol': 1e-6, 'max_iters': 50, 'max_bisections': 4,
                     'segments_per_wavelength': 32, 'nx': 5, 'ny': 5}

default_forward = {'layers': [50, 100, 125, 75], 'learning_rate': 1e-3, 'epochs': 30000, 'patience': 3000,
                   'reduce_lr': True, 'lr_factor': 0.5, 'lr_patience': 500, 'min_lr': 1e-5,
                   'feature_transform': 'log', 'target_transform': 'asinh', 'augment': 4}

default_inverse = {'n_designs': 1, 'alpha': 1.0, 'beta': 1.0, 'gamma': 0.0, 'eps_scale': 1e-6, 'cap': 1e6,
                   'feasibility': 10.0, 'margin': 0.01,
                   'layers': [90, 125, 150, 100, 50], 'learning_rate': 1e-3, 'epochs': 30000, 'patience': 3000,
                   'reduce_lr': True, 'lr_factor': 0.5, 'lr_patience': 500, 'min_lr': 1e-5,
                   'refine_steps': 500, 'refine_lr': 1e-2}

default_ga = {'population': 100, 'bits_per_var': 16, 'tournament_size': 2, 'p_crossover': 0.8, 'p_mutation': 0.8,
              'generations': 100, 'elitism': 1}

default_explain = {'background': 50, 'k_samples': 200, 'grid': 100, 'strict': True}

default_split = {'n_val': 9, 'n_test': 9}

default_output = 'metapatch_output'

FEATURE_TRANSFORMS = (None, 'log')

TARGET_TRANSFORMS = (None, 'asinh')

default_sections = {
    'seeds': default_seeds,
    'pool': default_pool,
    'mechanics': default_mechanics,
    'forward': default_forward,
    'inverse': default_inverse,
    'ga': default_ga,
    'explain': default_explain,
    'split': default_split,
}

default_values = {
    'material': None,
    'n_jobs': -1,
    'output': default_output,
}


def get_optimizer(optimizer, optimizer_kwargs=None):
    """
    Returns the hyper-parameters of the optimizer based on its name and optional keyword arguments.
    If the name of the optimizer is not recognized, a ValueError is raised.

    recognized optimizers are:
    - adam: adaptive moment estimation (http://arxiv.org/pdf/1412.6980v8.pdf)

    :param optimizer: name of the optimizer
    :param optimizer_kwargs: optional keyword arguments for the optimizer.
    :return: dictionary of keyword arguments for neural.adam_step
    """
    valid_optimizers = ['adam']
    if optimizer not in valid_optimizers:
        raise ValueError("Optimizer {} not recognized as valid optimizer.".format(optimizer) +
                         "\nAllowed optimizers: {}".format(valid_optimizers))

    kwargs = {'lr': 1e-3, 'beta1': 0.9, 'beta2': 0.999, 'eps': 1e-8}
    kwargs.update(optimizer_kwargs or {})
    return kwargs


def add_defaults_to_section(section, user_section):
    """
    Fill the missing keys of one setup section with their defaults. Unknown keys raise a ConfigError.
    """
    defaults = default_sections[section]
    user_section = copy.deepcopy(user_section) if user_section is not None else {}
    if not isinstance(user_section, dict):
        raise ConfigError("section {} must be a mapping, got {}".format(section, type(user_section).__name__))

    unknown = set(user_section) - set(defaults)
    if unknown:
        raise ConfigError("unknown keys in section {}: {}".format(section, sorted(unknown)))

    res = copy.deepcopy(defaults)
    if section == 'pool' and 'ranges' in user_section:
        ranges = copy.deepcopy(defaults['ranges'])
        ranges.update(user_section.pop('ranges'))
        res['ranges'] = ranges
    res.update(user_section)
    return res


def add_defaults_to_setup(setup):
    """
    Return a copy of the setup in which every section and value that is missing has been set to its default. The
    ``METAPATCH_OUTPUT`` environment variable overrides the output directory.

    :raises ConfigError: on unknown keys or a material file that does not exist
    """
    setup = copy.deepcopy(setup) if setup is not None else {}

    unknown = set(setup) - set(default_sections) - set(default_values)
    if unknown:
        raise ConfigError("unknown setup keys: {}".format(sorted(unknown)))

    for section in default_sections:
        setup[section] = add_defaults_to_section(section, setup.get(section))

    for key, value in default_values.items():
        if key not in setup:
            setup[key] = value

    if 'METAPATCH_OUTPUT' in os.environ:
        setup['output'] = os.environ['METAPATCH_OUTPUT']

    if setup['material'] is not None and not os.path.isfile(setup['material']):
        raise ConfigError("material file {} does not exist".format(setup['material']))

    for name, (low, high) in setup['pool']['ranges'].items():
        if not 0 < low < high:
            raise ConfigError("range of {} must satisfy 0 < min < max, got [{}, {}]".format(name, low, high))
    if setup['pool']['budget'] > setup['pool']['size']:
        raise ConfigError("selection budget {} exceeds pool size {}".format(setup['pool']['budget'],
                                                                            setup['pool']['size']))

    if setup['forward']['feature_transform'] not in FEATURE_TRANSFORMS:
        raise ConfigError("feature_transform must be one of {}, got {}".format(
            FEATURE_TRANSFORMS, setup['forward']['feature_transform']))
    if setup['forward']['target_transform'] not in TARGET_TRANSFORMS:
        raise ConfigError("target_transform must be one of {}, got {}".format(
            TARGET_TRANSFORMS, setup['forward']['target_transform']))

    return setup


def read_setup(filename):
    """
    Read a YAML or JSON setup file (JSON is valid YAML) and add the defaults. A relative material path is resolved
    against the directory of the setup file.
    """
    with open(filename) as setupfile:
        setup = yaml.safe_load(setupfile) or {}

    if not isinstance(setup, dict):
        raise ConfigError("setup file {} does not hold a mapping".format(filename))

    material = setup.get('material')
    if material is not None and not os.path.isabs(material):
        setup['material'] = os.path.join(os.path.dirname(os.path.abspath(filename)), material)

    return add_defaults_to_setup(setup)
