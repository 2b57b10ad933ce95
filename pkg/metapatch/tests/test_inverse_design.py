import json
import logging

import pytest

import numpy as np

from metapatch import inverse_design, mechanics, neural
from metapatch.errors import InvalidConfig, ShapeMismatch, GridMismatch, StaleArtifact


def numerical_design_gradients(network, inputs, targets, surrogates, cfg, h=1e-6):
    params = [p.copy() for p in network.parameters]

    def loss(candidate):
        network.set_parameters(candidate)
        out = network.forward(inputs)
        groups = out.reshape(len(out), cfg.N, 3)
        return inverse_design.total_loss(targets, groups, surrogates, cfg)[0]

    numeric = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss(plus) - loss(minus)) / (2 * h)
        numeric.append(g)
    network.set_parameters(params)
    return numeric


class TestConfig:

    def test_defaults(self):
        cfg = inverse_design.InverseLossConfig()
        assert (cfg.alpha, cfg.beta, cfg.gamma, cfg.N, cfg.Q, cfg.P) == (1., 1., 0., 1, 30, 3)

    @pytest.mark.parametrize('kwargs', [{'N': 0}, {'N': 1, 'gamma': 0.5}, {'alpha': -1.},
                                        {'alpha': 0., 'beta': 0.}, {'eps_scale': 0.}, {'N': 2, 'cap': -1.},
                                        {'feasibility': -1.}, {'margin': 0.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            inverse_design.InverseLossConfig(**kwargs)

    def test_from_setup(self):
        setup = {'alpha': 1., 'beta': 0., 'gamma': 0.5, 'n_designs': 3, 'eps_scale': 1e-6, 'cap': 1e6}
        cfg = inverse_design.InverseLossConfig.from_setup(setup)
        assert cfg.N == 3
        assert inverse_design.InverseLossConfig(**cfg.to_dict()) == cfg
        assert (cfg.feasibility, cfg.margin, cfg.ranges) == (10., 0.01, None)

    def test_ranges_survive_json(self):
        cfg = inverse_design.InverseLossConfig(ranges={'lambda': (2., 21.), 't': (0.2, 2.1), 'A': (0.2, 2.1)})
        record = json.loads(json.dumps(cfg.to_dict()))
        assert inverse_design.InverseLossConfig(**record) == cfg
        assert cfg.design_ranges['t'] == [0.2, 2.1]


class TestEffectiveConfig:

    def curves(self, nu=True, sigma=True):
        grid = mechanics.default_strain_grid()
        return mechanics.PropertyCurves(strain_grid=grid, nu=np.zeros(30) if nu else np.full(30, np.nan),
                                        sigma=np.ones(30) if sigma else np.full(30, np.nan))

    def test_complete_target(self):
        cfg = inverse_design.InverseLossConfig(alpha=0.7, beta=1.3)
        assert inverse_design.effective_config(self.curves(), cfg) is cfg

    def test_missing_channel_has_zero_weight(self):
        cfg = inverse_design.InverseLossConfig(alpha=0.7, beta=1.3, N=2, gamma=0.5)
        nu_only = inverse_design.effective_config(self.curves(sigma=False), cfg)
        assert (nu_only.alpha, nu_only.beta, nu_only.N, nu_only.gamma) == (0.7, 0., 2, 0.5)
        sigma_only = inverse_design.effective_config(self.curves(nu=False), cfg)
        assert (sigma_only.alpha, sigma_only.beta) == (0., 1.3)
        assert cfg.beta == 1.3

    def test_empty_target(self):
        with pytest.raises(ShapeMismatch):
            inverse_design.effective_config(self.curves(nu=False, sigma=False), inverse_design.InverseLossConfig())


class TestDesignNet:

    @pytest.mark.parametrize('N', [1, 3])
    def test_layer_sizes(self, N):
        spec = inverse_design.build_design_net(N)
        assert spec.layer_sizes == [60, 90, 125, 150, 100, 50, 3 * N]
        assert spec.output_activation == 'softplus'

    def test_invalid_group_count(self):
        with pytest.raises(InvalidConfig):
            inverse_design.build_design_net(0)

    def test_outputs_are_positive(self, rng):
        net = neural.Network(inverse_design.build_design_net(3, layers=[20], seed=0))
        out = net.forward(50. * rng.standard_normal((20, 60)))
        assert out.shape == (20, 9)
        assert np.all(out > 0)

    def test_initial_design(self):
        cfg = inverse_design.InverseLossConfig(N=2, gamma=0.5)
        net = inverse_design._initial_network(cfg, [10], seed=0)
        # zero input: hidden layer is zero, the groups start in the centre of the design box
        out = net.forward(np.zeros(60)).reshape(2, 3)
        np.testing.assert_allclose(out, np.tile(inverse_design.START_DESIGN, (2, 1)))


class TestScaleLoss:

    def test_proportional_groups_hit_cap(self):
        assert inverse_design.scale_loss([[1., 1., 1.], [2., 2., 2.]]) == pytest.approx(1e6)
        assert inverse_design.scale_loss([[1., 1., 1.], [2., 2., 2.]], cap=50.) == 50.

    def test_hand_example(self):
        assert inverse_design.scale_loss([[1., 1., 1.], [1., 2., 3.]]) == pytest.approx(12.462, rel=1e-4)

    def test_guard_is_a_maximum(self):
        groups = [[1., 1., 1.], [1., 2., 3.]]
        S = inverse_design.pairwise_ratio_deviation(groups)[(0, 1)]
        assert inverse_design.scale_loss(groups) == pytest.approx(1. / S, rel=1e-12)

    def test_deviation_below_guard(self):
        # S is about 1e-13, far below eps_scale
        groups = np.array([[1., 1., 1.], [2., 2., 2. + 1e-6]])
        L, grad = inverse_design.scale_loss(groups, cap=1e9, return_gradient=True)
        assert L == pytest.approx(1e6)
        np.testing.assert_array_equal(grad, 0.)

    def test_common_scaling(self):
        groups = np.array([[9., 1.1, 0.5], [12., 0.6, 1.4], [4., 0.3, 0.2]])
        a = inverse_design.scale_loss(groups)
        b = inverse_design.scale_loss(7.5 * groups)
        assert a == pytest.approx(b)
        assert 0 < a < 1e6

    def test_needs_two_groups(self):
        with pytest.raises(InvalidConfig):
            inverse_design.scale_loss([[1., 1., 1.]])

    def test_batch_mean(self):
        a = [[1., 1., 1.], [1., 2., 3.]]
        b = [[9., 1.1, 0.5], [12., 0.6, 1.4]]
        batch = inverse_design.scale_loss([a, b])
        assert batch == pytest.approx(0.5 * (inverse_design.scale_loss(a) + inverse_design.scale_loss(b)))

    def test_gradient(self):
        groups = np.array([[9., 1.1, 0.5], [12., 0.6, 1.4], [4., 0.3, 0.2]])
        _, grad = inverse_design.scale_loss(groups, return_gradient=True)
        h = 1e-6
        numeric = np.zeros_like(groups)
        for idx in np.ndindex(groups.shape):
            plus, minus = groups.copy(), groups.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (inverse_design.scale_loss(plus) - inverse_design.scale_loss(minus)) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-9)

    def test_capped_gradient_is_zero(self):
        _, grad = inverse_design.scale_loss([[1., 1., 1.], [2., 2., 2.]], return_gradient=True)
        np.testing.assert_array_equal(grad, 0.)

    def test_pairwise_deviation(self):
        res = inverse_design.pairwise_ratio_deviation([[1., 1., 1.], [1., 2., 3.], [2., 2., 2.]])
        assert res[(0, 1)] == pytest.approx(0.080247, rel=1e-4)
        assert res[(0, 2)] == pytest.approx(0.)


class TestFeasibilityLoss:

    def test_zero_inside_the_box(self):
        groups = [[9., 1.1, 0.5], [12., 0.6, 1.4], [4., 0.3, 0.25]]
        assert inverse_design.feasibility_loss(groups) == 0.
        L, grad = inverse_design.feasibility_loss(groups, return_gradient=True)
        np.testing.assert_array_equal(grad, 0.)

    def test_outside_the_box(self):
        # t 0.19 mm below its range, in units of the 1.9 mm range width
        L = inverse_design.feasibility_loss([[9., 0.01, 0.5]])
        assert L == pytest.approx(0.1 ** 2)
        assert inverse_design.feasibility_loss([[23., 1., 1.]]) == pytest.approx((2. / 19.) ** 2)

    def test_touching_peaks(self):
        # d = 0: lambda / 2 = 2A + t
        L = inverse_design.feasibility_loss([[8., 1., 1.5]], margin=0.05)
        assert L == pytest.approx(0.05 ** 2)
        assert inverse_design.feasibility_loss([[8., 1., 1.5]], margin=0.) == 0.

    def test_custom_ranges(self):
        ranges = {'lambda': (5., 10.), 't': (0.5, 1.), 'A': (0.5, 1.)}
        assert inverse_design.feasibility_loss([[4., 0.6, 0.6]], ranges=ranges, margin=0.) == pytest.approx(0.04)

    def test_gradient(self):
        groups = np.array([[[23., 0.1, 0.5], [8., 1., 1.6]], [[1.5, 2.5, 0.1], [9., 1.1, 0.5]]])
        _, grad = inverse_design.feasibility_loss(groups, return_gradient=True)
        h = 1e-6
        numeric = np.zeros_like(groups)
        for idx in np.ndindex(groups.shape):
            plus, minus = groups.copy(), groups.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (inverse_design.feasibility_loss(plus) - inverse_design.feasibility_loss(minus)) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-9)

    def test_in_ranges(self):
        assert inverse_design.in_ranges([9., 1.1, 0.5])
        assert inverse_design.in_ranges([21., 2.1, 0.2])
        assert not inverse_design.in_ranges([9., 0., 0.5])
        assert not inverse_design.in_ranges([22., 1., 1.])


class TestTotalLoss:

    @pytest.fixture
    def targets(self, toy_dataset, toy_surrogates):
        curves = [toy_dataset.curves[i] for i in range(3)]
        _, targets = inverse_design.standardize_targets(curves, toy_surrogates)
        return targets

    def test_decomposition(self, targets, toy_surrogates):
        groups = np.array([[[9., 1.1, 0.5]], [[12., 0.6, 1.4]], [[4., 0.3, 0.2]]])
        cfg = inverse_design.InverseLossConfig(alpha=0.7, beta=1.3)
        total, parts = inverse_design.total_loss(targets, groups, toy_surrogates, cfg)
        assert parts['nu'] >= 0 and parts['sigma'] >= 0
        assert parts['scale'] == 0.
        assert total == pytest.approx(0.7 * parts['nu'] + 1.3 * parts['sigma'])
        assert parts['feasibility'] == 0.

    def test_infeasible_groups_are_penalised(self, targets, toy_surrogates):
        groups = np.array([[[9., 1.1, 0.5]], [[12., 0.6, 1.4]], [[4., 0.05, 0.2]]])
        cfg = inverse_design.InverseLossConfig()
        total, parts = inverse_design.total_loss(targets, groups, toy_surrogates, cfg)
        assert parts['feasibility'] == pytest.approx(inverse_design.feasibility_loss(groups))
        assert parts['feasibility'] > 0
        assert total == pytest.approx(parts['nu'] + parts['sigma'] + 10. * parts['feasibility'])

    def test_zero_loss_on_surrogate_predictions(self, toy_surrogates):
        design = np.array([[9., 1.1, 0.5]])
        targets = {name: toy_surrogates[name]._process_targets(toy_surrogates[name].predict(design))
                   for name in ('nu', 'sigma')}
        total, _ = inverse_design.total_loss(targets, design, toy_surrogates, inverse_design.InverseLossConfig())
        assert total == pytest.approx(0., abs=1e-20)

    def test_group_count_mismatch(self, targets, toy_surrogates):
        cfg = inverse_design.InverseLossConfig(N=2, gamma=0.5)
        with pytest.raises(ShapeMismatch):
            inverse_design.total_loss(targets, np.ones((3, 1, 3)), toy_surrogates, cfg)

    def test_target_shape_mismatch(self, toy_surrogates):
        targets = {'nu': np.zeros(20), 'sigma': np.zeros(20)}
        with pytest.raises(ShapeMismatch):
            inverse_design.total_loss(targets, [[9., 1.1, 0.5]], toy_surrogates,
                                      inverse_design.InverseLossConfig())

    def test_gradient_with_respect_to_groups(self, targets, toy_surrogates):
        cfg = inverse_design.InverseLossConfig(N=2, gamma=0.5)
        groups = np.array([[[9., 1.1, 0.5], [12., 0.6, 1.4]],
                           [[4., 0.3, 0.25], [15., 1.8, 1.0]],
                           [[6., 0.9, 0.7], [8., 0.4, 1.1]]])
        _, _, grad = inverse_design.total_loss(targets, groups, toy_surrogates, cfg, return_gradient=True)
        h = 1e-6
        numeric = np.zeros_like(groups)
        for idx in np.ndindex(groups.shape):
            plus, minus = groups.copy(), groups.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (inverse_design.total_loss(targets, plus, toy_surrogates, cfg)[0] -
                            inverse_design.total_loss(targets, minus, toy_surrogates, cfg)[0]) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_tandem_gradient(self, toy_surrogates, toy_dataset):
        cfg = inverse_design.InverseLossConfig(N=2, gamma=0.5)
        inputs, targets = inverse_design.standardize_targets([toy_dataset.curves[i] for i in range(3)],
                                                             toy_surrogates, cfg)
        network = inverse_design._initial_network(cfg, [4], seed=1)
        _, grads, _ = inverse_design.tandem_loss_and_gradients(network, inputs, targets, toy_surrogates, cfg)
        numeric = numerical_design_gradients(network, inputs, targets, toy_surrogates, cfg)
        for analytic, num in zip(neural.flatten_gradients(grads), numeric):
            np.testing.assert_allclose(analytic, num, rtol=1e-4, atol=1e-7)


class TestStandardizeTargets:

    def test_shapes(self, toy_dataset, toy_surrogates):
        inputs, targets = inverse_design.standardize_targets(toy_dataset.curves[:4], toy_surrogates)
        assert inputs.shape == (4, 60)
        np.testing.assert_array_equal(inputs[:, :30], targets['nu'])

    def test_missing_channel(self, toy_dataset, toy_surrogates):
        c = toy_dataset.curves[0]
        curves = mechanics.PropertyCurves(strain_grid=c.strain_grid, nu=c.nu, sigma=np.full(30, np.nan))
        inputs, _ = inverse_design.standardize_targets(curves, toy_surrogates)
        np.testing.assert_array_equal(inputs[0, 30:], 0.)

    def test_zero_weight_channel(self, toy_dataset, toy_surrogates):
        cfg = inverse_design.InverseLossConfig(alpha=0., beta=1.)
        inputs, _ = inverse_design.standardize_targets(toy_dataset.curves[0], toy_surrogates, cfg)
        np.testing.assert_array_equal(inputs[0, :30], 0.)
        assert np.any(inputs[0, 30:] != 0.)

    def test_incomplete_curve(self, toy_dataset, toy_surrogates):
        c = toy_dataset.curves[0]
        nu = c.nu.copy()
        nu[4] = np.nan
        curves = mechanics.PropertyCurves(strain_grid=c.strain_grid, nu=nu, sigma=c.sigma)
        with pytest.raises(ShapeMismatch):
            inverse_design.standardize_targets(curves, toy_surrogates)


class TestDesignModel:

    @pytest.fixture
    def hyper(self):
        return {'layers': [16], 'epochs': 60, 'patience': 60, 'learning_rate': 1e-3}

    def test_training_leaves_surrogates_untouched(self, toy_dataset, toy_surrogates, hyper):
        before = {name: p.fingerprint() for name, p in toy_surrogates.items()}
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        assert {name: p.fingerprint() for name, p in toy_surrogates.items()} == before
        assert model.metadata['surrogates'] == before
        assert len(model.history) <= 60
        assert model.history['loss'].min() <= model.history['loss'].iloc[0]

    def test_training_is_deterministic(self, toy_dataset, toy_surrogates, hyper):
        cfg = inverse_design.InverseLossConfig(N=3, gamma=0.5)
        a = inverse_design.train_design_model(toy_dataset, toy_surrogates, cfg, hyper=hyper, seed=3)
        b = inverse_design.train_design_model(toy_dataset, toy_surrogates, cfg, hyper=hyper, seed=3)
        for p, q in zip(a.network.parameters, b.network.parameters):
            np.testing.assert_array_equal(p, q)

    def test_propose(self, toy_dataset, toy_surrogates, hyper):
        cfg = inverse_design.InverseLossConfig(N=3, gamma=0.5)
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, cfg, hyper=hyper, seed=3)
        target = toy_dataset.curves[toy_dataset.indices('test')[0]]
        proposal = inverse_design.propose_designs(model, target, toy_surrogates, rescale_to=9.)
        assert len(proposal.groups) == 3
        for group, raw in zip(proposal.groups, proposal.raw_groups):
            assert group.lam == pytest.approx(9.)
            assert group.t / group.lam == pytest.approx(raw.t / raw.lam)
            assert min(raw.lam, raw.t, raw.A) > 0
        assert all(m >= 0 for m in proposal.mae_nu)
        record = proposal.to_dict()
        assert record['rescaled_to'] == 9.
        assert record['config']['N'] == 3

    def test_single_channel_target(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        c = toy_dataset.curves[0]
        target = mechanics.PropertyCurves(strain_grid=c.strain_grid, nu=c.nu, sigma=np.full(30, np.nan))
        proposal = inverse_design.propose_designs(model, target, toy_surrogates)
        assert proposal.mae_sigma == [None]
        assert proposal.mae_nu[0] >= 0

    def test_grid_mismatch(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        grid = np.linspace(0.01, 0.3, 30)
        target = mechanics.PropertyCurves(strain_grid=grid, nu=np.zeros(30), sigma=np.zeros(30))
        with pytest.raises(GridMismatch):
            inverse_design.propose_designs(model, target, toy_surrogates)

    def test_modified_surrogate(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        W, b = toy_surrogates['nu'].network.layers[0]
        toy_surrogates['nu'].network.layers[0] = (W * 1.01, b)
        with pytest.raises(StaleArtifact):
            inverse_design.propose_designs(model, toy_dataset.curves[0], toy_surrogates)

    def test_save_and_load(self, toy_dataset, toy_surrogates, hyper, tmp_path):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates,
                                                  inverse_design.InverseLossConfig(N=3, gamma=0.5),
                                                  hyper=hyper, seed=3)
        model.save_model(tmp_path / 'design.json', include_history=True)
        loaded = inverse_design.DesignModel.load_model(tmp_path / 'design.json')
        assert loaded.cfg == model.cfg
        assert len(loaded.history) == len(model.history)
        inputs, _ = inverse_design.standardize_targets(toy_dataset.curves[:2], toy_surrogates)
        np.testing.assert_array_equal(loaded.raw_groups(inputs), model.raw_groups(inputs))


    def test_training_records_ranges_and_refinement(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=dict(hyper, refine_steps=7), seed=3)
        assert model.cfg.ranges == {k: list(v) for k, v in toy_dataset.ranges.items()}
        assert model.metadata['refine_steps'] == 7
        assert 'lr' in model.history.columns

    def test_unrefined_proposal_is_network_output(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        target = toy_dataset.curves[0]
        proposal = inverse_design.propose_designs(model, target, toy_surrogates, refine_steps=0)
        inputs, _ = inverse_design.standardize_targets(target, toy_surrogates)
        np.testing.assert_allclose(proposal.raw_groups[0].as_array(), model.raw_groups(inputs)[0, 0])

    def test_refined_proposal_is_not_worse(self, toy_dataset, toy_surrogates, hyper):
        model = inverse_design.train_design_model(toy_dataset, toy_surrogates, inverse_design.InverseLossConfig(),
                                                  hyper=hyper, seed=3)
        target = toy_dataset.curves[toy_dataset.indices('test')[0]]
        _, targets = inverse_design.standardize_targets(target, toy_surrogates)

        def loss(proposal):
            groups = np.array([p.as_array() for p in proposal.raw_groups])
            return inverse_design.total_loss(targets, groups, toy_surrogates, model.cfg)[0]

        plain = inverse_design.propose_designs(model, target, toy_surrogates, refine_steps=0)
        refined = inverse_design.propose_designs(model, target, toy_surrogates, refine_steps=200)
        assert loss(refined) <= loss(plain)


class TestRefineDesigns:

    def test_recovers_surrogate_design(self, toy_surrogates):
        design = np.array([[9., 1.1, 0.5]])
        targets = {name: toy_surrogates[name]._process_targets(toy_surrogates[name].predict(design))
                   for name in ('nu', 'sigma')}
        cfg = inverse_design.InverseLossConfig()
        start = np.array([[11., 0.9, 0.7]])
        start_loss = inverse_design.total_loss(targets, start, toy_surrogates, cfg)[0]

        refined, loss = inverse_design.refine_designs(start, targets, toy_surrogates, cfg, steps=300)
        assert refined.shape == (1, 3)
        assert loss < start_loss
        assert loss == pytest.approx(inverse_design.total_loss(targets, refined, toy_surrogates, cfg)[0])
        assert np.all(refined > 0)

    def test_no_steps(self, toy_surrogates):
        targets = {'nu': np.zeros(30), 'sigma': np.zeros(30)}
        start = np.array([[11., 0.9, 0.7]])
        refined, _ = inverse_design.refine_designs(start, targets, toy_surrogates, inverse_design.InverseLossConfig(),
                                                   steps=0)
        np.testing.assert_array_equal(refined, start)

    def test_missing_channel_is_ignored(self, toy_surrogates):
        design = np.array([[9., 1.1, 0.5]])
        targets = {'nu': toy_surrogates['nu']._process_targets(toy_surrogates['nu'].predict(design)),
                   'sigma': np.zeros((1, 30))}
        cfg = inverse_design.InverseLossConfig(beta=0.)
        _, parts = inverse_design.total_loss(targets, design, toy_surrogates, cfg)
        refined, loss = inverse_design.refine_designs(design, targets, toy_surrogates, cfg, steps=50)
        # the design already fits the nu target exactly, a stress target of zeros must not pull it away
        assert loss == pytest.approx(0., abs=1e-12)
        assert parts['sigma'] > 0


class TestEvaluateDesigns:

    def test_invalid_design_is_flagged(self, toy_dataset, toy_surrogates, caplog):
        target = toy_dataset.curves[0]
        raw = np.array([[9., 1.1, 0.5], [4., 1.5, 1.0]])
        with caplog.at_level(logging.WARNING, logger='metapatch.inverse_design'):
            proposal = inverse_design.evaluate_designs(raw, target, toy_surrogates, rescale_to=18.)
        assert proposal.valid == [True, False]
        assert "non-positive peak gap" in caplog.text
        assert proposal.groups[1].lam == pytest.approx(18.)
        assert proposal.groups[1].t == pytest.approx(6.75)

    def test_design_outside_ranges_is_invalid(self, toy_dataset, toy_surrogates, caplog):
        target = toy_dataset.curves[0]
        raw = np.array([[9., 1.1, 0.5], [9., 1e-5, 0.5], [30., 1., 1.]])
        with caplog.at_level(logging.WARNING, logger='metapatch.inverse_design'):
            proposal = inverse_design.evaluate_designs(raw, target, toy_surrogates,
                                                       ranges={'lambda': (2., 21.), 't': (0.2, 2.1), 'A': (0.2, 2.1)})
        assert proposal.valid == [True, False, False]
        assert "outside the design ranges" in caplog.text
        assert "2 of 3 proposed design groups are invalid" in caplog.text
        assert [g['valid'] for g in proposal.to_dict()['groups']] == [True, False, False]

    def test_rescaled_group_is_checked_before_rescaling(self, toy_dataset, toy_surrogates):
        proposal = inverse_design.evaluate_designs([[20., 2., 1.]], toy_dataset.curves[0], toy_surrogates,
                                                   rescale_to=40., ranges={'lambda': (2., 21.), 't': (0.2, 2.1),
                                                                           'A': (0.2, 2.1)})
        assert proposal.valid == [True]
        assert proposal.groups[0].lam == pytest.approx(40.)
