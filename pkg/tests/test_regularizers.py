import math

import numpy as np
import pytest

from gasl import checks, nn
from gasl import numeric as nm
from gasl.errors import NumericalError, ParameterError
from gasl.regularizers import (ObjectiveConfig, attention_variance, check_breakdown,
                               composite_objective, group_lasso_penalty, l2_penalty)


def single_layer(W):
    W = np.asarray(W, dtype=float)
    net = nn.Network([nn.dense(*W.shape), nn.softmax()], (W.shape[0],))
    net.params[0]["W"][:] = W
    return net


def brute_groups(net, i):
    W = net.params[i]["W"]
    if W.ndim == 4:
        return [W[f].ravel() for f in range(W.shape[0])]
    if net.dense_grouping == "outgoing":
        return [W[r, :] for r in range(W.shape[0])]
    return [W[:, c] for c in range(W.shape[1])]


def brute_gl(net):
    total = 0.0
    for i in net.param_layers():
        gs = brute_groups(net, i)
        total += sum(math.sqrt(sum(float(w) ** 2 for w in g)) for g in gs) / math.sqrt(len(gs))
    return total


def brute_psi(net):
    total = 0.0
    for i in net.param_layers():
        norms = [math.sqrt(sum(float(w) ** 2 for w in g)) for g in brute_groups(net, i)]
        m = len(norms)
        mean = sum(norms) / m
        total += sum((n - mean) ** 2 for n in norms) / m / math.sqrt(m)
    return total


class TestHandValues:
    def test_group_lasso_three_four(self):
        W = np.zeros((4, 2))
        W[1] = (3.0, 4.0)
        value, _ = group_lasso_penalty(single_layer(W))
        assert abs(value - 2.5) < 1e-12

    def test_attention_zero_two(self):
        value, _ = attention_variance(single_layer([[0.0, 0.0], [2.0, 0.0]]))
        assert abs(value - 1 / math.sqrt(2)) < 1e-12

    def test_all_zero_network(self):
        net = nn.build_mlp()
        for p in net.params:
            for v in p.values():
                v[:] = 0
        assert group_lasso_penalty(net, with_grad=False)[0] == 0.0
        assert attention_variance(net, with_grad=False)[0] == 0.0

    def test_equal_norms_zero_variance(self):
        value, _ = attention_variance(single_layer([[3.0, 4.0], [0.0, 5.0], [5.0, 0.0]]))
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_single_group_layer_contributes_nothing(self):
        net = nn.Network([nn.dense(1, 3), nn.softmax()], (1,))
        assert attention_variance(net)[0] == 0.0


class TestOracles:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_net_matches_brute_force(self, seed):
        rng = nm.RngStream(seed)
        grouping = ("outgoing", "incoming")[seed % 2]
        layers = [nn.conv2d(1, 3, 3), nn.relu(), nn.flatten(), nn.dense(3 * 16, 7), nn.relu(),
                  nn.dense(7, 4), nn.softmax()]
        net = nn.Network(layers, (1, 6, 6), dense_grouping=grouping, rng=rng)
        assert abs(group_lasso_penalty(net, with_grad=False)[0] - brute_gl(net)) < 1e-12
        assert abs(attention_variance(net, with_grad=False)[0] - brute_psi(net)) < 1e-12

    def test_l2_counts_biases(self):
        net = single_layer([[1.0, 2.0]])
        net.params[0]["b"][:] = [3.0, 0.0]
        assert l2_penalty(net)[0] == 14.0

    def test_dead_group_has_zero_subgradient(self):
        net = single_layer([[0.0, 0.0], [1.0, 1.0]])
        _, g = group_lasso_penalty(net)
        np.testing.assert_array_equal(g[0]["W"][0], 0.0)
        _, g = attention_variance(net)
        np.testing.assert_array_equal(g[0]["W"][0], 0.0)

    def test_biases_not_penalised(self):
        net = single_layer([[1.0, 2.0], [0.5, 0.1]])
        net.params[0]["b"][:] = 5.0
        for fn in (group_lasso_penalty, attention_variance):
            np.testing.assert_array_equal(fn(net)[1][0]["b"], 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_fd(self, seed):
        net, x, y = checks.random_instance(nm.RngStream(100 + seed))
        for mode in ("structured", "unstructured"):
            for fn in (group_lasso_penalty, attention_variance):
                analytic = checks.flatten_grads(fn(net, mode)[1])
                numeric = checks.flatten_grads(
                    checks.numerical_gradient(lambda m: fn(m, mode, with_grad=False)[0], net)[0])
                assert checks.relative_error(analytic, numeric) < 1e-5


class TestComposite:
    def setup_method(self):
        self.net, self.x, self.y = checks.random_instance(nm.RngStream(7))

    def test_total_is_sum_of_terms(self):
        cfg = ObjectiveConfig(lambda_s=0.3, alpha=2.0, lambda_l2=1e-3)
        bd, _ = composite_objective(self.net, self.x, self.y, cfg, with_grad=False)
        expect = bd.data_loss + bd.l2_term + 0.3 * bd.sparsity_term + 0.6 / (bd.attention_term + 1e-8)
        assert abs(bd.total - expect) < 1e-12
        assert bd.sparsity_term >= 0 and bd.attention_term >= 0

    def test_lambda_s_zero_reduces_to_ce_plus_l2(self):
        cfg = ObjectiveConfig(lambda_s=0.0, alpha=5.0, lambda_l2=1e-3)
        bd, grads = composite_objective(self.net, self.x, self.y, cfg)
        ce, ce_grads = nn.loss_and_grads(self.net, self.x, self.y)
        l2, l2_grads = l2_penalty(self.net)
        assert bd.total == ce + 1e-3 * l2
        assert bd.attention_penalty == 0.0 and bd.lambda_v == 0.0
        for g, a, b in zip(grads, ce_grads, l2_grads):
            for k in g:
                np.testing.assert_array_equal(g[k], a[k] + 1e-3 * b[k])

    def test_alpha_irrelevant_when_lambda_s_zero(self):
        results = [composite_objective(self.net, self.x, self.y, ObjectiveConfig(alpha=a))
                   for a in (0.1, 1.0, 100.0)]
        for bd, g in results[1:]:
            assert bd == results[0][0]
            np.testing.assert_array_equal(checks.flatten_grads(g), checks.flatten_grads(results[0][1]))

    def test_psi_zero_guard(self):
        net = nn.Network([nn.dense(2, 2), nn.softmax()], (2,))
        net.params[0]["W"][:] = [[1.0, 0.0], [0.0, 1.0]]
        cfg = ObjectiveConfig(lambda_s=0.5, alpha=2.0, lambda_l2=0.0)
        bd, grads = composite_objective(net, np.ones((1, 2)), np.array([0]), cfg)
        assert bd.attention_term == 0.0
        assert bd.attention_penalty == pytest.approx(1.0 / 1e-8)
        assert np.all(np.isfinite(checks.flatten_grads(grads)))

    def test_attention_none_switches_term_off(self):
        cfg = ObjectiveConfig(lambda_s=0.5, attention="none")
        bd, _ = composite_objective(self.net, self.x, self.y, cfg, with_grad=False)
        assert cfg.lambda_v == 0.0 and bd.attention_penalty == 0.0

    def test_composite_gradient_fd(self):
        cfg = ObjectiveConfig(lambda_s=0.2, alpha=1.5, lambda_l2=1e-3, variance_epsilon=1e-2)
        _, analytic = composite_objective(self.net, self.x, self.y, cfg)
        numeric = checks.numerical_gradient(
            lambda m: composite_objective(m, self.x, self.y, cfg, with_grad=False)[0].total, self.net)[0]
        assert checks.relative_error(checks.flatten_grads(analytic), checks.flatten_grads(numeric)) < 1e-4

    def test_non_finite_term_named(self):
        bd, _ = composite_objective(self.net, self.x, self.y, ObjectiveConfig(), with_grad=False)
        bd.sparsity_term = float("nan")
        with pytest.raises(NumericalError, match="sparsity_term"):
            check_breakdown(bd)

    @pytest.mark.parametrize("kw", [{"lambda_s": -1}, {"alpha": 0}, {"variance_epsilon": 0},
                                    {"attention": "global"}, {"grouping_mode": "rows"}])
    def test_invalid_config(self, kw):
        with pytest.raises(ParameterError):
            ObjectiveConfig(**kw)


def test_concentration_raises_psi():
    # two groups, fixed total squared mass 1: moving mass into one group raises Psi
    cfg = ObjectiveConfig(lambda_s=1.0, alpha=1.0, lambda_l2=0.0)
    prev_psi, prev_pen = -1.0, math.inf
    for share in np.linspace(0.5, 1.0, 11):
        net = single_layer([[math.sqrt(share), 0.0], [math.sqrt(1 - share), 0.0]])
        psi, _ = attention_variance(net, with_grad=False)
        pen = cfg.lambda_v / (psi + cfg.variance_epsilon)
        assert psi > prev_psi and pen < prev_pen
        prev_psi, prev_pen = psi, pen
