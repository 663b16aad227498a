import numpy as np
import pytest
import torch

from models.training import TrainerConfig
from services.dqn_agent import (
    DQNLearner,
    QNetwork,
    ReplayBuffer,
    act_greedy,
    load_checkpoint,
    q_values,
    save_checkpoint,
    td_target,
    td_targets,
)
from services.errors import DataFileError, NumericalAbort, StructuralError
from services.sequential_env import StateVector

OD = ("A", "B")


def _state(features, mask):
    return StateVector(features=np.asarray(features, dtype=float), mask=np.asarray(mask), od=OD, t=1)


def _toy_problem(seed):
    rng = np.random.default_rng(seed)
    net = QNetwork(6, 4, (8, 5), seed=seed, zero_init_heads=False).double()
    states = rng.normal(size=(6, 6))
    masks = rng.random((6, 4)) < 0.7
    masks[:, 0] = True
    actions = np.array([rng.choice(np.flatnonzero(row)) for row in masks])
    targets = rng.normal(size=6)
    return net, states, masks, actions, targets


def _far_from_kinks(net, states, margin=1e-2):
    h = torch.as_tensor(states)
    with torch.no_grad():
        for layer in net.body:
            h = layer(h)
            if isinstance(layer, torch.nn.Linear) and h.abs().min().item() <= margin:
                return False
    return True


def _smooth_toy_problem():
    seed = 0
    problem = _toy_problem(seed)
    while not _far_from_kinks(problem[0], problem[1]):
        seed += 1
        problem = _toy_problem(seed)
    return problem


def test_gradients_match_central_differences():
    net, states, masks, actions, targets = _smooth_toy_problem()
    net.zero_grad()
    net.td_loss(states, masks, actions, targets).backward()

    h = 1e-6
    for name, param in net.named_parameters():
        analytic = param.grad.detach().clone()
        numeric = torch.zeros_like(param)
        with torch.no_grad():
            flat, grad = param.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = net.td_loss(states, masks, actions, targets).item()
                flat[i] = original - h
                minus = net.td_loss(states, masks, actions, targets).item()
                flat[i] = original
                grad[i] = (plus - minus) / (2 * h)
        torch.testing.assert_close(numeric, analytic, rtol=1e-5, atol=1e-8, msg=name)


def test_input_gradients_pass_gradcheck():
    net, states, masks, _, _ = _smooth_toy_problem()
    inputs = torch.as_tensor(states).requires_grad_(True)
    mask = torch.as_tensor(masks)
    assert torch.autograd.gradcheck(lambda x: net(x, mask), (inputs,), eps=1e-6, atol=1e-6)


def test_dueling_mean_subtraction_invariance():
    net, states, masks, _, _ = _toy_problem(4)
    net = net.float()
    before = net.q_values(states, masks)
    with torch.no_grad():
        net.advantage.bias += 3.7
    after = net.q_values(states, masks)
    np.testing.assert_allclose(after[masks], before[masks], atol=1e-5)
    assert np.all(np.isneginf(after[~masks]))


def test_shifting_masked_advantages_does_not_move_valid_q():
    net = QNetwork(3, 4, (5,), seed=1, zero_init_heads=False)
    s = _state([0.2, -0.1, 0.5], [True, True, False, False])
    before = q_values(net, s)
    with torch.no_grad():
        net.advantage.bias[2:] += 100.0
    after = q_values(net, s)
    np.testing.assert_array_equal(after[:2], before[:2])


def _biased_network(value, advantages):
    net = QNetwork(2, 4, (3,))
    with torch.no_grad():
        net.value.bias.fill_(value)
        net.advantage.bias.copy_(torch.tensor(advantages))
    return net


def test_zero_initialized_heads_tie_to_slot_zero():
    net = QNetwork(2, 4, (3,))
    s = _state([1.0, 2.0], [True, True, True, False])
    values = q_values(net, s)
    assert values[0] == values[1] == values[2]
    assert act_greedy(net, s) == 0


def test_wrong_state_width_is_rejected():
    net = QNetwork(3, 2, (4,))
    with pytest.raises(StructuralError):
        net.q_values(np.zeros((1, 5)), np.ones((1, 2), dtype=bool))


def test_act_greedy_respects_mask():
    net = _biased_network(0.0, [1.0, 2.0, 9.0, 0.0])
    assert act_greedy(net, _state([0.0, 0.0], [True, True, False, False])) == 1
    assert act_greedy(net, _state([0.0, 0.0], [False, False, False, True])) == 3
    with pytest.raises(StructuralError):
        act_greedy(net, _state([0.0, 0.0], [False, False, False, False]))


def test_td_target_examples():
    net = _biased_network(10.0, [0.0, 0.0, 0.0, 0.0])
    s = _state([0.3, 0.4], [True, False, False, False])
    assert td_target(-5.0, s, False, net, net, 0.95) == pytest.approx(4.5)
    assert td_target(-72.0, s, True, net, net, 0.95) == -72.0
    assert td_target(-3.0, s, False, net, net, 0.0) == -3.0


def test_double_target_selects_with_online_and_values_with_target():
    online = _biased_network(0.0, [1.0, 0.0, 0.0, 0.0])
    target = _biased_network(0.0, [0.0, 2.0, 0.0, 0.0])
    s = _state([0.0, 0.0], [True, True, True, True])
    # target Q = (-0.5, 1.5, -0.5, -0.5); online prefers slot 0
    assert td_target(1.0, s, False, online, target, 0.5, "double") == pytest.approx(0.75)
    assert td_target(1.0, s, False, online, target, 0.5, "vanilla") == pytest.approx(1.75)


def test_masked_next_state_never_bootstraps():
    net = _biased_network(5.0, [0.0, 0.0, 0.0, 0.0])
    targets = td_targets(
        np.array([1.0, 2.0]),
        np.zeros((2, 2)),
        np.array([[False] * 4, [True, False, False, False]]),
        np.array([False, True]),
        net,
        net,
        0.9,
    )
    assert targets.tolist() == [1.0, 2.0]


def test_replay_buffer_overwrites_oldest_first():
    buffer = ReplayBuffer(capacity=5, state_dim=2, n_actions=3)
    for i in range(8):
        buffer.add(np.full(2, i), np.ones(3, dtype=bool), 0, float(i), np.zeros(2), np.ones(3, dtype=bool), False)
    assert len(buffer) == 5
    assert buffer.rewards.tolist() == [5.0, 6.0, 7.0, 3.0, 4.0]
    np.testing.assert_array_equal(buffer.states[:, 0], [5.0, 6.0, 7.0, 3.0, 4.0])
    batch = buffer.sample(5, np.random.default_rng(0))
    assert sorted(batch["rewards"].tolist()) == [3.0, 4.0, 5.0, 6.0, 7.0]
    with pytest.raises(StructuralError):
        buffer.sample(6, np.random.default_rng(0))


def test_terminal_transition_stores_no_successor():
    buffer = ReplayBuffer(capacity=2, state_dim=2, n_actions=2)
    buffer.add(np.ones(2), np.ones(2, dtype=bool), 1, -3.0, np.full(2, 9.0), np.ones(2, dtype=bool), True)
    assert buffer.next_states[0].tolist() == [0.0, 0.0]
    assert not buffer.next_masks[0].any()


def _config(**overrides):
    values = dict(
        batch_size=4, buffer_capacity=64, warmup=4, target_sync=3, hidden_sizes=[6], k_max=3, learning_rate=1e-2
    )
    values.update(overrides)
    return TrainerConfig(**values)


def _fill(learner, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        mask = np.array([True, True, rng.random() < 0.5])
        learner.buffer.add(
            rng.normal(size=4), mask, int(rng.integers(2)), -rng.random(), rng.normal(size=4), mask, rng.random() < 0.2
        )


def _snapshot(network):
    return {key: value.clone() for key, value in network.state_dict().items()}


def test_update_at_fixed_point_is_a_no_op():
    learner = DQNLearner(4, _config())
    states = np.random.default_rng(2).normal(size=(4, 4))
    masks = np.ones((4, 3), dtype=bool)
    actions = np.array([0, 1, 2, 0])
    predicted = learner.online.q_values(states, masks)[np.arange(4), actions]
    before = _snapshot(learner.online)
    batch = {
        "states": states,
        "masks": masks,
        "actions": actions,
        "rewards": predicted,
        "next_states": np.zeros((4, 4)),
        "next_masks": np.zeros((4, 3), dtype=bool),
        "terminals": np.ones(4, dtype=bool),
    }
    assert learner.update(batch) == pytest.approx(0.0, abs=1e-20)
    for key, value in learner.online.state_dict().items():
        assert torch.equal(value, before[key]), key


def test_single_transition_loss_is_squared_td_error():
    learner = DQNLearner(4, _config(batch_size=1))
    state = np.array([[0.1, 0.2, 0.3, 0.4]])
    mask = np.ones((1, 3), dtype=bool)
    batch = {
        "states": state,
        "masks": mask,
        "actions": np.array([1]),
        "rewards": np.array([-7.0]),
        "next_states": np.zeros((1, 4)),
        "next_masks": np.zeros((1, 3), dtype=bool),
        "terminals": np.array([True]),
    }
    predicted = learner.online.q_values(state, mask)[0, 1]
    assert learner.update(batch) == pytest.approx((predicted + 7.0) ** 2, rel=1e-5)


def test_non_finite_loss_aborts_before_stepping():
    learner = DQNLearner(4, _config(batch_size=1))
    before = _snapshot(learner.online)
    batch = {
        "states": np.zeros((1, 4)),
        "masks": np.ones((1, 3), dtype=bool),
        "actions": np.array([0]),
        "rewards": np.array([np.inf]),
        "next_states": np.zeros((1, 4)),
        "next_masks": np.zeros((1, 3), dtype=bool),
        "terminals": np.array([True]),
    }
    with pytest.raises(NumericalAbort) as excinfo:
        learner.update(batch)
    assert excinfo.value.exit_code == 3
    assert learner.update_steps == 0
    for key, value in learner.online.state_dict().items():
        assert torch.equal(value, before[key]), key


def test_target_is_bit_identical_after_sync():
    learner = DQNLearner(4, _config())
    _fill(learner, 20, seed=5)
    for _ in range(2):
        learner.train_step()
    assert not torch.equal(learner.target.value.bias, learner.online.value.bias)
    learner.train_step()
    target = learner.target.state_dict()
    for key, value in learner.online.state_dict().items():
        assert torch.equal(target[key], value), key


def test_target_network_receives_no_gradients():
    learner = DQNLearner(4, _config())
    _fill(learner, 10, seed=6)
    learner.train_step()
    assert all(param.grad is None for param in learner.target.parameters())


def test_fixed_seed_gives_identical_parameter_trajectory():
    runs = []
    for _ in range(2):
        learner = DQNLearner(4, _config(seed=9))
        _fill(learner, 30, seed=1)
        for _ in range(10):
            learner.train_step()
        runs.append(learner.online.state_dict())
    for key in runs[0]:
        assert torch.equal(runs[0][key], runs[1][key]), key


def test_network_seed_does_not_touch_global_torch_state():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    QNetwork(4, 2, (5,), seed=7)
    assert torch.equal(torch.rand(3), expected)


def test_checkpoint_restores_network_and_rng(tmp_path):
    learner = DQNLearner(4, _config(seed=3))
    _fill(learner, 10, seed=2)
    learner.train_step()
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(path, learner.online, {"note": "unit"}, learner.rng)
    network, meta = load_checkpoint(path)
    assert meta["note"] == "unit"
    assert network.hidden_sizes == [6]
    states = np.random.default_rng(0).normal(size=(5, 4))
    masks = np.ones((5, 3), dtype=bool)
    np.testing.assert_array_equal(network.q_values(states, masks), learner.online.q_values(states, masks))
    assert meta["rng"].random() == learner.rng.random()


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataFileError):
        load_checkpoint(tmp_path / "absent.bin")
