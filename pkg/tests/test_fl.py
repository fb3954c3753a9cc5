import dataclasses

import numpy as np
import pytest

from config.run_config import TrainConfig
from core import fl
from core.evaluation import Evaluator, edges_for
from core.features import FeatureTable
from core.fl import (
    CostLedger,
    client_batches,
    cost_infer,
    cost_train,
    fedavg,
    local_step,
    make_clients,
    run_client,
    run_round,
    start_run,
    train,
)
from core.graph import make_split, partition
from core.optim import OneCycleSchedule
from core.params import ModelParams, init_params
from tests.helpers import TINY_MODEL
from utils.errors import ClientFailure, RunFailure, ShapeError

CONFIG = TrainConfig(rounds=4, local_steps=2, batch_size=16, max_lr=1e-2, seed=0)


@pytest.fixture(scope="module")
def federation(mini_graph):
    parts = partition(mini_graph, 2, seed=0)
    return parts, make_split(parts, seed=0)


class TestCosts:
    def test_closed_forms(self):
        assert cost_train(8, 100, 5, 3) == 24000
        assert cost_infer(2, 8, 256, 10) == 40960
        assert cost_train(8, 100, 5, 0) == 0

    @pytest.mark.parametrize("args", [(-1, 1, 1, 1), (8, 1.5, 1, 1), (8, 1, True, 1)])
    def test_rejects_bad_counts(self, args):
        with pytest.raises(ValueError):
            cost_train(*args)

    def test_ledger(self):
        ledger = CostLedger(bytes_per_scalar=8, directions=2)
        ledger.record_round(3, 100)
        ledger.record_round(3, 100)
        assert ledger.rounds == 2
        assert ledger.cum_upload == ledger.cum_download == 4800
        assert ledger.train_total == cost_train(8, 100, 3, 2)
        assert ledger.record_inference(4, 5) == cost_infer(2, 8, 4, 5)
        assert CostLedger.from_dict(ledger.to_dict()) == ledger


class TestFedAvg:
    def test_identical_inputs(self):
        p = ModelParams({"w": np.array([0.1, 0.7]), "s": np.array(3.0)})
        assert fedavg([p, p, p]).bitwise_equal(ModelParams({"w": (p["w"] + p["w"] + p["w"]) / 3, "s": np.array(3.0)}))

    def test_mean_in_admin_order(self):
        rng = np.random.default_rng(0)
        values = [rng.normal(size=(2, 3)) for _ in range(3)]
        out = fedavg([ModelParams({"w": v}) for v in values])
        np.testing.assert_array_equal(out["w"], (values[0] + values[1] + values[2]) / 3)
        assert fedavg([ModelParams({"w": np.zeros(1)}), ModelParams({"w": np.full(1, 2.0)})])["w"][0] == 1.0

    def test_weighted(self):
        out = fedavg([ModelParams({"w": np.zeros(1)}), ModelParams({"w": np.full(1, 4.0)})], weights=[1, 3])
        assert out["w"][0] == pytest.approx(3.0)
        with pytest.raises(RunFailure):
            fedavg([ModelParams({"w": np.zeros(1)})], weights=[0])

    def test_incompatible(self):
        with pytest.raises(ShapeError):
            fedavg([])
        with pytest.raises(ShapeError):
            fedavg([ModelParams({"w": np.zeros(1)}), ModelParams({"w": np.zeros(2)})])

    def test_buffers_are_averaged_too(self):
        a = ModelParams({"w": np.zeros(1), "rm": np.zeros(1)}, buffers=["rm"])
        b = ModelParams({"w": np.zeros(1), "rm": np.full(1, 2.0)}, buffers=["rm"])
        out = fedavg([a, b])
        assert out["rm"][0] == 1.0 and out.buffers == {"rm"}


class TestLocalTraining:
    def test_batches_cover_each_edge_once_per_pass(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        client = make_clients(parts, plan, mini_table, params, seed=0)[0]
        batches = client_batches(client, dataclasses.replace(CONFIG, local_steps=None))
        ids = sorted(e.edge_id for batch in batches for e in batch)
        assert ids == sorted(e.edge_id for e in client.train_edges)
        assert len(client_batches(client, CONFIG)) == 2

    def test_zero_lr_keeps_trainable_parameters(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        client = make_clients(parts, plan, mini_table, params, seed=0)[0]
        updated, loss = local_step(client, client.train_edges[:8], 0.0, TINY_MODEL, CONFIG)
        assert np.isfinite(loss)
        for name in params.trainable_names:
            np.testing.assert_array_equal(updated[name], params[name])

    def test_step_moves_parameters(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        client = make_clients(parts, plan, mini_table, params, seed=0)[0]
        updated, _ = local_step(client, client.train_edges[:8], 1e-2, TINY_MODEL, CONFIG)
        assert not updated.bitwise_equal(params)

    def test_repeated_steps_fit_one_batch(self, federation, mini_table):
        parts, plan = federation
        client = make_clients(parts, plan, mini_table, init_params(TINY_MODEL, 0), seed=0)[0]
        batch = client.train_edges[:16]
        losses = []
        for _ in range(100):
            client.params, loss = local_step(client, batch, 1e-2, TINY_MODEL, CONFIG)
            losses.append(loss)
        assert np.mean(losses[-5:]) < 0.8 * losses[0]

    def test_empty_batch(self, federation, mini_table):
        parts, plan = federation
        client = make_clients(parts, plan, mini_table, init_params(TINY_MODEL, 0), seed=0)[0]
        with pytest.raises(ShapeError):
            local_step(client, (), 1e-3, TINY_MODEL, CONFIG)

    def test_client_failure_is_wrapped(self, federation, mini_table):
        parts, plan = federation
        client = make_clients(parts, plan, mini_table, init_params(TINY_MODEL, 0), seed=0)[1]
        client.features = FeatureTable({})
        with pytest.raises(ClientFailure) as info:
            run_client(client, 1e-3, TINY_MODEL, CONFIG)
        assert info.value.admin_id == 1


class TestRounds:
    def test_round_accounting(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        clients = make_clients(parts, plan, mini_table, params, seed=0)
        ledger = CostLedger(bytes_per_scalar=8)
        schedule = OneCycleSchedule(1e-2, 5)
        result = run_round(params, clients, 1, schedule, TINY_MODEL, CONFIG, ledger)
        assert result.upload_bytes == result.download_bytes == 2 * 8 * params.total_size
        assert result.lr == schedule.lr(1) > 0.0
        assert set(result.client_losses) == {0, 1}
        assert all(c.params is result.params for c in clients)

    def test_thread_pool_matches_sequential(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        schedule = OneCycleSchedule(1e-2, 4)
        out = []
        for workers in (1, 2):
            config = dataclasses.replace(CONFIG, workers=workers)
            clients = make_clients(parts, plan, mini_table, params, seed=0)
            run_round(params, clients, 1, schedule, TINY_MODEL, config, CostLedger())
            out.append(run_round(clients[0].params, clients, 2, schedule, TINY_MODEL, config, CostLedger()).params)
        assert out[0].bitwise_equal(out[1])

    def test_single_client_equals_centralized(self, mini_graph, mini_table):
        parts = partition(mini_graph, 1)
        plan = make_split(parts)
        params = init_params(TINY_MODEL, 2)
        evaluator = Evaluator(parts, mini_table, TINY_MODEL)
        config = dataclasses.replace(CONFIG, rounds=10, local_steps=3)
        federated = train(start_run(config, TINY_MODEL, params, parts, plan, mini_table), evaluator, [])
        central = train(start_run(config, TINY_MODEL, params, parts, plan, mini_table, centralized=True), evaluator, [])
        assert federated.params.bitwise_equal(central.params)
        assert federated.ledger.train_total == cost_train(8, params.total_size, 1, 10)
        assert central.ledger.rounds == 0

    def test_training_log_and_ledger(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        evaluator = Evaluator(parts, mini_table, TINY_MODEL)
        seen = []
        run = train(
            start_run(CONFIG, TINY_MODEL, params, parts, plan, mini_table),
            evaluator, edges_for(parts, plan.valid), on_round=lambda r, row: seen.append(row["round"]),
        )
        assert seen == [1, 2, 3, 4]
        assert [row["round"] for row in run.log] == [1, 2, 3, 4]
        assert run.ledger.train_total == cost_train(8, params.total_size, 2, 4)
        assert run.log[-1]["cum_upload_bytes"] == run.ledger.cum_upload
        assert all(0.0 <= row["valid_f1"] <= 1.0 for row in run.log)
        assert 1 <= run.best_round <= 4

    def test_early_stopping_keeps_best_round(self, federation, mini_table, monkeypatch):
        parts, plan = federation
        scores = iter([0.5, 0.4, 0.3, 0.2, 0.1])
        monkeypatch.setattr(fl, "validation_f1", lambda *args: next(scores))
        snapshots = []
        config = dataclasses.replace(CONFIG, rounds=5, patience=1)
        run = train(
            start_run(config, TINY_MODEL, init_params(TINY_MODEL, 0), parts, plan, mini_table),
            Evaluator(parts, mini_table, TINY_MODEL), edges_for(parts, plan.valid),
            on_round=lambda r, row: snapshots.append(r.params),
        )
        assert run.stopped_early
        assert run.round == 3
        assert run.best_round == 1 and run.best_f1 == 0.5
        assert run.best_params.bitwise_equal(snapshots[0])

    def test_zero_rounds_keep_initial_parameters(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        config = dataclasses.replace(CONFIG, rounds=0)
        run = train(start_run(config, TINY_MODEL, params, parts, plan, mini_table),
                    Evaluator(parts, mini_table, TINY_MODEL), [])
        assert run.params is params and run.log == []

    def test_single_round_moves_parameters(self, federation, mini_table):
        parts, plan = federation
        params = init_params(TINY_MODEL, 0)
        config = dataclasses.replace(CONFIG, rounds=1)
        run = train(start_run(config, TINY_MODEL, params, parts, plan, mini_table),
                    Evaluator(parts, mini_table, TINY_MODEL), [])
        assert run.log[0]["lr"] > 0.0
        assert not run.params.bitwise_equal(params)

    def test_every_round_gets_a_positive_rate(self, federation, mini_table):
        parts, plan = federation
        config = dataclasses.replace(CONFIG, rounds=6, local_steps=1)
        run = train(start_run(config, TINY_MODEL, init_params(TINY_MODEL, 0), parts, plan, mini_table),
                    Evaluator(parts, mini_table, TINY_MODEL), [])
        rates = [row["lr"] for row in run.log]
        assert all(lr > 0.0 for lr in rates)
        assert rates[-1] == pytest.approx(config.max_lr / 1000.0)
        assert max(rates) == pytest.approx(config.max_lr, rel=0.2)
