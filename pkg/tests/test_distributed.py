"""Distributed simulator: codec, aggregation, identities, degenerate topology."""

from __future__ import annotations

import numpy as np
import pytest

from csgd_lab.compression import CompressionSpec
from csgd_lab.distributed import (
    SparseMessage,
    central_aggregate,
    make_workers,
    run_dcsgd,
    worker_step,
)
from csgd_lab.errors import ProtocolError
from csgd_lab.linesearch import ArmijoConfig
from csgd_lab.objectives import make_interpolated_regression, make_strongly_convex_mix
from csgd_lab.optimizers import TRACE_COLUMNS, run_csgd_asss
from csgd_lab.prng import RandomStream


def message(sender, iteration, indices, values):
    return SparseMessage(
        sender, iteration, np.asarray(indices, dtype=np.uint32), np.asarray(values, dtype=float)
    )


class TestCodec:
    def test_round_trip_simple(self):
        msg = message(3, 17, [0, 5, 9], [1.5, -2.25, 1e-300])
        back = SparseMessage.decode(msg.encode())
        assert back.sender == 3 and back.iteration == 17
        assert np.array_equal(back.indices, msg.indices)
        assert np.array_equal(back.values, msg.values)

    def test_wire_length(self):
        msg = message(0, 0, [2, 4], [1.0, 2.0])
        assert len(msg.encode()) == 16 + 2 * 12

    def test_round_trip_random_batch(self):
        stream = RandomStream(60)
        for trial in range(500):
            d = int(stream.integers(1, 200)[0]) + 8
            k = int(stream.integers(1, d)[0]) + 1
            order = np.argsort(stream.uniform(d))[:k]
            indices = np.sort(order).astype(np.uint32)
            values = stream.normal(k) * 10.0 ** int(stream.integers(1, 7)[0] - 3)
            msg = message(trial % 7, trial, indices, values)
            back = SparseMessage.decode(msg.encode())
            assert np.array_equal(back.indices, indices)
            assert np.array_equal(back.values, values)

    def test_strictly_increasing_indices_enforced(self):
        with pytest.raises(ProtocolError):
            message(0, 0, [3, 3], [1.0, 2.0])
        with pytest.raises(ProtocolError):
            message(0, 0, [5, 2], [1.0, 2.0])

    def test_truncated_blob_rejected(self):
        blob = message(0, 0, [1], [2.0]).encode()
        with pytest.raises(ProtocolError):
            SparseMessage.decode(blob[:-3])


class TestAggregate:
    def test_all_zero_messages_keep_iterate(self):
        x = np.array([1.0, 2.0])
        msgs = [message(0, 4, [0], [0.0]), message(1, 4, [1], [0.0])]
        assert np.array_equal(central_aggregate(msgs, x, 2, 4), x)

    def test_two_worker_mean(self):
        x = np.zeros(2)
        msgs = [message(0, 0, [0], [2.0]), message(1, 0, [1], [4.0])]
        assert np.array_equal(central_aggregate(msgs, x, 2, 0), np.array([-1.0, -2.0]))

    def test_three_worker_mean_matches_dense_reference(self):
        stream = RandomStream(61)
        x = stream.normal(12)
        msgs = []
        dense_sum = np.zeros(12)
        for k in range(3):
            idx = np.sort(np.argsort(stream.uniform(12))[:4]).astype(np.uint32)
            vals = stream.normal(4)
            msgs.append(message(k, 9, idx, vals))
            dense = np.zeros(12)
            dense[idx.astype(int)] = vals
            dense_sum += dense
        expected = x - dense_sum / 3.0
        np.testing.assert_allclose(central_aggregate(msgs, x, 3, 9), expected, rtol=1e-15)

    def test_missing_and_duplicate_workers_rejected(self):
        x = np.zeros(2)
        with pytest.raises(ProtocolError):
            central_aggregate([message(0, 0, [0], [1.0])], x, 2, 0)
        with pytest.raises(ProtocolError):
            central_aggregate(
                [message(0, 0, [0], [1.0]), message(0, 0, [1], [1.0])], x, 2, 0
            )

    def test_wrong_iteration_rejected(self):
        x = np.zeros(2)
        with pytest.raises(ProtocolError):
            central_aggregate([message(0, 3, [0], [1.0])], x, 1, 4)


class TestWorkerStep:
    def test_hand_round_two_workers(self):
        # Two one-component shards; k=1 keeps only the larger coordinate of
        # each worker's scaled gradient, the rest lands in worker memory.
        obj = make_interpolated_regression(
            2, 2, 1.0, seed=0,
            features=np.array([[2.0, 1.0], [1.0, 3.0]]),
            minimizer=np.array([0.0, 0.0]),
        )
        cfg = ArmijoConfig(sigma=0.1, rho=0.8, omega=1.2, scale_a=0.3, alpha_max_init=0.1)
        comp = CompressionSpec(k=1, d=2)
        workers = make_workers(obj, 2, cfg, seed=1)
        x = np.array([1.0, 1.0])
        new0, msg0, info0 = worker_step(workers[0], obj, x, 0, cfg, comp)
        new1, msg1, info1 = worker_step(workers[1], obj, x, 0, cfg, comp)
        # worker 0 samples its only component (index 0), worker 1 gets index 1
        assert info0.component == 0 and info1.component == 1
        # f_0 = (2+1)^2 = 9, grad_0 = 2*3*(2,1); first candidate 0.08 accepts
        # since alpha <= 2(1-sigma)/L_0 with L_0 = 2*5 = 10 fails -> backtracks
        assert info0.f_i == 9.0
        expected_grad0 = np.array([12.0, 6.0])
        assert info0.grad_sq == float(expected_grad0 @ expected_grad0)
        # the transmitted coordinate is the largest of update = eta*grad
        assert msg0.indices.size == 1 and int(msg0.indices[0]) == 0
        assert new0.mem.m[0] == 0.0 and new0.mem.m[1] != 0.0
        # conservation: transmitted + memory = scaled gradient (memory was 0)
        np.testing.assert_array_equal(
            msg0.densify(2) + new0.mem.m, info0.update
        )
        np.testing.assert_array_equal(
            msg1.densify(2) + new1.mem.m, info1.update
        )

    def test_lossless_message_carries_full_update_and_flushes_memory(self):
        obj = make_interpolated_regression(2, 3, 1.0, seed=2)
        cfg = ArmijoConfig()
        comp = CompressionSpec(k=3, d=3)
        worker = make_workers(obj, 2, cfg, seed=3)[1]
        x = RandomStream(4).normal(3)
        new, msg, info = worker_step(worker, obj, x, 0, cfg, comp)
        np.testing.assert_array_equal(msg.densify(3), info.update)
        assert np.array_equal(new.mem.m, np.zeros(3))


class TestRunDcsgd:
    def test_single_worker_bitwise_equals_single_node(self):
        obj = make_interpolated_regression(20, 8, 1.0, seed=5)
        cfg = ArmijoConfig(omega=1.5)
        comp = CompressionSpec(2, 8)
        single = run_csgd_asss(obj, cfg, comp, 120, seed=6)
        dist = run_dcsgd(obj, 1, cfg, comp, 120, seed=6)
        for name in TRACE_COLUMNS:
            assert np.array_equal(single.column(name), dist.column(name)), name

    @pytest.mark.parametrize("workers", [2, 4])
    def test_memory_identity_over_rounds(self, workers):
        obj = make_interpolated_regression(24, 10, 1.0, seed=7)
        trace = run_dcsgd(obj, workers, ArmijoConfig(), CompressionSpec(2, 10), 200, seed=8)
        assert trace.identity_residual_max <= 1e-9
        assert trace.status == "COMPLETED"

    def test_round_one_memory_identity_exact_shape(self):
        # After the first round with zero initial memories the identity is a
        # direct rearrangement of the update equations.
        obj = make_strongly_convex_mix(8, 6, 0.2, seed=9)
        cfg = ArmijoConfig()
        comp = CompressionSpec(1, 6)
        workers = make_workers(obj, 2, cfg, seed=10)
        x0 = RandomStream(11).normal(6)
        msgs, infos = [], []
        for k in range(2):
            workers[k], msg, info = worker_step(workers[k], obj, x0, 0, cfg, comp)
            msgs.append(msg)
            infos.append(info)
        x1 = central_aggregate(msgs, x0, 2, 0)
        x_hat1 = x0 - (infos[0].update + infos[1].update) / 2.0
        mem_mean = (workers[0].mem.m + workers[1].mem.m) / 2.0
        np.testing.assert_allclose(x1 - x_hat1, mem_mean, atol=1e-15)

    def test_trace_has_distributed_columns(self):
        obj = make_interpolated_regression(12, 6, 1.0, seed=12)
        trace = run_dcsgd(obj, 3, ArmijoConfig(), CompressionSpec(2, 6), 10, seed=13)
        assert trace.columns[-4:] == ("bytes_up", "bytes_down", "worker_alpha_min", "worker_alpha_max")
        assert np.all(trace.column("bytes_up") == 3 * 2 * 12)
        assert np.all(trace.column("bytes_down") == 6 * 8)
        assert np.all(trace.column("worker_alpha_min") <= trace.column("worker_alpha_max"))

    def test_uneven_shards_rejected(self):
        obj = make_interpolated_regression(10, 4, 1.0, seed=14)
        with pytest.raises(ProtocolError):
            run_dcsgd(obj, 3, ArmijoConfig(), CompressionSpec(1, 4), 5, seed=15)

    def test_heterogeneous_shards_adapt_step_sizes(self):
        # Worker 0 owns gentle components, worker 1 owns steep ones (features
        # scaled 8x, so Lipschitz constants 64x): its median accepted step
        # must be smaller.
        stream = RandomStream(16)
        gentle = stream.normal(16 * 6).reshape(16, 6)
        steep = 8.0 * stream.normal(16 * 6).reshape(16, 6)
        features = np.vstack([gentle, steep])
        obj = make_interpolated_regression(
            32, 6, 1.0, seed=0, features=features, minimizer=stream.normal(6)
        )
        trace = run_dcsgd(obj, 2, ArmijoConfig(omega=1.5), CompressionSpec(2, 6), 300, seed=17)
        lo = np.median(trace.column("worker_alpha_min"))
        hi = np.median(trace.column("worker_alpha_max"))
        assert lo < hi / 4.0

    def test_determinism(self):
        obj = make_interpolated_regression(12, 6, 1.0, seed=18)
        a = run_dcsgd(obj, 2, ArmijoConfig(), CompressionSpec(2, 6), 50, seed=19)
        b = run_dcsgd(obj, 2, ArmijoConfig(), CompressionSpec(2, 6), 50, seed=19)
        assert a.rows == b.rows

    def test_convex_rate_bound_across_four_workers(self):
        from csgd_lab.analysis import averaged_suboptimality
        from csgd_lab.distributed import distributed_rate_constant
        from csgd_lab import theory

        obj = make_interpolated_regression(40, 16, 1.0, seed=21)
        comp = CompressionSpec(2, 16)
        sigma, rho = 0.1, 0.8
        zeta = theory.scale_limit(sigma, comp.gamma)
        a = 0.9 * (zeta - 0.1 * zeta)
        cfg = ArmijoConfig(sigma=sigma, rho=rho, scale_a=a, omega=1.5)
        rate = distributed_rate_constant(obj, comp, cfg, epsilon=0.1 * zeta)
        assert rate.delta1 > 0
        horizon = 200
        gaps, dists = [], []
        for seed in range(20):
            trace = run_dcsgd(obj, 4, cfg, comp, horizon, seed=seed, collect_iterates=True)
            gaps.append(averaged_suboptimality(trace, obj))
            dists.append(float(np.sum((trace.iterates[0] - obj.minimizer) ** 2)))
        mean_gap = np.mean(gaps, axis=0)
        bound = np.mean(dists) / (rate.delta1 * np.arange(1, horizon + 1))
        assert np.all(mean_gap <= bound)
