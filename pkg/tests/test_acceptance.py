"""Acceptance suite: the headline behaviors the package must reproduce.

Fast numeric oracles run first (KL quadrature, gradient checks, Weibull
recovery, pool fuzzing, timing order), then the desk-scale experiment
batteries (digit AL curves, noisy-oracle monotonicity, OOD rejection,
biased-pool recovery, determinism), and finally the live annotation
round-trip against the HTTP queue service.
"""
import csv
import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest

import test_vnn
from oracles import kl_gaussian_quad
from osal import alloop, vnn
from osal.alloop import config_from_dict, load_run_result, run_experiment
from osal.datapool import (
    default_blob_centers,
    generate_blobs,
    load_pool,
    mix_ood,
    promote,
    save_pool,
    split_initial,
)
from osal.report import time_sampling
from osal.sampling import fit_weibull
from osal.vnn import LossConfig, TrainConfig, build_model, kl_term, train_stage
from osal.vnn.model import LatentPosterior

SEEDS = range(5)


def acc_matrix(doc, seeds=SEEDS):
    cfg = config_from_dict(doc)
    return np.array(
        [[r.accuracy for r in run_experiment(cfg, s).records] for s in seeds]
    )


# ---------------------------------------------------------------------------
# numeric oracles
# ---------------------------------------------------------------------------

class TestClosedFormKl:
    def test_matches_quadrature_on_100_posteriors(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            dim = int(rng.integers(1, 7))
            mu = rng.normal(0.0, 2.0, size=dim)
            lv = rng.uniform(-3.0, 2.0, size=dim)
            got = kl_term(LatentPosterior(mu, lv))
            want = kl_gaussian_quad(mu, lv)
            assert abs(got - want) <= 1e-6, f"KL {got} vs quadrature {want}"


class TestGradientCheck:
    def test_m1_loss_gradients(self):
        model = test_vnn.tiny_model("m1", seed=11)
        rng = np.random.default_rng(0)
        x = rng.random((3, 5))
        y = np.array([0, 1, 1])
        test_vnn.assert_grads_match(
            model, x, y, vnn.LossConfig(beta=0.7, mc_samples=2), False, tol=1e-4
        )

    def test_m2_loss_gradients(self):
        model = test_vnn.tiny_model("m2", seed=12)
        rng = np.random.default_rng(1)
        x = rng.random((3, 5))
        y = np.array([1, 0, 1])
        test_vnn.assert_grads_match(
            model, x, y, vnn.LossConfig(beta=1.3, mc_samples=2), True, tol=1e-4
        )


class TestWeibullRecovery:
    @pytest.mark.parametrize("shape", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_mle_within_5_percent(self, shape, scale):
        rng = np.random.default_rng(int(shape * 100 + scale * 7))
        draws = scale * rng.weibull(shape, size=10_000)
        k_hat, lam_hat = fit_weibull(draws, tail_fraction=1.0)
        assert abs(k_hat - shape) / shape <= 0.05
        assert abs(lam_hat - scale) / scale <= 0.05

    def test_exponential_special_case(self):
        rng = np.random.default_rng(99)
        draws = rng.exponential(1.0, size=10_000)
        k_hat, _ = fit_weibull(draws, tail_fraction=1.0)
        assert abs(k_hat - 1.0) <= 0.05


class TestPoolFuzz:
    def check(self, pool, n_total):
        labeled, unlabeled = set(pool.labeled_ids), set(pool.unlabeled_ids)
        assert not labeled & unlabeled, "pools overlap"
        assert len(labeled) + len(unlabeled) == n_total, "samples lost or duplicated"
        assert set(pool.oracle_labels) == labeled, "label bookkeeping diverged"

    def test_1000_randomized_sequences(self, tmp_path):
        save_path = tmp_path / "pool.json"
        for trial in range(1000):
            rng = np.random.default_rng(10_000 + trial)
            classes = int(rng.integers(2, 5))
            ds = generate_blobs(
                {
                    "classes": classes,
                    "n_per_class": int(rng.integers(5, 12)),
                    "dim": 2,
                    "stddev": 0.5,
                    "seed": trial,
                }
            )
            m0 = int(rng.integers(1, len(ds.train_ids) // 2))
            pool = split_initial(ds, m0, int(rng.integers(0, 2**31)))
            if rng.random() < 0.3:
                fraction = float(rng.uniform(0.05, 0.45))
                need = int(fraction * len(ds.train_ids)) + 1
                foreign = generate_blobs(
                    {
                        "classes": 2,
                        "n_per_class": (need + 1) // 2 + 1,
                        "dim": 2,
                        "stddev": 0.5,
                        "seed": trial + 1,
                        "name": "foreign",
                    }
                )
                ds, pool = mix_ood(pool, ds, foreign, fraction)
            n_total = len(ds.train_ids)
            self.check(pool, n_total)
            for _ in range(int(rng.integers(1, 6))):
                op = rng.random()
                if op < 0.6 and pool.unlabeled_ids:
                    k = int(rng.integers(1, min(4, len(pool.unlabeled_ids)) + 1))
                    picked = rng.choice(len(pool.unlabeled_ids), size=k, replace=False)
                    annotated = {
                        pool.unlabeled_ids[i]: int(rng.integers(0, classes))
                        for i in picked
                    }
                    pool = promote(pool, annotated)
                elif op < 0.8:
                    pool = promote(pool, {})
                else:
                    save_pool(pool, save_path)
                    pool, _ = load_pool(save_path)
                self.check(pool, n_total)


class TestTimingOrder:
    def test_uncertainty_faster_than_weibull_on_10k_pool(self):
        ds = generate_blobs(
            {"classes": 4, "n_per_class": 3000, "dim": 16, "stddev": 1.0, "seed": 21}
        )
        rng = np.random.default_rng(0)
        order = rng.permutation(len(ds.train_ids))
        l_idx, u_idx = order[:2000], order[2000:12000]
        model = build_model("m1", ds.feature_shape, ds.num_classes, z_dim=16, rng=rng)
        model, _ = train_stage(
            model,
            (ds.train_features[l_idx], ds.train_labels[l_idx]),
            TrainConfig(epochs_per_stage=15, optimizer="adam"),
            LossConfig(beta=0.1),
            rng,
        )
        common = dict(
            model=model,
            unlabeled_ids=[ds.train_ids[i] for i in u_idx],
            unlabeled_features=ds.train_features[u_idx],
            repetitions=5,
            b=100,
        )
        unc = time_sampling("uncertainty", **common)
        weib = time_sampling(
            "weibull",
            labeled_ids=[ds.train_ids[i] for i in l_idx],
            labeled_features=ds.train_features[l_idx],
            labeled_labels=[int(y) for y in ds.train_labels[l_idx]],
            **common,
        )
        assert unc.pool_size == weib.pool_size == 10_000
        assert unc.mean_seconds < weib.mean_seconds, (
            f"uncertainty {unc.mean_seconds:.4f}s !< weibull {weib.mean_seconds:.4f}s"
        )


# ---------------------------------------------------------------------------
# desk-scale experiments
# ---------------------------------------------------------------------------

def digits_doc(digits_dir, **overrides):
    doc = {
        "name": "digits-al",
        "dataset": {
            "kind": "idx",
            "path": str(digits_dir),
            "name": "digits",
            "num_classes": 10,
        },
        "strategy": "uncertainty",
        "budget_schedule": [170, 270, 370, 470, 570],  # b=100 per stage
        "train": {"epochs_per_stage": 10, "optimizer": "adam", "batch_size": 32},
        "loss": {"beta": 0.1},
        "model": {"z_dim": 60},
    }
    doc.update(overrides)
    return doc


@pytest.fixture(scope="session")
def digits_accuracy(digits_dir):
    """Accuracy matrices (seed x stage) for the four digit-corpus arms."""
    base = digits_doc(digits_dir)
    return {
        "uncertainty": acc_matrix(base),
        "random": acc_matrix({**base, "strategy": "random"}),
        "noisy10": acc_matrix({**base, "oracle": {"kind": "noisy", "noise_rate": 0.10}}),
        "noisy30": acc_matrix({**base, "oracle": {"kind": "noisy", "noise_rate": 0.30}}),
    }


class TestDigitsActiveLearning:
    def test_uncertainty_tracks_random_within_half_point(self, digits_accuracy):
        mean_u = digits_accuracy["uncertainty"].mean(axis=0)
        mean_r = digits_accuracy["random"].mean(axis=0)
        assert np.all(mean_u >= mean_r - 0.005), (
            f"uncertainty {mean_u} fell below random {mean_r} by more than 0.5 pp"
        )

    def test_strictly_above_random_at_3_of_first_5_stages(self, digits_accuracy):
        mean_u = digits_accuracy["uncertainty"].mean(axis=0)[:5]
        mean_r = digits_accuracy["random"].mean(axis=0)[:5]
        wins = int((mean_u > mean_r).sum())
        assert wins >= 3, f"only {wins} strict wins in the first 5 stages"


class TestNoisyOracleMonotonicity:
    def test_final_accuracy_ordering(self, digits_accuracy):
        clean = digits_accuracy["uncertainty"][:, -1].mean()
        n10 = digits_accuracy["noisy10"][:, -1].mean()
        n30 = digits_accuracy["noisy30"][:, -1].mean()
        assert clean >= n10 - 0.005, f"clean {clean:.4f} < noise10 {n10:.4f} - 0.005"
        assert n10 >= n30 - 0.005, f"noise10 {n10:.4f} < noise30 {n30:.4f} - 0.005"


def ood_doc(strategy):
    foreign_centers = (default_blob_centers(4, 16, 6.0) + 10.0).tolist()
    return {
        "name": "ood-pool",
        "dataset": {
            "kind": "blobs",
            "classes": 4,
            "n_per_class": 250,
            "dim": 16,
            "stddev": 1.0,
            "seed": 3,
        },
        "strategy": strategy,
        "oracle": {"kind": "ood_reject"},
        "budget_schedule": [100, 150, 200, 250, 300, 350, 400],
        "train": {"epochs_per_stage": 40, "optimizer": "adam", "batch_size": 32},
        "loss": {"beta": 0.1},
        "sampling": {"tail_fraction": 1.0, "reject_threshold": 0.95},
        "ood_mix": {
            "fraction": 0.2,
            "dataset": {
                "kind": "blobs",
                "classes": 4,
                "n_per_class": 100,
                "dim": 16,
                "stddev": 1.0,
                "seed": 9,
                "name": "shifted",
                "centers": foreign_centers,
            },
        },
    }


@pytest.fixture(scope="session")
def ood_runs():
    weibull_cfg = config_from_dict(ood_doc("weibull"))
    random_cfg = config_from_dict(ood_doc("random"))
    clean_doc = ood_doc("weibull")
    clean_doc.pop("ood_mix")
    clean_doc["oracle"] = {"kind": "clean"}
    clean_cfg = config_from_dict(clean_doc)
    return {
        "weibull": [run_experiment(weibull_cfg, s) for s in SEEDS],
        "random": [run_experiment(random_cfg, s) for s in SEEDS],
        "clean": [run_experiment(clean_cfg, s) for s in SEEDS],
    }


class TestOodPool:
    def test_weibull_selects_foreign_under_quarter_of_random_rate(self, ood_runs):
        w = sum(rec.rejected_ood for r in ood_runs["weibull"] for rec in r.records)
        r = sum(rec.rejected_ood for r in ood_runs["random"] for rec in r.records)
        assert r > 0, "random arm never hit a foreign sample; pool mix is broken"
        assert w < 0.25 * r, f"weibull selected {w} foreign vs random {r}"

    def test_final_accuracy_within_1pp_of_clean_pool(self, ood_runs):
        mixed = np.mean([r.records[-1].accuracy for r in ood_runs["weibull"]])
        clean = np.mean([r.records[-1].accuracy for r in ood_runs["clean"]])
        assert abs(mixed - clean) < 0.01, f"mixed {mixed:.4f} vs clean {clean:.4f}"


class TestBiasedPoolRecovery:
    def count_excluded_acquired(self, doc, seed, tmp_path):
        cfg = config_from_dict(doc)
        ds = alloop.build_experiment_dataset(cfg.dataset)
        run_dir = tmp_path / f"{doc['strategy']}-{seed}"
        run_experiment(cfg, seed, run_dir=run_dir)
        n = 0
        with open(run_dir / "selections.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                if (
                    int(row["stage"]) <= 1
                    and row["selected"] == "1"
                    and ds.true_label_of(row["sample_id"]) in (0, 1)
                ):
                    n += 1
        return n

    def test_uncertainty_recovers_excluded_classes(self, tmp_path):
        dim = 16
        centers = [
            [10.0, 2.0] + [0.0] * (dim - 2),
            [10.0, -2.0] + [0.0] * (dim - 2),
            [-10.0, 10.0] + [0.0] * (dim - 2),
            [-10.0, -10.0] + [0.0] * (dim - 2),
        ]
        base = {
            "name": "biased-pool",
            "dataset": {
                "kind": "blobs",
                "classes": 4,
                "n_per_class": 100,
                "dim": dim,
                "stddev": 1.0,
                "seed": 5,
                "centers": centers,
            },
            "strategy": "uncertainty",
            "budget_schedule": [40, 80, 120],
            "excluded_classes": [0, 1],
            "train": {"epochs_per_stage": 40, "optimizer": "adam", "batch_size": 32},
            "loss": {"beta": 0.1},
        }
        unc = [self.count_excluded_acquired(base, s, tmp_path) for s in SEEDS]
        rand = [
            self.count_excluded_acquired({**base, "strategy": "random"}, s, tmp_path)
            for s in SEEDS
        ]
        ratio = np.mean(unc) / np.mean(rand)
        assert ratio >= 1.5, f"uncertainty {unc} vs random {rand}: ratio {ratio:.2f}"


class TestDeterminism:
    def test_replay_reproduces_stage_csv(self, tmp_path):
        doc = {
            "name": "replay",
            "dataset": {
                "kind": "blobs",
                "classes": 4,
                "n_per_class": 50,
                "dim": 8,
                "stddev": 1.0,
                "seed": 11,
            },
            "strategy": "uncertainty",
            "budget_schedule": [30, 50, 70],
            "train": {"epochs_per_stage": 4, "optimizer": "adam", "batch_size": 32},
            "loss": {"beta": 0.1},
            "model": {"z_dim": 8},
        }
        cfg = config_from_dict(doc)

        def stage_rows(run_dir):
            # wall-clock sampling time is the one column allowed to differ
            with open(run_dir / "stage.csv", newline="") as fh:
                rows = list(csv.reader(fh))
            drop = rows[0].index("sampling_seconds")
            return [[c for i, c in enumerate(row) if i != drop] for row in rows]

        run_experiment(cfg, 0, run_dir=tmp_path / "a")
        run_experiment(cfg, 0, run_dir=tmp_path / "b")
        assert stage_rows(tmp_path / "a") == stage_rows(tmp_path / "b")


# ---------------------------------------------------------------------------
# annotation round-trip (secondary component contract)
# ---------------------------------------------------------------------------

@pytest.fixture()
def live_queue_service():
    import uvicorn

    from osal.oracle_service import create_app

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    server = uvicorn.Server(
        uvicorn.Config(create_app(), host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("annotation service failed to start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


class TestAnnotationRoundTrip:
    def test_labels_and_unknowns_land_in_run_records(self, live_queue_service, tmp_path):
        import httpx

        doc = {
            "name": "human-loop",
            "dataset": {
                "kind": "blobs",
                "classes": 4,
                "n_per_class": 25,
                "dim": 8,
                "stddev": 1.0,
                "seed": 13,
            },
            "strategy": "random",
            "budget_schedule": [20, 30],  # one acquisition stage of 10 queries
            "oracle": {
                "kind": "human",
                "url": live_queue_service,
                "timeout": 60.0,
                "poll_interval": 0.05,
            },
            "train": {"epochs_per_stage": 4, "optimizer": "adam", "batch_size": 32},
            "loss": {"beta": 0.1},
            "model": {"z_dim": 8},
        }
        cfg = config_from_dict(doc)
        run_dir = tmp_path / "run"
        failure = []

        def drive():
            try:
                run_experiment(cfg, 0, run_dir=run_dir)
            except Exception as exc:  # surfaced after join
                failure.append(exc)

        loop = threading.Thread(target=drive)
        loop.start()
        try:
            with httpx.Client(base_url=live_queue_service, timeout=5.0) as web:
                run_id = "human-loop-seed0"

                def pending():
                    resp = web.get(
                        "/v1/queries", params={"status": "pending", "run_id": run_id}
                    )
                    resp.raise_for_status()
                    return resp.json()["items"]

                deadline = time.time() + 30
                items = []
                while time.time() < deadline and len(items) < 10:
                    items = pending()
                    time.sleep(0.05)
                assert len(items) == 10, f"queue held {len(items)} items, wanted 10"

                all_ids = [item["sample_id"] for item in items]
                unknown_ids = {all_ids[2], all_ids[7]}

                def submit(sid, i):
                    outcome = (
                        {"unknown": True} if sid in unknown_ids else {"label": i % 4}
                    )
                    web.post(
                        "/v1/labels", json={"sample_id": sid, "outcome": outcome}
                    ).raise_for_status()

                for i, sid in enumerate(all_ids[:4]):
                    submit(sid, i)

                # mid-session page reload: state comes back from the server
                # alone, so already-answered cards are gone from the queue
                after_reload = pending()
                remaining = [item["sample_id"] for item in after_reload]
                assert not set(all_ids[:4]) & set(remaining)
                assert len(remaining) == 6
                for sid in remaining:
                    submit(sid, all_ids.index(sid))

                progress = web.get(f"/v1/runs/{run_id}/progress").json()
                assert progress == {"pending": 0, "labeled": 8, "rejected": 2}

                loop.join(timeout=60)
                assert not loop.is_alive(), "experiment never finished"
                if failure:
                    raise failure[0]

                audit = web.get("/v1/audit").json()["entries"]
                assert len(audit) == 10, "duplicate submissions reached the server"
                assert len({e["sample_id"] for e in audit}) == 10
                assert not any(e["overwrite"] for e in audit)
        finally:
            loop.join(timeout=60)

        result = load_run_result(run_dir)
        assert result.records[-1].labeled == 28  # 20 initial + 8 promotions
        assert result.records[0].rejected_ood == 2  # logged on the acquiring stage
        pool, _ = load_pool(run_dir / "pool-stage001.json")
        assert pool.discarded_ood_count == 2
