"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines live; under
default capture they appear in the captured-output sections.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np

from contaminet import autodiff as ad
from contaminet.cli import main as cli_main
from contaminet.data import (
    ImageStore,
    apply_label_threshold,
    desk_policy,
    encode_labels,
    load_manifest,
)
from contaminet.evaluate import bootstrap_ci, expert_consensus_auc, macro_auc, roc_auc
from contaminet.model import ModelConfig, build_model
from contaminet.optim import AdamState, ScheduleConfig, adam_step, group_scaled_lrs, one_cycle_lr
from contaminet.synth import generate_dataset
from contaminet.train import TrainConfig, fit, predict_scores

from oracles import adam_reference, consensus_protocol_reference, pairwise_auc


@contextmanager
def criterion(number, title, budget_seconds=None):
    start = time.perf_counter()
    failed = False
    try:
        yield
    except BaseException:
        failed = True
        raise
    finally:
        elapsed = time.perf_counter() - start
        status = "FAIL" if failed else "PASS"
        suffix = f" ({elapsed:.1f}s" + (f", budget {budget_seconds:.0f}s)" if budget_seconds else ")")
        print(f"\nCRITERION {number}: {status} - {title}{suffix}")
        if not failed and budget_seconds is not None:
            assert elapsed < budget_seconds, f"criterion {number} took {elapsed:.1f}s > {budget_seconds}s"


def test_criterion_1_schedule_fidelity():
    with criterion(1, "one-cycle schedule fidelity", budget_seconds=1.0):
        cfg = ScheduleConfig(max_lr=0.1, total_steps=1000, warm_frac=0.3)
        values = np.array([one_cycle_lr(cfg, i) for i in range(1000)])
        assert values[0] == 0.1 / 25
        assert values[300] == 0.1

        def direct(i):
            if i < 300:
                lr1, lr2, total, j = 0.1 / 25, 0.1, 300, i
            else:
                lr1, lr2, total, j = 0.1, 0.1 / 2000, 700, i - 300
            return lr2 + (lr1 - lr2) / 2.0 * (1.0 + math.cos(j * math.pi / total))

        for i in range(1000):
            assert abs(values[i] - direct(i)) <= 1e-12
        peak = int(np.argmax(values))
        assert peak == 300 and np.sum(values == values.max()) == 1
        assert np.all(np.diff(values[: peak + 1]) >= 0)
        assert np.all(np.diff(values[peak:]) <= 0)


def test_criterion_2_gradient_correctness():
    with criterion(2, "analytic gradients vs central differences, 20 seeds", budget_seconds=120.0):
        worst = 0.0
        for seed in range(20):
            model = build_model(ModelConfig(head_outputs=4), seed)
            rng = np.random.default_rng(10_000 + seed)
            x = rng.normal(size=(2, 3, 36, 47))
            y = (rng.random((2, 4)) < 0.5).astype(float)

            def loss_fn():
                return ad.bce_sum_loss(model.forward(x), y)

            err = ad.finite_diff_gradcheck(
                loss_fn,
                model.parameters(),
                h=1e-5,
                samples_per_param=3,
                rng=np.random.default_rng(seed),
            )
            worst = max(worst, err)
        assert worst <= 1e-4, f"worst relative error {worst:.3e}"


def test_criterion_3_auc_oracle_equivalence():
    with criterion(3, "sort-based AUC equals pairwise oracle on 200 instances", budget_seconds=5.0):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 65))
            scores = np.round(rng.random(n) * int(rng.integers(1, 9))) / 4.0  # injected ties
            truth = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(float)
            if truth.sum() in (0, n):
                truth[0] = 1.0 - truth[0]
            assert abs(roc_auc(scores, truth) - pairwise_auc(scores, truth)) <= 1e-12


def test_criterion_4_adam_equivalence():
    with criterion(4, "Adam matches scalar reference; group displacement ratios"):
        rng = np.random.default_rng(1)
        theta0 = rng.normal(size=9)
        p = ad.Tensor(theta0.copy(), requires_grad=True)
        state = AdamState.for_params([p])
        grads = [rng.normal(size=9) for _ in range(100)]
        lrs = [float(rng.uniform(1e-4, 5e-2)) for _ in range(100)]
        for g, lr in zip(grads, lrs):
            adam_step([p], [g], state, lr)
        want = adam_reference(theta0, grads, lrs)
        assert np.max(np.abs(p.data - np.array(want))) <= 1e-12

        params = [ad.Tensor(np.full(6, 0.25), requires_grad=True) for _ in range(3)]
        states = [AdamState.for_params([q]) for q in params]
        grad = rng.normal(size=6)
        for q, s, lr in zip(params, states, group_scaled_lrs(0.09)):
            adam_step([q], [grad.copy()], s, lr)
        d1, d2, d3 = (q.data - 0.25 for q in params)
        assert np.max(np.abs(d1 / d3 - 1.0 / 9.0)) <= 1e-12
        assert np.max(np.abs(d2 / d3 - 1.0 / 3.0)) <= 1e-12


def test_criterion_5_end_to_end_learning(tmp_path):
    with criterion(5, "synthetic 4-label task reaches macro test AUC >= 0.95", budget_seconds=300.0):
        root = tmp_path / "shapes"
        generate_dataset(str(root), n_train=2000, n_valid=400, n_test=200, seed=0)
        records, vocab = load_manifest(str(root / "manifest.csv"))
        train_recs = [r for r in records if r.split == "train"]
        valid_recs = [r for r in records if r.split == "valid"]
        test_recs = [r for r in records if r.split == "test"]
        assert (len(train_recs), len(valid_recs), len(test_recs)) == (2000, 400, 200)
        policy = desk_policy()  # 40x53 resize, 36x47 crop
        store = ImageStore(str(root), cache=True)
        model = build_model(ModelConfig(head_outputs=len(vocab)), 0)
        cfg = TrainConfig(epochs=12, batch_size=64, max_lr=3e-3, seed=0)
        report = fit(model, train_recs, valid_recs, vocab, policy, cfg, store)
        assert report.epochs_completed == 12
        scores = predict_scores(model, test_recs, vocab, policy, store, tta=5, seed=0)
        truth = np.stack([encode_labels(r, vocab) for r in test_recs])
        result = macro_auc(scores, truth)
        assert result.mean_auc >= 0.95, f"macro test AUC {result.mean_auc:.4f}"


def test_criterion_6_expert_protocol():
    with criterion(6, "one-vs-rest rater protocol matches independent reimplementation"):
        rng = np.random.default_rng(60)
        latent = (rng.random((60, 5)) < 0.5).astype(float)
        raters = np.empty((4, 60, 5))
        for r in range(4):
            flips = rng.random((60, 5)) < 0.1
            raters[r] = np.where(flips, 1.0 - latent, latent)
        res = expert_consensus_auc(raters)
        want_per, want_mean = consensus_protocol_reference(raters)
        for got, want in zip(res.per_expert, want_per):
            assert abs(got.mean_auc - want) <= 1e-12
        assert abs(res.mean_auc - want_mean) <= 1e-12
        # p=0.1 flips leave ~90% agreement with the latent truth, so every
        # held-out rater must rank far above chance
        for got in res.per_expert:
            assert got.mean_auc > 0.75


def test_criterion_7_bootstrap_behavior():
    with criterion(7, "bootstrap CIs: degenerate, reproducible, width shrinks", budget_seconds=30.0):
        scores = np.tile([0.9, 0.8, 0.2, 0.1], 10)
        truth = np.tile([1.0, 1.0, 0.0, 0.0], 10)
        ci = bootstrap_ci(lambda idx: roc_auc(scores[idx], truth[idx]), 40, resamples=10_000, level=0.95, seed=1)
        assert (ci.lower, ci.upper) == (1.0, 1.0)

        def planted(n, seed):
            rng = np.random.default_rng(seed)
            t = (rng.random(n) < 0.5).astype(float)
            t[0], t[1] = 1.0, 0.0
            s = rng.normal(size=n) + 1.5 * t
            return s, t

        s, t = planted(200, 7)
        a = bootstrap_ci(lambda idx: roc_auc(s[idx], t[idx]), 200, resamples=10_000, seed=9)
        b = bootstrap_ci(lambda idx: roc_auc(s[idx], t[idx]), 200, resamples=10_000, seed=9)
        assert (a.lower, a.upper, a.point) == (b.lower, b.upper, b.point)

        widths = []
        for n in (50, 200, 800):
            s, t = planted(n, 40 + n)
            ci = bootstrap_ci(lambda idx: roc_auc(s[idx], t[idx]), n, resamples=10_000, seed=11)
            assert ci.lower <= ci.point <= ci.upper
            widths.append(ci.upper - ci.lower)
        assert widths[0] > widths[1] > widths[2], f"widths {widths}"


def test_criterion_8_thresholding(tmp_path):
    with criterion(8, "label-frequency thresholding matches brute-force filter"):
        rng = np.random.default_rng(88)
        planted = {f"label_{i:02d}": int(rng.integers(1, 1200)) for i in range(40)}
        planted["exactly_100"] = 100
        planted["exactly_1000"] = 1000
        total = max(planted.values())
        rows = ["image_path,split,labels"]
        for j in range(total):
            present = [n for n, c in planted.items() if c > j]
            rows.append(f"img_{j}.png,train,{';'.join(present)}")
        path = tmp_path / "planted.csv"
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        records, vocab = load_manifest(str(path))
        assert dict(vocab.entries) == planted

        prev_rec = prev_occ = 1.0 + 1e-9
        for min_count in (0, 1, 50, 100, 101, 300, 999, 1000, 1001):
            filtered, report = apply_label_threshold(vocab, min_count, records)
            brute = {n for n, c in planted.items() if c >= min_count}
            assert set(filtered.names) == brute
            assert report.retained_record_fraction <= prev_rec
            assert report.retained_occurrence_fraction <= prev_occ
            prev_rec = report.retained_record_fraction
            prev_occ = report.retained_occurrence_fraction
        kept, _ = apply_label_threshold(vocab, 100, records)
        assert "exactly_100" in kept  # ">= threshold" is inclusive
        kept, _ = apply_label_threshold(vocab, 1000, records)
        assert "exactly_1000" in kept


def test_criterion_9_reproducibility(tmp_path):
    with criterion(9, "train+eval reruns from persisted config are bitwise identical"):
        data_dir = tmp_path / "data"
        generate_dataset(str(data_dir), n_train=96, n_valid=32, n_test=24, image_size=(48, 64), seed=3)
        cfg = {
            "seed": 13,
            "data": {"manifest": str(data_dir / "manifest.csv")},
            "model": {"conv_blocks": [[4, 3, 2], [8, 3, 2]], "hidden_units": 16},
            "augment": {"desk_scale": True},
            "train": {"epochs": 2, "batch_size": 32, "max_lr": 0.003},
            "eval": {"tta": 3, "resamples": 150},
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")

        out_a = tmp_path / "run_a"
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(out_a)]) == 0
        persisted = out_a / "config.json"
        out_b = tmp_path / "run_b"
        assert cli_main(["train", "--config", str(persisted), "--out", str(out_b)]) == 0
        assert (out_a / "fit_report.json").read_bytes() == (out_b / "fit_report.json").read_bytes()
        assert (out_a / "lr_trace.csv").read_bytes() == (out_b / "lr_trace.csv").read_bytes()
        assert (out_a / "final.ckpt").read_bytes() == (out_b / "final.ckpt").read_bytes()

        evals = []
        for run_dir, name in ((out_a, "eval_a"), (out_b, "eval_b")):
            eval_out = tmp_path / name
            code = cli_main(
                [
                    "eval",
                    "--checkpoint", str(run_dir / "final.ckpt"),
                    "--manifest", str(data_dir / "manifest.csv"),
                    "--raters", str(data_dir / "raters.csv"),
                    "--config", str(persisted),
                    "--out", str(eval_out),
                ]
            )
            assert code == 0
            evals.append(eval_out)
        a, b = evals
        assert (a / "eval_report.json").read_bytes() == (b / "eval_report.json").read_bytes()
        assert (a / "eval_report.csv").read_bytes() == (b / "eval_report.csv").read_bytes()
        assert (a / "scores.csv").read_bytes() == (b / "scores.csv").read_bytes()
