import dataclasses
import math

import numpy as np
import pytest

from naturalcl.data import synth_train_test
from naturalcl.mitigation import Strategy
from naturalcl.model import AdamState, init_mlp
from naturalcl.protocol import eval_set_upto, make_class_il
from naturalcl.runner import (
    ExperimentConfig,
    config_from_pairs,
    config_to_text,
    emit_report,
    evaluate,
    load_config,
    parse_config_text,
    read_detail_csv,
    run_experiment,
    run_phase,
    run_seed,
)


def small_cfg(**kw) -> ExperimentConfig:
    base = dict(phases=5, schedule_kind="powerlaw", width=32, batch_size=32, steps=60,
                seeds=[1, 2], data_source="synthetic", synth_classes=10, synth_dim=16,
                synth_per_class=100, synth_test_per_class=40, synth_separation=6.0)
    base.update(kw)
    return ExperimentConfig(**base)


def same(a, b):
    """Result lists equal, with NaN matching NaN."""
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(dataclasses.astuple(x), dataclasses.astuple(y))


@pytest.fixture(scope="module")
def blobs():
    return synth_train_test(10, 16, 100, 40, 6.0, seed=0)


class TestConfig:
    def test_parse_flat_keys(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nscenario.phases = 3\nrun.seeds = 4, 5\nmitigation.kind = ewc  # trailing\n"
                     "mitigation.lambda = 7.5\n")
        cfg = load_config(p)
        assert cfg.phases == 3 and cfg.seeds == [4, 5]
        assert cfg.mitigation_kind == "ewc" and cfg.mitigation_lambda == 7.5

    def test_overrides_win(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("train.steps = 10\n")
        assert load_config(p, {"train.steps": "3"}).steps == 3

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config_text("train.epochs = 3\n")

    @pytest.mark.parametrize("pairs", [{"run.seeds": ""}, {"train.steps": "0"}, {"train.fraction": "1.5"}])
    def test_invalid_values(self, pairs):
        with pytest.raises(ValueError):
            config_from_pairs(pairs)

    def test_text_round_trip(self):
        cfg = small_cfg(mitigation_kind="si", seeds=[3, 9])
        assert config_from_pairs(parse_config_text(config_to_text(cfg))) == cfg

    @pytest.mark.parametrize("sched,mit,label", [
        ("powerlaw", "none", "PL"), ("none", "none", "LB"), ("joint", "none", "UB"),
        ("none", "ewc", "EWC"), ("powerlaw", "lwf", "PL+LwF"), ("uniform", "agem", "A-GEM")])
    def test_labels(self, sched, mit, label):
        assert small_cfg(schedule_kind=sched, mitigation_kind=mit).label == label


class TestRunPhase:
    def _setup(self, blobs):
        train, _ = blobs
        m = init_mlp([16, 8, 10], 0)
        return train, m, AdamState.for_model(m)

    def test_zero_steps_rejected(self, blobs):
        train, m, opt = self._setup(blobs)
        with pytest.raises(ValueError):
            run_phase(m, opt, Strategy(), (np.arange(5), np.zeros(5, int)), 0, 4,
                      np.random.default_rng(0), source=None, active=[0], phase=1)

    def test_empty_multiset_rejected(self, blobs):
        train, m, opt = self._setup(blobs)
        with pytest.raises(ValueError):
            run_phase(m, opt, Strategy(), (np.empty(0, int), np.empty(0, int)), 3, 4,
                      np.random.default_rng(0), source=None, active=[0], phase=1)


def test_joint_single_phase_is_plain_supervised_training(blobs):
    cfg_joint = small_cfg(phases=1, schedule_kind="joint", seeds=[3], steps=400)
    cfg_plain = small_cfg(phases=1, schedule_kind="none", seeds=[3], steps=400)
    a, b = {}, {}
    ra = run_seed(cfg_joint, *blobs, 3, capture=a)
    rb = run_seed(cfg_plain, *blobs, 3, capture=b)
    same(ra, rb)
    for p, q in zip(a["model"].params, b["model"].params):
        np.testing.assert_array_equal(p, q)
    assert math.isnan(ra[0].acc_old) and ra[0].acc_all > 0.8


def test_untrained_model_is_at_chance(blobs):
    _, test = blobs
    sc = make_class_il(10, 1, seed=0)
    accs = [evaluate(init_mlp([16, 32, 10], s), eval_set_upto(sc, test, 1), range(10), 1)[0]
            for s in range(40)]
    assert abs(np.mean(accs) - 0.1) < 0.05


def test_strategy_composition_ewc_lambda_zero(blobs):
    a, b = {}, {}
    ra = run_seed(small_cfg(), *blobs, 1, capture=a)
    rb = run_seed(small_cfg(mitigation_kind="ewc", mitigation_lambda=0.0), *blobs, 1, capture=b)
    same(ra, rb)
    for p, q in zip(a["model"].params, b["model"].params):
        np.testing.assert_array_equal(p, q)


def test_determinism_and_acc_all_weighting(blobs):
    r1 = run_experiment(small_cfg(), blobs)
    r2 = run_experiment(small_cfg(), blobs)
    same(r1.results, r2.results)
    for r in r1.results:
        if r.phase == 1:
            assert math.isnan(r.acc_old) and r.acc_all == r.acc_new
            continue
        # every group has 2 classes x 40 test samples
        n_old, n_new = 80 * (r.phase - 1), 80
        assert r.acc_all == pytest.approx((n_old * r.acc_old + n_new * r.acc_new) / (n_old + n_new))
        assert 0 <= r.acc_all <= 1


def test_buffer_subset_chain_and_plan_realized(blobs):
    cap = {}
    run_seed(small_cfg(schedule_kind="exponential"), *blobs, 2, capture=cap)
    buf, plan = cap["buffer"], cap["plan"]
    rows = buf.dump_csv().splitlines()[1:]
    by_class = {}
    for row in rows:
        c, t, n = map(int, row.split(","))
        by_class.setdefault(c, []).append((t, n))
    for c, hist in by_class.items():
        counts = [n for _, n in sorted(hist)]
        assert counts == sorted(counts, reverse=True)
        t_last, n_last = max(hist)
        assert n_last == plan.count(t_last, buf.class_group[c]) // 2


def test_rehearsal_budget_audit_agrees(blobs):
    totals = {}
    for kind in ("powerlaw", "exponential", "uniform"):
        rep = run_experiment(small_cfg(schedule_kind=kind, seeds=[1], steps=5), blobs)
        totals[kind] = rep.rehearsal_budget()
    assert totals["powerlaw"] > 0
    g_times_t = 5 * 5
    assert max(totals.values()) - min(totals.values()) <= g_times_t


def test_lower_baseline_forgets_and_powerlaw_retains(blobs):
    lb = run_experiment(small_cfg(schedule_kind="none", steps=150), blobs)
    pl = run_experiment(small_cfg(schedule_kind="powerlaw", steps=150), blobs)
    assert lb.final("acc_old")[0] < 0.05
    assert pl.final()[0] - lb.final()[0] >= 0.2


def test_agem_and_regularizers_run(blobs):
    for mit, sched in (("agem", "uniform"), ("si", "none"), ("lwf", "powerlaw")):
        rep = run_experiment(small_cfg(schedule_kind=sched, mitigation_kind=mit, seeds=[1], steps=20), blobs)
        assert len(rep.results) == 5


def test_training_fraction(blobs):
    cap = {}
    run_seed(small_cfg(fraction=0.5, schedule_kind="none", steps=5), *blobs, 1, capture=cap)
    assert all(n == 50 for n in cap["buffer"].initial_size.values())


def test_domain_il_runs(blobs):
    cfg = small_cfg(scenario_kind="domain_il", phases=3, steps=30, seeds=[1])
    rep = run_experiment(cfg, blobs)
    assert [r.phase for r in rep.results] == [1, 2, 3]
    assert rep.rehearsal_budget() > 0


def test_parallel_seeds_match_sequential(blobs):
    seq = run_experiment(small_cfg(steps=10), blobs)
    par = run_experiment(small_cfg(steps=10, workers=2), blobs)
    same(seq.results, par.results)


def test_seed_failure_reports_context(blobs):
    with pytest.raises(RuntimeError, match="seed 1"):
        run_experiment(small_cfg(phases=3), blobs)  # 3 does not divide 10 classes


class TestEmitReport:
    def test_files_and_shapes(self, blobs, tmp_path):
        rep = run_experiment(small_cfg(seeds=[1, 2, 3, 4, 5], steps=3), blobs)
        written = emit_report(rep, tmp_path)
        assert {p.name for p in written} == {"results.csv", "summary.csv", "summary.txt", "report.json"}
        detail = (tmp_path / "results.csv").read_text().splitlines()
        assert detail[0] == "method,seed,phase,acc_all,acc_old,acc_new"
        assert len(detail) - 1 == 25
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        assert len(summary) - 1 == 5
        parsed = read_detail_csv(tmp_path / "results.csv")
        assert [row["phase"] for row in parsed["PL"]] == [1, 2, 3, 4, 5]

    def test_byte_identical(self, blobs, tmp_path):
        for sub in ("a", "b"):
            emit_report(run_experiment(small_cfg(steps=3), blobs), tmp_path / sub)
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_summary_statistics(self, blobs):
        rep = run_experiment(small_cfg(seeds=[1, 2, 3], steps=3), blobs)
        last = rep.summary()[-1]
        vals = [r.acc_all for r in rep.results if r.phase == 5]
        assert last["acc_all_mean"] == pytest.approx(np.mean(vals))
        assert last["acc_all_sd"] == pytest.approx(np.std(vals, ddof=1))

    def test_unwritable_path(self, blobs, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_report(run_experiment(small_cfg(steps=2, seeds=[1]), blobs), blocker / "out")


def test_mnist_loader_path_with_stand_in_idx(tmp_path):
    """Small 28x28 IDX files laid out like MNIST drive the real loading path."""
    from naturalcl.data import MNIST_FILES, Dataset, write_idx

    rng = np.random.default_rng(0)
    for split, n in (("train", 200), ("test", 50)):
        labels = np.repeat(np.arange(10), n // 10).astype(np.uint8)
        feats = rng.integers(0, 40, (n, 784)).astype(np.float32) / 255
        feats[np.arange(n), labels.astype(int) * 70] = 1.0
        write_idx(Dataset(feats, labels, split, (28, 28)), *(tmp_path / f for f in MNIST_FILES[split]))
    base = dict(data_source="mnist", data_dir=str(tmp_path), width=16, steps=5, seeds=[1])
    rep = run_experiment(ExperimentConfig(**base))
    assert len(rep.results) == 5
    rep = run_experiment(ExperimentConfig(scenario_kind="domain_il", phases=2, **base))
    assert len(rep.results) == 2
