import json
import re
import shutil
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huvfa import cli, plots
from huvfa.config import (DecompositionSection, ExperimentConfig, LearnerSection, NetsSection,
                          dumps_config, loads_config, save_config)
from huvfa.env import bfs_array
from huvfa.reports import build_rows, read_csv

from conftest import small_config


def _run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="module")
def sup_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sup")
    save_config(root / "cfg.ini", small_config("supervised"))
    assert _run("train-horde", "--config", root / "cfg.ini", "--out", root / "out") == 0
    return root


@pytest.fixture(scope="module")
def rl_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("rl")
    save_config(root / "cfg.ini", small_config("rl"))
    assert _run("train-horde", "--config", root / "cfg.ini", "--out", root / "out") == 0
    return root


def _rows(path):
    tag, header, rows = read_csv(path)
    return tag, [dict(zip(header, r)) for r in rows]


class TestConfig:
    def test_defaults(self):
        assert ExperimentConfig.for_mode("supervised").horde.n_train_goals == 25
        assert ExperimentConfig.for_mode("rl").horde.n_train_goals == 15
        cfg = ExperimentConfig()
        assert (cfg.decomposition.rank, cfg.eval.episodes, cfg.eval.trained_goals,
                cfg.eval.unseen_goals, cfg.horde.episodes_per_goal) == (50, 10, 5, 3, 2)
        assert cfg.nets.lr == 0.05 and cfg.nets.batch_state_goal == 16
        assert cfg.nets.batch_option_action == 2

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), gamma=st.floats(0.0, 0.999),
           alpha=st.floats(1e-6, 1.0), rank=st.integers(1, 200),
           tol=st.floats(0.0, 1.0), lr=st.floats(1e-6, 10.0))
    def test_round_trip(self, seed, gamma, alpha, rank, tol, lr):
        cfg = ExperimentConfig(seed=seed, mode="rl",
                               learner=LearnerSection(gamma=gamma, alpha=alpha),
                               decomposition=DecompositionSection(rank=rank, tol=tol),
                               nets=NetsSection(lr=lr))
        assert loads_config(dumps_config(cfg)) == cfg

    def test_partial_file_uses_defaults(self):
        cfg = loads_config("[experiment]\nmode = rl\n[learner]\nepisodes = 1_000\n")
        assert cfg.horde.n_train_goals == 15 and cfg.learner.episodes == 1000

    @pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[learner]\nfoo = 1\n",
                                      "[learner]\ngamma = 1.5\n", "[experiment]\nmode = x\n"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            loads_config(text)

    def test_overrides(self):
        cfg = ExperimentConfig().with_overrides(seed=7, out=None)
        assert cfg.seed == 7 and cfg.out == "runs/default"


class TestReports:
    def test_build_rows_pad(self):
        header, rows = build_rows({"a": [1.0, 0.5], "b": [3.0]})
        assert header == ["step", "a", "b"]
        assert rows == [["0", "1", "3"], ["1", "0.5", ""]]

    def test_schema_required(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(tmp_path / "x.csv")


class TestHorde:
    def test_supervised_tables(self, sup_dir):
        files = sorted((sup_dir / "out" / "horde").glob("*.hqt"))
        assert len(files) == 25
        meta = json.loads((sup_dir / "out" / "horde" / "manifest.json").read_text())
        assert len(meta["goals"]) == 25 and "created" in meta
        assert loads_config((sup_dir / "out" / "config.ini").read_text()) == \
            small_config("supervised")

    def test_rl_tables(self, rl_dir):
        assert len(list((rl_dir / "out" / "horde").glob("*.hqt"))) == 15

    def test_rerun_identical(self, sup_dir, tmp_path):
        assert _run("train-horde", "--config", sup_dir / "cfg.ini", "--out", tmp_path) == 0
        for f in (sup_dir / "out" / "horde").glob("*.hqt"):
            assert f.read_bytes() == (tmp_path / "horde" / f.name).read_bytes()
        a = json.loads((sup_dir / "out" / "horde" / "manifest.json").read_text())
        b = json.loads((tmp_path / "horde" / "manifest.json").read_text())
        a.pop("created"), b.pop("created")
        assert a == b

    def test_seed_override(self, sup_dir, tmp_path):
        assert _run("train-horde", "--config", sup_dir / "cfg.ini", "--out", tmp_path,
                    "--seed", 5) == 0
        a = json.loads((sup_dir / "out" / "horde" / "manifest.json").read_text())["goals"]
        b = json.loads((tmp_path / "horde" / "manifest.json").read_text())["goals"]
        assert a != b


class TestBuild:
    @pytest.fixture(scope="class")
    @staticmethod
    def built(sup_dir, rl_dir):
        for root, modes in ((sup_dir, ("supervised", "uvfa-supervised")),
                            (rl_dir, ("rl", "uvfa-rl"))):
            for mode in modes:
                assert _run("build", "--mode", mode, "--config", root / "cfg.ini",
                            "--out", root / "out") == 0
        return sup_dir, rl_dir

    def test_weight_file_counts(self, built):
        sup, rl = built
        assert len(list((sup / "out" / "build" / "supervised").glob("*.bin"))) == 7
        assert len(list((rl / "out" / "build" / "rl").glob("*.bin"))) == 5
        assert len(list((sup / "out" / "build" / "uvfa-supervised").glob("*.bin"))) == 4
        assert (rl / "out" / "build" / "rl" / "history.csv").exists()

    def test_report_monotone(self, built):
        sup, _ = built
        tag, header, rows = read_csv(sup / "out" / "build" / "supervised" / "report.csv")
        assert tag == "# huvfa-build v1"
        for col in ("omega_als_error", "u_als_error"):
            i = header.index(col)
            errs = np.array([float(r[i]) for r in rows if r[i]])
            assert len(errs) > 1 and np.all(np.diff(errs) <= 1e-12)
        assert "u_loss_action" in header

    def test_idempotent(self, built, tmp_path):
        sup, _ = built
        dest = sup / "out" / "build" / "supervised"
        before = {f.name: f.read_bytes() for f in dest.iterdir()}
        assert _run("build", "--mode", "supervised", "--config", sup / "cfg.ini",
                    "--out", sup / "out") == 0
        after = {f.name: f.read_bytes() for f in dest.iterdir()}
        assert before == after

    def test_eval_rows(self, built):
        sup, rl = built
        for goals, n in (("trained", 5), ("unseen", 3)):
            assert _run("eval", "--mode", "supervised", "--goals", goals, "--config",
                        sup / "cfg.ini", "--out", sup / "out") == 0
            tag, rows = _rows(sup / "out" / "eval" / f"supervised-{goals}.csv")
            assert tag == "# huvfa-eval v1"
            per_goal = [r for r in rows if r["goal_x"] != "all"]
            agg = [r for r in rows if r["goal_x"] == "all"]
            assert len(per_goal) == n and len(agg) == 1
            means = [float(r["mean_steps"]) for r in per_goal]
            assert float(agg[0]["mean_steps"]) == pytest.approx(np.mean(means), rel=1e-5)
            for r in per_goal:
                assert 0.0 <= float(r["success_rate"]) <= 1.0
                assert float(r["mean_steps"]) >= float(r["bfs_mean"])

    def test_eval_deterministic(self, built):
        sup, _ = built
        path = sup / "out" / "eval" / "supervised-both.csv"
        assert _run("eval", "--mode", "supervised", "--config", sup / "cfg.ini",
                    "--out", sup / "out") == 0
        first = path.read_bytes()
        assert _run("eval", "--mode", "supervised", "--config", sup / "cfg.ini",
                    "--out", sup / "out") == 0
        assert path.read_bytes() == first

    def test_recorded_config_reused(self, built):
        sup, _ = built
        path = sup / "out" / "eval" / "supervised-unseen.csv"
        assert _run("eval", "--mode", "supervised", "--goals", "unseen", "--config",
                    sup / "cfg.ini", "--out", sup / "out") == 0
        first = path.read_bytes()
        assert _run("eval", "--mode", "supervised", "--goals", "unseen",
                    "--out", sup / "out") == 0
        assert path.read_bytes() == first

    def test_compare(self, built):
        sup, _ = built
        assert _run("compare", "--goals", "unseen", "--config", sup / "cfg.ini",
                    "--out", sup / "out") == 0
        _, rows = _rows(sup / "out" / "eval" / "compare-unseen.csv")
        models = {r["model"] for r in rows}
        assert models == {"ground_truth", "supervised", "uvfa-supervised"}
        truth = [r for r in rows if r["model"] == "ground_truth" and r["goal_x"] != "all"]
        assert len(truth) == 3
        assert len(list((sup / "out" / "reference").glob("*.hqt"))) == 3

    def test_plot(self, built):
        sup, _ = built
        goal = json.loads((sup / "out" / "horde" / "manifest.json").read_text())["goals"][0]
        assert _run("plot", "--mode", "supervised", "--goal", f"{goal[0]},{goal[1]}",
                    "--config", sup / "cfg.ini", "--out", sup / "out") == 0
        dest = sup / "out" / "plots" / "supervised"
        tag = f"{goal[0]:02d}_{goal[1]:02d}"
        for name in ("truth", "model"):
            svg = (dest / f"heatmap_{name}_{tag}.svg").read_text()
            assert svg.count('class="goal"') == 1
        options = (dest / f"options_{tag}.svg").read_text()
        assert options.count('class="panel"') == 4
        assert (dest / "matrix_omega.svg").read_text().count('class="matrix"') == 2


class TestExitCodes:
    def test_usage(self, tmp_path, capsys):
        assert _run("nonsense") == 1
        assert _run("build", "--out", tmp_path) == 1
        assert _run("plot", "--mode", "supervised", "--goal", "a,b", "--out", tmp_path) == 1
        assert _run("train-horde", "--workers", 0, "--out", tmp_path) == 1

    def test_invalid_config(self, tmp_path):
        (tmp_path / "bad.ini").write_text("[learner]\ngamma = 2.0\n")
        assert _run("train-horde", "--config", tmp_path / "bad.ini", "--out", tmp_path) == 1

    def test_missing(self, tmp_path):
        assert _run("build", "--mode", "supervised", "--out", tmp_path) == 2
        assert _run("eval", "--mode", "rl", "--out", tmp_path) == 2
        assert _run("train-horde", "--config", tmp_path / "nope.ini", "--out", tmp_path) == 2

    def test_eval_without_model(self, sup_dir):
        assert _run("eval", "--mode", "uvfa-rl", "--config", sup_dir / "cfg.ini",
                    "--out", sup_dir / "out") == 2

    def test_numeric_failure(self, sup_dir, tmp_path):
        shutil.copytree(sup_dir / "out" / "horde", tmp_path / "horde")
        cfg = replace(small_config("supervised"), nets=NetsSection(lr=1e6, epochs=50))
        save_config(tmp_path / "cfg.ini", cfg)
        with np.errstate(all="ignore"):
            code = _run("build", "--mode", "supervised", "--config", tmp_path / "cfg.ini",
                        "--out", tmp_path)
        assert code == 3


class TestPlots:
    def test_truth_heatmap_monotone_in_bfs(self, world, converged):
        goal, table = next(iter(converged.items()))
        values = table.q_omega.max(axis=1)
        actions = table.q_u[np.arange(world.n_states), table.q_omega.argmax(axis=1)].argmax(1)
        svg = plots.heatmap_svg(world, values, actions, goal)
        fills = re.findall(r'<rect x="([\d.]+)" y="([\d.]+)" [^>]*fill="#([0-9a-f]{6})"', svg)
        red = {}
        for x, y, colour in fills:
            red[(int(float(x)) // plots.CELL, int(float(y)) // plots.CELL)] = int(colour[:2], 16)
        d = bfs_array(world, goal)
        reds = np.array([red[tuple(p)] for p in world.states])
        levels = sorted(set(d.tolist()))
        # every cell one step closer is at least as red as every cell further out
        for near, far in zip(levels, levels[1:]):
            assert reds[d == near].min() >= reds[d == far].max()
        assert svg.count('class="goal"') == 1

    def test_option_panels(self, world, converged):
        goal, table = next(iter(converged.items()))
        svg = plots.option_panels_svg(world, table.q_omega, table.q_u, goal)
        assert svg.count('class="panel"') == 4
        assert svg.count('class="goal"') == 4

    def test_intensity(self):
        np.testing.assert_allclose(plots.intensity([1.0, 2.0, 3.0]), [0.0, 0.5, 1.0])
        assert not plots.intensity([2.0, 2.0]).any()
