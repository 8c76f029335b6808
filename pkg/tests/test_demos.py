"""
Tests for demonstration generation, storage and replay
"""

import numpy as np
import pytest

from app.core.exceptions import ContractError, ExpertError, MissingArtifactError, RefusalError
from app.schemas.task import SessionTag
from app.services.catalog_service import resolve_schedule
from app.services.demo_service import MANIFEST_FILENAME, DemoService
from app.services.env_service import GridTableEnv


class TestGenerateDemos:

    def test_count_and_seeds(self, env, task_by_id):
        demos = DemoService.generate_demos(env, task_by_id["stack_green_cube_red_cube"], 3, seed=10)
        assert [d.seed for d in demos] == [10, 11, 12]
        assert all(d.demo_id == f"stack_green_cube_red_cube#{d.seed}" for d in demos)

    def test_demos_end_in_success(self, env, task_by_id):
        task = task_by_id["insert_yellow_peg_blue_hole"]
        for demo in DemoService.generate_demos(env, task, 5, seed=0):
            assert env.check_success(demo.final_state, task)
            assert 1 <= len(demo.steps) <= env.config.max_keyframes

    def test_zero_count(self, env, task_by_id):
        with pytest.raises(ContractError):
            DemoService.generate_demos(env, task_by_id["reach_red_cube"], 0, seed=0)


class TestStorage:

    def test_replay_fidelity(self, env, task_by_id, tmp_path):
        task = task_by_id["sweep_red_ball_yellow_zone"]
        demos = DemoService.generate_demos(env, task, 3, seed=100)
        path = DemoService.write_demo_file(tmp_path / "sweep.jsonl", demos)
        for original, record in zip(demos, DemoService.read_demo_file(path)):
            replayed = DemoService.replay_demo(env, task, record)
            assert replayed.final_state == original.final_state
            assert [s.action for s in replayed.steps] == [s.action for s in original.steps]
            for a, b in zip(replayed.steps, original.steps):
                np.testing.assert_array_equal(a.observation.views, b.observation.views)

    def test_corrupted_record_fails_replay(self, env, task_by_id, tmp_path):
        task = task_by_id["pick_red_cube_green_zone"]
        record = DemoService.generate_demos(env, task, 1, seed=0)[0].to_record()
        broken = record.model_copy(update={"actions": record.actions[:-1]})
        with pytest.raises(ExpertError):
            DemoService.replay_demo(env, task, broken)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            DemoService.read_demo_file(tmp_path / "none.jsonl")


class TestDataset:

    def test_manifest(self, tiny_experiment):
        manifest = DemoService.load_manifest(tiny_experiment.data_dir)
        counts = DemoService.task_counts(manifest)
        assert counts == {"reach_red_cube": 2, "press_red_button": 2, "press_blue_button": 1, "close_green_drawer": 1}
        assert manifest.files["press_blue_button"].session_tag == SessionTag.INCREMENTAL
        assert manifest.files["press_blue_button"].seed_start == tiny_experiment.schedule.incremental_seed_start

    def test_base_and_incremental_seeds_disjoint(self, tiny_experiment, catalog):
        env = GridTableEnv(tiny_experiment.env)
        by_id = {t.task_id: t for t in catalog}
        base = DemoService.load_demos(env, tiny_experiment.data_dir, by_id["reach_red_cube"], 2)
        new = DemoService.load_demos(env, tiny_experiment.data_dir, by_id["press_blue_button"], 1)
        assert {d.seed for d in base}.isdisjoint({d.seed for d in new})

    def test_refuses_non_empty_directory(self, tiny_experiment, catalog):
        base, sessions = resolve_schedule(catalog, tiny_experiment.schedule)
        with pytest.raises(RefusalError):
            DemoService.generate_dataset(tiny_experiment, base, [], catalog, tiny_experiment.data_dir)

    def test_rerun_is_identical(self, tiny_experiment, catalog, tmp_path):
        base, sessions = resolve_schedule(catalog, tiny_experiment.schedule)
        new = [t for group in sessions for t in group]
        before = {p.name: p.read_text() for p in (tmp_path / "data").rglob("*.jsonl")}
        DemoService.generate_dataset(tiny_experiment, base, new, catalog, tiny_experiment.data_dir, force=True)
        after = {p.name: p.read_text() for p in (tmp_path / "data").rglob("*.jsonl")}
        assert before == after
        assert (tmp_path / "data" / MANIFEST_FILENAME).exists()

    def test_too_few_stored_demos(self, tiny_experiment, catalog):
        env = GridTableEnv(tiny_experiment.env)
        task = next(t for t in catalog if t.task_id == "press_blue_button")
        with pytest.raises(MissingArtifactError):
            DemoService.load_demos(env, tiny_experiment.data_dir, task, 5)

    def test_task_without_demos(self, tiny_experiment, catalog):
        env = GridTableEnv(tiny_experiment.env)
        task = next(t for t in catalog if t.task_id == "reach_blue_ball")
        with pytest.raises(MissingArtifactError):
            DemoService.load_demos(env, tiny_experiment.data_dir, task, 1)
