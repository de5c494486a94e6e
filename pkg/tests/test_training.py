import shutil

import numpy as np
import pytest

import src.training as training
from src.config import DenoiserConfig, OptimizerConfig, ScheduleConfig
from src.errors import CapacityError, ContractError, TrainingDivergedError
from src.tensor import Tensor, load_checkpoint
from src.training import FINAL_CHECKPOINT, LOSS_LOG, Trainer, load_denoiser, make_batch
from src.utils.io import staging_dir

from .conftest import random_samples

MODEL = DenoiserConfig(variant="logen", depth=1, heads=2, width=8, max_points=40, num_frequencies=4)
SCHEDULE = ScheduleConfig(steps=50, beta_min=1e-3, beta_max=0.05)


def optimizer(**kw):
    base = dict(learning_rate=1e-3, iterations=4, batch_size=3, cond_dropout=0.1, checkpoint_every=2, log_every=1)
    base.update(kw)
    return OptimizerConfig(**base)


def trainer(samples, output_dir, **kw):
    return Trainer(samples, "vehicle", output_dir, MODEL, SCHEDULE, optimizer(**kw), seed=0)


class TestTrainer:
    def test_run_writes_outputs(self, tmp_path, rng):
        out = tmp_path / "run"
        result = trainer(random_samples(rng, 6), out).run()
        assert result.checkpoint == out / FINAL_CHECKPOINT
        assert result.checkpoint.exists()
        assert (out / "step_0000002.ckpt").exists()
        lines = (out / LOSS_LOG).read_text(encoding="utf-8").splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == 5
        assert all(np.isfinite(result.losses))
        assert not staging_dir(out).exists()

    def test_checkpoint_header(self, tmp_path, rng):
        trainer(random_samples(rng, 6), tmp_path / "run").run()
        weights, header, _ = load_denoiser(tmp_path / "run" / FINAL_CHECKPOINT)
        assert header["class_name"] == "vehicle"
        assert header["step"] == 4
        assert header["num_parameters"] == weights.num_parameters()
        assert DenoiserConfig.model_validate(header["model"]) == MODEL

    def test_zero_learning_rate_keeps_weights(self, tmp_path, rng):
        t = trainer(random_samples(rng, 6), tmp_path / "run", learning_rate=0.0)
        before = {k: p.data.copy() for k, p in t.weights.params.items()}
        t.run()
        for name, value in before.items():
            np.testing.assert_array_equal(t.weights[name].data, value)

    def test_resume_is_bit_identical(self, tmp_path, rng):
        samples = random_samples(rng, 6)
        straight = trainer(samples, tmp_path / "a").run()

        shutil.copytree(tmp_path / "a", tmp_path / "b")
        (tmp_path / "b" / FINAL_CHECKPOINT).unlink()
        resumed_trainer = trainer(samples, tmp_path / "b")
        resumed_trainer.resume(tmp_path / "b" / "step_0000002.ckpt")
        assert resumed_trainer.step == 2
        resumed = resumed_trainer.run()

        assert resumed.losses == straight.losses
        a, _ = load_checkpoint(tmp_path / "a" / FINAL_CHECKPOINT)
        b, _ = load_checkpoint(tmp_path / "b" / FINAL_CHECKPOINT)
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_resume_from_interrupted_staging(self, tmp_path, rng):
        samples = random_samples(rng, 6)
        straight = trainer(samples, tmp_path / "a").run()

        out = tmp_path / "b"
        first = trainer(samples, out)
        first.train_step()
        first.train_step()
        first.checkpoint()
        assert not out.exists()
        assert (staging_dir(out) / "step_0000002.ckpt").exists()

        second = trainer(samples, out)
        second.resume(staging_dir(out) / "step_0000002.ckpt")
        resumed = second.run()
        assert resumed.losses == straight.losses
        assert not staging_dir(out).exists()
        a, _ = load_checkpoint(tmp_path / "a" / FINAL_CHECKPOINT)
        b, _ = load_checkpoint(out / FINAL_CHECKPOINT)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_same_seed_same_weights(self, tmp_path, rng):
        samples = random_samples(rng, 6)
        trainer(samples, tmp_path / "a").run()
        trainer(samples, tmp_path / "b").run()
        a, _ = load_checkpoint(tmp_path / "a" / FINAL_CHECKPOINT)
        b, _ = load_checkpoint(tmp_path / "b" / FINAL_CHECKPOINT)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_finalize_writes_before_promotion(self, tmp_path, rng):
        out = tmp_path / "run"
        seen = []

        def finalize(work_dir):
            seen.append(work_dir)
            assert not out.exists()
            assert (work_dir / FINAL_CHECKPOINT).exists()
            (work_dir / "extra.json").write_text("{}", encoding="utf-8")

        trainer(random_samples(rng, 6), out).run(finalize=finalize)
        assert seen == [staging_dir(out)]
        assert (out / "extra.json").exists()

    def test_fresh_run_discards_stale_staging(self, tmp_path, rng):
        out = tmp_path / "run"
        staging_dir(out).mkdir()
        (staging_dir(out) / "step_0000099.ckpt").write_bytes(b"stale")
        trainer(random_samples(rng, 6), out).run()
        assert not (out / "step_0000099.ckpt").exists()

    def test_diverged_run_leaves_no_output(self, tmp_path, rng, monkeypatch):
        monkeypatch.setattr(training, "training_loss", lambda *a, **k: Tensor(np.array(np.nan)))
        out = tmp_path / "run"
        with pytest.raises(TrainingDivergedError) as info:
            trainer(random_samples(rng, 6), out).run()
        assert not out.exists()
        assert info.value.dump_path.parent == staging_dir(out)

    def test_nan_loss_dumps_batch(self, tmp_path, rng, monkeypatch):
        monkeypatch.setattr(training, "training_loss", lambda *a, **k: Tensor(np.array(np.nan)))
        t = trainer(random_samples(rng, 6), tmp_path / "run")
        with pytest.raises(TrainingDivergedError) as info:
            t.train_step()
        dump = info.value.dump_path
        assert dump.exists()
        with np.load(dump) as data:
            assert data["points"].shape[0] == 3
            assert data["conditions"].shape == (3, 6)

    def test_rejects_other_classes(self, tmp_path, rng):
        samples = random_samples(rng, 3) + random_samples(rng, 2, cls="post")
        with pytest.raises(ContractError):
            trainer(samples, tmp_path / "run")

    def test_capacity(self, tmp_path, rng):
        with pytest.raises(CapacityError):
            trainer(random_samples(rng, 3, n_range=(41, 45)), tmp_path / "run")

    def test_resume_other_class(self, tmp_path, rng):
        trainer(random_samples(rng, 6), tmp_path / "run").run()
        other = Trainer(random_samples(rng, 3, cls="post"), "post", tmp_path / "x", MODEL, SCHEDULE, optimizer())
        with pytest.raises(ContractError):
            other.resume(tmp_path / "run" / FINAL_CHECKPOINT)


class TestBatch:
    def test_make_batch(self, rng):
        samples = random_samples(rng, 3, n_range=(5, 9))
        batch = make_batch(samples)
        assert batch.size == 3
        np.testing.assert_array_equal(batch.counts(), [s.points.n for s in samples])
        assert batch.names == [s.name for s in samples]
