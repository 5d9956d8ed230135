import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdaa.adapter import ModalBatch
from mdaa.errors import InvalidConfig, InvalidSeverity
from mdaa.simulate import (
    PRESETS,
    CorruptionKind,
    CorruptionSpec,
    FeatureFile,
    Modality,
    Phase,
    PhaseSchedule,
    TaskConfig,
    clean_schedule,
    corrupt,
    generate_task,
    imbalanced_counts,
    preset_schedule,
    read_features,
    rms_normalize,
    stream,
    stream_phases,
    with_corruption,
    write_features,
    write_features_csv,
)

SMALL = TaskConfig(num_classes=4, audio_dim=6, video_dim=5, source_samples=200, heldout_samples=40)


def _stacked(task, schedule):
    return [(s.phase_index, s.batch.audio, s.batch.video, s.labels) for s in stream(task, schedule)]


class TestGenerateTask:
    def test_same_seed_is_bit_identical(self):
        a, b = generate_task(SMALL), generate_task(SMALL)
        for m in Modality:
            np.testing.assert_array_equal(a[0].class_means[m], b[0].class_means[m])
        for x, y in zip(a[1:], b[1:]):
            np.testing.assert_array_equal(x.audio, y.audio)
            np.testing.assert_array_equal(x.video, y.video)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_seed_changes_data(self):
        a = generate_task(SMALL)[1]
        b = generate_task(TaskConfig(**{**SMALL.__dict__, "seed": 1}))[1]
        assert not np.array_equal(a.audio, b.audio)

    def test_means_are_distinct(self):
        task = generate_task(TaskConfig(num_classes=20, audio_dim=2, video_dim=2))[0]
        for means in task.class_means.values():
            d = np.linalg.norm(means[:, None] - means[None], axis=-1)
            assert np.min(d[np.triu_indices(20, 1)]) > 0

    def test_zero_spread_is_separable(self):
        cfg = TaskConfig(**{**SMALL.__dict__, "within_class_std": 0.0})
        task, src, _ = generate_task(cfg)
        means = task.encode(task.class_means[Modality.AUDIO])
        d = np.linalg.norm(src.audio[:, None] - means[None], axis=-1)
        np.testing.assert_array_equal(np.argmin(d, axis=1), src.labels)

    @pytest.mark.parametrize("ratio", [1.0, 2.0, 4.0, 10.0])
    def test_exact_imbalance(self, ratio):
        cfg = TaskConfig(num_classes=10, source_samples=2000, imbalance=ratio)
        counts = np.bincount(generate_task(cfg)[1].labels, minlength=10)
        assert counts.max() == ratio * counts.min()
        assert abs(counts.sum() - 2000) <= 0.05 * 2000

    @given(st.integers(2, 30), st.integers(1, 20), st.integers(50, 5000))
    def test_imbalanced_counts_integer_ratio(self, C, ratio, total):
        counts = imbalanced_counts(total, C, float(ratio))
        assert counts.min() >= 1
        assert counts[-1] == ratio * counts[0]
        assert np.all(np.diff(counts) >= 0)

    def test_heldout_is_balanced(self):
        held = generate_task(SMALL)[2]
        np.testing.assert_array_equal(np.bincount(held.labels), [10, 10, 10, 10])

    def test_features_are_rms_normalized(self):
        src = generate_task(SMALL)[1]
        np.testing.assert_allclose(np.sqrt(np.mean(src.audio**2, axis=1)), 1.0, rtol=1e-5)

    @pytest.mark.parametrize(
        "change",
        [
            {"num_classes": 1},
            {"audio_dim": 0},
            {"within_class_std": -1.0},
            {"imbalance": 0.5},
            {"source_samples": 2},
        ],
    )
    def test_invalid_config(self, change):
        with pytest.raises(InvalidConfig):
            generate_task(TaskConfig(**{**SMALL.__dict__, **change}))


class TestCorrupt:
    @pytest.mark.parametrize("kind", list(CorruptionKind))
    def test_zero_severity_is_identity(self, kind):
        x = np.random.default_rng(0).standard_normal((5, 7))
        out = corrupt(x, CorruptionSpec(Modality.AUDIO, kind, 0.0), np.random.default_rng(1))
        np.testing.assert_array_equal(out, x)

    def test_unit_scale_is_identity(self):
        x = np.random.default_rng(0).standard_normal(9)
        spec = CorruptionSpec(Modality.VIDEO, CorruptionKind.SCALE, 1.0)
        np.testing.assert_array_equal(corrupt(x, spec, np.random.default_rng(0)), x)

    @pytest.mark.parametrize("sigma", [0.5, 2.0])
    def test_gaussian_variance(self, sigma):
        x = np.random.default_rng(0).standard_normal(100_000)
        spec = CorruptionSpec(Modality.AUDIO, CorruptionKind.ADDITIVE_GAUSSIAN, sigma)
        diff = corrupt(x, spec, np.random.default_rng(1)) - x
        assert abs(np.var(diff) / sigma**2 - 1) <= 0.05

    def test_dropout_rate(self):
        x = np.ones(100_000)
        spec = CorruptionSpec(Modality.AUDIO, CorruptionKind.DROPOUT, 0.3)
        out = corrupt(x, spec, np.random.default_rng(2))
        assert abs(np.mean(out == 0) - 0.3) <= 0.01
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_shift_and_scale(self):
        x = np.array([1.0, -2.0])
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(
            corrupt(x, CorruptionSpec("audio", "shift", 1.5), rng), [2.5, -0.5]
        )
        np.testing.assert_array_equal(corrupt(x, CorruptionSpec("audio", "scale", 3.0), rng), [3.0, -6.0])

    @pytest.mark.parametrize(
        "kind, severity",
        [("dropout", 1.5), ("additive_gaussian", -1.0), ("shift", float("nan"))],
    )
    def test_invalid_severity(self, kind, severity):
        with pytest.raises(InvalidSeverity):
            CorruptionSpec(Modality.AUDIO, kind, severity)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CorruptionSpec(Modality.AUDIO, "blur", 1.0)


class TestStream:
    def test_deterministic(self):
        task = generate_task(SMALL)[0]
        sched = preset_schedule("interleaved", phase_samples=50, batch_size=16)
        for a, b in zip(_stacked(task, sched), _stacked(task, sched)):
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)

    def test_clean_equals_zero_severity(self):
        task = generate_task(SMALL)[0]
        clean = clean_schedule(3, phase_samples=40, batch_size=8)
        zero = PhaseSchedule(
            tuple(Phase(CorruptionSpec("audio", "additive_gaussian", 0.0), 40, 8) for _ in range(3))
        )
        for a, b in zip(_stacked(task, clean), _stacked(task, zero)):
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)

    def test_progressive_audio_leaves_video_untouched(self):
        task = generate_task(SMALL)[0]
        sched = preset_schedule("progressive-audio", phase_samples=30, batch_size=7)
        clean = clean_schedule(6, phase_samples=30, batch_size=7)
        for c, s in zip(stream_phases(task, sched), stream_phases(task, clean)):
            np.testing.assert_array_equal(c.video, s.video)
            np.testing.assert_array_equal(c.labels, s.labels)
            assert not np.array_equal(c.audio, s.audio)

    def test_interleaved_alternates(self):
        sched = preset_schedule("interleaved", phase_samples=10)
        targets = [ph.corruption.modality for ph in sched.phases]
        assert targets == [Modality.AUDIO, Modality.VIDEO] * 3
        four = PhaseSchedule(sched.phases[:4], "interleaved")
        assert [p.corruption.modality for p in four.phases] == [
            Modality.AUDIO if k % 2 == 0 else Modality.VIDEO for k in range(4)
        ]

    def test_mode_invariants_enforced(self):
        a = Phase(CorruptionSpec("audio", "shift", 1.0), 10, 5)
        v = Phase(CorruptionSpec("video", "shift", 1.0), 10, 5)
        with pytest.raises(InvalidConfig):
            PhaseSchedule((a, v), "progressive_single_modality")
        with pytest.raises(InvalidConfig):
            PhaseSchedule((a, a), "interleaved")
        with pytest.raises(InvalidConfig):
            PhaseSchedule((Phase(None, 10, 0),))

    @pytest.mark.parametrize("name", PRESETS)
    def test_presets(self, name):
        sched = preset_schedule(name, phase_samples=20)
        assert len(sched.phases) == 6
        assert sched.phases[0].batch_size == (64 if name == "interleaved" else 1)

    def test_reverse_and_unknown(self):
        fwd = preset_schedule("progressive-video")
        assert preset_schedule("progressive-video", reverse=True).phases == fwd.phases[::-1]
        with pytest.raises(InvalidConfig):
            preset_schedule("sideways")

    def test_batches_cover_phase(self):
        task = generate_task(SMALL)[0]
        batches = list(stream(task, clean_schedule(2, phase_samples=25, batch_size=10)))
        assert [len(b.batch) for b in batches] == [10, 10, 5, 10, 10, 5]
        assert [b.phase_index for b in batches] == [0, 0, 0, 1, 1, 1]

    def test_adapter_input_carries_no_labels(self):
        task = generate_task(SMALL)[0]
        sb = next(stream(task, clean_schedule(1, 8, 8)))
        assert isinstance(sb.batch, ModalBatch)
        assert not hasattr(sb.batch, "labels")

    def test_with_corruption(self):
        sched = with_corruption(preset_schedule("progressive-audio"), severity=0.0)
        assert all(ph.corruption.severity == 0.0 for ph in sched.phases)


class TestNormalize:
    @settings(max_examples=50)
    @given(st.floats(1.0, 1e3))
    def test_scale_invariant(self, c):
        # eps perturbs the result by about eps / (2 * mean square); keep that small
        x = np.random.default_rng(0).standard_normal((3, 8))
        np.testing.assert_allclose(rms_normalize(c * x), rms_normalize(x), rtol=1e-5)


class TestFeatureFiles:
    def _data(self):
        rng = np.random.default_rng(3)
        audio = rng.standard_normal((12, 3)).astype(np.float32).astype(np.float64)
        video = rng.standard_normal((12, 2)).astype(np.float32).astype(np.float64)
        return FeatureFile(audio, video, rng.integers(0, 4, 12), 4)

    def test_binary_round_trip(self, tmp_path):
        data = self._data()
        write_features(tmp_path / "f.aexf", data)
        back = read_features(tmp_path / "f.aexf")
        np.testing.assert_array_equal(back.audio, data.audio)
        np.testing.assert_array_equal(back.video, data.video)
        np.testing.assert_array_equal(back.labels, data.labels)
        assert back.num_classes == 4

    def test_csv_round_trip(self, tmp_path):
        data = self._data()
        write_features_csv(tmp_path / "f.csv", data)
        back = read_features(tmp_path / "f.csv")
        np.testing.assert_array_equal(back.audio, data.audio)
        np.testing.assert_array_equal(back.labels, data.labels)

    def test_truncated_binary(self, tmp_path):
        write_features(tmp_path / "f.aexf", self._data())
        raw = (tmp_path / "f.aexf").read_bytes()
        (tmp_path / "g.aexf").write_bytes(raw[:-3])
        with pytest.raises(InvalidConfig):
            read_features(tmp_path / "g.aexf")

    def test_csv_without_label(self, tmp_path):
        (tmp_path / "f.csv").write_text("audio_0,video_0\n1,2\n")
        with pytest.raises(InvalidConfig):
            read_features(tmp_path / "f.csv")
