import numpy as np
import pytest

from driftguard.base import ShiftKind, ValidationError
from driftguard.model import PromptParams
from driftguard.score import FeatureStats, ScoreConfig
from driftguard.stream import (
    ShiftSpec,
    StreamConfig,
    export_csv,
    generate,
    generate_ar1_scores,
    generate_gaussian_scores,
    generate_score_stream,
    uniform_schedule
)


DELTA: np.ndarray = 2.0 * np.eye(8)[0]


def _config(length: int = 400, change_point=None, shift=None, **kwargs) -> StreamConfig:
    return StreamConfig(seed=3, length=length, change_point=change_point, shift=shift, **kwargs)


class TestGenerate:

    def test_same_seed_same_stream(self):
        a = generate(_config())
        b = generate(_config())
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_prefix_does_not_depend_on_length(self):
        short = generate(_config(length=300))
        long = generate(_config(length=1000))
        np.testing.assert_array_equal(short.features, long.features[:300])
        np.testing.assert_array_equal(short.labels, long.labels[:300])

    def test_other_seed_differs(self):
        a = generate(_config())
        b = generate(StreamConfig(seed=4, length=400))
        assert not np.array_equal(a.features, b.features)

    def test_pre_change_segment_ignores_shift(self):
        base = generate(_config())
        translated = generate(_config(change_point=100, shift=ShiftSpec.mean_translate(DELTA)))
        scaled = generate(_config(change_point=100, shift=ShiftSpec.covariance_scale(3.0)))

        np.testing.assert_array_equal(translated.features[:100], base.features[:100])
        np.testing.assert_array_equal(scaled.features[:100], base.features[:100])

    def test_mean_translate(self):
        base = generate(_config())
        shifted = generate(_config(change_point=100, shift=ShiftSpec.mean_translate(DELTA)))

        np.testing.assert_array_equal(shifted.labels, base.labels)
        np.testing.assert_allclose(shifted.features[100:] - base.features[100:], np.tile(DELTA, (300, 1)), atol=1e-12)

    def test_covariance_scale(self):
        base = generate(_config())
        shifted = generate(_config(change_point=100, shift=ShiftSpec.covariance_scale(4.0)))
        means = base.cfg.class_means[base.labels]

        np.testing.assert_array_equal(shifted.labels, base.labels)
        np.testing.assert_allclose(
            shifted.features[100:] - means[100:],
            2.0 * (base.features[100:] - means[100:]),
            atol=1e-12
        )

    def test_class_prior_shift(self):
        shifted = generate(_config(
            change_point=150,
            shift=ShiftSpec.class_prior_shift([0.0, 0.0, 1.0, 0.0])
        ))
        assert np.all(shifted.labels[150:] == 2)
        assert len(set(shifted.labels[:150].tolist())) > 1

    def test_later_change_replaces_shift(self):
        base = generate(_config())
        shifted = generate(_config(
            change_point=100,
            shift=ShiftSpec.mean_translate(DELTA),
            later_changes=((200, ShiftSpec.covariance_scale(4.0)),)
        ))
        means = base.cfg.class_means[base.labels]

        np.testing.assert_allclose(shifted.features[100:200] - base.features[100:200], np.tile(DELTA, (100, 1)), atol=1e-12)
        np.testing.assert_allclose(
            shifted.features[200:] - means[200:],
            2.0 * (base.features[200:] - means[200:]),
            atol=1e-12
        )
        assert shifted.cfg.change_points == [100, 200]

    def test_class_means_follow_labels(self):
        stream = generate(_config(length=4000))
        for c in range(4):
            centre = stream.features[stream.labels == c].mean(axis=0)
            np.testing.assert_allclose(centre, stream.cfg.class_means[c], atol=0.15)

    def test_empty_stream(self):
        stream = generate(_config(length=0))
        assert len(stream) == 0
        assert stream.features.shape == (0, 8)


class TestSchedule:

    def test_uniform_schedule(self):
        shifts = [
            ShiftSpec.mean_translate(DELTA),
            ShiftSpec.covariance_scale(2.0),
            ShiftSpec.class_prior_shift([1.0, 0.0, 0.0, 0.0])
        ]
        first, shift, later = uniform_schedule(1000, shifts)

        assert first == 250
        assert shift is shifts[0]
        assert [t for t, _ in later] == [500, 750]
        assert later[1][1].kind == ShiftKind.CLASS_PRIOR_SHIFT

        cfg = StreamConfig(seed=1, length=1000, change_point=first, shift=shift, later_changes=later)
        assert cfg.change_points == [250, 500, 750]

    def test_rejects_empty_schedule(self):
        with pytest.raises(ValidationError):
            uniform_schedule(1000, [])


class TestValidation:

    def test_change_point_needs_shift(self):
        with pytest.raises(ValidationError):
            _config(change_point=10)

    def test_change_point_inside_stream(self):
        with pytest.raises(ValidationError):
            _config(length=100, change_point=100, shift=ShiftSpec.covariance_scale(2.0))

    def test_delta_dimension(self):
        with pytest.raises(ValidationError):
            _config(change_point=10, shift=ShiftSpec.mean_translate(np.ones(3)))

    def test_later_changes_must_increase(self):
        with pytest.raises(ValidationError):
            _config(
                change_point=100,
                shift=ShiftSpec.covariance_scale(2.0),
                later_changes=((50, ShiftSpec.covariance_scale(3.0)),)
            )

    def test_prior_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            ShiftSpec.class_prior_shift([0.5, 0.6, 0.0, 0.0])

    def test_dict_round_trip(self):
        cfg = _config(
            change_point=100,
            shift=ShiftSpec.mean_translate(DELTA),
            later_changes=((300, ShiftSpec.covariance_scale(2.0)),)
        )
        restored = StreamConfig.from_dict(cfg.to_dict())
        assert restored.to_dict() == cfg.to_dict()


class TestCursor:

    def test_iteration_is_causal(self):
        stream = generate(_config(length=50))
        times = [t for t, _ in stream]

        assert times == list(range(1, 51))
        assert stream.is_causal()

    def test_lookahead_is_detected(self):
        stream = generate(_config(length=50))
        stream.read(1)
        stream.read(3)
        assert not stream.is_causal()

    def test_read_outside_stream(self):
        stream = generate(_config(length=10))
        with pytest.raises(IndexError):
            stream.read(0)
        with pytest.raises(IndexError):
            stream.read(11)

    def test_segment_mask(self):
        stream = generate(_config(length=20, change_point=5, shift=ShiftSpec.covariance_scale(2.0)))
        mask = stream.segment_mask()
        assert mask.sum() == 15
        assert not mask[:5].any()


class TestScoreStreams:

    def test_gaussian_shift(self):
        null = generate_gaussian_scores(9, 100)
        shifted = generate_gaussian_scores(9, 100, change_point=50, shift=2.0)

        np.testing.assert_array_equal(shifted[:50], null[:50])
        np.testing.assert_allclose(shifted[50:] - null[50:], 2.0)

    def test_ar1_without_memory_is_white(self):
        np.testing.assert_array_equal(generate_ar1_scores(9, 300, 0.0), generate_gaussian_scores(9, 300))

    def test_ar1_is_autocorrelated(self):
        scores = generate_ar1_scores(9, 20000, 0.8)
        lag_one = np.corrcoef(scores[:-1], scores[1:])[0, 1]
        assert lag_one == pytest.approx(0.8, abs=0.03)
        assert scores.std() == pytest.approx(1.0, abs=0.1)

    @pytest.mark.parametrize("phi", [1.0, -1.0, 1.5])
    def test_ar1_rejects_unit_root(self, phi):
        with pytest.raises(ValidationError):
            generate_ar1_scores(9, 10, phi)

    def test_score_stream_frame(self):
        cfg = _config(length=120)
        stats = FeatureStats(np.zeros(8), np.eye(8))
        df = generate_score_stream(cfg, PromptParams.zeros(4, 8), stats, ScoreConfig())

        assert list(df.columns) == ["t", "score"]
        assert df["t"].tolist() == list(range(1, 121))
        assert df["score"].max() <= 50.0
        assert df["score"].min() >= 0.0


class TestExport:

    def test_csv_header(self, tmp_path):
        path = export_csv(generate(_config(length=5)), tmp_path / "stream.csv")
        lines = path.read_text().splitlines()

        assert lines[0] == "t,label," + ",".join(f"f{j}" for j in range(1, 9))
        assert len(lines) == 6
        assert lines[1].startswith("1,")
